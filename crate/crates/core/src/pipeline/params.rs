use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const PREPROCESSING: i32 = 0;
pub const FEATURE_EXTRACTION: i32 = 1;
pub const CLASSIFICATION: i32 = 2;

/// A tagged scalar held in a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<bool> for Param {
    fn from(v: bool) -> Self {
        Param::Bool(v)
    }
}

impl From<i64> for Param {
    fn from(v: i64) -> Self {
        Param::Int(v)
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Float(v)
    }
}

impl From<&str> for Param {
    fn from(v: &str) -> Self {
        Param::Text(v.to_owned())
    }
}

/// Per-module parameter vectors, keyed by module type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleParams {
    vectors: IndexMap<i32, Vec<Param>>,
}

impl Default for ModuleParams {
    fn default() -> Self {
        let mut vectors = IndexMap::new();
        for k in [PREPROCESSING, FEATURE_EXTRACTION, CLASSIFICATION] {
            vectors.insert(k, Vec::new());
        }
        ModuleParams { vectors }
    }
}

impl ModuleParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Overwrites the vector bound to `module_type` with `params`.
    ///
    /// The binding itself is kept; only its contents are replaced.
    pub fn set_params(&mut self, params: Option<Vec<Param>>, module_type: i32) -> Result<(), PipelineError> {
        let params = params.ok_or(PipelineError::NullParameters)?;
        let slot = self
            .vectors
            .get_mut(&module_type)
            .ok_or(PipelineError::UnknownModuleType(module_type))?;
        slot.clear();
        slot.extend(params);
        Ok(())
    }

    pub fn get(&self, module_type: i32) -> Option<&[Param]> {
        self.vectors.get(&module_type).map(Vec::as_slice)
    }

    pub fn set_preprocessing_params(&mut self, params: Vec<Param>) {
        self.set_params(Some(params), PREPROCESSING).expect("legal key");
    }

    pub fn set_feature_extraction_params(&mut self, params: Vec<Param>) {
        self.set_params(Some(params), FEATURE_EXTRACTION).expect("legal key");
    }

    pub fn set_classification_params(&mut self, params: Vec<Param>) {
        self.set_params(Some(params), CLASSIFICATION).expect("legal key");
    }

    pub fn preprocessing_params(&self) -> &[Param] {
        &self.vectors[&PREPROCESSING]
    }

    pub fn feature_extraction_params(&self) -> &[Param] {
        &self.vectors[&FEATURE_EXTRACTION]
    }

    pub fn classification_params(&self) -> &[Param] {
        &self.vectors[&CLASSIFICATION]
    }

    /// All bindings in key order.
    pub fn iter(&self) -> impl Iterator<Item = (i32, &[Param])> {
        self.vectors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// First integer of the feature-extraction vector, else FFT.
    pub fn feature_method(&self) -> i32 {
        first_int(self.feature_extraction_params()).unwrap_or(super::features::FFT)
    }

    /// First integer of the classification vector, else DISTANCE.
    pub fn classifier(&self) -> i32 {
        first_int(self.classification_params()).unwrap_or(super::classify::DISTANCE)
    }

    /// Convenience builder for the common DMARF job settings.
    pub fn for_job(noise: bool, silence: bool, feature_method: i32, classifier: i32) -> Self {
        let mut p = Self::new();
        p.set_preprocessing_params(vec![Param::Bool(noise), Param::Bool(silence)]);
        p.set_feature_extraction_params(vec![Param::Int(feature_method as i64)]);
        p.set_classification_params(vec![Param::Int(classifier as i64)]);
        p
    }
}

fn first_int(v: &[Param]) -> Option<i32> {
    match v.first() {
        Some(Param::Int(i)) => i32::try_from(*i).ok(),
        _ => None,
    }
}

/// Reads the noise/silence flags out of a preprocessing vector.
///
/// Element 0 drives the noise flag and element 1 the silence flag, each
/// only when it is a boolean. An absent vector yields `(0, 0)`.
pub fn derive_preprocessing_flags(params: Option<&[Param]>) -> (u8, u8) {
    let mut noise = 0;
    let mut silence = 0;
    let Some(params) = params else {
        return (0, 0);
    };
    match params.len() {
        0 => {}
        1 => {
            if let Param::Bool(b) = params[0] {
                noise = b as u8;
            }
        }
        _ => {
            if let Param::Bool(b) = params[0] {
                noise = b as u8;
            }
            if let Param::Bool(b) = params[1] {
                silence = b as u8;
            }
        }
    }
    (noise, silence)
}
