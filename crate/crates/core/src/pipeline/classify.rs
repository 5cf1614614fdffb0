use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::abi;
use super::dsp::euclidean_distance;
use super::features::FeatureVector;
use super::PipelineError;
use crate::scalar::Scalar;

// Classifier ids.
pub const NEURAL_NETWORK: i32 = 500;
pub const STOCHASTIC: i32 = 501;
pub const DISTANCE: i32 = 502;
pub const RANDOM_CLASSIFICATION: i32 = 503;

pub fn classifier_name(id: i32) -> Option<&'static str> {
    Some(match id {
        NEURAL_NETWORK => "NeuralNetwork",
        STOCHASTIC => "Stochastic",
        DISTANCE => "Distance",
        RANDOM_CLASSIFICATION => "RandomClassification",
        _ => return None,
    })
}

pub fn classifier_by_name(name: &str) -> Option<i32> {
    (NEURAL_NETWORK..=RANDOM_CLASSIFICATION)
        .find(|id| classifier_name(*id).is_some_and(|n| n.eq_ignore_ascii_case(name)))
}

/// Which configuration a training set was built under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub classifier: i32,
    pub preprocessing: i32,
    pub feature_method: i32,
    pub noise_removed: u8,
    pub silence_removed: u8,
}

impl TrainingMeta {
    pub fn filename(&self) -> String {
        training_set_filename(
            classifier_name(self.classifier).unwrap_or("Unknown"),
            self.preprocessing,
            self.feature_method,
            (self.noise_removed, self.silence_removed),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel<T> {
    pub count: u64,
    pub mean: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    pub meta: TrainingMeta,
    pub speakers: BTreeMap<String, SpeakerModel<T>>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(meta: TrainingMeta) -> Self {
        TrainingSet {
            meta,
            speakers: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.speakers.values().next().map(|m| m.mean.len())
    }

    pub fn count(&self, speaker: &str) -> u64 {
        self.speakers.get(speaker).map_or(0, |m| m.count)
    }
}

/// Folds `fv` into the running mean of `speaker_id`.
pub fn train<T: Scalar>(
    mut ts: TrainingSet<T>,
    speaker_id: &str,
    fv: &FeatureVector<T>,
) -> Result<TrainingSet<T>, PipelineError> {
    if let Some(dim) = ts.dim() {
        if dim != fv.dim() {
            return Err(PipelineError::DimensionMismatch {
                expected: dim,
                got: fv.dim(),
            });
        }
    }
    let model = ts
        .speakers
        .entry(speaker_id.to_owned())
        .or_insert_with(|| SpeakerModel {
            count: 0,
            mean: vec![T::zero(); fv.dim()],
        });
    let n = T::lit((model.count + 1) as f64);
    for (m, &x) in model.mean.iter_mut().zip(&fv.values) {
        *m = *m + (x - *m) / n;
    }
    model.count += 1;
    Ok(ts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSpeaker<T> {
    pub speaker_id: String,
    pub distance: T,
}

/// Speakers ranked by ascending distance, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultSet<T> {
    pub ranking: Vec<RankedSpeaker<T>>,
}

impl<T: Scalar> ResultSet<T> {
    pub fn from_unsorted(mut ranking: Vec<RankedSpeaker<T>>) -> Self {
        ranking.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .expect("distances are finite")
                .then_with(|| a.speaker_id.cmp(&b.speaker_id))
        });
        ResultSet { ranking }
    }

    pub fn top(&self) -> Option<&RankedSpeaker<T>> {
        self.ranking.first()
    }
}

pub fn classify<T: Scalar>(
    ts: &TrainingSet<T>,
    fv: &FeatureVector<T>,
    classifier_id: i32,
) -> Result<ResultSet<T>, PipelineError> {
    match classifier_id {
        DISTANCE | RANDOM_CLASSIFICATION => {}
        other => return Err(PipelineError::NotImplementedClassifier(other)),
    }
    let dim = ts.dim().ok_or(PipelineError::EmptyTrainingSet)?;
    if dim != fv.dim() {
        return Err(PipelineError::DimensionMismatch {
            expected: dim,
            got: fv.dim(),
        });
    }
    if classifier_id == DISTANCE {
        let ranking = ts
            .speakers
            .iter()
            .map(|(id, m)| RankedSpeaker {
                speaker_id: id.clone(),
                distance: euclidean_distance(&m.mean, &fv.values),
            })
            .collect();
        return Ok(ResultSet::from_unsorted(ranking));
    }
    let mut ids: Vec<&String> = ts.speakers.keys().collect();
    ids.shuffle(&mut ChaCha8Rng::from_seed(random_classification_seed(ts, fv)));
    Ok(ResultSet {
        ranking: ids
            .into_iter()
            .enumerate()
            .map(|(rank, id)| RankedSpeaker {
                speaker_id: id.clone(),
                distance: T::lit(rank as f64),
            })
            .collect(),
    })
}

/// `SHA-256(SHA-256(training set record) || SHA-256(feature record))`.
pub fn random_classification_seed<T: Scalar>(ts: &TrainingSet<T>, fv: &FeatureVector<T>) -> [u8; 32] {
    let ts_digest = Sha256::digest(abi::encode_training_set(ts));
    let fv_digest = Sha256::digest(abi::encode_features(fv));
    let mut h = Sha256::new();
    h.update(ts_digest);
    h.update(fv_digest);
    h.finalize().into()
}

/// `<classifier>.<preproc>.<feat>.<noise01><silence01>.gz`
pub fn training_set_filename(classifier: &str, preprocessing: i32, feature: i32, flags: (u8, u8)) -> String {
    let safe: String = classifier
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let safe = if safe.is_empty() { "_".to_owned() } else { safe };
    format!(
        "{safe}.{preprocessing}.{feature}.{}{}.gz",
        (flags.0 != 0) as u8,
        (flags.1 != 0) as u8
    )
}
