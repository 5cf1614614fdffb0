//! The speaker-recognition workload: load, preprocess, extract, then
//! train or classify.
//!
//! Every operation is a pure function over its inputs. The same code runs
//! in-process through [`run_local`] and inside workers through the
//! executors in [`executors`], so the two paths can be compared byte for
//! byte.

pub mod abi;
pub mod classify;
pub mod corpus;
pub mod dsp;
pub mod executors;
pub mod features;
pub mod params;
pub mod preprocess;
pub mod sample;

use thiserror::Error;

use crate::codec::CodecError;
use crate::scalar::Scalar;

pub use abi::{JobMode, RecordKind};
pub use classify::{classify, train, RankedSpeaker, ResultSet, TrainingMeta, TrainingSet};
pub use features::{extract_features, FeatureVector};
pub use params::{derive_preprocessing_flags, ModuleParams, Param};
pub use preprocess::preprocess;
pub use sample::{load_sample, Sample, SourceFormat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed input at byte {offset}: {reason}")]
    MalformedInput { offset: usize, reason: String },
    #[error("no samples left after silence removal")]
    EmptyAfterSilenceRemoval,
    #[error("Parameters vector cannot be null.")]
    NullParameters,
    #[error("Unknown module type: {0}.")]
    UnknownModuleType(i32),
    #[error("Unknown feature extraction method: {0}")]
    UnknownFeatureExtractionMethod(i32),
    #[error("feature extraction method not implemented: {0}")]
    NotImplementedMethod(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("classifier not implemented: {0}")]
    NotImplementedClassifier(i32),
    #[error("bad stage record: {0}")]
    Decode(#[from] CodecError),
    #[error("{0}")]
    Validation(String),
}

impl PipelineError {
    pub fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        PipelineError::MalformedInput {
            offset,
            reason: reason.into(),
        }
    }
}

/// Output of the final stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome<T> {
    Classified(ResultSet<T>),
    Trained(TrainingSet<T>),
}

/// Runs the whole chain directly, without demands.
///
/// This is the reference the distributed run is checked against.
pub fn run_local<T: Scalar>(
    input: &[u8],
    format: SourceFormat,
    params: &ModuleParams,
    mode: JobMode,
    speaker: Option<&str>,
    training_set: Option<TrainingSet<T>>,
) -> Result<Outcome<T>, PipelineError> {
    let sample = load_sample::<T>(input, format)?;
    let sample = preprocess(&sample, params)?;
    let fv = extract_features(params.feature_method(), &sample)?;
    let ts = training_set.unwrap_or_else(|| TrainingSet::new(training_meta(params)));
    match mode {
        JobMode::Train => {
            let speaker = speaker.ok_or_else(|| PipelineError::Validation("train requires a speaker id".into()))?;
            Ok(Outcome::Trained(train(ts, speaker, &fv)?))
        }
        JobMode::Classify => Ok(Outcome::Classified(classify(&ts, &fv, params.classifier())?)),
    }
}

/// Training-set metadata implied by a parameter set.
pub fn training_meta(params: &ModuleParams) -> TrainingMeta {
    let (noise, silence) = derive_preprocessing_flags(Some(params.preprocessing_params()));
    TrainingMeta {
        classifier: params.classifier(),
        preprocessing: preprocess::NORMALIZATION,
        feature_method: params.feature_method(),
        noise_removed: noise,
        silence_removed: silence,
    }
}
