//! Stage executors wrapping the pipeline operations.
//!
//! | executor                  | input record   | output record            |
//! |---------------------------|----------------|--------------------------|
//! | `dmarf.load`              | job input      | sample                   |
//! | `dmarf.preprocess`        | sample         | sample                   |
//! | `dmarf.extract`           | sample         | features                 |
//! | `dmarf.classify_or_train` | final request  | result set / training set|
//!
//! The generator converts the features record into the final request.

use super::abi::{self, Record, RecordKind, TAG_BODY, TAG_FORMAT, TAG_MODE, TAG_TRAINING_SET};
use super::classify::{classify, train};
use super::features::extract_features;
use super::preprocess::preprocess;
use super::sample::{load_sample, SourceFormat};
use super::{JobMode, PipelineError};
use crate::executor::ExecutorRegistry;
use crate::Real;

pub const WORKLOAD: &str = "dmarf";
pub const LOAD: &str = "dmarf.load";
pub const PREPROCESS: &str = "dmarf.preprocess";
pub const EXTRACT: &str = "dmarf.extract";
pub const CLASSIFY_OR_TRAIN: &str = "dmarf.classify_or_train";

pub fn register_pipeline_executors(r: &mut ExecutorRegistry) {
    r.register(LOAD, |b| Ok(load(b)?));
    r.register(PREPROCESS, |b| Ok(preprocess_stage(b)?));
    r.register(EXTRACT, |b| Ok(extract(b)?));
    r.register(CLASSIFY_OR_TRAIN, |b| Ok(classify_or_train(b)?));
}

/// A registry holding only the four pipeline executors.
pub fn pipeline_executors() -> ExecutorRegistry {
    let mut r = ExecutorRegistry::new();
    register_pipeline_executors(&mut r);
    r
}

pub fn load(payload: &[u8]) -> Result<Vec<u8>, PipelineError> {
    let rec = Record::decode(payload)?.expect(RecordKind::JobInput)?;
    let code = abi::single_byte(&rec, TAG_FORMAT)?;
    let format = SourceFormat::from_code(code)
        .ok_or_else(|| PipelineError::UnsupportedFormat(format!("format code {code}")))?;
    let sample = load_sample::<Real>(rec.field(TAG_BODY)?, format)?;
    Ok(abi::sample_record(&sample, &abi::params_of(&rec)?))
}

pub fn preprocess_stage(payload: &[u8]) -> Result<Vec<u8>, PipelineError> {
    let rec = Record::decode(payload)?.expect(RecordKind::Sample)?;
    let params = abi::params_of(&rec)?;
    let sample = abi::decode_sample::<Real>(rec.field(TAG_BODY)?)?;
    Ok(abi::sample_record(&preprocess(&sample, &params)?, &params))
}

pub fn extract(payload: &[u8]) -> Result<Vec<u8>, PipelineError> {
    let rec = Record::decode(payload)?.expect(RecordKind::Sample)?;
    let params = abi::params_of(&rec)?;
    let sample = abi::decode_sample::<Real>(rec.field(TAG_BODY)?)?;
    let fv = extract_features(params.feature_method(), &sample)?;
    Ok(abi::features_record(&fv, &params))
}

pub fn classify_or_train(payload: &[u8]) -> Result<Vec<u8>, PipelineError> {
    let rec = Record::decode(payload)?.expect(RecordKind::FinalRequest)?;
    let params = abi::params_of(&rec)?;
    let fv = abi::decode_features::<Real>(rec.field(TAG_BODY)?)?;
    let ts = abi::decode_training_set::<Real>(rec.field(TAG_TRAINING_SET)?)?;
    let code = abi::single_byte(&rec, TAG_MODE)?;
    match JobMode::from_code(code).ok_or_else(|| PipelineError::Validation(format!("mode code {code}")))? {
        JobMode::Train => {
            let speaker = abi::speaker_of(&rec)?
                .ok_or_else(|| PipelineError::Validation("train requires a speaker id".into()))?;
            Ok(abi::training_set_record(&train(ts, &speaker, &fv)?))
        }
        JobMode::Classify => Ok(abi::result_set_record(&classify(&ts, &fv, params.classifier())?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::classify::TrainingSet;
    use crate::pipeline::features::{FFT, LPC};
    use crate::pipeline::params::ModuleParams;
    use crate::pipeline::{run_local, training_meta, Outcome};

    fn chain(input: &[u8], params: &ModuleParams, mode: JobMode, speaker: Option<&str>, ts: &TrainingSet<Real>) -> Result<Vec<u8>, PipelineError> {
        let r = load(&abi::job_input_record(input, SourceFormat::Text, params))?;
        let r = preprocess_stage(&r)?;
        let r = extract(&r)?;
        classify_or_train(&abi::final_request(&r, mode, speaker, ts)?)
    }

    #[test]
    fn load_wraps_load_sample() {
        let p = ModuleParams::default();
        let out = load(&abi::job_input_record(b"0 0.5", SourceFormat::Text, &p)).unwrap();
        let rec = Record::decode(&out).unwrap().expect(RecordKind::Sample).unwrap();
        let s = abi::decode_sample::<Real>(rec.field(TAG_BODY).unwrap()).unwrap();
        assert_eq!(s.samples, vec![0.0, 0.5]);
    }

    #[test]
    fn chain_matches_direct_calls() {
        let p = ModuleParams::for_job(false, false, FFT, crate::pipeline::classify::DISTANCE);
        let empty = TrainingSet::new(training_meta(&p));
        let trained = chain(b"0.1 0.9 -0.3", &p, JobMode::Train, Some("s1"), &empty).unwrap();
        let ts = match run_local::<Real>(b"0.1 0.9 -0.3", SourceFormat::Text, &p, JobMode::Train, Some("s1"), None).unwrap() {
            Outcome::Trained(ts) => ts,
            other => panic!("{other:?}"),
        };
        assert_eq!(trained, abi::training_set_record(&ts));
        let classified = chain(b"0.2 0.8", &p, JobMode::Classify, None, &ts).unwrap();
        let rs = match run_local(b"0.2 0.8", SourceFormat::Text, &p, JobMode::Classify, None, Some(ts)).unwrap() {
            Outcome::Classified(rs) => rs,
            other => panic!("{other:?}"),
        };
        assert_eq!(classified, abi::result_set_record(&rs));
    }

    #[test]
    fn unimplemented_method_fails_extract() {
        let p = ModuleParams::for_job(false, false, LPC, crate::pipeline::classify::DISTANCE);
        let s = preprocess_stage(&load(&abi::job_input_record(b"1", SourceFormat::Text, &p)).unwrap()).unwrap();
        assert_eq!(extract(&s), Err(PipelineError::NotImplementedMethod("LPC".into())));
    }

    #[test]
    fn wrong_record_kind_is_an_error() {
        assert!(extract(&abi::result_set_record::<Real>(&Default::default())).is_err());
        assert!(load(b"garbage").is_err());
    }
}
