//! Stage payload records.
//!
//! ```text
//! record  := "ED" version:u8 kind:u8 field*
//! field   := tag:u8 len:u32be bytes[len]
//! ```
//!
//! Fields are written in ascending tag order, so equal values always give
//! equal bytes (and equal demand signatures). Readers skip tags they do not
//! know. Integers are big-endian; reals are IEEE-754 binary64 bit patterns.
//!
//! | kind | name           | fields                                              |
//! |------|----------------|-----------------------------------------------------|
//! | 1    | job input      | 1 source bytes, 2 params, 6 format                  |
//! | 2    | sample         | 1 sample, 2 params                                  |
//! | 3    | features       | 1 feature vector, 2 params                          |
//! | 4    | final request  | 1 feature vector, 2 params, 3 mode, 4 speaker, 5 ts |
//! | 5    | result set     | 1 result set                                        |
//! | 6    | training set   | 1 training set                                      |
//!
//! Field bodies:
//!
//! * sample: `rate:u32 format:u8 n:u32 f64*n`
//! * feature vector: `method:i32 n:u32 f64*n`
//! * params: for keys 0, 1, 2 in order, `n:u32` then n tagged values
//!   (`0 bool:u8`, `1 i64`, `2 f64`, `3 len:u32 utf8`)
//! * training set: `classifier:i32 preproc:i32 feature:i32 noise:u8
//!   silence:u8 n:u32` then n × `(id:str count:u64 dim:u32 f64*dim)`
//! * result set: `n:u32` then n × `(id:str distance:f64)`
//! * mode: `u8` (0 train, 1 classify); speaker: utf8; format: `u8`
//!
//! `str` is `len:u32` followed by UTF-8 bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classify::{RankedSpeaker, ResultSet, SpeakerModel, TrainingMeta, TrainingSet};
use super::features::FeatureVector;
use super::params::{ModuleParams, Param, CLASSIFICATION, FEATURE_EXTRACTION, PREPROCESSING};
use super::sample::{Sample, SourceFormat};
use super::PipelineError;
use crate::codec::{CodecError, Reader, Writer};
use crate::scalar::Scalar;

pub const RECORD_MAGIC: [u8; 2] = *b"ED";
pub const RECORD_VERSION: u8 = 1;

pub const TAG_BODY: u8 = 1;
pub const TAG_PARAMS: u8 = 2;
pub const TAG_MODE: u8 = 3;
pub const TAG_SPEAKER: u8 = 4;
pub const TAG_TRAINING_SET: u8 = 5;
pub const TAG_FORMAT: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    JobInput = 1,
    Sample = 2,
    Features = 3,
    FinalRequest = 4,
    ResultSet = 5,
    TrainingSet = 6,
}

impl RecordKind {
    pub fn from_code(c: u8) -> Option<Self> {
        use RecordKind::*;
        [JobInput, Sample, Features, FinalRequest, ResultSet, TrainingSet]
            .into_iter()
            .find(|k| *k as u8 == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobMode {
    Train,
    Classify,
}

impl JobMode {
    pub fn code(self) -> u8 {
        match self {
            JobMode::Train => 0,
            JobMode::Classify => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(JobMode::Train),
            1 => Some(JobMode::Classify),
            _ => None,
        }
    }
}

impl std::str::FromStr for JobMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(JobMode::Train),
            "classify" => Ok(JobMode::Classify),
            other => Err(PipelineError::Validation(format!("unknown mode {other:?}"))),
        }
    }
}

/// A decoded record: its kind and raw fields by tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub kind: RecordKind,
    pub fields: BTreeMap<u8, Vec<u8>>,
}

impl Record {
    pub fn new(kind: RecordKind) -> Self {
        Record {
            kind,
            fields: BTreeMap::new(),
        }
    }

    pub fn with(mut self, tag: u8, bytes: Vec<u8>) -> Self {
        self.fields.insert(tag, bytes);
        self
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(&RECORD_MAGIC).u8(RECORD_VERSION).u8(self.kind as u8);
        for (tag, bytes) in &self.fields {
            w.u8(*tag).bytes(bytes);
        }
        w.into_inner()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, PipelineError> {
        let mut r = Reader::new(buf);
        if r.array::<2>()? != RECORD_MAGIC {
            return Err(CodecError::invalid(0, "bad record magic").into());
        }
        let version = r.u8()?;
        if version != RECORD_VERSION {
            return Err(CodecError::invalid(2, format!("unsupported record version {version}")).into());
        }
        let kind_at = r.offset();
        let kind = RecordKind::from_code(r.u8()?)
            .ok_or_else(|| CodecError::invalid(kind_at, "unknown record kind"))?;
        let mut fields = BTreeMap::new();
        while r.remaining() > 0 {
            let tag = r.u8()?;
            fields.insert(tag, r.bytes()?.to_vec());
        }
        Ok(Record { kind, fields })
    }

    pub fn expect(self, kind: RecordKind) -> Result<Self, PipelineError> {
        if self.kind != kind {
            return Err(PipelineError::Validation(format!(
                "expected {kind:?} record, got {:?}",
                self.kind
            )));
        }
        Ok(self)
    }

    pub fn field(&self, tag: u8) -> Result<&[u8], PipelineError> {
        self.fields
            .get(&tag)
            .map(Vec::as_slice)
            .ok_or_else(|| PipelineError::Validation(format!("{:?} record lacks field {tag}", self.kind)))
    }
}

fn finish<T>(r: Reader<'_>, v: T) -> Result<T, PipelineError> {
    r.finish()?;
    Ok(v)
}

fn write_reals<T: Scalar>(w: &mut Writer, v: &[T]) {
    w.u32(v.len() as u32);
    for x in v {
        w.f64(x.to_f64_lossless());
    }
}

fn read_reals<T: Scalar>(r: &mut Reader<'_>) -> Result<Vec<T>, PipelineError> {
    let n = r.u32()? as usize;
    if n > r.remaining() / 8 {
        return Err(CodecError::invalid(r.offset(), "vector longer than record").into());
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(CodecError::invalid(at, "non-finite value").into());
        }
        out.push(T::from_f64_lossy(v));
    }
    Ok(out)
}

pub fn encode_sample<T: Scalar>(s: &Sample<T>) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(s.sample_rate).u8(s.source_format.code());
    write_reals(&mut w, &s.samples);
    w.into_inner()
}

pub fn decode_sample<T: Scalar>(buf: &[u8]) -> Result<Sample<T>, PipelineError> {
    let mut r = Reader::new(buf);
    let rate = r.u32()?;
    let fmt_at = r.offset();
    let format = SourceFormat::from_code(r.u8()?).ok_or_else(|| CodecError::invalid(fmt_at, "unknown format"))?;
    let samples = read_reals(&mut r)?;
    finish(r, Sample::new(samples, rate, format))
}

pub fn encode_features<T: Scalar>(fv: &FeatureVector<T>) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(fv.method as u32);
    write_reals(&mut w, &fv.values);
    w.into_inner()
}

pub fn decode_features<T: Scalar>(buf: &[u8]) -> Result<FeatureVector<T>, PipelineError> {
    let mut r = Reader::new(buf);
    let method = r.u32()? as i32;
    let values = read_reals(&mut r)?;
    finish(r, FeatureVector::new(values, method))
}

pub fn encode_params(p: &ModuleParams) -> Vec<u8> {
    let mut w = Writer::new();
    for key in [PREPROCESSING, FEATURE_EXTRACTION, CLASSIFICATION] {
        let v = p.get(key).unwrap_or(&[]);
        w.u32(v.len() as u32);
        for param in v {
            match param {
                Param::Bool(b) => w.u8(0).bool(*b),
                Param::Int(i) => w.u8(1).u64(*i as u64),
                Param::Float(f) => w.u8(2).f64(*f),
                Param::Text(s) => w.u8(3).str(s),
            };
        }
    }
    w.into_inner()
}

pub fn decode_params(buf: &[u8]) -> Result<ModuleParams, PipelineError> {
    let mut r = Reader::new(buf);
    let mut p = ModuleParams::new();
    for key in [PREPROCESSING, FEATURE_EXTRACTION, CLASSIFICATION] {
        let n = r.u32()? as usize;
        if n > r.remaining() {
            return Err(CodecError::invalid(r.offset(), "parameter count longer than record").into());
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            v.push(match r.u8()? {
                0 => Param::Bool(r.bool()?),
                1 => Param::Int(r.u64()? as i64),
                2 => Param::Float(r.f64()?),
                3 => Param::Text(r.string()?),
                t => return Err(CodecError::invalid(at, format!("unknown parameter tag {t}")).into()),
            });
        }
        p.set_params(Some(v), key)?;
    }
    finish(r, p)
}

pub fn encode_training_set<T: Scalar>(ts: &TrainingSet<T>) -> Vec<u8> {
    let mut w = Writer::new();
    let m = &ts.meta;
    w.u32(m.classifier as u32)
        .u32(m.preprocessing as u32)
        .u32(m.feature_method as u32)
        .u8(m.noise_removed)
        .u8(m.silence_removed)
        .u32(ts.speakers.len() as u32);
    for (id, model) in &ts.speakers {
        w.str(id).u64(model.count);
        write_reals(&mut w, &model.mean);
    }
    w.into_inner()
}

pub fn decode_training_set<T: Scalar>(buf: &[u8]) -> Result<TrainingSet<T>, PipelineError> {
    let mut r = Reader::new(buf);
    let meta = TrainingMeta {
        classifier: r.u32()? as i32,
        preprocessing: r.u32()? as i32,
        feature_method: r.u32()? as i32,
        noise_removed: r.u8()?,
        silence_removed: r.u8()?,
    };
    let n = r.u32()?;
    let mut ts = TrainingSet::new(meta);
    let mut dim = None;
    for _ in 0..n {
        let at = r.offset();
        let id = r.string()?;
        let count = r.u64()?;
        let mean = read_reals::<T>(&mut r)?;
        if count == 0 {
            return Err(CodecError::invalid(at, "speaker with zero count").into());
        }
        if *dim.get_or_insert(mean.len()) != mean.len() {
            return Err(CodecError::invalid(at, "speaker means differ in dimension").into());
        }
        if ts.speakers.insert(id, SpeakerModel { count, mean }).is_some() {
            return Err(CodecError::invalid(at, "duplicate speaker").into());
        }
    }
    finish(r, ts)
}

pub fn encode_result_set<T: Scalar>(rs: &ResultSet<T>) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(rs.ranking.len() as u32);
    for e in &rs.ranking {
        w.str(&e.speaker_id).f64(e.distance.to_f64_lossless());
    }
    w.into_inner()
}

pub fn decode_result_set<T: Scalar>(buf: &[u8]) -> Result<ResultSet<T>, PipelineError> {
    let mut r = Reader::new(buf);
    let n = r.u32()?;
    let mut ranking = Vec::new();
    for _ in 0..n {
        ranking.push(RankedSpeaker {
            speaker_id: r.string()?,
            distance: T::from_f64_lossy(r.f64()?),
        });
    }
    finish(r, ResultSet { ranking })
}

// Whole-record helpers used by the executors and the generator.

pub fn job_input_record(input: &[u8], format: SourceFormat, params: &ModuleParams) -> Vec<u8> {
    Record::new(RecordKind::JobInput)
        .with(TAG_BODY, input.to_vec())
        .with(TAG_PARAMS, encode_params(params))
        .with(TAG_FORMAT, vec![format.code()])
        .encode()
}

pub fn sample_record<T: Scalar>(s: &Sample<T>, params: &ModuleParams) -> Vec<u8> {
    Record::new(RecordKind::Sample)
        .with(TAG_BODY, encode_sample(s))
        .with(TAG_PARAMS, encode_params(params))
        .encode()
}

pub fn features_record<T: Scalar>(fv: &FeatureVector<T>, params: &ModuleParams) -> Vec<u8> {
    Record::new(RecordKind::Features)
        .with(TAG_BODY, encode_features(fv))
        .with(TAG_PARAMS, encode_params(params))
        .encode()
}

/// Turns a features record into the final-stage request by attaching the
/// job context and the current training set.
pub fn final_request<T: Scalar>(
    features_rec: &[u8],
    mode: JobMode,
    speaker: Option<&str>,
    ts: &TrainingSet<T>,
) -> Result<Vec<u8>, PipelineError> {
    let rec = Record::decode(features_rec)?.expect(RecordKind::Features)?;
    let mut out = Record::new(RecordKind::FinalRequest)
        .with(TAG_BODY, rec.field(TAG_BODY)?.to_vec())
        .with(TAG_PARAMS, rec.field(TAG_PARAMS)?.to_vec())
        .with(TAG_MODE, vec![mode.code()])
        .with(TAG_TRAINING_SET, encode_training_set(ts));
    if let Some(s) = speaker {
        out = out.with(TAG_SPEAKER, s.as_bytes().to_vec());
    }
    Ok(out.encode())
}

pub fn result_set_record<T: Scalar>(rs: &ResultSet<T>) -> Vec<u8> {
    Record::new(RecordKind::ResultSet)
        .with(TAG_BODY, encode_result_set(rs))
        .encode()
}

pub fn training_set_record<T: Scalar>(ts: &TrainingSet<T>) -> Vec<u8> {
    Record::new(RecordKind::TrainingSet)
        .with(TAG_BODY, encode_training_set(ts))
        .encode()
}

pub fn params_of(rec: &Record) -> Result<ModuleParams, PipelineError> {
    decode_params(rec.field(TAG_PARAMS)?)
}

pub fn single_byte(rec: &Record, tag: u8) -> Result<u8, PipelineError> {
    match rec.field(tag)? {
        [b] => Ok(*b),
        other => Err(PipelineError::Validation(format!("field {tag} has {} bytes, expected 1", other.len()))),
    }
}

pub fn speaker_of(rec: &Record) -> Result<Option<String>, PipelineError> {
    match rec.fields.get(&TAG_SPEAKER) {
        None => Ok(None),
        Some(b) => String::from_utf8(b.clone())
            .map(Some)
            .map_err(|_| PipelineError::Validation("speaker id is not utf-8".into())),
    }
}
