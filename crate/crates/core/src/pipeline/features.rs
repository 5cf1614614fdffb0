use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::dsp::real_fft;
use super::sample::Sample;
use super::PipelineError;
use crate::scalar::Scalar;

// Feature-extraction method ids accepted by the factory.
pub const LPC: i32 = 300;
pub const FFT: i32 = 301;
pub const F0: i32 = 302;
pub const SEGMENTATION: i32 = 303;
pub const CEPSTRAL: i32 = 304;
pub const RANDOM_FEATURE_EXTRACTION: i32 = 305;
pub const MIN_MAX_AMPLITUDES: i32 = 306;
pub const FEATURE_EXTRACTION_PLUGIN: i32 = 307;
pub const FEATURE_EXTRACTION_AGGREGATOR: i32 = 308;

pub const FFT_WINDOW: usize = 1024;
pub const FFT_BINS: usize = 64;
pub const MIN_MAX_EACH: usize = 10;
pub const RANDOM_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Vec<T>,
    pub method: i32,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>, method: i32) -> Self {
        FeatureVector { values, method }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn method_name(id: i32) -> Option<&'static str> {
    Some(match id {
        LPC => "LPC",
        FFT => "FFT",
        F0 => "F0",
        SEGMENTATION => "SEGMENTATION",
        CEPSTRAL => "CEPSTRAL",
        RANDOM_FEATURE_EXTRACTION => "RANDOM_FEATURE_EXTRACTION",
        MIN_MAX_AMPLITUDES => "MIN_MAX_AMPLITUDES",
        FEATURE_EXTRACTION_PLUGIN => "FEATURE_EXTRACTION_PLUGIN",
        FEATURE_EXTRACTION_AGGREGATOR => "FEATURE_EXTRACTION_AGGREGATOR",
        _ => return None,
    })
}

pub fn method_by_name(name: &str) -> Option<i32> {
    (LPC..=FEATURE_EXTRACTION_AGGREGATOR).find(|id| {
        method_name(*id).is_some_and(|n| n.eq_ignore_ascii_case(name))
    })
}

/// Declared output length of a method, if it is implemented.
pub fn method_dim(id: i32) -> Option<usize> {
    match id {
        FFT => Some(FFT_BINS),
        MIN_MAX_AMPLITUDES => Some(2 * MIN_MAX_EACH),
        RANDOM_FEATURE_EXTRACTION => Some(RANDOM_DIM),
        _ => None,
    }
}

pub fn extract_features<T: Scalar>(method_id: i32, sample: &Sample<T>) -> Result<FeatureVector<T>, PipelineError> {
    let values = match method_id {
        FFT => fft_magnitudes(&sample.samples),
        MIN_MAX_AMPLITUDES => min_max_amplitudes(&sample.samples),
        RANDOM_FEATURE_EXTRACTION => random_features(&sample.samples),
        LPC | F0 | SEGMENTATION | CEPSTRAL | FEATURE_EXTRACTION_PLUGIN | FEATURE_EXTRACTION_AGGREGATOR => {
            return Err(PipelineError::NotImplementedMethod(
                method_name(method_id).expect("listed").to_owned(),
            ))
        }
        other => return Err(PipelineError::UnknownFeatureExtractionMethod(other)),
    };
    Ok(FeatureVector::new(values, method_id))
}

/// Magnitudes of the first [`FFT_BINS`] bins of a [`FFT_WINDOW`]-point FFT
/// over the start of the signal.
pub fn fft_magnitudes<T: Scalar>(x: &[T]) -> Vec<T> {
    real_fft(x, FFT_WINDOW)
        .into_iter()
        .take(FFT_BINS)
        .map(|c| c.norm())
        .collect()
}

/// The [`MIN_MAX_EACH`] smallest amplitudes followed by the
/// [`MIN_MAX_EACH`] largest, both ascending. Short signals are padded with
/// zeros so the dimension is fixed.
pub fn min_max_amplitudes<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let mut smallest: Vec<T> = sorted.iter().copied().take(MIN_MAX_EACH).collect();
    smallest.resize(MIN_MAX_EACH, T::zero());
    let skip = sorted.len().saturating_sub(MIN_MAX_EACH);
    let mut largest: Vec<T> = sorted[skip..].to_vec();
    while largest.len() < MIN_MAX_EACH {
        largest.insert(0, T::zero());
    }
    smallest.extend(largest);
    smallest
}

/// Seed derived from the sample values (IEEE-754 binary64, big-endian).
pub fn sample_digest<T: Scalar>(x: &[T]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in x {
        h.update(v.to_f64_lossless().to_bits().to_be_bytes());
    }
    h.finalize().into()
}

pub fn random_features<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut rng = ChaCha8Rng::from_seed(sample_digest(x));
    (0..RANDOM_DIM).map(|_| T::lit(rng.gen::<f64>())).collect()
}
