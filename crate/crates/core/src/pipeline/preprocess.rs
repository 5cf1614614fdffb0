use super::dsp::moving_average_high_pass;
use super::params::{derive_preprocessing_flags, ModuleParams};
use super::sample::Sample;
use super::PipelineError;
use crate::scalar::Scalar;

pub const DEFAULT_SILENCE_THRESHOLD: f64 = 0.001;
pub const NOISE_FILTER_WINDOW: usize = 5;

/// Id of the (single) preprocessing chain, used in training-set names.
pub const NORMALIZATION: i32 = 100;

/// Optional noise removal, optional silence removal, then normalization.
pub fn preprocess<T: Scalar>(sample: &Sample<T>, params: &ModuleParams) -> Result<Sample<T>, PipelineError> {
    if sample.is_empty() {
        return Err(PipelineError::malformed(0, "empty sample"));
    }
    let (noise, silence) = derive_preprocessing_flags(Some(params.preprocessing_params()));
    let mut x = sample.samples.clone();
    if noise == 1 {
        x = moving_average_high_pass(&x, NOISE_FILTER_WINDOW);
    }
    if silence == 1 {
        x = remove_silence(&x, T::lit(DEFAULT_SILENCE_THRESHOLD));
        if x.is_empty() {
            return Err(PipelineError::EmptyAfterSilenceRemoval);
        }
    }
    normalize(&mut x);
    Ok(Sample::new(x, sample.sample_rate, sample.source_format))
}

/// Drops samples whose magnitude is strictly below `threshold`.
pub fn remove_silence<T: Scalar>(x: &[T], threshold: T) -> Vec<T> {
    x.iter().copied().filter(|v| v.abs() >= threshold).collect()
}

/// Scales so the peak magnitude is 1. An all-zero signal is left alone.
pub fn normalize<T: Scalar>(x: &mut [T]) {
    let peak = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if peak > T::zero() {
        for v in x.iter_mut() {
            *v = *v / peak;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::params::Param;
    use crate::pipeline::sample::SourceFormat;

    fn s(v: &[f64]) -> Sample<f64> {
        Sample::new(v.to_vec(), 8000, SourceFormat::Text)
    }

    fn flags(noise: bool, silence: bool) -> ModuleParams {
        let mut p = ModuleParams::new();
        p.set_preprocessing_params(vec![Param::Bool(noise), Param::Bool(silence)]);
        p
    }

    #[test]
    fn normalizes_by_peak() {
        let out = preprocess(&s(&[0.0, 0.5]), &ModuleParams::new()).unwrap();
        assert_eq!(out.samples, vec![0.0, 1.0]);
    }

    #[test]
    fn silence_removal_then_normalize() {
        let out = preprocess(&s(&[0.0005, 0.5]), &flags(false, true)).unwrap();
        assert_eq!(out.samples, vec![1.0]);
    }

    #[test]
    fn all_zero_passes_through() {
        let out = preprocess(&s(&[0.0; 4]), &ModuleParams::new()).unwrap();
        assert_eq!(out.samples, vec![0.0; 4]);
    }

    #[test]
    fn silence_threshold_boundary() {
        let kept = remove_silence(&[0.001f64, -0.001, 0.000999, -0.000999], DEFAULT_SILENCE_THRESHOLD);
        assert_eq!(kept, vec![0.001, -0.001]);
    }

    #[test]
    fn everything_silent_is_an_error() {
        assert_eq!(
            preprocess(&s(&[0.0001, -0.0002]), &flags(false, true)),
            Err(PipelineError::EmptyAfterSilenceRemoval)
        );
    }

    #[test]
    fn noise_removal_kills_dc() {
        let out = preprocess(&s(&[0.3; 16]), &flags(true, false)).unwrap();
        assert!(out.samples.iter().all(|v| *v == 0.0));
    }
}
