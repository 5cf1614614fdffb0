//! Synthetic three-speaker corpus and the sequential reference run over it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::abi::{self, JobMode};
use super::classify::TrainingSet;
use super::params::ModuleParams;
use super::sample::{wav_bytes, SourceFormat, DEFAULT_SAMPLE_RATE};
use super::{run_local, training_meta, Outcome, PipelineError};
use crate::Real;

/// Speaker ids and their pitch in Hz.
pub const SPEAKERS: [(&str, f64); 3] = [("alto", 200.0), ("tenor", 450.0), ("treble", 900.0)];
pub const TRAIN_PER_SPEAKER: usize = 5;
pub const HELD_OUT_PER_SPEAKER: usize = 10;
pub const SAMPLE_LEN: usize = 2048;
pub const NOISE_SIGMA: f64 = 0.01;
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    /// Mono 16-bit WAV.
    pub wav: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub training: Vec<Utterance>,
    pub held_out: Vec<Utterance>,
}

/// A sine at the speaker's pitch with random amplitude and phase plus
/// Gaussian noise, quantized to 16 bits.
pub fn utterance(rng: &mut ChaCha8Rng, freq: f64) -> Vec<u8> {
    let amp: f64 = rng.gen_range(0.5..0.9);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let rate = DEFAULT_SAMPLE_RATE as f64;
    let pcm: Vec<i16> = (0..SAMPLE_LEN)
        .map(|n| {
            let t = n as f64 / rate;
            let x = amp * (std::f64::consts::TAU * freq * t + phase).sin() + noise.sample(rng);
            (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
        })
        .collect();
    wav_bytes(&pcm, DEFAULT_SAMPLE_RATE)
}

pub fn synthetic_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |n: usize| {
        let mut out = Vec::new();
        for _ in 0..n {
            for (id, f) in SPEAKERS {
                out.push(Utterance {
                    speaker: id.to_owned(),
                    wav: utterance(&mut rng, f),
                });
            }
        }
        out
    };
    let training = make(TRAIN_PER_SPEAKER);
    let held_out = make(HELD_OUT_PER_SPEAKER);
    Corpus { training, held_out }
}

/// What the sequential run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub training_set: TrainingSet<Real>,
    /// Encoded result-set record per held-out utterance, in corpus order.
    pub results: Vec<Vec<u8>>,
    pub correct: usize,
}

impl OracleReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.results.len().max(1) as f64
    }
}

/// Trains on `corpus.training` in order, then classifies every held-out
/// utterance against the final training set.
pub fn run_oracle(corpus: &Corpus, params: &ModuleParams) -> Result<OracleReport, PipelineError> {
    let mut ts = TrainingSet::new(training_meta(params));
    for u in &corpus.training {
        match run_local(&u.wav, SourceFormat::Wav, params, JobMode::Train, Some(&u.speaker), Some(ts))? {
            Outcome::Trained(next) => ts = next,
            Outcome::Classified(_) => unreachable!("train mode"),
        }
    }
    let mut results = Vec::new();
    let mut correct = 0;
    for u in &corpus.held_out {
        match run_local(&u.wav, SourceFormat::Wav, params, JobMode::Classify, None, Some(ts.clone()))? {
            Outcome::Classified(rs) => {
                if rs.top().is_some_and(|t| t.speaker_id == u.speaker) {
                    correct += 1;
                }
                results.push(abi::result_set_record(&rs));
            }
            Outcome::Trained(_) => unreachable!("classify mode"),
        }
    }
    Ok(OracleReport {
        training_set: ts,
        results,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_reproducible() {
        let a = synthetic_corpus(1);
        assert_eq!(a, synthetic_corpus(1));
        assert_ne!(a.training[0].wav, synthetic_corpus(2).training[0].wav);
        assert_eq!(a.training.len(), 15);
        assert_eq!(a.held_out.len(), 30);
    }

    #[test]
    fn oracle_recognizes_speakers() {
        let report = run_oracle(&synthetic_corpus(DEFAULT_SEED), &ModuleParams::default()).unwrap();
        assert_eq!(report.results.len(), 30);
        assert!(report.accuracy() >= 0.9, "accuracy {}", report.accuracy());
        assert_eq!(report.training_set.speakers.len(), 3);
    }
}
