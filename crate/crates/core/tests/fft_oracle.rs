use edurt::pipeline::dsp::{fft, real_fft};
use edurt::pipeline::features::fft_magnitudes;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

/// Direct O(n^2) transform; the index product is reduced mod n so every
/// twiddle comes from a small exact angle.
fn naive_dft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let n = x.len();
    let tw: Vec<Complex<f64>> = (0..n)
        .map(|m| {
            let a = -2.0 * std::f64::consts::PI * m as f64 / n as f64;
            Complex::new(a.cos(), a.sin())
        })
        .collect();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex::new(0.0, 0.0), |acc, (j, v)| acc + v * tw[(j * k) % n])
        })
        .collect()
}

fn random_signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex<f64>> {
    (0..n)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn fft_matches_naive_dft_per_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFF7);
    let mut worst = 0.0f64;
    for n in [8, 64, 256, 1024] {
        for _ in 0..100 {
            let x = random_signal(&mut rng, n);
            let want = naive_dft(&x);
            let mut got = x.clone();
            fft(&mut got);
            for (k, (g, w)) in got.iter().zip(&want).enumerate() {
                let err = (g - w).norm();
                worst = worst.max(err);
                assert!(err <= TOL, "n={n} bin {k}: |fft - dft| = {err:e}");
            }
        }
    }
    eprintln!("worst per-bin error {worst:e}");
}

pub fn parseval_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9A25);
    for n in [8, 64, 256, 1024] {
        for _ in 0..100 {
            let x = random_signal(&mut rng, n);
            let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let mut f = x;
            fft(&mut f);
            let freq: f64 = f.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            assert!(((time - freq) / time).abs() <= TOL, "n={n}: {time} vs {freq}");
        }
    }
}

#[test]
fn real_fft_zero_pads() {
    let sig = [1.0, 2.0, 3.0];
    let got = real_fft(&sig, 8);
    let mut padded: Vec<Complex<f64>> = sig.iter().map(|&v| Complex::new(v, 0.0)).collect();
    padded.resize(8, Complex::new(0.0, 0.0));
    for (g, w) in got.iter().zip(naive_dft(&padded)) {
        assert!((g - w).norm() < TOL);
    }
}

#[test]
fn pure_tone_peaks_in_its_bin() {
    // 1024-point window at 8 kHz: bin width 7.8125 Hz, 64 output bins.
    let f = 250.0;
    let sig: Vec<f64> = (0..1024)
        .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 8000.0).sin())
        .collect();
    let mags = fft_magnitudes(&sig);
    let peak = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    assert!(mags.len() == 64);
    assert_eq!(peak, 32, "{mags:?}");
}

/// Harness entry points for the checks shared with the acceptance runner.
mod checks {
    #[test]
    fn fft_matches_naive_dft_per_bin() {
        super::fft_matches_naive_dft_per_bin();
    }

    #[test]
    fn parseval_holds() {
        super::parseval_holds();
    }
}
