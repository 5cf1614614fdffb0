//! Signal-processing primitives.

use num_complex::Complex;

use crate::scalar::Scalar;

/// In-place iterative radix-2 decimation-in-time FFT (forward, unscaled).
///
/// # Panics
///
/// If `data.len()` is not a power of two.
pub fn fft<T: Scalar>(data: &mut [Complex<T>]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let two_pi = T::PI() + T::PI();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles are evaluated directly rather than by recurrence to keep
        // the error at a few ulps for long transforms.
        let twiddles: Vec<Complex<T>> = (0..half)
            .map(|k| {
                let angle = -two_pi * T::lit(k as f64) / T::lit(len as f64);
                Complex::new(angle.cos(), angle.sin())
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = data[start + k];
                let b = data[start + k + half] * twiddles[k];
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// FFT of a real signal zero-padded (or truncated) to `n` points.
pub fn real_fft<T: Scalar>(signal: &[T], n: usize) -> Vec<Complex<T>> {
    let mut buf: Vec<Complex<T>> = signal
        .iter()
        .take(n)
        .map(|&x| Complex::new(x, T::zero()))
        .collect();
    buf.resize(n, Complex::new(T::zero(), T::zero()));
    fft(&mut buf);
    buf
}

pub fn euclidean_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// `x − moving_average(x)` over a centred window, truncated at the edges.
pub fn moving_average_high_pass<T: Scalar>(x: &[T], window: usize) -> Vec<T> {
    let n = x.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let sum = x[lo..=hi].iter().fold(T::zero(), |a, &v| a + v);
            x[i] - sum / T::lit((hi - lo + 1) as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_and_two() {
        let mut one = vec![Complex::new(3.0f64, 0.0)];
        fft(&mut one);
        assert_eq!(one[0], Complex::new(3.0, 0.0));
        let mut two = vec![Complex::new(1.0f64, 0.0), Complex::new(2.0, 0.0)];
        fft(&mut two);
        assert_eq!(two, vec![Complex::new(3.0, 0.0), Complex::new(-1.0, 0.0)]);
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn rejects_non_power_of_two() {
        let mut v = vec![Complex::new(0.0f64, 0.0); 3];
        fft(&mut v);
    }

    #[test]
    fn works_in_single_precision() {
        let x: Vec<f32> = (0..16).map(|i| (i as f32 * 0.7).sin()).collect();
        let spec = real_fft(&x, 16);
        let dc: f32 = x.iter().sum();
        assert!((spec[0].re - dc).abs() < 1e-5);
    }

    #[test]
    fn high_pass_removes_constant() {
        let y = moving_average_high_pass(&[2.0f64; 9], 5);
        assert!(y.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn distance_345() {
        assert_eq!(euclidean_distance(&[0.0f64, 0.0], &[3.0, 4.0]), 5.0);
    }
}
