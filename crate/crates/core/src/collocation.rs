//! Fourier collocation between mode coefficients and samples at
//! `x_j = 2 pi j / K`, both indexed `-K/2 ..= K/2 - 1` in storage order.
//!
//! With `s = K/2`, `exp(i k x_j)` for `k = a - s`, `j = b - s` factors as
//! `exp(2 pi i a b / K) (-1)^a (-1)^b exp(i pi K / 2)`, so one unshifted FFT
//! plus sign flips covers the centered index range.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{BdgError, Result};

pub struct Collocation {
    len: usize,
    to_samples: Arc<dyn Fft<f64>>,
    to_coeffs: Arc<dyn Fft<f64>>,
}

impl Collocation {
    pub fn new(len: usize) -> Result<Self> {
        if !len.is_power_of_two() {
            return Err(BdgError::NotPowerOfTwo(len));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            len,
            to_samples: planner.plan_fft_inverse(len),
            to_coeffs: planner.plan_fft_forward(len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn shift_sign(&self, a: usize) -> f64 {
        if self.len >= 2 && a % 2 == 1 {
            -1.0
        } else {
            1.0
        }
    }

    fn global_sign(&self) -> f64 {
        // exp(i pi K / 2) for K = 2^p
        if self.len == 2 {
            -1.0
        } else {
            1.0
        }
    }

    fn check(&self, v: &[Complex64]) -> Result<()> {
        if v.len() != self.len {
            return Err(BdgError::LengthMismatch {
                expected: self.len,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `f(x_j) = sum_k c(k) exp(i k x_j)`.
    pub fn to_samples(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(coeffs)?;
        let mut buf: Vec<Complex64> = coeffs
            .iter()
            .enumerate()
            .map(|(a, c)| c * self.shift_sign(a))
            .collect();
        self.to_samples.process(&mut buf);
        let g = self.global_sign();
        for (b, v) in buf.iter_mut().enumerate() {
            *v *= self.shift_sign(b) * g;
        }
        Ok(buf)
    }

    /// Inverse of [`Collocation::to_samples`].
    pub fn to_coeffs(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(samples)?;
        let g = self.global_sign();
        let mut buf: Vec<Complex64> = samples
            .iter()
            .enumerate()
            .map(|(b, v)| v * self.shift_sign(b) * g)
            .collect();
        self.to_coeffs.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        for (a, c) in buf.iter_mut().enumerate() {
            *c *= self.shift_sign(a) * scale;
        }
        Ok(buf)
    }
}

/// One-shot forward transform.
pub fn collocation_transform(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    Collocation::new(coeffs.len())?.to_samples(coeffs)
}

pub fn inverse_collocation_transform(samples: &[Complex64]) -> Result<Vec<Complex64>> {
    Collocation::new(samples.len())?.to_coeffs(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Direct O(K^2) evaluation of the collocation sum.
    fn direct(coeffs: &[Complex64]) -> Vec<Complex64> {
        let k = coeffs.len() as i64;
        let s = k / 2;
        (0..k)
            .map(|b| {
                let x = 2.0 * PI * (b - s) as f64 / k as f64;
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(a, c)| c * Complex64::from_polar(1.0, (a as i64 - s) as f64 * x))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dc_mode_is_constant() {
        let mut c = vec![Complex64::new(0.0, 0.0); 16];
        c[8] = Complex64::new(1.0, 0.0);
        for v in collocation_transform(&c).unwrap() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn single_harmonic() {
        let mut c = vec![Complex64::new(0.0, 0.0); 16];
        c[9] = Complex64::new(1.0, 0.0);
        let f = collocation_transform(&c).unwrap();
        for (b, v) in f.iter().enumerate() {
            let x = 2.0 * PI * (b as f64 - 8.0) / 16.0;
            assert!((v - Complex64::from_polar(1.0, x)).norm() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_sum_for_all_small_sizes() {
        for p in 0..7 {
            let k = 1usize << p;
            let c: Vec<Complex64> = (0..k)
                .map(|i| Complex64::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let fast = collocation_transform(&c).unwrap();
            let slow = direct(&c);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12, "K = {k}");
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(
            Collocation::new(12),
            Err(BdgError::NotPowerOfTwo(12))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            p in 1usize..11,
            seed in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1024),
        ) {
            let k = 1usize << p;
            let c: Vec<Complex64> = seed[..k].iter().map(|&(r, i)| Complex64::new(r, i)).collect();
            let plan = Collocation::new(k).unwrap();
            let back = plan.to_coeffs(&plan.to_samples(&c).unwrap()).unwrap();
            let norm = c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let err = c.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(err <= 100.0 * f64::EPSILON * norm.max(f64::MIN_POSITIVE));
        }
    }
}
