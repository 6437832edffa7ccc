use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::ensure_len;
use crate::{Error, Result, Scalar};

/// Variances below this are floored before taking logarithms.
pub const VARIANCE_FLOOR: f64 = 1e-30;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        ensure_len(mean.len(), var.len())?;
        if let Some(index) = var.iter().position(|&v| !(v >= T::zero())) {
            return Err(Error::DegenerateCovariance { index });
        }
        Ok(Self { mean, var })
    }

    pub fn isotropic(mean: Vec<T>, var: T) -> Self {
        let var = vec![var; mean.len()];
        Self { mean, var }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((&xi, &m), &v)| normal_log_pdf(xi, m, v))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| m + v.sqrt() * T::standard_normal(rng))
            .collect()
    }
}

/// `log N(x | mean, var)` with the variance floored at [`VARIANCE_FLOOR`].
#[inline]
pub fn normal_log_pdf<T: Scalar>(x: T, mean: T, var: T) -> T {
    let var = var.max(T::of(VARIANCE_FLOOR));
    let r = x - mean;
    -T::of(0.5) * (T::of((2.0 * std::f64::consts::PI).ln()) + var.ln() + r * r / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    #[test]
    fn scalar_log_pdf() {
        let g = DiagGaussian::isotropic(vec![0.0_f64], 1.0);
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln() - 2.0;
        assert!((g.log_pdf(&[2.0]) - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_variance() {
        assert!(DiagGaussian::new(vec![0.0_f64], vec![-1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0_f64, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn sample_moments() {
        let g = DiagGaussian::new(vec![1.0_f64, -2.0], vec![4.0, 0.25]).unwrap();
        let mut rng = substream(1, 0, Domain::Aux, 0);
        let n = 200_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let x = g.sample(&mut rng);
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let m = sum[k] / n as f64;
            let v = sq[k] / n as f64 - m * m;
            assert!((m - g.mean[k]).abs() < 4.0 * (g.var[k] / n as f64).sqrt());
            assert!((v / g.var[k] - 1.0).abs() < 0.02);
        }
    }
}
