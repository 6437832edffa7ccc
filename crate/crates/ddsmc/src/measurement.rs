//! Linear-Gaussian measurements `y = A x + sigma_y * eps`.
//!
//! All Gaussian algebra runs in the basis given by the thin SVD `A = U S V^T`:
//! with `y' = U^T y` and `x' = V^T x` the operator becomes diagonal and every
//! covariance involved is diagonal too.

use serde::{Deserialize, Serialize};

use crate::gaussian::{normal_log_pdf, DiagGaussian};
use crate::linalg::{complete_orthonormal_basis, symmetric_eigen, Matrix};
use crate::scalar::ensure_len;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasurementModel<T> {
    a: Matrix<T>,
    sigma_y: T,
}

impl<T: Scalar> MeasurementModel<T> {
    pub fn new(a: Matrix<T>, sigma_y: T) -> Result<Self> {
        if a.rows() > a.cols() {
            return Err(Error::param(format!(
                "operator must have d_y <= d_x, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if !(sigma_y >= T::zero()) {
            return Err(Error::param(format!("sigma_y must be >= 0, got {sigma_y}")));
        }
        if !a.is_finite() {
            return Err(Error::param("operator has non-finite entries"));
        }
        Ok(Self { a, sigma_y })
    }

    #[inline]
    pub fn operator(&self) -> &Matrix<T> {
        &self.a
    }

    #[inline]
    pub fn sigma_y(&self) -> T {
        self.sigma_y
    }

    #[inline]
    pub fn d_x(&self) -> usize {
        self.a.cols()
    }

    #[inline]
    pub fn d_y(&self) -> usize {
        self.a.rows()
    }

    /// True when `A` is nonzero only on its main diagonal.
    pub fn is_diagonal(&self) -> bool {
        (0..self.a.rows()).all(|i| {
            self.a
                .row(i)
                .iter()
                .enumerate()
                .all(|(j, &v)| j == i || v == T::zero())
        })
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.a.mul_vec(x)
    }
}

/// `log N(y | A x0, sigma_y^2 I)`. Fails with
/// [`Error::DegenerateLikelihood`] when `sigma_y = 0`; an infinite `sigma_y`
/// gives the constant 0.
pub fn exact_loglik<T: Scalar>(y: &[T], x0: &[T], m: &MeasurementModel<T>) -> Result<T> {
    ensure_len(m.d_y(), y.len())?;
    ensure_len(m.d_x(), x0.len())?;
    if m.sigma_y == T::zero() {
        return Err(Error::DegenerateLikelihood);
    }
    if m.sigma_y.is_infinite() {
        return Ok(T::zero());
    }
    let var = m.sigma_y * m.sigma_y;
    let ax = m.apply(x0);
    Ok(y.iter().zip(&ax).map(|(&yi, &mi)| normal_log_pdf(yi, mi, var)).sum())
}

/// The measurement rotated into the SVD basis of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WhitenedMeasurement<T> {
    /// Singular values, one per measurement.
    pub s: Vec<T>,
    /// `d_y x d_y`, columns are left singular vectors.
    pub u: Matrix<T>,
    /// `d_x x d_x`, columns are right singular vectors.
    pub v: Matrix<T>,
    /// `U^T y`.
    pub y_prime: Vec<T>,
    pub sigma_y: T,
}

impl<T: Scalar> WhitenedMeasurement<T> {
    #[inline]
    pub fn d_x(&self) -> usize {
        self.v.rows()
    }

    #[inline]
    pub fn d_y(&self) -> usize {
        self.s.len()
    }

    /// `x' = V^T x`.
    pub fn to_whitened(&self, x: &[T]) -> Vec<T> {
        self.v.tr_mul_vec(x)
    }

    /// `log p(y | x0)` evaluated in the whitened basis.
    pub fn exact_loglik(&self, x0_prime: &[T]) -> Result<T> {
        if self.sigma_y == T::zero() {
            return Err(Error::DegenerateLikelihood);
        }
        approx_loglik(&self.y_prime, x0_prime, T::zero(), self)
    }
}

/// Thin SVD of `A` through the eigendecomposition of `A A^T`.
///
/// Left singular vectors are signed so their first nonzero entry is positive.
/// The right singular vectors for the observed coordinates are
/// `A^T u_i / s_i`; the rest of `V` is an orthonormal completion.
pub fn whiten<T: Scalar>(m: &MeasurementModel<T>, y: &[T]) -> Result<WhitenedMeasurement<T>> {
    ensure_len(m.d_y(), y.len())?;
    let (d_y, d_x) = (m.d_y(), m.d_x());
    let (eigvals, mut u) = symmetric_eigen(&m.a.gram_rows());

    let tiny = T::of(1e-12);
    for k in 0..d_y {
        let first = (0..d_y).map(|i| u[(i, k)]).find(|v| v.abs() > tiny);
        if matches!(first, Some(v) if v < T::zero()) {
            for i in 0..d_y {
                u[(i, k)] = -u[(i, k)];
            }
        }
    }

    let scale = eigvals.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let mut s = Vec::with_capacity(d_y);
    let mut right: Vec<Option<Vec<T>>> = Vec::with_capacity(d_y);
    for (k, &lam) in eigvals.iter().enumerate() {
        let sv = lam.max(T::zero()).sqrt();
        if lam <= scale * T::of(1e-24) || sv == T::zero() {
            if m.sigma_y == T::zero() {
                return Err(Error::RankDeficient { index: k });
            }
            s.push(T::zero());
            right.push(None);
            continue;
        }
        s.push(sv);
        let mut vk = m.a.tr_mul_vec(&u.column(k));
        for v in vk.iter_mut() {
            *v /= sv;
        }
        right.push(Some(vk));
    }

    // Unobservable measurement directions take arbitrary completion vectors;
    // their zero singular value decouples them from y.
    let mut known: Vec<Vec<T>> = right.iter().flatten().cloned().collect();
    let have = known.len();
    complete_orthonormal_basis(&mut known, d_x);
    let mut extra = known.split_off(have).into_iter();
    let mut basis: Vec<Vec<T>> = right
        .into_iter()
        .map(|r| r.unwrap_or_else(|| extra.next().expect("completion has enough vectors")))
        .collect();
    basis.extend(extra);

    let mut v = Matrix::zeros(d_x, d_x);
    for (j, col) in basis.iter().enumerate() {
        for (i, &val) in col.iter().enumerate() {
            v[(i, j)] = val;
        }
    }
    let y_prime = u.tr_mul_vec(y);
    Ok(WhitenedMeasurement {
        s,
        u,
        v,
        y_prime,
        sigma_y: m.sigma_y,
    })
}

/// `x = V x'`.
pub fn unwhiten<T: Scalar>(x_prime: &[T], w: &WhitenedMeasurement<T>) -> Vec<T> {
    w.v.mul_vec(x_prime)
}

/// `log N(y | A x0hat, sigma_y^2 I + rho^2 A A^T)` in the whitened basis,
/// where the covariance is `diag(sigma_y^2 + rho^2 s_i^2)`.
///
/// `y_prime` and `x0hat_prime` are whitened coordinates. An infinite
/// `sigma_y` carries no information and yields the constant 0.
pub fn approx_loglik<T: Scalar>(
    y_prime: &[T],
    x0hat_prime: &[T],
    rho: T,
    w: &WhitenedMeasurement<T>,
) -> Result<T> {
    ensure_len(w.d_y(), y_prime.len())?;
    ensure_len(w.d_x(), x0hat_prime.len())?;
    if w.sigma_y.is_infinite() {
        return Ok(T::zero());
    }
    let (sy2, r2) = (w.sigma_y * w.sigma_y, rho * rho);
    let mut total = T::zero();
    for (i, (&yi, &si)) in y_prime.iter().zip(&w.s).enumerate() {
        let var = sy2 + r2 * si * si;
        if !(var > T::zero()) {
            return Err(Error::DegenerateCovariance { index: i });
        }
        total += normal_log_pdf(yi, si * x0hat_prime[i], var);
    }
    Ok(total)
}

/// Closed-form `N(x0 | x0hat, rho^2 I) * p(y | x0)` posterior, coordinate-wise
/// in the whitened basis.
///
/// For observed coordinates `i < d_y`:
/// `var_i = rho^2 sigma_y^2 / (s_i^2 rho^2 + sigma_y^2)` and
/// `mean_i = (s_i rho^2 y'_i + sigma_y^2 x0hat_i) / (s_i^2 rho^2 + sigma_y^2)`.
/// Unobserved coordinates keep `(x0hat_i, rho^2)`. A noiseless measurement pins
/// observed coordinates to `y'_i / s_i` with zero variance.
pub fn posterior_x0<T: Scalar>(
    y_prime: &[T],
    x0hat: &[T],
    rho: T,
    s: &[T],
    sigma_y: T,
) -> Result<DiagGaussian<T>> {
    ensure_len(s.len(), y_prime.len())?;
    if s.len() > x0hat.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            found: x0hat.len(),
        });
    }
    if rho == T::zero() && sigma_y == T::zero() {
        return Err(Error::param(
            "posterior is degenerate when both rho and sigma_y vanish",
        ));
    }
    let r2 = rho * rho;
    let mut mean = x0hat.to_vec();
    let mut var = vec![r2; x0hat.len()];
    if sigma_y.is_infinite() {
        return Ok(DiagGaussian { mean, var });
    }
    let sy2 = sigma_y * sigma_y;
    for (i, (&si, &yi)) in s.iter().zip(y_prime).enumerate() {
        if si == T::zero() {
            continue;
        }
        if sigma_y == T::zero() {
            mean[i] = yi / si;
            var[i] = T::zero();
            continue;
        }
        let denom = si * si * r2 + sy2;
        mean[i] = (si * r2 * yi + sy2 * x0hat[i]) / denom;
        var[i] = r2 * sy2 / denom;
    }
    Ok(DiagGaussian { mean, var })
}

/// Residual norm `max |A - U S V^T|`, for diagnostics.
pub fn reconstruction_error<T: Scalar>(m: &MeasurementModel<T>, w: &WhitenedMeasurement<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.d_y() {
        for j in 0..m.d_x() {
            let mut acc = T::zero();
            for (k, &sk) in w.s.iter().enumerate() {
                acc += w.u[(i, k)] * sk * w.v[(j, k)];
            }
            worst = worst.max((acc - m.a[(i, j)]).abs());
        }
    }
    worst
}
