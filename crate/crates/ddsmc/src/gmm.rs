//! Unit-covariance Gaussian-mixture priors with exact scores and posteriors.
//!
//! Under the forward marginal `x_t = a_t x_0 + sqrt(v_t) eps`, a mixture
//! `sum_i w_i N(mu_i, I)` stays a mixture with components
//! `N(a_t mu_i, (a_t^2 + v_t) I)`, so everything below is closed form.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::ScoreSource;
use crate::linalg::Matrix;
use crate::measurement::{whiten, MeasurementModel, WhitenedMeasurement};
use crate::rng::{substream, Domain};
use crate::scalar::{ensure_len, log_sum_exp};
use crate::schedule::NoiseSchedule;
use crate::smc::{categorical_index, cumulative_sum};
use crate::{gaussian::normal_log_pdf, Error, Result, Scalar};

/// Component count used by [`generate_problem`].
pub const DEFAULT_COMPONENTS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmPrior<T> {
    weights: Vec<T>,
    means: Vec<Vec<T>>,
}

impl<T: Scalar> GmmPrior<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::param("mixture needs at least one component"));
        }
        ensure_len(weights.len(), means.len())?;
        let dim = means[0].len();
        for m in &means {
            ensure_len(dim, m.len())?;
        }
        if weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::param("mixture weights must be nonnegative"));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::of(1e-12).max(T::epsilon() * T::of_usize(4 * weights.len()));
        if (total - T::one()).abs() > tol {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { weights, means })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    #[inline]
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    /// Log of `w_i N(x | a mu_i, c I)` for each component, `c = a^2 + v`.
    fn component_logs(&self, x: &[T], a: T, v: T) -> Vec<T> {
        let c = a * a + v;
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(&w, mu)| {
                if w == T::zero() {
                    return T::neg_infinity();
                }
                let lp: T = x
                    .iter()
                    .zip(mu)
                    .map(|(&xi, &mi)| normal_log_pdf(xi, a * mi, c))
                    .sum();
                w.ln() + lp
            })
            .collect()
    }

    /// Normalized component responsibilities for `x` under the level with
    /// forward scale `a` and variance `v`.
    pub fn responsibilities(&self, x: &[T], a: T, v: T) -> Vec<T> {
        let logs = self.component_logs(x, a, v);
        let lse = log_sum_exp(&logs);
        // exp underflows to exactly 0 below about -745 in f64.
        logs.iter().map(|&l| (l - lse).exp()).collect()
    }

    /// `log q_t(x)` for forward scale `a` and variance `v`.
    pub fn log_marginal_at(&self, x: &[T], a: T, v: T) -> T {
        log_sum_exp(&self.component_logs(x, a, v))
    }

    /// `grad log q_t(x)` for forward scale `a` and variance `v`.
    pub fn score_at(&self, x: &[T], a: T, v: T) -> Vec<T> {
        let c = a * a + v;
        let r = self.responsibilities(x, a, v);
        let mut out: Vec<T> = x.iter().map(|&xi| -xi / c).collect();
        for (ri, mu) in r.iter().zip(&self.means) {
            if *ri == T::zero() {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(mu) {
                *o += *ri * a * m / c;
            }
        }
        out
    }

    pub fn log_marginal(&self, x: &[T], t: usize, sched: &NoiseSchedule<T>) -> T {
        self.log_marginal_at(x, sched.scale(t), sched.variance(t))
    }

    pub fn score(&self, x: &[T], t: usize, sched: &NoiseSchedule<T>) -> Vec<T> {
        self.score_at(x, sched.scale(t), sched.variance(t))
    }

    /// Exact `p(x_0 | x_t)`.
    pub fn posterior_x0(&self, x: &[T], t: usize, sched: &NoiseSchedule<T>) -> GmmPosterior<T> {
        let (a, v) = (sched.scale(t), sched.variance(t));
        let c = a * a + v;
        let weights = self.responsibilities(x, a, v);
        let means = self
            .means
            .iter()
            .map(|mu| mu.iter().zip(x).map(|(&m, &xi)| (v * m + a * xi) / c).collect())
            .collect();
        GmmPosterior {
            weights,
            means,
            var: v / c,
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        self.sample_at(T::one(), T::zero(), rng)
    }

    /// Exact draw from `q_t` with forward scale `a` and variance `v`.
    pub fn sample_at<R: rand::Rng + ?Sized>(&self, a: T, v: T, rng: &mut R) -> Vec<T> {
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let k = categorical_index(&cumulative_sum(&w), rng.random::<f64>());
        let sd = (a * a + v).sqrt();
        self.means[k]
            .iter()
            .map(|&m| a * m + sd * T::standard_normal(rng))
            .collect()
    }

    pub fn sample_marginal<R: rand::Rng + ?Sized>(
        &self,
        t: usize,
        sched: &NoiseSchedule<T>,
        rng: &mut R,
    ) -> Vec<T> {
        self.sample_at(sched.scale(t), sched.variance(t), rng)
    }
}

/// A mixture `sum_i w_i N(m_i, var I)` over `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPosterior<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub var: T,
}

impl<T: Scalar> GmmPosterior<T> {
    pub fn mean(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.means[0].len()];
        for (&w, m) in self.weights.iter().zip(&self.means) {
            for (o, &mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        out
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let k = categorical_index(&cumulative_sum(&w), rng.random::<f64>());
        let sd = self.var.sqrt();
        self.means[k]
            .iter()
            .map(|&m| m + sd * T::standard_normal(rng))
            .collect()
    }
}

/// A mixture prior paired with a schedule, usable as a score.
#[derive(Debug, Clone)]
pub struct GmmScore<T> {
    pub prior: GmmPrior<T>,
    pub sched: NoiseSchedule<T>,
}

impl<T: Scalar> ScoreSource<T> for GmmScore<T> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score(&self, x: &[T], t: usize) -> Vec<T> {
        self.prior.score(x, t, &self.sched)
    }
}

/// A synthetic inverse problem with known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmProblem<T> {
    pub prior: GmmPrior<T>,
    pub model: MeasurementModel<T>,
    pub y: Vec<T>,
    pub x_star: Vec<T>,
    /// The standard-normal draw with `y = A x_star + sigma_y * noise`.
    pub noise: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> GmmProblem<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let prob: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // Re-run the constructors' checks on deserialized data.
        GmmPrior::new(prob.prior.weights.clone(), prob.prior.means.clone())?;
        MeasurementModel::new(prob.model.operator().clone(), prob.model.sigma_y())?;
        ensure_len(prob.model.d_y(), prob.y.len())?;
        ensure_len(prob.model.d_x(), prob.prior.dim())?;
        Ok(prob)
    }

    /// The closed-form posterior `p(x_0 | y)`.
    pub fn exact_posterior(&self) -> Result<ExactPosterior<T>> {
        ExactPosterior::new(&self.prior, &self.model, &self.y)
    }
}

/// Knobs of the synthetic problem generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub d_x: usize,
    pub d_y: usize,
    pub num_components: usize,
    /// Spacing of the component lattice in the first two coordinates.
    pub lattice_scale: f64,
    pub sigma_y: f64,
}

impl ProblemSpec {
    pub fn new(d_x: usize, d_y: usize) -> Self {
        Self {
            d_x,
            d_y,
            num_components: DEFAULT_COMPONENTS,
            lattice_scale: 8.0,
            sigma_y: 1.0,
        }
    }

    /// Draws a problem. Means sit on a square lattice centered at the origin
    /// in the first two coordinates and are standard normal elsewhere;
    /// weights are Dirichlet(1); `A` has iid standard-normal entries.
    pub fn generate<T: Scalar>(&self, seed: u64) -> Result<GmmProblem<T>> {
        if self.d_y > self.d_x || self.d_x == 0 || self.d_y == 0 {
            return Err(Error::param(format!(
                "need 0 < d_y <= d_x, got d_x={} d_y={}",
                self.d_x, self.d_y
            )));
        }
        if self.num_components == 0 {
            return Err(Error::param("mixture needs at least one component"));
        }
        let stream = |part: u64| substream(seed, part, Domain::Problem, 0);

        let mut rng = stream(0);
        let raw: Vec<T> = (0..self.num_components).map(|_| T::exp1(&mut rng)).collect();
        let total: T = raw.iter().copied().sum();
        let weights = raw.iter().map(|&w| w / total).collect();

        let side = (self.num_components as f64).sqrt().ceil() as usize;
        let center = (side as f64 - 1.0) / 2.0;
        let mut rng = stream(1);
        let means = (0..self.num_components)
            .map(|k| {
                let lattice = [(k / side) as f64 - center, (k % side) as f64 - center];
                (0..self.d_x)
                    .map(|j| {
                        if j < 2 {
                            T::of(self.lattice_scale * lattice[j])
                        } else {
                            T::standard_normal(&mut rng)
                        }
                    })
                    .collect()
            })
            .collect();
        let prior = GmmPrior::new(weights, means)?;

        let mut rng = stream(2);
        let a: Vec<T> = (0..self.d_y * self.d_x)
            .map(|_| T::standard_normal(&mut rng))
            .collect();
        let model = MeasurementModel::new(
            Matrix::from_row_major(self.d_y, self.d_x, a)?,
            T::of(self.sigma_y),
        )?;

        let x_star = prior.sample(&mut stream(3));
        let mut rng = stream(4);
        let noise: Vec<T> = (0..self.d_y).map(|_| T::standard_normal(&mut rng)).collect();
        let y = model
            .apply(&x_star)
            .iter()
            .zip(&noise)
            .map(|(&m, &e)| m + model.sigma_y() * e)
            .collect();
        Ok(GmmProblem {
            prior,
            model,
            y,
            x_star,
            noise,
            seed,
        })
    }
}

/// A problem with the default generator settings.
pub fn generate_problem<T: Scalar>(d_x: usize, d_y: usize, seed: u64) -> Result<GmmProblem<T>> {
    ProblemSpec::new(d_x, d_y).generate(seed)
}

/// `p(x_0 | y)` for a mixture prior, stored in the whitened basis where every
/// component shares the diagonal covariance `(1 + s_j^2 / sigma_y^2)^-1`.
#[derive(Debug, Clone)]
pub struct ExactPosterior<T> {
    pub weights: Vec<T>,
    /// Component means in whitened coordinates.
    pub means: Vec<Vec<T>>,
    pub var: Vec<T>,
    pub whitened: WhitenedMeasurement<T>,
}

impl<T: Scalar> ExactPosterior<T> {
    pub fn new(prior: &GmmPrior<T>, model: &MeasurementModel<T>, y: &[T]) -> Result<Self> {
        if model.sigma_y() == T::zero() {
            return Err(Error::param(
                "exact mixture posterior requires sigma_y > 0",
            ));
        }
        ensure_len(model.d_x(), prior.dim())?;
        let w = whiten(model, y)?;
        let sy2 = model.sigma_y() * model.sigma_y();
        let d_x = prior.dim();
        let mut var = vec![T::one(); d_x];
        for (j, &s) in w.s.iter().enumerate() {
            var[j] = T::one() / (T::one() + s * s / sy2);
        }

        let mut log_w = Vec::with_capacity(prior.num_components());
        let mut means = Vec::with_capacity(prior.num_components());
        for (&wi, mu) in prior.weights().iter().zip(prior.means()) {
            let mu_p = w.to_whitened(mu);
            let mut lw = if wi > T::zero() { wi.ln() } else { T::neg_infinity() };
            for (j, &s) in w.s.iter().enumerate() {
                lw += normal_log_pdf(w.y_prime[j], s * mu_p[j], sy2 + s * s);
            }
            log_w.push(lw);
            let mut m = mu_p;
            for (j, &s) in w.s.iter().enumerate() {
                m[j] = var[j] * (m[j] + s * w.y_prime[j] / sy2);
            }
            means.push(m);
        }
        let lse = log_sum_exp(&log_w);
        let weights = log_w.iter().map(|&l| (l - lse).exp()).collect();
        Ok(Self {
            weights,
            means,
            var,
            whitened: w,
        })
    }

    /// Posterior mean in the original basis.
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.var.len()];
        for (&w, mu) in self.weights.iter().zip(&self.means) {
            for (o, &v) in m.iter_mut().zip(mu) {
                *o += w * v;
            }
        }
        self.whitened.v.mul_vec(&m)
    }

    /// `n` exact draws in the original basis. Draw `k` uses its own substream,
    /// so the result does not depend on parallel scheduling.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<T>> {
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        let cumulative = cumulative_sum(&w);
        let sd: Vec<T> = self.var.iter().map(|v| v.sqrt()).collect();
        (0..n)
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(seed, 0, Domain::ExactSample, k as u64);
                let c = categorical_index(&cumulative, rand::Rng::random::<f64>(&mut rng));
                let xp: Vec<T> = self.means[c]
                    .iter()
                    .zip(&sd)
                    .map(|(&m, &s)| m + s * T::standard_normal(&mut rng))
                    .collect();
                self.whitened.v.mul_vec(&xp)
            })
            .collect()
    }
}
