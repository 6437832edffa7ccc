//! Decoupled SMC for uniform-noise discrete diffusion.
//!
//! States are `D` categorical variables with `d` values each. The forward
//! kernel at every step mixes the identity with the uniform distribution, and
//! the measurement passes each variable through another such kernel. The
//! denoiser is exact: per-variable marginals of `p(x_0 | x_t)` computed by
//! enumerating a small joint prior table.

use std::path::Path;

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, substream, Domain, StreamRng};
use crate::smc::{categorical_index, cumulative_sum, run_smc, SmcKernel, TraceRow};
use crate::{Error, Result};

/// Largest joint table handled by enumeration.
pub const MAX_OUTCOMES: usize = 65_536;

/// `Q = (1 - beta) I + beta 11^T / d`, stored as its two distinct entries.
///
/// Generic over the number type so that exact rationals can check the
/// algebra; the samplers use `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformKernel<R> {
    pub d: usize,
    /// Diagonal entry `1 - beta + beta/d`.
    pub keep: R,
    /// Off-diagonal entry `beta/d`.
    pub move_prob: R,
}

impl<R: Num + Copy + PartialOrd + FromPrimitive> UniformKernel<R> {
    pub fn new(d: usize, beta: R) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("state count must be positive"));
        }
        if !(beta >= R::zero() && beta <= R::one()) {
            return Err(Error::param("beta must lie in [0, 1]"));
        }
        let dd = R::from_usize(d).expect("state count representable");
        let move_prob = beta / dd;
        Ok(Self {
            d,
            keep: R::one() - beta + move_prob,
            move_prob,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(d, R::zero()).expect("valid")
    }

    /// `beta` of the kernel.
    pub fn beta(&self) -> R {
        R::one() - self.retention()
    }

    /// `1 - beta = keep - move`.
    pub fn retention(&self) -> R {
        self.keep - self.move_prob
    }

    #[inline]
    pub fn entry(&self, from: usize, to: usize) -> R {
        if from == to {
            self.keep
        } else {
            self.move_prob
        }
    }

    /// `self` followed by `next`; uniform kernels compose by multiplying
    /// retentions.
    pub fn then(&self, next: &Self) -> Result<Self> {
        if self.d != next.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: next.d,
            });
        }
        Self::new(self.d, R::one() - self.retention() * next.retention())
    }

    /// Row vector times matrix: `p Q`.
    pub fn push(&self, p: &[R]) -> Vec<R> {
        let total = p.iter().fold(R::zero(), |a, &b| a + b);
        let diff = self.keep - self.move_prob;
        p.iter().map(|&pi| self.move_prob * total + diff * pi).collect()
    }

    /// Dense `d x d` matrix.
    pub fn dense(&self) -> Vec<Vec<R>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.entry(i, j)).collect())
            .collect()
    }
}

/// `Q_1 Q_2 ... Q_t` for the given per-step betas.
pub fn cumulative_kernel<R: Num + Copy + PartialOrd + FromPrimitive>(
    d: usize,
    betas: &[R],
) -> Result<UniformKernel<R>> {
    let mut k = UniformKernel::identity(d);
    for &b in betas {
        k = k.then(&UniformKernel::new(d, b)?)?;
    }
    Ok(k)
}

/// `D` probability rows over `d` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGrid {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
}

impl CategoricalGrid {
    pub fn new(d: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (j, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            let total: f64 = r.iter().sum();
            if r.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::param(format!("row {j} is not a probability vector")));
            }
        }
        Ok(Self { d, rows })
    }

    /// One-hot rows for the given states.
    pub fn one_hot(d: usize, states: &[usize]) -> Self {
        let rows = states
            .iter()
            .map(|&s| {
                let mut r = vec![0.0; d];
                r[s] = 1.0;
                r
            })
            .collect();
        Self { d, rows }
    }

    pub fn num_vars(&self) -> usize {
        self.rows.len()
    }

    /// Value index of every row whose mass is entirely on one state.
    pub fn point_states(&self) -> Option<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| r.iter().position(|&p| p == 1.0))
            .collect()
    }
}

/// A joint distribution over `d^D` outcomes. Outcome index `i` encodes
/// variable `j` as digit `j` of `i` in base `d`, most significant first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDiscretePrior {
    pub num_vars: usize,
    pub d: usize,
    pub table: Vec<f64>,
}

impl ToyDiscretePrior {
    pub fn new(num_vars: usize, d: usize, table: Vec<f64>) -> Result<Self> {
        let size = outcome_count(num_vars, d)?;
        if table.len() != size {
            return Err(Error::DimensionMismatch {
                expected: size,
                found: table.len(),
            });
        }
        let total: f64 = table.iter().sum();
        if table.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("prior table sums to {total}, not 1")));
        }
        Ok(Self { num_vars, d, table })
    }

    pub fn uniform(num_vars: usize, d: usize) -> Result<Self> {
        let size = outcome_count(num_vars, d)?;
        Self::new(num_vars, d, vec![1.0 / size as f64; size])
    }

    /// `p(x) ∝ exp(coupling * #{j : x_j = x_{j+1}} + sum_j field_j[x_j])` with
    /// standard-normal fields drawn from `seed`.
    pub fn neighbor_coupled(num_vars: usize, d: usize, coupling: f64, seed: u64) -> Result<Self> {
        let size = outcome_count(num_vars, d)?;
        let mut rng = substream(seed, 0, Domain::Problem, 0);
        let field: Vec<f64> = (0..num_vars * d)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let mut table: Vec<f64> = (0..size)
            .map(|i| {
                let x = decode(i, num_vars, d);
                let agree = x.windows(2).filter(|w| w[0] == w[1]).count() as f64;
                let h: f64 = x.iter().enumerate().map(|(j, &v)| field[j * d + v]).sum();
                (coupling * agree + h).exp()
            })
            .collect();
        let total: f64 = table.iter().sum();
        for p in table.iter_mut() {
            *p /= total;
        }
        // Renormalize once more so the sum is 1 to the last bit it can be.
        let total: f64 = table.iter().sum();
        for p in table.iter_mut() {
            *p /= total;
        }
        Self::new(num_vars, d, table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(raw.num_vars, raw.d, raw.table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data serializes");
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn outcome(&self, index: usize) -> Vec<usize> {
        decode(index, self.num_vars, self.d)
    }

    pub fn index_of(&self, x: &[usize]) -> usize {
        encode(x, self.d)
    }

    /// Per-variable marginals.
    pub fn marginals(&self) -> CategoricalGrid {
        marginalize(&self.table, self.num_vars, self.d)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let i = categorical_index(&cumulative_sum(&self.table), rng.random::<f64>());
        self.outcome(i)
    }
}

fn outcome_count(num_vars: usize, d: usize) -> Result<usize> {
    if num_vars == 0 || d == 0 {
        return Err(Error::param("need at least one variable and one state"));
    }
    let size = (d as u128).checked_pow(num_vars as u32).unwrap_or(u128::MAX);
    if size > MAX_OUTCOMES as u128 {
        return Err(Error::TooLarge {
            size: usize::try_from(size).unwrap_or(usize::MAX),
            limit: MAX_OUTCOMES,
        });
    }
    Ok(size as usize)
}

fn decode(mut index: usize, num_vars: usize, d: usize) -> Vec<usize> {
    let mut x = vec![0; num_vars];
    for j in (0..num_vars).rev() {
        x[j] = index % d;
        index /= d;
    }
    x
}

fn encode(x: &[usize], d: usize) -> usize {
    x.iter().fold(0, |acc, &v| acc * d + v)
}

fn marginalize(table: &[f64], num_vars: usize, d: usize) -> CategoricalGrid {
    let mut rows = vec![vec![0.0; d]; num_vars];
    for (i, &p) in table.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (j, v) in decode(i, num_vars, d).into_iter().enumerate() {
            rows[j][v] += p;
        }
    }
    for r in rows.iter_mut() {
        let total: f64 = r.iter().sum();
        for p in r.iter_mut() {
            *p /= total;
        }
    }
    CategoricalGrid { d, rows }
}

/// Exact per-variable marginals of `p(x_0 | x_t)` where `x_t` is obtained
/// from `x_0` by applying `noise` to every variable.
pub fn exact_denoiser(
    prior: &ToyDiscretePrior,
    x_t: &[usize],
    noise: &UniformKernel<f64>,
) -> Result<CategoricalGrid> {
    if x_t.len() != prior.num_vars {
        return Err(Error::DimensionMismatch {
            expected: prior.num_vars,
            found: x_t.len(),
        });
    }
    let (d, n) = (prior.d, prior.num_vars);
    let mut rows = vec![vec![0.0; d]; n];
    let mut total = 0.0;
    let mut x = vec![0usize; n];
    for &p in &prior.table {
        if p > 0.0 {
            let lik: f64 = x.iter().zip(x_t).map(|(&a, &b)| noise.entry(a, b)).product();
            let w = p * lik;
            if w > 0.0 {
                total += w;
                for (j, &v) in x.iter().enumerate() {
                    rows[j][v] += w;
                }
            }
        }
        // Advance the base-d odometer in the table's digit order.
        for j in (0..n).rev() {
            x[j] += 1;
            if x[j] < d {
                break;
            }
            x[j] = 0;
        }
    }
    if !(total > 0.0) {
        return Err(Error::ImpossibleEvidence { variable: 0 });
    }
    for r in rows.iter_mut() {
        for p in r.iter_mut() {
            *p /= total;
        }
    }
    Ok(CategoricalGrid { d, rows })
}

/// `p~(x_0 | x_t, y)` per variable: `(Q_y[:, y_j] ⊙ pred_j) / Z_j`. Returns
/// the posterior and the normalizers `Z_j = p~(y_j | x_t)`.
pub fn discrete_posterior_x0(
    pred: &CategoricalGrid,
    y: &[usize],
    qy: &UniformKernel<f64>,
) -> Result<(CategoricalGrid, Vec<f64>)> {
    if y.len() != pred.num_vars() {
        return Err(Error::DimensionMismatch {
            expected: pred.num_vars(),
            found: y.len(),
        });
    }
    let mut rows = Vec::with_capacity(y.len());
    let mut norms = Vec::with_capacity(y.len());
    for (j, (row, &yj)) in pred.rows.iter().zip(y).enumerate() {
        let mut r: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(k, &p)| qy.entry(k, yj) * p)
            .collect();
        let z: f64 = r.iter().sum();
        if !(z > 0.0) {
            return Err(Error::ImpossibleEvidence { variable: j });
        }
        for p in r.iter_mut() {
            *p /= z;
        }
        rows.push(r);
        norms.push(z);
    }
    Ok((CategoricalGrid { d: pred.d, rows }, norms))
}

/// `r_t(x_t | x_next, y)`: each posterior row pushed through `noise`.
pub fn discrete_proposal(posterior: &CategoricalGrid, noise: &UniformKernel<f64>) -> CategoricalGrid {
    CategoricalGrid {
        d: posterior.d,
        rows: posterior.rows.iter().map(|r| noise.push(r)).collect(),
    }
}

/// `p(x_0 | y) ∝ p(x_0) prod_j Q_y[x_0j, y_j]` over all outcomes.
pub fn brute_force_posterior(
    prior: &ToyDiscretePrior,
    y: &[usize],
    qy: &UniformKernel<f64>,
) -> Result<Vec<f64>> {
    if y.len() != prior.num_vars {
        return Err(Error::DimensionMismatch {
            expected: prior.num_vars,
            found: y.len(),
        });
    }
    let mut post: Vec<f64> = prior
        .table
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let x = prior.outcome(i);
            p * x.iter().zip(y).map(|(&a, &b)| qy.entry(a, b)).product::<f64>()
        })
        .collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ImpossibleEvidence { variable: 0 });
    }
    for p in post.iter_mut() {
        *p /= total;
    }
    Ok(post)
}

/// A D3SMC particle with the caches needed for its next weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteParticle {
    pub x: Vec<usize>,
    pub pred: Option<CategoricalGrid>,
    pub post: Option<CategoricalGrid>,
    pub approx_loglik: Option<f64>,
    pub parent_loglik: Option<f64>,
    /// `log p^0(x | parent) - log r(x | parent, y)`.
    pub transition_log_ratio: f64,
}

impl DiscreteParticle {
    fn fresh(x: Vec<usize>, parent_loglik: Option<f64>, ratio: f64) -> Self {
        Self {
            x,
            pred: None,
            post: None,
            approx_loglik: None,
            parent_loglik,
            transition_log_ratio: ratio,
        }
    }
}

/// The discrete sampler over every level `T, T-1, ..., 0`.
pub struct D3smc<'a> {
    prior: &'a ToyDiscretePrior,
    y: Vec<usize>,
    qy: UniformKernel<f64>,
    /// `cumulative[t]` maps `x_0` to `x_t`.
    cumulative: Vec<UniformKernel<f64>>,
    times: Vec<usize>,
}

impl<'a> D3smc<'a> {
    pub fn new(
        prior: &'a ToyDiscretePrior,
        y: &[usize],
        qy: UniformKernel<f64>,
        betas: &[f64],
    ) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("need at least one noising step"));
        }
        if y.len() != prior.num_vars {
            return Err(Error::DimensionMismatch {
                expected: prior.num_vars,
                found: y.len(),
            });
        }
        if let Some(&v) = y.iter().find(|&&v| v >= prior.d) {
            return Err(Error::param(format!("measurement value {v} out of range")));
        }
        if qy.d != prior.d {
            return Err(Error::DimensionMismatch {
                expected: prior.d,
                found: qy.d,
            });
        }
        let mut cumulative = vec![UniformKernel::identity(prior.d)];
        for &b in betas {
            let next = cumulative.last().unwrap().then(&UniformKernel::new(prior.d, b)?)?;
            cumulative.push(next);
        }
        Ok(Self {
            prior,
            y: y.to_vec(),
            qy,
            cumulative,
            times: (0..=betas.len()).rev().collect(),
        })
    }

    pub fn cumulative(&self, t: usize) -> &UniformKernel<f64> {
        &self.cumulative[t]
    }

    /// `log p(y | x_0)`.
    pub fn exact_loglik(&self, x0: &[usize]) -> f64 {
        x0.iter()
            .zip(&self.y)
            .map(|(&a, &b)| self.qy.entry(a, b).ln())
            .sum()
    }

    /// Weighted particles at level 0.
    pub fn run(&self, num_particles: usize, seed: u64) -> Result<DiscreteOutput> {
        let out = run_smc(self, num_particles, seed)?;
        Ok(DiscreteOutput {
            samples: out.ensemble.states.into_iter().map(|p| p.x).collect(),
            weights: out.weights,
            draw: out.draw,
            trace: out.trace,
        })
    }
}

fn sample_row(row: &[f64], rng: &mut StreamRng) -> usize {
    categorical_index(&cumulative_sum(row), rng.random::<f64>())
}

impl SmcKernel for D3smc<'_> {
    type Particle = DiscreteParticle;

    fn times(&self) -> &[usize] {
        &self.times
    }

    /// Exact draw from the forward marginal at `T`.
    fn init(&self, rng: &mut StreamRng) -> Result<DiscreteParticle> {
        let x0 = self.prior.sample(rng);
        let noise = &self.cumulative[self.times[0]];
        let x = x0
            .iter()
            .map(|&v| {
                let mut row = vec![0.0; self.prior.d];
                row[v] = 1.0;
                sample_row(&noise.push(&row), rng)
            })
            .collect();
        Ok(DiscreteParticle::fresh(x, None, 0.0))
    }

    fn log_weight(&self, step: usize, p: &mut DiscreteParticle) -> Result<f64> {
        let t = self.times[step];
        if t == 0 {
            let parent = p
                .parent_loglik
                .ok_or(Error::Sequencing("final weight needs the parent likelihood"))?;
            return Ok(self.exact_loglik(&p.x) - parent + p.transition_log_ratio);
        }
        let pred = exact_denoiser(self.prior, &p.x, &self.cumulative[t])?;
        let (post, norms) = discrete_posterior_x0(&pred, &self.y, &self.qy)?;
        let l: f64 = norms.iter().map(|z| z.ln()).sum();
        p.pred = Some(pred);
        p.post = Some(post);
        p.approx_loglik = Some(l);
        if step == 0 {
            return Ok(l);
        }
        let parent = p
            .parent_loglik
            .ok_or(Error::Sequencing("weight needs the parent likelihood"))?;
        Ok(l - parent + p.transition_log_ratio)
    }

    fn propose(
        &self,
        step: usize,
        p: &DiscreteParticle,
        rng: &mut StreamRng,
    ) -> Result<DiscreteParticle> {
        let (pred, post, l) = match (&p.pred, &p.post, p.approx_loglik) {
            (Some(a), Some(b), Some(l)) => (a, b, l),
            _ => return Err(Error::Sequencing("proposal needs a weighed particle")),
        };
        let noise = &self.cumulative[self.times[step + 1]];
        let proposal = discrete_proposal(post, noise);
        let prior = discrete_proposal(pred, noise);
        let mut ratio = 0.0;
        let x = proposal
            .rows
            .iter()
            .zip(&prior.rows)
            .map(|(r, q)| {
                let k = sample_row(r, rng);
                ratio += q[k].ln() - r[k].ln();
                k
            })
            .collect();
        Ok(DiscreteParticle::fresh(x, Some(l), ratio))
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOutput {
    pub samples: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub draw: usize,
    pub trace: Vec<TraceRow>,
}

impl DiscreteOutput {
    /// Adds the weighted ensemble to a histogram over outcome indices.
    pub fn accumulate(&self, prior: &ToyDiscretePrior, hist: &mut [f64]) {
        for (x, &w) in self.samples.iter().zip(&self.weights) {
            hist[prior.index_of(x)] += w;
        }
    }
}

/// Runs `runs` independent ensembles and returns the pooled weighted
/// histogram over outcomes, normalized to 1.
pub fn run_d3smc(
    prior: &ToyDiscretePrior,
    y: &[usize],
    qy: UniformKernel<f64>,
    betas: &[f64],
    num_particles: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = D3smc::new(prior, y, qy, betas)?;
    let mut hist = vec![0.0; prior.table.len()];
    for r in 0..runs {
        let run_seed = derive_seed(seed, r as u64);
        sampler.run(num_particles, run_seed)?.accumulate(prior, &mut hist);
    }
    let total: f64 = hist.iter().sum();
    for h in hist.iter_mut() {
        *h /= total;
    }
    Ok(hist)
}

/// Per-variable marginals of a distribution over outcomes.
pub fn outcome_marginals(hist: &[f64], num_vars: usize, d: usize) -> CategoricalGrid {
    marginalize(hist, num_vars, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(a: i64, b: i64) -> Q {
        Ratio::new(a, b)
    }

    #[test]
    fn uniform_rows_sum_to_one_exactly() {
        for d in 1..6 {
            for beta in [q(0, 1), q(1, 3), q(3, 5), q(1, 1)] {
                let k = UniformKernel::new(d, beta).unwrap();
                for row in k.dense() {
                    assert_eq!(row.iter().copied().fold(q(0, 1), |a, b| a + b), q(1, 1));
                }
                assert!(k.keep >= k.move_prob);
            }
        }
    }

    #[test]
    fn cumulative_examples() {
        let id = cumulative_kernel(3, &[q(0, 1), q(0, 1)]).unwrap();
        assert_eq!(id, UniformKernel::identity(3));
        let full = cumulative_kernel(4, &[q(1, 1)]).unwrap();
        assert_eq!((full.keep, full.move_prob), (q(1, 4), q(1, 4)));
        let half = cumulative_kernel(2, &[q(1, 2), q(1, 2)]).unwrap();
        assert_eq!(half.retention(), q(1, 4));
    }

    #[test]
    fn cumulative_matches_matrix_products() {
        let betas = [q(1, 7), q(2, 5), q(1, 3)];
        let d = 3;
        let mut dense: Vec<Vec<Q>> = UniformKernel::<Q>::identity(d).dense();
        for &b in &betas {
            let step = UniformKernel::new(d, b).unwrap().dense();
            dense = (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| (0..d).fold(q(0, 1), |a, k| a + dense[i][k] * step[k][j]))
                        .collect()
                })
                .collect();
        }
        assert_eq!(cumulative_kernel(d, &betas).unwrap().dense(), dense);
    }

    #[test]
    fn posterior_flip_example() {
        let qy = UniformKernel::new(2, 0.6_f64).unwrap();
        assert!((qy.keep - 0.7).abs() < 1e-15);
        let pred = CategoricalGrid::new(2, vec![vec![0.5, 0.5]]).unwrap();
        let (post, z) = discrete_posterior_x0(&pred, &[0], &qy).unwrap();
        assert!((post.rows[0][0] - 0.7).abs() < 1e-15);
        assert!((post.rows[0][1] - 0.3).abs() < 1e-15);
        assert!((z[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_limits() {
        let pred = CategoricalGrid::new(3, vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let (post, _) = discrete_posterior_x0(&pred, &[2], &UniformKernel::identity(3)).unwrap();
        assert_eq!(post.point_states(), Some(vec![2]));
        let (post, _) = discrete_posterior_x0(&pred, &[2], &UniformKernel::new(3, 1.0).unwrap()).unwrap();
        for (a, b) in post.rows[0].iter().zip(&pred.rows[0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let pred = CategoricalGrid::new(3, vec![vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            discrete_posterior_x0(&pred, &[2], &UniformKernel::identity(3)),
            Err(Error::ImpossibleEvidence { variable: 0 })
        ));
    }

    #[test]
    fn proposal_examples() {
        let post = CategoricalGrid::new(2, vec![vec![0.7, 0.3]]).unwrap();
        let half = UniformKernel::new(2, 0.5).unwrap();
        let r = discrete_proposal(&post, &half);
        assert!((r.rows[0][0] - 0.6).abs() < 1e-15 && (r.rows[0][1] - 0.4).abs() < 1e-15);
        assert_eq!(discrete_proposal(&post, &UniformKernel::identity(2)), post);
        let r = discrete_proposal(&post, &UniformKernel::new(2, 1.0).unwrap());
        assert_eq!(r.rows[0], vec![0.5, 0.5]);
    }

    #[test]
    fn denoiser_limits() {
        let prior = ToyDiscretePrior::neighbor_coupled(3, 3, 1.0, 2).unwrap();
        let marg = prior.marginals();
        let pure_noise = UniformKernel::new(3, 1.0).unwrap();
        for x in [[0, 1, 2], [2, 2, 0]] {
            let got = exact_denoiser(&prior, &x, &pure_noise).unwrap();
            for (a, b) in got.rows.iter().flatten().zip(marg.rows.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
            let got = exact_denoiser(&prior, &x, &UniformKernel::identity(3)).unwrap();
            assert_eq!(got.point_states(), Some(x.to_vec()));
        }
    }

    #[test]
    fn denoiser_two_state_bayes() {
        let prior = ToyDiscretePrior::new(1, 2, vec![0.5, 0.5]).unwrap();
        // retention 0.6: keep 0.8, move 0.2
        let k = UniformKernel::new(2, 0.4).unwrap();
        let got = exact_denoiser(&prior, &[0], &k).unwrap();
        assert!((got.rows[0][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn brute_force_examples() {
        let prior = ToyDiscretePrior::new(1, 2, vec![0.9, 0.1]).unwrap();
        let qy = UniformKernel::new(2, 0.6_f64).unwrap();
        let post = brute_force_posterior(&prior, &[1], &qy).unwrap();
        assert!((post[0] - 27.0 / 34.0).abs() < 1e-15);
        assert!((post[1] - 7.0 / 34.0).abs() < 1e-15);

        let u = ToyDiscretePrior::uniform(2, 3).unwrap();
        let post = brute_force_posterior(&u, &[2, 0], &UniformKernel::identity(3)).unwrap();
        assert_eq!(post[u.index_of(&[2, 0])], 1.0);
        let post = brute_force_posterior(&u, &[2, 0], &UniformKernel::new(3, 1.0).unwrap()).unwrap();
        assert!(post.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn table_size_limit() {
        assert!(matches!(
            ToyDiscretePrior::uniform(9, 4),
            Err(Error::TooLarge { .. })
        ));
        assert!(ToyDiscretePrior::uniform(8, 4).is_ok());
        assert!(ToyDiscretePrior::new(1, 2, vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn encoding_round_trip() {
        let p = ToyDiscretePrior::uniform(3, 4).unwrap();
        for i in 0..64 {
            assert_eq!(p.index_of(&p.outcome(i)), i);
        }
        assert_eq!(p.outcome(1), vec![0, 0, 1]);
    }

    #[test]
    fn exact_measurement_returns_y() {
        let prior = ToyDiscretePrior::neighbor_coupled(3, 3, 0.5, 1).unwrap();
        let y = [2, 0, 1];
        let s = D3smc::new(&prior, &y, UniformKernel::identity(3), &[0.1; 10]).unwrap();
        let out = s.run(32, 4).unwrap();
        assert!(out.samples.iter().all(|x| x == &y));
    }

    #[test]
    fn prior_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prior.json");
        let p = ToyDiscretePrior::neighbor_coupled(2, 3, 0.7, 5).unwrap();
        p.save(&path).unwrap();
        assert_eq!(ToyDiscretePrior::load(&path).unwrap(), p);
    }
}
