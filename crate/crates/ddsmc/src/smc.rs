//! Generic sequential Monte Carlo: weighting, normalization, multinomial
//! resampling and the stepping loop.
//!
//! Log-weights are kept in `f64` whatever scalar the particles use.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Domain, StreamRng};
use crate::{Error, Result};

/// One sampler plugged into [`run_smc`].
///
/// `times()` lists the levels visited, strictly decreasing and ending at 0.
/// Step `k` refers to `times()[k]`. The engine calls `init` once per particle,
/// then for every step `k` except the last: `log_weight(k)`, normalize,
/// resample, `propose(k)` (which moves a particle from `times()[k]` to
/// `times()[k + 1]`). The last step only weighs.
pub trait SmcKernel: Sync {
    type Particle: Clone + Send + Sync;

    fn times(&self) -> &[usize];

    fn init(&self, rng: &mut StreamRng) -> Result<Self::Particle>;

    /// Incremental log-weight of a particle sitting at `times()[step]`. May
    /// fill caches on the particle that later proposals rely on.
    fn log_weight(&self, step: usize, particle: &mut Self::Particle) -> Result<f64>;

    fn propose(
        &self,
        step: usize,
        particle: &Self::Particle,
        rng: &mut StreamRng,
    ) -> Result<Self::Particle>;
}

/// Particles with their unnormalized log-weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<P> {
    pub states: Vec<P>,
    pub logw: Vec<f64>,
}

impl<P: Clone> ParticleEnsemble<P> {
    pub fn uniform(states: Vec<P>) -> Self {
        let logw = vec![0.0; states.len()];
        Self { states, logw }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize(&self.logw)
    }

    /// Copies states at `ancestors` and resets the log-weights to 0.
    pub fn select(&self, ancestors: &[usize]) -> Self {
        let states = ancestors.iter().map(|&a| self.states[a].clone()).collect();
        Self {
            states,
            logw: vec![0.0; ancestors.len()],
        }
    }
}

/// Softmax of log-weights. `-inf` maps to 0; NaN is treated as `-inf`.
pub fn normalize(logw: &[f64]) -> Result<Vec<f64>> {
    let max = logw
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::TotalDegeneracy);
    }
    if max == f64::INFINITY {
        // Infinite weights share the mass among themselves.
        let hits = logw.iter().filter(|&&v| v == f64::INFINITY).count() as f64;
        return Ok(logw
            .iter()
            .map(|&v| if v == f64::INFINITY { 1.0 / hits } else { 0.0 })
            .collect());
    }
    let mut w: Vec<f64> = logw
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    Ok(w)
}

/// `log(mean(exp(logw)))`, the log normalizing-constant increment of a step.
pub fn log_mean_exp(logw: &[f64]) -> f64 {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = logw.iter().map(|&v| (v - max).exp()).sum();
    max + (s / logw.len() as f64).ln()
}

/// Effective sample size `1 / sum w_i^2` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Index `i` with `cumulative[i - 1] <= u * total < cumulative[i]`.
pub fn categorical_index(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("nonempty weights");
    let target = u * total;
    let i = cumulative.partition_point(|&c| c <= target);
    // u < 1 keeps i in range except for rounding at the top end; zero-weight
    // trailing entries are skipped by stepping back to the last positive one.
    let mut i = i.min(cumulative.len() - 1);
    while i > 0 && cumulative[i] == cumulative[i - 1] {
        i -= 1;
    }
    i
}

pub fn cumulative_sum(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// `n` iid categorical draws from normalized `weights`.
pub fn multinomial_ancestors<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let cumulative = cumulative_sum(weights);
    (0..n)
        .map(|_| categorical_index(&cumulative, rng.random::<f64>()))
        .collect()
}

/// Multinomial resampling of the whole ensemble.
pub fn multinomial_resample<P: Clone, R: Rng + ?Sized>(
    ens: &ParticleEnsemble<P>,
    rng: &mut R,
) -> Result<ParticleEnsemble<P>> {
    let w = ens.weights()?;
    let ancestors = multinomial_ancestors(&w, ens.len(), rng);
    Ok(ens.select(&ancestors))
}

/// One diagnostics row per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub time: usize,
    pub ess: f64,
    pub log_z_increment: f64,
}

#[derive(Debug, Clone)]
pub struct SmcOutput<P> {
    /// The final weighted ensemble at level 0.
    pub ensemble: ParticleEnsemble<P>,
    pub weights: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Index of the single particle drawn from the final weights.
    pub draw: usize,
}

impl<P> SmcOutput<P> {
    pub fn drawn(&self) -> &P {
        &self.ensemble.states[self.draw]
    }

    /// Sum of the per-step increments, an estimate of `log p(y)` when the
    /// kernel's weights telescope.
    pub fn log_evidence(&self) -> f64 {
        self.trace.iter().map(|r| r.log_z_increment).sum()
    }
}

/// Runs the sampler with `n` particles.
///
/// Per-particle work runs on the rayon pool; all randomness comes from
/// substreams keyed on `(seed, step, particle)`, so results do not depend on
/// the number of threads.
pub fn run_smc<K: SmcKernel>(kernel: &K, n: usize, seed: u64) -> Result<SmcOutput<K::Particle>> {
    if n == 0 {
        return Err(Error::param("particle count must be positive"));
    }
    let times = kernel.times();
    if times.last() != Some(&0) || times.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Sequencing(
            "time grid must be strictly decreasing and end at 0",
        ));
    }

    let states = (0..n)
        .into_par_iter()
        .map(|i| kernel.init(&mut substream(seed, 0, Domain::Init, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut ens = ParticleEnsemble::uniform(states);
    let mut trace = Vec::with_capacity(times.len());
    let last = times.len() - 1;

    for (step, &time) in times.iter().enumerate() {
        ens.logw = ens
            .states
            .par_iter_mut()
            .map(|p| kernel.log_weight(step, p))
            .collect::<Result<Vec<_>>>()?;
        let weights = ens.weights()?;
        trace.push(TraceRow {
            step,
            time,
            ess: ess(&weights),
            log_z_increment: log_mean_exp(&ens.logw),
        });
        log::debug!("step {step} time {time} ess {:.2}", trace[step].ess);

        if step == last {
            let mut rng = substream(seed, step as u64, Domain::FinalDraw, 0);
            let draw = categorical_index(&cumulative_sum(&weights), rng.random::<f64>());
            return Ok(SmcOutput {
                ensemble: ens,
                weights,
                trace,
                draw,
            });
        }

        let mut rng = substream(seed, step as u64, Domain::Resample, 0);
        let ancestors = multinomial_ancestors(&weights, n, &mut rng);
        let parents = ens.select(&ancestors);
        let moved = parents
            .states
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = substream(seed, step as u64, Domain::Propose, i as u64);
                kernel.propose(step, p, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        ens = ParticleEnsemble::uniform(moved);
    }
    unreachable!("time grid is nonempty")
}
