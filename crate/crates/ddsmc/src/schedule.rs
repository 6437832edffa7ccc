//! Forward noising schedules.
//!
//! Both parameterizations are described by the forward marginal
//! `q(x_t | x_0) = N(scale_t * x_0, var_t * I)`:
//!
//! * VE: `scale_t = 1`, `var_t = sigma_t^2`, with `sigma_0 = 0`.
//! * VP: `scale_t = sqrt(alpha_bar_t)`, `var_t = 1 - alpha_bar_t`, with `alpha_bar_0 = 1`.
//!
//! Index 0 is always the data level. Generation walks the strictly decreasing
//! subsequence [`NoiseSchedule::times`], which always ends at 0.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Ve,
    Vp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NoiseSchedule<T> {
    kind: ScheduleKind,
    /// `beta[t]` for `t = 1..=T`; `beta[0]` is 0.
    beta: Vec<T>,
    /// VE only: `sigma[t]` with `sigma[0] = 0`.
    sigma: Vec<T>,
    /// VP only: cumulative retention with `alpha_bar[0] = 1`.
    alpha_bar: Vec<T>,
    times: Vec<usize>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// VP schedule with `beta` rising linearly from `beta_lo` at `t = 1` to
    /// `beta_hi` at `t = T`, so the generative pass sees decreasing values.
    pub fn vp_linear(num_steps: usize, beta_lo: T, beta_hi: T) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::param("VP schedule needs at least two steps"));
        }
        if !(T::zero() < beta_lo && beta_lo < beta_hi && beta_hi < T::one()) {
            return Err(Error::param(format!(
                "beta range must satisfy 0 < lo < hi < 1, got lo={beta_lo}, hi={beta_hi}"
            )));
        }
        let span = T::of_usize(num_steps - 1);
        let betas: Vec<T> = (0..num_steps)
            .map(|i| beta_lo + (beta_hi - beta_lo) * T::of_usize(i) / span)
            .collect();
        Self::vp_from_betas(&betas)
    }

    /// VP schedule from explicit per-step betas (`betas[0]` is `beta_1`).
    pub fn vp_from_betas(betas: &[T]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("empty beta sequence"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b >= T::zero() && b < T::one())) {
            return Err(Error::param(format!("beta must lie in [0, 1), got {b}")));
        }
        let mut beta = Vec::with_capacity(betas.len() + 1);
        beta.push(T::zero());
        beta.extend_from_slice(betas);
        let mut alpha_bar = Vec::with_capacity(beta.len());
        alpha_bar.push(T::one());
        for &b in betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (T::one() - b));
        }
        Ok(Self {
            kind: ScheduleKind::Vp,
            times: (0..=betas.len()).rev().collect(),
            beta,
            sigma: Vec::new(),
            alpha_bar,
        })
    }

    /// VE schedule `sigma_{t_i} = t_i` with the 1/7-power interpolation
    /// between `t_min` (at `i = 1`) and `t_max` (at `i = T`).
    pub fn ve_power(t_max: T, t_min: T, num_steps: usize) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::param("power schedule needs at least two steps"));
        }
        if !(T::zero() < t_min && t_min < t_max) {
            return Err(Error::param(format!(
                "power schedule needs 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}"
            )));
        }
        let sigmas: Vec<T> = (1..=num_steps)
            .map(|i| power_interp(t_max, t_min, num_steps, i))
            .collect();
        Self::ve_from_sigmas(&sigmas)
    }

    /// VE schedule from explicit noise levels (`sigmas[0]` is `sigma_1`).
    pub fn ve_from_sigmas(sigmas: &[T]) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::param("empty sigma sequence"));
        }
        let mut sigma = Vec::with_capacity(sigmas.len() + 1);
        sigma.push(T::zero());
        sigma.extend_from_slice(sigmas);
        if sigma.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::param("sigma must be finite and strictly increasing from 0"));
        }
        let mut beta = vec![T::zero()];
        beta.extend(sigma.windows(2).map(|w| w[1] * w[1] - w[0] * w[0]));
        Ok(Self {
            kind: ScheduleKind::Ve,
            times: (0..=sigmas.len()).rev().collect(),
            beta,
            sigma,
            alpha_bar: Vec::new(),
        })
    }

    /// Restricts generation to `steps` evenly spaced indices between `T` and 0
    /// (both included).
    pub fn with_ddim_steps(mut self, steps: usize) -> Result<Self> {
        let t_max = self.num_steps();
        if steps == 0 || steps > t_max {
            return Err(Error::param(format!(
                "DDIM step count must be in 1..={t_max}, got {steps}"
            )));
        }
        let mut times: Vec<usize> = (0..=steps)
            .rev()
            .map(|k| ((k as f64) * (t_max as f64) / (steps as f64)).round() as usize)
            .collect();
        times.dedup();
        self.times = times;
        Ok(self)
    }

    /// Uses an explicit generation subsequence. It must be strictly decreasing,
    /// within range, and end at 0.
    pub fn with_times(mut self, times: Vec<usize>) -> Result<Self> {
        let ok = times.last() == Some(&0)
            && times.windows(2).all(|w| w[0] > w[1])
            && times[0] <= self.num_steps();
        if !ok {
            return Err(Error::param(
                "times must be strictly decreasing, within the schedule, and end at 0",
            ));
        }
        self.times = times;
        Ok(self)
    }

    #[inline]
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of forward steps `T`.
    #[inline]
    pub fn num_steps(&self) -> usize {
        self.beta.len() - 1
    }

    #[inline]
    pub fn times(&self) -> &[usize] {
        &self.times
    }

    #[inline]
    pub fn beta(&self, t: usize) -> T {
        self.beta[t]
    }

    pub fn betas(&self) -> &[T] {
        &self.beta[1..]
    }

    /// `alpha_bar_t` (VP). For VE this is 1 at every level.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> T {
        match self.kind {
            ScheduleKind::Vp => self.alpha_bar[t],
            ScheduleKind::Ve => T::one(),
        }
    }

    /// `sigma_t` (VE). For VP this is `sqrt(1 - alpha_bar_t)`.
    #[inline]
    pub fn sigma(&self, t: usize) -> T {
        match self.kind {
            ScheduleKind::Ve => self.sigma[t],
            ScheduleKind::Vp => (T::one() - self.alpha_bar[t]).sqrt(),
        }
    }

    /// Mean scale of `q(x_t | x_0)`.
    #[inline]
    pub fn scale(&self, t: usize) -> T {
        match self.kind {
            ScheduleKind::Ve => T::one(),
            ScheduleKind::Vp => self.alpha_bar[t].sqrt(),
        }
    }

    /// Per-coordinate variance of `q(x_t | x_0)`.
    #[inline]
    pub fn variance(&self, t: usize) -> T {
        match self.kind {
            ScheduleKind::Ve => self.sigma[t] * self.sigma[t],
            ScheduleKind::Vp => T::one() - self.alpha_bar[t],
        }
    }

    /// `(scale, variance)` of the forward transition `q(x_to | x_from)` for
    /// `from < to`. Consecutive indices give `(sqrt(1 - beta), beta)` (VP) or
    /// `(1, beta)` (VE); longer jumps compose the skipped steps.
    pub fn transition(&self, from: usize, to: usize) -> (T, T) {
        debug_assert!(from < to);
        match self.kind {
            ScheduleKind::Ve => (T::one(), self.variance(to) - self.variance(from)),
            ScheduleKind::Vp => {
                let ratio = self.alpha_bar[to] / self.alpha_bar[from];
                (ratio.sqrt(), T::one() - ratio)
            }
        }
    }

    /// Position of `t` in [`Self::times`].
    pub fn position(&self, t: usize) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// The next larger level after `t` in the generation subsequence.
    pub fn next_time(&self, t: usize) -> Option<usize> {
        match self.position(t)? {
            0 => None,
            p => Some(self.times[p - 1]),
        }
    }

    /// Levels strictly below `t` in the generation subsequence, in decreasing
    /// order (always ending at 0 when `t > 0`).
    pub fn times_below(&self, t: usize) -> Vec<usize> {
        let mut below: Vec<usize> = self.times.iter().copied().filter(|&s| s < t).collect();
        if t > 0 && below.last() != Some(&0) {
            below.push(0);
        }
        below
    }

    /// Human-readable description of the beta orientation, echoed in run
    /// configuration output.
    pub fn orientation_note(&self) -> String {
        match self.kind {
            ScheduleKind::Vp => format!(
                "vp: beta_1={} rising to beta_T={} (T={}); generation sees decreasing beta",
                self.beta[1],
                self.beta[self.num_steps()],
                self.num_steps()
            ),
            ScheduleKind::Ve => format!(
                "ve: sigma_1={} rising to sigma_T={} (T={})",
                self.sigma[1],
                self.sigma[self.num_steps()],
                self.num_steps()
            ),
        }
    }
}

/// `(hi^(1/7) + (T - i)/(T - 1) * (lo^(1/7) - hi^(1/7)))^7`: equals `lo` at
/// `i = 1` and `hi` at `i = T`.
pub fn power_interp<T: Scalar>(hi: T, lo: T, num_steps: usize, i: usize) -> T {
    let seventh = T::one() / T::of(7.0);
    let frac = T::of_usize(num_steps - i) / T::of_usize(num_steps - 1);
    let (a, b) = (hi.powf(seventh), lo.powf(seventh));
    (a + frac * (b - a)).powi(7)
}
