//! Score sources, reconstructions of `x_0`, and the tempered backward kernel.

use serde::{Deserialize, Serialize};

use crate::gaussian::DiagGaussian;
use crate::scalar::ensure_len;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result, Scalar};

/// Approximation of `grad log q(x_t)`. Implementations must be pure and
/// return a vector of the input dimension.
pub trait ScoreSource<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[T], t: usize) -> Vec<T>;
}

impl<T: Scalar, S: ScoreSource<T> + ?Sized> ScoreSource<T> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score(&self, x: &[T], t: usize) -> Vec<T> {
        (**self).score(x, t)
    }
}

/// The score of a flat (improper) prior.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl<T: Scalar> ScoreSource<T> for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score(&self, x: &[T], _t: usize) -> Vec<T> {
        vec![T::zero(); x.len()]
    }
}

/// Wraps a closure `(x, t) -> score`.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> ScoreSource<T> for FnScore<F>
where
    T: Scalar,
    F: Fn(&[T], usize) -> Vec<T> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[T], t: usize) -> Vec<T> {
        (self.f)(x, t)
    }
}

/// How `x_0` is recovered from a noisy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Posterior mean from the score.
    Tweedie,
    /// Deterministic DDIM integration down to 0. `max_steps = None` uses every
    /// remaining level of the generation subsequence.
    Ode { max_steps: Option<usize> },
}

impl Reconstruction {
    /// Step cap used when none is configured outside the GMM setting.
    pub const DEFAULT_ODE_STEPS: usize = 5;

    pub fn reconstruct<T: Scalar, S: ScoreSource<T> + ?Sized>(
        &self,
        score: &S,
        x: &[T],
        t: usize,
        sched: &NoiseSchedule<T>,
    ) -> Vec<T> {
        match *self {
            Reconstruction::Tweedie => tweedie_reconstruct(score, x, t, sched),
            Reconstruction::Ode { max_steps } => {
                ode_reconstruct(score, x, t, sched, max_steps.unwrap_or(usize::MAX))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Reconstruction::Tweedie => "tweedie".into(),
            Reconstruction::Ode { max_steps: None } => "ode".into(),
            Reconstruction::Ode { max_steps: Some(k) } => format!("ode{k}"),
        }
    }
}

impl std::fmt::Display for Reconstruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Reconstruction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tweedie" => Ok(Reconstruction::Tweedie),
            "ode" => Ok(Reconstruction::Ode { max_steps: None }),
            other => match other.strip_prefix("ode").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => Ok(Reconstruction::Ode { max_steps: Some(k) }),
                _ => Err(Error::param(format!(
                    "unknown reconstruction '{s}' (expected tweedie, ode, or ode<N>)"
                ))),
            },
        }
    }
}

/// `E[x_0 | x_t] = (x + var_t * score) / scale_t`.
///
/// VE reduces to `x + sigma_t^2 * score`; VP to
/// `(x + (1 - alpha_bar_t) * score) / sqrt(alpha_bar_t)`.
pub fn tweedie_reconstruct<T: Scalar, S: ScoreSource<T> + ?Sized>(
    score: &S,
    x: &[T],
    t: usize,
    sched: &NoiseSchedule<T>,
) -> Vec<T> {
    let s = score.score(x, t);
    let (a, v) = (sched.scale(t), sched.variance(t));
    x.iter().zip(&s).map(|(&xi, &si)| (xi + v * si) / a).collect()
}

/// Runs the deterministic DDIM update from `t` down to 0 over at most
/// `max_steps` of the remaining generation levels and returns the terminal
/// state.
///
/// One update from level `t` to `s < t` is
/// `x_s = (a_s/a_t) x_t + (v_t a_s/a_t - sqrt(v_s v_t)) * score(x_t, t)`,
/// with `(a, v)` the forward scale and variance.
pub fn ode_reconstruct<T: Scalar, S: ScoreSource<T> + ?Sized>(
    score: &S,
    x: &[T],
    t: usize,
    sched: &NoiseSchedule<T>,
    max_steps: usize,
) -> Vec<T> {
    let targets = ode_targets(sched, t, max_steps);
    let mut cur = x.to_vec();
    let mut from = t;
    for to in targets {
        let s = score.score(&cur, from);
        let (a_t, v_t) = (sched.scale(from), sched.variance(from));
        let (a_s, v_s) = (sched.scale(to), sched.variance(to));
        let ratio = a_s / a_t;
        let coef = v_t * ratio - (v_s * v_t).sqrt();
        for (c, &si) in cur.iter_mut().zip(&s) {
            *c = ratio * *c + coef * si;
        }
        from = to;
    }
    cur
}

/// Levels visited by [`ode_reconstruct`]: all remaining subsequence levels
/// below `t`, or `max_steps` of them evenly spread when capped. The last
/// target is always 0.
pub(crate) fn ode_targets<T: Scalar>(
    sched: &NoiseSchedule<T>,
    t: usize,
    max_steps: usize,
) -> Vec<usize> {
    let below = sched.times_below(t);
    let n = below.len();
    if max_steps >= n || max_steps == 0 {
        return below;
    }
    (1..=max_steps)
        .map(|j| below[(j * n + max_steps - 1) / max_steps - 1])
        .collect()
}

/// Coefficients of the tempered backward kernel
/// `p^eta(x_t | x_next) = N(x0_coef * x0 + next_coef * x_next, var * I)`,
/// obtained from `q(x_next | x_t)^eta * q(x_t | x0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedKernel<T> {
    pub x0_coef: T,
    pub next_coef: T,
    pub var: T,
}

impl<T: Scalar> TemperedKernel<T> {
    /// With `(alpha, beta)` the forward transition from `t` to `t_next` and
    /// `(a_t, v_t)` the forward marginal at `t`:
    /// `D = eta * alpha^2 * v_t + beta`, `x0_coef = beta * a_t / D`,
    /// `next_coef = eta * alpha * v_t / D`, `var = beta * v_t / D`.
    pub fn new(sched: &NoiseSchedule<T>, t: usize, t_next: usize, eta: T) -> Result<Self> {
        check_eta(eta)?;
        if t_next <= t {
            return Err(Error::param(format!(
                "next level {t_next} must exceed current level {t}"
            )));
        }
        let (a_t, v_t) = (sched.scale(t), sched.variance(t));
        if eta == T::zero() {
            return Ok(Self {
                x0_coef: a_t,
                next_coef: T::zero(),
                var: v_t,
            });
        }
        let (alpha, beta) = sched.transition(t, t_next);
        let denom = eta * alpha * alpha * v_t + beta;
        if !(denom > T::zero()) {
            return Err(Error::param(format!(
                "degenerate transition between levels {t} and {t_next}"
            )));
        }
        Ok(Self {
            x0_coef: beta * a_t / denom,
            next_coef: eta * alpha * v_t / denom,
            var: beta * v_t / denom,
        })
    }

    pub fn mean(&self, x0: &[T], x_next: &[T]) -> Vec<T> {
        x0.iter()
            .zip(x_next)
            .map(|(&a, &b)| self.x0_coef * a + self.next_coef * b)
            .collect()
    }
}

pub(crate) fn check_eta<T: Scalar>(eta: T) -> Result<()> {
    if eta >= T::zero() && eta <= T::one() {
        Ok(())
    } else {
        Err(Error::param(format!("eta must lie in [0, 1], got {eta}")))
    }
}

/// `p^eta(x_t | x_next)` with `x_0 := x0hat`, where `x_next` sits at the next
/// larger level of the generation subsequence.
pub fn prior_transition<T: Scalar>(
    x_next: &[T],
    x0hat: &[T],
    t: usize,
    eta: T,
    sched: &NoiseSchedule<T>,
) -> Result<DiagGaussian<T>> {
    check_eta(eta)?;
    let t_next = sched
        .next_time(t)
        .ok_or_else(|| Error::param(format!("level {t} has no larger level in the schedule")))?;
    prior_transition_between(x_next, x0hat, t, t_next, eta, sched)
}

/// [`prior_transition`] with an explicit next level.
pub fn prior_transition_between<T: Scalar>(
    x_next: &[T],
    x0hat: &[T],
    t: usize,
    t_next: usize,
    eta: T,
    sched: &NoiseSchedule<T>,
) -> Result<DiagGaussian<T>> {
    ensure_len(x0hat.len(), x_next.len())?;
    let k = TemperedKernel::new(sched, t, t_next, eta)?;
    Ok(DiagGaussian::isotropic(k.mean(x0hat, x_next), k.var))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ve() -> NoiseSchedule<f64> {
        NoiseSchedule::ve_from_sigmas(&[1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn tweedie_zero_score_is_identity_ve() {
        let x = vec![1.5, -2.0];
        assert_eq!(tweedie_reconstruct(&ZeroScore(2), &x, 2, &ve()), x);
    }

    #[test]
    fn tweedie_vp_standard_normal() {
        let s = NoiseSchedule::vp_linear(50, 1e-3_f64, 0.05).unwrap();
        let score = FnScore::new(2, |x: &[f64], _t| x.iter().map(|v| -v).collect());
        let x = [0.7, -1.3];
        let t = 30;
        let r = tweedie_reconstruct(&score, &x, t, &s);
        let a = s.alpha_bar(t).sqrt();
        for k in 0..2 {
            assert!((r[k] - a * x[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn ode_zero_score_vp_telescopes() {
        let s = NoiseSchedule::vp_linear(100, 1e-3_f64, 0.05)
            .unwrap()
            .with_ddim_steps(10)
            .unwrap();
        let x = [0.3, -4.0];
        for t in [100, 50, 10] {
            let r = ode_reconstruct(&ZeroScore(2), &x, t, &s, usize::MAX);
            let a = s.alpha_bar(t).sqrt();
            for k in 0..2 {
                assert!((r[k] - x[k] / a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ode_single_step_is_one_update() {
        let s = NoiseSchedule::vp_from_betas(&[0.3_f64]).unwrap();
        let score = FnScore::new(1, |x: &[f64], _t| vec![2.0 - x[0]]);
        let x = [0.5];
        let r = ode_reconstruct(&score, &x, 1, &s, 20);
        let ab = 0.7_f64;
        let want = (1.0 / ab).sqrt() * 0.5 + (1.0 - ab) * (1.0 / ab).sqrt() * 1.5;
        assert!((r[0] - want).abs() < 1e-15);
    }

    #[test]
    fn ode_targets_respect_cap() {
        let s = NoiseSchedule::vp_linear(100, 1e-3_f64, 0.05)
            .unwrap()
            .with_ddim_steps(20)
            .unwrap();
        assert_eq!(ode_targets(&s, 100, usize::MAX).len(), 20);
        let capped = ode_targets(&s, 100, 5);
        assert_eq!(capped.len(), 5);
        assert_eq!(*capped.last().unwrap(), 0);
        assert!(capped.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(ode_targets(&s, 10, 5), vec![5, 0]);
    }

    #[test]
    fn decoupled_ve_transition() {
        let s = ve();
        let g = prior_transition(&[9.0, 9.0], &[1.0, -1.0], 2, 0.0, &s).unwrap();
        assert_eq!(g.mean, vec![1.0, -1.0]);
        assert_eq!(g.var, vec![4.0, 4.0]);
    }

    #[test]
    fn full_ve_transition_matches_explicit_form() {
        let s = ve();
        let (x0, xn) = (0.4, 2.5);
        let g = prior_transition(&[xn], &[x0], 2, 1.0, &s).unwrap();
        let (sig2, beta) = (4.0, 5.0);
        let mean = (beta * x0 + sig2 * xn) / (sig2 + beta);
        let var = beta * sig2 / (sig2 + beta);
        assert!((g.mean[0] - mean).abs() < 1e-15);
        assert!((g.var[0] - var).abs() < 1e-15);
    }

    #[test]
    fn decoupled_vp_transition() {
        let s = NoiseSchedule::vp_from_betas(&[0.5_f64, 0.5]).unwrap();
        let g = prior_transition(&[3.0], &[2.0], 2 - 1, 0.0, &s).unwrap();
        assert_eq!(g.mean, vec![2.0 * 0.5_f64.sqrt()]);
        assert_eq!(g.var, vec![0.5]);
        let g = prior_transition_between(&[3.0], &[2.0], 1, 2, 0.0, &s).unwrap();
        assert_eq!(g.var, vec![0.5]);
    }

    #[test]
    fn general_vp_transition_matches_explicit_form() {
        let s = NoiseSchedule::vp_from_betas(&[0.1_f64, 0.2, 0.3]).unwrap();
        let (eta, x0, xn) = (0.6, 0.8, -1.1);
        let t = 2;
        let g = prior_transition(&[xn], &[x0], t, eta, &s).unwrap();
        let (ab_t, ab_n, b) = (s.alpha_bar(2), s.alpha_bar(3), 0.3);
        let d = eta - eta * b - eta * ab_n + b;
        let mean = (ab_t.sqrt() * b * x0 + eta * (1.0 - b).sqrt() * (1.0 - ab_t) * xn) / d;
        let var = b * (1.0 - ab_t) / d;
        assert!((g.mean[0] - mean).abs() < 1e-14);
        assert!((g.var[0] - var).abs() < 1e-14);
    }

    #[test]
    fn eta_out_of_range_is_rejected() {
        assert!(prior_transition(&[0.0], &[0.0], 1, 1.5, &ve()).is_err());
        assert!(prior_transition(&[0.0], &[0.0], 1, -0.1, &ve()).is_err());
        assert!(prior_transition(&[0.0], &[0.0], 3, 0.5, &ve()).is_err());
    }

    #[test]
    fn reconstruction_parses() {
        assert_eq!("tweedie".parse::<Reconstruction>().unwrap(), Reconstruction::Tweedie);
        assert_eq!(
            "ode".parse::<Reconstruction>().unwrap(),
            Reconstruction::Ode { max_steps: None }
        );
        assert_eq!(
            "ode5".parse::<Reconstruction>().unwrap(),
            Reconstruction::Ode { max_steps: Some(5) }
        );
        assert!("euler".parse::<Reconstruction>().is_err());
    }
}
