//! Decoupled diffusion SMC for linear-Gaussian measurements.
//!
//! Particles live in the whitened basis of the operator (see
//! [`crate::measurement`]) so every likelihood, posterior and proposal is a
//! diagonal Gaussian. The score is queried in the original basis.

use serde::{Deserialize, Serialize};

use crate::diffusion::{check_eta, Reconstruction, ScoreSource, TemperedKernel};
use crate::gaussian::DiagGaussian;
use crate::linalg::Matrix;
use crate::measurement::{approx_loglik, posterior_x0, unwhiten, whiten, MeasurementModel, WhitenedMeasurement};
use crate::rng::{substream, Domain, StreamRng};
use crate::schedule::{power_interp, NoiseSchedule, ScheduleKind};
use crate::smc::{categorical_index, cumulative_sum, run_smc, SmcKernel, TraceRow};
use crate::{Error, Result, Scalar};

/// Variance added on top of the pushed-forward posterior in the proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Chosen so the proposal equals the prior transition when the
    /// measurement is uninformative.
    #[default]
    Matched,
    /// The full forward variance at the target level.
    DapsStyle,
}

/// Standard deviation `rho_t` of the Gaussian stand-in for `p(x_0 | x_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RhoMode {
    /// `rho_t^2 = var_t / sqrt(2)`.
    GmmDefault,
    /// Seventh-power interpolation from `rho_min` at `t = 1` to `rho_max` at `t = T`.
    PowerInterp { rho_max: f64, rho_min: f64 },
    /// The same value at every positive level.
    Constant { rho: f64 },
}

impl Default for RhoMode {
    fn default() -> Self {
        RhoMode::GmmDefault
    }
}

/// `rho_t` for `t = 0..=T`, with `rho_0 = 0`.
pub fn rho_schedule<T: Scalar>(sched: &NoiseSchedule<T>, mode: RhoMode) -> Result<Vec<T>> {
    let n = sched.num_steps();
    let mut rho: Vec<T> = (0..=n)
        .map(|t| match mode {
            RhoMode::GmmDefault => (sched.variance(t) / T::of(std::f64::consts::SQRT_2)).sqrt(),
            RhoMode::PowerInterp { rho_max, rho_min } => {
                power_interp(T::of(rho_max), T::of(rho_min), n, t.max(1))
            }
            RhoMode::Constant { rho } => T::of(rho),
        })
        .collect();
    rho[0] = T::zero();
    if let RhoMode::PowerInterp { rho_max, rho_min } = mode {
        if !(rho_min > 0.0 && rho_max >= rho_min) {
            return Err(Error::param(format!(
                "rho interpolation needs 0 < rho_min <= rho_max, got {rho_min}, {rho_max}"
            )));
        }
    }
    if let Some(t) = (1..=n).find(|&t| !(rho[t] >= T::zero()) || !rho[t].is_finite()) {
        return Err(Error::param(format!("rho_{t} = {} is invalid", rho[t])));
    }
    Ok(rho)
}

/// Extra proposal variance for moving from `t_next` to `t`.
///
/// `Matched` gives `var - c^2 rho_next^2` where `(c, var)` are the `x_0`
/// coefficient and variance of the tempered prior kernel, clamped at 0. The
/// returned flag reports whether clamping happened.
pub fn lambda_sq<T: Scalar>(
    kernel: &TemperedKernel<T>,
    forward_var: T,
    rho_next: T,
    mode: LambdaMode,
) -> (T, bool) {
    match mode {
        LambdaMode::DapsStyle => (forward_var, false),
        LambdaMode::Matched => {
            let c = kernel.x0_coef;
            let l2 = kernel.var - c * c * rho_next * rho_next;
            if l2 < T::zero() {
                (T::zero(), true)
            } else {
                (l2, false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdsmcConfig {
    pub eta: f64,
    pub recon: Reconstruction,
    pub num_particles: usize,
    pub rho: RhoMode,
    pub lambda_mode: LambdaMode,
}

impl Default for DdsmcConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            recon: Reconstruction::Tweedie,
            num_particles: 256,
            rho: RhoMode::GmmDefault,
            lambda_mode: LambdaMode::Matched,
        }
    }
}

/// Per-step quantities that do not depend on the particle.
#[derive(Debug, Clone)]
struct StepPlan<T> {
    t: usize,
    t_next: usize,
    kernel: TemperedKernel<T>,
    lambda_sq: T,
}

/// A particle in whitened coordinates with the caches its next weight needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DdsmcParticle<T> {
    pub x: Vec<T>,
    /// Reconstruction of `x_0` from `x`, filled when the particle is weighed.
    pub x0hat: Option<Vec<T>>,
    /// `log p~(y | x)` at the current level.
    pub approx_loglik: Option<T>,
    /// `log p~(y | x_prev)` of the parent, carried from the previous level.
    pub parent_loglik: Option<T>,
    /// `log p^eta(x | parent) - log r(x | parent, y)`.
    pub transition_log_ratio: T,
}

impl<T: Scalar> DdsmcParticle<T> {
    fn fresh(x: Vec<T>, parent_loglik: Option<T>, transition_log_ratio: T) -> Self {
        Self {
            x,
            x0hat: None,
            approx_loglik: None,
            parent_loglik,
            transition_log_ratio,
        }
    }
}

/// The decoupled sampler as an [`SmcKernel`].
pub struct Ddsmc<T, S> {
    score: S,
    sched: NoiseSchedule<T>,
    whitened: WhitenedMeasurement<T>,
    rho: Vec<T>,
    eta: T,
    recon: Reconstruction,
    lambda_mode: LambdaMode,
    plan: Vec<StepPlan<T>>,
    identity_basis: bool,
}

impl<T: Scalar, S: ScoreSource<T>> Ddsmc<T, S> {
    pub fn new(
        score: S,
        model: &MeasurementModel<T>,
        y: &[T],
        sched: NoiseSchedule<T>,
        cfg: &DdsmcConfig,
    ) -> Result<Self> {
        let eta = T::of(cfg.eta);
        check_eta(eta)?;
        if score.dim() != model.d_x() {
            return Err(Error::DimensionMismatch {
                expected: model.d_x(),
                found: score.dim(),
            });
        }
        let whitened = whiten(model, y)?;
        let rho = rho_schedule(&sched, cfg.rho)?;
        for &t in sched.times().iter().filter(|&&t| t > 0) {
            if rho[t] == T::zero() && whitened.sigma_y == T::zero() {
                return Err(Error::param(format!(
                    "rho_{t} = 0 with a noiseless measurement leaves the likelihood undefined"
                )));
            }
        }

        let times = sched.times();
        let mut plan = Vec::with_capacity(times.len().saturating_sub(2));
        let mut clamped = Vec::new();
        for w in times.windows(2).filter(|w| w[1] > 0) {
            let (t_next, t) = (w[0], w[1]);
            let kernel = TemperedKernel::new(&sched, t, t_next, eta)?;
            let (l2, hit) = lambda_sq(&kernel, sched.variance(t), rho[t_next], cfg.lambda_mode);
            if hit {
                clamped.push(t);
            }
            plan.push(StepPlan {
                t,
                t_next,
                kernel,
                lambda_sq: l2,
            });
        }
        if !clamped.is_empty() {
            log::warn!(
                "proposal variance excess clamped at 0 at levels {clamped:?}: rho exceeds the prior kernel spread"
            );
        }

        let identity_basis = whitened.v == Matrix::identity(model.d_x());
        Ok(Self {
            score,
            sched,
            whitened,
            rho,
            eta,
            recon: cfg.recon,
            lambda_mode: cfg.lambda_mode,
            plan,
            identity_basis,
        })
    }

    pub fn whitened(&self) -> &WhitenedMeasurement<T> {
        &self.whitened
    }

    pub fn schedule(&self) -> &NoiseSchedule<T> {
        &self.sched
    }

    pub fn rho(&self) -> &[T] {
        &self.rho
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn lambda_mode(&self) -> LambdaMode {
        self.lambda_mode
    }

    fn to_original(&self, x: &[T]) -> Vec<T> {
        if self.identity_basis {
            x.to_vec()
        } else {
            unwhiten(x, &self.whitened)
        }
    }

    fn to_whitened(&self, x: &[T]) -> Vec<T> {
        if self.identity_basis {
            x.to_vec()
        } else {
            self.whitened.to_whitened(x)
        }
    }

    /// Reconstruction of `x_0` from a whitened state at level `t`, returned in
    /// whitened coordinates.
    pub fn reconstruct(&self, x: &[T], t: usize) -> Vec<T> {
        let orig = self.to_original(x);
        let x0 = self.recon.reconstruct(&self.score, &orig, t, &self.sched);
        self.to_whitened(&x0)
    }

    /// `log p~(y | x_t)` given the reconstruction at level `t`.
    pub fn approx_loglik(&self, x0hat: &[T], t: usize) -> Result<T> {
        approx_loglik(&self.whitened.y_prime, x0hat, self.rho[t], &self.whitened)
    }

    /// `N(mu~, M^-1)` built from the reconstruction at level `t_next`.
    pub fn x0_posterior(&self, x0hat: &[T], t_next: usize) -> Result<DiagGaussian<T>> {
        posterior_x0(
            &self.whitened.y_prime,
            x0hat,
            self.rho[t_next],
            &self.whitened.s,
            self.whitened.sigma_y,
        )
    }

    fn plan_for(&self, t: usize) -> Result<&StepPlan<T>> {
        self.plan
            .iter()
            .find(|p| p.t == t)
            .ok_or_else(|| Error::param(format!("level {t} is not a positive level of the schedule")))
    }

    /// Proposal `r_t(x_t | x_next, y)` for a positive target level `t`, with
    /// `x0hat` the reconstruction from `x_next`.
    ///
    /// Mean `c mu~ + e x_next`, per-coordinate variance `lambda^2 + c^2 M^-1`,
    /// where `(c, e)` are the tempered prior kernel's coefficients.
    pub fn proposal(&self, x_next: &[T], x0hat: &[T], t: usize) -> Result<DiagGaussian<T>> {
        let plan = self.plan_for(t)?;
        let post = self.x0_posterior(x0hat, plan.t_next)?;
        let k = &plan.kernel;
        let mean = k.mean(&post.mean, x_next);
        let var = post
            .var
            .iter()
            .map(|&m| plan.lambda_sq + k.x0_coef * k.x0_coef * m)
            .collect();
        DiagGaussian::new(mean, var)
    }

    /// The tempered prior kernel `p^eta(x_t | x_next)` with `x_0 := x0hat`.
    pub fn prior_kernel(&self, x_next: &[T], x0hat: &[T], t: usize) -> Result<DiagGaussian<T>> {
        let k = &self.plan_for(t)?.kernel;
        Ok(DiagGaussian::isotropic(k.mean(x0hat, x_next), k.var))
    }

    /// The deterministic last move: the posterior mean of `x_0` given the
    /// reconstruction at level 1 (the lowest positive level).
    pub fn proposal_t0(&self, x0hat: &[T]) -> Result<Vec<T>> {
        let t1 = self.lowest_level();
        Ok(self.x0_posterior(x0hat, t1)?.mean)
    }

    fn lowest_level(&self) -> usize {
        let times = self.sched.times();
        times[times.len() - 2]
    }

    /// Weighted final ensemble in the original basis.
    pub fn run(&self, num_particles: usize, seed: u64) -> Result<DdsmcOutput<T>> {
        let out = run_smc(self, num_particles, seed)?;
        let samples = out
            .ensemble
            .states
            .iter()
            .map(|p| self.to_original(&p.x))
            .collect();
        Ok(DdsmcOutput {
            samples,
            weights: out.weights,
            draw: out.draw,
            trace: out.trace,
        })
    }
}

impl<T: Scalar, S: ScoreSource<T>> SmcKernel for Ddsmc<T, S> {
    type Particle = DdsmcParticle<T>;

    fn times(&self) -> &[usize] {
        self.sched.times()
    }

    fn init(&self, rng: &mut StreamRng) -> Result<DdsmcParticle<T>> {
        let t_max = self.sched.times()[0];
        let sd = match self.sched.kind() {
            ScheduleKind::Vp => T::one(),
            ScheduleKind::Ve => self.sched.sigma(t_max),
        };
        let x = (0..self.whitened.d_x())
            .map(|_| sd * T::standard_normal(rng))
            .collect();
        Ok(DdsmcParticle::fresh(x, None, T::zero()))
    }

    fn log_weight(&self, step: usize, p: &mut DdsmcParticle<T>) -> Result<f64> {
        let t = self.sched.times()[step];
        if t == 0 {
            let parent = p
                .parent_loglik
                .ok_or(Error::Sequencing("final weight needs the parent likelihood"))?;
            let exact = if self.whitened.sigma_y == T::zero() {
                T::zero()
            } else {
                self.whitened.exact_loglik(&p.x)?
            };
            return Ok((exact - parent).as_f64());
        }
        let x0hat = self.reconstruct(&p.x, t);
        let l = self.approx_loglik(&x0hat, t)?;
        p.x0hat = Some(x0hat);
        p.approx_loglik = Some(l);
        if step == 0 {
            return Ok(l.as_f64());
        }
        let parent = p
            .parent_loglik
            .ok_or(Error::Sequencing("weight needs the parent likelihood"))?;
        Ok((l - parent + p.transition_log_ratio).as_f64())
    }

    fn propose(
        &self,
        step: usize,
        p: &DdsmcParticle<T>,
        rng: &mut StreamRng,
    ) -> Result<DdsmcParticle<T>> {
        let (x0hat, l) = match (&p.x0hat, p.approx_loglik) {
            (Some(x0hat), Some(l)) => (x0hat, l),
            _ => return Err(Error::Sequencing("proposal needs a weighed particle")),
        };
        let t = self.sched.times()[step + 1];
        if t == 0 {
            return Ok(DdsmcParticle::fresh(self.proposal_t0(x0hat)?, Some(l), T::zero()));
        }
        let r = self.proposal(&p.x, x0hat, t)?;
        let x = r.sample(rng);
        let prior = self.prior_kernel(&p.x, x0hat, t)?;
        let ratio = prior.log_pdf(&x) - r.log_pdf(&x);
        Ok(DdsmcParticle::fresh(x, Some(l), ratio))
    }
}

/// Result of a sampler run, in the original basis.
#[derive(Debug, Clone)]
pub struct DdsmcOutput<T> {
    pub samples: Vec<Vec<T>>,
    pub weights: Vec<f64>,
    /// Index of the single draw from the final weights.
    pub draw: usize,
    pub trace: Vec<TraceRow>,
}

impl<T: Scalar> DdsmcOutput<T> {
    pub fn drawn(&self) -> &[T] {
        &self.samples[self.draw]
    }

    /// `k` multinomial draws from the weighted ensemble.
    pub fn resample(&self, k: usize, seed: u64) -> Vec<Vec<T>> {
        let cumulative = cumulative_sum(&self.weights);
        let mut rng = substream(seed, 0, Domain::FinalDraw, 1);
        (0..k)
            .map(|_| {
                let i = categorical_index(&cumulative, rand::Rng::random::<f64>(&mut rng));
                self.samples[i].clone()
            })
            .collect()
    }

    /// Weighted mean of the ensemble.
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.samples[0].len()];
        for (w, s) in self.weights.iter().zip(&self.samples) {
            for (o, &v) in m.iter_mut().zip(s) {
                *o += T::of(*w) * v;
            }
        }
        m
    }
}

/// Runs the sampler with `cfg.num_particles` particles.
pub fn run_ddsmc<T: Scalar, S: ScoreSource<T>>(
    score: S,
    model: &MeasurementModel<T>,
    y: &[T],
    sched: NoiseSchedule<T>,
    cfg: &DdsmcConfig,
    seed: u64,
) -> Result<DdsmcOutput<T>> {
    Ddsmc::new(score, model, y, sched, cfg)?.run(cfg.num_particles, seed)
}
