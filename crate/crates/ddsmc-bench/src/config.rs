//! Experiment configuration, read from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use ddsmc::metrics::{DEFAULT_PROJECTIONS, DEFAULT_PROJECTION_SEED};
use ddsmc::schedule::NoiseSchedule;
use ddsmc::{DdsmcConfig, LambdaMode, Reconstruction, RhoMode};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DDSMC_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Gmm,
    D3smc,
    PriorRecovery,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Gmm => "gmm",
            Task::D3smc => "d3smc",
            Task::PriorRecovery => "prior-recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    Tweedie,
    Ode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Vp,
    Ve,
}

/// Training-time noise schedule; the sampler visits `steps` evenly spaced
/// levels of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub train_steps: usize,
    /// VP: per-step noise variance at the first and last training step.
    pub beta_start: f64,
    pub beta_end: f64,
    /// VE: noise scale at the last and first training step.
    pub sigma_max: f64,
    pub sigma_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Vp,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_max: 80.0,
            sigma_min: 0.002,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, steps: usize) -> anyhow::Result<NoiseSchedule<f64>> {
        let full = match self.kind {
            ScheduleKind::Vp => {
                NoiseSchedule::vp_linear(self.train_steps, self.beta_start, self.beta_end)?
            }
            ScheduleKind::Ve => {
                NoiseSchedule::ve_power(self.sigma_max, self.sigma_min, self.train_steps)?
            }
        };
        Ok(full.with_ddim_steps(steps)?)
    }
}

/// Settings of the discrete toy problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscreteConfig {
    pub num_vars: usize,
    pub states: usize,
    /// Strength of the nearest-neighbour agreement term of the toy prior.
    pub coupling: f64,
    pub prior_seed: u64,
    /// Noise level of the measurement channel; 1 makes it uninformative.
    pub beta_y: f64,
    /// Per-step noise levels, `noise_steps` of them, interpolated linearly.
    pub noise_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Independent ensembles per seed.
    pub runs: usize,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        Self {
            num_vars: 4,
            states: 3,
            coupling: 1.0,
            prior_seed: 0,
            beta_y: 0.6,
            noise_steps: 50,
            beta_start: 0.01,
            beta_end: 0.2,
            runs: 400,
        }
    }
}

impl DiscreteConfig {
    pub fn betas(&self) -> Vec<f64> {
        let n = self.noise_steps;
        (0..n)
            .map(|i| {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                self.beta_start + frac * (self.beta_end - self.beta_start)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub d_x: usize,
    pub d_y: usize,
    pub eta: f64,
    pub recon: ReconKind,
    /// Particle count.
    #[serde(alias = "N")]
    pub particles: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub sigma_y: f64,
    pub schedule: ScheduleConfig,
    pub rho: RhoMode,
    pub lambda_mode: LambdaMode,
    /// Sampler output collected per seed before scoring.
    pub samples_per_seed: usize,
    /// Draws taken from each run's final weighted ensemble; 0 means one per
    /// particle.
    pub draws_per_run: usize,
    pub swd_projections: usize,
    pub metric_seed: u64,
    pub output_dir: PathBuf,
    pub discrete: DiscreteConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Gmm,
            d_x: 8,
            d_y: 4,
            eta: 1.0,
            recon: ReconKind::Tweedie,
            particles: 256,
            steps: 20,
            seeds: (0..20).collect(),
            sigma_y: 1.0,
            schedule: ScheduleConfig::default(),
            rho: RhoMode::default(),
            lambda_mode: LambdaMode::default(),
            samples_per_seed: 10_000,
            draws_per_run: 0,
            swd_projections: DEFAULT_PROJECTIONS,
            metric_seed: DEFAULT_PROJECTION_SEED,
            output_dir: default_output_dir(),
            discrete: DiscreteConfig::default(),
        }
    }
}

/// `$DDSMC_OUTPUT_DIR`, or `results` in the working directory.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        let mut cfg = Self {
            task,
            ..Self::default()
        };
        if task == Task::PriorRecovery {
            cfg.d_x = 2;
            cfg.d_y = 1;
            cfg.sigma_y = 1e6;
            // Small enough that the matched proposal never needs clamping.
            cfg.rho = RhoMode::Constant { rho: 0.01 };
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn reconstruction(&self) -> Reconstruction {
        match self.recon {
            ReconKind::Tweedie => Reconstruction::Tweedie,
            ReconKind::Ode => Reconstruction::Ode { max_steps: None },
        }
    }

    pub fn sampler_config(&self) -> DdsmcConfig {
        DdsmcConfig {
            eta: self.eta,
            recon: self.reconstruction(),
            num_particles: self.particles,
            rho: self.rho,
            lambda_mode: self.lambda_mode,
        }
    }

    pub fn draws(&self) -> usize {
        if self.draws_per_run == 0 {
            self.particles
        } else {
            self.draws_per_run
        }
    }

    /// Checks every field the task uses, so that a bad value fails before
    /// any run starts.
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        ensure!(sorted.len() == self.seeds.len(), "seeds must be distinct");
        ensure!(self.particles > 0, "particle count must be positive");
        ensure!(self.swd_projections > 0, "swd_projections must be positive");
        match self.task {
            Task::Gmm | Task::PriorRecovery => {
                ensure!(
                    self.d_x > 0 && self.d_y > 0 && self.d_y <= self.d_x,
                    "need 0 < d_y <= d_x, got d_x={} d_y={}",
                    self.d_x,
                    self.d_y
                );
                ensure!(
                    (0.0..=1.0).contains(&self.eta),
                    "eta must lie in [0, 1], got {}",
                    self.eta
                );
                ensure!(
                    self.sigma_y >= 0.0,
                    "sigma_y must be non-negative, got {}",
                    self.sigma_y
                );
                ensure!(self.samples_per_seed > 0, "samples_per_seed must be positive");
                ensure!(
                    self.steps >= 1 && self.steps <= self.schedule.train_steps,
                    "steps must lie in [1, {}]",
                    self.schedule.train_steps
                );
                // Surfaces schedule and rho errors now rather than mid-run.
                let sched = self.schedule.build(self.steps)?;
                ddsmc::ddsmc::rho_schedule(&sched, self.rho)?;
            }
            Task::D3smc => {
                let d = &self.discrete;
                ddsmc::discrete::ToyDiscretePrior::uniform(d.num_vars, d.states)?;
                ensure!(
                    (0.0..=1.0).contains(&d.beta_y),
                    "beta_y must lie in [0, 1]"
                );
                ensure!(d.noise_steps > 0, "noise_steps must be positive");
                ensure!(d.runs > 0, "runs must be positive");
                for b in [d.beta_start, d.beta_end] {
                    if !(0.0..=1.0).contains(&b) {
                        bail!("discrete betas must lie in [0, 1], got {b}");
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig {
            seeds: vec![3, 1],
            eta: 0.5,
            recon: ReconKind::Ode,
            rho: RhoMode::PowerInterp {
                rho_max: 5.0,
                rho_min: 0.1,
            },
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "task = \"gmm\"\nN = 16\nseeds = [4]\n[schedule]\ntrain_steps = 500\n",
        )
        .unwrap();
        assert_eq!(cfg.particles, 16);
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.schedule.train_steps, 500);
        assert_eq!(cfg.schedule.beta_end, 0.02);
        assert_eq!(cfg.d_x, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("particle = 3\n").is_err());
    }

    #[test]
    fn validation_catches_bad_fields() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            ExperimentConfig { d_y: 9, ..ok.clone() },
            ExperimentConfig { eta: 1.5, ..ok.clone() },
            ExperimentConfig { seeds: vec![], ..ok.clone() },
            ExperimentConfig { seeds: vec![1, 1], ..ok.clone() },
            ExperimentConfig { steps: 5000, ..ok.clone() },
            ExperimentConfig { particles: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn discrete_betas_interpolate() {
        let d = DiscreteConfig {
            noise_steps: 3,
            beta_start: 0.1,
            beta_end: 0.3,
            ..DiscreteConfig::default()
        };
        let b = d.betas();
        assert_eq!(b.len(), 3);
        assert!((b[1] - 0.2).abs() < 1e-15);
    }
}
