//! Seeded benchmark pipelines.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use ddsmc::ddsmc::Ddsmc;
use ddsmc::discrete::{brute_force_posterior, run_d3smc, ToyDiscretePrior, UniformKernel};
use ddsmc::gmm::{GmmProblem, GmmScore, ProblemSpec};
use ddsmc::metrics::{sliced_wasserstein, tv_distance};
use ddsmc::rng::{derive_seed, substream, Domain};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ExperimentConfig, ReconKind, Task};
use crate::results::{ResultRow, ResultSink, SCHEMA_VERSION};

/// The problem solved for `seed`, with the configured dimensions and noise.
pub fn gmm_problem(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<GmmProblem<f64>> {
    let spec = ProblemSpec {
        sigma_y: cfg.sigma_y,
        ..ProblemSpec::new(cfg.d_x, cfg.d_y)
    };
    Ok(spec.generate(seed)?)
}

/// Sampler output for one problem, collected over independent runs until
/// `samples_per_seed` draws are available. Returns the draws and the smallest
/// ESS seen in any run.
pub fn gmm_samples(
    cfg: &ExperimentConfig,
    problem: &GmmProblem<f64>,
    seed: u64,
) -> anyhow::Result<(Vec<Vec<f64>>, f64)> {
    let sched = cfg.schedule.build(cfg.steps)?;
    let score = GmmScore {
        prior: problem.prior.clone(),
        sched: sched.clone(),
    };
    let sampler = Ddsmc::new(score, &problem.model, &problem.y, sched, &cfg.sampler_config())?;
    let draws = cfg.draws();
    let mut samples = Vec::with_capacity(cfg.samples_per_seed);
    let mut ess_min = f64::INFINITY;
    let mut run = 0u64;
    while samples.len() < cfg.samples_per_seed {
        let run_seed = derive_seed(seed, run);
        let out = sampler.run(cfg.particles, run_seed)?;
        ess_min = out.trace.iter().map(|r| r.ess).fold(ess_min, f64::min);
        let k = draws.min(cfg.samples_per_seed - samples.len());
        samples.extend(out.resample(k, run_seed));
        run += 1;
    }
    Ok((samples, ess_min))
}

/// Reference draws the sampler output is scored against: the exact posterior,
/// or the prior for the prior-recovery task.
pub fn reference_samples(
    cfg: &ExperimentConfig,
    problem: &GmmProblem<f64>,
    seed: u64,
) -> anyhow::Result<Vec<Vec<f64>>> {
    let n = cfg.samples_per_seed;
    Ok(match cfg.task {
        Task::PriorRecovery => {
            let mut rng = substream(seed, 0, Domain::ExactSample, 0);
            (0..n).map(|_| problem.prior.sample(&mut rng)).collect()
        }
        _ => problem.exact_posterior()?.sample(n, seed),
    })
}

fn recon_label(r: ReconKind) -> &'static str {
    match r {
        ReconKind::Tweedie => "tweedie",
        ReconKind::Ode => "ode",
    }
}

/// One continuous-task row.
pub fn run_gmm_seed(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<ResultRow> {
    let start = Instant::now();
    let problem = gmm_problem(cfg, seed)?;
    let (samples, ess_min) = gmm_samples(cfg, &problem, seed)?;
    let reference = reference_samples(cfg, &problem, seed)?;
    let swd = sliced_wasserstein(&samples, &reference, cfg.swd_projections, cfg.metric_seed)?;
    Ok(ResultRow {
        schema_version: SCHEMA_VERSION,
        task: cfg.task.label().into(),
        seed,
        d_x: cfg.d_x,
        d_y: cfg.d_y,
        eta: cfg.eta,
        recon: recon_label(cfg.recon).into(),
        n: cfg.particles,
        steps: cfg.steps,
        sigma_y: cfg.sigma_y,
        metric: "swd".into(),
        value: swd,
        swd_projections: cfg.swd_projections,
        metric_seed: cfg.metric_seed,
        num_samples: samples.len(),
        ess_min,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// The discrete toy problem for `seed`: the shared prior, a ground truth drawn
/// from it, and its observation through the channel.
pub fn discrete_problem(
    cfg: &ExperimentConfig,
    seed: u64,
) -> anyhow::Result<(ToyDiscretePrior, Vec<usize>, UniformKernel<f64>)> {
    let d = &cfg.discrete;
    let prior = ToyDiscretePrior::neighbor_coupled(d.num_vars, d.states, d.coupling, d.prior_seed)?;
    let channel = UniformKernel::new(d.states, d.beta_y)?;
    let mut rng = substream(seed, 1, Domain::Problem, 0);
    let x_star = prior.sample(&mut rng);
    let y = x_star
        .iter()
        .map(|&v| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            (0..d.states)
                .find(|&k| {
                    acc += channel.entry(v, k);
                    u < acc
                })
                .unwrap_or(d.states - 1)
        })
        .collect();
    Ok((prior, y, channel))
}

/// One discrete-task row: TV distance between the pooled weighted ensembles
/// and the enumerated posterior.
pub fn run_d3smc_seed(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<ResultRow> {
    let start = Instant::now();
    let d = &cfg.discrete;
    let (prior, y, channel) = discrete_problem(cfg, seed)?;
    let hist = run_d3smc(&prior, &y, channel, &d.betas(), cfg.particles, d.runs, seed)?;
    let exact = brute_force_posterior(&prior, &y, &channel)?;
    Ok(ResultRow {
        schema_version: SCHEMA_VERSION,
        task: cfg.task.label().into(),
        seed,
        d_x: d.num_vars,
        d_y: d.num_vars,
        eta: 0.0,
        recon: "exact".into(),
        n: cfg.particles,
        steps: d.noise_steps,
        sigma_y: d.beta_y,
        metric: "tv".into(),
        value: tv_distance(&hist, &exact)?,
        swd_projections: cfg.swd_projections,
        metric_seed: cfg.metric_seed,
        num_samples: cfg.particles * d.runs,
        ess_min: f64::NAN,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<ResultRow> {
    match cfg.task {
        Task::Gmm | Task::PriorRecovery => run_gmm_seed(cfg, seed),
        Task::D3smc => run_d3smc_seed(cfg, seed),
    }
}

/// CSV file a config's rows go to inside its output directory.
pub fn results_path(cfg: &ExperimentConfig) -> PathBuf {
    let name = match cfg.task {
        Task::D3smc => format!(
            "d3smc_D{}_d{}_betay{}_n{}.csv",
            cfg.discrete.num_vars, cfg.discrete.states, cfg.discrete.beta_y, cfg.particles
        ),
        _ => format!(
            "{}_dx{}_dy{}_eta{}_{}_n{}_steps{}.csv",
            cfg.task.label(),
            cfg.d_x,
            cfg.d_y,
            cfg.eta,
            recon_label(cfg.recon),
            cfg.particles,
            cfg.steps
        ),
    };
    cfg.output_dir.join(name)
}

/// Runs every seed without a row in the results file yet and returns all
/// rows for the configured seeds, in config order.
pub fn run_benchmark(cfg: &ExperimentConfig) -> anyhow::Result<Vec<ResultRow>> {
    cfg.validate()?;
    let path = results_path(cfg);
    let mut sink = ResultSink::open(&path)?;
    for &seed in &cfg.seeds {
        if sink.has_seed(seed) {
            log::info!("seed {seed} already in {}, skipping", path.display());
            continue;
        }
        let row = run_seed(cfg, seed).with_context(|| format!("seed {seed}"))?;
        log::info!("seed {seed}: {} = {:.4}", row.metric, row.value);
        sink.push(row)?;
    }
    Ok(cfg
        .seeds
        .iter()
        .filter_map(|s| sink.rows().iter().find(|r| r.seed == *s).cloned())
        .collect())
}

/// Largest relative discrepancy, with a unit floor on the denominator,
/// between the proposal and the prior kernel at every positive level and
/// every `eta` in the grid, for a problem with the configured noise.
pub fn proposal_prior_gap(cfg: &ExperimentConfig, etas: &[f64], seed: u64) -> anyhow::Result<f64> {
    let problem = gmm_problem(cfg, seed)?;
    let sched = cfg.schedule.build(cfg.steps)?;
    let levels: Vec<usize> = sched.times()[1..sched.times().len() - 1].to_vec();
    let mut rng = substream(seed, 2, Domain::Aux, 0);
    let mut gap: f64 = 0.0;
    for &eta in etas {
        let sampler_cfg = ddsmc::DdsmcConfig {
            eta,
            ..cfg.sampler_config()
        };
        let score = GmmScore {
            prior: problem.prior.clone(),
            sched: sched.clone(),
        };
        let sampler = Ddsmc::new(score, &problem.model, &problem.y, sched.clone(), &sampler_cfg)?;
        for &t in &levels {
            let x_next: Vec<f64> = (0..cfg.d_x).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x0hat: Vec<f64> = (0..cfg.d_x)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 * z })
                .collect();
            let prop = sampler.proposal(&x_next, &x0hat, t)?;
            let prior = sampler.prior_kernel(&x_next, &x0hat, t)?;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
            for (a, b) in prop.mean.iter().zip(&prior.mean) {
                gap = gap.max(rel(*a, *b));
            }
            for (a, b) in prop.var.iter().zip(&prior.var) {
                gap = gap.max((a - b).abs() / b);
            }
        }
    }
    Ok(gap)
}
