use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ddsmc_bench::config::{ExperimentConfig, ReconKind, Task, OUTPUT_DIR_ENV};
use ddsmc_bench::results::{format_float, summarize, ResultRow};
use ddsmc_bench::runner::{gmm_problem, gmm_samples, proposal_prior_gap, run_benchmark};
use ddsmc_bench::scatter::export_scatter;

#[derive(Parser)]
#[command(name = "ddsmc", version, about = "Diffusion SMC posterior sampling benchmarks")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score the sampler against exact GMM posteriors.
    GmmBench {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        check: CheckArgs,
    },
    /// Check that an uninformative measurement gives back the prior.
    PriorCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        check: CheckArgs,
        /// Largest tolerated relative gap between proposal and prior kernel.
        #[arg(long, default_value_t = 1e-3)]
        max_gap: f64,
    },
    /// Score the discrete sampler against an enumerated posterior.
    D3smcBench {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        check: CheckArgs,
        #[arg(long)]
        num_vars: Option<usize>,
        #[arg(long)]
        states: Option<usize>,
        /// Channel noise level; 1 makes the observation uninformative.
        #[arg(long)]
        beta_y: Option<f64>,
        /// Independent ensembles per seed.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Draw posterior samples for one GMM problem and write them out.
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write this pair of coordinates as two-column plot data.
        #[arg(long, value_delimiter = ',', value_name = "I,J")]
        dims: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML file with experiment settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_x: Option<usize>,
    #[arg(long)]
    d_y: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum)]
    recon: Option<ReconKind>,
    /// Particle count.
    #[arg(short = 'N', long)]
    particles: Option<usize>,
    /// Generation steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated seeds, or a range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    sigma_y: Option<f64>,
    #[arg(long)]
    samples_per_seed: Option<usize>,
    /// Draws taken from each run's final ensemble; 0 means one per particle.
    #[arg(long)]
    draws_per_run: Option<usize>,
    #[arg(long)]
    swd_projections: Option<usize>,
    #[arg(long)]
    metric_seed: Option<u64>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Exit nonzero when the mean metric falls outside the expected range.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    expect_min: Option<f64>,
    #[arg(long)]
    expect_max: Option<f64>,
}

fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

impl CommonArgs {
    fn resolve(&self, task: Task) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path)?;
                if cfg.task != task {
                    bail!(
                        "{} configures task {:?} but the subcommand runs {:?}",
                        path.display(),
                        cfg.task,
                        task
                    );
                }
                cfg
            }
            None => ExperimentConfig::for_task(task),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(d_x => d_x, d_y => d_y, eta => eta, recon => recon, particles => particles,
             steps => steps, sigma_y => sigma_y, samples_per_seed => samples_per_seed,
             draws_per_run => draws_per_run, swd_projections => swd_projections, metric_seed => metric_seed,
             output_dir => output_dir);
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        Ok(cfg)
    }
}

fn echo(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    eprintln!("# configuration\n{}", cfg.to_toml_string());
    if cfg.task != Task::D3smc {
        eprintln!("# {}", cfg.schedule.build(cfg.steps)?.orientation_note());
    }
    Ok(())
}

fn report(rows: &[ResultRow], check: &CheckArgs, default_max: f64) -> anyhow::Result<bool> {
    let (mean, sd) = summarize(rows);
    let metric = rows.first().map_or("value", |r| r.metric.as_str());
    println!("{metric}: mean {mean:.4} sd {sd:.4} over {} seeds", rows.len());
    if !check.check {
        return Ok(true);
    }
    let lo = check.expect_min.unwrap_or(f64::NEG_INFINITY);
    let hi = check.expect_max.unwrap_or(default_max);
    let ok = mean >= lo && mean <= hi;
    if !ok {
        eprintln!("check failed: mean {metric} {mean:.4} outside [{lo}, {hi}]");
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GmmBench { common, check } => {
            let cfg = common.resolve(Task::Gmm)?;
            cfg.validate()?;
            echo(&cfg)?;
            let rows = run_benchmark(&cfg)?;
            report(&rows, &check, 0.35)
        }
        Command::PriorCheck {
            common,
            check,
            max_gap,
        } => {
            let cfg = common.resolve(Task::PriorRecovery)?;
            cfg.validate()?;
            echo(&cfg)?;
            let gap = proposal_prior_gap(&cfg, &[0.0, 0.25, 0.5, 0.75, 1.0], cfg.seeds[0])?;
            println!("proposal vs prior kernel: max relative gap {gap:.3e}");
            let rows = run_benchmark(&cfg)?;
            let swd_ok = report(&rows, &check, 0.15)?;
            let gap_ok = !check.check || gap <= max_gap;
            if !gap_ok {
                eprintln!("check failed: proposal gap {gap:.3e} exceeds {max_gap:.1e}");
            }
            Ok(swd_ok && gap_ok)
        }
        Command::D3smcBench {
            common,
            check,
            num_vars,
            states,
            beta_y,
            runs,
        } => {
            let mut cfg = common.resolve(Task::D3smc)?;
            let d = &mut cfg.discrete;
            d.num_vars = num_vars.unwrap_or(d.num_vars);
            d.states = states.unwrap_or(d.states);
            d.beta_y = beta_y.unwrap_or(d.beta_y);
            d.runs = runs.unwrap_or(d.runs);
            cfg.validate()?;
            echo(&cfg)?;
            let rows = run_benchmark(&cfg)?;
            report(&rows, &check, 0.05)
        }
        Command::Sample { common, dims } => {
            let cfg = common.resolve(Task::Gmm)?;
            cfg.validate()?;
            echo(&cfg)?;
            let seed = cfg.seeds[0];
            let problem = gmm_problem(&cfg, seed)?;
            let (samples, ess_min) = gmm_samples(&cfg, &problem, seed)?;
            std::fs::create_dir_all(&cfg.output_dir)
                .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
            let stem = format!("samples_dx{}_dy{}_seed{seed}", cfg.d_x, cfg.d_y);
            let csv_path = cfg.output_dir.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&csv_path)
                .with_context(|| format!("creating {}", csv_path.display()))?;
            w.write_record((0..cfg.d_x).map(|j| format!("x{j}")))?;
            for s in &samples {
                w.write_record(s.iter().map(|&v| format_float(v)))?;
            }
            w.flush()?;
            problem.save(&cfg.output_dir.join(format!("{stem}_problem.json")))?;
            println!(
                "wrote {} samples to {} (min ESS {ess_min:.1})",
                samples.len(),
                csv_path.display()
            );
            if let Some(d) = dims {
                if d.len() != 2 {
                    bail!("--dims takes two coordinate indices, got {}", d.len());
                }
                let path = cfg.output_dir.join(format!("{stem}_scatter_{}_{}.txt", d[0], d[1]));
                export_scatter(&samples, (d[0], d[1]), &path)?;
                println!("wrote plot data to {}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
