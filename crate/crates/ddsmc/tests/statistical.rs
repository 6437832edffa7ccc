//! Distribution-level checks scored by sliced Wasserstein distance.

use ddsmc::ddsmc::{rho_schedule, Ddsmc};
use ddsmc::diffusion::{ode_reconstruct, prior_transition_between, ScoreSource};
use ddsmc::gmm::{GmmPrior, GmmScore, ProblemSpec};
use ddsmc::measurement::{posterior_x0, unwhiten, whiten};
use ddsmc::metrics::sliced_wasserstein;
use ddsmc::rng::{substream, Domain};
use ddsmc::schedule::NoiseSchedule;
use ddsmc::{DdsmcConfig, LambdaMode, Problem, Reconstruction, RhoMode, Scalar};

const SAMPLES: usize = 10_000;

fn vp20() -> NoiseSchedule<f64> {
    NoiseSchedule::vp_linear(1000, 1e-4, 0.02)
        .unwrap()
        .with_ddim_steps(20)
        .unwrap()
}

/// Draws `x_next ~ q`, then `x_0 ~ p(x_0 | x_next)` exactly, then `x_t` from
/// the decoupled kernel, and scores the result against direct `q_t` draws.
fn resimulation_distance(prior: &GmmPrior<f64>, t: usize, t_next: usize, seed: u64) -> f64 {
    let sched = vp20();
    let mut rng = substream(seed, t as u64, Domain::Aux, 0);
    let direct: Vec<Vec<f64>> = (0..SAMPLES)
        .map(|_| prior.sample_marginal(t, &sched, &mut rng))
        .collect();
    let resim: Vec<Vec<f64>> = (0..SAMPLES)
        .map(|_| {
            let x_next = prior.sample_marginal(t_next, &sched, &mut rng);
            let x0 = prior.posterior_x0(&x_next, t_next, &sched).sample(&mut rng);
            prior_transition_between(&x_next, &x0, t, t_next, 0.0, &sched)
                .unwrap()
                .sample(&mut rng)
        })
        .collect();
    sliced_wasserstein(&resim, &direct, 100, 1234).unwrap()
}

#[test]
fn decoupled_resimulation_keeps_forward_marginals() {
    let prob: Problem = ProblemSpec::new(2, 1).generate(0).unwrap();
    for t in [600, 700, 800] {
        let d = resimulation_distance(&prob.prior, t, t + 50, 0);
        assert!(d < 0.05, "t={t}: {d}");
    }
    // Close to the data the lattice mixture's own sampling noise exceeds the
    // tolerance, so the low-noise levels use a single wide component.
    let single = GmmPrior::new(vec![1.0], vec![vec![3.0, -2.0]]).unwrap();
    for t in [50, 200, 400] {
        let d = resimulation_distance(&single, t, t + 50, 1);
        assert!(d < 0.05, "t={t}: {d}");
    }
}

/// Direct rollout of the decoupled annealing scheme: reconstruct by ODE,
/// sample the Gaussian `x_0` posterior, renoise to the next level, and end on
/// the posterior mean.
fn annealing_rollout(prob: &Problem, sched: &NoiseSchedule<f64>, seed: u64) -> Vec<f64> {
    let score = GmmScore {
        prior: prob.prior.clone(),
        sched: sched.clone(),
    };
    let w = whiten(&prob.model, &prob.y).unwrap();
    let rho = rho_schedule(sched, RhoMode::GmmDefault).unwrap();
    let mut rng = substream(seed, 0, Domain::Aux, 0);
    let mut x: Vec<f64> = (0..score.dim()).map(|_| f64::standard_normal(&mut rng)).collect();
    for pair in sched.times().windows(2) {
        let (t, below) = (pair[0], pair[1]);
        let x0hat = ode_reconstruct(&score, &x, t, sched, usize::MAX);
        let post = posterior_x0(&w.y_prime, &w.to_whitened(&x0hat), rho[t], &w.s, w.sigma_y).unwrap();
        if below == 0 {
            return unwhiten(&post.mean, &w);
        }
        let x0 = post.sample(&mut rng);
        let (a, v) = (sched.scale(below), sched.variance(below));
        let next: Vec<f64> = x0
            .iter()
            .map(|&m| a * m + v.sqrt() * f64::standard_normal(&mut rng))
            .collect();
        x = unwhiten(&next, &w);
    }
    unreachable!("schedule ends at 0")
}

#[test]
fn single_particle_matches_annealing_rollout() {
    let sched = vp20();
    let prob: Problem = ProblemSpec::new(8, 4).generate(2).unwrap();
    let cfg = DdsmcConfig {
        eta: 0.0,
        recon: Reconstruction::Ode { max_steps: None },
        num_particles: 1,
        rho: RhoMode::GmmDefault,
        lambda_mode: LambdaMode::DapsStyle,
    };
    let score = GmmScore {
        prior: prob.prior.clone(),
        sched: sched.clone(),
    };
    let sampler = Ddsmc::new(score, &prob.model, &prob.y, sched.clone(), &cfg).unwrap();
    let n = SAMPLES as u64;
    let ours: Vec<Vec<f64>> = (0..n).map(|r| sampler.run(1, r).unwrap().drawn().to_vec()).collect();
    let theirs: Vec<Vec<f64>> = (0..n).map(|r| annealing_rollout(&prob, &sched, n + r)).collect();
    let d = sliced_wasserstein(&ours, &theirs, 100, 1234).unwrap();
    assert!(d < 0.1, "{d}");
}

#[test]
fn uninformative_measurement_recovers_prior() {
    // Enough steps that discretization bias sits well below the tolerance.
    let sched = NoiseSchedule::vp_linear(1000, 1e-4, 0.02)
        .unwrap()
        .with_ddim_steps(200)
        .unwrap();
    let prior = GmmPrior::new(
        vec![0.5, 0.3, 0.2],
        vec![vec![-2.0, 0.0], vec![2.0, 1.0], vec![0.0, -2.5]],
    )
    .unwrap();
    let model = ddsmc::measurement::MeasurementModel::new(
        ddsmc::linalg::Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap(),
        1e6,
    )
    .unwrap();
    let cfg = DdsmcConfig {
        rho: RhoMode::Constant { rho: 0.01 },
        ..DdsmcConfig::default()
    };
    let score = GmmScore {
        prior: prior.clone(),
        sched: sched.clone(),
    };
    let sampler = Ddsmc::new(score, &model, &[0.7], sched, &cfg).unwrap();
    let ours: Vec<Vec<f64>> = (0..5000).map(|r| sampler.run(4, r).unwrap().drawn().to_vec()).collect();
    let mut rng = substream(9, 0, Domain::ExactSample, 0);
    let exact: Vec<Vec<f64>> = (0..5000).map(|_| prior.sample(&mut rng)).collect();
    let d = sliced_wasserstein(&ours, &exact, 100, 1234).unwrap();
    assert!(d < 0.15, "{d}");
}
