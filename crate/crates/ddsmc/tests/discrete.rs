use ddsmc::discrete::{
    brute_force_posterior, outcome_marginals, run_d3smc, ToyDiscretePrior, UniformKernel,
};
use ddsmc::metrics::tv_distance;
use ddsmc::rng::{substream, Domain};

fn betas(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.01 + 0.19 * i as f64 / (n - 1) as f64).collect()
}

fn observe(prior: &ToyDiscretePrior, channel: &UniformKernel<f64>, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, 1, Domain::Problem, 0);
    let x = prior.sample(&mut rng);
    let noisy = ToyDiscretePrior::uniform(1, prior.d).unwrap();
    // Each observed symbol keeps the true value or is redrawn uniformly.
    x.iter()
        .map(|&v| {
            if rand::Rng::random::<f64>(&mut rng) < channel.retention() {
                v
            } else {
                noisy.sample(&mut rng)[0]
            }
        })
        .collect()
}

#[test]
fn matches_enumerated_posterior() {
    let prior = ToyDiscretePrior::neighbor_coupled(4, 3, 1.0, 0).unwrap();
    let channel = UniformKernel::new(3, 0.6).unwrap();
    for seed in 0..3 {
        let y = observe(&prior, &channel, seed);
        let hist = run_d3smc(&prior, &y, channel, &betas(50), 1000, 100, seed).unwrap();
        let exact = brute_force_posterior(&prior, &y, &channel).unwrap();
        let tv = tv_distance(&hist, &exact).unwrap();
        assert!(tv < 0.05, "seed {seed}: {tv}");
    }
}

#[test]
fn uninformative_channel_gives_prior_marginals() {
    let prior = ToyDiscretePrior::neighbor_coupled(4, 3, 1.0, 0).unwrap();
    let channel = UniformKernel::new(3, 1.0).unwrap();
    let hist = run_d3smc(&prior, &[0, 2, 1, 1], channel, &betas(50), 1000, 100, 5).unwrap();
    let got = outcome_marginals(&hist, 4, 3);
    let want = prior.marginals();
    for (g, w) in got.rows.iter().zip(&want.rows) {
        assert!(tv_distance(g, w).unwrap() < 0.05);
    }
    assert!(tv_distance(&hist, &prior.table).unwrap() < 0.05);
}

#[test]
fn error_shrinks_with_more_particles() {
    let prior = ToyDiscretePrior::neighbor_coupled(4, 3, 1.0, 0).unwrap();
    let channel = UniformKernel::new(3, 0.6).unwrap();
    let mut mean_tv = Vec::new();
    for n in [10, 100, 1000] {
        let mut total = 0.0;
        for seed in 0..5 {
            let y = observe(&prior, &channel, seed);
            let hist = run_d3smc(&prior, &y, channel, &betas(20), n, 20, seed).unwrap();
            total += tv_distance(&hist, &brute_force_posterior(&prior, &y, &channel).unwrap()).unwrap();
        }
        mean_tv.push(total / 5.0);
    }
    assert!(mean_tv.windows(2).all(|w| w[1] <= w[0]), "{mean_tv:?}");
}
