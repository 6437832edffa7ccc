//! Closed forms checked against dense linear algebra.

use ddsmc::diffusion::{prior_transition_between, tweedie_reconstruct, TemperedKernel};
use ddsmc::discrete::{cumulative_kernel, UniformKernel};
use ddsmc::gmm::{GmmScore, ProblemSpec};
use ddsmc::linalg::Matrix;
use ddsmc::measurement::{approx_loglik, exact_loglik, posterior_x0, unwhiten, whiten, MeasurementModel};
use ddsmc::rng::{substream, Domain};
use ddsmc::schedule::NoiseSchedule;
use ddsmc::{Problem, Scalar};
use nalgebra::{DMatrix, DVector};

fn random_model(d_x: usize, d_y: usize, sigma_y: f64, seed: u64) -> MeasurementModel<f64> {
    let mut rng = substream(seed, 0, Domain::Aux, 0);
    let data = (0..d_x * d_y).map(|_| f64::standard_normal(&mut rng)).collect();
    MeasurementModel::new(Matrix::from_row_major(d_y, d_x, data).unwrap(), sigma_y).unwrap()
}

fn gaussian_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, 1, Domain::Aux, 0);
    (0..n).map(|_| scale * f64::standard_normal(&mut rng)).collect()
}

fn dense(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn mvn_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("positive definite");
    let diff = x - mean;
    let sol = chol.solve(&diff);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (diff.dot(&sol) + log_det + x.len() as f64 * (2.0 * std::f64::consts::PI).ln())
}

#[test]
fn posterior_x0_matches_dense_bayes() {
    for (seed, (d_x, d_y, sigma_y, rho)) in [(5, 3, 0.7, 1.3), (4, 4, 0.2, 0.5), (8, 1, 2.0, 3.0), (6, 2, 1e-3, 0.8)]
        .into_iter()
        .enumerate()
    {
        let seed = seed as u64;
        let m = random_model(d_x, d_y, sigma_y, seed);
        let y = gaussian_vec(d_y, 2.0, seed);
        let x0hat = gaussian_vec(d_x, 1.5, seed + 100);
        let w = whiten(&m, &y).unwrap();
        let post = posterior_x0(&w.y_prime, &w.to_whitened(&x0hat), rho, &w.s, sigma_y).unwrap();

        // Gaussian prior N(x0hat, rho^2 I) times N(y | A x0, sigma_y^2 I).
        let a = dense(m.operator());
        let prec = DMatrix::identity(d_x, d_x) / (rho * rho) + a.transpose() * &a / (sigma_y * sigma_y);
        let cov = prec.try_inverse().unwrap();
        let rhs = DVector::from_vec(x0hat.clone()) / (rho * rho)
            + a.transpose() * DVector::from_vec(y.clone()) / (sigma_y * sigma_y);
        let mean = &cov * rhs;

        let got_mean = unwhiten(&post.mean, &w);
        let v = dense(&w.v);
        let got_cov = &v * DMatrix::from_diagonal(&DVector::from_vec(post.var.clone())) * v.transpose();
        let scale = mean.amax().max(1.0);
        for i in 0..d_x {
            assert!((got_mean[i] - mean[i]).abs() < 1e-8 * scale, "mean {i}: {} vs {}", got_mean[i], mean[i]);
        }
        assert!((got_cov - &cov).amax() < 1e-8 * cov.amax().max(1.0));
    }
}

#[test]
fn ve_full_temperature_kernel_is_gaussian_product() {
    let sched = NoiseSchedule::ve_power(80.0, 0.002, 200).unwrap();
    let mut rng = substream(7, 0, Domain::Aux, 0);
    for (t, t_next) in [(1, 2), (10, 40), (100, 101), (150, 200)] {
        let k = TemperedKernel::new(&sched, t, t_next, 1.0).unwrap();
        let (v_t, beta) = (sched.variance(t), sched.variance(t_next) - sched.variance(t));
        // q(x_next | x_t) = N(x_t, beta) times q(x_t | x0) = N(x0, v_t), in x_t.
        let prec = 1.0 / beta + 1.0 / v_t;
        for _ in 0..5 {
            let x0 = 10.0 * f64::standard_normal(&mut rng);
            let x_next = 30.0 * f64::standard_normal(&mut rng);
            let mean = (x_next / beta + x0 / v_t) / prec;
            let got = prior_transition_between(&[x_next], &[x0], t, t_next, 1.0, &sched).unwrap();
            assert!((got.mean[0] - mean).abs() < 1e-12 * mean.abs().max(1.0));
            assert!((got.var[0] - 1.0 / prec).abs() < 1e-12 * (1.0 / prec).max(1e-300));
            assert!((k.var - 1.0 / prec).abs() < 1e-12 * (1.0 / prec));
        }
    }
}

#[test]
fn tweedie_matches_gmm_conditional_mean() {
    let sched = NoiseSchedule::vp_linear(1000, 1e-4, 0.02).unwrap();
    let prob: Problem = ProblemSpec::new(3, 1).generate(4).unwrap();
    let score = GmmScore {
        prior: prob.prior.clone(),
        sched: sched.clone(),
    };
    let mut rng = substream(4, 0, Domain::Aux, 0);
    for t in [1, 50, 300, 700, 1000] {
        for _ in 0..10 {
            let x = prob.prior.sample_marginal(t, &sched, &mut rng);
            let tw = tweedie_reconstruct(&score, &x, t, &sched);
            let exact = prob.prior.posterior_x0(&x, t, &sched).mean();
            for (a, b) in tw.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "t={t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn whitened_likelihoods_match_dense() {
    for (seed, (d_x, d_y, sigma_y, rho)) in [(6, 3, 0.5, 0.9), (3, 3, 1.0, 0.0), (10, 2, 0.05, 2.0)]
        .into_iter()
        .enumerate()
    {
        let seed = seed as u64;
        let m = random_model(d_x, d_y, sigma_y, seed);
        let y = gaussian_vec(d_y, 3.0, seed);
        let x0 = gaussian_vec(d_x, 1.0, seed + 50);
        let w = whiten(&m, &y).unwrap();
        let a = dense(m.operator());
        let yv = DVector::from_vec(y.clone());
        let ax = &a * DVector::from_vec(x0.clone());

        let cov = DMatrix::identity(d_y, d_y) * (sigma_y * sigma_y) + &a * a.transpose() * (rho * rho);
        let want = mvn_log_pdf(&yv, &ax, &cov);
        let got = approx_loglik(&w.y_prime, &w.to_whitened(&x0), rho, &w).unwrap();
        assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{got} vs {want}");

        let plain = exact_loglik(&y, &x0, &m).unwrap();
        let rotated = w.exact_loglik(&w.to_whitened(&x0)).unwrap();
        let want = mvn_log_pdf(&yv, &ax, &(DMatrix::identity(d_y, d_y) * (sigma_y * sigma_y)));
        assert!((plain - want).abs() < 1e-8 * want.abs().max(1.0));
        assert!((rotated - want).abs() < 1e-8 * want.abs().max(1.0));
    }
}

#[test]
fn cumulative_kernel_matches_matrix_products() {
    for d in [2, 3, 5] {
        let betas = [0.1, 0.35, 0.02, 0.7, 0.5, 0.9];
        let mut prod = DMatrix::<f64>::identity(d, d);
        for (t, &b) in betas.iter().enumerate() {
            let step = UniformKernel::new(d, b).unwrap().dense();
            prod *= DMatrix::from_fn(d, d, |i, j| step[i][j]);
            let cum = cumulative_kernel(d, &betas[..=t]).unwrap().dense();
            for i in 0..d {
                for j in 0..d {
                    assert!((cum[i][j] - prod[(i, j)]).abs() < 1e-14, "d={d} t={t}");
                }
            }
        }
    }
}
