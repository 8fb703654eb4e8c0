//! Cross-module consistency: the stochastic pipeline against the exact
//! moment oracle, burn-in against a two-start coupling, step refinement
//! under common random numbers, and the sampling floor of the empirical
//! distance.

use nalgebra::{DMatrix, DVector};
use sdeavg::coeff::AveragedCoefficients;
use sdeavg::config::Experiment;
use sdeavg::experiments::{self, constants_for};
use sdeavg::metrics::{self, covariance_nuclear_distance};
use sdeavg::oracle::{moment_odes_averaged, moment_odes_oscillating};
use sdeavg::rng::substream_seed;
use sdeavg::scenarios;
use sdeavg::solver::{
    burn_in_length, integrate_path_with_increments, simulate_ensemble, simulate_ensemble_from,
    OscillatingSystem, SolverConfig,
};

#[test]
fn mc_marginals_match_moment_oracle() {
    let exp = Experiment::from_config(&scenarios::gaussian_scenario()).unwrap();
    let constants = constants_for(&exp).unwrap();
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol).unwrap();
    let eps = 0.4;
    let n = 1500;
    let config = exp.solver_config(eps, t_burn, 2024);
    let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps).unwrap();
    let ensemble = simulate_ensemble(&exp.model, &system, &config, n).unwrap();
    let moments = moment_odes_oscillating(&exp.model, &exp.drift, &exp.diffusion, &config, 10)
        .unwrap();
    assert_eq!(ensemble.times(), moments.times());

    let lambda_max = exp.model.lambda_max();
    let n_times = ensemble.n_times();
    let check_indices: Vec<usize> = (0..5).map(|k| k * (n_times - 1) / 4).collect();
    for &idx in &check_indices {
        let mean_hat = ensemble.marginal_mean(idx);
        let cov_hat = ensemble.marginal_covariance(idx);
        let mean = moments.mean(idx);
        let cov = moments.covariance(idx);
        // per-coordinate mean within 3 SE plus the O(h) scheme bias budget
        for c in 0..exp.model.state_dim() {
            let se = (cov[(c, c)] / n as f64).sqrt();
            let bias = lambda_max * config.step * mean[c].abs();
            assert!(
                (mean_hat[c] - mean[c]).abs() <= 3.0 * se + bias + 1e-12,
                "mean mismatch at grid {idx}, coordinate {c}: {} vs {}",
                mean_hat[c],
                mean[c]
            );
        }
        // covariance entries within 3 SE (Gaussian fourth-moment formula)
        // plus the relative O(h) bias of the left-point noise weight
        for i in 0..exp.model.state_dim() {
            for j in 0..exp.model.state_dim() {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                let bias = 2.0 * lambda_max * config.step * cov[(i, j)].abs();
                assert!(
                    (cov_hat[(i, j)] - cov[(i, j)]).abs() <= 3.0 * se + bias + 1e-12,
                    "covariance mismatch at grid {idx}, entry ({i},{j})"
                );
            }
        }
    }
}

#[test]
fn averaged_covariance_solves_lyapunov_equation() {
    // at stationarity the averaged second moment satisfies
    // (B - L) S + S (B - L)* + G0 Q G0* = 0, and the driving term equals
    // the closed-form averaged covariance
    let exp = Experiment::from_config(&scenarios::gaussian_scenario()).unwrap();
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model).unwrap();
    let config = exp.solver_config(0.0, 20.0, 1);
    let moments = moment_odes_averaged(&exp.model, &averaged, &config, 10).unwrap();
    let sigma = moments.covariance(moments.n_times() - 1);

    let d = exp.model.state_dim();
    let zero = DVector::zeros(d);
    let g0 = averaged.g0(&zero).unwrap();
    let noise = &g0 * exp.model.q_matrix() * g0.transpose();
    let h0 = averaged.h0(&zero).unwrap();
    assert!(
        covariance_nuclear_distance(&noise, &h0).unwrap()
            <= 1e-9 * sdeavg::model::nuclear_norm(&h0).unwrap(),
        "averaged noise covariance does not match the closed form"
    );

    let lambda = DMatrix::from_diagonal(&DVector::from_vec(
        exp.model.generator_eigenvalues().to_vec(),
    ));
    let a_mat = averaged.f0_map().matrix.clone() - lambda;
    let residual = &a_mat * sigma + sigma * a_mat.transpose() + &noise;
    assert!(
        residual.norm() <= 1e-9 * noise.norm(),
        "Lyapunov residual {} too large",
        residual.norm()
    );
}

#[test]
fn burn_in_forgets_the_start_state() {
    // ensembles launched from 0 and from a random unit vector agree in
    // their window-start marginals after the computed burn-in
    let exp = Experiment::from_config(&scenarios::reference_scenario()).unwrap();
    let constants = constants_for(&exp).unwrap();
    let t_burn = burn_in_length(&exp.model, &constants, 1e-3).unwrap();
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model).unwrap();
    let n = 500;
    let cfg_a = exp.solver_config(0.0, t_burn, 100);
    let cfg_b = exp.solver_config(0.0, t_burn, 101);
    let from_zero = simulate_ensemble(&exp.model, &averaged, &cfg_a, n).unwrap();
    let start = DVector::from_vec(vec![0.76, -0.49, 0.43]); // unit-ish
    let from_far = simulate_ensemble_from(&exp.model, &averaged, &cfg_b, n, &start).unwrap();

    let d = exp.model.state_dim();
    let mean_a = from_zero.marginal_mean(0);
    let mean_b = from_far.marginal_mean(0);
    let cov_a = from_zero.marginal_covariance(0);
    let cov_b = from_far.marginal_covariance(0);
    let mut var_sum = 0.0;
    for c in 0..d {
        var_sum += (cov_a[(c, c)] + cov_b[(c, c)]) / n as f64;
    }
    let threshold = 3.0 * var_sum.sqrt();
    let diff = (mean_a - mean_b).norm();
    assert!(
        diff <= threshold,
        "means differ by {diff} (> {threshold}) after burn-in {t_burn}"
    );

    // negative control: without burn-in the far start dominates the mean
    let cfg_c = exp.solver_config(0.0, 0.0, 102);
    let no_burn = simulate_ensemble_from(&exp.model, &averaged, &cfg_c, n, &(&start * 5.0)).unwrap();
    let diff_raw = (no_burn.marginal_mean(0) - from_zero.marginal_mean(0)).norm();
    assert!(
        diff_raw > threshold,
        "no-burn-in control unexpectedly matched ({diff_raw} <= {threshold})"
    );
}

#[test]
fn step_refinement_has_weak_order_one() {
    // common random numbers: coarse increments are sums of fine ones, so
    // mean differences across levels are pure discretization error
    let exp = Experiment::from_config(&scenarios::moment_bound_scenario(0.3)).unwrap();
    let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, 1.0).unwrap();
    let n = 400;
    let h0 = 0.04;
    let levels = 4; // h0, h0/2, h0/4, with h0/8 as the reference
    let d = exp.model.state_dim();

    let mut endpoint_means: Vec<DVector<f64>> = Vec::new();
    for level in 0..levels {
        let refinement = 1usize << level;
        let h = h0 / refinement as f64;
        let steps = (2.0 / h).round() as usize;
        let config = SolverConfig {
            eps: 1.0,
            step: h,
            window: (0.0, 2.0),
            t_burn: 0.0,
            grid_stride: steps,
            master_seed: 7,
        };
        let mut mean = DVector::zeros(d);
        for path in 0..n {
            // finest-level increments, aggregated for the coarser levels
            let finest_h = h0 / (1 << (levels - 1)) as f64;
            let finest_steps = (2.0 / finest_h).round() as usize;
            let fine = exp
                .model
                .sample_wiener_increments(finest_h, finest_steps, substream_seed(7, path))
                .unwrap();
            let group = 1 << (levels - 1 - level);
            let increments: Vec<DVector<f64>> = fine
                .chunks(group)
                .map(|chunk| {
                    let mut acc = DVector::zeros(exp.model.noise_dim());
                    for dw in chunk {
                        acc += dw;
                    }
                    acc
                })
                .collect();
            let path_values = integrate_path_with_increments(
                &exp.model,
                &system,
                &config,
                &DVector::zeros(d),
                &increments,
                path as usize,
            )
            .unwrap();
            mean += path_values.last().unwrap();
        }
        endpoint_means.push(mean / n as f64);
    }

    let reference = endpoint_means.last().unwrap().clone();
    let errors: Vec<f64> = endpoint_means[..levels - 1]
        .iter()
        .map(|m| (m - &reference).norm())
        .collect();
    assert!(
        errors.windows(2).all(|w| w[1] < w[0]),
        "errors not decreasing: {errors:?}"
    );
    let ratio = errors[0] / errors[1];
    assert!(
        (1.3..=3.5).contains(&ratio),
        "halving the step scaled the mean error by {ratio}, errors {errors:?}"
    );
}

#[test]
fn self_distance_baseline_shrinks_with_sample_size() {
    let exp = Experiment::from_config(&scenarios::ou_scenario()).unwrap();
    let constants = constants_for(&exp).unwrap();
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol).unwrap();
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model).unwrap();

    let baseline_at = |n: usize, seed_a: u64, seed_b: u64| {
        metrics::self_distance_baseline(
            |seed| {
                let cfg = exp.solver_config(0.0, t_burn, seed);
                simulate_ensemble(&exp.model, &averaged, &cfg, n)
            },
            seed_a,
            seed_b,
        )
        .unwrap()
        .value
    };
    let small = baseline_at(500, 5, 6);
    let swapped = baseline_at(500, 6, 5);
    assert!(small > 0.0);
    assert!(
        (small - swapped).abs() <= 1e-9 * small,
        "baseline not symmetric in its seeds"
    );
    let large = baseline_at(2000, 5, 6);
    let ratio = large / small;
    assert!(
        (0.3..=0.9).contains(&ratio),
        "quadrupling the sample count scaled the baseline by {ratio}"
    );
}

#[test]
fn bohr_means_agree_across_the_corpus() {
    // every corpus coefficient: long-window quadrature means against the
    // closed forms, within the analytic oscillation-tail allowance
    let mut gen = sdeavg::rng::rng_from_seed(606);
    for config in [
        scenarios::reference_scenario(),
        scenarios::gaussian_scenario(),
        scenarios::moment_bound_scenario(0.3),
    ] {
        let exp = Experiment::from_config(&config).unwrap();
        let omega_min = exp
            .drift
            .min_frequency()
            .into_iter()
            .chain(exp.diffusion.min_frequency())
            .fold(f64::INFINITY, f64::min);
        let omega_max = exp
            .drift
            .max_frequency()
            .into_iter()
            .chain(exp.diffusion.max_frequency())
            .fold(0.0_f64, f64::max);
        let horizon = 1.0e3 * 2.0 * std::f64::consts::PI / omega_min;
        let n_quad = (horizon / (2.0 * std::f64::consts::PI / omega_max / 64.0)).ceil() as usize;
        let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model).unwrap();
        for _ in 0..10 {
            use rand::Rng as _;
            let x = DVector::from_fn(exp.model.state_dim(), |_, _| gen.gen_range(-1.5..1.5));
            let numeric = exp.drift.average_numeric(&x, 0.0, horizon, n_quad).unwrap();
            let closed = averaged.f0(&x);
            let bound = sdeavg::coeff::drift_average_tail_bound(&exp.drift, &x, horizon) + 1e-10;
            assert!(
                (numeric - closed).norm() <= bound,
                "drift mean outside the tail bound"
            );
            let (_, nuclear_err) = exp
                .diffusion
                .averaged_covariance_numeric(&exp.model, &x, 0.0, horizon, n_quad)
                .unwrap();
            // the 1e-3 budget holds at 1e4 periods; the tail scales as 1/T
            assert!(
                nuclear_err <= 1e-2,
                "covariance mean error {nuclear_err} at horizon {horizon}"
            );
        }
    }
}

#[test]
fn gaussian_closed_form_tracks_empirical_marginal() {
    // static check of the advertised 15% agreement at N = 2000, d <= 3
    let (empirical, closed, index) =
        experiments::gaussian_marginal_cross_check(
            &Experiment::from_config(&scenarios::gaussian_scenario()).unwrap(),
            0.4,
            2000,
        )
        .unwrap();
    assert!(
        (empirical - closed).abs() <= 0.15 * closed,
        "empirical {empirical} vs closed form {closed} at grid index {index}"
    );
}
