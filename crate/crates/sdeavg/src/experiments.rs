//! Experiment orchestration: the convergence ladder, the coefficient
//! continuity schedule, the semigroup-weighted averaging check, the
//! stationarity check and the inequality verifications, all driven by one
//! validated configuration.
//!
//! Seed discipline: every run derives its own substream from the master
//! seed (`0` and `1` for the averaged reference and its baseline twin,
//! `2 + i` for ladder entry `i`, and fixed offsets beyond 10 for auxiliary
//! runs), so reports are reproducible and independent pieces can execute
//! concurrently.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{
    check_gronwall_on_curve, compute_constants, verify_novikov_mc, ConstantsReport,
};
use crate::coeff::{
    combined_growth_constant, simpson_mat, simpson_vec, AveragedCoefficients, DriftMode,
    QuasiPeriodicDiffusion, QuasiPeriodicDrift,
};
use crate::config::Experiment;
use crate::error::{Error, Result};
use crate::metrics::{empirical_w2, empirical_w2_marginal};
use crate::model::{nuclear_norm, GalerkinModel};
use crate::oracle::{marginal_w2_curve, moment_odes_averaged, moment_odes_oscillating};
use crate::report::{
    ladder_summary, AverageProbe, AverageReport, ConstantsCheckReport, ContinuityReport,
    ConvergenceReport, ConvolutionEntry, ConvolutionReport, CovariancePairCheck,
    GronwallCurveCheck, GronwallVerifyReport, MeanPairCheck, NovikovReport, RunMeta,
    SimulateReport, StationarityReport, Verdict,
};
use crate::rng::{substream_rng, substream_seed};
use crate::solver::{
    burn_in_length, simulate_ensemble, simulate_ensemble_from, OscillatingSystem, PathEnsemble,
    SolverConfig,
};

/// Moment orders evaluated alongside `theta'` by default.
const DEFAULT_P_LIST: [f64; 2] = [2.0, 4.0];

/// Closed-form constants for the experiment's coefficient pair.
pub fn constants_for(exp: &Experiment) -> Result<ConstantsReport> {
    let k = combined_growth_constant(&exp.drift, &exp.diffusion);
    let p_list: Vec<f64> = exp
        .raw
        .novikov
        .as_ref()
        .map(|n| n.p_values.clone())
        .unwrap_or_else(|| DEFAULT_P_LIST.to_vec());
    compute_constants(k, exp.model.delta(), exp.model.trace_q(), &p_list)
}

fn require_contraction(constants: &ConstantsReport) -> Result<()> {
    if constants.theta_prime >= 1.0 {
        return Err(Error::NoContraction {
            theta_prime: constants.theta_prime,
        });
    }
    Ok(())
}

/// Simulates one ensemble of the oscillating system (`eps > 0`) or of the
/// averaged pair (`eps = 0`).
pub fn simulate_one(exp: &Experiment, eps: f64, n_paths: usize, seed: u64) -> Result<(PathEnsemble, f64)> {
    let constants = constants_for(exp)?;
    require_contraction(&constants)?;
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?;
    let config = exp.solver_config(eps, t_burn, seed);
    let ensemble = if eps == 0.0 {
        let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
        simulate_ensemble(&exp.model, &averaged, &config, n_paths)?
    } else {
        let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps)?;
        simulate_ensemble(&exp.model, &system, &config, n_paths)?
    };
    Ok((ensemble, t_burn))
}

/// The main convergence experiment: simulates the averaged solution once,
/// each ladder entry of the oscillating solution, and compares their path
/// laws against the self-distance floor of the averaged law.
pub fn run_convergence(exp: &Experiment) -> Result<ConvergenceReport> {
    let constants = constants_for(exp)?;
    require_contraction(&constants)?;
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?;
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
    let master = exp.raw.master_seed;
    let n = exp.raw.n_paths;

    let cfg_ref = exp.solver_config(0.0, t_burn, substream_seed(master, 0));
    let cfg_alt = exp.solver_config(0.0, t_burn, substream_seed(master, 1));
    let reference = simulate_ensemble(&exp.model, &averaged, &cfg_ref, n)?;
    let alternate = simulate_ensemble(&exp.model, &averaged, &cfg_alt, n)?;
    let mut baseline_distance = empirical_w2(&reference, &alternate)?;
    baseline_distance.seeds = Some([cfg_ref.master_seed, cfg_alt.master_seed]);
    let baseline = baseline_distance.value;

    let mut distances = Vec::with_capacity(exp.raw.eps_ladder.len());
    for (i, &eps) in exp.raw.eps_ladder.iter().enumerate() {
        let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps)?;
        let cfg = exp.solver_config(eps, t_burn, substream_seed(master, 2 + i as u64));
        let ensemble = simulate_ensemble(&exp.model, &system, &cfg, n)?;
        let mut report = empirical_w2(&ensemble, &reference)?;
        report.baseline = Some(baseline);
        report.seeds = Some([cfg.master_seed, cfg_ref.master_seed]);
        distances.push(report);
    }
    let values: Vec<f64> = distances.iter().map(|d| d.value).collect();
    let summary = ladder_summary(values, baseline);

    // closed-form marginal lower bounds when the law is Gaussian
    let marginal_lower_bounds = if exp.diffusion.is_additive() {
        let avg_moments = moment_odes_averaged(&exp.model, &averaged, &cfg_ref, 10)?;
        let mut bounds = Vec::with_capacity(exp.raw.eps_ladder.len());
        for (i, &eps) in exp.raw.eps_ladder.iter().enumerate() {
            let cfg = exp.solver_config(eps, t_burn, substream_seed(master, 2 + i as u64));
            let eps_moments =
                moment_odes_oscillating(&exp.model, &exp.drift, &exp.diffusion, &cfg, 10)?;
            let curve = marginal_w2_curve(&eps_moments, &avg_moments)?;
            bounds.push(curve.iter().copied().fold(0.0, f64::max));
        }
        Some(bounds)
    } else {
        None
    };

    Ok(ConvergenceReport {
        meta: RunMeta::new(&exp.raw),
        constants,
        t_burn,
        n_paths: n,
        eps_ladder: exp.raw.eps_ladder.clone(),
        summary,
        marginal_lower_bounds,
        distances,
        baseline_distance,
    })
}

fn perturbed_drift(drift: &QuasiPeriodicDrift, v: &DVector<f64>, amplitude: f64) -> QuasiPeriodicDrift {
    QuasiPeriodicDrift::new(
        drift.base_matrix().clone(),
        drift.base_vector() + v * amplitude,
        drift
            .modes()
            .iter()
            .map(|m| DriftMode {
                omega: m.omega,
                cos_matrix: m.cos_matrix.clone(),
                cos_vector: m.cos_vector.clone(),
                sin_matrix: m.sin_matrix.clone(),
                sin_vector: m.sin_vector.clone(),
            })
            .collect(),
    )
    .expect("perturbation preserves validity")
}

/// Coefficient-continuity experiment: a schedule of drift perturbations
/// `F_n = F + a_n v` coupled to one Wiener realization, with the distance to
/// the limit system shrinking along the schedule. Also measures the squared
/// mean difference of a no-burn-in coupled run and checks it against the
/// Gronwall-type inequality with the shared constants.
pub fn run_coefficient_continuity(exp: &Experiment) -> Result<ContinuityReport> {
    let cont = exp
        .raw
        .continuity
        .as_ref()
        .ok_or_else(|| Error::config("configuration has no continuity section"))?;
    let v = DVector::from_column_slice(&cont.perturbation_vector);
    let max_amp = cont.amplitudes.first().copied().unwrap_or(0.0);

    // the schedule must share one growth/Lipschitz constant
    let worst = perturbed_drift(&exp.drift, &v, max_amp);
    let shared_k = combined_growth_constant(&worst, &exp.diffusion);
    let constants = compute_constants(shared_k, exp.model.delta(), exp.model.trace_q(), &[])?;
    require_contraction(&constants)?;
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?;

    let master = exp.raw.master_seed;
    let n = exp.raw.n_paths;
    let eps = 1.0; // the schedule perturbs coefficients, not the time scale
    let coupled_seed = substream_seed(master, 10);

    let limit_system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps)?;
    let cfg_coupled = exp.solver_config(eps, t_burn, coupled_seed);
    let limit_ens = simulate_ensemble(&exp.model, &limit_system, &cfg_coupled, n)?;

    let mut distances = Vec::with_capacity(cont.amplitudes.len());
    for &amp in &cont.amplitudes {
        let drift_n = perturbed_drift(&exp.drift, &v, amp);
        let system_n = OscillatingSystem::new(&drift_n, &exp.diffusion, eps)?;
        let ens_n = simulate_ensemble(&exp.model, &system_n, &cfg_coupled, n)?;
        let mut report = empirical_w2(&ens_n, &limit_ens)?;
        report.seeds = Some([coupled_seed, coupled_seed]);
        distances.push(report);
    }

    let baseline_gen = |seed: u64| {
        let cfg = exp.solver_config(eps, t_burn, seed);
        simulate_ensemble(&exp.model, &limit_system, &cfg, n)
    };
    let baseline_distance = crate::metrics::self_distance_baseline(
        baseline_gen,
        substream_seed(master, 11),
        substream_seed(master, 12),
    )?;
    let baseline = baseline_distance.value;
    let values: Vec<f64> = distances.iter().map(|d| d.value).collect();
    let summary = ladder_summary(values, baseline);

    let gronwall = continuity_gronwall_check(exp, &v, max_amp, shared_k, substream_seed(master, 13))?;

    Ok(ContinuityReport {
        meta: RunMeta::new(&exp.raw),
        shared_k,
        theta_prime_shared: constants.theta_prime,
        t_burn,
        amplitudes: cont.amplitudes.clone(),
        summary,
        gronwall,
        distances,
        baseline_distance,
    })
}

/// Coupled no-burn-in run of the perturbed and limit systems started from
/// the same state at the window start, so the measured squared mean
/// difference `g(t) = E |X_n(t) - X(t)|^2` starts at zero and every
/// convolution in the hypothesis inequality is fully covered by the grid.
/// The forcing constant is `alpha = (4 / delta^2) amp^2 |v|^2` (the drift
/// perturbation is deterministic and constant), and the convolution weights
/// are `beta_1 = 4 K^2 / delta`, `beta_2 = 4 K^2 tr Q` at decay rates
/// `delta` and `2 delta`.
fn continuity_gronwall_check(
    exp: &Experiment,
    v: &DVector<f64>,
    amplitude: f64,
    shared_k: f64,
    seed: u64,
) -> Result<GronwallCurveCheck> {
    let delta = exp.model.delta();
    let span = exp.raw.window[1] - exp.raw.window[0];
    let config = SolverConfig {
        eps: 1.0,
        step: exp.raw.step,
        window: (0.0, span),
        t_burn: 0.0,
        grid_stride: exp.raw.grid_stride,
        master_seed: seed,
    };
    let n = exp.raw.n_paths.min(256);
    let limit_system = OscillatingSystem::new(&exp.drift, &exp.diffusion, 1.0)?;
    let drift_n = perturbed_drift(&exp.drift, v, amplitude);
    let system_n = OscillatingSystem::new(&drift_n, &exp.diffusion, 1.0)?;
    let limit_ens = simulate_ensemble(&exp.model, &limit_system, &config, n)?;
    let pert_ens = simulate_ensemble(&exp.model, &system_n, &config, n)?;

    let times = limit_ens.times().to_vec();
    let g: Vec<f64> = (0..limit_ens.n_times())
        .map(|k| {
            (0..n)
                .map(|i| (&pert_ens.path(i)[k] - &limit_ens.path(i)[k]).norm_squared())
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let alpha = 4.0 / (delta * delta) * (amplitude * v.norm()).powi(2);
    let betas = vec![
        4.0 * shared_k * shared_k / delta,
        4.0 * shared_k * shared_k * exp.model.trace_q(),
    ];
    let deltas = vec![delta, 2.0 * delta];
    let alpha_curve = vec![alpha; times.len()];
    let report = check_gronwall_on_curve(&times, &g, &alpha_curve, &betas, &deltas)?;
    Ok(GronwallCurveCheck {
        alpha,
        betas,
        deltas,
        amplitude,
        report,
    })
}

/// Closed-form deterministic test curve for the convolution check.
struct DeterministicCurve {
    constant: DVector<f64>,
    modes: Vec<(f64, DVector<f64>, DVector<f64>)>,
}

impl DeterministicCurve {
    fn from_config(curve: &crate::config::CurveConfig) -> Self {
        Self {
            constant: DVector::from_column_slice(&curve.constant),
            modes: curve
                .modes
                .iter()
                .map(|m| {
                    (
                        m.omega,
                        DVector::from_column_slice(&m.cos_amplitude),
                        DVector::from_column_slice(&m.sin_amplitude),
                    )
                })
                .collect(),
        }
    }

    fn eval(&self, s: f64) -> DVector<f64> {
        let mut out = self.constant.clone();
        for (omega, cos_amp, sin_amp) in &self.modes {
            let (sn, cs) = (omega * s).sin_cos();
            out += cos_amp * cs + sin_amp * sn;
        }
        out
    }

    fn sup_norm(&self) -> f64 {
        self.constant.norm()
            + self
                .modes
                .iter()
                .map(|(_, c, s)| c.norm() + s.norm())
                .sum::<f64>()
    }

    fn rate_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|(w, c, s)| w * (c.norm() + s.norm()))
            .sum::<f64>()
    }
}

fn semigroup_scaled_vec(model: &GalerkinModel, t: f64, v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for (k, &l) in model.generator_eigenvalues().iter().enumerate() {
        out[k] *= (-l * t).exp();
    }
    out
}

fn semigroup_sandwich(model: &GalerkinModel, t: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = model.state_dim();
    let decay: Vec<f64> = model
        .generator_eigenvalues()
        .iter()
        .map(|&l| (-l * t).exp())
        .collect();
    DMatrix::from_fn(d, d, |i, j| decay[i] * m[(i, j)] * decay[j])
}

/// Integration-by-parts tail bound for
/// `| int_tau^{tau+t} S(tau+t-s) [F(s/eps, x(s)) - F0(x(s))] ds |`:
/// each oscillatory drift mode of frequency `w` contributes at most
/// `(eps/w) (2 a + t (lambda_max a + a'))` with `a` the mode amplitude on
/// the curve and `a'` its rate of change.
fn drift_convolution_tail(
    drift: &QuasiPeriodicDrift,
    lambda_max: f64,
    x_sup: f64,
    x_rate: f64,
    t: f64,
    eps: f64,
) -> f64 {
    drift
        .modes()
        .iter()
        .map(|mode| {
            let amp = crate::linalg::operator_norm(&mode.cos_matrix) * x_sup
                + mode.cos_vector.norm()
                + crate::linalg::operator_norm(&mode.sin_matrix) * x_sup
                + mode.sin_vector.norm();
            let rate = (crate::linalg::operator_norm(&mode.cos_matrix)
                + crate::linalg::operator_norm(&mode.sin_matrix))
                * x_rate;
            (eps / mode.omega) * (2.0 * amp + t * (lambda_max * amp + rate))
        })
        .sum()
}

struct BlockBound {
    amp: f64,
    rate: f64,
}

fn affine_block_bound(map: &crate::coeff::AffineMatrixMap, x_sup: f64, x_rate: f64) -> BlockBound {
    let lip: f64 = map
        .linear_part()
        .iter()
        .map(|l| crate::linalg::operator_norm(l).powi(2))
        .sum::<f64>()
        .sqrt();
    BlockBound {
        amp: crate::linalg::operator_norm(map.constant_part()) + lip * x_sup,
        rate: lip * x_rate,
    }
}

/// Tail bound for the nuclear norm of
/// `int S [G(s/eps,x)QG* - H0(x)] S* ds`: every oscillatory product term
/// `M_a Q M_b*` at rescaled frequency `w/eps` obeys the same
/// integration-by-parts estimate, and the nuclear norm is controlled by
/// `d` times the operator norm.
fn diffusion_convolution_tail(
    diffusion: &QuasiPeriodicDiffusion,
    model: &GalerkinModel,
    x_sup: f64,
    x_rate: f64,
    t: f64,
    eps: f64,
) -> f64 {
    let lambda_max = model.lambda_max();
    let q_norm = model
        .q_eigenvalues()
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    let d = model.state_dim() as f64;
    let base = affine_block_bound(diffusion.base(), x_sup, x_rate);
    let modes: Vec<(f64, BlockBound, BlockBound)> = diffusion
        .modes()
        .iter()
        .map(|m| {
            (
                m.omega,
                affine_block_bound(&m.cos_map, x_sup, x_rate),
                affine_block_bound(&m.sin_map, x_sup, x_rate),
            )
        })
        .collect();
    // one oscillatory product term M_a(x(s)) Q M_b*(x(s)) trig(w s / eps)
    let term = |w: f64, a: &BlockBound, b: &BlockBound, coefficient: f64| -> f64 {
        let amp = coefficient * q_norm * a.amp * b.amp;
        let rate = coefficient * q_norm * (a.rate * b.amp + a.amp * b.rate);
        d * (eps / w) * (2.0 * amp + t * (2.0 * lambda_max * amp + rate))
    };
    let mut total = 0.0;
    for (i, (w_i, cos_i, sin_i)) in modes.iter().enumerate() {
        // base x mode cross terms at frequency w_i (both orders)
        total += term(*w_i, &base, cos_i, 2.0);
        total += term(*w_i, &base, sin_i, 2.0);
        // self products: cos^2 and sin^2 leave residue at 2 w_i with
        // coefficient 1/2 each, cos*sin contributes sin(2w) with
        // coefficient 1 (both orders combined)
        total += term(2.0 * w_i, cos_i, cos_i, 0.5);
        total += term(2.0 * w_i, sin_i, sin_i, 0.5);
        total += term(2.0 * w_i, cos_i, sin_i, 1.0);
        // cross-mode products at |w_i -+ w_j|
        for (w_j, cos_j, sin_j) in modes.iter().skip(i + 1) {
            let w_minus = (w_i - w_j).abs();
            let w_plus = w_i + w_j;
            for (a, b) in [
                (cos_i, cos_j),
                (cos_i, sin_j),
                (sin_i, cos_j),
                (sin_i, sin_j),
            ] {
                total += term(w_minus, a, b, 1.0);
                total += term(w_plus, a, b, 1.0);
            }
        }
    }
    total
}

/// Verifies that the semigroup-weighted time averages of the oscillating
/// coefficients converge to their averaged counterparts along the epsilon
/// ladder, on a closed-form deterministic curve.
pub fn run_convolution_average_check(exp: &Experiment) -> Result<ConvolutionReport> {
    let conv = exp
        .raw
        .convolution
        .as_ref()
        .ok_or_else(|| Error::config("configuration has no convolution section"))?;
    if !(conv.t > 0.0) {
        return Err(Error::NonPositiveHorizon(conv.t));
    }
    let curve = DeterministicCurve::from_config(&conv.curve);
    let model = &exp.model;
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, model)?;
    let tau = conv.tau;
    let t = conv.t;
    let lambda_max = model.lambda_max();
    let x_sup = curve.sup_norm();
    let x_rate = curve.rate_bound();
    let omega_fast = exp
        .drift
        .max_frequency()
        .into_iter()
        .chain(exp.diffusion.max_frequency())
        .fold(f64::NAN, f64::max);

    let q = model.q_matrix();
    let drift_avg_integrand = |s: f64| {
        let f0 = averaged.f0(&curve.eval(s));
        semigroup_scaled_vec(model, tau + t - s, &f0)
    };
    let diff_avg_integrand = |s: f64| -> Result<DMatrix<f64>> {
        let h0 = averaged.h0(&curve.eval(s))?;
        Ok(semigroup_sandwich(model, tau + t - s, &h0))
    };

    let mut entries = Vec::with_capacity(exp.raw.eps_ladder.len());
    for &eps in &exp.raw.eps_ladder {
        // resolve the fastest rescaled oscillation with >= 20 nodes/period
        let mut n_quad = conv.n_quad.max(2);
        if omega_fast.is_finite() {
            let needed = (t / (eps * 2.0 * std::f64::consts::PI / omega_fast / 20.0)).ceil();
            n_quad = n_quad.max(needed as usize);
        }
        let drift_osc = |s: f64| {
            let f = exp
                .drift
                .eval(s / eps, &curve.eval(s))
                .expect("curve dimension matches drift");
            semigroup_scaled_vec(model, tau + t - s, &f)
        };
        let i_eps = simpson_vec(drift_osc, tau, tau + t, 2 * n_quad);
        let i_eps_coarse = simpson_vec(drift_osc, tau, tau + t, n_quad);
        let i_avg = simpson_vec(drift_avg_integrand, tau, tau + t, 2 * n_quad);
        let i_avg_coarse = simpson_vec(drift_avg_integrand, tau, tau + t, n_quad);
        let drift_error = (&i_eps - &i_avg).norm();
        let drift_quad_floor =
            (&i_eps - i_eps_coarse).norm() + (&i_avg - i_avg_coarse).norm() + 1e-14;

        let diff_osc = |s: f64| {
            let g = exp
                .diffusion
                .eval(s / eps, &curve.eval(s))
                .expect("curve dimension matches diffusion");
            let m = &g * &q * g.transpose();
            semigroup_sandwich(model, tau + t - s, &m)
        };
        let d_eps = simpson_mat(diff_osc, tau, tau + t, 2 * n_quad);
        let d_eps_coarse = simpson_mat(diff_osc, tau, tau + t, n_quad);
        // the averaged integrand can error on PSD violations, so evaluate
        // through a checked table first
        let d_avg = simpson_mat_checked(&diff_avg_integrand, tau, tau + t, 2 * n_quad)?;
        let d_avg_coarse = simpson_mat_checked(&diff_avg_integrand, tau, tau + t, n_quad)?;
        let diffusion_error = crate::metrics::covariance_nuclear_distance(&d_eps, &d_avg)?;
        let diffusion_quad_floor =
            crate::metrics::covariance_nuclear_distance(&d_eps, &d_eps_coarse)?
                + crate::metrics::covariance_nuclear_distance(&d_avg, &d_avg_coarse)?
                + 1e-14;

        entries.push(ConvolutionEntry {
            eps,
            drift_error,
            drift_tail_bound: drift_convolution_tail(
                &exp.drift, lambda_max, x_sup, x_rate, t, eps,
            ),
            drift_quad_floor,
            diffusion_error,
            diffusion_tail_bound: diffusion_convolution_tail(
                &exp.diffusion,
                model,
                x_sup,
                x_rate,
                t,
                eps,
            ),
            diffusion_quad_floor,
        });
    }

    let ratios = |get: fn(&ConvolutionEntry) -> f64| -> Vec<f64> {
        entries
            .windows(2)
            .map(|w| {
                let prev = get(&w[0]);
                if prev > 0.0 {
                    get(&w[1]) / prev
                } else {
                    f64::NAN
                }
            })
            .collect()
    };
    let drift_ratios = ratios(|e| e.drift_error);
    let diffusion_ratios = ratios(|e| e.diffusion_error);

    // verdict: errors decrease along the ladder (rungs already at the
    // quadrature floor are exempt, e.g. time-independent coefficients),
    // stay within the analytic tail allowance, and the final rung sits
    // below twice its floor
    let decreasing = entries.windows(2).all(|w| {
        (w[1].drift_error <= w[0].drift_error
            || w[1].drift_error <= 2.0 * w[1].drift_quad_floor)
            && (w[1].diffusion_error <= w[0].diffusion_error
                || w[1].diffusion_error <= 2.0 * w[1].diffusion_quad_floor)
    });
    let within_bounds = entries.iter().all(|e| {
        e.drift_error <= e.drift_tail_bound + 2.0 * e.drift_quad_floor
            && e.diffusion_error <= e.diffusion_tail_bound + 2.0 * e.diffusion_quad_floor
    });
    let last = entries.last().expect("ladder is non-empty");
    let final_below_floor = last.drift_error
        <= 2.0 * (last.drift_tail_bound + last.drift_quad_floor)
        && last.diffusion_error <= 2.0 * (last.diffusion_tail_bound + last.diffusion_quad_floor);

    Ok(ConvolutionReport {
        meta: RunMeta::new(&exp.raw),
        tau,
        t,
        entries,
        drift_ratios,
        diffusion_ratios,
        verdict: Verdict::from_bool(decreasing && within_bounds && final_below_floor),
    })
}

fn simpson_mat_checked(
    f: &dyn Fn(f64) -> Result<DMatrix<f64>>,
    a: f64,
    b: f64,
    n: usize,
) -> Result<DMatrix<f64>> {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h)? * w;
    }
    Ok(acc * (h / 3.0))
}

/// Optional overrides for the stationarity check (the negative control
/// skips burn-in and starts far from equilibrium).
#[derive(Debug, Clone)]
pub struct StationarityControl {
    pub t_burn: f64,
    pub x0: Vec<f64>,
}

/// Simulates the averaged solution and compares its marginal means and
/// covariances at five equally spaced window times.
pub fn run_stationarity_check(
    exp: &Experiment,
    control: Option<&StationarityControl>,
) -> Result<StationarityReport> {
    let constants = constants_for(exp)?;
    require_contraction(&constants)?;
    let t_burn = match control {
        Some(c) => c.t_burn,
        None => burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?,
    };
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
    let master = exp.raw.master_seed;
    let n = exp.raw.n_paths;
    let config = exp.solver_config(0.0, t_burn, substream_seed(master, 20));
    let x0 = match control {
        Some(c) => DVector::from_column_slice(&c.x0),
        None => DVector::zeros(exp.model.state_dim()),
    };
    let ensemble = simulate_ensemble_from(&exp.model, &averaged, &config, n, &x0)?;

    let grid = ensemble.times();
    let last = grid.len() - 1;
    let mut indices: Vec<usize> = (0..=4).map(|k| (k * last + 2) / 4).collect();
    indices.dedup();
    let check_times: Vec<f64> = indices.iter().map(|&i| grid[i]).collect();

    // pairwise mean comparison: per-path differences give the exact
    // standard error of the (correlated) mean difference
    let mut mean_checks = Vec::new();
    for (a_pos, &ia) in indices.iter().enumerate() {
        for &ib in indices.iter().skip(a_pos + 1) {
            let diffs: Vec<DVector<f64>> = (0..n)
                .map(|p| &ensemble.path(p)[ia] - &ensemble.path(p)[ib])
                .collect();
            let mut mean = DVector::zeros(exp.model.state_dim());
            for d in &diffs {
                mean += d;
            }
            mean /= n as f64;
            let mut var_sum = 0.0;
            for d in &diffs {
                var_sum += (d - &mean).norm_squared();
            }
            let threshold = 3.0 * (var_sum / n as f64 / n as f64).sqrt();
            let value = mean.norm();
            mean_checks.push(MeanPairCheck {
                time_a: grid[ia],
                time_b: grid[ib],
                mean_difference_norm: value,
                threshold,
                pass: value <= threshold,
            });
        }
    }

    // bootstrap noise scale of each covariance estimate, then pairwise
    // nuclear-distance comparison at three combined noise scales
    let covariances: Vec<DMatrix<f64>> =
        indices.iter().map(|&i| ensemble.marginal_covariance(i)).collect();
    let n_boot = 30;
    let mut noise = Vec::with_capacity(indices.len());
    for (pos, &i) in indices.iter().enumerate() {
        let mut gen = substream_rng(master, 21 + pos as u64);
        let mut acc = 0.0;
        for _ in 0..n_boot {
            use rand::Rng as _;
            let sample: Vec<usize> = (0..n).map(|_| gen.gen_range(0..n)).collect();
            let mut mean = DVector::zeros(exp.model.state_dim());
            for &p in &sample {
                mean += &ensemble.path(p)[i];
            }
            mean /= n as f64;
            let mut cov = DMatrix::zeros(exp.model.state_dim(), exp.model.state_dim());
            for &p in &sample {
                let c = &ensemble.path(p)[i] - &mean;
                cov += &c * c.transpose();
            }
            cov /= n as f64;
            acc += nuclear_norm(&(&cov - &covariances[pos]))?.powi(2);
        }
        noise.push((acc / n_boot as f64).sqrt());
    }
    let mut covariance_checks = Vec::new();
    for (a_pos, &ia) in indices.iter().enumerate() {
        for (offset, &ib) in indices.iter().enumerate().skip(a_pos + 1) {
            let value = nuclear_norm(&(&covariances[a_pos] - &covariances[offset]))?;
            let threshold =
                3.0 * (noise[a_pos].powi(2) + noise[offset].powi(2)).sqrt();
            covariance_checks.push(CovariancePairCheck {
                time_a: grid[ia],
                time_b: grid[ib],
                nuclear_distance: value,
                threshold,
                pass: value <= threshold,
            });
        }
    }

    let pass = mean_checks.iter().all(|c| c.pass) && covariance_checks.iter().all(|c| c.pass);
    Ok(StationarityReport {
        meta: RunMeta::new(&exp.raw),
        t_burn,
        n_paths: n,
        check_times,
        mean_checks,
        covariance_checks,
        verdict: Verdict::from_bool(pass),
    })
}

/// Monte Carlo verification of the stochastic-integral moment inequality on
/// a frozen trajectory of the oscillating system.
pub fn run_novikov_verification(exp: &Experiment) -> Result<NovikovReport> {
    let (p_values, n_samples) = match &exp.raw.novikov {
        Some(nov) => (nov.p_values.clone(), nov.n_samples),
        None => (DEFAULT_P_LIST.to_vec(), 20_000),
    };
    let constants = constants_for(exp)?;
    require_contraction(&constants)?;
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?;
    let eps = exp.raw.eps_ladder[0];
    let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps)?;
    let master = exp.raw.master_seed;
    let config = exp.solver_config(eps, t_burn, substream_seed(master, 30));
    let x0 = DVector::zeros(exp.model.state_dim());
    let states = crate::solver::integrate_path(
        &exp.model,
        &system,
        &config,
        substream_seed(master, 30),
        &x0,
    )?;
    let times = config.grid()?;

    let mut cases = Vec::with_capacity(p_values.len());
    let mut pass = true;
    for (i, &p) in p_values.iter().enumerate() {
        let report = verify_novikov_mc(
            &exp.model,
            &exp.diffusion,
            &times,
            &states,
            p,
            n_samples,
            substream_seed(master, 31 + i as u64),
        )?;
        if p == 2.0 {
            // Ito isometry: equality within Monte Carlo noise
            let se = report.lhs_std_error / report.rhs.max(1e-300);
            pass &= (report.ratio - 1.0).abs() <= 3.0 * se;
        } else {
            pass &= report.ratio <= 1.0;
        }
        cases.push(report);
    }
    Ok(NovikovReport {
        meta: RunMeta::new(&exp.raw),
        eps,
        cases,
        verdict: Verdict::from_bool(pass),
    })
}

/// Analytic and simulation-driven checks of the Gronwall-type bound.
pub fn run_gronwall_verification(exp: &Experiment) -> Result<GronwallVerifyReport> {
    // constant forcing reproduces alpha delta / (delta - beta)
    let times: Vec<f64> = (0..2000).map(|i| -40.0 + 0.04 * i as f64).collect();
    let alpha_const = 0.7;
    let alpha = vec![alpha_const; times.len()];
    let betas = [0.3, 0.2];
    let deltas = [1.0, 2.0];
    let beta: f64 = betas.iter().sum();
    let bound =
        crate::analysis::gronwall_bound(&times, &alpha, &betas, &deltas, 1.0 - beta)?;
    let expected = alpha_const * 1.0 / (1.0 - beta);
    let constant_alpha_relative_error =
        (bound.last().unwrap() - expected).abs() / expected;

    // exponential forcing against its antiderivative
    let gamma = 0.8;
    let t0 = -30.0;
    let fine: Vec<f64> = (0..300_000).map(|i| t0 + 2e-4 * i as f64).collect();
    let alpha_exp: Vec<f64> = fine.iter().map(|&t| (gamma * t / 2.0).exp()).collect();
    let beta_single = 0.4;
    let bound_exp =
        crate::analysis::gronwall_bound(&fine, &alpha_exp, &[beta_single], &[gamma + beta_single], gamma)?;
    let mut exponential_alpha_relative_error = 0.0_f64;
    for (idx, &t) in fine.iter().enumerate().skip(10).step_by(4999) {
        let conv =
            ((gamma * t / 2.0).exp() - (-gamma * t + 1.5 * gamma * t0).exp()) / (1.5 * gamma);
        let reference = alpha_exp[idx] + beta_single * conv;
        exponential_alpha_relative_error = exponential_alpha_relative_error
            .max((bound_exp[idx] - reference).abs() / reference);
    }

    // simulated moment-difference curve from the continuity coupling
    let cont = exp
        .raw
        .continuity
        .as_ref()
        .ok_or_else(|| Error::config("configuration has no continuity section"))?;
    let v = DVector::from_column_slice(&cont.perturbation_vector);
    let amp = cont.amplitudes.first().copied().unwrap_or(0.0);
    let worst = perturbed_drift(&exp.drift, &v, amp);
    let shared_k = combined_growth_constant(&worst, &exp.diffusion);
    let constants = compute_constants(shared_k, exp.model.delta(), exp.model.trace_q(), &[])?;
    require_contraction(&constants)?;
    let simulated = continuity_gronwall_check(
        exp,
        &v,
        amp,
        shared_k,
        substream_seed(exp.raw.master_seed, 13),
    )?;

    let pass = constant_alpha_relative_error <= 1e-10
        && exponential_alpha_relative_error <= 1e-8
        && simulated.report.hypothesis_holds
        && simulated.report.conclusion_holds;
    Ok(GronwallVerifyReport {
        meta: RunMeta::new(&exp.raw),
        constant_alpha_relative_error,
        exponential_alpha_relative_error,
        simulated,
        verdict: Verdict::from_bool(pass),
    })
}

/// Evaluates the closed-form constants and whether the contraction
/// conditions hold.
pub fn run_constants_check(exp: &Experiment) -> Result<ConstantsCheckReport> {
    let constants = constants_for(exp)?;
    Ok(ConstantsCheckReport {
        meta: RunMeta::new(&exp.raw),
        theta_below_one: constants.theta < 1.0,
        theta_prime_below_one: constants.theta_prime < 1.0,
        constants,
    })
}

/// Audits the averaged coefficients at probe states: quadrature means
/// against the closed forms and the factorization of the averaged
/// covariance.
pub fn run_average_audit(exp: &Experiment, n_probes: usize) -> Result<AverageReport> {
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
    let q = exp.model.q_matrix();
    let omega_min = exp
        .drift
        .min_frequency()
        .into_iter()
        .chain(exp.diffusion.min_frequency())
        .fold(f64::NAN, f64::min);
    let omega_max = exp
        .drift
        .max_frequency()
        .into_iter()
        .chain(exp.diffusion.max_frequency())
        .fold(f64::NAN, f64::max);
    // 1e4 periods of the slowest mode, resolved to 1/64 of the fastest
    let (horizon, n_quad) = if omega_min.is_finite() {
        let horizon = 1.0e4 * 2.0 * std::f64::consts::PI / omega_min;
        let n = (horizon / (2.0 * std::f64::consts::PI / omega_max / 64.0)).ceil() as usize;
        (horizon, n)
    } else {
        (1.0e3, 100_000)
    };

    let mut gen = substream_rng(exp.raw.master_seed, 40);
    let mut probes = Vec::with_capacity(n_probes.max(1));
    let mut pass = true;
    for probe_index in 0..n_probes.max(1) {
        use rand::Rng as _;
        let x = if probe_index == 0 {
            DVector::zeros(exp.model.state_dim())
        } else {
            DVector::from_fn(exp.model.state_dim(), |_, _| gen.gen_range(-1.5..1.5))
        };
        let f0 = averaged.f0(&x);
        let numeric = exp.drift.average_numeric(&x, 0.0, horizon, n_quad)?;
        let drift_numeric_error = (&numeric - &f0).norm();
        let drift_tail_bound =
            crate::coeff::drift_average_tail_bound(&exp.drift, &x, horizon) + 1e-9;
        let (_, covariance_numeric_error) = exp
            .diffusion
            .averaged_covariance_numeric(&exp.model, &x, 0.0, horizon, n_quad)?;
        let h0 = averaged.h0(&x)?;
        let g0 = averaged.g0(&x)?;
        let recon = &g0 * &q * g0.transpose();
        let h0_scale = nuclear_norm(&h0)?.max(1e-300);
        let g0_reconstruction_relative_error =
            crate::metrics::covariance_nuclear_distance(&recon, &h0)? / h0_scale;
        pass &= drift_numeric_error <= drift_tail_bound
            && covariance_numeric_error <= 1e-3
            && g0_reconstruction_relative_error <= 1e-9;
        probes.push(AverageProbe {
            x: x.iter().copied().collect(),
            f0: f0.iter().copied().collect(),
            drift_numeric_error,
            drift_tail_bound,
            covariance_numeric_error,
            g0_reconstruction_relative_error,
        });
    }
    Ok(AverageReport {
        meta: RunMeta::new(&exp.raw),
        horizon,
        probes,
        verdict: Verdict::from_bool(pass),
    })
}

/// One ensemble dumped to CSV and binary.
pub fn run_simulate(
    exp: &Experiment,
    eps: f64,
    out_dir: &std::path::Path,
) -> Result<SimulateReport> {
    let (ensemble, t_burn) = simulate_one(
        exp,
        eps,
        exp.raw.n_paths,
        substream_seed(exp.raw.master_seed, 50),
    )?;
    std::fs::create_dir_all(out_dir)?;
    ensemble.save_csv(&out_dir.join("ensemble.csv"))?;
    ensemble.save_binary(&out_dir.join("ensemble.bin"))?;
    // names relative to the report so identical runs emit identical bytes
    let mut files = vec!["ensemble.csv".to_string(), "ensemble.bin".to_string()];
    // in the Gaussian regime the exact marginal moments ride along
    if exp.diffusion.is_additive() {
        let config = exp.solver_config(eps, t_burn, substream_seed(exp.raw.master_seed, 50));
        let moments = if eps == 0.0 {
            let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
            moment_odes_averaged(&exp.model, &averaged, &config, 10)?
        } else {
            moment_odes_oscillating(&exp.model, &exp.drift, &exp.diffusion, &config, 10)?
        };
        moments.save_csv(&out_dir.join("moments.csv"))?;
        files.push("moments.csv".to_string());
    }
    Ok(SimulateReport {
        meta: RunMeta::new(&exp.raw),
        eps,
        n_paths: exp.raw.n_paths,
        t_burn,
        files,
    })
}

/// Cross-check of the Gaussian scenario: empirical marginal W2 at the most
/// informative grid time against the closed-form value from the moment
/// equations. Returns `(empirical, closed_form, time_index)`.
pub fn gaussian_marginal_cross_check(
    exp: &Experiment,
    eps: f64,
    n_paths: usize,
) -> Result<(f64, f64, usize)> {
    if !exp.diffusion.is_additive() {
        return Err(Error::NonAdditiveDiffusion);
    }
    let constants = constants_for(exp)?;
    require_contraction(&constants)?;
    let t_burn = burn_in_length(&exp.model, &constants, exp.raw.burn_in_tol)?;
    let averaged = AveragedCoefficients::new(&exp.drift, &exp.diffusion, &exp.model)?;
    let master = exp.raw.master_seed;

    let cfg_eps = exp.solver_config(eps, t_burn, substream_seed(master, 60));
    let cfg_avg = exp.solver_config(0.0, t_burn, substream_seed(master, 61));
    let eps_moments = moment_odes_oscillating(&exp.model, &exp.drift, &exp.diffusion, &cfg_eps, 10)?;
    let avg_moments = moment_odes_averaged(&exp.model, &averaged, &cfg_avg, 10)?;
    let curve = marginal_w2_curve(&eps_moments, &avg_moments)?;
    let (best_index, closed) = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite distances"))
        .map(|(i, &v)| (i, v))
        .expect("non-empty grid");

    let system = OscillatingSystem::new(&exp.drift, &exp.diffusion, eps)?;
    let ens_eps = simulate_ensemble(&exp.model, &system, &cfg_eps, n_paths)?;
    let ens_avg = simulate_ensemble(&exp.model, &averaged, &cfg_avg, n_paths)?;
    let empirical = empirical_w2_marginal(&ens_eps, &ens_avg, best_index)?.value;
    Ok((empirical, closed, best_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn continuity_schedule_converges() {
        let mut config = scenarios::gaussian_scenario();
        config.n_paths = 128;
        let exp = Experiment::from_config(&config).unwrap();
        let report = run_coefficient_continuity(&exp).unwrap();
        assert!(
            report.summary.verdict.is_pass(),
            "schedule {:?} vs baseline {}",
            report.summary.values,
            report.summary.baseline
        );
        // schedule ends at the limit system itself: identical paths
        assert_eq!(*report.summary.values.last().unwrap(), 0.0);
        assert!(report.gronwall.report.hypothesis_holds);
        assert!(report.gronwall.report.conclusion_holds);
        assert!(report.theta_prime_shared < 1.0);
    }

    #[test]
    fn continuity_with_constant_schedule_sits_at_zero() {
        let mut config = scenarios::gaussian_scenario();
        config.n_paths = 32;
        config.continuity = Some(crate::config::ContinuityConfig {
            perturbation_vector: vec![0.1, 0.0],
            amplitudes: vec![0.0, 0.0, 0.0],
        });
        let exp = Experiment::from_config(&config).unwrap();
        let report = run_coefficient_continuity(&exp).unwrap();
        // every schedule entry equals the limit system, coupled to the same
        // noise: the distances vanish identically
        assert!(report.summary.values.iter().all(|&v| v == 0.0));
        assert!(report.summary.verdict.is_pass());
    }

    #[test]
    fn convolution_check_on_time_independent_coefficients_sits_at_floor() {
        let mut config = scenarios::time_independent_scenario();
        config.convolution = scenarios::reference_scenario().convolution;
        let exp = Experiment::from_config(&config).unwrap();
        let report = run_convolution_average_check(&exp).unwrap();
        for e in &report.entries {
            assert_eq!(e.drift_tail_bound, 0.0);
            assert!(
                e.drift_error <= 2.0 * e.drift_quad_floor,
                "drift error {} above the quadrature floor {}",
                e.drift_error,
                e.drift_quad_floor
            );
            assert!(e.diffusion_error <= 2.0 * e.diffusion_quad_floor);
        }
        assert!(report.verdict.is_pass());
    }

    #[test]
    fn convergence_refuses_without_contraction() {
        let mut config = scenarios::moment_bound_scenario(0.6);
        // inflate the diffusion so theta' crosses 1
        for row in &mut config.diffusion.base.constant {
            for v in row.iter_mut() {
                *v *= 10.0;
            }
        }
        let exp = Experiment::from_config(&config).unwrap();
        match run_convergence(&exp) {
            Err(Error::NoContraction { theta_prime }) => assert!(theta_prime >= 1.0),
            other => panic!("expected NoContraction, got {other:?}"),
        }
    }
}
