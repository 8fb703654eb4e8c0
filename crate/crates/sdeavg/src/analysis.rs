//! Closed-form constants of the contraction and moment estimates, and
//! numerical verifiers for the inequalities behind them.
//!
//! For Lipschitz/growth constant `K`, dissipation rate `delta` and noise
//! trace `tr Q`, the two contraction constants are
//!
//! ```text
//! theta  = (K^2 / delta) (1 / (2 delta) + tr Q)
//! theta' = (4 K^2 / delta) (1 / delta + tr Q)
//! ```
//!
//! `theta < 1` gives existence and uniqueness of the bounded mild solution;
//! `theta' < 1` additionally bounds its second moment by
//! `theta' / (1 - theta')` and makes the averaging contraction argument work.
//! The p-th moment analogue is
//!
//! ```text
//! theta'_p = (2^{3p/2-1} K^p / delta^{p/2})
//!            (2^{p/2-1} / delta^{p/2} + C_p (tr Q)^{p/2})
//! ```
//!
//! where `C_p` is a constant in the p-th moment inequality for stochastic
//! integrals,
//!
//! ```text
//! E |int_0^t Y dW|^p <= C_p E ( int_0^t tr(Y Q Y*) ds )^{p/2},
//! C_p(c) = (2c)^{p/2} / ( (2+2c)/(p-1) - 2^{p/2} ),   c > (p-1) 2^{p/2-1} - 1,
//! ```
//!
//! valid for every admissible `c` (the denominator is positive exactly on
//! the admissible ray). `C_2(c) = 1` for every admissible `c`, and the
//! inequality is an equality at `p = 2` (Ito isometry). For `p > 2` the map
//! `c -> C_p(c)` has a unique interior minimum, which `novikov_constant`
//! locates by golden-section search on `log c`; the minimized constant tends
//! to 1 as `p` decreases to 2.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::coeff::QuasiPeriodicDiffusion;
use crate::error::{Error, Result};
use crate::model::GalerkinModel;
use crate::rng;

/// The moment constant `theta'_p` together with the Novikov constant used
/// to evaluate it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentConstant {
    pub p: f64,
    pub novikov_c_p: f64,
    pub novikov_c_star: f64,
    pub theta_prime_p: f64,
}

/// All closed-form constants for one `(K, delta, tr Q)` triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub k: f64,
    pub delta: f64,
    pub trace_q: f64,
    pub theta: f64,
    pub theta_prime: f64,
    pub moment_constants: Vec<MomentConstant>,
    /// `theta' / (1 - theta')`, present exactly when `theta' < 1`.
    pub moment_bound_l2: Option<f64>,
}

/// Evaluates the constants for the given parameters and the requested
/// moment orders (each `p >= 2`).
pub fn compute_constants(
    k: f64,
    delta: f64,
    trace_q: f64,
    p_list: &[f64],
) -> Result<ConstantsReport> {
    if !(delta > 0.0) {
        return Err(Error::config(format!(
            "dissipation rate must be positive, got {delta}"
        )));
    }
    if !(k >= 0.0) || !(trace_q >= 0.0) {
        return Err(Error::config(
            "K and trace Q must be nonnegative".to_string(),
        ));
    }
    let theta = k * k / delta * (1.0 / (2.0 * delta) + trace_q);
    let theta_prime = 4.0 * k * k / delta * (1.0 / delta + trace_q);
    let mut moment_constants = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let (c_p, c_star) = novikov_constant(p, None)?;
        moment_constants.push(MomentConstant {
            p,
            novikov_c_p: c_p,
            novikov_c_star: c_star,
            theta_prime_p: theta_prime_p(k, delta, trace_q, p, c_p),
        });
    }
    let moment_bound_l2 = (theta_prime < 1.0).then(|| theta_prime / (1.0 - theta_prime));
    Ok(ConstantsReport {
        k,
        delta,
        trace_q,
        theta,
        theta_prime,
        moment_constants,
        moment_bound_l2,
    })
}

fn theta_prime_p(k: f64, delta: f64, trace_q: f64, p: f64, c_p: f64) -> f64 {
    let half_p = p / 2.0;
    2.0_f64.powf(1.5 * p - 1.0) * k.powf(p) / delta.powf(half_p)
        * (2.0_f64.powf(half_p - 1.0) / delta.powf(half_p) + c_p * trace_q.powf(half_p))
}

/// Lower end of the admissible ray for the Novikov parameter `c`.
pub fn novikov_admissible_lower_bound(p: f64) -> f64 {
    (p - 1.0) * 2.0_f64.powf(p / 2.0 - 1.0) - 1.0
}

/// `C_p(c)` on the admissible ray (where the denominator is positive).
pub fn novikov_c_of(p: f64, c: f64) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::config(format!("moment order p must be >= 2, got {p}")));
    }
    let lower = novikov_admissible_lower_bound(p);
    if !(c > lower) {
        return Err(Error::InadmissibleNovikovC {
            p,
            c,
            lower_bound: lower,
        });
    }
    let denom = (2.0 + 2.0 * c) / (p - 1.0) - 2.0_f64.powf(p / 2.0);
    Ok((2.0 * c).powf(p / 2.0) / denom)
}

/// Returns `(C_p, c)`. With `c` given, evaluates `C_p(c)`; otherwise
/// minimizes over the admissible ray by golden-section search on `log c`
/// (absolute tolerance 1e-8 on `log c`) and returns the minimizing pair.
pub fn novikov_constant(p: f64, c: Option<f64>) -> Result<(f64, f64)> {
    if let Some(c) = c {
        return Ok((novikov_c_of(p, c)?, c));
    }
    if !(p >= 2.0) {
        return Err(Error::config(format!("moment order p must be >= 2, got {p}")));
    }
    let lower = novikov_admissible_lower_bound(p).max(0.0);
    let lo = (lower + 1e-9 * (1.0 + lower)).max(1e-12);
    let hi = 1e9_f64.max(lo * 10.0);
    let f = |u: f64| novikov_c_of(p, u.exp()).unwrap_or(f64::INFINITY);
    let u_star = golden_section_min(f, lo.ln(), hi.ln(), 1e-8);
    let c_star = u_star.exp();
    Ok((novikov_c_of(p, c_star)?, c_star))
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Outcome of checking a sampled curve against the Gronwall-type bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GronwallReport {
    pub hypothesis_holds: bool,
    pub conclusion_holds: bool,
    /// Smallest slack `rhs(t) - g(t)` in the hypothesis inequality.
    pub hypothesis_margin: f64,
    /// Smallest slack `bound(t) - g(t)` in the conclusion inequality.
    pub conclusion_margin: f64,
}

fn check_grid(times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            context: "curve grid",
            expected: times.len(),
            found: values.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::config("curve needs at least two grid points"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("curve grid must be strictly increasing"));
    }
    Ok(())
}

/// Exponentially weighted running integral
/// `I(t_i) = int_{t_0}^{t_i} e^{-rate (t_i - s)} f(s) ds`
/// on the grid, treating `f` as piecewise linear between nodes and the
/// exponential kernel exactly (so the result is exact for affine `f`, and
/// in particular the constant-forcing fixed point carries no quadrature
/// error). The tail below `t_0` is taken as negligible; the caller provides
/// a grid that extends far enough left.
fn exp_convolution(times: &[f64], f: &[f64], rate: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for i in 1..f.len() {
        let h = times[i] - times[i - 1];
        let z = rate * h;
        let decay = (-z).exp();
        // int_0^h e^{-rate (h-u)} ((1 - u/h) A + (u/h) B) du = w_a A + w_b B
        let (w_a, w_b) = if z < 1e-4 {
            (
                h * (0.5 - z / 3.0 + z * z / 8.0),
                h * (0.5 - z / 6.0 + z * z / 24.0),
            )
        } else {
            let w_total = (1.0 - decay) / rate;
            let w_b = 1.0 / rate - (1.0 - decay) / (rate * rate * h);
            (w_total - w_b, w_b)
        };
        out[i] = decay * out[i - 1] + w_a * f[i - 1] + w_b * f[i];
    }
    out
}

/// The bound `t -> alpha(t) + beta int_{t_0}^t e^{-gamma (t-s)} alpha(s) ds`
/// with `beta = sum_i beta_i`, requiring every `delta_i > beta` and
/// `0 < gamma <= min_i delta_i - beta`.
pub fn gronwall_bound(
    times: &[f64],
    alpha: &[f64],
    betas: &[f64],
    deltas: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_grid(times, alpha)?;
    if betas.len() != deltas.len() || betas.is_empty() {
        return Err(Error::config(
            "betas and deltas must be non-empty and of equal length",
        ));
    }
    let beta: f64 = betas.iter().sum();
    let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_delta > beta) {
        return Err(Error::GronwallHypothesis { beta, min_delta });
    }
    if !(gamma > 0.0 && gamma <= min_delta - beta + 1e-15) {
        return Err(Error::config(format!(
            "gamma must lie in (0, {}], got {gamma}",
            min_delta - beta
        )));
    }
    let conv = exp_convolution(times, alpha, gamma);
    Ok(alpha
        .iter()
        .zip(conv.iter())
        .map(|(&a, &c)| a + beta * c)
        .collect())
}

/// Verifies the hypothesis inequality
/// `0 <= g(t) <= alpha(t) + sum_i beta_i int e^{-delta_i (t-s)} g(s) ds`
/// at every grid point, then the conclusion with `gamma = min delta - beta`,
/// reporting the worst margins of both.
pub fn check_gronwall_on_curve(
    times: &[f64],
    g: &[f64],
    alpha: &[f64],
    betas: &[f64],
    deltas: &[f64],
) -> Result<GronwallReport> {
    check_grid(times, g)?;
    check_grid(times, alpha)?;
    if betas.len() != deltas.len() || betas.is_empty() {
        return Err(Error::config(
            "betas and deltas must be non-empty and of equal length",
        ));
    }
    let beta: f64 = betas.iter().sum();
    let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_delta > beta) {
        return Err(Error::GronwallHypothesis { beta, min_delta });
    }
    let convs: Vec<Vec<f64>> = deltas
        .iter()
        .map(|&d| exp_convolution(times, g, d))
        .collect();
    let mut hypothesis_margin = f64::INFINITY;
    for i in 0..g.len() {
        let rhs: f64 =
            alpha[i] + betas.iter().zip(&convs).map(|(&b, c)| b * c[i]).sum::<f64>();
        hypothesis_margin = hypothesis_margin.min(rhs - g[i]).min(g[i]);
    }
    let bound = gronwall_bound(times, alpha, betas, deltas, min_delta - beta)?;
    let conclusion_margin = g
        .iter()
        .zip(bound.iter())
        .map(|(&gi, &bi)| bi - gi)
        .fold(f64::INFINITY, f64::min);
    Ok(GronwallReport {
        hypothesis_holds: hypothesis_margin >= 0.0,
        conclusion_holds: conclusion_margin >= 0.0,
        hypothesis_margin,
        conclusion_margin,
    })
}

/// Monte Carlo check of the p-th moment inequality for the stochastic
/// integral of a frozen (deterministic) integrand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NovikovMcReport {
    pub p: f64,
    pub n_samples: usize,
    /// MC estimate of `E |sum_i Y(t_i) dW_i|^p`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `C_p (sum_i tr(Y Q Y*) h)^{p/2}`, deterministic under the frozen path.
    pub rhs: f64,
    pub ratio: f64,
    pub novikov_c_p: f64,
    pub novikov_c_star: f64,
}

/// Freezes `Y(s) = G(s, x(s))` along the given path and measures both sides
/// of the moment inequality. Increments are left-point over the path grid;
/// samples use per-sample substreams of `seed`.
pub fn verify_novikov_mc(
    model: &GalerkinModel,
    diffusion: &QuasiPeriodicDiffusion,
    path_times: &[f64],
    path_states: &[DVector<f64>],
    p: f64,
    n_samples: usize,
    seed: u64,
) -> Result<NovikovMcReport> {
    if path_times.len() != path_states.len() || path_times.len() < 2 {
        return Err(Error::config(
            "frozen path needs matching times and states with at least two points",
        ));
    }
    if n_samples == 0 {
        return Err(Error::config("need at least one Monte Carlo sample"));
    }
    let (c_p, c_star) = novikov_constant(p, None)?;
    let q = model.q_matrix();
    let n_steps = path_times.len() - 1;
    let integrands: Vec<nalgebra::DMatrix<f64>> = (0..n_steps)
        .map(|i| diffusion.eval(path_times[i], &path_states[i]))
        .collect::<Result<_>>()?;
    let mut quadratic_variation = 0.0;
    for (i, y) in integrands.iter().enumerate() {
        let h = path_times[i + 1] - path_times[i];
        quadratic_variation += (y * &q * y.transpose()).trace() * h;
    }
    let rhs = c_p * quadratic_variation.powf(p / 2.0);

    let q_roots: Vec<f64> = model.q_eigenvalues().iter().map(|&q| q.sqrt()).collect();
    let powers = crate::parallel::map_indexed(n_samples, |s| {
        use rand::Rng as _;
        let mut gen = rng::substream_rng(seed, s as u64);
        let mut z = DVector::zeros(model.state_dim());
        let mut dw = DVector::zeros(model.noise_dim());
        for (i, y) in integrands.iter().enumerate() {
            let sqrt_h = (path_times[i + 1] - path_times[i]).sqrt();
            for (j, root) in q_roots.iter().enumerate() {
                let n: f64 = gen.sample(rand_distr::StandardNormal);
                dw[j] = sqrt_h * root * n;
            }
            z += y * &dw;
        }
        Ok(z.norm().powf(p))
    })?;
    let lhs = powers.iter().sum::<f64>() / n_samples as f64;
    let var = powers.iter().map(|v| (v - lhs).powi(2)).sum::<f64>() / n_samples as f64;
    let lhs_std_error = (var / n_samples as f64).sqrt();
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(NovikovMcReport {
        p,
        n_samples,
        lhs,
        lhs_std_error,
        rhs,
        ratio,
        novikov_c_p: c_p,
        novikov_c_star: c_star,
    })
}
