//! Exact marginal laws for the affine-drift, additive-noise case.
//!
//! When the drift is affine in the state and the diffusion does not depend
//! on the state, the solution is a Gaussian process and its marginal law is
//! determined by the moment equations
//!
//! ```text
//! m'     = (-L + B(t)) m + b(t)
//! Sigma' = (-L + B(t)) Sigma + Sigma (-L + B(t))* + G(t) Q G*(t)
//! ```
//!
//! with `L = diag(lambda)`. Integrating these with a classical fourth-order
//! one-step method on a refinement of the simulation grid gives marginal
//! means and covariances that are exact up to O(fine_step^4), an independent
//! oracle for the stochastic pipeline and for the averaging limit (where the
//! `eps = 0` covariance solves the Lyapunov equation driven by the averaged
//! noise covariance).

use nalgebra::{DMatrix, DVector};
use std::io::Write;
use std::path::Path;

use crate::coeff::{AveragedCoefficients, QuasiPeriodicDiffusion, QuasiPeriodicDrift};
use crate::error::{Error, Result};
use crate::metrics::gaussian_w2;
use crate::model::GalerkinModel;
use crate::solver::SolverConfig;

/// Marginal Gaussian law along the recording grid.
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    times: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl GaussianMoments {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.means[k]
    }

    pub fn covariance(&self, k: usize) -> &DMatrix<f64> {
        &self.covariances[k]
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// CSV dump: one row per time, mean coordinates then the upper triangle
    /// of the covariance (row-major).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.means.first().map_or(0, |m| m.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("m_{i}")));
        for i in 1..=d {
            for j in i..=d {
                header.push(format!("s_{i}{j}"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(self.means[k].iter().map(|v| format!("{v}")));
            for i in 0..d {
                for j in i..d {
                    row.push(format!("{}", self.covariances[k][(i, j)]));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Moment evolution for the oscillating system `F(t/eps, .), G(t/eps)`.
///
/// `fine_substeps >= 10` fourth-order substeps per simulation step.
pub fn moment_odes_oscillating(
    model: &GalerkinModel,
    drift: &QuasiPeriodicDrift,
    diffusion: &QuasiPeriodicDiffusion,
    config: &SolverConfig,
    fine_substeps: usize,
) -> Result<GaussianMoments> {
    if !diffusion.is_additive() {
        return Err(Error::NonAdditiveDiffusion);
    }
    if !(config.eps > 0.0) {
        return Err(Error::config(
            "oscillating moment equations need eps > 0; use the averaged variant",
        ));
    }
    let eps = config.eps;
    let q = model.q_matrix();
    let x_any = DVector::zeros(model.state_dim());
    let bb = |t: f64| drift_blocks(drift, t / eps);
    let noise = |t: f64| {
        let g = diffusion
            .eval(t / eps, &x_any)
            .expect("dimensions checked at entry");
        &g * &q * g.transpose()
    };
    integrate_moments(model, config, fine_substeps, bb, noise)
}

/// Moment evolution for the averaged pair `(F0, G0)`.
pub fn moment_odes_averaged(
    model: &GalerkinModel,
    averaged: &AveragedCoefficients,
    config: &SolverConfig,
    fine_substeps: usize,
) -> Result<GaussianMoments> {
    if !averaged.is_additive() {
        return Err(Error::NonAdditiveDiffusion);
    }
    let q = model.q_matrix();
    let g0 = averaged.g0(&DVector::zeros(model.state_dim()))?;
    let noise_cov = &g0 * &q * g0.transpose();
    let f0 = averaged.f0_map().clone();
    let bb = move |_t: f64| (f0.matrix.clone(), f0.vector.clone());
    let noise = move |_t: f64| noise_cov.clone();
    integrate_moments(model, config, fine_substeps, bb, noise)
}

fn drift_blocks(drift: &QuasiPeriodicDrift, s: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut mat = drift.base_matrix().clone();
    let mut vec = drift.base_vector().clone();
    for mode in drift.modes() {
        let (sn, cs) = (mode.omega * s).sin_cos();
        mat += &mode.cos_matrix * cs + &mode.sin_matrix * sn;
        vec += &mode.cos_vector * cs + &mode.sin_vector * sn;
    }
    (mat, vec)
}

fn integrate_moments(
    model: &GalerkinModel,
    config: &SolverConfig,
    fine_substeps: usize,
    bb: impl Fn(f64) -> (DMatrix<f64>, DVector<f64>),
    noise: impl Fn(f64) -> DMatrix<f64>,
) -> Result<GaussianMoments> {
    if fine_substeps < 10 {
        return Err(Error::config(format!(
            "need at least 10 fourth-order substeps per simulation step, got {fine_substeps}"
        )));
    }
    let plan = config.plan()?;
    let d = model.state_dim();
    let lambda = DMatrix::from_diagonal(&DVector::from_vec(
        model.generator_eigenvalues().to_vec(),
    ));
    let rhs = |t: f64, m: &DVector<f64>, s: &DMatrix<f64>| {
        let (b_mat, b_vec) = bb(t);
        let a_mat = &b_mat - &lambda;
        let dm = &a_mat * m + b_vec;
        let ds = &a_mat * s + s * a_mat.transpose() + noise(t);
        (dm, ds)
    };
    let dt = plan.step / fine_substeps as f64;
    let mut m = DVector::zeros(d);
    let mut s = DMatrix::zeros(d, d);
    let mut means = Vec::new();
    let mut covariances = Vec::new();
    if plan.is_recorded(0) {
        means.push(m.clone());
        covariances.push((&s + s.transpose()) * 0.5);
    }
    for n in 0..plan.total_steps() {
        let t_base = plan.t_start + n as f64 * plan.step;
        for sub in 0..fine_substeps {
            let t = t_base + sub as f64 * dt;
            let (k1m, k1s) = rhs(t, &m, &s);
            let (k2m, k2s) = rhs(t + dt / 2.0, &(&m + &k1m * (dt / 2.0)), &(&s + &k1s * (dt / 2.0)));
            let (k3m, k3s) = rhs(t + dt / 2.0, &(&m + &k2m * (dt / 2.0)), &(&s + &k2s * (dt / 2.0)));
            let (k4m, k4s) = rhs(t + dt, &(&m + &k3m * dt), &(&s + &k3s * dt));
            m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (dt / 6.0);
            s += (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (dt / 6.0);
        }
        s = (&s + s.transpose()) * 0.5;
        if plan.is_recorded(n + 1) {
            means.push(m.clone());
            covariances.push((&s + s.transpose()) * 0.5);
        }
    }
    // share the solver's grid arithmetic so grids compare bit-equal
    let times = config.grid()?;
    debug_assert_eq!(times.len(), means.len());
    Ok(GaussianMoments {
        times,
        means,
        covariances,
    })
}

/// Pointwise closed-form W2 between two marginal Gaussian laws on a shared
/// grid.
pub fn marginal_w2_curve(a: &GaussianMoments, b: &GaussianMoments) -> Result<Vec<f64>> {
    if a.times != b.times {
        return Err(Error::GridMismatch);
    }
    (0..a.n_times())
        .map(|k| gaussian_w2(a.mean(k), a.covariance(k), b.mean(k), b.covariance(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::AffineMatrixMap;
    use approx::assert_relative_eq;

    fn config(step: f64, window: (f64, f64), t_burn: f64, eps: f64) -> SolverConfig {
        SolverConfig {
            eps,
            step,
            window,
            t_burn,
            grid_stride: 10,
            master_seed: 0,
        }
    }

    #[test]
    fn scalar_lyapunov_fixed_point() {
        // B = 0, b = 0, G = sigma: Sigma(t) -> sigma^2 / (2 lambda)
        let lambda = 1.3;
        let sigma = 0.8;
        let model = GalerkinModel::new(vec![lambda], vec![1.0]).unwrap();
        let drift =
            QuasiPeriodicDrift::constant(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let diffusion = QuasiPeriodicDiffusion::constant(DMatrix::from_element(1, 1, sigma));
        let cfg = config(0.01, (0.0, 1.0), 8.0, 1.0);
        let moments =
            moment_odes_oscillating(&model, &drift, &diffusion, &cfg, 10).unwrap();
        let target = sigma * sigma / (2.0 * lambda);
        // at the window start the transient is e^{-2 lambda T_burn} < 1e-9
        assert_relative_eq!(
            moments.covariance(0)[(0, 0)],
            target,
            max_relative = 1e-6
        );
        assert!(moments.mean(0).norm() < 1e-12);
    }

    #[test]
    fn deterministic_part_matches_closed_form_and_refinement() {
        // G = 0: Sigma stays 0 and m solves m' = -lambda m + b
        let lambda = 0.9;
        let b = 0.4;
        let model = GalerkinModel::new(vec![lambda], vec![1.0]).unwrap();
        let drift = QuasiPeriodicDrift::constant(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, b),
        )
        .unwrap();
        let diffusion = QuasiPeriodicDiffusion::constant(DMatrix::zeros(1, 1));
        let cfg = config(0.01, (0.0, 2.0), 0.0, 1.0);
        let coarse = moment_odes_oscillating(&model, &drift, &diffusion, &cfg, 10).unwrap();
        let fine = moment_odes_oscillating(&model, &drift, &diffusion, &cfg, 40).unwrap();
        for k in 0..coarse.n_times() {
            let t = coarse.times()[k];
            let exact = b / lambda * (1.0 - (-lambda * t).exp());
            assert_relative_eq!(coarse.mean(k)[0], exact, epsilon = 1e-10);
            assert!((coarse.mean(k)[0] - fine.mean(k)[0]).abs() < 1e-8);
            assert!(coarse.covariance(k)[(0, 0)].abs() < 1e-14);
        }
    }

    #[test]
    fn averaged_constant_coefficients_are_stationary() {
        let model = GalerkinModel::new(vec![1.0, 2.0], vec![0.4, 0.3]).unwrap();
        let drift = QuasiPeriodicDrift::constant(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.1, -0.1, 0.0]),
            DVector::from_vec(vec![0.2, 0.0]),
        )
        .unwrap();
        let diffusion = QuasiPeriodicDiffusion::constant(DMatrix::from_row_slice(
            2,
            2,
            &[0.5, 0.0, 0.1, 0.3],
        ));
        let avg = AveragedCoefficients::new(&drift, &diffusion, &model).unwrap();
        let cfg = config(0.01, (0.0, 2.0), 16.0, 0.0);
        let moments = moment_odes_averaged(&model, &avg, &cfg, 10).unwrap();
        let first = moments.covariance(0);
        let last = moments.covariance(moments.n_times() - 1);
        assert!(
            (first - last).norm() <= 1e-6,
            "covariance drifted by {}",
            (first - last).norm()
        );
        let dm = (moments.mean(0) - moments.mean(moments.n_times() - 1)).norm();
        assert!(dm <= 1e-6, "mean drifted by {dm}");
    }

    #[test]
    fn rejects_state_dependent_diffusion() {
        let model = GalerkinModel::new(vec![1.0], vec![1.0]).unwrap();
        let drift =
            QuasiPeriodicDrift::constant(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let diffusion = QuasiPeriodicDiffusion::new(
            AffineMatrixMap::new(
                DMatrix::from_element(1, 1, 0.5),
                vec![DMatrix::from_element(1, 1, 0.1)],
            )
            .unwrap(),
            vec![],
        )
        .unwrap();
        let cfg = config(0.01, (0.0, 1.0), 0.0, 1.0);
        assert!(matches!(
            moment_odes_oscillating(&model, &drift, &diffusion, &cfg, 10),
            Err(Error::NonAdditiveDiffusion)
        ));
    }

    #[test]
    fn w2_curve_on_shifted_copies() {
        let model = GalerkinModel::new(vec![1.0], vec![0.5]).unwrap();
        let drift =
            QuasiPeriodicDrift::constant(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let diffusion = QuasiPeriodicDiffusion::constant(DMatrix::from_element(1, 1, 0.6));
        let cfg = config(0.01, (0.0, 1.0), 6.0, 1.0);
        let a = moment_odes_oscillating(&model, &drift, &diffusion, &cfg, 10).unwrap();
        // identical moments: zero curve up to sqrt-of-roundoff in the
        // Bures trace cancellation
        let zero = marginal_w2_curve(&a, &a).unwrap();
        assert!(zero.iter().all(|&v| v < 1e-6));
        // shifted means: constant |shift| curve
        let mut b = a.clone();
        let shift = DVector::from_element(1, 0.7);
        for m in &mut b.means {
            *m += &shift;
        }
        let curve = marginal_w2_curve(&a, &b).unwrap();
        for v in curve {
            assert_relative_eq!(v, 0.7, max_relative = 1e-9);
        }
    }
}
