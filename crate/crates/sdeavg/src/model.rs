//! Finite Galerkin truncation of the Hilbert-space setting.
//!
//! The state space is R^d (the truncation of the solution space), the noise
//! space is R^m. The linear part is a diagonal dissipative generator
//! `A: x_k -> -lambda_k x_k` with all `lambda_k > 0`, so the semigroup
//! `S(t) = e^{tA}` is an explicit contraction with operator norm
//! `e^{-delta t}`, `delta = min_k lambda_k`. The driving noise is a Q-Wiener
//! process whose covariance is diagonal in the simulation basis with
//! nonnegative spectrum `q_1..q_m` and finite trace.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Diagonal Galerkin model: generator spectrum, noise covariance spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalerkinModel {
    generator_eigenvalues: Vec<f64>,
    q_eigenvalues: Vec<f64>,
}

impl GalerkinModel {
    /// Builds a model from the generator spectrum (`lambda_k > 0`) and the
    /// noise covariance spectrum (`q_j >= 0`).
    pub fn new(generator_eigenvalues: Vec<f64>, q_eigenvalues: Vec<f64>) -> Result<Self> {
        if generator_eigenvalues.is_empty() {
            return Err(Error::config("state dimension must be at least 1"));
        }
        if q_eigenvalues.is_empty() {
            return Err(Error::config("noise dimension must be at least 1"));
        }
        for &l in &generator_eigenvalues {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::config(format!(
                    "generator eigenvalues must be positive and finite, got {l}"
                )));
            }
        }
        for &q in &q_eigenvalues {
            if !(q >= 0.0) || !q.is_finite() {
                return Err(Error::config(format!(
                    "noise covariance eigenvalues must be nonnegative and finite, got {q}"
                )));
            }
        }
        Ok(Self {
            generator_eigenvalues,
            q_eigenvalues,
        })
    }

    /// State dimension d.
    pub fn state_dim(&self) -> usize {
        self.generator_eigenvalues.len()
    }

    /// Noise dimension m.
    pub fn noise_dim(&self) -> usize {
        self.q_eigenvalues.len()
    }

    pub fn generator_eigenvalues(&self) -> &[f64] {
        &self.generator_eigenvalues
    }

    pub fn q_eigenvalues(&self) -> &[f64] {
        &self.q_eigenvalues
    }

    /// Dissipation rate `delta = min_k lambda_k`.
    pub fn delta(&self) -> f64 {
        self.generator_eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest generator eigenvalue (fastest decaying mode).
    pub fn lambda_max(&self) -> f64 {
        self.generator_eigenvalues
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Trace of the noise covariance, `sum_j q_j`.
    pub fn trace_q(&self) -> f64 {
        self.q_eigenvalues.iter().sum()
    }

    /// The covariance operator Q as a dense matrix.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.q_eigenvalues.clone()))
    }

    /// Applies the semigroup: `(S(t)x)_k = e^{-lambda_k t} x_k`.
    ///
    /// Rejects negative times and dimension mismatches.
    pub fn semigroup_apply(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "semigroup_apply",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let mut out = x.clone();
        for (k, &lambda) in self.generator_eigenvalues.iter().enumerate() {
            out[k] *= (-lambda * t).exp();
        }
        Ok(out)
    }

    /// Samples `n_steps` independent Q-Wiener increments over steps of
    /// length `h`: coordinate `j` of each increment is `N(0, h q_j)`.
    ///
    /// Identical `(seed, h, n_steps)` produce bit-identical output.
    pub fn sample_wiener_increments(
        &self,
        h: f64,
        n_steps: usize,
        seed: u64,
    ) -> Result<Vec<DVector<f64>>> {
        if !(h > 0.0) {
            return Err(Error::NonPositiveStep(h));
        }
        let std_devs: Vec<f64> = self.q_eigenvalues.iter().map(|&q| (h * q).sqrt()).collect();
        let mut gen = rng::rng_from_seed(seed);
        let m = self.noise_dim();
        let mut out = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let mut dw = DVector::zeros(m);
            for j in 0..m {
                let z: f64 = gen.sample(StandardNormal);
                dw[j] = std_devs[j] * z;
            }
            out.push(dw);
        }
        Ok(out)
    }
}

/// Nuclear norm of a symmetric matrix: the sum of the absolute eigenvalues.
///
/// Symmetry is checked to a relative tolerance of 1e-10; non-symmetric input
/// is rejected rather than silently symmetrized.
pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    linalg::check_symmetric(m, linalg::SYMMETRY_TOL)?;
    let (values, _) = linalg::symmetric_eigen_sorted(m);
    Ok(values.iter().map(|v| v.abs()).sum())
}
