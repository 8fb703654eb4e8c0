//! Quasi-periodic coefficients and their time averages.
//!
//! Drift and diffusion are affine in the state and trigonometric-polynomial
//! in time:
//!
//! ```text
//! F(t,x) = (B0 + sum_j Bc_j cos(w_j t) + Bs_j sin(w_j t)) x
//!        + b0 + sum_j (bc_j cos(w_j t) + bs_j sin(w_j t))
//! G(t,x) = A0(x) + sum_j (Ac_j(x) cos(w_j t) + As_j(x) sin(w_j t))
//! ```
//!
//! with each `A_*(x)` an affine matrix-valued map of `x`. The frequencies may
//! be incommensurate, so the family is genuinely almost periodic, yet the
//! long-time means exist in closed form: the mean of `cos`/`sin` with
//! positive frequency vanishes, `cos^2` and `sin^2` average to 1/2, and all
//! cross-frequency products average to zero when the frequencies are pairwise
//! distinct. This gives an exact internal oracle for the averaged drift
//!
//! ```text
//! F0(x) = B0 x + b0
//! ```
//!
//! and the averaged noise covariance
//!
//! ```text
//! H0(x) = A0(x) Q A0*(x) + 1/2 sum_j (Ac_j(x) Q Ac_j*(x) + As_j(x) Q As_j*(x)),
//! ```
//!
//! against which the quadrature-based averages are verified. The averaged
//! diffusion `G0(x)` is any d-by-m factor with `G0 Q G0* = H0`, built from
//! the PSD square root of `H0` and the pseudo-inverse of `Q^{1/2}` (noise
//! coordinates with negligible variance are excluded).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GalerkinModel;

/// Relative threshold below which a noise eigenvalue is treated as zero when
/// inverting `Q^{1/2}`.
pub const Q_PINV_TOL: f64 = 1e-12;

/// Lipschitz and linear-growth constants certified by construction.
///
/// `lipschitz` bounds the Lipschitz constant of `x -> F(t, x)` uniformly in
/// `t`; `growth` satisfies `|F(t,x)| <= growth * (1 + |x|)`. Both may
/// overestimate the sharp constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub lipschitz: f64,
    pub growth: f64,
}

/// One oscillatory mode of the drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftMode {
    pub omega: f64,
    pub cos_matrix: DMatrix<f64>,
    pub cos_vector: DVector<f64>,
    pub sin_matrix: DMatrix<f64>,
    pub sin_vector: DVector<f64>,
}

/// Affine-in-state, trigonometric-in-time drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiPeriodicDrift {
    base_matrix: DMatrix<f64>,
    base_vector: DVector<f64>,
    modes: Vec<DriftMode>,
}

fn check_frequencies(omegas: impl Iterator<Item = f64> + Clone) -> Result<()> {
    let freqs: Vec<f64> = omegas.collect();
    for (i, &w) in freqs.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidFrequency(w));
        }
        for &v in &freqs[i + 1..] {
            if w == v {
                return Err(Error::InvalidFrequency(w));
            }
        }
    }
    Ok(())
}

impl QuasiPeriodicDrift {
    pub fn new(
        base_matrix: DMatrix<f64>,
        base_vector: DVector<f64>,
        modes: Vec<DriftMode>,
    ) -> Result<Self> {
        let d = base_vector.len();
        if base_matrix.nrows() != d || base_matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "drift base matrix",
                expected: d,
                found: base_matrix.nrows().max(base_matrix.ncols()),
            });
        }
        for mode in &modes {
            for m in [&mode.cos_matrix, &mode.sin_matrix] {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        context: "drift mode matrix",
                        expected: d,
                        found: m.nrows().max(m.ncols()),
                    });
                }
            }
            for v in [&mode.cos_vector, &mode.sin_vector] {
                if v.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "drift mode vector",
                        expected: d,
                        found: v.len(),
                    });
                }
            }
        }
        check_frequencies(modes.iter().map(|m| m.omega))?;
        Ok(Self {
            base_matrix,
            base_vector,
            modes,
        })
    }

    /// Time-independent drift `x -> B0 x + b0`.
    pub fn constant(base_matrix: DMatrix<f64>, base_vector: DVector<f64>) -> Result<Self> {
        Self::new(base_matrix, base_vector, Vec::new())
    }

    pub fn state_dim(&self) -> usize {
        self.base_vector.len()
    }

    pub fn modes(&self) -> &[DriftMode] {
        &self.modes
    }

    pub fn base_matrix(&self) -> &DMatrix<f64> {
        &self.base_matrix
    }

    pub fn base_vector(&self) -> &DVector<f64> {
        &self.base_vector
    }

    /// Largest mode frequency, `None` for a time-independent drift.
    pub fn max_frequency(&self) -> Option<f64> {
        self.modes
            .iter()
            .map(|m| m.omega)
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.max(w))))
    }

    /// Smallest mode frequency.
    pub fn min_frequency(&self) -> Option<f64> {
        self.modes
            .iter()
            .map(|m| m.omega)
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.min(w))))
    }

    /// Evaluates `F(t, x)`.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "drift evaluation",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let mut out = &self.base_matrix * x + &self.base_vector;
        for mode in &self.modes {
            let (s, c) = (mode.omega * t).sin_cos();
            out += (&mode.cos_matrix * x + &mode.cos_vector) * c;
            out += (&mode.sin_matrix * x + &mode.sin_vector) * s;
        }
        Ok(out)
    }

    /// Certified Lipschitz/growth constants from the triangle inequality
    /// over the mode amplitudes.
    pub fn lipschitz_certificate(&self) -> LipschitzCertificate {
        let mut lip = linalg::operator_norm(&self.base_matrix);
        let mut vec = self.base_vector.norm();
        for mode in &self.modes {
            lip += linalg::operator_norm(&mode.cos_matrix) + linalg::operator_norm(&mode.sin_matrix);
            vec += mode.cos_vector.norm() + mode.sin_vector.norm();
        }
        LipschitzCertificate {
            lipschitz: lip,
            growth: lip.max(vec),
        }
    }

    /// Closed-form long-time mean: all oscillatory modes vanish, leaving the
    /// affine map `x -> B0 x + b0`.
    pub fn average_closed(&self) -> AffineMap {
        AffineMap {
            matrix: self.base_matrix.clone(),
            vector: self.base_vector.clone(),
        }
    }

    /// Quadrature approximation of `(1/T) int_tau^{tau+T} F(s, x) ds` by
    /// composite Simpson with `n_quad` subintervals (rounded up to even).
    pub fn average_numeric(
        &self,
        x: &DVector<f64>,
        tau: f64,
        horizon: f64,
        n_quad: usize,
    ) -> Result<DVector<f64>> {
        if !(horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "drift averaging",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let integral = simpson_vec(
            |s| self.eval(s, x).expect("dimensions already checked"),
            tau,
            tau + horizon,
            n_quad.max(2),
        );
        Ok(integral / horizon)
    }
}

/// Affine matrix-valued map `x -> C + sum_k x_k L_k`, used as one Fourier
/// block of the diffusion. Empty `linear` means no state dependence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineMatrixMap {
    constant: DMatrix<f64>,
    linear: Vec<DMatrix<f64>>,
}

impl AffineMatrixMap {
    pub fn new(constant: DMatrix<f64>, linear: Vec<DMatrix<f64>>) -> Result<Self> {
        for l in &linear {
            if l.shape() != constant.shape() {
                return Err(Error::DimensionMismatch {
                    context: "affine matrix map block",
                    expected: constant.nrows(),
                    found: l.nrows(),
                });
            }
        }
        Ok(Self { constant, linear })
    }

    pub fn additive(constant: DMatrix<f64>) -> Self {
        Self {
            constant,
            linear: Vec::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::additive(DMatrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn linear_part(&self) -> &[DMatrix<f64>] {
        &self.linear
    }

    pub fn is_additive(&self) -> bool {
        self.linear.iter().all(|l| l.iter().all(|&v| v == 0.0))
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, l) in self.linear.iter().enumerate() {
            if k < x.len() {
                out += l * x[k];
            }
        }
        out
    }

    /// Lipschitz constant of `x -> M(x)` in operator norm, via
    /// Cauchy-Schwarz over the linear blocks.
    fn lipschitz(&self) -> f64 {
        self.linear
            .iter()
            .map(|l| linalg::operator_norm(l).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn constant_norm(&self) -> f64 {
        linalg::operator_norm(&self.constant)
    }
}

/// One oscillatory mode of the diffusion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffusionMode {
    pub omega: f64,
    pub cos_map: AffineMatrixMap,
    pub sin_map: AffineMatrixMap,
}

/// Affine-in-state, trigonometric-in-time diffusion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuasiPeriodicDiffusion {
    base: AffineMatrixMap,
    modes: Vec<DiffusionMode>,
}

impl QuasiPeriodicDiffusion {
    pub fn new(base: AffineMatrixMap, modes: Vec<DiffusionMode>) -> Result<Self> {
        let shape = base.shape();
        for mode in &modes {
            if mode.cos_map.shape() != shape || mode.sin_map.shape() != shape {
                return Err(Error::DimensionMismatch {
                    context: "diffusion mode block",
                    expected: shape.0,
                    found: mode.cos_map.shape().0,
                });
            }
        }
        check_frequencies(modes.iter().map(|m| m.omega))?;
        Ok(Self { base, modes })
    }

    /// Constant (time- and state-independent) diffusion.
    pub fn constant(matrix: DMatrix<f64>) -> Self {
        Self {
            base: AffineMatrixMap::additive(matrix),
            modes: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.base.shape().0
    }

    pub fn noise_dim(&self) -> usize {
        self.base.shape().1
    }

    pub fn modes(&self) -> &[DiffusionMode] {
        &self.modes
    }

    pub fn base(&self) -> &AffineMatrixMap {
        &self.base
    }

    /// True when `G` has no state dependence, in which case the law of the
    /// solution is Gaussian for affine drift.
    pub fn is_additive(&self) -> bool {
        self.base.is_additive()
            && self
                .modes
                .iter()
                .all(|m| m.cos_map.is_additive() && m.sin_map.is_additive())
    }

    pub fn max_frequency(&self) -> Option<f64> {
        self.modes
            .iter()
            .map(|m| m.omega)
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.max(w))))
    }

    pub fn min_frequency(&self) -> Option<f64> {
        self.modes
            .iter()
            .map(|m| m.omega)
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.min(w))))
    }

    /// Evaluates `G(t, x)` as a dense d-by-m matrix.
    pub fn eval(&self, t: f64, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "diffusion evaluation",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let mut out = self.base.eval(x);
        for mode in &self.modes {
            let (s, c) = (mode.omega * t).sin_cos();
            out += mode.cos_map.eval(x) * c;
            out += mode.sin_map.eval(x) * s;
        }
        Ok(out)
    }

    pub fn lipschitz_certificate(&self) -> LipschitzCertificate {
        let mut lip = self.base.lipschitz();
        let mut cst = self.base.constant_norm();
        for mode in &self.modes {
            lip += mode.cos_map.lipschitz() + mode.sin_map.lipschitz();
            cst += mode.cos_map.constant_norm() + mode.sin_map.constant_norm();
        }
        LipschitzCertificate {
            lipschitz: lip,
            growth: lip.max(cst),
        }
    }

    /// Closed-form mean of `s -> G(s,x) Q G*(s,x)`: the base block enters in
    /// full, each oscillatory block with weight 1/2, and every cross term
    /// averages out because the frequencies are pairwise distinct.
    pub fn averaged_covariance_closed(
        &self,
        model: &GalerkinModel,
        x: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_model(model)?;
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "averaged covariance",
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        let q = model.q_matrix();
        let sandwich = |m: &DMatrix<f64>| m * &q * m.transpose();
        let mut h0 = sandwich(&self.base.eval(x));
        for mode in &self.modes {
            h0 += sandwich(&mode.cos_map.eval(x)) * 0.5;
            h0 += sandwich(&mode.sin_map.eval(x)) * 0.5;
        }
        // symmetrize away roundoff
        let h0t = h0.transpose();
        Ok((h0 + h0t) * 0.5)
    }

    /// Quadrature mean of `G Q G*` over `[tau, tau + horizon]`, together with
    /// its nuclear-norm distance from the closed form.
    pub fn averaged_covariance_numeric(
        &self,
        model: &GalerkinModel,
        x: &DVector<f64>,
        tau: f64,
        horizon: f64,
        n_quad: usize,
    ) -> Result<(DMatrix<f64>, f64)> {
        if !(horizon > 0.0) {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        self.check_model(model)?;
        let q = model.q_matrix();
        let integral = simpson_mat(
            |s| {
                let g = self.eval(s, x).expect("dimensions already checked");
                &g * &q * g.transpose()
            },
            tau,
            tau + horizon,
            n_quad.max(2),
        );
        let numeric = integral / horizon;
        let numeric = (&numeric + numeric.transpose()) * 0.5;
        let closed = self.averaged_covariance_closed(model, x)?;
        let err = crate::model::nuclear_norm(&(&numeric - &closed))?;
        Ok((numeric, err))
    }

    fn check_model(&self, model: &GalerkinModel) -> Result<()> {
        if model.noise_dim() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                context: "diffusion noise dimension",
                expected: self.noise_dim(),
                found: model.noise_dim(),
            });
        }
        if model.state_dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "diffusion state dimension",
                expected: self.state_dim(),
                found: model.state_dim(),
            });
        }
        Ok(())
    }
}

/// Affine map `x -> M x + v`, the closed form of an averaged drift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub vector: DVector<f64>,
}

impl AffineMap {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.vector
    }
}

/// The averaged pair `(F0, G0)` of a quasi-periodic system, with the
/// averaged covariance `H0` available in closed form.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedCoefficients {
    f0: AffineMap,
    diffusion: QuasiPeriodicDiffusion,
    model: GalerkinModel,
    g0_additive: Option<DMatrix<f64>>,
}

impl AveragedCoefficients {
    pub fn new(
        drift: &QuasiPeriodicDrift,
        diffusion: &QuasiPeriodicDiffusion,
        model: &GalerkinModel,
    ) -> Result<Self> {
        diffusion.check_model(model)?;
        if drift.state_dim() != model.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "averaged coefficients",
                expected: model.state_dim(),
                found: drift.state_dim(),
            });
        }
        let mut avg = Self {
            f0: drift.average_closed(),
            diffusion: diffusion.clone(),
            model: model.clone(),
            g0_additive: None,
        };
        if diffusion.is_additive() {
            let x0 = DVector::zeros(model.state_dim());
            avg.g0_additive = Some(avg.g0_uncached(&x0)?);
        }
        Ok(avg)
    }

    pub fn f0_map(&self) -> &AffineMap {
        &self.f0
    }

    /// Averaged drift `F0(x) = B0 x + b0`.
    pub fn f0(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f0.eval(x)
    }

    /// Averaged covariance `H0(x)`, symmetric PSD.
    pub fn h0(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.diffusion.averaged_covariance_closed(&self.model, x)
    }

    /// Averaged diffusion factor: a d-by-m matrix with
    /// `G0(x) Q G0*(x) = H0(x)` whenever the rank of `H0(x)` fits inside the
    /// active part of the noise spectrum (coordinates with
    /// `q_j > 1e-12 max q`). Eigenvalues of `H0` below `-1e-10` of its scale
    /// are a PSD violation.
    pub fn g0(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(g) = &self.g0_additive {
            return Ok(g.clone());
        }
        self.g0_uncached(x)
    }

    fn g0_uncached(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let h0 = self.h0(x)?;
        g0_from_h0(&h0, self.model.q_eigenvalues())
    }

    /// True when the averaged diffusion is state-independent.
    pub fn is_additive(&self) -> bool {
        self.g0_additive.is_some()
    }
}

/// Factors `H0 = G0 Q G0*` through the pseudo-inverse of `Q^{1/2}`.
///
/// The spectral decomposition of `H0` (eigenvalues descending) is matched to
/// the active noise coordinates: eigenpair `k` rides coordinate `j_k` with
/// column `sqrt(lambda_k / q_{j_k}) v_k`. Columns for inactive coordinates
/// stay zero, so the factor only uses the range of `Q^{1/2}`.
pub fn g0_from_h0(h0: &DMatrix<f64>, q: &[f64]) -> Result<DMatrix<f64>> {
    linalg::check_symmetric(h0, linalg::SYMMETRY_TOL)?;
    let d = h0.nrows();
    let m = q.len();
    let (values, vectors) = linalg::symmetric_eigen_sorted(h0);
    let scale = values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if let Some(&worst) = values.iter().find(|&&v| v < -linalg::PSD_TOL * scale) {
        return Err(Error::NotPositiveSemidefinite {
            eigenvalue: worst,
            tolerance: linalg::PSD_TOL * scale,
        });
    }
    let q_max = q.iter().copied().fold(0.0_f64, f64::max);
    let active: Vec<usize> = (0..m)
        .filter(|&j| q_max > 0.0 && q[j] > Q_PINV_TOL * q_max)
        .collect();
    let mut g0 = DMatrix::zeros(d, m);
    for (k, &j) in active.iter().enumerate().take(d) {
        let lambda = values[k].max(0.0);
        if lambda == 0.0 {
            break;
        }
        let col = vectors.column(k) * (lambda.sqrt() / q[j].sqrt());
        g0.set_column(j, &col);
    }
    Ok(g0)
}

/// Single constant `K` serving both growth and Lipschitz conditions for the
/// pair `(F, G)`: the sum of the per-coefficient certificates, whichever of
/// the two kinds binds.
pub fn combined_growth_constant(
    drift: &QuasiPeriodicDrift,
    diffusion: &QuasiPeriodicDiffusion,
) -> f64 {
    let f = drift.lipschitz_certificate();
    let g = diffusion.lipschitz_certificate();
    (f.lipschitz + g.lipschitz).max(f.growth + g.growth)
}

/// Composite Simpson rule for vector-valued integrands.
pub fn simpson_vec<F>(f: F, a: f64, b: f64, n: usize) -> DVector<f64>
where
    F: Fn(f64) -> DVector<f64>,
{
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Composite Simpson rule for matrix-valued integrands.
pub fn simpson_mat<F>(f: F, a: f64, b: f64, n: usize) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Analytic bound on the distance between the length-`horizon` running mean
/// of the drift and its closed-form mean: each mode of frequency `w`
/// contributes at most `2 amplitude / (w horizon)`.
pub fn drift_average_tail_bound(
    drift: &QuasiPeriodicDrift,
    x: &DVector<f64>,
    horizon: f64,
) -> f64 {
    drift
        .modes()
        .iter()
        .map(|mode| {
            let amp = linalg::operator_norm(&mode.cos_matrix) * x.norm()
                + mode.cos_vector.norm()
                + linalg::operator_norm(&mode.sin_matrix) * x.norm()
                + mode.sin_vector.norm();
            2.0 * amp / (mode.omega * horizon)
        })
        .sum()
}
