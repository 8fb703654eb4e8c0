//! Exponential-Euler integration of the mild solution.
//!
//! The scheme discretizes the variation-of-constants form directly: per
//! generator mode `k`,
//!
//! ```text
//! X_{n+1,k} = e^{-lambda_k h} X_{n,k}
//!           + phi_k(h) F_k(t_n, X_n)
//!           + e^{-lambda_k h} (G(t_n, X_n) dW_n)_k,
//! phi_k(h) = (1 - e^{-lambda_k h}) / lambda_k,
//! ```
//!
//! so the semigroup contraction is preserved unconditionally in `h`. The
//! whole-line mild solution is realized by integrating forward from
//! `a - T_burn` and discarding the burn-in: the dissipative part forgets the
//! start state at rate `delta`, and `T_burn` is sized from the moment bound
//! so the transient contributes at most a prescribed tolerance to second
//! moments at the window start.
//!
//! Paths are independent given their substream seeds and may be simulated on
//! any number of worker threads; the ensemble is ordered by path index, so
//! the output is schedule-independent.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::ConstantsReport;
use crate::coeff::{AveragedCoefficients, QuasiPeriodicDiffusion, QuasiPeriodicDrift};
use crate::error::{Error, Result};
use crate::model::GalerkinModel;
use crate::rng;

/// Time-dependent drift/diffusion pair fed to the integrator.
///
/// Implementations must be pure: the same `(t, x)` always yields the same
/// value, so paths can be dispatched concurrently.
pub trait SdeCoefficients: Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
    /// Fastest effective oscillation frequency seen by the integrator
    /// (after any time rescaling), `None` for autonomous coefficients.
    fn resolution_frequency(&self) -> Option<f64>;
    /// Stable serialization used for provenance hashing.
    fn provenance_json(&self) -> String;
}

/// Oscillating system: the coefficients are evaluated at `t / eps`.
#[derive(Debug, Clone)]
pub struct OscillatingSystem<'a> {
    pub drift: &'a QuasiPeriodicDrift,
    pub diffusion: &'a QuasiPeriodicDiffusion,
    pub eps: f64,
}

impl<'a> OscillatingSystem<'a> {
    pub fn new(
        drift: &'a QuasiPeriodicDrift,
        diffusion: &'a QuasiPeriodicDiffusion,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::config(format!(
                "oscillation parameter eps must lie in (0, 1], got {eps}"
            )));
        }
        if drift.state_dim() != diffusion.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "oscillating system",
                expected: drift.state_dim(),
                found: diffusion.state_dim(),
            });
        }
        Ok(Self {
            drift,
            diffusion,
            eps,
        })
    }
}

impl SdeCoefficients for OscillatingSystem<'_> {
    fn state_dim(&self) -> usize {
        self.drift.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.diffusion.noise_dim()
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.drift
            .eval(t / self.eps, x)
            .expect("dimensions validated before integration")
    }

    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        self.diffusion
            .eval(t / self.eps, x)
            .expect("dimensions validated before integration")
    }

    fn resolution_frequency(&self) -> Option<f64> {
        let w_drift = self.drift.max_frequency();
        let w_diff = self.diffusion.max_frequency();
        let w = match (w_drift, w_diff) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        w.map(|w| w / self.eps)
    }

    fn provenance_json(&self) -> String {
        serde_json::json!({
            "kind": "oscillating",
            "eps": self.eps,
            "drift": self.drift,
            "diffusion": self.diffusion,
        })
        .to_string()
    }
}

impl SdeCoefficients for AveragedCoefficients {
    fn state_dim(&self) -> usize {
        self.f0_map().vector.len()
    }

    fn noise_dim(&self) -> usize {
        self.g0(&DVector::zeros(self.state_dim()))
            .map(|g| g.ncols())
            .unwrap_or(0)
    }

    fn drift(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.f0(x)
    }

    fn diffusion(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        self.g0(x)
            .expect("averaged covariance must stay PSD along the path")
    }

    fn resolution_frequency(&self) -> Option<f64> {
        None
    }

    fn provenance_json(&self) -> String {
        serde_json::json!({ "kind": "averaged", "coefficients": self }).to_string()
    }
}

/// Integration window, step and seed bookkeeping.
///
/// `eps` is the oscillation parameter of the run this configuration is meant
/// for; `eps = 0` marks a run with averaged coefficients. For `eps > 0` the
/// step must resolve the fastest oscillation with at least 20 samples per
/// period, which is checked against the coefficients at simulation time.
#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub eps: f64,
    pub step: f64,
    pub window: (f64, f64),
    pub t_burn: f64,
    pub grid_stride: usize,
    pub master_seed: u64,
}

/// Minimum number of samples per fastest oscillation period.
pub const SAMPLES_PER_PERIOD: f64 = 20.0;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.step > 0.0) {
            problems.push(format!("step must be positive, got {}", self.step));
        }
        if !(self.window.0 < self.window.1) {
            problems.push(format!(
                "window must satisfy a < b, got [{}, {}]",
                self.window.0, self.window.1
            ));
        }
        if !(self.t_burn >= 0.0) {
            problems.push(format!("burn-in must be nonnegative, got {}", self.t_burn));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            problems.push(format!("eps must lie in [0, 1], got {}", self.eps));
        }
        if self.grid_stride == 0 {
            problems.push("grid_stride must be at least 1".to_string());
        }
        if problems.is_empty() {
            // the recording grid must tile the window exactly
            let span = self.window.1 - self.window.0;
            let n_steps = (span / self.step).round();
            if ((n_steps * self.step - span) / span).abs() > 1e-9 {
                problems.push(format!(
                    "window length {span} is not an integer multiple of step {}",
                    self.step
                ));
            } else if !(n_steps as usize).is_multiple_of(self.grid_stride) {
                problems.push(format!(
                    "window step count {} is not divisible by grid_stride {}",
                    n_steps as usize, self.grid_stride
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Checks the oscillation-resolution rule against the coefficients'
    /// fastest effective frequency.
    pub fn validate_resolution(&self, resolution_frequency: Option<f64>) -> Result<()> {
        if let Some(w) = resolution_frequency {
            let period = 2.0 * std::f64::consts::PI / w;
            if self.step > period / SAMPLES_PER_PERIOD * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "step {} under-resolves the fastest oscillation: need at most {} \
                     ({} samples per period of effective frequency {w})",
                    self.step,
                    period / SAMPLES_PER_PERIOD,
                    SAMPLES_PER_PERIOD,
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn plan(&self) -> Result<StepPlan> {
        self.validate()?;
        let span = self.window.1 - self.window.0;
        let n_window = (span / self.step).round() as usize;
        let n_burn = (self.t_burn / self.step - 1e-12).ceil().max(0.0) as usize;
        Ok(StepPlan {
            t_start: self.window.0 - n_burn as f64 * self.step,
            n_burn,
            n_window,
            stride: self.grid_stride,
            step: self.step,
        })
    }

    /// Recording grid `t_0 = a < ... < t_G = b`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let plan = self.plan()?;
        Ok((0..=plan.n_window / plan.stride)
            .map(|k| self.window.0 + (k * plan.stride) as f64 * plan.step)
            .collect())
    }
}

pub(crate) struct StepPlan {
    pub(crate) t_start: f64,
    pub(crate) n_burn: usize,
    pub(crate) n_window: usize,
    pub(crate) stride: usize,
    pub(crate) step: f64,
}

impl StepPlan {
    pub(crate) fn total_steps(&self) -> usize {
        self.n_burn + self.n_window
    }

    pub(crate) fn is_recorded(&self, step_index: usize) -> bool {
        step_index >= self.n_burn && (step_index - self.n_burn).is_multiple_of(self.stride)
    }
}

/// Burn-in long enough that the start-state transient contributes at most
/// `tol` to second moments at the window start: `T = ln(M / tol) / delta`
/// with `M = 1 + theta' / (1 - theta')`, clamped at zero.
pub fn burn_in_length(model: &GalerkinModel, constants: &ConstantsReport, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::config(format!("burn-in tolerance must be positive, got {tol}")));
    }
    let bound = constants.moment_bound_l2.ok_or(Error::NoContraction {
        theta_prime: constants.theta_prime,
    })?;
    let m = 1.0 + bound;
    Ok(((m / tol).ln() / model.delta()).max(0.0))
}

/// `(1 - e^{-lambda h}) / lambda`, with a series branch for small
/// `lambda h` to avoid cancellation.
pub fn phi(lambda: f64, h: f64) -> f64 {
    let z = lambda * h;
    if z < 1e-4 {
        h * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0)
    } else {
        (1.0 - (-z).exp()) / lambda
    }
}

/// Integrates one path from `x0` at `a - T_burn`, driven by the given
/// increments (one per step), recording on the window grid.
///
/// The divergence error reports `path_index`, which callers managing several
/// paths pass through; single-path callers use 0.
pub fn integrate_path_with_increments(
    model: &GalerkinModel,
    coeffs: &dyn SdeCoefficients,
    config: &SolverConfig,
    x0: &DVector<f64>,
    increments: &[DVector<f64>],
    path_index: usize,
) -> Result<Vec<DVector<f64>>> {
    let plan = config.plan()?;
    check_dims(model, coeffs)?;
    if x0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: model.state_dim(),
            found: x0.len(),
        });
    }
    if increments.len() < plan.total_steps() {
        return Err(Error::DimensionMismatch {
            context: "increment count",
            expected: plan.total_steps(),
            found: increments.len(),
        });
    }
    let d = model.state_dim();
    let h = plan.step;
    let decay: Vec<f64> = model
        .generator_eigenvalues()
        .iter()
        .map(|&l| (-l * h).exp())
        .collect();
    let weight: Vec<f64> = model
        .generator_eigenvalues()
        .iter()
        .map(|&l| phi(l, h))
        .collect();

    let mut x = x0.clone();
    let mut recorded = Vec::with_capacity(plan.n_window / plan.stride + 1);
    if plan.is_recorded(0) {
        recorded.push(x.clone());
    }
    for (n, dw) in increments[..plan.total_steps()].iter().enumerate() {
        let t = plan.t_start + n as f64 * h;
        let f = coeffs.drift(t, &x);
        let g = coeffs.diffusion(t, &x);
        let noise = &g * dw;
        for k in 0..d {
            x[k] = decay[k] * x[k] + weight[k] * f[k] + decay[k] * noise[k];
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                path: path_index,
                step: n + 1,
            });
        }
        if plan.is_recorded(n + 1) {
            recorded.push(x.clone());
        }
    }
    Ok(recorded)
}

/// Integrates one path with increments drawn from `substream_seed`.
pub fn integrate_path(
    model: &GalerkinModel,
    coeffs: &dyn SdeCoefficients,
    config: &SolverConfig,
    substream_seed: u64,
    x0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let plan = config.plan()?;
    let increments =
        model.sample_wiener_increments(config.step, plan.total_steps(), substream_seed)?;
    integrate_path_with_increments(model, coeffs, config, x0, &increments, 0)
}

fn check_dims(model: &GalerkinModel, coeffs: &dyn SdeCoefficients) -> Result<()> {
    if coeffs.state_dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "coefficient state dimension",
            expected: model.state_dim(),
            found: coeffs.state_dim(),
        });
    }
    if coeffs.noise_dim() != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            context: "coefficient noise dimension",
            expected: model.noise_dim(),
            found: coeffs.noise_dim(),
        });
    }
    Ok(())
}

/// Hashes of the inputs that produced an ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub model_hash: String,
    pub coefficients_hash: String,
    pub config_hash: String,
}

pub fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Provenance {
    /// Placeholder provenance for hand-built ensembles.
    pub fn synthetic(tag: &str) -> Self {
        let hash = sha256_hex(tag);
        Self {
            model_hash: hash.clone(),
            coefficients_hash: hash.clone(),
            config_hash: hash,
        }
    }
}

/// N simulated trajectories on the shared window grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    times: Vec<f64>,
    values: Vec<Vec<DVector<f64>>>,
    seeds: Vec<u64>,
    provenance: Provenance,
}

impl PathEnsemble {
    /// Assembles an ensemble from raw parts, enforcing the container
    /// invariants: at least one path, a strictly increasing uniform grid,
    /// consistent shapes, and finite values throughout.
    pub fn from_parts(
        times: Vec<f64>,
        values: Vec<Vec<DVector<f64>>>,
        seeds: Vec<u64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("ensemble needs at least one path"));
        }
        if times.len() < 2 {
            return Err(Error::config("ensemble grid needs at least two points"));
        }
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            let step = w[1] - w[0];
            if !(step > 0.0) || ((step - dt) / dt).abs() > 1e-9 {
                return Err(Error::config("ensemble grid must be uniform and increasing"));
            }
        }
        if seeds.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "ensemble seeds",
                expected: values.len(),
                found: seeds.len(),
            });
        }
        let d = values[0].first().map_or(0, |v| v.len());
        for path in &values {
            if path.len() != times.len() {
                return Err(Error::GridMismatch);
            }
            for state in path {
                if state.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "ensemble state",
                        expected: d,
                        found: state.len(),
                    });
                }
                if !state.iter().all(|v| v.is_finite()) {
                    return Err(Error::config("ensemble contains non-finite values"));
                }
            }
        }
        Ok(Self {
            times,
            values,
            seeds,
            provenance,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state_dim(&self) -> usize {
        self.values.first().map_or(0, |p| p[0].len())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn path(&self, i: usize) -> &[DVector<f64>] {
        &self.values[i]
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn same_grid(&self, other: &PathEnsemble) -> bool {
        self.times == other.times
    }

    /// Mean state over paths at grid index `k`.
    pub fn marginal_mean(&self, k: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.state_dim());
        for path in &self.values {
            acc += &path[k];
        }
        acc / self.n_paths() as f64
    }

    /// Sample covariance (population normalization) at grid index `k`.
    pub fn marginal_covariance(&self, k: usize) -> DMatrix<f64> {
        let mean = self.marginal_mean(k);
        let d = self.state_dim();
        let mut acc = DMatrix::zeros(d, d);
        for path in &self.values {
            let c = &path[k] - &mean;
            acc += &c * c.transpose();
        }
        acc / self.n_paths() as f64
    }

    /// Mean of the squared state norm at grid index `k`.
    pub fn second_moment(&self, k: usize) -> f64 {
        self.values
            .iter()
            .map(|p| p[k].norm_squared())
            .sum::<f64>()
            / self.n_paths() as f64
    }

    /// Largest mean squared norm over the grid.
    pub fn sup_second_moment(&self) -> f64 {
        (0..self.n_times())
            .map(|k| self.second_moment(k))
            .fold(0.0, f64::max)
    }

    /// CSV dump: one row per (path, time).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.state_dim();
        let header: Vec<String> = ["path_id".to_string(), "t".to_string()]
            .into_iter()
            .chain((1..=d).map(|i| format!("x_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, path) in self.values.iter().enumerate() {
            for (k, t) in self.times.iter().enumerate() {
                let coords: Vec<String> = path[k].iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{i},{t},{}", coords.join(","))?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Compact little-endian binary dump with a self-describing header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SDEAVGE1")?;
        w.write_all(&(self.n_paths() as u32).to_le_bytes())?;
        w.write_all(&(self.n_times() as u32).to_le_bytes())?;
        w.write_all(&(self.state_dim() as u32).to_le_bytes())?;
        for h in [
            &self.provenance.model_hash,
            &self.provenance.coefficients_hash,
            &self.provenance.config_hash,
        ] {
            w.write_all(&(h.len() as u32).to_le_bytes())?;
            w.write_all(h.as_bytes())?;
        }
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for s in &self.seeds {
            w.write_all(&s.to_le_bytes())?;
        }
        for path in &self.values {
            for state in path {
                for v in state.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"SDEAVGE1" {
            return Err(Error::config("not an ensemble dump (bad magic)"));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let n_paths = read_u32(&mut r)? as usize;
        let n_times = read_u32(&mut r)? as usize;
        let d = read_u32(&mut r)? as usize;
        let read_string = |r: &mut R| -> Result<String> {
            let mut lenbuf = [0u8; 4];
            r.read_exact(&mut lenbuf)?;
            let mut buf = vec![0u8; u32::from_le_bytes(lenbuf) as usize];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf).map_err(|_| Error::config("corrupt hash string"))
        };
        let model_hash = read_string(&mut r)?;
        let coefficients_hash = read_string(&mut r)?;
        let config_hash = read_string(&mut r)?;
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let times: Vec<f64> = (0..n_times)
            .map(|_| read_f64(&mut r))
            .collect::<Result<_>>()?;
        let mut u64buf = [0u8; 8];
        let seeds: Vec<u64> = (0..n_paths)
            .map(|_| -> Result<u64> {
                r.read_exact(&mut u64buf)?;
                Ok(u64::from_le_bytes(u64buf))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let mut path = Vec::with_capacity(n_times);
            for _ in 0..n_times {
                let mut state = DVector::zeros(d);
                for k in 0..d {
                    state[k] = read_f64(&mut r)?;
                }
                path.push(state);
            }
            values.push(path);
        }
        Ok(Self {
            times,
            values,
            seeds,
            provenance: Provenance {
                model_hash,
                coefficients_hash,
                config_hash,
            },
        })
    }
}

/// Simulates `n_paths` independent trajectories from the zero state, one
/// substream per path, deterministic in `config.master_seed`.
pub fn simulate_ensemble(
    model: &GalerkinModel,
    coeffs: &dyn SdeCoefficients,
    config: &SolverConfig,
    n_paths: usize,
) -> Result<PathEnsemble> {
    let x0 = DVector::zeros(model.state_dim());
    simulate_ensemble_from(model, coeffs, config, n_paths, &x0)
}

/// Same as [`simulate_ensemble`] but starting every path from `x0`.
pub fn simulate_ensemble_from(
    model: &GalerkinModel,
    coeffs: &dyn SdeCoefficients,
    config: &SolverConfig,
    n_paths: usize,
    x0: &DVector<f64>,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::config("ensemble needs at least one path"));
    }
    config.validate()?;
    config.validate_resolution(coeffs.resolution_frequency())?;
    check_dims(model, coeffs)?;
    let seeds: Vec<u64> = (0..n_paths)
        .map(|i| rng::substream_seed(config.master_seed, i as u64))
        .collect();
    let plan = config.plan()?;
    let values = crate::parallel::map_indexed(n_paths, |i| {
        let increments =
            model.sample_wiener_increments(config.step, plan.total_steps(), seeds[i])?;
        integrate_path_with_increments(model, coeffs, config, x0, &increments, i)
    })?;
    let provenance = Provenance {
        model_hash: sha256_hex(&serde_json::to_string(model)?),
        coefficients_hash: sha256_hex(&coeffs.provenance_json()),
        config_hash: sha256_hex(&serde_json::to_string(config)?),
    };
    Ok(PathEnsemble {
        times: config.grid()?,
        values,
        seeds,
        provenance,
    })
}
