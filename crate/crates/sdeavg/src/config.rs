//! JSON experiment configuration.
//!
//! Matrices are row-major nested arrays; frequencies are explicit. Parsing
//! is strict (unknown fields are rejected with their names) and semantic
//! validation collects every offending field before reporting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::coeff::{
    AffineMatrixMap, DiffusionMode, DriftMode, QuasiPeriodicDiffusion, QuasiPeriodicDrift,
};
use crate::error::{Error, Result};
use crate::model::GalerkinModel;
use crate::solver::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub generator_eigenvalues: Vec<f64>,
    pub q_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModeConfig {
    pub omega: f64,
    pub cos_matrix: Vec<Vec<f64>>,
    pub cos_vector: Vec<f64>,
    pub sin_matrix: Vec<Vec<f64>>,
    pub sin_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub base_matrix: Vec<Vec<f64>>,
    pub base_vector: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<DriftModeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMapConfig {
    pub constant: Vec<Vec<f64>>,
    /// One d-by-m block per state coordinate; empty means state-independent.
    #[serde(default)]
    pub linear: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionModeConfig {
    pub omega: f64,
    pub cos: AffineMapConfig,
    pub sin: AffineMapConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub base: AffineMapConfig,
    #[serde(default)]
    pub modes: Vec<DiffusionModeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuityConfig {
    /// Constant drift perturbation direction; entry `n` of the schedule adds
    /// `amplitudes[n] * perturbation_vector` to the drift's base vector.
    pub perturbation_vector: Vec<f64>,
    /// Nonincreasing amplitudes; the limit system is amplitude zero.
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveModeConfig {
    pub omega: f64,
    pub cos_amplitude: Vec<f64>,
    pub sin_amplitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub constant: Vec<f64>,
    #[serde(default)]
    pub modes: Vec<CurveModeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionConfig {
    pub tau: f64,
    pub t: f64,
    pub curve: CurveConfig,
    /// Baseline Simpson subintervals; refined automatically per ladder entry
    /// so the fastest rescaled oscillation keeps at least 20 samples per
    /// period.
    pub n_quad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NovikovConfig {
    pub p_values: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub drift: DriftConfig,
    pub diffusion: DiffusionConfig,
    pub eps_ladder: Vec<f64>,
    pub window: [f64; 2],
    pub n_paths: usize,
    pub step: f64,
    pub grid_stride: usize,
    pub burn_in_tol: f64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity: Option<ContinuityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convolution: Option<ConvolutionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novikov: Option<NovikovConfig>,
}

impl ExperimentConfig {
    /// Canonical serialization used for hashing and emission.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Loads and structurally validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Writes the canonical form of a configuration.
pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.canonical_json() + "\n")?;
    Ok(())
}

fn matrix_from(
    spec: &[Vec<f64>],
    rows: usize,
    cols: usize,
    field: &str,
    problems: &mut Vec<String>,
) -> DMatrix<f64> {
    if spec.len() != rows || spec.iter().any(|r| r.len() != cols) {
        problems.push(format!("{field}: expected a {rows}x{cols} row-major matrix"));
        return DMatrix::zeros(rows, cols);
    }
    DMatrix::from_fn(rows, cols, |i, j| spec[i][j])
}

fn vector_from(spec: &[f64], len: usize, field: &str, problems: &mut Vec<String>) -> DVector<f64> {
    if spec.len() != len {
        problems.push(format!("{field}: expected a vector of length {len}"));
        return DVector::zeros(len);
    }
    DVector::from_column_slice(spec)
}

fn affine_map_from(
    spec: &AffineMapConfig,
    d: usize,
    m: usize,
    field: &str,
    problems: &mut Vec<String>,
) -> AffineMatrixMap {
    let constant = matrix_from(&spec.constant, d, m, &format!("{field}.constant"), problems);
    if !spec.linear.is_empty() && spec.linear.len() != d {
        problems.push(format!(
            "{field}.linear: expected {d} blocks (one per state coordinate), got {}",
            spec.linear.len()
        ));
    }
    let linear: Vec<DMatrix<f64>> = spec
        .linear
        .iter()
        .enumerate()
        .map(|(k, block)| matrix_from(block, d, m, &format!("{field}.linear[{k}]"), problems))
        .collect();
    AffineMatrixMap::new(constant, linear).unwrap_or_else(|_| AffineMatrixMap::zeros(d, m))
}

/// The validated, ready-to-run form of a configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: GalerkinModel,
    pub drift: QuasiPeriodicDrift,
    pub diffusion: QuasiPeriodicDiffusion,
    pub raw: ExperimentConfig,
}

impl Experiment {
    /// Builds the core objects, collecting every validation problem.
    pub fn from_config(config: &ExperimentConfig) -> Result<Experiment> {
        let mut problems = Vec::new();
        let d = config.model.generator_eigenvalues.len();
        let m = config.model.q_eigenvalues.len();
        let model = GalerkinModel::new(
            config.model.generator_eigenvalues.clone(),
            config.model.q_eigenvalues.clone(),
        );
        if let Err(Error::Config(msgs)) = &model {
            problems.extend(msgs.iter().map(|s| format!("model: {s}")));
        }

        let base_matrix = matrix_from(
            &config.drift.base_matrix,
            d,
            d,
            "drift.base_matrix",
            &mut problems,
        );
        let base_vector =
            vector_from(&config.drift.base_vector, d, "drift.base_vector", &mut problems);
        let drift_modes: Vec<DriftMode> = config
            .drift
            .modes
            .iter()
            .enumerate()
            .map(|(k, mode)| DriftMode {
                omega: mode.omega,
                cos_matrix: matrix_from(
                    &mode.cos_matrix,
                    d,
                    d,
                    &format!("drift.modes[{k}].cos_matrix"),
                    &mut problems,
                ),
                cos_vector: vector_from(
                    &mode.cos_vector,
                    d,
                    &format!("drift.modes[{k}].cos_vector"),
                    &mut problems,
                ),
                sin_matrix: matrix_from(
                    &mode.sin_matrix,
                    d,
                    d,
                    &format!("drift.modes[{k}].sin_matrix"),
                    &mut problems,
                ),
                sin_vector: vector_from(
                    &mode.sin_vector,
                    d,
                    &format!("drift.modes[{k}].sin_vector"),
                    &mut problems,
                ),
            })
            .collect();
        let drift = QuasiPeriodicDrift::new(base_matrix, base_vector, drift_modes);
        if let Err(e) = &drift {
            problems.push(format!("drift: {e}"));
        }

        let base = affine_map_from(&config.diffusion.base, d, m, "diffusion.base", &mut problems);
        let diffusion_modes: Vec<DiffusionMode> = config
            .diffusion
            .modes
            .iter()
            .enumerate()
            .map(|(k, mode)| DiffusionMode {
                omega: mode.omega,
                cos_map: affine_map_from(
                    &mode.cos,
                    d,
                    m,
                    &format!("diffusion.modes[{k}].cos"),
                    &mut problems,
                ),
                sin_map: affine_map_from(
                    &mode.sin,
                    d,
                    m,
                    &format!("diffusion.modes[{k}].sin"),
                    &mut problems,
                ),
            })
            .collect();
        let diffusion = QuasiPeriodicDiffusion::new(base, diffusion_modes);
        if let Err(e) = &diffusion {
            problems.push(format!("diffusion: {e}"));
        }

        if config.eps_ladder.is_empty() {
            problems.push("eps_ladder: must not be empty".to_string());
        }
        if config
            .eps_ladder
            .iter()
            .any(|&e| !(e > 0.0 && e <= 1.0))
        {
            problems.push("eps_ladder: every entry must lie in (0, 1]".to_string());
        }
        if config.eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            problems.push("eps_ladder: must be strictly decreasing".to_string());
        }
        if !(config.window[0] < config.window[1]) {
            problems.push(format!(
                "window: must satisfy a < b, got [{}, {}]",
                config.window[0], config.window[1]
            ));
        }
        if !(config.step > 0.0) {
            problems.push(format!("step: must be positive, got {}", config.step));
        }
        if config.grid_stride == 0 {
            problems.push("grid_stride: must be at least 1".to_string());
        }
        if !(config.burn_in_tol > 0.0) {
            problems.push(format!(
                "burn_in_tol: must be positive, got {}",
                config.burn_in_tol
            ));
        }
        if config.n_paths == 0 {
            problems.push("n_paths: must be at least 1".to_string());
        } else if config.n_paths > crate::metrics::MAX_EXACT_PATHS {
            problems.push(format!(
                "n_paths: {} exceeds the exact-assignment cap of {}",
                config.n_paths,
                crate::metrics::MAX_EXACT_PATHS
            ));
        }
        if let Some(cont) = &config.continuity {
            if cont.perturbation_vector.len() != d {
                problems.push(format!(
                    "continuity.perturbation_vector: expected length {d}"
                ));
            }
            if cont.amplitudes.is_empty() {
                problems.push("continuity.amplitudes: must not be empty".to_string());
            }
            if cont.amplitudes.windows(2).any(|w| w[1] > w[0]) {
                problems.push("continuity.amplitudes: must be nonincreasing".to_string());
            }
            if cont.amplitudes.iter().any(|&a| a < 0.0) {
                problems.push("continuity.amplitudes: must be nonnegative".to_string());
            }
        }
        if let Some(conv) = &config.convolution {
            if !(conv.t > 0.0) {
                problems.push(format!("convolution.t: must be positive, got {}", conv.t));
            }
            if conv.curve.constant.len() != d {
                problems.push(format!("convolution.curve.constant: expected length {d}"));
            }
            for (k, mode) in conv.curve.modes.iter().enumerate() {
                if mode.cos_amplitude.len() != d || mode.sin_amplitude.len() != d {
                    problems.push(format!(
                        "convolution.curve.modes[{k}]: amplitude vectors must have length {d}"
                    ));
                }
                if !(mode.omega > 0.0) {
                    problems.push(format!(
                        "convolution.curve.modes[{k}].omega: must be positive"
                    ));
                }
            }
            if conv.n_quad < 2 {
                problems.push("convolution.n_quad: must be at least 2".to_string());
            }
        }
        if let Some(nov) = &config.novikov {
            if nov.p_values.iter().any(|&p| p < 2.0) {
                problems.push("novikov.p_values: every p must be >= 2".to_string());
            }
            if nov.n_samples == 0 {
                problems.push("novikov.n_samples: must be at least 1".to_string());
            }
        }

        // grid and oscillation-resolution checks need the pieces above
        if problems.is_empty() {
            let span = config.window[1] - config.window[0];
            let n_steps = (span / config.step).round();
            if ((n_steps * config.step - span) / span).abs() > 1e-9 {
                problems.push(format!(
                    "step: window length {span} is not an integer multiple of {}",
                    config.step
                ));
            } else if !(n_steps as usize).is_multiple_of(config.grid_stride) {
                problems.push(format!(
                    "grid_stride: window step count {} is not divisible by {}",
                    n_steps as usize, config.grid_stride
                ));
            }
        }

        match (model, drift, diffusion) {
            (Ok(model), Ok(drift), Ok(diffusion)) if problems.is_empty() => {
                let experiment = Experiment {
                    model,
                    drift,
                    diffusion,
                    raw: config.clone(),
                };
                // smallest ladder entry is the binding resolution constraint
                if let Some(&eps_min) = config.eps_ladder.last() {
                    let solver_cfg = experiment.solver_config(eps_min, 0.0, config.master_seed);
                    let system = crate::solver::OscillatingSystem::new(
                        &experiment.drift,
                        &experiment.diffusion,
                        eps_min,
                    )?;
                    use crate::solver::SdeCoefficients as _;
                    if let Err(e) = solver_cfg.validate_resolution(system.resolution_frequency()) {
                        return Err(Error::config(format!("step: {e}")));
                    }
                }
                Ok(experiment)
            }
            _ => Err(Error::Config(problems)),
        }
    }

    /// Solver configuration for one run of this experiment.
    pub fn solver_config(&self, eps: f64, t_burn: f64, master_seed: u64) -> crate::solver::SolverConfig {
        crate::solver::SolverConfig {
            eps,
            step: self.raw.step,
            window: (self.raw.window[0], self.raw.window[1]),
            t_burn,
            grid_stride: self.raw.grid_stride,
            master_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn reference_scenario_round_trips() {
        let config = scenarios::reference_scenario();
        let dir = std::env::temp_dir().join(format!("sdeavg-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        save_config(&config, &path).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded, config);
        // a second emit/load cycle is byte-stable
        let path2 = dir.join("roundtrip2.json");
        save_config(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_field_is_named() {
        let mut value: serde_json::Value =
            serde_json::from_str(&scenarios::reference_scenario().canonical_json()).unwrap();
        value["surprise"] = serde_json::json!(1);
        let err = serde_json::from_value::<ExperimentConfig>(value).unwrap_err();
        assert!(err.to_string().contains("surprise"), "{err}");
    }

    #[test]
    fn non_decreasing_ladder_is_rejected() {
        let mut config = scenarios::reference_scenario();
        config.eps_ladder = vec![0.1, 0.2];
        let err = Experiment::from_config(&config).unwrap_err();
        assert!(err.to_string().contains("eps_ladder"), "{err}");
    }

    #[test]
    fn validation_collects_multiple_problems() {
        let mut config = scenarios::reference_scenario();
        config.eps_ladder = vec![];
        config.burn_in_tol = -1.0;
        config.n_paths = 0;
        match Experiment::from_config(&config) {
            Err(Error::Config(problems)) => {
                assert!(problems.len() >= 3, "problems: {problems:?}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn scenario_configs_validate() {
        for config in [
            scenarios::reference_scenario(),
            scenarios::gaussian_scenario(),
            scenarios::ou_scenario(),
            scenarios::moment_bound_scenario(0.1),
            scenarios::moment_bound_scenario(0.3),
            scenarios::moment_bound_scenario(0.6),
        ] {
            Experiment::from_config(&config).expect("scenario must validate");
        }
    }
}
