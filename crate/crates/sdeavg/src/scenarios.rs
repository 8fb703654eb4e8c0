//! Canned experiment configurations used by the test corpus and shipped as
//! sample configs.
//!
//! Each builder designs the coefficient shape first and then rescales every
//! drift/diffusion block by one common factor so the combined constant `K`
//! hits a prescribed contraction level `theta'` exactly (the certificates
//! are positively homogeneous in the blocks). Diffusions with state
//! dependence share a fixed column space so the averaged covariance `H0(x)`
//! keeps rank at most the noise dimension; this makes the factorization
//! `G0 Q G0* = H0` exact, which the averaged equation needs to reproduce the
//! limit law with the same Wiener process.

use nalgebra::{DMatrix, DVector};

use crate::coeff::{
    combined_growth_constant, AffineMatrixMap, DiffusionMode, DriftMode, QuasiPeriodicDiffusion,
    QuasiPeriodicDrift,
};
use crate::config::{
    AffineMapConfig, ContinuityConfig, ConvolutionConfig, CurveConfig, CurveModeConfig,
    DiffusionConfig, DiffusionModeConfig, DriftConfig, DriftModeConfig, ExperimentConfig,
    ModelConfig, NovikovConfig,
};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn entries(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn drift_config(drift: &QuasiPeriodicDrift) -> DriftConfig {
    DriftConfig {
        base_matrix: rows(drift.base_matrix()),
        base_vector: entries(drift.base_vector()),
        modes: drift
            .modes()
            .iter()
            .map(|m| DriftModeConfig {
                omega: m.omega,
                cos_matrix: rows(&m.cos_matrix),
                cos_vector: entries(&m.cos_vector),
                sin_matrix: rows(&m.sin_matrix),
                sin_vector: entries(&m.sin_vector),
            })
            .collect(),
    }
}

fn affine_config(map: &AffineMatrixMap) -> AffineMapConfig {
    AffineMapConfig {
        constant: rows(map.constant_part()),
        linear: map.linear_part().iter().map(rows).collect(),
    }
}

fn diffusion_config(diffusion: &QuasiPeriodicDiffusion) -> DiffusionConfig {
    DiffusionConfig {
        base: affine_config(diffusion.base()),
        modes: diffusion
            .modes()
            .iter()
            .map(|m| DiffusionModeConfig {
                omega: m.omega,
                cos: affine_config(&m.cos_map),
                sin: affine_config(&m.sin_map),
            })
            .collect(),
    }
}

fn scale_drift(drift: &QuasiPeriodicDrift, s: f64) -> QuasiPeriodicDrift {
    QuasiPeriodicDrift::new(
        drift.base_matrix() * s,
        drift.base_vector() * s,
        drift
            .modes()
            .iter()
            .map(|m| DriftMode {
                omega: m.omega,
                cos_matrix: &m.cos_matrix * s,
                cos_vector: &m.cos_vector * s,
                sin_matrix: &m.sin_matrix * s,
                sin_vector: &m.sin_vector * s,
            })
            .collect(),
    )
    .expect("scaling preserves validity")
}

fn scale_affine(map: &AffineMatrixMap, s: f64) -> AffineMatrixMap {
    AffineMatrixMap::new(
        map.constant_part() * s,
        map.linear_part().iter().map(|l| l * s).collect(),
    )
    .expect("scaling preserves shape")
}

fn scale_diffusion(diffusion: &QuasiPeriodicDiffusion, s: f64) -> QuasiPeriodicDiffusion {
    QuasiPeriodicDiffusion::new(
        scale_affine(diffusion.base(), s),
        diffusion
            .modes()
            .iter()
            .map(|m| DiffusionMode {
                omega: m.omega,
                cos_map: scale_affine(&m.cos_map, s),
                sin_map: scale_affine(&m.sin_map, s),
            })
            .collect(),
    )
    .expect("scaling preserves validity")
}

/// Rescales the pair so the combined constant hits `k_target` exactly.
fn rescale_to_k(
    drift: QuasiPeriodicDrift,
    diffusion: QuasiPeriodicDiffusion,
    k_target: f64,
) -> (QuasiPeriodicDrift, QuasiPeriodicDiffusion) {
    let k_unit = combined_growth_constant(&drift, &diffusion);
    let s = k_target / k_unit;
    (scale_drift(&drift, s), scale_diffusion(&diffusion, s))
}

fn k_for_theta_prime(theta_prime: f64, delta: f64, trace_q: f64) -> f64 {
    (theta_prime * delta / (4.0 * (1.0 / delta + trace_q))).sqrt()
}

/// Reference convergence scenario: d = 3, m = 2, one incommensurate
/// frequency pair (1 in the drift, sqrt 2 in the diffusion), state-dependent
/// diffusion, theta' = 0.3.
pub fn reference_scenario() -> ExperimentConfig {
    let d = 3;
    let lambdas = vec![1.0, 1.5, 2.0];
    let qs = vec![0.25, 0.25];
    let trace_q: f64 = qs.iter().sum();

    // the oscillatory forcing rotates through an orthogonal equal-norm
    // vector pair, so its contribution to time averages has a
    // phase-independent magnitude
    let drift_unit = QuasiPeriodicDrift::new(
        DMatrix::from_row_slice(d, d, &[0.0, 0.3, 0.0, -0.3, 0.0, 0.2, 0.0, -0.2, 0.0]),
        DVector::from_vec(vec![0.5, 0.0, -0.3]),
        vec![DriftMode {
            omega: 1.0,
            cos_matrix: DMatrix::identity(d, d) * 0.2,
            cos_vector: DVector::from_vec(vec![0.4, 0.3, 0.0]),
            sin_matrix: DMatrix::zeros(d, d),
            sin_vector: DVector::from_vec(vec![-0.3, 0.4, 0.0]),
        }],
    )
    .unwrap();

    // diffusion blocks share the column space of a fixed 3x2 frame
    let frame = DMatrix::from_row_slice(d, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 1.0]);
    let block = |inner: [f64; 4]| &frame * DMatrix::from_row_slice(2, 2, &inner);
    let diffusion_unit = QuasiPeriodicDiffusion::new(
        AffineMatrixMap::new(
            block([0.5, 0.0, 0.0, 0.5]),
            vec![
                block([0.10, 0.0, 0.0, 0.05]),
                block([0.0, 0.05, 0.05, 0.0]),
                DMatrix::zeros(d, 2),
            ],
        )
        .unwrap(),
        // the mode's inner blocks rotate (diag(g, -g) against g J with
        // isotropic Q): the double-frequency self products cancel exactly
        // and the base-mode cross terms keep a phase-stable magnitude
        vec![DiffusionMode {
            omega: SQRT2,
            cos_map: AffineMatrixMap::new(
                block([0.3, 0.0, 0.0, -0.3]),
                vec![
                    block([0.05, 0.0, 0.0, 0.0]),
                    DMatrix::zeros(d, 2),
                    DMatrix::zeros(d, 2),
                ],
            )
            .unwrap(),
            sin_map: AffineMatrixMap::additive(block([0.0, 0.3, 0.3, 0.0])),
        }],
    )
    .unwrap();

    let k = k_for_theta_prime(0.3, 1.0, trace_q);
    let (drift, diffusion) = rescale_to_k(drift_unit, diffusion_unit, k);

    ExperimentConfig {
        model: ModelConfig {
            generator_eigenvalues: lambdas,
            q_eigenvalues: qs,
        },
        drift: drift_config(&drift),
        diffusion: diffusion_config(&diffusion),
        eps_ladder: vec![0.2, 0.1, 0.05, 0.025],
        window: [0.0, 2.0],
        n_paths: 512,
        step: 0.005,
        grid_stride: 8,
        burn_in_tol: 1e-3,
        master_seed: 41,
        continuity: Some(ContinuityConfig {
            perturbation_vector: vec![0.1, 0.0, 0.0],
            amplitudes: vec![1.0, 0.5, 0.25, 0.125, 0.0],
        }),
        convolution: Some(ConvolutionConfig {
            tau: 0.0,
            t: 2.0,
            curve: CurveConfig {
                constant: vec![0.2, -0.1, 0.1],
                modes: vec![CurveModeConfig {
                    omega: 0.7,
                    cos_amplitude: vec![0.15, 0.0, 0.1],
                    sin_amplitude: vec![0.0, 0.1, 0.0],
                }],
            },
            n_quad: 4000,
        }),
        novikov: Some(NovikovConfig {
            p_values: vec![2.0, 4.0],
            n_samples: 20_000,
        }),
    }
}

/// Affine-drift, additive-noise scenario whose law is exactly Gaussian:
/// strong oscillating mean forcing, small noise, theta' = 0.3. The closed
/// marginal law from the moment equations is the oracle for this one.
pub fn gaussian_scenario() -> ExperimentConfig {
    let d = 2;
    let lambdas = vec![1.0, 2.0];
    let qs = vec![0.5, 0.5];
    let trace_q: f64 = qs.iter().sum();

    let drift_unit = QuasiPeriodicDrift::new(
        DMatrix::from_row_slice(d, d, &[0.0, 0.15, -0.15, 0.0]),
        DVector::from_vec(vec![0.3, 0.0]),
        vec![DriftMode {
            omega: 0.8,
            cos_matrix: DMatrix::zeros(d, d),
            cos_vector: DVector::from_vec(vec![1.0, 0.6]),
            sin_matrix: DMatrix::zeros(d, d),
            sin_vector: DVector::from_vec(vec![0.6, 0.8]),
        }],
    )
    .unwrap();
    let diffusion_unit = QuasiPeriodicDiffusion::new(
        AffineMatrixMap::additive(DMatrix::from_row_slice(d, 2, &[0.25, 0.0, 0.0, 0.2])),
        vec![DiffusionMode {
            omega: 0.8 * SQRT2,
            cos_map: AffineMatrixMap::additive(DMatrix::from_row_slice(
                d,
                2,
                &[0.12, 0.0, 0.0, 0.0],
            )),
            sin_map: AffineMatrixMap::additive(DMatrix::from_row_slice(
                d,
                2,
                &[0.0, 0.0, 0.08, 0.0],
            )),
        }],
    )
    .unwrap();

    let k = k_for_theta_prime(0.3, 1.0, trace_q);
    let (drift, diffusion) = rescale_to_k(drift_unit, diffusion_unit, k);

    ExperimentConfig {
        model: ModelConfig {
            generator_eigenvalues: lambdas,
            q_eigenvalues: qs,
        },
        drift: drift_config(&drift),
        diffusion: diffusion_config(&diffusion),
        eps_ladder: vec![0.4, 0.2, 0.1, 0.0125],
        window: [0.0, 2.0],
        n_paths: 512,
        step: 0.0025,
        grid_stride: 16,
        burn_in_tol: 1e-3,
        master_seed: 42,
        continuity: Some(ContinuityConfig {
            perturbation_vector: vec![0.1, 0.0],
            amplitudes: vec![1.0, 0.5, 0.25, 0.125, 0.0],
        }),
        convolution: None,
        novikov: Some(NovikovConfig {
            p_values: vec![2.0, 4.0],
            n_samples: 20_000,
        }),
    }
}

/// Scalar Ornstein-Uhlenbeck scenario (no oscillation): the workhorse for
/// sampling-floor studies.
pub fn ou_scenario() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig {
            generator_eigenvalues: vec![1.0],
            q_eigenvalues: vec![1.0],
        },
        drift: DriftConfig {
            base_matrix: vec![vec![0.0]],
            base_vector: vec![0.0],
            modes: vec![],
        },
        diffusion: DiffusionConfig {
            base: AffineMapConfig {
                constant: vec![vec![0.3]],
                linear: vec![],
            },
            modes: vec![],
        },
        eps_ladder: vec![0.5],
        window: [0.0, 2.0],
        n_paths: 500,
        step: 0.02,
        grid_stride: 2,
        burn_in_tol: 1e-3,
        master_seed: 43,
        continuity: None,
        convolution: None,
        novikov: None,
    }
}

/// Same shape as the reference scenario but with every oscillatory mode
/// removed: the oscillating and averaged solutions share one law, so every
/// ladder distance must sit at the sampling floor.
pub fn time_independent_scenario() -> ExperimentConfig {
    let mut config = reference_scenario();
    config.drift.modes.clear();
    config.diffusion.modes.clear();
    config.master_seed = 44;
    config.continuity = None;
    config.convolution = None;
    config.novikov = None;
    config
}

/// Mixed drift/diffusion scenario rescaled to hit the given `theta'`
/// exactly (d = m = 2); used for the moment-bound sweep.
pub fn moment_bound_scenario(theta_prime: f64) -> ExperimentConfig {
    let d = 2;
    let lambdas = vec![1.0, 2.0];
    let qs = vec![0.7, 0.3];
    let trace_q: f64 = qs.iter().sum();

    let drift_unit = QuasiPeriodicDrift::new(
        DMatrix::from_row_slice(d, d, &[0.0, 0.2, -0.2, 0.0]),
        DVector::from_vec(vec![0.5, 0.2]),
        vec![DriftMode {
            omega: 1.0,
            cos_matrix: DMatrix::identity(d, d) * 0.1,
            cos_vector: DVector::from_vec(vec![0.3, 0.0]),
            sin_matrix: DMatrix::zeros(d, d),
            sin_vector: DVector::from_vec(vec![0.0, 0.2]),
        }],
    )
    .unwrap();
    let diffusion_unit = QuasiPeriodicDiffusion::new(
        AffineMatrixMap::new(
            DMatrix::from_row_slice(d, 2, &[0.5, 0.1, 0.0, 0.4]),
            vec![
                DMatrix::from_row_slice(d, 2, &[0.1, 0.0, 0.0, 0.05]),
                DMatrix::zeros(d, 2),
            ],
        )
        .unwrap(),
        vec![DiffusionMode {
            omega: SQRT2,
            cos_map: AffineMatrixMap::additive(DMatrix::from_row_slice(
                d,
                2,
                &[0.2, 0.0, 0.0, 0.1],
            )),
            sin_map: AffineMatrixMap::additive(DMatrix::from_row_slice(
                d,
                2,
                &[0.0, 0.1, 0.1, 0.0],
            )),
        }],
    )
    .unwrap();

    let k = k_for_theta_prime(theta_prime, 1.0, trace_q);
    let (drift, diffusion) = rescale_to_k(drift_unit, diffusion_unit, k);

    ExperimentConfig {
        model: ModelConfig {
            generator_eigenvalues: lambdas,
            q_eigenvalues: qs,
        },
        drift: drift_config(&drift),
        diffusion: diffusion_config(&diffusion),
        eps_ladder: vec![1.0],
        window: [0.0, 2.0],
        n_paths: 1000,
        step: 0.02,
        grid_stride: 4,
        burn_in_tol: 1e-3,
        master_seed: 45,
        continuity: None,
        convolution: None,
        novikov: None,
    }
}
