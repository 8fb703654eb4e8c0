//! Distances between path-space and state-space distributions.
//!
//! The reported metric is the empirical L2-Wasserstein distance between two
//! equal-size ensembles. On path space the ground cost is the sup over the
//! shared recording grid of the Euclidean state distance; since both
//! ensembles carry equal weights, the optimal-transport infimum is realized
//! by a perfect matching, solved exactly by shortest augmenting paths. The
//! bounded-Lipschitz distance is never optimized directly: it is dominated
//! by the Wasserstein distance for the laws at hand, so a vanishing W2
//! certifies the narrow-convergence statements.
//!
//! Closed-form Gaussian transport (the Bures formula) and the nuclear-norm
//! distance between covariances serve as oracles for the marginal laws.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::nuclear_norm;
use crate::solver::{sha256_hex, PathEnsemble};

/// Largest ensemble size accepted by the exact assignment solve.
pub const MAX_EXACT_PATHS: usize = 2048;

/// Ground cost underlying an empirical distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    /// Sup over the recording grid of the state-space norm.
    PathSup,
    /// State-space norm at one fixed grid time.
    State,
}

/// An empirical distance measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    pub n_samples: usize,
    pub ground_metric: GroundMetric,
    /// Self-distance of the reference law, when one was measured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    /// Seeds of the two compared ensembles, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<[u64; 2]>,
    /// Provenance hashes of the two compared ensembles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hashes: Option<[String; 2]>,
}

/// Sup over the grid of the Euclidean distance between two paths.
pub fn path_sup_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    let mut worst = 0.0_f64;
    for (xa, xb) in a.iter().zip(b.iter()) {
        if xa.len() != xb.len() {
            return Err(Error::DimensionMismatch {
                context: "path states",
                expected: xa.len(),
                found: xb.len(),
            });
        }
        let mut ss = 0.0;
        for c in 0..xa.len() {
            let d = xa[c] - xb[c];
            ss += d * d;
        }
        worst = worst.max(ss);
    }
    Ok(worst.sqrt())
}

fn ensemble_pair_checks(a: &PathEnsemble, b: &PathEnsemble) -> Result<usize> {
    if a.n_paths() != b.n_paths() {
        return Err(Error::SampleCountMismatch(a.n_paths(), b.n_paths()));
    }
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let n = a.n_paths();
    if n > MAX_EXACT_PATHS {
        return Err(Error::EnsembleTooLarge(n, MAX_EXACT_PATHS));
    }
    Ok(n)
}

fn provenance_pair(a: &PathEnsemble, b: &PathEnsemble) -> [String; 2] {
    [
        sha256_hex(&serde_json::to_string(a.provenance()).expect("provenance serializes")),
        sha256_hex(&serde_json::to_string(b.provenance()).expect("provenance serializes")),
    ]
}

fn assignment_value(cost_sq: Vec<f64>, n: usize) -> f64 {
    let (_, total) = assignment::solve(&cost_sq, n);
    (total.max(0.0) / n as f64).sqrt()
}

/// Empirical L2-Wasserstein distance with path-sup ground cost: the square
/// root of the optimally matched mean squared sup-distance.
pub fn empirical_w2(a: &PathEnsemble, b: &PathEnsemble) -> Result<DistanceReport> {
    let n = ensemble_pair_checks(a, b)?;
    let rows = crate::parallel::map_indexed(n, |i| {
        let mut row = vec![0.0; n];
        for (j, slot) in row.iter_mut().enumerate() {
            let d = path_sup_distance(a.path(i), b.path(j))?;
            *slot = d * d;
        }
        Ok(row)
    })?;
    let cost_sq: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DistanceReport {
        value: assignment_value(cost_sq, n),
        n_samples: n,
        ground_metric: GroundMetric::PathSup,
        baseline: None,
        seeds: None,
        hashes: Some(provenance_pair(a, b)),
    })
}

/// Empirical L2-Wasserstein distance between the marginals at one grid
/// index, with plain state-space ground cost.
pub fn empirical_w2_marginal(
    a: &PathEnsemble,
    b: &PathEnsemble,
    time_index: usize,
) -> Result<DistanceReport> {
    let n = ensemble_pair_checks(a, b)?;
    if time_index >= a.n_times() {
        return Err(Error::config(format!(
            "time index {time_index} out of range (grid has {} points)",
            a.n_times()
        )));
    }
    let rows = crate::parallel::map_indexed(n, |i| {
        let xi = &a.path(i)[time_index];
        let mut row = vec![0.0; n];
        for (j, slot) in row.iter_mut().enumerate() {
            let d = (xi - &b.path(j)[time_index]).norm();
            *slot = d * d;
        }
        Ok(row)
    })?;
    let cost_sq: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DistanceReport {
        value: assignment_value(cost_sq, n),
        n_samples: n,
        ground_metric: GroundMetric::State,
        baseline: None,
        seeds: None,
        hashes: Some(provenance_pair(a, b)),
    })
}

fn check_covariance(s: &DMatrix<f64>) -> Result<()> {
    linalg::check_symmetric(s, linalg::SYMMETRY_TOL)?;
    let (vals, _) = linalg::symmetric_eigen_sorted(s);
    let scale = vals.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    if let Some(&worst) = vals.iter().find(|&&v| v < -linalg::PSD_TOL * scale) {
        return Err(Error::NotPositiveSemidefinite {
            eigenvalue: worst,
            tolerance: linalg::PSD_TOL * scale,
        });
    }
    Ok(())
}

/// Closed-form L2-Wasserstein distance between Gaussian laws:
/// `sqrt(|m1 - m2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}))`.
pub fn gaussian_w2(
    m1: &DVector<f64>,
    s1: &DMatrix<f64>,
    m2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    if m1.len() != m2.len() || s1.nrows() != m1.len() || s2.nrows() != m2.len() {
        return Err(Error::DimensionMismatch {
            context: "gaussian_w2",
            expected: m1.len(),
            found: m2.len(),
        });
    }
    check_covariance(s1)?;
    check_covariance(s2)?;
    let root1 = linalg::sqrt_psd(s1, linalg::PSD_TOL)?;
    let cross = &root1 * s2 * &root1;
    let cross = (&cross + cross.transpose()) * 0.5;
    let (vals, _) = linalg::symmetric_eigen_sorted(&cross);
    let cross_trace: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();
    let squared = (m1 - m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross_trace;
    Ok(squared.max(0.0).sqrt())
}

/// Nuclear-norm distance between two symmetric matrices.
///
/// Each input is checked for symmetry relative to its own scale; the
/// difference is then symmetrized before the spectral sum, so two equal
/// matrices at roundoff distance report a near-zero value instead of
/// tripping a relative symmetry check against a vanishing scale.
pub fn covariance_nuclear_distance(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    linalg::check_symmetric(s1, linalg::SYMMETRY_TOL)?;
    linalg::check_symmetric(s2, linalg::SYMMETRY_TOL)?;
    let diff = s1 - s2;
    let diff = (&diff + diff.transpose()) * 0.5;
    nuclear_norm(&diff)
}

/// Finite-sample floor of the empirical distance: the W2 between two
/// independent ensembles drawn from the same law with distinct seeds.
///
/// No convergence sequence can be expected to fall below this baseline.
pub fn self_distance_baseline(
    generate: impl Fn(u64) -> Result<PathEnsemble>,
    seed_a: u64,
    seed_b: u64,
) -> Result<DistanceReport> {
    if seed_a == seed_b {
        return Err(Error::IdenticalSeeds(seed_a));
    }
    let a = generate(seed_a)?;
    let b = generate(seed_b)?;
    let mut report = empirical_w2(&a, &b)?;
    report.seeds = Some([seed_a, seed_b]);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Provenance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ensemble_from(values: Vec<Vec<Vec<f64>>>) -> PathEnsemble {
        let n_times = values[0].len();
        let times: Vec<f64> = (0..n_times).map(|k| k as f64 * 0.5).collect();
        let paths: Vec<Vec<DVector<f64>>> = values
            .into_iter()
            .map(|path| path.into_iter().map(DVector::from_vec).collect())
            .collect();
        let seeds = (0..paths.len() as u64).collect();
        PathEnsemble::from_parts(times, paths, seeds, Provenance::synthetic("test")).unwrap()
    }

    #[test]
    fn path_sup_cases() {
        let a = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ];
        assert_eq!(path_sup_distance(&a, &a).unwrap(), 0.0);
        // constant offset v: distance is |v|
        let v = DVector::from_vec(vec![0.3, -0.4]);
        let b: Vec<DVector<f64>> = a.iter().map(|x| x + &v).collect();
        assert_relative_eq!(path_sup_distance(&a, &b).unwrap(), 0.5, epsilon = 1e-14);
        // single-point spike of height 2
        let mut c = a.clone();
        c[1][0] += 2.0;
        assert_relative_eq!(path_sup_distance(&a, &c).unwrap(), 2.0, epsilon = 1e-14);
        // grid mismatch
        assert!(matches!(
            path_sup_distance(&a, &a[..1]),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn w2_identical_ensembles_is_zero() {
        let e = ensemble_from(vec![
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5], vec![-0.5]],
        ]);
        let r = empirical_w2(&e, &e).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.n_samples, 2);
    }

    #[test]
    fn w2_single_pair_reduces_to_path_distance() {
        let a = ensemble_from(vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]]);
        let b = ensemble_from(vec![vec![vec![3.0, 4.0], vec![0.0, 0.0]]]);
        let r = empirical_w2(&a, &b).unwrap();
        assert_relative_eq!(r.value, 5.0, epsilon = 1e-14);
    }

    #[test]
    fn w2_matches_exhaustive_permutations_at_n3() {
        let mut rng = crate::rng::rng_from_seed(91);
        for _ in 0..100 {
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                ensemble_from(
                    (0..3)
                        .map(|_| {
                            (0..4)
                                .map(|_| (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect())
                                .collect()
                        })
                        .collect(),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let fast = empirical_w2(&a, &b).unwrap().value;
            // brute force over all 6 matchings
            let mut cost = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    let d = path_sup_distance(a.path(i), b.path(j)).unwrap();
                    cost[i * 3 + j] = d * d;
                }
            }
            let brute = (assignment::brute_force(&cost, 3) / 3.0).sqrt();
            assert_relative_eq!(fast, brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn w2_rejects_mismatched_inputs() {
        let a = ensemble_from(vec![vec![vec![0.0], vec![0.0]]]);
        let b = ensemble_from(vec![
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0], vec![1.0]],
        ]);
        assert!(matches!(
            empirical_w2(&a, &b),
            Err(Error::SampleCountMismatch(1, 2))
        ));
    }

    #[test]
    fn marginal_w2_is_dominated_by_path_sup() {
        let mut rng = crate::rng::rng_from_seed(92);
        for _ in 0..20 {
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                ensemble_from(
                    (0..5)
                        .map(|_| {
                            (0..3)
                                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                                .collect()
                        })
                        .collect(),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let sup = empirical_w2(&a, &b).unwrap().value;
            for k in 0..3 {
                let marg = empirical_w2_marginal(&a, &b, k).unwrap().value;
                assert!(
                    marg <= sup + 1e-12,
                    "marginal {marg} exceeds path-sup {sup} at index {k}"
                );
            }
        }
    }

    #[test]
    fn gaussian_w2_cases() {
        let m = DVector::from_vec(vec![0.1, -0.2]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        assert_relative_eq!(gaussian_w2(&m, &s, &m, &s).unwrap(), 0.0, epsilon = 1e-7);
        // equal covariances: distance is the mean shift
        let shift = DVector::from_vec(vec![3.0, 4.0]);
        let m2 = &m + &shift;
        assert_relative_eq!(
            gaussian_w2(&m, &s, &m2, &s).unwrap(),
            5.0,
            max_relative = 1e-9
        );
        // one dimension: |sigma1 - sigma2|
        let z = DVector::zeros(1);
        let s1 = DMatrix::from_element(1, 1, 1.0);
        let s2 = DMatrix::from_element(1, 1, 4.0);
        assert_relative_eq!(
            gaussian_w2(&z, &s1, &z, &s2).unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_w2_rejects_non_psd() {
        let z = DVector::zeros(2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let ok = DMatrix::identity(2, 2);
        assert!(gaussian_w2(&z, &bad, &z, &ok).is_err());
    }

    #[test]
    fn nuclear_distance_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(covariance_nuclear_distance(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(
            covariance_nuclear_distance(&a, &b).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        // random pair against an SVD oracle
        let mut rng = crate::rng::rng_from_seed(93);
        for _ in 0..10 {
            let raw = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let s1 = (&raw + raw.transpose()) * 0.5;
            let raw2 = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let s2 = (&raw2 + raw2.transpose()) * 0.5;
            let direct = covariance_nuclear_distance(&s1, &s2).unwrap();
            let svd: f64 = (&s1 - &s2).singular_values().iter().sum();
            assert_relative_eq!(direct, svd, epsilon = 1e-9);
        }
    }

    #[test]
    fn baseline_requires_distinct_seeds() {
        let gen = |_: u64| {
            Ok(ensemble_from(vec![
                vec![vec![0.0], vec![0.0]],
                vec![vec![1.0], vec![1.0]],
            ]))
        };
        assert!(matches!(
            self_distance_baseline(gen, 5, 5),
            Err(Error::IdenticalSeeds(5))
        ));
    }

    #[test]
    fn baseline_of_degenerate_law_is_zero_and_symmetric() {
        // deterministic generator: same path regardless of seed
        let gen = |_: u64| Ok(ensemble_from(vec![vec![vec![0.7], vec![0.7]]]));
        let ab = self_distance_baseline(gen, 1, 2).unwrap();
        let ba = self_distance_baseline(gen, 2, 1).unwrap();
        assert_eq!(ab.value, 0.0);
        assert_eq!(ba.value, 0.0);
    }

    fn small_ensemble_strategy() -> impl Strategy<Value = PathEnsemble> {
        proptest::collection::vec(
            proptest::collection::vec(
                proptest::collection::vec(-1.0_f64..1.0, 2usize),
                3usize,
            ),
            3usize,
        )
        .prop_map(ensemble_from)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn w2_is_symmetric(a in small_ensemble_strategy(), b in small_ensemble_strategy()) {
            let ab = empirical_w2(&a, &b).unwrap().value;
            let ba = empirical_w2(&b, &a).unwrap().value;
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn w2_triangle_inequality(
            a in small_ensemble_strategy(),
            b in small_ensemble_strategy(),
            c in small_ensemble_strategy(),
        ) {
            let ac = empirical_w2(&a, &c).unwrap().value;
            let ab = empirical_w2(&a, &b).unwrap().value;
            let bc = empirical_w2(&b, &c).unwrap().value;
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn w2_invariant_under_path_permutation(
            a in small_ensemble_strategy(),
            b in small_ensemble_strategy(),
        ) {
            let direct = empirical_w2(&a, &b).unwrap().value;
            // rotate the paths of b
            let rotated = PathEnsemble::from_parts(
                b.times().to_vec(),
                (0..b.n_paths())
                    .map(|i| b.path((i + 1) % b.n_paths()).to_vec())
                    .collect(),
                b.seeds().to_vec(),
                Provenance::synthetic("rotated"),
            ).unwrap();
            let permuted = empirical_w2(&a, &rotated).unwrap().value;
            prop_assert!((direct - permuted).abs() <= 1e-12_f64.max(1e-12 * direct));
        }
    }
}
