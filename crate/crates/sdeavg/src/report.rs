//! Report structures and their JSON/CSV emission.
//!
//! Every report embeds the config hash, the package version and the master
//! seed, and contains the raw per-item tables its verdict was computed
//! from, so a verdict can be re-derived from the emitted data alone.
//! Reports carry no timestamps: identical runs emit byte-identical files.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::analysis::{ConstantsReport, GronwallReport, NovikovMcReport};
use crate::error::Result;
use crate::metrics::DistanceReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// Provenance metadata shared by all reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub rng_algorithm: String,
}

impl RunMeta {
    pub fn new(config: &crate::config::ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.master_seed,
            config_hash: config.hash(),
            rng_algorithm: crate::rng::RNG_ALGORITHM.to_string(),
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Ladder verdict summary shared by the convergence-style experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderSummary {
    pub values: Vec<f64>,
    pub baseline: f64,
    /// Final ladder value over the baseline.
    pub final_ratio: f64,
    pub inversions: usize,
    /// Largest increase between consecutive ladder values (0 if monotone).
    pub worst_inversion_excess: f64,
    pub verdict: Verdict,
}

/// Builds the ladder verdict: nonincreasing up to one inversion bounded by
/// twice the baseline, final value at most 1.5 times the baseline.
pub fn ladder_summary(values: Vec<f64>, baseline: f64) -> LadderSummary {
    let mut inversions = 0;
    let mut worst = 0.0_f64;
    for w in values.windows(2) {
        if w[1] > w[0] {
            inversions += 1;
            worst = worst.max(w[1] - w[0]);
        }
    }
    let last = *values.last().unwrap_or(&0.0);
    let final_ratio = if baseline > 0.0 {
        last / baseline
    } else if last == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let pass = inversions <= 1 && worst <= 2.0 * baseline && last <= 1.5 * baseline;
    LadderSummary {
        values,
        baseline,
        final_ratio,
        inversions,
        worst_inversion_excess: worst,
        verdict: Verdict::from_bool(pass),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub meta: RunMeta,
    pub constants: ConstantsReport,
    pub t_burn: f64,
    pub n_paths: usize,
    pub eps_ladder: Vec<f64>,
    pub summary: LadderSummary,
    /// Closed-form supremum over the grid of the marginal Gaussian W2,
    /// available when the scenario is affine/additive; a lower bound on the
    /// path-space distance per ladder entry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_lower_bounds: Option<Vec<f64>>,
    pub distances: Vec<DistanceReport>,
    pub baseline_distance: DistanceReport,
}

impl ConvergenceReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("convergence.json");
        write_json(&json, self)?;
        let csv = dir.join("distances.csv");
        let rows: Vec<String> = self
            .eps_ladder
            .iter()
            .zip(self.summary.values.iter())
            .enumerate()
            .map(|(i, (eps, w2))| {
                let lb = self
                    .marginal_lower_bounds
                    .as_ref()
                    .map_or(String::new(), |v| format!("{}", v[i]));
                format!("{eps},{w2},{},{lb}", self.summary.baseline)
            })
            .collect();
        write_csv(&csv, "eps,w2,baseline,marginal_lower_bound", &rows)?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GronwallCurveCheck {
    /// Constant forcing term of the hypothesis inequality.
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub amplitude: f64,
    pub report: GronwallReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub meta: RunMeta,
    pub shared_k: f64,
    pub theta_prime_shared: f64,
    pub t_burn: f64,
    pub amplitudes: Vec<f64>,
    pub summary: LadderSummary,
    pub gronwall: GronwallCurveCheck,
    pub distances: Vec<DistanceReport>,
    pub baseline_distance: DistanceReport,
}

impl ContinuityReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("continuity.json");
        write_json(&json, self)?;
        let csv = dir.join("continuity.csv");
        let rows: Vec<String> = self
            .amplitudes
            .iter()
            .zip(self.summary.values.iter())
            .map(|(a, w2)| format!("{a},{w2},{}", self.summary.baseline))
            .collect();
        write_csv(&csv, "amplitude,w2,baseline", &rows)?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvolutionEntry {
    pub eps: f64,
    pub drift_error: f64,
    pub drift_tail_bound: f64,
    pub drift_quad_floor: f64,
    pub diffusion_error: f64,
    pub diffusion_tail_bound: f64,
    pub diffusion_quad_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvolutionReport {
    pub meta: RunMeta,
    pub tau: f64,
    pub t: f64,
    pub entries: Vec<ConvolutionEntry>,
    /// err(eps_{i+1}) / err(eps_i) along the ladder.
    pub drift_ratios: Vec<f64>,
    pub diffusion_ratios: Vec<f64>,
    pub verdict: Verdict,
}

impl ConvolutionReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("convolution.json");
        write_json(&json, self)?;
        let csv = dir.join("convolution.csv");
        let rows: Vec<String> = self
            .entries
            .iter()
            .map(|e| {
                format!(
                    "{},{},{},{},{},{},{}",
                    e.eps,
                    e.drift_error,
                    e.drift_tail_bound,
                    e.drift_quad_floor,
                    e.diffusion_error,
                    e.diffusion_tail_bound,
                    e.diffusion_quad_floor
                )
            })
            .collect();
        write_csv(
            &csv,
            "eps,drift_error,drift_tail_bound,drift_quad_floor,diffusion_error,diffusion_tail_bound,diffusion_quad_floor",
            &rows,
        )?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanPairCheck {
    pub time_a: f64,
    pub time_b: f64,
    pub mean_difference_norm: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariancePairCheck {
    pub time_a: f64,
    pub time_b: f64,
    pub nuclear_distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub meta: RunMeta,
    pub t_burn: f64,
    pub n_paths: usize,
    pub check_times: Vec<f64>,
    pub mean_checks: Vec<MeanPairCheck>,
    pub covariance_checks: Vec<CovariancePairCheck>,
    pub verdict: Verdict,
}

impl StationarityReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("stationarity.json");
        write_json(&json, self)?;
        let csv = dir.join("stationarity.csv");
        let mut rows = Vec::new();
        for c in &self.mean_checks {
            rows.push(format!(
                "mean,{},{},{},{},{}",
                c.time_a, c.time_b, c.mean_difference_norm, c.threshold, c.pass
            ));
        }
        for c in &self.covariance_checks {
            rows.push(format!(
                "covariance,{},{},{},{},{}",
                c.time_a, c.time_b, c.nuclear_distance, c.threshold, c.pass
            ));
        }
        write_csv(&csv, "kind,time_a,time_b,statistic,threshold,pass", &rows)?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NovikovReport {
    pub meta: RunMeta,
    pub eps: f64,
    pub cases: Vec<NovikovMcReport>,
    pub verdict: Verdict,
}

impl NovikovReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("novikov.json");
        write_json(&json, self)?;
        let csv = dir.join("novikov.csv");
        let rows: Vec<String> = self
            .cases
            .iter()
            .map(|c| {
                format!(
                    "{},{},{},{},{},{},{}",
                    c.p, c.n_samples, c.lhs, c.lhs_std_error, c.rhs, c.ratio, c.novikov_c_p
                )
            })
            .collect();
        write_csv(&csv, "p,n_samples,lhs,lhs_std_error,rhs,ratio,c_p", &rows)?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GronwallVerifyReport {
    pub meta: RunMeta,
    /// Relative error of the constant-forcing closed form
    /// `alpha delta / (delta - beta)`.
    pub constant_alpha_relative_error: f64,
    /// Relative error against the exponential-forcing antiderivative.
    pub exponential_alpha_relative_error: f64,
    pub simulated: GronwallCurveCheck,
    pub verdict: Verdict,
}

impl GronwallVerifyReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("gronwall.json");
        write_json(&json, self)?;
        Ok(vec![json])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsCheckReport {
    pub meta: RunMeta,
    pub constants: ConstantsReport,
    pub theta_below_one: bool,
    pub theta_prime_below_one: bool,
}

impl ConstantsCheckReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("constants.json");
        write_json(&json, self)?;
        Ok(vec![json])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageProbe {
    pub x: Vec<f64>,
    pub f0: Vec<f64>,
    /// Distance between the quadrature mean of the drift and the closed form.
    pub drift_numeric_error: f64,
    /// Analytic oscillation-tail allowance for that distance.
    pub drift_tail_bound: f64,
    /// Nuclear distance between the quadrature covariance mean and `H0`.
    pub covariance_numeric_error: f64,
    /// `|G0 Q G0* - H0|_N / |H0|_N`.
    pub g0_reconstruction_relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageReport {
    pub meta: RunMeta,
    pub horizon: f64,
    pub probes: Vec<AverageProbe>,
    pub verdict: Verdict,
}

impl AverageReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("average.json");
        write_json(&json, self)?;
        let csv = dir.join("average.csv");
        let rows: Vec<String> = self
            .probes
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{}",
                    p.drift_numeric_error,
                    p.drift_tail_bound,
                    p.covariance_numeric_error,
                    p.g0_reconstruction_relative_error
                )
            })
            .collect();
        write_csv(
            &csv,
            "drift_numeric_error,drift_tail_bound,covariance_numeric_error,g0_reconstruction_relative_error",
            &rows,
        )?;
        Ok(vec![json, csv])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub meta: RunMeta,
    pub eps: f64,
    pub n_paths: usize,
    pub t_burn: f64,
    pub files: Vec<String>,
}

impl SimulateReport {
    pub fn emit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("simulate.json");
        write_json(&json, self)?;
        Ok(vec![json])
    }
}
