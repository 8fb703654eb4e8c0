//! Command-line harness: loads a JSON experiment configuration, runs one of
//! the experiments and emits JSON/CSV reports.
//!
//! Exit codes: 0 = PASS, 1 = FAIL (an experiment ran and its verdict is
//! negative, or a run failed mid-flight), 2 = configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdeavg::config::{load_config, Experiment};
use sdeavg::experiments;
use sdeavg::report::Verdict;

#[derive(Parser)]
#[command(name = "sdeavg", version, about = "Averaging laboratory for oscillating stochastic evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = library default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one ensemble and dump it to CSV and binary.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Oscillation parameter (0 runs the averaged equation).
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Audit the averaged coefficients against quadrature means.
    Average {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of probe states (the first is always the origin).
        #[arg(long, default_value_t = 3)]
        probes: usize,
    },
    /// Run the epsilon-ladder convergence experiment.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the coefficient-continuity schedule.
    Continuity {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the semigroup-weighted averaging of the coefficients.
    ConvolutionCheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check stationarity of the averaged solution.
    Stationarity {
        #[command(flatten)]
        common: CommonArgs,
        /// Negative control: skip burn-in and start far from equilibrium.
        #[arg(long)]
        no_burn_in: bool,
    },
    /// Compute and print the contraction and moment constants.
    CheckConstants {
        #[command(flatten)]
        common: CommonArgs,
        /// Fail unless theta < 1.
        #[arg(long)]
        require_theta: bool,
        /// Fail unless theta' < 1.
        #[arg(long)]
        require_theta_prime: bool,
    },
    /// Monte Carlo check of the stochastic-integral moment inequality.
    VerifyNovikov {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Analytic and simulated checks of the Gronwall-type bound.
    VerifyGronwall {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate { common, .. }
            | Command::Average { common, .. }
            | Command::Converge { common }
            | Command::Continuity { common }
            | Command::ConvolutionCheck { common }
            | Command::Stationarity { common, .. }
            | Command::CheckConstants { common, .. }
            | Command::VerifyNovikov { common }
            | Command::VerifyGronwall { common } => common,
        }
    }
}

fn load_experiment(common: &CommonArgs) -> Result<Experiment, sdeavg::Error> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    Experiment::from_config(&config)
}

fn exit_for(verdict: Verdict) -> ExitCode {
    if verdict.is_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode, sdeavg::Error> {
    let common = cli.command.common();
    #[cfg(feature = "parallel")]
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .ok();
    }
    #[cfg(not(feature = "parallel"))]
    if common.threads > 1 {
        eprintln!("note: built without the parallel feature; --threads ignored");
    }
    let exp = load_experiment(common)?;
    let out = common.out.clone();

    match cli.command {
        Command::Simulate { eps, .. } => {
            let report = experiments::run_simulate(&exp, eps, &out)?;
            report.emit(&out)?;
            println!(
                "simulated {} paths at eps = {eps} (burn-in {:.4}); wrote {}",
                report.n_paths,
                report.t_burn,
                report.files.join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Average { probes, .. } => {
            let report = experiments::run_average_audit(&exp, probes)?;
            report.emit(&out)?;
            for (i, p) in report.probes.iter().enumerate() {
                println!(
                    "probe {i}: drift error {:.3e} (allowed {:.3e}), covariance error {:.3e}, \
                     G0 reconstruction {:.3e}",
                    p.drift_numeric_error,
                    p.drift_tail_bound,
                    p.covariance_numeric_error,
                    p.g0_reconstruction_relative_error
                );
            }
            println!("average audit: {:?}", report.verdict);
            Ok(exit_for(report.verdict))
        }
        Command::Converge { .. } => {
            let report = experiments::run_convergence(&exp)?;
            report.emit(&out)?;
            println!(
                "theta = {:.6}, theta' = {:.6}, burn-in {:.4}",
                report.constants.theta, report.constants.theta_prime, report.t_burn
            );
            for (eps, w2) in report.eps_ladder.iter().zip(&report.summary.values) {
                println!("  eps = {eps:<8} W2 = {w2:.6}");
            }
            println!(
                "baseline = {:.6}, final/baseline = {:.3}, verdict {:?}",
                report.summary.baseline, report.summary.final_ratio, report.summary.verdict
            );
            Ok(exit_for(report.summary.verdict))
        }
        Command::Continuity { .. } => {
            let report = experiments::run_coefficient_continuity(&exp)?;
            report.emit(&out)?;
            for (amp, w2) in report.amplitudes.iter().zip(&report.summary.values) {
                println!("  amplitude = {amp:<8} W2 = {w2:.6}");
            }
            println!(
                "baseline = {:.6}, Gronwall margins: hypothesis {:.3e}, conclusion {:.3e}, verdict {:?}",
                report.summary.baseline,
                report.gronwall.report.hypothesis_margin,
                report.gronwall.report.conclusion_margin,
                report.summary.verdict
            );
            Ok(exit_for(report.summary.verdict))
        }
        Command::ConvolutionCheck { .. } => {
            let report = experiments::run_convolution_average_check(&exp)?;
            report.emit(&out)?;
            for e in &report.entries {
                println!(
                    "  eps = {:<8} drift err {:.3e} (tail {:.3e}), diffusion err {:.3e} (tail {:.3e})",
                    e.eps, e.drift_error, e.drift_tail_bound, e.diffusion_error, e.diffusion_tail_bound
                );
            }
            println!("convolution check: {:?}", report.verdict);
            Ok(exit_for(report.verdict))
        }
        Command::Stationarity { no_burn_in, .. } => {
            let control = no_burn_in.then(|| experiments::StationarityControl {
                t_burn: 0.0,
                x0: vec![5.0; exp.model.state_dim()],
            });
            let report = experiments::run_stationarity_check(&exp, control.as_ref())?;
            report.emit(&out)?;
            println!(
                "stationarity over {} check times: {:?}",
                report.check_times.len(),
                report.verdict
            );
            Ok(exit_for(report.verdict))
        }
        Command::CheckConstants {
            require_theta,
            require_theta_prime,
            ..
        } => {
            let report = experiments::run_constants_check(&exp)?;
            report.emit(&out)?;
            let c = &report.constants;
            println!("K        = {:.6}", c.k);
            println!("delta    = {:.6}", c.delta);
            println!("trace Q  = {:.6}", c.trace_q);
            println!("theta    = {:.6} ({})", c.theta, below_one(c.theta));
            println!("theta'   = {:.6} ({})", c.theta_prime, below_one(c.theta_prime));
            for m in &c.moment_constants {
                println!(
                    "theta'_p(p = {}) = {:.6} with C_p = {:.6} at c* = {:.4}",
                    m.p, m.theta_prime_p, m.novikov_c_p, m.novikov_c_star
                );
            }
            match c.moment_bound_l2 {
                Some(b) => println!("mean-square bound theta'/(1 - theta') = {b:.6}"),
                None => println!("mean-square bound unavailable (theta' >= 1)"),
            }
            let ok = (!require_theta || report.theta_below_one)
                && (!require_theta_prime || report.theta_prime_below_one);
            Ok(exit_for(Verdict::from_bool(ok)))
        }
        Command::VerifyNovikov { .. } => {
            let report = experiments::run_novikov_verification(&exp)?;
            report.emit(&out)?;
            for case in &report.cases {
                println!(
                    "  p = {}: lhs {:.6e}, rhs {:.6e}, ratio {:.4} (SE {:.2e})",
                    case.p, case.lhs, case.rhs, case.ratio, case.lhs_std_error
                );
            }
            println!("moment inequality: {:?}", report.verdict);
            Ok(exit_for(report.verdict))
        }
        Command::VerifyGronwall { .. } => {
            let report = experiments::run_gronwall_verification(&exp)?;
            report.emit(&out)?;
            println!(
                "constant forcing relative error {:.3e}, exponential forcing {:.3e}",
                report.constant_alpha_relative_error, report.exponential_alpha_relative_error
            );
            println!(
                "simulated curve margins: hypothesis {:.3e}, conclusion {:.3e}",
                report.simulated.report.hypothesis_margin,
                report.simulated.report.conclusion_margin
            );
            println!("Gronwall verification: {:?}", report.verdict);
            Ok(exit_for(report.verdict))
        }
    }
}

fn below_one(v: f64) -> &'static str {
    if v < 1.0 {
        "< 1"
    } else {
        ">= 1"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err @ sdeavg::Error::Config(_)) | Err(err @ sdeavg::Error::Json(_)) => {
            eprintln!("configuration error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
