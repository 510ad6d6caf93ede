//! `switchlyap` command line: deterministic and probabilistic Lyapunov
//! exponent analysis of switched linear systems.
//!
//! Outputs are deterministic given `--seed`, regardless of `--threads`,
//! and every artifact gets a `.manifest.json` sibling recording the input
//! hash, seed and version. Exit codes: 0 success, 2 input error,
//! 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;
use std::path::{Path, PathBuf};
use switchlyap_cli::{output, schema, CliError};
use switchlyap_core::detlyap::BracketConfig;
use switchlyap_core::{criteria, ctmc, detlyap, hierarchy, pdmp};

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Error = 0,
    Info = 1,
    Debug = 2,
}

fn log_level() -> LogLevel {
    match std::env::var("SWITCHLYAP_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("info") => LogLevel::Info,
        _ => LogLevel::Error,
    }
}

fn log_info(msg: &str) {
    if log_level() >= LogLevel::Info {
        eprintln!("[info] {msg}");
    }
}

fn log_debug(msg: &str) {
    if log_level() >= LogLevel::Debug {
        eprintln!("[debug] {msg}");
    }
}

#[derive(Parser)]
#[command(
    name = "switchlyap",
    about = "Lyapunov exponents of switched linear systems under deterministic and Markovian switching",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Input file (system JSON, or rate-family JSON for hierarchy/limit).
    #[arg(long)]
    input: PathBuf,
    /// Output JSON path (derived artifacts sit next to it).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
    /// Horizon for simulations.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// Trajectory count for Monte Carlo.
    #[arg(long)]
    traj: Option<usize>,
    /// Search depth (segments per witness).
    #[arg(long)]
    depth: Option<usize>,
    /// Comma-separated value list: durations (det), jump rates (mu-scan),
    /// resample rates (converge).
    #[arg(long)]
    grid: Option<String>,
    /// n grid, either lo:hi in decades (e.g. 1e3:1e7) or a comma list.
    #[arg(long)]
    ngrid: Option<String>,
    /// Tolerance knob (fit tolerance, verdict tolerance, angle, …).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Bracket the deterministic exponent λ_d.
    Det(CommonArgs),
    /// Monte Carlo estimate of λ_p(ν, μ, P, A).
    Prob(CommonArgs),
    /// Recurrence structure and the class decomposition of λ_p.
    Classes(CommonArgs),
    /// Timescale ladder of a rate family.
    Hierarchy(CommonArgs),
    /// Limit convexified process of a rate family.
    Limit(CommonArgs),
    /// Coupled convergence experiment toward a convexified target.
    Converge(CommonArgs),
    /// λ_p along a list of jump rates (all-rows-π chain).
    MuScan(CommonArgs),
    /// Occupation of the dominant eigenspace by the angular process.
    Sphere(CommonArgs),
    /// Equality criteria: fixed-chain check, condition (C), certificate.
    Criteria(CommonArgs),
    /// Full gap report between λ_d and the probabilistic exponents.
    Gap(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Det(_) => "det",
            Command::Prob(_) => "prob",
            Command::Classes(_) => "classes",
            Command::Hierarchy(_) => "hierarchy",
            Command::Limit(_) => "limit",
            Command::Converge(_) => "converge",
            Command::MuScan(_) => "mu-scan",
            Command::Sphere(_) => "sphere",
            Command::Criteria(_) => "criteria",
            Command::Gap(_) => "gap",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Det(a)
            | Command::Prob(a)
            | Command::Classes(a)
            | Command::Hierarchy(a)
            | Command::Limit(a)
            | Command::Converge(a)
            | Command::MuScan(a)
            | Command::Sphere(a)
            | Command::Criteria(a)
            | Command::Gap(a) => a,
        }
    }
}

fn parse_value_list(text: &str, field: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| CliError::Input(format!("flag `{field}`: {e}")))?;
    if vals.is_empty() {
        return Err(CliError::Input(format!("flag `{field}`: empty list")));
    }
    Ok(vals)
}

fn parse_ngrid(text: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(text) = text else {
        return Ok(hierarchy::default_n_grid());
    };
    if let Some((lo, hi)) = text.split_once(':') {
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|e| CliError::Input(format!("flag `ngrid`: {e}")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|e| CliError::Input(format!("flag `ngrid`: {e}")))?;
        if !(lo > 0.0 && hi > lo) {
            return Err(CliError::Input("flag `ngrid`: need 0 < lo < hi".into()));
        }
        let decades = (hi / lo).log10().round() as usize;
        let mut grid = Vec::with_capacity(decades + 1);
        for k in 0..=decades {
            grid.push(lo * 10f64.powi(k as i32));
        }
        Ok(grid)
    } else {
        parse_value_list(text, "ngrid")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let bytes = schema::to_canonical_json(value)?;
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn out_path(args: &CommonArgs, default_name: &str) -> PathBuf {
    args.out
        .clone()
        .unwrap_or_else(|| PathBuf::from(default_name))
}

fn run(command: &Command, argv: &[String]) -> Result<PathBuf, CliError> {
    let args = command.common();
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    log_debug(&format!("command {} on {}", command.name(), args.input.display()));

    let out = match command {
        Command::Det(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let mut config = BracketConfig {
                seed: args.seed,
                ..BracketConfig::default()
            };
            if let Some(depth) = args.depth {
                config.depth = depth;
            }
            if let Some(grid) = &args.grid {
                config.durations = parse_value_list(grid, "grid")?;
            }
            let bracket = detlyap::lambda_d_bracket(&sys, &config)?;
            log_info(&format!(
                "bracket [{}, {}] (gap {})",
                bracket.lower,
                bracket.upper,
                bracket.gap()
            ));
            let out = out_path(args, "bracket.json");
            write_json(&out, &output::BracketOut::from(&bracket))?;
            out
        }
        Command::Prob(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let params = file.markov_params()?;
            let horizon = args.horizon.unwrap_or(500.0);
            let traj = args.traj.unwrap_or(2000);
            let est = pdmp::lambda_p_estimate(&sys, &params, horizon, traj, args.seed)?;
            log_info(&format!("λ_p ≈ {} ± {}", est.value, est.stderr));
            let out = out_path(args, "estimate.json");
            write_json(&out, &output::EstimateOut::from(&est))?;
            out
        }
        Command::Classes(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let params = file.markov_params()?;
            let horizon = args.horizon.unwrap_or(500.0);
            let traj = args.traj.unwrap_or(1000);
            let structure = ctmc::stationary_structure(&params)?;
            let est = pdmp::lambda_p_by_classes(&sys, &params, horizon, traj, args.seed)?;
            #[derive(Serialize)]
            struct ClassesOut {
                classes: Vec<Vec<usize>>,
                transient: Vec<usize>,
                alphas: Vec<f64>,
                class_invariants: Vec<Vec<f64>>,
                estimate: output::EstimateOut,
            }
            let out_value = ClassesOut {
                classes: structure
                    .classes
                    .iter()
                    .map(|c| c.iter().map(|x| x + 1).collect())
                    .collect(),
                transient: structure.transient.iter().map(|x| x + 1).collect(),
                alphas: structure.alphas.clone(),
                class_invariants: structure
                    .class_invariants
                    .iter()
                    .map(|v| v.iter().copied().collect())
                    .collect(),
                estimate: output::EstimateOut::from(&est),
            };
            let out = out_path(args, "classes.json");
            write_json(&out, &out_value)?;
            out
        }
        Command::Hierarchy(args) => {
            let file = schema::parse_rate_family_file(&args.input)?;
            let family = file.validate()?;
            let grid = parse_ngrid(args.ngrid.as_deref())?;
            let fit_tol = args.tol.unwrap_or(0.05);
            let report = hierarchy::build_hierarchy(&family, &grid, fit_tol)?;
            log_info(&format!(
                "{} levels, terminal {:?}",
                report.num_levels(),
                report.terminal_case()
            ));
            let out = out_path(args, "levels.json");
            write_json(&out, &output::HierarchyOut::from(&report))?;
            out
        }
        Command::Limit(args) => {
            let file = schema::parse_rate_family_file(&args.input)?;
            let family = file.validate()?;
            let system_file = file.system.as_ref().ok_or_else(|| {
                CliError::Input("field `system`: required by the limit command".into())
            })?;
            let sys = system_file.validate()?;
            let assignment = file.assignment_zero_based(sys.num_modes())?;
            let nu = file.initial_law()?;
            let grid = parse_ngrid(args.ngrid.as_deref())?;
            let fit_tol = args.tol.unwrap_or(0.05);
            let report = hierarchy::build_hierarchy(&family, &grid, fit_tol)?;
            let conv = hierarchy::limit_process(&report, &family, &sys, &assignment, &nu, &grid)?;
            let out = out_path(args, "limit.json");
            write_json(&out, &output::ConvexifiedOut::from(&conv))?;
            out
        }
        Command::Converge(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let weights = file.hull_weights_or_uniform()?;
            let chain = ctmc::MarkovParams::new(
                DVector::from_element(1, 1.0),
                1.0,
                switchlyap_core::Mat::identity(1, 1),
            )?;
            let conv = pdmp::ConvexifiedProcess::new(
                &sys,
                vec![(0..sys.num_modes()).collect()],
                vec![weights],
                chain,
            )?;
            let n_list = match &args.grid {
                Some(g) => parse_value_list(g, "grid")?,
                None => vec![10.0, 100.0, 1000.0],
            };
            let horizon = args.horizon.unwrap_or(5.0);
            let traj = args.traj.unwrap_or(500);
            let delta = args.tol.unwrap_or(0.1);
            let d = sys.dim();
            let x0 = DVector::from_element(d, 1.0 / (d as f64).sqrt());
            let rows = pdmp::coupled_convergence_experiment(
                &sys, &conv, &x0, horizon, &n_list, traj, delta, args.seed,
            )?;
            #[derive(Serialize)]
            struct ConvergeOut {
                delta: f64,
                horizon: f64,
                rows: Vec<output::ConvergenceOut>,
            }
            let out = out_path(args, "converge.json");
            write_json(
                &out,
                &ConvergeOut {
                    delta,
                    horizon,
                    rows: rows.iter().map(output::ConvergenceOut::from).collect(),
                },
            )?;
            let csv_rows: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.resample_rate,
                        r.frequency,
                        r.wilson_low,
                        r.wilson_high,
                        r.n_traj as f64,
                    ]
                })
                .collect();
            output::write_csv(
                &out.with_extension("csv"),
                "resample_rate,frequency,wilson_low,wilson_high,n_traj",
                &csv_rows,
            )?;
            out
        }
        Command::MuScan(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let pi = file.hull_weights_or_uniform()?;
            let mu_list = match &args.grid {
                Some(g) => parse_value_list(g, "grid")?,
                None => vec![1.0, 10.0, 100.0, 1e4],
            };
            let horizon = args.horizon.unwrap_or(200.0);
            let traj = args.traj.unwrap_or(400);
            let ests = pdmp::mu_scan(&sys, &pi, &mu_list, horizon, traj, args.seed)?;
            #[derive(Serialize)]
            struct ScanOut {
                pi: Vec<f64>,
                estimates: Vec<output::MuRow>,
            }
            let rows: Vec<output::MuRow> = mu_list
                .iter()
                .zip(&ests)
                .map(|(&mu, e)| output::MuRow {
                    mu,
                    value: e.value,
                    stderr: e.stderr,
                })
                .collect();
            let out = out_path(args, "mu_scan.json");
            write_json(&out, &ScanOut { pi, estimates: rows })?;
            let csv_rows: Vec<Vec<f64>> = mu_list
                .iter()
                .zip(&ests)
                .map(|(&mu, e)| vec![mu, e.value, e.stderr])
                .collect();
            output::write_csv(&out.with_extension("csv"), "mu,value,stderr", &csv_rows)?;
            out
        }
        Command::Sphere(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let pi = file.hull_weights_or_uniform()?;
            let mu = file
                .markov
                .as_ref()
                .and_then(|m| m.mu)
                .ok_or_else(|| CliError::Input("field `markov.mu`: required by sphere".into()))?;
            let horizon = args.horizon.unwrap_or(200.0);
            let eps = args.tol.unwrap_or(0.2);
            let fraction = pdmp::sphere_occupation(&sys, &pi, mu, horizon, eps, args.seed)?;
            #[derive(Serialize)]
            struct SphereOut {
                fraction: f64,
                mu: f64,
                horizon: f64,
                eps_angle: f64,
            }
            let out = out_path(args, "sphere.json");
            write_json(
                &out,
                &SphereOut {
                    fraction,
                    mu,
                    horizon,
                    eps_angle: eps,
                },
            )?;
            out
        }
        Command::Criteria(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let params = file.markov_params()?;
            let mut config = BracketConfig {
                seed: args.seed,
                ..BracketConfig::default()
            };
            if let Some(depth) = args.depth {
                config.depth = depth;
            }
            let bracket = detlyap::lambda_d_bracket(&sys, &config)?;
            let lambda_ref = 0.5 * (bracket.lower + bracket.upper);
            let equality = criteria::check_equality_fixed_chain(
                &sys,
                &params,
                lambda_ref,
                10_000,
                args.seed,
                args.tol.unwrap_or_else(|| criteria::default_spr_tol(lambda_ref)),
            )?;
            let (_, hull_weights) = detlyap::max_abscissa_over_hull(&sys, 16)?;
            let m_star = sys.hull_point(&hull_weights)?;
            let cond_c = criteria::check_condition_c(&sys, &m_star, criteria::default_sv_tol(&sys));
            let certificate = criteria::sampled_lyapunov_certificate(&m_star, 10_000, args.seed);
            #[derive(Serialize)]
            struct CriteriaOut {
                lambda_d_reference: f64,
                equality_verdict: &'static str,
                max_deviation: f64,
                certified_classes: Vec<usize>,
                condition_c_holds: Option<bool>,
                condition_c_witnesses: Vec<Vec<f64>>,
                certificate_sign_violations: Option<usize>,
                certificate_degenerate: Option<bool>,
            }
            let out_value = CriteriaOut {
                lambda_d_reference: lambda_ref,
                equality_verdict: output::verdict_str(equality.verdict),
                max_deviation: equality.max_deviation,
                certified_classes: equality.certified_classes.iter().map(|c| c + 1).collect(),
                condition_c_holds: cond_c.as_ref().ok().map(|w| w.holds),
                condition_c_witnesses: cond_c
                    .as_ref()
                    .ok()
                    .map(|w| w.levels.iter().map(|l| l.per_mode.clone()).collect())
                    .unwrap_or_default(),
                certificate_sign_violations: certificate.as_ref().ok().map(|c| c.sign_violations),
                certificate_degenerate: certificate.as_ref().ok().map(|c| c.degenerate),
            };
            let out = out_path(args, "criteria.json");
            write_json(&out, &out_value)?;
            out
        }
        Command::Gap(args) => {
            let file = schema::parse_system_file(&args.input)?;
            let sys = file.validate()?;
            let mut config = criteria::GapConfig {
                seed: args.seed,
                ..criteria::GapConfig::default()
            };
            if let Some(depth) = args.depth {
                config.bracket.depth = depth;
            }
            if let Some(grid) = &args.grid {
                config.mu_list = parse_value_list(grid, "grid")?;
            }
            if let Some(horizon) = args.horizon {
                config.horizon = horizon;
            }
            if let Some(traj) = args.traj {
                config.n_traj = traj;
            }
            if let Some(tol) = args.tol {
                config.tol = tol;
            }
            let report = criteria::gap_report(&sys, &config)?;
            log_info(&format!(
                "verdicts: conv {:?}, sup {:?}",
                report.verdict_conv, report.verdict_sup
            ));
            let out = out_path(args, "gap.json");
            write_json(&out, &output::GapOut::from(&report, &config.mu_list))?;
            let csv_rows: Vec<Vec<f64>> = config
                .mu_list
                .iter()
                .zip(&report.mu_estimates)
                .map(|(&mu, e)| vec![mu, e.value, e.stderr])
                .collect();
            output::write_csv(&out.with_extension("csv"), "mu,value,stderr", &csv_rows)?;
            out
        }
    };

    output::write_manifest(
        &out,
        command.name(),
        argv,
        &args.input,
        args.seed,
        args.threads,
    )?;
    Ok(out)
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(&cli.command, &argv) {
        Ok(out) => {
            log_info(&format!("wrote {}", out.display()));
        }
        Err(CliError::Input(msg)) => {
            eprintln!("input error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            std::process::exit(3);
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(3);
        }
    }
}
