//! Serializable output mirrors of the core result types (1-based indices)
//! and the run manifest.

use serde::Serialize;
use sha2::{Digest, Sha256};
use switchlyap_core::ctmc::MarkovParams;
use switchlyap_core::detlyap::LyapunovBracket;
use switchlyap_core::flows::Signal;
use switchlyap_core::hierarchy::{HierarchyReport, TerminalCase};
use switchlyap_core::pdmp::{ConvergenceRow, ConvexifiedProcess, LyapunovEstimate};
use switchlyap_core::{criteria, Mat};

use crate::CliError;

pub fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|x| x + 1).collect()
}

#[derive(Serialize)]
pub struct SignalOut {
    pub segments: Vec<SegmentOut>,
    pub total_time: f64,
}

#[derive(Serialize)]
pub struct SegmentOut {
    pub duration: f64,
    pub mode: usize,
}

impl SignalOut {
    pub fn from(sig: &Signal) -> Self {
        SignalOut {
            segments: sig
                .segments()
                .iter()
                .map(|&(duration, mode)| SegmentOut {
                    duration,
                    mode: mode + 1,
                })
                .collect(),
            total_time: sig.total_time(),
        }
    }
}

#[derive(Serialize)]
pub struct BracketOut {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub lower_witness: SignalOut,
    pub upper_norm: Vec<Vec<f64>>,
}

impl BracketOut {
    pub fn from(b: &LyapunovBracket) -> Self {
        BracketOut {
            lower: b.lower,
            upper: b.upper,
            gap: b.gap(),
            lower_witness: SignalOut::from(&b.lower_witness),
            upper_norm: mat_rows(&b.upper_norm),
        }
    }
}

#[derive(Serialize)]
pub struct EstimateOut {
    pub value: f64,
    pub stderr: f64,
    pub horizon: f64,
    pub n_traj: usize,
    pub seed: u64,
    /// For an invariant start the estimate is biased high by O(1/horizon).
    pub bias: &'static str,
}

impl EstimateOut {
    pub fn from(e: &LyapunovEstimate) -> Self {
        EstimateOut {
            value: e.value,
            stderr: e.stderr,
            horizon: e.horizon,
            n_traj: e.n_traj,
            seed: e.seed,
            bias: "upper (O(1/horizon) for invariant initial law)",
        }
    }
}

#[derive(Serialize)]
pub struct ChainOut {
    pub nu: Vec<f64>,
    pub mu: f64,
    pub p: Vec<Vec<f64>>,
}

impl ChainOut {
    pub fn from(params: &MarkovParams) -> Self {
        ChainOut {
            nu: params.nu.iter().copied().collect(),
            mu: params.mu,
            p: mat_rows(&params.p),
        }
    }
}

#[derive(Serialize)]
pub struct ConvexifiedOut {
    pub index_sets: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
    pub modes: Vec<Vec<Vec<f64>>>,
    pub chain: ChainOut,
}

impl ConvexifiedOut {
    pub fn from(c: &ConvexifiedProcess) -> Self {
        ConvexifiedOut {
            index_sets: c.index_sets.iter().map(|s| one_based(s)).collect(),
            weights: c.weights.clone(),
            modes: c.modes.iter().map(mat_rows).collect(),
            chain: ChainOut::from(&c.chain),
        }
    }
}

#[derive(Serialize)]
pub struct LevelOut {
    pub partition: Vec<Vec<usize>>,
    pub delta: Vec<usize>,
    pub theta_exponent: f64,
    pub theta_coeff: f64,
    pub fit_residual: f64,
    pub limit_rates: Vec<Vec<f64>>,
}

#[derive(Serialize)]
pub struct HierarchyOut {
    pub levels: Vec<LevelOut>,
    pub final_partition: Vec<Vec<usize>>,
    pub final_delta: Vec<usize>,
    pub slowest_fast_scale: usize,
    pub terminal: &'static str,
}

impl HierarchyOut {
    pub fn from(rep: &HierarchyReport) -> Self {
        HierarchyOut {
            levels: rep
                .levels
                .iter()
                .map(|l| LevelOut {
                    partition: l.partition.iter().map(|c| one_based(c)).collect(),
                    delta: one_based(&l.delta),
                    theta_exponent: l.theta.exponent,
                    theta_coeff: l.theta.coeff,
                    fit_residual: l.theta.residual,
                    limit_rates: mat_rows(&l.rates),
                })
                .collect(),
            final_partition: rep
                .final_partition
                .iter()
                .map(|c| one_based(c))
                .collect(),
            final_delta: one_based(&rep.final_delta),
            slowest_fast_scale: rep.slowest_fast_scale(),
            terminal: match rep.terminal_case() {
                TerminalCase::DeterministicLimit => "deterministic-limit",
                TerminalCase::MarkovLimit => "markov-limit",
                TerminalCase::Frozen => "frozen",
                TerminalCase::NotFast => "not-fast",
            },
        }
    }
}

#[derive(Serialize)]
pub struct ConvergenceOut {
    pub resample_rate: f64,
    pub exceedances: usize,
    pub n_traj: usize,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl ConvergenceOut {
    pub fn from(r: &ConvergenceRow) -> Self {
        ConvergenceOut {
            resample_rate: r.resample_rate,
            exceedances: r.exceedances,
            n_traj: r.n_traj,
            frequency: r.frequency,
            wilson_low: r.wilson_low,
            wilson_high: r.wilson_high,
        }
    }
}

pub fn verdict_str(v: criteria::Verdict) -> &'static str {
    match v {
        criteria::Verdict::Equality => "equality",
        criteria::Verdict::StrictGap => "strict-gap",
        criteria::Verdict::Inconclusive => "inconclusive",
    }
}

#[derive(Serialize)]
pub struct GapOut {
    pub bracket: BracketOut,
    pub hull_value: f64,
    pub hull_weights: Vec<f64>,
    pub conv_lower_bound: f64,
    pub conv_witness: ConvexifiedOut,
    pub mu_estimates: Vec<MuRow>,
    pub verdict_lambda_d_eq_lambda_p_conv: &'static str,
    pub verdict_lambda_d_eq_lambda_p_sup: &'static str,
    pub sup_attainment: &'static str,
    pub condition_c_near_argmax: bool,
    pub notes: Vec<String>,
}

#[derive(Serialize)]
pub struct MuRow {
    pub mu: f64,
    pub value: f64,
    pub stderr: f64,
}

impl GapOut {
    pub fn from(rep: &criteria::GapReport, mu_list: &[f64]) -> Self {
        GapOut {
            bracket: BracketOut::from(&rep.bracket),
            hull_value: rep.hull_value,
            hull_weights: rep.hull_weights.clone(),
            conv_lower_bound: rep.conv_lower,
            conv_witness: ConvexifiedOut::from(&rep.conv_witness),
            mu_estimates: mu_list
                .iter()
                .zip(&rep.mu_estimates)
                .map(|(&mu, e)| MuRow {
                    mu,
                    value: e.value,
                    stderr: e.stderr,
                })
                .collect(),
            verdict_lambda_d_eq_lambda_p_conv: verdict_str(rep.verdict_conv),
            verdict_lambda_d_eq_lambda_p_sup: verdict_str(rep.verdict_sup),
            sup_attainment: match rep.sup_attainment {
                criteria::SupAttainment::AttainedEvidence => "attained-evidence",
                criteria::SupAttainment::NotAttainedEvidence => "not-attained-evidence",
                criteria::SupAttainment::Unknown => "unknown",
            },
            condition_c_near_argmax: rep.condition_c_near_argmax,
            notes: rep.notes.clone(),
        }
    }
}

/// Run manifest written next to every output artifact.
#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub input_path: String,
    pub input_sha256: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub version: &'static str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(
    out_path: &std::path::Path,
    command: &str,
    argv: &[String],
    input_path: &std::path::Path,
    seed: u64,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let input_bytes = std::fs::read(input_path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", input_path.display())))?;
    let manifest = Manifest {
        command: command.to_string(),
        argv: argv.to_vec(),
        input_path: input_path.display().to_string(),
        input_sha256: sha256_hex(&input_bytes),
        seed,
        threads,
        version: env!("CARGO_PKG_VERSION"),
    };
    let bytes = crate::schema::to_canonical_json(&manifest)?;
    let manifest_path = out_path.with_extension("manifest.json");
    std::fs::write(&manifest_path, bytes)
        .map_err(|e| CliError::Internal(format!("cannot write manifest: {e}")))?;
    Ok(())
}

/// CSV rows with a fixed header; numbers use the same 17-digit format as
/// the JSON artifacts.
pub fn write_csv(
    path: &std::path::Path,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("cannot write CSV: {e}")))
}
