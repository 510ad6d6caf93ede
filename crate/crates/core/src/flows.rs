//! Switching signals and the fundamental flow `Φ_σ(t)`.
//!
//! A [`Signal`] is a finite piecewise-constant switching law; the flow of
//! `ẋ = A_σ(t) x` over a signal is the ordered product of segment
//! exponentials, rightmost factor first. [`log_flow_norm`] accumulates the
//! product segment by segment with periodic renormalization so that growth
//! exponents up to about `1e4` never overflow.

use crate::error::{Error, Result};
use crate::linalg::{matrix_exponential, operator_norm};
use crate::Mat;

/// The `N`-tuple of modes driving `ẋ = A_σ(t) x`.
#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    modes: Vec<Mat>,
    dim: usize,
    /// `K = max_i ‖A_i‖` in the operator 2-norm.
    k_max: f64,
}

impl SwitchedSystem {
    pub fn new(modes: Vec<Mat>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidInput(
                "a system needs at least one mode".into(),
            ));
        }
        let dim = modes[0].nrows();
        for a in &modes {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::InvalidInput(format!(
                    "all modes must be {dim}x{dim}"
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("mode has non-finite entries".into()));
            }
        }
        let k_max = modes.iter().map(operator_norm).fold(0.0f64, f64::max);
        Ok(SwitchedSystem { modes, dim, k_max })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mat] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> &Mat {
        &self.modes[i]
    }

    /// `K = max_i ‖A_i‖`; the Lipschitz rate of the flow norm.
    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    /// System with every mode shifted by `c·I`.
    pub fn shifted(&self, c: f64) -> SwitchedSystem {
        let id = Mat::identity(self.dim, self.dim);
        let modes = self.modes.iter().map(|a| a + id.scale(c)).collect();
        SwitchedSystem::new(modes).expect("shift preserves validity")
    }

    /// Convex combination `Σ β_i A_i` of the modes.
    pub fn hull_point(&self, beta: &[f64]) -> Result<Mat> {
        if beta.len() != self.modes.len() {
            return Err(Error::InvalidInput("weight length mismatch".into()));
        }
        let mut m = Mat::zeros(self.dim, self.dim);
        for (b, a) in beta.iter().zip(&self.modes) {
            m += a.scale(*b);
        }
        Ok(m)
    }
}

/// Finite piecewise-constant switching law: `(duration, mode)` segments in
/// time order. Modes are 0-based indices into the system's tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    segments: Vec<(f64, usize)>,
}

impl Signal {
    pub fn new(segments: Vec<(f64, usize)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidSignal("signal must be nonempty".into()));
        }
        for &(dt, _) in &segments {
            if !dt.is_finite() || dt < 0.0 {
                return Err(Error::InvalidSignal(format!(
                    "segment duration {dt} must be finite and nonnegative"
                )));
            }
        }
        Ok(Signal { segments })
    }

    pub fn segments(&self) -> &[(f64, usize)] {
        &self.segments
    }

    pub fn total_time(&self) -> f64 {
        self.segments.iter().map(|(dt, _)| dt).sum()
    }

    /// Concatenation `self ++ later`.
    pub fn concat(&self, later: &Signal) -> Signal {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&later.segments);
        Signal { segments }
    }

    /// Prefix of the signal covering `[0, t]`; the final segment is cut.
    pub fn truncated(&self, t: f64) -> Result<Signal> {
        if t < 0.0 || t > self.total_time() * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "time {t} outside signal span {}",
                self.total_time()
            )));
        }
        let mut remaining = t;
        let mut segments = Vec::new();
        for &(dt, mode) in &self.segments {
            if remaining <= 0.0 {
                break;
            }
            let take = dt.min(remaining);
            segments.push((take, mode));
            remaining -= take;
        }
        if segments.is_empty() {
            segments.push((0.0, self.segments[0].1));
        }
        Ok(Signal { segments })
    }

    fn check_modes(&self, sys: &SwitchedSystem) -> Result<()> {
        for &(_, mode) in &self.segments {
            if mode >= sys.num_modes() {
                return Err(Error::InvalidSignal(format!(
                    "mode index {mode} out of range (system has {})",
                    sys.num_modes()
                )));
            }
        }
        Ok(())
    }
}

// Segments whose exponent exceeds this are split before exponentiation.
const MAX_SEGMENT_EXPONENT: f64 = 20.0;

fn apply_segment(sys: &SwitchedSystem, acc: &mut Mat, log_scale: &mut f64, dt: f64, mode: usize) {
    let a = sys.mode(mode);
    let norm_a = operator_norm(a).max(1e-300);
    let chunks = ((norm_a * dt) / MAX_SEGMENT_EXPONENT).ceil().max(1.0) as usize;
    let step = dt / chunks as f64;
    let e = matrix_exponential(a, step).expect("validated mode");
    for _ in 0..chunks {
        *acc = &e * &*acc;
        let n = acc.norm();
        if !(1e-120..=1e120).contains(&n) {
            *log_scale += n.ln();
            *acc /= n;
        }
    }
}

/// Fundamental solution over the signal: `Φ = e^{A_{i_n} t_n} ⋯ e^{A_{i_1} t_1}`.
pub fn flow(sys: &SwitchedSystem, sig: &Signal) -> Result<Mat> {
    sig.check_modes(sys)?;
    let mut acc = Mat::identity(sys.dim(), sys.dim());
    let mut log_scale = 0.0;
    for &(dt, mode) in sig.segments() {
        apply_segment(sys, &mut acc, &mut log_scale, dt, mode);
    }
    Ok(acc * log_scale.exp())
}

/// `log ‖Φ_σ(T)‖` in the operator 2-norm, accumulated segment-incrementally
/// with renormalization; safe for total exponents up to about `1e4`.
pub fn log_flow_norm(sys: &SwitchedSystem, sig: &Signal) -> Result<f64> {
    sig.check_modes(sys)?;
    let mut accum = FlowNormAccumulator::new(sys);
    for &(dt, mode) in sig.segments() {
        accum.push(dt, mode);
    }
    Ok(accum.log_norm())
}

/// Streaming flow-norm accumulator for callers that generate segments on
/// the fly (simulated paths with millions of jumps). Planar systems run on
/// stack-allocated 2x2 matrices with the closed-form exponential.
pub struct FlowNormAccumulator<'a> {
    state: AccumState<'a>,
    log_scale: f64,
    count: usize,
}

enum AccumState<'a> {
    Planar {
        acc: nalgebra::Matrix2<f64>,
        modes: Vec<nalgebra::Matrix2<f64>>,
        norms: Vec<f64>,
    },
    General {
        sys: &'a SwitchedSystem,
        acc: Mat,
    },
}

impl<'a> FlowNormAccumulator<'a> {
    pub fn new(sys: &'a SwitchedSystem) -> Self {
        let state = if sys.dim() == 2 {
            AccumState::Planar {
                acc: nalgebra::Matrix2::identity(),
                modes: sys
                    .modes()
                    .iter()
                    .map(|a| {
                        nalgebra::Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)])
                    })
                    .collect(),
                norms: sys.modes().iter().map(operator_norm).collect(),
            }
        } else {
            AccumState::General {
                sys,
                acc: Mat::identity(sys.dim(), sys.dim()),
            }
        };
        FlowNormAccumulator {
            state,
            log_scale: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, dt: f64, mode: usize) {
        match &mut self.state {
            AccumState::Planar { acc, modes, norms } => {
                let chunks = ((norms[mode] * dt) / MAX_SEGMENT_EXPONENT).ceil().max(1.0) as usize;
                let step = dt / chunks as f64;
                let e = crate::linalg::expm2(&(modes[mode] * step));
                for _ in 0..chunks {
                    *acc = e * *acc;
                    let n = acc.norm();
                    if !(1e-120..=1e120).contains(&n) {
                        self.log_scale += n.ln();
                        *acc /= n;
                    }
                }
            }
            AccumState::General { sys, acc } => {
                apply_segment(sys, acc, &mut self.log_scale, dt, mode);
            }
        }
        self.count += 1;
        if self.count.is_multiple_of(64) {
            match &mut self.state {
                AccumState::Planar { acc, .. } => {
                    let n = acc.norm();
                    self.log_scale += n.ln();
                    *acc /= n;
                }
                AccumState::General { acc, .. } => {
                    let n = acc.norm();
                    self.log_scale += n.ln();
                    *acc /= n;
                }
            }
        }
    }

    pub fn log_norm(&self) -> f64 {
        let op = match &self.state {
            AccumState::Planar { acc, .. } => crate::linalg::operator_norm2(acc),
            AccumState::General { acc, .. } => operator_norm(acc),
        };
        self.log_scale + op.ln()
    }
}

/// Check the growth envelope
/// `e^{-Kt} ‖Φ_σ(s)‖ ≤ ‖Φ_σ(t+s)‖ ≤ e^{Kt} ‖Φ_σ(s)‖`
/// with multiplicative slack `1 + 1e-8`.
pub fn growth_envelope_check(sys: &SwitchedSystem, sig: &Signal, t: f64, s: f64) -> Result<bool> {
    if t < 0.0 || s < 0.0 || s + t > sig.total_time() * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::InvalidInput(
            "need 0 ≤ s, t with s + t within the signal span".into(),
        ));
    }
    let log_s = log_flow_norm(sys, &sig.truncated(s)?)?;
    let log_ts = log_flow_norm(sys, &sig.truncated(s + t)?)?;
    let k = sys.k_max();
    let slack = 1e-8_f64.ln_1p();
    Ok(log_ts >= log_s - k * t - slack && log_ts <= log_s + k * t + slack)
}
