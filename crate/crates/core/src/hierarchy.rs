//! Timescale hierarchy of a monomial rate family.
//!
//! A [`RateFamily`] assigns jump rates `λ_n(i,j) = c_ij · n^{α_ij}` to a
//! fixed strongly connected support. As `n → ∞` the chain exhibits motion at
//! a ladder of separated timescales `θ¹ ≪ θ² ≪ …`: at scale `θ^j` the
//! coarse-grained variable (which recurrence class of the previous limit
//! chain the state sits in) is approximately Markov with limit rates
//! `r^j(x,y) = lim θ^j_n · r^E_n(x,y)`. Monomial rates make every product
//! of rates comparable, so the ladder is well defined.
//!
//! The first scale and its limit chain follow from exponent comparison
//! alone; deeper scales are evaluated numerically on a log-spaced grid via
//! invariant measures and capacities, and the exponents are recovered by
//! log-log least squares with snapping to small rationals.
//!
//! [`limit_process`] extracts the order-one limit: classes of the slowest
//! fast scale become macro-modes with extrapolated local invariant weights,
//! and the order-one transitions (if any) become the macro chain.

use crate::ctmc::{self, MarkovParams, RateMatrix};
use crate::error::{Error, Result};
use crate::flows::SwitchedSystem;
use crate::pdmp::ConvexifiedProcess;
use crate::rng::{self, Stream};
use crate::{Mat, Vec64};

/// One monomial jump rate `λ_n(from, to) = coeff · n^{exponent}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEntry {
    pub from: usize,
    pub to: usize,
    pub coeff: f64,
    pub exponent: f64,
}

/// Family of chains indexed by `n` with monomial rates on a fixed support.
#[derive(Debug, Clone)]
pub struct RateFamily {
    n_states: usize,
    entries: Vec<RateEntry>,
}

impl RateFamily {
    pub fn new(n_states: usize, entries: Vec<RateEntry>) -> Result<Self> {
        if n_states == 0 || entries.is_empty() {
            return Err(Error::InvalidInput(
                "family needs at least one state and one rate".into(),
            ));
        }
        let mut support = vec![false; n_states * n_states];
        for e in &entries {
            if e.from >= n_states || e.to >= n_states || e.from == e.to {
                return Err(Error::InvalidInput(format!(
                    "rate ({}, {}) out of range or diagonal",
                    e.from + 1,
                    e.to + 1
                )));
            }
            if !(e.coeff > 0.0 && e.coeff.is_finite() && e.exponent.is_finite()) {
                return Err(Error::InvalidInput(
                    "rate coefficients must be positive and finite".into(),
                ));
            }
            let k = e.from * n_states + e.to;
            if support[k] {
                return Err(Error::InvalidInput(format!(
                    "duplicate rate ({}, {})",
                    e.from + 1,
                    e.to + 1
                )));
            }
            support[k] = true;
        }
        let sccs = ctmc::strongly_connected_components(n_states, |i, j| {
            i != j && support[i * n_states + j]
        });
        if sccs.len() != 1 {
            return Err(Error::InvalidInput(
                "rate support must be strongly connected".into(),
            ));
        }
        Ok(RateFamily { n_states, entries })
    }

    pub fn num_states(&self) -> usize {
        self.n_states
    }

    pub fn entries(&self) -> &[RateEntry] {
        &self.entries
    }

    /// The chain at parameter `n`.
    pub fn evaluate(&self, n: f64) -> RateMatrix {
        let mut rates = Mat::zeros(self.n_states, self.n_states);
        for e in &self.entries {
            rates[(e.from, e.to)] = e.coeff * n.powf(e.exponent);
        }
        RateMatrix::new(rates).expect("validated entries")
    }
}

/// A fitted power law `value(n) ≈ coeff · n^{exponent}`.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub exponent: f64,
    pub coeff: f64,
    /// Largest per-decade deviation of the fitted points from the power law.
    pub residual: f64,
}

/// One level of the hierarchy: the partition it acts on, its timescale, and
/// the limit chain observed at that timescale.
#[derive(Debug, Clone)]
pub struct Level {
    /// Classes `E_1^j, …` of this level (sorted state sets).
    pub partition: Vec<Vec<usize>>,
    /// Negligible states `Δ^j` accumulated so far.
    pub delta: Vec<usize>,
    /// Timescale `θ^j` as a fitted power law in `n`.
    pub theta: Scale,
    /// Limit-chain rates `r^j(x,y)` on the classes.
    pub rates: Mat,
}

/// Terminal behavior of the family at order-one times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalCase {
    /// All scales are fast: full averaging to a single deterministic mode.
    DeterministicLimit,
    /// The next scale is order one: a nontrivial macro chain survives.
    MarkovLimit,
    /// The next scale diverges: macro classes are frozen at order one.
    Frozen,
    /// The fastest scale is not fast (`e_1 ≥ 0`); no averaging happens.
    NotFast,
}

/// The timescale ladder of a rate family.
#[derive(Debug, Clone)]
pub struct HierarchyReport {
    pub levels: Vec<Level>,
    /// The trivial final partition (a single class) and its Δ.
    pub final_partition: Vec<Vec<usize>>,
    pub final_delta: Vec<usize>,
    /// Exponent tolerance the fits were accepted at.
    pub fit_tol: f64,
}

impl HierarchyReport {
    /// Number of resolved timescales `𝔭`.
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Coarse-grained variable at level `j` (1-based): class index (1-based)
    /// or 0 for states in `Δ^j`.
    pub fn psi(&self, level: usize, state: usize) -> usize {
        let (partition, delta) = self.partition_at(level);
        if delta.contains(&state) {
            return 0;
        }
        partition
            .iter()
            .position(|c| c.contains(&state))
            .map(|x| x + 1)
            .unwrap_or(0)
    }

    /// Partition and Δ at level `j ∈ ⟦1, 𝔭+1⟧`.
    pub fn partition_at(&self, level: usize) -> (&[Vec<usize>], &[usize]) {
        assert!(level >= 1 && level <= self.levels.len() + 1);
        if level <= self.levels.len() {
            (&self.levels[level - 1].partition, &self.levels[level - 1].delta)
        } else {
            (&self.final_partition, &self.final_delta)
        }
    }

    /// Index of the slowest fast scale (`θ^j → 0`), or 0 when even the
    /// first scale is not fast.
    pub fn slowest_fast_scale(&self) -> usize {
        let tol = 0.5 * self.fit_tol;
        self.levels
            .iter()
            .take_while(|l| l.theta.exponent < -tol)
            .count()
    }

    pub fn terminal_case(&self) -> TerminalCase {
        let h = self.slowest_fast_scale();
        if h == 0 {
            return TerminalCase::NotFast;
        }
        if h == self.levels.len() {
            return TerminalCase::DeterministicLimit;
        }
        let next = self.levels[h].theta.exponent;
        if next.abs() <= 0.5 * self.fit_tol {
            TerminalCase::MarkovLimit
        } else {
            TerminalCase::Frozen
        }
    }

    /// `θ^j` evaluated at a concrete `n`.
    pub fn theta_at(&self, level: usize, n: f64) -> f64 {
        let s = &self.levels[level - 1].theta;
        s.coeff * n.powf(s.exponent)
    }
}

/// Recurrence classes (sink components) and transient states of the support
/// digraph of a nonnegative rate matrix.
fn rate_recurrence(rates: &Mat) -> (Vec<Vec<usize>>, Vec<usize>) {
    let n = rates.nrows();
    let sccs =
        ctmc::strongly_connected_components(n, |i, j| i != j && rates[(i, j)] > 0.0);
    let mut classes = Vec::new();
    let mut transient = Vec::new();
    for comp in &sccs {
        let is_sink = comp
            .iter()
            .all(|&i| (0..n).all(|j| rates[(i, j)] == 0.0 || comp.contains(&j)));
        if is_sink {
            classes.push(comp.clone());
        } else {
            transient.extend_from_slice(comp);
        }
    }
    classes.sort_by_key(|c| c[0]);
    transient.sort_unstable();
    (classes, transient)
}

/// Least-squares power-law fit on the top half of the grid, with the
/// exponent snapped to a small rational when that is consistent.
fn fit_power_law(ns: &[f64], values: &[f64], fit_tol: f64) -> Result<Scale> {
    let m = ns.len();
    let lo = m / 2;
    let pts: Vec<(f64, f64)> = (lo..m)
        .filter(|&i| values[i] > 0.0 && values[i].is_finite())
        .map(|i| (ns[i].ln(), values[i].ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::ScaleResolutionFailure(
            "not enough positive points to fit a power law".into(),
        ));
    }
    let k = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = k * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::ScaleResolutionFailure(
            "grid too narrow to resolve an exponent".into(),
        ));
    }
    let slope = (k * sxy - sx * sy) / denom;
    let snapped = snap_to_rational(slope, fit_tol);
    let intercept =
        pts.iter().map(|p| p.1 - snapped * p.0).sum::<f64>() / k;
    let residual = pts
        .iter()
        .map(|p| (p.1 - (intercept + snapped * p.0)).abs() / std::f64::consts::LN_10)
        .fold(0.0f64, f64::max);
    if residual > fit_tol {
        return Err(Error::ScaleResolutionFailure(format!(
            "power-law residual {residual:.3e} exceeds tolerance {fit_tol:.3e}; widen the n grid"
        )));
    }
    Ok(Scale {
        exponent: snapped,
        coeff: intercept.exp(),
        residual,
    })
}

/// Nearest rational `p/q` with `q ≤ 12` within `tol`, else the input.
/// Ties keep the smaller denominator.
fn snap_to_rational(x: f64, tol: f64) -> f64 {
    let mut best: Option<(f64, i64, i64)> = None;
    for q in 1..=12i64 {
        let p = (x * q as f64).round() as i64;
        let cand = p as f64 / q as f64;
        let err = (x - cand).abs();
        if err <= tol && best.map(|(berr, _, _)| err < berr - 1e-15).unwrap_or(true) {
            best = Some((err, p, q));
        }
    }
    best.map(|(_, p, q)| p as f64 / q as f64).unwrap_or(x)
}

const DEFAULT_GRID: [f64; 5] = [1e3, 1e4, 1e5, 1e6, 1e7];

/// Default evaluation grid `{10^3, …, 10^7}`.
pub fn default_n_grid() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}

/// Build the timescale ladder of the family.
///
/// Level 1 is exact by exponent comparison: `1/θ¹_n = Σ λ_n(i,j)` and
/// `r¹(i,j) = lim λ_n(i,j) θ¹_n`. Each deeper level evaluates
/// `θ^j_n = (Σ_x cap(E_x, E_{≠x}) / π_n(E_x))^{-1}` and the mean trace rates
/// on the grid, fits both as power laws, and zeroes rates whose fitted
/// exponent is negative. The recursion ends at the trivial partition.
pub fn build_hierarchy(
    family: &RateFamily,
    n_grid: &[f64],
    fit_tol: f64,
) -> Result<HierarchyReport> {
    if n_grid.len() < 4
        || n_grid.windows(2).any(|w| w[1] <= w[0])
        || n_grid[n_grid.len() - 1] / n_grid[0] < 0.99e4
    {
        return Err(Error::InvalidInput(
            "n grid must be increasing and span at least four decades".into(),
        ));
    }
    if !(fit_tol > 0.0) {
        return Err(Error::InvalidInput("fit_tol must be positive".into()));
    }
    let n_states = family.num_states();

    // level 1: exact exponent comparison
    let alpha_max = family
        .entries()
        .iter()
        .map(|e| e.exponent)
        .fold(f64::NEG_INFINITY, f64::max);
    let coeff_sum: f64 = family
        .entries()
        .iter()
        .filter(|e| e.exponent == alpha_max)
        .map(|e| e.coeff)
        .sum();
    let mut r1 = Mat::zeros(n_states, n_states);
    for e in family.entries() {
        if e.exponent == alpha_max {
            r1[(e.from, e.to)] = e.coeff / coeff_sum;
        }
    }
    let mut levels = vec![Level {
        partition: (0..n_states).map(|i| vec![i]).collect(),
        delta: Vec::new(),
        theta: Scale {
            exponent: -alpha_max,
            coeff: 1.0 / coeff_sum,
            residual: 0.0,
        },
        rates: r1.clone(),
    }];

    let (mut classes, mut delta) = rate_recurrence(&r1);
    for t in &delta {
        debug_assert!(!classes.iter().any(|c| c.contains(t)));
    }

    // deeper levels: numeric evaluation on the grid
    while classes.len() > 1 {
        let j = levels.len() + 1;
        let mut theta_vals = Vec::with_capacity(n_grid.len());
        let mut rate_vals: Vec<Mat> = Vec::with_capacity(n_grid.len());
        for &n in n_grid {
            let rm = family.evaluate(n);
            let pi = ctmc::invariant_measure(&rm)?;
            let mut inv_theta = 0.0;
            for (x, ex) in classes.iter().enumerate() {
                let others: Vec<usize> = classes
                    .iter()
                    .enumerate()
                    .filter(|(y, _)| *y != x)
                    .flat_map(|(_, c)| c.iter().copied())
                    .collect();
                let cap = ctmc::capacity(&rm, &pi, ex, &others)?;
                let mass: f64 = ex.iter().map(|&i| pi[i]).sum();
                if mass <= 0.0 {
                    return Err(Error::ScaleResolutionFailure(format!(
                        "class {} has vanished invariant mass at n = {n}",
                        x + 1
                    )));
                }
                inv_theta += cap / mass;
            }
            if inv_theta <= 0.0 {
                return Err(Error::ScaleResolutionFailure(format!(
                    "no crossings resolved between classes at n = {n}"
                )));
            }
            theta_vals.push(1.0 / inv_theta);
            let tr = ctmc::trace_class_rates(&rm, &pi, &classes, &delta)?;
            rate_vals.push(tr.class_rates);
        }

        let theta = fit_power_law(n_grid, &theta_vals, fit_tol)?;
        if theta.exponent <= levels[j - 2].theta.exponent + 0.5 * fit_tol {
            return Err(Error::ScaleResolutionFailure(format!(
                "scale {j} did not separate from scale {}",
                j - 1
            )));
        }

        // limit rates r^j(x,y) = lim θ^j_n r^E_n(x,y)
        let k = classes.len();
        let mut limit_rates = Mat::zeros(k, k);
        for x in 0..k {
            for y in 0..k {
                if x == y {
                    continue;
                }
                let vals: Vec<f64> = (0..n_grid.len())
                    .map(|g| theta_vals[g] * rate_vals[g][(x, y)])
                    .collect();
                if vals.iter().all(|&v| v < 1e-300) {
                    continue;
                }
                let fit = fit_power_law(n_grid, &vals, fit_tol)?;
                if fit.exponent < -fit_tol {
                    continue; // vanishes at this scale
                }
                if fit.exponent > 3.0 * fit_tol {
                    return Err(Error::ScaleResolutionFailure(format!(
                        "trace rate ({},{}) grows at its own timescale",
                        x + 1,
                        y + 1
                    )));
                }
                limit_rates[(x, y)] = fit.coeff;
            }
        }
        if limit_rates.iter().all(|&v| v == 0.0) {
            return Err(Error::ScaleResolutionFailure(
                "limit chain has no nonzero jump rate".into(),
            ));
        }

        levels.push(Level {
            partition: classes.clone(),
            delta: delta.clone(),
            theta,
            rates: limit_rates.clone(),
        });

        // recurrence classes of X^j define the next, coarser partition
        let (class_groups, class_transients) = rate_recurrence(&limit_rates);
        let mut next_classes: Vec<Vec<usize>> = class_groups
            .iter()
            .map(|group| {
                let mut states: Vec<usize> =
                    group.iter().flat_map(|&y| classes[y].iter().copied()).collect();
                states.sort_unstable();
                states
            })
            .collect();
        next_classes.sort_by_key(|c| c[0]);
        for &y in &class_transients {
            delta.extend(classes[y].iter().copied());
        }
        delta.sort_unstable();
        if next_classes.len() >= classes.len() {
            return Err(Error::Internal(
                "partition failed to coarsen".into(),
            ));
        }
        classes = next_classes;
    }

    Ok(HierarchyReport {
        levels,
        final_partition: classes,
        final_delta: delta,
        fit_tol,
    })
}

/// Aitken extrapolation of the last three values, guarded against a flat or
/// erratic tail.
fn extrapolate(seq: &[f64]) -> f64 {
    let m = seq.len();
    if m >= 3 {
        let (p0, p1, p2) = (seq[m - 3], seq[m - 2], seq[m - 1]);
        let d1 = p1 - p0;
        let d2 = p2 - p1;
        let denom = d2 - d1;
        if denom.abs() > 1e-14 {
            let acc = p2 - d2 * d2 / denom;
            // accept only a modest correction; diverging steps mean the
            // sequence already converged to roundoff
            if (acc - p2).abs() <= 2.0 * d2.abs() {
                return acc;
            }
        }
    }
    seq[m - 1]
}

/// Invariant weights of the localized chain of class `z`: transitions that
/// would leave `E_z ∪ Δ` are redirected to the pinned state `i_z = min E_z`,
/// and the invariant law is restricted to `E_z` and renormalized.
fn localized_weights(
    family: &RateFamily,
    class: &[usize],
    delta: &[usize],
    n_grid: &[f64],
) -> Result<Vec<f64>> {
    let pinned = *class.iter().min().unwrap();
    let mut bar: Vec<usize> = class.to_vec();
    bar.extend_from_slice(delta);
    bar.sort_unstable();
    let index_of = |s: usize| bar.iter().position(|&x| x == s);

    let top = &n_grid[n_grid.len().saturating_sub(3)..];
    let mut per_n: Vec<Vec<f64>> = Vec::new();
    for &n in top {
        let rm = family.evaluate(n);
        let m = bar.len();
        let mut rates = Mat::zeros(m, m);
        for (a, &i) in bar.iter().enumerate() {
            for j in 0..family.num_states() {
                let rate = rm.rate(i, j);
                if rate <= 0.0 {
                    continue;
                }
                match index_of(j) {
                    Some(b) => rates[(a, b)] += rate,
                    None => {
                        let b = index_of(pinned).unwrap();
                        rates[(a, b)] += rate;
                    }
                }
            }
        }
        let rm_local = RateMatrix::new(rates)?;
        let pi = ctmc::invariant_measure(&rm_local)?;
        let weights: Vec<f64> = class
            .iter()
            .map(|&i| pi[index_of(i).unwrap()])
            .collect();
        let mass: f64 = weights.iter().sum();
        per_n.push(weights.into_iter().map(|w| w / mass).collect());
    }

    let k = class.len();
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let seq: Vec<f64> = per_n.iter().map(|w| w[c]).collect();
        out.push(extrapolate(&seq).max(0.0));
    }
    let mass: f64 = out.iter().sum();
    Ok(out.into_iter().map(|w| w / mass).collect())
}

/// Extract the limit convexified process at order-one times.
///
/// `assignment[i]` is the mode index driven by chain state `i`; `nu` is the
/// initial law of the chain (its support must avoid the negligible states).
pub fn limit_process(
    report: &HierarchyReport,
    family: &RateFamily,
    sys: &SwitchedSystem,
    assignment: &[usize],
    nu: &Vec64,
    n_grid: &[f64],
) -> Result<ConvexifiedProcess> {
    let n_states = family.num_states();
    if assignment.len() != n_states || nu.len() != n_states {
        return Err(Error::InvalidInput(
            "assignment and ν must cover every chain state".into(),
        ));
    }
    if assignment.iter().any(|&m| m >= sys.num_modes()) {
        return Err(Error::InvalidInput("assignment points past the modes".into()));
    }
    let h = report.slowest_fast_scale();
    if h == 0 {
        return Err(Error::NotAFastFamily(
            "the fastest scale is not fast; analyze the chain directly".into(),
        ));
    }
    let (classes, delta) = report.partition_at(h + 1);
    let delta_mass: f64 = delta.iter().map(|&i| nu[i]).sum();
    if delta_mass > 1e-9 {
        return Err(Error::InvalidInput(
            "initial law puts mass on negligible states".into(),
        ));
    }

    let k = classes.len();
    let mut index_sets = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for class in classes {
        let w = localized_weights(family, class, delta, n_grid)?;
        // fold chain states onto their assigned modes
        let mut modes: Vec<usize> = Vec::new();
        let mut mode_w: Vec<f64> = Vec::new();
        for (&state, &wi) in class.iter().zip(&w) {
            let m = assignment[state];
            match modes.iter().position(|&x| x == m) {
                Some(p) => mode_w[p] += wi,
                None => {
                    modes.push(m);
                    mode_w.push(wi);
                }
            }
        }
        index_sets.push(modes);
        weights.push(mode_w);
    }

    let mut nu_macro = Vec64::zeros(k);
    for (z, class) in classes.iter().enumerate() {
        nu_macro[z] = class.iter().map(|&i| nu[i]).sum();
    }
    let mass = nu_macro.sum();
    nu_macro /= mass;

    let chain = match report.terminal_case() {
        TerminalCase::MarkovLimit => {
            let theta_star = report.levels[h].theta.coeff;
            let rates = report.levels[h].rates.scale(1.0 / theta_star);
            let total = Vec64::from_fn(k, |x, _| rates.row(x).sum());
            let mu = total.iter().fold(0.0f64, |m, &v| m.max(v)).max(1e-9);
            let p = Mat::from_fn(k, k, |x, y| {
                if x == y {
                    1.0 - total[x] / mu
                } else {
                    rates[(x, y)] / mu
                }
            });
            MarkovParams::new(nu_macro, mu, p)?
        }
        // deterministic limit (single class) or frozen classes: the macro
        // label never moves at order one
        _ => MarkovParams::new(nu_macro, 1.0, Mat::identity(k, k))?,
    };

    ConvexifiedProcess::new(sys, index_sets, weights, chain)
}

/// Marginal-law diagnostic for level `j`: empirical law of
/// `Ψ^j(σ_n(t·θ^j_n))` from `n_traj` simulations started at `start`,
/// against the limit-chain marginal, as a total-variation distance with a
/// 3σ multinomial band.
#[derive(Debug, Clone)]
pub struct LevelDiagnostic {
    /// Empirical probabilities indexed by Ψ value (0 = Δ, then classes).
    pub empirical: Vec<f64>,
    /// Limit marginal (0 mass on Δ).
    pub limit: Vec<f64>,
    pub tv_distance: f64,
    pub band: f64,
}

impl LevelDiagnostic {
    pub fn within_band(&self) -> bool {
        self.tv_distance <= self.band
    }
}

fn simulate_rate_chain_endpoint(
    rm: &RateMatrix,
    start: usize,
    horizon: f64,
    rng: &mut Stream,
) -> usize {
    let mut state = start;
    let mut t = 0.0;
    loop {
        let rate = rm.holding_rate(state);
        if rate <= 0.0 {
            return state;
        }
        t += rng::exponential(rng, rate);
        if t >= horizon {
            return state;
        }
        let row: Vec<f64> = (0..rm.num_states()).map(|j| rm.rate(state, j)).collect();
        state = ctmc::sample_categorical(&row, rng);
    }
}

/// Compare the finite-`n` marginal at level `j` with the limit chain.
#[allow(clippy::too_many_arguments)]
pub fn verify_level(
    family: &RateFamily,
    report: &HierarchyReport,
    level: usize,
    n: f64,
    t: f64,
    start: usize,
    n_traj: usize,
    seed: u64,
) -> Result<LevelDiagnostic> {
    if level == 0 || level > report.num_levels() {
        return Err(Error::InvalidInput("level out of range".into()));
    }
    if start >= family.num_states() || n_traj == 0 || !(t > 0.0) {
        return Err(Error::InvalidInput("bad diagnostic parameters".into()));
    }
    let x = report.psi(level, start);
    if x == 0 {
        return Err(Error::InvalidInput(
            "diagnostic start must lie outside Δ".into(),
        ));
    }
    let horizon = t * report.theta_at(level, n);
    let rm = family.evaluate(n);
    let k = report.levels[level - 1].partition.len();

    use rayon::prelude::*;
    let endpoints: Vec<usize> = (0..n_traj)
        .into_par_iter()
        .map(|traj| {
            let mut r = rng::stream(seed, traj as u64);
            let s = simulate_rate_chain_endpoint(&rm, start, horizon, &mut r);
            report.psi(level, s)
        })
        .collect();
    let mut counts = vec![0usize; k + 1];
    for e in endpoints {
        counts[e] += 1;
    }
    let empirical: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / n_traj as f64)
        .collect();

    // limit marginal: matrix exponential of the limit generator
    let rates = &report.levels[level - 1].rates;
    let mut gen = rates.clone();
    for i in 0..k {
        gen[(i, i)] = -rates.row(i).sum();
    }
    let e = crate::linalg::matrix_exponential(&gen.transpose(), t)?;
    let mut limit = vec![0.0; k + 1];
    for y in 0..k {
        limit[y + 1] = e[(y, x - 1)];
    }

    let tv_distance = 0.5
        * empirical
            .iter()
            .zip(&limit)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    let band = 1.5
        * limit
            .iter()
            .map(|&p| {
                let p = p.clamp(3.0 / n_traj as f64, 1.0 - 3.0 / n_traj as f64);
                (p * (1.0 - p) / n_traj as f64).sqrt()
            })
            .sum::<f64>();
    Ok(LevelDiagnostic {
        empirical,
        limit,
        tv_distance,
        band,
    })
}

/// Worst (over starting states) mean fraction of `[0, t]` spent in `Δ^j`
/// at order-one times.
pub fn delta_occupation(
    family: &RateFamily,
    report: &HierarchyReport,
    level: usize,
    n: f64,
    t: f64,
    n_traj: usize,
    seed: u64,
) -> Result<f64> {
    if level == 0 || level > report.num_levels() + 1 {
        return Err(Error::InvalidInput("level out of range".into()));
    }
    let (_, delta) = report.partition_at(level);
    if delta.is_empty() {
        return Ok(0.0);
    }
    let rm = family.evaluate(n);
    let in_delta = |s: usize| delta.contains(&s);

    use rayon::prelude::*;
    let mut worst = 0.0f64;
    for start in 0..family.num_states() {
        let occ: Vec<f64> = (0..n_traj)
            .into_par_iter()
            .map(|traj| {
                let mut r = rng::stream(seed.wrapping_add(start as u64), traj as u64);
                let mut state = start;
                let mut time = 0.0;
                let mut inside = 0.0;
                loop {
                    let rate = rm.holding_rate(state);
                    let wait = if rate <= 0.0 {
                        t - time
                    } else {
                        rng::exponential(&mut r, rate)
                    };
                    let dt = wait.min(t - time);
                    if in_delta(state) {
                        inside += dt;
                    }
                    time += dt;
                    if time >= t {
                        return inside / t;
                    }
                    let row: Vec<f64> =
                        (0..rm.num_states()).map(|j| rm.rate(state, j)).collect();
                    state = ctmc::sample_categorical(&row, &mut r);
                }
            })
            .collect();
        worst = worst.max(rng::pairwise_sum(&occ) / n_traj as f64);
    }
    Ok(worst)
}
