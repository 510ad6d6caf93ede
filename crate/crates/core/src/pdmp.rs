//! Probabilistic Lyapunov exponents and convexified Markov processes.
//!
//! [`lambda_p_estimate`] approximates the limsup growth rate
//! `(1/t) E[log ‖Φ_σ(t)‖]` by Monte Carlo at a single large horizon. When
//! the initial law is invariant the finite-`T` estimate is biased high by
//! at most `O(1/T)` (the time average is decreasing in `T`), so the horizon
//! is reported alongside the value for extrapolation.
//!
//! The module also hosts the convexified machinery: the two-timescale chain
//! whose fast within-class resampling converges to a given convexified
//! process, the coupled convergence experiment that measures the
//! approximation error at finite resampling rates, the fast-jump-rate scan,
//! and the sphere-occupation experiment for the angular process.

use rayon::prelude::*;

use crate::ctmc::{self, ChainWalker, MarkovParams};
use crate::detlyap;
use crate::error::{Error, Result};
use crate::flows::{FlowNormAccumulator, SwitchedSystem};
use crate::linalg::{self, matrix_exponential};
use crate::rng::{self, Stream};
use crate::{Mat, Vec64};

/// Markov switching among modes drawn from convex hulls of disjoint groups
/// of the original modes: macro-mode `r` is
/// `B_r = Σ_{j ∈ I_r} π_r(j) A_j`, and `chain` drives the macro index.
#[derive(Debug, Clone)]
pub struct ConvexifiedProcess {
    /// Disjoint nonempty groups of original mode indices (0-based).
    pub index_sets: Vec<Vec<usize>>,
    /// Weight vector over each group (same lengths as `index_sets`).
    pub weights: Vec<Vec<f64>>,
    /// Macro modes `B_r`.
    pub modes: Vec<Mat>,
    /// Chain on the macro indices.
    pub chain: MarkovParams,
}

impl ConvexifiedProcess {
    pub fn new(
        sys: &SwitchedSystem,
        index_sets: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        chain: MarkovParams,
    ) -> Result<Self> {
        if index_sets.is_empty()
            || index_sets.len() != weights.len()
            || chain.num_states() != index_sets.len()
        {
            return Err(Error::InvalidInput(
                "need one weight vector and one chain state per index set".into(),
            ));
        }
        let mut seen = vec![false; sys.num_modes()];
        for (set, w) in index_sets.iter().zip(&weights) {
            if set.is_empty() || set.len() != w.len() {
                return Err(Error::InvalidInput(
                    "index sets must be nonempty and match their weights".into(),
                ));
            }
            let mass: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0) || (mass - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(
                    "weights must be probability vectors".into(),
                ));
            }
            for &j in set {
                if j >= sys.num_modes() || seen[j] {
                    return Err(Error::InvalidInput(
                        "index sets must be disjoint subsets of the modes".into(),
                    ));
                }
                seen[j] = true;
            }
        }
        let modes = index_sets
            .iter()
            .zip(&weights)
            .map(|(set, w)| {
                let mut b = Mat::zeros(sys.dim(), sys.dim());
                for (&j, &wj) in set.iter().zip(w) {
                    b += sys.mode(j).scale(wj);
                }
                b
            })
            .collect();
        Ok(ConvexifiedProcess {
            index_sets,
            weights,
            modes,
            chain,
        })
    }

    pub fn num_macro_modes(&self) -> usize {
        self.index_sets.len()
    }

    /// The macro modes as a switched system.
    pub fn macro_system(&self) -> SwitchedSystem {
        SwitchedSystem::new(self.modes.clone()).expect("validated modes")
    }
}

/// Monte Carlo estimate of a Lyapunov exponent.
#[derive(Debug, Clone)]
pub struct LyapunovEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Horizon used; for an invariant initial law the estimate is biased
    /// high by at most `O(1/horizon)`.
    pub horizon: f64,
    pub n_traj: usize,
    pub seed: u64,
}

fn per_trajectory_log_norms(
    sys: &SwitchedSystem,
    params: &MarkovParams,
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Vec<f64> {
    (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            let mut walker = ChainWalker::start(params, &mut r);
            let mut accum = FlowNormAccumulator::new(sys);
            while let Some((dt, mode)) = walker.next_segment(horizon, &mut r) {
                accum.push(dt, mode);
            }
            accum.log_norm() / horizon
        })
        .collect()
}

/// Estimate `λ_p(ν, μ, P, A)` by averaging `(1/T) log ‖Φ_σ(T)‖` over
/// simulated trajectories. Deterministic given the seed, independent of
/// worker count.
pub fn lambda_p_estimate(
    sys: &SwitchedSystem,
    params: &MarkovParams,
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    if n_traj < 2 {
        return Err(Error::InvalidInput("need at least 2 trajectories".into()));
    }
    if params.num_states() != sys.num_modes() {
        return Err(Error::InvalidInput(
            "chain states must match the number of modes".into(),
        ));
    }
    let values = per_trajectory_log_norms(sys, params, horizon, n_traj, seed);
    let (value, stderr) = rng::mean_stderr(&values);
    Ok(LyapunovEstimate {
        value,
        stderr,
        horizon,
        n_traj,
        seed,
    })
}

/// Estimate `λ_p` through the recurrence-class decomposition
/// `λ_p(ν) = Σ_i α_i λ_p(ν^{[i]})` with `α_i` the absorption probabilities;
/// each accessible class is estimated from its invariant start.
pub fn lambda_p_by_classes(
    sys: &SwitchedSystem,
    params: &MarkovParams,
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    let structure = ctmc::stationary_structure(params)?;
    let mut value = 0.0;
    let mut var = 0.0;
    for ci in 0..structure.classes.len() {
        let alpha = structure.alphas[ci];
        if alpha <= 1e-12 {
            continue;
        }
        let class_params = MarkovParams::new(
            structure.class_invariants[ci].clone(),
            params.mu,
            params.p.clone(),
        )?;
        let est = lambda_p_estimate(sys, &class_params, horizon, n_traj, seed + 1 + ci as u64)?;
        value += alpha * est.value;
        var += (alpha * est.stderr).powi(2);
    }
    Ok(LyapunovEstimate {
        value,
        stderr: var.sqrt(),
        horizon,
        n_traj,
        seed,
    })
}

/// The finite-`n` Markov chain on the original mode set whose law converges
/// to the given convexified process: within class `I_r` every state
/// resamples from `π_r` at rate `n`; from `I_r` to `I_s` the rate is
/// `μ π_s(j) P(r,s)`; states outside `∪ I_r` are isolated. The initial law
/// is `ν_n(i) = ν(r) π_r(i)`.
pub fn two_timescale_chain(
    sys: &SwitchedSystem,
    conv: &ConvexifiedProcess,
    resample_rate: f64,
) -> Result<MarkovParams> {
    if !(resample_rate > 0.0) {
        return Err(Error::InvalidInput("resample rate must be positive".into()));
    }
    let n_states = sys.num_modes();
    let k = conv.num_macro_modes();
    let mu = conv.chain.mu;
    let p_macro = &conv.chain.p;

    let mut rates = Mat::zeros(n_states, n_states);
    for r in 0..k {
        for &i in &conv.index_sets[r] {
            // fast within-class resampling (the diagonal entry is a trivial
            // jump; it does not change the law and is dropped here)
            for (jj, &j) in conv.index_sets[r].iter().enumerate() {
                if i != j {
                    rates[(i, j)] += resample_rate * conv.weights[r][jj];
                }
            }
            // slow cross-class jumps
            for s in 0..k {
                if s == r {
                    continue;
                }
                for (jj, &j) in conv.index_sets[s].iter().enumerate() {
                    rates[(i, j)] += mu * conv.weights[s][jj] * p_macro[(r, s)];
                }
            }
        }
    }

    // uniformized (ν, μ, P) representation
    let total = Vec64::from_fn(n_states, |i, _| rates.row(i).sum());
    let mu_uniform = total.iter().fold(0.0f64, |m, &x| m.max(x)).max(1e-9);
    let p = Mat::from_fn(n_states, n_states, |i, j| {
        if i == j {
            1.0 - total[i] / mu_uniform
        } else {
            rates[(i, j)] / mu_uniform
        }
    });
    let mut nu = Vec64::zeros(n_states);
    for r in 0..k {
        for (jj, &j) in conv.index_sets[r].iter().enumerate() {
            nu[j] = conv.chain.nu[r] * conv.weights[r][jj];
        }
    }
    MarkovParams::new(nu, mu_uniform, p)
}

/// One row of the coupled convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub resample_rate: f64,
    pub exceedances: usize,
    pub n_traj: usize,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054_f64; // 95%
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

// Stream slots per trajectory in the coupled experiment: macro chain,
// Poisson clock, then one resampling stream per macro mode.
const COUPLED_SLOTS: u64 = 64;

/// Empirical check of the coupling between a convexified process `x` and
/// its finite-`n` approximations `x_n`: a shared slow chain, a shared
/// Poisson resampling clock (thinned by `1/n`), and shared resampling draws
/// put all rates on one probability space. Returns, per `n`, the frequency
/// of `sup_{t ≤ T} |x(t) − x_n(t)| > δ` with a Wilson 95% band.
#[allow(clippy::too_many_arguments)]
pub fn coupled_convergence_experiment(
    sys: &SwitchedSystem,
    conv: &ConvexifiedProcess,
    x0: &Vec64,
    horizon: f64,
    n_list: &[f64],
    n_traj: usize,
    delta: f64,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput("δ must be positive".into()));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list.is_empty() {
        return Err(Error::InvalidInput(
            "resample rates must be increasing and nonempty".into(),
        ));
    }
    if x0.len() != sys.dim() {
        return Err(Error::InvalidInput("x0 dimension mismatch".into()));
    }
    let k = conv.num_macro_modes();
    if k as u64 + 2 > COUPLED_SLOTS {
        return Err(Error::InvalidInput("too many macro modes".into()));
    }

    let n_max = *n_list.last().unwrap();
    // grid refinement keeps the sup honest between events
    let h_max = 0.02 / sys.k_max().max(1.0);

    let exceed_flags: Vec<Vec<bool>> = (0..n_traj)
        .into_par_iter()
        .map(|traj| {
            let base = traj as u64 * COUPLED_SLOTS;
            // slow macro chain, shared across all n
            let mut macro_rng = rng::stream(seed, base);
            let mut walker = ChainWalker::start(&conv.chain, &mut macro_rng);
            let mut slow_times = vec![0.0_f64];
            let mut slow_states = vec![walker.state];
            while let Some((_dt, _)) = walker.next_segment(horizon, &mut macro_rng) {
                if walker.time < horizon {
                    slow_times.push(walker.time);
                    slow_states.push(walker.state);
                }
            }
            // standard Poisson clock, shared: jump q of the rate-n thinning
            // happens at time s_q / n
            let mut clock_rng = rng::stream(seed, base + 1);
            let mut poisson_times = Vec::new();
            let mut s = 0.0;
            while s < n_max * horizon {
                s += rng::exponential(&mut clock_rng, 1.0);
                poisson_times.push(s);
            }
            // shared resampling draws U_{p,r}
            let draws: Vec<Vec<usize>> = (0..k)
                .map(|r| {
                    let mut u_rng = rng::stream(seed, base + 2 + r as u64);
                    let weights = &conv.weights[r];
                    let total_events = poisson_times.len() + slow_times.len() + 2;
                    (0..total_events)
                        .map(|_| conv.index_sets[r][ctmc::sample_categorical(weights, &mut u_rng)])
                        .collect()
                })
                .collect();

            n_list
                .iter()
                .map(|&n| {
                    simulate_coupled_pair(
                        sys,
                        conv,
                        x0,
                        horizon,
                        n,
                        h_max,
                        &slow_times,
                        &slow_states,
                        &poisson_times,
                        &draws,
                    ) > delta
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let exceedances = exceed_flags.iter().filter(|flags| flags[idx]).count();
        let frequency = exceedances as f64 / n_traj as f64;
        let (wilson_low, wilson_high) = wilson_interval(exceedances, n_traj);
        rows.push(ConvergenceRow {
            resample_rate: n,
            exceedances,
            n_traj,
            frequency,
            wilson_low,
            wilson_high,
        });
    }
    Ok(rows)
}

/// Walk one coupled pair `(x, x_n)` on the merged event grid and return
/// `sup_t |x(t) − x_n(t)|`. Both trajectories use exact per-segment
/// exponentials; the grid is refined to step `h_max` between events.
#[allow(clippy::too_many_arguments)]
fn simulate_coupled_pair(
    sys: &SwitchedSystem,
    conv: &ConvexifiedProcess,
    x0: &Vec64,
    horizon: f64,
    n: f64,
    h_max: f64,
    slow_times: &[f64],
    slow_states: &[usize],
    poisson_times: &[f64],
    draws: &[Vec<usize>],
) -> f64 {
    // merged event times: slow jumps and thinned Poisson jumps
    let mut events: Vec<(f64, bool)> = Vec::new(); // (time, is_slow)
    for &t in &slow_times[1..] {
        events.push((t, true));
    }
    for &s in poisson_times {
        let t = s / n;
        if t >= horizon {
            break;
        }
        events.push((t, false));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut x = x0.clone();
    let mut xn = x0.clone();
    let mut sup = 0.0_f64;
    let mut t = 0.0;
    let mut slow_idx = 0; // index into slow_states
    let mut event_count = 0usize; // M_t: every event resamples σ_n
    let mut sigma_n = draws[slow_states[0]][0];

    let advance = |x: &mut Vec64, xn: &mut Vec64, dt: f64, macro_state: usize, fast: usize| {
        let eb = matrix_exponential(&conv.modes[macro_state], dt).expect("valid");
        let ea = matrix_exponential(sys.mode(fast), dt).expect("valid");
        *x = &eb * &*x;
        *xn = &ea * &*xn;
    };

    for (ev_time, is_slow) in events.into_iter().chain(std::iter::once((horizon, false))) {
        let ev_time = ev_time.min(horizon);
        // refine long holds so the sup is sampled densely
        while ev_time - t > h_max {
            advance(&mut x, &mut xn, h_max, slow_states[slow_idx], sigma_n);
            t += h_max;
            sup = sup.max((&x - &xn).norm());
        }
        let dt = ev_time - t;
        if dt > 0.0 {
            advance(&mut x, &mut xn, dt, slow_states[slow_idx], sigma_n);
            t = ev_time;
            sup = sup.max((&x - &xn).norm());
        }
        if t >= horizon {
            break;
        }
        event_count += 1;
        if is_slow {
            slow_idx += 1;
        }
        // resample σ_n from the shared draws of the current macro state
        let r = slow_states[slow_idx];
        sigma_n = draws[r][event_count.min(draws[r].len() - 1)];
    }
    sup
}

/// `λ_p` estimates along a list of jump rates, with `P` having all rows
/// equal to `pi` and the invariant start `ν = pi`.
pub fn mu_scan(
    sys: &SwitchedSystem,
    pi: &[f64],
    mu_list: &[f64],
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<LyapunovEstimate>> {
    let n = sys.num_modes();
    if pi.len() != n || pi.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput("pi must be a weight vector".into()));
    }
    let mass: f64 = pi.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("pi must sum to 1".into()));
    }
    let p = Mat::from_fn(n, n, |_, j| pi[j]);
    let nu = Vec64::from_vec(pi.to_vec());
    mu_list
        .iter()
        .map(|&mu| {
            let params = MarkovParams::new(nu.clone(), mu, p.clone())?;
            lambda_p_estimate(sys, &params, horizon, n_traj, seed)
        })
        .collect()
}

/// Fraction of time (after a burn-in of `T/10`) that the angular process
/// `θ = x/|x|` spends within principal angle `eps_angle` of the dominant
/// real-part eigenspace `E_1` of `M = Σ π_i A_i`.
pub fn sphere_occupation(
    sys: &SwitchedSystem,
    pi: &[f64],
    mu: f64,
    horizon: f64,
    eps_angle: f64,
    seed: u64,
) -> Result<f64> {
    let n = sys.num_modes();
    if pi.len() != n {
        return Err(Error::InvalidInput("pi length mismatch".into()));
    }
    let m = sys.hull_point(pi)?;
    let split = linalg::real_part_split(&m, 1e-6)?;
    if split.num_groups() < 2 {
        return Err(Error::DegenerateSplit(
            "averaged matrix has a single real-part group".into(),
        ));
    }

    let p = Mat::from_fn(n, n, |_, j| pi[j]);
    let nu = Vec64::from_vec(pi.to_vec());
    let params = MarkovParams::new(nu, mu, p)?;

    let d = sys.dim();
    let mut theta = Vec64::from_element(d, 1.0 / (d as f64).sqrt());
    let burn_in = horizon / 10.0;
    let h_max = 0.05 / sys.k_max().max(1.0);

    let mut r = rng::stream(seed, 0);
    let mut walker = ChainWalker::start(&params, &mut r);
    let mut inside = 0.0;
    let mut measured = 0.0;
    let mut t = 0.0;
    while let Some((dt, mode)) = walker.next_segment(horizon, &mut r) {
        // substep long holds so occupation time is resolved within segments
        let mut remaining = dt;
        while remaining > 0.0 {
            let step = remaining.min(h_max);
            if t >= burn_in {
                let angle = split.angle_to_leading(&theta);
                measured += step;
                if angle <= eps_angle {
                    inside += step;
                }
            }
            let e = matrix_exponential(sys.mode(mode), step)?;
            theta = &e * &theta;
            let norm = theta.norm();
            if norm > 0.0 {
                theta /= norm;
            }
            t += step;
            remaining -= step;
        }
    }
    if measured <= 0.0 {
        return Err(Error::InvalidInput("horizon shorter than burn-in".into()));
    }
    Ok(inside / measured)
}

/// Lower-bound search for `λ_p^conv(A)`: the best of the hull-abscissa
/// singleton process (whose weights come out of the simplex pattern
/// search) and randomly sampled convexified processes, with a
/// common-random-number pattern-search pass over the weights of the best
/// sampled candidate. The supremum is attained by some convexified
/// process, but the search only ever reports a witnessed lower bound.
pub fn lambda_p_conv_lower(
    sys: &SwitchedSystem,
    samples: usize,
    horizon: f64,
    n_traj: usize,
    seed: u64,
) -> Result<(f64, ConvexifiedProcess)> {
    let (hull_val, hull_beta) = detlyap::max_abscissa_over_hull(sys, 16)?;
    // singleton convexified process ẋ = Mx at the hull argmax
    let all: Vec<usize> = (0..sys.num_modes()).collect();
    let singleton = ConvexifiedProcess::new(
        sys,
        vec![all.clone()],
        vec![hull_beta.clone()],
        MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1))?,
    )?;
    let mut best = (hull_val, singleton);

    // fixed seed per candidate: λ_p estimates become a deterministic
    // function of the weights, so pattern search is meaningful
    let score = |conv: &ConvexifiedProcess| -> Result<f64> {
        let macro_sys = conv.macro_system();
        let est = lambda_p_estimate(&macro_sys, &conv.chain, horizon, n_traj, seed + 77)?;
        // subtract 3σ so the reported value stays a defensible bound
        Ok(est.value - 3.0 * est.stderr)
    };

    let n_modes = sys.num_modes();
    let mut best_sampled: Option<(f64, ConvexifiedProcess)> = None;
    if n_modes >= 2 {
        for s in 0..samples {
            let mut r: Stream = rng::stream(seed, 1 + s as u64);
            use rand::Rng;
            // random partition into at most 3 groups
            let k = 1 + (r.random::<u32>() as usize) % n_modes.min(3);
            let mut sets: Vec<Vec<usize>> = vec![Vec::new(); k];
            for j in 0..n_modes {
                sets[(r.random::<u32>() as usize) % k].push(j);
            }
            sets.retain(|set| !set.is_empty());
            let k = sets.len();
            let weights: Vec<Vec<f64>> = sets
                .iter()
                .map(|set| detlyap::dirichlet_uniform(set.len(), &mut r))
                .collect();
            let mu = [1.0, 10.0][(r.random::<u32>() as usize) % 2];
            let p = Mat::from_fn(k, k, |_, _| 1.0 / k as f64);
            let nu = Vec64::from_element(k, 1.0 / k as f64);
            let chain = MarkovParams::new(nu, mu, p)?;
            let Ok(conv) = ConvexifiedProcess::new(sys, sets, weights, chain) else {
                continue;
            };
            let value = score(&conv)?;
            if best_sampled.as_ref().map(|(v, _)| value > *v).unwrap_or(true) {
                best_sampled = Some((value, conv));
            }
        }
    }

    // sharpen the best sampled candidate's weights by pairwise mass moves
    if let Some((mut value, mut conv)) = best_sampled {
        let mut sigma = 0.2;
        while sigma > 0.04 {
            let mut improved = false;
            for g in 0..conv.weights.len() {
                let len = conv.weights[g].len();
                for i in 0..len {
                    for j in 0..len {
                        if i == j || conv.weights[g][j] < sigma {
                            continue;
                        }
                        let mut w = conv.weights.clone();
                        w[g][i] += sigma;
                        w[g][j] -= sigma;
                        let Ok(cand) = ConvexifiedProcess::new(
                            sys,
                            conv.index_sets.clone(),
                            w,
                            conv.chain.clone(),
                        ) else {
                            continue;
                        };
                        let v = score(&cand)?;
                        if v > value {
                            value = v;
                            conv = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                sigma *= 0.5;
            }
        }
        if value > best.0 {
            best = (value, conv);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::{mat, planar_pair, random_skew};

    fn diag(entries: &[f64]) -> Mat {
        Mat::from_diagonal(&Vec64::from_vec(entries.to_vec()))
    }

    fn uniform_two_state(mu: f64) -> MarkovParams {
        MarkovParams::new(
            Vec64::from_vec(vec![0.5, 0.5]),
            mu,
            mat(2, &[0.5, 0.5, 0.5, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn estimate_single_mode_is_exact() {
        let sys = SwitchedSystem::new(vec![diag(&[-1.0, -3.0])]).unwrap();
        let params =
            MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1)).unwrap();
        let est = lambda_p_estimate(&sys, &params, 50.0, 4, 0).unwrap();
        assert!((est.value + 1.0).abs() < 1e-12);
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn estimate_skew_shift_modes_is_deterministic() {
        let mut r = rng::stream(50, 0);
        let modes: Vec<Mat> = (0..2)
            .map(|_| Mat::identity(3, 3).scale(0.3) + random_skew(3, &mut r))
            .collect();
        let sys = SwitchedSystem::new(modes).unwrap();
        let params = uniform_two_state(2.0);
        let est = lambda_p_estimate(&sys, &params, 40.0, 8, 1).unwrap();
        assert!((est.value - 0.3).abs() < 1e-8, "value {}", est.value);
        assert!(est.stderr < 1e-8);
    }

    #[test]
    fn estimate_planar_pair_is_negative() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let params = uniform_two_state(10.0);
        let est = lambda_p_estimate(&sys, &params, 100.0, 200, 2).unwrap();
        assert!(
            est.value + 3.0 * est.stderr < 0.0,
            "value {} ± {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn estimate_is_reproducible() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let params = uniform_two_state(3.0);
        let a = lambda_p_estimate(&sys, &params, 20.0, 16, 9).unwrap();
        let b = lambda_p_estimate(&sys, &params, 20.0, 16, 9).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.stderr, b.stderr);
    }

    #[test]
    fn estimate_shift_equivariance() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let params = uniform_two_state(5.0);
        let a = lambda_p_estimate(&sys, &params, 30.0, 32, 4).unwrap();
        let b = lambda_p_estimate(&sys.shifted(0.7), &params, 30.0, 32, 4).unwrap();
        assert!((b.value - a.value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn by_classes_scalar_block_chain_is_exact() {
        // two absorbing classes with scalar modes −1 and −2
        let sys = SwitchedSystem::new(vec![diag(&[-1.0]), diag(&[-2.0])]).unwrap();
        let params =
            MarkovParams::new(Vec64::from_vec(vec![0.3, 0.7]), 1.0, Mat::identity(2, 2)).unwrap();
        let est = lambda_p_by_classes(&sys, &params, 50.0, 4, 0).unwrap();
        assert!((est.value + 1.7).abs() < 1e-10, "value {}", est.value);
    }

    #[test]
    fn by_classes_matches_direct_estimate() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        // reducible chain: class {0} absorbing, state 1 transient
        let p = mat(2, &[1.0, 0.0, 0.5, 0.5]);
        let params = MarkovParams::new(Vec64::from_vec(vec![0.2, 0.8]), 2.0, p).unwrap();
        let horizon = 150.0;
        let direct = lambda_p_estimate(&sys, &params, horizon, 128, 3).unwrap();
        let by_class = lambda_p_by_classes(&sys, &params, horizon, 128, 3).unwrap();
        let k = sys.k_max();
        let tol = 3.0 * (direct.stderr + by_class.stderr) + 2.0 * k / horizon;
        assert!(
            (direct.value - by_class.value).abs() <= tol,
            "direct {} vs classes {} (tol {tol})",
            direct.value,
            by_class.value
        );
    }

    #[test]
    fn by_classes_agrees_on_reducible_corpus() {
        // 20 random reducible chains over the planar pair
        let horizon = 100.0;
        for case in 0..20u64 {
            let mut r = rng::stream(100 + case, 0);
            use rand::Rng;
            // one absorbing state, one transient state
            let absorbing = (r.random::<u32>() % 2) as usize;
            let stay = 0.2 + 0.6 * r.random::<f64>();
            let mut p = Mat::zeros(2, 2);
            p[(absorbing, absorbing)] = 1.0;
            p[(1 - absorbing, 1 - absorbing)] = stay;
            p[(1 - absorbing, absorbing)] = 1.0 - stay;
            let w = r.random::<f64>();
            let nu = Vec64::from_vec(if absorbing == 0 {
                vec![w, 1.0 - w]
            } else {
                vec![1.0 - w, w]
            });
            let params = MarkovParams::new(nu, 1.0 + 2.0 * r.random::<f64>(), p).unwrap();
            let sys = SwitchedSystem::new(planar_pair()).unwrap();
            let direct = lambda_p_estimate(&sys, &params, horizon, 64, case).unwrap();
            let by_class = lambda_p_by_classes(&sys, &params, horizon, 64, case).unwrap();
            let tol = 3.0 * (direct.stderr + by_class.stderr) + 2.0 * sys.k_max() / horizon;
            assert!(
                (direct.value - by_class.value).abs() <= tol,
                "case {case}: {} vs {} (tol {tol})",
                direct.value,
                by_class.value
            );
        }
    }

    #[test]
    fn two_timescale_single_class_rates() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let chain =
            MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1)).unwrap();
        let conv =
            ConvexifiedProcess::new(&sys, vec![vec![0, 1]], vec![vec![0.5, 0.5]], chain).unwrap();
        let params = two_timescale_chain(&sys, &conv, 8.0).unwrap();
        let rates = params.jump_rates();
        assert!((rates.rate(0, 1) - 4.0).abs() < 1e-12);
        assert!((rates.rate(1, 0) - 4.0).abs() < 1e-12);
        // initial law spreads by the weights
        assert!((params.nu[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_timescale_singletons_reduce_to_macro_chain() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let macro_chain = MarkovParams::new(
            Vec64::from_vec(vec![0.4, 0.6]),
            3.0,
            mat(2, &[0.3, 0.7, 0.2, 0.8]),
        )
        .unwrap();
        let conv = ConvexifiedProcess::new(
            &sys,
            vec![vec![0], vec![1]],
            vec![vec![1.0], vec![1.0]],
            macro_chain.clone(),
        )
        .unwrap();
        let params = two_timescale_chain(&sys, &conv, 100.0).unwrap();
        let rates = params.jump_rates();
        let macro_rates = macro_chain.jump_rates();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (rates.rate(i, j) - macro_rates.rate(i, j)).abs() < 1e-12,
                    "rate ({i},{j})"
                );
            }
        }
        assert!((params.nu[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn two_timescale_lambda_p_approaches_averaged_abscissa() {
        // planar pair averaged: M = diag(0,−1), λ(M) = 0
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let chain =
            MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1)).unwrap();
        let conv =
            ConvexifiedProcess::new(&sys, vec![vec![0, 1]], vec![vec![0.5, 0.5]], chain).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for &n in &[10.0, 1000.0] {
            let params = two_timescale_chain(&sys, &conv, n).unwrap();
            let est = lambda_p_estimate(&sys, &params, 80.0, 64, 5).unwrap();
            assert!(est.value > prev - 3.0 * est.stderr);
            prev = est.value;
        }
        assert!(prev.abs() < 0.05, "λ_p at n=1000 is {prev}");
    }

    #[test]
    fn coupled_singleton_classes_coincide() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let macro_chain = uniform_two_state(2.0);
        let conv = ConvexifiedProcess::new(
            &sys,
            vec![vec![0], vec![1]],
            vec![vec![1.0], vec![1.0]],
            macro_chain,
        )
        .unwrap();
        let x0 = Vec64::from_vec(vec![1.0, 0.0]);
        let rows =
            coupled_convergence_experiment(&sys, &conv, &x0, 3.0, &[5.0, 50.0], 40, 1e-9, 7)
                .unwrap();
        for row in rows {
            assert_eq!(row.exceedances, 0, "x and x_n must coincide");
        }
    }

    #[test]
    fn coupled_impossible_threshold_never_exceeds() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let chain =
            MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1)).unwrap();
        let conv =
            ConvexifiedProcess::new(&sys, vec![vec![0, 1]], vec![vec![0.5, 0.5]], chain).unwrap();
        let x0 = Vec64::from_vec(vec![1.0, 1.0]);
        let horizon = 2.0;
        let bound = 2.0 * (sys.k_max() * horizon).exp() * x0.norm();
        let rows =
            coupled_convergence_experiment(&sys, &conv, &x0, horizon, &[4.0], 30, bound * 1.01, 8)
                .unwrap();
        assert_eq!(rows[0].exceedances, 0);
    }

    #[test]
    fn coupled_frequencies_decrease_with_rate() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let chain =
            MarkovParams::new(Vec64::from_element(1, 1.0), 1.0, Mat::identity(1, 1)).unwrap();
        let conv =
            ConvexifiedProcess::new(&sys, vec![vec![0, 1]], vec![vec![0.5, 0.5]], chain).unwrap();
        let x0 = Vec64::from_vec(vec![1.0, 1.0]).normalize();
        let rows = coupled_convergence_experiment(
            &sys,
            &conv,
            &x0,
            5.0,
            &[10.0, 100.0, 1000.0],
            120,
            0.1,
            9,
        )
        .unwrap();
        assert!(
            rows[0].frequency > rows[1].frequency && rows[1].frequency > rows[2].frequency,
            "frequencies {:?}",
            rows.iter().map(|r| r.frequency).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mu_scan_equal_modes_is_constant() {
        // normal mode: ‖e^{At}‖ = e^{−t/2} exactly, no polynomial factor
        let a = mat(2, &[-0.5, 1.0, -1.0, -0.5]);
        let sys = SwitchedSystem::new(vec![a.clone(), a]).unwrap();
        let ests = mu_scan(&sys, &[0.5, 0.5], &[0.5, 5.0, 50.0], 60.0, 8, 3).unwrap();
        for est in &ests {
            assert!((est.value + 0.5).abs() < 1e-9, "value {}", est.value);
        }
    }

    #[test]
    fn mu_scan_commuting_diagonal_limit() {
        // diagonal modes: fast switching averages the exponents
        let sys = SwitchedSystem::new(vec![diag(&[1.0, -2.0]), diag(&[-3.0, 0.5])]).unwrap();
        // λ(½A_1 + ½A_2) = max(−1, −0.75) = −0.75
        let ests = mu_scan(&sys, &[0.5, 0.5], &[1000.0], 50.0, 48, 4).unwrap();
        assert!(
            (ests[0].value + 0.75).abs() < 0.05,
            "limit estimate {}",
            ests[0].value
        );
    }

    #[test]
    fn sphere_occupation_single_mode_converges() {
        let sys = SwitchedSystem::new(vec![diag(&[0.0, -1.0])]).unwrap();
        let frac = sphere_occupation(&sys, &[1.0], 1.0, 100.0, 0.1, 0).unwrap();
        assert!(frac > 0.9, "fraction {frac}");
    }

    #[test]
    fn sphere_occupation_grows_with_jump_rate() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let slow = sphere_occupation(&sys, &[0.5, 0.5], 0.01, 150.0, 0.2, 1).unwrap();
        let fast = sphere_occupation(&sys, &[0.5, 0.5], 1000.0, 150.0, 0.2, 1).unwrap();
        assert!(
            fast > slow + 0.1,
            "occupation did not grow: slow {slow} fast {fast}"
        );
        assert!(fast >= 0.8, "fast occupation {fast}");
    }

    #[test]
    fn sphere_occupation_rejects_degenerate_split() {
        let sys = SwitchedSystem::new(vec![mat(2, &[0.0, -1.0, 1.0, 0.0])]).unwrap();
        assert!(matches!(
            sphere_occupation(&sys, &[1.0], 1.0, 10.0, 0.1, 0),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn conv_lower_bound_at_least_hull() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let (val, conv) = lambda_p_conv_lower(&sys, 6, 30.0, 16, 0).unwrap();
        let (hull, _) = detlyap::max_abscissa_over_hull(&sys, 8).unwrap();
        assert!(val >= hull - 1e-9, "conv lower {val} < hull {hull}");
        assert!(!conv.index_sets.is_empty());
    }
}
