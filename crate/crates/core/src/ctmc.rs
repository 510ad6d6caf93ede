//! Continuous-time Markov chains on a finite state space.
//!
//! Two parameterizations coexist. [`MarkovParams`] is the triple
//! `(ν, μ, P)`: exponential clocks of rate `μ` and a stochastic transition
//! matrix `P`, with trivial self-jumps allowed. [`RateMatrix`] carries raw
//! jump rates `λ(i,j)`; its structural analyses (hitting probabilities,
//! capacities, trace rates) work on the embedded jump chain without
//! self-loops. All hitting and return probabilities are dense linear
//! solves, not simulations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::{Mat, Vec64};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Parameters `(ν, μ, P)` of a continuous-time chain on `⟦1,N⟧`.
#[derive(Debug, Clone)]
pub struct MarkovParams {
    pub nu: Vec64,
    pub mu: f64,
    pub p: Mat,
}

impl MarkovParams {
    pub fn new(nu: Vec64, mu: f64, p: Mat) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || n == 0 {
            return Err(Error::InvalidInput("P must be square and nonempty".into()));
        }
        if nu.len() != n {
            return Err(Error::InvalidInput("ν length must match P".into()));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidInput("jump rate μ must be positive".into()));
        }
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let x = p[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "P[{},{}] = {} must be a finite nonnegative probability",
                        i + 1,
                        j + 1,
                        x
                    )));
                }
                row += x;
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {} of P sums to {row}, not 1",
                    i + 1
                )));
            }
        }
        let mass: f64 = nu.iter().sum();
        if nu.iter().any(|x| !x.is_finite() || *x < 0.0) || (mass - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput("ν must be a probability vector".into()));
        }
        Ok(MarkovParams { nu, mu, p })
    }

    pub fn num_states(&self) -> usize {
        self.p.nrows()
    }

    /// Off-diagonal jump rates `λ(i,j) = μ p_ij` of the chain.
    pub fn jump_rates(&self) -> RateMatrix {
        let n = self.num_states();
        let mut rates = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rates[(i, j)] = self.mu * self.p[(i, j)];
                }
            }
        }
        RateMatrix::new(rates).expect("rates from valid params")
    }

    /// Reparameterization `(ν, μ/α, I + α(P − I))`, which determines the
    /// same process in law for `α ∈ (0, 1]`.
    pub fn reparameterized(&self, alpha: f64) -> Result<MarkovParams> {
        if !(0.0 < alpha && alpha <= 1.0) {
            return Err(Error::InvalidInput("α must be in (0,1]".into()));
        }
        let n = self.num_states();
        let p = Mat::identity(n, n).scale(1.0 - alpha) + self.p.scale(alpha);
        MarkovParams::new(self.nu.clone(), self.mu / alpha, p)
    }

    /// Effective leave rate `μ (1 − p_ii)` per state.
    pub fn leave_rates(&self) -> Vec64 {
        Vec64::from_fn(self.num_states(), |i, _| self.mu * (1.0 - self.p[(i, i)]))
    }

    /// Conditional jump law given a nontrivial jump: `p_ij / (1 − p_ii)`.
    pub fn conditional_jump_law(&self, i: usize) -> Option<Vec64> {
        let stay = self.p[(i, i)];
        if stay >= 1.0 - 1e-15 {
            return None;
        }
        Some(Vec64::from_fn(self.num_states(), |j, _| {
            if j == i {
                0.0
            } else {
                self.p[(i, j)] / (1.0 - stay)
            }
        }))
    }
}

/// Nonnegative off-diagonal jump rates `λ(i,j)`; the diagonal is zero and
/// holding rates `λ(i) = Σ_{j≠i} λ(i,j)` are cached.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    rates: Mat,
    holding: Vec64,
}

impl RateMatrix {
    pub fn new(mut rates: Mat) -> Result<Self> {
        let n = rates.nrows();
        if rates.ncols() != n || n == 0 {
            return Err(Error::InvalidInput("rate matrix must be square".into()));
        }
        for i in 0..n {
            rates[(i, i)] = 0.0;
            for j in 0..n {
                let x = rates[(i, j)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "rate λ({},{}) = {x} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let holding = Vec64::from_fn(n, |i, _| rates.row(i).sum());
        Ok(RateMatrix { rates, holding })
    }

    pub fn num_states(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[(i, j)]
    }

    pub fn rates(&self) -> &Mat {
        &self.rates
    }

    /// Holding rate `λ(i)`.
    pub fn holding_rate(&self, i: usize) -> f64 {
        self.holding[i]
    }

    /// Generator matrix `G = Λ − diag(λ(i))`.
    pub fn generator(&self) -> Mat {
        let n = self.num_states();
        let mut g = self.rates.clone();
        for i in 0..n {
            g[(i, i)] = -self.holding[i];
        }
        g
    }

    /// Embedded jump-chain probabilities `p(i,j) = λ(i,j)/λ(i)`; rows of
    /// absorbing states (zero holding rate) are identity rows.
    pub fn embedded_chain(&self) -> Mat {
        let n = self.num_states();
        Mat::from_fn(n, n, |i, j| {
            if self.holding[i] <= 0.0 {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                self.rates[(i, j)] / self.holding[i]
            }
        })
    }

    /// Support digraph edge `i → j`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.rates[(i, j)] > 0.0
    }

    /// True when the support digraph is strongly connected.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.num_states();
        let sccs = strongly_connected_components(n, |i, j| self.has_edge(i, j));
        sccs.len() == 1
    }
}

/// Tarjan's algorithm; components are returned in reverse topological order
/// (every edge leaves a later component), each sorted ascending.
pub(crate) fn strongly_connected_components<F: Fn(usize, usize) -> bool>(
    n: usize,
    has_edge: F,
) -> Vec<Vec<usize>> {
    #[derive(Clone)]
    struct NodeState {
        index: Option<usize>,
        lowlink: usize,
        on_stack: bool,
    }
    let mut state = vec![
        NodeState {
            index: None,
            lowlink: 0,
            on_stack: false,
        };
        n
    ];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    // iterative DFS to avoid recursion-depth concerns
    for root in 0..n {
        if state[root].index.is_some() {
            continue;
        }
        let mut call_stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (v, ref mut next_child)) = call_stack.last_mut() {
            if state[v].index.is_none() {
                state[v].index = Some(next_index);
                state[v].lowlink = next_index;
                next_index += 1;
                stack.push(v);
                state[v].on_stack = true;
            }
            let mut descended = false;
            while *next_child < n {
                let w = *next_child;
                *next_child += 1;
                if !has_edge(v, w) {
                    continue;
                }
                if state[w].index.is_none() {
                    call_stack.push((w, 0));
                    descended = true;
                    break;
                } else if state[w].on_stack {
                    state[v].lowlink = state[v].lowlink.min(state[w].index.unwrap());
                }
            }
            if descended {
                continue;
            }
            // v is finished
            if state[v].lowlink == state[v].index.unwrap() {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    state[w].on_stack = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
            call_stack.pop();
            if let Some(&mut (parent, _)) = call_stack.last_mut() {
                let low_v = state[v].lowlink;
                state[parent].lowlink = state[parent].lowlink.min(low_v);
            }
        }
    }
    comps
}

/// Block structure of a stochastic matrix: recurrent classes, transient
/// states, per-class invariant vectors and entry probabilities.
#[derive(Debug, Clone)]
pub struct ChainStructure {
    /// Permutation putting `P` in block form: recurrent classes first.
    pub permutation: Vec<usize>,
    /// Recurrent classes as sorted original-index sets.
    pub classes: Vec<Vec<usize>>,
    /// Transient states (sorted original indices).
    pub transient: Vec<usize>,
    /// Per-class invariant probability vectors, zero off the class.
    pub class_invariants: Vec<Vec64>,
    /// `α_i = P_ν(σ(τ) ∈ I(i))`, the probability of being absorbed in class
    /// `i`; empty until the ν-dependent solve has run.
    pub alphas: Vec<f64>,
    /// Transient submatrix `Q` in the permuted order.
    pub q_block: Mat,
}

impl ChainStructure {
    /// Class index of a state, or `None` for transient states.
    pub fn class_of(&self, state: usize) -> Option<usize> {
        self.classes.iter().position(|c| c.contains(&state))
    }
}

fn check_stochastic(p: &Mat) -> Result<()> {
    let n = p.nrows();
    if p.ncols() != n || n == 0 {
        return Err(Error::InvalidInput("P must be square and nonempty".into()));
    }
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if !p[(i, j)].is_finite() || p[(i, j)] < 0.0 {
                return Err(Error::InvalidInput("P entries must be nonnegative".into()));
            }
            row += p[(i, j)];
        }
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!(
                "row {} sums to {row}, not 1",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Recurrence structure of a stochastic matrix: sink strongly connected
/// components are the recurrent classes, everything else is transient.
pub fn recurrence_decomposition(p: &Mat) -> Result<ChainStructure> {
    check_stochastic(p)?;
    let n = p.nrows();
    let sccs = strongly_connected_components(n, |i, j| i != j && p[(i, j)] > 0.0);
    let mut classes = Vec::new();
    let mut transient = Vec::new();
    for comp in &sccs {
        let is_sink = comp.iter().all(|&i| {
            (0..n).all(|j| p[(i, j)] == 0.0 || comp.contains(&j) || i == j && p[(i, j)] > 0.0)
        });
        // a self-loop keeps a state inside its own component
        let is_sink = is_sink
            && comp
                .iter()
                .all(|&i| (0..n).all(|j| p[(i, j)] == 0.0 || comp.contains(&j) || j == i));
        if is_sink {
            classes.push(comp.clone());
        } else {
            transient.extend_from_slice(comp);
        }
    }
    classes.sort_by_key(|c| c[0]);
    transient.sort_unstable();

    let mut permutation = Vec::with_capacity(n);
    for c in &classes {
        permutation.extend_from_slice(c);
    }
    permutation.extend_from_slice(&transient);

    let t = transient.len();
    let mut q_block = Mat::zeros(t, t);
    for (a, &i) in transient.iter().enumerate() {
        for (b, &j) in transient.iter().enumerate() {
            q_block[(a, b)] = p[(i, j)];
        }
    }
    if t > 0 {
        let spr = crate::linalg::spectral_radius(&q_block)?;
        if spr >= 1.0 - 1e-12 {
            return Err(Error::Internal(format!(
                "transient block has spectral radius {spr}"
            )));
        }
    }

    Ok(ChainStructure {
        permutation,
        classes,
        transient,
        class_invariants: Vec::new(),
        alphas: Vec::new(),
        q_block,
    })
}

/// Invariant probability vector of a strongly connected stochastic matrix
/// restricted to `class` (zero elsewhere).
fn class_invariant(p: &Mat, class: &[usize]) -> Result<Vec64> {
    let m = class.len();
    let sub = Mat::from_fn(m, m, |a, b| p[(class[a], class[b])]);
    // null vector of (P_i^T - I)
    let mut a = sub.transpose() - Mat::identity(m, m);
    // replace the last equation by the normalization Σ π = 1
    for b in 0..m {
        a[(m - 1, b)] = 1.0;
    }
    let mut rhs = Vec64::zeros(m);
    rhs[m - 1] = 1.0;
    let lu = a.full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodicInput("class invariant solve is singular".into()))?;
    let mut pi = sol;
    // clamp tiny negatives from roundoff and renormalize
    for x in pi.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-9 {
                return Err(Error::NonErgodicInput(
                    "class invariant has a negative component".into(),
                ));
            }
            *x = 0.0;
        }
    }
    let mass: f64 = pi.iter().sum();
    pi /= mass;
    let mut full = Vec64::zeros(p.nrows());
    for (a, &i) in class.iter().enumerate() {
        full[i] = pi[a];
    }
    Ok(full)
}

/// Full stationary structure for `(ν, μ, P)`: recurrent classes, their
/// invariant vectors, and the absorption probabilities
/// `α_i = P_ν(σ(τ) ∈ I(i))` where `τ` is the first exit from the transient
/// set. Absorption only depends on the embedded discrete chain.
pub fn stationary_structure(params: &MarkovParams) -> Result<ChainStructure> {
    let mut structure = recurrence_decomposition(&params.p)?;
    let p = &params.p;

    for class in structure.classes.clone() {
        structure.class_invariants.push(class_invariant(p, &class)?);
    }

    // absorption probabilities per class via (I - Q) h = b
    let t = structure.transient.len();
    let mut alphas = vec![0.0; structure.classes.len()];
    let iq = Mat::identity(t, t) - &structure.q_block;
    let lu = iq.full_piv_lu();
    for (ci, class) in structure.classes.iter().enumerate() {
        // direct mass
        for &s in class {
            alphas[ci] += params.nu[s];
        }
        if t > 0 {
            let b = Vec64::from_fn(t, |a, _| {
                let i = structure.transient[a];
                class.iter().map(|&j| p[(i, j)]).sum()
            });
            let h = lu
                .solve(&b)
                .ok_or_else(|| Error::Internal("transient absorption solve failed".into()))?;
            for (a, &s) in structure.transient.iter().enumerate() {
                alphas[ci] += params.nu[s] * h[a];
            }
        }
    }
    let total: f64 = alphas.iter().sum();
    debug_assert!((total - 1.0).abs() < 1e-9, "absorption mass {total}");
    structure.alphas = alphas;
    Ok(structure)
}

/// One simulated jump of the `(ν, μ, P)` chain; trivial self-jumps are kept.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Jump times, starting at `0.0` (the initial draw).
    pub times: Vec<f64>,
    /// State entered at each time, right-continuous.
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl Trajectory {
    /// Segments `(duration, state)` covering `[0, horizon]`.
    pub fn segments(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::with_capacity(self.states.len());
        for k in 0..self.states.len() {
            let end = if k + 1 < self.times.len() {
                self.times[k + 1]
            } else {
                self.horizon
            };
            out.push((end - self.times[k], self.states[k]));
        }
        out
    }
}

pub(crate) fn sample_categorical(weights: &[f64], rng: &mut Stream) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return k;
        }
    }
    weights.len() - 1
}

fn sample_row(p: &Mat, i: usize, rng: &mut Stream) -> usize {
    let n = p.ncols();
    let mut u = rng.random::<f64>();
    for j in 0..n {
        u -= p[(i, j)];
        if u <= 0.0 {
            return j;
        }
    }
    n - 1
}

/// Streaming walker over the `(ν, μ, P)` chain. `simulate_chain` and the
/// Monte Carlo estimators share this, so they consume randomness
/// identically.
pub struct ChainWalker<'a> {
    params: &'a MarkovParams,
    pub state: usize,
    pub time: f64,
}

impl<'a> ChainWalker<'a> {
    pub fn start(params: &'a MarkovParams, rng: &mut Stream) -> Self {
        let weights: Vec<f64> = params.nu.iter().copied().collect();
        let state = sample_categorical(&weights, rng);
        ChainWalker {
            params,
            state,
            time: 0.0,
        }
    }

    /// Advance one exponential clock; returns `(duration, old_state)` or the
    /// final partial segment once the horizon is passed.
    pub fn next_segment(&mut self, horizon: f64, rng: &mut Stream) -> Option<(f64, usize)> {
        if self.time >= horizon {
            return None;
        }
        let wait = rng::exponential(rng, self.params.mu);
        let old = self.state;
        if self.time + wait >= horizon {
            let dt = horizon - self.time;
            self.time = horizon;
            return Some((dt, old));
        }
        self.time += wait;
        self.state = sample_row(&self.params.p, old, rng);
        Some((wait, old))
    }
}

/// Simulate the chain on `[0, T]`; deterministic given the seed. Trivial
/// jumps (state to itself) are kept in the record.
pub fn simulate_chain(params: &MarkovParams, horizon: f64, seed: u64) -> Result<Trajectory> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let mut walker = ChainWalker::start(params, &mut rng);
    let mut times = vec![0.0];
    let mut states = vec![walker.state];
    loop {
        let before = walker.time;
        match walker.next_segment(horizon, &mut rng) {
            None => break,
            Some((dt, _old)) => {
                if before + dt < horizon {
                    times.push(walker.time);
                    states.push(walker.state);
                }
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        horizon,
    })
}

fn check_disjoint_nonempty(n: usize, j1: &[usize], j2: &[usize]) -> Result<()> {
    if j1.is_empty() || j2.is_empty() {
        return Err(Error::InvalidInput("target sets must be nonempty".into()));
    }
    for &s in j1.iter().chain(j2) {
        if s >= n {
            return Err(Error::InvalidInput(format!("state {s} out of range")));
        }
    }
    if j1.iter().any(|s| j2.contains(s)) {
        return Err(Error::InvalidInput("J1 and J2 must be disjoint".into()));
    }
    Ok(())
}

/// `P_i(H_{J2} < H_{J1}^+)`: starting from `i`, the probability of hitting
/// `J2` before returning to (or first hitting) `J1`. The start state itself
/// counts only after the first jump.
pub fn hitting_probability(
    rates: &RateMatrix,
    start: usize,
    target_j2: &[usize],
    return_j1: &[usize],
) -> Result<f64> {
    let n = rates.num_states();
    check_disjoint_nonempty(n, return_j1, target_j2)?;
    if start >= n {
        return Err(Error::InvalidInput("start state out of range".into()));
    }
    let p = rates.embedded_chain();

    // u(x) = P_x(hit J2 before J1) for x outside J1 ∪ J2
    let interior: Vec<usize> = (0..n)
        .filter(|s| !return_j1.contains(s) && !target_j2.contains(s))
        .collect();
    let m = interior.len();
    let u_interior = if m > 0 {
        let a = Mat::from_fn(m, m, |r, c| {
            let (i, j) = (interior[r], interior[c]);
            let delta = if r == c { 1.0 } else { 0.0 };
            delta - p[(i, j)]
        });
        let b = Vec64::from_fn(m, |r, _| {
            target_j2.iter().map(|&j| p[(interior[r], j)]).sum()
        });
        let lu = a.clone().full_piv_lu();
        let sol = lu.solve(&b).ok_or_else(|| {
            Error::NonErgodicInput("hitting system is singular (J1 ∪ J2 unreachable)".into())
        })?;
        // verify the solve: a singularity that slipped through pivoting
        // shows up as a large residual
        let resid = (&a * &sol - &b).amax();
        if !resid.is_finite() || resid > 1e-8 {
            return Err(Error::NonErgodicInput(
                "hitting system is numerically singular".into(),
            ));
        }
        sol
    } else {
        Vec64::zeros(0)
    };
    let u_of = |x: usize| -> f64 {
        if target_j2.contains(&x) {
            1.0
        } else if return_j1.contains(&x) {
            0.0
        } else {
            u_interior[interior.iter().position(|&s| s == x).unwrap()]
        }
    };

    if target_j2.contains(&start) {
        // already in J2 at time 0
        return Ok(1.0);
    }
    if rates.holding_rate(start) <= 0.0 {
        return Err(Error::NonErgodicInput(format!(
            "state {start} is absorbing; J1 ∪ J2 unreachable"
        )));
    }
    // one explicit first step so H^+ (first return) is honored for i ∈ J1
    let mut prob = 0.0;
    for j in 0..n {
        if p[(start, j)] == 0.0 {
            continue;
        }
        prob += p[(start, j)] * u_of(j);
    }
    Ok(prob)
}

/// Invariant probability measure of the rate matrix, by null-space solve of
/// the generator with nonnegativity projection. Rank deficiency beyond
/// dimension one raises `NonErgodicInput`.
pub fn invariant_measure(rates: &RateMatrix) -> Result<Vec64> {
    let n = rates.num_states();
    let g = rates.generator();
    let svd = g.transpose().svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv[0].max(1e-300);
    let null_count = (0..n).filter(|&i| sv[i] <= 1e-10 * smax).count();
    if null_count == 0 {
        return Err(Error::NonErgodicInput(
            "generator has no null vector at tolerance".into(),
        ));
    }
    if null_count > 1 {
        return Err(Error::NonErgodicInput(format!(
            "generator null space has dimension {null_count}; chain is decomposable"
        )));
    }
    let vt = svd.v_t.unwrap();
    let mut pi = vt.row(n - 1).transpose();
    if pi.sum() < 0.0 {
        pi = -pi;
    }
    for x in pi.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let mass = pi.sum();
    if mass <= 0.0 {
        return Err(Error::NonErgodicInput("invariant vector vanished".into()));
    }
    Ok(pi / mass)
}

fn check_invariant(rates: &RateMatrix, pi: &Vec64, tol: f64) -> Result<()> {
    if pi.len() != rates.num_states() {
        return Err(Error::InvalidInput("π length mismatch".into()));
    }
    let g = rates.generator();
    let resid = (g.transpose() * pi).amax();
    let scale = rates.rates().amax().max(1.0);
    if resid > tol * scale {
        return Err(Error::InvalidInput(format!(
            "π is not invariant: residual {resid:.3e} vs scale {scale:.3e}"
        )));
    }
    Ok(())
}

/// Capacity `cap(J1, J2) = Σ_{i∈J1} π(i) λ(i) P_i(H_{J2} < H_{J1}^+)`.
pub fn capacity(rates: &RateMatrix, pi: &Vec64, j1: &[usize], j2: &[usize]) -> Result<f64> {
    check_disjoint_nonempty(rates.num_states(), j1, j2)?;
    check_invariant(rates, pi, 1e-10)?;
    let mut cap = 0.0;
    for &i in j1 {
        let h = hitting_probability(rates, i, j2, j1)?;
        cap += pi[i] * rates.holding_rate(i) * h;
    }
    Ok(cap)
}

/// Rates of the trace process on `E = ∪ E_x` and the mean class-to-class
/// rates.
///
/// `trace_rates[(i,j)] = λ(i) P_i(H_{{j}} = H_E^+)` is the rate at which the
/// process observed only on `E` jumps from `i` to `j` (the diagonal holds
/// returns to the same state through `Δ`, a trivial jump of the trace).
/// `class_rates[(x,y)] = (1/π(E_x)) Σ_{i∈E_x} π(i) Σ_{j∈E_y} R(i,j)`.
#[derive(Debug, Clone)]
pub struct TraceRates {
    /// States of `E` in ascending order; rows/cols of `trace_rates`.
    pub e_states: Vec<usize>,
    pub trace_rates: Mat,
    pub class_rates: Mat,
}

/// First-step analysis of the trace process over the partition
/// `E_1, …, E_𝔫, Δ`.
pub fn trace_class_rates(
    rates: &RateMatrix,
    pi: &Vec64,
    classes: &[Vec<usize>],
    delta: &[usize],
) -> Result<TraceRates> {
    let n = rates.num_states();
    let mut seen = vec![false; n];
    for &s in classes.iter().flatten().chain(delta.iter()) {
        if s >= n || seen[s] {
            return Err(Error::InvalidInput(
                "partition must cover each state exactly once".into(),
            ));
        }
        seen[s] = true;
    }
    if !seen.iter().all(|&b| b) || classes.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidInput(
            "partition must cover all states with nonempty classes".into(),
        ));
    }
    check_invariant(rates, pi, 1e-10)?;

    let mut e_states: Vec<usize> = classes.iter().flatten().copied().collect();
    e_states.sort_unstable();
    let p = rates.embedded_chain();

    // w_j(x) = P_x(first entry to E is at j), for x ∈ Δ:
    // (I - P_ΔΔ) w_j = P_{Δ, j}
    let m = delta.len();
    let lu = if m > 0 {
        let a = Mat::from_fn(m, m, |r, c| {
            let delta_rc = if r == c { 1.0 } else { 0.0 };
            delta_rc - p[(delta[r], delta[c])]
        });
        Some(a.full_piv_lu())
    } else {
        None
    };

    let ne = e_states.len();
    let mut trace = Mat::zeros(ne, ne);
    for (jc, &j) in e_states.iter().enumerate() {
        let w = if let Some(lu) = &lu {
            let b = Vec64::from_fn(m, |r, _| p[(delta[r], j)]);
            Some(lu.solve(&b).ok_or_else(|| {
                Error::NonErgodicInput("trace first-passage system is singular".into())
            })?)
        } else {
            None
        };
        for (ic, &i) in e_states.iter().enumerate() {
            let mut prob = p[(i, j)];
            if let Some(w) = &w {
                for (r, &x) in delta.iter().enumerate() {
                    prob += p[(i, x)] * w[r];
                }
            }
            trace[(ic, jc)] = rates.holding_rate(i) * prob;
        }
    }

    let k = classes.len();
    let mut class_rates = Mat::zeros(k, k);
    for (x, ex) in classes.iter().enumerate() {
        let mass: f64 = ex.iter().map(|&i| pi[i]).sum();
        if mass <= 0.0 {
            return Err(Error::NonErgodicInput(format!(
                "class {} has zero invariant mass",
                x + 1
            )));
        }
        for (y, ey) in classes.iter().enumerate() {
            if x == y {
                continue;
            }
            let mut flow = 0.0;
            for &i in ex {
                let ic = e_states.iter().position(|&s| s == i).unwrap();
                for &j in ey {
                    let jc = e_states.iter().position(|&s| s == j).unwrap();
                    flow += pi[i] * trace[(ic, jc)];
                }
            }
            class_rates[(x, y)] = flow / mass;
        }
    }

    Ok(TraceRates {
        e_states,
        trace_rates: trace,
        class_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mat(n: usize, rows: &[f64]) -> Mat {
        Mat::from_row_slice(n, n, rows)
    }

    fn uniform_nu(n: usize) -> Vec64 {
        Vec64::from_element(n, 1.0 / n as f64)
    }

    fn random_stochastic(n: usize, rng: &mut Stream) -> Mat {
        let mut p = Mat::zeros(n, n);
        for i in 0..n {
            let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x /= s;
            }
            for j in 0..n {
                p[(i, j)] = row[j];
            }
        }
        p
    }

    fn random_rates(n: usize, rng: &mut Stream) -> RateMatrix {
        let mut rates = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rates[(i, j)] = rng.random::<f64>() + 0.05;
                }
            }
        }
        RateMatrix::new(rates).unwrap()
    }

    #[test]
    fn params_validation() {
        let p = mat(2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(MarkovParams::new(uniform_nu(2), 1.0, p.clone()).is_ok());
        assert!(MarkovParams::new(uniform_nu(2), 0.0, p.clone()).is_err());
        let bad = mat(2, &[0.6, 0.5, 0.5, 0.5]);
        assert!(MarkovParams::new(uniform_nu(2), 1.0, bad).is_err());
    }

    #[test]
    fn decomposition_identity_and_mixing() {
        let s = recurrence_decomposition(&Mat::identity(2, 2)).unwrap();
        assert_eq!(s.classes, vec![vec![0], vec![1]]);
        assert!(s.transient.is_empty());

        let s = recurrence_decomposition(&mat(2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        assert_eq!(s.classes, vec![vec![0, 1]]);
    }

    #[test]
    fn decomposition_transient_block() {
        let p = mat(2, &[1.0, 0.0, 0.5, 0.5]);
        let s = recurrence_decomposition(&p).unwrap();
        assert_eq!(s.classes, vec![vec![0]]);
        assert_eq!(s.transient, vec![1]);
        assert!((s.q_block[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decomposition_permuted_zero_pattern() {
        // two recurrent classes {0,2} and {4}, transient {1,3}; permuting
        // classes-first must leave every recurrent row supported inside
        // its own diagonal block
        let p = mat(
            5,
            &[
                0.0, 0.0, 1.0, 0.0, 0.0, //
                0.2, 0.1, 0.3, 0.2, 0.2, //
                1.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.5, 0.0, 0.25, 0.25, //
                0.0, 0.0, 0.0, 0.0, 1.0,
            ],
        );
        let s = recurrence_decomposition(&p).unwrap();
        assert_eq!(s.classes, vec![vec![0, 2], vec![4]]);
        assert_eq!(s.transient, vec![1, 3]);
        let perm = &s.permutation;
        let permuted = Mat::from_fn(5, 5, |a, b| p[(perm[a], perm[b])]);
        let mut offset = 0;
        for class in &s.classes {
            for a in offset..offset + class.len() {
                for b in 0..5 {
                    if !(offset..offset + class.len()).contains(&b) {
                        assert_eq!(permuted[(a, b)], 0.0, "off-block mass at ({a},{b})");
                    }
                }
            }
            offset += class.len();
        }
    }

    #[test]
    fn stationary_structure_examples() {
        let p = mat(2, &[0.5, 0.5, 0.5, 0.5]);
        let params = MarkovParams::new(Vec64::from_vec(vec![0.9, 0.1]), 1.0, p).unwrap();
        let s = stationary_structure(&params).unwrap();
        assert_eq!(s.alphas, vec![1.0]);
        assert!((s.class_invariants[0][0] - 0.5).abs() < 1e-12);

        let blocks = Mat::identity(2, 2);
        let params =
            MarkovParams::new(Vec64::from_vec(vec![0.3, 0.7]), 1.0, blocks).unwrap();
        let s = stationary_structure(&params).unwrap();
        assert!((s.alphas[0] - 0.3).abs() < 1e-12 && (s.alphas[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn stationary_structure_symmetric_transient() {
        // state 3 jumps uniformly; classes {1}, {2} absorb with prob 1/2 each
        let p = mat(
            3,
            &[
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0,
            ],
        );
        let nu = Vec64::from_vec(vec![0.0, 0.0, 1.0]);
        let s = stationary_structure(&MarkovParams::new(nu, 1.0, p).unwrap()).unwrap();
        assert!((s.alphas[0] - 0.5).abs() < 1e-12);
        assert!((s.alphas[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn simulation_constant_for_identity_p() {
        let params = MarkovParams::new(uniform_nu(2), 3.0, Mat::identity(2, 2)).unwrap();
        let tr = simulate_chain(&params, 50.0, 9).unwrap();
        assert!(tr.states.iter().all(|&s| s == tr.states[0]));
    }

    #[test]
    fn simulation_jump_count_is_poisson() {
        let params = MarkovParams::new(uniform_nu(2), 2.0, mat(2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        let tr = simulate_chain(&params, 1000.0, 4).unwrap();
        let jumps = (tr.times.len() - 1) as f64;
        let lambda = 2000.0;
        assert!(
            (jumps - lambda).abs() <= 3.0 * lambda.sqrt(),
            "jump count {jumps} outside 3σ of Poisson({lambda})"
        );
    }

    #[test]
    fn simulation_occupation_matches_ergodic_law() {
        let params = MarkovParams::new(uniform_nu(2), 1.0, mat(2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        let tr = simulate_chain(&params, 4000.0, 11).unwrap();
        let occ0: f64 = tr
            .segments()
            .iter()
            .filter(|&&(_, s)| s == 0)
            .map(|&(dt, _)| dt)
            .sum::<f64>()
            / 4000.0;
        // effective switch rate is 1/2, so occupation variance ~ 1/(T/2)
        assert!((occ0 - 0.5).abs() < 3.0 * (1.0 / 2000.0f64).sqrt() * 2.0);
    }

    #[test]
    fn simulation_is_reproducible() {
        let params = MarkovParams::new(uniform_nu(3), 1.5, random_stochastic(3, &mut crate::rng::stream(1, 0))).unwrap();
        let a = simulate_chain(&params, 100.0, 42).unwrap();
        let b = simulate_chain(&params, 100.0, 42).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn hitting_symmetric_birth_death() {
        // rates all 1 on the path 1-2-3; from the middle, both ends equal
        let mut rates = Mat::zeros(3, 3);
        rates[(0, 1)] = 1.0;
        rates[(1, 0)] = 1.0;
        rates[(1, 2)] = 1.0;
        rates[(2, 1)] = 1.0;
        let rm = RateMatrix::new(rates).unwrap();
        let h = hitting_probability(&rm, 1, &[2], &[0]).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hitting_from_inside_j1_counts_first_return() {
        // two states: from 1 ∈ J1 the first jump must land in {2}
        let mut rates = Mat::zeros(2, 2);
        rates[(0, 1)] = 2.0;
        rates[(1, 0)] = 3.0;
        let rm = RateMatrix::new(rates).unwrap();
        let h = hitting_probability(&rm, 0, &[1], &[0]).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hitting_matches_monte_carlo() {
        let mut r = crate::rng::stream(20, 0);
        let rm = random_rates(6, &mut r);
        let j1 = vec![0, 3];
        let j2 = vec![5];
        let start = 1;
        let exact = hitting_probability(&rm, start, &j2, &j1).unwrap();

        // simulation oracle on the embedded chain
        let p = rm.embedded_chain();
        let runs = 200_000;
        let mut hits = 0u64;
        for k in 0..runs {
            let mut rng = crate::rng::stream(21, k);
            let mut s = start;
            loop {
                s = sample_row(&p, s, &mut rng);
                if j2.contains(&s) {
                    hits += 1;
                    break;
                }
                if j1.contains(&s) {
                    break;
                }
            }
        }
        let est = hits as f64 / runs as f64;
        let sigma = (exact * (1.0 - exact) / runs as f64).sqrt();
        assert!(
            (est - exact).abs() <= 3.0 * sigma + 1e-9,
            "MC {est} vs exact {exact}"
        );
    }

    #[test]
    fn capacity_two_state_closed_form() {
        let (a, b) = (0.7, 1.9);
        let mut rates = Mat::zeros(2, 2);
        rates[(0, 1)] = a;
        rates[(1, 0)] = b;
        let rm = RateMatrix::new(rates).unwrap();
        let pi = Vec64::from_vec(vec![b / (a + b), a / (a + b)]);
        let cap = capacity(&rm, &pi, &[0], &[1]).unwrap();
        assert!((cap - a * b / (a + b)).abs() < 1e-12);
    }

    #[test]
    fn capacity_is_symmetric() {
        // symmetric 3-cycle
        let mut rates = Mat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    rates[(i, j)] = 1.0;
                }
            }
        }
        let rm = RateMatrix::new(rates).unwrap();
        let pi = invariant_measure(&rm).unwrap();
        let c12 = capacity(&rm, &pi, &[0], &[1]).unwrap();
        let c21 = capacity(&rm, &pi, &[1], &[0]).unwrap();
        assert!((c12 - c21).abs() < 1e-12);

        let mut r = crate::rng::stream(22, 0);
        for _ in 0..10 {
            let rm = random_rates(6, &mut r);
            let pi = invariant_measure(&rm).unwrap();
            let j1 = vec![0, 2];
            let j2 = vec![4, 5];
            let a = capacity(&rm, &pi, &j1, &j2).unwrap();
            let b = capacity(&rm, &pi, &j2, &j1).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.max(1.0), "cap {a} vs {b}");
        }
    }

    #[test]
    fn trace_of_full_chain_is_the_chain() {
        let mut r = crate::rng::stream(23, 0);
        let rm = random_rates(4, &mut r);
        let pi = invariant_measure(&rm).unwrap();
        let classes: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        let tr = trace_class_rates(&rm, &pi, &classes, &[]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { rm.rate(i, j) };
                assert!((tr.trace_rates[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_star_chain_two_step() {
        // center 0, leaves 1 and 2; E = {1,2}, Δ = {0}
        let mut rates = Mat::zeros(3, 3);
        rates[(1, 0)] = 2.0;
        rates[(2, 0)] = 1.0;
        rates[(0, 1)] = 0.25;
        rates[(0, 2)] = 0.75;
        let rm = RateMatrix::new(rates).unwrap();
        let pi = invariant_measure(&rm).unwrap();
        let tr = trace_class_rates(&rm, &pi, &[vec![1], vec![2]], &[0]).unwrap();
        // R(1,2) = λ(1) · p(0,2)
        let expected = 2.0 * 0.75;
        let i = tr.e_states.iter().position(|&s| s == 1).unwrap();
        let j = tr.e_states.iter().position(|&s| s == 2).unwrap();
        assert!((tr.trace_rates[(i, j)] - expected).abs() < 1e-12);
    }

    #[test]
    fn trace_four_state_ladder_rates() {
        // path chain 1 ⇄ 2 ⇄ 3 ⇄ 4 with rates (√n, n), (a, a), (n, √n):
        // observed on E = {1, 4}, the first-passage solve gives
        // R(1,4) = √n · a/(n + 2a), an O(1) quantity when a = √n.
        let n: f64 = 1e4;
        let a = n.sqrt();
        let mut rates = Mat::zeros(4, 4);
        rates[(0, 1)] = n.sqrt();
        rates[(1, 0)] = n;
        rates[(1, 2)] = a;
        rates[(2, 1)] = a;
        rates[(3, 2)] = n.sqrt();
        rates[(2, 3)] = n;
        let rm = RateMatrix::new(rates).unwrap();
        let pi = invariant_measure(&rm).unwrap();
        let tr = trace_class_rates(&rm, &pi, &[vec![0], vec![3]], &[1, 2]).unwrap();
        let got = tr.class_rates[(0, 1)];
        let expected = n.sqrt() * a / (n + 2.0 * a);
        assert!(
            (got - expected).abs() <= 1e-9 * expected,
            "trace rate {got} vs first-passage closed form {expected}"
        );
        // O(1) at the balanced exponent, matching the √n/a_n crossing time
        assert!(got > 0.5 && got < 1.5, "trace rate {got} not O(1)");
    }

    #[test]
    fn hitting_unreachable_targets_is_an_error() {
        // state 0 is absorbing: {1} ∪ {2} cannot be reached from it
        let mut rates = Mat::zeros(3, 3);
        rates[(1, 0)] = 1.0;
        rates[(2, 0)] = 1.0;
        let rm = RateMatrix::new(rates).unwrap();
        assert!(matches!(
            hitting_probability(&rm, 0, &[2], &[1]),
            Err(Error::NonErgodicInput(_))
        ));
    }

    #[test]
    fn trace_row_sums_equal_holding_rates() {
        let mut r = crate::rng::stream(24, 0);
        for _ in 0..10 {
            let rm = random_rates(6, &mut r);
            let pi = invariant_measure(&rm).unwrap();
            let classes = vec![vec![0, 1], vec![2]];
            let delta = vec![3, 4, 5];
            let tr = trace_class_rates(&rm, &pi, &classes, &delta).unwrap();
            for (ic, &i) in tr.e_states.iter().enumerate() {
                let row: f64 = tr.trace_rates.row(ic).sum();
                assert!(
                    (row - rm.holding_rate(i)).abs() <= 1e-10 * rm.holding_rate(i),
                    "row sum {row} vs λ({i}) = {}",
                    rm.holding_rate(i)
                );
            }
        }
    }

    #[test]
    fn reparameterization_preserves_law() {
        let mut r = crate::rng::stream(25, 0);
        let p = random_stochastic(4, &mut r);
        let params = MarkovParams::new(uniform_nu(4), 2.0, p).unwrap();
        for &alpha in &[0.1, 0.5, 1.0] {
            let rep = params.reparameterized(alpha).unwrap();
            let lr_a = params.leave_rates();
            let lr_b = rep.leave_rates();
            for i in 0..4 {
                assert!((lr_a[i] - lr_b[i]).abs() < 1e-12);
                match (params.conditional_jump_law(i), rep.conditional_jump_law(i)) {
                    (Some(a), Some(b)) => assert!((a - b).amax() < 1e-12),
                    (None, None) => {}
                    _ => panic!("conditional law existence differs"),
                }
            }
        }
    }

    #[test]
    fn invariant_measure_detects_decomposable_chain() {
        let mut rates = Mat::zeros(4, 4);
        rates[(0, 1)] = 1.0;
        rates[(1, 0)] = 1.0;
        rates[(2, 3)] = 1.0;
        rates[(3, 2)] = 1.0;
        let rm = RateMatrix::new(rates).unwrap();
        assert!(matches!(
            invariant_measure(&rm),
            Err(Error::NonErgodicInput(_))
        ));
    }

    #[test]
    fn stationary_invariants_hold_on_random_chains() {
        let mut r = crate::rng::stream(26, 0);
        for _ in 0..20 {
            let n = 3 + (r.random::<u32>() % 4) as usize;
            let p = random_stochastic(n, &mut r);
            let params = MarkovParams::new(uniform_nu(n), 1.0, p.clone()).unwrap();
            let s = stationary_structure(&params).unwrap();
            let alpha_sum: f64 = s.alphas.iter().sum();
            assert!((alpha_sum - 1.0).abs() <= 1e-12);
            for inv in &s.class_invariants {
                let resid = (inv.transpose() * &p - inv.transpose()).amax();
                assert!(resid <= 1e-12);
            }
        }
    }
}
