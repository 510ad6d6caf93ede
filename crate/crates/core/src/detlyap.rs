//! Bracketing the deterministic Lyapunov exponent.
//!
//! Computing `λ_d(A)` exactly is intractable in general, so this module
//! deliberately ships a bracket instead of a point estimate. The lower
//! bound comes from periodic witnesses: `(1/t) log spr(Φ_σ(t))` never
//! exceeds `λ_d`, and a beam search over mode sequences with duration
//! refinement maximizes it. The upper bound is the best one-sided
//! Lipschitz constant over a family of quadratic norms: for symmetric
//! positive definite `Q`, `max_i ½ λ_max(Q^{-1/2}(A_i^T Q + Q A_i) Q^{-1/2})`
//! dominates `λ_d`, and a descent over Cholesky factors minimizes it.
//!
//! Both bounds center the modes by their mean trace first, so adding `c·I`
//! to every mode shifts both ends of the bracket by `c` without perturbing
//! the search path.

use rayon::prelude::*;

use crate::error::Result;
use crate::flows::{Signal, SwitchedSystem};
use crate::linalg::{self, matrix_exponential, skew_shift_certificate};
use crate::rng::{self, Stream};
use crate::{Mat, Vec64};

/// Interval certificate for `λ_d(A)` with its witnesses.
#[derive(Debug, Clone)]
pub struct LyapunovBracket {
    pub lower: f64,
    pub upper: f64,
    /// Signal reproducing `lower` as `(1/T) log spr(Φ)`.
    pub lower_witness: Signal,
    /// SPD matrix defining the quadratic norm that certifies `upper`.
    pub upper_norm: Mat,
}

impl LyapunovBracket {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Search configuration for [`lambda_d_bracket`].
#[derive(Debug, Clone)]
pub struct BracketConfig {
    /// Candidate segment durations for the beam search.
    pub durations: Vec<f64>,
    /// Maximum number of segments in a witness.
    pub depth: usize,
    /// Beam width.
    pub beam: usize,
    /// Random restarts for the quadratic-norm descent.
    pub upper_restarts: usize,
    /// Descent steps per restart.
    pub upper_steps: usize,
    pub seed: u64,
}

impl Default for BracketConfig {
    fn default() -> Self {
        BracketConfig {
            durations: vec![0.05, 0.1, 0.2, 0.4, 0.8],
            depth: 12,
            beam: 256,
            upper_restarts: 20,
            upper_steps: 500,
            seed: 0,
        }
    }
}

fn mean_trace_shift(sys: &SwitchedSystem) -> f64 {
    let d = sys.dim() as f64;
    let s: f64 = sys.modes().iter().map(|a| a.trace()).sum();
    s / (d * sys.num_modes() as f64)
}

/// Witness candidate: `(1/Σt) log spr(product)`, tracked through a
/// normalized running product plus a log scale (valid since
/// `spr(cM) = c·spr(M)` for `c > 0`).
#[derive(Clone)]
struct Candidate {
    segments: Vec<(f64, usize)>,
    product: Mat,
    log_scale: f64,
    total_time: f64,
    score: f64,
}

fn spr_score(product: &Mat, log_scale: f64, total_time: f64) -> f64 {
    if total_time <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let spr = linalg::spectral_radius(product).unwrap_or(0.0);
    if spr <= 0.0 {
        return f64::NEG_INFINITY;
    }
    (spr.ln() + log_scale) / total_time
}

fn extend(sys: &SwitchedSystem, cand: &Candidate, dt: f64, mode: usize) -> Candidate {
    let e = matrix_exponential(sys.mode(mode), dt).expect("validated mode");
    let mut product = &e * &cand.product;
    let mut log_scale = cand.log_scale;
    let n = product.norm();
    if n > 0.0 && n.is_finite() {
        log_scale += n.ln();
        product /= n;
    }
    let mut segments = cand.segments.clone();
    segments.push((dt, mode));
    let total_time = cand.total_time + dt;
    let score = spr_score(&product, log_scale, total_time);
    Candidate {
        segments,
        product,
        log_scale,
        total_time,
        score,
    }
}

fn rebuild(sys: &SwitchedSystem, segments: &[(f64, usize)]) -> Candidate {
    let mut cand = Candidate {
        segments: Vec::new(),
        product: Mat::identity(sys.dim(), sys.dim()),
        log_scale: 0.0,
        total_time: 0.0,
        score: f64::NEG_INFINITY,
    };
    for &(dt, mode) in segments {
        cand = extend(sys, &cand, dt, mode);
    }
    cand
}

fn witness_key(segments: &[(f64, usize)]) -> Vec<(usize, u64)> {
    segments
        .iter()
        .map(|&(dt, m)| (m, dt.to_bits()))
        .collect()
}

/// Scores are compared through a 1e-9 quantization so that floating-point
/// jitter (for example from a simultaneous similarity of the modes) cannot
/// flip near-ties and steer the search onto a different witness.
fn qscore(x: f64) -> i64 {
    if x.is_nan() {
        return i64::MIN;
    }
    (x * 1e9).clamp(i64::MIN as f64, i64::MAX as f64) as i64
}

/// Golden-section sharpening of each segment duration, holding the others.
fn refine_durations(sys: &SwitchedSystem, cand: &Candidate, passes: usize) -> Candidate {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = cand.clone();
    for _ in 0..passes {
        for k in 0..best.segments.len() {
            let t0 = best.segments[k].0;
            let (mut lo, mut hi) = ((t0 / 8.0).max(1e-4), t0 * 2.0 + 1e-3);
            let segs = best.segments.clone();
            let eval = |t: f64| {
                let mut s = segs.clone();
                s[k].0 = t;
                rebuild(sys, &s).score
            };
            let mut x1 = hi - PHI * (hi - lo);
            let mut x2 = lo + PHI * (hi - lo);
            let mut f1 = eval(x1);
            let mut f2 = eval(x2);
            for _ in 0..40 {
                if qscore(f1) < qscore(f2) {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + PHI * (hi - lo);
                    f2 = eval(x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - PHI * (hi - lo);
                    f1 = eval(x1);
                }
            }
            let t_best = 0.5 * (lo + hi);
            let trial = {
                let mut s = best.segments.clone();
                s[k].0 = t_best;
                rebuild(sys, &s)
            };
            if qscore(trial.score) > qscore(best.score) {
                best = trial;
            }
        }
    }
    best
}

/// Lower bound on `λ_d` from the best explored periodic witness, with the
/// witness signal. Any returned value is a valid bound up to floating-point
/// error in the spectral radius.
pub fn lambda_d_lower(
    sys: &SwitchedSystem,
    durations: &[f64],
    depth: usize,
    budget: usize,
) -> Result<(f64, Signal)> {
    if durations.is_empty() || depth == 0 {
        return Err(crate::error::Error::InvalidInput(
            "need a nonempty duration grid and depth ≥ 1".into(),
        ));
    }
    let shift = mean_trace_shift(sys);
    let centered = sys.shifted(-shift);
    let beam_width = budget.max(8);

    let seed = Candidate {
        segments: Vec::new(),
        product: Mat::identity(sys.dim(), sys.dim()),
        log_scale: 0.0,
        total_time: 0.0,
        score: f64::NEG_INFINITY,
    };
    let mut beam = vec![seed];
    let mut best: Option<Candidate> = None;

    for _level in 0..depth {
        let expansions: Vec<(usize, f64, usize)> = (0..beam.len())
            .flat_map(|ci| {
                let mut v = Vec::with_capacity(durations.len() * centered.num_modes());
                for mode in 0..centered.num_modes() {
                    for &dt in durations {
                        v.push((ci, dt, mode));
                    }
                }
                v
            })
            .collect();
        let mut children: Vec<Candidate> = expansions
            .par_iter()
            .map(|&(ci, dt, mode)| extend(&centered, &beam[ci], dt, mode))
            .collect();
        // deterministic order: by score, ties by lexicographic witness
        children.sort_by(|a, b| {
            qscore(b.score)
                .cmp(&qscore(a.score))
                .then_with(|| witness_key(&a.segments).cmp(&witness_key(&b.segments)))
        });
        children.dedup_by(|a, b| witness_key(&a.segments) == witness_key(&b.segments));
        children.truncate(beam_width);
        if let Some(top) = children.first() {
            if best
                .as_ref()
                .map(|b| qscore(top.score) > qscore(b.score))
                .unwrap_or(true)
            {
                best = Some(top.clone());
            }
        }
        beam = children;
    }

    let best = best.expect("depth ≥ 1 always yields a candidate");
    let best = refine_durations(&centered, &best, 2);
    let signal = Signal::new(best.segments.clone())?;
    Ok((best.score + shift, signal))
}

/// One-sided Lipschitz constant of the quadratic norm `|x|_Q`,
/// `F(Q) = max_i ½ λ_max(Q^{-1/2}(A_i^T Q + Q A_i) Q^{-1/2})`,
/// evaluated through the Cholesky factor `Q = L L^T`.
fn quadratic_bound(sys: &SwitchedSystem, lower_factor: &Mat) -> f64 {
    let d = sys.dim();
    let linv = match lower_factor.clone().try_inverse() {
        Some(x) => x,
        None => return f64::INFINITY,
    };
    let mut worst = f64::NEG_INFINITY;
    for a in sys.modes() {
        let x = &linv * a.transpose() * lower_factor;
        let sym = Mat::from_fn(d, d, |i, j| 0.5 * (x[(i, j)] + x[(j, i)]));
        let top = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        worst = worst.max(top);
    }
    worst
}

fn cholesky_params(d: usize) -> usize {
    d * (d + 1) / 2
}

fn factor_from_params(d: usize, params: &Vec64) -> Mat {
    let mut l = Mat::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            if i == j {
                // exponential keeps the diagonal positive
                l[(i, j)] = params[k].clamp(-30.0, 30.0).exp();
            } else {
                l[(i, j)] = params[k];
            }
            k += 1;
        }
    }
    l
}

fn descend(sys: &SwitchedSystem, start: Vec64, steps: usize) -> (f64, Vec64) {
    let d = sys.dim();
    let m = cholesky_params(d);
    let mut x = start;
    let mut fx = quadratic_bound(sys, &factor_from_params(d, &x));
    let mut step = 0.25;
    for _ in 0..steps {
        // forward-difference gradient
        let h = 1e-6;
        let mut grad = Vec64::zeros(m);
        for k in 0..m {
            let mut xk = x.clone();
            xk[k] += h;
            let fk = quadratic_bound(sys, &factor_from_params(d, &xk));
            grad[k] = (fk - fx) / h;
        }
        let gn = grad.norm();
        if gn < 1e-14 {
            break;
        }
        let trial = &x - grad.scale(step / gn);
        let ft = quadratic_bound(sys, &factor_from_params(d, &trial));
        if ft < fx {
            x = trial;
            fx = ft;
            step = (step * 1.5).min(1.0);
        } else {
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
    }
    (fx, x)
}

fn params_from_spd(q: &Mat) -> Option<Vec64> {
    let chol = q.clone().cholesky()?;
    let l = chol.l();
    let d = q.nrows();
    let mut params = Vec64::zeros(cholesky_params(d));
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            params[k] = if i == j {
                l[(i, i)].max(1e-30).ln()
            } else {
                l[(i, j)]
            };
            k += 1;
        }
    }
    Some(params)
}

/// Rigorous upper bound on `λ_d` over explored quadratic norms, with the
/// certifying SPD matrix `Q` (normalized to `tr Q = d`).
pub fn lambda_d_upper(sys: &SwitchedSystem, iterations: usize) -> Result<(f64, Mat)> {
    if iterations == 0 {
        return Err(crate::error::Error::InvalidInput(
            "iterations must be ≥ 1".into(),
        ));
    }
    let shift = mean_trace_shift(sys);
    let centered = sys.shifted(-shift);
    let d = sys.dim();
    let m = cholesky_params(d);

    let mut starts: Vec<Vec64> = vec![Vec64::zeros(m)]; // identity norm
    // A passing skew-shift certificate pins the optimum exactly.
    if let Some((_, q)) = skew_shift_certificate(centered.modes(), 1e-8)? {
        if let Some(p) = params_from_spd(&q) {
            starts.push(p);
        }
    }
    // Lyapunov norm of the hull midpoint, when it is Hurwitz.
    let beta = vec![1.0 / centered.num_modes() as f64; centered.num_modes()];
    if let Ok(mid) = centered.hull_point(&beta) {
        if linalg::spectral_abscissa(&mid)? < -1e-9 {
            if let Some(q) = lyapunov_solve(&mid) {
                if let Some(p) = params_from_spd(&q) {
                    starts.push(p);
                }
            }
        }
    }
    for k in 0..iterations {
        let mut r = rng::stream(0x5EED, k as u64);
        starts.push(Vec64::from_fn(m, |_, _| 0.4 * rng::normal(&mut r)));
    }

    let results: Vec<(f64, Vec64)> = starts
        .par_iter()
        .map(|s| descend(&centered, s.clone(), 500))
        .collect();
    let (best_val, best_x) = results
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start");

    let l = factor_from_params(d, &best_x);
    let q = &l * l.transpose();
    let q = q.scale(d as f64 / q.trace());
    Ok((best_val + shift, q))
}

/// Solve `M^T Q + Q M = -I` for SPD `Q`.
fn lyapunov_solve(m: &Mat) -> Option<Mat> {
    let d = m.nrows();
    let n2 = d * d;
    let mut a = Mat::zeros(n2, n2);
    // vec(M^T Q + Q M) indexed by (i,j) ↦ i + j·d
    for i in 0..d {
        for j in 0..d {
            let row = i + j * d;
            for k in 0..d {
                a[(row, k + j * d)] += m[(k, i)];
                a[(row, i + k * d)] += m[(k, j)];
            }
        }
    }
    let rhs = Vec64::from_fn(n2, |r, _| {
        let (i, j) = (r % d, r / d);
        if i == j {
            -1.0
        } else {
            0.0
        }
    });
    let sol = a.full_piv_lu().solve(&rhs)?;
    let q = Mat::from_fn(d, d, |i, j| 0.5 * (sol[i + j * d] + sol[j + i * d]));
    let ok = q
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .all(|&v| v > 0.0);
    ok.then_some(q)
}

/// Bracket `λ_d(A)` between the periodic-witness lower bound and the
/// quadratic-norm upper bound. The gap is reported, never collapsed.
pub fn lambda_d_bracket(sys: &SwitchedSystem, config: &BracketConfig) -> Result<LyapunovBracket> {
    let (lower, lower_witness) =
        lambda_d_lower(sys, &config.durations, config.depth, config.beam)?;
    let (upper, upper_norm) = lambda_d_upper(sys, config.upper_restarts)?;
    Ok(LyapunovBracket {
        lower,
        upper,
        lower_witness,
        upper_norm,
    })
}

/// Maximize the spectral abscissa over the convex hull of the modes by
/// multi-start pattern search on the probability simplex. Returns the best
/// value and the maximizing weights.
pub fn max_abscissa_over_hull(sys: &SwitchedSystem, starts: usize) -> Result<(f64, Vec<f64>)> {
    let n = sys.num_modes();
    if n == 1 {
        return Ok((linalg::spectral_abscissa(sys.mode(0))?, vec![1.0]));
    }
    let eval = |beta: &[f64]| -> f64 {
        let m = sys.hull_point(beta).expect("matching length");
        linalg::spectral_abscissa(&m).unwrap_or(f64::NEG_INFINITY)
    };

    let mut initial: Vec<Vec<f64>> = Vec::new();
    initial.push(vec![1.0 / n as f64; n]);
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        initial.push(v);
    }
    let mut r: Stream = rng::stream(0xD1CE, 0);
    for _ in 0..starts.max(1) {
        initial.push(dirichlet_uniform(n, &mut r));
    }

    let refine = |mut beta: Vec<f64>| -> (f64, Vec<f64>) {
        let mut best = eval(&beta);
        let mut sigma: f64 = 0.25;
        while sigma > 1e-9 {
            let mut improved = false;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    // move mass from j to i, staying on the simplex
                    let delta = sigma.min(beta[j]);
                    if delta <= 0.0 {
                        continue;
                    }
                    let mut cand = beta.clone();
                    cand[i] += delta;
                    cand[j] -= delta;
                    let v = eval(&cand);
                    if v > best + 1e-15 {
                        best = v;
                        beta = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                sigma *= 0.5;
            }
        }
        (best, beta)
    };

    let results: Vec<(f64, Vec<f64>)> = initial.into_par_iter().map(refine).collect();
    let best = results
        .into_iter()
        .max_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| {
                // deterministic tie-break on the weights
                a.1.iter()
                    .zip(b.1.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| !o.is_eq())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        })
        .expect("nonempty starts");
    Ok(best)
}

/// Uniform Dirichlet sample (normalized exponentials).
pub(crate) fn dirichlet_uniform(n: usize, rng: &mut Stream) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng::exponential(rng, 1.0)).collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::{mat, planar_pair, random_gl, random_matrix, random_skew};
    use crate::linalg::operator_norm;
    use crate::Vec64;

    fn diag(entries: &[f64]) -> Mat {
        Mat::from_diagonal(&Vec64::from_vec(entries.to_vec()))
    }

    fn small_config() -> BracketConfig {
        BracketConfig {
            durations: vec![0.1, 0.4, 0.8],
            depth: 4,
            beam: 32,
            upper_restarts: 6,
            upper_steps: 300,
            seed: 0,
        }
    }

    fn skew_shift_triple(c: f64, d: usize, seed: u64) -> SwitchedSystem {
        let mut r = rng::stream(seed, 0);
        let t = random_gl(d, &mut r);
        let ti = t.clone().try_inverse().unwrap();
        let modes: Vec<Mat> = (0..3)
            .map(|_| Mat::identity(d, d).scale(c) + &t * random_skew(d, &mut r) * &ti)
            .collect();
        SwitchedSystem::new(modes).unwrap()
    }

    #[test]
    fn lower_single_mode_is_abscissa() {
        let sys = SwitchedSystem::new(vec![mat(2, &[0.2, 1.0, 0.0, -0.7])]).unwrap();
        let (lo, _) = lambda_d_lower(&sys, &[0.3, 1.0], 3, 16).unwrap();
        assert!((lo - 0.2).abs() < 1e-8);
    }

    #[test]
    fn lower_skew_shift_products_all_score_c() {
        let sys = skew_shift_triple(0.3, 3, 31);
        let (lo, _) = lambda_d_lower(&sys, &[0.2, 0.5], 3, 16).unwrap();
        assert!((lo - 0.3).abs() < 1e-8);
    }

    #[test]
    fn lower_planar_pair_approaches_zero() {
        // fast alternation pushes the witness toward the hull abscissa 0
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let (lo, wit) = lambda_d_lower(&sys, &[0.05, 0.1, 0.2, 0.4, 0.8], 12, 128).unwrap();
        assert!(lo >= -0.05, "lower bound {lo}");
        assert!(lo <= 1e-9, "lower bound must stay below λ_d = 0, got {lo}");
        // the witness reproduces the reported value
        let f = crate::flows::flow(&sys, &wit).unwrap();
        let spr = linalg::spectral_radius(&f).unwrap();
        assert!((spr.ln() / wit.total_time() - lo).abs() < 1e-9);
    }

    #[test]
    fn lower_exhaustive_grid_oracle_on_planar_pair() {
        // oracle: exhaustive products of length ≤ 4 over a coarse grid
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let grid = [0.05, 0.1, 0.2, 0.5, 1.0];
        let mut best = f64::NEG_INFINITY;
        let mut stack: Vec<Vec<(f64, usize)>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for segs in &stack {
                for mode in 0..2 {
                    for &dt in &grid {
                        let mut s = segs.clone();
                        s.push((dt, mode));
                        let f =
                            crate::flows::flow(&sys, &Signal::new(s.clone()).unwrap()).unwrap();
                        let spr = linalg::spectral_radius(&f).unwrap();
                        let t: f64 = s.iter().map(|x| x.0).sum();
                        best = best.max(spr.ln() / t);
                        next.push(s);
                    }
                }
            }
            stack = next;
        }
        // enumeration approaches 0 from below; the search must do at least
        // as well as the enumerated witnesses
        assert!(best > -0.1 && best < 0.0, "oracle best {best}");
        let (lo, _) = lambda_d_lower(&sys, &grid, 8, 128).unwrap();
        assert!(lo >= best - 1e-9, "search {lo} vs oracle {best}");
    }

    #[test]
    fn upper_single_normal_matrix() {
        let sys = SwitchedSystem::new(vec![diag(&[-1.0, -2.0])]).unwrap();
        let (up, _) = lambda_d_upper(&sys, 4).unwrap();
        assert!((up + 1.0).abs() < 1e-8);
    }

    #[test]
    fn upper_planar_pair_euclidean_norm_is_optimal() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let (up, _) = lambda_d_upper(&sys, 4).unwrap();
        assert!(up.abs() <= 1e-9, "upper {up}");
    }

    #[test]
    fn upper_skew_shift_triple() {
        let sys = skew_shift_triple(0.3, 3, 33);
        let (up, q) = lambda_d_upper(&sys, 4).unwrap();
        assert!((up - 0.3).abs() < 1e-8, "upper {up}");
        // Q certifies: Q(A_i - 0.3 I) + (A_i - 0.3 I)^T Q ≈ 0
        for a in sys.modes() {
            let b = a - Mat::identity(3, 3).scale(0.3);
            let r = &q * &b + b.transpose() * &q;
            assert!(operator_norm(&r) < 1e-6);
        }
    }

    #[test]
    fn bracket_single_hurwitz_matrix() {
        let sys = SwitchedSystem::new(vec![diag(&[-1.0, -2.0])]).unwrap();
        let b = lambda_d_bracket(&sys, &small_config()).unwrap();
        assert!((b.lower + 1.0).abs() < 1e-8);
        assert!((b.upper + 1.0).abs() < 1e-8);
    }

    #[test]
    fn bracket_skew_shift_is_tight() {
        let sys = skew_shift_triple(0.3, 3, 35);
        let b = lambda_d_bracket(&sys, &small_config()).unwrap();
        assert!(b.gap() <= 1e-6, "gap {}", b.gap());
        assert!((b.lower - 0.3).abs() < 1e-6);
    }

    #[test]
    fn bracket_orders_lower_below_upper() {
        let mut r = rng::stream(36, 0);
        for case in 0..6 {
            let d = 2 + case % 3;
            let modes: Vec<Mat> = (0..2).map(|_| random_matrix(d, &mut r)).collect();
            let sys = SwitchedSystem::new(modes).unwrap();
            let b = lambda_d_bracket(&sys, &small_config()).unwrap();
            assert!(b.lower <= b.upper + 1e-9, "{} > {}", b.lower, b.upper);
        }
    }

    #[test]
    fn shift_equivariance_of_bounds() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let shifted = sys.shifted(0.4);
        let cfg = small_config();
        let b0 = lambda_d_bracket(&sys, &cfg).unwrap();
        let b1 = lambda_d_bracket(&shifted, &cfg).unwrap();
        assert!((b1.lower - b0.lower - 0.4).abs() < 1e-10);
        assert!((b1.upper - b0.upper - 0.4).abs() < 1e-10);
    }

    #[test]
    fn lower_similarity_invariance() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let mut r = rng::stream(37, 0);
        let t = random_gl(2, &mut r);
        let ti = t.clone().try_inverse().unwrap();
        let conj: Vec<Mat> = sys.modes().iter().map(|a| &t * a * &ti).collect();
        let conj_sys = SwitchedSystem::new(conj).unwrap();
        let grid = [0.1, 0.4];
        let (a, _) = lambda_d_lower(&sys, &grid, 4, 32).unwrap();
        let (b, _) = lambda_d_lower(&conj_sys, &grid, 4, 32).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn hull_abscissa_planar_pair() {
        let sys = SwitchedSystem::new(planar_pair()).unwrap();
        let (v, beta) = max_abscissa_over_hull(&sys, 8).unwrap();
        assert!(v.abs() <= 1e-8, "hull abscissa {v}");
        assert!((beta[0] - 0.5).abs() < 1e-3 && (beta[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn hull_abscissa_single_mode() {
        let sys = SwitchedSystem::new(vec![diag(&[-2.0, 0.7])]).unwrap();
        let (v, beta) = max_abscissa_over_hull(&sys, 1).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        assert_eq!(beta, vec![1.0]);
    }

    #[test]
    fn hull_abscissa_vertex_maximizer_matches_grid_oracle() {
        let sys = SwitchedSystem::new(vec![diag(&[1.0, -5.0]), diag(&[-5.0, 1.0])]).unwrap();
        // grid oracle over β ∈ {0, 0.01, …, 1}
        let mut oracle = f64::NEG_INFINITY;
        for k in 0..=100 {
            let b = k as f64 / 100.0;
            let m = sys.hull_point(&[b, 1.0 - b]).unwrap();
            oracle = oracle.max(linalg::spectral_abscissa(&m).unwrap());
        }
        assert!((oracle - 1.0).abs() < 1e-12);
        let (v, beta) = max_abscissa_over_hull(&sys, 8).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        // maximizer sits at a vertex
        assert!(beta.iter().any(|&b| b > 1.0 - 1e-6));
    }

    #[test]
    fn hull_never_exceeds_upper_bound() {
        let mut r = rng::stream(38, 0);
        for _ in 0..5 {
            let modes: Vec<Mat> = (0..3).map(|_| random_matrix(3, &mut r)).collect();
            let sys = SwitchedSystem::new(modes).unwrap();
            let (hull, _) = max_abscissa_over_hull(&sys, 4).unwrap();
            let (up, _) = lambda_d_upper(&sys, 4).unwrap();
            assert!(hull <= up + 1e-6, "hull {hull} vs upper {up}");
        }
    }
}
