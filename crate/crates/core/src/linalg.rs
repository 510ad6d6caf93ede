//! Dense linear-algebra kernel.
//!
//! Matrix exponentials, spectra, the decomposition of state space into
//! generalized eigenspaces grouped by real part, an irreducibility test for
//! matrix tuples, and the certificate that a tuple becomes skew-symmetric
//! after a common shift and change of basis.
//!
//! All functions are pure and operate on [`Mat`] (`nalgebra::DMatrix<f64>`).

use nalgebra::{Complex, Matrix2};

use crate::error::{Error, Result};
use crate::rng;
use crate::{Mat, Vec64};

/// Largest singular value (operator 2-norm).
pub fn operator_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    // Explicit small cases avoid an SVD in the hot path.
    if a.nrows() == 1 && a.ncols() == 1 {
        return a[(0, 0)].abs();
    }
    if a.nrows() == 2 && a.ncols() == 2 {
        // Singular values of a 2x2 from the eigenvalues of A^T A; entries
        // are rescaled first since the computation takes fourth powers.
        let s = a.amax();
        if s == 0.0 || !s.is_finite() {
            return s;
        }
        let b = a / s;
        let g = b.transpose() * &b;
        let t = 0.5 * (g[(0, 0)] + g[(1, 1)]);
        let d = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        let disc = (t * t - d).max(0.0).sqrt();
        return s * (t + disc).max(0.0).sqrt();
    }
    a.clone().svd(false, false).singular_values[0]
}

fn check_square_finite(a: &Mat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Closed-form exponential of a 2x2 matrix.
///
/// Writes `A = m I + B` with `tr B = 0`, so `B^2 = D I`, and evaluates
/// `e^A = e^m (c0 I + c1 B)` with `c0, c1` given by cosh/cos or their series
/// near the branch point.
pub(crate) fn expm2(a: &Matrix2<f64>) -> Matrix2<f64> {
    let m = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let p = a[(0, 0)] - m;
    let q = a[(0, 1)];
    let r = a[(1, 0)];
    let disc = p * p + q * r;
    let (c0, c1) = if disc > 1e-8 {
        let s = disc.sqrt();
        (s.cosh(), s.sinh() / s)
    } else if disc < -1e-8 {
        let w = (-disc).sqrt();
        (w.cos(), w.sin() / w)
    } else {
        // series in disc; error O(disc^3)
        (
            1.0 + disc / 2.0 + disc * disc / 24.0,
            1.0 + disc / 6.0 + disc * disc / 120.0,
        )
    };
    let em = m.exp();
    Matrix2::new(
        em * (c0 + c1 * p),
        em * c1 * q,
        em * c1 * r,
        em * (c0 - c1 * p),
    )
}

/// Operator 2-norm of a stack-allocated 2x2.
pub(crate) fn operator_norm2(a: &Matrix2<f64>) -> f64 {
    let s = a.amax();
    if s == 0.0 || !s.is_finite() {
        return s;
    }
    let b = a / s;
    let g = b.transpose() * b;
    let t = 0.5 * (g[(0, 0)] + g[(1, 1)]);
    let d = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let disc = (t * t - d).max(0.0).sqrt();
    s * (t + disc).max(0.0).sqrt()
}

/// `e^{A t}`.
///
/// Scalar and 2x2 inputs use closed forms; larger matrices go through
/// scaling-and-squaring with a Padé approximant.
pub fn matrix_exponential(a: &Mat, t: f64) -> Result<Mat> {
    check_square_finite(a)?;
    if !t.is_finite() {
        return Err(Error::InvalidInput("time must be finite".into()));
    }
    let d = a.nrows();
    match d {
        0 => Ok(Mat::zeros(0, 0)),
        1 => Ok(Mat::from_element(1, 1, (a[(0, 0)] * t).exp())),
        2 => {
            let at = Matrix2::new(
                a[(0, 0)] * t,
                a[(0, 1)] * t,
                a[(1, 0)] * t,
                a[(1, 1)] * t,
            );
            let e = expm2(&at);
            Ok(Mat::from_row_slice(
                2,
                2,
                &[e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]],
            ))
        }
        _ => Ok((a * t).exp()),
    }
}

/// All eigenvalues (as complex numbers) of a square real matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    check_square_finite(a)?;
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

/// Maximum eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max))
}

/// Maximum eigenvalue real part.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// State-space decomposition by eigenvalue real part.
///
/// `xi` lists the distinct real parts in decreasing order; `bases[j]` holds
/// an orthonormal basis (in coordinates) of the generalized eigenspace
/// `E_{j+1}` spanned by all eigenvalues with that real part; `projectors[j]`
/// projects onto `E_1 ⊕ … ⊕ E_{j+1}` along the remaining spaces.
#[derive(Debug, Clone)]
pub struct RealPartSplit {
    pub xi: Vec<f64>,
    pub bases: Vec<Mat>,
    pub projectors: Vec<Mat>,
    /// Columns are the group bases concatenated in order.
    pub basis_matrix: Mat,
    pub inv_basis: Mat,
}

impl RealPartSplit {
    pub fn num_groups(&self) -> usize {
        self.xi.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    /// Oblique projector onto `E_1 ⊕ … ⊕ E_j` (1-based `j`) along the rest.
    pub fn leading_projector(&self, j: usize) -> &Mat {
        &self.projectors[j - 1]
    }

    /// Orthogonal distance from a unit vector to `E_1`, as a principal angle.
    pub fn angle_to_leading(&self, v: &Vec64) -> f64 {
        let b = &self.bases[0];
        let coeff = b.transpose() * v;
        let proj = b * coeff;
        let rest = v - proj;
        rest.norm().clamp(0.0, 1.0).asin()
    }
}

/// Kernel basis of `m` with expected dimension `dim`, via SVD.
fn kernel_basis(m: &Mat, dim: usize, rel_gap: f64) -> Result<Mat> {
    let d = m.ncols();
    let svd = m.clone().svd(false, true);
    let sv = &svd.singular_values;
    let vt = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::Internal("svd failed to produce V^T".into()))?;
    let smax = sv[0].max(1e-300);
    // The `dim` smallest singular values must be separated from the rest.
    if dim < d {
        let kept = sv[d - dim - 1];
        let dropped = sv[d - dim];
        if dropped > rel_gap * smax && dropped > 1e-3 * kept {
            return Err(Error::IllConditionedSplit(format!(
                "kernel dimension {dim} not resolved: sv gap {dropped:.3e} / {kept:.3e}"
            )));
        }
    }
    let mut basis = Mat::zeros(d, dim);
    for (col, row) in (d - dim..d).enumerate() {
        basis.set_column(col, &vt.row(row).transpose());
    }
    Ok(basis)
}

/// Split the state space by the distinct real parts of the eigenvalues of
/// `a`, merging real parts closer than `cluster_tol * (1 + ||a||)`.
pub fn real_part_split(a: &Mat, cluster_tol: f64) -> Result<RealPartSplit> {
    check_square_finite(a)?;
    if cluster_tol <= 0.0 {
        return Err(Error::InvalidInput("cluster_tol must be positive".into()));
    }
    let d = a.nrows();
    let scale = 1.0 + operator_norm(a);
    let gap = cluster_tol * scale;

    let mut eigs = eigenvalues(a)?;
    eigs.sort_by(|x, y| y.re.total_cmp(&x.re));

    // Chain-merge into groups of nearly equal real part. Ties merge, which
    // can only coarsen the split.
    let mut groups: Vec<Vec<Complex<f64>>> = Vec::new();
    for z in eigs {
        match groups.last_mut() {
            Some(g) if (g.last().unwrap().re - z.re) <= gap => g.push(z),
            _ => groups.push(vec![z]),
        }
    }

    let id = Mat::identity(d, d);
    let mut bases = Vec::with_capacity(groups.len());
    let mut xi = Vec::with_capacity(groups.len());
    for g in &groups {
        xi.push(g.iter().map(|z| z.re).sum::<f64>() / g.len() as f64);
        // Real annihilating polynomial of the group, applied to `a`.
        // Complex eigenvalues contribute quadratic factors through their
        // conjugate pairs; each factor is normalized to keep the product
        // well scaled (the kernel is unchanged).
        let im_tol = 1e-7 * scale;
        let mut pending: Vec<Complex<f64>> = g.clone();
        let mut prod = id.clone();
        while let Some(z) = pending.pop() {
            let factor = if z.im.abs() <= im_tol {
                a - id.scale(z.re)
            } else {
                // consume the conjugate partner
                if let Some(pos) = pending
                    .iter()
                    .position(|w| (w.im + z.im).abs() <= im_tol && (w.re - z.re).abs() <= gap)
                {
                    pending.swap_remove(pos);
                }
                a * a - (a * (2.0 * z.re)) + id.scale(z.norm_sqr())
            };
            let nf = operator_norm(&factor).max(1e-12);
            prod = (factor / nf) * prod;
        }
        let basis = kernel_basis(&prod, g.len(), 1e-6)?;
        bases.push(basis);
    }

    if bases.iter().map(|b| b.ncols()).sum::<usize>() != d {
        return Err(Error::IllConditionedSplit(
            "group dimensions do not sum to d".into(),
        ));
    }

    let mut basis_matrix = Mat::zeros(d, d);
    let mut col = 0;
    for b in &bases {
        for c in 0..b.ncols() {
            basis_matrix.set_column(col, &b.column(c));
            col += 1;
        }
    }
    let inv_basis = basis_matrix.clone().try_inverse().ok_or_else(|| {
        Error::IllConditionedSplit("combined eigenspace basis is singular".into())
    })?;

    // pr_j = V diag(1..1,0..0) V^{-1}
    let mut projectors = Vec::with_capacity(bases.len());
    let mut lead = 0;
    for b in &bases {
        lead += b.ncols();
        let mut sel = Mat::zeros(d, d);
        for c in 0..lead {
            sel[(c, c)] = 1.0;
        }
        projectors.push(&basis_matrix * sel * &inv_basis);
    }

    // Leading sums must be invariant under `a`.
    let mut lead = 0;
    for b in &bases {
        lead += b.ncols();
        let u = basis_matrix.columns(0, lead).into_owned();
        let qr = u.clone().qr();
        let q = qr.q();
        let au = a * &u;
        let resid = &au - &q * (q.transpose() * &au);
        if operator_norm(&resid) > 1e-8 * scale {
            return Err(Error::IllConditionedSplit(format!(
                "leading sum of dimension {lead} is not invariant (residual {:.3e})",
                operator_norm(&resid)
            )));
        }
    }

    Ok(RealPartSplit {
        xi,
        bases,
        projectors,
        basis_matrix,
        inv_basis,
    })
}

fn vec_of(m: &Mat) -> Vec64 {
    Vec64::from_iterator(m.len(), m.iter().copied())
}

/// Burnside test: the tuple is irreducible iff the associative algebra
/// generated by `{I, A_1, …, A_N}` has dimension `d^2`. The span of all
/// products of length up to `d^2 - 1` is built incrementally, tracking rank
/// through an orthonormal basis with threshold `tol`.
pub fn is_irreducible(tuple: &[Mat], tol: f64) -> Result<bool> {
    if tuple.is_empty() {
        return Err(Error::InvalidInput("empty matrix tuple".into()));
    }
    let d = tuple[0].nrows();
    for a in tuple {
        check_square_finite(a)?;
        if a.nrows() != d {
            return Err(Error::InvalidInput("tuple dimensions disagree".into()));
        }
    }
    let full = d * d;
    let mut ortho: Vec<Vec64> = Vec::new();
    let add = |m: &Mat, ortho: &mut Vec<Vec64>| -> bool {
        let norm = m.norm();
        if norm < 1e-300 {
            return false;
        }
        let mut v = vec_of(m) / norm;
        for b in ortho.iter() {
            let c = b.dot(&v);
            v -= b * c;
        }
        let r = v.norm();
        if r > tol {
            ortho.push(v / r);
            true
        } else {
            false
        }
    };

    let mut frontier = vec![Mat::identity(d, d)];
    add(&frontier[0], &mut ortho);
    for _len in 0..full.saturating_sub(1) {
        let mut next = Vec::new();
        for m in &frontier {
            for a in tuple {
                let p = a * m;
                if add(&p, &mut ortho) {
                    next.push(p);
                }
            }
        }
        if next.is_empty() || ortho.len() == full {
            break;
        }
        frontier = next;
    }
    Ok(ortho.len() == full)
}

fn sym_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Isometric vectorization of a symmetric matrix (off-diagonals scaled by √2).
fn sym_to_vec(m: &Mat) -> Vec64 {
    let d = m.nrows();
    let mut v = Vec64::zeros(sym_dim(d));
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            v[k] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            k += 1;
        }
    }
    v
}

fn vec_to_sym(v: &Vec64, d: usize) -> Mat {
    let mut m = Mat::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

fn min_eig_sym(m: &Mat) -> (f64, Vec64) {
    let se = m.clone().symmetric_eigen();
    let mut idx = 0;
    for i in 1..se.eigenvalues.len() {
        if se.eigenvalues[i] < se.eigenvalues[idx] {
            idx = i;
        }
    }
    (se.eigenvalues[idx], se.eigenvectors.column(idx).into_owned())
}

/// Certificate that the tuple is skew-symmetric after a common shift and
/// change of basis: returns `(c, Q)` with `c = tr(A_1)/d` and `Q` symmetric
/// positive definite satisfying `Q(A_i - cI) + (A_i - cI)^T Q ≈ 0` for all
/// `i`. `T = Q^{1/2}` then realizes the change of basis. Absence of a
/// certificate is a valid answer (`None`).
pub fn skew_shift_certificate(tuple: &[Mat], tol: f64) -> Result<Option<(f64, Mat)>> {
    if tuple.is_empty() {
        return Err(Error::InvalidInput("empty matrix tuple".into()));
    }
    let d = tuple[0].nrows();
    for a in tuple {
        check_square_finite(a)?;
        if a.nrows() != d {
            return Err(Error::InvalidInput("tuple dimensions disagree".into()));
        }
    }
    let c = tuple[0].trace() / d as f64;
    // A skew matrix is traceless, so all shifted traces must agree.
    for a in tuple {
        if (a.trace() / d as f64 - c).abs() > tol {
            return Ok(None);
        }
    }
    let shifted: Vec<Mat> = tuple
        .iter()
        .map(|a| a - Mat::identity(d, d).scale(c))
        .collect();

    // Null space of the stacked symmetric Lyapunov operator
    // Q ↦ (Q B_i + B_i^T Q)_i acting on symmetric matrices.
    let m = sym_dim(d);
    let mut op = Mat::zeros(tuple.len() * m, m);
    for (k, ev) in sym_basis(d).iter().enumerate() {
        for (i, b) in shifted.iter().enumerate() {
            let img = ev * b + b.transpose() * ev;
            let v = sym_to_vec(&img);
            for r in 0..m {
                op[(i * m + r, k)] = v[r];
            }
        }
    }
    let svd = op.clone().svd(false, true);
    let sv = &svd.singular_values;
    let vt = svd.v_t.as_ref().unwrap();
    let smax = sv[0].max(1.0);
    let null_dim = (0..m).filter(|&i| sv[i] <= tol * smax).count();
    if null_dim == 0 {
        return Ok(None);
    }
    let null_vecs: Vec<Vec64> = (m - null_dim..m)
        .map(|row| vt.row(row).transpose())
        .collect();

    let candidate = if null_dim == 1 {
        let s = vec_to_sym(&null_vecs[0], d);
        let (lo, _) = min_eig_sym(&s);
        let (lo_neg, _) = min_eig_sym(&(-s.clone()));
        if lo > 0.0 {
            Some(s)
        } else if lo_neg > 0.0 {
            Some(-s)
        } else {
            None
        }
    } else {
        // Maximize the minimal eigenvalue of Σ x_k S_k over the unit sphere
        // of the null space by projected subgradient ascent with restarts.
        let mats: Vec<Mat> = null_vecs.iter().map(|v| vec_to_sym(v, d)).collect();
        let assemble = |x: &Vec64| -> Mat {
            let mut s = Mat::zeros(d, d);
            for (k, mk) in mats.iter().enumerate() {
                s += mk.scale(x[k]);
            }
            s
        };
        let mut best: Option<(f64, Mat)> = None;
        for restart in 0..50 {
            let mut r = rng::stream(0xC0FFEE, restart as u64);
            let mut x = Vec64::from_fn(null_dim, |_, _| rng::normal(&mut r));
            x /= x.norm();
            let mut step = 0.5;
            let mut val = min_eig_sym(&assemble(&x)).0;
            for _ in 0..200 {
                let (lam, v) = min_eig_sym(&assemble(&x));
                val = lam;
                // subgradient of λ_min at x: k ↦ v^T S_k v
                let g = Vec64::from_fn(null_dim, |k, _| (v.transpose() * &mats[k] * &v)[(0, 0)]);
                let mut xn = &x + g.scale(step);
                let n = xn.norm();
                if n < 1e-14 {
                    break;
                }
                xn /= n;
                let valn = min_eig_sym(&assemble(&xn)).0;
                if valn > val {
                    x = xn;
                } else {
                    step *= 0.5;
                    if step < 1e-12 {
                        break;
                    }
                }
            }
            if best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
                best = Some((val, assemble(&x)));
            }
        }
        match best {
            Some((v, s)) if v > 1e-10 => Some(s),
            _ => None,
        }
    };

    let Some(q) = candidate else {
        return Ok(None);
    };
    // normalize tr(Q) = d, so Q = I when the identity certifies
    let q = q.scale(d as f64 / q.trace());
    if min_eig_sym(&q).0 <= 0.0 {
        return Ok(None);
    }
    let resid = shifted
        .iter()
        .map(|b| operator_norm(&(&q * b + b.transpose() * &q)))
        .fold(0.0f64, f64::max);
    if resid > tol {
        return Ok(None);
    }
    Ok(Some((c, q)))
}

fn sym_basis(d: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(sym_dim(d));
    for i in 0..d {
        for j in i..d {
            let mut m = Mat::zeros(d, d);
            if i == j {
                m[(i, i)] = 1.0;
            } else {
                let x = 1.0 / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            out.push(m);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn mat(d: usize, rows: &[f64]) -> Mat {
        Mat::from_row_slice(d, d, rows)
    }

    pub fn random_matrix(d: usize, rng: &mut rng::Stream) -> Mat {
        Mat::from_fn(d, d, |_, _| rng::normal(rng))
    }

    pub fn random_skew(d: usize, rng: &mut rng::Stream) -> Mat {
        let g = random_matrix(d, rng);
        (0.5 * (&g - g.transpose())).into_owned()
    }

    /// Random invertible matrix with moderate condition number.
    pub fn random_gl(d: usize, rng: &mut rng::Stream) -> Mat {
        loop {
            let t = random_matrix(d, rng);
            let svd = t.clone().svd(false, false);
            let smin = svd.singular_values[d - 1];
            let smax = svd.singular_values[0];
            if smin > 1e-2 * smax && smin > 1e-3 {
                return t;
            }
        }
    }

    /// The worked two-mode planar example used throughout the tests:
    /// `A_1 = [[0,-1],[1,-1]]`, `A_2 = [[0,1],[-1,-1]]`.
    pub fn planar_pair() -> Vec<Mat> {
        vec![
            mat(2, &[0.0, -1.0, 1.0, -1.0]),
            mat(2, &[0.0, 1.0, -1.0, -1.0]),
        ]
    }
}
