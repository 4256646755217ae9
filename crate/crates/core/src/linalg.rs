//! Structured linear-algebra kernels used by the filters.
//!
//! * [`qr_stack`] returns the upper-triangular square root of a sum of Gram
//!   matrices `Σ_k B_kᵀ B_k` by QR-factorising the row-stacked blocks.
//! * [`lowrank_project`] / [`lowrank_project_inflated`] return the best rank-`d`
//!   factor `J` (`JᵀJ ≈ Σ_k A_kᵀ A_k (+ a I)`) from a thin SVD of the stacked
//!   blocks, never forming the `D×D` sum when the stack is short.
//! * [`tri_solve_gram`] solves `(UᵀU) X = B` with two triangular solves.
//!
//! All factors are canonicalised: QR factors have a nonnegative diagonal and
//! every low-rank row has a nonnegative leading entry.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};

pub type Mat = DMatrix<f64>;

/// Upper-triangular square-root factor `U` of a PSD matrix `UᵀU`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpperTri(Mat);

impl UpperTri {
    /// Wraps a square upper-triangular matrix. Rows with a negative diagonal
    /// entry are negated, which leaves `UᵀU` unchanged.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid(format!(
                "upper-triangular factor must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                if m[(i, j)] != 0.0 {
                    return Err(invalid(format!(
                        "entry ({i},{j}) below the diagonal is nonzero"
                    )));
                }
            }
        }
        let mut u = UpperTri(m);
        u.canonicalize();
        Ok(u)
    }

    pub fn zeros(n: usize) -> Self {
        UpperTri(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        UpperTri(Mat::identity(n, n))
    }

    /// `scale · I`, the factor of `scale² · I`. Negative scales are folded into
    /// the sign convention.
    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        UpperTri(Mat::identity(n, n) * scale.abs())
    }

    /// Upper Cholesky factor of a symmetric PSD matrix. Pivots that vanish (up
    /// to round-off) produce zero rows, so singular covariances such as `R = 0`
    /// are accepted.
    pub fn cholesky_psd(cov: &Mat) -> Result<Self> {
        if !cov.is_square() {
            return Err(invalid("covariance must be square"));
        }
        let n = cov.nrows();
        let scale = (0..n).map(|i| cov[(i, i)].abs()).fold(0.0, f64::max);
        let tol = scale * 1e-13 * n.max(1) as f64;
        let mut u = Mat::zeros(n, n);
        for i in 0..n {
            let mut d = cov[(i, i)];
            for k in 0..i {
                d -= u[(k, i)] * u[(k, i)];
            }
            if d < -tol.max(1e-300) * 10.0 {
                return Err(invalid(format!(
                    "covariance is not positive semidefinite (pivot {i} = {d:e})"
                )));
            }
            if d <= tol {
                continue;
            }
            let piv = d.sqrt();
            u[(i, i)] = piv;
            for j in (i + 1)..n {
                let mut s = cov[(i, j)];
                for k in 0..i {
                    s -= u[(k, i)] * u[(k, j)];
                }
                u[(i, j)] = s / piv;
            }
        }
        Ok(UpperTri(u))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    /// `UᵀU`.
    pub fn gram(&self) -> Mat {
        self.0.tr_mul(&self.0)
    }

    fn canonicalize(&mut self) {
        let n = self.0.nrows();
        for i in 0..n {
            if self.0[(i, i)] < 0.0 {
                for j in i..n {
                    self.0[(i, j)] = -self.0[(i, j)];
                }
            }
        }
    }
}

/// Low-rank square-root factor `C` (`d×D`) of the PSD matrix `CᵀC`.
///
/// Factors produced by the projections have mutually orthogonal rows and
/// carry their squared row norms, so later projections can read `C Cᵀ` off
/// them. Equality compares the matrices only.
#[derive(Clone, Debug)]
pub struct LowRankFactor {
    m: Mat,
    row_norms_sq: Option<Vec<f64>>,
}

impl PartialEq for LowRankFactor {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl LowRankFactor {
    pub fn new(m: Mat) -> Self {
        LowRankFactor {
            m,
            row_norms_sq: None,
        }
    }

    fn orthogonal(m: Mat, row_norms_sq: Vec<f64>) -> Self {
        debug_assert_eq!(m.nrows(), row_norms_sq.len());
        LowRankFactor {
            m,
            row_norms_sq: Some(row_norms_sq),
        }
    }

    /// `scale` times the first `d` rows of the `D×D` identity.
    pub fn truncated_identity(d: usize, ambient: usize, scale: f64) -> Self {
        let mut m = Mat::zeros(d, ambient);
        let mut norms = vec![0.0; d];
        for i in 0..d.min(ambient) {
            m[(i, i)] = scale.abs();
            norms[i] = scale * scale;
        }
        Self::orthogonal(m, norms)
    }

    pub fn zeros(d: usize, ambient: usize) -> Self {
        Self::orthogonal(Mat::zeros(d, ambient), vec![0.0; d])
    }

    /// Whether the rows are known to be mutually orthogonal.
    pub fn has_orthogonal_rows(&self) -> bool {
        self.row_norms_sq.is_some()
    }

    /// Squared row norms, when the rows are known to be mutually orthogonal.
    pub fn orthogonal_row_norms_sq(&self) -> Option<&[f64]> {
        self.row_norms_sq.as_deref()
    }

    pub fn rank(&self) -> usize {
        self.m.nrows()
    }

    pub fn ambient_dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.m
    }

    pub fn into_inner(self) -> Mat {
        self.m
    }

    /// `CᵀC`. Dense `D×D`; meant for tests and diagnostics.
    pub fn gram(&self) -> Mat {
        self.m.tr_mul(&self.m)
    }
}

fn check_blocks(blocks: &[&Mat]) -> Result<(usize, usize)> {
    let first = blocks
        .first()
        .ok_or_else(|| invalid("at least one block is required"))?;
    let cols = first.ncols();
    let mut rows = 0;
    for (k, b) in blocks.iter().enumerate() {
        if b.ncols() != cols {
            return Err(invalid(format!(
                "block {k} has {} columns, expected {cols}",
                b.ncols()
            )));
        }
        rows += b.nrows();
    }
    Ok((rows, cols))
}

fn stack_rows(blocks: &[&Mat], rows: usize, cols: usize) -> Mat {
    let mut out = Mat::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

/// Stacks the blocks transposed: column `i` of the result is row `i` of the
/// row-stacked matrix.
/// `c ← op(a) · op(b) + beta · c`, where `op` optionally transposes.
/// Transposes are expressed through strides, so no copies are made.
pub(crate) fn gemm_into(a: &Mat, ta: bool, b: &Mat, tb: bool, beta: f64, c: &mut Mat) {
    let (m, k) = if ta {
        (a.ncols(), a.nrows())
    } else {
        a.shape()
    };
    let (kb, n) = if tb {
        (b.ncols(), b.nrows())
    } else {
        b.shape()
    };
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(c.shape(), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        *c *= beta;
        return;
    }
    // column-major: element (i, j) sits at i + j·nrows
    let (ars, acs) = if ta {
        (a.nrows() as isize, 1)
    } else {
        (1, a.nrows() as isize)
    };
    let (brs, bcs) = if tb {
        (b.nrows() as isize, 1)
    } else {
        (1, b.nrows() as isize)
    };
    // SAFETY: the shapes were checked above, so every index the kernel forms
    // from (m, k, n) and these strides lies inside the three buffers, and `c`
    // does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            ars,
            acs,
            b.as_ptr(),
            brs,
            bcs,
            beta,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

pub(crate) fn matmul(a: &Mat, ta: bool, b: &Mat, tb: bool) -> Mat {
    let m = if ta { a.ncols() } else { a.nrows() };
    let n = if tb { b.nrows() } else { b.ncols() };
    let mut c = Mat::zeros(m, n);
    gemm_into(a, ta, b, tb, 0.0, &mut c);
    c
}

/// Upper-triangular `R` (`D×D`, nonnegative diagonal) with
/// `RᵀR = Σ_k B_kᵀ B_k`, from a Householder QR of the row-stacked blocks.
///
/// Blocks may have any number of rows; only the column counts must agree.
pub fn qr_stack(blocks: &[&Mat]) -> Result<UpperTri> {
    let (rows, cols) = check_blocks(blocks)?;
    if rows == 0 {
        return Err(invalid("stacked matrix has no rows"));
    }
    let mut a = stack_rows(blocks, rows, cols);
    householder_in_place(&mut a);
    let k = rows.min(cols);
    let mut r = Mat::zeros(cols, cols);
    for j in 0..cols {
        for i in 0..=j.min(k.saturating_sub(1)) {
            if i < k {
                r[(i, j)] = a[(i, j)];
            }
        }
    }
    let mut u = UpperTri(r);
    u.canonicalize();
    Ok(u)
}

/// Householder triangularisation; on return the upper trapezoid of `a` holds R.
fn householder_in_place(a: &mut Mat) {
    let (m, n) = a.shape();
    let mut v = vec![0.0; m];
    for k in 0..m.min(n) {
        let col = a.column(k);
        let norm = col.rows_range(k..).norm();
        if norm == 0.0 {
            continue;
        }
        let x0 = col[k];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let len = m - k;
        v[..len].copy_from_slice(&col.as_slice()[k..]);
        v[0] -= alpha;
        let vnorm2: f64 = v[..len].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        a[(k, k)] = alpha;
        for i in (k + 1)..m {
            a[(i, k)] = 0.0;
        }
        for j in (k + 1)..n {
            let cj = &mut a.column_mut(j);
            let cs = &mut cj.as_mut_slice()[k..];
            let dot: f64 = cs.iter().zip(&v[..len]).map(|(c, w)| c * w).sum();
            let f = beta * dot;
            for (c, w) in cs.iter_mut().zip(&v[..len]) {
                *c -= f * w;
            }
        }
    }
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

/// Applies `[c s; -s c]` to rows `p`, `q` of `m` over columns `from..`.
#[inline]
fn rotate_rows(m: &mut Mat, p: usize, q: usize, c: f64, s: f64, from: usize) {
    for j in from..m.ncols() {
        let x = m[(p, j)];
        let y = m[(q, j)];
        m[(p, j)] = c * x + s * y;
        m[(q, j)] = -s * x + c * y;
    }
}

/// Triangular factor of `[U + W Z; E]` in `O(k n² + p n²)` with Givens
/// rotations, where `U` is `n×n` upper triangular, `W` is `n×k`, `Z` is
/// `k×n` and `E` is `p×n`.
///
/// Returns the same factor as `qr_stack(&[&(U + W Z), &E])`.
pub fn qr_update_lowrank(u: &UpperTri, w: &Mat, z: &Mat, extra: &Mat) -> Result<UpperTri> {
    let n = u.dim();
    let k = w.ncols();
    if w.nrows() != n || z.nrows() != k || z.ncols() != n || extra.ncols() != n {
        return Err(invalid(format!(
            "qr_update_lowrank shape mismatch: U {n}x{n}, W {}x{}, Z {}x{}, E {}x{}",
            w.nrows(),
            w.ncols(),
            z.nrows(),
            z.ncols(),
            extra.nrows(),
            extra.ncols()
        )));
    }
    if n == 0 {
        return Ok(UpperTri::zeros(0));
    }
    let mut r = u.as_matrix().clone();
    // Qᵀ W, rotated alongside R.
    let mut wr = w.clone();
    for t in 0..k {
        // Zero column t of wr from the bottom; R becomes upper Hessenberg.
        for i in (1..n).rev() {
            let (c, s) = givens(wr[(i - 1, t)], wr[(i, t)]);
            if s == 0.0 {
                continue;
            }
            rotate_rows(&mut r, i - 1, i, c, s, i - 1);
            rotate_rows(&mut wr, i - 1, i, c, s, t);
        }
        let lead = wr[(0, t)];
        for j in 0..n {
            r[(0, j)] += lead * z[(t, j)];
        }
        // Restore triangularity.
        for i in 0..(n - 1) {
            let (c, s) = givens(r[(i, i)], r[(i + 1, i)]);
            if s == 0.0 {
                continue;
            }
            rotate_rows(&mut r, i, i + 1, c, s, i);
            r[(i + 1, i)] = 0.0;
            if t + 1 < k {
                rotate_rows(&mut wr, i, i + 1, c, s, t + 1);
            }
        }
    }
    // Absorb the extra rows one at a time.
    let mut row = vec![0.0; n];
    for e in 0..extra.nrows() {
        for j in 0..n {
            row[j] = extra[(e, j)];
        }
        for i in 0..n {
            if row[i] == 0.0 {
                continue;
            }
            let (c, s) = givens(r[(i, i)], row[i]);
            for j in i..n {
                let x = r[(i, j)];
                let y = row[j];
                r[(i, j)] = c * x + s * y;
                row[j] = -s * x + c * y;
            }
            row[i] = 0.0;
        }
    }
    let mut out = UpperTri(r);
    out.canonicalize();
    Ok(out)
}

/// Best rank-`d` factor of `Σ_k A_kᵀ A_k`.
pub fn lowrank_project(blocks: &[&Mat], d: usize) -> Result<LowRankFactor> {
    lowrank_project_inflated(blocks, d, 0.0)
}

/// Best rank-`d` factor of `Σ_k A_kᵀ A_k + a·I`: the top-`d` right singular
/// directions of the stacked blocks with singular values `sqrt(σ² + a)`.
///
/// When fewer than `d` singular values are nonzero and `a > 0`, the missing
/// directions are completed with the canonical basis vectors orthogonalised
/// against the found ones (for a zero stack: `sqrt(a)` times the first `d`
/// basis vectors).
pub fn lowrank_project_inflated(blocks: &[&Mat], d: usize, a: f64) -> Result<LowRankFactor> {
    let (rows, cols) = check_blocks(blocks)?;
    if d == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    if d > cols {
        return Err(invalid(format!(
            "rank {d} exceeds ambient dimension {cols}"
        )));
    }
    if !(a >= 0.0) || !a.is_finite() {
        return Err(invalid(format!(
            "inflation must be finite and nonnegative, got {a}"
        )));
    }

    let n = stack_rows(blocks, rows, cols);
    let mut out = Mat::zeros(d, cols);
    let mut found = 0usize;
    let mut norms_sq = Vec::with_capacity(d);

    if rows > 0 && rows < cols {
        // Thin route: eigen-decomposition of the small Gram matrix N Nᵀ.
        let gram = matmul(&n, false, &n, true);
        let (evals, evecs) = symmetric_eigen(&gram);
        let tol = negligible_eigenvalue(&evals, rows.max(cols));
        let take = d.min(rows);
        let mut scaled = Mat::zeros(rows, take);
        for (i, ev) in evals.iter().take(take).enumerate() {
            let s2 = ev.max(0.0);
            if s2 <= tol {
                break;
            }
            let factor = (s2 + a).sqrt() / s2.sqrt();
            scaled.set_column(i, &(evecs.column(i) * factor));
            norms_sq.push(s2 + a);
            found += 1;
        }
        if found > 0 {
            let mut comb = scaled.columns(0, found).transpose();
            let norms: Vec<f64> = evals[..found]
                .iter()
                .map(|s2| (s2.max(0.0) + a).sqrt())
                .collect();
            orient_rows(&mut comb, &[&n], &norms);
            if found == d {
                gemm_into(&comb, false, &n, false, 0.0, &mut out);
            } else {
                out.rows_mut(0, found)
                    .copy_from(&matmul(&comb, false, &n, false));
            }
        }
    } else if rows > 0 {
        // Wide stack: the D×D Gram matrix is no larger than the stack itself.
        let gram = matmul(&n, true, &n, false);
        let (evals, evecs) = symmetric_eigen(&gram);
        let tol = negligible_eigenvalue(&evals, rows.max(cols));
        for i in 0..d {
            let s2 = evals[i].max(0.0);
            if s2 <= tol {
                break;
            }
            let s = (s2 + a).sqrt();
            for j in 0..cols {
                out[(i, j)] = s * evecs[(j, i)];
            }
            norms_sq.push(s2 + a);
            found += 1;
        }
    }

    if rows >= cols {
        canonicalize_rows(&mut out, 0);
    }
    if found < d && a > 0.0 {
        complete_directions(&mut out, found, a.sqrt());
        canonicalize_rows(&mut out, found);
    }
    norms_sq.resize(d, a);
    Ok(LowRankFactor::orthogonal(out, norms_sq))
}

/// Best rank-`d` factor of `NᵀN + a·I` for `N = coeff · B`, where `B` stacks
/// the `basis` blocks row-wise. Equal to
/// `lowrank_project_inflated(&[&(coeff · B)], d, a)`, but `N` is never
/// formed: only the small Gram matrix `B Bᵀ` and the final combination of
/// basis rows touch the wide dimension.
pub fn lowrank_project_spanned(
    coeff: &Mat,
    basis: &[&Mat],
    d: usize,
    a: f64,
) -> Result<LowRankFactor> {
    lowrank_project_spanned_hinted(coeff, basis, &vec![None; basis.len()], d, a)
}

/// [`lowrank_project_spanned`] where `row_norms_sq[k]`, when given, holds the
/// squared row norms of a basis block with mutually orthogonal rows, whose
/// Gram block is then diagonal.
pub(crate) fn lowrank_project_spanned_hinted(
    coeff: &Mat,
    basis: &[&Mat],
    row_norms_sq: &[Option<&[f64]>],
    d: usize,
    a: f64,
) -> Result<LowRankFactor> {
    let (brows, cols) = check_blocks(basis)?;
    if coeff.ncols() != brows {
        return Err(invalid(format!(
            "coefficient matrix has {} columns, basis has {brows} rows",
            coeff.ncols()
        )));
    }
    if d == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    if d > cols {
        return Err(invalid(format!(
            "rank {d} exceeds ambient dimension {cols}"
        )));
    }
    if !(a >= 0.0) || !a.is_finite() {
        return Err(invalid(format!(
            "inflation must be finite and nonnegative, got {a}"
        )));
    }
    let rows = coeff.nrows();
    if rows >= cols || brows >= cols {
        let b = stack_rows(basis, brows, cols);
        return lowrank_project_inflated(&[&(coeff * b)], d, a);
    }

    // B Bᵀ blockwise
    let offsets: Vec<usize> = basis
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.nrows();
            Some(o)
        })
        .collect();
    let mut bb = Mat::zeros(brows, brows);
    for (i, bi) in basis.iter().enumerate() {
        for (j, bj) in basis.iter().enumerate().skip(i) {
            if bi.nrows() == 0 || bj.nrows() == 0 {
                continue;
            }
            if i == j {
                if let Some(norms) = row_norms_sq[i] {
                    for (k, n2) in norms.iter().enumerate() {
                        bb[(offsets[i] + k, offsets[i] + k)] = *n2;
                    }
                    continue;
                }
            }
            let g = matmul(bi, false, bj, true);
            bb.view_mut((offsets[i], offsets[j]), g.shape())
                .copy_from(&g);
            if i != j {
                bb.view_mut((offsets[j], offsets[i]), (g.ncols(), g.nrows()))
                    .copy_from(&g.transpose());
            }
        }
    }
    let gram = coeff * bb * coeff.transpose();
    let (evals, evecs) = symmetric_eigen(&gram);
    let tol = negligible_eigenvalue(&evals, rows.max(cols));
    let take = d.min(rows);
    let mut found = 0usize;
    let mut scaled = Mat::zeros(rows, take);
    let mut norms_sq = Vec::with_capacity(d);
    for (i, ev) in evals.iter().take(take).enumerate() {
        let s2 = ev.max(0.0);
        if s2 <= tol {
            break;
        }
        let factor = (s2 + a).sqrt() / s2.sqrt();
        scaled.set_column(i, &(evecs.column(i) * factor));
        norms_sq.push(s2 + a);
        found += 1;
    }
    // rows of the factor as combinations of basis rows, padded with zero
    // rows up to `d`
    let mut comb = Mat::zeros(d, brows);
    if found > 0 {
        let mut c = scaled.columns(0, found).transpose() * coeff;
        let norms: Vec<f64> = norms_sq.iter().map(|n2| n2.sqrt()).collect();
        orient_rows(&mut c, basis, &norms);
        comb.rows_mut(0, found).copy_from(&c);
    }
    // every entry of `out` is written by the first product
    let mut out = Mat::from_vec(d, cols, vec![0.0; d * cols]);
    let mut beta = 0.0;
    for (k, b) in basis.iter().enumerate() {
        if b.nrows() == 0 {
            continue;
        }
        let ck = comb.columns(offsets[k], b.nrows()).into_owned();
        gemm_into(&ck, false, b, false, beta, &mut out);
        beta = 1.0;
    }
    if found < d && a > 0.0 {
        complete_directions(&mut out, found, a.sqrt());
        canonicalize_rows(&mut out, found);
    }
    norms_sq.resize(d, a);
    Ok(LowRankFactor::orthogonal(out, norms_sq))
}

/// Flips rows of `comb` so that each row of `comb · B` has a nonnegative
/// leading entry, reading only as many columns of `B` as needed. `norms`
/// are the row norms of `comb · B`.
fn orient_rows(comb: &mut Mat, basis: &[&Mat], norms: &[f64]) {
    let r = comb.nrows();
    let cols = basis[0].ncols();
    let mut done = vec![false; r];
    let mut pending = r;
    let mut col: Vec<f64> = Vec::new();
    for j in 0..cols {
        col.clear();
        for b in basis {
            col.extend(b.column(j).iter());
        }
        for i in 0..r {
            if done[i] {
                continue;
            }
            let v: f64 = comb.row(i).iter().zip(&col).map(|(c, x)| c * x).sum();
            if v.abs() > LEAD_TOL * norms[i] {
                if v < 0.0 {
                    comb.row_mut(i).neg_mut();
                }
                done[i] = true;
                pending -= 1;
            }
        }
        if pending == 0 {
            break;
        }
    }
}

fn negligible_eigenvalue(evals: &[f64], n: usize) -> f64 {
    let top = evals.first().copied().unwrap_or(0.0).max(0.0);
    top * f64::EPSILON * 64.0 * n as f64
}

/// Fills rows `found..` of `out` with `scale` times unit vectors orthogonal to
/// the directions already present.
fn complete_directions(out: &mut Mat, found: usize, scale: f64) {
    let (d, cols) = out.shape();
    let mut basis: Vec<Vec<f64>> = (0..found)
        .map(|i| {
            let row: Vec<f64> = out.row(i).iter().copied().collect();
            let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(|x| x / nrm).collect()
        })
        .collect();
    let mut next = found;
    for e in 0..cols {
        if next == d {
            break;
        }
        let mut v = vec![0.0; cols];
        v[e] = 1.0;
        // Two passes of Gram-Schmidt.
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm < 1e-8 {
            continue;
        }
        for x in &mut v {
            *x /= nrm;
        }
        for j in 0..cols {
            out[(next, j)] = scale * v[j];
        }
        basis.push(v);
        next += 1;
    }
}

/// Makes the leading (first non-negligible) entry of each row nonnegative.
/// Relative size, against the row norm, below which an entry does not count
/// as the leading entry of a factor row.
const LEAD_TOL: f64 = 1e-8;

/// Makes the leading entry of rows `start..` nonnegative.
fn canonicalize_rows(m: &mut Mat, start: usize) {
    for i in start..m.nrows() {
        let norm = m.row(i).norm();
        if norm == 0.0 {
            continue;
        }
        let lead = m
            .row(i)
            .iter()
            .copied()
            .find(|x| x.abs() > norm * LEAD_TOL)
            .unwrap_or(0.0);
        if lead < 0.0 {
            m.row_mut(i).neg_mut();
        }
    }
}

/// Solves `(UᵀU) X = B` for `X` via `Uᵀ Y = B` then `U X = Y`.
pub fn tri_solve_gram(s_half: &UpperTri, rhs: &Mat) -> Result<Mat> {
    let u = s_half.as_matrix();
    let m = u.nrows();
    if rhs.nrows() != m {
        return Err(invalid(format!(
            "right-hand side has {} rows, factor is {m}x{m}",
            rhs.nrows()
        )));
    }
    let max_diag = (0..m).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..m {
        let p = u[(i, i)].abs();
        if p == 0.0 || p <= max_diag * f64::EPSILON * m as f64 {
            return Err(Error::Singular(format!("zero pivot at diagonal entry {i}")));
        }
    }
    let mut x = rhs.clone();
    for mut col in x.column_iter_mut() {
        // forward: Uᵀ y = b
        for i in 0..m {
            let mut s = col[i];
            for k in 0..i {
                s -= u[(k, i)] * col[k];
            }
            col[i] = s / u[(i, i)];
        }
        // backward: U x = y
        for i in (0..m).rev() {
            let mut s = col[i];
            for k in (i + 1)..m {
                s -= u[(i, k)] * col[k];
            }
            col[i] = s / u[(i, i)];
        }
    }
    Ok(x)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.nrows();
    let mut m = a.clone();
    // symmetrise round-off
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let mut v = Mat::identity(n, n);
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>();
    let target = total * f64::EPSILON * f64::EPSILON;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for j in 0..n {
            for i in 0..j {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= target || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let evals = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &v.column(src));
    }
    (evals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, data)
    }

    #[test]
    fn qr_stack_three_four_five() {
        let r = qr_stack(&[&m(1, 1, &[3.0]), &m(1, 1, &[4.0])]).unwrap();
        assert!((r.as_matrix()[(0, 0)] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn qr_stack_identity() {
        let i2 = Mat::identity(2, 2);
        let r = qr_stack(&[&i2]).unwrap();
        assert!((r.as_matrix() - &i2).norm() < 1e-15);
    }

    #[test]
    fn qr_stack_rejects_mismatched_columns() {
        let err = qr_stack(&[&Mat::zeros(2, 3), &Mat::zeros(1, 2)]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(qr_stack(&[]).is_err());
    }

    #[test]
    fn qr_stack_short_stack_pads_with_zero_rows() {
        let b = m(1, 3, &[1.0, 2.0, 2.0]);
        let r = qr_stack(&[&b]).unwrap();
        let g = r.gram();
        assert!((g - b.tr_mul(&b)).norm() < 1e-14);
        assert_eq!(r.as_matrix().row(2).norm(), 0.0);
    }

    #[test]
    fn lowrank_dominant_pair() {
        let j = lowrank_project(&[&m(2, 2, &[2.0, 0.0, 0.0, 1.0])], 1).unwrap();
        assert!((j.as_matrix() - m(1, 2, &[2.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn lowrank_full_rank_identity() {
        let j = lowrank_project(&[&Mat::identity(3, 3)], 3).unwrap();
        assert!((j.gram() - Mat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn lowrank_inflated_scalar() {
        let j = lowrank_project_inflated(&[&m(1, 2, &[1.0, 0.0])], 1, 3.0).unwrap();
        assert!((j.as_matrix() - m(1, 2, &[2.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn lowrank_zero_stack_uses_canonical_basis() {
        let q: f64 = 0.25;
        let j = lowrank_project_inflated(&[&Mat::zeros(1, 4)], 2, q).unwrap();
        let mut expected = Mat::zeros(2, 4);
        expected[(0, 0)] = q.sqrt();
        expected[(1, 1)] = q.sqrt();
        assert_eq!(j.as_matrix(), &expected);
        // without inflation the factor is zero
        let j0 = lowrank_project(&[&Mat::zeros(1, 4)], 2).unwrap();
        assert_eq!(j0.as_matrix().norm(), 0.0);
    }

    #[test]
    fn lowrank_rank_deficient_completion_is_orthogonal() {
        // rank-1 stack, rank-3 request with inflation
        let b = m(1, 4, &[1.0, 1.0, 0.0, 0.0]);
        let j = lowrank_project_inflated(&[&b], 3, 0.5).unwrap();
        let jm = j.as_matrix();
        let g = jm * jm.transpose();
        assert!((g[(0, 0)] - 2.5).abs() < 1e-12);
        for i in 1..3 {
            assert!((g[(i, i)] - 0.5).abs() < 1e-12);
        }
        for i in 0..3 {
            for k in 0..3 {
                if i != k {
                    assert!(g[(i, k)].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lowrank_rejects_bad_rank() {
        assert!(lowrank_project(&[&Mat::identity(2, 2)], 3).is_err());
        assert!(lowrank_project(&[&Mat::identity(2, 2)], 0).is_err());
        assert!(lowrank_project_inflated(&[&Mat::identity(2, 2)], 1, -1.0).is_err());
    }

    #[test]
    fn tri_solve_scalar_and_identity() {
        let s = UpperTri::new(m(1, 1, &[2.0])).unwrap();
        let x = tri_solve_gram(&s, &m(1, 1, &[8.0])).unwrap();
        assert!((x[(0, 0)] - 2.0).abs() < 1e-15);
        let rhs = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = tri_solve_gram(&UpperTri::identity(2), &rhs).unwrap();
        assert_eq!(x, rhs);
    }

    #[test]
    fn tri_solve_zero_pivot_is_singular() {
        let s = UpperTri::new(m(2, 2, &[1.0, 1.0, 0.0, 0.0])).unwrap();
        let err = tri_solve_gram(&s, &Mat::zeros(2, 1)).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn upper_tri_rejects_lower_entries_and_fixes_signs() {
        assert!(UpperTri::new(m(2, 2, &[1.0, 0.0, 1.0, 1.0])).is_err());
        let u = UpperTri::new(m(2, 2, &[-1.0, 2.0, 0.0, 3.0])).unwrap();
        assert_eq!(u.as_matrix(), &m(2, 2, &[1.0, -2.0, 0.0, 3.0]));
    }

    #[test]
    fn cholesky_psd_accepts_zero() {
        let u = UpperTri::cholesky_psd(&Mat::zeros(3, 3)).unwrap();
        assert_eq!(u.as_matrix().norm(), 0.0);
        let cov = m(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let u = UpperTri::cholesky_psd(&cov).unwrap();
        assert!((u.gram() - cov).norm() < 1e-14);
        assert!(UpperTri::cholesky_psd(&m(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn qr_update_matches_qr_stack() {
        let u = UpperTri::new(m(3, 3, &[2.0, 0.5, -1.0, 0.0, 1.5, 0.3, 0.0, 0.0, 0.7])).unwrap();
        let w = m(3, 2, &[0.3, -0.2, 0.1, 0.4, -0.5, 0.2]);
        let z = m(2, 3, &[1.0, 0.5, -0.3, 0.2, -0.7, 0.9]);
        let e = m(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.0, 0.6]);
        let fast = qr_update_lowrank(&u, &w, &z, &e).unwrap();
        let dense = u.as_matrix() + &w * &z;
        let slow = qr_stack(&[&dense, &e]).unwrap();
        assert!((fast.as_matrix() - slow.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn jacobi_diagonal_and_rotation() {
        let a = m(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (e, v) = symmetric_eigen(&a);
        assert!((e[0] - 3.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
        let recon = &v * Mat::from_diagonal(&nalgebra::DVector::from_vec(e)) * v.transpose();
        assert!((recon - a).norm() < 1e-13);
    }
}
