//! Dense and sparse linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }

    /// Applies `f(H)` to `v`, i.e. `V f(Λ) V† v`.
    pub fn apply_fn(&self, v: &CVector, f: impl Fn(f64) -> C64) -> CVector {
        let mut coeffs = self.vectors.ad_mul(v);
        for (c, &e) in coeffs.iter_mut().zip(&self.values) {
            *c *= f(e);
        }
        &self.vectors * coeffs
    }
}

fn sort_eigen(values: Vec<f64>, vectors: CMatrix) -> EigenSystem {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let n = vectors.nrows();
    let mut sorted = CMatrix::zeros(n, order.len());
    for (dst, &src) in order.iter().enumerate() {
        sorted.set_column(dst, &vectors.column(src));
    }
    EigenSystem {
        values: order.iter().map(|&k| values[k]).collect(),
        vectors: sorted,
    }
}

/// Hermitian eigen-decomposition; purely real input takes the faster real path.
pub fn eigh(m: &CMatrix) -> EigenSystem {
    if m.iter().all(|z| z.im == 0.0) {
        let re = m.map(|z| z.re);
        let es = eigh_real(&re);
        let vectors = es.1.map(|x| C64::new(x, 0.0));
        return sort_eigen(es.0, vectors);
    }
    let eig = SymmetricEigen::new(m.clone());
    sort_eigen(eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Real symmetric eigen-decomposition, ascending.
pub fn eigh_real(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vecs = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (order.iter().map(|&k| eig.eigenvalues[k]).collect(), vecs)
}

/// Solves the symmetric system `A x = b` through its eigenbasis, discarding
/// eigenvalues below `rel_cut * max|λ|`. Returns the solution together with the
/// component of `b` lying in the discarded subspace.
pub fn pinv_solve_sym(a: &DMatrix<f64>, b: &DVector<f64>, rel_cut: f64) -> (DVector<f64>, DVector<f64>) {
    let (vals, vecs) = eigh_real(a);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let coeffs = vecs.transpose() * b;
    let mut x = DVector::zeros(b.len());
    let mut ker = DVector::zeros(b.len());
    for k in 0..vals.len() {
        let col = vecs.column(k);
        if scale > 0.0 && vals[k].abs() > rel_cut * scale {
            x += col * (coeffs[k] / vals[k]);
        } else {
            ker += col * coeffs[k];
        }
    }
    (x, ker)
}

pub fn norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn normalize(v: &mut CVector) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.unscale_mut(n);
    }
    n
}

/// `⟨a|b⟩`.
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Rotates the global phase so that the largest-magnitude amplitude is real and positive.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for (k, z) in v.iter().enumerate() {
        // tie-break towards the lowest index so the choice is reproducible
        if z.norm() > best_mag + 1e-12 {
            best_mag = z.norm();
            best = k;
        }
    }
    if best_mag > 0.0 {
        let phase = v[best].conj() / v[best].norm();
        v.scale_mut_c(phase);
    }
}

trait ScaleC {
    fn scale_mut_c(&mut self, c: C64);
}

impl ScaleC for CVector {
    fn scale_mut_c(&mut self, c: C64) {
        for z in self.iter_mut() {
            *z *= c;
        }
    }
}

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    /// Assembles from (row, col, value) triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, cols: keep_cols, vals: keep_vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|k| (k, k, ONE)).collect())
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::from_triplets(nrows, ncols, Vec::new())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).find(|&(cc, _)| cc == c).map(|(_, v)| v).unwrap_or(ZERO)
    }

    pub fn is_real(&self) -> bool {
        self.vals.iter().all(|v| v.im == 0.0)
    }

    pub fn mul_vec(&self, x: &CVector) -> CVector {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension");
        let mut y = CVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    /// `⟨x|A|x⟩` without allocating.
    pub fn quadratic(&self, x: &CVector) -> C64 {
        let mut total = ZERO;
        for r in 0..self.nrows {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            total += x[r].conj() * acc;
        }
        total
    }

    pub fn adjoint(&self) -> Self {
        let t = self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in out.vals.iter_mut() {
            *v *= s;
        }
        out
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<_> = self.triplets().map(|(r, c, v)| (r, c, a * v)).collect();
        t.extend(other.triplets().map(|(r, c, v)| (r, c, b * v)));
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn from_dense(m: &CMatrix, tol: f64) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)].norm() > tol {
                    t.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    /// Largest absolute deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let adj = self.adjoint();
        self.lin_comb(ONE, &adj, -ONE).vals.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Partitions the index set into connected components of the nonzero pattern.
    /// Each block is returned as a sorted index list; blocks are ordered by smallest index.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let n = self.nrows;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (r, c, _) in self.triplets() {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[label[root]].push(i);
        }
        blocks
    }

    /// Dense sub-matrix on an index set.
    pub fn restrict(&self, idx: &[usize]) -> CMatrix {
        let mut pos = std::collections::HashMap::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            pos.insert(i, k);
        }
        let mut m = CMatrix::zeros(idx.len(), idx.len());
        for (k, &i) in idx.iter().enumerate() {
            for (c, v) in self.row(i) {
                if let Some(&kc) = pos.get(&c) {
                    m[(k, kc)] += v;
                }
            }
        }
        m
    }
}

/// Lowest eigenpair of a Hermitian sparse matrix by restarted Lanczos with full
/// reorthogonalisation. Returns the two lowest Ritz values and the ground vector.
pub fn lanczos_ground(h: &SparseMatrix, tol: f64, max_restarts: usize) -> Result<(f64, f64, CVector)> {
    let n = h.nrows();
    let krylov = 80.min(n);
    let mut start = CVector::from_fn(n, |i, _| C64::new(1.0 + ((i * 7919) % 113) as f64 * 1e-3, 0.0));
    normalize(&mut start);
    for _ in 0..max_restarts.max(1) {
        let mut basis: Vec<CVector> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..krylov {
            let mut w = h.mul_vec(&basis[j]);
            let a = inner(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let proj = inner(b, &w);
                    w -= b * proj;
                }
            }
            let bnorm = norm(&w);
            if j + 1 == krylov || bnorm < 1e-13 {
                break;
            }
            beta.push(bnorm);
            basis.push(w / C64::new(bnorm, 0.0));
        }
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            t[(k, k)] = alpha[k];
            if k + 1 < m {
                t[(k, k + 1)] = beta[k];
                t[(k + 1, k)] = beta[k];
            }
        }
        let (vals, vecs) = eigh_real(&t);
        let mut ground = CVector::zeros(n);
        for k in 0..m {
            ground += &basis[k] * C64::new(vecs[(k, 0)], 0.0);
        }
        normalize(&mut ground);
        let resid = h.mul_vec(&ground) - &ground * C64::new(vals[0], 0.0);
        let second = if vals.len() > 1 { vals[1] } else { f64::INFINITY };
        if norm(&resid) < tol || m == n {
            return Ok((vals[0], second, ground));
        }
        start = ground;
    }
    Err(Error::ConvergenceFailure("Lanczos ground state".into()))
}

/// `exp(-i dt H) v` by a Lanczos projection; the subspace grows until the
/// coefficient of the last Krylov vector drops below `tol`.
pub fn krylov_expm(h: &SparseMatrix, v: &CVector, dt: f64, tol: f64) -> CVector {
    let n = v.len();
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return v.clone();
    }
    let max_dim = 60.min(n);
    let mut basis: Vec<CVector> = vec![v / C64::new(v_norm, 0.0)];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let j = basis.len() - 1;
        let mut w = h.mul_vec(&basis[j]);
        alpha.push(inner(&basis[j], &w).re);
        for _ in 0..2 {
            for b in &basis {
                let proj = inner(b, &w);
                w -= b * proj;
            }
        }
        let bnorm = norm(&w);
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            t[(k, k)] = alpha[k];
            if k + 1 < m {
                t[(k, k + 1)] = beta[k];
                t[(k + 1, k)] = beta[k];
            }
        }
        let (vals, vecs) = eigh_real(&t);
        // coefficients of exp(-i dt T) e_1
        let mut coeffs = vec![ZERO; m];
        for k in 0..m {
            let phase = C64::from_polar(vecs[(0, k)], -dt * vals[k]);
            for (r, c) in coeffs.iter_mut().enumerate() {
                *c += phase * vecs[(r, k)];
            }
        }
        let tail = coeffs[m - 1].norm() * bnorm.max(1.0);
        if bnorm < 1e-13 || m == max_dim || tail < tol {
            let mut out = CVector::zeros(n);
            for (b, c) in basis.iter().zip(&coeffs) {
                out += b * (*c * v_norm);
            }
            return out;
        }
        beta.push(bnorm);
        basis.push(w / C64::new(bnorm, 0.0));
    }
}

/// Matrix exponential `exp(-i θ G)` of a Hermitian dense matrix.
pub fn expm_hermitian(g: &CMatrix, theta: f64) -> CMatrix {
    let es = eigh(g);
    let n = g.nrows();
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = C64::from_polar(1.0, -theta * es.values[k]);
    }
    &es.vectors * d * es.vectors.adjoint()
}
