//! Sparse matrices, Krylov solvers and dense eigensolvers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: vec![], data: vec![] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            nrows: d.len(),
            ncols: d.len(),
            indptr: (0..=d.len()).collect(),
            indices: (0..d.len()).collect(),
            data: d.to_vec(),
        }
    }

    /// Duplicates are summed in insertion order, so the result is
    /// deterministic for a deterministic triplet stream.
    pub fn from_triplets(nrows: usize, ncols: usize, rows: &[usize], cols: &[usize], vals: &[f64]) -> Self {
        let mut count = vec![0usize; nrows + 1];
        for &r in rows {
            count[r + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut tc = vec![0usize; rows.len()];
        let mut tv = vec![0.0; rows.len()];
        for k in 0..rows.len() {
            let p = next[rows[k]];
            tc[p] = cols[k];
            tv[p] = vals[k];
            next[rows[k]] += 1;
        }
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len());
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            order.clear();
            order.extend(count[r]..count[r + 1]);
            order.sort_by_key(|&p| (tc[p], p));
            let mut last = usize::MAX;
            for &p in &order {
                if tc[p] == last {
                    *data.last_mut().unwrap() += tv[p];
                } else {
                    indices.push(tc[p]);
                    data.push(tv[p]);
                    last = tc[p];
                }
            }
            indptr[r + 1] = indices.len();
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn from_dense(a: &DMatrix<f64>, drop: f64) -> Self {
        let (mut r, mut c, mut v) = (vec![], vec![], vec![]);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)].abs() > drop {
                    r.push(i);
                    c.push(j);
                    v.push(a[(i, j)]);
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &r, &c, &v)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |p| (self.indices[p], self.data[p]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match s.binary_search(&j) {
            Ok(p) => self.data[self.indptr[i] + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        let f = |(i, yi): (usize, &mut f64)| {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[p] * x[self.indices[p]];
            }
            *yi = s;
        };
        if self.nnz() > 200_000 {
            y.par_iter_mut().enumerate().for_each(f);
        } else {
            y.iter_mut().enumerate().for_each(f);
        }
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                y[self.indices[p]] += self.data[p] * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut r = Vec::with_capacity(self.nnz());
        let mut c = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                r.push(self.indices[p]);
                c.push(i);
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &r, &c, &self.data)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut a = self.clone();
        a.data.iter_mut().for_each(|v| *v *= s);
        a
    }

    /// a*self + b*other
    pub fn add(&self, a: f64, other: &SparseMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let (mut r, mut c, mut v) = (vec![], vec![], vec![]);
        for (m, s) in [(self, a), (other, b)] {
            for i in 0..m.nrows {
                for (j, x) in m.row(i) {
                    r.push(i);
                    c.push(j);
                    v.push(s * x);
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &r, &c, &v)
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut cols = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                data.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Self { nrows: self.nrows, ncols: other.ncols, indptr, indices, data }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                a[(i, j)] += v;
            }
        }
        a
    }

    /// max |A - A^T|
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let d = self.add(1.0, &t, -1.0);
        d.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Coordinate text: one `row col value` line per stored entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                s.push_str(&format!("{i} {j} {v:.17e}\n"));
            }
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Diagonal,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
    pub precond: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-14, max_iter: 10_000, precond: Preconditioner::GaussSeidel }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.max_iter >= 1) {
            return Err(Error::InvalidArgument("solver tolerances must be positive, iterations >= 1".into()));
        }
        Ok(())
    }

    pub fn tight() -> Self {
        Self { rtol: 1e-13, atol: 1e-15, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveInfo {
    pub iterations: usize,
    pub residual: f64,
}

/// Null space of a semi-definite operator: x ⟂ `vector` in the plain
/// Euclidean sense after projection.
#[derive(Debug, Clone)]
pub struct NullSpace {
    pub vector: Vec<f64>,
}

impl NullSpace {
    pub fn constants(n: usize) -> Self {
        Self { vector: vec![1.0 / (n as f64).sqrt(); n] }
    }

    /// Normalises `v` in the Euclidean norm.
    pub fn new(v: Vec<f64>) -> Self {
        let n = norm2(&v);
        Self { vector: v.iter().map(|x| x / n).collect() }
    }

    pub fn project(&self, x: &mut [f64]) {
        let a = dot(x, &self.vector);
        axpy(x, -a, &self.vector);
    }
}

fn apply_precond(a: &SparseMatrix, kind: Preconditioner, diag: &[f64], r: &[f64], z: &mut [f64]) {
    match kind {
        Preconditioner::None => z.copy_from_slice(r),
        Preconditioner::Diagonal => {
            for i in 0..r.len() {
                z[i] = r[i] / diag[i];
            }
        }
        Preconditioner::GaussSeidel => {
            // symmetric Gauss-Seidel: (D+L) D^{-1} (D+U) z = r
            let n = r.len();
            for i in 0..n {
                let mut s = r[i];
                for (j, v) in a.row(i) {
                    if j < i {
                        s -= v * z[j];
                    }
                }
                z[i] = s / diag[i];
            }
            for i in 0..n {
                z[i] *= diag[i];
            }
            for i in (0..n).rev() {
                let mut s = z[i];
                for (j, v) in a.row(i) {
                    if j > i {
                        s -= v * z[j];
                    }
                }
                z[i] = s / diag[i];
            }
        }
    }
}

/// Preconditioned conjugate gradients. With a null space, the right-hand
/// side and iterates are projected onto its complement.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], cfg: &SolverConfig, null: Option<&NullSpace>) -> Result<(Vec<f64>, SolveInfo)> {
    cg_monitored(a, b, cfg, null, &mut |_, _| {})
}

/// As [`cg_solve`], calling `monitor(iteration, x)` after every update.
pub fn cg_monitored(
    a: &SparseMatrix,
    b: &[f64],
    cfg: &SolverConfig,
    null: Option<&NullSpace>,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveInfo)> {
    cfg.validate()?;
    let n = b.len();
    if a.nrows != n || a.ncols != n {
        return Err(Error::Incompatible(format!("matrix {}x{} vs rhs {}", a.nrows, a.ncols, n)));
    }
    let mut diag = a.diagonal();
    let precond = if diag.iter().any(|d| *d <= 0.0) { Preconditioner::None } else { cfg.precond };
    diag.iter_mut().for_each(|d| {
        if *d == 0.0 {
            *d = 1.0
        }
    });
    let apply = |x: &[f64]| a.matvec(x);
    let pc = |r: &[f64]| {
        let mut z = vec![0.0; r.len()];
        apply_precond(a, precond, &diag, r, &mut z);
        z
    };
    cg_core(&apply, &pc, b, cfg, null, monitor)
}

/// CG for an operator given as a closure.
pub fn cg_operator(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    cfg: &SolverConfig,
    null: Option<&NullSpace>,
) -> Result<(Vec<f64>, SolveInfo)> {
    cfg.validate()?;
    cg_core(apply, precond, b, cfg, null, &mut |_, _| {})
}

fn cg_core(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    cfg: &SolverConfig,
    null: Option<&NullSpace>,
    monitor: &mut dyn FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveInfo)> {
    let n = b.len();
    let mut b = b.to_vec();
    if let Some(ns) = null {
        ns.project(&mut b);
    }
    let bnorm = norm2(&b);
    let mut x = vec![0.0; n];
    if bnorm <= cfg.atol {
        return Ok((x, SolveInfo { iterations: 0, residual: bnorm }));
    }
    let mut r = b;
    let mut z = precond(&r);
    if let Some(ns) = null {
        ns.project(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let tol = cfg.rtol * bnorm + cfg.atol;
    for it in 1..=cfg.max_iter {
        let mut ap = apply(&p);
        if let Some(ns) = null {
            ns.project(&mut ap);
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!("CG breakdown (p^T A p = {pap:e})")));
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        monitor(it, &x);
        let rn = norm2(&r);
        if rn <= tol {
            if let Some(ns) = null {
                ns.project(&mut x);
            }
            return Ok((x, SolveInfo { iterations: it, residual: rn / bnorm }));
        }
        z = precond(&r);
        if let Some(ns) = null {
            ns.project(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: cfg.max_iter, residual: norm2(&r) / bnorm })
}

/// Dense LU solve, erroring on singular matrices.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.clone().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::Singular("dense LU".into()))
}

/// Solve the saddle system
///
/// ```text
/// [A  Bᵀ] [u]   [f]
/// [B  -C] [p] = [g]
/// ```
///
/// by CG on the Schur complement S = B A⁻¹ Bᵀ + C with inner CG solves for
/// A. `null_p` removes a pressure null space (e.g. constants).
pub fn solve_mixed(
    a: &SparseMatrix,
    b: &SparseMatrix,
    c: Option<&SparseMatrix>,
    f: &[f64],
    g: &[f64],
    cfg: &SolverConfig,
    null_p: Option<&NullSpace>,
) -> Result<(Vec<f64>, Vec<f64>, SolveInfo)> {
    let inner = SolverConfig { rtol: (cfg.rtol * 1e-3).max(1e-15), atol: 1e-300, ..cfg.clone() };
    let bt = b.transpose();
    let ainv = |x: &[f64]| cg_solve(a, x, &inner, None).map(|r| r.0);
    let ainv_f = ainv(f)?;
    let rhs: Vec<f64> = b.matvec(&ainv_f).iter().zip(g).map(|(x, y)| x - y).collect();
    let failure = std::cell::RefCell::new(None);
    let apply = |p: &[f64]| -> Vec<f64> {
        let y = match ainv(&bt.matvec(p)) {
            Ok(y) => y,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                vec![0.0; a.nrows]
            }
        };
        let mut s = b.matvec(&y);
        if let Some(c) = c {
            axpy(&mut s, 1.0, &c.matvec(p));
        }
        s
    };
    // Diagonal of B diag(A)^{-1} Bᵀ + C as preconditioner.
    let ad = a.diagonal();
    let mut sd = vec![0.0; b.nrows];
    for (i, sdi) in sd.iter_mut().enumerate() {
        *sdi = b.row(i).map(|(j, v)| v * v / ad[j]).sum::<f64>();
        if let Some(c) = c {
            *sdi += c.get(i, i);
        }
        if *sdi <= 0.0 {
            *sdi = 1.0;
        }
    }
    let pre = |r: &[f64]| r.iter().zip(&sd).map(|(x, d)| x / d).collect::<Vec<f64>>();
    let (p, info) = cg_operator(&apply, &pre, &rhs, cfg, null_p)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let mut r = f.to_vec();
    axpy(&mut r, -1.0, &bt.matvec(&p));
    let u = ainv(&r)?;
    Ok((u, p, info))
}

pub const DENSE_EIG_CAP: usize = 5000;

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// Columns are M-orthonormal eigenvectors.
    pub vectors: DMatrix<f64>,
}

/// All generalized eigenpairs of A x = λ M x, ascending, via Cholesky
/// reduction of M and a dense symmetric eigensolver. Returns the first `count`.
pub fn symmetric_eigs_dense(a: &DMatrix<f64>, m: &DMatrix<f64>, count: usize) -> Result<EigenPairs> {
    let n = a.nrows();
    if n > DENSE_EIG_CAP {
        return Err(Error::SizeCap { size: n, cap: DENSE_EIG_CAP });
    }
    if m.nrows() != n || a.ncols() != n || m.ncols() != n {
        return Err(Error::Incompatible("eigenproblem dimensions".into()));
    }
    let chol = m.clone().cholesky().ok_or_else(|| Error::NonPositive("mass matrix is not SPD".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular("Cholesky factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let count = count.min(n);
    let values: Vec<f64> = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, count);
    let lt = linv.transpose();
    for (k, &i) in order[..count].iter().enumerate() {
        let y = eig.eigenvectors.column(i);
        vectors.set_column(k, &(&lt * y));
    }
    Ok(EigenPairs { values, vectors })
}

/// Sparse front end of [`symmetric_eigs_dense`].
pub fn symmetric_eigs(a: &SparseMatrix, m: &SparseMatrix, count: usize) -> Result<EigenPairs> {
    if a.nrows > DENSE_EIG_CAP {
        return Err(Error::SizeCap { size: a.nrows, cap: DENSE_EIG_CAP });
    }
    symmetric_eigs_dense(&a.to_dense(), &m.to_dense(), count)
}

/// Smallest eigenpairs of a symmetric pencil by block inverse iteration with
/// Rayleigh-Ritz. `solve` must apply (A + σM)^{-1}; `a` and `m` apply the
/// operators. Returns `count` eigenvalues of A x = λ M x.
pub fn subspace_iteration(
    n: usize,
    count: usize,
    block: usize,
    a: &dyn Fn(&[f64]) -> Vec<f64>,
    m: &dyn Fn(&[f64]) -> Vec<f64>,
    solve: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    seed: u64,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPairs> {
    use rand::{Rng, SeedableRng};
    let block = block.max(count).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.gen::<f64>() - 0.5);
    let mut prev: Vec<f64> = vec![f64::INFINITY; count];
    for _ in 0..max_iter {
        // y = (A + σM)^{-1} M x
        let mut y = DMatrix::zeros(n, block);
        for j in 0..block {
            let mx = m(x.column(j).as_slice());
            let s = solve(&mx)?;
            y.set_column(j, &DVector::from_vec(s));
        }
        // Rayleigh-Ritz on span(y)
        let mut ay = DMatrix::zeros(n, block);
        let mut my = DMatrix::zeros(n, block);
        for j in 0..block {
            ay.set_column(j, &DVector::from_vec(a(y.column(j).as_slice())));
            my.set_column(j, &DVector::from_vec(m(y.column(j).as_slice())));
        }
        let ar = y.transpose() * &ay;
        let mr = y.transpose() * &my;
        let ar = (&ar + ar.transpose()) * 0.5;
        let mr = (&mr + mr.transpose()) * 0.5;
        let pairs = symmetric_eigs_dense(&ar, &mr, block)?;
        x = &y * &pairs.vectors;
        let vals: Vec<f64> = pairs.values[..count].to_vec();
        let change = vals
            .iter()
            .zip(&prev)
            .map(|(a, b)| ((a - b) / a.abs().max(1.0)).abs())
            .fold(0.0, f64::max);
        prev = vals;
        if change < tol {
            let mut out = DMatrix::zeros(n, count);
            for k in 0..count {
                out.set_column(k, &x.column(k));
            }
            return Ok(EigenPairs { values: prev, vectors: out });
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_1d(n: usize, periodic: bool) -> SparseMatrix {
        let (mut r, mut c, mut v) = (vec![], vec![], vec![]);
        for i in 0..n {
            r.push(i);
            c.push(i);
            v.push(2.0);
            for j in [i as isize - 1, i as isize + 1] {
                let j = if periodic { (j + n as isize) as usize % n } else if j < 0 || j >= n as isize { continue } else { j as usize };
                r.push(i);
                c.push(j);
                v.push(-1.0);
            }
        }
        SparseMatrix::from_triplets(n, n, &r, &c, &v)
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = SparseMatrix::identity(5);
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let (x, info) = cg_solve(&a, &b, &SolverConfig::default(), None).unwrap();
        assert_eq!(x, b);
        assert_eq!(info.iterations, 1);
    }

    #[test]
    fn diagonal_two_by_two() {
        let a = SparseMatrix::from_diagonal(&[2.0, 3.0]);
        let cfg = SolverConfig { precond: Preconditioner::None, ..Default::default() };
        let (x, _) = cg_solve(&a, &[2.0, 3.0], &cfg, None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_laplacian_returns_mean_free() {
        let a = laplacian_1d(20, true);
        let mut b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let mean = b.iter().sum::<f64>() / 20.0;
        b.iter_mut().for_each(|v| *v -= mean);
        let ns = NullSpace::constants(20);
        let (x, _) = cg_solve(&a, &b, &SolverConfig::default(), Some(&ns)).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-10);
        let r = a.matvec(&x);
        for i in 0..20 {
            assert!((r[i] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = laplacian_1d(50, false);
        let b = vec![1.0; 50];
        let cfg = SolverConfig { max_iter: 2, precond: Preconditioner::None, ..Default::default() };
        assert!(matches!(cg_solve(&a, &b, &cfg, None), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn eigs_of_identity_pencil() {
        let m = laplacian_1d(6, false).add(1.0, &SparseMatrix::identity(6), 1.0);
        let p = symmetric_eigs(&m, &m, 6).unwrap();
        assert!(p.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn eigs_of_periodic_chain() {
        let n = 16;
        let a = laplacian_1d(n, true);
        let p = symmetric_eigs(&a, &SparseMatrix::identity(n), 3).unwrap();
        assert!(p.values[0].abs() < 1e-12);
        let l1 = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / n as f64).cos();
        assert!((p.values[1] - l1).abs() < 1e-12 && (p.values[2] - l1).abs() < 1e-12);
    }

    #[test]
    fn size_cap_enforced() {
        let a = SparseMatrix::identity(DENSE_EIG_CAP + 1);
        assert!(matches!(symmetric_eigs(&a, &a, 1), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let n = 40;
        let a = laplacian_1d(n, false);
        let i = SparseMatrix::identity(n);
        let shifted = a.add(1.0, &i, 1.0);
        let cfg = SolverConfig::tight();
        let solve = |b: &[f64]| cg_solve(&shifted, b, &cfg, None).map(|r| r.0);
        let p = subspace_iteration(n, 4, 8, &|x| a.matvec(x), &|x| x.to_vec(), &solve, 3, 1e-12, 500).unwrap();
        let d = symmetric_eigs(&a, &i, 4).unwrap();
        for k in 0..4 {
            assert!((p.values[k] - d.values[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = SparseMatrix::from_triplets(2, 2, &[0, 0, 1, 0], &[1, 1, 0, 0], &[1.0, 2.0, 5.0, 4.0]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 5.0);
        assert_eq!(a.transpose().get(1, 0), 3.0);
        let p = a.matmul(&SparseMatrix::identity(2));
        assert_eq!(p, a);
    }

    proptest! {
        #[test]
        fn cg_error_a_norm_is_monotone(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let a = laplacian_1d(n, false);
            let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let exact = dense_solve(&a.to_dense(), &b).unwrap();
            let mut errs = Vec::new();
            let cfg = SolverConfig { precond: Preconditioner::GaussSeidel, ..Default::default() };
            cg_monitored(&a, &b, &cfg, None, &mut |_, x| {
                let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
                errs.push(dot(&e, &a.matvec(&e)));
            }).unwrap();
            for w in errs.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-20);
            }
        }
    }
}
