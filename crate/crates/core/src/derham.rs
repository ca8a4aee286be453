//! Discrete de Rham structure in 2D: derivative maps, dual operators,
//! Helmholtz decomposition, harmonic fields, mixed Poisson and inf-sup.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_form, constant_one, remove_mean, CellTabulator, Coef, Form, Op, TabOpts};
use crate::element::{build_reference_element, Family, PolyFamily};
use crate::error::{Error, Result};
use crate::hybrid::{HybridSolver, MixedCoeffs};
use crate::linalg::{cg_solve, solve_mixed, subspace_iteration, symmetric_eigs_dense, NullSpace, SolverConfig, SparseMatrix, DENSE_EIG_CAP};
use crate::mesh::Mesh;
use crate::space::FunctionSpace;

/// Element triple (V0, V1, V2) of a 2D complex named by its velocity space.
pub fn complex_families(velocity: &str) -> Result<[PolyFamily; 3]> {
    let v = PolyFamily::parse(velocity)?;
    let r = v.r;
    let (f0, f2) = match v.family {
        Family::RT => (PolyFamily::new(Family::CG, r + 1), PolyFamily::new(Family::DG, r)),
        Family::BDM if r >= 1 => (PolyFamily::new(Family::CG, r + 1), PolyFamily::new(Family::DG, r - 1)),
        Family::BDFM if r == 1 => (PolyFamily::new(Family::CGB, 2), PolyFamily::new(Family::DG, 1)),
        _ => return Err(Error::UnsupportedElement(format!("no 2D complex with velocity space {velocity}"))),
    };
    Ok([f0, v, f2])
}

/// Spaces, mass matrices and derivative operators of a 2D complex.
pub struct Complex2D {
    pub v0: Arc<FunctionSpace>,
    pub v1: Arc<FunctionSpace>,
    pub v2: Arc<FunctionSpace>,
    pub m0: SparseMatrix,
    pub m1: SparseMatrix,
    pub m2: SparseMatrix,
    /// ∫ φ ∇·w  (rows V2, columns V1).
    pub b: SparseMatrix,
    /// ∫ w · ∇⊥γ  (rows V1, columns V0).
    pub k: SparseMatrix,
    /// Coefficient map of ∇⊥ : V0 → V1.
    pub perp_grad: SparseMatrix,
    /// Coefficient map of ∇· : V1 → V2.
    pub div: SparseMatrix,
    /// Coefficients of the constant function 1 in V0 and V2.
    pub one0: Vec<f64>,
    pub one2: Vec<f64>,
}

impl Complex2D {
    pub fn new(mesh: Arc<Mesh>, velocity: &str) -> Result<Self> {
        let fams = complex_families(velocity)?;
        let mk = |f: PolyFamily| -> Result<Arc<FunctionSpace>> {
            Ok(Arc::new(FunctionSpace::new(mesh.clone(), build_reference_element(f, mesh.shape)?)?))
        };
        Self::from_spaces(mk(fams[0])?, mk(fams[1])?, mk(fams[2])?)
    }

    pub fn from_spaces(v0: Arc<FunctionSpace>, v1: Arc<FunctionSpace>, v2: Arc<FunctionSpace>) -> Result<Self> {
        if v1.mesh.tdim() != 2 {
            return Err(Error::Incompatible("2D complex on a non-2D mesh".into()));
        }
        let mass = |s: &FunctionSpace| assemble_form(s, s, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }], None);
        let m0 = mass(&v0)?;
        let m1 = mass(&v1)?;
        let m2 = mass(&v2)?;
        let b = assemble_form(&v2, &v1, &[Form::Cell { test: Op::Value, trial: Op::D, coef: Coef::One }], None)?;
        let k = assemble_form(&v1, &v0, &[Form::Cell { test: Op::Value, trial: Op::D, coef: Coef::One }], None)?;
        let perp_grad = derivative_map(&v0, &v1)?;
        let div = derivative_map(&v1, &v2)?;
        let one0 = constant_one(&v0)?;
        let one2 = constant_one(&v2)?;
        Ok(Self { v0, v1, v2, m0, m1, m2, b, k, perp_grad, div, one0, one2 })
    }

    /// ∇̃ρ: M1 x = −Bᵀρ.
    pub fn tilde_grad(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.b.matvec_t(rho).iter().map(|v| -v).collect();
        Ok(cg_solve(&self.m1, &rhs, &SolverConfig::tight(), None)?.0)
    }

    /// ∇̃⊥·v: M0 y = −Kᵀv.
    pub fn tilde_curl(&self, v: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.k.matvec_t(v).iter().map(|x| -x).collect();
        Ok(cg_solve(&self.m0, &rhs, &SolverConfig::tight(), None)?.0)
    }

    /// CG stiffness ∫∇⊥γ·∇⊥γ'.
    pub fn stiffness(&self) -> Result<SparseMatrix> {
        assemble_form(&self.v0, &self.v0, &[Form::Cell { test: Op::D, trial: Op::D, coef: Coef::One }], None)
    }

    pub fn l2_inner(&self, m: &SparseMatrix, a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::dot(a, &m.matvec(b))
    }
}

/// Exact coefficient map of the complex derivative from `from` into `to`,
/// by per-cell projection (the image lies in `to`, so the projection is
/// exact and every cell produces the same value for shared DOFs).
pub fn derivative_map(from: &FunctionSpace, to: &FunctionSpace) -> Result<SparseMatrix> {
    let degree = crate::assembly::default_degree(&from.element, &to.element);
    let tf = CellTabulator::new(from, degree, TabOpts::DERIV);
    let tt = CellTabulator::new(to, degree, TabOpts::VALUES);
    let nc = from.mesh.num_cells();
    let locals: Result<Vec<DMatrix<f64>>> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let a = tf.cell(c)?;
            let t = tt.cell(c)?;
            let mut m = DMatrix::zeros(t.n, t.n);
            let mut r = DMatrix::zeros(t.n, a.n);
            for q in 0..t.nq {
                for i in 0..t.n {
                    let vi = t.v(q, i);
                    for j in 0..t.n {
                        m[(i, j)] += t.w[q] * vi.iter().zip(t.v(q, j)).map(|(x, y)| x * y).sum::<f64>();
                    }
                    for j in 0..a.n {
                        r[(i, j)] += t.w[q] * vi.iter().zip(a.d(q, j)).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            let chol = m.cholesky().ok_or_else(|| Error::Singular(format!("local mass on cell {c}")))?;
            Ok(chol.solve(&r))
        })
        .collect();
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut scale: f64 = 0.0;
    for (c, x) in locals?.into_iter().enumerate() {
        for (i, gi) in to.dofs(c).iter().enumerate() {
            for (j, gj) in from.dofs(c).iter().enumerate() {
                // tabulated bases already carry the global signs
                let v = x[(i, j)];
                scale = scale.max(v.abs());
                entries.insert((*gi, *gj), v);
            }
        }
    }
    let cut = 1e-13 * scale;
    let (mut r, mut cc, mut v) = (vec![], vec![], vec![]);
    for ((i, j), x) in entries {
        if x.abs() > cut {
            r.push(i);
            cc.push(j);
            v.push(x);
        }
    }
    Ok(SparseMatrix::from_triplets(to.ndofs, from.ndofs, &r, &cc, &v))
}

/// Orthogonal parts of a V1 field.
#[derive(Debug, Clone)]
pub struct HelmholtzParts {
    /// Stream function in V0 (mean-free).
    pub psi: Vec<f64>,
    /// Potential in V2 (mean-free).
    pub phi: Vec<f64>,
    /// ∇⊥ψ in V1.
    pub rotational: Vec<f64>,
    /// ∇̃φ in V1.
    pub divergent: Vec<f64>,
    pub harmonic: Vec<f64>,
}

pub fn helmholtz_decompose(cx: &Complex2D, u: &[f64], cfg: &SolverConfig) -> Result<HelmholtzParts> {
    let s0 = cx.stiffness()?;
    let rhs = cx.k.matvec_t(u);
    let null0 = NullSpace::new(cx.one0.clone());
    let mut psi = cg_solve(&s0, &rhs, cfg, Some(&null0))?.0;
    remove_mean(&cx.v0, &mut psi)?;
    let rotational = cx.perp_grad.matvec(&psi);
    // [M1 Bᵀ; B 0][s; φ] = [0; B u]
    let bu = cx.b.matvec(u);
    let null2 = NullSpace::new(cx.one2.clone());
    let (divergent, mut phi, _) = solve_mixed(&cx.m1, &cx.b, None, &vec![0.0; u.len()], &bu, cfg, Some(&null2))?;
    remove_mean(&cx.v2, &mut phi)?;
    let harmonic: Vec<f64> = u.iter().zip(&rotational).zip(&divergent).map(|((a, b), c)| a - b - c).collect();
    Ok(HelmholtzParts { psi, phi, rotational, divergent, harmonic })
}

fn dense_inverse(m: &SparseMatrix) -> Result<DMatrix<f64>> {
    let n = m.nrows;
    m.to_dense()
        .cholesky()
        .map(|c| c.solve(&DMatrix::identity(n, n)))
        .ok_or_else(|| Error::NonPositive("mass matrix is not SPD".into()))
}

/// M1-orthonormal basis of {∇·k = 0} ∩ {∇̃⊥·k = 0}.
pub fn harmonic_basis(cx: &Complex2D) -> Result<Vec<Vec<f64>>> {
    let n = cx.v1.ndofs;
    if n > DENSE_EIG_CAP {
        return Err(Error::SizeCap { size: n, cap: DENSE_EIG_CAP });
    }
    let b = cx.b.to_dense();
    let k = cx.k.to_dense();
    let a = b.transpose() * dense_inverse(&cx.m2)? * &b + &k * dense_inverse(&cx.m0)? * k.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let pairs = symmetric_eigs_dense(&a, &cx.m1.to_dense(), n)?;
    let lmax = pairs.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nzero = pairs.values.iter().take_while(|v| v.abs() < 1e-8 * lmax).count();
    if let Some(next) = pairs.values.get(nzero) {
        if *next < 1e-6 * lmax {
            return Err(Error::GapAmbiguity(format!("first nonzero eigenvalue {next:e} vs max {lmax:e}")));
        }
    }
    Ok((0..nzero).map(|j| pairs.vectors.column(j).iter().copied().collect()).collect())
}

/// Solve −Δp = f in mixed form: ∫w·u + ∫∇·w p = 0, ∫φ∇·u = −∫φf, with p
/// mean-free. `f` holds V2 coefficients.
pub fn solve_mixed_poisson(cx: &Complex2D, f: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let total = crate::linalg::dot(&cx.m2.matvec(f), &cx.one2);
    let scale = crate::linalg::dot(&cx.m2.matvec(f).iter().map(|v| v.abs()).collect::<Vec<_>>(), &cx.one2.iter().map(|v| v.abs()).collect::<Vec<_>>());
    if total.abs() > 1e-10 * scale.max(1e-300) {
        return Err(Error::Incompatible(format!("right-hand side has nonzero mean ({total:e})")));
    }
    let g: Vec<f64> = cx.m2.matvec(f).iter().map(|v| -v).collect();
    let null2 = NullSpace::new(cx.one2.clone());
    let (u, mut p, _) = solve_mixed(&cx.m1, &cx.b, None, &vec![0.0; cx.v1.ndofs], &g, cfg, Some(&null2))?;
    remove_mean(&cx.v2, &mut p)?;
    Ok((u, p))
}

/// Smallest eigenvalues of the mixed Laplacian B M1⁻¹ Bᵀ p = λ M2 p.
/// Small problems are solved densely; larger ones by subspace iteration
/// with a hybridised shifted solve.
pub fn laplacian_eigs(cx: &Complex2D, count: usize, seed: u64) -> Result<Vec<f64>> {
    let n2 = cx.v2.ndofs;
    let tight = SolverConfig::tight();
    if n2 <= 600 {
        let mut l = DMatrix::zeros(n2, n2);
        let bt = cx.b.transpose();
        for j in 0..n2 {
            let mut e = vec![0.0; n2];
            e[j] = 1.0;
            let y = cg_solve(&cx.m1, &bt.matvec(&e), &tight, None)?.0;
            l.set_column(j, &DVector::from_vec(cx.b.matvec(&y)));
        }
        let l = (&l + l.transpose()) * 0.5;
        return Ok(symmetric_eigs_dense(&l, &cx.m2.to_dense(), count)?.values);
    }
    let sigma = 1.0;
    let co = MixedCoeffs { mass_u: 1.0, coriolis: None, grad: -1.0, div: 1.0, mass_d: -sigma };
    let hs = HybridSolver::new(&cx.v1, &cx.v2, &co)?;
    let zero_u = vec![0.0; cx.v1.mesh.num_cells() * cx.v1.local_dim()];
    let solve = |y: &[f64]| -> Result<Vec<f64>> {
        let rd: Vec<f64> = y.iter().map(|v| -v).collect();
        Ok(hs.solve(&zero_u, &rd, &tight)?.d)
    };
    let bt = cx.b.transpose();
    let apply_l = |p: &[f64]| -> Vec<f64> {
        let y = cg_solve(&cx.m1, &bt.matvec(p), &tight, None).expect("mass solve").0;
        cx.b.matvec(&y)
    };
    let apply_m = |p: &[f64]| cx.m2.matvec(p);
    let block = count + 8;
    let pairs = subspace_iteration(n2, count, block, &apply_l, &apply_m, &solve, seed, 1e-11, 500)?;
    Ok(pairs.values)
}

/// Discrete inf-sup constant of (V1, V2) with the H(div) norm on V1,
/// restricted to mean-free pressures.
pub fn estimate_infsup(v1: &FunctionSpace, v2: &FunctionSpace) -> Result<f64> {
    Ok(infsup_spectrum(v1, v2)?[0].max(0.0).sqrt())
}

/// Inf-sup analysis with exact spurious pressure modes separated out.
#[derive(Debug, Clone, Copy)]
pub struct InfSup {
    /// Constant over all mean-free pressures.
    pub beta: f64,
    /// Number of mean-free pressure modes with zero constant.
    pub spurious: usize,
    /// Constant over the complement of the spurious modes.
    pub beta_filtered: f64,
}

pub fn infsup_analysis(v1: &FunctionSpace, v2: &FunctionSpace) -> Result<InfSup> {
    let spec = infsup_spectrum(v1, v2)?;
    let spurious = spec.iter().take_while(|v| **v < 1e-10).count();
    let filtered = spec.get(spurious).copied().unwrap_or(0.0);
    Ok(InfSup { beta: spec[0].max(0.0).sqrt(), spurious, beta_filtered: filtered.max(0.0).sqrt() })
}

/// Ascending eigenvalues of B K⁻¹ Bᵀ p = μ M2 p on mean-free pressures,
/// K the H(div) Gram matrix.
pub fn infsup_spectrum(v1: &FunctionSpace, v2: &FunctionSpace) -> Result<Vec<f64>> {
    let n1 = v1.ndofs;
    let n2 = v2.ndofs;
    if n1 > DENSE_EIG_CAP || n2 > DENSE_EIG_CAP {
        return Err(Error::SizeCap { size: n1.max(n2), cap: DENSE_EIG_CAP });
    }
    let degree = crate::assembly::default_degree(&v1.element, &v2.element);
    let m1 = assemble_form(v1, v1, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }], Some(degree))?;
    let dd = assemble_form(v1, v1, &[Form::Cell { test: Op::Div, trial: Op::Div, coef: Coef::One }], Some(degree))?;
    let b = assemble_form(v2, v1, &[Form::Cell { test: Op::Value, trial: Op::Div, coef: Coef::One }], Some(degree))?.to_dense();
    let m2 = assemble_form(v2, v2, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }], Some(degree))?.to_dense();
    let k = m1.add(1.0, &dd, 1.0).to_dense();
    let chol = k.cholesky().ok_or_else(|| Error::NonPositive("H(div) Gram matrix".into()))?;
    let s = &b * chol.solve(&b.transpose());
    // Lift the constant mode (an exact null vector) above the spectrum,
    // which is bounded by 1 in this norm.
    let one = DVector::from_vec(constant_one(v2)?);
    let m1v = &m2 * &one;
    let denom = m1v.dot(&one);
    let s = &s + (&m1v * m1v.transpose()) * (10.0 / denom);
    let s = (&s + s.transpose()) * 0.5;
    let mut vals = symmetric_eigs_dense(&s, &m2, n2)?.values;
    vals.pop();
    Ok(vals)
}

/// Largest pointwise-free deviation of a vector field from its mean, in L2.
pub fn constant_deviation(v1: &FunctionSpace, u: &[f64]) -> Result<f64> {
    let gdim = v1.mesh.gdim;
    let vol = v1.mesh.total_volume();
    let mut mean = vec![0.0; gdim];
    let tt = CellTabulator::new(v1, 2 * v1.element.degree + 2, TabOpts::VALUES);
    for c in 0..v1.mesh.num_cells() {
        let t = tt.cell(c)?;
        let lc = v1.local_coeffs(c, u);
        for q in 0..t.nq {
            for (m, v) in mean.iter_mut().zip(t.eval_v(q, &lc)) {
                *m += t.w[q] * v / vol;
            }
        }
    }
    crate::assembly::l2_error(v1, u, &|_| mean.clone(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::project;
    use crate::mesh::build_periodic_rect;
    use crate::reference::CellShape;
    use std::f64::consts::PI;

    fn torus(n: usize, shape: CellShape) -> Arc<Mesh> {
        Arc::new(build_periodic_rect(n, n, 1.0, 1.0, shape).unwrap())
    }

    #[test]
    fn complex_identity_at_coefficient_level() {
        for v in ["RT0", "RT1", "BDM1", "BDFM1"] {
            let cx = Complex2D::new(torus(3, CellShape::Triangle), v).unwrap();
            let dd = cx.div.matmul(&cx.perp_grad);
            assert!(dd.max_abs() < 1e-10, "{v}: {}", dd.max_abs());
            // B = M2 · div
            let b2 = cx.m2.matmul(&cx.div);
            assert!(b2.add(1.0, &cx.b, -1.0).max_abs() < 1e-11, "{v}");
        }
    }

    #[test]
    fn tilde_grad_of_constant_vanishes_and_is_adjoint() {
        use rand::{Rng, SeedableRng};
        let cx = Complex2D::new(torus(4, CellShape::Triangle), "RT0").unwrap();
        let g = cx.tilde_grad(&cx.one2).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let rho: Vec<f64> = (0..cx.v2.ndofs).map(|_| rng.gen::<f64>() - 0.5).collect();
            let w: Vec<f64> = (0..cx.v1.ndofs).map(|_| rng.gen::<f64>() - 0.5).collect();
            let lhs = cx.l2_inner(&cx.m1, &cx.tilde_grad(&rho).unwrap(), &w) + crate::linalg::dot(&rho, &cx.b.matvec(&w));
            assert!(lhs.abs() < 1e-10);
        }
    }

    #[test]
    fn tilde_curl_of_perp_grad_is_laplacian() {
        let cx = Complex2D::new(torus(4, CellShape::Triangle), "RT0").unwrap();
        let psi: Vec<f64> = (0..cx.v0.ndofs).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let y = cx.tilde_curl(&cx.perp_grad.matvec(&psi)).unwrap();
        // M0 y = −S ψ
        let lhs = cx.m0.matvec(&y);
        let rhs = cx.stiffness().unwrap().matvec(&psi);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn helmholtz_parts_are_orthogonal_and_complete() {
        let cx = Complex2D::new(torus(4, CellShape::Triangle), "RT1").unwrap();
        let u = project(&cx.v1, &|x| vec![(2.0 * PI * x[1]).sin() + 0.3, (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin() - 0.2], None).unwrap();
        let cfg = SolverConfig::tight();
        let h = helmholtz_decompose(&cx, &u, &cfg).unwrap();
        let ip = |a: &[f64], b: &[f64]| cx.l2_inner(&cx.m1, a, b);
        let nu = ip(&u, &u).sqrt();
        assert!(ip(&h.rotational, &h.divergent).abs() < 1e-10 * nu * nu);
        assert!(ip(&h.rotational, &h.harmonic).abs() < 1e-10 * nu * nu);
        assert!(ip(&h.divergent, &h.harmonic).abs() < 1e-10 * nu * nu);
        assert!(cx.b.matvec(&h.harmonic).iter().all(|v| v.abs() < 1e-10 * nu));
        assert!(cx.tilde_curl(&h.harmonic).unwrap().iter().all(|v| v.abs() < 1e-9 * nu));
        // the harmonic part of this field is the constant (0.3, -0.2)
        let k = project(&cx.v1, &|_| vec![0.3, -0.2], None).unwrap();
        let diff: Vec<f64> = h.harmonic.iter().zip(&k).map(|(a, b)| a - b).collect();
        assert!(ip(&diff, &diff).sqrt() < 1e-9);
        // idempotence on a returned part
        let h2 = helmholtz_decompose(&cx, &h.rotational, &cfg).unwrap();
        let diff: Vec<f64> = h2.rotational.iter().zip(&h.rotational).map(|(a, b)| a - b).collect();
        assert!(ip(&diff, &diff).sqrt() < 1e-9 * nu);
        assert!(ip(&h2.divergent, &h2.divergent).sqrt() < 1e-9 * nu);
    }

    #[test]
    fn harmonic_basis_is_the_constants_on_the_torus() {
        for shape in [CellShape::Triangle, CellShape::Quad] {
            let cx = Complex2D::new(torus(4, shape), "RT0").unwrap();
            let h = harmonic_basis(&cx).unwrap();
            assert_eq!(h.len(), 2);
            for k in &h {
                let dev = constant_deviation(&cx.v1, k).unwrap();
                assert!(dev < 1e-9, "{shape:?}: {dev}");
                assert!(cx.b.matvec(k).iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn mixed_poisson_matches_cosine_solution() {
        let mut prev = f64::INFINITY;
        for n in [4, 8] {
            let cx = Complex2D::new(torus(n, CellShape::Triangle), "RT0").unwrap();
            let f = project(&cx.v2, &|x| vec![(2.0 * PI * x[0]).cos()], None).unwrap();
            let (u, p) = solve_mixed_poisson(&cx, &f, &SolverConfig::tight()).unwrap();
            // ∇·u = −Π₂ f exactly
            let du = cx.div.matvec(&u);
            assert!(du.iter().zip(&f).all(|(a, b)| (a + b).abs() < 1e-8));
            let e = crate::assembly::l2_error(&cx.v2, &p, &|x| vec![(2.0 * PI * x[0]).cos() / (4.0 * PI * PI)], None).unwrap();
            assert!(e < prev / 1.7, "{e} vs {prev}");
            prev = e;
        }
        let cx = Complex2D::new(torus(3, CellShape::Triangle), "RT0").unwrap();
        let (u, p) = solve_mixed_poisson(&cx, &vec![0.0; cx.v2.ndofs], &SolverConfig::default()).unwrap();
        assert!(u.iter().chain(&p).all(|v| *v == 0.0));
    }

    #[test]
    fn subspace_and_dense_laplacian_eigs_agree() {
        let cx = Complex2D::new(torus(4, CellShape::Triangle), "RT0").unwrap();
        let dense = laplacian_eigs(&cx, 6, 1).unwrap();
        assert!(dense[0].abs() < 1e-9);
        // force the iterative path on the same problem
        let co = MixedCoeffs { mass_u: 1.0, coriolis: None, grad: -1.0, div: 1.0, mass_d: -1.0 };
        let hs = HybridSolver::new(&cx.v1, &cx.v2, &co).unwrap();
        let zero_u = vec![0.0; cx.v1.mesh.num_cells() * 3];
        let tight = SolverConfig::tight();
        let solve = |y: &[f64]| -> Result<Vec<f64>> { Ok(hs.solve(&zero_u, &y.iter().map(|v| -v).collect::<Vec<_>>(), &tight)?.d) };
        let bt = cx.b.transpose();
        let al = |p: &[f64]| cx.b.matvec(&cg_solve(&cx.m1, &bt.matvec(p), &tight, None).unwrap().0);
        let am = |p: &[f64]| cx.m2.matvec(p);
        let it = subspace_iteration(cx.v2.ndofs, 6, 14, &al, &am, &solve, 2, 1e-12, 500).unwrap();
        for (a, b) in dense.iter().zip(&it.values) {
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn infsup_positive_for_rt0() {
        let m = torus(4, CellShape::Triangle);
        let cx = Complex2D::new(m, "RT0").unwrap();
        let beta = estimate_infsup(&cx.v1, &cx.v2).unwrap();
        assert!(beta > 0.1 && beta <= 1.0 + 1e-12, "{beta}");
    }
}
