//! Hybridised and monolithic solvers for 2D mixed systems
//!
//! ```text
//! a_u ∫w·u + ∫w·(f u⊥) − b ∫(∇·w) D = r_u
//! c ∫φ ∇·u + a_D ∫φ D               = r_D
//! ```
//!
//! with u in an H(div) space and D in its discontinuous partner. The
//! hybridised solver breaks u, enforces normal continuity with facet
//! multipliers λ and eliminates (u, D) cell by cell.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_cells, assemble_form, tabulate_points, ref_tabulate, Coef, Form, Op, TabOpts};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, dense_solve, SolveInfo, SolverConfig, SparseMatrix};
use crate::mesh::facet_geometry;
use crate::poly::shifted_legendre;
use crate::space::{trace_space, FunctionSpace, TraceSpace};

pub const DENSE_TRACE_CAP: usize = 8000;

/// Coefficients of the mixed system.
#[derive(Clone, Copy)]
pub struct MixedCoeffs<'a> {
    pub mass_u: f64,
    /// Weight of the rotation term ∫w·(f u⊥), already scaled (e.g. by Δt/2).
    pub coriolis: Option<&'a (dyn Fn(&[f64; 3]) -> f64 + Sync)>,
    pub grad: f64,
    pub div: f64,
    pub mass_d: f64,
}

impl<'a> MixedCoeffs<'a> {
    /// The linearised shallow-water Picard system.
    pub fn picard(dt: f64, g: f64, h: f64, coriolis: Option<&'a (dyn Fn(&[f64; 3]) -> f64 + Sync)>) -> Self {
        Self { mass_u: 1.0, coriolis, grad: 0.5 * dt * g, div: 0.5 * dt * h, mass_d: 1.0 }
    }
}

/// Cell-local operator blocks on the broken velocity space.
fn local_blocks(v1b: &FunctionSpace, v2: &FunctionSpace, co: &MixedCoeffs, degree: usize) -> Result<(SparseMatrix, SparseMatrix, SparseMatrix)> {
    let mut a = assemble_form(v1b, v1b, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::Const(co.mass_u) }], Some(degree))?;
    if let Some(f) = co.coriolis {
        let c = coriolis_matrix(v1b, f, degree)?;
        a = a.add(1.0, &c, 1.0);
    }
    let b = assemble_form(v2, v1b, &[Form::Cell { test: Op::Value, trial: Op::D, coef: Coef::One }], Some(degree))?;
    let m2 = assemble_form(v2, v2, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }], Some(degree))?;
    Ok((a, b, m2))
}

/// ∫ w · (f u⊥) dx.
pub fn coriolis_matrix(v1: &FunctionSpace, f: &(dyn Fn(&[f64; 3]) -> f64 + Sync), degree: usize) -> Result<SparseMatrix> {
    assemble_cells(v1, v1, degree, TabOpts::VALUES, TabOpts::VALUES, |_, a, b, m| {
        for q in 0..a.nq {
            let w = a.w[q] * f(&a.x[q]);
            let perps: Vec<Vec<f64>> = (0..b.n).map(|j| b.perp(q, b.v(q, j))).collect();
            for i in 0..a.n {
                let vi = a.v(q, i);
                for (j, pj) in perps.iter().enumerate() {
                    m[(i, j)] += w * vi.iter().zip(pj).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        Ok(())
    })
}

/// Facet coupling rows: for each cell, (trace dof, ∫ μ w_i·n_K over local u DOFs).
fn coupling(v1b: &FunctionSpace, tr: &TraceSpace, degree: usize) -> Result<Vec<Vec<(usize, Vec<f64>)>>> {
    let mesh = &v1b.mesh;
    let n = v1b.local_dim();
    let legendre: Vec<_> = (0..tr.per_facet()).map(shifted_legendre).collect();
    let mut out: Vec<Vec<(usize, Vec<f64>)>> = vec![vec![]; mesh.num_cells()];
    for (f, fc) in mesh.facets.iter().enumerate() {
        let g = facet_geometry(mesh, f, degree)?;
        let sides = [(Some(fc.plus.0), &g.ref_plus, &g.normals_plus), (fc.minus.map(|m| m.0), &g.ref_minus, &g.normals_minus)];
        for (cell, refs, normals) in sides {
            let Some(c) = cell else { continue };
            let rt = ref_tabulate(&v1b.element, refs, TabOpts::VALUES);
            let t = tabulate_points(v1b, c, &rt, refs, &g.weights, false)?;
            for (m, leg) in legendre.iter().enumerate() {
                let mut row = vec![0.0; n];
                for q in 0..t.nq {
                    let mu = leg.eval(&[g.params[q][0], 0.0, 0.0]);
                    for (i, r) in row.iter_mut().enumerate() {
                        *r += t.w[q] * mu * t.v(q, i).iter().zip(&normals[q]).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                out[c].push((tr.facet_dofs(f).start + m, row));
            }
        }
    }
    Ok(out)
}

struct CellFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Coupling rows extended by zeros on the D part.
    rows: Vec<(usize, DVector<f64>)>,
    /// K^{-1} Cᵀ, one column per coupling row.
    kinv_ct: Vec<DVector<f64>>,
}

/// Factorised hybridised operator, reusable across right-hand sides.
pub struct HybridSolver {
    pub v1: FunctionSpace,
    pub v1b: FunctionSpace,
    pub v2: FunctionSpace,
    pub trace: TraceSpace,
    n1: usize,
    n2: usize,
    scale_d: f64,
    cells: Vec<CellFactor>,
    schur: SparseMatrix,
    schur_lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    pub symmetric: bool,
}

/// Result of a hybridised solve.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub lambda: Vec<f64>,
    /// max |Σ_K C_K u_K| over trace DOFs.
    pub jump_residual: f64,
    pub info: SolveInfo,
}

impl HybridSolver {
    pub fn new(v1: &FunctionSpace, v2: &FunctionSpace, co: &MixedCoeffs) -> Result<Self> {
        if !v2.broken && v2.element.continuity != crate::element::Continuity::L2 {
            return Err(Error::Incompatible("hybridisation needs a discontinuous D space".into()));
        }
        let tr = trace_space(v1)?;
        let v1b = v1.break_space()?;
        let degree = crate::assembly::default_degree(&v1.element, &v2.element);
        let (a, b, m2) = local_blocks(&v1b, v2, co, degree)?;
        let cpl = coupling(&v1b, &tr, degree)?;
        let n1 = v1b.local_dim();
        let n2 = v2.local_dim();
        let scale_d = if co.div != 0.0 { -co.grad / co.div } else { 1.0 };
        let nc = v1.mesh.num_cells();
        let cells: Result<Vec<CellFactor>> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let ud = v1b.dofs(c);
                let dd = v2.dofs(c);
                let nl = n1 + n2;
                let mut k = DMatrix::zeros(nl, nl);
                for i in 0..n1 {
                    for j in 0..n1 {
                        k[(i, j)] = a.get(ud[i], ud[j]);
                    }
                    for j in 0..n2 {
                        k[(i, n1 + j)] = -co.grad * b.get(dd[j], ud[i]);
                    }
                }
                for i in 0..n2 {
                    for j in 0..n1 {
                        k[(n1 + i, j)] = scale_d * co.div * b.get(dd[i], ud[j]);
                    }
                    for j in 0..n2 {
                        k[(n1 + i, n1 + j)] = scale_d * co.mass_d * m2.get(dd[i], dd[j]);
                    }
                }
                let lu = k.lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular(format!("cell block {c}")));
                }
                let rows: Vec<(usize, DVector<f64>)> = cpl[c]
                    .iter()
                    .map(|(t, r)| {
                        let mut v = DVector::zeros(nl);
                        v.rows_mut(0, n1).copy_from_slice(r);
                        (*t, v)
                    })
                    .collect();
                let kinv_ct = rows.iter().map(|(_, r)| lu.solve(r).expect("invertible")).collect();
                Ok(CellFactor { lu, rows, kinv_ct })
            })
            .collect();
        let cells = cells?;
        let (mut ri, mut ci, mut vv) = (vec![], vec![], vec![]);
        for cf in &cells {
            for (a_idx, (ta, ra)) in cf.rows.iter().enumerate() {
                let _ = a_idx;
                for (tb, kb) in cf.rows.iter().map(|r| r.0).zip(&cf.kinv_ct) {
                    ri.push(*ta);
                    ci.push(tb);
                    vv.push(ra.dot(kb));
                }
            }
        }
        let schur = SparseMatrix::from_triplets(tr.ndofs, tr.ndofs, &ri, &ci, &vv);
        let symmetric = co.coriolis.is_none();
        let schur_lu = if symmetric {
            None
        } else {
            if tr.ndofs > DENSE_TRACE_CAP {
                return Err(Error::SizeCap { size: tr.ndofs, cap: DENSE_TRACE_CAP });
            }
            Some(schur.to_dense().lu())
        };
        Ok(Self { v1: v1.clone(), v1b, v2: v2.clone(), trace: tr, n1, n2, scale_d, cells, schur, schur_lu, symmetric })
    }

    pub fn schur(&self) -> &SparseMatrix {
        &self.schur
    }

    /// Solve with right-hand sides given as broken u-dual (per cell, local
    /// order) and D-dual vectors.
    pub fn solve(&self, ru_broken: &[f64], rd: &[f64], cfg: &SolverConfig) -> Result<HybridSolution> {
        let (n1, n2) = (self.n1, self.n2);
        let nc = self.cells.len();
        if ru_broken.len() != nc * n1 || rd.len() != self.v2.ndofs {
            return Err(Error::Incompatible("hybrid right-hand side sizes".into()));
        }
        let local_rhs = |c: usize| {
            let mut r = DVector::zeros(n1 + n2);
            r.rows_mut(0, n1).copy_from_slice(&ru_broken[c * n1..(c + 1) * n1]);
            for (i, d) in self.v2.dofs(c).iter().enumerate() {
                r[n1 + i] = self.scale_d * rd[*d];
            }
            r
        };
        let kinv_r: Vec<DVector<f64>> = (0..nc)
            .into_par_iter()
            .map(|c| self.cells[c].lu.solve(&local_rhs(c)).expect("invertible"))
            .collect();
        let mut g = vec![0.0; self.trace.ndofs];
        for (cf, kr) in self.cells.iter().zip(&kinv_r) {
            for (t, r) in &cf.rows {
                g[*t] += r.dot(kr);
            }
        }
        let (lambda, info) = match &self.schur_lu {
            Some(lu) => {
                let x = lu.solve(&DVector::from_vec(g.clone())).ok_or_else(|| Error::Singular("trace system".into()))?;
                (x.as_slice().to_vec(), SolveInfo { iterations: 1, residual: 0.0 })
            }
            None => cg_solve(&self.schur, &g, cfg, None)?,
        };
        let locals: Vec<DVector<f64>> = (0..nc)
            .into_par_iter()
            .map(|c| {
                let cf = &self.cells[c];
                let mut x = kinv_r[c].clone();
                for ((t, _), k) in cf.rows.iter().zip(&cf.kinv_ct) {
                    x -= k * lambda[*t];
                }
                x
            })
            .collect();
        let mut ub = vec![0.0; nc * n1];
        let mut d = vec![0.0; self.v2.ndofs];
        let mut jumps = vec![0.0; self.trace.ndofs];
        for (c, x) in locals.iter().enumerate() {
            ub[c * n1..(c + 1) * n1].copy_from_slice(&x.as_slice()[..n1]);
            for (i, dd) in self.v2.dofs(c).iter().enumerate() {
                d[*dd] = x[n1 + i];
            }
            for (t, r) in &self.cells[c].rows {
                jumps[*t] += r.dot(x);
            }
        }
        let jump_residual = jumps.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(HybridSolution { u: broken_to_conforming(&self.v1, &ub), d, lambda, jump_residual, info })
    }
}

/// Largest facet discrepancy between the multiplier's mean and `grad`
/// times the two-sided average of D at the facet midpoint, relative to the
/// largest such average.
pub fn trace_discrepancy(hs: &HybridSolver, sol: &HybridSolution, grad: f64) -> Result<f64> {
    let mesh = &hs.v2.mesh;
    let pf = hs.trace.per_facet();
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    for (f, facet) in mesh.facets.iter().enumerate() {
        let Some(minus) = facet.minus else { continue };
        let mut avg = 0.0;
        for (c, lf) in [facet.plus, minus] {
            let xi = crate::mesh::facet_ref_point(mesh, c, lf, &[0.5]);
            avg += 0.5 * crate::assembly::eval_at(&hs.v2, &sol.d, c, &xi)?[0];
        }
        worst = worst.max((sol.lambda[f * pf] - grad * avg).abs());
        scale = scale.max((grad * avg).abs());
    }
    Ok(worst / scale.max(1e-300))
}

/// Average of the per-cell values of each shared DOF (with signs).
pub fn broken_to_conforming(v1: &FunctionSpace, ub: &[f64]) -> Vec<f64> {
    let n = v1.local_dim();
    let mut u = vec![0.0; v1.ndofs];
    let mut count = vec![0.0; v1.ndofs];
    for c in 0..v1.mesh.num_cells() {
        for (i, (d, s)) in v1.dofs(c).iter().zip(v1.signs(c)).enumerate() {
            u[*d] += s * ub[c * n + i];
            count[*d] += 1.0;
        }
    }
    u.iter().zip(&count).map(|(x, k)| x / k).collect()
}

/// Sum a broken dual vector into the conforming dual vector.
pub fn broken_dual_to_conforming(v1: &FunctionSpace, rb: &[f64]) -> Vec<f64> {
    let n = v1.local_dim();
    let mut r = vec![0.0; v1.ndofs];
    for c in 0..v1.mesh.num_cells() {
        for (i, (d, s)) in v1.dofs(c).iter().zip(v1.signs(c)).enumerate() {
            r[*d] += s * rb[c * n + i];
        }
    }
    r
}

/// The conforming mixed operator blocks (A, B, M2): A includes Coriolis.
pub fn mixed_blocks(v1: &FunctionSpace, v2: &FunctionSpace, co: &MixedCoeffs) -> Result<(SparseMatrix, SparseMatrix, SparseMatrix)> {
    let degree = crate::assembly::default_degree(&v1.element, &v2.element);
    local_blocks(v1, v2, co, degree)
}

/// Monolithic solve of the same system by eliminating D (requires a_D ≠ 0)
/// and a dense LU (Coriolis) or CG (symmetric) solve for u.
pub fn solve_monolithic(v1: &FunctionSpace, v2: &FunctionSpace, co: &MixedCoeffs, ru: &[f64], rd: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if co.mass_d == 0.0 {
        return Err(Error::InvalidArgument("monolithic elimination needs a nonzero D mass".into()));
    }
    let (a, b, m2) = mixed_blocks(v1, v2, co)?;
    // D = (r_D - c B u) / (a_D M2)  (M2 block diagonal: solve per cell by CG)
    let m2s = m2.scale(co.mass_d);
    let tight = SolverConfig::tight();
    let m2inv_rd = cg_solve(&m2s, rd, &tight, None)?.0;
    let bt = b.transpose();
    // (A + b c Bᵀ M2s^{-1} B) u = r_u + b Bᵀ M2s^{-1} r_D
    let rhs: Vec<f64> = ru.iter().zip(bt.matvec(&m2inv_rd)).map(|(x, y)| x + co.grad * y).collect();
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let bx = b.matvec(x);
        let y = cg_solve(&m2s, &bx, &tight, None)?.0;
        Ok(a.matvec(x).iter().zip(bt.matvec(&y)).map(|(p, q)| p + co.grad * co.div * q).collect())
    };
    let u = if co.coriolis.is_some() {
        let n = v1.ndofs;
        if n > DENSE_TRACE_CAP {
            return Err(Error::SizeCap { size: n, cap: DENSE_TRACE_CAP });
        }
        let mut dense = a.to_dense();
        // columns of Bᵀ M2s^{-1} B
        let m2inv_b = {
            let mut cols = DMatrix::zeros(v2.ndofs, n);
            let bd = b.to_dense();
            for j in 0..n {
                let col: Vec<f64> = bd.column(j).iter().copied().collect();
                let y = cg_solve(&m2s, &col, &tight, None)?.0;
                cols.set_column(j, &DVector::from_vec(y));
            }
            cols
        };
        dense += bt.to_dense() * m2inv_b * (co.grad * co.div);
        dense_solve(&dense, &rhs)?
    } else {
        let op = |x: &[f64]| apply(x).expect("inner mass solve");
        let diag: Vec<f64> = a.diagonal();
        crate::linalg::cg_operator(&op, &|r: &[f64]| r.iter().zip(&diag).map(|(x, d)| x / d).collect(), &rhs, cfg, None)?.0
    };
    let bu = b.matvec(&u);
    let rhs_d: Vec<f64> = rd.iter().zip(&bu).map(|(r, x)| r - co.div * x).collect();
    let d = cg_solve(&m2s, &rhs_d, &tight, None)?.0;
    Ok((u, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_cell_vector;
    use crate::element::{build_reference_element, Family, PolyFamily};
    use crate::mesh::build_periodic_rect;
    use crate::reference::CellShape;
    use std::sync::Arc;

    fn spaces(n: usize, r: usize) -> (FunctionSpace, FunctionSpace) {
        let m = Arc::new(build_periodic_rect(n, n, 1.0, 1.0, CellShape::Triangle).unwrap());
        let e1 = build_reference_element(PolyFamily::new(Family::RT, r), m.shape).unwrap();
        let e2 = build_reference_element(PolyFamily::new(Family::DG, r), m.shape).unwrap();
        (FunctionSpace::new(m.clone(), e1).unwrap(), FunctionSpace::new(m, e2).unwrap())
    }

    fn rhs(v1: &FunctionSpace, v2: &FunctionSpace) -> (Vec<f64>, Vec<f64>) {
        let v1b = v1.break_space().unwrap();
        let pi2 = 2.0 * std::f64::consts::PI;
        let ru = assemble_cell_vector(&v1b, 6, TabOpts::VALUES, |_, t, l| {
            for q in 0..t.nq {
                let x = t.x[q];
                let f = [(pi2 * x[1]).sin(), (pi2 * x[0]).cos()];
                for (i, li) in l.iter_mut().enumerate() {
                    *li += t.w[q] * (t.v(q, i)[0] * f[0] + t.v(q, i)[1] * f[1]);
                }
            }
            Ok(())
        })
        .unwrap();
        let rd = crate::assembly::assemble_rhs(v2, &|x| vec![(pi2 * x[0]).sin() * (pi2 * x[1]).cos()], None).unwrap();
        (ru, rd)
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let (v1, v2) = spaces(3, 0);
        let co = MixedCoeffs::picard(0.1, 9.8, 1.0, None);
        let h = HybridSolver::new(&v1, &v2, &co).unwrap();
        let s = h.solve(&vec![0.0; v1.mesh.num_cells() * 3], &vec![0.0; v2.ndofs], &SolverConfig::default()).unwrap();
        assert!(s.u.iter().chain(&s.d).chain(&s.lambda).all(|v| *v == 0.0));
    }

    #[test]
    fn hybrid_matches_monolithic() {
        let f = |_: &[f64; 3]| 0.05;
        for (r, cor) in [(0, false), (0, true), (1, true)] {
            let (v1, v2) = spaces(4, r);
            let co = MixedCoeffs::picard(0.1, 9.8, 1.0, if cor { Some(&f) } else { None });
            let (rub, rd) = rhs(&v1, &v2);
            let h = HybridSolver::new(&v1, &v2, &co).unwrap();
            let cfg = SolverConfig::tight();
            let s = h.solve(&rub, &rd, &cfg).unwrap();
            assert!(s.jump_residual < 1e-10, "jump {}", s.jump_residual);
            let ru = broken_dual_to_conforming(&v1, &rub);
            let (u, d) = solve_monolithic(&v1, &v2, &co, &ru, &rd, &cfg).unwrap();
            let du = u.iter().zip(&s.u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let dd = d.iter().zip(&s.d).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(du < 1e-10 && dd < 1e-10, "r={r} cor={cor}: {du} {dd}");
        }
    }

    #[test]
    fn multiplier_tracks_scaled_depth() {
        let mut prev = f64::INFINITY;
        for n in [4, 8, 16] {
            let (v1, v2) = spaces(n, 0);
            let co = MixedCoeffs::picard(0.1, 9.8, 1.0, None);
            let (rub, rd) = rhs(&v1, &v2);
            let h = HybridSolver::new(&v1, &v2, &co).unwrap();
            let s = h.solve(&rub, &rd, &SolverConfig::tight()).unwrap();
            let e = trace_discrepancy(&h, &s, co.grad).unwrap();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn symmetric_trace_system_is_spd() {
        let (v1, v2) = spaces(3, 0);
        let co = MixedCoeffs::picard(0.1, 9.8, 1.0, None);
        let h = HybridSolver::new(&v1, &v2, &co).unwrap();
        let s = h.schur().to_dense();
        assert!((&s - s.transpose()).amax() < 1e-12);
        assert!(s.cholesky().is_some());
    }

    #[test]
    fn jump_pairing_annihilates_conforming_fields() {
        let (v1, _) = spaces(2, 0);
        let v1b = v1.break_space().unwrap();
        let tr = trace_space(&v1).unwrap();
        let cpl = coupling(&v1b, &tr, 4).unwrap();
        // dense C: trace x broken
        let n = v1b.local_dim();
        let mut c = DMatrix::zeros(tr.ndofs, v1b.ndofs);
        for (cell, rows) in cpl.iter().enumerate() {
            for (t, r) in rows {
                for i in 0..n {
                    c[(*t, cell * n + i)] += r[i];
                }
            }
        }
        // conforming embedding E: broken = E u
        let mut e = DMatrix::zeros(v1b.ndofs, v1.ndofs);
        for cell in 0..v1.mesh.num_cells() {
            for (i, (d, s)) in v1.dofs(cell).iter().zip(v1.signs(cell)).enumerate() {
                e[(cell * n + i, *d)] = *s;
            }
        }
        assert!((&c * &e).amax() < 1e-13);
        // null space of C has exactly the conforming dimension
        let sv = c.clone().svd(false, false).singular_values;
        let rank = sv.iter().filter(|s| **s > 1e-10).count();
        assert_eq!(v1b.ndofs - rank, v1.ndofs);
    }
}
