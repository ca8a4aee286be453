//! Transport operators: upwind DG for the depth and the vector-invariant
//! form of velocity advection with a cellwise-integrated curl.

use nalgebra::{DMatrix, DVector};

use super::SweModel;
use crate::assembly::{
    assemble_cells, assemble_cell_vector, assemble_facet_vector, assemble_form, facet_tabulate, upwind_weight, CellTabulator, Form, TabOpts,
};
use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::space::FunctionSpace;

/// Exact inverse of a block-diagonal (cellwise) mass matrix.
pub struct CellwiseInverse {
    blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
    n: usize,
}

impl CellwiseInverse {
    pub fn new(space: &FunctionSpace, m: &SparseMatrix) -> Result<Self> {
        let mut seen = vec![false; space.ndofs];
        let mut blocks = Vec::with_capacity(space.mesh.num_cells());
        for c in 0..space.mesh.num_cells() {
            let d = space.dofs(c).to_vec();
            if d.iter().any(|i| std::mem::replace(&mut seen[*i], true)) {
                return Err(Error::Incompatible(format!("{} is not cellwise", space.element.name)));
            }
            let k = DMatrix::from_fn(d.len(), d.len(), |i, j| m.get(d[i], d[j]));
            let inv = k.try_inverse().ok_or_else(|| Error::Singular(format!("mass block of cell {c}")))?;
            blocks.push((d, inv));
        }
        Ok(Self { blocks, n: space.ndofs })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (d, inv) in &self.blocks {
            let x = inv * DVector::from_iterator(d.len(), d.iter().map(|i| r[*i]));
            for (i, v) in d.iter().zip(x.iter()) {
                out[*i] = *v;
            }
        }
        out
    }
}

/// A with M2 D_t = A D for D_t + ∇·(uD) = 0:
/// ∫∇_hφ·u D − ∫_Γ ⟦uφ⟧ D̃, D̃ upwind.
pub fn dg_transport_matrix(v2: &FunctionSpace, v1: &FunctionSpace, u: &[f64], degree: usize) -> Result<SparseMatrix> {
    let tu = CellTabulator::new(v1, degree, TabOpts::VALUES);
    let cell = assemble_cells(v2, v2, degree, TabOpts { deriv: false, grad: true }, TabOpts::VALUES, |c, a, b, m| {
        let t = tu.cell(c)?;
        let lu = v1.local_coeffs(c, u);
        for q in 0..a.nq {
            let uq = t.eval_v(q, &lu);
            for i in 0..a.n {
                let gi: f64 = a.g(q, i).iter().zip(&uq).map(|(x, y)| x * y).sum();
                for j in 0..b.n {
                    m[(i, j)] += a.w[q] * gi * b.v(q, j)[0];
                }
            }
        }
        Ok(())
    })?;
    let flux = assemble_form(v2, v2, &[Form::UpwindFlux { velocity: (v1, u) }], Some(degree))?;
    Ok(cell.add(1.0, &flux, -1.0))
}

/// max |u| Δt / min cell width.
pub fn courant_number(v1: &FunctionSpace, u: &[f64], dt: f64, degree: usize) -> Result<f64> {
    let mesh = &v1.mesh;
    let tab = CellTabulator::new(v1, degree, TabOpts::VALUES);
    let mut umax: f64 = 0.0;
    let mut width = f64::INFINITY;
    for c in 0..mesh.num_cells() {
        let t = tab.cell(c)?;
        let lu = v1.local_coeffs(c, u);
        for q in 0..t.nq {
            umax = umax.max(t.eval_v(q, &lu).iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        let factor = if mesh.cell_vertices(c).len() == 3 { 2.0 } else { std::f64::consts::SQRT_2 };
        width = width.min(factor * mesh.cell_volume(c) / mesh.cell_diameter(c));
    }
    Ok(umax * dt / width)
}

/// Stable Courant budget of the three-stage scheme.
pub const CFL_LIMIT: f64 = 1.0 / 3.0;

#[derive(Debug, Clone)]
pub struct DgStep {
    pub d: Vec<f64>,
    pub courant: f64,
}

/// Explicit SSPRK3 solver for D_t + ∇·(uD) = 0 with frozen u.
pub struct DgTransport {
    a: SparseMatrix,
    minv: CellwiseInverse,
    pub courant: f64,
}

impl DgTransport {
    pub fn new(model: &SweModel, u: &[f64], dt: f64, proceed_on_cfl: bool) -> Result<Self> {
        let cx = &model.cx;
        let courant = courant_number(&cx.v1, u, dt, model.qdeg)?;
        if courant > CFL_LIMIT {
            if !proceed_on_cfl {
                return Err(Error::InvalidArgument(format!("Courant number {courant:.3} exceeds {CFL_LIMIT:.3}")));
            }
            log::warn!("Courant number {courant:.3} exceeds {CFL_LIMIT:.3}; proceeding");
        }
        Ok(Self {
            a: dg_transport_matrix(&cx.v2, &cx.v1, u, model.qdeg)?,
            minv: CellwiseInverse::new(&cx.v2, &cx.m2)?,
            courant,
        })
    }

    fn rate(&self, d: &[f64]) -> Vec<f64> {
        self.minv.apply(&self.a.matvec(d))
    }

    pub fn step(&self, d: &[f64], dt: f64) -> Vec<f64> {
        ssprk3(d, dt, |x| self.rate(x))
    }
}

/// Three-stage strong-stability-preserving Runge-Kutta step.
pub fn ssprk3(y: &[f64], dt: f64, mut rate: impl FnMut(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let y1: Vec<f64> = y.iter().zip(rate(y)).map(|(a, r)| a + dt * r).collect();
    let y2: Vec<f64> = y.iter().zip(&y1).zip(rate(&y1)).map(|((a, b), r)| 0.75 * a + 0.25 * (b + dt * r)).collect();
    y.iter().zip(&y2).zip(rate(&y2)).map(|((a, b), r)| a / 3.0 + 2.0 / 3.0 * (b + dt * r)).collect()
}

/// One SSPRK3 step of upwind DG transport of D by u.
pub fn dg_density_step(model: &SweModel, d: &[f64], u: &[f64], dt: f64, proceed_on_cfl: bool) -> Result<DgStep> {
    let tr = DgTransport::new(model, u, dt, proceed_on_cfl)?;
    Ok(DgStep { d: tr.step(d, dt), courant: tr.courant })
}

/// Trace of the advected velocity on facets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceChoice {
    #[default]
    Upwind,
    Centred,
}

/// The vector G whose rotation G⊥ multiplies the absolute vorticity.
#[derive(Debug, Clone, Copy)]
pub enum Advector<'a> {
    /// G = F / D.
    FluxOverDepth { flux: &'a [f64], d: &'a [f64] },
    /// G = ū (a velocity in V1).
    Velocity(&'a [f64]),
}

/// Values and gradients of G at the points of a V1 tabulation.
struct GEval {
    val: Vec<[f64; 2]>,
    /// ∂_j G_k at `[k][j]`.
    grad: Vec<[[f64; 2]; 2]>,
}

fn eval_g(model: &SweModel, adv: &Advector, c: usize, t1: &crate::assembly::Tab, t2: Option<&crate::assembly::Tab>) -> GEval {
    let cx = &model.cx;
    let n = t1.nq;
    let mut out = GEval { val: vec![[0.0; 2]; n], grad: vec![[[0.0; 2]; 2]; n] };
    let (field, d) = match adv {
        Advector::FluxOverDepth { flux, d } => (*flux, Some(*d)),
        Advector::Velocity(u) => (*u, None),
    };
    let lf = cx.v1.local_coeffs(c, field);
    let ld = d.map(|d| cx.v2.local_coeffs(c, d));
    for q in 0..n {
        let f = t1.eval_v(q, &lf);
        let gf = if t1.grad.is_empty() { vec![0.0; 4] } else { t1.eval_g(q, &lf) };
        let (dv, gd) = match (&ld, t2) {
            (Some(ld), Some(t2)) => (t2.eval_v(q, ld)[0], if t2.grad.is_empty() { vec![0.0; 2] } else { t2.eval_g(q, ld) }),
            _ => (1.0, vec![0.0; 2]),
        };
        for k in 0..2 {
            out.val[q][k] = f[k] / dv;
            for j in 0..2 {
                out.grad[q][k][j] = gf[k * 2 + j] / dv - f[k] * gd[j] / (dv * dv);
            }
        }
    }
    out
}

/// The linear form T(w) = ∫ w·G⊥ (∇⊥·v + f) after cellwise integration by
/// parts of the curl:
///
/// ```text
/// T(w) = −∫_T ∇⊥(w·G⊥)·v + ∫_∂T (w·G⊥) n⊥·ṽ + ∫ (w·G⊥) f
/// ```
///
/// with ṽ the upwind (by G·n) or centred trace. The Coriolis term is
/// included only when `with_coriolis` is set.
pub fn vector_invariant_form(model: &SweModel, v: &[f64], adv: Advector, with_coriolis: bool, trace: TraceChoice) -> Result<Vec<f64>> {
    let cx = &model.cx;
    let v1 = &cx.v1;
    if v1.mesh.gdim != 2 {
        return Err(Error::Incompatible("vector-invariant advection is implemented on planar meshes".into()));
    }
    let deg = model.qdeg;
    let t2 = CellTabulator::new(&cx.v2, deg, TabOpts { deriv: false, grad: true });
    let with_d = matches!(adv, Advector::FluxOverDepth { .. });
    let cell = assemble_cell_vector(v1, deg, TabOpts { deriv: false, grad: true }, |c, t, l| {
        let td = if with_d { Some(t2.cell(c)?) } else { None };
        let ge = eval_g(model, &adv, c, t, td.as_ref());
        let lv = v1.local_coeffs(c, v);
        for q in 0..t.nq {
            let vq = t.eval_v(q, &lv);
            let [g0, g1] = ge.val[q];
            let p = [-g1, g0];
            let gp = [[-ge.grad[q][1][0], -ge.grad[q][1][1]], [ge.grad[q][0][0], ge.grad[q][0][1]]];
            let f = if with_coriolis { model.params.f.at(&t.x[q]) } else { 0.0 };
            for (i, li) in l.iter_mut().enumerate() {
                let w = t.v(q, i);
                let gw = t.g(q, i);
                let a = w[0] * p[0] + w[1] * p[1];
                let da = |j: usize| gw[j] * p[0] + gw[2 + j] * p[1] + w[0] * gp[0][j] + w[1] * gp[1][j];
                let curl = -da(1) * vq[0] + da(0) * vq[1];
                *li += t.w[q] * (-curl + a * f);
            }
        }
        Ok(())
    })?;
    let facet = assemble_facet_vector(v1, deg, TabOpts::VALUES, true, |f, ft, l| {
        let tm = ft.minus.as_ref().expect("interior facet");
        let (cp, cm) = (ft.cells.0, ft.cells.1.expect("interior facet"));
        let dt = if with_d { Some(facet_tabulate(&cx.v2, f, deg, TabOpts::VALUES)?) } else { None };
        let gp = eval_g(model, &adv, cp, &ft.plus, dt.as_ref().map(|t| &t.plus));
        let gm = eval_g(model, &adv, cm, tm, dt.as_ref().and_then(|t| t.minus.as_ref()));
        let (lvp, lvm) = (v1.local_coeffs(cp, v), v1.local_coeffs(cm, v));
        let n = ft.plus.n;
        for q in 0..ft.plus.nq {
            let nrm = ft.normal[q];
            let gn = 0.5 * ((gp.val[q][0] + gm.val[q][0]) * nrm[0] + (gp.val[q][1] + gm.val[q][1]) * nrm[1]);
            let wp = match trace {
                TraceChoice::Upwind => upwind_weight(gn),
                TraceChoice::Centred => 0.5,
            };
            let (vp, vm) = (ft.plus.eval_v(q, &lvp), tm.eval_v(q, &lvm));
            let vt = [wp * vp[0] + (1.0 - wp) * vm[0], wp * vp[1] + (1.0 - wp) * vm[1]];
            // n⁺⊥·ṽ; the minus side sees n⁻ = −n⁺
            let tang = -nrm[1] * vt[0] + nrm[0] * vt[1];
            for (side, tab, ge, sgn) in [(0, &ft.plus, &gp, 1.0), (1, tm, &gm, -1.0)] {
                let [g0, g1] = ge.val[q];
                for i in 0..n {
                    let w = tab.v(q, i);
                    let a = -w[0] * g1 + w[1] * g0;
                    l[side * n + i] += ft.plus.w[q] * sgn * a * tang;
                }
            }
        }
        Ok(())
    })?;
    Ok(cell.iter().zip(&facet).map(|(a, b)| a + b).collect())
}

/// The V1 tendency contribution −M1⁻¹ T for G = F/D, including f.
pub fn vector_invariant_advection(
    model: &SweModel,
    u: &[f64],
    flux: &[f64],
    d: &[f64],
    trace: TraceChoice,
    cfg: &crate::linalg::SolverConfig,
) -> Result<Vec<f64>> {
    let t = vector_invariant_form(model, u, Advector::FluxOverDepth { flux, d }, true, trace)?;
    let r: Vec<f64> = t.iter().map(|v| -v).collect();
    Ok(crate::linalg::cg_solve(&model.cx.m1, &r, cfg, None)?.0)
}

/// Φᵘ: SSPRK3 advection of a velocity v by a frozen ū,
/// ∫w·v_t = −T_ū(w; v) + ∫∇·w (½ v·ū).
pub struct VelocityAdvection<'a> {
    model: &'a SweModel,
    ubar: Vec<f64>,
    trace: TraceChoice,
    cfg: crate::linalg::SolverConfig,
}

impl<'a> VelocityAdvection<'a> {
    pub fn new(model: &'a SweModel, ubar: &[f64], trace: TraceChoice, cfg: &crate::linalg::SolverConfig) -> Self {
        Self { model, ubar: ubar.to_vec(), trace, cfg: *cfg }
    }

    pub fn rate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let cx = &self.model.cx;
        let t = vector_invariant_form(self.model, v, Advector::Velocity(&self.ubar), false, self.trace)?;
        let bern = assemble_cell_vector(&cx.v1, self.model.qdeg, TabOpts::DERIV, |c, tab, l| {
            let (lv, lb) = (cx.v1.local_coeffs(c, v), cx.v1.local_coeffs(c, &self.ubar));
            for q in 0..tab.nq {
                let k: f64 = 0.5 * tab.eval_v(q, &lv).iter().zip(tab.eval_v(q, &lb)).map(|(a, b)| a * b).sum::<f64>();
                for (i, li) in l.iter_mut().enumerate() {
                    *li += tab.w[q] * tab.d(q, i)[0] * k;
                }
            }
            Ok(())
        })?;
        let r: Vec<f64> = bern.iter().zip(&t).map(|(b, t)| b - t).collect();
        Ok(crate::linalg::cg_solve(&cx.m1, &r, &self.cfg, None)?.0)
    }

    pub fn step(&self, v: &[f64], dt: f64) -> Result<Vec<f64>> {
        let mut err = None;
        let out = ssprk3(v, dt, |x| match self.rate(x) {
            Ok(r) => r,
            Err(e) => {
                err.get_or_insert(e);
                vec![0.0; x.len()]
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{integrate, l2_error};
    use crate::linalg::{dot, SolverConfig};
    use crate::mesh::build_periodic_rect;
    use crate::reference::CellShape;
    use crate::swe::nonlinear::mass_flux;
    use crate::swe::{Coriolis, SweParams, SweState};
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn model(n: usize, v: &str, shape: CellShape) -> SweModel {
        let m = Arc::new(build_periodic_rect(n, n, 1.0, 1.0, shape).unwrap());
        SweModel::new(m, v, SweParams { f: Coriolis::Constant(1.5), ..Default::default() }).unwrap()
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.gen::<f64>() - 0.5).collect()
    }

    #[test]
    fn zero_velocity_and_constants_are_preserved() {
        let m = model(4, "RT1", CellShape::Triangle);
        let d = random(m.cx.v2.ndofs, 1);
        let s = dg_density_step(&m, &d, &vec![0.0; m.cx.v1.ndofs], 0.01, false).unwrap();
        assert!(s.d.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-14));
        // divergence-free u = ∇⊥ψ
        let u = m.cx.perp_grad.matvec(&random(m.cx.v0.ndofs, 2));
        let c: Vec<f64> = m.cx.one2.iter().map(|v| 2.0 * v).collect();
        let s = dg_density_step(&m, &c, &u, 0.01, true).unwrap();
        assert!(s.d.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn mass_is_conserved() {
        let m = model(4, "RT1", CellShape::Triangle);
        let d = random(m.cx.v2.ndofs, 3);
        let u = random(m.cx.v1.ndofs, 4);
        let s = dg_density_step(&m, &d, &u, 0.001, true).unwrap();
        let (m0, m1) = (integrate(&m.cx.v2, &d).unwrap(), integrate(&m.cx.v2, &s.d).unwrap());
        assert!((m0 - m1).abs() < 1e-12 * (1.0 + m0.abs()), "{m0} {m1}");
    }

    #[test]
    fn cfl_violation_errors_unless_allowed() {
        let m = model(4, "RT0", CellShape::Triangle);
        let u = m.project_state(&|_| [1.0, 0.0], &|_| 1.0).unwrap().u;
        assert!(dg_density_step(&m, &m.cx.one2, &u, 1.0, false).is_err());
        assert!(dg_density_step(&m, &m.cx.one2, &u, 1.0, true).unwrap().courant > CFL_LIMIT);
    }

    #[test]
    fn translated_bump_converges_at_dg_order() {
        let bump = |x: &[f64; 3]| vec![(2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()];
        let mut errs = vec![];
        for n in [8, 16] {
            let m = model(n, "RT1", CellShape::Quad);
            let u = m.project_state(&|_| [1.0, 0.5], &|_| 1.0).unwrap().u;
            let mut d = crate::assembly::project(&m.cx.v2, &bump, None).unwrap();
            let steps = 12 * n;
            let dt = 1.0 / steps as f64;
            let tr = DgTransport::new(&m, &u, dt, false).unwrap();
            for _ in 0..steps {
                d = tr.step(&d, dt);
            }
            // one period in x, half a period in y (the bump is 1-periodic in both)
            let shifted = |x: &[f64; 3]| bump(&[x[0] - 1.0, x[1] - 0.5, 0.0]);
            errs.push(l2_error(&m.cx.v2, &d, &shifted, None).unwrap());
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 1.7, "{errs:?} rate {rate}");
    }

    #[test]
    fn vector_invariant_energy_pairing_vanishes() {
        let m = model(4, "RT1", CellShape::Triangle);
        let s = m
            .project_state(
                &|x| [(2.0 * PI * x[1]).sin(), 0.4 * (2.0 * PI * x[0]).cos()],
                &|x| 1.0 + 0.3 * (2.0 * PI * (x[0] - x[1])).sin(),
            )
            .unwrap();
        let u: Vec<f64> = s.u.iter().zip(random(m.cx.v1.ndofs, 7)).map(|(a, b)| a + 0.1 * b).collect();
        let st = SweState { u, d: s.d };
        let f = mass_flux(&m, &st, &SolverConfig::tight()).unwrap();
        for tc in [TraceChoice::Upwind, TraceChoice::Centred] {
            let t = vector_invariant_form(&m, &st.u, Advector::FluxOverDepth { flux: &f, d: &st.d }, true, tc).unwrap();
            let scale = t.iter().map(|v| v.abs()).sum::<f64>() * f.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(dot(&f, &t).abs() < 1e-11 * scale, "{tc:?}: {}", dot(&f, &t));
        }
    }

    #[test]
    fn constant_velocity_has_no_curl_term() {
        let m = model(3, "RT0", CellShape::Triangle);
        let s = m.project_state(&|_| [0.7, -0.2], &|_| 2.0).unwrap();
        let f = mass_flux(&m, &s, &SolverConfig::tight()).unwrap();
        let t = vector_invariant_form(&m, &s.u, Advector::FluxOverDepth { flux: &f, d: &s.d }, true, TraceChoice::Upwind).unwrap();
        let c = m.coriolis.matvec(&s.u);
        assert!(t.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn traces_agree_for_continuous_velocity() {
        let m = model(3, "BDM1", CellShape::Triangle);
        let v = m.project_state(&|_| [0.3, 0.9], &|_| 1.0).unwrap().u;
        let ubar = random(m.cx.v1.ndofs, 9);
        let a = vector_invariant_form(&m, &v, Advector::Velocity(&ubar), false, TraceChoice::Upwind).unwrap();
        let b = vector_invariant_form(&m, &v, Advector::Velocity(&ubar), false, TraceChoice::Centred).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
