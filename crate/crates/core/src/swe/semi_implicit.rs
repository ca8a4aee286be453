//! Semi-implicit timestepping with a fixed number of Picard iterations.
//!
//! ```text
//! u^d     = u^n + Δt/2 (−f u^n⊥ + g∇D^n)          (weakly)
//! u^a     = Φᵘ(u^d; ū),  D^a = Φᴰ(D^n; ū),  ū = ½(u^n + u^{n+1})
//! R_u     = ∫w·(u^{n+1} − u^a) + Δt/2 ∫w·f u^{n+1}⊥ − Δt/2 ∫∇·w g D^{n+1}
//! R_D     = ∫φ (D^{n+1} − D^a)
//! ```
//!
//! Each iteration solves the hybridised linear system for (Δu, ΔD) with
//! right-hand side (−R_u, −R_D).

use super::transport::{DgTransport, TraceChoice, VelocityAdvection};
use super::{SweModel, SweState};
use crate::error::{Error, Result};
use crate::hybrid::{HybridSolver, MixedCoeffs};
use crate::linalg::{cg_solve, norm2, SolverConfig};
use crate::space::FunctionSpace;

#[derive(Debug, Clone)]
pub struct StepReport {
    /// Euclidean norm of (R_u, R_D) before each solve and after the last.
    pub residuals: Vec<f64>,
    pub courant: f64,
}

pub struct SemiImplicit<'a> {
    pub model: &'a SweModel,
    solver: HybridSolver,
    pub cfg: SolverConfig,
    pub trace: TraceChoice,
    pub proceed_on_cfl: bool,
}

/// Split a conforming dual vector evenly over the cells sharing each DOF.
pub fn conforming_dual_to_broken(v1: &FunctionSpace, r: &[f64]) -> Vec<f64> {
    let n = v1.local_dim();
    let mut count = vec![0.0; v1.ndofs];
    for c in 0..v1.mesh.num_cells() {
        for d in v1.dofs(c) {
            count[*d] += 1.0;
        }
    }
    let mut out = vec![0.0; v1.mesh.num_cells() * n];
    for c in 0..v1.mesh.num_cells() {
        for (i, (d, s)) in v1.dofs(c).iter().zip(v1.signs(c)).enumerate() {
            out[c * n + i] = s * r[*d] / count[*d];
        }
    }
    out
}

impl<'a> SemiImplicit<'a> {
    pub fn new(model: &'a SweModel, cfg: &SolverConfig) -> Result<Self> {
        let p = &model.params;
        let half = 0.5 * p.dt;
        let f = p.f.clone();
        let fs = move |x: &[f64; 3]| half * f.at(x);
        let rot: Option<&(dyn Fn(&[f64; 3]) -> f64 + Sync)> = if p.f.is_zero() { None } else { Some(&fs) };
        let co = MixedCoeffs::picard(p.dt, p.g, p.h, rot);
        let solver = HybridSolver::new(&model.cx.v1, &model.cx.v2, &co)?;
        Ok(Self { model, solver, cfg: *cfg, trace: TraceChoice::Upwind, proceed_on_cfl: false })
    }

    fn residual(&self, u1: &[f64], d1: &[f64], ua: &[f64], da: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cx = &self.model.cx;
        let p = &self.model.params;
        let half = 0.5 * p.dt;
        let du: Vec<f64> = u1.iter().zip(ua).map(|(a, b)| a - b).collect();
        let ru: Vec<f64> = cx
            .m1
            .matvec(&du)
            .iter()
            .zip(self.model.coriolis.matvec(u1))
            .zip(cx.b.matvec_t(d1))
            .map(|((m, c), b)| m + half * c - half * p.g * b)
            .collect();
        let dd: Vec<f64> = d1.iter().zip(da).map(|(a, b)| a - b).collect();
        (ru, cx.m2.matvec(&dd))
    }

    pub fn step(&self, s: &SweState) -> Result<(SweState, StepReport)> {
        let cx = &self.model.cx;
        let p = &self.model.params;
        let half = 0.5 * p.dt;
        // forward half-step of the linear forcing
        let rhs: Vec<f64> = cx
            .m1
            .matvec(&s.u)
            .iter()
            .zip(self.model.coriolis.matvec(&s.u))
            .zip(cx.b.matvec_t(&s.d))
            .map(|((m, c), b)| m - half * c + half * p.g * b)
            .collect();
        let ud = cg_solve(&cx.m1, &rhs, &SolverConfig::tight(), None)?.0;
        let (mut u1, mut d1) = (s.u.clone(), s.d.clone());
        let mut residuals = Vec::with_capacity(p.picard_iters + 1);
        let mut courant: f64 = 0.0;
        for k in 0..=p.picard_iters {
            let ubar: Vec<f64> = s.u.iter().zip(&u1).map(|(a, b)| 0.5 * (a + b)).collect();
            let dg = DgTransport::new(self.model, &ubar, p.dt, self.proceed_on_cfl)?;
            courant = courant.max(dg.courant);
            let da = dg.step(&s.d, p.dt);
            let ua = VelocityAdvection::new(self.model, &ubar, self.trace, &SolverConfig::tight()).step(&ud, p.dt)?;
            let (ru, rd) = self.residual(&u1, &d1, &ua, &da);
            let r = (norm2(&ru).powi(2) + norm2(&rd).powi(2)).sqrt();
            residuals.push(r);
            if k > 0 {
                let prev = residuals[k - 1];
                if r > prev && prev > 1e-12 * residuals[0].max(1e-300) {
                    return Err(Error::PicardDivergence { trace: residuals });
                }
            }
            if k == p.picard_iters {
                break;
            }
            let rub: Vec<f64> = conforming_dual_to_broken(&cx.v1, &ru).iter().map(|v| -v).collect();
            let rdn: Vec<f64> = rd.iter().map(|v| -v).collect();
            let sol = self.solver.solve(&rub, &rdn, &self.cfg)?;
            for (a, b) in u1.iter_mut().zip(&sol.u) {
                *a += b;
            }
            for (a, b) in d1.iter_mut().zip(&sol.d) {
                *a += b;
            }
        }
        Ok((SweState { u: u1, d: d1 }, StepReport { residuals, courant }))
    }
}

/// One semi-implicit step with default solver settings.
pub fn semi_implicit_step(model: &SweModel, s: &SweState) -> Result<(SweState, StepReport)> {
    SemiImplicit::new(model, &SolverConfig::tight())?.step(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::solve_monolithic;
    use crate::mesh::build_periodic_rect;
    use crate::reference::CellShape;
    use crate::swe::{Coriolis, SweParams};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn model(n: usize, dt: f64) -> SweModel {
        let m = Arc::new(build_periodic_rect(n, n, 1.0, 1.0, CellShape::Triangle).unwrap());
        SweModel::new(m, "RT0", SweParams { f: Coriolis::Constant(1.0), g: 1.0, h: 1.0, dt, ..Default::default() }).unwrap()
    }

    fn vortex(m: &SweModel, amp: f64) -> SweState {
        let psi = |x: &[f64; 3]| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
        m.project_state(
            &|x| {
                let (sx, cx) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[0]).cos());
                let (sy, cy) = ((2.0 * PI * x[1]).sin(), (2.0 * PI * x[1]).cos());
                [-amp * 2.0 * PI * sx * cy, amp * 2.0 * PI * cx * sy]
            },
            &|x| 1.0 + amp * psi(x),
        )
        .unwrap()
    }

    #[test]
    fn rest_state_stays_at_rest() {
        let m = model(4, 0.05);
        let r = m.rest_state();
        let (s, _) = semi_implicit_step(&m, &r).unwrap();
        assert!(s.u.iter().all(|v| v.abs() < 1e-13));
        assert!(s.d.iter().zip(&r.d).all(|(a, b)| (a - b).abs() < 1e-13));
    }

    #[test]
    fn picard_contracts_on_vortex() {
        let m = model(8, 0.02);
        let (_, rep) = semi_implicit_step(&m, &vortex(&m, 0.05)).unwrap();
        assert_eq!(rep.residuals.len(), 5);
        assert!(rep.residuals[4] < 1e-2 * rep.residuals[0], "{:?}", rep.residuals);
    }

    #[test]
    fn linear_regime_matches_implicit_midpoint() {
        let m = model(4, 0.05);
        let p = &m.params;
        let half = 0.5 * p.dt;
        let cn = |s: &SweState| {
            let cx = &m.cx;
            let ru: Vec<f64> = cx
                .m1
                .matvec(&s.u)
                .iter()
                .zip(m.coriolis.matvec(&s.u))
                .zip(cx.b.matvec_t(&s.d))
                .map(|((a, c), b)| a - half * c + half * p.g * b)
                .collect();
            let rd: Vec<f64> = cx.m2.matvec(&s.d).iter().zip(cx.b.matvec(&s.u)).map(|(a, b)| a - half * p.h * b).collect();
            let f = |_: &[f64; 3]| half;
            let co = MixedCoeffs::picard(p.dt, p.g, p.h, Some(&f));
            solve_monolithic(&cx.v1, &cx.v2, &co, &ru, &rd, &SolverConfig::tight()).unwrap()
        };
        let diff = |amp: f64| {
            let s = vortex(&m, amp);
            let (si, _) = semi_implicit_step(&m, &s).unwrap();
            let (u, d) = cn(&s);
            norm2(&si.u.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>())
                + norm2(&si.d.iter().zip(&d).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let (e1, e2) = (diff(1e-3), diff(2e-3));
        let ratio = e2 / e1;
        assert!((ratio - 4.0).abs() < 0.2, "{e1} {e2} {ratio}");
        assert!(e1 < 1e-4);
    }
}
