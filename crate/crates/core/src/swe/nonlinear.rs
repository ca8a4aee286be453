//! Energy- and enstrophy-conserving nonlinear shallow-water tendencies.
//!
//! ```text
//! ∫w·u_t + ∫w·F⊥ Q = ∫∇·w (gD + ½|u|²)
//! ∫φ (D_t + ∇·F)   = 0
//! ∫w·F             = ∫w·u D
//! ∫γ q D           = −∫∇⊥γ·u + ∫γ f
//! ```
//!
//! Q is q itself, or q with an anticipated (APVM) or streamline-upwind
//! (SUPG) correction that dissipates enstrophy but not energy.

use super::{PvFlux, SweModel, SweState};
use crate::assembly::{assemble_cell_vector, assemble_form, assemble_rhs, CellTabulator, Coef, Form, Op, Tab, TabOpts};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, dot, SolverConfig};

/// Tendencies with the diagnosed flux and potential vorticity.
#[derive(Debug, Clone)]
pub struct Tendency {
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub q: Vec<f64>,
    pub flux: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invariants {
    pub mass: f64,
    pub energy: f64,
    pub vorticity: f64,
    pub enstrophy: f64,
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fails unless D > 1e-8 × mean(D) at every quadrature point.
pub fn check_depth(model: &SweModel, d: &[f64]) -> Result<()> {
    let v2 = &model.cx.v2;
    let mesh = &v2.mesh;
    let mean = crate::assembly::integrate(v2, d)? / mesh.total_volume();
    if mean <= 0.0 {
        return Err(Error::NonPositive(format!("mean depth {mean:e}")));
    }
    let tab = CellTabulator::new(v2, model.qdeg, TabOpts::VALUES);
    for c in 0..mesh.num_cells() {
        let t = tab.cell(c)?;
        let lc = v2.local_coeffs(c, d);
        for q in 0..t.nq {
            let v = t.eval_v(q, &lc)[0];
            if v <= 1e-8 * mean {
                return Err(Error::NonPositive(format!("depth {v:e} in cell {c} at {:?}", t.x[q])));
            }
        }
    }
    Ok(())
}

/// F with ∫w·F = ∫w·uD.
pub fn mass_flux(model: &SweModel, s: &SweState, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let cx = &model.cx;
    let t2 = CellTabulator::new(&cx.v2, model.qdeg, TabOpts::VALUES);
    let rhs = assemble_cell_vector(&cx.v1, model.qdeg, TabOpts::VALUES, |c, t, l| {
        let td = t2.cell(c)?;
        let (lu, ld) = (cx.v1.local_coeffs(c, &s.u), cx.v2.local_coeffs(c, &s.d));
        for q in 0..t.nq {
            let u = t.eval_v(q, &lu);
            let dq = td.eval_v(q, &ld)[0];
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[q] * dq * vdot(t.v(q, i), &u);
            }
        }
        Ok(())
    })?;
    Ok(cg_solve(&cx.m1, &rhs, cfg, None)?.0)
}

/// q with ∫γ q D = −∫∇⊥γ·u + ∫γ f.
pub fn potential_vorticity(model: &SweModel, s: &SweState, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let cx = &model.cx;
    let a = assemble_form(&cx.v0, &cx.v0, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::Field(&cx.v2, &s.d) }], Some(model.qdeg))?;
    let f = model.params.f.clone();
    let fr = assemble_rhs(&cx.v0, &move |x| vec![f.at(x)], Some(model.qdeg))?;
    let rhs: Vec<f64> = cx.k.matvec_t(&s.u).iter().zip(&fr).map(|(k, f)| f - k).collect();
    cg_solve(&a, &rhs, cfg, None).map(|r| r.0).map_err(|e| match e {
        Error::NotConverged { .. } => Error::Singular(format!("PV mass matrix (depth may change sign): {e}")),
        e => e,
    })
}

/// Pointwise PV correction inputs for one cell.
struct PvCell {
    tau: Vec<f64>,
    residual: Vec<f64>,
}

/// Regularisation ε = 1e-12 × mean|F|.
fn flux_epsilon(model: &SweModel, flux: &[f64]) -> Result<f64> {
    let v1 = &model.cx.v1;
    let tab = CellTabulator::new(v1, model.qdeg, TabOpts::VALUES);
    let mut total = 0.0;
    for c in 0..v1.mesh.num_cells() {
        let t = tab.cell(c)?;
        let lf = v1.local_coeffs(c, flux);
        for q in 0..t.nq {
            total += t.w[q] * vdot(&t.eval_v(q, &lf), &t.eval_v(q, &lf)).sqrt();
        }
    }
    Ok((1e-12 * total / v1.mesh.total_volume()).max(1e-300))
}

fn apply_rhs(model: &SweModel, s: &SweState, flux: &[f64], q: &[f64], pv: PvFlux, qd_t: Option<&[f64]>) -> Result<Vec<f64>> {
    let cx = &model.cx;
    let p = &model.params;
    let eps = if pv == PvFlux::Centred { 1.0 } else { flux_epsilon(model, flux)? };
    let t0 = CellTabulator::new(&cx.v0, model.qdeg, TabOpts { deriv: false, grad: true });
    let t2 = CellTabulator::new(&cx.v2, model.qdeg, TabOpts::VALUES);
    let mesh = &cx.v1.mesh;
    assemble_cell_vector(&cx.v1, model.qdeg, TabOpts::DERIV, |c, t: &Tab, l| {
        let tq = t0.cell(c)?;
        let td = t2.cell(c)?;
        let (lu, lf, ld, lq) = (cx.v1.local_coeffs(c, &s.u), cx.v1.local_coeffs(c, flux), cx.v2.local_coeffs(c, &s.d), cx.v0.local_coeffs(c, q));
        let lqd = qd_t.map(|v| cx.v0.local_coeffs(c, v));
        let h = mesh.cell_diameter(c);
        let pc = PvCell {
            tau: (0..t.nq)
                .map(|k| {
                    let fk = t.eval_v(k, &lf);
                    p.eta * h / (vdot(&fk, &fk) + eps * eps).sqrt()
                })
                .collect(),
            residual: (0..t.nq)
                .map(|k| {
                    let fk = t.eval_v(k, &lf);
                    let gq = tq.eval_g(k, &lq);
                    let adv = vdot(&fk, &gq);
                    match (pv, &lqd) {
                        (PvFlux::Supg, Some(lqd)) => {
                            let divf = t.eval_d(k, &lf)[0];
                            tq.eval_v(k, lqd)[0] + adv + tq.eval_v(k, &lq)[0] * divf
                        }
                        (PvFlux::Centred, _) => 0.0,
                        _ => adv,
                    }
                })
                .collect(),
        };
        for k in 0..t.nq {
            let u = t.eval_v(k, &lu);
            let fperp = t.perp(k, &t.eval_v(k, &lf));
            let dk = td.eval_v(k, &ld)[0];
            let qq = tq.eval_v(k, &lq)[0] - pc.tau[k] * pc.residual[k];
            let bern = p.g * dk + 0.5 * vdot(&u, &u);
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[k] * (-qq * vdot(t.v(k, i), &fperp) + t.d(k, i)[0] * bern);
            }
        }
        Ok(())
    })
}

/// Semi-discrete tendencies (u_t, D_t) with the chosen PV flux.
pub fn nonlinear_tendency(model: &SweModel, s: &SweState, pv: PvFlux, cfg: &SolverConfig) -> Result<Tendency> {
    check_depth(model, &s.d)?;
    let cx = &model.cx;
    let flux = mass_flux(model, s, cfg)?;
    let q = potential_vorticity(model, s, cfg)?;
    let d_t: Vec<f64> = cx.div.matvec(&flux).iter().map(|v| -v).collect();
    let qd_t = if pv == PvFlux::Supg {
        // (qD)_t projected on V0 from the unstabilised tendency
        let rhs = apply_rhs(model, s, &flux, &q, PvFlux::Centred, None)?;
        let u_t = cg_solve(&cx.m1, &rhs, cfg, None)?.0;
        let r: Vec<f64> = cx.k.matvec_t(&u_t).iter().map(|v| -v).collect();
        Some(cg_solve(&cx.m0, &r, cfg, None)?.0)
    } else {
        None
    };
    let rhs = apply_rhs(model, s, &flux, &q, pv, qd_t.as_deref())?;
    let u_t = cg_solve(&cx.m1, &rhs, cfg, None)?.0;
    Ok(Tendency { u: u_t, d: d_t, q, flux })
}

/// M, E = ½∫D|u|² + ½g∫D², total vorticity ∫Dq and enstrophy ∫Dq².
pub fn invariants(model: &SweModel, s: &SweState, q: &[f64]) -> Result<Invariants> {
    let cx = &model.cx;
    let g = model.params.g;
    let t0 = CellTabulator::new(&cx.v0, model.qdeg, TabOpts::VALUES);
    let t1 = CellTabulator::new(&cx.v1, model.qdeg, TabOpts::VALUES);
    let t2 = CellTabulator::new(&cx.v2, model.qdeg, TabOpts::VALUES);
    let mut out = Invariants { mass: 0.0, energy: 0.0, vorticity: 0.0, enstrophy: 0.0 };
    for c in 0..cx.v2.mesh.num_cells() {
        let (a, b, d) = (t0.cell(c)?, t1.cell(c)?, t2.cell(c)?);
        let (lq, lu, ld) = (cx.v0.local_coeffs(c, q), cx.v1.local_coeffs(c, &s.u), cx.v2.local_coeffs(c, &s.d));
        for k in 0..d.nq {
            let w = d.w[k];
            let dk = d.eval_v(k, &ld)[0];
            let qk = a.eval_v(k, &lq)[0];
            let u = b.eval_v(k, &lu);
            out.mass += w * dk;
            out.energy += w * (0.5 * dk * vdot(&u, &u) + 0.5 * g * dk * dk);
            out.vorticity += w * dk * qk;
            out.enstrophy += w * dk * qk * qk;
        }
    }
    Ok(out)
}

/// Time derivatives of the invariants implied by a tendency:
/// dE/dt = ⟨F, u_t⟩ + ⟨gD + ½|u|², D_t⟩ and, from the PV equation,
/// d/dt∫Dq² = −2∫∇⊥q·u_t − ∫q² D_t, d/dt∫Dq = −∫∇⊥1·u_t.
pub fn invariant_rates(model: &SweModel, s: &SweState, t: &Tendency) -> Result<Invariants> {
    let cx = &model.cx;
    let g = model.params.g;
    let t0 = CellTabulator::new(&cx.v0, model.qdeg, TabOpts::VALUES);
    let t1 = CellTabulator::new(&cx.v1, model.qdeg, TabOpts::VALUES);
    let t2 = CellTabulator::new(&cx.v2, model.qdeg, TabOpts::VALUES);
    let mut out = Invariants { mass: 0.0, energy: dot(&t.flux, &cx.m1.matvec(&t.u)), vorticity: 0.0, enstrophy: 0.0 };
    for c in 0..cx.v2.mesh.num_cells() {
        let (a, b, d) = (t0.cell(c)?, t1.cell(c)?, t2.cell(c)?);
        let (lq, lu, ld, ldt) = (cx.v0.local_coeffs(c, &t.q), cx.v1.local_coeffs(c, &s.u), cx.v2.local_coeffs(c, &s.d), cx.v2.local_coeffs(c, &t.d));
        for k in 0..d.nq {
            let w = d.w[k];
            let dt = d.eval_v(k, &ldt)[0];
            let u = b.eval_v(k, &lu);
            let qk = a.eval_v(k, &lq)[0];
            out.mass += w * dt;
            out.energy += w * (g * d.eval_v(k, &ld)[0] + 0.5 * vdot(&u, &u)) * dt;
            out.enstrophy -= w * qk * qk * dt;
        }
    }
    let ku = cx.k.matvec_t(&t.u);
    out.enstrophy -= 2.0 * dot(&t.q, &ku);
    out.vorticity = -dot(&cx.one0, &ku);
    Ok(out)
}
