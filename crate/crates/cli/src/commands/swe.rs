//! Shallow-water runs: nonlinear semi-implicit stepping, linear balance
//! checks and the inertial-mode audit.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use terra_core::hybrid::{solve_monolithic, HybridSolver, MixedCoeffs};
use terra_core::linalg::{dot, SolverConfig};
use terra_core::swe::linear::{geostrophic_state, inertial_mode_check, linear_energy, linear_swe_tendency, mode_count_verdict};
use terra_core::swe::nonlinear::{invariant_rates, invariants, nonlinear_tendency, potential_vorticity};
use terra_core::swe::semi_implicit::{conforming_dual_to_broken, SemiImplicit};
use terra_core::swe::{SweModel, SweParams, SweState};

use super::{coriolis, expr, Ctx};
use crate::config::SolverKind;
use crate::error::{CliError, Result};
use crate::output::{num, Report};

fn params(ctx: &Ctx) -> Result<SweParams> {
    let s = &ctx.s;
    Ok(SweParams {
        f: coriolis(&s.coriolis)?,
        g: s.gravity,
        h: s.mean_depth,
        dt: s.dt,
        eta: s.eta,
        picard_iters: s.picard_iters,
        apvm_enabled: s.apvm,
    })
}

fn model(ctx: &Ctx, velocity: &str) -> Result<SweModel> {
    Ok(SweModel::new(Arc::new(ctx.spec.build()?), velocity, params(ctx)?)?)
}

fn rel(a: f64, scale: f64) -> f64 {
    a.abs() / scale.abs().max(1e-300)
}

pub fn nonlinear(ctx: &Ctx) -> Result<Report> {
    if ctx.s.solver != SolverKind::Hybrid {
        return Err(CliError::setting("solver", "semi-implicit stepping solves the Picard system by hybridisation; use `hybrid`"));
    }
    let m = model(ctx, &ctx.s.velocity)?;
    let (ue, ve, de) = (expr("u", &ctx.s.u)?, expr("v", &ctx.s.v)?, expr("depth", &ctx.s.depth)?);
    let mut state = m.project_state(&|x| [ue.eval(x), ve.eval(x)], &|x| de.eval(x))?;
    let tight = SolverConfig { rtol: ctx.s.rtol.min(1e-12), ..ctx.solver() };
    let pv = m.params.pv_flux();
    let t = nonlinear_tendency(&m, &state, pv, &tight)?;
    let inv0 = invariants(&m, &state, &t.q)?;
    let rates = invariant_rates(&m, &state, &t)?;
    let mut rep = Report::default();
    rep.line("mass", num(inv0.mass));
    rep.line("energy", num(inv0.energy));
    rep.line("enstrophy", num(inv0.enstrophy));
    rep.line("dmass_dt", num(rates.mass));
    rep.line("denergy_dt_rel", num(rel(rates.energy, inv0.energy)));
    rep.line("denstrophy_dt_rel", num(rates.enstrophy / inv0.enstrophy.abs().max(1e-300)));
    rep.check("mass rate", rel(rates.mass, inv0.mass) < 1e-12);
    rep.check("energy rate", rel(rates.energy, inv0.energy) <= 1e-10);
    if ctx.s.apvm {
        rep.check("enstrophy dissipated", rates.enstrophy <= 1e-12 * inv0.enstrophy.abs());
    } else {
        rep.check("enstrophy rate", rel(rates.enstrophy, inv0.enstrophy) <= 1e-10);
    }
    let mut rows = vec![vec!["0".into(), num(0.0), num(inv0.mass), num(inv0.energy), num(inv0.enstrophy), String::new(), String::new()]];
    if ctx.s.steps > 0 {
        let stepper = SemiImplicit::new(&m, &ctx.solver())?;
        let mut last = inv0;
        for n in 1..=ctx.s.steps {
            let (next, r) = stepper.step(&state)?;
            state = next;
            let q = potential_vorticity(&m, &state, &tight)?;
            last = invariants(&m, &state, &q)?;
            rows.push(vec![
                n.to_string(),
                num(n as f64 * m.params.dt),
                num(last.mass),
                num(last.energy),
                num(last.enstrophy),
                num(*r.residuals.last().unwrap_or(&0.0)),
                num(r.courant),
            ]);
        }
        let drift = rel(last.mass - inv0.mass, inv0.mass);
        rep.line("steps", ctx.s.steps);
        rep.line("mass_drift", num(drift));
        rep.line("energy_change_rel", num(rel(last.energy - inv0.energy, inv0.energy)));
        rep.check("mass conserved by stepping", drift < 1e-9);
    }
    let path = ctx.out.main("swe.csv");
    ctx.out.write_csv(&mut rep, path, &["step", "time", "mass", "energy", "enstrophy", "picard_residual", "courant"], &rows)?;
    Ok(rep)
}

fn m1_norm(m: &SweModel, u: &[f64]) -> f64 {
    dot(u, &m.cx.m1.matvec(u)).sqrt()
}

/// One implicit-midpoint step of the linear equations: right-hand sides
/// and the Picard coefficients with f scaled by Δt/2.
fn midpoint_system(m: &SweModel, s: &SweState) -> (Vec<f64>, Vec<f64>) {
    let cx = &m.cx;
    let p = &m.params;
    let half = 0.5 * p.dt;
    let ru = cx
        .m1
        .matvec(&s.u)
        .iter()
        .zip(m.coriolis.matvec(&s.u))
        .zip(cx.b.matvec_t(&s.d))
        .map(|((a, c), b)| a - half * c + half * p.g * b)
        .collect();
    let rd = cx.m2.matvec(&s.d).iter().zip(cx.b.matvec(&s.u)).map(|(a, b)| a - half * p.h * b).collect();
    (ru, rd)
}

pub fn linear(ctx: &Ctx) -> Result<Report> {
    let m = model(ctx, &ctx.s.velocity)?;
    let cx = &m.cx;
    let tight = SolverConfig::tight();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.s.seed);
    let mut rep = Report::default();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..ctx.s.trials {
        let psi: Vec<f64> = (0..cx.v0.ndofs).map(|_| rng.gen::<f64>() - 0.5).collect();
        let s = geostrophic_state(&m, &psi)?;
        let t = linear_swe_tendency(&m, &s, &tight)?;
        let ratio = m1_norm(&m, &t.u) / m1_norm(&m, &s.u).max(1e-300);
        let dmax = t.d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(ratio);
        rows.push(vec![trial.to_string(), num(ratio), num(dmax)]);
    }
    rep.line("geostrophic_max_ratio", num(worst));
    rep.check("geostrophic steadiness", worst < 1e-9);

    // implicit midpoint from a random state, solved both ways
    let s = SweState {
        u: (0..cx.v1.ndofs).map(|_| rng.gen::<f64>() - 0.5).collect(),
        d: (0..cx.v2.ndofs).map(|_| rng.gen::<f64>() - 0.5).collect(),
    };
    let (ru, rd) = midpoint_system(&m, &s);
    let half = 0.5 * m.params.dt;
    let f = m.params.f.clone();
    let fs = move |x: &[f64; 3]| half * f.at(x);
    let rot: Option<&(dyn Fn(&[f64; 3]) -> f64 + Sync)> = if m.params.f.is_zero() { None } else { Some(&fs) };
    let co = MixedCoeffs::picard(m.params.dt, m.params.g, m.params.h, rot);
    let cfg = ctx.solver();
    let (um, dm) = solve_monolithic(&cx.v1, &cx.v2, &co, &ru, &rd, &cfg)?;
    let hs = HybridSolver::new(&cx.v1, &cx.v2, &co)?;
    let hyb = hs.solve(&conforming_dual_to_broken(&cx.v1, &ru), &rd, &cfg)?;
    let agree = um.iter().zip(&hyb.u).chain(dm.iter().zip(&hyb.d)).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let (u1, d1) = match ctx.s.solver {
        SolverKind::Mixed => (um, dm),
        SolverKind::Hybrid => (hyb.u.clone(), hyb.d.clone()),
    };
    let e0 = linear_energy(&m, &s);
    let e1 = linear_energy(&m, &SweState { u: u1, d: d1 });
    rep.line("solver", format!("{:?}", ctx.s.solver).to_lowercase());
    rep.line("solver_iterations", hyb.info.iterations);
    rep.line("solver_residual", num(hyb.info.residual));
    rep.line("jump_residual", num(hyb.jump_residual));
    rep.line("solver_agreement", num(agree));
    rep.line("midpoint_energy_change_rel", num(rel(e1 - e0, e0)));
    rep.check("hybrid and monolithic agree", agree < 1e-9);
    rep.check("midpoint conserves energy", rel(e1 - e0, e0) < 1e-9);
    let path = ctx.out.main("geostrophic.csv");
    ctx.out.write_csv(&mut rep, path, &["trial", "tendency_ratio", "max_depth_tendency"], &rows)?;
    Ok(rep)
}

pub fn inertial(ctx: &Ctx) -> Result<Report> {
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for v in &ctx.s.velocities {
        let m = model(ctx, v)?;
        let r = inertial_mode_check(&m)?;
        rows.push(vec![
            v.clone(),
            r.dim_v0.to_string(),
            r.dim_v2.to_string(),
            r.harmonic_dim.to_string(),
            num(r.harmonic_deviation),
            r.divergence_free_dim.to_string(),
            r.coriolis_kernel_dim.to_string(),
            r.nonconstant_oscillation.to_string(),
            mode_count_verdict(r.dim_v0, r.dim_v2),
        ]);
        rep.line(format!("harmonic_dim_{v}"), r.harmonic_dim);
        rep.line(format!("mode_count_{v}"), mode_count_verdict(r.dim_v0, r.dim_v2));
        rep.check(format!("{v} harmonic space"), r.harmonic_dim == 2 && r.harmonic_deviation < 1e-9);
        rep.check(format!("{v} no spurious inertial modes"), !r.nonconstant_oscillation);
    }
    let path = ctx.out.main("inertial.csv");
    ctx.out.write_csv(
        &mut rep,
        path,
        &[
            "velocity",
            "dim_v0",
            "dim_v2",
            "harmonic_dim",
            "harmonic_deviation",
            "divergence_free_dim",
            "coriolis_kernel_dim",
            "nonconstant_oscillation",
            "mode_count",
        ],
        &rows,
    )?;
    Ok(rep)
}
