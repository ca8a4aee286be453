//! 2D de Rham complex studies: mixed Poisson rates, Helmholtz
//! decomposition and Laplacian eigenvalues.

use std::f64::consts::PI;
use std::sync::Arc;

use terra_core::assembly::{l2_error, project, remove_mean};
use terra_core::converge::{fitted_slope, RATE_SLACK};
use terra_core::derham::{helmholtz_decompose, laplacian_eigs, solve_mixed_poisson, Complex2D};

use super::{expr, Ctx};
use crate::config::SolverKind;
use crate::error::{CliError, Result};
use crate::output::{num, Report};

pub fn poisson(ctx: &Ctx) -> Result<Report> {
    if ctx.s.solver == SolverKind::Hybrid {
        return Err(CliError::setting("solver", "the mixed Poisson problem has no D mass term to hybridise; use `mixed`"));
    }
    let rhs = expr("rhs", &ctx.s.rhs)?;
    let exact = expr("exact", &ctx.s.exact)?;
    let cfg = ctx.solver();
    let mut rep = Report::default();
    let mut rows = Vec::new();
    let (mut hs, mut errs) = (Vec::new(), Vec::new());
    let mut predicted = 0;
    for spec in ctx.level_specs()? {
        let cx = Complex2D::new(Arc::new(spec.build()?), &ctx.s.velocity)?;
        let mut f = project(&cx.v2, &|x| vec![rhs.eval(x)], None)?;
        remove_mean(&cx.v2, &mut f)?;
        let (u, p) = solve_mixed_poisson(&cx, &f, &cfg)?;
        let err = l2_error(&cx.v2, &p, &|x| vec![exact.eval(x)], None)?;
        let div_res = cx.div.matvec(&u).iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
        let h = cx.v2.mesh.max_diameter();
        predicted = cx.v2.element.degree as i64 + 1;
        rows.push(vec![
            spec.level().map_or("file".into(), |n| n.to_string()),
            num(h),
            cx.v1.ndofs.to_string(),
            cx.v2.ndofs.to_string(),
            num(err),
            num(div_res),
        ]);
        rep.check(format!("divergence constraint level {}", rows.len()), div_res < 1e-8 * (1.0 + f.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        hs.push(h);
        errs.push(err);
    }
    let path = ctx.out.main("rates.csv");
    ctx.out.write_csv(&mut rep, path, &["n", "h", "dofs_v1", "dofs_v2", "error_p", "div_residual"], &rows)?;
    rep.line("levels", hs.len());
    rep.line("predicted", predicted);
    if hs.len() >= 3 {
        let n = hs.len();
        let slope = fitted_slope(&hs[n - 3..], &errs[n - 3..]);
        rep.line("measured", format!("{slope:.4}"));
        rep.check("pressure rate", slope >= predicted as f64 - RATE_SLACK);
    }
    Ok(rep)
}

pub fn helmholtz(ctx: &Ctx) -> Result<Report> {
    let (ue, ve) = (expr("u", &ctx.s.u)?, expr("v", &ctx.s.v)?);
    let cx = Complex2D::new(Arc::new(ctx.spec.build()?), &ctx.s.velocity)?;
    let u = project(&cx.v1, &|x| vec![ue.eval(x), ve.eval(x)], None)?;
    let h = helmholtz_decompose(&cx, &u, &ctx.solver())?;
    let ip = |a: &[f64], b: &[f64]| cx.l2_inner(&cx.m1, a, b);
    let nu2 = ip(&u, &u).max(1e-300);
    let parts = [("rotational", &h.rotational), ("divergent", &h.divergent), ("harmonic", &h.harmonic)];
    let mut rep = Report::default();
    let mut rows = Vec::new();
    for (name, p) in parts {
        let div = cx.div.matvec(p).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let curl = cx.tilde_curl(p)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rows.push(vec![name.to_string(), num(ip(p, p).sqrt()), num(div), num(curl)]);
    }
    let orth = [(0, 1), (0, 2), (1, 2)].iter().map(|(i, j)| ip(parts[*i].1, parts[*j].1).abs() / nu2).fold(0.0f64, f64::max);
    let sum: Vec<f64> = (0..u.len()).map(|i| u[i] - h.rotational[i] - h.divergent[i] - h.harmonic[i]).collect();
    let recon = (ip(&sum, &sum) / nu2).sqrt();
    let path = ctx.out.main("decomposition.csv");
    ctx.out.write_csv(&mut rep, path, &["part", "l2_norm", "max_abs_div", "max_abs_curl"], &rows)?;
    rep.line("norm_u", num(nu2.sqrt()));
    rep.line("orthogonality", num(orth));
    rep.line("reconstruction", num(recon));
    rep.check("orthogonality", orth < 1e-10);
    rep.check("reconstruction", recon < 1e-10);
    Ok(rep)
}

/// Eigenvalues of the mixed Laplacian per level.
pub struct EigLevel {
    pub level: Option<usize>,
    pub h: f64,
    pub values: Vec<f64>,
}

impl EigLevel {
    pub fn zero_count(&self) -> usize {
        let top = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.values.iter().filter(|v| v.abs() <= 1e-8 * top).count()
    }

    pub fn first_nonzero(&self) -> Option<f64> {
        self.values.get(self.zero_count()).copied()
    }
}

pub fn eig_levels(ctx: &Ctx) -> Result<Vec<EigLevel>> {
    ctx.level_specs()?
        .into_iter()
        .map(|spec| {
            let cx = Complex2D::new(Arc::new(spec.build()?), &ctx.s.velocity)?;
            let values = laplacian_eigs(&cx, ctx.s.count, ctx.s.seed)?;
            Ok(EigLevel { level: spec.level(), h: cx.v2.mesh.max_diameter(), values })
        })
        .collect()
}

pub fn eigs(ctx: &Ctx) -> Result<Report> {
    let levels = eig_levels(ctx)?;
    let exact = ctx.spec.torus_length().map(|l| 4.0 * PI * PI / (l * l));
    let mut rep = Report::default();
    let mut rows = Vec::new();
    let mut rel = Vec::new();
    for lv in &levels {
        let tag = lv.level.map_or("file".to_string(), |n| n.to_string());
        for (i, v) in lv.values.iter().enumerate() {
            rows.push(vec![tag.clone(), num(lv.h), i.to_string(), num(*v)]);
        }
        rep.check(format!("single zero eigenvalue n={tag}"), lv.zero_count() == 1);
        if let (Some(l1), Some(ex)) = (lv.first_nonzero(), exact) {
            let e = (l1 - ex).abs() / ex;
            rep.line(format!("lambda1_n{tag}"), num(l1));
            rep.line(format!("rel_error_n{tag}"), num(e));
            let spurious = lv.values.iter().skip(lv.zero_count()).any(|v| *v < 0.5 * ex);
            rep.check(format!("no spurious eigenvalue n={tag}"), !spurious);
            rel.push(e);
        }
    }
    if let Some(ex) = exact {
        rep.line("lambda_exact", num(ex));
        rep.check("first eigenvalue converges", rel.windows(2).all(|w| w[1] < w[0]));
    }
    let path = ctx.out.main("eigs.csv");
    ctx.out.write_csv(&mut rep, path, &["n", "h", "index", "eigenvalue"], &rows)?;
    Ok(rep)
}
