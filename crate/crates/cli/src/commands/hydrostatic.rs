//! Hydrostatic balance of one mesh column.

use terra_core::assembly::eval_at;
use terra_core::column::{balance_residual, hydrostatic_pi, hydrostatic_theta, ColumnProblem, PiNormalisation, ThermoParams};
use terra_core::reference::CellShape;

use super::{expr, Ctx};
use crate::error::{CliError, Result};
use crate::output::{num, Report};

pub fn hydrostatic(ctx: &Ctx) -> Result<Report> {
    let s = &ctx.s;
    let mesh = ctx.spec.build()?;
    if mesh.layers().is_none() {
        return Err(CliError::setting("mesh", "hydrostatic balance needs an extruded mesh (e.g. column:10:1)"));
    }
    let params = ThermoParams { g: s.gravity, cp_in_balance: s.cp_in_balance, ..ThermoParams::default() };
    params.validate()?;
    let theta_e = expr("theta", &s.theta)?;
    let prob = ColumnProblem::new(&mesh, s.column, s.horizontal_degree, s.vertical_degree)?;
    let theta = prob.project_theta(&|x| theta_e.eval(x))?;
    let norm = match s.surface_pi {
        Some(v) => PiNormalisation::Surface(v),
        None => PiNormalisation::MeanFree,
    };
    let sol = hydrostatic_pi(&prob, &theta, &params, norm)?;
    let residual = balance_residual(&prob, &theta, &sol.pi, &params)?;

    let centre = match prob.mesh.shape {
        CellShape::Prism => [1.0 / 3.0, 1.0 / 3.0, 0.5],
        _ => [0.5, 0.5, 0.5],
    };
    let cm = &prob.mesh;
    let height = (0..cm.num_cells()).map(|c| cm.map_point(c, &[centre[0], centre[1], 1.0]).0[2]).fold(f64::MIN, f64::max);
    let bottom = (0..cm.num_cells()).map(|c| cm.map_point(c, &[centre[0], centre[1], 0.0]).0[2]).fold(f64::MAX, f64::min);
    // constant θ has the exact linear mean-free solution
    let probes = [[0.1, 0.2, 0.0], [0.7, 0.3, 0.5], [0.4, 0.9, 1.0]];
    let t0 = theta_e.eval(&probes[0]);
    let constant = probes.iter().all(|p| theta_e.eval(p) == t0) && norm == PiNormalisation::MeanFree && !s.cp_in_balance;
    let mut body = String::from("# layer z pi theta\n");
    let mut lin_err: f64 = 0.0;
    for c in 0..cm.num_cells() {
        let z = cm.map_point(c, &centre).0[2];
        let pi = eval_at(&prob.v3, &sol.pi, c, &centre)?[0];
        let th = eval_at(&prob.vt, &theta, c, &centre)?[0];
        body.push_str(&format!("{c} {} {} {}\n", num(z), num(pi), num(th)));
        if constant {
            for p in [[centre[0], centre[1], 0.0], centre, [centre[0], centre[1], 1.0]] {
                let x = cm.map_point(c, &p).0;
                let exact = -(params.g / t0) * (x[2] - 0.5 * (bottom + height));
                let v = eval_at(&prob.v3, &sol.pi, c, &p)?[0];
                lin_err = lin_err.max((v - exact).abs() / (1.0 + exact.abs()));
            }
        }
    }
    let mut rep = Report::default();
    let path = ctx.out.main("pi.txt");
    ctx.out.write_text(&mut rep, path, &body)?;
    rep.line("layers", prob.layers());
    rep.line("residual", num(residual));
    rep.check("balance residual", residual < 1e-10);
    if constant {
        rep.line("max_error_linear", num(lin_err));
        rep.check("isothermal profile exact", lin_err < 1e-12);
    }
    let bv: Vec<f64> = prob.boundary.iter().map(|d| theta[*d]).collect();
    let datum: Vec<f64> = sol.pi.iter().map(|v| -v).collect();
    let back = hydrostatic_theta(&prob, &datum, Some(&bv), &params)?;
    let scale = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rt = theta.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale.max(1e-300);
    rep.line("round_trip", num(rt));
    rep.check("theta round trip", rt < 1e-9);
    Ok(rep)
}
