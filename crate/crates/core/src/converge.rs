//! Convergence-rate studies: L2 projections and mixed problems under
//! refinement, compared against the predicted rates for each map class.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_form, assemble_mass, assemble_rhs, l2_error, CellTabulator, Coef, Form, Op, TabOpts};
use crate::element::{build_reference_element, Family, PolyFamily};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{cg_solve, solve_mixed, Preconditioner, SolverConfig};
use crate::mesh::{build_icosahedral_sphere, build_rect, build_shell_mesh, extrude, jitter, MapClass, Mesh};
use crate::quadrature::quadrature_rule;
use crate::reference::CellShape;
use crate::space::FunctionSpace;

/// Relative vertex jitter for the random multilinear meshes.
pub const JITTER: f64 = 0.15;
/// Tolerance below the predicted rate that still passes.
pub const RATE_SLACK: f64 = 0.2;

fn solver() -> SolverConfig {
    SolverConfig { rtol: 1e-13, atol: 1e-300, max_iter: 50_000, precond: Preconditioner::GaussSeidel }
}

/// Components of a target field, each an expression in x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub components: Vec<Expr>,
}

impl Target {
    pub fn parse(components: &[&str]) -> Result<Self> {
        Ok(Self { components: components.iter().map(|s| Expr::parse(s)).collect::<Result<_>>()? })
    }

    pub fn eval(&self, x: &[f64; 3]) -> Vec<f64> {
        self.components.iter().map(|e| e.eval(x)).collect()
    }

    /// Smooth default for form degree k on the unit cube.
    pub fn cube_default(k: usize) -> Self {
        let src: &[&str] = if k == 1 || k == 2 {
            &["sin(pi*y)*(1+z)", "cos(pi*x)+z*z", "exp(x)*sin(pi*z)+y"]
        } else {
            &["sin(pi*x)*cos(pi*y)*exp(z)"]
        };
        Self::parse(src).expect("valid default target")
    }

    /// Smooth default for form degree k on the spherical shell.
    pub fn shell_default(k: usize) -> Self {
        let src: &[&str] = if k == 1 || k == 2 { &["y*z", "x*x-z", "sin(x)+y"] } else { &["x*y+z*z+sin(x)"] };
        Self::parse(src).expect("valid default target")
    }

    fn closure(&self) -> impl Fn(&[f64; 3]) -> Vec<f64> + Sync + '_ {
        move |x| self.eval(x)
    }
}

/// Best approximation of `target` in `space` and its L2 error
/// (over-integrated by four degrees).
pub fn l2_project(space: &FunctionSpace, target: &Target) -> Result<(Vec<f64>, f64)> {
    let f = target.closure();
    let deg = 2 * space.element.degree + 4;
    let m = assemble_mass(space)?;
    let b = assemble_rhs(space, &f, Some(deg))?;
    let (c, _) = cg_solve(&m, &b, &solver(), None)?;
    let e = l2_error(space, &c, &f, Some(deg))?;
    Ok((c, e))
}

/// Degrees (p, q) of the smallest E family containing the descriptor.
pub fn embedding(fam: PolyFamily) -> Result<(usize, usize)> {
    match fam.family {
        Family::E => Ok((fam.r, fam.s)),
        Family::EMinus if fam.k == 0 => Ok((fam.r, fam.s)),
        Family::EMinus => Ok((fam.r + 1, fam.s)),
        _ => Err(Error::UnsupportedElement(format!("{} is not a tensor-product family", fam.name()))),
    }
}

/// Predicted L2 rate for the given map class.
pub fn predicted_rate(fam: PolyFamily, class: MapClass) -> Result<i64> {
    if fam.k > 3 {
        return Err(Error::UnsupportedElement(format!("{} (k must be 0..=3)", fam.name())));
    }
    let (r, s) = embedding(fam)?;
    let (r, s) = (r as i64, s as i64);
    let half = |x: i64| x.div_euclid(2);
    let rate = match class {
        // the shell map is a global smooth map, which preserves affine rates
        MapClass::Affine | MapClass::Composed => match fam.k {
            0 => r.min(s) + 1,
            1 => r.min(s),
            _ => (r - 1).min(s),
        },
        MapClass::Multilinear => match fam.k {
            0 => half(r).min(s) + 1,
            1 => half(r).min(s),
            2 => half(r).min(s) - 1,
            _ => half(r).min(s) - 2,
        },
        MapClass::MultilinearInvariantOnBase => match fam.k {
            0 => half(r).min(s) + 1,
            1 => half(r).min(s),
            2 => half(r - 1).min(s),
            _ => half(r - 2).min(s),
        },
        MapClass::MultilinearInvariantOnInterval => {
            return Err(Error::UnsupportedElement("no predicted rate for maps invariant on the interval".into()))
        }
    };
    if fam.family == Family::EMinus {
        // never above the affine order of E⁻ itself: P_m V^k ⊂ E⁻(r, s) V^k
        // holds for m = min(r, s) − 1 (m = min(r, s) when k = 0)
        let own = fam.r.min(fam.s) as i64 + i64::from(fam.k == 0);
        return Ok(rate.min(own));
    }
    Ok(rate)
}

/// Least-squares slope of log(error) against log(1/h).
pub fn fitted_slope(h: &[f64], errors: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| -v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| -v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Below the floor with non-monotone errors.
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RateStudy {
    pub label: String,
    pub family: PolyFamily,
    pub map_class: MapClass,
    /// Refinement parameter per level.
    pub levels: Vec<usize>,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    /// Per-level diagnostic (max deviation of G_h from the identity on shells).
    pub diagnostics: Vec<f64>,
    /// Slope over the last three levels.
    pub slope: f64,
    pub predicted: i64,
}

impl RateStudy {
    fn new(label: String, family: PolyFamily, map_class: MapClass, predicted: i64, rows: Vec<(usize, f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(Error::InvalidArgument("a rate study needs at least 3 levels".into()));
        }
        if rows.iter().any(|r| !(r.2 > 0.0 && r.2.is_finite())) {
            return Err(Error::InvalidArgument(format!("{label}: errors must be positive and finite")));
        }
        let levels = rows.iter().map(|r| r.0).collect();
        let h: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let errors: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let diagnostics = rows.iter().map(|r| r.3).collect();
        let n = h.len();
        let slope = fitted_slope(&h[n - 3..], &errors[n - 3..]);
        Ok(Self { label, family, map_class, levels, h, errors, diagnostics, slope, predicted })
    }

    pub fn monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }

    pub fn meets_floor(&self) -> bool {
        self.slope >= self.predicted as f64 - RATE_SLACK
    }

    pub fn verdict(&self) -> Verdict {
        if self.meets_floor() {
            Verdict::Pass
        } else if !self.monotone() {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        }
    }
}

/// Unit cube of prisms (or hexes) with n cells per direction, deformed per
/// the map class. Jittered meshes use seed + n so each level is perturbed
/// independently.
pub fn cube_mesh(n: usize, base: CellShape, class: MapClass, seed: u64) -> Result<Mesh> {
    let b = build_rect(n, n, 1.0, 1.0, base)?;
    let m = extrude(&b, n, &vec![1.0 / n as f64; n], None)?;
    let amp = JITTER / n as f64;
    match class {
        MapClass::Affine => Ok(m),
        MapClass::Multilinear => jitter(&m, amp, seed.wrapping_add(n as u64), false),
        MapClass::MultilinearInvariantOnBase => jitter(&m, amp, seed.wrapping_add(n as u64), true),
        _ => Err(Error::InvalidArgument(format!("no cube mesh for map class {class}"))),
    }
}

/// L2-projection rate study on the unit cube.
pub fn run_rate_study(fam: PolyFamily, class: MapClass, levels: &[usize], target: &Target, seed: u64) -> Result<RateStudy> {
    let predicted = predicted_rate(fam, class)?;
    let shape = CellShape::Prism;
    let element = build_reference_element(fam, shape)?;
    let rows: Result<Vec<_>> = levels
        .par_iter()
        .map(|&n| {
            let mesh = Arc::new(cube_mesh(n, CellShape::Triangle, class, seed)?);
            let space = FunctionSpace::new(mesh, element.clone())?;
            let (_, e) = l2_project(&space, target)?;
            Ok((n, 1.0 / n as f64, e, 0.0))
        })
        .collect();
    RateStudy::new(format!("{} {class}", fam.name()), fam, class, predicted, rows?)
}

/// Shell radii used by the shell studies.
pub const SHELL_A: f64 = 1.0;
pub const SHELL_B: f64 = 1.5;

/// Shell level `l`: icosahedral base refined `l` times, 2^l layers, cells
/// mapped through the radially projected shell map.
pub fn shell_level(l: usize) -> Result<Mesh> {
    let base = build_icosahedral_sphere(l, SHELL_A)?;
    let mut m = build_shell_mesh(&base, 1 << l, SHELL_A, SHELL_B)?;
    if let Some(s) = m.shell.as_mut() {
        s.project = true;
    }
    Ok(m)
}

/// max |G_h(x) − x| over quadrature points: distance between the
/// piecewise-linear shell and its radial projection.
pub fn shell_deviation(mesh: &Mesh) -> f64 {
    let mut flat = mesh.clone();
    if let Some(s) = flat.shell.as_mut() {
        s.project = false;
    }
    let q = quadrature_rule(mesh.shape, 4);
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            q.points
                .iter()
                .map(|p| {
                    let (a, _) = mesh.map_point(c, p);
                    let (b, _) = flat.map_point(c, p);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                })
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

fn shell_h(l: usize) -> f64 {
    1.0 / (1u64 << l) as f64
}

/// L2-projection rates on spherical-shell meshes.
pub fn run_shell_l2(fam: PolyFamily, levels: &[usize], target: &Target) -> Result<RateStudy> {
    let predicted = predicted_rate(fam, MapClass::Composed)?;
    let element = build_reference_element(fam, CellShape::Prism)?;
    let rows: Result<Vec<_>> = levels
        .par_iter()
        .map(|&l| {
            let mesh = Arc::new(shell_level(l)?);
            let dev = shell_deviation(&mesh);
            let space = FunctionSpace::new(mesh, element.clone())?;
            let (_, e) = l2_project(&space, target)?;
            Ok((l, shell_h(l), e, dev))
        })
        .collect();
    RateStudy::new(format!("shell {}", fam.name()), fam, MapClass::Composed, predicted, rows?)
}

/// Manufactured solution u = (r − a)(b − r) z/r of −Δu + u = f on the
/// shell, vanishing on both spheres.
pub struct ShellHelmholtz {
    pub a: f64,
    pub b: f64,
}

impl ShellHelmholtz {
    fn g(&self, r: f64) -> (f64, f64, f64) {
        let (a, b) = (self.a, self.b);
        ((r - a) * (b - r), a + b - 2.0 * r, -2.0)
    }

    pub fn u(&self, x: &[f64; 3]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        self.g(r).0 * x[2] / r
    }

    /// σ = −∇u
    pub fn sigma(&self, x: &[f64; 3]) -> [f64; 3] {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let (g, gp, _) = self.g(r);
        let y = x[2] / r;
        let mut s = [0.0; 3];
        for i in 0..3 {
            let dy = if i == 2 { 1.0 / r } else { 0.0 } - x[2] * x[i] / (r * r * r);
            s[i] = -(gp * y * x[i] / r + g * dy);
        }
        s
    }

    /// f = −Δu + u, with z/r a degree-one spherical harmonic.
    pub fn f(&self, x: &[f64; 3]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let (g, gp, gpp) = self.g(r);
        let lap = (gpp + 2.0 * gp / r - 2.0 * g / (r * r)) * x[2] / r;
        -lap + self.u(x)
    }
}

/// Errors of the mixed Helmholtz solve: (σ in V², u in V³).
#[derive(Debug, Clone, Copy)]
pub struct MixedErrors {
    pub sigma: f64,
    pub u: f64,
}

/// Solve ⟨τ,σ⟩ − ⟨∇·τ,u⟩ = 0, ⟨v,∇·σ⟩ + ⟨v,u⟩ = ⟨v,f⟩ on a mesh.
pub fn mixed_helmholtz(
    v2: &FunctionSpace,
    v3: &FunctionSpace,
    f: &(dyn Fn(&[f64; 3]) -> f64 + Sync),
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m2 = assemble_mass(v2)?;
    let m3 = assemble_mass(v3)?;
    let d = assemble_form(v3, v2, &[Form::Cell { test: Op::Value, trial: Op::D, coef: Coef::One }], None)?;
    let rhs = assemble_rhs(v3, &|x| vec![f(x)], Some(2 * v3.element.degree + 6))?;
    let zero = vec![0.0; v2.ndofs];
    let (sigma, p, _) = solve_mixed(&m2, &d, Some(&m3), &zero, &rhs, cfg, None)?;
    Ok((sigma, p.iter().map(|v| -v).collect()))
}

/// Shell mixed Helmholtz study for E⁻(r, s): one study per field (k = 2, 3).
pub fn run_shell_helmholtz(levels: &[usize], r: usize, s: usize) -> Result<(RateStudy, RateStudy)> {
    let f2 = PolyFamily::tensor(Family::EMinus, r, s, 2);
    let f3 = PolyFamily::tensor(Family::EMinus, r, s, 3);
    let e2 = build_reference_element(f2, CellShape::Prism)?;
    let e3 = build_reference_element(f3, CellShape::Prism)?;
    let ms = ShellHelmholtz { a: SHELL_A, b: SHELL_B };
    let cfg = SolverConfig { rtol: 1e-11, atol: 1e-300, max_iter: 20_000, precond: Preconditioner::GaussSeidel };
    let rows: Result<Vec<_>> = levels
        .par_iter()
        .map(|&l| {
            let mesh = Arc::new(shell_level(l)?);
            let dev = shell_deviation(&mesh);
            let v2 = FunctionSpace::new(mesh.clone(), e2.clone())?;
            let v3 = FunctionSpace::new(mesh, e3.clone())?;
            let (sigma, u) = mixed_helmholtz(&v2, &v3, &|x| ms.f(x), &cfg)?;
            let deg = 2 * v2.element.degree + 4;
            let es = l2_error(&v2, &sigma, &|x| ms.sigma(x).to_vec(), Some(deg))?;
            let eu = l2_error(&v3, &u, &|x| vec![ms.u(x)], Some(deg))?;
            Ok((l, shell_h(l), MixedErrors { sigma: es, u: eu }, dev))
        })
        .collect();
    let rows = rows?;
    let sig = rows.iter().map(|(l, h, e, d)| (*l, *h, e.sigma, *d)).collect();
    let u = rows.iter().map(|(l, h, e, d)| (*l, *h, e.u, *d)).collect();
    Ok((
        RateStudy::new(format!("shell helmholtz sigma {}", f2.name()), f2, MapClass::Composed, predicted_rate(f2, MapClass::Composed)?, sig)?,
        RateStudy::new(format!("shell helmholtz u {}", f3.name()), f3, MapClass::Composed, predicted_rate(f3, MapClass::Composed)?, u)?,
    ))
}

/// Largest least-squares residual of the basis of `small` in the span of
/// the basis of `big`, sampled on the reference cell.
pub fn containment_residual(small: PolyFamily, big: PolyFamily, shape: CellShape) -> Result<f64> {
    let es = build_reference_element(small, shape)?;
    let eb = build_reference_element(big, shape)?;
    let pts = quadrature_rule(shape, 8).points;
    let bvals: Vec<Vec<Vec<f64>>> = pts.iter().map(|p| eb.eval_basis(p)).collect();
    let svals: Vec<Vec<Vec<f64>>> = pts.iter().map(|p| es.eval_basis(p)).collect();
    let nc = bvals[0][0].len();
    let rows = pts.len() * nc;
    let a = DMatrix::from_fn(rows, eb.dim(), |i, j| bvals[i / nc][j][i % nc]);
    let svd = a.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for j in 0..es.dim() {
        let b = DVector::from_fn(rows, |i, _| svals[i / nc][j][i % nc]);
        let x = svd.solve(&b, 1e-12).map_err(|e| Error::Singular(e.to_string()))?;
        let res = (&a * x - &b).norm() / b.norm().max(1e-300);
        worst = worst.max(res);
    }
    Ok(worst)
}

/// Per-cell reference-basis sample used by tests: L2 norm of a field.
pub fn l2_norm(space: &FunctionSpace, c: &[f64]) -> Result<f64> {
    let tt = CellTabulator::new(space, 2 * space.element.degree + 2, TabOpts::VALUES);
    let mut s = 0.0;
    for cell in 0..space.mesh.num_cells() {
        let t = tt.cell(cell)?;
        let lc = space.local_coeffs(cell, c);
        for q in 0..t.nq {
            s += t.w[q] * t.eval_v(q, &lc).iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(s.sqrt())
}
