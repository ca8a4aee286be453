//! Temperature space, Exner pressure and column-wise hydrostatic balance.
//!
//! The balance equation tested against the vertical velocity space is
//!
//! ```text
//! −∫_c ∇·(θw) Π̃ dx − ∫_c g w·r̂ dx = 0   for all w in V^{2,v}(c)
//! ```
//!
//! for Π̃ = −Π, so that the physical Exner pressure satisfies θ ∂Π/∂z = −g.
//! `hydrostatic_pi` returns Π; `hydrostatic_theta` takes the datum Π̃.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_cells, assemble_cell_vector, eval_at, project, CellTabulator, TabOpts};
use crate::element::{build_reference_element, horizontal_part, temperature_space, vertical_part, Family, PolyFamily};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, SolverConfig, SparseMatrix};
use crate::mesh::{column_mesh, Mesh};
use crate::space::FunctionSpace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoParams {
    pub r_d: f64,
    pub c_p: f64,
    pub p0: f64,
    pub g: f64,
    /// Multiply θ by c_p in the balance equation (c_p θ ∂Π/∂z = −g).
    pub cp_in_balance: bool,
}

impl Default for ThermoParams {
    fn default() -> Self {
        Self { r_d: 287.0, c_p: 1004.5, p0: 1e5, g: 9.81, cp_in_balance: false }
    }
}

impl ThermoParams {
    pub fn kappa(&self) -> f64 {
        self.r_d / self.c_p
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kappa();
        if !(self.r_d > 0.0 && self.c_p > 0.0 && self.p0 > 0.0 && self.g > 0.0 && k > 0.0 && k < 1.0) {
            return Err(Error::InvalidArgument(format!("thermodynamic constants must be positive with 0 < κ < 1 (κ = {k})")));
        }
        Ok(())
    }

    fn theta_scale(&self) -> f64 {
        if self.cp_in_balance {
            self.c_p
        } else {
            1.0
        }
    }
}

/// L2 projection of (R_d ρθ / p₀)^{κ/(1−κ)} into the density space.
pub fn exner(v3: &FunctionSpace, rho: &[f64], vt: &FunctionSpace, theta: &[f64], params: &ThermoParams) -> Result<Vec<f64>> {
    params.validate()?;
    let k = params.kappa();
    let expo = k / (1.0 - k);
    let deg = 2 * v3.element.degree.max(vt.element.degree) + 4;
    let tt = CellTabulator::new(vt, deg, TabOpts::VALUES);
    let tr = CellTabulator::new(v3, deg, TabOpts::VALUES);
    let rhs = assemble_cell_vector(v3, deg, TabOpts::VALUES, |c, t, l| {
        let (a, b) = (tr.cell(c)?, tt.cell(c)?);
        let (lr, lt) = (v3.local_coeffs(c, rho), vt.local_coeffs(c, theta));
        for q in 0..t.nq {
            let rt = a.eval_v(q, &lr)[0] * b.eval_v(q, &lt)[0];
            if rt <= 0.0 {
                return Err(Error::NonPositive(format!("ρθ = {rt:e} in cell {c}")));
            }
            let pi = (params.r_d * rt / params.p0).powf(expo);
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[q] * t.v(q, i)[0] * pi;
            }
        }
        Ok(())
    })?;
    let m = crate::assembly::assemble_mass(v3)?;
    Ok(cg_solve(&m, &rhs, &SolverConfig::tight(), None)?.0)
}

/// Normalisation of the column Exner pressure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiNormalisation {
    /// Zero column mean (the space V̄³(c)).
    MeanFree,
    /// Prescribed mean over the lowest cell.
    Surface(f64),
}

/// The restricted spaces of one column, with its own column mesh.
pub struct ColumnProblem {
    pub column: usize,
    pub mesh: Arc<Mesh>,
    /// V^{2,v}(c)
    pub vv: FunctionSpace,
    /// V³(c)
    pub v3: FunctionSpace,
    /// V^t(c), sharing the DOF layout of V^{2,v}(c)
    pub vt: FunctionSpace,
    /// V^{2,v} DOFs with zero normal flux at the top and bottom.
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    qdeg: usize,
}

/// (V^{2,v}, V³, V^t, V^{2,h}) reference elements of E⁻(r, s).
pub fn column_elements(
    shape: crate::reference::CellShape,
    r: usize,
    s: usize,
) -> Result<(crate::element::Element, crate::element::Element, crate::element::Element, crate::element::Element)> {
    let v2 = build_reference_element(PolyFamily::tensor(Family::EMinus, r, s, 2), shape)?;
    let v3 = build_reference_element(PolyFamily::tensor(Family::EMinus, r, s, 3), shape)?;
    let vv = vertical_part(&v2)?;
    let vt = temperature_space(&vv)?;
    let vh = horizontal_part(&v2)?;
    Ok((vv, v3, vt, vh))
}

fn upward(x: &[f64; 3], shell: bool) -> [f64; 3] {
    if shell {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        [x[0] / n, x[1] / n, x[2] / n]
    } else {
        [0.0, 0.0, 1.0]
    }
}

impl ColumnProblem {
    pub fn new(mesh: &Mesh, column: usize, r: usize, s: usize) -> Result<Self> {
        let cm = Arc::new(column_mesh(mesh, column)?);
        Self::on_column_mesh(cm, column, r, s)
    }

    pub fn on_column_mesh(mesh: Arc<Mesh>, column: usize, r: usize, s: usize) -> Result<Self> {
        let layers = mesh.layers().ok_or_else(|| Error::InvalidArgument("column mesh must be extruded".into()))?;
        let (vve, v3e, vte, _) = column_elements(mesh.shape, r, s)?;
        let vv = FunctionSpace::new(mesh.clone(), vve)?;
        let v3 = FunctionSpace::new(mesh.clone(), v3e)?;
        let vt = FunctionSpace::new(mesh.clone(), vte)?;
        if !vv.same_layout(&vt) {
            return Err(Error::Incompatible("temperature space must share the vertical velocity layout".into()));
        }
        // DOFs whose basis function has nonzero flux through the bottom of
        // the first cell or the top of the last one.
        let e = &vv.element;
        let probe = [[0.2, 0.2], [0.3, 0.5], [0.6, 0.1]];
        let mut is_bnd = vec![false; vv.ndofs];
        for (cell, z) in [(0, 0.0), (layers - 1, 1.0)] {
            for p in &probe {
                let vals = e.eval_basis(&[p[0], p[1], z]);
                for (i, v) in vals.iter().enumerate() {
                    if v[2].abs() > 1e-12 {
                        is_bnd[vv.dofs(cell)[i]] = true;
                    }
                }
            }
        }
        let interior = (0..vv.ndofs).filter(|d| !is_bnd[*d]).collect();
        let boundary = (0..vv.ndofs).filter(|d| is_bnd[*d]).collect();
        let qdeg = 2 * vv.element.degree.max(v3.element.degree) + 2;
        // κ = r̂·J r̂ bounded away from zero
        for c in 0..mesh.num_cells() {
            let q = crate::quadrature::quadrature_rule(mesh.shape, 2);
            for p in &q.points {
                let j = mesh.jacobian(c, p);
                if j.m[2][2] <= 1e-6 * mesh.cell_diameter(c) {
                    return Err(Error::LayerCollapse { column, layer: c, height: j.m[2][2] });
                }
            }
        }
        Ok(Self { column, mesh, vv, v3, vt, interior, boundary, qdeg })
    }

    pub fn layers(&self) -> usize {
        self.mesh.layers().unwrap_or(0)
    }

    /// L2 projection of a function into V^t(c).
    pub fn project_theta(&self, f: &(dyn Fn(&[f64; 3]) -> f64 + Sync)) -> Result<Vec<f64>> {
        project(&self.vt, &|x| vec![f(x)], Some(self.qdeg + 2))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let tab = CellTabulator::new(&self.vt, self.qdeg, TabOpts::VALUES);
        for c in 0..self.mesh.num_cells() {
            let t = tab.cell(c)?;
            let lc = self.vt.local_coeffs(c, theta);
            for q in 0..t.nq {
                let v = t.eval_v(q, &lc)[0];
                if v <= 0.0 {
                    return Err(Error::NonPositive(format!("θ = {v:e} in layer {c} of column {}", self.column)));
                }
            }
        }
        Ok(())
    }

    /// B[i][j] = ∫ φ_i ∇·(θ w_j) (rows V³, columns V^{2,v}).
    fn theta_divergence(&self, theta: &[f64], params: &ThermoParams) -> Result<SparseMatrix> {
        let ts = params.theta_scale();
        let tt = CellTabulator::new(&self.vt, self.qdeg, TabOpts { deriv: false, grad: true });
        assemble_cells(&self.v3, &self.vv, self.qdeg, TabOpts::VALUES, TabOpts::DERIV, |c, a, b, m| {
            let t = tt.cell(c)?;
            let lt = self.vt.local_coeffs(c, theta);
            for q in 0..a.nq {
                let th = ts * t.eval_v(q, &lt)[0];
                let gth: Vec<f64> = t.eval_g(q, &lt).iter().map(|v| ts * v).collect();
                for j in 0..b.n {
                    let w = b.v(q, j);
                    let d = th * b.d(q, j)[0] + w.iter().zip(&gth).map(|(x, y)| x * y).sum::<f64>();
                    for i in 0..a.n {
                        m[(i, j)] += a.w[q] * a.v(q, i)[0] * d;
                    }
                }
            }
            Ok(())
        })
    }

    /// G_i = ∫ g w_i·r̂.
    fn gravity(&self, params: &ThermoParams) -> Result<Vec<f64>> {
        let shell = self.mesh.shell.is_some();
        assemble_cell_vector(&self.vv, self.qdeg, TabOpts::VALUES, |_, t, l| {
            for q in 0..t.nq {
                let r = upward(&t.x[q], shell);
                for (i, li) in l.iter_mut().enumerate() {
                    *li += t.w[q] * params.g * t.v(q, i).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Ok(())
        })
    }
}

/// Exner pressure of a column in balance with θ.
#[derive(Debug, Clone)]
pub struct PiSolution {
    /// Π in V³(c) (physical sign: decreasing upward for θ > 0).
    pub pi: Vec<f64>,
    /// Norm of the auxiliary velocity, which vanishes for an exact balance.
    pub v_norm: f64,
    /// max |residual| / max |gravity forcing| over V^{2,v}(c).
    pub residual: f64,
}

/// Relative residual of the balance equation for (θ, Π) over V^{2,v}(c)
/// with zero normal flux at top and bottom.
pub fn balance_residual(prob: &ColumnProblem, theta: &[f64], pi: &[f64], params: &ThermoParams) -> Result<f64> {
    let b = prob.theta_divergence(theta, params)?;
    let g = prob.gravity(params)?;
    let btp = b.matvec_t(pi);
    let mut rmax: f64 = 0.0;
    let mut gmax: f64 = 0.0;
    for &i in &prob.interior {
        rmax = rmax.max((btp[i] - g[i]).abs());
        gmax = gmax.max(g[i].abs());
    }
    Ok(rmax / gmax.max(1e-300))
}

/// Solve the column saddle-point system
/// ∫w·v + ∫∇·(θw)Π̃ = −∫g w·r̂, ∫φ∇·(θv) = 0 and return Π = −Π̃.
pub fn hydrostatic_pi(prob: &ColumnProblem, theta: &[f64], params: &ThermoParams, norm: PiNormalisation) -> Result<PiSolution> {
    params.validate()?;
    prob.check_theta(theta)?;
    let b = prob.theta_divergence(theta, params)?.to_dense();
    let mv = crate::assembly::assemble_mass(&prob.vv)?.to_dense();
    let g = prob.gravity(params)?;
    let int = &prob.interior;
    let (ni, n3) = (int.len(), prob.v3.ndofs);
    let n = ni + n3 + 1;
    let mut k = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (a, &i) in int.iter().enumerate() {
        for (bb, &j) in int.iter().enumerate() {
            k[(a, bb)] = mv[(i, j)];
        }
        for p in 0..n3 {
            k[(a, ni + p)] = b[(p, i)];
            k[(ni + p, a)] = b[(p, i)];
        }
        rhs[a] = -g[i];
    }
    let (weights, target) = match norm {
        PiNormalisation::MeanFree => (crate::assembly::assemble_rhs(&prob.v3, &|_| vec![1.0], None)?, 0.0),
        PiNormalisation::Surface(v) => {
            let mut w = vec![0.0; n3];
            let t = CellTabulator::new(&prob.v3, prob.qdeg, TabOpts::VALUES).cell(0)?;
            let vol = prob.mesh.cell_volume(0);
            for q in 0..t.nq {
                for (i, d) in prob.v3.dofs(0).iter().enumerate() {
                    w[*d] += t.w[q] * t.v(q, i)[0] / vol;
                }
            }
            (w, -v)
        }
    };
    for p in 0..n3 {
        k[(ni + p, n - 1)] = weights[p];
        k[(n - 1, ni + p)] = weights[p];
    }
    rhs[n - 1] = target;
    let x = k.lu().solve(&rhs).ok_or_else(|| Error::Singular(format!("hydrostatic system of column {}", prob.column)))?;
    let v_norm = x.rows(0, ni).norm();
    let pi: Vec<f64> = x.rows(ni, n3).iter().map(|v| -v).collect();
    let residual = balance_residual(prob, theta, &pi, params)?;
    Ok(PiSolution { pi, v_norm, residual })
}

/// Relative slack on interlayer jumps when Π̃ has vertical degree ≥ 1:
/// the discrete jumps are then discretisation-error sized and may carry
/// either sign while the interior derivative provides the stability.
const JUMP_SLACK: f64 = 1e-2;

fn check_stability(prob: &ColumnProblem, pi_datum: &[f64]) -> Result<()> {
    let layers = prob.layers();
    let v3 = &prob.v3;
    let vdeg = v3.element.blocks.first().map_or(0, |b| b.vertical.degree);
    let q2 = crate::quadrature::quadrature_rule(prob.mesh.shape.base().expect("extruded cell"), 4);
    let mut any_positive = false;
    if vdeg >= 1 {
        let q = crate::quadrature::quadrature_rule(prob.mesh.shape, 2);
        let h = 1e-5;
        for c in 0..layers {
            for p in &q.points {
                let up = eval_at(v3, pi_datum, c, &[p[0], p[1], p[2] + h])?[0];
                let dn = eval_at(v3, pi_datum, c, &[p[0], p[1], p[2] - h])?[0];
                let dz = (up - dn) / (2.0 * h);
                if !(dz > 0.0) {
                    return Err(Error::Instability {
                        location: format!("column {}, layer {c}", prob.column),
                        detail: format!("∂Π/∂z = {dz:e} must be positive"),
                    });
                }
                any_positive = true;
            }
        }
    }
    for l in 0..layers.saturating_sub(1) {
        for p in &q2.points {
            let below = eval_at(v3, pi_datum, l, &[p[0], p[1], 1.0])?[0];
            let above = eval_at(v3, pi_datum, l + 1, &[p[0], p[1], 0.0])?[0];
            let jump = above - below;
            let floor = if vdeg >= 1 {
                let spread = (below - eval_at(v3, pi_datum, l, &[p[0], p[1], 0.0])?[0]).abs()
                    + (eval_at(v3, pi_datum, l + 1, &[p[0], p[1], 1.0])?[0] - above).abs();
                -JUMP_SLACK * spread
            } else {
                0.0
            };
            if !(jump > floor) {
                return Err(Error::Instability {
                    location: format!("column {}, facet between layers {l} and {}", prob.column, l + 1),
                    detail: format!("r̂·[[Π]] = {jump:e} must be positive"),
                });
            }
            any_positive |= jump > 0.0;
        }
    }
    if !any_positive {
        return Err(Error::Instability { location: format!("column {}", prob.column), detail: "no stratification: the θ form is degenerate".into() });
    }
    Ok(())
}

/// Recover θ in V̊^t(c) (prescribed top/bottom values, default zero) from a
/// statically stable datum Π̃ (increasing upward, positive upward jumps).
pub fn hydrostatic_theta(prob: &ColumnProblem, pi_datum: &[f64], boundary: Option<&[f64]>, params: &ThermoParams) -> Result<Vec<f64>> {
    params.validate()?;
    check_stability(prob, pi_datum)?;
    let ts = params.theta_scale();
    let tp = CellTabulator::new(&prob.v3, prob.qdeg, TabOpts::VALUES);
    // A[i][j] = −∫ ∇·(ψ_j w_i) Π̃
    let a = assemble_cells(&prob.vv, &prob.vt, prob.qdeg, TabOpts::DERIV, TabOpts { deriv: false, grad: true }, |c, tw, tt, m| {
        let t = tp.cell(c)?;
        let lp = prob.v3.local_coeffs(c, pi_datum);
        for q in 0..tw.nq {
            let pq = t.eval_v(q, &lp)[0];
            for i in 0..tw.n {
                let w = tw.v(q, i);
                let dw = tw.d(q, i)[0];
                for j in 0..tt.n {
                    let d = tt.v(q, j)[0] * dw + w.iter().zip(tt.g(q, j)).map(|(x, y)| x * y).sum::<f64>();
                    m[(i, j)] -= tw.w[q] * ts * d * pq;
                }
            }
        }
        Ok(())
    })?
    .to_dense();
    let g = prob.gravity(params)?;
    let mut theta = vec![0.0; prob.vt.ndofs];
    if let Some(bv) = boundary {
        if bv.len() != prob.boundary.len() {
            return Err(Error::InvalidArgument(format!("{} boundary values for {} boundary DOFs", bv.len(), prob.boundary.len())));
        }
        for (d, v) in prob.boundary.iter().zip(bv) {
            theta[*d] = *v;
        }
    }
    let int = &prob.interior;
    let ni = int.len();
    let mut k = DMatrix::zeros(ni, ni);
    let mut rhs = DVector::zeros(ni);
    for (r, &i) in int.iter().enumerate() {
        for (cidx, &j) in int.iter().enumerate() {
            k[(r, cidx)] = a[(i, j)];
        }
        rhs[r] = g[i] - prob.boundary.iter().map(|&j| a[(i, j)] * theta[j]).sum::<f64>();
    }
    let x = k.lu().solve(&rhs).ok_or_else(|| Error::Singular(format!("temperature system of column {}", prob.column)))?;
    for (r, &i) in int.iter().enumerate() {
        theta[i] = x[r];
    }
    Ok(theta)
}

/// Map each DOF of a space on an extruded mesh to its column; `None` if a
/// DOF is shared between columns.
fn dof_columns(space: &FunctionSpace) -> Option<Vec<usize>> {
    let layers = space.mesh.layers()?;
    let mut col = vec![usize::MAX; space.ndofs];
    for c in 0..space.mesh.num_cells() {
        for d in space.dofs(c) {
            if col[*d] != usize::MAX && col[*d] != c / layers {
                return None;
            }
            col[*d] = c / layers;
        }
    }
    Some(col)
}

/// Whether the assembled hydrostatic operators on the whole mesh only
/// couple DOFs of the same column.
pub fn column_decoupling(mesh: Arc<Mesh>, r: usize, s: usize) -> Result<bool> {
    let (vve, v3e, vte, _) = column_elements(mesh.shape, r, s)?;
    let vv = FunctionSpace::new(mesh.clone(), vve)?;
    let v3 = FunctionSpace::new(mesh.clone(), v3e)?;
    let vt = FunctionSpace::new(mesh, vte)?;
    let (Some(cv), Some(c3)) = (dof_columns(&vv), dof_columns(&v3)) else { return Ok(false) };
    let ones = vec![1.0; vt.ndofs];
    let deg = 2 * vv.element.degree.max(v3.element.degree) + 2;
    let tt = CellTabulator::new(&vt, deg, TabOpts::VALUES);
    let b = assemble_cells(&v3, &vv, deg, TabOpts::VALUES, TabOpts::DERIV, |c, a, bt, m| {
        let t = tt.cell(c)?;
        let lt = vt.local_coeffs(c, &ones);
        for q in 0..a.nq {
            let th = t.eval_v(q, &lt)[0];
            for i in 0..a.n {
                for j in 0..bt.n {
                    m[(i, j)] += a.w[q] * a.v(q, i)[0] * th * bt.d(q, j)[0];
                }
            }
        }
        Ok(())
    })?;
    let mv = crate::assembly::assemble_mass(&vv)?;
    let ok_b = (0..b.nrows).all(|i| b.row(i).all(|(j, v)| v == 0.0 || c3[i] == cv[j]));
    let ok_m = (0..mv.nrows).all(|i| mv.row(i).all(|(j, v)| v == 0.0 || cv[i] == cv[j]));
    Ok(ok_b && ok_m)
}

/// Per-column balanced Π for constant θ₀ on the whole mesh, offset so
/// each column mean matches −g z̄/θ₀, as a field in the global V³.
pub fn balanced_pi(mesh: &Arc<Mesh>, r: usize, s: usize, theta0: f64, params: &ThermoParams) -> Result<(FunctionSpace, Vec<f64>, f64)> {
    let layers = mesh.layers().ok_or_else(|| Error::InvalidArgument("extruded mesh required".into()))?;
    let (_, v3e, _, _) = column_elements(mesh.shape, r, s)?;
    let v3 = FunctionSpace::new(mesh.clone(), v3e)?;
    let ncol = mesh.num_cells() / layers;
    let th = theta0 * params.theta_scale();
    let cols: Result<Vec<(Vec<f64>, f64, ColumnProblem)>> = (0..ncol)
        .into_par_iter()
        .map(|col| {
            let prob = ColumnProblem::new(mesh, col, r, s)?;
            let theta = prob.project_theta(&|_| theta0)?;
            let sol = hydrostatic_pi(&prob, &theta, params, PiNormalisation::MeanFree)?;
            let vol = prob.mesh.total_volume();
            let zbar = crate::assembly::integrate(&prob.v3, &project(&prob.v3, &|x| vec![x[2]], None)?)? / vol;
            let pi: Vec<f64> = sol.pi.iter().zip(&crate::assembly::constant_one(&prob.v3)?).map(|(p, o)| p - params.g * zbar / th * o).collect();
            Ok((pi, sol.residual, prob))
        })
        .collect();
    let mut pi = vec![0.0; v3.ndofs];
    let mut worst: f64 = 0.0;
    for (col, (p, res, prob)) in cols?.into_iter().enumerate() {
        worst = worst.max(res);
        for l in 0..layers {
            for (a, b) in prob.v3.dofs(l).iter().zip(v3.dofs(col * layers + l)) {
                pi[*b] = p[*a];
            }
        }
    }
    Ok((v3, pi, worst))
}

/// Horizontal forcing of a balanced constant-θ state: max over V^{2,h} of
/// |∫∇·(θw)Π − ∫g w·r̂| relative to g·max ∫|w|. Zero on flat columns,
/// nonzero over terrain.
pub fn horizontal_forcing(mesh: &Arc<Mesh>, r: usize, s: usize, theta0: f64, params: &ThermoParams) -> Result<f64> {
    let (v3, pi, _) = balanced_pi(mesh, r, s, theta0, params)?;
    let (_, _, _, vhe) = column_elements(mesh.shape, r, s)?;
    let vh = FunctionSpace::new(mesh.clone(), vhe)?;
    let th = theta0 * params.theta_scale();
    let deg = 2 * vh.element.degree.max(v3.element.degree) + 2;
    let tp = CellTabulator::new(&v3, deg, TabOpts::VALUES);
    let res = assemble_cell_vector(&vh, deg, TabOpts::DERIV, |c, t, l| {
        let a = tp.cell(c)?;
        let lp = v3.local_coeffs(c, &pi);
        for q in 0..t.nq {
            let p = a.eval_v(q, &lp)[0];
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[q] * (th * t.d(q, i)[0] * p - params.g * t.v(q, i)[2]);
            }
        }
        Ok(())
    })?;
    let scale = assemble_cell_vector(&vh, deg, TabOpts::VALUES, |_, t, l| {
        for q in 0..t.nq {
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[q] * params.g * t.v(q, i).iter().map(|v| v * v).sum::<f64>().sqrt();
            }
        }
        Ok(())
    })?;
    let smax = scale.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(res.iter().fold(0.0f64, |m, v| m.max(v.abs())) / smax.max(1e-300))
}
