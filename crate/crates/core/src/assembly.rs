//! Cell and facet assembly of bilinear and linear forms.
//!
//! Basis functions are tabulated on the reference cell, pulled back per
//! quadrature point and multiplied by the global orientation sign. Local
//! blocks are computed in parallel and scattered serially in cell order, so
//! results do not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::element::{exterior_derivative, Element, Mapping};
use crate::error::{Error, Result};
use crate::geometry::{cross, norm, Jacobian};
use crate::linalg::{cg_solve, Preconditioner, SolverConfig, SparseMatrix};
use crate::mesh::facet_geometry;
use crate::quadrature::quadrature_rule;
use crate::space::FunctionSpace;

/// What to tabulate besides values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TabOpts {
    pub deriv: bool,
    pub grad: bool,
}

impl TabOpts {
    pub const VALUES: TabOpts = TabOpts { deriv: false, grad: false };
    pub const DERIV: TabOpts = TabOpts { deriv: true, grad: false };
    pub const ALL: TabOpts = TabOpts { deriv: true, grad: true };
}

/// Reference-cell tabulation of an element at a point set.
#[derive(Debug, Clone)]
pub struct RefTab {
    pub nq: usize,
    pub n: usize,
    pub rvs: usize,
    pub rds: usize,
    pub tdim: usize,
    pub vals: Vec<f64>,
    pub ders: Vec<f64>,
    pub grads: Vec<f64>,
}

pub fn ref_tabulate(e: &Element, pts: &[[f64; 3]], opts: TabOpts) -> RefTab {
    let tdim = e.shape.tdim();
    let n = e.dim();
    let rvs = e.value_size;
    let derivs: Vec<Vec<crate::poly::Poly>> = if opts.deriv && derivative_mapping(e).is_some() {
        e.basis.iter().map(|b| exterior_derivative(e, b)).collect()
    } else {
        vec![]
    };
    let rds = derivs.first().map_or(0, |d| d.len());
    let grads: Vec<Vec<crate::poly::Poly>> = if opts.grad || (opts.deriv && is_identity_vector(e)) {
        e.basis.iter().map(|b| b.iter().flat_map(|p| (0..tdim).map(move |a| p.deriv(a))).collect()).collect()
    } else {
        vec![]
    };
    let nq = pts.len();
    let mut t = RefTab { nq, n, rvs, rds, tdim, vals: Vec::with_capacity(nq * n * rvs), ders: vec![], grads: vec![] };
    for p in pts {
        for b in &e.basis {
            t.vals.extend(b.iter().map(|q| q.eval(p)));
        }
        for d in &derivs {
            t.ders.extend(d.iter().map(|q| q.eval(p)));
        }
        for g in &grads {
            t.grads.extend(g.iter().map(|q| q.eval(p)));
        }
    }
    t
}

fn is_identity_vector(e: &Element) -> bool {
    e.mapping == Mapping::Identity && e.value_size > 1
}

/// Pullback of the reference exterior derivative, if any.
fn derivative_mapping(e: &Element) -> Option<Mapping> {
    if is_identity_vector(e) {
        return None;
    }
    match (e.shape.tdim(), e.form_degree) {
        (1, 0) | (2, 1) | (3, 2) => Some(Mapping::Density),
        (2, 0) | (3, 1) => Some(Mapping::Contravariant),
        (3, 0) => Some(Mapping::Covariant),
        _ => None,
    }
}

/// Physical tabulation on one cell.
#[derive(Debug, Clone)]
pub struct Tab {
    pub nq: usize,
    pub n: usize,
    pub vs: usize,
    pub ds: usize,
    pub gdim: usize,
    pub w: Vec<f64>,
    pub x: Vec<[f64; 3]>,
    pub jac: Vec<Jacobian>,
    pub det: Vec<f64>,
    pub val: Vec<f64>,
    pub der: Vec<f64>,
    /// `[q][i][component][gdim]`
    pub grad: Vec<f64>,
}

impl Tab {
    #[inline]
    pub fn v(&self, q: usize, i: usize) -> &[f64] {
        let o = (q * self.n + i) * self.vs;
        &self.val[o..o + self.vs]
    }

    #[inline]
    pub fn d(&self, q: usize, i: usize) -> &[f64] {
        let o = (q * self.n + i) * self.ds;
        &self.der[o..o + self.ds]
    }

    #[inline]
    pub fn g(&self, q: usize, i: usize) -> &[f64] {
        let s = self.vs * self.gdim;
        let o = (q * self.n + i) * s;
        &self.grad[o..o + s]
    }

    pub fn eval_v(&self, q: usize, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vs];
        for (i, ci) in c.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.v(q, i)) {
                *o += ci * v;
            }
        }
        out
    }

    pub fn eval_d(&self, q: usize, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ds];
        for (i, ci) in c.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.d(q, i)) {
                *o += ci * v;
            }
        }
        out
    }

    pub fn eval_g(&self, q: usize, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vs * self.gdim];
        for (i, ci) in c.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.g(q, i)) {
                *o += ci * v;
            }
        }
        out
    }

    /// Unit normal of a surface cell (zero vector for volume cells).
    pub fn surface_normal(&self, q: usize) -> [f64; 3] {
        surface_normal(&self.jac[q])
    }

    /// Rotate a tangent vector by +90 degrees: (-v_y, v_x) in the plane,
    /// n x v on a surface.
    pub fn perp(&self, q: usize, v: &[f64]) -> Vec<f64> {
        perp(&self.jac[q], v)
    }
}

pub fn surface_normal(j: &Jacobian) -> [f64; 3] {
    if j.gdim == 3 && j.tdim == 2 {
        let a = [j.m[0][0], j.m[1][0], j.m[2][0]];
        let b = [j.m[0][1], j.m[1][1], j.m[2][1]];
        let n = cross(&a, &b);
        let l = norm(&n);
        [n[0] / l, n[1] / l, n[2] / l]
    } else {
        [0.0; 3]
    }
}

pub fn perp(j: &Jacobian, v: &[f64]) -> Vec<f64> {
    if j.gdim == 2 {
        vec![-v[1], v[0]]
    } else {
        let n = surface_normal(j);
        cross(&n, &[v[0], v[1], v[2]]).to_vec()
    }
}

fn affine_check(space: &FunctionSpace, c: usize) -> Result<()> {
    if space.mesh.cell_affine[c] || space.element.mapping == Mapping::Identity {
        Ok(())
    } else {
        Err(Error::NonAffine(format!("gradient of {} on cell {c}", space.element.name)))
    }
}

/// Tabulate on cell `c` at reference points with the given weights (which
/// are multiplied by |det J| when `volume` is set).
pub fn tabulate_points(
    space: &FunctionSpace,
    c: usize,
    rt: &RefTab,
    pts: &[[f64; 3]],
    weights: &[f64],
    volume: bool,
) -> Result<Tab> {
    let mesh = &space.mesh;
    let e = &space.element;
    let signs = space.signs(c);
    let gdim = mesh.gdim;
    let n = rt.n;
    let vs = match e.mapping {
        Mapping::Identity | Mapping::Density => e.value_size,
        _ => gdim,
    };
    let dmap = derivative_mapping(e);
    let ds = if is_identity_vector(e) && !rt.grads.is_empty() {
        1
    } else if rt.rds == 0 {
        0
    } else {
        match dmap {
            Some(Mapping::Density) => 1,
            Some(_) => gdim,
            None => 0,
        }
    };
    let want_grad = !rt.grads.is_empty();
    if want_grad && !is_identity_vector(e) {
        affine_check(space, c)?;
    }
    let nq = pts.len();
    let mut t = Tab {
        nq,
        n,
        vs,
        ds,
        gdim,
        w: Vec::with_capacity(nq),
        x: Vec::with_capacity(nq),
        jac: Vec::with_capacity(nq),
        det: Vec::with_capacity(nq),
        val: Vec::with_capacity(nq * n * vs),
        der: Vec::with_capacity(nq * n * ds),
        grad: Vec::with_capacity(if want_grad { nq * n * vs * gdim } else { 0 }),
    };
    let tdim = rt.tdim;
    for (q, p) in pts.iter().enumerate() {
        let (x, j) = mesh.map_point(c, p);
        let det = j.det();
        if !(det > 0.0) {
            return Err(Error::SingularJacobian { cell: c, det });
        }
        let k = j.inverse_transpose();
        t.w.push(if volume { weights[q] * det } else { weights[q] });
        t.x.push(x);
        t.jac.push(j);
        t.det.push(det);
        for i in 0..n {
            let s = signs[i];
            let rv = &rt.vals[(q * n + i) * rt.rvs..(q * n + i + 1) * rt.rvs];
            let pv = match e.mapping {
                Mapping::Identity => rv.to_vec(),
                m => crate::element::apply_mapping(m, rv, &j, det),
            };
            t.val.extend(pv.iter().map(|v| v * s));
            if ds > 0 && !is_identity_vector(e) {
                let rd = &rt.ders[(q * n + i) * rt.rds..(q * n + i + 1) * rt.rds];
                let pd = crate::element::apply_mapping(dmap.unwrap(), rd, &j, det);
                t.der.extend(pd.iter().map(|v| v * s));
            }
            if want_grad || (ds > 0 && is_identity_vector(e)) {
                let rg = &rt.grads[(q * n + i) * rt.rvs * tdim..(q * n + i + 1) * rt.rvs * tdim];
                let g = physical_gradient(e.mapping, rg, rt.rvs, tdim, &j, &k, det, gdim);
                if is_identity_vector(e) && ds > 0 {
                    let div: f64 = (0..rt.rvs.min(gdim)).map(|a| g[a * gdim + a]).sum();
                    t.der.push(div * s);
                }
                if want_grad {
                    t.grad.extend(g.iter().map(|v| v * s));
                }
            }
        }
    }
    Ok(t)
}

/// `out[i*gdim + jx] = d u_i / d x_jx` for the pulled-back field (valid for
/// constant Jacobians unless the mapping is the identity).
#[allow(clippy::too_many_arguments)]
fn physical_gradient(
    mapping: Mapping,
    rg: &[f64],
    rvs: usize,
    tdim: usize,
    j: &Jacobian,
    k: &[[f64; 3]; 3],
    det: f64,
    gdim: usize,
) -> Vec<f64> {
    // reference gradient mapped in x: dr[a][jx] = sum_b d_b u_a K[jx][b]
    let mut dr = vec![0.0; rvs * gdim];
    for a in 0..rvs {
        for jx in 0..gdim {
            dr[a * gdim + jx] = (0..tdim).map(|b| rg[a * tdim + b] * k[jx][b]).sum();
        }
    }
    match mapping {
        Mapping::Identity => dr,
        Mapping::Density => dr.iter().map(|v| v / det).collect(),
        Mapping::Contravariant => {
            let mut out = vec![0.0; gdim * gdim];
            for i in 0..gdim {
                for jx in 0..gdim {
                    out[i * gdim + jx] = (0..tdim).map(|a| j.m[i][a] * dr[a * gdim + jx]).sum::<f64>() / det;
                }
            }
            out
        }
        Mapping::Covariant => {
            let mut out = vec![0.0; gdim * gdim];
            for i in 0..gdim {
                for jx in 0..gdim {
                    out[i * gdim + jx] = (0..tdim).map(|a| k[i][a] * dr[a * gdim + jx]).sum();
                }
            }
            out
        }
    }
}

pub fn default_degree(a: &Element, b: &Element) -> usize {
    2 * a.degree.max(b.degree) + 2
}

/// Tabulation of a space over every cell with a common rule.
pub struct CellTabulator<'a> {
    pub space: &'a FunctionSpace,
    pub rt: RefTab,
    pub pts: Vec<[f64; 3]>,
    pub wts: Vec<f64>,
}

impl<'a> CellTabulator<'a> {
    pub fn new(space: &'a FunctionSpace, degree: usize, opts: TabOpts) -> Self {
        let q = quadrature_rule(space.mesh.shape, degree);
        let rt = ref_tabulate(&space.element, &q.points, opts);
        Self { space, rt, pts: q.points, wts: q.weights }
    }

    pub fn cell(&self, c: usize) -> Result<Tab> {
        tabulate_points(self.space, c, &self.rt, &self.pts, &self.wts, true)
    }
}

fn scatter(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    blocks: Vec<(Vec<usize>, Vec<usize>, DMatrix<f64>)>,
) -> SparseMatrix {
    let total: usize = blocks.iter().map(|b| b.2.len()).sum();
    let (mut r, mut c, mut v) = (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
    for (rows, cols, a) in blocks {
        for (ii, &gi) in rows.iter().enumerate() {
            for (jj, &gj) in cols.iter().enumerate() {
                let x = a[(ii, jj)];
                if x != 0.0 {
                    r.push(gi);
                    c.push(gj);
                    v.push(x);
                }
            }
        }
    }
    SparseMatrix::from_triplets(test.ndofs, trial.ndofs, &r, &c, &v)
}

/// Generic cell assembly: `kernel(cell, test_tab, trial_tab, local)` fills
/// the local block (rows = test DOFs).
pub fn assemble_cells<F>(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    degree: usize,
    test_opts: TabOpts,
    trial_opts: TabOpts,
    kernel: F,
) -> Result<SparseMatrix>
where
    F: Fn(usize, &Tab, &Tab, &mut DMatrix<f64>) -> Result<()> + Sync,
{
    if !std::sync::Arc::ptr_eq(&test.mesh, &trial.mesh) && test.mesh.num_cells() != trial.mesh.num_cells() {
        return Err(Error::Incompatible("spaces on different meshes".into()));
    }
    let tt = CellTabulator::new(test, degree, test_opts);
    let ts = CellTabulator::new(trial, degree, trial_opts);
    let nc = test.mesh.num_cells();
    let blocks: Result<Vec<_>> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let a = tt.cell(c)?;
            let b = ts.cell(c)?;
            let mut m = DMatrix::zeros(a.n, b.n);
            kernel(c, &a, &b, &mut m)?;
            Ok((test.dofs(c).to_vec(), trial.dofs(c).to_vec(), m))
        })
        .collect();
    Ok(scatter(test, trial, blocks?))
}

/// Generic cell linear form: `kernel(cell, tab, local)`.
pub fn assemble_cell_vector<F>(space: &FunctionSpace, degree: usize, opts: TabOpts, kernel: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &Tab, &mut [f64]) -> Result<()> + Sync,
{
    let tt = CellTabulator::new(space, degree, opts);
    let nc = space.mesh.num_cells();
    let locals: Result<Vec<Vec<f64>>> = (0..nc)
        .into_par_iter()
        .map(|c| {
            let t = tt.cell(c)?;
            let mut l = vec![0.0; t.n];
            kernel(c, &t, &mut l)?;
            Ok(l)
        })
        .collect();
    let mut out = vec![0.0; space.ndofs];
    for (c, l) in locals?.into_iter().enumerate() {
        for (d, v) in space.dofs(c).iter().zip(l) {
            out[*d] += v;
        }
    }
    Ok(out)
}

/// Tabulations of a space on both sides of a facet.
pub struct FacetTabs {
    pub plus: Tab,
    pub minus: Option<Tab>,
    pub normal: Vec<[f64; 3]>,
    pub normal_minus: Vec<[f64; 3]>,
    pub cells: (usize, Option<usize>),
}

pub fn facet_tabulate(space: &FunctionSpace, f: usize, degree: usize, opts: TabOpts) -> Result<FacetTabs> {
    let g = facet_geometry(&space.mesh, f, degree)?;
    let fc = space.mesh.facets[f];
    let rtp = ref_tabulate(&space.element, &g.ref_plus, opts);
    let plus = tabulate_points(space, fc.plus.0, &rtp, &g.ref_plus, &g.weights, false)?;
    let minus = match fc.minus {
        Some((cm, _)) => {
            let rtm = ref_tabulate(&space.element, &g.ref_minus, opts);
            Some(tabulate_points(space, cm, &rtm, &g.ref_minus, &g.weights, false)?)
        }
        None => None,
    };
    Ok(FacetTabs { plus, minus, normal: g.normals_plus, normal_minus: g.normals_minus, cells: (fc.plus.0, fc.minus.map(|m| m.0)) })
}

impl FacetTabs {
    fn dofs(&self, space: &FunctionSpace) -> Vec<usize> {
        let mut d = space.dofs(self.cells.0).to_vec();
        if let Some(m) = self.cells.1 {
            d.extend_from_slice(space.dofs(m));
        }
        d
    }
}

/// Generic facet assembly over all facets (or interior ones only). The
/// local block stacks '+' DOFs then '-' DOFs for both test and trial.
pub fn assemble_facets<F>(
    test: &FunctionSpace,
    trial: &FunctionSpace,
    degree: usize,
    opts: (TabOpts, TabOpts),
    interior_only: bool,
    kernel: F,
) -> Result<SparseMatrix>
where
    F: Fn(usize, &FacetTabs, &FacetTabs, &mut DMatrix<f64>) -> Result<()> + Sync,
{
    let facets: Vec<usize> = (0..test.mesh.facets.len())
        .filter(|&f| !interior_only || test.mesh.facets[f].is_interior())
        .collect();
    let blocks: Result<Vec<_>> = facets
        .par_iter()
        .map(|&f| {
            let a = facet_tabulate(test, f, degree, opts.0)?;
            let b = facet_tabulate(trial, f, degree, opts.1)?;
            let na = a.plus.n * if a.minus.is_some() { 2 } else { 1 };
            let nb = b.plus.n * if b.minus.is_some() { 2 } else { 1 };
            let mut m = DMatrix::zeros(na, nb);
            kernel(f, &a, &b, &mut m)?;
            Ok((a.dofs(test), b.dofs(trial), m))
        })
        .collect();
    Ok(scatter(test, trial, blocks?))
}

/// Generic facet linear form.
pub fn assemble_facet_vector<F>(space: &FunctionSpace, degree: usize, opts: TabOpts, interior_only: bool, kernel: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &FacetTabs, &mut [f64]) -> Result<()> + Sync,
{
    let facets: Vec<usize> = (0..space.mesh.facets.len())
        .filter(|&f| !interior_only || space.mesh.facets[f].is_interior())
        .collect();
    let locals: Result<Vec<_>> = facets
        .par_iter()
        .map(|&f| {
            let a = facet_tabulate(space, f, degree, opts)?;
            let n = a.plus.n * if a.minus.is_some() { 2 } else { 1 };
            let mut l = vec![0.0; n];
            kernel(f, &a, &mut l)?;
            Ok((a.dofs(space), l))
        })
        .collect();
    let mut out = vec![0.0; space.ndofs];
    for (d, l) in locals? {
        for (i, v) in d.iter().zip(l) {
            out[*i] += v;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Form vocabulary
// ---------------------------------------------------------------------------

/// Operator applied to a basis function or coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Value,
    /// The complex derivative: d/dx, perp-grad or div in 2D; grad, curl or
    /// div in 3D.
    D,
    /// Physical gradient (broken gradient for discontinuous spaces).
    Grad,
    /// Rotation of a vector value by +90 degrees.
    Perp,
    /// Divergence of a vector value.
    Div,
}

fn op_values(t: &Tab, q: usize, i: usize, op: Op) -> Vec<f64> {
    match op {
        Op::Value => t.v(q, i).to_vec(),
        Op::D | Op::Div => t.d(q, i).to_vec(),
        Op::Grad => t.g(q, i).to_vec(),
        Op::Perp => t.perp(q, t.v(q, i)),
    }
}

fn op_opts(op: Op) -> TabOpts {
    match op {
        Op::Value | Op::Perp => TabOpts::VALUES,
        Op::D | Op::Div => TabOpts::DERIV,
        Op::Grad => TabOpts { deriv: false, grad: true },
    }
}

/// Scalar weight inside an integral.
#[derive(Clone, Copy)]
pub enum Coef<'a> {
    One,
    Const(f64),
    Func(&'a (dyn Fn(&[f64; 3]) -> f64 + Sync)),
    /// Scalar-valued coefficient field.
    Field(&'a FunctionSpace, &'a [f64]),
}

/// A term in the fixed form vocabulary.
#[derive(Clone, Copy)]
pub enum Form<'a> {
    /// ∫ coef · op(test) : op(trial) dx
    Cell { test: Op, trial: Op, coef: Coef<'a> },
    /// ∫_Γ coef ⟦test⟧ ⟦trial⟧ dS for vector (normal jump) or scalar
    /// (value jump) arguments on interior facets.
    JumpJump { coef: Coef<'a> },
    /// ∫_Γ ⟦u φ⟧ D̃ dS, the upwind DG flux with advecting velocity u
    /// (test φ scalar, trial D scalar).
    UpwindFlux { velocity: (&'a FunctionSpace, &'a [f64]) },
}

fn coef_at(coef: &Coef, c: usize, tab: &Tab, q: usize, cache: &Option<(Tab, Vec<f64>)>) -> f64 {
    match coef {
        Coef::One => 1.0,
        Coef::Const(v) => *v,
        Coef::Func(f) => f(&tab.x[q]),
        Coef::Field(..) => {
            let (t, lc) = cache.as_ref().unwrap();
            let _ = c;
            t.eval_v(q, lc)[0]
        }
    }
}

fn coef_cell_tab(coef: &Coef, c: usize, degree: usize) -> Result<Option<(Tab, Vec<f64>)>> {
    if let Coef::Field(s, v) = coef {
        let q = quadrature_rule(s.mesh.shape, degree);
        let rt = ref_tabulate(&s.element, &q.points, TabOpts::VALUES);
        let t = tabulate_points(s, c, &rt, &q.points, &q.weights, true)?;
        return Ok(Some((t, s.local_coeffs(c, v))));
    }
    Ok(None)
}

/// Assemble a sum of terms from the vocabulary.
pub fn assemble_form(test: &FunctionSpace, trial: &FunctionSpace, forms: &[Form], degree: Option<usize>) -> Result<SparseMatrix> {
    let degree = degree.unwrap_or_else(|| default_degree(&test.element, &trial.element));
    let mut total = SparseMatrix::zeros(test.ndofs, trial.ndofs);
    for form in forms {
        let a = match *form {
            Form::Cell { test: ot, trial: os, coef } => {
                assemble_cells(test, trial, degree, op_opts(ot), op_opts(os), |c, a, b, m| {
                    let cache = coef_cell_tab(&coef, c, degree)?;
                    for q in 0..a.nq {
                        let w = a.w[q] * coef_at(&coef, c, a, q, &cache);
                        let bv: Vec<Vec<f64>> = (0..b.n).map(|j| op_values(b, q, j, os)).collect();
                        for i in 0..a.n {
                            let av = op_values(a, q, i, ot);
                            if av.len() != bv[0].len() {
                                return Err(Error::Incompatible(format!("{ot:?} of {} vs {os:?} of {}", test.element.name, trial.element.name)));
                            }
                            for j in 0..b.n {
                                m[(i, j)] += w * av.iter().zip(&bv[j]).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    Ok(())
                })?
            }
            Form::JumpJump { coef } => assemble_facets(test, trial, degree, (TabOpts::VALUES, TabOpts::VALUES), true, |_, a, b, m| {
                let ja = jumps(a);
                let jb = jumps(b);
                for q in 0..a.plus.nq {
                    let w = a.plus.w[q]
                        * match coef {
                            Coef::One => 1.0,
                            Coef::Const(v) => v,
                            Coef::Func(f) => f(&a.plus.x[q]),
                            Coef::Field(..) => return Err(Error::InvalidArgument("field weights on facets".into())),
                        };
                    for (i, ji) in ja[q].iter().enumerate() {
                        for (j, jj) in jb[q].iter().enumerate() {
                            m[(i, j)] += w * ji * jj;
                        }
                    }
                }
                Ok(())
            })?,
            Form::UpwindFlux { velocity } => upwind_flux_matrix(test, trial, velocity, degree)?,
        };
        total = total.add(1.0, &a, 1.0);
    }
    Ok(total)
}

/// Per point, the jump of every stacked basis function: normal jump for
/// vectors, value jump `φ⁺ - φ⁻` (with n⁺ orientation) for scalars.
fn jumps(t: &FacetTabs) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(t.plus.nq);
    for q in 0..t.plus.nq {
        let mut row = Vec::new();
        for (tab, n, sgn) in [(Some(&t.plus), &t.normal, 1.0), (t.minus.as_ref(), &t.normal_minus, -1.0)] {
            if let Some(tab) = tab {
                for i in 0..tab.n {
                    let v = tab.v(q, i);
                    if tab.vs == 1 {
                        row.push(sgn * v[0]);
                    } else {
                        row.push(v.iter().zip(&n[q]).map(|(a, b)| a * b).sum());
                    }
                }
            }
        }
        out.push(row);
    }
    out
}

/// Upwind value selection: returns the weight on the '+' value (1, 0 or
/// 1/2 on ties) given the normal velocity u·n⁺.
pub fn upwind_weight(un_plus: f64) -> f64 {
    if un_plus.abs() < 1e-13 {
        0.5
    } else if un_plus > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Upwind trace D̃ = value from the side where u·n is negative, i.e. the
/// '+' value when u·n⁺ > 0.
pub fn upwind_trace(d_plus: f64, d_minus: f64, un_plus: f64) -> f64 {
    let w = upwind_weight(un_plus);
    w * d_plus + (1.0 - w) * d_minus
}

fn velocity_on_facet(vel: (&FunctionSpace, &[f64]), f: usize, degree: usize) -> Result<Vec<f64>> {
    let t = facet_tabulate(vel.0, f, degree, TabOpts::VALUES)?;
    let lc = vel.0.local_coeffs(t.cells.0, vel.1);
    Ok((0..t.plus.nq)
        .map(|q| t.plus.eval_v(q, &lc).iter().zip(&t.normal[q]).map(|(a, b)| a * b).sum())
        .collect())
}

fn upwind_flux_matrix(test: &FunctionSpace, trial: &FunctionSpace, vel: (&FunctionSpace, &[f64]), degree: usize) -> Result<SparseMatrix> {
    assemble_facets(test, trial, degree, (TabOpts::VALUES, TabOpts::VALUES), true, |f, a, b, m| {
        let un = velocity_on_facet(vel, f, degree)?;
        let (am, bm) = (a.minus.as_ref().unwrap(), b.minus.as_ref().unwrap());
        let (na, nb) = (a.plus.n, b.plus.n);
        for q in 0..a.plus.nq {
            let w = a.plus.w[q];
            let wp = upwind_weight(un[q]);
            for i in 0..2 * na {
                // ⟦u φ⟧ = (φ⁺ - φ⁻) u·n⁺
                let phi = if i < na { a.plus.v(q, i)[0] } else { -am.v(q, i - na)[0] };
                for j in 0..2 * nb {
                    let d = if j < nb { wp * b.plus.v(q, j)[0] } else { (1.0 - wp) * bm.v(q, j - nb)[0] };
                    m[(i, j)] += w * un[q] * phi * d;
                }
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Common operators
// ---------------------------------------------------------------------------

pub fn assemble_mass(space: &FunctionSpace) -> Result<SparseMatrix> {
    assemble_form(space, space, &[Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }], None)
}

/// ∫ test · f dx for a vector- or scalar-valued function `f`.
pub fn assemble_rhs(space: &FunctionSpace, f: &(dyn Fn(&[f64; 3]) -> Vec<f64> + Sync), degree: Option<usize>) -> Result<Vec<f64>> {
    let degree = degree.unwrap_or(2 * space.element.degree + 4);
    assemble_cell_vector(space, degree, TabOpts::VALUES, |_, t, l| {
        for q in 0..t.nq {
            let fx = f(&t.x[q]);
            for (i, li) in l.iter_mut().enumerate() {
                *li += t.w[q] * t.v(q, i).iter().zip(&fx).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(())
    })
}

/// L2 projection of `f`.
pub fn project(space: &FunctionSpace, f: &(dyn Fn(&[f64; 3]) -> Vec<f64> + Sync), degree: Option<usize>) -> Result<Vec<f64>> {
    let m = assemble_mass(space)?;
    let b = assemble_rhs(space, f, degree)?;
    let cfg = SolverConfig { rtol: 1e-13, atol: 1e-300, max_iter: 20_000, precond: Preconditioner::GaussSeidel };
    Ok(cg_solve(&m, &b, &cfg, None)?.0)
}

/// ‖u_h - f‖_{L2} with an over-integrated rule.
pub fn l2_error(space: &FunctionSpace, c: &[f64], f: &(dyn Fn(&[f64; 3]) -> Vec<f64> + Sync), degree: Option<usize>) -> Result<f64> {
    let degree = degree.unwrap_or(2 * space.element.degree + 4);
    let tt = CellTabulator::new(space, degree, TabOpts::VALUES);
    let parts: Result<Vec<f64>> = (0..space.mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let t = tt.cell(cell)?;
            let lc = space.local_coeffs(cell, c);
            let mut s = 0.0;
            for q in 0..t.nq {
                let v = t.eval_v(q, &lc);
                let fx = f(&t.x[q]);
                s += t.w[q] * v.iter().zip(&fx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            Ok(s)
        })
        .collect();
    Ok(parts?.iter().sum::<f64>().sqrt())
}

/// ∫ u_h dx (scalar spaces).
pub fn integrate(space: &FunctionSpace, c: &[f64]) -> Result<f64> {
    let tt = CellTabulator::new(space, 2 * space.element.degree + 2, TabOpts::VALUES);
    let mut s = 0.0;
    for cell in 0..space.mesh.num_cells() {
        let t = tt.cell(cell)?;
        let lc = space.local_coeffs(cell, c);
        for q in 0..t.nq {
            s += t.w[q] * t.eval_v(q, &lc)[0];
        }
    }
    Ok(s)
}

/// Coefficients of the constant function 1 (scalar spaces containing constants).
pub fn constant_one(space: &FunctionSpace) -> Result<Vec<f64>> {
    project(space, &|_| vec![1.0], None)
}

/// Subtract the mean so that ∫ u dx = 0.
pub fn remove_mean(space: &FunctionSpace, c: &mut [f64]) -> Result<()> {
    let one = constant_one(space)?;
    let vol = integrate(space, &one)?;
    let mean = integrate(space, c)? / vol;
    for (x, o) in c.iter_mut().zip(&one) {
        *x -= mean * o;
    }
    Ok(())
}

/// Physical value of a field at reference point `xi` of cell `c`.
pub fn eval_at(space: &FunctionSpace, coeffs: &[f64], c: usize, xi: &[f64; 3]) -> Result<Vec<f64>> {
    let rt = ref_tabulate(&space.element, &[*xi], TabOpts::VALUES);
    let t = tabulate_points(space, c, &rt, &[*xi], &[1.0], false)?;
    Ok(t.eval_v(0, &space.local_coeffs(c, coeffs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{build_reference_element, Family, PolyFamily};
    use crate::mesh::{build_interval, build_periodic_rect, build_rect, Mesh};
    use crate::reference::CellShape;
    use std::sync::Arc;

    fn sp(fam: Family, r: usize, m: &Arc<Mesh>) -> FunctionSpace {
        FunctionSpace::new(m.clone(), build_reference_element(PolyFamily::new(fam, r), m.shape).unwrap()).unwrap()
    }

    #[test]
    fn dg0_mass_on_two_triangles() {
        let m = Arc::new(build_rect(1, 1, 1.0, 1.0, CellShape::Triangle).unwrap());
        let a = assemble_mass(&sp(Family::DG, 0, &m)).unwrap();
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15 && (a.get(1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn cg1_interval_mass() {
        let m = Arc::new(build_interval(1, 1.0).unwrap());
        let a = assemble_mass(&sp(Family::CG, 1, &m)).unwrap();
        assert!((a.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rt0_mass_is_spd() {
        use rand::{Rng, SeedableRng};
        let m = Arc::new(build_periodic_rect(3, 3, 1.0, 1.0, CellShape::Triangle).unwrap());
        let a = assemble_mass(&sp(Family::RT, 0, &m)).unwrap();
        assert!(a.asymmetry() < 1e-14);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..a.nrows).map(|_| rng.gen::<f64>() - 0.5).collect();
            assert!(crate::linalg::dot(&x, &a.matvec(&x)) > 0.0);
        }
    }

    #[test]
    fn rt0_divergence_on_reference_triangle() {
        // RT0 DOFs are edge fluxes, so by the divergence theorem ∫ div w = ±1
        // for every basis function.
        let m = Arc::new(
            Mesh::from_parts(CellShape::Triangle, 2, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2], None, crate::mesh::MapClass::Affine)
                .unwrap(),
        );
        let v1 = sp(Family::RT, 0, &m);
        let v2 = sp(Family::DG, 0, &m);
        let b = assemble_form(&v1, &v2, &[Form::Cell { test: Op::D, trial: Op::Value, coef: Coef::One }], None).unwrap();
        for i in 0..3 {
            assert!((b.get(i, 0).abs() - 1.0).abs() < 1e-14);
        }
        // outward flux sum of edges equals boundary length with normals
        // pointing out of the cell for every edge of a lone triangle
        let mut total = 0.0;
        for f in 0..3 {
            let g = crate::mesh::facet_geometry(&m, f, 2).unwrap();
            total += g.measure;
        }
        assert!((total - (2.0 + 2f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn perp_grad_stiffness_equals_grad_stiffness() {
        let m = Arc::new(build_periodic_rect(3, 2, 1.0, 1.0, CellShape::Triangle).unwrap());
        let v0 = sp(Family::CG, 2, &m);
        let a = assemble_form(&v0, &v0, &[Form::Cell { test: Op::D, trial: Op::D, coef: Coef::One }], None).unwrap();
        let b = assemble_form(&v0, &v0, &[Form::Cell { test: Op::Grad, trial: Op::Grad, coef: Coef::One }], None).unwrap();
        assert!(a.add(1.0, &b, -1.0).max_abs() < 1e-12);
    }

    #[test]
    fn upwind_flux_with_zero_velocity_vanishes() {
        let m = Arc::new(build_periodic_rect(2, 2, 1.0, 1.0, CellShape::Triangle).unwrap());
        let v1 = sp(Family::RT, 0, &m);
        let v2 = sp(Family::DG, 0, &m);
        let zero = vec![0.0; v1.ndofs];
        let a = assemble_form(&v2, &v2, &[Form::UpwindFlux { velocity: (&v1, &zero) }], None).unwrap();
        assert!(a.max_abs() == 0.0);
    }

    #[test]
    fn upwind_trace_rules() {
        assert_eq!(upwind_trace(1.0, 2.0, 1.0), 1.0);
        assert_eq!(upwind_trace(1.0, 2.0, -1.0), 2.0);
        assert_eq!(upwind_trace(1.0, 2.0, 0.0), 1.5);
        assert_eq!(upwind_trace(3.0, 3.0, 0.7), 3.0);
    }

    #[test]
    fn quadrature_doubling_changes_nothing_on_affine_meshes() {
        let m = Arc::new(build_periodic_rect(2, 3, 1.0, 1.0, CellShape::Quad).unwrap());
        for (fam, r) in [(Family::RT, 1), (Family::CG, 2), (Family::DG, 1)] {
            let v = sp(fam, r, &m);
            let d = default_degree(&v.element, &v.element);
            let f = [Form::Cell { test: Op::Value, trial: Op::Value, coef: Coef::One }];
            let a = assemble_form(&v, &v, &f, Some(d)).unwrap();
            let b = assemble_form(&v, &v, &f, Some(2 * d)).unwrap();
            assert!(a.add(1.0, &b, -1.0).max_abs() < 1e-12);
        }
    }

    #[test]
    fn projection_reproduces_members() {
        let m = Arc::new(build_periodic_rect(3, 3, 1.0, 1.0, CellShape::Triangle).unwrap());
        let v = sp(Family::DG, 1, &m);
        let c = project(&v, &|_| vec![2.5], None).unwrap();
        assert!(l2_error(&v, &c, &|_| vec![2.5], None).unwrap() < 1e-12);
        let mut c2 = c.clone();
        remove_mean(&v, &mut c2).unwrap();
        assert!(integrate(&v, &c2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn piola_normal_continuity_across_facets() {
        let m = Arc::new(build_periodic_rect(3, 2, 1.0, 1.0, CellShape::Quad).unwrap());
        for (fam, r) in [(Family::RT, 0), (Family::RT, 1)] {
            let v = sp(fam, r, &m);
            let coeffs: Vec<f64> = (0..v.ndofs).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            for f in 0..m.facets.len() {
                let t = facet_tabulate(&v, f, 4, TabOpts::VALUES).unwrap();
                let lp = v.local_coeffs(t.cells.0, &coeffs);
                let lm = v.local_coeffs(t.cells.1.unwrap(), &coeffs);
                let tm = t.minus.as_ref().unwrap();
                for q in 0..t.plus.nq {
                    let a: f64 = t.plus.eval_v(q, &lp).iter().zip(&t.normal[q]).map(|(x, y)| x * y).sum();
                    let b: f64 = tm.eval_v(q, &lm).iter().zip(&t.normal[q]).map(|(x, y)| x * y).sum();
                    assert!((a - b).abs() < 1e-10, "{fam:?}{r} facet {f}: {a} vs {b}");
                }
            }
        }
    }
}
