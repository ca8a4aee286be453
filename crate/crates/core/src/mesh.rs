//! Meshes: periodic planes, spheres, extruded columns and spherical shells.
//!
//! Every cell stores its own node coordinates so periodic cells can be
//! unwrapped. Extruded meshes number cells column by column:
//! `cell = base_cell * layers + layer`, `vertex = base_vertex * (layers + 1) + level`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, Jacobian};
use crate::quadrature::quadrature_rule;
use crate::reference::CellShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapClass {
    Affine,
    Multilinear,
    MultilinearInvariantOnBase,
    MultilinearInvariantOnInterval,
    Composed,
}

impl std::fmt::Display for MapClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MapClass::Affine => "affine",
            MapClass::Multilinear => "multilinear",
            MapClass::MultilinearInvariantOnBase => "invariant_on_base",
            MapClass::MultilinearInvariantOnInterval => "invariant_on_interval",
            MapClass::Composed => "composed",
        };
        f.write_str(s)
    }
}

/// F(x1, x2, x3, x4) = (x1, x2, x3) (1 + (x4 - a) / a), taking the cylinder
/// S x [a, b] (S the sphere of radius a) onto the shell a <= |x| <= b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellMap {
    pub a: f64,
    pub b: f64,
    /// Radially project the base point onto S before applying F, giving the
    /// exact shell instead of its piecewise-linear approximation.
    pub project: bool,
}

impl ShellMap {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > a) {
            return Err(Error::InvalidArgument(format!("shell radii must satisfy b > a > 0 (a={a}, b={b})")));
        }
        Ok(Self { a, b, project: false })
    }

    pub fn apply(&self, y: &[f64]) -> [f64; 3] {
        let s = 1.0 + (y[3] - self.a) / self.a;
        [y[0] * s, y[1] * s, y[2] * s]
    }

    /// 3 x 4 derivative of F at y, as rows.
    pub fn derivative(&self, y: &[f64]) -> [[f64; 4]; 3] {
        let s = 1.0 + (y[3] - self.a) / self.a;
        let mut d = [[0.0; 4]; 3];
        for i in 0..3 {
            d[i][i] = s;
            d[i][3] = y[i] / self.a;
        }
        d
    }

    /// Inverse of F onto the cylinder over the sphere of radius a.
    pub fn inverse(&self, x: &[f64; 3]) -> [f64; 4] {
        let r = norm(x);
        [self.a * x[0] / r, self.a * x[1] / r, self.a * x[2] / r, r]
    }
}

#[derive(Debug, Clone)]
pub struct Extrusion {
    pub base: Box<Mesh>,
    pub layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Facet {
    /// (cell, local facet) on the '+' side; n+ points out of this cell.
    pub plus: (usize, usize),
    pub minus: Option<(usize, usize)>,
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        self.minus.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub shape: CellShape,
    /// Coordinate dimension of stored vertices (4 for shells before F).
    pub vdim: usize,
    /// Dimension of the physical space.
    pub gdim: usize,
    pub vertices: Vec<f64>,
    pub cells: Vec<usize>,
    /// Unwrapped node coordinates per cell, `nv * vdim` each.
    pub cell_nodes: Vec<f64>,
    /// Periodic lengths and per-cell node shifts (multiples of the periods).
    pub periodic: Option<Periodicity>,
    pub map_class: MapClass,
    pub shell: Option<ShellMap>,
    pub extrusion: Option<Extrusion>,
    /// Entities of dimension 1 for 2D meshes (edges = facets).
    pub edges: Vec<Edge>,
    /// Local edge -> global edge.
    pub cell_edges: Vec<usize>,
    /// Whether the local edge direction opposes the global one.
    pub cell_edge_reversed: Vec<bool>,
    pub facets: Vec<Facet>,
    pub cell_affine: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Periodicity {
    pub lengths: [f64; 2],
    pub shifts: Vec<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// Unwrapped displacement along the global direction.
    pub displacement: [f64; 3],
    pub cells: Vec<(usize, usize)>,
}

fn key_round(x: f64) -> i64 {
    (x * 1e8).round() as i64
}

fn lex_positive(d: &[f64; 3]) -> bool {
    for v in d {
        if v.abs() > 1e-10 {
            return *v > 0.0;
        }
    }
    true
}

impl Mesh {
    pub fn tdim(&self) -> usize {
        self.shape.tdim()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / self.shape.num_vertices()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / self.vdim
    }

    pub fn cell_vertices(&self, c: usize) -> &[usize] {
        let nv = self.shape.num_vertices();
        &self.cells[c * nv..(c + 1) * nv]
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v * self.vdim..(v + 1) * self.vdim]
    }

    /// Unwrapped coordinates of local node `i` of cell `c`.
    pub fn node(&self, c: usize, i: usize) -> &[f64] {
        let nv = self.shape.num_vertices();
        let o = (c * nv + i) * self.vdim;
        &self.cell_nodes[o..o + self.vdim]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn layers(&self) -> Option<usize> {
        self.extrusion.as_ref().map(|e| e.layers)
    }

    /// (base cell, layer) for extruded meshes.
    pub fn column_index(&self, c: usize) -> Option<(usize, usize)> {
        self.extrusion.as_ref().map(|e| (c / e.layers, c % e.layers))
    }

    /// Assemble from raw data and derive topology.
    pub fn from_parts(
        shape: CellShape,
        vdim: usize,
        gdim: usize,
        vertices: Vec<f64>,
        cells: Vec<usize>,
        periodic: Option<Periodicity>,
        map_class: MapClass,
    ) -> Result<Self> {
        let nv = shape.num_vertices();
        if cells.len() % nv != 0 {
            return Err(Error::InvalidArgument("cell list length".into()));
        }
        let nverts = vertices.len() / vdim;
        if cells.iter().any(|&v| v >= nverts) {
            return Err(Error::InvalidArgument("cell references a missing vertex".into()));
        }
        let ncells = cells.len() / nv;
        let mut cell_nodes = Vec::with_capacity(cells.len() * vdim);
        for c in 0..ncells {
            for i in 0..nv {
                let v = cells[c * nv + i];
                for d in 0..vdim {
                    let mut x = vertices[v * vdim + d];
                    if let Some(p) = &periodic {
                        if d < 2 {
                            x += p.shifts[c * nv + i][d] as f64 * p.lengths[d];
                        }
                    }
                    cell_nodes.push(x);
                }
            }
        }
        let mut m = Mesh {
            shape,
            vdim,
            gdim,
            vertices,
            cells,
            cell_nodes,
            periodic,
            map_class,
            shell: None,
            extrusion: None,
            edges: Vec::new(),
            cell_edges: Vec::new(),
            cell_edge_reversed: Vec::new(),
            facets: Vec::new(),
            cell_affine: Vec::new(),
        };
        m.build_topology();
        m.cell_affine = (0..ncells).map(|c| m.detect_affine(c)).collect();
        Ok(m)
    }

    fn build_topology(&mut self) {
        match self.shape.tdim() {
            1 => {
                let mut at: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
                for c in 0..self.num_cells() {
                    for f in 0..2 {
                        at.entry(self.cell_vertices(c)[f]).or_default().push((c, f));
                    }
                }
                let mut keys: Vec<_> = at.keys().copied().collect();
                keys.sort();
                self.facets = keys
                    .into_iter()
                    .map(|k| {
                        let v = &at[&k];
                        Facet { plus: v[0], minus: v.get(1).copied() }
                    })
                    .collect();
            }
            2 => self.build_edges(),
            _ => self.build_facets_3d(),
        }
    }

    fn build_edges(&mut self) {
        let ledges = self.shape.edges();
        let ne = ledges.len();
        let ncells = self.num_cells();
        let mut index: HashMap<(usize, usize, [i64; 3]), usize> = HashMap::new();
        self.cell_edges = vec![0; ncells * ne];
        self.cell_edge_reversed = vec![false; ncells * ne];
        for c in 0..ncells {
            for (e, [a, b]) in ledges.iter().enumerate() {
                let ga = self.cell_vertices(c)[*a];
                let gb = self.cell_vertices(c)[*b];
                let xa = self.node(c, *a).to_vec();
                let xb = self.node(c, *b).to_vec();
                let mut d = [0.0; 3];
                for k in 0..self.vdim.min(3) {
                    d[k] = xb[k] - xa[k];
                }
                let forward = if ga != gb { ga < gb } else { lex_positive(&d) };
                let (lo, hi, dg) = if forward { (ga, gb, d) } else { (gb, ga, [-d[0], -d[1], -d[2]]) };
                let key = (lo, hi, [key_round(dg[0]), key_round(dg[1]), key_round(dg[2])]);
                let id = *index.entry(key).or_insert_with(|| {
                    self.edges.push(Edge { vertices: [lo, hi], displacement: dg, cells: Vec::new() });
                    self.edges.len() - 1
                });
                self.edges[id].cells.push((c, e));
                self.cell_edges[c * ne + e] = id;
                self.cell_edge_reversed[c * ne + e] = !forward;
            }
        }
        self.facets = self
            .edges
            .iter()
            .map(|e| Facet { plus: e.cells[0], minus: e.cells.get(1).copied() })
            .collect();
    }

    fn build_facets_3d(&mut self) {
        let Some(ext) = &self.extrusion else {
            self.facets.clear();
            return;
        };
        let layers = ext.layers;
        let base = &ext.base;
        let mut facets = Vec::new();
        for bf in &base.facets {
            for l in 0..layers {
                let plus = (bf.plus.0 * layers + l, bf.plus.1 + 2);
                let minus = bf.minus.map(|m| (m.0 * layers + l, m.1 + 2));
                facets.push(Facet { plus, minus });
            }
        }
        for b in 0..base.num_cells() {
            facets.push(Facet { plus: (b * layers, 0), minus: None });
            for l in 1..layers {
                facets.push(Facet { plus: (b * layers + l - 1, 1), minus: Some((b * layers + l, 0)) });
            }
            facets.push(Facet { plus: (b * layers + layers - 1, 1), minus: None });
        }
        self.facets = facets;
    }

    fn detect_affine(&self, c: usize) -> bool {
        if self.shell.is_some() {
            return false;
        }
        let verts = self.shape.vertices();
        let j0 = self.jacobian(c, &verts[0]);
        verts.iter().skip(1).all(|p| {
            let j = self.jacobian(c, p);
            (0..3).all(|i| (0..3).all(|k| (j.m[i][k] - j0.m[i][k]).abs() < 1e-12 * (1.0 + j0.m[i][k].abs())))
        })
    }

    /// Reference point and physical image plus Jacobian of cell `c`.
    pub fn map_point(&self, c: usize, xi: &[f64; 3]) -> ([f64; 3], Jacobian) {
        let (n, dn) = geometric_shape(self.shape, xi);
        let tdim = self.tdim();
        let mut y = [0.0; 4];
        let mut dy = [[0.0; 3]; 4];
        for (i, (ni, dni)) in n.iter().zip(&dn).enumerate() {
            let xn = self.node(c, i);
            for d in 0..self.vdim {
                y[d] += ni * xn[d];
                for a in 0..tdim {
                    dy[d][a] += dni[a] * xn[d];
                }
            }
        }
        match &self.shell {
            None => {
                let mut m = [[0.0; 3]; 3];
                for d in 0..self.gdim {
                    m[d][..tdim].copy_from_slice(&dy[d][..tdim]);
                }
                ([y[0], y[1], y[2]], Jacobian { m, gdim: self.gdim, tdim })
            }
            Some(s) => {
                let (x, df) = if s.project {
                    projected_shell(&y)
                } else {
                    (s.apply(&y), s.derivative(&y))
                };
                let mut m = [[0.0; 3]; 3];
                for i in 0..3 {
                    for a in 0..tdim {
                        m[i][a] = (0..4).map(|k| df[i][k] * dy[k][a]).sum();
                    }
                }
                (x, Jacobian { m, gdim: 3, tdim })
            }
        }
    }

    pub fn jacobian(&self, c: usize, xi: &[f64; 3]) -> Jacobian {
        self.map_point(c, xi).1
    }

    /// Check det J > 0 at the quadrature points of every cell.
    pub fn validate(&self) -> Result<()> {
        let q = quadrature_rule(self.shape, 2);
        for c in 0..self.num_cells() {
            for p in &q.points {
                let d = self.jacobian(c, p).det();
                crate::geometry::check_det(d, c)?;
            }
        }
        Ok(())
    }

    /// Largest cell diameter estimate (max vertex-vertex distance).
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let verts = self.shape.vertices();
        let pts: Vec<[f64; 3]> = verts.iter().map(|v| self.map_point(c, v).0).collect();
        let mut h: f64 = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1], pts[i][2] - pts[j][2]];
                h = h.max(norm(&d));
            }
        }
        h
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_diameter(c)).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        let q = quadrature_rule(self.shape, 4);
        q.points.iter().zip(&q.weights).map(|(p, w)| w * self.jacobian(c, p).det()).sum()
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// Local facet `f` of cell `c` in reference coordinates for a facet
    /// parameter `s`, plus a flag for reversed edge direction in 2D.
    pub fn edge_reversed(&self, c: usize, e: usize) -> bool {
        self.cell_edge_reversed[c * self.shape.edges().len() + e]
    }

    pub fn edge_of(&self, c: usize, e: usize) -> usize {
        self.cell_edges[c * self.shape.edges().len() + e]
    }
}

fn projected_shell(y: &[f64; 4]) -> ([f64; 3], [[f64; 4]; 3]) {
    let r = norm(&y[..3]);
    let u = [y[0] / r, y[1] / r, y[2] / r];
    let x = [u[0] * y[3], u[1] * y[3], u[2] * y[3]];
    let mut d = [[0.0; 4]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let delta = if i == k { 1.0 } else { 0.0 };
            d[i][k] = y[3] * (delta - u[i] * u[k]) / r;
        }
        d[i][3] = u[i];
    }
    (x, d)
}

/// Geometric shape functions and their reference gradients.
pub fn geometric_shape(shape: CellShape, xi: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let (x, y, z) = (xi[0], xi[1], xi[2]);
    match shape {
        CellShape::Interval => (vec![1.0 - x, x], vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        CellShape::Triangle => (
            vec![1.0 - x - y, x, y],
            vec![[-1.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        ),
        CellShape::Quad => (
            vec![(1.0 - x) * (1.0 - y), x * (1.0 - y), (1.0 - x) * y, x * y],
            vec![
                [-(1.0 - y), -(1.0 - x), 0.0],
                [1.0 - y, -x, 0.0],
                [-y, 1.0 - x, 0.0],
                [y, x, 0.0],
            ],
        ),
        CellShape::Prism | CellShape::Hex => {
            let (nb, dnb) = geometric_shape(shape.base().unwrap(), xi);
            let mut n = Vec::new();
            let mut dn = Vec::new();
            for (lz, dlz) in [(1.0 - z, -1.0), (z, 1.0)] {
                for (a, da) in nb.iter().zip(&dnb) {
                    n.push(a * lz);
                    dn.push([da[0] * lz, da[1] * lz, a * dlz]);
                }
            }
            (n, dn)
        }
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Doubly periodic rectangle; triangles split each quad along the
/// lower-left to upper-right diagonal.
pub fn build_periodic_rect(nx: usize, ny: usize, lx: f64, ly: f64, shape: CellShape) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("cell counts must be positive".into()));
    }
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::InvalidArgument("lengths must be positive".into()));
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let mut vertices = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(i as f64 * hx);
            vertices.push(j as f64 * hy);
        }
    }
    let vid = |i: usize, j: usize| -> (usize, [i32; 2]) {
        ((i % nx) + (j % ny) * nx, [(i / nx) as i32, (j / ny) as i32])
    };
    let mut cells = Vec::new();
    let mut shifts = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let ll = vid(i, j);
            let lr = vid(i + 1, j);
            let ul = vid(i, j + 1);
            let ur = vid(i + 1, j + 1);
            let groups: Vec<Vec<(usize, [i32; 2])>> = match shape {
                CellShape::Quad => vec![vec![ll, lr, ul, ur]],
                CellShape::Triangle => vec![vec![ll, lr, ur], vec![ll, ur, ul]],
                _ => return Err(Error::InvalidArgument(format!("periodic rectangle of {shape}"))),
            };
            for g in groups {
                for (v, s) in g {
                    cells.push(v);
                    shifts.push(s);
                }
            }
        }
    }
    let periodic = Periodicity { lengths: [lx, ly], shifts };
    Mesh::from_parts(shape, 2, 2, vertices, cells, Some(periodic), MapClass::Affine)
}

/// Non-periodic rectangle [0, lx] x [0, ly].
pub fn build_rect(nx: usize, ny: usize, lx: f64, ly: f64, shape: CellShape) -> Result<Mesh> {
    if nx == 0 || ny == 0 || !(lx > 0.0 && ly > 0.0) {
        return Err(Error::InvalidArgument("rectangle needs positive counts and lengths".into()));
    }
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(lx * i as f64 / nx as f64);
            vertices.push(ly * j as f64 / ny as f64);
        }
    }
    let vid = |i: usize, j: usize| i + j * (nx + 1);
    let mut cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (ll, lr, ul, ur) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            match shape {
                CellShape::Quad => cells.extend([ll, lr, ul, ur]),
                CellShape::Triangle => cells.extend([ll, lr, ur, ll, ur, ul]),
                _ => return Err(Error::InvalidArgument(format!("rectangle of {shape}"))),
            }
        }
    }
    Mesh::from_parts(shape, 2, 2, vertices, cells, None, MapClass::Affine)
}

/// Uniform interval mesh of [0, l] with `n` cells.
pub fn build_interval(n: usize, l: f64) -> Result<Mesh> {
    if n == 0 || l <= 0.0 {
        return Err(Error::InvalidArgument("interval needs n >= 1 and l > 0".into()));
    }
    build_interval_from(&(0..=n).map(|i| l * i as f64 / n as f64).collect::<Vec<_>>())
}

pub fn build_interval_from(levels: &[f64]) -> Result<Mesh> {
    let cells: Vec<usize> = (0..levels.len() - 1).flat_map(|i| [i, i + 1]).collect();
    Mesh::from_parts(CellShape::Interval, 1, 1, levels.to_vec(), cells, None, MapClass::Affine)
}

fn orient_surface_cells(shape: CellShape, vertices: &[f64], cells: &mut [usize]) {
    let nv = shape.num_vertices();
    for c in cells.chunks_mut(nv) {
        let p = |i: usize| [vertices[3 * c[i]], vertices[3 * c[i] + 1], vertices[3 * c[i] + 2]];
        let (a, b, d) = (p(0), p(1), p(2));
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
        if dot(&cross(&e1, &e2), &a) < 0.0 {
            c.swap(1, 2);
        }
    }
}

/// Icosahedron refined by edge bisection, vertices projected to the sphere.
pub fn build_icosahedral_sphere(refinements: usize, radius: f64) -> Result<Mesh> {
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let proj = |p: [f64; 3]| {
        let r = norm(&p);
        [p[0] / r, p[1] / r, p[2] / r]
    };
    for v in verts.iter_mut() {
        *v = proj(*v);
    }
    for _ in 0..refinements {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut nf = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                m[k] = *mid.entry(key).or_insert_with(|| {
                    let p = [
                        0.5 * (verts[a][0] + verts[b][0]),
                        0.5 * (verts[a][1] + verts[b][1]),
                        0.5 * (verts[a][2] + verts[b][2]),
                    ];
                    verts.push(proj(p));
                    verts.len() - 1
                });
            }
            nf.push([f[0], m[0], m[2]]);
            nf.push([m[0], f[1], m[1]]);
            nf.push([m[2], m[1], f[2]]);
            nf.push([m[0], m[1], m[2]]);
        }
        faces = nf;
    }
    let vertices: Vec<f64> = verts.iter().flat_map(|p| p.map(|x| x * radius)).collect();
    let mut cells: Vec<usize> = faces.iter().flatten().copied().collect();
    orient_surface_cells(CellShape::Triangle, &vertices, &mut cells);
    Mesh::from_parts(CellShape::Triangle, 3, 3, vertices, cells, None, MapClass::Affine)
}

/// Equiangular gnomonic cubed sphere with `n` cells per face edge.
pub fn build_cubed_sphere(n: usize, radius: f64) -> Result<Mesh> {
    if n == 0 || radius <= 0.0 {
        return Err(Error::InvalidArgument("cubed sphere needs n >= 1 and radius > 0".into()));
    }
    // Face frames: (normal, u axis, v axis).
    let frames: [([f64; 3], [f64; 3], [f64; 3]); 6] = [
        ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]),
        ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
        ([0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
        ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
        ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]),
    ];
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    for (nrm, u, v) in frames.iter() {
        let mut ids = vec![0usize; (n + 1) * (n + 1)];
        for j in 0..=n {
            for i in 0..=n {
                let a = -std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * i as f64 / n as f64;
                let b = -std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * j as f64 / n as f64;
                let (ta, tb) = (a.tan(), b.tan());
                let p = [
                    nrm[0] + ta * u[0] + tb * v[0],
                    nrm[1] + ta * u[1] + tb * v[1],
                    nrm[2] + ta * u[2] + tb * v[2],
                ];
                let r = norm(&p);
                let q = [radius * p[0] / r, radius * p[1] / r, radius * p[2] / r];
                let key = [key_round(q[0]), key_round(q[1]), key_round(q[2])];
                let id = *index.entry(key).or_insert_with(|| {
                    vertices.extend_from_slice(&q);
                    vertices.len() / 3 - 1
                });
                ids[i + j * (n + 1)] = id;
            }
        }
        for j in 0..n {
            for i in 0..n {
                let ll = ids[i + j * (n + 1)];
                let lr = ids[i + 1 + j * (n + 1)];
                let ul = ids[i + (j + 1) * (n + 1)];
                let ur = ids[i + 1 + (j + 1) * (n + 1)];
                cells.extend([ll, lr, ul, ur]);
            }
        }
    }
    orient_surface_cells(CellShape::Quad, &vertices, &mut cells);
    Mesh::from_parts(CellShape::Quad, 3, 3, vertices, cells, None, MapClass::Multilinear)
}

/// Vertical coordinate transformation applied to extruded vertices:
/// (base point, flat height) -> height.
pub type TerrainShift<'a> = &'a dyn Fn(&[f64], f64) -> f64;

/// Extrude a planar 2D mesh into prisms or hexes.
pub fn extrude(base: &Mesh, layers: usize, layer_heights: &[f64], shift: Option<TerrainShift<'_>>) -> Result<Mesh> {
    if base.tdim() != 2 {
        return Err(Error::InvalidArgument("extrusion needs a 2D base mesh".into()));
    }
    if layers == 0 || layer_heights.len() != layers || layer_heights.iter().any(|h| *h <= 0.0) {
        return Err(Error::InvalidArgument("need one positive height per layer".into()));
    }
    let shape = base.shape.extruded().unwrap();
    let mut levels = vec![0.0];
    for h in layer_heights {
        levels.push(levels.last().unwrap() + h);
    }
    let nbv = base.num_vertices();
    let mut vertices = Vec::with_capacity(nbv * (layers + 1) * 3);
    for v in 0..nbv {
        let p = base.vertex(v);
        for z in &levels {
            let zz = shift.map_or(*z, |f| f(p, *z));
            vertices.extend_from_slice(&[p[0], p[1], zz]);
        }
    }
    let nb = base.shape.num_vertices();
    let mut cells = Vec::new();
    let mut shifts = Vec::new();
    for b in 0..base.num_cells() {
        for l in 0..layers {
            for lev in [l, l + 1] {
                for i in 0..nb {
                    cells.push(base.cell_vertices(b)[i] * (layers + 1) + lev);
                    if let Some(p) = &base.periodic {
                        shifts.push(p.shifts[b * nb + i]);
                    }
                }
            }
        }
    }
    let periodic = base.periodic.as_ref().map(|p| Periodicity { lengths: p.lengths, shifts });
    let base_affine = base.cell_affine.iter().all(|a| *a);
    let class = match (shift.is_some(), base_affine) {
        (false, true) => MapClass::Affine,
        _ => MapClass::MultilinearInvariantOnBase,
    };
    let mut m = Mesh::from_parts(shape, 3, 3, vertices, cells, periodic, class)?;
    m.extrusion = Some(Extrusion { base: Box::new(base.clone()), layers });
    m.build_facets_3d();
    for c in 0..m.num_cells() {
        let (col, layer) = m.column_index(c).unwrap();
        let h = m.node(c, nb)[2] - m.node(c, 0)[2];
        let mut hmin = h;
        for i in 1..nb {
            hmin = hmin.min(m.node(c, nb + i)[2] - m.node(c, i)[2]);
        }
        if hmin <= 0.0 {
            return Err(Error::LayerCollapse { column: col, layer, height: hmin });
        }
    }
    m.cell_affine = (0..m.num_cells()).map(|c| m.detect_affine(c)).collect();
    if class == MapClass::MultilinearInvariantOnBase && m.cell_affine.iter().all(|a| *a) {
        m.map_class = MapClass::Affine;
    }
    if shift.is_some() {
        m.map_class = MapClass::MultilinearInvariantOnBase;
    }
    Ok(m)
}

/// A single column of a planar extruded mesh as its own (non-periodic)
/// extruded mesh, with unwrapped node coordinates.
pub fn column_mesh(mesh: &Mesh, column: usize) -> Result<Mesh> {
    let ext = mesh
        .extrusion
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("column extraction needs an extruded mesh".into()))?;
    if mesh.shell.is_some() || mesh.vdim != 3 {
        return Err(Error::InvalidArgument("column extraction supports planar extruded meshes".into()));
    }
    let base = &ext.base;
    if column >= base.num_cells() {
        return Err(Error::InvalidArgument(format!("column {column} out of range")));
    }
    let layers = ext.layers;
    let nb = base.shape.num_vertices();
    let mut bverts = Vec::with_capacity(nb * base.vdim);
    for i in 0..nb {
        bverts.extend_from_slice(base.node(column, i));
    }
    let bmesh = Mesh::from_parts(base.shape, base.vdim, base.gdim, bverts, (0..nb).collect(), None, MapClass::Affine)?;
    let mut vertices = vec![0.0; nb * (layers + 1) * 3];
    for l in 0..layers {
        let c = column * layers + l;
        for i in 0..nb {
            for (lev, k) in [(l, i), (l + 1, nb + i)] {
                let o = (i * (layers + 1) + lev) * 3;
                vertices[o..o + 3].copy_from_slice(&mesh.node(c, k)[..3]);
            }
        }
    }
    let mut cells = Vec::with_capacity(layers * 2 * nb);
    for l in 0..layers {
        for lev in [l, l + 1] {
            for i in 0..nb {
                cells.push(i * (layers + 1) + lev);
            }
        }
    }
    let mut m = Mesh::from_parts(mesh.shape, 3, 3, vertices, cells, None, mesh.map_class)?;
    m.extrusion = Some(Extrusion { base: Box::new(bmesh), layers });
    m.build_facets_3d();
    m.cell_affine = (0..m.num_cells()).map(|c| m.detect_affine(c)).collect();
    Ok(m)
}

/// Extrude a sphere of radius a through the fourth coordinate over [a, b]
/// and compose with the shell map.
pub fn build_shell_mesh(base_sphere: &Mesh, layers: usize, a: f64, b: f64) -> Result<Mesh> {
    let shell = ShellMap::new(a, b)?;
    if base_sphere.tdim() != 2 || base_sphere.gdim != 3 {
        return Err(Error::InvalidArgument("shell base must be a closed surface in R^3".into()));
    }
    if layers == 0 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    let shape = base_sphere.shape.extruded().unwrap();
    let nbv = base_sphere.num_vertices();
    let mut vertices = Vec::with_capacity(nbv * (layers + 1) * 4);
    for v in 0..nbv {
        let p = base_sphere.vertex(v);
        let r = norm(p);
        for l in 0..=layers {
            let x4 = a + (b - a) * l as f64 / layers as f64;
            vertices.extend_from_slice(&[a * p[0] / r, a * p[1] / r, a * p[2] / r, x4]);
        }
    }
    let nb = base_sphere.shape.num_vertices();
    let mut cells = Vec::new();
    for c in 0..base_sphere.num_cells() {
        for l in 0..layers {
            for lev in [l, l + 1] {
                for i in 0..nb {
                    cells.push(base_sphere.cell_vertices(c)[i] * (layers + 1) + lev);
                }
            }
        }
    }
    let mut m = Mesh::from_parts(shape, 4, 3, vertices, cells, None, MapClass::Composed)?;
    m.shell = Some(shell);
    m.extrusion = Some(Extrusion { base: Box::new(base_sphere.clone()), layers });
    m.build_facets_3d();
    m.cell_affine = vec![false; m.num_cells()];
    Ok(m)
}

/// Randomly displace interior vertices by up to `amplitude` in every
/// coordinate (or only vertically). Boundary vertices of the bounding box
/// stay fixed so the domain is preserved.
pub fn jitter(mesh: &Mesh, amplitude: f64, seed: u64, vertical_only: bool) -> Result<Mesh> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let nv = mesh.num_vertices();
    let d = mesh.vdim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for v in 0..nv {
        for k in 0..d {
            lo[k] = lo[k].min(mesh.vertex(v)[k]);
            hi[k] = hi[k].max(mesh.vertex(v)[k]);
        }
    }
    let mut vertices = mesh.vertices.clone();
    for v in 0..nv {
        let p = mesh.vertex(v).to_vec();
        let on_boundary = (0..d).any(|k| (p[k] - lo[k]).abs() < 1e-12 || (p[k] - hi[k]).abs() < 1e-12);
        for k in 0..d {
            let delta = amplitude * (2.0 * rng.gen::<f64>() - 1.0);
            if on_boundary || (vertical_only && k + 1 != d) {
                continue;
            }
            vertices[v * d + k] = p[k] + delta;
        }
    }
    let class = if vertical_only { MapClass::MultilinearInvariantOnBase } else { MapClass::Multilinear };
    let mut m = Mesh::from_parts(mesh.shape, d, mesh.gdim, vertices, mesh.cells.clone(), mesh.periodic.clone(), class)?;
    m.extrusion = mesh.extrusion.clone();
    m.shell = mesh.shell;
    if m.tdim() == 3 {
        m.build_facets_3d();
    }
    m.validate()?;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Facet geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FacetGeometry {
    /// Unit normals out of the '+' cell, one per point.
    pub normals_plus: Vec<[f64; 3]>,
    /// Unit normals out of the '-' cell (empty on exterior facets).
    pub normals_minus: Vec<[f64; 3]>,
    /// Surface measure weights per point (quadrature weight times scale).
    pub weights: Vec<f64>,
    pub measure: f64,
    pub ref_plus: Vec<[f64; 3]>,
    pub ref_minus: Vec<[f64; 3]>,
    pub phys_plus: Vec<[f64; 3]>,
    pub phys_minus: Vec<[f64; 3]>,
    /// Facet reference coordinates of each point in the global orientation.
    pub params: Vec<Vec<f64>>,
}

/// Outward unit normal and surface scale of local facet `f` of cell `c` at
/// reference point `xi`.
pub fn facet_normal(mesh: &Mesh, c: usize, f: usize, xi: &[f64; 3]) -> ([f64; 3], f64) {
    let rf = mesh.shape.facet(f);
    let j = mesh.jacobian(c, xi);
    let k = j.inverse_transpose();
    let mut n = [0.0; 3];
    for i in 0..j.gdim {
        n[i] = (0..j.tdim).map(|a| k[i][a] * rf.normal[a]).sum();
    }
    let nn = norm(&n);
    let n = [n[0] / nn, n[1] / nn, n[2] / nn];
    let scale = match rf.tangents.len() {
        0 => 1.0,
        1 => norm(&j.apply(&rf.tangents[0])),
        _ => {
            let t1 = j.apply(&rf.tangents[0]);
            let t2 = j.apply(&rf.tangents[1]);
            norm(&cross(&t1, &t2))
        }
    };
    (n, scale)
}

/// Reference coordinates in cell `c` of facet parameter `s`, using the
/// global facet orientation so both sides see the same physical point.
pub fn facet_ref_point(mesh: &Mesh, c: usize, f: usize, s: &[f64]) -> [f64; 3] {
    let rf = mesh.shape.facet(f);
    match mesh.tdim() {
        1 => rf.origin,
        2 => {
            let t = if mesh.edge_reversed(c, f) { 1.0 - s[0] } else { s[0] };
            rf.map(&[t])
        }
        _ => {
            if f < 2 {
                rf.map(s)
            } else {
                let base = &mesh.extrusion.as_ref().expect("3D facets need an extruded mesh").base;
                let (b, _) = mesh.column_index(c).unwrap();
                let t = if base.edge_reversed(b, f - 2) { 1.0 - s[0] } else { s[0] };
                rf.map(&[t, s[1]])
            }
        }
    }
}

pub fn facet_geometry(mesh: &Mesh, facet: usize, degree: usize) -> Result<FacetGeometry> {
    let fc = mesh.facets.get(facet).ok_or_else(|| Error::InvalidArgument(format!("facet {facet}")))?;
    let (cp, fp) = fc.plus;
    let rf = mesh.shape.facet(fp);
    let (pts, wts): (Vec<Vec<f64>>, Vec<f64>) = match rf.shape {
        None => (vec![vec![]], vec![1.0]),
        Some(s) => {
            let q = quadrature_rule(s, degree);
            (q.points.iter().map(|p| p[..s.tdim()].to_vec()).collect(), q.weights)
        }
    };
    let mut g = FacetGeometry {
        normals_plus: vec![],
        normals_minus: vec![],
        weights: vec![],
        measure: 0.0,
        ref_plus: vec![],
        ref_minus: vec![],
        phys_plus: vec![],
        phys_minus: vec![],
        params: pts.clone(),
    };
    for (s, w) in pts.iter().zip(&wts) {
        let xp = facet_ref_point(mesh, cp, fp, s);
        let (n, scale) = facet_normal(mesh, cp, fp, &xp);
        g.normals_plus.push(n);
        g.weights.push(w * scale);
        g.measure += w * scale;
        g.ref_plus.push(xp);
        g.phys_plus.push(mesh.map_point(cp, &xp).0);
        if let Some((cm, fm)) = fc.minus {
            let xm = facet_ref_point(mesh, cm, fm, s);
            g.normals_minus.push(facet_normal(mesh, cm, fm, &xm).0);
            g.ref_minus.push(xm);
            g.phys_minus.push(mesh.map_point(cm, &xm).0);
        }
    }
    if g.measure <= 0.0 {
        return Err(Error::DegenerateFacet(facet));
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

fn shape_from_counts(dim: usize, nv: usize) -> Option<CellShape> {
    match (dim, nv) {
        (1, 2) => Some(CellShape::Interval),
        (2, 3) => Some(CellShape::Triangle),
        (2, 4) => Some(CellShape::Quad),
        (3, 6) => Some(CellShape::Prism),
        (3, 8) => Some(CellShape::Hex),
        _ => None,
    }
}

/// Serialise: header, vertices, cells, optional `periodic` and `column` sections.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let nc = mesh.num_cells();
    let _ = writeln!(s, "mesh {} {} {} {}", mesh.tdim(), mesh.vdim, nc, mesh.num_vertices());
    for v in 0..mesh.num_vertices() {
        let line: Vec<String> = mesh.vertex(v).iter().map(|x| format!("{x:.17e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    for c in 0..nc {
        let line: Vec<String> = mesh.cell_vertices(c).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    if let Some(p) = &mesh.periodic {
        let _ = writeln!(s, "periodic {:.17e} {:.17e}", p.lengths[0], p.lengths[1]);
        let nv = mesh.shape.num_vertices();
        for c in 0..nc {
            let line: Vec<String> = p.shifts[c * nv..(c + 1) * nv].iter().map(|d| format!("{} {}", d[0], d[1])).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    }
    if let Some(ext) = &mesh.extrusion {
        let _ = writeln!(s, "column {}", ext.layers);
        if let Some(sh) = &mesh.shell {
            let _ = writeln!(s, "shell {:.17e} {:.17e}", sh.a, sh.b);
        }
    }
    s
}

pub fn read_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let perr = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
    let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty mesh file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "mesh" {
        return Err(perr(ln, "expected `mesh <dim> <ambient_dim> <ncells> <nvertices>`"));
    }
    let num = |t: &str, ln: usize| t.parse::<usize>().map_err(|_| perr(ln, "bad integer"));
    let (dim, vdim, nc, nvert) = (num(h[1], ln)?, num(h[2], ln)?, num(h[3], ln)?, num(h[4], ln)?);
    let mut vertices = Vec::with_capacity(nvert * vdim);
    for _ in 0..nvert {
        let (ln, l) = lines.next().ok_or_else(|| perr(ln, "missing vertex"))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| perr(ln, "bad coordinate")))
            .collect::<Result<_>>()?;
        if vals.len() != vdim {
            return Err(perr(ln, "wrong coordinate count"));
        }
        vertices.extend(vals);
    }
    let mut cells = Vec::new();
    let mut nv_cell = 0;
    for _ in 0..nc {
        let (ln, l) = lines.next().ok_or_else(|| perr(ln, "missing cell"))?;
        let ids: Vec<usize> = l.split_whitespace().map(|t| num(t, ln)).collect::<Result<_>>()?;
        if nv_cell == 0 {
            nv_cell = ids.len();
        } else if ids.len() != nv_cell {
            return Err(perr(ln, "mixed cell types"));
        }
        cells.extend(ids);
    }
    let shape = shape_from_counts(dim, nv_cell).ok_or_else(|| perr(ln, "unsupported cell type"))?;
    let mut periodic = None;
    let mut layers = None;
    let mut shell = None;
    while let Some((ln, l)) = lines.next() {
        let t: Vec<&str> = l.split_whitespace().collect();
        match t[0] {
            "periodic" if t.len() == 3 => {
                let lx = t[1].parse::<f64>().map_err(|_| perr(ln, "bad length"))?;
                let ly = t[2].parse::<f64>().map_err(|_| perr(ln, "bad length"))?;
                let mut shifts = Vec::new();
                for _ in 0..nc {
                    let (ln, l) = lines.next().ok_or_else(|| perr(ln, "missing shifts"))?;
                    let v: Vec<i32> = l
                        .split_whitespace()
                        .map(|t| t.parse::<i32>().map_err(|_| perr(ln, "bad shift")))
                        .collect::<Result<_>>()?;
                    if v.len() != 2 * nv_cell {
                        return Err(perr(ln, "wrong shift count"));
                    }
                    shifts.extend(v.chunks(2).map(|c| [c[0], c[1]]));
                }
                periodic = Some(Periodicity { lengths: [lx, ly], shifts });
            }
            "column" if t.len() == 2 => layers = Some(num(t[1], ln)?),
            "shell" if t.len() == 3 => {
                let a = t[1].parse::<f64>().map_err(|_| perr(ln, "bad radius"))?;
                let b = t[2].parse::<f64>().map_err(|_| perr(ln, "bad radius"))?;
                shell = Some((a, b));
            }
            _ => return Err(perr(ln, &format!("unknown section `{}`", t[0]))),
        }
    }
    if let Some(layers) = layers {
        return rebuild_extruded(shape, vdim, vertices, cells, periodic, layers, shell);
    }
    let gdim = vdim.min(3);
    let mut m = Mesh::from_parts(shape, vdim, gdim, vertices, cells, periodic, MapClass::Affine)?;
    if shape == CellShape::Quad && !m.cell_affine.iter().all(|a| *a) {
        m.map_class = MapClass::Multilinear;
    }
    Ok(m)
}

fn rebuild_extruded(
    shape: CellShape,
    vdim: usize,
    vertices: Vec<f64>,
    cells: Vec<usize>,
    periodic: Option<Periodicity>,
    layers: usize,
    shell: Option<(f64, f64)>,
) -> Result<Mesh> {
    let base_shape = shape.base().ok_or_else(|| Error::Parse { line: 0, msg: "column section on a non-3D mesh".into() })?;
    let nb = base_shape.num_vertices();
    let nv = shape.num_vertices();
    let nc = cells.len() / nv;
    let nbv = vertices.len() / vdim / (layers + 1);
    let bgdim = if shell.is_some() { 3 } else { 2 };
    let mut bverts = Vec::with_capacity(nbv * bgdim);
    for v in 0..nbv {
        let o = v * (layers + 1) * vdim;
        bverts.extend_from_slice(&vertices[o..o + bgdim]);
    }
    let mut bcells = Vec::new();
    let mut bshifts = Vec::new();
    for b in 0..nc / layers {
        let c = b * layers;
        for i in 0..nb {
            bcells.push(cells[c * nv + i] / (layers + 1));
            if let Some(p) = &periodic {
                bshifts.push(p.shifts[c * nv + i]);
            }
        }
    }
    let bper = periodic.as_ref().map(|p| Periodicity { lengths: p.lengths, shifts: bshifts });
    let base = Mesh::from_parts(base_shape, bgdim, bgdim, bverts, bcells, bper, MapClass::Affine)?;
    let gdim = if shell.is_some() { 3 } else { vdim };
    let mut m = Mesh::from_parts(shape, vdim, gdim, vertices, cells, periodic, MapClass::Affine)?;
    if let Some((a, b)) = shell {
        m.shell = Some(ShellMap::new(a, b)?);
        m.map_class = MapClass::Composed;
    }
    m.extrusion = Some(Extrusion { base: Box::new(base), layers });
    m.build_facets_3d();
    m.cell_affine = (0..m.num_cells()).map(|c| m.detect_affine(c)).collect();
    if m.shell.is_none() && !m.cell_affine.iter().all(|a| *a) {
        m.map_class = MapClass::MultilinearInvariantOnBase;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count_vertices_edges_faces(m: &Mesh) -> (usize, usize, usize) {
        (m.num_vertices(), m.num_edges(), m.num_cells())
    }

    #[test]
    fn one_cell_quad_torus() {
        let m = build_periodic_rect(1, 1, 1.0, 1.0, CellShape::Quad).unwrap();
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.facets.len(), 2);
        assert_eq!(m.num_vertices(), 1);
    }

    #[test]
    fn triangle_torus_counts() {
        let m = build_periodic_rect(2, 2, 1.0, 1.0, CellShape::Triangle).unwrap();
        assert_eq!(m.num_cells(), 8);
        let m = build_periodic_rect(1, 1, 1.0, 1.0, CellShape::Triangle).unwrap();
        assert_eq!(m.num_edges(), 3);
    }

    #[test]
    fn quad_torus_has_no_boundary() {
        let m = build_periodic_rect(4, 4, 1.0, 1.0, CellShape::Quad).unwrap();
        assert_eq!(m.facets.len(), 32);
        assert!(m.facets.iter().all(|f| f.is_interior()));
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(build_periodic_rect(0, 2, 1.0, 1.0, CellShape::Quad).is_err());
        assert!(build_periodic_rect(2, 2, -1.0, 1.0, CellShape::Quad).is_err());
    }

    #[test]
    fn icosahedron_counts() {
        let m = build_icosahedral_sphere(0, 1.0).unwrap();
        assert_eq!(m.num_cells(), 20);
        assert_eq!(m.num_vertices(), 12);
        for v in 0..12 {
            assert!((norm(m.vertex(v)) - 1.0).abs() < 1e-14);
        }
        assert_eq!(build_icosahedral_sphere(1, 1.0).unwrap().num_cells(), 80);
        let m = build_icosahedral_sphere(2, 1.0).unwrap();
        let (v, e, f) = count_vertices_edges_faces(&m);
        assert_eq!(v as i64 - e as i64 + f as i64, 2);
        m.validate().unwrap();
    }

    #[test]
    fn cubed_sphere_counts() {
        let m = build_cubed_sphere(1, 1.0).unwrap();
        assert_eq!(m.num_cells(), 6);
        assert_eq!(m.num_vertices(), 8);
        assert_eq!(build_cubed_sphere(2, 1.0).unwrap().num_cells(), 24);
        let m = build_cubed_sphere(3, 1.0).unwrap();
        assert!(m.facets.iter().all(|f| f.is_interior()));
        m.validate().unwrap();
    }

    #[test]
    fn extrusion_examples() {
        let tri = Mesh::from_parts(
            CellShape::Triangle,
            2,
            2,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![0, 1, 2],
            None,
            MapClass::Affine,
        )
        .unwrap();
        let m = extrude(&tri, 1, &[1.0], None).unwrap();
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.map_class, MapClass::Affine);
        assert!(m.cell_affine[0]);

        let quad = build_rect(1, 1, 1.0, 1.0, CellShape::Quad).unwrap();
        let m = extrude(&quad, 2, &[0.5, 0.5], None).unwrap();
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.column_index(0), Some((0, 0)));
        assert_eq!(m.column_index(1), Some((0, 1)));

        let terrain = |p: &[f64], z: f64| z * (1.0 + p[0] / 2.0);
        let m = extrude(&tri, 1, &[1.0], Some(&terrain)).unwrap();
        assert_eq!(m.map_class, MapClass::MultilinearInvariantOnBase);
    }

    #[test]
    fn layer_collapse_is_an_error() {
        let quad = build_rect(1, 1, 1.0, 1.0, CellShape::Quad).unwrap();
        let crush = |p: &[f64], z: f64| if z > 0.0 { z - 2.0 * p[0] } else { z };
        assert!(matches!(extrude(&quad, 1, &[1.0], Some(&crush)), Err(Error::LayerCollapse { .. })));
    }

    #[test]
    fn shell_map_examples() {
        let s = ShellMap::new(1.5, 2.0).unwrap();
        assert_eq!(s.apply(&[1.5, 0.0, 0.0, 1.5]), [1.5, 0.0, 0.0]);
        let x = s.apply(&[1.5, 0.0, 0.0, 2.0]);
        assert!((x[0] - 2.0).abs() < 1e-15);
        assert!(ShellMap::new(2.0, 1.0).is_err());
        let base = build_icosahedral_sphere(0, 1.5).unwrap();
        let m = build_shell_mesh(&base, 1, 1.5, 2.0).unwrap();
        assert_eq!(m.num_cells(), 20);
        m.validate().unwrap();
        let vol = m.total_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * (8.0 - 3.375);
        assert!(vol > 0.5 * exact && vol < exact);
    }

    #[test]
    fn facet_between_quads() {
        let m = build_rect(2, 1, 1.0, 1.0, CellShape::Quad).unwrap();
        let f = m.facets.iter().position(|f| f.is_interior()).unwrap();
        let g = facet_geometry(&m, f, 2).unwrap();
        assert!((g.measure - 1.0).abs() < 1e-14);
        let n = g.normals_plus[0];
        assert!((n[0] - 1.0).abs() < 1e-14 && n[1].abs() < 1e-14);
    }

    #[test]
    fn periodic_trace_points_agree_modulo_length() {
        let m = build_periodic_rect(3, 2, 1.0, 2.0, CellShape::Triangle).unwrap();
        for f in 0..m.facets.len() {
            let g = facet_geometry(&m, f, 3).unwrap();
            for (p, q) in g.phys_plus.iter().zip(&g.phys_minus) {
                for (d, l) in [(0, 1.0), (1, 2.0)] {
                    let r = (p[d] - q[d]) / l;
                    assert!((r - r.round()).abs() < 1e-12);
                }
            }
            for (a, b) in g.normals_plus.iter().zip(&g.normals_minus) {
                assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_cell_boundaries_sum_to_zero() {
        let tri = build_rect(2, 2, 1.0, 1.0, CellShape::Triangle).unwrap();
        let terrain = |p: &[f64], z: f64| z * (1.0 + 0.3 * p[0] * p[1]);
        let meshes = vec![
            build_periodic_rect(3, 3, 1.0, 1.0, CellShape::Quad).unwrap(),
            build_cubed_sphere(2, 1.0).unwrap(),
            extrude(&tri, 2, &[0.5, 0.5], Some(&terrain)).unwrap(),
        ];
        for m in &meshes {
            for c in 0..m.num_cells() {
                let mut s = [0.0; 3];
                for f in 0..m.shape.num_facets() {
                    let rf = m.shape.facet(f);
                    let q = quadrature_rule(rf.shape.unwrap(), 4);
                    for (p, w) in q.points.iter().zip(&q.weights) {
                        let xi = rf.map(&p[..rf.tangents.len()]);
                        let (n, sc) = facet_normal(m, c, f, &xi);
                        for d in 0..3 {
                            s[d] += w * sc * n[d];
                        }
                    }
                }
                if m.gdim == m.tdim() {
                    assert!(norm(&s) < 1e-12, "cell {c}: {s:?}");
                }
            }
        }
    }

    #[test]
    fn flat_side_walls_are_vertical() {
        let tri = build_periodic_rect(2, 2, 1.0, 1.0, CellShape::Triangle).unwrap();
        let m = extrude(&tri, 2, &[0.5, 0.5], None).unwrap();
        for f in 0..m.facets.len() {
            let fc = m.facets[f];
            if fc.plus.1 >= 2 {
                let g = facet_geometry(&m, f, 2).unwrap();
                assert!(g.normals_plus.iter().all(|n| n[2].abs() < 1e-14));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let m = build_periodic_rect(3, 2, 1.0, 1.0, CellShape::Triangle).unwrap();
        let r = read_mesh(&write_mesh(&m)).unwrap();
        assert_eq!(r.cells, m.cells);
        assert_eq!(r.cell_nodes, m.cell_nodes);
        assert_eq!(r.num_edges(), m.num_edges());

        let e = extrude(&m, 2, &[0.5, 0.5], None).unwrap();
        let r = read_mesh(&write_mesh(&e)).unwrap();
        assert_eq!(r.layers(), Some(2));
        assert_eq!(r.facets.len(), e.facets.len());
        assert!(read_mesh("mesh 2 2 1").is_err());
        assert!(read_mesh("mesh 2 2 1 3\n0 0\n1 0\n0 1\n0 1 2\nbogus 1\n").is_err());
    }

    proptest! {
        #[test]
        fn torus_euler_characteristic(nx in 1usize..7, ny in 1usize..7, tri in any::<bool>()) {
            let shape = if tri { CellShape::Triangle } else { CellShape::Quad };
            let m = build_periodic_rect(nx, ny, 1.0, 1.0, shape).unwrap();
            let (v, e, f) = count_vertices_edges_faces(&m);
            prop_assert_eq!(v as i64 - e as i64 + f as i64, 0);
            prop_assert!(m.edges.iter().all(|e| e.cells.len() == 2));
        }

        #[test]
        fn shell_map_round_trip(th in 0.1f64..3.0, ph in 0.0f64..6.2, x4 in 1.0f64..2.0) {
            let s = ShellMap::new(1.0, 2.0).unwrap();
            let y = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos(), x4];
            let back = s.inverse(&s.apply(&y));
            for k in 0..4 {
                prop_assert!((back[k] - y[k]).abs() < 1e-12);
            }
        }
    }
}
