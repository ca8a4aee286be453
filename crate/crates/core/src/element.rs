//! Reference finite elements and pullbacks.
//!
//! Interval, triangle and quad elements are built by the Ciarlet recipe: a
//! polynomial span, a set of dual functionals evaluated by quadrature, and
//! the inverse of the generalised Vandermonde matrix. Prism and hex elements
//! are sums of tensor-product blocks of a 2D element and an interval element.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::Jacobian;
use crate::poly::{combine, shifted_legendre, Poly, VecPoly};
use crate::quadrature::{gauss_legendre, quadrature_rule};
use crate::reference::CellShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Continuity {
    H1,
    HCurl,
    HDiv,
    L2,
}

/// How reference values are carried to physical cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mapping {
    /// Plain composition (scalar or componentwise vector).
    Identity,
    /// J^{-T} v.
    Covariant,
    /// J v / det J.
    Contravariant,
    /// v / det J.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    CG,
    /// CG2 enriched with the cubic bubble.
    CGB,
    DG,
    RT,
    BDM,
    BDFM,
    /// Vector-valued continuous Lagrange (negative-control velocity space).
    VectorCG,
    E,
    EMinus,
}

/// Family plus degrees; `k` is only meaningful for tensor-product families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolyFamily {
    pub family: Family,
    pub r: usize,
    pub s: usize,
    pub k: usize,
}

impl PolyFamily {
    pub fn new(family: Family, r: usize) -> Self {
        Self { family, r, s: 0, k: 0 }
    }

    pub fn tensor(family: Family, r: usize, s: usize, k: usize) -> Self {
        Self { family, r, s, k }
    }

    /// Parse `CG1`, `DG0`, `RT1`, `BDM1`, `BDFM1`, `CG2B`, `VCG1`, `E(2,1,3)`, `Eminus(1,1,0)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::UnsupportedElement(s.to_string());
        if let Some(rest) = s.strip_prefix("Eminus(").or_else(|| s.strip_prefix("E(")) {
            let fam = if s.starts_with("Eminus") { Family::EMinus } else { Family::E };
            let inner = rest.strip_suffix(')').ok_or_else(bad)?;
            let v: Vec<usize> = inner
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            if v.len() != 3 {
                return Err(bad());
            }
            return Ok(Self::tensor(fam, v[0], v[1], v[2]));
        }
        if s == "CG2B" {
            return Ok(Self::new(Family::CGB, 2));
        }
        let (name, deg) = s.split_at(s.find(|c: char| c.is_ascii_digit()).ok_or_else(bad)?);
        let r: usize = deg.parse().map_err(|_| bad())?;
        let family = match name {
            "CG" => Family::CG,
            "DG" => Family::DG,
            "RT" => Family::RT,
            "BDM" => Family::BDM,
            "BDFM" => Family::BDFM,
            "VCG" => Family::VectorCG,
            _ => return Err(bad()),
        };
        Ok(Self::new(family, r))
    }

    pub fn name(&self) -> String {
        match self.family {
            Family::CG => format!("CG{}", self.r),
            Family::CGB => "CG2B".to_string(),
            Family::DG => format!("DG{}", self.r),
            Family::RT => format!("RT{}", self.r),
            Family::BDM => format!("BDM{}", self.r),
            Family::BDFM => format!("BDFM{}", self.r),
            Family::VectorCG => format!("VCG{}", self.r),
            Family::E => format!("E({},{},{})", self.r, self.s, self.k),
            Family::EMinus => format!("Eminus({},{},{})", self.r, self.s, self.k),
        }
    }
}

/// Orientation behaviour of a DOF under reversal of its entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofOrientation {
    Invariant,
    /// Normal moment against the Legendre polynomial of this degree.
    NormalMoment(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofInfo {
    /// (entity dimension, local entity index).
    pub entity: (usize, usize),
    /// Position among the DOFs of the same entity.
    pub index_in_entity: usize,
    pub orientation: DofOrientation,
}

/// How a horizontal and a vertical basis function combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// h(x,y) v(z).
    Scalar,
    /// (h_x, h_y, 0) v(z) for an H(div) h.
    Horizontal,
    /// (-h_y, h_x, 0) v(z): the rotated H(div) field, tangentially continuous.
    HorizontalRotated,
    /// (0, 0, h v(z)).
    Vertical,
}

#[derive(Debug, Clone)]
pub struct TensorBlock {
    pub horizontal: Element,
    pub vertical: Element,
    pub combine: Combine,
    /// First local DOF of the block.
    pub offset: usize,
}

impl TensorBlock {
    pub fn dim(&self) -> usize {
        self.horizontal.dim() * self.vertical.dim()
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub name: String,
    pub shape: CellShape,
    pub continuity: Continuity,
    pub mapping: Mapping,
    /// Complex degree within its de Rham sequence.
    pub form_degree: usize,
    /// Highest polynomial degree in any reference variable.
    pub degree: usize,
    pub value_size: usize,
    pub basis: Vec<VecPoly>,
    pub dofs: Vec<DofInfo>,
    /// Non-empty for prism/hex elements.
    pub blocks: Vec<TensorBlock>,
}

impl Element {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_tensor(&self) -> bool {
        !self.blocks.is_empty()
    }

    /// Number of DOFs attached to each entity of dimension `d` (0 if none).
    pub fn dofs_per_entity(&self, d: usize) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for dof in &self.dofs {
            if dof.entity.0 == d {
                *counts.entry(dof.entity.1).or_insert(0usize) += 1;
            }
        }
        counts.values().copied().max().unwrap_or(0)
    }

    /// Reference value of every basis function at `x`: `out[dof][comp]`.
    pub fn eval_basis(&self, x: &[f64; 3]) -> Vec<Vec<f64>> {
        self.basis.iter().map(|b| b.iter().map(|p| p.eval(x)).collect()).collect()
    }

    /// Sum of the basis functions (scalar elements).
    pub fn basis_sum(&self) -> Poly {
        let mut s = Poly::zero();
        for b in &self.basis {
            s = &s + &b[0];
        }
        s
    }
}

struct Functional {
    points: Vec<[f64; 3]>,
    /// weights[q][comp]
    weights: Vec<Vec<f64>>,
}

impl Functional {
    fn point(x: [f64; 3], comp: usize, ncomp: usize) -> Self {
        let mut w = vec![0.0; ncomp];
        w[comp] = 1.0;
        Self { points: vec![x], weights: vec![w] }
    }

    fn apply(&self, v: &VecPoly) -> f64 {
        let mut s = 0.0;
        for (x, w) in self.points.iter().zip(&self.weights) {
            for (c, wc) in w.iter().enumerate() {
                if *wc != 0.0 {
                    s += wc * v[c].eval(x);
                }
            }
        }
        s
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])]
}

/// Normal moment of degree `p` over local edge `e` with the tangent-rotation
/// normal n = (t_y, -t_x), t pointing from the lower to the higher local vertex.
fn edge_normal_moment(shape: CellShape, e: usize, p: usize) -> Functional {
    let v = shape.vertices();
    let [a, b] = shape.edges()[e];
    let t = [v[b][0] - v[a][0], v[b][1] - v[a][1]];
    let n = [t[1], -t[0]];
    let (xs, ws) = gauss_legendre(6);
    let leg = shifted_legendre(p);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (s, w) in xs.iter().zip(&ws) {
        points.push(lerp(v[a], v[b], *s));
        let l = leg.eval(&[*s, 0.0, 0.0]);
        weights.push(vec![w * l * n[0], w * l * n[1]]);
    }
    Functional { points, weights }
}

/// Cell moment of a vector field against `q`.
fn interior_moment(shape: CellShape, q: &VecPoly) -> Functional {
    let rule = quadrature_rule(shape, 8);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (x, w) in rule.points.iter().zip(&rule.weights) {
        points.push(*x);
        weights.push(q.iter().map(|qc| w * qc.eval(x)).collect());
    }
    Functional { points, weights }
}

fn invert_vandermonde(name: &str, prime: &[VecPoly], functionals: &[Functional]) -> Result<Vec<VecPoly>> {
    let n = prime.len();
    if functionals.len() != n {
        return Err(Error::UnsupportedElement(format!(
            "{name}: {} functionals for a span of dimension {n}",
            functionals.len()
        )));
    }
    let v = DMatrix::from_fn(n, n, |i, j| functionals[i].apply(&prime[j]));
    let inv = v
        .try_inverse()
        .ok_or_else(|| Error::UnsupportedElement(format!("{name}: singular Vandermonde matrix")))?;
    Ok((0..n)
        .map(|j| {
            let c: Vec<f64> = (0..n).map(|k| inv[(k, j)]).collect();
            combine(prime, &c)
        })
        .collect())
}

fn scalar(p: Poly) -> VecPoly {
    vec![p]
}

fn vec2(a: Poly, b: Poly) -> VecPoly {
    vec![a, b]
}

fn x() -> Poly {
    Poly::var(0)
}
fn y() -> Poly {
    Poly::var(1)
}

struct Builder {
    name: String,
    shape: CellShape,
    continuity: Continuity,
    mapping: Mapping,
    form_degree: usize,
    value_size: usize,
    prime: Vec<VecPoly>,
    functionals: Vec<Functional>,
    dofs: Vec<DofInfo>,
}

impl Builder {
    fn new(name: &str, shape: CellShape, continuity: Continuity, mapping: Mapping, form_degree: usize, value_size: usize) -> Self {
        Self {
            name: name.to_string(),
            shape,
            continuity,
            mapping,
            form_degree,
            value_size,
            prime: Vec::new(),
            functionals: Vec::new(),
            dofs: Vec::new(),
        }
    }

    fn dof(&mut self, f: Functional, entity: (usize, usize), index: usize, orientation: DofOrientation) {
        self.functionals.push(f);
        self.dofs.push(DofInfo { entity, index_in_entity: index, orientation });
    }

    fn finish(self) -> Result<Element> {
        let basis = invert_vandermonde(&self.name, &self.prime, &self.functionals)?;
        for (i, f) in self.functionals.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (f.apply(b) - want).abs() > 1e-10 {
                    return Err(Error::UnsupportedElement(format!("{}: dual basis check failed", self.name)));
                }
            }
        }
        let degree = basis
            .iter()
            .flat_map(|b| b.iter().map(|p| (0..3).map(|v| p.degree_in(v)).max().unwrap_or(0).max(p.degree())))
            .max()
            .unwrap_or(0);
        Ok(Element {
            name: self.name,
            shape: self.shape,
            continuity: self.continuity,
            mapping: self.mapping,
            form_degree: self.form_degree,
            degree,
            value_size: self.value_size,
            basis,
            dofs: self.dofs,
            blocks: Vec::new(),
        })
    }
}

fn lagrange(shape: CellShape, r: usize, discontinuous: bool, bubble: bool) -> Result<Element> {
    let tdim = shape.tdim();
    let name = match (discontinuous, bubble) {
        (true, _) => format!("DG{r}"),
        (false, true) => "CG2B".to_string(),
        (false, false) => format!("CG{r}"),
    };
    let (cont, map, fdeg) = if discontinuous {
        (Continuity::L2, Mapping::Density, tdim)
    } else {
        (Continuity::H1, Mapping::Identity, 0)
    };
    let mut b = Builder::new(&name, shape, cont, map, fdeg, 1);
    let cell_entity = (tdim, 0);
    let v = shape.vertices();
    b.prime = match shape {
        CellShape::Interval => Poly::monomials(1, r),
        CellShape::Triangle => Poly::monomials(2, r),
        CellShape::Quad => Poly::tensor_monomials(r, r),
        _ => return Err(Error::UnsupportedElement(format!("{name} on {shape}"))),
    }
    .into_iter()
    .map(scalar)
    .collect();
    if bubble {
        let bub = &(&x() * &y()) * &(&(&Poly::constant(1.0) - &x()) - &y());
        b.prime.push(scalar(bub.scale(27.0)));
    }
    if r == 0 {
        let c = crate::reference::centroid(&v);
        b.dof(Functional::point(c, 0, 1), cell_entity, 0, DofOrientation::Invariant);
        return b.finish();
    }
    for (i, p) in v.iter().enumerate() {
        let ent = if discontinuous { cell_entity } else { (0, i) };
        let idx = if discontinuous { i } else { 0 };
        b.dof(Functional::point(*p, 0, 1), ent, idx, DofOrientation::Invariant);
    }
    let mut next = v.len();
    if r == 2 {
        if tdim == 1 {
            let idx = if discontinuous { next } else { 0 };
            b.dof(Functional::point([0.5, 0.0, 0.0], 0, 1), cell_entity, idx, DofOrientation::Invariant);
        } else {
            for (e, [a, c]) in shape.edges().iter().enumerate() {
                let m = lerp(v[*a], v[*c], 0.5);
                let (ent, idx) = if discontinuous { (cell_entity, next) } else { ((1, e), 0) };
                b.dof(Functional::point(m, 0, 1), ent, idx, DofOrientation::Invariant);
                next += 1;
            }
            if shape == CellShape::Quad {
                let idx = if discontinuous { next } else { 0 };
                b.dof(Functional::point([0.5, 0.5, 0.0], 0, 1), cell_entity, idx, DofOrientation::Invariant);
            }
        }
    } else if r > 2 {
        return Err(Error::UnsupportedElement(format!("{name} on {shape}")));
    }
    if bubble {
        b.dof(Functional::point([1.0 / 3.0, 1.0 / 3.0, 0.0], 0, 1), cell_entity, 0, DofOrientation::Invariant);
    }
    b.finish()
}

fn vector_lagrange(shape: CellShape) -> Result<Element> {
    let mut b = Builder::new("VCG1", shape, Continuity::H1, Mapping::Identity, 0, 2);
    let mons = match shape {
        CellShape::Triangle => Poly::monomials(2, 1),
        CellShape::Quad => Poly::tensor_monomials(1, 1),
        _ => return Err(Error::UnsupportedElement(format!("VCG1 on {shape}"))),
    };
    for c in 0..2 {
        for m in &mons {
            let mut v = vec![Poly::zero(), Poly::zero()];
            v[c] = m.clone();
            b.prime.push(v);
        }
    }
    for (i, p) in shape.vertices().iter().enumerate() {
        for c in 0..2 {
            b.dof(Functional::point(*p, c, 2), (0, i), c, DofOrientation::Invariant);
        }
    }
    b.finish()
}

fn edge_moments(b: &mut Builder, shape: CellShape, nmom: usize) {
    for e in 0..shape.edges().len() {
        for p in 0..nmom {
            b.dof(edge_normal_moment(shape, e, p), (1, e), p, DofOrientation::NormalMoment(p));
        }
    }
}

fn raviart_thomas(shape: CellShape, r: usize) -> Result<Element> {
    let name = format!("RT{r}");
    let mut b = Builder::new(&name, shape, Continuity::HDiv, Mapping::Contravariant, 1, 2);
    match (shape, r) {
        (CellShape::Triangle, _) if r <= 1 => {
            for m in Poly::monomials(2, r) {
                b.prime.push(vec2(m.clone(), Poly::zero()));
                b.prime.push(vec2(Poly::zero(), m));
            }
            // x * homogeneous P_r
            for j in 0..=r {
                let h = Poly::monomial([(r - j) as u8, j as u8, 0], 1.0);
                b.prime.push(vec2(&x() * &h, &y() * &h));
            }
            edge_moments(&mut b, shape, r + 1);
            if r == 1 {
                b.dof(interior_moment(shape, &vec2(Poly::constant(1.0), Poly::zero())), (2, 0), 0, DofOrientation::Invariant);
                b.dof(interior_moment(shape, &vec2(Poly::zero(), Poly::constant(1.0))), (2, 0), 1, DofOrientation::Invariant);
            }
        }
        (CellShape::Quad, _) if r <= 1 => {
            // Q_{r+1,r} x Q_{r,r+1}
            for j in 0..=r {
                for i in 0..=r + 1 {
                    b.prime.push(vec2(Poly::monomial([i as u8, j as u8, 0], 1.0), Poly::zero()));
                }
            }
            for j in 0..=r + 1 {
                for i in 0..=r {
                    b.prime.push(vec2(Poly::zero(), Poly::monomial([i as u8, j as u8, 0], 1.0)));
                }
            }
            edge_moments(&mut b, shape, r + 1);
            if r == 1 {
                let one = Poly::constant(1.0);
                let qs = [
                    vec2(one.clone(), Poly::zero()),
                    vec2(y(), Poly::zero()),
                    vec2(Poly::zero(), one),
                    vec2(Poly::zero(), x()),
                ];
                for (i, q) in qs.iter().enumerate() {
                    b.dof(interior_moment(shape, q), (2, 0), i, DofOrientation::Invariant);
                }
            }
        }
        _ => return Err(Error::UnsupportedElement(format!("{name} on {shape}"))),
    }
    b.finish()
}

fn bdm(shape: CellShape, r: usize) -> Result<Element> {
    if shape != CellShape::Triangle || r != 1 {
        return Err(Error::UnsupportedElement(format!("BDM{r} on {shape}")));
    }
    let mut b = Builder::new("BDM1", shape, Continuity::HDiv, Mapping::Contravariant, 1, 2);
    for m in Poly::monomials(2, 1) {
        b.prime.push(vec2(m.clone(), Poly::zero()));
        b.prime.push(vec2(Poly::zero(), m));
    }
    edge_moments(&mut b, shape, 2);
    b.finish()
}

/// {u in P2^2 : u.n in P1 on every edge}: edge P0/P1 normal moments plus
/// interior moments against constants and the rotation field (-y, x).
fn bdfm(shape: CellShape, r: usize) -> Result<Element> {
    if shape != CellShape::Triangle || r != 1 {
        return Err(Error::UnsupportedElement(format!("BDFM{r} on {shape}")));
    }
    let mut full = Vec::new();
    for m in Poly::monomials(2, 2) {
        full.push(vec2(m.clone(), Poly::zero()));
        full.push(vec2(Poly::zero(), m));
    }
    // Constraints: the P2 normal moment vanishes on each edge.
    let cons: Vec<Functional> = (0..3).map(|e| edge_normal_moment(shape, e, 2)).collect();
    let c = DMatrix::from_fn(3, full.len(), |i, j| cons[i].apply(&full[j]));
    let eig = nalgebra::SymmetricEigen::new(c.transpose() * &c);
    let mut prime = Vec::new();
    for col in 0..full.len() {
        if eig.eigenvalues[col].abs() < 1e-10 {
            let coeffs: Vec<f64> = (0..full.len()).map(|j| eig.eigenvectors[(j, col)]).collect();
            prime.push(combine(&full, &coeffs));
        }
    }
    let mut b = Builder::new("BDFM1", shape, Continuity::HDiv, Mapping::Contravariant, 1, 2);
    b.prime = prime;
    edge_moments(&mut b, shape, 2);
    // Rotated rather than radial linear field: the curl of the cubic bubble
    // is orthogonal to (x, y).
    let interior = [
        vec2(Poly::constant(1.0), Poly::zero()),
        vec2(Poly::zero(), Poly::constant(1.0)),
        vec2(-&y(), x()),
    ];
    for (i, q) in interior.iter().enumerate() {
        b.dof(interior_moment(shape, q), (2, 0), i, DofOrientation::Invariant);
    }
    b.finish()
}

/// Build a reference element for a 1D/2D family, or a tensor-product element
/// on prisms and hexes.
pub fn build_reference_element(fam: PolyFamily, shape: CellShape) -> Result<Element> {
    match fam.family {
        Family::CG if fam.r >= 1 => lagrange(shape, fam.r, false, false),
        Family::CGB if fam.r == 2 && shape == CellShape::Triangle => lagrange(shape, 2, false, true),
        Family::DG => lagrange(shape, fam.r, true, false),
        Family::RT => raviart_thomas(shape, fam.r),
        Family::BDM => bdm(shape, fam.r),
        Family::BDFM => bdfm(shape, fam.r),
        Family::VectorCG if fam.r == 1 => vector_lagrange(shape),
        Family::E | Family::EMinus => tensor_family(fam, shape),
        _ => Err(Error::UnsupportedElement(format!("{} on {shape}", fam.name()))),
    }
}

/// The 2D complex (k = 0, 1, 2) underlying a tensor family.
pub fn horizontal_complex(family: Family, r: usize, base: CellShape) -> Result<[Element; 3]> {
    let err = || Error::UnsupportedElement(format!("{family:?} r={r} on {base}"));
    match family {
        Family::EMinus if (1..=2).contains(&r) => Ok([
            build_reference_element(PolyFamily::new(Family::CG, r), base)?,
            build_reference_element(PolyFamily::new(Family::RT, r - 1), base)?,
            build_reference_element(PolyFamily::new(Family::DG, r - 1), base)?,
        ]),
        Family::E if r == 2 && base == CellShape::Triangle => Ok([
            build_reference_element(PolyFamily::new(Family::CG, 2), base)?,
            build_reference_element(PolyFamily::new(Family::BDM, 1), base)?,
            build_reference_element(PolyFamily::new(Family::DG, 0), base)?,
        ]),
        _ => Err(err()),
    }
}

/// The 1D complex (CG_s, DG_{s-1}).
pub fn vertical_complex(s: usize) -> Result<[Element; 2]> {
    if !(1..=2).contains(&s) {
        return Err(Error::UnsupportedElement(format!("vertical degree s={s}")));
    }
    Ok([
        build_reference_element(PolyFamily::new(Family::CG, s), CellShape::Interval)?,
        build_reference_element(PolyFamily::new(Family::DG, s - 1), CellShape::Interval)?,
    ])
}

fn tensor_family(fam: PolyFamily, shape: CellShape) -> Result<Element> {
    let base = shape
        .base()
        .ok_or_else(|| Error::UnsupportedElement(format!("{} on {shape}", fam.name())))?;
    let h = horizontal_complex(fam.family, fam.r, base)?;
    let v = vertical_complex(fam.s)?;
    let parts: Vec<(usize, usize, Combine)> = match fam.k {
        0 => vec![(0, 0, Combine::Scalar)],
        1 => vec![(1, 0, Combine::HorizontalRotated), (0, 1, Combine::Vertical)],
        2 => vec![(2, 0, Combine::Vertical), (1, 1, Combine::Horizontal)],
        3 => vec![(2, 1, Combine::Scalar)],
        _ => return Err(Error::UnsupportedElement(format!("{} (k must be 0..=3)", fam.name()))),
    };
    let blocks = parts
        .into_iter()
        .map(|(hk, vk, c)| (h[hk].clone(), v[vk].clone(), c))
        .collect::<Vec<_>>();
    let mut e = tensor_product(&blocks, fam.k)?;
    e.name = fam.name();
    Ok(e)
}

/// Sum of tensor-product blocks; `k` fixes continuity and pullback.
pub fn tensor_product(blocks: &[(Element, Element, Combine)], k: usize) -> Result<Element> {
    let (continuity, mapping) = match k {
        0 => (Continuity::H1, Mapping::Identity),
        1 => (Continuity::HCurl, Mapping::Covariant),
        2 => (Continuity::HDiv, Mapping::Contravariant),
        3 => (Continuity::L2, Mapping::Density),
        _ => return Err(Error::UnsupportedElement(format!("tensor product with k={k}"))),
    };
    let mut basis = Vec::new();
    let mut dofs = Vec::new();
    let mut tblocks = Vec::new();
    let mut shape = None;
    let mut value_size = 1;
    for (hz, vt, comb) in blocks {
        if vt.shape != CellShape::Interval {
            return Err(Error::Incompatible("vertical factor must live on the interval".into()));
        }
        let expect_h = match comb {
            Combine::Horizontal | Combine::HorizontalRotated => Continuity::HDiv,
            _ => hz.continuity,
        };
        if hz.continuity != expect_h || (matches!(comb, Combine::Scalar | Combine::Vertical) && hz.value_size != 1) {
            return Err(Error::Incompatible(format!("block {} x {} with {comb:?}", hz.name, vt.name)));
        }
        let cell = hz
            .shape
            .extruded()
            .ok_or_else(|| Error::Incompatible("horizontal factor must be 2D".into()))?;
        if *shape.get_or_insert(cell) != cell {
            return Err(Error::Incompatible("blocks on different cells".into()));
        }
        if *comb != Combine::Scalar {
            value_size = 3;
        }
        let offset = basis.len();
        for (ih, hb) in hz.basis.iter().enumerate() {
            for (iv, vb) in vt.basis.iter().enumerate() {
                let vz = vb[0].move_var(0, 2);
                let f = match comb {
                    Combine::Scalar => vec![&hb[0] * &vz],
                    Combine::Horizontal => vec![&hb[0] * &vz, &hb[1] * &vz, Poly::zero()],
                    Combine::HorizontalRotated => vec![-&(&hb[1] * &vz), &hb[0] * &vz, Poly::zero()],
                    Combine::Vertical => vec![Poly::zero(), Poly::zero(), &hb[0] * &vz],
                };
                basis.push(f);
                let hd = hz.dofs[ih];
                let vd = vt.dofs[iv];
                dofs.push(DofInfo {
                    entity: (hd.entity.0 + vd.entity.0, hd.entity.1 * 2 + vd.entity.1),
                    index_in_entity: hd.index_in_entity * vt.dim() + vd.index_in_entity,
                    orientation: hd.orientation,
                });
            }
        }
        tblocks.push(TensorBlock { horizontal: hz.clone(), vertical: vt.clone(), combine: *comb, offset });
    }
    let shape = shape.ok_or_else(|| Error::Incompatible("empty tensor product".into()))?;
    if value_size == 3 {
        for b in basis.iter_mut() {
            if b.len() == 1 {
                return Err(Error::Incompatible("mixing scalar and vector blocks".into()));
            }
        }
    }
    let degree = tblocks.iter().map(|b| b.horizontal.degree.max(b.vertical.degree)).max().unwrap_or(0);
    let name = tblocks
        .iter()
        .map(|b| format!("{}x{}", b.horizontal.name, b.vertical.name))
        .collect::<Vec<_>>()
        .join("+");
    Ok(Element {
        name,
        shape,
        continuity,
        mapping,
        form_degree: k,
        degree: degree + 1,
        value_size,
        basis,
        dofs,
        blocks: tblocks,
    })
}

/// Vertical part V^{2,v} of a tensor-product H(div) element.
pub fn vertical_part(e: &Element) -> Result<Element> {
    let b = e
        .blocks
        .iter()
        .find(|b| b.combine == Combine::Vertical && e.continuity == Continuity::HDiv)
        .ok_or_else(|| Error::Incompatible(format!("{} has no vertical H(div) block", e.name)))?;
    tensor_product(&[(b.horizontal.clone(), b.vertical.clone(), Combine::Vertical)], 2)
}

/// Horizontal part V^{2,h} of a tensor-product H(div) element.
pub fn horizontal_part(e: &Element) -> Result<Element> {
    let b = e
        .blocks
        .iter()
        .find(|b| b.combine == Combine::Horizontal)
        .ok_or_else(|| Error::Incompatible(format!("{} has no horizontal H(div) block", e.name)))?;
    tensor_product(&[(b.horizontal.clone(), b.vertical.clone(), Combine::Horizontal)], 2)
}

/// Temperature space: the scalar element sharing the DOF layout of a
/// vertical H(div) block, mapped by composition.
pub fn temperature_space(vertical: &Element) -> Result<Element> {
    if vertical.continuity != Continuity::HDiv
        || vertical.blocks.len() != 1
        || vertical.blocks[0].combine != Combine::Vertical
    {
        return Err(Error::Incompatible(format!("{} is not a vertical H(div) block", vertical.name)));
    }
    let b = &vertical.blocks[0];
    let mut e = tensor_product(&[(b.horizontal.clone(), b.vertical.clone(), Combine::Scalar)], 0)?;
    e.continuity = Continuity::L2;
    e.mapping = Mapping::Identity;
    e.name = format!("Vt[{}x{}]", b.horizontal.name, b.vertical.name);
    Ok(e)
}

/// Physical value of a reference value for complex degree `k` in dimension `n`.
pub fn pullback(k: usize, n: usize, v: &[f64], j: &Jacobian) -> Result<Vec<f64>> {
    let det = j.det();
    if det <= 0.0 || !det.is_finite() {
        return Err(Error::SingularJacobian { cell: usize::MAX, det });
    }
    let mapping = if k == 0 {
        Mapping::Identity
    } else if k == n {
        Mapping::Density
    } else if k == n - 1 {
        Mapping::Contravariant
    } else {
        Mapping::Covariant
    };
    Ok(apply_mapping(mapping, v, j, det))
}

pub fn apply_mapping(mapping: Mapping, v: &[f64], j: &Jacobian, det: f64) -> Vec<f64> {
    match mapping {
        Mapping::Identity => v.to_vec(),
        Mapping::Density => v.iter().map(|x| x / det).collect(),
        Mapping::Contravariant => j.apply(v)[..j.gdim].iter().map(|x| x / det).collect(),
        Mapping::Covariant => {
            let k = j.inverse_transpose();
            (0..j.gdim).map(|i| (0..j.tdim).map(|a| k[i][a] * v[a]).sum()).collect()
        }
    }
}

/// Reference derivative taking form degree k to k+1: d/dx in 1D, rot-grad
/// then div in 2D, grad/curl/div in 3D.
pub fn exterior_derivative(e: &Element, f: &VecPoly) -> VecPoly {
    let tdim = e.shape.tdim();
    match (tdim, e.form_degree) {
        (1, 0) => vec![f[0].deriv(0)],
        (2, 0) => vec![-&f[0].deriv(1), f[0].deriv(0)],
        (2, 1) => vec![&f[0].deriv(0) + &f[1].deriv(1)],
        (3, 0) => vec![f[0].deriv(0), f[0].deriv(1), f[0].deriv(2)],
        (3, 1) => vec![
            &f[2].deriv(1) - &f[1].deriv(2),
            &f[0].deriv(2) - &f[2].deriv(0),
            &f[1].deriv(0) - &f[0].deriv(1),
        ],
        (3, 2) => vec![&(&f[0].deriv(0) + &f[1].deriv(1)) + &f[2].deriv(2)],
        _ => vec![Poly::zero(); 1],
    }
}

/// Largest least-squares residual of d(basis) projected onto `next`'s span,
/// sampled at points in the reference cell.
pub fn complex_residual(e: &Element, next: &Element) -> f64 {
    let pts = sample_points(e.shape, 40);
    let ncomp = next.value_size;
    let rows = pts.len() * ncomp;
    let a = DMatrix::from_fn(rows, next.dim(), |r, j| next.basis[j][r % ncomp].eval(&pts[r / ncomp]));
    let svd = a.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for f in &e.basis {
        let d = exterior_derivative(e, f);
        let b = nalgebra::DVector::from_fn(rows, |r, _| d[r % ncomp].eval(&pts[r / ncomp]));
        let c = svd.solve(&b, 1e-12).expect("svd solve");
        let res = (&a * c - &b).norm() / (rows as f64).sqrt();
        worst = worst.max(res);
    }
    worst
}

fn sample_points(shape: CellShape, n: usize) -> Vec<[f64; 3]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let inside = match shape {
            CellShape::Triangle | CellShape::Prism => p[0] + p[1] <= 1.0,
            _ => true,
        };
        if inside {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(name: &str, shape: CellShape) -> Element {
        build_reference_element(PolyFamily::parse(name).unwrap(), shape).unwrap()
    }


    #[test]
    fn dimensions_match_standard_counts() {
        let cases = [
            ("CG1", CellShape::Triangle, 3),
            ("CG2", CellShape::Triangle, 6),
            ("CG2B", CellShape::Triangle, 7),
            ("DG0", CellShape::Triangle, 1),
            ("DG1", CellShape::Triangle, 3),
            ("RT0", CellShape::Triangle, 3),
            ("RT1", CellShape::Triangle, 8),
            ("BDM1", CellShape::Triangle, 6),
            ("BDFM1", CellShape::Triangle, 9),
            ("CG1", CellShape::Quad, 4),
            ("CG2", CellShape::Quad, 9),
            ("DG1", CellShape::Quad, 4),
            ("RT0", CellShape::Quad, 4),
            ("RT1", CellShape::Quad, 12),
            ("CG2", CellShape::Interval, 3),
            ("DG1", CellShape::Interval, 2),
            ("VCG1", CellShape::Triangle, 6),
        ];
        for (n, s, d) in cases {
            assert_eq!(el(n, s).dim(), d, "{n} on {s}");
        }
    }

    #[test]
    fn dg0_is_single_constant() {
        let e = el("DG0", CellShape::Triangle);
        assert_eq!(e.dim(), 1);
        assert!((e.basis[0][0].eval(&[0.2, 0.1, 0.0]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bdm1_dofs_all_on_edges() {
        let e = el("BDM1", CellShape::Triangle);
        assert!(e.dofs.iter().all(|d| d.entity.0 == 1));
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for (n, s) in [
            ("CG1", CellShape::Triangle),
            ("CG2", CellShape::Triangle),
            ("CG2B", CellShape::Triangle),
            ("DG1", CellShape::Triangle),
            ("CG2", CellShape::Quad),
            ("DG1", CellShape::Quad),
            ("CG2", CellShape::Interval),
        ] {
            let sum = el(n, s).basis_sum();
            let r = &sum - &Poly::constant(1.0);
            assert!(r.terms().iter().all(|(_, c)| c.abs() < 1e-12), "{n} on {s}: {r:?}");
        }
    }

    #[test]
    fn lagrange_nodal_property() {
        let e = el("CG2", CellShape::Triangle);
        let v = CellShape::Triangle.vertices();
        for (i, p) in v.iter().enumerate() {
            for (j, b) in e.basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((b[0].eval(p) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rt0_edge_fluxes_are_dual() {
        let e = el("RT0", CellShape::Triangle);
        for ed in 0..3 {
            let f = edge_normal_moment(CellShape::Triangle, ed, 0);
            for (j, b) in e.basis.iter().enumerate() {
                let want = if ed == j { 1.0 } else { 0.0 };
                assert!((f.apply(b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_traces_have_edge_degree() {
        // BDFM1 normal trace is linear on every edge; RT1 likewise.
        for n in ["BDFM1", "RT1"] {
            let e = el(n, CellShape::Triangle);
            for ed in 0..3 {
                let f = edge_normal_moment(CellShape::Triangle, ed, 2);
                for b in &e.basis {
                    assert!(f.apply(b).abs() < 1e-12, "{n} edge {ed}");
                }
            }
        }
    }

    #[test]
    fn complexes_are_exact_in_2d() {
        let tri = CellShape::Triangle;
        let quad = CellShape::Quad;
        let pairs = [
            ("CG1", "RT0", tri),
            ("RT0", "DG0", tri),
            ("CG2", "RT1", tri),
            ("RT1", "DG1", tri),
            ("CG2", "BDM1", tri),
            ("BDM1", "DG0", tri),
            ("CG2B", "BDFM1", tri),
            ("BDFM1", "DG1", tri),
            ("CG1", "RT0", quad),
            ("RT0", "DG0", quad),
            ("CG2", "RT1", quad),
            ("RT1", "DG1", quad),
        ];
        for (a, b, s) in pairs {
            let r = complex_residual(&el(a, s), &el(b, s));
            assert!(r < 1e-10, "{a} -> {b} on {s}: {r:e}");
        }
        let r = complex_residual(&el("CG2", CellShape::Interval), &el("DG1", CellShape::Interval));
        assert!(r < 1e-10);
    }

    #[test]
    fn tensor_dimensions() {
        let p = CellShape::Prism;
        let e = build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 3), p).unwrap();
        assert_eq!(e.dim(), 1);
        let e = build_reference_element(PolyFamily::tensor(Family::E, 2, 1, 2), p).unwrap();
        assert_eq!(e.dim(), 2 + 6);
        assert_eq!(e.blocks[0].dim(), 2);
        assert_eq!(e.blocks[1].dim(), 6);
        let e = build_reference_element(PolyFamily::tensor(Family::EMinus, 2, 2, 0), p).unwrap();
        assert_eq!(e.dim(), 6 * 3);
        let v = vertical_part(&build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 2), p).unwrap()).unwrap();
        assert_eq!(v.dim(), 2);
    }

    #[test]
    fn tensor_complexes_are_exact() {
        for shape in [CellShape::Prism, CellShape::Hex] {
            for (fam, r, s) in [(Family::EMinus, 1, 1), (Family::EMinus, 2, 2), (Family::EMinus, 1, 2), (Family::E, 2, 1)] {
                if fam == Family::E && shape == CellShape::Hex {
                    continue;
                }
                for k in 0..3 {
                    let a = build_reference_element(PolyFamily::tensor(fam, r, s, k), shape).unwrap();
                    let b = build_reference_element(PolyFamily::tensor(fam, r, s, k + 1), shape).unwrap();
                    let res = complex_residual(&a, &b);
                    assert!(res < 1e-10, "{:?}({r},{s}) k={k} on {shape}: {res:e}", fam);
                }
            }
        }
    }

    #[test]
    fn temperature_space_is_scalar_copy_of_vertical_block() {
        let v2 = build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 2), CellShape::Prism).unwrap();
        let vv = vertical_part(&v2).unwrap();
        let t = temperature_space(&vv).unwrap();
        assert_eq!(t.dim(), vv.dim());
        assert_eq!(t.value_size, 1);
        assert_eq!(t.mapping, Mapping::Identity);
        let sum = t.basis_sum();
        assert!((&sum - &Poly::constant(1.0)).terms().iter().all(|(_, c)| c.abs() < 1e-12));
        assert!(temperature_space(&v2).is_err());
    }

    #[test]
    fn pullback_examples() {
        let id = Jacobian::identity(2);
        for k in 0..=2 {
            let v = if k == 1 { vec![0.3, -0.2] } else { vec![0.7] };
            assert_eq!(pullback(k, 2, &v, &id).unwrap(), v);
        }
        let j2 = Jacobian::scaled_identity(2, 2.0);
        assert_eq!(pullback(1, 2, &[1.0, 2.0], &j2).unwrap(), vec![0.5, 1.0]);
        assert_eq!(pullback(2, 2, &[1.0], &j2).unwrap(), vec![0.25]);
        let j3 = Jacobian::scaled_identity(3, 2.0);
        assert_eq!(pullback(1, 3, &[1.0, 2.0, 4.0], &j3).unwrap(), vec![0.5, 1.0, 2.0]);
        assert!(pullback(1, 2, &[1.0, 0.0], &Jacobian::scaled_identity(2, 0.0)).is_err());
    }

    #[test]
    fn unsupported_combinations_error() {
        assert!(build_reference_element(PolyFamily::new(Family::BDM, 1), CellShape::Quad).is_err());
        assert!(build_reference_element(PolyFamily::new(Family::CG, 3), CellShape::Triangle).is_err());
        assert!(build_reference_element(PolyFamily::tensor(Family::E, 1, 1, 0), CellShape::Prism).is_err());
        assert!(PolyFamily::parse("XYZ1").is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(PolyFamily::parse("RT1").unwrap(), PolyFamily::new(Family::RT, 1));
        assert_eq!(PolyFamily::parse("Eminus(1,2,3)").unwrap(), PolyFamily::tensor(Family::EMinus, 1, 2, 3));
        assert_eq!(PolyFamily::parse("E(2,1,0)").unwrap().name(), "E(2,1,0)");
    }
}
