//! Function spaces: global DOF numbering with orientation signs.
//!
//! 1D/2D spaces number DOFs by entity (vertices, then edges, then cells).
//! Tensor-product spaces on extruded meshes number each block as
//! `offset + horizontal_dof * n_vertical + vertical_dof`.

use std::sync::Arc;

use crate::element::{Continuity, DofOrientation, Element};
use crate::error::{Error, Result};
use crate::mesh::{build_interval, Mesh};

#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub mesh: Arc<Mesh>,
    pub element: Element,
    pub ndofs: usize,
    cell_dofs: Vec<usize>,
    cell_signs: Vec<f64>,
    /// No inter-cell continuity.
    pub broken: bool,
    /// Fields are kept orthogonal to constants (mean-free).
    pub mean_free: bool,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>, element: Element) -> Result<Self> {
        Self::build(mesh, element, false)
    }

    /// Same element, DOFs duplicated per cell.
    pub fn broken(mesh: Arc<Mesh>, element: Element) -> Result<Self> {
        Self::build(mesh, element, true)
    }

    pub fn break_space(&self) -> Result<Self> {
        Self::build(self.mesh.clone(), self.element.clone(), true)
    }

    pub fn with_mean_free(mut self, flag: bool) -> Self {
        self.mean_free = flag;
        self
    }

    fn build(mesh: Arc<Mesh>, element: Element, broken: bool) -> Result<Self> {
        if element.shape != mesh.shape {
            return Err(Error::Incompatible(format!("element on {} vs mesh of {}", element.shape, mesh.shape)));
        }
        let n = element.dim();
        let nc = mesh.num_cells();
        if broken {
            return Ok(Self {
                cell_dofs: (0..nc * n).collect(),
                cell_signs: vec![1.0; nc * n],
                ndofs: nc * n,
                mesh,
                element,
                broken,
                mean_free: false,
            });
        }
        let (cell_dofs, cell_signs, ndofs) = if element.is_tensor() {
            tensor_numbering(&mesh, &element)?
        } else {
            entity_numbering(&mesh, &element)?
        };
        Ok(Self { mesh, element, ndofs, cell_dofs, cell_signs, broken, mean_free: false })
    }

    pub fn local_dim(&self) -> usize {
        self.element.dim()
    }

    pub fn dofs(&self, c: usize) -> &[usize] {
        let n = self.element.dim();
        &self.cell_dofs[c * n..(c + 1) * n]
    }

    pub fn signs(&self, c: usize) -> &[f64] {
        let n = self.element.dim();
        &self.cell_signs[c * n..(c + 1) * n]
    }

    /// Gather the coefficients of cell `c`, matching tabulations (whose
    /// basis functions already carry the orientation signs).
    pub fn local_coeffs(&self, c: usize, global: &[f64]) -> Vec<f64> {
        self.dofs(c).iter().map(|d| global[*d]).collect()
    }

    /// Coefficients of cell `c` in the unsigned reference basis.
    pub fn reference_coeffs(&self, c: usize, global: &[f64]) -> Vec<f64> {
        self.dofs(c).iter().zip(self.signs(c)).map(|(d, s)| global[*d] * s).collect()
    }

    pub fn same_layout(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) && self.ndofs == other.ndofs && self.cell_dofs == other.cell_dofs
    }

    /// Embedding of this (conforming) space into its broken counterpart:
    /// `broken[c*n + i] = sign * global[dof]`.
    pub fn to_broken(&self, global: &[f64]) -> Vec<f64> {
        (0..self.mesh.num_cells()).flat_map(|c| self.reference_coeffs(c, global)).collect()
    }
}

fn reversal_sign(o: DofOrientation, reversed: bool) -> f64 {
    match o {
        DofOrientation::NormalMoment(p) if reversed => {
            if p % 2 == 0 {
                -1.0
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

fn entity_numbering(mesh: &Mesh, element: &Element) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    let tdim = mesh.tdim();
    if tdim > 2 {
        return Err(Error::UnsupportedElement(format!("{} needs a tensor-product element on 3D cells", element.name)));
    }
    let counts: Vec<usize> = (0..=tdim).map(|d| element.dofs_per_entity(d)).collect();
    let num_entities: Vec<usize> = (0..=tdim)
        .map(|d| match (tdim, d) {
            (_, 0) => mesh.num_vertices(),
            (2, 1) => mesh.num_edges(),
            _ => mesh.num_cells(),
        })
        .collect();
    let mut offsets = vec![0usize; tdim + 2];
    for d in 0..=tdim {
        offsets[d + 1] = offsets[d] + counts[d] * num_entities[d];
    }
    let n = element.dim();
    let nc = mesh.num_cells();
    let mut dofs = Vec::with_capacity(nc * n);
    let mut signs = Vec::with_capacity(nc * n);
    for c in 0..nc {
        for d in &element.dofs {
            let (dim, idx) = d.entity;
            let (gid, reversed) = match (tdim, dim) {
                (_, 0) => (mesh.cell_vertices(c)[idx], false),
                (2, 1) => (mesh.edge_of(c, idx), mesh.edge_reversed(c, idx)),
                _ => (c, false),
            };
            dofs.push(offsets[dim] + gid * counts[dim] + d.index_in_entity);
            signs.push(reversal_sign(d.orientation, reversed));
        }
    }
    Ok((dofs, signs, offsets[tdim + 1]))
}

fn tensor_numbering(mesh: &Mesh, element: &Element) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    let ext = mesh
        .extrusion
        .as_ref()
        .ok_or_else(|| Error::Incompatible("tensor-product spaces need an extruded mesh".into()))?;
    let base = Arc::new((*ext.base).clone());
    let layers = ext.layers;
    let column = Arc::new(build_interval(layers, 1.0)?);
    let n = element.dim();
    let nc = mesh.num_cells();
    let mut dofs = vec![0usize; nc * n];
    let mut signs = vec![1.0; nc * n];
    let mut offset = 0;
    for b in &element.blocks {
        let hs = if b.horizontal.continuity == Continuity::L2 {
            FunctionSpace::broken(base.clone(), b.horizontal.clone())?
        } else {
            FunctionSpace::new(base.clone(), b.horizontal.clone())?
        };
        let vs = FunctionSpace::new(column.clone(), b.vertical.clone())?;
        let nv = b.vertical.dim();
        for c in 0..nc {
            let (bc, layer) = (c / layers, c % layers);
            for ih in 0..b.horizontal.dim() {
                for iv in 0..nv {
                    let local = b.offset + ih * nv + iv;
                    dofs[c * n + local] = offset + hs.dofs(bc)[ih] * vs.ndofs + vs.dofs(layer)[iv];
                    signs[c * n + local] = hs.signs(bc)[ih] * vs.signs(layer)[iv];
                }
            }
        }
        offset += hs.ndofs * vs.ndofs;
    }
    Ok((dofs, signs, offset))
}

/// Discontinuous piecewise polynomials on facets of a 2D mesh, in the
/// Legendre basis of the global facet parameter.
#[derive(Debug, Clone)]
pub struct TraceSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub ndofs: usize,
}

impl TraceSpace {
    pub fn per_facet(&self) -> usize {
        self.degree + 1
    }

    pub fn facet_dofs(&self, f: usize) -> std::ops::Range<usize> {
        f * self.per_facet()..(f + 1) * self.per_facet()
    }
}

/// Trace space matching the normal-component degree of an H(div) space.
pub fn trace_space(space: &FunctionSpace) -> Result<TraceSpace> {
    if space.element.continuity != Continuity::HDiv || space.element.is_tensor() || space.mesh.tdim() != 2 {
        return Err(Error::Incompatible(format!("trace space of {} requires a 2D H(div) element", space.element.name)));
    }
    let degree = space.element.dofs_per_entity(1).saturating_sub(1);
    let nf = space.mesh.facets.len();
    Ok(TraceSpace { mesh: space.mesh.clone(), degree, ndofs: nf * (degree + 1) })
}

/// Coefficient vector over a function space.
#[derive(Debug, Clone)]
pub struct Field {
    pub space: Arc<FunctionSpace>,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(space: Arc<FunctionSpace>) -> Self {
        let n = space.ndofs;
        Self { space, values: vec![0.0; n] }
    }

    pub fn new(space: Arc<FunctionSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.ndofs {
            return Err(Error::Incompatible(format!("{} coefficients for {} DOFs", values.len(), space.ndofs)));
        }
        Ok(Self { space, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{build_reference_element, Family, PolyFamily};
    use crate::mesh::{build_periodic_rect, extrude};
    use crate::reference::CellShape;

    fn space(fam: Family, r: usize, mesh: &Arc<Mesh>) -> FunctionSpace {
        let e = build_reference_element(PolyFamily::new(fam, r), mesh.shape).unwrap();
        FunctionSpace::new(mesh.clone(), e).unwrap()
    }

    #[test]
    fn torus_dimensions() {
        let m = Arc::new(build_periodic_rect(4, 4, 1.0, 1.0, CellShape::Triangle).unwrap());
        assert_eq!(space(Family::CG, 1, &m).ndofs, 16);
        assert_eq!(space(Family::RT, 0, &m).ndofs, 48);
        assert_eq!(space(Family::DG, 0, &m).ndofs, 32);
        assert_eq!(space(Family::CG, 2, &m).ndofs, 16 + 48);
        assert_eq!(space(Family::RT, 1, &m).ndofs, 2 * 48 + 2 * 32);
    }

    #[test]
    fn broken_rt0_on_two_triangle_torus() {
        let m = Arc::new(build_periodic_rect(1, 1, 1.0, 1.0, CellShape::Triangle).unwrap());
        let v = space(Family::RT, 0, &m);
        assert_eq!(v.ndofs, 3);
        assert_eq!(v.break_space().unwrap().ndofs, 6);
        let t = trace_space(&v).unwrap();
        assert_eq!(t.degree, 0);
        assert_eq!(t.ndofs, 3);
        assert!(trace_space(&space(Family::CG, 1, &m)).is_err());
    }

    #[test]
    fn shared_edge_signs_disagree() {
        let m = Arc::new(build_periodic_rect(3, 3, 1.0, 1.0, CellShape::Triangle).unwrap());
        let v = space(Family::RT, 0, &m);
        for e in &m.edges {
            let (c0, l0) = e.cells[0];
            let (c1, l1) = e.cells[1];
            assert_eq!(v.dofs(c0)[l0], v.dofs(c1)[l1]);
        }
    }

    #[test]
    fn tensor_space_dimensions() {
        let base = build_periodic_rect(2, 2, 1.0, 1.0, CellShape::Quad).unwrap();
        let m = Arc::new(extrude(&base, 3, &[1.0; 3], None).unwrap());
        let e = build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 0), CellShape::Hex).unwrap();
        let s = FunctionSpace::new(m.clone(), e).unwrap();
        assert_eq!(s.ndofs, 4 * 4);
        let e = build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 2), CellShape::Hex).unwrap();
        let s = FunctionSpace::new(m.clone(), e).unwrap();
        // vertical DG0 x CG1: 4 * 4 levels; horizontal RT0 x DG0: 8 edges * 3
        assert_eq!(s.ndofs, 16 + 24);
        let e = build_reference_element(PolyFamily::tensor(Family::EMinus, 1, 1, 3), CellShape::Hex).unwrap();
        assert_eq!(FunctionSpace::new(m, e).unwrap().ndofs, 12);
    }
}
