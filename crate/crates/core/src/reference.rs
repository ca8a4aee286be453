//! Reference cells: vertices, sub-entities and facet parameterisations.
//!
//! Triangle: (0,0), (1,0), (0,1); edges e0 = (1,2), e1 = (0,2), e2 = (0,1).
//! Quad: (0,0), (1,0), (0,1), (1,1); edges (0,1), (0,2), (1,3), (2,3).
//! Prisms and hexes are the base cell times [0,1] with bottom vertices first.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellShape {
    Interval,
    Triangle,
    Quad,
    Prism,
    Hex,
}

impl CellShape {
    pub fn tdim(self) -> usize {
        match self {
            CellShape::Interval => 1,
            CellShape::Triangle | CellShape::Quad => 2,
            CellShape::Prism | CellShape::Hex => 3,
        }
    }

    pub fn num_vertices(self) -> usize {
        match self {
            CellShape::Interval => 2,
            CellShape::Triangle => 3,
            CellShape::Quad => 4,
            CellShape::Prism => 6,
            CellShape::Hex => 8,
        }
    }

    pub fn vertices(self) -> Vec<[f64; 3]> {
        match self {
            CellShape::Interval => vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            CellShape::Triangle => vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            CellShape::Quad => vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
            ],
            CellShape::Prism | CellShape::Hex => {
                let base = self.base().unwrap().vertices();
                let mut v: Vec<[f64; 3]> = base.clone();
                v.extend(base.iter().map(|p| [p[0], p[1], 1.0]));
                v
            }
        }
    }

    /// Horizontal cell of a tensor-product cell.
    pub fn base(self) -> Option<CellShape> {
        match self {
            CellShape::Prism => Some(CellShape::Triangle),
            CellShape::Hex => Some(CellShape::Quad),
            _ => None,
        }
    }

    pub fn extruded(self) -> Option<CellShape> {
        match self {
            CellShape::Triangle => Some(CellShape::Prism),
            CellShape::Quad => Some(CellShape::Hex),
            _ => None,
        }
    }

    /// Local vertex pairs of the edges of a 2D cell (or the interval itself).
    pub fn edges(self) -> Vec<[usize; 2]> {
        match self {
            CellShape::Interval => vec![[0, 1]],
            CellShape::Triangle => vec![[1, 2], [0, 2], [0, 1]],
            CellShape::Quad => vec![[0, 1], [0, 2], [1, 3], [2, 3]],
            _ => panic!("edges() is only defined for 1D and 2D cells"),
        }
    }

    pub fn measure(self) -> f64 {
        match self {
            CellShape::Triangle => 0.5,
            CellShape::Prism => 0.5,
            _ => 1.0,
        }
    }

    pub fn num_facets(self) -> usize {
        match self {
            CellShape::Interval => 2,
            CellShape::Triangle => 3,
            CellShape::Quad => 4,
            CellShape::Prism => 5,
            CellShape::Hex => 6,
        }
    }

    /// Affine parameterisation of facet `f`: origin, tangent vectors and the
    /// outward reference normal. Facet parameter domains are the reference
    /// interval, triangle or quad.
    pub fn facet(self, f: usize) -> RefFacet {
        let v = self.vertices();
        let sub = |a: [f64; 3], b: [f64; 3]| [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        match self {
            CellShape::Interval => RefFacet {
                shape: None,
                origin: v[f],
                tangents: vec![],
                normal: if f == 0 { [-1.0, 0.0, 0.0] } else { [1.0, 0.0, 0.0] },
            },
            CellShape::Triangle | CellShape::Quad => {
                let [a, b] = self.edges()[f];
                let t = sub(v[a], v[b]);
                // Outward normal: rotate the tangent and fix the sign against the centroid.
                let mut n = [t[1], -t[0], 0.0];
                let c = centroid(&v);
                let mid = [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])];
                if n[0] * (mid[0] - c[0]) + n[1] * (mid[1] - c[1]) < 0.0 {
                    n = [-n[0], -n[1], 0.0];
                }
                RefFacet { shape: Some(CellShape::Interval), origin: v[a], tangents: vec![t], normal: n }
            }
            CellShape::Prism | CellShape::Hex => {
                let base = self.base().unwrap();
                let nb = base.num_facets();
                if f == 0 {
                    let bv = base.vertices();
                    RefFacet {
                        shape: Some(base),
                        origin: [0.0; 3],
                        tangents: vec![sub(bv[0], bv[1]), sub(bv[0], bv[2])],
                        normal: [0.0, 0.0, -1.0],
                    }
                } else if f == 1 {
                    let bv = base.vertices();
                    RefFacet {
                        shape: Some(base),
                        origin: [0.0, 0.0, 1.0],
                        tangents: vec![sub(bv[0], bv[1]), sub(bv[0], bv[2])],
                        normal: [0.0, 0.0, 1.0],
                    }
                } else {
                    let e = f - 2;
                    assert!(e < nb);
                    let bf = base.facet(e);
                    RefFacet {
                        shape: Some(CellShape::Quad),
                        origin: bf.origin,
                        tangents: vec![bf.tangents[0], [0.0, 0.0, 1.0]],
                        normal: bf.normal,
                    }
                }
            }
        }
    }
}

impl fmt::Display for CellShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CellShape::Interval => "interval",
            CellShape::Triangle => "triangle",
            CellShape::Quad => "quad",
            CellShape::Prism => "prism",
            CellShape::Hex => "hex",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct RefFacet {
    /// Parameter domain; `None` for the point facets of an interval.
    pub shape: Option<CellShape>,
    pub origin: [f64; 3],
    pub tangents: Vec<[f64; 3]>,
    pub normal: [f64; 3],
}

impl RefFacet {
    pub fn map(&self, s: &[f64]) -> [f64; 3] {
        let mut x = self.origin;
        for (k, t) in self.tangents.iter().enumerate() {
            for d in 0..3 {
                x[d] += s[k] * t[d];
            }
        }
        x
    }
}

pub fn centroid(v: &[[f64; 3]]) -> [f64; 3] {
    let n = v.len() as f64;
    let mut c = [0.0; 3];
    for p in v {
        for d in 0..3 {
            c[d] += p[d] / n;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_normals_are_outward() {
        let c = centroid(&CellShape::Triangle.vertices());
        for f in 0..3 {
            let rf = CellShape::Triangle.facet(f);
            let m = rf.map(&[0.5]);
            let d = (m[0] - c[0]) * rf.normal[0] + (m[1] - c[1]) * rf.normal[1];
            assert!(d > 0.0);
        }
    }

    #[test]
    fn prism_has_five_facets_with_unit_side_heights() {
        assert_eq!(CellShape::Prism.num_facets(), 5);
        let side = CellShape::Prism.facet(3);
        assert_eq!(side.tangents[1], [0.0, 0.0, 1.0]);
        assert_eq!(CellShape::Prism.vertices().len(), 6);
    }
}
