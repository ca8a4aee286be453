//! Mesh specifications: inline generators or a mesh file path.
//!
//! | spec | mesh |
//! |---|---|
//! | `torus:tri:N[:L]`, `torus:quad:N[:L]` | periodic N×N square of side L (default 1) |
//! | `rect:tri:N`, `rect:quad:N` | unit square |
//! | `icosahedral:R` | unit icosahedral sphere refined R times |
//! | `cubed:N` | unit cubed sphere with N×N cells per panel |
//! | `shell:L` | spherical shell level L (1 ≤ r ≤ 1.5) |
//! | `cube:N` | unit cube of N³ prism pairs |
//! | `column:N:H` | one quad column of N layers and height H |
//! | anything else | a mesh file |

use std::path::PathBuf;

use terra_core::converge::{cube_mesh, shell_level};
use terra_core::mesh::{build_cubed_sphere, build_icosahedral_sphere, build_periodic_rect, build_rect, extrude, read_mesh, MapClass, Mesh};
use terra_core::reference::CellShape;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Torus { shape: CellShape, n: usize, length: f64 },
    Rect { shape: CellShape, n: usize },
    Icosahedral { refinements: usize },
    Cubed { n: usize },
    Shell { level: usize },
    Cube { n: usize },
    Column { layers: usize, height: f64 },
    File(PathBuf),
}

fn shape(s: &str, spec: &str) -> Result<CellShape> {
    match s {
        "tri" | "triangle" => Ok(CellShape::Triangle),
        "quad" => Ok(CellShape::Quad),
        _ => Err(CliError::MeshSpec(spec.to_string())),
    }
}

impl MeshSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || CliError::MeshSpec(spec.to_string());
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let real = |s: &str| s.parse::<f64>().ok().filter(|v| *v > 0.0).ok_or_else(bad);
        let out = match parts.as_slice() {
            ["torus", s, n] => MeshSpec::Torus { shape: shape(s, spec)?, n: int(n)?, length: 1.0 },
            ["torus", s, n, l] => MeshSpec::Torus { shape: shape(s, spec)?, n: int(n)?, length: real(l)? },
            ["rect", s, n] => MeshSpec::Rect { shape: shape(s, spec)?, n: int(n)? },
            ["icosahedral", r] => MeshSpec::Icosahedral { refinements: int(r)? },
            ["cubed", n] => MeshSpec::Cubed { n: int(n)? },
            ["shell", l] => MeshSpec::Shell { level: int(l)? },
            ["cube", n] => MeshSpec::Cube { n: int(n)? },
            ["column", n, h] => MeshSpec::Column { layers: int(n)?, height: real(h)? },
            _ if parts.len() == 1 || std::path::Path::new(spec).exists() => MeshSpec::File(PathBuf::from(spec)),
            _ => return Err(bad()),
        };
        Ok(out)
    }

    /// The same generator at refinement parameter `n`; files have no levels.
    pub fn at_level(&self, n: usize) -> Result<Self> {
        let mut s = self.clone();
        match &mut s {
            MeshSpec::Torus { n: m, .. } | MeshSpec::Rect { n: m, .. } | MeshSpec::Cubed { n: m } | MeshSpec::Cube { n: m } => *m = n,
            MeshSpec::Icosahedral { refinements } => *refinements = n,
            MeshSpec::Shell { level } => *level = n,
            MeshSpec::Column { layers, .. } => *layers = n,
            MeshSpec::File(p) => {
                return Err(CliError::setting("levels", format!("mesh file {} has no refinement levels", p.display())));
            }
        }
        Ok(s)
    }

    /// Refinement parameter of a generated mesh.
    pub fn level(&self) -> Option<usize> {
        match self {
            MeshSpec::Torus { n, .. } | MeshSpec::Rect { n, .. } | MeshSpec::Cubed { n } | MeshSpec::Cube { n } => Some(*n),
            MeshSpec::Icosahedral { refinements } => Some(*refinements),
            MeshSpec::Shell { level } => Some(*level),
            MeshSpec::Column { layers, .. } => Some(*layers),
            MeshSpec::File(_) => None,
        }
    }

    /// Side length of a periodic square domain.
    pub fn torus_length(&self) -> Option<f64> {
        match self {
            MeshSpec::Torus { length, .. } => Some(*length),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<Mesh> {
        let m = match self {
            MeshSpec::Torus { shape, n, length } => build_periodic_rect(*n, *n, *length, *length, *shape)?,
            MeshSpec::Rect { shape, n } => build_rect(*n, *n, 1.0, 1.0, *shape)?,
            MeshSpec::Icosahedral { refinements } => build_icosahedral_sphere(*refinements, 1.0)?,
            MeshSpec::Cubed { n } => build_cubed_sphere(*n, 1.0)?,
            MeshSpec::Shell { level } => shell_level(*level)?,
            MeshSpec::Cube { n } => cube_mesh(*n, CellShape::Triangle, MapClass::Affine, 0)?,
            MeshSpec::Column { layers, height } => {
                let base = build_rect(1, 1, 1.0, 1.0, CellShape::Quad)?;
                extrude(&base, *layers, &vec![height / *layers as f64; *layers], None)?
            }
            MeshSpec::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))?;
                read_mesh(&text)?
            }
        };
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_generators() {
        assert_eq!(MeshSpec::parse("torus:tri:8").unwrap(), MeshSpec::Torus { shape: CellShape::Triangle, n: 8, length: 1.0 });
        assert_eq!(MeshSpec::parse("torus:quad:4:2.5").unwrap(), MeshSpec::Torus { shape: CellShape::Quad, n: 4, length: 2.5 });
        assert_eq!(MeshSpec::parse("column:10:1e4").unwrap(), MeshSpec::Column { layers: 10, height: 1e4 });
        assert_eq!(MeshSpec::parse("mesh.txt").unwrap(), MeshSpec::File(PathBuf::from("mesh.txt")));
        for bad in ["torus:hex:4", "torus:tri:x", "column:3:-1", "shell:1:2"] {
            assert!(MeshSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn levels_replace_the_refinement() {
        let s = MeshSpec::parse("torus:quad:3").unwrap().at_level(5).unwrap();
        assert_eq!(s.level(), Some(5));
        let m = s.build().unwrap();
        assert_eq!(m.num_cells(), 25);
        assert!(MeshSpec::parse("m.txt").unwrap().at_level(2).is_err());
    }

    #[test]
    fn column_has_requested_layers_and_height() {
        let m = MeshSpec::parse("column:4:2").unwrap().build().unwrap();
        assert_eq!(m.layers(), Some(4));
        assert!((m.total_volume() - 2.0).abs() < 1e-12);
    }
}
