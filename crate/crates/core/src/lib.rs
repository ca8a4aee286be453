//! Compatible finite element kernel: reference elements, meshes, assembly,
//! solvers and the geophysical test problems built on them.

pub mod assembly;
pub mod column;
pub mod converge;
pub mod derham;
pub mod element;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hybrid;
pub mod linalg;
pub mod mesh;
pub mod poly;
pub mod quadrature;
pub mod reference;
pub mod space;
pub mod swe;

pub use error::{Error, Result};
