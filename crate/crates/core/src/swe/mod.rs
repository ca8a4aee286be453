//! Rotating shallow water: linear and nonlinear compatible schemes,
//! transport operators and the semi-implicit Picard timestepper.

pub mod linear;
pub mod nonlinear;
pub mod semi_implicit;
pub mod transport;

use std::sync::Arc;

use crate::derham::Complex2D;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hybrid::coriolis_matrix;
use crate::linalg::SparseMatrix;
use crate::mesh::Mesh;

/// Coriolis parameter: constant or a function of position.
#[derive(Debug, Clone)]
pub enum Coriolis {
    Constant(f64),
    Expr(Expr),
}

impl Coriolis {
    pub fn at(&self, x: &[f64; 3]) -> f64 {
        match self {
            Coriolis::Constant(f) => *f,
            Coriolis::Expr(e) => e.eval(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coriolis::Constant(f) if *f == 0.0)
    }
}

/// Potential vorticity flux used in the nonlinear velocity equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PvFlux {
    #[default]
    Centred,
    /// Anticipated potential vorticity: q − τ F·∇q.
    Apvm,
    /// Streamline-upwind: q − τ ((qD)_t + ∇·(Fq)).
    Supg,
}

#[derive(Debug, Clone)]
pub struct SweParams {
    pub f: Coriolis,
    pub g: f64,
    pub h: f64,
    pub dt: f64,
    pub eta: f64,
    pub picard_iters: usize,
    pub apvm_enabled: bool,
}

impl Default for SweParams {
    fn default() -> Self {
        Self { f: Coriolis::Constant(1.0), g: 1.0, h: 1.0, dt: 0.01, eta: 0.5, picard_iters: 4, apvm_enabled: false }
    }
}

impl SweParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.h > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("g, H and dt must be positive (g={}, H={}, dt={})", self.g, self.h, self.dt)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidArgument(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.picard_iters == 0 {
            return Err(Error::InvalidArgument("picard_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pv_flux(&self) -> PvFlux {
        if self.apvm_enabled {
            PvFlux::Apvm
        } else {
            PvFlux::Centred
        }
    }
}

/// Prognostic state: velocity in V1, depth in V2.
#[derive(Debug, Clone, PartialEq)]
pub struct SweState {
    pub u: Vec<f64>,
    pub d: Vec<f64>,
}

/// Spaces, operators and parameters of a shallow-water discretisation.
pub struct SweModel {
    pub cx: Complex2D,
    pub params: SweParams,
    /// ∫ w · (f u⊥) dx.
    pub coriolis: SparseMatrix,
    pub qdeg: usize,
}

impl SweModel {
    pub fn new(mesh: Arc<Mesh>, velocity: &str, params: SweParams) -> Result<Self> {
        params.validate()?;
        let cx = Complex2D::new(mesh, velocity)?;
        let qdeg = 2 * cx.v0.element.degree.max(cx.v1.element.degree).max(cx.v2.element.degree) + 2;
        let f = params.f.clone();
        let coriolis = coriolis_matrix(&cx.v1, &move |x| f.at(x), qdeg)?;
        Ok(Self { cx, params, coriolis, qdeg })
    }

    pub fn rest_state(&self) -> SweState {
        SweState { u: vec![0.0; self.cx.v1.ndofs], d: self.cx.one2.iter().map(|v| v * self.params.h).collect() }
    }

    /// L2 projections of analytic velocity and depth.
    pub fn project_state(
        &self,
        u: &(dyn Fn(&[f64; 3]) -> [f64; 2] + Sync),
        d: &(dyn Fn(&[f64; 3]) -> f64 + Sync),
    ) -> Result<SweState> {
        Ok(SweState {
            u: crate::assembly::project(&self.cx.v1, &|x| u(x).to_vec(), None)?,
            d: crate::assembly::project(&self.cx.v2, &|x| vec![d(x)], None)?,
        })
    }
}
