//! Subcommand implementations.

pub mod complex;
pub mod hydrostatic;
pub mod mesh_info;
pub mod rates;
pub mod swe;

use terra_core::expr::Expr;
use terra_core::linalg::{Preconditioner, SolverConfig};
use terra_core::swe::Coriolis;

use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::meshspec::MeshSpec;
use crate::output::{Output, Report};

/// Everything a subcommand needs.
pub struct Ctx {
    pub s: Settings,
    pub out: Output,
    pub spec: MeshSpec,
}

impl Ctx {
    pub fn new(s: Settings) -> Result<Self> {
        let spec = MeshSpec::parse(&s.mesh)?;
        let out = Output::new(&s.out, s.hash());
        Ok(Self { s, out, spec })
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { rtol: self.s.rtol, atol: 1e-14, max_iter: self.s.maxit, precond: Preconditioner::GaussSeidel }
    }

    /// Refinement levels, or the single mesh of a file spec.
    pub fn level_specs(&self) -> Result<Vec<MeshSpec>> {
        match self.spec {
            MeshSpec::File(_) => Ok(vec![self.spec.clone()]),
            _ => self.s.levels.iter().map(|n| self.spec.at_level(*n)).collect(),
        }
    }
}

pub fn expr(key: &str, src: &str) -> Result<Expr> {
    Expr::parse(src).map_err(|e| CliError::setting(key, e.to_string()))
}

pub fn coriolis(src: &str) -> Result<Coriolis> {
    match src.trim().parse::<f64>() {
        Ok(f) => Ok(Coriolis::Constant(f)),
        Err(_) => Ok(Coriolis::Expr(expr("coriolis", src)?)),
    }
}

pub fn dispatch(ctx: &Ctx) -> Result<Report> {
    match ctx.s.subcommand.as_str() {
        "poisson" => complex::poisson(ctx),
        "helmholtz-decomp" => complex::helmholtz(ctx),
        "eigs" => complex::eigs(ctx),
        "swe" => swe::nonlinear(ctx),
        "swe-linear" => swe::linear(ctx),
        "inertial-check" => swe::inertial(ctx),
        "rates" => rates::rates(ctx),
        "shell" => rates::shell(ctx),
        "hydrostatic" => hydrostatic::hydrostatic(ctx),
        "mesh-info" => mesh_info::mesh_info(ctx),
        other => Err(CliError::setting("subcommand", format!("unknown subcommand `{other}`"))),
    }
}
