//! Linear rotating shallow water on compatible spaces.

use nalgebra::DMatrix;

use super::{SweModel, SweState};
use crate::derham::{constant_deviation, harmonic_basis};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, dot, symmetric_eigs_dense, SolverConfig, DENSE_EIG_CAP};

/// (u_t, h_t) of ∫w·u_t = −∫w·f u⊥ + g∫∇·w h, h_t = −H ∇·u.
pub fn linear_swe_tendency(model: &SweModel, state: &SweState, cfg: &SolverConfig) -> Result<SweState> {
    let cx = &model.cx;
    let p = &model.params;
    let mut rhs: Vec<f64> = model.coriolis.matvec(&state.u).iter().map(|v| -v).collect();
    for (r, b) in rhs.iter_mut().zip(cx.b.matvec_t(&state.d)) {
        *r += p.g * b;
    }
    let u_t = cg_solve(&cx.m1, &rhs, cfg, None)?.0;
    let h_t = cx.div.matvec(&state.u).iter().map(|v| -p.h * v).collect();
    Ok(SweState { u: u_t, d: h_t })
}

/// Linear energy ½∫H|u|² + g h².
pub fn linear_energy(model: &SweModel, s: &SweState) -> f64 {
    let p = &model.params;
    0.5 * (p.h * dot(&s.u, &model.cx.m1.matvec(&s.u)) + p.g * dot(&s.d, &model.cx.m2.matvec(&s.d)))
}

/// dE/dt = H⟨u, u_t⟩ + g⟨h, h_t⟩.
pub fn linear_energy_rate(model: &SweModel, s: &SweState, t: &SweState) -> f64 {
    let p = &model.params;
    p.h * dot(&s.u, &model.cx.m1.matvec(&t.u)) + p.g * dot(&s.d, &model.cx.m2.matvec(&t.d))
}

/// Geostrophically balanced state u = ∇⊥ψ, h = Π₂(fψ/g) for constant f.
pub fn geostrophic_state(model: &SweModel, psi: &[f64]) -> Result<SweState> {
    let f = match model.params.f {
        super::Coriolis::Constant(f) => f,
        _ => return Err(Error::InvalidArgument("geostrophic balance needs constant f".into())),
    };
    let cx = &model.cx;
    let u = cx.perp_grad.matvec(psi);
    // Π₂ψ: M2 h = ∫φ ψ
    let rhs = crate::assembly::assemble_cells(&cx.v2, &cx.v0, model.qdeg, crate::assembly::TabOpts::VALUES, crate::assembly::TabOpts::VALUES, |_, a, b, m| {
        for q in 0..a.nq {
            for i in 0..a.n {
                for j in 0..b.n {
                    m[(i, j)] += a.w[q] * a.v(q, i)[0] * b.v(q, j)[0];
                }
            }
        }
        Ok(())
    })?
    .matvec(psi);
    let pi2 = cg_solve(&cx.m2, &rhs, &SolverConfig::tight(), None)?.0;
    let d = pi2.iter().map(|v| f * v / model.params.g).collect();
    Ok(SweState { u, d })
}

/// Outcome of the inertial-mode audit.
#[derive(Debug, Clone)]
pub struct InertialReport {
    pub harmonic_dim: usize,
    /// Largest L2 deviation of a harmonic basis field from a constant.
    pub harmonic_deviation: f64,
    /// Dimension of the divergence-free subspace.
    pub divergence_free_dim: usize,
    /// Kernel dimension of the projected Coriolis generator on it.
    pub coriolis_kernel_dim: usize,
    /// Norm of the generator on the complement of the harmonic fields.
    pub generator_norm_on_complement: f64,
    /// True if a non-constant field oscillates.
    pub nonconstant_oscillation: bool,
    pub dim_v0: usize,
    pub dim_v2: usize,
    pub verdict: String,
}

/// Mode-count verdict for the necessary condition dim V2 = dim V0.
pub fn mode_count_verdict(dim_v0: usize, dim_v2: usize) -> String {
    if dim_v0 == dim_v2 {
        "balanced".to_string()
    } else if dim_v2 % dim_v0 == 0 {
        format!("unbalanced (dim V2 = {} dim V0)", dim_v2 / dim_v0)
    } else {
        format!("unbalanced (dim V2 / dim V0 = {:.3})", dim_v2 as f64 / dim_v0 as f64)
    }
}

/// Divergence-free, h = 0 dynamics: u_t = −P_Z M1⁻¹ C u on
/// Z = range(∇⊥) ⊕ harmonic fields.
pub fn inertial_mode_check(model: &SweModel) -> Result<InertialReport> {
    let cx = &model.cx;
    let n1 = cx.v1.ndofs;
    if n1 > DENSE_EIG_CAP {
        return Err(Error::SizeCap { size: n1, cap: DENSE_EIG_CAP });
    }
    let harm = harmonic_basis(cx)?;
    let mut harmonic_deviation: f64 = 0.0;
    for k in &harm {
        harmonic_deviation = harmonic_deviation.max(constant_deviation(&cx.v1, k)?);
    }
    // M1-orthonormal basis of range(∇⊥) from the stiffness eigenvectors.
    let g = cx.perp_grad.to_dense();
    let m1 = cx.m1.to_dense();
    let s = g.transpose() * &m1 * &g;
    let s = (&s + s.transpose()) * 0.5;
    let n0 = cx.v0.ndofs;
    let pairs = symmetric_eigs_dense(&s, &cx.m0.to_dense(), n0)?;
    let smax = pairs.values.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    for (j, lam) in pairs.values.iter().enumerate() {
        if *lam > 1e-10 * smax {
            cols.push(&g * pairs.vectors.column(j) / lam.sqrt());
        }
    }
    let nrot = cols.len();
    for k in &harm {
        cols.push(nalgebra::DVector::from_column_slice(k));
    }
    let q = DMatrix::from_columns(&cols);
    let c = model.coriolis.to_dense();
    let t = q.transpose() * &c * &q;
    let tnorm = t.norm().max(1e-300);
    let sv = t.clone().svd(false, false).singular_values;
    let kernel = sv.iter().filter(|s| **s <= 1e-10 * tnorm).count();
    let generator_norm_on_complement = t.columns(0, nrot).norm();
    // oscillating subspace: the harmonic block; anything else is a spurious mode
    let nonconstant_oscillation = harmonic_deviation > 1e-9 || generator_norm_on_complement > 1e-10 * tnorm;
    let dim_v0 = cx.v0.ndofs;
    let dim_v2 = cx.v2.ndofs;
    Ok(InertialReport {
        harmonic_dim: harm.len(),
        harmonic_deviation,
        divergence_free_dim: q.ncols(),
        coriolis_kernel_dim: kernel,
        generator_norm_on_complement,
        nonconstant_oscillation,
        dim_v0,
        dim_v2,
        verdict: mode_count_verdict(dim_v0, dim_v2),
    })
}
