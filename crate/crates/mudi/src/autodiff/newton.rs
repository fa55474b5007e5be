//! Differentiable Newton-Raphson solves on a tape.
//!
//! Two differentiation modes are available. `Unroll` records every iteration;
//! near convergence the Jacobian-dependent terms are multiplied by residuals of
//! order `tol`, so the unrolled gradient matches the implicit one to O(tol).
//! `Implicit` discards the iterations and rebuilds the solution as
//! `α* − J⁻¹ R(α*, θ)` with the converged Jacobian held constant — exactly the
//! implicit-function-theorem sensitivity, at the cost of one extra residual
//! recording.

pub use super::kernel::{DiffMode, NewtonCfg, NewtonOutcome};
use super::kernel::{Kernel, TapeKernel};
use super::{Tape, Var};
use crate::error::Result;

/// Solves `R(α, θ) = 0` for tape variables α with gradients w.r.t. any upstream
/// leaves (θ) that the residual closure captures.
///
/// The closure returns `(R, J)` with `J` the row-major n×n Jacobian ∂R/∂α.
/// All α entries are `(B, 1)` (or scalar) Vars; convergence is tested per lane
/// with `‖R‖∞ ≤ tol_abs + tol_rel·‖R₀‖∞`, freezing converged lanes.
pub fn newton_solve_differentiable<F>(
    tape: &mut Tape,
    alpha0: &[Var],
    cfg: &NewtonCfg,
    mode: DiffMode,
    mut f: F,
) -> Result<NewtonOutcome<Var>>
where
    F: FnMut(&mut Tape, &[Var]) -> (Vec<Var>, Vec<Var>),
{
    let mut k = TapeKernel::with_mode(tape, mode);
    k.newton(alpha0, None, cfg, |kk, alpha| f(kk.tape, alpha))
}
