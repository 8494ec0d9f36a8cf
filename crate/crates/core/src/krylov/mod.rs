//! Krylov-subspace approximation of `e^{hA}v` for `A = −C⁻¹G`.
//!
//! Three subspaces are supported:
//!
//! * **standard** — spanned by powers of `A`; needs `C` nonsingular and
//!   converges slowly on stiff systems;
//! * **inverted** — powers of `A⁻¹ = −G⁻¹C`; favours the slow modes that
//!   dominate the response and tolerates singular `C`;
//! * **rational** — powers of `(I − γA)⁻¹ = (C + γG)⁻¹C`, shift-and-invert.
//!
//! A basis is built once per anchor and reused for every step length up to
//! the next input slope change: only the small exponential `e^{hH}` changes.

mod arnoldi;
mod operator;

pub use arnoldi::{
    arnoldi, arnoldi_with, build_basis, effective_generator, effective_generator_of, expm_action,
    posterior_error, verify_basis, ArnoldiOptions, BasisCheck, BasisOutcome, KrylovBasis,
    Tolerance,
};
pub use operator::{AugmentedOperator, KrylovOperator, SystemOperator};

use serde::{Deserialize, Serialize};

use crate::numkit::NumError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KrylovVariant {
    Standard,
    Inverted,
    /// Shift-and-invert with shift `γ` (seconds).
    Rational {
        gamma: f64,
    },
}

impl KrylovVariant {
    pub fn validate(&self) -> Result<(), KrylovError> {
        match *self {
            KrylovVariant::Rational { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(KrylovError::InvalidShift(gamma))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KrylovVariant::Standard => "standard",
            KrylovVariant::Inverted => "inverted",
            KrylovVariant::Rational { .. } => "rational",
        }
    }
}

/// How the a-posteriori error of a basis is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ErrorEstimator {
    /// Computable from the small Hessenberg problem alone; works for
    /// singular `C`. The standard variant always uses its time-integrated
    /// residual, which is exact to compute and needs no extra solves.
    #[default]
    Empirical,
    /// Residual of the approximate ODE solution, which needs `A·v_{m+1}` and
    /// therefore factors of `C`. Conservative on stiff systems.
    Residual,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KrylovError {
    #[error("Krylov basis did not converge within {m_max} vectors (last estimate {estimate:e})")]
    NoConvergence { m_max: usize, estimate: f64 },
    #[error("degenerate Krylov basis: {0}")]
    BasisDegenerate(String),
    #[error("shift must be positive and finite, got {0}")]
    InvalidShift(f64),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
}
