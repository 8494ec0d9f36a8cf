//! Transient simulation of large linear RCL circuits with Krylov-subspace
//! matrix-exponential integrators.
//!
//! The circuit `C x' = -G x + B u(t)` is assembled by modified nodal analysis
//! from a small SPICE-like netlist. Piecewise-linear inputs admit an exact
//! step formula built on `e^{hA} v`, which is approximated in a standard,
//! inverted, or shift-and-invert (rational) Krylov subspace. Bases are reused
//! across every sample point between input slope changes, and independent
//! groups of inputs are simulated in parallel and superposed.
//!
//! Fixed-step trapezoidal and backward-Euler integrators are included as
//! baselines and as accuracy references.

pub mod decomp;
pub mod krylov;
pub mod netlist;
pub mod numkit;
pub mod stepper;
