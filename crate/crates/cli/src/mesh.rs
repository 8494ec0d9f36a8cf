//! Generated RC mesh benchmarks with a controlled stiffness.
//!
//! Every node of a `rows × cols` grid has a capacitor and a resistor to
//! ground (`c0`, `g0`) and a resistor to each grid neighbour (`g_m`).
//!
//! Mild targets keep the capacitances uniform and raise `g_m`: with
//! `C = c0·I` the eigenvalues of `−C⁻¹G` are `−(g0 + g_m·μ)/c0` for the grid
//! Laplacian eigenvalues `μ ∈ [0, μ_max]`, so the stiffness is exactly
//! `1 + g_m·μ_max/g0`. Beyond that, `g_m` stays at its ceiling and the node
//! capacitances are spread log-uniformly over `[c0/S, c0]`, which fills the
//! spectrum with modes at every scale, as on a real power grid.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ktran::netlist::CircuitSystem;

use crate::CliError;

/// Grounded conductance at every node (1 kΩ).
pub const MESH_G0: f64 = 1e-3;
/// Nominal node capacitance (1 pF), giving a 1 ns slowest time constant.
pub const MESH_C0: f64 = 1e-12;
/// Relative spread of the node capacitances.
pub const MESH_C_SPREAD: f64 = 0.04;
/// Largest size for which `genmesh` measures the stiffness itself.
pub const MEASURE_LIMIT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSpec {
    pub n: usize,
    pub stiffness: f64,
    pub seed: u64,
    /// Number of pulsed current sources.
    pub sources: usize,
    /// Simulated span written to `.tran`.
    pub span: f64,
}

impl MeshSpec {
    pub fn new(n: usize, stiffness: f64, seed: u64) -> Self {
        Self { n, stiffness, seed, sources: 3, span: 10e-9 }
    }
}

/// Grid shape holding `n` nodes row by row.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil() as usize;
    (n.div_ceil(cols), cols)
}

fn path_lambda_max(k: usize) -> f64 {
    if k < 2 {
        0.0
    } else {
        2.0 + 2.0 * (std::f64::consts::PI / k as f64).cos()
    }
}

/// Stiffness per unit of capacitance spread at the `g_m` ceiling, about
/// independent of the grid shape (calibrated against dense eigenvalues).
const SPREAD_GAIN: f64 = 1.35;

/// Mesh conductance and capacitance spread `S` realising `stiffness` on a
/// `rows × cols` grid.
pub fn mesh_parameters(stiffness: f64, rows: usize, cols: usize) -> Result<(f64, f64), CliError> {
    if !(stiffness.is_finite() && stiffness >= 1.0) {
        return Err(CliError::Invalid(format!("stiffness target must be a finite number >= 1, got {stiffness}")));
    }
    let mu = path_lambda_max(rows) + path_lambda_max(cols);
    if stiffness > 1.0 && mu == 0.0 {
        return Err(CliError::Invalid("a single node cannot realise a stiffness above 1".into()));
    }
    if stiffness <= 1.0 + mu {
        return Ok((MESH_G0 * (stiffness - 1.0) / mu, 1.0));
    }
    let spread = (stiffness / SPREAD_GAIN).max(1.0);
    if spread > 1e12 {
        return Err(CliError::Invalid(format!("stiffness target {stiffness:e} is beyond the representable range")));
    }
    Ok((MESH_G0, spread))
}

/// Deterministic netlist text for `spec`.
pub fn generate_mesh(spec: &MeshSpec) -> Result<String, CliError> {
    if spec.n < 2 {
        return Err(CliError::Invalid("mesh needs at least 2 nodes".into()));
    }
    let (rows, cols) = grid_shape(spec.n);
    let (gm, spread) = mesh_parameters(spec.stiffness, rows, cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let node = |i: usize| format!("n{}", i + 1);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "* RC mesh: {} nodes on a {rows}x{cols} grid, target stiffness {:e}, seed {}",
        spec.n, spec.stiffness, spec.seed
    );
    // Ranks spread the capacitances evenly in log scale, extremes included.
    let mut rank: Vec<usize> = (0..spec.n).collect();
    rank.shuffle(&mut rng);
    for i in 0..spec.n {
        let level = spread.powf(-(rank[i] as f64) / (spec.n - 1) as f64);
        let c = MESH_C0 * level * (1.0 + MESH_C_SPREAD * rng.gen_range(-1.0..1.0));
        let _ = writeln!(out, "C{} {} 0 {:e}", i + 1, node(i), c);
        let _ = writeln!(out, "RG{} {} 0 {:e}", i + 1, node(i), 1.0 / MESH_G0);
    }
    if gm > 0.0 {
        let rm = 1.0 / gm;
        let mut k = 0;
        for i in 0..spec.n {
            let (r, c) = (i / cols, i % cols);
            if c + 1 < cols && i + 1 < spec.n {
                k += 1;
                let _ = writeln!(out, "RM{k} {} {} {:e}", node(i), node(i + 1), rm);
            }
            if i + cols < spec.n && r + 1 < rows {
                k += 1;
                let _ = writeln!(out, "RM{k} {} {} {:e}", node(i), node(i + cols), rm);
            }
        }
    }
    // Pulsed loads with distinct timing, spread over the first half of the span.
    for s in 0..spec.sources.min(spec.n) {
        let at = rng.gen_range(0..spec.n);
        let amp = 1e-3 * rng.gen_range(0.5..1.5);
        let delay = spec.span * (0.05 + 0.1 * s as f64);
        let edge = spec.span * 0.01;
        let width = spec.span * 0.2;
        let _ = writeln!(
            out,
            "I{} 0 {} PULSE(0 {:e} {:e} {:e} {:e} {:e} {:e})",
            s + 1,
            node(at),
            amp,
            delay,
            edge,
            edge,
            width,
            spec.span * 0.5
        );
    }
    let _ = writeln!(out, ".tran 0 {:e}", spec.span);
    let _ = writeln!(out, ".end");
    Ok(out)
}

/// `max |Re λ| / min |Re λ|` over the eigenvalues of `−C⁻¹G` (dense).
pub fn measure_stiffness(sys: &CircuitSystem) -> Result<f64, CliError> {
    let n = sys.dim();
    let c = sys.c.to_dense();
    let g = sys.g.to_dense();
    let diagonal_c = (0..n).all(|i| (0..n).all(|j| i == j || c[i][j] == 0.0));
    let re: Vec<f64> = if diagonal_c && sys.g.is_symmetric(1e-12) {
        // C^{-1/2} G C^{-1/2} is symmetric and similar to C⁻¹G.
        if c.iter().enumerate().any(|(i, r)| r[i] <= 0.0) {
            return Err(CliError::Invalid("stiffness needs a positive capacitance at every unknown".into()));
        }
        let s: Vec<f64> = (0..n).map(|i| 1.0 / c[i][i].sqrt()).collect();
        let m = DMatrix::from_fn(n, n, |i, j| s[i] * g[i][j] * s[j]);
        m.symmetric_eigen().eigenvalues.iter().copied().collect()
    } else {
        let cm = DMatrix::from_fn(n, n, |i, j| c[i][j]);
        let gm = DMatrix::from_fn(n, n, |i, j| g[i][j]);
        let cinv = cm
            .try_inverse()
            .ok_or_else(|| CliError::Invalid("stiffness needs a nonsingular capacitance matrix".into()))?;
        (cinv * gm).complex_eigenvalues().iter().map(|z| z.re).collect()
    };
    let abs: Vec<f64> = re.iter().map(|v| v.abs()).collect();
    let hi = abs.iter().copied().fold(0.0, f64::max);
    let lo = abs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lo > 0.0) {
        return Err(CliError::Invalid("system has a zero eigenvalue; stiffness is unbounded".into()));
    }
    Ok(hi / lo)
}
