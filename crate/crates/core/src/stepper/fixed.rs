//! Fixed-step trapezoidal and backward-Euler baselines, and a fine-step
//! backward-Euler reference aligned to arbitrary sample times.

use std::collections::HashMap;
use std::time::Instant;

use crate::netlist::{dc_solve, CircuitSystem};
use crate::numkit::{lu_factorize, vecops, LuFactors, SparseMatrix};

use super::{Method, SolverConfig, StepperError, WaveformResult};

/// The two one-step schemes, written multiplied through by `h` so that a
/// singular `C` stays well conditioned:
///
/// * TR: `(C + hG/2) x₁ = (C − hG/2) x₀ + h B (u₀ + u₁)/2`
/// * BE: `(C + hG) x₁ = C x₀ + h B u₁`
#[derive(Clone, Copy, PartialEq, Eq)]
enum Scheme {
    Trapezoidal,
    BackwardEuler,
}

struct StepMatrix {
    h: f64,
    lhs: LuFactors,
    /// `C − hG/2` for TR; unused for BE.
    rhs: Option<SparseMatrix>,
}

impl StepMatrix {
    fn new(sys: &CircuitSystem, scheme: Scheme, h: f64) -> Result<Self, StepperError> {
        let (lhs, rhs) = match scheme {
            Scheme::Trapezoidal => (
                sys.c.linear_combination(1.0, &sys.g, 0.5 * h)?,
                Some(sys.c.linear_combination(1.0, &sys.g, -0.5 * h)?),
            ),
            Scheme::BackwardEuler => (sys.c.linear_combination(1.0, &sys.g, h)?, None),
        };
        let lhs = lu_factorize(&lhs).map_err(|source| StepperError::Factorization { matrix: "step matrix", source })?;
        Ok(Self { h, lhs, rhs })
    }

    fn step(&self, sys: &CircuitSystem, x0: &[f64], t0: f64) -> Result<Vec<f64>, StepperError> {
        let h = self.h;
        let (bu1, _) = sys.excitation(t0 + h);
        let mut r = match &self.rhs {
            Some(rhs) => {
                let (bu0, _) = sys.excitation(t0);
                let mut r = rhs.mul_vec(x0);
                for i in 0..r.len() {
                    r[i] += 0.5 * h * (bu0[i] + bu1[i]);
                }
                r
            }
            None => {
                let mut r = sys.c.mul_vec(x0);
                vecops::axpy(h, &bu1, &mut r);
                r
            }
        };
        r = self.lhs.solve(&r)?;
        Ok(r)
    }
}

fn factor_g(sys: &CircuitSystem) -> Result<LuFactors, StepperError> {
    lu_factorize(&sys.g).map_err(|source| StepperError::Factorization { matrix: "G", source })
}

fn solve_fixed(sys: &CircuitSystem, config: &SolverConfig, scheme: Scheme) -> Result<WaveformResult, StepperError> {
    config.validate()?;
    let clock = Instant::now();
    let h = config.h.expect("validated");
    let (t0, t1) = (config.t_start, config.t_stop);
    let span = t1 - t0;
    // Grid t₀ + k h; the last point is t_stop exactly, reached by a shorter
    // step when the span is not a multiple of h.
    let mut steps = (span / h).ceil() as usize;
    if steps > 1 && span - (steps - 1) as f64 * h <= 1e-9 * h {
        steps -= 1;
    }
    let steps = steps.max(1);
    let mut times: Vec<f64> = (0..steps).map(|k| t0 + k as f64 * h).collect();
    times.push(t1);

    let g_lu = factor_g(sys)?;
    let x0 = dc_solve(sys, &g_lu, t0)?;
    let mut mats: Vec<StepMatrix> = Vec::new();
    let mut states = Vec::with_capacity(times.len());
    states.push(x0);
    for k in 0..steps {
        let hk = times[k + 1] - times[k];
        let idx = match mats.iter().position(|m| (m.h - hk).abs() <= 1e-9 * h) {
            Some(i) => i,
            None => {
                mats.push(StepMatrix::new(sys, scheme, hk)?);
                mats.len() - 1
            }
        };
        let x = mats[idx].step(sys, &states[k], times[k])?;
        states.push(x);
    }
    let pairs = g_lu.solve_count() + mats.iter().map(|m| m.lhs.solve_count()).sum::<u64>();
    Ok(WaveformResult {
        method: if scheme == Scheme::Trapezoidal { Method::Tr } else { Method::Be },
        times,
        states,
        samples: Vec::new(),
        bases: Vec::new(),
        substitution_pairs: pairs,
        factorizations: 1 + mats.len() as u64,
        wall_time: clock.elapsed().as_secs_f64(),
        gamma: None,
    })
}

/// Trapezoidal rule with fixed step `config.h`.
pub fn solve_transient_tr(sys: &CircuitSystem, config: &SolverConfig) -> Result<WaveformResult, StepperError> {
    solve_fixed(sys, config, Scheme::Trapezoidal)
}

/// Backward Euler with fixed step `config.h`.
pub fn solve_transient_be(sys: &CircuitSystem, config: &SolverConfig) -> Result<WaveformResult, StepperError> {
    solve_fixed(sys, config, Scheme::BackwardEuler)
}

/// Backward Euler at the sorted `samples` (the first being the start time),
/// stepping each gap in `ceil(gap / h_fine)` equal substeps.
fn be_on_samples(sys: &CircuitSystem, samples: &[f64], h_fine: f64) -> Result<(Vec<Vec<f64>>, u64, u64), StepperError> {
    let g_lu = factor_g(sys)?;
    let mut x = dc_solve(sys, &g_lu, samples[0])?;
    let mut cache: HashMap<String, StepMatrix> = HashMap::new();
    let mut states = vec![x.clone()];
    for w in samples.windows(2) {
        let gap = w[1] - w[0];
        let k = (gap / h_fine).ceil().max(1.0) as usize;
        let sub = gap / k as f64;
        // Substeps equal to ~12 significant digits share one factorization.
        let key = format!("{sub:.11e}");
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), StepMatrix::new(sys, Scheme::BackwardEuler, sub)?);
        }
        let m = &cache[&key];
        for j in 0..k {
            x = m.step(sys, &x, w[0] + j as f64 * sub)?;
        }
        states.push(x.clone());
    }
    let pairs = g_lu.solve_count() + cache.values().map(|m| m.lhs.solve_count()).sum::<u64>();
    Ok((states, pairs, 1 + cache.len() as u64))
}

/// Fine-step backward-Euler reference at exactly the given sample times.
/// With `richardson`, a second run at half the step is combined as
/// `2 x_{h/2} − x_h`, cancelling the leading first-order error term.
pub fn be_reference(
    sys: &CircuitSystem,
    samples: &[f64],
    h_fine: f64,
    richardson: bool,
) -> Result<WaveformResult, StepperError> {
    if samples.is_empty() || !(h_fine > 0.0) {
        return Err(StepperError::InvalidConfig("reference needs samples and a positive step".into()));
    }
    let clock = Instant::now();
    let (mut states, mut pairs, mut facts) = be_on_samples(sys, samples, h_fine)?;
    if richardson {
        let (half, p2, f2) = be_on_samples(sys, samples, h_fine / 2.0)?;
        for (x, y) in states.iter_mut().zip(&half) {
            for (a, b) in x.iter_mut().zip(y) {
                *a = 2.0 * b - *a;
            }
        }
        pairs += p2;
        facts += f2;
    }
    Ok(WaveformResult {
        method: Method::Be,
        times: samples.to_vec(),
        states,
        samples: Vec::new(),
        bases: Vec::new(),
        substitution_pairs: pairs,
        factorizations: facts,
        wall_time: clock.elapsed().as_secs_f64(),
        gamma: None,
    })
}
