//! Independent-source waveforms: DC, periodic trapezoidal pulses, and
//! piecewise-linear point lists. All are continuous and piecewise linear.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Waveform {
    Dc(f64),
    Pulse(Pulse),
    /// `(time, level)` points with strictly increasing times; the first level
    /// holds before the first point and the last level after the last one.
    Pwl(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub v1: f64,
    pub v2: f64,
    pub delay: f64,
    pub rise: f64,
    pub fall: f64,
    pub width: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WaveformError {
    #[error("pulse timing invalid: {0}")]
    Pulse(&'static str),
    #[error("PWL time points must be strictly increasing")]
    PwlOrder,
    #[error("PWL needs at least one point")]
    PwlEmpty,
    #[error("non-finite waveform parameter")]
    NonFinite,
}

impl Pulse {
    /// Corner offsets within one period: rise start, rise end, fall start, fall end.
    pub fn corners(&self) -> [f64; 4] {
        [
            0.0,
            self.rise,
            self.rise + self.width,
            self.rise + self.width + self.fall,
        ]
    }

    /// Position within the current period, snapped so that a time equal to a
    /// corner (up to rounding) is reported as that corner.
    fn phase(&self, t: f64) -> Option<f64> {
        if t < self.delay - snap(self.period) {
            return None;
        }
        let rel = t - self.delay;
        let tol = snap(self.period);
        let mut k = (rel / self.period).floor();
        let mut tau = rel - k * self.period;
        if self.period - tau <= tol {
            k += 1.0;
            tau = rel - k * self.period;
        }
        if tau < 0.0 && tau >= -tol {
            tau = 0.0;
        }
        if tau < 0.0 {
            return None;
        }
        for c in self.corners() {
            if (tau - c).abs() <= tol {
                tau = c;
            }
        }
        Some(tau)
    }
}

fn snap(scale: f64) -> f64 {
    1e-12 * scale.abs()
}

impl Waveform {
    pub fn validate(&self) -> Result<(), WaveformError> {
        match self {
            Waveform::Dc(v) => {
                if !v.is_finite() {
                    return Err(WaveformError::NonFinite);
                }
            }
            Waveform::Pulse(p) => {
                let all = [p.v1, p.v2, p.delay, p.rise, p.fall, p.width, p.period];
                if all.iter().any(|v| !v.is_finite()) {
                    return Err(WaveformError::NonFinite);
                }
                if p.rise <= 0.0 {
                    return Err(WaveformError::Pulse("rise time must be positive"));
                }
                if p.fall <= 0.0 {
                    return Err(WaveformError::Pulse("fall time must be positive"));
                }
                if p.width < 0.0 {
                    return Err(WaveformError::Pulse("width must be non-negative"));
                }
                if p.delay < 0.0 {
                    return Err(WaveformError::Pulse("delay must be non-negative"));
                }
                if p.period <= p.rise + p.width + p.fall {
                    return Err(WaveformError::Pulse(
                        "period must exceed rise + width + fall",
                    ));
                }
            }
            Waveform::Pwl(pts) => {
                if pts.is_empty() {
                    return Err(WaveformError::PwlEmpty);
                }
                if pts.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    return Err(WaveformError::NonFinite);
                }
                if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(WaveformError::PwlOrder);
                }
            }
        }
        Ok(())
    }

    /// Level at `t`.
    pub fn value(&self, t: f64) -> f64 {
        self.value_and_slope(t).0
    }

    /// Level at `t` and the right-hand slope (per second).
    pub fn value_and_slope(&self, t: f64) -> (f64, f64) {
        match self {
            Waveform::Dc(v) => (*v, 0.0),
            Waveform::Pulse(p) => {
                let Some(tau) = p.phase(t) else {
                    return (p.v1, 0.0);
                };
                let [_, r_end, f_start, f_end] = p.corners();
                if tau < r_end {
                    let s = (p.v2 - p.v1) / p.rise;
                    (p.v1 + s * tau, s)
                } else if tau < f_start {
                    (p.v2, 0.0)
                } else if tau < f_end {
                    let s = (p.v1 - p.v2) / p.fall;
                    (p.v2 + s * (tau - f_start), s)
                } else {
                    (p.v1, 0.0)
                }
            }
            Waveform::Pwl(pts) => {
                let first = pts[0];
                let last = pts[pts.len() - 1];
                if t < first.0 {
                    return (first.1, 0.0);
                }
                if t >= last.0 {
                    return (last.1, 0.0);
                }
                let seg = pts.partition_point(|&(ti, _)| ti <= t) - 1;
                let (t0, v0) = pts[seg];
                let (t1, v1) = pts[seg + 1];
                let s = (v1 - v0) / (t1 - t0);
                (v0 + s * (t - t0), s)
            }
        }
    }

    /// Times inside `[t_start, t_stop]` where the slope changes.
    pub fn transition_spots(&self, t_start: f64, t_stop: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self {
            Waveform::Dc(_) => {}
            Waveform::Pulse(p) => {
                let first_k = if t_start > p.delay {
                    ((t_start - p.delay) / p.period).floor() - 1.0
                } else {
                    0.0
                };
                let mut k = first_k.max(0.0);
                loop {
                    let base = p.delay + k * p.period;
                    if base > t_stop {
                        break;
                    }
                    for c in p.corners() {
                        let t = base + c;
                        if t >= t_start && t <= t_stop {
                            out.push(t);
                        }
                    }
                    // Unvalidated pulses without a usable period fire once.
                    if !(p.period > 0.0) {
                        break;
                    }
                    k += 1.0;
                }
            }
            Waveform::Pwl(pts) => {
                out.extend(
                    pts.iter()
                        .map(|&(t, _)| t)
                        .filter(|&t| t >= t_start && t <= t_stop),
                );
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }
}

/// Evaluate all sources at `t`: levels `u(t)` and right-hand slopes.
pub fn eval_sources(sources: &[Waveform], t: f64) -> (Vec<f64>, Vec<f64>) {
    sources.iter().map(|w| w.value_and_slope(t)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse() -> Waveform {
        Waveform::Pulse(Pulse {
            v1: 0.0,
            v2: 1.0,
            delay: 1e-9,
            rise: 1e-9,
            fall: 1e-9,
            width: 5e-9,
            period: 10e-9,
        })
    }

    #[test]
    fn dc_is_flat() {
        assert_eq!(
            eval_sources(&[Waveform::Dc(1.0)], 3.7),
            (vec![1.0], vec![0.0])
        );
    }

    #[test]
    fn pulse_mid_rise() {
        let (v, s) = pulse().value_and_slope(1.5e-9);
        assert!((v - 0.5).abs() < 1e-12);
        assert!((s - 1e9).abs() < 1e-3);
    }

    #[test]
    fn pulse_phases_and_periodicity() {
        let p = pulse();
        assert_eq!(p.value(0.5e-9), 0.0);
        assert_eq!(p.value(4e-9), 1.0);
        assert!((p.value(7.5e-9) - 0.5).abs() < 1e-12);
        assert_eq!(p.value(9e-9), 0.0);
        assert!((p.value(11.5e-9) - 0.5).abs() < 1e-9);
        // right-hand slope at corners
        assert_eq!(p.value_and_slope(2e-9).1, 0.0);
        assert!(p.value_and_slope(7e-9).1 < 0.0);
        assert!(p.value_and_slope(1e-9).1 > 0.0);
    }

    #[test]
    fn pwl_interpolates() {
        let w = Waveform::Pwl(vec![(0.0, 0.0), (2e-9, 3.0)]);
        let (v, s) = w.value_and_slope(1e-9);
        assert!((v - 1.5).abs() < 1e-12);
        assert!((s - 1.5e9).abs() < 1e-3);
        assert_eq!(w.value_and_slope(5e-9), (3.0, 0.0));
    }

    #[test]
    fn pulse_spots() {
        let spots = pulse().transition_spots(0.0, 10e-9);
        let want = [1e-9, 2e-9, 7e-9, 8e-9];
        assert_eq!(spots.len(), 4);
        for (a, b) in spots.iter().zip(want) {
            assert!((a - b).abs() < 1e-21);
        }
        assert_eq!(pulse().transition_spots(0.0, 30e-9).len(), 12);
    }

    #[test]
    fn validation() {
        let bad = Waveform::Pulse(Pulse {
            v1: 0.0,
            v2: 1.0,
            delay: 0.0,
            rise: 0.0,
            fall: 1.0,
            width: 1.0,
            period: 5.0,
        });
        assert!(bad.validate().is_err());
        let short = Waveform::Pulse(Pulse {
            v1: 0.0,
            v2: 1.0,
            delay: 0.0,
            rise: 1.0,
            fall: 1.0,
            width: 1.0,
            period: 3.0,
        });
        assert!(short.validate().is_err());
        assert_eq!(
            Waveform::Pwl(vec![(1.0, 0.0), (1.0, 1.0)]).validate(),
            Err(WaveformError::PwlOrder)
        );
        assert!(pulse().validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Left and right limits agree at every transition spot.
            #[test]
            fn continuous_at_spots(
                v1 in -2.0f64..2.0, v2 in -2.0f64..2.0,
                delay in 0.0f64..5.0, rise in 0.1f64..2.0, fall in 0.1f64..2.0, width in 0.0f64..3.0,
                slack in 0.1f64..3.0,
            ) {
                let w = Waveform::Pulse(Pulse { v1, v2, delay, rise, fall, width, period: rise + fall + width + slack });
                for t in w.transition_spots(0.0, 30.0) {
                    let eps = 1e-7;
                    let left = w.value(t - eps);
                    let right = w.value(t + eps);
                    let at = w.value(t);
                    let bound = 4.0 * eps * ((v2 - v1).abs() / rise.min(fall)) + 1e-12;
                    prop_assert!((left - at).abs() <= bound);
                    prop_assert!((right - at).abs() <= bound);
                }
            }
        }
    }
}
