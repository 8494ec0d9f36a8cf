//! Sorted time sets: transition spots, sample grids and step limits.

/// Relative tolerance (to the simulated span) under which two instants are
/// the same point.
pub const TIME_MERGE_RELATIVE: f64 = 1e-9;

/// Absolute merge tolerance for a span.
pub fn merge_tolerance(t_start: f64, t_stop: f64) -> f64 {
    TIME_MERGE_RELATIVE * (t_stop - t_start).abs().max(f64::MIN_POSITIVE)
}

/// Sort, clip to `[t_start, t_stop]`, and merge points closer than `tol`
/// (keeping the first of each cluster).
pub fn normalize_times(mut times: Vec<f64>, t_start: f64, t_stop: f64, tol: f64) -> Vec<f64> {
    times.retain(|t| t.is_finite() && *t >= t_start - tol && *t <= t_stop + tol);
    times.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(times.len());
    for t in times {
        let t = t.clamp(t_start, t_stop);
        match out.last() {
            Some(&last) if t - last <= tol => {}
            _ => out.push(t),
        }
    }
    // Endpoints are represented exactly.
    if let Some(first) = out.first_mut() {
        if (*first - t_start).abs() <= tol {
            *first = t_start;
        }
    }
    if let Some(last) = out.last_mut() {
        if (*last - t_stop).abs() <= tol {
            *last = t_stop;
        }
    }
    out
}

/// Union of several sorted sets with tolerant merging.
pub fn merge_times<'a>(sets: impl IntoIterator<Item = &'a [f64]>, t_start: f64, t_stop: f64) -> Vec<f64> {
    let all: Vec<f64> = sets.into_iter().flatten().copied().collect();
    normalize_times(all, t_start, t_stop, merge_tolerance(t_start, t_stop))
}

/// Distance from `t` to the next spot strictly after `t` (beyond the merge
/// tolerance), or to `t_stop` if there is none. Never zero for `t < t_stop`.
pub fn max_step(t: f64, spots: &[f64], t_stop: f64) -> f64 {
    let tol = TIME_MERGE_RELATIVE * t_stop.abs().max(f64::MIN_POSITIVE);
    let next = spots.iter().copied().find(|&s| s > t + tol && s < t_stop).unwrap_or(t_stop);
    next - t
}

/// Every point of `{t_start} ∪ gts ∪ {t_stop}`, plus a uniform grid of
/// spacing `resolution` when given.
pub fn sample_times(gts: &[f64], t_start: f64, t_stop: f64, resolution: Option<f64>) -> Vec<f64> {
    let mut all = vec![t_start, t_stop];
    all.extend_from_slice(gts);
    if let Some(r) = resolution.filter(|r| *r > 0.0) {
        let n = ((t_stop - t_start) / r).ceil() as usize;
        all.extend((1..n).map(|k| t_start + k as f64 * r));
    }
    normalize_times(all, t_start, t_stop, merge_tolerance(t_start, t_stop))
}

/// Median gap of a sorted set (0 when fewer than two points).
pub fn median_gap(times: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 0.0).collect();
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

/// Index of the sample equal to `t` (within tolerance).
pub fn find_time(times: &[f64], t: f64, tol: f64) -> Option<usize> {
    let i = times.partition_point(|&x| x < t - tol);
    (i < times.len() && (times[i] - t).abs() <= tol).then_some(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_step_examples() {
        let spots = [1e-9, 2e-9];
        assert!((max_step(0.0, &spots, 10e-9) - 1e-9).abs() < 1e-24);
        assert!((max_step(1e-9, &spots, 10e-9) - 1e-9).abs() < 1e-24);
        assert!((max_step(3e-9, &spots, 10e-9) - 7e-9).abs() < 1e-24);
        assert!(max_step(9.9e-9, &spots, 10e-9) > 0.0);
    }

    #[test]
    fn merging_collapses_near_duplicates() {
        let a = [0.0, 1e-9, 2e-9];
        let b = [1e-9 + 1e-22, 3e-9];
        let m = merge_times([&a[..], &b[..]], 0.0, 10e-9);
        assert_eq!(m, vec![0.0, 1e-9, 2e-9, 3e-9]);
    }

    #[test]
    fn sample_grid_includes_endpoints_and_resolution() {
        let s = sample_times(&[2.5], 0.0, 4.0, Some(1.0));
        assert_eq!(s, vec![0.0, 1.0, 2.0, 2.5, 3.0, 4.0]);
        assert_eq!(median_gap(&s), 1.0);
        assert_eq!(find_time(&s, 2.5 + 1e-12, 1e-9), Some(3));
        assert_eq!(find_time(&s, 2.7, 1e-9), None);
    }
}
