use serde::Serialize;

use crate::sds::Trajectory;

use super::HarnessError;

/// Divergence of one series between a reference run and another engine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesComparison {
    pub name: String,
    pub rmse: f64,
    pub max_abs_diff: f64,
    pub max_diff_time: f64,
    /// Time average of `other` over time average of `reference`; `None` when
    /// the reference averages to zero.
    pub mean_ratio: Option<f64>,
}

/// Linear interpolation of `(times, values)` at `t`, which must lie inside
/// the grid.
fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&x| x < t);
    if i < times.len() && times[i] == t {
        return values[i];
    }
    if i == 0 {
        return values[0];
    }
    if i == times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let w = (t - t0) / (t1 - t0);
    values[i - 1] + w * (values[i] - values[i - 1])
}

/// Compares every series name present in both trajectories.
///
/// Metrics are evaluated on the grid of the coarser trajectory (fewer points
/// per unit time) restricted to the overlap of both ranges; the finer one is
/// linearly interpolated onto it.
pub fn compare_trajectories(
    reference: &Trajectory,
    other: &Trajectory,
) -> Result<Vec<SeriesComparison>, HarnessError> {
    let range = |t: &Trajectory| (t.times.first().copied(), t.times.last().copied());
    let (Some(a0), Some(a1)) = range(reference) else {
        return Err(HarnessError::Compare("reference trajectory is empty".into()));
    };
    let (Some(b0), Some(b1)) = range(other) else {
        return Err(HarnessError::Compare("compared trajectory is empty".into()));
    };
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    if lo > hi {
        return Err(HarnessError::Compare(format!(
            "time ranges [{a0}, {a1}] and [{b0}, {b1}] do not overlap"
        )));
    }
    let density = |t: &Trajectory| {
        let span = t.times[t.len() - 1] - t.times[0];
        if span > 0.0 {
            t.len() as f64 / span
        } else {
            f64::INFINITY
        }
    };
    let reference_is_coarse = density(reference) <= density(other);
    let coarse = if reference_is_coarse { reference } else { other };
    let grid: Vec<(usize, f64)> = coarse
        .times
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, t)| t >= lo && t <= hi)
        .collect();

    let mut out = Vec::new();
    for (k, name) in reference.names.iter().enumerate() {
        let Some(j) = other.names.iter().position(|n| n == name) else {
            continue;
        };
        let (r, o) = (&reference.series[k], &other.series[j]);
        let mut sq = 0.0;
        let mut max_abs_diff = 0.0;
        let mut max_diff_time = grid[0].1;
        let (mut sum_r, mut sum_o) = (0.0, 0.0);
        for &(i, t) in &grid {
            let (x, y) = if reference_is_coarse {
                (r[i], interpolate(&other.times, o, t))
            } else {
                (interpolate(&reference.times, r, t), o[i])
            };
            let d = (x - y).abs();
            sq += d * d;
            if d > max_abs_diff {
                max_abs_diff = d;
                max_diff_time = t;
            }
            sum_r += x;
            sum_o += y;
        }
        let n = grid.len() as f64;
        out.push(SeriesComparison {
            name: name.clone(),
            rmse: (sq / n).sqrt(),
            max_abs_diff,
            max_diff_time,
            mean_ratio: (sum_r != 0.0).then(|| sum_o / sum_r),
        });
    }
    Ok(out)
}
