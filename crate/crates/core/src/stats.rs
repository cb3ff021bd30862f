//! Small order-statistic helpers shared by the learner and the CLI.

/// Linear-interpolated quantile, `q` in `[0, 1]`. Returns 0 for empty input.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    match sorted.get(k + 1) {
        Some(next) => sorted[k] + frac * (next - sorted[k]),
        None => sorted[k],
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// `1.4826·MAD`, the normal-consistent robust scale of `values`.
pub(crate) fn robust_sigma(values: &[f64]) -> f64 {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    1.4826 * median(&dev)
}

/// Robust white-noise scale from first differences: `1.4826·MAD(Δy) / √2`.
pub(crate) fn difference_noise_sigma(samples: &[f64]) -> f64 {
    if samples.len() < 3 {
        return 0.0;
    }
    let diffs: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    robust_sigma(&diffs) / std::f64::consts::SQRT_2
}
