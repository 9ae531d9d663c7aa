//! The eleven window statistics.

pub const STAT_NAMES: [&str; 11] = [
    "avg", "std", "median", "min", "max", "skew", "kurt", "perc5", "perc25", "perc75", "perc95",
];

/// Linear interpolation at rank `(n - 1) * p` of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics in [`STAT_NAMES`] order; `None` for empty input.
///
/// Moments are population moments. Skewness and excess kurtosis are 0 for
/// constant input.
pub fn compute_stats(values: &[f64]) -> Option<[f64; 11]> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    compute_stats_sorted(&sorted)
}

pub(crate) fn compute_stats_sorted(sorted: &[f64]) -> Option<[f64; 11]> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let mean0 = sorted.iter().sum::<f64>() / nf;
    // Corrected two-pass: the correction is kept apart from the rounded
    // mean so values sharing a large offset keep their digits.
    let corr = sorted.iter().map(|v| v - mean0).sum::<f64>() / nf;
    let mean = mean0 + corr;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in sorted {
        let d = (v - mean0) - corr;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (min, max) = (sorted[0], sorted[n - 1]);
    let (skew, kurt) = if min == max {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Some([
        mean,
        m2.sqrt(),
        percentile(sorted, 0.5),
        min,
        max,
        skew,
        kurt,
        percentile(sorted, 0.05),
        percentile(sorted, 0.25),
        percentile(sorted, 0.75),
        percentile(sorted, 0.95),
    ])
}
