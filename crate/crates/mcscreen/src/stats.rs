//! Shared numeric helpers: ranking, rank correlation, percentiles, OLS.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Average ranks (1-based) with ties sharing the mean of the ranks they span.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 are tied; assign their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either variable has zero variance.
pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
///
/// On binary-binary data this equals the phi coefficient of the 2x2 table,
/// because ranks of a binary variable are an affine transform of its values.
/// Returns `None` when either variable is constant.
pub(crate) fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

/// Two-sided p-value for a correlation via the t-approximation
/// t = rho * sqrt((n-2) / (1 - rho^2)) with n-2 degrees of freedom.
///
/// Saturated correlations (|rho| = 1) get p = 0.
pub(crate) fn correlation_t_p_value(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return f64::NAN;
    }
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    2.0 * dist.cdf(-t.abs())
}

/// Two-sided normal p-value for a Wald z statistic.
pub(crate) fn normal_two_sided_p(z: f64) -> f64 {
    let dist = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * dist.cdf(-z.abs())
}

/// Percentile of a sample by linear interpolation between order statistics
/// (the same convention as R's default quantile type 7). `q` in [0, 1].
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Unweighted simple OLS of y on x; returns (slope, intercept).
/// `None` when fewer than two distinct x values exist.
pub(crate) fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    debug_assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
