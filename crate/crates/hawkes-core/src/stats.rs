//! Small numerical helpers shared across modules: summaries, quantiles,
//! Kolmogorov-Smirnov p-values, HDI, and log-space utilities.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (denominator n-1).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn weighted_mean(xs: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw
}

pub fn weighted_variance(xs: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(xs, w);
    let sw: f64 = w.iter().sum();
    xs.iter().zip(w).map(|(x, w)| w * (x - m) * (x - m)).sum::<f64>() / sw
}

/// Linear-interpolation quantile on a sorted slice (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&s, q)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Shortest interval containing `mass` of the sample (highest-density interval
/// for unimodal posteriors).
pub fn hdi(xs: &[f64], mass: f64) -> (f64, f64) {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (s[0], s[n - 1]);
    let mut width = f64::INFINITY;
    for i in 0..=(n - k) {
        let w = s[i + k - 1] - s[i];
        if w < width {
            width = w;
            best = (s[i], s[i + k - 1]);
        }
    }
    best
}

/// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS p-value with Stephens' small-sample correction.
pub fn ks_one_sample_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS statistic of `xs` against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Two-sample KS test; returns (statistic, asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = sa[i].min(sb[j]);
        while i < n && sa[i] <= x {
            i += 1;
        }
        while j < m && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    (d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d))
}

/// Empirical CDF of `sorted` evaluated at `x` (proportion <= x).
pub fn ecdf_sorted(sorted: &[f64], x: f64) -> f64 {
    // partition_point gives count of elements <= x on a sorted slice
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile(&xs, 0.5), 2.5);
        assert_abs_diff_eq!(quantile(&xs, 0.0), 1.0);
        assert_abs_diff_eq!(quantile(&xs, 1.0), 4.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // classic critical value: Q(1.36) ~ 0.05
        let p = kolmogorov_sf(1.358);
        assert!((p - 0.05).abs() < 0.003, "p = {p}");
    }

    #[test]
    fn hdi_contains_median() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i as f64) / 1000.0).powi(2)).collect();
        let (lo, hi) = hdi(&xs, 0.8);
        let med = median(&xs);
        assert!(lo <= med && med <= hi);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0f64, 0.5, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&xs), direct, epsilon = 1e-12);
    }

    #[test]
    fn two_sample_ks_identical_samples() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 * 0.01).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_abs_diff_eq!(d, 0.0);
        assert!(p > 0.99);
    }
}
