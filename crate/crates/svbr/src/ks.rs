//! Kolmogorov-Smirnov helpers used by the distributional test suites.

/// One-sample KS statistic against a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < na && j < nb {
        let xa = sa[i];
        let xb = sb[j];
        let x = xa.min(xb);
        while i < na && sa[i] <= x {
            i += 1;
        }
        while j < nb && sb[j] <= x {
            j += 1;
        }
        let fa = i as f64 / na as f64;
        let fb = j as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample
/// correction folded into the argument.
pub fn ks_pvalue(d: f64, n_effective: f64) -> f64 {
    let sqrt_n = n_effective.sqrt();
    let lambda = d * (sqrt_n + 0.12 + 0.11 / sqrt_n);
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut p = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += sign * term;
        sign = -sign;
        if term < 1e-14 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// One-sample test p-value.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let d = ks_statistic(samples, cdf);
    ks_pvalue(d, samples.len() as f64)
}

/// Two-sample test p-value.
pub fn ks_test_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let d = ks_statistic_two_sample(a, b);
    let n_eff = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    ks_pvalue(d, n_eff)
}
