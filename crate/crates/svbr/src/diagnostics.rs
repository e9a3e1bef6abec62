//! Posterior summarization: WAIC, highest posterior density intervals,
//! Geweke convergence scores, and the per-fit summary document.

use crate::error::{Result, SvbrError};
use crate::samples::PosteriorSamples;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// WAIC and its effective-parameter count from a draws x observations
/// pointwise log-likelihood matrix. Uses the variance form of the penalty:
/// `p_waic = sum_i var_s(loglik_si)` with the unbiased sample variance, and
/// `waic = -2 (lppd - p_waic)`.
pub fn waic(loglik: &DMatrix<f64>) -> Result<(f64, f64)> {
    let s = loglik.nrows();
    if s < 2 {
        return Err(SvbrError::validation(
            "WAIC needs at least two stored draws",
        ));
    }
    let sf = s as f64;
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..loglik.ncols() {
        let col = loglik.column(i);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(SvbrError::numerical(format!(
                "non-finite log-likelihood in column {i}"
            )));
        }
        let sum_exp: f64 = col.iter().map(|&v| (v - max).exp()).sum();
        lppd += max + (sum_exp / sf).ln();
        let mean: f64 = col.iter().sum::<f64>() / sf;
        let var: f64 = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (sf - 1.0);
        p_waic += var;
    }
    Ok((-2.0 * (lppd - p_waic), p_waic))
}

/// Shortest contiguous interval containing `ceil(prob * n)` of the samples
/// (unimodal HDI). Ties go to the leftmost window.
pub fn hdi(samples: &[f64], prob: f64) -> Result<(f64, f64)> {
    if samples.len() < 20 {
        return Err(SvbrError::validation(format!(
            "HDI needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    if !(0.0 < prob && prob <= 1.0) {
        return Err(SvbrError::validation("HDI probability must be in (0, 1]"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let keep = ((prob * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[keep - 1]);
    let mut best_width = best.1 - best.0;
    for start in 1..=(n - keep) {
        let width = sorted[start + keep - 1] - sorted[start];
        if width < best_width {
            best_width = width;
            best = (sorted[start], sorted[start + keep - 1]);
        }
    }
    Ok(best)
}

pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Geweke convergence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GewekeResult {
    pub z: f64,
    /// Set when a segment variance degenerated and z was pinned to zero.
    pub degenerate: bool,
}

/// Compare the mean of the first 10% of the chain against the last 50%,
/// with segment variances from non-overlapping batch means (20 batches per
/// segment, fewer when a segment is shorter than 20).
pub fn geweke(samples: &[f64]) -> Result<GewekeResult> {
    let n = samples.len();
    if n < 100 {
        return Err(SvbrError::validation(format!(
            "Geweke needs at least 100 samples, got {n}"
        )));
    }
    let n_first = ((n as f64) * 0.1).floor() as usize;
    let n_last = ((n as f64) * 0.5).floor() as usize;
    let first = &samples[..n_first];
    let last = &samples[n - n_last..];
    let (mean_a, var_a) = batch_mean_variance(first);
    let (mean_b, var_b) = batch_mean_variance(last);
    let var_sum = var_a + var_b;
    if !(var_sum > 0.0) || !var_sum.is_finite() {
        return Ok(GewekeResult {
            z: 0.0,
            degenerate: true,
        });
    }
    Ok(GewekeResult {
        z: (mean_a - mean_b) / var_sum.sqrt(),
        degenerate: false,
    })
}

/// Segment mean and the batch-means estimate of the variance of that mean.
fn batch_mean_variance(segment: &[f64]) -> (f64, f64) {
    let n_batches = segment.len().min(20);
    let batch_size = segment.len() / n_batches;
    let used = n_batches * batch_size;
    let data = &segment[..used];
    let mean = data.iter().sum::<f64>() / used as f64;
    let mut batch_means = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let chunk = &data[b * batch_size..(b + 1) * batch_size];
        batch_means.push(chunk.iter().sum::<f64>() / batch_size as f64);
    }
    let bm_var = batch_means
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_batches as f64 - 1.0);
    (mean, bm_var / n_batches as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub hdi_lower: f64,
    pub hdi_upper: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub geweke_z: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub geweke_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub median: f64,
    pub hdi_lower: f64,
    pub hdi_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSummary {
    pub location_id: u64,
    pub delta: IntervalSummary,
    pub theta: IntervalSummary,
    pub exposure: IntervalSummary,
    pub impact: IntervalSummary,
}

/// Odds-ratio view of the logit-scale effects (exp of medians and interval
/// endpoints) for report output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioSummary {
    pub parameters: Vec<ParamSummary>,
    pub theta_by_location: Vec<(u64, IntervalSummary)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub variant: String,
    pub likelihood: String,
    pub exposure_kind: String,
    pub poly_degree: usize,
    pub n_draws: usize,
    pub waic: f64,
    pub p_waic: f64,
    pub parameters: Vec<ParamSummary>,
    pub locations: Vec<LocationSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub odds_ratios: Option<OddsRatioSummary>,
}

const HDI_PROB: f64 = 0.95;

fn interval(samples: &[f64]) -> Result<IntervalSummary> {
    let (lo, hi) = hdi(samples, HDI_PROB)?;
    Ok(IntervalSummary {
        median: median(samples),
        hdi_lower: lo,
        hdi_upper: hi,
    })
}

/// Summarize pooled posterior draws: medians and 95% HDIs for every scalar
/// parameter, per-location radius/effect/exposure/impact summaries, WAIC,
/// and Geweke scores for the monitored scalar parameters.
pub fn summarize(samples: &PosteriorSamples) -> Result<FitSummary> {
    let n_draws = samples.n_draws();
    if n_draws < 20 {
        return Err(SvbrError::validation(format!(
            "cannot summarize {n_draws} draws"
        )));
    }
    let (waic_value, p_waic) = waic(&samples.loglik)?;
    let mut parameters = Vec::new();
    for (name, values) in samples.parameter_columns() {
        let iv = interval(&values)?;
        let gw = if values.len() >= 100 {
            Some(geweke(&values)?)
        } else {
            None
        };
        parameters.push(ParamSummary {
            name,
            median: iv.median,
            hdi_lower: iv.hdi_lower,
            hdi_upper: iv.hdi_upper,
            geweke_z: gw.map(|g| g.z),
            geweke_degenerate: gw.map(|g| g.degenerate).unwrap_or(false),
        });
    }
    let mut locations = Vec::new();
    for (j, &id) in samples.meta.location_ids.iter().enumerate() {
        let col = |m: &DMatrix<f64>| -> Vec<f64> { m.column(j).iter().copied().collect() };
        locations.push(LocationSummary {
            location_id: id,
            delta: interval(&col(&samples.delta))?,
            theta: interval(&col(&samples.theta))?,
            exposure: interval(&col(&samples.exposure))?,
            impact: interval(&col(&samples.impact))?,
        });
    }
    Ok(FitSummary {
        variant: samples.meta.variant.clone(),
        likelihood: format!("{:?}", samples.meta.likelihood).to_lowercase(),
        exposure_kind: format!("{:?}", samples.meta.exposure_kind).to_lowercase(),
        poly_degree: samples.meta.poly_degree,
        n_draws,
        waic: waic_value,
        p_waic,
        parameters,
        locations,
        odds_ratios: None,
    })
}

/// Attach the odds-ratio transform of the covariate coefficients and the
/// per-location exposure effects. Exponentiation is monotone, so interval
/// endpoints map through directly.
pub fn with_odds_ratios(mut summary: FitSummary, samples: &PosteriorSamples) -> FitSummary {
    let mut parameters = Vec::new();
    for p in &summary.parameters {
        if p.name.starts_with("beta_") || p.name.starts_with("eta_") {
            parameters.push(ParamSummary {
                name: format!("exp({})", p.name),
                median: p.median.exp(),
                hdi_lower: p.hdi_lower.exp(),
                hdi_upper: p.hdi_upper.exp(),
                geweke_z: None,
                geweke_degenerate: false,
            });
        }
    }
    let mut theta_by_location = Vec::new();
    for (j, &id) in samples.meta.location_ids.iter().enumerate() {
        let values: Vec<f64> = samples.theta.column(j).iter().map(|v| v.exp()).collect();
        if let Ok(iv) = interval(&values) {
            theta_by_location.push((id, iv));
        }
    }
    summary.odds_ratios = Some(OddsRatioSummary {
        parameters,
        theta_by_location,
    });
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn waic_constant_matrix() {
        let c = -1.3;
        let ll = DMatrix::from_element(40, 1, c);
        let (w, p) = waic(&ll).unwrap();
        assert!((p - 0.0).abs() < 1e-15);
        assert!((w - (-2.0 * c)).abs() < 1e-12);
    }

    #[test]
    fn waic_hand_instance() {
        // Two draws, two observations.
        let ll = DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, -3.0, -1.0]);
        // lppd_i = log(mean(exp(l_si)))
        let lppd: f64 = ((((-1.0f64).exp() + (-3.0f64).exp()) / 2.0).ln())
            + ((((-2.0f64).exp() + (-1.0f64).exp()) / 2.0).ln());
        // unbiased variance of two points is (d/2)^2 * 2 = d^2 / 2
        let p: f64 = (2.0f64).powi(2) / 2.0 + (1.0f64).powi(2) / 2.0;
        let (w, p_got) = waic(&ll).unwrap();
        assert!((p_got - p).abs() < 1e-12);
        assert!((w - (-2.0 * (lppd - p))).abs() < 1e-12);
    }

    #[test]
    fn waic_invariant_under_draw_permutation_and_near_invariant_under_stacking() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = 400;
        // Small column variances keep the 1/(S-1) -> 1/(2S-1) correction
        // far below the tolerance.
        let base: Vec<f64> = (0..3).map(|i| -1.0 - i as f64).collect();
        let ll = DMatrix::from_fn(s, 3, |_, c| {
            base[c] + 1e-4 * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let (w, _) = waic(&ll).unwrap();
        let mut rows: Vec<usize> = (0..s).collect();
        rows.reverse();
        let permuted = DMatrix::from_fn(s, 3, |r, c| ll[(rows[r], c)]);
        let (w_perm, _) = waic(&permuted).unwrap();
        assert!((w - w_perm).abs() < 1e-12);
        let stacked = DMatrix::from_fn(2 * s, 3, |r, c| ll[(r % s, c)]);
        let (w_stacked, _) = waic(&stacked).unwrap();
        assert!((w - w_stacked).abs() < 1e-9, "diff {}", (w - w_stacked).abs());
    }

    #[test]
    fn waic_rejects_single_draw() {
        let ll = DMatrix::from_element(1, 3, -1.0);
        assert!(waic(&ll).is_err());
    }

    #[test]
    fn hdi_uniform_grid_leftmost_tie() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (lo, hi) = hdi(&samples, 0.95).unwrap();
        assert_eq!((lo, hi), (1.0, 95.0));
    }

    #[test]
    fn hdi_point_mass() {
        let samples = vec![2.5; 30];
        assert_eq!(hdi(&samples, 0.95).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn hdi_requires_enough_samples() {
        assert!(hdi(&[1.0; 19], 0.95).is_err());
    }

    #[test]
    fn hdi_full_probability_spans_range() {
        let samples: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(hdi(&samples, 1.0).unwrap(), (0.0, 49.0));
        // Width is non-decreasing in the probability.
        let mut last = 0.0;
        for prob in [0.5, 0.7, 0.9, 0.99, 1.0] {
            let (lo, hi) = hdi(&samples, prob).unwrap();
            assert!(hi - lo >= last);
            last = hi - lo;
        }
    }

    #[test]
    fn hdi_normal_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let (lo, hi) = hdi(&draws, 0.95).unwrap();
        assert!((lo - (-1.96)).abs() < 0.05, "lo {lo}");
        assert!((hi - 1.96).abs() < 0.05, "hi {hi}");
    }

    #[test]
    fn geweke_white_noise_mostly_small() {
        let mut failures = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain: Vec<f64> = (0..10_000)
                .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let g = geweke(&chain).unwrap();
            assert!(!g.degenerate);
            if g.z.abs() >= 4.0 {
                failures += 1;
            }
        }
        assert!(failures <= 2, "{failures} of 200 white-noise chains flagged");
    }

    #[test]
    fn geweke_flags_mean_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chain: Vec<f64> = (0..10_000)
            .map(|i| {
                let shift = if i >= 5_000 { 5.0 } else { 0.0 };
                shift + Distribution::<f64>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let g = geweke(&chain).unwrap();
        assert!(g.z.abs() > 4.0, "z = {}", g.z);
    }

    #[test]
    fn geweke_constant_chain_degenerates_to_zero() {
        let g = geweke(&vec![3.0; 500]).unwrap();
        assert_eq!(g.z, 0.0);
        assert!(g.degenerate);
    }

    #[test]
    fn geweke_requires_minimum_length() {
        assert!(geweke(&[0.0; 99]).is_err());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
