//! Synthetic-data generator and the model-comparison study harness.
//!
//! The generator subsamples women from a bundled synthetic template (the
//! real survey inputs are access-restricted), draws location radii and
//! exposure effects under one of four settings of increasing flexibility,
//! and produces Bernoulli outcomes through the logit link. The harness fits
//! the three competing models to each replicate and aggregates bias, MSE,
//! empirical coverage, interval length, and the lowest-WAIC tally.

use crate::data::{
    validate_dataset, Dataset, ExposureKind, KnotSpec, Likelihood, ModelSpec, Priors, RawDataset,
    Variant,
};
use crate::diagnostics::{hdi, waic};
use crate::error::{Result, SvbrError};
use crate::exposure::{delta_from_linear_scalar, normalize_delta, theta_at, ExposureIndex};
use crate::samples::PosteriorSamples;
use crate::sampler::{derive_stream, run_chain, softplus, McmcConfig};
use crate::spatial::{cholesky_with_jitter, exp_correlation};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Half-width of a central 95% normal interval in standard deviations.
const Z_975: f64 = 1.959963984540054;

/// Data-generating regimes, ordered by flexibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// 1: no exposure effect anywhere.
    NoEffect,
    /// 2: one radius and one effect shared by all locations.
    SingleRadiusAndEffect,
    /// 3: location-specific radii, constant effect.
    VaryingRadiiSingleEffect,
    /// 4: location-specific radii and effects.
    VaryingRadiiAndEffects,
}

impl Setting {
    pub fn from_number(n: u8) -> Result<Setting> {
        match n {
            1 => Ok(Setting::NoEffect),
            2 => Ok(Setting::SingleRadiusAndEffect),
            3 => Ok(Setting::VaryingRadiiSingleEffect),
            4 => Ok(Setting::VaryingRadiiAndEffects),
            _ => Err(SvbrError::config(format!("unknown setting {n}"))),
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Setting::NoEffect => 1,
            Setting::SingleRadiusAndEffect => 2,
            Setting::VaryingRadiiSingleEffect => 3,
            Setting::VaryingRadiiAndEffects => 4,
        }
    }

    fn varying_radii(&self) -> bool {
        matches!(
            self,
            Setting::VaryingRadiiSingleEffect | Setting::VaryingRadiiAndEffects
        )
    }
}

/// Normal approximation to a reported posterior: median plus a central 95%
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalApprox {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl NormalApprox {
    pub fn new(median: f64, lower: f64, upper: f64) -> Self {
        NormalApprox {
            median,
            lower,
            upper,
        }
    }

    pub fn point(value: f64) -> Self {
        NormalApprox {
            median: value,
            lower: value,
            upper: value,
        }
    }

    pub fn sd(&self) -> f64 {
        (self.upper - self.lower) / (2.0 * Z_975)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.median + self.sd() * z
    }
}

/// Truth-generating parameter source. Fixed values are posterior medians
/// from the application fit; the others are redrawn per replicate from
/// normal approximations to the reported posteriors so replicate truths
/// vary. The varying-effect slope is reported per distance unit and is
/// rescaled to the normalized-radius polynomial basis at generation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDistributions {
    pub beta0: f64,
    pub beta1: f64,
    pub rho: f64,
    pub gamma0: NormalApprox,
    pub gamma1: NormalApprox,
    pub eta0_single: NormalApprox,
    pub eta0_varying: NormalApprox,
    /// Slope per distance unit (km) of the varying exposure effect.
    pub eta1_varying_per_km: NormalApprox,
    /// Multiplier on the spatial random effects; zero collapses the
    /// varying-radii settings onto the single-radius generator.
    pub phi_scale: f64,
}

impl Default for TruthDistributions {
    fn default() -> Self {
        TruthDistributions {
            beta0: -0.928,
            beta1: 0.332,
            rho: 3.070,
            gamma0: NormalApprox::new(1.045, 0.161, 2.047),
            gamma1: NormalApprox::new(0.189, 0.004, 0.505),
            eta0_single: NormalApprox::new(0.910, 0.674, 1.172),
            eta0_varying: NormalApprox::new(6.342, 3.618, 9.509),
            eta1_varying_per_km: NormalApprox::new(-0.337, -0.518, -0.203),
            phi_scale: 1.0,
        }
    }
}

/// Realized truth for one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub setting: u8,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Effect polynomial on the normalized-radius basis; empty when the
    /// setting has no exposure effect.
    pub eta: Vec<f64>,
    pub rho: f64,
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
    pub theta: Vec<f64>,
    pub exposure: Vec<f64>,
    pub impact: Vec<f64>,
    pub location_ids: Vec<u64>,
}

/// Subsample rows from the template, draw setting-specific truth, and
/// generate Bernoulli outcomes through the logit link.
pub fn simulate_dataset(
    template: &Dataset,
    setting: Setting,
    truth_source: &TruthDistributions,
    bounds: (f64, f64),
    n_rows: usize,
    seed: u64,
    stream: u64,
) -> Result<(Dataset, TruthRecord)> {
    if template.n_obs() < n_rows {
        return Err(SvbrError::validation(format!(
            "template has {} rows, cannot subsample {n_rows}",
            template.n_obs()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    // Subsample without replacement, keeping template order.
    let mut keep: Vec<usize> = sample_indices(&mut rng, template.n_obs(), n_rows).into_vec();
    keep.sort_unstable();

    // Realized locations, relabeled 0..m*.
    let mut loc_map: Vec<Option<usize>> = vec![None; template.n_locations()];
    let mut kept_locs: Vec<usize> = Vec::new();
    for &row in &keep {
        let j = template.location_of[row];
        if loc_map[j].is_none() {
            loc_map[j] = Some(usize::MAX);
            kept_locs.push(j);
        }
    }
    kept_locs.sort_unstable();
    for (new_idx, &old) in kept_locs.iter().enumerate() {
        loc_map[old] = Some(new_idx);
    }
    let m_star = kept_locs.len();

    let coords = DMatrix::from_fn(m_star, 2, |j, c| template.coords[(kept_locs[j], c)]);
    let loc_predictors = DMatrix::from_fn(m_star, template.n_loc_predictors(), |j, c| {
        template.loc_predictors[(kept_locs[j], c)]
    });
    let distances = DMatrix::from_fn(m_star, template.n_sources(), |j, s| {
        template.distances[(kept_locs[j], s)]
    });

    // Scaled coordinate distances for the spatial truth, same convention as
    // model fitting (max pairwise distance 1).
    let raw_dists = crate::data::coord_distances(&coords);
    let scale = raw_dists.iter().cloned().fold(0.0f64, f64::max);
    let scaled = if scale > 0.0 {
        raw_dists.map(|d| d / scale)
    } else {
        raw_dists
    };

    // Draw every truth component in a fixed order so generator streams
    // align across settings for equivalence checks.
    let gamma0 = truth_source.gamma0.draw(&mut rng);
    let gamma1 = truth_source.gamma1.draw(&mut rng);
    let corr = exp_correlation(&scaled, truth_source.rho);
    let (chol, _) = cholesky_with_jitter(&corr)?;
    let noise = DVector::from_fn(m_star, |_, _| {
        Distribution::<f64>::sample(&StandardNormal, &mut rng)
    });
    let phi_raw = chol.l_dirty().lower_triangle() * noise;
    let eta0_single = truth_source.eta0_single.draw(&mut rng);
    let eta0_varying = truth_source.eta0_varying.draw(&mut rng);
    let eta1_per_km = truth_source.eta1_varying_per_km.draw(&mut rng);

    let varying = setting.varying_radii();
    let phi: Vec<f64> = (0..m_star)
        .map(|j| {
            if varying {
                truth_source.phi_scale * phi_raw[j]
            } else {
                0.0
            }
        })
        .collect();
    let urban_col = 1.min(template.n_loc_predictors() - 1);
    let mut delta = vec![0.0; m_star];
    for j in 0..m_star {
        let lin = if varying {
            gamma0 + gamma1 * loc_predictors[(j, urban_col)] + phi[j]
        } else {
            gamma0
        };
        delta[j] = delta_from_linear_scalar(lin, bounds);
    }

    // Effect polynomial on the normalized basis per setting.
    let eta: Vec<f64> = match setting {
        Setting::NoEffect => Vec::new(),
        Setting::SingleRadiusAndEffect | Setting::VaryingRadiiSingleEffect => vec![eta0_single],
        Setting::VaryingRadiiAndEffects => {
            vec![eta0_varying, eta1_per_km * (bounds.1 - bounds.0)]
        }
    };
    let theta: Vec<f64> = delta
        .iter()
        .map(|&d| {
            if eta.is_empty() {
                0.0
            } else {
                theta_at(normalize_delta(d, bounds), &eta)
            }
        })
        .collect();

    let index = ExposureIndex::from_distances(&distances);
    let exposure: Vec<f64> = (0..m_star)
        .map(|j| index.exposure(ExposureKind::Count, j, delta[j]))
        .collect();
    let impact: Vec<f64> = (0..m_star).map(|j| exposure[j] * theta[j]).collect();

    // Outcomes.
    let n = keep.len();
    let mut outcomes = Vec::with_capacity(n);
    let mut covariates = DMatrix::zeros(n, 2);
    let mut location_of = Vec::with_capacity(n);
    for (row_idx, &row) in keep.iter().enumerate() {
        let j = loc_map[template.location_of[row]].expect("kept location");
        let x = template.covariates[(row, 1)];
        let logit = truth_source.beta0 + truth_source.beta1 * x + impact[j];
        let p = (-softplus(-logit)).exp();
        outcomes.push(if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
        covariates[(row_idx, 0)] = 1.0;
        covariates[(row_idx, 1)] = x;
        location_of.push(j);
    }

    let location_ids: Vec<u64> = kept_locs
        .iter()
        .map(|&j| template.location_ids[j])
        .collect();
    let raw = RawDataset {
        outcomes,
        trials: Some(vec![1; n]),
        offsets: vec![0.0; n],
        covariates,
        location_of,
        coords,
        loc_predictors,
        distances,
        location_ids: location_ids.clone(),
    };
    let spec = study_model_spec(StudyModel::SvbrConstantEffect, bounds);
    let dataset = validate_dataset(raw, &spec)?;

    let gamma = if varying {
        vec![gamma0, gamma1]
    } else {
        vec![gamma0]
    };
    let truth = TruthRecord {
        setting: setting.number(),
        beta: vec![truth_source.beta0, truth_source.beta1],
        gamma,
        eta,
        rho: truth_source.rho,
        phi,
        delta,
        theta,
        exposure,
        impact,
        location_ids,
    };
    Ok((dataset, truth))
}

/// The three competing models of the comparison study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyModel {
    SingleRadius,
    SvbrConstantEffect,
    SvbrLinearEffect,
}

impl StudyModel {
    pub const ALL: [StudyModel; 3] = [
        StudyModel::SingleRadius,
        StudyModel::SvbrConstantEffect,
        StudyModel::SvbrLinearEffect,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            StudyModel::SingleRadius => "singlebr",
            StudyModel::SvbrConstantEffect => "svbr_p0",
            StudyModel::SvbrLinearEffect => "svbr_p1",
        }
    }
}

pub fn study_model_spec(model: StudyModel, bounds: (f64, f64)) -> ModelSpec {
    let (variant, degree) = match model {
        StudyModel::SingleRadius => (Variant::SingleBr, 0),
        StudyModel::SvbrConstantEffect => (Variant::Svbr, 0),
        StudyModel::SvbrLinearEffect => (Variant::Svbr, 1),
    };
    ModelSpec {
        likelihood: Likelihood::Binomial,
        exposure_kind: ExposureKind::Count,
        variant,
        poly_degree: degree,
        radius_bounds: bounds,
        knots: KnotSpec::Named("auto".into()),
        priors: Priors::default(),
    }
}

/// Posterior mean and 95% HDI for one scalar target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub mean: f64,
    pub hdi_lower: f64,
    pub hdi_upper: f64,
}

fn target_estimate(values: &[f64]) -> Result<TargetEstimate> {
    let (lo, hi) = hdi(values, 0.95)?;
    Ok(TargetEstimate {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        hdi_lower: lo,
        hdi_upper: hi,
    })
}

/// Point estimates and intervals extracted from one fit, per target group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimates {
    pub delta: Vec<TargetEstimate>,
    pub theta: Vec<TargetEstimate>,
    pub impact: Vec<TargetEstimate>,
    pub beta: Vec<TargetEstimate>,
}

pub fn estimates_from_samples(samples: &PosteriorSamples) -> Result<ReplicateEstimates> {
    let per_loc = |mat: &DMatrix<f64>| -> Result<Vec<TargetEstimate>> {
        (0..mat.ncols())
            .map(|j| {
                let col: Vec<f64> = mat.column(j).iter().copied().collect();
                target_estimate(&col)
            })
            .collect()
    };
    Ok(ReplicateEstimates {
        delta: per_loc(&samples.delta)?,
        theta: per_loc(&samples.theta)?,
        impact: per_loc(&samples.impact)?,
        beta: per_loc(&samples.beta)?,
    })
}

/// One row of the comparison table: a metric and its standard error across
/// replicates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub bias: f64,
    pub bias_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub hdi_length: f64,
    pub hdi_length_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub targets: Vec<(String, MetricRow)>,
}

impl MetricsTable {
    pub fn row(&self, target: &str) -> Option<&MetricRow> {
        self.targets
            .iter()
            .find(|(name, _)| name == target)
            .map(|(_, row)| row)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Average bias, MSE, empirical coverage, and interval length against the
/// per-replicate truths. Location-varying targets are averaged across
/// locations within each replicate; a model producing one shared estimate
/// simply contributes that estimate at every location.
pub fn evaluate_metrics(
    fits: &[ReplicateEstimates],
    truths: &[TruthRecord],
) -> Result<MetricsTable> {
    if fits.len() != truths.len() {
        return Err(SvbrError::validation(format!(
            "{} fits against {} truths",
            fits.len(),
            truths.len()
        )));
    }
    if fits.is_empty() {
        return Err(SvbrError::validation("no replicates to evaluate"));
    }
    let group = |pick_est: &dyn Fn(&ReplicateEstimates) -> &Vec<TargetEstimate>,
                 pick_truth: &dyn Fn(&TruthRecord) -> &Vec<f64>|
     -> Result<MetricRow> {
        let mut biases = Vec::new();
        let mut mses = Vec::new();
        let mut coverages = Vec::new();
        let mut lengths = Vec::new();
        for (fit, truth) in fits.iter().zip(truths) {
            let estimates = pick_est(fit);
            let truth_values = pick_truth(truth);
            if estimates.len() != truth_values.len() {
                return Err(SvbrError::validation(
                    "estimate / truth dimension mismatch",
                ));
            }
            let k = estimates.len() as f64;
            let mut bias = 0.0;
            let mut mse = 0.0;
            let mut coverage = 0.0;
            let mut length = 0.0;
            for (est, &truth_v) in estimates.iter().zip(truth_values) {
                let err = est.mean - truth_v;
                bias += err;
                mse += err * err;
                if est.hdi_lower <= truth_v && truth_v <= est.hdi_upper {
                    coverage += 1.0;
                }
                length += est.hdi_upper - est.hdi_lower;
            }
            biases.push(bias / k);
            mses.push(mse / k);
            coverages.push(coverage / k);
            lengths.push(length / k);
        }
        let (bias, bias_se) = mean_and_se(&biases);
        let (mse, mse_se) = mean_and_se(&mses);
        let (coverage, coverage_se) = mean_and_se(&coverages);
        let (hdi_length, hdi_length_se) = mean_and_se(&lengths);
        Ok(MetricRow {
            bias,
            bias_se,
            mse,
            mse_se,
            coverage,
            coverage_se,
            hdi_length,
            hdi_length_se,
        })
    };

    let include_radius_rows = truths[0].setting >= 2;
    let mut targets = Vec::new();
    if include_radius_rows {
        targets.push((
            "delta".to_string(),
            group(&|f| &f.delta, &|t| &t.delta)?,
        ));
        targets.push((
            "theta".to_string(),
            group(&|f| &f.theta, &|t| &t.theta)?,
        ));
    }
    targets.push((
        "impact".to_string(),
        group(&|f| &f.impact, &|t| &t.impact)?,
    ));
    targets.push(("beta".to_string(), group(&|f| &f.beta, &|t| &t.beta)?));
    Ok(MetricsTable { targets })
}

/// Fraction of replicates in which each model attains the strictly lowest
/// WAIC; exact ties share the credit equally.
pub fn waic_tally(waics: &[[f64; 3]]) -> [f64; 3] {
    let mut tally = [0.0; 3];
    for row in waics {
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let winners: Vec<usize> = (0..3).filter(|&i| row[i] == min).collect();
        let share = 1.0 / winners.len() as f64;
        for w in winners {
            tally[w] += share;
        }
    }
    let n = waics.len() as f64;
    if n > 0.0 {
        for t in &mut tally {
            *t /= n;
        }
    }
    tally
}

/// Study configuration: which settings, how many replicates, and the chain
/// schedule used for every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub settings: Vec<u8>,
    pub replicates: usize,
    pub sample_rows: usize,
    pub bounds: (f64, f64),
    pub mcmc: McmcConfig,
    #[serde(default = "TruthDistributions::default_boxed")]
    pub truth: TruthDistributions,
}

impl TruthDistributions {
    fn default_boxed() -> TruthDistributions {
        TruthDistributions::default()
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            settings: vec![1, 2, 3, 4],
            replicates: 50,
            sample_rows: 500,
            bounds: (0.0, 20.0),
            mcmc: McmcConfig {
                iterations: 10_000,
                burn_in: 4_000,
                thin: 2,
                ..Default::default()
            },
            truth: TruthDistributions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub setting: u8,
    /// Lowest-WAIC share per model, ordered as `StudyModel::ALL`.
    pub tally: [f64; 3],
    pub metrics: Vec<(String, MetricsTable)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub replicates: usize,
    pub results: Vec<SettingResult>,
}

/// Run the full comparison study. Replicates are independent and run in
/// parallel; every replicate derives its own generator and fit substreams
/// from the master seed, so results do not depend on scheduling.
pub fn run_study(template: &Dataset, config: &StudyConfig) -> Result<StudyOutput> {
    let mut results = Vec::new();
    for &setting_no in &config.settings {
        let setting = Setting::from_number(setting_no)?;
        let per_replicate: Result<Vec<([f64; 3], Vec<ReplicateEstimates>, TruthRecord)>> = (0
            ..config.replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let (dataset, truth) = simulate_dataset(
                    template,
                    setting,
                    &config.truth,
                    config.bounds,
                    config.sample_rows,
                    config.mcmc.seed,
                    derive_stream(1, setting_no as u64, rep, 0),
                )?;
                let mut waics = [0.0; 3];
                let mut estimates = Vec::with_capacity(3);
                for (idx, model) in StudyModel::ALL.iter().enumerate() {
                    let spec = study_model_spec(*model, config.bounds);
                    let samples = run_chain(
                        &dataset,
                        &spec,
                        &config.mcmc,
                        derive_stream(2, setting_no as u64, rep, idx as u64),
                    )?;
                    let (w, _) = waic(&samples.loglik)?;
                    waics[idx] = w;
                    estimates.push(estimates_from_samples(&samples)?);
                }
                Ok((waics, estimates, truth))
            })
            .collect();
        let per_replicate = per_replicate?;

        let waics: Vec<[f64; 3]> = per_replicate.iter().map(|(w, _, _)| *w).collect();
        let tally = waic_tally(&waics);
        let truths: Vec<TruthRecord> =
            per_replicate.iter().map(|(_, _, t)| t.clone()).collect();
        let mut metrics = Vec::new();
        for (idx, model) in StudyModel::ALL.iter().enumerate() {
            let fits: Vec<ReplicateEstimates> = per_replicate
                .iter()
                .map(|(_, est, _)| est[idx].clone())
                .collect();
            metrics.push((model.label().to_string(), evaluate_metrics(&fits, &truths)?));
        }
        results.push(SettingResult {
            setting: setting_no,
            tally,
            metrics,
        });
    }
    Ok(StudyOutput {
        replicates: config.replicates,
        results,
    })
}

// ---------------------------------------------------------------------------
// Bundled synthetic template.
// ---------------------------------------------------------------------------

/// Deterministic synthetic analogue of the motivating survey: 109 cluster
/// locations (18 urban) on a 200 x 300 km region, 1,818 women with an
/// employment covariate, and 180 health facilities whose road distances are
/// approximated by Euclidean kilometers. Exposure counts within 20 km range
/// from zero in remote clusters to a dozen near towns.
pub fn toliara_template() -> Dataset {
    build_template(7240)
}

pub fn build_template(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 109;
    let n_urban = 18;
    let n_women = 1818;
    let n_towns = 12;
    let n_clustered_facilities = 100;
    let n_uniform_facilities = 80;
    let width = 200.0;
    let height = 300.0;

    let towns: Vec<[f64; 2]> = (0..n_towns)
        .map(|_| [rng.gen::<f64>() * width, rng.gen::<f64>() * height])
        .collect();

    let mut coords = DMatrix::zeros(m, 2);
    let mut urban = vec![0.0; m];
    for j in 0..m {
        if j < n_urban {
            let town = towns[j % n_towns];
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            coords[(j, 0)] = (town[0] + 2.0 * dx).clamp(0.0, width);
            coords[(j, 1)] = (town[1] + 2.0 * dy).clamp(0.0, height);
            urban[j] = 1.0;
        } else {
            coords[(j, 0)] = rng.gen::<f64>() * width;
            coords[(j, 1)] = rng.gen::<f64>() * height;
        }
    }

    let h = n_clustered_facilities + n_uniform_facilities;
    let mut facilities = Vec::with_capacity(h);
    for f in 0..n_clustered_facilities {
        let town = towns[f % n_towns];
        let dx: f64 = StandardNormal.sample(&mut rng);
        let dy: f64 = StandardNormal.sample(&mut rng);
        facilities.push([
            (town[0] + 8.0 * dx).clamp(0.0, width),
            (town[1] + 8.0 * dy).clamp(0.0, height),
        ]);
    }
    for _ in 0..n_uniform_facilities {
        facilities.push([rng.gen::<f64>() * width, rng.gen::<f64>() * height]);
    }
    let distances = DMatrix::from_fn(m, h, |j, f| {
        let dx = coords[(j, 0)] - facilities[f][0];
        let dy = coords[(j, 1)] - facilities[f][1];
        (dx * dx + dy * dy).sqrt()
    });

    // Cluster sizes: jittered around the mean, adjusted to the exact total.
    let mut sizes: Vec<usize> = (0..m)
        .map(|_| (n_women as f64 / m as f64 * (0.5 + rng.gen::<f64>())).round() as usize)
        .collect();
    let mut total: usize = sizes.iter().sum();
    let mut j = 0;
    while total != n_women {
        if total < n_women {
            sizes[j % m] += 1;
            total += 1;
        } else if sizes[j % m] > 5 {
            sizes[j % m] -= 1;
            total -= 1;
        }
        j += 1;
    }

    // Outcomes for the bundled fixture follow the varying-radii single-effect
    // generator at the reported posterior medians.
    let truth = TruthDistributions::default();
    let bounds = (0.0, 20.0);
    let raw_dists = crate::data::coord_distances(&coords);
    let scale = raw_dists.iter().cloned().fold(0.0f64, f64::max);
    let scaled = raw_dists.map(|d| d / scale);
    let corr = exp_correlation(&scaled, truth.rho);
    let (chol, _) = cholesky_with_jitter(&corr).expect("template correlation");
    let noise = DVector::from_fn(m, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let phi = chol.l_dirty().lower_triangle() * noise;
    let index = ExposureIndex::from_distances(&distances);
    let mut impact = vec![0.0; m];
    for j in 0..m {
        let lin = truth.gamma0.median + truth.gamma1.median * urban[j] + phi[j];
        let delta = delta_from_linear_scalar(lin, bounds);
        let z = index.exposure(ExposureKind::Count, j, delta);
        impact[j] = z * truth.eta0_single.median;
    }

    let mut outcomes = Vec::with_capacity(n_women);
    let mut covariates = DMatrix::zeros(n_women, 2);
    let mut location_of = Vec::with_capacity(n_women);
    for (j, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let employed = if rng.gen::<f64>() < 0.8267 { 1.0 } else { 0.0 };
            let logit = truth.beta0 + truth.beta1 * employed + impact[j];
            let p = (-softplus(-logit)).exp();
            let i = outcomes.len();
            outcomes.push(if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
            covariates[(i, 0)] = 1.0;
            covariates[(i, 1)] = employed;
            location_of.push(j);
        }
    }

    let raw = RawDataset {
        outcomes,
        trials: Some(vec![1; n_women]),
        offsets: vec![0.0; n_women],
        covariates,
        location_of,
        coords,
        loc_predictors: DMatrix::from_fn(m, 2, |j, c| if c == 0 { 1.0 } else { urban[j] }),
        distances,
        location_ids: (0..m as u64).collect(),
    };
    let spec = study_model_spec(StudyModel::SvbrConstantEffect, bounds);
    validate_dataset(raw, &spec).expect("template is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_shape_and_exposure_scale() {
        let t = toliara_template();
        assert_eq!(t.n_locations(), 109);
        assert_eq!(t.n_obs(), 1818);
        assert_eq!(t.n_sources(), 180);
        let index = ExposureIndex::from_distances(&t.distances);
        let counts: Vec<f64> = (0..109)
            .map(|j| index.exposure(ExposureKind::Count, j, 20.0))
            .collect();
        let mean = counts.iter().sum::<f64>() / 109.0;
        assert!(mean > 1.0 && mean < 15.0, "mean count within 20 km: {mean}");
        assert!(counts.iter().any(|&c| c == 0.0) || counts.iter().any(|&c| c <= 2.0));
        // Deterministic.
        let again = toliara_template();
        assert_eq!(t.outcomes, again.outcomes);
        assert_eq!(t.distances, again.distances);
    }

    #[test]
    fn no_effect_setting_has_zero_impact_truth() {
        let t = toliara_template();
        let (_, truth) = simulate_dataset(
            &t,
            Setting::NoEffect,
            &TruthDistributions::default(),
            (0.0, 20.0),
            500,
            11,
            0,
        )
        .unwrap();
        assert!(truth.impact.iter().all(|&v| v == 0.0));
        assert!(truth.theta.iter().all(|&v| v == 0.0));
        assert!(truth.eta.is_empty());
    }

    #[test]
    fn single_radius_setting_is_constant_across_locations() {
        let t = toliara_template();
        let source = TruthDistributions {
            gamma0: NormalApprox::point(1.045),
            ..Default::default()
        };
        let (_, truth) = simulate_dataset(
            &t,
            Setting::SingleRadiusAndEffect,
            &source,
            (0.0, 20.0),
            500,
            12,
            0,
        )
        .unwrap();
        let d0 = truth.delta[0];
        assert!((d0 - 17.039770304772679).abs() < 1e-9);
        assert!(truth.delta.iter().all(|&d| (d - d0).abs() < 1e-12));
        assert!(truth.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn varying_effect_setting_theta_tracks_radius_scale() {
        let t = toliara_template();
        let source = TruthDistributions {
            eta0_varying: NormalApprox::point(6.342),
            eta1_varying_per_km: NormalApprox::point(-0.337),
            ..Default::default()
        };
        let (_, truth) = simulate_dataset(
            &t,
            Setting::VaryingRadiiAndEffects,
            &source,
            (0.0, 20.0),
            500,
            13,
            0,
        )
        .unwrap();
        // The effect at radius delta equals eta0 + eta1 * delta in km.
        for j in 0..truth.delta.len() {
            let want = 6.342 - 0.337 * truth.delta[j];
            assert!((truth.theta[j] - want).abs() < 1e-9);
        }
        assert_eq!(truth.eta.len(), 2);
        assert!((truth.eta[1] - (-0.337 * 20.0)).abs() < 1e-12);
    }

    #[test]
    fn setting3_with_suppressed_variation_reproduces_setting2_exactly() {
        let t = toliara_template();
        let source = TruthDistributions {
            gamma1: NormalApprox::point(0.0),
            phi_scale: 0.0,
            ..Default::default()
        };
        let (ds2, truth2) = simulate_dataset(
            &t,
            Setting::SingleRadiusAndEffect,
            &source,
            (0.0, 20.0),
            500,
            21,
            5,
        )
        .unwrap();
        let (ds3, truth3) = simulate_dataset(
            &t,
            Setting::VaryingRadiiSingleEffect,
            &source,
            (0.0, 20.0),
            500,
            21,
            5,
        )
        .unwrap();
        assert_eq!(ds2.outcomes, ds3.outcomes);
        assert_eq!(truth2.delta, truth3.delta);
        assert_eq!(truth2.theta, truth3.theta);
    }

    #[test]
    fn generated_outcome_frequencies_match_logit_probabilities() {
        let t = toliara_template();
        // Large-cell check: pool outcomes by exposure impact cell over many
        // replicates of the same generator stream family.
        let source = TruthDistributions {
            gamma0: NormalApprox::point(1.045),
            eta0_single: NormalApprox::point(0.910),
            ..Default::default()
        };
        let mut hits = 0.0;
        let mut trials = 0.0;
        let mut expected = 0.0;
        for stream in 0..40 {
            let (ds, truth) = simulate_dataset(
                &t,
                Setting::SingleRadiusAndEffect,
                &source,
                (0.0, 20.0),
                500,
                31,
                stream,
            )
            .unwrap();
            for i in 0..ds.n_obs() {
                let j = ds.location_of[i];
                let logit = -0.928 + 0.332 * ds.covariates[(i, 1)] + truth.impact[j];
                let p = 1.0 / (1.0 + (-logit as f64).exp());
                hits += ds.outcomes[i];
                expected += p;
                trials += 1.0;
            }
        }
        let se = (expected / trials * (1.0 - expected / trials) / trials).sqrt();
        assert!(
            (hits / trials - expected / trials).abs() < 4.0 * se,
            "empirical {} vs expected {}",
            hits / trials,
            expected / trials
        );
    }

    #[test]
    fn subsample_too_large_is_rejected() {
        let t = toliara_template();
        let err = simulate_dataset(
            &t,
            Setting::NoEffect,
            &TruthDistributions::default(),
            (0.0, 20.0),
            5000,
            1,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("cannot subsample"));
    }

    #[test]
    fn metrics_point_mass_at_truth() {
        let truth = TruthRecord {
            setting: 2,
            beta: vec![1.0, -1.0],
            gamma: vec![0.0],
            eta: vec![0.5],
            rho: 3.0,
            phi: vec![0.0, 0.0],
            delta: vec![4.0, 6.0],
            theta: vec![0.5, 0.5],
            exposure: vec![2.0, 0.0],
            impact: vec![1.0, 0.0],
            location_ids: vec![0, 1],
        };
        let exact = |v: f64| TargetEstimate {
            mean: v,
            hdi_lower: v,
            hdi_upper: v,
        };
        let fit = ReplicateEstimates {
            delta: vec![exact(4.0), exact(6.0)],
            theta: vec![exact(0.5), exact(0.5)],
            impact: vec![exact(1.0), exact(0.0)],
            beta: vec![exact(1.0), exact(-1.0)],
        };
        let table = evaluate_metrics(&[fit], &[truth]).unwrap();
        for (_, row) in &table.targets {
            assert_eq!(row.bias, 0.0);
            assert_eq!(row.mse, 0.0);
            assert_eq!(row.coverage, 1.0);
            assert_eq!(row.hdi_length, 0.0);
        }
    }

    #[test]
    fn metrics_two_replicate_hand_instance() {
        let truth = |delta: f64| TruthRecord {
            setting: 2,
            beta: vec![0.0],
            gamma: vec![0.0],
            eta: vec![0.0],
            rho: 1.0,
            phi: vec![0.0],
            delta: vec![delta],
            theta: vec![0.0],
            exposure: vec![0.0],
            impact: vec![0.0],
            location_ids: vec![0],
        };
        let fit = |mean: f64, lo: f64, hi: f64| ReplicateEstimates {
            delta: vec![TargetEstimate {
                mean,
                hdi_lower: lo,
                hdi_upper: hi,
            }],
            theta: vec![TargetEstimate {
                mean: 0.0,
                hdi_lower: 0.0,
                hdi_upper: 0.0,
            }],
            impact: vec![TargetEstimate {
                mean: 0.0,
                hdi_lower: 0.0,
                hdi_upper: 0.0,
            }],
            beta: vec![TargetEstimate {
                mean: 0.0,
                hdi_lower: 0.0,
                hdi_upper: 0.0,
            }],
        };
        // Errors +1 and -3; first interval covers, second does not.
        let table = evaluate_metrics(
            &[fit(5.0, 3.0, 6.0), fit(1.0, 0.0, 2.0)],
            &[truth(4.0), truth(4.0)],
        )
        .unwrap();
        let row = table.row("delta").unwrap();
        assert!((row.bias - (1.0 - 3.0) / 2.0).abs() < 1e-12);
        assert!((row.mse - (1.0 + 9.0) / 2.0).abs() < 1e-12);
        assert!((row.coverage - 0.5).abs() < 1e-12);
        assert!((row.hdi_length - 2.5).abs() < 1e-12);
        // Bias SE: sd of {1, -3} / sqrt(2) = (4 / sqrt(2)) / sqrt(2) = 2.
        assert!((row.bias_se - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interval_never_containing_truth_scores_zero_coverage() {
        let truth = TruthRecord {
            setting: 1,
            beta: vec![0.0],
            gamma: vec![0.0],
            eta: vec![],
            rho: 1.0,
            phi: vec![0.0],
            delta: vec![5.0],
            theta: vec![0.0],
            exposure: vec![0.0],
            impact: vec![0.0],
            location_ids: vec![0],
        };
        let fit = ReplicateEstimates {
            delta: vec![],
            theta: vec![],
            impact: vec![TargetEstimate {
                mean: 2.0,
                hdi_lower: 1.0,
                hdi_upper: 3.0,
            }],
            beta: vec![TargetEstimate {
                mean: 0.0,
                hdi_lower: -0.5,
                hdi_upper: 0.5,
            }],
        };
        // Setting 1 omits the radius and effect rows entirely.
        let truths = vec![truth];
        let mut fit1 = fit.clone();
        fit1.delta = vec![];
        let table = evaluate_metrics(&[fit1], &truths).unwrap();
        assert!(table.row("delta").is_none());
        assert!(table.row("theta").is_none());
        assert_eq!(table.row("impact").unwrap().coverage, 0.0);
        assert_eq!(table.row("beta").unwrap().coverage, 1.0);
    }

    #[test]
    fn tally_all_equal_splits_evenly() {
        let t = waic_tally(&[[5.0, 5.0, 5.0], [5.0, 5.0, 5.0]]);
        for v in t {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tally_single_winner() {
        let t = waic_tally(&[[3.0, 1.0, 2.0]]);
        assert_eq!(t, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn tally_three_row_hand_instance() {
        let t = waic_tally(&[[1.0, 2.0, 3.0], [2.0, 1.0, 1.0], [9.0, 8.0, 7.0]]);
        assert!((t[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((t[1] - 0.5 / 3.0).abs() < 1e-12);
        assert!((t[2] - 1.5 / 3.0).abs() < 1e-12);
    }
}
