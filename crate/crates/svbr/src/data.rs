//! Domain types and input validation.
//!
//! A [`Dataset`] holds outcome rows grouped by location together with the
//! location-to-source distance matrix. Validation precomputes the scaled
//! Euclidean location-pair distances used by the spatial correlation (max
//! pairwise distance scaled to exactly 1) and the per-location sorted
//! distance rows used for fast radius queries. After validation everything
//! is immutable and safe to share across threads.
//!
//! Exposure distances (`distances`, e.g. road-network km) and the spatial
//! correlation distances (scaled Euclidean on `coords`) are distinct
//! quantities and are never conflated.

use crate::error::{Result, SvbrError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Outcome likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Identity link, unknown noise variance unless fixed in the priors.
    Gaussian,
    /// Logit link with per-row trial counts (Bernoulli when trials = 1).
    Binomial,
    /// Logit link with discrete-uniform dispersion r.
    NegBinomial,
}

/// How sources inside the buffer are aggregated into an exposure value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    /// Number of sources within the radius, boundary inclusive.
    Count,
    /// Distance-weighted sum with spherical taper, zero at the boundary.
    Spherical,
}

/// Model variant controlling which radius parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Variant {
    /// Radius pinned to a known value; no radius parameters are sampled.
    FixedBr { delta: f64 },
    /// One unknown radius shared by all locations (intercept-only link,
    /// no spatial effects).
    SingleBr,
    /// Location-specific radii with covariates and spatial random effects.
    Svbr,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::FixedBr { .. } => "fixed",
            Variant::SingleBr => "single",
            Variant::Svbr => "svbr",
        }
    }
}

/// Knot placement for the low-rank spatial approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnotSpec {
    /// "all" puts one knot at every observed location (exact spatial
    /// model); "auto" does the same up to 150 locations and switches to a
    /// 100-knot maximin subset beyond that.
    Named(String),
    /// Subset size; locations are chosen by a deterministic maximin rule.
    Count(usize),
    /// Explicit knot coordinates.
    Coords(Vec<[f64; 2]>),
}

impl Default for KnotSpec {
    fn default() -> Self {
        KnotSpec::Named("auto".to_string())
    }
}

/// Prior hyperparameters. Defaults follow the weakly informative choices
/// used throughout: N(0, 100^2) regression coefficients, N(0, 1) radius
/// coefficients, Gamma(1, 1) correlation decay, InvGamma(0.01, 0.01) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub sigma2_beta: f64,
    pub sigma2_eta: f64,
    pub sigma2_gamma: f64,
    pub rho_shape: f64,
    pub rho_rate: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub r_range: (u32, u32),
    /// When set, the Gaussian noise variance is held fixed instead of being
    /// given an inverse-gamma prior (known measurement error).
    pub fixed_sigma2: Option<f64>,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            sigma2_beta: 100.0 * 100.0,
            sigma2_eta: 100.0 * 100.0,
            sigma2_gamma: 1.0,
            rho_shape: 1.0,
            rho_rate: 1.0,
            sigma2_shape: 0.01,
            sigma2_rate: 0.01,
            r_range: (1, 100),
            fixed_sigma2: None,
        }
    }
}

/// Full model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    pub exposure_kind: ExposureKind,
    pub variant: Variant,
    /// Degree of the exposure-effect polynomial in the normalized radius.
    pub poly_degree: usize,
    /// Radius support (a, b) in the same units as `Dataset::distances`.
    pub radius_bounds: (f64, f64),
    #[serde(default)]
    pub knots: KnotSpec,
    #[serde(default)]
    pub priors: Priors,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.radius_bounds;
        if !(a.is_finite() && b.is_finite()) || a < 0.0 || b <= a {
            return Err(SvbrError::validation(format!(
                "radius bounds must satisfy 0 <= a < b, got ({a}, {b})"
            )));
        }
        if let Variant::FixedBr { delta } = self.variant {
            if !(a..=b).contains(&delta) {
                return Err(SvbrError::validation(format!(
                    "fixed radius {delta} outside bounds ({a}, {b})"
                )));
            }
        }
        if self.priors.r_range.0 < 1 || self.priors.r_range.1 < self.priors.r_range.0 {
            return Err(SvbrError::validation(
                "dispersion range must satisfy 1 <= a_r <= b_r",
            ));
        }
        if let KnotSpec::Named(name) = &self.knots {
            if name != "all" && name != "auto" {
                return Err(SvbrError::validation(format!(
                    "unknown knot spec '{name}' (expected \"all\", \"auto\", a count, or coordinates)"
                )));
            }
        }
        if let Some(s2) = self.priors.fixed_sigma2 {
            if !(s2 > 0.0) {
                return Err(SvbrError::validation("fixed sigma2 must be positive"));
            }
        }
        Ok(())
    }
}

/// Raw inputs before validation.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub outcomes: Vec<f64>,
    pub trials: Option<Vec<u64>>,
    pub offsets: Vec<f64>,
    /// n* x p_x, first column all ones.
    pub covariates: DMatrix<f64>,
    /// Maps each outcome row to 0..m.
    pub location_of: Vec<usize>,
    /// m x 2 planar coordinates, taken as-is (any projection is upstream).
    pub coords: DMatrix<f64>,
    /// m x p_w location-level predictors, first column all ones.
    pub loc_predictors: DMatrix<f64>,
    /// m x h distances to exposure sources, complete and nonnegative.
    pub distances: DMatrix<f64>,
    /// Original location identifiers for reporting, length m.
    pub location_ids: Vec<u64>,
}

/// Validated dataset with precomputed layouts.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub outcomes: Vec<f64>,
    pub trials: Option<Vec<u64>>,
    pub offsets: Vec<f64>,
    pub covariates: DMatrix<f64>,
    pub location_of: Vec<usize>,
    pub coords: DMatrix<f64>,
    pub loc_predictors: DMatrix<f64>,
    pub distances: DMatrix<f64>,
    pub location_ids: Vec<u64>,
    /// m x m Euclidean coordinate distances scaled so the max entry is 1.
    pub scaled_coord_dists: DMatrix<f64>,
    /// Scale divisor applied to coordinate distances.
    pub coord_scale: f64,
    /// Row indices grouped by location.
    pub rows_at: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn n_obs(&self) -> usize {
        self.outcomes.len()
    }

    pub fn n_locations(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.distances.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_loc_predictors(&self) -> usize {
        self.loc_predictors.ncols()
    }
}

/// Euclidean distance matrix of planar coordinates (rows of `coords`).
pub fn coord_distances(coords: &DMatrix<f64>) -> DMatrix<f64> {
    let m = coords.nrows();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            let dist = (dx * dx + dy * dy).sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Validate raw inputs against a model spec.
pub fn validate_dataset(raw: RawDataset, spec: &ModelSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = raw.outcomes.len();
    let m = raw.coords.nrows();
    if n == 0 {
        return Err(SvbrError::validation("no outcome rows"));
    }
    if m == 0 {
        return Err(SvbrError::validation("no locations"));
    }
    if raw.coords.ncols() != 2 {
        return Err(SvbrError::validation("coords must have two columns"));
    }
    if raw.location_of.len() != n
        || raw.offsets.len() != n
        || raw.covariates.nrows() != n
        || raw.location_ids.len() != m
        || raw.loc_predictors.nrows() != m
        || raw.distances.nrows() != m
    {
        return Err(SvbrError::validation("input dimensions do not agree"));
    }

    for (i, &y) in raw.outcomes.iter().enumerate() {
        if !y.is_finite() {
            return Err(SvbrError::validation(format!(
                "non-finite outcome at row {i}"
            )));
        }
    }
    for (i, &o) in raw.offsets.iter().enumerate() {
        if !o.is_finite() {
            return Err(SvbrError::validation(format!(
                "non-finite offset at row {i}"
            )));
        }
    }
    if raw.covariates.iter().any(|v| !v.is_finite()) {
        return Err(SvbrError::validation("non-finite covariate value"));
    }
    if raw.loc_predictors.iter().any(|v| !v.is_finite()) {
        return Err(SvbrError::validation("non-finite location predictor"));
    }
    if raw.coords.iter().any(|v| !v.is_finite()) {
        return Err(SvbrError::validation("non-finite coordinate"));
    }
    if raw.distances.iter().any(|v| !v.is_finite()) {
        return Err(SvbrError::validation("incomplete distance matrix"));
    }
    if raw.distances.iter().any(|&v| v < 0.0) {
        return Err(SvbrError::validation("negative source distance"));
    }

    for i in 0..n {
        if raw.covariates[(i, 0)] != 1.0 {
            return Err(SvbrError::validation(
                "covariate matrix must carry an all-ones first column",
            ));
        }
    }
    for j in 0..m {
        if raw.loc_predictors[(j, 0)] != 1.0 {
            return Err(SvbrError::validation(
                "location predictors must carry an all-ones first column",
            ));
        }
    }

    let mut rows_at = vec![Vec::new(); m];
    for (i, &j) in raw.location_of.iter().enumerate() {
        if j >= m {
            return Err(SvbrError::validation(format!(
                "row {i} references location index {j} out of 0..{m}"
            )));
        }
        rows_at[j].push(i);
    }
    if let Some(empty) = rows_at.iter().position(|r| r.is_empty()) {
        return Err(SvbrError::validation(format!(
            "location {empty} has no outcome rows"
        )));
    }

    match spec.likelihood {
        Likelihood::Binomial => {
            let trials = raw
                .trials
                .as_ref()
                .ok_or_else(|| SvbrError::validation("binomial likelihood requires trials"))?;
            if trials.len() != n {
                return Err(SvbrError::validation("trials length mismatch"));
            }
            for (i, (&t, &y)) in trials.iter().zip(&raw.outcomes).enumerate() {
                if t == 0 {
                    return Err(SvbrError::validation(format!(
                        "row {i}: trials must be positive"
                    )));
                }
                if y < 0.0 || y.fract() != 0.0 || y > t as f64 {
                    return Err(SvbrError::validation(format!(
                        "row {i}: outcome {y} not an integer in 0..={t}"
                    )));
                }
            }
        }
        Likelihood::NegBinomial => {
            if raw.trials.is_some() {
                return Err(SvbrError::validation(
                    "trials only apply to the binomial likelihood",
                ));
            }
            for (i, &y) in raw.outcomes.iter().enumerate() {
                if y < 0.0 || y.fract() != 0.0 {
                    return Err(SvbrError::validation(format!(
                        "row {i}: negative binomial outcome {y} must be a nonnegative integer"
                    )));
                }
            }
        }
        Likelihood::Gaussian => {
            if raw.trials.is_some() {
                return Err(SvbrError::validation(
                    "trials only apply to the binomial likelihood",
                ));
            }
        }
    }

    let raw_dists = coord_distances(&raw.coords);
    let coord_scale = raw_dists.iter().cloned().fold(0.0f64, f64::max);
    let scaled_coord_dists = if coord_scale > 0.0 {
        raw_dists.map(|d| d / coord_scale)
    } else {
        raw_dists
    };

    Ok(Dataset {
        outcomes: raw.outcomes,
        trials: raw.trials,
        offsets: raw.offsets,
        covariates: raw.covariates,
        location_of: raw.location_of,
        coords: raw.coords,
        loc_predictors: raw.loc_predictors,
        distances: raw.distances,
        location_ids: raw.location_ids,
        scaled_coord_dists,
        coord_scale: if coord_scale > 0.0 { coord_scale } else { 1.0 },
        rows_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    pub(crate) fn small_spec(likelihood: Likelihood) -> ModelSpec {
        ModelSpec {
            likelihood,
            exposure_kind: ExposureKind::Count,
            variant: Variant::SingleBr,
            poly_degree: 0,
            radius_bounds: (0.0, 10.0),
            knots: KnotSpec::default(),
            priors: Priors::default(),
        }
    }

    fn small_raw() -> RawDataset {
        RawDataset {
            outcomes: vec![0.3, -0.1, 1.2],
            trials: None,
            offsets: vec![0.0; 3],
            covariates: dmatrix![1.0, 0.5; 1.0, -0.2; 1.0, 0.9],
            location_of: vec![0, 0, 1],
            coords: dmatrix![0.0, 0.0; 3.0, 4.0],
            loc_predictors: dmatrix![1.0; 1.0],
            distances: dmatrix![1.0, 2.5; 0.5, 7.0],
            location_ids: vec![10, 11],
        }
    }

    #[test]
    fn accepts_complete_inputs_and_scales_coords() {
        let ds = validate_dataset(small_raw(), &small_spec(Likelihood::Gaussian)).unwrap();
        assert_eq!(ds.n_obs(), 3);
        assert_eq!(ds.n_locations(), 2);
        let max = ds.scaled_coord_dists.iter().cloned().fold(0.0f64, f64::max);
        assert_eq!(max, 1.0);
        assert_eq!(ds.coord_scale, 5.0);
        assert_eq!(ds.scaled_coord_dists[(0, 0)], 0.0);
    }

    #[test]
    fn rejects_nan_distance() {
        let mut raw = small_raw();
        raw.distances[(0, 1)] = f64::NAN;
        let err = validate_dataset(raw, &small_spec(Likelihood::Gaussian)).unwrap_err();
        assert!(err.to_string().contains("incomplete distance matrix"));
    }

    #[test]
    fn rejects_binomial_outcome_above_trials() {
        let mut raw = small_raw();
        raw.outcomes = vec![2.0, 0.0, 1.0];
        raw.trials = Some(vec![1, 1, 1]);
        let err = validate_dataset(raw, &small_spec(Likelihood::Binomial)).unwrap_err();
        assert!(err.to_string().contains("not an integer in 0..=1"));
    }

    #[test]
    fn rejects_empty_location() {
        let mut raw = small_raw();
        raw.location_of = vec![0, 0, 0];
        let err = validate_dataset(raw, &small_spec(Likelihood::Gaussian)).unwrap_err();
        assert!(err.to_string().contains("no outcome rows"));
    }

    #[test]
    fn rejects_missing_intercept_column() {
        let mut raw = small_raw();
        raw.covariates[(1, 0)] = 0.0;
        assert!(validate_dataset(raw, &small_spec(Likelihood::Gaussian)).is_err());
    }

    #[test]
    fn fixed_radius_must_lie_in_bounds() {
        let mut spec = small_spec(Likelihood::Gaussian);
        spec.variant = Variant::FixedBr { delta: 11.0 };
        assert!(spec.validate().is_err());
        spec.variant = Variant::FixedBr { delta: 5.0 };
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn scaled_matrix_is_symmetric_zero_diagonal() {
        let ds = validate_dataset(small_raw(), &small_spec(Likelihood::Gaussian)).unwrap();
        let d = &ds.scaled_coord_dists;
        for i in 0..2 {
            assert_eq!(d[(i, i)], 0.0);
            for j in 0..2 {
                assert_eq!(d[(i, j)], d[(j, i)]);
            }
        }
    }
}
