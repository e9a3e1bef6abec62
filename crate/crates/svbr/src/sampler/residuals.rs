//! Augmented working responses shared by all conditional updates.
//!
//! All three likelihoods reduce to the same weighted Gaussian form in the
//! linear predictor: a diagonal weight matrix and a working response. For
//! the logit models the weights are the latent Polya-Gamma draws; for the
//! Gaussian model they are the noise precision.

use crate::data::{Dataset, Likelihood};
use nalgebra::DVector;
use statrs::function::gamma::ln_gamma;

/// Diagonal weights and working response, one entry per outcome row.
#[derive(Debug, Clone)]
pub struct AugmentedResiduals {
    pub omega_diag: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl AugmentedResiduals {
    pub fn gaussian(outcomes: &[f64], sigma2: f64) -> Self {
        let n = outcomes.len();
        AugmentedResiduals {
            omega_diag: DVector::from_element(n, 1.0 / sigma2),
            lambda: DVector::from_column_slice(outcomes),
        }
    }

    /// Binomial working response `(y - trials/2) / omega`; for Bernoulli
    /// rows (one trial) this is the familiar `(y - 0.5) / omega`.
    pub fn binomial(outcomes: &[f64], trials: &[u64], omega: &DVector<f64>) -> Self {
        let n = outcomes.len();
        let lambda = DVector::from_fn(n, |i, _| {
            (outcomes[i] - trials[i] as f64 / 2.0) / omega[i]
        });
        AugmentedResiduals {
            omega_diag: omega.clone(),
            lambda,
        }
    }

    pub fn negbinomial(outcomes: &[f64], r: u32, omega: &DVector<f64>) -> Self {
        let n = outcomes.len();
        let lambda =
            DVector::from_fn(n, |i, _| 0.5 * (outcomes[i] - r as f64) / omega[i]);
        AugmentedResiduals {
            omega_diag: omega.clone(),
            lambda,
        }
    }
}

/// Linear predictor on the link scale: offset + covariate part + exposure
/// impact, one entry per row.
pub fn linear_predictor(
    dataset: &Dataset,
    beta: &DVector<f64>,
    impact_rows: &DVector<f64>,
) -> DVector<f64> {
    let mut psi = &dataset.covariates * beta;
    for i in 0..psi.len() {
        psi[i] += dataset.offsets[i] + impact_rows[i];
    }
    psi
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pointwise log-likelihood of every outcome row at the given linear
/// predictor; feeds the WAIC computation.
pub fn pointwise_loglik(
    likelihood: Likelihood,
    dataset: &Dataset,
    psi: &DVector<f64>,
    sigma2: f64,
    r: u32,
) -> Vec<f64> {
    let n = dataset.n_obs();
    let mut out = Vec::with_capacity(n);
    match likelihood {
        Likelihood::Gaussian => {
            let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
            for i in 0..n {
                let resid = dataset.outcomes[i] - psi[i];
                out.push(log_norm - resid * resid / (2.0 * sigma2));
            }
        }
        Likelihood::Binomial => {
            let trials = dataset.trials.as_ref().expect("validated binomial data");
            for i in 0..n {
                let y = dataset.outcomes[i];
                let t = trials[i] as f64;
                let choose = ln_gamma(t + 1.0) - ln_gamma(y + 1.0) - ln_gamma(t - y + 1.0);
                out.push(choose + y * psi[i] - t * softplus(psi[i]));
            }
        }
        Likelihood::NegBinomial => {
            let rf = r as f64;
            let lg_r = ln_gamma(rf);
            for i in 0..n {
                let y = dataset.outcomes[i];
                let coef = ln_gamma(y + rf) - lg_r - ln_gamma(y + 1.0);
                out.push(coef + y * psi[i] - (y + rf) * softplus(psi[i]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_working_response_reduces_to_half_shift() {
        let omega = DVector::from_vec(vec![0.3, 0.8]);
        let r = AugmentedResiduals::binomial(&[1.0, 0.0], &[1, 1], &omega);
        assert!((r.lambda[0] - 0.5 / 0.3).abs() < 1e-15);
        assert!((r.lambda[1] - (-0.5) / 0.8).abs() < 1e-15);
        assert_eq!(r.omega_diag, omega);
    }

    #[test]
    fn negbinomial_working_response() {
        let omega = DVector::from_vec(vec![0.5]);
        let r = AugmentedResiduals::negbinomial(&[7.0], 3, &omega);
        assert!((r.lambda[0] - 0.5 * 4.0 / 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_weights_are_precision() {
        let r = AugmentedResiduals::gaussian(&[1.0, 2.0], 4.0);
        assert_eq!(r.omega_diag[0], 0.25);
        assert_eq!(r.lambda[1], 2.0);
    }

    #[test]
    fn softplus_stable_at_extremes() {
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-700.0) > 0.0);
        assert!(softplus(-700.0) < 1e-300);
        assert_eq!(softplus(-800.0), 0.0);
    }

    #[test]
    fn bernoulli_loglik_matches_direct_formula() {
        let psi = 0.7f64;
        let p = 1.0 / (1.0 + (-psi).exp());
        // Single-location dataset with one success and one failure.
        let raw = crate::data::RawDataset {
            outcomes: vec![1.0, 0.0],
            trials: Some(vec![1, 1]),
            offsets: vec![0.0, 0.0],
            covariates: nalgebra::dmatrix![1.0; 1.0],
            location_of: vec![0, 0],
            coords: nalgebra::dmatrix![0.0, 0.0],
            loc_predictors: nalgebra::dmatrix![1.0],
            distances: nalgebra::dmatrix![1.0],
            location_ids: vec![0],
        };
        let spec = crate::data::ModelSpec {
            likelihood: Likelihood::Binomial,
            exposure_kind: crate::data::ExposureKind::Count,
            variant: crate::data::Variant::SingleBr,
            poly_degree: 0,
            radius_bounds: (0.0, 5.0),
            knots: Default::default(),
            priors: Default::default(),
        };
        let ds = crate::data::validate_dataset(raw, &spec).unwrap();
        let ll = pointwise_loglik(
            Likelihood::Binomial,
            &ds,
            &DVector::from_vec(vec![psi, psi]),
            1.0,
            1,
        );
        assert!((ll[0] - p.ln()).abs() < 1e-12);
        assert!((ll[1] - (1.0 - p).ln()).abs() < 1e-12);
    }
}
