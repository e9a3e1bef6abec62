//! The MCMC kernel: full-conditional sweep, adaptive proposal tuning during
//! burn-in, and the chain driver.
//!
//! Sweep order is fixed: likelihood-specific draws (noise variance or latent
//! weights and dispersion), then the covariate and exposure-effect blocks,
//! then one scalar Metropolis pass over the radius coefficients, the knot
//! effects, and the correlation decay. Variants prune the sweep: the
//! fixed-radius model skips all radius parameters, the single-radius model
//! keeps only the intercept coefficient with no spatial effects.

mod config;
mod residuals;
mod updates;

pub use config::{AdaptiveScale, McmcConfig, ProposalSds};
pub use residuals::{linear_predictor, pointwise_loglik, softplus, AugmentedResiduals};
pub use updates::{
    beta_update, eta_update, metropolis_accept, sample_omega_binomial, sample_r_and_omega,
    sample_sigma2, sigma2_posterior_params, update_gamma_k, update_phi_k, update_rho,
    ConjugateUpdate, LocQuadStats, MetropolisRecord, RadiusChain,
};

use crate::data::{Dataset, KnotSpec, Likelihood, ModelSpec, Variant};
use crate::error::{Result, SvbrError};
use crate::exposure::{exposure_design_from_parts, ExposureIndex};
use crate::samples::{PosteriorSamples, SamplesMeta};
use crate::spatial::{maximin_knots, CorrelationCache, SpatialLayout};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Knot count used when the spec leaves placement automatic and the problem
/// is large; below the threshold every location is a knot.
const AUTO_KNOT_THRESHOLD: usize = 150;
const AUTO_KNOT_COUNT: usize = 100;

/// Immutable per-fit context: dataset views, exposure index, effective
/// location design, and the spatial layout for the low-rank projection.
pub struct FitContext<'a> {
    pub dataset: &'a Dataset,
    pub spec: &'a ModelSpec,
    pub index: ExposureIndex,
    /// Location-level design for the radius coefficients: the dataset's
    /// predictors for the spatially-varying model, a lone intercept column
    /// for the single-radius model, empty for the fixed-radius model.
    pub loc_design: DMatrix<f64>,
    pub layout: Option<SpatialLayout>,
    pub bounds: (f64, f64),
}

impl<'a> FitContext<'a> {
    pub fn new(dataset: &'a Dataset, spec: &'a ModelSpec) -> Result<Self> {
        spec.validate()?;
        let m = dataset.n_locations();
        let index = ExposureIndex::from_dataset(dataset);
        let (loc_design, layout) = match spec.variant {
            Variant::FixedBr { .. } => (DMatrix::zeros(m, 0), None),
            Variant::SingleBr => (DMatrix::from_element(m, 1, 1.0), None),
            Variant::Svbr => {
                let layout = resolve_knots(dataset, &spec.knots)?;
                (dataset.loc_predictors.clone(), Some(layout))
            }
        };
        Ok(FitContext {
            dataset,
            spec,
            index,
            loc_design,
            layout,
            bounds: spec.radius_bounds,
        })
    }

    pub fn n_gamma(&self) -> usize {
        self.loc_design.ncols()
    }

    pub fn n_knots(&self) -> usize {
        self.layout.as_ref().map_or(0, SpatialLayout::n_knots)
    }
}

fn resolve_knots(dataset: &Dataset, knots: &KnotSpec) -> Result<SpatialLayout> {
    let coords = &dataset.scaled_coord_dists;
    let m = dataset.n_locations();
    match knots {
        KnotSpec::Named(name) if name == "all" => Ok(SpatialLayout::all_locations(coords)),
        KnotSpec::Named(name) if name == "auto" => {
            if m <= AUTO_KNOT_THRESHOLD {
                Ok(SpatialLayout::all_locations(coords))
            } else {
                let subset = maximin_knots(coords, AUTO_KNOT_COUNT);
                Ok(SpatialLayout::from_location_subset(coords, &subset))
            }
        }
        KnotSpec::Named(other) => Err(SvbrError::config(format!(
            "unknown knot spec '{other}'"
        ))),
        KnotSpec::Count(k) => {
            if *k == 0 {
                return Err(SvbrError::config("knot count must be positive"));
            }
            let subset = maximin_knots(coords, *k);
            Ok(SpatialLayout::from_location_subset(coords, &subset))
        }
        KnotSpec::Coords(list) => {
            if list.is_empty() {
                return Err(SvbrError::config("empty knot coordinate list"));
            }
            let k = list.len();
            let scale = dataset.coord_scale;
            let knot_dists = DMatrix::from_fn(k, k, |a, b| {
                let dx = list[a][0] - list[b][0];
                let dy = list[a][1] - list[b][1];
                (dx * dx + dy * dy).sqrt() / scale
            });
            let loc_knot_dists = DMatrix::from_fn(m, k, |j, b| {
                let dx = dataset.coords[(j, 0)] - list[b][0];
                let dy = dataset.coords[(j, 1)] - list[b][1];
                (dx * dx + dy * dy).sqrt() / scale
            });
            Ok(SpatialLayout {
                knot_dists,
                loc_knot_dists,
                knot_locations: Vec::new(),
            })
        }
    }
}

/// All sampled parameters plus the derived per-location caches. The cached
/// radius chain always equals a recomputation from the current parameters.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub eta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub phi_star: DVector<f64>,
    pub rho: f64,
    pub sigma2: f64,
    pub r: u32,
    pub omega: DVector<f64>,
    /// W * gamma per location (excludes the spatial effect).
    pub loc_covariate_part: Vec<f64>,
    pub radius: RadiusChain,
    /// Cached knot-level prior quadratic form.
    pub gp_quad: f64,
}

impl ChainState {
    /// Deterministic start: zero coefficients and effects put every radius
    /// at the interval midpoint; decay starts at 1; noise at the sample
    /// variance; dispersion at the midpoint of its range.
    pub fn init(ctx: &FitContext, cache: Option<&CorrelationCache>) -> ChainState {
        let dataset = ctx.dataset;
        let m = dataset.n_locations();
        let n = dataset.n_obs();
        let p = ctx.spec.poly_degree;
        let sigma2 = match ctx.spec.priors.fixed_sigma2 {
            Some(s2) => s2,
            None => {
                let mean = dataset.outcomes.iter().sum::<f64>() / n as f64;
                let var = dataset
                    .outcomes
                    .iter()
                    .map(|y| (y - mean) * (y - mean))
                    .sum::<f64>()
                    / (n as f64 - 1.0).max(1.0);
                if var > 0.0 {
                    var
                } else {
                    1.0
                }
            }
        };
        let (r_lo, r_hi) = ctx.spec.priors.r_range;
        let mut state = ChainState {
            beta: DVector::zeros(dataset.n_covariates()),
            eta: DVector::zeros(p + 1),
            gamma: DVector::zeros(ctx.n_gamma()),
            phi_star: DVector::zeros(ctx.n_knots()),
            rho: 1.0,
            sigma2,
            r: (r_lo + r_hi) / 2,
            omega: DVector::from_element(n, 1.0),
            loc_covariate_part: vec![0.0; m],
            radius: RadiusChain::zeros(m),
            gp_quad: 0.0,
        };
        state.rebuild_radius_chain(ctx, cache);
        state
    }

    /// Recompute the per-location chain from the current parameters.
    pub fn rebuild_radius_chain(&mut self, ctx: &FitContext, cache: Option<&CorrelationCache>) {
        let kind = ctx.spec.exposure_kind;
        match ctx.spec.variant {
            Variant::FixedBr { delta } => {
                self.radius
                    .fill_fixed(delta, &ctx.index, kind, ctx.bounds, &self.eta);
            }
            Variant::SingleBr | Variant::Svbr => {
                let cov_part = &ctx.loc_design * &self.gamma;
                self.loc_covariate_part
                    .copy_from_slice(cov_part.as_slice());
                if let Some(cache) = cache {
                    let projected = crate::spatial::predictive_projection(cache, &self.phi_star);
                    for j in 0..self.radius.linear.len() {
                        self.radius.linear[j] = self.loc_covariate_part[j] + projected[j];
                    }
                    self.gp_quad = cache.quad_form(&self.phi_star);
                } else {
                    self.radius
                        .linear
                        .copy_from_slice(&self.loc_covariate_part);
                }
                self.radius
                    .fill_from_linear(&ctx.index, kind, ctx.bounds, &self.eta);
            }
        }
    }

    /// Per-row exposure impact expanded to outcome rows.
    pub fn impact_rows(&self, dataset: &Dataset) -> DVector<f64> {
        DVector::from_iterator(
            dataset.n_obs(),
            dataset
                .location_of
                .iter()
                .map(|&j| self.radius.impact[j]),
        )
    }
}

/// Acceptance bookkeeping reported alongside the draws.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize, PartialEq)]
pub struct AcceptanceReport {
    pub gamma_rates: Vec<f64>,
    pub gamma_final_sds: Vec<f64>,
    pub phi_mean_rate: f64,
    pub phi_mean_final_sd: f64,
    pub rho_rate: f64,
    pub rho_final_sd: f64,
}

struct BlockCounter {
    accepted: u64,
    attempted: u64,
}

impl BlockCounter {
    fn new() -> Self {
        BlockCounter {
            accepted: 0,
            attempted: 0,
        }
    }

    fn rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

/// Run one chain on the given RNG substream. Identical inputs produce
/// bit-identical output regardless of scheduling.
pub fn run_chain(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &McmcConfig,
    stream: u64,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let ctx = FitContext::new(dataset, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    run_chain_with_rng(&ctx, config, stream, &mut rng)
}

/// Run `config.chains` chains on consecutive substreams.
pub fn run_chains(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &McmcConfig,
) -> Result<Vec<PosteriorSamples>> {
    (0..config.chains as u64)
        .into_par_iter()
        .map(|stream| run_chain(dataset, spec, config, stream))
        .collect()
}

fn run_chain_with_rng(
    ctx: &FitContext,
    config: &McmcConfig,
    stream: u64,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorSamples> {
    let dataset = ctx.dataset;
    let spec = ctx.spec;
    let m = dataset.n_locations();
    let n = dataset.n_obs();
    let n_gamma = ctx.n_gamma();
    let n_knots = ctx.n_knots();
    let is_svbr = matches!(spec.variant, Variant::Svbr);
    let update_radius = !matches!(spec.variant, Variant::FixedBr { .. });

    let mut cache = match &ctx.layout {
        Some(layout) => Some(CorrelationCache::build(layout, 1.0)?),
        None => None,
    };
    let mut state = ChainState::init(ctx, cache.as_ref());
    let mut scratch = RadiusChain::zeros(m);

    let mut gamma_scales: Vec<AdaptiveScale> = (0..n_gamma)
        .map(|_| AdaptiveScale::new(config.proposal_sd.gamma))
        .collect();
    let mut phi_scales: Vec<AdaptiveScale> = (0..n_knots)
        .map(|_| AdaptiveScale::new(config.proposal_sd.phi))
        .collect();
    let mut rho_scale = AdaptiveScale::new(config.proposal_sd.rho);

    let mut gamma_counts: Vec<BlockCounter> = (0..n_gamma).map(|_| BlockCounter::new()).collect();
    let mut phi_counts: Vec<BlockCounter> = (0..n_knots).map(|_| BlockCounter::new()).collect();
    let mut rho_count = BlockCounter::new();

    let n_stored = config.n_stored();
    let mut samples = PosteriorSamples::with_capacity(
        SamplesMeta {
            variant: spec.variant.label().to_string(),
            fixed_delta: match spec.variant {
                Variant::FixedBr { delta } => Some(delta),
                _ => None,
            },
            likelihood: spec.likelihood,
            exposure_kind: spec.exposure_kind,
            poly_degree: spec.poly_degree,
            radius_bounds: spec.radius_bounds,
            n_obs: n,
            n_locations: m,
            n_covariates: dataset.n_covariates(),
            n_gamma,
            n_knots,
            iterations: config.iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            seed: config.seed,
            stream,
            location_ids: dataset.location_ids.clone(),
            acceptance: AcceptanceReport::default(),
        },
        n_stored,
    );

    let priors = &spec.priors;
    for iteration in 1..=config.iterations {
        // Likelihood-specific layer.
        match spec.likelihood {
            Likelihood::Gaussian => {
                if priors.fixed_sigma2.is_none() {
                    let psi =
                        linear_predictor(dataset, &state.beta, &state.impact_rows(dataset));
                    state.sigma2 = sample_sigma2(
                        dataset,
                        &psi,
                        priors.sigma2_shape,
                        priors.sigma2_rate,
                        rng,
                    );
                }
            }
            Likelihood::Binomial => {
                let psi = linear_predictor(dataset, &state.beta, &state.impact_rows(dataset));
                state.omega = sample_omega_binomial(dataset, &psi, rng);
            }
            Likelihood::NegBinomial => {
                let psi = linear_predictor(dataset, &state.beta, &state.impact_rows(dataset));
                let (r, omega) = sample_r_and_omega(dataset, &psi, priors.r_range, rng)?;
                state.r = r;
                state.omega = omega;
            }
        }
        let resid = match spec.likelihood {
            Likelihood::Gaussian => AugmentedResiduals::gaussian(&dataset.outcomes, state.sigma2),
            Likelihood::Binomial => AugmentedResiduals::binomial(
                &dataset.outcomes,
                dataset.trials.as_ref().expect("validated"),
                &state.omega,
            ),
            Likelihood::NegBinomial => {
                AugmentedResiduals::negbinomial(&dataset.outcomes, state.r, &state.omega)
            }
        };

        // Conjugate coefficient blocks.
        let beta_cond = beta_update(
            dataset,
            &resid,
            &state.impact_rows(dataset),
            priors.sigma2_beta,
        )?;
        state.beta = beta_cond.sample(rng);

        let design = exposure_design_from_parts(
            &dataset.location_of,
            &state.radius.exposure,
            &state.radius.delta_tilde,
            spec.poly_degree,
        );
        let eta_cond = eta_update(dataset, &resid, &design, &state.beta, priors.sigma2_eta)?;
        state.eta = eta_cond.sample(rng);
        state.radius.refresh_effect(&state.eta);

        // Metropolis layer over the radius parameters.
        if update_radius {
            let stats = LocQuadStats::compute(dataset, &resid, &state.beta);
            let mut data_term = stats.data_term(&state.radius.impact);

            for k in 0..n_gamma {
                let record = update_gamma_k(
                    &mut state,
                    &ctx.loc_design,
                    &ctx.index,
                    spec.exposure_kind,
                    ctx.bounds,
                    priors.sigma2_gamma,
                    &stats,
                    &mut data_term,
                    k,
                    gamma_scales[k].sd(),
                    &mut scratch,
                    rng,
                );
                if iteration <= config.burn_in {
                    gamma_scales[k].record(record.accepted);
                    gamma_scales[k].maybe_adapt(config.adapt_window, config.target_acceptance);
                } else {
                    gamma_counts[k].attempted += 1;
                    gamma_counts[k].accepted += record.accepted as u64;
                }
            }

            if is_svbr {
                let cache_ref = cache.as_mut().expect("svbr cache");
                for k in 0..n_knots {
                    let record = update_phi_k(
                        &mut state,
                        cache_ref,
                        &ctx.index,
                        spec.exposure_kind,
                        ctx.bounds,
                        &stats,
                        &mut data_term,
                        k,
                        phi_scales[k].sd(),
                        &mut scratch,
                        rng,
                    );
                    if iteration <= config.burn_in {
                        phi_scales[k].record(record.accepted);
                        phi_scales[k].maybe_adapt(config.adapt_window, config.target_acceptance);
                    } else {
                        phi_counts[k].attempted += 1;
                        phi_counts[k].accepted += record.accepted as u64;
                    }
                }
                let record = update_rho(
                    &mut state,
                    cache_ref,
                    ctx.layout.as_ref().expect("svbr layout"),
                    &ctx.index,
                    spec.exposure_kind,
                    ctx.bounds,
                    priors.rho_shape,
                    priors.rho_rate,
                    &stats,
                    &mut data_term,
                    rho_scale.sd(),
                    &mut scratch,
                    rng,
                )?;
                if iteration <= config.burn_in {
                    rho_scale.record(record.accepted);
                    rho_scale.maybe_adapt(config.adapt_window, config.target_acceptance);
                } else {
                    rho_count.attempted += 1;
                    rho_count.accepted += record.accepted as u64;
                }
            }
        }

        // Thinned storage after burn-in.
        if iteration > config.burn_in && (iteration - config.burn_in) % config.thin == 0 {
            let psi = linear_predictor(dataset, &state.beta, &state.impact_rows(dataset));
            let loglik =
                pointwise_loglik(spec.likelihood, dataset, &psi, state.sigma2, state.r);
            samples.push_draw(&state, &loglik);
        }
    }

    samples.meta.acceptance = AcceptanceReport {
        gamma_rates: gamma_counts.iter().map(BlockCounter::rate).collect(),
        gamma_final_sds: gamma_scales.iter().map(AdaptiveScale::sd).collect(),
        phi_mean_rate: mean_of(phi_counts.iter().map(BlockCounter::rate)),
        phi_mean_final_sd: mean_of(phi_scales.iter().map(AdaptiveScale::sd)),
        rho_rate: rho_count.rate(),
        rho_final_sd: rho_scale.sd(),
    };
    debug_assert_eq!(samples.n_draws(), n_stored);
    Ok(samples)
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in values {
        total += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Derive the RNG substream for a (purpose, setting, replicate, model) cell
/// so parallel work is reproducible independently of scheduling.
pub fn derive_stream(purpose: u64, setting: u64, replicate: u64, model: u64) -> u64 {
    (purpose << 48) ^ (setting << 40) ^ (replicate << 8) ^ model
}
