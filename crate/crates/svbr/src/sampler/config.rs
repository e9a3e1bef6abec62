//! Chain configuration.

use crate::error::{Result, SvbrError};
use serde::{Deserialize, Serialize};

/// Initial random-walk scales for the Metropolis blocks. The radius
/// coefficients, knot effects, and log decay parameter each adapt their own
/// scale during burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalSds {
    pub gamma: f64,
    pub phi: f64,
    pub rho: f64,
}

impl Default for ProposalSds {
    fn default() -> Self {
        ProposalSds {
            gamma: 0.5,
            phi: 0.5,
            rho: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Master seed; chains and replicates derive counter-based substreams.
    pub seed: u64,
    pub chains: usize,
    pub proposal_sd: ProposalSds,
    /// Iterations per adaptation step during burn-in.
    pub adapt_window: usize,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 50_000,
            burn_in: 30_000,
            thin: 2,
            seed: 0,
            chains: 1,
            proposal_sd: ProposalSds::default(),
            adapt_window: 100,
            target_acceptance: 0.44,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(SvbrError::config(format!(
                "burn-in ({}) must be smaller than total iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SvbrError::config("thinning interval must be positive"));
        }
        if self.chains == 0 {
            return Err(SvbrError::config("at least one chain required"));
        }
        if self.adapt_window == 0 {
            return Err(SvbrError::config("adaptation window must be positive"));
        }
        let sds = self.proposal_sd;
        if !(sds.gamma > 0.0 && sds.phi > 0.0 && sds.rho > 0.0) {
            return Err(SvbrError::config("proposal scales must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(SvbrError::config("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Number of stored draws per chain.
    pub fn n_stored(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Robbins-Monro scale adaptation toward a target acceptance rate, applied
/// once per window and only during burn-in so post-burn-in kernels are
/// fixed.
#[derive(Debug, Clone)]
pub struct AdaptiveScale {
    log_sd: f64,
    accepted: u32,
    attempted: u32,
    windows: u32,
}

impl AdaptiveScale {
    pub fn new(initial_sd: f64) -> Self {
        AdaptiveScale {
            log_sd: initial_sd.ln(),
            accepted: 0,
            attempted: 0,
            windows: 0,
        }
    }

    pub fn sd(&self) -> f64 {
        self.log_sd.exp()
    }

    pub fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    /// Apply one adaptation step if the window is full.
    pub fn maybe_adapt(&mut self, window: usize, target: f64) {
        if (self.attempted as usize) < window {
            return;
        }
        self.windows += 1;
        let rate = self.accepted as f64 / self.attempted as f64;
        let step = (1.0 / (self.windows as f64).sqrt()).min(1.0);
        self.log_sd = (self.log_sd + step * (rate - target)).clamp(-12.0, 6.0);
        self.accepted = 0;
        self.attempted = 0;
    }
}
