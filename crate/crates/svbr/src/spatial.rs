//! Exponential spatial correlation and the low-rank predictive process.
//!
//! Knot-level random effects are projected onto all observed locations via
//! `phi_tilde = C(rho) * inv(Sigma*(rho)) * phi_star`, where the inverse is
//! always applied through a Cholesky solve. When the knots coincide with the
//! locations the projection is the identity.

use crate::error::{Result, SvbrError};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Exponential correlation matrix exp(-rho * d) over a symmetric
/// nonnegative zero-diagonal distance matrix.
pub fn exp_correlation(scaled_dists: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    scaled_dists.map(|d| (-rho * d).exp())
}

/// Cross-correlation between locations (rows) and knots (columns).
pub fn cross_correlation(loc_knot_dists: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    loc_knot_dists.map(|d| (-rho * d).exp())
}

/// Distance layout feeding the correlation cache: knot-to-knot and
/// location-to-knot distances on the same scale as the location distances.
#[derive(Debug, Clone)]
pub struct SpatialLayout {
    pub knot_dists: DMatrix<f64>,
    pub loc_knot_dists: DMatrix<f64>,
    /// Location index of each knot when knots are a subset of the observed
    /// locations; empty for free-standing knot coordinates.
    pub knot_locations: Vec<usize>,
}

impl SpatialLayout {
    pub fn n_knots(&self) -> usize {
        self.knot_dists.nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.loc_knot_dists.nrows()
    }

    /// All observed locations serve as knots.
    pub fn all_locations(scaled_coord_dists: &DMatrix<f64>) -> Self {
        SpatialLayout {
            knot_dists: scaled_coord_dists.clone(),
            loc_knot_dists: scaled_coord_dists.clone(),
            knot_locations: (0..scaled_coord_dists.nrows()).collect(),
        }
    }

    /// Knots chosen as a maximin subset of the observed locations.
    pub fn from_location_subset(scaled_coord_dists: &DMatrix<f64>, knots: &[usize]) -> Self {
        let k = knots.len();
        let m = scaled_coord_dists.nrows();
        let knot_dists =
            DMatrix::from_fn(k, k, |a, b| scaled_coord_dists[(knots[a], knots[b])]);
        let loc_knot_dists = DMatrix::from_fn(m, k, |j, b| scaled_coord_dists[(j, knots[b])]);
        SpatialLayout {
            knot_dists,
            loc_knot_dists,
            knot_locations: knots.to_vec(),
        }
    }
}

/// Deterministic farthest-point (maximin) subset of size `k`. Starts from
/// the location closest to the centroid of the scaled distance layout (the
/// one minimizing total distance to the others) and repeatedly adds the
/// location maximizing its distance to the chosen set; ties break toward
/// the lowest index.
pub fn maximin_knots(scaled_coord_dists: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let m = scaled_coord_dists.nrows();
    let k = k.min(m);
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = Vec::with_capacity(k);
    let start = (0..m)
        .min_by(|&a, &b| {
            let sa: f64 = (0..m).map(|j| scaled_coord_dists[(a, j)]).sum();
            let sb: f64 = (0..m).map(|j| scaled_coord_dists[(b, j)]).sum();
            sa.partial_cmp(&sb).unwrap().then(a.cmp(&b))
        })
        .unwrap();
    chosen.push(start);
    let mut min_dist: Vec<f64> = (0..m).map(|j| scaled_coord_dists[(j, start)]).collect();
    while chosen.len() < k {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (j, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = j;
            }
        }
        chosen.push(best);
        for j in 0..m {
            min_dist[j] = min_dist[j].min(scaled_coord_dists[(j, best)]);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Correlation cache for one value of the decay parameter. Rebuilt wholesale
/// whenever rho changes; reused across knot-effect updates.
#[derive(Debug, Clone)]
pub struct CorrelationCache {
    pub rho: f64,
    chol: Cholesky<f64, Dyn>,
    /// Log-determinant of the (jittered) knot correlation matrix.
    pub log_det: f64,
    /// m x K cross-correlation.
    pub cross: DMatrix<f64>,
    /// m x K projection matrix `cross * inv(Sigma*)`, formed via Cholesky
    /// solves against the cross-correlation rows.
    pub projection: DMatrix<f64>,
    /// Diagonal jitter that was required, zero if none.
    pub jitter: f64,
}

/// Cholesky with an escalating diagonal jitter ladder (1e-10 .. 1e-6).
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok((chol, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= 1e-6 {
        let mut bumped = matrix.clone();
        for i in 0..bumped.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(bumped) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
    }
    Err(SvbrError::numerical(format!(
        "knot correlation matrix not positive definite after jitter up to 1e-6 \
         (dimension {})",
        matrix.nrows()
    )))
}

impl CorrelationCache {
    pub fn build(layout: &SpatialLayout, rho: f64) -> Result<Self> {
        let knot_corr = exp_correlation(&layout.knot_dists, rho);
        let (chol, jitter) = cholesky_with_jitter(&knot_corr)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cross = cross_correlation(&layout.loc_knot_dists, rho);
        let projection = chol.solve(&cross.transpose()).transpose();
        Ok(CorrelationCache {
            rho,
            chol,
            log_det,
            cross,
            projection,
            jitter,
        })
    }

    pub fn n_knots(&self) -> usize {
        self.cross.ncols()
    }

    /// Quadratic form `phi_star' * inv(Sigma*) * phi_star` via a triangular
    /// solve against the Cholesky factor.
    pub fn quad_form(&self, phi_star: &DVector<f64>) -> f64 {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(phi_star)
            .expect("cholesky factor has positive diagonal");
        y.norm_squared()
    }

    /// Solve `Sigma* x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

/// Project knot effects onto all locations through the Cholesky solve.
pub fn predictive_projection(cache: &CorrelationCache, phi_star: &DVector<f64>) -> DVector<f64> {
    &cache.cross * cache.solve(phi_star)
}

/// Log density of MVN(0, Sigma*) at the knot effects, normalizing constant
/// included (needed by the decay-parameter update through the determinant).
pub fn gp_log_density(phi_star: &DVector<f64>, cache: &CorrelationCache) -> f64 {
    let k = phi_star.len() as f64;
    -0.5 * (k * LN_2PI + cache.log_det + cache.quad_form(phi_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layout(m: usize, seed: u64) -> (DMatrix<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<[f64; 2]> = (0..m).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut d = DMatrix::zeros(m, m);
        let mut max = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                d[(i, j)] = (dx * dx + dy * dy).sqrt();
                max = max.max(d[(i, j)]);
            }
        }
        (d.map(|v| v / max), rng)
    }

    #[test]
    fn correlation_endpoints() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let c = exp_correlation(&d, 3.070);
        assert_eq!(c[(0, 0)], 1.0);
        assert!((c[(0, 1)] - 0.046421154857431265).abs() < 1e-15);
        let far = exp_correlation(&d, 800.0);
        assert!(far[(1, 0)] < 1e-300);
    }

    #[test]
    fn knots_at_all_locations_make_projection_identity() {
        let (d, mut rng) = random_layout(12, 7);
        let layout = SpatialLayout::all_locations(&d);
        let cache = CorrelationCache::build(&layout, 2.3).unwrap();
        let phi: DVector<f64> =
            DVector::from_fn(12, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let projected = predictive_projection(&cache, &phi);
        let err = (&projected - &phi).abs().max();
        assert!(err < 1e-8, "identity projection error {err}");
    }

    #[test]
    fn zero_effects_project_to_zero() {
        let (d, _) = random_layout(9, 8);
        let layout = SpatialLayout::from_location_subset(&d, &maximin_knots(&d, 4));
        let cache = CorrelationCache::build(&layout, 1.0).unwrap();
        let projected = predictive_projection(&cache, &DVector::zeros(4));
        assert!(projected.abs().max() == 0.0);
    }

    /// Row-reduction solver kept independent of the Cholesky path.
    fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = a.nrows();
        let mut aug = DMatrix::zeros(n, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(a);
        aug.set_column(n, b);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| aug[(i, col)].abs().partial_cmp(&aug[(j, col)].abs()).unwrap())
                .unwrap();
            aug.swap_rows(col, pivot);
            let p = aug[(col, col)];
            for row in 0..n {
                if row != col {
                    let factor = aug[(row, col)] / p;
                    for c in col..=n {
                        let v = aug[(col, c)];
                        aug[(row, c)] -= factor * v;
                    }
                }
            }
        }
        DVector::from_fn(n, |i, _| aug[(i, n)] / aug[(i, i)])
    }

    #[test]
    fn projection_matches_independent_dense_solver() {
        let (d, mut rng) = random_layout(10, 9);
        let knots = maximin_knots(&d, 3);
        let layout = SpatialLayout::from_location_subset(&d, &knots);
        let cache = CorrelationCache::build(&layout, 1.7).unwrap();
        let phi = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
        let got = predictive_projection(&cache, &phi);
        let sigma = exp_correlation(&layout.knot_dists, 1.7);
        let cross = cross_correlation(&layout.loc_knot_dists, 1.7);
        let solved = gauss_solve(&sigma, &phi);
        let want = &cross * solved;
        assert!((got - want).abs().max() < 1e-10);
    }

    #[test]
    fn log_density_reduces_to_standard_normal_for_one_knot() {
        let layout = SpatialLayout {
            knot_dists: DMatrix::from_element(1, 1, 0.0),
            loc_knot_dists: DMatrix::from_element(1, 1, 0.0),
            knot_locations: vec![0],
        };
        let cache = CorrelationCache::build(&layout, 1.0).unwrap();
        for x in [-2.0, 0.0, 0.7] {
            let got = gp_log_density(&DVector::from_element(1, x), &cache);
            let want = -0.5 * (LN_2PI + x * x);
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_quadratic_form_matches_dense_inverse() {
        let (d, mut rng) = random_layout(7, 10);
        let knots = maximin_knots(&d, 4);
        let layout = SpatialLayout::from_location_subset(&d, &knots);
        let cache = CorrelationCache::build(&layout, 0.9).unwrap();
        let phi = DVector::from_fn(4, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let sigma = exp_correlation(&layout.knot_dists, 0.9);
        let inv = sigma.clone().try_inverse().unwrap();
        let qf_dense = (phi.transpose() * &inv * &phi)[(0, 0)];
        let logdet_dense = sigma.determinant().ln();
        let want = -0.5 * (4.0 * LN_2PI + logdet_dense + qf_dense);
        let got = gp_log_density(&phi, &cache);
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn log_density_maximized_at_zero() {
        let (d, mut rng) = random_layout(6, 11);
        let layout = SpatialLayout::all_locations(&d);
        let cache = CorrelationCache::build(&layout, 1.2).unwrap();
        let at_zero = gp_log_density(&DVector::zeros(6), &cache);
        for _ in 0..25 {
            let phi = DVector::from_fn(6, |_, _| rng.gen::<f64>() - 0.5);
            assert!(gp_log_density(&phi, &cache) <= at_zero);
        }
    }

    #[test]
    fn cholesky_round_trip() {
        let (d, _) = random_layout(8, 12);
        let corr = exp_correlation(&d, 2.0);
        let (chol, jitter) = cholesky_with_jitter(&corr).unwrap();
        assert_eq!(jitter, 0.0);
        let l = chol.l();
        let rebuilt = &l * l.transpose();
        assert!((rebuilt - corr).abs().max() < 1e-10);
    }

    #[test]
    fn duplicate_locations_need_jitter_or_fail() {
        // Two identical rows make the correlation singular.
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let corr = exp_correlation(&d, 1.0);
        match cholesky_with_jitter(&corr) {
            Ok((_, jitter)) => assert!(jitter > 0.0),
            Err(e) => assert!(e.to_string().contains("positive definite")),
        }
    }

    #[test]
    fn maximin_is_deterministic_and_spreads() {
        let (d, _) = random_layout(30, 13);
        let a = maximin_knots(&d, 10);
        let b = maximin_knots(&d, 10);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let mut sorted = a.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }
}
