//! Buffer-defined exposures and the exposure design matrix.
//!
//! Exposure at a location is a function of its sorted source distances and a
//! candidate radius: either an inclusive count of sources within the radius
//! or a spherically tapered weighted sum. The radius itself comes from a
//! linear predictor through the standard normal CDF, and the per-location
//! exposure effect is a polynomial in the normalized radius.

use crate::data::{Dataset, ExposureKind};
use crate::normal::phi;
use nalgebra::{DMatrix, DVector};

/// Per-location ascending-sorted distance rows with the original source
/// indices retained.
#[derive(Debug, Clone)]
pub struct ExposureIndex {
    sorted: Vec<Vec<f64>>,
    source_order: Vec<Vec<u32>>,
}

impl ExposureIndex {
    pub fn from_distances(distances: &DMatrix<f64>) -> Self {
        let m = distances.nrows();
        let h = distances.ncols();
        let mut sorted = Vec::with_capacity(m);
        let mut source_order = Vec::with_capacity(m);
        for j in 0..m {
            let mut order: Vec<u32> = (0..h as u32).collect();
            order.sort_by(|&a, &b| {
                distances[(j, a as usize)]
                    .partial_cmp(&distances[(j, b as usize)])
                    .unwrap()
            });
            let row: Vec<f64> = order
                .iter()
                .map(|&k| distances[(j, k as usize)])
                .collect();
            sorted.push(row);
            source_order.push(order);
        }
        ExposureIndex {
            sorted,
            source_order,
        }
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self::from_distances(&dataset.distances)
    }

    pub fn n_locations(&self) -> usize {
        self.sorted.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sorted.first().map_or(0, Vec::len)
    }

    pub fn sorted_row(&self, location: usize) -> &[f64] {
        &self.sorted[location]
    }

    /// Original column indices in ascending-distance order.
    pub fn source_order(&self, location: usize) -> &[u32] {
        &self.source_order[location]
    }

    pub fn exposure(&self, kind: ExposureKind, location: usize, radius: f64) -> f64 {
        match kind {
            ExposureKind::Count => count_exposure(self, location, radius) as f64,
            ExposureKind::Spherical => spherical_exposure(self, location, radius),
        }
    }
}

/// Number of sources within `radius` of the location, ties inclusive.
pub fn count_exposure(idx: &ExposureIndex, location: usize, radius: f64) -> usize {
    debug_assert!(radius >= 0.0);
    idx.sorted[location].partition_point(|&d| d <= radius)
}

/// Spherically weighted exposure: each source within the radius contributes
/// `1 - 1.5 u + 0.5 u^3` with `u = d / radius`, which decays from 1 at the
/// location to exactly 0 at the boundary.
///
/// A zero radius yields zero by convention: no source is strictly inside,
/// even one at distance zero (the count exposure keeps such a source, since
/// its boundary is inclusive).
pub fn spherical_exposure(idx: &ExposureIndex, location: usize, radius: f64) -> f64 {
    debug_assert!(radius >= 0.0);
    if radius == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for &d in &idx.sorted[location] {
        if d > radius {
            break;
        }
        let u = d / radius;
        total += 1.0 - 1.5 * u + 0.5 * u * u * u;
    }
    total
}

/// Map a linear predictor to radii via the normal CDF inverse link:
/// `delta = (b - a) * Phi(linear) + a`, strictly inside (a, b) for finite
/// input (the CDF value is clamped away from 0 and 1 by one ulp).
pub fn delta_from_linear(linear: &[f64], bounds: (f64, f64)) -> Vec<f64> {
    linear
        .iter()
        .map(|&x| delta_from_linear_scalar(x, bounds))
        .collect()
}

pub fn delta_from_linear_scalar(linear: f64, bounds: (f64, f64)) -> f64 {
    const EPS: f64 = f64::EPSILON / 2.0; // 2^-53
    let (a, b) = bounds;
    let p = phi(linear).clamp(EPS, 1.0 - EPS);
    a + (b - a) * p
}

/// Normalized radius in [0, 1].
pub fn normalize_delta(delta: f64, bounds: (f64, f64)) -> f64 {
    (delta - bounds.0) / (bounds.1 - bounds.0)
}

/// Evaluate the degree-p exposure-effect polynomial at one normalized radius.
pub fn theta_at(delta_tilde: f64, eta: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut pow = 1.0;
    for &coef in eta {
        acc += coef * pow;
        pow *= delta_tilde;
    }
    acc
}

/// Exposure effect at every location: polynomial in the normalized radius
/// with coefficients `eta` (degree = eta.len() - 1).
pub fn theta_eval(delta: &[f64], eta: &[f64], bounds: (f64, f64)) -> Vec<f64> {
    delta
        .iter()
        .map(|&d| theta_at(normalize_delta(d, bounds), eta))
        .collect()
}

/// Polynomial expansion of the exposure: the n* x (p+1) matrix whose row for
/// an outcome unit at location j has entries `z_j * delta_tilde_j^l`. Rows
/// sharing a location are identical, and the matrix satisfies
/// `Z * eta = z .* theta(delta)` elementwise.
pub fn exposure_design_matrix(
    dataset: &Dataset,
    idx: &ExposureIndex,
    delta: &[f64],
    bounds: (f64, f64),
    poly_degree: usize,
    kind: ExposureKind,
) -> DMatrix<f64> {
    let m = dataset.n_locations();
    let z: Vec<f64> = (0..m).map(|j| idx.exposure(kind, j, delta[j])).collect();
    let dt: Vec<f64> = delta.iter().map(|&d| normalize_delta(d, bounds)).collect();
    exposure_design_from_parts(&dataset.location_of, &z, &dt, poly_degree)
}

/// Exposure design matrix from precomputed per-location exposure values and
/// normalized radii.
pub fn exposure_design_from_parts(
    location_of: &[usize],
    z: &[f64],
    delta_tilde: &[f64],
    poly_degree: usize,
) -> DMatrix<f64> {
    let n = location_of.len();
    let m = z.len();
    let mut loc_rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut row = Vec::with_capacity(poly_degree + 1);
        let mut pow = 1.0;
        for _ in 0..=poly_degree {
            row.push(z[j] * pow);
            pow *= delta_tilde[j];
        }
        loc_rows.push(row);
    }
    let mut out = DMatrix::zeros(n, poly_degree + 1);
    for (i, &j) in location_of.iter().enumerate() {
        for l in 0..=poly_degree {
            out[(i, l)] = loc_rows[j][l];
        }
    }
    out
}

/// Per-row total exposure impact `z .* theta` expanded to outcome rows.
pub fn impact_rows(location_of: &[usize], z: &[f64], theta: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        location_of.len(),
        location_of.iter().map(|&j| z[j] * theta[j]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index_from_rows(rows: Vec<Vec<f64>>) -> ExposureIndex {
        let m = rows.len();
        let h = rows[0].len();
        let mat = DMatrix::from_fn(m, h, |j, k| rows[j][k]);
        ExposureIndex::from_distances(&mat)
    }

    #[test]
    fn count_boundary_is_inclusive() {
        let idx = index_from_rows(vec![vec![1.0, 3.0, 7.0]]);
        assert_eq!(count_exposure(&idx, 0, 3.0), 2);
        assert_eq!(count_exposure(&idx, 0, 0.5), 0);
        assert_eq!(count_exposure(&idx, 0, 7.0), 3);
    }

    #[test]
    fn spherical_weight_endpoints() {
        let at_zero = index_from_rows(vec![vec![0.0]]);
        assert_eq!(spherical_exposure(&at_zero, 0, 2.0), 1.0);
        let at_boundary = index_from_rows(vec![vec![4.0]]);
        assert!((spherical_exposure(&at_boundary, 0, 4.0) - 0.0).abs() < 1e-15);
        let halfway = index_from_rows(vec![vec![2.0]]);
        assert!((spherical_exposure(&halfway, 0, 4.0) - 0.3125).abs() < 1e-15);
    }

    #[test]
    fn zero_radius_spherical_is_zero_but_count_keeps_coincident_source() {
        let idx = index_from_rows(vec![vec![0.0, 1.0]]);
        assert_eq!(spherical_exposure(&idx, 0, 0.0), 0.0);
        assert_eq!(count_exposure(&idx, 0, 0.0), 1);
    }

    #[test]
    fn delta_link_midpoint_and_saturation() {
        assert_eq!(delta_from_linear_scalar(0.0, (0.0, 20.0)), 10.0);
        let near_top = delta_from_linear_scalar(40.0, (0.0, 20.0));
        assert!(near_top < 20.0);
        assert!(near_top > 20.0 - 1e-6 * 20.0);
        let near_bottom = delta_from_linear_scalar(-40.0, (0.0, 20.0));
        assert!(near_bottom > 0.0);
    }

    #[test]
    fn delta_link_matches_cdf_oracle() {
        // Phi(1.045) = 0.85198851523863397 from a high-precision oracle.
        let d = delta_from_linear_scalar(1.045, (0.0, 20.0));
        assert!((d - 17.039770304772679).abs() < 1e-10);
    }

    #[test]
    fn theta_polynomial_values() {
        assert_eq!(theta_at(0.37, &[0.910]), 0.910);
        assert_eq!(theta_at(0.0, &[6.342, -0.337]), 6.342);
        assert!((theta_at(1.0, &[1.0, -1.0, 0.5]) - 0.5).abs() < 1e-15);
        let theta = theta_eval(&[3.0, 9.0], &[0.910], (0.0, 10.0));
        assert_eq!(theta, vec![0.910, 0.910]);
    }

    #[test]
    fn design_rows_follow_locations() {
        let z = vec![3.0, 0.0];
        let dt = vec![0.5, 0.2];
        let design = exposure_design_from_parts(&[0, 1, 0], &z, &dt, 1);
        assert_eq!(design[(0, 0)], 3.0);
        assert_eq!(design[(0, 1)], 1.5);
        assert_eq!(design[(1, 0)], 0.0);
        assert_eq!(design[(2, 0)], 3.0);
        assert_eq!(design[(2, 1)], 1.5);
    }

    proptest! {
        #[test]
        fn count_matches_linear_scan(
            dists in proptest::collection::vec(0.0f64..100.0, 1..200),
            radius in 0.0f64..100.0,
        ) {
            let idx = index_from_rows(vec![dists.clone()]);
            let brute = dists.iter().filter(|&&d| d <= radius).count();
            prop_assert_eq!(count_exposure(&idx, 0, radius), brute);
        }

        #[test]
        fn spherical_matches_linear_scan(
            dists in proptest::collection::vec(0.0f64..100.0, 1..200),
            radius in 1e-6f64..100.0,
        ) {
            let idx = index_from_rows(vec![dists.clone()]);
            let brute: f64 = dists
                .iter()
                .filter(|&&d| d <= radius)
                .map(|&d| {
                    let u = d / radius;
                    1.0 - 1.5 * u + 0.5 * u * u * u
                })
                .sum();
            prop_assert!((spherical_exposure(&idx, 0, radius) - brute).abs() < 1e-12);
        }

        #[test]
        fn exposures_monotone_and_dominated(
            dists in proptest::collection::vec(0.0f64..50.0, 1..80),
            r1 in 0.0f64..50.0,
            r2 in 0.0f64..50.0,
        ) {
            let idx = index_from_rows(vec![dists]);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(count_exposure(&idx, 0, lo) <= count_exposure(&idx, 0, hi));
            prop_assert!(spherical_exposure(&idx, 0, lo) <= spherical_exposure(&idx, 0, hi) + 1e-12);
            prop_assert!(spherical_exposure(&idx, 0, hi) <= count_exposure(&idx, 0, hi) as f64 + 1e-12);
        }

        #[test]
        fn sorted_rows_are_permutations(
            dists in proptest::collection::vec(0.0f64..50.0, 2..40),
        ) {
            let idx = index_from_rows(vec![dists.clone()]);
            let mut original = dists;
            original.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(idx.sorted_row(0), &original[..]);
            let mut seen: Vec<u32> = idx.source_order(0).to_vec();
            seen.sort_unstable();
            let expect: Vec<u32> = (0..original.len() as u32).collect();
            prop_assert_eq!(seen, expect);
        }

        #[test]
        fn design_times_eta_equals_impact(
            z0 in 0.0f64..10.0,
            z1 in 0.0f64..10.0,
            dt0 in 0.0f64..1.0,
            dt1 in 0.0f64..1.0,
            eta in proptest::collection::vec(-3.0f64..3.0, 1..4),
        ) {
            let z = vec![z0, z1];
            let dt = vec![dt0, dt1];
            let location_of = vec![0usize, 1, 1, 0];
            let design = exposure_design_from_parts(&location_of, &z, &dt, eta.len() - 1);
            let eta_v = DVector::from_vec(eta.clone());
            let lhs = &design * &eta_v;
            let theta: Vec<f64> = dt.iter().map(|&d| theta_at(d, &eta)).collect();
            let rhs = impact_rows(&location_of, &z, &theta);
            for i in 0..location_of.len() {
                prop_assert!((lhs[i] - rhs[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn delta_link_strictly_increasing(
            x in -6.0f64..6.0,
            step in 1e-6f64..1.0,
        ) {
            let lo = delta_from_linear_scalar(x, (2.0, 9.0));
            let hi = delta_from_linear_scalar(x + step, (2.0, 9.0));
            prop_assert!(hi > lo);
            prop_assert!(lo > 2.0 && hi < 9.0);
        }
    }
}
