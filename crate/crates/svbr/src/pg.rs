//! Exact Polya-Gamma sampling.
//!
//! `sample_pg(b, c, rng)` draws from PG(b, c) for integer shape b as the sum
//! of b independent PG(1, c) variates. Each PG(1, c) draw uses the exact
//! alternating-series accept/reject scheme: a proposal is drawn from the
//! two-piece mixture of a truncated inverse-Gaussian body and an exponential
//! tail, then accepted against the partial sums of the Jacobi-type series.
//! No truncation of the infinite gamma-sum representation is involved, so the
//! draws are exact up to floating point.

use crate::error::{Result, SvbrError};
use crate::normal::log_phi;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::f64::consts::PI;

/// Series truncation point separating the two proposal pieces.
const TRUNC: f64 = 0.64;
const TRUNC_RECIP: f64 = 1.0 / TRUNC;

/// One draw from PG(b, c) for integer b >= 0.
///
/// b = 0 is the degenerate point mass at zero.
pub fn sample_pg<R: Rng + ?Sized>(b: u64, c: f64, rng: &mut R) -> f64 {
    let mut total = 0.0;
    for _ in 0..b {
        total += sample_pg1(c, rng);
    }
    total
}

/// Checked variant used by callers holding user-provided shapes.
pub fn sample_pg_checked<R: Rng + ?Sized>(b: i64, c: f64, rng: &mut R) -> Result<f64> {
    if b < 0 {
        return Err(SvbrError::validation(format!(
            "Polya-Gamma shape must be nonnegative, got {b}"
        )));
    }
    Ok(sample_pg(b as u64, c, rng))
}

/// One draw from PG(1, c).
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // PG(1, c) = J*(1, c/2) / 4 and the tilted law is symmetric in c.
    let z = c.abs() * 0.5;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_right = right_piece_mass(z, fz);
    loop {
        let x = if rng.gen::<f64>() < p_right {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        // Alternating series acceptance on the proposal x.
        let mut s = series_coef(0, x);
        let y = rng.gen::<f64>() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability that the proposal comes from the exponential right tail.
fn right_piece_mass(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let sqrt_recip_t = (1.0 / t).sqrt();
    let b = sqrt_recip_t * (t * z - 1.0);
    let a = -sqrt_recip_t * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + log_phi(b);
    let xa = x0 + z + log_phi(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// n-th coefficient of the alternating series for the J*(1, z) density.
fn series_coef(n: usize, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else {
        let half = n as f64 + 0.5;
        let expnt = -1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * half * half / x;
        expnt.exp()
    }
}

/// Inverse-Gaussian(1/z, 1) restricted to (0, TRUNC].
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if z < TRUNC_RECIP {
        // Large-mean regime (covers z = 0): rejection from the one-sided
        // stable body with an exp(-z^2 x / 2) thinning step.
        loop {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            if rng.gen::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        // Small-mean regime: sample the untruncated inverse Gaussian until a
        // value lands inside the window.
        let mu = 1.0 / z;
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let half_mu = 0.5 * mu;
            let mu_y = mu * y;
            let mut x = mu + half_mu * mu_y - half_mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.gen::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// E[PG(b, c)] = (b / 2c) tanh(c / 2), with the c -> 0 limit b / 4.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0 - b * c * c / 48.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// Var[PG(b, c)] = b (sinh c - c) / (4 c^3 cosh^2(c/2)), limit b / 24.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-4 {
        b / 24.0
    } else {
        let ch = (0.5 * c).cosh();
        b * (c.sinh() - c) / (4.0 * c * c * c * ch * ch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn degenerate_shape_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_pg(0, 0.0, &mut rng), 0.0);
        assert_eq!(sample_pg(0, 3.7, &mut rng), 0.0);
    }

    #[test]
    fn negative_shape_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_pg_checked(-1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn draws_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in [-4.0, -0.5, 0.0, 0.3, 2.0, 11.0] {
            for _ in 0..2000 {
                assert!(sample_pg1(c, &mut rng) > 0.0);
            }
        }
    }

    #[test]
    fn mean_at_zero_tilt() {
        // E[PG(1, 0)] = 1/4.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..200_000).map(|_| sample_pg1(0.0, &mut rng)).collect();
        let (mean, var) = moments(&draws);
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean - 0.25).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn mean_with_tilt_matches_identity() {
        // E[PG(4, 2)] = tanh(1) ~ 0.7616.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws: Vec<f64> = (0..200_000).map(|_| sample_pg(4, 2.0, &mut rng)).collect();
        let (mean, var) = moments(&draws);
        let se = (var / draws.len() as f64).sqrt();
        let expect = pg_mean(4.0, 2.0);
        assert!((expect - 1.0f64.tanh()).abs() < 1e-12);
        assert!((mean - expect).abs() < 4.0 * se, "mean {mean}, want {expect}");
    }

    #[test]
    fn closed_form_moments_match_series_reference() {
        // Independently computed from the weighted gamma-sum representation.
        assert!((pg_mean(1.0, 1.0) - 0.23105857863).abs() < 1e-10);
        assert!((pg_variance(1.0, 1.0) - 0.0344466453885).abs() < 1e-10);
        assert!((pg_mean(3.0, 5.0) - 0.295984289445).abs() < 1e-10);
        assert!((pg_variance(3.0, 5.0) - 0.0110416047773).abs() < 1e-10);
        assert!((pg_mean(10.0, 0.1) - 2.49791874789).abs() < 1e-10);
        assert!((pg_variance(10.0, 0.1) - 0.415834596508).abs() < 1e-10);
        assert!((pg_variance(1.0, 0.0) - 1.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn variance_with_tilt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..300_000).map(|_| sample_pg(3, 1.0, &mut rng)).collect();
        let (mean, var) = moments(&draws);
        let n = draws.len() as f64;
        let m4 = draws.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n;
        let se_var = ((m4 - var * var) / n).sqrt();
        let expect = pg_variance(3.0, 1.0);
        assert!(
            (var - expect).abs() < 4.0 * se_var,
            "var {var}, want {expect}"
        );
    }
}
