use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of comparing the smoothed (chain-rule) entropy of a bivariate
/// normal against its closed-form differential entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianReport<S> {
    /// `log(2 pi) + 1 + 0.5 * log det cov`.
    pub exact: S,
    /// Smoothed estimate at the first sample.
    pub smoothed_first: S,
    /// Max over samples of `|smoothed(x) - exact|`.
    pub max_deviation: S,
    pub samples: usize,
}

/// Factorizes `N(mu, cov)` as `X1 ~ N(mu1, c11)`, `X2 | X1 ~ N(mu_bar(x1), c_bar)`
/// with `c_bar = c22 - c21 c12 / c11`, samples `x`, and evaluates
/// `0.5 log(2 pi e c11) + 0.5 log(2 pi e c_bar)` at each sample.
pub fn gaussian_smoothed_check<S: Scalar, R: Rng + ?Sized>(
    mu: [S; 2],
    cov: [[S; 2]; 2],
    samples: usize,
    rng: &mut R,
) -> Result<GaussianReport<S>> {
    let [[c11, c12], [c21, c22]] = cov;
    let scale = c11.abs().max(c22.abs()).max(S::one());
    let det = c11 * c22 - c12 * c21;
    if (c12 - c21).abs() > S::lit(1e-12) * scale || !(c11 > S::zero()) || !(det > S::zero()) {
        return Err(Error::NotSpd);
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("gaussian check needs at least one sample".into()));
    }
    let two_pi_e = S::lit(2.0 * std::f64::consts::PI * std::f64::consts::E);
    let half = S::lit(0.5);
    let exact = S::lit((2.0 * std::f64::consts::PI).ln()) + S::one() + half * det.ln();

    let mut max_deviation = S::zero();
    let mut smoothed_first = S::zero();
    for n in 0..samples {
        let z1: f64 = rng.sample(StandardNormal);
        let x1 = mu[0] + c11.sqrt() * S::lit(z1);
        // the second component never enters the smoothed estimate
        let cond_var = conditional_variance(cov, x1);
        let smoothed = half * (two_pi_e * c11).ln() + half * (two_pi_e * cond_var).ln();
        if n == 0 {
            smoothed_first = smoothed;
        }
        max_deviation = max_deviation.max((smoothed - exact).abs());
    }
    Ok(GaussianReport { exact, smoothed_first, max_deviation, samples })
}

/// Variance of `X2 | X1 = x1`; the Schur complement, independent of `x1`.
fn conditional_variance<S: Scalar>(cov: [[S; 2]; 2], _x1: S) -> S {
    let [[c11, c12], [c21, c22]] = cov;
    c22 - c21 * c12 / c11
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_covariance_gives_log_two_pi_e() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let r = gaussian_smoothed_check([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 100, &mut rng).unwrap();
        let expected = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((r.exact - expected).abs() < 1e-14);
        assert!((r.smoothed_first - expected).abs() < 1e-14);
        assert!(r.max_deviation < 1e-14);
    }

    #[test]
    fn mean_shift_changes_nothing() {
        let cov = [[2.0, 0.6], [0.6, 1.0]];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_smoothed_check([0.0, 0.0], cov, 50, &mut rng).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let b = gaussian_smoothed_check([10.0, -3.0], cov, 50, &mut rng).unwrap();
        assert_eq!(a.exact, b.exact);
        assert_eq!(a.smoothed_first, b.smoothed_first);
    }

    #[test]
    fn rejects_non_spd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(gaussian_smoothed_check([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 5, &mut rng), Err(Error::NotSpd)));
        assert!(matches!(gaussian_smoothed_check([0.0, 0.0], [[1.0, 0.1], [0.2, 1.0]], 5, &mut rng), Err(Error::NotSpd)));
        assert!(matches!(gaussian_smoothed_check([0.0, 0.0], [[-1.0, 0.0], [0.0, -1.0]], 5, &mut rng), Err(Error::NotSpd)));
    }
}
