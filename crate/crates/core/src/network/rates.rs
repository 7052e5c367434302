//! Pre-limit arrival and service rates of the `n`-th network.

use crate::model::NetworkParams;

/// Rates used by the `n`-th system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkRates {
    pub lambda: [f64; 2],
    pub mu: [f64; 3],
}

impl NetworkRates {
    /// Default schedule: `mu1, mu2` held at their limits,
    /// `lambda_i = lambda_i + b_i mu_i / sqrt(n)` for `i = 1, 2`, and
    /// `mu3 = lambda2 / (1 + b3 / sqrt(n))`.
    ///
    /// With these choices `sqrt(n)(lambda_i/mu_i - lambda_i^0/mu_i^0) = b_i` and
    /// `sqrt(n)(lambda_2/mu_3 - 1) = b_3` hold exactly for every `n`.
    pub fn for_n(p: &NetworkParams, n: u64) -> Self {
        let r = (n as f64).sqrt();
        let [b1, b2, b3] = p.drift_offsets;
        let lambda = [
            p.lambda[0] + b1 * p.mu[0] / r,
            p.lambda[1] + b2 * p.mu[1] / r,
        ];
        let mu3 = lambda[1] / (1.0 + b3 / r);
        Self {
            lambda,
            mu: [p.mu[0], p.mu[1], mu3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lambda.iter().all(|l| l.is_finite() && *l >= 0.0)
            && self.mu.iter().all(|m| m.is_finite() && *m > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offsets_keep_limits() {
        let p = NetworkParams::reference();
        let r = NetworkRates::for_n(&p, 400);
        assert_eq!(r.lambda, p.lambda);
        assert_eq!(r.mu, p.mu);
    }

    #[test]
    fn offsets_reproduce_heavy_traffic_rates() {
        let p = NetworkParams::reference()
            .with_drift_offsets([0.3, -0.2, 0.5])
            .unwrap();
        for n in [100u64, 1600] {
            let r = NetworkRates::for_n(&p, n);
            let s = (n as f64).sqrt();
            assert!((s * (r.lambda[0] / r.mu[0] - p.lambda[0] / p.mu[0]) - 0.3).abs() < 1e-12);
            assert!((s * (r.lambda[1] / r.mu[1] - p.lambda[1] / p.mu[1]) + 0.2).abs() < 1e-12);
            assert!((s * (r.lambda[1] / r.mu[2] - 1.0) - 0.5).abs() < 1e-12);
        }
    }
}
