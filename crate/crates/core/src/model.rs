//! Network parameters, cost-regime classification, the static workload LP and
//! the drift/covariance of the limiting Brownian data.
//!
//! The criss-cross network has two arrival streams (classes 1 and 2) feeding
//! server 1; class 2 output becomes class 3 at server 2. Workload coordinates
//! are `w1 = q1/mu1 + q2/mu2` and `w2 = (q2 + q3)/mu3`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Relative tolerance for the heavy-traffic identities.
pub const HEAVY_TRAFFIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("parameter `{name}` must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },
    #[error("squared coefficient of variation `{name}` must be >= 0, got {value}")]
    NegativeScv { name: &'static str, value: f64 },
    #[error("heavy-traffic identity `{identity}` violated (residual {residual:e})")]
    HeavyTrafficViolation {
        identity: HeavyTrafficIdentity,
        residual: f64,
    },
    #[error("workload must be nonnegative, got ({0}, {1})")]
    NegativeWorkload(f64, f64),
    #[error("config: {0}")]
    Config(String),
}

/// Which of the two heavy-traffic identities failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeavyTrafficIdentity {
    /// `lambda1/mu1 + lambda2/mu2 = 1` (station 1).
    Station1,
    /// `lambda2/mu3 = 1` (station 2).
    Station2,
}

impl fmt::Display for HeavyTrafficIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeavyTrafficIdentity::Station1 => f.write_str("lambda1/mu1 + lambda2/mu2 = 1"),
            HeavyTrafficIdentity::Station2 => f.write_str("lambda2/mu3 = 1"),
        }
    }
}

/// Limiting rates, costs and second-order data of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// Arrival rates of classes 1 and 2.
    pub lambda: [f64; 2],
    /// Service rates of classes 1, 2, 3.
    pub mu: [f64; 3],
    /// Holding cost per job per unit time.
    pub cost: [f64; 3],
    /// Discount rate.
    pub gamma: f64,
    /// Second-order heavy-traffic offsets `b1, b2, b3`.
    pub drift_offsets: [f64; 3],
    /// SCVs of the unit-mean interarrival primitives.
    pub interarrival_scv: [f64; 2],
    /// SCVs of the unit-mean service primitives.
    pub service_scv: [f64; 3],
}

impl NetworkParams {
    /// Builds a parameter set with unit SCVs and zero drift offsets.
    pub fn new(
        lambda: [f64; 2],
        mu: [f64; 3],
        cost: [f64; 3],
        gamma: f64,
    ) -> Result<Self, ParamError> {
        Self {
            lambda,
            mu,
            cost,
            gamma,
            drift_offsets: [0.0; 3],
            interarrival_scv: [1.0; 2],
            service_scv: [1.0; 3],
        }
        .validated()
    }

    /// The reference Case IIB instance: lambda=(0.5,1), mu=(1,2,1), c=(1,1,2),
    /// gamma=1, zero offsets, unit SCVs.
    pub fn reference() -> Self {
        Self::new([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0], 1.0)
            .expect("reference parameters are valid")
    }

    pub fn with_drift_offsets(mut self, b: [f64; 3]) -> Result<Self, ParamError> {
        self.drift_offsets = b;
        self.validated()
    }

    pub fn with_scvs(mut self, arrival: [f64; 2], service: [f64; 3]) -> Result<Self, ParamError> {
        self.interarrival_scv = arrival;
        self.service_scv = service;
        self.validated()
    }

    /// Checks positivity and finiteness. Heavy traffic is checked separately by
    /// [`validate_heavy_traffic`] so that off-balance inputs can still be
    /// represented and reported.
    pub fn validated(self) -> Result<Self, ParamError> {
        const LAMBDA: [&str; 2] = ["lambda1", "lambda2"];
        const MU: [&str; 3] = ["mu1", "mu2", "mu3"];
        const COST: [&str; 3] = ["c1", "c2", "c3"];
        const B: [&str; 3] = ["b1", "b2", "b3"];
        const SCV_A: [&str; 2] = ["scv_a1", "scv_a2"];
        const SCV_S: [&str; 3] = ["scv_s1", "scv_s2", "scv_s3"];
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ParamError::NonPositive { name, value: v })
            }
        };
        for (n, v) in LAMBDA.iter().zip(self.lambda) {
            positive(n, v)?;
        }
        for (n, v) in MU.iter().zip(self.mu) {
            positive(n, v)?;
        }
        for (n, v) in COST.iter().zip(self.cost) {
            positive(n, v)?;
        }
        positive("gamma", self.gamma)?;
        for (n, v) in B.iter().zip(self.drift_offsets) {
            if !v.is_finite() {
                return Err(ParamError::NotFinite { name: n, value: v });
            }
        }
        for (n, v) in SCV_A
            .iter()
            .zip(self.interarrival_scv)
            .chain(SCV_S.iter().zip(self.service_scv))
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ParamError::NegativeScv { name: n, value: v });
            }
        }
        Ok(self)
    }

    /// `mu3 / mu2`, the Lipschitz bound of the free boundary.
    pub fn boundary_slope(&self) -> f64 {
        self.mu[2] / self.mu[1]
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self)
    }
}

/// Checks `lambda1/mu1 + lambda2/mu2 = 1` and `lambda2/mu3 = 1` to relative
/// tolerance [`HEAVY_TRAFFIC_TOL`].
pub fn validate_heavy_traffic(p: &NetworkParams) -> Result<(), ParamError> {
    let r1 = p.lambda[0] / p.mu[0] + p.lambda[1] / p.mu[1] - 1.0;
    if r1.abs() > HEAVY_TRAFFIC_TOL {
        return Err(ParamError::HeavyTrafficViolation {
            identity: HeavyTrafficIdentity::Station1,
            residual: r1.abs(),
        });
    }
    let r2 = p.lambda[1] / p.mu[2] - 1.0;
    if r2.abs() > HEAVY_TRAFFIC_TOL {
        return Err(ParamError::HeavyTrafficViolation {
            identity: HeavyTrafficIdentity::Station2,
            residual: r2.abs(),
        });
    }
    Ok(())
}

/// Cost regime of the criss-cross network.
///
/// Case I is `c1 mu1 - c2 mu2 + c3 mu2 <= 0`. Otherwise the Case II sub-case is
/// read off two signs; ties follow the non-strict/strict placement of the
/// defining inequalities:
///
/// | case | `c2 mu2 - c3 mu2` | `c2 mu2 - c1 mu1` |
/// |------|-------------------|-------------------|
/// | IIA  | `>= 0`            | `>= 0`            |
/// | IIB  | `< 0`             | `>= 0`            |
/// | IIC  | `>= 0`            | `< 0`             |
/// | IID  | `< 0`             | `< 0`             |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    CaseI,
    CaseIIA,
    CaseIIB,
    CaseIIC,
    CaseIID,
}

impl Regime {
    pub fn is_case_ii(self) -> bool {
        !matches!(self, Regime::CaseI)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::CaseI => "I",
            Regime::CaseIIA => "IIA",
            Regime::CaseIIB => "IIB",
            Regime::CaseIIC => "IIC",
            Regime::CaseIID => "IID",
        };
        f.write_str(s)
    }
}

pub fn classify_regime(p: &NetworkParams) -> Regime {
    let [c1, c2, c3] = p.cost;
    let [mu1, mu2, _] = p.mu;
    if c1 * mu1 - c2 * mu2 + c3 * mu2 <= 0.0 {
        return Regime::CaseI;
    }
    let s23 = c2 * mu2 - c3 * mu2 >= 0.0;
    let s21 = c2 * mu2 - c1 * mu1 >= 0.0;
    match (s23, s21) {
        (true, true) => Regime::CaseIIA,
        (false, true) => Regime::CaseIIB,
        (true, false) => Regime::CaseIIC,
        (false, false) => Regime::CaseIID,
    }
}

/// Reduced cost of moving one unit of class-2 content through the LP:
/// `c2 - c1 mu1/mu2 - c3`. Negative exactly in Case II.
fn class2_reduced_cost(p: &NetworkParams) -> f64 {
    let [c1, c2, c3] = p.cost;
    c2 - c1 * p.mu[0] / p.mu[1] - c3
}

fn check_workload(w: [f64; 2]) -> Result<(), ParamError> {
    if w[0] >= 0.0 && w[1] >= 0.0 {
        Ok(())
    } else {
        Err(ParamError::NegativeWorkload(w[0], w[1]))
    }
}

/// Minimum holding-cost rate `h(w)` compatible with workload `w`.
///
/// In Case II this is the two-branch piecewise-linear function split on the
/// ray `mu3 w2 = mu2 w1`; in Case I the minimizer keeps buffer 2 empty and the
/// value is `c1 mu1 w1 + c3 mu3 w2`.
pub fn lp_value(p: &NetworkParams, w: [f64; 2]) -> Result<f64, ParamError> {
    check_workload(w)?;
    Ok(lp_value_unchecked(p, w))
}

#[inline]
pub(crate) fn lp_value_unchecked(p: &NetworkParams, w: [f64; 2]) -> f64 {
    let [c1, c2, c3] = p.cost;
    let [mu1, mu2, mu3] = p.mu;
    let [w1, w2] = w;
    if class2_reduced_cost(p) > 0.0 {
        return c1 * mu1 * w1 + c3 * mu3 * w2;
    }
    if mu3 * w2 <= mu2 * w1 {
        c1 * mu1 * w1 + mu3 / mu2 * (c2 * mu2 - c1 * mu1) * w2
    } else {
        (c2 * mu2 - c3 * mu2) * w1 + c3 * mu3 * w2
    }
}

/// Queue-length vector attaining [`lp_value`].
pub fn lp_optimizer(p: &NetworkParams, w: [f64; 2]) -> Result<[f64; 3], ParamError> {
    check_workload(w)?;
    Ok(lp_optimizer_unchecked(p, w))
}

#[inline]
pub(crate) fn lp_optimizer_unchecked(p: &NetworkParams, w: [f64; 2]) -> [f64; 3] {
    let [mu1, mu2, mu3] = p.mu;
    let [w1, w2] = w;
    if class2_reduced_cost(p) > 0.0 {
        return [mu1 * w1, 0.0, mu3 * w2];
    }
    if mu3 * w2 <= mu2 * w1 {
        [mu1 / mu2 * (mu2 * w1 - mu3 * w2), mu3 * w2, 0.0]
    } else {
        [0.0, mu2 * w1, mu3 * w2 - mu2 * w1]
    }
}

/// Drift and covariance of the netput Brownian motion `X` (3-d) and of the
/// workload Brownian motion `B = M X` (2-d), where
/// `B1 = X1/mu1 + X2/mu2` and `B2 = (X2 + X3)/mu3`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianData {
    pub x_drift: [f64; 3],
    pub x_cov: [[f64; 3]; 3],
    pub b_drift: [f64; 2],
    pub b_cov: [[f64; 2]; 2],
}

impl BrownianData {
    /// The linear map from `X` to `B`.
    pub fn workload_map(mu: [f64; 3]) -> [[f64; 3]; 2] {
        [
            [1.0 / mu[0], 1.0 / mu[1], 0.0],
            [0.0, 1.0 / mu[2], 1.0 / mu[2]],
        ]
    }

    pub fn b_cholesky(&self) -> Option<[[f64; 2]; 2]> {
        linalg::psd_cholesky(&self.b_cov)
    }

    pub fn x_cholesky(&self) -> Option<[[f64; 3]; 3]> {
        linalg::psd_cholesky(&self.x_cov)
    }
}

pub fn brownian_data(p: &NetworkParams) -> BrownianData {
    let [l1, l2] = p.lambda;
    let [mu1, mu2, mu3] = p.mu;
    let [b1, b2, b3] = p.drift_offsets;
    let [sa1, sa2] = p.interarrival_scv;
    let [ss1, ss2, ss3] = p.service_scv;

    let x_drift = [mu1 * b1, mu2 * b2, mu3 * b3 - mu2 * b2];
    // Class-2 service variability enters both X2 (departures from buffer 2)
    // and X3 (arrivals to buffer 3), hence the negative cross term.
    let x_cov = [
        [sa1 * l1 + ss1 * l1, 0.0, 0.0],
        [0.0, sa2 * l2 + ss2 * l2, -ss2 * l2],
        [0.0, -ss2 * l2, ss2 * l2 + ss3 * mu3],
    ];

    let m = BrownianData::workload_map(p.mu);
    let mut b_drift = [0.0; 2];
    let mut b_cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..3 {
            b_drift[i] += m[i][k] * x_drift[k];
        }
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += m[i][k] * x_cov[k][l] * m[j][l];
                }
            }
            b_cov[i][j] = s;
        }
    }
    // Exact symmetry for downstream factorization.
    let off = 0.5 * (b_cov[0][1] + b_cov[1][0]);
    b_cov[0][1] = off;
    b_cov[1][0] = off;
    BrownianData {
        x_drift,
        x_cov,
        b_drift,
        b_cov,
    }
}

/// Flat key/value parameter document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    lambda1: f64,
    lambda2: f64,
    mu1: f64,
    mu2: f64,
    mu3: f64,
    c1: f64,
    c2: f64,
    c3: f64,
    gamma: f64,
    #[serde(default)]
    b1: f64,
    #[serde(default)]
    b2: f64,
    #[serde(default)]
    b3: f64,
    #[serde(default = "one")]
    scv_a1: f64,
    #[serde(default = "one")]
    scv_a2: f64,
    #[serde(default = "one")]
    scv_s1: f64,
    #[serde(default = "one")]
    scv_s2: f64,
    #[serde(default = "one")]
    scv_s3: f64,
}

fn one() -> f64 {
    1.0
}

impl NetworkParams {
    /// Parses the `key = value` parameter document. Offsets default to 0 and
    /// SCVs to 1 when omitted.
    pub fn from_config_str(s: &str) -> Result<Self, ParamError> {
        let d: ParamDoc = toml::from_str(s).map_err(|e| ParamError::Config(e.to_string()))?;
        NetworkParams {
            lambda: [d.lambda1, d.lambda2],
            mu: [d.mu1, d.mu2, d.mu3],
            cost: [d.c1, d.c2, d.c3],
            gamma: d.gamma,
            drift_offsets: [d.b1, d.b2, d.b3],
            interarrival_scv: [d.scv_a1, d.scv_a2],
            service_scv: [d.scv_s1, d.scv_s2, d.scv_s3],
        }
        .validated()
    }

    pub fn to_config_string(&self) -> String {
        let d = ParamDoc {
            lambda1: self.lambda[0],
            lambda2: self.lambda[1],
            mu1: self.mu[0],
            mu2: self.mu[1],
            mu3: self.mu[2],
            c1: self.cost[0],
            c2: self.cost[1],
            c3: self.cost[2],
            gamma: self.gamma,
            b1: self.drift_offsets[0],
            b2: self.drift_offsets[1],
            b3: self.drift_offsets[2],
            scv_a1: self.interarrival_scv[0],
            scv_a2: self.interarrival_scv[1],
            scv_s1: self.service_scv[0],
            scv_s2: self.service_scv[1],
            scv_s3: self.service_scv[2],
        };
        toml::to_string(&d).expect("flat numeric document always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ParamError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ParamError::Config(format!("{}: {e}", path.display())))?;
        Self::from_config_str(&s)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_config_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: [f64; 2], mu: [f64; 3], cost: [f64; 3]) -> NetworkParams {
        NetworkParams::new(lambda, mu, cost, 1.0).unwrap()
    }

    #[test]
    fn heavy_traffic_accepts_reference() {
        let p = params([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]);
        assert!(validate_heavy_traffic(&p).is_ok());
    }

    #[test]
    fn heavy_traffic_names_station2() {
        let p = params([0.5, 1.0], [1.0, 2.0, 2.0], [1.0, 1.0, 2.0]);
        match validate_heavy_traffic(&p) {
            Err(ParamError::HeavyTrafficViolation { identity, residual }) => {
                assert_eq!(identity, HeavyTrafficIdentity::Station2);
                assert!((residual - 0.5).abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_arrival_rate_rejected() {
        let e = NetworkParams::new([1.0, 0.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0], 1.0);
        assert!(matches!(
            e,
            Err(ParamError::NonPositive {
                name: "lambda2",
                ..
            })
        ));
    }

    #[test]
    fn regimes() {
        assert_eq!(
            params([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]).regime(),
            Regime::CaseIIB
        );
        assert_eq!(
            params([0.5, 1.0], [1.0, 1.0, 1.0], [0.5, 1.0, 0.4]).regime(),
            Regime::CaseI
        );
        assert_eq!(
            params([0.5, 1.0], [1.0, 1.0, 1.0], [3.0, 1.0, 1.0]).regime(),
            Regime::CaseIIC
        );
        assert_eq!(
            params([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 0.6]).regime(),
            Regime::CaseIIA
        );
        assert_eq!(
            params([0.5, 1.0], [1.0, 2.0, 1.0], [3.0, 1.0, 2.0]).regime(),
            Regime::CaseIID
        );
        // c1 mu1 - c2 mu2 + c3 mu2 = 0 sits on the Case I side of the tie.
        assert_eq!(
            params([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 0.5]).regime(),
            Regime::CaseI
        );
    }

    #[test]
    fn regime_ties() {
        // c2 mu2 - c1 mu1 = 0 with c2 < c3: IIB (non-strict).
        assert_eq!(
            params([0.5, 1.0], [2.0, 1.0, 1.0], [0.5, 1.0, 2.0]).regime(),
            Regime::CaseIIB
        );
        // c2 = c3 and c2 mu2 > c1 mu1: IIA (c2 mu2 - c3 mu2 = 0 is non-strict).
        assert_eq!(
            params([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 1.0]).regime(),
            Regime::CaseIIA
        );
    }

    #[test]
    fn lp_examples() {
        let p = NetworkParams::reference();
        assert!((lp_value(&p, [1.0, 1.0]).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(lp_value(&p, [0.0, 0.0]).unwrap(), 0.0);
        assert!((lp_value(&p, [0.5, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(lp_optimizer(&p, [1.0, 1.0]).unwrap(), [0.5, 1.0, 0.0]);
        assert_eq!(lp_optimizer(&p, [0.0, 0.0]).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(lp_optimizer(&p, [0.25, 1.0]).unwrap(), [0.0, 0.5, 0.5]);
        assert!(matches!(
            lp_value(&p, [-1.0, 0.0]),
            Err(ParamError::NegativeWorkload(..))
        ));
        assert!(matches!(
            lp_optimizer(&p, [0.0, -1e-9]),
            Err(ParamError::NegativeWorkload(..))
        ));
    }

    #[test]
    fn lp_case_i_keeps_buffer2_empty() {
        let p = params([0.5, 1.0], [1.0, 1.0, 1.0], [0.5, 1.0, 0.4]);
        let q = lp_optimizer(&p, [2.0, 1.0]).unwrap();
        assert_eq!(q, [2.0, 0.0, 1.0]);
        assert!((lp_value(&p, [2.0, 1.0]).unwrap() - (0.5 * 2.0 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn brownian_reference() {
        let bd = brownian_data(&NetworkParams::reference());
        assert_eq!(
            bd.x_cov,
            [[1.0, 0.0, 0.0], [0.0, 2.0, -1.0], [0.0, -1.0, 2.0]]
        );
        assert!((bd.b_cov[0][0] - 1.5).abs() < 1e-15);
        assert!((bd.b_cov[1][1] - 2.0).abs() < 1e-15);
        assert!((bd.b_cov[0][1] - 0.5).abs() < 1e-15);
        assert_eq!(bd.b_drift, [0.0, 0.0]);
        assert!(bd.b_cholesky().is_some());
    }

    #[test]
    fn brownian_drift_pushforward() {
        let p = NetworkParams::reference()
            .with_drift_offsets([0.3, -0.2, 0.7])
            .unwrap();
        let bd = brownian_data(&p);
        assert!((bd.b_drift[0] - 0.1).abs() < 1e-15);
        assert!((bd.b_drift[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip() {
        let p = NetworkParams::reference()
            .with_drift_offsets([0.1, -0.25, 0.5])
            .unwrap()
            .with_scvs([0.5, 1.0], [0.25, 1.0, 0.0])
            .unwrap();
        let s = p.to_config_string();
        assert!(s.contains("lambda1 = 0.5"));
        assert_eq!(NetworkParams::from_config_str(&s).unwrap(), p);
    }

    #[test]
    fn config_defaults_and_errors() {
        let s = "lambda1 = 0.5\nlambda2 = 1.0\nmu1 = 1\nmu2 = 2\nmu3 = 1\nc1 = 1\nc2 = 1\nc3 = 2\ngamma = 1\n";
        let p = NetworkParams::from_config_str(s).unwrap();
        assert_eq!(p, NetworkParams::reference());
        assert!(NetworkParams::from_config_str("lambda1 = 0.5\n").is_err());
        assert!(NetworkParams::from_config_str(&format!("{s}typo = 3\n")).is_err());
    }
}
