//! Unit-mean distributions for interarrival and service primitives, with their
//! log moment generating functions.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use thiserror::Error;

use crate::model::NetworkParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("no offered unit-mean family has squared coefficient of variation {0}")]
    UnsupportedScv(f64),
    #[error("invalid distribution: {0}")]
    Invalid(String),
}

/// A unit-mean positive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Exponential,
    /// Sum of `k` exponentials with rate `k`.
    Erlang(u32),
    /// Uniform on `[a, b]` with `a + b = 2`, `0 < a < 1`.
    Uniform {
        a: f64,
        b: f64,
    },
    Deterministic,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Exponential => f.write_str("exponential"),
            Family::Erlang(k) => write!(f, "erlang({k})"),
            Family::Uniform { a, b } => write!(f, "uniform({a},{b})"),
            Family::Deterministic => f.write_str("deterministic"),
        }
    }
}

impl Family {
    pub fn uniform(a: f64) -> Result<Self, DistError> {
        if !(a > 0.0 && a < 1.0) {
            return Err(DistError::Invalid(format!(
                "uniform lower end must lie in (0, 1), got {a}"
            )));
        }
        Ok(Family::Uniform { a, b: 2.0 - a })
    }

    pub fn erlang(k: u32) -> Result<Self, DistError> {
        match k {
            0 => Err(DistError::Invalid("erlang shape must be >= 1".into())),
            1 => Ok(Family::Exponential),
            k => Ok(Family::Erlang(k)),
        }
    }

    /// Family matching a squared coefficient of variation: 0 is
    /// deterministic, 1 exponential, `1/k` Erlang(k), and any other value
    /// below 1/3 a symmetric uniform.
    pub fn from_scv(scv: f64) -> Result<Self, DistError> {
        if !(scv.is_finite() && scv >= 0.0) {
            return Err(DistError::UnsupportedScv(scv));
        }
        if scv == 0.0 {
            return Ok(Family::Deterministic);
        }
        let k = (1.0 / scv).round();
        if k >= 1.0 && (scv * k - 1.0).abs() < 1e-9 && k <= u32::MAX as f64 {
            return Family::erlang(k as u32);
        }
        if scv < 1.0 / 3.0 {
            return Family::uniform(1.0 - (3.0 * scv).sqrt());
        }
        Err(DistError::UnsupportedScv(scv))
    }

    pub fn scv(&self) -> f64 {
        match *self {
            Family::Exponential => 1.0,
            Family::Erlang(k) => 1.0 / k as f64,
            Family::Uniform { a, b } => (b - a).powi(2) / 12.0,
            Family::Deterministic => 0.0,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Family::Exponential => Exp1.sample(rng),
            Family::Erlang(k) => {
                let g = Gamma::new(k as f64, 1.0 / k as f64).expect("positive shape and scale");
                g.sample(rng)
            }
            Family::Uniform { a, b } => rng.random_range(a..b),
            Family::Deterministic => 1.0,
        }
    }

    /// Supremum of `s` with `E e^{s u} < infinity`.
    pub fn mgf_radius(&self) -> f64 {
        match *self {
            Family::Exponential => 1.0,
            Family::Erlang(k) => k as f64,
            Family::Uniform { .. } | Family::Deterministic => f64::INFINITY,
        }
    }

    /// `log E e^{s u}`; `+inf` outside the domain.
    pub fn log_mgf(&self, s: f64) -> f64 {
        match *self {
            Family::Exponential => {
                if s < 1.0 {
                    -(-s).ln_1p()
                } else {
                    f64::INFINITY
                }
            }
            Family::Erlang(k) => {
                let k = k as f64;
                if s < k {
                    -k * (-s / k).ln_1p()
                } else {
                    f64::INFINITY
                }
            }
            Family::Uniform { a, b } => {
                let w = s * (b - a);
                if w.abs() < 1e-8 {
                    return s + w * w / 24.0;
                }
                if w > 0.0 {
                    s * b + (-(-w).exp_m1() / w).ln()
                } else {
                    s * a + (w.exp_m1() / w).ln()
                }
            }
            Family::Deterministic => s,
        }
    }

    /// Derivative of [`log_mgf`](Self::log_mgf) in `s`: the mean under the
    /// exponentially tilted law.
    pub fn log_mgf_deriv(&self, s: f64) -> f64 {
        match *self {
            Family::Exponential => 1.0 / (1.0 - s),
            Family::Erlang(k) => 1.0 / (1.0 - s / k as f64),
            Family::Uniform { a, b } => {
                let w = s * (b - a);
                if w.abs() < 1e-6 {
                    return 1.0 + s * (b - a).powi(2) / 12.0;
                }
                if w > 0.0 {
                    let e = (-w).exp();
                    (b - a * e) / (1.0 - e) - 1.0 / s
                } else {
                    let e = w.exp();
                    (b * e - a) / (e - 1.0) - 1.0 / s
                }
            }
            Family::Deterministic => 1.0,
        }
    }

    /// Support `[lo, hi]` of the distribution.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Family::Exponential | Family::Erlang(_) => (0.0, f64::INFINITY),
            Family::Uniform { a, b } => (a, b),
            Family::Deterministic => (1.0, 1.0),
        }
    }

    /// `P(u > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0;
        }
        match *self {
            Family::Exponential => (-x).exp(),
            Family::Erlang(k) => {
                let kx = k as f64 * x;
                let mut term = (-kx).exp();
                let mut sum = term;
                for j in 1..k {
                    term *= kx / j as f64;
                    sum += term;
                }
                sum.min(1.0)
            }
            Family::Uniform { a, b } => ((b - x) / (b - a)).clamp(0.0, 1.0),
            Family::Deterministic => {
                if x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Index of each primitive stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Arrival1 = 0,
    Arrival2 = 1,
    Service1 = 2,
    Service2 = 3,
    Service3 = 4,
}

/// Distributions of `u1, u2` (interarrival) and `v1, v2, v3` (service).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimitiveDistributions {
    pub streams: [Family; 5],
}

impl PrimitiveDistributions {
    pub fn exponential() -> Self {
        Self {
            streams: [Family::Exponential; 5],
        }
    }

    pub fn uniform_family(f: Family) -> Self {
        Self { streams: [f; 5] }
    }

    /// Families matching the SCVs stored in `p`.
    pub fn from_params(p: &NetworkParams) -> Result<Self, DistError> {
        let [a1, a2] = p.interarrival_scv;
        let [s1, s2, s3] = p.service_scv;
        Ok(Self {
            streams: [
                Family::from_scv(a1)?,
                Family::from_scv(a2)?,
                Family::from_scv(s1)?,
                Family::from_scv(s2)?,
                Family::from_scv(s3)?,
            ],
        })
    }

    pub fn get(&self, s: Stream) -> Family {
        self.streams[s as usize]
    }
}
