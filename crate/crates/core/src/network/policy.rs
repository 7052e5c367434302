//! Server-1 scheduling rule of the threshold policy and the comparison variants.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::rates::NetworkRates;
use crate::free_boundary::FreeBoundary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("threshold {name} = {value} must exceed {min}")]
    BadThreshold {
        name: &'static str,
        value: f64,
        min: f64,
    },
    #[error("n = {n} is below the smallest admissible n = {min}")]
    InvalidN { n: u64, min: u64 },
    #[error("unknown policy variant {0:?}")]
    UnknownVariant(String),
}

/// `c`, `l0`, `g0` of the policy and the constant `d` of the idleness
/// diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyThresholds {
    pub c: f64,
    pub l0: f64,
    pub g0: f64,
    pub d: f64,
}

/// Integer levels at a given `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub ln: i64,
    pub cn: i64,
    pub dn: f64,
}

impl PolicyThresholds {
    pub fn new(c: f64, l0: f64, g0: f64, d: f64) -> Result<Self, PolicyError> {
        for (name, value, min) in [
            ("c", c, 1.0),
            ("l0", l0, 1.0),
            ("g0", g0, 0.0),
            ("d", d, 0.0),
        ] {
            if !(value > min && value.is_finite()) {
                return Err(PolicyError::BadThreshold { name, value, min });
            }
        }
        Ok(Self { c, l0, g0, d })
    }

    pub fn levels(&self, n: u64) -> Levels {
        let log_n = (n as f64).ln();
        Levels {
            ln: (self.l0 * log_n).floor() as i64,
            cn: (self.c * self.l0 * log_n).floor() as i64,
            dn: self.d * self.l0 * log_n,
        }
    }

    /// Whether `Cn - Ln - 1 >= 1` and `(mu1/mu2)(Cn - Ln + 2) >= 1` at `n`.
    pub fn admissible(&self, n: u64, rates: &NetworkRates) -> bool {
        if n < 2 {
            return false;
        }
        let lv = self.levels(n);
        lv.cn - lv.ln - 1 >= 1 && (rates.mu[0] / rates.mu[1]) * (lv.cn - lv.ln + 2) as f64 >= 1.0
    }

    /// Smallest `n` from which every larger `n` up to `limit` is admissible.
    pub fn min_n(&self, limit: u64, rates: impl Fn(u64) -> NetworkRates) -> Option<u64> {
        let mut first = None;
        for n in 2..=limit {
            match (self.admissible(n, &rates(n)), first) {
                (true, None) => first = Some(n),
                (false, Some(_)) => first = None,
                _ => {}
            }
        }
        first
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Serve1,
    Serve2,
    IdleServer1,
}

impl Action {
    pub fn class(self) -> Option<usize> {
        match self {
            Action::Serve1 => Some(0),
            Action::Serve2 => Some(1),
            Action::IdleServer1 => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Serve1 => "serve1",
            Action::Serve2 => "serve2",
            Action::IdleServer1 => "idle",
        }
    }
}

/// Which leaf of the decision tree produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// `Q3 - (mu2/mu1) Q1 < Ln` and buffer 3 is near `Cn` or buffer 2 is empty.
    ASafetyServe1,
    /// Same condition but buffer 1 is empty; class 2 is served instead.
    AFallbackServe2,
    AServe2,
    AEmptyIdle,
    BServe1,
    BServe2,
    /// The only branch that idles server 1 while it has work.
    BFreeBoundaryIdle,
    BEmptyIdle,
    /// Fixed-priority and other variants outside the tree.
    Variant,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::ASafetyServe1 => "A-serve1",
            Branch::AFallbackServe2 => "A-fallback-serve2",
            Branch::AServe2 => "A-serve2",
            Branch::AEmptyIdle => "A-empty-idle",
            Branch::BServe1 => "B-serve1",
            Branch::BServe2 => "B-serve2",
            Branch::BFreeBoundaryIdle => "B-free-boundary-idle",
            Branch::BEmptyIdle => "B-empty-idle",
            Branch::Variant => "variant",
        }
    }
}

/// Server-1 rule used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyVariant {
    /// The threshold policy with the supplied free boundary.
    Paper,
    /// Threshold policy with `psi = 0`.
    PsiZero,
    /// Threshold policy that serves class 2 instead of idling.
    NoIdling,
    /// Strict preemptive priority to class 1.
    Priority1,
    /// Strict preemptive priority to class 2.
    Priority2,
}

impl PolicyVariant {
    pub const ALL: [PolicyVariant; 5] = [
        PolicyVariant::Paper,
        PolicyVariant::PsiZero,
        PolicyVariant::NoIdling,
        PolicyVariant::Priority1,
        PolicyVariant::Priority2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyVariant::Paper => "paper",
            PolicyVariant::PsiZero => "psi-zero",
            PolicyVariant::NoIdling => "no-idling",
            PolicyVariant::Priority1 => "priority1",
            PolicyVariant::Priority2 => "priority2",
        }
    }
}

impl fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyVariant {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| PolicyError::UnknownVariant(s.to_string()))
    }
}

/// Everything `decide_server1` needs besides the queue lengths.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub levels: Levels,
    pub rates: NetworkRates,
    pub sqrt_n: f64,
    pub g0: f64,
    pub fb: &'a FreeBoundary,
    pub variant: PolicyVariant,
}

impl<'a> PolicyContext<'a> {
    pub fn new(
        th: &PolicyThresholds,
        n: u64,
        rates: NetworkRates,
        fb: &'a FreeBoundary,
        variant: PolicyVariant,
    ) -> Self {
        Self {
            levels: th.levels(n),
            rates,
            sqrt_n: (n as f64).sqrt(),
            g0: th.g0,
            fb,
            variant,
        }
    }

    /// Unscaled workload `(Q1/mu1 + Q2/mu2, (Q2 + Q3)/mu3)`.
    pub fn workload(&self, q: [u64; 3]) -> [f64; 2] {
        let mu = self.rates.mu;
        [
            q[0] as f64 / mu[0] + q[1] as f64 / mu[1],
            (q[1] + q[2]) as f64 / mu[2],
        ]
    }

    /// Whether the state lies in `A = {Q3 - (mu2/mu1) Q1 < Ln}`.
    pub fn in_a(&self, q: [u64; 3]) -> bool {
        q[2] as f64 - (self.rates.mu[1] / self.rates.mu[0]) * (q[0] as f64) < self.levels.ln as f64
    }

    /// `sqrt(n) psi(W2 / sqrt(n))` at the unscaled workload `w2`.
    pub fn boundary_at(&self, w2: f64) -> f64 {
        match self.variant {
            PolicyVariant::PsiZero => 0.0,
            _ => self.sqrt_n * self.fb.eval_unchecked(w2 / self.sqrt_n),
        }
    }
}

/// Server-1 action at post-event queue lengths `q`, with the branch taken.
pub fn decide_server1(q: [u64; 3], ctx: &PolicyContext) -> (Action, Branch) {
    let [q1, q2, q3] = q;
    match ctx.variant {
        PolicyVariant::Priority1 => {
            let a = if q1 > 0 {
                Action::Serve1
            } else if q2 > 0 {
                Action::Serve2
            } else {
                Action::IdleServer1
            };
            return (a, Branch::Variant);
        }
        PolicyVariant::Priority2 => {
            let a = if q2 > 0 {
                Action::Serve2
            } else if q1 > 0 {
                Action::Serve1
            } else {
                Action::IdleServer1
            };
            return (a, Branch::Variant);
        }
        _ => {}
    }
    let lv = ctx.levels;
    if ctx.in_a(q) {
        if q3 as i64 >= lv.cn - 1 || q2 == 0 {
            if q1 > 0 {
                (Action::Serve1, Branch::ASafetyServe1)
            } else if q2 > 0 {
                (Action::Serve2, Branch::AFallbackServe2)
            } else {
                (Action::IdleServer1, Branch::AEmptyIdle)
            }
        } else {
            (Action::Serve2, Branch::AServe2)
        }
    } else {
        let mu = ctx.rates.mu;
        let cap = (mu[0] / mu[1]) * (lv.cn - lv.ln + 2) as f64;
        if q1 as f64 >= cap || (q2 == 0 && q1 > 0) {
            (Action::Serve1, Branch::BServe1)
        } else if q2 > 0 {
            let w = ctx.workload(q);
            if w[0] - ctx.boundary_at(w[1]) >= ctx.g0 || ctx.variant == PolicyVariant::NoIdling {
                (Action::Serve2, Branch::BServe2)
            } else {
                (Action::IdleServer1, Branch::BFreeBoundaryIdle)
            }
        } else {
            (Action::IdleServer1, Branch::BEmptyIdle)
        }
    }
}
