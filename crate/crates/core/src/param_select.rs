//! Large-deviation rate functions of renewal primitives and the explicit
//! choice of the policy thresholds `c` and `l_bar`.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::distributions::{Family, PrimitiveDistributions, Stream};
use crate::model::{validate_heavy_traffic, NetworkParams, ParamError, Regime};
use crate::network::rates::NetworkRates;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdpError {
    #[error("rate function queried at x = {0}, need x > 0")]
    OutOfDomain(f64),
    #[error("eps = {eps} must lie in (0, nu/2) with nu = {nu}")]
    EpsTooLarge { eps: f64, nu: f64 },
    #[error("t = {t} is below 2/eps = {min}")]
    TooSmallT { t: f64, min: f64 },
    #[error("threshold selection needs Case IIB, got {0}")]
    WrongRegime(Regime),
    #[error("mu2 = {mu2} must exceed mu3 = {mu3}")]
    DegenerateRates { mu2: f64, mu3: f64 },
    #[error("empty n schedule")]
    EmptySchedule,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// Log-MGF `Lambda(l) = log E exp(l u / nu)` of a unit-mean primitive `u`
/// rescaled to mean `1/nu`, with its Legendre transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunction {
    pub family: Family,
    pub nu: f64,
}

impl RateFunction {
    pub fn new(family: Family, nu: f64) -> Self {
        Self { family, nu }
    }

    pub fn lambda(&self, l: f64) -> f64 {
        self.family.log_mgf(l / self.nu)
    }

    fn lambda_deriv(&self, l: f64) -> f64 {
        self.family.log_mgf_deriv(l / self.nu) / self.nu
    }

    /// Supremum of the domain where `Lambda` is finite.
    pub fn domain_radius(&self) -> f64 {
        self.nu * self.family.mgf_radius()
    }

    /// `Lambda*(x) = sup_l (l x - Lambda(l))`, by bisection on `Lambda'(l) = x`.
    /// Returns `+inf` outside the closure of the range of `Lambda'`.
    pub fn legendre(&self, x: f64) -> Result<f64, LdpError> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(LdpError::OutOfDomain(x));
        }
        let (lo, hi) = self.family.support();
        let (lo, hi) = (lo / self.nu, hi / self.nu);
        if lo == hi {
            return Ok(if (x - lo).abs() <= 1e-12 * lo {
                0.0
            } else {
                f64::INFINITY
            });
        }
        if x <= lo || x >= hi {
            return Ok(f64::INFINITY);
        }
        let mean = 1.0 / self.nu;
        if x == mean {
            return Ok(0.0);
        }
        let (mut a, mut b) = if x < mean {
            let mut a = -1.0;
            while self.lambda_deriv(a) >= x {
                a *= 2.0;
            }
            (a, 0.0)
        } else {
            let r = self.domain_radius();
            let mut b = if r.is_finite() { r / 2.0 } else { 1.0 };
            let mut gap = r / 2.0;
            while self.lambda_deriv(b) <= x {
                if r.is_finite() {
                    gap /= 2.0;
                    b = r - gap;
                } else {
                    b *= 2.0;
                }
            }
            (0.0, b)
        };
        for _ in 0..400 {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            if self.lambda_deriv(m) < x {
                a = m;
            } else {
                b = m;
            }
            if (b - a) <= 1e-14 * m.abs().max(1.0) {
                break;
            }
        }
        let l = 0.5 * (a + b);
        Ok((l * x - self.lambda(l)).max(0.0))
    }

    /// `(Theta_1, Theta_2)` at `(nu, eps)` for this transform.
    pub fn thetas(&self, eps: f64) -> Result<(f64, f64), LdpError> {
        let nu = self.nu;
        if !(eps > 0.0 && eps < nu / 2.0) {
            return Err(LdpError::EpsTooLarge { eps, nu });
        }
        let t1 = self.legendre((1.0 / nu) / (1.0 + eps / (3.0 * nu)))?;
        let t2 = self.legendre((1.0 / nu) * (1.0 + eps / (2.0 * nu)))?;
        Ok((t1, t2))
    }

    /// Renewal count `N(t) = sup{k : eta_1 + ... + eta_k <= t}` with
    /// `eta_i = u_i / nu_n`.
    pub fn sample_count<R: Rng + ?Sized>(&self, nu_n: f64, t: f64, rng: &mut R) -> u64 {
        let mut s = 0.0;
        let mut k = 0;
        loop {
            s += self.family.sample(rng) / nu_n;
            if s > t {
                return k;
            }
            k += 1;
        }
    }
}

/// Tail bounds for the renewal count of one primitive stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdpBounds {
    /// Bound on `P(N(t) > (nu_n + eps) t)`, first (sharper) form.
    pub upper: f64,
    /// Same, with `(nu t - 1)` in the exponent.
    pub upper_limit: f64,
    /// Bound on `P(N(t) < (nu_n - eps) t)`.
    pub lower: f64,
    /// Same, with `(nu - 2 eps) t` in the exponent.
    pub lower_limit: f64,
}

pub fn ldp_bounds(rf: &RateFunction, nu_n: f64, eps: f64, t: f64) -> Result<LdpBounds, LdpError> {
    if t < 2.0 / eps {
        return Err(LdpError::TooSmallT { t, min: 2.0 / eps });
    }
    let (t1, t2) = rf.thetas(eps)?;
    let first = rf.family.tail(eps * t / 2.0);
    Ok(LdpBounds {
        upper: (-((nu_n + eps) * t - 1.0) * t1).exp(),
        upper_limit: (-(rf.nu * t - 1.0) * t1).exp(),
        lower: (-(nu_n - eps) * t * t2).exp() + first,
        lower_limit: (-(rf.nu - 2.0 * eps) * t * t2).exp() + first,
    })
}

/// `m exp(-p0 eps t / (2 nu)) exp(Lambda(p0))`, a bound on the probability
/// that one of the first `m` inter-event times exceeds `eps t / (2 nu_n)`.
pub fn ldp_max_bound(rf: &RateFunction, eps: f64, t: f64, m: u64, p0: f64) -> f64 {
    m as f64 * (-p0 * eps * t / (2.0 * rf.nu)).exp() * rf.lambda(p0).exp()
}

/// Free choices in the threshold formulas. `None` picks the default.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectOptions {
    pub n_schedule: Vec<u64>,
    pub eps: Option<f64>,
    pub eps1: Option<f64>,
    pub p0: Option<f64>,
    /// `l_bar = lbar_factor * max(1, 3 / gamma4)`; must exceed 1.
    pub lbar_factor: f64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            n_schedule: vec![100, 400, 1600, 6400],
            eps: None,
            eps1: None,
            p0: None,
            lbar_factor: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedConstants {
    pub eps: f64,
    pub eps1: f64,
    pub p0: f64,
    /// `inf_n mu1/(2 mu2 (lambda1 + eps))` over the schedule.
    pub inf_factor: f64,
    pub theta4_terms: [f64; 3],
    pub theta4: f64,
    pub c: f64,
    pub k: f64,
    pub d: f64,
    pub theta: f64,
    pub gamma4_terms: Vec<(String, f64)>,
    pub gamma4: f64,
    pub lbar: f64,
    pub n_range: (u64, u64),
}

impl SelectedConstants {
    /// `key = value` document with `#` notes on how each value was formed.
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# eps: midpoint of (0, (mu1 - lambda1)/4) unless overridden"
        );
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(
            s,
            "# eps1: half of min(1, (mu2 - mu3)/8, mu2/2, mu3/2) unless overridden"
        );
        let _ = writeln!(s, "eps1 = {}", self.eps1);
        let _ = writeln!(
            s,
            "# p0: half the common radius of the log-MGF domains (1 if unbounded)"
        );
        let _ = writeln!(s, "p0 = {}", self.p0);
        let _ = writeln!(
            s,
            "# inf over n in [{}, {}] of mu1/(2 mu2 (lambda1 + eps))",
            self.n_range.0, self.n_range.1
        );
        let _ = writeln!(s, "inf_factor = {}", self.inf_factor);
        let _ = writeln!(s, "# theta4 terms: lambda1 Theta1[a1](lambda1, eps), mu1 Theta2[s1](mu1, eps), p0 eps/(2 mu1)");
        for (k, v) in self.theta4_terms.iter().enumerate() {
            let _ = writeln!(s, "theta4_term{} = {v}", k + 1);
        }
        let _ = writeln!(s, "theta4 = {}", self.theta4);
        let _ = writeln!(s, "# c = 1 + 4/theta4");
        let _ = writeln!(s, "c = {}", self.c);
        let _ = writeln!(s, "K = {}", self.k);
        let _ = writeln!(s, "# d = 2 c K/(mu2 - mu3)");
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "theta = {}", self.theta);
        let _ = writeln!(
            s,
            "# gamma4 terms, each with eps1 in the Theta argument and i in {{2, 3}}"
        );
        for (name, v) in &self.gamma4_terms {
            let _ = writeln!(s, "gamma4[{name}] = {v}");
        }
        let _ = writeln!(s, "gamma4 = {}", self.gamma4);
        let _ = writeln!(s, "# lbar = factor * max(1, 3/gamma4)");
        let _ = writeln!(s, "lbar = {}", self.lbar);
        s
    }
}

fn rate_functions(p: &NetworkParams, prim: &PrimitiveDistributions) -> [RateFunction; 5] {
    [
        RateFunction::new(prim.get(Stream::Arrival1), p.lambda[0]),
        RateFunction::new(prim.get(Stream::Arrival2), p.lambda[1]),
        RateFunction::new(prim.get(Stream::Service1), p.mu[0]),
        RateFunction::new(prim.get(Stream::Service2), p.mu[1]),
        RateFunction::new(prim.get(Stream::Service3), p.mu[2]),
    ]
}

/// Evaluates the threshold constants for Case IIB parameters.
pub fn select_thresholds(
    p: &NetworkParams,
    prim: &PrimitiveDistributions,
    opts: &SelectOptions,
) -> Result<SelectedConstants, LdpError> {
    let [lambda1, lambda2] = p.lambda;
    let [mu1, mu2, mu3] = p.mu;
    if mu2 <= mu3 {
        return Err(LdpError::DegenerateRates { mu2, mu3 });
    }
    match p.regime() {
        Regime::CaseIIB => {}
        r => return Err(LdpError::WrongRegime(r)),
    }
    validate_heavy_traffic(p)?;
    if opts.n_schedule.is_empty() {
        return Err(LdpError::EmptySchedule);
    }
    if !(opts.lbar_factor > 1.0) {
        return Err(LdpError::NonPositive("lbar_factor - 1"));
    }

    let rf = rate_functions(p, prim);
    let [a1, a2, s1, s2, s3] = rf;
    let eps = opts.eps.unwrap_or((mu1 - lambda1) / 8.0);
    let eps1 = opts.eps1.unwrap_or(
        0.5 * [1.0, (mu2 - mu3) / 8.0, mu2 / 2.0, mu3 / 2.0]
            .into_iter()
            .fold(f64::INFINITY, f64::min),
    );
    let radius = rf
        .iter()
        .map(|r| r.domain_radius())
        .fold(f64::INFINITY, f64::min);
    let p0 = opts.p0.unwrap_or(if radius.is_finite() {
        radius / 2.0
    } else {
        1.0
    });
    for (name, v) in [("eps", eps), ("eps1", eps1), ("p0", p0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(LdpError::NonPositive(name));
        }
    }

    let inf_factor = opts
        .n_schedule
        .iter()
        .map(|&n| {
            let r = NetworkRates::for_n(p, n);
            r.mu[0] / (2.0 * r.mu[1] * (r.lambda[0] + eps))
        })
        .fold(f64::INFINITY, f64::min);
    let theta4_terms = [
        lambda1 * a1.thetas(eps)?.0,
        mu1 * s1.thetas(eps)?.1,
        p0 * eps / (2.0 * mu1),
    ];
    let theta4 = inf_factor * theta4_terms.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = 1.0 + 4.0 / theta4;
    let k = 32.0 * mu2 + 4.0 * mu2 * (mu2 - mu3) / mu3;
    let d = 2.0 * c * k / (mu2 - mu3);
    let theta = (0.5_f64).min((mu2 - mu3) / (32.0 * c * mu3));

    let (a2t1, a2t2) = a2.thetas(eps1)?;
    let mut terms: Vec<(String, f64)> = vec![
        ("d lambda2 Theta1[a2]/K".into(), d * lambda2 * a2t1 / k),
        (
            "lambda2 Theta1[a2]/(4 mu3)".into(),
            lambda2 * a2t1 / (4.0 * mu3),
        ),
        (
            "(lambda2 - 2 eps1) Theta2[a2]/(4 mu3)".into(),
            (lambda2 - 2.0 * eps1) * a2t2 / (4.0 * mu3),
        ),
        (
            "p0 eps1/(8 mu3 lambda2)".into(),
            p0 * eps1 / (8.0 * mu3 * lambda2),
        ),
    ];
    for (i, s) in [(2, s2), (3, s3)] {
        let mui = s.nu;
        let (t1, t2) = s.thetas(eps1)?;
        terms.push((
            format!("d (theta+1)(mu{i} - 2 eps1) Theta2[s{i}]/K"),
            d * (theta + 1.0) * (mui - 2.0 * eps1) * t2 / k,
        ));
        terms.push((
            format!("d theta mu{i} Theta1[s{i}]/K"),
            d * theta * mui * t1 / k,
        ));
        terms.push((
            format!("d p0 (theta+1) eps1/(2 mu{i} K)"),
            d * p0 * (theta + 1.0) * eps1 / (2.0 * mui * k),
        ));
        terms.push((
            format!("mu{i} Theta1[s{i}]/(4 mu3)"),
            mui * t1 / (4.0 * mu3),
        ));
        terms.push((
            format!("(mu{i} - 2 eps1) Theta2[s{i}]/(4 mu3)"),
            (mui - 2.0 * eps1) * t2 / (4.0 * mu3),
        ));
        terms.push((
            format!("p0 eps1/(8 mu3 mu{i})"),
            p0 * eps1 / (8.0 * mu3 * mui),
        ));
    }
    let gamma4 = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let lbar = opts.lbar_factor * (3.0 / gamma4).max(1.0);
    let n_range = (
        *opts.n_schedule.iter().min().unwrap(),
        *opts.n_schedule.iter().max().unwrap(),
    );
    Ok(SelectedConstants {
        eps,
        eps1,
        p0,
        inf_factor,
        theta4_terms,
        theta4,
        c,
        k,
        d,
        theta,
        gamma4_terms: terms,
        gamma4,
        lbar,
        n_range,
    })
}
