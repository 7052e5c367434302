//! Monte-Carlo simulation of the optimally reflected workload `W*`, the
//! associated Brownian control `Y*` and queue lengths `Q*`, and estimation of
//! the discounted cost `J*(0)`.
//!
//! Each replication owns a ChaCha stream keyed by `(seed, replication index)`
//! and results are reduced in index order, so estimates do not depend on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::free_boundary::FreeBoundary;
use crate::linalg::lower_mul;
use crate::model::{lp_value_unchecked, BrownianData, NetworkParams};
use crate::skorohod::{reflect_in_g, DiscretePath, GStep, PathError, ReflectedPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("covariance matrix is not positive semidefinite")]
    NonPsdCovariance,
    #[error("invalid Monte-Carlo configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub continuity_correction: bool,
}

/// `-zeta(1/2) / sqrt(2 pi)`: mean overshoot of a Gaussian random walk,
/// in units of `sigma sqrt(dt)`.
pub const BGK_BETA: f64 = 0.5825971579390106;

impl McConfig {
    /// Horizon `12 / gamma`, antithetic pairs on.
    pub fn new(dt: f64, gamma: f64, paths: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon: 12.0 / gamma,
            paths,
            seed,
            antithetic: true,
            continuity_correction: true,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(McError::BadConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > self.dt) {
            return Err(McError::BadConfig(format!(
                "horizon {} must exceed dt {}",
                self.horizon, self.dt
            )));
        }
        if self.paths < 2 {
            return Err(McError::BadConfig(format!(
                "need at least 2 paths, got {}",
                self.paths
            )));
        }
        if self.antithetic && self.paths % 2 != 0 {
            return Err(McError::BadConfig(
                "antithetic sampling needs an even path count".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    /// Number of independent replications (pairs when antithetic).
    fn units(&self) -> usize {
        if self.antithetic {
            self.paths / 2
        } else {
            self.paths
        }
    }
}

/// Running cost integrated by [`estimate_jstar`]. `Constant` is a test hook.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CostFn {
    #[default]
    Lp,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    /// `e^{-gamma T} * max_path h(W(T)) / gamma`, a proxy for the neglected tail.
    pub truncation_bound: f64,
    /// `min(w1 - psi(w2), w2)` over every grid point of every path.
    pub min_g_gap: f64,
}

impl CostEstimate {
    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &CostEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

/// ChaCha stream for replication `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Piecewise-linear quadrature weights for `int e^{-gamma u} f(u) du` over one
/// step of length `dt`, for the left and right endpoint values.
fn step_weights(gamma: f64, dt: f64) -> (f64, f64) {
    let a = gamma * dt;
    if a < 1e-8 {
        return (dt / 2.0, dt / 2.0);
    }
    let e = (-a).exp();
    ((a - 1.0 + e) / (gamma * a), (1.0 - e - a * e) / (gamma * a))
}

/// Discounted integral of samples `f(k dt)`, exact for piecewise-linear `f`.
pub fn discounted_integral(values: &[f64], gamma: f64, dt: f64) -> f64 {
    let (wl, wr) = step_weights(gamma, dt);
    let decay = (-gamma * dt).exp();
    let mut disc = 1.0;
    let mut acc = 0.0;
    for w in values.windows(2) {
        acc += disc * (wl * w[0] + wr * w[1]);
        disc *= decay;
    }
    acc
}

/// One path of `B` on the grid `0, dt, ..., steps dt` with Euler increments.
pub fn sample_b(
    bd: &BrownianData,
    cfg: &McConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(DiscretePath, DiscretePath), McError> {
    cfg.validate()?;
    let l = bd.b_cholesky().ok_or(McError::NonPsdCovariance)?;
    let sd = cfg.dt.sqrt();
    let steps = cfg.steps();
    let mut b1 = Vec::with_capacity(steps + 1);
    let mut b2 = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (0.0, 0.0);
    b1.push(x);
    b2.push(y);
    for _ in 0..steps {
        let z: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
        let d = lower_mul(&l, &z);
        x += bd.b_drift[0] * cfg.dt + sd * d[0];
        y += bd.b_drift[1] * cfg.dt + sd * d[1];
        b1.push(x);
        b2.push(y);
    }
    Ok((
        DiscretePath::uniform(cfg.dt, b1)?,
        DiscretePath::uniform(cfg.dt, b2)?,
    ))
}

/// `W*` and `I*` for path `index`, with `B` drawn from that path's stream.
pub fn simulate_wstar_path(
    fb: &FreeBoundary,
    bd: &BrownianData,
    cfg: &McConfig,
    index: u64,
) -> Result<ReflectedPair, McError> {
    let mut rng = stream_rng(cfg.seed, index);
    let (b1, b2) = sample_b(bd, cfg, &mut rng)?;
    Ok(reflect_in_g(&b1, &b2, fb)?)
}

/// `W*`, `I*` for paths `0..cfg.paths`. Materializes every path; meant for
/// modest path counts.
pub fn simulate_wstar(
    fb: &FreeBoundary,
    bd: &BrownianData,
    cfg: &McConfig,
) -> Result<Vec<ReflectedPair>, McError> {
    cfg.validate()?;
    (0..cfg.paths as u64)
        .into_par_iter()
        .map(|k| simulate_wstar_path(fb, bd, cfg, k))
        .collect()
}

/// Discounted cost of one replication unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCost {
    /// Mean over the unit (one path or an antithetic pair).
    pub cost: f64,
    /// Largest running cost at the horizon.
    pub terminal: f64,
    /// `min(w1 - psi(w2), w2)` along the unit's paths.
    pub min_g_gap: f64,
}

/// Streams the discounted cost of one path (or antithetic pair) without
/// storing it.
fn unit_cost(
    p: &NetworkParams,
    fb: &FreeBoundary,
    bd: &BrownianData,
    l: &[[f64; 2]; 2],
    cfg: &McConfig,
    cost: CostFn,
    index: u64,
) -> UnitCost {
    let mut rng = stream_rng(cfg.seed, index);
    let steps = cfg.steps();
    let sd = cfg.dt.sqrt();
    let (wl, wr) = step_weights(p.gamma, cfg.dt);
    let decay = (-p.gamma * cfg.dt).exp();
    let copies = if cfg.antithetic { 2 } else { 1 };
    let h = |w: [f64; 2]| match cost {
        CostFn::Lp => lp_value_unchecked(p, w),
        CostFn::Constant(c) => c,
    };

    let shift = cfg.continuity_correction.then(|| {
        let k = BGK_BETA * sd;
        [k * bd.b_cov[0][0].sqrt(), k * bd.b_cov[1][1].sqrt()]
    });
    let mut state = [GStep::default(); 2];
    let mut b = [[0.0_f64; 2]; 2];
    let mut prev = [h([0.0, 0.0]); 2];
    let mut acc = [0.0_f64; 2];
    let mut disc = 1.0;
    let mut gap = 0.0_f64;
    for _ in 0..steps {
        let z: [f64; 2] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        let d = lower_mul(l, &z);
        for c in 0..copies {
            let sign = if c == 0 { 1.0 } else { -1.0 };
            b[c][0] += bd.b_drift[0] * cfg.dt + sign * sd * d[0];
            b[c][1] += bd.b_drift[1] * cfg.dt + sign * sd * d[1];
            let s = match shift {
                Some(sh) => state[c].push_shifted(b[c][0], b[c][1], fb, sh),
                None => state[c].push(b[c][0], b[c][1], fb),
            };
            gap = gap.min(s.w1 - fb.eval_unchecked(s.w2)).min(s.w2);
            let cur = h([s.w1, s.w2]);
            acc[c] += disc * (wl * prev[c] + wr * cur);
            prev[c] = cur;
        }
        disc *= decay;
    }
    let mean = acc[..copies].iter().sum::<f64>() / copies as f64;
    let terminal = prev[..copies].iter().cloned().fold(0.0, f64::max);
    UnitCost {
        cost: mean,
        terminal,
        min_g_gap: gap,
    }
}

/// Per-unit discounted costs in replication order: one entry per path, or per
/// antithetic pair.
pub fn unit_costs(
    p: &NetworkParams,
    fb: &FreeBoundary,
    bd: &BrownianData,
    cfg: &McConfig,
    cost: CostFn,
) -> Result<Vec<UnitCost>, McError> {
    cfg.validate()?;
    let l = bd.b_cholesky().ok_or(McError::NonPsdCovariance)?;
    Ok((0..cfg.units() as u64)
        .into_par_iter()
        .map(|k| unit_cost(p, fb, bd, &l, cfg, cost, k))
        .collect())
}

/// Estimates `E int_0^T e^{-gamma t} h(W*(t)) dt` with its standard error.
pub fn estimate_jstar(
    p: &NetworkParams,
    fb: &FreeBoundary,
    bd: &BrownianData,
    cfg: &McConfig,
    cost: CostFn,
) -> Result<CostEstimate, McError> {
    let units = unit_costs(p, fb, bd, cfg, cost)?;
    Ok(summarize(&units, cfg, p.gamma))
}

pub(crate) fn summarize(units: &[UnitCost], cfg: &McConfig, gamma: f64) -> CostEstimate {
    let m = units.len() as f64;
    let mean = units.iter().map(|u| u.cost).sum::<f64>() / m;
    let var = units.iter().map(|u| (u.cost - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let tail = units.iter().map(|u| u.terminal).fold(0.0, f64::max);
    CostEstimate {
        mean,
        std_error: (var / m).sqrt(),
        paths: cfg.paths,
        truncation_bound: (-gamma * cfg.steps() as f64 * cfg.dt).exp() * tail / gamma,
        min_g_gap: units.iter().map(|u| u.min_g_gap).fold(0.0, f64::min),
    }
}

/// Jointly simulated netput `X` and the optimal processes built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct BcpPath {
    pub x: [DiscretePath; 3],
    pub wstar: ReflectedPair,
}

/// Simulates `X` (3-d Euler), maps it to `B` and reflects into `G`.
pub fn simulate_bcp_path(
    fb: &FreeBoundary,
    bd: &BrownianData,
    mu: [f64; 3],
    cfg: &McConfig,
    index: u64,
) -> Result<BcpPath, McError> {
    cfg.validate()?;
    let l = bd.x_cholesky().ok_or(McError::NonPsdCovariance)?;
    let m = BrownianData::workload_map(mu);
    let mut rng = stream_rng(cfg.seed, index);
    let steps = cfg.steps();
    let sd = cfg.dt.sqrt();
    let mut xs: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(steps + 1));
    let mut bs: [Vec<f64>; 2] = std::array::from_fn(|_| Vec::with_capacity(steps + 1));
    let mut x = [0.0_f64; 3];
    for k in 0..=steps {
        if k > 0 {
            let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            let d = lower_mul(&l, &z);
            for i in 0..3 {
                x[i] += bd.x_drift[i] * cfg.dt + sd * d[i];
            }
        }
        for i in 0..3 {
            xs[i].push(x[i]);
        }
        for r in 0..2 {
            bs[r].push(m[r][0] * x[0] + m[r][1] * x[1] + m[r][2] * x[2]);
        }
    }
    let [b1, b2] = bs.map(|v| DiscretePath::uniform(cfg.dt, v));
    let wstar = reflect_in_g(&b1?, &b2?, fb)?;
    let [x1, x2, x3] = xs.map(|v| DiscretePath::uniform(cfg.dt, v));
    Ok(BcpPath {
        x: [x1?, x2?, x3?],
        wstar,
    })
}

/// Optimal Brownian control `Y*` and queue lengths `Q*`, branching on
/// `mu3 W2 < mu2 W1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BcpProcesses {
    pub y: [DiscretePath; 3],
    pub q: [DiscretePath; 3],
}

/// Queue lengths read off the optimal workload.
#[inline]
pub fn optimal_queue(p: &NetworkParams, w1: f64, w2: f64) -> [f64; 3] {
    let [mu1, mu2, mu3] = p.mu;
    if mu3 * w2 < mu2 * w1 {
        [mu1 / mu2 * (mu2 * w1 - mu3 * w2), mu3 * w2, 0.0]
    } else {
        [0.0, mu2 * w1, mu3 * w2 - mu2 * w1]
    }
}

pub fn optimal_bcp_processes(p: &NetworkParams, path: &BcpPath) -> Result<BcpProcesses, McError> {
    let w = &path.wstar;
    let grid = w.w1.times();
    for other in [&w.w2, &w.i1, &w.i2, &path.x[0], &path.x[1], &path.x[2]] {
        if other.times() != grid {
            return Err(PathError::GridMismatch.into());
        }
    }
    let [mu1, mu2, mu3] = p.mu;
    let n = grid.len();
    let mut y: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut q: [Vec<f64>; 3] = std::array::from_fn(|_| Vec::with_capacity(n));
    for k in 0..n {
        let (w1, w2) = (w.w1.values()[k], w.w2.values()[k]);
        let (i1, i2) = (w.i1.values()[k], w.i2.values()[k]);
        let (x1, x3) = (path.x[0].values()[k], path.x[2].values()[k]);
        let yk = if mu3 * w2 < mu2 * w1 {
            [
                -x3 / mu2 + i1 - mu3 / mu2 * i2,
                x3 / mu2 + mu3 / mu2 * i2,
                i2,
            ]
        } else {
            [-x1 / mu1, x1 / mu1 + i1, i2]
        };
        let qk = optimal_queue(p, w1, w2);
        for i in 0..3 {
            y[i].push(yk[i]);
            q[i].push(qk[i]);
        }
    }
    let mk = |v: Vec<f64>| DiscretePath::new(grid.to_vec(), v);
    let [y1, y2, y3] = y.map(mk);
    let [q1, q2, q3] = q.map(mk);
    Ok(BcpProcesses {
        y: [y1?, y2?, y3?],
        q: [q1?, q2?, q3?],
    })
}
