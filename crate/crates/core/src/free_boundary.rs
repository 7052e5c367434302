//! Numerical solution of the two-dimensional workload control problem and
//! extraction of the free boundary `psi`.
//!
//! The value function is approximated by a Markov-chain approximation on the
//! square `[0, w_max]^2`: a continuous-time chain on the grid, locally
//! consistent with the workload Brownian motion, with instantaneous pushes in
//! `+e1` and `+e2` modelling the singular controls. Out-of-grid neighbours are
//! clamped, which reflects the chain at both axes and at the truncation edge.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{lp_value_unchecked, BrownianData, NetworkParams, Regime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FbError {
    #[error(
        "value iteration did not converge after {iterations} sweeps (last update {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("no free-boundary solver for regime {0}")]
    WrongRegime(Regime),
    #[error("value grid is not converged")]
    NotConverged,
    #[error("free boundary evaluated at negative workload {0}")]
    NegativeInput(f64),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("covariance is not diagonally dominant at spacing {h1}x{h2}; refine the grid")]
    NotLocallyConsistent { h1: f64, h2: f64 },
    #[error("parse: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<io::Error> for FbError {
    fn from(e: io::Error) -> Self {
        FbError::Io(e.to_string())
    }
}

/// Default truncation `8 sqrt(lambda_max(b_cov) / gamma)`.
pub fn default_w_max(bd: &BrownianData, gamma: f64) -> f64 {
    8.0 * (crate::linalg::max_eigen_2x2(&bd.b_cov) / gamma).sqrt()
}

/// Square grid `[0, w_max]^2` with `n` cells per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub w_max: f64,
}

impl GridSpec {
    pub fn new(n: usize, w_max: f64) -> Result<Self, FbError> {
        if n < 2 {
            return Err(FbError::BadGrid(format!("need at least 2 cells, got {n}")));
        }
        if !(w_max.is_finite() && w_max > 0.0) {
            return Err(FbError::BadGrid(format!(
                "w_max must be positive, got {w_max}"
            )));
        }
        Ok(Self { n, w_max })
    }

    /// Grid with spacing as close to `h` as an integer cell count allows.
    pub fn from_spacing(h: f64, w_max: f64) -> Result<Self, FbError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(FbError::BadGrid(format!(
                "spacing must be positive, got {h}"
            )));
        }
        Self::new((w_max / h).round() as usize, w_max)
    }

    pub fn h(&self) -> f64 {
        self.w_max / self.n as f64
    }
}

/// Running cost used by the solver. `Zero` is a test hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunningCost {
    #[default]
    Lp,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop when the sup-norm change over one sweep drops below this.
    pub tol_vi: f64,
    /// Tolerance for classifying which branch attains the minimum.
    pub tol_act: f64,
    /// Gradient threshold relative to `h(corner) / gamma`.
    pub tol_grad_rel: f64,
    pub max_sweeps: usize,
    pub running_cost: RunningCost,
    /// Start from the interpolated solution on a grid twice as coarse.
    pub multilevel: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_vi: 1e-8,
            tol_act: 1e-6,
            tol_grad_rel: 1e-6,
            max_sweeps: 500_000,
            running_cost: RunningCost::Lp,
            multilevel: true,
        }
    }
}

/// Which branches of the dynamic-programming minimum are active at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const CONTINUE: u8 = 1;
    pub const PUSH_E1: u8 = 2;
    pub const PUSH_E2: u8 = 4;

    pub fn from_bits(bits: u8) -> Self {
        Self(bits & 7)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn push_e1(self) -> bool {
        self.0 & Self::PUSH_E1 != 0
    }

    pub fn push_e2(self) -> bool {
        self.0 & Self::PUSH_E2 != 0
    }

    /// No singular control active.
    pub fn is_none(self) -> bool {
        self.0 & (Self::PUSH_E1 | Self::PUSH_E2) == 0
    }
}

/// Value function on the grid, indexed `(i, j)` for the node `(i h1, j h2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub h1: f64,
    pub h2: f64,
    pub n1: usize,
    pub n2: usize,
    values: Vec<f64>,
    action_mask: Vec<ActionSet>,
    pub converged: bool,
    pub sweeps: usize,
    pub last_update: f64,
    /// Gradient threshold used by [`extract_boundary`].
    pub tol_grad: f64,
}

impl ValueGrid {
    /// Grid filled from `f(w1, w2)`, marked converged. Test hook.
    pub fn from_fn(h: f64, n: usize, tol_grad: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                values.push(f(i as f64 * h, j as f64 * h));
            }
        }
        Self {
            h1: h,
            h2: h,
            n1: n,
            n2: n,
            action_mask: vec![ActionSet::default(); values.len()],
            values,
            converged: true,
            sweeps: 0,
            last_update: 0.0,
            tol_grad,
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.n1 + 1) + i
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn action(&self, i: usize, j: usize) -> ActionSet {
        self.action_mask[self.idx(i, j)]
    }

    /// Adds `delta` at one node (fault injection for tests).
    pub fn perturb(&mut self, i: usize, j: usize, delta: f64) {
        let k = self.idx(i, j);
        self.values[k] += delta;
    }

    /// Value at the origin.
    pub fn origin(&self) -> f64 {
        self.values[0]
    }

    /// Largest `J(x) - J(x + h e_k)` over the grid; nonpositive for a
    /// coordinatewise nondecreasing `J`.
    pub fn monotonicity_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..=self.n2 {
            for i in 0..=self.n1 {
                let v = self.value(i, j);
                if i < self.n1 {
                    worst = worst.max(v - self.value(i + 1, j));
                }
                if j < self.n2 {
                    worst = worst.max(v - self.value(i, j + 1));
                }
            }
        }
        worst
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "# value_grid h1={} h2={} n1={} n2={} converged={} sweeps={} last_update={} tol_grad={}",
            self.h1, self.h2, self.n1, self.n2, self.converged, self.sweeps, self.last_update, self.tol_grad
        )?;
        writeln!(w, "i,j,J,mask")?;
        for j in 0..=self.n2 {
            for i in 0..=self.n1 {
                let k = self.idx(i, j);
                writeln!(
                    w,
                    "{i},{j},{},{}",
                    self.values[k],
                    self.action_mask[k].bits()
                )?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, FbError> {
        let mut lines = r.lines();
        let header = next_line(&mut lines)?;
        let meta = parse_header(&header, "value_grid")?;
        let get = |k: &str| -> Result<&str, FbError> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| FbError::Parse(format!("header missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64, FbError> {
            get(k)?
                .parse()
                .map_err(|e| FbError::Parse(format!("{k}: {e}")))
        };
        let int = |k: &str| -> Result<usize, FbError> {
            get(k)?
                .parse()
                .map_err(|e| FbError::Parse(format!("{k}: {e}")))
        };
        let (n1, n2) = (int("n1")?, int("n2")?);
        let len = (n1 + 1) * (n2 + 1);
        let mut values = vec![f64::NAN; len];
        let mut action_mask = vec![ActionSet::default(); len];
        next_line(&mut lines)?;
        let mut seen = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(FbError::Parse(format!("bad row `{line}`")));
            }
            let bad = |e: &dyn std::fmt::Display| FbError::Parse(format!("row `{line}`: {e}"));
            let i: usize = f[0].parse().map_err(|e| bad(&e))?;
            let j: usize = f[1].parse().map_err(|e| bad(&e))?;
            if i > n1 || j > n2 {
                return Err(FbError::Parse(format!("node ({i},{j}) outside grid")));
            }
            let k = j * (n1 + 1) + i;
            values[k] = f[2].parse().map_err(|e| bad(&e))?;
            action_mask[k] = ActionSet::from_bits(f[3].parse().map_err(|e| bad(&e))?);
            seen += 1;
        }
        if seen != len {
            return Err(FbError::Parse(format!("expected {len} rows, got {seen}")));
        }
        Ok(Self {
            h1: num("h1")?,
            h2: num("h2")?,
            n1,
            n2,
            values,
            action_mask,
            converged: get("converged")? == "true",
            sweeps: int("sweeps")?,
            last_update: num("last_update")?,
            tol_grad: num("tol_grad")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FbError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FbError> {
        let f = std::fs::File::open(path)
            .map_err(|e| FbError::Io(format!("{}: {e}", path.display())))?;
        Self::read(io::BufReader::new(f))
    }
}

fn next_line<B: BufRead>(lines: &mut io::Lines<B>) -> Result<String, FbError> {
    lines
        .next()
        .ok_or_else(|| FbError::Parse("unexpected end of file".into()))?
        .map_err(FbError::from)
}

fn parse_header(line: &str, kind: &str) -> Result<Vec<(String, String)>, FbError> {
    let rest = line
        .strip_prefix("# ")
        .and_then(|s| s.strip_prefix(kind))
        .ok_or_else(|| FbError::Parse(format!("expected `# {kind}` header")))?;
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| FbError::Parse(format!("bad header field `{kv}`")))
        })
        .collect()
}

/// Jump intensities of the locally consistent chain. Index order:
/// `+e1, -e1, +e2, -e2, (+,+), (-,-), (+,-), (-,+)`.
#[derive(Debug, Clone, Copy)]
struct Rates {
    r: [f64; 8],
    total: f64,
}

impl Rates {
    fn new(bd: &BrownianData, h1: f64, h2: f64) -> Result<Self, FbError> {
        let [[a11, a12], [_, a22]] = bd.b_cov;
        let [b1, b2] = bd.b_drift;
        let cross = a12.abs() / (h1 * h2);
        let d1 = a11 / (h1 * h1) - cross;
        let d2 = a22 / (h2 * h2) - cross;
        if d1 < -1e-12 || d2 < -1e-12 {
            return Err(FbError::NotLocallyConsistent { h1, h2 });
        }
        let (d1, d2) = (d1.max(0.0) / 2.0, d2.max(0.0) / 2.0);
        let pos = a12.max(0.0) / (2.0 * h1 * h2);
        let neg = (-a12).max(0.0) / (2.0 * h1 * h2);
        let r = [
            d1 + b1.max(0.0) / h1,
            d1 + (-b1).max(0.0) / h1,
            d2 + b2.max(0.0) / h2,
            d2 + (-b2).max(0.0) / h2,
            pos,
            pos,
            neg,
            neg,
        ];
        Ok(Self {
            r,
            total: r.iter().sum(),
        })
    }
}

/// Neighbour offsets of a node after clamping to the grid.
#[inline]
fn neighbours(i: usize, j: usize, n1: usize, n2: usize, stride: usize) -> [usize; 8] {
    let ip = (i + 1).min(n1);
    let im = i.saturating_sub(1);
    let jp = (j + 1).min(n2);
    let jm = j.saturating_sub(1);
    let at = |a: usize, b: usize| b * stride + a;
    [
        at(ip, j),
        at(im, j),
        at(i, jp),
        at(i, jm),
        at(ip, jp),
        at(im, jm),
        at(ip, jm),
        at(im, jp),
    ]
}

struct Problem<'a> {
    p: &'a NetworkParams,
    rates: Rates,
    n: usize,
    cost: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(
        p: &'a NetworkParams,
        bd: &BrownianData,
        n: usize,
        h: f64,
        rc: RunningCost,
    ) -> Result<Self, FbError> {
        let rates = Rates::new(bd, h, h)?;
        let mut cost = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                cost.push(match rc {
                    RunningCost::Lp => lp_value_unchecked(p, [i as f64 * h, j as f64 * h]),
                    RunningCost::Zero => 0.0,
                });
            }
        }
        Ok(Self { p, rates, n, cost })
    }

    /// Bellman update at one node. Returns the new value.
    #[inline]
    fn update(&self, j_vals: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n;
        let stride = n + 1;
        let k = j * stride + i;
        let nb = neighbours(i, j, n, n, stride);
        let mut acc = self.cost[k];
        for (r, &y) in self.rates.r.iter().zip(&nb) {
            acc += r * j_vals[y];
        }
        let mut v = acc / (self.rates.total + self.p.gamma);
        if i < n {
            v = v.min(j_vals[k + 1]);
        }
        if j < n {
            v = v.min(j_vals[k + stride]);
        }
        v
    }

    fn sweep(&self, vals: &mut [f64], forward: bool) -> f64 {
        let n = self.n;
        let mut delta = 0.0_f64;
        let mut visit = |i: usize, j: usize, vals: &mut [f64]| {
            let v = self.update(vals, i, j);
            let k = j * (n + 1) + i;
            delta = delta.max((v - vals[k]).abs());
            vals[k] = v;
        };
        if forward {
            for j in 0..=n {
                for i in 0..=n {
                    visit(i, j, vals);
                }
            }
        } else {
            for j in (0..=n).rev() {
                for i in (0..=n).rev() {
                    visit(i, j, vals);
                }
            }
        }
        delta
    }

    /// Dynamic residual `h + L_h J - gamma J` at node `k`.
    fn dynamic_residual(&self, vals: &[f64], i: usize, j: usize) -> f64 {
        let stride = self.n + 1;
        let k = j * stride + i;
        let nb = neighbours(i, j, self.n, self.n, stride);
        let mut gen = 0.0;
        for (r, &y) in self.rates.r.iter().zip(&nb) {
            gen += r * (vals[y] - vals[k]);
        }
        self.cost[k] + gen - self.p.gamma * vals[k]
    }
}

fn check_regime(p: &NetworkParams) -> Result<(), FbError> {
    match p.regime() {
        Regime::CaseIIA | Regime::CaseIIB | Regime::CaseIIC => Ok(()),
        r => Err(FbError::WrongRegime(r)),
    }
}

/// Solves the discrete dynamic-programming fixed point
/// `J = min(E[discounted one step] , J(x + h e1), J(x + h e2))`
/// by Gauss-Seidel value iteration with alternating sweep direction.
pub fn solve_value(
    p: &NetworkParams,
    bd: &BrownianData,
    grid: GridSpec,
    opts: &SolveOptions,
) -> Result<ValueGrid, FbError> {
    check_regime(p)?;
    let n = grid.n;
    let h = grid.h();
    let prob = Problem::new(p, bd, n, h, opts.running_cost)?;

    let mut vals = if opts.multilevel && n >= 40 && n % 2 == 0 {
        let coarse = solve_value(
            p,
            bd,
            GridSpec {
                n: n / 2,
                w_max: grid.w_max,
            },
            opts,
        )?;
        prolong(&coarse, n)
    } else {
        vec![0.0; (n + 1) * (n + 1)]
    };

    let mut sweeps = 0;
    let mut delta = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        let forward = sweeps % 2 == 0;
        delta = prob.sweep(&mut vals, forward);
        sweeps += 1;
        // Finish on a backward sweep: each node then sees its final +e1/+e2
        // neighbours, so the push inequalities hold exactly.
        if delta < opts.tol_vi && !forward {
            break;
        }
    }
    if delta >= opts.tol_vi {
        return Err(FbError::NoConvergence {
            iterations: sweeps,
            residual: delta,
        });
    }

    let corner = lp_value_unchecked(p, [grid.w_max, grid.w_max]);
    let tol_grad = opts.tol_grad_rel * corner / p.gamma;
    let action_mask = classify_actions(&prob, &vals, opts.tol_act);
    Ok(ValueGrid {
        h1: h,
        h2: h,
        n1: n,
        n2: n,
        values: vals,
        action_mask,
        converged: true,
        sweeps,
        last_update: delta,
        tol_grad,
    })
}

fn classify_actions(prob: &Problem, vals: &[f64], tol_act: f64) -> Vec<ActionSet> {
    let n = prob.n;
    let stride = n + 1;
    let mut mask = Vec::with_capacity(vals.len());
    for j in 0..=n {
        for i in 0..=n {
            let k = j * stride + i;
            let nb = neighbours(i, j, n, n, stride);
            let mut acc = prob.cost[k];
            for (r, &y) in prob.rates.r.iter().zip(&nb) {
                acc += r * vals[y];
            }
            let cont = acc / (prob.rates.total + prob.p.gamma);
            let e1 = if i < n { vals[k + 1] } else { f64::INFINITY };
            let e2 = if j < n {
                vals[k + stride]
            } else {
                f64::INFINITY
            };
            let m = cont.min(e1).min(e2);
            let mut bits = 0;
            if cont <= m + tol_act {
                bits |= ActionSet::CONTINUE;
            }
            if e1 <= m + tol_act {
                bits |= ActionSet::PUSH_E1;
            }
            if e2 <= m + tol_act {
                bits |= ActionSet::PUSH_E2;
            }
            mask.push(ActionSet(bits));
        }
    }
    mask
}

/// Bilinear interpolation of a coarse solution onto a grid with `n` cells.
fn prolong(coarse: &ValueGrid, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let (ci, cj) = (i / 2, j / 2);
            let (ci1, cj1) = ((i + 1) / 2, (j + 1) / 2);
            let v = 0.25
                * (coarse.value(ci, cj)
                    + coarse.value(ci1, cj)
                    + coarse.value(ci, cj1)
                    + coarse.value(ci1, cj1));
            out.push(v);
        }
    }
    out
}

/// Maximum over non-truncation nodes of
/// `|min(h + L_h J - gamma J, D+_1 J, D+_2 J)|`.
pub fn hjb_residual(
    vg: &ValueGrid,
    p: &NetworkParams,
    bd: &BrownianData,
    rc: RunningCost,
) -> Result<f64, FbError> {
    if vg.n1 != vg.n2 || vg.h1 != vg.h2 {
        return Err(FbError::BadGrid("residual needs a square grid".into()));
    }
    let prob = Problem::new(p, bd, vg.n1, vg.h1, rc)?;
    let mut worst = 0.0_f64;
    for j in 0..vg.n2 {
        for i in 0..vg.n1 {
            let dynamic = prob.dynamic_residual(&vg.values, i, j);
            let d1 = (vg.value(i + 1, j) - vg.value(i, j)) / vg.h1;
            let d2 = (vg.value(i, j + 1) - vg.value(i, j)) / vg.h2;
            worst = worst.max(dynamic.min(d1).min(d2).abs());
        }
    }
    Ok(worst)
}

/// Tabulated free boundary with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBoundary {
    w2_knots: Vec<f64>,
    psi_values: Vec<f64>,
    slope_cap: f64,
    uniform_step: Option<f64>,
}

impl FreeBoundary {
    pub fn new(w2_knots: Vec<f64>, psi_values: Vec<f64>, slope_cap: f64) -> Result<Self, FbError> {
        if w2_knots.len() != psi_values.len() || w2_knots.len() < 2 {
            return Err(FbError::BadGrid(
                "need at least two knots with one value each".into(),
            ));
        }
        if w2_knots[0] != 0.0 {
            return Err(FbError::BadGrid("first knot must be 0".into()));
        }
        if w2_knots
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(FbError::BadGrid(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        if psi_values.iter().any(|v| !v.is_finite()) {
            return Err(FbError::BadGrid("boundary values must be finite".into()));
        }
        if !(slope_cap.is_finite() && slope_cap >= 0.0) {
            return Err(FbError::BadGrid(format!(
                "slope cap must be >= 0, got {slope_cap}"
            )));
        }
        let step = w2_knots[1];
        let last = *w2_knots.last().unwrap();
        let uniform = w2_knots
            .iter()
            .enumerate()
            .all(|(k, &x)| (x - k as f64 * step).abs() <= 1e-12 * last.max(1.0));
        Ok(Self {
            w2_knots,
            psi_values,
            slope_cap,
            uniform_step: uniform.then_some(step),
        })
    }

    /// `psi = 0`: normal reflection on both axes.
    pub fn zero(w_max: f64, slope_cap: f64) -> Self {
        Self::new(vec![0.0, w_max], vec![0.0, 0.0], slope_cap).expect("valid two-knot boundary")
    }

    /// The upper envelope `psi(w2) = slope_cap * w2`.
    pub fn cone(w_max: f64, slope_cap: f64) -> Self {
        Self::new(vec![0.0, w_max], vec![0.0, slope_cap * w_max], slope_cap)
            .expect("valid two-knot boundary")
    }

    pub fn knots(&self) -> &[f64] {
        &self.w2_knots
    }

    pub fn values(&self) -> &[f64] {
        &self.psi_values
    }

    pub fn slope_cap(&self) -> f64 {
        self.slope_cap
    }

    pub fn eval(&self, w2: f64) -> Result<f64, FbError> {
        if w2 < 0.0 || w2.is_nan() {
            return Err(FbError::NegativeInput(w2));
        }
        Ok(self.eval_unchecked(w2))
    }

    /// Like [`eval`](Self::eval) but treats negative input as 0.
    #[inline]
    pub fn eval_unchecked(&self, w2: f64) -> f64 {
        let x = &self.w2_knots;
        let y = &self.psi_values;
        let last = x.len() - 1;
        if w2 <= 0.0 {
            return y[0];
        }
        if w2 >= x[last] {
            let slope =
                ((y[last] - y[last - 1]) / (x[last] - x[last - 1])).clamp(0.0, self.slope_cap);
            return y[last] + slope * (w2 - x[last]);
        }
        let k = match self.uniform_step {
            Some(h) => ((w2 / h) as usize).min(last - 1),
            None => x.partition_point(|&k| k <= w2) - 1,
        };
        let t = (w2 - x[k]) / (x[k + 1] - x[k]);
        y[k] + t * (y[k + 1] - y[k])
    }

    /// Worst violation of `0 <= psi <= slope_cap * w2`, monotonicity and the
    /// Lipschitz bound `slope_cap + slack` over the knots. Zero when all hold.
    pub fn invariant_violation(&self, slack: f64) -> f64 {
        let mut worst = 0.0_f64;
        for (&w, &v) in self.w2_knots.iter().zip(&self.psi_values) {
            worst = worst.max(-v).max(v - self.slope_cap * w);
        }
        for k in 1..self.w2_knots.len() {
            let dv = self.psi_values[k] - self.psi_values[k - 1];
            let dw = self.w2_knots[k] - self.w2_knots[k - 1];
            worst = worst.max(-dv).max(dv / dw - self.slope_cap - slack);
        }
        worst
    }

    pub fn sup_norm(&self) -> f64 {
        self.psi_values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "# free_boundary slope_cap={} knots={}",
            self.slope_cap,
            self.w2_knots.len()
        )?;
        writeln!(w, "w2,psi")?;
        for (x, y) in self.w2_knots.iter().zip(&self.psi_values) {
            writeln!(w, "{x},{y}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, FbError> {
        let mut lines = r.lines();
        let header = next_line(&mut lines)?;
        let meta = parse_header(&header, "free_boundary")?;
        let slope_cap: f64 = meta
            .iter()
            .find(|(k, _)| k == "slope_cap")
            .ok_or_else(|| FbError::Parse("header missing `slope_cap`".into()))?
            .1
            .parse()
            .map_err(|e| FbError::Parse(format!("slope_cap: {e}")))?;
        next_line(&mut lines)?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| FbError::Parse(format!("bad row `{line}`")))?;
            xs.push(
                a.trim()
                    .parse()
                    .map_err(|e| FbError::Parse(format!("`{line}`: {e}")))?,
            );
            ys.push(
                b.trim()
                    .parse()
                    .map_err(|e| FbError::Parse(format!("`{line}`: {e}")))?,
            );
        }
        Self::new(xs, ys, slope_cap)
    }

    pub fn save(&self, path: &Path) -> Result<(), FbError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FbError> {
        let f = std::fs::File::open(path)
            .map_err(|e| FbError::Io(format!("{}: {e}", path.display())))?;
        Self::read(io::BufReader::new(f))
    }

    /// One-line summary for logs.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{} knots on [0, {}], max psi {:.6}",
            self.w2_knots.len(),
            self.w2_knots.last().unwrap(),
            self.sup_norm()
        );
        s
    }
}

/// Reads the free boundary off a converged value grid.
///
/// For each `w2` row the raw boundary is the end of the run of nodes, starting
/// at `w1 = 0`, whose forward difference in `w1` is at most `tol_grad`. The
/// raw profile is then projected: isotonic regression, clipping to the cone
/// `[0, slope w2]`, and a forward pass enforcing the Lipschitz bound `slope`.
pub fn extract_boundary(vg: &ValueGrid, p: &NetworkParams) -> Result<FreeBoundary, FbError> {
    if !vg.converged {
        return Err(FbError::NotConverged);
    }
    let slope = p.boundary_slope();
    let raw: Vec<f64> = (0..=vg.n2)
        .map(|j| {
            let mut k = 0;
            while k < vg.n1 && (vg.value(k + 1, j) - vg.value(k, j)) / vg.h1 <= vg.tol_grad {
                k += 1;
            }
            k as f64 * vg.h1
        })
        .collect();
    let knots: Vec<f64> = (0..=vg.n2).map(|j| j as f64 * vg.h2).collect();
    let mut psi = isotonic(&raw);
    for (v, &w) in psi.iter_mut().zip(&knots) {
        *v = v.clamp(0.0, slope * w);
    }
    for k in 1..psi.len() {
        let cap = psi[k - 1] + slope * (knots[k] - knots[k - 1]);
        if psi[k] > cap {
            psi[k] = cap;
        }
    }
    FreeBoundary::new(knots, psi, slope)
}

/// Least-squares nondecreasing fit (pool-adjacent-violators, unit weights).
pub fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::brownian_data;

    fn reference() -> NetworkParams {
        NetworkParams::reference()
    }

    fn case_iia() -> NetworkParams {
        NetworkParams::new([0.5, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 0.6], 1.0).unwrap()
    }

    #[test]
    fn psi_eval_examples() {
        let fb = FreeBoundary::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.3, 0.5], 0.5).unwrap();
        assert_eq!(fb.eval(0.0).unwrap(), 0.0);
        assert!((fb.eval(1.5).unwrap() - 0.4).abs() < 1e-15);
        assert!((fb.eval(3.0).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(fb.eval(-1.0), Err(FbError::NegativeInput(-1.0)));
    }

    #[test]
    fn extrapolation_slope_is_clipped() {
        let steep = FreeBoundary::new(vec![0.0, 1.0], vec![0.0, 2.0], 0.5).unwrap();
        assert!((steep.eval(3.0).unwrap() - 3.0).abs() < 1e-15);
        let falling = FreeBoundary::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 0.4], 0.5).unwrap();
        assert_eq!(falling.eval(5.0).unwrap(), 0.4);
    }

    #[test]
    fn nonuniform_knots_interpolate() {
        let fb = FreeBoundary::new(vec![0.0, 0.1, 1.0], vec![0.0, 0.05, 0.2], 0.5).unwrap();
        assert!((fb.eval(0.55).unwrap() - 0.125).abs() < 1e-15);
        assert!((fb.eval(0.05).unwrap() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn isotonic_pools_violators() {
        assert_eq!(isotonic(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic(&[]), Vec::<f64>::new());
    }

    #[test]
    fn flat_in_w1_gives_cone() {
        let p = reference();
        let vg = ValueGrid::from_fn(0.1, 20, 1e-9, |_, w2| w2);
        let fb = extract_boundary(&vg, &p).unwrap();
        for (&w, &v) in fb.knots().iter().zip(fb.values()) {
            assert!((v - 0.5 * w).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_in_w1_gives_zero() {
        let vg = ValueGrid::from_fn(0.1, 20, 1e-9, |w1, w2| w1 + w2);
        let fb = extract_boundary(&vg, &reference()).unwrap();
        assert_eq!(fb.sup_norm(), 0.0);
    }

    #[test]
    fn unconverged_grid_rejected() {
        let mut vg = ValueGrid::from_fn(0.1, 4, 1e-9, |w1, _| w1);
        vg.converged = false;
        assert_eq!(
            extract_boundary(&vg, &reference()),
            Err(FbError::NotConverged)
        );
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let p = reference();
        let bd = brownian_data(&p);
        let opts = SolveOptions {
            running_cost: RunningCost::Zero,
            ..Default::default()
        };
        let vg = solve_value(&p, &bd, GridSpec::new(20, 4.0).unwrap(), &opts).unwrap();
        assert!(vg.values().iter().all(|&v| v == 0.0));
        assert_eq!(hjb_residual(&vg, &p, &bd, RunningCost::Zero).unwrap(), 0.0);
    }

    #[test]
    fn wrong_regime_rejected() {
        let p = NetworkParams::new([0.5, 1.0], [1.0, 2.0, 1.0], [0.5, 1.0, 0.4], 1.0).unwrap();
        let bd = brownian_data(&p);
        let r = solve_value(
            &p,
            &bd,
            GridSpec::new(10, 4.0).unwrap(),
            &SolveOptions::default(),
        );
        assert_eq!(r, Err(FbError::WrongRegime(Regime::CaseI)));
    }

    #[test]
    fn coarse_reference_solve_is_consistent() {
        let p = reference();
        let bd = brownian_data(&p);
        let grid = GridSpec::new(40, default_w_max(&bd, p.gamma)).unwrap();
        let opts = SolveOptions::default();
        let vg = solve_value(&p, &bd, grid, &opts).unwrap();
        assert!(vg.monotonicity_violation() <= 1e-9);
        let res = hjb_residual(&vg, &p, &bd, RunningCost::Lp).unwrap();
        assert!(
            res <= 10.0 * opts.tol_vi / (grid.h() * grid.h()),
            "residual {res}"
        );
        let fb = extract_boundary(&vg, &p).unwrap();
        assert!(fb.invariant_violation(p.boundary_slope() * grid.h()) <= 1e-12);
        assert!(fb.sup_norm() > 0.0);
    }

    #[test]
    fn case_iia_boundary_collapses() {
        let p = case_iia();
        assert_eq!(p.regime(), Regime::CaseIIA);
        let bd = brownian_data(&p);
        let grid = GridSpec::new(40, default_w_max(&bd, p.gamma)).unwrap();
        let vg = solve_value(&p, &bd, grid, &SolveOptions::default()).unwrap();
        let fb = extract_boundary(&vg, &p).unwrap();
        assert!(fb.sup_norm() <= grid.h());
        for j in 1..grid.n {
            for i in 1..grid.n {
                assert!(vg.action(i, j).is_none(), "push at ({i},{j})");
            }
        }
    }

    #[test]
    fn perturbation_raises_residual_locally() {
        let p = reference();
        let bd = brownian_data(&p);
        let grid = GridSpec::new(20, 6.0).unwrap();
        let mut vg = solve_value(&p, &bd, grid, &SolveOptions::default()).unwrap();
        let base = hjb_residual(&vg, &p, &bd, RunningCost::Lp).unwrap();
        vg.perturb(10, 10, 1.0);
        let spiked = hjb_residual(&vg, &p, &bd, RunningCost::Lp).unwrap();
        assert!(spiked > 1e3 * base.max(1e-9));
    }

    #[test]
    fn round_trips() {
        let vg = ValueGrid::from_fn(0.25, 4, 1e-7, |a, b| a * 0.1 + b / 3.0);
        let mut buf = Vec::new();
        vg.write(&mut buf).unwrap();
        assert_eq!(ValueGrid::read(&buf[..]).unwrap(), vg);

        let fb = FreeBoundary::new(vec![0.0, 0.1, 0.2], vec![0.0, 1.0 / 30.0, 0.07], 0.5).unwrap();
        let mut buf = Vec::new();
        fb.write(&mut buf).unwrap();
        assert_eq!(FreeBoundary::read(&buf[..]).unwrap(), fb);
    }
}
