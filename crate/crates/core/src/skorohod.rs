//! One-dimensional Skorohod map on piecewise-constant paths and the
//! sequential two-dimensional reflection used for the optimal workload.
//!
//! Paths are right-continuous and constant between grid points, so the
//! running-infimum formula is exact on the grid:
//!
//! ```text
//! y(t_k) = -min(0, min_{j<=k} f(t_j))      (regulator)
//! z(t_k) = f(t_k) + y(t_k)                 (reflected path)
//! ```

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::free_boundary::FreeBoundary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path must start at a nonnegative value, got {0}")]
    NegativeStart(f64),
    #[error("reflection input must start at 0, got ({0}, {1})")]
    NonzeroStart(f64, f64),
    #[error("time grid must be strictly increasing and finite (index {0})")]
    BadGrid(usize),
    #[error("path value at index {0} is not finite")]
    NotFinite(usize),
    #[error("times and values differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paths live on different grids")]
    GridMismatch,
    #[error("empty path")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

/// A right-continuous piecewise-constant path sampled on a strictly
/// increasing time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, PathError> {
        if times.len() != values.len() {
            return Err(PathError::LengthMismatch(times.len(), values.len()));
        }
        if times.is_empty() {
            return Err(PathError::Empty);
        }
        for (k, t) in times.iter().enumerate() {
            if !t.is_finite() || (k > 0 && *t <= times[k - 1]) {
                return Err(PathError::BadGrid(k));
            }
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(PathError::NotFinite(k));
        }
        Ok(Self { times, values })
    }

    /// Path on the uniform grid `0, dt, 2 dt, ...`.
    pub fn uniform(dt: f64, values: Vec<f64>) -> Result<Self, PathError> {
        let times = (0..values.len()).map(|k| k as f64 * dt).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            times: self.times.clone(),
            values,
        }
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.times == other.times
    }

    /// Two-column `time,value` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, PathError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| PathError::Csv(e.to_string()))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64, PathError> {
                s.ok_or_else(|| PathError::Csv(format!("line {}: missing column", i + 1)))?
                    .trim()
                    .parse()
                    .map_err(|e| PathError::Csv(format!("line {}: {e}", i + 1)))
            };
            times.push(parse(it.next())?);
            values.push(parse(it.next())?);
        }
        Self::new(times, values)
    }
}

/// Reflected path `z = f + y`.
pub fn gamma(f: &DiscretePath) -> Result<DiscretePath, PathError> {
    let (z, _) = solve(f)?;
    Ok(f.with_values(z))
}

/// Regulator `y = gamma(f) - f`: starts at 0, nondecreasing, increases only
/// while the reflected path sits at 0.
pub fn regulator(f: &DiscretePath) -> Result<DiscretePath, PathError> {
    let (_, y) = solve(f)?;
    Ok(f.with_values(y))
}

fn solve(f: &DiscretePath) -> Result<(Vec<f64>, Vec<f64>), PathError> {
    let v = f.values();
    if v[0] < 0.0 {
        return Err(PathError::NegativeStart(v[0]));
    }
    let mut z = Vec::with_capacity(v.len());
    let mut y = Vec::with_capacity(v.len());
    let mut reg = Reflector::default();
    for &x in v {
        let (zk, yk) = reg.push(x);
        z.push(zk);
        y.push(yk);
    }
    Ok((z, y))
}

/// Streaming form of the Skorohod map: feed path values in time order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reflector {
    push: f64,
}

impl Reflector {
    /// Returns `(z, y)` at the new grid point.
    #[inline]
    pub fn push(&mut self, x: f64) -> (f64, f64) {
        if -x > self.push {
            self.push = -x;
        }
        // z = x + y is exactly zero when the regulator just moved.
        let z = if self.push == -x { 0.0 } else { x + self.push };
        (z, self.push)
    }

    /// Reflection at the level `shift >= 0` instead of 0. Used as a
    /// continuity correction for discretely monitored Brownian paths.
    #[inline]
    pub fn push_shifted(&mut self, x: f64, shift: f64) -> (f64, f64) {
        if shift - x > self.push {
            self.push = shift - x;
            return (shift, self.push);
        }
        (x + self.push, self.push)
    }

    pub fn regulator(&self) -> f64 {
        self.push
    }
}

/// Output of [`reflect_in_g`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPair {
    pub w1: DiscretePath,
    pub w2: DiscretePath,
    pub i1: DiscretePath,
    pub i2: DiscretePath,
}

/// Reflects `(b1, b2)` into `G = {w1 >= psi(w2), w2 >= 0}`:
/// `w2 = gamma(b2)`, then `w1 = gamma(b1 - psi(w2)) + psi(w2)`.
///
/// One pass in time order: `w2` is a closed-form reflection of `b2`, so `psi`
/// is evaluated at the already-reflected `w2` at each grid point.
pub fn reflect_in_g(
    b1: &DiscretePath,
    b2: &DiscretePath,
    psi: &FreeBoundary,
) -> Result<ReflectedPair, PathError> {
    if !b1.same_grid(b2) {
        return Err(PathError::GridMismatch);
    }
    if b1.values()[0] != 0.0 || b2.values()[0] != 0.0 {
        return Err(PathError::NonzeroStart(b1.values()[0], b2.values()[0]));
    }
    let n = b1.len();
    let (mut w1, mut w2, mut i1, mut i2) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut step = GStep::default();
    for (&x1, &x2) in b1.values().iter().zip(b2.values()) {
        let s = step.push(x1, x2, psi);
        w1.push(s.w1);
        w2.push(s.w2);
        i1.push(s.i1);
        i2.push(s.i2);
    }
    Ok(ReflectedPair {
        w1: b1.with_values(w1),
        w2: b1.with_values(w2),
        i1: b1.with_values(i1),
        i2: b1.with_values(i2),
    })
}

/// State of the sequential reflection at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GState {
    pub w1: f64,
    pub w2: f64,
    pub i1: f64,
    pub i2: f64,
}

/// Streaming version of [`reflect_in_g`], used by the Monte-Carlo engine to
/// avoid materializing paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct GStep {
    r1: Reflector,
    r2: Reflector,
}

impl GStep {
    #[inline]
    pub fn push(&mut self, b1: f64, b2: f64, psi: &FreeBoundary) -> GState {
        let (w2, i2) = self.r2.push(b2);
        let edge = psi.eval_unchecked(w2);
        let (z1, i1) = self.r1.push(b1 - edge);
        GState {
            w1: z1 + edge,
            w2,
            i1,
            i2,
        }
    }

    /// [`push`](Self::push) with both reflections raised by `shift`.
    #[inline]
    pub fn push_shifted(
        &mut self,
        b1: f64,
        b2: f64,
        psi: &FreeBoundary,
        shift: [f64; 2],
    ) -> GState {
        let (w2, i2) = self.r2.push_shifted(b2, shift[1]);
        let edge = psi.eval_unchecked(w2);
        let (z1, i1) = self.r1.push_shifted(b1 - edge, shift[0]);
        GState {
            w1: z1 + edge,
            w2,
            i1,
            i2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(v: &[f64]) -> DiscretePath {
        DiscretePath::new(vec![0.0, 0.5, 1.0], v.to_vec()).unwrap()
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(
            gamma(&path(&[0.0, -0.5, -1.0])).unwrap().values(),
            &[0.0, 0.0, 0.0]
        );
        assert_eq!(
            gamma(&path(&[1.0, 2.0, 3.0])).unwrap().values(),
            &[1.0, 2.0, 3.0]
        );
        assert_eq!(
            gamma(&path(&[1.0, -1.0, 0.0])).unwrap().values(),
            &[1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn regulator_examples() {
        assert_eq!(
            regulator(&path(&[1.0, -1.0, 0.0])).unwrap().values(),
            &[0.0, 1.0, 1.0]
        );
        assert_eq!(
            regulator(&path(&[1.0, 2.0, 0.5])).unwrap().values(),
            &[0.0, 0.0, 0.0]
        );
        assert_eq!(
            regulator(&path(&[0.0, -2.0, -3.0])).unwrap().values(),
            &[0.0, 2.0, 3.0]
        );
    }

    #[test]
    fn negative_start_rejected() {
        assert_eq!(
            gamma(&path(&[-0.1, 0.0, 0.0])),
            Err(PathError::NegativeStart(-0.1))
        );
        assert!(regulator(&path(&[-1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            DiscretePath::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            Err(PathError::BadGrid(1))
        ));
        assert!(matches!(
            DiscretePath::new(vec![0.0], vec![1.0, 1.0]),
            Err(PathError::LengthMismatch(..))
        ));
        assert!(matches!(
            DiscretePath::new(vec![0.0], vec![f64::NAN]),
            Err(PathError::NotFinite(0))
        ));
    }

    #[test]
    fn reflect_zero_input() {
        let fb = FreeBoundary::zero(1.0, 0.5);
        let z = path(&[0.0, 0.0, 0.0]);
        let r = reflect_in_g(&z, &z, &fb).unwrap();
        for p in [&r.w1, &r.w2, &r.i1, &r.i2] {
            assert_eq!(p.values(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn reflect_decoupled_when_psi_zero() {
        let fb = FreeBoundary::zero(10.0, 0.5);
        let b1 = path(&[0.0, -0.7, 0.4]);
        let b2 = path(&[0.0, 0.3, -0.2]);
        let r = reflect_in_g(&b1, &b2, &fb).unwrap();
        assert_eq!(r.w1, gamma(&b1).unwrap());
        assert_eq!(r.w2, gamma(&b2).unwrap());
    }

    #[test]
    fn reflect_hand_trace() {
        // psi(w2) = 0.5 w2 (the cone with slope mu3/mu2 = 0.5).
        let fb = FreeBoundary::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0], 0.5).unwrap();
        let b1 = path(&[0.0, 0.0, 0.0]);
        let b2 = path(&[0.0, 1.0, 1.0]);
        let r = reflect_in_g(&b1, &b2, &fb).unwrap();
        assert_eq!(r.w2.values(), &[0.0, 1.0, 1.0]);
        assert_eq!(r.w1.values(), &[0.0, 0.5, 0.5]);
        assert_eq!(r.i1.values(), &[0.0, 0.5, 0.5]);
        assert_eq!(r.i2.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn reflect_errors() {
        let fb = FreeBoundary::zero(1.0, 0.5);
        let b = path(&[0.1, 0.0, 0.0]);
        let z = path(&[0.0, 0.0, 0.0]);
        assert!(matches!(
            reflect_in_g(&b, &z, &fb),
            Err(PathError::NonzeroStart(..))
        ));
        let other = DiscretePath::new(vec![0.0, 0.25, 1.0], vec![0.0; 3]).unwrap();
        assert_eq!(reflect_in_g(&z, &other, &fb), Err(PathError::GridMismatch));
    }

    #[test]
    fn csv_round_trip() {
        let p = path(&[1.0, -1.0, 0.25]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = DiscretePath::read_csv(&buf[..]).unwrap();
        assert_eq!(p, q);
    }
}
