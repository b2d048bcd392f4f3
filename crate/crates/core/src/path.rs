//! Paths in a base chart and the operations the transport laws quantify over.
//!
//! A [`Path`] is immutable data: an [`Interval`] domain plus a shared
//! description of the curve (a closed formula, a spline through samples, a
//! concatenation of pieces, a point, or a reparametrization of another path).
//! Restriction only narrows the domain and keeps the description shared, so a
//! restricted path can always be recognised as a piece of its parent with
//! [`Path::is_restriction_of`].
//!
//! All coordinates are chart coordinates of a single chart; there is no atlas.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

/// A point of the base chart (or of any coordinate space).
pub type Point = DVector<f64>;

/// Default number of samples for pointwise path comparison.
pub const DEFAULT_COMPARE_SAMPLES: usize = 101;
/// Default tolerance for pointwise path comparison.
pub const DEFAULT_COMPARE_TOL: f64 = 1e-9;
/// Tolerance used when checking that endpoints of composed paths coincide.
pub const ENDPOINT_TOL: f64 = 1e-9;

const ARC_LENGTH_PANELS: usize = 2000;

fn slack(lo: f64, hi: f64) -> f64 {
    1e-12 * lo.abs().max(hi.abs()).max(1.0)
}

/// Which one-sided limit to take at a breakpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// A closed real interval `[lo, hi]`; `lo == hi` is allowed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return domain_err(format!("interval bounds must be finite, got [{lo}, {hi}]"));
        }
        if lo > hi {
            return domain_err(format!("interval [{lo}, {hi}] has lo > hi"));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(r: f64) -> Self {
        Interval { lo: r, hi: r }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    /// Membership with a rounding allowance of about 1e-12 relative.
    pub fn contains(&self, t: f64) -> bool {
        let eps = slack(self.lo, self.hi);
        t >= self.lo - eps && t <= self.hi + eps
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    /// Returns `t` snapped into the interval if it is inside up to rounding.
    pub fn snap(&self, t: f64) -> Result<f64> {
        if self.contains(t) {
            Ok(t.clamp(self.lo, self.hi))
        } else {
            domain_err(format!("parameter {t} outside {self}"))
        }
    }

    /// `n` uniformly spaced parameters including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.lo],
            _ => (0..n)
                .map(|i| {
                    if i == n - 1 {
                        self.hi
                    } else {
                        self.lo + self.len() * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
        }
    }

    fn normalize(&self, t: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (t - self.lo) / self.len()
        }
    }

    fn denormalize(&self, u: f64) -> f64 {
        if u >= 1.0 {
            self.hi
        } else {
            self.lo + self.len() * u
        }
    }
}

fn to_point(v: &[f64]) -> Point {
    DVector::from_column_slice(v)
}

/// Closed-form curves, identified by name in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "formula", rename_all = "kebab-case")]
pub enum Formula {
    Constant {
        point: Vec<f64>,
    },
    /// `origin + t * direction`
    Line {
        origin: Vec<f64>,
        direction: Vec<f64>,
    },
    /// `sum_k coeffs[k] * t^k`
    Polynomial {
        coeffs: Vec<Vec<f64>>,
    },
    /// Planar circle `center + radius * (cos(rate t + phase), sin(rate t + phase))`.
    Circle {
        center: [f64; 2],
        radius: f64,
        rate: f64,
        phase: f64,
    },
    /// Componentwise `offset_i + amplitude_i * sin(frequency_i t + phase_i)`.
    Harmonic {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    },
}

impl Formula {
    fn dim(&self) -> usize {
        match self {
            Formula::Constant { point } => point.len(),
            Formula::Line { origin, .. } => origin.len(),
            Formula::Polynomial { coeffs } => coeffs.first().map_or(0, Vec::len),
            Formula::Circle { .. } => 2,
            Formula::Harmonic { offset, .. } => offset.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Model(format!("formula: {msg}")));
        match self {
            Formula::Constant { point } if point.is_empty() => bad("empty point"),
            Formula::Line { origin, direction } if origin.len() != direction.len() || origin.is_empty() => {
                bad("origin/direction dimension mismatch")
            }
            Formula::Polynomial { coeffs } => {
                let d = self.dim();
                if coeffs.is_empty() || d == 0 || coeffs.iter().any(|c| c.len() != d) {
                    bad("polynomial coefficients must be nonempty vectors of equal length")
                } else {
                    Ok(())
                }
            }
            Formula::Circle { radius, .. } if !radius.is_finite() => bad("radius must be finite"),
            Formula::Harmonic { offset, amplitude, frequency, phase } => {
                let d = offset.len();
                if d == 0 || amplitude.len() != d || frequency.len() != d || phase.len() != d {
                    bad("harmonic component lists must have equal nonzero length")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, t: f64) -> Point {
        match self {
            Formula::Constant { point } => to_point(point),
            Formula::Line { origin, direction } => to_point(origin) + to_point(direction) * t,
            Formula::Polynomial { coeffs } => {
                // Horner
                let mut acc = to_point(coeffs.last().unwrap());
                for c in coeffs.iter().rev().skip(1) {
                    acc = acc * t + to_point(c);
                }
                acc
            }
            Formula::Circle { center, radius, rate, phase } => {
                let a = rate * t + phase;
                DVector::from_vec(vec![center[0] + radius * a.cos(), center[1] + radius * a.sin()])
            }
            Formula::Harmonic { offset, amplitude, frequency, phase } => DVector::from_iterator(
                offset.len(),
                (0..offset.len()).map(|i| offset[i] + amplitude[i] * (frequency[i] * t + phase[i]).sin()),
            ),
        }
    }

    fn velocity(&self, t: f64) -> Point {
        match self {
            Formula::Constant { point } => DVector::zeros(point.len()),
            Formula::Line { direction, .. } => to_point(direction),
            Formula::Polynomial { coeffs } => {
                let d = self.dim();
                let mut acc = DVector::zeros(d);
                for (k, c) in coeffs.iter().enumerate().skip(1).rev() {
                    acc = acc * t + to_point(c) * k as f64;
                }
                acc
            }
            Formula::Circle { radius, rate, phase, .. } => {
                let a = rate * t + phase;
                DVector::from_vec(vec![-radius * rate * a.sin(), radius * rate * a.cos()])
            }
            Formula::Harmonic { amplitude, frequency, phase, offset } => DVector::from_iterator(
                offset.len(),
                (0..offset.len()).map(|i| amplitude[i] * frequency[i] * (frequency[i] * t + phase[i]).cos()),
            ),
        }
    }
}

/// Interpolation through sampled knots: linear (order 1) or natural cubic (order 3).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SplineRecord", into = "SplineRecord")]
pub struct Spline {
    knots: Vec<f64>,
    values: Vec<Point>,
    order: u8,
    second: Vec<Point>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SplineRecord {
    knots: Vec<f64>,
    values: Vec<Vec<f64>>,
    #[serde(default = "default_order")]
    order: u8,
}

fn default_order() -> u8 {
    3
}

impl TryFrom<SplineRecord> for Spline {
    type Error = Error;
    fn try_from(r: SplineRecord) -> Result<Self> {
        Spline::new(r.knots, r.values.iter().map(|v| to_point(v)).collect(), r.order)
    }
}

impl From<Spline> for SplineRecord {
    fn from(s: Spline) -> Self {
        SplineRecord {
            knots: s.knots,
            values: s.values.iter().map(|v| v.as_slice().to_vec()).collect(),
            order: s.order,
        }
    }
}

impl Spline {
    pub fn new(knots: Vec<f64>, values: Vec<Point>, order: u8) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Model("sampled path needs >= 2 knots with one value each".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Model("knots must be finite and strictly increasing".into()));
        }
        let d = values[0].len();
        if d == 0 || values.iter().any(|v| v.len() != d) {
            return Err(Error::Model("sample values must share a nonzero dimension".into()));
        }
        if order != 1 && order != 3 {
            return Err(Error::Model(format!("unsupported interpolation order {order}")));
        }
        let second = if order == 3 {
            natural_second_derivatives(&knots, &values)
        } else {
            Vec::new()
        };
        Ok(Spline { knots, values, order, second })
    }

    fn domain(&self) -> Interval {
        Interval { lo: self.knots[0], hi: *self.knots.last().unwrap() }
    }

    /// Index `i` of the segment `[k_i, k_{i+1}]` used for `t` on the given side.
    fn segment(&self, t: f64, side: Side) -> usize {
        side_segment(&self.knots, t, side)
    }

    fn eval(&self, t: f64) -> Point {
        let i = self.segment(t, Side::Right);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let (y0, y1) = (&self.values[i], &self.values[i + 1]);
        if self.order == 1 {
            let w = (t - x0) / h;
            return y0 * (1.0 - w) + y1 * w;
        }
        let (m0, m1) = (&self.second[i], &self.second[i + 1]);
        let a = x1 - t;
        let b = t - x0;
        m0 * (a * a * a / (6.0 * h))
            + m1 * (b * b * b / (6.0 * h))
            + (y0 / h - m0 * (h / 6.0)) * a
            + (y1 / h - m1 * (h / 6.0)) * b
    }

    fn velocity(&self, t: f64, side: Side) -> Point {
        let i = self.segment(t, side);
        let (x0, x1) = (self.knots[i], self.knots[i + 1]);
        let h = x1 - x0;
        let (y0, y1) = (&self.values[i], &self.values[i + 1]);
        if self.order == 1 {
            return (y1 - y0) / h;
        }
        let (m0, m1) = (&self.second[i], &self.second[i + 1]);
        let a = x1 - t;
        let b = t - x0;
        -m0 * (a * a / (2.0 * h)) + m1 * (b * b / (2.0 * h)) - (y0 / h - m0 * (h / 6.0))
            + (y1 / h - m1 * (h / 6.0))
    }
}

/// Second derivatives of the natural cubic spline (tridiagonal solve, Thomas algorithm).
fn natural_second_derivatives(x: &[f64], y: &[Point]) -> Vec<Point> {
    let n = x.len();
    let d = y[0].len();
    let mut m = vec![DVector::zeros(d); n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut diag = vec![0.0; inner];
    let mut upper = vec![0.0; inner];
    let mut lower = vec![0.0; inner];
    let mut rhs = vec![DVector::zeros(d); inner];
    for k in 0..inner {
        let i = k + 1;
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        lower[k] = h0;
        diag[k] = 2.0 * (h0 + h1);
        upper[k] = h1;
        rhs[k] = (&y[i + 1] - &y[i]) * (6.0 / h1) - (&y[i] - &y[i - 1]) * (6.0 / h0);
    }
    for k in 1..inner {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        let prev = rhs[k - 1].clone();
        rhs[k] -= prev * w;
    }
    let mut sol = vec![DVector::zeros(d); inner];
    sol[inner - 1] = &rhs[inner - 1] / diag[inner - 1];
    for k in (0..inner - 1).rev() {
        sol[k] = (&rhs[k] - &sol[k + 1] * upper[k]) / diag[k];
    }
    m[1..=inner].clone_from_slice(&sol[..inner]);
    m
}

/// Shape of a reparametrization on the normalized unit interval: an increasing
/// bijection `g: [0,1] -> [0,1]` with `g(0) = 0`, `g(1) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Affine,
    /// `u^exponent`, exponent >= 1.
    Power { exponent: f64 },
    /// `u + amplitude * sin(2 pi u) / (2 pi)`, |amplitude| < 1.
    Warp { amplitude: f64 },
    /// Monotone piecewise-linear through `(0,0)`, the given interior knots, `(1,1)`.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        match self {
            Shape::Affine => Ok(()),
            Shape::Power { exponent } if *exponent >= 1.0 && exponent.is_finite() => Ok(()),
            Shape::Power { exponent } => {
                Err(Error::Reparam(format!("power exponent {exponent} must be >= 1")))
            }
            Shape::Warp { amplitude } if amplitude.abs() < 1.0 => Ok(()),
            Shape::Warp { amplitude } => {
                Err(Error::Reparam(format!("warp amplitude {amplitude} must satisfy |a| < 1")))
            }
            Shape::PiecewiseLinear { .. } => {
                let pts = self.pl_points();
                if pts.windows(2).all(|w| w[1][0] > w[0][0] && w[1][1] > w[0][1]) {
                    Ok(())
                } else {
                    Err(Error::Reparam("piecewise-linear knots must be strictly increasing inside (0,1)".into()))
                }
            }
        }
    }

    fn pl_points(&self) -> Vec<[f64; 2]> {
        match self {
            Shape::PiecewiseLinear { knots } => {
                let mut pts = Vec::with_capacity(knots.len() + 2);
                pts.push([0.0, 0.0]);
                pts.extend(knots.iter().copied());
                pts.push([1.0, 1.0]);
                pts
            }
            _ => Vec::new(),
        }
    }

    fn value(&self, u: f64) -> f64 {
        match self {
            Shape::Affine => u,
            Shape::Power { exponent } => u.max(0.0).powf(*exponent),
            Shape::Warp { amplitude } => u + amplitude * (2.0 * std::f64::consts::PI * u).sin() / (2.0 * std::f64::consts::PI),
            Shape::PiecewiseLinear { .. } => {
                let pts = self.pl_points();
                let i = pl_segment(&pts, u, 0, Side::Right);
                let (a, b) = (pts[i], pts[i + 1]);
                a[1] + (b[1] - a[1]) * (u - a[0]) / (b[0] - a[0])
            }
        }
    }

    fn slope(&self, u: f64, side: Side) -> f64 {
        match self {
            Shape::Affine => 1.0,
            Shape::Power { exponent } => exponent * u.max(0.0).powf(exponent - 1.0),
            Shape::Warp { amplitude } => 1.0 + amplitude * (2.0 * std::f64::consts::PI * u).cos(),
            Shape::PiecewiseLinear { .. } => {
                let pts = self.pl_points();
                let i = pl_segment(&pts, u, 0, side);
                let (a, b) = (pts[i], pts[i + 1]);
                (b[1] - a[1]) / (b[0] - a[0])
            }
        }
    }

    fn inverse_value(&self, v: f64) -> f64 {
        match self {
            Shape::Affine => v,
            Shape::Power { exponent } => v.max(0.0).powf(1.0 / exponent),
            Shape::Warp { .. } => {
                // g is increasing with g' >= 1 - |a| > 0: safeguarded Newton.
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                let mut u = v;
                for _ in 0..100 {
                    let f = self.value(u) - v;
                    if f.abs() < 1e-15 {
                        break;
                    }
                    if f > 0.0 {
                        hi = u;
                    } else {
                        lo = u;
                    }
                    let next = u - f / self.slope(u, Side::Right);
                    u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
                }
                u
            }
            Shape::PiecewiseLinear { .. } => {
                let pts = self.pl_points();
                let i = pl_segment(&pts, v, 1, Side::Right);
                let (a, b) = (pts[i], pts[i + 1]);
                a[0] + (b[0] - a[0]) * (v - a[1]) / (b[1] - a[1])
            }
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            Shape::PiecewiseLinear { knots } => knots.iter().map(|k| k[0]).collect(),
            _ => Vec::new(),
        }
    }
}

fn pl_segment(pts: &[[f64; 2]], x: f64, axis: usize, side: Side) -> usize {
    let knots: Vec<f64> = pts.iter().map(|p| p[axis]).collect();
    side_segment(&knots, x, side)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Preserving,
    Reversing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ReparamKind {
    Shaped {
        #[serde(flatten)]
        shape: Shape,
        orientation: Orientation,
    },
    Compose {
        outer: Box<Reparam>,
        inner: Box<Reparam>,
    },
}

/// A bijection `source -> target` used to change the parameter of a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reparam {
    source: Interval,
    target: Interval,
    #[serde(flatten)]
    kind: ReparamKind,
}

impl Reparam {
    pub fn new(source: Interval, target: Interval, shape: Shape, orientation: Orientation) -> Result<Self> {
        shape.validate()?;
        if source.is_degenerate() != target.is_degenerate() {
            return Err(Error::Reparam(format!(
                "cannot map {source} bijectively onto {target}"
            )));
        }
        Ok(Reparam { source, target, kind: ReparamKind::Shaped { shape, orientation } })
    }

    pub fn identity(domain: Interval) -> Self {
        Reparam {
            source: domain,
            target: domain,
            kind: ReparamKind::Shaped { shape: Shape::Affine, orientation: Orientation::Preserving },
        }
    }

    pub fn affine(source: Interval, target: Interval) -> Result<Self> {
        Self::new(source, target, Shape::Affine, Orientation::Preserving)
    }

    pub fn reversing(source: Interval, target: Interval) -> Result<Self> {
        Self::new(source, target, Shape::Affine, Orientation::Reversing)
    }

    /// `outer ∘ inner`; requires `inner.target == outer.source`.
    pub fn compose(outer: &Reparam, inner: &Reparam) -> Result<Self> {
        if inner.target != outer.source {
            return Err(Error::Reparam(format!(
                "cannot compose: inner target {} differs from outer source {}",
                inner.target, outer.source
            )));
        }
        Ok(Reparam {
            source: inner.source,
            target: outer.target,
            kind: ReparamKind::Compose { outer: Box::new(outer.clone()), inner: Box::new(inner.clone()) },
        })
    }

    pub fn source(&self) -> Interval {
        self.source
    }

    pub fn target(&self) -> Interval {
        self.target
    }

    pub fn orientation(&self) -> Orientation {
        match &self.kind {
            ReparamKind::Shaped { orientation, .. } => *orientation,
            ReparamKind::Compose { outer, inner } => {
                if outer.orientation() == inner.orientation() {
                    Orientation::Preserving
                } else {
                    Orientation::Reversing
                }
            }
        }
    }

    pub fn map(&self, t: f64) -> f64 {
        match &self.kind {
            ReparamKind::Shaped { shape, orientation } => {
                if self.source.is_degenerate() {
                    return self.target.lo;
                }
                let u = self.source.normalize(t).clamp(0.0, 1.0);
                let v = shape.value(u);
                let v = match orientation {
                    Orientation::Preserving => v,
                    Orientation::Reversing => 1.0 - v,
                };
                self.target.denormalize(v)
            }
            ReparamKind::Compose { outer, inner } => outer.map(inner.map(t)),
        }
    }

    pub fn inverse_map(&self, t: f64) -> f64 {
        match &self.kind {
            ReparamKind::Shaped { shape, orientation } => {
                if self.target.is_degenerate() {
                    return self.source.lo;
                }
                let v = self.target.normalize(t).clamp(0.0, 1.0);
                let v = match orientation {
                    Orientation::Preserving => v,
                    Orientation::Reversing => 1.0 - v,
                };
                self.source.denormalize(shape.inverse_value(v))
            }
            ReparamKind::Compose { outer, inner } => inner.inverse_map(outer.inverse_map(t)),
        }
    }

    /// One-sided derivative of `map` at `t`.
    pub fn derivative(&self, t: f64, side: Side) -> f64 {
        match &self.kind {
            ReparamKind::Shaped { shape, orientation } => {
                if self.source.is_degenerate() {
                    return 1.0;
                }
                let u = self.source.normalize(t).clamp(0.0, 1.0);
                let scale = self.target.len() / self.source.len();
                match orientation {
                    Orientation::Preserving => scale * shape.slope(u, side),
                    Orientation::Reversing => -scale * shape.slope(u, side.flip()),
                }
            }
            ReparamKind::Compose { outer, inner } => {
                let s = inner.map(t);
                let inner_side = if inner.orientation() == Orientation::Preserving { side } else { side.flip() };
                outer.derivative(s, inner_side) * inner.derivative(t, side)
            }
        }
    }

    /// Interior source parameters where the derivative may jump.
    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            ReparamKind::Shaped { shape, .. } => {
                shape.kinks().into_iter().map(|u| self.source.denormalize(u)).collect()
            }
            ReparamKind::Compose { outer, inner } => {
                let mut ks = inner.kinks();
                ks.extend(outer.kinks().into_iter().map(|k| inner.inverse_map(k)));
                ks
            }
        }
    }

    /// True when `map` is strictly increasing on an `n`-point grid of the source.
    pub fn is_increasing_on_grid(&self, n: usize) -> bool {
        let g = self.source.grid(n);
        g.windows(2).all(|w| self.map(w[1]) > self.map(w[0]))
    }

    /// Largest `|map(inverse_map(t)) - t|` over an `n`-point grid of the target.
    pub fn inverse_residual(&self, n: usize) -> f64 {
        self.target
            .grid(n)
            .into_iter()
            .map(|t| (self.map(self.inverse_map(t)) - t).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PathRepr {
    Analytic(Formula),
    Piecewise {
        pieces: Vec<Path>,
        breakpoints: Vec<f64>,
    },
    Sampled(Spline),
    Point {
        point: Vec<f64>,
    },
    Reparametrized {
        inner: Path,
        reparam: Reparam,
    },
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    domain: Interval,
    #[serde(flatten)]
    repr: Arc<PathRepr>,
}

impl TryFrom<PathRecord> for Path {
    type Error = Error;
    fn try_from(r: PathRecord) -> Result<Self> {
        Path::build(r.domain, r.repr)
    }
}

impl From<Path> for PathRecord {
    fn from(p: Path) -> Self {
        PathRecord { domain: p.domain, repr: p.repr }
    }
}

/// A parametrized curve `γ: [lo, hi] -> chart`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "PathRecord", into = "PathRecord")]
pub struct Path {
    domain: Interval,
    repr: Arc<PathRepr>,
}

impl Path {
    fn build(domain: Interval, repr: Arc<PathRepr>) -> Result<Self> {
        let natural = match &*repr {
            PathRepr::Analytic(f) => {
                f.validate()?;
                None
            }
            PathRepr::Piecewise { pieces, breakpoints } => {
                validate_pieces(pieces, breakpoints)?;
                Some(Interval::new(breakpoints[0], *breakpoints.last().unwrap())?)
            }
            PathRepr::Sampled(s) => Some(s.domain()),
            PathRepr::Point { point } => {
                if point.is_empty() {
                    return Err(Error::Model("point path needs a nonempty point".into()));
                }
                None
            }
            PathRepr::Reparametrized { inner, reparam } => {
                if !interval_close(&reparam.target, &inner.domain) {
                    return domain_err(format!(
                        "reparametrization target {} differs from path domain {}",
                        reparam.target, inner.domain
                    ));
                }
                Some(reparam.source)
            }
        };
        if let Some(nat) = natural {
            if !nat.contains_interval(&domain) {
                return domain_err(format!("domain {domain} not contained in {nat}"));
            }
        }
        Ok(Path { domain, repr })
    }

    pub fn analytic(formula: Formula, domain: Interval) -> Result<Self> {
        Self::build(domain, Arc::new(PathRepr::Analytic(formula)))
    }

    pub fn line(origin: &[f64], direction: &[f64], domain: Interval) -> Result<Self> {
        Self::analytic(Formula::Line { origin: origin.to_vec(), direction: direction.to_vec() }, domain)
    }

    pub fn constant(point: &[f64], domain: Interval) -> Result<Self> {
        Self::analytic(Formula::Constant { point: point.to_vec() }, domain)
    }

    pub fn polynomial(coeffs: Vec<Vec<f64>>, domain: Interval) -> Result<Self> {
        Self::analytic(Formula::Polynomial { coeffs }, domain)
    }

    pub fn sampled(knots: Vec<f64>, values: Vec<Point>, order: u8) -> Result<Self> {
        let spline = Spline::new(knots, values, order)?;
        let d = spline.domain();
        Self::build(d, Arc::new(PathRepr::Sampled(spline)))
    }

    /// Concatenation of pieces; piece `i` must have domain `[b_i, b_{i+1}]`.
    pub fn piecewise(pieces: Vec<Path>, breakpoints: Vec<f64>) -> Result<Self> {
        validate_pieces(&pieces, &breakpoints)?;
        let d = Interval::new(breakpoints[0], *breakpoints.last().unwrap())?;
        Self::build(d, Arc::new(PathRepr::Piecewise { pieces, breakpoints }))
    }

    /// The point path `γ_{r,x}: [r, r] -> {x}`.
    pub fn point_path(r: f64, x: &[f64]) -> Result<Self> {
        if !r.is_finite() {
            return domain_err("point path parameter must be finite");
        }
        Self::build(Interval::point(r), Arc::new(PathRepr::Point { point: x.to_vec() }))
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn dim(&self) -> usize {
        match &*self.repr {
            PathRepr::Analytic(f) => f.dim(),
            PathRepr::Piecewise { pieces, .. } => pieces[0].dim(),
            PathRepr::Sampled(s) => s.values[0].len(),
            PathRepr::Point { point } => point.len(),
            PathRepr::Reparametrized { inner, .. } => inner.dim(),
        }
    }

    /// Short human-readable description, used in report witnesses.
    pub fn label(&self) -> String {
        let kind = match &*self.repr {
            PathRepr::Analytic(f) => match f {
                Formula::Constant { .. } => "constant",
                Formula::Line { .. } => "line",
                Formula::Polynomial { .. } => "polynomial",
                Formula::Circle { .. } => "circle",
                Formula::Harmonic { .. } => "harmonic",
            },
            PathRepr::Piecewise { .. } => "piecewise",
            PathRepr::Sampled(_) => "sampled",
            PathRepr::Point { .. } => "point",
            PathRepr::Reparametrized { .. } => "reparametrized",
        };
        format!("{kind}{}", self.domain)
    }

    pub fn eval(&self, t: f64) -> Result<Point> {
        let t = self.domain.snap(t)?;
        Ok(self.eval_raw(t))
    }

    /// Velocity; at breakpoints this is the right-sided derivative (left-sided at `hi`).
    pub fn velocity(&self, t: f64) -> Result<Point> {
        let t = self.domain.snap(t)?;
        let side = if t >= self.domain.hi && !self.domain.is_degenerate() { Side::Left } else { Side::Right };
        Ok(self.velocity_raw(t, side))
    }

    pub fn velocity_side(&self, t: f64, side: Side) -> Result<Point> {
        let t = self.domain.snap(t)?;
        Ok(self.velocity_raw(t, side))
    }

    pub fn start(&self) -> Point {
        self.eval_raw(self.domain.lo)
    }

    pub fn end(&self) -> Point {
        self.eval_raw(self.domain.hi)
    }

    pub fn is_closed(&self, tol: f64) -> bool {
        (self.start() - self.end()).norm() <= tol
    }

    /// Interior parameters where the velocity may be discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut raw = self.raw_breakpoints();
        raw.retain(|&b| b > self.domain.lo && b < self.domain.hi);
        raw.sort_by(f64::total_cmp);
        raw.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        raw
    }

    fn raw_breakpoints(&self) -> Vec<f64> {
        match &*self.repr {
            PathRepr::Analytic(_) | PathRepr::Point { .. } => Vec::new(),
            PathRepr::Sampled(s) => {
                if s.order == 1 {
                    s.knots.clone()
                } else {
                    Vec::new()
                }
            }
            PathRepr::Piecewise { pieces, breakpoints } => {
                let mut b = breakpoints.clone();
                for p in pieces {
                    b.extend(p.breakpoints());
                }
                b
            }
            PathRepr::Reparametrized { inner, reparam } => {
                let mut b = reparam.kinks();
                b.extend(inner.breakpoints().into_iter().map(|x| reparam.inverse_map(x)));
                b
            }
        }
    }

    fn eval_raw(&self, t: f64) -> Point {
        match &*self.repr {
            PathRepr::Analytic(f) => f.eval(t),
            PathRepr::Sampled(s) => s.eval(t),
            PathRepr::Point { point } => to_point(point),
            PathRepr::Piecewise { pieces, breakpoints } => {
                let i = piece_index(breakpoints, t, Side::Right);
                pieces[i].eval_raw(t.clamp(pieces[i].domain.lo, pieces[i].domain.hi))
            }
            PathRepr::Reparametrized { inner, reparam } => {
                let s = reparam.map(t).clamp(inner.domain.lo, inner.domain.hi);
                inner.eval_raw(s)
            }
        }
    }

    fn velocity_raw(&self, t: f64, side: Side) -> Point {
        match &*self.repr {
            PathRepr::Analytic(f) => f.velocity(t),
            PathRepr::Sampled(s) => s.velocity(t, side),
            PathRepr::Point { point } => DVector::zeros(point.len()),
            PathRepr::Piecewise { pieces, breakpoints } => {
                let i = piece_index(breakpoints, t, side);
                pieces[i].velocity_raw(t.clamp(pieces[i].domain.lo, pieces[i].domain.hi), side)
            }
            PathRepr::Reparametrized { inner, reparam } => {
                let s = reparam.map(t).clamp(inner.domain.lo, inner.domain.hi);
                let inner_side = match reparam.orientation() {
                    Orientation::Preserving => side,
                    Orientation::Reversing => side.flip(),
                };
                inner.velocity_raw(s, inner_side) * reparam.derivative(t, side)
            }
        }
    }

    /// `γ|sub`: same curve, narrower domain.
    pub fn restrict(&self, sub: Interval) -> Result<Path> {
        if !self.domain.contains_interval(&sub) {
            return domain_err(format!("cannot restrict {} to {sub}", self.domain));
        }
        let sub = Interval::new(self.domain.snap(sub.lo)?, self.domain.snap(sub.hi)?)?;
        Ok(Path { domain: sub, repr: Arc::clone(&self.repr) })
    }

    /// True when `self` is `other` restricted to a subinterval.
    pub fn is_restriction_of(&self, other: &Path) -> bool {
        Arc::ptr_eq(&self.repr, &other.repr) && other.domain.contains_interval(&self.domain)
    }

    /// `γ ∘ χ`, defined on `χ.source`.
    pub fn reparametrize(&self, chi: &Reparam) -> Result<Path> {
        if !interval_close(&chi.target, &self.domain) {
            return domain_err(format!(
                "reparametrization target {} differs from path domain {}",
                chi.target, self.domain
            ));
        }
        Self::build(
            chi.source,
            Arc::new(PathRepr::Reparametrized { inner: self.clone(), reparam: chi.clone() }),
        )
    }

    /// Affine, orientation-preserving reparametrization onto `[0, 1]`.
    pub fn to_unit_domain(&self) -> Result<Path> {
        if self.domain == Interval::UNIT {
            return Ok(self.clone());
        }
        if self.domain.is_degenerate() {
            return domain_err("a point path cannot be reparametrized onto [0, 1]");
        }
        self.reparametrize(&Reparam::affine(Interval::UNIT, self.domain)?)
    }

    /// `γ_(t) = γ(1 - t)` on `[0, 1]`.
    pub fn canonical_inverse(&self) -> Result<Path> {
        require_unit(self)?;
        self.reparametrize(&Reparam::reversing(Interval::UNIT, Interval::UNIT)?)
    }

    /// `(γ1γ2)(t) = γ1(2t)` on `[0, 1/2]`, `γ2(2t - 1)` on `[1/2, 1]`.
    pub fn canonical_product(&self, other: &Path) -> Result<Path> {
        require_unit(self)?;
        require_unit(other)?;
        let gap = (self.end() - other.start()).norm();
        if gap > ENDPOINT_TOL {
            return Err(Error::Composition(format!(
                "first path ends {gap:.3e} away from the start of the second"
            )));
        }
        let first_half = Interval::new(0.0, 0.5)?;
        let second_half = Interval::new(0.5, 1.0)?;
        let p1 = self.reparametrize(&Reparam::affine(first_half, Interval::UNIT)?)?;
        let p2 = other.reparametrize(&Reparam::affine(second_half, Interval::UNIT)?)?;
        Path::piecewise(vec![p1, p2], vec![0.0, 0.5, 1.0])
    }

    /// Largest pointwise distance to `other` on an `n`-point grid of the (shared) domain.
    pub fn max_distance(&self, other: &Path, n: usize) -> Result<f64> {
        if !interval_close(&self.domain, &other.domain) {
            return domain_err(format!("domains differ: {} vs {}", self.domain, other.domain));
        }
        let mut worst = 0.0_f64;
        for t in self.domain.grid(n) {
            worst = worst.max((self.eval_raw(t) - other.eval(t)?).norm());
        }
        Ok(worst)
    }

    pub fn approx_eq(&self, other: &Path) -> bool {
        self.max_distance(other, DEFAULT_COMPARE_SAMPLES)
            .map(|d| d <= DEFAULT_COMPARE_TOL)
            .unwrap_or(false)
    }

    /// Euclidean chart length of `γ` between `a` and `b` (signed by orientation).
    pub fn arc_length(&self, a: f64, b: f64) -> Result<f64> {
        let a = self.domain.snap(a)?;
        let b = self.domain.snap(b)?;
        if a == b {
            return Ok(0.0);
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let mut cuts = vec![lo];
        cuts.extend(self.breakpoints().into_iter().filter(|&x| x > lo && x < hi));
        cuts.push(hi);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += simpson(w[0], w[1], ARC_LENGTH_PANELS, |t, side| {
                self.velocity_raw(t, side).norm()
            });
        }
        Ok(sign * total)
    }
}

fn simpson(a: f64, b: f64, panels: usize, f: impl Fn(f64, Side) -> f64) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a, Side::Right) + f(b, Side::Left);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + h * i as f64, Side::Right);
    }
    sum * h / 3.0
}

fn piece_index(breakpoints: &[f64], t: f64, side: Side) -> usize {
    side_segment(breakpoints, t, side)
}

/// Relative distance within which a parameter counts as sitting on a knot.
const KNOT_SNAP: f64 = 1e-12;

/// Index `i` of the segment `[k_i, k_{i+1}]` of sorted `knots` used for `x` on
/// `side`. Parameters within roundoff of an interior knot count as on it, so a
/// kink carried through a reparametrization still selects the intended side.
fn side_segment(knots: &[f64], x: f64, side: Side) -> usize {
    let last = knots.len() - 2;
    let near = |k: f64| (x - k).abs() <= KNOT_SNAP * k.abs().max(1.0);
    let mut i = knots.partition_point(|&k| k <= x).saturating_sub(1).min(last);
    if i < last && near(knots[i + 1]) {
        i += 1;
    }
    if side == Side::Left && i > 0 && near(knots[i]) {
        i -= 1;
    }
    i
}

fn interval_close(a: &Interval, b: &Interval) -> bool {
    let eps = slack(a.lo.min(b.lo), a.hi.max(b.hi));
    (a.lo - b.lo).abs() <= eps && (a.hi - b.hi).abs() <= eps
}

fn require_unit(p: &Path) -> Result<()> {
    if interval_close(&p.domain, &Interval::UNIT) {
        Ok(())
    } else {
        domain_err(format!("expected a path on [0, 1], got domain {}", p.domain))
    }
}

fn validate_pieces(pieces: &[Path], breakpoints: &[f64]) -> Result<()> {
    if pieces.is_empty() || breakpoints.len() != pieces.len() + 1 {
        return Err(Error::Model("piecewise path needs n pieces and n + 1 breakpoints".into()));
    }
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Model("breakpoints must be strictly increasing".into()));
    }
    let d = pieces[0].dim();
    for (i, p) in pieces.iter().enumerate() {
        if p.dim() != d {
            return Err(Error::Model("pieces live in charts of different dimension".into()));
        }
        let want = Interval::new(breakpoints[i], breakpoints[i + 1])?;
        if !interval_close(&p.domain, &want) {
            return Err(Error::Model(format!("piece {i} has domain {}, expected {want}", p.domain)));
        }
    }
    for (i, w) in pieces.windows(2).enumerate() {
        let gap = (w[0].end() - w[1].start()).norm();
        if gap > ENDPOINT_TOL {
            return Err(Error::Composition(format!(
                "pieces {i} and {} disagree at breakpoint {} by {gap:.3e}",
                i + 1,
                breakpoints[i + 1]
            )));
        }
    }
    Ok(())
}
