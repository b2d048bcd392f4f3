//! Concrete bundle instances: flat vector bundles over ℝⁿ, the tangent bundle of
//! the 2-sphere, trivial principal bundles `B × G`, foliated products
//! `B × ℝᵏ`, and finite-fibre bundles used for exhaustive checks.
//!
//! Every bundle here is trivial, so a point of the total space is a pair
//! (base point, fibre payload) and [`FiberElement`] stores exactly that.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{GroupDistance, GroupModel};
use crate::path::Point;

/// Tolerance for deciding that an element lies over a given base point.
pub const BASE_TOL: f64 = 1e-9;
/// Accepted constraint residual for group payloads (ODE output is renormalized at 1e-9).
pub const GROUP_MEMBERSHIP_TOL: f64 = 1e-8;

const POLE_MARGIN: f64 = 1e-12;

/// The base manifold, always covered by a single chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "base", rename_all = "kebab-case")]
pub enum BaseSpace {
    Euclidean { dim: usize },
    /// The unit sphere in colatitude/longitude coordinates `(θ, φ)`, poles excluded.
    Sphere,
}

impl BaseSpace {
    pub fn dim(&self) -> usize {
        match self {
            BaseSpace::Euclidean { dim } => *dim,
            BaseSpace::Sphere => 2,
        }
    }

    /// Checks that `x` is a point of the chart.
    pub fn check(&self, x: &Point) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "base point has {} coordinates, chart has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("base point has non-finite coordinates".into()));
        }
        if let BaseSpace::Sphere = self {
            let theta = x[0];
            if !(-POLE_MARGIN..=std::f64::consts::PI + POLE_MARGIN).contains(&theta) {
                return Err(Error::Domain(format!("colatitude {theta} outside [0, π]")));
            }
            if theta <= POLE_MARGIN || theta >= std::f64::consts::PI - POLE_MARGIN {
                return Err(Error::SingularChart(x.as_slice().to_vec()));
            }
        }
        Ok(())
    }

    /// Distance between two chart points as points of the manifold: on the
    /// sphere, longitudes differing by a multiple of `2π` name the same point.
    pub fn point_distance(&self, a: &Point, b: &Point) -> f64 {
        match self {
            BaseSpace::Euclidean { .. } => (a - b).norm(),
            BaseSpace::Sphere => {
                let tau = 2.0 * std::f64::consts::PI;
                let dphi = (a[1] - b[1]).rem_euclid(tau);
                (a[0] - b[0]).hypot(dphi.min(tau - dphi))
            }
        }
    }
}

/// Christoffel symbols `Γ^i_{jk}` at one chart point.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel { n, data: vec![0.0; n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + k] = v;
    }

    /// `Ω^i_k = Γ^i_{jk} w^j`, the matrix of the lift equation `v̇ = -Ω v`.
    pub fn contract(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, k| (0..n).map(|j| self.get(i, j, k) * w[j]).sum())
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest `|Γ^i_{jk} - Γ^i_{kj}|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }
}

/// Levi-Civita symbols of the round metric `diag(1, sin²θ)` at `(θ, φ)`.
pub fn sphere_christoffel(theta: f64, phi: f64) -> Result<Christoffel> {
    BaseSpace::Sphere.check(&DVector::from_vec(vec![theta, phi]))?;
    let (s, c) = theta.sin_cos();
    let mut g = Christoffel::zeros(2);
    g.set(0, 1, 1, -s * c);
    g.set(1, 0, 1, c / s);
    g.set(1, 1, 0, c / s);
    Ok(g)
}

/// A Riemannian surface (or flat chart) used for Levi-Civita transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "surface", rename_all = "kebab-case")]
pub enum SurfaceModel {
    Flat { dim: usize },
    Sphere,
}

impl SurfaceModel {
    pub fn base(&self) -> BaseSpace {
        match self {
            SurfaceModel::Flat { dim } => BaseSpace::Euclidean { dim: *dim },
            SurfaceModel::Sphere => BaseSpace::Sphere,
        }
    }

    pub fn metric(&self, x: &Point) -> Result<DMatrix<f64>> {
        self.base().check(x)?;
        Ok(match self {
            SurfaceModel::Flat { dim } => DMatrix::identity(*dim, *dim),
            SurfaceModel::Sphere => {
                let s = x[0].sin();
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, s * s])
            }
        })
    }

    pub fn christoffel(&self, x: &Point) -> Result<Christoffel> {
        match self {
            SurfaceModel::Flat { dim } => {
                self.base().check(x)?;
                Ok(Christoffel::zeros(*dim))
            }
            SurfaceModel::Sphere => sphere_christoffel(x[0], x[1]),
        }
    }

    /// Embedding of the chart into Euclidean space (ℝ³ for the sphere).
    pub fn embedding(&self, x: &Point) -> Result<DVector<f64>> {
        self.base().check(x)?;
        Ok(match self {
            SurfaceModel::Flat { .. } => x.clone(),
            SurfaceModel::Sphere => {
                let (st, ct) = x[0].sin_cos();
                let (sp, cp) = x[1].sin_cos();
                DVector::from_vec(vec![st * cp, st * sp, ct])
            }
        })
    }

    /// Columns are an orthonormal frame of the tangent space, in coordinate components.
    pub fn orthonormal_frame(&self, x: &Point) -> Result<DMatrix<f64>> {
        let g = self.metric(x)?;
        // diagonal metrics only
        Ok(DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| if i == j { 1.0 / g[(i, i)].sqrt() } else { 0.0 }))
    }

    /// `sqrt(vᵀ g(x) v)`.
    pub fn norm(&self, x: &Point, v: &DVector<f64>) -> Result<f64> {
        let g = self.metric(x)?;
        Ok((v.transpose() * g * v)[(0, 0)].sqrt())
    }

    /// Levi-Civita symbols from central finite differences of the metric:
    /// `Γ^i_{jk} = ½ g^{il} (∂_j g_{lk} + ∂_k g_{lj} - ∂_l g_{jk})`.
    pub fn christoffel_from_metric(&self, x: &Point, h: f64) -> Result<Christoffel> {
        let n = x.len();
        let g = self.metric(x)?;
        let ginv = g
            .try_inverse()
            .ok_or_else(|| Error::Model("metric is singular".into()))?;
        let mut dg = Vec::with_capacity(n);
        for l in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[l] += h;
            xm[l] -= h;
            dg.push((self.metric(&xp)? - self.metric(&xm)?) / (2.0 * h));
        }
        let mut out = Christoffel::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v: f64 = (0..n)
                        .map(|l| ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]))
                        .sum();
                    out.set(i, j, k, 0.5 * v);
                }
            }
        }
        Ok(out)
    }
}

/// The global section `σ` whose translates `K_c = {(x, σ(x) + c)}` are the leaves
/// of the default foliation of `B × ℝᵏ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "kebab-case")]
pub enum Section {
    Zero,
    /// `σ(x) = A x` with `A` given row by row (k rows of length `dim B`).
    Linear { rows: Vec<Vec<f64>> },
    /// `σ_i(x) = amplitude · sin(frequency · Σ_j x_j + i)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl Section {
    fn eval(&self, x: &Point, rank: usize) -> DVector<f64> {
        match self {
            Section::Zero => DVector::zeros(rank),
            Section::Linear { rows } => {
                DVector::from_iterator(rank, rows.iter().map(|r| r.iter().zip(x.iter()).map(|(a, b)| a * b).sum()))
            }
            Section::Sine { amplitude, frequency } => {
                let s: f64 = x.iter().sum();
                DVector::from_iterator(rank, (0..rank).map(|i| amplitude * (frequency * s + i as f64).sin()))
            }
        }
    }
}

type LeafFn = Arc<dyn Fn(&DVector<f64>, &Point) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
enum Leaves {
    Section(Section),
    Custom { leaf_point: LeafFn, classify: LeafFn },
}

/// A foliation of `B × ℝᵏ` whose leaves meet every fibre exactly once.
///
/// Leaves are labelled by `α ∈ ℝᵏ`; `leaf_point(α, x)` is the fibre coordinate of
/// the unique point of `K_α` over `x`, and `classify(x, y)` is the label of the
/// leaf through `(x, y)`.
#[derive(Clone)]
pub struct FoliationModel {
    rank: usize,
    leaves: Leaves,
}

impl fmt::Debug for FoliationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.leaves {
            Leaves::Section(s) => f.debug_struct("FoliationModel").field("rank", &self.rank).field("section", s).finish(),
            Leaves::Custom { .. } => f.debug_struct("FoliationModel").field("rank", &self.rank).field("leaves", &"custom").finish(),
        }
    }
}

impl PartialEq for FoliationModel {
    fn eq(&self, other: &Self) -> bool {
        match (&self.leaves, &other.leaves) {
            (Leaves::Section(a), Leaves::Section(b)) => self.rank == other.rank && a == b,
            (Leaves::Custom { leaf_point: a, .. }, Leaves::Custom { leaf_point: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct FoliationRecord {
    rank: usize,
    #[serde(flatten)]
    section: Section,
}

impl Serialize for FoliationModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.leaves {
            Leaves::Section(section) => {
                FoliationRecord { rank: self.rank, section: section.clone() }.serialize(serializer)
            }
            Leaves::Custom { .. } => Err(serde::ser::Error::custom("custom foliations cannot be serialized")),
        }
    }
}

impl<'de> Deserialize<'de> for FoliationModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = FoliationRecord::deserialize(deserializer)?;
        FoliationModel::from_section(r.rank, r.section).map_err(serde::de::Error::custom)
    }
}

impl FoliationModel {
    pub fn from_section(rank: usize, section: Section) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Model("foliation fibre rank must be positive".into()));
        }
        if let Section::Linear { rows } = &section {
            if rows.len() != rank {
                return Err(Error::Model(format!("linear section needs {rank} rows, got {}", rows.len())));
            }
        }
        Ok(FoliationModel { rank, leaves: Leaves::Section(section) })
    }

    /// A foliation given by closures, accepted only if on the sample points the
    /// leaves are disjoint, cover the sampled fibres, and meet each fibre once:
    /// `classify(x, leaf_point(α, x)) = α` and `leaf_point(classify(x, y), x) = y`.
    pub fn custom<L, C>(rank: usize, leaf_point: L, classify: C, samples: &[(Point, DVector<f64>)]) -> Result<Self>
    where
        L: Fn(&DVector<f64>, &Point) -> DVector<f64> + Send + Sync + 'static,
        C: Fn(&Point, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let leaf_point: LeafFn = Arc::new(leaf_point);
        let classify: LeafFn = Arc::new(move |x: &Point, y: &DVector<f64>| classify(x, y));
        let model = FoliationModel { rank, leaves: Leaves::Custom { leaf_point, classify } };
        let worst = model.validation_residual(samples);
        if worst > 1e-9 {
            return Err(Error::Model(format!(
                "leaves do not meet every sampled fibre exactly once (residual {worst:.3e})"
            )));
        }
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn section(&self) -> Option<&Section> {
        match &self.leaves {
            Leaves::Section(s) => Some(s),
            Leaves::Custom { .. } => None,
        }
    }

    /// Fibre coordinate of the point of leaf `alpha` over `x`.
    pub fn leaf_point(&self, alpha: &DVector<f64>, x: &Point) -> DVector<f64> {
        match &self.leaves {
            Leaves::Section(s) => s.eval(x, self.rank) + alpha,
            Leaves::Custom { leaf_point, .. } => leaf_point(alpha, x),
        }
    }

    /// Label of the leaf through `(x, y)`.
    pub fn classify(&self, x: &Point, y: &DVector<f64>) -> DVector<f64> {
        match &self.leaves {
            Leaves::Section(s) => y - s.eval(x, self.rank),
            Leaves::Custom { classify, .. } => classify(x, y),
        }
    }

    /// Worst violation of the leaf/fibre bijection on the sampled `(x, α)` pairs.
    pub fn validation_residual(&self, samples: &[(Point, DVector<f64>)]) -> f64 {
        let mut worst = 0.0_f64;
        for (x, v) in samples {
            let as_label = (self.classify(x, &self.leaf_point(v, x)) - v).norm();
            let as_point = (self.leaf_point(&self.classify(x, v), x) - v).norm();
            worst = worst.max(as_label).max(as_point);
            if !as_label.is_finite() || !as_point.is_finite() {
                return f64::INFINITY;
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FiberKind {
    Vector { rank: usize },
    Group { group: GroupModel },
    Foliation(FoliationModel),
    /// A finite set `{0, …, size-1}`, used for exhaustive law checking.
    Finite { size: usize },
}

/// A point of a fibre, in fibre coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Vector(DVector<f64>),
    Group(DMatrix<f64>),
    Label(usize),
}

impl Payload {
    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            Payload::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_group(&self) -> Option<&DMatrix<f64>> {
        match self {
            Payload::Group(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_label(&self) -> Option<usize> {
        match self {
            Payload::Label(i) => Some(*i),
            _ => None,
        }
    }

    /// Flattened fibre coordinates (column-major for matrices).
    pub fn coords(&self) -> DVector<f64> {
        match self {
            Payload::Vector(v) => v.clone(),
            Payload::Group(g) => DVector::from_column_slice(g.as_slice()),
            Payload::Label(i) => DVector::from_element(1, *i as f64),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Payload::Vector(_) => "vector",
            Payload::Group(_) => "group",
            Payload::Label(_) => "label",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PayloadRecord {
    Vector { coords: Vec<f64> },
    /// Row-major entries of a square matrix.
    Group { size: usize, entries: Vec<f64> },
    Label { index: usize },
}

impl Serialize for Payload {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Payload::Vector(v) => PayloadRecord::Vector { coords: v.as_slice().to_vec() },
            Payload::Group(g) => PayloadRecord::Group {
                size: g.nrows(),
                entries: g.transpose().as_slice().to_vec(),
            },
            Payload::Label(i) => PayloadRecord::Label { index: *i },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Ok(match PayloadRecord::deserialize(deserializer)? {
            PayloadRecord::Vector { coords } => Payload::Vector(DVector::from_vec(coords)),
            PayloadRecord::Group { size, entries } => {
                if entries.len() != size * size {
                    return Err(serde::de::Error::custom("group payload needs size² entries"));
                }
                Payload::Group(DMatrix::from_row_slice(size, size, &entries))
            }
            PayloadRecord::Label { index } => Payload::Label(index),
        })
    }
}

/// A point of the total space: its base point and its fibre payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberElement {
    #[serde(with = "point_serde")]
    base: Point,
    payload: Payload,
}

pub(crate) mod point_serde {
    use super::Point;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Point, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(p.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point, D::Error> {
        Ok(Point::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

impl FiberElement {
    /// Builds an element without validation; use [`Fiber::element`] to validate.
    pub fn new_unchecked(base: Point, payload: Payload) -> Self {
        FiberElement { base, payload }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn into_payload(self) -> Payload {
        self.payload
    }

    /// Total-space chart coordinates `(x, fibre coords)`.
    pub fn total_coords(&self) -> DVector<f64> {
        let f = self.payload.coords();
        let mut out = DVector::zeros(self.base.len() + f.len());
        out.rows_mut(0, self.base.len()).copy_from(&self.base);
        out.rows_mut(self.base.len(), f.len()).copy_from(&f);
        out
    }
}

/// How residuals between fibre elements are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistancePolicy {
    pub group: GroupDistance,
}

/// A bundle `(E, π, B)` with trivial total space `B × F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleModel {
    #[serde(flatten)]
    base: BaseSpace,
    fiber: FiberKind,
}

impl BundleModel {
    pub fn new(base: BaseSpace, fiber: FiberKind) -> Result<Self> {
        if base.dim() == 0 {
            return Err(Error::Model("base dimension must be positive".into()));
        }
        match &fiber {
            FiberKind::Vector { rank: 0 } => return Err(Error::Model("vector fibre rank must be positive".into())),
            FiberKind::Finite { size: 0 } => return Err(Error::Model("finite fibre must be nonempty".into())),
            FiberKind::Foliation(f) => {
                if let Some(Section::Linear { rows }) = f.section() {
                    if rows.iter().any(|r| r.len() != base.dim()) {
                        return Err(Error::Model("linear section rows must have length dim B".into()));
                    }
                }
            }
            _ => {}
        }
        Ok(BundleModel { base, fiber })
    }

    pub fn flat_vector(base_dim: usize, rank: usize) -> Result<Self> {
        Self::new(BaseSpace::Euclidean { dim: base_dim }, FiberKind::Vector { rank })
    }

    /// Tangent bundle of the 2-sphere, vectors in the coordinate frame `(∂θ, ∂φ)`.
    pub fn sphere_tangent() -> Self {
        BundleModel { base: BaseSpace::Sphere, fiber: FiberKind::Vector { rank: 2 } }
    }

    pub fn trivial_principal(base_dim: usize, group: GroupModel) -> Result<Self> {
        Self::new(BaseSpace::Euclidean { dim: base_dim }, FiberKind::Group { group })
    }

    pub fn foliated(base_dim: usize, foliation: FoliationModel) -> Result<Self> {
        Self::new(BaseSpace::Euclidean { dim: base_dim }, FiberKind::Foliation(foliation))
    }

    pub fn finite(base_dim: usize, size: usize) -> Result<Self> {
        Self::new(BaseSpace::Euclidean { dim: base_dim }, FiberKind::Finite { size })
    }

    pub fn base(&self) -> BaseSpace {
        self.base
    }

    pub fn fiber_kind(&self) -> &FiberKind {
        &self.fiber
    }

    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    /// Dimension of the fibre as a manifold (0 for finite fibres).
    pub fn fiber_dim(&self) -> usize {
        match &self.fiber {
            FiberKind::Vector { rank } => *rank,
            FiberKind::Group { group } => group.dim(),
            FiberKind::Foliation(f) => f.rank(),
            FiberKind::Finite { .. } => 0,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.base_dim() + self.fiber_dim()
    }

    pub fn group(&self) -> Option<GroupModel> {
        match &self.fiber {
            FiberKind::Group { group } => Some(*group),
            _ => None,
        }
    }

    pub fn projection<'a>(&self, e: &'a FiberElement) -> &'a Point {
        &e.base
    }

    /// The fibre `π⁻¹(x)`.
    pub fn fiber_at(&self, x: &Point) -> Result<Fiber> {
        self.base.check(x)?;
        Ok(Fiber { base: x.clone(), kind: self.fiber.clone() })
    }

    /// Distance between two total-space points: base offset plus fibre residual.
    pub fn distance(&self, a: &FiberElement, b: &FiberElement, policy: DistancePolicy) -> f64 {
        let base = if a.base.len() == b.base.len() { (&a.base - &b.base).norm() } else { f64::INFINITY };
        base + payload_distance(&self.fiber, &a.payload, &b.payload, policy)
    }
}

fn payload_distance(kind: &FiberKind, a: &Payload, b: &Payload, policy: DistancePolicy) -> f64 {
    match (a, b) {
        (Payload::Vector(x), Payload::Vector(y)) if x.len() == y.len() => (x - y).norm(),
        (Payload::Group(g), Payload::Group(h)) => match kind {
            FiberKind::Group { group } => group.distance(g, h, policy.group),
            _ => (g - h).norm(),
        },
        (Payload::Label(i), Payload::Label(j)) => {
            if i == j {
                0.0
            } else {
                1.0
            }
        }
        _ => f64::INFINITY,
    }
}

/// The fibre over one base point; validates and samples elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Fiber {
    base: Point,
    kind: FiberKind,
}

impl Fiber {
    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn kind(&self) -> &FiberKind {
        &self.kind
    }

    pub fn check_payload(&self, payload: &Payload) -> Result<()> {
        let bad = |msg: String| Err(Error::Payload(msg));
        match (&self.kind, payload) {
            (FiberKind::Vector { rank }, Payload::Vector(v)) | (FiberKind::Foliation(FoliationModel { rank, .. }), Payload::Vector(v)) => {
                if v.len() != *rank {
                    bad(format!("expected {rank} fibre coordinates, got {}", v.len()))
                } else if v.iter().any(|c| !c.is_finite()) {
                    bad("non-finite fibre coordinates".into())
                } else {
                    Ok(())
                }
            }
            (FiberKind::Group { group }, Payload::Group(g)) => {
                let r = group.constraint_residual(g);
                if r < GROUP_MEMBERSHIP_TOL {
                    Ok(())
                } else {
                    bad(format!("matrix is not in {group} (constraint residual {r:.3e})"))
                }
            }
            (FiberKind::Finite { size }, Payload::Label(i)) => {
                if i < size {
                    Ok(())
                } else {
                    bad(format!("label {i} outside finite fibre of size {size}"))
                }
            }
            (_, p) => bad(format!("{} payload does not fit this fibre", p.kind_name())),
        }
    }

    pub fn element(&self, payload: Payload) -> Result<FiberElement> {
        self.check_payload(&payload)?;
        Ok(FiberElement { base: self.base.clone(), payload })
    }

    /// Checks that `e` lies in this fibre.
    pub fn check(&self, e: &FiberElement) -> Result<()> {
        if e.base.len() != self.base.len() || (&e.base - &self.base).norm() > BASE_TOL {
            return Err(Error::WrongFiber {
                expected: self.base.as_slice().to_vec(),
                found: e.base.as_slice().to_vec(),
            });
        }
        self.check_payload(&e.payload)
    }

    /// Distance between two elements measured with this fibre's payload metric.
    pub fn distance(&self, a: &FiberElement, b: &FiberElement, policy: DistancePolicy) -> f64 {
        let base = if a.base.len() == b.base.len() { (&a.base - &b.base).norm() } else { f64::INFINITY };
        base + payload_distance(&self.kind, &a.payload, &b.payload, policy)
    }

    /// True when `other` is the fibre over the same point (within [`BASE_TOL`]).
    pub fn same_fiber(&self, other: &Fiber) -> bool {
        self.base.len() == other.base.len() && (&self.base - &other.base).norm() <= BASE_TOL
    }

    pub fn contains(&self, e: &FiberElement) -> bool {
        self.check(e).is_ok()
    }

    /// The point of the leaf labelled `alpha` (foliated fibres only).
    pub fn leaf_element(&self, alpha: &DVector<f64>) -> Result<FiberElement> {
        match &self.kind {
            FiberKind::Foliation(f) => self.element(Payload::Vector(f.leaf_point(alpha, &self.base))),
            _ => Err(Error::Model("leaf labels only exist on foliated fibres".into())),
        }
    }

    pub fn identity_element(&self) -> Result<FiberElement> {
        match &self.kind {
            FiberKind::Group { group } => self.element(Payload::Group(group.identity())),
            _ => Err(Error::Model("only group fibres have an identity element".into())),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, FiberKind::Finite { .. })
    }

    /// All elements of a finite fibre.
    pub fn enumerate(&self) -> Option<Vec<FiberElement>> {
        match self.kind {
            FiberKind::Finite { size } => Some(
                (0..size)
                    .map(|i| FiberElement { base: self.base.clone(), payload: Payload::Label(i) })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Sample elements for law checking: every element of a finite fibre,
    /// otherwise `n` random elements.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<FiberElement> {
        if let Some(all) = self.enumerate() {
            return all;
        }
        (0..n)
            .map(|_| {
                let payload = match &self.kind {
                    FiberKind::Vector { rank } | FiberKind::Foliation(FoliationModel { rank, .. }) => {
                        Payload::Vector(DVector::from_fn(*rank, |_, _| rng.random_range(-1.0..1.0)))
                    }
                    FiberKind::Group { group } => Payload::Group(group.random(rng)),
                    FiberKind::Finite { .. } => unreachable!(),
                };
                FiberElement { base: self.base.clone(), payload }
            })
            .collect()
    }

    /// Basis of the vertical space `T_p(π⁻¹(π(p)))` in total-space coordinates.
    pub fn vertical_basis(&self, e: &FiberElement) -> Vec<DVector<f64>> {
        let n = self.base.len();
        let embed = |f: DVector<f64>| {
            let mut v = DVector::zeros(n + f.len());
            v.rows_mut(n, f.len()).copy_from(&f);
            v
        };
        match (&self.kind, &e.payload) {
            (FiberKind::Vector { rank }, _) | (FiberKind::Foliation(FoliationModel { rank, .. }), _) => {
                (0..*rank).map(|i| embed(DVector::from_fn(*rank, |r, _| if r == i { 1.0 } else { 0.0 }))).collect()
            }
            (FiberKind::Group { group }, Payload::Group(g)) => group
                .algebra_basis()
                .iter()
                .map(|x| embed(DVector::from_column_slice((g * x).as_slice())))
                .collect(),
            _ => Vec::new(),
        }
    }
}
