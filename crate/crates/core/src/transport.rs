//! Transports along paths and executable checks of their laws.
//!
//! A [`Transport`] assigns to a path `γ` and parameters `s, t` a fibre map
//! `I^γ_{s→t}` from the fibre over `γ(s)` to the fibre over `γ(t)`. The check
//! functions measure how far a transport is from satisfying the groupoid,
//! identity, inverse, restriction and reparametrization laws.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleModel, DistancePolicy, Fiber, FiberElement, FiberKind, Payload};
use crate::error::{Error, Result};
use crate::fiber_map::{nan_max, Action, FiberMap};
use crate::path::{Interval, Orientation, Path, Reparam, Shape};

/// Default law tolerance for transports computed by ODE integration.
pub const ODE_TOLERANCE: f64 = 1e-6;
/// Default law tolerance for transports given by closed-form algebra.
pub const ALGEBRAIC_TOLERANCE: f64 = 1e-10;
/// Witness lists are truncated to this many entries.
pub const MAX_WITNESSES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Foliation,
    GroupLeft,
    GroupRight,
    Connection,
    Factorized,
    Adversarial,
    /// Built from an axiomatic parallel transport.
    Bridged,
    Identity,
}

impl Backend {
    pub fn default_tolerance(self) -> f64 {
        match self {
            Backend::Connection => ODE_TOLERANCE,
            _ => ALGEBRAIC_TOLERANCE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Foliation => "foliation",
            Backend::GroupLeft => "group-left",
            Backend::GroupRight => "group-right",
            Backend::Connection => "connection",
            Backend::Factorized => "factorized",
            Backend::Adversarial => "adversarial",
            Backend::Bridged => "bridged",
            Backend::Identity => "identity",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A transport along paths on a fixed bundle.
pub trait Transport: Send + Sync {
    fn bundle(&self) -> &BundleModel;

    fn backend(&self) -> Backend;

    /// `I^γ_{s→t}`.
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap>;

    fn default_tolerance(&self) -> f64 {
        self.backend().default_tolerance()
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn bundle(&self) -> &BundleModel {
        (**self).bundle()
    }
    fn backend(&self) -> Backend {
        (**self).backend()
    }
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        (**self).at(path, s, t)
    }
    fn default_tolerance(&self) -> f64 {
        (**self).default_tolerance()
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn bundle(&self) -> &BundleModel {
        (**self).bundle()
    }
    fn backend(&self) -> Backend {
        (**self).backend()
    }
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        (**self).at(path, s, t)
    }
    fn default_tolerance(&self) -> f64 {
        (**self).default_tolerance()
    }
}

/// `I^γ_{s→t}(u)`.
pub fn apply_transport<T: Transport + ?Sized>(
    transport: &T,
    path: &Path,
    s: f64,
    t: f64,
    u: &FiberElement,
) -> Result<FiberElement> {
    transport.at(path, s, t)?.apply(u)
}

/// Validated endpoint data shared by backends: snapped parameters and both fibres.
pub(crate) struct Endpoints {
    pub s: f64,
    pub t: f64,
    pub source: Fiber,
    pub target: Fiber,
}

pub(crate) fn endpoints(bundle: &BundleModel, path: &Path, s: f64, t: f64) -> Result<Endpoints> {
    if path.dim() != bundle.base_dim() {
        return Err(Error::Domain(format!(
            "path lives in {} dimensions, base has {}",
            path.dim(),
            bundle.base_dim()
        )));
    }
    let s = path.domain().snap(s)?;
    let t = path.domain().snap(t)?;
    let source = bundle.fiber_at(&path.eval(s)?)?;
    let target = bundle.fiber_at(&path.eval(t)?)?;
    Ok(Endpoints { s, t, source, target })
}

/// The transport whose maps leave payloads unchanged.
#[derive(Clone, Debug)]
pub struct IdentityTransport {
    bundle: BundleModel,
}

impl IdentityTransport {
    pub fn new(bundle: BundleModel) -> Self {
        IdentityTransport { bundle }
    }
}

impl Transport for IdentityTransport {
    fn bundle(&self) -> &BundleModel {
        &self.bundle
    }
    fn backend(&self) -> Backend {
        Backend::Identity
    }
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let e = endpoints(&self.bundle, path, s, t)?;
        FiberMap::new(e.source, e.target, Action::Identity)
    }
}

/// Wraps a transport and perturbs it by an amount growing like `(t - s)²`,
/// which keeps the identity law but breaks composition.
pub struct AdversarialTransport<T> {
    inner: T,
    strength: f64,
}

impl<T: Transport> AdversarialTransport<T> {
    pub fn new(inner: T, strength: f64) -> Self {
        AdversarialTransport { inner, strength }
    }

    fn kick(&self, target: &Fiber, amount: f64) -> Result<FiberMap> {
        let action = match target.kind() {
            FiberKind::Vector { rank } => {
                Action::linear(nalgebra::DMatrix::identity(*rank, *rank) * (1.0 + amount))
            }
            FiberKind::Foliation(f) => Action::translation(nalgebra::DVector::from_element(f.rank(), amount)),
            FiberKind::Group { group } => {
                let coords = vec![amount; group.dim()];
                Action::left_multiplication(group.exp(&coords)?)
            }
            FiberKind::Finite { size } => {
                let mut table: Vec<usize> = (0..*size).collect();
                if amount > 0.25 * self.strength && *size > 1 {
                    table.swap(0, 1);
                }
                Action::Permutation(table)
            }
        };
        FiberMap::new(target.clone(), target.clone(), action)
    }
}

impl<T: Transport> Transport for AdversarialTransport<T> {
    fn bundle(&self) -> &BundleModel {
        self.inner.bundle()
    }
    fn backend(&self) -> Backend {
        Backend::Adversarial
    }
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let base = self.inner.at(path, s, t)?;
        let amount = self.strength * (t - s) * (t - s);
        let kick = self.kick(base.target(), amount)?;
        base.then(&kick)
    }
    fn default_tolerance(&self) -> f64 {
        self.inner.default_tolerance()
    }
}

/// Law identifiers used in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawId {
    GroupoidComposition,
    Identity,
    Inverse,
    Restriction,
    Reparametrization,
    AxiomReparametrization,
    AxiomCanonicalInverse,
    AxiomCanonicalProduct,
    AxiomPointPath,
    RoundTrip,
    Gauge,
    GaugeIndependence,
    Bijection,
    LiftProjection,
    HorizontalSpace,
    Complementarity,
    InitialUniqueness,
    Linearization,
    Smoothness,
    Continuity,
    Holonomy,
}

impl LawId {
    pub fn as_str(self) -> &'static str {
        match self {
            LawId::GroupoidComposition => "groupoid-composition",
            LawId::Identity => "identity",
            LawId::Inverse => "inverse",
            LawId::Restriction => "restriction",
            LawId::Reparametrization => "reparametrization",
            LawId::AxiomReparametrization => "axiom-reparametrization",
            LawId::AxiomCanonicalInverse => "axiom-canonical-inverse",
            LawId::AxiomCanonicalProduct => "axiom-canonical-product",
            LawId::AxiomPointPath => "axiom-point-path",
            LawId::RoundTrip => "round-trip",
            LawId::Gauge => "gauge",
            LawId::GaugeIndependence => "gauge-independence",
            LawId::Bijection => "bijection",
            LawId::LiftProjection => "lift-projection",
            LawId::HorizontalSpace => "horizontal-space",
            LawId::Complementarity => "complementarity",
            LawId::InitialUniqueness => "initial-uniqueness",
            LawId::Linearization => "linearization",
            LawId::Smoothness => "smoothness",
            LawId::Continuity => "continuity",
            LawId::Holonomy => "holonomy",
        }
    }
}

impl fmt::Display for LawId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sample at which a law failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(with = "float_repr")]
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Witness {
    pub fn new(path: &Path, residual: f64) -> Self {
        Witness { path: path.label(), r: None, s: None, t: None, residual, detail: None }
    }

    pub fn at(mut self, s: f64, t: f64) -> Self {
        self.s = Some(s);
        self.t = Some(t);
        self
    }

    pub fn from(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Outcome of checking one law: `pass ⇔ max_residual < tolerance`, and
/// witnesses are recorded exactly for failing samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub law: LawId,
    pub samples: usize,
    #[serde(with = "float_repr")]
    pub max_residual: f64,
    #[serde(with = "float_repr")]
    pub tolerance: f64,
    pub pass: bool,
    pub witnesses: Vec<Witness>,
    /// Conditioning margin for checks whose verdict is a lower bound (e.g. a smallest singular value).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LawReport {
    pub fn new(law: LawId, tolerance: f64) -> Self {
        LawReport {
            law,
            samples: 0,
            max_residual: 0.0,
            tolerance,
            pass: true,
            witnesses: Vec::new(),
            margin: None,
            note: None,
        }
    }

    /// Records one sample; `witness` is only built when the sample fails.
    pub fn record(&mut self, residual: f64, witness: impl FnOnce() -> Witness) {
        self.samples += 1;
        self.max_residual = nan_max(self.max_residual, residual);
        if !(residual < self.tolerance) {
            self.pass = false;
            if self.witnesses.len() < MAX_WITNESSES {
                let mut w = witness();
                w.residual = residual;
                self.witnesses.push(w);
            }
        }
    }

    /// Records a sample whose evaluation raised an error.
    pub fn record_error(&mut self, err: &Error, witness: impl FnOnce() -> Witness) {
        let msg = err.to_string();
        self.record(f64::INFINITY, || witness().detail(msg));
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Associative merge of two reports for the same law.
    pub fn merge(mut self, other: LawReport) -> LawReport {
        debug_assert_eq!(self.law, other.law);
        self.samples += other.samples;
        self.max_residual = nan_max(self.max_residual, other.max_residual);
        self.tolerance = self.tolerance.min(other.tolerance);
        self.pass = self.pass && other.pass && self.max_residual < self.tolerance;
        for w in other.witnesses {
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(w);
            }
        }
        self.margin = match (self.margin, other.margin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if self.note.is_none() {
            self.note = other.note;
        }
        self
    }
}

/// A set of law reports with an aggregate verdict.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub pass: bool,
    pub reports: Vec<LawReport>,
}

impl SuiteReport {
    /// Merges reports with equal law ids and sorts by id.
    pub fn from_reports(reports: impl IntoIterator<Item = LawReport>) -> Self {
        let mut merged: Vec<LawReport> = Vec::new();
        for r in reports {
            match merged.iter_mut().position(|m| m.law == r.law) {
                Some(i) => {
                    let m = merged.swap_remove(i);
                    merged.push(m.merge(r));
                }
                None => merged.push(r),
            }
        }
        merged.sort_by_key(|r| r.law);
        SuiteReport { pass: merged.iter().all(|r| r.pass), reports: merged }
    }

    pub fn get(&self, law: LawId) -> Option<&LawReport> {
        self.reports.iter().find(|r| r.law == law)
    }

    pub fn failed(&self) -> Vec<LawId> {
        self.reports.iter().filter(|r| !r.pass).map(|r| r.law).collect()
    }
}

/// How fibre elements are sampled and residuals measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplePlan {
    /// Random elements per fibre (finite fibres are always enumerated).
    pub elements: usize,
    pub seed: u64,
    /// Overrides the transport's default tolerance.
    pub tolerance: Option<f64>,
    pub distance: DistancePolicy,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan { elements: 8, seed: 0, tolerance: None, distance: DistancePolicy::default() }
    }
}

impl SamplePlan {
    pub fn with_seed(seed: u64) -> Self {
        SamplePlan { seed, ..Self::default() }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    pub fn tolerance_for<T: Transport + ?Sized>(&self, transport: &T) -> f64 {
        self.tolerance.unwrap_or_else(|| transport.default_tolerance())
    }

    /// Deterministic samples from `fiber`; `key` separates streams.
    pub fn sample(&self, fiber: &Fiber, key: u64) -> Vec<FiberElement> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        fiber.sample(&mut rng, self.elements)
    }
}

/// All maps `I_{g_i → g_j}` over a grid, evaluated once.
struct MapTable {
    grid: Vec<f64>,
    maps: Vec<Vec<Result<FiberMap>>>,
    samples: Vec<Vec<FiberElement>>,
}

impl MapTable {
    fn build<T: Transport + ?Sized>(transport: &T, path: &Path, grid: &[f64], plan: &SamplePlan) -> Result<Self> {
        let maps: Vec<Vec<Result<FiberMap>>> =
            grid.iter().map(|&s| grid.iter().map(|&t| transport.at(path, s, t)).collect()).collect();
        let mut samples = Vec::with_capacity(grid.len());
        for (i, &s) in grid.iter().enumerate() {
            let fiber = transport.bundle().fiber_at(&path.eval(s)?)?;
            samples.push(plan.sample(&fiber, i as u64));
        }
        Ok(MapTable { grid: grid.to_vec(), maps, samples })
    }
}

/// Composition law `I_{s→t} ∘ I_{r→s} = I_{r→t}` over all grid triples, plus
/// the identity law at every grid point.
pub fn check_groupoid<T: Transport + ?Sized>(transport: &T, path: &Path, grid: &[f64], plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::GroupoidComposition, plan.tolerance_for(transport));
    let table = match MapTable::build(transport, path, grid, plan) {
        Ok(t) => t,
        Err(e) => {
            report.record_error(&e, || Witness::new(path, 0.0));
            return report;
        }
    };
    let n = grid.len();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let (r, s, t) = (table.grid[i], table.grid[j], table.grid[k]);
                let w = || Witness::new(path, 0.0).from(r).at(s, t);
                let (a, b, c) = match (&table.maps[i][j], &table.maps[j][k], &table.maps[i][k]) {
                    (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                    (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                        report.record_error(e, w);
                        continue;
                    }
                };
                for u in &table.samples[i] {
                    let lhs = a.apply(u).and_then(|v| b.apply(&v));
                    let rhs = c.apply(u);
                    match (lhs, rhs) {
                        (Ok(x), Ok(y)) => report.record(c.target().distance(&x, &y, plan.distance), w),
                        (Err(e), _) | (_, Err(e)) => report.record_error(&e, w),
                    }
                }
            }
        }
    }
    let identity = identity_from_table(transport, path, &table, plan);
    report.merge(LawReport { law: LawId::GroupoidComposition, ..identity })
}

fn identity_from_table<T: Transport + ?Sized>(transport: &T, path: &Path, table: &MapTable, plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::Identity, plan.tolerance_for(transport));
    for (i, &s) in table.grid.iter().enumerate() {
        let w = || Witness::new(path, 0.0).at(s, s);
        match &table.maps[i][i] {
            Ok(m) => {
                for u in &table.samples[i] {
                    report.record(m.identity_deviation(std::slice::from_ref(u), plan.distance), w);
                }
            }
            Err(e) => report.record_error(e, w),
        }
    }
    report
}

/// Identity law `I_{s→s} = id` at every grid point.
pub fn check_identity<T: Transport + ?Sized>(transport: &T, path: &Path, grid: &[f64], plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::Identity, plan.tolerance_for(transport));
    for (i, &s) in grid.iter().enumerate() {
        let w = || Witness::new(path, 0.0).at(s, s);
        let result = transport.at(path, s, s).map(|m| {
            let fiber = m.source().clone();
            (m, plan.sample(&fiber, i as u64))
        });
        match result {
            Ok((m, samples)) => {
                for u in &samples {
                    report.record(m.identity_deviation(std::slice::from_ref(u), plan.distance), w);
                }
            }
            Err(e) => report.record_error(&e, w),
        }
    }
    report
}

/// `I_{t→s} ∘ I_{s→t} = id`, and `(I_{s→t})⁻¹ = I_{t→s}` on the target fibre.
pub fn check_inverse<T: Transport + ?Sized>(transport: &T, path: &Path, grid: &[f64], plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::Inverse, plan.tolerance_for(transport));
    let table = match MapTable::build(transport, path, grid, plan) {
        Ok(t) => t,
        Err(e) => {
            report.record_error(&e, || Witness::new(path, 0.0));
            return report;
        }
    };
    let n = grid.len();
    for i in 0..n {
        for j in 0..n {
            let (s, t) = (table.grid[i], table.grid[j]);
            let w = || Witness::new(path, 0.0).at(s, t);
            let (fwd, bwd) = match (&table.maps[i][j], &table.maps[j][i]) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    report.record_error(e, w);
                    continue;
                }
            };
            match fwd.then(bwd) {
                Ok(round) => {
                    for u in &table.samples[i] {
                        report.record(round.identity_deviation(std::slice::from_ref(u), plan.distance), w);
                    }
                }
                Err(e) => report.record_error(&e, w),
            }
            match fwd.inverse() {
                Ok(inv) => {
                    for v in &table.samples[j] {
                        report.record(inv.max_deviation(bwd, std::slice::from_ref(v), plan.distance), w);
                    }
                }
                Err(e) => report.record_error(&e, w),
            }
        }
    }
    report
}

/// Compares two maps with the same endpoints on samples of their source fibre.
pub(crate) fn compare_maps(
    report: &mut LawReport,
    lhs: Result<FiberMap>,
    rhs: Result<FiberMap>,
    plan: &SamplePlan,
    key: u64,
    witness: impl Fn() -> Witness,
) {
    match (lhs, rhs) {
        (Ok(a), Ok(b)) => {
            if !a.source().same_fiber(b.source()) || !a.target().same_fiber(b.target()) {
                report.record(f64::INFINITY, || witness().detail("maps have different endpoint fibres"));
                return;
            }
            for u in plan.sample(b.source(), key) {
                report.record(a.max_deviation(&b, std::slice::from_ref(&u), plan.distance), &witness);
            }
        }
        (Err(e), _) | (_, Err(e)) => report.record_error(&e, witness),
    }
}

/// `I^{γ|sub}_{s→t} = I^γ_{s→t}` for grid points in `sub`.
pub fn check_restriction<T: Transport + ?Sized>(
    transport: &T,
    path: &Path,
    sub: Interval,
    grid: &[f64],
    plan: &SamplePlan,
) -> LawReport {
    let mut report = LawReport::new(LawId::Restriction, plan.tolerance_for(transport));
    let restricted = match path.restrict(sub) {
        Ok(p) => p,
        Err(e) => {
            report.record_error(&e, || Witness::new(path, 0.0).detail(format!("restriction to {sub}")));
            return report;
        }
    };
    for (i, &s) in grid.iter().enumerate() {
        for (j, &t) in grid.iter().enumerate() {
            let w = || Witness::new(path, 0.0).at(s, t).detail(format!("restricted to {sub}"));
            if !sub.contains(s) || !sub.contains(t) {
                report.record(f64::INFINITY, || w().detail(format!("grid point outside {sub}")));
                continue;
            }
            let key = (i * grid.len() + j) as u64;
            compare_maps(&mut report, transport.at(&restricted, s, t), transport.at(path, s, t), plan, key, w);
        }
    }
    report
}

/// `I^{γ∘χ}_{s→t} = I^γ_{χ(s)→χ(t)}` for grid points in the source of `χ`.
pub fn check_reparam<T: Transport + ?Sized>(
    transport: &T,
    path: &Path,
    chi: &Reparam,
    grid: &[f64],
    plan: &SamplePlan,
) -> LawReport {
    let mut report = LawReport::new(LawId::Reparametrization, plan.tolerance_for(transport));
    let composed = match path.reparametrize(chi) {
        Ok(p) => p,
        Err(e) => {
            report.record_error(&e, || Witness::new(path, 0.0));
            return report;
        }
    };
    let describe = format!("{:?} reparametrization {} -> {}", chi.orientation(), chi.source(), chi.target());
    for (i, &s) in grid.iter().enumerate() {
        for (j, &t) in grid.iter().enumerate() {
            let w = || Witness::new(path, 0.0).at(s, t).detail(describe.clone());
            let key = (i * grid.len() + j) as u64;
            let lhs = transport.at(&composed, s, t);
            let rhs = transport.at(path, chi.map(s), chi.map(t));
            compare_maps(&mut report, lhs, rhs, plan, key, w);
        }
    }
    report
}

/// A reparametrization recipe, instantiated against each path's domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReparamSpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "preserving")]
    pub orientation: Orientation,
    /// Source interval; defaults to the path's own domain.
    #[serde(default)]
    pub source: Option<Interval>,
}

fn preserving() -> Orientation {
    Orientation::Preserving
}

impl ReparamSpec {
    pub fn new(shape: Shape, orientation: Orientation, source: Option<Interval>) -> Self {
        ReparamSpec { shape, orientation, source }
    }

    pub fn build(&self, target: Interval) -> Result<Reparam> {
        let source = if target.is_degenerate() { target } else { self.source.unwrap_or(target) };
        Reparam::new(source, target, self.shape.clone(), self.orientation)
    }
}

/// Sampling plan for deciding whether a transport is parallel along paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckSuite {
    pub paths: Vec<Path>,
    pub grid_size: usize,
    /// Subintervals as fractions `[a, b]` of each path's domain.
    pub subintervals: Vec<[f64; 2]>,
    pub reparams: Vec<ReparamSpec>,
    pub plan: SamplePlan,
    /// Laws to run; empty means all five.
    pub laws: Vec<LawId>,
}

impl CheckSuite {
    pub const DEFAULT_GRID: usize = 11;

    pub fn new(paths: Vec<Path>) -> Self {
        CheckSuite {
            paths,
            grid_size: Self::DEFAULT_GRID,
            subintervals: vec![[0.2, 0.7], [0.0, 0.5]],
            reparams: vec![
                ReparamSpec::new(Shape::Power { exponent: 2.0 }, Orientation::Preserving, None),
                ReparamSpec::new(Shape::Warp { amplitude: 0.5 }, Orientation::Preserving, Some(Interval::new(-1.0, 2.0).unwrap())),
                ReparamSpec::new(Shape::Affine, Orientation::Reversing, None),
            ],
            plan: SamplePlan::default(),
            laws: Vec::new(),
        }
    }

    pub fn with_plan(mut self, plan: SamplePlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn with_grid(mut self, n: usize) -> Self {
        self.grid_size = n;
        self
    }

    pub fn with_laws(mut self, laws: Vec<LawId>) -> Self {
        self.laws = laws;
        self
    }

    pub fn selected(&self, law: LawId) -> bool {
        self.laws.is_empty() || self.laws.contains(&law)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::Model("check suite has no paths".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::Model("check suite grid is empty".into()));
        }
        for [a, b] in &self.subintervals {
            if !(0.0..=1.0).contains(a) || !(0.0..=1.0).contains(b) || a > b {
                return Err(Error::Model(format!("subinterval fractions [{a}, {b}] must satisfy 0 <= a <= b <= 1")));
            }
        }
        Ok(())
    }

    fn subinterval(domain: Interval, [a, b]: [f64; 2]) -> Result<Interval> {
        let lo = domain.lo() + a * domain.len();
        let hi = if b >= 1.0 { domain.hi() } else { domain.lo() + b * domain.len() };
        Interval::new(lo, hi)
    }
}

/// Runs the groupoid, identity, inverse, restriction and reparametrization
/// checks of `suite`; passes iff all of them pass.
pub fn is_parallel_transport_along_paths<T: Transport + ?Sized>(transport: &T, suite: &CheckSuite) -> SuiteReport {
    let tol = suite.plan.tolerance_for(transport);
    if let Err(e) = suite.validate() {
        let mut r = LawReport::new(LawId::GroupoidComposition, tol);
        r.record(f64::INFINITY, || Witness { path: String::new(), r: None, s: None, t: None, residual: 0.0, detail: Some(e.to_string()) });
        return SuiteReport::from_reports([r]);
    }
    let mut reports = Vec::new();
    for path in &suite.paths {
        let domain = path.domain();
        let grid = domain.grid(suite.grid_size);
        if suite.selected(LawId::GroupoidComposition) {
            let r = check_groupoid(transport, path, &grid, &suite.plan);
            reports.push(r);
        }
        if suite.selected(LawId::Identity) {
            reports.push(check_identity(transport, path, &grid, &suite.plan));
        }
        if suite.selected(LawId::Inverse) {
            reports.push(check_inverse(transport, path, &grid, &suite.plan));
        }
        if suite.selected(LawId::Restriction) {
            for frac in &suite.subintervals {
                let mut r = LawReport::new(LawId::Restriction, tol);
                match CheckSuite::subinterval(domain, *frac) {
                    Ok(sub) => r = check_restriction(transport, path, sub, &sub.grid(suite.grid_size), &suite.plan),
                    Err(e) => r.record_error(&e, || Witness::new(path, 0.0)),
                }
                reports.push(r);
            }
        }
        if suite.selected(LawId::Reparametrization) {
            for spec in &suite.reparams {
                let mut r = LawReport::new(LawId::Reparametrization, tol);
                match spec.build(domain) {
                    Ok(chi) => r = check_reparam(transport, path, &chi, &chi.source().grid(suite.grid_size), &suite.plan),
                    Err(e) => r.record_error(&e, || Witness::new(path, 0.0)),
                }
                reports.push(r);
            }
        }
    }
    SuiteReport::from_reports(reports)
}

/// Serializes non-finite floats as strings so reports stay valid JSON.
pub mod float_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("invalid float {other:?}"))),
            },
        }
    }
}

/// Maps `u` with a transport and returns the payload, for brevity in tests and tools.
pub fn transported_payload<T: Transport + ?Sized>(transport: &T, path: &Path, s: f64, t: f64, u: &FiberElement) -> Result<Payload> {
    Ok(apply_transport(transport, path, s, t, u)?.into_payload())
}
