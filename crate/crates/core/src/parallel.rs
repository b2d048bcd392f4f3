//! Parallel transports (one fibre map per path) and the two-way bridge to
//! transports along paths.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::bundle::{BundleModel, FiberElement, Payload};
use crate::connection::{check_initial_uniqueness, check_lift_smoothness, check_linearization, lift_via_transport, Probe};
use crate::error::{Error, Result};
use crate::fiber_map::FiberMap;
use crate::path::{Interval, Orientation, Path, Shape, ENDPOINT_TOL};
use crate::transport::{compare_maps, Backend, LawId, LawReport, ReparamSpec, SamplePlan, SuiteReport, Transport, Witness};

/// One fibre map per path, from the fibre over its start to the fibre over its end.
pub trait ParallelTransport: Send + Sync {
    fn bundle(&self) -> &BundleModel;

    /// Backend that produced the underlying maps.
    fn backend(&self) -> Backend;

    fn along(&self, path: &Path) -> Result<FiberMap>;

    fn default_tolerance(&self) -> f64 {
        self.backend().default_tolerance()
    }
}

impl<P: ParallelTransport + ?Sized> ParallelTransport for &P {
    fn bundle(&self) -> &BundleModel {
        (**self).bundle()
    }
    fn backend(&self) -> Backend {
        (**self).backend()
    }
    fn along(&self, path: &Path) -> Result<FiberMap> {
        (**self).along(path)
    }
    fn default_tolerance(&self) -> f64 {
        (**self).default_tolerance()
    }
}

impl<P: ParallelTransport + ?Sized> ParallelTransport for Arc<P> {
    fn bundle(&self) -> &BundleModel {
        (**self).bundle()
    }
    fn backend(&self) -> Backend {
        (**self).backend()
    }
    fn along(&self, path: &Path) -> Result<FiberMap> {
        (**self).along(path)
    }
    fn default_tolerance(&self) -> f64 {
        (**self).default_tolerance()
    }
}

/// `Ψ^γ = I^γ_{σ→τ}` for a transport `I`, where `[σ, τ]` is the domain of `γ`.
#[derive(Clone, Debug)]
pub struct EndpointTransport<T> {
    inner: T,
}

pub fn to_parallel<T: Transport>(transport: T) -> EndpointTransport<T> {
    EndpointTransport { inner: transport }
}

impl<T> EndpointTransport<T> {
    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> ParallelTransport for EndpointTransport<T> {
    fn bundle(&self) -> &BundleModel {
        self.inner.bundle()
    }
    fn backend(&self) -> Backend {
        self.inner.backend()
    }
    fn along(&self, path: &Path) -> Result<FiberMap> {
        let d = path.domain();
        self.inner.at(path, d.lo(), d.hi())
    }
    fn default_tolerance(&self) -> f64 {
        self.inner.default_tolerance()
    }
}

/// `P_{s→t} = Ψ^{β|[s,t]}` for `s ≤ t` and `(Ψ^{β|[t,s]})⁻¹` otherwise.
#[derive(Clone, Debug)]
pub struct RestrictedTransport<P> {
    inner: P,
}

pub fn to_transport<P: ParallelTransport>(parallel: P) -> RestrictedTransport<P> {
    RestrictedTransport { inner: parallel }
}

impl<P> RestrictedTransport<P> {
    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ParallelTransport> Transport for RestrictedTransport<P> {
    fn bundle(&self) -> &BundleModel {
        self.inner.bundle()
    }
    fn backend(&self) -> Backend {
        Backend::Bridged
    }
    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let s = path.domain().snap(s)?;
        let t = path.domain().snap(t)?;
        if s <= t {
            self.inner.along(&path.restrict(Interval::new(s, t)?)?)
        } else {
            self.inner.along(&path.restrict(Interval::new(t, s)?)?)?.inverse()
        }
    }
    fn default_tolerance(&self) -> f64 {
        self.inner.default_tolerance()
    }
}

/// Per-axiom results; passes iff all four axioms pass.
pub type AxiomReport = SuiteReport;

/// Sampling plan for the axiom suite.
#[derive(Clone, Debug)]
pub struct AxiomSuite {
    pub paths: Vec<Path>,
    /// Orientation-preserving reparametrizations of `[0, 1]`.
    pub reparams: Vec<ReparamSpec>,
    /// Index pairs `(i, j)` with `paths[i]` ending where `paths[j]` starts.
    /// Every path is additionally paired with its own canonical inverse.
    pub pairs: Vec<(usize, usize)>,
    /// Point paths; defaults to one at the start of every path.
    pub point_paths: Vec<Path>,
    pub plan: SamplePlan,
}

impl AxiomSuite {
    /// Default reparametrizations, composable pairs found by endpoint matching,
    /// and point paths at each path start.
    pub fn new(paths: Vec<Path>) -> Self {
        let mut pairs = Vec::new();
        for (i, a) in paths.iter().enumerate() {
            for (j, b) in paths.iter().enumerate() {
                if a.dim() == b.dim() && (a.end() - b.start()).norm() <= ENDPOINT_TOL {
                    pairs.push((i, j));
                }
            }
        }
        let point_paths = paths
            .iter()
            .filter_map(|p| Path::point_path(p.domain().lo(), p.start().as_slice()).ok())
            .collect();
        AxiomSuite {
            paths,
            reparams: vec![
                ReparamSpec::new(Shape::Power { exponent: 2.0 }, Orientation::Preserving, None),
                ReparamSpec::new(Shape::Power { exponent: 3.0 }, Orientation::Preserving, None),
                ReparamSpec::new(Shape::Warp { amplitude: 0.5 }, Orientation::Preserving, Some(Interval::new(-1.0, 2.0).unwrap())),
            ],
            pairs,
            point_paths,
            plan: SamplePlan::default(),
        }
    }

    pub fn with_plan(mut self, plan: SamplePlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.reparams.iter().find(|r| r.orientation != Orientation::Preserving) {
            return Err(Error::Reparam(format!("axiom suite takes orientation-preserving reparametrizations only, got {:?}", r.shape)));
        }
        if let Some(&(i, j)) = self.pairs.iter().find(|&&(i, j)| i >= self.paths.len() || j >= self.paths.len()) {
            return Err(Error::Model(format!("pair ({i}, {j}) indexes past {} paths", self.paths.len())));
        }
        if let Some(p) = self.point_paths.iter().find(|p| !p.domain().is_degenerate()) {
            return Err(Error::Model(format!("point path expected, got domain {}", p.domain())));
        }
        Ok(())
    }
}

fn tolerance<P: ParallelTransport + ?Sized>(psi: &P, plan: &SamplePlan) -> f64 {
    plan.tolerance.unwrap_or_else(|| psi.default_tolerance())
}

/// Evaluates the four axioms on the suite's samples.
pub fn check_axioms<P: ParallelTransport + ?Sized>(psi: &P, suite: &AxiomSuite) -> AxiomReport {
    let plan = &suite.plan;
    let tol = tolerance(psi, plan);
    let mut reparam = LawReport::new(LawId::AxiomReparametrization, tol);
    let mut inverse = LawReport::new(LawId::AxiomCanonicalInverse, tol);
    let mut product = LawReport::new(LawId::AxiomCanonicalProduct, tol);
    let mut point = LawReport::new(LawId::AxiomPointPath, tol);
    if let Err(e) = suite.validate() {
        let w = || Witness { path: String::new(), r: None, s: None, t: None, residual: 0.0, detail: None };
        for r in [&mut reparam, &mut inverse, &mut product, &mut point] {
            r.record_error(&e, w);
        }
        return SuiteReport::from_reports([reparam, inverse, product, point]);
    }
    let unit: Vec<Result<Path>> = suite.paths.iter().map(Path::to_unit_domain).collect();
    let mut key = 0u64;
    let mut next_key = || {
        key += 1;
        key
    };

    for (path, u) in suite.paths.iter().zip(&unit) {
        let w = || Witness::new(path, 0.0);
        let u = match u {
            Ok(u) => u,
            Err(e) => {
                for r in [&mut reparam, &mut inverse] {
                    r.record_error(e, w);
                }
                continue;
            }
        };
        // the affine map onto [0, 1] is itself an orientation-preserving change
        compare_maps(&mut reparam, psi.along(u), psi.along(path), plan, next_key(), || w().detail("affine onto [0, 1]"));
        for spec in &suite.reparams {
            let detail = format!("reparametrized by {:?}", spec.shape);
            let composed = spec.build(Interval::UNIT).and_then(|chi| u.reparametrize(&chi));
            match composed {
                Ok(c) => compare_maps(&mut reparam, psi.along(&c), psi.along(u), plan, next_key(), || w().detail(detail.clone())),
                Err(e) => reparam.record_error(&e, || w().detail(detail.clone())),
            }
        }
        let backward = u.canonical_inverse().and_then(|inv| psi.along(&inv));
        let expected = psi.along(u).and_then(|m| m.inverse());
        compare_maps(&mut inverse, backward, expected, plan, next_key(), w);
        // a path followed by its canonical inverse is always composable
        let there_and_back = u.canonical_inverse().and_then(|inv| u.canonical_product(&inv));
        let expected = psi.along(u).and_then(|there| there.then(&psi.along(&u.canonical_inverse()?)?));
        compare_maps(&mut product, there_and_back.and_then(|p| psi.along(&p)), expected, plan, next_key(), || w().detail("followed by its inverse"));
    }

    for &(i, j) in &suite.pairs {
        let w = || Witness::new(&suite.paths[i], 0.0).detail(format!("paths {i} then {j}"));
        let (a, b) = match (&unit[i], &unit[j]) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                product.record_error(e, w);
                continue;
            }
        };
        let lhs = a.canonical_product(b).and_then(|p| psi.along(&p));
        let rhs = psi.along(a).and_then(|m1| m1.then(&psi.along(b)?));
        compare_maps(&mut product, lhs, rhs, plan, next_key(), w);
    }

    for p in &suite.point_paths {
        let w = || Witness::new(p, 0.0);
        match psi.along(p) {
            Ok(m) => {
                let samples = plan.sample(m.source(), next_key());
                point.record(m.identity_deviation(&samples, plan.distance), w);
            }
            Err(e) => point.record_error(&e, w),
        }
    }
    SuiteReport::from_reports([reparam, inverse, product, point])
}

/// `to_parallel(to_transport(Ψ))` against `Ψ` on every suite path.
pub fn round_trip_psi<P: ParallelTransport>(psi: &P, paths: &[Path], plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::RoundTrip, tolerance(psi, plan));
    let back = to_parallel(to_transport(psi));
    for (k, path) in paths.iter().enumerate() {
        compare_maps(&mut report, back.along(path), psi.along(path), plan, k as u64, || Witness::new(path, 0.0));
    }
    report
}

/// `to_transport(to_parallel(T))` against `T` on all grid pairs of every path.
pub fn round_trip_transport<T: Transport>(transport: &T, paths: &[Path], grid_size: usize, plan: &SamplePlan) -> LawReport {
    let mut report = LawReport::new(LawId::RoundTrip, plan.tolerance_for(transport));
    let back = to_transport(to_parallel(transport));
    let mut key = 0u64;
    for path in paths {
        let grid = path.domain().grid(grid_size);
        for &s in &grid {
            for &t in &grid {
                key += 1;
                compare_maps(&mut report, back.at(path, s, t), transport.at(path, s, t), plan, key, || Witness::new(path, 0.0).at(s, t));
            }
        }
    }
    report
}

/// Output change of `Ψ^γ(p)` when the path end and the payload move by `eps`;
/// the report passes when it stays below `bound`.
pub fn check_continuity<P: ParallelTransport + ?Sized>(psi: &P, path: &Path, p: &FiberElement, eps: f64, bound: f64) -> LawReport {
    let mut report = LawReport::new(LawId::Continuity, bound);
    let w = || Witness::new(path, 0.0).detail(format!("perturbation {eps}"));
    let result = (|| -> Result<f64> {
        let base = psi.along(path)?.apply(p)?;
        let d = path.domain();
        let shorter = path.restrict(Interval::new(d.lo(), (d.hi() - eps).max(d.lo()))?)?;
        let nudged = match p.payload() {
            Payload::Vector(v) => Payload::Vector(v.add_scalar(eps)),
            other => other.clone(),
        };
        let q = psi.bundle().fiber_at(p.base())?.element(nudged)?;
        let moved = psi.along(&shorter)?.apply(&q)?;
        Ok((moved.total_coords() - base.total_coords()).norm())
    })();
    match result {
        Ok(r) => report.record(r, w),
        Err(e) => report.record_error(&e, w),
    }
    report
}

/// Settings for the lift conditions of a parallel transport at one point.
#[derive(Clone, Debug)]
pub struct LiftConditions {
    /// Length of the probe rays starting at the point.
    pub width: f64,
    pub fd_step: f64,
    pub smoothness_bound: f64,
    pub uniqueness_tol: f64,
    pub linearization_tol: f64,
    pub smoothness_samples: usize,
}

impl Default for LiftConditions {
    fn default() -> Self {
        LiftConditions {
            width: 0.1,
            fd_step: crate::connection::DEFAULT_FD_STEP,
            smoothness_bound: 1e4,
            uniqueness_tol: 1e-5,
            linearization_tol: 1e-4,
            smoothness_samples: 41,
        }
    }
}

/// Lifts `t ↦ Ψ^{γ|[σ,t]}(p)` of rays starting at `p`'s base point: C¹ along each
/// ray, equal tangents for a ray and a parabola sharing its start and velocity,
/// and tangents linear in the ray velocity.
pub fn check_lift_conditions<P: ParallelTransport, R: Rng + ?Sized>(
    psi: &P,
    p: &FiberElement,
    cfg: &LiftConditions,
    rng: &mut R,
) -> Result<SuiteReport> {
    let transport = to_transport(psi);
    let x = p.base().clone();
    let n = x.len();
    let axis = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
    let mut dirs: Vec<DVector<f64>> = (0..n).map(axis).collect();
    dirs.push(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
    let rays: Vec<Probe> = dirs.iter().map(|d| Probe::ray(&x, d, cfg.width)).collect::<Result<_>>()?;
    let mut reports = Vec::new();
    for ray in &rays {
        let lift = lift_via_transport(&transport, &ray.path, ray.anchor, p, &ray.path.domain().grid(cfg.smoothness_samples), cfg.fd_step)?;
        reports.push(check_lift_smoothness(&lift, cfg.smoothness_bound));
        let bend = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let parabola = Probe::parabola(&x, &ray.velocity()?, &bend, ray.path.domain())?;
        reports.push(check_initial_uniqueness(&transport, p, ray, &parabola, cfg.fd_step, cfg.uniqueness_tol));
    }
    for i in 0..rays.len() {
        for j in (i + 1)..rays.len() {
            let coeffs = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            reports.push(check_linearization(&transport, p, &rays[i], &rays[j], coeffs, cfg.fd_step, cfg.linearization_tol));
        }
    }
    Ok(SuiteReport::from_reports(reports))
}
