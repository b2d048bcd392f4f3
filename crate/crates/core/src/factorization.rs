//! Factoring a transport along one path through a fixed model set `Q`:
//! `I_{s→t} = F(t)⁻¹ ∘ F(s)` with bijections `F(s): π⁻¹(γ(s)) → Q`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bundle::{BundleModel, Fiber, FiberKind};
use crate::error::{Error, Result};
use crate::fiber_map::{Action, FiberMap};
use crate::path::Path;
use crate::transport::{Backend, LawId, LawReport, SamplePlan, Transport, Witness, ALGEBRAIC_TOLERANCE};

type Family = Arc<dyn Fn(f64) -> Result<FiberMap> + Send + Sync>;

/// The model set `Q`: a copy of the fibre over `γ(anchor)`, tagged with its anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub anchor: Option<f64>,
    pub fiber: Fiber,
}

/// A family of bijections `F(s)` from the fibres along a path onto `Q`.
pub struct Factorization {
    path: Path,
    bundle: BundleModel,
    model: ModelSet,
    family: Family,
    tolerance: f64,
    cache: Mutex<HashMap<u64, FiberMap>>,
}

impl fmt::Debug for Factorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Factorization")
            .field("path", &self.path.label())
            .field("anchor", &self.model.anchor)
            .finish_non_exhaustive()
    }
}

/// `F(s) = I_{s→s₀}`, with `Q` the fibre over `γ(s₀)`.
pub fn factorize(transport: Arc<dyn Transport>, path: &Path, anchor: f64) -> Result<Factorization> {
    let anchor = path.domain().snap(anchor)?;
    let fiber = transport.bundle().fiber_at(&path.eval(anchor)?)?;
    let bundle = transport.bundle().clone();
    let tolerance = transport.default_tolerance();
    let p = path.clone();
    let family: Family = Arc::new(move |s| transport.at(&p, s, anchor));
    Ok(Factorization::build(path.clone(), bundle, ModelSet { anchor: Some(anchor), fiber }, family, tolerance))
}

impl Factorization {
    fn build(path: Path, bundle: BundleModel, model: ModelSet, family: Family, tolerance: f64) -> Self {
        Factorization { path, bundle, model, family, tolerance, cache: Mutex::new(HashMap::new()) }
    }

    /// A family given explicitly on a grid; `maps[i]` must go from the fibre over
    /// `γ(grid[i])` to `model`.
    pub fn from_maps(path: &Path, bundle: BundleModel, model: Fiber, grid: Vec<f64>, maps: Vec<FiberMap>) -> Result<Self> {
        if grid.len() != maps.len() || grid.is_empty() {
            return Err(Error::Model("explicit family needs one map per grid point".into()));
        }
        let mut table = Vec::with_capacity(grid.len());
        for (s, m) in grid.into_iter().zip(maps) {
            let s = path.domain().snap(s)?;
            let over = bundle.fiber_at(&path.eval(s)?)?;
            if !m.source().same_fiber(&over) || !m.target().same_fiber(&model) {
                return Err(Error::Composition(format!("map at s = {s} has the wrong source or target")));
            }
            table.push((s, m));
        }
        let family: Family = Arc::new(move |s| {
            table
                .iter()
                .find(|(g, _)| (g - s).abs() <= 1e-12)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::Domain(format!("explicit family is not defined at s = {s}")))
        });
        Ok(Self::build(path.clone(), bundle, ModelSet { anchor: None, fiber: model }, family, ALGEBRAIC_TOLERANCE))
    }

    /// `s ↦ D ∘ F(s)` for a bijection `D: Q → Q'`.
    pub fn post_compose(self: &Arc<Self>, d: &FiberMap) -> Result<Factorization> {
        if !d.source().same_fiber(&self.model.fiber) {
            return Err(Error::Composition("gauge map does not start at the model set".into()));
        }
        let inner = Arc::clone(self);
        let d2 = d.clone();
        let family: Family = Arc::new(move |s| inner.map_at(s)?.then(&d2));
        let model = ModelSet { anchor: self.model.anchor, fiber: d.target().clone() };
        Ok(Self::build(self.path.clone(), self.bundle.clone(), model, family, self.tolerance))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bundle(&self) -> &BundleModel {
        &self.bundle
    }

    pub fn model(&self) -> &ModelSet {
        &self.model
    }

    pub fn anchor(&self) -> Option<f64> {
        self.model.anchor
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// `F(s)`, memoized.
    pub fn map_at(&self, s: f64) -> Result<FiberMap> {
        let s = self.path.domain().snap(s)?;
        let key = s.to_bits();
        if let Some(m) = self.cache.lock().expect("factorization cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let m = (self.family)(s)?;
        self.cache.lock().expect("factorization cache poisoned").entry(key).or_insert_with(|| m.clone());
        Ok(m)
    }

    /// `(s, table)` for every grid point, finite fibres only.
    pub fn permutation_tables(&self, grid: &[f64]) -> Result<Vec<(f64, Vec<usize>)>> {
        grid.iter()
            .map(|&s| {
                let m = self.map_at(s)?;
                m.permutation_table()
                    .map(|t| (s, t))
                    .ok_or_else(|| Error::Model("permutation tables exist only for finite fibres".into()))
            })
            .collect()
    }

    /// Checks that every `F(s)` on the grid is a bijection onto `Q`.
    pub fn check_bijection(&self, grid: &[f64], plan: &SamplePlan) -> LawReport {
        let mut report = LawReport::new(LawId::Bijection, plan.tolerance.unwrap_or(self.tolerance));
        for (i, &s) in grid.iter().enumerate() {
            let w = || Witness::new(&self.path, 0.0).at(s, s);
            let map = match self.map_at(s) {
                Ok(m) => m,
                Err(e) => {
                    report.record_error(&e, w);
                    continue;
                }
            };
            if let FiberKind::Finite { size } = map.source().kind() {
                let ok = map.permutation_table().is_some_and(|t| {
                    let mut seen = vec![false; *size];
                    t.iter().all(|&j| j < *size && !std::mem::replace(&mut seen[j], true))
                });
                report.record(if ok { 0.0 } else { f64::INFINITY }, w);
            }
            match map.inverse().and_then(|inv| map.then(&inv)) {
                Ok(round) => {
                    for u in plan.sample(map.source(), i as u64) {
                        report.record(round.identity_deviation(std::slice::from_ref(&u), plan.distance), w);
                    }
                }
                Err(e) => report.record_error(&e, w),
            }
        }
        report
    }
}

/// The transport `F(t)⁻¹ ∘ F(s)` rebuilt from a factorization; defined on the
/// factorization's path and its restrictions only.
#[derive(Clone, Debug)]
pub struct FactorizedTransport {
    fac: Arc<Factorization>,
}

pub fn reconstruct(fac: Arc<Factorization>) -> FactorizedTransport {
    FactorizedTransport { fac }
}

impl FactorizedTransport {
    pub fn factorization(&self) -> &Arc<Factorization> {
        &self.fac
    }
}

impl Transport for FactorizedTransport {
    fn bundle(&self) -> &BundleModel {
        &self.fac.bundle
    }

    fn backend(&self) -> Backend {
        Backend::Factorized
    }

    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let own = &self.fac.path;
        if !path.is_restriction_of(own) {
            return Err(Error::UnsupportedPath(format!(
                "factorization along {} cannot transport along {}",
                own.label(),
                path.label()
            )));
        }
        let s = path.domain().snap(s)?;
        let t = path.domain().snap(t)?;
        let fs = self.fac.map_at(s)?;
        let ft_inv = self.fac.map_at(t)?.inverse()?;
        fs.then(&ft_inv)
    }

    fn default_tolerance(&self) -> f64 {
        self.fac.tolerance
    }
}

/// Largest deviation between `reconstruct(fac)` and `transport` over grid pairs.
pub fn reconstruct_residual<T: Transport + ?Sized>(
    transport: &T,
    fac: &Arc<Factorization>,
    grid: &[f64],
    plan: &SamplePlan,
) -> LawReport {
    let rebuilt = reconstruct(Arc::clone(fac));
    let mut report = LawReport::new(LawId::RoundTrip, plan.tolerance.unwrap_or(fac.tolerance));
    let path = &fac.path;
    for (i, &s) in grid.iter().enumerate() {
        for (j, &t) in grid.iter().enumerate() {
            let w = || Witness::new(path, 0.0).at(s, t);
            match (rebuilt.at(path, s, t), transport.at(path, s, t)) {
                (Ok(a), Ok(b)) => {
                    for u in plan.sample(b.source(), (i * grid.len() + j) as u64) {
                        report.record(a.max_deviation(&b, std::slice::from_ref(&u), plan.distance), w);
                    }
                }
                (Err(e), _) | (_, Err(e)) => report.record_error(&e, w),
            }
        }
    }
    report
}

/// A bijection `D: Q° → Q` relating two factorizations of one transport.
#[derive(Clone, Debug)]
pub struct GaugeMap {
    pub map: FiberMap,
    pub at: f64,
}

impl GaugeMap {
    pub fn identity(model: Fiber) -> Self {
        GaugeMap { map: FiberMap::identity(model), at: f64::NAN }
    }

    pub fn permutation_table(&self) -> Option<Vec<usize>> {
        self.map.permutation_table()
    }
}

fn same_path(a: &Path, b: &Path) -> bool {
    a.is_restriction_of(b) && b.is_restriction_of(a)
}

/// `D = F₁(s*) ∘ F₂(s*)⁻¹`, with `s*` the first grid point, together with a
/// report of how much `F₁(s) ∘ F₂(s)⁻¹` varies over the grid.
pub fn gauge_map(fac1: &Factorization, fac2: &Factorization, grid: &[f64], plan: &SamplePlan) -> Result<(GaugeMap, LawReport)> {
    if !same_path(&fac1.path, &fac2.path) {
        return Err(Error::Composition("factorizations are along different paths".into()));
    }
    let first = *grid.first().ok_or_else(|| Error::Model("gauge map needs a nonempty grid".into()))?;
    let candidate = |s: f64| -> Result<FiberMap> { fac2.map_at(s)?.inverse()?.then(&fac1.map_at(s)?) };
    let d = candidate(first)?;
    let tol = plan.tolerance.unwrap_or(fac1.tolerance.max(fac2.tolerance));
    let mut report = LawReport::new(LawId::GaugeIndependence, tol);
    let samples = plan.sample(&fac2.model.fiber, 0);
    let all: Vec<(f64, Result<FiberMap>)> = grid.iter().map(|&s| (s, candidate(s))).collect();
    for (s, ds) in &all {
        for (t, dt) in &all {
            let w = || Witness::new(&fac1.path, 0.0).at(*s, *t);
            match (ds, dt) {
                (Ok(a), Ok(b)) => report.record(a.max_deviation(b, &samples, plan.distance), w),
                (Err(e), _) | (_, Err(e)) => report.record_error(e, w),
            }
        }
    }
    Ok((GaugeMap { map: d, at: first }, report))
}

/// Residual of `F₁(s) = D ∘ F₂(s)` over the grid.
pub fn verify_gauge(d: &GaugeMap, fac1: &Factorization, fac2: &Factorization, grid: &[f64], plan: &SamplePlan) -> LawReport {
    let tol = plan.tolerance.unwrap_or(fac1.tolerance.max(fac2.tolerance));
    let mut report = LawReport::new(LawId::Gauge, tol);
    for (i, &s) in grid.iter().enumerate() {
        let w = || Witness::new(&fac1.path, 0.0).at(s, s);
        let lhs = fac1.map_at(s);
        let rhs = fac2.map_at(s).and_then(|f2| f2.then(&d.map));
        match (lhs, rhs) {
            (Ok(a), Ok(b)) => {
                for u in plan.sample(a.source(), i as u64) {
                    report.record(a.max_deviation(&b, std::slice::from_ref(&u), plan.distance), w);
                }
            }
            (Err(e), _) | (_, Err(e)) => report.record_error(&e, w),
        }
    }
    report
}

/// A uniformly random permutation of `{0, …, n-1}`.
pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// A family of independent random bijections `F(s)` on a finite-fibre bundle,
/// with `Q` the fibre over the start of the path.
pub fn random_bijection_family<R: Rng + ?Sized>(
    bundle: &BundleModel,
    path: &Path,
    grid: &[f64],
    rng: &mut R,
) -> Result<Factorization> {
    let size = match bundle.fiber_kind() {
        FiberKind::Finite { size } => *size,
        _ => return Err(Error::Model("random bijection families need finite fibres".into())),
    };
    let model = bundle.fiber_at(&path.start())?;
    let maps = grid
        .iter()
        .map(|&s| {
            let src = bundle.fiber_at(&path.eval(s)?)?;
            FiberMap::new(src, model.clone(), Action::Permutation(random_permutation(rng, size)))
        })
        .collect::<Result<Vec<_>>>()?;
    Factorization::from_maps(path, bundle.clone(), model, grid.to_vec(), maps)
}

/// A permutation of the model set, as a gauge candidate.
pub fn permutation_gauge(model: &Fiber, table: Vec<usize>) -> Result<FiberMap> {
    FiberMap::new(model.clone(), model.clone(), Action::Permutation(table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::{group_transport_left, PathFunctional};
    use crate::group::GroupModel;
    use crate::path::Interval;
    use crate::transport::{check_groupoid, check_inverse, IdentityTransport};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line() -> Path {
        Path::line(&[0.0, 0.0], &[1.0, -1.0], Interval::UNIT).unwrap()
    }

    /// Composes permutation tables by hand: `(q ∘ p)[i] = q[p[i]]`.
    fn compose_tables(q: &[usize], p: &[usize]) -> Vec<usize> {
        p.iter().map(|&i| q[i]).collect()
    }

    fn invert_table(p: &[usize]) -> Vec<usize> {
        let mut inv = vec![0; p.len()];
        for (i, &j) in p.iter().enumerate() {
            inv[j] = i;
        }
        inv
    }

    #[test]
    fn anchor_map_is_identity() {
        let f = PathFunctional::parametric(GroupModel::So3, 0.8).unwrap();
        let t: Arc<dyn Transport> = Arc::new(group_transport_left(2, f).unwrap());
        let fac = factorize(t, &line(), 0.4).unwrap();
        let m = fac.map_at(0.4).unwrap();
        let samples = SamplePlan::default().sample(m.source(), 0);
        assert!(m.identity_deviation(&samples, Default::default()) < 1e-15);
    }

    #[test]
    fn finite_factorization_matches_permutation_oracle() {
        let bundle = BundleModel::finite(2, 3).unwrap();
        let path = line();
        let grid = Interval::UNIT.grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let family = Arc::new(random_bijection_family(&bundle, &path, &grid, &mut rng).unwrap());
        let raw: Vec<Vec<usize>> = family.permutation_tables(&grid).unwrap().into_iter().map(|(_, t)| t).collect();
        let t: Arc<dyn Transport> = Arc::new(reconstruct(Arc::clone(&family)));
        let anchor = 2;
        let fac = factorize(t, &path, grid[anchor]).unwrap();
        for (i, (_, table)) in fac.permutation_tables(&grid).unwrap().into_iter().enumerate() {
            // R_{s→s₀} = P(s₀)⁻¹ ∘ P(s)
            let oracle = compose_tables(&invert_table(&raw[anchor]), &raw[i]);
            assert_eq!(table, oracle);
        }
    }

    #[test]
    fn group_round_trip_is_exact() {
        let f = PathFunctional::field(GroupModel::So3, vec![vec![1.0, 0.2], vec![-0.4, 1.0], vec![0.3, 0.3]]).unwrap();
        let t: Arc<dyn Transport> = Arc::new(group_transport_left(2, f).unwrap());
        let path = line();
        let grid = Interval::UNIT.grid(11);
        let fac = Arc::new(factorize(Arc::clone(&t), &path, 0.3).unwrap());
        let r = reconstruct_residual(&*t, &fac, &grid, &SamplePlan::default());
        assert!(r.max_residual < 1e-12, "{}", r.max_residual);
    }

    #[test]
    fn identity_family_gives_identity_transport() {
        let bundle = BundleModel::finite(2, 4).unwrap();
        let path = line();
        let grid = Interval::UNIT.grid(4);
        let model = bundle.fiber_at(&path.start()).unwrap();
        let maps = grid
            .iter()
            .map(|&s| permutation_gauge(&model, (0..4).collect()).map(|m| {
                FiberMap::new(bundle.fiber_at(&path.eval(s).unwrap()).unwrap(), model.clone(), m.action().clone()).unwrap()
            }))
            .collect::<Result<Vec<_>>>()
            .unwrap();
        let fac = Arc::new(Factorization::from_maps(&path, bundle.clone(), model, grid.clone(), maps).unwrap());
        let t = reconstruct(fac);
        for &s in &grid {
            for &u in &grid {
                assert_eq!(t.at(&path, s, u).unwrap().permutation_table().unwrap(), vec![0, 1, 2, 3]);
            }
        }
        let id = IdentityTransport::new(bundle);
        assert!(check_groupoid(&id, &path, &grid, &SamplePlan::default()).pass);
    }

    #[test]
    fn reconstructed_transport_refuses_foreign_paths() {
        let bundle = BundleModel::finite(2, 2).unwrap();
        let grid = Interval::UNIT.grid(3);
        let fac = Arc::new(random_bijection_family(&bundle, &line(), &grid, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());
        let t = reconstruct(fac);
        let other = Path::line(&[0.0, 0.0], &[1.0, -1.0], Interval::UNIT).unwrap();
        assert!(matches!(t.at(&other, 0.0, 1.0), Err(Error::UnsupportedPath(_))));
        let foreign_sub = line().restrict(Interval::new(0.0, 0.5).unwrap()).unwrap();
        assert!(matches!(t.at(&foreign_sub, 0.0, 0.5), Err(Error::UnsupportedPath(_))));
        let own_sub = t.factorization().path().restrict(Interval::new(0.0, 0.5).unwrap()).unwrap();
        assert!(t.at(&own_sub, 0.0, 0.5).is_ok());
    }

    #[test]
    fn gauge_recovers_inverse_permutation() {
        let bundle = BundleModel::finite(2, 5).unwrap();
        let path = line();
        let grid = Interval::UNIT.grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fac1 = Arc::new(random_bijection_family(&bundle, &path, &grid, &mut rng).unwrap());
        let sigma = random_permutation(&mut rng, 5);
        let fac2 = fac1.post_compose(&permutation_gauge(&fac1.model().fiber, sigma.clone()).unwrap()).unwrap();
        let plan = SamplePlan::default();
        let (d, independence) = gauge_map(&fac1, &fac2, &grid, &plan).unwrap();
        assert_eq!(d.permutation_table().unwrap(), invert_table(&sigma));
        assert_eq!(independence.max_residual, 0.0);
        let report = verify_gauge(&d, &fac1, &fac2, &grid, &plan);
        assert!(report.pass && report.max_residual == 0.0);

        let (same, _) = gauge_map(&fac1, &fac1, &grid, &plan).unwrap();
        assert_eq!(same.permutation_table().unwrap(), vec![0, 1, 2, 3, 4]);
        if sigma != vec![0, 1, 2, 3, 4] {
            let id = GaugeMap::identity(fac1.model().fiber.clone());
            assert!(!verify_gauge(&id, &fac1, &fac2, &grid, &plan).pass);
        }
    }

    #[test]
    fn gauge_between_different_transports_is_not_independent() {
        let bundle = BundleModel::finite(2, 4).unwrap();
        let path = line();
        let grid = Interval::UNIT.grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_bijection_family(&bundle, &path, &grid, &mut rng).unwrap();
        let b = random_bijection_family(&bundle, &path, &grid, &mut rng).unwrap();
        let (_, independence) = gauge_map(&a, &b, &grid, &SamplePlan::default()).unwrap();
        assert!(!independence.pass);
    }

    #[test]
    fn anchors_differ_by_a_gauge() {
        let f = PathFunctional::parametric(GroupModel::So3, 1.1).unwrap().with_axis(vec![0.2, 0.9, -0.4]).unwrap();
        let t: Arc<dyn Transport> = Arc::new(group_transport_left(2, f).unwrap());
        let path = line();
        let grid = Interval::UNIT.grid(9);
        let plan = SamplePlan::default();
        let f0 = factorize(Arc::clone(&t), &path, 0.0).unwrap();
        for &s1 in &grid[1..] {
            let f1 = factorize(Arc::clone(&t), &path, s1).unwrap();
            let (d, ind) = gauge_map(&f0, &f1, &grid, &plan).unwrap();
            assert!(ind.max_residual < 1e-10);
            assert!(verify_gauge(&d, &f0, &f1, &grid, &plan).pass);
        }
    }

    #[test]
    fn memoized_queries_are_consistent_across_threads() {
        let f = PathFunctional::parametric(GroupModel::So2, 1.0).unwrap();
        let t: Arc<dyn Transport> = Arc::new(group_transport_left(2, f).unwrap());
        let fac = Arc::new(factorize(t, &line(), 0.5).unwrap());
        let tables: Vec<_> = std::thread::scope(|scope| {
            (0..4)
                .map(|_| {
                    let fac = Arc::clone(&fac);
                    scope.spawn(move || fac.map_at(0.25).unwrap().matrix().unwrap())
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().unwrap())
                .collect()
        });
        assert!(tables.windows(2).all(|w| w[0] == w[1]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_families_reconstruct_to_lawful_transports(size in 2usize..=5, n in 3usize..=7, seed in any::<u64>()) {
            let bundle = BundleModel::finite(2, size).unwrap();
            let path = line();
            let grid = Interval::UNIT.grid(n);
            let fac = Arc::new(random_bijection_family(&bundle, &path, &grid, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
            prop_assert!(fac.check_bijection(&grid, &SamplePlan::default()).pass);
            let t = reconstruct(fac);
            let plan = SamplePlan::default();
            let g = check_groupoid(&t, &path, &grid, &plan);
            prop_assert!(g.pass && g.max_residual == 0.0);
            prop_assert_eq!(g.samples, n * n * n * size + n * size);
            prop_assert!(check_inverse(&t, &path, &grid, &plan).max_residual == 0.0);
        }
    }
}
