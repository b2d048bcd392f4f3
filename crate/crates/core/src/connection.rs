//! Connections and the transports they generate, plus the reverse direction:
//! estimating the horizontal spaces of a transport from the tangents of its lifts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{BaseSpace, BundleModel, FiberElement, Payload, SurfaceModel};
use crate::error::{Error, Result};
use crate::fiber_map::{nan_max, Action, FiberMap};
use crate::group::GroupModel;
use crate::ode::{self, DEFAULT_STEP};
use crate::path::{Interval, Path, Point, Side};
use crate::transport::{endpoints, Backend, LawId, LawReport, Transport, Witness};

/// Default finite-difference step for lift tangents.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// A Lie-algebra-valued 1-form `A` on a Euclidean base, `A(x)(v) ∈ 𝔤`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum ConnectionForm {
    /// `A(x)(v) = (w · v) X`.
    Uniform {
        weights: Vec<f64>,
        #[serde(default)]
        axis: Option<Vec<f64>>,
    },
    /// `A(x)(v) = (strength / 2)(x₀ v₁ - x₁ v₀) X` on a 2-dimensional base.
    SymmetricGauge {
        strength: f64,
        #[serde(default)]
        axis: Option<Vec<f64>>,
    },
    /// `A(x)(v) = Σ_i v_i Σ_a (constant[i][a] + Σ_j linear[i][a][j] x_j) E_a`.
    Affine { constant: Vec<Vec<f64>>, linear: Vec<Vec<Vec<f64>>> },
}

/// A connection, given by its lift equation `Ṁ = -K(γ, γ̇) M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "connection", rename_all = "kebab-case")]
pub enum ConnectionModel {
    /// Levi-Civita connection of a surface: `v̇^i = -Γ^i_{jk} γ̇^j v^k`.
    Christoffel { surface: SurfaceModel },
    /// Connection form on the trivial principal bundle: `ġ = -A(γ)(γ̇) g`.
    Principal { group: GroupModel, base_dim: usize, #[serde(flatten)] form: ConnectionForm },
}

impl ConnectionModel {
    pub fn christoffel(surface: SurfaceModel) -> Self {
        ConnectionModel::Christoffel { surface }
    }

    pub fn principal(group: GroupModel, base_dim: usize, form: ConnectionForm) -> Result<Self> {
        let c = ConnectionModel::Principal { group, base_dim, form };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ConnectionModel::Principal { group, base_dim, form } = self else {
            return Ok(());
        };
        let (n, g) = (*base_dim, group.dim());
        let bad = |m: String| Err(Error::Model(m));
        if n == 0 {
            return bad("base dimension must be positive".into());
        }
        let check_axis = |axis: &Option<Vec<f64>>| match axis {
            Some(a) if a.len() != g => bad(format!("axis needs {g} algebra coordinates, got {}", a.len())),
            _ => Ok(()),
        };
        match form {
            ConnectionForm::Uniform { weights, axis } => {
                if weights.len() != n {
                    return bad(format!("uniform form needs {n} weights, got {}", weights.len()));
                }
                check_axis(axis)
            }
            ConnectionForm::SymmetricGauge { axis, .. } => {
                if n != 2 {
                    return bad("symmetric-gauge form needs a 2-dimensional base".into());
                }
                check_axis(axis)
            }
            ConnectionForm::Affine { constant, linear } => {
                let shape_ok = constant.len() == n
                    && constant.iter().all(|r| r.len() == g)
                    && linear.len() == n
                    && linear.iter().all(|r| r.len() == g && r.iter().all(|c| c.len() == n));
                if shape_ok {
                    Ok(())
                } else {
                    bad(format!("affine form needs constant[{n}][{g}] and linear[{n}][{g}][{n}]"))
                }
            }
        }
    }

    pub fn bundle(&self) -> BundleModel {
        match self {
            ConnectionModel::Christoffel { surface: SurfaceModel::Sphere } => BundleModel::sphere_tangent(),
            ConnectionModel::Christoffel { surface: SurfaceModel::Flat { dim } } => {
                BundleModel::flat_vector(*dim, *dim).expect("flat dimension validated by the surface")
            }
            ConnectionModel::Principal { group, base_dim, .. } => {
                BundleModel::trivial_principal(*base_dim, *group).expect("principal connection validated")
            }
        }
    }

    pub fn base(&self) -> BaseSpace {
        match self {
            ConnectionModel::Christoffel { surface } => surface.base(),
            ConnectionModel::Principal { base_dim, .. } => BaseSpace::Euclidean { dim: *base_dim },
        }
    }

    /// Size of the propagator matrices.
    pub fn fiber_size(&self) -> usize {
        match self {
            ConnectionModel::Christoffel { surface } => surface.base().dim(),
            ConnectionModel::Principal { group, .. } => group.matrix_size(),
        }
    }

    fn axis_element(group: &GroupModel, axis: &Option<Vec<f64>>, scale: f64) -> Result<DMatrix<f64>> {
        let coords: Vec<f64> = match axis {
            Some(a) => a.iter().map(|c| c * scale).collect(),
            None => {
                let mut v = vec![0.0; group.dim()];
                if let Some(last) = v.last_mut() {
                    *last = scale;
                }
                v
            }
        };
        group.algebra_element(&coords)
    }

    /// `K(x, v)`, linear in the tangent vector `v`.
    pub fn generator(&self, x: &Point, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.base().check(x)?;
        if v.len() != x.len() {
            return Err(Error::Domain(format!("tangent has {} components, chart has {}", v.len(), x.len())));
        }
        match self {
            ConnectionModel::Christoffel { surface } => Ok(surface.christoffel(x)?.contract(v)),
            ConnectionModel::Principal { group, form, .. } => match form {
                ConnectionForm::Uniform { weights, axis } => {
                    let w: f64 = weights.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    Self::axis_element(group, axis, w)
                }
                ConnectionForm::SymmetricGauge { strength, axis } => {
                    Self::axis_element(group, axis, 0.5 * strength * (x[0] * v[1] - x[1] * v[0]))
                }
                ConnectionForm::Affine { constant, linear } => {
                    let coords: Vec<f64> = (0..group.dim())
                        .map(|a| {
                            (0..x.len())
                                .map(|i| {
                                    let lin: f64 = (0..x.len()).map(|j| linear[i][a][j] * x[j]).sum();
                                    v[i] * (constant[i][a] + lin)
                                })
                                .sum()
                        })
                        .collect();
                    group.algebra_element(&coords)
                }
            },
        }
    }

    fn project(&self, m: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ConnectionModel::Principal { group, .. } => group.maybe_renormalize(m),
            ConnectionModel::Christoffel { .. } => m,
        }
    }

    /// Largest `|K(x, a v + b w) - a K(x, v) - b K(x, w)|` over random samples.
    pub fn linearity_residual<R: Rng + ?Sized>(&self, xs: &[Point], rng: &mut R) -> Result<f64> {
        let mut worst = 0.0_f64;
        for x in xs {
            let n = x.len();
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = self.generator(x, &(&v * a + &w * b))?;
            let rhs = self.generator(x, &v)? * a + self.generator(x, &w)? * b;
            worst = worst.max((lhs - rhs).norm());
        }
        Ok(worst)
    }

    /// Payload velocity of a horizontal curve through `p` with base velocity `v`.
    fn payload_velocity(&self, p: &FiberElement, v: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.generator(p.base(), v)?;
        match p.payload() {
            Payload::Vector(y) => Ok(-(k * y)),
            Payload::Group(g) => Ok(DVector::from_column_slice((-(k * g)).as_slice())),
            Payload::Label(_) => Err(Error::Payload("connections act on vector or group payloads".into())),
        }
    }

    /// Total-space tangent `(v, payload velocity)` of the horizontal lift.
    pub fn horizontal_vector(&self, p: &FiberElement, v: &DVector<f64>) -> Result<DVector<f64>> {
        let pv = self.payload_velocity(p, v)?;
        let n = v.len();
        let mut out = DVector::zeros(n + pv.len());
        out.rows_mut(0, n).copy_from(v);
        out.rows_mut(n, pv.len()).copy_from(&pv);
        Ok(out)
    }

    /// Basis of the horizontal space at `p` read off from the lift equation.
    pub fn horizontal_basis(&self, p: &FiberElement) -> Result<Vec<DVector<f64>>> {
        let n = p.base().len();
        (0..n)
            .map(|i| self.horizontal_vector(p, &DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 })))
            .collect()
    }
}

/// Transport generated by a connection, integrated with fixed-step RK4.
#[derive(Clone, Debug)]
pub struct ConnectionTransport {
    model: ConnectionModel,
    bundle: BundleModel,
    step: f64,
}

/// The transport of horizontal lifts of `model`, with absolute RK4 step `step`.
pub fn transport_from_connection(model: ConnectionModel, step: f64) -> Result<ConnectionTransport> {
    model.validate()?;
    ode::step_count(0.0, 1.0, step)?;
    let bundle = model.bundle();
    Ok(ConnectionTransport { model, bundle, step })
}

impl ConnectionTransport {
    pub fn model(&self) -> &ConnectionModel {
        &self.model
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn with_step(&self, step: f64) -> Result<Self> {
        transport_from_connection(self.model.clone(), step)
    }

    fn generator_at(&self, path: &Path, tau: f64, side: Side) -> Result<DMatrix<f64>> {
        let x = path.eval(tau)?;
        let v = path.velocity_side(tau, side)?;
        self.model.generator(&x, &v).map_err(|e| match e {
            Error::SingularChart(_) | Error::Domain(_) => Error::PathExitsChart { parameter: tau },
            e => e,
        })
    }

    /// Propagator `M` with `payload(t) = M payload(s)` (vector) or `M g(s)` (group).
    pub fn propagator(&self, path: &Path, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let s = path.domain().snap(s)?;
        let t = path.domain().snap(t)?;
        let (lo, hi) = (s.min(t), s.max(t));
        let mut cuts: Vec<f64> = path.breakpoints().into_iter().filter(|b| *b > lo && *b < hi).collect();
        if t < s {
            cuts.reverse();
        }
        let mut points = Vec::with_capacity(cuts.len() + 2);
        points.push(s);
        points.extend(cuts);
        points.push(t);
        let n = self.model.fiber_size();
        let mut m = DMatrix::identity(n, n);
        for w in points.windows(2) {
            let seg = ode::propagate(
                w[0],
                w[1],
                self.step,
                n,
                |tau, side| self.generator_at(path, tau, side),
                |m| self.model.project(m),
            )?;
            m = self.model.project(seg * m);
        }
        Ok(m)
    }

    fn action(&self, m: DMatrix<f64>) -> Action {
        match self.model {
            ConnectionModel::Christoffel { .. } => Action::linear(m),
            ConnectionModel::Principal { .. } => Action::left_multiplication(m),
        }
    }
}

impl Transport for ConnectionTransport {
    fn bundle(&self) -> &BundleModel {
        &self.bundle
    }

    fn backend(&self) -> Backend {
        Backend::Connection
    }

    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let e = endpoints(&self.bundle, path, s, t)?;
        let m = self.propagator(path, e.s, e.t)?;
        FiberMap::new(e.source, e.target, self.action(m))
    }
}

/// Self-map of the fibre over the base point obtained by going once around `loop_path`.
pub fn holonomy(transport: &ConnectionTransport, loop_path: &Path) -> Result<FiberMap> {
    let gap = transport.model.base().point_distance(&loop_path.start(), &loop_path.end());
    if !(gap <= crate::path::ENDPOINT_TOL) {
        return Err(Error::Domain(format!("holonomy needs a closed path; endpoints are {gap:.3e} apart")));
    }
    let d = loop_path.domain();
    let m = transport.at(loop_path, d.lo(), d.hi())?;
    // the target fibre is the source fibre up to roundoff in the loop's endpoint
    FiberMap::new(m.source().clone(), m.source().clone(), m.action().clone())
}

/// Samples of a lift `t ↦ lift(t)` of a base path, with tangents in total-space coordinates.
#[derive(Clone, Debug)]
pub struct LiftedPath {
    pub base: Path,
    pub s0: f64,
    pub initial: FiberElement,
    pub samples: Vec<(f64, FiberElement)>,
    pub tangents: Vec<(f64, DVector<f64>)>,
}

impl LiftedPath {
    /// `max |π(lift(t)) - γ(t)|`.
    pub fn projection_residual(&self) -> f64 {
        self.samples
            .iter()
            .map(|(t, e)| match self.base.eval(*t) {
                Ok(x) if x.len() == e.base().len() => (x - e.base()).norm(),
                _ => f64::INFINITY,
            })
            .fold(0.0, nan_max)
    }

    pub fn check_projection(&self, tol: f64) -> LawReport {
        let mut r = LawReport::new(LawId::LiftProjection, tol);
        for (t, e) in &self.samples {
            let res = match self.base.eval(*t) {
                Ok(x) if x.len() == e.base().len() => (x - e.base()).norm(),
                _ => f64::INFINITY,
            };
            r.record(res, || Witness::new(&self.base, 0.0).at(self.s0, *t));
        }
        r
    }

    /// CSV rows `t, x_0.., f_0..` with fibre payload coordinates.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some((_, first)) = self.samples.first() {
            let nx = first.base().len();
            let nf = first.payload().coords().len();
            let mut header = vec!["t".to_string()];
            header.extend((0..nx).map(|i| format!("x{i}")));
            header.extend((0..nf).map(|i| format!("f{i}")));
            out.push_str(&header.join(","));
            out.push('\n');
        }
        for (t, e) in &self.samples {
            let mut row = vec![format!("{t}")];
            row.extend(e.base().iter().map(|c| format!("{c}")));
            row.extend(e.payload().coords().iter().map(|c| format!("{c}")));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn apply_propagator(m: &DMatrix<f64>, p: &Payload, model: &ConnectionModel) -> Result<Payload> {
    match (p, model) {
        (Payload::Vector(y), _) => Ok(Payload::Vector(m * y)),
        (Payload::Group(g), ConnectionModel::Principal { group, .. }) => Ok(Payload::Group(group.maybe_renormalize(m * g))),
        _ => Err(Error::Payload("payload does not fit the connection".into())),
    }
}

/// Horizontal lift of `path` through `p ∈ π⁻¹(γ(s0))`, sampled on `grid`,
/// integrated outward from `s0` in both directions.
pub fn horizontal_lift(
    transport: &ConnectionTransport,
    path: &Path,
    s0: f64,
    p: &FiberElement,
    grid: &[f64],
) -> Result<LiftedPath> {
    let s0 = path.domain().snap(s0)?;
    let bundle = transport.bundle();
    bundle.fiber_at(&path.eval(s0)?)?.check(p)?;
    let mut ts: Vec<f64> = grid.iter().map(|&t| path.domain().snap(t)).collect::<Result<_>>()?;
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let model = transport.model();
    let mut samples: Vec<(f64, FiberElement)> = Vec::with_capacity(ts.len());
    let walk = |targets: Vec<f64>| -> Result<Vec<(f64, FiberElement)>> {
        let mut out = Vec::with_capacity(targets.len());
        let (mut at, mut payload) = (s0, p.payload().clone());
        for t in targets {
            let m = transport.propagator(path, at, t)?;
            payload = apply_propagator(&m, &payload, model)?;
            at = t;
            out.push((t, bundle.fiber_at(&path.eval(t)?)?.element(payload.clone())?));
        }
        Ok(out)
    };
    let mut backward = walk(ts.iter().copied().filter(|&t| t < s0).rev().collect())?;
    backward.reverse();
    samples.extend(backward);
    if ts.contains(&s0) {
        samples.push((s0, p.clone()));
    }
    samples.extend(walk(ts.iter().copied().filter(|&t| t > s0).collect())?);
    let tangents = samples
        .iter()
        .map(|(t, e)| {
            let v = path.velocity(*t)?;
            Ok((*t, model.horizontal_vector(e, &v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LiftedPath { base: path.clone(), s0, initial: p.clone(), samples, tangents })
}

/// Finite-difference derivative of `f` at `t` inside `domain`: central when
/// there is room, otherwise a second-order one-sided stencil.
fn derivative<F>(domain: Interval, t: f64, h: f64, f: F) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    if domain.contains(t - h) && domain.contains(t + h) {
        Ok((f(t + h)? - f(t - h)?) / (2.0 * h))
    } else if domain.contains(t + 2.0 * h) {
        Ok((f(t)? * -3.0 + f(t + h)? * 4.0 - f(t + 2.0 * h)?) / (2.0 * h))
    } else if domain.contains(t - 2.0 * h) {
        Ok((f(t)? * 3.0 - f(t - h)? * 4.0 + f(t - 2.0 * h)?) / (2.0 * h))
    } else {
        Err(Error::Degenerate(format!("domain {domain} too short for a difference step {h}")))
    }
}

/// The lift `t ↦ I_{s0→t}(p)` of any transport, with central-difference tangents.
pub fn lift_via_transport<T: Transport + ?Sized>(
    transport: &T,
    path: &Path,
    s0: f64,
    p: &FiberElement,
    grid: &[f64],
    fd_step: f64,
) -> Result<LiftedPath> {
    let s0 = path.domain().snap(s0)?;
    let point = |t: f64| -> Result<FiberElement> { transport.at(path, s0, t)?.apply(p) };
    let mut samples = Vec::with_capacity(grid.len());
    let mut tangents = Vec::with_capacity(grid.len());
    for &t in grid {
        let t = path.domain().snap(t)?;
        let e = point(t)?;
        let tangent = if path.domain().is_degenerate() {
            DVector::zeros(e.total_coords().len())
        } else {
            derivative(path.domain(), t, fd_step, |u| Ok(point(u)?.total_coords()))?
        };
        samples.push((t, e));
        tangents.push((t, tangent));
    }
    Ok(LiftedPath { base: path.clone(), s0, initial: p.clone(), samples, tangents })
}

/// A path through a base point, anchored at the parameter where it passes it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Probe {
    pub path: Path,
    pub anchor: f64,
}

impl Probe {
    /// `t ↦ x + t d` on `[-w, w]`, anchored at 0.
    pub fn line(x: &Point, d: &DVector<f64>, half_width: f64) -> Result<Self> {
        let path = Path::line(x.as_slice(), d.as_slice(), Interval::new(-half_width, half_width)?)?;
        Ok(Probe { path, anchor: 0.0 })
    }

    /// `t ↦ x + t d` on `[0, w]`, anchored at its start.
    pub fn ray(x: &Point, d: &DVector<f64>, width: f64) -> Result<Self> {
        let path = Path::line(x.as_slice(), d.as_slice(), Interval::new(0.0, width)?)?;
        Ok(Probe { path, anchor: 0.0 })
    }

    /// `t ↦ x + t d + t² c`: same point and velocity as the line, different curvature.
    pub fn parabola(x: &Point, d: &DVector<f64>, c: &DVector<f64>, domain: Interval) -> Result<Self> {
        let coeffs = vec![x.as_slice().to_vec(), d.as_slice().to_vec(), c.as_slice().to_vec()];
        Ok(Probe { path: Path::polynomial(coeffs, domain)?, anchor: 0.0 })
    }

    pub fn point(&self) -> Result<Point> {
        self.path.eval(self.anchor)
    }

    pub fn velocity(&self) -> Result<DVector<f64>> {
        let side = if self.anchor >= self.path.domain().hi() { Side::Left } else { Side::Right };
        self.path.velocity_side(self.anchor, side)
    }

    fn starts_at_anchor(&self) -> bool {
        self.anchor <= self.path.domain().lo()
    }
}

/// `2·dim` coordinate-direction lines through `x` plus `dim` random directions.
pub fn default_probes<R: Rng + ?Sized>(x: &Point, rng: &mut R, half_width: f64) -> Result<Vec<Probe>> {
    let n = x.len();
    let mut probes = Vec::with_capacity(3 * n);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let d = DVector::from_fn(n, |r, _| if r == i { sign } else { 0.0 });
            probes.push(Probe::line(x, &d, half_width)?);
        }
    }
    for _ in 0..n {
        let mut d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if d.norm() < 1e-3 {
            d[0] = 1.0;
        }
        let d = d.normalize();
        probes.push(Probe::line(x, &d, half_width)?);
    }
    Ok(probes)
}

/// Tangent at the anchor of the lift of `probe` through `p`.
pub fn lift_tangent<T: Transport + ?Sized>(transport: &T, probe: &Probe, p: &FiberElement, fd_step: f64) -> Result<DVector<f64>> {
    let path = &probe.path;
    let s0 = path.domain().snap(probe.anchor)?;
    let start = transport.bundle().fiber_at(&path.eval(s0)?)?;
    start.check(p)?;
    derivative(path.domain(), s0, fd_step, |t| Ok(transport.at(path, s0, t)?.apply(p)?.total_coords()))
}

/// An estimated subspace of `T_p(E)`, in total-space chart coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubspaceEstimate {
    #[serde(with = "vec_serde")]
    pub point: DVector<f64>,
    #[serde(with = "vecs_serde")]
    pub spanning: Vec<DVector<f64>>,
    pub dim: usize,
    /// Singular values of the normalized probe tangents, largest first.
    pub singular_values: Vec<f64>,
}

impl SubspaceEstimate {
    /// Smallest singular value of the normalized spanning set.
    pub fn independence(&self) -> f64 {
        if self.spanning.is_empty() {
            return 0.0;
        }
        let cols: Vec<DVector<f64>> = self.spanning.iter().map(|v| v.normalize()).collect();
        DMatrix::from_columns(&cols).singular_values().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

mod vec_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

mod vecs_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| c.as_slice().to_vec()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

/// Orthonormal basis of the span of `vectors`, dropping directions below `rel_tol`.
pub fn orthonormal_basis(vectors: &[DVector<f64>], rel_tol: f64) -> DMatrix<f64> {
    if vectors.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let m = DMatrix::from_columns(vectors);
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep: Vec<DVector<f64>> = order
        .into_iter()
        .filter(|&i| top > 0.0 && svd.singular_values[i] > rel_tol * top)
        .map(|i| u.column(i).into_owned())
        .collect();
    if keep.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&keep)
    }
}

/// The horizontal space at `p` spanned by lift tangents of `probes`, truncated
/// to the base dimension by SVD.
pub fn horizontal_space_from_transport<T: Transport + ?Sized>(
    transport: &T,
    p: &FiberElement,
    probes: &[Probe],
    fd_step: f64,
) -> Result<SubspaceEstimate> {
    let dim = transport.bundle().base_dim();
    let mut tangents = Vec::with_capacity(probes.len());
    for probe in probes {
        let v = lift_tangent(transport, probe, p, fd_step)?;
        let norm = v.norm();
        if norm > 0.0 {
            tangents.push(v / norm);
        }
    }
    if tangents.len() < dim {
        return Err(Error::Degenerate(format!("{} usable probe tangents, need {dim}", tangents.len())));
    }
    let m = DMatrix::from_columns(&tangents);
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if singular_values[dim - 1] <= 1e-8 * singular_values[0] {
        return Err(Error::Degenerate(format!(
            "probe tangents span fewer than {dim} directions (singular values {singular_values:?})"
        )));
    }
    let spanning = order[..dim].iter().map(|&i| u.column(i).into_owned()).collect();
    Ok(SubspaceEstimate { point: p.total_coords(), spanning, dim, singular_values })
}

/// Principal angles between the spans of `a` and `b`, largest first.
pub fn principal_angles(a: &[DVector<f64>], b: &[DVector<f64>]) -> Vec<f64> {
    let qa = orthonormal_basis(a, 1e-12);
    let qb = orthonormal_basis(b, 1e-12);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return vec![std::f64::consts::FRAC_PI_2];
    }
    // sines of the angles, accurate for small angles
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let mut angles: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(0.0, 1.0).asin()).collect();
    angles.sort_by(|x, y| y.total_cmp(x));
    if qa.ncols() != qb.ncols() {
        angles.insert(0, std::f64::consts::FRAC_PI_2);
    }
    angles
}

/// Largest principal angle between an estimate and a reference subspace.
pub fn check_horizontal_space(est: &SubspaceEstimate, reference: &[DVector<f64>], tol: f64) -> LawReport {
    let mut r = LawReport::new(LawId::HorizontalSpace, tol);
    let angle = principal_angles(&est.spanning, reference).first().copied().unwrap_or(f64::INFINITY);
    r.record(angle, || Witness {
        path: String::new(),
        r: None,
        s: None,
        t: None,
        residual: 0.0,
        detail: Some(format!("at total-space point {:?}", est.point.as_slice())),
    });
    r
}

/// Direct-sum check `vertical ⊕ estimate = T_p(E)`: the smallest singular value of
/// `[vertical orthonormal basis | estimate orthonormal basis]` must exceed `min_margin`.
/// The report's residual is `1 - margin`.
pub fn check_complementarity(est: &SubspaceEstimate, bundle: &BundleModel, p: &FiberElement, min_margin: f64) -> LawReport {
    let mut r = LawReport::new(LawId::Complementarity, 1.0 - min_margin);
    let witness = || Witness {
        path: String::new(),
        r: None,
        s: None,
        t: None,
        residual: 0.0,
        detail: Some(format!("at total-space point {:?}", est.point.as_slice())),
    };
    let vertical = match bundle.fiber_at(p.base()) {
        Ok(f) => f.vertical_basis(p),
        Err(e) => {
            r.record_error(&e, witness);
            return r;
        }
    };
    let v = orthonormal_basis(&vertical, 1e-12);
    let h = orthonormal_basis(&est.spanning, 1e-12);
    let expected = bundle.total_dim();
    if v.ncols() + h.ncols() != expected || v.nrows() != h.nrows() {
        r.margin = Some(0.0);
        r.record(1.0, || witness().detail(format!("{} vertical + {} horizontal directions, need {expected}", v.ncols(), h.ncols())));
        return r;
    }
    let mut cols: Vec<DVector<f64>> = v.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(h.column_iter().map(|c| c.into_owned()));
    let margin = DMatrix::from_columns(&cols).singular_values().iter().copied().fold(f64::INFINITY, f64::min);
    r.margin = Some(margin);
    r.record(1.0 - margin, witness);
    r
}

/// Lift tangents of two probes with equal point and velocity at their anchors must agree.
pub fn check_initial_uniqueness<T: Transport + ?Sized>(
    transport: &T,
    p: &FiberElement,
    first: &Probe,
    second: &Probe,
    fd_step: f64,
    tol: f64,
) -> LawReport {
    let mut r = LawReport::new(LawId::InitialUniqueness, tol);
    let w = || Witness::new(&first.path, 0.0).at(first.anchor, second.anchor);
    let result = (|| -> Result<f64> {
        let (x1, x2) = (first.point()?, second.point()?);
        let (v1, v2) = (first.velocity()?, second.velocity()?);
        if (x1 - x2).norm() > 1e-9 || (v1 - v2).norm() > 1e-9 {
            return Err(Error::Degenerate("probes differ in position or velocity at their anchors".into()));
        }
        let t1 = lift_tangent(transport, first, p, fd_step)?;
        let t2 = lift_tangent(transport, second, p, fd_step)?;
        Ok((t1 - t2).norm())
    })();
    match result {
        Ok(res) => r.record(res, w),
        Err(e) => r.record_error(&e, w),
    }
    r
}

/// Lift tangent of the line with velocity `a1 v1 + a2 v2` against
/// `a1 · tangent1 + a2 · tangent2`.
pub fn check_linearization<T: Transport + ?Sized>(
    transport: &T,
    p: &FiberElement,
    first: &Probe,
    second: &Probe,
    (a1, a2): (f64, f64),
    fd_step: f64,
    tol: f64,
) -> LawReport {
    let mut r = LawReport::new(LawId::Linearization, tol);
    let w = || Witness::new(&first.path, 0.0).detail(format!("coefficients ({a1}, {a2})"));
    let result = (|| -> Result<Option<f64>> {
        let x = first.point()?;
        if (&x - second.point()?).norm() > 1e-9 {
            return Err(Error::Degenerate("probes do not pass through the same point".into()));
        }
        let v3 = first.velocity()? * a1 + second.velocity()? * a2;
        if v3.norm() < 1e-12 {
            return Ok(None);
        }
        let width = first.path.domain().len();
        let third = if first.starts_at_anchor() {
            Probe::ray(&x, &v3, width)?
        } else {
            Probe::line(&x, &v3, 0.5 * width)?
        };
        let t1 = lift_tangent(transport, first, p, fd_step)?;
        let t2 = lift_tangent(transport, second, p, fd_step)?;
        let t3 = lift_tangent(transport, &third, p, fd_step)?;
        Ok(Some((t3 - (t1 * a1 + t2 * a2)).norm()))
    })();
    match result {
        Ok(Some(res)) => r.record(res, w),
        Ok(None) => r = r.with_note("skipped: combined velocity vanishes"),
        Err(e) => r.record_error(&e, w),
    }
    r
}

/// Bounded discrete second derivative of the lift samples, as a C¹ proxy.
pub fn check_lift_smoothness(lift: &LiftedPath, bound: f64) -> LawReport {
    let mut r = LawReport::new(LawId::Smoothness, bound);
    for win in lift.samples.windows(3) {
        let (t0, t1, t2) = (win[0].0, win[1].0, win[2].0);
        let (x0, x1, x2) = (win[0].1.total_coords(), win[1].1.total_coords(), win[2].1.total_coords());
        let (h1, h2) = (t1 - t0, t2 - t1);
        if h1 <= 0.0 || h2 <= 0.0 {
            continue;
        }
        let second = ((x2 - &x1) / h2 - (x1 - x0) / h1) * (2.0 / (h1 + h2));
        r.record(second.norm(), || Witness::new(&lift.base, 0.0).at(lift.s0, t1));
    }
    r
}

/// Drift of the metric norm of a Levi-Civita lift (metric compatibility diagnostic).
pub fn metric_norm_drift(surface: &SurfaceModel, lift: &LiftedPath) -> Result<f64> {
    let norm_of = |e: &FiberElement| -> Result<f64> {
        let v = e.payload().as_vector().ok_or_else(|| Error::Payload("metric norms need vector payloads".into()))?;
        surface.norm(e.base(), v)
    };
    let n0 = norm_of(&lift.initial)?;
    let mut worst = 0.0_f64;
    for (_, e) in &lift.samples {
        worst = worst.max((norm_of(e)? - n0).abs());
    }
    Ok(worst)
}

/// A latitude circle `θ = θ0`, `φ = 2π t` on `[0, 1]`.
pub fn latitude_loop(theta0: f64) -> Result<Path> {
    let coeffs = vec![vec![theta0, 0.0], vec![0.0, 2.0 * std::f64::consts::PI]];
    Path::polynomial(coeffs, Interval::UNIT)
}

/// Default transport step, re-exported for callers configuring connections.
pub const STEP: f64 = DEFAULT_STEP;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Formula;
    use crate::transport::{check_groupoid, check_inverse, check_reparam, check_restriction, SamplePlan};
    use crate::path::{Orientation, Reparam, Shape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn pt(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    fn sphere() -> ConnectionTransport {
        transport_from_connection(ConnectionModel::christoffel(SurfaceModel::Sphere), 1e-3).unwrap()
    }

    fn flat() -> ConnectionTransport {
        transport_from_connection(ConnectionModel::christoffel(SurfaceModel::Flat { dim: 2 }), 1e-3).unwrap()
    }

    fn vector_at(t: &ConnectionTransport, x: &Point, v: &[f64]) -> FiberElement {
        t.bundle().fiber_at(x).unwrap().element(Payload::Vector(pt(v))).unwrap()
    }

    #[test]
    fn flat_lift_is_constant() {
        let t = flat();
        let p = Path::analytic(Formula::Harmonic { offset: vec![0.0, 0.0], amplitude: vec![1.0, 0.5], frequency: vec![2.0, 3.0], phase: vec![0.0, 1.0] }, Interval::UNIT).unwrap();
        let u = vector_at(&t, &p.start(), &[1.0, -2.0]);
        let lift = horizontal_lift(&t, &p, 0.0, &u, &Interval::UNIT.grid(21)).unwrap();
        for (_, e) in &lift.samples {
            assert_eq!(e.payload().as_vector().unwrap(), &pt(&[1.0, -2.0]));
        }
        assert!(lift.projection_residual() < 1e-15);
    }

    #[test]
    fn equator_lift_keeps_components() {
        let t = sphere();
        let p = Path::line(&[PI / 2.0, 0.0], &[0.0, 1.0], Interval::UNIT).unwrap();
        let u = vector_at(&t, &p.start(), &[0.3, 0.7]);
        let m = t.at(&p, 0.0, 1.0).unwrap();
        let v = m.apply(&u).unwrap();
        assert!((v.payload().as_vector().unwrap() - pt(&[0.3, 0.7])).norm() < 1e-14);
    }

    #[test]
    fn latitude_holonomy_flips_vectors() {
        let t = sphere();
        let theta0 = PI / 3.0;
        let hol = holonomy(&t, &latitude_loop(theta0).unwrap()).unwrap();
        let x = pt(&[theta0, 0.0]);
        let e = SurfaceModel::Sphere.orthonormal_frame(&x).unwrap();
        let m = hol.matrix().unwrap();
        let in_frame = e.clone().try_inverse().unwrap() * m * e;
        assert!((in_frame + DMatrix::identity(2, 2)).norm() < 1e-6);
    }

    #[test]
    fn open_path_has_no_holonomy() {
        let p = Path::line(&[1.0, 0.0], &[0.0, 1.0], Interval::UNIT).unwrap();
        assert!(matches!(holonomy(&sphere(), &p), Err(Error::Domain(_))));
        let constant = Path::constant(&[1.0, 0.5], Interval::UNIT).unwrap();
        let id = holonomy(&sphere(), &constant).unwrap();
        assert!((id.matrix().unwrap() - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn u1_uniform_form_gives_phase() {
        let c = ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::Uniform { weights: vec![PI, 0.0], axis: None }).unwrap();
        let t = transport_from_connection(c, 1e-3).unwrap();
        let p = Path::line(&[0.0, 0.0], &[1.0, 0.0], Interval::UNIT).unwrap();
        let g0 = t.bundle().fiber_at(&p.start()).unwrap().identity_element().unwrap();
        let lift = horizontal_lift(&t, &p, 0.0, &g0, &[0.0, 0.5, 1.0]).unwrap();
        let g1 = lift.samples[2].1.payload().as_group().unwrap();
        assert!((g1 + DMatrix::identity(2, 2)).norm() < 1e-10);
        let half = lift.samples[1].1.payload().as_group().unwrap();
        assert!((half - crate::group::rotation2(-PI / 2.0)).norm() < 1e-10);
    }

    #[test]
    fn u1_area_law_around_unit_circle() {
        let c = ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::SymmetricGauge { strength: 1.0, axis: None }).unwrap();
        let t = transport_from_connection(c, 1e-3).unwrap();
        let circle = Path::analytic(Formula::Circle { center: [0.0, 0.0], radius: 1.0, rate: 2.0 * PI, phase: 0.0 }, Interval::UNIT).unwrap();
        let hol = holonomy(&t, &circle).unwrap();
        assert!((hol.matrix().unwrap() + DMatrix::identity(2, 2)).norm() < 1e-6);
    }

    #[test]
    fn path_through_pole_exits_chart() {
        let p = Path::line(&[0.5, 0.0], &[-1.0, 0.0], Interval::UNIT).unwrap();
        assert!(sphere().at(&p, 0.0, 0.4).is_ok());
        assert!(matches!(sphere().at(&p, 0.0, 1.0), Err(Error::Domain(_)) | Err(Error::SingularChart(_))));
        let q = Path::polynomial(vec![vec![0.2, 0.0], vec![-1.0, 1.0], vec![1.0, 0.0]], Interval::UNIT).unwrap();
        assert!(matches!(sphere().at(&q, 0.0, 1.0), Err(Error::PathExitsChart { .. })));
    }

    #[test]
    fn sphere_laws_hold_at_ode_tolerance() {
        let t = sphere();
        let p = Path::polynomial(vec![vec![1.0, 0.3], vec![0.4, 1.5], vec![-0.2, 0.5]], Interval::UNIT).unwrap();
        let grid = Interval::UNIT.grid(6);
        let plan = SamplePlan::default();
        assert!(check_groupoid(&t, &p, &grid, &plan).max_residual < 1e-6);
        assert!(check_inverse(&t, &p, &grid, &plan).max_residual < 1e-6);
        let sub = Interval::new(0.2, 0.7).unwrap();
        assert!(check_restriction(&t, &p, sub, &sub.grid(6), &plan).max_residual < 1e-9);
        let chi = Reparam::new(Interval::UNIT, Interval::UNIT, Shape::Power { exponent: 2.0 }, Orientation::Preserving).unwrap();
        assert!(check_reparam(&t, &p, &chi, &grid, &plan).max_residual < 1e-6);
    }

    #[test]
    fn levi_civita_preserves_metric_norm() {
        let t = sphere();
        let p = Path::polynomial(vec![vec![1.2, -0.4], vec![0.5, 2.0], vec![-0.3, 0.1]], Interval::UNIT).unwrap();
        let u = vector_at(&t, &p.start(), &[0.4, -1.3]);
        let lift = horizontal_lift(&t, &p, 0.0, &u, &Interval::UNIT.grid(51)).unwrap();
        assert!(metric_norm_drift(&SurfaceModel::Sphere, &lift).unwrap() < 1e-6);
    }

    #[test]
    fn lift_via_transport_matches_direct_lift() {
        let t = sphere();
        let p = Path::polynomial(vec![vec![1.0, 0.3], vec![0.0, 1.0]], Interval::new(-1.0, 1.0).unwrap()).unwrap();
        let u = vector_at(&t, &p.eval(0.25).unwrap(), &[1.0, 0.5]);
        let grid = p.domain().grid(17);
        let a = horizontal_lift(&t, &p, 0.25, &u, &grid).unwrap();
        let b = lift_via_transport(&t, &p, 0.25, &u, &grid, DEFAULT_FD_STEP).unwrap();
        for ((_, x), (_, y)) in a.samples.iter().zip(&b.samples) {
            assert!((x.total_coords() - y.total_coords()).norm() < 1e-9);
        }
        for ((_, x), (_, y)) in a.tangents.iter().zip(&b.tangents) {
            assert!((x - y).norm() < 1e-6);
        }
    }

    #[test]
    fn reconstructed_flat_space_is_base_directions() {
        let t = flat();
        let x = pt(&[0.3, -0.2]);
        let u = vector_at(&t, &x, &[1.0, 2.0]);
        let probes = default_probes(&x, &mut ChaCha8Rng::seed_from_u64(0), 0.1).unwrap();
        let est = horizontal_space_from_transport(&t, &u, &probes, DEFAULT_FD_STEP).unwrap();
        let reference = vec![pt(&[1.0, 0.0, 0.0, 0.0]), pt(&[0.0, 1.0, 0.0, 0.0])];
        assert!(principal_angles(&est.spanning, &reference)[0] < 1e-12);
        let c = check_complementarity(&est, t.bundle(), &u, 0.1);
        assert!(c.pass && (c.margin.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_injection_fails_complementarity() {
        let t = flat();
        let x = pt(&[0.0, 0.0]);
        let u = vector_at(&t, &x, &[1.0, 0.0]);
        let est = SubspaceEstimate {
            point: u.total_coords(),
            spanning: vec![pt(&[1.0, 0.0, 0.0, 0.0]), pt(&[0.0, 0.0, 1.0, 0.0])],
            dim: 2,
            singular_values: vec![1.0, 1.0],
        };
        assert!(!check_complementarity(&est, t.bundle(), &u, 0.1).pass);
    }

    #[test]
    fn sphere_reconstruction_matches_lift_equation() {
        let t = sphere();
        let x = pt(&[PI / 3.0, 0.4]);
        let u = vector_at(&t, &x, &[0.5, -0.8]);
        let probes = default_probes(&x, &mut ChaCha8Rng::seed_from_u64(1), 0.1).unwrap();
        let est = horizontal_space_from_transport(&t, &u, &probes, DEFAULT_FD_STEP).unwrap();
        let analytic = t.model().horizontal_basis(&u).unwrap();
        let r = check_horizontal_space(&est, &analytic, 1e-4);
        assert!(r.pass, "{}", r.max_residual);
        let c = check_complementarity(&est, t.bundle(), &u, 0.1);
        assert!(c.pass && c.margin.unwrap() > 0.1);
    }

    #[test]
    fn paired_probes_and_linear_combinations() {
        let t = sphere();
        let x = pt(&[1.1, -0.3]);
        let u = vector_at(&t, &x, &[1.0, 1.0]);
        let d = pt(&[0.6, 0.8]);
        let line = Probe::line(&x, &d, 0.1).unwrap();
        let parabola = Probe::parabola(&x, &d, &pt(&[1.0, -2.0]), Interval::new(-0.1, 0.1).unwrap()).unwrap();
        assert!(check_initial_uniqueness(&t, &u, &line, &parabola, DEFAULT_FD_STEP, 1e-5).pass);
        let e1 = Probe::line(&x, &pt(&[1.0, 0.0]), 0.1).unwrap();
        let e2 = Probe::line(&x, &pt(&[0.0, 1.0]), 0.1).unwrap();
        assert!(check_linearization(&t, &u, &e1, &e2, (1.0, 1.0), DEFAULT_FD_STEP, 1e-4).pass);
        let skipped = check_linearization(&t, &u, &e1, &e1, (1.0, -1.0), DEFAULT_FD_STEP, 1e-4);
        assert!(skipped.pass && skipped.samples == 0 && skipped.note.is_some());
        // with a2 = 0 the check reduces to comparing a line against the first probe
        let reduced = check_linearization(&t, &u, &parabola, &e2, (1.0, 0.0), DEFAULT_FD_STEP, 1e-4);
        let paired = check_initial_uniqueness(&t, &u, &parabola, &line, DEFAULT_FD_STEP, 1e-5);
        assert!((reduced.max_residual - paired.max_residual).abs() < 1e-9);
    }

    #[test]
    fn lift_of_smooth_path_has_bounded_second_differences() {
        let t = sphere();
        let p = Path::polynomial(vec![vec![1.0, 0.5], vec![0.0, 2.0]], Interval::UNIT).unwrap();
        let u = vector_at(&t, &p.start(), &[1.0, 0.0]);
        let lift = lift_via_transport(&t, &p, 0.0, &u, &Interval::UNIT.grid(101), DEFAULT_FD_STEP).unwrap();
        assert!(check_lift_smoothness(&lift, 1e3).pass);
        assert!(lift.check_projection(1e-9).pass);
        let csv = lift.to_csv();
        assert!(csv.starts_with("t,x0,x1,f0,f1\n"));
        assert_eq!(csv.lines().count(), 102);
    }

    #[test]
    fn forms_are_linear_in_the_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Point> = (0..20).map(|_| pt(&[rng.random_range(0.3..2.8), rng.random_range(-3.0..3.0)])).collect();
        let affine = ConnectionForm::Affine {
            constant: vec![vec![0.1, 0.2, 0.3], vec![-0.3, 0.0, 0.5]],
            linear: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]], vec![vec![0.0, -1.0], vec![1.0, 0.0], vec![0.2, 0.0]]],
        };
        for c in [
            ConnectionModel::christoffel(SurfaceModel::Sphere),
            ConnectionModel::principal(GroupModel::So3, 2, affine).unwrap(),
            ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::SymmetricGauge { strength: 2.0, axis: None }).unwrap(),
        ] {
            assert!(c.linearity_residual(&xs, &mut rng).unwrap() < 1e-10);
        }
        assert!(ConnectionModel::principal(GroupModel::U1, 3, ConnectionForm::SymmetricGauge { strength: 1.0, axis: None }).is_err());
    }
}
