//! Explicit transports: along the leaves of a foliation, and group-valued
//! transports `g ↦ f(γ,t)⁻¹ f(γ,s) g` (left) or `g ↦ g f(γ,s) f(γ,t)⁻¹` (right)
//! on a trivial principal bundle.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleModel, FiberKind, FoliationModel, Payload};
use crate::error::{Error, Result};
use crate::fiber_map::{Action, FiberMap};
use crate::group::{GroupElement, GroupModel};
use crate::path::Path;
use crate::transport::{endpoints, Backend, Transport};

/// Transport that keeps a point on its leaf.
#[derive(Clone, Debug)]
pub struct FoliationTransport {
    bundle: BundleModel,
    foliation: FoliationModel,
}

/// Transport along the leaves of `foliation` on `B × ℝᵏ` with `dim B = base_dim`.
pub fn foliation_transport(base_dim: usize, foliation: FoliationModel) -> Result<FoliationTransport> {
    let bundle = BundleModel::foliated(base_dim, foliation.clone())?;
    Ok(FoliationTransport { bundle, foliation })
}

impl FoliationTransport {
    pub fn foliation(&self) -> &FoliationModel {
        &self.foliation
    }
}

impl Transport for FoliationTransport {
    fn bundle(&self) -> &BundleModel {
        &self.bundle
    }

    fn backend(&self) -> Backend {
        Backend::Foliation
    }

    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let e = endpoints(&self.bundle, path, s, t)?;
        let (xs, xt) = (e.source.base().clone(), e.target.base().clone());
        let action = if self.foliation.section().is_some() {
            // leaves are translates of one section, so the map is a shift
            let zero = DVector::zeros(self.foliation.rank());
            Action::translation(self.foliation.leaf_point(&zero, &xt) - self.foliation.leaf_point(&zero, &xs))
        } else {
            let (fwd, bwd) = (self.foliation.clone(), self.foliation.clone());
            let (xs2, xt2) = (xs.clone(), xt.clone());
            Action::custom(
                move |p| slide(&fwd, &xs, &xt, p),
                move |p| slide(&bwd, &xt2, &xs2, p),
            )
        };
        FiberMap::new(e.source, e.target, action)
    }
}

/// The point over `to` on the leaf through `(from, p)`.
fn slide(fol: &FoliationModel, from: &DVector<f64>, to: &DVector<f64>, p: &Payload) -> Result<Payload> {
    let y = p.as_vector().ok_or_else(|| Error::Payload("foliated fibres carry vector payloads".into()))?;
    let alpha = fol.classify(from, y);
    if alpha.iter().any(|c| !c.is_finite()) {
        return Err(Error::Model(format!("point {:?} over {:?} lies on no leaf", y.as_slice(), from.as_slice())));
    }
    let out = fol.leaf_point(&alpha, to);
    if out.iter().any(|c| !c.is_finite()) {
        return Err(Error::Model(format!("leaf {:?} does not meet the fibre over {:?}", alpha.as_slice(), to.as_slice())));
    }
    Ok(Payload::Vector(out))
}

/// How a [`PathFunctional`] depends on the path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dependency {
    /// Depends only on the point `γ(s)`.
    Pointwise,
    /// Depends on the raw parameter `s`.
    Parametric,
    /// Depends on more of `γ` than its value at `s`.
    Global,
}

/// The combinators a [`PathFunctional`] is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `f ≡ exp(coords)`.
    Constant { coords: Vec<f64> },
    /// `f(γ, s) = exp(W γ(s))`, one row of `weights` per algebra coordinate.
    Field { weights: Vec<Vec<f64>> },
    /// `f(γ, s) = exp(rate · s · axis)`.
    Parametric { rate: f64 },
    /// `f(γ, s) = exp(rate · ℓ(s) · axis)`, `ℓ(s)` the arc length from the start of the domain.
    Arclength { rate: f64 },
    /// `f(γ, s) = exp(rate · s · |domain| · axis)`, sensitive to the whole domain.
    DomainScaled { rate: f64 },
}

/// A group-valued function `f(γ, s)` of a path and a parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFunctional {
    pub group: GroupModel,
    #[serde(flatten)]
    pub kind: FunctionalKind,
    /// Algebra direction for the scalar combinators; defaults to the last basis vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Vec<f64>>,
}

impl PathFunctional {
    pub fn new(group: GroupModel, kind: FunctionalKind) -> Result<Self> {
        let f = PathFunctional { group, kind, axis: None };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(group: GroupModel, coords: Vec<f64>) -> Result<Self> {
        Self::new(group, FunctionalKind::Constant { coords })
    }

    pub fn field(group: GroupModel, weights: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(group, FunctionalKind::Field { weights })
    }

    pub fn parametric(group: GroupModel, rate: f64) -> Result<Self> {
        Self::new(group, FunctionalKind::Parametric { rate })
    }

    pub fn arclength(group: GroupModel, rate: f64) -> Result<Self> {
        Self::new(group, FunctionalKind::Arclength { rate })
    }

    pub fn domain_scaled(group: GroupModel, rate: f64) -> Result<Self> {
        Self::new(group, FunctionalKind::DomainScaled { rate })
    }

    pub fn with_axis(mut self, axis: Vec<f64>) -> Result<Self> {
        self.axis = Some(axis);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.group.dim();
        if let Some(axis) = &self.axis {
            if axis.len() != dim {
                return Err(Error::Model(format!("axis needs {dim} algebra coordinates, got {}", axis.len())));
            }
        }
        match &self.kind {
            FunctionalKind::Constant { coords } if coords.len() != dim => {
                Err(Error::Model(format!("constant needs {dim} algebra coordinates, got {}", coords.len())))
            }
            FunctionalKind::Field { weights } if weights.len() != dim => {
                Err(Error::Model(format!("field needs {dim} weight rows, got {}", weights.len())))
            }
            _ => Ok(()),
        }
    }

    pub fn dependency(&self) -> Dependency {
        match self.kind {
            FunctionalKind::Constant { .. } | FunctionalKind::Field { .. } => Dependency::Pointwise,
            FunctionalKind::Parametric { .. } => Dependency::Parametric,
            FunctionalKind::Arclength { .. } | FunctionalKind::DomainScaled { .. } => Dependency::Global,
        }
    }

    fn axis(&self) -> Vec<f64> {
        self.axis.clone().unwrap_or_else(|| {
            let mut v = vec![0.0; self.group.dim()];
            if let Some(last) = v.last_mut() {
                *last = 1.0;
            }
            v
        })
    }

    fn along_axis(&self, amount: f64) -> Result<GroupElement> {
        let coords: Vec<f64> = self.axis().iter().map(|a| a * amount).collect();
        self.group.exp(&coords)
    }

    /// `f(γ, s)`.
    pub fn eval(&self, path: &Path, s: f64) -> Result<GroupElement> {
        let s = path.domain().snap(s)?;
        match &self.kind {
            FunctionalKind::Constant { coords } => self.group.exp(coords),
            FunctionalKind::Field { weights } => {
                let x = path.eval(s)?;
                let coords = weights
                    .iter()
                    .map(|row| {
                        if row.len() != x.len() {
                            Err(Error::Model(format!("field row has {} weights, path has {} coordinates", row.len(), x.len())))
                        } else {
                            Ok(row.iter().zip(x.iter()).map(|(w, c)| w * c).sum())
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                self.group.exp(&coords)
            }
            FunctionalKind::Parametric { rate } => self.along_axis(rate * s),
            FunctionalKind::Arclength { rate } => self.along_axis(rate * path.arc_length(path.domain().lo(), s)?),
            FunctionalKind::DomainScaled { rate } => self.along_axis(rate * s * path.domain().len()),
        }
    }
}

/// Which side the group factor multiplies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupSide {
    Left,
    Right,
}

/// Group-valued transport on the trivial bundle `B × G`.
#[derive(Clone, Debug)]
pub struct GroupTransport {
    bundle: BundleModel,
    functional: PathFunctional,
    side: GroupSide,
}

impl GroupTransport {
    pub fn new(base_dim: usize, functional: PathFunctional, side: GroupSide) -> Result<Self> {
        functional.validate()?;
        let bundle = BundleModel::trivial_principal(base_dim, functional.group)?;
        Ok(GroupTransport { bundle, functional, side })
    }

    pub fn functional(&self) -> &PathFunctional {
        &self.functional
    }

    pub fn side(&self) -> GroupSide {
        self.side
    }

    /// The group element the payload is multiplied by.
    pub fn factor(&self, path: &Path, s: f64, t: f64) -> Result<GroupElement> {
        let g = self.functional.group;
        let fs = self.functional.eval(path, s)?;
        let ft_inv = g.invert(&self.functional.eval(path, t)?)?;
        Ok(match self.side {
            GroupSide::Left => g.multiply(&ft_inv, &fs),
            GroupSide::Right => g.multiply(&fs, &ft_inv),
        })
    }
}

/// `(γ(s), g) ↦ (γ(t), f(γ,t)⁻¹ f(γ,s) g)`.
pub fn group_transport_left(base_dim: usize, functional: PathFunctional) -> Result<GroupTransport> {
    GroupTransport::new(base_dim, functional, GroupSide::Left)
}

/// `(γ(s), g) ↦ (γ(t), g f(γ,s) f(γ,t)⁻¹)`.
pub fn group_transport_right(base_dim: usize, functional: PathFunctional) -> Result<GroupTransport> {
    GroupTransport::new(base_dim, functional, GroupSide::Right)
}

impl Transport for GroupTransport {
    fn bundle(&self) -> &BundleModel {
        &self.bundle
    }

    fn backend(&self) -> Backend {
        match self.side {
            GroupSide::Left => Backend::GroupLeft,
            GroupSide::Right => Backend::GroupRight,
        }
    }

    fn at(&self, path: &Path, s: f64, t: f64) -> Result<FiberMap> {
        let e = endpoints(&self.bundle, path, s, t)?;
        let factor = self.factor(path, e.s, e.t)?;
        let action = match self.side {
            GroupSide::Left => Action::left_multiplication(factor),
            GroupSide::Right => Action::right_multiplication(factor),
        };
        FiberMap::new(e.source, e.target, action)
    }
}

/// Checks that a functional's values lie in its group along a grid of `path`.
pub fn functional_membership_residual(f: &PathFunctional, path: &Path, n: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for s in path.domain().grid(n) {
        worst = worst.max(f.group.constraint_residual(&f.eval(path, s)?));
    }
    Ok(worst)
}

/// Whether a bundle's fibre is a group, for callers assembling group transports.
pub fn group_of(bundle: &BundleModel) -> Option<GroupModel> {
    match bundle.fiber_kind() {
        FiberKind::Group { group } => Some(*group),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{DistancePolicy, Section};
    use crate::group::rotation2;
    use crate::path::{Formula, Interval, Orientation, Reparam, Shape};
    use crate::transport::{
        apply_transport, check_groupoid, check_inverse, check_reparam, check_restriction, is_parallel_transport_along_paths,
        CheckSuite, LawId, SamplePlan,
    };
    use std::f64::consts::PI;

    fn pt(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    fn unit_line() -> Path {
        Path::line(&[0.0, 0.0], &[1.0, 0.5], Interval::UNIT).unwrap()
    }

    fn wiggle() -> Path {
        Path::polynomial(vec![vec![0.1, -0.3], vec![1.0, 0.2], vec![-0.5, 0.7]], Interval::new(-0.5, 1.5).unwrap()).unwrap()
    }

    fn paths() -> Vec<Path> {
        vec![
            unit_line(),
            wiggle(),
            Path::analytic(Formula::Circle { center: [0.2, 0.0], radius: 0.8, rate: 2.0, phase: 0.3 }, Interval::new(0.0, 2.0).unwrap())
                .unwrap(),
        ]
    }

    #[test]
    fn foliation_keeps_leaf_label() {
        let fol = FoliationModel::from_section(1, Section::Linear { rows: vec![vec![1.0]] }).unwrap();
        let t = foliation_transport(1, fol).unwrap();
        let gamma = Path::line(&[0.0], &[1.0], Interval::UNIT).unwrap();
        let u = t.bundle().fiber_at(&pt(&[0.0])).unwrap().element(Payload::Vector(pt(&[2.0]))).unwrap();
        let v = apply_transport(&t, &gamma, 0.0, 1.0, &u).unwrap();
        assert_eq!(v.base(), &pt(&[1.0]));
        assert!((v.payload().as_vector().unwrap()[0] - 3.0).abs() < 1e-15);
        assert_eq!(apply_transport(&t, &gamma, 0.4, 0.4, &t.bundle().fiber_at(&pt(&[0.4])).unwrap().element(Payload::Vector(pt(&[1.0]))).unwrap()).unwrap().payload().as_vector().unwrap()[0], 1.0);
    }

    #[test]
    fn foliation_transport_depends_only_on_endpoints() {
        let fol = FoliationModel::from_section(2, Section::Sine { amplitude: 0.6, frequency: 1.7 }).unwrap();
        let t = foliation_transport(2, fol).unwrap();
        let a = Path::line(&[0.0, 0.0], &[1.0, 1.0], Interval::UNIT).unwrap();
        let b = Path::polynomial(vec![vec![0.0, 0.0], vec![3.0, -1.0], vec![-2.0, 2.0]], Interval::UNIT).unwrap();
        assert!((a.end() - b.end()).norm() < 1e-15);
        let (ma, mb) = (t.at(&a, 0.0, 1.0).unwrap(), t.at(&b, 0.0, 1.0).unwrap());
        let samples = SamplePlan::default().sample(ma.source(), 3);
        assert!(ma.max_deviation(&mb, &samples, DistancePolicy::default()) < 1e-15);
    }

    #[test]
    fn custom_foliation_transport_passes_suite() {
        let samples: Vec<_> = (0..5).map(|i| (pt(&[i as f64 * 0.3]), pt(&[1.0 - i as f64]))).collect();
        let fol = FoliationModel::custom(
            1,
            |a: &DVector<f64>, x: &DVector<f64>| a * x[0].exp() + x.clone(),
            |x: &DVector<f64>, y: &DVector<f64>| (y - x) * (-x[0]).exp(),
            &samples,
        )
        .unwrap();
        let t = foliation_transport(1, fol).unwrap();
        let p = Path::polynomial(vec![vec![0.0], vec![1.0], vec![-0.7]], Interval::UNIT).unwrap();
        let report = is_parallel_transport_along_paths(&t, &CheckSuite::new(vec![p]));
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn constant_functional_gives_identity_transport() {
        for side in [GroupSide::Left, GroupSide::Right] {
            let f = PathFunctional::constant(GroupModel::So3, vec![0.3, -0.2, 1.0]).unwrap();
            let t = GroupTransport::new(2, f, side).unwrap();
            let p = wiggle();
            let m = t.at(&p, -0.5, 1.2).unwrap();
            let samples = SamplePlan::default().sample(m.source(), 0);
            for u in &samples {
                let v = m.apply(u).unwrap();
                assert!((v.payload().as_group().unwrap() - u.payload().as_group().unwrap()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parametric_so2_left_quarter_turn() {
        let f = PathFunctional::parametric(GroupModel::So2, PI / 2.0).unwrap();
        let t = group_transport_left(2, f).unwrap();
        let p = unit_line();
        let u = t.bundle().fiber_at(&p.start()).unwrap().identity_element().unwrap();
        let v = apply_transport(&t, &p, 0.0, 1.0, &u).unwrap();
        assert!((v.payload().as_group().unwrap() - rotation2(-PI / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn group_variants_satisfy_groupoid_and_inverse_to_roundoff() {
        let funcs = [
            PathFunctional::parametric(GroupModel::So3, 1.3).unwrap().with_axis(vec![0.3, 0.5, -0.2]).unwrap(),
            PathFunctional::field(GroupModel::So3, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, -0.5]]).unwrap(),
            PathFunctional::arclength(GroupModel::So2, 0.7).unwrap(),
            PathFunctional::domain_scaled(GroupModel::Gl(2), 0.4).unwrap().with_axis(vec![0.1, 0.2, -0.3, 0.05]).unwrap(),
        ];
        let plan = SamplePlan::default();
        for f in funcs {
            for side in [GroupSide::Left, GroupSide::Right] {
                let t = GroupTransport::new(2, f.clone(), side).unwrap();
                for p in paths() {
                    let grid = p.domain().grid(7);
                    let g = check_groupoid(&t, &p, &grid, &plan);
                    let i = check_inverse(&t, &p, &grid, &plan);
                    assert!(g.max_residual < 1e-12, "{:?} {side:?} {}", f.kind, g.max_residual);
                    assert!(i.max_residual < 1e-12, "{:?} {side:?} {}", f.kind, i.max_residual);
                }
            }
        }
    }

    #[test]
    fn abelian_left_and_right_coincide() {
        let f = PathFunctional::field(GroupModel::U1, vec![vec![1.0, -2.0]]).unwrap();
        let (l, r) = (group_transport_left(2, f.clone()).unwrap(), group_transport_right(2, f).unwrap());
        let p = wiggle();
        for (s, t) in [(-0.5, 1.5), (0.3, -0.1), (1.0, 1.2)] {
            let (ml, mr) = (l.at(&p, s, t).unwrap(), r.at(&p, s, t).unwrap());
            let samples = SamplePlan::default().sample(ml.source(), 1);
            assert!(ml.max_deviation(&mr, &samples, DistancePolicy::default()) < 1e-12);
        }
    }

    #[test]
    fn non_abelian_left_and_right_differ() {
        let f = PathFunctional::field(GroupModel::So3, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let (l, r) = (group_transport_left(2, f.clone()).unwrap(), group_transport_right(2, f).unwrap());
        let p = wiggle();
        let (ml, mr) = (l.at(&p, -0.5, 1.5).unwrap(), r.at(&p, -0.5, 1.5).unwrap());
        let samples = SamplePlan::default().sample(ml.source(), 1);
        assert!(ml.max_deviation(&mr, &samples, DistancePolicy::default()) > 1e-3);
    }

    #[test]
    fn dependency_tags_decide_parallelism() {
        let pointwise = PathFunctional::field(GroupModel::So3, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3]]).unwrap();
        let t = group_transport_left(2, pointwise).unwrap();
        let report = is_parallel_transport_along_paths(&t, &CheckSuite::new(paths()));
        assert!(report.pass, "{report:?}");

        let param = group_transport_left(2, PathFunctional::parametric(GroupModel::So2, 1.0).unwrap()).unwrap();
        let report = is_parallel_transport_along_paths(&param, &CheckSuite::new(paths()));
        assert_eq!(report.failed(), vec![LawId::Reparametrization]);
    }

    #[test]
    fn parametric_fails_every_non_identity_reparam() {
        let t = group_transport_right(2, PathFunctional::parametric(GroupModel::So2, 0.9).unwrap()).unwrap();
        let p = unit_line();
        let plan = SamplePlan::default();
        let chi = Reparam::new(Interval::UNIT, Interval::UNIT, Shape::Power { exponent: 2.0 }, Orientation::Preserving).unwrap();
        let r = check_reparam(&t, &p, &chi, &Interval::UNIT.grid(11), &plan);
        assert!(!r.pass && !r.witnesses.is_empty());
        let id = check_reparam(&t, &p, &Reparam::identity(Interval::UNIT), &Interval::UNIT.grid(11), &plan);
        assert_eq!(id.max_residual, 0.0);
    }

    #[test]
    fn domain_scaled_functional_breaks_restriction() {
        let t = group_transport_left(2, PathFunctional::domain_scaled(GroupModel::So2, 1.0).unwrap()).unwrap();
        let p = wiggle();
        let sub = Interval::new(0.0, 1.0).unwrap();
        let r = check_restriction(&t, &p, sub, &sub.grid(5), &SamplePlan::default());
        assert!(!r.pass);
        let full = check_restriction(&t, &p, p.domain(), &p.domain().grid(5), &SamplePlan::default());
        assert_eq!(full.max_residual, 0.0);
    }

    #[test]
    fn arclength_passes_restriction_and_preserving_reparams_only() {
        let t = group_transport_left(2, PathFunctional::arclength(GroupModel::So2, 1.0).unwrap()).unwrap();
        let p = wiggle();
        let plan = SamplePlan::default();
        let sub = Interval::new(0.0, 1.0).unwrap();
        assert!(check_restriction(&t, &p, sub, &sub.grid(5), &plan).pass);
        let warp = Reparam::new(Interval::UNIT, p.domain(), Shape::Warp { amplitude: 0.4 }, Orientation::Preserving).unwrap();
        let r = check_reparam(&t, &p, &warp, &Interval::UNIT.grid(6), &plan);
        assert!(r.max_residual < 1e-9, "{}", r.max_residual);
        let rev = Reparam::reversing(p.domain(), p.domain()).unwrap();
        assert!(!check_reparam(&t, &p, &rev, &p.domain().grid(6), &plan).pass);
    }

    #[test]
    fn functional_values_stay_in_group() {
        let f = PathFunctional::field(GroupModel::So3, vec![vec![3.0, 0.0], vec![0.0, -2.0], vec![1.0, 1.0]]).unwrap();
        assert!(functional_membership_residual(&f, &wiggle(), 50).unwrap() < 1e-10);
        assert!(PathFunctional::constant(GroupModel::So3, vec![1.0]).is_err());
    }

    #[test]
    fn functional_serializes_with_tags() {
        let f = PathFunctional::parametric(GroupModel::So2, 0.5).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"functional\":\"parametric\""));
        let back: PathFunctional = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }
}
