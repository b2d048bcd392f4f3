use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fibre_transport::bundle::{BundleModel, FoliationModel, Payload, Section, SurfaceModel};
use fibre_transport::connection::{transport_from_connection, ConnectionForm, ConnectionModel};
use fibre_transport::constructions::{foliation_transport, group_transport_left, group_transport_right, PathFunctional};
use fibre_transport::group::GroupModel;
use fibre_transport::parallel::{to_parallel, to_transport};
use fibre_transport::path::{Formula, Interval, Path};
use fibre_transport::transport::{
    check_groupoid, is_parallel_transport_along_paths, AdversarialTransport, CheckSuite, LawId, SamplePlan, SuiteReport, Transport,
};

fn so3_field() -> PathFunctional {
    PathFunctional::field(GroupModel::So3, vec![vec![1.0, -0.3], vec![0.2, 1.0], vec![0.5, 0.5]]).unwrap()
}

fn wavy(a: f64, b: f64) -> Path {
    Path::analytic(
        Formula::Harmonic { offset: vec![a, b], amplitude: vec![1.0, 0.5], frequency: vec![2.0, 3.0], phase: vec![0.0, 1.0] },
        Interval::new(-1.0, 1.0).unwrap(),
    )
    .unwrap()
}

fn matrix_of<T: Transport>(t: &T, p: &Path, s: f64, u: f64) -> DMatrix<f64> {
    t.at(p, s, u).unwrap().matrix().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_transport_composes(a in -2.0..2.0f64, b in -2.0..2.0f64, r in -1.0..1.0f64, s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let p = wavy(a, b);
        for tr in [group_transport_left(2, so3_field()).unwrap(), group_transport_right(2, so3_field()).unwrap()] {
            let fiber = tr.bundle().fiber_at(&p.eval(r).unwrap()).unwrap();
            let g = GroupModel::So3.exp(&[0.3, -0.2, 0.9]).unwrap();
            let e = fiber.element(Payload::Group(g)).unwrap();
            let two = tr.at(&p, s, t).unwrap().apply(&tr.at(&p, r, s).unwrap().apply(&e).unwrap()).unwrap();
            let one = tr.at(&p, r, t).unwrap().apply(&e).unwrap();
            prop_assert!((two.total_coords() - one.total_coords()).norm() < 1e-12);
        }
    }

    #[test]
    fn foliation_transport_ignores_the_route(a in -2.0..2.0f64, b in -2.0..2.0f64, y in -3.0..3.0f64) {
        let t = foliation_transport(2, FoliationModel::from_section(1, Section::Sine { amplitude: 0.4, frequency: 2.0 }).unwrap()).unwrap();
        let straight = Path::line(&[0.0, 0.0], &[a, b], Interval::UNIT).unwrap();
        let curved = Path::polynomial(vec![vec![0.0, 0.0], vec![a - 1.0, b + 2.0], vec![1.0, -2.0]], Interval::UNIT).unwrap();
        let e = t.bundle().fiber_at(&straight.start()).unwrap().element(Payload::Vector(DVector::from_vec(vec![y]))).unwrap();
        let u = t.at(&straight, 0.0, 1.0).unwrap().apply(&e).unwrap();
        let v = t.at(&curved, 0.0, 1.0).unwrap().apply(&e).unwrap();
        prop_assert!((u.total_coords() - v.total_coords()).norm() < 1e-12);
    }

    #[test]
    fn bridge_case_split_is_coherent(s in -1.0..1.0f64, t in -1.0..1.0f64) {
        let p = wavy(0.0, 0.0);
        let bridged = to_transport(to_parallel(group_transport_left(2, so3_field()).unwrap()));
        let fwd = matrix_of(&bridged, &p, s, t);
        let bwd = matrix_of(&bridged, &p, t, s);
        prop_assert!((fwd * bwd - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn u1_transport_is_a_phase(x in -1.0..1.0f64, y in -1.0..1.0f64, t in 0.0..1.0f64) {
        let c = ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::SymmetricGauge { strength: 2.0, axis: None }).unwrap();
        let tr = transport_from_connection(c, 1e-3).unwrap();
        let p = Path::line(&[x, y], &[1.0, -0.5], Interval::UNIT).unwrap();
        let m = matrix_of(&tr, &p, 0.0, t);
        // straight segments from the origin sweep no area: phase = -(B/2)(x v_y - y v_x) t
        let angle = -(x * -0.5 - y) * t;
        let oracle = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        prop_assert!((m - oracle).norm() < 1e-10);
    }
}

#[test]
fn adversarial_kick_breaks_the_groupoid_law() {
    let inner = group_transport_left(2, so3_field()).unwrap();
    let t = AdversarialTransport::new(inner, 0.5);
    let p = wavy(0.0, 0.0);
    let report = check_groupoid(&t, &p, &p.domain().grid(5), &SamplePlan::default());
    assert!(!report.pass && !report.witnesses.is_empty());
}

#[test]
fn full_suite_on_the_sphere_and_its_report_serializes() {
    let t = transport_from_connection(ConnectionModel::christoffel(SurfaceModel::Sphere), 1e-3).unwrap();
    let p = Path::line(&[PI / 2.0, 0.0], &[-0.3, 1.0], Interval::UNIT).unwrap();
    let report = is_parallel_transport_along_paths(&t, &CheckSuite::new(vec![p]).with_grid(5));
    assert!(report.pass);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"groupoid-composition\""));
    let back: SuiteReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    assert!(back.get(LawId::Reparametrization).is_some());
}

#[test]
fn models_round_trip_through_json() {
    let bundles = [
        BundleModel::flat_vector(2, 3).unwrap(),
        BundleModel::sphere_tangent(),
        BundleModel::trivial_principal(2, GroupModel::So3).unwrap(),
        BundleModel::finite(1, 4).unwrap(),
        BundleModel::foliated(2, FoliationModel::from_section(2, Section::Sine { amplitude: 1.0, frequency: 0.5 }).unwrap()).unwrap(),
    ];
    for b in bundles {
        let back: BundleModel = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(back, b);
    }
    let connections = [
        ConnectionModel::christoffel(SurfaceModel::Sphere),
        ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::Uniform { weights: vec![1.0, 2.0], axis: None }).unwrap(),
    ];
    for c in connections {
        let back: ConnectionModel = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
    let p = wavy(1.0, 2.0);
    let back: Path = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert!(back.approx_eq(&p));
}
