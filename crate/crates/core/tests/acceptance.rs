//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fibre_transport::bundle::{BundleModel, FiberElement, FoliationModel, Payload, Section, SurfaceModel};
use fibre_transport::connection::{
    check_complementarity, check_horizontal_space, check_initial_uniqueness, check_linearization, default_probes, holonomy,
    horizontal_space_from_transport, latitude_loop, transport_from_connection, ConnectionForm, ConnectionModel,
    ConnectionTransport, Probe, DEFAULT_FD_STEP,
};
use fibre_transport::constructions::{foliation_transport, group_transport_left, group_transport_right, PathFunctional};
use fibre_transport::factorization::{
    factorize, gauge_map, random_bijection_family, random_permutation, permutation_gauge, reconstruct, reconstruct_residual,
    verify_gauge,
};
use fibre_transport::group::GroupModel;
use fibre_transport::parallel::{
    check_axioms, check_lift_conditions, round_trip_psi, round_trip_transport, to_parallel, to_transport, AxiomSuite,
    LiftConditions,
};
use fibre_transport::path::{Formula, Interval, Path};
use fibre_transport::transport::{
    check_groupoid, check_identity, check_inverse, check_reparam, check_restriction, is_parallel_transport_along_paths,
    CheckSuite, LawId, SamplePlan, Transport,
};
use fibre_transport::Result;

const EXACT: f64 = f64::MIN_POSITIVE;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed < limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id} {status} {name} ({:.2}s of {}s): {detail}",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn plane_paths() -> Vec<Path> {
    let unit = Interval::UNIT;
    vec![
        Path::line(&[0.0, 0.0], &[1.0, 0.5], unit).unwrap(),
        Path::polynomial(vec![vec![0.2, -0.1], vec![1.0, 0.3], vec![-0.5, 0.8], vec![0.1, 0.0]], Interval::new(-1.0, 2.0).unwrap()).unwrap(),
        Path::analytic(Formula::Circle { center: [0.5, 0.0], radius: 1.0, rate: 2.0 * PI, phase: 0.0 }, unit).unwrap(),
        Path::analytic(
            Formula::Harmonic { offset: vec![0.0, 1.0], amplitude: vec![1.0, 0.4], frequency: vec![3.0, 5.0], phase: vec![0.2, 0.0] },
            Interval::new(0.0, 2.0).unwrap(),
        )
        .unwrap(),
        Path::piecewise(
            vec![
                Path::line(&[0.0, 0.0], &[1.0, 0.0], Interval::new(0.0, 0.4).unwrap()).unwrap(),
                Path::line(&[0.6, -0.8], &[-0.5, 2.0], Interval::new(0.4, 1.0).unwrap()).unwrap(),
            ],
            vec![0.0, 0.4, 1.0],
        )
        .unwrap(),
    ]
}

fn sphere_paths() -> Vec<Path> {
    vec![
        Path::line(&[PI / 2.0, 0.0], &[0.0, PI / 2.0], Interval::UNIT).unwrap(),
        latitude_loop(PI / 3.0).unwrap(),
        Path::polynomial(vec![vec![1.0, 0.3], vec![0.4, 1.5], vec![-0.2, 0.5]], Interval::UNIT).unwrap(),
        Path::analytic(
            Formula::Harmonic { offset: vec![1.4, 0.0], amplitude: vec![0.5, 1.0], frequency: vec![2.0, 1.0], phase: vec![0.0, 0.0] },
            Interval::new(0.0, 3.0).unwrap(),
        )
        .unwrap(),
        Path::piecewise(
            vec![
                Path::line(&[1.0, 0.0], &[0.5, 0.0], Interval::new(0.0, 0.5).unwrap()).unwrap(),
                Path::line(&[1.25, -1.0], &[0.0, 2.0], Interval::new(0.5, 1.0).unwrap()).unwrap(),
            ],
            vec![0.0, 0.5, 1.0],
        )
        .unwrap(),
    ]
}

fn sine_foliation() -> FoliationModel {
    FoliationModel::from_section(2, Section::Sine { amplitude: 0.7, frequency: 1.3 }).unwrap()
}

fn so3_field() -> PathFunctional {
    PathFunctional::field(GroupModel::So3, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, -0.5]]).unwrap()
}

fn sphere() -> ConnectionTransport {
    transport_from_connection(ConnectionModel::christoffel(SurfaceModel::Sphere), 1e-3).unwrap()
}

fn u1_area() -> ConnectionTransport {
    let c = ConnectionModel::principal(GroupModel::U1, 2, ConnectionForm::SymmetricGauge { strength: 1.0, axis: None }).unwrap();
    transport_from_connection(c, 1e-3).unwrap()
}

fn suite_max(report: &fibre_transport::transport::SuiteReport) -> f64 {
    report.reports.iter().map(|r| r.max_residual).fold(0.0, f64::max)
}

fn groupoid_suite() -> Result<Outcome> {
    let algebraic = SamplePlan::default().with_tolerance(1e-12);
    let ode = SamplePlan::default().with_tolerance(1e-6);
    let mut lines = Vec::new();
    let mut pass = true;
    let mut note = |name: &str, report: fibre_transport::transport::SuiteReport| {
        pass &= report.pass;
        lines.push(format!("{name} {:.1e}", suite_max(&report)));
    };
    let plane = plane_paths();
    let suite = CheckSuite::new(plane.clone()).with_plan(algebraic);
    note("foliation", is_parallel_transport_along_paths(&foliation_transport(2, sine_foliation())?, &suite));
    note("group-left", is_parallel_transport_along_paths(&group_transport_left(2, so3_field())?, &suite));
    note("group-right", is_parallel_transport_along_paths(&group_transport_right(2, so3_field())?, &suite));
    // a factorized transport lives on its own path, so reparametrized paths are out of its domain
    let source: Arc<dyn Transport> = Arc::new(group_transport_left(2, so3_field())?);
    let own_laws = vec![LawId::GroupoidComposition, LawId::Identity, LawId::Inverse, LawId::Restriction];
    let mut factorized = Vec::new();
    for path in &plane {
        let fac = Arc::new(factorize(Arc::clone(&source), path, path.domain().lo())?);
        let t = reconstruct(fac);
        let own = t.factorization().path().clone();
        let suite = CheckSuite::new(vec![own]).with_plan(algebraic).with_laws(own_laws.clone());
        factorized.push(is_parallel_transport_along_paths(&t, &suite));
    }
    note("factorized", fibre_transport::transport::SuiteReport::from_reports(factorized.into_iter().flat_map(|r| r.reports)));
    let ode_suite = CheckSuite::new(sphere_paths()).with_plan(ode);
    note("connection-s2", is_parallel_transport_along_paths(&sphere(), &ode_suite));
    let u1_suite = CheckSuite::new(plane).with_plan(ode);
    note("connection-u1", is_parallel_transport_along_paths(&u1_area(), &u1_suite));
    Ok(outcome(pass, lines.join(", ")))
}

fn finite_oracle() -> Result<Outcome> {
    let path = Path::analytic(Formula::Circle { center: [0.0, 0.0], radius: 1.0, rate: 3.0, phase: 0.5 }, Interval::new(0.0, 2.0)?)?;
    let plan = SamplePlan::default().with_tolerance(EXACT);
    let (mut instances, mut failures, mut worst) = (0, 0, 0.0_f64);
    for size in 2..=5usize {
        let bundle = BundleModel::finite(2, size)?;
        for grid_size in [3usize, 5, 7] {
            let grid = path.domain().grid(grid_size);
            for seed in 0..9u64 {
                instances += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + (size * 10 + grid_size) as u64);
                let family = Arc::new(random_bijection_family(&bundle, &path, &grid, &mut rng)?);
                let t = reconstruct(Arc::clone(&family));
                let own = family.path().clone();
                let sub = Interval::new(grid[1], grid[grid_size - 1])?;
                let reports = [
                    check_groupoid(&t, &own, &grid, &plan),
                    check_identity(&t, &own, &grid, &plan),
                    check_inverse(&t, &own, &grid, &plan),
                    check_restriction(&t, &own, sub, &grid[1..], &plan),
                ];
                // transport -> family -> transport, then compare the family with the original up to its anchor gauge
                let again = Arc::new(factorize(Arc::new(t.clone()), &own, grid[0])?);
                let round = reconstruct_residual(&t, &again, &grid, &plan);
                let (d, independence) = gauge_map(&family, &again, &grid, &plan)?;
                let expected = family.map_at(grid[0])?.permutation_table();
                let gauge = verify_gauge(&d, &family, &again, &grid, &plan);
                let ok = reports.iter().all(|r| r.pass && r.samples > 0)
                    && round.pass
                    && independence.pass
                    && gauge.pass
                    && d.permutation_table() == expected;
                for r in reports.iter().chain([&round, &independence, &gauge]) {
                    worst = worst.max(r.max_residual);
                }
                if !ok {
                    failures += 1;
                }
            }
        }
    }
    Ok(outcome(
        failures == 0 && instances >= 100,
        format!("{instances} instances, {failures} failing, max residual {worst:e}"),
    ))
}

fn inverse_table(t: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; t.len()];
    for (i, &j) in t.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

fn gauge_freedom() -> Result<Outcome> {
    let path = Path::line(&[0.0, 0.0], &[1.0, 2.0], Interval::UNIT)?;
    let grid = path.domain().grid(6);
    let plan = SamplePlan::default().with_tolerance(EXACT);
    let (mut recovered, mut worst) = (0, 0.0_f64);
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = rng.random_range(2..=6usize);
        let bundle = BundleModel::finite(2, size)?;
        let fac1 = Arc::new(random_bijection_family(&bundle, &path, &grid, &mut rng)?);
        let sigma = random_permutation(&mut rng, size);
        let fac2 = fac1.post_compose(&permutation_gauge(&fac1.model().fiber, sigma.clone())?)?;
        let (d, independence) = gauge_map(&fac1, &fac2, &grid, &plan)?;
        let check = verify_gauge(&d, &fac1, &fac2, &grid, &plan);
        worst = worst.max(check.max_residual);
        if d.permutation_table() == Some(inverse_table(&sigma)) && check.pass && check.max_residual == 0.0 && independence.pass {
            recovered += 1;
        }
    }
    Ok(outcome(recovered == 50, format!("{recovered}/50 gauges recovered, verify residual {worst:e}")))
}

fn bijection() -> Result<Outcome> {
    let plan_ode = SamplePlan::default().with_tolerance(1e-6);
    let plan_alg = SamplePlan::default().with_tolerance(1e-12);
    let exact = SamplePlan::default().with_tolerance(1e-9);
    let mut pass = true;
    let mut lines = Vec::new();
    let mut check = |name: &str, t: &dyn Transport, paths: Vec<Path>, plan: &SamplePlan| {
        let psi = to_parallel(t);
        let axioms = check_axioms(&psi, &AxiomSuite::new(paths.clone()).with_plan(*plan));
        let forward = round_trip_transport(&t, &paths, 7, &exact);
        let backward = round_trip_psi(&psi, &paths, &exact);
        let bridged = to_transport(&psi);
        let laws = is_parallel_transport_along_paths(&bridged, &CheckSuite::new(paths).with_plan(*plan).with_grid(7));
        pass &= axioms.pass && forward.pass && backward.pass && laws.pass;
        lines.push(format!(
            "{name}: axioms {:.1e} T-trip {:.1e} Ψ-trip {:.1e} bridged laws {:.1e}",
            suite_max(&axioms),
            forward.max_residual,
            backward.max_residual,
            suite_max(&laws)
        ));
    };
    let mut plane = plane_paths();
    plane.push(Path::line(&[0.5, 0.25], &[-0.5, 1.0], Interval::UNIT)?);
    check("foliation", &foliation_transport(2, sine_foliation())?, plane.clone(), &plan_alg);
    check("group-left", &group_transport_left(2, so3_field())?, plane.clone(), &plan_alg);
    check("group-right", &group_transport_right(2, so3_field())?, plane.clone(), &plan_alg);
    check("connection-s2", &sphere(), sphere_paths(), &plan_ode);
    check("connection-u1", &u1_area(), plane.clone(), &plan_ode);

    // a factorized transport is defined on its own path only, so just the transport round trip applies
    let source: Arc<dyn Transport> = Arc::new(group_transport_left(2, so3_field())?);
    let fac = Arc::new(factorize(source, &plane[1], 0.0)?);
    let t = reconstruct(fac);
    let own = t.factorization().path().clone();
    let forward = round_trip_transport(&t, &[own], 7, &exact);
    pass &= forward.pass;
    lines.push(format!("factorized: T-trip {:.1e}", forward.max_residual));
    Ok(outcome(pass, lines.join("; ")))
}

fn negative_control() -> Result<Outcome> {
    let paths = plane_paths();
    let parametric = group_transport_left(2, PathFunctional::parametric(GroupModel::So3, 1.3)?)?;
    let plan = SamplePlan::default();
    let chi = fibre_transport::path::Reparam::new(
        Interval::UNIT,
        paths[0].domain(),
        fibre_transport::path::Shape::Power { exponent: 2.0 },
        fibre_transport::path::Orientation::Preserving,
    )?;
    let reparam = check_reparam(&parametric, &paths[0], &chi, &Interval::UNIT.grid(11), &plan);
    let axioms = check_axioms(&to_parallel(&parametric), &AxiomSuite::new(paths.clone()));
    let axiom = axioms.get(LawId::AxiomReparametrization).cloned().expect("reparametrization axiom checked");
    let pointwise = is_parallel_transport_along_paths(&group_transport_left(2, so3_field())?, &CheckSuite::new(paths));
    let pass = !reparam.pass && !reparam.witnesses.is_empty() && !axiom.pass && !axiom.witnesses.is_empty() && pointwise.pass;
    Ok(outcome(
        pass,
        format!(
            "parametric: reparam {:.2e} ({} witnesses), axiom {:.2e} ({} witnesses); pointwise suite {}",
            reparam.max_residual,
            reparam.witnesses.len(),
            axiom.max_residual,
            axiom.witnesses.len(),
            if pointwise.pass { "passes" } else { "fails" }
        ),
    ))
}

fn latitude_error(step: f64) -> Result<f64> {
    let theta0 = PI / 3.0;
    let t = sphere().with_step(step)?;
    let m = holonomy(&t, &latitude_loop(theta0)?)?.matrix().expect("vector holonomy is linear");
    let e = SurfaceModel::Sphere.orthonormal_frame(&DVector::from_vec(vec![theta0, 0.0]))?;
    let in_frame = e.clone().try_inverse().expect("frame is invertible") * m * e;
    // rotation by 2π(1 - cos θ₀) = π
    let angle = 2.0 * PI * (1.0 - theta0.cos());
    let oracle = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
    Ok((in_frame - oracle).norm())
}

fn holonomy_oracle() -> Result<Outcome> {
    let e1 = latitude_error(1e-3)?;
    let e2 = latitude_error(5e-4)?;
    let circle = Path::analytic(Formula::Circle { center: [0.0, 0.0], radius: 1.0, rate: 2.0 * PI, phase: 0.0 }, Interval::UNIT)?;
    let g = holonomy(&u1_area(), &circle)?.matrix().expect("group holonomy is a matrix");
    // exp(-i B·area) with B = 1 and area π
    let oracle = DMatrix::from_row_slice(2, 2, &[(-PI).cos(), -(-PI).sin(), (-PI).sin(), (-PI).cos()]);
    let u1 = (g - oracle).norm();
    let ratio = e1 / e2;
    Ok(outcome(
        e1 < 1e-6 && ratio >= 8.0 && u1 < 1e-6,
        format!("latitude error {e1:.2e} at h=1e-3, {e2:.2e} at h=5e-4 (ratio {ratio:.1}); U(1) error {u1:.2e}"),
    ))
}

fn sample_point(rng: &mut ChaCha8Rng, bundle: &BundleModel) -> Result<FiberElement> {
    let x = DVector::from_vec(vec![rng.random_range(0.4..PI - 0.4), rng.random_range(-PI..PI)]);
    let v = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    bundle.fiber_at(&x)?.element(Payload::Vector(v))
}

/// Horizontal basis from Christoffel symbols of the metric by finite differences.
fn metric_oracle_basis(p: &FiberElement) -> Result<Vec<DVector<f64>>> {
    let gamma = SurfaceModel::Sphere.christoffel_from_metric(p.base(), 1e-5)?;
    let v = p.payload().as_vector().expect("tangent payload").clone();
    Ok((0..2)
        .map(|i| {
            let e = DVector::from_fn(2, |r, _| if r == i { 1.0 } else { 0.0 });
            let dv = -(gamma.contract(&e) * &v);
            DVector::from_vec(vec![e[0], e[1], dv[0], dv[1]])
        })
        .collect())
}

fn horizontal_reconstruction() -> Result<Outcome> {
    let t = sphere();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut angle, mut margin, mut unique, mut linear) = (0.0_f64, f64::INFINITY, 0.0_f64, 0.0_f64);
    let mut pass = true;
    for _ in 0..10 {
        let p = sample_point(&mut rng, t.bundle())?;
        let x = p.base().clone();
        let probes = default_probes(&x, &mut rng, 0.1)?;
        let est = horizontal_space_from_transport(&t, &p, &probes, DEFAULT_FD_STEP)?;
        let h = check_horizontal_space(&est, &metric_oracle_basis(&p)?, 1e-4);
        let c = check_complementarity(&est, t.bundle(), &p, 0.1);
        let d = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let bend = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let line = Probe::line(&x, &d, 0.1)?;
        let parabola = Probe::parabola(&x, &d, &bend, Interval::new(-0.1, 0.1)?)?;
        let u = check_initial_uniqueness(&t, &p, &line, &parabola, DEFAULT_FD_STEP, 1e-5);
        let coeffs = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let l = check_linearization(&t, &p, &probes[0], &probes[2], coeffs, DEFAULT_FD_STEP, 1e-4);
        pass &= h.pass && c.pass && c.margin.is_some_and(|m| m > 0.1) && u.pass && l.pass && l.samples > 0;
        angle = angle.max(h.max_residual);
        margin = margin.min(c.margin.unwrap_or(0.0));
        unique = unique.max(u.max_residual);
        linear = linear.max(l.max_residual);
    }
    Ok(outcome(
        pass,
        format!("max angle {angle:.1e}, min margin {margin:.3}, paired {unique:.1e}, combined {linear:.1e} over 10 points"),
    ))
}

fn lift_conditions() -> Result<Outcome> {
    let t = sphere();
    let psi = to_parallel(&t);
    let bridged = to_transport(&psi);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pass = true;
    let (mut angle, mut worst) = (0.0_f64, Vec::new());
    for _ in 0..10 {
        let p = sample_point(&mut rng, t.bundle())?;
        let report = check_lift_conditions(&psi, &p, &LiftConditions::default(), &mut rng)?;
        pass &= report.pass && report.reports.iter().all(|r| r.samples > 0);
        // lifts start at the probe start, so only forward stencils apply
        let x = p.base().clone();
        let rays = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.6, 0.8]]
            .iter()
            .map(|d| Probe::ray(&x, &DVector::from_vec(d.to_vec()), 0.1))
            .collect::<Result<Vec<_>>>()?;
        let est = horizontal_space_from_transport(&bridged, &p, &rays, DEFAULT_FD_STEP)?;
        let h = check_horizontal_space(&est, &metric_oracle_basis(&p)?, 1e-4);
        pass &= h.pass;
        angle = angle.max(h.max_residual);
        worst.push(report);
    }
    let merged = fibre_transport::transport::SuiteReport::from_reports(worst.into_iter().flat_map(|r| r.reports));
    let detail = merged
        .reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.law, r.max_residual))
        .chain([format!("horizontal angle {angle:.1e}")])
        .collect::<Vec<_>>()
        .join(", ");
    Ok(outcome(pass && merged.pass, detail))
}

fn main() {
    let results = [
        run(1, "groupoid-law suite", Duration::from_secs(30), groupoid_suite),
        run(2, "finite-fibre brute force", Duration::from_secs(10), finite_oracle),
        run(3, "gauge freedom", Duration::from_secs(5), gauge_freedom),
        run(4, "parallel transport bijection", Duration::from_secs(60), bijection),
        run(5, "negative control", Duration::from_secs(5), negative_control),
        run(6, "holonomy oracle", Duration::from_secs(10), holonomy_oracle),
        run(7, "horizontal-space reconstruction", Duration::from_secs(30), horizontal_reconstruction),
        run(8, "lift conditions of the generated parallel transport", Duration::from_secs(30), lift_conditions),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
