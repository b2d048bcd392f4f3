//! The five subcommands. Each returns report entries plus CSV series.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use fibre_transport::bundle::{BaseSpace, BundleModel, Fiber, FiberElement, FiberKind, Payload, SurfaceModel};
use fibre_transport::connection::{
    check_complementarity, check_horizontal_space, check_initial_uniqueness, check_linearization, default_probes, holonomy,
    horizontal_lift, horizontal_space_from_transport, ConnectionModel, ConnectionTransport, Probe,
};
use fibre_transport::factorization::{
    factorize, gauge_map, permutation_gauge, random_permutation, reconstruct_residual, verify_gauge, Factorization,
};
use fibre_transport::group::rotation2;
use fibre_transport::parallel::{
    check_axioms, check_lift_conditions, round_trip_psi, round_trip_transport, to_parallel, to_transport, AxiomSuite,
    LiftConditions,
};
use fibre_transport::path::{Interval, Path};
use fibre_transport::transport::{
    check_groupoid, check_identity, check_inverse, check_restriction, is_parallel_transport_along_paths, CheckSuite, LawId,
    LawReport, SamplePlan, SuiteReport, Transport,
};

use crate::backend::{rng_for, Job};
use crate::config::{KeyPath, RunConfig};
use crate::error::CliError;
use crate::report::{format_float, Entry, Metric, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Transport,
    Check,
    Factorize,
    Holonomy,
    ReconstructHorizontal,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Transport => "transport",
            Command::Check => "check",
            Command::Factorize => "factorize",
            Command::Holonomy => "holonomy",
            Command::ReconstructHorizontal => "reconstruct-horizontal",
        }
    }
}

/// Entries, extra CSV series keyed by file stem suffix, and per-entry timings.
#[derive(Default)]
pub struct Outcome {
    pub entries: Vec<Entry>,
    pub series: Vec<(String, Series)>,
    pub timings: BTreeMap<String, f64>,
}

/// A unit of work producing one entry and optional series rows.
type Task<'a> = Box<dyn Fn() -> (Entry, Vec<Vec<String>>) + Send + Sync + 'a>;

/// An entry, its series rows, and its wall-clock seconds.
type Finished = (Entry, Vec<Vec<String>>, f64);

/// Runs tasks on all cores; results keep the task order.
fn run_tasks(tasks: Vec<(String, Task<'_>)>) -> Vec<Finished> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Finished>>> = Mutex::new(vec![None; tasks.len()]);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, task)) = tasks.get(i) else { break };
                let start = Instant::now();
                let (entry, rows) = task();
                let elapsed = start.elapsed().as_secs_f64();
                results.lock().expect("no worker panics while holding the lock")[i] = Some((entry, rows, elapsed));
            });
        }
    });
    results.into_inner().expect("workers finished").into_iter().map(|r| r.expect("every task ran")).collect()
}

fn collect(tasks: Vec<(String, Task<'_>)>, series: Option<(&str, Series)>) -> Outcome {
    let mut out = Outcome::default();
    let mut series = series.map(|(n, s)| (n.to_string(), s));
    for (entry, rows, elapsed) in run_tasks(tasks) {
        out.timings.insert(entry.id.clone(), elapsed);
        if let Some((_, s)) = series.as_mut() {
            for r in rows {
                s.push(r);
            }
        }
        out.entries.push(entry.finish());
    }
    out.series.extend(series);
    out
}

pub fn run(command: Command, cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    match command {
        Command::Transport => cmd_transport(cfg, jobs),
        Command::Check => cmd_check(cfg, jobs),
        Command::Factorize => cmd_factorize(cfg, jobs),
        Command::Holonomy => cmd_holonomy(cfg, jobs),
        Command::ReconstructHorizontal => cmd_reconstruct(cfg, jobs),
    }
}

// ---------------------------------------------------------------- payloads

/// Builds a fibre element from config numbers in the layout of the fibre.
pub fn payload_from(fiber: &Fiber, values: &[f64]) -> Result<Payload, String> {
    match fiber.kind() {
        FiberKind::Vector { .. } | FiberKind::Foliation(_) => Ok(Payload::Vector(DVector::from_column_slice(values))),
        FiberKind::Group { group } => {
            let n = group.matrix_size();
            if values.len() != n * n {
                return Err(format!("group payload needs {} entries, got {}", n * n, values.len()));
            }
            Ok(Payload::Group(DMatrix::from_row_slice(n, n, values)))
        }
        FiberKind::Finite { size } => match values {
            [x] if x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < *size => Ok(Payload::Label(*x as usize)),
            _ => Err(format!("finite payload is one label in 0..{size}, got {values:?}")),
        },
    }
}

/// Config-layout numbers of a payload: matrices row by row.
pub fn payload_values(p: &Payload) -> Vec<f64> {
    match p {
        Payload::Vector(v) => v.as_slice().to_vec(),
        Payload::Group(g) => g.transpose().as_slice().to_vec(),
        Payload::Label(i) => vec![*i as f64],
    }
}

fn surface_of(job: &Job) -> Option<SurfaceModel> {
    match job.connection.as_ref()?.model() {
        ConnectionModel::Christoffel { surface } => Some(*surface),
        ConnectionModel::Principal { .. } => None,
    }
}

fn joined(values: &[f64]) -> String {
    values.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(" ")
}

fn core(context: &str) -> impl Fn(fibre_transport::Error) -> String + '_ {
    move |e| format!("{context}: {e}")
}

// ---------------------------------------------------------------- transport

fn cmd_transport(cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    if cfg.tuples.is_empty() {
        return Err(CliError::Empty("transport needs at least one [[tuples]] entry".into()));
    }
    let mut tasks: Vec<(String, Task<'_>)> = Vec::new();
    for (k, tuple) in cfg.tuples.iter().enumerate() {
        let matching: Vec<&Job> = jobs
            .iter()
            .filter(|j| j.path_index == tuple.path && tuple.backend.as_ref().is_none_or(|b| *b == j.backend))
            .collect();
        if matching.is_empty() {
            return Err(CliError::Invalid {
                at: KeyPath::in_array("tuples", k, "path"),
                message: format!("no backend runs on path {}", tuple.path),
                line: None,
            });
        }
        if tuple.frame {
            if let Some(j) = matching.iter().find(|j| surface_of(j).is_none()) {
                return Err(CliError::Invalid {
                    at: KeyPath::in_array("tuples", k, "frame"),
                    message: format!("{} has no surface frame", j.backend),
                    line: None,
                });
            }
        }
        for job in matching {
            let id = format!("tuple-{k:02}/{}", job.id);
            tasks.push((
                id.clone(),
                Box::new(move || {
                    let mut entry = Entry::new(&id);
                    let mut rows = Vec::new();
                    match transport_tuple(job, tuple) {
                        Ok((input, output)) => {
                            let residual = tuple.expect.as_ref().map(|e| {
                                if e.len() != output.len() {
                                    f64::INFINITY
                                } else {
                                    e.iter().zip(&output).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                                }
                            });
                            if let Some(r) = residual {
                                entry.metric(Metric::below("residual", r, job.tolerance));
                            }
                            entry.data = json!({ "s": tuple.s, "t": tuple.t, "input": input, "output": output, "frame": tuple.frame });
                            rows.push(vec![
                                format!("{k}"),
                                job.id.clone(),
                                format_float(tuple.s),
                                format_float(tuple.t),
                                joined(&input),
                                joined(&output),
                                residual.map(format_float).unwrap_or_default(),
                            ]);
                        }
                        Err(e) => entry.fail(e),
                    }
                    (entry, rows)
                }),
            ));
        }
    }
    let series = Series::new(&["tuple", "id", "s", "t", "input", "output", "residual"]);
    Ok(collect(tasks, Some(("elements", series))))
}

fn transport_tuple(job: &Job, tuple: &crate::config::TupleConfig) -> Result<(Vec<f64>, Vec<f64>), String> {
    let x = job.path.eval(tuple.s).map_err(core("start point"))?;
    let y = job.path.eval(tuple.t).map_err(core("end point"))?;
    let fiber = job.bundle().fiber_at(&x).map_err(core("start fibre"))?;
    let frame = |at: &DVector<f64>| -> Result<Option<DMatrix<f64>>, String> {
        match (tuple.frame, surface_of(job)) {
            (true, Some(s)) => Ok(Some(s.orthonormal_frame(at).map_err(core("frame"))?)),
            _ => Ok(None),
        }
    };
    let mut payload = payload_from(&fiber, &tuple.payload)?;
    if let (Some(e), Payload::Vector(v)) = (frame(&x)?, &payload) {
        payload = Payload::Vector(e * v);
    }
    let u = fiber.element(payload).map_err(core("payload"))?;
    let out = job.transport.at(&job.path, tuple.s, tuple.t).and_then(|m| m.apply(&u)).map_err(core("transport"))?;
    let mut output = payload_values(out.payload());
    if let Some(e) = frame(&y)? {
        let inv = e.try_inverse().ok_or("frame is singular")?;
        output = (inv * DVector::from_vec(output)).as_slice().to_vec();
    }
    Ok((tuple.payload.clone(), output))
}

// ---------------------------------------------------------------- check

fn transport_laws(cfg: &RunConfig, job: &Job, plan: &SamplePlan) -> Vec<LawReport> {
    let laws: Vec<LawId> = cfg.check.laws.iter().copied().filter(|l| !(job.path_bound && *l == LawId::Reparametrization)).collect();
    if laws.is_empty() {
        return Vec::new();
    }
    match &job.grid {
        Some(grid) => own_grid_laws(job, grid, &laws, plan),
        None => {
            let suite = CheckSuite::new(vec![job.path.clone()]).with_grid(cfg.check.grid).with_plan(*plan).with_laws(laws);
            is_parallel_transport_along_paths(&*job.transport, &suite).reports
        }
    }
}

/// Laws of a transport that only exists on the points of `grid`.
fn own_grid_laws(job: &Job, grid: &[f64], laws: &[LawId], plan: &SamplePlan) -> Vec<LawReport> {
    let t = &*job.transport;
    let mut out = Vec::new();
    for law in laws {
        match law {
            LawId::GroupoidComposition => out.push(check_groupoid(t, &job.path, grid, plan)),
            LawId::Identity => out.push(check_identity(t, &job.path, grid, plan)),
            LawId::Inverse => out.push(check_inverse(t, &job.path, grid, plan)),
            LawId::Restriction if grid.len() >= 3 => match Interval::new(grid[1], grid[grid.len() - 1]) {
                Ok(sub) => out.push(check_restriction(t, &job.path, sub, &grid[1..], plan)),
                Err(e) => {
                    let mut r = LawReport::new(LawId::Restriction, plan.tolerance_for(t));
                    r.record_error(&e, || fibre_transport::transport::Witness::new(&job.path, 0.0));
                    out.push(r);
                }
            },
            _ => {}
        }
    }
    out
}

fn cmd_check(cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    if jobs.is_empty() {
        return Err(CliError::Empty("check needs at least one backend with a path".into()));
    }
    let run_laws = !cfg.check.laws.is_empty();
    if !run_laws && !cfg.check.axioms && !cfg.check.round_trip {
        return Err(CliError::Empty("no checks selected: laws is empty and axioms and round_trip are off".into()));
    }
    let mut tasks: Vec<(String, Task<'_>)> = Vec::new();
    if run_laws {
        for job in jobs {
            tasks.push((
                job.id.clone(),
                Box::new(move || {
                    let mut entry = Entry::new(&job.id);
                    entry.reports = SuiteReport::from_reports(transport_laws(cfg, job, &job.plan(cfg))).reports;
                    if job.path_bound {
                        entry.data = json!({ "note": "defined on its own path only; reparametrized paths are out of its domain" });
                    }
                    (entry, Vec::new())
                }),
            ));
        }
    }
    // axioms and the bridge act on whole path families, so they run once per backend
    let mut by_backend: BTreeMap<usize, Vec<&Job>> = BTreeMap::new();
    for job in jobs {
        by_backend.entry(job.backend_index).or_default().push(job);
    }
    for group in by_backend.into_values() {
        let first = group[0];
        let name = first.backend.clone();
        if first.path_bound {
            if cfg.check.round_trip {
                for job in group.iter().copied().filter(|j| j.grid.is_none()) {
                    let id = format!("{}/round-trip", job.id);
                    tasks.push((
                        id.clone(),
                        Box::new(move || {
                            let mut entry = Entry::new(&id);
                            let plan = job.plan(cfg).with_tolerance(cfg.check.round_trip_tolerance);
                            entry.report(round_trip_transport(&job.transport, std::slice::from_ref(&job.path), cfg.check.grid, &plan));
                            (entry, Vec::new())
                        }),
                    ));
                }
            }
            continue;
        }
        let paths: Vec<Path> = group.iter().map(|j| j.path.clone()).collect();
        let transport = Arc::clone(&first.transport);
        let plan = SamplePlan {
            elements: cfg.check.elements,
            seed: crate::backend::stream_seed(cfg.seed, &name),
            ..SamplePlan::default()
        }
        .with_tolerance(first.tolerance);
        if cfg.check.axioms {
            let id = format!("{name}/axioms");
            let (paths, transport) = (paths.clone(), Arc::clone(&transport));
            tasks.push((
                id.clone(),
                Box::new(move || {
                    let mut entry = Entry::new(&id);
                    let psi = to_parallel(Arc::clone(&transport));
                    entry.reports = check_axioms(&psi, &AxiomSuite::new(paths.clone()).with_plan(plan)).reports;
                    (entry, Vec::new())
                }),
            ));
        }
        if cfg.check.round_trip {
            let id = format!("{name}/round-trip");
            tasks.push((
                id.clone(),
                Box::new(move || {
                    let mut entry = Entry::new(&id);
                    let exact = plan.with_tolerance(cfg.check.round_trip_tolerance);
                    let psi = to_parallel(Arc::clone(&transport));
                    let forward = round_trip_transport(&transport, &paths, cfg.check.grid, &exact);
                    let backward = round_trip_psi(&psi, &paths, &exact);
                    let bridged = to_transport(&psi);
                    let suite = CheckSuite::new(paths.clone()).with_grid(cfg.check.grid).with_plan(plan);
                    let laws = is_parallel_transport_along_paths(&bridged, &suite);
                    entry.metric(Metric::below("transport-round-trip", forward.max_residual, exact.tolerance.unwrap_or(0.0)));
                    entry.metric(Metric::below("parallel-round-trip", backward.max_residual, exact.tolerance.unwrap_or(0.0)));
                    entry.data = json!({ "bridged-laws": laws.reports.iter().map(|r| r.law.as_str()).collect::<Vec<_>>() });
                    entry.reports = SuiteReport::from_reports([forward, backward].into_iter().chain(laws.reports)).reports;
                    (entry, Vec::new())
                }),
            ));
        }
    }
    Ok(collect(tasks, None))
}

// ---------------------------------------------------------------- factorize

fn finite_size(fiber: &Fiber) -> Option<usize> {
    match fiber.kind() {
        FiberKind::Finite { size } => Some(*size),
        _ => None,
    }
}

fn inverse_table(t: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; t.len()];
    for (i, &j) in t.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

fn table_rows(id: &str, anchor: f64, fac: &Factorization, grid: &[f64]) -> Result<(Value, Vec<Vec<String>>), String> {
    let tables = fac.permutation_tables(grid).map_err(core("permutation tables"))?;
    let rows = tables
        .iter()
        .map(|(s, t)| {
            let cells = t.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            vec![id.to_string(), format_float(anchor), format_float(*s), cells]
        })
        .collect();
    let value = tables.iter().map(|(s, t)| json!({ "s": s, "table": t })).collect();
    Ok((Value::Array(value), rows))
}

/// A given family: laws of its reconstruction, the round trip through a
/// second factorization, and recovery of random gauges.
fn factorize_family(cfg: &RunConfig, job: &Job, family: &Arc<Factorization>) -> Result<(Entry, Vec<Vec<String>>), String> {
    let mut entry = Entry::new(&job.id);
    let plan = job.plan(cfg);
    let grid = job.grid(cfg.check.grid);
    let own = [LawId::GroupoidComposition, LawId::Identity, LawId::Inverse, LawId::Restriction];
    let mut reports = own_grid_laws(job, &grid, &own, &plan);
    let again = Arc::new(factorize(Arc::clone(&job.transport), &job.path, grid[0]).map_err(core("refactorize"))?);
    reports.push(reconstruct_residual(&*job.transport, &again, &grid, &plan));
    let (d, independence) = gauge_map(family, &again, &grid, &plan).map_err(core("gauge map"))?;
    reports.push(independence);
    reports.push(verify_gauge(&d, family, &again, &grid, &plan));
    let mut data = serde_json::Map::new();
    let mut rows = Vec::new();
    let finite = finite_size(&family.model().fiber);
    if finite.is_some() {
        let expected = family.map_at(grid[0]).map_err(core("family"))?.permutation_table();
        entry.metric(Metric::flag("anchor-gauge-recovered", d.permutation_table() == expected));
        let (tables, r) = table_rows(&job.id, grid[0], family, &grid)?;
        data.insert("tables".into(), tables);
        rows.extend(r);
    }
    if cfg.factorize.gauge_trials > 0 {
        let size = finite.ok_or("gauge trials need finite fibres")?;
        let mut missed = 0;
        for k in 0..cfg.factorize.gauge_trials {
            let mut rng = rng_for(cfg.seed, &format!("{}/gauge-{k}", job.id));
            let sigma = random_permutation(&mut rng, size);
            let g = permutation_gauge(&family.model().fiber, sigma.clone()).map_err(core("gauge"))?;
            let other = family.post_compose(&g).map_err(core("post-compose"))?;
            let (d, independence) = gauge_map(family, &other, &grid, &plan).map_err(core("gauge map"))?;
            let check = verify_gauge(&d, family, &other, &grid, &plan);
            if d.permutation_table() != Some(inverse_table(&sigma)) {
                missed += 1;
            }
            reports.push(independence);
            reports.push(check);
        }
        entry.metric(Metric::below("gauges-missed", missed as f64, 0.5));
        entry.metric(Metric::info("gauge-trials", cfg.factorize.gauge_trials as f64));
    }
    entry.reports = SuiteReport::from_reports(reports).reports;
    entry.data = Value::Object(data);
    Ok((entry, rows))
}

/// An arbitrary transport: factorize at each anchor, round-trip, and check
/// that all factorizations differ by one constant gauge.
fn factorize_anchors(cfg: &RunConfig, job: &Job) -> Result<(Entry, Vec<Vec<String>>), String> {
    let mut entry = Entry::new(&job.id);
    let plan = job.plan(cfg);
    let grid = job.grid(cfg.check.grid);
    let d = job.path.domain();
    let mut reports = Vec::new();
    let mut anchors = Vec::new();
    let mut rows = Vec::new();
    let mut first: Option<Arc<Factorization>> = None;
    for &a in &cfg.factorize.anchors {
        let s0 = d.lo() + a * d.len();
        let fac = Arc::new(factorize(Arc::clone(&job.transport), &job.path, s0).map_err(core("factorize"))?);
        let round = reconstruct_residual(&*job.transport, &fac, &grid, &plan);
        let mut info = serde_json::Map::new();
        info.insert("anchor".into(), json!(s0));
        info.insert("round-trip".into(), json!(round.max_residual));
        reports.push(round);
        if finite_size(&fac.model().fiber).is_some() {
            let (tables, r) = table_rows(&job.id, s0, &fac, &grid)?;
            info.insert("tables".into(), tables);
            rows.extend(r);
        }
        match &first {
            None => first = Some(Arc::clone(&fac)),
            Some(f0) => {
                let (g, independence) = gauge_map(f0, &fac, &grid, &plan).map_err(core("gauge map"))?;
                reports.push(independence);
                reports.push(verify_gauge(&g, f0, &fac, &grid, &plan));
                if let Some(t) = g.permutation_table() {
                    info.insert("gauge".into(), json!(t));
                }
            }
        }
        anchors.push(Value::Object(info));
    }
    entry.reports = SuiteReport::from_reports(reports).reports;
    entry.data = json!({ "anchors": anchors });
    Ok((entry, rows))
}

fn cmd_factorize(cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    if jobs.is_empty() {
        return Err(CliError::Empty("factorize needs at least one backend with a path".into()));
    }
    let tasks: Vec<(String, Task<'_>)> = jobs
        .iter()
        .map(|job| {
            let task: Task<'_> = Box::new(move || {
                let result = match &job.family {
                    Some(f) => factorize_family(cfg, job, f),
                    None => factorize_anchors(cfg, job),
                };
                result.unwrap_or_else(|e| {
                    let mut entry = Entry::new(&job.id);
                    entry.fail(e);
                    (entry, Vec::new())
                })
            });
            (job.id.clone(), task)
        })
        .collect();
    Ok(collect(tasks, Some(("tables", Series::new(&["id", "anchor", "s", "table"])))))
}

// ---------------------------------------------------------------- holonomy

fn holonomy_matrix(t: &ConnectionTransport, path: &Path, frame: Option<SurfaceModel>) -> Result<DMatrix<f64>, String> {
    let m = holonomy(t, path).map_err(core("holonomy"))?.matrix().ok_or("holonomy is not linear")?;
    match frame {
        Some(s) => {
            let e = s.orthonormal_frame(&path.start()).map_err(core("frame"))?;
            let inv = e.clone().try_inverse().ok_or("frame is singular")?;
            Ok(inv * m * e)
        }
        None => Ok(m),
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn cmd_holonomy(cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    if cfg.holonomy.is_empty() {
        return Err(CliError::Empty("holonomy needs at least one [[holonomy]] entry".into()));
    }
    let mut tasks: Vec<(String, Task<'_>)> = Vec::new();
    for (k, lc) in cfg.holonomy.iter().enumerate() {
        let invalid = |key: &str, message: String| CliError::Invalid { at: KeyPath::in_array("holonomy", k, key), message, line: None };
        let job = jobs
            .iter()
            .find(|j| j.backend == lc.backend && j.path_index == lc.path)
            .ok_or_else(|| invalid("path", format!("backend {} does not run on path {}", lc.backend, lc.path)))?;
        let connection = job.connection.clone().ok_or_else(|| invalid("backend", format!("{} is not a connection", lc.backend)))?;
        let frame = match (lc.frame, surface_of(job)) {
            (false, _) => None,
            (true, Some(s)) => Some(s),
            (true, None) => return Err(invalid("frame", format!("{} has no surface frame", lc.backend))),
        };
        let id = format!("loop-{k:02}/{}", job.id);
        tasks.push((
            id.clone(),
            Box::new(move || {
                let mut entry = Entry::new(&id);
                let mut rows = Vec::new();
                let result = (|| -> Result<(), String> {
                    let m = holonomy_matrix(&connection, &job.path, frame)?;
                    let n = m.nrows();
                    let expected = match (&lc.expect_angle, &lc.expect) {
                        (Some(a), _) if n == 2 => Some(rotation2(*a)),
                        (Some(_), _) => return Err(format!("expect_angle needs a 2x2 holonomy, got {n}x{n}")),
                        (None, Some(e)) if e.len() == n * n => Some(DMatrix::from_row_slice(n, n, e)),
                        (None, Some(e)) => return Err(format!("expect needs {} entries, got {}", n * n, e.len())),
                        (None, None) => None,
                    };
                    let mut data = json!({ "matrix": row_major(&m), "step": connection.step() });
                    if n == 2 {
                        data["angle"] = json!(m[(1, 0)].atan2(m[(0, 0)]));
                    }
                    if let Some(oracle) = expected {
                        let e1 = (&m - &oracle).norm();
                        entry.metric(Metric::below("error", e1, job.tolerance));
                        rows.push(vec![id.clone(), format_float(connection.step()), format_float(e1)]);
                        if let Some(min) = lc.min_refinement_ratio {
                            let half = connection.with_step(connection.step() / 2.0).map_err(core("half step"))?;
                            let e2 = (holonomy_matrix(&half, &job.path, frame)? - &oracle).norm();
                            rows.push(vec![id.clone(), format_float(half.step()), format_float(e2)]);
                            entry.metric(Metric::info("half-step-error", e2));
                            entry.metric(Metric::at_least("refinement-ratio", e1 / e2, min));
                        }
                    }
                    entry.data = data;
                    Ok(())
                })();
                if let Err(e) = result {
                    entry.fail(e);
                }
                (entry, rows)
            }),
        ));
    }
    Ok(collect(tasks, Some(("refinement", Series::new(&["id", "step", "error"])))))
}

// ---------------------------------------------------------------- reconstruct-horizontal

fn random_point(rng: &mut ChaCha8Rng, bundle: &BundleModel) -> Result<FiberElement, String> {
    let x = match bundle.base() {
        BaseSpace::Sphere => DVector::from_vec(vec![rng.random_range(0.4..PI - 0.4), rng.random_range(-PI..PI)]),
        BaseSpace::Euclidean { dim } => DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)),
    };
    let fiber = bundle.fiber_at(&x).map_err(core("fibre"))?;
    fiber.sample(rng, 1).pop().ok_or_else(|| "empty fibre".into())
}

fn reconstruct_at(cfg: &RunConfig, t: &ConnectionTransport, p: &FiberElement, rng: &mut ChaCha8Rng) -> Result<(Entry, Vec<Vec<String>>), String> {
    let rc = &cfg.reconstruct;
    let mut entry = Entry::new("");
    let x = p.base().clone();
    let n = x.len();
    let probes = default_probes(&x, rng, rc.half_width).map_err(core("probes"))?;
    let est = horizontal_space_from_transport(t, p, &probes, rc.fd_step).map_err(core("horizontal space"))?;
    let reference = t.model().horizontal_basis(p).map_err(core("reference basis"))?;
    let mut reports = vec![check_horizontal_space(&est, &reference, rc.angle_tolerance)];
    let complement = check_complementarity(&est, t.bundle(), p, rc.min_margin);
    let margin = complement.margin.unwrap_or(0.0);
    reports.push(complement);
    let mut uniform = || DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let (d, bend) = (uniform(), uniform());
    let line = Probe::line(&x, &d, rc.half_width).map_err(core("probe"))?;
    let parabola = Probe::parabola(&x, &d, &bend, Interval::new(-rc.half_width, rc.half_width).map_err(core("probe"))?)
        .map_err(core("probe"))?;
    reports.push(check_initial_uniqueness(t, p, &line, &parabola, rc.fd_step, rc.uniqueness_tolerance));
    let coeffs = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    reports.push(check_linearization(t, p, &probes[0], &probes[probes.len() - 1], coeffs, rc.fd_step, rc.linearization_tolerance));
    if rc.lift_conditions {
        let psi = to_parallel(t);
        let lc = LiftConditions {
            width: rc.half_width,
            fd_step: rc.fd_step,
            uniqueness_tol: rc.uniqueness_tolerance,
            linearization_tol: rc.linearization_tolerance,
            ..LiftConditions::default()
        };
        reports.extend(check_lift_conditions(&psi, p, &lc, rng).map_err(core("lift conditions"))?.reports);
        // the endpoint transport only sees lifts starting at the point, hence rays
        let bridged = to_transport(&psi);
        let rays = (0..n)
            .flat_map(|i| [1.0, -1.0].map(|sign| DVector::from_fn(n, |r, _| if r == i { sign } else { 0.0 })))
            .map(|d| Probe::ray(&x, &d, rc.half_width))
            .collect::<Result<Vec<_>, _>>()
            .map_err(core("rays"))?;
        let est = horizontal_space_from_transport(&bridged, p, &rays, rc.fd_step).map_err(core("bridged horizontal space"))?;
        let mut h = check_horizontal_space(&est, &reference, rc.angle_tolerance);
        h.note = Some("from the endpoint transport".into());
        reports.push(h);
    }
    entry.reports = SuiteReport::from_reports(reports).reports;
    entry.metric(Metric::info("complementarity-margin", margin));
    entry.data = json!({
        "base": x.as_slice(),
        "payload": payload_values(p.payload()),
        "singular_values": est.singular_values,
    });
    let grid = probes[0].path.domain().grid(21);
    let lift = horizontal_lift(t, &probes[0].path, probes[0].anchor, p, &grid).map_err(core("lift"))?;
    let rows = lift
        .samples
        .iter()
        .map(|(s, e)| vec![format_float(*s), joined(e.base().as_slice()), joined(&payload_values(e.payload()))])
        .collect();
    Ok((entry, rows))
}

fn cmd_reconstruct(cfg: &RunConfig, jobs: &[Job]) -> Result<Outcome, CliError> {
    let mut seen = std::collections::BTreeSet::new();
    let connections: Vec<&Job> = jobs.iter().filter(|j| j.connection.is_some() && seen.insert(j.backend_index)).collect();
    if connections.is_empty() {
        return Err(CliError::Empty("reconstruct-horizontal needs a connection backend".into()));
    }
    let total = cfg.reconstruct.points.len() + cfg.reconstruct.random_points;
    if total == 0 {
        return Err(CliError::Empty("reconstruct-horizontal needs points or random_points".into()));
    }
    let mut tasks: Vec<(String, Task<'_>)> = Vec::new();
    for job in connections {
        for k in 0..total {
            let id = format!("{}/point-{k:02}", job.backend);
            tasks.push((
                id.clone(),
                Box::new(move || {
                    let t = job.connection.as_ref().expect("filtered to connections");
                    let mut rng = rng_for(cfg.seed, &id);
                    let point = match cfg.reconstruct.points.get(k) {
                        Some(pc) => {
                            let x = DVector::from_column_slice(&pc.base);
                            t.bundle()
                                .fiber_at(&x)
                                .map_err(core("point"))
                                .and_then(|f| payload_from(&f, &pc.payload).and_then(|pl| f.element(pl).map_err(core("payload"))))
                        }
                        None => random_point(&mut rng, t.bundle()),
                    };
                    match point.and_then(|p| reconstruct_at(cfg, t, &p, &mut rng)) {
                        Ok((mut entry, rows)) => {
                            entry.id = id.clone();
                            let rows = rows.into_iter().map(|r| [vec![id.clone()], r].concat()).collect();
                            (entry, rows)
                        }
                        Err(e) => {
                            let mut entry = Entry::new(&id);
                            entry.fail(e);
                            (entry, Vec::new())
                        }
                    }
                }),
            ));
        }
    }
    Ok(collect(tasks, Some(("lifts", Series::new(&["id", "t", "base", "payload"])))))
}
