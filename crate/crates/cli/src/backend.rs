//! Turns backend entries into runnable jobs, one per (backend, path) pair.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fibre_transport::connection::{transport_from_connection, ConnectionTransport};
use fibre_transport::constructions::{foliation_transport, group_transport_left, group_transport_right};
use fibre_transport::factorization::{factorize, random_bijection_family, reconstruct, Factorization};
use fibre_transport::bundle::BundleModel;
use fibre_transport::path::Path;
use fibre_transport::transport::{AdversarialTransport, IdentityTransport, SamplePlan, Transport};

use crate::config::{BackendSpec, KeyPath, RunConfig};
use crate::error::CliError;

/// Tolerance for finite fibres, where every residual is exactly zero or not.
pub const EXACT: f64 = f64::MIN_POSITIVE;

/// A backend instantiated on one path.
#[derive(Clone)]
pub struct Job {
    pub id: String,
    pub backend: String,
    pub backend_index: usize,
    pub path_index: usize,
    pub path: Path,
    pub transport: Arc<dyn Transport>,
    pub tolerance: f64,
    /// Defined only on `path` and its restrictions.
    pub path_bound: bool,
    /// Grid the transport is defined on, when it is not the whole domain.
    pub grid: Option<Vec<f64>>,
    pub family: Option<Arc<Factorization>>,
    pub connection: Option<ConnectionTransport>,
}

impl Job {
    pub fn plan(&self, cfg: &RunConfig) -> SamplePlan {
        SamplePlan { elements: cfg.check.elements, seed: stream_seed(cfg.seed, &self.id), ..SamplePlan::default() }
            .with_tolerance(self.tolerance)
    }

    pub fn grid(&self, n: usize) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| self.path.domain().grid(n))
    }

    pub fn bundle(&self) -> &BundleModel {
        self.transport.bundle()
    }
}

/// Seed of an independent random stream named `key`.
pub fn stream_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

pub fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, key))
}

struct Built {
    suffix: String,
    transport: Arc<dyn Transport>,
    grid: Option<Vec<f64>>,
    family: Option<Arc<Factorization>>,
    connection: Option<ConnectionTransport>,
}

impl Built {
    fn plain(transport: Arc<dyn Transport>) -> Self {
        Built { suffix: String::new(), transport, grid: None, family: None, connection: None }
    }
}

fn build(spec: &BackendSpec, path: &Path, cfg: &RunConfig, key: &str) -> fibre_transport::Result<Vec<Built>> {
    Ok(match spec {
        BackendSpec::Identity { bundle } => vec![Built::plain(Arc::new(IdentityTransport::new(bundle.clone())))],
        BackendSpec::Foliation { base_dim, foliation } => {
            vec![Built::plain(Arc::new(foliation_transport(*base_dim, foliation.clone())?))]
        }
        BackendSpec::GroupLeft { base_dim, functional } => {
            vec![Built::plain(Arc::new(group_transport_left(*base_dim, functional.clone())?))]
        }
        BackendSpec::GroupRight { base_dim, functional } => {
            vec![Built::plain(Arc::new(group_transport_right(*base_dim, functional.clone())?))]
        }
        BackendSpec::Connection { connection } => {
            let t = transport_from_connection(connection.clone(), cfg.step)?;
            vec![Built { connection: Some(t.clone()), ..Built::plain(Arc::new(t)) }]
        }
        BackendSpec::Factorized { source, anchor } => {
            let mut out = Vec::new();
            for inner in build(source, path, cfg, key)? {
                let d = path.domain();
                let fac = Arc::new(factorize(inner.transport, path, d.lo() + anchor * d.len())?);
                out.push(Built { suffix: inner.suffix, family: Some(Arc::clone(&fac)), grid: inner.grid, ..Built::plain(Arc::new(reconstruct(fac))) });
            }
            out
        }
        BackendSpec::RandomBijection { base_dim, sizes, grids, families } => {
            let mut out = Vec::new();
            for &size in sizes {
                let bundle = BundleModel::finite(*base_dim, size)?;
                for &g in grids {
                    let grid = path.domain().grid(g);
                    for k in 0..*families {
                        let suffix = format!("/q{size}-g{g}-{k:02}");
                        let mut rng = rng_for(cfg.seed, &format!("{key}{suffix}"));
                        let fac = Arc::new(random_bijection_family(&bundle, path, &grid, &mut rng)?);
                        out.push(Built {
                            suffix,
                            transport: Arc::new(reconstruct(Arc::clone(&fac))),
                            grid: Some(grid.clone()),
                            family: Some(fac),
                            connection: None,
                        });
                    }
                }
            }
            out
        }
        BackendSpec::Adversarial { inner, strength } => build(inner, path, cfg, key)?
            .into_iter()
            .map(|b| Built { transport: Arc::new(AdversarialTransport::new(b.transport, *strength)), connection: None, ..b })
            .collect(),
    })
}

fn default_tolerance(spec: &BackendSpec, built: &Built) -> f64 {
    match spec {
        BackendSpec::RandomBijection { .. } => EXACT,
        BackendSpec::Adversarial { inner, .. } | BackendSpec::Factorized { source: inner, .. } => default_tolerance(inner, built),
        _ => built.transport.default_tolerance(),
    }
}

/// All jobs of the configuration, sorted by id.
pub fn jobs(cfg: &RunConfig) -> Result<Vec<Job>, CliError> {
    let mut out = Vec::new();
    for (i, entry) in cfg.backends.iter().enumerate() {
        let name = cfg.backend_name(i);
        let indices: Vec<usize> = entry.paths.clone().unwrap_or_else(|| (0..cfg.paths.len()).collect());
        for p in indices {
            let path = &cfg.paths[p];
            let key = format!("{name}/path-{p}");
            let built = build(&entry.spec, path, cfg, &key).map_err(|e| CliError::Invalid {
                at: KeyPath::in_array("backends", i, ""),
                message: format!("cannot build {} on path {p}: {e}", entry.spec.kind()),
                line: None,
            })?;
            for b in built {
                let tolerance = entry.tolerance.or(cfg.tolerance).unwrap_or_else(|| default_tolerance(&entry.spec, &b));
                out.push(Job {
                    id: format!("{key}{}", b.suffix),
                    backend: name.clone(),
                    backend_index: i,
                    path_index: p,
                    path: path.clone(),
                    transport: b.transport,
                    tolerance,
                    path_bound: entry.spec.is_path_bound(),
                    grid: b.grid,
                    family: b.family,
                    connection: b.connection,
                });
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}
