//! Run configuration, read from TOML. See `configs/` for complete examples.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fibre_transport::bundle::{BundleModel, FoliationModel};
use fibre_transport::connection::ConnectionModel;
use fibre_transport::constructions::PathFunctional;
use fibre_transport::path::Path;
use fibre_transport::transport::LawId;

use crate::error::CliError;

pub const DEFAULT_STEP: f64 = 1e-3;

fn default_step() -> f64 {
    DEFAULT_STEP
}

/// Top-level configuration shared by all subcommands.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Absolute RK4 step for connection backends.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Overrides every backend's default tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Output directory; the `--out` flag and `FIBRE_TRANSPORT_OUT` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub paths: Vec<Path>,
    #[serde(default)]
    pub backends: Vec<BackendEntry>,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub tuples: Vec<TupleConfig>,
    #[serde(default)]
    pub factorize: FactorizeConfig,
    #[serde(default)]
    pub holonomy: Vec<LoopConfig>,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
}

/// A backend plus the paths it runs on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackendEntry {
    /// Label used in report ids; defaults to the backend kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: BackendSpec,
    /// Indices into the top-level path list; defaults to all paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "kebab-case")]
pub enum BackendSpec {
    Identity {
        bundle: BundleModel,
    },
    Foliation {
        base_dim: usize,
        foliation: FoliationModel,
    },
    GroupLeft {
        base_dim: usize,
        functional: PathFunctional,
    },
    GroupRight {
        base_dim: usize,
        functional: PathFunctional,
    },
    Connection {
        connection: ConnectionModel,
    },
    /// Factorizes `source` along each path and reconstructs it.
    Factorized {
        source: Box<BackendSpec>,
        /// Anchor as a fraction of each path's domain.
        #[serde(default)]
        anchor: f64,
    },
    /// Seeded random bijection families on finite fibres, one per
    /// (size, grid, family index) combination.
    RandomBijection {
        base_dim: usize,
        sizes: Vec<usize>,
        grids: Vec<usize>,
        families: usize,
    },
    /// Wraps `inner` with a deliberate law violation of the given strength.
    Adversarial {
        inner: Box<BackendSpec>,
        strength: f64,
    },
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Identity { .. } => "identity",
            BackendSpec::Foliation { .. } => "foliation",
            BackendSpec::GroupLeft { .. } => "group-left",
            BackendSpec::GroupRight { .. } => "group-right",
            BackendSpec::Connection { .. } => "connection",
            BackendSpec::Factorized { .. } => "factorized",
            BackendSpec::RandomBijection { .. } => "random-bijection",
            BackendSpec::Adversarial { .. } => "adversarial",
        }
    }

    /// Backends defined only on their own paths and restrictions.
    pub fn is_path_bound(&self) -> bool {
        matches!(self, BackendSpec::Factorized { .. } | BackendSpec::RandomBijection { .. })
    }
}

fn default_grid() -> usize {
    11
}

fn all_transport_laws() -> Vec<LawId> {
    vec![LawId::GroupoidComposition, LawId::Identity, LawId::Inverse, LawId::Restriction, LawId::Reparametrization]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "all_transport_laws")]
    pub laws: Vec<LawId>,
    /// Also run the four parallel-transport axioms on the endpoint maps.
    #[serde(default)]
    pub axioms: bool,
    /// Also compare both bridge round trips against the backend.
    #[serde(default)]
    pub round_trip: bool,
    /// Random fibre elements per comparison.
    #[serde(default = "default_elements")]
    pub elements: usize,
    #[serde(default = "default_round_trip_tolerance")]
    pub round_trip_tolerance: f64,
}

fn default_round_trip_tolerance() -> f64 {
    1e-9
}

fn default_elements() -> usize {
    8
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            grid: default_grid(),
            laws: all_transport_laws(),
            axioms: false,
            round_trip: false,
            elements: default_elements(),
            round_trip_tolerance: default_round_trip_tolerance(),
        }
    }
}

/// One transported element `I^γ_{s→t}(u)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleConfig {
    /// Backend name; defaults to every backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    pub path: usize,
    pub s: f64,
    pub t: f64,
    /// Vector coordinates, group matrix entries row by row, or a single finite label.
    pub payload: Vec<f64>,
    /// Expected output in the same layout; adds a residual to the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Vec<f64>>,
    /// Read and write tangent vectors in the orthonormal frame of the surface.
    #[serde(default)]
    pub frame: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizeConfig {
    /// Anchors as fractions of each path's domain; all factorizations after
    /// the first are gauge-checked against it.
    #[serde(default = "default_anchors")]
    pub anchors: Vec<f64>,
    /// Random permutation gauges applied to each finite family.
    #[serde(default)]
    pub gauge_trials: usize,
}

fn default_anchors() -> Vec<f64> {
    vec![0.0]
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        FactorizeConfig { anchors: default_anchors(), gauge_trials: 0 }
    }
}

/// One holonomy computation: a closed path and an optional expected value.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Connection backend name.
    pub backend: String,
    pub path: usize,
    /// Express vector holonomy in the orthonormal frame of the surface.
    #[serde(default)]
    pub frame: bool,
    /// Expected holonomy as a planar rotation angle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_angle: Option<f64>,
    /// Expected holonomy matrix, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Vec<f64>>,
    /// Repeat at half the step and require the error to shrink by this factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_refinement_ratio: Option<f64>,
}

/// A total-space point given by base coordinates and fibre payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub base: Vec<f64>,
    pub payload: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default)]
    pub points: Vec<PointConfig>,
    /// Additional seeded random points.
    #[serde(default)]
    pub random_points: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_angle_tol")]
    pub angle_tolerance: f64,
    #[serde(default = "default_margin")]
    pub min_margin: f64,
    #[serde(default = "default_uniqueness")]
    pub uniqueness_tolerance: f64,
    #[serde(default = "default_linearization")]
    pub linearization_tolerance: f64,
    /// Also check the lift conditions of the endpoint parallel transport.
    #[serde(default)]
    pub lift_conditions: bool,
}

fn default_half_width() -> f64 {
    0.1
}
fn default_fd_step() -> f64 {
    1e-4
}
fn default_angle_tol() -> f64 {
    1e-4
}
fn default_margin() -> f64 {
    0.1
}
fn default_uniqueness() -> f64 {
    1e-5
}
fn default_linearization() -> f64 {
    1e-4
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            points: Vec::new(),
            random_points: 0,
            half_width: default_half_width(),
            fd_step: default_fd_step(),
            angle_tolerance: default_angle_tol(),
            min_margin: default_margin(),
            uniqueness_tolerance: default_uniqueness(),
            linearization_tolerance: default_linearization(),
            lift_conditions: false,
        }
    }
}

/// Location of a configuration value, e.g. `backends[2].paths`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPath {
    table: Table,
    key: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Table {
    Root,
    Named(String),
    Array(String, usize),
}

impl KeyPath {
    pub fn top(key: &str) -> Self {
        KeyPath { table: Table::Root, key: key.into() }
    }

    pub fn in_table(table: &str, key: &str) -> Self {
        KeyPath { table: Table::Named(table.into()), key: key.into() }
    }

    /// An empty `key` refers to the array element itself.
    pub fn in_array(array: &str, index: usize, key: &str) -> Self {
        KeyPath { table: Table::Array(array.into(), index), key: key.into() }
    }

    /// 1-based line of the key in `source`, if it can be found.
    pub fn line_in(&self, source: &str) -> Option<usize> {
        let lines: Vec<&str> = source.lines().collect();
        let is_header = |l: &str| l.trim_start().starts_with('[');
        let section_end = |from: usize| lines[from..].iter().position(|l| is_header(l)).map_or(lines.len(), |k| from + k);
        let (start, end) = match &self.table {
            Table::Root => (0, section_end(0)),
            Table::Named(name) => {
                let header = format!("[{name}]");
                let s = lines.iter().position(|l| l.trim() == header)?;
                (s + 1, section_end(s + 1))
            }
            Table::Array(array, index) => {
                let header = format!("[[{array}]]");
                let s = lines.iter().enumerate().filter(|(_, l)| l.trim() == header).map(|(i, _)| i).nth(*index)?;
                if self.key.is_empty() {
                    return Some(s + 1);
                }
                (s + 1, section_end(s + 1))
            }
        };
        let key_at = |l: &str| {
            l.trim_start().strip_prefix(self.key.as_str()).is_some_and(|rest| rest.trim_start().starts_with('='))
        };
        lines[start..end].iter().position(|l| key_at(l)).map(|k| start + k + 1)
    }
}

impl fmt::Display for KeyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Table::Root => write!(f, "{}", self.key),
            Table::Named(t) => write!(f, "{t}.{}", self.key),
            Table::Array(a, i) if self.key.is_empty() => write!(f, "{a}[{i}]"),
            Table::Array(a, i) => write!(f, "{a}[{i}].{}", self.key),
        }
    }
}

fn invalid(at: KeyPath, message: impl Into<String>) -> CliError {
    CliError::Invalid { at, message: message.into(), line: None }
}

impl RunConfig {
    pub fn from_toml(source: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(source).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate().map_err(|e| e.locate(source))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&source).map_err(|e| e.in_file(path))
    }

    /// Checks everything that does not need a backend to be built.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(KeyPath::top("step"), format!("must be positive, got {}", self.step)));
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0) {
                return Err(invalid(KeyPath::top("tolerance"), format!("must be positive, got {t}")));
            }
        }
        if self.check.grid < 2 {
            return Err(invalid(KeyPath::in_table("check", "grid"), format!("check grid needs at least 2 points, got {}", self.check.grid)));
        }
        if !(self.check.round_trip_tolerance > 0.0) {
            return Err(invalid(KeyPath::in_table("check", "round_trip_tolerance"), "must be positive"));
        }
        if self.check.laws.iter().any(|l| !all_transport_laws().contains(l)) {
            return Err(invalid(KeyPath::in_table("check", "laws"), "only transport laws can be selected"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, b) in self.backends.iter().enumerate() {
            if !names.insert(self.backend_name(i)) {
                return Err(invalid(KeyPath::in_array("backends", i, "name"), format!("duplicate backend name {}", self.backend_name(i))));
            }
            if let Some(t) = b.tolerance {
                if !(t > 0.0) {
                    return Err(invalid(KeyPath::in_array("backends", i, "tolerance"), format!("must be positive, got {t}")));
                }
            }
            if let Some(ps) = &b.paths {
                if let Some(bad) = ps.iter().find(|&&p| p >= self.paths.len()) {
                    return Err(invalid(
                        KeyPath::in_array("backends", i, "paths"),
                        format!("path index {bad} out of range ({} paths)", self.paths.len()),
                    ));
                }
            }
            if let BackendSpec::RandomBijection { sizes, grids, .. } = &b.spec {
                if sizes.contains(&0) {
                    return Err(invalid(KeyPath::in_array("backends", i, "sizes"), "fibre sizes must be positive"));
                }
                if grids.iter().any(|&g| g < 2) {
                    return Err(invalid(KeyPath::in_array("backends", i, "grids"), "grids need at least 2 points"));
                }
            }
            if let BackendSpec::Factorized { anchor, .. } = &b.spec {
                if !(0.0..=1.0).contains(anchor) {
                    return Err(invalid(KeyPath::in_array("backends", i, "anchor"), "anchor is a fraction in [0, 1]"));
                }
            }
        }
        for (i, t) in self.tuples.iter().enumerate() {
            if t.path >= self.paths.len() {
                return Err(invalid(KeyPath::in_array("tuples", i, "path"), format!("path index {} out of range", t.path)));
            }
            if let Some(name) = &t.backend {
                if !(0..self.backends.len()).any(|k| &self.backend_name(k) == name) {
                    return Err(invalid(KeyPath::in_array("tuples", i, "backend"), format!("unknown backend {name}")));
                }
            }
        }
        if self.factorize.anchors.is_empty() || self.factorize.anchors.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid(KeyPath::in_table("factorize", "anchors"), "anchors must be a nonempty list of fractions in [0, 1]"));
        }
        for (i, l) in self.holonomy.iter().enumerate() {
            if l.path >= self.paths.len() {
                return Err(invalid(KeyPath::in_array("holonomy", i, "path"), format!("path index {} out of range", l.path)));
            }
            match (0..self.backends.len()).find(|&k| self.backend_name(k) == l.backend) {
                None => return Err(invalid(KeyPath::in_array("holonomy", i, "backend"), format!("unknown backend {}", l.backend))),
                Some(k) if !matches!(self.backends[k].spec, BackendSpec::Connection { .. }) => {
                    return Err(invalid(KeyPath::in_array("holonomy", i, "backend"), format!("{} is not a connection backend", l.backend)));
                }
                Some(_) => {}
            }
            if l.expect_angle.is_some() && l.expect.is_some() {
                return Err(invalid(KeyPath::in_array("holonomy", i, "expect"), "give expect or expect_angle, not both"));
            }
        }
        Ok(())
    }

    pub fn backend_name(&self, i: usize) -> String {
        let b = &self.backends[i];
        match &b.name {
            Some(n) => n.clone(),
            None if self.backends.iter().filter(|o| o.name.is_none() && o.spec.kind() == b.spec.kind()).count() > 1 => {
                format!("{}-{i}", b.spec.kind())
            }
            None => b.spec.kind().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[[paths]]
kind = "analytic"
formula = "line"
domain = [0.0, 1.0]
origin = [0.0, 0.0]
direction = [1.0, 0.0]

[[backends]]
backend = "identity"
bundle = { base = "euclidean", dim = 2, fiber = { kind = "vector", rank = 2 } }
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.step, DEFAULT_STEP);
        assert_eq!(cfg.check.grid, 11);
        assert_eq!(cfg.check.laws.len(), 5);
        assert_eq!(cfg.backend_name(0), "identity");
    }

    #[test]
    fn empty_grid_is_rejected_with_its_line() {
        let src = format!("{MINIMAL}\n[check]\ngrid = 0\n");
        let err = RunConfig::from_toml(&src).unwrap_err().to_string();
        assert!(err.contains("grid"), "{err}");
        let line = src.lines().position(|l| l.starts_with("grid")).unwrap() + 1;
        assert!(err.contains(&format!("line {line}")), "{err}");
    }

    #[test]
    fn bad_path_index_points_at_the_backend() {
        let src = MINIMAL.replace("backend = \"identity\"", "backend = \"identity\"\npaths = [4]");
        let err = RunConfig::from_toml(&src).unwrap_err().to_string();
        let line = src.lines().position(|l| l.starts_with("paths = [4]")).unwrap() + 1;
        assert!(err.contains("backends[0].paths") && err.contains(&format!("line {line}")), "{err}");
    }

    #[test]
    fn parse_errors_carry_toml_positions() {
        let err = RunConfig::from_toml("seed = \"x\"\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = RunConfig::from_toml("sed = 1\n").unwrap_err().to_string();
        assert!(err.contains("unknown field"), "{err}");
    }
}
