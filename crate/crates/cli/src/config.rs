//! The JSON problem description shared by every subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hjweave::coupling::{certify, short_horizon, CouplingMatrix, Horizon, HorizonOptions};
use hjweave::lagrangian::{set_constants, LagrangianRef, Potential, TonelliLagrangian, Vector};
use hjweave::lax_oleinik::{BolzaOptions, Datum, Grid, InitialData};
use hjweave::optimize::LbfgsOptions;
use hjweave::oracle::{Boundary, SchemeConfig};
use hjweave::variational::VariationalOptions;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// The only schema this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Schema(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

/// Which sign conditions the coupling matrix must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Off-diagonal entries must be non-positive.
    #[default]
    Cooperative,
    /// Any matrix; the horizon is capped where the weighted Lagrangians stay convex.
    ShortTime,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Zero,
    Harmonic {
        stiffness: f64,
    },
    Cosine {
        amplitude: f64,
        wavenumber: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagrangianSpec {
    /// `½|v|²`.
    Kinetic,
    /// `½⟨v, M v⟩ + V(x)`; `M` defaults to the identity.
    Quadratic {
        #[serde(default)]
        mass: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        potential: PotentialSpec,
    },
    /// `½|v|² + ε|v|⁴ + V(x)`.
    Quartic {
        epsilon: f64,
        #[serde(default)]
        potential: PotentialSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// L-BFGS stopping threshold on `‖∇‖∞`.
    pub gradient: f64,
    pub max_iterations: usize,
    /// Stalled runs with a gradient below `stall_factor · gradient` are accepted.
    pub stall_factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let l = LbfgsOptions::default();
        let v = VariationalOptions::default();
        Self { gradient: l.gradient_tolerance, max_iterations: l.max_iterations, stall_factor: v.stall_factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpec {
    pub scan_points: usize,
    pub max_candidates: usize,
    pub dilation: f64,
    pub cross_check_nodes: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        let b = BolzaOptions::default();
        Self {
            scan_points: b.scan_points,
            max_candidates: b.max_candidates,
            dilation: b.dilation,
            cross_check_nodes: b.cross_check_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub cfl: f64,
    pub boundary: Boundary,
    pub alpha: Option<Vec<f64>>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { cfl: 0.4, boundary: Boundary::Copy, alpha: None }
    }
}

/// Sign of the evolution computed by `evolve` and `oracle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpec {
    pub kind: Kind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizeSpec {
    /// 1-based equation index.
    pub equation: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Initial costs `u(0)`; zero when absent.
    #[serde(default)]
    pub data: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSpec {
    /// The full momentum and cost system.
    #[default]
    Lie,
    Herglotz,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicsSpec {
    /// 1-based equation index.
    pub equation: usize,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub flow: FlowSpec,
    /// Initial costs; zero when absent.
    #[serde(default)]
    pub costs: Option<Vec<f64>>,
}

fn default_steps() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    /// Defaults to `evolve.csv` in the output directory.
    pub left: Option<PathBuf>,
    /// Defaults to `oracle.csv` in the output directory.
    pub right: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortTimeSpec {
    /// Overrides both set constants when given.
    pub constant: Option<f64>,
    pub kappa: f64,
}

impl Default for ShortTimeSpec {
    fn default() -> Self {
        Self { constant: None, kappa: 0.1 }
    }
}

fn default_segments() -> usize {
    VariationalOptions::default().segments
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub mode: Mode,
    /// Rows of the coupling matrix `A`.
    pub coupling: Vec<Vec<f64>>,
    /// State dimension `d`.
    pub dimension: usize,
    pub lagrangians: Vec<LagrangianSpec>,
    #[serde(default)]
    pub initial_data: Vec<Datum>,
    #[serde(default)]
    pub grid: Option<Grid>,
    /// Time `t` at which values are computed.
    pub horizon: f64,
    /// Curve segments `N`.
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub evolve: EvolveSpec,
    #[serde(default)]
    pub minimize: Option<MinimizeSpec>,
    #[serde(default)]
    pub characteristics: Option<CharacteristicsSpec>,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub short_time: ShortTimeSpec,
    /// Adjustments made while validating, such as a clamped horizon.
    #[serde(skip)]
    pub warnings: Vec<String>,
    /// Horizon requested before any clamping.
    #[serde(skip)]
    pub requested_horizon: f64,
    /// `t̄` when the short-time rule was evaluated.
    #[serde(skip)]
    pub short_horizon: Option<Horizon>,
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ProblemConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse_config_str(&text)
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<ProblemConfig, ConfigError> {
    let mut config: ProblemConfig = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn potential(spec: &PotentialSpec) -> Potential {
    match spec {
        PotentialSpec::Zero => Potential::Zero,
        PotentialSpec::Harmonic { stiffness } => Potential::Harmonic { stiffness: *stiffness },
        PotentialSpec::Cosine { amplitude, wavenumber } => {
            Potential::Cosine { amplitude: *amplitude, wavenumber: Vector::from_column_slice(wavenumber) }
        }
    }
}

fn build_lagrangian(spec: &LagrangianSpec, dim: usize) -> hjweave::Result<TonelliLagrangian> {
    match spec {
        LagrangianSpec::Kinetic => Ok(TonelliLagrangian::kinetic(dim)),
        LagrangianSpec::Quadratic { mass, potential: p } => {
            let mass = match mass {
                None => DMatrix::identity(dim, dim),
                Some(rows) => DMatrix::from_row_iterator(rows.len(), dim, rows.iter().flatten().copied()),
            };
            TonelliLagrangian::quadratic(mass, potential(p))
        }
        LagrangianSpec::Quartic { epsilon, potential: p } => TonelliLagrangian::quartic(dim, *epsilon, potential(p)),
    }
}

impl ProblemConfig {
    /// Number of equations `m`.
    pub fn equations(&self) -> usize {
        self.coupling.len()
    }

    pub fn coupling_matrix(&self) -> hjweave::Result<CouplingMatrix> {
        CouplingMatrix::from_rows(&self.coupling)
    }

    pub fn lagrangian_set(&self) -> hjweave::Result<Vec<LagrangianRef>> {
        self.lagrangians
            .iter()
            .map(|s| build_lagrangian(s, self.dimension).map(|l| Arc::new(l) as LagrangianRef))
            .collect()
    }

    pub fn initial_data(&self) -> hjweave::Result<InitialData> {
        InitialData::new(self.initial_data.clone(), self.dimension)
    }

    pub fn variational_options(&self) -> VariationalOptions {
        VariationalOptions {
            segments: self.segments,
            lbfgs: LbfgsOptions {
                gradient_tolerance: self.tolerances.gradient,
                max_iterations: self.tolerances.max_iterations,
                ..LbfgsOptions::default()
            },
            seed: self.seed,
            stall_factor: self.tolerances.stall_factor,
            ..VariationalOptions::default()
        }
    }

    pub fn bolza_options(&self) -> BolzaOptions {
        BolzaOptions {
            variational: self.variational_options(),
            scan_points: self.search.scan_points,
            max_candidates: self.search.max_candidates,
            dilation: self.search.dilation,
            cross_check_nodes: self.search.cross_check_nodes,
        }
    }

    pub fn scheme_config(&self) -> Option<SchemeConfig> {
        let grid = self.grid.clone()?;
        Some(SchemeConfig {
            cfl: self.oracle.cfl,
            alpha: self.oracle.alpha.clone(),
            boundary: self.oracle.boundary,
            ..SchemeConfig::new(grid, self.horizon)
        })
    }

    /// Radius of the state ball the short-time certificates cover.
    fn state_radius(&self) -> f64 {
        let mut r: f64 = 1.0;
        if let Some(g) = &self.grid {
            let (lo, hi) = g.dilated_box(self.search.dilation);
            r = r.max(lo.amax()).max(hi.amax()).max(lo.norm()).max(hi.norm());
        }
        if let Some(m) = &self.minimize {
            r = r.max(Vector::from_column_slice(&m.start).norm()).max(Vector::from_column_slice(&m.end).norm());
        }
        if let Some(c) = &self.characteristics {
            r = r.max(Vector::from_column_slice(&c.position).norm());
        }
        r
    }

    /// Growth and Hessian constants of the Lagrangian set, from the explicit
    /// override or the analytic certificates on the state ball in use.
    pub fn short_time_constants(&self) -> Option<(f64, f64)> {
        if let Some(c) = self.short_time.constant {
            return Some((c, c));
        }
        let set = self.lagrangian_set().ok()?;
        let radius = self.state_radius();
        let certs: Vec<_> = set.iter().map(|l| l.certificate(radius)).collect();
        set_constants(&certs).map(|c| (c.growth, c.hessian))
    }

    /// `t̄` for the configured coupling, when the constants are available.
    pub fn horizon_bound(&self) -> Option<hjweave::Result<Horizon>> {
        let (growth, hessian) = self.short_time_constants()?;
        let a = match self.coupling_matrix() {
            Ok(a) => a,
            Err(e) => return Some(Err(e)),
        };
        Some(short_horizon(&a, growth, hessian, self.short_time.kappa, HorizonOptions::default()))
    }

    /// Checks every cross-field constraint and applies the short-time clamp.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let mut v: Vec<String> = Vec::new();
        let m = self.coupling.len();
        let d = self.dimension;

        if self.schema_version != SCHEMA_VERSION {
            v.push(format!("schema_version is {}, this build reads {SCHEMA_VERSION}", self.schema_version));
        }
        if m == 0 {
            v.push("coupling must have at least one row".into());
        }
        for (r, row) in self.coupling.iter().enumerate() {
            if row.len() != m {
                v.push(format!("coupling row {} has {} entries but coupling has {m} rows", r + 1, row.len()));
            }
        }
        if d == 0 {
            v.push("dimension must be at least 1".into());
        }
        if self.lagrangians.len() != m {
            v.push(format!("lagrangians has {} entries but coupling has {m} rows", self.lagrangians.len()));
        }
        if !self.initial_data.is_empty() && self.initial_data.len() != m {
            v.push(format!("initial_data has {} entries but coupling has {m} rows", self.initial_data.len()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(format!("horizon must be positive and finite, got {}", self.horizon));
        }
        if self.segments < 2 {
            v.push(format!("segments must be at least 2, got {}", self.segments));
        }
        if let Some(g) = &self.grid {
            if g.dim() != d || g.max.len() != d || g.points.len() != d {
                v.push(format!(
                    "grid has {} axes (min), {} (max), {} (points) but dimension is {d}",
                    g.min.len(),
                    g.max.len(),
                    g.points.len()
                ));
            } else if let Err(e) = g.validate() {
                v.push(format!("grid: {e}"));
            }
        }
        if !(self.tolerances.gradient > 0.0) || self.tolerances.max_iterations == 0 {
            v.push("tolerances need a positive gradient threshold and iteration cap".into());
        }
        if self.search.scan_points < 3 || self.search.max_candidates == 0 || !(self.search.dilation >= 1.0) {
            v.push("search needs scan_points ≥ 3, max_candidates ≥ 1 and dilation ≥ 1".into());
        }
        if !(self.oracle.cfl > 0.0 && self.oracle.cfl <= 1.0) {
            v.push(format!("oracle.cfl must lie in (0, 1], got {}", self.oracle.cfl));
        }
        if let Some(alpha) = &self.oracle.alpha {
            if alpha.len() != m {
                v.push(format!("oracle.alpha has {} entries but coupling has {m} rows", alpha.len()));
            }
        }
        for (k, spec) in self.lagrangians.iter().enumerate() {
            let pot = match spec {
                LagrangianSpec::Kinetic => None,
                LagrangianSpec::Quadratic { mass, potential } => {
                    if let Some(rows) = mass {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            v.push(format!(
                                "lagrangians[{k}].mass is {}x{} but dimension is {d}",
                                rows.len(),
                                rows.first().map_or(0, Vec::len)
                            ));
                            continue;
                        }
                    }
                    Some(potential)
                }
                LagrangianSpec::Quartic { potential, .. } => Some(potential),
            };
            if let Some(PotentialSpec::Cosine { wavenumber, .. }) = pot {
                if wavenumber.len() != d {
                    v.push(format!(
                        "lagrangians[{k}].potential.wavenumber has {} components but dimension is {d}",
                        wavenumber.len()
                    ));
                    continue;
                }
            }
            if d > 0 {
                if let Err(e) = build_lagrangian(spec, d) {
                    v.push(format!("lagrangians[{k}]: {e}"));
                }
            }
        }
        if !self.initial_data.is_empty() && d > 0 {
            if let Err(e) = self.initial_data() {
                v.push(format!("initial_data: {e}"));
            }
        }
        if let Some(s) = &self.minimize {
            check_equation(&mut v, "minimize", s.equation, m);
            check_len(&mut v, "minimize.start", s.start.len(), d);
            check_len(&mut v, "minimize.end", s.end.len(), d);
            if let Some(data) = &s.data {
                if data.len() != m {
                    v.push(format!("minimize.data has {} entries but coupling has {m} rows", data.len()));
                }
            }
        }
        if let Some(c) = &self.characteristics {
            check_equation(&mut v, "characteristics", c.equation, m);
            check_len(&mut v, "characteristics.position", c.position.len(), d);
            check_len(&mut v, "characteristics.velocity", c.velocity.len(), d);
            if c.steps == 0 {
                v.push("characteristics.steps must be positive".into());
            }
            if let Some(costs) = &c.costs {
                if costs.len() != m {
                    v.push(format!("characteristics.costs has {} entries but coupling has {m} rows", costs.len()));
                }
            }
        }
        if !(self.short_time.kappa > 0.0 && self.short_time.kappa < 1.0) {
            v.push(format!("short_time.kappa must lie in (0, 1), got {}", self.short_time.kappa));
        }
        if !v.is_empty() {
            return Err(ConfigError::Invalid(v));
        }

        let a = self.coupling_matrix().map_err(|e| ConfigError::Invalid(vec![format!("coupling: {e}")]))?;
        self.requested_horizon = self.horizon;
        match self.mode {
            Mode::Cooperative => {
                let report = certify(&a);
                if !report.cooperative {
                    let list: Vec<String> = report
                        .violations
                        .iter()
                        .map(|&(i, j)| format!("a[{}][{}] = {}", i + 1, j + 1, a.get(i, j)))
                        .collect();
                    return Err(ConfigError::Invalid(vec![format!(
                        "mode \"cooperative\" requires condition (C1), non-positive off-diagonal coupling; \
                         positive entries: {}",
                        list.join(", ")
                    )]));
                }
                if !report.irreducible {
                    self.warnings.push(format!(
                        "coupling is reducible; the system splits into {} blocks",
                        report.components.len()
                    ));
                }
            }
            Mode::ShortTime => {
                let (growth, hessian) = self.short_time_constants().ok_or_else(|| {
                    ConfigError::Invalid(vec![
                        "mode \"short-time\" needs growth certificates for every Lagrangian \
                         or an explicit short_time.constant"
                            .into(),
                    ])
                })?;
                let bar = short_horizon(&a, growth, hessian, self.short_time.kappa, HorizonOptions::default())
                    .map_err(|e| ConfigError::Invalid(vec![format!("short_time: {e}")]))?;
                self.short_horizon = Some(bar);
                if self.horizon > bar.value() {
                    self.warnings.push(format!(
                        "horizon {} exceeds the short-time bound {}; clamped",
                        self.horizon,
                        bar.value()
                    ));
                    self.horizon = bar.value();
                }
            }
        }
        Ok(())
    }
}

fn check_equation(v: &mut Vec<String>, what: &str, equation: usize, m: usize) {
    if equation == 0 || equation > m {
        v.push(format!("{what}.equation is {equation} but coupling has {m} rows (indices start at 1)"));
    }
}

fn check_len(v: &mut Vec<String>, what: &str, len: usize, d: usize) {
    if len != d {
        v.push(format!("{what} has {len} components but dimension is {d}"));
    }
}
