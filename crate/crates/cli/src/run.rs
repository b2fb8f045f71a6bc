//! Subcommand execution and artifact output.

use std::path::{Path, PathBuf};

use hjweave::characteristics::{
    bundle_from_flow, dual_arc_check, euler_lagrange_flow, lie_flow, DualArcResiduals, FlowKind, LieInitial,
};
use hjweave::coupling::{certify, Horizon, Propagator};
use hjweave::csv::join_row;
use hjweave::lagrangian::Vector;
use hjweave::lax_oleinik::{evolve_field, evolve_field_positive, ValueField};
use hjweave::oracle::{compare, solve_system, solve_system_positive, Comparison, SchemeReport};
use hjweave::variational::{minimize_fundamental, weighted_el_residual};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{ConfigError, FlowSpec, Kind, ProblemConfig};

/// The artifact-producing subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Cooperativeness, irreducibility and the short-time horizon, as JSON.
    Certify,
    /// Fundamental solution between two points, as a CSV trajectory.
    Minimize,
    /// Characteristic bundle from an initial position and velocity, as CSV.
    Characteristics,
    /// Variational value field on the grid, as CSV.
    Evolve,
    /// Finite-difference value field on the grid, as CSV.
    Oracle,
    /// Norms of the difference between two field CSVs, as JSON.
    Compare,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numeric(#[from] hjweave::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Process exit status: 2 configuration, 3 convergence, 4 stability,
    /// 5 search box, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use hjweave::Error as E;
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric(e) => match e {
                E::InvalidInput(_) | E::Domain(_) | E::InvalidMatrix(_) | E::Precondition(_) => 2,
                E::InvalidInitialization(_) => 2,
                E::Convergence { .. } | E::Accuracy(_) | E::Singular(_) => 3,
                E::Stability(_) => 4,
                E::SearchBoxExhausted(_) => 5,
                E::Range(_) | E::InvalidComparison(_) => 1,
            },
            RunError::Io { .. } => 1,
        }
    }
}

fn missing(section: &str, command: &str) -> RunError {
    RunError::Config(ConfigError::Invalid(vec![format!("`{command}` needs a `{section}` section")]))
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, RunError> {
    std::fs::write(&path, contents).map_err(|source| RunError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf, RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write(path, &text)
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.into(), source })
}

/// Runs one subcommand and returns the files it wrote, in order.
pub fn run(command: Command, config: &ProblemConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(out).map_err(|source| RunError::Io { path: out.into(), source })?;
    let mut files = Vec::new();
    if !config.warnings.is_empty() {
        files.push(write_json(out.join("warnings.json"), &config.warnings)?);
    }
    match command {
        Command::Certify => files.push(certify_report(config, out)?),
        Command::Minimize => files.extend(minimize(config, out)?),
        Command::Characteristics => files.extend(characteristics(config, out)?),
        Command::Evolve => files.extend(evolve(config, out)?),
        Command::Oracle => files.extend(oracle(config, out)?),
        Command::Compare => files.push(compare_fields(config, out)?),
    }
    Ok(files)
}

#[derive(Serialize)]
struct CertifyReport {
    cooperative: bool,
    irreducible: bool,
    /// Positive off-diagonal entries, 1-based.
    violations: Vec<(usize, usize)>,
    /// Strongly connected blocks, 1-based.
    components: Vec<Vec<usize>>,
    row_sums: Vec<f64>,
    /// `t̄`, absent when the growth constants are unavailable.
    short_horizon: Option<Horizon>,
    constants: Option<(f64, f64)>,
    kappa: f64,
    requested_horizon: f64,
    horizon: f64,
}

fn certify_report(config: &ProblemConfig, out: &Path) -> Result<PathBuf, RunError> {
    let a = config.coupling_matrix()?;
    let c = certify(&a);
    let short_horizon = match config.short_horizon {
        Some(h) => Some(h),
        None => config.horizon_bound().transpose()?,
    };
    let report = CertifyReport {
        cooperative: c.cooperative,
        irreducible: c.irreducible,
        violations: c.violations.iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
        components: c.components.iter().map(|b| b.iter().map(|k| k + 1).collect()).collect(),
        row_sums: a.row_sums(),
        short_horizon,
        constants: config.short_time_constants(),
        kappa: config.short_time.kappa,
        requested_horizon: config.requested_horizon,
        horizon: config.horizon,
    };
    write_json(out.join("certify.json"), &report)
}

#[derive(Serialize)]
struct MinimizeSummary {
    equation: usize,
    horizon: f64,
    value: f64,
    iterations: usize,
    gradient_norm: f64,
    restarts: usize,
    multiple_minimizers: bool,
    el_residual: f64,
}

fn minimize(config: &ProblemConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let spec = config.minimize.as_ref().ok_or_else(|| missing("minimize", "minimize"))?;
    let (a, set) = (config.coupling_matrix()?, config.lagrangian_set()?);
    let m = config.equations();
    let i = spec.equation - 1;
    let data = DVector::from_vec(spec.data.clone().unwrap_or_else(|| vec![0.0; m]));
    let (x, y) = (Vector::from_column_slice(&spec.start), Vector::from_column_slice(&spec.end));
    let t = config.horizon;
    let sol = minimize_fundamental(i, t, &x, &y, &data, &a, &set, &config.variational_options())?;

    let d = config.dimension;
    let mut text: Vec<String> = vec!["s".into()];
    text.extend((1..=d).map(|k| format!("x{k}")));
    text.extend((1..=m).map(|j| format!("u{j}")));
    text.push("action".into());
    let mut csv = text.join(",");
    csv.push('\n');
    for (k, node) in sol.minimizer.nodes().iter().enumerate() {
        let u = sol.costs.at(k);
        let mut row = vec![sol.minimizer.time(k)];
        row.extend(node.iter());
        row.extend(u.iter());
        row.push(u[i] - data[i]);
        csv.push_str(&join_row(row));
        csv.push('\n');
    }
    let summary = MinimizeSummary {
        equation: spec.equation,
        horizon: t,
        value: sol.value,
        iterations: sol.iterations,
        gradient_norm: sol.gradient_norm,
        restarts: sol.restarts,
        multiple_minimizers: sol.multiple_minimizers,
        el_residual: weighted_el_residual(i, &sol.minimizer, &a, &set)?,
    };
    Ok(vec![write(out.join("minimize.csv"), &csv)?, write_json(out.join("minimize.json"), &summary)?])
}

#[derive(Serialize)]
struct CharacteristicsSummary {
    equation: usize,
    flow: FlowSpec,
    horizon: f64,
    velocity_defect: f64,
    momentum_residual: Option<f64>,
    hamiltonian_residual: Option<f64>,
    /// Why the dual-arc residuals are absent.
    dual_arc_skipped: Option<String>,
}

fn characteristics(config: &ProblemConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let spec = config.characteristics.as_ref().ok_or_else(|| missing("characteristics", "characteristics"))?;
    let (a, set) = (config.coupling_matrix()?, config.lagrangian_set()?);
    let i = spec.equation - 1;
    let t = config.horizon;
    let (x, v) = (Vector::from_column_slice(&spec.position), Vector::from_column_slice(&spec.velocity));
    let costs = DVector::from_vec(spec.costs.clone().unwrap_or_else(|| vec![0.0; config.equations()]));
    let bundle = match spec.flow {
        FlowSpec::Lie => {
            let init = LieInitial::from_velocity(i, &x, &v, costs, &set);
            lie_flow(&[init], t, &a, &set, spec.steps)?
        }
        FlowSpec::Herglotz | FlowSpec::Weighted => {
            let kind = if spec.flow == FlowSpec::Herglotz { FlowKind::Herglotz } else { FlowKind::Weighted };
            let flow = euler_lagrange_flow(kind, i, &x, &v, t, &a, &set, spec.steps)?;
            bundle_from_flow(i, &flow, &costs, &a, &set)?
        }
    };
    // The identities need non-negative weights, which a non-cooperative
    // coupling does not guarantee.
    let (dual, skipped): (Option<DualArcResiduals>, Option<String>) =
        match dual_arc_check(&bundle, &Propagator::new(&a, t)?, &set) {
            Ok(r) => (Some(r), None),
            Err(e @ (hjweave::Error::Precondition(_) | hjweave::Error::Convergence { .. })) => {
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
    let summary = CharacteristicsSummary {
        equation: spec.equation,
        flow: spec.flow,
        horizon: t,
        velocity_defect: bundle.velocity_defect,
        momentum_residual: dual.map(|r| r.momentum),
        hamiltonian_residual: dual.map(|r| r.hamiltonian),
        dual_arc_skipped: skipped,
    };
    Ok(vec![
        write(out.join("characteristics.csv"), &bundle.to_csv())?,
        write_json(out.join("characteristics.json"), &summary)?,
    ])
}

fn require_grid(config: &ProblemConfig, command: &str) -> Result<(), RunError> {
    if config.grid.is_none() {
        return Err(missing("grid", command));
    }
    if config.initial_data.is_empty() {
        return Err(missing("initial_data", command));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvolveSummary<'a> {
    kind: Kind,
    horizon: f64,
    nodes: usize,
    cross_check_defect: Option<f64>,
    cross_checked_nodes: usize,
    /// `(equation, node)`, 1-based equation and 0-based node.
    multiple_minimizers: Vec<(usize, usize)>,
    notes: &'a [String],
}

fn evolve(config: &ProblemConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    require_grid(config, "evolve")?;
    let grid = config.grid.as_ref().expect("checked above");
    let (a, set, phi) = (config.coupling_matrix()?, config.lagrangian_set()?, config.initial_data()?);
    let opts = config.bolza_options();
    let field = match config.evolve.kind {
        Kind::Negative => evolve_field(config.horizon, &phi, &a, &set, grid, &opts)?,
        Kind::Positive => evolve_field_positive(config.horizon, &phi, &a, &set, grid, &opts)?,
    };
    let meta = &field.metadata;
    let summary = EvolveSummary {
        kind: config.evolve.kind,
        horizon: config.horizon,
        nodes: grid.len(),
        cross_check_defect: meta.cross_check_defect,
        cross_checked_nodes: meta.cross_checked_nodes,
        multiple_minimizers: meta.multiple_minimizers.iter().map(|&(i, n)| (i + 1, n)).collect(),
        notes: &meta.notes,
    };
    Ok(vec![write(out.join("evolve.csv"), &field.to_csv())?, write_json(out.join("evolve.json"), &summary)?])
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    kind: Kind,
    #[serde(flatten)]
    report: &'a SchemeReport,
}

fn oracle(config: &ProblemConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    require_grid(config, "oracle")?;
    let scheme = config.scheme_config().expect("grid checked above");
    let (a, set, phi) = (config.coupling_matrix()?, config.lagrangian_set()?, config.initial_data()?);
    let (field, report) = match config.evolve.kind {
        Kind::Negative => solve_system(&set, &a, &phi, &scheme)?,
        Kind::Positive => solve_system_positive(&set, &a, &phi, &scheme)?,
    };
    let summary = OracleSummary { kind: config.evolve.kind, report: &report };
    Ok(vec![write(out.join("oracle.csv"), &field.to_csv())?, write_json(out.join("oracle.json"), &summary)?])
}

#[derive(Serialize)]
struct CompareReport {
    left: PathBuf,
    right: PathBuf,
    #[serde(flatten)]
    norms: Comparison,
}

fn compare_fields(config: &ProblemConfig, out: &Path) -> Result<PathBuf, RunError> {
    let left = config.compare.left.clone().unwrap_or_else(|| out.join("evolve.csv"));
    let right = config.compare.right.clone().unwrap_or_else(|| out.join("oracle.csv"));
    let a = ValueField::from_csv(&read(&left)?)?;
    let b = ValueField::from_csv(&read(&right)?)?;
    let norms = compare(&a, &b)?;
    write_json(out.join("compare.json"), &CompareReport { left, right, norms })
}
