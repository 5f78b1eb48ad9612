//! Subcommand implementations. Each returns the files it wrote; `main` maps
//! errors to exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use innodyn_core::analysis::{check_scaling, compare_to_ode, measure_fixation_time, FixationTime, OdeComparison, ScalingReport};
use innodyn_core::deterministic::{integrate_on_grid, OdeError, OdeSystem, Tolerances};
use innodyn_core::io::{ensemble_csv, events_csv, fmt_g17, trajectory_csv, tss_csv, tst_records, NumericTable, TableError, TstRecord};
use innodyn_core::jump::{simulate_tss, simulate_tst, JumpError, TstConfiguration};
use innodyn_core::model::{validate_assumptions, AssumptionReport, Configuration, Landscape, ModelError, Outcome, ReportStatus, Severity};
use innodyn_core::stochastic::{run_ensemble, simulate, EnsembleError, EventCounts, SimError};
use innodyn_core::NumericPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Scenario, ScenarioError};

pub const OUT_DIR_ENV: &str = "INNODYN_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 model or scaling failure, 2 I/O or parse failure, 3 simulation error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(m) => CliError::Model(m.to_string()),
            ScenarioError::Invalid(_) => CliError::Model(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model(m) => m.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e.source {
            SimError::Model(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Model(m) => m.into(),
            OdeError::InvalidInitial | OdeError::InvalidTime(_) | OdeError::DimensionMismatch { .. } => {
                CliError::Model(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<JumpError> for CliError {
    fn from(e: JumpError) -> Self {
        match e {
            JumpError::Model(m) => m.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

/// Flag overrides shared by the scenario-driven subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<u64>,
    pub horizon: Option<f64>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, scenario: &mut Scenario) {
        if let Some(seed) = self.seed {
            scenario.run.seed = seed;
        }
        if let Some(r) = self.replicates {
            scenario.run.replicates = r;
        }
        if let Some(h) = self.horizon {
            scenario.run.horizon = h;
            scenario.run.jump_horizon = Some(h);
        }
        if let Some(g) = self.grid {
            scenario.run.samples = Some(g);
            scenario.run.times = None;
        }
    }

    /// `--out`, else the environment override, else the scenario, else `out`.
    pub fn out_dir(&self, scenario: &Scenario) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| scenario.run.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub scenario_digest: String,
    pub tool_version: String,
    pub seed: u64,
    pub replicates: u64,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_counts: Option<EventCounts>,
    pub warnings: Vec<String>,
}

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    use std::io::Write;
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", dir.join(name).display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    let target = dir.join(name);
    tmp.persist(&target).map_err(|e| io(e.error))?;
    Ok(target)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub struct Context {
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub margin: f64,
    pub warnings: Vec<String>,
}

impl Context {
    pub fn load(path: &Path, overrides: &Overrides, margin: f64) -> Result<Self, CliError> {
        let mut scenario = Scenario::load(path)?;
        overrides.apply(&mut scenario);
        let out_dir = overrides.out_dir(&scenario);
        Ok(Self {
            scenario,
            out_dir,
            margin,
            warnings: Vec::new(),
        })
    }

    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    /// Assumption and relevant timescale failures as warnings.
    fn collect_model_warnings(&mut self) -> Result<(), CliError> {
        let catalog = self.scenario.catalog()?;
        let report = validate_assumptions(&catalog, &NumericPolicy::default());
        for check in &report.checks {
            for v in &check.violations {
                let msg = format!("{}: {}", check.kind, v.message);
                self.warn(msg);
            }
        }
        let regime = self.scenario.regime()?;
        let scaling = check_scaling(&regime, self.margin).map_err(|e| CliError::Model(e.to_string()))?;
        let migrates = catalog.migration().rows().iter().flatten().any(|&m| m > 0.0);
        let mutates = !catalog.is_mutation_free();
        let mut relevant = Vec::new();
        if migrates {
            relevant.extend(["1 << K*eps", "K*eps << K"]);
        }
        if mutates && migrates {
            relevant.push("ln(1/eps) << 1/(K*sigma)");
        }
        if mutates && !migrates {
            relevant.push("K*sigma << 1/ln(K)");
        }
        for c in scaling.failures() {
            if relevant.contains(&c.name.as_str()) {
                let msg = format!(
                    "timescale separation {} not met: ratio {} > margin {}",
                    c.name,
                    fmt_g17(c.ratio),
                    self.margin
                );
                self.warn(msg);
            }
        }
        Ok(())
    }

    fn summary(&self, command: &str, outputs: &[PathBuf], event_counts: Option<EventCounts>) -> RunSummary {
        RunSummary {
            command: command.into(),
            scenario_digest: self.scenario.digest(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.scenario.run.seed,
            replicates: self.scenario.run.replicates,
            outputs: outputs
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect(),
            event_counts,
            warnings: self.warnings.clone(),
        }
    }

    fn finish(&self, command: &str, mut outputs: Vec<PathBuf>, counts: Option<EventCounts>) -> Result<Vec<PathBuf>, CliError> {
        let path = self.out_dir.join("summary.json");
        outputs.push(path);
        let summary = self.summary(command, &outputs, counts);
        write_atomic(&self.out_dir, "summary.json", &json(&summary))?;
        Ok(outputs)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationOutput {
    pub assumptions: AssumptionReport,
    pub scaling: ScalingReport,
}

/// Returns the report and whether it is a hard failure.
pub fn validate(path: &Path, margin: f64, format: Format) -> Result<(String, bool), CliError> {
    let scenario = Scenario::load(path)?;
    let catalog = scenario.catalog()?;
    let regime = scenario.regime()?;
    scenario.initial(&catalog)?;
    let assumptions = validate_assumptions(&catalog, &NumericPolicy::default());
    let scaling = check_scaling(&regime, margin).map_err(|e| CliError::Model(e.to_string()))?;
    let failed = assumptions.status() == ReportStatus::Fail;
    let out = ValidationOutput { assumptions, scaling };
    let text = match format {
        Format::Json => json(&out),
        _ => render_validation(&out),
    };
    Ok((text, failed))
}

fn render_validation(v: &ValidationOutput) -> String {
    let mut s = String::new();
    let status = match v.assumptions.status() {
        ReportStatus::Pass => "pass",
        ReportStatus::Warn => "pass with warnings",
        ReportStatus::Fail => "FAIL",
    };
    let _ = writeln!(s, "assumptions: {status}");
    for c in &v.assumptions.checks {
        let tag = match c.outcome {
            Outcome::Pass => "pass",
            Outcome::Skipped => "skip",
            Outcome::Fail if c.severity == Severity::Warning => "warn",
            Outcome::Fail => "fail",
        };
        let _ = writeln!(s, "  [{tag}] {}", c.kind);
        for viol in &c.violations {
            let _ = writeln!(s, "         {}", viol.message);
        }
    }
    if let Some(order) = &v.assumptions.fitness_order {
        let _ = writeln!(s, "fitness order: {order:?}");
    }
    let _ = writeln!(
        s,
        "scaling (K = {}, eps = {}, sigma = {}, margin = {}):",
        v.scaling.k,
        fmt_g17(v.scaling.epsilon),
        fmt_g17(v.scaling.sigma),
        v.scaling.margin
    );
    for c in &v.scaling.checks {
        let tag = match (c.pass, c.informational) {
            (true, _) => "pass",
            (false, true) => "info",
            (false, false) => "warn",
        };
        let _ = writeln!(s, "  [{tag}] {:<26} ratio {}", c.name, fmt_g17(c.ratio));
    }
    s
}

pub fn cmd_simulate(ctx: &mut Context, events: bool) -> Result<Vec<PathBuf>, CliError> {
    ctx.collect_model_warnings()?;
    if ctx.scenario.run.replicates > 1 {
        ctx.warn("run.replicates is ignored by simulate; use ensemble");
    }
    let s = &ctx.scenario;
    let catalog = s.catalog()?;
    let regime = s.regime()?;
    let initial = s.initial(&catalog)?;
    let traj = simulate(&catalog, &regime, &initial, s.run.horizon, &s.grid(), s.run.seed, &s.sim_options(events))?;
    let ids = s.ids();
    let mut outputs = vec![write_atomic(
        &ctx.out_dir,
        "trajectory.csv",
        &trajectory_csv(&ids, &traj.sample_times, &traj.states),
    )?];
    if let Some(log) = &traj.events {
        outputs.push(write_atomic(&ctx.out_dir, "events.csv", &events_csv(&ids, log))?);
    }
    outputs.push(write_atomic(&ctx.out_dir, "innovations.csv", &events_csv(&ids, &traj.innovations))?);
    if let Some(t) = traj.absorbed_at {
        ctx.warn(format!("population went extinct at t = {}", fmt_g17(t)));
    }
    ctx.finish("simulate", outputs, Some(traj.events_total))
}

pub fn cmd_ensemble(ctx: &mut Context) -> Result<Vec<PathBuf>, CliError> {
    ctx.collect_model_warnings()?;
    let s = &ctx.scenario;
    let catalog = s.catalog()?;
    let regime = s.regime()?;
    let initial = s.initial(&catalog)?;
    let stats = run_ensemble(
        &catalog,
        &regime,
        &initial,
        s.run.horizon,
        &s.grid(),
        s.run.replicates,
        s.run.seed,
        &s.sim_options(false),
    )?;
    let outputs = vec![write_atomic(&ctx.out_dir, "ensemble.csv", &ensemble_csv(&s.ids(), &stats))?];
    ctx.finish("ensemble", outputs, None)
}

/// The deterministic system a scenario describes: logistic for one trait,
/// two-trait Lotka-Volterra without migration, otherwise the full
/// nearest-neighbor system.
pub fn ode_system(s: &Scenario) -> Result<OdeSystem, CliError> {
    let catalog = s.catalog()?;
    let regime = s.regime()?;
    let migrates = catalog.migration().rows().iter().flatten().any(|&m| m > 0.0);
    Ok(match catalog.len() {
        1 => {
            let t = catalog.trait_params(0);
            OdeSystem::logistic(t.birth, t.death, catalog.competition().get(0, 0))?
        }
        2 if !(migrates && s.run.ode_migration) => OdeSystem::lv2_from_catalog(&catalog, 0, 1)?,
        _ => OdeSystem::nearest_neighbor(&catalog, &regime, s.run.ode_migration),
    })
}

pub fn cmd_ode(ctx: &mut Context) -> Result<Vec<PathBuf>, CliError> {
    if ctx.scenario.run.replicates > 1 {
        ctx.warn("run.replicates is ignored by ode");
    }
    if !ctx.scenario.catalog()?.is_mutation_free() {
        ctx.warn("mutation rates are ignored by ode");
    }
    let s = &ctx.scenario;
    let catalog = s.catalog()?;
    let system = ode_system(s)?;
    let initial = s.initial(&catalog)?;
    let grid = s.grid().resolve(s.run.horizon)?;
    let traj = integrate_on_grid(&system, initial.density(), &grid, &Tolerances::default())?;
    let outputs = vec![write_atomic(&ctx.out_dir, "ode.csv", &trajectory_csv(&s.ids(), &traj.times, &traj.states))?];
    ctx.finish("ode", outputs, None)
}

fn jump_setup(ctx: &mut Context) -> Result<(Landscape, usize, f64), CliError> {
    if ctx.scenario.run.replicates > 1 {
        ctx.warn("run.replicates is ignored by the jump chains");
    }
    let s = &ctx.scenario;
    let catalog = s.catalog()?;
    let start = s.start_trait(&catalog)?;
    let horizon = s.run.jump_horizon.unwrap_or(s.run.horizon);
    let landscape = Landscape::new(catalog, NumericPolicy::default())?;
    Ok((landscape, start, horizon))
}

#[derive(Debug, Serialize)]
struct TssJsonRow<'a> {
    time: f64,
    #[serde(rename = "trait")]
    trait_id: &'a str,
    mass: f64,
}

pub fn cmd_tss(ctx: &mut Context, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let (landscape, start, horizon) = jump_setup(ctx)?;
    let s = &ctx.scenario;
    let path = simulate_tss(&landscape, start, horizon, s.run.seed, s.run.tss_kernel)?;
    let ids = s.ids();
    let file = match format {
        Format::Json => {
            let rows: Vec<TssJsonRow> = path
                .times
                .iter()
                .zip(&path.states)
                .map(|(&time, &(x, mass))| TssJsonRow {
                    time,
                    trait_id: &ids[x],
                    mass,
                })
                .collect();
            write_atomic(&ctx.out_dir, "tss.json", &json(&rows))?
        }
        _ => write_atomic(&ctx.out_dir, "tss.csv", &tss_csv(&ids, &path))?,
    };
    if path.absorbed {
        let last = ids[path.states.last().expect("nonempty").0].clone();
        ctx.warn(format!("no further substitution possible from {last}"));
    }
    ctx.finish("tss", vec![file], None)
}

pub fn cmd_tst(ctx: &mut Context, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let (landscape, start, horizon) = jump_setup(ctx)?;
    let s = &ctx.scenario;
    let initial = TstConfiguration::ancestor(&landscape, start)?;
    let path = simulate_tst(&initial, horizon, &landscape, s.run.seed)?;
    let ids = s.ids();
    let file = match format {
        Format::Csv => {
            let n = ids.len();
            let states: Vec<Vec<f64>> = path
                .configurations
                .iter()
                .map(|c| c.to_configuration(n).into_inner())
                .collect();
            write_atomic(&ctx.out_dir, "tst.csv", &trajectory_csv(&ids, &path.times, &states))?
        }
        _ => write_atomic(&ctx.out_dir, "tst.json", &json(&tst_records(&ids, &path)))?,
    };
    if path.exhausted {
        ctx.warn(format!(
            "mutant policy exhausted after generation {}",
            path.configurations.last().expect("nonempty").generation
        ));
    }
    ctx.finish("tst", vec![file], None)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonOutput {
    pub traits: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode_gap: Option<OdeComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Present when a target was given; `null` when never reached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixation: Option<Option<FixationRecord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixationRecord {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_over_log_inverse_epsilon: Option<f64>,
}

pub struct CompareArgs<'a> {
    pub stochastic: &'a Path,
    pub reference: Option<&'a Path>,
    pub target: Option<Vec<f64>>,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Gap to a deterministic CSV, or fixation time to a target taken from a
/// TST JSON path (its last configuration) or given explicitly.
pub fn cmd_compare(args: &CompareArgs) -> Result<(String, Vec<PathBuf>), CliError> {
    let table = NumericTable::parse(&read(args.stochastic)?)?;
    let (ids, times, states) = table.densities()?;
    let mut out = ComparisonOutput {
        traits: ids.clone(),
        ode_gap: None,
        target: args.target.clone(),
        delta: None,
        fixation: None,
    };
    if let Some(reference) = args.reference {
        let text = read(reference)?;
        if reference.extension().is_some_and(|e| e == "json") {
            let records: Vec<TstRecord> = serde_json::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", reference.display())))?;
            let last = records
                .last()
                .ok_or_else(|| CliError::Input(format!("{}: empty path", reference.display())))?;
            let mut target = vec![0.0; ids.len()];
            for (id, m) in last.traits.iter().zip(&last.masses) {
                let j = ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| CliError::Input(format!("trait {id:?} missing from {}", args.stochastic.display())))?;
                target[j] = *m;
            }
            out.target = Some(target);
        } else {
            let ode = NumericTable::parse(&text)?;
            let (ode_ids, ode_times, ode_states) = ode.densities()?;
            if ode_ids != ids {
                return Err(CliError::Input(format!(
                    "trait columns differ: {ids:?} vs {ode_ids:?}"
                )));
            }
            out.ode_gap =
                Some(compare_to_ode(&times, &states, &ode_times, &ode_states).map_err(|e| CliError::Input(e.to_string()))?);
        }
    }
    if let Some(target) = out.target.clone() {
        if target.len() != ids.len() {
            return Err(CliError::Input(format!(
                "target has {} entries for {} traits",
                target.len(),
                ids.len()
            )));
        }
        let target = Configuration::new(target).map_err(|e| CliError::Input(e.to_string()))?;
        let eps = args.epsilon.unwrap_or(f64::NAN);
        let fix = measure_fixation_time(&times, &states, &target, args.delta, eps)
            .map_err(|e| CliError::Input(e.to_string()))?;
        out.delta = Some(args.delta);
        out.fixation = Some(fix.map(|FixationTime { raw, scaled }| FixationRecord {
            time: raw,
            time_over_log_inverse_epsilon: args.epsilon.map(|_| scaled),
        }));
    }
    if out.ode_gap.is_none() && out.target.is_none() {
        return Err(CliError::Input("compare needs a reference file or --target".into()));
    }
    let text = json(&out);
    let mut written = Vec::new();
    if let Some(dir) = &args.out {
        written.push(write_atomic(dir, "comparison.json", &text)?);
    }
    Ok((text, written))
}
