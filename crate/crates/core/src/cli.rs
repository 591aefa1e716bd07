//! Experiment runner: TOML configuration, seeded sweeps, CSV tables and a
//! JSON summary per run.
//!
//! Every run writes `table.csv` and `summary.json` into its output
//! directory. Exit codes: 0 on success, 1 when an assertion fails (the
//! failing assertions are named on stderr), 2 for configuration errors.
//!
//! The configuration grammar is TOML with a fixed set of sections; unknown
//! keys are rejected. All sections are optional:
//!
//! ```toml
//! experiment = "internal"      # internal | calderon | phaselift | certify | selftest
//! action = "recover"           # see `Action`
//! seed = 7
//!
//! [grid]                       # 1-D grid of the internal problem
//! n = 41
//!
//! [potential]                  # constant | step | values
//! kind = "step"
//! base = 1.0
//! q0 = 0.5
//! a = 0.4
//! b = 0.6
//!
//! [boundary]
//! f_a = 1.0
//! f_b = 1.0
//!
//! [noise]
//! deltas = [1e-2, 1e-3]        # 0 selects the exact solve
//! c = 1.0
//! seeds = [1, 2, 3]            # defaults to [seed]
//!
//! [sweep]
//! q0 = [-0.3, 0.0, 0.3, 0.5]
//!
//! [calderon]
//! n = 17
//! per_side = 2
//! count = 4
//! hat_values = [1.0, 1.5, 2.0, 1.2]
//! counts = [1, 2, 3, 4]
//! baseline_iters = 20
//! baseline_offset = 0.5
//!
//! [phaselift]
//! n = 5
//! m = 20
//!
//! [certify]
//! target = "internal"          # internal | calderon | phaselift
//! margin = 1e-3
//!
//! [solver]                     # fields of `SolverOptions`
//! max_iter = 50000
//!
//! [output]
//! dir = "out/internal"
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::acceptance;
use crate::calderon::{self, CalderonMode, CalderonProblem, CalderonSystem};
use crate::certify;
use crate::error::{Error, Result};
use crate::hilbert::Grid1D;
use crate::internal::{self, InternalProblem, InternalSpaces, RecoveryMode};
use crate::lowrank::DEFAULT_MARGIN;
use crate::pde1d::Potential1D;
use crate::quadratic;
use crate::solvers::{PsdMode, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Internal,
    Calderon,
    Phaselift,
    Certify,
    Selftest,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentKind::Internal => "internal",
            ExperimentKind::Calderon => "calderon",
            ExperimentKind::Phaselift => "phaselift",
            ExperimentKind::Certify => "certify",
            ExperimentKind::Selftest => "selftest",
        };
        f.write_str(s)
    }
}

/// Sub-action of an experiment. `internal` takes certify, recover or
/// sweep; `calderon` takes forward, recover, certify or baseline; the other
/// kinds ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Certify,
    Recover,
    Sweep,
    Forward,
    Baseline,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Certify => "certify",
            Action::Recover => "recover",
            Action::Sweep => "sweep",
            Action::Forward => "forward",
            Action::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub a: f64,
    pub b: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n: 41, a: 0.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Constant { value: f64 },
    Step { base: f64, q0: f64, a: f64, b: f64 },
    /// Nodal values on the grid.
    Values { values: Vec<f64> },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Step { base: 1.0, q0: 0.5, a: 0.4, b: 0.6 }
    }
}

impl PotentialSpec {
    pub fn build(&self, grid: &Grid1D) -> Result<Potential1D> {
        match self {
            PotentialSpec::Constant { value } => Potential1D::constant(grid, *value),
            PotentialSpec::Step { base, q0, a, b } => Potential1D::step(grid, *base, *q0, *a, *b),
            PotentialSpec::Values { values } => Potential1D::new(grid, DVector::from_column_slice(values)),
        }
    }

    /// The step height, when there is one.
    pub fn q0(&self) -> Option<f64> {
        match self {
            PotentialSpec::Step { q0, .. } => Some(*q0),
            _ => None,
        }
    }

    fn with_q0(&self, q0: f64) -> Result<PotentialSpec> {
        match self {
            PotentialSpec::Step { base, a, b, .. } => Ok(PotentialSpec::Step { base: *base, q0, a: *a, b: *b }),
            _ => Err(Error::Config("a q0 sweep needs a step potential".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub f_a: f64,
    pub f_b: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { f_a: 1.0, f_b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub deltas: Vec<f64>,
    pub c: f64,
    pub seeds: Vec<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { deltas: vec![0.0], c: 1.0, seeds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub q0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalderonConfig {
    pub n: usize,
    pub per_side: usize,
    pub count: usize,
    pub hat_values: Vec<f64>,
    pub counts: Vec<usize>,
    pub baseline_iters: usize,
    pub baseline_offset: f64,
}

impl Default for CalderonConfig {
    fn default() -> Self {
        CalderonConfig {
            n: 17,
            per_side: 2,
            count: 4,
            hat_values: acceptance::CALDERON_HATS.to_vec(),
            counts: vec![1, 2, 3, 4],
            baseline_iters: 20,
            baseline_offset: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseLiftConfig {
    pub n: usize,
    pub m: usize,
}

impl Default for PhaseLiftConfig {
    fn default() -> Self {
        PhaseLiftConfig { n: 5, m: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertifyTarget {
    Internal,
    Calderon,
    Phaselift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub target: CertifyTarget,
    pub margin: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { target: CertifyTarget::Internal, margin: DEFAULT_MARGIN }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub action: Option<Action>,
    pub seed: u64,
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    pub boundary: BoundaryConfig,
    pub noise: NoiseConfig,
    pub sweep: SweepConfig,
    pub calderon: CalderonConfig,
    pub phaselift: PhaseLiftConfig,
    pub certify: CertifyConfig,
    pub solver: SolverOptions,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            action: None,
            seed: 0,
            grid: GridConfig::default(),
            potential: PotentialSpec::default(),
            boundary: BoundaryConfig::default(),
            noise: NoiseConfig::default(),
            sweep: SweepConfig::default(),
            calderon: CalderonConfig::default(),
            phaselift: PhaseLiftConfig::default(),
            certify: CertifyConfig::default(),
            solver: SolverOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.grid.n < 3 {
            return bad("grid.n must be at least 3");
        }
        if self.noise.deltas.iter().any(|d| !(*d >= 0.0)) {
            return bad("noise.deltas must be nonnegative");
        }
        if !(self.noise.c > 0.0) {
            return bad("noise.c must be positive");
        }
        if self.calderon.hat_values.len() != self.calderon.per_side * self.calderon.per_side {
            return bad("calderon.hat_values needs per_side² entries");
        }
        if self.phaselift.n == 0 || self.phaselift.m == 0 {
            return bad("phaselift.n and phaselift.m must be positive");
        }
        if self.solver.max_iter == 0 || self.solver.check_every == 0 {
            return bad("solver.max_iter and solver.check_every must be positive");
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        if self.noise.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.noise.seeds.clone()
        }
    }

    fn kind(&self) -> Result<ExperimentKind> {
        self.experiment.ok_or_else(|| Error::Config("no experiment kind given".into()))
    }

    fn action(&self) -> Result<Action> {
        let kind = self.kind()?;
        let a = match (kind, self.action) {
            (ExperimentKind::Internal, None) => Action::Recover,
            (ExperimentKind::Calderon, None) => Action::Recover,
            (_, None) => Action::Recover,
            (_, Some(a)) => a,
        };
        let ok = match kind {
            ExperimentKind::Internal => matches!(a, Action::Certify | Action::Recover | Action::Sweep),
            ExperimentKind::Calderon => matches!(a, Action::Forward | Action::Recover | Action::Certify | Action::Baseline),
            _ => true,
        };
        if !ok {
            return Err(Error::Config(format!("action {a} is not available for {kind}")));
        }
        Ok(a)
    }
}

/// Column type of a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Real,
    Int,
    Bool,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Bool(bool),
    Text(String),
    Missing,
}

impl Value {
    fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Real(_) => Some(ColumnType::Real),
            Value::Int(_) => Some(ColumnType::Int),
            Value::Bool(_) => Some(ColumnType::Bool),
            Value::Text(_) => Some(ColumnType::Text),
            Value::Missing => None,
        }
    }

    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64
            Value::Real(x) => format!("{x:.16e}"),
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Text(s) => s.clone(),
            Value::Missing => String::new(),
        }
    }

    /// Parse a rendered cell back.
    pub fn parse(s: &str, ty: ColumnType) -> Result<Value> {
        if s.is_empty() && ty != ColumnType::Text {
            return Ok(Value::Missing);
        }
        let err = |_| Error::InvalidArgument(format!("cannot parse {s:?} as {ty:?}"));
        Ok(match ty {
            ColumnType::Real => Value::Real(s.parse::<f64>().map_err(|e| err(e.to_string()))?),
            ColumnType::Int => Value::Int(s.parse::<i64>().map_err(|e| err(e.to_string()))?),
            ColumnType::Bool => Value::Bool(s.parse::<bool>().map_err(|e| err(e.to_string()))?),
            ColumnType::Text => Value::Text(s.to_string()),
        })
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Real(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as i64)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x as i64)
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(x: Option<T>) -> Self {
        x.map_or(Value::Missing, Into::into)
    }
}

/// Fixed, ordered column list.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<(&'static str, ColumnType)>,
}

impl Schema {
    pub fn new(columns: &[(&'static str, ColumnType)]) -> Self {
        Schema { columns: columns.to_vec() }
    }

    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.0).collect()
    }
}

use ColumnType::{Bool as B, Int as I, Real as R, Text as T};

/// Columns of the internal-measurement tables.
pub fn internal_schema() -> Schema {
    Schema::new(&[
        ("q0", R),
        ("delta", R),
        ("seed", I),
        ("lambda", R),
        ("lhs", R),
        ("pass", B),
        ("w_norm", R),
        ("err_L2", R),
        ("rank_ratio", R),
        ("iters", I),
    ])
}

pub fn calderon_forward_schema() -> Schema {
    Schema::new(&[("i", I), ("node", I), ("s", R), ("f", R), ("flux", R), ("flux_q0", R)])
}

pub fn calderon_recover_schema() -> Schema {
    Schema::new(&[
        ("delta", R),
        ("seed", I),
        ("lambda", R),
        ("err_rel", R),
        ("residual", R),
        ("max_rank_ratio", R),
        ("iters", I),
        ("bounds_hold", B),
    ])
}

pub fn calderon_certify_schema() -> Schema {
    Schema::new(&[
        ("count", I),
        ("w_norm", R),
        ("tangent_residual", R),
        ("sigma_min", R),
        ("ndsc_pass", B),
        ("degenerate", B),
    ])
}

pub fn calderon_baseline_schema() -> Schema {
    Schema::new(&[("iter", I), ("misfit", R), ("q_err_rel", R)])
}

pub fn phaselift_schema() -> Schema {
    Schema::new(&[
        ("delta", R),
        ("seed", I),
        ("lambda", R),
        ("err", R),
        ("lifted_err", R),
        ("rank_ratio", R),
        ("iters", I),
        ("bounds_hold", B),
    ])
}

pub fn certify_schema() -> Schema {
    Schema::new(&[("target", T), ("block", I), ("w_norm", R), ("tangent_residual", R), ("pass", B)])
}

pub fn selftest_schema() -> Schema {
    Schema::new(&[("criterion", I), ("name", T), ("pass", B), ("seconds", R)])
}

fn check_rows(rows: &[Vec<Value>], schema: &Schema) -> Result<()> {
    for (k, row) in rows.iter().enumerate() {
        if row.len() != schema.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "row {k} has {} cells, schema has {} columns",
                row.len(),
                schema.columns.len()
            )));
        }
        for (v, (name, ty)) in row.iter().zip(&schema.columns) {
            if let Some(t) = v.column_type() {
                if t != *ty {
                    return Err(Error::InvalidArgument(format!("row {k}, column {name}: {t:?} where {ty:?} is expected")));
                }
            }
        }
    }
    Ok(())
}

/// Write `rows` under `schema` to `path`; the header is always written.
pub fn emit_table(rows: &[Vec<Value>], schema: &Schema, path: &Path) -> Result<()> {
    check_rows(rows, schema)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(schema.header())?;
    for row in rows {
        w.write_record(row.iter().map(Value::render))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table written by [`emit_table`].
pub fn read_table(path: &Path, schema: &Schema) -> Result<Vec<Vec<Value>>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != schema.header() {
        return Err(Error::InvalidArgument(format!("header {header:?} does not match the schema")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .zip(&schema.columns)
            .map(|(s, (_, ty))| Value::parse(s, *ty))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// One named check of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Assertion { name: name.into(), pass, detail: detail.into() }
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub assertions: Vec<Assertion>,
}

impl RunOutcome {
    pub fn failed(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.pass).collect()
    }
}

struct Report {
    schema: Schema,
    rows: Vec<Vec<Value>>,
    assertions: Vec<Assertion>,
    extra: serde_json::Value,
}

fn default_out_dir(kind: ExperimentKind, action: Option<Action>) -> PathBuf {
    let mut name = kind.to_string();
    if let Some(a) = action {
        name.push('-');
        name.push_str(&a.to_string());
    }
    PathBuf::from("liftrec-out").join(name)
}

/// Run the configured experiment and write its artifacts. Errors that are
/// not assertion failures propagate.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let action = match kind {
        ExperimentKind::Internal | ExperimentKind::Calderon => Some(cfg.action()?),
        _ => None,
    };
    let out_dir = cfg.output.dir.clone().unwrap_or_else(|| default_out_dir(kind, action));
    fs::create_dir_all(&out_dir)?;
    log::info!("running {kind} {action:?} into {}", out_dir.display());
    let report = match (kind, action) {
        (ExperimentKind::Internal, Some(Action::Certify)) => internal_certify(cfg)?,
        (ExperimentKind::Internal, Some(Action::Recover)) => internal_recover(cfg)?,
        (ExperimentKind::Internal, Some(Action::Sweep)) => internal_sweep(cfg)?,
        (ExperimentKind::Calderon, Some(Action::Forward)) => calderon_forward(cfg)?,
        (ExperimentKind::Calderon, Some(Action::Recover)) => calderon_recover(cfg)?,
        (ExperimentKind::Calderon, Some(Action::Certify)) => calderon_certify(cfg)?,
        (ExperimentKind::Calderon, Some(Action::Baseline)) => calderon_baseline(cfg)?,
        (ExperimentKind::Phaselift, _) => phaselift(cfg)?,
        (ExperimentKind::Certify, _) => certify_run(cfg)?,
        (ExperimentKind::Selftest, _) => selftest(),
        (k, a) => return Err(Error::Config(format!("unsupported combination {k} {a:?}"))),
    };
    emit_table(&report.rows, &report.schema, &out_dir.join("table.csv"))?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": kind,
        "action": action,
        "seed": cfg.seed,
        "seeds": cfg.seeds(),
        "tolerances": cfg.solver,
        "columns": report.schema.header(),
        "assertions": report.assertions,
        "results": report.extra,
        "config": cfg,
        "timestamp_unix": timestamp,
    });
    let mut f = fs::File::create(out_dir.join("summary.json"))?;
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    f.write_all(b"\n")?;
    let exit_code = if report.assertions.iter().all(|a| a.pass) { 0 } else { 1 };
    Ok(RunOutcome { exit_code, out_dir, assertions: report.assertions })
}

fn spaces(cfg: &ExperimentConfig) -> Result<InternalSpaces> {
    InternalSpaces::new(&Grid1D::new(cfg.grid.n, cfg.grid.a, cfg.grid.b)?)
}

fn internal_problem(cfg: &ExperimentConfig, sp: &InternalSpaces, spec: &PotentialSpec) -> Result<InternalProblem> {
    let q = spec.build(&sp.grid)?;
    InternalProblem::new(sp, &q, cfg.boundary.f_a, cfg.boundary.f_b)
}

fn q0_list(cfg: &ExperimentConfig) -> Vec<Option<f64>> {
    if cfg.sweep.q0.is_empty() {
        vec![cfg.potential.q0()]
    } else {
        cfg.sweep.q0.iter().copied().map(Some).collect()
    }
}

fn spec_for(cfg: &ExperimentConfig, q0: Option<f64>) -> Result<PotentialSpec> {
    match q0 {
        Some(v) if cfg.potential.q0() != Some(v) => cfg.potential.with_q0(v),
        _ => Ok(cfg.potential.clone()),
    }
}

fn internal_certify(cfg: &ExperimentConfig) -> Result<Report> {
    let sp = spaces(cfg)?;
    let mut rows = Vec::new();
    let mut extra = Vec::new();
    let mut assertions = Vec::new();
    for q0 in q0_list(cfg) {
        let p = internal_problem(cfg, &sp, &spec_for(cfg, q0)?)?;
        let cond = internal::sufficient_condition(&p);
        let cert = internal::certify_internal(&p, cfg.certify.margin)?;
        rows.push(vec![
            q0.into(),
            Value::Missing,
            Value::Missing,
            Value::Missing,
            cond.lhs_normalized.into(),
            cond.pass.into(),
            cert.least_norm.max_w_norm().into(),
            Value::Missing,
            Value::Missing,
            Value::Missing,
        ]);
        let (exact, bound) = (cert.closed_form_w_norm, cert.closed_form_bound);
        assertions.push(Assertion::new(
            format!("closed-form certificate below its majorant (q0 = {q0:?})"),
            exact <= bound + 1e-9,
            format!("{exact:e} vs {bound:e}"),
        ));
        if cond.pass {
            assertions.push(Assertion::new(
                format!("condition implies least-norm certificate (q0 = {q0:?})"),
                cert.ndsc_pass(),
                format!("w = {}", cert.least_norm.max_w_norm()),
            ));
        }
        extra.push(json!({
            "q0": q0,
            "condition": cond,
            "alpha_star": cert.alpha_star,
            "closed_form_w_norm": exact,
            "closed_form_bound": bound,
            "alpha_scan": cert.alpha_scan,
            "distance_to_closed_form": cert.distance_to_closed_form,
            "least_norm": cert.least_norm.summary(),
            "apriori_constant": internal::apriori_constant(&p),
        }));
    }
    Ok(Report { schema: internal_schema(), rows, assertions, extra: json!(extra) })
}

fn internal_recover(cfg: &ExperimentConfig) -> Result<Report> {
    let sp = spaces(cfg)?;
    let p = internal_problem(cfg, &sp, &cfg.potential)?;
    let op = internal::assemble_internal_operator(&p)?;
    let cond = internal::sufficient_condition(&p);
    let cert = internal::certify_internal(&p, cfg.certify.margin)?;
    let mut tasks = Vec::new();
    for &d in &cfg.noise.deltas {
        if d == 0.0 {
            tasks.push((d, None));
        } else {
            tasks.extend(cfg.seeds().into_iter().map(|s| (d, Some(s))));
        }
    }
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(d, seed)| -> Result<_> {
            let (m, mode) = match seed {
                None => (p.noiseless()?, RecoveryMode::Exact),
                Some(s) => (p.noisy(d, s)?, RecoveryMode::Noisy { c: cfg.noise.c }),
            };
            let rec = internal::recover_with_operator(&p, &op, &m, mode, &cfg.solver)?;
            Ok((d, seed, rec))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for (d, seed, rec) in &results {
        let err = rec.relative_error(&p);
        rows.push(vec![
            cfg.potential.q0().into(),
            (*d).into(),
            (*seed).into(),
            rec.lambda.into(),
            cond.lhs_normalized.into(),
            cond.pass.into(),
            cert.least_norm.max_w_norm().into(),
            err.into(),
            rec.rank_ratio.into(),
            rec.report.iterations.into(),
        ]);
        if seed.is_none() && cert.ndsc_pass() {
            assertions.push(Assertion::new("exact recovery of a certified instance", err <= 1e-3, format!("error {err:e}")));
        }
    }
    let extra = json!({ "condition": cond, "certificate": cert.least_norm.summary(), "int_q": p.int_q });
    Ok(Report { schema: internal_schema(), rows, assertions, extra })
}

fn internal_sweep(cfg: &ExperimentConfig) -> Result<Report> {
    let sp = spaces(cfg)?;
    let list = q0_list(cfg);
    let results: Vec<_> = list
        .par_iter()
        .map(|&q0| -> Result<_> {
            let p = internal_problem(cfg, &sp, &spec_for(cfg, q0)?)?;
            let cond = internal::sufficient_condition(&p);
            let cert = internal::certify_internal(&p, cfg.certify.margin)?;
            let rec = internal::recover_internal(&p, &p.noiseless()?, RecoveryMode::Exact, &cfg.solver)?;
            Ok((q0, cond, cert.least_norm.max_w_norm(), cert.ndsc_pass(), rec.relative_error(&p), rec))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for (q0, cond, w, pass, err, rec) in &results {
        rows.push(vec![
            (*q0).into(),
            0.0.into(),
            Value::Missing,
            Value::Missing,
            cond.lhs_normalized.into(),
            cond.pass.into(),
            (*w).into(),
            (*err).into(),
            rec.rank_ratio.into(),
            rec.report.iterations.into(),
        ]);
        if *pass {
            assertions.push(Assertion::new(format!("exact recovery at q0 = {q0:?}"), *err <= 1e-3, format!("error {err:e}")));
        }
    }
    let sp_ref = &sp;
    let threshold = |lo: f64, hi: f64| -> Result<Option<f64>> {
        match &cfg.potential {
            PotentialSpec::Step { a, b, .. } => {
                internal::locate_condition_threshold(sp_ref, lo, hi, *a, *b, cfg.boundary.f_a, 1e-6)
            }
            _ => Ok(None),
        }
    };
    let extra = json!({ "threshold_lower": threshold(-0.99, 0.0)?, "threshold_upper": threshold(0.0, 4.0)? });
    Ok(Report { schema: internal_schema(), rows, assertions, extra })
}

fn calderon_problem(cfg: &ExperimentConfig) -> Result<CalderonProblem> {
    let c = &cfg.calderon;
    CalderonProblem::unit_square(c.n, c.per_side, c.count, &c.hat_values)
}

fn calderon_forward(cfg: &ExperimentConfig) -> Result<Report> {
    let p = calderon_problem(cfg)?;
    let zero = DVector::zeros(p.grid.len());
    let base = calderon::forward_fluxes(&p, &zero)?;
    let rows = (0..p.count())
        .flat_map(|i| {
            let p = &p;
            let base = &base;
            (0..p.nb()).map(move |b| {
                vec![
                    i.into(),
                    p.grid.boundary_index[b].into(),
                    p.grid.boundary_arclength[b].into(),
                    p.bdry.f[(b, i)].into(),
                    p.fluxes[i][b].into(),
                    base[(i, b)].into(),
                ]
            })
        })
        .collect();
    let extra = json!({ "int_q": p.int_q, "q_coeffs": p.q_coeffs.as_slice(), "f1_floor": p.bdry.f1_floor });
    Ok(Report { schema: calderon_forward_schema(), rows, assertions: Vec::new(), extra })
}

fn calderon_recover(cfg: &ExperimentConfig) -> Result<Report> {
    let p = calderon_problem(cfg)?;
    let sys = CalderonSystem::new(&p)?;
    let (cert, row) = calderon::certify_with_operator(&p, &sys.op, cfg.certify.margin)?;
    let clean = p.measurements(None)?;
    let truth_res = (p.apply_values(&sys.op, &p.truth_stack())? - &clean.z).norm();
    let mut assertions = vec![Assertion::new("F† satisfies the constraints", truth_res <= 1e-9, format!("{truth_res:e}"))];
    let models = p.models()?;
    let mut rows = Vec::new();
    for &d in &cfg.noise.deltas {
        let seeds = if d == 0.0 { vec![None] } else { cfg.seeds().into_iter().map(Some).collect() };
        for seed in seeds {
            let (m, mode) = match seed {
                None => (clean.clone(), CalderonMode::Exact),
                Some(s) => (p.measurements(Some((d, s)))?, CalderonMode::Noisy { c: cfg.noise.c }),
            };
            let rec = calderon::recover_calderon(&p, &sys, &m, mode, &cfg.solver)?;
            let err = rec.relative_error(&p);
            let lambda = seed.map(|_| cfg.noise.c * d);
            let bounds = match (&cert, seed) {
                (Some(c), Some(_)) if c.ndsc_pass => {
                    let fw: Vec<_> = rec.stack.iter().map(|f| f.whiten()).collect();
                    let pv = c.p.as_ref().expect("least-norm certificate carries p");
                    let b = certify::robustness_bounds(&sys.op, &fw, &models, &c.h, pv, cfg.noise.c * d / m.data_error, m.data_error)?;
                    assertions.push(Assertion::new(format!("noisy bounds at delta = {d}, seed = {seed:?}"), b.holds, format!("{b:?}")));
                    Some(b.holds)
                }
                _ => None,
            };
            if seed.is_none() && row.w_norm < 1.0 {
                assertions.push(Assertion::new("exact recovery with a certificate", err <= 1e-2, format!("error {err:e}")));
            }
            let max_ratio = rec.rank_ratios.iter().fold(0.0_f64, |a, &b| a.max(b));
            rows.push(vec![
                d.into(),
                seed.into(),
                lambda.into(),
                err.into(),
                rec.constraint_residual.into(),
                max_ratio.into(),
                rec.report.iterations.into(),
                bounds.into(),
            ]);
        }
    }
    let extra = json!({ "certificate": row, "truth_residual": truth_res });
    Ok(Report { schema: calderon_recover_schema(), rows, assertions, extra })
}

fn calderon_certify(cfg: &ExperimentConfig) -> Result<Report> {
    let p = calderon_problem(cfg)?;
    let counts: Vec<usize> = cfg.calderon.counts.iter().copied().filter(|&n| n >= 1 && n <= p.count()).collect();
    let table = calderon::precertificate_study(&p, &counts)?;
    let mut assertions = Vec::new();
    let rows = table
        .iter()
        .map(|r| {
            if !r.degenerate {
                assertions.push(Assertion::new(
                    format!("tangent interpolation at N = {}", r.count),
                    r.tangent_residual <= 1e-8,
                    format!("{:e}", r.tangent_residual),
                ));
            }
            vec![
                r.count.into(),
                r.w_norm.into(),
                r.tangent_residual.into(),
                r.sigma_min.into(),
                r.ndsc_pass.into(),
                r.degenerate.into(),
            ]
        })
        .collect();
    let extra = json!({ "inverse_sigma_min": table.iter().map(|r| 1.0 / r.sigma_min).collect::<Vec<_>>() });
    Ok(Report { schema: calderon_certify_schema(), rows, assertions, extra })
}

fn calderon_baseline(cfg: &ExperimentConfig) -> Result<Report> {
    let p = calderon_problem(cfg)?;
    let data = calderon::forward_fluxes(&p, &p.q_nodal)?;
    let init = p.q_coeffs.map(|v| v + cfg.calderon.baseline_offset);
    let hist = calderon::gauss_newton_baseline(&p, &init, &data, cfg.calderon.baseline_iters)?;
    let qn = p.q_coeffs.norm();
    let rows = hist
        .iterates
        .iter()
        .zip(&hist.misfits)
        .enumerate()
        .map(|(k, (q, m))| {
            let e = (DVector::from_column_slice(q) - &p.q_coeffs).norm() / qn;
            vec![k.into(), (*m).into(), e.into()]
        })
        .collect();
    let extra = json!({ "converged": hist.converged, "stalled": hist.stalled });
    Ok(Report { schema: calderon_baseline_schema(), rows, assertions: Vec::new(), extra })
}

fn phaselift(cfg: &ExperimentConfig) -> Result<Report> {
    let inst = quadratic::make_phase_retrieval(cfg.phaselift.n, cfg.phaselift.m, cfg.seed)?;
    let x = inst.x_true.clone().expect("generated with truth");
    let cert = quadratic::certify_phaselift(&inst, cfg.certify.margin).ok();
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    for &d in &cfg.noise.deltas {
        if d == 0.0 {
            let rec = quadratic::recover_phaselift(&inst, &inst.z, PsdMode::Exact, &cfg.solver)?;
            let err = rec.sign_aligned_error(&x);
            let lifted = (&rec.x_mat - quadratic::lift(&x)).norm();
            if cert.as_ref().is_some_and(|c| c.ndsc_pass) {
                assertions.push(Assertion::new("exact PhaseLift recovery with a certificate", err <= 1e-3, format!("{err:e}")));
            }
            rows.push(vec![
                d.into(),
                Value::Missing,
                Value::Missing,
                err.into(),
                lifted.into(),
                rec.rank_ratio.into(),
                rec.report.iterations.into(),
                Value::Missing,
            ]);
            continue;
        }
        for s in cfg.seeds() {
            let usable = cert.as_ref().filter(|c| c.ndsc_pass);
            let r = quadratic::noisy_phaselift(&inst, d, cfg.noise.c, s, usable, &cfg.solver)?;
            let holds = r.bounds.as_ref().map(|b| b.holds);
            if let Some(h) = holds {
                assertions.push(Assertion::new(format!("noisy bounds at delta = {d}, seed = {s}"), h, ""));
            }
            rows.push(vec![
                d.into(),
                s.into(),
                (cfg.noise.c * d).into(),
                r.recovery.sign_aligned_error(&x).into(),
                r.lifted_error.into(),
                r.recovery.rank_ratio.into(),
                r.recovery.report.iterations.into(),
                holds.into(),
            ]);
        }
    }
    let extra = json!({ "certificate": cert.map(|c| c.summary()) });
    Ok(Report { schema: phaselift_schema(), rows, assertions, extra })
}

fn certify_run(cfg: &ExperimentConfig) -> Result<Report> {
    let margin = cfg.certify.margin;
    let (name, rep) = match cfg.certify.target {
        CertifyTarget::Internal => {
            let sp = spaces(cfg)?;
            let p = internal_problem(cfg, &sp, &cfg.potential)?;
            ("internal", Some(internal::certify_internal(&p, margin)?.least_norm))
        }
        CertifyTarget::Calderon => ("calderon", calderon::certify_calderon(&calderon_problem(cfg)?, margin)?.0),
        CertifyTarget::Phaselift => {
            let inst = quadratic::make_phase_retrieval(cfg.phaselift.n, cfg.phaselift.m, cfg.seed)?;
            ("phaselift", Some(quadratic::certify_phaselift(&inst, margin)?))
        }
    };
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    match &rep {
        Some(r) => {
            for (i, (w, t)) in r.w_norms.iter().zip(&r.tangent_residuals).enumerate() {
                rows.push(vec![
                    name.into(),
                    i.into(),
                    (*w).into(),
                    (*t).into(),
                    (*t <= 1e-8 && *w < 1.0 - margin).into(),
                ]);
            }
            assertions.push(Assertion::new(
                "tangent interpolation",
                r.max_tangent_residual() <= 1e-8,
                format!("{:e}", r.max_tangent_residual()),
            ));
        }
        None => log::warn!("degenerate tangent system for {name}"),
    }
    let extra = json!({ "target": name, "report": rep.map(|r| r.summary()) });
    Ok(Report { schema: certify_schema(), rows, assertions, extra })
}

fn selftest() -> Report {
    let outcomes = acceptance::run_all();
    for o in &outcomes {
        println!("{o}");
    }
    let rows = outcomes
        .iter()
        .map(|o| vec![(o.id as usize).into(), o.name.as_str().into(), o.pass.into(), o.seconds.into()])
        .collect();
    let assertions = outcomes
        .iter()
        .map(|o| Assertion::new(format!("criterion {}: {}", o.id, o.name), o.pass, o.detail.clone()))
        .collect();
    Report { schema: selftest_schema(), rows, assertions, extra: json!(outcomes) }
}

/// Exit code for a configuration error.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when an assertion fails.
pub const EXIT_ASSERTION: i32 = 1;

/// Run and translate the outcome into an exit code, reporting on stderr.
pub fn run_to_exit_code(cfg: &ExperimentConfig) -> i32 {
    match run(cfg) {
        Ok(out) => {
            for a in out.failed() {
                eprintln!("assertion failed: {}: {}", a.name, a.detail);
            }
            eprintln!("artifacts in {}", out.out_dir.display());
            out.exit_code
        }
        Err(Error::Config(m)) => {
            eprintln!("config error: {m}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ASSERTION
        }
    }
}
