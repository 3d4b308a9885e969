//! Monte Carlo experiment grid: populations × mechanisms × methods.
//!
//! Each replication draws a sample from the population, amputes it, imputes
//! it and records the downstream [`ParamSet`]. Every step has its own stream,
//! addressed by a value-based scenario label (see [`crate::stochastics`]), so
//!
//! * the sampling and amputation streams depend only on (population,
//!   mechanism, replication): all methods in a grid see the same incomplete
//!   samples;
//! * the imputation stream additionally depends on the method and its
//!   parameters;
//! * results do not depend on config ordering or on the number of threads.
//!
//! Replication results are collected in index order and summed serially.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::ampute::{ampute, IncompleteDataset, Mechanism, MissingnessSpec};
use crate::datagen::{draw_sample, generate_population, Dataset, PopulationSpec};
use crate::downstream::{
    complete_data_params, decompose_mse, estimate_params, DecompositionResult, ParamSet,
};
use crate::error::{invalid, Error, Result};
use crate::imputers::{impute_dispatch, impute_draw, impute_predict, ImputationMethod};
use crate::stochastics::{make_stream, stream_id, Purpose, RngStream, SeedSpec};

/// Grid definition.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Population specs; their `size` is replaced by `pop_size`.
    pub populations: Vec<PopulationSpec>,
    pub mechanisms: Vec<MissingnessSpec>,
    pub methods: Vec<ImputationMethod>,
    pub n_sample: usize,
    pub t_rep: usize,
    pub base_seed: u64,
    pub pop_size: usize,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            populations: vec![
                PopulationSpec::with_r_squared(0.8),
                PopulationSpec::with_r_squared(0.2),
            ],
            mechanisms: vec![MissingnessSpec::mcar(0.5), MissingnessSpec::mar_right(0.5)],
            methods: vec![ImputationMethod::Predict, ImputationMethod::draw()],
            n_sample: 1000,
            t_rep: 200,
            base_seed: 123,
            pop_size: 1_000_000,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    /// Predict and draw over both signals and both mechanisms.
    pub fn table1() -> Self {
        Self::default()
    }

    /// Forest, soft-impute and PMM over both signals and both mechanisms.
    pub fn table2() -> Self {
        Self {
            methods: vec![
                ImputationMethod::forest(),
                ImputationMethod::softimpute(),
                ImputationMethod::pmm(),
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_rep == 0 {
            return Err(invalid("t_rep must be at least 1"));
        }
        if self.n_sample > self.pop_size {
            return Err(invalid(format!(
                "n_sample {} exceeds pop_size {}",
                self.n_sample, self.pop_size
            )));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1"));
        }
        for p in &self.populations {
            self.population_spec(p).validate()?;
        }
        for m in &self.mechanisms {
            m.validate()?;
        }
        for m in &self.methods {
            m.validate()?;
        }
        Ok(())
    }

    /// `spec` with this run's population size.
    pub fn population_spec(&self, spec: &PopulationSpec) -> PopulationSpec {
        PopulationSpec {
            size: self.pop_size,
            ..spec.clone()
        }
    }
}

/// Field-wise mean and Monte Carlo standard error over replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: ParamSet,
    /// `sd / sqrt(t_rep)`; `NaN` when `t_rep < 2`.
    pub se: ParamSet,
    pub replications: usize,
}

impl CellSummary {
    fn from_replications(reps: &[ParamSet]) -> Self {
        let n = reps.len() as f64;
        let mut sum = [0.0; 10];
        for r in reps {
            for (s, v) in sum.iter_mut().zip(r.to_array()) {
                *s += v;
            }
        }
        let mean = sum.map(|s| s / n);
        let mut ss = [0.0; 10];
        for r in reps {
            for ((s, v), m) in ss.iter_mut().zip(r.to_array()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        let se = if reps.len() < 2 {
            [f64::NAN; 10]
        } else {
            ss.map(|s| (s / (n - 1.0)).sqrt() / n.sqrt())
        };
        Self {
            mean: ParamSet::from_array(mean),
            se: ParamSet::from_array(se),
            replications: reps.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub signal: String,
    /// Empty for ground-truth rows.
    pub method: String,
    /// `ground_truth` for ground-truth rows.
    pub mechanism: String,
    pub summary: CellSummary,
}

impl SummaryRow {
    pub fn is_ground_truth(&self) -> bool {
        self.mechanism == GROUND_TRUTH
    }
}

pub const GROUND_TRUTH: &str = "ground_truth";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn find(&self, signal: &str, method: &str, mechanism: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.signal == signal && r.method == method && r.mechanism == mechanism)
    }

    pub fn ground_truth(&self, signal: &str) -> Option<&SummaryRow> {
        self.find(signal, "", GROUND_TRUTH)
    }
}

fn scenario_label(spec: &PopulationSpec, mech: &MissingnessSpec) -> String {
    format!("{}/{}", spec.canonical_label(), mech.canonical_label())
}

fn population_stream(base_seed: u64, spec: &PopulationSpec) -> RngStream {
    make_stream(SeedSpec::new(
        base_seed,
        stream_id(&spec.canonical_label(), 0, Purpose::Population),
    ))
}

/// The population a config uses for `spec` (same draws in every table).
pub fn population_for(cfg: &ExperimentConfig, spec: &PopulationSpec) -> Result<Dataset> {
    let spec = cfg.population_spec(spec);
    generate_population(&spec, &mut population_stream(cfg.base_seed, &spec))
}

/// The incomplete sample of replication `t` for a (population, mechanism) scenario.
pub fn replication_sample(
    pop: &Dataset,
    spec: &PopulationSpec,
    mech: &MissingnessSpec,
    cfg: &ExperimentConfig,
    t: usize,
) -> Result<IncompleteDataset> {
    let scenario = scenario_label(spec, mech);
    let mut s_sample = make_stream(SeedSpec::new(
        cfg.base_seed,
        stream_id(&scenario, t as u64, Purpose::Sampling),
    ));
    let mut s_amp = make_stream(SeedSpec::new(
        cfg.base_seed,
        stream_id(&scenario, t as u64, Purpose::Amputation),
    ));
    let sample = draw_sample(pop, cfg.n_sample, &mut s_sample)?;
    ampute(sample, mech, &mut s_amp)
}

fn imputation_stream(
    spec: &PopulationSpec,
    mech: &MissingnessSpec,
    method: &ImputationMethod,
    cfg: &ExperimentConfig,
    t: usize,
    tag: &str,
) -> RngStream {
    let label = format!(
        "{}/{}{}",
        scenario_label(spec, mech),
        method.canonical_label(),
        tag
    );
    make_stream(SeedSpec::new(
        cfg.base_seed,
        stream_id(&label, t as u64, Purpose::Imputation),
    ))
}

fn cell_name(spec: &PopulationSpec, mech: &MissingnessSpec, method: &ImputationMethod) -> String {
    format!(
        "{}/{}/{}",
        spec.signal_label(),
        method.label(),
        mech.mechanism
    )
}

/// Runs `t_rep` replications of one (population, mechanism, method) cell.
/// `spec` must be the spec `pop` was generated from.
pub fn run_cell(
    pop: &Dataset,
    spec: &PopulationSpec,
    mech: &MissingnessSpec,
    method: &ImputationMethod,
    cfg: &ExperimentConfig,
) -> Result<CellSummary> {
    if pop.len() != spec.size {
        return Err(invalid("population length does not match its spec"));
    }
    let reps: Vec<ParamSet> = (0..cfg.t_rep)
        .into_par_iter()
        .map(|t| {
            let one = || -> Result<ParamSet> {
                let inc = replication_sample(pop, spec, mech, cfg, t)?;
                let mut s = imputation_stream(spec, mech, method, cfg, t, "");
                let completed = impute_dispatch(&inc, method, &mut s)?;
                estimate_params(&completed, &inc.truth())
            };
            one().map_err(|e| Error::Replication {
                cell: cell_name(spec, mech, method),
                replication: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CellSummary::from_replications(&reps))
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs the whole grid. Rows: per population, a ground-truth row then one row
/// per (method, mechanism) in config order.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<SummaryTable> {
    cfg.validate()?;
    with_pool(cfg.threads, || {
        let specs: Vec<PopulationSpec> = cfg
            .populations
            .iter()
            .map(|p| cfg.population_spec(p))
            .collect();
        let pops: Vec<Dataset> = specs
            .par_iter()
            .map(|s| population_for(cfg, s))
            .collect::<Result<_>>()?;

        let mut jobs = Vec::new();
        for (pi, _) in specs.iter().enumerate() {
            for method in &cfg.methods {
                for mech in &cfg.mechanisms {
                    jobs.push((pi, method, mech));
                }
            }
        }
        let cells: Vec<CellSummary> = jobs
            .par_iter()
            .map(|&(pi, method, mech)| run_cell(&pops[pi], &specs[pi], mech, method, cfg))
            .collect::<Result<_>>()?;
        let truths: Vec<ParamSet> = pops
            .par_iter()
            .map(complete_data_params)
            .collect::<Result<_>>()?;

        let mut rows = Vec::with_capacity(jobs.len() + specs.len());
        let mut cell_iter = jobs.iter().zip(cells);
        for (pi, spec) in specs.iter().enumerate() {
            rows.push(SummaryRow {
                signal: spec.signal_label(),
                method: String::new(),
                mechanism: GROUND_TRUTH.to_string(),
                summary: CellSummary {
                    mean: truths[pi],
                    se: ParamSet::from_array([0.0; 10]),
                    replications: 1,
                },
            });
            for _ in 0..cfg.methods.len() * cfg.mechanisms.len() {
                let (&(_, method, mech), summary) = cell_iter.next().expect("one summary per job");
                rows.push(SummaryRow {
                    signal: spec.signal_label(),
                    method: method.label().to_string(),
                    mechanism: mech.mechanism.to_string(),
                    summary,
                });
            }
        }
        Ok(SummaryTable { rows })
    })?
}

fn require_methods(cfg: &ExperimentConfig, allowed: &[&str], which: &str) -> Result<()> {
    if cfg.methods.is_empty() || cfg.methods.iter().any(|m| !allowed.contains(&m.label())) {
        return Err(invalid(format!(
            "{which} expects methods drawn from {allowed:?}"
        )));
    }
    Ok(())
}

/// Predict vs draw grid.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<SummaryTable> {
    require_methods(cfg, &["predict", "draw", "draw_bayes"], "table1")?;
    run_grid(cfg)
}

/// Forest, soft-impute and PMM grid.
pub fn run_table2(cfg: &ExperimentConfig) -> Result<SummaryTable> {
    require_methods(cfg, &["forest", "softimpute", "pmm"], "table2")?;
    run_grid(cfg)
}

/// Averaged decomposition for one (population, mechanism, method) scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub signal: String,
    pub mechanism: String,
    pub method: String,
    /// Field-wise mean over datasets.
    pub mean: DecompositionResult,
    /// Mean over datasets of `|total − (bias² + variance + noise)|`.
    pub mean_abs_gap: f64,
    pub datasets: usize,
}

/// Decomposes the MSE of each method on `datasets` incomplete samples per
/// (population, mechanism) scenario, `repeats` imputations each. Dataset `d`
/// is replication `d` of the corresponding table cell.
pub fn run_decomposition(
    cfg: &ExperimentConfig,
    repeats: usize,
    datasets: usize,
) -> Result<Vec<DecompositionRow>> {
    cfg.validate()?;
    if datasets == 0 {
        return Err(invalid("need at least one dataset"));
    }
    with_pool(cfg.threads, || {
        let specs: Vec<PopulationSpec> = cfg
            .populations
            .iter()
            .map(|p| cfg.population_spec(p))
            .collect();
        let pops: Vec<Dataset> = specs
            .par_iter()
            .map(|s| population_for(cfg, s))
            .collect::<Result<_>>()?;
        let mut jobs = Vec::new();
        for (pi, _) in specs.iter().enumerate() {
            for mech in &cfg.mechanisms {
                for method in &cfg.methods {
                    jobs.push((pi, mech, method));
                }
            }
        }
        jobs.par_iter()
            .map(|&(pi, mech, method)| {
                let spec = &specs[pi];
                let parts: Vec<DecompositionResult> = (0..datasets)
                    .into_par_iter()
                    .map(|d| {
                        let inc = replication_sample(&pops[pi], spec, mech, cfg, d)?;
                        let mut s = imputation_stream(spec, mech, method, cfg, d, "/decompose");
                        decompose_mse(&inc, spec, method, repeats, &mut s)
                    })
                    .collect::<Result<_>>()?;
                let n = parts.len() as f64;
                let avg = |f: fn(&DecompositionResult) -> f64| parts.iter().map(f).sum::<f64>() / n;
                Ok(DecompositionRow {
                    signal: spec.signal_label(),
                    mechanism: mech.mechanism.to_string(),
                    method: method.label().to_string(),
                    mean: DecompositionResult {
                        bias_sq: avg(|d| d.bias_sq),
                        variance: avg(|d| d.variance),
                        noise: avg(|d| d.noise),
                        total: avg(|d| d.total),
                    },
                    mean_abs_gap: avg(|d| (d.total - d.sum_of_parts()).abs()),
                    datasets,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn format_decomposition(rows: &[DecompositionRow]) -> String {
    let mut out =
        String::from("signal,mechanism,method,bias_sq,variance,noise,total,mean_abs_gap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            r.signal,
            r.mechanism,
            r.method,
            r.mean.bias_sq,
            r.mean.variance,
            r.mean.noise,
            r.mean.total,
            r.mean_abs_gap
        );
    }
    out
}

/// One point of the predict-vs-draw figure.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureRecord {
    pub x1: f64,
    pub x2: f64,
    pub y: f64,
    pub imputed: bool,
    pub method: &'static str,
}

/// One low-signal MAR sample imputed by predict and by draw.
pub fn figure_records(cfg: &ExperimentConfig) -> Result<(IncompleteDataset, Vec<FigureRecord>)> {
    let spec = cfg.population_spec(&PopulationSpec::with_r_squared(0.2));
    spec.validate()?;
    if cfg.n_sample > cfg.pop_size {
        return Err(invalid("n_sample exceeds pop_size"));
    }
    let mech = MissingnessSpec::mar_right(0.5);
    let pop = population_for(cfg, &spec)?;
    let inc = replication_sample(&pop, &spec, &mech, cfg, 0)?;
    let predicted = impute_predict(&inc)?;
    let mut s = imputation_stream(&spec, &mech, &ImputationMethod::draw(), cfg, 0, "/figure");
    let drawn = impute_draw(&inc, &mut s, false)?;

    let mut rows = Vec::with_capacity(2 * inc.len());
    for (name, completed) in [("predict", &predicted), ("draw", &drawn)] {
        for i in 0..inc.len() {
            rows.push(FigureRecord {
                x1: inc.x1()[i],
                x2: inc.x2()[i],
                y: completed.data.y[i],
                imputed: inc.mask()[i],
                method: name,
            });
        }
    }
    Ok((inc, rows))
}

/// Writes the figure CSV (`x1,y,status,method`); returns the number of data rows.
pub fn export_figure_data<W: Write>(cfg: &ExperimentConfig, mut out: W) -> Result<usize> {
    let (_, rows) = figure_records(cfg)?;
    writeln!(out, "x1,y,status,method")?;
    for r in &rows {
        let status = if r.imputed { "imputed" } else { "observed" };
        writeln!(out, "{},{},{},{}", r.x1, r.y, status, r.method)?;
    }
    Ok(rows.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    Csv,
    Markdown,
}

pub const CSV_HEADER: &str =
    "signal,method,mechanism,mu,sigma,p90,rho,gamma,r2_y,delta,r2_x,mse_full,mse_missing";

/// Number of leading [`ParamSet`] fields that are checked against ground truth
/// (everything except the two MSE columns).
const FLAGGED_FIELDS: usize = 8;

/// Per row and field: is the cell more than two Monte Carlo SEs away from its
/// signal's ground truth? MSE fields and ground-truth rows are never flagged.
pub fn bias_flags(table: &SummaryTable) -> Vec<[bool; 10]> {
    table
        .rows
        .iter()
        .map(|row| {
            let mut flags = [false; 10];
            if row.is_ground_truth() {
                return flags;
            }
            let Some(truth) = table.ground_truth(&row.signal) else {
                return flags;
            };
            let (m, se, t) = (
                row.summary.mean.to_array(),
                row.summary.se.to_array(),
                truth.summary.mean.to_array(),
            );
            for k in 0..FLAGGED_FIELDS {
                flags[k] = se[k].is_finite() && (m[k] - t[k]).abs() > 2.0 * se[k];
            }
            flags
        })
        .collect()
}

/// Renders a table with three decimals in the fixed column order.
pub fn format_table(table: &SummaryTable, style: TableStyle) -> String {
    let mut out = String::new();
    match style {
        TableStyle::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for row in &table.rows {
                let _ = write!(out, "{},{},{}", row.signal, row.method, row.mechanism);
                for v in row.summary.mean.to_array() {
                    let _ = write!(out, ",{v:.3}");
                }
                out.push('\n');
            }
        }
        TableStyle::Markdown => {
            out.push_str("| signal | method | mechanism | μ | σ | P90 | ρ | γ | R²_Y | δ | R²_X | MSE_full | MSE_missing |\n");
            out.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
            for (row, flags) in table.rows.iter().zip(bias_flags(table)) {
                let _ = write!(
                    out,
                    "| {} | {} | {} |",
                    row.signal, row.method, row.mechanism
                );
                for (v, f) in row.summary.mean.to_array().into_iter().zip(flags) {
                    let _ = write!(out, " {v:.3}{} |", if f { "*" } else { "" });
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Parsed CSV row: `(signal, method, mechanism, values)`.
pub type CsvRow = (String, String, String, [f64; 10]);

/// Reads back the output of [`format_table`] with [`TableStyle::Csv`].
pub fn parse_table_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {other:?}"),
            });
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("expected 13 fields, got {}", f.len()),
                });
            }
            let mut vals = [0.0; 10];
            for (slot, s) in vals.iter_mut().zip(&f[3..]) {
                *slot = s.parse().map_err(|e| Error::Parse {
                    line: i + 2,
                    message: format!("{e}"),
                })?;
            }
            Ok((f[0].to_string(), f[1].to_string(), f[2].to_string(), vals))
        })
        .collect()
}

/// Labels used for mechanisms in tables.
pub fn mechanism_label(m: Mechanism) -> String {
    m.to_string()
}
