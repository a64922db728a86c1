use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{apply_parameter, ExperimentPlan, Series, SCHEMA_VERSION};
use crate::engine::simulate;
use crate::metrics::{compute_report, littles_check, MetricsReport, Source};
use crate::model::{validate_architecture, ArchKind};
use crate::oracle::{solve, OracleOptions};
use crate::stochastics::derive_seed;

/// One evaluated (series, sweep value, source) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub series: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
    pub source: Source,
    /// Seed of the simulation; zero for oracle rows.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricsReport<f64>>,
    /// Largest relative Little's-law residual over the PEs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub little_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub schema_version: u32,
    pub kind: ArchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Series>,
    pub rows: Vec<ResultRow>,
}

impl SweepResults {
    /// Rows whose Little's-law residual exceeded the warning threshold.
    pub fn little_warnings(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows
            .iter()
            .filter(|r| r.little_residual.is_some_and(|x| x > crate::metrics::LITTLE_THRESHOLD))
    }

    pub fn errors(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

struct Job<'a> {
    series: Option<&'a Series>,
    point: usize,
    value: Option<f64>,
    source: Source,
}

fn run_job(plan: &ExperimentPlan, job: &Job) -> ResultRow {
    let seed = derive_seed(plan.sim.seed, job.point as u64);
    let mut row = ResultRow {
        series: job.series.map(|s| s.label.clone()).unwrap_or_default(),
        sweep_value: job.value,
        source: job.source,
        seed: if job.source == Source::Simulation { seed } else { 0 },
        report: None,
        little_residual: None,
        error: None,
    };
    match evaluate(plan, job, seed) {
        Ok((report, residual)) => {
            row.report = Some(report);
            row.little_residual = residual;
        }
        Err(e) => row.error = Some(e),
    }
    row
}

fn evaluate(
    plan: &ExperimentPlan,
    job: &Job,
    seed: u64,
) -> Result<(MetricsReport<f64>, Option<f64>), String> {
    let mut spec = plan.architecture.clone();
    if let Some(s) = job.series {
        for (path, &v) in &s.set {
            apply_parameter(&mut spec, path, v).map_err(|e| e.to_string())?;
        }
    }
    if let (Some(sweep), Some(v)) = (&plan.sweep, job.value) {
        apply_parameter(&mut spec, &sweep.parameter, v).map_err(|e| e.to_string())?;
    }
    let model = validate_architecture(&spec).map_err(|e| e.to_string())?;
    match job.source {
        Source::Simulation => {
            let acc = simulate(&model, &plan.sim.config(seed)).map_err(|e| e.to_string())?;
            let report = compute_report::<f64>(&acc, &model).map_err(|e| e.to_string())?;
            let check = littles_check(&report, &acc);
            Ok((report, Some(check.max_residual)))
        }
        Source::Oracle => {
            let sol = solve::<f64>(&model, &OracleOptions::default()).map_err(|e| e.to_string())?;
            Ok((sol.report, None))
        }
    }
}

/// Evaluates every series at every sweep value. Rows are ordered by series,
/// then sweep value, then source, whether or not `parallel` is set. Sweep
/// point `i` simulates with `derive_seed(seed, i)` in every series.
pub fn run_sweep(plan: &ExperimentPlan, parallel: bool) -> SweepResults {
    let series: Vec<Option<&Series>> = if plan.series.is_empty() {
        vec![None]
    } else {
        plan.series.iter().map(Some).collect()
    };
    let values: Vec<Option<f64>> = match &plan.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut jobs = Vec::new();
    for s in &series {
        for (point, &value) in values.iter().enumerate() {
            for &source in plan.mode.sources() {
                jobs.push(Job { series: *s, point, value, source });
            }
        }
    }
    let rows = if parallel {
        jobs.par_iter().map(|j| run_job(plan, j)).collect()
    } else {
        jobs.iter().map(|j| run_job(plan, j)).collect()
    };
    SweepResults {
        schema_version: SCHEMA_VERSION,
        kind: plan.architecture.kind,
        parameter: plan.sweep.as_ref().map(|s| s.parameter.clone()),
        series: plan.series.clone(),
        rows,
    }
}
