use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use super::sweep::{ResultRow, SweepResults};
use crate::arbiter::Access;
use crate::metrics::{AccessMetrics, Estimate, MetricsReport, PeMetrics, Source};
use crate::model::ArchKind;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("malformed results file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown figure {0:?} (expected fig5a, fig5b, fig6a or fig6b)")]
    UnknownFigure(String),
    #[error("{figure} needs an HBB sweep")]
    NeedsHbb { figure: FigureId },
    #[error("no PE named {0:?} in the results")]
    UnknownPe(String),
    #[error("results contain no rows for {0}")]
    Empty(FigureId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

pub fn render(results: &SweepResults, format: Format) -> String {
    match format {
        Format::Csv => to_csv(results),
        Format::Json => to_json(results),
    }
}

pub fn to_json(results: &SweepResults) -> String {
    let mut s = serde_json::to_string_pretty(results).expect("results always serialise");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<SweepResults, EmitError> {
    Ok(serde_json::from_str(text)?)
}

fn source_name(s: Source) -> &'static str {
    match s {
        Source::Simulation => "simulate",
        Source::Oracle => "oracle",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

type Getter = Box<dyn Fn(&MetricsReport<f64>) -> Option<Estimate<f64>>>;
type PeGetter = fn(&PeMetrics<f64>) -> Option<Estimate<f64>>;
type AccessGetter = fn(&AccessMetrics<f64>) -> Estimate<f64>;

/// A metric column group: value, lower and upper bound.
struct Group {
    name: String,
    get: Getter,
}

fn groups(report: &MetricsReport<f64>) -> Vec<Group> {
    let mut out = Vec::new();
    let per_pe: [(&str, PeGetter); 4] = [
        ("bw", |p| Some(p.bw)),
        ("pu", |p| Some(p.pu)),
        ("l", |p| Some(p.l)),
        ("w", |p| Some(p.w)),
    ];
    for (i, pe) in report.pes.iter().enumerate() {
        let tag = pe.name.to_lowercase();
        for (metric, f) in per_pe {
            out.push(Group {
                name: format!("{metric}_{tag}"),
                get: Box::new(move |r| r.pes.get(i).and_then(f)),
            });
        }
    }
    if report.kind == ArchKind::Hbb {
        let split: [(&str, AccessGetter); 3] = [("bw", |m| m.bw), ("l", |m| m.l), ("w", |m| m.w)];
        for (i, pe) in report.pes.iter().enumerate() {
            let tag = pe.name.to_lowercase();
            for (metric, f) in split {
                for (a, letter) in [(Access::Local, "l"), (Access::Global, "g")] {
                    out.push(Group {
                        name: format!("{metric}_{letter}_{tag}"),
                        get: Box::new(move |r| r.pes.get(i).and_then(|p| p.access(a)).map(f)),
                    });
                }
            }
        }
    }
    for (i, m) in report.memories.iter().enumerate() {
        let tag = m.name.to_lowercase();
        out.push(Group {
            name: format!("bw_{tag}"),
            get: Box::new(move |r| r.memories.get(i).map(|m| m.bw)),
        });
        out.push(Group {
            name: format!("l_{tag}"),
            get: Box::new(move |r| r.memories.get(i).map(|m| m.l)),
        });
    }
    for (i, b) in report.buses.iter().enumerate() {
        out.push(Group {
            name: format!("util_{}", b.name.to_lowercase()),
            get: Box::new(move |r| r.buses.get(i).map(|b| b.utilization)),
        });
    }
    out
}

/// Flat table with one line per row: `sweep_value`, every metric with its
/// interval bounds, then `series`, `mode`, `little_residual` and `error`.
pub fn to_csv(results: &SweepResults) -> String {
    let groups = results
        .rows
        .iter()
        .find_map(|r| r.report.as_ref())
        .map(groups)
        .unwrap_or_default();
    let mut out = String::from("sweep_value");
    for g in &groups {
        let _ = write!(out, ",{0},{0}_lo,{0}_hi", g.name);
    }
    out.push_str(",series,mode,little_residual,error\n");
    for row in &results.rows {
        out.push_str(&opt(row.sweep_value));
        for g in &groups {
            let e = row.report.as_ref().and_then(|r| (g.get)(r));
            let _ = write!(
                out,
                ",{},{},{}",
                opt(e.map(|e| e.value)),
                opt(e.and_then(|e| e.lo())),
                opt(e.and_then(|e| e.hi()))
            );
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            csv_field(&row.series),
            source_name(row.source),
            opt(row.little_residual),
            csv_field(row.error.as_deref().unwrap_or(""))
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig5a,
    Fig5b,
    Fig6a,
    Fig6b,
}

impl FigureId {
    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig5a => "fig5a",
            FigureId::Fig5b => "fig5b",
            FigureId::Fig6a => "fig6a",
            FigureId::Fig6b => "fig6b",
        }
    }

    fn metric(self, pe: &PeMetrics<f64>) -> Option<Estimate<f64>> {
        match self {
            FigureId::Fig5a => Some(pe.bw),
            FigureId::Fig5b => Some(pe.l),
            FigureId::Fig6a => pe.local.as_ref().map(|m| m.bw),
            FigureId::Fig6b => pe.global.as_ref().map(|m| m.bw),
        }
    }
}

impl std::fmt::Display for FigureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FigureId {
    type Err = EmitError;

    fn from_str(s: &str) -> Result<Self, EmitError> {
        match s.to_ascii_lowercase().as_str() {
            "fig5a" => Ok(FigureId::Fig5a),
            "fig5b" => Ok(FigureId::Fig5b),
            "fig6a" => Ok(FigureId::Fig6a),
            "fig6b" => Ok(FigureId::Fig6b),
            _ => Err(EmitError::UnknownFigure(s.to_string())),
        }
    }
}

/// Plot-ready `series,x,y,y_lo,y_hi` rows for one figure.
///
/// The plotted PE defaults to the lowest-priority PE for `fig5*` and the
/// highest-priority PE for `fig6*`. Only series tagged with the figure are
/// kept, unless no series carries any tag. Simulation rows are preferred over
/// oracle rows.
pub fn figure_data(
    results: &SweepResults,
    figure: FigureId,
    pe: Option<&str>,
) -> Result<String, EmitError> {
    if matches!(figure, FigureId::Fig6a | FigureId::Fig6b) && results.kind != ArchKind::Hbb {
        return Err(EmitError::NeedsHbb { figure });
    }
    let tagged: Vec<&str> = results
        .series
        .iter()
        .filter(|s| s.figures.iter().any(|f| f.eq_ignore_ascii_case(figure.name())))
        .map(|s| s.label.as_str())
        .collect();
    let any_tags = results.series.iter().any(|s| !s.figures.is_empty());
    let source = if results.rows.iter().any(|r| r.source == Source::Simulation) {
        Source::Simulation
    } else {
        Source::Oracle
    };
    let rows: Vec<&ResultRow> = results
        .rows
        .iter()
        .filter(|r| r.source == source)
        .filter(|r| !any_tags || tagged.contains(&r.series.as_str()))
        .collect();
    let mut out = String::from("series,x,y,y_lo,y_hi\n");
    let mut written = 0;
    for row in rows {
        let Some(report) = &row.report else { continue };
        let target = match pe {
            Some(name) => report.pe(name).ok_or_else(|| EmitError::UnknownPe(name.to_string()))?,
            None => match figure {
                FigureId::Fig5a | FigureId::Fig5b => &report.pes[0],
                FigureId::Fig6a | FigureId::Fig6b => report.pes.last().expect("non-empty"),
            },
        };
        let Some(e) = figure.metric(target) else {
            return Err(EmitError::NeedsHbb { figure });
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&row.series),
            opt(row.sweep_value),
            e.value,
            opt(e.lo()),
            opt(e.hi())
        );
        written += 1;
    }
    if written == 0 {
        return Err(EmitError::Empty(figure));
    }
    Ok(out)
}
