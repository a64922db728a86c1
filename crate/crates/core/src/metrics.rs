//! Performance parameters from simulation counters or stationary probabilities.
//!
//! Per PE: bandwidth `BW = P(AC)`, processor utilisation `PU = P(CP) + P(AC)`,
//! queue length `L = P(FW) + P(RW)` and mean waiting time `W` in cycles per
//! request. Two-bus models also split these into local and global parts.
//! Memories aggregate the bandwidth and queue length of the requests that
//! target them; buses report the fraction of cycles they carry an access.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::arbiter::Access;
use crate::engine::{BatchCounts, OccupancyAccumulator};
use crate::model::{ArchKind, Model, Phase};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("accumulator has no measured cycles")]
    NoMeasuredCycles,
    #[error("accumulator covers {found} PEs, model has {expected}")]
    Shape { expected: usize, found: usize },
}

/// A point estimate with an optional 95% batch-means confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Estimate<S> {
    pub value: S,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(S, S)>,
}

impl<S: Scalar> Estimate<S> {
    pub fn exact(value: S) -> Self {
        Self { value, std_error: None, ci: None }
    }

    pub fn lo(&self) -> Option<S> {
        self.ci.map(|c| c.0)
    }

    pub fn hi(&self) -> Option<S> {
        self.ci.map(|c| c.1)
    }

    /// Half width of the interval, zero for exact values.
    pub fn half_width(&self) -> S {
        self.ci.map_or(S::zero(), |(lo, hi)| (hi - lo) / S::of(2.0))
    }

    /// True when the two intervals touch.
    pub fn overlaps(&self, other: &Estimate<S>) -> bool {
        self.value - self.half_width() <= other.value + other.half_width()
            && other.value - other.half_width() <= self.value + self.half_width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PhaseMetrics<S> {
    pub phase: Phase,
    pub label: String,
    pub probability: Estimate<S>,
    /// Mean sojourn per visit, in cycles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sojourn: Option<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AccessMetrics<S> {
    pub bw: Estimate<S>,
    pub l: Estimate<S>,
    pub w: Estimate<S>,
    /// Requests per cycle.
    pub rate: Estimate<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PeMetrics<S> {
    pub name: String,
    pub priority: i64,
    pub bw: Estimate<S>,
    pub pu: Estimate<S>,
    pub l: Estimate<S>,
    pub w: Estimate<S>,
    pub rate: Estimate<S>,
    pub phases: Vec<PhaseMetrics<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<AccessMetrics<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<AccessMetrics<S>>,
}

impl<S: Scalar> PeMetrics<S> {
    pub fn phase(&self, phase: Phase) -> Option<&PhaseMetrics<S>> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    pub fn access(&self, access: Access) -> Option<&AccessMetrics<S>> {
        match access {
            Access::Local => self.local.as_ref(),
            Access::Global => self.global.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MemoryMetrics<S> {
    pub name: String,
    pub bw: Estimate<S>,
    pub l: Estimate<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BusMetrics<S> {
    pub name: String,
    pub utilization: Estimate<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulation,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MetricsReport<S> {
    pub kind: ArchKind,
    pub source: Source,
    /// Zero for oracle reports.
    pub measured_cycles: u64,
    pub batches: usize,
    pub pes: Vec<PeMetrics<S>>,
    pub memories: Vec<MemoryMetrics<S>>,
    pub buses: Vec<BusMetrics<S>>,
}

impl<S: Scalar> MetricsReport<S> {
    pub fn pe(&self, name: &str) -> Option<&PeMetrics<S>> {
        self.pes.iter().find(|p| p.name == name)
    }
}

/// Per-cycle stationary quantities from which every metric follows. Both the
/// simulator counters and the exact solver reduce to this.
#[derive(Debug, Clone)]
pub(crate) struct Occupancy<S> {
    /// `P(pe in phase)`.
    pub phase: Vec<[S; Phase::COUNT]>,
    /// Requests per cycle by access kind.
    pub rate: Vec<[S; 2]>,
    /// Mean wait per request; `None` when no request was observed.
    pub wait: Vec<[Option<S>; 2]>,
    /// Mean wait over both kinds.
    pub wait_all: Vec<Option<S>>,
    pub sojourn: Vec<[Option<S>; Phase::COUNT]>,
    pub bus_busy: Vec<S>,
}

impl<S: Scalar> Occupancy<S> {
    pub(crate) fn from_counts(c: &BatchCounts) -> Self {
        let cycles = S::of_count(c.cycles);
        let ratio = |num: u64, den: u64| (den > 0).then(|| S::of_count(num) / S::of_count(den));
        Self {
            phase: c
                .phase_cycles
                .iter()
                .map(|row| row.map(|k| S::of_count(k) / cycles))
                .collect(),
            rate: c.requests.iter().map(|r| r.map(|k| S::of_count(k) / cycles)).collect(),
            wait: c
                .wait_cycles
                .iter()
                .zip(&c.requests)
                .map(|(w, r)| [ratio(w[0], r[0]), ratio(w[1], r[1])])
                .collect(),
            wait_all: c
                .wait_cycles
                .iter()
                .zip(&c.requests)
                .map(|(w, r)| ratio(w[0] + w[1], r[0] + r[1]))
                .collect(),
            sojourn: (0..c.phase_cycles.len())
                .map(|pe| {
                    let mut s = [None; Phase::COUNT];
                    for (k, slot) in s.iter_mut().enumerate() {
                        *slot = ratio(c.phase_cycles[pe][k], c.entries[pe][k]);
                    }
                    s
                })
                .collect(),
            bus_busy: c.bus_busy.iter().map(|&b| S::of_count(b) / cycles).collect(),
        }
    }

    fn p(&self, pe: usize, phase: Phase) -> S {
        self.phase[pe][phase.index()]
    }

    fn bw(&self, pe: usize, a: Option<Access>) -> S {
        match a {
            Some(a) => self.p(pe, Phase::Ac(a)),
            None => Access::BOTH.iter().map(|&a| self.p(pe, Phase::Ac(a))).sum(),
        }
    }

    fn queue(&self, pe: usize, a: Option<Access>) -> S {
        let one = |a| self.p(pe, Phase::Fw(a)) + self.p(pe, Phase::Rw(a));
        match a {
            Some(a) => one(a),
            None => Access::BOTH.iter().map(|&a| one(a)).sum(),
        }
    }

    fn memory(&self, model: &Model, mem: usize, queue: bool) -> S {
        let mut total = S::zero();
        for (pe, p) in model.pes.iter().enumerate() {
            for &a in model.accesses() {
                if p.link(a).is_some_and(|l| l.memory == mem) {
                    total += if queue { self.queue(pe, Some(a)) } else { self.bw(pe, Some(a)) };
                }
            }
        }
        total
    }
}

/// Every reported scalar, addressed so that batch values can be collected.
#[derive(Debug, Clone, Copy)]
enum Metric {
    Bw(usize, Option<Access>),
    Pu(usize),
    Queue(usize, Option<Access>),
    Wait(usize, Option<Access>),
    Rate(usize, Option<Access>),
    Phase(usize, Phase),
    MemBw(usize),
    MemQueue(usize),
    Bus(usize),
}

impl Metric {
    fn eval<S: Scalar>(self, o: &Occupancy<S>, model: &Model) -> Option<S> {
        Some(match self {
            Metric::Bw(pe, a) => o.bw(pe, a),
            Metric::Pu(pe) => o.p(pe, Phase::Cp) + o.bw(pe, None),
            Metric::Queue(pe, a) => o.queue(pe, a),
            Metric::Wait(pe, None) => return o.wait_all[pe],
            Metric::Wait(pe, Some(a)) => return o.wait[pe][a.index()],
            Metric::Rate(pe, None) => o.rate[pe][0] + o.rate[pe][1],
            Metric::Rate(pe, Some(a)) => o.rate[pe][a.index()],
            Metric::Phase(pe, ph) => o.p(pe, ph),
            Metric::MemBw(m) => o.memory(model, m, false),
            Metric::MemQueue(m) => o.memory(model, m, true),
            Metric::Bus(b) => o.bus_busy[b],
        })
    }
}

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_95(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

struct Estimator<'a, S> {
    model: &'a Model,
    total: Occupancy<S>,
    batches: Vec<Occupancy<S>>,
    t: Option<S>,
}

impl<S: Scalar> Estimator<'_, S> {
    fn estimate(&self, metric: Metric) -> Estimate<S> {
        let value = metric.eval(&self.total, self.model).unwrap_or_else(S::zero);
        let Some(t) = self.t else { return Estimate::exact(value) };
        let xs: Vec<S> = self.batches.iter().filter_map(|b| metric.eval(b, self.model)).collect();
        if xs.len() < 2 {
            return Estimate::exact(value);
        }
        let n = S::of_count(xs.len() as u64);
        let mean = xs.iter().copied().sum::<S>() / n;
        let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / (n - S::one());
        let se = (var / n).sqrt();
        Estimate { value, std_error: Some(se), ci: Some((value - t * se, value + t * se)) }
    }
}

fn build_report<S: Scalar>(
    model: &Model,
    est: &dyn Fn(Metric) -> Estimate<S>,
    sojourn: &dyn Fn(usize, Phase) -> Option<S>,
    source: Source,
    measured_cycles: u64,
    batches: usize,
) -> MetricsReport<S> {
    let hbb = model.kind == ArchKind::Hbb;
    let pes = model
        .pes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let access = |a: Access| {
                p.link(a).map(|_| AccessMetrics {
                    bw: est(Metric::Bw(i, Some(a))),
                    l: est(Metric::Queue(i, Some(a))),
                    w: est(Metric::Wait(i, Some(a))),
                    rate: est(Metric::Rate(i, Some(a))),
                })
            };
            PeMetrics {
                name: p.name.clone(),
                priority: p.priority,
                bw: est(Metric::Bw(i, None)),
                pu: est(Metric::Pu(i)),
                l: est(Metric::Queue(i, None)),
                w: est(Metric::Wait(i, None)),
                rate: est(Metric::Rate(i, None)),
                phases: model
                    .phases()
                    .iter()
                    .map(|&ph| PhaseMetrics {
                        phase: ph,
                        label: ph.label(model.kind),
                        probability: est(Metric::Phase(i, ph)),
                        sojourn: sojourn(i, ph),
                    })
                    .collect(),
                local: if hbb { access(Access::Local) } else { None },
                global: if hbb { access(Access::Global) } else { None },
            }
        })
        .collect();
    MetricsReport {
        kind: model.kind,
        source,
        measured_cycles,
        batches,
        pes,
        memories: model
            .memories
            .iter()
            .enumerate()
            .map(|(m, name)| MemoryMetrics {
                name: name.clone(),
                bw: est(Metric::MemBw(m)),
                l: est(Metric::MemQueue(m)),
            })
            .collect(),
        buses: model
            .buses
            .iter()
            .enumerate()
            .map(|(b, name)| BusMetrics { name: name.clone(), utilization: est(Metric::Bus(b)) })
            .collect(),
    }
}

/// Report from simulation counters, with batch-means 95% intervals.
pub fn compute_report<S: Scalar>(
    acc: &OccupancyAccumulator,
    model: &Model,
) -> Result<MetricsReport<S>, MetricsError> {
    let totals = acc.totals();
    if totals.cycles == 0 {
        return Err(MetricsError::NoMeasuredCycles);
    }
    if totals.phase_cycles.len() != model.pes.len() {
        return Err(MetricsError::Shape {
            expected: model.pes.len(),
            found: totals.phase_cycles.len(),
        });
    }
    let batches: Vec<Occupancy<S>> = acc
        .batches
        .iter()
        .filter(|b| b.cycles > 0)
        .map(Occupancy::from_counts)
        .collect();
    let t = (batches.len() >= 2).then(|| S::of(t_quantile_95(batches.len() - 1)));
    let e = Estimator { model, total: Occupancy::from_counts(&totals), batches, t };
    Ok(build_report(
        model,
        &|m| e.estimate(m),
        &|pe, ph| e.total.sojourn[pe][ph.index()],
        Source::Simulation,
        totals.cycles,
        acc.batches.len(),
    ))
}

/// Report from exact stationary quantities (no intervals).
pub(crate) fn exact_report<S: Scalar>(model: &Model, occ: &Occupancy<S>) -> MetricsReport<S> {
    build_report(
        model,
        &|m| Estimate::exact(m.eval(occ, model).unwrap_or_else(S::zero)),
        &|pe, ph| occ.sojourn[pe][ph.index()],
        Source::Oracle,
        0,
        0,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LittleCheck {
    /// `(pe, access, residual)`; `access` is `None` for the PE as a whole.
    pub residuals: Vec<(String, Option<Access>, f64)>,
    pub max_residual: f64,
    pub warning: bool,
}

pub const LITTLE_THRESHOLD: f64 = 0.05;

/// Compares `L` with `λ·W` per PE, where `λ` is the request rate of the run.
pub fn littles_check<S: Scalar>(report: &MetricsReport<S>, acc: &OccupancyAccumulator) -> LittleCheck {
    let totals = acc.totals();
    let cycles = totals.cycles.max(1) as f64;
    let mut residuals = Vec::new();
    let residual = |l: f64, rate: f64, w: f64| {
        let lw = rate * w;
        if l == 0.0 && lw == 0.0 {
            0.0
        } else {
            (l - lw).abs() / l.max(1e-12)
        }
    };
    for (i, pe) in report.pes.iter().enumerate() {
        let req = totals.requests.get(i).copied().unwrap_or([0, 0]);
        let rate = (req[0] + req[1]) as f64 / cycles;
        residuals.push((
            pe.name.clone(),
            None,
            residual(pe.l.value.to_f64_lossy(), rate, pe.w.value.to_f64_lossy()),
        ));
        for a in Access::BOTH {
            if let Some(m) = pe.access(a) {
                let rate = req[a.index()] as f64 / cycles;
                residuals.push((
                    pe.name.clone(),
                    Some(a),
                    residual(m.l.value.to_f64_lossy(), rate, m.w.value.to_f64_lossy()),
                ));
            }
        }
    }
    let max_residual = residuals.iter().map(|r| r.2).fold(0.0, f64::max);
    LittleCheck { residuals, max_residual, warning: max_residual > LITTLE_THRESHOLD }
}
