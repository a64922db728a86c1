//! Architectures, processing-element automata and their transition guards.
//!
//! A PE automaton moves `CP → {AC, FW, RW}` when its computation ends and it
//! requests memory, `FW/RW → AC` once it is granted, and `AC → CP` when its
//! access completes. In the two-bus architecture the access-related phases
//! come in a local and a global flavour.
//!
//! The outcome of a request is decided by three guards evaluated against the
//! global state and the arbiter's decision for the cycle:
//!
//! * `alpha1`: the request was granted (every competing higher-priority
//!   request is absent and its buses are free);
//! * `sync_event`: another PE won a bus this request needs in the same cycle,
//!   so this PE waits that winner's full connection time;
//! * `alpha3`: a bus this request needs carries an access that was already in
//!   flight, so this PE waits the residual connection time.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::arbiter::{Access, BusSet};
use crate::arbiter::{GrantDecision, PriorityOrder};
use crate::stochastics::{fit_two_moment, Fit, FitError, MomentPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("at least one PE required")]
    NoPes,
    #[error("pes[{index}].priority: duplicate priority {priority} (also used by {other})")]
    DuplicatePriority { index: usize, priority: i64, other: String },
    #[error("pes[{index}].name: duplicate PE name {name:?}")]
    DuplicateName { index: usize, name: String },
    #[error("pes[{index}].{field}: {source}")]
    Moments { index: usize, field: &'static str, source: FitError },
    #[error("pes[{index}].{field}: required for {kind} architectures")]
    MissingField { index: usize, field: &'static str, kind: ArchKind },
    #[error("pes[{index}].{field}: not used by {kind} architectures")]
    UnexpectedField { index: usize, field: &'static str, kind: ArchKind },
    #[error("pes[{index}].local_prob: {value} outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("pes[{index}].bus: unknown bus {bus:?}")]
    UnknownBus { index: usize, bus: String },
    #[error("{kind} architecture needs exactly {expected} {what}, found {found}")]
    Count { kind: ArchKind, what: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("PE {pe} has no pending request")]
    NoPendingRequest { pe: usize },
    #[error("PE {pe} was neither granted nor blocked; arbitration is not work-conserving")]
    Unblocked { pe: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Ssb,
    Hbb,
}

impl ArchKind {
    pub fn bus_count(self) -> usize {
        match self {
            ArchKind::Ssb => 1,
            ArchKind::Hbb => 2,
        }
    }

    fn default_names(self, prefix: &str) -> Vec<String> {
        match self {
            ArchKind::Ssb => vec![prefix.to_string()],
            ArchKind::Hbb => vec![format!("{prefix}1"), format!("{prefix}2")],
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Ssb => "SSB",
            ArchKind::Hbb => "HBB",
        })
    }
}

/// Parameters of one processing element as written in a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeParams {
    pub name: String,
    /// Larger value means higher priority.
    pub priority: i64,
    /// Computation time between requests.
    pub compute: MomentPair,
    /// Home bus; defaults to the first bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<String>,
    /// Connection time on the single shared bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connect: Option<MomentPair>,
    /// Probability that a request is local; the rest are global.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_connect: Option<MomentPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_connect: Option<MomentPair>,
}

impl PeParams {
    pub fn ssb(name: &str, priority: i64, compute: MomentPair, connect: MomentPair) -> Self {
        Self {
            name: name.to_string(),
            priority,
            compute,
            bus: None,
            connect: Some(connect),
            local_prob: None,
            local_connect: None,
            global_connect: None,
        }
    }

    pub fn hbb(
        name: &str,
        priority: i64,
        bus: &str,
        compute: MomentPair,
        local_prob: f64,
        local_connect: MomentPair,
        global_connect: MomentPair,
    ) -> Self {
        Self {
            name: name.to_string(),
            priority,
            compute,
            bus: Some(bus.to_string()),
            connect: None,
            local_prob: Some(local_prob),
            local_connect: Some(local_connect),
            global_connect: Some(global_connect),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buses: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memories: Vec<String>,
    pub pes: Vec<PeParams>,
}

impl ArchitectureSpec {
    pub fn ssb(pes: Vec<PeParams>) -> Self {
        Self { kind: ArchKind::Ssb, buses: Vec::new(), memories: Vec::new(), pes }
    }

    pub fn hbb(pes: Vec<PeParams>) -> Self {
        Self { kind: ArchKind::Hbb, buses: Vec::new(), memories: Vec::new(), pes }
    }
}

/// Connection parameters of one request kind of one PE.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub moments: MomentPair,
    pub fit: Fit,
    pub resources: BusSet,
    pub memory: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pe {
    pub name: String,
    pub priority: i64,
    pub bus: usize,
    pub compute_moments: MomentPair,
    pub compute: Fit,
    pub local_prob: f64,
    pub links: [Option<Link>; 2],
}

impl Pe {
    pub fn link(&self, access: Access) -> Option<&Link> {
        self.links[access.index()].as_ref()
    }
}

/// A validated architecture, PEs sorted by ascending priority.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ArchKind,
    pub buses: Vec<String>,
    pub memories: Vec<String>,
    pub pes: Vec<Pe>,
    pub priority: PriorityOrder,
}

impl Model {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn pe_index(&self, name: &str) -> Option<usize> {
        self.pes.iter().position(|p| p.name == name)
    }

    pub fn resources(&self, pe: usize, access: Access) -> BusSet {
        self.pes[pe]
            .link(access)
            .map_or(BusSet::EMPTY, |l| l.resources)
    }

    /// Request kinds this model can produce.
    pub fn accesses(&self) -> &'static [Access] {
        match self.kind {
            ArchKind::Ssb => &[Access::Local],
            ArchKind::Hbb => &Access::BOTH,
        }
    }

    pub fn phases(&self) -> &'static [Phase] {
        match self.kind {
            ArchKind::Ssb => &Phase::SSB,
            ArchKind::Hbb => &Phase::ALL,
        }
    }
}

fn fit_field(index: usize, field: &'static str, m: &MomentPair) -> Result<Fit, ModelError> {
    fit_two_moment(m).map_err(|source| ModelError::Moments { index, field, source })
}

/// Checks every architecture invariant and fits all duration distributions.
pub fn validate_architecture(spec: &ArchitectureSpec) -> Result<Model, ModelError> {
    let kind = spec.kind;
    let nbus = kind.bus_count();
    let buses = if spec.buses.is_empty() { kind.default_names("BUS") } else { spec.buses.clone() };
    let memories = if spec.memories.is_empty() {
        kind.default_names("MEM")
    } else {
        spec.memories.clone()
    };
    if buses.len() != nbus {
        return Err(ModelError::Count { kind, what: "buses", expected: nbus, found: buses.len() });
    }
    if memories.len() != nbus {
        return Err(ModelError::Count {
            kind,
            what: "memories",
            expected: nbus,
            found: memories.len(),
        });
    }
    if spec.pes.is_empty() {
        return Err(ModelError::NoPes);
    }

    let mut by_priority: HashMap<i64, &str> = HashMap::new();
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    let mut pes = Vec::with_capacity(spec.pes.len());
    for (index, p) in spec.pes.iter().enumerate() {
        if let Some(other) = by_priority.insert(p.priority, &p.name) {
            return Err(ModelError::DuplicatePriority {
                index,
                priority: p.priority,
                other: other.to_string(),
            });
        }
        if by_name.insert(&p.name, index).is_some() {
            return Err(ModelError::DuplicateName { index, name: p.name.clone() });
        }
        let bus = match &p.bus {
            None => 0,
            Some(b) => buses
                .iter()
                .position(|x| x == b)
                .ok_or_else(|| ModelError::UnknownBus { index, bus: b.clone() })?,
        };
        let compute = fit_field(index, "compute", &p.compute)?;
        let missing = |field| ModelError::MissingField { index, field, kind };
        let unexpected = |field| ModelError::UnexpectedField { index, field, kind };

        let (local_prob, links) = match kind {
            ArchKind::Ssb => {
                if p.local_prob.is_some() {
                    return Err(unexpected("local_prob"));
                }
                if p.local_connect.is_some() {
                    return Err(unexpected("local_connect"));
                }
                if p.global_connect.is_some() {
                    return Err(unexpected("global_connect"));
                }
                let m = p.connect.ok_or_else(|| missing("connect"))?;
                let link = Link {
                    moments: m,
                    fit: fit_field(index, "connect", &m)?,
                    resources: BusSet::single(0),
                    memory: 0,
                };
                (1.0, [Some(link), None])
            }
            ArchKind::Hbb => {
                if p.connect.is_some() {
                    return Err(unexpected("connect"));
                }
                let x = p.local_prob.ok_or_else(|| missing("local_prob"))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(ModelError::Probability { index, value: x });
                }
                let local = match p.local_connect {
                    Some(m) => Some(Link {
                        moments: m,
                        fit: fit_field(index, "local_connect", &m)?,
                        resources: BusSet::single(bus),
                        memory: bus,
                    }),
                    None if x > 0.0 => return Err(missing("local_connect")),
                    None => None,
                };
                let global = match p.global_connect {
                    Some(m) => Some(Link {
                        moments: m,
                        fit: fit_field(index, "global_connect", &m)?,
                        resources: BusSet::all(2),
                        memory: 1 - bus,
                    }),
                    None if x < 1.0 => return Err(missing("global_connect")),
                    None => None,
                };
                (x, [local, global])
            }
        };
        pes.push(Pe {
            name: p.name.clone(),
            priority: p.priority,
            bus,
            compute_moments: p.compute,
            compute,
            local_prob,
            links,
        });
    }
    pes.sort_by_key(|p| p.priority);
    let ranks: Vec<u64> = (1..=pes.len() as u64).collect();
    let priority = match kind {
        ArchKind::Ssb => PriorityOrder::local_only(&ranks),
        ArchKind::Hbb => PriorityOrder::globals_first(&ranks),
    };
    Ok(Model { kind, buses, memories, pes, priority })
}

/// Local state of one PE automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Cp,
    Ac(Access),
    Fw(Access),
    Rw(Access),
}

impl Phase {
    pub const COUNT: usize = 7;
    pub const SSB: [Phase; 4] = [
        Phase::Cp,
        Phase::Ac(Access::Local),
        Phase::Fw(Access::Local),
        Phase::Rw(Access::Local),
    ];
    pub const ALL: [Phase; 7] = [
        Phase::Cp,
        Phase::Ac(Access::Local),
        Phase::Fw(Access::Local),
        Phase::Rw(Access::Local),
        Phase::Ac(Access::Global),
        Phase::Fw(Access::Global),
        Phase::Rw(Access::Global),
    ];

    pub fn index(self) -> usize {
        match self {
            Phase::Cp => 0,
            Phase::Ac(a) => 1 + 3 * a.index(),
            Phase::Fw(a) => 2 + 3 * a.index(),
            Phase::Rw(a) => 3 + 3 * a.index(),
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    pub fn access(self) -> Option<Access> {
        match self {
            Phase::Cp => None,
            Phase::Ac(a) | Phase::Fw(a) | Phase::Rw(a) => Some(a),
        }
    }

    pub fn is_waiting(self) -> bool {
        matches!(self, Phase::Fw(_) | Phase::Rw(_))
    }

    pub fn is_accessing(self) -> bool {
        matches!(self, Phase::Ac(_))
    }

    /// `CP`, `AC`, ... for single-bus models; `lAC`, `gFW`, ... otherwise.
    pub fn label(self, kind: ArchKind) -> String {
        let base = match self {
            Phase::Cp => return "CP".to_string(),
            Phase::Ac(_) => "AC",
            Phase::Fw(_) => "FW",
            Phase::Rw(_) => "RW",
        };
        match (kind, self.access()) {
            (ArchKind::Ssb, _) => base.to_string(),
            (ArchKind::Hbb, Some(Access::Local)) => format!("l{base}"),
            (ArchKind::Hbb, _) => format!("g{base}"),
        }
    }
}

/// The global state: every PE's phase plus bus ownership and timers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalState {
    pub phases: Vec<Phase>,
    /// Cycles left in the current `CP` or `AC` sojourn, counting the current
    /// cycle; zero while waiting.
    pub remaining: Vec<u64>,
    pub holders: Vec<Option<usize>>,
    /// Cycle at which the outstanding request was issued.
    pub issued_at: Vec<Option<u64>>,
}

impl GlobalState {
    pub fn idle(pes: usize, buses: usize) -> Self {
        Self {
            phases: vec![Phase::Cp; pes],
            remaining: vec![0; pes],
            holders: vec![None; buses],
            issued_at: vec![None; pes],
        }
    }

    pub fn busy(&self) -> BusSet {
        BusSet::from_buses(
            self.holders
                .iter()
                .enumerate()
                .filter_map(|(b, h)| h.map(|_| b)),
        )
    }

    /// Checks mutual exclusion and the consistency of holders with phases.
    pub fn check(&self, model: &Model) -> Result<(), String> {
        if self.phases.len() != model.pes.len() {
            return Err(format!("{} phases for {} PEs", self.phases.len(), model.pes.len()));
        }
        let mut held = vec![None; model.bus_count()];
        for (pe, phase) in self.phases.iter().enumerate() {
            if let Phase::Ac(a) = *phase {
                for b in model.resources(pe, a).iter() {
                    if let Some(other) = held[b] {
                        return Err(format!("bus {b} held by PE {other} and PE {pe}"));
                    }
                    held[b] = Some(pe);
                }
                if self.remaining[pe] == 0 {
                    return Err(format!("PE {pe} accessing with no remaining cycles"));
                }
            }
            if *phase == Phase::Cp && self.remaining[pe] == 0 {
                return Err(format!("PE {pe} computing with no remaining cycles"));
            }
        }
        if held != self.holders {
            return Err(format!("holders {:?} disagree with phases {:?}", self.holders, held));
        }
        Ok(())
    }
}

/// Guard values for one pending request after an arbitration pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionGuardResult {
    pub alpha1_enabled: bool,
    pub alpha3_enabled: bool,
    pub sync_event: Option<usize>,
}

/// Evaluates the guards of `pe`'s request on `resources`.
///
/// `in_flight` is the set of buses held by accesses that started in earlier
/// cycles, i.e. the busy set the arbiter scanned against.
pub fn evaluate_guards(
    pe: usize,
    resources: BusSet,
    in_flight: BusSet,
    decision: &GrantDecision,
) -> TransitionGuardResult {
    let alpha1_enabled = decision.is_granted(pe);
    let sync_event = if alpha1_enabled { None } else { decision.winner_over(resources) };
    TransitionGuardResult {
        alpha1_enabled,
        alpha3_enabled: resources.overlaps(in_flight),
        sync_event,
    }
}

/// Next phase of a PE with a pending request.
///
/// `current` is `CP` for a request issued this cycle, otherwise the waiting
/// phase the PE is in. The first matching rule wins: a grant gives `AC`; a
/// same-cycle winner on a needed bus gives `FW`, also for a PE that was
/// already waiting; an in-flight access leaves a waiting PE where it is and
/// sends a fresh request to `RW`.
pub fn classify_request(
    pe: usize,
    current: Phase,
    request: Option<Access>,
    guards: &TransitionGuardResult,
) -> Result<Phase, ClassifyError> {
    let access = request.ok_or(ClassifyError::NoPendingRequest { pe })?;
    if guards.alpha1_enabled {
        Ok(Phase::Ac(access))
    } else if guards.sync_event.is_some() {
        Ok(Phase::Fw(access))
    } else if guards.alpha3_enabled {
        Ok(if current.is_waiting() { current } else { Phase::Rw(access) })
    } else {
        Err(ClassifyError::Unblocked { pe })
    }
}
