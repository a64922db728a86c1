//! Cycle-synchronous simulation of the PE automata sharing the buses.
//!
//! Every cycle runs the same micro-order:
//!
//! 1. timers of computing and accessing PEs tick; finished accesses release
//!    their buses and the holder starts a fresh computation;
//! 2. PEs whose computation finished issue a request (in the two-bus
//!    architecture a local one with probability `local_prob`, else global);
//! 3. the arbiter scans all pending requests, new and waiting;
//! 4. each pending request is classified into `AC`, `FW` or `RW`; granted PEs
//!    sample their connection time, which includes the grant cycle;
//! 5. the phase of every PE is recorded for this cycle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{grant, Access, Request};
use crate::model::{classify_request, evaluate_guards, GlobalState, Model, Phase};
use crate::stochastics::{Purpose, RngStream, StreamId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("warmup ({warmup}) must be shorter than the run ({total} cycles)")]
    WarmupTooLong { warmup: u64, total: u64 },
    #[error("at least one batch required")]
    NoBatches,
    #[error("{measured} measured cycles do not split into {batches} equal non-empty batches")]
    UnevenBatches { measured: u64, batches: usize },
}

pub const DEFAULT_BATCHES: usize = 30;
pub const DEFAULT_SEED: u64 = 0x5A_B0_55_EE_D0_00_20_08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub total_cycles: u64,
    pub warmup_cycles: u64,
    pub batches: usize,
    pub seed: u64,
}

impl SimConfig {
    /// About `measured` recorded cycles after a warmup of 10% of the whole
    /// run. The measured span is rounded down to a multiple of `batches`.
    pub fn measured(measured: u64, batches: usize, seed: u64) -> Self {
        let batches = batches.max(1);
        let measured = (measured / batches as u64).max(1) * batches as u64;
        let warmup = measured / 9;
        Self { total_cycles: measured + warmup, warmup_cycles: warmup, batches, seed }
    }

    pub fn measured_cycles(&self) -> u64 {
        self.total_cycles.saturating_sub(self.warmup_cycles)
    }

    pub fn batch_len(&self) -> u64 {
        self.measured_cycles() / self.batches.max(1) as u64
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.batches == 0 {
            return Err(EngineError::NoBatches);
        }
        if self.warmup_cycles >= self.total_cycles {
            return Err(EngineError::WarmupTooLong {
                warmup: self.warmup_cycles,
                total: self.total_cycles,
            });
        }
        let measured = self.measured_cycles();
        if !measured.is_multiple_of(self.batches as u64) || measured < self.batches as u64 {
            return Err(EngineError::UnevenBatches { measured, batches: self.batches });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub pe: usize,
    pub access: Access,
    pub duration: u64,
    pub wait: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub pe: usize,
    pub access: Access,
    /// Cycles the access actually occupied its buses.
    pub held: u64,
}

/// What happened in one cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepEvents {
    pub cycle: u64,
    pub requests: Vec<(usize, Access)>,
    pub grants: Vec<Grant>,
    pub completions: Vec<Completion>,
    /// PEs that started a new sojourn this cycle, including `FW` re-entries.
    pub entered: Vec<bool>,
}

/// Counters for one batch of cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCounts {
    pub cycles: u64,
    pub phase_cycles: Vec<[u64; Phase::COUNT]>,
    pub entries: Vec<[u64; Phase::COUNT]>,
    pub requests: Vec<[u64; 2]>,
    pub grants: Vec<[u64; 2]>,
    pub wait_cycles: Vec<[u64; 2]>,
    pub bus_busy: Vec<u64>,
}

impl BatchCounts {
    pub fn new(pes: usize, buses: usize) -> Self {
        Self {
            cycles: 0,
            phase_cycles: vec![[0; Phase::COUNT]; pes],
            entries: vec![[0; Phase::COUNT]; pes],
            requests: vec![[0; 2]; pes],
            grants: vec![[0; 2]; pes],
            wait_cycles: vec![[0; 2]; pes],
            bus_busy: vec![0; buses],
        }
    }

    pub fn record(&mut self, state: &GlobalState, events: &StepEvents) {
        self.cycles += 1;
        for (pe, phase) in state.phases.iter().enumerate() {
            self.phase_cycles[pe][phase.index()] += 1;
            if events.entered[pe] {
                self.entries[pe][phase.index()] += 1;
            }
        }
        for &(pe, a) in &events.requests {
            self.requests[pe][a.index()] += 1;
        }
        for g in &events.grants {
            self.grants[g.pe][g.access.index()] += 1;
            self.wait_cycles[g.pe][g.access.index()] += g.wait;
        }
        for (b, h) in state.holders.iter().enumerate() {
            if h.is_some() {
                self.bus_busy[b] += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &BatchCounts) {
        fn add<const K: usize>(a: &mut [[u64; K]], b: &[[u64; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for (u, v) in x.iter_mut().zip(y) {
                    *u += v;
                }
            }
        }
        self.cycles += other.cycles;
        add(&mut self.phase_cycles, &other.phase_cycles);
        add(&mut self.entries, &other.entries);
        add(&mut self.requests, &other.requests);
        add(&mut self.grants, &other.grants);
        add(&mut self.wait_cycles, &other.wait_cycles);
        for (x, y) in self.bus_busy.iter_mut().zip(&other.bus_busy) {
            *x += y;
        }
    }

    /// Mean sojourn of `pe` in `phase`, in cycles.
    pub fn mean_sojourn(&self, pe: usize, phase: Phase) -> Option<f64> {
        let n = self.entries[pe][phase.index()];
        (n > 0).then(|| self.phase_cycles[pe][phase.index()] as f64 / n as f64)
    }
}

/// Per-batch counters of a simulation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyAccumulator {
    pub batches: Vec<BatchCounts>,
}

impl OccupancyAccumulator {
    pub fn totals(&self) -> BatchCounts {
        let mut it = self.batches.iter();
        let mut acc = it.next().cloned().unwrap_or_else(|| BatchCounts::new(0, 0));
        for b in it {
            acc.merge(b);
        }
        acc
    }

    pub fn measured_cycles(&self) -> u64 {
        self.batches.iter().map(|b| b.cycles).sum()
    }

    /// The same counts folded into a single batch.
    pub fn merged(&self) -> Self {
        Self { batches: vec![self.totals()] }
    }
}

#[derive(Debug, Clone)]
struct PeStreams {
    compute: RngStream,
    connect: [RngStream; 2],
    kind: RngStream,
}

/// Cycle-by-cycle simulator of one model.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    model: &'m Model,
    state: GlobalState,
    streams: Vec<PeStreams>,
    cycle: u64,
}

impl<'m> Simulator<'m> {
    /// All PEs start computing with freshly sampled computation times.
    pub fn new(model: &'m Model, seed: u64) -> Self {
        let stream = |pe, purpose| RngStream::new(seed, StreamId { pe, purpose });
        let mut streams: Vec<PeStreams> = (0..model.pes.len())
            .map(|pe| PeStreams {
                compute: stream(pe, Purpose::Compute),
                connect: [stream(pe, Purpose::LocalConnect), stream(pe, Purpose::GlobalConnect)],
                kind: stream(pe, Purpose::RequestKind),
            })
            .collect();
        let mut state = GlobalState::idle(model.pes.len(), model.bus_count());
        for (pe, p) in model.pes.iter().enumerate() {
            state.remaining[pe] = p.compute.distribution.sample(&mut streams[pe].compute);
        }
        Self { model, state, streams, cycle: 0 }
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Index of the next cycle to be simulated.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn advance_cycle(&mut self) -> StepEvents {
        let model = self.model;
        let t = self.cycle;
        let n = model.pes.len();
        let st = &mut self.state;
        let mut ev = StepEvents { cycle: t, entered: vec![false; n], ..StepEvents::default() };
        let mut fresh: Vec<Option<Access>> = vec![None; n];

        for pe in 0..n {
            match st.phases[pe] {
                Phase::Ac(a) => {
                    st.remaining[pe] -= 1;
                    if st.remaining[pe] == 0 {
                        let resources = model.resources(pe, a);
                        for b in resources.iter() {
                            st.holders[b] = None;
                        }
                        ev.completions.push(Completion { pe, access: a, held: 0 });
                        st.phases[pe] = Phase::Cp;
                        st.remaining[pe] =
                            model.pes[pe].compute.distribution.sample(&mut self.streams[pe].compute);
                        ev.entered[pe] = true;
                    }
                }
                Phase::Cp => {
                    st.remaining[pe] -= 1;
                    if st.remaining[pe] == 0 {
                        let p = &model.pes[pe];
                        let access = if p.link(Access::Global).is_none()
                            || self.streams[pe].kind.bernoulli(p.local_prob)
                        {
                            Access::Local
                        } else {
                            Access::Global
                        };
                        fresh[pe] = Some(access);
                        st.issued_at[pe] = Some(t);
                        ev.requests.push((pe, access));
                    }
                }
                Phase::Fw(_) | Phase::Rw(_) => {}
            }
        }

        let in_flight = st.busy();
        let pending: Vec<Request> = (0..n)
            .filter_map(|pe| {
                let access = fresh[pe].or_else(|| {
                    st.phases[pe].is_waiting().then(|| st.phases[pe].access()).flatten()
                })?;
                Some(Request {
                    pe,
                    access,
                    resources: model.resources(pe, access),
                    issued_at: st.issued_at[pe].expect("pending request has an issue cycle"),
                })
            })
            .collect();
        if !pending.is_empty() {
            let decision = grant(&pending, in_flight, &model.priority, model.bus_count())
                .expect("validated model produces well-formed requests");
            for r in &pending {
                let guards = evaluate_guards(r.pe, r.resources, in_flight, &decision);
                let current = st.phases[r.pe];
                let next = classify_request(r.pe, current, Some(r.access), &guards)
                    .expect("arbitration is work-conserving");
                if let Phase::Ac(a) = next {
                    let link = model.pes[r.pe].link(a).expect("granted link exists");
                    let duration = link.fit.distribution.sample(&mut self.streams[r.pe].connect[a.index()]);
                    st.remaining[r.pe] = duration;
                    for b in r.resources.iter() {
                        st.holders[b] = Some(r.pe);
                    }
                    ev.grants.push(Grant { pe: r.pe, access: a, duration, wait: t - r.issued_at });
                    st.issued_at[r.pe] = None;
                }
                ev.entered[r.pe] =
                    next != current || (matches!(next, Phase::Fw(_)) && guards.sync_event.is_some());
                st.phases[r.pe] = next;
            }
        }
        debug_assert_eq!(st.check(model), Ok(()), "cycle {t}");
        self.cycle += 1;
        ev
    }
}

/// Tracks how long each access really held its buses.
#[derive(Debug, Clone, Default)]
pub struct HoldTracker {
    started: Vec<Option<(u64, u64)>>,
}

impl HoldTracker {
    pub fn new(pes: usize) -> Self {
        Self { started: vec![None; pes] }
    }

    /// Fills `held` on completions and returns `(sampled, held)` pairs for
    /// every access that finished this cycle.
    pub fn observe(&mut self, ev: &mut StepEvents) -> Vec<(u64, u64)> {
        let mut done = Vec::new();
        for c in &mut ev.completions {
            if let Some((start, sampled)) = self.started[c.pe].take() {
                c.held = ev.cycle - start;
                done.push((sampled, c.held));
            }
        }
        for g in &ev.grants {
            self.started[g.pe] = Some((ev.cycle, g.duration));
        }
        done
    }
}

/// Runs the warmup and the measured batches.
pub fn simulate(model: &Model, config: &SimConfig) -> Result<OccupancyAccumulator, EngineError> {
    config.validate()?;
    let mut sim = Simulator::new(model, config.seed);
    for _ in 0..config.warmup_cycles {
        sim.advance_cycle();
    }
    let (n, buses) = (model.pes.len(), model.bus_count());
    let batch_len = config.batch_len();
    let mut batches = Vec::with_capacity(config.batches);
    for _ in 0..config.batches {
        let mut counts = BatchCounts::new(n, buses);
        for _ in 0..batch_len {
            let ev = sim.advance_cycle();
            counts.record(sim.state(), &ev);
        }
        batches.push(counts);
    }
    Ok(OccupancyAccumulator { batches })
}
