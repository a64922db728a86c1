//! Fixed-priority, non-preemptive bus arbitration.
//!
//! The arbiter sees every pending request of the current cycle and the set of
//! buses already carrying an access. It scans requests from the highest
//! priority down and grants each one whose whole bus set is free, marking
//! those buses busy for the rest of the scan. On a single bus this is the
//! classic N-user one-server arbiter; with two buses it also performs the
//! atomic two-bus grant that a global request needs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArbiterError {
    #[error("request from PE {pe} names bus set {resources} outside the {buses} architecture buses")]
    UnknownBus { pe: usize, resources: BusSet, buses: usize },
    #[error("request from PE {pe} has an empty bus set")]
    EmptyRequest { pe: usize },
    #[error("PE {pe} has more than one pending request")]
    DuplicateRequest { pe: usize },
    #[error("no priority rank for PE {pe} ({access:?} request)")]
    UnrankedRequest { pe: usize, access: Access },
}

/// Small set of bus indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BusSet(u32);

impl BusSet {
    pub const EMPTY: BusSet = BusSet(0);

    pub fn single(bus: usize) -> Self {
        BusSet(1 << bus)
    }

    pub fn all(buses: usize) -> Self {
        BusSet(((1u64 << buses) - 1) as u32)
    }

    pub fn from_buses(buses: impl IntoIterator<Item = usize>) -> Self {
        buses.into_iter().fold(Self::EMPTY, |s, b| s.with(b))
    }

    pub fn with(self, bus: usize) -> Self {
        BusSet(self.0 | 1 << bus)
    }

    pub fn union(self, other: BusSet) -> Self {
        BusSet(self.0 | other.0)
    }

    pub fn overlaps(self, other: BusSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn contains(self, bus: usize) -> bool {
        self.0 >> bus & 1 == 1
    }

    pub fn is_subset(self, other: BusSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&b| self.contains(b))
    }
}

impl fmt::Display for BusSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, b) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "}}")
    }
}

/// Kind of memory request. Single-bus architectures only issue local ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Local = 0,
    Global = 1,
}

impl Access {
    pub const BOTH: [Access; 2] = [Access::Local, Access::Global];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub pe: usize,
    pub access: Access,
    pub resources: BusSet,
    pub issued_at: u64,
}

/// Total order over `(pe, access)` pairs; a larger rank wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityOrder {
    ranks: Vec<[Option<u64>; 2]>,
}

impl PriorityOrder {
    /// One rank per PE, local requests only. `ranks[i]` must be distinct.
    pub fn local_only(ranks: &[u64]) -> Self {
        Self { ranks: ranks.iter().map(|&r| [Some(r), None]).collect() }
    }

    /// Every global request outranks every local one; within a kind the PE
    /// ranks decide.
    pub fn globals_first(ranks: &[u64]) -> Self {
        let top = ranks.iter().copied().max().map_or(0, |m| m + 1);
        Self {
            ranks: ranks.iter().map(|&r| [Some(r), Some(top + r)]).collect(),
        }
    }

    pub fn rank(&self, pe: usize, access: Access) -> Option<u64> {
        self.ranks.get(pe).and_then(|r| r[access.index()])
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GrantDecision {
    /// Granted requests in scan order, with the buses each one now holds.
    pub granted: Vec<(usize, BusSet)>,
    pub still_pending: Vec<usize>,
}

impl GrantDecision {
    pub fn is_granted(&self, pe: usize) -> bool {
        self.granted.iter().any(|&(p, _)| p == pe)
    }

    /// Highest-priority PE granted this cycle on a bus that `resources` touches.
    pub fn winner_over(&self, resources: BusSet) -> Option<usize> {
        self.granted
            .iter()
            .find(|&&(_, held)| held.overlaps(resources))
            .map(|&(pe, _)| pe)
    }

    pub fn newly_busy(&self) -> BusSet {
        self.granted.iter().fold(BusSet::EMPTY, |s, &(_, r)| s.union(r))
    }
}

/// One arbitration pass.
///
/// Buses in `busy` carry in-flight accesses and are never granted. A request
/// whose bus set is unavailable does not reserve anything for itself, so a
/// lower-priority request on a disjoint free bus can still go ahead.
pub fn grant(
    pending: &[Request],
    busy: BusSet,
    order: &PriorityOrder,
    buses: usize,
) -> Result<GrantDecision, ArbiterError> {
    let universe = BusSet::all(buses);
    let mut ranked = Vec::with_capacity(pending.len());
    for (i, r) in pending.iter().enumerate() {
        if r.resources.is_empty() {
            return Err(ArbiterError::EmptyRequest { pe: r.pe });
        }
        if !r.resources.is_subset(universe) {
            return Err(ArbiterError::UnknownBus { pe: r.pe, resources: r.resources, buses });
        }
        if pending[..i].iter().any(|q| q.pe == r.pe) {
            return Err(ArbiterError::DuplicateRequest { pe: r.pe });
        }
        let rank = order
            .rank(r.pe, r.access)
            .ok_or(ArbiterError::UnrankedRequest { pe: r.pe, access: r.access })?;
        ranked.push((rank, r));
    }
    ranked.sort_by_key(|r| std::cmp::Reverse(r.0));

    let mut taken = busy;
    let mut decision = GrantDecision::default();
    for (_, r) in ranked {
        if r.resources.overlaps(taken) {
            decision.still_pending.push(r.pe);
        } else {
            taken = taken.union(r.resources);
            decision.granted.push((r.pe, r.resources));
        }
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn local(pe: usize, bus: usize) -> Request {
        Request { pe, access: Access::Local, resources: BusSet::single(bus), issued_at: 0 }
    }

    fn global(pe: usize) -> Request {
        Request { pe, access: Access::Global, resources: BusSet::all(2), issued_at: 0 }
    }

    #[test]
    fn highest_priority_wins_free_bus() {
        let order = PriorityOrder::local_only(&[1, 2, 3]);
        let d = grant(&[local(0, 0), local(2, 0)], BusSet::EMPTY, &order, 1).unwrap();
        assert_eq!(d.granted, vec![(2, BusSet::single(0))]);
        assert_eq!(d.still_pending, vec![0]);
    }

    #[test]
    fn busy_bus_grants_nothing() {
        let order = PriorityOrder::local_only(&[1, 2, 3]);
        let d = grant(&[local(0, 0), local(1, 0), local(2, 0)], BusSet::single(0), &order, 1)
            .unwrap();
        assert!(d.granted.is_empty());
        assert_eq!(d.still_pending, vec![2, 1, 0]);
    }

    #[test]
    fn empty_pending_empty_decision() {
        let order = PriorityOrder::local_only(&[1]);
        assert_eq!(grant(&[], BusSet::EMPTY, &order, 1).unwrap(), GrantDecision::default());
    }

    #[test]
    fn stalled_global_does_not_block_local() {
        // PE11, PE12 on bus 0; PE21, PE22 on bus 1.
        let order = PriorityOrder::globals_first(&[1, 2, 3, 4]);
        let pending = [global(3), local(0, 0)];
        let d = grant(&pending, BusSet::single(1), &order, 2).unwrap();
        assert_eq!(d.granted, vec![(0, BusSet::single(0))]);
        assert_eq!(d.still_pending, vec![3]);
    }

    #[test]
    fn global_takes_both_buses() {
        let order = PriorityOrder::globals_first(&[1, 2, 3, 4]);
        let pending = [local(3, 1), global(0), local(1, 0)];
        let d = grant(&pending, BusSet::EMPTY, &order, 2).unwrap();
        // The lowest PE's global request outranks every local request.
        assert_eq!(d.granted, vec![(0, BusSet::all(2))]);
        assert_eq!(d.still_pending, vec![3, 1]);
    }

    #[test]
    fn rejects_unknown_bus() {
        let order = PriorityOrder::local_only(&[1]);
        assert!(matches!(
            grant(&[local(0, 1)], BusSet::EMPTY, &order, 1),
            Err(ArbiterError::UnknownBus { .. })
        ));
        let order = PriorityOrder::local_only(&[1, 2]);
        assert!(matches!(
            grant(&[global(0)], BusSet::EMPTY, &order, 2),
            Err(ArbiterError::UnrankedRequest { .. })
        ));
    }

    fn arb_request(pes: usize) -> impl Strategy<Value = (usize, bool, usize)> {
        (0..pes, any::<bool>(), 0..2usize)
    }

    proptest! {
        #[test]
        fn grant_invariants(
            raw in proptest::collection::vec(arb_request(6), 0..6),
            busy_bits in 0u32..4,
        ) {
            let order = PriorityOrder::globals_first(&[5, 1, 4, 2, 6, 3]);
            let mut pending: Vec<Request> = Vec::new();
            for (pe, is_global, bus) in raw {
                if pending.iter().any(|r| r.pe == pe) { continue; }
                pending.push(if is_global { global(pe) } else { local(pe, bus) });
            }
            let busy = BusSet(busy_bits);
            let d = grant(&pending, busy, &order, 2).unwrap();

            // non-preemption and pairwise disjoint grants
            let mut held = BusSet::EMPTY;
            for &(_, r) in &d.granted {
                prop_assert!(!r.overlaps(busy));
                prop_assert!(!r.overlaps(held));
                held = held.union(r);
            }
            // work conservation
            let after = busy.union(held);
            for pe in &d.still_pending {
                let r = pending.iter().find(|r| r.pe == *pe).unwrap();
                prop_assert!(r.resources.overlaps(after));
            }
            prop_assert_eq!(d.granted.len() + d.still_pending.len(), pending.len());
            // priority soundness for identical bus sets
            for s in &pending {
                if !d.is_granted(s.pe) { continue; }
                for r in &pending {
                    if r.resources == s.resources
                        && order.rank(r.pe, r.access) > order.rank(s.pe, s.access)
                    {
                        prop_assert!(d.is_granted(r.pe));
                    }
                }
            }
            // idempotence
            let rest: Vec<Request> = pending.iter().filter(|r| !d.is_granted(r.pe)).copied().collect();
            let again = grant(&rest, after, &order, 2).unwrap();
            prop_assert!(again.granted.is_empty());
        }
    }
}
