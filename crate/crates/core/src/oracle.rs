//! Exact stationary analysis for memoryless instances.
//!
//! When every computation and connection time is geometric, the vector of PE
//! phases is itself a discrete-time Markov chain: each computing or accessing
//! PE finishes in a cycle with probability `1/mean`, independently of the
//! others, and everything else in the cycle is decided by the same arbiter and
//! classification rules the simulator uses. This module enumerates the
//! reachable phase vectors, builds the one-cycle transition matrix and solves
//! for its stationary distribution.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::arbiter::{grant, Access, BusSet, Request};
use crate::metrics::{exact_report, MetricsReport, Occupancy};
use crate::model::{classify_request, evaluate_guards, Model, Phase};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{pe}: {what} time is not geometric; the exact solver needs memoryless durations")]
    NonGeometric { pe: String, what: &'static str },
    #[error("reachable state space exceeds the cap of {cap} states")]
    StateCap { cap: usize },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("linear system is singular at column {column}")]
    Singular { column: usize },
    #[error("stationary residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub state_cap: usize,
    /// Chains with fewer states are solved directly.
    pub dense_limit: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub residual_tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            state_cap: 100_000,
            dense_limit: 2_000,
            tolerance: 1e-12,
            max_iterations: 1_000_000,
            residual_tolerance: 1e-10,
        }
    }
}

/// Reachable phase vectors, starting from the all-computing state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub states: Vec<Vec<Phase>>,
    index: HashMap<u64, usize>,
}

fn encode(phases: &[Phase]) -> u64 {
    phases.iter().rev().fold(0, |k, p| k * 8 + p.index() as u64)
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, phases: &[Phase]) -> Option<usize> {
        self.index.get(&encode(phases)).copied()
    }

    fn insert(&mut self, phases: Vec<Phase>) -> (usize, bool) {
        let key = encode(&phases);
        if let Some(&i) = self.index.get(&key) {
            return (i, false);
        }
        let i = self.states.len();
        self.index.insert(key, i);
        self.states.push(phases);
        (i, true)
    }
}

/// Row-stochastic matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<S> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<S>,
}

impl<S: Scalar> TransitionMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<(usize, S)>>) -> Self {
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.row(i).find(|e| e.0 == j).map_or(S::zero(), |e| e.1)
    }

    pub fn row_sums(&self) -> Vec<S> {
        (0..self.dim()).map(|i| self.row(i).map(|e| e.1).sum()).collect()
    }

    /// `x P` for a row vector `x`.
    pub fn left_mul(&self, x: &[S]) -> Vec<S> {
        let mut y = vec![S::zero(); self.dim()];
        for (i, &xi) in x.iter().enumerate() {
            if xi == S::zero() {
                continue;
            }
            for (j, p) in self.row(i) {
                y[j] += xi * p;
            }
        }
        y
    }

    /// `max_i |(x P − x)_i|`.
    pub fn residual(&self, x: &[S]) -> S {
        self.left_mul(x)
            .iter()
            .zip(x)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Dense,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary<S> {
    pub pi: Vec<S>,
    pub residual: S,
    pub method: SolveMethod,
    pub iterations: usize,
}

/// Per-cycle completion probabilities of a memoryless model.
#[derive(Debug, Clone)]
struct Rates {
    compute: Vec<f64>,
    connect: Vec<[f64; 2]>,
    local_prob: Vec<f64>,
}

impl Rates {
    fn of(model: &Model) -> Result<Self, OracleError> {
        let mut r = Rates { compute: vec![], connect: vec![], local_prob: vec![] };
        for p in &model.pes {
            let nongeo = |what| OracleError::NonGeometric { pe: p.name.clone(), what };
            r.compute.push(p.compute.distribution.completion_probability().ok_or_else(|| nongeo("compute"))?);
            let mut c = [0.0; 2];
            for a in Access::BOTH {
                if let Some(l) = p.link(a) {
                    c[a.index()] = l.fit.distribution.completion_probability().ok_or_else(|| {
                        nongeo(match a {
                            Access::Local => "connection",
                            Access::Global => "global connection",
                        })
                    })?;
                }
            }
            r.connect.push(c);
            r.local_prob.push(if p.link(Access::Global).is_some() { p.local_prob } else { 1.0 });
        }
        Ok(r)
    }
}

/// What one PE does during a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Move {
    Stay,
    Finish,
    Request(Access),
}

/// Result of [`build_chain`].
#[derive(Debug, Clone)]
pub struct Chain<S> {
    pub space: StateSpace,
    pub matrix: TransitionMatrix<S>,
    /// Expected number of sojourns entered per `(pe, phase)` on leaving each state.
    entries: Vec<Vec<[S; Phase::COUNT]>>,
}

/// Enumerates the reachable global chain of a memoryless model.
pub fn build_chain<S: Scalar>(model: &Model, opts: &OracleOptions) -> Result<Chain<S>, OracleError> {
    let rates = Rates::of(model)?;
    let n = model.pes.len();
    let mut space = StateSpace { states: Vec::new(), index: HashMap::new() };
    let mut queue = VecDeque::new();
    queue.push_back(space.insert(vec![Phase::Cp; n]).0);
    let mut rows: Vec<Vec<(usize, S)>> = Vec::new();
    let mut entries: Vec<Vec<[S; Phase::COUNT]>> = Vec::new();

    while let Some(s) = queue.pop_front() {
        let from = space.states[s].clone();
        let options: Vec<Vec<(Move, S)>> = from
            .iter()
            .enumerate()
            .map(|(pe, &ph)| moves(pe, ph, &rates))
            .collect();
        let mut row = Vec::new();
        let mut entered = vec![[S::zero(); Phase::COUNT]; n];
        let mut choice = vec![0usize; n];
        loop {
            let mut prob = S::one();
            let picked: Vec<Move> = (0..n)
                .map(|pe| {
                    let (m, p) = options[pe][choice[pe]];
                    prob *= p;
                    m
                })
                .collect();
            let (to, fresh) = step(model, &from, &picked);
            for (pe, &f) in fresh.iter().enumerate() {
                if f {
                    entered[pe][to[pe].index()] += prob;
                }
            }
            let (t, new) = space.insert(to);
            if new {
                if space.len() > opts.state_cap {
                    return Err(OracleError::StateCap { cap: opts.state_cap });
                }
                queue.push_back(t);
            }
            row.push((t, prob));

            // odometer over the per-PE move lists
            let mut k = 0;
            while k < n {
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        if rows.len() <= s {
            rows.resize_with(s + 1, Vec::new);
            entries.resize_with(s + 1, Vec::new);
        }
        rows[s] = row;
        entries[s] = entered;
    }
    Ok(Chain { matrix: TransitionMatrix::from_rows(rows), space, entries })
}

fn moves<S: Scalar>(pe: usize, phase: Phase, r: &Rates) -> Vec<(Move, S)> {
    let keep = |v: &[(Move, f64)]| -> Vec<(Move, S)> {
        v.iter().filter(|e| e.1 > 0.0).map(|&(m, p)| (m, S::of(p))).collect()
    };
    match phase {
        Phase::Cp => {
            let p = r.compute[pe];
            let x = r.local_prob[pe];
            keep(&[
                (Move::Stay, 1.0 - p),
                (Move::Request(Access::Local), p * x),
                (Move::Request(Access::Global), p * (1.0 - x)),
            ])
        }
        Phase::Ac(a) => {
            let p = r.connect[pe][a.index()];
            keep(&[(Move::Stay, 1.0 - p), (Move::Finish, p)])
        }
        Phase::Fw(_) | Phase::Rw(_) => vec![(Move::Stay, S::one())],
    }
}

/// Applies one cycle's release, request, arbitration and classification.
/// Returns the next phase vector and which PEs started a new sojourn.
fn step(model: &Model, from: &[Phase], picked: &[Move]) -> (Vec<Phase>, Vec<bool>) {
    let n = from.len();
    let mut to = from.to_vec();
    let mut fresh = vec![false; n];
    let mut in_flight = BusSet::EMPTY;
    for pe in 0..n {
        match (from[pe], picked[pe]) {
            (Phase::Ac(_), Move::Finish) => {
                to[pe] = Phase::Cp;
                fresh[pe] = true;
            }
            (Phase::Ac(a), _) => in_flight = in_flight.union(model.resources(pe, a)),
            _ => {}
        }
    }
    let pending: Vec<Request> = (0..n)
        .filter_map(|pe| {
            let access = match (from[pe], picked[pe]) {
                (Phase::Cp, Move::Request(a)) => a,
                (Phase::Fw(a) | Phase::Rw(a), _) => a,
                _ => return None,
            };
            Some(Request { pe, access, resources: model.resources(pe, access), issued_at: 0 })
        })
        .collect();
    if !pending.is_empty() {
        let decision = grant(&pending, in_flight, &model.priority, model.bus_count())
            .expect("validated model produces well-formed requests");
        for r in &pending {
            let g = evaluate_guards(r.pe, r.resources, in_flight, &decision);
            let next = classify_request(r.pe, from[r.pe], Some(r.access), &g)
                .expect("arbitration is work-conserving");
            fresh[r.pe] = next != from[r.pe] || (matches!(next, Phase::Fw(_)) && g.sync_event.is_some());
            to[r.pe] = next;
        }
    }
    (to, fresh)
}

/// Solves `π P = π`, `Σ π = 1`.
pub fn stationary<S: Scalar>(
    p: &TransitionMatrix<S>,
    opts: &OracleOptions,
) -> Result<Stationary<S>, OracleError> {
    let n = p.dim();
    let (pi, method, iterations) = if n < opts.dense_limit {
        (dense_solve(p)?, SolveMethod::Dense, 0)
    } else {
        let (pi, it) = power_iteration(p, opts)?;
        (pi, SolveMethod::PowerIteration, it)
    };
    let residual = p.residual(&pi);
    if residual.to_f64_lossy() > opts.residual_tolerance {
        return Err(OracleError::Residual {
            residual: residual.to_f64_lossy(),
            tolerance: opts.residual_tolerance,
        });
    }
    Ok(Stationary { pi, residual, method, iterations })
}

/// Gaussian elimination with partial pivoting on `(Pᵀ − I) π = 0`, with the
/// last equation replaced by the normalisation.
fn dense_solve<S: Scalar>(p: &TransitionMatrix<S>) -> Result<Vec<S>, OracleError> {
    let n = p.dim();
    let mut a = vec![S::zero(); n * n];
    for i in 0..n {
        for (j, v) in p.row(i) {
            a[j * n + i] += v;
        }
        a[i * n + i] -= S::one();
    }
    for j in 0..n {
        a[(n - 1) * n + j] = S::one();
    }
    let mut b = vec![S::zero(); n];
    b[n - 1] = S::one();

    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().partial_cmp(&a[y * n + col].abs()).unwrap())
            .unwrap();
        if a[piv * n + col].abs() <= S::epsilon() {
            return Err(OracleError::Singular { column: col });
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == S::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![S::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    let total: S = x.iter().copied().sum();
    Ok(x.into_iter().map(|v| v / total).collect())
}

/// Iterates the lazy chain `(I + P)/2`, which has the same stationary
/// distribution and is aperiodic even when `P` is not.
fn power_iteration<S: Scalar>(
    p: &TransitionMatrix<S>,
    opts: &OracleOptions,
) -> Result<(Vec<S>, usize), OracleError> {
    let n = p.dim();
    let half = S::of(0.5);
    let mut pi = vec![S::one() / S::of_count(n as u64); n];
    let mut residual = S::infinity();
    for it in 0..opts.max_iterations {
        let next = p.left_mul(&pi);
        residual = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max);
        if residual.to_f64_lossy() <= opts.tolerance {
            return Ok((pi, it));
        }
        for (x, y) in pi.iter_mut().zip(next) {
            *x = half * (*x + y);
        }
        let total: S = pi.iter().copied().sum();
        for x in &mut pi {
            *x /= total;
        }
    }
    Err(OracleError::NotConverged {
        iterations: opts.max_iterations,
        residual: residual.to_f64_lossy(),
    })
}

/// Performance parameters from the stationary distribution.
///
/// Waiting time follows from Little's law, `W = L / λ`, with `λ` the
/// stationary rate at which computing PEs issue requests.
pub fn oracle_metrics<S: Scalar>(
    model: &Model,
    chain: &Chain<S>,
    st: &Stationary<S>,
) -> MetricsReport<S> {
    let n = model.pes.len();
    let mut phase = vec![[S::zero(); Phase::COUNT]; n];
    let mut entry = vec![[S::zero(); Phase::COUNT]; n];
    let mut bus_busy = vec![S::zero(); model.bus_count()];
    for (s, phases) in chain.space.states.iter().enumerate() {
        let w = st.pi[s];
        let mut held = BusSet::EMPTY;
        for (pe, &ph) in phases.iter().enumerate() {
            phase[pe][ph.index()] += w;
            if let Phase::Ac(a) = ph {
                held = held.union(model.resources(pe, a));
            }
            for k in 0..Phase::COUNT {
                entry[pe][k] += w * chain.entries[s][pe][k];
            }
        }
        for b in held.iter() {
            bus_busy[b] += w;
        }
    }
    let rates = Rates::of(model).expect("chain was built from a memoryless model");
    let mut rate = vec![[S::zero(); 2]; n];
    let mut wait = vec![[None; 2]; n];
    let mut wait_all = vec![None; n];
    for pe in 0..n {
        let issue = phase[pe][Phase::Cp.index()] * S::of(rates.compute[pe]);
        let x = S::of(rates.local_prob[pe]);
        rate[pe] = [issue * x, issue * (S::one() - x)];
        let mut l_all = S::zero();
        for a in Access::BOTH {
            let l = phase[pe][Phase::Fw(a).index()] + phase[pe][Phase::Rw(a).index()];
            l_all += l;
            if rate[pe][a.index()] > S::zero() {
                wait[pe][a.index()] = Some(l / rate[pe][a.index()]);
            }
        }
        if issue > S::zero() {
            wait_all[pe] = Some(l_all / issue);
        }
    }
    let sojourn = (0..n)
        .map(|pe| {
            let mut s = [None; Phase::COUNT];
            for (k, slot) in s.iter_mut().enumerate() {
                if entry[pe][k] > S::zero() {
                    *slot = Some(phase[pe][k] / entry[pe][k]);
                }
            }
            s
        })
        .collect();
    exact_report(model, &Occupancy { phase, rate, wait, wait_all, sojourn, bus_busy })
}

/// Everything the exact route produces for one model.
#[derive(Debug, Clone)]
pub struct OracleSolution<S> {
    pub chain: Chain<S>,
    pub stationary: Stationary<S>,
    pub report: MetricsReport<S>,
}

pub fn solve<S: Scalar>(model: &Model, opts: &OracleOptions) -> Result<OracleSolution<S>, OracleError> {
    let chain = build_chain::<S>(model, opts)?;
    let stationary = stationary(&chain.matrix, opts)?;
    let report = oracle_metrics(model, &chain, &stationary);
    Ok(OracleSolution { chain, stationary, report })
}
