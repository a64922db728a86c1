use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sanbus::engine::{simulate, HoldTracker, SimConfig, Simulator, DEFAULT_SEED};
use sanbus::experiment::{run_sweep, to_csv, SweepResults};
use sanbus::metrics::compute_report;
use sanbus::model::{validate_architecture, ArchKind, ArchitectureSpec, Model, PeParams};
use sanbus::oracle::{solve, OracleOptions};
use sanbus::stochastics::{fit_two_moment, DurationDistribution, MomentPair, Purpose, RngStream, StreamId};
use sanbus::{Estimate, MetricsReport};
use sanbus_validation::{bundled, le_within_ci, Scorecard};

struct Sweeps {
    ssb3: SweepResults,
    hbb4: SweepResults,
    elapsed: Duration,
}

fn curve<'a>(
    results: &'a SweepResults,
    series: &str,
    metric: impl Fn(&MetricsReport) -> Estimate + 'a,
) -> Vec<(f64, Estimate)> {
    results
        .rows
        .iter()
        .filter(|r| r.series == series)
        .map(|r| (r.sweep_value.unwrap(), metric(r.report.as_ref().expect("sweep point failed"))))
        .collect()
}

fn pe_bw(name: &'static str) -> impl Fn(&MetricsReport) -> Estimate {
    move |r| r.pe(name).unwrap().bw
}

fn point(curve: &[(f64, Estimate)], x: f64) -> Estimate {
    curve.iter().find(|(v, _)| *v == x).unwrap().1
}

fn criterion_1(card: &mut Scorecard) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (family, compute) in [
        ("deterministic", MomentPair::new(2.0, 4.0)),
        ("geometric", MomentPair::mean_only(2.0)),
        ("two-point", MomentPair::new(2.0, 5.0)),
    ] {
        let spec = ArchitectureSpec::ssb(vec![PeParams::ssb("PE1", 1, compute, compute)]);
        let model = validate_architecture(&spec).unwrap();
        let acc = simulate(&model, &SimConfig::measured(1_000_000, 30, DEFAULT_SEED)).unwrap();
        let pe = compute_report::<f64>(&acc, &model).unwrap().pes.remove(0);
        let ok = (pe.bw.value - 0.5).abs() <= 0.005 && pe.pu.value == 1.0 && pe.l.value == 0.0 && pe.w.value == 0.0;
        pass &= ok;
        detail.push(format!("{family} BW={:.4} PU={} L={} W={}", pe.bw.value, pe.pu.value, pe.l.value, pe.w.value));
    }
    card.record(1, "uncontended closed form", pass, &detail.join("; "));
}

fn criteria_2_3(card: &mut Scorecard, s: &Sweeps) {
    let bw = point(&curve(&s.ssb3, "C2=2 C3=2", pe_bw("PE1")), 20.0);
    card.record(
        2,
        "maximum bandwidth anchor",
        (0.22..=0.28).contains(&bw.value),
        &format!("BW1 at C1=20, C2=C3=2 is {:.4} [{:.4}, {:.4}], target [0.22, 0.28]", bw.value, bw.lo().unwrap(), bw.hi().unwrap()),
    );
    let bw = point(&curve(&s.ssb3, "C2=4 C3=4", pe_bw("PE1")), 2.0);
    card.record(
        3,
        "minimum bandwidth anchor",
        (0.01..=0.06).contains(&bw.value),
        &format!("BW1 at C1=2, C2=C3=4 is {:.4} [{:.4}, {:.4}], target [0.01, 0.06]", bw.value, bw.lo().unwrap(), bw.hi().unwrap()),
    );
}

fn criterion_4(card: &mut Scorecard, s: &Sweeps) {
    let mut problems = Vec::new();
    for series in ["C2=2 C3=2", "C2=2 C3=4", "C2=4 C3=4"] {
        let c = curve(&s.ssb3, series, pe_bw("PE1"));
        for w in c.windows(2) {
            if !le_within_ci(&w[0].1, &w[1].1) {
                problems.push(format!("{series}: BW1 drops from C1={} to {}", w[0].0, w[1].0));
            }
        }
    }
    let low = curve(&s.ssb3, "C2=2 C3=2", pe_bw("PE1"));
    let high = curve(&s.ssb3, "C2=4 C3=4", pe_bw("PE1"));
    for ((x, a), (_, b)) in low.iter().zip(&high) {
        if !le_within_ci(b, a) {
            problems.push(format!("BW1(4,4) > BW1(2,2) at C1={x}"));
        }
    }
    let l = |r: &MetricsReport| r.pe("PE1").unwrap().l;
    for ((x, a), (_, b)) in curve(&s.ssb3, "C2=2 C3=2", l).iter().zip(&curve(&s.ssb3, "C2=4 C3=4", l)) {
        if !le_within_ci(a, b) {
            problems.push(format!("L1(4,4) < L1(2,2) at C1={x}"));
        }
    }
    let detail = if problems.is_empty() {
        format!(
            "BW1 rises {:.3}..{:.3} for (2,2) and {:.3}..{:.3} for (4,4); (4,4) below (2,2) in BW1 and above in L1 at all 10 points",
            low[0].1.value, low[9].1.value, high[0].1.value, high[9].1.value
        )
    } else {
        problems.join("; ")
    };
    card.record(4, "bandwidth trends versus C1", problems.is_empty(), &detail);
}

fn criterion_5(card: &mut Scorecard, s: &Sweeps) {
    let local = |r: &MetricsReport| r.pe("PE22").unwrap().local.as_ref().unwrap().bw;
    let global = |r: &MetricsReport| r.pe("PE22").unwrap().global.as_ref().unwrap().bw;
    let mut problems = Vec::new();
    for series in s.hbb4.series.iter().map(|x| x.label.as_str()) {
        for w in curve(&s.hbb4, series, local).windows(2) {
            if w[1].1.value <= w[0].1.value {
                problems.push(format!("{series}: BW_l22 not increasing at X={}", w[1].0));
            }
        }
        for w in curve(&s.hbb4, series, global).windows(2) {
            if w[1].1.value >= w[0].1.value {
                problems.push(format!("{series}: BW_g22 not decreasing at X={}", w[1].0));
            }
        }
    }
    let two = curve(&s.hbb4, "Cl22=2 Cg22=2", local);
    let four = curve(&s.hbb4, "Cl22=4 Cg22=2", local);
    for ((x, a), (_, b)) in two.iter().zip(&four) {
        if *x >= 0.5 - 1e-9 && !le_within_ci(a, b) {
            problems.push(format!("BW_l22 at Cl22=4 below Cl22=2 at X={x}"));
        }
    }
    let detail = if problems.is_empty() {
        format!(
            "all {} series monotone; BW_l22 at X=0.9 is {:.3} (Cl22=2) vs {:.3} (Cl22=4)",
            s.hbb4.series.len(),
            two[8].1.value,
            four[8].1.value
        )
    } else {
        problems.join("; ")
    };
    card.record(5, "bandwidth trends versus X_l22", problems.is_empty(), &detail);
}

fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> Model {
    let mut mean = || MomentPair::mean_only(rng.random_range(1.0..=8.0));
    let (kind, n) = match k % 3 {
        0 => (ArchKind::Ssb, 2),
        1 => (ArchKind::Ssb, 3),
        _ => (ArchKind::Hbb, 4),
    };
    let specs: Vec<(MomentPair, MomentPair, MomentPair)> = (0..n).map(|_| (mean(), mean(), mean())).collect();
    let mut prios: Vec<i64> = (1..=20).collect();
    prios.shuffle(rng);
    let pes = specs
        .into_iter()
        .enumerate()
        .map(|(i, (t, c, g))| match kind {
            ArchKind::Ssb => PeParams::ssb(&format!("PE{}", i + 1), prios[i], t, c),
            ArchKind::Hbb => {
                let (bus, name) = if i < 2 { ("BUS1", format!("PE1{}", i + 1)) } else { ("BUS2", format!("PE2{}", i - 1)) };
                PeParams::hbb(&name, prios[i], bus, t, rng.random_range(0.1..=0.9), c, g)
            }
        })
        .collect();
    let spec = match kind {
        ArchKind::Ssb => ArchitectureSpec::ssb(pes),
        ArchKind::Hbb => ArchitectureSpec::hbb(pes),
    };
    validate_architecture(&spec).unwrap()
}

fn criterion_6(card: &mut Scorecard, residuals: &mut Vec<f64>) {
    const INSTANCES: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let opts = OracleOptions::default();
    let (mut compared, mut worst, mut max_row, mut max_res) = (0, 0.0f64, 0.0f64, 0.0f64);
    let mut misses = Vec::new();
    for k in 0..INSTANCES {
        let model = random_instance(&mut rng, k);
        let sol = solve::<f64>(&model, &opts).unwrap();
        max_row = sol.chain.matrix.row_sums().iter().map(|s| (s - 1.0).abs()).fold(max_row, f64::max);
        max_res = max_res.max(sol.stationary.residual);
        let seed = sanbus::stochastics::derive_seed(DEFAULT_SEED, k as u64);
        let acc = simulate(&model, &SimConfig::measured(1_000_000, 30, seed)).unwrap();
        let sim = compute_report::<f64>(&acc, &model).unwrap();
        residuals.push(sanbus::metrics::littles_check(&sim, &acc).max_residual);
        for (e, s) in sol.report.pes.iter().zip(&sim.pes) {
            for (pe, ps) in e.phases.iter().zip(&s.phases) {
                let (exact, est) = (pe.probability.value, ps.probability);
                let se = est.std_error.unwrap();
                let diff = (exact - est.value).abs();
                compared += 1;
                if se > 0.0 {
                    worst = worst.max(diff / se);
                }
                if diff > 3.0 * se + 1e-12 {
                    misses.push(format!(
                        "instance {k} {} {}: exact {exact:.5} sim {:.5} ({:.2} SE)",
                        e.name,
                        pe.label,
                        est.value,
                        diff / se
                    ));
                }
            }
        }
    }
    let tol_ok = max_row <= 1e-12 && max_res <= 1e-10;
    let mut detail = format!(
        "{INSTANCES} instances, {compared} marginals, largest deviation {worst:.2} SE, {} outside 3 SE; max |row sum - 1| {max_row:.1e}, max residual {max_res:.1e}",
        misses.len()
    );
    if !misses.is_empty() {
        detail.push_str(&format!(" ({})", misses.join("; ")));
    }
    card.record(6, "exact solver equivalence", misses.is_empty() && tol_ok, &detail);
}

fn stepped_invariants(model: &Model, cycles: u64) -> Result<u64, String> {
    let mut sim = Simulator::new(model, DEFAULT_SEED);
    let mut holds = HoldTracker::new(model.pes.len());
    let mut accesses = 0;
    for _ in 0..cycles {
        let mut ev = sim.advance_cycle();
        sim.state().check(model).map_err(|e| format!("cycle {}: {e}", ev.cycle))?;
        for (sampled, held) in holds.observe(&mut ev) {
            if sampled != held {
                return Err(format!("cycle {}: access held {held} of {sampled} cycles", ev.cycle));
            }
            accesses += 1;
        }
    }
    Ok(accesses)
}

fn criterion_7(card: &mut Scorecard, s: &Sweeps, extra_residuals: &[f64]) {
    let mut problems = Vec::new();
    let mut accesses = 0;
    for name in ["ssb3.json", "hbb4.json"] {
        let model = validate_architecture(&bundled(name).architecture).unwrap();
        match stepped_invariants(&model, 1_000_000) {
            Ok(n) => accesses += n,
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    let mut worst_sum = 0.0f64;
    let mut worst_share = 0.0f64;
    let mut residuals: Vec<f64> = extra_residuals.to_vec();
    for results in [&s.ssb3, &s.hbb4] {
        for row in &results.rows {
            let r = row.report.as_ref().unwrap();
            residuals.push(row.little_residual.unwrap());
            for pe in &r.pes {
                let total: f64 = pe.phases.iter().map(|p| p.probability.value).sum();
                worst_sum = worst_sum.max((total - 1.0).abs());
            }
            let shares: Vec<f64> = match r.kind {
                ArchKind::Ssb => vec![r.pes.iter().map(|p| p.bw.value).sum()],
                ArchKind::Hbb => (0..2)
                    .map(|b| {
                        r.pes
                            .iter()
                            .enumerate()
                            .map(|(i, p)| {
                                let home = (i / 2 == b) as u8 as f64;
                                home * p.local.as_ref().unwrap().bw.value + p.global.as_ref().unwrap().bw.value
                            })
                            .sum()
                    })
                    .collect(),
            };
            worst_share = shares.into_iter().fold(worst_share, f64::max);
        }
    }
    let worst_little = residuals.iter().copied().fold(0.0, f64::max);
    if worst_sum > 1e-12 {
        problems.push(format!("phase probabilities off by {worst_sum:e}"));
    }
    if worst_share > 1.0 + 1e-12 {
        problems.push(format!("bus share {worst_share}"));
    }
    if worst_little >= 0.05 {
        problems.push(format!("Little's law residual {worst_little:.4}"));
    }
    let detail = format!(
        "2x10^6 cycles stepped with {accesses} accesses checked; max |sum P - 1| {worst_sum:.1e}; max bus share {worst_share:.4}; max Little residual {:.4} over {} runs{}",
        worst_little,
        residuals.len(),
        if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
    );
    card.record(7, "invariants", problems.is_empty(), &detail);
}

fn criterion_8(card: &mut Scorecard) {
    const N: usize = 1_000_000;
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, target) in [
        MomentPair::new(3.0, 9.0),
        MomentPair::mean_only(2.0),
        MomentPair::new(5.0, 45.0),
        MomentPair::new(3.0, 13.0),
        MomentPair::new(4.0, 18.0),
    ]
    .into_iter()
    .enumerate()
    {
        let fit = fit_two_moment(&target).unwrap();
        let mut stream = RngStream::new(DEFAULT_SEED, StreamId { pe: i, purpose: Purpose::Compute });
        let xs: Vec<f64> = (0..N).map(|_| fit.distribution.sample(&mut stream) as f64).collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / N as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (N - 1) as f64;
            (m, (var / N as f64).sqrt())
        };
        let (m1, se1) = stats(&xs);
        let (m2, se2) = stats(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
        let family = match fit.distribution {
            DurationDistribution::Deterministic { .. } => "deterministic",
            DurationDistribution::Geometric { .. } => "geometric",
            DurationDistribution::TwoPointMixture { .. } => "two-point",
        };
        let ok = if se1 == 0.0 {
            m1 == target.mean && m2 == target.second_moment()
        } else {
            (m1 - target.mean).abs() <= 3.0 * se1 && (m2 - target.second_moment()).abs() <= 3.0 * se2
        };
        pass &= ok && fit.is_exact();
        let z = |d: f64, se: f64| if se == 0.0 { 0.0 } else { d / se };
        detail.push(format!(
            "{family}({}, {}) z=({:.2}, {:.2})",
            target.mean,
            target.second_moment(),
            z(m1 - target.mean, se1),
            z(m2 - target.second_moment(), se2)
        ));
    }
    card.record(8, "moment matching", pass, &detail.join("; "));
}

fn criterion_9(card: &mut Scorecard, s: &Sweeps) {
    let reference = to_csv(&s.ssb3);
    let again = to_csv(&run_sweep(&bundled("ssb3.json"), true));
    let serial = to_csv(&run_sweep(&bundled("ssb3.json"), false));
    let hbb_serial = to_csv(&run_sweep(&bundled("hbb4.json"), false));
    let pass = reference == again && reference == serial && to_csv(&s.hbb4) == hbb_serial;
    card.record(
        9,
        "determinism",
        pass,
        &format!(
            "ssb3 parallel/parallel/serial and hbb4 parallel/serial CSV {} ({} bytes)",
            if pass { "byte-identical" } else { "differ" },
            reference.len()
        ),
    );
}

fn criterion_10(card: &mut Scorecard, s: &Sweeps) {
    let model = validate_architecture(&bundled("ssb3.json").architecture).unwrap();
    let start = Instant::now();
    simulate(&model, &SimConfig::measured(1_000_000, 30, DEFAULT_SEED)).unwrap();
    let single = start.elapsed();
    let pass = single <= Duration::from_secs(5) && s.elapsed <= Duration::from_secs(120);
    card.record(
        10,
        "runtime budget",
        pass,
        &format!(
            "one 10^6-cycle 3-PE run {:.2} s (limit 5 s); bundled sweeps {:.1} s on {} thread(s) (limit 120 s)",
            single.as_secs_f64(),
            s.elapsed.as_secs_f64(),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    );
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut card = Scorecard::default();
    criterion_1(&mut card);

    let start = Instant::now();
    let ssb3 = run_sweep(&bundled("ssb3.json"), true);
    let hbb4 = run_sweep(&bundled("hbb4.json"), true);
    let sweeps = Sweeps { ssb3, hbb4, elapsed: start.elapsed() };
    for (name, r) in [("ssb3", &sweeps.ssb3), ("hbb4", &sweeps.hbb4)] {
        if let Some(row) = r.errors().next() {
            println!("{name} sweep failed: {:?}", row.error);
            return ExitCode::FAILURE;
        }
    }

    criteria_2_3(&mut card, &sweeps);
    criterion_4(&mut card, &sweeps);
    criterion_5(&mut card, &sweeps);
    let mut residuals = Vec::new();
    criterion_6(&mut card, &mut residuals);
    criterion_7(&mut card, &sweeps, &residuals);
    criterion_8(&mut card);
    criterion_9(&mut card, &sweeps);
    criterion_10(&mut card, &sweeps);

    if card.failed().is_empty() {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {:?}", card.failed());
        ExitCode::FAILURE
    }
}
