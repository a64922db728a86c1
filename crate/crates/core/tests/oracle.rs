use sanbus::arbiter::Access;
use sanbus::engine::{simulate, SimConfig};
use sanbus::metrics::compute_report;
use sanbus::model::{validate_architecture, ArchitectureSpec, Model, PeParams, Phase};
use sanbus::oracle::{build_chain, solve, OracleOptions};
use sanbus::stochastics::MomentPair;

const L: Access = Access::Local;
const G: Access = Access::Global;

fn ssb(pes: &[(i64, f64, f64)]) -> Model {
    let pes = pes
        .iter()
        .enumerate()
        .map(|(i, &(p, t, c))| {
            PeParams::ssb(&format!("PE{}", i + 1), p, MomentPair::mean_only(t), MomentPair::mean_only(c))
        })
        .collect();
    validate_architecture(&ArchitectureSpec::ssb(pes)).unwrap()
}

fn hbb(x: [f64; 4], cl: [f64; 4], cg: [f64; 4]) -> Model {
    let names = ["PE11", "PE12", "PE21", "PE22"];
    let pes = (0..4)
        .map(|i| {
            PeParams::hbb(
                names[i],
                i as i64 + 1,
                if i < 2 { "BUS1" } else { "BUS2" },
                MomentPair::mean_only(2.0),
                x[i],
                MomentPair::mean_only(cl[i]),
                MomentPair::mean_only(cg[i]),
            )
        })
        .collect();
    validate_architecture(&ArchitectureSpec::hbb(pes)).unwrap()
}

#[test]
fn two_pe_reachable_set() {
    use Phase::*;
    let chain = build_chain::<f64>(&ssb(&[(1, 2.0, 2.0), (2, 2.0, 2.0)]), &OracleOptions::default()).unwrap();
    let mut states = chain.space.states.clone();
    states.sort();
    let mut expected = vec![
        vec![Cp, Cp],
        vec![Ac(L), Cp],
        vec![Cp, Ac(L)],
        vec![Rw(L), Ac(L)],
        vec![Ac(L), Rw(L)],
        vec![Fw(L), Ac(L)],
    ];
    expected.sort();
    assert_eq!(states, expected);
}

#[test]
fn hbb_chain_is_stochastic() {
    let m = hbb([0.7, 0.8, 0.7, 0.5], [2.0; 4], [2.0, 2.0, 2.0, 4.0]);
    let sol = solve::<f64>(&m, &OracleOptions::default()).unwrap();
    for s in sol.chain.matrix.row_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(sol.stationary.residual < 1e-10);
    let gac: Vec<usize> = sol
        .chain
        .space
        .states
        .iter()
        .enumerate()
        .filter(|(_, s)| s.iter().filter(|p| **p == Phase::Ac(G)).count() > 1)
        .map(|(i, _)| i)
        .collect();
    assert!(gac.is_empty(), "two concurrent global accesses reachable");
}

fn agree(model: &Model, seed: u64) {
    let exact = solve::<f64>(model, &OracleOptions::default()).unwrap().report;
    let acc = simulate(model, &SimConfig::measured(400_000, 30, seed)).unwrap();
    let sim = compute_report::<f64>(&acc, model).unwrap();
    for (e, s) in exact.pes.iter().zip(&sim.pes) {
        for (pe, ps) in e.phases.iter().zip(&s.phases) {
            let se = ps.probability.std_error.unwrap();
            let diff = (pe.probability.value - ps.probability.value).abs();
            assert!(diff <= 4.0 * se + 1e-12, "{} {}: exact {} sim {} se {se}", e.name, pe.label, pe.probability.value, ps.probability.value);
        }
    }
}

#[test]
fn simulation_matches_exact_ssb() {
    agree(&ssb(&[(2, 3.0, 2.0), (1, 1.5, 5.0), (3, 4.0, 3.0)]), 21);
}

#[test]
fn simulation_matches_exact_hbb() {
    agree(&hbb([0.6, 0.3, 0.8, 0.5], [2.0, 3.0, 1.5, 2.5], [3.0, 2.0, 4.0, 2.0]), 22);
}

#[test]
fn single_precision_tracks_double() {
    let m = ssb(&[(1, 2.0, 6.0), (2, 3.0, 2.0), (3, 2.0, 3.0)]);
    let a = solve::<f64>(&m, &OracleOptions::default()).unwrap().report;
    let b = solve::<f32>(&m, &OracleOptions { residual_tolerance: 1e-5, ..Default::default() })
        .unwrap()
        .report;
    for (x, y) in a.pes.iter().zip(&b.pes) {
        assert!((x.bw.value - y.bw.value as f64).abs() < 1e-5);
        assert!((x.l.value - y.l.value as f64).abs() < 1e-5);
    }
}
