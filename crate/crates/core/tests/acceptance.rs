//! Acceptance suite. Fast checks run by default; the Monte Carlo
//! reproductions are long-running and marked `#[ignore]`:
//!
//! ```text
//! cargo test --release -p cellfree --test acceptance -- --include-ignored --nocapture
//! ```
//!
//! Every check prints one `[PASS]` / `[FAIL]` line before asserting.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cellfree::bnb::{solve_exact, solve_exhaustive, solve_fixed_set, BnbOptions};
use cellfree::formulation::{build_relaxation_with, BnbBox, Relaxation};
use cellfree::harness::{
    emit, run_experiment, summarize, ExperimentConfig, Method, MethodSummary, RecordStatus,
    RunReport,
};
use cellfree::heuristics::{algorithm1, algorithm2, irls_sparsify, transmit_only, HeuristicParams};
use cellfree::performance::{self, ActiveSet, Precoding, FEASIBILITY_TOL};
use cellfree::scenario::{ScenarioParams, SeTarget};
use cellfree::socp::{self, SolveStatus, DEFAULT_TOL};
use cellfree::Error;

fn verdict(label: &str, pass: bool, detail: &str) -> bool {
    println!("[{}] {label}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn small_scenario(m: usize, k: usize, xi: f64) -> ScenarioParams {
    ScenarioParams {
        num_aps: m,
        num_users: k,
        antennas: 8,
        tau_p: 2,
        se: SeTarget::Fixed(xi),
        ..ScenarioParams::default()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn exact_search_matches_subset_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut solved, mut infeasible, mut worst) = (0, 0, 0.0f64);
    let mut mismatches = Vec::new();
    for i in 0..200u64 {
        let m = rng.random_range(4..=6);
        let k = rng.random_range(2..=3);
        let mut p = small_scenario(m, k, 1.0);
        p.se = SeTarget::Uniform(0.5, 1.5);
        p.precoding = if i % 2 == 0 {
            Precoding::Mrt
        } else {
            Precoding::Fzf
        };
        let inst = p.build_drop(7, i).unwrap();
        let exact = solve_exact(&inst, &BnbOptions::default());
        let brute = solve_exhaustive(&inst, DEFAULT_TOL);
        match (exact, brute) {
            (Ok(e), Ok(b)) => {
                let r = rel(e.allocation.power.total, b.power.total);
                worst = worst.max(r);
                if r > 1e-4 {
                    mismatches.push(i);
                }
                solved += 1;
            }
            (Err(Error::Infeasible), Err(Error::Infeasible)) => infeasible += 1,
            _ => mismatches.push(i),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && secs < 300.0;
    verdict(
        "exact search vs enumeration (200 instances)",
        pass,
        &format!(
            "{solved} solved, {infeasible} infeasible in both, worst rel. diff {worst:.2e}, \
             mismatches {mismatches:?}, {secs:.1} s"
        ),
    );
    assert!(pass);
}

#[test]
fn single_link_power_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut checked, mut flagged, mut worst) = (0, 0, 0.0f64);
    let mut bad = Vec::new();
    let mut case = 0;
    while checked < 100 || flagged < 20 {
        case += 1;
        let beta = 10f64.powf(rng.random_range(-125.0..-75.0) / 10.0);
        let n = rng.random_range(1..=64);
        let xi = if checked < 100 {
            rng.random_range(0.05..5.0)
        } else {
            rng.random_range(5.0..40.0)
        };
        let p = ScenarioParams {
            antennas: n,
            tau_p: 1,
            pilot_power: rng.random_range(0.01..1.0),
            noise_dbm: rng.random_range(-100.0..-90.0),
            ..ScenarioParams::default()
        };
        let inst = p
            .instance_from_beta(DMatrix::from_element(1, 1, beta), vec![0], vec![xi])
            .unwrap();
        let (b, g, nu) = (
            inst.stats.beta[(0, 0)],
            inst.stats.gamma[(0, 0)],
            inst.nu[0],
        );
        let denom = n as f64 * g - nu * b;
        let got = solve_fixed_set(&inst, &ActiveSet::all(1), DEFAULT_TOL).unwrap();
        if denom <= 0.0 {
            if flagged < 20 {
                flagged += 1;
                if got.is_some() {
                    bad.push(case);
                }
            }
            continue;
        }
        let rho = nu * inst.stats.sigma2_dl / denom;
        if rho > 0.99 * inst.power.p_max[0] || checked >= 100 {
            continue;
        }
        checked += 1;
        match got {
            Some(a) => {
                let r = rel(a.rho()[(0, 0)], rho);
                worst = worst.max(r);
                if r > 1e-6 {
                    bad.push(case);
                }
            }
            None => bad.push(case),
        }
    }
    let pass = bad.is_empty();
    verdict(
        "single-link closed form",
        pass,
        &format!(
            "{checked} feasible links, worst rel. error {worst:.2e}; {flagged} links with \
             N*gamma <= nu*beta flagged infeasible; failures {bad:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn bisection_solve_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let hp = HeuristicParams::default();
    let (mut runs, mut worst_excess) = (0, i64::MIN);
    let mut violations = Vec::new();
    for i in 0..60u64 {
        let m = rng.random_range(1..=16);
        let k = rng.random_range(1..=3);
        let inst = small_scenario(m, k, 1.0).build_drop(19, i).unwrap();
        let bound = ((m + 1) as f64).log2().ceil() as usize;
        for (name, res) in [
            ("algorithm1", algorithm1(&inst, &hp)),
            ("algorithm2", algorithm2(&inst, &hp)),
        ] {
            match res {
                Ok(r) => {
                    runs += 1;
                    worst_excess = worst_excess.max(r.bisection_solves as i64 - bound as i64);
                    if r.bisection_solves > bound {
                        violations.push((i, name, m, r.bisection_solves));
                    }
                }
                Err(Error::Infeasible) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
    let pass = violations.is_empty() && runs > 0;
    verdict(
        "bisection solves <= ceil(log2(M+1))",
        pass,
        &format!("{runs} runs, max (solves - bound) = {worst_excess}, violations {violations:?}"),
    );
    assert!(pass);
}

#[test]
fn property_suite() {
    let mut notes = Vec::new();
    let mut pass = true;

    // Recheck and power identity over every method on small drops.
    let mut cfg = ExperimentConfig::default();
    cfg.scenario = small_scenario(6, 3, 1.0);
    cfg.drops = 24;
    cfg.seed = 99;
    cfg.timing = false;
    cfg.methods = Method::ALL.to_vec();
    let a = run_experiment(&cfg).unwrap();
    let with_alloc: Vec<_> = a
        .records
        .iter()
        .filter(|r| r.status.has_allocation())
        .collect();
    let recheck_ok = a.failures() == 0
        && with_alloc
            .iter()
            .all(|r| r.min_sinr_ratio >= 1.0 - FEASIBILITY_TOL);
    let identity = with_alloc
        .iter()
        .all(|r| r.total_w == r.transmit_w + r.hardware_w);
    pass &= recheck_ok && identity;
    notes.push(format!(
        "{} allocations rechecked ({}), identity {}",
        with_alloc.len(),
        if recheck_ok { "all pass" } else { "FAILURES" },
        if identity { "exact" } else { "BROKEN" }
    ));

    // Sandwich: root relaxation <= exact <= every heuristic.
    let hp = HeuristicParams::default();
    let (mut sandwiches, mut broken) = (0, 0);
    for i in 0..40u64 {
        let mut p = small_scenario(5, 2, 1.0);
        p.precoding = if i % 2 == 0 {
            Precoding::Mrt
        } else {
            Precoding::Fzf
        };
        let inst = p.build_drop(3, i).unwrap();
        let Ok(exact) = solve_exact(&inst, &BnbOptions::default()) else {
            continue;
        };
        let opt = exact.allocation.power.total;
        let tol = 1e-6 * opt;
        for kind in [Relaxation::Verbatim, Relaxation::Perspective] {
            let f = build_relaxation_with(&inst, &BnbBox::root(inst.num_aps()), kind).unwrap();
            let r = socp::solve(&f.program, DEFAULT_TOL).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            if f.power_value(&r.x) > opt + tol {
                broken += 1;
            }
        }
        for ub in [
            transmit_only(&inst, &hp),
            algorithm1(&inst, &hp),
            algorithm2(&inst, &hp),
        ] {
            if ub.unwrap().allocation.power.total < opt - tol {
                broken += 1;
            }
        }
        sandwiches += 1;
    }
    pass &= broken == 0 && sandwiches > 0;
    notes.push(format!(
        "sandwich on {sandwiches} instances, {broken} violations"
    ));

    // Determinism: same seed, rerun, bit-identical records and files.
    let b = run_experiment(&cfg).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files = emit(&a, d1.path()).unwrap();
    emit(&b, d2.path()).unwrap();
    let identical = a.records == b.records
        && files.iter().all(|f| {
            std::fs::read(f).unwrap()
                == std::fs::read(d2.path().join(f.file_name().unwrap())).unwrap()
        });
    pass &= identical;
    notes.push(format!("rerun bit-identical: {identical}"));

    // The allocation recheck is the performance model itself, not the cone data.
    let inst = small_scenario(4, 2, 1.0).build_drop(5, 0).unwrap();
    let alloc = transmit_only(&inst, &hp).unwrap().allocation;
    let sinr = performance::sinr(
        &inst.stats,
        inst.scheme,
        &inst.pilots,
        &alloc.q,
        &alloc.active,
    )
    .unwrap();
    let tight = sinr.iter().zip(&inst.nu).all(|(s, nu)| rel(*s, *nu) < 1e-5);
    pass &= tight;
    notes.push(format!("transmit-only SINR constraints tight: {tight}"));

    verdict("property suite", pass, &notes.join("; "));
    assert!(pass);
}

fn defaults_config(
    precoding: Precoding,
    drops: usize,
    seed: u64,
    methods: &[Method],
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.precoding = precoding;
    cfg.drops = drops;
    cfg.seed = seed;
    cfg.methods = methods.to_vec();
    cfg
}

fn method<'a>(s: &'a [MethodSummary], m: Method) -> &'a MethodSummary {
    s.iter().find(|x| x.method == m).unwrap()
}

fn baseline_runs() -> &'static (RunReport, RunReport, f64) {
    static RUNS: OnceLock<(RunReport, RunReport, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let run =
            |p| run_experiment(&defaults_config(p, 500, 2024, &[Method::TransmitOnly])).unwrap();
        let mrt = run(Precoding::Mrt);
        let fzf = run(Precoding::Fzf);
        (mrt, fzf, start.elapsed().as_secs_f64())
    })
}

#[test]
#[ignore = "long-running: 500 drops per precoder"]
fn transmit_only_baseline() {
    let (mrt, _, secs) = baseline_runs();
    let s = summarize(&mrt.records);
    let t = method(&s, Method::TransmitOnly);
    let total = t.total.mean();
    let transmit = t.transmit.mean();
    let radiated = t.radiated.mean();
    let total_ok = rel(total, 102.0) <= 0.10;
    let band_ok = (1.4..=2.3).contains(&transmit);
    let pass = total_ok && band_ok && t.included >= 500 - t.infeasible;
    verdict(
        "transmit-only baseline, MRT",
        pass,
        &format!(
            "{} drops ({} infeasible): mean total {total:.2} W (target 102 +/- 10%), mean \
             transmit {transmit:.3} W (band [1.4, 2.3]), mean radiated {radiated:.3} W, 5%-point \
             transmit {:.3} W, {secs:.0} s for both precoders",
            t.records,
            t.infeasible,
            t.transmit.percentile(0.05)
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "long-running: 500 drops per precoder"]
fn fzf_needs_less_transmit_power_than_mrt() {
    let (mrt, fzf, _) = baseline_runs();
    let m = summarize(&mrt.records);
    let f = summarize(&fzf.records);
    let (pm, pf) = (
        method(&m, Method::TransmitOnly).transmit.mean(),
        method(&f, Method::TransmitOnly).transmit.mean(),
    );
    let pass = pf <= pm;
    verdict(
        "FZF vs MRT mean transmit power",
        pass,
        &format!(
            "MRT {pm:.4} W, FZF {pf:.4} W, reduction {:.1}% (500 drops each)",
            100.0 * (1.0 - pf / pm)
        ),
    );
    assert!(pass);
}

const ZERO_ROW_W: f64 = 1e-10;

#[test]
#[ignore = "long-running: 100 IRLS runs at M=20, K=20"]
fn irls_descent_and_convergence() {
    let start = Instant::now();
    let params = HeuristicParams::default().irls;
    let p = ScenarioParams::default();
    let (mut drops, mut fast, mut ascents, mut revived, mut zero_rows) = (0, 0, 0, 0, 0);
    let mut iterations = Vec::new();
    let mut failed = 0;
    for d in 0..100u64 {
        let inst = p.build_drop(31, d).unwrap();
        let out = match irls_sparsify(&inst, &params) {
            Ok(o) => o,
            Err(Error::Infeasible) => continue,
            Err(e) => panic!("{e}"),
        };
        let t = &out.trace;
        if t.solver_failed {
            failed += 1;
        }
        drops += 1;
        for w in t.objective.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-9) {
                ascents += 1;
            }
        }
        for (i, rows) in t.row_power.iter().enumerate() {
            for (m, &r) in rows.iter().enumerate() {
                if r <= ZERO_ROW_W {
                    zero_rows += 1;
                    if t.row_power[i + 1..]
                        .iter()
                        .any(|later| later[m] > ZERO_ROW_W)
                    {
                        revived += 1;
                    }
                }
            }
        }
        iterations.push(t.iterations());
        if t.converged && t.iterations() <= 15 {
            fast += 1;
        }
    }
    iterations.sort_unstable();
    let share = fast as f64 / drops.max(1) as f64;
    let descent = ascents == 0 && revived == 0 && failed == 0;
    let pass = descent && share >= 0.9;
    verdict(
        "IRLS descent, zero-row persistence, convergence",
        pass,
        &format!(
            "{drops} drops: {ascents} objective increases, {zero_rows} zero rows, {revived} revived, \
             {failed} solver failures; converged within 15 iterations on {:.0}% (need 90%), \
             iterations min/median/max {}/{}/{}; {:.0} s",
            100.0 * share,
            iterations.first().unwrap_or(&0),
            iterations.get(iterations.len() / 2).unwrap_or(&0),
            iterations.last().unwrap_or(&0),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Reduced-scale runs with node-capped, heuristic-warm-started branch-and-bound.
fn optimal_runs() -> &'static (RunReport, RunReport, f64) {
    static RUNS: OnceLock<(RunReport, RunReport, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let run = |p| {
            let mut cfg = defaults_config(p, 50, 77, &Method::ALL);
            cfg.bnb.node_cap = 30;
            cfg.bnb.relaxation = Relaxation::Perspective;
            cfg.bnb_warm_start = true;
            run_experiment(&cfg).unwrap()
        };
        let mrt = run(Precoding::Mrt);
        let fzf = run(Precoding::Fzf);
        (mrt, fzf, start.elapsed().as_secs_f64())
    })
}

fn optimal_line(report: &RunReport) -> (f64, f64, String) {
    let s = summarize(&report.records);
    let base = method(&s, Method::TransmitOnly).total.mean();
    let o = method(&s, Method::Optimal);
    let saving = 1.0 - o.total.mean() / base;
    let active = o.active.mean();
    let text = format!(
        "saving {:.1}%, mean |A| {active:.2}, {} of {} capped, gap mean {:.1}% max {:.1}%",
        100.0 * saving,
        o.budget_exceeded,
        o.records,
        100.0 * o.gap.mean(),
        100.0 * o.gap.percentile(1.0)
    );
    (saving, active, text)
}

#[test]
#[ignore = "long-running: branch-and-bound at M=20, K=20 on 50 drops per precoder"]
fn optimal_method_reproduction() {
    let (mrt, fzf, secs) = optimal_runs();
    let (sm, am, tm) = optimal_line(mrt);
    let (sf, af, tf) = optimal_line(fzf);
    let pass = (sm - 0.49).abs() <= 0.08
        && (sf - 0.55).abs() <= 0.08
        && (am - 9.1).abs() <= 1.5
        && (af - 7.8).abs() <= 1.5;
    verdict(
        "optimal vs transmit-only (targets 49%/55% +/- 8 pp, |A| 9.1/7.8 +/- 1.5)",
        pass,
        &format!("MRT: {tm}; FZF: {tf}; incumbent-based where capped; wall time {secs:.0} s"),
    );
    assert!(pass);
}

#[test]
#[ignore = "long-running: shares the branch-and-bound runs"]
fn heuristic_gaps_to_optimal() {
    let (mrt, _, _) = optimal_runs();
    let s = summarize(&mrt.records);
    let total = |m| method(&s, m).total.mean();
    let opt = total(Method::Optimal);
    let gap1 = total(Method::Algorithm1) / opt - 1.0;
    let gap2 = total(Method::Algorithm2) / opt - 1.0;
    let tx = |m| method(&s, m).transmit.mean();
    let disjoint_worst = [
        Method::TransmitOnly,
        Method::Algorithm1,
        Method::Algorithm2,
        Method::Optimal,
    ]
    .iter()
    .all(|&m| tx(Method::Disjoint) >= tx(m));
    let checks = [
        ((gap1 - 0.17).abs() <= 0.08, format!("algorithm1 gap {:.1}% (17 +/- 8)", 100.0 * gap1)),
        ((gap2 - 0.27).abs() <= 0.08, format!("algorithm2 gap {:.1}% (27 +/- 8)", 100.0 * gap2)),
        (
            total(Method::Algorithm1) <= total(Method::Algorithm2),
            format!(
                "algorithm1 {:.2} W vs algorithm2 {:.2} W",
                total(Method::Algorithm1),
                total(Method::Algorithm2)
            ),
        ),
        (
            disjoint_worst,
            format!(
                "mean transmit W: disjoint {:.3}, transmit-only {:.3}, algorithm1 {:.3}, algorithm2 {:.3}, optimal {:.3}",
                tx(Method::Disjoint),
                tx(Method::TransmitOnly),
                tx(Method::Algorithm1),
                tx(Method::Algorithm2),
                tx(Method::Optimal)
            ),
        ),
    ];
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail: Vec<String> = checks
        .iter()
        .map(|(ok, t)| format!("{}{t}", if *ok { "" } else { "FAILED " }))
        .collect();
    verdict("heuristic gaps to optimal, MRT", pass, &detail.join("; "));
    let failures = mrt
        .records
        .iter()
        .filter(|r| r.status == RecordStatus::RecheckFailed)
        .count();
    assert_eq!(failures, 0);
    assert!(pass);
}
