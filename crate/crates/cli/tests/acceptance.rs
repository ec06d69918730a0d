//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (uncaptured) before asserting.

use std::io::Write;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use zerowait_cli::config::{DistConfig, RecipeConfig};
use zerowait_cli::{recipes, Context};
use zerowait_core::engine::{self, Horizon};
use zerowait_core::exact::{self, ExactChain};
use zerowait_core::issp::{self, Ordering};
use zerowait_core::meanfield::{self, FluidState, Rhs};
use zerowait_core::policy::SampleSize;
use zerowait_core::{seed, CoxianDist, DerivedConstants, Load, PolicySpec, SimConfig, SystemState};

fn report(id: u32, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_dist(rng: &mut ChaCha8Rng, phases: usize) -> CoxianDist {
    let p: Vec<f64> = (1..phases).map(|_| rng.random_range(0.05..=1.0)).collect();
    let mu: Vec<f64> = (0..phases).map(|_| rng.random_range(0.2..5.0)).collect();
    CoxianDist::new(&p, &mu).unwrap().normalize()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[test]
fn c01_constants_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures: Vec<String> = Vec::new();
    for _ in 0..200 {
        let m = rng.random_range(2..=8);
        let d = random_dist(&mut rng, m);
        let k = DerivedConstants::new(&d).unwrap();
        let mut bad = Vec::new();
        if !k.a.iter().all(|&a| a > 0.0 && a < 1.0) {
            bad.push("a");
        }
        if !k.b.iter().all(|&b| b > 0.0) {
            bad.push("b>0");
        }
        if !k.c.iter().all(|&c| c > 0.0) {
            bad.push("c");
        }
        if !(k.xi > 0.0 && k.xi < 1.0) {
            bad.push("xi in (0,1)");
        }
        if k.xi_identity_residual() > 1e-12 {
            bad.push("identity");
        }
        if !bad.is_empty() {
            failures.push(format!("M={m} {}", bad.join("/")));
        }
    }
    let only_two_phase = failures.iter().all(|f| f.starts_with("M=2 "));
    let detail = format!(
        "{} of 200 distributions violate a property{}",
        failures.len(),
        if !failures.is_empty() && only_two_phase {
            " (all M=2: b_M = 0 and xi = 0 whenever M = 2)"
        } else {
            ""
        }
    );
    report(1, failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn c02_erlang3_ideal() {
    let d = CoxianDist::erlang(3).unwrap();
    let k = DerivedConstants::new(&d).unwrap();
    let t = issp::iterate_ideal(&k, &d, 1.0, 200, Ordering::Collapsed).unwrap();
    let third = 1.0 / 3.0;
    let mut ok = t.iterations() <= 200;
    ok &= t.final_lower().iter().all(|l| (l - third).abs() <= 1e-9);
    let u = t.final_upper();
    ok &= (u[0] - third).abs() <= 1e-9 && (u[1] - 2.0 / 3.0).abs() <= 1e-9;
    ok &= t.lower[1][0] == 0.25;
    let mut worst: f64 = 0.0;
    for n in 0..t.iterations() {
        let (g0, g1) = (third - t.lower[n][0], third - t.lower[n + 1][0]);
        if g0 > 1e-6 {
            worst = worst.max((g1 / g0 - k.xi).abs());
        }
    }
    ok &= k.xi == 0.25 && worst <= 1e-9;
    report(
        2,
        ok,
        &format!(
            "{} iterations, L={:?}, U={:?}, L_11(1)={}, contraction deviation {worst:e}",
            t.iterations(),
            t.final_lower(),
            u,
            t.lower[1][0]
        ),
    );
    assert!(ok);
}

#[test]
fn c03_closed_form_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut largest: f64 = 0.0;
    for _ in 0..50 {
        let m = rng.random_range(2..=8);
        let d = random_dist(&mut rng, m);
        let k = DerivedConstants::new(&d).unwrap();
        let n = 10f64.powf(rng.random_range(4.0..12.0));
        let alpha = rng.random_range(0.05..0.45);
        let t = issp::iterate_rigorous(&k, &d, n, alpha, Some(40), Ordering::Collapsed).unwrap();
        for (row, closed) in t.lower.iter().zip(&t.closed_form) {
            let gap = (row[0] - closed).abs();
            worst = worst.max(gap / row[0].abs().max(1.0));
            worst_abs = worst_abs.max(gap);
            largest = largest.max(row[0].abs());
        }
    }
    let ok = worst <= 1e-12;
    report(
        3,
        ok,
        &format!(
            "largest |chain - closed form| / max(1, |L|) = {worst:e} over 50 tuples \
             (absolute {worst_abs:e}, largest |L| {largest:e})"
        ),
    );
    assert!(ok);
}

#[test]
fn c04_oracle_matrix() {
    let lambda = 0.7;
    let policies = [
        PolicySpec::Jsq,
        PolicySpec::Jiq,
        PolicySpec::IdleOneFirst,
        PolicySpec::PowerOfD(SampleSize::Fixed(2)),
    ];
    let dists = [
        CoxianDist::new(&[], &[1.0]).unwrap(),
        CoxianDist::new(&[0.5], &[1.0, 2.0]).unwrap().normalize(),
    ];
    let mut cases = Vec::new();
    for n in 1..=4 {
        for b in 1..=2 {
            for d in &dists {
                for p in policies {
                    cases.push((n, b, d.clone(), p));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers())
        .build()
        .unwrap();
    let results: Vec<(String, bool, f64, f64)> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(j, (n, b, d, p))| {
                let chain = ExactChain::solve(*n, *b, d, *p, lambda).unwrap();
                let want = chain.metrics();
                let mut cfg = SimConfig::new(*n, *b, d.clone(), *p, Load::Explicit(lambda));
                cfg.horizon = Horizon::Events(1_000_000);
                let runs: Vec<_> = (0..10)
                    .map(|i| {
                        let mut c = cfg.clone();
                        c.seed = seed::derive(4, j as u64, i);
                        engine::run(&c).unwrap()
                    })
                    .collect();
                let s = engine::summarize(&runs);
                let zw = (s.waiting_prob.mean - want.waiting_prob).abs() / s.waiting_prob.stderr;
                let zq = (s.avg_total_queue.mean - want.avg_total_queue).abs()
                    / s.avg_total_queue.stderr;
                let ok = zw <= 3.0 && zq <= 3.0 && chain.residual() <= 1e-10;
                let label = format!("N={n} b={b} M={} {}", d.phases(), p.name());
                (label, ok, zw.max(zq), chain.residual())
            })
            .collect()
    });
    let bad: Vec<String> = results
        .iter()
        .filter(|r| !r.1)
        .map(|r| format!("{} (z={:.2}, residual={:e})", r.0, r.2, r.3))
        .collect();
    let worst_z = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let worst_res = results.iter().map(|r| r.3).fold(0.0, f64::max);
    report(
        4,
        bad.is_empty(),
        &format!(
            "{} of {} cells within 3 sigma; max z = {worst_z:.2}, max residual = {worst_res:e}{}",
            results.len() - bad.len(),
            results.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!("; outside: {}", bad.join(", "))
            }
        ),
    );
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn c05_zero_waiting_trend() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(dir.path().to_path_buf(), 5, workers()).unwrap();
    let cfg = RecipeConfig {
        trials: Some(6),
        ..RecipeConfig::default()
    };
    let rows = recipes::verse_n(&cfg, &ctx).unwrap();
    let column = |policy: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.waiting_prob.mean)
            .collect()
    };
    let (jsq, jiq) = (column("jsq"), column("jiq"));
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let rel = (jiq[2] - jsq[2]).abs() / jsq[2];
    let ok = decreasing(&jsq) && decreasing(&jiq) && rel <= 0.25;
    report(
        5,
        ok,
        &format!(
            "P(W) at N=100,400,1600: JSQ {jsq:?}, JIQ {jiq:?}; JIQ vs JSQ at 1600 differ by {:.1}%",
            rel * 100.0
        ),
    );
    assert!(ok);
}

#[test]
fn c06_insensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(dir.path().to_path_buf(), 6, workers()).unwrap();
    let cfg = RecipeConfig {
        servers: Some(vec![1000]),
        policies: Some(vec!["jsq".into()]),
        trials: Some(5),
        ..RecipeConfig::default()
    };
    let rows = recipes::verse_m(&cfg, &ctx).unwrap();
    let w: Vec<f64> = rows.iter().map(|r| r.waiting_prob.mean).collect();
    let ratio =
        w.iter().cloned().fold(f64::MIN, f64::max) / w.iter().cloned().fold(f64::MAX, f64::min);
    let ok = ratio <= 1.3;
    report(
        6,
        ok,
        &format!("P(W) for M=1,2,4,8: {w:?}; max/min = {ratio:.3}"),
    );
    assert!(ok);
}

#[test]
fn c07_concentration() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::new(dir.path().to_path_buf(), 7, workers()).unwrap();
    let cfg = RecipeConfig {
        servers: Some(vec![2500]),
        policies: Some(vec!["jsq".into()]),
        alpha: Some(0.3),
        events: Some(10_000_000),
        ..RecipeConfig::default()
    };
    let out = recipes::trajectory(&cfg, &ctx).unwrap();
    let c = &out.containment[0];
    let ok = c.freq.iter().all(|&f| f >= 0.95);
    report(
        7,
        ok,
        &format!(
            "containment {:?} (sampled {:?}); N-condition holds: {} (failing: {:?}); intervals {:?}",
            c.freq, c.sampled_freq, c.condition.holds, c.condition.failing, c.intervals
        ),
    );
    assert!(ok);
}

#[test]
fn c08_mean_field() {
    let lambda = 0.99;
    let cox4 = DistConfig::coxian4().build().unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, d) in [
        ("Erlang-3", CoxianDist::erlang(3).unwrap()),
        ("Coxian-4", cox4.clone()),
    ] {
        let star = d.zero_waiting_equilibrium(lambda).unwrap();
        let rhs = meanfield::rhs_jsq_truncated(&FluidState::from_level_one(1, &star), &d, lambda);
        let residual = rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let traj = meanfield::integrate(
            &Rhs::JsqTruncated,
            &d,
            &FluidState::zero(1, d.phases()),
            lambda,
            50.0,
            meanfield::default_step(&d),
            1000,
        )
        .unwrap();
        let last = traj.last().unwrap();
        let gap = last
            .level_one()
            .iter()
            .zip(&star)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        ok &= residual <= 1e-15 && gap <= 1e-6 && last.t == 50.0;
        notes.push(format!(
            "{name}: rhs residual {residual:e}, gap at t=50 {gap:e}"
        ));
    }
    let end = |h: f64| {
        meanfield::integrate(
            &Rhs::JsqTruncated,
            &cox4,
            &FluidState::zero(1, 4),
            lambda,
            2.0,
            h,
            1000,
        )
        .unwrap()
        .pop()
        .unwrap()
        .s
    };
    let (a, b, c) = (end(0.1), end(0.05), end(0.025));
    let diff = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let ratio = diff(&a, &b) / diff(&b, &c);
    ok &= (12.0..=20.0).contains(&ratio);
    notes.push(format!("Richardson ratio {ratio:.3}"));
    report(8, ok, &notes.join("; "));
    assert!(ok);
}

#[test]
fn c09_tail_bound() {
    let d = CoxianDist::new(&[], &[1.0]).unwrap();
    let chain = ExactChain::solve(2, 2, &d, PolicySpec::Jsq, 0.5).unwrap();
    let v = |s: &SystemState| s.s_total();
    let everywhere = |_: &SystemState| true;
    let j_max = exact::diameter(&chain.gen);
    let r = exact::verify_tail_bound(&chain, &v, &everywhere, 1.5, 0.5, 0.0, j_max).unwrap();
    let ok = r.hypotheses_hold() && r.bound_holds() && r.checks.len() == j_max + 1;
    let pairs: Vec<String> = r
        .checks
        .iter()
        .map(|c| format!("j={} {:.4}<={:.4}", c.j, c.probability, c.bound))
        .collect();
    report(
        9,
        ok,
        &format!(
            "B=1.5 gamma=0.5 nu_max={} q_max={} alpha={}; diameter {j_max}; {}",
            r.nu_max,
            r.q_max,
            r.alpha,
            pairs.join(", ")
        ),
    );
    assert!(ok);
}

#[test]
fn c10_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfg = dirs[0].path().join("verse_n.json");
    std::fs::write(&cfg, r#"{"events": 2000000, "trials": 3}"#).unwrap();
    for (dir, workers) in dirs.iter().zip(["1", "2"]) {
        let status = Command::new(env!("CARGO_BIN_EXE_zerowait"))
            .args([
                "recipe",
                "verse-N",
                "--seed",
                "2024",
                "--workers",
                workers,
                "--config",
            ])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
    let a = std::fs::read(dirs[0].path().join("verse_n.csv")).unwrap();
    let b = std::fs::read(dirs[1].path().join("verse_n.csv")).unwrap();
    let ok = a == b && !a.is_empty();
    report(
        10,
        ok,
        &format!("verse_n.csv identical across two runs ({} bytes)", a.len()),
    );
    assert!(ok);
}
