//! Simulation against the exact stationary solution on small systems.

use zerowait_core::engine::{self, Horizon};
use zerowait_core::exact::ExactChain;
use zerowait_core::policy::SampleSize;
use zerowait_core::{seed, CoxianDist, Load, PolicySpec, SimConfig};

fn replicas(cfg: &SimConfig, trials: u64) -> engine::ReplicaSummary {
    let runs: Vec<_> = (0..trials)
        .map(|t| {
            let mut c = cfg.clone();
            c.seed = seed::derive(7, 0, t);
            engine::run(&c).unwrap()
        })
        .collect();
    engine::summarize(&runs)
}

#[test]
fn small_systems_match_exact() {
    let dist = CoxianDist::new(&[0.5], &[1.0, 1.0]).unwrap().normalize();
    for policy in [
        PolicySpec::Jsq,
        PolicySpec::Jiq,
        PolicySpec::PowerOfD(SampleSize::Fixed(2)),
    ] {
        let exact = ExactChain::solve(3, 2, &dist, policy, 0.7).unwrap();
        assert!(exact.residual() < 1e-10);
        let want = exact.metrics();
        let mut cfg = SimConfig::new(3, 2, dist.clone(), policy, Load::Explicit(0.7));
        cfg.horizon = Horizon::Events(300_000);
        let got = replicas(&cfg, 8);
        let tol = |e: &engine::Estimate| 4.0 * e.stderr.max(1e-4);
        assert!(
            (got.waiting_prob.mean - want.waiting_prob).abs() < tol(&got.waiting_prob),
            "{policy:?}: {:?} vs {}",
            got.waiting_prob,
            want.waiting_prob
        );
        assert!(
            (got.avg_total_queue.mean - want.avg_total_queue).abs() < tol(&got.avg_total_queue)
        );
        for (e, w) in got.s1m_avg.iter().zip(&want.s1m) {
            assert!((e.mean - w).abs() < tol(e));
        }
    }
}

#[test]
fn pasta_on_exact_chain() {
    // Arrival-counted and time-averaged waiting agree on a chain with drops.
    let dist = CoxianDist::new(&[], &[1.0]).unwrap();
    let exact = ExactChain::solve(2, 1, &dist, PolicySpec::Jiq, 0.9)
        .unwrap()
        .metrics();
    let mut cfg = SimConfig::new(2, 1, dist, PolicySpec::Jiq, Load::Explicit(0.9));
    cfg.horizon = Horizon::Events(1_000_000);
    let m = engine::run(&cfg).unwrap();
    assert!((m.waiting_prob - exact.waiting_prob).abs() < 0.01);
    assert!((m.a1_time_avg - exact.waiting_prob).abs() < 0.01);
    assert!((exact.waiting_prob - exact.drop_prob).abs() < 1e-14);
}

#[test]
fn jsq_waiting_nonincreasing_in_n() {
    let dist = CoxianDist::new(&[], &[1.0]).unwrap();
    let values: Vec<f64> = (1..=4)
        .map(|n| {
            ExactChain::solve(n, 2, &dist, PolicySpec::Jsq, 0.7)
                .unwrap()
                .metrics()
                .waiting_prob
        })
        .collect();
    for w in values.windows(2) {
        assert!(w[1] <= w[0], "{values:?}");
    }
}
