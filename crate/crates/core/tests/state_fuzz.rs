use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zerowait_core::policy::SampleSize;
use zerowait_core::{CoxianDist, Destination, PolicySpec, SystemState};

fn check(state: &SystemState) {
    state.validate().unwrap();
    let n = state.servers() as u64;
    assert_eq!(state.idle() + state.busy(), n);
    for level in 1..state.buffer() {
        assert!(state.s_level(level) >= state.s_level(level + 1));
    }
    assert!(state.s_level(1) <= 1.0);
}

#[test]
fn million_random_transitions() {
    let dist = CoxianDist::new(&[0.5, 0.7], &[1.0, 2.0, 3.0])
        .unwrap()
        .normalize();
    let policies = [
        PolicySpec::Jsq,
        PolicySpec::Jiq,
        PolicySpec::IdleOneFirst,
        PolicySpec::PowerOfD(SampleSize::Fixed(3)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut state = SystemState::empty(7, 3, 3).unwrap();
    for step in 0..1_000_000u32 {
        let policy = &policies[(step % 4) as usize];
        if rng.random::<f64>() < 0.5 {
            match policy.route(&state, &mut rng) {
                Destination::Idle => state.apply_arrival(1, 1).unwrap(),
                Destination::Busy { level, phase } => {
                    state.apply_arrival(level + 1, phase).unwrap()
                }
                Destination::Drop => {
                    let full = state.level_count(state.buffer());
                    assert!(full > 0);
                    if *policy == PolicySpec::Jsq {
                        assert_eq!(full, 7);
                    }
                }
            }
        } else {
            let cells: Vec<_> = state.cells().collect();
            if cells.is_empty() {
                continue;
            }
            let (level, phase, _) = cells[rng.random_range(0..cells.len())];
            let p = dist.continuation(phase);
            if rng.random::<f64>() < p {
                state.apply_phase_advance(level, phase).unwrap();
            } else {
                state.apply_departure(level, phase).unwrap();
            }
        }
        check(&state);
    }
}
