use proptest::prelude::*;
use voxhive::world::{gen_world, Action, Dir, WorldConfig, WorldState, BLOCKS, STONE, WOOD};

fn small_world(seed: u64) -> WorldState {
    let cfg = WorldConfig { width: 12, length: 12, height: 8, ground: 3, agents: 2, ..WorldConfig::default() };
    let mut w = gen_world(seed, &cfg).unwrap();
    w.give(0, STONE, 3).unwrap();
    w.give(1, WOOD, 2).unwrap();
    w
}

fn action() -> impl Strategy<Value = Action> {
    let dir = (0..6usize).prop_map(|i| Dir::ALL[i]);
    prop_oneof![
        dir.clone().prop_map(Action::Move),
        dir.clone().prop_map(Action::Mine),
        (dir, prop_oneof![Just(STONE), Just(WOOD)]).prop_map(|(d, b)| Action::Place(d, b)),
        Just(Action::NoOp),
        Just(Action::Announce(vec!["note".into()])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solid_block_totals_are_conserved(seed in 0u64..1000, actions in prop::collection::vec((0u32..2, action()), 1..60)) {
        let mut w = small_world(seed);
        let before: Vec<u64> = (1..BLOCKS.len() as u8).map(|b| w.total_with_inventories(b)).collect();
        for (agent, a) in &actions {
            let _ = w.step(*agent, a);
        }
        let after: Vec<u64> = (1..BLOCKS.len() as u8).map(|b| w.total_with_inventories(b)).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn failed_steps_leave_the_world_untouched(seed in 0u64..1000, actions in prop::collection::vec((0u32..2, action()), 1..60)) {
        let mut w = small_world(seed);
        for (agent, a) in &actions {
            let snapshot = w.clone();
            match w.step(*agent, a) {
                Ok(_) => prop_assert_eq!(w.tick, snapshot.tick + 1),
                Err(_) => prop_assert_eq!(&w, &snapshot),
            }
        }
    }

    #[test]
    fn snapshots_round_trip(seed in 0u64..1000) {
        let w = small_world(seed);
        prop_assert_eq!(WorldState::from_snapshot(&w.to_snapshot()).unwrap(), w);
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = WorldConfig::default();
    let a = gen_world(7, &cfg).unwrap();
    let b = gen_world(7, &cfg).unwrap();
    assert_eq!(a.to_snapshot(), b.to_snapshot());
    assert_ne!(a.to_snapshot(), gen_world(8, &cfg).unwrap().to_snapshot());
}

#[test]
fn unknown_agent_is_rejected() {
    let mut w = small_world(0);
    assert_eq!(w.step(9, &Action::NoOp).unwrap_err().kind(), "UnknownAgent");
}
