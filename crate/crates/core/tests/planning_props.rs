use std::collections::BTreeSet;

use proptest::prelude::*;
use voxhive::expert::{learn_codebook, map_update, DynamicMap, MapReport, Patch, PATCH};
use voxhive::hierarchy::{auto_organize, dry_run, manager_plan, PlanContext, TaskSpec, MAX_AGENTS};
use voxhive::memory::{Memory, MemoryEntry, Query};
use voxhive::seed;
use voxhive::world::{gen_world, Column, Dims, WorldConfig};

fn reports(dims: Dims) -> impl Strategy<Value = Vec<MapReport>> {
    prop::collection::vec(
        (0..dims.w, 0..dims.l, prop::collection::btree_set("[a-c]", 0..3))
            .prop_map(|(x, z, tags)| (Column::new(x, z), tags)),
        0..10,
    )
}

fn token_sets() -> impl Strategy<Value = Vec<BTreeSet<String>>> {
    prop::collection::vec(prop::collection::btree_set("[a-f]", 1..4), 1..40)
}

proptest! {
    #[test]
    fn map_union_is_monotone_idempotent_and_commutative(a in reports(Dims::new(6, 5, 3)), b in reports(Dims::new(6, 5, 3))) {
        let empty = DynamicMap::new(Dims::new(6, 5, 3));
        let ab = map_update(&map_update(&empty, &a).unwrap(), &b).unwrap();
        let ba = map_update(&map_update(&empty, &b).unwrap(), &a).unwrap();
        prop_assert!(ab.same_content(&ba));
        prop_assert!(map_update(&ab, &a).unwrap().same_content(&ab));
        let union: BTreeSet<Column> = a.iter().chain(&b).map(|r| r.0).collect();
        prop_assert_eq!(ab.explored_columns().collect::<BTreeSet<_>>(), union);
        for (c, tags) in a.iter().chain(&b) {
            prop_assert!(tags.iter().all(|t| ab.tags(*c).is_some_and(|s| s.contains(t))));
        }
    }

    #[test]
    fn retrieval_is_a_stable_sort_by_jaccard(keys in token_sets(), query in prop::collection::btree_set("[a-f]", 1..4), k in 1usize..10) {
        let mut m = Memory::new();
        for key in &keys {
            m.store(MemoryEntry { key_tokens: key.clone(), key_visual: None, plan: Default::default(), metrics: Default::default(), success: true }).unwrap();
        }
        let score = |key: &BTreeSet<String>| {
            let union: BTreeSet<&String> = key.iter().chain(&query).collect();
            key.iter().filter(|t| query.contains(*t)).count() as f64 / union.len() as f64
        };
        let mut want: Vec<usize> = (0..keys.len()).collect();
        want.sort_by(|&i, &j| score(&keys[j]).partial_cmp(&score(&keys[i])).unwrap().then(i.cmp(&j)));
        want.truncate(k);
        let got: Vec<usize> = m.retrieve_topk(&Query { q_t: query.clone(), q_v: None }, k).unwrap().iter().map(|r| r.index).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn kmeans_error_never_rises(seed_value in 0u64..500, k in 1usize..6, n in 4usize..30) {
        let mut rng = seed::rng(seed_value);
        let voxels = (PATCH * PATCH * PATCH) as usize;
        let patches: Vec<Patch> = (0..n)
            .map(|i| (0..voxels).map(|v| [0u8, 2, 6][(i * 7 + v * (i % 3 + 1)) % 3]).collect())
            .collect();
        let fit = learn_codebook(&patches, k, 20, &mut rng).unwrap();
        prop_assert!(fit.error_curve.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn plans_are_acyclic_and_groups_capped(seed_value in 0u64..200, conductors in 1usize..12, available in 1usize..20, task in 0usize..4) {
        let world = gen_world(seed_value, &WorldConfig { agents: 2, ..WorldConfig::default() }).unwrap();
        let states = vec![world.observe(0).unwrap(), world.observe(1).unwrap()];
        let spec = TaskSpec::from_words(["explore", "collect wood:6", "search diamond", "find diamond"][task]);
        let mut plan = manager_plan(&states, &spec, &PlanContext::new(world.dims, conductors)).unwrap();
        prop_assert!(plan.topological_order().is_ok());
        let groups = auto_organize(&mut plan, available).unwrap();
        prop_assert!(!groups.is_empty() && groups.len() <= MAX_AGENTS.min(available));
        prop_assert!(groups.iter().map(|g| g.size()).sum::<usize>() <= MAX_AGENTS);
        let mut covered: Vec<usize> = groups.iter().flat_map(|g| g.queue.clone()).collect();
        covered.sort_unstable();
        let mut open: Vec<usize> = plan.subgoals.iter().filter(|s| s.is_open()).map(|s| s.id).collect();
        open.sort_unstable();
        prop_assert_eq!(covered, open);
        let report = dry_run(&plan, &world, &[]);
        prop_assert!((0.0..=1.0).contains(&report.score()));
    }
}

#[test]
fn zero_agents_cannot_organize() {
    let world = gen_world(0, &WorldConfig::default()).unwrap();
    let mut plan = manager_plan(&[world.observe(0).unwrap()], &TaskSpec::from_words("explore"), &PlanContext::new(world.dims, 1)).unwrap();
    assert_eq!(auto_organize(&mut plan, 0).unwrap_err().kind(), "NoAgents");
}
