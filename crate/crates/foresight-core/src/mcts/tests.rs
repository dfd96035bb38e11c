use super::stubs::{BanditModel, BanditPolicy, StubModel, StubPolicy};
use super::*;
use crate::rng::rng_stream;

fn cfg(n_sim: usize, depth: usize, k: usize) -> Config {
    Config {
        n_sim,
        depth_d: depth,
        k_candidates: k,
        gamma: 0.9,
        c_puct: 1.0,
        ..Config::default()
    }
}

fn obs() -> ObservationVec {
    ObservationVec(vec![0.4, 0.6, 0.0, 0.2, 0.3, 0.7, 0.2, 0.8, 0.8, 0.0])
}

#[test]
fn puct_score_matches_hand_evaluation() {
    // Q=0.5, P=0.2, N=3, parent_total=10, c=1:
    // 0.5 + 0.2*sqrt(10)/4 = 0.658113883008419
    let e = EdgeStats { n: 3, w: 1.5, q: 0.5, p: 0.2 };
    let expected = 0.5 + 0.2 * 10f64.sqrt() / 4.0;
    assert!((puct_score(&e, 10, 1.0) - expected).abs() < 1e-12);
    assert!((puct_score(&e, 10, 1.0) - 0.658_113_883_008_419).abs() < 1e-9);
}

#[test]
fn puct_score_degenerates_to_q() {
    let e = EdgeStats { n: 3, w: 1.5, q: 0.5, p: 0.2 };
    // c = 0: exploration term vanishes.
    assert_eq!(puct_score(&e, 10, 0.0), 0.5);
    // parent_total_n = 0: sqrt(0) = 0.
    assert_eq!(puct_score(&e, 0, 1.0), 0.5);
}

#[test]
fn fresh_node_selects_the_max_prior_child() {
    let mut tree = Tree::with_root(obs());
    let policy = BanditPolicy { k: 3, chunk_h: 1, priors: vec![0.2, 0.5, 0.3] };
    expand(&mut tree, 0, &policy, 3, &mut rng_stream(0, "t")).unwrap();
    assert_eq!(select_edge(tree.root(), 1.0), 1);
}

#[test]
fn puct_arithmetic_decides_between_exploit_and_explore() {
    // Edge A: Q=1 with 10 visits, P=0.1. Edge B: unvisited, P=0.9.
    // total=10, c=1: score_A = 1 + 0.1*sqrt(10)/11 = 1.0287;
    //                score_B = 0 + 0.9*sqrt(10)/1  = 2.8460 -> B wins.
    let node = Node {
        obs: obs(),
        depth: 0,
        expanded: true,
        edges: vec![
            Edge {
                action: ActionChunk::zeros(1),
                stats: EdgeStats { n: 10, w: 10.0, q: 1.0, p: 0.1 },
                reward: 0.0,
                child: None,
            },
            Edge {
                action: ActionChunk::zeros(1),
                stats: EdgeStats { n: 0, w: 0.0, q: 0.0, p: 0.9 },
                reward: 0.0,
                child: None,
            },
        ],
    };
    assert_eq!(select_edge(&node, 1.0), 1);
    // With a tiny exploration constant the visited Q=1 edge wins instead.
    assert_eq!(select_edge(&node, 0.01), 0);
}

#[test]
fn expand_creates_k_children_and_rejects_repeats() {
    let mut tree = Tree::with_root(obs());
    let policy = StubPolicy { seed: 5, chunk_h: 2 };
    expand(&mut tree, 0, &policy, 8, &mut rng_stream(0, "t")).unwrap();
    let root = tree.root();
    assert_eq!(root.edges.len(), 8);
    let prior_sum: f64 = root.edges.iter().map(|e| e.stats.p).sum();
    assert!((prior_sum - 1.0).abs() < 1e-12);
    for e in &root.edges {
        assert_eq!(e.stats.n, 0);
        assert_eq!(e.stats.q, 0.0);
        assert!(e.child.is_none());
    }
    let err = expand(&mut tree, 0, &policy, 8, &mut rng_stream(0, "t")).unwrap_err();
    assert!(matches!(err, crate::error::Error::Usage(_)));
}

#[test]
fn expand_k1_single_child_prior_one() {
    let mut tree = Tree::with_root(obs());
    let policy = StubPolicy { seed: 5, chunk_h: 2 };
    expand(&mut tree, 0, &policy, 1, &mut rng_stream(0, "t")).unwrap();
    assert_eq!(tree.root().edges.len(), 1);
    assert_eq!(tree.root().edges[0].stats.p, 1.0);
}

fn hand_tree() -> Tree {
    // root --e0--> n1 --e0--> n2, with stored rewards on both edges.
    let mut tree = Tree::with_root(obs());
    tree.nodes[0].expanded = true;
    tree.nodes[0].edges = vec![Edge {
        action: ActionChunk::zeros(1),
        stats: EdgeStats { n: 2, w: 1.0, q: 0.5, p: 1.0 },
        reward: 0.0,
        child: Some(1),
    }];
    tree.nodes.push(Node { obs: obs(), depth: 1, expanded: true, edges: Vec::new() });
    tree.nodes[1].edges = vec![Edge {
        action: ActionChunk::zeros(1),
        stats: EdgeStats::fresh(1.0),
        reward: 0.7,
        child: Some(2),
    }];
    tree.nodes.push(Node { obs: obs(), depth: 2, expanded: false, edges: Vec::new() });
    tree
}

#[test]
fn backpropagate_single_edge_hand_case() {
    // N=2, W=1.0 gets leaf value 0.5: N=3, W=1.5, Q=0.5.
    let mut tree = hand_tree();
    backpropagate(&mut tree, &[(0, 0)], 0.5, 0.9, true);
    let s = tree.nodes[0].edges[0].stats;
    assert_eq!(s.n, 3);
    assert!((s.w - 1.5).abs() < 1e-12);
    assert!((s.q - 0.5).abs() < 1e-12);
}

#[test]
fn backpropagate_two_edge_discounted_hand_case() {
    // Stored root-edge reward 0, leaf value 1, gamma 0.9:
    // leaf edge receives G=1.0, root edge receives G=0.9.
    let mut tree = hand_tree();
    tree.nodes[0].edges[0].stats = EdgeStats::fresh(1.0);
    backpropagate(&mut tree, &[(0, 0), (1, 0)], 1.0, 0.9, true);
    assert!((tree.nodes[1].edges[0].stats.w - 1.0).abs() < 1e-12);
    assert!((tree.nodes[0].edges[0].stats.w - 0.9).abs() < 1e-12);
}

#[test]
fn backpropagate_gamma_zero_keeps_only_immediate_values() {
    let mut tree = hand_tree();
    tree.nodes[0].edges[0].stats = EdgeStats::fresh(1.0);
    tree.nodes[0].edges[0].reward = 0.3;
    backpropagate(&mut tree, &[(0, 0), (1, 0)], 1.0, 0.0, true);
    // Root edge gets its own stored reward only; leaf edge the leaf value.
    assert!((tree.nodes[0].edges[0].stats.w - 0.3).abs() < 1e-12);
    assert!((tree.nodes[1].edges[0].stats.w - 1.0).abs() < 1e-12);
}

#[test]
fn undiscounted_variant_adds_bare_leaf_value_everywhere() {
    let mut tree = hand_tree();
    tree.nodes[0].edges[0].stats = EdgeStats::fresh(1.0);
    backpropagate(&mut tree, &[(0, 0), (1, 0)], 1.0, 0.9, false);
    assert!((tree.nodes[0].edges[0].stats.w - 1.0).abs() < 1e-12);
    assert!((tree.nodes[1].edges[0].stats.w - 1.0).abs() < 1e-12);
}

#[test]
fn single_simulation_visits_exactly_one_edge() {
    let policy = StubPolicy { seed: 3, chunk_h: 2 };
    let model = StubModel { seed: 3 };
    let outcome =
        plan_search(&obs(), &policy, &model, &cfg(1, 3, 8), &mut rng_stream(0, "t")).unwrap();
    assert!(outcome.tree.root().expanded);
    let visited: Vec<u64> =
        outcome.result.visits.iter().copied().filter(|&n| n > 0).collect();
    assert_eq!(visited, vec![1]);
}

#[test]
fn bandit_with_known_rewards_picks_the_best_arm() {
    // Rewards 0.9 for arm 2, 0.1 elsewhere; uniform priors, D=1, 8 sims.
    let policy = BanditPolicy { k: 4, chunk_h: 1, priors: vec![1.0; 4] };
    let model = BanditModel { rewards: vec![0.1, 0.1, 0.9, 0.1], chunk_h: 1 };
    let result =
        plan(&obs(), &policy, &model, &cfg(8, 1, 4), &mut rng_stream(0, "t")).unwrap();
    assert_eq!(result.chosen_index, 2);
    let total: u64 = result.visits.iter().sum();
    assert_eq!(total, 8);
}

#[test]
fn visit_conservation_holds_after_every_simulation() {
    let policy = StubPolicy { seed: 11, chunk_h: 2 };
    let model = StubModel { seed: 11 };
    let outcome =
        plan_search(&obs(), &policy, &model, &cfg(64, 3, 3), &mut rng_stream(0, "t")).unwrap();
    verify_conservation(&outcome);
}

pub(crate) fn verify_conservation(outcome: &SearchOutcome) {
    // Replay the simulation paths through the final tree.
    let tree = &outcome.tree;
    let mut edge_counts: Vec<Vec<u64>> =
        tree.nodes.iter().map(|n| vec![0; n.edges.len()]).collect();
    let mut pass_through: Vec<u64> = vec![0; tree.nodes.len()];
    for (i, sim) in outcome.sims.iter().enumerate() {
        let mut node = 0usize;
        for &e in &sim.path {
            pass_through[node] += 1;
            edge_counts[node][e] += 1;
            node = tree.nodes[node].edges[e].child.expect("path edges have children");
        }
        // Root visit conservation after each completed simulation.
        let root_total: u64 = edge_counts[0].iter().sum();
        assert_eq!(root_total, i as u64 + 1);
    }
    // Final tree statistics agree with the replay, for every node.
    for (ni, node) in tree.nodes.iter().enumerate() {
        let total: u64 = node.edges.iter().map(|e| e.stats.n).sum();
        assert_eq!(total, pass_through[ni], "node {ni}");
        for (ei, edge) in node.edges.iter().enumerate() {
            assert_eq!(edge.stats.n, edge_counts[ni][ei], "node {ni} edge {ei}");
        }
    }
}

#[test]
fn q_values_stay_within_discounted_reward_bounds() {
    // Stub rewards lie in [0, 1], so every Q must lie in
    // [0 - eps, 1/(1-gamma) + eps].
    let policy = StubPolicy { seed: 17, chunk_h: 2 };
    let model = StubModel { seed: 17 };
    let outcome =
        plan_search(&obs(), &policy, &model, &cfg(128, 3, 3), &mut rng_stream(0, "t")).unwrap();
    let hi = 1.0 / (1.0 - 0.9) + 1e-9;
    for node in &outcome.tree.nodes {
        for edge in &node.edges {
            assert!(edge.stats.q >= -1e-9 && edge.stats.q <= hi, "q={}", edge.stats.q);
        }
    }
}

#[test]
fn scaling_priors_before_normalization_changes_nothing() {
    let base = BanditPolicy { k: 4, chunk_h: 1, priors: vec![0.1, 0.2, 0.3, 0.4] };
    let scaled = BanditPolicy {
        k: 4,
        chunk_h: 1,
        priors: vec![0.1 * 37.0, 0.2 * 37.0, 0.3 * 37.0, 0.4 * 37.0],
    };
    let model = BanditModel { rewards: vec![0.4, 0.2, 0.8, 0.1], chunk_h: 1 };
    let a = plan(&obs(), &base, &model, &cfg(32, 1, 4), &mut rng_stream(0, "t")).unwrap();
    let b = plan(&obs(), &scaled, &model, &cfg(32, 1, 4), &mut rng_stream(0, "t")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn paths_terminate_at_the_depth_cap() {
    let policy = StubPolicy { seed: 23, chunk_h: 2 };
    let model = StubModel { seed: 23 };
    let outcome =
        plan_search(&obs(), &policy, &model, &cfg(256, 3, 2), &mut rng_stream(0, "t")).unwrap();
    assert!(outcome.sims.iter().all(|s| s.path.len() <= 3));
    assert!(outcome.sims.iter().any(|s| s.path.len() == 3));
    for node in &outcome.tree.nodes {
        assert!(node.depth <= 3);
        if node.depth == 3 {
            assert!(!node.expanded, "depth-cap nodes must stay unexpanded");
        }
    }
}

#[test]
fn planner_matches_brute_force_on_random_stub_instances() {
    // 20 deterministic K=3, D=3 instances; PUCT with enough simulations must
    // recover the exhaustive optimum in at least 19.
    let mut agree = 0;
    for seed in 0..20u64 {
        let policy = StubPolicy { seed, chunk_h: 2 };
        let model = StubModel { seed };
        let config = cfg(1000, 3, 3);
        let planned =
            plan(&obs(), &policy, &model, &config, &mut rng_stream(seed, "plan")).unwrap();
        let (oracle_idx, _) = brute_force_oracle(
            &obs(),
            &policy,
            &model,
            3,
            3,
            config.gamma,
            &mut rng_stream(seed, "oracle"),
        )
        .unwrap();
        if planned.chosen_index == oracle_idx {
            agree += 1;
        }
    }
    assert!(agree >= 19, "only {agree}/20 instances agreed with the oracle");
}

#[test]
fn oracle_depth_one_is_argmax_single_step_reward() {
    let policy = BanditPolicy { k: 3, chunk_h: 1, priors: vec![1.0; 3] };
    let model = BanditModel { rewards: vec![0.3, 0.9, 0.5], chunk_h: 1 };
    let (idx, value) =
        brute_force_oracle(&obs(), &policy, &model, 3, 1, 0.9, &mut rng_stream(0, "t")).unwrap();
    assert_eq!(idx, 1);
    assert!((value - 0.9).abs() < 1e-12);
}

#[test]
fn oracle_enforces_the_size_cap() {
    let policy = StubPolicy { seed: 1, chunk_h: 1 };
    let model = StubModel { seed: 1 };
    let err = brute_force_oracle(&obs(), &policy, &model, 10, 6, 0.9, &mut rng_stream(0, "t"))
        .unwrap_err();
    assert!(matches!(err, crate::error::Error::Usage(_)));
}

#[test]
fn oracle_hand_case_three_levels() {
    // A 2-ary depth-2 bandit where the greedy first move is a trap:
    // arm 0 pays 0.6 now but the tree re-pays per-arm on every level, so
    // paths through arm 1 (0.5 + 0.9*max(...)) must be compared by hand.
    // With state-independent rewards the oracle reduces to
    // argmax_i r_i + 0.9 * max_j r_j: arm order only matters via r_i.
    let policy = BanditPolicy { k: 2, chunk_h: 1, priors: vec![1.0; 2] };
    let model = BanditModel { rewards: vec![0.6, 0.5], chunk_h: 1 };
    let (idx, value) =
        brute_force_oracle(&obs(), &policy, &model, 2, 2, 0.9, &mut rng_stream(0, "t")).unwrap();
    assert_eq!(idx, 0);
    assert!((value - (0.6 + 0.9 * 0.6)).abs() < 1e-12);
}

#[test]
fn search_return_dominates_reactive_on_bandits_for_all_seeds() {
    // With the exact reward table as the model, the planner's one-decision
    // discounted return must be >= a reactive sample's for every seed. The
    // simulation budget has to cover the exploration phase plus enough
    // re-visits for max-visit selection to settle on the best arm.
    for seed in 0..50u64 {
        let mut seeder = rng_stream(seed, "bandit-rewards");
        use rand::Rng;
        let rewards: Vec<f64> = (0..4).map(|_| seeder.random_range(0.0..1.0)).collect();
        let policy = BanditPolicy { k: 4, chunk_h: 1, priors: vec![1.0; 4] };
        let model = BanditModel { rewards: rewards.clone(), chunk_h: 1 };
        let planned =
            plan(&obs(), &policy, &model, &cfg(128, 1, 4), &mut rng_stream(seed, "plan")).unwrap();
        let reactive_action =
            policy.sample_one(&obs(), &mut rng_stream(seed, "react")).unwrap();
        let reactive_reward = rewards[model_index(&reactive_action)];
        assert!(
            rewards[planned.chosen_index] + 1e-12 >= reactive_reward,
            "seed {seed}: {} < {reactive_reward}",
            rewards[planned.chosen_index]
        );
    }
}

fn model_index(action: &ActionChunk) -> usize {
    (action.steps()[0][0] / 1e-3).round() as usize
}

#[test]
fn episodes_with_fixed_seeds_are_bit_identical() {
    use crate::env::{TaskKind, TaskSpec};
    let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, 2)).unwrap();
    let policy = StubPolicy { seed: 9, chunk_h: 4 };
    let model = StubModel { seed: 9 };
    let meta = TrajectoryMeta { seed: 4, task_id: 0, variation_id: 2 };
    let config = cfg(4, 2, 3);
    let (a, _) = run_episode(
        &env,
        &policy,
        &model,
        &config,
        DecisionMode::Storm,
        meta.clone(),
        &mut rng_stream(4, "ep"),
        false,
    )
    .unwrap();
    let (b, _) = run_episode(
        &env,
        &policy,
        &model,
        &config,
        DecisionMode::Storm,
        meta,
        &mut rng_stream(4, "ep"),
        false,
    )
    .unwrap();
    assert_eq!(a, b);
    a.check_invariants().unwrap();
}

#[test]
fn reactive_mode_equals_executing_single_samples() {
    use crate::env::{TaskKind, TaskSpec};
    let env = Tabletop::new(TaskSpec::new(TaskKind::PutOnTarget, 1)).unwrap();
    let policy = StubPolicy { seed: 13, chunk_h: 4 };
    let model = StubModel { seed: 13 };
    let meta = TrajectoryMeta { seed: 8, task_id: 0, variation_id: 1 };
    let (traj, trace) = run_episode(
        &env,
        &policy,
        &model,
        &cfg(4, 2, 3),
        DecisionMode::Reactive,
        meta,
        &mut rng_stream(8, "ep"),
        false,
    )
    .unwrap();
    assert!(trace.is_none());
    // Replay by hand: each step must equal sample_one under the same stream.
    let mut rng = rng_stream(8, "ep");
    let mut state = env.reset().unwrap();
    for step in &traj.steps {
        let expected = policy.sample_one(&env.observe(&state), &mut rng).unwrap();
        assert_eq!(step.action, expected);
        state = env.step(&state, &step.action).unwrap().state;
    }
}
