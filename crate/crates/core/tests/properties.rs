use proptest::prelude::*;

use streamsched::agent::{build_priority_list, LearnedPolicy, ModelConfig, Observation, PolicyParameters};
use streamsched::baselines::{brute_force_oracle, HeuristicKind, HeuristicPolicy};
use streamsched::sim::{
    audit_trace, metrics, run_episode, total_executors, ArrivalStream, ClusterState, EpisodeOptions, Horizon, Server, Step,
};
use streamsched::trace::{generate_workload, IntRange, WorkDistribution, WorkloadSpec};

fn cluster() -> impl Strategy<Value = Vec<Server>> {
    prop::collection::vec((prop::sample::select(vec![0.5, 1.0, 2.0]), 1usize..=3), 1..=3).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(id, (speed, n))| Server::new(id, speed, n))
            .collect()
    })
}

fn spec(max_apps: usize, max_stages: u32, max_tasks: u32) -> impl Strategy<Value = WorkloadSpec> {
    (1..=max_apps, 0.05f64..2.0, 1..=max_stages, 1..=max_tasks, any::<u64>()).prop_map(move |(apps, rate, s, t, seed)| WorkloadSpec {
        app_count: apps,
        arrival_rate: rate,
        stage_count_range: IntRange::new(1, s),
        task_count_range: IntRange::new(1, t),
        task_work_distribution: WorkDistribution::LogNormal { mu: 0.0, sigma: 0.7 },
        scale_factors: vec![1.0],
        target_load: 0.5,
        seed,
    })
}

const KINDS: [HeuristicKind; 4] = [
    HeuristicKind::RoundRobin,
    HeuristicKind::FairShare,
    HeuristicKind::CriticalPath,
    HeuristicKind::Random,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heuristic_episodes_satisfy_every_invariant(servers in cluster(), spec in spec(8, 5, 6), k in 0usize..4, cap in 1usize..=9) {
        let workload = generate_workload(&spec).unwrap();
        let max_limit = cap.min(total_executors(&servers));
        let mut policy = HeuristicPolicy::with_options(KINDS[k], None, spec.seed);
        let options = EpisodeOptions { audit: true, max_limit: Some(max_limit), ..EpisodeOptions::default() };
        let trace = run_episode(&mut policy, &workload, &servers, Horizon::unbounded(), options).unwrap();
        prop_assert!(trace.audit_failures.is_empty(), "{:?}", trace.audit_failures);
        prop_assert!(audit_trace(&trace, &servers, &workload).is_empty());
        prop_assert!(trace.all_finished());
        let jct: f64 = metrics(&trace, &servers).per_app.iter().filter_map(|a| a.jct).sum();
        prop_assert!((trace.total_reward() + jct).abs() <= 1e-9 * jct.max(1.0));
    }

    #[test]
    fn truncated_episodes_stop_at_the_action_budget(servers in cluster(), spec in spec(6, 4, 4), budget in 1usize..20) {
        let workload = generate_workload(&spec).unwrap();
        let mut policy = HeuristicPolicy::new(HeuristicKind::RoundRobin);
        let trace = run_episode(&mut policy, &workload, &servers, Horizon::actions(budget), EpisodeOptions::default()).unwrap();
        prop_assert!(trace.decisions.len() <= budget);
        prop_assert!(trace.truncated || trace.all_finished());
    }

    #[test]
    fn priority_lists_are_distributions(servers in cluster(), spec in spec(4, 4, 4), seed in any::<u64>()) {
        let mut workload = generate_workload(&spec).unwrap();
        for app in &mut workload {
            app.arrival_time = 0.0;
        }
        let max_limit = total_executors(&servers);
        let policy = PolicyParameters::new(ModelConfig::new(max_limit), seed).unwrap();
        let mut state = ClusterState::new(servers).unwrap().with_max_limit(max_limit);
        let mut stream = ArrivalStream::new(workload).unwrap();
        while state.next_event_time(&stream) == Some(0.0) {
            prop_assert!(matches!(state.advance(&mut stream), Step::Advanced(_)));
        }
        let cands = state.schedulable_set();
        let mut obs = Observation::from_state(&state, &cands, &policy).unwrap();
        let list = build_priority_list(&mut obs, &policy).unwrap();
        prop_assert!((list.total_probability() - 1.0).abs() < 1e-12);
        prop_assert!(list.entries().windows(2).all(|w| w[0].probability >= w[1].probability));
        prop_assert!(list.entries().iter().all(|e| cands.contains(&e.stage) && (1..=max_limit).contains(&e.limit)));
    }

    #[test]
    fn no_scheduler_beats_the_oracle(spec in spec(2, 3, 2), two in any::<bool>(), seed in any::<u64>()) {
        let servers = if two { vec![Server::new(0, 1.0, 1), Server::new(1, 2.0, 1)] } else { vec![Server::new(0, 1.0, 2)] };
        let workload = generate_workload(&spec).unwrap();
        let tasks: u32 = workload.iter().flat_map(|a| a.stages.iter().map(|s| s.task_count)).sum();
        prop_assume!(tasks <= 6);
        let opt = brute_force_oracle(&workload, &servers).unwrap().cost;
        let cost = |trace: &streamsched::sim::EpisodeTrace| -> f64 {
            metrics(trace, &servers).per_app.iter().map(|a| a.jct.unwrap()).sum()
        };
        for kind in KINDS {
            let mut p = HeuristicPolicy::with_options(kind, None, seed);
            let trace = run_episode(&mut p, &workload, &servers, Horizon::unbounded(), EpisodeOptions::default()).unwrap();
            prop_assert!(cost(&trace) >= opt - 1e-9, "{kind}: {} < {opt}", cost(&trace));
        }
        let params = PolicyParameters::new(ModelConfig::new(2), seed).unwrap();
        let mut learned = LearnedPolicy::sampling(&params, seed);
        let trace = run_episode(&mut learned, &workload, &servers, Horizon::unbounded(), EpisodeOptions::default()).unwrap();
        prop_assert!(cost(&trace) >= opt - 1e-9);
    }
}
