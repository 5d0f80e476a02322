//! Property tests over the library invariants.

use proptest::prelude::*;

use driftgrid::a2c::{self, RolloutBatch, Transition};
use driftgrid::consolidation::{self, Anchor, FisherDiag};
use driftgrid::drift::DetectorState;
use driftgrid::env::{self, Action, GridSpec};
use driftgrid::eval;
use driftgrid::nn::{self, ParamVector};
use driftgrid::scenario::{build_scenario, ScenarioKind};

fn action_strategy() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::TurnLeft),
        Just(Action::TurnRight),
        Just(Action::MoveForward),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    /// For a fixed seed and action sequence, the state trajectory (agent
    /// positions, rewards, pickups) is identical across every variant of a
    /// scenario; only the rendered observations may differ.
    #[test]
    fn semantic_invariance_across_variants(
        seed in 0u64..5000,
        kind in prop_oneof![
            Just(ScenarioKind::Light),
            Just(ScenarioKind::Texture),
            Just(ScenarioKind::Object),
            Just(ScenarioKind::All),
        ],
        actions in prop::collection::vec(action_strategy(), 1..60),
    ) {
        let mut grid = GridSpec::default();
        grid.episode_ticks = 240; // 60 decisions max
        let variants = build_scenario(kind);
        let mut traces = Vec::new();
        for v in &variants {
            let (mut state, _) = env::reset(&grid, v, seed).unwrap();
            let mut trace = Vec::new();
            for &a in &actions {
                let r = env::step(&grid, &mut state, a, v).unwrap();
                trace.push((state.agent_pos, state.agent_heading, r.reward.to_bits(), r.events));
            }
            traces.push(trace);
        }
        prop_assert_eq!(&traces[0], &traces[1]);
        prop_assert_eq!(&traces[0], &traces[2]);
    }

    /// Discounted returns satisfy R_t = r_t + gamma * R_{t+1} across every
    /// non-terminal step, and perfect value estimates zero the advantages.
    #[test]
    fn returns_recursion_holds(
        rewards in prop::collection::vec(-100.0f64..100.0, 1..40),
        gamma in 0.0f64..0.999,
        bootstrap in -50.0f64..50.0,
        done_at in prop::option::of(0usize..40),
    ) {
        let n = rewards.len();
        let transitions: Vec<Transition> = rewards
            .iter()
            .enumerate()
            .map(|(t, &reward)| Transition {
                observation: vec![0.0],
                action: 0,
                log_probability: -1.0,
                reward,
                value_estimate: 0.0,
                done: done_at == Some(t),
            })
            .collect();
        let batch = RolloutBatch { n_envs: 1, n_steps: n, transitions, bootstrap: vec![bootstrap] };
        let (returns, advantages) = a2c::compute_returns(&batch, gamma);
        for t in 0..n {
            let future = if batch.transitions[t].done {
                0.0
            } else if t + 1 < n {
                returns[t + 1]
            } else {
                bootstrap
            };
            let expect = rewards[t] + gamma * future;
            prop_assert!((returns[t] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
            prop_assert_eq!(advantages[t], returns[t]); // value estimates are zero
        }
    }

    /// The consolidation penalty is non-negative whenever F >= 0 and
    /// lambda >= 0, and exactly zero at the anchor.
    #[test]
    fn penalty_nonnegative(
        fisher in prop::collection::vec(0.0f64..10.0, 1..50),
        offsets in prop::collection::vec(-5.0f64..5.0, 1..50),
        lambda in 0.0f64..100.0,
    ) {
        let n = fisher.len().min(offsets.len());
        let config = nn::NetworkConfig { input_shape: (1, 1, n.max(5)), hidden_sizes: vec![], n_actions: 3 };
        let zeros = ParamVector::zeros(&config);
        let len = zeros.len();
        let mut f = vec![0.0; len];
        let mut params = zeros.clone();
        for i in 0..n.min(len) {
            f[i] = fisher[i];
            params.data_mut()[i] = offsets[i];
        }
        let fisher = FisherDiag { values: f, episode_index: 0, sample_episodes: 1 };
        let anchor = Anchor { params: vec![0.0; len], episode_index: 0 };
        let (penalty, _) = consolidation::ewc_penalty_and_grads(&params, &fisher, &anchor, lambda);
        prop_assert!(penalty >= 0.0);
        let at_anchor = consolidation::ewc_penalty_and_grads(&zeros, &fisher, &anchor, lambda);
        prop_assert_eq!(at_anchor.0, 0.0);
    }

    /// The trigger stays two-valued and its decision is shift invariant
    /// away from the eta boundary.
    #[test]
    fn detector_two_valued_and_shift_invariant(
        trace in prop::collection::vec(-300.0f64..300.0, 60..120),
        shift in -1000.0f64..1000.0,
    ) {
        let mut a = DetectorState::new(6, 50, -80.0, 7.0).unwrap();
        let mut b = DetectorState::new(6, 50, -80.0, 7.0).unwrap();
        for &r in &trace {
            a.record_episode(r);
            b.record_episode(r + shift);
            let la = a.current_lambda();
            prop_assert!(la == 0.0 || la == 7.0);
            let diff_a = a.short_average().unwrap() - a.long_average().unwrap();
            let diff_b = b.short_average().unwrap() - b.long_average().unwrap();
            prop_assert!((diff_a - diff_b).abs() < 1e-6);
            if (diff_a - a.eta).abs() > 1e-6 {
                prop_assert_eq!(la, b.current_lambda());
            }
        }
    }

    /// The lower-triangle average ignores the strict upper triangle and is
    /// linear in the matrix.
    #[test]
    fn a_metric_upper_triangle_blind(
        lower in prop::collection::vec(-1000.0f64..1000.0, 6),
        upper in prop::collection::vec(-1000.0f64..1000.0, 3),
        upper2 in prop::collection::vec(-1000.0f64..1000.0, 3),
    ) {
        let m1 = [
            [lower[0], upper[0], upper[1]],
            [lower[1], lower[2], upper[2]],
            [lower[3], lower[4], lower[5]],
        ];
        let m2 = [
            [lower[0], upper2[0], upper2[1]],
            [lower[1], lower[2], upper2[2]],
            [lower[3], lower[4], lower[5]],
        ];
        prop_assert_eq!(eval::a_metric(&m1).unwrap(), eval::a_metric(&m2).unwrap());
    }
}
