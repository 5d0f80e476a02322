//! Hot-path throughput: env stepping, observation rendering, rollout
//! collection, and one full A2C update.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use driftgrid::a2c::{self, EnvSlot, FixedReset, Hyperparams};
use driftgrid::env::{self, Action, GridSpec};
use driftgrid::nn;
use driftgrid::rng;
use driftgrid::scenario::{build_scenario, ScenarioKind};

fn bench_env(c: &mut Criterion) {
    let spec = GridSpec::default();
    let variant = build_scenario(ScenarioKind::Object)[0];
    let mut group = c.benchmark_group("env");
    group.throughput(Throughput::Elements(1));
    group.bench_function("step_decision", |b| {
        let (mut state, _) = env::reset(&spec, &variant, 1).unwrap();
        let actions = [Action::MoveForward, Action::TurnLeft, Action::MoveForward];
        let mut i = 0usize;
        b.iter(|| {
            if state.done(&spec) {
                state = env::reset(&spec, &variant, i as u64).unwrap().0;
            }
            let r = env::step(&spec, &mut state, actions[i % 3], &variant).unwrap();
            i += 1;
            r.reward
        });
    });
    group.bench_function("render_observation", |b| {
        let (state, _) = env::reset(&spec, &variant, 2).unwrap();
        b.iter(|| env::render_observation(&spec, &state, &variant));
    });
    group.finish();
}

fn rollout_fixture(
    spec: &GridSpec,
    hidden: Vec<usize>,
) -> (nn::ParamVector, Vec<EnvSlot>, FixedReset) {
    let variant = build_scenario(ScenarioKind::Object)[0];
    let config = nn::NetworkConfig::new((env::OBS_CHANNELS, spec.window(), spec.window()), hidden);
    let params = nn::init_params(&config, 7);
    let slots = (0..20)
        .map(|i| {
            EnvSlot::new(
                spec,
                variant,
                i as u64,
                rng::stream_rng(3, rng::stream::POLICY_BASE + i as u64),
            )
            .unwrap()
        })
        .collect();
    let resets = FixedReset {
        variant,
        seed_rng: rng::stream_rng(4, rng::stream::RESET_SEEDS),
    };
    (params, slots, resets)
}

fn bench_rollout_and_update(c: &mut Criterion) {
    let spec = GridSpec::default();
    let mut group = c.benchmark_group("a2c");
    group.sample_size(20);
    group.throughput(Throughput::Elements(400));
    group.bench_function("collect_rollout_20x20", |b| {
        let (params, mut slots, mut resets) = rollout_fixture(&spec, vec![64]);
        b.iter(|| {
            a2c::collect_rollout(&spec, &mut slots, &params, 20, &mut resets, false).unwrap()
        });
    });
    group.bench_function("loss_grads_and_update_20x20", |b| {
        let (params, mut slots, mut resets) = rollout_fixture(&spec, vec![64]);
        let batch =
            a2c::collect_rollout(&spec, &mut slots, &params, 20, &mut resets, false).unwrap();
        let hyper = Hyperparams::default();
        let opt = a2c::OptimizerState::new(params.len(), &hyper);
        b.iter(|| {
            let (_, grad, _) = a2c::a2c_loss_and_grads(&batch, &params, &hyper).unwrap();
            a2c::update(&params, &grad, &opt)
        });
    });
    group.finish();
}

criterion_group!(benches, bench_env, bench_rollout_and_update);
criterion_main!(benches);
