//! Batched synchronous advantage actor-critic.
//!
//! A fixed set of environments is stepped in lockstep under the sampling
//! policy; every `n_steps` decisions the collected transitions feed one
//! joint gradient update (the synchronization barrier). Each environment
//! owns its own action-sampling stream, so stepping envs concurrently is
//! bit-identical to stepping them sequentially.

use ndarray::{Array1, Array2};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{self, Action, EnvState, GridSpec};
use crate::error::{Error, Result};
use crate::nn::{self, ParamVector};
use crate::scenario::MapVariant;

/// Everything a training cell needs beyond the grid itself. Fields that a
/// strategy does not use (e.g. `lambda` for naive) are inert.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub n_envs: usize,
    pub n_steps: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub hidden_sizes: Vec<usize>,
    /// Episodes per map for sequential strategies; the total budget for
    /// multienv.
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub window_short: usize,
    pub window_long: usize,
    pub eta: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub fisher_freq: usize,
    pub fisher_clip: f64,
    pub fisher_sample_size: usize,
    pub fisher_normalize: bool,
    /// Clip as a lower floor instead of the default upper clamp.
    pub fisher_clip_floor: bool,
    pub greedy_eval: bool,
    /// Diagnostic mode: sup keeps only the latest penalty term.
    pub sup_single_anchor: bool,
    /// Diagnostic mode: unsup's trigger is forced on from the first map
    /// boundary onward, ignoring the detector.
    pub unsup_boundary_latch: bool,
    /// Step environments concurrently during rollouts; results are
    /// identical either way.
    pub rollout_parallel: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 0.99,
            n_envs: 20,
            n_steps: 20,
            learning_rate: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.01,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 1e-5,
            hidden_sizes: vec![128, 128],
            train_episodes: 300,
            test_episodes: 100,
            window_short: 6,
            window_long: 50,
            eta: f64::NEG_INFINITY,
            alpha: 0.0,
            lambda: 0.0,
            fisher_freq: 100,
            fisher_clip: 1e-6,
            fisher_sample_size: 100,
            fisher_normalize: true,
            fisher_clip_floor: false,
            greedy_eval: false,
            sup_single_anchor: false,
            unsup_boundary_latch: false,
            rollout_parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub log_probability: f64,
    pub reward: f64,
    pub value_estimate: f64,
    pub done: bool,
}

/// Transitions from `n_envs` environments over `n_steps` decisions,
/// step-major: index `(t, e)` is `t * n_envs + e`.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub n_steps: usize,
    pub transitions: Vec<Transition>,
    /// Value of the state after the last step per env; 0 where done.
    pub bootstrap: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn at(&self, t: usize, e: usize) -> &Transition {
        &self.transitions[t * self.n_envs + e]
    }

    pub fn observation_matrix(&self) -> Array2<f64> {
        let feat = self.transitions[0].observation.len();
        let mut obs = Array2::zeros((self.transitions.len(), feat));
        for (i, tr) in self.transitions.iter().enumerate() {
            obs.row_mut(i)
                .iter_mut()
                .zip(&tr.observation)
                .for_each(|(o, &v)| *o = v);
        }
        obs
    }
}

/// One environment plus its private action-sampling stream.
#[derive(Clone, Debug)]
pub struct EnvSlot {
    pub state: EnvState,
    pub variant: MapVariant,
    pub policy_rng: ChaCha8Rng,
    pub obs: Vec<f64>,
}

impl EnvSlot {
    pub fn new(
        spec: &GridSpec,
        variant: MapVariant,
        env_seed: u64,
        policy_rng: ChaCha8Rng,
    ) -> Result<EnvSlot> {
        let (state, obs) = env::reset(spec, &variant, env_seed)?;
        Ok(EnvSlot {
            state,
            variant,
            policy_rng,
            obs,
        })
    }
}

/// Supplies (variant, env seed) whenever an environment needs a fresh
/// episode. Implementations encode the map schedule.
pub trait ResetSource {
    fn next_reset(&mut self, env_index: usize) -> (MapVariant, u64);
}

/// Fixed variant, seeds drawn from one stream. Enough for tests and
/// evaluation.
pub struct FixedReset {
    pub variant: MapVariant,
    pub seed_rng: ChaCha8Rng,
}

impl ResetSource for FixedReset {
    fn next_reset(&mut self, _env_index: usize) -> (MapVariant, u64) {
        (self.variant, self.seed_rng.next_u64())
    }
}

/// Reset every slot to a fresh episode, drawing (variant, seed) per env in
/// index order.
pub fn reset_all(
    spec: &GridSpec,
    slots: &mut [EnvSlot],
    resets: &mut dyn ResetSource,
) -> Result<()> {
    for (i, slot) in slots.iter_mut().enumerate() {
        let (variant, seed) = resets.next_reset(i);
        let (state, obs) = env::reset(spec, &variant, seed)?;
        slot.state = state;
        slot.variant = variant;
        slot.obs = obs;
    }
    Ok(())
}

fn obs_matrix_of(slots: &[EnvSlot]) -> Array2<f64> {
    let feat = slots[0].obs.len();
    let mut obs = Array2::zeros((slots.len(), feat));
    for (i, slot) in slots.iter().enumerate() {
        obs.row_mut(i)
            .iter_mut()
            .zip(&slot.obs)
            .for_each(|(o, &v)| *o = v);
    }
    obs
}

/// Advance every env `n_steps` decisions under the sampling policy. Envs
/// that are done at a step boundary are reset from `resets` first. Stepping
/// runs concurrently when `parallel` is set; the result is identical either
/// way.
pub fn collect_rollout(
    spec: &GridSpec,
    slots: &mut [EnvSlot],
    params: &ParamVector,
    n_steps: usize,
    resets: &mut dyn ResetSource,
    parallel: bool,
) -> Result<RolloutBatch> {
    let n_envs = slots.len();
    let mut transitions: Vec<Transition> = Vec::with_capacity(n_envs * n_steps);
    for _t in 0..n_steps {
        for (i, slot) in slots.iter_mut().enumerate() {
            if slot.state.done(spec) {
                let (variant, seed) = resets.next_reset(i);
                let (state, obs) = env::reset(spec, &variant, seed)?;
                slot.state = state;
                slot.variant = variant;
                slot.obs = obs;
            }
        }
        let pass = nn::forward(params, obs_matrix_of(slots))?;
        let mut actions = Vec::with_capacity(n_envs);
        for (i, slot) in slots.iter_mut().enumerate() {
            let (a, lp) = nn::sample_action(pass.logits.row(i), &mut slot.policy_rng);
            actions.push((a, lp));
        }
        let step_one = |(i, slot): (usize, &mut EnvSlot)| -> Result<(f64, bool)> {
            let action = Action::from_index(actions[i].0)?;
            let result = env::step(spec, &mut slot.state, action, &slot.variant)?;
            slot.obs = result.observation;
            Ok((result.reward, result.done))
        };
        let outcomes: Vec<Result<(f64, bool)>> = if parallel {
            slots.par_iter_mut().enumerate().map(step_one).collect()
        } else {
            slots.iter_mut().enumerate().map(step_one).collect()
        };
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let (reward, done) = outcome?;
            let (action, log_probability) = actions[i];
            transitions.push(Transition {
                observation: pass.input_row(i),
                action,
                log_probability,
                reward,
                value_estimate: pass.values[i],
                done,
            });
        }
    }
    let tail = nn::forward(params, obs_matrix_of(slots))?;
    let bootstrap = slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            if slot.state.done(spec) {
                0.0
            } else {
                tail.values[i]
            }
        })
        .collect();
    Ok(RolloutBatch {
        n_envs,
        n_steps,
        transitions,
        bootstrap,
    })
}

/// Discounted n-step returns and advantages, step-major like the batch.
/// `R_t = r_t + gamma * R_{t+1}`, restarting across done boundaries, with
/// the bootstrap value closing each env's tail.
pub fn compute_returns(batch: &RolloutBatch, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.transitions.len();
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    for e in 0..batch.n_envs {
        let mut acc = batch.bootstrap[e];
        for t in (0..batch.n_steps).rev() {
            let idx = t * batch.n_envs + e;
            let tr = &batch.transitions[idx];
            if tr.done {
                acc = 0.0;
            }
            acc = tr.reward + gamma * acc;
            returns[idx] = acc;
            advantages[idx] = acc - tr.value_estimate;
        }
    }
    (returns, advantages)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossDiagnostics {
    pub policy_loss: f64,
    /// value_coef-weighted squared error term
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_abs_value_error: f64,
}

/// Mean A2C loss over the batch and its exact gradient.
///
/// loss = mean[-log pi(a|s) * advantage] + value_coef * mean[(R - V)^2]
///        - entropy_coef * mean[H(pi(.|s))]
///
/// The advantage is treated as a constant (no gradient flows through it);
/// the value term differentiates through the recomputed V(s).
pub fn a2c_loss_and_grads(
    batch: &RolloutBatch,
    params: &ParamVector,
    hyper: &Hyperparams,
) -> Result<(f64, ParamVector, LossDiagnostics)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty rollout batch".into()));
    }
    let (returns, advantages) = compute_returns(batch, hyper.gamma);
    let pass = nn::forward(params, batch.observation_matrix())?;
    let n = batch.transitions.len();
    let scale = 1.0 / n as f64;

    let mut dlogits = Array2::zeros((n, nn::N_ACTIONS));
    let mut dvalues = Array1::zeros(n);
    let mut policy_sum = 0.0;
    let mut value_sq_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut abs_err_sum = 0.0;

    for i in 0..n {
        let logp = nn::log_softmax(pass.logits.row(i));
        let action = batch.transitions[i].action;
        let adv = advantages[i];
        let entropy: f64 = logp.iter().map(|lp| -lp.exp() * lp).sum();
        policy_sum += -logp[action] * adv;
        entropy_sum += entropy;
        let v = pass.values[i];
        let err = returns[i] - v;
        value_sq_sum += err * err;
        abs_err_sum += err.abs();
        for j in 0..nn::N_ACTIONS {
            let p = logp[j].exp();
            let onehot = if j == action { 1.0 } else { 0.0 };
            dlogits[[i, j]] = scale
                * (adv * (p - onehot) + hyper.entropy_coef * p * (logp[j] + entropy));
        }
        dvalues[i] = scale * hyper.value_coef * 2.0 * (v - returns[i]);
    }

    let diagnostics = LossDiagnostics {
        policy_loss: policy_sum * scale,
        value_loss: hyper.value_coef * value_sq_sum * scale,
        entropy: entropy_sum * scale,
        mean_abs_value_error: abs_err_sum * scale,
    };
    let loss =
        diagnostics.policy_loss + diagnostics.value_loss - hyper.entropy_coef * diagnostics.entropy;
    if !loss.is_finite() {
        return Err(Error::Numerical {
            message: "non-finite A2C loss".into(),
            diagnostics: vec![
                ("policy_loss".into(), diagnostics.policy_loss),
                ("value_loss".into(), diagnostics.value_loss),
                ("entropy".into(), diagnostics.entropy),
            ],
        });
    }
    let grad = nn::backward(&pass, dlogits.view(), dvalues.view())?;
    Ok((loss, grad, diagnostics))
}

/// RMSProp-style adaptive scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub accumulator: Vec<f64>,
    pub decay: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize, hyper: &Hyperparams) -> OptimizerState {
        OptimizerState {
            accumulator: vec![0.0; n_params],
            decay: hyper.rmsprop_decay,
            epsilon: hyper.rmsprop_epsilon,
            learning_rate: hyper.learning_rate,
        }
    }
}

/// acc <- decay * acc + (1 - decay) * g^2;  theta <- theta - lr * g / sqrt(acc + eps)
pub fn update(
    params: &ParamVector,
    grad: &ParamVector,
    opt: &OptimizerState,
) -> (ParamVector, OptimizerState) {
    debug_assert_eq!(params.len(), grad.len());
    let mut next = params.clone();
    let mut acc = opt.accumulator.clone();
    for ((theta, g), a) in next
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(acc.iter_mut())
    {
        *a = opt.decay * *a + (1.0 - opt.decay) * g * g;
        *theta -= opt.learning_rate * g / (*a + opt.epsilon).sqrt();
    }
    (
        next,
        OptimizerState {
            accumulator: acc,
            decay: opt.decay,
            epsilon: opt.epsilon,
            learning_rate: opt.learning_rate,
        },
    )
}

/// Decision counts for the rollouts covering one episode: full `n_steps`
/// chunks plus one short tail when the episode length does not divide
/// evenly.
pub fn rollout_chunks(total_decisions: usize, n_steps: usize) -> Vec<usize> {
    let mut chunks = Vec::new();
    let mut remaining = total_decisions;
    while remaining > 0 {
        let len = remaining.min(n_steps);
        chunks.push(len);
        remaining -= len;
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenario::{build_scenario, ScenarioKind};

    fn make_slots(spec: &GridSpec, n: usize, seed: u64) -> Vec<EnvSlot> {
        let variant = build_scenario(ScenarioKind::Object)[0];
        (0..n)
            .map(|i| {
                EnvSlot::new(
                    spec,
                    variant,
                    seed * 1000 + i as u64,
                    rng::stream_rng(seed, rng::stream::POLICY_BASE + i as u64),
                )
                .unwrap()
            })
            .collect()
    }

    fn fixed_reset(seed: u64) -> FixedReset {
        FixedReset {
            variant: build_scenario(ScenarioKind::Object)[0],
            seed_rng: rng::stream_rng(seed, rng::stream::RESET_SEEDS),
        }
    }

    fn net(spec: &GridSpec, hidden: Vec<usize>) -> nn::NetworkConfig {
        nn::NetworkConfig::new(
            (crate::env::OBS_CHANNELS, spec.window(), spec.window()),
            hidden,
        )
    }

    #[test]
    fn rollout_has_n_envs_times_n_steps_transitions() {
        let spec = GridSpec::default();
        let params = nn::init_params(&net(&spec, vec![16]), 0);
        let mut slots = make_slots(&spec, 20, 1);
        let mut resets = fixed_reset(2);
        let batch =
            collect_rollout(&spec, &mut slots, &params, 20, &mut resets, false).unwrap();
        assert_eq!(batch.len(), 400);
        assert_eq!(batch.bootstrap.len(), 20);
        for tr in &batch.transitions {
            assert!(tr.log_probability <= 0.0);
            assert!(tr.value_estimate.is_finite());
        }
    }

    #[test]
    fn rollout_is_deterministic() {
        let spec = GridSpec::default();
        let params = nn::init_params(&net(&spec, vec![16]), 3);
        let run = || {
            let mut slots = make_slots(&spec, 4, 9);
            let mut resets = fixed_reset(4);
            let batch =
                collect_rollout(&spec, &mut slots, &params, 30, &mut resets, false).unwrap();
            batch
                .transitions
                .iter()
                .map(|t| (t.action, t.reward.to_bits(), t.log_probability.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn parallel_equals_sequential_transition_for_transition() {
        let spec = GridSpec::default();
        let params = nn::init_params(&net(&spec, vec![16]), 5);
        let collect = |parallel: bool| {
            let mut slots = make_slots(&spec, 6, 13);
            let mut resets = fixed_reset(6);
            collect_rollout(&spec, &mut slots, &params, 40, &mut resets, parallel).unwrap()
        };
        let seq = collect(false);
        let par = collect(true);
        assert_eq!(seq.bootstrap, par.bootstrap);
        for (a, b) in seq.transitions.iter().zip(&par.transitions) {
            assert_eq!(a.observation, b.observation);
            assert_eq!(a.action, b.action);
            assert_eq!(a.reward.to_bits(), b.reward.to_bits());
            assert_eq!(a.done, b.done);
        }
        // and the gradients they produce match bit for bit
        let hyper = Hyperparams::default();
        let ga = a2c_loss_and_grads(&seq, &params, &hyper).unwrap();
        let gb = a2c_loss_and_grads(&par, &params, &hyper).unwrap();
        assert_eq!(ga.0.to_bits(), gb.0.to_bits());
        assert_eq!(ga.1.data(), gb.1.data());
    }

    #[test]
    fn rollout_auto_resets_done_envs() {
        let mut spec = GridSpec::default();
        spec.episode_ticks = 40; // 10 decisions
        let params = nn::init_params(&net(&spec, vec![8]), 1);
        let mut slots = make_slots(&spec, 2, 3);
        let mut resets = fixed_reset(8);
        let batch =
            collect_rollout(&spec, &mut slots, &params, 25, &mut resets, false).unwrap();
        let dones: Vec<usize> = batch
            .transitions
            .iter()
            .enumerate()
            .filter(|(_, t)| t.done)
            .map(|(i, _)| i / batch.n_envs)
            .collect();
        // done at decision indices 9 and 19 for both envs
        assert_eq!(dones, vec![9, 9, 19, 19]);
        assert!(!slots[0].state.done(&spec));
    }

    fn hand_batch(rewards: &[f64], values: &[f64], bootstrap: f64, dones: &[bool]) -> RolloutBatch {
        let transitions = rewards
            .iter()
            .zip(values)
            .zip(dones)
            .map(|((&reward, &value_estimate), &done)| Transition {
                observation: vec![0.0],
                action: 0,
                log_probability: -1.0,
                reward,
                value_estimate,
                done,
            })
            .collect();
        RolloutBatch {
            n_envs: 1,
            n_steps: rewards.len(),
            transitions,
            bootstrap: vec![bootstrap],
        }
    }

    #[test]
    fn returns_match_hand_recursion() {
        let batch = hand_batch(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0, &[false, false, true]);
        let (returns, _) = compute_returns(&batch, 0.99);
        assert!((returns[0] - 2.9701).abs() < 1e-12);
        assert!((returns[1] - 1.99).abs() < 1e-12);
        assert!((returns[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gamma_returns_equal_rewards() {
        let batch = hand_batch(
            &[3.0, -2.0, 7.0, 0.5],
            &[0.0; 4],
            11.0,
            &[false, false, false, false],
        );
        let (returns, _) = compute_returns(&batch, 0.0);
        assert_eq!(returns, vec![3.0, -2.0, 7.0, 0.5]);
    }

    #[test]
    fn perfect_value_estimates_zero_the_advantages() {
        let rewards = [1.0, 2.0, -1.0];
        let dones = [false, false, false];
        let bootstrap = 5.0;
        let gamma = 0.9;
        // compute expected returns by hand
        let r2 = -1.0 + gamma * bootstrap;
        let r1 = 2.0 + gamma * r2;
        let r0 = 1.0 + gamma * r1;
        let batch = hand_batch(&rewards, &[r0, r1, r2], bootstrap, &dones);
        let (_, advantages) = compute_returns(&batch, gamma);
        assert!(advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn returns_satisfy_recursion_property_on_real_rollouts() {
        let spec = GridSpec::default();
        let params = nn::init_params(&net(&spec, vec![8]), 2);
        let mut slots = make_slots(&spec, 3, 17);
        let mut resets = fixed_reset(18);
        let batch =
            collect_rollout(&spec, &mut slots, &params, 15, &mut resets, false).unwrap();
        let gamma = 0.99;
        let (returns, _) = compute_returns(&batch, gamma);
        for e in 0..batch.n_envs {
            for t in 0..batch.n_steps - 1 {
                let idx = t * batch.n_envs + e;
                let next = (t + 1) * batch.n_envs + e;
                if !batch.transitions[next].done {
                    let lhs = returns[idx] - gamma * returns[next];
                    let reward = batch.transitions[idx].reward;
                    // exact up to one rounding of the recursion itself
                    assert!(
                        (lhs - reward).abs() <= 1e-9 * reward.abs().max(1.0),
                        "{lhs} vs {reward}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_net_zero_rewards_loss_is_pure_entropy_bonus() {
        // all-zero params make V = 0 and logits = 0 exactly; with zero
        // rewards the returns and advantages vanish and the loss is
        // -entropy_coef * ln(3)
        let config = nn::NetworkConfig::new((1, 1, 1), vec![4]);
        let params = nn::ParamVector::zeros(&config);
        let batch = RolloutBatch {
            n_envs: 1,
            n_steps: 2,
            transitions: vec![
                Transition {
                    observation: vec![0.3],
                    action: 1,
                    log_probability: -1.0,
                    reward: 0.0,
                    value_estimate: 0.0,
                    done: false,
                },
                Transition {
                    observation: vec![-0.4],
                    action: 2,
                    log_probability: -1.0,
                    reward: 0.0,
                    value_estimate: 0.0,
                    done: false,
                },
            ],
            bootstrap: vec![0.0],
        };
        let hyper = Hyperparams::default();
        let (loss, _, diag) = a2c_loss_and_grads(&batch, &params, &hyper).unwrap();
        let expected = -hyper.entropy_coef * 3.0f64.ln();
        assert!((loss - expected).abs() < 1e-12, "loss {loss} vs {expected}");
        assert!((diag.entropy - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let spec = GridSpec::default();
        let config = nn::NetworkConfig::new((1, 2, 2), vec![6]);
        let _ = spec;
        let params = nn::init_params(&config, 23);
        let mut rng = rng::stream_rng(31, 0);
        let transitions: Vec<Transition> = (0..8)
            .map(|i| Transition {
                observation: (0..4).map(|_| rng::next_f64(&mut rng)).collect(),
                action: i % 3,
                log_probability: -1.0,
                reward: rng::next_f64(&mut rng) * 4.0 - 2.0,
                value_estimate: rng::next_f64(&mut rng) - 0.5,
                done: i % 5 == 4,
            })
            .collect();
        let batch = RolloutBatch {
            n_envs: 2,
            n_steps: 4,
            transitions,
            bootstrap: vec![0.3, -0.2],
        };
        for entropy_coef in [0.0, 0.01] {
            let hyper = Hyperparams {
                entropy_coef,
                ..Hyperparams::default()
            };
            let (_, grad, _) = a2c_loss_and_grads(&batch, &params, &hyper).unwrap();
            // FD oracle with advantages frozen at the base parameters
            let (returns, advantages) = compute_returns(&batch, hyper.gamma);
            let f = |p: &ParamVector| {
                let pass = nn::forward(p, batch.observation_matrix()).unwrap();
                let n = batch.len() as f64;
                let mut total = 0.0;
                for i in 0..batch.len() {
                    let logp = nn::log_softmax(pass.logits.row(i));
                    let h: f64 = logp.iter().map(|lp| -lp.exp() * lp).sum();
                    total += -logp[batch.transitions[i].action] * advantages[i];
                    total += hyper.value_coef * (returns[i] - pass.values[i]).powi(2);
                    total -= hyper.entropy_coef * h;
                }
                total / n
            };
            let numeric = nn::finite_difference_grad(f, &params, 1e-5);
            let err = nn::max_relative_error(grad.data(), &numeric);
            assert!(err <= 1e-4, "entropy_coef {entropy_coef}: max rel err {err}");
        }
    }

    #[test]
    fn doubling_value_coef_doubles_the_value_loss_component() {
        let config = nn::NetworkConfig::new((1, 2, 1), vec![4]);
        let params = nn::init_params(&config, 77);
        let batch = hand_batch(&[1.0, -1.0, 0.5], &[0.1, 0.2, 0.3], 0.0, &[false; 3]);
        let mut batch = RolloutBatch {
            transitions: batch
                .transitions
                .into_iter()
                .map(|mut t| {
                    t.observation = vec![0.2, 0.4];
                    t
                })
                .collect(),
            ..batch
        };
        batch.n_envs = 1;
        let base = Hyperparams::default();
        let doubled = Hyperparams {
            value_coef: base.value_coef * 2.0,
            ..base.clone()
        };
        let (_, _, d1) = a2c_loss_and_grads(&batch, &params, &base).unwrap();
        let (_, _, d2) = a2c_loss_and_grads(&batch, &params, &doubled).unwrap();
        assert_eq!(d2.value_loss, 2.0 * d1.value_loss);
    }

    #[test]
    fn rmsprop_single_step_closed_form() {
        let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
        let params = nn::ParamVector::zeros(&config);
        let mut grad = params.zeros_like();
        grad.data_mut().fill(1.0);
        let hyper = Hyperparams {
            learning_rate: 1e-3,
            rmsprop_decay: 0.99,
            rmsprop_epsilon: 1e-5,
            ..Hyperparams::default()
        };
        let opt = OptimizerState::new(params.len(), &hyper);
        let (next, opt2) = update(&params, &grad, &opt);
        let expected = -1e-3 / (0.01 + 1e-5f64).sqrt();
        for (theta, acc) in next.data().iter().zip(&opt2.accumulator) {
            assert!((theta - expected).abs() < 1e-15);
            assert!((acc - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_accumulator() {
        let config = nn::NetworkConfig::new((1, 2, 1), vec![3]);
        let params = nn::init_params(&config, 2);
        let grad = params.zeros_like();
        let hyper = Hyperparams::default();
        let mut opt = OptimizerState::new(params.len(), &hyper);
        opt.accumulator.fill(0.5);
        let (next, opt2) = update(&params, &grad, &opt);
        assert_eq!(next, params);
        assert!(opt2.accumulator.iter().all(|&a| a == 0.5 * 0.99));
    }

    #[test]
    fn update_is_elementwise() {
        let config = nn::NetworkConfig::new((1, 3, 1), vec![]);
        let mut params = nn::ParamVector::zeros(&config);
        let mut grad = params.zeros_like();
        for (i, (p, g)) in params
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .enumerate()
        {
            *p = i as f64 * 0.1;
            *g = (i as f64 - 3.0) * 0.2;
        }
        let hyper = Hyperparams::default();
        let opt = OptimizerState::new(params.len(), &hyper);
        let (next, _) = update(&params, &grad, &opt);
        // permute, update, unpermute: identical
        let n = params.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut p2 = params.clone();
        let mut g2 = grad.clone();
        for i in 0..n {
            p2.data_mut()[i] = params.data()[perm[i]];
            g2.data_mut()[i] = grad.data()[perm[i]];
        }
        let (next_perm, _) = update(&p2, &g2, &opt);
        for i in 0..n {
            assert_eq!(next_perm.data()[i].to_bits(), next.data()[perm[i]].to_bits());
        }
    }

    #[test]
    fn chunking_covers_250_decisions_as_12x20_plus_10() {
        assert_eq!(
            rollout_chunks(250, 20),
            vec![20, 20, 20, 20, 20, 20, 20, 20, 20, 20, 20, 20, 10]
        );
        assert_eq!(rollout_chunks(250, 40), vec![40, 40, 40, 40, 40, 40, 10]);
        assert_eq!(rollout_chunks(40, 40), vec![40]);
    }
}
