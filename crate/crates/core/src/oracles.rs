//! Self-contained correctness oracles, runnable from the CLI.
//!
//! Each oracle checks an analytic result against an independent route:
//! finite differences for gradients, closed forms for the optimizer and
//! the categorical Fisher diagonal, brute-force window means for the drift
//! detector, and frozen reference arithmetic for the lower-triangle average.
//! `driftgrid oracle` runs them all and prints one line per check;
//! `driftgrid gradcheck` runs the gradient subset with its error report.

use ndarray::Array2;
use rand_chacha::rand_core::RngCore;

use crate::a2c::{self, Hyperparams, RolloutBatch, Transition};
use crate::consolidation::{self, Anchor, FisherDiag};
use crate::drift::DetectorState;
use crate::env::{self, GridSpec};
use crate::eval;
use crate::nn::{self, ParamVector};
use crate::rng;
use crate::scenario::{build_scenario, ScenarioKind};

pub struct Oracle {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

pub fn all() -> Vec<Oracle> {
    vec![
        Oracle {
            name: "gradients-vs-finite-differences",
            run: || {
                for (name, err) in gradient_check_report() {
                    if err > 1e-4 {
                        return Err(format!("{name}: max relative error {err:.3e} > 1e-4"));
                    }
                }
                Ok(())
            },
        },
        Oracle {
            name: "n-step-returns-hand-recursion",
            run: returns_recursion,
        },
        Oracle {
            name: "rmsprop-closed-form-step",
            run: rmsprop_closed_form,
        },
        Oracle {
            name: "fisher-matches-categorical-closed-form",
            run: fisher_bandit,
        },
        Oracle {
            name: "ewc-penalty-hand-arithmetic",
            run: ewc_hand_arithmetic,
        },
        Oracle {
            name: "drift-trigger-on-synthetic-step-drop",
            run: drift_step_drop,
        },
        Oracle {
            name: "texture-variants-differ-only-on-wall-channel",
            run: texture_channel_isolation,
        },
        Oracle {
            name: "init-seeds-decorrelate-weights",
            run: init_seed_divergence,
        },
        Oracle {
            name: "parallel-equals-sequential-rollout",
            run: parallel_rollout_equivalence,
        },
        Oracle {
            name: "sampled-log-probability-matches-softmax",
            run: sampled_logprob,
        },
        Oracle {
            name: "lower-triangle-average-reference-blocks",
            run: a_metric_reference,
        },
        Oracle {
            name: "drift-boundary-is-inclusive",
            run: eta_boundary_inclusive,
        },
    ]
}

fn synthetic_batch(obs_len: usize, n_envs: usize, n_steps: usize, seed: u64) -> RolloutBatch {
    let mut r = rng::stream_rng(seed, 0x5EED);
    let transitions = (0..n_envs * n_steps)
        .map(|i| Transition {
            observation: (0..obs_len)
                .map(|_| rng::next_f64(&mut r) * 2.0 - 1.0)
                .collect(),
            action: (r.next_u32() % 3) as usize,
            log_probability: -1.0,
            reward: rng::next_f64(&mut r) * 6.0 - 3.0,
            value_estimate: rng::next_f64(&mut r) - 0.5,
            done: i % 7 == 6,
        })
        .collect();
    RolloutBatch {
        n_envs,
        n_steps,
        transitions,
        bootstrap: (0..n_envs).map(|_| rng::next_f64(&mut r) - 0.5).collect(),
    }
}

fn alive_params(config: &nn::NetworkConfig, seed: u64) -> ParamVector {
    let mut params = nn::init_params(config, seed);
    let layout = params.layout().clone();
    for layer in &layout.trunk {
        for b in &mut params.data_mut()[layer.bias.clone()] {
            *b = 0.05;
        }
    }
    params
}

/// (check name, max relative error vs central finite differences) for the
/// A2C loss, the consolidation penalty, and their sum, on networks small
/// enough to difference exhaustively.
pub fn gradient_check_report() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let config = nn::NetworkConfig::new((2, 2, 2), vec![8]);
    let params = alive_params(&config, 41);
    assert!(params.len() <= 1000);
    let batch = synthetic_batch(config.input_len(), 2, 5, 9);

    for (label, entropy_coef) in [("a2c-loss", 0.01), ("a2c-loss-no-entropy", 0.0)] {
        let hyper = Hyperparams {
            entropy_coef,
            ..Hyperparams::default()
        };
        let (_, grad, _) = a2c::a2c_loss_and_grads(&batch, &params, &hyper).unwrap();
        let (returns, advantages) = a2c::compute_returns(&batch, hyper.gamma);
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
        out.push((
            label.to_string(),
            nn::max_relative_error(grad.data(), &numeric),
        ));
    }

    let mut r = rng::stream_rng(7, 0);
    let fisher = FisherDiag {
        values: (0..params.len()).map(|_| rng::next_f64(&mut r)).collect(),
        episode_index: 0,
        sample_episodes: 1,
    };
    let anchor = Anchor {
        params: alive_params(&config, 42).data().to_vec(),
        episode_index: 0,
    };
    let lambda = 3.0;
    let (_, pgrad) = consolidation::ewc_penalty_and_grads(&params, &fisher, &anchor, lambda);
    let pen = |p: &ParamVector| consolidation::ewc_penalty_and_grads(p, &fisher, &anchor, lambda).0;
    let numeric = nn::finite_difference_grad(pen, &params, 1e-5);
    out.push((
        "ewc-penalty".to_string(),
        nn::max_relative_error(pgrad.data(), &numeric),
    ));

    // combined regularized loss
    let hyper = Hyperparams::default();
    let (_, mut grad, _) = a2c::a2c_loss_and_grads(&batch, &params, &hyper).unwrap();
    grad.add_scaled(&pgrad, 1.0);
    let (returns, advantages) = a2c::compute_returns(&batch, hyper.gamma);
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
        total / n + consolidation::ewc_penalty_and_grads(p, &fisher, &anchor, lambda).0
    };
    let numeric = nn::finite_difference_grad(f, &params, 1e-5);
    out.push((
        "combined-regularized-loss".to_string(),
        nn::max_relative_error(grad.data(), &numeric),
    ));
    out
}

fn returns_recursion() -> Result<(), String> {
    let batch = RolloutBatch {
        n_envs: 1,
        n_steps: 3,
        transitions: [1.0, 1.0, 1.0]
            .iter()
            .map(|&reward| Transition {
                observation: vec![0.0],
                action: 0,
                log_probability: -1.0,
                reward,
                value_estimate: 0.0,
                done: false,
            })
            .collect(),
        bootstrap: vec![0.0],
    };
    let (returns, _) = a2c::compute_returns(&batch, 0.99);
    let expect = [2.9701, 1.99, 1.0];
    for (r, e) in returns.iter().zip(&expect) {
        if (r - e).abs() > 1e-12 {
            return Err(format!("returns {returns:?} != {expect:?}"));
        }
    }
    Ok(())
}

fn rmsprop_closed_form() -> Result<(), String> {
    let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
    let params = ParamVector::zeros(&config);
    let mut grad = params.zeros_like();
    grad.data_mut().fill(1.0);
    let hyper = Hyperparams {
        learning_rate: 1e-3,
        ..Hyperparams::default()
    };
    let opt = a2c::OptimizerState::new(params.len(), &hyper);
    let (next, _) = a2c::update(&params, &grad, &opt);
    let expect = -1e-3 / (0.01f64 + 1e-5).sqrt();
    for theta in next.data() {
        if (theta - expect).abs() > 1e-15 {
            return Err(format!("step {theta} != {expect}"));
        }
    }
    Ok(())
}

fn fisher_bandit() -> Result<(), String> {
    let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
    let mut params = ParamVector::zeros(&config);
    let w = params.layout().policy.weights.clone();
    params.data_mut()[w.start] = 0.5;
    params.data_mut()[w.start + 1] = -0.3;
    params.data_mut()[w.start + 2] = 0.1;
    let obs = vec![1.0];
    let input = Array2::from_shape_vec((1, 1), obs.clone()).unwrap();
    let pass = nn::forward(&params, input).unwrap();
    let probs = nn::softmax(pass.logits.row(0));
    let mut acc = vec![0.0; params.len()];
    let mut r = rng::stream_rng(31, 0);
    let n = 10_000;
    for _ in 0..n {
        let input = Array2::from_shape_vec((1, 1), obs.clone()).unwrap();
        let pass = nn::forward(&params, input).unwrap();
        let (action, _) = nn::sample_action(pass.logits.row(0), &mut r);
        consolidation::accumulate_squared_logpi_grad(&params, &obs, action, &mut acc)
            .map_err(|e| e.to_string())?;
    }
    for k in 0..3 {
        let analytic = probs[k] * (1.0 - probs[k]);
        let estimated = acc[w.start + k] / n as f64;
        let rel = (estimated - analytic).abs() / analytic;
        if rel >= 0.05 {
            return Err(format!(
                "logit {k}: estimated {estimated:.5} vs closed form {analytic:.5} (rel {rel:.3})"
            ));
        }
    }
    Ok(())
}

fn ewc_hand_arithmetic() -> Result<(), String> {
    let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
    let mut params = ParamVector::zeros(&config);
    params.data_mut()[0] = 3.0;
    let mut fisher = vec![0.0; params.len()];
    fisher[0] = 2.0;
    let fisher = FisherDiag {
        values: fisher,
        episode_index: 0,
        sample_episodes: 1,
    };
    let anchor = Anchor {
        params: vec![0.0; params.len()],
        episode_index: 0,
    };
    let (penalty, grad) = consolidation::ewc_penalty_and_grads(&params, &fisher, &anchor, 10.0);
    if penalty != 90.0 || grad.data()[0] != 60.0 {
        return Err(format!(
            "penalty {penalty} gradient {} (expected 90 and 60)",
            grad.data()[0]
        ));
    }
    let (zero_pen, zero_grad) = consolidation::ewc_penalty_and_grads(
        &params,
        &fisher,
        &Anchor {
            params: params.data().to_vec(),
            episode_index: 0,
        },
        10.0,
    );
    if zero_pen != 0.0 || zero_grad.data().iter().any(|&g| g != 0.0) {
        return Err("anchor identity must zero the penalty and gradient".into());
    }
    Ok(())
}

/// Brute-force oracle shared with the detector check: trailing-window means
/// computed directly from the trace.
pub fn brute_force_lambda(
    trace: &[f64],
    upto: usize,
    ws: usize,
    wl: usize,
    eta: f64,
    alpha: f64,
) -> f64 {
    let n = upto + 1;
    if n < wl {
        return 0.0;
    }
    let short: f64 = trace[n - ws..n].iter().sum::<f64>() / ws as f64;
    let long: f64 = trace[n - wl..n].iter().sum::<f64>() / wl as f64;
    if short - long <= eta {
        alpha
    } else {
        0.0
    }
}

fn drift_step_drop() -> Result<(), String> {
    // flat 100 with sigma-20 noise, 300-point drop at episode 100
    let mut r = rng::stream_rng(77, 0);
    let mut gauss = || {
        let u1 = rng::next_f64(&mut r).max(1e-12);
        let u2 = rng::next_f64(&mut r);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let trace: Vec<f64> = (0..140)
        .map(|i| {
            let base = if i < 100 { 100.0 } else { -200.0 };
            base + 20.0 * gauss()
        })
        .collect();
    let (ws, wl, eta, alpha) = (6, 50, -80.0, 1e6);
    let mut detector = DetectorState::new(ws, wl, eta, alpha).map_err(|e| e.to_string())?;
    let mut first_trigger = None;
    for (i, &reward) in trace.iter().enumerate() {
        detector.record_episode(reward);
        let lambda = detector.current_lambda();
        let oracle = brute_force_lambda(&trace, i, ws, wl, eta, alpha);
        if lambda != oracle {
            return Err(format!("episode {i}: detector {lambda} vs oracle {oracle}"));
        }
        if (60..100).contains(&i) && lambda != 0.0 {
            return Err(format!("false trigger at episode {i}"));
        }
        if lambda == alpha && first_trigger.is_none() {
            first_trigger = Some(i);
        }
    }
    match first_trigger {
        Some(at) if (100..=105).contains(&at) => Ok(()),
        Some(at) => Err(format!("triggered at episode {at}, expected within 100..=105")),
        None => Err("never triggered after the drop".into()),
    }
}

fn texture_channel_isolation() -> Result<(), String> {
    let spec = GridSpec::default();
    let vs = build_scenario(ScenarioKind::Texture);
    let cell_area = spec.window() * spec.window();
    for seed in 0..100u64 {
        let (state, _) = env::reset(&spec, &vs[0], seed).map_err(|e| e.to_string())?;
        let a = env::render_observation(&spec, &state, &vs[0]);
        let b = env::render_observation(&spec, &state, &vs[1]);
        if a[..cell_area] == b[..cell_area] {
            return Err(format!("seed {seed}: wall channel did not change"));
        }
        if a[cell_area..] != b[cell_area..] {
            return Err(format!("seed {seed}: non-wall channels changed"));
        }
    }
    Ok(())
}

fn init_seed_divergence() -> Result<(), String> {
    let config = nn::NetworkConfig::new((8, 7, 7), vec![32]);
    let a = nn::init_params(&config, 1);
    let b = nn::init_params(&config, 2);
    let differing = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x != y)
        .count();
    let n_bias: usize = a
        .layout()
        .trunk
        .iter()
        .chain([&a.layout().policy, &a.layout().value])
        .map(|l| l.fan_out)
        .sum();
    let n_weights = a.len() - n_bias;
    if (differing as f64) < 0.99 * n_weights as f64 {
        return Err(format!(
            "only {differing} of {n_weights} weights differ between seeds"
        ));
    }
    Ok(())
}

fn parallel_rollout_equivalence() -> Result<(), String> {
    let spec = GridSpec::default();
    let variant = build_scenario(ScenarioKind::Object)[0];
    let config = nn::NetworkConfig::new((8, spec.window(), spec.window()), vec![16]);
    let params = nn::init_params(&config, 5);
    let collect = |parallel: bool| -> Result<RolloutBatch, String> {
        let mut slots = (0..6)
            .map(|i| {
                a2c::EnvSlot::new(
                    &spec,
                    variant,
                    100 + i as u64,
                    rng::stream_rng(13, rng::stream::POLICY_BASE + i as u64),
                )
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        let mut resets = a2c::FixedReset {
            variant,
            seed_rng: rng::stream_rng(6, rng::stream::RESET_SEEDS),
        };
        a2c::collect_rollout(&spec, &mut slots, &params, 40, &mut resets, parallel)
            .map_err(|e| e.to_string())
    };
    let seq = collect(false)?;
    let par = collect(true)?;
    for (a, b) in seq.transitions.iter().zip(&par.transitions) {
        if a.action != b.action
            || a.reward.to_bits() != b.reward.to_bits()
            || a.observation != b.observation
        {
            return Err("parallel and sequential rollouts diverged".into());
        }
    }
    if seq.bootstrap != par.bootstrap {
        return Err("bootstrap values diverged".into());
    }
    Ok(())
}

fn sampled_logprob() -> Result<(), String> {
    let logits = ndarray::Array1::from_vec(vec![0.7, -0.3, 1.9]);
    let probs = nn::softmax(logits.view());
    let mut r = rng::stream_rng(12, 0);
    for _ in 0..1000 {
        let (a, lp) = nn::sample_action(logits.view(), &mut r);
        if (lp - probs[a].ln()).abs() > 1e-12 {
            return Err(format!("log prob {lp} vs {}", probs[a].ln()));
        }
    }
    Ok(())
}

/// Frozen reference blocks for the lower-triangle average: published
/// rounded matrix entries and the corresponding rounded averages.
fn a_metric_reference() -> Result<(), String> {
    let checks: [([[f64; 3]; 3], f64); 2] = [
        (
            [
                [93.0, -460.0, 144.0],
                [-987.0, 528.0, -842.0],
                [-892.0, 1063.0, 938.0],
            ],
            123.96,
        ),
        (
            [
                [1105.0, 836.0, 72.0],
                [186.0, 1283.0, 631.0],
                [-215.0, -156.0, 1252.0],
            ],
            575.87,
        ),
    ];
    for (matrix, reference) in checks {
        let a = eval::a_metric(&matrix).map_err(|e| e.to_string())?;
        if (a - reference).abs() > 0.5 {
            return Err(format!(
                "lower-triangle average {a:.2} not within 0.5 of reference {reference}"
            ));
        }
    }
    Ok(())
}

fn eta_boundary_inclusive() -> Result<(), String> {
    let mut d = DetectorState::new(2, 4, -80.0, 9.0).map_err(|e| e.to_string())?;
    for reward in [160.0, 160.0, 0.0, 0.0] {
        d.record_episode(reward);
    }
    // short 0, long 80: difference is exactly eta and must trigger
    if d.current_lambda() != 9.0 {
        return Err("difference == eta did not trigger".into());
    }
    Ok(())
}
