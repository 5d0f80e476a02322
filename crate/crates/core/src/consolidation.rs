//! Diagonal Fisher estimation and the elastic-weight-consolidation penalty.
//!
//! Importance of each parameter is the empirical Fisher: the mean squared
//! gradient of the log-probability of the sampled action over evaluation
//! decisions. The penalty pulls parameters toward the anchor captured with
//! the Fisher:  (lambda/2) * sum_k F_k (theta_k - theta*_k)^2.

use ndarray::{Array1, Array2};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::env::{self, Action, GridSpec};
use crate::error::Result;
use crate::nn::{self, ParamVector};
use crate::scenario::MapVariant;

/// Non-negative per-parameter importance, aligned with the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiag {
    pub values: Vec<f64>,
    pub episode_index: usize,
    pub sample_episodes: usize,
}

/// Parameter snapshot protected by the penalty; captured atomically with its
/// paired FisherDiag.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    pub params: Vec<f64>,
    pub episode_index: usize,
}

/// How the raw mean-squared-gradient diagonal is scaled and clipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherOptions {
    /// Rescale to unit maximum before clipping.
    pub normalize: bool,
    pub clip: f64,
    /// Clip as a lower floor instead of an upper clamp.
    pub clip_floor: bool,
}

impl FisherOptions {
    pub fn from_hyper(hyper: &crate::a2c::Hyperparams) -> FisherOptions {
        FisherOptions {
            normalize: hyper.fisher_normalize,
            clip: hyper.fisher_clip,
            clip_floor: hyper.fisher_clip_floor,
        }
    }

    pub fn apply(&self, mut values: Vec<f64>) -> Vec<f64> {
        if self.normalize {
            let max = values.iter().cloned().fold(0.0, f64::max);
            if max > 0.0 {
                for v in &mut values {
                    *v /= max;
                }
            }
        }
        for v in &mut values {
            *v = if self.clip_floor {
                v.max(self.clip)
            } else {
                v.min(self.clip)
            };
        }
        values
    }
}

/// Add the squared gradient of `log pi(action | obs)` w.r.t. every parameter
/// into `acc`. Value-head parameters receive no log-policy gradient, so
/// their accumulated importance stays exactly zero.
pub fn accumulate_squared_logpi_grad(
    params: &ParamVector,
    obs: &[f64],
    action: usize,
    acc: &mut [f64],
) -> Result<()> {
    let input = Array2::from_shape_vec((1, obs.len()), obs.to_vec())
        .expect("row vector is always well-formed");
    let pass = nn::forward(params, input)?;
    let probs = nn::softmax(pass.logits.row(0));
    let mut dlogits = Array2::zeros((1, nn::N_ACTIONS));
    for j in 0..nn::N_ACTIONS {
        let onehot = if j == action { 1.0 } else { 0.0 };
        dlogits[[0, j]] = onehot - probs[j];
    }
    let dvalues = Array1::zeros(1);
    let grad = nn::backward(&pass, dlogits.view(), dvalues.view())?;
    for (a, g) in acc.iter_mut().zip(grad.data()) {
        *a += g * g;
    }
    Ok(())
}

/// Run `sample_episodes` evaluation episodes under the current policy (no
/// learning) and estimate the Fisher diagonal; the anchor is a copy of the
/// parameters. All randomness (env seeds and action draws) comes from the
/// caller's dedicated stream, so training streams are untouched.
pub fn estimate_fisher(
    params: &ParamVector,
    spec: &GridSpec,
    variant: &MapVariant,
    sample_episodes: usize,
    options: &FisherOptions,
    stream: &mut ChaCha8Rng,
    episode_index: usize,
) -> Result<(FisherDiag, Anchor)> {
    let mut acc = vec![0.0; params.len()];
    let mut decisions = 0usize;
    for _ in 0..sample_episodes {
        let seed = stream.next_u64();
        let (mut state, mut obs) = env::reset(spec, variant, seed)?;
        while !state.done(spec) {
            let input = Array2::from_shape_vec((1, obs.len()), obs.clone())
                .expect("row vector is always well-formed");
            let pass = nn::forward(params, input)?;
            let (action, _) = nn::sample_action(pass.logits.row(0), stream);
            accumulate_squared_logpi_grad(params, &obs, action, &mut acc)?;
            decisions += 1;
            let result = env::step(spec, &mut state, Action::from_index(action)?, variant)?;
            obs = result.observation;
        }
    }
    if decisions > 0 {
        let inv = 1.0 / decisions as f64;
        for a in &mut acc {
            *a *= inv;
        }
    }
    let values = options.apply(acc);
    Ok((
        FisherDiag {
            values,
            episode_index,
            sample_episodes,
        },
        Anchor {
            params: params.data().to_vec(),
            episode_index,
        },
    ))
}

/// penalty = (lambda/2) * sum_k F_k (theta_k - theta*_k)^2
/// gradient_k = lambda * F_k * (theta_k - theta*_k)
pub fn ewc_penalty_and_grads(
    params: &ParamVector,
    fisher: &FisherDiag,
    anchor: &Anchor,
    lambda: f64,
) -> (f64, ParamVector) {
    debug_assert_eq!(params.len(), fisher.values.len());
    debug_assert_eq!(params.len(), anchor.params.len());
    let mut grad = params.zeros_like();
    let mut penalty = 0.0;
    for (k, g) in grad.data_mut().iter_mut().enumerate() {
        let diff = params.data()[k] - anchor.params[k];
        let f = fisher.values[k];
        penalty += f * diff * diff;
        *g = lambda * f * diff;
    }
    (0.5 * lambda * penalty, grad)
}

/// The active consolidation terms. Sup accumulates one term per completed
/// map; static and unsup keep only the latest.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySet {
    terms: Vec<(FisherDiag, Anchor)>,
    accumulate: bool,
}

impl PenaltySet {
    pub fn new(accumulate: bool) -> PenaltySet {
        PenaltySet {
            terms: Vec::new(),
            accumulate,
        }
    }

    pub fn from_terms(terms: Vec<(FisherDiag, Anchor)>, accumulate: bool) -> PenaltySet {
        PenaltySet { terms, accumulate }
    }

    pub fn install(&mut self, fisher: FisherDiag, anchor: Anchor) {
        if self.accumulate {
            self.terms.push((fisher, anchor));
        } else {
            self.terms.clear();
            self.terms.push((fisher, anchor));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn accumulates(&self) -> bool {
        self.accumulate
    }

    pub fn terms(&self) -> &[(FisherDiag, Anchor)] {
        &self.terms
    }

    /// Sum of all term penalties and gradients at strength `lambda`.
    pub fn penalty_and_grads(&self, params: &ParamVector, lambda: f64) -> (f64, ParamVector) {
        let mut total = 0.0;
        let mut grad = params.zeros_like();
        for (fisher, anchor) in &self.terms {
            let (p, g) = ewc_penalty_and_grads(params, fisher, anchor, lambda);
            total += p;
            grad.add_scaled(&g, 1.0);
        }
        (total, grad)
    }
}

#[cfg(test)]
mod tests {
    use crate::rng;
    use super::*;
    use crate::scenario::{build_scenario, ScenarioKind};

    fn single_param_inputs() -> (ParamVector, FisherDiag, Anchor) {
        // a 1-parameter "network": one value-head weight is enough to carry
        // the arithmetic
        let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
        let mut params = nn::ParamVector::zeros(&config);
        let n = params.len();
        let mut fisher = vec![0.0; n];
        let mut anchor = vec![0.0; n];
        params.data_mut()[0] = 3.0;
        fisher[0] = 2.0;
        anchor[0] = 0.0;
        (
            params,
            FisherDiag {
                values: fisher,
                episode_index: 0,
                sample_episodes: 1,
            },
            Anchor {
                params: anchor,
                episode_index: 0,
            },
        )
    }

    #[test]
    fn hand_arithmetic_penalty_and_gradient() {
        let (params, fisher, anchor) = single_param_inputs();
        let (penalty, grad) = ewc_penalty_and_grads(&params, &fisher, &anchor, 10.0);
        assert_eq!(penalty, 90.0);
        assert_eq!(grad.data()[0], 60.0);
    }

    #[test]
    fn anchor_identity_gives_zero_penalty() {
        let (params, fisher, _) = single_param_inputs();
        let anchor = Anchor {
            params: params.data().to_vec(),
            episode_index: 0,
        };
        let (penalty, grad) = ewc_penalty_and_grads(&params, &fisher, &anchor, 10.0);
        assert_eq!(penalty, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_lambda_gives_zero_penalty() {
        let (params, fisher, anchor) = single_param_inputs();
        let (penalty, grad) = ewc_penalty_and_grads(&params, &fisher, &anchor, 0.0);
        assert_eq!(penalty, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let config = nn::NetworkConfig::new((1, 3, 2), vec![4]);
        let params = nn::init_params(&config, 3);
        let anchor_params = nn::init_params(&config, 4);
        let mut rng = rng::stream_rng(5, 0);
        let fisher = FisherDiag {
            values: (0..params.len()).map(|_| rng::next_f64(&mut rng)).collect(),
            episode_index: 0,
            sample_episodes: 1,
        };
        let anchor = Anchor {
            params: anchor_params.data().to_vec(),
            episode_index: 0,
        };
        let lambda = 7.5;
        let (_, grad) = ewc_penalty_and_grads(&params, &fisher, &anchor, lambda);
        let f = |p: &ParamVector| {
            let (pen, _) = ewc_penalty_and_grads(p, &fisher, &anchor, lambda);
            pen
        };
        let numeric = nn::finite_difference_grad(f, &params, 1e-5);
        let err = nn::max_relative_error(grad.data(), &numeric);
        assert!(err <= 1e-6, "max rel err {err}");
    }

    #[test]
    fn penalty_is_nonnegative_and_monotone_in_distance() {
        let config = nn::NetworkConfig::new((1, 2, 2), vec![3]);
        let mut params = nn::init_params(&config, 9);
        let anchor = Anchor {
            params: params.data().to_vec(),
            episode_index: 0,
        };
        let mut rng = rng::stream_rng(11, 0);
        let fisher = FisherDiag {
            values: (0..params.len()).map(|_| rng::next_f64(&mut rng)).collect(),
            episode_index: 0,
            sample_episodes: 1,
        };
        let mut last = 0.0;
        for scale in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let mut probe = params.clone();
            for (p, a) in probe.data_mut().iter_mut().zip(&anchor.params) {
                *p = a + scale * 0.1;
            }
            let (pen, _) = ewc_penalty_and_grads(&probe, &fisher, &anchor, 3.0);
            assert!(pen >= last);
            last = pen;
        }
        params.data_mut()[0] += 100.0;
        let (pen, _) = ewc_penalty_and_grads(&params, &fisher, &anchor, 3.0);
        assert!(pen >= 0.0);
    }

    #[test]
    fn bandit_fisher_matches_analytic_diagonal() {
        // Headless trunk: logits = w * x + b with x = [1]. For a categorical
        // softmax policy the Fisher diagonal of each logit parameter is
        // p_k (1 - p_k).
        let config = nn::NetworkConfig::new((1, 1, 1), vec![]);
        let mut params = nn::ParamVector::zeros(&config);
        let layout = params.layout().clone();
        let w = layout.policy.weights.clone();
        params.data_mut()[w.start] = 0.5;
        params.data_mut()[w.start + 1] = -0.3;
        params.data_mut()[w.start + 2] = 0.1;

        let obs = vec![1.0];
        let input = Array2::from_shape_vec((1, 1), obs.clone()).unwrap();
        let pass = nn::forward(&params, input).unwrap();
        let probs = nn::softmax(pass.logits.row(0));

        let mut acc = vec![0.0; params.len()];
        let mut rng = rng::stream_rng(31, 0);
        let n = 10_000;
        for _ in 0..n {
            let input = Array2::from_shape_vec((1, 1), obs.clone()).unwrap();
            let pass = nn::forward(&params, input).unwrap();
            let (action, _) = nn::sample_action(pass.logits.row(0), &mut rng);
            accumulate_squared_logpi_grad(&params, &obs, action, &mut acc).unwrap();
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        for k in 0..nn::N_ACTIONS {
            let analytic = probs[k] * (1.0 - probs[k]);
            let estimated = acc[w.start + k];
            let rel = (estimated - analytic).abs() / analytic;
            assert!(rel < 0.05, "weight {k}: {estimated} vs {analytic}");
            // bias entries see the same gradient
            let b = acc[layout.policy.bias.start + k];
            assert!((b - estimated).abs() < 1e-12);
        }
        // value-head parameters carry no log-policy gradient
        for k in layout.value.weights.start..layout.value.bias.end {
            assert_eq!(acc[k], 0.0);
        }
    }

    #[test]
    fn estimate_fisher_on_env_is_nonnegative_and_anchored() {
        let spec = GridSpec::default();
        let variant = build_scenario(ScenarioKind::Object)[0];
        let config = nn::NetworkConfig::new(
            (crate::env::OBS_CHANNELS, spec.window(), spec.window()),
            vec![8],
        );
        let params = nn::init_params(&config, 6);
        let options = FisherOptions {
            normalize: true,
            clip: 1e-2,
            clip_floor: false,
        };
        let mut stream = rng::stream_rng(7, rng::stream::FISHER);
        let (fisher, anchor) =
            estimate_fisher(&params, &spec, &variant, 1, &options, &mut stream, 42).unwrap();
        assert_eq!(fisher.values.len(), params.len());
        assert!(fisher.values.iter().all(|&f| (0.0..=1e-2).contains(&f)));
        assert!(fisher.values.iter().any(|&f| f > 0.0));
        assert_eq!(anchor.params, params.data());
        assert_eq!(fisher.episode_index, 42);
        assert_eq!(fisher.sample_episodes, 1);
    }

    #[test]
    fn clip_modes() {
        let raw = vec![0.0, 0.5, 1.0, 2.0];
        let clamp = FisherOptions {
            normalize: true,
            clip: 0.4,
            clip_floor: false,
        };
        assert_eq!(clamp.apply(raw.clone()), vec![0.0, 0.25, 0.4, 0.4]);
        let floor = FisherOptions {
            normalize: false,
            clip: 0.4,
            clip_floor: true,
        };
        assert_eq!(floor.apply(raw), vec![0.4, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn latest_only_replacement_keeps_one_term() {
        let (params, fisher, anchor) = single_param_inputs();
        let mut set = PenaltySet::new(false);
        set.install(fisher.clone(), anchor.clone());
        set.install(fisher.clone(), anchor.clone());
        assert_eq!(set.len(), 1);
        let mut acc = PenaltySet::new(true);
        acc.install(fisher.clone(), anchor.clone());
        acc.install(fisher.clone(), anchor.clone());
        assert_eq!(acc.len(), 2);
        // two identical terms double the penalty
        let (p1, _) = set.penalty_and_grads(&params, 10.0);
        let (p2, _) = acc.penalty_and_grads(&params, 10.0);
        assert_eq!(p2, 2.0 * p1);
    }
}
