//! Training runs for the five continual-learning strategies.
//!
//! All strategies share one loop: episodes run in lockstep across `n_envs`
//! parallel environments, each episode is a fixed number of decisions split
//! into rollouts of `n_steps`, and every rollout ends in one synchronous
//! parameter update. The strategies differ only in which map the envs reset
//! to, when the Fisher/anchor pair is (re)estimated, and what consolidation
//! strength applies:
//!
//! - multienv: every env samples a map uniformly per episode; no penalty.
//! - naive:    maps follow the schedule; no penalty, ever.
//! - sup:      at each map boundary, estimate Fisher on the finished map and
//!             add a permanent penalty term.
//! - static:   refresh a single (F, anchor) pair every `fisher_freq`
//!             episodes; penalty applies from the first refresh on.
//! - unsup:    refresh like static, but gate the penalty strength on the
//!             reward drift detector every episode.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::a2c::{self, EnvSlot, Hyperparams, LossDiagnostics, OptimizerState, ResetSource};
use crate::consolidation::{self, Anchor, FisherDiag, FisherOptions, PenaltySet};
use crate::drift::DetectorState;
use crate::env::{GridSpec, OBS_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{self, NetworkConfig, ParamVector};
use crate::rng::{self, stream};
use crate::scenario::{self, build_scenario, MapVariant, ScenarioKind, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Multienv,
    Naive,
    Sup,
    Static,
    Unsup,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Multienv,
        StrategyKind::Naive,
        StrategyKind::Sup,
        StrategyKind::Static,
        StrategyKind::Unsup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Multienv => "multienv",
            StrategyKind::Naive => "naive",
            StrategyKind::Sup => "sup",
            StrategyKind::Static => "static",
            StrategyKind::Unsup => "unsup",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multienv" => Ok(StrategyKind::Multienv),
            "naive" => Ok(StrategyKind::Naive),
            "sup" => Ok(StrategyKind::Sup),
            "static" => Ok(StrategyKind::Static),
            "unsup" => Ok(StrategyKind::Unsup),
            other => Err(Error::Config(format!(
                "unknown strategy \"{other}\" (expected multienv, naive, sup, static or unsup)"
            ))),
        }
    }

    /// Sequential strategies walk the map schedule; multienv mixes maps.
    pub fn is_sequential(self) -> bool {
        !matches!(self, StrategyKind::Multienv)
    }

    pub fn uses_consolidation(self) -> bool {
        matches!(
            self,
            StrategyKind::Sup | StrategyKind::Static | StrategyKind::Unsup
        )
    }
}

/// Fully resolved configuration of one training cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellConfig {
    pub scenario: ScenarioKind,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub grid: GridSpec,
    pub hyper: Hyperparams,
}

impl CellConfig {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig::new(
            (OBS_CHANNELS, self.grid.window(), self.grid.window()),
            self.hyper.hidden_sizes.clone(),
        )
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.hyper.train_episodes)
    }

    pub fn total_episodes(&self) -> usize {
        if self.strategy.is_sequential() {
            self.schedule().total_episodes()
        } else {
            self.hyper.train_episodes
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.network().validate()?;
        if self.hyper.n_envs == 0 {
            return Err(Error::Config("n_envs must be positive".into()));
        }
        if self.hyper.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        if self.hyper.train_episodes == 0 {
            return Err(Error::Config("train_episodes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.hyper.gamma) {
            return Err(Error::Config("gamma must be in [0, 1)".into()));
        }
        if self.strategy.uses_consolidation() && self.hyper.fisher_sample_size == 0 {
            return Err(Error::Config("fisher_sample_size must be >= 1".into()));
        }
        if matches!(self.strategy, StrategyKind::Static | StrategyKind::Unsup)
            && self.hyper.fisher_freq == 0
        {
            return Err(Error::Config("fisher_freq must be positive".into()));
        }
        Ok(())
    }
}

/// One per-episode diagnostics row, the unit of the run log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    /// Scheduled map (1..=3); 0 for multienv, where each env samples its own.
    pub map: u8,
    /// Mean cumulative training reward across the parallel envs.
    pub reward: f64,
    pub reward_short: f64,
    pub reward_long: f64,
    /// Consolidation strength applied during this episode.
    pub lambda: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Hash of the parameter vector after the episode's last update.
    pub param_hash: u64,
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub cell: CellConfig,
    pub final_params: ParamVector,
    /// Params after the last training episode on each map (one entry for
    /// multienv).
    pub map_checkpoints: Vec<ParamVector>,
    pub log: Vec<LogRow>,
    pub penalties: PenaltySet,
    /// (episode, map_index) for every env reset, for auditing that
    /// sequential training never touched an off-schedule map.
    pub reset_history: Vec<(usize, u8)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunProgress {
    Finished,
    Paused,
}

enum ResetMode {
    Fixed(u8),
    PerEnvUniform,
}

struct EpisodeResets<'a> {
    variants: &'a [MapVariant; 3],
    mode: ResetMode,
    reset_rng: &'a mut ChaCha8Rng,
    map_rng: &'a mut ChaCha8Rng,
    history: &'a mut Vec<(usize, u8)>,
    episode: usize,
}

impl ResetSource for EpisodeResets<'_> {
    fn next_reset(&mut self, _env_index: usize) -> (MapVariant, u64) {
        let map = match self.mode {
            ResetMode::Fixed(m) => m,
            ResetMode::PerEnvUniform => 1 + rng::uniform_usize(self.map_rng, 3) as u8,
        };
        let seed = self.reset_rng.next_u64();
        self.history.push((self.episode, map));
        (self.variants[(map - 1) as usize], seed)
    }
}

/// The training loop state machine. `run_until` advances whole episodes, so
/// a snapshot taken between calls always sits at an episode boundary (envs
/// are re-seeded at every episode start and need not be checkpointed).
pub struct Trainer {
    pub cell: CellConfig,
    variants: [MapVariant; 3],
    net: NetworkConfig,
    pub params: ParamVector,
    pub opt: OptimizerState,
    pub penalties: PenaltySet,
    pub detector: DetectorState,
    slots: Vec<EnvSlot>,
    reset_rng: ChaCha8Rng,
    fisher_rng: ChaCha8Rng,
    map_rng: ChaCha8Rng,
    pub episode: usize,
    pub log: Vec<LogRow>,
    pub map_checkpoints: Vec<ParamVector>,
    pub reset_history: Vec<(usize, u8)>,
    parallel_rollouts: bool,
}

impl Trainer {
    pub fn new(cell: CellConfig) -> Result<Trainer> {
        cell.validate()?;
        let variants = build_scenario(cell.scenario);
        let net = cell.network();
        let params = nn::init_params(&net, cell.seed);
        let opt = OptimizerState::new(params.len(), &cell.hyper);
        let accumulate = cell.strategy == StrategyKind::Sup && !cell.hyper.sup_single_anchor;
        let penalties = PenaltySet::new(accumulate);
        let detector = DetectorState::new(
            cell.hyper.window_short,
            cell.hyper.window_long,
            cell.hyper.eta,
            cell.hyper.alpha,
        )?;
        let slots = Self::placeholder_slots(&cell, &variants)?;
        Ok(Trainer {
            variants,
            net,
            params,
            opt,
            penalties,
            detector,
            slots,
            reset_rng: rng::stream_rng(cell.seed, stream::RESET_SEEDS),
            fisher_rng: rng::stream_rng(cell.seed, stream::FISHER),
            map_rng: rng::stream_rng(cell.seed, stream::MAP_CHOICE),
            episode: 0,
            log: Vec::new(),
            map_checkpoints: Vec::new(),
            reset_history: Vec::new(),
            parallel_rollouts: cell.hyper.rollout_parallel,
            cell,
        })
    }

    /// Slots are fully re-seeded at every episode start; these placeholder
    /// episodes never produce transitions and consume no trainer streams.
    fn placeholder_slots(cell: &CellConfig, variants: &[MapVariant; 3]) -> Result<Vec<EnvSlot>> {
        (0..cell.hyper.n_envs)
            .map(|i| {
                EnvSlot::new(
                    &cell.grid,
                    variants[0],
                    0,
                    rng::stream_rng(cell.seed, stream::POLICY_BASE + i as u64),
                )
            })
            .collect()
    }

    pub fn set_parallel_rollouts(&mut self, on: bool) {
        self.parallel_rollouts = on;
    }

    pub fn total_episodes(&self) -> usize {
        self.cell.total_episodes()
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.total_episodes()
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.net
    }

    pub fn policy_rng_states(&self) -> Vec<rng::RngState> {
        self.slots
            .iter()
            .map(|s| rng::save_rng(&s.policy_rng))
            .collect()
    }

    pub fn restore_policy_rngs(&mut self, states: &[rng::RngState]) -> Result<()> {
        if states.len() != self.slots.len() {
            return Err(Error::Format(
                "checkpoint env count does not match configuration".into(),
            ));
        }
        for (slot, st) in self.slots.iter_mut().zip(states) {
            slot.policy_rng = rng::load_rng(st);
        }
        Ok(())
    }

    pub fn stream_states(&self) -> (rng::RngState, rng::RngState, rng::RngState) {
        (
            rng::save_rng(&self.reset_rng),
            rng::save_rng(&self.fisher_rng),
            rng::save_rng(&self.map_rng),
        )
    }

    pub fn restore_stream_states(
        &mut self,
        reset: &rng::RngState,
        fisher: &rng::RngState,
        map: &rng::RngState,
    ) {
        self.reset_rng = rng::load_rng(reset);
        self.fisher_rng = rng::load_rng(fisher);
        self.map_rng = rng::load_rng(map);
    }

    /// Consolidation strength in effect for the coming episode.
    fn lambda_for_episode(&self) -> f64 {
        match self.cell.strategy {
            StrategyKind::Multienv | StrategyKind::Naive => 0.0,
            StrategyKind::Sup | StrategyKind::Static => {
                if self.penalties.is_empty() {
                    0.0
                } else {
                    self.cell.hyper.lambda
                }
            }
            StrategyKind::Unsup => {
                if self.cell.hyper.unsup_boundary_latch {
                    if self.episode >= self.cell.hyper.train_episodes {
                        self.cell.hyper.alpha
                    } else {
                        0.0
                    }
                } else {
                    self.detector.current_lambda()
                }
            }
        }
    }

    fn scheduled_map(&self) -> Result<u8> {
        scenario::active_map(&self.cell.schedule(), self.episode)
    }

    pub fn run_episode(&mut self) -> Result<()> {
        if self.finished() {
            return Err(Error::Contract("training already finished".into()));
        }
        let episode = self.episode;
        let sequential = self.cell.strategy.is_sequential();
        let map = if sequential { self.scheduled_map()? } else { 0 };
        let lambda = self.lambda_for_episode();

        {
            let mut resets = EpisodeResets {
                variants: &self.variants,
                mode: if sequential {
                    ResetMode::Fixed(map)
                } else {
                    ResetMode::PerEnvUniform
                },
                reset_rng: &mut self.reset_rng,
                map_rng: &mut self.map_rng,
                history: &mut self.reset_history,
                episode,
            };
            a2c::reset_all(&self.cell.grid, &mut self.slots, &mut resets)?;
        }

        let decisions = self.cell.grid.decisions_per_episode();
        let mut diag_sum = LossDiagnostics::default();
        let mut n_updates = 0usize;
        for chunk in a2c::rollout_chunks(decisions, self.cell.hyper.n_steps) {
            let batch = {
                let mut resets = EpisodeResets {
                    variants: &self.variants,
                    mode: if sequential {
                        ResetMode::Fixed(map)
                    } else {
                        ResetMode::PerEnvUniform
                    },
                    reset_rng: &mut self.reset_rng,
                    map_rng: &mut self.map_rng,
                    history: &mut self.reset_history,
                    episode,
                };
                a2c::collect_rollout(
                    &self.cell.grid,
                    &mut self.slots,
                    &self.params,
                    chunk,
                    &mut resets,
                    self.parallel_rollouts,
                )?
            };
            let (_, mut grad, diag) =
                a2c::a2c_loss_and_grads(&batch, &self.params, &self.cell.hyper)
                    .map_err(|e| annotate(e, &self.cell, episode))?;
            if lambda > 0.0 && !self.penalties.is_empty() {
                let (_, pgrad) = self.penalties.penalty_and_grads(&self.params, lambda);
                grad.add_scaled(&pgrad, 1.0);
            }
            let (next_params, next_opt) = a2c::update(&self.params, &grad, &self.opt);
            self.params = next_params;
            self.opt = next_opt;
            diag_sum.policy_loss += diag.policy_loss;
            diag_sum.value_loss += diag.value_loss;
            diag_sum.entropy += diag.entropy;
            diag_sum.mean_abs_value_error += diag.mean_abs_value_error;
            n_updates += 1;
        }

        let mean_reward = self
            .slots
            .iter()
            .map(|s| s.state.cumulative_reward)
            .sum::<f64>()
            / self.slots.len() as f64;
        self.detector.record_episode(mean_reward);
        let inv = 1.0 / n_updates.max(1) as f64;
        self.log.push(LogRow {
            episode,
            map,
            reward: mean_reward,
            reward_short: self.detector.short_average().unwrap_or(0.0),
            reward_long: self.detector.long_average().unwrap_or(0.0),
            lambda,
            policy_loss: diag_sum.policy_loss * inv,
            value_loss: diag_sum.value_loss * inv,
            entropy: diag_sum.entropy * inv,
            param_hash: self.params.hash(),
        });

        self.episode += 1;
        self.end_of_episode_maintenance(map)
    }

    /// Checkpoints and Fisher refreshes owed after the episode just
    /// completed. Map checkpoints are captured before any Fisher estimation,
    /// so evaluation reflects the trained policy.
    fn end_of_episode_maintenance(&mut self, map: u8) -> Result<()> {
        let done_episodes = self.episode;
        let strategy = self.cell.strategy;
        if strategy.is_sequential() {
            if done_episodes % self.cell.hyper.train_episodes == 0 {
                self.map_checkpoints.push(self.params.clone());
                if strategy == StrategyKind::Sup && done_episodes < self.total_episodes() {
                    let (fisher, anchor) = self.estimate_fisher_now(map)?;
                    self.penalties.install(fisher, anchor);
                }
            }
            if matches!(strategy, StrategyKind::Static | StrategyKind::Unsup)
                && done_episodes % self.cell.hyper.fisher_freq == 0
            {
                let (fisher, anchor) = self.estimate_fisher_now(map)?;
                self.penalties.install(fisher, anchor);
            }
        } else if done_episodes == self.total_episodes() {
            self.map_checkpoints.push(self.params.clone());
        }
        Ok(())
    }

    /// Dedicated evaluation episodes on the given map. Parameters do not
    /// change, the detector sees nothing, and all randomness comes from the
    /// Fisher stream, so the training trajectory is unaffected.
    fn estimate_fisher_now(&mut self, map: u8) -> Result<(FisherDiag, Anchor)> {
        let options = FisherOptions::from_hyper(&self.cell.hyper);
        consolidation::estimate_fisher(
            &self.params,
            &self.cell.grid,
            &self.variants[(map - 1) as usize],
            self.cell.hyper.fisher_sample_size,
            &options,
            &mut self.fisher_rng,
            self.episode,
        )
    }

    pub fn run_until(&mut self, stop_at_episode: Option<usize>) -> Result<RunProgress> {
        while !self.finished() {
            if let Some(stop) = stop_at_episode {
                if self.episode >= stop {
                    return Ok(RunProgress::Paused);
                }
            }
            self.run_episode()?;
        }
        Ok(RunProgress::Finished)
    }

    pub fn into_trained_run(self) -> Result<TrainedRun> {
        if !self.finished() {
            return Err(Error::Contract(
                "cannot finalize an unfinished training run".into(),
            ));
        }
        let expect = if self.cell.strategy.is_sequential() { 3 } else { 1 };
        if self.map_checkpoints.len() != expect {
            return Err(Error::Contract(format!(
                "expected {expect} map checkpoints, have {}",
                self.map_checkpoints.len()
            )));
        }
        Ok(TrainedRun {
            cell: self.cell,
            final_params: self.params,
            map_checkpoints: self.map_checkpoints,
            log: self.log,
            penalties: self.penalties,
            reset_history: self.reset_history,
        })
    }
}

fn annotate(e: Error, cell: &CellConfig, episode: usize) -> Error {
    match e {
        Error::Numerical {
            message,
            mut diagnostics,
        } => {
            diagnostics.push(("episode".into(), episode as f64));
            Error::Numerical {
                message: format!(
                    "{message} in {}/{} seed {} at episode {episode}",
                    cell.scenario.name(),
                    cell.strategy.name(),
                    cell.seed
                ),
                diagnostics,
            }
        }
        other => other,
    }
}

/// Train one strategy to completion.
pub fn run_strategy(cell: CellConfig) -> Result<TrainedRun> {
    let mut trainer = Trainer::new(cell)?;
    trainer.run_until(None)?;
    trainer.into_trained_run()
}

/// Default hyperparameters shrunk to smoke-test size: short episodes, small
/// network, few envs. Used across the test suite where speed matters more
/// than learning quality.
pub fn smoke_cell(
    scenario: ScenarioKind,
    strategy: StrategyKind,
    seed: u64,
    train_episodes: usize,
) -> CellConfig {
    let mut grid = GridSpec::default();
    grid.episode_ticks = 80; // 20 decisions
    let hyper = Hyperparams {
        n_envs: 3,
        n_steps: 8,
        hidden_sizes: vec![8],
        train_episodes,
        test_episodes: 2,
        window_short: 2,
        window_long: 4,
        eta: -50.0,
        alpha: 10.0,
        lambda: 10.0,
        fisher_freq: 2,
        fisher_clip: 1e-3,
        fisher_sample_size: 1,
        ..Hyperparams::default()
    };
    CellConfig {
        scenario,
        strategy,
        seed,
        grid,
        hyper,
    }
}
