//! Unsupervised drift detection from the training reward stream.
//!
//! A short and a long moving average of the per-episode mean training reward
//! track "what the agent gets now" against "what it has come to expect".
//! When the short average falls at or below the long average plus eta
//! (eta < 0 in practice), the consolidation trigger turns on:
//!
//!   lambda = alpha   if r_short - r_long <= eta,   else 0

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState {
    /// Most recent `window_long` per-episode rewards.
    buffer: VecDeque<f64>,
    pub window_short: usize,
    pub window_long: usize,
    pub eta: f64,
    pub alpha: f64,
    pub episodes_recorded: usize,
}

impl DetectorState {
    pub fn new(window_short: usize, window_long: usize, eta: f64, alpha: f64) -> Result<Self> {
        if window_short == 0 || window_short >= window_long {
            return Err(Error::Config(format!(
                "short window ({window_short}) must be positive and smaller than the long window ({window_long})"
            )));
        }
        Ok(DetectorState {
            buffer: VecDeque::with_capacity(window_long),
            window_short,
            window_long,
            eta,
            alpha,
            episodes_recorded: 0,
        })
    }

    /// Rebuild from checkpointed fields.
    pub fn restore(
        window_short: usize,
        window_long: usize,
        eta: f64,
        alpha: f64,
        episodes_recorded: usize,
        buffer: Vec<f64>,
    ) -> Result<Self> {
        let mut state = DetectorState::new(window_short, window_long, eta, alpha)?;
        state.episodes_recorded = episodes_recorded;
        state.buffer = buffer.into();
        Ok(state)
    }

    pub fn record_episode(&mut self, mean_cumulative_reward: f64) {
        self.buffer.push_back(mean_cumulative_reward);
        if self.buffer.len() > self.window_long {
            self.buffer.pop_front();
        }
        self.episodes_recorded += 1;
    }

    fn trailing_average(&self, window: usize) -> Option<f64> {
        if self.buffer.is_empty() {
            return None;
        }
        let take = window.min(self.buffer.len());
        let sum: f64 = self.buffer.iter().rev().take(take).sum();
        Some(sum / take as f64)
    }

    /// Mean of the most recent `window_short` rewards (over what is
    /// available early on).
    pub fn short_average(&self) -> Option<f64> {
        self.trailing_average(self.window_short)
    }

    pub fn long_average(&self) -> Option<f64> {
        self.trailing_average(self.window_long)
    }

    /// Two-valued gate: 0 during warm-up (fewer than `window_long` episodes
    /// recorded, where the long average is not yet meaningful), otherwise
    /// alpha iff short - long <= eta.
    pub fn current_lambda(&self) -> f64 {
        if self.episodes_recorded < self.window_long {
            return 0.0;
        }
        let short = self.short_average().unwrap_or(0.0);
        let long = self.long_average().unwrap_or(0.0);
        if short - long <= self.eta {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn buffer_contents(&self) -> Vec<f64> {
        self.buffer.iter().copied().collect()
    }
}
