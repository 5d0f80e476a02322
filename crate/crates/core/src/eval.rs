//! Test-episode evaluation, the reward matrix, and the A metric.
//!
//! Each trained checkpoint is evaluated on every map variant with the
//! stochastic policy and no learning. For sequential strategies this fills a
//! 3x3 matrix R where R[i][j] is the mean cumulative test reward on map j of
//! the checkpoint taken after training on map i; the A metric averages its
//! lower triangle (current and previously seen conditions).

use rand_chacha::rand_core::RngCore;

use crate::a2c::EnvSlot;
use crate::env::{self, Action, GridSpec};
use crate::error::{Error, Result};
use crate::nn::{self, ParamVector};
use crate::rng::{self, stream};
use crate::scenario::{build_scenario, MapVariant, ScenarioKind};
use crate::strategies::{StrategyKind, TrainedRun};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn stats(values: &[f64]) -> EvalStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    EvalStats {
        mean,
        std: var.sqrt(),
        n,
    }
}

/// Run `n_test` full episodes on one variant (batched in lockstep; episodes
/// all have the same fixed length) and return the cumulative-reward stats.
fn evaluate_on_variant(
    params: &ParamVector,
    grid: &GridSpec,
    variant: &MapVariant,
    n_test: usize,
    seed: u64,
    stream_id: u64,
    greedy: bool,
) -> Result<EvalStats> {
    if n_test == 0 {
        return Err(Error::Contract("n_test must be >= 1".into()));
    }
    let mut source = rng::stream_rng(seed, stream_id);
    let mut slots: Vec<EnvSlot> = (0..n_test)
        .map(|_| {
            let env_seed = source.next_u64();
            let policy_seed = source.next_u64();
            EnvSlot::new(grid, *variant, env_seed, rng::seeded_rng(policy_seed))
        })
        .collect::<Result<_>>()?;
    let feat = slots[0].obs.len();
    for _ in 0..grid.decisions_per_episode() {
        let mut obs = ndarray::Array2::zeros((n_test, feat));
        for (i, slot) in slots.iter().enumerate() {
            obs.row_mut(i)
                .iter_mut()
                .zip(&slot.obs)
                .for_each(|(o, &v)| *o = v);
        }
        let pass = nn::forward(params, obs)?;
        for (i, slot) in slots.iter_mut().enumerate() {
            let (action, _) = if greedy {
                nn::greedy_action(pass.logits.row(i))
            } else {
                nn::sample_action(pass.logits.row(i), &mut slot.policy_rng)
            };
            let result = env::step(grid, &mut slot.state, Action::from_index(action)?, variant)?;
            slot.obs = result.observation;
        }
    }
    let rewards: Vec<f64> = slots.iter().map(|s| s.state.cumulative_reward).collect();
    Ok(stats(&rewards))
}

/// Evaluate one parameter snapshot on each of the three variants;
/// deterministic given the seed, and the parameters are untouched.
pub fn evaluate_checkpoint(
    params: &ParamVector,
    grid: &GridSpec,
    variants: &[MapVariant; 3],
    n_test: usize,
    seed: u64,
    greedy: bool,
) -> Result<[EvalStats; 3]> {
    let mut out = Vec::with_capacity(3);
    for (j, variant) in variants.iter().enumerate() {
        out.push(evaluate_on_variant(
            params,
            grid,
            variant,
            n_test,
            seed,
            stream::EVAL_BASE + j as u64,
            greedy,
        )?);
    }
    Ok([out[0], out[1], out[2]])
}

/// Per-checkpoint x per-variant evaluation results. Sequential strategies
/// produce 3 rows, multienv a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardMatrix {
    pub rows: Vec<[EvalStats; 3]>,
    pub n_test: usize,
}

impl RewardMatrix {
    pub fn means(&self) -> Vec<[f64; 3]> {
        self.rows
            .iter()
            .map(|r| [r[0].mean, r[1].mean, r[2].mean])
            .collect()
    }
}

/// Evaluate a sequence of per-map checkpoints against every variant of the
/// cell's scenario. Each (checkpoint, variant) pair draws from its own
/// stream, so cells can be computed in any order (or concurrently) with
/// identical results.
pub fn reward_matrix_from_parts(
    cell: &crate::strategies::CellConfig,
    checkpoints: &[ParamVector],
    n_test: usize,
) -> Result<RewardMatrix> {
    let variants = build_scenario(cell.scenario);
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (i, checkpoint) in checkpoints.iter().enumerate() {
        let mut row = Vec::with_capacity(3);
        for (j, variant) in variants.iter().enumerate() {
            row.push(evaluate_on_variant(
                checkpoint,
                &cell.grid,
                variant,
                n_test,
                cell.seed,
                stream::EVAL_BASE + 0x100 * (i as u64 + 1) + j as u64,
                cell.hyper.greedy_eval,
            )?);
        }
        rows.push([row[0], row[1], row[2]]);
    }
    Ok(RewardMatrix { rows, n_test })
}

/// Evaluate every map checkpoint of a finished run.
pub fn reward_matrix(run: &TrainedRun, n_test: usize) -> Result<RewardMatrix> {
    reward_matrix_from_parts(&run.cell, &run.map_checkpoints, n_test)
}

/// A = sum_{i >= j} R[i][j] / (N (N+1) / 2) with N = 3: the average of the
/// lower triangle.
pub fn a_metric(means: &[[f64; 3]]) -> Result<f64> {
    if means.len() != 3 {
        return Err(Error::Contract(format!(
            "A metric needs a full 3x3 matrix, got {} rows",
            means.len()
        )));
    }
    let mut sum = 0.0;
    for (i, row) in means.iter().enumerate() {
        for (j, value) in row.iter().enumerate() {
            if i >= j {
                sum += value;
            }
        }
    }
    Ok(sum / 6.0)
}

/// One line of the experiment summary: a (scenario, strategy) aggregate
/// across seeds, with the scenario's multienv upper bound attached when
/// available.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: ScenarioKind,
    pub strategy: StrategyKind,
    pub seed_count: usize,
    /// None for multienv (its matrix has no lower triangle).
    pub a_mean: Option<f64>,
    pub a_std: Option<f64>,
    pub r_mean: Vec<[f64; 3]>,
    pub r_std: Vec<[f64; 3]>,
    pub multienv_mean: Option<f64>,
    pub multienv_std: Option<f64>,
}

pub struct RunResult {
    pub scenario: ScenarioKind,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub matrix: RewardMatrix,
}

/// Aggregate per (scenario, strategy): mean R across seeds, mean/std of the
/// per-run A, and the scenario's multienv mean test reward.
pub fn summarize(results: &[RunResult]) -> Result<Vec<SummaryRow>> {
    let mut groups: std::collections::BTreeMap<(ScenarioKind, StrategyKind), Vec<&RunResult>> =
        std::collections::BTreeMap::new();
    for r in results {
        groups.entry((r.scenario, r.strategy)).or_default().push(r);
    }

    // multienv upper bound per scenario: mean over maps of the single-row
    // matrix, averaged across seeds
    let mut upper: std::collections::BTreeMap<ScenarioKind, (f64, f64)> =
        std::collections::BTreeMap::new();
    for ((scenario, strategy), runs) in &groups {
        if *strategy == StrategyKind::Multienv {
            let per_seed: Vec<f64> = runs
                .iter()
                .map(|r| {
                    let row = &r.matrix.rows[0];
                    (row[0].mean + row[1].mean + row[2].mean) / 3.0
                })
                .collect();
            let s = stats(&per_seed);
            upper.insert(*scenario, (s.mean, s.std));
        }
    }

    let mut out = Vec::new();
    for ((scenario, strategy), runs) in &groups {
        let n_rows = runs[0].matrix.rows.len();
        if runs.iter().any(|r| r.matrix.rows.len() != n_rows) {
            return Err(Error::Contract(
                "inconsistent matrix shapes within a (scenario, strategy) group".into(),
            ));
        }
        let mut r_mean = Vec::with_capacity(n_rows);
        let mut r_std = Vec::with_capacity(n_rows);
        for i in 0..n_rows {
            let mut mean_row = [0.0; 3];
            let mut std_row = [0.0; 3];
            for j in 0..3 {
                let vals: Vec<f64> = runs.iter().map(|r| r.matrix.rows[i][j].mean).collect();
                let s = stats(&vals);
                mean_row[j] = s.mean;
                std_row[j] = s.std;
            }
            r_mean.push(mean_row);
            r_std.push(std_row);
        }
        let (a_mean, a_std) = if *strategy == StrategyKind::Multienv {
            (None, None)
        } else {
            let a_values: Vec<f64> = runs
                .iter()
                .map(|r| a_metric(&r.matrix.means()))
                .collect::<Result<_>>()?;
            let s = stats(&a_values);
            (Some(s.mean), Some(s.std))
        };
        let bound = upper.get(scenario);
        out.push(SummaryRow {
            scenario: *scenario,
            strategy: *strategy,
            seed_count: runs.len(),
            a_mean,
            a_std,
            r_mean,
            r_std,
            multienv_mean: bound.map(|b| b.0),
            multienv_std: bound.map(|b| b.1),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::{self, smoke_cell};

    #[test]
    fn same_seed_same_means() {
        let grid = {
            let mut g = GridSpec::default();
            g.episode_ticks = 40;
            g
        };
        let variants = build_scenario(ScenarioKind::Texture);
        let config = nn::NetworkConfig::new((8, grid.window(), grid.window()), vec![8]);
        let params = nn::init_params(&config, 3);
        let before = params.hash();
        let a = evaluate_checkpoint(&params, &grid, &variants, 3, 42, false).unwrap();
        let b = evaluate_checkpoint(&params, &grid, &variants, 3, 42, false).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean.to_bits(), y.mean.to_bits());
            assert_eq!(x.n, 3);
        }
        assert_eq!(params.hash(), before);
    }

    #[test]
    fn lantern_free_map_gives_nonnegative_reward_under_random_policy() {
        let mut grid = GridSpec::default();
        grid.initial_lanterns = 0;
        grid.episode_ticks = 200;
        let variants = build_scenario(ScenarioKind::Object);
        let config = nn::NetworkConfig::new((8, grid.window(), grid.window()), vec![4]);
        // zero parameters: uniform random policy
        let params = nn::ParamVector::zeros(&config);
        let row = evaluate_checkpoint(&params, &grid, &variants, 5, 7, false).unwrap();
        for cell in row {
            assert!(cell.mean >= 0.0, "only +100 and +0.7 events exist");
        }
    }

    #[test]
    fn a_metric_of_zero_matrix_is_zero_and_ignores_upper_triangle() {
        let zeros = vec![[0.0; 3]; 3];
        assert_eq!(a_metric(&zeros).unwrap(), 0.0);
        let mut m = vec![
            [1.0, 99.0, 99.0],
            [2.0, 3.0, 99.0],
            [4.0, 5.0, 6.0],
        ];
        let a1 = a_metric(&m).unwrap();
        m[0][1] = -500.0;
        m[0][2] = 123.0;
        m[1][2] = 7.0;
        let a2 = a_metric(&m).unwrap();
        assert_eq!(a1, a2);
        assert!((a1 - 21.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn a_metric_is_linear() {
        let m = vec![
            [1.0, 0.0, 0.0],
            [2.0, 3.0, 0.0],
            [-4.0, 5.0, 6.5],
        ];
        let d = vec![
            [0.5, 0.0, 0.0],
            [1.5, -2.0, 0.0],
            [0.25, 1.0, -1.0],
        ];
        let c = 3.0;
        let combined: Vec<[f64; 3]> = m
            .iter()
            .zip(&d)
            .map(|(mr, dr)| {
                [
                    c * mr[0] + dr[0],
                    c * mr[1] + dr[1],
                    c * mr[2] + dr[2],
                ]
            })
            .collect();
        let lhs = a_metric(&combined).unwrap();
        let rhs = c * a_metric(&m).unwrap() + a_metric(&d).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn a_metric_requires_full_matrix() {
        assert!(a_metric(&[[0.0; 3]; 2]).is_err());
    }

    fn fake_matrix(seed: f64, rows: usize) -> RewardMatrix {
        let mut out = Vec::new();
        for i in 0..rows {
            let base = seed + i as f64;
            out.push([
                EvalStats {
                    mean: base,
                    std: 1.0,
                    n: 4,
                },
                EvalStats {
                    mean: base * 2.0,
                    std: 1.0,
                    n: 4,
                },
                EvalStats {
                    mean: base - 1.0,
                    std: 1.0,
                    n: 4,
                },
            ]);
        }
        RewardMatrix {
            rows: out,
            n_test: 4,
        }
    }

    #[test]
    fn summary_of_single_run_echoes_it() {
        let results = vec![RunResult {
            scenario: ScenarioKind::Object,
            strategy: StrategyKind::Naive,
            seed: 1,
            matrix: fake_matrix(10.0, 3),
        }];
        let rows = summarize(&results).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.seed_count, 1);
        assert_eq!(row.r_mean, fake_matrix(10.0, 3).means());
        let a = a_metric(&fake_matrix(10.0, 3).means()).unwrap();
        assert_eq!(row.a_mean, Some(a));
        assert_eq!(row.a_std, Some(0.0));
        assert_eq!(row.multienv_mean, None);
    }

    #[test]
    fn a_of_mean_matrix_equals_mean_of_per_run_a() {
        let m1 = fake_matrix(5.0, 3);
        let m2 = fake_matrix(-3.0, 3);
        let results = vec![
            RunResult {
                scenario: ScenarioKind::Light,
                strategy: StrategyKind::Sup,
                seed: 1,
                matrix: m1.clone(),
            },
            RunResult {
                scenario: ScenarioKind::Light,
                strategy: StrategyKind::Sup,
                seed: 2,
                matrix: m2.clone(),
            },
        ];
        let rows = summarize(&results).unwrap();
        let a_of_mean = a_metric(&rows[0].r_mean).unwrap();
        let mean_of_a =
            (a_metric(&m1.means()).unwrap() + a_metric(&m2.means()).unwrap()) / 2.0;
        assert!((a_of_mean - mean_of_a).abs() < 1e-12);
        assert_eq!(rows[0].a_mean, Some(mean_of_a));
    }

    #[test]
    fn multienv_bound_attaches_to_every_strategy_row() {
        let results = vec![
            RunResult {
                scenario: ScenarioKind::Object,
                strategy: StrategyKind::Multienv,
                seed: 1,
                matrix: fake_matrix(30.0, 1),
            },
            RunResult {
                scenario: ScenarioKind::Object,
                strategy: StrategyKind::Naive,
                seed: 1,
                matrix: fake_matrix(10.0, 3),
            },
        ];
        let rows = summarize(&results).unwrap();
        assert_eq!(rows.len(), 2);
        let expect = (30.0 + 60.0 + 29.0) / 3.0;
        for row in &rows {
            assert_eq!(row.multienv_mean, Some(expect));
        }
        let multienv_row = rows
            .iter()
            .find(|r| r.strategy == StrategyKind::Multienv)
            .unwrap();
        assert_eq!(multienv_row.a_mean, None);
        assert_eq!(multienv_row.r_mean.len(), 1);
    }

    #[test]
    fn reward_matrix_of_trained_runs_has_the_right_shape() {
        let run =
            strategies::run_strategy(smoke_cell(ScenarioKind::Object, StrategyKind::Naive, 2, 2))
                .unwrap();
        let m = reward_matrix(&run, 2).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.n_test, 2);
        let a = a_metric(&m.means()).unwrap();
        assert!(a.is_finite());
        let multi = strategies::run_strategy(smoke_cell(
            ScenarioKind::Object,
            StrategyKind::Multienv,
            2,
            4,
        ))
        .unwrap();
        let m = reward_matrix(&multi, 2).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert!(a_metric(&m.means()).is_err());
    }
}
