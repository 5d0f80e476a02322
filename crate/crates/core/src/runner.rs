//! Experiment execution: run directories, CSV artifacts, resume, summary.
//!
//! Every (scenario, strategy, seed) cell owns the directory
//! `{out}/{scenario}/{strategy}/{seed}/` containing:
//!
//! - `cell.cfg`            resolved single-cell config snapshot
//! - `log.csv`             one diagnostics row per training episode
//! - `reward_matrix.csv`   per-checkpoint x per-map test results
//! - `checkpoint_map{i}`   parameter snapshot after training on map i
//! - `checkpoint_final`    full training state at the end of the run
//! - `checkpoint_latest`   mid-run resume point (removed at completion)
//! - `meta.txt`            timestamps and durations (the only artifact
//!                         bytes that vary between identical runs)
//! - `COMPLETE`            marker that all artifacts above are final
//!
//! A top-level `summary.csv` aggregates all cells. Cells are independent;
//! up to `parallelism` of them execute concurrently, and the summary is
//! rebuilt from the directories in sorted order so concurrency never
//! changes a byte of it.
//!
//! CSV schemas (version 1, headers are authoritative):
//!
//! - log.csv: episode, map, reward, reward_short, reward_long, lambda,
//!   policy_loss, value_loss, entropy, param_hash
//! - reward_matrix.csv: after_map, eval_map, mean, std, n_episodes
//! - summary.csv: scenario, strategy, seed_count, a_mean, a_std,
//!   r{i}{j}_mean, r{i}{j}_std (i, j in 1..=3), multienv_mean, multienv_std

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use rayon::prelude::*;

use crate::checkpoint;
use crate::config::{self, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalStats, RewardMatrix, RunResult, SummaryRow};
use crate::nn::ParamVector;
use crate::scenario::ScenarioKind;
use crate::strategies::{CellConfig, LogRow, StrategyKind, Trainer};

pub const LOG_CSV_HEADER: &str =
    "episode,map,reward,reward_short,reward_long,lambda,policy_loss,value_loss,entropy,param_hash";
pub const MATRIX_CSV_HEADER: &str = "after_map,eval_map,mean,std,n_episodes";

/// Environment variables honored by [`run_experiment`] (CLI flags take
/// precedence over them).
pub const ENV_OUTPUT_DIR: &str = "DRIFTGRID_OUT";
pub const ENV_PARALLELISM: &str = "DRIFTGRID_PARALLELISM";

#[derive(Clone, Debug, Default)]
pub struct RunnerOverrides {
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
}

impl RunnerOverrides {
    /// Apply DRIFTGRID_OUT / DRIFTGRID_PARALLELISM on top of `self` (fields
    /// already set win).
    pub fn with_env(mut self) -> RunnerOverrides {
        if self.output_dir.is_none() {
            if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
                if !dir.is_empty() {
                    self.output_dir = Some(PathBuf::from(dir));
                }
            }
        }
        if self.parallelism.is_none() {
            if let Ok(par) = std::env::var(ENV_PARALLELISM) {
                if let Ok(n) = par.parse::<usize>() {
                    self.parallelism = Some(n.max(1));
                }
            }
        }
        self
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub completed: usize,
    /// (cell label, error message) per failed cell.
    pub failures: Vec<(String, String)>,
}

pub fn cell_dir(root: &Path, cell: &CellConfig) -> PathBuf {
    root.join(cell.scenario.name())
        .join(cell.strategy.name())
        .join(cell.seed.to_string())
}

fn cell_label(cell: &CellConfig) -> String {
    format!(
        "{}/{}/{}",
        cell.scenario.name(),
        cell.strategy.name(),
        cell.seed
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellStatus {
    Completed,
    Paused,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Execute one cell to completion (or to `stop_at` episodes, checkpointing
/// for a later resume). Skips work already finalized on disk; resumes from
/// `checkpoint_latest` when present.
pub fn run_cell(
    root: &Path,
    checkpoint_every: usize,
    cell: &CellConfig,
    stop_at: Option<usize>,
) -> Result<CellStatus> {
    let dir = cell_dir(root, cell);
    let cfg_text = config::cell_config_text(cell);
    if dir.join("COMPLETE").exists() {
        let existing = std::fs::read_to_string(dir.join("cell.cfg"))?;
        if existing != cfg_text {
            return Err(Error::Config(format!(
                "{} already holds a completed run with a different configuration",
                dir.display()
            )));
        }
        return Ok(CellStatus::Completed);
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("cell.cfg"), &cfg_text)?;

    let started = now_unix();
    let latest = dir.join("checkpoint_latest");
    let mut trainer = if latest.exists() {
        let bytes = std::fs::read(&latest)?;
        let data = checkpoint::decode_checkpoint(&bytes)?;
        checkpoint::resume(cell.clone(), &data)?
    } else {
        Trainer::new(cell.clone())?
    };

    loop {
        let next_stop = (trainer.episode + checkpoint_every).min(trainer.total_episodes());
        let next_stop = match stop_at {
            Some(s) => next_stop.min(s),
            None => next_stop,
        };
        trainer.run_until(Some(next_stop))?;
        if trainer.finished() {
            break;
        }
        let bytes = checkpoint::encode_checkpoint(&checkpoint::snapshot(&trainer));
        std::fs::write(&latest, bytes)?;
        if stop_at.is_some_and(|s| trainer.episode >= s) {
            return Ok(CellStatus::Paused);
        }
    }

    // final artifacts
    let final_bytes = checkpoint::encode_checkpoint(&checkpoint::snapshot(&trainer));
    let net = trainer.network().clone();
    let run = trainer.into_trained_run()?;
    write_log_csv(&dir.join("log.csv"), &run.log)?;
    for (i, params) in run.map_checkpoints.iter().enumerate() {
        std::fs::write(
            dir.join(format!("checkpoint_map{}", i + 1)),
            checkpoint::encode_params(&net, params.data()),
        )?;
    }
    std::fs::write(dir.join("checkpoint_final"), final_bytes)?;
    let matrix = eval::reward_matrix(&run, run.cell.hyper.test_episodes)?;
    write_matrix_csv(&dir.join("reward_matrix.csv"), &matrix)?;
    let finished = now_unix();
    std::fs::write(
        dir.join("meta.txt"),
        format!(
            "schema_version = 1\nstarted_unix = {started:.3}\nfinished_unix = {finished:.3}\nduration_seconds = {:.3}\n",
            finished - started
        ),
    )?;
    if latest.exists() {
        std::fs::remove_file(&latest)?;
    }
    std::fs::write(dir.join("COMPLETE"), "ok\n")?;
    Ok(CellStatus::Completed)
}

/// Run every cell of the experiment, up to `parallelism` concurrently, then
/// rebuild summary.csv from the finished directories. Per-cell failures are
/// reported in the outcome; other cells are unaffected.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    overrides: &RunnerOverrides,
) -> Result<ExperimentOutcome> {
    let root = overrides
        .output_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    let parallelism = overrides.parallelism.unwrap_or(cfg.parallelism).max(1);
    std::fs::create_dir_all(&root)?;

    let cells = cfg.cell_configs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<(String, Result<CellStatus>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                (
                    cell_label(cell),
                    run_cell(&root, cfg.checkpoint_every, cell, None),
                )
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut completed = 0usize;
    for (label, result) in results {
        match result {
            Ok(CellStatus::Completed) => completed += 1,
            Ok(CellStatus::Paused) => unreachable!("no stop_at in experiment mode"),
            Err(e) => failures.push((label, e.to_string())),
        }
    }

    // summary over everything that finished, in deterministic cell order
    let mut collected = Vec::new();
    for cell in &cells {
        let dir = cell_dir(&root, cell);
        if !dir.join("COMPLETE").exists() {
            continue;
        }
        let matrix = read_matrix_csv(&dir.join("reward_matrix.csv"))?;
        collected.push(RunResult {
            scenario: cell.scenario,
            strategy: cell.strategy,
            seed: cell.seed,
            matrix,
        });
    }
    if !collected.is_empty() {
        let rows = eval::summarize(&collected)?;
        write_summary_csv(&root.join("summary.csv"), &rows)?;
    }

    Ok(ExperimentOutcome {
        output_dir: root,
        completed,
        failures,
    })
}

/// Re-evaluate a finished run directory from its per-map checkpoints and
/// rewrite reward_matrix.csv. Returns the fresh matrix.
pub fn eval_run_dir(run_dir: &Path, n_test_override: Option<usize>) -> Result<RewardMatrix> {
    let cfg_text = std::fs::read_to_string(run_dir.join("cell.cfg"))
        .map_err(|e| Error::Config(format!("{}: {e}", run_dir.join("cell.cfg").display())))?;
    let cell = config::parse_cell_config(&cfg_text)?;
    let expect = if cell.strategy.is_sequential() { 3 } else { 1 };
    let net = cell.network();
    let mut checkpoints = Vec::with_capacity(expect);
    for i in 1..=expect {
        let path = run_dir.join(format!("checkpoint_map{i}"));
        let bytes =
            std::fs::read(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let (stored_net, data) = checkpoint::decode_params(&bytes)?;
        if stored_net != net {
            return Err(Error::Format(format!(
                "{} does not match the cell's network configuration",
                path.display()
            )));
        }
        checkpoints.push(ParamVector::from_data(&net, data)?);
    }
    let n_test = n_test_override.unwrap_or(cell.hyper.test_episodes);
    let matrix = eval::reward_matrix_from_parts(&cell, &checkpoints, n_test)?;
    write_matrix_csv(&run_dir.join("reward_matrix.csv"), &matrix)?;
    Ok(matrix)
}

// ---------------------------------------------------------------- CSV io

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation; "inf"/"-inf" parse back via f64
    format!("{v}")
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut out = String::from(LOG_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:016x}\n",
            r.episode,
            r.map,
            fmt_f64(r.reward),
            fmt_f64(r.reward_short),
            fmt_f64(r.reward_long),
            fmt_f64(r.lambda),
            fmt_f64(r.policy_loss),
            fmt_f64(r.value_loss),
            fmt_f64(r.entropy),
            r.param_hash,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn require_header(path: &Path, got: &str, want: &str) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!(
            "{}: expected columns \"{want}\", found \"{got}\"",
            path.display()
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| {
        Error::Format(format!(
            "{} line {}: cannot parse \"{field}\"",
            path.display(),
            line + 2
        ))
    })
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    require_header(path, header, LOG_CSV_HEADER)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 10 {
            return Err(Error::Format(format!(
                "{} line {}: expected 10 fields, found {}",
                path.display(),
                i + 2,
                f.len()
            )));
        }
        rows.push(LogRow {
            episode: parse_field(path, i, f[0])?,
            map: parse_field(path, i, f[1])?,
            reward: parse_field(path, i, f[2])?,
            reward_short: parse_field(path, i, f[3])?,
            reward_long: parse_field(path, i, f[4])?,
            lambda: parse_field(path, i, f[5])?,
            policy_loss: parse_field(path, i, f[6])?,
            value_loss: parse_field(path, i, f[7])?,
            entropy: parse_field(path, i, f[8])?,
            param_hash: u64::from_str_radix(f[9], 16).map_err(|_| {
                Error::Format(format!(
                    "{} line {}: bad param_hash \"{}\"",
                    path.display(),
                    i + 2,
                    f[9]
                ))
            })?,
        });
    }
    Ok(rows)
}

pub fn write_matrix_csv(path: &Path, matrix: &RewardMatrix) -> Result<()> {
    let mut out = String::from(MATRIX_CSV_HEADER);
    out.push('\n');
    for (i, row) in matrix.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                j + 1,
                fmt_f64(cell.mean),
                fmt_f64(cell.std),
                cell.n
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<RewardMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    require_header(path, header, MATRIX_CSV_HEADER)?;
    let mut cells: Vec<(usize, usize, EvalStats)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 5 {
            return Err(Error::Format(format!(
                "{} line {}: expected 5 fields",
                path.display(),
                i + 2
            )));
        }
        let after: usize = parse_field(path, i, f[0])?;
        let eval_map: usize = parse_field(path, i, f[1])?;
        cells.push((
            after,
            eval_map,
            EvalStats {
                mean: parse_field(path, i, f[2])?,
                std: parse_field(path, i, f[3])?,
                n: parse_field(path, i, f[4])?,
            },
        ));
    }
    let n_rows = cells.iter().map(|c| c.0).max().unwrap_or(0);
    if n_rows == 0 || cells.len() != n_rows * 3 {
        return Err(Error::Format(format!(
            "{}: expected {} complete rows of 3 maps",
            path.display(),
            n_rows.max(1)
        )));
    }
    let n_test = cells[0].2.n;
    let mut rows = Vec::with_capacity(n_rows);
    for i in 1..=n_rows {
        let mut row = Vec::with_capacity(3);
        for j in 1..=3 {
            let cell = cells
                .iter()
                .find(|c| c.0 == i && c.1 == j)
                .ok_or_else(|| {
                    Error::Format(format!(
                        "{}: missing entry after_map={i} eval_map={j}",
                        path.display()
                    ))
                })?;
            row.push(cell.2);
        }
        rows.push([row[0], row[1], row[2]]);
    }
    Ok(RewardMatrix { rows, n_test })
}

pub fn summary_csv_header() -> String {
    let mut cols = vec![
        "scenario".to_string(),
        "strategy".to_string(),
        "seed_count".to_string(),
        "a_mean".to_string(),
        "a_std".to_string(),
    ];
    for i in 1..=3 {
        for j in 1..=3 {
            cols.push(format!("r{i}{j}_mean"));
            cols.push(format!("r{i}{j}_std"));
        }
    }
    cols.push("multienv_mean".to_string());
    cols.push("multienv_std".to_string());
    cols.join(",")
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = summary_csv_header();
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let mut fields = vec![
            r.scenario.name().to_string(),
            r.strategy.name().to_string(),
            r.seed_count.to_string(),
            opt(r.a_mean),
            opt(r.a_std),
        ];
        for i in 0..3 {
            for j in 0..3 {
                if i < r.r_mean.len() {
                    fields.push(fmt_f64(r.r_mean[i][j]));
                    fields.push(fmt_f64(r.r_std[i][j]));
                } else {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        fields.push(opt(r.multienv_mean));
        fields.push(opt(r.multienv_std));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    require_header(path, header, &summary_csv_header())?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f = split_csv_line(line);
        if f.len() != 25 {
            return Err(Error::Format(format!(
                "{} line {}: expected 25 fields, found {}",
                path.display(),
                i + 2,
                f.len()
            )));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(parse_field(path, i, s)?))
            }
        };
        let mut r_mean = Vec::new();
        let mut r_std = Vec::new();
        for row_idx in 0..3 {
            let base = 5 + row_idx * 6;
            if f[base].is_empty() {
                continue;
            }
            let mut mean = [0.0; 3];
            let mut std = [0.0; 3];
            for j in 0..3 {
                mean[j] = parse_field(path, i, f[base + 2 * j])?;
                std[j] = parse_field(path, i, f[base + 2 * j + 1])?;
            }
            r_mean.push(mean);
            r_std.push(std);
        }
        rows.push(SummaryRow {
            scenario: ScenarioKind::parse(f[0])?,
            strategy: StrategyKind::parse(f[1])?,
            seed_count: parse_field(path, i, f[2])?,
            a_mean: opt(f[3])?,
            a_std: opt(f[4])?,
            r_mean,
            r_std,
            multienv_mean: opt(f[23])?,
            multienv_std: opt(f[24])?,
        });
    }
    Ok(rows)
}

/// All completed run directories under a results root, sorted.
pub fn completed_run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if !root.is_dir() {
        return Err(Error::Config(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    for scenario in sorted_subdirs(root)? {
        for strategy in sorted_subdirs(&scenario)? {
            for seed in sorted_subdirs(&strategy)? {
                if seed.join("COMPLETE").exists() {
                    dirs.push(seed);
                }
            }
        }
    }
    Ok(dirs)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioKind;
    use crate::strategies::{smoke_cell, StrategyKind};
    use std::collections::BTreeMap;

    fn smoke_experiment(dir: &Path, strategies: Vec<StrategyKind>, seeds: Vec<u64>) -> ExperimentConfig {
        let mut cells = BTreeMap::new();
        for &s in &strategies {
            let cell = smoke_cell(ScenarioKind::Object, s, 0, 2);
            cells.insert((ScenarioKind::Object, s), cell.hyper);
        }
        let grid = smoke_cell(ScenarioKind::Object, StrategyKind::Naive, 0, 2).grid;
        ExperimentConfig {
            scenarios: vec![ScenarioKind::Object],
            strategies,
            seeds,
            output_dir: dir.to_path_buf(),
            parallelism: 2,
            checkpoint_every: 3,
            grid,
            cells,
        }
    }

    #[test]
    fn experiment_produces_complete_cells_and_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = smoke_experiment(
            tmp.path(),
            vec![StrategyKind::Naive, StrategyKind::Multienv],
            vec![1, 2],
        );
        let outcome = run_experiment(&cfg, &RunnerOverrides::default()).unwrap();
        assert_eq!(outcome.completed, 4);
        assert!(outcome.failures.is_empty());
        for cell in cfg.cell_configs() {
            let dir = cell_dir(tmp.path(), &cell);
            for file in ["cell.cfg", "log.csv", "reward_matrix.csv", "checkpoint_final", "COMPLETE", "meta.txt"] {
                assert!(dir.join(file).exists(), "{} missing {file}", dir.display());
            }
            assert!(!dir.join("checkpoint_latest").exists());
        }
        let summary = read_summary_csv(&tmp.path().join("summary.csv")).unwrap();
        assert_eq!(summary.len(), 2);
        let naive = summary
            .iter()
            .find(|r| r.strategy == StrategyKind::Naive)
            .unwrap();
        assert_eq!(naive.seed_count, 2);
        assert!(naive.a_mean.is_some());
        assert!(naive.multienv_mean.is_some());
        // rerunning skips everything and reproduces the same summary bytes
        let before = std::fs::read(tmp.path().join("summary.csv")).unwrap();
        run_experiment(&cfg, &RunnerOverrides::default()).unwrap();
        let after = std::fs::read(tmp.path().join("summary.csv")).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn log_csv_round_trip_preserves_bits() {
        let rows = vec![
            LogRow {
                episode: 0,
                map: 1,
                reward: 12.345678901234567,
                reward_short: -0.1,
                reward_long: 1.0 / 3.0,
                lambda: 0.0,
                policy_loss: f64::MIN_POSITIVE,
                value_loss: 1e300,
                entropy: 1.0986122886681098,
                param_hash: 0xdeadbeef12345678,
            },
            LogRow {
                episode: 1,
                map: 2,
                reward: -987.0,
                reward_short: 0.0,
                reward_long: -0.0,
                lambda: 1e8,
                policy_loss: 0.25,
                value_loss: 3.5,
                entropy: 0.9,
                param_hash: 1,
            },
        ];
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("log.csv");
        write_log_csv(&path, &rows).unwrap();
        let back = read_log_csv(&path).unwrap();
        assert_eq!(rows.len(), back.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.reward.to_bits(), b.reward.to_bits());
            assert_eq!(a.reward_long.to_bits(), b.reward_long.to_bits());
            assert_eq!(a.param_hash, b.param_hash);
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let matrix = RewardMatrix {
            rows: vec![
                [
                    EvalStats { mean: 1.5, std: 0.25, n: 4 },
                    EvalStats { mean: -2.0, std: 0.5, n: 4 },
                    EvalStats { mean: 0.0, std: 0.0, n: 4 },
                ];
                3
            ],
            n_test: 4,
        };
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("reward_matrix.csv");
        write_matrix_csv(&path, &matrix).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), matrix);
    }

    #[test]
    fn missing_columns_give_descriptive_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("log.csv");
        std::fs::write(&path, "episode,map,reward\n1,2,3\n").unwrap();
        let err = read_log_csv(&path).unwrap_err().to_string();
        assert!(err.contains("expected columns"), "got: {err}");
        assert!(err.contains("reward_short"), "got: {err}");
    }

    #[test]
    fn kill_and_resume_reproduces_identical_log_csv() {
        let tmp = tempfile::tempdir().unwrap();
        let straight_root = tmp.path().join("straight");
        let resumed_root = tmp.path().join("resumed");
        let cell = smoke_cell(ScenarioKind::Object, StrategyKind::Unsup, 9, 3);

        run_cell(&straight_root, 2, &cell, None).unwrap();

        // simulated kill: stop after 4 of 9 episodes, then run again
        let status = run_cell(&resumed_root, 2, &cell, Some(4)).unwrap();
        assert_eq!(status, CellStatus::Paused);
        assert!(cell_dir(&resumed_root, &cell)
            .join("checkpoint_latest")
            .exists());
        run_cell(&resumed_root, 2, &cell, None).unwrap();

        let a = std::fs::read(cell_dir(&straight_root, &cell).join("log.csv")).unwrap();
        let b = std::fs::read(cell_dir(&resumed_root, &cell).join("log.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read(cell_dir(&straight_root, &cell).join("reward_matrix.csv")).unwrap();
        let b = std::fs::read(cell_dir(&resumed_root, &cell).join("reward_matrix.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_run_dir_recomputes_matrix() {
        let tmp = tempfile::tempdir().unwrap();
        let cell = smoke_cell(ScenarioKind::Object, StrategyKind::Naive, 4, 2);
        run_cell(tmp.path(), 5, &cell, None).unwrap();
        let dir = cell_dir(tmp.path(), &cell);
        let original = read_matrix_csv(&dir.join("reward_matrix.csv")).unwrap();
        let fresh = eval_run_dir(&dir, None).unwrap();
        assert_eq!(original, fresh);
        // a different episode budget changes n but stays deterministic
        let more = eval_run_dir(&dir, Some(3)).unwrap();
        assert_eq!(more.n_test, 3);
        assert_eq!(eval_run_dir(&dir, Some(3)).unwrap(), more);
    }

    #[test]
    fn env_overrides_apply_when_fields_unset() {
        // no subprocess env manipulation: exercise the precedence logic
        let explicit = RunnerOverrides {
            output_dir: Some(PathBuf::from("explicit")),
            parallelism: Some(3),
        };
        let kept = explicit.clone().with_env();
        assert_eq!(kept.output_dir.as_deref(), Some(Path::new("explicit")));
        assert_eq!(kept.parallelism, Some(3));
    }
}
