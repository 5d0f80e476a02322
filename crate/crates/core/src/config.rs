//! Experiment configuration: a flat key-value text format with section
//! headers.
//!
//! ```text
//! # comment
//! [run]
//! scenarios = object
//! strategies = naive, sup, unsup
//! seeds = 1, 2, 3
//! output_dir = runs/object
//!
//! [grid]          # optional overrides of the default grid
//! episode_ticks = 1000
//!
//! [defaults]      # hyperparameters shared by every cell
//! learning_rate = 1e-3
//! train_episodes = 100
//!
//! [object]        # per-scenario overrides
//! [object.unsup]  # per-(scenario, strategy) overrides
//! eta = -80
//! alpha = 1e3
//! ```
//!
//! Resolution order per cell is defaults -> scenario -> scenario.strategy.
//! Unknown sections or keys are rejected; a cell missing a key its strategy
//! requires fails validation naming that key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::a2c::Hyperparams;
use crate::env::GridSpec;
use crate::error::{Error, Result};
use crate::scenario::ScenarioKind;
use crate::strategies::{CellConfig, StrategyKind};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    /// Episodes between mid-run checkpoints.
    pub checkpoint_every: usize,
    pub grid: GridSpec,
    pub cells: BTreeMap<(ScenarioKind, StrategyKind), Hyperparams>,
}

impl ExperimentConfig {
    pub fn hyper(&self, scenario: ScenarioKind, strategy: StrategyKind) -> &Hyperparams {
        &self.cells[&(scenario, strategy)]
    }

    /// Every (scenario, strategy, seed) training cell, in deterministic
    /// order.
    pub fn cell_configs(&self) -> Vec<CellConfig> {
        let mut cells = Vec::new();
        for &scenario in &self.scenarios {
            for &strategy in &self.strategies {
                for &seed in &self.seeds {
                    cells.push(CellConfig {
                        scenario,
                        strategy,
                        seed,
                        grid: self.grid.clone(),
                        hyper: self.cells[&(scenario, strategy)].clone(),
                    });
                }
            }
        }
        cells
    }

    /// Canonical serialization: one fully resolved section per cell.
    /// `parse_config(cfg.to_text())` reproduces `cfg` exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join =
            |names: Vec<String>| -> String { names.join(", ") };
        writeln!(out, "[run]").unwrap();
        writeln!(
            out,
            "scenarios = {}",
            join(self.scenarios.iter().map(|s| s.name().to_string()).collect())
        )
        .unwrap();
        writeln!(
            out,
            "strategies = {}",
            join(self.strategies.iter().map(|s| s.name().to_string()).collect())
        )
        .unwrap();
        writeln!(
            out,
            "seeds = {}",
            join(self.seeds.iter().map(|s| s.to_string()).collect())
        )
        .unwrap();
        writeln!(out, "output_dir = {}", self.output_dir.display()).unwrap();
        writeln!(out, "parallelism = {}", self.parallelism).unwrap();
        writeln!(out, "checkpoint_every = {}", self.checkpoint_every).unwrap();
        writeln!(out).unwrap();
        writeln!(out, "[grid]").unwrap();
        writeln!(out, "width = {}", self.grid.width).unwrap();
        writeln!(out, "height = {}", self.grid.height).unwrap();
        writeln!(out, "initial_columns = {}", self.grid.initial_columns).unwrap();
        writeln!(out, "initial_lanterns = {}", self.grid.initial_lanterns).unwrap();
        writeln!(out, "respawn_period = {}", self.grid.respawn_period).unwrap();
        writeln!(out, "episode_ticks = {}", self.grid.episode_ticks).unwrap();
        writeln!(out, "action_repeat = {}", self.grid.action_repeat).unwrap();
        writeln!(out, "view_radius = {}", self.grid.view_radius).unwrap();
        for ((scenario, strategy), hyper) in &self.cells {
            writeln!(out).unwrap();
            writeln!(out, "[{}.{}]", scenario.name(), strategy.name()).unwrap();
            let h = hyper;
            writeln!(out, "learning_rate = {}", h.learning_rate).unwrap();
            writeln!(out, "gamma = {}", h.gamma).unwrap();
            writeln!(out, "n_envs = {}", h.n_envs).unwrap();
            writeln!(out, "n_steps = {}", h.n_steps).unwrap();
            writeln!(out, "value_coef = {}", h.value_coef).unwrap();
            writeln!(out, "entropy_coef = {}", h.entropy_coef).unwrap();
            writeln!(out, "rmsprop_decay = {}", h.rmsprop_decay).unwrap();
            writeln!(out, "rmsprop_epsilon = {}", h.rmsprop_epsilon).unwrap();
            writeln!(
                out,
                "hidden_sizes = {}",
                join(h.hidden_sizes.iter().map(|s| s.to_string()).collect())
            )
            .unwrap();
            writeln!(out, "train_episodes = {}", h.train_episodes).unwrap();
            writeln!(out, "test_episodes = {}", h.test_episodes).unwrap();
            writeln!(out, "window_short = {}", h.window_short).unwrap();
            writeln!(out, "window_long = {}", h.window_long).unwrap();
            writeln!(out, "eta = {}", h.eta).unwrap();
            writeln!(out, "alpha = {}", h.alpha).unwrap();
            writeln!(out, "lambda = {}", h.lambda).unwrap();
            writeln!(out, "fisher_freq = {}", h.fisher_freq).unwrap();
            writeln!(out, "fisher_clip = {}", h.fisher_clip).unwrap();
            writeln!(out, "fisher_sample_size = {}", h.fisher_sample_size).unwrap();
            writeln!(out, "fisher_normalize = {}", h.fisher_normalize).unwrap();
            writeln!(
                out,
                "fisher_clip_mode = {}",
                if h.fisher_clip_floor { "floor" } else { "upper" }
            )
            .unwrap();
            writeln!(out, "greedy_eval = {}", h.greedy_eval).unwrap();
            writeln!(out, "sup_single_anchor = {}", h.sup_single_anchor).unwrap();
            writeln!(out, "unsup_boundary_latch = {}", h.unsup_boundary_latch).unwrap();
            writeln!(out, "rollout_parallel = {}", h.rollout_parallel).unwrap();
        }
        out
    }
}

type Section = BTreeMap<String, String>;

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?
                .trim()
                .to_string();
            if sections.contains_key(&name) {
                return Err(Error::Config(format!("duplicate section [{name}]")));
            }
            sections.insert(name.clone(), Section::new());
            current = Some(name);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got \"{line}\"", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = current
            .as_ref()
            .ok_or_else(|| Error::Config(format!("line {}: key before any [section]", lineno + 1)))?;
        let entry = sections.get_mut(section).expect("section exists");
        if entry.contains_key(&key) {
            return Err(Error::Config(format!(
                "duplicate key \"{key}\" in section [{section}]"
            )));
        }
        entry.insert(key, value);
    }
    Ok(sections)
}

fn parse_u64(section: &str, key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key} = \"{value}\" is not an integer"))
    })
}

fn parse_usize(section: &str, key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key} = \"{value}\" is not an integer"))
    })
}

fn parse_f64(section: &str, key: &str, value: &str) -> Result<f64> {
    value.parse().map_err(|_| {
        Error::Config(format!("[{section}] {key} = \"{value}\" is not a number"))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "[{section}] {key} = \"{value}\" is not true/false"
        ))),
    }
}

fn parse_list(value: &str) -> Vec<&str> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Unresolved hyperparameters: every field optional until cell resolution.
#[derive(Clone, Default)]
struct HyperDraft {
    values: BTreeMap<&'static str, String>,
}

const HYPER_KEYS: &[&str] = &[
    "learning_rate",
    "gamma",
    "n_envs",
    "n_steps",
    "value_coef",
    "entropy_coef",
    "rmsprop_decay",
    "rmsprop_epsilon",
    "hidden_sizes",
    "train_episodes",
    "test_episodes",
    "window_short",
    "window_long",
    "eta",
    "alpha",
    "lambda",
    "fisher_freq",
    "fisher_clip",
    "fisher_sample_size",
    "fisher_normalize",
    "fisher_clip_mode",
    "greedy_eval",
    "sup_single_anchor",
    "unsup_boundary_latch",
    "rollout_parallel",
];

impl HyperDraft {
    fn merge(&mut self, section_name: &str, section: &Section) -> Result<()> {
        for (key, value) in section {
            let canonical = HYPER_KEYS
                .iter()
                .find(|k| *k == key)
                .ok_or_else(|| {
                    Error::Config(format!("unknown key \"{key}\" in section [{section_name}]"))
                })?;
            self.values.insert(canonical, value.clone());
        }
        Ok(())
    }

    fn required(&self, cell: &str, key: &str) -> Result<&String> {
        self.values.get(key).ok_or_else(|| {
            Error::Config(format!("missing required key \"{key}\" for cell {cell}"))
        })
    }

    fn resolve(&self, scenario: ScenarioKind, strategy: StrategyKind) -> Result<Hyperparams> {
        let cell = format!("{}.{}", scenario.name(), strategy.name());
        let mut h = Hyperparams::default();
        let get = |key: &str| self.values.get(key);

        h.learning_rate = parse_f64(&cell, "learning_rate", self.required(&cell, "learning_rate")?)?;
        h.train_episodes =
            parse_usize(&cell, "train_episodes", self.required(&cell, "train_episodes")?)?;
        if let Some(v) = get("gamma") {
            h.gamma = parse_f64(&cell, "gamma", v)?;
        }
        if let Some(v) = get("n_envs") {
            h.n_envs = parse_usize(&cell, "n_envs", v)?;
        }
        if let Some(v) = get("n_steps") {
            h.n_steps = parse_usize(&cell, "n_steps", v)?;
        }
        if let Some(v) = get("value_coef") {
            h.value_coef = parse_f64(&cell, "value_coef", v)?;
        }
        if let Some(v) = get("entropy_coef") {
            h.entropy_coef = parse_f64(&cell, "entropy_coef", v)?;
        }
        if let Some(v) = get("rmsprop_decay") {
            h.rmsprop_decay = parse_f64(&cell, "rmsprop_decay", v)?;
        }
        if let Some(v) = get("rmsprop_epsilon") {
            h.rmsprop_epsilon = parse_f64(&cell, "rmsprop_epsilon", v)?;
        }
        if let Some(v) = get("hidden_sizes") {
            h.hidden_sizes = parse_list(v)
                .iter()
                .map(|s| parse_usize(&cell, "hidden_sizes", s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("test_episodes") {
            h.test_episodes = parse_usize(&cell, "test_episodes", v)?;
        }
        if let Some(v) = get("window_short") {
            h.window_short = parse_usize(&cell, "window_short", v)?;
        }
        if let Some(v) = get("window_long") {
            h.window_long = parse_usize(&cell, "window_long", v)?;
        }
        if let Some(v) = get("fisher_normalize") {
            h.fisher_normalize = parse_bool(&cell, "fisher_normalize", v)?;
        }
        if let Some(v) = get("fisher_clip_mode") {
            h.fisher_clip_floor = match v.as_str() {
                "upper" => false,
                "floor" => true,
                other => {
                    return Err(Error::Config(format!(
                        "[{cell}] fisher_clip_mode = \"{other}\" (expected upper or floor)"
                    )))
                }
            };
        }
        if let Some(v) = get("greedy_eval") {
            h.greedy_eval = parse_bool(&cell, "greedy_eval", v)?;
        }
        if let Some(v) = get("sup_single_anchor") {
            h.sup_single_anchor = parse_bool(&cell, "sup_single_anchor", v)?;
        }
        if let Some(v) = get("unsup_boundary_latch") {
            h.unsup_boundary_latch = parse_bool(&cell, "unsup_boundary_latch", v)?;
        }
        if let Some(v) = get("rollout_parallel") {
            h.rollout_parallel = parse_bool(&cell, "rollout_parallel", v)?;
        }

        // strategy-conditional requirements; optional values still parse so
        // a shared [defaults] section can carry them
        h.eta = f64::NEG_INFINITY;
        h.alpha = 0.0;
        h.lambda = 0.0;
        h.fisher_freq = 0;
        h.fisher_clip = 0.0;
        h.fisher_sample_size = 0;
        let needs_fisher = strategy.uses_consolidation();
        let needs_freq = matches!(strategy, StrategyKind::Static | StrategyKind::Unsup);
        if needs_fisher {
            h.fisher_clip = parse_f64(&cell, "fisher_clip", self.required(&cell, "fisher_clip")?)?;
            h.fisher_sample_size = parse_usize(
                &cell,
                "fisher_sample_size",
                self.required(&cell, "fisher_sample_size")?,
            )?;
        } else {
            if let Some(v) = get("fisher_clip") {
                h.fisher_clip = parse_f64(&cell, "fisher_clip", v)?;
            }
            if let Some(v) = get("fisher_sample_size") {
                h.fisher_sample_size = parse_usize(&cell, "fisher_sample_size", v)?;
            }
        }
        if needs_freq {
            h.fisher_freq = parse_usize(&cell, "fisher_freq", self.required(&cell, "fisher_freq")?)?;
        } else if let Some(v) = get("fisher_freq") {
            h.fisher_freq = parse_usize(&cell, "fisher_freq", v)?;
        }
        match strategy {
            StrategyKind::Sup | StrategyKind::Static => {
                h.lambda = parse_f64(&cell, "lambda", self.required(&cell, "lambda")?)?;
                if let Some(v) = get("eta") {
                    h.eta = parse_f64(&cell, "eta", v)?;
                }
                if let Some(v) = get("alpha") {
                    h.alpha = parse_f64(&cell, "alpha", v)?;
                }
            }
            StrategyKind::Unsup => {
                h.eta = parse_f64(&cell, "eta", self.required(&cell, "eta")?)?;
                h.alpha = parse_f64(&cell, "alpha", self.required(&cell, "alpha")?)?;
                if let Some(v) = get("lambda") {
                    h.lambda = parse_f64(&cell, "lambda", v)?;
                }
            }
            StrategyKind::Naive | StrategyKind::Multienv => {
                if let Some(v) = get("eta") {
                    h.eta = parse_f64(&cell, "eta", v)?;
                }
                if let Some(v) = get("alpha") {
                    h.alpha = parse_f64(&cell, "alpha", v)?;
                }
                if let Some(v) = get("lambda") {
                    h.lambda = parse_f64(&cell, "lambda", v)?;
                }
            }
        }
        if h.window_short >= h.window_long {
            return Err(Error::Config(format!(
                "cell {cell}: window_short must be smaller than window_long"
            )));
        }
        Ok(h)
    }
}

const GRID_KEYS: &[&str] = &[
    "width",
    "height",
    "initial_columns",
    "initial_lanterns",
    "respawn_period",
    "episode_ticks",
    "action_repeat",
    "view_radius",
];

fn resolve_grid(section: Option<&Section>) -> Result<GridSpec> {
    let mut width = 21usize;
    let mut height = 21usize;
    if let Some(section) = section {
        for key in section.keys() {
            if !GRID_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown key \"{key}\" in section [grid]"
                )));
            }
        }
        if let Some(v) = section.get("width") {
            width = parse_usize("grid", "width", v)?;
        }
        if let Some(v) = section.get("height") {
            height = parse_usize("grid", "height", v)?;
        }
    }
    if !(7..=63).contains(&width) || !(7..=63).contains(&height) {
        return Err(Error::Config(
            "grid width/height must be between 7 and 63".into(),
        ));
    }
    let mut grid = GridSpec::with_size(width, height);
    if let Some(section) = section {
        if let Some(v) = section.get("initial_columns") {
            grid.initial_columns = parse_usize("grid", "initial_columns", v)?;
        }
        if let Some(v) = section.get("initial_lanterns") {
            grid.initial_lanterns = parse_usize("grid", "initial_lanterns", v)?;
        }
        if let Some(v) = section.get("respawn_period") {
            grid.respawn_period = parse_usize("grid", "respawn_period", v)? as u32;
        }
        if let Some(v) = section.get("episode_ticks") {
            grid.episode_ticks = parse_usize("grid", "episode_ticks", v)? as u32;
        }
        if let Some(v) = section.get("action_repeat") {
            grid.action_repeat = parse_usize("grid", "action_repeat", v)? as u32;
        }
        if let Some(v) = section.get("view_radius") {
            grid.view_radius = parse_usize("grid", "view_radius", v)? as u32;
        }
    }
    grid.validate()?;
    Ok(grid)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections = parse_sections(text)?;

    let run = sections
        .remove("run")
        .ok_or_else(|| Error::Config("missing [run] section".into()))?;
    for key in run.keys() {
        if ![
            "scenarios",
            "strategies",
            "seeds",
            "output_dir",
            "parallelism",
            "checkpoint_every",
        ]
        .contains(&key.as_str())
        {
            return Err(Error::Config(format!(
                "unknown key \"{key}\" in section [run]"
            )));
        }
    }
    let scenarios: Vec<ScenarioKind> = parse_list(
        run.get("scenarios")
            .ok_or_else(|| Error::Config("missing required key \"scenarios\" in [run]".into()))?,
    )
    .iter()
    .map(|s| ScenarioKind::parse(s))
    .collect::<Result<_>>()?;
    let strategies: Vec<StrategyKind> = parse_list(
        run.get("strategies")
            .ok_or_else(|| Error::Config("missing required key \"strategies\" in [run]".into()))?,
    )
    .iter()
    .map(|s| StrategyKind::parse(s))
    .collect::<Result<_>>()?;
    let seeds: Vec<u64> = parse_list(
        run.get("seeds")
            .ok_or_else(|| Error::Config("missing required key \"seeds\" in [run]".into()))?,
    )
    .iter()
    .map(|s| parse_u64("run", "seeds", s))
    .collect::<Result<_>>()?;
    if scenarios.is_empty() {
        return Err(Error::Config("scenarios list is empty".into()));
    }
    if strategies.is_empty() {
        return Err(Error::Config("strategies list is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seeds list is empty".into()));
    }
    let mut dedup = seeds.clone();
    dedup.sort_unstable();
    dedup.dedup();
    if dedup.len() != seeds.len() {
        return Err(Error::Config("seeds list contains duplicates".into()));
    }
    let output_dir = PathBuf::from(
        run.get("output_dir")
            .ok_or_else(|| Error::Config("missing required key \"output_dir\" in [run]".into()))?,
    );
    let parallelism = match run.get("parallelism") {
        Some(v) => parse_usize("run", "parallelism", v)?.max(1),
        None => 1,
    };
    let checkpoint_every = match run.get("checkpoint_every") {
        Some(v) => parse_usize("run", "checkpoint_every", v)?.max(1),
        None => 25,
    };

    let grid = resolve_grid(sections.remove("grid").as_ref())?;
    let defaults = sections.remove("defaults");

    // remaining sections must be [scenario] or [scenario.strategy]
    let mut scenario_sections: BTreeMap<ScenarioKind, Section> = BTreeMap::new();
    let mut cell_sections: BTreeMap<(ScenarioKind, StrategyKind), Section> = BTreeMap::new();
    for (name, body) in sections {
        if let Some((s, t)) = name.split_once('.') {
            let scenario = ScenarioKind::parse(s)
                .map_err(|_| Error::Config(format!("unknown section [{name}]")))?;
            let strategy = StrategyKind::parse(t)
                .map_err(|_| Error::Config(format!("unknown section [{name}]")))?;
            cell_sections.insert((scenario, strategy), body);
        } else {
            let scenario = ScenarioKind::parse(&name)
                .map_err(|_| Error::Config(format!("unknown section [{name}]")))?;
            scenario_sections.insert(scenario, body);
        }
    }

    let mut cells = BTreeMap::new();
    for &scenario in &scenarios {
        for &strategy in &strategies {
            let mut draft = HyperDraft::default();
            if let Some(d) = &defaults {
                draft.merge("defaults", d)?;
            }
            if let Some(s) = scenario_sections.get(&scenario) {
                draft.merge(scenario.name(), s)?;
            }
            if let Some(c) = cell_sections.get(&(scenario, strategy)) {
                draft.merge(&format!("{}.{}", scenario.name(), strategy.name()), c)?;
            }
            let hyper = draft.resolve(scenario, strategy)?;
            let cell = CellConfig {
                scenario,
                strategy,
                seed: 0,
                grid: grid.clone(),
                hyper: hyper.clone(),
            };
            cell.validate()?;
            cells.insert((scenario, strategy), hyper);
        }
    }

    Ok(ExperimentConfig {
        scenarios,
        strategies,
        seeds,
        output_dir,
        parallelism,
        checkpoint_every,
        grid,
        cells,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Canonical single-cell config text. Written into run directories (so a
/// run is self-describing) and embedded in checkpoints to detect resume
/// mismatches. The seed rides in the [run] section.
pub fn cell_config_text(cell: &CellConfig) -> String {
    let mut cells = BTreeMap::new();
    cells.insert((cell.scenario, cell.strategy), cell.hyper.clone());
    ExperimentConfig {
        scenarios: vec![cell.scenario],
        strategies: vec![cell.strategy],
        seeds: vec![cell.seed],
        output_dir: PathBuf::from("."),
        parallelism: 1,
        checkpoint_every: 25,
        grid: cell.grid.clone(),
        cells,
    }
    .to_text()
}

/// Parse the text produced by [`cell_config_text`] back into a cell.
pub fn parse_cell_config(text: &str) -> Result<CellConfig> {
    let cfg = parse_config(text)?;
    let mut cells = cfg.cell_configs();
    if cells.len() != 1 {
        return Err(Error::Config(format!(
            "expected a single-cell config, found {} cells",
            cells.len()
        )));
    }
    Ok(cells.remove(0))
}
