//! Grid-maze object-picking environment.
//!
//! The agent navigates a walled grid, collecting columns (+100) while
//! avoiding lanterns (-200), with a small shaping bonus (+0.7) whenever the
//! forward action is chosen. One decision holds an action for
//! `action_repeat` ticks; episodes run a fixed `episode_ticks` ticks.
//! Dynamics are independent of the active [`MapVariant`]: the variant only
//! affects how the state is rendered into an observation.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::MapVariant;

/// Number of one-hot appearance channels in the observation.
pub const N_APPEARANCE_SLOTS: usize = 6;
/// wall texture + appearance slots + light level
pub const OBS_CHANNELS: usize = 2 + N_APPEARANCE_SLOTS;

pub const REWARD_COLUMN: f64 = 100.0;
pub const REWARD_LANTERN: f64 = -200.0;
pub const REWARD_FORWARD_SHAPING: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    TurnLeft,
    TurnRight,
    MoveForward,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::MoveForward];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action index {i} out of range 0..3")))
    }

    pub fn index(self) -> usize {
        match self {
            Action::TurnLeft => 0,
            Action::TurnRight => 1,
            Action::MoveForward => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn from_index(i: usize) -> Heading {
        [Heading::North, Heading::East, Heading::South, Heading::West][i % 4]
    }

    pub fn index(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    /// Unit step, y grows downward.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ObjectClass {
    Column,
    Lantern,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    ColumnPickup,
    LanternHit,
    WallBump,
}

/// Static geometry and episode mechanics of the grid world.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major wall mask, `width * height` entries.
    pub wall_mask: Vec<bool>,
    pub spawn_points: Vec<(i32, i32)>,
    pub initial_columns: usize,
    pub initial_lanterns: usize,
    /// A column and a lantern respawn every this many ticks, while below the
    /// initial count of their class.
    pub respawn_period: u32,
    pub episode_ticks: u32,
    pub action_repeat: u32,
    pub view_radius: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::with_size(21, 21)
    }
}

impl GridSpec {
    /// The standard maze at the given size: fully walled border, interior
    /// pillars every 6 cells, spawn points at the corners and edge midpoints.
    pub fn with_size(width: usize, height: usize) -> GridSpec {
        assert!(width >= 7 && height >= 7, "grid must be at least 7x7");
        let mut wall_mask = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
                let pillar = x % 6 == 3 && y % 6 == 3;
                if border || pillar {
                    wall_mask[y * width + x] = true;
                }
            }
        }
        let (w, h) = (width as i32, height as i32);
        let mut spawn_points = Vec::new();
        for &(x, y) in &[
            (2, 2),
            (w / 2, 2),
            (w - 3, 2),
            (2, h / 2),
            (w - 3, h / 2),
            (2, h - 3),
            (w / 2, h - 3),
            (w - 3, h - 3),
        ] {
            if !wall_mask[y as usize * width + x as usize] && !spawn_points.contains(&(x, y)) {
                spawn_points.push((x, y));
            }
        }
        GridSpec {
            width,
            height,
            wall_mask,
            spawn_points,
            initial_columns: 15,
            initial_lanterns: 10,
            respawn_period: 12,
            episode_ticks: 1000,
            action_repeat: 4,
            view_radius: 3,
        }
    }

    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return true;
        }
        self.wall_mask[y as usize * self.width + x as usize]
    }

    pub fn free_cell_count(&self) -> usize {
        self.wall_mask.iter().filter(|w| !**w).count()
    }

    pub fn window(&self) -> usize {
        (2 * self.view_radius + 1) as usize
    }

    pub fn observation_len(&self) -> usize {
        OBS_CHANNELS * self.window() * self.window()
    }

    pub fn decisions_per_episode(&self) -> usize {
        (self.episode_ticks / self.action_repeat) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::Config("grid must be at least 3x3".into()));
        }
        if self.wall_mask.len() != self.width * self.height {
            return Err(Error::Config("wall_mask length mismatch".into()));
        }
        for x in 0..self.width as i32 {
            if !self.is_wall(x, 0) || !self.is_wall(x, self.height as i32 - 1) {
                return Err(Error::Config("grid border must be fully walled".into()));
            }
        }
        for y in 0..self.height as i32 {
            if !self.is_wall(0, y) || !self.is_wall(self.width as i32 - 1, y) {
                return Err(Error::Config("grid border must be fully walled".into()));
            }
        }
        if self.spawn_points.is_empty() {
            return Err(Error::Config("at least one spawn point required".into()));
        }
        for &(x, y) in &self.spawn_points {
            if self.is_wall(x, y) {
                return Err(Error::Config(format!(
                    "spawn point ({x}, {y}) is a wall or out of bounds"
                )));
            }
        }
        if self.action_repeat == 0 || self.episode_ticks % self.action_repeat != 0 {
            return Err(Error::Config(
                "episode_ticks must be a positive multiple of action_repeat".into(),
            ));
        }
        if self.respawn_period == 0 {
            return Err(Error::Config("respawn_period must be positive".into()));
        }
        if self.view_radius == 0 {
            return Err(Error::Config("view_radius must be positive".into()));
        }
        if self.free_cell_count() < self.initial_columns + self.initial_lanterns + 1 {
            return Err(Error::Config(format!(
                "{} free cells cannot hold {} objects plus the agent",
                self.free_cell_count(),
                self.initial_columns + self.initial_lanterns
            )));
        }
        Ok(())
    }
}

/// Full dynamic state of one environment. A pure value: stepping it twice
/// from the same state with the same inputs yields bit-identical results.
#[derive(Clone, Debug)]
pub struct EnvState {
    pub agent_pos: (i32, i32),
    pub agent_heading: Heading,
    /// BTreeMap keeps object iteration order deterministic.
    pub objects: BTreeMap<(i32, i32), ObjectClass>,
    pub tick: u32,
    pub rng: ChaCha8Rng,
    pub cumulative_reward: f64,
    columns_present: usize,
    lanterns_present: usize,
}

impl EnvState {
    pub fn done(&self, spec: &GridSpec) -> bool {
        self.tick >= spec.episode_ticks
    }

    pub fn count(&self, class: ObjectClass) -> usize {
        match class {
            ObjectClass::Column => self.columns_present,
            ObjectClass::Lantern => self.lanterns_present,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
}

fn free_cells_excluding(
    spec: &GridSpec,
    objects: &BTreeMap<(i32, i32), ObjectClass>,
    agent: (i32, i32),
) -> Vec<(i32, i32)> {
    let mut cells = Vec::new();
    for y in 0..spec.height as i32 {
        for x in 0..spec.width as i32 {
            if !spec.is_wall(x, y) && (x, y) != agent && !objects.contains_key(&(x, y)) {
                cells.push((x, y));
            }
        }
    }
    cells
}

/// Spawn a fresh episode: agent on a random spawn point with a random
/// heading, objects placed uniformly at random on free cells.
pub fn reset(spec: &GridSpec, variant: &MapVariant, seed: u64) -> Result<(EnvState, Vec<f64>)> {
    spec.validate()?;
    variant.validate()?;
    let mut rng = rng::seeded_rng(seed);

    let spawn = spec.spawn_points[rng::uniform_usize(&mut rng, spec.spawn_points.len())];
    let heading = Heading::from_index((rng.next_u32() % 4) as usize);

    let mut objects = BTreeMap::new();
    let mut free = free_cells_excluding(spec, &objects, spawn);
    let need = spec.initial_columns + spec.initial_lanterns;
    // validate() already guarantees capacity; keep the runtime check anyway
    if free.len() < need {
        return Err(Error::Config(format!(
            "{} free cells cannot hold {} objects",
            free.len(),
            need
        )));
    }
    // partial Fisher-Yates: draw `need` distinct cells
    for i in 0..need {
        let j = i + rng::uniform_usize(&mut rng, free.len() - i);
        free.swap(i, j);
        let class = if i < spec.initial_columns {
            ObjectClass::Column
        } else {
            ObjectClass::Lantern
        };
        objects.insert(free[i], class);
    }

    let state = EnvState {
        agent_pos: spawn,
        agent_heading: heading,
        objects,
        tick: 0,
        rng,
        cumulative_reward: 0.0,
        columns_present: spec.initial_columns,
        lanterns_present: spec.initial_lanterns,
    };
    let obs = render_observation(spec, &state, variant);
    Ok((state, obs))
}

fn respawn_one(spec: &GridSpec, state: &mut EnvState, class: ObjectClass) {
    let below_cap = match class {
        ObjectClass::Column => state.columns_present < spec.initial_columns,
        ObjectClass::Lantern => state.lanterns_present < spec.initial_lanterns,
    };
    if !below_cap {
        return;
    }
    let free = free_cells_excluding(spec, &state.objects, state.agent_pos);
    if free.is_empty() {
        return;
    }
    let cell = free[rng::uniform_usize(&mut state.rng, free.len())];
    state.objects.insert(cell, class);
    match class {
        ObjectClass::Column => state.columns_present += 1,
        ObjectClass::Lantern => state.lanterns_present += 1,
    }
}

/// Advance one decision: the action is held for `action_repeat` ticks. Turns
/// rotate 90 degrees on the first tick only (repeating a quarter turn four
/// times would cancel out); forward moves one cell per tick unless walled.
pub fn step(
    spec: &GridSpec,
    state: &mut EnvState,
    action: Action,
    variant: &MapVariant,
) -> Result<StepResult> {
    if state.done(spec) {
        return Err(Error::Contract("step called on a finished episode".into()));
    }
    let mut reward = 0.0;
    let mut events = Vec::new();
    if action == Action::MoveForward {
        reward += REWARD_FORWARD_SHAPING;
    }
    for tick_in_decision in 0..spec.action_repeat {
        match action {
            Action::TurnLeft if tick_in_decision == 0 => {
                state.agent_heading = state.agent_heading.left();
            }
            Action::TurnRight if tick_in_decision == 0 => {
                state.agent_heading = state.agent_heading.right();
            }
            Action::MoveForward => {
                let (dx, dy) = state.agent_heading.delta();
                let target = (state.agent_pos.0 + dx, state.agent_pos.1 + dy);
                if spec.is_wall(target.0, target.1) {
                    events.push(Event::WallBump);
                } else {
                    state.agent_pos = target;
                    if let Some(class) = state.objects.remove(&target) {
                        match class {
                            ObjectClass::Column => {
                                reward += REWARD_COLUMN;
                                state.columns_present -= 1;
                                events.push(Event::ColumnPickup);
                            }
                            ObjectClass::Lantern => {
                                reward += REWARD_LANTERN;
                                state.lanterns_present -= 1;
                                events.push(Event::LanternHit);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        state.tick += 1;
        if state.tick % spec.respawn_period == 0 {
            respawn_one(spec, state, ObjectClass::Column);
            respawn_one(spec, state, ObjectClass::Lantern);
        }
    }
    state.cumulative_reward += reward;
    let done = state.done(spec);
    let observation = render_observation(spec, state, variant);
    Ok(StepResult {
        observation,
        reward,
        done,
        events,
    })
}

/// Egocentric observation: a `(channels, window, window)` tensor flattened
/// row-major, rotated so the agent faces the top row. Channel 0 holds the
/// variant's wall texture on wall cells, channels 1..=6 are the one-hot
/// object appearance slots, channel 7 is the light level. All channels are
/// scaled by the variant's light intensity, and cells beyond its visibility
/// radius (Chebyshev) are exactly zero.
pub fn render_observation(spec: &GridSpec, state: &EnvState, variant: &MapVariant) -> Vec<f64> {
    let window = spec.window();
    let radius = spec.view_radius as i32;
    let mut obs = vec![0.0; spec.observation_len()];
    let (fx, fy) = state.agent_heading.delta();
    let (rx, ry) = state.agent_heading.right().delta();
    let cell_area = window * window;
    for row in 0..window as i32 {
        let forward = radius - row;
        for col in 0..window as i32 {
            let lateral = col - radius;
            if forward.abs().max(lateral.abs()) > variant.visibility_radius as i32 {
                continue;
            }
            let wx = state.agent_pos.0 + forward * fx + lateral * rx;
            let wy = state.agent_pos.1 + forward * fy + lateral * ry;
            let at = (row as usize) * window + col as usize;
            if spec.is_wall(wx, wy) {
                obs[at] = variant.wall_texture_value * variant.light_intensity;
            } else if let Some(class) = state.objects.get(&(wx, wy)) {
                let slot = match class {
                    ObjectClass::Column => variant.column_appearance_slot,
                    ObjectClass::Lantern => variant.lantern_appearance_slot,
                };
                obs[(1 + slot) * cell_area + at] = variant.light_intensity;
            }
            obs[(OBS_CHANNELS - 1) * cell_area + at] = variant.light_intensity;
        }
    }
    obs
}
