//! Map variants and the episode schedule.
//!
//! A scenario is a family of three stationary map variants (M1, M2, M3) that
//! differ in exactly one appearance factor — light, wall texture, or object
//! appearance — or in all three at once. The underlying task dynamics are
//! identical across variants; only the rendered observation changes.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Light,
    Texture,
    Object,
    All,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Light,
        ScenarioKind::Texture,
        ScenarioKind::Object,
        ScenarioKind::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Light => "light",
            ScenarioKind::Texture => "texture",
            ScenarioKind::Object => "object",
            ScenarioKind::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(ScenarioKind::Light),
            "texture" => Ok(ScenarioKind::Texture),
            "object" => Ok(ScenarioKind::Object),
            "all" => Ok(ScenarioKind::All),
            other => Err(Error::Config(format!(
                "unknown scenario kind \"{other}\" (expected light, texture, object or all)"
            ))),
        }
    }
}

/// One stationary environmental condition.
///
/// `map_index` is 1-based (M1..M3). Appearance slots index the observation's
/// one-hot object channels; a variant assigns one slot to columns and a
/// different one to lanterns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapVariant {
    pub scenario_kind: ScenarioKind,
    pub map_index: u8,
    pub wall_texture_value: f64,
    pub column_appearance_slot: usize,
    pub lantern_appearance_slot: usize,
    pub visibility_radius: u32,
    pub light_intensity: f64,
}

/// Per-map light parameters (visibility radius, intensity).
pub const LIGHT_LEVELS: [(u32, f64); 3] = [(3, 1.0), (2, 0.5), (1, 0.15)];
/// Per-map wall texture channel values.
pub const WALL_TEXTURES: [f64; 3] = [0.25, 0.6, 0.95];
/// Per-map (column, lantern) appearance slots.
pub const APPEARANCE_SLOTS: [(usize, usize); 3] = [(0, 1), (2, 3), (4, 5)];

impl MapVariant {
    pub fn validate(&self) -> Result<()> {
        if self.column_appearance_slot == self.lantern_appearance_slot {
            return Err(Error::Config(
                "column and lantern appearance slots must differ".into(),
            ));
        }
        if self.column_appearance_slot >= crate::env::N_APPEARANCE_SLOTS
            || self.lantern_appearance_slot >= crate::env::N_APPEARANCE_SLOTS
        {
            return Err(Error::Config(format!(
                "appearance slots must be < {}",
                crate::env::N_APPEARANCE_SLOTS
            )));
        }
        if !(1..=3).contains(&self.map_index) {
            return Err(Error::Config("map_index must be in 1..=3".into()));
        }
        Ok(())
    }
}

/// Variant i of `all` is the channel-wise composition of the light, texture
/// and object variants with the same index.
pub fn compose(light: &MapVariant, texture: &MapVariant, object: &MapVariant) -> MapVariant {
    MapVariant {
        scenario_kind: ScenarioKind::All,
        map_index: light.map_index,
        wall_texture_value: texture.wall_texture_value,
        column_appearance_slot: object.column_appearance_slot,
        lantern_appearance_slot: object.lantern_appearance_slot,
        visibility_radius: light.visibility_radius,
        light_intensity: light.light_intensity,
    }
}

/// The three variants of a scenario. For light/texture/object, only that
/// family of fields differs across the result; the other families stay at
/// their M1 baseline.
pub fn build_scenario(kind: ScenarioKind) -> [MapVariant; 3] {
    let make = |i: usize| {
        let base = MapVariant {
            scenario_kind: kind,
            map_index: (i + 1) as u8,
            wall_texture_value: WALL_TEXTURES[0],
            column_appearance_slot: APPEARANCE_SLOTS[0].0,
            lantern_appearance_slot: APPEARANCE_SLOTS[0].1,
            visibility_radius: LIGHT_LEVELS[0].0,
            light_intensity: LIGHT_LEVELS[0].1,
        };
        match kind {
            ScenarioKind::Light => MapVariant {
                visibility_radius: LIGHT_LEVELS[i].0,
                light_intensity: LIGHT_LEVELS[i].1,
                ..base
            },
            ScenarioKind::Texture => MapVariant {
                wall_texture_value: WALL_TEXTURES[i],
                ..base
            },
            ScenarioKind::Object => MapVariant {
                column_appearance_slot: APPEARANCE_SLOTS[i].0,
                lantern_appearance_slot: APPEARANCE_SLOTS[i].1,
                ..base
            },
            ScenarioKind::All => MapVariant {
                wall_texture_value: WALL_TEXTURES[i],
                column_appearance_slot: APPEARANCE_SLOTS[i].0,
                lantern_appearance_slot: APPEARANCE_SLOTS[i].1,
                visibility_radius: LIGHT_LEVELS[i].0,
                light_intensity: LIGHT_LEVELS[i].1,
                ..base
            },
        }
    };
    [make(0), make(1), make(2)]
}

/// Equal-thirds training schedule over the three maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub episodes_per_map: usize,
    pub n_maps: usize,
}

impl Schedule {
    pub fn new(episodes_per_map: usize) -> Self {
        Schedule {
            episodes_per_map,
            n_maps: 3,
        }
    }

    pub fn total_episodes(&self) -> usize {
        self.episodes_per_map * self.n_maps
    }
}

/// 1-based index of the map active at `episode_index`. Changes occur exactly
/// at episode indices `episodes_per_map` and `2 * episodes_per_map`.
pub fn active_map(schedule: &Schedule, episode_index: usize) -> Result<u8> {
    if episode_index >= schedule.total_episodes() {
        return Err(Error::Contract(format!(
            "episode index {episode_index} out of range (total {})",
            schedule.total_episodes()
        )));
    }
    Ok((episode_index / schedule.episodes_per_map + 1) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_scenario_varies_only_wall_texture() {
        let vs = build_scenario(ScenarioKind::Texture);
        assert_eq!(vs[0].wall_texture_value, 0.25);
        assert_eq!(vs[1].wall_texture_value, 0.6);
        assert_eq!(vs[2].wall_texture_value, 0.95);
        for v in &vs {
            assert_eq!(v.visibility_radius, 3);
            assert_eq!(v.light_intensity, 1.0);
            assert_eq!(v.column_appearance_slot, 0);
            assert_eq!(v.lantern_appearance_slot, 1);
        }
    }

    #[test]
    fn light_scenario_visibility_radii() {
        let vs = build_scenario(ScenarioKind::Light);
        assert_eq!(
            [
                vs[0].visibility_radius,
                vs[1].visibility_radius,
                vs[2].visibility_radius
            ],
            [3, 2, 1]
        );
    }

    #[test]
    fn all_is_composition_of_single_factor_variants() {
        let light = build_scenario(ScenarioKind::Light);
        let texture = build_scenario(ScenarioKind::Texture);
        let object = build_scenario(ScenarioKind::Object);
        let all = build_scenario(ScenarioKind::All);
        for i in 0..3 {
            assert_eq!(all[i], compose(&light[i], &texture[i], &object[i]));
        }
    }

    #[test]
    fn slots_are_distinct_and_in_range() {
        for kind in ScenarioKind::ALL {
            for v in build_scenario(kind) {
                v.validate().unwrap();
            }
        }
    }

    #[test]
    fn active_map_boundaries() {
        let s = Schedule::new(300);
        assert_eq!(active_map(&s, 0).unwrap(), 1);
        assert_eq!(active_map(&s, 299).unwrap(), 1);
        assert_eq!(active_map(&s, 300).unwrap(), 2);
        assert_eq!(active_map(&s, 599).unwrap(), 2);
        assert_eq!(active_map(&s, 600).unwrap(), 3);
        let s = Schedule::new(500);
        assert_eq!(active_map(&s, 1499).unwrap(), 3);
        assert!(active_map(&s, 1500).is_err());
    }

    #[test]
    fn active_map_is_non_decreasing_and_balanced() {
        let s = Schedule::new(17);
        let mut counts = [0usize; 3];
        let mut prev = 0u8;
        for e in 0..s.total_episodes() {
            let m = active_map(&s, e).unwrap();
            assert!(m >= prev);
            prev = m;
            counts[(m - 1) as usize] += 1;
        }
        assert_eq!(counts, [17, 17, 17]);
    }
}
