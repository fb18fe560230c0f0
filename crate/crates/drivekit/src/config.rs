//! Run configuration: one JSON-serializable document collecting every
//! tunable, with a content-hash fingerprint embedded in all output
//! artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::dataset::AugmentConfig;
use crate::eval::{EvalConfig, PenaltyTable};
use crate::expert::ExpertConfig;
use crate::perception::EncoderConfig;
use crate::render::Weather;
use crate::sim::SimConfig;
use crate::town::TownGenConfig;
use crate::train::TrainConfig;
use crate::util::fnv1a64;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectPlan {
    pub town_seeds: Vec<u64>,
    pub routes_per_town: usize,
    pub max_route_seconds: f64,
    /// Weather presets cycled per route.
    pub weathers: Vec<Weather>,
}

impl Default for CollectPlan {
    fn default() -> Self {
        CollectPlan {
            town_seeds: vec![101, 102, 103],
            routes_per_town: 10,
            max_route_seconds: 90.0,
            weathers: Weather::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Held-out town used for evaluation presets.
    pub eval_town_seed: u64,
    pub encoder: EncoderConfig,
    pub sim: SimConfig,
    pub town_gen: TownGenConfig,
    pub expert: ExpertConfig,
    pub controller: ControllerConfig,
    pub penalties: PenaltyTable,
    pub eval: EvalConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub collect: CollectPlan,
    /// Weather used for closed-loop evaluation.
    pub eval_weather: Weather,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            eval_town_seed: 900,
            encoder: EncoderConfig::default(),
            sim: SimConfig::default(),
            town_gen: TownGenConfig::default(),
            expert: ExpertConfig::default(),
            controller: ControllerConfig::default(),
            penalties: PenaltyTable::default(),
            eval: EvalConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            collect: CollectPlan::default(),
            eval_weather: Weather::ClearNoon,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("parse {}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Content hash over the canonical JSON form, reproducible across runs.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// Benchmark tasks for a named evaluation preset, built on the held-out
/// evaluation town.
pub fn preset_tasks(
    run: &RunConfig,
    preset: &str,
) -> Result<Vec<crate::eval::BenchmarkTask>, String> {
    let town = crate::town::generate_town(run.eval_town_seed, &run.town_gen);
    let routes = match preset {
        "desk-tiny" => crate::town::tiny_routes(&town, &run.town_gen, run.seed),
        "desk-short" => crate::town::short_routes(&town, &run.town_gen, run.seed, 5),
        "desk-long" => crate::town::long_routes(&town, &run.town_gen, run.seed, 3),
        other => {
            return Err(format!(
                "unknown preset {other:?}; expected desk-tiny, desk-short or desk-long"
            ))
        }
    };
    if routes.is_empty() {
        return Err(format!("preset {preset} produced no routes"));
    }
    Ok(routes
        .into_iter()
        .map(|route| crate::eval::BenchmarkTask {
            town: town.clone(),
            route,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_produce_routes() {
        let run = RunConfig::default();
        for preset in ["desk-tiny", "desk-short", "desk-long"] {
            let tasks = preset_tasks(&run, preset).unwrap();
            assert!(!tasks.is_empty(), "{preset} is empty");
            for t in &tasks {
                assert!(t.route.length() > 40.0);
            }
        }
        assert!(preset_tasks(&run, "bogus").is_err());
    }

    #[test]
    fn long_preset_spans_multiple_intersections() {
        let run = RunConfig::default();
        let tasks = preset_tasks(&run, "desk-long").unwrap();
        for t in &tasks {
            assert!(
                t.route.length() > 200.0,
                "long route only {:.0} m",
                t.route.length()
            );
            assert!(t.route.spec.commands.len() >= 5);
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 99;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.encoder.patch_size, 4);
    }

    #[test]
    fn roundtrip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }
}
