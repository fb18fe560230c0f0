//! High-level workflows shared by the CLI and the integration tests:
//! dataset collection across towns and the single-episode rollout.

use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::{record_route, write_route, DatasetError, DatasetManifest, RouteRecord, DATASET_SCHEMA};
use crate::episode::EpisodeLog;
use crate::eval::{run_route, BenchmarkTask, Driver, EpisodeResult};
use crate::town::{generate_town, training_routes, Route, TownMap};

/// Everything needed to roll out one collection route.
struct CollectItem {
    town_index: usize,
    route: Route,
    weather: crate::render::Weather,
}

/// Roll out the expert over every planned route and write the dataset.
/// Routes are recorded independently; with `workers > 1` they run on
/// threads, but records and bytes land in plan order either way.
pub fn collect_dataset(
    run: &RunConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest, DatasetError> {
    std::fs::create_dir_all(out_dir).map_err(|e| DatasetError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;

    let towns: Vec<TownMap> = run
        .collect
        .town_seeds
        .iter()
        .map(|&s| generate_town(s, &run.town_gen))
        .collect();

    let mut items = Vec::new();
    for (ti, town) in towns.iter().enumerate() {
        let routes = training_routes(
            town,
            &run.town_gen,
            run.seed ^ town.seed,
            run.collect.routes_per_town,
        );
        for (ri, route) in routes.into_iter().enumerate() {
            let weather = run.collect.weathers[(ti + ri) % run.collect.weathers.len()];
            items.push(CollectItem {
                town_index: ti,
                route,
                weather,
            });
        }
    }

    let record_one = |item: &CollectItem| {
        record_route(
            &towns[item.town_index],
            &item.route,
            &run.sim,
            &run.expert,
            item.weather,
            run.seed,
            run.collect.max_route_seconds,
        )
    };

    let mut records: Vec<RouteRecord> = Vec::with_capacity(items.len());
    if workers <= 1 {
        for item in &items {
            let rollout = record_one(item);
            write_route(out_dir, &rollout)?;
            records.push(rollout.record);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<RouteRecord, DatasetError>>>> =
            (0..items.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(items.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= items.len() {
                        break;
                    }
                    let rollout = record_one(&items[i]);
                    let res = write_route(out_dir, &rollout).map(|_| rollout.record);
                    *slots[i].lock().unwrap() = Some(res);
                });
            }
        });
        for slot in slots {
            records.push(slot.into_inner().unwrap().expect("slot filled")?);
        }
    }

    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        seed: run.seed,
        fingerprint: run.fingerprint(),
        total_frames: records.iter().map(|r| r.frames).sum(),
        routes: records,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// One closed-loop rollout with a full episode log.
pub fn run_single_episode<D: Driver>(
    run: &RunConfig,
    task: &BenchmarkTask,
    driver: &mut D,
) -> (EpisodeResult, EpisodeLog) {
    run_route(
        task,
        driver,
        &run.sim,
        &run.eval,
        &run.penalties,
        run.seed,
        &run.fingerprint(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CollectPlan;
    use crate::render::Weather;

    #[test]
    fn tiny_collection_end_to_end() {
        let mut run = RunConfig::default();
        run.collect = CollectPlan {
            town_seeds: vec![55],
            routes_per_town: 2,
            max_route_seconds: 40.0,
            weathers: vec![Weather::ClearNoon, Weather::RainyNoon],
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = collect_dataset(&run, dir.path(), 1).unwrap();
        assert_eq!(manifest.routes.len(), 2);
        assert!(manifest.total_frames > 20);
        assert_eq!(manifest.schema, DATASET_SCHEMA);

        // the manifest written to disk reads back identically
        let back = DatasetManifest::read(dir.path()).unwrap();
        assert_eq!(back.total_frames, manifest.total_frames);
        assert_eq!(back.fingerprint, run.fingerprint());

        // deterministic bytes across reruns
        let dir2 = tempfile::tempdir().unwrap();
        let manifest2 = collect_dataset(&run, dir2.path(), 1).unwrap();
        assert_eq!(manifest.total_frames, manifest2.total_frames);
        let f1 = std::fs::read(dir.path().join("route_train_55_0/frame_5.center.ppm")).unwrap();
        let f2 = std::fs::read(dir2.path().join("route_train_55_0/frame_5.center.ppm")).unwrap();
        assert_eq!(f1, f2);
        let m1 = std::fs::read(dir.path().join("manifest.json")).unwrap();
        let m2 = std::fs::read(dir2.path().join("manifest.json")).unwrap();
        assert_eq!(m1, m2);
    }
}
