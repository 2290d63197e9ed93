//! On-disk formats: JSONL frame datasets, JSON map snapshots and JSONL
//! traversal logs.
//!
//! A dataset holds one record per frame. Traversal 0 is the teaching run and
//! must contain exactly one frame per location, in location order; later
//! traversals are replayed in file order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::map::{Feature, PathMap, DEFAULT_SPACING_M};
use crate::navigator::{open_loop_frames, Navigator, OffsetSchedule, Schedule, TraversalLog};
use crate::registration::RegistrationConfig;
use crate::simulator::{generate_world, teach_path, Frame, WorldConfig};
use crate::strategy::StrategyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureRecord {
    x: f64,
    y: f64,
    d: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    traversal: u32,
    location: usize,
    time_s: f64,
    gamma_px: f64,
    features: Vec<FeatureRecord>,
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> Self {
        FrameRecord {
            traversal: f.traversal,
            location: f.location,
            time_s: f.time,
            gamma_px: f.gamma,
            features: f
                .features
                .iter()
                .map(|x| FeatureRecord {
                    x: x.x,
                    y: x.y,
                    d: x.descriptor.clone(),
                })
                .collect(),
        }
    }
}

impl From<FrameRecord> for Frame {
    fn from(r: FrameRecord) -> Self {
        Frame {
            traversal: r.traversal,
            location: r.location,
            time: r.time_s,
            gamma: r.gamma_px,
            features: r.features.into_iter().map(|f| Feature::new(f.x, f.y, f.d)).collect(),
        }
    }
}

/// Replay parameters a dataset does not carry itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayOptions {
    pub image_width: f64,
    pub teach_cap: usize,
    pub px_per_m: f64,
    pub spacing_m: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        let w = WorldConfig::default();
        ReplayOptions {
            image_width: w.image_width,
            teach_cap: w.teach_cap,
            px_per_m: w.px_per_m,
            spacing_m: DEFAULT_SPACING_M,
        }
    }
}

impl ReplayOptions {
    pub fn from_world(w: &WorldConfig) -> Self {
        ReplayOptions {
            image_width: w.image_width,
            teach_cap: w.teach_cap,
            px_per_m: w.px_per_m,
            spacing_m: w.spacing_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut frames = Vec::new();
        let mut width = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidInput(format!("dataset line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: FrameRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("dataset line {}: {e}", n + 1)))?;
            for f in &record.features {
                match width {
                    None => width = Some(f.d.width()),
                    Some(w) if w != f.d.width() => {
                        return Err(Error::WidthMismatch {
                            left: w,
                            right: f.d.width(),
                        })
                    }
                    Some(_) => {}
                }
            }
            frames.push(record.into());
        }
        Ok(Dataset { frames })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&serde_json::to_string(&FrameRecord::from(f)).expect("frames serialise"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl().as_bytes())
    }

    /// SHA-256 of the JSONL encoding.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn descriptor_width(&self) -> Option<usize> {
        self.frames
            .iter()
            .flat_map(|f| f.features.first())
            .map(|f| f.descriptor.width())
            .next()
    }

    pub fn teach_frames(&self) -> Vec<Frame> {
        self.frames.iter().filter(|f| f.traversal == 0).cloned().collect()
    }

    /// Repeat frames grouped by traversal, each group in file order.
    pub fn traversals(&self) -> BTreeMap<u32, Vec<&Frame>> {
        let mut out: BTreeMap<u32, Vec<&Frame>> = BTreeMap::new();
        for f in self.frames.iter().filter(|f| f.traversal > 0) {
            out.entry(f.traversal).or_default().push(f);
        }
        out
    }

    pub fn teach_map(&self, opts: &ReplayOptions) -> Result<PathMap> {
        let teach = self.teach_frames();
        if teach.is_empty() {
            return Err(Error::Teach("dataset has no traversal-0 frames".into()));
        }
        let width = self.descriptor_width().unwrap_or(crate::descriptor::DEFAULT_WIDTH);
        teach_path(teach, opts.teach_cap, opts.spacing_m, opts.image_width, width)
    }

    /// SHA-256 over the repeat frames in replay order, comparable with the
    /// stream hash of an open-loop simulation.
    pub fn stream_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for frames in self.traversals().values() {
            for f in frames {
                f.hash_into(&mut hasher);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Replays every repeat traversal through one strategy. `map` overrides
    /// the map taught from traversal 0.
    pub fn replay(
        &self,
        strategy: &StrategyConfig,
        registration: &RegistrationConfig,
        map: Option<PathMap>,
        opts: &ReplayOptions,
    ) -> Result<Vec<TraversalLog>> {
        let map = match map {
            Some(m) => m,
            None => self.teach_map(opts)?,
        };
        let mut nav = Navigator::new(map, strategy.clone(), registration.clone())?;
        self.traversals()
            .into_iter()
            .map(|(k, frames)| {
                let owned: Vec<Frame> = frames.into_iter().cloned().collect();
                let t = owned.first().map_or(0.0, |f| f.time);
                nav.replay(k, t, &owned, opts.px_per_m)
            })
            .collect()
    }

    /// Replays all strategies on the same frames, returning their logs and
    /// the stream hash.
    pub fn replay_all(
        &self,
        strategies: &[StrategyConfig],
        registration: &RegistrationConfig,
        opts: &ReplayOptions,
    ) -> Result<(Vec<Vec<TraversalLog>>, String)> {
        let map = self.teach_map(opts)?;
        let logs = strategies
            .par_iter()
            .map(|s| self.replay(s, registration, Some(map.clone()), opts))
            .collect::<Result<Vec<_>>>()?;
        Ok((logs, self.stream_hash()))
    }
}

/// Simulates an open-loop run's frames: the teach frames as traversal 0 and
/// then every scheduled traversal.
pub fn generate_dataset(
    world_cfg: &WorldConfig,
    schedule: &Schedule,
    offsets: &OffsetSchedule,
    run_seed: u64,
) -> Result<(Dataset, PathMap)> {
    schedule.validate()?;
    let mut world = generate_world(world_cfg)?;
    let mut frames = world.teach_frames(schedule.start_s);
    let map = world.teach(schedule.start_s)?;
    for k in 1..=schedule.traversals {
        world.advance_turnover();
        frames.extend(open_loop_frames(&world, k, schedule.time_of(k), offsets, run_seed));
    }
    Ok((Dataset { frames }, map))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_map(path: &Path, map: &PathMap) -> Result<()> {
    let json = serde_json::to_string_pretty(map).map_err(|e| Error::json("map snapshot", e))?;
    write_file(path, (json + "\n").as_bytes())
}

pub fn read_map(path: &Path) -> Result<PathMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: PathMap = serde_json::from_str(&text).map_err(|e| Error::json("map snapshot", e))?;
    // re-run construction checks on the decoded maps
    PathMap::new(map.local_maps, map.image_width, map.descriptor_width, map.taught_at)
}

pub fn logs_to_jsonl(logs: &[TraversalLog]) -> String {
    let mut out = String::new();
    for l in logs {
        out.push_str(&serde_json::to_string(l).expect("logs serialise"));
        out.push('\n');
    }
    out
}

pub fn write_logs(path: &Path, logs: &[TraversalLog]) -> Result<()> {
    write_file(path, logs_to_jsonl(logs).as_bytes())
}

/// Reads a log file; lines of several strategies are grouped by strategy in
/// order of first appearance.
pub fn read_logs(path: &Path) -> Result<Vec<(String, Vec<TraversalLog>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut groups: Vec<(String, Vec<TraversalLog>)> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let log: TraversalLog = serde_json::from_str(line)
            .map_err(|e| Error::InvalidInput(format!("{} line {}: {e}", path.display(), n + 1)))?;
        match groups.iter_mut().find(|(s, _)| *s == log.strategy) {
            Some((_, v)) => v.push(log),
            None => groups.push((log.strategy.clone(), vec![log])),
        }
    }
    Ok(groups)
}
