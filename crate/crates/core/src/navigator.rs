//! The repeat phase: localise each frame against its local map, apply the
//! map-update strategy, and log registration results per traversal.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::map::PathMap;
use crate::registration::{MatchOutcome, RegistrationConfig};
use crate::simulator::{generate_world, stream_rng, Frame, World, WorldConfig};
use crate::strategy::{self, StrategyConfig};

const STREAM_OBSERVE: u64 = 10;
const STREAM_ODOMETRY: u64 = 11;
const STREAM_OFFSET: u64 = 12;

/// One frame's registration outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalRecord {
    pub location: usize,
    pub time_s: f64,
    /// `None` when registration failed.
    pub delta_px: Option<f64>,
    pub gamma_px: f64,
    pub correct: usize,
    pub incorrect: usize,
    pub not_matched: usize,
    pub active: usize,
    /// Feature count of the local map (all experiences) after the update.
    pub map_size: usize,
    pub experience: usize,
    /// Lateral offset of the robot when the frame was taken.
    pub offset_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalLog {
    pub strategy: String,
    pub traversal: u32,
    pub time_s: f64,
    pub records: Vec<TraversalRecord>,
}

/// Traversal timing: teaching at `start_s`, traversal `k >= 1` at
/// `start_s + k * interval_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub traversals: u32,
    pub interval_s: f64,
    pub start_s: f64,
}

impl Default for Schedule {
    /// 178 traversals spread over 90 days, taught at noon.
    fn default() -> Self {
        Schedule {
            traversals: 178,
            interval_s: 90.0 * 86_400.0 / 178.0,
            start_s: 43_200.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.traversals == 0 {
            return Err(Error::Config("schedule needs at least one traversal".into()));
        }
        if !(self.interval_s.is_finite() && self.interval_s > 0.0 && self.start_s.is_finite()) {
            return Err(Error::Config("schedule interval must be positive".into()));
        }
        Ok(())
    }

    pub fn time_of(&self, traversal: u32) -> f64 {
        self.start_s + traversal as f64 * self.interval_s
    }
}

/// Ground-truth lateral offsets for open-loop runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OffsetSchedule {
    Zero,
    /// Independent uniform draw in `[-amplitude_m, amplitude_m]` per frame.
    Uniform { amplitude_m: f64 },
    /// Offset per location, repeated on every traversal.
    Explicit { offsets_m: Vec<f64> },
}

impl Default for OffsetSchedule {
    fn default() -> Self {
        OffsetSchedule::Uniform { amplitude_m: 0.25 }
    }
}

impl OffsetSchedule {
    pub fn offset(&self, run_seed: u64, traversal: u32, location: usize) -> f64 {
        match self {
            OffsetSchedule::Zero => 0.0,
            OffsetSchedule::Uniform { amplitude_m } if *amplitude_m > 0.0 => {
                let mut rng = stream_rng(run_seed, &[STREAM_OFFSET, traversal as u64, location as u64]);
                rng.gen_range(-amplitude_m..=*amplitude_m)
            }
            OffsetSchedule::Uniform { .. } => 0.0,
            OffsetSchedule::Explicit { offsets_m } if offsets_m.is_empty() => 0.0,
            OffsetSchedule::Explicit { offsets_m } => offsets_m[location % offsets_m.len()],
        }
    }
}

/// A taught path together with the strategy that maintains it.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub path: PathMap,
    pub strategy: StrategyConfig,
    pub registration: RegistrationConfig,
}

impl Navigator {
    pub fn new(path: PathMap, strategy: StrategyConfig, registration: RegistrationConfig) -> Result<Self> {
        strategy.validate()?;
        registration.validate()?;
        Ok(Navigator {
            path,
            strategy,
            registration,
        })
    }

    /// Localises `frame`, updates the local map, and reports the result.
    pub fn step(&mut self, frame: &Frame, traversal: u32) -> Result<TraversalRecord> {
        let width = self.path.image_width;
        let map = self.path.local_maps.get_mut(frame.location).ok_or_else(|| {
            Error::InvalidInput(format!("frame for unknown location {}", frame.location))
        })?;
        let loc = strategy::localize(map, &frame.features, &self.strategy, &self.registration, frame.time, width)?;
        strategy::update_map(map, &frame.features, &loc, &self.strategy, frame.time, traversal, width)?;
        let r = &loc.result;
        let map_size = (0..map.experience_count()).map(|i| map.experience(i).len()).sum();
        Ok(TraversalRecord {
            location: frame.location,
            time_s: frame.time,
            delta_px: r.delta,
            gamma_px: frame.gamma,
            correct: r.correct_count,
            incorrect: r.count(MatchOutcome::MatchedIncorrectly),
            not_matched: r.count(MatchOutcome::NotMatched),
            active: loc.active.len(),
            map_size,
            experience: loc.experience,
            offset_m: 0.0,
        })
    }

    /// Feeds pre-recorded frames of one traversal through the navigator.
    pub fn replay(&mut self, traversal: u32, time_s: f64, frames: &[Frame], px_per_m: f64) -> Result<TraversalLog> {
        let records = frames
            .iter()
            .map(|f| {
                self.step(f, traversal).map(|mut r| {
                    r.offset_m = f.gamma / px_per_m;
                    r
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TraversalLog {
            strategy: self.strategy.label(),
            traversal,
            time_s,
            records,
        })
    }
}

/// Frames of one open-loop traversal: offsets follow the schedule, not the robot.
pub fn open_loop_frames(world: &World, traversal: u32, t: f64, offsets: &OffsetSchedule, run_seed: u64) -> Vec<Frame> {
    (0..world.location_count())
        .map(|loc| {
            let offset = offsets.offset(run_seed, traversal, loc);
            let mut rng = stream_rng(run_seed, &[STREAM_OBSERVE, traversal as u64, loc as u64]);
            let mut frame = world.observe(loc, t, offset, &mut rng);
            frame.traversal = traversal;
            frame
        })
        .collect()
}

/// One closed-loop traversal. After each location the robot steers against
/// the measured shift: `offset -= gain * delta / px_per_m`, plus odometry noise.
pub fn traverse_closed_loop(
    world: &World,
    nav: &mut Navigator,
    traversal: u32,
    t: f64,
    initial_offset_m: f64,
    run_seed: u64,
) -> Result<TraversalLog> {
    let cfg = &world.cfg;
    let mut offset = initial_offset_m;
    let mut records = Vec::with_capacity(world.location_count());
    for loc in 0..world.location_count() {
        let d = loc as f64 * cfg.spacing_m;
        let map_index = nav.path.index_at(d)?;
        let mut rng = stream_rng(run_seed, &[STREAM_OBSERVE, traversal as u64, loc as u64]);
        let mut frame = world.observe(loc, t, offset, &mut rng);
        frame.traversal = traversal;
        frame.location = map_index;
        let mut record = nav.step(&frame, traversal)?;
        record.location = loc;
        record.offset_m = offset;
        if let Some(delta) = record.delta_px {
            offset -= cfg.steering_gain * delta / cfg.px_per_m;
        }
        if cfg.odometry_noise_m > 0.0 {
            let mut odo = stream_rng(run_seed, &[STREAM_ODOMETRY, traversal as u64, loc as u64]);
            offset += Normal::new(0.0, cfg.odometry_noise_m).unwrap().sample(&mut odo);
        }
        records.push(record);
    }
    Ok(TraversalLog {
        strategy: nav.strategy.label(),
        traversal,
        time_s: t,
        records,
    })
}

/// Logs of every navigator in an open-loop run, plus the SHA-256 of the
/// frame stream they all consumed.
#[derive(Debug, Clone)]
pub struct OpenLoopRun {
    pub logs: Vec<Vec<TraversalLog>>,
    pub stream_hash: String,
}

/// Teaches the world once, then drives every strategy through the identical
/// frame stream, traversal by traversal.
pub fn run_open_loop(
    world_cfg: &WorldConfig,
    strategies: &[StrategyConfig],
    registration: &RegistrationConfig,
    schedule: &Schedule,
    offsets: &OffsetSchedule,
    run_seed: u64,
) -> Result<OpenLoopRun> {
    schedule.validate()?;
    let mut world = generate_world(world_cfg)?;
    let path = world.teach(schedule.start_s)?;
    let mut navs = strategies
        .iter()
        .map(|s| Navigator::new(path.clone(), s.clone(), registration.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut logs = vec![Vec::with_capacity(schedule.traversals as usize); navs.len()];
    let mut hasher = Sha256::new();
    for k in 1..=schedule.traversals {
        world.advance_turnover();
        let t = schedule.time_of(k);
        let frames = open_loop_frames(&world, k, t, offsets, run_seed);
        for f in &frames {
            f.hash_into(&mut hasher);
        }
        let step: Vec<TraversalLog> = navs
            .par_iter_mut()
            .map(|nav| nav.replay(k, t, &frames, world_cfg.px_per_m))
            .collect::<Result<_>>()?;
        for (sink, log) in logs.iter_mut().zip(step) {
            sink.push(log);
        }
    }
    Ok(OpenLoopRun {
        logs,
        stream_hash: hex::encode(hasher.finalize()),
    })
}

/// Closed-loop run of one strategy. Each traversal starts at `initial_offset_m`.
pub fn run_closed_loop(
    world_cfg: &WorldConfig,
    strategy: &StrategyConfig,
    registration: &RegistrationConfig,
    schedule: &Schedule,
    initial_offset_m: f64,
    run_seed: u64,
) -> Result<Vec<TraversalLog>> {
    schedule.validate()?;
    let mut world = generate_world(world_cfg)?;
    let path = world.teach(schedule.start_s)?;
    let mut nav = Navigator::new(path, strategy.clone(), registration.clone())?;
    (1..=schedule.traversals)
        .map(|k| {
            world.advance_turnover();
            traverse_closed_loop(&world, &mut nav, k, schedule.time_of(k), initial_offset_m, run_seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::VisibilityClass;
    use crate::strategy::StrategyKind;

    fn tiny_world() -> WorldConfig {
        WorldConfig {
            n_locations: 6,
            landmarks_per_location: 120,
            teach_cap: 100,
            ..WorldConfig::noise_free()
        }
    }

    #[test]
    fn closed_loop_fixed_point() {
        let cfg = tiny_world();
        let world = generate_world(&cfg).unwrap();
        let path = world.teach(0.0).unwrap();
        let mut nav = Navigator::new(path, StrategyConfig::new(StrategyKind::Static), RegistrationConfig::default()).unwrap();
        let log = traverse_closed_loop(&world, &mut nav, 1, 100.0, 0.0, 7).unwrap();
        for r in &log.records {
            assert_eq!(r.delta_px, Some(0.0));
            assert_eq!(r.gamma_px, 0.0);
            assert_eq!(r.offset_m, 0.0);
        }
    }

    #[test]
    fn closed_loop_geometric_contraction() {
        let cfg = tiny_world();
        let world = generate_world(&cfg).unwrap();
        let path = world.teach(0.0).unwrap();
        let mut nav = Navigator::new(path, StrategyConfig::new(StrategyKind::Static), RegistrationConfig::default()).unwrap();
        let log = traverse_closed_loop(&world, &mut nav, 1, 100.0, 0.1, 7).unwrap();
        let mut expected = 0.1;
        for r in &log.records {
            assert!((r.offset_m - expected).abs() < 1e-12, "{} vs {expected}", r.offset_m);
            expected *= 1.0 - cfg.steering_gain;
        }
    }

    #[test]
    fn open_loop_gamma_follows_schedule() {
        let cfg = tiny_world();
        let world = generate_world(&cfg).unwrap();
        let plan = OffsetSchedule::Explicit { offsets_m: vec![0.0, 0.05, -0.1, 0.2, 0.01, -0.03] };
        let frames = open_loop_frames(&world, 3, 50.0, &plan, 1);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.gamma, cfg.px_per_m * plan.offset(1, 3, i));
            assert_eq!(f.traversal, 3);
        }
    }

    #[test]
    fn uniform_offsets_bounded_and_seeded() {
        let plan = OffsetSchedule::Uniform { amplitude_m: 0.25 };
        for loc in 0..100 {
            let o = plan.offset(9, 2, loc);
            assert!(o.abs() <= 0.25);
            assert_eq!(o, plan.offset(9, 2, loc));
        }
        assert_ne!(plan.offset(9, 2, 0), plan.offset(10, 2, 0));
    }

    #[test]
    fn open_loop_runs_are_deterministic() {
        let cfg = WorldConfig {
            n_locations: 3,
            landmarks_per_location: 80,
            teach_cap: 60,
            visibility: vec![VisibilityClass::mild()],
            ..WorldConfig::default()
        };
        let schedule = Schedule { traversals: 4, ..Schedule::default() };
        let strategies = [StrategyConfig::new(StrategyKind::Static), StrategyConfig::new(StrategyKind::ScoreBased)];
        let run = || run_open_loop(&cfg, &strategies, &RegistrationConfig::default(), &schedule, &OffsetSchedule::default(), 5).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.stream_hash, b.stream_hash);
        assert_eq!(a.logs.len(), 2);
        assert!(a.logs.iter().all(|l| l.len() == 4 && l.iter().all(|t| t.records.len() == 3)));
        // both strategies saw identical gamma sequences
        let gammas = |i: usize| a.logs[i].iter().flat_map(|t| t.records.iter().map(|r| r.gamma_px)).collect::<Vec<_>>();
        assert_eq!(gammas(0), gammas(1));
    }
}
