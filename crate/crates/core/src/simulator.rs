//! Synthetic changing environment observed by a robot with a 1-D lateral
//! offset from the taught path.
//!
//! Each location holds a table of landmarks. A landmark is visible at time `t`
//! with probability `clamp(mean + amp * cos(2 pi t / day + phase), 0, 1)`, so
//! `t = 0` is midnight and a phase of `pi` peaks at noon. Observed landmarks
//! are shifted by `px_per_m * offset`, jittered, and their descriptor bits
//! flipped; random clutter features are appended. Landmarks are replaced at
//! random between traversals.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::map::{Feature, LocalMap, PathMap};

/// Uniform ranges for the visibility parameters of one class of landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityClass {
    pub weight: f64,
    pub mean: (f64, f64),
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
}

impl VisibilityClass {
    /// Mostly visible landmarks with a mild daily modulation at random phase.
    pub fn mild() -> Self {
        VisibilityClass {
            weight: 1.0,
            mean: (0.6, 0.9),
            amplitude: (0.0, 0.3),
            phase: (0.0, TAU),
        }
    }

    /// Landmarks seen around noon and not at night.
    pub fn day(amplitude: f64) -> Self {
        VisibilityClass {
            weight: 1.0,
            mean: (0.5, 0.5),
            amplitude: (amplitude, amplitude),
            phase: (PI, PI),
        }
    }

    /// Landmarks seen around midnight only.
    pub fn night(amplitude: f64) -> Self {
        VisibilityClass {
            weight: 1.0,
            mean: (0.5, 0.5),
            amplitude: (amplitude, amplitude),
            phase: (0.0, 0.0),
        }
    }

    /// Visible at all times with probability `p`.
    pub fn constant(p: f64) -> Self {
        VisibilityClass {
            weight: 1.0,
            mean: (p, p),
            amplitude: (0.0, 0.0),
            phase: (0.0, 0.0),
        }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_locations: usize,
    pub landmarks_per_location: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub descriptor_width: usize,
    pub day_period_s: f64,
    pub visibility: Vec<VisibilityClass>,
    /// Per-bit flip probability of an observed descriptor.
    pub bit_flip_prob: f64,
    /// Additional flip probability at midnight, fading to zero at noon.
    pub night_bit_flip_prob: f64,
    pub position_jitter_px: f64,
    pub turnover_prob: f64,
    pub clutter_count: usize,
    pub px_per_m: f64,
    pub steering_gain: f64,
    pub odometry_noise_m: f64,
    /// Distance between consecutive local maps.
    pub spacing_m: f64,
    /// Features kept per local map when teaching.
    pub teach_cap: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_locations: 32,
            landmarks_per_location: 700,
            image_width: 640.0,
            image_height: 480.0,
            descriptor_width: crate::descriptor::DEFAULT_WIDTH,
            day_period_s: crate::fremen::DAY_S,
            visibility: vec![VisibilityClass::mild()],
            bit_flip_prob: 0.02,
            night_bit_flip_prob: 0.0,
            position_jitter_px: 1.0,
            turnover_prob: 0.002,
            clutter_count: 30,
            px_per_m: 200.0,
            steering_gain: 0.8,
            odometry_noise_m: 0.005,
            spacing_m: crate::map::DEFAULT_SPACING_M,
            teach_cap: 500,
            seed: 0,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be positive")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be non-negative")))
    }
}

impl WorldConfig {
    /// Noise-free world: every landmark always visible, exact observations.
    pub fn noise_free() -> Self {
        WorldConfig {
            visibility: vec![VisibilityClass::constant(1.0)],
            bit_flip_prob: 0.0,
            position_jitter_px: 0.0,
            turnover_prob: 0.0,
            clutter_count: 0,
            odometry_noise_m: 0.0,
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_locations == 0 || self.landmarks_per_location == 0 || self.teach_cap == 0 {
            return Err(Error::Config(
                "n_locations, landmarks_per_location and teach_cap must be positive".into(),
            ));
        }
        if self.descriptor_width == 0 || !self.descriptor_width.is_multiple_of(4) {
            return Err(Error::Config("descriptor_width must be a positive multiple of 4".into()));
        }
        positive("image_width", self.image_width)?;
        positive("image_height", self.image_height)?;
        positive("day_period_s", self.day_period_s)?;
        positive("px_per_m", self.px_per_m)?;
        positive("spacing_m", self.spacing_m)?;
        probability("bit_flip_prob", self.bit_flip_prob)?;
        probability("night_bit_flip_prob", self.night_bit_flip_prob)?;
        probability("bit_flip_prob + night_bit_flip_prob", self.bit_flip_prob + self.night_bit_flip_prob)?;
        probability("turnover_prob", self.turnover_prob)?;
        non_negative("position_jitter_px", self.position_jitter_px)?;
        non_negative("odometry_noise_m", self.odometry_noise_m)?;
        if !(self.steering_gain > 0.0 && self.steering_gain <= 1.0) {
            return Err(Error::Config("steering_gain must lie in (0, 1]".into()));
        }
        if self.visibility.is_empty() {
            return Err(Error::Config("at least one visibility class is required".into()));
        }
        for c in &self.visibility {
            non_negative("visibility weight", c.weight)?;
            for (name, (lo, hi)) in [("mean", c.mean), ("amplitude", c.amplitude), ("phase", c.phase)] {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::Config(format!("visibility {name} range ({lo}, {hi}) is invalid")));
                }
            }
        }
        if self.visibility.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return Err(Error::Config("visibility weights sum to zero".into()));
        }
        Ok(())
    }

    /// 0 at noon, 1 at midnight.
    pub fn darkness(&self, t: f64) -> f64 {
        0.5 * (1.0 + (TAU * t / self.day_period_s).cos())
    }

    pub fn bit_flip_at(&self, t: f64) -> f64 {
        self.bit_flip_prob + self.night_bit_flip_prob * self.darkness(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub descriptor: Descriptor,
    pub vis_mean: f64,
    pub vis_amp: f64,
    pub vis_phase: f64,
}

impl Landmark {
    pub fn visibility(&self, t: f64, day_period_s: f64) -> f64 {
        (self.vis_mean + self.vis_amp * (TAU * t / day_period_s + self.vis_phase).cos()).clamp(0.0, 1.0)
    }
}

/// Seed for an independent random stream derived from a base seed and a
/// path of integers (splitmix64 finalizer over each component).
pub fn stream_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, path))
}

const STREAM_LANDMARKS: u64 = 1;
const STREAM_TURNOVER: u64 = 2;
const STREAM_TEACH: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub cfg: WorldConfig,
    pub locations: Vec<Vec<Landmark>>,
    /// Number of turnover rounds applied so far.
    pub turnover_rounds: u32,
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn random_landmark<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Landmark {
    let total: f64 = cfg.visibility.iter().map(|c| c.weight).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut class = &cfg.visibility[cfg.visibility.len() - 1];
    for c in &cfg.visibility {
        if pick < c.weight {
            class = c;
            break;
        }
        pick -= c.weight;
    }
    Landmark {
        x: rng.gen_range(0.0..cfg.image_width),
        y: rng.gen_range(0.0..cfg.image_height),
        descriptor: Descriptor::random(cfg.descriptor_width, rng),
        vis_mean: sample_range(rng, class.mean),
        vis_amp: sample_range(rng, class.amplitude),
        vis_phase: sample_range(rng, class.phase),
    }
}

/// Builds the landmark tables; a pure function of the configuration.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let locations = (0..cfg.n_locations)
        .map(|loc| {
            let mut rng = stream_rng(cfg.seed, &[STREAM_LANDMARKS, loc as u64]);
            (0..cfg.landmarks_per_location)
                .map(|_| random_landmark(cfg, &mut rng))
                .collect()
        })
        .collect();
    Ok(World {
        cfg: cfg.clone(),
        locations,
        turnover_rounds: 0,
    })
}

/// A camera frame with its ground-truth horizontal shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub traversal: u32,
    pub location: usize,
    #[serde(rename = "time_s")]
    pub time: f64,
    #[serde(rename = "gamma_px")]
    pub gamma: f64,
    pub features: Vec<Feature>,
}

impl Frame {
    /// Feeds a canonical byte encoding of the frame into `hasher`.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update(self.traversal.to_le_bytes());
        hasher.update((self.location as u64).to_le_bytes());
        hasher.update(self.time.to_bits().to_le_bytes());
        hasher.update(self.gamma.to_bits().to_le_bytes());
        hasher.update((self.features.len() as u64).to_le_bytes());
        for f in &self.features {
            hasher.update(f.x.to_bits().to_le_bytes());
            hasher.update(f.y.to_bits().to_le_bytes());
            hasher.update(f.descriptor.to_hex().as_bytes());
        }
    }
}

impl World {
    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    /// Replaces each landmark with probability `turnover_prob`. Round `k`
    /// draws from its own stream, so the state after `k` rounds only depends
    /// on the seed.
    pub fn advance_turnover(&mut self) {
        self.turnover_rounds += 1;
        if self.cfg.turnover_prob <= 0.0 {
            return;
        }
        let mut rng = stream_rng(self.cfg.seed, &[STREAM_TURNOVER, self.turnover_rounds as u64]);
        for table in &mut self.locations {
            for lm in table.iter_mut() {
                if rng.gen::<f64>() < self.cfg.turnover_prob {
                    *lm = random_landmark(&self.cfg, &mut rng);
                }
            }
        }
    }

    /// Observes `location` at time `t` with the robot `offset_m` metres off the path.
    pub fn observe<R: Rng>(&self, location: usize, t: f64, offset_m: f64, rng: &mut R) -> Frame {
        let cfg = &self.cfg;
        let gamma = cfg.px_per_m * offset_m;
        let beta = cfg.bit_flip_at(t);
        let jitter = Normal::new(0.0, cfg.position_jitter_px.max(f64::MIN_POSITIVE))
            .expect("jitter sigma validated");
        let mut features = Vec::with_capacity(self.locations[location].len() + cfg.clutter_count);
        for lm in &self.locations[location] {
            let p = lm.visibility(t, cfg.day_period_s);
            if p < 1.0 && rng.gen::<f64>() >= p {
                continue;
            }
            let (dx, dy) = if cfg.position_jitter_px > 0.0 {
                (jitter.sample(rng), jitter.sample(rng))
            } else {
                (0.0, 0.0)
            };
            let x = lm.x + gamma + dx;
            let y = (lm.y + dy).clamp(0.0, cfg.image_height.next_down());
            if !(0.0..cfg.image_width).contains(&x) {
                continue;
            }
            features.push(Feature::new(x, y, lm.descriptor.perturbed(beta, rng)));
        }
        for _ in 0..cfg.clutter_count {
            features.push(Feature::new(
                rng.gen_range(0.0..cfg.image_width),
                rng.gen_range(0.0..cfg.image_height),
                Descriptor::random(cfg.descriptor_width, rng),
            ));
        }
        Frame {
            traversal: 0,
            location,
            time: t,
            gamma,
            features,
        }
    }

    /// Frames seen while teaching at time `t`, on the path, before capping.
    pub fn teach_frames(&self, t: f64) -> Vec<Frame> {
        (0..self.locations.len())
            .map(|loc| {
                let mut rng = stream_rng(self.cfg.seed, &[STREAM_TEACH, loc as u64]);
                self.observe(loc, t, 0.0, &mut rng)
            })
            .collect()
    }

    /// Records one local map per location at time `t`, on the path.
    pub fn teach(&self, t: f64) -> Result<PathMap> {
        teach_path(
            self.teach_frames(t),
            self.cfg.teach_cap,
            self.cfg.spacing_m,
            self.cfg.image_width,
            self.cfg.descriptor_width,
        )
    }
}

/// Builds a path map from one teach frame per location, in location order.
pub fn teach_path(
    frames: Vec<Frame>,
    teach_cap: usize,
    spacing_m: f64,
    image_width: f64,
    descriptor_width: usize,
) -> Result<PathMap> {
    let t = frames.first().map_or(0.0, |f| f.time);
    let mut maps = Vec::with_capacity(frames.len());
    for (loc, frame) in frames.into_iter().enumerate() {
        if frame.location != loc {
            return Err(Error::Teach(format!(
                "teach frames must cover locations 0..n in order; found {} at position {loc}",
                frame.location
            )));
        }
        if frame.features.is_empty() {
            return Err(Error::Teach(format!("location {loc} produced no features")));
        }
        let features = keep_most_unique(frame.features, teach_cap);
        maps.push(LocalMap::new(loc, loc as f64 * spacing_m, features));
    }
    PathMap::new(maps, image_width, descriptor_width, t)
}

/// Keeps the `cap` features farthest (in descriptor space) from their nearest
/// neighbour within the same set, most unique first. Ties keep input order.
pub fn keep_most_unique(features: Vec<Feature>, cap: usize) -> Vec<Feature> {
    if features.len() <= cap {
        return features;
    }
    let n = features.len();
    let mut nearest = vec![u32::MAX; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = features[i].descriptor.distance_unchecked(&features[j].descriptor);
            nearest[i] = nearest[i].min(d);
            nearest[j] = nearest[j].min(d);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nearest[b].cmp(&nearest[a]).then(a.cmp(&b)));
    order.truncate(cap);
    let mut slots: Vec<Option<Feature>> = features.into_iter().map(Some).collect();
    order.into_iter().map(|i| slots[i].take().unwrap()).collect()
}
