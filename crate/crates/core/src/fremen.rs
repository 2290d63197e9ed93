//! Frequency Map Enhancement: a mean plus harmonic components estimated from
//! non-uniformly timed observations of a bounded signal.
//!
//! Each accumulator keeps the running average of `v * exp(-i * omega * t)` for
//! one candidate period. A signal `v(t) = a * cos(omega * t + phi)` sampled
//! evenly over whole periods drives the accumulator towards
//! `(a / 2) * exp(i * phi)`, so a component contributes
//! `2 * |gamma| * cos(omega * t + arg gamma)` to the reconstruction.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAY_S: f64 = 86_400.0;
pub const WEEK_S: f64 = 604_800.0;

/// Daily harmonics `86400 / j` for `j = 1..=12`, plus one week, longest first.
pub fn default_periods() -> Vec<f64> {
    let mut periods = vec![WEEK_S];
    periods.extend((1..=12).map(|j| DAY_S / j as f64));
    periods
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accumulator {
    pub period_s: f64,
    pub gamma: Complex64,
}

impl Accumulator {
    pub fn omega(&self) -> f64 {
        TAU / self.period_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub period_s: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FremenModel {
    n_obs: u64,
    mu: f64,
    accumulators: Vec<Accumulator>,
}

impl FremenModel {
    pub fn new(periods: &[f64]) -> Result<Self> {
        if let Some(p) = periods.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidInput(format!("candidate period {p} must be positive")));
        }
        Ok(FremenModel {
            n_obs: 0,
            mu: 0.0,
            accumulators: periods
                .iter()
                .map(|&period_s| Accumulator {
                    period_s,
                    gamma: Complex64::new(0.0, 0.0),
                })
                .collect(),
        })
    }

    pub fn with_default_periods() -> Self {
        FremenModel::new(&default_periods()).expect("default periods are positive")
    }

    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }

    pub fn accumulators(&self) -> &[Accumulator] {
        &self.accumulators
    }

    pub fn add_observation(&mut self, value: f64, t: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!("observation {value} outside [-1, 1]")));
        }
        if !t.is_finite() {
            return Err(Error::InvalidInput(format!("observation time {t} is not finite")));
        }
        self.n_obs += 1;
        let w = 1.0 / self.n_obs as f64;
        self.mu += (value - self.mu) * w;
        for acc in &mut self.accumulators {
            let sample = Complex64::from_polar(value, -acc.omega() * t);
            acc.gamma += (sample - acc.gamma) * w;
        }
        Ok(())
    }

    /// Running mean of all observations; 0 for an empty model.
    pub fn mean_score(&self) -> f64 {
        self.mu
    }

    /// Reconstruction from the mean and the `order` strongest components,
    /// clamped to `[-1, 1]`.
    pub fn predict(&self, t: f64, order: usize) -> f64 {
        if self.n_obs == 0 {
            return 0.0;
        }
        let harmonics: f64 = self
            .ranked()
            .take(order)
            .map(|acc| 2.0 * acc.gamma.norm() * (acc.omega() * t + acc.gamma.arg()).cos())
            .sum();
        (self.mu + harmonics).clamp(-1.0, 1.0)
    }

    /// The `k` strongest components, descending by amplitude.
    pub fn dominant_components(&self, k: usize) -> Vec<Component> {
        self.ranked()
            .take(k)
            .map(|acc| Component {
                period_s: acc.period_s,
                amplitude: 2.0 * acc.gamma.norm(),
                phase: acc.gamma.arg(),
            })
            .collect()
    }

    /// Accumulators by descending magnitude; ties go to the longer period.
    fn ranked(&self) -> impl Iterator<Item = &Accumulator> {
        let mut order: Vec<&Accumulator> = self.accumulators.iter().collect();
        order.sort_by(|a, b| {
            b.gamma
                .norm()
                .partial_cmp(&a.gamma.norm())
                .unwrap_or(Ordering::Equal)
                .then(b.period_s.partial_cmp(&a.period_s).unwrap_or(Ordering::Equal))
        });
        order.into_iter()
    }
}

/// Snapshot form: `{n_obs, mu, components: [(period_s, re, im)]}`.
#[derive(Serialize, Deserialize)]
struct ModelRecord {
    n_obs: u64,
    mu: f64,
    components: Vec<(f64, f64, f64)>,
}

impl Serialize for FremenModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRecord {
            n_obs: self.n_obs,
            mu: self.mu,
            components: self
                .accumulators
                .iter()
                .map(|a| (a.period_s, a.gamma.re, a.gamma.im))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FremenModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = ModelRecord::deserialize(d)?;
        if !(-1.0..=1.0).contains(&rec.mu) {
            return Err(serde::de::Error::custom("model mean outside [-1, 1]"));
        }
        Ok(FremenModel {
            n_obs: rec.n_obs,
            mu: rec.mu,
            accumulators: rec
                .components
                .into_iter()
                .map(|(period_s, re, im)| Accumulator {
                    period_s,
                    gamma: Complex64::new(re, im),
                })
                .collect(),
        })
    }
}
