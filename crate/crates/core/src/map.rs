//! Features, local maps and the taught path.

use serde::{Deserialize, Serialize};

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::fremen::FremenModel;

/// Default spacing between local maps along the taught path.
pub const DEFAULT_SPACING_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "d")]
    pub descriptor: Descriptor,
    #[serde(default)]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<FremenModel>,
    #[serde(default)]
    pub inserted_at: u32,
}

impl Feature {
    pub fn new(x: f64, y: f64, descriptor: Descriptor) -> Self {
        Feature {
            x,
            y,
            descriptor,
            score: 0.0,
            temporal: None,
            inserted_at: 0,
        }
    }

    pub fn inserted_at(mut self, traversal: u32) -> Self {
        self.inserted_at = traversal;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub features: Vec<Feature>,
    pub created_at: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMap {
    pub index: usize,
    pub odometry_distance: f64,
    /// The taught feature set. For the multiple-map strategy this is
    /// alternative 0.
    pub features: Vec<Feature>,
    /// Further experiences recorded by the multiple-map strategy.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<Alternative>,
}

impl LocalMap {
    pub fn new(index: usize, odometry_distance: f64, features: Vec<Feature>) -> Self {
        LocalMap {
            index,
            odometry_distance,
            features,
            alternatives: Vec::new(),
        }
    }

    /// Number of experiences including the taught one.
    pub fn experience_count(&self) -> usize {
        1 + self.alternatives.len()
    }

    /// Feature list of experience `i`; 0 is the taught map.
    pub fn experience(&self, i: usize) -> &[Feature] {
        if i == 0 {
            &self.features
        } else {
            &self.alternatives[i - 1].features
        }
    }

    pub fn experience_created_at(&self, i: usize) -> u32 {
        if i == 0 {
            0
        } else {
            self.alternatives[i - 1].created_at
        }
    }

    pub fn experience_mut(&mut self, i: usize) -> &mut Vec<Feature> {
        if i == 0 {
            &mut self.features
        } else {
            &mut self.alternatives[i - 1].features
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMap {
    pub local_maps: Vec<LocalMap>,
    pub image_width: f64,
    pub descriptor_width: usize,
    pub taught_at: f64,
}

impl PathMap {
    pub fn new(local_maps: Vec<LocalMap>, image_width: f64, descriptor_width: usize, taught_at: f64) -> Result<Self> {
        if local_maps.is_empty() {
            return Err(Error::InvalidInput("a path needs at least one local map".into()));
        }
        if local_maps
            .windows(2)
            .any(|w| w[1].odometry_distance <= w[0].odometry_distance)
        {
            return Err(Error::InvalidInput(
                "local map odometry distances must be strictly increasing".into(),
            ));
        }
        if local_maps[0].odometry_distance != 0.0 {
            return Err(Error::InvalidInput("the first local map must sit at 0 m".into()));
        }
        Ok(PathMap {
            local_maps,
            image_width,
            descriptor_width,
            taught_at,
        })
    }

    pub fn len(&self) -> usize {
        self.local_maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_maps.is_empty()
    }

    pub fn end_distance(&self) -> f64 {
        self.local_maps.last().map_or(0.0, |m| m.odometry_distance)
    }

    /// Position of the local map covering odometry distance `d`: the last map
    /// whose distance does not exceed `d`.
    pub fn index_at(&self, d: f64) -> Result<usize> {
        let end = self.end_distance();
        if !(0.0..=end).contains(&d) {
            return Err(Error::OutOfRange { distance: d, end });
        }
        let after = self
            .local_maps
            .partition_point(|m| m.odometry_distance <= d);
        Ok(after - 1)
    }

    pub fn local_map_at(&self, d: f64) -> Result<&LocalMap> {
        self.index_at(d).map(|i| &self.local_maps[i])
    }
}
