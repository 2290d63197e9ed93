//! Map-update strategies: feature scoring, active-feature selection, and the
//! insertion of new scene features.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fremen::{self, FremenModel};
use crate::map::{Alternative, Feature, LocalMap};
use crate::registration::{self, MatchOutcome, RegistrationConfig, RegistrationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Static,
    Latest,
    Aggressive,
    Strict,
    Summary,
    Multiple,
    #[serde(rename = "score")]
    ScoreBased,
    Fremen,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Static,
        StrategyKind::Latest,
        StrategyKind::Aggressive,
        StrategyKind::Strict,
        StrategyKind::Summary,
        StrategyKind::Multiple,
        StrategyKind::ScoreBased,
        StrategyKind::Fremen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Static => "static",
            StrategyKind::Latest => "latest",
            StrategyKind::Aggressive => "aggressive",
            StrategyKind::Strict => "strict",
            StrategyKind::Summary => "summary",
            StrategyKind::Multiple => "multiple",
            StrategyKind::ScoreBased => "score",
            StrategyKind::Fremen => "fremen",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?}; expected one of static|latest|aggressive|strict|summary|multiple|score|fremen"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Label used in reports; defaults to the kind name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: StrategyKind,
    pub s_c: f64,
    pub s_i: f64,
    pub s_n: f64,
    pub exchange_fraction: f64,
    pub m: usize,
    pub summary_add_fraction: f64,
    pub multiple_threshold: f64,
    pub multiple_max_alternatives: usize,
    pub fremen_order: usize,
    pub fremen_periods: Vec<f64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            name: None,
            kind: StrategyKind::Static,
            s_c: 1.0,
            s_i: 1.0,
            s_n: 0.0,
            exchange_fraction: 0.05,
            m: 500,
            summary_add_fraction: 0.10,
            multiple_threshold: 0.10,
            multiple_max_alternatives: 8,
            fremen_order: 2,
            fremen_periods: fremen::default_periods(),
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..StrategyConfig::default()
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exchange_fraction > 0.0 && self.exchange_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "exchange_fraction {} outside (0, 1]",
                self.exchange_fraction
            )));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        for (name, w) in [("s_c", self.s_c), ("s_i", self.s_i), ("s_n", self.s_n)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
            if self.kind == StrategyKind::Fremen && w > 1.0 {
                return Err(Error::Config(format!(
                    "{name} = {w}: temporal scores are observations in [-1, 1]"
                )));
            }
        }
        if !(self.summary_add_fraction >= 0.0 && self.summary_add_fraction <= 1.0) {
            return Err(Error::Config("summary_add_fraction outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.multiple_threshold) {
            return Err(Error::Config("multiple_threshold outside [0, 1]".into()));
        }
        if self.multiple_max_alternatives == 0 {
            return Err(Error::Config("multiple_max_alternatives must be at least 1".into()));
        }
        FremenModel::new(&self.fremen_periods)?;
        Ok(())
    }

    /// Number of features exchanged per update for a map of `map_size`.
    pub fn exchange_count(&self, map_size: usize) -> usize {
        (self.exchange_fraction * map_size as f64).ceil() as usize
    }

    fn fresh_feature(&self, mut f: Feature, traversal: u32) -> Feature {
        f.score = 0.0;
        f.inserted_at = traversal;
        f.temporal = match self.kind {
            StrategyKind::Fremen => Some(self.fresh_model()),
            _ => None,
        };
        f
    }

    fn fresh_model(&self) -> FremenModel {
        FremenModel::new(&self.fremen_periods).expect("periods validated with the config")
    }

    /// The signed score increment for an outcome.
    pub fn increment(&self, outcome: MatchOutcome) -> f64 {
        match outcome {
            MatchOutcome::MatchedCorrectly => self.s_c,
            MatchOutcome::MatchedIncorrectly => -self.s_i,
            MatchOutcome::NotMatched => -self.s_n,
        }
    }
}

/// Applies one match outcome to a feature's score state. Only the
/// score-based and temporal strategies keep such state.
pub fn score_update(feature: &mut Feature, outcome: MatchOutcome, cfg: &StrategyConfig, t: f64) -> Result<()> {
    match cfg.kind {
        StrategyKind::ScoreBased => feature.score += cfg.increment(outcome),
        StrategyKind::Fremen => feature
            .temporal
            .get_or_insert_with(|| cfg.fresh_model())
            .add_observation(cfg.increment(outcome), t)?,
        _ => {}
    }
    Ok(())
}

/// Ranking value: predicted score for the temporal strategy, accumulated
/// score for the score-based one, nothing for the rest.
fn selection_value(f: &Feature, cfg: &StrategyConfig, t: f64) -> f64 {
    match cfg.kind {
        StrategyKind::ScoreBased => f.score,
        StrategyKind::Fremen => f
            .temporal
            .as_ref()
            .map_or(0.0, |m| m.predict(t, cfg.fremen_order)),
        _ => 0.0,
    }
}

/// Indices ordered best first: higher value, then newer, then earlier in the list.
fn rank_by(features: &[Feature], value: impl Fn(&Feature) -> f64) -> Vec<usize> {
    let values: Vec<f64> = features.iter().map(value).collect();
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(features[b].inserted_at.cmp(&features[a].inserted_at))
            .then(a.cmp(&b))
    });
    order
}

/// The `m` features used for localisation at time `t`, as indices in map order.
pub fn select_active_features(features: &[Feature], cfg: &StrategyConfig, t: f64) -> Vec<usize> {
    if features.len() <= cfg.m {
        return (0..features.len()).collect();
    }
    let mut active = rank_by(features, |f| selection_value(f, cfg, t));
    active.truncate(cfg.m);
    active.sort_unstable();
    active
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub view_index: usize,
    /// Hamming distance to the nearest map feature.
    pub uniqueness: u32,
}

/// Orders candidate view features by descending distance to their nearest
/// map feature. An empty map makes every candidate maximally unique.
pub fn rank_addition_candidates(candidates: &[Feature], map: &[Feature]) -> Result<Vec<Candidate>> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for (view_index, c) in candidates.iter().enumerate() {
        let width = c.descriptor.width();
        let mut uniqueness = width as u32;
        for f in map {
            if f.descriptor.width() != width {
                return Err(Error::WidthMismatch { left: width, right: f.descriptor.width() });
            }
            uniqueness = uniqueness.min(c.descriptor.distance_unchecked(&f.descriptor));
        }
        ranked.push(Candidate { view_index, uniqueness });
    }
    ranked.sort_by(|a, b| b.uniqueness.cmp(&a.uniqueness).then(a.view_index.cmp(&b.view_index)));
    Ok(ranked)
}

/// Moves features into the map frame: `x - delta`, clipped to `[0, W)`.
pub fn correct_positions(features: impl IntoIterator<Item = Feature>, delta: f64, image_width: f64) -> Vec<Feature> {
    let x_max = image_width.next_down();
    features
        .into_iter()
        .map(|mut f| {
            f.x = (f.x - delta).clamp(0.0, x_max);
            f
        })
        .collect()
}

/// Outcome of localising one view against a local map.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// Which experience of the local map was used (0 = taught map).
    pub experience: usize,
    /// Indices into that experience's feature list, aligned with `result.outcomes`.
    pub active: Vec<usize>,
    pub result: RegistrationResult,
    /// Outcomes of the features left out of the active set, classified
    /// against the same shift. Only kept for strategies that score every
    /// feature.
    pub inactive: Vec<(usize, MatchOutcome)>,
    /// View features paired with an inactive map feature.
    pub inactive_view_matches: Vec<usize>,
}

impl Localization {
    pub fn delta(&self) -> Option<f64> {
        self.result.delta
    }
}

fn localize_experience(
    features: &[Feature],
    view: &[Feature],
    cfg: &StrategyConfig,
    reg: &RegistrationConfig,
    t: f64,
    image_width: f64,
    experience: usize,
) -> Result<Localization> {
    let active = select_active_features(features, cfg, t);
    let refs: Vec<&Feature> = active.iter().map(|&i| &features[i]).collect();
    let result = registration::register(&refs, view, reg, image_width)?;
    let mut loc = Localization {
        experience,
        active,
        result,
        inactive: Vec::new(),
        inactive_view_matches: Vec::new(),
    };
    let scores_all = matches!(cfg.kind, StrategyKind::ScoreBased | StrategyKind::Fremen);
    if scores_all && loc.active.len() < features.len() {
        classify_inactive(&mut loc, features, view, reg);
    }
    Ok(loc)
}

fn classify_inactive(loc: &mut Localization, features: &[Feature], view: &[Feature], reg: &RegistrationConfig) {
    let mut is_active = vec![false; features.len()];
    for &i in &loc.active {
        is_active[i] = true;
    }
    let inactive: Vec<usize> = (0..features.len()).filter(|&i| !is_active[i]).collect();
    let Some(delta) = loc.result.delta else {
        loc.inactive = inactive.into_iter().map(|i| (i, MatchOutcome::NotMatched)).collect();
        return;
    };
    let refs: Vec<&Feature> = inactive.iter().map(|&i| &features[i]).collect();
    let width = features[0].descriptor.width();
    // widths were checked by the registration of the same experience
    let pairs = registration::match_features(&refs, view, reg.d_max_for(width)).unwrap_or_default();
    let outcomes = registration::classify_outcomes(refs.len(), &pairs, Some(delta), reg.tolerance())
        .expect("pairs index the inactive subset once each");
    loc.inactive_view_matches = pairs.iter().map(|p| p.view_index).collect();
    loc.inactive = inactive.into_iter().zip(outcomes).collect();
}

/// Registers the view against every experience of the local map and keeps the
/// one with the most correct matches; ties go to the oldest experience. When
/// every registration fails the failed result on the taught map is returned.
pub fn select_best_alternative(
    map: &LocalMap,
    view: &[Feature],
    cfg: &StrategyConfig,
    reg: &RegistrationConfig,
    t: f64,
    image_width: f64,
) -> Result<Localization> {
    let mut best: Option<Localization> = None;
    let mut fallback = None;
    for i in 0..map.experience_count() {
        let loc = localize_experience(map.experience(i), view, cfg, reg, t, image_width, i)?;
        if !loc.result.succeeded() {
            fallback.get_or_insert(loc);
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (bc, lc) = (b.result.correct_count, loc.result.correct_count);
                lc > bc
                    || (lc == bc
                        && map.experience_created_at(i) < map.experience_created_at(b.experience))
            }
        };
        if better {
            best = Some(loc);
        }
    }
    Ok(best.or(fallback).expect("a local map always has its taught experience"))
}

/// Localises a view for the given strategy.
pub fn localize(
    map: &LocalMap,
    view: &[Feature],
    cfg: &StrategyConfig,
    reg: &RegistrationConfig,
    t: f64,
    image_width: f64,
) -> Result<Localization> {
    if cfg.kind == StrategyKind::Multiple {
        select_best_alternative(map, view, cfg, reg, t, image_width)
    } else {
        localize_experience(&map.features, view, cfg, reg, t, image_width, 0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateSummary {
    pub removed: usize,
    pub inserted: usize,
    pub alternative_added: bool,
}

/// Per-feature outcome over a whole experience; `None` for features that were
/// not in the active set.
fn outcomes_by_feature(n: usize, loc: &Localization) -> Vec<Option<MatchOutcome>> {
    let mut out = vec![None; n];
    for (&i, &o) in loc.active.iter().zip(&loc.result.outcomes) {
        out[i] = Some(o);
    }
    for &(i, o) in &loc.inactive {
        out[i] = Some(o);
    }
    out
}

/// View features not paired with any map feature, as owned copies in view order.
fn unmatched_view(view: &[Feature], loc: &Localization) -> Vec<Feature> {
    let mut used = vec![false; view.len()];
    for p in &loc.result.pairs {
        used[p.view_index] = true;
    }
    for &j in &loc.inactive_view_matches {
        used[j] = true;
    }
    view.iter()
        .zip(used)
        .filter(|(_, u)| !u)
        .map(|(f, _)| f.clone())
        .collect()
}

struct Inserter<'a> {
    ranked: Vec<Feature>,
    cfg: &'a StrategyConfig,
    delta: f64,
    image_width: f64,
    traversal: u32,
}

impl<'a> Inserter<'a> {
    /// Ranks the unmatched view features against the map as it is now,
    /// before anything is removed.
    fn new(
        map_features: &[Feature],
        view: &[Feature],
        loc: &Localization,
        cfg: &'a StrategyConfig,
        image_width: f64,
        traversal: u32,
    ) -> Result<Self> {
        let candidates = unmatched_view(view, loc);
        let order = rank_addition_candidates(&candidates, map_features)?;
        let mut slots: Vec<Option<Feature>> = candidates.into_iter().map(Some).collect();
        let ranked = order
            .iter()
            .map(|c| slots[c.view_index].take().expect("each candidate ranked once"))
            .collect();
        Ok(Inserter {
            ranked,
            cfg,
            delta: loc.delta().expect("insertion requires a registration"),
            image_width,
            traversal,
        })
    }

    fn insert_into(self, features: &mut Vec<Feature>, count: usize) -> usize {
        let picked = self.ranked.into_iter().take(count);
        let corrected = correct_positions(picked, self.delta, self.image_width);
        let n = corrected.len();
        features.extend(corrected.into_iter().map(|f| self.cfg.fresh_feature(f, self.traversal)));
        n
    }
}

fn remove_where(features: &mut Vec<Feature>, drop: &[bool]) -> usize {
    let before = features.len();
    let mut i = 0;
    features.retain(|_| {
        let keep = !drop[i];
        i += 1;
        keep
    });
    before - features.len()
}

/// Applies one strategy step to a local map after localising `view` at time
/// `t` during traversal `traversal`.
///
/// A failed registration never inserts or removes features; score and
/// temporal state still records every feature as not matched.
pub fn update_map(
    map: &mut LocalMap,
    view: &[Feature],
    loc: &Localization,
    cfg: &StrategyConfig,
    t: f64,
    traversal: u32,
    image_width: f64,
) -> Result<UpdateSummary> {
    let mut summary = UpdateSummary::default();
    let succeeded = loc.result.succeeded();
    let features = map.experience_mut(loc.experience);
    let outcomes = outcomes_by_feature(features.len(), loc);

    match cfg.kind {
        StrategyKind::Static => {}
        StrategyKind::Latest => {
            if succeeded {
                summary.removed = features.len();
                let fresh = correct_positions(view.iter().cloned(), loc.delta().unwrap(), image_width);
                *features = fresh.into_iter().map(|f| cfg.fresh_feature(f, traversal)).collect();
                summary.inserted = features.len();
            }
        }
        StrategyKind::Aggressive | StrategyKind::Strict | StrategyKind::Summary => {
            if succeeded {
                let inserter = Inserter::new(features, view, loc, cfg, image_width, traversal)?;
                let drop: Vec<bool> = outcomes
                    .iter()
                    .map(|o| {
                        matches!(
                            (cfg.kind, o),
                            (_, Some(MatchOutcome::MatchedIncorrectly))
                                | (StrategyKind::Aggressive, Some(MatchOutcome::NotMatched))
                        )
                    })
                    .collect();
                summary.removed = remove_where(features, &drop);
                let slots = if cfg.kind == StrategyKind::Summary {
                    (cfg.summary_add_fraction * view.len() as f64).ceil() as usize
                } else {
                    summary.removed
                };
                summary.inserted = inserter.insert_into(features, slots);
            }
        }
        StrategyKind::ScoreBased | StrategyKind::Fremen => {
            for (f, o) in features.iter_mut().zip(&outcomes) {
                if let Some(o) = o {
                    score_update(f, *o, cfg, t)?;
                }
            }
            if succeeded {
                let inserter = Inserter::new(features, view, loc, cfg, image_width, traversal)?;
                let n = cfg.exchange_count(features.len()).min(features.len());
                let order = if cfg.kind == StrategyKind::ScoreBased {
                    rank_by(features, |f| f.score)
                } else {
                    rank_by(features, |f| f.temporal.as_ref().map_or(0.0, FremenModel::mean_score))
                };
                let mut drop = vec![false; features.len()];
                for &i in &order[order.len() - n..] {
                    drop[i] = true;
                }
                summary.removed = remove_where(features, &drop);
                summary.inserted = inserter.insert_into(features, n);
            }
        }
        StrategyKind::Multiple => {
            let active = loc.active.len().max(1);
            let ratio = loc.result.correct_count as f64 / active as f64;
            if succeeded && ratio < cfg.multiple_threshold {
                if map.experience_count() < cfg.multiple_max_alternatives {
                    let fresh = correct_positions(view.iter().cloned(), loc.delta().unwrap(), image_width);
                    map.alternatives.push(Alternative {
                        features: fresh.into_iter().map(|f| cfg.fresh_feature(f, traversal)).collect(),
                        created_at: traversal,
                    });
                    summary.alternative_added = true;
                    summary.inserted = view.len();
                } else {
                    log::warn!(
                        "local map {}: {} experiences already stored, not adding another",
                        map.index,
                        map.experience_count()
                    );
                }
            }
        }
    }
    Ok(summary)
}
