//! Horizontal image registration: mutual-nearest-neighbour matching of binary
//! descriptors followed by histogram voting over the horizontal coordinate
//! differences.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchOutcome {
    NotMatched,
    MatchedCorrectly,
    MatchedIncorrectly,
}

/// One correspondence. `dx = x_view - x_map`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub map_index: usize,
    pub view_index: usize,
    pub distance: u32,
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Hamming acceptance threshold; `None` means a quarter of the descriptor width.
    pub d_max: Option<u32>,
    pub bin_width_px: f64,
    /// Half-width of the band around delta counted as a correct match;
    /// `None` means one bin width.
    pub tolerance_px: Option<f64>,
    pub min_votes: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            d_max: None,
            bin_width_px: 10.0,
            tolerance_px: None,
            min_votes: 3,
        }
    }
}

impl RegistrationConfig {
    pub fn d_max_for(&self, descriptor_width: usize) -> u32 {
        self.d_max.unwrap_or((descriptor_width / 4) as u32)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance_px.unwrap_or(self.bin_width_px)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_px.is_finite() && self.bin_width_px > 0.0) {
            return Err(Error::Config("bin_width_px must be positive".into()));
        }
        if let Some(t) = self.tolerance_px {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config("tolerance_px must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub delta: f64,
    /// `(bin centre, count)` for every bin covering `[-W, W]`.
    pub histogram: Vec<(f64, usize)>,
    pub winning_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Estimated shift; `None` when registration failed.
    pub delta: Option<f64>,
    pub histogram: Vec<(f64, usize)>,
    pub pairs: Vec<Match>,
    /// One outcome per map feature that took part in the registration.
    pub outcomes: Vec<MatchOutcome>,
    pub correct_count: usize,
}

impl RegistrationResult {
    /// A failed registration over `map_size` features.
    pub fn failed(map_size: usize) -> Self {
        RegistrationResult {
            delta: None,
            histogram: Vec::new(),
            pairs: Vec::new(),
            outcomes: vec![MatchOutcome::NotMatched; map_size],
            correct_count: 0,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.delta.is_some()
    }

    pub fn count(&self, outcome: MatchOutcome) -> usize {
        self.outcomes.iter().filter(|&&o| o == outcome).count()
    }
}

fn check_widths<'a>(mut features: impl Iterator<Item = &'a Feature>) -> Result<Option<usize>> {
    let Some(first) = features.next() else {
        return Ok(None);
    };
    let width = first.descriptor.width();
    for f in features {
        if f.descriptor.width() != width {
            return Err(Error::WidthMismatch {
                left: width,
                right: f.descriptor.width(),
            });
        }
    }
    Ok(Some(width))
}

/// Mutual nearest neighbours under Hamming distance, kept when the distance
/// is at most `d_max`. Ties resolve to the lower index. Pairs come out in map
/// order.
pub fn match_features<M, V>(map: &[M], view: &[V], d_max: u32) -> Result<Vec<Match>>
where
    M: Borrow<Feature>,
    V: Borrow<Feature>,
{
    let map_width = check_widths(map.iter().map(Borrow::borrow))?;
    let view_width = check_widths(view.iter().map(Borrow::borrow))?;
    let (Some(mw), Some(vw)) = (map_width, view_width) else {
        return Ok(Vec::new());
    };
    if mw != vw {
        return Err(Error::WidthMismatch { left: mw, right: vw });
    }

    let mut row_best = vec![(u32::MAX, 0usize); map.len()];
    let mut col_best = vec![(u32::MAX, 0usize); view.len()];
    for (i, m) in map.iter().enumerate() {
        let md = &m.borrow().descriptor;
        let mut best = (u32::MAX, 0usize);
        for (j, v) in view.iter().enumerate() {
            let d = md.distance_unchecked(&v.borrow().descriptor);
            if d < best.0 {
                best = (d, j);
            }
            if d < col_best[j].0 {
                col_best[j] = (d, i);
            }
        }
        row_best[i] = best;
    }

    Ok(row_best
        .iter()
        .enumerate()
        .filter(|&(i, &(d, j))| d <= d_max && col_best[j].1 == i)
        .map(|(i, &(d, j))| Match {
            map_index: i,
            view_index: j,
            distance: d,
            dx: view[j].borrow().x - map[i].borrow().x,
        })
        .collect())
}

/// Bins the horizontal differences into bins `[k w, (k + 1) w)` covering
/// `[-W, W]` and returns the mean difference inside the fullest bin. Equal
/// counts go to the bin centre nearest zero, then to the lower bin.
pub fn histogram_vote(pairs: &[Match], bin_width: f64, image_width: f64) -> Result<Vote> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidInput(format!("bin width {bin_width} must be positive")));
    }
    if pairs.is_empty() {
        return Err(Error::NoConsensus);
    }
    let lo = (-image_width / bin_width).floor() as i64;
    let hi = (image_width / bin_width).ceil() as i64;
    let nbins = (hi - lo).max(1) as usize;
    let bin_of = |dx: f64| {
        let k = (dx / bin_width).floor() as i64;
        (k.clamp(lo, hi - 1) - lo) as usize
    };

    let mut counts = vec![0usize; nbins];
    let mut sums = vec![0.0f64; nbins];
    for p in pairs {
        let b = bin_of(p.dx);
        counts[b] += 1;
        sums[b] += p.dx;
    }
    let center = |b: usize| ((b as i64 + lo) as f64 + 0.5) * bin_width;

    let mut winner = 0;
    for b in 1..nbins {
        let better = counts[b] > counts[winner]
            || (counts[b] == counts[winner] && center(b).abs() < center(winner).abs());
        if better {
            winner = b;
        }
    }

    Ok(Vote {
        delta: sums[winner] / counts[winner] as f64,
        histogram: (0..nbins).map(|b| (center(b), counts[b])).collect(),
        winning_count: counts[winner],
    })
}

/// Labels each of `map_size` map features. Without a delta (failed
/// registration) every feature is not matched.
pub fn classify_outcomes(
    map_size: usize,
    pairs: &[Match],
    delta: Option<f64>,
    tolerance: f64,
) -> Result<Vec<MatchOutcome>> {
    let mut outcomes = vec![MatchOutcome::NotMatched; map_size];
    let Some(delta) = delta else {
        return Ok(outcomes);
    };
    for p in pairs {
        let slot = outcomes.get_mut(p.map_index).ok_or_else(|| {
            Error::InvalidInput(format!("pair map index {} >= map size {map_size}", p.map_index))
        })?;
        if *slot != MatchOutcome::NotMatched {
            return Err(Error::InvalidInput(format!(
                "map feature {} appears in two pairs",
                p.map_index
            )));
        }
        *slot = if (p.dx - delta).abs() <= tolerance {
            MatchOutcome::MatchedCorrectly
        } else {
            MatchOutcome::MatchedIncorrectly
        };
    }
    Ok(outcomes)
}

/// Full registration of a view against a set of map features.
pub fn register<M, V>(map: &[M], view: &[V], cfg: &RegistrationConfig, image_width: f64) -> Result<RegistrationResult>
where
    M: Borrow<Feature>,
    V: Borrow<Feature>,
{
    let width = map
        .first()
        .map(|f| f.borrow().descriptor.width())
        .or_else(|| view.first().map(|f| f.borrow().descriptor.width()))
        .unwrap_or(0);
    let pairs = match_features(map, view, cfg.d_max_for(width))?;
    let vote = match histogram_vote(&pairs, cfg.bin_width_px, image_width) {
        Ok(v) => v,
        Err(Error::NoConsensus) => return Ok(RegistrationResult::failed(map.len())),
        Err(e) => return Err(e),
    };
    let delta = (vote.winning_count >= cfg.min_votes).then_some(vote.delta);
    let outcomes = classify_outcomes(map.len(), &pairs, delta, cfg.tolerance())?;
    let correct_count = outcomes
        .iter()
        .filter(|&&o| o == MatchOutcome::MatchedCorrectly)
        .count();
    Ok(RegistrationResult {
        delta,
        histogram: vote.histogram,
        pairs,
        outcomes,
        correct_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{hamming_distance, Descriptor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(x: f64, d: Descriptor) -> Feature {
        Feature::new(x, 100.0, d)
    }

    fn pair(map_index: usize, dx: f64) -> Match {
        Match {
            map_index,
            view_index: map_index,
            distance: 0,
            dx,
        }
    }

    fn flip_n(d: &Descriptor, n: usize, rng: &mut ChaCha8Rng) -> Descriptor {
        let mut out = d.clone();
        let mut bits: Vec<usize> = (0..d.width()).collect();
        for k in 0..n {
            let j = rng.gen_range(k..bits.len());
            bits.swap(k, j);
            out.flip(bits[k]);
        }
        out
    }

    #[test]
    fn identical_sets_match_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs: Vec<Feature> = (0..10)
            .map(|i| feat(i as f64 * 10.0, Descriptor::random(256, &mut rng)))
            .collect();
        let pairs = match_features(&fs, &fs, 64).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.map_index == p.view_index && p.distance == 0));
    }

    #[test]
    fn threshold_excludes_distant_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Descriptor::random(256, &mut rng);
        let b = flip_n(&a, 80, &mut rng);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 80);
        let pairs = match_features(&[feat(0.0, a)], &[feat(0.0, b)], 64).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = [feat(0.0, Descriptor::zeros(256))];
        let v = [feat(0.0, Descriptor::zeros(128))];
        assert!(matches!(match_features(&m, &v, 64), Err(Error::WidthMismatch { .. })));
        assert!(match_features::<Feature, Feature>(&[], &[], 64).unwrap().is_empty());
    }

    /// All-pairs mutual nearest neighbour search written as a separate loop.
    fn mutual_nn_oracle(map: &[Feature], view: &[Feature], d_max: u32) -> Vec<(usize, usize)> {
        let dist = |i: usize, j: usize| hamming_distance(&map[i].descriptor, &view[j].descriptor).unwrap();
        let mut out = Vec::new();
        for i in 0..map.len() {
            let j = (0..view.len()).min_by_key(|&j| (dist(i, j), j)).unwrap();
            let back = (0..map.len()).min_by_key(|&k| (dist(k, j), k)).unwrap();
            if back == i && dist(i, j) <= d_max {
                out.push((i, j));
            }
        }
        out
    }

    #[test]
    fn planted_pairs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let map: Vec<Feature> = (0..5)
            .map(|i| feat(50.0 * i as f64, Descriptor::random(256, &mut rng)))
            .collect();
        // view: noisy copies of the five map features, shuffled among two decoys
        let mut view: Vec<Feature> = map
            .iter()
            .map(|f| feat(f.x + 7.0, flip_n(&f.descriptor, 10, &mut rng)))
            .collect();
        view.insert(2, feat(3.0, Descriptor::random(256, &mut rng)));
        view.push(feat(9.0, Descriptor::random(256, &mut rng)));

        let pairs = match_features(&map, &view, 64).unwrap();
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.map_index, p.view_index)).collect();
        assert_eq!(got, mutual_nn_oracle(&map, &view, 64));
        assert_eq!(got, vec![(0, 0), (1, 1), (2, 3), (3, 4), (4, 5)]);
        assert!(pairs.iter().all(|p| p.dx == 7.0));
    }

    #[test]
    fn degenerate_histogram() {
        let pairs: Vec<Match> = (0..5).map(|i| pair(i, 7.0)).collect();
        let v = histogram_vote(&pairs, 10.0, 640.0).unwrap();
        assert_eq!(v.delta, 7.0);
        assert_eq!(v.winning_count, 5);
    }

    #[test]
    fn winning_bin_mean() {
        let dxs = [12.0, 13.0, 11.0, 55.0, 12.0, -40.0];
        let pairs: Vec<Match> = dxs.iter().enumerate().map(|(i, &d)| pair(i, d)).collect();
        let v = histogram_vote(&pairs, 10.0, 640.0).unwrap();
        // by hand: [10,20) holds 12, 13, 11, 12
        assert_eq!(v.winning_count, 4);
        assert_eq!(v.delta, 12.0);
        let (c, n) = v.histogram.iter().find(|(c, _)| *c == 15.0).unwrap();
        assert_eq!((*c, *n), (15.0, 4));
        assert_eq!(v.histogram.len(), 128);
    }

    #[test]
    fn empty_vote_is_no_consensus() {
        assert!(matches!(histogram_vote(&[], 10.0, 640.0), Err(Error::NoConsensus)));
        assert!(histogram_vote(&[pair(0, 1.0)], 0.0, 640.0).is_err());
    }

    #[test]
    fn ties_prefer_small_shift() {
        let pairs = vec![pair(0, 31.0), pair(1, 32.0), pair(2, -4.0), pair(3, -3.0)];
        let v = histogram_vote(&pairs, 10.0, 640.0).unwrap();
        assert_eq!(v.delta, -3.5);
        // symmetric centres -5 / +5: the lower bin wins
        let pairs = vec![pair(0, 4.0), pair(1, -4.0)];
        assert_eq!(histogram_vote(&pairs, 10.0, 640.0).unwrap().delta, -4.0);
    }

    #[test]
    fn outcome_classification() {
        let pairs: Vec<Match> = (0..3).map(|i| pair(i, 5.0)).collect();
        let o = classify_outcomes(3, &pairs, Some(5.0), 10.0).unwrap();
        assert!(o.iter().all(|&x| x == MatchOutcome::MatchedCorrectly));

        let o = classify_outcomes(1, &[pair(0, 30.0)], Some(5.0), 10.0).unwrap();
        assert_eq!(o, vec![MatchOutcome::MatchedIncorrectly]);

        let o = classify_outcomes(3, &pairs, None, 10.0).unwrap();
        assert!(o.iter().all(|&x| x == MatchOutcome::NotMatched));

        assert!(classify_outcomes(2, &[pair(5, 0.0)], Some(0.0), 10.0).is_err());
        assert!(classify_outcomes(2, &[pair(1, 0.0), pair(1, 0.0)], Some(0.0), 10.0).is_err());
    }

    #[test]
    fn mixed_outcomes_match_per_feature_loop() {
        let pairs = vec![pair(0, 10.0), pair(2, 14.0), pair(3, 9.0), pair(5, 40.0)];
        let delta = 11.0;
        let got = classify_outcomes(6, &pairs, Some(delta), 10.0).unwrap();
        let oracle: Vec<MatchOutcome> = (0..6)
            .map(|i| match pairs.iter().find(|p| p.map_index == i) {
                None => MatchOutcome::NotMatched,
                Some(p) if (p.dx - delta).abs() <= 10.0 => MatchOutcome::MatchedCorrectly,
                Some(_) => MatchOutcome::MatchedIncorrectly,
            })
            .collect();
        assert_eq!(got, oracle);
        let count = |o| got.iter().filter(|&&x| x == o).count();
        assert_eq!(count(MatchOutcome::MatchedCorrectly), 3);
        assert_eq!(count(MatchOutcome::MatchedIncorrectly), 1);
        assert_eq!(count(MatchOutcome::NotMatched), 2);
    }

    #[test]
    fn too_few_votes_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map: Vec<Feature> = (0..2).map(|i| feat(i as f64, Descriptor::random(256, &mut rng))).collect();
        let r = register(&map, &map, &RegistrationConfig::default(), 640.0).unwrap();
        assert!(!r.succeeded());
        assert_eq!(r.outcomes, vec![MatchOutcome::NotMatched; 2]);
        assert_eq!(r.correct_count, 0);
    }

    fn scene(seed: u64, n: usize, shift: f64, noise_bits: usize) -> (Vec<Feature>, Vec<Feature>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map: Vec<Feature> = (0..n)
            .map(|_| feat(rng.gen_range(120.0..520.0), Descriptor::random(256, &mut rng)))
            .collect();
        let view = map
            .iter()
            .map(|f| feat(f.x + shift, flip_n(&f.descriptor, noise_bits, &mut rng)))
            .collect();
        (map, view)
    }

    proptest! {
        #[test]
        fn planted_shift_is_recovered(seed in any::<u64>(), shift in -100.0f64..100.0) {
            let (map, view) = scene(seed, 40, shift, 5);
            let r = register(&map, &view, &RegistrationConfig::default(), 640.0).unwrap();
            prop_assert!((r.delta.unwrap() - shift).abs() <= 10.0);
            prop_assert_eq!(r.correct_count, 40);
        }

        #[test]
        fn shift_equivariance(seed in any::<u64>(), shift in -50.0f64..50.0, s in -20.0f64..20.0) {
            let (map, view) = scene(seed, 30, shift, 5);
            let moved: Vec<Feature> = view.iter().map(|f| feat(f.x + s, f.descriptor.clone())).collect();
            let cfg = RegistrationConfig::default();
            let a = register(&map, &view, &cfg, 640.0).unwrap();
            let b = register(&map, &moved, &cfg, 640.0).unwrap();
            prop_assert!((b.delta.unwrap() - a.delta.unwrap() - s).abs() <= 10.0);
            prop_assert_eq!(a.outcomes, b.outcomes);
        }

        #[test]
        fn outcomes_partition_map(seed in any::<u64>(), n in 1usize..40) {
            let (map, mut view) = scene(seed, n, 0.0, 40);
            view.truncate(n / 2 + 1);
            let r = register(&map, &view, &RegistrationConfig::default(), 640.0).unwrap();
            let total = r.count(MatchOutcome::NotMatched)
                + r.count(MatchOutcome::MatchedCorrectly)
                + r.count(MatchOutcome::MatchedIncorrectly);
            prop_assert_eq!(total, n);
            prop_assert_eq!(r.correct_count, r.count(MatchOutcome::MatchedCorrectly));
            let mut seen = std::collections::HashSet::new();
            prop_assert!(r.pairs.iter().all(|p| seen.insert(p.map_index)));
        }
    }
}
