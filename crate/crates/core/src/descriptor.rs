//! Fixed-width binary descriptors compared by Hamming distance.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// BRIEF-256 convention.
pub const DEFAULT_WIDTH: usize = 256;

type Words = SmallVec<[u64; 4]>;

/// A bit vector of `width` bits. Bit `i` lives in word `i / 64` at position
/// `i % 64`; bits past `width` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Descriptor {
    words: Words,
    width: usize,
}

fn word_count(width: usize) -> usize {
    width.div_ceil(64)
}

impl Descriptor {
    pub fn zeros(width: usize) -> Self {
        Descriptor {
            words: SmallVec::from_elem(0, word_count(width)),
            width,
        }
    }

    /// Builds a descriptor of `width <= 64` bits from the low bits of `value`.
    pub fn from_u64(value: u64, width: usize) -> Result<Self> {
        if width == 0 || width > 64 {
            return Err(Error::InvalidInput(format!(
                "from_u64 needs 1..=64 bits, got {width}"
            )));
        }
        let mut d = Descriptor::zeros(width);
        d.words[0] = value;
        d.mask_tail();
        Ok(d)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut d = Descriptor::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                d.words[i / 64] |= 1 << (i % 64);
            }
        }
        d
    }

    pub fn random<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let mut d = Descriptor {
            words: (0..word_count(width)).map(|_| rng.gen::<u64>()).collect(),
            width,
        };
        d.mask_tail();
        d
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, bit: usize) -> bool {
        assert!(bit < self.width, "bit {bit} out of range");
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn flip(&mut self, bit: usize) {
        assert!(bit < self.width, "bit {bit} out of range");
        self.words[bit / 64] ^= 1 << (bit % 64);
    }

    pub fn complement(&self) -> Self {
        let mut d = Descriptor {
            words: self.words.iter().map(|w| !w).collect(),
            width: self.width,
        };
        d.mask_tail();
        d
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Flips each bit independently with probability `p`, drawing the gaps
    /// between flipped bits from a geometric distribution.
    pub fn perturbed<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Self {
        let mut d = self.clone();
        if p <= 0.0 {
            return d;
        }
        let gaps = Geometric::new(p.min(1.0)).expect("probability in (0, 1]");
        let mut bit = gaps.sample(rng);
        while bit < self.width as u64 {
            d.flip(bit as usize);
            bit = bit.saturating_add(1 + gaps.sample(rng));
        }
        d
    }

    /// Hamming distance without the width check. Callers guarantee equal widths.
    #[inline]
    pub(crate) fn distance_unchecked(&self, other: &Descriptor) -> u32 {
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Lowercase hex, most significant nibble first, `width / 4` characters.
    pub fn to_hex(&self) -> String {
        let nibbles = self.width.div_ceil(4);
        let mut out = String::with_capacity(nibbles);
        for n in (0..nibbles).rev() {
            let bit = n * 4;
            let nibble = (self.words[bit / 64] >> (bit % 64)) & 0xf;
            out.push(char::from_digit(nibble as u32, 16).unwrap());
        }
        out
    }

    /// Parses the [`to_hex`](Self::to_hex) form; the width is four bits per character.
    pub fn from_hex(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidInput("empty descriptor".into()));
        }
        let width = s.len() * 4;
        let mut d = Descriptor::zeros(width);
        for (i, c) in s.chars().rev().enumerate() {
            let nibble = c
                .to_digit(16)
                .filter(|_| !c.is_ascii_uppercase())
                .ok_or_else(|| Error::InvalidInput(format!("bad hex digit {c:?} in descriptor")))?;
            let bit = i * 4;
            d.words[bit / 64] |= (nibble as u64) << (bit % 64);
        }
        Ok(d)
    }

    fn mask_tail(&mut self) {
        let rem = self.width % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Descriptor({}:{})", self.width, self.to_hex())
    }
}

impl Serialize for Descriptor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Descriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Descriptor::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Number of differing bits between `a` and `b`.
pub fn hamming_distance(a: &Descriptor, b: &Descriptor) -> Result<u32> {
    if a.width != b.width {
        return Err(Error::WidthMismatch {
            left: a.width,
            right: b.width,
        });
    }
    Ok(a.distance_unchecked(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_distance(a: &Descriptor, b: &Descriptor) -> u32 {
        (0..a.width()).filter(|&i| a.get(i) != b.get(i)).count() as u32
    }

    #[test]
    fn identity_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Descriptor::random(256, &mut rng);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &a.complement()).unwrap(), 256);
    }

    #[test]
    fn small_width_example() {
        let a = Descriptor::from_u64(0b1010, 4).unwrap();
        let b = Descriptor::from_u64(0b0110, 4).unwrap();
        assert_eq!(hamming_distance(&a, &b).unwrap(), 2);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let a = Descriptor::zeros(256);
        let b = Descriptor::zeros(128);
        assert!(matches!(
            hamming_distance(&a, &b),
            Err(Error::WidthMismatch { left: 256, right: 128 })
        ));
    }

    #[test]
    fn exhaustive_width_8_matches_per_bit_loop() {
        for x in 0u64..256 {
            for y in 0u64..256 {
                let a = Descriptor::from_u64(x, 8).unwrap();
                let b = Descriptor::from_u64(y, 8).unwrap();
                assert_eq!(hamming_distance(&a, &b).unwrap(), naive_distance(&a, &b));
            }
        }
    }

    #[test]
    fn width_16_pairs_match_per_bit_loop() {
        // every a against a spread of b's: 65536 x 257 pairs
        for x in 0u64..(1 << 16) {
            let a = Descriptor::from_u64(x, 16).unwrap();
            for y in (0u64..(1 << 16)).step_by(255) {
                let b = Descriptor::from_u64(y, 16).unwrap();
                assert_eq!(hamming_distance(&a, &b).unwrap(), naive_distance(&a, &b));
            }
        }
    }

    #[test]
    fn random_256_bit_pairs_match_per_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10_000 {
            let a = Descriptor::random(256, &mut rng);
            let b = Descriptor::random(256, &mut rng);
            assert_eq!(hamming_distance(&a, &b).unwrap(), naive_distance(&a, &b));
        }
    }

    #[test]
    fn hex_layout() {
        let a = Descriptor::from_u64(0b1010, 4).unwrap();
        assert_eq!(a.to_hex(), "a");
        let b = Descriptor::from_u64(0x1f, 8).unwrap();
        assert_eq!(b.to_hex(), "1f");
        assert_eq!(Descriptor::zeros(256).to_hex().len(), 64);
        assert!(Descriptor::from_hex("1F").is_err());
        assert!(Descriptor::from_hex("xz").is_err());
    }

    #[test]
    fn perturbation_flip_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Descriptor::random(256, &mut rng);
        assert_eq!(a.perturbed(0.0, &mut rng), a);
        assert_eq!(a.perturbed(1.0, &mut rng), a.complement());
        // 2000 draws x 256 bits at p = 0.02: mean 5.12 flips, sd of the mean ~0.05
        let total: u32 = (0..2000)
            .map(|_| hamming_distance(&a, &a.perturbed(0.02, &mut rng)).unwrap())
            .sum();
        let mean = total as f64 / 2000.0;
        assert!((mean - 5.12).abs() < 0.25, "{mean}");
    }

    proptest! {
        #[test]
        fn hex_round_trip_and_metric(seed in any::<u64>(), nibbles in 1usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Descriptor::random(nibbles * 4, &mut rng);
            let b = Descriptor::random(nibbles * 4, &mut rng);
            prop_assert_eq!(Descriptor::from_hex(&a.to_hex()).unwrap(), a.clone());
            let ab = hamming_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming_distance(&b, &a).unwrap());
            prop_assert!(ab as usize <= a.width());
            prop_assert_eq!(ab == 0, a == b);
        }
    }
}
