//! Exact and locality-sensitive media fingerprints.
//!
//! A medium is identified by a [`MediaFingerprint`]: the SHA-256 digest of its
//! bytes ([`HashId`]) and a 64-bit SimHash over character shingles
//! ([`SimHashValue`]). Near-duplicates land at small hamming distance; the
//! [`SimilarityModel`] maps a distance back onto an expected text similarity so
//! a piracy [`Threshold`] can be chosen from data instead of guessed.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FingerprintError {
    #[error("content is not valid UTF-8 text (first bad byte at offset {0})")]
    Encoding(usize),
    #[error("input is empty or whitespace-only")]
    EmptyInput,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("regression needs at least two samples with two distinct distances")]
    DegenerateSamples,
    #[error("similarity model has non-negative slope {0}; no threshold can be derived")]
    NonDecreasingModel(f64),
    #[error("no distance in 0..=64 reaches similarity {0}")]
    UnreachableSimilarity(f64),
}

/// 256-bit SHA-256 digest of a medium's bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HashId(pub [u8; 32]);

impl HashId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Strict lowercase-hex parse; anything that would not re-encode to the
    /// same text is rejected so serialized records stay canonical.
    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return None;
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for HashId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashId({})", self.to_hex())
    }
}

impl fmt::Display for HashId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for HashId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HashId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        HashId::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 lowercase hex chars"))
    }
}

/// 64-bit SimHash fingerprint.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SimHashValue(pub u64);

impl SimHashValue {
    pub fn distance(self, other: SimHashValue) -> HammingDistance {
        hamming_distance(self, other)
    }
}

impl fmt::Debug for SimHashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SimHashValue({:016x})", self.0)
    }
}

impl fmt::Display for SimHashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for SimHashValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0))
    }
}

impl<'de> Deserialize<'de> for SimHashValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 || s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(serde::de::Error::custom("expected 16 lowercase hex chars"));
        }
        u64::from_str_radix(&s, 16)
            .map(SimHashValue)
            .map_err(serde::de::Error::custom)
    }
}

/// Number of differing bits between two fingerprints, always in `0..=64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HammingDistance(u32);

impl HammingDistance {
    pub const MAX: u32 = 64;

    pub fn new(value: u32) -> Option<Self> {
        (value <= Self::MAX).then_some(Self(value))
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

/// Maximum hamming distance still judged partial piracy. Inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Threshold(u32);

impl Threshold {
    /// Used when no calibration has been run.
    pub const DEFAULT: Threshold = Threshold(7);

    pub fn new(theta: u32) -> Option<Self> {
        (theta <= HammingDistance::MAX).then_some(Self(theta))
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn admits(self, distance: HammingDistance) -> bool {
        distance.0 <= self.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<u32> for Threshold {
    type Error = String;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Threshold::new(v).ok_or_else(|| format!("threshold {v} exceeds 64"))
    }
}

impl From<Threshold> for u32 {
    fn from(t: Threshold) -> u32 {
        t.0
    }
}

impl FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: u32 = s.parse().map_err(|e| format!("{e}"))?;
        Threshold::try_from(v)
    }
}

/// How shingle occurrences are weighted before accumulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weight is the shingle's occurrence count.
    #[default]
    TermFrequency,
    /// Every distinct shingle weighs 1.
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimHashParams {
    pub shingle_width: usize,
    #[serde(default)]
    pub weighting: Weighting,
}

impl SimHashParams {
    pub const FEATURE_HASH_BITS: u32 = 64;

    pub fn new(shingle_width: usize, weighting: Weighting) -> Result<Self, FingerprintError> {
        if shingle_width == 0 {
            return Err(FingerprintError::InvalidParameter("shingle_width must be >= 1"));
        }
        Ok(Self {
            shingle_width,
            weighting,
        })
    }
}

impl Default for SimHashParams {
    fn default() -> Self {
        Self {
            shingle_width: 4,
            weighting: Weighting::TermFrequency,
        }
    }
}

/// The (hashID, lshv) pair identifying one medium.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MediaFingerprint {
    pub hash_id: HashId,
    pub lshv: SimHashValue,
}

impl MediaFingerprint {
    pub fn of(content: &[u8], params: &SimHashParams) -> Result<Self, FingerprintError> {
        Ok(Self {
            hash_id: compute_hash_id(content),
            lshv: simhash(content, params)?,
        })
    }
}

pub fn compute_hash_id(content: &[u8]) -> HashId {
    HashId(Sha256::digest(content).into())
}

/// 64-bit hash of one shingle: FNV-1a followed by the SplitMix64 finalizer
/// so that short, similar shingles still spread over all 64 bits.
pub fn feature_hash(feature: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in feature.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn decode(content: &[u8]) -> Result<&str, FingerprintError> {
    std::str::from_utf8(content).map_err(|e| FingerprintError::Encoding(e.valid_up_to()))
}

/// Lowercases and collapses every whitespace run to one space.
fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(c.to_lowercase());
    }
    out
}

/// Character shingles of the normalized text. Texts shorter than the window
/// yield one shingle holding the whole text.
pub fn shingles(text: &str, width: usize) -> Vec<String> {
    let chars = normalize(text);
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() <= width {
        return vec![chars.iter().collect()];
    }
    chars.windows(width).map(|w| w.iter().collect()).collect()
}

/// SimHash of UTF-8 `content`.
///
/// Each character shingle is hashed to 64 bits and weighted by
/// [`SimHashParams::weighting`]; per-bit signed sums are accumulated and the
/// output bit is set where the sum is positive.
pub fn simhash(content: &[u8], params: &SimHashParams) -> Result<SimHashValue, FingerprintError> {
    simhash_str(decode(content)?, params)
}

pub fn simhash_str(text: &str, params: &SimHashParams) -> Result<SimHashValue, FingerprintError> {
    if params.shingle_width == 0 {
        return Err(FingerprintError::InvalidParameter("shingle_width must be >= 1"));
    }
    let feats = shingles(text, params.shingle_width);
    if feats.is_empty() {
        return Err(FingerprintError::EmptyInput);
    }
    let mut counts: HashMap<&str, i64> = HashMap::with_capacity(feats.len());
    for f in &feats {
        *counts.entry(f.as_str()).or_insert(0) += 1;
    }
    let mut acc = [0i64; 64];
    for (feat, tf) in counts {
        let w = match params.weighting {
            Weighting::TermFrequency => tf,
            Weighting::Binary => 1,
        };
        let h = feature_hash(feat);
        for (bit, slot) in acc.iter_mut().enumerate() {
            if h >> bit & 1 == 1 {
                *slot += w;
            } else {
                *slot -= w;
            }
        }
    }
    let value = acc
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .fold(0u64, |v, (bit, _)| v | 1 << bit);
    Ok(SimHashValue(value))
}

pub fn hamming_distance(a: SimHashValue, b: SimHashValue) -> HammingDistance {
    HammingDistance((a.0 ^ b.0).count_ones())
}

fn char_trigrams(text: &str) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() < 3 {
        return if chars.is_empty() {
            HashSet::new()
        } else {
            HashSet::from([chars.iter().collect()])
        };
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Jaccard similarity over character 3-shingle sets, in `[0, 1]`.
///
/// Operates on the raw text (no normalization). Two empty texts are
/// identical and score 1.
pub fn reference_similarity(a: &[u8], b: &[u8]) -> Result<f64, FingerprintError> {
    Ok(reference_similarity_str(decode(a)?, decode(b)?))
}

pub fn reference_similarity_str(a: &str, b: &str) -> f64 {
    let sa = char_trigrams(a);
    let sb = char_trigrams(b);
    let (small, large) = if sa.len() <= sb.len() { (&sa, &sb) } else { (&sb, &sa) };
    let inter = small.iter().filter(|s| large.contains(*s)).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Applies `ceil(edit_rate * len)` random single-character insertions,
/// deletions and substitutions, where `len` counts characters.
///
/// Inserted and substituted characters are drawn from the text's own
/// character inventory so the edit stays within the text's script.
/// Deterministic in `(text, edit_rate, seed)`. A deletion that would empty
/// the text is replaced by a substitution.
pub fn perturb_text(text: &str, edit_rate: f64, seed: u64) -> Result<String, FingerprintError> {
    if text.is_empty() {
        return Err(FingerprintError::EmptyInput);
    }
    if !(edit_rate > 0.0 && edit_rate <= 1.0) {
        return Err(FingerprintError::InvalidParameter("edit_rate must be in (0, 1]"));
    }
    let mut chars: Vec<char> = text.chars().collect();
    let mut inventory: Vec<char> = chars.clone();
    inventory.sort_unstable();
    inventory.dedup();
    let edits = (edit_rate * chars.len() as f64).ceil() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..edits {
        match rng.gen_range(0..3u8) {
            0 => {
                let at = rng.gen_range(0..=chars.len());
                let c = inventory[rng.gen_range(0..inventory.len())];
                chars.insert(at, c);
            }
            1 if chars.len() > 1 => {
                let at = rng.gen_range(0..chars.len());
                chars.remove(at);
            }
            _ => {
                let at = rng.gen_range(0..chars.len());
                chars[at] = if inventory.len() == 1 {
                    // nothing else to substitute with; fall back to a duplicate
                    inventory[0]
                } else {
                    let old = chars[at];
                    loop {
                        let c = inventory[rng.gen_range(0..inventory.len())];
                        if c != old {
                            break c;
                        }
                    }
                };
            }
        }
    }
    Ok(chars.into_iter().collect())
}

/// One (distance, similarity) observation for the regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySample {
    pub distance: HammingDistance,
    pub similarity: f64,
}

impl SimilaritySample {
    pub fn new(distance: HammingDistance, similarity: f64) -> Result<Self, FingerprintError> {
        if !(0.0..=1.0).contains(&similarity) {
            return Err(FingerprintError::InvalidParameter("similarity must be in [0, 1]"));
        }
        Ok(Self { distance, similarity })
    }
}

/// Least-squares line `similarity ~ slope * distance + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityModel {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sample_count: usize,
}

impl SimilarityModel {
    pub fn from_line(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            r_squared: 1.0,
            sample_count: 2,
        }
    }
}

pub fn fit_similarity_model(samples: &[SimilaritySample]) -> Result<SimilarityModel, FingerprintError> {
    if samples.len() < 2 {
        return Err(FingerprintError::DegenerateSamples);
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| f64::from(s.distance.value())).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.similarity).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in samples {
        let dx = f64::from(s.distance.value()) - mean_x;
        let dy = s.similarity - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(FingerprintError::DegenerateSamples);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    // constant response is fitted exactly
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(SimilarityModel {
        slope,
        intercept,
        r_squared,
        sample_count: samples.len(),
    })
}

pub fn predict_similarity(model: &SimilarityModel, distance: HammingDistance) -> f64 {
    (model.slope * f64::from(distance.value()) + model.intercept).clamp(0.0, 1.0)
}

/// Largest θ whose predicted similarity still reaches `min_pirate_similarity`.
pub fn calibrate_threshold(model: &SimilarityModel, min_pirate_similarity: f64) -> Result<Threshold, FingerprintError> {
    if model.slope.is_nan() || model.slope >= 0.0 {
        return Err(FingerprintError::NonDecreasingModel(model.slope));
    }
    if !(min_pirate_similarity > 0.0 && min_pirate_similarity <= 1.0) {
        return Err(FingerprintError::InvalidParameter(
            "min_pirate_similarity must be in (0, 1]",
        ));
    }
    let reaches = |t: u32| predict_similarity(model, HammingDistance(t)) >= min_pirate_similarity;
    // Solve slope*t + intercept >= min for t, then correct for rounding at
    // the boundary.
    let estimate = ((min_pirate_similarity - model.intercept) / model.slope).floor();
    let mut theta = estimate.clamp(0.0, 64.0) as u32;
    while theta < 64 && reaches(theta + 1) {
        theta += 1;
    }
    while theta > 0 && !reaches(theta) {
        theta -= 1;
    }
    if !reaches(theta) {
        return Err(FingerprintError::UnreachableSimilarity(min_pirate_similarity));
    }
    Ok(Threshold(theta))
}

/// Sample Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(slope: f64, intercept: f64) -> SimilarityModel {
        SimilarityModel::from_line(slope, intercept)
    }

    fn d(v: u32) -> HammingDistance {
        HammingDistance::new(v).unwrap()
    }

    #[test]
    fn hash_id_is_deterministic_and_sensitive() {
        let a = compute_hash_id(b"some media");
        assert_eq!(a, compute_hash_id(b"some media"));
        assert_ne!(a, compute_hash_id(b"some medib"));
    }

    #[test]
    fn hash_id_hex_is_strict() {
        let h = compute_hash_id(b"x");
        assert_eq!(HashId::from_hex(&h.to_hex()), Some(h));
        assert_eq!(HashId::from_hex(&h.to_hex().to_uppercase()), None);
        assert_eq!(HashId::from_hex("00"), None);
    }

    #[test]
    fn single_feature_text_equals_feature_hash() {
        let params = SimHashParams::default();
        assert_eq!(simhash_str("abcd", &params).unwrap().0, feature_hash("abcd"));
        // one distinct shingle repeated still forces the same sign pattern
        let p1 = SimHashParams::new(1, Weighting::TermFrequency).unwrap();
        assert_eq!(simhash_str("zzzz", &p1).unwrap().0, feature_hash("z"));
    }

    #[test]
    fn simhash_rejects_empty_and_binary() {
        let params = SimHashParams::default();
        assert_eq!(simhash(b"", &params), Err(FingerprintError::EmptyInput));
        assert_eq!(simhash(b" \t\n ", &params), Err(FingerprintError::EmptyInput));
        assert_eq!(
            simhash(&[0x61, 0xff, 0x62], &params),
            Err(FingerprintError::Encoding(1))
        );
        assert!(SimHashParams::new(0, Weighting::Binary).is_err());
    }

    #[test]
    fn normalization_ignores_case_and_spacing() {
        let params = SimHashParams::default();
        assert_eq!(
            simhash_str("The  quick\nbrown fox", &params),
            simhash_str("the quick brown FOX  ", &params)
        );
    }

    #[test]
    fn hamming_identity_and_complement() {
        let x = SimHashValue(0x0123_4567_89ab_cdef);
        assert_eq!(hamming_distance(x, x).value(), 0);
        assert_eq!(hamming_distance(SimHashValue(0), SimHashValue(u64::MAX)).value(), 64);
    }

    #[test]
    fn reference_similarity_edges() {
        assert_eq!(reference_similarity_str("hello world", "hello world"), 1.0);
        assert_eq!(reference_similarity_str("aaaa", "bbbb"), 0.0);
        // {abc, bcd} vs {bcd, cde}: 1 shared of 3
        assert!((reference_similarity_str("abcd", "bcde") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(reference_similarity_str("", ""), 1.0);
        assert!(reference_similarity(b"ok", &[0xc3]).is_err());
    }

    #[test]
    fn perturb_errors() {
        assert_eq!(perturb_text("", 0.5, 1), Err(FingerprintError::EmptyInput));
        assert!(perturb_text("abc", 0.0, 1).is_err());
        assert!(perturb_text("abc", 1.5, 1).is_err());
        assert_eq!(
            perturb_text("abc", 1.0, 9).unwrap(),
            perturb_text("abc", 1.0, 9).unwrap()
        );
    }

    #[test]
    fn exact_linear_fit() {
        let samples: Vec<_> = (0..=64)
            .step_by(4)
            .map(|l| SimilaritySample::new(d(l), 1.0 - f64::from(l) / 64.0).unwrap())
            .collect();
        let m = fit_similarity_model(&samples).unwrap();
        assert!((m.slope + 1.0 / 64.0).abs() < 1e-12);
        assert!((m.intercept - 1.0).abs() < 1e-12);
        assert!((m.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(m.sample_count, samples.len());
    }

    #[test]
    fn constant_response_fit() {
        let samples: Vec<_> = [1, 5, 9, 30]
            .iter()
            .map(|&l| SimilaritySample::new(d(l), 0.4).unwrap())
            .collect();
        let m = fit_similarity_model(&samples).unwrap();
        assert_eq!(m.slope, 0.0);
        assert!((m.intercept - 0.4).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fit_rejected() {
        let same: Vec<_> = (0..5)
            .map(|i| SimilaritySample::new(d(3), 0.1 * f64::from(i)).unwrap())
            .collect();
        assert_eq!(fit_similarity_model(&same), Err(FingerprintError::DegenerateSamples));
        assert_eq!(
            fit_similarity_model(&same[..1]),
            Err(FingerprintError::DegenerateSamples)
        );
    }

    #[test]
    fn prediction_is_clamped() {
        let m = model(-1.0 / 64.0, 1.0);
        assert_eq!(predict_similarity(&m, d(0)), 1.0);
        assert_eq!(predict_similarity(&m, d(64)), 0.0);
        assert_eq!(predict_similarity(&model(-0.1, 1.0), d(64)), 0.0);
    }

    #[test]
    fn threshold_from_exact_model() {
        let m = model(-1.0 / 64.0, 1.0);
        assert_eq!(calibrate_threshold(&m, 0.875).unwrap(), Threshold(8));
        assert_eq!(calibrate_threshold(&m, 1.0).unwrap(), Threshold(0));
        assert_eq!(
            calibrate_threshold(&model(0.0, 1.0), 0.8),
            Err(FingerprintError::NonDecreasingModel(0.0))
        );
        assert_eq!(
            calibrate_threshold(&model(-0.01, 0.5), 0.8),
            Err(FingerprintError::UnreachableSimilarity(0.8))
        );
        // a shallow line keeps every distance above the bar
        assert_eq!(calibrate_threshold(&model(-1e-6, 1.0), 0.8).unwrap(), Threshold(64));
    }

    #[test]
    fn threshold_is_inclusive() {
        let t = Threshold::new(8).unwrap();
        assert!(t.admits(d(8)));
        assert!(!t.admits(d(9)));
        assert!(Threshold::new(65).is_none());
        assert_eq!("12".parse::<Threshold>().unwrap().value(), 12);
    }

    #[test]
    fn serde_forms_are_hex() {
        let v = SimHashValue(0xff);
        assert_eq!(serde_json::to_string(&v).unwrap(), "\"00000000000000ff\"");
        assert!(serde_json::from_str::<SimHashValue>("\"00000000000000FF\"").is_err());
        assert!(serde_json::from_str::<Threshold>("65").is_err());
    }
}
