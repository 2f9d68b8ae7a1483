//! Distance-to-similarity calibration over a text corpus.
//!
//! Every selected base paragraph contributes an anchor pair (the paragraph
//! against an exact re-submission of itself). A random subset is then
//! enhanced with random character edits and paired with its source. The
//! resulting `(hamming distance, similarity)` cloud is fitted with OLS and the
//! fitted line picks the piracy threshold.

use std::io::{self, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{
    calibrate_threshold, fit_similarity_model, hamming_distance, perturb_text, reference_similarity_str, simhash_str,
    FingerprintError, SimHashParams, SimilarityModel, SimilaritySample, Threshold,
};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("corpus has {available} usable paragraphs, {required} required")]
    CorpusTooSmall { available: usize, required: usize },
    #[error("cannot enhance {requested} paragraphs out of {available} base paragraphs")]
    TooManyPerturbed { requested: usize, available: usize },
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_base: usize,
    pub n_perturbed: usize,
    pub seed: u64,
    /// Enhancement edit rates are drawn uniformly from `(0, max_edit_rate]`.
    pub max_edit_rate: f64,
    pub min_pirate_similarity: f64,
    pub params: SimHashParams,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_base: 1000,
            n_perturbed: 500,
            seed: 0,
            max_edit_rate: 0.3,
            min_pirate_similarity: 0.8,
            params: SimHashParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub samples: Vec<SimilaritySample>,
    pub model: SimilarityModel,
    pub threshold: Threshold,
}

/// Builds the sample cloud without fitting it.
pub fn build_samples(corpus: &[String], config: &CalibrationConfig) -> Result<Vec<SimilaritySample>, CalibrationError> {
    if corpus.len() < config.n_base || config.n_base == 0 {
        return Err(CalibrationError::CorpusTooSmall {
            available: corpus.len(),
            required: config.n_base.max(1),
        });
    }
    if config.n_perturbed > config.n_base {
        return Err(CalibrationError::TooManyPerturbed {
            requested: config.n_perturbed,
            available: config.n_base,
        });
    }
    if !(config.max_edit_rate > 0.0 && config.max_edit_rate <= 1.0) {
        return Err(FingerprintError::InvalidParameter("max_edit_rate must be in (0, 1]").into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut base: Vec<usize> = sample(&mut rng, corpus.len(), config.n_base).into_vec();
    base.sort_unstable();
    let base_hashes = base
        .iter()
        .map(|&i| simhash_str(&corpus[i], &config.params))
        .collect::<Result<Vec<_>, _>>()?;

    let mut samples = Vec::with_capacity(config.n_base + config.n_perturbed);
    for (&i, &h) in base.iter().zip(&base_hashes) {
        let resubmitted = simhash_str(&corpus[i], &config.params)?;
        let sim = reference_similarity_str(&corpus[i], &corpus[i]);
        samples.push(SimilaritySample::new(hamming_distance(h, resubmitted), sim)?);
    }

    let chosen = sample(&mut rng, base.len(), config.n_perturbed).into_vec();
    for slot in chosen {
        let source = &corpus[base[slot]];
        // (0, max] rather than [0, max): a zero rate is not an enhancement
        let rate = config.max_edit_rate * (1.0 - rng.gen::<f64>());
        let edit_seed = rng.gen::<u64>();
        let enhanced = perturb_text(source, rate, edit_seed)?;
        let distance = hamming_distance(base_hashes[slot], simhash_str(&enhanced, &config.params)?);
        samples.push(SimilaritySample::new(
            distance,
            reference_similarity_str(source, &enhanced),
        )?);
    }
    Ok(samples)
}

pub fn calibrate(corpus: &[String], config: &CalibrationConfig) -> Result<Calibration, CalibrationError> {
    let samples = build_samples(corpus, config)?;
    let model = fit_similarity_model(&samples)?;
    let threshold = calibrate_threshold(&model, config.min_pirate_similarity)?;
    Ok(Calibration {
        samples,
        model,
        threshold,
    })
}

/// Writes `distance,similarity` rows with a fixed float format so repeated
/// runs are byte-identical.
pub fn write_samples_csv<W: Write>(mut out: W, samples: &[SimilaritySample]) -> io::Result<()> {
    writeln!(out, "distance,similarity")?;
    for s in samples {
        writeln!(out, "{},{:.12}", s.distance.value(), s.similarity)?;
    }
    Ok(())
}

/// Mean similarity per distance quantile bin.
///
/// Cut points are the `k/bins` quantiles of the observed distances; repeated
/// cut points (ties, e.g. the zero-distance anchors) are merged so no bin is
/// empty. Each entry is `(upper distance bound, sample count, mean similarity)`
/// in increasing distance order.
pub fn quantile_mean_similarity(samples: &[SimilaritySample], bins: usize) -> Vec<(u32, usize, f64)> {
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<u32> = samples.iter().map(|s| s.distance.value()).collect();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut edges: Vec<u32> = (1..bins).map(|k| sorted[(k * n / bins).min(n - 1)]).collect();
    edges.push(sorted[n - 1]);
    edges.dedup();
    let mut acc = vec![(0usize, 0.0f64); edges.len()];
    for s in samples {
        let idx = edges.partition_point(|&e| e < s.distance.value());
        acc[idx].0 += 1;
        acc[idx].1 += s.similarity;
    }
    edges
        .into_iter()
        .zip(acc)
        .filter(|(_, (count, _))| *count > 0)
        .map(|(edge, (count, total))| (edge, count, total / count as f64))
        .collect()
}
