//! Text corpora for threshold calibration.
//!
//! [`synthetic_corpus`] produces a reproducible English-like corpus from a
//! seeded generator so calibration never depends on files shipped with the
//! build. [`load_corpus_dir`] reads real `.txt` paragraphs from disk.

use std::fs;
use std::io;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "br", "ch", "cl", "dr", "fl",
    "gr", "pl", "pr", "sh", "st", "th", "tr", "wh",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ee", "io", "ou", "oo", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ng", "rk", "ck"];
const FUNCTION_WORDS: &[&str] = &[
    "the", "of", "and", "to", "a", "in", "that", "is", "was", "he", "for", "it", "with", "as", "his", "on", "be", "at",
    "by", "had", "not", "are", "but", "from", "or", "have", "an", "they", "which", "one", "you", "were", "her", "all",
    "she", "there", "would", "their", "we", "him", "been", "has", "when", "who", "will", "more", "no", "if", "out",
    "so",
];

/// Vocabulary of pseudo-words with Zipf-distributed frequencies.
struct Lexicon {
    words: Vec<String>,
    weights: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(rng: &mut ChaCha20Rng, size: usize) -> Self {
        let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        while words.len() < size {
            let syllables = rng.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                w.push_str(NUCLEI[rng.gen_range(0..NUCLEI.len())]);
                w.push_str(CODAS[rng.gen_range(0..CODAS.len())]);
            }
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let weights = WeightedIndex::new((1..=words.len()).map(|r| 1.0 / r as f64)).expect("non-empty lexicon");
        Self { words, weights }
    }

    fn word<'a>(&'a self, rng: &mut ChaCha20Rng) -> &'a str {
        &self.words[self.weights.sample(rng)]
    }
}

/// Seed and size of the corpus used when no corpus directory is given.
pub const BUNDLED_SEED: u64 = 2020;
pub const BUNDLED_SIZE: usize = 1500;

pub fn bundled_corpus() -> Vec<String> {
    synthetic_corpus(BUNDLED_SIZE, BUNDLED_SEED)
}

/// `count` paragraphs of 60..=120 words each, fully determined by `seed`.
pub fn synthetic_corpus(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let lexicon = Lexicon::new(&mut rng, 4000);
    (0..count).map(|_| paragraph(&lexicon, &mut rng)).collect()
}

fn paragraph(lexicon: &Lexicon, rng: &mut ChaCha20Rng) -> String {
    let target = rng.gen_range(60..=120);
    let mut out = String::new();
    let mut written = 0;
    while written < target {
        let len = rng.gen_range(6..=18).min(target - written).max(1);
        for i in 0..len {
            let w = lexicon.word(rng);
            if i == 0 {
                if !out.is_empty() {
                    out.push(' ');
                }
                let mut cs = w.chars();
                if let Some(first) = cs.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(cs.as_str());
                }
            } else {
                out.push_str(if rng.gen_bool(0.08) { ", " } else { " " });
                out.push_str(w);
            }
        }
        out.push('.');
        written += len;
    }
    out
}

/// Reads every `*.txt` file in `dir` (sorted by file name) and splits it into
/// paragraphs on blank lines. Paragraphs shorter than `min_chars` are dropped.
pub fn load_corpus_dir(dir: &Path, min_chars: usize) -> io::Result<Vec<String>> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut paragraphs = Vec::new();
    for path in files {
        let bytes = fs::read(&path)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        let normalized = text.replace("\r\n", "\n");
        for para in normalized.split("\n\n") {
            let joined = para.split_whitespace().collect::<Vec<_>>().join(" ");
            if joined.chars().count() >= min_chars {
                paragraphs.push(joined);
            }
        }
    }
    Ok(paragraphs)
}
