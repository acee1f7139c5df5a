//! Synthetic gallery generation: rendered word/phrase images with box
//! annotations, a frequency dictionary, ground-truth localization grids,
//! and the relevance rule used by evaluation.

mod manifest;
mod render;

pub use manifest::{load_manifest, save_manifest, Manifest};
pub use render::{render_sample, RenderPlan};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::pixmap::Pixmap;
use crate::rng;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// One annotated word: text plus its pixel-tight ink box, half-open coords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordAnn {
    pub text: String,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// Per-image record as stored in the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub id: String,
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub words: Vec<WordAnn>,
    /// Multi-word units rendered left-to-right on one line.
    pub phrases: Vec<String>,
}

impl SampleMeta {
    pub fn has_text(&self) -> bool {
        !self.words.is_empty()
    }
}

/// Words available to `vocab_of_size`; ordered so small prefixes mix short
/// and long words and include the connective words the clusterer's labeling
/// rule looks for.
pub const WORD_LIST: [&str; 60] = [
    "house", "coffee", "market", "hotel", "pizza", "open", "exit", "sale", "bank", "taxi",
    "and", "the", "with", "shop", "food", "park", "beer", "menu", "stop", "no",
    "bar", "cafe", "store", "to", "of", "for", "horse", "mouse", "car", "book",
    "smoking", "wine", "gas", "hall", "motel", "tea", "bread", "milk", "fish", "meat",
    "door", "wall", "road", "city", "town", "club", "gym", "spa", "inn", "pub",
    "art", "toy", "map", "zoo", "bus", "train", "plane", "boat", "shoe", "hat",
];

pub fn vocab_of_size(n: usize) -> Result<Vec<String>> {
    if n == 0 || n > WORD_LIST.len() {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size must be 1..={}, got {n}",
            WORD_LIST.len()
        )));
    }
    Ok(WORD_LIST[..n].iter().map(|s| s.to_string()).collect())
}

#[derive(Clone, Debug)]
pub struct GalleryConfig {
    pub seed: u64,
    pub images: usize,
    pub vocab: Vec<String>,
    /// Phrase units; each must consist of renderable words.
    pub phrases: Vec<String>,
    /// Fraction of images rendered with no text at all.
    pub distractor_rate: f64,
    /// Among text images, fraction carrying a phrase unit (when any phrase
    /// is configured).
    pub phrase_rate: f64,
    pub width: u32,
    pub height: u32,
    pub words_min: usize,
    pub words_max: usize,
    pub scale_min: u32,
    pub scale_max: u32,
}

impl GalleryConfig {
    pub fn new(seed: u64, images: usize, vocab: Vec<String>) -> GalleryConfig {
        GalleryConfig {
            seed,
            images,
            vocab,
            phrases: Vec::new(),
            distractor_rate: 0.0,
            phrase_rate: 0.5,
            width: 128,
            height: 96,
            words_min: 1,
            words_max: 3,
            scale_min: 2,
            scale_max: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::InvalidArgument("image count must be positive".into()));
        }
        if self.vocab.is_empty() {
            return Err(Error::InvalidArgument("vocabulary is empty".into()));
        }
        if self.words_min == 0 || self.words_min > self.words_max {
            return Err(Error::InvalidArgument(format!(
                "bad words-per-image range {}..{}",
                self.words_min, self.words_max
            )));
        }
        if self.scale_min == 0 || self.scale_min > self.scale_max {
            return Err(Error::InvalidArgument(format!(
                "bad glyph scale range {}..{}",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::InvalidArgument("distractor rate outside [0, 1]".into()));
        }
        for w in &self.vocab {
            check_renderable(w)?;
            render::word_fits(w, self.scale_min, self.width, self.height).then_some(()).ok_or_else(
                || Error::InvalidArgument(format!("word {w:?} cannot fit the image even at minimum scale")),
            )?;
        }
        for p in &self.phrases {
            if p.split_whitespace().count() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "phrase {p:?} must have at least two words"
                )));
            }
            for w in p.split_whitespace() {
                check_renderable(w)?;
            }
            if !render::phrase_fits(p, self.scale_min, self.width, self.height) {
                return Err(Error::InvalidArgument(format!(
                    "phrase {p:?} cannot fit the image even at minimum scale"
                )));
            }
        }
        Ok(())
    }
}

fn check_renderable(word: &str) -> Result<()> {
    if word.is_empty() {
        return Err(Error::InvalidArgument("empty word in vocabulary".into()));
    }
    for (pos, ch) in word.chars().enumerate() {
        if !crate::font::supported(ch) {
            return Err(Error::BadCharacter { ch, pos });
        }
    }
    Ok(())
}

/// Index of a minimum-count entry, ties broken uniformly by `rng`.
/// Balancing keeps every vocabulary word represented in small galleries.
fn pick_balanced(counts: &[u64], exclude: &[usize], rng: &mut impl Rng) -> Option<usize> {
    let candidates: Vec<usize> = (0..counts.len()).filter(|i| !exclude.contains(i)).collect();
    let min = counts
        .iter()
        .enumerate()
        .filter(|(i, _)| candidates.contains(i))
        .map(|(_, &c)| c)
        .min()?;
    let pool: Vec<usize> = candidates.into_iter().filter(|&i| counts[i] == min).collect();
    Some(pool[rng.gen_range(0..pool.len())])
}

/// Generate all samples of a gallery in memory.
///
/// Sample content is drawn from a per-sample RNG stream (`substream(seed,
/// index)`), while the what-goes-where plan uses a dedicated lane, so the
/// whole gallery is a pure function of the config.
pub fn generate(cfg: &GalleryConfig) -> Result<Vec<(Pixmap, SampleMeta)>> {
    cfg.validate()?;
    const PLAN_LANE: u64 = u64::MAX;
    let mut plan_rng = rng::substream(cfg.seed, PLAN_LANE);
    let mut word_counts = vec![0u64; cfg.vocab.len()];
    let mut phrase_counts = vec![0u64; cfg.phrases.len()];
    let mut out = Vec::with_capacity(cfg.images);

    for index in 0..cfg.images {
        let text_free = plan_rng.gen_bool(cfg.distractor_rate);
        let plan = if text_free {
            RenderPlan::TextFree
        } else if !cfg.phrases.is_empty() && plan_rng.gen_bool(cfg.phrase_rate) {
            let p = pick_balanced(&phrase_counts, &[], &mut plan_rng).unwrap();
            phrase_counts[p] += 1;
            RenderPlan::Phrase(cfg.phrases[p].clone())
        } else {
            let k = plan_rng.gen_range(cfg.words_min..=cfg.words_max);
            let mut chosen = Vec::with_capacity(k);
            for _ in 0..k.min(cfg.vocab.len()) {
                match pick_balanced(&word_counts, &chosen, &mut plan_rng) {
                    Some(i) => chosen.push(i),
                    None => break,
                }
            }
            RenderPlan::Words(chosen.iter().map(|&i| cfg.vocab[i].clone()).collect())
        };

        let mut sample_rng = rng::substream(cfg.seed, index as u64);
        let id = format!("img{index:05}");
        let (img, words, phrases) = render_sample(cfg, &plan, &mut sample_rng);
        // Count what actually landed, not what was planned: placement can
        // drop words on crowded canvases.
        for w in &words {
            if let Some(i) = cfg.vocab.iter().position(|v| *v == w.text) {
                word_counts[i] += 1;
            }
        }
        let meta = SampleMeta {
            file: format!("{id}.ppm"),
            id,
            width: img.width(),
            height: img.height(),
            words,
            phrases,
        };
        out.push((img, meta));
    }
    Ok(out)
}

/// Generate and persist a gallery: images, manifest, and word-frequency
/// dictionary under `dir`.
pub fn write_gallery(dir: &Path, cfg: &GalleryConfig) -> Result<Manifest> {
    let samples = generate(cfg)?;
    std::fs::create_dir_all(dir)?;
    let mut metas = Vec::with_capacity(samples.len());
    for (img, meta) in samples {
        img.save(&dir.join(&meta.file))?;
        metas.push(meta);
    }
    let manifest = Manifest {
        seed: cfg.seed,
        vocab: cfg.vocab.clone(),
        phrases: cfg.phrases.clone(),
        samples: metas,
        root: dir.to_path_buf(),
    };
    save_manifest(&dir.join("manifest.tsv"), &manifest)?;
    Dictionary::from_samples(&manifest.samples).save(&dir.join("dictionary.tsv"))?;
    Ok(manifest)
}

/// Ground-truth localization grid for a sample, matching the model's
/// geometry: the image is zero-padded top-left to a square of side
/// `max(w, h)` and the grid covers that square. A cell is 1 iff its center
/// falls inside any annotated word box. The resize to the model input
/// cancels out of the arithmetic entirely.
pub fn make_loc_target(sample: &SampleMeta, grid: usize) -> Array {
    let side = sample.width.max(sample.height) as f64;
    let mut out = Array::zeros(&[grid, grid]);
    for gy in 0..grid {
        let cy = (gy as f64 + 0.5) * side / grid as f64;
        for gx in 0..grid {
            let cx = (gx as f64 + 0.5) * side / grid as f64;
            let inside = sample.words.iter().any(|w| {
                cx >= w.x0 as f64 && cx < w.x1 as f64 && cy >= w.y0 as f64 && cy < w.y1 as f64
            });
            if inside {
                out.data_mut()[gy * grid + gx] = 1.0;
            }
        }
    }
    out
}

fn normalize_query(q: &str) -> String {
    q.split_whitespace()
        .map(|w| w.to_ascii_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ground-truth relevance: single-word queries match any annotated word
/// (case-insensitive); multi-word queries match only samples where the
/// generator rendered that exact phrase as a unit.
pub fn relevance(sample: &SampleMeta, query: &str) -> bool {
    let q = normalize_query(query);
    match q.split(' ').count() {
        0 => false,
        1 => sample.words.iter().any(|w| w.text.to_ascii_lowercase() == q),
        _ => {
            let all_present = q
                .split(' ')
                .all(|qw| sample.words.iter().any(|w| w.text.to_ascii_lowercase() == qw));
            all_present && sample.phrases.iter().any(|p| normalize_query(p) == q)
        }
    }
}

/// Word-frequency dictionary over annotated words, ordered by descending
/// count then word.
pub struct Dictionary {
    entries: Vec<(String, u64)>,
}

impl Dictionary {
    pub fn from_samples(samples: &[SampleMeta]) -> Dictionary {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for s in samples {
            for w in &s.words {
                *counts.entry(w.text.to_ascii_lowercase()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Dictionary { entries }
    }

    pub fn from_words<I: IntoIterator<Item = (String, u64)>>(words: I) -> Dictionary {
        let mut entries: Vec<(String, u64)> = words.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Dictionary { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(w, _)| w.as_str())
    }

    /// The `k` most frequent words (all of them if fewer).
    pub fn top_words(&self, k: usize) -> Vec<String> {
        self.entries.iter().take(k).map(|(w, _)| w.clone()).collect()
    }

    pub fn count(&self, word: &str) -> u64 {
        self.entries
            .iter()
            .find(|(w, _)| w == word)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (w, c) in &self.entries {
            writeln!(f, "{w}\t{c}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dictionary> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (ln, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (w, c) = line.split_once('\t').ok_or_else(|| Error::Format {
                what: "dictionary",
                detail: format!("line {}: expected word<TAB>count", ln + 1),
            })?;
            let count: u64 = c.trim().parse().map_err(|_| Error::Format {
                what: "dictionary",
                detail: format!("line {}: bad count {c:?}", ln + 1),
            })?;
            entries.push((w.to_string(), count));
        }
        Ok(Dictionary { entries })
    }
}
