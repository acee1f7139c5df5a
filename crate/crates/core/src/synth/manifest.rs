//! Line-delimited gallery manifest.
//!
//! ```text
//! #textra-manifest v1
//! #seed 42
//! #vocab house;coffee;...
//! #phrases no smoking;exit here          (omitted when empty)
//! id <TAB> file <TAB> WxH <TAB> words <TAB> phrases
//! ```
//!
//! The words field joins `text,x0,y0,x1,y1` with `;`, `-` when empty; the
//! phrases field joins phrase strings with `;`, `-` when empty. Word texts
//! are alphanumeric by construction, so the separators are unambiguous.

use super::{SampleMeta, WordAnn};
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

const HEADER: &str = "#textra-manifest v1";

#[derive(Clone, Debug)]
pub struct Manifest {
    pub seed: u64,
    pub vocab: Vec<String>,
    pub phrases: Vec<String>,
    pub samples: Vec<SampleMeta>,
    /// Directory image paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn image_path(&self, sample: &SampleMeta) -> PathBuf {
        self.root.join(&sample.file)
    }

    pub fn text_bearing(&self) -> impl Iterator<Item = &SampleMeta> {
        self.samples.iter().filter(|s| s.has_text())
    }
}

fn bad(line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Format {
        what: "manifest",
        detail: format!("line {line}: {detail}"),
    }
}

pub fn save_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{HEADER}")?;
    writeln!(f, "#seed {}", m.seed)?;
    writeln!(f, "#vocab {}", m.vocab.join(";"))?;
    if !m.phrases.is_empty() {
        writeln!(f, "#phrases {}", m.phrases.join(";"))?;
    }
    for s in &m.samples {
        let words = if s.words.is_empty() {
            "-".to_string()
        } else {
            s.words
                .iter()
                .map(|w| format!("{},{},{},{},{}", w.text, w.x0, w.y0, w.x1, w.y1))
                .collect::<Vec<_>>()
                .join(";")
        };
        let phrases = if s.phrases.is_empty() {
            "-".to_string()
        } else {
            s.phrases.join(";")
        };
        writeln!(
            f,
            "{}\t{}\t{}x{}\t{}\t{}",
            s.id, s.file, s.width, s.height, words, phrases
        )?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let root = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));

    let mut lines = f.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if first?.trim() != HEADER {
        return Err(bad(1, format!("expected header {HEADER:?}")));
    }

    let mut seed = None;
    let mut vocab = Vec::new();
    let mut phrases = Vec::new();
    let mut samples = Vec::new();

    for (idx, line) in lines {
        let ln = idx + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            match key {
                "seed" => {
                    seed = Some(value.trim().parse().map_err(|_| bad(ln, "bad seed"))?)
                }
                "vocab" => {
                    vocab = value.split(';').map(|s| s.trim().to_string()).collect()
                }
                "phrases" => {
                    phrases = value.split(';').map(|s| s.trim().to_string()).collect()
                }
                other => return Err(bad(ln, format!("unknown directive #{other}"))),
            }
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(ln, format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let (w, h) = fields[2]
            .split_once('x')
            .ok_or_else(|| bad(ln, "size must be WxH"))?;
        let width: u32 = w.parse().map_err(|_| bad(ln, "bad width"))?;
        let height: u32 = h.parse().map_err(|_| bad(ln, "bad height"))?;

        let mut words = Vec::new();
        if fields[3] != "-" {
            for item in fields[3].split(';') {
                let parts: Vec<&str> = item.split(',').collect();
                if parts.len() != 5 {
                    return Err(bad(ln, format!("bad word entry {item:?}")));
                }
                let coord = |s: &str| -> Result<u32> {
                    s.parse().map_err(|_| bad(ln, format!("bad coordinate {s:?}")))
                };
                let ann = WordAnn {
                    text: parts[0].to_string(),
                    x0: coord(parts[1])?,
                    y0: coord(parts[2])?,
                    x1: coord(parts[3])?,
                    y1: coord(parts[4])?,
                };
                if ann.x0 >= ann.x1 || ann.y0 >= ann.y1 {
                    return Err(bad(ln, format!("degenerate box in {item:?}")));
                }
                words.push(ann);
            }
        }
        let sample_phrases = if fields[4] == "-" {
            Vec::new()
        } else {
            fields[4].split(';').map(|s| s.to_string()).collect()
        };
        samples.push(SampleMeta {
            id: fields[0].to_string(),
            file: fields[1].to_string(),
            width,
            height,
            words,
            phrases: sample_phrases,
        });
    }

    Ok(Manifest {
        seed: seed.ok_or_else(|| bad(0, "missing #seed directive"))?,
        vocab,
        phrases,
        samples,
        root,
    })
}
