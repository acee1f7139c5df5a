//! Gallery indexing, ranking, and evaluation: unit-normalized embeddings per
//! image (optionally the four quadrants too), cosine scoring with a
//! max-over-vectors combination, average precision against rendered ground
//! truth, and a binary index file bound to its checkpoint by fingerprint.

use crate::array::Real;
use crate::error::{Error, Result};
use crate::model::FdpModel;
use crate::pixmap::Pixmap;
use crate::synth::{self, Manifest};
use crate::text::WordClass;
use crate::vision::{square_pad, subdivide};
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

const MAGIC: &[u8; 4] = b"TXIX";
const VERSION: u32 = 1;
const ELEM_BYTES: usize = std::mem::size_of::<Real>();

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// 1 vector (full image) or 5 (full + quadrants), each unit norm.
    pub vectors: Vec<Vec<Real>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub embed: usize,
    pub subdivision: bool,
    /// Fingerprint of the checkpoint file the embeddings came from.
    pub fingerprint: u64,
    pub entries: Vec<IndexEntry>,
}

/// Index plus the images that could not be read.
pub struct IndexOutcome {
    pub index: RetrievalIndex,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RankedResult {
    pub query: String,
    pub class: WordClass,
    /// (image id, score), scores non-increasing, ids unique.
    pub entries: Vec<(String, Real)>,
}

#[derive(Debug, Clone)]
pub struct QueryEval {
    pub query: String,
    pub ap: Real,
    pub relevant: usize,
    /// True when the gallery holds nothing relevant; AP is 0 by definition.
    pub zero_relevant: bool,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<QueryEval>,
    pub map: Real,
    pub query_count: usize,
    pub gallery_size: usize,
    /// Index-construction throughput.
    pub index_images_per_sec: Real,
    /// Per-query encode+rank throughput.
    pub queries_per_sec: Real,
    pub skipped: Vec<String>,
}

fn unit(mut v: Vec<Real>, what: &str) -> Result<Vec<Real>> {
    let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
    if norm < 1e-12 {
        return Err(Error::NonFinite(format!("zero-norm embedding for {what}")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Embeds every readable gallery image. With subdivision, the squared image
/// and its four quadrants each contribute one vector; the first vector is
/// always the full image.
pub fn index_gallery(
    model: &mut FdpModel,
    manifest: &Manifest,
    subdivision: bool,
    fingerprint: u64,
) -> Result<IndexOutcome> {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for sample in &manifest.samples {
        let img = match Pixmap::load(&manifest.image_path(sample)) {
            Ok(img) => img,
            Err(e) => {
                skipped.push(format!("{}: {e}", sample.id));
                continue;
            }
        };
        let parts: Vec<Pixmap> = if subdivision {
            subdivide(&square_pad(&img))?
        } else {
            vec![img]
        };
        let mut vectors = Vec::with_capacity(parts.len());
        for part in &parts {
            let emb = model.embed_image(part)?;
            vectors.push(unit(emb.into_data(), &sample.id)?);
        }
        entries.push(IndexEntry {
            id: sample.id.clone(),
            vectors,
        });
    }
    Ok(IndexOutcome {
        index: RetrievalIndex {
            embed: model.cfg.model.embed_dim(),
            subdivision,
            fingerprint,
            entries,
        },
        skipped,
    })
}

/// Scores every entry against a unit query vector: cosine per stored vector,
/// max over the entry's vectors, then descending score with ascending-id
/// tiebreak.
pub fn rank_vector(index: &RetrievalIndex, q: &[Real]) -> Vec<(String, Real)> {
    let mut scored: Vec<(String, Real)> = index
        .entries
        .iter()
        .map(|e| {
            let best = e
                .vectors
                .iter()
                .map(|v| v.iter().zip(q).map(|(a, b)| a * b).sum::<Real>())
                .fold(Real::NEG_INFINITY, Real::max);
            (e.id.clone(), best)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

/// Full ranking of the gallery for one query. The index must carry the
/// fingerprint of the checkpoint behind `model`.
pub fn rank(
    model: &mut FdpModel,
    index: &RetrievalIndex,
    query: &str,
    checkpoint_fingerprint: u64,
) -> Result<RankedResult> {
    if index.fingerprint != checkpoint_fingerprint {
        return Err(Error::FingerprintMismatch {
            index: index.fingerprint,
            checkpoint: checkpoint_fingerprint,
        });
    }
    let class = model.classify_query(query)?;
    let q = unit(model.embed_query(query)?.into_data(), "query")?;
    Ok(RankedResult {
        query: query.to_string(),
        class,
        entries: rank_vector(index, &q),
    })
}

/// AP = (1/R) Σ_k Prec@k · rel(k) over the full ranking. Zero relevant items
/// gives 0.
pub fn average_precision(relevance: &[bool]) -> Real {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as Real / (k + 1) as Real;
        }
    }
    sum / total as Real
}

/// Builds an index over the manifest, ranks every query, and scores each
/// ranking against rendered ground truth. Indexing and querying are timed
/// separately.
pub fn evaluate(
    model: &mut FdpModel,
    manifest: &Manifest,
    queries: &[String],
    subdivision: bool,
    fingerprint: u64,
) -> Result<EvalReport> {
    let t0 = Instant::now();
    let outcome = index_gallery(model, manifest, subdivision, fingerprint)?;
    let index_secs = t0.elapsed().as_secs_f64().max(1e-9);
    let index = outcome.index;

    let t1 = Instant::now();
    let mut rows = Vec::with_capacity(queries.len());
    for query in queries {
        let ranked = rank(model, &index, query, fingerprint)?;
        let relevance: Vec<bool> = ranked
            .entries
            .iter()
            .map(|(id, _)| {
                manifest
                    .samples
                    .iter()
                    .find(|s| &s.id == id)
                    .is_some_and(|s| synth::relevance(s, query))
            })
            .collect();
        let relevant = relevance.iter().filter(|&&r| r).count();
        rows.push(QueryEval {
            query: query.clone(),
            ap: average_precision(&relevance),
            relevant,
            zero_relevant: relevant == 0,
        });
    }
    let query_secs = t1.elapsed().as_secs_f64().max(1e-9);

    let map = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.ap).sum::<Real>() / rows.len() as Real
    };
    Ok(EvalReport {
        map,
        query_count: rows.len(),
        gallery_size: index.entries.len(),
        index_images_per_sec: index.entries.len() as Real / index_secs as Real,
        queries_per_sec: rows.len() as Real / query_secs as Real,
        rows,
        skipped: outcome.skipped,
    })
}

impl EvalReport {
    /// Structured text rendering: one row per query, then the summary.
    pub fn render(&self) -> String {
        let mut out = String::from("query\tap\trelevant\tflags\n");
        for r in &self.rows {
            let flag = if r.zero_relevant { "zero-relevant" } else { "" };
            out.push_str(&format!("{}\t{:.6}\t{}\t{}\n", r.query, r.ap, r.relevant, flag));
        }
        out.push_str(&format!(
            "mAP\t{:.6}\nqueries\t{}\ngallery\t{}\nindex_images_per_sec\t{:.2}\nqueries_per_sec\t{:.2}\n",
            self.map, self.query_count, self.gallery_size, self.index_images_per_sec, self.queries_per_sec
        ));
        for s in &self.skipped {
            out.push_str(&format!("skipped\t{s}\n"));
        }
        out
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes the index atomically: header (magic, version, element width,
/// embedding width, subdivision flag, fingerprint, entry count), then one
/// record per entry (id length + bytes, vector count, little-endian
/// elements).
pub fn save_index(path: &Path, index: &RetrievalIndex) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let w = tmp.as_file_mut();
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, ELEM_BYTES as u32)?;
        write_u32(w, index.embed as u32)?;
        write_u32(w, index.subdivision as u32)?;
        write_u64(w, index.fingerprint)?;
        write_u64(w, index.entries.len() as u64)?;
        for e in &index.entries {
            write_u32(w, e.id.len() as u32)?;
            w.write_all(e.id.as_bytes())?;
            write_u32(w, e.vectors.len() as u32)?;
            for v in &e.vectors {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| Error::Config(format!("writing {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    let bad = |detail: String| Error::Format {
        what: "retrieval index",
        detail,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("wrong magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let elem = read_u32(&mut r)? as usize;
    if elem != ELEM_BYTES {
        return Err(bad(format!(
            "element width {elem} does not match this build's {ELEM_BYTES}"
        )));
    }
    let embed = read_u32(&mut r)? as usize;
    let subdivision = read_u32(&mut r)? != 0;
    let fingerprint = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let expected_vecs = if subdivision { 5 } else { 1 };
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| bad("entry id is not UTF-8".into()))?;
        let nvec = read_u32(&mut r)? as usize;
        if nvec != expected_vecs {
            return Err(bad(format!(
                "entry {id:?} has {nvec} vectors, flag implies {expected_vecs}"
            )));
        }
        let mut vectors = Vec::with_capacity(nvec);
        for _ in 0..nvec {
            let mut v = Vec::with_capacity(embed);
            for _ in 0..embed {
                let mut b = [0u8; ELEM_BYTES];
                r.read_exact(&mut b)?;
                v.push(Real::from_le_bytes(b));
            }
            let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(bad(format!("entry {id:?} has a non-unit vector ({norm})")));
            }
            vectors.push(v);
        }
        entries.push(IndexEntry { id, vectors });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after final entry".into()));
    }
    Ok(RetrievalIndex {
        embed,
        subdivision,
        fingerprint,
        entries,
    })
}
