//! Optimizer loop: batched alignment over rendered images and their
//! annotated words, localization supervision, distracted-query
//! regularization, and an inert-by-construction all-zero localization pass
//! for text-free images. One optimizer step per logged step; every random
//! draw flows from a per-epoch stream, so a (seed, epoch) pair pins the
//! trajectory and a resumed run splices exactly onto an uninterrupted one.

use crate::adam::Adam;
use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::loss;
use crate::model::{CheckpointExtra, FdpModel, ResumeState};
use crate::ops;
use crate::rng;
use crate::pixmap::Pixmap;
use crate::synth::{self, Dictionary, Manifest, SampleMeta};
use crate::tape::{Tape, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// One optimizer step's loss record, the unit of the TSV training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loc: Real,
    pub align: Real,
    pub distract: Real,
    pub total: Real,
}

impl StepLog {
    pub fn tsv_header() -> &'static str {
        "step\tloc\talign\tdistract\ttotal"
    }

    /// Shortest-round-trip float formatting, so logs of identical runs are
    /// byte-identical and parse back exactly.
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.step, self.loc, self.align, self.distract, self.total
        )
    }
}

/// One training image's per-step jitter: an integer translation bounded so
/// every annotated box stays fully on the canvas, plus a per-channel affine
/// color map. Identity values (zero shift, unit scale, zero offset) reproduce
/// the input exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub dx: i64,
    pub dy: i64,
    pub scale: [Real; 3],
    pub offset: Real,
}

impl Augment {
    /// Draws a jitter for one sample. Shift bounds start at a twelfth of each
    /// dimension and shrink so no annotated box can leave the canvas.
    pub fn draw(r: &mut impl Rng, meta: &SampleMeta) -> Augment {
        let (w, h) = (meta.width as i64, meta.height as i64);
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (w / 12, w / 12, h / 12, h / 12);
        for b in &meta.words {
            lo_x = lo_x.min(b.x0 as i64);
            hi_x = hi_x.min(w - b.x1 as i64);
            lo_y = lo_y.min(b.y0 as i64);
            hi_y = hi_y.min(h - b.y1 as i64);
        }
        Augment {
            dx: r.gen_range(-lo_x..=hi_x),
            dy: r.gen_range(-lo_y..=hi_y),
            scale: [
                r.gen_range(0.65..1.35),
                r.gen_range(0.65..1.35),
                r.gen_range(0.65..1.35),
            ],
            offset: r.gen_range(-25.0..25.0),
        }
    }

    /// Shifts with clamp-to-edge sampling, then maps each channel through
    /// `scale[c] * v + offset` (rounded, clamped to u8). Word boxes translate
    /// with the image; the draw bounds guarantee they stay inside.
    pub fn apply(&self, img: &Pixmap, meta: &SampleMeta) -> (Pixmap, SampleMeta) {
        let (w, h) = (img.width(), img.height());
        let mut out = Pixmap::new(w, h, [0, 0, 0]);
        for y in 0..h {
            let sy = (y as i64 - self.dy).clamp(0, h as i64 - 1) as u32;
            for x in 0..w {
                let sx = (x as i64 - self.dx).clamp(0, w as i64 - 1) as u32;
                let mut px = img.get(sx, sy);
                for (c, v) in px.iter_mut().enumerate() {
                    *v = (self.scale[c] * *v as Real + self.offset)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                }
                out.set(x, y, px);
            }
        }
        let mut shifted = meta.clone();
        for b in &mut shifted.words {
            b.x0 = (b.x0 as i64 + self.dx) as u32;
            b.x1 = (b.x1 as i64 + self.dx) as u32;
            b.y0 = (b.y0 as i64 + self.dy) as u32;
            b.y1 = (b.y1 as i64 + self.dy) as u32;
        }
        (out, shifted)
    }
}

/// Pre-extracted training data plus optimizer state. The image tensors and
/// localization grids are cached up front; an epoch touches no files.
pub struct Trainer {
    pub opt: Adam,
    /// Epochs already completed.
    pub epoch: usize,
    pub step: u64,
    dict_words: Vec<String>,
    inputs: Vec<Array>,
    targets: Vec<Array>,
    queries: Vec<Vec<String>>,
    /// Raw pixmaps and annotations, kept for per-step augmentation.
    pixmaps: Vec<Pixmap>,
    metas: Vec<SampleMeta>,
    aux_inputs: Vec<Array>,
    aux_target: Array,
}

impl Trainer {
    pub fn new(model: &FdpModel, manifest: &Manifest, dict: &Dictionary) -> Result<Trainer> {
        let batch = model.cfg.training.batch;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut queries = Vec::new();
        let mut pixmaps = Vec::new();
        let mut metas = Vec::new();
        let mut aux_inputs = Vec::new();
        let grid = model.vision.grid;
        for sample in &manifest.samples {
            let img = Pixmap::load(&manifest.image_path(sample))?;
            let input = model.vision.preprocess(&img);
            if sample.has_text() {
                let mut cands: Vec<String> =
                    sample.words.iter().map(|w| w.text.clone()).collect();
                cands.extend(sample.phrases.iter().cloned());
                inputs.push(input);
                targets.push(synth::make_loc_target(sample, grid));
                queries.push(cands);
                pixmaps.push(img);
                metas.push(sample.clone());
            } else {
                aux_inputs.push(input);
            }
        }
        if inputs.len() < batch {
            return Err(Error::InvalidArgument(format!(
                "{} text-bearing samples cannot fill one batch of {batch}",
                inputs.len()
            )));
        }
        let mut dict_words: Vec<String> = dict.words().map(str::to_string).collect();
        dict_words.sort();
        dict_words.dedup();
        let mut opt = Adam::new(&model.params, model.cfg.training.lr);
        opt.weight_decay = model.cfg.training.weight_decay;
        Ok(Trainer {
            opt,
            epoch: 0,
            step: 0,
            dict_words,
            inputs,
            targets,
            queries,
            pixmaps,
            metas,
            aux_inputs,
            aux_target: Array::zeros(&[1, grid, grid]),
        })
    }

    /// Restores optimizer state and step counters from a loaded checkpoint.
    pub fn restore(&mut self, model: &FdpModel, state: &ResumeState) -> Result<()> {
        self.opt
            .import_state(&model.params, |name| state.opt.array(name).cloned())?;
        self.epoch = state.epoch;
        self.step = state.step;
        Ok(())
    }

    /// Trainer-side checkpoint fields (optimizer state plus counters).
    pub fn extra(&self, model: &FdpModel) -> CheckpointExtra {
        CheckpointExtra {
            epoch: self.epoch,
            step: self.step,
            opt_state: self.opt.export_state(&model.params),
        }
    }

    /// Runs one epoch, appending one [`StepLog`] per optimizer step. The
    /// epoch's randomness is `substream(seed, 1000 + epoch)`: independent of
    /// any previous epoch, so resume needs no stream replay.
    pub fn run_epoch(&mut self, model: &mut FdpModel, logs: &mut Vec<StepLog>) -> Result<()> {
        let t = model.cfg.training.clone();
        let mut r = rng::substream(t.seed, 1000 + self.epoch as u64);
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.shuffle(&mut r);

        for chunk in order.chunks_exact(t.batch) {
            // Fixed draw order per step: queries, aux gate, aux choices,
            // augmentation jitters.
            let batch_queries: Vec<String> = chunk
                .iter()
                .map(|&i| self.queries[i][r.gen_range(0..self.queries[i].len())].clone())
                .collect();
            let aux: Vec<usize> = if !self.aux_inputs.is_empty() && r.gen::<f64>() < t.aux_rate {
                (0..t.batch.min(self.aux_inputs.len()))
                    .map(|_| r.gen_range(0..self.aux_inputs.len()))
                    .collect()
            } else {
                Vec::new()
            };
            let augs: Option<Vec<Augment>> = t.augment.then(|| {
                chunk
                    .iter()
                    .map(|&i| Augment::draw(&mut r, &self.metas[i]))
                    .collect()
            });
            let log = self.optimize_step(model, chunk, &batch_queries, &aux, augs.as_deref())?;
            logs.push(log);
        }
        self.epoch += 1;
        Ok(())
    }

    fn optimize_step(
        &mut self,
        model: &mut FdpModel,
        chunk: &[usize],
        batch_queries: &[String],
        aux: &[usize],
        augs: Option<&[Augment]>,
    ) -> Result<StepLog> {
        let t = model.cfg.training.clone();
        let b = chunk.len();
        let grid = model.vision.grid;
        let tape = Tape::new();

        // Image tower per batch item.
        let mut img_rows = Vec::with_capacity(b);
        let mut loc_sum: Option<Var<'_>> = None;
        for (k, &i) in chunk.iter().enumerate() {
            let (input, target) = match augs {
                Some(a) => {
                    let (img, meta) = a[k].apply(&self.pixmaps[i], &self.metas[i]);
                    (
                        model.vision.preprocess(&img),
                        synth::make_loc_target(&meta, grid),
                    )
                }
                None => (self.inputs[i].clone(), self.targets[i].clone()),
            };
            let input = tape.constant(input);
            let pass = model.image_pass(&tape, input, true)?;
            let ll = loss::loc_loss(pass.loc, &target);
            loc_sum = Some(match loc_sum {
                Some(acc) => ops::add(acc, ll),
                None => ll,
            });
            img_rows.push(pass.embed);
        }
        let l_loc = ops::mul_scalar(loc_sum.expect("batch non-empty"), 1.0 / b as Real);

        // Every distinct string in the batch (queries and their distracted
        // neighbors) is encoded once, in first-appearance order, and the
        // graph node is shared by every consumer. First-appearance order
        // keeps the tape layout, and therefore every accumulated bit,
        // reproducible.
        let mut node_of: HashMap<String, usize> = HashMap::new();
        let mut nodes: Vec<Var<'_>> = Vec::new();
        let mut encode = |q: &str, model: &FdpModel| -> Result<usize> {
            if let Some(&idx) = node_of.get(q) {
                return Ok(idx);
            }
            let v = model.query_pass(&tape, q)?;
            nodes.push(v);
            node_of.insert(q.to_string(), nodes.len() - 1);
            Ok(nodes.len() - 1)
        };

        let mut txt_idx = Vec::with_capacity(b);
        for q in batch_queries {
            txt_idx.push(encode(q, model)?);
        }
        let mut distracted: Vec<(Vec<usize>, Vec<Real>)> = Vec::with_capacity(b);
        for q in batch_queries {
            let words = loss::gen_distracted(q, &self.dict_words, t.distracted)?;
            let dists: Vec<Real> = words
                .iter()
                .map(|w| loss::edit_distance(q, w) as Real)
                .collect();
            let idxs = words
                .iter()
                .map(|w| encode(w, model))
                .collect::<Result<Vec<_>>>()?;
            distracted.push((idxs, dists));
        }

        let img_mat = ops::concat_rows(&img_rows);
        let txt_mat = ops::concat_rows(&txt_idx.iter().map(|&i| nodes[i]).collect::<Vec<_>>());
        let scale = tape.param(&model.params, model.logit_scale);
        // Cross pairs where image i also shows batch query j are known
        // positives, not negatives; mask them out of both softmaxes.
        let batch_positives: Vec<&[String]> =
            chunk.iter().map(|&i| self.queries[i].as_slice()).collect();
        let mask = loss::positive_mask(batch_queries, &batch_positives);
        let l_align = loss::align_loss(img_mat, txt_mat, scale, mask.as_ref())?;

        let img_norm = ops::normalize_rows(img_mat, 0.0);
        let mut distract_sum: Option<Var<'_>> = None;
        for (row, (idxs, dists)) in distracted.iter().enumerate() {
            let cand = ops::concat_rows(&idxs.iter().map(|&i| nodes[i]).collect::<Vec<_>>());
            let sims = ops::matmul(
                ops::slice_rows(img_norm, row, 1),
                ops::transpose(ops::normalize_rows(cand, 0.0)),
            );
            let dl = loss::distract_loss(sims, dists, scale);
            distract_sum = Some(match distract_sum {
                Some(acc) => ops::add(acc, dl),
                None => dl,
            });
        }
        let l_distract = ops::mul_scalar(distract_sum.expect("batch non-empty"), 1.0 / b as Real);

        let mut total = loss::total_loss(
            l_loc,
            l_align,
            l_distract,
            [t.lambda_loc, t.lambda_align, t.lambda_distract],
        );

        // Text-free pass: localization supervision with an all-zero grid.
        // Class balancing zeroes both terms there, so the contribution is
        // exactly zero; the pass keeps distractor images flowing through the
        // localization head without disturbing the trajectory.
        if !aux.is_empty() {
            let mut aux_sum: Option<Var<'_>> = None;
            for &i in aux {
                let input = tape.constant(self.aux_inputs[i].clone());
                let f_global = model.vision.backbone(&model.params, input);
                let f_conv = model.vision.reformulated_head(&model.params, f_global);
                let loc = model.vision.localize(&model.params, f_conv);
                let ll = loss::loc_loss(loc, &self.aux_target);
                aux_sum = Some(match aux_sum {
                    Some(acc) => ops::add(acc, ll),
                    None => ll,
                });
            }
            let aux_mean =
                ops::mul_scalar(aux_sum.expect("aux non-empty"), t.lambda_loc / aux.len() as Real);
            total = ops::add(total, aux_mean);
        }

        let record = StepLog {
            step: self.step,
            loc: l_loc.value().item(),
            align: l_align.value().item(),
            distract: l_distract.value().item(),
            total: total.value().item(),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {} (loc {:?}, align {:?}, distract {:?})",
                self.step, record.loc, record.align, record.distract
            )));
        }

        model.params.reset_grads();
        let grads = tape.backward(total);
        grads.accumulate_into(&mut model.params);
        self.opt.step(&mut model.params);
        self.step += 1;
        Ok(record)
    }
}

/// Full training run: fits the query-class clusters if absent, runs
/// `epochs` epochs, writes the TSV log, and saves a checkpoint at every
/// epoch boundary (including epoch 0 for an untouched initialization).
pub fn train_loop(
    model: &mut FdpModel,
    manifest: &Manifest,
    dict: &Dictionary,
    checkpoint_path: Option<&Path>,
    log: &mut dyn Write,
    resume: Option<&ResumeState>,
) -> Result<Vec<StepLog>> {
    if model.clusters.is_none() {
        let words: Vec<String> = dict.words().map(str::to_string).collect();
        model.fit_clusters(&words)?;
    }
    let mut trainer = Trainer::new(model, manifest, dict)?;
    if let Some(state) = resume {
        trainer.restore(model, state)?;
    }
    let epochs = model.cfg.training.epochs;
    let mut logs = Vec::new();
    writeln!(log, "{}", StepLog::tsv_header())?;
    if let Some(path) = checkpoint_path {
        if trainer.epoch == 0 {
            model.to_checkpoint(&trainer.extra(model)).save(path)?;
        }
    }
    let mut written = 0;
    while trainer.epoch < epochs {
        trainer.run_epoch(model, &mut logs)?;
        for l in &logs[written..] {
            writeln!(log, "{}", l.tsv_line())?;
        }
        written = logs.len();
        if let Some(path) = checkpoint_path {
            model.to_checkpoint(&trainer.extra(model)).save(path)?;
        }
    }
    Ok(logs)
}
