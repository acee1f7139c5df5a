//! The full retrieval model: image tower, text tower, probe fusion, prompt
//! context banks, the learnable logit scale, and the fitted query-class
//! clusters, all over one parameter set. Also its checkpoint format.

use crate::array::{Array, Real};
use crate::checkpoint::Checkpoint;
use crate::cluster::{self, ClusterModel};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fusion::ProbeFusion;
use crate::params::{ParamId, ParamSet};
use crate::pixmap::Pixmap;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::text::{ContextBank, ProbeCache, PromptSpec, TextEncoder, WordClass};
use crate::vision::ImageEncoder;

pub struct FdpModel {
    pub cfg: Config,
    pub params: ParamSet,
    pub text: TextEncoder,
    pub vision: ImageEncoder,
    pub fusion: ProbeFusion,
    pub bank: ContextBank,
    pub logit_scale: ParamId,
    pub probe: ProbeCache,
    pub clusters: Option<ClusterModel>,
}

/// One image through the tower: localization grid plus the fused embedding.
pub struct ImagePass<'t> {
    pub loc: Var<'t>,
    pub embed: Var<'t>,
}

impl FdpModel {
    /// Fresh model from a validated config. All initialization randomness
    /// flows from the training seed through fixed per-tower lanes, so a seed
    /// pins every parameter bit.
    pub fn new(cfg: &Config) -> Result<FdpModel> {
        cfg.validate()?;
        let m = &cfg.model;
        let e = m.embed_dim();
        let mut ps = ParamSet::new();
        let seed = cfg.training.seed;

        let text = TextEncoder::new(
            &mut ps,
            m.text_dim,
            m.text_heads,
            m.text_layers,
            m.text_mlp,
            e,
            &mut rng::substream(seed, 1),
        );
        let vision = ImageEncoder::new(
            &mut ps,
            m.input_side,
            &m.channels,
            m.vision_heads,
            m.loc_kernel,
            [m.norm_mean; 3],
            [m.norm_std; 3],
            &mut rng::substream(seed, 2),
        )?;
        let fusion = ProbeFusion::new(&mut ps, e, m.fuse_heads, &mut rng::substream(seed, 3));
        let bank = ContextBank::new(
            &mut ps,
            "prompt",
            m.text_dim,
            m.content_tokens,
            m.function_tokens,
            m.context_sigma,
            &mut rng::substream(seed, 4),
        );
        let logit_scale = ps.add("logit_scale", Array::scalar(cfg.training.temperature_init));
        let probe = ProbeCache::new(&m.probe)?;

        Ok(FdpModel {
            cfg: cfg.clone(),
            params: ps,
            text,
            vision,
            fusion,
            bank,
            logit_scale,
            probe,
            clusters: None,
        })
    }

    /// Probe token states as a graph node. `live` re-encodes the probe on the
    /// caller's tape so gradients reach the text tower; otherwise the cached
    /// states enter as a constant (inference fast path).
    fn probe_hidden_var<'t>(&mut self, tape: &'t Tape, live: bool) -> Var<'t> {
        if live {
            self.text.encode(tape, &self.params, &self.probe.tokens().clone()).hidden
        } else {
            let h = self.probe.hidden(&self.text, &self.params).clone();
            tape.constant(h)
        }
    }

    /// Image tower on an already-preprocessed input. The two config switches
    /// act here: without attention shift the pooling map is uniform (the
    /// localization head still runs, its loss term is unaffected), and
    /// without probing the pooled feature is the embedding.
    pub fn image_pass<'t>(
        &mut self,
        tape: &'t Tape,
        input: Var<'t>,
        live_probe: bool,
    ) -> Result<ImagePass<'t>> {
        let f_global = self.vision.backbone(&self.params, input);
        let f_conv = self.vision.reformulated_head(&self.params, f_global);
        let loc = self.vision.localize(&self.params, f_conv);
        let g = self.vision.grid;
        let pool_map = if self.cfg.model.attention_shift {
            loc
        } else {
            tape.constant(Array::filled(&[1, g, g], 1.0 / (g * g) as Real))
        };
        let f_attn = self.vision.attention_pool_shifted(&self.params, f_global, pool_map);
        let embed = if self.cfg.model.probing {
            let probe = self.probe_hidden_var(tape, live_probe);
            self.fusion.fuse(&self.params, f_attn, probe)?
        } else {
            f_attn
        };
        Ok(ImagePass { loc, embed })
    }

    /// Raw (unnormalized) 1 x E embedding of one image, no gradients.
    pub fn embed_image(&mut self, img: &Pixmap) -> Result<Array> {
        let tape = Tape::new();
        let input = tape.constant(self.vision.preprocess(img));
        let pass = self.image_pass(&tape, input, false)?;
        Ok(pass.embed.value().as_ref().clone())
    }

    /// Plain text-tower embedding of a string, no prompt vectors. This is the
    /// embedding the cluster fit and classification run on.
    pub fn embed_plain(&self, text: &str) -> Result<Array> {
        let tape = Tape::new();
        let seq = crate::tokenizer::tokenize(text)?;
        Ok(self.text.encode(&tape, &self.params, &seq).embedding.value().as_ref().clone())
    }

    /// Fits the content/function clusters on `words` with the configured k
    /// and seed, using the current text tower.
    pub fn fit_clusters(&mut self, words: &[String]) -> Result<()> {
        let t = &self.cfg.training;
        let model = cluster::fit_clusters(words, t.cluster_k, t.cluster_seed, |w| {
            self.embed_plain(w)
        })?;
        self.clusters = Some(model);
        Ok(())
    }

    pub fn classify_query(&self, query: &str) -> Result<WordClass> {
        let model = self.clusters.as_ref().ok_or_else(|| {
            Error::Config("query classification requires a fitted cluster model".into())
        })?;
        cluster::classify(query, model, |w| self.embed_plain(w))
    }

    /// Prompted query embedding as a graph node: classify, prepend the
    /// matching context bank, encode.
    pub fn query_pass<'t>(&self, tape: &'t Tape, query: &str) -> Result<Var<'t>> {
        let spec = PromptSpec {
            query: query.to_string(),
            class: self.classify_query(query)?,
        };
        self.text.assemble_prompt(tape, &self.params, &self.bank, &spec)
    }

    /// Raw (unnormalized) 1 x E embedding of a query string, no gradients.
    pub fn embed_query(&self, query: &str) -> Result<Array> {
        let tape = Tape::new();
        Ok(self.query_pass(&tape, query)?.value().as_ref().clone())
    }

    /// Serializes config, every parameter, the cluster model, and optionally
    /// optimizer state into one checkpoint.
    pub fn to_checkpoint(&self, extra: &CheckpointExtra) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("format", "fdp-model");
        ck.set_meta("config", self.cfg.echo());
        ck.set_meta("epoch", extra.epoch.to_string());
        ck.set_meta("step", extra.step.to_string());
        for (_, p) in self.params.iter() {
            ck.push_array(format!("param.{}", p.name), p.value.clone());
        }
        if let Some(c) = &self.clusters {
            let labels: String = c
                .labels
                .iter()
                .map(|l| match l {
                    WordClass::Content => 'C',
                    WordClass::Function => 'F',
                })
                .collect();
            ck.set_meta("cluster_labels", labels);
            ck.set_meta("cluster_seed", c.seed.to_string());
            ck.set_meta("cluster_words", c.words.join(" "));
            ck.push_array("cluster.centroids", c.centroids.clone());
            ck.push_array("cluster.wcss", Array::from_vec(&[c.wcss.len()], c.wcss.clone()));
        }
        for (name, arr) in &extra.opt_state {
            ck.push_array(name.clone(), arr.clone());
        }
        ck
    }

    /// Rebuilds a model from a checkpoint: config from metadata, fresh
    /// construction, then every parameter rebound by name. Missing or
    /// shape-mismatched parameters are rejected.
    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<LoadedModel> {
        let bad = |detail: String| Error::Format {
            what: "model checkpoint",
            detail,
        };
        let cfg_text = ck
            .meta("config")
            .ok_or_else(|| bad("missing config metadata".into()))?;
        let cfg = Config::from_str(cfg_text)?;
        let mut model = FdpModel::new(&cfg)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            let arr = ck
                .take_array(&format!("param.{name}"))
                .ok_or_else(|| bad(format!("missing parameter {name:?}")))?;
            if arr.dims() != model.params.value(id).dims() {
                return Err(bad(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    arr.dims(),
                    model.params.value(id).dims()
                )));
            }
            model.params.set_value(id, arr);
        }
        if let Some(stray) = ck.array_names().find(|n| n.starts_with("param.")) {
            return Err(bad(format!("unknown parameter {stray:?}")));
        }

        if let Some(labels) = ck.meta("cluster_labels").map(str::to_string) {
            let centroids = ck
                .take_array("cluster.centroids")
                .ok_or_else(|| bad("cluster labels present but centroids missing".into()))?;
            let wcss = ck
                .take_array("cluster.wcss")
                .map(|a| a.into_data())
                .unwrap_or_default();
            let labels = labels
                .chars()
                .map(|c| match c {
                    'C' => Ok(WordClass::Content),
                    'F' => Ok(WordClass::Function),
                    other => Err(bad(format!("unknown cluster label {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != centroids.dims()[0] {
                return Err(bad("cluster label/centroid count mismatch".into()));
            }
            let words = ck
                .meta("cluster_words")
                .map(|w| w.split_whitespace().map(str::to_string).collect())
                .unwrap_or_default();
            let seed = ck.meta_parsed("cluster_seed")?;
            model.clusters = Some(ClusterModel {
                centroids,
                labels,
                seed,
                words,
                wcss,
            });
        }

        let epoch = ck.meta_parsed("epoch")?;
        let step = ck.meta_parsed("step")?;
        Ok(LoadedModel {
            model,
            epoch,
            step,
            rest: ck,
        })
    }
}

/// Trainer-owned checkpoint fields.
#[derive(Default)]
pub struct CheckpointExtra {
    pub epoch: usize,
    pub step: u64,
    /// Optimizer state arrays, saved verbatim.
    pub opt_state: Vec<(String, Array)>,
}

/// A checkpointed model plus the trainer fields needed to resume.
pub struct LoadedModel {
    pub model: FdpModel,
    pub epoch: usize,
    pub step: u64,
    /// Remaining checkpoint arrays (optimizer state) for the trainer.
    pub rest: Checkpoint,
}

/// Trainer-side counters and optimizer arrays recovered from a checkpoint.
pub struct ResumeState {
    pub epoch: usize,
    pub step: u64,
    pub opt: Checkpoint,
}

impl LoadedModel {
    pub fn into_parts(self) -> (FdpModel, ResumeState) {
        (
            self.model,
            ResumeState {
                epoch: self.epoch,
                step: self.step,
                opt: self.rest,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, GalleryConfig};

    fn tiny_model() -> FdpModel {
        let mut cfg = Config::tiny();
        cfg.training.seed = 7;
        FdpModel::new(&cfg).unwrap()
    }

    fn sample_image(seed: u64) -> Pixmap {
        let cfg = GalleryConfig::new(seed, 1, vec!["cat".into(), "dog".into()]);
        let (img, _) = synth::generate(&cfg).unwrap().remove(0);
        img
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = tiny_model();
        let b = tiny_model();
        for (id, p) in a.params.iter() {
            assert_eq!(p.value.data(), b.params.value(id).data(), "{}", p.name);
        }
    }

    #[test]
    fn cached_and_live_probe_paths_agree() {
        let mut m = tiny_model();
        let img = sample_image(3);
        let input = m.vision.preprocess(&img);
        let tape = Tape::new();
        let live = m
            .image_pass(&tape, tape.constant(input.clone()), true)
            .unwrap()
            .embed
            .value()
            .as_ref()
            .clone();
        let tape2 = Tape::new();
        let cached = m
            .image_pass(&tape2, tape2.constant(input), false)
            .unwrap()
            .embed
            .value()
            .as_ref()
            .clone();
        for (x, y) in live.data().iter().zip(cached.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_initialized_fusion_is_identity_at_start() {
        // Freshly built, the fusion output projection is zero, so the fused
        // embedding must equal the pooled feature bit for bit. The probing
        // switch therefore changes nothing until training moves it.
        let mut with = tiny_model();
        let mut without = tiny_model();
        without.cfg.model.probing = false;
        let img = sample_image(5);
        let a = with.embed_image(&img).unwrap();
        let b = without.embed_image(&img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn attention_shift_switch_changes_pooling() {
        let mut on = tiny_model();
        let mut off = tiny_model();
        off.cfg.model.attention_shift = false;
        let img = sample_image(9);
        let a = on.embed_image(&img).unwrap();
        let b = off.embed_image(&img).unwrap();
        let diff: Real = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "uniform pooling matched shifted pooling");
    }

    #[test]
    fn cluster_fit_enables_classification() {
        let mut m = tiny_model();
        assert!(m.classify_query("coffee").is_err());
        let words: Vec<String> = ["coffee", "hotel", "pizza", "and", "the", "of"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        m.fit_clusters(&words).unwrap();
        assert!(m.classify_query("coffee").is_ok());
        // Multi-word queries never consult the centroids.
        assert_eq!(m.classify_query("no smoking").unwrap(), WordClass::Content);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut m = tiny_model();
        let words: Vec<String> = ["coffee", "hotel", "and", "the"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        m.fit_clusters(&words).unwrap();
        let extra = CheckpointExtra {
            epoch: 3,
            step: 120,
            opt_state: vec![("adam.t".into(), Array::scalar(120.0))],
        };
        m.to_checkpoint(&extra).save(&path).unwrap();

        let loaded = FdpModel::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.step, 120);
        for (id, p) in m.params.iter() {
            assert_eq!(p.value.data(), loaded.model.params.value(id).data(), "{}", p.name);
        }
        let (ca, cb) = (m.clusters.as_ref().unwrap(), loaded.model.clusters.as_ref().unwrap());
        assert_eq!(ca.centroids.data(), cb.centroids.data());
        assert_eq!(ca.labels, cb.labels);
        assert_eq!(ca.words, cb.words);
        assert!(loaded.rest.array("adam.t").is_some());

        // Saving the reloaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.ckpt");
        loaded.model.to_checkpoint(&extra).save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let m = tiny_model();
        let mut ck = m.to_checkpoint(&CheckpointExtra::default());
        ck.take_array("param.logit_scale").unwrap();
        let err = match FdpModel::from_checkpoint(ck) {
            Err(e) => e,
            Ok(_) => panic!("checkpoint with a missing parameter loaded"),
        };
        assert!(err.to_string().contains("logit_scale"), "{err}");
    }

    #[test]
    fn queries_embed_through_prompts() {
        let mut m = tiny_model();
        let words: Vec<String> = ["coffee", "hotel", "and", "the"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        m.fit_clusters(&words).unwrap();
        let e = m.embed_query("coffee").unwrap();
        assert_eq!(e.dims(), &[1, m.cfg.model.embed_dim()]);
        assert!(e.data().iter().all(|v| v.is_finite()));
        // Phrases run the same path unchanged.
        let p = m.embed_query("no smoking").unwrap();
        assert_eq!(p.dims(), e.dims());
    }
}
