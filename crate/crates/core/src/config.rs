//! Run configuration: an INI-style file with `[model]` and `[training]`
//! sections, every key optional. Unknown sections or keys are rejected so a
//! typo cannot silently fall back to a default; the effective configuration
//! can be echoed back out in the same format it is parsed from.

use crate::array::Real;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_side: usize,
    /// Backbone output channels, one per stride-2 block; the last entry is
    /// the shared embedding width E.
    pub channels: Vec<usize>,
    pub vision_heads: usize,
    pub loc_kernel: usize,
    pub text_dim: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub text_mlp: usize,
    /// M content and N function context vectors.
    pub content_tokens: usize,
    pub function_tokens: usize,
    pub context_sigma: Real,
    pub probe: String,
    pub fuse_heads: usize,
    pub norm_mean: Real,
    pub norm_std: Real,
    /// Ablation switch: false pools with a uniform map instead of the
    /// localization probabilities.
    pub attention_shift: bool,
    /// Ablation switch: false bypasses probe fusion entirely.
    pub probing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lambda_loc: Real,
    pub lambda_align: Real,
    pub lambda_distract: Real,
    /// K distracted queries per batch item.
    pub distracted: usize,
    pub lr: Real,
    /// Decoupled weight decay on matrix-shaped parameters; 0 disables it.
    pub weight_decay: Real,
    /// Per-step translation and color jitter on training images. Draws come
    /// from the epoch stream, so runs stay reproducible.
    pub augment: bool,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub temperature_init: Real,
    /// Fraction of steps that run the text-free localization pass.
    pub aux_rate: Real,
    pub cluster_k: usize,
    pub cluster_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 96,
            channels: vec![24, 48, 64],
            vision_heads: 4,
            loc_kernel: 1,
            text_dim: 64,
            text_layers: 2,
            text_heads: 4,
            text_mlp: 128,
            content_tokens: 4,
            function_tokens: 2,
            context_sigma: 0.02,
            probe: "scene text".to_string(),
            fuse_heads: 4,
            norm_mean: 0.5,
            norm_std: 0.25,
            attention_shift: true,
            probing: true,
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_loc: 1.0,
            lambda_align: 1.0,
            lambda_distract: 1.0,
            distracted: 5,
            lr: 2e-3,
            weight_decay: 0.0,
            augment: true,
            batch: 16,
            epochs: 10,
            seed: 0,
            temperature_init: crate::loss::LOGIT_SCALE_INIT,
            aux_rate: 0.1,
            cluster_k: 2,
            cluster_seed: 1,
        }
    }
}

impl ModelConfig {
    /// Shared embedding width E (last backbone channel count).
    pub fn embed_dim(&self) -> usize {
        *self.channels.last().expect("validated: channels non-empty")
    }

    /// Pooled grid side after the strided backbone.
    pub fn grid(&self) -> usize {
        self.input_side >> self.channels.len()
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| {
        Error::Config(format!("bad value for [{section}] {key}: {raw:?}"))
    })
}

fn parse_list(section: &str, key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|p| parse(section, key, p)).collect()
}

fn parse_bool(section: &str, key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value for [{section}] {key}: {other:?} (want true/false)"
        ))),
    }
}

impl Config {
    /// Parses INI text over the defaults. Lines are `key = value`, sections
    /// are `[model]` / `[training]`; `#` starts a comment. Values keep
    /// internal spaces (the probe string is multi-word).
    pub fn from_str(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: malformed section {line:?}", lineno + 1))
                })?;
                if !matches!(name, "model" | "training") {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{name}]",
                        lineno + 1
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(&section, key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Config::from_str(&text)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.training;
        match (section, key) {
            ("model", "input_side") => m.input_side = parse(section, key, value)?,
            ("model", "channels") => m.channels = parse_list(section, key, value)?,
            ("model", "vision_heads") => m.vision_heads = parse(section, key, value)?,
            ("model", "loc_kernel") => m.loc_kernel = parse(section, key, value)?,
            ("model", "text_dim") => m.text_dim = parse(section, key, value)?,
            ("model", "text_layers") => m.text_layers = parse(section, key, value)?,
            ("model", "text_heads") => m.text_heads = parse(section, key, value)?,
            ("model", "text_mlp") => m.text_mlp = parse(section, key, value)?,
            ("model", "content_tokens") => m.content_tokens = parse(section, key, value)?,
            ("model", "function_tokens") => m.function_tokens = parse(section, key, value)?,
            ("model", "context_sigma") => m.context_sigma = parse(section, key, value)?,
            ("model", "probe") => m.probe = value.to_string(),
            ("model", "fuse_heads") => m.fuse_heads = parse(section, key, value)?,
            ("model", "norm_mean") => m.norm_mean = parse(section, key, value)?,
            ("model", "norm_std") => m.norm_std = parse(section, key, value)?,
            ("model", "attention_shift") => m.attention_shift = parse_bool(section, key, value)?,
            ("model", "probing") => m.probing = parse_bool(section, key, value)?,
            ("training", "lambda_loc") => t.lambda_loc = parse(section, key, value)?,
            ("training", "lambda_align") => t.lambda_align = parse(section, key, value)?,
            ("training", "lambda_distract") => t.lambda_distract = parse(section, key, value)?,
            ("training", "distracted") => t.distracted = parse(section, key, value)?,
            ("training", "lr") => t.lr = parse(section, key, value)?,
            ("training", "weight_decay") => t.weight_decay = parse(section, key, value)?,
            ("training", "augment") => t.augment = parse_bool(section, key, value)?,
            ("training", "batch") => t.batch = parse(section, key, value)?,
            ("training", "epochs") => t.epochs = parse(section, key, value)?,
            ("training", "seed") => t.seed = parse(section, key, value)?,
            ("training", "temperature_init") => t.temperature_init = parse(section, key, value)?,
            ("training", "aux_rate") => t.aux_rate = parse(section, key, value)?,
            ("training", "cluster_k") => t.cluster_k = parse(section, key, value)?,
            ("training", "cluster_seed") => t.cluster_seed = parse(section, key, value)?,
            ("", _) => {
                return Err(Error::Config(format!(
                    "key {key:?} appears before any [section]"
                )))
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?} in section [{section}]"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let t = &self.training;
        let fail = |msg: String| Err(Error::Config(msg));
        if m.channels.is_empty() {
            return fail("channels must list at least one block".into());
        }
        if m.input_side % (1 << m.channels.len()) != 0 {
            return fail(format!(
                "input_side {} not divisible by backbone stride {}",
                m.input_side,
                1 << m.channels.len()
            ));
        }
        if m.probe.trim().is_empty() {
            return fail("probe string must be non-empty".into());
        }
        let e = m.embed_dim();
        for (name, heads) in [("vision_heads", m.vision_heads), ("fuse_heads", m.fuse_heads)] {
            if heads == 0 || e % heads != 0 {
                return fail(format!("{name} must divide embedding width {e}"));
            }
        }
        if m.text_heads == 0 || m.text_dim % m.text_heads != 0 {
            return fail(format!("text_heads must divide text_dim {}", m.text_dim));
        }
        // Probe fusion attends the pooled image feature over per-token text
        // states, so the two towers must share one width.
        if m.text_dim != e {
            return fail(format!(
                "text_dim {} must equal the embedding width {e} (last channel)",
                m.text_dim
            ));
        }
        if m.loc_kernel % 2 == 0 {
            return fail("loc_kernel must be odd".into());
        }
        if m.norm_std <= 0.0 {
            return fail("norm_std must be positive".into());
        }
        for (name, v) in [
            ("lambda_loc", t.lambda_loc),
            ("lambda_align", t.lambda_align),
            ("lambda_distract", t.lambda_distract),
        ] {
            if !(v >= 0.0) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if t.distracted < 1 {
            return fail("distracted must be at least 1".into());
        }
        if t.batch < 2 {
            return fail("batch must be at least 2 for the alignment loss".into());
        }
        if !(t.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", t.lr));
        }
        if !(t.weight_decay >= 0.0) {
            return fail(format!(
                "weight_decay must be non-negative, got {}",
                t.weight_decay
            ));
        }
        if !(0.0..=1.0).contains(&t.aux_rate) {
            return fail(format!("aux_rate must lie in [0,1], got {}", t.aux_rate));
        }
        if t.cluster_k < 1 {
            return fail("cluster_k must be at least 1".into());
        }
        Ok(())
    }

    /// The full effective configuration in the accepted file format.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let t = &self.training;
        let channels: Vec<String> = m.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "[model]\n\
             input_side = {}\n\
             channels = {}\n\
             vision_heads = {}\n\
             loc_kernel = {}\n\
             text_dim = {}\n\
             text_layers = {}\n\
             text_heads = {}\n\
             text_mlp = {}\n\
             content_tokens = {}\n\
             function_tokens = {}\n\
             context_sigma = {}\n\
             probe = {}\n\
             fuse_heads = {}\n\
             norm_mean = {}\n\
             norm_std = {}\n\
             attention_shift = {}\n\
             probing = {}\n\
             [training]\n\
             lambda_loc = {}\n\
             lambda_align = {}\n\
             lambda_distract = {}\n\
             distracted = {}\n\
             lr = {}\n\
             weight_decay = {}\n\
             augment = {}\n\
             batch = {}\n\
             epochs = {}\n\
             seed = {}\n\
             temperature_init = {}\n\
             aux_rate = {}\n\
             cluster_k = {}\n\
             cluster_seed = {}\n",
            m.input_side,
            channels.join(","),
            m.vision_heads,
            m.loc_kernel,
            m.text_dim,
            m.text_layers,
            m.text_heads,
            m.text_mlp,
            m.content_tokens,
            m.function_tokens,
            m.context_sigma,
            m.probe,
            m.fuse_heads,
            m.norm_mean,
            m.norm_std,
            m.attention_shift,
            m.probing,
            t.lambda_loc,
            t.lambda_align,
            t.lambda_distract,
            t.distracted,
            t.lr,
            t.weight_decay,
            t.augment,
            t.batch,
            t.epochs,
            t.seed,
            t.temperature_init,
            t.aux_rate,
            t.cluster_k,
            t.cluster_seed,
        )
    }

    /// Reduced preset for tests: 16 px input, narrow towers, everything else
    /// at defaults.
    pub fn tiny() -> Config {
        let mut cfg = Config::default();
        cfg.model.input_side = 16;
        cfg.model.channels = vec![8, 16];
        cfg.model.vision_heads = 2;
        cfg.model.text_dim = 16;
        cfg.model.text_layers = 2;
        cfg.model.text_heads = 2;
        cfg.model.text_mlp = 32;
        cfg.model.content_tokens = 2;
        cfg.model.function_tokens = 1;
        cfg.model.fuse_heads = 2;
        cfg.training.batch = 4;
        cfg.validate().expect("tiny preset is valid");
        cfg
    }
}
