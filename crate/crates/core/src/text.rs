//! Text transformer: pre-norm encoder over the valid token prefix, sentence
//! feature read at the end marker, learnable prompt context vectors, and a
//! cached probe encoding.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::nn::{AttnOpts, LayerNorm, Linear, Mha};
use crate::ops;
use crate::params::{ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tokenizer::{self, TokenSequence, CONTEXT, VOCAB};
use rand::Rng;

/// Word class assigned by the query distinguisher. Content words carry
/// scene semantics; function words are grammatical glue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordClass {
    Content,
    Function,
}

/// One prompt request: the query string and which context bank it uses.
#[derive(Clone, Debug)]
pub struct PromptSpec {
    pub query: String,
    pub class: WordClass,
}

/// Two disjoint banks of learnable context vectors, one per word class.
/// Rows are token-embedding-dimension vectors inserted after the begin
/// marker; `m` (content) and `n` (function) may differ.
pub struct ContextBank {
    pub content: ParamId,
    pub function: ParamId,
    pub m: usize,
    pub n: usize,
}

impl ContextBank {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        m: usize,
        n: usize,
        sigma: Real,
        rng: &mut impl Rng,
    ) -> ContextBank {
        ContextBank {
            content: ps.add(format!("{name}.content"), Array::randn(&[m, dim], 0.0, sigma, rng)),
            function: ps.add(format!("{name}.function"), Array::randn(&[n, dim], 0.0, sigma, rng)),
            m,
            n,
        }
    }
}

/// Pre-norm transformer block: self-attention then a GELU MLP, both with
/// residual connections.
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: Mha,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl EncoderBlock {
    fn new(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
        rng: &mut impl Rng,
    ) -> EncoderBlock {
        EncoderBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim),
            attn: Mha::new(ps, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim),
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, mlp_dim, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), mlp_dim, dim, rng),
        }
    }

    /// `attn_bias`, when given, is added to every head's attention logits;
    /// tests use it to prove that masked padding matches prefix encoding.
    pub fn apply<'t>(&self, ps: &ParamSet, x: Var<'t>, attn_bias: Option<&Array>) -> Var<'t> {
        let h = self.ln1.apply(ps, x);
        let opts = AttnOpts {
            logit_bias: attn_bias,
            ..AttnOpts::default()
        };
        let x = ops::add(x, self.attn.attend(ps, h, h, opts));
        let m = self.fc2.apply(
            ps,
            ops::gelu(self.fc1.apply(ps, self.ln2.apply(ps, x))),
        );
        ops::add(x, m)
    }
}

/// Sentence embedding plus the per-token hidden states it was read from.
pub struct TextOut<'t> {
    /// 1 x E sentence feature, projected from the end-marker hidden state.
    pub embedding: Var<'t>,
    /// L x dim hidden states after the final layer norm, valid positions only.
    pub hidden: Var<'t>,
}

/// Token/position embeddings, a stack of [`EncoderBlock`]s, a final layer
/// norm, and a bias-free sentence projection. Only the valid token prefix is
/// ever embedded, so padding cannot influence any output.
pub struct TextEncoder {
    pub dim: usize,
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub ln_final: LayerNorm,
    pub proj: Linear,
}

impl TextEncoder {
    pub fn new(
        ps: &mut ParamSet,
        dim: usize,
        heads: usize,
        layers: usize,
        mlp_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> TextEncoder {
        let tok_embed = ps.add("text.tok_embed", Array::randn(&[VOCAB, dim], 0.0, 0.02, rng));
        let pos_embed = ps.add("text.pos_embed", Array::randn(&[CONTEXT, dim], 0.0, 0.01, rng));
        let blocks = (0..layers)
            .map(|i| EncoderBlock::new(ps, &format!("text.b{i}"), dim, heads, mlp_dim, rng))
            .collect();
        TextEncoder {
            dim,
            tok_embed,
            pos_embed,
            blocks,
            ln_final: LayerNorm::new(ps, "text.ln_final", dim),
            proj: Linear::new_no_bias(ps, "text.proj", dim, out_dim, rng),
        }
    }

    /// Embeds the valid prefix of `seq`, optionally splicing context vectors
    /// between the begin marker and the first character. Returns the embedded
    /// rows and the end-marker row index.
    fn embed_with_context<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        seq: &TokenSequence,
        context: Option<Var<'t>>,
    ) -> (Var<'t>, usize) {
        let ids: Vec<usize> = seq.ids().iter().map(|&i| i as usize).collect();
        let table = tape.param(ps, self.tok_embed);
        let tok = match context {
            None => ops::select_rows(table, &ids),
            Some(ctx) => {
                let begin = ops::select_rows(table, &ids[..1]);
                let rest = ops::select_rows(table, &ids[1..]);
                ops::concat_rows(&[begin, ctx, rest])
            }
        };
        let total = tok.dims()[0];
        let pos = ops::slice_rows(tape.param(ps, self.pos_embed), 0, total);
        (ops::add(tok, pos), total - 1)
    }

    /// Runs the block stack and reads the sentence feature at `eos_row`.
    fn forward_embedded<'t>(&self, ps: &ParamSet, x: Var<'t>, eos_row: usize) -> TextOut<'t> {
        let mut x = x;
        for block in &self.blocks {
            x = block.apply(ps, x, None);
        }
        let hidden = self.ln_final.apply(ps, x);
        let embedding = self.proj.apply(ps, ops::slice_rows(hidden, eos_row, 1));
        TextOut { embedding, hidden }
    }

    /// Encodes one token sequence: sentence embedding plus per-token hidden
    /// states for probing.
    pub fn encode<'t>(&self, tape: &'t Tape, ps: &ParamSet, seq: &TokenSequence) -> TextOut<'t> {
        let (x, eos_row) = self.embed_with_context(tape, ps, seq, None);
        self.forward_embedded(ps, x, eos_row)
    }

    /// Builds [begin, context vectors, query characters, end] and encodes it.
    /// An empty bank row count degenerates to plain [`Self::encode`], bit for
    /// bit, since both then run the identical embedding path.
    pub fn assemble_prompt<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        bank: &ContextBank,
        spec: &PromptSpec,
    ) -> Result<Var<'t>> {
        let seq = tokenizer::tokenize(&spec.query)?;
        let rows = match spec.class {
            WordClass::Content => bank.m,
            WordClass::Function => bank.n,
        };
        if seq.len() + rows > CONTEXT {
            return Err(Error::InvalidArgument(format!(
                "prompt needs {} positions but the context window holds {CONTEXT}",
                seq.len() + rows
            )));
        }
        let ctx = match spec.class {
            WordClass::Content if rows > 0 => Some(tape.param(ps, bank.content)),
            WordClass::Function if rows > 0 => Some(tape.param(ps, bank.function)),
            _ => None,
        };
        let (x, eos_row) = self.embed_with_context(tape, ps, &seq, ctx);
        Ok(self.forward_embedded(ps, x, eos_row).embedding)
    }
}

/// Probe hidden states, recomputed only when the parameters have changed.
/// The cache key is the [`ParamSet`] version counter, which every value
/// mutation bumps.
pub struct ProbeCache {
    seq: TokenSequence,
    version: Option<u64>,
    hidden: Array,
}

impl ProbeCache {
    pub fn new(probe: &str) -> Result<ProbeCache> {
        Ok(ProbeCache {
            seq: tokenizer::tokenize(probe)?,
            version: None,
            hidden: Array::zeros(&[1]),
        })
    }

    /// Token count of the probe, markers included.
    pub fn probe_len(&self) -> usize {
        self.seq.len()
    }

    pub fn tokens(&self) -> &TokenSequence {
        &self.seq
    }

    /// Per-token hidden states of the encoded probe, shape L x dim.
    pub fn hidden(&mut self, enc: &TextEncoder, ps: &ParamSet) -> &Array {
        if self.version != Some(ps.version()) {
            let tape = Tape::new();
            let out = enc.encode(&tape, ps, &self.seq);
            self.hidden = out.hidden.value().as_ref().clone();
            self.version = Some(ps.version());
        }
        &self.hidden
    }
}
