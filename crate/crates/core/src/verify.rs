//! Whole-model gradient verification. Three parameter groups, each driven by
//! its own scalar objective, are checked against central differences: the
//! image tower end to end (backbone, per-location head, localization,
//! shifted pooling, probe fusion, and the probe's text encoding), the prompt
//! tower (context banks spliced into the text encoder), and the scalar that
//! only the loss terms touch.

use crate::array::{Array, Real};
use crate::config::Config;
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::loss;
use crate::model::FdpModel;
use crate::params::{ParamId, ParamSet};
use crate::text::{PromptSpec, WordClass};
use crate::{ops, rng};
use rand::Rng;

pub struct GradGroup {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn ids_with_prefix(ps: &ParamSet, prefixes: &[&str]) -> Vec<ParamId> {
    ps.iter()
        .filter(|(_, p)| prefixes.iter().any(|pre| p.name.starts_with(pre)))
        .map(|(id, _)| id)
        .collect()
}

/// Binary grid with both classes present, so the class-balance weight is
/// interior and every localization logit carries gradient.
fn mixed_loc_target(grid: usize, rng: &mut impl Rng) -> Array {
    let mut t = Array::zeros(&[grid, grid]);
    for v in t.data_mut() {
        *v = if rng.gen::<f64>() < 0.3 { 1.0 } else { 0.0 };
    }
    t.data_mut()[0] = 1.0;
    t.data_mut()[1] = 0.0;
    t
}

/// Verify every parameter gradient of a freshly built model against finite
/// differences. `samples` coordinates are drawn per tensor (0 checks all).
///
/// Parameters are first jittered away from their initialization: the fusion
/// output projection starts at zero, which would otherwise zero out the
/// gradient through the whole probe path and make that part of the check
/// vacuous.
pub fn verify_gradients(
    cfg: &Config,
    samples: usize,
    tolerance: Real,
    seed: u64,
) -> Result<Vec<GradGroup>> {
    let model = FdpModel::new(cfg)?;
    let FdpModel {
        cfg,
        params: mut ps,
        text,
        vision,
        fusion,
        bank,
        logit_scale,
        probe,
        ..
    } = model;

    let mut jitter = rng::substream(seed, 21);
    let all: Vec<ParamId> = ps.ids().collect();
    for id in all {
        let noise = Array::randn(ps.value(id).dims(), 0.0, 0.02, &mut jitter);
        ps.value_mut(id).add_in_place(&noise);
    }

    let check = GradCheckConfig {
        samples_per_param: samples,
        tolerance,
        seed,
        ..GradCheckConfig::default()
    };
    let mut r = rng::substream(seed, 22);
    let e = cfg.model.embed_dim();
    let mut groups = Vec::new();

    // Image tower: random preprocessed input, localization loss plus a random
    // projection of the embedding so every output coordinate has a distinct
    // gradient. Mirrors the switch handling of the training forward pass.
    {
        let side = cfg.model.input_side;
        let g = vision.grid;
        let input = Array::randn(&[3, side, side], 0.0, 1.0, &mut r);
        let target = mixed_loc_target(g, &mut r);
        let proj = Array::randn(&[1, e], 0.0, 1.0, &mut r);
        let probe_seq = probe.tokens().clone();
        let ids = ids_with_prefix(&ps, &["img.", "fuse.", "text."]);
        let report = grad_check(&mut ps, &ids, &check, |tape, ps| {
            let x = tape.constant(input.clone());
            let f_global = vision.backbone(ps, x);
            let f_conv = vision.reformulated_head(ps, f_global);
            let loc = vision.localize(ps, f_conv);
            let pool_map = if cfg.model.attention_shift {
                loc
            } else {
                tape.constant(Array::filled(&[1, g, g], 1.0 / (g * g) as Real))
            };
            let f_attn = vision.attention_pool_shifted(ps, f_global, pool_map);
            let embed = if cfg.model.probing {
                let hidden = text.encode(tape, ps, &probe_seq).hidden;
                fusion.fuse(ps, f_attn, hidden).expect("probe is nonempty")
            } else {
                f_attn
            };
            let l_loc = loss::loc_loss(loc, &target);
            let l_embed = ops::sum_all(ops::mul(embed, tape.constant(proj.clone())));
            ops::add(l_loc, l_embed)
        });
        groups.push(GradGroup {
            name: "image-tower",
            report,
        });
    }

    // Prompt tower: one content and one function prompt, each projected with
    // its own random vector. Routing is fixed by the spec, no clusters needed.
    {
        let specs = [
            PromptSpec {
                query: "market".into(),
                class: WordClass::Content,
            },
            PromptSpec {
                query: "of".into(),
                class: WordClass::Function,
            },
        ];
        let projs = [
            Array::randn(&[1, e], 0.0, 1.0, &mut r),
            Array::randn(&[1, e], 0.0, 1.0, &mut r),
        ];
        let ids = ids_with_prefix(&ps, &["text.", "prompt."]);
        let report = grad_check(&mut ps, &ids, &check, |tape, ps| {
            let mut total = None;
            for (spec, proj) in specs.iter().zip(&projs) {
                let embed = text
                    .assemble_prompt(tape, ps, &bank, spec)
                    .expect("prompt fits the context window");
                let term = ops::sum_all(ops::mul(embed, tape.constant(proj.clone())));
                total = Some(match total {
                    None => term,
                    Some(t) => ops::add(t, term),
                });
            }
            total.expect("two specs")
        });
        groups.push(GradGroup {
            name: "prompt-tower",
            report,
        });
    }

    // Loss scalar: alignment plus distraction on fixed embeddings, so only
    // the temperature parameter carries gradient.
    {
        let img = Array::randn(&[4, e], 0.0, 1.0, &mut r);
        let txt = Array::randn(&[4, e], 0.0, 1.0, &mut r);
        let sims = Array::randn(&[1, 5], 0.0, 0.3, &mut r);
        let dists: Vec<Real> = (0..5).map(|_| r.gen_range(1..6) as Real).collect();
        let report = grad_check(&mut ps, &[logit_scale], &check, |tape, ps| {
            let ls = tape.param(ps, logit_scale);
            let a = loss::align_loss(
                tape.constant(img.clone()),
                tape.constant(txt.clone()),
                ls,
                None,
            )
            .expect("batch of 4");
            let d = loss::distract_loss(tape.constant(sims.clone()), &dists, ls);
            ops::add(a, d)
        });
        groups.push(GradGroup {
            name: "losses",
            report,
        });
    }

    Ok(groups)
}
