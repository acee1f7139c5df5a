//! Finite-difference verification of the reverse-mode gradients.
//!
//! For a scalar-valued graph builder `f`, every sampled parameter coordinate
//! is perturbed by `±step` and the central difference is compared against
//! the taped gradient. This is the ground truth the rest of the crate is
//! tested against; it must stay independent of the tape internals (it only
//! calls `backward` once and otherwise re-evaluates values).

use crate::array::Real;
use crate::params::{ParamId, ParamSet};
use crate::rng;
use crate::tape::{Tape, Var};
use rand::Rng;
use std::collections::HashSet;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: Real,
    /// Coordinates sampled per parameter; 0 checks every coordinate.
    pub samples_per_param: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Maximum accepted relative error.
    pub tolerance: Real,
    /// Denominator floor in the relative-error formula. Central differences
    /// carry ~1e-11 absolute roundoff noise at step 1e-5, so coordinates
    /// whose true gradient is (near) zero need the floor to avoid reporting
    /// noise as error; 1e-3 keeps the absolute discrepancy bound at
    /// `tolerance * 1e-3`, far above the noise.
    pub floor: Real,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            samples_per_param: 0,
            seed: 0,
            tolerance: 1e-6,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordRecord {
    pub param: String,
    pub coord: usize,
    pub analytic: Real,
    pub numeric: Real,
    pub rel_err: Real,
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: Real,
    pub worst: Option<CoordRecord>,
    pub failures: Vec<CoordRecord>,
    pub tolerance: Real,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        match &self.worst {
            Some(w) => format!(
                "{} coords, max rel err {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}), tolerance {:.1e}: {}",
                self.coords_checked,
                self.max_rel_err,
                w.param,
                w.coord,
                w.analytic,
                w.numeric,
                self.tolerance,
                if self.passed() { "ok" } else { "FAIL" }
            ),
            None => "0 coords checked".to_string(),
        }
    }
}

fn rel_err(a: Real, n: Real, floor: Real) -> Real {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Evaluate the builder once and return the scalar loss value.
pub fn eval_loss<F>(params: &ParamSet, build: &F) -> Real
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    let tape = Tape::new();
    let root = build(&tape, params);
    root.value().item()
}

/// Compare taped gradients of `build` against central differences.
///
/// `build` must be a deterministic function of `params` alone: any sampling
/// it needs has to happen outside (or be derived from fixed seeds).
pub fn grad_check<F>(
    params: &mut ParamSet,
    ids: &[ParamId],
    cfg: &GradCheckConfig,
    build: F,
) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &ParamSet) -> Var<'t>,
{
    let tape = Tape::new();
    let root = build(&tape, params);
    assert!(
        root.value().item().is_finite(),
        "loss is non-finite at the base point"
    );
    let grads = tape.backward(root);
    drop(tape);

    let mut sampler = rng::seeded(cfg.seed);
    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance: cfg.tolerance,
    };

    for &id in ids {
        let numel = params.value(id).numel();
        let analytic = grads.wrt(params, id);
        let coords: Vec<usize> =
            if cfg.samples_per_param == 0 || cfg.samples_per_param >= numel {
                (0..numel).collect()
            } else {
                let mut seen = HashSet::new();
                while seen.len() < cfg.samples_per_param {
                    seen.insert(sampler.gen_range(0..numel));
                }
                let mut v: Vec<usize> = seen.into_iter().collect();
                v.sort_unstable();
                v
            };

        for coord in coords {
            let orig = params.value(id).data()[coord];
            params.value_mut(id).data_mut()[coord] = orig + cfg.step;
            let plus = eval_loss(params, &build);
            params.value_mut(id).data_mut()[coord] = orig - cfg.step;
            let minus = eval_loss(params, &build);
            params.value_mut(id).data_mut()[coord] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[coord];
            let err = rel_err(a, numeric, cfg.floor);
            let record = CoordRecord {
                param: params.name(id).to_string(),
                coord,
                analytic: a,
                numeric,
                rel_err: err,
            };
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(record.clone());
            }
            if err > cfg.tolerance {
                report.failures.push(record);
            }
        }
    }
    report
}
