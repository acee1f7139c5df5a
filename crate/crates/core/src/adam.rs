//! Adam optimizer over a [`ParamSet`]'s gradient accumulators.
//!
//! The first/second moment buffers and the step counter are part of the
//! training state: they serialize into checkpoints so a resumed run
//! continues the exact trajectory of an uninterrupted one.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    /// Decoupled decay rate, applied only to parameters of rank >= 2
    /// (weight matrices and embedding tables, not biases, norm gains, or
    /// scalars). Configuration, not state: it does not checkpoint.
    pub weight_decay: Real,
    t: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: Real) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: params.iter().map(|(_, p)| Array::zeros(p.value.dims())).collect(),
            v: params.iter().map(|(_, p)| Array::zeros(p.value.dims())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the accumulated gradients. Does not reset them.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            if !params.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let g = params.grad(id).clone();
            let m = &mut self.m[i];
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
            }
            let v = &mut self.v[i];
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
            }
            let (m, v) = (&self.m[i], &self.v[i]);
            let w = params.value_mut(id);
            let decay = if w.dims().len() >= 2 { self.weight_decay } else { 0.0 };
            for ((wv, &mv), &vv) in w.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *wv -= self.lr * (mhat / (vhat.sqrt() + self.eps) + decay * *wv);
            }
        }
    }

    /// Optimizer state as named arrays for checkpointing. Names are derived
    /// from parameter names, step counter included as a 1-element array.
    pub fn export_state(&self, params: &ParamSet) -> Vec<(String, Array)> {
        let mut out = vec![("adam.t".to_string(), Array::scalar(self.t as Real))];
        for (id, p) in params.iter() {
            out.push((format!("adam.m.{}", p.name), self.m[id.index()].clone()));
            out.push((format!("adam.v.{}", p.name), self.v[id.index()].clone()));
        }
        out
    }

    /// Restore state exported by [`Adam::export_state`].
    pub fn import_state<F>(&mut self, params: &ParamSet, mut get: F) -> Result<()>
    where
        F: FnMut(&str) -> Option<Array>,
    {
        let t = get("adam.t").ok_or_else(|| Error::Format {
            what: "optimizer state",
            detail: "missing adam.t".into(),
        })?;
        self.t = t.item() as u64;
        for (id, p) in params.iter() {
            for (buf, kind) in [(&mut self.m, "m"), (&mut self.v, "v")] {
                let name = format!("adam.{kind}.{}", p.name);
                let arr = get(&name).ok_or_else(|| Error::Format {
                    what: "optimizer state",
                    detail: format!("missing {name}"),
                })?;
                if arr.dims() != p.value.dims() {
                    return Err(Error::Format {
                        what: "optimizer state",
                        detail: format!("{name} has shape {:?}", arr.dims()),
                    });
                }
                buf[id.index()] = arr;
            }
        }
        Ok(())
    }
}
