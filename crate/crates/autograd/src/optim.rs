use crate::{Gradients, ParamId, ParamStore, Real, Tensor};

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from accumulated gradients. Non-trainable entries are skipped.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (id, g) in grads {
            if !store.entry(*id).trainable {
                continue;
            }
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let p = store.get_mut(*id);
            for (((w, &gv), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv.to_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gv;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gv * gv;
                let upd = self.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w = T::from_f64(w.to_f64() - upd);
            }
        }
    }
}

/// Sums gradients of several reverse passes per parameter (batch accumulation).
#[derive(Default)]
pub struct GradAccumulator<T: Real> {
    sums: Vec<Option<Tensor<T>>>,
}

impl<T: Real> GradAccumulator<T> {
    pub fn new() -> Self {
        GradAccumulator { sums: Vec::new() }
    }

    pub fn add(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            if self.sums.len() <= id.index() {
                self.sums.resize(id.index() + 1, None);
            }
            match &mut self.sums[id.index()] {
                Some(s) => s.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let sq: f64 = self
            .sums
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|v| v.to_f64().powi(2))
            .sum();
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let k = T::from_f64(max_norm / norm);
            for t in self.sums.iter_mut().flatten() {
                for v in t.data_mut() {
                    *v *= k;
                }
            }
        }
        norm
    }

    pub fn into_vec(self) -> Vec<(ParamId, Tensor<T>)> {
        self.sums
            .into_iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (ParamId(i), t)))
            .collect()
    }
}
