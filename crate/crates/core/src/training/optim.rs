use diffcore::{Gradients, ParamStore, Scalar};

/// AdamW with per-parameter step counts. Parameters without a gradient in a
/// step are left untouched, including the weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<S> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) m: Vec<Vec<S>>,
    pub(crate) v: Vec<Vec<S>>,
    pub(crate) steps: Vec<u64>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(store: &ParamStore<S>, lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<S>> = store.iter().map(|(_, _, t)| vec![S::zero(); t.numel()]).collect();
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
            steps: vec![0; store.len()],
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        let c = S::from_real;
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one, lr, wd, eps) = (S::one(), c(self.lr), c(self.weight_decay), c(self.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.0;
            let Some(g) = grads.get(id) else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[k]);
            }
        }
    }
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut Gradients<S>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm {
        grads.scale(S::from_real(max_norm / norm));
    }
    norm
}
