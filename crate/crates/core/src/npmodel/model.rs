use diffcore::{Graph, ParamId, ParamStore, RngStream, Scalar, Tensor, Var};

use super::{Episode, ModelConfig, SubTask, Variant};
use crate::error::{Error, Result};

/// Lower bound added to the latent standard deviation.
const LATENT_SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

/// Handles of every learnable tensor. For variants other than TA-ANP the
/// three query projections are the same id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelIds {
    pub encoder: [Linear; 3],
    pub latent_hidden: Option<Linear>,
    pub latent_out: Option<Linear>,
    pub wq_s: ParamId,
    pub wq_t: ParamId,
    pub wq_st: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub decoder: [Linear; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    /// Dropout on, latent sampled.
    Train,
    /// One Monte-Carlo pass: dropout on, latent sampled when dropout is active.
    InferMc,
    /// Dropout off, latent at its posterior mean.
    InferPlain,
}

impl ForwardMode {
    pub fn stochastic(self) -> bool {
        !matches!(self, ForwardMode::InferPlain)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub mu_z: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub z_sample: Option<Vec<f64>>,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    /// Per subtask group: target indices, μ (m×1) and σ (m×1).
    pub groups: Vec<(SubTask, Vec<usize>, Var, Var)>,
    /// `(μ_z, σ_z)` of q(z | context).
    pub latent: Option<(Var, Var)>,
    pub z: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    x_dim: usize,
    y_scale: f64,
    store: ParamStore<S>,
    ids: ModelIds,
}

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;

fn linear<S: Scalar>(store: &mut ParamStore<S>, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Linear {
    Linear {
        w: store.insert_glorot(format!("{name}.w"), fan_in, fan_out, rng),
        b: store.insert_zeros(format!("{name}.b"), 1, fan_out),
    }
}

impl<S: Scalar> Model<S> {
    /// Fresh parameters for `x_dim` features; flows are divided by `y_scale`
    /// on input and the decoder works in the same units.
    pub fn new(config: ModelConfig, x_dim: usize, y_scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if x_dim == 0 {
            return Err(Error::Config("x_dim must be positive".into()));
        }
        if !(y_scale > 0.0 && y_scale.is_finite()) {
            return Err(Error::Config(format!("y_scale must be positive, got {y_scale}")));
        }
        let mut rng = RngStream::new(seed, 0x1417);
        let mut store = ParamStore::new();
        let (h, r, l) = (config.hidden, config.rep_dim, config.latent_dim);
        let encoder = [
            linear(&mut store, "enc.0", x_dim + 1, h, &mut rng),
            linear(&mut store, "enc.1", h, h, &mut rng),
            linear(&mut store, "enc.2", h, r, &mut rng),
        ];
        let (latent_hidden, latent_out) = if config.variant.has_latent() {
            (
                Some(linear(&mut store, "lat.0", r, h, &mut rng)),
                Some(linear(&mut store, "lat.1", h, 2 * l, &mut rng)),
            )
        } else {
            (None, None)
        };
        let (wq_s, wq_t, wq_st) = if config.variant == Variant::Taanp {
            (
                store.insert_glorot("attn.wq_s", x_dim, r, &mut rng),
                store.insert_glorot("attn.wq_t", x_dim, r, &mut rng),
                store.insert_glorot("attn.wq_st", x_dim, r, &mut rng),
            )
        } else {
            let shared = store.insert_glorot("attn.wq", x_dim, r, &mut rng);
            (shared, shared, shared)
        };
        let wk = store.insert_glorot("attn.wk", x_dim, r, &mut rng);
        let wv = store.insert_glorot("attn.wv", r, r, &mut rng);
        let wo = store.insert_glorot("attn.wo", r, r, &mut rng);
        let dec_in = x_dim
            + match config.variant {
                Variant::Cnp => r,
                Variant::Lnp => l,
                Variant::Anp | Variant::Taanp => l + r,
            };
        let decoder = [
            linear(&mut store, "dec.0", dec_in, h, &mut rng),
            linear(&mut store, "dec.1", h, h, &mut rng),
            linear(&mut store, "dec.2", h, 2, &mut rng),
        ];
        Ok(Self {
            config,
            x_dim,
            y_scale,
            store,
            ids: ModelIds {
                encoder,
                latent_hidden,
                latent_out,
                wq_s,
                wq_t,
                wq_st,
                wk,
                wv,
                wo,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn checksum(&self) -> u64 {
        self.store.checksum()
    }

    /// Override the dropout rate (ablations); parameters are untouched.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout {rate} not in [0, 1)")));
        }
        self.config.dropout = rate;
        Ok(())
    }

    /// Query projection used for targets of `task`.
    pub fn query_projection(&self, task: SubTask) -> ParamId {
        match task {
            SubTask::EstimateUnobserved => self.ids.wq_s,
            SubTask::ForecastObserved => self.ids.wq_t,
            SubTask::ForecastUnobserved => self.ids.wq_st,
        }
    }

    /// Same architecture and values in another scalar type.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            x_dim: self.x_dim,
            y_scale: self.y_scale,
            store: self.store.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Whether `z` is drawn rather than fixed at μ_z. Monte-Carlo inference
    /// draws it together with the dropout masks, so with dropout off the MC
    /// passes coincide with plain inference.
    pub fn samples_latent(&self, mode: ForwardMode) -> bool {
        match mode {
            ForwardMode::Train => true,
            ForwardMode::InferMc => self.config.dropout > 0.0,
            ForwardMode::InferPlain => false,
        }
    }

    fn s(v: f64) -> S {
        S::from_real(v)
    }

    fn apply_linear(&self, g: &mut Graph<S>, lin: Linear, x: Var) -> Result<Var> {
        let w = g.param(&self.store, lin.w);
        let h = g.matmul(x, w)?;
        let b = g.param(&self.store, lin.b);
        Ok(g.add_row(h, b)?)
    }

    /// Three-layer MLP with ReLU and dropout after both hidden layers.
    fn mlp(&self, g: &mut Graph<S>, layers: &[Linear; 3], x: Var, mode: ForwardMode, rng: &mut RngStream) -> Result<Var> {
        let mut h = x;
        for lin in &layers[..2] {
            h = self.apply_linear(g, *lin, h)?;
            h = g.relu(h);
            h = g.dropout(h, self.config.dropout, rng, mode.stochastic())?;
        }
        self.apply_linear(g, layers[2], h)
    }

    fn matrix_const(&self, g: &mut Graph<S>, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
        let t = Tensor::matrix(rows, cols, data.iter().map(|&v| Self::s(v)).collect())?;
        Ok(g.constant(t)?)
    }

    /// `[x, y / y_scale]` rows for the encoder.
    fn pair_input(&self, g: &mut Graph<S>, x: &[f64], y: &[f64]) -> Result<Var> {
        let d = self.x_dim;
        if x.len() != y.len() * d {
            return Err(Error::Config(format!(
                "feature dimension mismatch: model expects {d} per point"
            )));
        }
        let mut data = Vec::with_capacity(y.len() * (d + 1));
        for (i, &yi) in y.iter().enumerate() {
            data.extend_from_slice(&x[i * d..(i + 1) * d]);
            data.push(yi / self.y_scale);
        }
        self.matrix_const(g, y.len(), d + 1, &data)
    }

    /// Per-point representations `r_i = h(x_i, y_i)`.
    pub fn encode(&self, g: &mut Graph<S>, x: &[f64], y: &[f64], mode: ForwardMode, rng: &mut RngStream) -> Result<Var> {
        if y.is_empty() {
            return Err(Error::Contract("cannot encode an empty context".into()));
        }
        let input = self.pair_input(g, x, y)?;
        self.mlp(g, &self.ids.encoder, input, mode, rng)
    }

    /// Permutation-invariant mean of the representations.
    pub fn aggregate(&self, g: &mut Graph<S>, reps: Var) -> Result<Var> {
        Ok(g.mean_rows(reps)?)
    }

    /// `(μ_z, σ_z)` of q(z | ·) from a summary.
    pub fn latent(&self, g: &mut Graph<S>, summary: Var) -> Result<(Var, Var)> {
        let (hid, out) = match (self.ids.latent_hidden, self.ids.latent_out) {
            (Some(h), Some(o)) => (h, o),
            _ => return Err(Error::Contract(format!("{} has no latent path", self.variant()))),
        };
        let h = self.apply_linear(g, hid, summary)?;
        let h = g.relu(h);
        let o = self.apply_linear(g, out, h)?;
        let l = self.config.latent_dim;
        let mu = g.slice_cols(o, 0, l)?;
        let raw = g.slice_cols(o, l, 2 * l)?;
        let sp = g.softplus(raw);
        let sigma = g.add_scalar(sp, Self::s(LATENT_SIGMA_FLOOR));
        Ok((mu, sigma))
    }

    /// Multi-head cross-attention of targets `tx` over the context, with the
    /// query projection selected by `task`.
    pub fn attend(&self, g: &mut Graph<S>, task: SubTask, tx: Var, keys: Var, values: Var) -> Result<Var> {
        let wq = g.param(&self.store, self.query_projection(task));
        let q = g.matmul(tx, wq)?;
        let heads = self.config.heads;
        let dh = self.config.rep_dim / heads;
        let scale = Self::s(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
            let kh = g.slice_cols(keys, h * dh, (h + 1) * dh)?;
            let vh = g.slice_cols(values, h * dh, (h + 1) * dh)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores)?;
            outs.push(g.matmul(weights, vh)?);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let wo = g.param(&self.store, self.ids.wo);
        Ok(g.matmul(cat, wo)?)
    }

    /// Keys `X_C W^K` and values `r W^V` shared by all target groups.
    pub fn keys_values(&self, g: &mut Graph<S>, context_x: Var, reps: Var) -> Result<(Var, Var)> {
        let wk = g.param(&self.store, self.ids.wk);
        let wv = g.param(&self.store, self.ids.wv);
        Ok((g.matmul(context_x, wk)?, g.matmul(reps, wv)?))
    }

    /// Gaussian head. `z` and `r` are per-target rows (already broadcast).
    pub fn decode(
        &self,
        g: &mut Graph<S>,
        tx: Var,
        z: Option<Var>,
        r: Option<Var>,
        mode: ForwardMode,
        rng: &mut RngStream,
    ) -> Result<(Var, Var)> {
        let parts = match (self.variant(), z, r) {
            (Variant::Cnp, None, Some(r)) => vec![tx, r],
            (Variant::Lnp, Some(z), None) => vec![tx, z],
            (Variant::Anp | Variant::Taanp, Some(z), Some(r)) => vec![tx, z, r],
            (v, z, r) => {
                return Err(Error::Contract(format!(
                    "{v} decoder got latent={} deterministic={}",
                    z.is_some(),
                    r.is_some()
                )))
            }
        };
        let input = g.concat_cols(&parts)?;
        let out = self.mlp(g, &self.ids.decoder, input, mode, rng)?;
        let mu_raw = g.slice_cols(out, 0, 1)?;
        let mu = g.scale(mu_raw, Self::s(self.y_scale));
        let sigma = match self.config.fixed_sigma {
            Some(s) => {
                let m = g.shape(tx).0;
                g.constant(Tensor::filled(&[m, 1], Self::s(s)))?
            }
            None => {
                let raw = g.slice_cols(out, 1, 2)?;
                let sp = g.softplus(raw);
                let scaled = g.scale(sp, Self::s(self.y_scale));
                g.add_scalar(scaled, Self::s(self.config.sigma_floor))
            }
        };
        Ok((mu, sigma))
    }

    /// Full forward pass: encode → aggregate → latent → attention per task
    /// group → decode.
    pub(crate) fn build(&self, g: &mut Graph<S>, ep: &Episode, mode: ForwardMode, rng: &mut RngStream) -> Result<ForwardVars> {
        if ep.x_dim() != self.x_dim {
            return Err(Error::Config(format!(
                "episode has {} features, model expects {}",
                ep.x_dim(),
                self.x_dim
            )));
        }
        let n = ep.n_context();
        let reps = self.encode(g, ep.context_x(), ep.context_y(), mode, rng)?;
        let summary = self.aggregate(g, reps)?;

        let (latent, z) = if self.variant().has_latent() {
            let (mu_z, sigma_z) = self.latent(g, summary)?;
            let z = if self.samples_latent(mode) {
                let eps: Vec<S> = (0..self.config.latent_dim).map(|_| Self::s(rng.normal())).collect();
                let eps = g.constant(Tensor::row(eps))?;
                let noise = g.mul(sigma_z, eps)?;
                g.add(mu_z, noise)?
            } else {
                mu_z
            };
            (Some((mu_z, sigma_z)), Some(z))
        } else {
            (None, None)
        };

        let kv = if self.variant().has_attention() {
            let cx = self.matrix_const(g, n, self.x_dim, ep.context_x())?;
            Some(self.keys_values(g, cx, reps)?)
        } else {
            None
        };

        let mut groups = Vec::new();
        for (task, idx) in ep.groups() {
            let m = idx.len();
            let mut data = Vec::with_capacity(m * self.x_dim);
            for &i in &idx {
                data.extend_from_slice(ep.target_row(i));
            }
            let tx = self.matrix_const(g, m, self.x_dim, &data)?;
            let zb = match z {
                Some(z) => Some(g.broadcast_rows(z, m)?),
                None => None,
            };
            let r = match kv {
                Some((k, v)) => Some(self.attend(g, task, tx, k, v)?),
                None if self.variant() == Variant::Cnp => Some(g.broadcast_rows(summary, m)?),
                None => None,
            };
            let (mu, sigma) = self.decode(g, tx, zb, r, mode, rng)?;
            groups.push((task, idx, mu, sigma));
        }
        Ok(ForwardVars { groups, latent, z })
    }

    /// Per-target Gaussian predictions, plus the latent state when present.
    pub fn forward(&self, ep: &Episode, mode: ForwardMode, rng: &mut RngStream) -> Result<(GaussianPrediction, Option<LatentState>)> {
        let mut g = Graph::new();
        let vars = self.build(&mut g, ep, mode, rng)?;
        let m = ep.n_targets();
        let mut mu = vec![0.0; m];
        let mut sigma = vec![0.0; m];
        for (_, idx, mv, sv) in &vars.groups {
            let (mvals, svals) = (g.value(*mv).data(), g.value(*sv).data());
            for (k, &i) in idx.iter().enumerate() {
                mu[i] = mvals[k].as_f64();
                sigma[i] = svals[k].as_f64();
            }
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forward produced non-finite outputs".into()));
        }
        let latent = vars.latent.map(|(mz, sz)| LatentState {
            mu_z: g.value(mz).data().iter().map(|v| v.as_f64()).collect(),
            sigma_z: g.value(sz).data().iter().map(|v| v.as_f64()).collect(),
            z_sample: self
                .samples_latent(mode)
                .then(|| vars.z.map(|z| g.value(z).data().iter().map(|v| v.as_f64()).collect()))
                .flatten(),
        });
        Ok((GaussianPrediction { mu, sigma }, latent))
    }

    /// Representations of the episode's context points.
    pub fn encode_context(&self, ep: &Episode, mode: ForwardMode, rng: &mut RngStream) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let r = self.encode(&mut g, ep.context_x(), ep.context_y(), mode, rng)?;
        Ok(g.value(r).clone())
    }

    /// Latent posterior from a summary row; samples `z` when `rng` is given.
    pub fn latent_posterior(&self, summary: &Tensor<S>, rng: Option<&mut RngStream>) -> Result<LatentState> {
        let mut g = Graph::new();
        let s = g.constant(summary.clone())?;
        let (mu, sigma) = self.latent(&mut g, s)?;
        let mu_z: Vec<f64> = g.value(mu).data().iter().map(|v| v.as_f64()).collect();
        let sigma_z: Vec<f64> = g.value(sigma).data().iter().map(|v| v.as_f64()).collect();
        let z_sample = rng.map(|r| {
            mu_z.iter()
                .zip(&sigma_z)
                .map(|(m, s)| m + s * r.normal())
                .collect()
        });
        Ok(LatentState {
            mu_z,
            sigma_z,
            z_sample,
        })
    }
}

/// Mean over representation rows, summed in an order-independent way.
pub fn aggregate_mean<S: Scalar>(reps: &[Vec<S>]) -> Result<Vec<S>> {
    if reps.is_empty() {
        return Err(Error::Contract("cannot aggregate zero representations".into()));
    }
    let mut g = Graph::new();
    let r = g.constant(Tensor::from_rows(reps)?)?;
    let m = g.mean_rows(r)?;
    Ok(g.value(m).data().to_vec())
}
