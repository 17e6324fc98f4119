use diffcore::{Gradients, Graph, RngStream, Scalar, Var};

use crate::error::{Error, Result};
use crate::npmodel::{Episode, ForwardMode, Model};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// The two sets used by the KL term: C′ as indices into the episode context
/// and T′ as `(x, y)` rows (context plus every target with a reading).
#[derive(Clone, Debug, PartialEq)]
pub struct KlSets {
    pub context: Vec<usize>,
    pub target_x: Vec<f64>,
    pub target_y: Vec<f64>,
}

/// `|C′| = max(1, floor(f · n))` with `f` uniform in `range`, drawn from the
/// context, which is the observable part of T′.
pub fn subsample_for_kl(ep: &Episode, rng: &mut RngStream, range: (f64, f64)) -> KlSets {
    let n = ep.n_context();
    let frac = rng.uniform_range(range.0, range.1);
    let k = ((frac * n as f64).floor() as usize).clamp(1, n);
    let mut context = rng.choose_indices(n, k);
    context.sort_unstable();
    let (target_x, target_y) = ep.supervised_points();
    KlSets {
        context,
        target_x,
        target_y,
    }
}

/// Closed-form KL(N(μ₁,σ₁²) ‖ N(μ₂,σ₂²)) summed over dimensions.
pub fn kl_diag_gaussians(mu1: &[f64], s1: &[f64], mu2: &[f64], s2: &[f64]) -> f64 {
    mu1.iter()
        .zip(s1)
        .zip(mu2.iter().zip(s2))
        .map(|((m1, a), (m2, b))| (b / a).ln() + (a * a + (m1 - m2).powi(2)) / (2.0 * b * b) - 0.5)
        .sum()
}

pub(crate) fn kl_graph<S: Scalar>(g: &mut Graph<S>, (mu1, s1): (Var, Var), (mu2, s2): (Var, Var)) -> Result<Var> {
    let ln1 = g.ln(s1)?;
    let ln2 = g.ln(s2)?;
    let log_ratio = g.sub(ln2, ln1)?;
    let var1 = g.square(s1);
    let diff = g.sub(mu1, mu2)?;
    let diff2 = g.square(diff);
    let num = g.add(var1, diff2)?;
    let var2 = g.square(s2);
    let den = g.scale(var2, S::from_real(2.0));
    let frac = g.div(num, den)?;
    let per_dim = g.add(log_ratio, frac)?;
    let per_dim = g.add_scalar(per_dim, S::from_real(-0.5));
    Ok(g.sum(per_dim))
}

/// Graph handles of one episode's loss.
pub struct LossVars {
    pub nll: Var,
    pub kl: Var,
    pub total: Var,
}

/// Negative ELBO: mean Gaussian NLL over the supervised targets, conditioned
/// on C′ with one sampled z ~ q(z|C′), plus β·KL(q(z|C′) ‖ q(z|T′)).
pub fn elbo_graph<S: Scalar>(
    model: &Model<S>,
    g: &mut Graph<S>,
    ep: &Episode,
    sets: &KlSets,
    beta: f64,
    rng: &mut RngStream,
) -> Result<LossVars> {
    let supervised: Vec<usize> = (0..ep.n_targets()).filter(|&i| ep.target_y()[i].is_some()).collect();
    if supervised.is_empty() {
        return Err(Error::Contract("episode has no supervised targets".into()));
    }
    let cond = ep.with_context_subset(&sets.context)?.with_target_subset(&supervised)?;
    let vars = model.build(g, &cond, ForwardMode::Train, rng)?;

    let mut terms = Vec::with_capacity(vars.groups.len());
    for (_, idx, mu, sigma) in &vars.groups {
        let y: Vec<S> = idx
            .iter()
            .map(|&i| S::from_real(cond.target_y()[i].expect("supervised")))
            .collect();
        let lp = g.gaussian_logpdf(&y, *mu, *sigma)?;
        terms.push(g.sum(lp));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    let m = supervised.len() as f64;
    let nll = g.scale(acc, S::from_real(-1.0 / m));
    let nll = g.add_scalar(nll, S::from_real(-HALF_LN_2PI));

    let kl = match vars.latent {
        Some(q_c) => {
            let reps = model.encode(g, &sets.target_x, &sets.target_y, ForwardMode::Train, rng)?;
            let summary = model.aggregate(g, reps)?;
            let q_t = model.latent(g, summary)?;
            kl_graph(g, q_c, q_t)?
        }
        None => g.constant(diffcore::Tensor::scalar(S::zero()))?,
    };
    let weighted = g.scale(kl, S::from_real(beta));
    let total = g.add(nll, weighted)?;
    Ok(LossVars { nll, kl, total })
}

fn breakdown<S: Scalar>(g: &Graph<S>, v: &LossVars) -> Result<LossBreakdown> {
    let b = LossBreakdown {
        nll: g.scalar(v.nll).as_f64(),
        kl: g.scalar(v.kl).as_f64(),
        total: g.scalar(v.total).as_f64(),
    };
    if !(b.nll.is_finite() && b.kl.is_finite() && b.total.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss {b:?}")));
    }
    Ok(b)
}

/// Loss and parameter gradients for one episode. The rng drives the C′
/// subsample, dropout masks and the z draw, in that order.
pub fn elbo_loss<S: Scalar>(
    model: &Model<S>,
    ep: &Episode,
    rng: &mut RngStream,
    beta: f64,
    range: (f64, f64),
) -> Result<(LossBreakdown, Gradients<S>)> {
    let sets = subsample_for_kl(ep, rng, range);
    let mut g = Graph::new();
    let vars = elbo_graph(model, &mut g, ep, &sets, beta, rng)?;
    let b = breakdown(&g, &vars)?;
    g.backward(vars.total)?;
    Ok((b, g.param_grads(model.params().len())))
}

/// Loss without gradients.
pub fn elbo_value<S: Scalar>(
    model: &Model<S>,
    ep: &Episode,
    rng: &mut RngStream,
    beta: f64,
    range: (f64, f64),
) -> Result<LossBreakdown> {
    let sets = subsample_for_kl(ep, rng, range);
    let mut g = Graph::new();
    let vars = elbo_graph(model, &mut g, ep, &sets, beta, rng)?;
    breakdown(&g, &vars)
}
