//! Public/private event-domain disentanglement.
//!
//! One public encoder is shared by all `K` events and trained against an
//! event discriminator; each event has its own private encoder, and the
//! private representations are pushed apart with an HSIC penalty over RBF
//! Gram matrices.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Affine, Bound, Group, ParamStore};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// RBF bandwidth used for every HSIC Gram matrix.
pub const HSIC_SIGMA: f64 = 1.0;

/// A stack of affine + ReLU layers.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<Affine>,
}

impl Encoder {
    fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        depth: usize,
    ) -> Self {
        let layers = (0..depth.max(1))
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { output_dim };
                Affine::new(store, rng, &format!("{name}.l{l}"), Group::Main, d_in, output_dim)
            })
            .collect();
        Encoder { layers }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(g, p, h)?;
            h = g.relu(z)?;
        }
        Ok(h)
    }
}

/// The shared public encoder and `K` private encoders, `2·D2 → D3`.
#[derive(Clone, Debug)]
pub struct DomainEncoders {
    pub public: Encoder,
    pub private: Vec<Encoder>,
}

impl DomainEncoders {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        input_dim: usize,
        output_dim: usize,
        events: usize,
        depth: usize,
    ) -> Self {
        let public = Encoder::new(store, rng, "pub_enc", input_dim, output_dim, depth);
        let private = (0..events)
            .map(|k| Encoder::new(store, rng, &format!("pri_enc{k}"), input_dim, output_dim, depth))
            .collect();
        DomainEncoders { public, private }
    }

    pub fn events(&self) -> usize {
        self.private.len()
    }

    pub fn encode_public(&self, g: &mut Graph, p: &Bound, h: Var) -> Result<Var> {
        self.public.forward(g, p, h)
    }

    /// Private encoding of event `event` (zero-based).
    pub fn encode_private(&self, g: &mut Graph, p: &Bound, h: Var, event: usize) -> Result<Var> {
        let enc = self.private.get(event).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "event index {event} out of range for {} events",
                self.private.len()
            ))
        })?;
        enc.forward(g, p, h)
    }
}

/// Per-timestep event classifier `D3 → K`.
#[derive(Clone, Debug)]
pub struct EventDiscriminator {
    pub linear: Affine,
}

/// Event-classification loss of the discriminator over all events.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorOutput {
    /// Cross-entropy summed over every event and timestep.
    pub loss: Var,
    /// Number of timesteps whose arg-max logit names the true event.
    pub correct: usize,
    pub total: usize,
}

impl DiscriminatorOutput {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

impl EventDiscriminator {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, input_dim: usize, events: usize) -> Self {
        EventDiscriminator {
            linear: Affine::new(store, rng, "disc", Group::Discriminator, input_dim, events),
        }
    }

    pub fn logits(&self, g: &mut Graph, p: &Bound, public: Var) -> Result<Var> {
        self.linear.forward(g, p, public)
    }

    /// `−Σ_k Σ_t log p(event = k | Pub_k[t])`; the label of every row of
    /// `pubs[k]` is `k`.
    pub fn loss(&self, g: &mut Graph, p: &Bound, pubs: &[Var]) -> Result<DiscriminatorOutput> {
        let events = pubs.len();
        if events != self.linear.output_dim {
            return Err(Error::InvalidArgument(format!(
                "discriminator expects {} events, got {events}",
                self.linear.output_dim
            )));
        }
        let mut total_loss: Option<Var> = None;
        let mut correct = 0;
        let mut total = 0;
        for (k, &pub_k) in pubs.iter().enumerate() {
            let logits = self.logits(g, p, pub_k)?;
            let rows = g.shape(logits)[0];
            for t in 0..rows {
                if argmax(g.value(logits).row_slice(t)) == k {
                    correct += 1;
                }
            }
            total += rows;
            let logp = g.log_softmax(logits)?;
            let picked = pick_column(g, logp, k)?;
            let nll = g.neg(picked)?;
            total_loss = Some(match total_loss {
                Some(acc) => g.add(acc, nll)?,
                None => nll,
            });
        }
        Ok(DiscriminatorOutput {
            loss: total_loss.ok_or_else(|| Error::InvalidArgument("no events".into()))?,
            correct,
            total,
        })
    }
}

/// `Σ_t x[t, col]` as a scalar.
pub(crate) fn pick_column(g: &mut Graph, x: Var, col: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    for t in 0..shape[0] {
        mask.set(t, col, 1.0);
    }
    let mask = g.constant(mask)?;
    let picked = g.mul(x, mask)?;
    g.sum(picked)
}

/// Index of the largest value; ties resolve to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `L_adv = −L_disc`.
pub fn adversarial_loss(g: &mut Graph, disc_loss: Var) -> Result<Var> {
    g.neg(disc_loss)
}

/// `I − (1/T)·11ᵀ`.
pub fn centering_matrix(n: usize) -> Tensor {
    let mut c = Tensor::full(&[n, n], -1.0 / n as f64);
    for i in 0..n {
        c.set(i, i, 1.0 - 1.0 / n as f64);
    }
    c
}

/// `L[a, b] = exp(−‖x_a − x_b‖² / (2σ²))`.
pub fn rbf_gram(g: &mut Graph, x: Var, sigma: f64) -> Result<Var> {
    let d = g.sq_dists(x)?;
    let scaled = g.scale(d, -1.0 / (2.0 * sigma * sigma))?;
    g.exp(scaled)
}

/// `trace(L_x C L_y C)` with RBF Gram matrices (σ = 1) and centering `C`.
pub fn hsic(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let (tx, ty) = (g.shape(x)[0], g.shape(y)[0]);
    if tx != ty {
        return Err(Error::ShapeMismatch {
            op: "hsic",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(y).to_vec(),
        });
    }
    if tx < 2 {
        return g.constant(Tensor::scalar(0.0));
    }
    let lx = rbf_gram(g, x, HSIC_SIGMA)?;
    let ly = rbf_gram(g, y, HSIC_SIGMA)?;
    let c = g.constant(centering_matrix(tx))?;
    let lxc = g.matmul(lx, c)?;
    let lyc = g.matmul(ly, c)?;
    let prod = g.matmul(lxc, lyc)?;
    g.trace(prod)
}

/// HSIC of two plain matrices.
pub fn hsic_value(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone())?;
    let yv = g.constant(y.clone())?;
    let h = hsic(&mut g, xv, yv)?;
    Ok(g.value(h).item())
}

/// `Σ_{i ≠ j} HSIC(Pri_i, Pri_j)` over ordered pairs.
pub fn hsic_total(g: &mut Graph, privates: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for i in 0..privates.len() {
        for j in 0..privates.len() {
            if i == j {
                continue;
            }
            let h = hsic(g, privates[i], privates[j])?;
            acc = Some(match acc {
                Some(a) => g.add(a, h)?,
                None => h,
            });
        }
    }
    match acc {
        Some(a) => Ok(a),
        None => g.constant(Tensor::scalar(0.0)),
    }
}

/// `[mean_k Pub_k ‖ Pri_1 ‖ … ‖ Pri_K]`, a `T × (1 + K)·D3` matrix.
pub fn aggregate(g: &mut Graph, pubs: &[Var], privates: &[Var]) -> Result<Var> {
    let first = *pubs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no public features".into()))?;
    let frames = g.shape(first)[0];
    for &v in pubs.iter().chain(privates) {
        if g.shape(v)[0] != frames {
            return Err(Error::ShapeMismatch {
                op: "aggregate",
                lhs: g.shape(first).to_vec(),
                rhs: g.shape(v).to_vec(),
            });
        }
    }
    let mut sum = first;
    for &v in &pubs[1..] {
        sum = g.add(sum, v)?;
    }
    let mean = g.scale(sum, 1.0 / pubs.len() as f64)?;
    let mut parts = vec![mean];
    parts.extend_from_slice(privates);
    g.concat_cols(&parts)
}
