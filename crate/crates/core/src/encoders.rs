//! Bidirectional LSTM stream encoders and the personality gate.
//!
//! Visual, audio and personality streams are each mapped to `D1` features
//! by a Bi-LSTM whose directions carry `D1 / 2` hidden units. The pooled
//! personality vector drives a sigmoid gate that rescales the audio and
//! visual features with a residual path: `x + x ⊙ gate`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, Affine, Bound, Group, ParamId, ParamStore};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

/// How an encoded personality sequence collapses to one `D1` vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonalityPooling {
    /// Final forward state ⊕ final backward state.
    #[default]
    LastStates,
    /// Mean of the encoded rows.
    Mean,
}

/// One LSTM direction. Gate columns are ordered input, forget, cell, output.
#[derive(Clone, Debug)]
struct LstmCell {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl LstmCell {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, input_dim: usize, hidden: usize) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_ih: store.add(
                format!("{name}.w_ih"),
                Group::Main,
                uniform(rng, &[input_dim, 4 * hidden], k),
            ),
            w_hh: store.add(
                format!("{name}.w_hh"),
                Group::Main,
                uniform(rng, &[hidden, 4 * hidden], k),
            ),
            bias: store.add(format!("{name}.bias"), Group::Main, Tensor::zeros(&[1, 4 * hidden])),
            hidden,
        }
    }

    /// Runs the recurrence over `x`, in reverse time order when `reverse`.
    /// Returns the per-step hidden states in time order and the state after
    /// the last processed step.
    fn run(&self, g: &mut Graph, p: &Bound, x: Var, reverse: bool) -> Result<(Var, Var)> {
        let steps = g.value(x).rows();
        let h = self.hidden;
        let projected = g.affine(x, p.var(self.w_ih), p.var(self.bias))?;
        let w_hh = p.var(self.w_hh);

        let mut states: Vec<Option<Var>> = vec![None; steps];
        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut z = g.slice_rows(projected, t, t + 1)?;
            if let Some(hp) = hidden {
                let rec = g.matmul(hp, w_hh)?;
                z = g.add(z, rec)?;
            }
            let zi = g.slice_cols(z, 0, h)?;
            let zf = g.slice_cols(z, h, 2 * h)?;
            let zg = g.slice_cols(z, 2 * h, 3 * h)?;
            let zo = g.slice_cols(z, 3 * h, 4 * h)?;
            let i = g.sigmoid(zi)?;
            let f = g.sigmoid(zf)?;
            let c_in = g.tanh(zg)?;
            let o = g.sigmoid(zo)?;
            let write = g.mul(i, c_in)?;
            let c = match cell {
                Some(cp) => {
                    let keep = g.mul(f, cp)?;
                    g.add(keep, write)?
                }
                None => write,
            };
            let tc = g.tanh(c)?;
            let hn = g.mul(o, tc)?;
            states[t] = Some(hn);
            hidden = Some(hn);
            cell = Some(c);
        }
        let rows: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        let seq = g.concat_rows(&rows)?;
        Ok((seq, hidden.expect("at least one step")))
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmLayer {
    pub input_dim: usize,
    pub output_dim: usize,
    forward: LstmCell,
    backward: LstmCell,
}

/// Encoded sequence plus the final states of each direction.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `T × D1`: forward half then backward half per row.
    pub seq: Var,
    pub last_forward: Var,
    /// Backward state after consuming the whole sequence (aligned with t = 0).
    pub last_backward: Var,
}

impl BiLstmLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if output_dim == 0 || !output_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "Bi-LSTM output dim {output_dim} must be even and positive"
            )));
        }
        let hidden = output_dim / 2;
        Ok(BiLstmLayer {
            input_dim,
            output_dim,
            forward: LstmCell::new(store, rng, &format!("{name}.fwd"), input_dim, hidden),
            backward: LstmCell::new(store, rng, &format!("{name}.bwd"), input_dim, hidden),
        })
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Encoded> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "bilstm_encode",
                lhs: shape,
                rhs: vec![self.input_dim],
            });
        }
        let (fwd, last_forward) = self.forward.run(g, p, x, false)?;
        let (bwd, last_backward) = self.backward.run(g, p, x, true)?;
        let seq = g.concat_cols(&[fwd, bwd])?;
        Ok(Encoded {
            seq,
            last_forward,
            last_backward,
        })
    }
}

/// A stack of Bi-LSTM layers; the first maps `input_dim → D1`, the rest
/// `D1 → D1`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    layers: Vec<BiLstmLayer>,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        depth: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("Bi-LSTM depth must be at least 1".into()));
        }
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { output_dim };
                BiLstmLayer::new(store, rng, &format!("{name}.l{l}"), d_in, output_dim)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BiLstm { layers })
    }

    pub fn layers(&self) -> &[BiLstmLayer] {
        &self.layers
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Encoded> {
        let mut out = self.layers[0].encode(g, p, x)?;
        for layer in &self.layers[1..] {
            out = layer.encode(g, p, out.seq)?;
        }
        Ok(out)
    }
}

/// Collapses an encoded personality sequence to a `1 × D1` vector.
pub fn pool_personality(g: &mut Graph, encoded: &Encoded, mode: PersonalityPooling) -> Result<Var> {
    match mode {
        PersonalityPooling::LastStates => g.concat_cols(&[encoded.last_forward, encoded.last_backward]),
        PersonalityPooling::Mean => g.mean_axis(encoded.seq, 0),
    }
}

/// `σ(p̃ · W + b)` with `W: D1 × D1`.
#[derive(Clone, Debug)]
pub struct PersonalityGate {
    pub linear: Affine,
}

impl PersonalityGate {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize) -> Self {
        PersonalityGate {
            linear: Affine::new(store, rng, name, Group::Main, dim, dim),
        }
    }

    pub fn gate_weights(&self, g: &mut Graph, p: &Bound, p_tilde: Var) -> Result<Var> {
        let z = self.linear.forward(g, p, p_tilde)?;
        g.sigmoid(z)
    }
}

/// Residual gating `feat + feat ⊙ w_gate`, the gate broadcast over time.
pub fn apply_gating(g: &mut Graph, feat: Var, w_gate: Var) -> Result<Var> {
    let modulated = g.mul_row(feat, w_gate)?;
    g.add(feat, modulated)
}
