use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Treatment of each query's score against its own position in self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroMask {
    #[default]
    Off,
    /// `-inf` on the diagonal before softmax; the remaining weights renormalize.
    Renormalized,
    /// Diagonal weight set to 0 after softmax; rows are left unnormalized.
    HardZero,
}

impl ZeroMask {
    pub fn is_on(self) -> bool {
        self != ZeroMask::Off
    }
}

/// Additive masks (entries 0 or `-inf`) for one attention call.
///
/// * `padding`: `[B, 1, 1, T_k]`
/// * `causal`: `[1, 1, T_q, T_k]`, `-inf` strictly above the diagonal
/// * `zero_diag`: `[1, 1, T, T]`, `-inf` on the main diagonal
#[derive(Debug, Clone, Default)]
pub struct AttentionMaskSet {
    pub padding: Option<Tensor>,
    pub causal: Option<Tensor>,
    pub zero_diag: Option<Tensor>,
}

impl AttentionMaskSet {
    /// Padding mask from a `[B, T_k]` id matrix.
    pub fn padding_from_ids(ids: &[usize], batch: usize, len: usize, pad_id: usize) -> Tensor {
        let data = ids.iter().map(|&t| if t == pad_id { NEG_INF } else { 0.0 }).collect();
        Tensor::from_vec(&[batch, 1, 1, len], data).expect("ids match batch x len")
    }

    pub fn causal_mask(len: usize) -> Tensor {
        let mut data = vec![0.0; len * len];
        for i in 0..len {
            for j in i + 1..len {
                data[i * len + j] = NEG_INF;
            }
        }
        Tensor::from_vec(&[1, 1, len, len], data).expect("square mask")
    }

    pub fn zero_diag_mask(len: usize) -> Tensor {
        let mut data = vec![0.0; len * len];
        for i in 0..len {
            data[i * len + i] = NEG_INF;
        }
        Tensor::from_vec(&[1, 1, len, len], data).expect("square mask")
    }

    /// Sum of padding and causal masks, materialized as `[B, 1, T_q, T_k]`.
    fn base(&self, batch: usize, tq: usize, tk: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; batch * tq * tk];
        if let Some(p) = &self.padding {
            if p.shape() != [batch, 1, 1, tk] {
                return Err(Error::shape(format!(
                    "padding mask {:?} does not match batch {batch} x keys {tk}",
                    p.shape()
                )));
            }
            for b in 0..batch {
                for i in 0..tq {
                    for j in 0..tk {
                        out[(b * tq + i) * tk + j] += p.data()[b * tk + j];
                    }
                }
            }
        }
        if let Some(c) = &self.causal {
            if c.shape() != [1, 1, tq, tk] {
                return Err(Error::shape(format!(
                    "causal mask {:?} does not match {tq} x {tk}",
                    c.shape()
                )));
            }
            for b in 0..batch {
                for (o, &m) in out[b * tq * tk..(b + 1) * tq * tk].iter_mut().zip(c.data()) {
                    *o += m;
                }
            }
        }
        Ok(out)
    }

    /// Combined additive mask plus, per `(batch, query)` row, whether the
    /// zero mask applies there.
    ///
    /// A row is exempt when the diagonal is its only unmasked key, so
    /// masking the diagonal would leave nothing to attend to.
    pub fn combine(
        &self,
        batch: usize,
        tq: usize,
        tk: usize,
        zero: ZeroMask,
    ) -> Result<(Tensor, Vec<bool>)> {
        let mut mask = self.base(batch, tq, tk)?;
        let mut zeroed = vec![false; batch * tq];
        if zero.is_on() {
            if tq != tk {
                return Err(Error::Contract(format!(
                    "zero mask needs self-attention, got {tq} queries and {tk} keys"
                )));
            }
            let owned;
            let diag = match &self.zero_diag {
                Some(d) => d,
                None => {
                    owned = Self::zero_diag_mask(tq);
                    &owned
                }
            };
            if diag.shape() != [1, 1, tq, tk] {
                return Err(Error::shape(format!("zero-diagonal mask {:?}", diag.shape())));
            }
            for b in 0..batch {
                for i in 0..tq {
                    let row = &mut mask[(b * tq + i) * tk..(b * tq + i + 1) * tk];
                    let drow = &diag.data()[i * tk..(i + 1) * tk];
                    let survivors = row
                        .iter()
                        .zip(drow)
                        .filter(|&(&m, &d)| m != NEG_INF && d != NEG_INF)
                        .count();
                    if survivors == 0 {
                        continue;
                    }
                    zeroed[b * tq + i] = true;
                    if zero == ZeroMask::Renormalized {
                        for (m, &d) in row.iter_mut().zip(drow) {
                            *m += d;
                        }
                    }
                }
            }
        }
        Ok((Tensor::from_vec(&[batch, 1, tq, tk], mask)?, zeroed))
    }
}

pub struct AttentionOutput {
    /// `[B, h, T_q, d_k]` for [`scaled_dot_attention`], `[B, T_q, d_model]` for [`multi_head_attention`].
    pub output: Var,
    /// Post-softmax weights `[B, h, T_q, T_k]`.
    pub weights: Var,
}

/// `softmax(Q K^T / sqrt(d_k) + masks) V` over `[B, h, T, d_k]` inputs.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    masks: &AttentionMaskSet,
    zero: ZeroMask,
) -> Result<AttentionOutput> {
    let qs = g.shape(q).to_vec();
    let ks = g.shape(k).to_vec();
    if qs.len() != 4 || ks.len() != 4 || qs[0] != ks[0] || qs[1] != ks[1] || qs[3] != ks[3] {
        return Err(Error::shape(format!("attention Q {qs:?} vs K {ks:?}")));
    }
    if g.shape(v)[..3] != ks[..3] {
        return Err(Error::shape(format!("attention V {:?} vs K {ks:?}", g.shape(v))));
    }
    let (batch, heads, tq, dk) = (qs[0], qs[1], qs[2], qs[3]);
    let tk = ks[2];
    let (mask, zeroed) = masks.combine(batch, tq, tk, zero)?;

    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let mut weights = g.softmax_lastdim(scores, Some(&mask))?;
    if zero == ZeroMask::HardZero {
        let mut keep = vec![1.0; batch * heads * tq * tk];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..tq {
                    if zeroed[b * tq + i] {
                        keep[((b * heads + h) * tq + i) * tk + i] = 0.0;
                    }
                }
            }
        }
        let keep = g.constant(Tensor::from_vec(&[batch, heads, tq, tk], keep)?);
        weights = g.mul(weights, keep)?;
    }
    let output = g.matmul(weights, v)?;
    Ok(AttentionOutput { output, weights })
}

/// Graph-bound projections `[d_model, d_model]` of one attention block; bias-free.
#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub heads: usize,
}

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let r = g.reshape(x, &[b, t, heads, d / heads])?;
    g.swap_axes(r, 1, 2)
}

/// Project, split into heads, attend, concatenate and project back.
///
/// The zero mask is only legal when `x_q` and `x_kv` are the same node.
pub fn multi_head_attention(
    g: &mut Graph,
    x_q: Var,
    x_kv: Var,
    p: &MhaParams,
    masks: &AttentionMaskSet,
    zero: ZeroMask,
) -> Result<AttentionOutput> {
    if zero.is_on() && x_q != x_kv {
        return Err(Error::Contract("zero mask requested on cross-attention".into()));
    }
    let s = g.shape(x_q).to_vec();
    if s.len() != 3 {
        return Err(Error::shape(format!("attention input must be [B, T, d], got {s:?}")));
    }
    let d = s[2];
    if p.heads == 0 || d % p.heads != 0 {
        return Err(Error::config(format!("d_model {d} not divisible by {} heads", p.heads)));
    }
    let q = g.matmul(x_q, p.wq)?;
    let k = g.matmul(x_kv, p.wk)?;
    let v = g.matmul(x_kv, p.wv)?;
    let q = split_heads(g, q, p.heads)?;
    let k = split_heads(g, k, p.heads)?;
    let v = split_heads(g, v, p.heads)?;
    let att = scaled_dot_attention(g, q, k, v, masks, zero)?;
    let merged = g.swap_axes(att.output, 1, 2)?;
    let merged = g.reshape(merged, &[s[0], s[1], d])?;
    let output = g.matmul(merged, p.wo)?;
    Ok(AttentionOutput { output, weights: att.weights })
}
