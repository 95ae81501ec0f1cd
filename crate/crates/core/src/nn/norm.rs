use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// Graph-bound affine parameters of one layer norm.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: Var,
    pub beta: Var,
    pub eps: f64,
}

/// `(x - E[x]) / sqrt(V[x] + eps) * gamma + beta` over the last dimension,
/// with the biased variance.
pub fn layer_norm(g: &mut Graph, x: Var, p: &LayerNormParams) -> Result<Var> {
    let d = *g.shape(x).last().unwrap();
    for (name, v) in [("gamma", p.gamma), ("beta", p.beta)] {
        if g.shape(v) != [d] {
            return Err(Error::shape(format!(
                "layer norm {name} has shape {:?}, input feature dim is {d}",
                g.shape(v)
            )));
        }
    }
    if p.eps < 0.0 {
        return Err(Error::config("layer norm epsilon must be non-negative"));
    }
    let (mean, var) = g.mean_var_lastdim(x);
    let mean = g.expand_lastdim(mean, d)?;
    let centered = g.sub(x, mean)?;
    let shifted = g.add_scalar(var, p.eps);
    let inv = g.powf(shifted, -0.5);
    let inv = g.expand_lastdim(inv, d)?;
    let normed = g.mul(centered, inv)?;
    let scaled = g.mul(normed, p.gamma)?;
    g.add(scaled, p.beta)
}

/// How token embeddings and positional encodings are combined before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Plain sum.
    Original,
    /// Each stream normalized with its own parameters, then summed.
    Full,
    /// Sum first, then one normalization.
    FullPostSum,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Original => "original",
            NormMode::Full => "full",
            NormMode::FullPostSum => "full-post-sum",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(NormMode::Original),
            "full" => Ok(NormMode::Full),
            "full-post-sum" => Ok(NormMode::FullPostSum),
            _ => Err(Error::config(format!(
                "unknown norm mode {s:?} (original | full | full-post-sum)"
            ))),
        }
    }
}

/// Combines `[B, T, d]` embeddings with a `[T, d]` positional slice.
///
/// `norm_p` is only read in [`NormMode::Full`]; `norm_e` in both full modes.
pub fn prepare_inputs(
    g: &mut Graph,
    embeddings: Var,
    pe: Var,
    mode: NormMode,
    norm_e: &LayerNormParams,
    norm_p: &LayerNormParams,
) -> Result<Var> {
    let es = g.shape(embeddings);
    let ps = g.shape(pe);
    if es.len() != 3 || ps.len() != 2 || es[1..] != ps[..] {
        return Err(Error::shape(format!(
            "prepare_inputs: embeddings {es:?} and positional slice {ps:?} disagree"
        )));
    }
    match mode {
        NormMode::Original => g.add(embeddings, pe),
        NormMode::Full => {
            let e = layer_norm(g, embeddings, norm_e)?;
            let p = layer_norm(g, pe, norm_p)?;
            g.add(e, p)
        }
        NormMode::FullPostSum => {
            let s = g.add(embeddings, pe)?;
            layer_norm(g, s, norm_e)
        }
    }
}
