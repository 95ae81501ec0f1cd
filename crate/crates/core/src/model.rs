//! Encoder-decoder Transformer assembled from a [`ModelConfig`].
//!
//! Sublayers are post-norm: `LayerNorm(F(x) + k x)`. Projections are
//! bias-free and embeddings are not scaled by `sqrt(d_model)`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::corpus::{Batch, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{
    dropout_apply, layer_norm, multi_head_attention, position_wise_ffn, prepare_inputs, residual_sublayer,
    AttentionMaskSet, LayerNormParams, MhaParams, NormMode, ResidualConfig, ZeroMask,
};
use crate::posenc::{read_matrix_csv, sinusoidal_pe, upsample_pe, PeMatrix, PeSource};
use crate::rng::Rng;
use crate::tensor::{Init, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum PeMode {
    Sinusoidal,
    /// A matrix CSV, block-upsampled by `(factor_pos, factor_dim)` and box-smoothed.
    Learned { path: PathBuf, factor_pos: usize, factor_dim: usize, window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub norm_mode: NormMode,
    pub residual_k: f64,
    pub pe_mode: PeMode,
    pub zero_mask: bool,
    /// Zero the diagonal after softmax instead of masking it before.
    pub post_softmax_zero: bool,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Standard post-norm Transformer at full size.
    pub fn original() -> Self {
        ModelConfig {
            d_model: 512,
            n_layers: 6,
            n_heads: 8,
            d_ff: 2048,
            dropout: 0.2,
            max_len: 256,
            src_vocab: 0,
            tgt_vocab: 0,
            norm_mode: NormMode::Original,
            residual_k: 1.0,
            pe_mode: PeMode::Sinusoidal,
            zero_mask: false,
            post_softmax_zero: false,
            ln_eps: 1e-6,
        }
    }

    /// All four mechanisms on; `pe_path` is a learned matrix CSV.
    pub fn enhanced(pe_path: impl Into<PathBuf>) -> Self {
        ModelConfig::original().with_all_enhancements(pe_path)
    }

    /// Small dimensions for single-machine experiments.
    pub fn desk() -> Self {
        ModelConfig { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, dropout: 0.1, max_len: 32, ..Self::original() }
    }

    /// Turns on all four mechanisms. The learned matrix is assumed to be
    /// 16 x 8 and is upsampled to cover `max_len x d_model`.
    pub fn with_all_enhancements(self, pe_path: impl Into<PathBuf>) -> Self {
        let factor_pos = self.max_len.div_ceil(16).max(1);
        let factor_dim = (self.d_model / 8).max(1);
        ModelConfig {
            norm_mode: NormMode::Full,
            residual_k: 4.0,
            pe_mode: PeMode::Learned { path: pe_path.into(), factor_pos, factor_dim, window: 3 },
            zero_mask: true,
            ..self
        }
    }

    pub fn zero_mode(&self) -> ZeroMask {
        match (self.zero_mask, self.post_softmax_zero) {
            (false, _) => ZeroMask::Off,
            (true, false) => ZeroMask::Renormalized,
            (true, true) => ZeroMask::HardZero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return fail("d_model, n_layers and d_ff must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads));
        }
        if self.max_len < 3 {
            return fail("max_len must be at least 3".into());
        }
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return fail(format!("vocabularies too small: {} / {}", self.src_vocab, self.tgt_vocab));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.ln_eps < 0.0 {
            return fail("layer norm epsilon must be non-negative".into());
        }
        ResidualConfig::new(self.residual_k)?;
        if let PeMode::Learned { factor_pos, factor_dim, window, .. } = &self.pe_mode {
            if *factor_pos == 0 || *factor_dim == 0 || window % 2 == 0 {
                return fail("learned PE factors must be positive and the window odd".into());
            }
        }
        Ok(())
    }
}

/// Every parameter name and shape the config implies, in sorted order.
pub fn parameter_inventory(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let mut v: Vec<(String, Vec<usize>)> = vec![
        ("src_emb".into(), vec![cfg.src_vocab, d]),
        ("tgt_emb".into(), vec![cfg.tgt_vocab, d]),
        ("out_proj".into(), vec![d, cfg.tgt_vocab]),
    ];
    let ln = |v: &mut Vec<(String, Vec<usize>)>, p: &str| {
        v.push((format!("{p}.gamma"), vec![d]));
        v.push((format!("{p}.beta"), vec![d]));
    };
    let mha = |v: &mut Vec<(String, Vec<usize>)>, p: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            v.push((format!("{p}.{w}"), vec![d, d]));
        }
    };
    for side in ["enc", "dec"] {
        match cfg.norm_mode {
            NormMode::Original => {}
            NormMode::Full => {
                ln(&mut v, &format!("{side}.in.norm_e"));
                ln(&mut v, &format!("{side}.in.norm_p"));
            }
            NormMode::FullPostSum => ln(&mut v, &format!("{side}.in.norm_e")),
        }
    }
    for l in 0..cfg.n_layers {
        let p = format!("enc.{l}");
        mha(&mut v, &format!("{p}.self"));
        ln(&mut v, &format!("{p}.ln1"));
        v.push((format!("{p}.ffn.w1"), vec![d, f]));
        v.push((format!("{p}.ffn.w2"), vec![f, d]));
        ln(&mut v, &format!("{p}.ln2"));
        let p = format!("dec.{l}");
        mha(&mut v, &format!("{p}.self"));
        ln(&mut v, &format!("{p}.ln1"));
        mha(&mut v, &format!("{p}.cross"));
        ln(&mut v, &format!("{p}.ln2"));
        v.push((format!("{p}.ffn.w1"), vec![d, f]));
        v.push((format!("{p}.ffn.w2"), vec![f, d]));
        ln(&mut v, &format!("{p}.ln3"));
    }
    v.sort();
    v
}

/// Graph handles for every parameter, keyed by name.
pub type Bound = BTreeMap<String, Var>;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub cfg: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    /// `[max_len, d_model]`, frozen during training.
    pub pe: PeMatrix,
}

/// Post-softmax weights `[B, h, T_q, T_k]` for every layer.
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub enc_self: Vec<Tensor>,
    pub dec_self: Vec<Tensor>,
    pub cross: Vec<Tensor>,
}

struct Trace {
    enabled: bool,
    enc_self: Vec<Var>,
    dec_self: Vec<Var>,
    cross: Vec<Var>,
}

fn build_pe(cfg: &ModelConfig) -> Result<PeMatrix> {
    let sin = sinusoidal_pe(cfg.max_len, cfg.d_model)?;
    let PeMode::Learned { path, factor_pos, factor_dim, window } = &cfg.pe_mode else {
        return Ok(sin);
    };
    let small = read_matrix_csv(path).map_err(|e| match e {
        Error::Io { .. } | Error::Format(_) => Error::Config(format!("learned positional encoding: {e}")),
        other => other,
    })?;
    let up = upsample_pe(&small, *factor_pos, *factor_dim, *window)?;
    if up.cols() != cfg.d_model {
        return Err(Error::Config(format!(
            "learned positional encoding {}x{} upsamples to {} dims, model needs {}",
            small.rows(),
            small.cols(),
            up.cols(),
            cfg.d_model
        )));
    }
    let rows = up.rows().min(cfg.max_len);
    if rows < cfg.max_len {
        eprintln!(
            "warning: learned positional encoding covers {rows} of {} positions; later positions use sinusoidal rows",
            cfg.max_len
        );
    }
    let mut values = up.values()[..rows * cfg.d_model].to_vec();
    values.extend_from_slice(&sin.values()[rows * cfg.d_model..]);
    PeMatrix::new(cfg.max_len, cfg.d_model, values, PeSource::Learned)
}

impl TransformerModel {
    /// Weights uniform in `+-sqrt(1/d_model)` drawn from a stream keyed by
    /// `(seed, name)`; layer-norm gains 1 and offsets 0.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let s = (1.0 / cfg.d_model as f64).sqrt();
        let mut params = BTreeMap::new();
        for (name, shape) in parameter_inventory(cfg) {
            let t = if name.ends_with(".gamma") {
                Tensor::new(&shape, Init::Constant(1.0))?
            } else if name.ends_with(".beta") {
                Tensor::zeros(&shape)?
            } else {
                let mut rng = Rng::keyed(seed, &name);
                Tensor::new(&shape, Init::Uniform { lo: -s, hi: s, rng: &mut rng })?
            };
            params.insert(name, t);
        }
        Ok(TransformerModel { cfg: cfg.clone(), params, pe: build_pe(cfg)? })
    }

    pub fn count_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Adds every parameter to `g`: as gradient-tracking leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params
            .iter()
            .map(|(k, t)| {
                let t = t.clone();
                (k.clone(), if trainable { g.param(t) } else { g.constant(t) })
            })
            .collect()
    }

    fn pe_slice(&self, g: &mut Graph, len: usize) -> Result<Var> {
        let d = self.cfg.d_model;
        Ok(g.constant(Tensor::from_vec(&[len, d], self.pe.values()[..len * d].to_vec())?))
    }

    fn check_lengths(&self, batch: &Batch) -> Result<()> {
        for (what, len) in [("source", batch.src_len), ("target", batch.tgt_len)] {
            if len > self.cfg.max_len {
                return Err(Error::Contract(format!("{what} length {len} exceeds max_len {}", self.cfg.max_len)));
            }
        }
        Ok(())
    }

    fn input_stage(
        &self,
        g: &mut Graph,
        p: &Bound,
        side: &str,
        ids: &[usize],
        batch: usize,
        len: usize,
        rng: &mut Option<&mut Rng>,
    ) -> Result<Var> {
        let table = p[&format!("{side}_emb")];
        let emb = g.gather_rows(table, ids)?;
        let emb = g.reshape(emb, &[batch, len, self.cfg.d_model])?;
        let pe = self.pe_slice(g, len)?;
        let stage = if side == "src" { "enc" } else { "dec" };
        let get = |n: &str| p.get(&format!("{stage}.in.{n}.gamma")).zip(p.get(&format!("{stage}.in.{n}.beta")));
        let none = LayerNormParams { gamma: table, beta: table, eps: self.cfg.ln_eps };
        let ln = |v: Option<(&Var, &Var)>| {
            v.map(|(&gamma, &beta)| LayerNormParams { gamma, beta, eps: self.cfg.ln_eps }).unwrap_or(none)
        };
        let x = prepare_inputs(g, emb, pe, self.cfg.norm_mode, &ln(get("norm_e")), &ln(get("norm_p")))?;
        self.dropout(g, x, rng)
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut Rng>) -> Result<Var> {
        match rng {
            Some(r) => dropout_apply(g, x, self.cfg.dropout, r, true),
            None => Ok(x),
        }
    }

    fn ln(&self, p: &Bound, name: &str) -> LayerNormParams {
        LayerNormParams { gamma: p[&format!("{name}.gamma")], beta: p[&format!("{name}.beta")], eps: self.cfg.ln_eps }
    }

    fn mha(&self, p: &Bound, name: &str) -> MhaParams {
        let w = |s: &str| p[&format!("{name}.{s}")];
        MhaParams { wq: w("wq"), wk: w("wk"), wv: w("wv"), wo: w("wo"), heads: self.cfg.n_heads }
    }

    fn residual(&self) -> ResidualConfig {
        ResidualConfig::new(self.cfg.residual_k).expect("validated residual weight")
    }

    fn encode_traced(&self, g: &mut Graph, p: &Bound, b: &Batch, rng: &mut Option<&mut Rng>, tr: &mut Trace) -> Result<Var> {
        let zero = self.cfg.zero_mode();
        let rc = self.residual();
        let mut x = self.input_stage(g, p, "src", &b.src, b.batch, b.src_len, rng)?;
        for l in 0..self.cfg.n_layers {
            let pre = format!("enc.{l}");
            let m = self.mha(p, &format!("{pre}.self"));
            let mut weights = None;
            let h = residual_sublayer(
                g,
                x,
                |g, x| {
                    let a = multi_head_attention(g, x, x, &m, &b.src_masks, zero)?;
                    weights = Some(a.weights);
                    self.dropout(g, a.output, rng)
                },
                rc,
            )?;
            if tr.enabled {
                tr.enc_self.extend(weights);
            }
            x = layer_norm(g, h, &self.ln(p, &format!("{pre}.ln1")))?;
            let (w1, w2) = (p[&format!("{pre}.ffn.w1")], p[&format!("{pre}.ffn.w2")]);
            let h = residual_sublayer(
                g,
                x,
                |g, x| {
                    let y = position_wise_ffn(g, x, w1, w2)?;
                    self.dropout(g, y, rng)
                },
                rc,
            )?;
            x = layer_norm(g, h, &self.ln(p, &format!("{pre}.ln2")))?;
        }
        Ok(x)
    }

    fn decode_traced(
        &self,
        g: &mut Graph,
        p: &Bound,
        memory: Var,
        b: &Batch,
        rng: &mut Option<&mut Rng>,
        tr: &mut Trace,
    ) -> Result<Var> {
        let zero = self.cfg.zero_mode();
        let rc = self.residual();
        let cross_masks: AttentionMaskSet = b.cross_masks();
        let mut x = self.input_stage(g, p, "tgt", &b.tgt_in, b.batch, b.tgt_len, rng)?;
        for l in 0..self.cfg.n_layers {
            let pre = format!("dec.{l}");
            let m = self.mha(p, &format!("{pre}.self"));
            let mut weights = None;
            let h = residual_sublayer(
                g,
                x,
                |g, x| {
                    let a = multi_head_attention(g, x, x, &m, &b.tgt_masks, zero)?;
                    weights = Some(a.weights);
                    self.dropout(g, a.output, rng)
                },
                rc,
            )?;
            if tr.enabled {
                tr.dec_self.extend(weights);
            }
            x = layer_norm(g, h, &self.ln(p, &format!("{pre}.ln1")))?;
            let m = self.mha(p, &format!("{pre}.cross"));
            let mut weights = None;
            let h = residual_sublayer(
                g,
                x,
                |g, x| {
                    let a = multi_head_attention(g, x, memory, &m, &cross_masks, ZeroMask::Off)?;
                    weights = Some(a.weights);
                    self.dropout(g, a.output, rng)
                },
                rc,
            )?;
            if tr.enabled {
                tr.cross.extend(weights);
            }
            x = layer_norm(g, h, &self.ln(p, &format!("{pre}.ln2")))?;
            let (w1, w2) = (p[&format!("{pre}.ffn.w1")], p[&format!("{pre}.ffn.w2")]);
            let h = residual_sublayer(
                g,
                x,
                |g, x| {
                    let y = position_wise_ffn(g, x, w1, w2)?;
                    self.dropout(g, y, rng)
                },
                rc,
            )?;
            x = layer_norm(g, h, &self.ln(p, &format!("{pre}.ln3")))?;
        }
        g.matmul(x, p["out_proj"])
    }

    /// Encoder output `[B, T_s, d]`.
    pub fn encode(&self, g: &mut Graph, p: &Bound, b: &Batch, mut rng: Option<&mut Rng>) -> Result<Var> {
        self.check_lengths(b)?;
        self.encode_traced(g, p, b, &mut rng, &mut Trace::off())
    }

    /// Decoder logits `[B, T_t, V_tgt]` against an encoder output.
    pub fn decode(&self, g: &mut Graph, p: &Bound, memory: Var, b: &Batch, mut rng: Option<&mut Rng>) -> Result<Var> {
        self.check_lengths(b)?;
        self.decode_traced(g, p, memory, b, &mut rng, &mut Trace::off())
    }

    /// Logits `[B, T_t, V_tgt]`. Dropout is active only when `rng` is given.
    pub fn forward(&self, g: &mut Graph, p: &Bound, b: &Batch, mut rng: Option<&mut Rng>) -> Result<Var> {
        self.check_lengths(b)?;
        let mut tr = Trace::off();
        let mem = self.encode_traced(g, p, b, &mut rng, &mut tr)?;
        self.decode_traced(g, p, mem, b, &mut rng, &mut tr)
    }

    /// Mean cross-entropy over non-PAD targets.
    pub fn loss(&self, g: &mut Graph, p: &Bound, b: &Batch, rng: Option<&mut Rng>) -> Result<Var> {
        let logits = self.forward(g, p, b, rng)?;
        g.cross_entropy_logits(logits, &b.tgt_out, PAD)
    }

    /// Greedy decoding from BOS for each source row (unframed ids). Output
    /// excludes BOS and EOS; ties go to the lowest token id.
    pub fn greedy_translate(&self, src: &[Vec<usize>], max_out_len: usize) -> Result<Vec<Vec<usize>>> {
        if src.is_empty() {
            return Ok(Vec::new());
        }
        if src.iter().any(Vec::is_empty) {
            return Err(Error::Contract("greedy_translate needs non-empty sources".into()));
        }
        let max_out = max_out_len.min(self.cfg.max_len - 1);
        let zero = self.cfg.zero_mask;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let boot: Vec<Vec<usize>> = vec![vec![BOS]; src.len()];
        let enc_batch = Batch::from_decoder_rows(src, &boot, None, zero)?;
        let memory = self.encode(&mut g, &p, &enc_batch, None)?;
        let n = src.len();
        let mut prefix = boot;
        let mut done = vec![false; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for _ in 0..max_out {
            let mut b = Batch::from_decoder_rows(src, &prefix, None, zero)?;
            b.src_masks = enc_batch.src_masks.clone();
            let mark = g.len();
            let logits = self.decode(&mut g, &p, memory, &b, None)?;
            let v = self.cfg.tgt_vocab;
            let t = prefix[0].len();
            let data = g.data(logits);
            for r in 0..n {
                let row = &data[(r * t + t - 1) * v..(r * t + t) * v];
                let mut best = 0;
                for (i, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = i;
                    }
                }
                if !done[r] {
                    if best == EOS {
                        done[r] = true;
                    } else {
                        out[r].push(best);
                    }
                }
                prefix[r].push(best);
            }
            g.truncate(mark);
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    /// Post-softmax attention weights for every layer of one forward pass.
    pub fn extract_attention(&self, b: &Batch) -> Result<AttentionMaps> {
        self.check_lengths(b)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let mut tr = Trace { enabled: true, enc_self: vec![], dec_self: vec![], cross: vec![] };
        let mem = self.encode_traced(&mut g, &p, b, &mut None, &mut tr)?;
        self.decode_traced(&mut g, &p, mem, b, &mut None, &mut tr)?;
        let take = |vs: &[Var]| vs.iter().map(|&v| g.value(v).clone()).collect();
        Ok(AttentionMaps { enc_self: take(&tr.enc_self), dec_self: take(&tr.dec_self), cross: take(&tr.cross) })
    }
}

impl Trace {
    fn off() -> Self {
        Trace { enabled: false, enc_self: vec![], dec_self: vec![], cross: vec![] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout: 0.0,
            max_len: 12,
            src_vocab: 9,
            tgt_vocab: 7,
            ..ModelConfig::original()
        }
    }

    fn batch(zero: bool) -> Batch {
        Batch::from_ids(&[vec![4, 5, 6, 7], vec![8, 4]], &[vec![4, 5, 6], vec![6]], zero).unwrap()
    }

    #[test]
    fn presets() {
        let o = ModelConfig::original();
        assert_eq!((o.d_model, o.n_layers, o.n_heads, o.dropout, o.max_len), (512, 6, 8, 0.2, 256));
        let e = ModelConfig::enhanced("pe.csv");
        assert_eq!(e.residual_k, 4.0);
        assert_eq!(e.norm_mode, NormMode::Full);
        assert!(matches!(e.pe_mode, PeMode::Learned { .. }));
        assert!(e.zero_mask);
    }

    #[test]
    fn hand_count_of_original_desk_model() {
        let cfg = ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            src_vocab: 1000,
            tgt_vocab: 1000,
            ..ModelConfig::original()
        };
        let (d, f, v, l) = (64, 256, 1000, 2);
        let attn = 4 * d * d;
        let ffn = 2 * d * f;
        let ln = 2 * d;
        let enc = attn + ffn + 2 * ln;
        let dec = 2 * attn + ffn + 3 * ln;
        let expect = 2 * v * d + d * v + l * (enc + dec);
        assert_eq!(expect, 422_656);
        let m = TransformerModel::build(&cfg, 1).unwrap();
        assert_eq!(m.count_parameters(), expect);
        assert_eq!(TransformerModel::build(&cfg, 7).unwrap().count_parameters(), expect);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = TransformerModel::build(&micro(), 3).unwrap();
        assert_eq!(a, TransformerModel::build(&micro(), 3).unwrap());
        assert_ne!(a.params, TransformerModel::build(&micro(), 4).unwrap().params);
        assert!(a.params["enc.0.ln1.gamma"].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn shared_parameters_identical_across_toggles() {
        let a = TransformerModel::build(&micro(), 3).unwrap();
        let cfg = ModelConfig { norm_mode: NormMode::Full, residual_k: 3.0, zero_mask: true, ..micro() };
        let b = TransformerModel::build(&cfg, 3).unwrap();
        for (k, t) in &a.params {
            assert_eq!(&b.params[k], t, "{k}");
        }
    }

    #[test]
    fn logits_shape_and_finite() {
        let m = TransformerModel::build(&micro(), 1).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let b = batch(false);
        let y = m.forward(&mut g, &p, &b, None).unwrap();
        assert_eq!(g.shape(y), &[2, 4, 7]);
        assert!(g.data(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_long_is_contract_error() {
        let m = TransformerModel::build(&micro(), 1).unwrap();
        let b = Batch::from_ids(&[vec![4; 13]], &[vec![4]], false).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        assert!(matches!(m.forward(&mut g, &p, &b, None), Err(Error::Contract(_))));
    }

    fn logits(m: &TransformerModel, b: &Batch) -> Vec<f64> {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let y = m.forward(&mut g, &p, b, None).unwrap();
        g.data(y).to_vec()
    }

    #[test]
    fn padding_does_not_leak_and_decoder_is_causal() {
        for zero in [false, true] {
            let cfg = ModelConfig { zero_mask: zero, norm_mode: NormMode::Full, ..micro() };
            let m = TransformerModel::build(&cfg, 2).unwrap();
            let base = batch(zero);
            let y0 = logits(&m, &base);
            // row 1 has source pads at positions 2 and 3
            let mut b = base.clone();
            b.src[4 + 2] = 5;
            b.src[4 + 3] = 7;
            let y1 = logits(&m, &b);
            assert!(y0.iter().zip(&y1).all(|(a, c)| (a - c).abs() <= 1e-12));
            // changing decoder input at position 2 leaves positions 0 and 1
            let mut b = base.clone();
            b.tgt_in[2] = 3;
            let y2 = logits(&m, &b);
            let (t, v) = (base.tgt_len, 7);
            for r in 0..2 {
                for pos in 0..2 {
                    for k in 0..v {
                        let i = (r * t + pos) * v + k;
                        assert!((y0[i] - y2[i]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_mask_diagonals_and_exemption() {
        let cfg = ModelConfig { zero_mask: true, ..micro() };
        let m = TransformerModel::build(&cfg, 5).unwrap();
        let b = batch(true);
        let maps = m.extract_attention(&b).unwrap();
        for w in maps.enc_self.iter().chain(&maps.dec_self).chain(&maps.cross) {
            let s = w.shape();
            let tk = s[3];
            for row in w.data().chunks(tk) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
        let w = &maps.dec_self[0];
        let (h, t) = (w.shape()[1], w.shape()[2]);
        for bi in 0..2 {
            for hi in 0..h {
                for i in 0..t {
                    let d = w.get(&[bi, hi, i, i]);
                    if i == 0 {
                        assert_eq!(d, 1.0);
                    } else {
                        assert_eq!(d, 0.0);
                    }
                }
            }
        }
        for bi in 0..2 {
            for i in 0..b.src_len {
                assert_eq!(maps.enc_self[0].get(&[bi, 0, i, i]), 0.0);
            }
        }
        // cross-attention onto padded source keys is zero
        let c = &maps.cross[0];
        for i in 0..b.tgt_len {
            assert_eq!(c.get(&[1, 0, i, 2]), 0.0);
            assert_eq!(c.get(&[1, 1, i, 3]), 0.0);
        }
    }

    #[test]
    fn forced_eos_gives_empty_translation() {
        let mut m = TransformerModel::build(&micro(), 1).unwrap();
        // final features sum to d_model once the last norm is offset by 1
        m.params.get_mut("dec.0.ln3.beta").unwrap().data_mut().fill(1.0);
        let v = 7;
        for (i, x) in m.params.get_mut("out_proj").unwrap().data_mut().iter_mut().enumerate() {
            *x = if i % v == EOS { 50.0 } else { 0.0 };
        }
        assert_eq!(m.greedy_translate(&[vec![4, 5]], 8).unwrap(), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let m = TransformerModel::build(&micro(), 8).unwrap();
        let src = vec![vec![4, 5, 6], vec![7]];
        let a = m.greedy_translate(&src, 5).unwrap();
        assert_eq!(a, m.greedy_translate(&src, 5).unwrap());
        assert!(a.iter().all(|s| s.len() <= 5 && !s.contains(&EOS)));
        // batched decoding equals one-by-one decoding
        for (i, s) in src.iter().enumerate() {
            assert_eq!(m.greedy_translate(&[s.clone()], 5).unwrap()[0], a[i]);
        }
    }

    #[test]
    fn missing_learned_pe_is_config_error() {
        let cfg = ModelConfig {
            pe_mode: PeMode::Learned { path: "/nonexistent/pe.csv".into(), factor_pos: 1, factor_dim: 1, window: 1 },
            ..micro()
        };
        assert!(matches!(TransformerModel::build(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn learned_pe_upsampled_with_sinusoidal_tail() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("pe.csv");
        std::fs::write(&f, "0.5,-0.5\n0.25,1\n").unwrap();
        let cfg = ModelConfig {
            pe_mode: PeMode::Learned { path: f.clone(), factor_pos: 2, factor_dim: 4, window: 1 },
            ..micro()
        };
        let m = TransformerModel::build(&cfg, 1).unwrap();
        assert_eq!(m.pe.row(0), &[0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5]);
        assert_eq!(m.pe.row(3), &[0.25, 0.25, 0.25, 0.25, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(m.pe.row(4), sinusoidal_pe(12, 8).unwrap().row(4));
        let bad = ModelConfig {
            pe_mode: PeMode::Learned { path: f, factor_pos: 2, factor_dim: 3, window: 1 },
            ..micro()
        };
        assert!(matches!(TransformerModel::build(&bad, 1), Err(Error::Config(_))));
    }
}
