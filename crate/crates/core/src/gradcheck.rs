//! Central-difference gradient checks for every graph operation, the layer
//! library and a micro translation model.

use std::time::Instant;

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{ModelConfig, TransformerModel};
use crate::nn::{
    dropout_apply, layer_norm, multi_head_attention, position_wise_ffn, prepare_inputs, residual_sublayer,
    scaled_dot_attention, AttentionMaskSet, LayerNormParams, MhaParams, NormMode, ResidualConfig, ZeroMask,
};
use crate::rng::Rng;
use crate::tensor::{Init, Tensor};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Largest `|a - n| / max(|a|, |n|, 1e-8)` over every input entry, where `a`
/// is the backward gradient and `n` the central difference of `f`.
pub fn grad_check<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    Ok(grad_check_detailed(f, inputs)?.max_rel_error)
}

/// The entry with the largest relative error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstEntry {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `f` at the unperturbed inputs.
    pub value: f64,
}

impl WorstEntry {
    /// Central-difference resolution from rounding alone: one ulp of `f` over `2h`.
    pub fn roundoff_floor(&self) -> f64 {
        let v = self.value.abs();
        let ulp = if v == 0.0 { f64::MIN_POSITIVE } else { f64::from_bits(v.to_bits() + 1) - v };
        ulp / (2.0 * STEP)
    }
}

pub fn grad_check_detailed<F>(f: F, inputs: &[Tensor]) -> Result<WorstEntry>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], track: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| if track { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok((g, vars, out))
    };
    let (mut g, vars, out) = eval(inputs, true)?;
    let value = g.data(out)[0];
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut worst = WorstEntry { max_rel_error: 0.0, input: 0, index: 0, analytic: 0.0, numeric: 0.0, value };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + STEP;
            let (g1, _, o1) = eval(&work, false)?;
            work[i].data_mut()[j] = x - STEP;
            let (g2, _, o2) = eval(&work, false)?;
            work[i].data_mut()[j] = x;
            let numeric = (g1.data(o1)[0] - g2.data(o2)[0]) / (2.0 * STEP);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if !err.is_finite() {
                return Err(Error::Training(format!("non-finite gradient at input {i}, entry {j}")));
            }
            if err > worst.max_rel_error {
                worst = WorstEntry { max_rel_error: err, input: i, index: j, analytic: a, numeric, value };
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub cases: usize,
    /// Worst entry over all cases, labelled by input.
    pub worst: Option<(String, WorstEntry)>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::new(shape, Init::Uniform { lo: -1.0, hi: 1.0, rng }).expect("valid shape")
}

/// Reduces `y` to a scalar against fixed random weights so that no entry's
/// gradient is structurally symmetric.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n = g.value(y).numel() as f64;
    let mut rng = Rng::keyed(seed, "projection");
    let w: Vec<f64> = (0..n as usize).map(|_| rng.uniform(-1.0, 1.0) / n.sqrt()).collect();
    let w = g.constant(Tensor::from_vec(&shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn case(f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Box::new(f)
}

/// `(name, shapes, function)` for every graph operation.
fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Vec<usize>>, Case)> {
    let s = seed;
    let mask_seed = seed;
    vec![
        ("matmul", vec![vec![2, 3, 4], vec![2, 4, 5]], case(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, s)
        })),
        ("matmul_shared_rhs", vec![vec![2, 3, 4], vec![4, 2]], case(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, s)
        })),
        ("matmul_shared_lhs", vec![vec![3, 4], vec![2, 4, 2]], case(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, s)
        })),
        ("add_broadcast", vec![vec![2, 3, 4], vec![4]], case(move |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, s)
        })),
        ("sub_broadcast", vec![vec![2, 3, 4], vec![3, 4]], case(move |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, s)
        })),
        ("mul_broadcast", vec![vec![3, 4], vec![4]], case(move |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, s)
        })),
        ("minimum", vec![vec![3, 4], vec![3, 4]], case(move |g, v| {
            let y = g.minimum(v[0], v[1])?;
            project(g, y, s)
        })),
        ("scale", vec![vec![5]], case(move |g, v| {
            let y = g.scale(v[0], -2.5);
            project(g, y, s)
        })),
        ("add_scalar", vec![vec![5]], case(move |g, v| {
            let y = g.add_scalar(v[0], 0.75);
            let y = g.mul(y, y)?;
            project(g, y, s)
        })),
        ("powf", vec![vec![6]], case(move |g, v| {
            let x = g.mul(v[0], v[0])?;
            let x = g.add_scalar(x, 0.5);
            let y = g.powf(x, -0.5);
            project(g, y, s)
        })),
        ("relu", vec![vec![4, 5]], case(move |g, v| {
            let y = g.relu(v[0]);
            project(g, y, s)
        })),
        ("tanh", vec![vec![4, 5]], case(move |g, v| {
            let y = g.tanh(v[0]);
            project(g, y, s)
        })),
        ("exp", vec![vec![4, 5]], case(move |g, v| {
            let y = g.exp(v[0]);
            project(g, y, s)
        })),
        ("log", vec![vec![4, 5]], case(move |g, v| {
            let x = g.add_scalar(v[0], 1.5);
            let y = g.log(x);
            project(g, y, s)
        })),
        ("softmax_lastdim", vec![vec![2, 3, 5]], case(move |g, v| {
            let y = g.softmax_lastdim(v[0], None)?;
            project(g, y, s)
        })),
        ("softmax_masked", vec![vec![2, 1, 3, 4]], case(move |g, v| {
            let mut rng = Rng::keyed(mask_seed, "mask");
            let mut m = vec![0.0; 2 * 4];
            for (i, x) in m.iter_mut().enumerate() {
                if i % 4 != 0 && rng.next_f64() < 0.4 {
                    *x = f64::NEG_INFINITY;
                }
            }
            let mask = Tensor::from_vec(&[2, 1, 1, 4], m)?;
            let y = g.softmax_lastdim(v[0], Some(&mask))?;
            project(g, y, s)
        })),
        ("gather_rows", vec![vec![5, 3]], case(move |g, v| {
            let y = g.gather_rows(v[0], &[4, 0, 4, 2, 1, 4])?;
            project(g, y, s)
        })),
        ("mean_var_lastdim", vec![vec![3, 6]], case(move |g, v| {
            let (m, var) = g.mean_var_lastdim(v[0]);
            let a = project(g, m, s)?;
            let b = project(g, var, s + 1)?;
            g.add(a, b)
        })),
        ("expand_lastdim", vec![vec![3, 1]], case(move |g, v| {
            let y = g.expand_lastdim(v[0], 4)?;
            project(g, y, s)
        })),
        ("sum_lastdim", vec![vec![3, 4]], case(move |g, v| {
            let y = g.sum_lastdim(v[0]);
            project(g, y, s)
        })),
        ("sum", vec![vec![3, 4]], case(|g, v| {
            let x = g.tanh(v[0]);
            Ok(g.sum(x))
        })),
        ("mean", vec![vec![3, 4]], case(|g, v| {
            let x = g.tanh(v[0]);
            Ok(g.mean(x))
        })),
        ("cross_entropy_logits", vec![vec![2, 3, 5]], case(|g, v| {
            g.cross_entropy_logits(v[0], &[1, 4, 0, 2, 0, 3], 0)
        })),
        ("reshape", vec![vec![2, 6]], case(move |g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            project(g, y, s)
        })),
        ("swap_axes", vec![vec![2, 3, 4]], case(move |g, v| {
            let y = g.swap_axes(v[0], 0, 2)?;
            project(g, y, s)
        })),
        ("transpose_last2", vec![vec![2, 3, 4]], case(move |g, v| {
            let y = g.transpose_last2(v[0])?;
            project(g, y, s)
        })),
    ]
}

fn ln_params(v: &[Var], eps: f64) -> LayerNormParams {
    LayerNormParams { gamma: v[0], beta: v[1], eps }
}

fn padding_masks(lens: &[usize], t: usize) -> AttentionMaskSet {
    let ids: Vec<usize> = lens.iter().flat_map(|&l| (0..t).map(move |i| usize::from(i < l))).collect();
    AttentionMaskSet { padding: Some(AttentionMaskSet::padding_from_ids(&ids, lens.len(), t, 0)), ..Default::default() }
}

/// `(name, shapes, function)` for the layer library.
fn layer_cases(seed: u64) -> Vec<(&'static str, Vec<Vec<usize>>, Case)> {
    let s = seed;
    let mut out: Vec<(&'static str, Vec<Vec<usize>>, Case)> = vec![
        ("layer_norm", vec![vec![2, 3, 6], vec![6], vec![6]], case(move |g, v| {
            let y = layer_norm(g, v[0], &ln_params(&v[1..], 1e-6))?;
            project(g, y, s)
        })),
        ("position_wise_ffn", vec![vec![2, 3, 4], vec![4, 6], vec![6, 4]], case(move |g, v| {
            let y = position_wise_ffn(g, v[0], v[1], v[2])?;
            project(g, y, s)
        })),
        ("residual_sublayer_k3", vec![vec![2, 4], vec![4, 4]], case(move |g, v| {
            let w = v[1];
            let y = residual_sublayer(g, v[0], |g, x| {
                let h = g.matmul(x, w)?;
                Ok(g.tanh(h))
            }, ResidualConfig::new(3.0)?)?;
            project(g, y, s)
        })),
        ("dropout_apply", vec![vec![4, 5]], case(move |g, v| {
            let mut rng = Rng::keyed(s, "dropout");
            let y = dropout_apply(g, v[0], 0.3, &mut rng, true)?;
            project(g, y, s)
        })),
    ];
    for (name, mode) in [
        ("prepare_inputs_original", NormMode::Original),
        ("prepare_inputs_full", NormMode::Full),
        ("prepare_inputs_full_post_sum", NormMode::FullPostSum),
    ] {
        out.push((name, vec![vec![2, 3, 4], vec![3, 4], vec![4], vec![4], vec![4], vec![4]], case(move |g, v| {
            let y = prepare_inputs(g, v[0], v[1], mode, &ln_params(&v[2..4], 1e-6), &ln_params(&v[4..6], 1e-6))?;
            project(g, y, s)
        })));
    }
    for (name, zero) in [
        ("scaled_dot_attention", ZeroMask::Off),
        ("scaled_dot_attention_zero", ZeroMask::Renormalized),
        ("scaled_dot_attention_zero_post", ZeroMask::HardZero),
    ] {
        out.push((name, vec![vec![2, 2, 4, 3], vec![2, 2, 4, 3], vec![2, 2, 4, 3]], case(move |g, v| {
            let mut masks = padding_masks(&[4, 2], 4);
            masks.causal = Some(AttentionMaskSet::causal_mask(4));
            let a = scaled_dot_attention(g, v[0], v[1], v[2], &masks, zero)?;
            project(g, a.output, s)
        })));
    }
    out.push(("multi_head_attention_cross", vec![vec![2, 3, 4], vec![2, 5, 4], vec![4, 4], vec![4, 4], vec![4, 4], vec![4, 4]], case(move |g, v| {
        let p = MhaParams { wq: v[2], wk: v[3], wv: v[4], wo: v[5], heads: 2 };
        let a = multi_head_attention(g, v[0], v[1], &p, &padding_masks(&[5, 3], 5), ZeroMask::Off)?;
        project(g, a.output, s)
    })));
    out.push(("encoder_block", vec![vec![2, 4, 8], vec![8, 8], vec![8, 8], vec![8, 8], vec![8, 8], vec![8], vec![8], vec![8, 16], vec![16, 8], vec![8], vec![8]], case(move |g, v| {
        let p = MhaParams { wq: v[1], wk: v[2], wv: v[3], wo: v[4], heads: 2 };
        let masks = padding_masks(&[4, 3], 4);
        let rc = ResidualConfig::new(2.0)?;
        let h = residual_sublayer(g, v[0], |g, x| {
            Ok(multi_head_attention(g, x, x, &p, &masks, ZeroMask::Renormalized)?.output)
        }, rc)?;
        let x = layer_norm(g, h, &ln_params(&v[5..7], 1e-6))?;
        let (w1, w2) = (v[7], v[8]);
        let h = residual_sublayer(g, x, |g, x| position_wise_ffn(g, x, w1, w2), rc)?;
        let y = layer_norm(g, h, &ln_params(&v[9..11], 1e-6))?;
        project(g, y, s)
    })));
    out
}

/// Micro model (d=8, one layer, two heads) with three of the four toggles;
/// the positional toggle is applied by [`check_model`].
pub fn micro_config(full_norm: bool, weighted: bool, zero: bool) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.0,
        max_len: 8,
        src_vocab: 9,
        tgt_vocab: 7,
        norm_mode: if full_norm { NormMode::Full } else { NormMode::Original },
        residual_k: if weighted { 4.0 } else { 1.0 },
        zero_mask: zero,
        ..ModelConfig::original()
    }
}

fn micro_batch(zero: bool) -> Result<Batch> {
    Batch::from_ids(&[vec![4, 5, 6, 7], vec![8, 4]], &[vec![4, 5, 6], vec![6]], zero)
}

/// Cross-entropy of the micro model as a function of all its parameters.
pub fn check_model(cfg: &ModelConfig, learned_pe: bool, seed: u64) -> Result<f64> {
    Ok(check_model_detailed(cfg, learned_pe, seed)?.1.max_rel_error)
}

/// Parameter names in input order, and the worst entry.
pub fn check_model_detailed(cfg: &ModelConfig, learned_pe: bool, seed: u64) -> Result<(Vec<String>, WorstEntry)> {
    let mut m = TransformerModel::build(cfg, seed)?;
    if learned_pe {
        let mut rng = Rng::keyed(seed, "pe");
        let vals: Vec<f64> = (0..m.pe.rows() * m.pe.cols()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        m.pe = crate::posenc::PeMatrix::new(m.pe.rows(), m.pe.cols(), vals, crate::posenc::PeSource::Learned)?;
    }
    let names: Vec<String> = m.params.keys().cloned().collect();
    let inputs: Vec<Tensor> = m.params.values().cloned().collect();
    let batch = micro_batch(cfg.zero_mask)?;
    let worst = grad_check_detailed(
        |g, vars| {
            let bound = names.iter().cloned().zip(vars.iter().copied()).collect();
            m.loss(g, &bound, &batch, None)
        },
        &inputs,
    )?;
    Ok((names, worst))
}

fn run_cases(
    reports: &mut Vec<CheckReport>,
    seeds: usize,
    cases: impl Fn(u64) -> Vec<(&'static str, Vec<Vec<usize>>, Case)>,
) -> Result<()> {
    let start = reports.len();
    for seed in 0..seeds as u64 {
        let mut rng = Rng::keyed(seed, "gradcheck-inputs");
        for (idx, (name, shapes, f)) in cases(seed).into_iter().enumerate() {
            let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(s, &mut rng)).collect();
            let w = grad_check_detailed(&f, &inputs).map_err(|e| Error::Training(format!("{name}: {e}")))?;
            let label = (format!("seed {seed}, input {}", w.input), w);
            if seed == 0 {
                reports.push(CheckReport { name: name.to_string(), max_rel_error: w.max_rel_error, cases: 1, worst: Some(label) });
            } else {
                let r = &mut reports[start + idx];
                if w.max_rel_error > r.max_rel_error {
                    r.max_rel_error = w.max_rel_error;
                    r.worst = Some(label);
                }
                r.cases += 1;
            }
        }
    }
    Ok(())
}

pub fn op_suite(seeds: usize) -> Result<Vec<CheckReport>> {
    let mut r = Vec::new();
    run_cases(&mut r, seeds, op_cases)?;
    Ok(r)
}

pub fn layer_suite(seeds: usize) -> Result<Vec<CheckReport>> {
    let mut r = Vec::new();
    run_cases(&mut r, seeds, layer_cases)?;
    Ok(r)
}

/// All 16 toggle combinations of the micro model.
pub fn model_suite() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for bits in 0..16u32 {
        let on = |i: u32| bits & (1 << i) != 0;
        let cfg = micro_config(on(0), on(1), on(3));
        let name = format!(
            "model[norm={},k={},pe={},zero={}]",
            if on(0) { "full" } else { "original" },
            cfg.residual_k,
            if on(2) { "learned" } else { "sinusoidal" },
            on(3)
        );
        let (names, w) = check_model_detailed(&cfg, on(2), 11 + bits as u64)?;
        out.push(CheckReport { name, max_rel_error: w.max_rel_error, cases: 1, worst: Some((names[w.input].clone(), w)) });
    }
    Ok(out)
}

/// Operations and layers over `seeds` random draws, then the model grid.
pub fn full_suite(seeds: usize) -> Result<(Vec<CheckReport>, std::time::Duration)> {
    let t = Instant::now();
    let mut r = op_suite(seeds)?;
    r.extend(layer_suite(seeds)?);
    r.extend(model_suite()?);
    Ok((r, t.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_is_exact() {
        let mut rng = Rng::new(1);
        let x = uniform(&[3, 4], &mut rng);
        let err = grad_check(|g, v| Ok(g.sum(v[0])), &[x]).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // stop-gradient through a constant copy: analytic 0, numeric 1
        let x = Tensor::from_vec(&[1], vec![0.3]).unwrap();
        let err = grad_check(
            |g, v| {
                let c = g.constant(g.value(v[0]).clone());
                Ok(g.sum(c))
            },
            &[x],
        )
        .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn rejects_non_scalar() {
        let x = Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap();
        assert!(grad_check(|_, v| Ok(v[0]), &[x]).is_err());
    }

    #[test]
    fn ops_pass_on_a_few_seeds() {
        for r in op_suite(2).unwrap() {
            assert!(r.passed(), "{} {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn layers_pass_on_one_seed() {
        for r in layer_suite(1).unwrap() {
            assert!(r.passed(), "{} {}", r.name, r.max_rel_error);
        }
    }
}
