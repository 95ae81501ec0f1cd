//! Full layer normalization normalizes token embeddings and positional
//! encodings separately before adding them, so a badly scaled embedding
//! table no longer swamps the position signal.

use etlab::nn::{prepare_inputs, LayerNormParams, NormMode};
use etlab::posenc::sinusoidal_pe;
use etlab::{Graph, Init, Rng, Tensor};

fn stats(row: &[f64]) -> (f64, f64) {
    let m = row.iter().sum::<f64>() / row.len() as f64;
    (m, row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / row.len() as f64)
}

fn main() -> etlab::Result<()> {
    let (t, d) = (6, 16);
    let mut rng = Rng::new(3);
    let emb = Tensor::new(&[1, t, d], Init::Uniform { lo: -40.0, hi: 40.0, rng: &mut rng })?;
    let pe = sinusoidal_pe(t, d)?;
    for mode in [NormMode::Original, NormMode::Full] {
        let mut g = Graph::new();
        let e = g.constant(emb.clone());
        let p = g.constant(Tensor::from_vec(&[t, d], pe.values().to_vec())?);
        let ln = |g: &mut Graph| LayerNormParams {
            gamma: g.constant(Tensor::new(&[d], Init::Constant(1.0)).unwrap()),
            beta: g.constant(Tensor::zeros(&[d]).unwrap()),
            eps: 1e-6,
        };
        let (ne, np) = (ln(&mut g), ln(&mut g));
        let x = prepare_inputs(&mut g, e, p, mode, &ne, &np)?;
        let (mean, var) = stats(&g.data(x)[..d]);
        // share of the summed signal coming from the positional stream at position 0
        let pe_norm: f64 = pe.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        let emb_norm: f64 = emb.data()[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{mode:<9} token 0: mean {mean:+.3e} var {var:.4}   |emb| {emb_norm:.1} vs |pe| {pe_norm:.2}");
    }
    Ok(())
}
