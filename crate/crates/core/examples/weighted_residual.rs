//! H(x) = F(x) + k x. The Jacobian of H minus that of F is k times the
//! identity; this measures it by finite differences for k in 1..=5.

use etlab::nn::{position_wise_ffn, residual_sublayer, ResidualConfig};
use etlab::{Graph, Init, Rng, Tensor};

fn eval(x: &[f64], w1: &Tensor, w2: &Tensor, k: Option<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_vec(&[1, x.len()], x.to_vec()).unwrap());
    let (a, b) = (g.constant(w1.clone()), g.constant(w2.clone()));
    let out = match k {
        Some(k) => residual_sublayer(&mut g, xv, |g, x| position_wise_ffn(g, x, a, b), ResidualConfig::new(k).unwrap()),
        None => position_wise_ffn(&mut g, xv, a, b),
    };
    g.data(out.unwrap()).to_vec()
}

fn main() {
    let d = 6;
    let mut rng = Rng::new(9);
    let w1 = Tensor::new(&[d, 12], Init::Uniform { lo: -0.5, hi: 0.5, rng: &mut rng }).unwrap();
    let w2 = Tensor::new(&[12, d], Init::Uniform { lo: -0.5, hi: 0.5, rng: &mut rng }).unwrap();
    let x: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let h = 1e-6;
    for k in 1..=5 {
        let mut worst: f64 = 0.0;
        for j in 0..d {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let dh: Vec<f64> = eval(&xp, &w1, &w2, Some(k as f64)).iter().zip(eval(&xm, &w1, &w2, Some(k as f64))).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let df: Vec<f64> = eval(&xp, &w1, &w2, None).iter().zip(eval(&xm, &w1, &w2, None)).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            for i in 0..d {
                let want = if i == j { k as f64 } else { 0.0 };
                worst = worst.max((dh[i] - df[i] - want).abs());
            }
        }
        println!("k={k}: max |dH - dF - kI| = {worst:.2e}");
    }
}
