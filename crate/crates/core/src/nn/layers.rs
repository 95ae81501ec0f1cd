use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Weight `k` on the skip path of every residual sublayer; `k = 1` is the plain residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualConfig {
    k: f64,
}

impl ResidualConfig {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config(format!("residual weight must be positive, got {k}")));
        }
        Ok(ResidualConfig { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig { k: 1.0 }
    }
}

/// `H(x) = F(x) + k x`.
pub fn residual_sublayer<F>(g: &mut Graph, x: Var, sublayer: F, rc: ResidualConfig) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let fx = sublayer(g, x)?;
    if g.shape(fx) != g.shape(x) {
        return Err(Error::shape(format!(
            "sublayer changed shape {:?} -> {:?}",
            g.shape(x),
            g.shape(fx)
        )));
    }
    let kx = g.scale(x, rc.k);
    g.add(fx, kx)
}

/// `relu(x W1) W2`.
pub fn position_wise_ffn(g: &mut Graph, x: Var, w1: Var, w2: Var) -> Result<Var> {
    let h = g.matmul(x, w1)?;
    let h = g.relu(h);
    g.matmul(h, w2)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Identity when not training.
pub fn dropout_apply(g: &mut Graph, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = g.shape(x).to_vec();
    let n = g.value(x).numel();
    let mask = (0..n).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect();
    let mask = g.constant(Tensor::from_vec(&shape, mask)?);
    g.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Init;

    #[test]
    fn vanishing_sublayer_scales_input() {
        let mut rng = Rng::new(3);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[2, 3], Init::Uniform { lo: -1., hi: 1., rng: &mut rng }).unwrap());
        let rc = ResidualConfig::new(4.0).unwrap();
        let h = residual_sublayer(&mut g, x, |g, x| Ok(g.scale(x, 0.0)), rc).unwrap();
        let expect: Vec<f64> = g.data(x).iter().map(|v| 4.0 * v).collect();
        assert_eq!(g.data(h), expect.as_slice());
    }

    #[test]
    fn identity_sublayer_doubles() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![1., -2., 0.5]).unwrap());
        let h = residual_sublayer(&mut g, x, |_, x| Ok(x), ResidualConfig::default()).unwrap();
        assert_eq!(g.data(h), &[2., -4., 1.]);
    }

    #[test]
    fn weighted_and_plain_differ_by_scaled_input() {
        let mut rng = Rng::new(6);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[4], Init::Uniform { lo: -1., hi: 1., rng: &mut rng }).unwrap());
        let f = |g: &mut Graph, x: Var| Ok(g.tanh(x));
        let h1 = residual_sublayer(&mut g, x, f, ResidualConfig::default()).unwrap();
        let h3 = residual_sublayer(&mut g, x, f, ResidualConfig::new(3.0).unwrap()).unwrap();
        for ((a, b), xv) in g.data(h3).iter().zip(g.data(h1)).zip(g.data(x)) {
            assert!((a - b - 2.0 * xv).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_changing_sublayer_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]).unwrap());
        let r = residual_sublayer(&mut g, x, |g, x| Ok(g.sum(x)), ResidualConfig::default());
        assert!(matches!(r, Err(Error::Shape(_))));
        assert!(ResidualConfig::new(0.0).is_err());
        assert!(ResidualConfig::new(-1.0).is_err());
    }

    #[test]
    fn dropout_identities() {
        let mut rng = Rng::new(1);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[10], Init::Constant(1.0)).unwrap());
        assert_eq!(dropout_apply(&mut g, x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout_apply(&mut g, x, 0.7, &mut rng, false).unwrap(), x);
        assert!(matches!(dropout_apply(&mut g, x, 1.0, &mut rng, true), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = Rng::new(2024);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(&[100_000], Init::Constant(1.0)).unwrap());
        let y = dropout_apply(&mut g, x, 0.5, &mut rng, true).unwrap();
        let survivors: Vec<f64> = g.data(y).iter().copied().filter(|&v| v != 0.0).collect();
        let frac = survivors.len() as f64 / 100_000.0;
        assert!((frac - 0.5).abs() <= 0.01, "survivor fraction {frac}");
        assert!(survivors.iter().all(|&v| v == 2.0));
    }
}
