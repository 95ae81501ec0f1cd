//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    /// Populated by [`crate::graph::Graph::backward`]; same length as `data`.
    pub grad: Option<Vec<f64>>,
}

/// How [`Tensor::new`] fills the allocation.
pub enum Init<'a> {
    Zeros,
    Constant(f64),
    /// Draws `lo + (hi - lo) * u`, `u` in `[0, 1)`, from the supplied generator only.
    Uniform { lo: f64, hi: f64, rng: &'a mut Rng },
    Data(Vec<f64>),
}

fn check_dims(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor needs at least one dimension"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], init: Init<'_>) -> Result<Self> {
        let n = check_dims(shape)?;
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform { lo, hi, rng } => (0..n).map(|_| rng.uniform(lo, hi)).collect(),
            Init::Data(d) => {
                if d.len() != n {
                    return Err(Error::shape(format!(
                        "shape {shape:?} needs {n} values, got {}",
                        d.len()
                    )));
                }
                d
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Tensor::new(shape, Init::Data(data))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, Init::Zeros)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// First element; intended for scalar tensors.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_dims(shape)?;
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::new(&[2, 2], Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::new(&[3], Init::Constant(1.0)).unwrap();
        assert_eq!(c.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn uniform_reproduces_on_reseed() {
        let a = Tensor::new(&[2], Init::Uniform { lo: -1.0, hi: 1.0, rng: &mut Rng::new(7) }).unwrap();
        let b = Tensor::new(&[2], Init::Uniform { lo: -1.0, hi: 1.0, rng: &mut Rng::new(7) }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data(), &[-0.8365888809927888, -0.48347120732218873]);
    }

    #[test]
    fn data_length_mismatch_is_rejected() {
        assert!(matches!(
            Tensor::from_vec(&[2, 3], vec![1.0; 5]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::zeros(&[2, 0]).is_err());
    }

    #[test]
    fn get_is_row_major() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 2]), 5.0);
        assert_eq!(t.get(&[0, 1]), 1.0);
    }
}
