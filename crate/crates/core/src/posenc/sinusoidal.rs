use super::{PeMatrix, PeSource};
use crate::error::{Error, Result};

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe(max_positions: usize, d_model: usize) -> Result<PeMatrix> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::config(format!("sinusoidal encoding needs an even d_model, got {d_model}")));
    }
    if max_positions == 0 {
        return Err(Error::config("sinusoidal encoding needs at least one position"));
    }
    let mut values = vec![0.0; max_positions * d_model];
    for pos in 0..max_positions {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            values[pos * d_model + 2 * i] = angle.sin();
            values[pos * d_model + 2 * i + 1] = angle.cos();
        }
    }
    PeMatrix::new(max_positions, d_model, values, PeSource::Sinusoidal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero() {
        let pe = sinusoidal_pe(4, 8).unwrap();
        for i in 0..4 {
            assert_eq!(pe.get(0, 2 * i), 0.0);
            assert_eq!(pe.get(0, 2 * i + 1), 1.0);
        }
    }

    #[test]
    fn bounded() {
        let pe = sinusoidal_pe(64, 16).unwrap();
        assert!(pe.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn reference_values() {
        let pe = sinusoidal_pe(16, 8).unwrap();
        // sin(1) from a 30-digit reference
        assert!((pe.get(1, 0) - 0.841470984807896506652502321630).abs() < 1e-12);
        // pos 3, i = 1: cos(3 / 10000^(1/4)) = cos(0.3)
        assert!((pe.get(3, 3) - 0.955336489125606019642310227568).abs() < 1e-12);
        // pos 15, i = 3: sin(15 / 10000^(3/4)) = sin(0.015)
        assert!((pe.get(15, 6) - 0.0149994375063280910994362965188).abs() < 1e-12);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(sinusoidal_pe(4, 7), Err(Error::Config(_))));
    }
}
