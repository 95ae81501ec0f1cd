use super::{PeMatrix, PeSource};
use crate::error::{Error, Result};

/// Replicates every cell into a `factor_pos x factor_dim` block, then applies a
/// `smooth_window x smooth_window` box filter with edge replication.
pub fn upsample_pe(small: &PeMatrix, factor_pos: usize, factor_dim: usize, smooth_window: usize) -> Result<PeMatrix> {
    if factor_pos == 0 || factor_dim == 0 {
        return Err(Error::config("upsampling factors must be at least 1"));
    }
    if smooth_window % 2 == 0 {
        return Err(Error::config(format!("smoothing window must be odd, got {smooth_window}")));
    }
    let (rows, cols) = (small.rows() * factor_pos, small.cols() * factor_dim);
    let mut block = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            block[r * cols + c] = small.get(r / factor_pos, c / factor_dim);
        }
    }
    let half = (smooth_window / 2) as isize;
    let out = if half == 0 {
        block
    } else {
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let area = (smooth_window * smooth_window) as f64;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let mut s = 0.0;
                for dr in -half..=half {
                    let rr = clamp(r as isize + dr, rows);
                    for dc in -half..=half {
                        s += block[rr * cols + clamp(c as isize + dc, cols)];
                    }
                }
                out[r * cols + c] = s / area;
            }
        }
        out
    };
    PeMatrix::new(rows, cols, out, PeSource::Learned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn m(rows: usize, cols: usize, v: Vec<f64>) -> PeMatrix {
        PeMatrix::new(rows, cols, v, PeSource::Learned).unwrap()
    }

    #[test]
    fn block_replication() {
        let p = m(2, 2, vec![1., 2., 3., 4.]);
        let up = upsample_pe(&p, 2, 2, 1).unwrap();
        assert_eq!(
            up.values(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn constants_are_fixed_points() {
        let p = m(3, 2, vec![0.25; 6]);
        for (fp, fd, w) in [(1, 1, 3), (2, 4, 5), (3, 1, 7)] {
            let up = upsample_pe(&p, fp, fd, w).unwrap();
            assert!(up.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    fn max_adjacent_diff(p: &PeMatrix) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..p.rows() {
            for c in 0..p.cols() {
                if r + 1 < p.rows() {
                    best = best.max((p.get(r, c) - p.get(r + 1, c)).abs());
                }
                if c + 1 < p.cols() {
                    best = best.max((p.get(r, c) - p.get(r, c + 1)).abs());
                }
            }
        }
        best
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = Rng::new(12);
        let p = m(4, 4, (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let up = upsample_pe(&p, 1, 1, 3).unwrap();
        for r in 0..4i32 {
            for c in 0..4i32 {
                let mut s = 0.0;
                for rr in r - 1..=r + 1 {
                    for cc in c - 1..=c + 1 {
                        s += p.get(rr.clamp(0, 3) as usize, cc.clamp(0, 3) as usize);
                    }
                }
                assert!((up.get(r as usize, c as usize) - s / 9.0).abs() <= 1e-12);
            }
        }
        assert!(max_adjacent_diff(&up) <= max_adjacent_diff(&p) + 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = m(1, 1, vec![0.0]);
        assert!(upsample_pe(&p, 0, 1, 1).is_err());
        assert!(upsample_pe(&p, 1, 1, 2).is_err());
    }
}
