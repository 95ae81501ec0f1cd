//! Positional encodings: the sinusoidal baseline, the pairwise position
//! reward, two learners that maximize it (soft actor-critic and direct
//! gradient ascent), and the replicate-then-smooth upsampler.

mod ascent;
mod export;
mod reward;
mod sac;
mod sinusoidal;
mod upsample;

pub use ascent::{direct_ascent_from, direct_ascent_pe};
pub use export::{pe_export_heatmap, read_matrix_csv, write_matrix_csv, HeatmapPaths, CELL_PX};
pub use reward::{pe_reward, pe_reward_bruteforce, pe_reward_gradient, PeEnvConfig, Similarity};
pub use sac::{sac_learn_pe, SacConfig, SacOutcome};
pub use sinusoidal::sinusoidal_pe;
pub use upsample::upsample_pe;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeSource {
    Sinusoidal,
    Learned,
}

/// Row-major `rows x cols` matrix of position vectors: one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct PeMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    source: PeSource,
}

impl PeMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, source: PeSource) -> crate::Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(crate::Error::Shape(format!(
                "{rows} x {cols} positional matrix with {} values",
                values.len()
            )));
        }
        Ok(PeMatrix { rows, cols, values, source })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> PeSource {
        self.source
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// First `rows` positions.
    pub fn head(&self, rows: usize) -> PeMatrix {
        let rows = rows.min(self.rows);
        PeMatrix {
            rows,
            cols: self.cols,
            values: self.values[..rows * self.cols].to_vec(),
            source: self.source,
        }
    }
}
