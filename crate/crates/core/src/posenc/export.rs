use std::fs;
use std::path::{Path, PathBuf};

use super::{PeMatrix, PeSource};
use crate::error::{Error, Result};
use crate::plot::{heatmap_svg, Ramp};

/// Pixel size of one heatmap cell.
pub const CELL_PX: usize = 12;

/// Header-free CSV: one position per line, comma-separated shortest round-trip decimals.
pub fn write_matrix_csv(values: &[f64], cols: usize, path: &Path) -> Result<()> {
    let mut s = String::new();
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<PeMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Format(format!(
                    "{}:{}: expected {c} columns, found {}",
                    path.display(),
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format(format!("{}: empty matrix", path.display())))?;
    PeMatrix::new(rows, cols, values, PeSource::Learned)
}

#[derive(Debug, Clone)]
pub struct HeatmapPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `<path>.csv` and `<path>.svg` (the extension of `path`, if any, is replaced).
pub fn pe_export_heatmap(p: &PeMatrix, path: &Path) -> Result<HeatmapPaths> {
    let csv = path.with_extension("csv");
    let svg = path.with_extension("svg");
    write_matrix_csv(p.values(), p.cols(), &csv)?;
    let doc = heatmap_svg(p.values(), p.rows(), p.cols(), CELL_PX, Ramp::Diverging { lo: -1.0, hi: 1.0 });
    fs::write(&svg, doc).map_err(|e| Error::io(&svg, e))?;
    Ok(HeatmapPaths { csv, svg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::sinusoidal_pe;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pe = sinusoidal_pe(16, 8).unwrap();
        let paths = pe_export_heatmap(&pe, &dir.path().join("sin")).unwrap();
        let back = read_matrix_csv(&paths.csv).unwrap();
        assert_eq!(back.values(), pe.values());
        assert_eq!((back.rows(), back.cols()), (16, 8));
    }

    #[test]
    fn svg_size_follows_cells() {
        let dir = tempfile::tempdir().unwrap();
        let pe = sinusoidal_pe(16, 8).unwrap();
        let paths = pe_export_heatmap(&pe, &dir.path().join("sin")).unwrap();
        let svg = fs::read_to_string(paths.svg).unwrap();
        let attr = |name: &str| -> usize {
            let start = svg.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
            svg[start..].split('"').next().unwrap().parse().unwrap()
        };
        assert_eq!(attr("width"), 8 * CELL_PX);
        assert_eq!(attr("height"), 16 * CELL_PX);
        assert_eq!(svg.matches("<rect").count(), 128);
    }

    #[test]
    fn single_zero_cell_is_mid_ramp() {
        let dir = tempfile::tempdir().unwrap();
        let p = PeMatrix::new(1, 1, vec![0.0], PeSource::Learned).unwrap();
        let paths = pe_export_heatmap(&p, &dir.path().join("one")).unwrap();
        let svg = fs::read_to_string(paths.svg).unwrap();
        assert_eq!(svg.matches("<rect").count(), 1);
        assert!(svg.contains("#ffffff"));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let p = PeMatrix::new(1, 1, vec![0.0], PeSource::Learned).unwrap();
        let r = pe_export_heatmap(&p, Path::new("/nonexistent-dir/x/pe"));
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn ragged_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("bad.csv");
        fs::write(&f, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix_csv(&f), Err(Error::Format(_))));
    }
}
