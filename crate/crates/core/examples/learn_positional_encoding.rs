//! Learns a 16 x 8 positional matrix with soft actor-critic on the pairwise
//! position reward, compares it with sinusoidal encoding and direct gradient
//! ascent, and writes the matrix as CSV plus an SVG heatmap.
//!
//! cargo run --release --example learn_positional_encoding [steps] [outdir]

use std::path::PathBuf;

use etlab::posenc::{
    direct_ascent_pe, pe_export_heatmap, pe_reward, sac_learn_pe, sinusoidal_pe, upsample_pe, PeEnvConfig, SacConfig,
};
use etlab::Rng;

fn main() -> etlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(3000);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let env = PeEnvConfig::default();
    let sin = pe_reward(&sinusoidal_pe(16, 8)?, &env)?;
    let out = sac_learn_pe(&env, &SacConfig { steps, ..SacConfig::default() }, &mut Rng::new(7))?;
    let ascent = pe_reward(&direct_ascent_pe(&env, 2000, 0.05, &mut Rng::new(7))?, &env)?;
    println!("sinusoidal {sin:.4}");
    println!("sac        {:.4}  ({:.3}x)", out.best_reward, out.best_reward / sin);
    println!("ascent     {ascent:.4}  ({:.3}x)", ascent / sin);
    let paths = pe_export_heatmap(&out.best, &dir.join("learned_pe.csv"))?;
    let big = upsample_pe(&out.best, 2, 8, 3)?;
    println!("upsampled to {} x {} for a d_model=64 model", big.rows(), big.cols());
    println!("wrote {} and {}", paths.csv.display(), paths.svg.display());
    Ok(())
}
