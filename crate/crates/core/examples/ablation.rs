//! The nine-run ablation on a small synthetic corpus: baseline, each
//! mechanism alone (residual weight 2 to 5) and everything combined.
//!
//! cargo run --release --example ablation [epochs] [outdir]

use std::path::PathBuf;

use etlab::corpus::{split_pairs, toy_parallel, DropReport, ParallelCorpus};
use etlab::model::ModelConfig;
use etlab::posenc::{sac_learn_pe, write_matrix_csv, PeEnvConfig, SacConfig};
use etlab::trainer::{run_ablation, Dataset, TrainConfig};
use etlab::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("etlab_ablation"));
    let all = toy_parallel(400, 3);
    let (train, test) = split_pairs(all.pairs, 0.8, &mut Rng::new(1))?;
    let ds = Dataset::from_splits(
        ParallelCorpus { pairs: train, origin: all.origin.clone() },
        ParallelCorpus { pairs: test, origin: all.origin },
        DropReport::default(),
        1,
    )?;
    let env = PeEnvConfig::default();
    let pe = sac_learn_pe(&env, &SacConfig { steps: 1000, ..SacConfig::default() }, &mut Rng::new(7))?;
    std::fs::create_dir_all(&dir)?;
    let pe_csv = dir.join("pe.csv");
    write_matrix_csv(pe.best.values(), env.n_dims, &pe_csv)?;
    let base = ModelConfig { d_model: 32, d_ff: 64, ..ModelConfig::desk() };
    let tc = TrainConfig { epochs, ..TrainConfig::desk() };
    let out = run_ablation(&base, &tc, &ds, &pe_csv, 4, Some(&dir))?;
    print!("{}", out.summary);
    println!("wrote {}", dir.display());
    Ok(())
}
