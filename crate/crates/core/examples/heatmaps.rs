//! Trains a zero-masked model briefly, then renders one encoder
//! self-attention heatmap per layer and head plus the positional table.

use std::path::PathBuf;

use etlab::cli::write_heatmaps;
use etlab::corpus::{toy_parallel, DropReport, ParallelCorpus};
use etlab::model::ModelConfig;
use etlab::trainer::{checkpoint::checkpoint_container, checkpoint::restore, train_on, Dataset, EvalSplit, TrainConfig};

fn main() -> etlab::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("etlab_heatmaps"));
    let none = ParallelCorpus { pairs: vec![], origin: String::new() };
    let ds = Dataset::from_splits(toy_parallel(32, 1), none, DropReport::default(), 1)?;
    let cfg = ModelConfig { zero_mask: true, ..ModelConfig::desk() };
    let tc = TrainConfig { epochs: 10, eval_split: EvalSplit::Train, ..TrainConfig::desk() };
    let (st, _) = train_on(&cfg, &tc, &ds)?;
    let ck = restore(checkpoint_container(&st, &ds.src_vocab, &ds.tgt_vocab, &tc)?)?;
    for p in write_heatmaps(&ck, "der mann sieht einen ball im park .", &dir)? {
        println!("{}", p.display());
    }
    Ok(())
}
