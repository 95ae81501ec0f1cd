//! Training for two epochs, saving, loading and training two more gives
//! exactly the same model as training four epochs in one go.

use etlab::corpus::{toy_parallel, DropReport, ParallelCorpus};
use etlab::model::ModelConfig;
use etlab::trainer::{load_checkpoint, records_csv, save_checkpoint, train_epochs, train_on, Dataset, EvalSplit, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let none = ParallelCorpus { pairs: vec![], origin: String::new() };
    let ds = Dataset::from_splits(toy_parallel(24, 2), none, DropReport::default(), 1)?;
    let cfg = ModelConfig { d_model: 32, d_ff: 64, ..ModelConfig::desk() };
    let tc = TrainConfig { epochs: 4, eval_split: EvalSplit::Train, ..TrainConfig::desk() };
    let (whole, _) = train_on(&cfg, &tc, &ds)?;

    let (half, _) = train_on(&cfg, &TrainConfig { epochs: 2, ..tc.clone() }, &ds)?;
    let path = std::env::temp_dir().join("etlab_resume_demo.etck");
    save_checkpoint(&half, &ds, &tc, &path)?;
    let mut resumed = load_checkpoint(&path)?.state;
    train_epochs(&mut resumed, &ds, &tc)?;

    print!("{}", records_csv(&resumed.records));
    println!("identical to the uninterrupted run: {}", resumed == whole);
    println!("checkpoint: {} bytes", std::fs::metadata(&path)?.len());
    Ok(())
}
