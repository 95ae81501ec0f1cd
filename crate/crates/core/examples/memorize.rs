//! Trains the desk model on 32 sentence pairs until it reproduces them, for
//! the original preset and the preset with all four mechanisms on.
//!
//! cargo run --release --example memorize

use etlab::corpus::{toy_parallel, DropReport, ParallelCorpus};
use etlab::model::{ModelConfig, PeMode};
use etlab::trainer::{train_epochs, Dataset, EvalSplit, TrainConfig, TrainingState};

fn main() -> etlab::Result<()> {
    let none = ParallelCorpus { pairs: vec![], origin: String::new() };
    let ds = Dataset::from_splits(toy_parallel(32, 1), none, DropReport::default(), 1)?;
    let base = ModelConfig { dropout: 0.0, ..ModelConfig::desk() };
    let enhanced = ModelConfig { pe_mode: PeMode::Sinusoidal, ..base.clone().with_all_enhancements("") };
    for (name, cfg) in [("original", base), ("enhanced", enhanced)] {
        let mut tc = TrainConfig { name: name.into(), eval_every: 25, epochs: 25, eval_split: EvalSplit::Train, ..TrainConfig::desk() };
        let mut st = TrainingState::new(&ds.fit(&cfg), &tc)?;
        while st.step < 2000 {
            train_epochs(&mut st, &ds, &tc)?;
            let r = st.records.last().unwrap();
            println!("{name:>9} step {:>4}  loss {:.4}  train BLEU {:.2}", st.step, r.train_loss, r.test_bleu);
            if r.test_bleu >= 90.0 {
                break;
            }
            tc.epochs += 25;
        }
        let src = ds.src_vocab.encode(&ds.train.pairs[0].src, false);
        let out = st.model.greedy_translate(&[src], 30)?;
        println!("{name:>9} {} -> {}", ds.train.pairs[0].src.join(" "), ds.tgt_vocab.decode(&out[0]));
    }
    Ok(())
}
