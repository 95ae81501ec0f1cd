//! The training and evaluation loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{adam_step, clip_global_norm, AdamState};
use crate::corpus::{load_parallel, make_batches, CorpusSource, DropReport, ParallelCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::{corpus_bleu, running_average_last_k};
use crate::model::{ModelConfig, TransformerModel};
use crate::rng::Rng;

/// Header of the metrics CSV.
pub const CSV_HEADER: &str = "epoch,config,train_loss,test_bleu,avg_bleu_last100";

/// Window of the running BLEU average.
pub const BLEU_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
}

impl std::fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalSplit::Test => "test",
            EvalSplit::Train => "train",
        })
    }
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(EvalSplit::Test),
            "train" => Ok(EvalSplit::Train),
            _ => Err(Error::config(format!("unknown eval split {s:?} (test | train)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Label written into every metrics row.
    pub name: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    /// Drives initialization, the split, shuffling and dropout.
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub min_freq: usize,
    pub split_ratio: f64,
    /// Stops after this many optimizer steps, mid-epoch if need be.
    pub max_steps: Option<usize>,
    pub max_decode_len: usize,
    pub eval_split: EvalSplit,
    /// Receives metrics.csv, checkpoint.etck, best.etck, drop_report.txt and manifest.txt.
    pub out_dir: Option<PathBuf>,
    /// Extra lines for the manifest.
    pub manifest: BTreeMap<String, String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            name: "original".into(),
            learning_rate: 1e-5,
            batch_size: 128,
            epochs: 1000,
            eval_every: 1,
            seed: 1,
            clip_norm: 5.0,
            min_freq: 2,
            split_ratio: 0.8,
            max_steps: None,
            max_decode_len: 64,
            eval_split: EvalSplit::Test,
            out_dir: None,
            manifest: BTreeMap::new(),
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig { learning_rate: 3e-4, batch_size: 16, epochs: 40, max_decode_len: 31, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.eval_every == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs, eval_every and batch_size must be at least 1"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("clip_norm must be non-negative"));
        }
        if self.name.is_empty() || self.name.contains([',', '\n']) {
            return Err(Error::config(format!("run name {:?} must be non-empty without commas", self.name)));
        }
        if self.min_freq == 0 {
            return Err(Error::config("min_freq must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps must be positive when set"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = |k: &str, v: String| (format!("train.{k}"), v);
        vec![
            p("name", self.name.clone()),
            p("lr", self.learning_rate.to_string()),
            p("batch_size", self.batch_size.to_string()),
            p("epochs", self.epochs.to_string()),
            p("eval_every", self.eval_every.to_string()),
            p("seed", self.seed.to_string()),
            p("clip_norm", self.clip_norm.to_string()),
            p("min_freq", self.min_freq.to_string()),
            p("split_ratio", self.split_ratio.to_string()),
            p("max_steps", self.max_steps.unwrap_or(0).to_string()),
            p("max_decode_len", self.max_decode_len.to_string()),
            p("eval_split", self.eval_split.to_string()),
        ]
    }
}

/// A loaded, split corpus and the vocabularies built from its training part.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: ParallelCorpus,
    pub test: ParallelCorpus,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub drop: DropReport,
}

impl Dataset {
    /// Loads with the split stream keyed by `train.seed`.
    pub fn load(source: &CorpusSource, max_len: usize, tc: &TrainConfig) -> Result<Self> {
        let mut rng = Rng::keyed(tc.seed, "split");
        let (train, test, drop) = load_parallel(source, max_len, tc.split_ratio, &mut rng)?;
        Self::from_splits(train, test, drop, tc.min_freq)
    }

    pub fn from_splits(train: ParallelCorpus, test: ParallelCorpus, drop: DropReport, min_freq: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Corpus("the training split is empty".into()));
        }
        let src_vocab = Vocabulary::build(train.sources(), min_freq)?;
        let tgt_vocab = Vocabulary::build(train.targets(), min_freq)?;
        Ok(Dataset { train, test, src_vocab, tgt_vocab, drop })
    }

    /// `model` with vocabulary sizes filled in from this dataset.
    pub fn fit(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig { src_vocab: self.src_vocab.len(), tgt_vocab: self.tgt_vocab.len(), ..model.clone() }
    }

    pub fn split(&self, which: EvalSplit) -> &ParallelCorpus {
        match which {
            EvalSplit::Test => &self.test,
            EvalSplit::Train => &self.train,
        }
    }
}

/// One metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub epoch: usize,
    pub config: String,
    pub train_loss: f64,
    /// BLEU x 100.
    pub test_bleu: f64,
    pub avg_bleu_last100: f64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.epoch, self.config, self.train_loss, self.test_bleu, self.avg_bleu_last100
        )
    }

    /// Same columns with shortest round-trip float formatting.
    pub fn exact_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.config, self.train_loss, self.test_bleu, self.avg_bleu_last100)
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("bad metrics row {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(RunRecord {
            epoch: f[0].parse().map_err(|_| bad())?,
            config: f[1].to_string(),
            train_loss: num(f[2])?,
            test_bleu: num(f[3])?,
            avg_bleu_last100: num(f[4])?,
        })
    }
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub model: TransformerModel,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
    /// Shuffling and dropout stream.
    pub rng: Rng,
    /// Raw BLEU (x 100) of every evaluation so far.
    pub bleu_history: Vec<f64>,
    pub records: Vec<RunRecord>,
    pub best_bleu: f64,
}

impl TrainingState {
    pub fn new(model_cfg: &ModelConfig, tc: &TrainConfig) -> Result<Self> {
        let model = TransformerModel::build(model_cfg, tc.seed)?;
        let adam = AdamState::new(model.params.values().map(|t| t.numel()));
        Ok(TrainingState {
            model,
            adam,
            epoch: 0,
            step: 0,
            rng: Rng::keyed(tc.seed, "train"),
            bleu_history: Vec::new(),
            records: Vec::new(),
            best_bleu: f64::NEG_INFINITY,
        })
    }

    fn finished(&self, tc: &TrainConfig) -> bool {
        self.epoch >= tc.epochs || tc.max_steps.is_some_and(|m| self.step >= m)
    }
}

/// Result of [`train_epochs`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub final_avg_bleu: f64,
    pub best_bleu: f64,
    pub steps: usize,
}

/// Greedy-decodes every pair of `corpus` and scores corpus BLEU (x 100).
pub fn evaluate_bleu(
    model: &TransformerModel,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    corpus: &ParallelCorpus,
    max_decode_len: usize,
    chunk: usize,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Config("cannot evaluate BLEU on an empty split; set train.eval_split=train".into()));
    }
    let mut cands = Vec::with_capacity(corpus.len());
    for part in corpus.pairs.chunks(chunk.max(1)) {
        let src: Vec<Vec<usize>> = part.iter().map(|p| src_vocab.encode(&p.src, false)).collect();
        for ids in model.greedy_translate(&src, max_decode_len)? {
            cands.push(tgt_vocab.decode_tokens(&ids));
        }
    }
    let refs: Vec<Vec<String>> = corpus.pairs.iter().map(|p| p.tgt.clone()).collect();
    Ok(100.0 * corpus_bleu(&cands, &refs, 4)?)
}

/// One optimizer step; returns the batch loss.
fn train_step(st: &mut TrainingState, batch: &crate::corpus::Batch, tc: &TrainConfig) -> Result<f64> {
    let mut g = Graph::new();
    let p = st.model.bind(&mut g, true);
    let loss = st.model.loss(&mut g, &p, batch, Some(&mut st.rng))?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Training(format!("non-finite loss {value} in epoch {}", st.epoch + 1)));
    }
    g.backward(loss)?;
    let mut grads: Vec<Vec<f64>> = p
        .values()
        .zip(st.model.params.values())
        .map(|(&v, t)| g.take_grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    if tc.clip_norm > 0.0 {
        clip_global_norm(&mut grads, tc.clip_norm);
    }
    let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut bufs: Vec<&mut [f64]> = st.model.params.values_mut().map(|t| t.data_mut()).collect();
    adam_step(&mut bufs, &grad_refs, &mut st.adam, tc.learning_rate)
        .map_err(|e| Error::Training(format!("epoch {}: {e}", st.epoch + 1)))?;
    st.step += 1;
    Ok(value)
}

/// Output file names inside `TrainConfig::out_dir`.
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.etck";
pub const BEST_FILE: &str = "best.etck";
pub const DROP_FILE: &str = "drop_report.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Trains from `st` until `tc.epochs` or `tc.max_steps`, evaluating every
/// `tc.eval_every` epochs and after the last one.
pub fn train_epochs(st: &mut TrainingState, ds: &Dataset, tc: &TrainConfig) -> Result<RunOutcome> {
    tc.validate()?;
    let eval_corpus = ds.split(tc.eval_split);
    let zero = st.model.cfg.zero_mask;
    if let Some(dir) = &tc.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join(DROP_FILE), &ds.drop.to_text())?;
        write_file(&dir.join(MANIFEST_FILE), &manifest_text(st, ds, tc))?;
    }
    while !st.finished(tc) {
        let batches = make_batches(&ds.train, &ds.src_vocab, &ds.tgt_vocab, tc.batch_size, zero, &mut st.rng)?;
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for b in &batches {
            if tc.max_steps.is_some_and(|m| st.step >= m) {
                break;
            }
            let n = b.target_tokens();
            loss_sum += train_step(st, b, tc)? * n as f64;
            tokens += n;
        }
        st.epoch += 1;
        let last = st.finished(tc);
        if st.epoch % tc.eval_every == 0 || last {
            let loss = if tokens == 0 { 0.0 } else { loss_sum / tokens as f64 };
            let bleu = evaluate_bleu(&st.model, &ds.src_vocab, &ds.tgt_vocab, eval_corpus, tc.max_decode_len, tc.batch_size)?;
            st.bleu_history.push(bleu);
            let rec = RunRecord {
                epoch: st.epoch,
                config: tc.name.clone(),
                train_loss: loss,
                test_bleu: bleu,
                avg_bleu_last100: running_average_last_k(&st.bleu_history, BLEU_WINDOW)?,
            };
            st.records.push(rec);
            let improved = bleu > st.best_bleu;
            if improved {
                st.best_bleu = bleu;
            }
            if let Some(dir) = &tc.out_dir {
                write_file(&dir.join(METRICS_FILE), &records_csv(&st.records))?;
                if improved {
                    super::save_checkpoint(st, ds, tc, &dir.join(BEST_FILE))?;
                }
            }
        }
    }
    if let Some(dir) = &tc.out_dir {
        write_file(&dir.join(METRICS_FILE), &records_csv(&st.records))?;
        super::save_checkpoint(st, ds, tc, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(RunOutcome {
        records: st.records.clone(),
        final_avg_bleu: st.records.last().map_or(0.0, |r| r.avg_bleu_last100),
        best_bleu: st.best_bleu,
        steps: st.step,
    })
}

/// Loads the corpus, builds the model and trains it from scratch.
pub fn train_run(model_cfg: &ModelConfig, tc: &TrainConfig, source: &CorpusSource) -> Result<(TrainingState, Dataset, RunOutcome)> {
    tc.validate()?;
    let ds = Dataset::load(source, model_cfg.max_len, tc)?;
    let (st, out) = train_on(model_cfg, tc, &ds)?;
    Ok((st, ds, out))
}

/// Trains from scratch on an already loaded dataset.
pub fn train_on(model_cfg: &ModelConfig, tc: &TrainConfig, ds: &Dataset) -> Result<(TrainingState, RunOutcome)> {
    let mut st = TrainingState::new(&ds.fit(model_cfg), tc)?;
    let out = train_epochs(&mut st, ds, tc)?;
    Ok((st, out))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest_text(st: &TrainingState, ds: &Dataset, tc: &TrainConfig) -> String {
    let mut m: BTreeMap<String, String> = crate::config::model_to_pairs(&st.model.cfg).into_iter().collect();
    m.extend(tc.to_pairs());
    m.insert("run.corpus".into(), ds.train.origin.clone());
    m.insert("run.train_pairs".into(), ds.train.len().to_string());
    m.insert("run.test_pairs".into(), ds.test.len().to_string());
    m.insert("run.parameters".into(), st.model.count_parameters().to_string());
    m.extend(tc.manifest.iter().map(|(k, v)| (k.clone(), v.clone())));
    m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy_parallel;

    fn tiny_dataset(n: usize) -> Dataset {
        let test = ParallelCorpus { pairs: vec![], origin: "toy".into() };
        Dataset::from_splits(toy_parallel(n, 5), test, DropReport::default(), 1).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig { d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, dropout: 0.1, max_len: 16, ..ModelConfig::original() }
    }

    fn tiny_train() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 4, learning_rate: 1e-3, eval_split: EvalSplit::Train, ..TrainConfig::default() }
    }

    #[test]
    fn record_row_format() {
        let r = RunRecord { epoch: 3, config: "k2".into(), train_loss: 1.0 / 3.0, test_bleu: 12.5, avg_bleu_last100: 0.0 };
        assert_eq!(r.csv_row(), "3,k2,0.333333,12.500000,0.000000");
        assert_eq!(RunRecord::parse_row(&r.csv_row()).unwrap().epoch, 3);
        assert!(records_csv(&[r]).starts_with("epoch,config,train_loss,test_bleu,avg_bleu_last100\n"));
    }

    #[test]
    fn runs_are_deterministic_and_epochs_increase() {
        let ds = tiny_dataset(12);
        let (_, a) = train_on(&tiny_model(), &tiny_train(), &ds).unwrap();
        let (_, b) = train_on(&tiny_model(), &tiny_train(), &ds).unwrap();
        assert_eq!(records_csv(&a.records), records_csv(&b.records));
        assert_eq!(a.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(a.steps, 9);
    }

    #[test]
    fn split_resume_matches_uninterrupted() {
        let ds = tiny_dataset(10);
        let full = tiny_train();
        let (whole, _) = train_on(&tiny_model(), &full, &ds).unwrap();
        let first = TrainConfig { epochs: 1, ..full.clone() };
        let (mut st, _) = train_on(&tiny_model(), &first, &ds).unwrap();
        train_epochs(&mut st, &ds, &full).unwrap();
        assert_eq!(st, whole);
    }

    #[test]
    fn max_steps_stops_mid_epoch() {
        let ds = tiny_dataset(12);
        let tc = TrainConfig { max_steps: Some(4), ..tiny_train() };
        let (st, out) = train_on(&tiny_model(), &tc, &ds).unwrap();
        assert_eq!((st.step, st.epoch, out.records.len()), (4, 2, 2));
    }

    #[test]
    fn empty_eval_split_is_config_error() {
        let ds = tiny_dataset(6);
        let tc = TrainConfig { eval_split: EvalSplit::Test, ..tiny_train() };
        assert!(matches!(train_on(&tiny_model(), &tc, &ds), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.learning_rate, d.batch_size, d.epochs), (1e-5, 128, 1000));
    }
}
