//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "ETCK" | version | record count
//! per record: name length | UTF-8 name | rank | dims... | f64 LE values
//! config length | UTF-8 key=value lines
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::run::{Dataset, RunRecord, TrainConfig, TrainingState};
use super::AdamState;
use crate::config::{model_from_pairs, model_to_pairs};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{parameter_inventory, PeMode, TransformerModel};
use crate::posenc::{PeMatrix, PeSource};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ETCK";
pub const VERSION: u32 = 1;

/// Named tensors plus a flat string map, as stored on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub tensors: BTreeMap<String, Tensor>,
    pub config: BTreeMap<String, String>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the u32 field")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Container {
    /// Canonical bytes: records and config keys in sorted order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut buf, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_u32(&mut buf, name.len())?;
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, t.rank())?;
            for &d in t.shape() {
                put_u32(&mut buf, d)?;
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut text = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("config entry {k:?} cannot be stored")));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        put_u32(&mut buf, text.len())?;
        buf.extend_from_slice(text.as_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
        }
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()));
            let numel = numel.ok_or_else(|| Error::Format(format!("record {name:?} is truncated")))?;
            let data = r.take(numel * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("record {name:?}: {e}")))?;
            tensors.insert(name, t);
        }
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after the config block", r.remaining())));
        }
        let mut config = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        Ok(Container { tensors, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks config key {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Format(format!("checkpoint key {key:?} has bad value {v:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// A checkpoint read back into training state.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub state: TrainingState,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// Every stored config entry, including the `train.*` echo.
    pub config: BTreeMap<String, String>,
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Parameters as `param.<name>`, Adam moments as `adam.m.<name>` and
/// `adam.v.<name>`, the positional table as `pe`.
pub fn checkpoint_container(st: &TrainingState, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary, tc: &TrainConfig) -> Result<Container> {
    let mut c = Container::default();
    for (i, (name, t)) in st.model.params.iter().enumerate() {
        c.tensors.insert(format!("param.{name}"), t.clone());
        c.tensors.insert(format!("adam.m.{name}"), Tensor::from_vec(t.shape(), st.adam.m[i].clone())?);
        c.tensors.insert(format!("adam.v.{name}"), Tensor::from_vec(t.shape(), st.adam.v[i].clone())?);
    }
    let pe = &st.model.pe;
    c.tensors.insert("pe".into(), Tensor::from_vec(&[pe.rows(), pe.cols()], pe.values().to_vec())?);
    let cfg = &mut c.config;
    cfg.extend(model_to_pairs(&st.model.cfg));
    cfg.extend(tc.to_pairs());
    cfg.insert("vocab.src".into(), src_vocab.tokens().join(" "));
    cfg.insert("vocab.tgt".into(), tgt_vocab.tokens().join(" "));
    cfg.insert("vocab.min_freq".into(), src_vocab.min_freq().to_string());
    cfg.insert("adam.beta1".into(), st.adam.beta1.to_string());
    cfg.insert("adam.beta2".into(), st.adam.beta2.to_string());
    cfg.insert("adam.eps".into(), st.adam.eps.to_string());
    cfg.insert("adam.step".into(), st.adam.step.to_string());
    cfg.insert("state.epoch".into(), st.epoch.to_string());
    cfg.insert("state.step".into(), st.step.to_string());
    cfg.insert("state.rng".into(), st.rng.state().to_string());
    cfg.insert("state.best_bleu".into(), st.best_bleu.to_string());
    cfg.insert("state.bleu_history".into(), join_f64(&st.bleu_history));
    for (i, r) in st.records.iter().enumerate() {
        cfg.insert(format!("record.{i:06}"), r.exact_row());
    }
    Ok(c)
}

pub fn save_checkpoint(st: &TrainingState, ds: &Dataset, tc: &TrainConfig, path: &Path) -> Result<()> {
    checkpoint_container(st, &ds.src_vocab, &ds.tgt_vocab, tc)?.save(path)
}

fn vocab(c: &Container, key: &str, min_freq: usize) -> Result<Vocabulary> {
    let tokens: Vec<String> = c.get(key)?.split(' ').map(str::to_string).collect();
    let v = Vocabulary::from_tokens(tokens, min_freq);
    if v.token(crate::corpus::UNK) != Some("<unk>") {
        return Err(Error::Format(format!("{key} lacks the reserved tokens")));
    }
    Ok(v)
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    restore(Container::load(path)?)
}

pub fn restore(c: Container) -> Result<LoadedCheckpoint> {
    let cfg = model_from_pairs(&c.config).map_err(|e| Error::Format(format!("checkpoint model config: {e}")))?;
    let mut params = BTreeMap::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (name, shape) in parameter_inventory(&cfg) {
        let p = c.tensor(&format!("param.{name}"))?;
        if p.shape() != shape.as_slice() {
            return Err(Error::Format(format!("param.{name} has shape {:?}, expected {shape:?}", p.shape())));
        }
        for (dst, prefix) in [(&mut m, "adam.m"), (&mut v, "adam.v")] {
            let t = c.tensor(&format!("{prefix}.{name}"))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!("{prefix}.{name} has the wrong shape")));
            }
            dst.push(t.data().to_vec());
        }
        params.insert(name, p.clone());
    }
    let expected = 3 * params.len() + 1;
    if c.tensors.len() != expected {
        return Err(Error::Format(format!("{} records, the model needs {expected}", c.tensors.len())));
    }
    let pe_t = c.tensor("pe")?;
    let source = match cfg.pe_mode {
        PeMode::Learned { .. } => PeSource::Learned,
        PeMode::Sinusoidal => PeSource::Sinusoidal,
    };
    if pe_t.shape() != [cfg.max_len, cfg.d_model] {
        return Err(Error::Format(format!("pe has shape {:?}", pe_t.shape())));
    }
    let pe = PeMatrix::new(cfg.max_len, cfg.d_model, pe_t.data().to_vec(), source)?;
    let adam = AdamState {
        beta1: c.parse("adam.beta1")?,
        beta2: c.parse("adam.beta2")?,
        eps: c.parse("adam.eps")?,
        step: c.parse("adam.step")?,
        m,
        v,
    };
    let history = c.get("state.bleu_history")?;
    let bleu_history = if history.is_empty() {
        Vec::new()
    } else {
        history
            .split(' ')
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad BLEU history entry {s:?}"))))
            .collect::<Result<_>>()?
    };
    let records = c
        .config
        .range("record.".to_string().."record/".to_string())
        .map(|(_, row)| RunRecord::parse_row(row))
        .collect::<Result<Vec<_>>>()?;
    let min_freq = c.parse("vocab.min_freq")?;
    let src_vocab = vocab(&c, "vocab.src", min_freq)?;
    let tgt_vocab = vocab(&c, "vocab.tgt", min_freq)?;
    if src_vocab.len() != cfg.src_vocab || tgt_vocab.len() != cfg.tgt_vocab {
        return Err(Error::Format("stored vocabularies disagree with the model config".into()));
    }
    let state = TrainingState {
        model: TransformerModel { cfg, params, pe },
        adam,
        epoch: c.parse("state.epoch")?,
        step: c.parse("state.step")?,
        rng: Rng::from_state(c.parse("state.rng")?),
        bleu_history,
        records,
        best_bleu: c.parse("state.best_bleu")?,
    };
    Ok(LoadedCheckpoint { state, src_vocab, tgt_vocab, config: c.config })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::default();
        c.tensors.insert("b".into(), Tensor::from_vec(&[2], vec![1.5, -0.1]).unwrap());
        c.tensors.insert("a".into(), Tensor::from_vec(&[1, 3], vec![f64::MIN_POSITIVE, 0.1 + 0.2, -0.0]).unwrap());
        c.config.insert("x".into(), "1e-5".into());
        c.config.insert("vocab".into(), "<pad> a=b".into());
        c
    }

    #[test]
    fn round_trip_is_exact_and_canonical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.tensors["a"].data()[1].to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.get("vocab").unwrap(), "<pad> a=b");
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"ETCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let bytes = sample().to_bytes().unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(Container::from_bytes(&b), Err(Error::Format(_))));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(matches!(Container::from_bytes(&b), Err(Error::UnsupportedVersion { found: 2, expected: 1 })));
        for cut in [3, 10, 20, bytes.len() - 1] {
            assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    use crate::corpus::{toy_parallel, DropReport, ParallelCorpus};
    use crate::model::ModelConfig;
    use crate::trainer::{train_epochs, train_on, EvalSplit};

    fn setup() -> (Dataset, ModelConfig, TrainConfig) {
        let train = toy_parallel(8, 3);
        let test = ParallelCorpus { pairs: vec![], origin: "toy".into() };
        let ds = Dataset::from_splits(train, test, DropReport::default(), 1).unwrap();
        let m = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_len: 16, ..ModelConfig::original() };
        let tc = TrainConfig { epochs: 2, batch_size: 4, learning_rate: 1e-3, eval_split: EvalSplit::Train, ..TrainConfig::default() };
        (ds, m, tc)
    }

    #[test]
    fn training_state_round_trip_is_byte_stable() {
        let (ds, m, tc) = setup();
        let (st, _) = train_on(&m, &tc, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.etck");
        save_checkpoint(&st, &ds, &tc, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.state, st);
        assert_eq!(loaded.src_vocab, ds.src_vocab);
        let again = checkpoint_container(&loaded.state, &loaded.src_vocab, &loaded.tgt_vocab, &tc).unwrap();
        assert_eq!(again.to_bytes().unwrap(), std::fs::read(&a).unwrap());
    }

    #[test]
    fn record_names_follow_the_inventory() {
        let (ds, m, tc) = setup();
        let (st, _) = train_on(&m, &TrainConfig { epochs: 1, ..tc.clone() }, &ds).unwrap();
        let c = checkpoint_container(&st, &ds.src_vocab, &ds.tgt_vocab, &tc).unwrap();
        let inv = parameter_inventory(&st.model.cfg);
        let params: Vec<&str> = c.tensors.keys().filter_map(|k| k.strip_prefix("param.")).collect();
        assert_eq!(params, inv.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>());
        assert_eq!(c.tensors.len(), 3 * inv.len() + 1);
    }

    #[test]
    fn resume_from_file_matches_uninterrupted() {
        let (ds, m, tc) = setup();
        let (whole, _) = train_on(&m, &tc, &ds).unwrap();
        let (half, _) = train_on(&m, &TrainConfig { epochs: 1, ..tc.clone() }, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.etck");
        save_checkpoint(&half, &ds, &tc, &p).unwrap();
        let mut st = load_checkpoint(&p).unwrap().state;
        train_epochs(&mut st, &ds, &tc).unwrap();
        assert_eq!(st, whole);
    }

    #[test]
    fn missing_tensor_is_format_error() {
        let (ds, m, tc) = setup();
        let (st, _) = train_on(&m, &TrainConfig { epochs: 1, ..tc.clone() }, &ds).unwrap();
        let mut c = checkpoint_container(&st, &ds.src_vocab, &ds.tgt_vocab, &tc).unwrap();
        c.tensors.remove("param.out_proj");
        assert!(matches!(restore(c), Err(Error::Format(_))));
    }
}
