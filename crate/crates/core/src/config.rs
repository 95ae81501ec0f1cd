//! Flat `key=value` settings shared by the command line and checkpoints.
//!
//! Files hold one `section.key=value` per line; `#` starts a comment and
//! blank lines are skipped. Every key in [`SCHEMA`] has a default, and an
//! unknown key is an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PeMode};
use crate::nn::NormMode;
use crate::posenc::{PeEnvConfig, SacConfig, Similarity};
use crate::trainer::{EvalSplit, TrainConfig};

/// Value syntax accepted for a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Text,
    /// An integer or `auto`.
    IntOrAuto,
    /// A float or `auto`.
    FloatOrAuto,
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, kind: Kind, doc: &'static str) -> KeySpec {
    KeySpec { key, default, kind, doc }
}

use Kind::*;

/// Every recognized key. Defaults are the desk-scale setup.
pub const SCHEMA: &[KeySpec] = &[
    k("model.d_model", "64", Int, "model width"),
    k("model.n_layers", "2", Int, "encoder and decoder layers"),
    k("model.n_heads", "4", Int, "attention heads; must divide d_model"),
    k("model.d_ff", "256", Int, "feed-forward inner width"),
    k("model.dropout", "0.1", Float, "dropout rate in [0, 1)"),
    k("model.max_len", "32", Int, "longest framed sequence, BOS and EOS included"),
    k("model.norm_mode", "original", Choice(&["original", "full", "full-post-sum"]), "how embeddings and positions are combined"),
    k("model.residual_k", "1", Float, "skip weight k in LayerNorm(F(x) + k x)"),
    k("model.pe_mode", "sinusoidal", Choice(&["sinusoidal", "learned"]), "positional encoding source"),
    k("model.pe_path", "", Text, "learned matrix CSV, read when pe_mode=learned"),
    k("model.pe_factor_pos", "auto", IntOrAuto, "row replication factor; auto = ceil(max_len / 16)"),
    k("model.pe_factor_dim", "auto", IntOrAuto, "column replication factor; auto = d_model / 8"),
    k("model.pe_window", "3", Int, "odd smoothing window after upsampling"),
    k("model.zero_mask", "false", Bool, "mask each token's attention to itself"),
    k("model.zero_mask_post_softmax", "false", Bool, "zero the diagonal after softmax without renormalizing"),
    k("model.ln_eps", "1e-6", Float, "layer norm epsilon"),
    k("train.name", "desk", Text, "run label used in metrics rows and the output directory"),
    k("train.lr", "3e-4", Float, "Adam learning rate"),
    k("train.batch_size", "16", Int, "sentence pairs per step"),
    k("train.epochs", "40", Int, "passes over the training split"),
    k("train.eval_every", "1", Int, "epochs between BLEU evaluations"),
    k("train.seed", "1", Int, "seed for initialization, split, shuffling and dropout"),
    k("train.clip_norm", "5", Float, "global gradient norm cap; 0 disables"),
    k("train.min_freq", "1", Int, "minimum token count to enter a vocabulary"),
    k("train.split_ratio", "0.8", Float, "training fraction of the corpus"),
    k("train.max_steps", "0", Int, "optimizer step cap; 0 means none"),
    k("train.max_decode_len", "31", Int, "greedy decoding length cap"),
    k("train.eval_split", "test", Choice(&["test", "train"]), "split scored by BLEU"),
    k("pe.env.n_positions", "16", Int, "rows of the learned matrix"),
    k("pe.env.n_dims", "8", Int, "columns of the learned matrix"),
    k("pe.env.similarity", "cosine", Choice(&["cosine", "dot"]), "row similarity in the position reward"),
    k("pe.sac.policy_hidden", "64", Int, "policy hidden width"),
    k("pe.sac.critic_hidden", "128", Int, "critic hidden width"),
    k("pe.sac.policy_lr", "3e-3", Float, "policy learning rate"),
    k("pe.sac.critic_lr", "1e-3", Float, "critic learning rate"),
    k("pe.sac.alpha_lr", "3e-3", Float, "temperature learning rate"),
    k("pe.sac.init_alpha", "0.1", Float, "initial temperature"),
    k("pe.sac.target_entropy", "auto", FloatOrAuto, "entropy target; auto = minus the action dimension"),
    k("pe.sac.replay_capacity", "20000", Int, "replay buffer size"),
    k("pe.sac.batch_size", "64", Int, "replay minibatch"),
    k("pe.sac.steps", "3000", Int, "environment steps"),
    k("pe.sac.warmup", "200", Int, "uniform random steps before learning"),
    k("pe.sac.seed", "7", Int, "SAC seed"),
    k("pe.ascent.steps", "2000", Int, "direct gradient ascent steps"),
    k("pe.ascent.lr", "0.05", Float, "direct gradient ascent step size"),
    k("ablation.workers", "4", Int, "concurrent ablation runs"),
    k("gradcheck.seeds", "2", Int, "random draws per gradient case"),
    k("output.dir", "runs", Text, "parent of per-run output directories"),
];

pub fn spec(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

fn check_value(s: &KeySpec, value: &str) -> Result<()> {
    let ok = match s.kind {
        Int => value.parse::<u64>().is_ok(),
        Float => value.parse::<f64>().is_ok_and(f64::is_finite),
        Bool => matches!(value, "true" | "false"),
        Text => !value.contains('\n'),
        IntOrAuto => value == "auto" || value.parse::<u64>().is_ok(),
        FloatOrAuto => value == "auto" || value.parse::<f64>().is_ok_and(f64::is_finite),
        Choice(opts) => opts.contains(&value),
    };
    if ok {
        Ok(())
    } else {
        let want = match s.kind {
            Int => "a non-negative integer".to_string(),
            Float => "a finite number".to_string(),
            Bool => "true or false".to_string(),
            Text => "a single line".to_string(),
            IntOrAuto => "an integer or auto".to_string(),
            FloatOrAuto => "a number or auto".to_string(),
            Choice(opts) => opts.join(" | "),
        };
        Err(Error::Config(format!("{}={value:?}: expected {want}", s.key)))
    }
}

/// Text listing every key with its default, one per line: `key=default  doc`.
pub fn help_text() -> String {
    let mut s = String::new();
    for spec in SCHEMA {
        let _ = writeln!(s, "  {}={}  {}", spec.key, spec.default, spec.doc);
    }
    s
}

/// Every schema key bound to a validated value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { values: SCHEMA.iter().map(|s| (s.key.to_string(), s.default.to_string())).collect() }
    }
}

impl Settings {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown setting {key:?}")))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = spec(key).ok_or_else(|| Error::Config(format!("unknown setting {key:?}")))?;
        check_value(s, value)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a settings file body; `origin` names it in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Sorted `key=value` lines; reading them back gives equal settings.
    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Config(format!("{key}={v:?} is out of range")))
    }

    /// Model configuration with vocabulary sizes left at 0.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut pairs: BTreeMap<String, String> =
            self.iter().filter(|(k, _)| k.starts_with("model.")).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        pairs.insert("model.src_vocab".into(), "0".into());
        pairs.insert("model.tgt_vocab".into(), "0".into());
        model_from_pairs(&pairs)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let max_steps: usize = self.num("train.max_steps")?;
        let tc = TrainConfig {
            name: self.get("train.name")?.to_string(),
            learning_rate: self.num("train.lr")?,
            batch_size: self.num("train.batch_size")?,
            epochs: self.num("train.epochs")?,
            eval_every: self.num("train.eval_every")?,
            seed: self.num("train.seed")?,
            clip_norm: self.num("train.clip_norm")?,
            min_freq: self.num("train.min_freq")?,
            split_ratio: self.num("train.split_ratio")?,
            max_steps: (max_steps > 0).then_some(max_steps),
            max_decode_len: self.num("train.max_decode_len")?,
            eval_split: self.get("train.eval_split")?.parse::<EvalSplit>()?,
            out_dir: None,
            manifest: BTreeMap::new(),
        };
        tc.validate()?;
        Ok(tc)
    }

    pub fn pe_env(&self) -> Result<PeEnvConfig> {
        let env = PeEnvConfig {
            n_positions: self.num("pe.env.n_positions")?,
            n_dims: self.num("pe.env.n_dims")?,
            similarity: self.get("pe.env.similarity")?.parse::<Similarity>()?,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn sac(&self) -> Result<SacConfig> {
        let te = self.get("pe.sac.target_entropy")?;
        let sac = SacConfig {
            policy_hidden: self.num("pe.sac.policy_hidden")?,
            critic_hidden: self.num("pe.sac.critic_hidden")?,
            policy_lr: self.num("pe.sac.policy_lr")?,
            critic_lr: self.num("pe.sac.critic_lr")?,
            alpha_lr: self.num("pe.sac.alpha_lr")?,
            init_alpha: self.num("pe.sac.init_alpha")?,
            target_entropy: if te == "auto" { None } else { Some(self.num("pe.sac.target_entropy")?) },
            replay_capacity: self.num("pe.sac.replay_capacity")?,
            batch_size: self.num("pe.sac.batch_size")?,
            steps: self.num("pe.sac.steps")?,
            warmup: self.num("pe.sac.warmup")?,
        };
        sac.validate()?;
        Ok(sac)
    }

    pub fn sac_seed(&self) -> Result<u64> {
        self.num("pe.sac.seed")
    }

    pub fn ascent(&self) -> Result<(usize, f64)> {
        Ok((self.num("pe.ascent.steps")?, self.num("pe.ascent.lr")?))
    }

    pub fn workers(&self) -> Result<usize> {
        Ok(self.num::<usize>("ablation.workers")?.max(1))
    }

    pub fn gradcheck_seeds(&self) -> Result<usize> {
        Ok(self.num::<usize>("gradcheck.seeds")?.max(1))
    }

    pub fn output_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get("output.dir")?))
    }
}

/// `model.*` entries that fully describe `cfg`, vocabulary sizes included.
pub fn model_to_pairs(cfg: &ModelConfig) -> Vec<(String, String)> {
    let p = |k: &str, v: String| (format!("model.{k}"), v);
    let mut out = vec![
        p("d_model", cfg.d_model.to_string()),
        p("n_layers", cfg.n_layers.to_string()),
        p("n_heads", cfg.n_heads.to_string()),
        p("d_ff", cfg.d_ff.to_string()),
        p("dropout", cfg.dropout.to_string()),
        p("max_len", cfg.max_len.to_string()),
        p("src_vocab", cfg.src_vocab.to_string()),
        p("tgt_vocab", cfg.tgt_vocab.to_string()),
        p("norm_mode", cfg.norm_mode.to_string()),
        p("residual_k", cfg.residual_k.to_string()),
        p("zero_mask", cfg.zero_mask.to_string()),
        p("zero_mask_post_softmax", cfg.post_softmax_zero.to_string()),
        p("ln_eps", cfg.ln_eps.to_string()),
    ];
    match &cfg.pe_mode {
        PeMode::Sinusoidal => out.push(p("pe_mode", "sinusoidal".into())),
        PeMode::Learned { path, factor_pos, factor_dim, window } => {
            out.push(p("pe_mode", "learned".into()));
            out.push(p("pe_path", path.display().to_string()));
            out.push(p("pe_factor_pos", factor_pos.to_string()));
            out.push(p("pe_factor_dim", factor_dim.to_string()));
            out.push(p("pe_window", window.to_string()));
        }
    }
    out
}

/// Inverse of [`model_to_pairs`]; `auto` factors resolve from the model shape.
pub fn model_from_pairs(pairs: &BTreeMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| {
        pairs
            .get(&format!("model.{k}"))
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing model.{k}")))
    };
    fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Config(format!("model.{k}={v:?} is not valid")))
    }
    let num = |k: &str| get(k).and_then(|v| parse::<usize>(k, v));
    let float = |k: &str| get(k).and_then(|v| parse::<f64>(k, v));
    let flag = |k: &str| get(k).and_then(|v| parse::<bool>(k, v));
    let d_model = num("d_model")?;
    let max_len = num("max_len")?;
    let pe_mode = match get("pe_mode")? {
        "sinusoidal" => PeMode::Sinusoidal,
        "learned" => {
            let path = get("pe_path")?;
            if path.is_empty() {
                return Err(Error::Config("model.pe_mode=learned needs model.pe_path".into()));
            }
            let auto = |k: &str, fallback: usize| match get(k)? {
                "auto" => Ok(fallback),
                v => parse::<usize>(k, v),
            };
            PeMode::Learned {
                path: PathBuf::from(path),
                factor_pos: auto("pe_factor_pos", max_len.div_ceil(16).max(1))?,
                factor_dim: auto("pe_factor_dim", (d_model / 8).max(1))?,
                window: num("pe_window")?,
            }
        }
        other => return Err(Error::Config(format!("unknown model.pe_mode {other:?}"))),
    };
    Ok(ModelConfig {
        d_model,
        n_layers: num("n_layers")?,
        n_heads: num("n_heads")?,
        d_ff: num("d_ff")?,
        dropout: float("dropout")?,
        max_len,
        src_vocab: num("src_vocab")?,
        tgt_vocab: num("tgt_vocab")?,
        norm_mode: get("norm_mode")?.parse::<NormMode>()?,
        residual_k: float("residual_k")?,
        pe_mode,
        zero_mask: flag("zero_mask")?,
        post_softmax_zero: flag("zero_mask_post_softmax")?,
        ln_eps: float("ln_eps")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_into_every_config() {
        let s = Settings::default();
        let m = s.model_config().unwrap();
        assert_eq!((m.d_model, m.n_layers, m.n_heads, m.d_ff, m.max_len), (64, 2, 4, 256, 32));
        let t = s.train_config().unwrap();
        assert_eq!((t.learning_rate, t.batch_size), (3e-4, 16));
        assert_eq!(s.sac().unwrap(), SacConfig::default());
        assert_eq!(s.pe_env().unwrap(), PeEnvConfig::default());
    }

    #[test]
    fn every_default_satisfies_its_kind() {
        for spec in SCHEMA {
            check_value(spec, spec.default).unwrap();
        }
        let mut keys: Vec<_> = SCHEMA.iter().map(|s| s.key).collect();
        keys.dedup();
        assert_eq!(keys.len(), SCHEMA.len());
    }

    #[test]
    fn file_text_comments_and_errors() {
        let mut s = Settings::default();
        s.apply_text("# desk\nmodel.d_model = 32  # narrower\n\ntrain.lr=1e-3\n", "t.cfg").unwrap();
        assert_eq!(s.get("model.d_model").unwrap(), "32");
        assert_eq!(s.train_config().unwrap().learning_rate, 1e-3);
        let e = s.apply_text("model.d_modle=3\n", "t.cfg").unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("t.cfg:1") && m.contains("d_modle")));
        assert!(s.apply_text("model.zero_mask=yes", "t").is_err());
        assert!(s.apply_text("model.norm_mode=weird", "t").is_err());
        assert!(s.apply_text("no equals sign", "t").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut s = Settings::default();
        s.set("model.residual_k", "2.5").unwrap();
        s.set("train.eval_split", "train").unwrap();
        let mut back = Settings::default();
        back.apply_text(&s.to_text(), "echo").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn model_pairs_round_trip() {
        let mut cfg = ModelConfig::desk().with_all_enhancements("pe.csv");
        cfg.src_vocab = 40;
        cfg.tgt_vocab = 30;
        cfg.dropout = 0.1 + 0.2;
        let pairs: BTreeMap<String, String> = model_to_pairs(&cfg).into_iter().collect();
        assert_eq!(model_from_pairs(&pairs).unwrap(), cfg);
        let mut sin = ModelConfig::original();
        sin.src_vocab = 9;
        let pairs: BTreeMap<String, String> = model_to_pairs(&sin).into_iter().collect();
        assert_eq!(model_from_pairs(&pairs).unwrap(), sin);
    }

    #[test]
    fn auto_factors_follow_the_shape() {
        let mut s = Settings::default();
        s.set("model.pe_mode", "learned").unwrap();
        assert!(s.model_config().is_err());
        s.set("model.pe_path", "x.csv").unwrap();
        let m = s.model_config().unwrap();
        assert_eq!(m.pe_mode, ModelConfig::desk().with_all_enhancements("x.csv").pe_mode);
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let h = help_text();
        for spec in SCHEMA {
            assert!(h.contains(&format!("{}={}", spec.key, spec.default)), "{}", spec.key);
        }
    }
}
