//! Command-line front end.
//!
//! ```text
//! etlab <command> [--config FILE] [--<setting> VALUE]... [command flags]
//! ```
//!
//! A settings file is applied first, then any `--section.key value` flags.
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 failure while computing.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::{help_text, Settings};
use crate::corpus::{filter_pairs, read_pairs, tokenize, Batch, CorpusSource, ParallelCorpus, BOS};
use crate::error::{Error, Result};
use crate::gradcheck::{full_suite, TOLERANCE};
use crate::model::PeMode;
use crate::plot::{heatmap_svg, Ramp};
use crate::posenc::{
    direct_ascent_pe, pe_export_heatmap, pe_reward, sac_learn_pe, sinusoidal_pe, write_matrix_csv, PeMatrix,
};
use crate::rng::Rng;
use crate::trainer::{
    evaluate_bleu, load_checkpoint, run_ablation, train_run, Dataset, LoadedCheckpoint, ABLATION_CSV, METRICS_FILE,
};

pub const COMMANDS: [(&str, &str); 7] = [
    ("train", "train one model: --corpus required"),
    ("evaluate", "corpus BLEU of a checkpoint: --checkpoint and --corpus required"),
    ("translate", "greedy translation of --input (default stdin) with --checkpoint"),
    ("pe-learn", "learn a positional matrix with soft actor-critic; --out names the CSV"),
    ("ablate", "train the nine ablation runs: --corpus required"),
    ("gradcheck", "run the gradient suite; fails if any case exceeds the tolerance"),
    ("heatmap", "attention and positional heatmaps for --sentence with --checkpoint"),
];

/// Full `--help` text.
pub fn usage() -> String {
    let mut s = String::from("usage: etlab <command> [--config FILE] [--<setting> VALUE]... [flags]\n\ncommands:\n");
    for (c, doc) in COMMANDS {
        s.push_str(&format!("  {c:<10} {doc}\n"));
    }
    s.push_str(
        "\nflags:\n  --config FILE            settings file of key=value lines\n  \
         --corpus tsv FILE        tab-separated source/target lines\n  \
         --corpus pair SRC TGT    line-aligned source and target files\n  \
         --checkpoint FILE        model checkpoint\n  \
         --input FILE             translate: input lines (default stdin)\n  \
         --sentence TEXT          heatmap: source sentence\n  \
         --out PATH               output directory (pe-learn: matrix CSV path)\n  \
         --help                   this text\n\nsettings (key=default):\n",
    );
    s.push_str(&help_text());
    s
}

/// A rejected command line; exit code 1.
#[derive(Debug, PartialEq, Eq)]
pub struct UsageError(pub String);

#[derive(Debug, Default)]
pub struct Invocation {
    pub command: String,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    pub corpus: Option<CorpusSource>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub sentence: Option<String>,
    pub out: Option<PathBuf>,
    pub help: bool,
}

impl Invocation {
    /// Settings after the file and then the flag overrides.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(p) = &self.config {
            s.apply_file(p)?;
        }
        for (k, v) in &self.overrides {
            s.set(k, v)?;
        }
        Ok(s)
    }
}

pub fn parse_args(args: &[String]) -> std::result::Result<Invocation, UsageError> {
    let mut inv = Invocation::default();
    let mut it = args.iter();
    let value = |it: &mut std::slice::Iter<'_, String>, flag: &str| {
        it.next().cloned().ok_or_else(|| UsageError(format!("{flag} needs a value")))
    };
    while let Some(a) = it.next() {
        match a.as_str() {
            "--help" | "-h" => inv.help = true,
            "--config" => inv.config = Some(value(&mut it, a)?.into()),
            "--checkpoint" => inv.checkpoint = Some(value(&mut it, a)?.into()),
            "--input" => inv.input = Some(value(&mut it, a)?.into()),
            "--sentence" => inv.sentence = Some(value(&mut it, a)?),
            "--out" => inv.out = Some(value(&mut it, a)?.into()),
            "--corpus" => {
                inv.corpus = Some(match value(&mut it, a)?.as_str() {
                    "tsv" => CorpusSource::Tsv(value(&mut it, "--corpus tsv")?.into()),
                    "pair" => {
                        let src = value(&mut it, "--corpus pair")?;
                        CorpusSource::Pair(src.into(), value(&mut it, "--corpus pair")?.into())
                    }
                    other => return Err(UsageError(format!("--corpus kind must be tsv or pair, got {other:?}"))),
                })
            }
            flag if flag.starts_with("--") && flag.contains('.') => {
                let v = value(&mut it, flag)?;
                inv.overrides.push((flag[2..].to_string(), v));
            }
            flag if flag.starts_with('-') => return Err(UsageError(format!("unknown flag {flag}"))),
            cmd if inv.command.is_empty() => {
                if !COMMANDS.iter().any(|(c, _)| *c == cmd) {
                    return Err(UsageError(format!("unknown command {cmd:?}")));
                }
                inv.command = cmd.to_string();
            }
            extra => return Err(UsageError(format!("unexpected argument {extra:?}"))),
        }
    }
    if inv.command.is_empty() && !inv.help {
        return Err(UsageError("missing command".into()));
    }
    Ok(inv)
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Runs one command line and returns the process exit code.
pub fn run(args: &[String], stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let inv = match parse_args(args) {
        Ok(inv) => inv,
        Err(UsageError(m)) => {
            let _ = writeln!(err, "error: {m}\n\nrun `etlab --help` for usage");
            return 1;
        }
    };
    if inv.help {
        let _ = write!(out, "{}", usage());
        return 0;
    }
    match dispatch(&inv, stdin, out) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nrun `etlab --help` for usage");
            1
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(inv: &Invocation, stdin: &mut dyn BufRead, out: &mut dyn Write) -> CmdResult {
    let settings = inv.settings()?;
    match inv.command.as_str() {
        "train" => train_cmd(inv, &settings, out),
        "evaluate" => evaluate_cmd(inv, out),
        "translate" => {
            let ck = need(&inv.checkpoint, "--checkpoint")?;
            let ck = load_checkpoint(ck)?;
            let text = match &inv.input {
                Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                None => {
                    let mut s = String::new();
                    stdin.read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
                    s
                }
            };
            write_out(out, &translate_cmd(&ck, &text)?)?;
            Ok(0)
        }
        "pe-learn" => pe_learn_cmd(inv, &settings, out),
        "ablate" => ablate_cmd(inv, &settings, out),
        "gradcheck" => gradcheck_cmd(&settings, out),
        "heatmap" => heatmap_cmd(inv, &settings, out),
        other => Err(Failure::Usage(format!("unknown command {other:?}"))),
    }
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> std::result::Result<&'a T, Failure> {
    v.as_ref().ok_or_else(|| Failure::Usage(format!("this command needs {flag}")))
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// `<parent>/<name>-<seed>-<unix seconds>`, or `--out` when given.
fn run_dir(out: Option<&Path>, settings: &Settings, name: &str, seed: u64) -> Result<PathBuf> {
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            settings.output_dir()?.join(format!("{name}-{seed}-{ts}"))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn settings_manifest(settings: &Settings) -> std::collections::BTreeMap<String, String> {
    settings.iter().map(|(k, v)| (format!("settings.{k}"), v.to_string())).collect()
}

fn train_cmd(inv: &Invocation, settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let source = need(&inv.corpus, "--corpus")?;
    let model = settings.model_config()?;
    let mut tc = settings.train_config()?;
    let dir = run_dir(inv.out.as_deref(), settings, &tc.name, tc.seed)?;
    tc.out_dir = Some(dir.clone());
    tc.manifest = settings_manifest(settings);
    let (st, _, outcome) = train_run(&model, &tc, source)?;
    let last = st.records.last();
    write_out(
        out,
        &format!(
            "epochs={} steps={} final_bleu={:.6} avg_bleu_last100={:.6} best_bleu={:.6}\nmetrics={}\n",
            st.epoch,
            st.step,
            last.map_or(0.0, |r| r.test_bleu),
            outcome.final_avg_bleu,
            outcome.best_bleu,
            dir.join(METRICS_FILE).display()
        ),
    )?;
    Ok(0)
}

fn evaluate_cmd(inv: &Invocation, out: &mut dyn Write) -> CmdResult {
    let ck = load_checkpoint(need(&inv.checkpoint, "--checkpoint")?)?;
    let source = need(&inv.corpus, "--corpus")?;
    let (pairs, drop) = filter_pairs(read_pairs(source)?, ck.state.model.cfg.max_len);
    let corpus = ParallelCorpus { pairs, origin: source.to_string() };
    let max_decode: usize = ck.config.get("train.max_decode_len").and_then(|v| v.parse().ok()).unwrap_or(64);
    let bleu = evaluate_bleu(&ck.state.model, &ck.src_vocab, &ck.tgt_vocab, &corpus, max_decode, 32)?;
    write_out(out, &format!("bleu={bleu:.6} pairs={} dropped={}\n", corpus.len(), drop.dropped.len()))?;
    Ok(0)
}

/// One output line per input line; blank lines stay blank and unknown
/// words become the unknown token.
pub fn translate_cmd(ck: &LoadedCheckpoint, text: &str) -> Result<String> {
    let model = &ck.state.model;
    let max_decode: usize = ck.config.get("train.max_decode_len").and_then(|v| v.parse().ok()).unwrap_or(64);
    let mut result = String::new();
    for line in text.lines() {
        let mut toks = tokenize(line);
        toks.truncate(model.cfg.max_len);
        if !toks.is_empty() {
            let ids = ck.src_vocab.encode(&toks, false);
            let outs = model.greedy_translate(&[ids], max_decode)?;
            result.push_str(&ck.tgt_vocab.decode(&outs[0]));
        }
        result.push('\n');
    }
    Ok(result)
}

fn pe_learn_cmd(inv: &Invocation, settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let env = settings.pe_env()?;
    let sac = settings.sac()?;
    let seed = settings.sac_seed()?;
    let csv = match &inv.out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            p.clone()
        }
        None => run_dir(None, settings, "pe-learn", seed)?.join("pe.csv"),
    };
    let report = learn_pe(&env, &sac, seed, settings.ascent()?, &csv)?;
    write_out(out, &report)?;
    Ok(0)
}

/// Runs SAC and direct ascent, writes the learned matrix CSV, its heatmap
/// and the reward trace next to `csv`, and returns a short report.
fn learn_pe(
    env: &crate::posenc::PeEnvConfig,
    sac: &crate::posenc::SacConfig,
    seed: u64,
    (ascent_steps, ascent_lr): (usize, f64),
    csv: &Path,
) -> Result<String> {
    let outcome = sac_learn_pe(env, sac, &mut Rng::new(seed))?;
    let sin = pe_reward(&sinusoidal_pe(env.n_positions, env.n_dims)?, env)?;
    let ascent = pe_reward(&direct_ascent_pe(env, ascent_steps, ascent_lr, &mut Rng::new(seed))?, env)?;
    write_matrix_csv(outcome.best.values(), env.n_dims, csv)?;
    let paths = pe_export_heatmap(&outcome.best, csv)?;
    let trace_path = csv.with_file_name(format!(
        "{}_trace.csv",
        csv.file_stem().map_or("pe".into(), |s| s.to_string_lossy())
    ));
    let mut trace = String::from("step,reward,alpha\n");
    for (i, (r, a)) in outcome.trace.iter().zip(&outcome.alphas).enumerate() {
        trace.push_str(&format!("{},{r},{a}\n", i + 1));
    }
    fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;
    Ok(format!(
        "learned_reward={:.6} sinusoidal_reward={sin:.6} ratio={:.6} ascent_reward={ascent:.6}\nmatrix={}\nheatmap={}\ntrace={}\n",
        outcome.best_reward,
        outcome.best_reward / sin,
        csv.display(),
        paths.svg.display(),
        trace_path.display()
    ))
}

fn ablate_cmd(inv: &Invocation, settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let source = need(&inv.corpus, "--corpus")?;
    let base = settings.model_config()?;
    let mut tc = settings.train_config()?;
    tc.manifest = settings_manifest(settings);
    let dir = run_dir(inv.out.as_deref(), settings, "ablation", tc.seed)?;
    let given = settings.get("model.pe_path")?;
    let pe_csv = if given.is_empty() {
        let csv = dir.join("pe.csv");
        write_out(out, &learn_pe(&settings.pe_env()?, &settings.sac()?, settings.sac_seed()?, settings.ascent()?, &csv)?)?;
        csv
    } else {
        PathBuf::from(given)
    };
    let ds = Dataset::load(source, base.max_len, &tc)?;
    let outcome = run_ablation(&base, &tc, &ds, &pe_csv, settings.workers()?, Some(&dir))?;
    write_out(out, &outcome.summary)?;
    write_out(out, &format!("csv={}\n", dir.join(ABLATION_CSV).display()))?;
    Ok(0)
}

fn gradcheck_cmd(settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let (reports, elapsed) = full_suite(settings.gradcheck_seeds()?)?;
    let mut failed = 0;
    let mut text = String::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        text.push_str(&format!("{status:<4} {:<56} max_rel_error={:.3e} cases={}\n", r.name, r.max_rel_error, r.cases));
    }
    text.push_str(&format!(
        "{} of {} checks within {TOLERANCE:e} in {:.1}s\n",
        reports.len() - failed,
        reports.len(),
        elapsed.as_secs_f64()
    ));
    write_out(out, &text)?;
    Ok(if failed == 0 { 0 } else { 3 })
}

/// Encoder self-attention heatmaps, one SVG per layer and head, plus the
/// positional table. Returns the written SVG paths.
pub fn write_heatmaps(ck: &LoadedCheckpoint, sentence: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let model = &ck.state.model;
    let mut toks = tokenize(sentence);
    toks.truncate(model.cfg.max_len);
    if toks.is_empty() {
        return Err(Error::Config("heatmap needs a non-empty --sentence".into()));
    }
    let src = vec![ck.src_vocab.encode(&toks, false)];
    let mut tgt = vec![BOS];
    tgt.extend(model.greedy_translate(&src, model.cfg.max_len - 1)?.remove(0));
    tgt.truncate(model.cfg.max_len);
    let batch = Batch::from_decoder_rows(&src, &[tgt], None, model.cfg.zero_mask)?;
    let maps = model.extract_attention(&batch)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let ramp = Ramp::Sequential { lo: 0.0, hi: 1.0 };
    for (l, w) in maps.enc_self.iter().enumerate() {
        let (h, t) = (w.shape()[1], w.shape()[2]);
        for head in 0..h {
            let cells = &w.data()[head * t * t..(head + 1) * t * t];
            let p = dir.join(format!("enc_layer{l}_head{head}.svg"));
            fs::write(&p, heatmap_svg(cells, t, t, 24, ramp)).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
    }
    let pe: &PeMatrix = &model.pe;
    written.push(pe_export_heatmap(pe, &dir.join("pe.svg"))?.svg);
    Ok(written)
}

fn heatmap_cmd(inv: &Invocation, settings: &Settings, out: &mut dyn Write) -> CmdResult {
    let ck = load_checkpoint(need(&inv.checkpoint, "--checkpoint")?)?;
    let sentence = need(&inv.sentence, "--sentence")?;
    let seed = ck.config.get("train.seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let dir = run_dir(inv.out.as_deref(), settings, "heatmap", seed)?;
    let files = write_heatmaps(&ck, sentence, &dir)?;
    let pe_kind = match ck.state.model.cfg.pe_mode {
        PeMode::Sinusoidal => "sinusoidal",
        PeMode::Learned { .. } => "learned",
    };
    write_out(out, &format!("wrote {} heatmaps ({pe_kind} positional table) to {}\n", files.len(), dir.display()))?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_flags_and_overrides() {
        let inv = parse_args(&args("train --config a.cfg --model.d_model 32 --corpus pair s.txt t.txt --out d")).unwrap();
        assert_eq!(inv.command, "train");
        assert_eq!(inv.overrides, vec![("model.d_model".to_string(), "32".to_string())]);
        assert_eq!(inv.corpus, Some(CorpusSource::Pair("s.txt".into(), "t.txt".into())));
        assert_eq!(inv.out, Some(PathBuf::from("d")));
    }

    #[test]
    fn usage_errors() {
        assert!(parse_args(&args("")).is_err());
        assert!(parse_args(&args("fly")).is_err());
        assert!(parse_args(&args("train --bogus")).is_err());
        assert!(parse_args(&args("train --corpus zip a")).is_err());
        assert!(parse_args(&args("train --config")).is_err());
        assert!(parse_args(&args("--help")).unwrap().help);
    }

    #[test]
    fn exit_codes() {
        let mut sink = Vec::new();
        let mut err = Vec::new();
        let mut stdin = std::io::empty();
        let mut r = std::io::BufReader::new(&mut stdin);
        assert_eq!(run(&args("--help"), &mut r, &mut sink, &mut err), 0);
        assert_eq!(run(&args("nope"), &mut r, &mut sink, &mut err), 1);
        assert_eq!(run(&args("train"), &mut r, &mut sink, &mut err), 1);
        assert_eq!(run(&args("train --model.d_modle 3 --corpus tsv x"), &mut r, &mut sink, &mut err), 2);
        assert_eq!(run(&args("train --corpus tsv /no/such/file.tsv --out /tmp/etlab-none"), &mut r, &mut sink, &mut err), 2);
        assert_eq!(run(&args("translate --checkpoint /no/such.etck"), &mut r, &mut sink, &mut err), 2);
    }
}
