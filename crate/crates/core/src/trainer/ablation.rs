//! The nine-run ablation: the baseline, each mechanism alone (the residual
//! weight swept over 2..=5) and all four together.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::run::{records_csv, train_on, Dataset, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PeMode};
use crate::nn::NormMode;
use crate::plot::{line_chart_svg, Series};

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_SVG: &str = "ablation.svg";
pub const ABLATION_SUMMARY: &str = "summary.txt";

/// Run names in merge order.
pub const ABLATION_RUNS: [&str; 9] = [
    "combined",
    "full_norm",
    "original",
    "residual_k2",
    "residual_k3",
    "residual_k4",
    "residual_k5",
    "rl_pe",
    "zero_mask",
];

/// The model configuration for one named ablation run.
pub fn ablation_variant(base: &ModelConfig, name: &str, pe_csv: &Path) -> Result<ModelConfig> {
    let plain = ModelConfig {
        norm_mode: NormMode::Original,
        residual_k: 1.0,
        pe_mode: PeMode::Sinusoidal,
        zero_mask: false,
        ..base.clone()
    };
    let all = plain.clone().with_all_enhancements(pe_csv);
    Ok(match name {
        "original" => plain,
        "full_norm" => ModelConfig { norm_mode: NormMode::Full, ..plain },
        "rl_pe" => ModelConfig { pe_mode: all.pe_mode, ..plain },
        "zero_mask" => ModelConfig { zero_mask: true, ..plain },
        "combined" => all,
        _ => match name.strip_prefix("residual_k").and_then(|k| k.parse::<u32>().ok()) {
            Some(k @ 2..=5) => ModelConfig { residual_k: f64::from(k), ..plain },
            _ => return Err(Error::Config(format!("unknown ablation run {name:?}"))),
        },
    })
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub name: String,
    pub model: ModelConfig,
    pub records: Vec<RunRecord>,
    pub final_avg_bleu: f64,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// In [`ABLATION_RUNS`] order.
    pub runs: Vec<AblationRun>,
    pub csv: String,
    pub svg: String,
    pub summary: String,
}

/// BLEU-vs-epoch chart rebuilt from a combined metrics CSV.
pub fn ablation_svg(csv: &str) -> Result<String> {
    let mut series: Vec<Series> = Vec::new();
    for line in csv.lines().skip(1).filter(|l| !l.is_empty()) {
        let r = RunRecord::parse_row(line)?;
        let point = (r.epoch as f64, r.test_bleu);
        match series.iter_mut().find(|s| s.name == r.config) {
            Some(s) => s.points.push(point),
            None => series.push(Series { name: r.config, points: vec![point] }),
        }
    }
    Ok(line_chart_svg(&series, "Test BLEU per configuration", "epoch", "BLEU"))
}

fn summary(runs: &[AblationRun]) -> String {
    let mut ranked: Vec<&AblationRun> = runs.iter().collect();
    ranked.sort_by(|a, b| b.final_avg_bleu.total_cmp(&a.final_avg_bleu).then(a.name.cmp(&b.name)));
    let mut s = String::from("rank,config,final_avg_bleu_last100,norm_mode,residual_k,pe,zero_mask\n");
    for (i, r) in ranked.iter().enumerate() {
        let pe = match r.model.pe_mode {
            PeMode::Sinusoidal => "sinusoidal",
            PeMode::Learned { .. } => "learned",
        };
        s.push_str(&format!(
            "{},{},{:.6},{},{},{},{}\n",
            i + 1,
            r.name,
            r.final_avg_bleu,
            r.model.norm_mode,
            r.model.residual_k,
            pe,
            r.model.zero_mask
        ));
    }
    s
}

/// Trains all nine runs on `ds` with up to `workers` threads. Every run
/// uses `tc.seed`, so shared parameters start identical. With `out_dir`,
/// each run writes into its own subdirectory and the merged CSV, chart and
/// summary land at the top.
pub fn run_ablation(
    base: &ModelConfig,
    tc: &TrainConfig,
    ds: &Dataset,
    pe_csv: &Path,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<AblationOutcome> {
    let plans: Vec<(String, ModelConfig, TrainConfig)> = ABLATION_RUNS
        .iter()
        .map(|&name| {
            let model = ablation_variant(base, name, pe_csv)?;
            let run_dir: Option<PathBuf> = out_dir.map(|d| d.join(name));
            Ok((name.to_string(), model, TrainConfig { name: name.to_string(), out_dir: run_dir, ..tc.clone() }))
        })
        .collect::<Result<_>>()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRun>>>> = Mutex::new((0..plans.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, plans.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((name, model, run_tc)) = plans.get(i) else { break };
                let res = train_on(model, run_tc, ds).map(|(st, out)| AblationRun {
                    name: name.clone(),
                    model: st.model.cfg,
                    records: out.records,
                    final_avg_bleu: out.final_avg_bleu,
                });
                results.lock().expect("no worker panicked while holding the lock")[i] = Some(res);
            });
        }
    });
    let mut runs = Vec::with_capacity(plans.len());
    for (res, (name, ..)) in results.into_inner().expect("workers joined").into_iter().zip(&plans) {
        match res.expect("every plan ran") {
            Ok(r) => runs.push(r),
            Err(e) => return Err(Error::Run { name: name.clone(), source: Box::new(e) }),
        }
    }
    let all: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let csv = records_csv(&all);
    let svg = ablation_svg(&csv)?;
    let summary = summary(&runs);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (file, text) in [(ABLATION_CSV, &csv), (ABLATION_SVG, &svg), (ABLATION_SUMMARY, &summary)] {
            let p = dir.join(file);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(AblationOutcome { runs, csv, svg, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_distinct_variants() {
        let base = ModelConfig::desk();
        let p = Path::new("pe.csv");
        let v: Vec<ModelConfig> = ABLATION_RUNS.iter().map(|n| ablation_variant(&base, n, p).unwrap()).collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                assert_ne!(v[i], v[j], "{} vs {}", ABLATION_RUNS[i], ABLATION_RUNS[j]);
            }
        }
        let c = &v[0];
        assert_eq!((c.norm_mode, c.residual_k, c.zero_mask), (NormMode::Full, 4.0, true));
        assert!(matches!(c.pe_mode, PeMode::Learned { .. }));
        assert_eq!(v[2], ModelConfig { dropout: base.dropout, ..ModelConfig::desk() });
        assert!(ablation_variant(&base, "residual_k9", p).is_err());
        let mut sorted = ABLATION_RUNS.to_vec();
        sorted.sort();
        assert_eq!(sorted, ABLATION_RUNS);
    }

    #[test]
    fn chart_rerenders_from_csv() {
        let rows = vec![
            RunRecord { epoch: 1, config: "a".into(), train_loss: 1.0, test_bleu: 2.0, avg_bleu_last100: 2.0 },
            RunRecord { epoch: 2, config: "a".into(), train_loss: 1.0, test_bleu: 3.0, avg_bleu_last100: 2.5 },
            RunRecord { epoch: 1, config: "b".into(), train_loss: 1.0, test_bleu: 1.0, avg_bleu_last100: 1.0 },
        ];
        let csv = records_csv(&rows);
        let svg = ablation_svg(&csv).unwrap();
        assert_eq!(svg, ablation_svg(&csv).unwrap());
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
