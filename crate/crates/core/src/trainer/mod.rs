//! Optimization, the training loop, checkpoints and the ablation runner.

mod ablation;
mod adam;
pub mod checkpoint;
mod run;

pub use ablation::{
    ablation_svg, ablation_variant, run_ablation, AblationOutcome, AblationRun, ABLATION_CSV, ABLATION_RUNS,
    ABLATION_SUMMARY, ABLATION_SVG,
};
pub use adam::{adam_step, clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use run::{
    evaluate_bleu, records_csv, train_epochs, train_on, train_run, Dataset, EvalSplit, RunOutcome, RunRecord,
    TrainConfig, TrainingState, BEST_FILE, BLEU_WINDOW, CHECKPOINT_FILE, CSV_HEADER, DROP_FILE, MANIFEST_FILE,
    METRICS_FILE,
};
