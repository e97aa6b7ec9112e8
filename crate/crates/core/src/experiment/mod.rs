//! Experiment plumbing: INI configs, synthetic data, single runs and K sweeps.

mod config;
mod runner;
mod synth;

pub use config::{ExperimentConfig, Mode};
pub use runner::{
    evaluate_checkpoint, load_data, run_experiment, run_in_memory, sweep_csv, sweep_k, write_sweep,
    ExperimentData, Manifest, RunOutcome, SweepRow, SWEEP_CUTOFF,
};
pub use synth::{make_synthetic, modality_name, SynthDataset, SynthFiles, SynthSpec};
