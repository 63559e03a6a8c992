// SPDX-License-Identifier: MIT OR Apache-2.0

//! Datasets, prompts, the synthetic task and experiment orchestration.

mod config;
mod dataset;
mod experiment;
mod prompt;
mod report;
mod synth;

pub use config::{ExperimentConfig, Mode};
pub use dataset::{
    dataset_to_text, load_dataset, parse_dataset, write_dataset, DatasetRecord, Feedback,
    FeedbackKind, GoldTarget, GOLD_TOLERANCE,
};
pub use experiment::{
    collect_activations, extract_vectors, layer_sweep, record_seed, resolve_annotators,
    run_experiment, run_with_inputs, train_layer_sae, AlignmentRow, ExperimentInputs, SweepResult,
    SweepRow, COMBINED,
};
pub use prompt::{render_prompt, FeedbackSelection, PromptTemplate, DEFAULT_TEMPLATE};
pub use report::{
    alignment_csv, label_distribution_report, parse_results_csv, results_csv, summarize_results,
    write_outputs, ResultLine, ALIGNMENT_FILE, LABELS_FILE, MANIFEST_FILE, RESULTS_FILE,
};
pub use synth::{
    condition_key, conditions, generate_synthetic_task, Oracle, SyntheticTask, ANSWERS,
    CONTEXT_WORDS, MAX_ANNOTATORS, UNSURE_LABEL,
};
