// SPDX-License-Identifier: MIT OR Apache-2.0

//! Running the five experiment modes over an evaluation split.
//!
//! Records are evaluated in parallel with order-preserving collection and
//! every reduction runs sequentially in record order, so results do not
//! depend on the worker count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode};
use super::dataset::{load_dataset, DatasetRecord, GoldTarget};
use super::prompt::{render_prompt, FeedbackSelection, PromptTemplate};
use super::synth::Oracle;
use crate::checkpoint::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, extract_answer_distribution, greedy_label, AnswerMapping, Gold, MetricsReport,
    PredictionRecord,
};
use crate::numerics::{argmax_index, js_distance, Distribution, LogitVector};
use crate::plurdec::{mean_combine, pluralistic_combine_in, ConditionalSet};
use crate::sae::{train_sae, SaeConfig, SaeParams};
use crate::steering::{
    extract_steering_vector, steer_forward_with_policy, ContrastivePair, SteeringVector,
};
use crate::tinylm::{Model, TokenSequence, Tokenizer};

/// One evaluated configuration point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub layer: Option<usize>,
    pub scale: Option<f64>,
    /// Annotator id, or `combined` for the aggregate prediction.
    pub annotator: String,
    pub report: MetricsReport,
    /// Predicted label per evaluation record, in record order.
    pub labels: Vec<usize>,
}

/// Mean JS distance of steered and unsteered predictions to one annotator's
/// feedback-conditioned oracle distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub layer: usize,
    pub scale: f64,
    pub annotator: String,
    pub js_steered: f64,
    pub js_unsteered: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub mode: Mode,
    pub rows: Vec<SweepRow>,
    /// Labels predicted without any steering, for SAE modes.
    pub baseline_labels: Option<Vec<usize>>,
    pub alignment: Vec<AlignmentRow>,
    pub vectors: Vec<SteeringVector>,
    /// Largest option count over the evaluation records.
    pub n_options: usize,
}

pub const COMBINED: &str = "combined";

/// Everything a run reads from disk, loaded once.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub template: PromptTemplate,
    pub eval: Vec<DatasetRecord>,
    pub calibration: Vec<DatasetRecord>,
    pub oracle: Option<Oracle>,
    pub saes: BTreeMap<usize, SaeParams>,
    pub sae_checksums: BTreeMap<usize, String>,
    /// (path, sha256) of every input file read.
    pub checksums: Vec<(String, String)>,
}

fn read_bytes(path: &Path, checksums: &mut Vec<(String, String)>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checksums.push((path.display().to_string(), sha256_hex(&bytes)));
    Ok(bytes)
}

impl ExperimentInputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut checksums = Vec::new();
        let model_path = config.model.as_deref().expect("validated");
        let model_bytes = read_bytes(model_path, &mut checksums)?;
        let model =
            Model::from_tensor_file(&crate::checkpoint::TensorFile::from_bytes(&model_bytes)?)?;
        let vocab_path = config.vocab.as_deref().expect("validated");
        let vocab = String::from_utf8(read_bytes(vocab_path, &mut checksums)?)
            .map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", vocab_path.display())))?;
        let tokenizer = Tokenizer::from_vocab_text(&vocab)
            .map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
        if tokenizer.len() > model.config().vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} words but the model only {}",
                tokenizer.len(),
                model.config().vocab_size
            )));
        }
        let dataset_path = config.dataset.as_deref().expect("validated");
        read_bytes(dataset_path, &mut checksums)?;
        let eval = load_dataset(dataset_path)?;
        let calibration = match &config.calibration {
            Some(p) => {
                read_bytes(p, &mut checksums)?;
                load_dataset(p)?
            }
            None => Vec::new(),
        };
        let oracle = match &config.oracle {
            Some(p) => {
                read_bytes(p, &mut checksums)?;
                Some(Oracle::load(p)?)
            }
            None => None,
        };
        let mut inputs = Self {
            model,
            tokenizer,
            template: config.template()?,
            eval,
            calibration,
            oracle,
            saes: BTreeMap::new(),
            sae_checksums: BTreeMap::new(),
            checksums,
        };
        if config.mode.uses_sae() {
            for &layer in &config.layers {
                let path = config.sae_path(layer).expect("validated");
                if !path.exists() {
                    if !config.train_missing_sae {
                        return Err(Error::Config(format!(
                            "no SAE at {} and train_missing_sae is off",
                            path.display()
                        )));
                    }
                    let annotators = resolve_annotators(config, &inputs.calibration);
                    let (sae_config, sae) = train_layer_sae(config, &inputs, &annotators, layer)?;
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    sae.save(&sae_config, &path)?;
                }
                let bytes = read_bytes(&path, &mut inputs.checksums)?;
                let (_, sae) = SaeParams::from_tensor_file(
                    &crate::checkpoint::TensorFile::from_bytes(&bytes)?,
                )?;
                if sae.input_dim() != inputs.model.config().d_model {
                    return Err(Error::Checkpoint(format!(
                        "{} has input_dim {}, model d_model is {}",
                        path.display(),
                        sae.input_dim(),
                        inputs.model.config().d_model
                    )));
                }
                inputs.sae_checksums.insert(layer, sha256_hex(&bytes));
                inputs.saes.insert(layer, sae);
            }
        }
        Ok(inputs)
    }

    fn encode(&self, prompt: &str) -> Result<TokenSequence> {
        let seq = self.tokenizer.encode(prompt)?;
        if seq.len() > self.model.config().max_seq_len {
            return Err(Error::Validation(format!(
                "prompt of {} tokens exceeds max_seq_len {}",
                seq.len(),
                self.model.config().max_seq_len
            )));
        }
        Ok(seq)
    }

    /// Tokenized prompt for one record.
    pub fn prompt(
        &self,
        record: &DatasetRecord,
        selection: Option<FeedbackSelection<'_>>,
        few_shot: &[&DatasetRecord],
    ) -> Result<TokenSequence> {
        self.encode(&render_prompt(&self.template, record, selection, few_shot)?)
    }
}

/// Annotators named in the config, or those giving feedback in `records`
/// in order of first appearance.
pub fn resolve_annotators(config: &ExperimentConfig, records: &[DatasetRecord]) -> Vec<String> {
    if !config.annotators.is_empty() {
        return config.annotators.clone();
    }
    let mut seen = Vec::new();
    for f in records.iter().flat_map(|r| &r.feedback) {
        if f.kind == config.feedback_kind && !seen.contains(&f.annotator_id) {
            seen.push(f.annotator_id.clone());
        }
    }
    seen
}

/// Seed for per-record draws: the run seed XOR the first 8 bytes of the
/// record id's SHA-256.
pub fn record_seed(seed: u64, record_id: &str) -> u64 {
    let digest = Sha256::digest(record_id.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Last-position residuals at `layer` for `count` prompts, cycling through
/// records and their available feedback conditions.
pub fn collect_activations(
    inputs: &ExperimentInputs,
    records: &[DatasetRecord],
    annotators: &[String],
    layer: usize,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    if records.is_empty() {
        return Err(Error::Validation(
            "no records to collect activations from".into(),
        ));
    }
    let mut selections: Vec<Option<FeedbackSelection<'_>>> = vec![None];
    for a in annotators {
        for kind in [
            super::dataset::FeedbackKind::Coarse,
            super::dataset::FeedbackKind::Granular,
        ] {
            selections.push(Some(FeedbackSelection {
                annotator_id: a,
                kind,
            }));
        }
    }
    let n = records.len();
    let jobs: Vec<(&DatasetRecord, Option<FeedbackSelection<'_>>)> = (0..count)
        .map(|i| {
            let rec = &records[i % n];
            let start = (i + i / n) % selections.len();
            // Fall back to the next condition the record has feedback for.
            let sel = (0..selections.len())
                .map(|k| selections[(start + k) % selections.len()])
                .find(|s| match s {
                    None => true,
                    Some(s) => rec.feedback_text(s.annotator_id, s.kind).is_some(),
                })
                .flatten();
            (rec, sel)
        })
        .collect();
    jobs.par_iter()
        .map(|(rec, sel)| {
            inputs
                .model
                .capture_last(&inputs.prompt(rec, *sel, &[])?, layer)
        })
        .collect()
}

/// Trains the SAE for one layer on calibration-split activations.
pub fn train_layer_sae(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
    annotators: &[String],
    layer: usize,
) -> Result<(SaeConfig, SaeParams)> {
    let acts = collect_activations(
        inputs,
        &inputs.calibration,
        annotators,
        layer,
        config.sae_activations,
    )?;
    let mut sae_config = SaeConfig::new(inputs.model.config().d_model, config.sae_expansion);
    sae_config.sparsity_coeff = config.sae_sparsity;
    sae_config.lr = config.sae_lr;
    sae_config.epochs = config.sae_epochs;
    sae_config.seed = config.seed ^ layer as u64;
    let params = train_sae(&acts, &sae_config)?;
    Ok((sae_config, params))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone)]
struct Prediction {
    label: usize,
    dist: Distribution,
    invalid: bool,
}

struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    inputs: &'a ExperimentInputs,
    mappings: Vec<AnswerMapping>,
    positive: BTreeSet<usize>,
}

impl<'a> Evaluator<'a> {
    fn new(config: &'a ExperimentConfig, inputs: &'a ExperimentInputs) -> Result<Self> {
        let mut mappings = Vec::with_capacity(inputs.eval.len());
        for rec in &inputs.eval {
            let in_order = rec
                .answer_options
                .iter()
                .enumerate()
                .all(|(i, (l, _))| *l == i);
            if !in_order {
                return Err(Error::Validation(format!(
                    "record {}: option labels must be 0, 1, ... in order",
                    rec.record_id
                )));
            }
            if config.unsure_label >= rec.answer_options.len() {
                return Err(Error::Validation(format!(
                    "record {}: unsure label {} is not an option",
                    rec.record_id, config.unsure_label
                )));
            }
            let choices = rec
                .answer_options
                .iter()
                .map(|(label, surface)| {
                    inputs
                        .tokenizer
                        .id(surface)
                        .map(|t| (*label, vec![t]))
                        .ok_or_else(|| {
                            Error::Validation(format!(
                                "record {}: answer {surface:?} is not a single vocabulary word",
                                rec.record_id
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            mappings.push(
                AnswerMapping::new(choices, config.unsure_label)
                    .map_err(|e| Error::Validation(format!("record {}: {e}", rec.record_id)))?,
            );
        }
        Ok(Self {
            config,
            inputs,
            mappings,
            positive: config.positive_classes.iter().copied().collect(),
        })
    }

    fn predict(&self, i: usize, logits: &LogitVector) -> Result<Prediction> {
        let ex = extract_answer_distribution(
            logits,
            &self.mappings[i],
            self.config.top_k,
            self.config.temperature,
        )?;
        let label = match self.inputs.eval[i].gold {
            GoldTarget::Label(_) => greedy_label(logits, &self.mappings[i]),
            GoldTarget::Distribution(_) => argmax_index(&ex.distribution),
        };
        Ok(Prediction {
            label,
            dist: ex.distribution,
            invalid: !ex.valid,
        })
    }

    fn combined(&self, dist: Distribution, invalid: bool) -> Prediction {
        Prediction {
            label: argmax_index(&dist),
            dist,
            invalid,
        }
    }

    fn row<'p>(
        &self,
        layer: Option<usize>,
        scale: Option<f64>,
        annotator: &str,
        preds: impl Iterator<Item = &'p Prediction> + Clone,
    ) -> Result<SweepRow> {
        let records: Vec<PredictionRecord> = self
            .inputs
            .eval
            .iter()
            .zip(preds.clone())
            .map(|(rec, p)| PredictionRecord {
                record_id: rec.record_id.clone(),
                predicted_label: p.label,
                predicted_distribution: p.dist.clone(),
                gold: match &rec.gold {
                    GoldTarget::Label(l) => Gold::Label(*l),
                    GoldTarget::Distribution(d) => Gold::Distribution(d.clone()),
                },
                invalid: p.invalid,
            })
            .collect();
        Ok(SweepRow {
            mode: self.config.mode,
            layer,
            scale,
            annotator: annotator.to_string(),
            report: evaluate(&records, &self.positive, self.config.binary_class)?,
            labels: preds.map(|p| p.label).collect(),
        })
    }

    fn selection<'s>(&self, annotator: &'s str) -> FeedbackSelection<'s> {
        FeedbackSelection {
            annotator_id: annotator,
            kind: self.config.feedback_kind,
        }
    }

    fn base_predictions(&self) -> Result<Vec<Prediction>> {
        (0..self.inputs.eval.len())
            .into_par_iter()
            .map(|i| {
                let x = self.inputs.prompt(&self.inputs.eval[i], None, &[])?;
                self.predict(i, &self.inputs.model.final_logits(&x)?)
            })
            .collect()
    }

    fn combine(
        &self,
        base: &Prediction,
        per_annotator: Vec<(String, Prediction)>,
    ) -> Result<Prediction> {
        let invalid = base.invalid || per_annotator.iter().any(|(_, p)| p.invalid);
        let cs = ConditionalSet::new(
            base.dist.clone(),
            per_annotator
                .into_iter()
                .map(|(a, p)| (a, p.dist))
                .collect(),
        )?;
        let dist = match self.config.mode {
            Mode::SaeVectors => mean_combine(&cs)?,
            _ => pluralistic_combine_in(&cs, self.config.alpha, self.config.entropy_unit)?,
        };
        Ok(self.combined(dist, invalid))
    }
}

fn check_isolation(eval: &[DatasetRecord], used: &[DatasetRecord]) -> Result<()> {
    let ids: HashSet<&str> = eval.iter().map(|r| r.record_id.as_str()).collect();
    if let Some(r) = used.iter().find(|r| ids.contains(r.record_id.as_str())) {
        return Err(Error::Validation(format!(
            "calibration record {} also appears in the evaluation split",
            r.record_id
        )));
    }
    Ok(())
}

fn calibration_slice<'a>(
    config: &ExperimentConfig,
    inputs: &'a ExperimentInputs,
) -> Result<&'a [DatasetRecord]> {
    if inputs.calibration.len() < config.n_calibration {
        return Err(Error::Validation(format!(
            "calibration split has {} records, n_calibration is {}",
            inputs.calibration.len(),
            config.n_calibration
        )));
    }
    let used = &inputs.calibration[..config.n_calibration];
    check_isolation(&inputs.eval, used)?;
    Ok(used)
}

/// Steering vectors for every annotator at one layer.
pub fn extract_vectors(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
    annotators: &[String],
    layer: usize,
) -> Result<Vec<SteeringVector>> {
    let sae = inputs
        .saes
        .get(&layer)
        .ok_or_else(|| Error::Config(format!("no SAE loaded for layer {layer}")))?;
    let cal = calibration_slice(config, inputs)?;
    annotators
        .iter()
        .map(|a| {
            let pairs = cal
                .iter()
                .map(|rec| {
                    let sel = FeedbackSelection {
                        annotator_id: a,
                        kind: config.feedback_kind,
                    };
                    Ok(ContrastivePair {
                        with_feedback: inputs.prompt(rec, Some(sel), &[])?,
                        without_feedback: inputs.prompt(rec, None, &[])?,
                        annotator_id: a.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            extract_steering_vector(&inputs.model, sae, &pairs, layer)
        })
        .collect()
}

/// Runs the configured mode on already-loaded inputs.
pub fn run_with_inputs(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
) -> Result<SweepResult> {
    config.validate()?;
    if inputs.eval.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    with_workers(config.workers, || run_modes(config, inputs))?
}

fn run_modes(config: &ExperimentConfig, inputs: &ExperimentInputs) -> Result<SweepResult> {
    let ev = Evaluator::new(config, inputs)?;
    let n_options = inputs
        .eval
        .iter()
        .map(|r| r.answer_options.len())
        .max()
        .unwrap_or(0);
    let mut result = SweepResult {
        mode: config.mode,
        rows: Vec::new(),
        baseline_labels: None,
        alignment: Vec::new(),
        vectors: Vec::new(),
        n_options,
    };
    match config.mode {
        Mode::ZeroShot => {
            let preds = ev.base_predictions()?;
            result
                .rows
                .push(ev.row(None, None, COMBINED, preds.iter())?);
        }
        Mode::FewShot => {
            let cal = calibration_slice(config, inputs)?;
            let preds = (0..inputs.eval.len())
                .into_par_iter()
                .map(|i| {
                    let rec = &inputs.eval[i];
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(record_seed(config.seed, &rec.record_id));
                    let picks = rand::seq::index::sample(&mut rng, cal.len(), config.few_shot_n);
                    let shots: Vec<&DatasetRecord> = picks.iter().map(|j| &cal[j]).collect();
                    let x = inputs.prompt(rec, None, &shots)?;
                    ev.predict(i, &inputs.model.final_logits(&x)?)
                })
                .collect::<Result<Vec<_>>>()?;
            result
                .rows
                .push(ev.row(None, None, COMBINED, preds.iter())?);
        }
        Mode::FullFeedbackPd => {
            let annotators = resolve_annotators(config, &inputs.eval);
            if annotators.is_empty() {
                return Err(Error::Validation(
                    "no annotator feedback in the evaluation split".into(),
                ));
            }
            let base = ev.base_predictions()?;
            let per_record = (0..inputs.eval.len())
                .into_par_iter()
                .map(|i| {
                    let per: Vec<(String, Prediction)> = annotators
                        .iter()
                        .map(|a| {
                            let x = inputs.prompt(&inputs.eval[i], Some(ev.selection(a)), &[])?;
                            Ok((a.clone(), ev.predict(i, &inputs.model.final_logits(&x)?)?))
                        })
                        .collect::<Result<_>>()?;
                    let combined = ev.combine(&base[i], per.clone())?;
                    Ok((per, combined))
                })
                .collect::<Result<Vec<_>>>()?;
            for (k, a) in annotators.iter().enumerate() {
                result.rows.push(ev.row(
                    None,
                    None,
                    a,
                    per_record.iter().map(|(per, _)| &per[k].1),
                )?);
            }
            result
                .rows
                .push(ev.row(None, None, COMBINED, per_record.iter().map(|(_, c)| c))?);
        }
        Mode::SaeVectors | Mode::SaeVectorsPd => run_sae_modes(config, inputs, &ev, &mut result)?,
    }
    Ok(result)
}

fn run_sae_modes(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
    ev: &Evaluator<'_>,
    result: &mut SweepResult,
) -> Result<()> {
    let annotators = resolve_annotators(config, calibration_slice(config, inputs)?);
    if annotators.is_empty() {
        return Err(Error::Validation(
            "no annotator feedback in the calibration split".into(),
        ));
    }
    let zero: Vec<TokenSequence> = inputs
        .eval
        .iter()
        .map(|rec| inputs.prompt(rec, None, &[]))
        .collect::<Result<_>>()?;
    let base = ev.base_predictions()?;
    result.baseline_labels = Some(base.iter().map(|p| p.label).collect());

    let oracle_targets: Option<Vec<Vec<&Distribution>>> = match &inputs.oracle {
        None => None,
        Some(oracle) => Some(
            annotators
                .iter()
                .map(|a| {
                    inputs
                        .eval
                        .iter()
                        .map(|rec| {
                            oracle
                                .get(&rec.record_id, Some(ev.selection(a)))
                                .ok_or_else(|| {
                                    Error::Validation(format!(
                                        "oracle has no entry for {} / {a}",
                                        rec.record_id
                                    ))
                                })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let mean_js = |preds: &mut dyn Iterator<Item = &Distribution>,
                   targets: &[&Distribution]|
     -> Result<f64> {
        let mut total = 0.0;
        for (p, t) in preds.zip(targets) {
            total += js_distance(p, t)?;
        }
        Ok(total / targets.len() as f64)
    };

    for &layer in &config.layers {
        if layer > inputs.model.config().n_layers {
            return Err(Error::Config(format!(
                "layer {layer} exceeds the model's {} layers",
                inputs.model.config().n_layers
            )));
        }
        let sae = &inputs.saes[&layer];
        let vectors = extract_vectors(config, inputs, &annotators, layer)?;
        for &scale in &config.scales {
            let per_record = (0..inputs.eval.len())
                .into_par_iter()
                .map(|i| {
                    let per: Vec<(String, Prediction)> = vectors
                        .iter()
                        .map(|sv| {
                            let logits = steer_forward_with_policy(
                                &inputs.model,
                                sae,
                                sv,
                                scale,
                                &zero[i],
                                config.position_policy,
                            )?;
                            Ok((sv.annotator_id.clone(), ev.predict(i, &logits)?))
                        })
                        .collect::<Result<_>>()?;
                    let combined = ev.combine(&base[i], per.clone())?;
                    Ok((per, combined))
                })
                .collect::<Result<Vec<_>>>()?;
            for (k, a) in annotators.iter().enumerate() {
                result.rows.push(ev.row(
                    Some(layer),
                    Some(scale),
                    a,
                    per_record.iter().map(|(per, _)| &per[k].1),
                )?);
                if let Some(targets) = &oracle_targets {
                    result.alignment.push(AlignmentRow {
                        layer,
                        scale,
                        annotator: a.clone(),
                        js_steered: mean_js(
                            &mut per_record.iter().map(|(per, _)| &per[k].1.dist),
                            &targets[k],
                        )?,
                        js_unsteered: mean_js(&mut base.iter().map(|p| &p.dist), &targets[k])?,
                        n: targets[k].len(),
                    });
                }
            }
            result.rows.push(ev.row(
                Some(layer),
                Some(scale),
                COMBINED,
                per_record.iter().map(|(_, c)| c),
            )?);
        }
        result.vectors.extend(vectors);
    }
    Ok(())
}

/// Loads inputs from the config's paths and runs the configured mode.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepResult> {
    let inputs = ExperimentInputs::load(config)?;
    run_with_inputs(config, &inputs)
}

/// Runs an SAE-mode sweep over every (layer, scale) and writes the CSVs to
/// the configured output directory.
pub fn layer_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    if !config.mode.uses_sae() {
        return Err(Error::Config(format!(
            "sweep needs an sae mode, not {}",
            config.mode
        )));
    }
    let output = config
        .output
        .as_deref()
        .ok_or_else(|| Error::Config("sweep needs an output directory".into()))?;
    let inputs = ExperimentInputs::load(config)?;
    let result = run_with_inputs(config, &inputs)?;
    super::report::write_outputs(output, config, &inputs, &result)?;
    Ok(result)
}
