// SPDX-License-Identifier: MIT OR Apache-2.0

//! `pluralsteer` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 checkpoint.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pluralsteer::harness::{
    extract_vectors, generate_synthetic_task, layer_sweep, parse_results_csv, resolve_annotators,
    results_csv, run_with_inputs, summarize_results, train_layer_sae, write_dataset, write_outputs,
    ExperimentConfig, ExperimentInputs, Mode,
};
use pluralsteer::tinylm::{
    mean_cross_entropy, train_lm, Model, ModelConfig, Tokenizer, TrainConfig,
};
use pluralsteer::Error;

#[derive(Parser)]
#[command(
    name = "pluralsteer",
    version,
    about = "SAE steering and pluralistic decoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task: datasets, training corpus, oracle and vocabulary.
    GenData(GenData),
    /// Train the language model on a corpus file.
    TrainLm(TrainLm),
    /// Train one SAE per configured layer.
    TrainSae(ConfigArgs),
    /// Extract and save steering vectors for every configured layer.
    ExtractVectors(ExtractVectors),
    /// Run the configured mode and print results.csv.
    Run(ConfigArgs),
    /// Sweep layers and scales, writing all outputs to the output directory.
    Sweep(ConfigArgs),
    /// Summarize a results.csv: the best row per annotator.
    Report(Report),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 3)]
    annotators: usize,
}

#[derive(Args)]
struct TrainLm {
    /// One training text per line.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    d_ff: usize,
    #[arg(long, default_value_t = 32)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set layers=1,2 --set mode=sae_vectors`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ExtractVectors {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Report {
    #[arg(long)]
    results: PathBuf,
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    for kv in &args.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))?;
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}

fn gen_data(a: &GenData) -> anyhow::Result<()> {
    let task = generate_synthetic_task(a.seed, a.n_train, a.n_test, a.annotators)?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    write_dataset(&a.out.join("train.txt"), &task.train)?;
    write_dataset(&a.out.join("test.txt"), &task.test)?;
    task.oracle.save(&a.out.join("oracle.txt"))?;
    write(&a.out.join("vocab.txt"), &task.tokenizer.to_vocab_text())?;
    let mut corpus = task.corpus_texts.join("\n");
    corpus.push('\n');
    write(&a.out.join("corpus.txt"), &corpus)?;
    println!(
        "wrote {} train, {} test records and {} vocabulary words to {}",
        task.train.len(),
        task.test.len(),
        task.tokenizer.len(),
        a.out.display()
    );
    Ok(())
}

fn train_lm_cmd(a: &TrainLm) -> anyhow::Result<()> {
    let tokenizer = Tokenizer::from_vocab_text(&read(&a.vocab)?)?;
    let corpus = read(&a.corpus)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenizer.encode(l))
        .collect::<Result<Vec<_>, _>>()?;
    let model = Model::init(ModelConfig {
        vocab_size: tokenizer.len(),
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_ff: a.d_ff,
        max_seq_len: a.max_seq_len,
        seed: a.seed,
    })?;
    let train = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let before = mean_cross_entropy(&model, &corpus)?;
    let trained = train_lm(&model, &corpus, &train)?;
    let after = mean_cross_entropy(&trained, &corpus)?;
    trained.save(&a.out)?;
    println!(
        "cross-entropy {before:.4} -> {after:.4}; saved {}",
        a.out.display()
    );
    Ok(())
}

fn train_sae_cmd(args: &ConfigArgs) -> anyhow::Result<()> {
    let config = load_config(args)?;
    if config.sae_dir.is_none() {
        return Err(Error::Config("train-sae needs sae_dir".into()).into());
    }
    // Load everything except the SAEs themselves.
    let mut base = config.clone();
    base.mode = Mode::ZeroShot;
    let inputs = ExperimentInputs::load(&base)?;
    let annotators = resolve_annotators(&config, &inputs.calibration);
    for &layer in &config.layers {
        let (sae_config, sae) = train_layer_sae(&config, &inputs, &annotators, layer)?;
        let path = config.sae_path(layer).expect("sae_dir checked");
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        sae.save(&sae_config, &path)?;
        println!("layer {layer}: saved {}", path.display());
    }
    Ok(())
}

fn extract_vectors_cmd(a: &ExtractVectors) -> anyhow::Result<()> {
    let config = load_config(&a.config)?;
    if !config.mode.uses_sae() {
        return Err(Error::Config(format!(
            "extract-vectors needs an sae mode, not {}",
            config.mode
        ))
        .into());
    }
    let inputs = ExperimentInputs::load(&config)?;
    let annotators = resolve_annotators(
        &config,
        &inputs.calibration[..config.n_calibration.min(inputs.calibration.len())],
    );
    std::fs::create_dir_all(&a.out).map_err(|e| io_error(&a.out, e))?;
    for &layer in &config.layers {
        let checksum = &inputs.sae_checksums[&layer];
        for sv in extract_vectors(&config, &inputs, &annotators, layer)? {
            let path = a
                .out
                .join(format!("vector_{}_layer{}.txt", sv.annotator_id, sv.layer));
            write(&path, &sv.to_text(checksum))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn run_cmd(args: &ConfigArgs) -> anyhow::Result<()> {
    let config = load_config(args)?;
    let inputs = ExperimentInputs::load(&config)?;
    let result = run_with_inputs(&config, &inputs)?;
    if let Some(out) = &config.output {
        write_outputs(out, &config, &inputs, &result)?;
    }
    print!("{}", results_csv(&result));
    Ok(())
}

fn sweep_cmd(args: &ConfigArgs) -> anyhow::Result<()> {
    let config = load_config(args)?;
    let result = layer_sweep(&config)?;
    let out = config.output.as_deref().expect("checked by layer_sweep");
    println!("{} rows written to {}", result.rows.len(), out.display());
    Ok(())
}

fn report_cmd(a: &Report) -> anyhow::Result<()> {
    let rows = parse_results_csv(&read(&a.results)?)?;
    print!("{}", summarize_results(&rows));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => e.exit_code() as u8,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainLm(a) => train_lm_cmd(a),
        Command::TrainSae(a) => train_sae_cmd(a),
        Command::ExtractVectors(a) => extract_vectors_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result.context("pluralsteer") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
