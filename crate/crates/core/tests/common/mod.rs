// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic-task fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pluralsteer::harness::{
    generate_synthetic_task, write_dataset, ExperimentConfig, Mode, SyntheticTask,
};
use pluralsteer::tinylm::{train_lm, Model, ModelConfig, TrainConfig};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub task: SyntheticTask,
    pub model: Model,
}

/// The model used by the end-to-end tests.
pub fn desk_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 64,
        n_layers: 4,
        n_heads: 4,
        d_ff: 128,
        max_seq_len: 32,
        seed: 0,
    }
}

pub fn small_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 32,
        seed: 3,
    }
}

pub fn desk_training() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        lr: 0.05,
        batch_size: 32,
        seed: 0,
    }
}

impl Fixture {
    /// Generates the task and writes its files; trains the model when
    /// `training` is given.
    pub fn build(
        seed: u64,
        sizes: (usize, usize),
        n_annotators: usize,
        model: impl FnOnce(usize) -> ModelConfig,
        training: Option<TrainConfig>,
    ) -> Self {
        let task = generate_synthetic_task(seed, sizes.0, sizes.1, n_annotators).unwrap();
        let mut model = Model::init(model(task.tokenizer.len())).unwrap();
        if let Some(t) = training {
            model = train_lm(&model, &task.corpus, &t).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("train.txt"), &task.train).unwrap();
        write_dataset(&dir.path().join("test.txt"), &task.test).unwrap();
        task.oracle.save(&dir.path().join("oracle.txt")).unwrap();
        std::fs::write(dir.path().join("vocab.txt"), task.tokenizer.to_vocab_text()).unwrap();
        model.save(&dir.path().join("lm.ckpt")).unwrap();
        Self { dir, task, model }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            dataset: Some(self.path("test.txt")),
            calibration: Some(self.path("train.txt")),
            model: Some(self.path("lm.ckpt")),
            vocab: Some(self.path("vocab.txt")),
            oracle: Some(self.path("oracle.txt")),
            sae_dir: Some(self.path("sae")),
            ..ExperimentConfig::default()
        }
    }
}
