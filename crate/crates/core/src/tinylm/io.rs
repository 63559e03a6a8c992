// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use super::{Model, ModelConfig};
use crate::checkpoint::TensorFile;
use crate::error::{Error, Result};

const KIND: &str = "tinylm";

impl Model {
    pub fn to_tensor_file(&self) -> TensorFile {
        let c = self.config();
        let mut f = TensorFile::new(KIND);
        f.push_header("vocab_size", c.vocab_size);
        f.push_header("d_model", c.d_model);
        f.push_header("n_layers", c.n_layers);
        f.push_header("n_heads", c.n_heads);
        f.push_header("d_ff", c.d_ff);
        f.push_header("max_seq_len", c.max_seq_len);
        f.push_header("seed", c.seed);
        self.params()
            .for_each(|name, t| f.tensors.push((name.to_string(), t.clone())));
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        file.expect_kind(KIND)?;
        let config = ModelConfig {
            vocab_size: file.header_parse("vocab_size")?,
            d_model: file.header_parse("d_model")?,
            n_layers: file.header_parse("n_layers")?,
            n_heads: file.header_parse("n_heads")?,
            d_ff: file.header_parse("d_ff")?,
            max_seq_len: file.header_parse("max_seq_len")?,
            seed: file.header_parse("seed")?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = Model::init(ModelConfig {
            seed: 0,
            ..config.clone()
        })?
        .params()
        .clone();
        if file.tensors.len() != params.num_tensors() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.num_tensors(),
                file.tensors.len()
            )));
        }
        let mut it = file.tensors.iter();
        let mut problem = None;
        params.for_each_mut(|name, t| {
            let (fname, ft) = it.next().expect("count checked");
            if fname != name || ft.dim() != t.dim() {
                problem.get_or_insert_with(|| format!("tensor {fname} does not match {name}"));
            } else {
                t.assign(ft);
            }
        });
        if let Some(p) = problem {
            return Err(Error::Checkpoint(p));
        }
        Model::from_parts(config, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}
