// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV emission and run manifests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::{ExperimentInputs, SweepResult};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;

pub const RESULTS_FILE: &str = "results.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const MANIFEST_FILE: &str = "run_manifest.toml";

fn dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn csv_string(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

/// `mode, layer, scale, annotator` followed by the metric columns.
pub fn results_csv(result: &SweepResult) -> String {
    let mut header: Vec<String> = ["mode", "layer", "scale", "annotator"]
        .map(String::from)
        .to_vec();
    header.extend(MetricsReport::CSV_COLUMNS.map(String::from));
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.mode.to_string(),
                dash(r.layer),
                dash(r.scale),
                r.annotator.clone(),
            ];
            row.extend(r.report.csv_fields());
            row
        })
        .collect();
    csv_string(header, rows)
}

fn histogram(labels: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Predicted-label histograms: the unsteered baseline first (SAE modes),
/// then one line per sweep row.
pub fn label_distribution_report(result: &SweepResult) -> String {
    let n = result
        .rows
        .iter()
        .flat_map(|r| r.labels.iter().map(|l| l + 1))
        .chain(result.baseline_labels.iter().flatten().map(|l| l + 1))
        .max()
        .unwrap_or(0)
        .max(result.n_options);
    let mut header: Vec<String> = ["mode", "layer", "scale", "annotator", "n"]
        .map(String::from)
        .to_vec();
    header.extend((0..n).map(|k| format!("label_{k}")));
    let line = |layer: String, scale: String, who: &str, labels: &[usize]| {
        let mut row = vec![
            result.mode.to_string(),
            layer,
            scale,
            who.to_string(),
            labels.len().to_string(),
        ];
        row.extend(histogram(labels, n).iter().map(usize::to_string));
        row
    };
    let mut rows = Vec::new();
    if let Some(base) = &result.baseline_labels {
        rows.push(line("-".into(), "-".into(), "baseline", base));
    }
    for r in &result.rows {
        rows.push(line(dash(r.layer), dash(r.scale), &r.annotator, &r.labels));
    }
    csv_string(header, rows)
}

pub fn alignment_csv(result: &SweepResult) -> String {
    let header = [
        "mode",
        "layer",
        "scale",
        "annotator",
        "js_steered",
        "js_unsteered",
        "n",
    ]
    .map(String::from)
    .to_vec();
    let rows = result
        .alignment
        .iter()
        .map(|a| {
            vec![
                result.mode.to_string(),
                a.layer.to_string(),
                a.scale.to_string(),
                a.annotator.clone(),
                format!("{:.6}", a.js_steered),
                format!("{:.6}", a.js_unsteered),
                a.n.to_string(),
            ]
        })
        .collect();
    csv_string(header, rows)
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes results, labels, alignment (when present), steering vectors and
/// the run manifest into `dir`.
pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
    result: &SweepResult,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = BTreeMap::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        outputs.insert(name.clone(), crate::checkpoint::sha256_hex(text.as_bytes()));
        write(&dir.join(name), &text)
    };
    emit(RESULTS_FILE.into(), results_csv(result))?;
    emit(LABELS_FILE.into(), label_distribution_report(result))?;
    if !result.alignment.is_empty() {
        emit(ALIGNMENT_FILE.into(), alignment_csv(result))?;
    }
    for sv in &result.vectors {
        let checksum = inputs
            .sae_checksums
            .get(&sv.layer)
            .cloned()
            .unwrap_or_default();
        emit(
            format!("vector_{}_layer{}.txt", sv.annotator_id, sv.layer),
            sv.to_text(&checksum),
        )?;
    }
    let manifest = Manifest {
        config,
        inputs: inputs.checksums.iter().cloned().collect(),
        outputs,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    write(&dir.join(MANIFEST_FILE), &text)
}

/// Parsed results.csv row, for summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultLine {
    pub mode: String,
    pub layer: String,
    pub scale: String,
    pub annotator: String,
    pub ma_f1: f64,
    pub mean_js: Option<f64>,
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultLine>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("missing column {name}"),
            })
    };
    let (mode, layer, scale, who, ma, js) = (
        col("mode")?,
        col("layer")?,
        col("scale")?,
        col("annotator")?,
        col("ma_f1")?,
        col("mean_js")?,
    );
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let num = |k: usize| {
            rec[k].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number {:?}", &rec[k]),
            })
        };
        out.push(ResultLine {
            mode: rec[mode].to_string(),
            layer: rec[layer].to_string(),
            scale: rec[scale].to_string(),
            annotator: rec[who].to_string(),
            ma_f1: num(ma)?,
            mean_js: if &rec[js] == "-" {
                None
            } else {
                Some(num(js)?)
            },
        });
    }
    Ok(out)
}

/// Best row per annotator: lowest mean JS when reported, else highest macro-F1.
pub fn summarize_results(rows: &[ResultLine]) -> String {
    let mut best: BTreeMap<&str, &ResultLine> = BTreeMap::new();
    let better = |a: &ResultLine, b: &ResultLine| match (a.mean_js, b.mean_js) {
        (Some(x), Some(y)) => x < y,
        _ => a.ma_f1 > b.ma_f1,
    };
    for r in rows {
        match best.get(r.annotator.as_str()) {
            Some(cur) if !better(r, cur) => {}
            _ => {
                best.insert(&r.annotator, r);
            }
        }
    }
    let mut s = String::from("annotator\tmode\tlayer\tscale\tma_f1\tmean_js\n");
    for (who, r) in best {
        s.push_str(&format!(
            "{who}\t{}\t{}\t{}\t{:.4}\t{}\n",
            r.mode,
            r.layer,
            r.scale,
            r.ma_f1,
            r.mean_js
                .map_or_else(|| "-".to_string(), |j| format!("{j:.4}"))
        ));
    }
    s
}
