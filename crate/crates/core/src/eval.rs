// SPDX-License-Identifier: MIT OR Apache-2.0

//! Answer isolation, greedy labeling and the F1 / JS metric suites.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{argmax_index, argmax_slice, js_distance, Distribution, LogitVector};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_ANSWER_TEMPERATURE: f64 = 0.4;

/// Which vocabulary tokens spell each answer choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerMapping {
    choices: Vec<(usize, Vec<usize>)>,
    unsure_label: usize,
}

impl AnswerMapping {
    pub fn new(choices: Vec<(usize, Vec<usize>)>, unsure_label: usize) -> Result<Self> {
        if choices.is_empty() {
            return Err(Error::invalid("answer mapping has no choices"));
        }
        let mut labels = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for (label, ids) in &choices {
            if ids.is_empty() {
                return Err(Error::invalid(format!("choice {label} has no tokens")));
            }
            if !labels.insert(*label) {
                return Err(Error::invalid(format!("duplicate choice label {label}")));
            }
            for &t in ids {
                if !tokens.insert(t) {
                    return Err(Error::invalid(format!(
                        "token {t} maps to more than one choice"
                    )));
                }
            }
        }
        Ok(Self {
            choices,
            unsure_label,
        })
    }

    pub fn choices(&self) -> &[(usize, Vec<usize>)] {
        &self.choices
    }

    pub fn unsure_label(&self) -> usize {
        self.unsure_label
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Label of the choice at `index` (the order of the answer distribution).
    pub fn label_at(&self, index: usize) -> usize {
        self.choices[index].0
    }

    pub fn label_of_token(&self, token: usize) -> Option<usize> {
        self.choices
            .iter()
            .find(|(_, ids)| ids.contains(&token))
            .map(|(label, _)| *label)
    }
}

/// Answer distribution gathered from the top-k tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerExtraction {
    pub distribution: Distribution,
    /// False when no answer token made the top-k; the distribution is then uniform.
    pub valid: bool,
}

pub fn extract_answer_distribution(
    logits: &LogitVector,
    mapping: &AnswerMapping,
    top_k: usize,
    temperature: f64,
) -> Result<AnswerExtraction> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be positive"));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let values = logits.as_slice();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(top_k);

    let gathered: Vec<f64> = mapping
        .choices
        .iter()
        .map(|(_, ids)| {
            order
                .iter()
                .filter(|t| ids.contains(t))
                .map(|&t| values[t])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let max = gathered.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(AnswerExtraction {
            distribution: Distribution::uniform(mapping.len())?,
            valid: false,
        });
    }
    let exps: Vec<f64> = gathered
        .iter()
        .map(|g| ((g - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(AnswerExtraction {
        distribution: Distribution::renormalized(exps.into_iter().map(|e| e / z).collect(), 1e-9)?,
        valid: true,
    })
}

/// Label of the full-vocabulary argmax token, or the unsure label if that
/// token is not an answer.
pub fn greedy_label(logits: &LogitVector, mapping: &AnswerMapping) -> usize {
    let top = argmax_slice(logits.as_slice());
    mapping.label_of_token(top).unwrap_or(mapping.unsure_label)
}

/// Index of the most probable choice.
pub fn majority_label(dist: &Distribution) -> usize {
    argmax_index(dist)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Label(usize),
    Distribution(Distribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub record_id: String,
    pub predicted_label: usize,
    pub predicted_distribution: Distribution,
    pub gold: Gold,
    /// Set when answer extraction fell back to uniform.
    pub invalid: bool,
}

impl PredictionRecord {
    /// Gold label, taking the majority for distributional gold.
    pub fn gold_label(&self) -> usize {
        match &self.gold {
            Gold::Label(l) => *l,
            Gold::Distribution(d) => majority_label(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub binary_f1: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub mean_js: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub sample_count: usize,
    pub invalid_rate: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn f1_from(c: Counts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// F1 statistics from predicted vs gold labels. Distributional records are
/// scored against their majority label. Classes with no gold and no
/// predicted instances count as f1 = 0 in the macro average.
pub fn f1_suite(
    preds: &[PredictionRecord],
    positive_classes: &BTreeSet<usize>,
    binary_class: Option<usize>,
) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if positive_classes.is_empty() {
        return Err(Error::invalid("positive class set is empty"));
    }
    let mut counts: BTreeMap<usize, Counts> = BTreeMap::new();
    for &c in positive_classes.iter().chain(binary_class.as_ref()) {
        counts.entry(c).or_default();
    }
    for r in preds {
        let (g, p) = (r.gold_label(), r.predicted_label);
        if g == p {
            counts.entry(g).or_default().tp += 1;
        } else {
            counts.entry(g).or_default().fn_ += 1;
            counts.entry(p).or_default().fp += 1;
        }
    }
    let per_class = counts
        .iter()
        .map(|(&label, &c)| ClassMetrics {
            label,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: f1_from(c),
            support: c.tp + c.fn_,
        })
        .collect();
    let macro_f1 = positive_classes
        .iter()
        .map(|c| f1_from(counts[c]))
        .sum::<f64>()
        / positive_classes.len() as f64;
    let pooled = positive_classes.iter().fold(Counts::default(), |acc, c| {
        let k = counts[c];
        Counts {
            tp: acc.tp + k.tp,
            fp: acc.fp + k.fp,
            fn_: acc.fn_ + k.fn_,
        }
    });
    let invalid = preds.iter().filter(|r| r.invalid).count();
    Ok(MetricsReport {
        binary_f1: binary_class.map(|b| f1_from(counts[&b])),
        macro_f1,
        micro_f1: f1_from(pooled),
        mean_js: None,
        per_class,
        sample_count: preds.len(),
        invalid_rate: invalid as f64 / preds.len() as f64,
    })
}

/// Mean JS distance between predicted and gold distributions, summed in record order.
pub fn js_suite(preds: &[PredictionRecord]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let mut total = 0.0;
    for r in preds {
        let Gold::Distribution(gold) = &r.gold else {
            return Err(Error::invalid(format!(
                "record {} has a label gold; js needs distributional gold",
                r.record_id
            )));
        };
        total += js_distance(&r.predicted_distribution, gold)?;
    }
    Ok(total / preds.len() as f64)
}

/// F1 suite plus mean JS when every record has distributional gold.
pub fn evaluate(
    preds: &[PredictionRecord],
    positive_classes: &BTreeSet<usize>,
    binary_class: Option<usize>,
) -> Result<MetricsReport> {
    let mut report = f1_suite(preds, positive_classes, binary_class)?;
    if preds
        .iter()
        .all(|r| matches!(r.gold, Gold::Distribution(_)))
    {
        report.mean_js = Some(js_suite(preds)?);
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub const CSV_COLUMNS: [&'static str; 6] =
        ["bin_f1", "ma_f1", "mi_f1", "mean_js", "invalid_rate", "n"];

    pub fn csv_fields(&self) -> [String; 6] {
        [
            opt(self.binary_f1),
            format!("{:.6}", self.macro_f1),
            format!("{:.6}", self.micro_f1),
            opt(self.mean_js),
            format!("{:.6}", self.invalid_rate),
            self.sample_count.to_string(),
        ]
    }

    pub fn csv_row(&self) -> String {
        self.csv_fields().join(",")
    }

    /// `key=value` lines, headline metrics first, then one line per class.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::CSV_COLUMNS.iter().zip(self.csv_fields()) {
            let _ = writeln!(s, "{k}={v}");
        }
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "class.{}=precision:{:.6} recall:{:.6} f1:{:.6} support:{}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    fn yes_no() -> AnswerMapping {
        AnswerMapping::new(vec![(0, vec![2]), (1, vec![3, 5]), (2, vec![4])], 2).unwrap()
    }

    fn rec(gold: usize, pred: usize) -> PredictionRecord {
        PredictionRecord {
            record_id: String::new(),
            predicted_label: pred,
            predicted_distribution: Distribution::one_hot(3, pred.min(2)).unwrap(),
            gold: Gold::Label(gold),
            invalid: false,
        }
    }

    fn classes(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn mapping_validation() {
        assert!(AnswerMapping::new(vec![], 0).is_err());
        assert!(AnswerMapping::new(vec![(0, vec![])], 0).is_err());
        assert!(AnswerMapping::new(vec![(0, vec![1]), (0, vec![2])], 0).is_err());
        assert!(AnswerMapping::new(vec![(0, vec![1]), (1, vec![1])], 0).is_err());
    }

    #[test]
    fn extraction_equal_logits_is_even() {
        let m = AnswerMapping::new(vec![(0, vec![0]), (1, vec![1])], 1).unwrap();
        let out = extract_answer_distribution(&logits(&[2.0, 2.0, 0.0]), &m, 10, 0.4).unwrap();
        assert_eq!(out.distribution.probs(), &[0.5, 0.5]);
        assert!(out.valid);
    }

    #[test]
    fn extraction_absent_choice_gets_zero() {
        let m = AnswerMapping::new(vec![(0, vec![0]), (1, vec![3])], 1).unwrap();
        let out = extract_answer_distribution(&logits(&[5.0, 4.0, 3.0, -1.0]), &m, 2, 0.4).unwrap();
        assert_eq!(out.distribution.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn extraction_hand_walked_fixture() {
        // Vocab of 6, top-3 = tokens 1 (3.0), 3 (2.0), 5 (1.5).
        // Choice 0 = {1, 2} gathers 3.0, choice 1 = {3, 5} gathers max(2.0, 1.5),
        // choice 2 = {4} is absent.
        let m = yes_no_six();
        let out = extract_answer_distribution(&logits(&[0.0, 3.0, 1.0, 2.0, 0.5, 1.5]), &m, 3, 0.4)
            .unwrap();
        let a = (3.0f64 / 0.4).exp();
        let b = (2.0f64 / 0.4).exp();
        let expected = [a / (a + b), b / (a + b), 0.0];
        for (p, e) in out.distribution.probs().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        assert!((out.distribution.probs()[0] - 0.924_141_8).abs() < 1e-6);
    }

    fn yes_no_six() -> AnswerMapping {
        AnswerMapping::new(vec![(0, vec![1, 2]), (1, vec![3, 5]), (2, vec![4])], 2).unwrap()
    }

    #[test]
    fn extraction_without_answers_is_uniform_and_invalid() {
        let out = extract_answer_distribution(
            &logits(&[9.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            &yes_no_six(),
            1,
            0.4,
        )
        .unwrap();
        assert!(!out.valid);
        assert_eq!(out.distribution, Distribution::uniform(3).unwrap());
        assert!(extract_answer_distribution(&logits(&[1.0]), &yes_no_six(), 0, 0.4).is_err());
    }

    #[test]
    fn greedy_label_rules() {
        let m = yes_no();
        assert_eq!(
            greedy_label(&logits(&[0.0, 0.0, 0.0, 0.0, 0.0, 7.0]), &m),
            1
        );
        assert_eq!(
            greedy_label(&logits(&[9.0, 0.0, 0.0, 1.0, 0.0, 0.0]), &m),
            2
        );
        // Token 1 (non-answer) and token 2 (answer "0") tie; lowest index wins.
        assert_eq!(
            greedy_label(&logits(&[0.0, 4.0, 4.0, 0.0, 0.0, 0.0]), &m),
            2
        );
        assert_eq!(
            greedy_label(&logits(&[0.0, 0.0, 4.0, 4.0, 0.0, 0.0]), &m),
            0
        );
    }

    #[test]
    fn four_sample_fixture() {
        let preds: Vec<_> = [(1, 1), (1, 0), (0, 0), (2, 2)]
            .iter()
            .map(|&(g, p)| rec(g, p))
            .collect();
        let r = f1_suite(&preds, &classes(&[1, 2]), Some(1)).unwrap();
        // class 1: tp 1, fn 1 -> f1 2/3; class 2: tp 1 -> 1; pooled tp 2, fn 1 -> 4/5.
        assert!((r.binary_f1.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 5.0 / 6.0).abs() < 1e-12);
        assert!((r.micro_f1 - 0.8).abs() < 1e-12);
        let c0 = &r.per_class[0];
        assert_eq!((c0.label, c0.support), (0, 1));
        assert!((c0.precision - 0.5).abs() < 1e-12 && (c0.recall - 1.0).abs() < 1e-12);
        assert_eq!(r.sample_count, 4);
    }

    #[test]
    fn perfect_and_disjoint() {
        let preds: Vec<_> = [0, 1, 2, 1].iter().map(|&g| rec(g, g)).collect();
        let r = f1_suite(&preds, &classes(&[1, 2]), Some(1)).unwrap();
        assert_eq!((r.binary_f1, r.macro_f1, r.micro_f1), (Some(1.0), 1.0, 1.0));
        let preds = vec![rec(1, 0), rec(1, 2)];
        assert_eq!(
            f1_suite(&preds, &classes(&[1, 2]), Some(1))
                .unwrap()
                .binary_f1,
            Some(0.0)
        );
        assert!(f1_suite(&[], &classes(&[1]), None).is_err());
    }

    #[test]
    fn zero_support_class_counts_as_zero() {
        let preds = vec![rec(1, 1)];
        let r = f1_suite(&preds, &classes(&[1, 2]), None).unwrap();
        assert!((r.macro_f1 - 0.5).abs() < 1e-12);
    }

    /// Per-class counting by direct scans, one pass per quantity.
    fn brute_f1(gold: &[usize], pred: &[usize], class: usize) -> f64 {
        let tp = gold
            .iter()
            .zip(pred)
            .filter(|(g, p)| **g == class && **p == class)
            .count();
        let predicted = pred.iter().filter(|p| **p == class).count();
        let actual = gold.iter().filter(|g| **g == class).count();
        let prec = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let rec = if actual == 0 {
            0.0
        } else {
            tp as f64 / actual as f64
        };
        if prec + rec == 0.0 {
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        }
    }

    #[test]
    fn exhaustive_oracle_small_cases() {
        let pos = classes(&[1, 2]);
        for n in 1..=4usize {
            for code in 0..3usize.pow(2 * n as u32) {
                let mut c = code;
                let mut digit = || {
                    let d = c % 3;
                    c /= 3;
                    d
                };
                let gold: Vec<usize> = (0..n).map(|_| digit()).collect();
                let pred: Vec<usize> = (0..n).map(|_| digit()).collect();
                let preds: Vec<_> = gold.iter().zip(&pred).map(|(&g, &p)| rec(g, p)).collect();
                let r = f1_suite(&preds, &pos, Some(1)).unwrap();
                let b1 = brute_f1(&gold, &pred, 1);
                let b2 = brute_f1(&gold, &pred, 2);
                assert!((r.binary_f1.unwrap() - b1).abs() < 1e-12);
                assert!((r.macro_f1 - (b1 + b2) / 2.0).abs() < 1e-12);
                let tp = gold
                    .iter()
                    .zip(&pred)
                    .filter(|(g, p)| g == p && **g != 0)
                    .count() as f64;
                let pp = pred.iter().filter(|p| **p != 0).count() as f64;
                let ap = gold.iter().filter(|g| **g != 0).count() as f64;
                let (mp, mr) = (
                    if pp == 0.0 { 0.0 } else { tp / pp },
                    if ap == 0.0 { 0.0 } else { tp / ap },
                );
                let micro = if mp + mr == 0.0 {
                    0.0
                } else {
                    2.0 * mp * mr / (mp + mr)
                };
                assert!((r.micro_f1 - micro).abs() < 1e-12, "{gold:?} {pred:?}");
            }
        }
    }

    #[test]
    fn single_positive_class_micro_equals_binary() {
        let preds = vec![rec(1, 1), rec(0, 1), rec(1, 0), rec(2, 2), rec(1, 1)];
        let r = f1_suite(&preds, &classes(&[1]), Some(1)).unwrap();
        assert_eq!(r.micro_f1, r.binary_f1.unwrap());
    }

    fn drec(pred: &[f64], gold: &[f64]) -> PredictionRecord {
        let p = Distribution::new(pred.to_vec()).unwrap();
        PredictionRecord {
            record_id: "r".into(),
            predicted_label: majority_label(&p),
            predicted_distribution: p,
            gold: Gold::Distribution(Distribution::new(gold.to_vec()).unwrap()),
            invalid: false,
        }
    }

    #[test]
    fn js_suite_examples() {
        assert_eq!(js_suite(&[drec(&[0.2, 0.8], &[0.2, 0.8])]).unwrap(), 0.0);
        assert!((js_suite(&[drec(&[1.0, 0.0], &[0.0, 1.0])]).unwrap() - 1.0).abs() < 1e-12);
        let a = drec(&[0.3, 0.7], &[0.6, 0.4]);
        let b = drec(&[0.5, 0.5], &[0.9, 0.1]);
        let d1 = js_distance(
            &a.predicted_distribution,
            &Distribution::new(vec![0.6, 0.4]).unwrap(),
        )
        .unwrap();
        let d2 = js_distance(
            &b.predicted_distribution,
            &Distribution::new(vec![0.9, 0.1]).unwrap(),
        )
        .unwrap();
        assert!((js_suite(&[a, b]).unwrap() - (d1 + d2) / 2.0).abs() < 1e-15);
        assert!(js_suite(&[rec(1, 1)]).is_err());
    }

    #[test]
    fn evaluate_adds_js_and_invalid_rate() {
        let mut a = drec(&[0.1, 0.6, 0.3], &[0.2, 0.5, 0.3]);
        a.invalid = true;
        let b = drec(&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]);
        let r = evaluate(&[a, b], &classes(&[1, 2]), Some(1)).unwrap();
        assert!(r.mean_js.is_some());
        assert_eq!(r.invalid_rate, 0.5);
        assert!(evaluate(&[rec(1, 1)], &classes(&[1, 2]), Some(1))
            .unwrap()
            .mean_js
            .is_none());
    }

    #[test]
    fn report_serialization() {
        let r = f1_suite(&[rec(1, 1), rec(2, 1)], &classes(&[1, 2]), Some(1)).unwrap();
        assert_eq!(r.csv_row(), "0.666667,0.333333,0.500000,-,0.000000,2");
        let kv = r.to_kv_text();
        assert!(kv.starts_with("bin_f1=0.666667\nma_f1=0.333333\n"));
        assert!(kv.contains("class.2=precision:0.000000 recall:0.000000 f1:0.000000 support:1\n"));
    }

    proptest! {
        #[test]
        fn metrics_ignore_record_order(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..20)) {
            let preds: Vec<_> = pairs.iter().map(|&(g, p)| rec(g, p)).collect();
            let mut rev = preds.clone();
            rev.reverse();
            let pos = classes(&[1, 2]);
            prop_assert_eq!(f1_suite(&preds, &pos, Some(1)).unwrap(), f1_suite(&rev, &pos, Some(1)).unwrap());
        }

        #[test]
        fn extraction_is_always_a_distribution(v in prop::collection::vec(-20.0f64..20.0, 6), k in 1usize..8) {
            let out = extract_answer_distribution(&logits(&v), &yes_no_six(), k, 0.4).unwrap();
            prop_assert!((out.distribution.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
