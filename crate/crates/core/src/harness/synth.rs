// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small conditional-answer task with known generating distributions.
//!
//! Each input is three context words. Every word carries a random logit
//! vector over the answers `no`, `yes`, `unsure`, and the unconditioned
//! answer distribution is the softmax of their scaled sum. Each annotator
//! prefers one answer: its coarse policy adds a fixed boost to that answer's
//! logit and its per-record granular hint adds a hint-specific boost. The
//! generator records every conditional distribution in an [`Oracle`], which
//! is the ground truth the experiments are checked against.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use super::dataset::{DatasetRecord, Feedback, FeedbackKind, GoldTarget};
use super::prompt::{FeedbackSelection, PromptTemplate};
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Distribution};
use crate::tinylm::{TokenSequence, Tokenizer};

pub const ANSWERS: [&str; 3] = ["no", "yes", "unsure"];
pub const UNSURE_LABEL: usize = 2;
pub const CONTEXT_WORDS: [&str; 10] = [
    "apple", "river", "stone", "cloud", "ember", "frost", "maple", "orbit", "prism", "tulip",
];
const WORDS_PER_INPUT: usize = 3;
const WORD_SCALE: f64 = 0.6;
const UNSURE_BIAS: f64 = -0.5;
const COARSE_SHIFT: f64 = 2.0;

struct AnnotatorSpec {
    id: &'static str,
    preferred: usize,
    hints: [(&'static str, f64); 2],
}

const ANNOTATORS: [AnnotatorSpec; 6] = [
    AnnotatorSpec {
        id: "lenient",
        preferred: 0,
        hints: [("harmless", 1.5), ("playful", 3.0)],
    },
    AnnotatorSpec {
        id: "strict",
        preferred: 1,
        hints: [("hostile", 1.5), ("rude", 3.0)],
    },
    AnnotatorSpec {
        id: "cautious",
        preferred: 2,
        hints: [("unclear", 1.5), ("vague", 3.0)],
    },
    AnnotatorSpec {
        id: "relaxed",
        preferred: 0,
        hints: [("friendly", 1.0), ("mild", 3.5)],
    },
    AnnotatorSpec {
        id: "severe",
        preferred: 1,
        hints: [("cruel", 1.0), ("nasty", 3.5)],
    },
    AnnotatorSpec {
        id: "careful",
        preferred: 2,
        hints: [("murky", 1.0), ("odd", 3.5)],
    },
];

pub const MAX_ANNOTATORS: usize = ANNOTATORS.len();

/// Exact answer distributions per (record, condition).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Oracle {
    entries: BTreeMap<(String, String), Distribution>,
}

/// `none`, `coarse:<annotator>` or `granular:<annotator>`.
pub fn condition_key(selection: Option<FeedbackSelection<'_>>) -> String {
    match selection {
        None => "none".to_string(),
        Some(s) => format!("{}:{}", s.kind, s.annotator_id),
    }
}

impl Oracle {
    pub fn insert(
        &mut self,
        record_id: &str,
        selection: Option<FeedbackSelection<'_>>,
        dist: Distribution,
    ) {
        self.entries
            .insert((record_id.to_string(), condition_key(selection)), dist);
    }

    pub fn get(
        &self,
        record_id: &str,
        selection: Option<FeedbackSelection<'_>>,
    ) -> Option<&Distribution> {
        self.entries
            .get(&(record_id.to_string(), condition_key(selection)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `record_id|condition|p1,p2,...` lines in key order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ((id, cond), d) in &self.entries {
            let ps: Vec<String> = d.probs().iter().map(|p| format!("{p:?}")).collect();
            s.push_str(&format!("{id}|{cond}|{}\n", ps.join(",")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut oracle = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split('|');
            let (Some(id), Some(cond), Some(ps), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected record_id|condition|probabilities"));
            };
            let probs = ps
                .split(',')
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad probability"))?;
            let d = Distribution::renormalized(probs, 1e-6).map_err(|e| bad(&e.to_string()))?;
            oracle.entries.insert((id.to_string(), cond.to_string()), d);
        }
        Ok(oracle)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub annotators: Vec<String>,
    pub template: PromptTemplate,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    /// One rendered training text per train record, answer included.
    pub corpus_texts: Vec<String>,
    pub corpus: Vec<TokenSequence>,
    pub tokenizer: Tokenizer,
    pub oracle: Oracle,
}

struct Generator<'a> {
    word_logits: Vec<[f64; 3]>,
    annotators: &'a [AnnotatorSpec],
}

impl Generator<'_> {
    fn base_logits(&self, words: &[usize]) -> [f64; 3] {
        let mut z = [0.0, 0.0, UNSURE_BIAS];
        for &w in words {
            for (zk, v) in z.iter_mut().zip(self.word_logits[w]) {
                *zk += WORD_SCALE * v;
            }
        }
        z
    }

    fn shifted(base: [f64; 3], label: usize, shift: f64) -> Distribution {
        let mut z = base;
        z[label] += shift;
        Distribution::renormalized(softmax_slice(&z, 1.0), 1e-9).expect("softmax output")
    }

    /// Builds one record plus its oracle entries.
    fn record(&self, id: String, rng: &mut ChaCha8Rng, oracle: &mut Oracle) -> DatasetRecord {
        let words: Vec<usize> = (0..WORDS_PER_INPUT)
            .map(|_| rng.random_range(0..CONTEXT_WORDS.len()))
            .collect();
        let base = self.base_logits(&words);
        oracle.insert(&id, None, Self::shifted(base, 0, 0.0));

        let mut feedback = Vec::new();
        let mut gold = [0.0; 3];
        for a in self.annotators {
            let (hint, hint_shift) = a.hints[rng.random_range(0..a.hints.len())];
            let coarse = Self::shifted(base, a.preferred, COARSE_SHIFT);
            for (g, p) in gold.iter_mut().zip(coarse.probs()) {
                *g += p / self.annotators.len() as f64;
            }
            let sel = |kind| {
                Some(FeedbackSelection {
                    annotator_id: a.id,
                    kind,
                })
            };
            oracle.insert(&id, sel(FeedbackKind::Coarse), coarse);
            oracle.insert(
                &id,
                sel(FeedbackKind::Granular),
                Self::shifted(base, a.preferred, hint_shift),
            );
            feedback.push(Feedback {
                annotator_id: a.id.to_string(),
                kind: FeedbackKind::Coarse,
                text: format!("be {}", a.id),
            });
            feedback.push(Feedback {
                annotator_id: a.id.to_string(),
                kind: FeedbackKind::Granular,
                text: format!("seems {hint}"),
            });
        }
        DatasetRecord {
            input_text: words
                .iter()
                .map(|&w| CONTEXT_WORDS[w])
                .collect::<Vec<_>>()
                .join(" "),
            answer_options: ANSWERS
                .iter()
                .enumerate()
                .map(|(i, s)| (i, s.to_string()))
                .collect(),
            feedback,
            gold: GoldTarget::Distribution(
                Distribution::renormalized(gold.to_vec(), 1e-9).expect("mean of distributions"),
            ),
            record_id: id,
        }
    }
}

fn sample(dist: &Distribution, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// All conditions a record can be rendered under: none, then coarse and
/// granular for each annotator.
pub fn conditions(annotators: &[String]) -> Vec<Option<FeedbackSelection<'_>>> {
    let mut out = vec![None];
    for a in annotators {
        for kind in [FeedbackKind::Coarse, FeedbackKind::Granular] {
            out.push(Some(FeedbackSelection {
                annotator_id: a,
                kind,
            }));
        }
    }
    out
}

pub fn generate_synthetic_task(
    seed: u64,
    n_train: usize,
    n_test: usize,
    n_annotators: usize,
) -> Result<SyntheticTask> {
    if !(2..=MAX_ANNOTATORS).contains(&n_annotators) {
        return Err(Error::invalid(format!(
            "n_annotators must be in 2..={MAX_ANNOTATORS}, got {n_annotators}"
        )));
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("n_train and n_test must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word_logits = (0..CONTEXT_WORDS.len())
        .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
        .collect();
    let generator = Generator {
        word_logits,
        annotators: &ANNOTATORS[..n_annotators],
    };
    let annotators: Vec<String> = generator
        .annotators
        .iter()
        .map(|a| a.id.to_string())
        .collect();
    let template = PromptTemplate::default_template();

    let mut oracle = Oracle::default();
    let width = (n_train.max(n_test)).to_string().len().max(4);
    let train: Vec<DatasetRecord> = (0..n_train)
        .map(|i| generator.record(format!("train-{i:0width$}"), &mut rng, &mut oracle))
        .collect();
    let test: Vec<DatasetRecord> = (0..n_test)
        .map(|i| generator.record(format!("test-{i:0width$}"), &mut rng, &mut oracle))
        .collect();

    let conds = conditions(&annotators);
    let mut corpus_texts = Vec::with_capacity(n_train);
    for rec in &train {
        let sel = conds[rng.random_range(0..conds.len())];
        let dist = oracle.get(&rec.record_id, sel).expect("inserted above");
        let answer = ANSWERS[sample(dist, &mut rng)];
        corpus_texts.push(template.render_one(rec, sel, answer)?);
    }

    let mut vocab_texts: Vec<String> = corpus_texts.clone();
    vocab_texts.push(ANSWERS.join(" "));
    for rec in train.iter().chain(&test) {
        for &sel in &conds {
            vocab_texts.push(template.render_one(rec, sel, "")?);
        }
    }
    let tokenizer = Tokenizer::build(vocab_texts.iter().map(String::as_str));
    let corpus = corpus_texts
        .iter()
        .map(|t| tokenizer.encode(t))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticTask {
        annotators,
        template,
        train,
        test,
        corpus_texts,
        corpus,
        tokenizer,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::dataset_to_text;

    #[test]
    fn same_seed_same_files() {
        let a = generate_synthetic_task(7, 40, 10, 3).unwrap();
        let b = generate_synthetic_task(7, 40, 10, 3).unwrap();
        assert_eq!(dataset_to_text(&a.train), dataset_to_text(&b.train));
        assert_eq!(dataset_to_text(&a.test), dataset_to_text(&b.test));
        assert_eq!(a.corpus_texts, b.corpus_texts);
        assert_eq!(a.oracle.to_text(), b.oracle.to_text());
        assert_eq!(a.tokenizer.to_vocab_text(), b.tokenizer.to_vocab_text());
        let c = generate_synthetic_task(8, 40, 10, 3).unwrap();
        assert_ne!(dataset_to_text(&a.train), dataset_to_text(&c.train));
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(generate_synthetic_task(0, 10, 10, 1).is_err());
        assert!(generate_synthetic_task(0, 10, 10, MAX_ANNOTATORS + 1).is_err());
        assert!(generate_synthetic_task(0, 0, 10, 2).is_err());
        assert!(generate_synthetic_task(0, 10, 0, 2).is_err());
    }

    #[test]
    fn records_and_oracle_are_consistent() {
        let t = generate_synthetic_task(1, 30, 20, 3).unwrap();
        assert_eq!(t.oracle.len(), 50 * 7);
        for rec in t.train.iter().chain(&t.test) {
            rec.validate().unwrap();
            let GoldTarget::Distribution(gold) = &rec.gold else {
                panic!()
            };
            let mut mean = [0.0; 3];
            for a in &t.annotators {
                let sel = Some(FeedbackSelection {
                    annotator_id: a,
                    kind: FeedbackKind::Coarse,
                });
                for (m, p) in mean
                    .iter_mut()
                    .zip(t.oracle.get(&rec.record_id, sel).unwrap().probs())
                {
                    *m += p / 3.0;
                }
            }
            for (g, m) in gold.probs().iter().zip(mean) {
                assert!((g - m).abs() < 1e-12);
            }
        }
        let back = Oracle::parse(&t.oracle.to_text()).unwrap();
        assert_eq!(back.to_text(), t.oracle.to_text());
    }

    #[test]
    fn feedback_raises_the_preferred_answer() {
        let t = generate_synthetic_task(2, 50, 1, 3).unwrap();
        let preferred = [0, 1, 2];
        let mut flips = 0;
        for rec in &t.train {
            let base = t.oracle.get(&rec.record_id, None).unwrap();
            for (a, &k) in t.annotators.iter().zip(&preferred) {
                for kind in [FeedbackKind::Coarse, FeedbackKind::Granular] {
                    let d = t
                        .oracle
                        .get(
                            &rec.record_id,
                            Some(FeedbackSelection {
                                annotator_id: a,
                                kind,
                            }),
                        )
                        .unwrap();
                    assert!(d.probs()[k] > base.probs()[k]);
                    if crate::numerics::argmax_index(d) != crate::numerics::argmax_index(base) {
                        flips += 1;
                    }
                }
            }
        }
        assert!(flips > 0);
    }

    #[test]
    fn corpus_round_trips_through_the_tokenizer() {
        let t = generate_synthetic_task(3, 20, 5, 2).unwrap();
        for (text, seq) in t.corpus_texts.iter().zip(&t.corpus) {
            assert!(!seq.tokens().contains(&crate::tinylm::UNK_ID));
            assert_eq!(seq.len(), crate::tinylm::split_words(text).len());
        }
    }

    /// Empirical answer counts against the sum of generating probabilities,
    /// with the Poisson-binomial standard error.
    #[test]
    fn corpus_answers_follow_the_generating_distributions() {
        let t = generate_synthetic_task(11, 3000, 1, 3).unwrap();
        let conds = conditions(&t.annotators);
        let mut expected = vec![[0.0f64; 3]; conds.len()];
        let mut variance = vec![[0.0f64; 3]; conds.len()];
        let mut observed = vec![[0usize; 3]; conds.len()];
        for (rec, text) in t.train.iter().zip(&t.corpus_texts) {
            let ci = conds
                .iter()
                .position(|&c| {
                    t.template
                        .render_one(rec, c, "")
                        .is_ok_and(|p| text.starts_with(&p))
                })
                .unwrap();
            let d = t.oracle.get(&rec.record_id, conds[ci]).unwrap();
            for k in 0..3 {
                expected[ci][k] += d.probs()[k];
                variance[ci][k] += d.probs()[k] * (1.0 - d.probs()[k]);
            }
            let answer = text.rsplit(':').next().unwrap();
            observed[ci][ANSWERS.iter().position(|a| *a == answer).unwrap()] += 1;
        }
        for ci in 0..conds.len() {
            for k in 0..3 {
                let se = variance[ci][k].sqrt();
                let diff = (observed[ci][k] as f64 - expected[ci][k]).abs();
                assert!(
                    diff <= 3.0 * se,
                    "condition {ci} answer {k}: {diff} vs se {se}"
                );
            }
        }
    }
}
