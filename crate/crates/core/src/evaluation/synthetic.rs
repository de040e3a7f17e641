//! Seed-deterministic synthetic collections for desk-scale experiments.
//!
//! Each query gets its own query term and an equal number of relevant and
//! non-relevant documents. Under [`PatternRule::PositionSpread`] the two
//! classes share term frequency, document length, and document frequency —
//! relevance is decidable only from the occurrence-position pattern
//! (relevant: occurrences spread evenly; non-relevant: an adjacent run at a
//! random late offset). Under [`PatternRule::TermFrequency`] the classes
//! instead differ in term frequency, the standard signal.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::corpus::{
    write_qrels, write_topics, write_trec_documents, QrelEntry, RawDocument, Topic,
};
use crate::error::{Error, Result};
use crate::evaluation::BundlePaths;

/// Mapping from relevance class to the query term's occurrence pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PatternRule {
    /// Identical tf in both classes; relevant docs spread the occurrences
    /// evenly, non-relevant docs bunch them adjacently at a random offset in
    /// the late half of the document.
    PositionSpread,
    /// Relevance correlates with term frequency; positions are random.
    TermFrequency {
        relevant_tf: usize,
        nonrelevant_tf: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    pub docs_per_class: usize,
    pub doc_length: usize,
    pub vocab_size: usize,
    /// Query-term tf shared by both classes under `PositionSpread`.
    pub query_term_tf: usize,
    pub rule: PatternRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_queries: 40,
            docs_per_class: 50,
            doc_length: 200,
            vocab_size: 200,
            query_term_tf: 4,
            rule: PatternRule::PositionSpread,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 {
            return Ok(());
        }
        if self.vocab_size <= self.num_queries {
            return Err(Error::InvalidInput(format!(
                "vocabulary of {} leaves no filler terms for {} queries",
                self.vocab_size, self.num_queries
            )));
        }
        if self.docs_per_class == 0 {
            return Ok(());
        }
        match self.rule {
            PatternRule::PositionSpread => {
                if self.query_term_tf == 0 || 2 * self.query_term_tf > self.doc_length {
                    return Err(Error::InvalidInput(format!(
                        "position patterns with tf {} do not fit a document of length {}",
                        self.query_term_tf, self.doc_length
                    )));
                }
            }
            PatternRule::TermFrequency {
                relevant_tf,
                nonrelevant_tf,
            } => {
                if relevant_tf == 0 || nonrelevant_tf == 0 {
                    return Err(Error::InvalidInput("term frequencies must be >= 1".into()));
                }
                if relevant_tf.max(nonrelevant_tf) > self.doc_length {
                    return Err(Error::InvalidInput(format!(
                        "tf {} exceeds document length {}",
                        relevant_tf.max(nonrelevant_tf),
                        self.doc_length
                    )));
                }
                if relevant_tf == nonrelevant_tf {
                    return Err(Error::InvalidInput(
                        "relevant and non-relevant tf coincide; no signal to learn".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A generated collection with its topics and judgments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticBundle {
    pub documents: Vec<RawDocument>,
    pub topics: Vec<Topic>,
    pub qrels: Vec<QrelEntry>,
}

impl SyntheticBundle {
    /// Writes `docs.trec`, `topics.trec`, and `qrels.txt` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<BundlePaths> {
        let paths = BundlePaths {
            docs: dir.join("docs.trec"),
            topics: dir.join("topics.trec"),
            qrels: dir.join("qrels.txt"),
        };
        write_atomic(&paths.docs, write_trec_documents(&self.documents).as_bytes())?;
        write_atomic(&paths.topics, write_topics(&self.topics).as_bytes())?;
        write_atomic(&paths.qrels, write_qrels(&self.qrels).as_bytes())?;
        Ok(paths)
    }
}

fn spread_positions(tf: usize, len: usize) -> Vec<usize> {
    (0..tf).map(|m| ((2 * m + 1) * len) / (2 * tf)).collect()
}

/// Generates the collection deterministically from the spec's seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let mut bundle = SyntheticBundle {
        documents: Vec::new(),
        topics: Vec::new(),
        qrels: Vec::new(),
    };
    if spec.num_queries == 0 {
        return Ok(bundle);
    }

    let width = spec.vocab_size.saturating_sub(1).to_string().len().max(3);
    let vocab: Vec<String> = (0..spec.vocab_size)
        .map(|i| format!("t{i:0width$}"))
        .collect();
    let filler = &vocab[spec.num_queries..];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for q in 0..spec.num_queries {
        let qid = format!("q{:03}", q + 1);
        let term = &vocab[q];
        bundle.topics.push(Topic {
            qid: qid.clone(),
            terms: vec![term.clone()],
        });
        if spec.docs_per_class == 0 {
            continue;
        }

        let mut classes = vec![true; spec.docs_per_class];
        classes.extend(vec![false; spec.docs_per_class]);
        classes.shuffle(&mut rng);

        for (j, &is_relevant) in classes.iter().enumerate() {
            let docno = format!("{qid}d{j:04}");
            let len = spec.doc_length;
            let positions: Vec<usize> = match spec.rule {
                PatternRule::PositionSpread => {
                    if is_relevant {
                        spread_positions(spec.query_term_tf, len)
                    } else {
                        let offset = rng.gen_range(len / 2..=len - spec.query_term_tf);
                        (offset..offset + spec.query_term_tf).collect()
                    }
                }
                PatternRule::TermFrequency {
                    relevant_tf,
                    nonrelevant_tf,
                } => {
                    let tf = if is_relevant { relevant_tf } else { nonrelevant_tf };
                    let mut idx = rand::seq::index::sample(&mut rng, len, tf).into_vec();
                    idx.sort_unstable();
                    idx
                }
            };
            let mut slots: Vec<Option<&str>> = vec![None; len];
            for &p in &positions {
                slots[p] = Some(term);
            }
            for slot in slots.iter_mut() {
                if slot.is_none() {
                    *slot = Some(&filler[rng.gen_range(0..filler.len())]);
                }
            }
            let tokens: Vec<&str> = slots.into_iter().map(|s| s.expect("slot filled")).collect();
            // The generated tf must equal the rule's tf for this class.
            let tf_check = tokens.iter().filter(|t| **t == *term).count();
            if tf_check != positions.len() {
                return Err(Error::InvalidInput(format!(
                    "generated tf {} disagrees with pattern tf {}",
                    tf_check,
                    positions.len()
                )));
            }
            bundle.documents.push(RawDocument {
                docno: docno.clone(),
                text: tokens.join(" "),
            });
            bundle.qrels.push(QrelEntry {
                qid: qid.clone(),
                docno,
                relevant: is_relevant,
            });
        }
    }
    Ok(bundle)
}
