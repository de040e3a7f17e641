//! Retrieval evaluation: average precision, MAP, TREC run files, synthetic
//! collections, and the cross-collection experiment driver.

mod experiment;
mod run_file;
mod synthetic;

pub use experiment::{rank_topics, run_experiment, BundlePaths, ExperimentOutput, RunMeta};
pub use run_file::{format_sig6, read_run, write_run, RunEntry};
pub use synthetic::{generate_synthetic, PatternRule, SyntheticBundle, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};

/// Per-query average precision plus their mean.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    pub num_queries_evaluated: usize,
    pub per_query: BTreeMap<String, f64>,
}

/// Average precision of a ranking against a non-empty relevant set:
/// (1/R) * sum over ranks r holding a relevant doc of precision@r.
/// Relevant docs never retrieved contribute 0.
pub fn average_precision<T: AsRef<str>>(ranking: &[T], relevant: &BTreeSet<String>) -> f64 {
    assert!(
        !relevant.is_empty(),
        "queries without relevant docs are excluded upstream"
    );
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, doc) in ranking.iter().enumerate() {
        if relevant.contains(doc.as_ref()) {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    acc / relevant.len() as f64
}

/// Mean average precision of a run against qrels.
///
/// Queries with at least one relevant judgment are evaluated; a query
/// missing from the run scores 0. Run docnos judged nowhere count as
/// non-relevant, per standard practice.
pub fn map_score(run: &[RunEntry], qrels: &Qrels) -> Result<EvalResult> {
    run_file::validate_run(run)?;
    let mut by_query: BTreeMap<&str, Vec<(&RunEntry, u32)>> = BTreeMap::new();
    for e in run {
        by_query.entry(&e.qid).or_default().push((e, e.rank));
    }
    let mut per_query = BTreeMap::new();
    for qid in qrels.queries() {
        let relevant = qrels.relevant(qid);
        if relevant.is_empty() {
            continue;
        }
        let ap = match by_query.get(qid) {
            Some(entries) => {
                let mut ranked = entries.clone();
                ranked.sort_by_key(|(_, rank)| *rank);
                let docnos: Vec<&str> =
                    ranked.iter().map(|(e, _)| e.docno.as_str()).collect();
                average_precision(&docnos, &relevant)
            }
            None => 0.0,
        };
        per_query.insert(qid.to_string(), ap);
    }
    if per_query.is_empty() {
        return Err(Error::InvalidInput(
            "qrels contain no query with a relevant document".into(),
        ));
    }
    let map = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(EvalResult {
        map,
        num_queries_evaluated: per_query.len(),
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QrelEntry;

    fn relevant(docs: &[&str]) -> BTreeSet<String> {
        docs.iter().map(|d| d.to_string()).collect()
    }

    #[test]
    fn ap_single_relevant_at_rank_one() {
        assert_eq!(average_precision(&["A", "B"], &relevant(&["A"])), 1.0);
    }

    #[test]
    fn ap_hand_value() {
        // R=2, relevant at ranks 1 and 3: (1 + 2/3) / 2.
        let ap = average_precision(&["A", "x", "B"], &relevant(&["A", "B"]));
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn ap_no_relevant_retrieved_is_zero() {
        assert_eq!(average_precision(&["x", "y"], &relevant(&["A"])), 0.0);
    }

    #[test]
    fn ap_unretrieved_relevant_contribute_zero() {
        let ap = average_precision(&["A"], &relevant(&["A", "B", "C"]));
        assert!((ap - 1.0 / 3.0).abs() < 1e-15);
    }

    fn entry(qid: &str, docno: &str, rank: u32, score: f64) -> RunEntry {
        RunEntry {
            qid: qid.into(),
            docno: docno.into(),
            rank,
            score,
            tag: "t".into(),
        }
    }

    #[test]
    fn map_over_two_queries() {
        let qrels = Qrels::from_entries([
            QrelEntry { qid: "1".into(), docno: "A".into(), relevant: true },
            QrelEntry { qid: "2".into(), docno: "B".into(), relevant: true },
            QrelEntry { qid: "2".into(), docno: "C".into(), relevant: false },
        ])
        .unwrap();
        let run = vec![
            entry("1", "A", 1, 2.0),
            entry("2", "C", 1, 2.0),
            entry("2", "B", 2, 1.0),
        ];
        let result = map_score(&run, &qrels).unwrap();
        assert_eq!(result.num_queries_evaluated, 2);
        assert!((result.map - 0.75).abs() < 1e-15);
        assert_eq!(result.per_query["1"], 1.0);
        assert_eq!(result.per_query["2"], 0.5);
    }

    #[test]
    fn query_missing_from_run_scores_zero() {
        let qrels = Qrels::from_entries([
            QrelEntry { qid: "1".into(), docno: "A".into(), relevant: true },
            QrelEntry { qid: "2".into(), docno: "B".into(), relevant: true },
        ])
        .unwrap();
        let run = vec![entry("1", "A", 1, 1.0)];
        let result = map_score(&run, &qrels).unwrap();
        assert_eq!(result.per_query["2"], 0.0);
        assert!((result.map - 0.5).abs() < 1e-15);
    }

    #[test]
    fn query_without_relevant_docs_is_excluded() {
        let qrels = Qrels::from_entries([
            QrelEntry { qid: "1".into(), docno: "A".into(), relevant: true },
            QrelEntry { qid: "3".into(), docno: "Z".into(), relevant: false },
        ])
        .unwrap();
        let run = vec![entry("1", "A", 1, 1.0)];
        let result = map_score(&run, &qrels).unwrap();
        assert_eq!(result.num_queries_evaluated, 1);
        assert!(!result.per_query.contains_key("3"));
    }
}
