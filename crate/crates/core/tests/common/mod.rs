//! Shared oracles and fixtures for the integration suites. Everything here
//! is independent of the library's computation paths it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;

use posrank::corpus::{QrelEntry, Qrels, RawDocument, TokenizerConfig, Topic};
use posrank::index::PositionalIndex;
use posrank::models::ModelParams;
use posrank::training::{loss_and_gradient, ranknet_loss, TrainSetup, Triple};
use posrank::transport::QuantileVector;

/// Minimum inertia over all partitions of `points` into at most `k`
/// non-empty groups, with the group cost taken around the component mean in
/// the same scaled-L2 (W2) geometry the library uses.
pub fn exhaustive_partition_inertia(points: &[QuantileVector<f64>], k: usize) -> f64 {
    let n = points.len();
    assert!(n >= 1 && n <= 10, "exhaustive search is for tiny instances");
    let d = points[0].dim();
    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; n];

    fn cost(points: &[QuantileVector<f64>], members: &[usize], d: usize) -> f64 {
        let mut mean = vec![0.0; d];
        for &i in members {
            for (m, &v) in mean.iter_mut().zip(points[i].values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        let mut total = 0.0;
        for &i in members {
            let mut acc = 0.0;
            for (&v, &m) in points[i].values().iter().zip(&mean) {
                acc += (v - m) * (v - m);
            }
            total += acc / d as f64;
        }
        total
    }

    // Restricted-growth enumeration of set partitions into <= k groups.
    fn recurse(
        points: &[QuantileVector<f64>],
        assignment: &mut Vec<usize>,
        at: usize,
        used: usize,
        k: usize,
        d: usize,
        best: &mut f64,
    ) {
        let n = assignment.len();
        if at == n {
            let mut total = 0.0;
            for g in 0..used {
                let members: Vec<usize> =
                    (0..n).filter(|&i| assignment[i] == g).collect();
                total += cost(points, &members, d);
                if total >= *best {
                    return;
                }
            }
            if total < *best {
                *best = total;
            }
            return;
        }
        for g in 0..used.min(k) {
            assignment[at] = g;
            recurse(points, assignment, at + 1, used, k, d, best);
        }
        if used < k {
            assignment[at] = used;
            recurse(points, assignment, at + 1, used + 1, k, d, best);
        }
    }

    recurse(points, &mut assignment, 1, 1, k, d, &mut best);
    best
}

/// Central finite-difference gradient of the RankNet loss at the model's
/// current parameters.
pub fn fd_gradient(
    setup: &TrainSetup<f64>,
    params: &ModelParams<f64>,
    triples: &[Triple],
    h: f64,
) -> Vec<f64> {
    let flat = params.flatten();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let mut probe = params.clone();
        let mut plus = flat.clone();
        plus[i] += h;
        probe.assign_flat(&plus).unwrap();
        let up = ranknet_loss(setup, &probe, triples).unwrap();
        let mut minus = flat.clone();
        minus[i] -= h;
        probe.assign_flat(&minus).unwrap();
        let down = ranknet_loss(setup, &probe, triples).unwrap();
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Vector-level relative error between the analytic and FD gradients.
pub fn gradient_relative_error(
    setup: &TrainSetup<f64>,
    params: &ModelParams<f64>,
    triples: &[Triple],
    h: f64,
) -> f64 {
    let (_, analytic) = loss_and_gradient(setup, params, triples).unwrap();
    let fd = fd_gradient(setup, params, triples, h);
    let diff: f64 = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = fd.iter().map(|g| g * g).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

pub fn doc(docno: &str, text: &str) -> RawDocument {
    RawDocument {
        docno: docno.into(),
        text: text.into(),
    }
}

/// A small judged collection with position-pattern structure, for gradient
/// and descent tests.
pub fn judged_fixture() -> (PositionalIndex, Vec<Topic>, Qrels) {
    let docs = vec![
        doc("R1", "fox pad pad pad fox pad pad pad fox pad pad fox"),
        doc("R2", "pad fox pad pad pad fox pad pad fox pad fox pad"),
        doc("R3", "fox pad pad fox pad pad pad fox pad pad fox pad"),
        doc("N1", "pad pad pad pad pad pad pad fox fox fox fox pad"),
        doc("N2", "pad pad pad pad pad pad pad pad fox fox fox fox"),
        doc("N3", "pad pad pad pad pad pad fox fox fox fox pad pad"),
        doc("F1", "calm sea mist calm sea mist calm sea mist calm sea mist"),
        doc("F2", "green hill path green hill path green hill path green hill path"),
    ];
    let index = PositionalIndex::build(&docs, TokenizerConfig::default()).unwrap();
    let topics = vec![Topic {
        qid: "q1".into(),
        terms: vec!["fox".into()],
    }];
    let entries = [
        ("R1", true),
        ("R2", true),
        ("R3", true),
        ("N1", false),
        ("N2", false),
        ("N3", false),
    ]
    .into_iter()
    .map(|(d, rel)| QrelEntry {
        qid: "q1".into(),
        docno: d.into(),
        relevant: rel,
    });
    let qrels = Qrels::from_entries(entries).unwrap();
    (index, topics, qrels)
}

/// All distinct docnos judged relevant in a qrels set, per query.
pub fn relevant_set(qrels: &Qrels, qid: &str) -> BTreeSet<String> {
    qrels.relevant(qid)
}
