//! Cross-collection experiment driver: fit clusters and train on one bundle,
//! score and evaluate on another (test-side representations are computed
//! against the train-side centroids).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::clustering::{collect_cluster_points, fit_kmeans, save_clusters, ClusterModel};
use crate::config::ExperimentConfig;
use crate::corpus::{parse_qrels, parse_topics, parse_trec_documents, Qrels, Topic};
use crate::error::{Error, Result};
use crate::evaluation::{map_score, write_run, EvalResult, RunEntry};
use crate::index::PositionalIndex;
use crate::models::{
    save_checkpoint, ModelParams, ModelVariant, OnTheFlyReps, Ranker, RepStore,
};
use crate::training::{train, TrainLog, TrainSetup};

/// Locations of one collection's documents, topics, and qrels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundlePaths {
    pub docs: PathBuf,
    pub topics: PathBuf,
    pub qrels: PathBuf,
}

/// What an experiment produced.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub eval: EvalResult,
    pub train_log: Option<TrainLog>,
    pub run_path: PathBuf,
    pub config_hash: String,
    /// Train and test bundles were the same paths.
    pub self_test: bool,
}

/// Sidecar metadata written next to a run file.
#[derive(Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub tag: String,
    pub cutoff: usize,
}

pub(crate) struct Bundle {
    pub index: PositionalIndex,
    pub topics: Vec<Topic>,
    pub qrels: Qrels,
}

pub(crate) fn load_bundle(paths: &BundlePaths, config: &ExperimentConfig) -> Result<Bundle> {
    let read = |p: &Path| -> Result<Vec<u8>> {
        std::fs::read(p).map_err(|e| Error::artifact(p, format!("read failed: {e}")))
    };
    let documents = parse_trec_documents(&read(&paths.docs)?)?;
    let topics = parse_topics(&read(&paths.topics)?, &config.tokenizer)?;
    let qrels = Qrels::from_entries(parse_qrels(&read(&paths.qrels)?)?)?;
    Ok(Bundle {
        index: PositionalIndex::build(&documents, config.tokenizer.clone())?,
        topics,
        qrels,
    })
}

/// Ranks every topic and assembles run entries (rank 1-based, ties already
/// resolved by docno inside `Ranker::rank`).
pub fn rank_topics(
    ranker: &Ranker<'_, f64>,
    topics: &[Topic],
    cutoff: usize,
    tag: &str,
) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    for topic in topics {
        let ranked = ranker.rank(&topic.terms, cutoff)?;
        for (i, (doc, score)) in ranked.into_iter().enumerate() {
            entries.push(RunEntry {
                qid: topic.qid.clone(),
                docno: ranker.index.docno(doc)?.to_string(),
                rank: (i + 1) as u32,
                score,
                tag: tag.to_string(),
            });
        }
    }
    Ok(entries)
}

/// Runs the full pipeline: index the train bundle, fit clusters and train
/// (as the variant requires), then score the test bundle and evaluate.
///
/// Artifacts land in `workdir`: `clusters.bin` and `reps.bin` (mlp),
/// `checkpoint.bin` (trained variants), `train_log.jsonl`, `out.run` with
/// its `.meta.json` sidecar, and `eval.json`.
pub fn run_experiment(
    config: &ExperimentConfig,
    train_bundle: &BundlePaths,
    test_bundle: &BundlePaths,
    workdir: &Path,
) -> Result<ExperimentOutput> {
    let config = config.clone().effective(None);
    config.validate()?;
    let hash = config.config_hash();
    let self_test = train_bundle == test_bundle;

    let train_side = load_bundle(train_bundle, &config)?;

    let mut clusters: Option<ClusterModel<f64>> = None;
    let mut params: ModelParams<f64> = config.init_params()?;
    let mut train_log = None;

    match config.model {
        ModelVariant::Bm25 => {}
        ModelVariant::LearnedBm25 => {
            let setup = TrainSetup::new(
                &train_side.index,
                None,
                &train_side.topics,
                &train_side.qrels,
                config.train.include_unjudged_negatives,
            )?;
            train_log = Some(train(&mut params, &setup, &config.train_config(), None)?);
        }
        ModelVariant::Mlp => {
            let kcfg = config.kmeans_config();
            let points = collect_cluster_points::<f64>(
                &train_side.index,
                &config.position,
                kcfg.subsample_cap,
                kcfg.seed,
            )?;
            let model = fit_kmeans(&points, config.position, &kcfg)?;
            save_clusters(&workdir.join("clusters.bin"), &model, &hash)?;
            let store = RepStore::build(&train_side.index, &model, config.aggregation)?;
            store.save(&workdir.join("reps.bin"), &hash)?;
            let setup = TrainSetup::new(
                &train_side.index,
                Some(&store),
                &train_side.topics,
                &train_side.qrels,
                config.train.include_unjudged_negatives,
            )?;
            train_log = Some(train(&mut params, &setup, &config.train_config(), None)?);
            clusters = Some(model);
        }
    }

    if !matches!(config.model, ModelVariant::Bm25) {
        save_checkpoint(
            &workdir.join("checkpoint.bin"),
            &params,
            &hash,
            config.train_config().seed,
            train_log.as_ref().map(|l| l.records.len()).unwrap_or(0),
        )?;
    }
    if let Some(log) = &train_log {
        write_atomic(&workdir.join("train_log.jsonl"), log.to_jsonl(true).as_bytes())?;
    }

    let test_side = if self_test {
        None
    } else {
        Some(load_bundle(test_bundle, &config)?)
    };
    let test = test_side.as_ref().unwrap_or(&train_side);

    let reps = clusters
        .as_ref()
        .map(|model| OnTheFlyReps::new(&test.index, model, config.aggregation));
    let ranker = Ranker::new(
        &test.index,
        &params,
        reps.as_ref().map(|r| r as &dyn crate::models::RepSource<f64>),
    )?;
    let entries = rank_topics(&ranker, &test.topics, config.run.cutoff, &config.run.tag)?;

    let run_path = workdir.join("out.run");
    write_atomic(&run_path, write_run(&entries)?.as_bytes())?;
    let meta = RunMeta {
        config_hash: hash.clone(),
        tag: config.run.tag.clone(),
        cutoff: config.run.cutoff,
    };
    let mut meta_bytes = serde_json::to_vec_pretty(&meta)?;
    meta_bytes.push(b'\n');
    write_atomic(&workdir.join("out.run.meta.json"), &meta_bytes)?;

    let eval = map_score(&entries, &test.qrels)?;
    let mut eval_json = serde_json::to_vec_pretty(&serde_json::json!({
        "map": eval.map,
        "num_queries_evaluated": eval.num_queries_evaluated,
        "per_query": eval.per_query,
        "config_hash": hash,
        "self_test": self_test,
    }))?;
    eval_json.push(b'\n');
    write_atomic(&workdir.join("eval.json"), &eval_json)?;

    Ok(ExperimentOutput {
        eval,
        train_log,
        run_path,
        config_hash: hash,
        self_test,
    })
}
