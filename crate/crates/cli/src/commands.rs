//! Subcommand implementations. Each returns a one-line JSON report for
//! stdout; artifact paths inside the workdir are fixed (see the README).

use std::path::{Path, PathBuf};

use posrank::artifact::write_atomic;
use posrank::clustering::{
    collect_cluster_points, export_clusters as clusters_csv, fit_kmeans, load_clusters,
    save_clusters, ClusterModel,
};
use posrank::config::ExperimentConfig;
use posrank::corpus::{parse_qrels, parse_topics, parse_trec_documents, Qrels, Topic};
use posrank::evaluation::{
    generate_synthetic, map_score, rank_topics, read_run, write_run, RunMeta,
};
use posrank::index::PositionalIndex;
use posrank::models::{
    load_checkpoint, save_checkpoint, ModelParams, ModelVariant, OnTheFlyReps, Ranker, RepSource,
};
use posrank::scalar::to_f64;
use posrank::training::{train as train_model, TrainSetup};
use posrank::{Error, Real, Result};

use serde_json::{json, Value};

pub struct Ctx {
    pub config: ExperimentConfig,
    pub force: bool,
}

impl Ctx {
    fn hash(&self) -> String {
        self.config.config_hash()
    }

    fn workdir(&self) -> Result<PathBuf> {
        if self.config.paths.workdir.is_empty() {
            return Err(Error::Config("paths.workdir is not set".into()));
        }
        let dir = PathBuf::from(&self.config.paths.workdir);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Resolves a configured input path, requiring it to exist.
    fn input(&self, what: &str, value: &str) -> Result<PathBuf> {
        if value.is_empty() {
            return Err(Error::Config(format!("paths.{what} is not set")));
        }
        let path = PathBuf::from(value);
        if !path.exists() {
            return Err(Error::artifact(&path, format!("missing {what} file")));
        }
        Ok(path)
    }

    fn check_hash(&self, found: &str, path: &Path) -> Result<()> {
        if !self.force && found != self.hash() {
            return Err(Error::artifact(
                path,
                format!(
                    "config hash mismatch (artifact {found}, config {}); rerun upstream stages or pass --force",
                    self.hash()
                ),
            ));
        }
        Ok(())
    }

    fn read(&self, path: &Path) -> Result<Vec<u8>> {
        std::fs::read(path).map_err(|e| Error::artifact(path, format!("read failed: {e}")))
    }

    fn load_index(&self) -> Result<PositionalIndex> {
        let dir = self.workdir()?.join("index");
        if !dir.join("manifest.json").exists() {
            return Err(Error::artifact(
                dir.join("manifest.json"),
                "missing index; run `posrank index` first",
            ));
        }
        let (index, hash) = PositionalIndex::load(&dir)?;
        self.check_hash(&hash, &dir.join("manifest.json"))?;
        Ok(index)
    }

    fn load_topics(&self) -> Result<Vec<Topic>> {
        let path = self.input("topics", &self.config.paths.topics)?;
        parse_topics(&self.read(&path)?, &self.config.tokenizer)
    }

    fn load_qrels(&self) -> Result<Qrels> {
        let path = self.input("qrels", &self.config.paths.qrels)?;
        Qrels::from_entries(parse_qrels(&self.read(&path)?)?)
    }

    fn clusters_path(&self) -> Result<PathBuf> {
        Ok(match &self.config.artifacts.clusters {
            Some(p) => PathBuf::from(p),
            None => self.workdir()?.join("clusters.bin"),
        })
    }

    fn checkpoint_path(&self) -> Result<PathBuf> {
        Ok(match &self.config.artifacts.checkpoint {
            Some(p) => PathBuf::from(p),
            None => self.workdir()?.join("checkpoint.bin"),
        })
    }

    fn load_clusters_checked(&self) -> Result<ClusterModel<Real>> {
        let path = self.clusters_path()?;
        if !path.exists() {
            return Err(Error::artifact(
                &path,
                "missing cluster model; run `posrank cluster` first",
            ));
        }
        let (model, hash) = load_clusters::<Real>(&path)?;
        self.check_hash(&hash, &path)?;
        Ok(model)
    }
}

pub fn index(ctx: &Ctx) -> Result<Value> {
    let docs_path = ctx.input("docs", &ctx.config.paths.docs)?;
    let documents = parse_trec_documents(&ctx.read(&docs_path)?)?;
    let index = PositionalIndex::build(&documents, ctx.config.tokenizer.clone())?;
    let dir = ctx.workdir()?.join("index");
    index.save(&dir, &ctx.hash())?;
    Ok(json!({
        "index_dir": dir,
        "num_docs": index.num_docs(),
        "num_terms": index.num_terms(),
        "num_postings": index.num_postings(),
        "mean_doc_length": index.mean_doc_length(),
        "config_hash": ctx.hash(),
    }))
}

pub fn cluster(ctx: &Ctx) -> Result<Value> {
    let index = ctx.load_index()?;
    let kcfg = ctx.config.kmeans_config();
    let points = collect_cluster_points::<Real>(
        &index,
        &ctx.config.position,
        kcfg.subsample_cap,
        kcfg.seed,
    )?;
    let model = fit_kmeans(&points, ctx.config.position, &kcfg)?;
    let workdir = ctx.workdir()?;
    save_clusters(&workdir.join("clusters.bin"), &model, &ctx.hash())?;
    let store = posrank::RepStore::build(&index, &model, ctx.config.aggregation)?;
    store.save(&workdir.join("reps.bin"), &ctx.hash())?;
    Ok(json!({
        "clusters": workdir.join("clusters.bin"),
        "reps": workdir.join("reps.bin"),
        "k": model.k(),
        "inertia": to_f64(model.inertia),
        "iterations": model.iterations,
        "points_used": model.points_used,
        "config_hash": ctx.hash(),
    }))
}

pub fn train(ctx: &Ctx) -> Result<Value> {
    if matches!(ctx.config.model, ModelVariant::Bm25) {
        return Err(Error::Config(
            "fixed bm25 has no trainable parameters; set model to learned-bm25 or mlp".into(),
        ));
    }
    let index = ctx.load_index()?;
    let topics = ctx.load_topics()?;
    let qrels = ctx.load_qrels()?;
    let workdir = ctx.workdir()?;

    let store = if matches!(ctx.config.model, ModelVariant::Mlp) {
        let path = workdir.join("reps.bin");
        if !path.exists() {
            return Err(Error::artifact(
                &path,
                "missing representation store; run `posrank cluster` first",
            ));
        }
        let (store, hash) = posrank::RepStore::load(&path)?;
        ctx.check_hash(&hash, &path)?;
        Some(store)
    } else {
        None
    };

    let setup = TrainSetup::new(
        &index,
        store.as_ref().map(|s| s as &dyn RepSource<Real>),
        &topics,
        &qrels,
        ctx.config.train.include_unjudged_negatives,
    )?;
    let mut params: ModelParams<Real> = ctx.config.init_params()?;
    let train_config = ctx.config.train_config();
    let checkpoint_path = workdir.join("checkpoint.bin");
    let every = ctx.config.train.checkpoint_every;
    let hash = ctx.hash();
    let seed = train_config.seed;
    let mut periodic = |iter: usize, params: &ModelParams<Real>| -> Result<()> {
        match every {
            Some(n) if n > 0 && (iter + 1) % n == 0 => {
                save_checkpoint(&checkpoint_path, params, &hash, seed, iter + 1)
            }
            _ => Ok(()),
        }
    };
    let log = train_model(&mut params, &setup, &train_config, Some(&mut periodic))?;
    save_checkpoint(&checkpoint_path, &params, &hash, seed, log.records.len())?;
    write_atomic(&workdir.join("train_log.jsonl"), log.to_jsonl(true).as_bytes())?;
    Ok(json!({
        "checkpoint": checkpoint_path,
        "train_log": workdir.join("train_log.jsonl"),
        "iterations_logged": log.records.len(),
        "final_loss": log.losses().last(),
        "config_hash": hash,
    }))
}

pub fn run(ctx: &Ctx) -> Result<Value> {
    let index = ctx.load_index()?;
    let topics = ctx.load_topics()?;
    let workdir = ctx.workdir()?;

    let params: ModelParams<Real> = match ctx.config.model {
        ModelVariant::Bm25 => ctx.config.init_params()?,
        _ => {
            let path = ctx.checkpoint_path()?;
            if !path.exists() {
                return Err(Error::artifact(
                    &path,
                    "missing checkpoint; run `posrank train` first",
                ));
            }
            let (params, hash, _) = load_checkpoint::<Real>(&path)?;
            ctx.check_hash(&hash, &path)?;
            if params.variant() != ctx.config.model {
                return Err(Error::artifact(
                    &path,
                    format!(
                        "checkpoint holds a {} model but the config asks for {}",
                        params.variant().as_str(),
                        ctx.config.model.as_str()
                    ),
                ));
            }
            params
        }
    };
    let clusters = if matches!(ctx.config.model, ModelVariant::Mlp) {
        Some(ctx.load_clusters_checked()?)
    } else {
        None
    };
    let reps = clusters
        .as_ref()
        .map(|model| OnTheFlyReps::new(&index, model, ctx.config.aggregation));
    let ranker = Ranker::new(
        &index,
        &params,
        reps.as_ref().map(|r| r as &dyn RepSource<Real>),
    )?;
    let entries = rank_topics(&ranker, &topics, ctx.config.run.cutoff, &ctx.config.run.tag)?;
    let run_path = workdir.join("out.run");
    write_atomic(&run_path, write_run(&entries)?.as_bytes())?;
    let meta = RunMeta {
        config_hash: ctx.hash(),
        tag: ctx.config.run.tag.clone(),
        cutoff: ctx.config.run.cutoff,
    };
    let mut meta_bytes = serde_json::to_vec_pretty(&meta)?;
    meta_bytes.push(b'\n');
    write_atomic(&workdir.join("out.run.meta.json"), &meta_bytes)?;
    Ok(json!({
        "run": run_path,
        "queries": topics.len(),
        "entries": entries.len(),
        "config_hash": ctx.hash(),
    }))
}

pub fn eval(ctx: &Ctx) -> Result<Value> {
    let workdir = ctx.workdir()?;
    let run_path = workdir.join("out.run");
    if !run_path.exists() {
        return Err(Error::artifact(
            &run_path,
            "missing run file; run `posrank run` first",
        ));
    }
    let meta_path = workdir.join("out.run.meta.json");
    let meta: RunMeta = serde_json::from_slice(&ctx.read(&meta_path)?)
        .map_err(|e| Error::artifact(&meta_path, format!("bad run metadata: {e}")))?;
    ctx.check_hash(&meta.config_hash, &meta_path)?;
    let entries = read_run(&String::from_utf8_lossy(&ctx.read(&run_path)?))?;
    let qrels = ctx.load_qrels()?;
    let result = map_score(&entries, &qrels)?;
    let report = json!({
        "map": result.map,
        "num_queries_evaluated": result.num_queries_evaluated,
        "per_query": result.per_query,
        "config_hash": ctx.hash(),
    });
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&workdir.join("eval.json"), &bytes)?;
    Ok(report)
}

pub fn export_clusters(ctx: &Ctx) -> Result<Value> {
    let model = ctx.load_clusters_checked()?;
    let workdir = ctx.workdir()?;
    let path = workdir.join("clusters.csv");
    write_atomic(&path, clusters_csv(&model).as_bytes())?;
    Ok(json!({
        "csv": path,
        "k": model.k(),
        "config_hash": ctx.hash(),
    }))
}

pub fn synth(ctx: &Ctx) -> Result<Value> {
    let spec = ctx.config.synthetic_spec();
    let bundle = generate_synthetic(&spec)?;
    let dir = ctx.workdir()?.join("synth");
    let paths = bundle.write_to_dir(&dir)?;
    Ok(json!({
        "docs": paths.docs,
        "topics": paths.topics,
        "qrels": paths.qrels,
        "num_docs": bundle.documents.len(),
        "num_queries": bundle.topics.len(),
        "seed": spec.seed,
        "config_hash": ctx.hash(),
    }))
}
