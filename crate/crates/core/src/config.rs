//! Experiment configuration: one JSON document drives every pipeline stage.
//!
//! Unknown fields are rejected. A single master `seed` derives the per-stage
//! seeds (clustering, training, synthetic generation, model init) unless a
//! stage pins its own; `effective()` materializes them all, and the config
//! hash — embedded in every artifact — is taken over that materialized form,
//! so two runs with equal hashes used identical settings end to end.

use serde::{Deserialize, Serialize};

use crate::artifact::short_hash;
use crate::clustering::{derive_seed, Aggregation, KmeansConfig};
use crate::corpus::TokenizerConfig;
use crate::error::{Error, Result};
use crate::evaluation::{PatternRule, SyntheticSpec};
use crate::models::{Bm25Params, LearnableBm25, MlpParams, ModelParams, ModelVariant};
use crate::scalar::Scalar;
use crate::training::TrainConfig;
use crate::transport::PositionConfig;

const STAGE_CLUSTER: u64 = 1;
const STAGE_TRAIN: u64 = 2;
const STAGE_SYNTH: u64 = 3;
const STAGE_MODEL_INIT: u64 = 4;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub docs: String,
    pub topics: String,
    pub qrels: String,
    pub workdir: String,
}

/// Optional paths to artifacts produced under another workdir, for
/// cross-collection scoring (e.g. rank a test collection against the train
/// collection's centroids and checkpoint).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactOverrides {
    pub clusters: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Settings {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Settings {
    fn default() -> Self {
        Bm25Settings { k1: 1.2, b: 0.75 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSettings {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub subsample_cap: Option<usize>,
    pub n_init: usize,
    pub seed: Option<u64>,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            max_iter: 100,
            rel_tol: 1e-6,
            subsample_cap: Some(1_000_000),
            n_init: 1,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub iterations: usize,
    pub triples_per_iteration: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Defaults per variant when unset: 1e-4 (learned-bm25), 1e-8 (mlp).
    pub adam_epsilon: Option<f64>,
    pub minibatch: Option<usize>,
    pub include_unjudged_negatives: bool,
    /// Write an intermediate checkpoint every N accepted iterations.
    pub checkpoint_every: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            iterations: 1000,
            triples_per_iteration: 50_000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: None,
            minibatch: None,
            include_unjudged_negatives: false,
            checkpoint_every: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub cutoff: usize,
    pub tag: String,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            cutoff: 1000,
            tag: "posrank".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub num_queries: usize,
    pub docs_per_class: usize,
    pub doc_length: usize,
    pub vocab_size: usize,
    pub query_term_tf: usize,
    pub rule: PatternRule,
    pub seed: Option<u64>,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        let spec = SyntheticSpec::default();
        SyntheticSettings {
            num_queries: spec.num_queries,
            docs_per_class: spec.docs_per_class,
            doc_length: spec.doc_length,
            vocab_size: spec.vocab_size,
            query_term_tf: spec.query_term_tf,
            rule: spec.rule,
            seed: None,
        }
    }
}

/// The full experiment configuration (see `config --defaults` for the
/// canonical JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub tokenizer: TokenizerConfig,
    pub position: PositionConfig,
    /// Number of clusters (dimension of x_td and x_t).
    pub k: usize,
    pub aggregation: Aggregation,
    pub model: ModelVariant,
    pub bm25: Bm25Settings,
    pub cluster: ClusterSettings,
    pub train: TrainSettings,
    pub run: RunSettings,
    pub synthetic: SyntheticSettings,
    pub artifacts: ArtifactOverrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            paths: PathsConfig::default(),
            tokenizer: TokenizerConfig::default(),
            position: PositionConfig::default(),
            k: 10,
            aggregation: Aggregation::Mean,
            model: ModelVariant::Bm25,
            bm25: Bm25Settings::default(),
            cluster: ClusterSettings::default(),
            train: TrainSettings::default(),
            run: RunSettings::default(),
            synthetic: SyntheticSettings::default(),
            artifacts: ArtifactOverrides::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("bad config: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Materializes every stage seed. A `--seed` override replaces the
    /// master seed; stage seeds pinned in the file still win.
    pub fn effective(mut self, seed_override: Option<u64>) -> Self {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        let master = self.seed;
        self.cluster.seed = Some(
            self.cluster
                .seed
                .unwrap_or_else(|| derive_seed(master, STAGE_CLUSTER)),
        );
        self.train.seed = Some(
            self.train
                .seed
                .unwrap_or_else(|| derive_seed(master, STAGE_TRAIN)),
        );
        self.synthetic.seed = Some(
            self.synthetic
                .seed
                .unwrap_or_else(|| derive_seed(master, STAGE_SYNTH)),
        );
        self
    }

    /// Hash over the materialized settings; embedded in every artifact.
    ///
    /// `paths` are excluded: the hash identifies how artifacts were computed,
    /// not where their inputs lived, so a cross-collection pipeline that
    /// swaps only the bundle paths keeps one coherent chain.
    pub fn config_hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.paths = PathsConfig::default();
        hashed.artifacts = ArtifactOverrides::default();
        short_hash(serde_json::to_vec(&hashed).expect("config serializes").as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        self.position
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Bm25Params::new(self.bm25.k1, self.bm25.b).map_err(|e| Error::Config(e.to_string()))?;
        if self.run.cutoff == 0 {
            return Err(Error::Config("run cutoff must be >= 1".into()));
        }
        self.kmeans_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.synthetic_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn kmeans_config(&self) -> KmeansConfig {
        KmeansConfig {
            k: self.k,
            max_iter: self.cluster.max_iter,
            rel_tol: self.cluster.rel_tol,
            seed: self
                .cluster
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, STAGE_CLUSTER)),
            subsample_cap: self.cluster.subsample_cap,
            n_init: self.cluster.n_init,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            triples_per_iteration: self.train.triples_per_iteration,
            learning_rate: self.train.learning_rate,
            adam_beta1: self.train.adam_beta1,
            adam_beta2: self.train.adam_beta2,
            adam_epsilon: self.train.adam_epsilon,
            minibatch: self.train.minibatch,
            seed: self
                .train
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, STAGE_TRAIN)),
            include_unjudged_negatives: self.train.include_unjudged_negatives,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_queries: self.synthetic.num_queries,
            docs_per_class: self.synthetic.docs_per_class,
            doc_length: self.synthetic.doc_length,
            vocab_size: self.synthetic.vocab_size,
            query_term_tf: self.synthetic.query_term_tf,
            rule: self.synthetic.rule,
            seed: self
                .synthetic
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, STAGE_SYNTH)),
        }
    }

    pub fn model_init_seed(&self) -> u64 {
        derive_seed(self.seed, STAGE_MODEL_INIT)
    }

    /// Untrained model parameters for the configured variant.
    pub fn init_params<S: Scalar>(&self) -> Result<ModelParams<S>> {
        use crate::scalar::real;
        Ok(match self.model {
            ModelVariant::Bm25 => {
                ModelParams::Bm25(Bm25Params::new(real(self.bm25.k1), real(self.bm25.b))?)
            }
            ModelVariant::LearnedBm25 => ModelParams::LearnedBm25(LearnableBm25::from_k1_b(
                real(self.bm25.k1),
                real(self.bm25.b),
            )?),
            ModelVariant::Mlp => {
                ModelParams::Mlp(MlpParams::init(self.k, self.model_init_seed())?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::default();
        let parsed = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, parsed);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json("{\"typo\": 1}").is_err());
    }

    #[test]
    fn effective_materializes_stage_seeds() {
        let cfg = ExperimentConfig::default().effective(None);
        assert!(cfg.cluster.seed.is_some());
        assert!(cfg.train.seed.is_some());
        assert!(cfg.synthetic.seed.is_some());
        // Stage seeds differ from one another.
        assert_ne!(cfg.cluster.seed, cfg.train.seed);
    }

    #[test]
    fn seed_override_changes_the_hash() {
        let a = ExperimentConfig::default().effective(None);
        let b = ExperimentConfig::default().effective(Some(7));
        assert_ne!(a.config_hash(), b.config_hash());
        // Hash is stable for equal configs.
        assert_eq!(a.config_hash(), ExperimentConfig::default().effective(None).config_hash());
    }

    #[test]
    fn paths_do_not_affect_the_hash() {
        let a = ExperimentConfig::default().effective(None);
        let mut b = a.clone();
        b.paths.docs = "elsewhere/docs.trec".into();
        b.paths.workdir = "elsewhere/work".into();
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.k = 50;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn pinned_stage_seed_survives_override() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.seed = Some(123);
        let eff = cfg.effective(Some(7));
        assert_eq!(eff.train.seed, Some(123));
        assert_eq!(eff.seed, 7);
    }
}
