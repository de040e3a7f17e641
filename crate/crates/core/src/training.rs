//! Pairwise RankNet training with Adam.
//!
//! A training unit is a triple (query, relevant doc a, non-relevant doc b);
//! the loss is the mean of -ln sigmoid(s(q,a) - s(q,b)), evaluated in the
//! stable form ln(1 + exp(-delta)). Gradients are analytic for both the
//! learnable-BM25 reparameterization and the MLP (ReLU subgradient at 0 is
//! 0), and each iteration performs one Adam step on the mean gradient of a
//! freshly sampled batch (optionally split into minibatches).
//!
//! Triple contributions are reduced over fixed-size chunks merged in order,
//! so losses, gradients, and trained parameters are bit-identical at any
//! thread count.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::derive_seed;
use crate::corpus::{Qrels, Topic};
use crate::error::{Error, Result};
use crate::index::{DocId, PositionalIndex, TermId};
use crate::models::{sigmoid, ModelParams, ModelVariant, Ranker, RepSource, MLP_HIDDEN};
use crate::parallel;
use crate::scalar::{real, to_f64, Scalar};

/// One training triple: for query `qid`, document `doc_a` is judged relevant
/// and `doc_b` non-relevant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub qid: String,
    pub doc_a: DocId,
    pub doc_b: DocId,
}

/// Training hyperparameters.
///
/// `adam_epsilon` defaults per variant when unset: 1e-4 for learnable BM25,
/// 1e-8 for the MLP.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub triples_per_iteration: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: Option<f64>,
    /// When set, each iteration's sample is consumed in minibatches of this
    /// size, one Adam step per minibatch; otherwise one step per iteration.
    pub minibatch: Option<usize>,
    pub seed: u64,
    /// Sample negatives from all non-relevant docs instead of judged
    /// non-relevant only.
    pub include_unjudged_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            triples_per_iteration: 50_000,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: None,
            minibatch: None,
            seed: 0,
            include_unjudged_negatives: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.triples_per_iteration == 0 {
            return Err(Error::InvalidInput(
                "iterations and triples_per_iteration must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput("learning_rate must be >= 0".into()));
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0)
            || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0)
        {
            return Err(Error::InvalidInput("adam betas must lie in (0, 1)".into()));
        }
        if let Some(e) = self.adam_epsilon {
            if !(e > 0.0) {
                return Err(Error::InvalidInput("adam_epsilon must be > 0".into()));
            }
        }
        if self.minibatch == Some(0) {
            return Err(Error::InvalidInput("minibatch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_epsilon(&self, variant: ModelVariant) -> f64 {
        self.adam_epsilon.unwrap_or(match variant {
            ModelVariant::LearnedBm25 => 1e-4,
            _ => 1e-8,
        })
    }
}

/// Adam moment estimates, one slot per scalar parameter.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![S::zero(); num_params],
            v: vec![S::zero(); num_params],
            t: 0,
        }
    }
}

/// One Adam update with bias correction:
/// m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2;
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step<S: Scalar>(
    params: &mut [S],
    grad: &[S],
    state: &mut AdamState<S>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Mismatch(format!(
            "adam shapes disagree: {} params, {} grads, {} slots",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.t += 1;
    let b1 = real::<S>(beta1);
    let b2 = real::<S>(beta2);
    let one = S::one();
    let corr1 = one - real::<S>(beta1.powi(state.t as i32));
    let corr2 = one - real::<S>(beta2.powi(state.t as i32));
    let lr = real::<S>(lr);
    let eps = real::<S>(epsilon);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / corr1;
        let v_hat = state.v[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

struct Pool {
    qid: String,
    rel: Vec<DocId>,
    nonrel: Vec<DocId>,
}

/// Resolved training context: query term ids and per-topic document pools.
pub struct TrainSetup<'a, S> {
    pub index: &'a PositionalIndex,
    pub reps: Option<&'a dyn RepSource<S>>,
    queries: BTreeMap<String, Vec<Option<TermId>>>,
    pools: Vec<Pool>,
    include_unjudged: bool,
}

impl<'a, S: Scalar> TrainSetup<'a, S> {
    /// Resolves topics and qrels against the index. A topic is usable when it
    /// has at least one relevant doc present in the index and at least one
    /// negative (judged non-relevant, or any non-relevant doc when
    /// `include_unjudged` is set). Qrels docnos absent from the index are
    /// ignored.
    pub fn new(
        index: &'a PositionalIndex,
        reps: Option<&'a dyn RepSource<S>>,
        topics: &[Topic],
        qrels: &Qrels,
        include_unjudged: bool,
    ) -> Result<Self> {
        let mut queries = BTreeMap::new();
        let mut pools = Vec::new();
        for topic in topics {
            let terms: Vec<Option<TermId>> =
                topic.terms.iter().map(|t| index.term_id(t)).collect();
            queries.insert(topic.qid.clone(), terms);
            let rel: Vec<DocId> = qrels
                .relevant(&topic.qid)
                .iter()
                .filter_map(|d| index.doc_id(d))
                .collect();
            let nonrel: Vec<DocId> = qrels
                .nonrelevant(&topic.qid)
                .iter()
                .filter_map(|d| index.doc_id(d))
                .collect();
            let has_negatives = !nonrel.is_empty()
                || (include_unjudged && (rel.len() as u32) < index.num_docs());
            if !rel.is_empty() && has_negatives {
                pools.push(Pool {
                    qid: topic.qid.clone(),
                    rel,
                    nonrel,
                });
            }
        }
        if pools.is_empty() {
            return Err(Error::InvalidInput(
                "no topic has both a relevant and a non-relevant judged document".into(),
            ));
        }
        Ok(TrainSetup {
            index,
            reps,
            queries,
            pools,
            include_unjudged,
        })
    }

    /// Samples `count` triples: a uniform usable topic, then a uniform
    /// relevant doc and a uniform negative. Deterministic given the seed.
    pub fn sample_triples(&self, count: usize, seed: u64) -> Vec<Triple> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let pool = &self.pools[rng.gen_range(0..self.pools.len())];
            let doc_a = pool.rel[rng.gen_range(0..pool.rel.len())];
            let doc_b = if self.include_unjudged {
                loop {
                    let d = DocId(rng.gen_range(0..self.index.num_docs()));
                    if !pool.rel.contains(&d) {
                        break d;
                    }
                }
            } else {
                pool.nonrel[rng.gen_range(0..pool.nonrel.len())]
            };
            out.push(Triple {
                qid: pool.qid.clone(),
                doc_a,
                doc_b,
            });
        }
        out
    }

    fn query(&self, qid: &str) -> Result<&[Option<TermId>]> {
        self.queries
            .get(qid)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("unknown query {qid:?}")))
    }
}

/// Stable -ln sigmoid(delta) = ln(1 + exp(-delta)).
fn ranknet_term<S: Scalar>(delta: S) -> S {
    if delta >= S::zero() {
        (-delta).exp().ln_1p()
    } else {
        -delta + delta.exp().ln_1p()
    }
}

fn side_score<S: Scalar>(ranker: &Ranker<S>, terms: &[Option<TermId>], doc: DocId) -> Result<S> {
    let mut total = S::zero();
    for term in terms.iter().flatten() {
        total = total + ranker.weight_by_id(*term, doc)?;
    }
    Ok(total)
}

/// Mean RankNet loss of `params` over the triples.
pub fn ranknet_loss<S: Scalar>(
    setup: &TrainSetup<S>,
    params: &ModelParams<S>,
    triples: &[Triple],
) -> Result<S> {
    let ranker = Ranker::new(setup.index, params, setup.reps)?;
    if triples.is_empty() {
        return Ok(S::zero());
    }
    let partials = parallel::map_chunks(triples, |_, chunk| -> Result<S> {
        let mut acc = S::zero();
        for triple in chunk {
            let terms = setup.query(&triple.qid)?;
            let delta = side_score(&ranker, terms, triple.doc_a)?
                - side_score(&ranker, terms, triple.doc_b)?;
            acc = acc + ranknet_term(delta);
        }
        Ok(acc)
    });
    let mut total = S::zero();
    for p in partials {
        total = total + p?;
    }
    Ok(total / real(triples.len() as f64))
}

/// Accumulates `coeff * d w(t, doc) / d theta` into `grad` for one term side.
fn accumulate_weight_grad<S: Scalar>(
    setup: &TrainSetup<S>,
    params: &ModelParams<S>,
    term: TermId,
    doc: DocId,
    coeff: S,
    grad: &mut [S],
    scratch: &mut [S],
) -> Result<()> {
    let name = setup.index.term(term)?;
    let tf = setup.index.tf(name, doc)?;
    if tf == 0 {
        return Ok(());
    }
    match params {
        ModelParams::Bm25(_) => {}
        ModelParams::LearnedBm25(p) => {
            let (_, g_kappa, g_beta) = p.weight_and_grad(
                tf,
                setup.index.df(name),
                setup.index.doc_length(doc)?,
                real(setup.index.mean_doc_length()),
                setup.index.num_docs(),
            )?;
            grad[0] = grad[0] + coeff * g_kappa;
            grad[1] = grad[1] + coeff * g_beta;
        }
        ModelParams::Mlp(p) => {
            let reps = setup.reps.expect("mlp training requires representations");
            let x_td = reps
                .term_doc_rep(term, doc)
                .ok_or_else(|| Error::Lookup("missing term-document representation".into()))?;
            let x_t = reps
                .term_rep(term)
                .ok_or_else(|| Error::Lookup("missing term-collection representation".into()))?;
            let dim = p.input_dim();
            let (input, pre) = scratch.split_at_mut(dim);
            input[..p.k].copy_from_slice(&x_td);
            input[p.k..].copy_from_slice(&x_t);
            p.forward_into(input, pre);
            // Flat layout: w1 | b1 | w2 | b2.
            let (g_w1, rest) = grad.split_at_mut(MLP_HIDDEN * dim);
            let (g_b1, rest) = rest.split_at_mut(MLP_HIDDEN);
            let (g_w2, g_b2) = rest.split_at_mut(MLP_HIDDEN);
            for h in 0..MLP_HIDDEN {
                if pre[h] > S::zero() {
                    let back = coeff * p.w2[h];
                    for (g, &x) in g_w1[h * dim..(h + 1) * dim].iter_mut().zip(&input[..]) {
                        *g = *g + back * x;
                    }
                    g_b1[h] = g_b1[h] + back;
                    g_w2[h] = g_w2[h] + coeff * pre[h];
                }
            }
            g_b2[0] = g_b2[0] + coeff;
        }
    }
    Ok(())
}

/// Mean RankNet loss and its analytic gradient over the flat parameter
/// vector (layout per [`ModelParams::flatten`]).
pub fn loss_and_gradient<S: Scalar>(
    setup: &TrainSetup<S>,
    params: &ModelParams<S>,
    triples: &[Triple],
) -> Result<(S, Vec<S>)> {
    let ranker = Ranker::new(setup.index, params, setup.reps)?;
    let num_params = params.flatten().len();
    if triples.is_empty() {
        return Ok((S::zero(), vec![S::zero(); num_params]));
    }
    let scratch_len = match params {
        ModelParams::Mlp(p) => p.input_dim() + MLP_HIDDEN,
        _ => 0,
    };
    let partials = parallel::map_chunks(triples, |_, chunk| -> Result<(S, Vec<S>)> {
        let mut loss = S::zero();
        let mut grad = vec![S::zero(); num_params];
        let mut scratch = vec![S::zero(); scratch_len];
        for triple in chunk {
            let terms = setup.query(&triple.qid)?;
            let delta = side_score(&ranker, terms, triple.doc_a)?
                - side_score(&ranker, terms, triple.doc_b)?;
            loss = loss + ranknet_term(delta);
            let coeff = sigmoid(delta) - S::one();
            for term in terms.iter().flatten() {
                accumulate_weight_grad(setup, params, *term, triple.doc_a, coeff, &mut grad, &mut scratch)?;
                accumulate_weight_grad(setup, params, *term, triple.doc_b, -coeff, &mut grad, &mut scratch)?;
            }
        }
        Ok((loss, grad))
    });
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); num_params];
    for p in partials {
        let (l, g) = p?;
        loss = loss + l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc = *acc + v;
        }
    }
    let inv = real::<S>(1.0 / triples.len() as f64);
    for g in &mut grad {
        *g = *g * inv;
    }
    Ok((loss * inv, grad))
}

/// One line-delimited-JSON record per accepted training iteration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Per-iteration training trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Serializes to JSONL. Timing is inherently non-deterministic, so the
    /// `include_timing = false` projection is the byte-reproducible one.
    pub fn to_jsonl(&self, include_timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = if include_timing {
                serde_json::to_string(r).expect("record serializes")
            } else {
                serde_json::json!({ "iter": r.iter, "loss": r.loss, "lr": r.lr }).to_string()
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Callback invoked after every accepted iteration (e.g. to write periodic
/// checkpoints).
pub type IterCallback<'a, S> = &'a mut dyn FnMut(usize, &ModelParams<S>) -> Result<()>;

/// Trains the model in place: per iteration, sample a fresh batch with a
/// seed derived from (config.seed, iteration), evaluate the mean loss and
/// gradient, and apply Adam.
///
/// Divergence guard: a non-finite mean loss, or one above 10*ln 2, restores
/// the last accepted snapshot and halves the learning rate, at most 5 times;
/// rejected iterations are not logged.
pub fn train<S: Scalar>(
    params: &mut ModelParams<S>,
    setup: &TrainSetup<S>,
    config: &TrainConfig,
    mut callback: Option<IterCallback<S>>,
) -> Result<TrainLog> {
    config.validate()?;
    if matches!(params.variant(), ModelVariant::Bm25) {
        return Err(Error::Config(
            "fixed bm25 has no trainable parameters; use learned-bm25 or mlp".into(),
        ));
    }
    let epsilon = config.effective_epsilon(params.variant());
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut lr = config.learning_rate;
    let mut halvings = 0usize;
    let mut snapshot = (flat.clone(), adam.clone());
    let guard = 10.0 * std::f64::consts::LN_2;
    let mut log = TrainLog::default();

    for iter in 0..config.iterations {
        let t0 = Instant::now();
        let triples =
            setup.sample_triples(config.triples_per_iteration, derive_seed(config.seed, iter as u64));
        params.assign_flat(&flat)?;
        let (loss, grad) = loss_and_gradient(setup, params, &triples)?;
        let loss_f = to_f64(loss);
        if !loss_f.is_finite() || loss_f > guard {
            halvings += 1;
            if halvings > 5 {
                return Err(Error::Numeric(format!(
                    "training diverged (loss {loss_f}) after 5 learning-rate halvings"
                )));
            }
            (flat, adam) = snapshot.clone();
            lr /= 2.0;
            continue;
        }
        snapshot = (flat.clone(), adam.clone());

        match config.minibatch {
            None => adam_step(&mut flat, &grad, &mut adam, lr, config.adam_beta1, config.adam_beta2, epsilon)?,
            Some(m) => {
                for batch in triples.chunks(m) {
                    params.assign_flat(&flat)?;
                    let (_, g) = loss_and_gradient(setup, params, batch)?;
                    adam_step(&mut flat, &g, &mut adam, lr, config.adam_beta1, config.adam_beta2, epsilon)?;
                }
            }
        }

        log.records.push(TrainRecord {
            iter,
            loss: loss_f,
            lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
        if let Some(cb) = callback.as_mut() {
            params.assign_flat(&flat)?;
            cb(iter, params)?;
        }
    }
    params.assign_flat(&flat)?;
    Ok(log)
}
