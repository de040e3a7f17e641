//! Per-(term, document) weight models and query-document scoring.
//!
//! Three weight functions share one contract — the weight of a term absent
//! from a document is 0, and a query-document score is the sum of weights
//! over the query's tokens:
//!
//! * fixed BM25 (k1 = 1.2, b = 0.75 by default),
//! * learnable BM25, reparameterized as k1 = softplus(kappa), b =
//!   sigmoid(beta) so unconstrained optimization keeps k1 > 0 and b in (0,1),
//! * an MLP over the concatenated term-document and term-collection cluster
//!   representations: 2k inputs, one ReLU hidden layer of 50 units, linear
//!   scalar output.

use std::borrow::Cow;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::clustering::{represent_term_doc, Aggregation, ClusterModel};
use crate::error::{Error, Result};
use crate::index::{DocId, PositionalIndex, TermId};
use crate::parallel;
use crate::scalar::{real, to_f64, Scalar};
use crate::transport::{quantize_positions, PositionConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRMDL001";
pub const REPS_MAGIC: &[u8; 8] = b"PRREP001";

/// Hidden layer width of the term-weight MLP.
pub const MLP_HIDDEN: usize = 50;

/// Which weight model an experiment uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "bm25")]
    Bm25,
    #[serde(rename = "learned-bm25")]
    LearnedBm25,
    #[serde(rename = "mlp")]
    Mlp,
}

impl ModelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Bm25 => "bm25",
            ModelVariant::LearnedBm25 => "learned-bm25",
            ModelVariant::Mlp => "mlp",
        }
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > real(30.0) {
        x
    } else if x < real(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of softplus for x > 0: ln(e^x - 1).
pub fn softplus_inv<S: Scalar>(x: S) -> S {
    (x.exp() - S::one()).ln()
}

/// BM25 hyperparameters. k1 controls term-frequency saturation (burstiness),
/// b the strength of document-length normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params<S> {
    pub k1: S,
    pub b: S,
}

impl<S: Scalar> Bm25Params<S> {
    pub fn new(k1: S, b: S) -> Result<Self> {
        if !(k1 > S::zero()) {
            return Err(Error::InvalidInput("k1 must be > 0".into()));
        }
        if b < S::zero() || b > S::one() {
            return Err(Error::InvalidInput("b must lie in [0, 1]".into()));
        }
        Ok(Bm25Params { k1, b })
    }
}

impl<S: Scalar> Default for Bm25Params<S> {
    fn default() -> Self {
        Bm25Params {
            k1: real(1.2),
            b: real(0.75),
        }
    }
}

/// BM25 weight of a (term, document) pair:
///
/// ```text
/// tf*(k1+1) / (tf + k1*(1 - b + b*l_d/l_mean)) * ln((N - df + 0.5)/(df + 0.5))
/// ```
///
/// Natural logarithm; a zero tf returns 0 without touching the log, and
/// negative idf (df > N/2) is kept as the formula dictates.
pub fn bm25_weight<S: Scalar>(
    tf: u32,
    df: u32,
    doc_len: u32,
    mean_doc_len: S,
    num_docs: u32,
    params: &Bm25Params<S>,
) -> Result<S> {
    if tf == 0 {
        return Ok(S::zero());
    }
    if !(mean_doc_len > S::zero()) {
        return Err(Error::InvalidInput(
            "mean document length must be > 0 to score".into(),
        ));
    }
    let tf = real::<S>(tf as f64);
    let n = real::<S>(num_docs as f64);
    let df = real::<S>(df as f64);
    let half = real::<S>(0.5);
    let idf = ((n - df + half) / (df + half)).ln();
    let norm = S::one() - params.b + params.b * real::<S>(doc_len as f64) / mean_doc_len;
    let tf_part = tf * (params.k1 + S::one()) / (tf + params.k1 * norm);
    Ok(tf_part * idf)
}

/// Learnable BM25: unconstrained (kappa, beta) inducing k1 = softplus(kappa),
/// b = sigmoid(beta).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnableBm25<S> {
    pub kappa: S,
    pub beta: S,
}

impl<S: Scalar> LearnableBm25<S> {
    /// Starts from the given (k1, b); the default start is (1.2, 0.75).
    pub fn from_k1_b(k1: S, b: S) -> Result<Self> {
        Bm25Params::new(k1, b)?;
        if b == S::zero() || b == S::one() {
            return Err(Error::InvalidInput(
                "learnable b must start strictly inside (0, 1)".into(),
            ));
        }
        Ok(LearnableBm25 {
            kappa: softplus_inv(k1),
            beta: (b / (S::one() - b)).ln(),
        })
    }

    /// The induced constrained parameters.
    pub fn induced(&self) -> Bm25Params<S> {
        Bm25Params {
            k1: softplus(self.kappa),
            b: sigmoid(self.beta),
        }
    }

    /// Weight plus its partial derivatives with respect to (kappa, beta).
    pub fn weight_and_grad(
        &self,
        tf: u32,
        df: u32,
        doc_len: u32,
        mean_doc_len: S,
        num_docs: u32,
    ) -> Result<(S, S, S)> {
        if tf == 0 {
            return Ok((S::zero(), S::zero(), S::zero()));
        }
        let params = self.induced();
        let w = bm25_weight(tf, df, doc_len, mean_doc_len, num_docs, &params)?;
        let tf = real::<S>(tf as f64);
        let n = real::<S>(num_docs as f64);
        let dfv = real::<S>(df as f64);
        let half = real::<S>(0.5);
        let idf = ((n - dfv + half) / (dfv + half)).ln();
        let ratio = real::<S>(doc_len as f64) / mean_doc_len;
        let norm = S::one() - params.b + params.b * ratio;
        let denom = tf + params.k1 * norm;
        let denom2 = denom * denom;
        // d/dk1 [tf(k1+1)/(tf + k1*norm)] = tf*(tf - norm)/denom^2
        let dw_dk1 = idf * tf * (tf - norm) / denom2;
        // d/dnorm = -tf(k1+1)*k1/denom^2, dnorm/db = ratio - 1
        let dw_db = idf * (-(tf * (params.k1 + S::one()) * params.k1) / denom2) * (ratio - S::one());
        let dk1_dkappa = sigmoid(self.kappa);
        let db_dbeta = params.b * (S::one() - params.b);
        Ok((w, dw_dk1 * dk1_dkappa, dw_db * db_dbeta))
    }
}

/// MLP over the concatenated (x_td, x_t) representation: 2k -> 50 -> 1.
///
/// The hidden layer is ReLU; the output layer is linear so initial weights
/// are not clamped at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<S> {
    pub k: usize,
    /// Hidden weights, row-major 50 x 2k.
    pub w1: Vec<S>,
    pub b1: Vec<S>,
    /// Output weights, 1 x 50.
    pub w2: Vec<S>,
    pub b2: S,
}

impl<S: Scalar> MlpParams<S> {
    pub fn input_dim(&self) -> usize {
        2 * self.k
    }

    /// Seeded init: weights uniform in +-sqrt(6/(fan_in + fan_out)) per
    /// layer, biases zero.
    pub fn init(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = 2 * k;
        let bound1 = (6.0 / (input + MLP_HIDDEN) as f64).sqrt();
        let bound2 = (6.0 / (MLP_HIDDEN + 1) as f64).sqrt();
        let mut draw = |bound: f64| real::<S>(rng.gen_range(-bound..bound));
        let w1 = (0..MLP_HIDDEN * input).map(|_| draw(bound1)).collect();
        let b1 = vec![S::zero(); MLP_HIDDEN];
        let w2 = (0..MLP_HIDDEN).map(|_| draw(bound2)).collect();
        Ok(MlpParams {
            k,
            w1,
            b1,
            w2,
            b2: S::zero(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Forward pass writing pre-activations into `pre` (length 50).
    pub(crate) fn forward_into(&self, input: &[S], pre: &mut [S]) -> S {
        let dim = self.input_dim();
        debug_assert_eq!(input.len(), dim);
        let mut out = self.b2;
        for h in 0..MLP_HIDDEN {
            let row = &self.w1[h * dim..(h + 1) * dim];
            let mut acc = self.b1[h];
            for (&w, &x) in row.iter().zip(input) {
                acc = acc + w * x;
            }
            pre[h] = acc;
            if acc > S::zero() {
                out = out + self.w2[h] * acc;
            }
        }
        out
    }

    pub fn forward(&self, input: &[S]) -> S {
        let mut pre = vec![S::zero(); MLP_HIDDEN];
        self.forward_into(input, &mut pre)
    }
}

/// MLP term weight for a term-document representation `x_td` and
/// term-collection representation `x_t`, both of dimension k.
pub fn mlp_weight<S: Scalar>(x_td: &[S], x_t: &[S], params: &MlpParams<S>) -> Result<S> {
    if x_td.len() != params.k || x_t.len() != params.k {
        return Err(Error::Mismatch(format!(
            "representation dims ({}, {}) do not match model k={}",
            x_td.len(),
            x_t.len(),
            params.k
        )));
    }
    let mut input = Vec::with_capacity(2 * params.k);
    input.extend_from_slice(x_td);
    input.extend_from_slice(x_t);
    Ok(params.forward(&input))
}

/// Parameters of one ranking model variant.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams<S> {
    Bm25(Bm25Params<S>),
    LearnedBm25(LearnableBm25<S>),
    Mlp(MlpParams<S>),
}

impl<S: Scalar> ModelParams<S> {
    pub fn variant(&self) -> ModelVariant {
        match self {
            ModelParams::Bm25(_) => ModelVariant::Bm25,
            ModelParams::LearnedBm25(_) => ModelVariant::LearnedBm25,
            ModelParams::Mlp(_) => ModelVariant::Mlp,
        }
    }

    /// Trainable parameters as a flat vector (empty for fixed BM25).
    pub fn flatten(&self) -> Vec<S> {
        match self {
            ModelParams::Bm25(_) => Vec::new(),
            ModelParams::LearnedBm25(p) => vec![p.kappa, p.beta],
            ModelParams::Mlp(p) => {
                let mut out = Vec::with_capacity(p.num_params());
                out.extend_from_slice(&p.w1);
                out.extend_from_slice(&p.b1);
                out.extend_from_slice(&p.w2);
                out.push(p.b2);
                out
            }
        }
    }

    /// Writes a flat parameter vector back (inverse of [`Self::flatten`]).
    pub fn assign_flat(&mut self, flat: &[S]) -> Result<()> {
        match self {
            ModelParams::Bm25(_) => {
                if !flat.is_empty() {
                    return Err(Error::Mismatch("fixed bm25 takes no parameters".into()));
                }
            }
            ModelParams::LearnedBm25(p) => {
                if flat.len() != 2 {
                    return Err(Error::Mismatch(format!(
                        "learned bm25 takes 2 parameters, got {}",
                        flat.len()
                    )));
                }
                p.kappa = flat[0];
                p.beta = flat[1];
            }
            ModelParams::Mlp(p) => {
                if flat.len() != p.num_params() {
                    return Err(Error::Mismatch(format!(
                        "mlp takes {} parameters, got {}",
                        p.num_params(),
                        flat.len()
                    )));
                }
                let (w1, rest) = flat.split_at(p.w1.len());
                let (b1, rest) = rest.split_at(p.b1.len());
                let (w2, b2) = rest.split_at(p.w2.len());
                p.w1.copy_from_slice(w1);
                p.b1.copy_from_slice(b1);
                p.w2.copy_from_slice(w2);
                p.b2 = b2[0];
            }
        }
        Ok(())
    }
}

/// Source of cluster representations during scoring and training.
pub trait RepSource<S: Scalar>: Sync {
    fn k(&self) -> usize;
    /// Term-collection representation x_t.
    fn term_rep(&self, term: TermId) -> Option<Cow<'_, [S]>>;
    /// Term-document representation x_td; `None` when tf(term, doc) = 0.
    fn term_doc_rep(&self, term: TermId, doc: DocId) -> Option<Cow<'_, [S]>>;
}

struct TermReps<S> {
    x_t: Vec<S>,
    docs: Vec<DocId>,
    /// docs.len() * k values, row per document.
    x_td: Vec<S>,
}

/// Precomputed representations for every posting of an index, keyed by
/// term id. Built once after clustering; training reads it heavily.
pub struct RepStore<S> {
    k: usize,
    position: PositionConfig,
    mode: Aggregation,
    terms: Vec<TermReps<S>>,
}

impl<S: Scalar> RepStore<S> {
    /// Quantizes and represents every (term, document) posting against the
    /// model's centroids. Parallel over terms; per-term accumulation is
    /// sequential in doc order, so the result is thread-count independent.
    pub fn build(
        index: &PositionalIndex,
        model: &ClusterModel<S>,
        mode: Aggregation,
    ) -> Result<Self> {
        let term_ids: Vec<u32> = (0..index.num_terms() as u32).collect();
        let k = model.k();
        let per_term: Vec<Result<TermReps<S>>> = parallel::map_chunks(&term_ids, |_, chunk| {
            chunk
                .iter()
                .map(|&t| {
                    let list = index.postings(TermId(t))?;
                    let mut docs = Vec::with_capacity(list.docs.len());
                    let mut x_td = Vec::with_capacity(list.docs.len() * k);
                    let mut x_t = vec![S::zero(); k];
                    for (doc, positions) in &list.docs {
                        let len = index.doc_length(*doc)?;
                        let point = quantize_positions::<S>(positions, len, &model.position)?;
                        let rep = represent_term_doc(&point, model)?;
                        for (a, &v) in x_t.iter_mut().zip(&rep) {
                            *a = *a + v;
                        }
                        docs.push(*doc);
                        x_td.extend(rep);
                    }
                    if mode == Aggregation::Mean && !docs.is_empty() {
                        let inv = real::<S>(1.0 / docs.len() as f64);
                        for a in &mut x_t {
                            *a = *a * inv;
                        }
                    }
                    Ok(TermReps { x_t, docs, x_td })
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        Ok(RepStore {
            k,
            position: model.position,
            mode,
            terms: per_term.into_iter().collect::<Result<Vec<_>>>()?,
        })
    }

    pub fn mode(&self) -> Aggregation {
        self.mode
    }

    pub fn position(&self) -> PositionConfig {
        self.position
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let header = RepsHeader {
            format_version: 1,
            config_hash: config_hash.to_string(),
            k: self.k,
            d: self.position.d,
            normalize: self.position.normalize,
            mode: self.mode,
            doc_counts: self.terms.iter().map(|t| t.docs.len()).collect(),
        };
        let mut payload = Vec::new();
        for term in &self.terms {
            for &v in &term.x_t {
                payload.extend_from_slice(&to_f64(v).to_le_bytes());
            }
            for (i, doc) in term.docs.iter().enumerate() {
                payload.extend_from_slice(&doc.0.to_le_bytes());
                for &v in &term.x_td[i * self.k..(i + 1) * self.k] {
                    payload.extend_from_slice(&to_f64(v).to_le_bytes());
                }
            }
        }
        artifact::write_container(path, REPS_MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (header, payload): (RepsHeader, Vec<u8>) =
            artifact::read_container(path, REPS_MAGIC)?;
        let k = header.k;
        let mut at = 0usize;
        let take_f64 = |payload: &[u8], at: &mut usize| -> Result<f64> {
            let bytes = payload
                .get(*at..*at + 8)
                .ok_or_else(|| Error::artifact(path, "truncated representation payload"))?;
            *at += 8;
            Ok(f64::from_le_bytes(bytes.try_into().expect("8 bytes")))
        };
        let take_u32 = |payload: &[u8], at: &mut usize| -> Result<u32> {
            let bytes = payload
                .get(*at..*at + 4)
                .ok_or_else(|| Error::artifact(path, "truncated representation payload"))?;
            *at += 4;
            Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
        };
        let mut terms = Vec::with_capacity(header.doc_counts.len());
        for &count in &header.doc_counts {
            let mut x_t = Vec::with_capacity(k);
            for _ in 0..k {
                x_t.push(real::<S>(take_f64(&payload, &mut at)?));
            }
            let mut docs = Vec::with_capacity(count);
            let mut x_td = Vec::with_capacity(count * k);
            for _ in 0..count {
                docs.push(DocId(take_u32(&payload, &mut at)?));
                for _ in 0..k {
                    x_td.push(real::<S>(take_f64(&payload, &mut at)?));
                }
            }
            terms.push(TermReps { x_t, docs, x_td });
        }
        if at != payload.len() {
            return Err(Error::artifact(path, "trailing representation bytes"));
        }
        Ok((
            RepStore {
                k,
                position: PositionConfig {
                    d: header.d,
                    normalize: header.normalize,
                },
                mode: header.mode,
                terms,
            },
            header.config_hash,
        ))
    }
}

impl<S: Scalar> RepSource<S> for RepStore<S> {
    fn k(&self) -> usize {
        self.k
    }

    fn term_rep(&self, term: TermId) -> Option<Cow<'_, [S]>> {
        self.terms.get(term.0 as usize).map(|t| Cow::from(&t.x_t[..]))
    }

    fn term_doc_rep(&self, term: TermId, doc: DocId) -> Option<Cow<'_, [S]>> {
        let t = self.terms.get(term.0 as usize)?;
        let i = t.docs.binary_search(&doc).ok()?;
        Some(Cow::from(&t.x_td[i * self.k..(i + 1) * self.k]))
    }
}

#[derive(Serialize, Deserialize)]
struct RepsHeader {
    format_version: u32,
    config_hash: String,
    k: usize,
    d: usize,
    normalize: bool,
    mode: Aggregation,
    doc_counts: Vec<usize>,
}

/// Computes representations on demand from an index and a cluster model,
/// identical bit-for-bit to what [`RepStore::build`] would store.
pub struct OnTheFlyReps<'a, S> {
    index: &'a PositionalIndex,
    model: &'a ClusterModel<S>,
    mode: Aggregation,
}

impl<'a, S: Scalar> OnTheFlyReps<'a, S> {
    pub fn new(index: &'a PositionalIndex, model: &'a ClusterModel<S>, mode: Aggregation) -> Self {
        OnTheFlyReps { index, model, mode }
    }
}

impl<S: Scalar> RepSource<S> for OnTheFlyReps<'_, S> {
    fn k(&self) -> usize {
        self.model.k()
    }

    fn term_rep(&self, term: TermId) -> Option<Cow<'_, [S]>> {
        let name = self.index.term(term).ok()?;
        crate::clustering::represent_term_collection(name, self.index, self.model, self.mode)
            .ok()
            .map(Cow::from)
    }

    fn term_doc_rep(&self, term: TermId, doc: DocId) -> Option<Cow<'_, [S]>> {
        let name = self.index.term(term).ok()?;
        let positions = self.index.positions(name, doc).ok()?;
        if positions.is_empty() {
            return None;
        }
        let len = self.index.doc_length(doc).ok()?;
        let point = quantize_positions::<S>(positions, len, &self.model.position).ok()?;
        represent_term_doc(&point, self.model).ok().map(Cow::from)
    }
}

/// A ranking model bound to its index and (for the MLP) representations.
pub struct Ranker<'a, S> {
    pub index: &'a PositionalIndex,
    pub params: &'a ModelParams<S>,
    pub reps: Option<&'a dyn RepSource<S>>,
}

impl<'a, S: Scalar> Ranker<'a, S> {
    pub fn new(
        index: &'a PositionalIndex,
        params: &'a ModelParams<S>,
        reps: Option<&'a dyn RepSource<S>>,
    ) -> Result<Self> {
        if matches!(params.variant(), ModelVariant::Mlp) && reps.is_none() {
            return Err(Error::Config(
                "the mlp model needs a representation source".into(),
            ));
        }
        Ok(Ranker { index, params, reps })
    }

    /// Weight of one (term, document) pair; 0 whenever tf = 0, for every
    /// variant.
    pub fn weight(&self, term: &str, doc: DocId) -> Result<S> {
        let tid = match self.index.term_id(term) {
            Some(t) => t,
            None => {
                // Unknown term: verify the doc exists, then weight 0.
                self.index.doc_length(doc)?;
                return Ok(S::zero());
            }
        };
        self.weight_by_id(tid, doc)
    }

    pub fn weight_by_id(&self, term: TermId, doc: DocId) -> Result<S> {
        let tf = self.index.tf(self.index.term(term)?, doc)?;
        if tf == 0 {
            return Ok(S::zero());
        }
        match self.params {
            ModelParams::Bm25(p) => self.bm25(term, doc, tf, p),
            ModelParams::LearnedBm25(p) => self.bm25(term, doc, tf, &p.induced()),
            ModelParams::Mlp(p) => {
                let reps = self.reps.expect("checked in new()");
                let x_td = reps
                    .term_doc_rep(term, doc)
                    .ok_or_else(|| Error::Lookup("missing term-document representation".into()))?;
                let x_t = reps
                    .term_rep(term)
                    .ok_or_else(|| Error::Lookup("missing term-collection representation".into()))?;
                mlp_weight(&x_td, &x_t, p)
            }
        }
    }

    fn bm25(&self, term: TermId, doc: DocId, tf: u32, params: &Bm25Params<S>) -> Result<S> {
        let name = self.index.term(term)?;
        bm25_weight(
            tf,
            self.index.df(name),
            self.index.doc_length(doc)?,
            real(self.index.mean_doc_length()),
            self.index.num_docs(),
            params,
        )
    }

    /// Query-document score: the sum of weights over query tokens (a token
    /// occurring twice contributes its weight twice). Terms absent from the
    /// document or the collection contribute 0.
    pub fn score<T: AsRef<str>>(&self, query_tokens: &[T], doc: DocId) -> Result<S> {
        self.index.doc_length(doc)?;
        let mut total = S::zero();
        for tok in query_tokens {
            if let Some(tid) = self.index.term_id(tok.as_ref()) {
                total = total + self.weight_by_id(tid, doc)?;
            }
        }
        Ok(total)
    }

    /// Scores the candidate documents (union of the query terms' postings)
    /// and returns them sorted by score descending, ties by docno ascending,
    /// truncated to `cutoff`.
    pub fn rank<T: AsRef<str>>(
        &self,
        query_tokens: &[T],
        cutoff: usize,
    ) -> Result<Vec<(DocId, S)>> {
        if cutoff == 0 {
            return Err(Error::InvalidInput("cutoff must be >= 1".into()));
        }
        let candidates = self.index.candidate_docs(query_tokens);
        let mut scored = Vec::with_capacity(candidates.len());
        for doc in candidates {
            let s = self.score(query_tokens, doc)?;
            if !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite score for doc {}",
                    self.index.docno(doc)?
                )));
            }
            scored.push((doc, s));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores are finite")
                .then_with(|| {
                    let da = self.index.docno(a.0).expect("candidate docno");
                    let db = self.index.docno(b.0).expect("candidate docno");
                    da.cmp(db)
                })
        });
        scored.truncate(cutoff);
        Ok(scored)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config_hash: String,
    variant: ModelVariant,
    k: usize,
    seed: u64,
    trained_iterations: usize,
}

/// Saves model parameters as a checkpoint (JSON header + f64 block).
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    params: &ModelParams<S>,
    config_hash: &str,
    seed: u64,
    trained_iterations: usize,
) -> Result<()> {
    let (k, values): (usize, Vec<f64>) = match params {
        ModelParams::Bm25(p) => (0, vec![to_f64(p.k1), to_f64(p.b)]),
        ModelParams::LearnedBm25(p) => (0, vec![to_f64(p.kappa), to_f64(p.beta)]),
        ModelParams::Mlp(p) => (p.k, params.flatten().iter().map(|&v| to_f64(v)).collect()),
    };
    let header = CheckpointHeader {
        format_version: 1,
        config_hash: config_hash.to_string(),
        variant: params.variant(),
        k,
        seed,
        trained_iterations,
    };
    artifact::write_container(path, CHECKPOINT_MAGIC, &header, &artifact::encode_f64s(values))
}

/// Loads a checkpoint; returns (params, config hash, trained iterations).
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(ModelParams<S>, String, usize)> {
    let (header, payload): (CheckpointHeader, Vec<u8>) =
        artifact::read_container(path, CHECKPOINT_MAGIC)?;
    let values = artifact::decode_f64s(&payload)?;
    let params = match header.variant {
        ModelVariant::Bm25 => {
            if values.len() != 2 {
                return Err(Error::artifact(path, "bm25 checkpoint needs 2 values"));
            }
            ModelParams::Bm25(Bm25Params::new(real(values[0]), real(values[1]))?)
        }
        ModelVariant::LearnedBm25 => {
            if values.len() != 2 {
                return Err(Error::artifact(path, "learned-bm25 checkpoint needs 2 values"));
            }
            ModelParams::LearnedBm25(LearnableBm25 {
                kappa: real(values[0]),
                beta: real(values[1]),
            })
        }
        ModelVariant::Mlp => {
            let mut p = MlpParams::init(header.k, 0)?;
            let flat: Vec<S> = values.iter().map(|&v| real(v)).collect();
            let mut m = ModelParams::Mlp(MlpParams {
                k: header.k,
                w1: vec![S::zero(); p.w1.len()],
                b1: vec![S::zero(); p.b1.len()],
                w2: vec![S::zero(); p.w2.len()],
                b2: S::zero(),
            });
            m.assign_flat(&flat)
                .map_err(|e| Error::artifact(path, format!("bad mlp checkpoint: {e}")))?;
            if let ModelParams::Mlp(inner) = m {
                p = inner;
            }
            ModelParams::Mlp(p)
        }
    };
    Ok((params, header.config_hash, header.trained_iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawDocument, TokenizerConfig};

    fn doc(docno: &str, text: &str) -> RawDocument {
        RawDocument {
            docno: docno.into(),
            text: text.into(),
        }
    }

    #[test]
    fn bm25_zero_tf_is_zero() {
        let p = Bm25Params::<f64>::default();
        assert_eq!(bm25_weight(0, 10, 50, 100.0, 100, &p).unwrap(), 0.0);
    }

    #[test]
    fn bm25_idf_cancels_at_half() {
        // N=2, df=1: idf = ln(1.5/1.5) = 0.
        let p = Bm25Params::<f64>::default();
        let w = bm25_weight(1, 1, 100, 100.0, 2, &p).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn bm25_hand_value() {
        let p = Bm25Params::<f64>::default();
        let w = bm25_weight(2, 10, 100, 100.0, 100, &p).unwrap();
        let expected = (2.0 * 2.2 / 3.2) * (90.5_f64 / 10.5).ln();
        assert!((w - expected).abs() < 1e-12);
        // 1.375 * ln(90.5/10.5) = 1.375 * 2.1539746 (frozen from 30-digit
        // evaluation of the formula)
        assert!((w - 2.9617150661208045).abs() < 1e-12, "{w}");
        assert!((w - 2.96172).abs() < 1e-5, "{w}");
    }

    #[test]
    fn bm25_rejects_zero_mean_length() {
        let p = Bm25Params::<f64>::default();
        assert!(bm25_weight(1, 1, 10, 0.0, 10, &p).is_err());
    }

    #[test]
    fn bm25_param_validation() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
        assert!(Bm25Params::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn learnable_bm25_induces_its_start() {
        let m = LearnableBm25::<f64>::from_k1_b(1.2, 0.75).unwrap();
        let p = m.induced();
        assert!((p.k1 - 1.2).abs() < 1e-12);
        assert!((p.b - 0.75).abs() < 1e-12);
    }

    #[test]
    fn learnable_bm25_weight_matches_fixed() {
        let m = LearnableBm25::<f64>::from_k1_b(1.2, 0.75).unwrap();
        let (w, _, _) = m.weight_and_grad(3, 7, 80, 100.0, 1000).unwrap();
        let fixed = bm25_weight(3, 7, 80, 100.0, 1000, &Bm25Params::default()).unwrap();
        assert!((w - fixed).abs() < 1e-12);
    }

    #[test]
    fn mlp_zero_params_output_zero() {
        let p = MlpParams::<f64> {
            k: 2,
            w1: vec![0.0; MLP_HIDDEN * 4],
            b1: vec![0.0; MLP_HIDDEN],
            w2: vec![0.0; MLP_HIDDEN],
            b2: 0.0,
        };
        assert_eq!(mlp_weight(&[0.3, 0.4], &[0.1, 0.2], &p).unwrap(), 0.0);
    }

    #[test]
    fn mlp_indicator_wiring() {
        // Hidden unit 0 copies input 1; output reads hidden unit 0.
        let k = 2;
        let mut p = MlpParams::<f64> {
            k,
            w1: vec![0.0; MLP_HIDDEN * 2 * k],
            b1: vec![0.0; MLP_HIDDEN],
            w2: vec![0.0; MLP_HIDDEN],
            b2: 0.0,
        };
        p.w1[1] = 1.0;
        p.w2[0] = 1.0;
        let out = mlp_weight(&[0.3, 0.7], &[0.0, 0.0], &p).unwrap();
        assert_eq!(out, 0.7);
        let mut neg = p.clone();
        neg.w1[1] = -1.0;
        assert_eq!(mlp_weight(&[0.3, 0.7], &[0.0, 0.0], &neg).unwrap(), 0.0);
    }

    #[test]
    fn mlp_rejects_dim_mismatch() {
        let p = MlpParams::<f64>::init(3, 1).unwrap();
        assert!(mlp_weight(&[0.1, 0.2], &[0.1, 0.2, 0.3], &p).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let p = MlpParams::<f64>::init(3, 99).unwrap();
        let model = ModelParams::Mlp(p);
        let flat = model.flatten();
        let mut other = ModelParams::Mlp(MlpParams::init(3, 0).unwrap());
        other.assign_flat(&flat).unwrap();
        assert_eq!(model, other);
    }

    fn tiny_ranker_index() -> PositionalIndex {
        PositionalIndex::build(
            &[
                doc("A1", "red fox den"),
                doc("A2", "fox fox cub"),
                doc("A3", "quiet forest path"),
            ],
            TokenizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn score_sums_and_duplicates_count_twice() {
        let index = tiny_ranker_index();
        let params = ModelParams::Bm25(Bm25Params::<f64>::default());
        let ranker = Ranker::new(&index, &params, None).unwrap();
        let a2 = index.doc_id("A2").unwrap();
        let single = ranker.score(&["fox"], a2).unwrap();
        let double = ranker.score(&["fox", "fox"], a2).unwrap();
        assert_eq!(double, 2.0 * single);

        let a3 = index.doc_id("A3").unwrap();
        assert_eq!(ranker.score(&["fox", "red"], a3).unwrap(), 0.0);
        assert!(ranker.score(&["fox"], DocId(99)).is_err());
    }

    #[test]
    fn rank_orders_and_breaks_ties_by_docno() {
        // Enough fox-free docs that df < N/2 keeps the idf positive.
        let index = PositionalIndex::build(
            &[
                doc("B", "fox fox"),
                doc("A", "fox fox"),
                doc("C", "fox"),
                doc("D", "calm sea"),
                doc("E", "green hill"),
                doc("F", "old map"),
                doc("G", "dry stone"),
            ],
            TokenizerConfig::default(),
        )
        .unwrap();
        let params = ModelParams::Bm25(Bm25Params::<f64>::default());
        let ranker = Ranker::new(&index, &params, None).unwrap();
        let ranked = ranker.rank(&["fox"], 10).unwrap();
        let names: Vec<&str> = ranked
            .iter()
            .map(|(d, _)| index.docno(*d).unwrap())
            .collect();
        // A and B tie on score (identical stats); docno ascending breaks it.
        assert_eq!(names, vec!["A", "B", "C"]);
        assert!(ranker.rank(&["absent"], 5).unwrap().is_empty());
        let top1 = ranker.rank(&["fox"], 1).unwrap();
        assert_eq!(top1.len(), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for params in [
            ModelParams::Bm25(Bm25Params::default()),
            ModelParams::LearnedBm25(LearnableBm25::from_k1_b(1.2, 0.75).unwrap()),
            ModelParams::Mlp(MlpParams::init(4, 17).unwrap()),
        ] {
            let path = dir.path().join("ckpt.bin");
            save_checkpoint(&path, &params, "ffff", 9, 3).unwrap();
            let (loaded, hash, iters) = load_checkpoint::<f64>(&path).unwrap();
            assert_eq!(hash, "ffff");
            assert_eq!(iters, 3);
            assert_eq!(loaded, params);
        }
    }
}
