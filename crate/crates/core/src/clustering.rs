//! Wasserstein k-means over (term, document) quantile vectors, and the
//! derived term-document / term-collection representations.
//!
//! Lloyd's algorithm in W2 geometry: assignment by squared W2 distance
//! (ties to the lowest centroid index), centroid update by the component-wise
//! mean (the W2 barycenter of equal-mass quantile vectors). Initialization is
//! seeded k-means++; an empty cluster is re-seeded to the point farthest from
//! its assigned centroid. Assignment and the update sums run in parallel over
//! fixed-size chunks merged in order, so a fit is bit-reproducible at any
//! thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::artifact;
use crate::error::{Error, Result};
use crate::index::PositionalIndex;
use crate::parallel;
use crate::scalar::{real, to_f64, Scalar};
use crate::transport::{
    quantize_positions, w2_distance, PositionConfig, QuantileVector,
};

pub const CLUSTERS_MAGIC: &[u8; 8] = b"PRKMN001";

/// How a term's per-document vectors aggregate into its collection vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

/// k-means fitting parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia decrease falls below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Uniform cap on the number of clustered points; recorded in the model.
    pub subsample_cap: Option<usize>,
    /// Number of seeded restarts; the lowest-inertia fit wins.
    pub n_init: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            k: 10,
            max_iter: 100,
            rel_tol: 1e-6,
            seed: 0,
            subsample_cap: Some(1_000_000),
            n_init: 1,
        }
    }
}

impl KmeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        if self.max_iter == 0 || self.n_init == 0 {
            return Err(Error::InvalidInput(
                "max_iter and n_init must be >= 1".into(),
            ));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidInput("rel_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// A fitted model: k centroids plus fit provenance.
#[derive(Clone, Debug)]
pub struct ClusterModel<S> {
    pub centroids: Vec<QuantileVector<S>>,
    pub position: PositionConfig,
    pub seed: u64,
    pub subsample_cap: Option<usize>,
    /// Sum of squared W2 distances to the nearest centroid.
    pub inertia: S,
    pub iterations: usize,
    pub member_counts: Vec<usize>,
    pub points_used: usize,
}

impl<S: Scalar> ClusterModel<S> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// Derives an independent RNG seed for restart `i` of base seed `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits k-means over the points, running `n_init` seeded restarts and
/// keeping the lowest-inertia model. Deterministic given (point order, seed).
pub fn fit_kmeans<S: Scalar>(
    points: &[QuantileVector<S>],
    position: PositionConfig,
    config: &KmeansConfig,
) -> Result<ClusterModel<S>> {
    config.validate()?;
    position.validate()?;
    for p in points {
        if !p.matches(&position) {
            return Err(Error::Mismatch(
                "point does not match the position config".into(),
            ));
        }
    }

    let sampled: Vec<&QuantileVector<S>> = match config.subsample_cap {
        Some(cap) if points.len() > cap.max(config.k) => {
            let cap = cap.max(config.k);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
            let mut idx = rand::seq::index::sample(&mut rng, points.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &points[i]).collect()
        }
        _ => points.iter().collect(),
    };
    if sampled.len() < config.k {
        return Err(Error::InvalidInput(format!(
            "{} points for k={} clusters",
            sampled.len(),
            config.k
        )));
    }

    let mut best: Option<ClusterModel<S>> = None;
    for init in 0..config.n_init {
        let model = fit_once(&sampled, position, config, derive_seed(config.seed, init as u64))?;
        let better = best
            .as_ref()
            .map(|b| model.inertia < b.inertia)
            .unwrap_or(true);
        if better {
            best = Some(model);
        }
    }
    let mut model = best.expect("n_init >= 1");
    model.seed = config.seed;
    model.subsample_cap = config.subsample_cap;
    Ok(model)
}

struct AssignPass<S> {
    assignment: Vec<u32>,
    inertia: S,
    sums: Vec<S>,
    counts: Vec<usize>,
}

fn assign_points<S: Scalar>(
    points: &[&QuantileVector<S>],
    centroids: &[Vec<S>],
    d: usize,
) -> AssignPass<S> {
    let k = centroids.len();
    let partials = parallel::map_chunks(points, |_, chunk| {
        let mut assignment = Vec::with_capacity(chunk.len());
        let mut inertia = S::zero();
        let mut sums = vec![S::zero(); k * d];
        let mut counts = vec![0usize; k];
        for p in chunk {
            let (best, dist) = nearest(p.values(), centroids, d);
            assignment.push(best as u32);
            inertia = inertia + dist;
            counts[best] += 1;
            for (s, &v) in sums[best * d..(best + 1) * d].iter_mut().zip(p.values()) {
                *s = *s + v;
            }
        }
        (assignment, inertia, sums, counts)
    });
    let mut assignment = Vec::with_capacity(points.len());
    let mut inertia = S::zero();
    let mut sums = vec![S::zero(); k * d];
    let mut counts = vec![0usize; k];
    for (a, i, s, c) in partials {
        assignment.extend(a);
        inertia = inertia + i;
        for (acc, v) in sums.iter_mut().zip(s) {
            *acc = *acc + v;
        }
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }
    AssignPass {
        assignment,
        inertia,
        sums,
        counts,
    }
}

/// Squared W2 to the nearest centroid; ties go to the lowest index.
fn nearest<S: Scalar>(values: &[S], centroids: &[Vec<S>], d: usize) -> (usize, S) {
    let inv_d = real::<S>(1.0 / d as f64);
    let mut best = 0usize;
    let mut best_dist = S::infinity();
    for (c, centroid) in centroids.iter().enumerate() {
        let mut acc = S::zero();
        for (&x, &y) in values.iter().zip(centroid) {
            let diff = x - y;
            acc = acc + diff * diff;
        }
        let dist = acc * inv_d;
        if dist < best_dist {
            best_dist = dist;
            best = c;
        }
    }
    (best, best_dist)
}

fn fit_once<S: Scalar>(
    points: &[&QuantileVector<S>],
    position: PositionConfig,
    config: &KmeansConfig,
    seed: u64,
) -> Result<ClusterModel<S>> {
    let d = position.d;
    let k = config.k;
    let mut centroids = kmeans_plus_plus(points, k, d, seed);

    let mut prev_assignment: Option<Vec<u32>> = None;
    let mut prev_inertia: Option<S> = None;
    let mut iterations = 0usize;

    for _ in 0..config.max_iter {
        iterations += 1;
        let mut pass = assign_points(points, &centroids, d);

        // Lloyd monotonicity, checked on every iteration.
        if let Some(prev) = prev_inertia {
            assert!(
                to_f64(pass.inertia) <= to_f64(prev) + 1e-9,
                "inertia increased: {} -> {}",
                to_f64(prev),
                to_f64(pass.inertia)
            );
        }

        // Re-seed empty clusters to the point farthest from its assigned
        // centroid (ties to the lowest point index), keeping k fixed.
        loop {
            let empty = match pass.counts.iter().position(|&c| c == 0) {
                Some(e) => e,
                None => break,
            };
            let mut far_idx = None;
            let mut far_dist = S::neg_infinity();
            for (i, p) in points.iter().enumerate() {
                let a = pass.assignment[i] as usize;
                if pass.counts[a] <= 1 {
                    continue;
                }
                let (_, dist) = nearest(p.values(), &centroids[a..a + 1], d);
                if dist > far_dist {
                    far_dist = dist;
                    far_idx = Some(i);
                }
            }
            let i = match far_idx {
                Some(i) => i,
                // All points coincide with their centroids; duplicate one.
                None => 0,
            };
            let old = pass.assignment[i] as usize;
            pass.assignment[i] = empty as u32;
            if pass.counts[old] > 0 {
                pass.counts[old] -= 1;
                for (s, &v) in pass.sums[old * d..(old + 1) * d]
                    .iter_mut()
                    .zip(points[i].values())
                {
                    *s = *s - v;
                }
            }
            pass.counts[empty] += 1;
            for (s, &v) in pass.sums[empty * d..(empty + 1) * d]
                .iter_mut()
                .zip(points[i].values())
            {
                *s = *s + v;
            }
            centroids[empty] = points[i].values().to_vec();
        }

        let converged_exact = prev_assignment.as_ref() == Some(&pass.assignment);
        let converged_tol = match prev_inertia {
            Some(prev) => {
                let prev = to_f64(prev);
                let cur = to_f64(pass.inertia);
                prev > 0.0 && (prev - cur) / prev < config.rel_tol
            }
            None => false,
        };

        for c in 0..k {
            let inv = real::<S>(1.0 / pass.counts[c] as f64);
            for (j, s) in pass.sums[c * d..(c + 1) * d].iter().enumerate() {
                centroids[c][j] = *s * inv;
            }
            // Means of sorted vectors are sorted; clamp last-ulp rounding.
            for j in 1..d {
                if centroids[c][j] < centroids[c][j - 1] {
                    centroids[c][j] = centroids[c][j - 1];
                }
            }
        }

        prev_inertia = Some(pass.inertia);
        prev_assignment = Some(pass.assignment);
        if converged_exact || converged_tol {
            break;
        }
    }

    // Final inertia and member counts against the final centroids.
    let final_pass = assign_points(points, &centroids, d);
    let centroids = centroids
        .into_iter()
        .map(|values| QuantileVector::new(values, position.normalize))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel {
        centroids,
        position,
        seed,
        subsample_cap: config.subsample_cap,
        inertia: final_pass.inertia,
        iterations,
        member_counts: final_pass.counts,
        points_used: points.len(),
    })
}

fn kmeans_plus_plus<S: Scalar>(
    points: &[&QuantileVector<S>],
    k: usize,
    d: usize,
    seed: u64,
) -> Vec<Vec<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<S>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..points.len());
    centroids.push(points[first].values().to_vec());

    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| to_f64(nearest(p.values(), &centroids, d).1))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[chosen].values().to_vec());
        let last = centroids.len() - 1;
        for (i, p) in points.iter().enumerate() {
            let dist = to_f64(nearest(p.values(), &centroids[last..last + 1], d).1);
            if dist < d2[i] {
                d2[i] = dist;
            }
        }
    }
    centroids
}

/// Enumerates the cluster point population — one quantile vector per
/// (term, document) posting, in term-id then doc-id order — optionally
/// capped by a seeded uniform subsample over postings.
pub fn collect_cluster_points<S: Scalar>(
    index: &PositionalIndex,
    position: &PositionConfig,
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<QuantileVector<S>>> {
    let total = index.num_postings();
    let keep: Option<Vec<usize>> = match cap {
        Some(cap) if total > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
            let mut idx = rand::seq::index::sample(&mut rng, total, cap).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    };
    let pairs: Vec<(u32, Vec<u32>)> = {
        let all = index
            .iter_postings()
            .map(|(_, d, pos)| (index.doc_length(d).unwrap_or(0), pos.to_vec()));
        match &keep {
            Some(idx) => {
                let mut sel = Vec::with_capacity(idx.len());
                let mut want = idx.iter().copied().peekable();
                for (i, item) in all.enumerate() {
                    match want.peek() {
                        Some(&w) if w == i => {
                            sel.push(item);
                            want.next();
                        }
                        Some(_) => {}
                        None => break,
                    }
                }
                sel
            }
            None => all.collect(),
        }
    };
    let points: Vec<Result<QuantileVector<S>>> = {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|(len, pos)| quantize_positions(pos, *len, position))
            .collect()
    };
    points.into_iter().collect()
}

/// Term-document representation: the k W2 distances from the (term, doc)
/// quantile vector to the centroids.
pub fn represent_term_doc<S: Scalar>(
    point: &QuantileVector<S>,
    model: &ClusterModel<S>,
) -> Result<Vec<S>> {
    if !point.matches(&model.position) {
        return Err(Error::Mismatch(
            "quantile vector does not match the cluster model's position config".into(),
        ));
    }
    model
        .centroids
        .iter()
        .map(|c| w2_distance(point, c))
        .collect()
}

/// Term-collection representation: component-wise sum (or mean over df) of
/// the term's per-document representations.
pub fn represent_term_collection<S: Scalar>(
    term: &str,
    index: &PositionalIndex,
    model: &ClusterModel<S>,
    mode: Aggregation,
) -> Result<Vec<S>> {
    let tid = index
        .term_id(term)
        .ok_or_else(|| Error::Lookup(format!("term {term:?} not in the collection")))?;
    let list = index.postings(tid)?;
    let mut acc = vec![S::zero(); model.k()];
    for (doc, positions) in &list.docs {
        let len = index.doc_length(*doc)?;
        let point = quantize_positions::<S>(positions, len, &model.position)?;
        let rep = represent_term_doc(&point, model)?;
        for (a, v) in acc.iter_mut().zip(rep) {
            *a = *a + v;
        }
    }
    if mode == Aggregation::Mean {
        let inv = real::<S>(1.0 / list.docs.len() as f64);
        for a in &mut acc {
            *a = *a * inv;
        }
    }
    Ok(acc)
}

/// CSV description of the fitted clusters: `cluster,count,q1..qD`, one row
/// per centroid.
pub fn export_clusters<S: Scalar>(model: &ClusterModel<S>) -> String {
    let d = model.position.d;
    let mut out = String::from("cluster,count");
    for j in 1..=d {
        out.push_str(&format!(",q{j}"));
    }
    out.push('\n');
    for (c, centroid) in model.centroids.iter().enumerate() {
        out.push_str(&format!("{c},{}", model.member_counts[c]));
        for &v in centroid.values() {
            out.push_str(&format!(",{}", to_f64(v)));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ClustersHeader {
    format_version: u32,
    config_hash: String,
    k: usize,
    d: usize,
    normalize: bool,
    seed: u64,
    subsample_cap: Option<usize>,
    inertia: f64,
    iterations: usize,
    member_counts: Vec<usize>,
    points_used: usize,
}

/// Saves a model as a JSON header + f64 centroid block.
pub fn save_clusters<S: Scalar>(
    path: &Path,
    model: &ClusterModel<S>,
    config_hash: &str,
) -> Result<()> {
    let header = ClustersHeader {
        format_version: 1,
        config_hash: config_hash.to_string(),
        k: model.k(),
        d: model.position.d,
        normalize: model.position.normalize,
        seed: model.seed,
        subsample_cap: model.subsample_cap,
        inertia: to_f64(model.inertia),
        iterations: model.iterations,
        member_counts: model.member_counts.clone(),
        points_used: model.points_used,
    };
    let payload = artifact::encode_f64s(
        model
            .centroids
            .iter()
            .flat_map(|c| c.values().iter().map(|&v| to_f64(v))),
    );
    artifact::write_container(path, CLUSTERS_MAGIC, &header, &payload)
}

/// Loads a model written by [`save_clusters`]; returns it with the recorded
/// config hash.
pub fn load_clusters<S: Scalar>(path: &Path) -> Result<(ClusterModel<S>, String)> {
    let (header, payload): (ClustersHeader, Vec<u8>) =
        artifact::read_container(path, CLUSTERS_MAGIC)?;
    let values = artifact::decode_f64s(&payload)?;
    if values.len() != header.k * header.d {
        return Err(Error::artifact(
            path,
            format!(
                "centroid block holds {} values, expected {}",
                values.len(),
                header.k * header.d
            ),
        ));
    }
    let centroids = values
        .chunks_exact(header.d)
        .map(|chunk| {
            QuantileVector::new(chunk.iter().map(|&v| real::<S>(v)).collect(), header.normalize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        ClusterModel {
            centroids,
            position: PositionConfig {
                d: header.d,
                normalize: header.normalize,
            },
            seed: header.seed,
            subsample_cap: header.subsample_cap,
            inertia: real(header.inertia),
            iterations: header.iterations,
            member_counts: header.member_counts,
            points_used: header.points_used,
        },
        header.config_hash,
    ))
}
