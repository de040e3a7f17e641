//! Equal-mass quantile vectors and 1-D quadratic Wasserstein (W2) geometry.
//!
//! A term's occurrence positions in a document form an empirical distribution
//! with mass 1/n per occurrence. [`quantize_positions`] compresses it into a
//! fixed-dimension sorted vector: component j is the mean of the quantile
//! function over the mass bin ((j-1)/D, j/D], which is the W2-optimal D-point
//! equal-mass approximation under the monotone coupling. On such vectors the
//! W2 distance reduces to a (scaled) L2 norm and the W2 barycenter to the
//! component-wise mean, which is what makes k-means over them cheap.
//!
//! [`w2_squared_exact`] is an independent exact solver over small discrete
//! distributions kept as a reference oracle for the test suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Scalar};

/// Dimension and domain of the quantile vectors in one experiment.
///
/// All vectors compared, clustered, or averaged together must share it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositionConfig {
    /// Number of equal-mass quantile components.
    pub d: usize,
    /// Map integer position p to (p + 0.5) / doc_length when true; use the
    /// raw integer value when false.
    pub normalize: bool,
}

impl Default for PositionConfig {
    fn default() -> Self {
        PositionConfig {
            d: 100,
            normalize: true,
        }
    }
}

impl PositionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidInput("position dimension must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sorted fixed-length vector encoding a position distribution in W2
/// geometry. `normalized` vectors live in [0, 1]; raw vectors in
/// [0, doc_length).
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileVector<S> {
    values: Vec<S>,
    normalized: bool,
}

impl<S: Scalar> QuantileVector<S> {
    pub fn new(values: Vec<S>, normalized: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty quantile vector".into()));
        }
        for w in values.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidInput(
                    "quantile vector values must be non-decreasing".into(),
                ));
            }
        }
        if normalized {
            let zero = S::zero();
            let one = S::one();
            if values[0] < zero || values[values.len() - 1] > one {
                return Err(Error::InvalidInput(
                    "normalized quantile values must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(QuantileVector { values, normalized })
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn matches(&self, config: &PositionConfig) -> bool {
        self.dim() == config.d && self.normalized == config.normalize
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Mismatch(format!(
                "quantile dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.normalized != other.normalized {
            return Err(Error::Mismatch(
                "quantile domains differ (normalized vs raw)".into(),
            ));
        }
        Ok(())
    }
}

/// Quantizes sorted real-valued atoms (mass 1/n each) into the W2-optimal
/// D-point equal-mass vector.
///
/// Component j is the conditional mean of the empirical quantile function
/// over the mass bin (j/d, (j+1)/d]. Atom/bin overlap is resolved with
/// integer arithmetic (in units of 1/(n*d)), so bins covered by a single
/// atom reproduce that atom's value exactly.
pub fn quantize_values<S: Scalar>(values: &[S], d: usize, normalized: bool) -> Result<QuantileVector<S>> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "cannot quantize an empty position set".into(),
        ));
    }
    if d == 0 {
        return Err(Error::InvalidInput("position dimension must be >= 1".into()));
    }
    for w in values.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidInput("positions must be sorted".into()));
        }
    }
    let n = values.len() as u64;
    let d_u = d as u64;
    let inv_n = real::<S>(1.0 / n as f64);
    let mut out = Vec::with_capacity(d);
    for j in 0..d_u {
        // Atom i covers mass (i*d, (i+1)*d], bin j covers (j*n, (j+1)*n],
        // both in units of 1/(n*d).
        let first = (j * n / d_u) as usize;
        let last = (((j + 1) * n - 1) / d_u) as usize;
        let v = if first == last {
            values[first]
        } else {
            // Overlap lengths are integers in units of 1/(n*d); they sum to
            // n within a bin, so dividing by n yields the bin's conditional
            // mean of the quantile function.
            let mut acc = S::zero();
            for (idx, &x) in values.iter().enumerate().take(last + 1).skip(first) {
                let i = idx as u64;
                let lo = (i * d_u).max(j * n);
                let hi = ((i + 1) * d_u).min((j + 1) * n);
                acc = acc + x * real::<S>((hi - lo) as f64);
            }
            acc * inv_n
        };
        out.push(v);
    }
    // Guard against last-ulp rounding in the mixed-weight branch.
    for j in 1..d {
        if out[j] < out[j - 1] {
            out[j] = out[j - 1];
        }
    }
    QuantileVector::new(out, normalized)
}

/// Quantizes a term's occurrence positions in one document.
///
/// Positions must be strictly increasing and lie in [0, doc_length). In the
/// normalized domain, integer position p maps to (p + 0.5) / doc_length; in
/// the raw domain it is used as-is.
pub fn quantize_positions<S: Scalar>(
    positions: &[u32],
    doc_length: u32,
    config: &PositionConfig,
) -> Result<QuantileVector<S>> {
    config.validate()?;
    if positions.is_empty() {
        return Err(Error::InvalidInput(
            "term has no occurrences in this document".into(),
        ));
    }
    let mut prev: Option<u32> = None;
    for &p in positions {
        if p >= doc_length || prev.is_some_and(|q| q >= p) {
            return Err(Error::InvalidInput(format!(
                "positions must be strictly increasing and < doc length {doc_length}"
            )));
        }
        prev = Some(p);
    }
    let values: Vec<S> = positions
        .iter()
        .map(|&p| {
            if config.normalize {
                real::<S>((p as f64 + 0.5) / doc_length as f64)
            } else {
                real::<S>(p as f64)
            }
        })
        .collect();
    quantize_values(&values, config.d, config.normalize)
}

/// W2 distance between two equal-mass quantile vectors:
/// sqrt((1/D) * sum_j (a_j - b_j)^2).
///
/// The 1/D factor makes the value the true W2 distance between the two
/// D-point equal-mass distributions, and keeps distances comparable across
/// choices of D.
pub fn w2_distance<S: Scalar>(a: &QuantileVector<S>, b: &QuantileVector<S>) -> Result<S> {
    Ok(w2_squared(a, b)?.sqrt())
}

/// Squared W2 distance (no square root); same preconditions as
/// [`w2_distance`].
pub fn w2_squared<S: Scalar>(a: &QuantileVector<S>, b: &QuantileVector<S>) -> Result<S> {
    a.check_compatible(b)?;
    let mut acc = S::zero();
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let diff = x - y;
        acc = acc + diff * diff;
    }
    Ok(acc / real::<S>(a.dim() as f64))
}

/// W2 barycenter of equal-mass quantile vectors: the component-wise
/// (optionally weighted) mean. Weights must be non-negative and sum to 1.
pub fn w2_barycenter<S: Scalar>(
    points: &[QuantileVector<S>],
    weights: Option<&[S]>,
) -> Result<QuantileVector<S>> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("barycenter of an empty set".into()))?;
    for p in points {
        first.check_compatible(p)?;
    }
    let d = first.dim();
    let weights_owned;
    let weights: &[S] = match weights {
        Some(w) => {
            if w.len() != points.len() {
                return Err(Error::Mismatch(format!(
                    "{} weights for {} points",
                    w.len(),
                    points.len()
                )));
            }
            if w.iter().any(|&x| x < S::zero()) {
                return Err(Error::InvalidInput("negative barycenter weight".into()));
            }
            let total = to_f64(w.iter().copied().sum::<S>());
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "barycenter weights sum to {total}, expected 1"
                )));
            }
            w
        }
        None => {
            let uniform = real::<S>(1.0 / points.len() as f64);
            weights_owned = vec![uniform; points.len()];
            &weights_owned
        }
    };
    let mut out = vec![S::zero(); d];
    for (p, &w) in points.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(p.values()) {
            *o = *o + w * v;
        }
    }
    // Means of sorted vectors are sorted; clamp away last-ulp rounding.
    for j in 1..d {
        if out[j] < out[j - 1] {
            out[j] = out[j - 1];
        }
    }
    QuantileVector::new(out, first.normalized)
}

/// A small discrete distribution on the real line, for the exact W2 oracle.
#[derive(Clone, Debug)]
pub struct DiscreteDist {
    /// (position, mass) sorted by position; masses sum to 1 (tol 1e-9).
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    pub fn new(support: &[f64], mass: &[f64]) -> Result<Self> {
        if support.is_empty() || support.len() != mass.len() {
            return Err(Error::InvalidInput(
                "support and mass must be non-empty and equal-length".into(),
            ));
        }
        if mass.iter().any(|&m| m < 0.0) {
            return Err(Error::InvalidInput("negative probability mass".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "masses sum to {total}, expected 1 (tolerance 1e-9)"
            )));
        }
        let mut atoms: Vec<(f64, f64)> = support.iter().copied().zip(mass.iter().copied()).collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite support"));
        Ok(DiscreteDist { atoms })
    }

    /// Distribution with mass 1/n on each of the given (sorted or unsorted)
    /// values.
    pub fn equal_mass(values: &[f64]) -> Result<Self> {
        let m = 1.0 / values.len() as f64;
        DiscreteDist::new(values, &vec![m; values.len()])
    }
}

/// Exact squared W2 between two small discrete distributions, via the
/// monotone coupling over merged CDF breakpoints (optimal in one dimension).
///
/// Reference oracle for the test suites; independent of the quantization
/// path above.
pub fn w2_squared_exact(a: &DiscreteDist, b: &DiscreteDist) -> f64 {
    let mut cost = 0.0;
    let mut ia = 0;
    let mut ib = 0;
    let mut ra = a.atoms[0].1;
    let mut rb = b.atoms[0].1;
    while ia < a.atoms.len() && ib < b.atoms.len() {
        let delta = ra.min(rb);
        let diff = a.atoms[ia].0 - b.atoms[ib].0;
        cost += delta * diff * diff;
        ra -= delta;
        rb -= delta;
        if ra <= 0.0 {
            ia += 1;
            if ia < a.atoms.len() {
                ra = a.atoms[ia].1;
            }
        }
        if rb <= 0.0 {
            ib += 1;
            if ib < b.atoms.len() {
                rb = b.atoms[ib].1;
            }
        }
    }
    cost
}
