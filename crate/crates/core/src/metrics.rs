//! Sample-quality metrics: validity, uniqueness, NSPDK MMD and the embedding
//! collision rate.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::graph::{canonical_hash, check_valence, mix, AtomVocabulary, MolecularGraph};

/// Neighbourhood radius and root distance bounds of the NSPDK features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NspdkParams {
    pub radius: usize,
    pub distance: usize,
}

impl Default for NspdkParams {
    fn default() -> Self {
        Self { radius: 3, distance: 4 }
    }
}

/// Percentage of samples passing the valence check.
pub fn validity(samples: &[MolecularGraph], vocab: &AtomVocabulary) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("validity of an empty sample set"));
    }
    let mut ok = 0;
    for g in samples {
        if check_valence(g, vocab)? {
            ok += 1;
        }
    }
    Ok(100.0 * ok as f64 / samples.len() as f64)
}

/// Percentage of distinct molecules among the valid samples; `None` when no
/// sample is valid.
pub fn uniqueness(samples: &[MolecularGraph], vocab: &AtomVocabulary) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Err(Error::domain("uniqueness of an empty sample set"));
    }
    let mut seen = HashSet::new();
    let mut valid = 0;
    for g in samples {
        if check_valence(g, vocab)? {
            valid += 1;
            seen.insert(canonical_hash(g));
        }
    }
    Ok((valid > 0).then(|| 100.0 * seen.len() as f64 / valid as f64))
}

/// Sparse NSPDK feature map.
pub type FeatureMap = HashMap<u64, f64>;

/// All-pairs shortest path lengths (`usize::MAX` when unreachable).
pub fn distances(g: &MolecularGraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut out = vec![vec![usize::MAX; n]; n];
    for s in 0..n {
        let row = &mut out[s];
        row[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for (u, _) in g.neighbors(v) {
                if row[u] == usize::MAX {
                    row[u] = row[v] + 1;
                    q.push_back(u);
                }
            }
        }
    }
    out
}

/// Isomorphism-invariant hash of the subgraph induced by nodes within
/// `radius` of `root`, with nodes labelled by category and distance to the root.
pub fn rooted_hash(g: &MolecularGraph, dist: &[Vec<usize>], root: usize, radius: usize) -> u64 {
    let members: Vec<usize> = (0..g.n()).filter(|&v| dist[root][v] <= radius).collect();
    let pos: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut labels: Vec<u64> = members
        .iter()
        .map(|&v| mix(mix(0x5eed, g.atom(v) as u64), dist[root][v] as u64))
        .collect();
    let edges: Vec<(usize, usize, u64)> = members
        .iter()
        .flat_map(|&v| {
            g.neighbors(v)
                .filter(|(u, _)| pos.contains_key(u))
                .map(move |(u, o)| (v, u, o as u64))
        })
        .collect();
    for _ in 0..members.len() {
        let mut next = labels.clone();
        for (i, &v) in members.iter().enumerate() {
            let mut nb: Vec<u64> = edges
                .iter()
                .filter(|&&(a, _, _)| a == v)
                .map(|&(_, u, o)| mix(labels[pos[&u]], o))
                .collect();
            nb.sort_unstable();
            next[i] = nb.iter().fold(mix(labels[i], 0xabc), |h, &x| mix(h, x));
        }
        labels = next;
    }
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    let mut e: Vec<(u64, u64, u64)> = edges
        .iter()
        .filter(|&&(a, b, _)| a < b)
        .map(|&(a, b, o)| {
            let (x, y) = (labels[pos[&a]], labels[pos[&b]]);
            (x.min(y), x.max(y), o)
        })
        .collect();
    e.sort_unstable();
    let h = sorted.iter().fold(mix(0x1234, members.len() as u64), |h, &x| mix(h, x));
    e.iter().fold(h, |h, &(a, b, o)| mix(mix(mix(h, a), b), o))
}

/// Key of the feature for a pair of rooted subgraphs.
pub fn feature_key(radius: usize, distance: usize, ha: u64, hb: u64) -> u64 {
    mix(mix(mix(mix(0xfeed, radius as u64), distance as u64), ha.min(hb)), ha.max(hb))
}

/// Counts of `(r, d, {hash_u, hash_v})` over unordered root pairs at distance `d ≤ D`.
pub fn nspdk_features(g: &MolecularGraph, params: NspdkParams) -> FeatureMap {
    let dist = distances(g);
    let n = g.n();
    let hashes: Vec<Vec<u64>> = (0..=params.radius)
        .map(|r| (0..n).map(|v| rooted_hash(g, &dist, v, r)).collect())
        .collect();
    let mut phi = FeatureMap::new();
    for u in 0..n {
        for v in u..n {
            let d = dist[u][v];
            if d > params.distance {
                continue;
            }
            for (r, hs) in hashes.iter().enumerate() {
                *phi.entry(feature_key(r, d, hs[u], hs[v])).or_insert(0.0) += 1.0;
            }
        }
    }
    phi
}

fn dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter_map(|(k, v)| large.get(k).map(|w| v * w)).sum()
}

/// Normalised kernel `⟨φ, φ′⟩ / (‖φ‖‖φ′‖)`.
pub fn nspdk_kernel(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Gram matrix of the normalised kernel.
pub fn gram(graphs: &[MolecularGraph], params: NspdkParams) -> Array {
    let feats: Vec<FeatureMap> = graphs.par_iter().map(|g| nspdk_features(g, params)).collect();
    let n = feats.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| nspdk_kernel(&feats[i], &feats[j])).collect())
        .collect();
    Array::matrix(n, n, rows.concat()).expect("square")
}

fn mean_kernel(a: &[FeatureMap], b: &[FeatureMap]) -> f64 {
    let total: f64 = a
        .par_iter()
        .map(|x| b.iter().map(|y| nspdk_kernel(x, y)).sum::<f64>())
        .sum();
    total / (a.len() * b.len()) as f64
}

/// Biased squared MMD between two graph sets under the NSPDK kernel.
pub fn nspdk_mmd(generated: &[MolecularGraph], reference: &[MolecularGraph], params: NspdkParams) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::domain("NSPDK MMD needs two nonempty sets"));
    }
    let fg: Vec<FeatureMap> = generated.par_iter().map(|g| nspdk_features(g, params)).collect();
    let fr: Vec<FeatureMap> = reference.par_iter().map(|g| nspdk_features(g, params)).collect();
    let mmd = mean_kernel(&fg, &fg) + mean_kernel(&fr, &fr) - 2.0 * mean_kernel(&fg, &fr);
    Ok(mmd.max(0.0))
}

/// Node embeddings `h_i^(t)` for each recorded reverse step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTrace {
    pub steps: Vec<Array>,
}

/// Colliding pairs and pairs examined.
pub fn collision_counts(trace: &EmbeddingTrace, eps: f64) -> Result<(u64, u64)> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("collision threshold must be positive, got {eps}")));
    }
    if trace.steps.is_empty() {
        return Err(Error::domain("empty embedding trace"));
    }
    let n = trace.steps[0].rows();
    let d = trace.steps[0].cols();
    if n < 2 {
        return Err(Error::domain("collision rate needs at least two nodes"));
    }
    let (mut c, mut total) = (0u64, 0u64);
    let eps2 = eps * eps;
    for h in &trace.steps {
        if h.rows() != n || h.cols() != d {
            return Err(Error::domain("embedding trace changes shape between steps"));
        }
        for i in 0..n {
            for j in i + 1..n {
                let dist2: f64 = h
                    .row_slice(i)
                    .iter()
                    .zip(h.row_slice(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist2 < eps2 {
                    c += 1;
                }
                total += 1;
            }
        }
    }
    Ok((c, total))
}

/// Fraction of node pairs closer than `eps`, over all steps and pairs.
pub fn collision_rate(trace: &EmbeddingTrace, eps: f64) -> Result<f64> {
    let (c, n) = collision_counts(trace, eps)?;
    Ok(c as f64 / n as f64)
}

/// Pooled rate over several traces: total collisions over total pairs.
/// Traces of single-node graphs are skipped.
pub fn pooled_collision_rate(traces: &[EmbeddingTrace], eps: f64) -> Result<f64> {
    let (mut c, mut n) = (0u64, 0u64);
    for t in traces {
        if t.steps.first().is_some_and(|h| h.rows() < 2) {
            continue;
        }
        let (a, b) = collision_counts(t, eps)?;
        c += a;
        n += b;
    }
    if n == 0 {
        return Err(Error::domain("no trace with at least two nodes"));
    }
    Ok(c as f64 / n as f64)
}

/// Default threshold `1e-3·√d`.
pub fn default_collision_eps(dim: usize) -> f64 {
    1e-3 * (dim as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub valid: usize,
    pub validity: f64,
    /// `None` when no sample is valid.
    pub uniqueness: Option<f64>,
    pub nspdk_mmd: f64,
    pub nspdk: NspdkParams,
}

impl EvalReport {
    pub fn evaluate(
        samples: &[MolecularGraph],
        reference: &[MolecularGraph],
        vocab: &AtomVocabulary,
        nspdk: NspdkParams,
    ) -> Result<Self> {
        let validity = validity(samples, vocab)?;
        let valid = samples
            .iter()
            .map(|g| check_valence(g, vocab))
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&v| v)
            .count();
        Ok(Self {
            samples: samples.len(),
            valid,
            validity,
            uniqueness: uniqueness(samples, vocab)?,
            nspdk_mmd: nspdk_mmd(samples, reference, nspdk)?,
            nspdk,
        })
    }

    pub const CSV_HEADER: &'static str = "validity,uniqueness,nspdk";

    pub fn csv_row(&self) -> String {
        let u = self.uniqueness.map_or(String::new(), |u| format!("{u:.4}"));
        format!("{:.4},{u},{:.6}", self.validity, self.nspdk_mmd)
    }
}
