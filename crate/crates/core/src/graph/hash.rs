use sha2::{Digest, Sha256};

use super::MolecularGraph;

/// 256-bit canonical digest of a molecular graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GraphDigest(pub [u8; 32]);

impl std::fmt::Display for GraphDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Order-dependent 64-bit combiner (splitmix64 finalizer over `h ^ x`).
pub fn mix(h: u64, x: u64) -> u64 {
    let mut z = h ^ x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix_all(seed: u64, xs: &[u64]) -> u64 {
    xs.iter().fold(seed, |h, &x| mix(h, x))
}

/// Weisfeiler–Lehman refinement labels after `rounds` iterations.
pub(crate) fn wl_labels(g: &MolecularGraph, rounds: usize) -> Vec<u64> {
    let n = g.n();
    let mut labels: Vec<u64> = (0..n)
        .map(|i| {
            let mut inc: Vec<u64> = g.neighbors(i).map(|(_, o)| o as u64).collect();
            inc.sort_unstable();
            mix_all(mix(1, g.atom(i) as u64), &inc)
        })
        .collect();
    for _ in 0..rounds {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut msgs: Vec<u64> = g.neighbors(i).map(|(j, o)| mix(o as u64, labels[j])).collect();
                msgs.sort_unstable();
                mix_all(mix(2, labels[i]), &msgs)
            })
            .collect();
        labels = next;
    }
    labels
}

/// Permutation-invariant digest from `n` rounds of WL refinement seeded with
/// atom types and incident bond-type multisets.
///
/// Non-isomorphic graphs that WL cannot separate (some regular graphs) collide.
pub fn canonical_hash(g: &MolecularGraph) -> GraphDigest {
    let n = g.n();
    let labels = wl_labels(g, n.max(1));
    let mut sorted = labels.clone();
    sorted.sort_unstable();
    let mut edges: Vec<(u64, u64, u64)> = g
        .bond_list()
        .into_iter()
        .map(|(i, j, o)| {
            let (a, b) = (labels[i].min(labels[j]), labels[i].max(labels[j]));
            (a, b, o as u64)
        })
        .collect();
    edges.sort_unstable();

    let mut h = Sha256::new();
    h.update((n as u64).to_le_bytes());
    for l in sorted {
        h.update(l.to_le_bytes());
    }
    h.update((edges.len() as u64).to_le_bytes());
    for (a, b, o) in edges {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
        h.update(o.to_le_bytes());
    }
    GraphDigest(h.finalize().into())
}
