//! Relative random-walk probabilities: `P_ij = [I, M, …, M^{K−1}]_ij` with
//! `M = D⁻¹A`. Rows of isolated nodes in `M` are zero.

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::graph::{bond_category_table, MolecularGraph, NoisyGraph};

pub const DEFAULT_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RrwpTensor {
    n: usize,
    k: usize,
    /// `data[(i*n + j)*k + s]` is `(M^s)_ij`.
    data: Vec<f64>,
}

impl RrwpTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// The `K` walk probabilities from `i` to `j`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.k;
        &self.data[o..o + self.k]
    }

    pub fn get(&self, i: usize, j: usize, s: usize) -> f64 {
        self.data[(i * self.n + j) * self.k + s]
    }

    /// `n×K` matrix of return probabilities `P_ii`.
    pub fn node_diag(&self) -> Array {
        let mut out = Vec::with_capacity(self.n * self.k);
        for i in 0..self.n {
            out.extend_from_slice(self.pair(i, i));
        }
        Array::matrix(self.n, self.k, out).expect("sized")
    }

    /// `n²×K` matrix over ordered pairs, row `i*n + j`.
    pub fn pairs(&self) -> Array {
        Array::matrix(self.n * self.n, self.k, self.data.clone()).expect("sized")
    }
}

/// RRWP of a symmetric row-major `n×n` adjacency.
pub fn rrwp(adj: &[bool], n: usize, k: usize) -> Result<RrwpTensor> {
    if k == 0 {
        return Err(Error::domain("RRWP needs K >= 1"));
    }
    if adj.len() != n * n {
        return Err(Error::domain(format!(
            "adjacency has {} entries for {n} nodes",
            adj.len()
        )));
    }
    let mut m = vec![0.0; n * n];
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let deg = (0..n).filter(|&j| adj[i * n + j]).count();
        if deg > 0 {
            let w = 1.0 / deg as f64;
            for j in 0..n {
                if adj[i * n + j] {
                    m[i * n + j] = w;
                    into[j].push(i);
                }
            }
        }
    }
    let mut data = vec![0.0; n * n * k];
    let mut power = vec![0.0; n * n];
    for i in 0..n {
        power[i * n + i] = 1.0;
    }
    let mut next = vec![0.0; n * n];
    let mut terms = Vec::new();
    for s in 0..k {
        for (ij, &p) in power.iter().enumerate() {
            data[ij * k + s] = p;
        }
        if s + 1 == k {
            break;
        }
        for i in 0..n {
            for j in 0..n {
                terms.clear();
                terms.extend(into[j].iter().map(|&l| power[i * n + l] * m[l * n + j]));
                // summing in value order makes the result independent of node labels
                terms.sort_by(f64::total_cmp);
                next[i * n + j] = terms.iter().sum();
            }
        }
        std::mem::swap(&mut power, &mut next);
    }
    Ok(RrwpTensor { n, k, data })
}

pub fn rrwp_molecule(g: &MolecularGraph, k: usize) -> Result<RrwpTensor> {
    rrwp(&g.adjacency(), g.n(), k)
}

/// RRWP of a noisy graph: masked edges carry no topology.
pub fn rrwp_noisy(g: &NoisyGraph, is_bond: &[bool], k: usize) -> Result<RrwpTensor> {
    rrwp(&g.adjacency(is_bond), g.n(), k)
}

/// RRWP of a noisy graph over plain bond categories.
pub fn rrwp_noisy_bonds(g: &NoisyGraph, k: usize) -> Result<RrwpTensor> {
    rrwp_noisy(g, &bond_category_table(), k)
}

/// Appends `P_vv` to node rows (`n×f`) and `P_uv` to ordered-pair rows (`n²×m`).
pub fn concat_structural(node_feats: &Array, edge_feats: &Array, p: &RrwpTensor) -> Result<(Array, Array)> {
    let n = p.n;
    if node_feats.rows() != n || edge_feats.rows() != n * n {
        return Err(Error::domain(format!(
            "features have {} node rows and {} pair rows, RRWP covers {n} nodes",
            node_feats.rows(),
            edge_feats.rows()
        )));
    }
    let nodes = hcat(node_feats, &p.node_diag());
    let edges = hcat(edge_feats, &p.pairs());
    Ok((nodes, edges))
}

fn hcat(a: &Array, b: &Array) -> Array {
    let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
    let mut out = Vec::with_capacity(r * (ca + cb));
    for i in 0..r {
        out.extend_from_slice(a.row_slice(i));
        out.extend_from_slice(b.row_slice(i));
    }
    Array::matrix(r, ca + cb, out).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> Vec<bool> {
        vec![false, true, true, false]
    }

    #[test]
    fn two_node_path_alternates() {
        let p = rrwp(&path2(), 2, 3).unwrap();
        assert_eq!(p.pair(0, 0), &[1.0, 0.0, 1.0]);
        assert_eq!(p.pair(0, 1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn triangle_is_uniform() {
        let adj: Vec<bool> = (0..9).map(|x| x / 3 != x % 3).collect();
        let p = rrwp(&adj, 3, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { [1.0, 0.0] } else { [0.0, 0.5] };
                assert_eq!(p.pair(i, j), &want);
            }
        }
    }

    #[test]
    fn isolated_rows_vanish() {
        let adj = vec![false; 4];
        let p = rrwp(&adj, 2, 3).unwrap();
        assert_eq!(p.pair(0, 0), &[1.0, 0.0, 0.0]);
        assert_eq!(p.pair(0, 1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_k_is_rejected() {
        assert!(rrwp(&path2(), 2, 0).is_err());
    }

    #[test]
    fn concat_dimensions() {
        let p = rrwp(&path2(), 2, 8).unwrap();
        let (nodes, edges) = concat_structural(&Array::zeros(&[2, 7]), &Array::zeros(&[4, 3]), &p).unwrap();
        assert_eq!(nodes.shape(), &[2, 15]);
        assert_eq!(edges.shape(), &[4, 11]);
        assert!(concat_structural(&Array::zeros(&[3, 7]), &Array::zeros(&[4, 3]), &p).is_err());
    }

    #[test]
    fn identity_slice_with_k1() {
        let p = rrwp(&path2(), 2, 1).unwrap();
        let (nodes, edges) = concat_structural(&Array::zeros(&[2, 0]), &Array::zeros(&[4, 0]), &p).unwrap();
        assert_eq!(nodes.data(), &[1.0, 1.0]);
        assert_eq!(edges.data(), &[1.0, 0.0, 0.0, 1.0]);
    }
}
