//! Molecular graph model, vocabularies, hashing, validity and the JSONL dataset format.

mod dataset;
mod hash;
mod valence;

pub use dataset::{read_dataset, read_dataset_str, write_dataset, write_dataset_string};
pub use hash::{canonical_hash, mix, GraphDigest};
pub use valence::{check_valence, is_connected};

use crate::error::{Error, Result};

/// Edge categories: 0 is "no bond", then single, double, triple.
pub const NUM_BOND_TYPES: usize = 4;
pub const NO_BOND: usize = 0;

/// Element symbols with their maximum valences.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomVocabulary {
    symbols: Vec<String>,
    valences: Vec<u32>,
    name: String,
}

impl AtomVocabulary {
    pub fn new(name: &str, symbols: &[&str], valences: &[u32]) -> Result<Self> {
        if symbols.len() != valences.len() || symbols.is_empty() {
            return Err(Error::domain("vocabulary needs one valence per symbol"));
        }
        if valences.iter().any(|&v| v < 1) {
            return Err(Error::domain("valences must be at least 1"));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::domain(format!("duplicate symbol {s}")));
            }
        }
        Ok(Self {
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            valences: valences.to_vec(),
            name: name.to_string(),
        })
    }

    /// H, C, N, O, F with explicit hydrogens.
    pub fn qm9() -> Self {
        Self::new("qm9", &["H", "C", "N", "O", "F"], &[1, 4, 3, 2, 1]).expect("static vocabulary")
    }

    /// C, N, O, S, Cl with implicit hydrogens.
    pub fn zinc() -> Self {
        Self::new("zinc", &["C", "N", "O", "S", "Cl"], &[4, 3, 2, 6, 1]).expect("static vocabulary")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "qm9" => Ok(Self::qm9()),
            "zinc" | "zinc250k" => Ok(Self::zinc()),
            other => Err(Error::domain(format!("unknown vocabulary {other} (expected qm9 or zinc)"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn valence(&self, idx: usize) -> u32 {
        self.valences[idx]
    }

    pub fn index(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn hydrogen(&self) -> Option<usize> {
        self.index("H")
    }
}

/// Undirected molecule: atom categories and a symmetric bond-category matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<usize>,
    bonds: Vec<u8>,
    pub property: Option<f64>,
}

impl MolecularGraph {
    /// Graph with the given atoms and no bonds.
    pub fn new(atoms: Vec<usize>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("a molecular graph needs at least one atom"));
        }
        let n = atoms.len();
        Ok(Self {
            atoms,
            bonds: vec![0; n * n],
            property: None,
        })
    }

    pub fn from_bonds(atoms: Vec<usize>, bonds: &[(usize, usize, usize)]) -> Result<Self> {
        let mut g = Self::new(atoms)?;
        for &(i, j, o) in bonds {
            g.set_bond(i, j, o)?;
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> usize {
        self.atoms[i]
    }

    pub fn set_atom(&mut self, i: usize, a: usize) {
        self.atoms[i] = a;
    }

    pub fn bond(&self, i: usize, j: usize) -> usize {
        self.bonds[i * self.n() + j] as usize
    }

    /// Sets the bond category of the pair, keeping the matrix symmetric.
    pub fn set_bond(&mut self, i: usize, j: usize, order: usize) -> Result<()> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::domain(format!("bond ({i},{j}) out of range for {n} atoms")));
        }
        if i == j {
            return Err(Error::domain(format!("self bond on atom {i}")));
        }
        if order >= NUM_BOND_TYPES {
            return Err(Error::domain(format!("bond order {order} not in 0..{NUM_BOND_TYPES}")));
        }
        self.bonds[i * n + j] = order as u8;
        self.bonds[j * n + i] = order as u8;
        Ok(())
    }

    /// Bonds with `i < j` and a non-null category, in row-major order.
    pub fn bond_list(&self) -> Vec<(usize, usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let o = self.bond(i, j);
                if o != NO_BOND {
                    out.push((i, j, o));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n).filter_map(move |j| {
            let o = self.bond(i, j);
            (o != NO_BOND).then_some((j, o))
        })
    }

    /// Total bond order carried by atom `i`.
    pub fn bond_order_sum(&self, i: usize) -> u32 {
        self.neighbors(i).map(|(_, o)| o as u32).sum()
    }

    /// Adjacency pattern (non-null bonds) as a row-major boolean matrix.
    pub fn adjacency(&self) -> Vec<bool> {
        self.bonds.iter().map(|&b| b as usize != NO_BOND).collect()
    }

    /// Relabels atoms: atom `i` moves to position `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut atoms = vec![0; n];
        let mut bonds = vec![0; n * n];
        for i in 0..n {
            atoms[perm[i]] = self.atoms[i];
            for j in 0..n {
                bonds[perm[i] * n + perm[j]] = self.bonds[i * n + j];
            }
        }
        Self {
            atoms,
            bonds,
            property: self.property,
        }
    }

    /// Checks the category bounds against `vocab`.
    pub fn validate(&self, vocab: &AtomVocabulary) -> Result<()> {
        for (i, &a) in self.atoms.iter().enumerate() {
            if a >= vocab.len() {
                return Err(Error::domain(format!(
                    "atom {i} has category {a}, vocabulary {} has {}",
                    vocab.name(),
                    vocab.len()
                )));
            }
        }
        Ok(())
    }

    /// Synthetic scalar used for conditional-generation plumbing:
    /// heavy-atom count plus the number of extra bond orders (unsaturation).
    pub fn synthetic_property(&self, vocab: &AtomVocabulary) -> f64 {
        let h = vocab.hydrogen();
        let heavy = self.atoms.iter().filter(|&&a| Some(a) != h).count();
        let unsat: usize = self.bond_list().iter().map(|&(_, _, o)| o - 1).sum();
        (heavy + unsat) as f64
    }
}

/// Graph whose node and edge states may also hold the mask index.
///
/// Node states live in `0..=node_classes` and edge states in `0..=edge_classes`;
/// the top index of each range is the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGraph {
    pub node_classes: usize,
    pub edge_classes: usize,
    pub nodes: Vec<usize>,
    /// Row-major `n×n`, symmetric; the diagonal is unused and kept at 0.
    pub edges: Vec<usize>,
}

impl NoisyGraph {
    pub fn fully_masked(n: usize, node_classes: usize, edge_classes: usize) -> Self {
        let mut edges = vec![edge_classes; n * n];
        for i in 0..n {
            edges[i * n + i] = 0;
        }
        Self {
            node_classes,
            edge_classes,
            nodes: vec![node_classes; n],
            edges,
        }
    }

    /// Clean molecule with categories as states.
    pub fn from_molecule(g: &MolecularGraph, node_classes: usize) -> Self {
        let n = g.n();
        let mut edges = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                edges[i * n + j] = g.bond(i, j);
            }
        }
        Self {
            node_classes,
            edge_classes: NUM_BOND_TYPES,
            nodes: g.atoms().to_vec(),
            edges,
        }
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_mask(&self) -> usize {
        self.node_classes
    }

    pub fn edge_mask(&self) -> usize {
        self.edge_classes
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        self.edges[i * self.n() + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, s: usize) {
        let n = self.n();
        self.edges[i * n + j] = s;
        self.edges[j * n + i] = s;
    }

    pub fn masked_count(&self) -> usize {
        let n = self.n();
        let nodes = self.nodes.iter().filter(|&&s| s == self.node_classes).count();
        let mut edges = 0;
        for i in 0..n {
            for j in i + 1..n {
                if self.edge(i, j) == self.edge_classes {
                    edges += 1;
                }
            }
        }
        nodes + edges
    }

    /// Adjacency where an edge exists iff `is_bond[state]`; masked edges are absent.
    pub fn adjacency(&self, is_bond: &[bool]) -> Vec<bool> {
        let n = self.n();
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let s = self.edges[i * n + j];
                adj[i * n + j] = i != j && s < self.edge_classes && is_bond[s];
            }
        }
        adj
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut nodes = vec![0; n];
        let mut edges = vec![0; n * n];
        for i in 0..n {
            nodes[perm[i]] = self.nodes[i];
            for j in 0..n {
                edges[perm[i] * n + perm[j]] = self.edges[i * n + j];
            }
        }
        Self {
            nodes,
            edges,
            ..*self
        }
    }
}

/// Unordered pairs `i < j` in row-major order.
pub fn pair_list(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Bond table for the plain bond categories: every non-null category is a bond.
pub fn bond_category_table() -> Vec<bool> {
    (0..NUM_BOND_TYPES).map(|c| c != NO_BOND).collect()
}
