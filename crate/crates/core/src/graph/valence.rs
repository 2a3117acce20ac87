use super::{AtomVocabulary, MolecularGraph};
use crate::error::Result;

/// True when the non-null bonds connect every atom.
pub fn is_connected(g: &MolecularGraph) -> bool {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for (j, _) in g.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Valence rule (bond-order sum ≤ maximum valence on every atom) plus connectivity.
pub fn check_valence(g: &MolecularGraph, vocab: &AtomVocabulary) -> Result<bool> {
    g.validate(vocab)?;
    let within = (0..g.n()).all(|i| g.bond_order_sum(i) <= vocab.valence(g.atom(i)));
    Ok(within && is_connected(g))
}
