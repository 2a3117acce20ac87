//! SMILES subset: organic atoms from the active vocabulary, `-`/`=`/`#` bonds,
//! parenthesised branches and ring-closure digits 1–9.
//!
//! Charges, brackets, stereo marks, aromatic lowercase atoms and disconnected
//! `.` components are rejected with the byte offset of the offending character.

use crate::error::{Error, Result};
use crate::graph::{is_connected, AtomVocabulary, MolecularGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmilesToken {
    /// Vocabulary index of the element.
    Atom(usize),
    /// Bond order 1–3.
    Bond(usize),
    BranchOpen,
    BranchClose,
    RingDigit(u8),
}

fn err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Smiles {
        offset,
        msg: msg.into(),
    }
}

/// Splits `s` into located tokens.
pub fn tokenize(s: &str, vocab: &AtomVocabulary) -> Result<Vec<(usize, SmilesToken)>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let tok = match c {
            b'A'..=b'Z' => {
                if i + 1 < bytes.len() && bytes[i + 1].is_ascii_lowercase() {
                    let two = &s[i..i + 2];
                    if let Some(idx) = vocab.index(two) {
                        out.push((i, SmilesToken::Atom(idx)));
                        i += 2;
                        continue;
                    }
                }
                let one = &s[i..i + 1];
                match vocab.index(one) {
                    Some(idx) => SmilesToken::Atom(idx),
                    None => return Err(err(i, format!("unknown element {one}"))),
                }
            }
            b'a'..=b'z' => return Err(err(i, "aromatic atoms are not supported")),
            b'-' => SmilesToken::Bond(1),
            b'=' => SmilesToken::Bond(2),
            b'#' => SmilesToken::Bond(3),
            b'(' => SmilesToken::BranchOpen,
            b')' => SmilesToken::BranchClose,
            b'1'..=b'9' => SmilesToken::RingDigit(c - b'0'),
            b'[' => return Err(err(i, "bracket atoms (charges, isotopes, explicit H counts) are not supported")),
            b'@' | b'/' | b'\\' => return Err(err(i, "stereochemistry is not supported")),
            b'.' => return Err(err(i, "disconnected components are not supported")),
            b'%' | b'0' => return Err(err(i, "only ring digits 1-9 are supported")),
            b':' | b'$' => return Err(err(i, "unsupported bond symbol")),
            _ => return Err(err(i, format!("unexpected character {:?}", c as char))),
        };
        out.push((i, tok));
        i += 1;
    }
    Ok(out)
}

/// Parses `s` into a graph with one node per atom token. No hydrogens are added.
pub fn parse_smiles(s: &str, vocab: &AtomVocabulary) -> Result<MolecularGraph> {
    if s.is_empty() {
        return Err(err(0, "empty SMILES"));
    }
    let tokens = tokenize(s, vocab)?;
    let mut atoms: Vec<usize> = Vec::new();
    let mut bonds: Vec<(usize, usize, usize)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(usize, usize)> = None; // (order, offset)
    let mut branches: Vec<(usize, Option<usize>)> = Vec::new(); // (offset, atom before branch)
    let mut rings: [Option<(usize, Option<usize>, usize)>; 10] = [None; 10]; // (atom, order, offset)

    let has_bond = |bonds: &[(usize, usize, usize)], a: usize, b: usize| {
        bonds.iter().any(|&(x, y, _)| (x == a && y == b) || (x == b && y == a))
    };

    for &(off, tok) in &tokens {
        match tok {
            SmilesToken::Atom(a) => {
                let idx = atoms.len();
                atoms.push(a);
                if let Some(p) = prev {
                    let order = pending.take().map_or(1, |(o, _)| o);
                    bonds.push((p, idx, order));
                }
                prev = Some(idx);
            }
            SmilesToken::Bond(o) => {
                if prev.is_none() {
                    return Err(err(off, "bond symbol before the first atom"));
                }
                if pending.is_some() {
                    return Err(err(off, "two consecutive bond symbols"));
                }
                pending = Some((o, off));
            }
            SmilesToken::BranchOpen => {
                if prev.is_none() {
                    return Err(err(off, "branch opened before any atom"));
                }
                if let Some((_, poff)) = pending {
                    return Err(err(poff, "bond symbol before a branch"));
                }
                branches.push((off, prev));
            }
            SmilesToken::BranchClose => {
                let Some((_, anchor)) = branches.pop() else {
                    return Err(err(off, "unbalanced ')'"));
                };
                if let Some((_, poff)) = pending {
                    return Err(err(poff, "dangling bond symbol"));
                }
                prev = anchor;
            }
            SmilesToken::RingDigit(d) => {
                let Some(cur) = prev else {
                    return Err(err(off, "ring digit before any atom"));
                };
                let order = pending.take().map(|(o, _)| o);
                match rings[d as usize].take() {
                    None => rings[d as usize] = Some((cur, order, off)),
                    Some((other, open_order, _)) => {
                        if other == cur {
                            return Err(err(off, "ring closure onto the same atom"));
                        }
                        let order = match (open_order, order) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(err(off, "ring closure bond orders disagree"));
                            }
                            (Some(a), _) | (None, Some(a)) => a,
                            (None, None) => 1,
                        };
                        if has_bond(&bonds, other, cur) {
                            return Err(err(off, "ring closure duplicates an existing bond"));
                        }
                        bonds.push((other, cur, order));
                    }
                }
            }
        }
    }
    if let Some((_, poff)) = pending {
        return Err(err(poff, "dangling bond symbol"));
    }
    if let Some(&(off, _)) = branches.last() {
        return Err(err(off, "unbalanced '('"));
    }
    if let Some((_, _, off)) = rings.iter().flatten().min_by_key(|r| r.2) {
        return Err(err(*off, "unpaired ring digit"));
    }
    if atoms.is_empty() {
        return Err(err(0, "no atoms"));
    }
    MolecularGraph::from_bonds(atoms, &bonds)
}

/// Appends hydrogens to saturate each heavy atom up to its maximum valence.
/// No-op for vocabularies without H or graphs that already hold H atoms.
pub fn add_hydrogens(g: &MolecularGraph, vocab: &AtomVocabulary) -> Result<MolecularGraph> {
    let Some(h) = vocab.hydrogen() else {
        return Ok(g.clone());
    };
    if g.atoms().contains(&h) {
        return Ok(g.clone());
    }
    let mut atoms = g.atoms().to_vec();
    let mut bonds = g.bond_list();
    for i in 0..g.n() {
        let free = vocab.valence(g.atom(i)).saturating_sub(g.bond_order_sum(i));
        for _ in 0..free {
            atoms.push(h);
            bonds.push((i, atoms.len() - 1, 1));
        }
    }
    let mut out = MolecularGraph::from_bonds(atoms, &bonds)?;
    out.property = g.property;
    Ok(out)
}

/// Dataset ingestion: parse, then add explicit hydrogens when the vocabulary has H.
pub fn ingest_smiles(s: &str, vocab: &AtomVocabulary) -> Result<MolecularGraph> {
    let g = parse_smiles(s, vocab)?;
    add_hydrogens(&g, vocab)
}

/// A `.smi` line that failed to parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    /// 1-based line number.
    pub line: usize,
    pub smiles: String,
    pub reason: String,
}

/// Ingests a `.smi` text: one SMILES per line, optionally followed by
/// whitespace and a name. Blank lines and `#` comments are skipped.
pub fn ingest_smi(text: &str, vocab: &AtomVocabulary) -> (Vec<MolecularGraph>, Vec<Reject>) {
    let mut graphs = Vec::new();
    let mut rejects = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let smiles = line.split_whitespace().next().unwrap_or_default();
        match ingest_smiles(smiles, vocab) {
            Ok(g) => graphs.push(g),
            Err(e) => rejects.push(Reject {
                line: i + 1,
                smiles: smiles.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    (graphs, rejects)
}

fn bond_symbol(order: usize) -> &'static str {
    match order {
        2 => "=",
        3 => "#",
        _ => "",
    }
}

/// Writes a connected graph as a SMILES string (depth-first from atom 0).
pub fn write_smiles(g: &MolecularGraph, vocab: &AtomVocabulary) -> Result<String> {
    g.validate(vocab)?;
    if !is_connected(g) {
        return Err(Error::domain("write_smiles needs a connected graph"));
    }
    let n = g.n();
    let mut w = Writer {
        g,
        vocab,
        order: vec![usize::MAX; n],
        children: vec![Vec::new(); n],
        rings: vec![Vec::new(); n],
        open: Vec::new(),
        free: (1..=9).collect(),
        out: String::new(),
    };
    let mut counter = 0;
    w.discover(0, usize::MAX, &mut counter);
    for (i, j, o) in g.bond_list() {
        if w.children[i].contains(&j) || w.children[j].contains(&i) {
            continue;
        }
        w.rings[i].push((j, o));
        w.rings[j].push((i, o));
    }
    let order = w.order.clone();
    for r in &mut w.rings {
        r.sort_by_key(|&(u, _)| order[u]);
    }
    w.emit(0)?;
    Ok(w.out)
}

struct Writer<'a> {
    g: &'a MolecularGraph,
    vocab: &'a AtomVocabulary,
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
    // non-tree bonds per atom: (other atom, order)
    rings: Vec<Vec<(usize, usize)>>,
    // open ring digits: ((lo, hi), digit)
    open: Vec<((usize, usize), u8)>,
    free: Vec<u8>,
    out: String,
}

impl Writer<'_> {
    fn discover(&mut self, v: usize, parent: usize, counter: &mut usize) {
        self.order[v] = *counter;
        *counter += 1;
        if parent != usize::MAX {
            self.children[parent].push(v);
        }
        let nbrs: Vec<usize> = self.g.neighbors(v).map(|(u, _)| u).collect();
        for u in nbrs {
            if self.order[u] == usize::MAX {
                self.discover(u, v, counter);
            }
        }
    }

    fn emit(&mut self, v: usize) -> Result<()> {
        self.out.push_str(self.vocab.symbol(self.g.atom(v)));
        for k in 0..self.rings[v].len() {
            let (u, o) = self.rings[v][k];
            let key = (v.min(u), v.max(u));
            if self.order[u] > self.order[v] {
                if self.free.is_empty() {
                    return Err(Error::domain("more than 9 simultaneous ring closures"));
                }
                let d = self.free.remove(0);
                self.open.push((key, d));
                self.out.push_str(bond_symbol(o));
                self.out.push((b'0' + d) as char);
            } else {
                let pos = self
                    .open
                    .iter()
                    .position(|&(k, _)| k == key)
                    .expect("ring opened at the earlier atom");
                let (_, d) = self.open.remove(pos);
                self.out.push((b'0' + d) as char);
                let at = self.free.partition_point(|&x| x < d);
                self.free.insert(at, d);
            }
        }
        let kids = self.children[v].clone();
        for (idx, &c) in kids.iter().enumerate() {
            let branch = idx + 1 < kids.len();
            if branch {
                self.out.push('(');
            }
            self.out.push_str(bond_symbol(self.g.bond(v, c)));
            self.emit(c)?;
            if branch {
                self.out.push(')');
            }
        }
        Ok(())
    }
}
