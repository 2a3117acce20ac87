//! JSON Lines dataset: one `{"atoms": [...], "bonds": [[i,j,order],...], "property": x|null}` per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AtomVocabulary, MolecularGraph};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    atoms: Vec<String>,
    bonds: Vec<(usize, usize, usize)>,
    property: Option<f64>,
}

fn to_graph(rec: Record, vocab: &AtomVocabulary, line: usize) -> Result<MolecularGraph> {
    let atoms = rec
        .atoms
        .iter()
        .map(|s| {
            vocab.index(s).ok_or_else(|| {
                Error::domain(format!("line {line}: symbol {s} is not in vocabulary {}", vocab.name()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bad = |msg: String| Error::Record { line, msg };
    let mut g = MolecularGraph::new(atoms).map_err(|e| bad(e.to_string()))?;
    for &(i, j, o) in &rec.bonds {
        if i >= j {
            return Err(bad(format!("bond [{i},{j},{o}] must have i < j")));
        }
        if !(1..=3).contains(&o) {
            return Err(bad(format!("bond order {o} not in 1..=3")));
        }
        if j >= g.n() {
            return Err(bad(format!("bond [{i},{j},{o}] refers past {} atoms", g.n())));
        }
        if g.bond(i, j) != 0 {
            return Err(bad(format!("bond ({i},{j}) listed twice")));
        }
        g.set_bond(i, j, o).map_err(|e| bad(e.to_string()))?;
    }
    g.property = rec.property;
    Ok(g)
}

pub fn read_dataset_str(text: &str, vocab: &AtomVocabulary) -> Result<Vec<MolecularGraph>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| Error::Record {
            line,
            msg: e.to_string(),
        })?;
        out.push(to_graph(rec, vocab, line)?);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path, vocab: &AtomVocabulary) -> Result<Vec<MolecularGraph>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_dataset_str(&text, vocab)
}

pub fn write_dataset_string(graphs: &[MolecularGraph], vocab: &AtomVocabulary) -> Result<String> {
    let mut out = String::new();
    for g in graphs {
        g.validate(vocab)?;
        let rec = Record {
            atoms: g.atoms().iter().map(|&a| vocab.symbol(a).to_string()).collect(),
            bonds: g.bond_list(),
            property: g.property,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(graphs: &[MolecularGraph], vocab: &AtomVocabulary, path: &Path) -> Result<()> {
    let text = write_dataset_string(graphs, vocab)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_empty() {
        assert!(read_dataset_str("", &AtomVocabulary::qm9()).unwrap().is_empty());
    }

    #[test]
    fn methane_record() {
        let line = r#"{"atoms":["C","H","H","H","H"],"bonds":[[0,1,1],[0,2,1],[0,3,1],[0,4,1]],"property":null}"#;
        let gs = read_dataset_str(line, &AtomVocabulary::qm9()).unwrap();
        assert_eq!(gs.len(), 1);
        assert_eq!(gs[0].n(), 5);
        assert_eq!(gs[0].property, None);
        assert_eq!(write_dataset_string(&gs, &AtomVocabulary::qm9()).unwrap().trim_end(), line);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"atoms\":[\"C\"],\"bonds\":[],\"property\":1.5}\n{oops\n";
        match read_dataset_str(text, &AtomVocabulary::qm9()) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_bonds_are_rejected() {
        let v = AtomVocabulary::qm9();
        for rec in [
            r#"{"atoms":["C","C"],"bonds":[[1,0,1]],"property":null}"#,
            r#"{"atoms":["C","C"],"bonds":[[0,1,4]],"property":null}"#,
            r#"{"atoms":["C","C"],"bonds":[[0,2,1]],"property":null}"#,
            r#"{"atoms":["C","C"],"bonds":[[0,1,1],[0,1,2]],"property":null}"#,
        ] {
            assert!(matches!(read_dataset_str(rec, &v), Err(Error::Record { line: 1, .. })), "{rec}");
        }
    }

    #[test]
    fn unknown_symbol_is_domain_error() {
        let rec = r#"{"atoms":["S"],"bonds":[],"property":null}"#;
        assert!(matches!(read_dataset_str(rec, &AtomVocabulary::qm9()), Err(Error::Domain(_))));
    }
}
