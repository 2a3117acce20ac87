//! Parses SMILES, adds explicit hydrogens, writes them back and shows that
//! the canonical hash ignores atom numbering.
//!
//! cargo run --example smiles_roundtrip -- [SMILES...]

use vqsad::graph::{canonical_hash, check_valence, AtomVocabulary};
use vqsad::smiles::{ingest_smi, ingest_smiles, parse_smiles, write_smiles};

fn main() -> vqsad::Result<()> {
    let vocab = AtomVocabulary::qm9();
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["CCO", "C1=CC=CN1", "OC(=O)C#N", "C1CC1F"].map(String::from).to_vec();
    }
    for s in &inputs {
        let heavy = match parse_smiles(s, &vocab) {
            Ok(g) => g,
            Err(e) => {
                println!("{s:12} rejected: {e}");
                continue;
            }
        };
        let full = ingest_smiles(s, &vocab)?;
        let back = write_smiles(&heavy, &vocab)?;
        let reversed: Vec<usize> = (0..full.n()).rev().collect();
        let same = canonical_hash(&full) == canonical_hash(&full.permute(&reversed));
        println!(
            "{s:12} heavy {:2}  with H {:2}  valid {}  written {back:14} hash stable under relabeling {same}",
            heavy.n(),
            full.n(),
            check_valence(&full, &vocab)?,
        );
    }

    let (graphs, rejects) = ingest_smi("CCO\nC[Si]C\nC1CC\nN#N\n", &vocab);
    println!("\nbatch ingest: {} accepted", graphs.len());
    for r in rejects {
        println!("  line {}: {}", r.line, r.reason);
    }
    Ok(())
}
