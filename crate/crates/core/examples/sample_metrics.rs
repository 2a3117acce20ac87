//! Scores two small molecule sets: validity, uniqueness with relabeled
//! duplicates, NSPDK MMD, and the collision rate of a toy embedding trace.
//!
//! cargo run --release --example sample_metrics

use vqsad::autodiff::Array;
use vqsad::graph::{AtomVocabulary, MolecularGraph};
use vqsad::metrics::{collision_rate, nspdk_mmd, uniqueness, validity, EmbeddingTrace, NspdkParams};
use vqsad::smiles::ingest_smiles;

fn set(smiles: &[&str], vocab: &AtomVocabulary) -> vqsad::Result<Vec<MolecularGraph>> {
    smiles.iter().map(|s| ingest_smiles(s, vocab)).collect()
}

fn main() -> vqsad::Result<()> {
    let vocab = AtomVocabulary::qm9();
    let reference = set(&["CCO", "CC(=O)O", "C1CCOC1", "CC#N", "OCCN"], &vocab)?;
    let mut generated = set(&["OCC", "CC(=O)O", "CCCC", "C1CC1"], &vocab)?;
    // an over-valent carbon
    let mut bad = MolecularGraph::new(vec![0, 0, 0])?;
    bad.set_bond(0, 1, 3)?;
    bad.set_bond(0, 2, 2)?;
    bad.set_bond(1, 2, 1)?;
    generated.push(bad);

    let params = NspdkParams::default();
    println!("validity   {:.1}%", validity(&generated, &vocab)?);
    println!("uniqueness {:.1}%", uniqueness(&generated, &vocab)?.unwrap_or(0.0));
    println!("NSPDK MMD generated vs reference {:.5}", nspdk_mmd(&generated, &reference, params)?);
    println!("NSPDK MMD reference vs itself    {:.5}", nspdk_mmd(&reference, &reference, params)?);

    // nodes 0 and 1 share an embedding for the first two steps
    let steps = (0..4)
        .map(|s| {
            let a = if s < 2 { 0.0 } else { 1.0 };
            Array::matrix(3, 2, vec![0.0, 0.0, a, 0.0, 5.0, 5.0])
        })
        .collect::<vqsad::Result<Vec<_>>>()?;
    let rate = collision_rate(&EmbeddingTrace { steps }, 1e-3)?;
    println!("collision rate of the toy trace {rate:.4} (2 of 12 pairs)");
    Ok(())
}
