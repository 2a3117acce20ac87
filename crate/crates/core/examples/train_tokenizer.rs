//! Trains the atom/bond tokenizer on the bundled toy set and reports
//! reconstruction accuracy and codebook usage.
//!
//! cargo run --release --example train_tokenizer -- [steps]

use std::time::Instant;

use vqsad::graph::AtomVocabulary;
use vqsad::smiles::ingest_smi;
use vqsad::vq::{VqConfig, VqModel, VqTrainConfig};

fn main() -> vqsad::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let vocab = AtomVocabulary::qm9();
    let text = include_str!("../data/qm9_toy.smi");
    let (graphs, rejects) = ingest_smi(text, &vocab);
    assert!(rejects.is_empty());

    let mut model = VqModel::new(VqConfig::default(), vocab.len(), 0)?;
    let start = Instant::now();
    let report = model.train(&graphs, &VqTrainConfig { steps, ..Default::default() })?;
    let head: f64 = report.losses.iter().take(50).sum::<f64>() / 50.0;
    let tail: f64 = report.losses.iter().rev().take(50).sum::<f64>() / 50.0;
    println!("{steps} steps in {:.1}s, loss {head:.4} -> {tail:.4}", start.elapsed().as_secs_f64());

    model.freeze();
    println!("reconstruction accuracy {:.4}", model.reconstruction_accuracy(&graphs)?);
    let (atoms, bonds) = model.usage(&graphs)?;
    let live = |c: &[usize]| c.iter().filter(|&&x| x > 0).count();
    println!("atom codes in use {}/{}", live(&atoms), atoms.len());
    println!("bond codes in use {}/{}", live(&bonds), bonds.len());
    println!("atom code -> element {:?}", model.atom_lookup()?);
    println!("bond code -> order {:?}", model.bond_lookup()?);
    Ok(())
}
