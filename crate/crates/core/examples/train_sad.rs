//! Trains structure-aware masked diffusion on the bundled toy set, samples
//! from it and scores the samples.
//!
//! cargo run --release --example train_sad -- [steps] [batch] [samples]

use std::time::Instant;

use vqsad::diffusion::{DiffusionConfig, DiffusionModel, Mode, SampleConfig, TrainConfig};
use vqsad::graph::AtomVocabulary;
use vqsad::metrics::{uniqueness, validity};
use vqsad::smiles::{ingest_smi, write_smiles};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> vqsad::Result<()> {
    let (steps, batch, count) = (arg(1, 2000), arg(2, 8), arg(3, 64));
    let vocab = AtomVocabulary::qm9();
    let (graphs, _) = ingest_smi(include_str!("../data/qm9_toy.smi"), &vocab);

    let mut model = DiffusionModel::sad(DiffusionConfig::new(Mode::Sad), &vocab, 0)?;
    let data = model.prepare(&graphs, None)?;
    let start = Instant::now();
    let records = model.train_with(&data, &TrainConfig { steps, batch, ..Default::default() }, |r, _| {
        if r.step % 200 == 0 {
            println!("step {:5} loss {:9.3} masked {:.3}", r.step, r.loss, r.masked_fraction_mean);
        }
        Ok(())
    })?;
    let ma = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let w = 50.min(losses.len());
    println!(
        "trained {steps} steps in {:.1}s, moving average {:.3} -> {:.3}",
        start.elapsed().as_secs_f64(),
        ma(&losses[..w]),
        ma(&losses[losses.len() - w..])
    );

    let start = Instant::now();
    let samples = model.sample(&SampleConfig { count, seed: 1, ..Default::default() })?;
    println!("sampled {count} graphs in {:.1}s", start.elapsed().as_secs_f64());
    let mols: Vec<_> = samples.iter().map(|s| s.molecule.clone()).collect();
    println!("validity {:.1}%", validity(&mols, &vocab)?);
    match uniqueness(&mols, &vocab)? {
        Some(u) => println!("uniqueness {u:.1}%"),
        None => println!("uniqueness undefined (no valid samples)"),
    }
    for m in mols.iter().take(8) {
        match write_smiles(m, &vocab) {
            Ok(s) => println!("  {s}"),
            Err(e) => println!("  <{e}>"),
        }
    }
    Ok(())
}
