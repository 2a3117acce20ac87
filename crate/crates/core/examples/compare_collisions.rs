//! Full toy pipeline: tokenizer, VQ-SAD and plain SAD on the bundled set,
//! then validity, uniqueness, NSPDK and node-embedding collision rates of
//! both samplers.
//!
//! cargo run --release --example compare_collisions -- [steps] [samples]

use std::time::Instant;

use vqsad::diffusion::{DiffusionConfig, DiffusionModel, Mode, SampleConfig, TrainConfig};
use vqsad::graph::{AtomVocabulary, MolecularGraph};
use vqsad::metrics::{default_collision_eps, pooled_collision_rate, EvalReport, NspdkParams};
use vqsad::smiles::ingest_smi;
use vqsad::vq::{VqConfig, VqModel, VqTrainConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn report(name: &str, model: &DiffusionModel, reference: &[MolecularGraph], count: usize) -> vqsad::Result<f64> {
    let vocab = AtomVocabulary::qm9();
    let start = Instant::now();
    let out = model.sample(&SampleConfig { count, seed: 7, trace: true, ..Default::default() })?;
    let mols: Vec<_> = out.iter().map(|s| s.molecule.clone()).collect();
    let eval = EvalReport::evaluate(&mols, reference, &vocab, NspdkParams::default())?;
    let traces: Vec<_> = out.into_iter().filter_map(|s| s.trace).collect();
    let dim = traces[0].steps[0].cols();
    let rate = pooled_collision_rate(&traces, default_collision_eps(dim))?;
    println!(
        "{name:7} sampled in {:5.1}s  validity {:5.1}%  uniqueness {}  nspdk {:.4}  collision rate {rate:.4}",
        start.elapsed().as_secs_f64(),
        eval.validity,
        eval.uniqueness.map_or("n/a".into(), |u| format!("{u:.1}%")),
        eval.nspdk_mmd,
    );
    Ok(rate)
}

fn main() -> vqsad::Result<()> {
    let (steps, count) = (arg(1, 2000), arg(2, 64));
    let vocab = AtomVocabulary::qm9();
    let (graphs, _) = ingest_smi(include_str!("../data/qm9_toy.smi"), &vocab);
    let train = TrainConfig { steps, ..Default::default() };

    let mut tok = VqModel::new(VqConfig::default(), vocab.len(), 0)?;
    tok.train(&graphs, &VqTrainConfig { steps, ..Default::default() })?;
    tok.freeze();
    println!("tokenizer reconstruction {:.4}", tok.reconstruction_accuracy(&graphs)?);

    let mut vq = DiffusionModel::vq_sad(DiffusionConfig::new(Mode::VqSad), &tok, &vocab, 0)?;
    let data = vq.prepare(&graphs, Some(&tok))?;
    vq.train(&data, &train)?;

    let mut sad = DiffusionModel::sad(DiffusionConfig::new(Mode::Sad), &vocab, 0)?;
    let data = sad.prepare(&graphs, None)?;
    sad.train(&data, &train)?;

    let a = report("VQ-SAD", &vq, &graphs, count)?;
    let b = report("SAD", &sad, &graphs, count)?;
    println!("collision rate VQ-SAD / SAD = {:.3}", a / b.max(f64::MIN_POSITIVE));
    Ok(())
}
