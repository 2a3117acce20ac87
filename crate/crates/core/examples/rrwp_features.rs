//! Random-walk structural encodings of a small molecule: the return
//! probabilities on the diagonal and a few off-diagonal pairs.
//!
//! cargo run --example rrwp_features -- [SMILES] [K]

use vqsad::graph::AtomVocabulary;
use vqsad::rrwp::rrwp_molecule;
use vqsad::smiles::parse_smiles;

fn main() -> vqsad::Result<()> {
    let smiles = std::env::args().nth(1).unwrap_or_else(|| "CC1=CC=CC=C1".into());
    let k = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let vocab = AtomVocabulary::zinc();
    let g = parse_smiles(&smiles, &vocab)?;
    let p = rrwp_molecule(&g, k)?;

    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    println!("{smiles}: {} atoms, K = {k} (steps 0..{})", g.n(), k - 1);
    println!("\nreturn probabilities P_vv");
    for v in 0..g.n() {
        println!("  {:2} {:2}  {}", v, vocab.symbol(g.atom(v)), fmt(p.pair(v, v)));
    }
    println!("\nwalk probabilities from atom 0");
    for u in 1..g.n().min(5) {
        println!("  0 -> {u}  {}", fmt(p.pair(0, u)));
    }
    Ok(())
}
