//! The learned-schedule parametrisation and its transition algebra: ᾱ(t) for
//! a few polynomial weightings, per-step matrices, their products and a
//! Monte Carlo check of the corruption marginals.
//!
//! cargo run --release --example schedule_algebra

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vqsad::schedule::{
    alpha_bar, build_transition, cumulate_exact, draw_outcome, Cumulative, Outcome, Step, ZetaBounds,
};

fn main() -> vqsad::Result<()> {
    let bounds = ZetaBounds::default();
    let weights = [
        ("linear", vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("uniform", vec![1.0 / 6.0; 6]),
        ("late", vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
    ];
    println!("{:8} {}", "t", weights.iter().map(|(n, _)| format!("{n:>16}")).collect::<String>());
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let cols: Vec<String> = weights
            .iter()
            .map(|(_, f)| {
                let (a, da) = alpha_bar(f, t, bounds).unwrap();
                format!("{a:8.4} {da:7.2}")
            })
            .collect();
        println!("{t:<8.1} {}", cols.join(""));
    }

    // a mask-and-replace chain over 3 classes
    let k = 3;
    let steps: Vec<Step> = (0..5).map(|_| Step { alpha: 0.8, beta: 0.1, gamma: 0.05 }).collect();
    let mut product = build_transition(0.8, 0.1, 0.05, k)?;
    for s in &steps[1..] {
        product = product.compose(&build_transition(s.alpha, s.beta, s.gamma, k)?);
    }
    let exact = cumulate_exact(&steps, k);
    println!("\nafter 5 steps, row of class 0: {:.6?}", product.row(0));
    println!("cumulative keep/mask/replace: {:.6} {:.6} {:.6}", exact.alpha_bar, exact.beta_bar, exact.gamma_bar);

    let c = Cumulative { alpha_bar: 0.6, beta_bar: 0.3, gamma_bar: 0.1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[match draw_outcome(c, &mut rng) {
            Outcome::Keep => 0,
            Outcome::Mask => 1,
            Outcome::Replace => 2,
        }] += 1;
    }
    let freq = counts.map(|n| n as f64 / draws as f64);
    println!("\nMonte Carlo keep/mask/replace {freq:.4?} vs (0.6, 0.3, 0.1)");
    Ok(())
}
