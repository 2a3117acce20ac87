mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{naive_walk_powers, random_adjacency};
use vqsad::rrwp::rrwp;
use vqsad::schedule::{alpha_bar, build_transition, Cumulative, ZetaBounds};

fn simplex(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #[test]
    fn rrwp_matches_walk_powers(seed in any::<u64>(), n in 1usize..9, k in 1usize..6, density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = random_adjacency(&mut rng, n, density);
        let p = rrwp(&adj, n, k).unwrap();
        let oracle = naive_walk_powers(&adj, n, k);
        for s in 0..k {
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    prop_assert!((p.get(i, j, s) - oracle[s][i * n + j]).abs() <= 1e-12);
                    row += p.get(i, j, s);
                }
                let isolated = !(0..n).any(|j| adj[i * n + j]);
                let expect = if s == 0 { 1.0 } else if isolated { 0.0 } else { 1.0 };
                prop_assert!((row - expect).abs() <= 1e-12, "row {i} step {s}: {row}");
            }
        }
    }

    #[test]
    fn alpha_bar_is_monotone_with_fixed_ends(raw in prop::collection::vec(1e-6f64..1.0, 1..7)) {
        let f = simplex(&raw);
        let b = ZetaBounds::default();
        let (a0, _) = alpha_bar(&f, 0.0, b).unwrap();
        let (a1, _) = alpha_bar(&f, 1.0, b).unwrap();
        prop_assert!((a0 - 1.0 / (1.0 + b.min.exp())).abs() <= 1e-12);
        prop_assert!((a1 - 1.0 / (1.0 + b.max.exp())).abs() <= 1e-12);
        let mut prev = f64::INFINITY;
        for g in 0..=50 {
            let (a, da) = alpha_bar(&f, g as f64 / 50.0, b).unwrap();
            prop_assert!(a <= prev && da <= 0.0);
            prev = a;
        }
    }

    #[test]
    fn transitions_are_row_stochastic(alpha in 0.0f64..1.0, share in 0.0f64..1.0, k in 1usize..7) {
        let rest = 1.0 - alpha;
        let gamma = if k > 1 { rest * share / (k - 1) as f64 } else { 0.0 };
        let beta = rest - gamma * (k - 1) as f64;
        let q = build_transition(alpha, beta, gamma, k).unwrap();
        for r in 0..=k {
            prop_assert!((q.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(q.row(r).iter().all(|&x| x >= 0.0));
        }
        prop_assert_eq!(q.row(k)[k], 1.0);
    }

    #[test]
    fn replace_ratio_always_gives_a_valid_triple(a in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        let c = Cumulative::with_replace_ratio(a, r);
        prop_assert!(c.check().is_ok());
        prop_assert!(c.gamma_bar <= 0.25 + 1e-15);
    }
}

#[test]
fn out_of_range_time_is_rejected() {
    let b = ZetaBounds::default();
    assert!(alpha_bar(&[1.0], -0.1, b).is_err());
    assert!(alpha_bar(&[1.0], 1.1, b).is_err());
    assert!(alpha_bar(&[1.0], f64::NAN, b).is_err());
}
