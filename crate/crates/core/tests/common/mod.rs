#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use vqsad::autodiff::{ParamStore, Tape, Var};
use vqsad::graph::{AtomVocabulary, MolecularGraph};

/// Connected molecule with every atom within its valence: a random tree plus
/// a few ring closures, bond orders limited by the remaining valence.
pub fn random_molecule(rng: &mut impl Rng, vocab: &AtomVocabulary, n: usize) -> MolecularGraph {
    let heavy: Vec<usize> = (0..vocab.len())
        .filter(|&a| Some(a) != vocab.hydrogen() && vocab.valence(a) >= 2)
        .collect();
    let atoms: Vec<usize> = (0..n).map(|_| *heavy.choose(rng).unwrap()).collect();
    let mut g = MolecularGraph::new(atoms).unwrap();
    let free = |g: &MolecularGraph, i: usize| vocab.valence(g.atom(i)) - g.bond_order_sum(i);
    for v in 1..n {
        let cands: Vec<usize> = (0..v).filter(|&u| free(&g, u) >= 1).collect();
        let Some(&u) = cands.choose(rng) else {
            // every earlier atom is saturated; restart with a fresh draw
            return random_molecule(rng, vocab, n);
        };
        let max = free(&g, u).min(free(&g, v)).min(3) as usize;
        g.set_bond(u, v, rng.gen_range(1..=max)).unwrap();
    }
    for _ in 0..rng.gen_range(0..=2) {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && g.bond(i, j) == 0 && free(&g, i) >= 1 && free(&g, j) >= 1 {
            g.set_bond(i, j, 1).unwrap();
        }
    }
    g
}

/// Random simple graph as a dense adjacency.
pub fn random_adjacency(rng: &mut impl Rng, n: usize, p: f64) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                adj[i * n + j] = true;
                adj[j * n + i] = true;
            }
        }
    }
    adj
}

pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// `(M^s)_{ij}` for `s < k`, `M = D⁻¹A`, by repeated dense products.
pub fn naive_walk_powers(adj: &[bool], n: usize, k: usize) -> Vec<Vec<f64>> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        let deg = (0..n).filter(|&j| adj[i * n + j]).count();
        for j in 0..n {
            if adj[i * n + j] {
                m[i * n + j] = 1.0 / deg as f64;
            }
        }
    }
    let mut cur = vec![0.0; n * n];
    for i in 0..n {
        cur[i * n + i] = 1.0;
    }
    let mut out = vec![cur.clone()];
    for _ in 1..k {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                for j in 0..n {
                    next[i * n + j] += cur[i * n + l] * m[l * n + j];
                }
            }
        }
        cur = next;
        out.push(cur.clone());
    }
    out
}

/// Largest relative error between tape gradients and central differences
/// over every entry of every parameter, `|a − n| / (max(|a|, |n|) + 1e-6·max(1, |f|))`;
/// the floor keeps round-off on near-zero gradients of a large output from counting.
///
/// `f` must rebuild the scalar output from scratch on each call.
pub fn gradient_error<M>(
    m: &mut M,
    store: impl Fn(&mut M) -> &mut ParamStore,
    f: impl Fn(&M, &mut Tape) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let out = f(m, &mut tape);
    let grads = tape.gradients(out).unwrap();
    let ids: Vec<_> = store(m).ids().collect();
    let h = 1e-5;
    let floor = 1e-6 * tape.value(out).item().abs().max(1.0);
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads.get(id).cloned();
        for e in 0..store(m).value(id).len() {
            let old = store(m).value(id).data()[e];
            let mut eval = |x: f64| {
                store(m).value_mut(id).data_mut()[e] = x;
                let mut t = Tape::new();
                let v = f(m, &mut t);
                t.value(v).item()
            };
            let numeric = (eval(old + h) - eval(old - h)) / (2.0 * h);
            store(m).value_mut(id).data_mut()[e] = old;
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[e]);
            worst = worst.max((a - numeric).abs() / (a.abs().max(numeric.abs()) + floor));
        }
    }
    worst
}
