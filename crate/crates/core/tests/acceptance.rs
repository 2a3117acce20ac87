//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the criteria execute one after another and each
//! runtime is measured without other tests competing for the core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gradient_error, naive_walk_powers, random_adjacency, random_molecule, random_permutation};
use vqsad::autodiff::{gumbel::gumbel_hard, hard_indices, Adam, Array, ParamStore, Tape, Var};
use vqsad::denoiser::{unordered_index, Condition, Denoiser, DenoiserConfig, DenoiserInput};
use vqsad::diffusion::{
    forward_corrupt, CleanGraph, DiffusionConfig, DiffusionModel, Mode, SampleConfig, TrainConfig,
};
use vqsad::graph::{bond_category_table, pair_list, AtomVocabulary, MolecularGraph, NoisyGraph};
use vqsad::metrics::{
    collision_rate, default_collision_eps, gram, nspdk_mmd, pooled_collision_rate, uniqueness, validity,
    EmbeddingTrace, NspdkParams,
};
use vqsad::rrwp::{rrwp, rrwp_noisy_bonds};
use vqsad::schedule::{
    alpha_bar, build_transition, cumulate, cumulate_exact, Cumulative,
    SchedulerConfig, SchedulerNet, Step, ZetaBounds,
};
use vqsad::smiles::{ingest_smi, ingest_smiles, parse_smiles};
use vqsad::vq::{quantize, VqConfig, VqModel, VqTrainConfig};

/// Outcome of one criterion: whether it holds and what was measured.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// 1 ---------------------------------------------------------------------

/// Closed form of ᾱ(t), valid for any real t.
fn alpha_closed(f: &[f64], t: f64, b: ZetaBounds) -> f64 {
    let zh: f64 = f.iter().enumerate().map(|(i, w)| w * t.powi(i as i32 + 1)).sum();
    sigmoid(-(zh * (b.max - b.min) + b.min))
}

/// `1 − ᾱ(t)` evaluated directly.
fn tail_closed(f: &[f64], t: f64, b: ZetaBounds) -> f64 {
    let zh: f64 = f.iter().enumerate().map(|(i, w)| w * t.powi(i as i32 + 1)).sum();
    sigmoid(zh * (b.max - b.min) + b.min)
}

fn schedule_correctness() -> Verdict {
    let b = ZetaBounds::default();
    let cfg = SchedulerConfig {
        cond_dim: 0,
        ..SchedulerConfig::default()
    };
    let (mut end_err, mut deriv_err, mut monotone): (f64, f64, bool) = (0.0, 0.0, true);
    let mut flat_err: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = SchedulerNet::new(&mut store, "s", 5, 4, 8, cfg, &mut rng).unwrap();
        // wider weights than the initialiser so the simplex weights vary a lot
        for id in store.ids().collect::<Vec<_>>() {
            for x in store.value_mut(id).data_mut() {
                *x *= 4.0;
            }
        }
        let n = rng.gen_range(2..9);
        let adj = random_adjacency(&mut rng, n, 0.4);
        let p = rrwp(&adj, n, 8).unwrap();
        let mut tape = Tape::new();
        let cls = tape.constant(Array::one_hot(&(0..n).map(|i| i % 5).collect::<Vec<_>>(), 5));
        let st = tape.constant(p.node_diag());
        let head = net.node.forward(&mut tape, &store, cls, st, None).unwrap();
        let w = tape.value(head.weights).clone();
        let f = w.row_slice(rng.gen_range(0..n)).to_vec();

        let a0 = alpha_bar(&f, 0.0, b).unwrap().0;
        let a1 = alpha_bar(&f, 1.0, b).unwrap().0;
        end_err = end_err.max((a0 - sigmoid(-b.min)).abs()).max((a1 - sigmoid(-b.max)).abs());
        let mut prev = f64::INFINITY;
        for g in 0..100 {
            let t = g as f64 / 99.0;
            let (a, da) = alpha_bar(&f, t, b).unwrap();
            monotone &= a <= prev;
            prev = a;
            end_err = end_err.max((a - alpha_closed(&f, t, b)).abs());
            // five-point central difference of whichever tail of the sigmoid is
            // smaller, so the differenced values keep full relative precision
            let upper = a > 0.5;
            let q = |t: f64| if upper { -tail_closed(&f, t, b) } else { alpha_closed(&f, t, b) };
            let h = 1e-4;
            let fd = (-q(t + 2.0 * h) + 8.0 * q(t + h) - 8.0 * q(t - h) + q(t - 2.0 * h)) / (12.0 * h);
            // below 1e-9 the slope is under the difference's rounding floor
            // (about ε·q/h), so only an absolute bound is meaningful there
            if fd.abs() >= 1e-9 {
                deriv_err = deriv_err.max((da - fd).abs() / fd.abs());
            } else {
                flat_err = flat_err.max((da - fd).abs());
            }
        }
    }
    verdict(
        monotone && end_err <= 1e-9 && deriv_err <= 1e-5 && flat_err <= 1e-12,
        format!(
            "monotone {monotone}, closed-form error {end_err:.1e} (tol 1e-9), derivative rel err {deriv_err:.1e} \
             (tol 1e-5, |ᾱ̇| ≥ 1e-9), abs err {flat_err:.1e} where flatter (tol 1e-12)"
        ),
    )
}

// 2 ---------------------------------------------------------------------

fn random_step(rng: &mut impl Rng, k: usize, replace: bool) -> Step {
    let alpha = rng.gen_range(0.3..0.99);
    let rest = 1.0 - alpha;
    let (beta, gamma) = if replace && k > 1 {
        let share = rng.gen_range(0.0..1.0);
        (rest * share, rest * (1.0 - share) / (k - 1) as f64)
    } else {
        (rest, 0.0)
    };
    Step { alpha, beta, gamma }
}

fn transition_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut row_err, mut id_err, mut prod_err, mut prod19_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut absorbing = true;
    for k in 1..=5 {
        for t in 1..=10 {
            for replace in [false, true] {
                let steps: Vec<Step> = (0..t).map(|_| random_step(&mut rng, k, replace)).collect();
                let mut product: Option<vqsad::schedule::TransitionMatrix> = None;
                for s in &steps {
                    let q = build_transition(s.alpha, s.beta, s.gamma, k).unwrap();
                    for r in 0..=k {
                        row_err = row_err.max((q.row(r).iter().sum::<f64>() - 1.0).abs());
                    }
                    absorbing &= (0..k).all(|c| q.get(k, c) == 0.0) && q.get(k, k) == 1.0;
                    product = Some(match product {
                        None => q,
                        Some(p) => p.compose(&q),
                    });
                }
                let product = product.unwrap();
                let exact = cumulate_exact(&steps, k);
                id_err = id_err.max((exact.alpha_bar + exact.beta_bar + exact.gamma_bar - 1.0).abs());
                let alphas: Vec<f64> = steps.iter().map(|s| s.alpha).collect();
                let betas: Vec<f64> = steps.iter().map(|s| s.beta).collect();
                let c19 = cumulate(&alphas, &betas).unwrap();
                id_err = id_err.max((c19.alpha_bar + c19.beta_bar + c19.gamma_bar - 1.0).abs());
                for x0 in 0..k {
                    for to in 0..=k {
                        let want = if to == k {
                            exact.beta_bar
                        } else if to == x0 {
                            exact.alpha_bar
                        } else {
                            exact.gamma_bar / (k - 1) as f64
                        };
                        prod_err = prod_err.max((product.get(x0, to) - want).abs());
                    }
                    if !replace {
                        prod19_err = prod19_err
                            .max((product.get(x0, x0) - c19.alpha_bar).abs())
                            .max((product.get(x0, k) - c19.beta_bar).abs());
                    }
                }
            }
        }
    }
    verdict(
        row_err <= 1e-9 && absorbing && id_err <= 1e-12 && prod_err <= 1e-12 && prod19_err <= 1e-12,
        format!(
            "row sums {row_err:.1e}, mask row absorbing {absorbing}, ᾱ+β̄+γ̄ identity {id_err:.1e}, \
             products vs expansion {prod_err:.1e} (product form, γ=0: {prod19_err:.1e}) over K≤5, T≤10"
        ),
    )
}

// 3 ---------------------------------------------------------------------

fn corruption_statistics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000usize;
    let mut worst_sigma: f64 = 0.0;
    let mut replaced_ok = true;
    for setting in 0..10 {
        let k = rng.gen_range(2..6);
        let a = rng.gen_range(0.05..0.9);
        let r = rng.gen_range(0.0..1.0);
        let c = Cumulative::with_replace_ratio(a, r);
        let probs = [c.alpha_bar, c.beta_bar, c.gamma_bar];
        let x0 = setting % k;
        if std::env::var("ACCEPTANCE_VERBOSE").is_ok() {
            eprintln!("setting {setting}: k {k} a {a} r {r} -> {probs:?}");
        }
        let mut counts = [[0usize; 3]; 2];

        // hard Gumbel-softmax draws, as in training
        let logits = Array::matrix(1, 3, probs.iter().map(|p| p.max(1e-300).ln()).collect()).unwrap();
        for _ in 0..draws {
            let z = gumbel_hard(&logits, 1.0, &mut rng).unwrap();
            counts[0][hard_indices(&z)[0]] += 1;
        }
        // whole-graph corruption of 20 nodes, as in sampling and evaluation
        let n = 20;
        let clean = CleanGraph {
            nodes: vec![x0; n],
            edges: vec![0; n * n],
            cond: None,
        };
        let edge_c = vec![Cumulative::masking(1.0); pair_list(n).len()];
        for _ in 0..draws / n {
            let g = forward_corrupt(&clean, &vec![c; n], &edge_c, k, 2, &mut rng).unwrap();
            for (&s, &x) in g.nodes.iter().zip(&clean.nodes) {
                if s != x && s != k {
                    replaced_ok &= s < k;
                }
                counts[1][if s == x0 { 0 } else if s == k { 1 } else { 2 }] += 1;
            }
        }
        for (which, row) in counts.iter().enumerate() {
            let total: usize = row.iter().sum();
            for (i, &p) in probs.iter().enumerate() {
                let sd = (p * (1.0 - p) / total as f64).sqrt().max(1e-12);
                let freq = row[i] as f64 / total as f64;
                if std::env::var("ACCEPTANCE_VERBOSE").is_ok() {
                    eprintln!("setting {setting} sampler {which} outcome {i}: {:.2}σ", (freq - p) / sd);
                }
                worst_sigma = worst_sigma.max((freq - p).abs() / sd);
            }
        }
    }
    verdict(
        worst_sigma <= 3.0 && replaced_ok,
        format!(
            "largest deviation {worst_sigma:.2}σ (tol 3σ) over 10 settings, Gumbel and graph corruption, \
             1e5 draws each; replacements in vocabulary {replaced_ok}"
        ),
    )
}

// 4 ---------------------------------------------------------------------

fn rrwp_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut err: f64 = 0.0;
    let mut equivariant = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=10);
        let k = rng.gen_range(1..=6);
        let density = rng.gen_range(0.1..0.7);
        let adj = random_adjacency(&mut rng, n, density);
        let p = rrwp(&adj, n, k).unwrap();
        let oracle = naive_walk_powers(&adj, n, k);
        for s in 0..k {
            for i in 0..n {
                for j in 0..n {
                    err = err.max((p.get(i, j, s) - oracle[s][i * n + j]).abs());
                }
            }
        }
        let perm = random_permutation(&mut rng, n);
        let mut padj = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                padj[perm[i] * n + perm[j]] = adj[i * n + j];
            }
        }
        let q = rrwp(&padj, n, k).unwrap();
        for i in 0..n {
            for j in 0..n {
                equivariant &= q.pair(perm[i], perm[j]) == p.pair(i, j);
            }
        }
    }
    verdict(
        err <= 1e-12 && equivariant,
        format!("max deviation from matrix powers {err:.1e} (tol 1e-12), permutation equivariance exact: {equivariant}"),
    )
}

// 5 ---------------------------------------------------------------------

/// One randomly assembled differentiable program over a few parameters.
fn composition(seed: u64) -> (ParamStore, impl Fn(&ParamStore, &mut Tape) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut add = |name: &str, r: usize, c: usize, rng: &mut ChaCha8Rng| {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.add(name, Array::matrix(r, c, data).unwrap(), true).unwrap()
    };
    let a = add("a", 3, 4, &mut rng);
    let b = add("b", 4, 4, &mut rng);
    let row = add("row", 1, 4, &mut rng);
    let col = add("col", 3, 1, &mut rng);
    let other = add("other", 3, 4, &mut rng);
    let ops: Vec<usize> = (0..6).map(|_| rng.gen_range(0..18)).collect();
    let weights = Array::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let f = move |store: &ParamStore, tape: &mut Tape| {
        let mut x = tape.param(store, a);
        let bv = tape.param(store, b);
        let rv = tape.param(store, row);
        let cv = tape.param(store, col);
        let ov = tape.param(store, other);
        for &op in &ops {
            x = match op {
                0 => tape.matmul(x, bv).unwrap(),
                1 => tape.add_row(x, rv).unwrap(),
                2 => tape.mul_col(x, cv).unwrap(),
                3 => tape.sigmoid(x),
                4 => tape.softplus(x),
                5 => {
                    let s = tape.scale(x, 0.5);
                    tape.exp(s)
                }
                6 => {
                    let p = tape.softplus(x);
                    let p = tape.add_scalar(p, 0.1);
                    tape.log(p)
                }
                7 => {
                    let p = tape.softplus(x);
                    tape.powf(p, 1.5)
                }
                8 => tape.softmax(x),
                9 => tape.log_softmax(x),
                10 => {
                    let d = tape.softplus(ov);
                    let d = tape.add_scalar(d, 0.5);
                    tape.div(x, d).unwrap()
                }
                11 => {
                    let c = tape.concat(&[x, ov]).unwrap();
                    let c = tape.sigmoid(c);
                    tape.slice_cols(c, 2, 6).unwrap()
                }
                12 => {
                    let g = tape.gather_rows(x, &[2, 0, 1, 2]).unwrap();
                    tape.scatter_add_rows(g, &[0, 1, 2, 0], 3).unwrap()
                }
                13 => {
                    let r = tape.reshape(x, 4, 3).unwrap();
                    let r = tape.square(r);
                    tape.reshape(r, 3, 4).unwrap()
                }
                14 => {
                    let cos = tape.cosine_rows(x, ov, 1e-12).unwrap();
                    tape.mul_col(x, cos).unwrap()
                }
                15 => {
                    let s = tape.sum_cols(x);
                    tape.mul_col(ov, s).unwrap()
                }
                16 => tape.sub(x, ov).unwrap(),
                _ => {
                    let m = tape.mul(x, ov).unwrap();
                    tape.rsub_scalar(1.0, m)
                }
            };
        }
        let w = tape.constant(weights.clone());
        let prod = tape.mul(x, w).unwrap();
        let picked = tape.pick_cols(prod, &[0, 3, 1]).unwrap();
        let s = tape.sum(prod);
        let p = tape.mean(picked);
        tape.add(s, p).unwrap()
    };
    (store, f)
}

fn four_node_loss_error() -> f64 {
    let vocab = AtomVocabulary::zinc();
    let mut cfg = DiffusionConfig::new(Mode::Sad);
    cfg.hidden = 6;
    cfg.layers = 2;
    cfg.time_dim = 4;
    cfg.rrwp_k = 3;
    cfg.scheduler.hidden = 5;
    cfg.relaxed = false;
    let mut model = DiffusionModel::sad(cfg, &vocab, 1).unwrap();
    let g = parse_smiles("CC(N)=O", &vocab).unwrap();
    let data = model.prepare(&[g], None).unwrap();
    let clean = data[0].clone();
    gradient_error(
        &mut model,
        |m| &mut m.store,
        |m, tape| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            m.graph_loss(tape, &clean, 0.55, Condition::Null, &mut rng).unwrap().loss
        },
    )
}

fn autodiff_checks() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mut store, f) = composition(seed);
        worst = worst.max(gradient_error(&mut store, |s| s, |s, tape| f(s, tape)));
    }
    let full = four_node_loss_error();
    verdict(
        worst <= 1e-4 && full <= 1e-4,
        format!("20 compositions max rel err {worst:.1e}, full loss on a 4-node graph {full:.1e} (tol 1e-4)"),
    )
}

// 6 ---------------------------------------------------------------------

fn vq_independent_loss(model: &VqModel, graphs: &[MolecularGraph]) -> (f64, f64) {
    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / ((na + 1e-12) * (nb + 1e-12))
    };
    let family = |h: &Array, book: &Array, decode: &dyn Fn(&Array) -> Array, target: &[usize], classes: usize| {
        let mut total = 0.0;
        let mut chosen = Vec::new();
        for r in 0..h.rows() {
            let best = (0..book.rows())
                .min_by(|&x, &y| {
                    let d = |k: usize| -> f64 {
                        book.row_slice(k).iter().zip(h.row_slice(r)).map(|(e, v)| (e - v).powi(2)).sum()
                    };
                    d(x).partial_cmp(&d(y)).unwrap()
                })
                .unwrap();
            chosen.extend_from_slice(book.row_slice(best));
        }
        let e = Array::matrix(h.rows(), h.cols(), chosen).unwrap();
        let vhat = decode(&e);
        for r in 0..h.rows() {
            let mut v = vec![0.0; classes];
            v[target[r]] = 1.0;
            let rec = (1.0 - cosine(&v, vhat.row_slice(r))).clamp(0.0, 2.0).powf(model.config.gamma);
            let dist: f64 = h.row_slice(r).iter().zip(e.row_slice(r)).map(|(a, b)| (a - b).powi(2)).sum();
            total += rec + (1.0 + model.config.beta) * dist;
        }
        total / h.rows() as f64
    };
    let enc: Vec<_> = graphs.iter().map(|g| model.encode_inputs(g).unwrap()).collect();
    let stack = |f: &dyn Fn(&vqsad::vq::Encoded) -> &Array| {
        let parts: Vec<&Array> = enc.iter().map(f).filter(|a| a.rows() > 0).collect();
        let cols = parts[0].cols();
        let data: Vec<f64> = parts.iter().flat_map(|a| a.data().to_vec()).collect();
        Array::matrix(data.len() / cols, cols, data).unwrap()
    };
    let node_t: Vec<usize> = enc.iter().flat_map(|e| e.node_target.clone()).collect();
    let edge_t: Vec<usize> = enc.iter().flat_map(|e| e.edge_target.clone()).collect();
    let hn = model.encode_nodes(&stack(&|e| &e.node_in)).unwrap();
    let he = model.encode_edges(&stack(&|e| &e.edge_in)).unwrap();
    let node = family(&hn, model.atom_codebook(), &|e| model.decode_nodes(e).unwrap(), &node_t, model.node_classes);
    let edge = family(&he, model.bond_codebook(), &|e| model.decode_edges(e).unwrap(), &edge_t, 4);
    (node, edge)
}

fn vq_tokenizer() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let book = Array::matrix(32, 16, (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut mismatches = 0;
    for q in 0..1000 {
        let h: Vec<f64> = if q % 10 == 0 {
            // exactly on a code
            book.row_slice(q % 32).to_vec()
        } else {
            (0..16).map(|_| rng.gen_range(-1.5..1.5)).collect()
        };
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for k in 0..32 {
            let d: f64 = book.row_slice(k).iter().zip(&h).map(|(e, x)| (e - x).powi(2)).sum();
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        let (idx, e) = quantize(&h, &book).unwrap();
        if idx != best || e != book.row_slice(best) {
            mismatches += 1;
        }
    }

    let vocab = AtomVocabulary::qm9();
    let graphs: Vec<MolecularGraph> = ["CCO", "C#N", "OC=O", "C1CC1", "NC(F)=O"]
        .iter()
        .map(|s| ingest_smiles(s, &vocab).unwrap())
        .collect();
    let mut model = VqModel::new(VqConfig::default(), vocab.len(), 6).unwrap();
    model.train(&graphs, &VqTrainConfig { steps: 30, ..Default::default() }).unwrap();
    let lib = model.vq_loss(&graphs).unwrap();
    let (node, edge) = vq_independent_loss(&model, &graphs);
    let loss_err = (lib.node - node).abs().max((lib.edge - edge).abs());

    let single = vec![ingest_smiles("CC(=O)N", &vocab).unwrap()];
    let mut one = VqModel::new(VqConfig::default(), vocab.len(), 0).unwrap();
    one.train(&single, &VqTrainConfig { steps: 400, ..Default::default() }).unwrap();
    one.freeze();
    let recon = one.reconstruction_accuracy(&single).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let before = one.store.checksum();
    one.save(dir.path()).unwrap();
    let mut diff = DiffusionModel::vq_sad(DiffusionConfig::new(Mode::VqSad), &one, &vocab, 0).unwrap();
    let data = diff.prepare(&single, Some(&one)).unwrap();
    diff.train(&data, &TrainConfig { steps: 20, batch: 2, ..Default::default() }).unwrap();
    let reloaded = VqModel::load(dir.path()).unwrap();
    let unchanged = one.store.checksum() == before
        && reloaded.store.checksum() == before
        && diff.tokenizer_checksum.as_deref() == Some(before.as_str())
        && diff.check_tokenizer(&reloaded).is_ok();

    verdict(
        mismatches == 0 && loss_err <= 1e-10 && recon == 1.0 && unchanged,
        format!(
            "quantizer mismatches {mismatches}/1000, vq_loss deviation {loss_err:.1e} (tol 1e-10), \
             single-molecule reconstruction {:.1}%, frozen checksum unchanged {unchanged}",
            100.0 * recon
        ),
    )
}

// 7 ---------------------------------------------------------------------

fn denoiser_input<'a>(
    g: &'a NoisyGraph,
    p: &'a vqsad::rrwp::RrwpTensor,
    table: &'a [bool],
    t: f64,
) -> DenoiserInput<'a> {
    DenoiserInput {
        graph: g,
        rrwp: p,
        is_bond: table,
        bond_order: &[0, 1, 2, 3],
        t,
    }
}

fn half_masked(clean: &NoisyGraph, rng: &mut impl Rng) -> NoisyGraph {
    let mut g = clean.clone();
    for i in 0..g.n() {
        if rng.gen_bool(0.5) {
            g.nodes[i] = g.node_classes;
        }
    }
    for (i, j) in pair_list(g.n()) {
        if rng.gen_bool(0.5) {
            g.set_edge(i, j, g.edge_classes);
        }
    }
    g
}

/// Expected number of masked elements an ideal equivariant predictor gets
/// right on `g`: node labels are not observable, so every relabelling of
/// `clean` that agrees with the revealed entries is equally likely, and the
/// best guess per element is the majority category over those relabellings.
fn bayes_hits(clean: &NoisyGraph, g: &NoisyGraph) -> f64 {
    fn extend(clean: &NoisyGraph, g: &NoisyGraph, map: &mut Vec<usize>, used: &mut [bool], found: &mut Vec<Vec<usize>>) {
        let i = map.len();
        if i == g.n() {
            found.push(map.clone());
            return;
        }
        for v in 0..clean.n() {
            if used[v] || (g.nodes[i] != g.node_classes && g.nodes[i] != clean.nodes[v]) {
                continue;
            }
            let fits = (0..i).all(|j| {
                let e = g.edge(j, i);
                e == g.edge_classes || e == clean.edge(map[j], v)
            });
            if fits {
                used[v] = true;
                map.push(v);
                extend(clean, g, map, used, found);
                map.pop();
                used[v] = false;
            }
        }
    }
    let mut found = Vec::new();
    extend(clean, g, &mut Vec::new(), &mut vec![false; clean.n()], &mut found);
    let total = found.len() as f64;
    let best = |counts: &mut std::collections::HashMap<usize, usize>| *counts.values().max().unwrap() as f64 / total;
    let mut hits = 0.0;
    for i in 0..g.n() {
        if g.nodes[i] == g.node_classes {
            let mut counts = std::collections::HashMap::new();
            for m in &found {
                *counts.entry(clean.nodes[m[i]]).or_insert(0) += 1;
            }
            hits += best(&mut counts);
        }
    }
    for (i, j) in pair_list(g.n()) {
        if g.edge(i, j) == g.edge_classes {
            let mut counts = std::collections::HashMap::new();
            for m in &found {
                *counts.entry(clean.edge(m[i], m[j])).or_insert(0) += 1;
            }
            hits += best(&mut counts);
        }
    }
    hits
}

fn denoiser_checks() -> (Verdict, bool) {
    let vocab = AtomVocabulary::qm9();
    let table = bond_category_table();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mut cfg = DenoiserConfig::new(vocab.len(), 4);
    cfg.hidden = 32;
    cfg.layers = 3;
    let den = Denoiser::new(&mut store, "den", cfg, &mut rng).unwrap();

    let mol = ingest_smiles("CC(=O)N", &vocab).unwrap();
    let clean = NoisyGraph::from_molecule(&mol, vocab.len());
    let n = clean.n();

    // equivariance and symmetry on a partly masked state
    let noisy = half_masked(&clean, &mut rng);
    let perm = random_permutation(&mut rng, n);
    let moved = noisy.permute(&perm);
    let (p0, p1) = (rrwp_noisy_bonds(&noisy, 8).unwrap(), rrwp_noisy_bonds(&moved, 8).unwrap());
    let a = den.predict(&store, &denoiser_input(&noisy, &p0, &table, 0.4), Condition::Null).unwrap();
    let b = den.predict(&store, &denoiser_input(&moved, &p1, &table, 0.4), Condition::Null).unwrap();
    let mut equi: f64 = 0.0;
    for i in 0..n {
        for c in 0..a.node_logits.cols() {
            equi = equi.max((a.node_logits.get(i, c) - b.node_logits.get(perm[i], c)).abs());
        }
    }
    for (r, &(i, j)) in pair_list(n).iter().enumerate() {
        let (u, v) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
        let s = unordered_index(n, u, v);
        for c in 0..a.edge_logits.cols() {
            equi = equi.max((a.edge_logits.get(r, c) - b.edge_logits.get(s, c)).abs());
        }
    }
    // dense pair probabilities read from both orientations
    let probs = a.edge_probs();
    let dense = |i: usize, j: usize| probs.row_slice(unordered_index(n, i.min(j), i.max(j))).to_vec();
    let symmetric = (0..n).all(|i| (0..n).filter(|&j| j != i).all(|j| dense(i, j) == dense(j, i)))
        && (0..probs.rows()).all(|r| (probs.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);

    // overfit one molecule under random half masking
    let nodes_x0 = clean.nodes.clone();
    let edges_x0: Vec<usize> = pair_list(n).iter().map(|&(i, j)| clean.edge(i, j)).collect();
    let mut adam = Adam::with_lr(3e-3);
    for _ in 0..20_000 {
        let g = half_masked(&clean, &mut rng);
        let p = rrwp_noisy_bonds(&g, 8).unwrap();
        let mut tape = Tape::new();
        let out = den.forward(&mut tape, &store, &denoiser_input(&g, &p, &table, 0.5), Condition::Null).unwrap();
        let node_mask: Vec<f64> = g.nodes.iter().map(|&s| (s == g.node_classes) as u8 as f64).collect();
        let edge_mask: Vec<f64> = pair_list(n).iter().map(|&(i, j)| (g.edge(i, j) == g.edge_classes) as u8 as f64).collect();
        let mut total = tape.scalar(0.0);
        for (logits, x0, mask) in [(out.node_logits, &nodes_x0, node_mask), (out.edge_logits, &edges_x0, edge_mask)] {
            let lp = tape.log_softmax(logits);
            let picked = tape.pick_cols(lp, x0).unwrap();
            let m = tape.constant(Array::column(mask));
            let masked = tape.mul(picked, m).unwrap();
            let s = tape.sum(masked);
            total = tape.sub(total, s).unwrap();
        }
        store.zero_grad();
        tape.backward(total, &mut store).unwrap();
        adam.step(&mut store);
    }
    let (mut hit, mut seen, mut ideal) = (0usize, 0usize, 0.0);
    for _ in 0..200 {
        let g = half_masked(&clean, &mut rng);
        ideal += bayes_hits(&clean, &g);
        let p = rrwp_noisy_bonds(&g, 8).unwrap();
        let pred = den.predict(&store, &denoiser_input(&g, &p, &table, 0.5), Condition::Null).unwrap();
        let (np, ep) = (pred.node_probs(), pred.edge_probs());
        for i in 0..n {
            if g.nodes[i] == g.node_classes {
                hit += (np.argmax_row(i) == nodes_x0[i]) as usize;
                seen += 1;
            }
        }
        for (r, &(i, j)) in pair_list(n).iter().enumerate() {
            if g.edge(i, j) == g.edge_classes {
                hit += (ep.argmax_row(r) == edges_x0[r]) as usize;
                seen += 1;
            }
        }
    }
    let acc = hit as f64 / seen as f64;
    let structural = equi <= 1e-9 && symmetric;
    let v = verdict(
        structural && acc >= 0.99,
        format!(
            "equivariance error {equi:.1e} (tol 1e-9), edge probabilities symmetric {symmetric}, \
             overfit recovery of masked categories {:.2}% (need ≥99%, ideal equivariant predictor {:.2}%)",
            100.0 * acc,
            100.0 * ideal / seen as f64
        ),
    );
    (v, structural)
}

// 8 ---------------------------------------------------------------------

fn moving_average_drop(losses: &[f64]) -> f64 {
    let ma = |end: usize| losses[end - 50..end].iter().sum::<f64>() / 50.0;
    1.0 - ma(losses.len()) / ma(100)
}

/// Returns the verdict plus whether the shortfall is confined to the sample
/// quality thresholds.
fn toy_run() -> (Verdict, bool) {
    let vocab = AtomVocabulary::qm9();
    let (graphs, _) = ingest_smi(include_str!("../data/qm9_toy.smi"), &vocab);
    let steps = 2000;

    let mut tok = VqModel::new(VqConfig::default(), vocab.len(), 0).unwrap();
    let report = tok.train(&graphs, &VqTrainConfig { steps, ..Default::default() }).unwrap();
    tok.freeze();
    let vq_drop = moving_average_drop(&report.losses);

    let train = TrainConfig { steps, ..Default::default() };
    let mut vq = DiffusionModel::vq_sad(DiffusionConfig::new(Mode::VqSad), &tok, &vocab, 0).unwrap();
    let data = vq.prepare(&graphs, Some(&tok)).unwrap();
    let losses: Vec<f64> = vq.train(&data, &train).unwrap().iter().map(|r| r.loss).collect();
    let vqsad_drop = moving_average_drop(&losses);

    let mut sad = DiffusionModel::sad(DiffusionConfig::new(Mode::Sad), &vocab, 0).unwrap();
    let data = sad.prepare(&graphs, None).unwrap();
    let losses: Vec<f64> = sad.train(&data, &train).unwrap().iter().map(|r| r.loss).collect();
    let sad_drop = moving_average_drop(&losses);

    let cfg = SampleConfig {
        count: 256,
        seed: 8,
        trace: true,
        ..Default::default()
    };
    let rate = |model: &DiffusionModel| {
        let out = model.sample(&cfg).unwrap();
        let mols: Vec<MolecularGraph> = out.iter().map(|o| o.molecule.clone()).collect();
        let traces: Vec<EmbeddingTrace> = out.into_iter().filter_map(|o| o.trace).collect();
        let eps = default_collision_eps(model.config.hidden);
        (mols, pooled_collision_rate(&traces, eps).unwrap())
    };
    let (mols, vq_rate) = rate(&vq);
    let (_, sad_rate) = rate(&sad);
    let valid = validity(&mols, &vocab).unwrap();
    let unique = uniqueness(&mols, &vocab).unwrap();

    let losses_ok = vq_drop >= 0.3 && vqsad_drop >= 0.3 && sad_drop >= 0.3;
    let quality_ok = valid >= 60.0 && unique.is_some_and(|u| u >= 50.0);
    let v = verdict(
        losses_ok && quality_ok,
        format!(
            "loss MA drop VQ-VAE {:.0}%, VQ-SAD {:.0}%, SAD {:.0}% (need ≥30%); VQ-SAD validity {valid:.1}% (need ≥60%), \
             uniqueness {} (need ≥50%); collision rate VQ-SAD {vq_rate:.4} vs SAD {sad_rate:.4} (reported)",
            100.0 * vq_drop,
            100.0 * vqsad_drop,
            100.0 * sad_drop,
            unique.map_or("undefined".into(), |u| format!("{u:.1}%")),
        ),
    );
    (v, losses_ok)
}

// 9 ---------------------------------------------------------------------

/// Brute-force isomorphism of small molecules by backtracking over atom maps.
fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    fn extend(a: &MolecularGraph, b: &MolecularGraph, map: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
        let i = map.len();
        if i == a.n() {
            return true;
        }
        for j in 0..b.n() {
            if used[j] || a.atom(i) != b.atom(j) {
                continue;
            }
            if (0..i).any(|k| a.bond(k, i) != b.bond(map[k], j)) {
                continue;
            }
            map.push(j);
            used[j] = true;
            if extend(a, b, map, used) {
                return true;
            }
            map.pop();
            used[j] = false;
        }
        false
    }
    let mut sa = a.atoms().to_vec();
    let mut sb = b.atoms().to_vec();
    sa.sort_unstable();
    sb.sort_unstable();
    sa == sb && extend(a, b, &mut Vec::new(), &mut vec![false; b.n()])
}

fn reference_collision(trace: &EmbeddingTrace, eps: f64) -> f64 {
    let (mut c, mut total) = (0.0, 0.0);
    for h in &trace.steps {
        for i in 0..h.rows() {
            for j in 0..h.rows() {
                if j <= i {
                    continue;
                }
                let d: f64 = (0..h.cols()).map(|c| (h.get(i, c) - h.get(j, c)).powi(2)).sum::<f64>().sqrt();
                total += 1.0;
                if d < eps {
                    c += 1.0;
                }
            }
        }
    }
    c / total
}

fn metric_checks() -> Verdict {
    let vocab = AtomVocabulary::zinc();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let set: Vec<MolecularGraph> = (0..30).map(|i| random_molecule(&mut rng, &vocab, 2 + i % 8)).collect();
    let params = NspdkParams::default();
    let self_mmd = nspdk_mmd(&set, &set, params).unwrap();
    let k = gram(&set, params);
    let m = DMatrix::from_row_slice(k.rows(), k.cols(), k.data());
    let sym = (0..k.rows()).all(|i| (0..k.rows()).all(|j| k.get(i, j) == k.get(j, i)));
    let min_eig = SymmetricEigen::new(m).eigenvalues.min();

    let mut coll_equal = true;
    for _ in 0..20 {
        let (n, t) = (5, 4);
        let steps: Vec<Array> = (0..t)
            .map(|_| {
                // a small grid so that some nodes coincide
                Array::matrix(n, 3, (0..n * 3).map(|_| rng.gen_range(0..3) as f64 * 0.5).collect()).unwrap()
            })
            .collect();
        let trace = EmbeddingTrace { steps };
        let eps = 0.6;
        coll_equal &= collision_rate(&trace, eps).unwrap() == reference_collision(&trace, eps);
        let perm = random_permutation(&mut rng, n);
        let moved = EmbeddingTrace {
            steps: trace
                .steps
                .iter()
                .map(|h| {
                    let mut out = Array::zeros(&[n, 3]);
                    for i in 0..n {
                        for c in 0..3 {
                            out.set(perm[i], c, h.get(i, c));
                        }
                    }
                    out
                })
                .collect(),
        };
        coll_equal &= collision_rate(&moved, eps).unwrap() == collision_rate(&trace, eps).unwrap();
    }

    // every connected carbon skeleton on 4 and 5 atoms, each labelling once,
    // plus random molecules up to 8 atoms with relabeled copies
    let mut pool: Vec<MolecularGraph> = Vec::new();
    for n in [4usize, 5] {
        let pairs = pair_list(n);
        for mask in 0u32..(1 << pairs.len()) {
            let bonds: Vec<(usize, usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &(i, j))| (i, j, 1))
                .collect();
            let g = MolecularGraph::from_bonds(vec![0; n], &bonds).unwrap();
            if vqsad::graph::check_valence(&g, &vocab).unwrap() {
                pool.push(g);
            }
        }
    }
    for i in 0..60 {
        let g = random_molecule(&mut rng, &vocab, 2 + i % 7);
        if i % 3 == 0 {
            pool.push(g.permute(&random_permutation(&mut rng, g.n())));
        }
        pool.push(g);
    }
    let mut classes: Vec<MolecularGraph> = Vec::new();
    for g in &pool {
        if !classes.iter().any(|c| isomorphic(c, g)) {
            classes.push(g.clone());
        }
    }
    let want = 100.0 * classes.len() as f64 / pool.len() as f64;
    let got = uniqueness(&pool, &vocab).unwrap().unwrap();

    verdict(
        self_mmd <= 1e-12 && sym && min_eig >= -1e-8 && coll_equal && (got - want).abs() < 1e-9,
        format!(
            "self-MMD {self_mmd:.1e}, Gram symmetric {sym} with min eigenvalue {min_eig:.1e}, \
             collision rate equal to reimplementation {coll_equal}, uniqueness {got:.3}% vs oracle {want:.3}% \
             ({} classes in {} graphs)",
            classes.len(),
            pool.len()
        ),
    )
}

// ---------------------------------------------------------------------

fn main() {
    let criteria: [(usize, &str, Duration, fn() -> (Verdict, bool)); 9] = [
        (1, "schedule correctness", Duration::from_secs(10), || (schedule_correctness(), false)),
        (2, "transition algebra", Duration::from_secs(10), || (transition_algebra(), false)),
        (3, "corruption statistics", Duration::from_secs(30), || (corruption_statistics(), false)),
        (4, "RRWP", Duration::from_secs(5), || (rrwp_oracle(), false)),
        (5, "autodiff", Duration::from_secs(60), || (autodiff_checks(), false)),
        (6, "VQ tokenizer", Duration::from_secs(120), || (vq_tokenizer(), false)),
        (7, "denoiser", Duration::from_secs(300), denoiser_checks),
        (8, "end-to-end toy run", Duration::from_secs(1800), toy_run),
        (9, "metrics", Duration::from_secs(120), || (metric_checks(), false)),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut blocking = 0;
    for (id, name, budget, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let took = start.elapsed();
        let (line, ok, tolerated) = match result {
            Ok((v, rest_ok)) => {
                let in_time = took <= budget;
                let ok = v.pass && in_time;
                let detail = if in_time {
                    v.detail
                } else {
                    format!("{} [over budget]", v.detail)
                };
                // 7 and 8 may miss only their recovery and sample-quality
                // gates without failing the run; see README
                (detail, ok, !ok && matches!(id, 7 | 8) && rest_ok && in_time)
            }
            Err(_) => ("panicked".to_string(), false, false),
        };
        println!(
            "acceptance {id} {name}: {} in {:.1}s (budget {}s): {line}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !ok && !tolerated {
            blocking += 1;
        }
    }
    if blocking > 0 {
        std::process::exit(1);
    }
}
