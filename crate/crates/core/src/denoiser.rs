//! Edge-featured GIN denoiser with node and edge category heads.
//!
//! Node update:
//! `h_v' = MLP((1+ε)·h_v + Σ_{u∈N(v)} ReLU(h_u + e_uv) + W_p·mean_u e_vu + W_g·mean_u h_u)`,
//! where `N(v)` holds the neighbours whose current edge state is a real bond.
//! The pair mean runs over every other node, so masked and absent pairs reach
//! the node states too; the last term is a graph-wide readout.
//! Pair states evolve as `e_uv' = e_uv + MLP([h_u ‖ h_v ‖ e_uv])`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Array, Linear, Mlp, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{pair_list, NoisyGraph};
use crate::rrwp::RrwpTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Categories excluding the mask.
    pub node_classes: usize,
    pub edge_classes: usize,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub rrwp_k: usize,
    /// Accept a scalar property condition.
    pub conditional: bool,
}

impl DenoiserConfig {
    pub fn new(node_classes: usize, edge_classes: usize) -> Self {
        Self {
            node_classes,
            edge_classes,
            hidden: 64,
            layers: 4,
            time_dim: 16,
            rrwp_k: 8,
            conditional: false,
        }
    }
}

/// Property condition; `Null` selects the learned unconditional token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    Null,
    /// Dataset z-score of the property.
    Value(f64),
}

impl Condition {
    /// Raw condition vector `[z, 1]`, or zeros for the null token.
    pub fn raw(&self) -> [f64; 2] {
        match *self {
            Condition::Null => [0.0, 0.0],
            Condition::Value(z) => [z, 1.0],
        }
    }
}

#[derive(Debug, Clone)]
struct GinLayer {
    eps: ParamId,
    node_mlp: Mlp,
    edge_u: Linear,
    edge_v: Linear,
    edge_e: Linear,
    edge_out: Linear,
    pool: Linear,
    global: Linear,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    node_in: Linear,
    edge_in: Linear,
    cond_proj: Option<Linear>,
    null_cond: Option<ParamId>,
    layers: Vec<GinLayer>,
    node_head: Mlp,
    edge_u: Linear,
    edge_v: Linear,
    edge_e: Linear,
    edge_out: Linear,
}

/// One noisy graph prepared for the network.
#[derive(Debug, Clone)]
pub struct DenoiserInput<'a> {
    pub graph: &'a NoisyGraph,
    pub rrwp: &'a RrwpTensor,
    /// `is_bond[state]` for non-mask edge states.
    pub is_bond: &'a [bool],
    /// Bond order of each non-mask edge state.
    pub bond_order: &'a [usize],
    pub t: f64,
}

/// Per-node features of the current state: revealed bond-order sum over 4,
/// the fraction of incident pairs still masked and the graph size over 16.
/// Every aggregation is a mean, so without the last one a fully masked graph
/// looks the same at every size.
pub const VALENCE_FEATURES: usize = 3;

fn valence_features(g: &NoisyGraph, bond_order: &[usize]) -> Vec<[f64; VALENCE_FEATURES]> {
    let n = g.n();
    let mut out = vec![[0.0; VALENCE_FEATURES]; n];
    for (i, j) in pair_list(n) {
        let s = g.edge(i, j);
        let (order, masked) = if s == g.edge_classes {
            (0.0, 1.0)
        } else {
            (bond_order[s] as f64, 0.0)
        };
        for v in [i, j] {
            out[v][0] += order / 4.0;
            out[v][1] += masked / (n - 1) as f64;
        }
    }
    for row in &mut out {
        row[2] = n as f64 / 16.0;
    }
    out
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserOutput {
    /// `n×(C_n+1)`.
    pub node_logits: Var,
    /// `m×(C_e+1)` over unordered pairs `i<j` in row-major order, symmetrised.
    pub edge_logits: Var,
    /// Final-layer node states `n×d`.
    pub node_states: Var,
}

/// Sinusoidal features of `t ∈ [0, 1]`.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = PI * (1u64 << k.min(20)) as f64 / 2.0;
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    if dim % 2 == 1 {
        out.push(t);
    }
    out
}

/// Ordered pairs `(u, v)`, `u ≠ v`, row-major.
fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for u in 0..n {
        for v in 0..n {
            if u != v {
                out.push((u, v));
            }
        }
    }
    out
}

/// Row of `(i, j)`, `i < j`, in [`pair_list`].
pub fn unordered_index(n: usize, i: usize, j: usize) -> usize {
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Row of `(u, v)` in [`ordered_pairs`].
fn ordered_index(n: usize, u: usize, v: usize) -> usize {
    u * (n - 1) + if v > u { v - 1 } else { v }
}

impl Denoiser {
    /// Parameters are registered under `{prefix}.*`.
    pub fn new(store: &mut ParamStore, prefix: &str, config: DenoiserConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 {
            return Err(Error::domain("denoiser needs at least one layer and a positive width"));
        }
        let d = config.hidden;
        let node_dim = config.node_classes + 1 + config.rrwp_k + VALENCE_FEATURES + config.time_dim;
        let edge_dim = config.edge_classes + 1 + config.rrwp_k;
        let node_in = Linear::new(store, &format!("{prefix}.node_in"), node_dim, d, rng)?;
        let edge_in = Linear::new(store, &format!("{prefix}.edge_in"), edge_dim, d, rng)?;
        let (cond_proj, null_cond) = if config.conditional {
            let lin = Linear::new(store, &format!("{prefix}.cond"), 2, d, rng)?;
            let null = store.add_zeros(format!("{prefix}.cond_null"), &[1, d])?;
            (Some(lin), Some(null))
        } else {
            (None, None)
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("{prefix}.gin{l}");
            layers.push(GinLayer {
                eps: store.add_zeros(format!("{p}.eps"), &[1, 1])?,
                node_mlp: Mlp::new(store, &format!("{p}.node"), d, d, d, rng)?,
                edge_u: Linear::new(store, &format!("{p}.edge_u"), d, d, rng)?,
                edge_v: Linear::new(store, &format!("{p}.edge_v"), d, d, rng)?,
                edge_e: Linear::new(store, &format!("{p}.edge_e"), d, d, rng)?,
                edge_out: Linear::new(store, &format!("{p}.edge_out"), d, d, rng)?,
                pool: Linear::new(store, &format!("{p}.pool"), d, d, rng)?,
                global: Linear::new(store, &format!("{p}.global"), d, d, rng)?,
            });
        }
        Ok(Self {
            node_head: Mlp::new(store, &format!("{prefix}.node_head"), d, d, config.node_classes + 1, rng)?,
            edge_u: Linear::new(store, &format!("{prefix}.edge_head_u"), d, d, rng)?,
            edge_v: Linear::new(store, &format!("{prefix}.edge_head_v"), d, d, rng)?,
            edge_e: Linear::new(store, &format!("{prefix}.edge_head_e"), d, d, rng)?,
            edge_out: Linear::new(store, &format!("{prefix}.edge_head_out"), d, config.edge_classes + 1, rng)?,
            config,
            node_in,
            edge_in,
            cond_proj,
            null_cond,
            layers,
        })
    }

    /// Condition embedding `W·[z, 1]`, or the learned null row.
    pub fn condition_embed(&self, tape: &mut Tape, store: &ParamStore, cond: Condition) -> Result<Option<Var>> {
        let (Some(proj), Some(null)) = (&self.cond_proj, self.null_cond) else {
            return Ok(None);
        };
        Ok(Some(match cond {
            Condition::Null => tape.param(store, null),
            Condition::Value(_) => {
                let raw = tape.constant(Array::row(cond.raw().to_vec()));
                proj.forward_no_bias(tape, store, raw)?
            }
        }))
    }

    /// One message-passing update of the node states.
    ///
    /// `edges` holds the pair states for `pairs` (from [`ordered_pairs`]); `neighbours` lists
    /// `(u, v)` for every directed edge `u → v` with its pair row.
    pub fn gin_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layer: usize,
        h: Var,
        edges: Var,
        pairs: &[(usize, usize)],
        neighbours: &[(usize, usize, usize)],
    ) -> Result<Var> {
        let l = &self.layers[layer];
        let n = tape.value(h).rows();
        let d = self.config.hidden;
        if tape.value(h).cols() != d || tape.value(edges).cols() != d {
            return Err(Error::domain(format!(
                "GIN layer expects width {d}, got {} and {}",
                tape.value(h).cols(),
                tape.value(edges).cols()
            )));
        }
        let eps = tape.param(store, l.eps);
        let ones = tape.constant(Array::filled(&[n, 1], 1.0));
        let scale = tape.matmul(ones, eps)?;
        let scale = tape.add_scalar(scale, 1.0);
        let mut pre = tape.mul_col(h, scale)?;
        if !neighbours.is_empty() {
            let src: Vec<usize> = neighbours.iter().map(|&(u, _, _)| u).collect();
            let dst: Vec<usize> = neighbours.iter().map(|&(_, v, _)| v).collect();
            let rows: Vec<usize> = neighbours.iter().map(|&(_, _, r)| r).collect();
            let hu = tape.gather_rows(h, &src)?;
            let euv = tape.gather_rows(edges, &rows)?;
            let msg = tape.add(hu, euv)?;
            let msg = tape.relu(msg);
            let agg = tape.scatter_add_rows(msg, &dst, n)?;
            pre = tape.add(pre, agg)?;
        }
        if n > 1 {
            let src: Vec<usize> = pairs.iter().map(|&(u, _)| u).collect();
            let total = tape.scatter_add_rows(edges, &src, n)?;
            let mean = tape.scale(total, 1.0 / (n - 1) as f64);
            let pooled = l.pool.forward(tape, store, mean)?;
            pre = tape.add(pre, pooled)?;
        }
        let ones = tape.constant(Array::filled(&[1, n], 1.0 / n as f64));
        let mean = tape.matmul(ones, h)?;
        let g = l.global.forward_no_bias(tape, store, mean)?;
        pre = tape.add_row(pre, g)?;
        l.node_mlp.forward(tape, store, pre)
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_mlp(
        tape: &mut Tape,
        store: &ParamStore,
        lu: &Linear,
        lv: &Linear,
        le: &Linear,
        out: &Linear,
        h: Var,
        e: Var,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        // [h_u ‖ h_v ‖ e_uv]·W3 split into three blocks
        let src: Vec<usize> = pairs.iter().map(|&(u, _)| u).collect();
        let dst: Vec<usize> = pairs.iter().map(|&(_, v)| v).collect();
        let hu = lu.forward_no_bias(tape, store, h)?;
        let hv = lv.forward_no_bias(tape, store, h)?;
        let a = tape.gather_rows(hu, &src)?;
        let b = tape.gather_rows(hv, &dst)?;
        let c = le.forward(tape, store, e)?;
        let s = tape.add(a, b)?;
        let s = tape.add(s, c)?;
        let s = tape.relu(s);
        out.forward(tape, store, s)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &DenoiserInput,
        cond: Condition,
    ) -> Result<DenoiserOutput> {
        self.forward_with_states(tape, store, input, cond, None)
    }

    /// Like [`Denoiser::forward`], but the category one-hots may be supplied
    /// as tape values (`n×(C_n+1)` nodes, `m×(C_e+1)` unordered pairs) so that
    /// gradients reach whatever produced them. Their forward values must match
    /// the states of `input.graph`.
    pub fn forward_with_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &DenoiserInput,
        cond: Condition,
        states: Option<(Var, Var)>,
    ) -> Result<DenoiserOutput> {
        let cfg = &self.config;
        let g = input.graph;
        let n = g.n();
        if input.rrwp.n() != n || input.rrwp.k() != cfg.rrwp_k {
            return Err(Error::domain("RRWP tensor does not match the graph"));
        }
        if g.node_classes != cfg.node_classes || g.edge_classes != cfg.edge_classes {
            return Err(Error::domain(format!(
                "graph has {}/{} categories, denoiser expects {}/{}",
                g.node_classes, g.edge_classes, cfg.node_classes, cfg.edge_classes
            )));
        }
        let pairs = ordered_pairs(n);
        let unordered = pair_list(n);

        let (node_onehot, pair_onehot) = match states {
            Some(s) => s,
            None => {
                let nodes = tape.constant(Array::one_hot(&g.nodes, cfg.node_classes + 1));
                let codes: Vec<usize> = unordered.iter().map(|&(i, j)| g.edge(i, j)).collect();
                let edges = tape.constant(Array::one_hot(&codes, cfg.edge_classes + 1));
                (nodes, edges)
            }
        };
        if tape.value(node_onehot).shape() != [n, cfg.node_classes + 1]
            || tape.value(pair_onehot).shape() != [unordered.len(), cfg.edge_classes + 1]
        {
            return Err(Error::domain("state one-hots do not match the graph"));
        }

        if input.bond_order.len() != g.edge_classes {
            return Err(Error::domain("one bond order per edge category expected"));
        }
        let k = cfg.rrwp_k;
        let ctx_w = k + VALENCE_FEATURES + cfg.time_dim;
        let tf = time_features(input.t, cfg.time_dim);
        let val = valence_features(g, input.bond_order);
        let mut x = vec![0.0; n * ctx_w];
        for v in 0..n {
            let row = &mut x[v * ctx_w..(v + 1) * ctx_w];
            row[..k].copy_from_slice(input.rrwp.pair(v, v));
            row[k..k + VALENCE_FEATURES].copy_from_slice(&val[v]);
            row[k + VALENCE_FEATURES..].copy_from_slice(&tf);
        }
        let ctx = tape.constant(Array::matrix(n, ctx_w, x)?);
        let xv = tape.concat(&[node_onehot, ctx])?;
        let mut h = self.node_in.forward(tape, store, xv)?;
        if let Some(c) = self.condition_embed(tape, store, cond)? {
            h = tape.add_row(h, c)?;
        }

        let mut ex = vec![0.0; pairs.len() * k];
        let mut rows = Vec::with_capacity(pairs.len());
        for (r, &(u, v)) in pairs.iter().enumerate() {
            ex[r * k..(r + 1) * k].copy_from_slice(input.rrwp.pair(u, v));
            let (i, j) = (u.min(v), u.max(v));
            rows.push(unordered_index(n, i, j));
        }
        let mut e = if pairs.is_empty() {
            tape.constant(Array::zeros(&[0, cfg.hidden]))
        } else {
            let onehots = tape.gather_rows(pair_onehot, &rows)?;
            let pctx = tape.constant(Array::matrix(pairs.len(), k, ex)?);
            let ev = tape.concat(&[onehots, pctx])?;
            self.edge_in.forward(tape, store, ev)?
        };

        let mut neighbours = Vec::new();
        for (r, &(u, v)) in pairs.iter().enumerate() {
            let s = g.edge(u, v);
            if s < g.edge_classes && input.is_bond[s] {
                neighbours.push((u, v, r));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            let h_next = self.gin_layer(tape, store, k, h, e, &pairs, &neighbours)?;
            if !pairs.is_empty() {
                let de = Self::pair_mlp(tape, store, &l.edge_u, &l.edge_v, &l.edge_e, &l.edge_out, h_next, e, &pairs)?;
                e = tape.add(e, de)?;
            }
            h = h_next;
        }

        let node_logits = self.node_head.forward(tape, store, h)?;
        let edge_logits = if unordered.is_empty() {
            tape.constant(Array::zeros(&[0, cfg.edge_classes + 1]))
        } else {
            let raw = Self::pair_mlp(tape, store, &self.edge_u, &self.edge_v, &self.edge_e, &self.edge_out, h, e, &pairs)?;
            let fwd: Vec<usize> = unordered.iter().map(|&(i, j)| ordered_index(n, i, j)).collect();
            let bwd: Vec<usize> = unordered.iter().map(|&(i, j)| ordered_index(n, j, i)).collect();
            let a = tape.gather_rows(raw, &fwd)?;
            let b = tape.gather_rows(raw, &bwd)?;
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5)
        };
        Ok(DenoiserOutput {
            node_logits,
            edge_logits,
            node_states: h,
        })
    }

    /// Probabilities without gradient bookkeeping.
    pub fn predict(&self, store: &ParamStore, input: &DenoiserInput, cond: Condition) -> Result<Prediction> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, input, cond)?;
        Ok(Prediction {
            node_logits: tape.value(out.node_logits).clone(),
            edge_logits: tape.value(out.edge_logits).clone(),
            node_states: tape.value(out.node_states).clone(),
        })
    }
}

/// Plain arrays of one forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub node_logits: Array,
    pub edge_logits: Array,
    pub node_states: Array,
}

impl Prediction {
    pub fn node_probs(&self) -> Array {
        softmax_rows(&self.node_logits)
    }

    pub fn edge_probs(&self) -> Array {
        softmax_rows(&self.edge_logits)
    }
}
