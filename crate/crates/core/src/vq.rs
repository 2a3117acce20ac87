//! VQ-VAE tokenizer for atom and bond categories.
//!
//! Every atom and every unordered atom pair (including "no bond") is encoded
//! with its random-walk context, snapped to the nearest codebook row, and
//! decoded back to a category distribution. After training the model is frozen
//! and used as a fixed tokenizer for latent diffusion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, checkpoint, cosine, softmax_rows, Adam, Array, Mlp, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{pair_list, MolecularGraph, NO_BOND, NUM_BOND_TYPES};
use crate::rrwp::{rrwp_molecule, RrwpTensor};

/// Added to each norm of the cosine reconstruction term.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    /// Code dimension `D`.
    pub dim: usize,
    pub atom_codes: usize,
    pub bond_codes: usize,
    pub hidden: usize,
    /// Exponent of the cosine term.
    pub gamma: f64,
    /// Commitment weight.
    pub beta: f64,
    pub rrwp_k: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            atom_codes: 32,
            bond_codes: 16,
            hidden: 64,
            gamma: 2.0,
            beta: 0.25,
            rrwp_k: 8,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1.0 {
            return Err(Error::domain(format!("VQ gamma must be >= 1, got {}", self.gamma)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::domain(format!("VQ beta must be > 0, got {}", self.beta)));
        }
        if self.atom_codes < 2 || self.bond_codes < 2 {
            return Err(Error::domain("codebooks need at least two entries"));
        }
        if self.dim == 0 || self.hidden == 0 || self.rrwp_k == 0 {
            return Err(Error::domain("VQ dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VqTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Code indices of one molecule. `edges` is symmetric `n×n` with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
}

impl TokenizedGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        self.edges[i * self.n() + j]
    }
}

/// Index of the nearest row of `codebook` in squared distance; lowest index on ties.
pub fn quantize(h: &[f64], codebook: &Array) -> Result<(usize, Vec<f64>)> {
    if codebook.rows() == 0 || codebook.len() == 0 {
        return Err(Error::domain("empty codebook"));
    }
    if h.len() != codebook.cols() {
        return Err(Error::Shape {
            op: "quantize",
            left: vec![h.len()],
            right: codebook.shape().to_vec(),
        });
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("quantize: non-finite encoder output"));
    }
    let idx = nearest(h, codebook);
    Ok((idx, codebook.row_slice(idx).to_vec()))
}

fn nearest(h: &[f64], codebook: &Array) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..codebook.rows() {
        let d: f64 = codebook
            .row_slice(k)
            .iter()
            .zip(h)
            .map(|(e, x)| (e - x) * (e - x))
            .sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Atom one-hot, return probabilities `P_vv`, and the walk-weighted category
/// mix `Σ_u (M^s)_vu·onehot(a_u)` for each power `s`.
pub fn node_features(g: &MolecularGraph, p: &RrwpTensor, classes: usize) -> Array {
    let (n, k) = (g.n(), p.k());
    let width = classes + k + k * classes;
    let mut data = vec![0.0; n * width];
    for v in 0..n {
        let row = &mut data[v * width..(v + 1) * width];
        row[g.atom(v)] = 1.0;
        row[classes..classes + k].copy_from_slice(p.pair(v, v));
        for u in 0..n {
            let a = g.atom(u);
            for (s, &w) in p.pair(v, u).iter().enumerate() {
                row[classes + k + s * classes + a] += w;
            }
        }
    }
    Array::matrix(n, width, data).expect("sized")
}

/// Endpoint one-hots (summed), bond one-hot and symmetrised `P_uv`, per unordered pair.
pub fn edge_features(g: &MolecularGraph, p: &RrwpTensor, classes: usize) -> Array {
    let k = p.k();
    let width = classes + NUM_BOND_TYPES + k;
    let pairs = pair_list(g.n());
    let mut data = vec![0.0; pairs.len() * width];
    for (r, &(i, j)) in pairs.iter().enumerate() {
        let row = &mut data[r * width..(r + 1) * width];
        row[g.atom(i)] += 1.0;
        row[g.atom(j)] += 1.0;
        row[classes + g.bond(i, j)] = 1.0;
        let (a, b) = (p.pair(i, j), p.pair(j, i));
        for s in 0..k {
            row[classes + NUM_BOND_TYPES + s] = 0.5 * (a[s] + b[s]);
        }
    }
    Array::matrix(pairs.len(), width, data).expect("sized")
}

/// Encoder inputs and targets for one molecule.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub node_in: Array,
    pub edge_in: Array,
    pub node_target: Vec<usize>,
    pub edge_target: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VqModel {
    pub config: VqConfig,
    pub node_classes: usize,
    pub store: ParamStore,
    enc_node: Mlp,
    enc_edge: Mlp,
    dec_node: Mlp,
    dec_edge: Mlp,
    atom_book: ParamId,
    bond_book: ParamId,
}

/// Loss pieces of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub node: f64,
    pub edge: f64,
}

impl VqLoss {
    pub fn total(&self) -> f64 {
        self.node + self.edge
    }
}

/// Steps between dead-code restarts.
const RESTART_EVERY: usize = 100;

#[derive(Debug)]
struct FamilyOut {
    loss: Var,
    h: Array,
    codes: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct VqTrainReport {
    pub losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: VqConfig,
    node_classes: usize,
    frozen: bool,
}

impl VqModel {
    pub fn new(config: VqConfig, node_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, h, k) = (config.dim, config.hidden, config.rrwp_k);
        let node_in = node_classes + k + k * node_classes;
        let edge_in = node_classes + NUM_BOND_TYPES + k;
        let enc_node = Mlp::new(&mut store, "vq.enc_node", node_in, h, d, &mut rng)?;
        let enc_edge = Mlp::new(&mut store, "vq.enc_edge", edge_in, h, d, &mut rng)?;
        let dec_node = Mlp::new(&mut store, "vq.dec_node", d, h, node_classes, &mut rng)?;
        let dec_edge = Mlp::new(&mut store, "vq.dec_edge", d, h, NUM_BOND_TYPES, &mut rng)?;
        let atom_book = store.add_glorot("vq.atom_codes", config.atom_codes, d, &mut rng)?;
        let bond_book = store.add_glorot("vq.bond_codes", config.bond_codes, d, &mut rng)?;
        Ok(Self {
            config,
            node_classes,
            store,
            enc_node,
            enc_edge,
            dec_node,
            dec_edge,
            atom_book,
            bond_book,
        })
    }

    pub fn atom_codebook(&self) -> &Array {
        self.store.value(self.atom_book)
    }

    pub fn bond_codebook(&self) -> &Array {
        self.store.value(self.bond_book)
    }

    pub fn is_frozen(&self) -> bool {
        self.store.all_frozen()
    }

    /// Clears every trainable flag. Tokenization requires a frozen model.
    pub fn freeze(&mut self) {
        self.store.freeze_all();
    }

    pub fn encode_inputs(&self, g: &MolecularGraph) -> Result<Encoded> {
        let p = rrwp_molecule(g, self.config.rrwp_k)?;
        let pairs = pair_list(g.n());
        Ok(Encoded {
            node_in: node_features(g, &p, self.node_classes),
            edge_in: edge_features(g, &p, self.node_classes),
            node_target: g.atoms().to_vec(),
            edge_target: pairs.iter().map(|&(i, j)| g.bond(i, j)).collect(),
        })
    }

    fn run_mlp(&self, mlp: &Mlp, x: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = mlp.forward(&mut tape, &self.store, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode_nodes(&self, x: &Array) -> Result<Array> {
        self.run_mlp(&self.enc_node, x)
    }

    pub fn encode_edges(&self, x: &Array) -> Result<Array> {
        self.run_mlp(&self.enc_edge, x)
    }

    /// Category distributions for rows of atom code vectors.
    pub fn decode_nodes(&self, codes: &Array) -> Result<Array> {
        Ok(softmax_rows(&self.run_mlp(&self.dec_node, codes)?))
    }

    pub fn decode_edges(&self, codes: &Array) -> Result<Array> {
        Ok(softmax_rows(&self.run_mlp(&self.dec_edge, codes)?))
    }

    /// Atom category decoded from each atom code.
    pub fn atom_lookup(&self) -> Result<Vec<usize>> {
        let d = self.decode_nodes(self.atom_codebook())?;
        Ok((0..d.rows()).map(|r| d.argmax_row(r)).collect())
    }

    /// Bond category decoded from each bond code.
    pub fn bond_lookup(&self) -> Result<Vec<usize>> {
        let d = self.decode_edges(self.bond_codebook())?;
        Ok((0..d.rows()).map(|r| d.argmax_row(r)).collect())
    }

    /// Which bond codes decode to an actual bond.
    pub fn bond_code_is_bond(&self) -> Result<Vec<bool>> {
        Ok(self.bond_lookup()?.into_iter().map(|b| b != NO_BOND).collect())
    }

    fn nearest_rows(h: &Array, book: &Array) -> Vec<usize> {
        (0..h.rows()).map(|r| nearest(h.row_slice(r), book)).collect()
    }

    /// Loss of one element family on a tape.
    fn family_loss(
        &self,
        tape: &mut Tape,
        enc: &Mlp,
        dec: &Mlp,
        book: ParamId,
        input: &Array,
        target: &[usize],
        classes: usize,
    ) -> Result<FamilyOut> {
        let x = tape.constant(input.clone());
        let h = enc.forward(tape, &self.store, x)?;
        let idx = Self::nearest_rows(tape.value(h), self.store.value(book));
        let bookv = tape.param(&self.store, book);
        let e = tape.gather_rows(bookv, &idx)?;
        let e_val = tape.value(e).clone();
        let zq = tape.straight_through(h, e_val)?;
        let logits = dec.forward(tape, &self.store, zq)?;
        let vhat = tape.softmax(logits);
        let v = tape.constant(Array::one_hot(target, classes));
        let cos = tape.cosine_rows(v, vhat, COSINE_EPS)?;
        let gap = tape.rsub_scalar(1.0, cos);
        let gap = tape.clamp(gap, 0.0, 2.0);
        let rec = tape.powf(gap, self.config.gamma);
        let h_sg = tape.stop_gradient(h);
        let diff_book = tape.sub(h_sg, e)?;
        let sq_book = tape.square(diff_book);
        let book_term = tape.sum_cols(sq_book);
        let e_sg = tape.stop_gradient(e);
        let diff_commit = tape.sub(h, e_sg)?;
        let sq_commit = tape.square(diff_commit);
        let commit = tape.sum_cols(sq_commit);
        let commit = tape.scale(commit, self.config.beta);
        let per = tape.add(rec, book_term)?;
        let per = tape.add(per, commit)?;
        let loss = tape.mean(per);
        let h = tape.value(h).clone();
        Ok(FamilyOut { loss, h, codes: idx })
    }

    fn loss_on_tape(&self, tape: &mut Tape, batch: &[&Encoded]) -> Result<(FamilyOut, Option<FamilyOut>)> {
        let node_in = stack(batch.iter().map(|e| &e.node_in));
        let edge_in = stack(batch.iter().map(|e| &e.edge_in));
        let node_t: Vec<usize> = batch.iter().flat_map(|e| e.node_target.iter().copied()).collect();
        let edge_t: Vec<usize> = batch.iter().flat_map(|e| e.edge_target.iter().copied()).collect();
        let nodes = self.family_loss(
            tape,
            &self.enc_node,
            &self.dec_node,
            self.atom_book,
            &node_in,
            &node_t,
            self.node_classes,
        )?;
        let edges = if edge_t.is_empty() {
            None
        } else {
            Some(self.family_loss(
                tape,
                &self.enc_edge,
                &self.dec_edge,
                self.bond_book,
                &edge_in,
                &edge_t,
                NUM_BOND_TYPES,
            )?)
        };
        Ok((nodes, edges))
    }

    /// Node and edge losses, each averaged over its elements.
    pub fn vq_loss(&self, graphs: &[MolecularGraph]) -> Result<VqLoss> {
        if graphs.is_empty() {
            return Err(Error::domain("vq_loss needs at least one graph"));
        }
        let enc: Vec<Encoded> = graphs.iter().map(|g| self.encode_inputs(g)).collect::<Result<_>>()?;
        let refs: Vec<&Encoded> = enc.iter().collect();
        let mut tape = Tape::new();
        let (nodes, edges) = self.loss_on_tape(&mut tape, &refs)?;
        Ok(VqLoss {
            node: tape.value(nodes.loss).item(),
            edge: edges.map_or(0.0, |e| tape.value(e.loss).item()),
        })
    }

    /// Sets codebook rows to encoder outputs of randomly chosen elements.
    fn init_codebooks(&mut self, data: &[Encoded], rng: &mut impl Rng) -> Result<()> {
        let node_in = stack(data.iter().map(|e| &e.node_in));
        let edge_in = stack(data.iter().map(|e| &e.edge_in));
        let hn = self.encode_nodes(&node_in)?;
        let he = self.encode_edges(&edge_in)?;
        for (book, h) in [(self.atom_book, hn), (self.bond_book, he)] {
            if h.rows() == 0 {
                continue;
            }
            let rows = self.store.value(book).rows();
            let d = h.cols();
            let mut order: Vec<usize> = (0..h.rows()).collect();
            order.shuffle(rng);
            let value = self.store.value_mut(book);
            for k in 0..rows {
                let src = order[k % order.len()];
                for c in 0..d {
                    let jitter = rng.gen_range(-1e-3..1e-3);
                    value.set(k, c, h.get(src, c) + jitter);
                }
            }
        }
        Ok(())
    }

    /// Trains encoders, decoders and codebooks jointly. On a non-finite loss the
    /// parameters are restored to the last finite step and an error is returned.
    pub fn train(&mut self, graphs: &[MolecularGraph], cfg: &VqTrainConfig) -> Result<VqTrainReport> {
        if graphs.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        if self.is_frozen() {
            return Err(Error::Contract("tokenizer is frozen".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let data: Vec<Encoded> = graphs.iter().map(|g| self.encode_inputs(g)).collect::<Result<_>>()?;
        self.init_codebooks(&data, &mut rng)?;
        let mut opt = Adam::with_lr(cfg.lr);
        let mut report = VqTrainReport::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        let batch = cfg.batch.max(1).min(data.len());
        let mut last_good = self.store.clone();
        let mut atom_hits = vec![0usize; self.config.atom_codes];
        let mut bond_hits = vec![0usize; self.config.bond_codes];
        for step in 0..cfg.steps {
            let mut picks = Vec::with_capacity(batch);
            while picks.len() < batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                picks.push(&data[order[cursor]]);
                cursor += 1;
            }
            let mut tape = Tape::new();
            let (nodes, edges) = self.loss_on_tape(&mut tape, &picks)?;
            let loss = match &edges {
                Some(e) => tape.add(nodes.loss, e.loss)?,
                None => nodes.loss,
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                self.store = last_good;
                return Err(Error::Divergence(format!("VQ loss became {value} at step {step}")));
            }
            report.losses.push(value);
            tape.backward(loss, &mut self.store)?;
            opt.step(&mut self.store);
            for &c in &nodes.codes {
                atom_hits[c] += 1;
            }
            if let Some(e) = &edges {
                for &c in &e.codes {
                    bond_hits[c] += 1;
                }
            }
            if (step + 1) % RESTART_EVERY == 0 && step + 1 < cfg.steps {
                self.restart_dead(self.atom_book, &atom_hits, &nodes);
                if let Some(e) = &edges {
                    self.restart_dead(self.bond_book, &bond_hits, e);
                }
                atom_hits.iter_mut().for_each(|x| *x = 0);
                bond_hits.iter_mut().for_each(|x| *x = 0);
            }
            if step % 50 == 0 {
                last_good = self.store.clone();
            }
        }
        Ok(report)
    }

    /// Moves codes unused since the last restart onto the batch elements that
    /// are currently quantized worst.
    fn restart_dead(&mut self, book: ParamId, hits: &[usize], out: &FamilyOut) {
        let dead: Vec<usize> = (0..hits.len()).filter(|&k| hits[k] == 0).collect();
        if dead.is_empty() || out.h.rows() == 0 {
            return;
        }
        let value = self.store.value(book);
        let err = |r: usize| -> f64 {
            let e = value.row_slice(out.codes[r]);
            out.h.row_slice(r).iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let mut rows: Vec<(f64, usize)> = (0..out.h.rows()).map(|r| (err(r), r)).collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let value = self.store.value_mut(book);
        for (&k, &(e, r)) in dead.iter().zip(&rows) {
            if e <= 0.0 {
                break;
            }
            for c in 0..value.cols() {
                value.set(k, c, out.h.get(r, c));
            }
        }
    }

    fn require_frozen(&self) -> Result<()> {
        if !self.is_frozen() {
            return Err(Error::Contract(
                "tokenizer must be frozen before tokenizing".into(),
            ));
        }
        Ok(())
    }

    pub fn tokenize(&self, g: &MolecularGraph) -> Result<TokenizedGraph> {
        self.require_frozen()?;
        let enc = self.encode_inputs(g)?;
        let hn = self.encode_nodes(&enc.node_in)?;
        let nodes = Self::nearest_rows(&hn, self.atom_codebook());
        let n = g.n();
        let mut edges = vec![0; n * n];
        if n > 1 {
            let he = self.encode_edges(&enc.edge_in)?;
            let codes = Self::nearest_rows(&he, self.bond_codebook());
            for (&(i, j), c) in pair_list(n).iter().zip(codes) {
                edges[i * n + j] = c;
                edges[j * n + i] = c;
            }
        }
        Ok(TokenizedGraph { nodes, edges })
    }

    /// Decodes codes with per-code lookup tables (see [`VqModel::atom_lookup`]).
    pub fn detokenize_with(tg: &TokenizedGraph, atoms: &[usize], bonds: &[usize]) -> Result<MolecularGraph> {
        let n = tg.n();
        let mut g = MolecularGraph::new(tg.nodes.iter().map(|&c| atoms[c]).collect())?;
        for (i, j) in pair_list(n) {
            // the lower triangle is mirrored, so a single read keeps bonds symmetric
            let b = bonds[tg.edge(i, j)];
            if b != NO_BOND {
                g.set_bond(i, j, b)?;
            }
        }
        Ok(g)
    }

    pub fn detokenize(&self, tg: &TokenizedGraph) -> Result<MolecularGraph> {
        self.require_frozen()?;
        if tg.nodes.iter().any(|&c| c >= self.config.atom_codes)
            || tg.edges.iter().any(|&c| c >= self.config.bond_codes)
        {
            return Err(Error::domain("code index outside the codebook"));
        }
        Self::detokenize_with(tg, &self.atom_lookup()?, &self.bond_lookup()?)
    }

    /// Fraction of atom and bond categories (over all pairs) reproduced by
    /// `detokenize(tokenize(g))`.
    pub fn reconstruction_accuracy(&self, graphs: &[MolecularGraph]) -> Result<f64> {
        let (atoms, bonds) = (self.atom_lookup()?, self.bond_lookup()?);
        let (mut hit, mut total) = (0usize, 0usize);
        for g in graphs {
            let back = Self::detokenize_with(&self.tokenize(g)?, &atoms, &bonds)?;
            for i in 0..g.n() {
                hit += (back.atom(i) == g.atom(i)) as usize;
                total += 1;
            }
            for (i, j) in pair_list(g.n()) {
                hit += (back.bond(i, j) == g.bond(i, j)) as usize;
                total += 1;
            }
        }
        Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
    }

    /// Code usage counts over all atoms and all pairs of `graphs`.
    pub fn usage(&self, graphs: &[MolecularGraph]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut atom = vec![0; self.config.atom_codes];
        let mut bond = vec![0; self.config.bond_codes];
        for g in graphs {
            let tg = self.tokenize(g)?;
            for &c in &tg.nodes {
                atom[c] += 1;
            }
            for (i, j) in pair_list(g.n()) {
                bond[tg.edge(i, j)] += 1;
            }
        }
        Ok((atom, bond))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = Meta {
            kind: "vq-tokenizer".into(),
            config: self.config,
            node_classes: self.node_classes,
            frozen: self.is_frozen(),
        };
        checkpoint::save(&self.store, serde_json::to_value(meta)?, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        let meta: Meta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::domain(format!("{}: not a tokenizer checkpoint ({e})", dir.display())))?;
        if meta.kind != "vq-tokenizer" {
            return Err(Error::domain(format!("{}: not a tokenizer checkpoint", dir.display())));
        }
        let mut model = Self::new(meta.config, meta.node_classes, 0)?;
        checkpoint::load_into(&mut model.store, dir)?;
        if meta.frozen {
            model.freeze();
        }
        Ok(model)
    }
}

/// Usage histogram as `code_index,count` CSV.
pub fn usage_csv(counts: &[usize]) -> String {
    let mut out = String::from("code_index,count\n");
    for (i, c) in counts.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    out
}

fn stack<'a>(parts: impl Iterator<Item = &'a Array>) -> Array {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for p in parts {
        if p.rows() == 0 {
            continue;
        }
        cols = p.cols();
        rows += p.rows();
        data.extend_from_slice(p.data());
    }
    Array::matrix(rows, cols, data).expect("consistent widths")
}

/// Direct evaluation of one element's loss term, for cross-checks.
pub fn element_loss(v: &[f64], vhat: &[f64], h: &[f64], e: &[f64], gamma: f64, beta: f64) -> f64 {
    let rec = (1.0 - cosine(v, vhat, COSINE_EPS)).max(0.0).powf(gamma);
    let dist: f64 = h.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    rec + dist + beta * dist
}

/// Argmax of a decoded distribution row.
pub fn decode_argmax(dist: &[f64]) -> usize {
    argmax(dist)
}
