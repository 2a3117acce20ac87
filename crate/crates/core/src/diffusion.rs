//! Discrete graph diffusion: forward corruption, the time-weighted
//! cross-entropy objective, training, and reverse sampling.
//!
//! `Sad` diffuses atom and bond categories with an absorbing mask. `VqSad`
//! diffuses the codes of a frozen [`VqModel`] with mask-and-replace noise and
//! decodes samples through the tokenizer's per-code lookups.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    checkpoint, gumbel_softmax_tape, hard_indices, Adam, Array, Gradients, ParamStore, Tape, Var,
};
use crate::denoiser::{Condition, Denoiser, DenoiserConfig, DenoiserInput, Prediction};
use crate::error::{Error, Result};
use crate::graph::{bond_category_table, pair_list, MolecularGraph, NoisyGraph, NUM_BOND_TYPES};
use crate::metrics::EmbeddingTrace;
use crate::rrwp::{rrwp, rrwp_noisy, RrwpTensor};
use crate::schedule::{alpha_bar, alpha_terms, Cumulative, ScheduleHead, SchedulerConfig, SchedulerNet};
use crate::seed::stream;
use crate::vq::{TokenizedGraph, VqModel};

/// Floor inside the logarithm of corruption probabilities.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sad,
    VqSad,
}

/// Overall sign of the objective `s·Σ w·log p` with `w = ᾱ̇/(1 − ᾱ) ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossSign {
    /// `s = +1`: a nonnegative bound that falls as predictions improve.
    Nelbo,
    /// `s = −1`: the form with a leading minus.
    Printed,
}

impl LossSign {
    pub fn factor(self) -> f64 {
        match self {
            LossSign::Nelbo => 1.0,
            LossSign::Printed => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub mode: Mode,
    /// Reverse steps `T`.
    pub timesteps: usize,
    /// Edge-term weight `λ`.
    pub lambda: f64,
    /// Bound on `|ᾱ̇/(1 − ᾱ)|`.
    pub weight_clamp: f64,
    /// Training times are drawn from `(t_min, 1]`.
    pub t_min: f64,
    /// Gumbel-softmax temperature of the relaxed corruption.
    pub temperature: f64,
    /// Route corruption through straight-through Gumbel draws.
    pub relaxed: bool,
    pub sign: LossSign,
    /// Add the reverse-rate term that class-dependent schedules need; it is
    /// zero when every class shares one schedule.
    pub rate_term: bool,
    /// Weight of an unweighted cross-entropy on masked elements added to the
    /// bound; 0 disables it.
    pub aux_ce: f64,
    pub conditional: bool,
    pub cond_dropout: f64,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub rrwp_k: usize,
    pub scheduler: SchedulerConfig,
}

impl DiffusionConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            timesteps: 100,
            lambda: 5.0,
            weight_clamp: 1e4,
            t_min: 1e-3,
            temperature: 1.0,
            relaxed: true,
            sign: LossSign::Nelbo,
            rate_term: true,
            aux_ce: 1.0,
            conditional: false,
            cond_dropout: 0.1,
            hidden: 64,
            layers: 4,
            time_dim: 16,
            rrwp_k: 8,
            scheduler: SchedulerConfig {
                cond_dim: 0,
                replace: mode == Mode::VqSad,
                ..SchedulerConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::domain("T must be at least 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::domain(format!("λ must be positive, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::domain(format!("condition dropout {} outside [0, 1]", self.cond_dropout)));
        }
        if !(self.temperature > 0.0) || !(self.weight_clamp > 0.0) {
            return Err(Error::domain("temperature and weight clamp must be positive"));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::domain(format!("t_min {} outside (0, 1)", self.t_min)));
        }
        if self.rrwp_k == 0 {
            return Err(Error::domain("RRWP depth must be at least 1"));
        }
        Ok(())
    }

    fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            cond_dim: if self.conditional { 2 } else { 0 },
            replace: self.mode == Mode::VqSad,
            ..self.scheduler
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub count: usize,
    pub seed: u64,
    /// Classifier-free guidance scale `w`.
    pub guidance: f64,
    /// Raw property value to condition on.
    pub condition: Option<f64>,
    /// Record final-layer node states at every reverse step.
    pub trace: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 16,
            seed: 0,
            guidance: 0.0,
            condition: None,
            trace: false,
        }
    }
}

/// A training graph in model categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanGraph {
    pub nodes: Vec<usize>,
    /// Row-major symmetric `n×n`, zero diagonal.
    pub edges: Vec<usize>,
    /// Property z-score.
    pub cond: Option<f64>,
}

impl CleanGraph {
    pub fn from_molecule(g: &MolecularGraph, cond: Option<f64>) -> Self {
        let n = g.n();
        let mut edges = vec![0; n * n];
        for (i, j, o) in g.bond_list() {
            edges[i * n + j] = o;
            edges[j * n + i] = o;
        }
        Self {
            nodes: g.atoms().to_vec(),
            edges,
            cond,
        }
    }

    pub fn from_tokens(tg: &TokenizedGraph, cond: Option<f64>) -> Self {
        Self {
            nodes: tg.nodes.clone(),
            edges: tg.edges.clone(),
            cond,
        }
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge(&self, i: usize, j: usize) -> usize {
        self.edges[i * self.n() + j]
    }

    /// Categories of the unordered pairs in [`pair_list`] order.
    pub fn pair_codes(&self) -> Vec<usize> {
        pair_list(self.n()).iter().map(|&(i, j)| self.edge(i, j)).collect()
    }

    pub fn adjacency(&self, is_bond: &[bool]) -> Vec<bool> {
        let n = self.n();
        (0..n * n).map(|k| k / n != k % n && is_bond[self.edges[k]]).collect()
    }

    /// Clean states as a noisy graph with nothing masked.
    pub fn as_noisy(&self, node_classes: usize, edge_classes: usize) -> NoisyGraph {
        NoisyGraph {
            node_classes,
            edge_classes,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }
}

/// Independent corruption of every node and unordered pair.
///
/// `node_c[i]` and `edge_c[p]` are the cumulative coefficients at the sampled
/// time; replacements are uniform over the other categories.
pub fn forward_corrupt(
    clean: &CleanGraph,
    node_c: &[Cumulative],
    edge_c: &[Cumulative],
    node_classes: usize,
    edge_classes: usize,
    rng: &mut impl Rng,
) -> Result<NoisyGraph> {
    use crate::schedule::{draw_outcome, replace_category, Outcome};
    let n = clean.n();
    let pairs = pair_list(n);
    if node_c.len() != n || edge_c.len() != pairs.len() {
        return Err(Error::domain("one coefficient triple per node and unordered pair expected"));
    }
    for c in node_c.iter().chain(edge_c) {
        c.check()?;
    }
    let mut out = clean.as_noisy(node_classes, edge_classes);
    let draw = |x0: usize, k: usize, c: Cumulative, rng: &mut _| match draw_outcome(c, rng) {
        Outcome::Keep => x0,
        Outcome::Mask => k,
        Outcome::Replace => replace_category(x0, k, rng),
    };
    for (i, &c) in node_c.iter().enumerate() {
        out.nodes[i] = draw(clean.nodes[i], node_classes, c, rng);
    }
    for (&(i, j), &c) in pairs.iter().zip(edge_c) {
        let s = draw(clean.edge(i, j), edge_classes, c, rng);
        out.set_edge(i, j, s);
    }
    Ok(out)
}

/// Plain evaluation of `s·(Σ_i w_i log p_i + λ Σ_ij w_ij log p_ij)` with
/// weights clamped to `±clamp`.
pub fn nelbo_value(
    node_w: &[f64],
    node_logp: &[f64],
    edge_w: &[f64],
    edge_logp: &[f64],
    lambda: f64,
    sign: LossSign,
    clamp: f64,
) -> f64 {
    let term = |w: &[f64], lp: &[f64]| -> f64 { w.iter().zip(lp).map(|(w, l)| w.clamp(-clamp, clamp) * l).sum() };
    sign.factor() * (term(node_w, node_logp) + lambda * term(edge_w, edge_logp))
}

/// Tape version of [`nelbo_value`]; `*_w` and `*_logp` are `m×1`. Returns the
/// loss and the number of clamped weights.
#[allow(clippy::too_many_arguments)]
pub fn nelbo_loss(
    tape: &mut Tape,
    node_w: Var,
    node_logp: Var,
    edges: Option<(Var, Var)>,
    lambda: f64,
    sign: LossSign,
    clamp: f64,
) -> Result<(Var, usize)> {
    let mut clamped = 0;
    let mut term = |tape: &mut Tape, w: Var, lp: Var| -> Result<Var> {
        clamped += tape.value(w).data().iter().filter(|x| x.abs() > clamp).count();
        let wc = tape.clamp(w, -clamp, clamp);
        let prod = tape.mul(wc, lp)?;
        Ok(tape.sum(prod))
    };
    let mut total = term(tape, node_w, node_logp)?;
    if let Some((w, lp)) = edges {
        let e = term(tape, w, lp)?;
        let e = tape.scale(e, lambda);
        total = tape.add(total, e)?;
    }
    Ok((tape.scale(total, sign.factor()), clamped))
}

/// Per-step training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub masked_fraction_mean: f64,
    pub clamped: usize,
}

pub fn loss_csv(records: &[StepRecord]) -> String {
    let mut out = String::from("step,loss,masked_fraction_mean\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.masked_fraction_mean));
    }
    out
}

/// One sampled graph.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub molecule: MolecularGraph,
    /// Final states in model categories.
    pub states: CleanGraph,
    /// Masked elements remaining after each reverse step.
    pub masked_per_step: Vec<usize>,
    /// Elements revealed by force after the last step.
    pub forced: usize,
    pub trace: Option<EmbeddingTrace>,
}

/// Loss and bookkeeping of one graph at one time.
#[derive(Debug, Clone, Copy)]
pub struct GraphLoss {
    pub loss: Var,
    pub masked_fraction: f64,
    pub clamped: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    config: DiffusionConfig,
    node_classes: usize,
    edge_classes: usize,
    is_bond: Vec<bool>,
    node_decode: Vec<usize>,
    edge_decode: Vec<usize>,
    size_counts: Vec<usize>,
    property: Option<(f64, f64)>,
    tokenizer_checksum: Option<String>,
    vocab: String,
    reference: Option<ReferenceSchedule>,
}

const KIND: &str = "vqsad-diffusion";

/// Class-wise mean of the learned schedule over a set of training graphs,
/// tabulated at `t = s/T`; indexed `[s][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSchedule {
    pub node: Vec<Vec<Cumulative>>,
    pub edge: Vec<Vec<Cumulative>>,
}

/// Graphs used to tabulate the reference schedule.
const REFERENCE_GRAPHS: usize = 256;

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub config: DiffusionConfig,
    pub store: ParamStore,
    pub scheduler: SchedulerNet,
    pub denoiser: Denoiser,
    pub node_classes: usize,
    pub edge_classes: usize,
    /// Which edge categories count as bonds for RRWP and message passing.
    pub is_bond: Vec<bool>,
    /// Atom category of each node category.
    pub node_decode: Vec<usize>,
    /// Bond order of each edge category.
    pub edge_decode: Vec<usize>,
    /// Training graphs per node count.
    pub size_counts: Vec<usize>,
    /// Property mean and standard deviation.
    pub property: Option<(f64, f64)>,
    pub tokenizer_checksum: Option<String>,
    pub vocab: String,
    /// Schedule the sampler reads its unmasking rates from.
    pub reference: Option<ReferenceSchedule>,
}

impl DiffusionModel {
    #[allow(clippy::too_many_arguments)]
    fn build(
        config: DiffusionConfig,
        node_classes: usize,
        edge_classes: usize,
        is_bond: Vec<bool>,
        node_decode: Vec<usize>,
        edge_decode: Vec<usize>,
        vocab: &str,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "init", 0);
        let mut store = ParamStore::new();
        let scheduler = SchedulerNet::new(
            &mut store,
            "sched",
            node_classes,
            edge_classes,
            config.rrwp_k,
            config.scheduler_config(),
            &mut rng,
        )?;
        let dcfg = DenoiserConfig {
            hidden: config.hidden,
            layers: config.layers,
            time_dim: config.time_dim,
            rrwp_k: config.rrwp_k,
            conditional: config.conditional,
            ..DenoiserConfig::new(node_classes, edge_classes)
        };
        let denoiser = Denoiser::new(&mut store, "den", dcfg, &mut rng)?;
        Ok(Self {
            config,
            store,
            scheduler,
            denoiser,
            node_classes,
            edge_classes,
            is_bond,
            node_decode,
            edge_decode,
            size_counts: Vec::new(),
            property: None,
            tokenizer_checksum: None,
            vocab: vocab.to_string(),
            reference: None,
        })
    }

    /// Diffusion over atom and bond categories.
    pub fn sad(config: DiffusionConfig, vocab: &crate::graph::AtomVocabulary, seed: u64) -> Result<Self> {
        if config.mode != Mode::Sad {
            return Err(Error::domain("SAD model needs mode = sad"));
        }
        let c = vocab.len();
        Self::build(
            config,
            c,
            NUM_BOND_TYPES,
            bond_category_table(),
            (0..c).collect(),
            (0..NUM_BOND_TYPES).collect(),
            vocab.name(),
            seed,
        )
    }

    /// Diffusion over the codes of a frozen tokenizer.
    pub fn vq_sad(
        config: DiffusionConfig,
        tokenizer: &VqModel,
        vocab: &crate::graph::AtomVocabulary,
        seed: u64,
    ) -> Result<Self> {
        if config.mode != Mode::VqSad {
            return Err(Error::domain("VQ-SAD model needs mode = vq-sad"));
        }
        if !tokenizer.is_frozen() {
            return Err(Error::Contract("VQ-SAD needs a frozen tokenizer".into()));
        }
        if tokenizer.node_classes != vocab.len() {
            return Err(Error::domain("tokenizer was trained on a different atom vocabulary"));
        }
        let mut model = Self::build(
            config,
            tokenizer.config.atom_codes,
            tokenizer.config.bond_codes,
            tokenizer.bond_code_is_bond()?,
            tokenizer.atom_lookup()?,
            tokenizer.bond_lookup()?,
            vocab.name(),
            seed,
        )?;
        model.tokenizer_checksum = Some(tokenizer.store.checksum());
        Ok(model)
    }

    /// Records the size histogram and property statistics of `graphs` and
    /// converts them to model categories.
    ///
    /// Conditional models z-score the property; graphs without one train the
    /// unconditional token only.
    pub fn prepare(&mut self, graphs: &[MolecularGraph], tokenizer: Option<&VqModel>) -> Result<Vec<CleanGraph>> {
        if graphs.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        let max_n = graphs.iter().map(|g| g.n()).max().unwrap_or(0);
        let mut counts = vec![0; max_n + 1];
        for g in graphs {
            counts[g.n()] += 1;
        }
        self.size_counts = counts;
        self.property = None;
        if self.config.conditional {
            let vals: Vec<f64> = graphs.iter().filter_map(|g| g.property).collect();
            if vals.is_empty() {
                return Err(Error::domain("conditional training needs property values"));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            self.property = Some((mean, var.sqrt().max(1e-12)));
        }
        let z = |g: &MolecularGraph| -> Option<f64> {
            let (m, s) = self.property?;
            g.property.map(|p| (p - m) / s)
        };
        match self.config.mode {
            Mode::Sad => Ok(graphs.iter().map(|g| CleanGraph::from_molecule(g, z(g))).collect()),
            Mode::VqSad => {
                let tok = tokenizer.ok_or_else(|| Error::Contract("tokenizer checkpoint required".into()))?;
                self.check_tokenizer(tok)?;
                graphs
                    .iter()
                    .map(|g| Ok(CleanGraph::from_tokens(&tok.tokenize(g)?, z(g))))
                    .collect()
            }
        }
    }

    /// Fails unless `tok` is the frozen tokenizer this model was built on.
    pub fn check_tokenizer(&self, tok: &VqModel) -> Result<()> {
        if !tok.is_frozen() {
            return Err(Error::Contract("tokenizer is not frozen".into()));
        }
        if self.tokenizer_checksum.as_deref() != Some(tok.store.checksum().as_str()) {
            return Err(Error::Contract("tokenizer parameters changed since the model was built".into()));
        }
        Ok(())
    }

    /// Property z-score of a raw value.
    pub fn z_score(&self, value: f64) -> Result<f64> {
        let (m, s) = self
            .property
            .ok_or_else(|| Error::domain("model was not trained with a property condition"))?;
        Ok((value - m) / s)
    }

    fn scheduler_cond(&self, tape: &mut Tape, cond: Condition) -> Option<Var> {
        self.config
            .conditional
            .then(|| tape.constant(Array::row(cond.raw().to_vec())))
    }

    /// Structural inputs of the schedulers: `P_vv` per node and the
    /// symmetrised `P_uv` per unordered pair.
    fn structure(p: &RrwpTensor) -> (Array, Array) {
        let n = p.n();
        let k = p.k();
        let pairs = pair_list(n);
        let mut e = Vec::with_capacity(pairs.len() * k);
        for &(i, j) in &pairs {
            for s in 0..k {
                e.push(0.5 * (p.get(i, j, s) + p.get(j, i, s)));
            }
        }
        (p.node_diag(), Array::matrix(pairs.len(), k, e).expect("pair rows"))
    }

    /// Cumulative probabilities `[ᾱ, β̄(, γ̄)]` per row and the loss weights.
    fn cumulative_vars(&self, tape: &mut Tape, head: crate::schedule::HeadOutput, t: f64) -> Result<(Var, Var)> {
        let (abar, w) = alpha_terms(tape, head.weights, t, self.config.scheduler.bounds)?;
        let probs = match head.replace {
            None => {
                let bbar = tape.rsub_scalar(1.0, abar);
                tape.concat(&[abar, bbar])?
            }
            Some(r) => {
                let one_minus = tape.rsub_scalar(1.0, abar);
                let spread = tape.mul(abar, one_minus)?;
                let gbar = tape.mul(r, spread)?;
                let rest = tape.add(abar, gbar)?;
                let bbar = tape.rsub_scalar(1.0, rest);
                tape.concat(&[abar, bbar, gbar])?
            }
        };
        Ok((probs, w))
    }

    /// Draws keep/mask/replace per row of `probs` and returns the state
    /// one-hots (`m×(k+1)`) with their indices.
    fn corrupt_rows(
        &self,
        tape: &mut Tape,
        probs: Var,
        x0: &[usize],
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Vec<usize>)> {
        let m = x0.len();
        let outcomes = if self.config.relaxed {
            let floor = tape.clamp(probs, PROB_FLOOR, 1.0);
            let logits = tape.log(floor);
            let z = gumbel_softmax_tape(tape, logits, self.config.temperature, true, rng)?;
            Some(z)
        } else {
            None
        };
        let choice: Vec<usize> = match outcomes {
            Some(z) => hard_indices(tape.value(z)),
            None => {
                let pv = tape.value(probs).clone();
                (0..m)
                    .map(|r| {
                        let u: f64 = rng.gen();
                        let row = pv.row_slice(r);
                        let mut acc = 0.0;
                        let mut pick = row.len() - 1;
                        for (c, p) in row.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = c;
                                break;
                            }
                        }
                        pick
                    })
                    .collect()
            }
        };
        let replaced: Vec<usize> = x0
            .iter()
            .map(|&x| crate::schedule::replace_category(x, k, rng))
            .collect();
        let states: Vec<usize> = (0..m)
            .map(|r| match choice[r] {
                0 => x0[r],
                1 => k,
                _ => replaced[r],
            })
            .collect();
        let onehot = match outcomes {
            None => tape.constant(Array::one_hot(&states, k + 1)),
            Some(z) => {
                let keep = tape.constant(Array::one_hot(x0, k + 1));
                let mask = tape.constant(Array::one_hot(&vec![k; m], k + 1));
                let cols = tape.value(z).cols();
                let z0 = tape.slice_cols(z, 0, 1)?;
                let z1 = tape.slice_cols(z, 1, 2)?;
                let a = tape.mul_col(keep, z0)?;
                let b = tape.mul_col(mask, z1)?;
                let mut s = tape.add(a, b)?;
                if cols == 3 {
                    let rep = tape.constant(Array::one_hot(&replaced, k + 1));
                    let z2 = tape.slice_cols(z, 2, 3)?;
                    let c = tape.mul_col(rep, z2)?;
                    s = tape.add(s, c)?;
                }
                s
            }
        };
        Ok((onehot, states))
    }

    /// `Σ_i m_i (Σ_c p_i(c) h_i(c) − h_i(x_i))` over the rows of one head,
    /// where `h_i(c) = −ᾱ̇/(1 − ᾱ)` is the hazard row `i` would have as class
    /// `c`, `p_i` the prediction renormalised over the categories and `m_i`
    /// the mask indicator of the corrupted state.
    #[allow(clippy::too_many_arguments)]
    fn rate_term(
        &self,
        tape: &mut Tape,
        head: &ScheduleHead,
        structure: &Array,
        x0: &[usize],
        k: usize,
        t: f64,
        cond: Option<Var>,
        logits: Var,
        states: Var,
    ) -> Result<Var> {
        let (m, w) = (structure.rows(), structure.cols());
        let mut data = Vec::with_capacity(m * k * w);
        let mut cls = Vec::with_capacity(m * k);
        for r in 0..m {
            for c in 0..k {
                data.extend_from_slice(structure.row_slice(r));
                cls.push(c);
            }
        }
        let classes = tape.constant(Array::one_hot(&cls, k));
        let st = tape.constant(Array::matrix(m * k, w, data)?);
        let out = head.forward(tape, &self.store, classes, st, cond)?;
        let (_, wts) = alpha_terms(tape, out.weights, t, self.config.scheduler.bounds)?;
        let clamp = self.config.weight_clamp;
        let wts = tape.clamp(wts, -clamp, clamp);
        let hazard = tape.neg(wts);
        let hazard = tape.reshape(hazard, m, k)?;
        let cats = tape.slice_cols(logits, 0, k)?;
        let probs = tape.softmax(cats);
        let expected = tape.mul(probs, hazard)?;
        let expected = tape.sum_cols(expected);
        let own = tape.pick_cols(hazard, x0)?;
        let excess = tape.sub(expected, own)?;
        let masked = tape.slice_cols(states, k, k + 1)?;
        let per_row = tape.mul(excess, masked)?;
        Ok(tape.sum(per_row))
    }

    /// `−Σ_i m_i log p_i(x_i)` with the mask indicator held constant.
    fn masked_ce(tape: &mut Tape, logp: Var, states: Var, k: usize) -> Result<Var> {
        let masked = tape.slice_cols(states, k, k + 1)?;
        let masked = tape.stop_gradient(masked);
        let picked = tape.mul(logp, masked)?;
        let total = tape.sum(picked);
        Ok(tape.neg(total))
    }

    /// Builds the loss of one clean graph at time `t` on `tape`.
    pub fn graph_loss(
        &self,
        tape: &mut Tape,
        clean: &CleanGraph,
        t: f64,
        cond: Condition,
        rng: &mut ChaCha8Rng,
    ) -> Result<GraphLoss> {
        let n = clean.n();
        let (nc, ec) = (self.node_classes, self.edge_classes);
        if clean.nodes.iter().any(|&c| c >= nc) || clean.edges.iter().any(|&c| c >= ec) {
            return Err(Error::domain("clean graph has categories outside the model range"));
        }
        let pairs = pair_list(n);
        let codes = clean.pair_codes();
        let p0 = rrwp(&clean.adjacency(&self.is_bond), n, self.config.rrwp_k)?;
        let (node_struct, edge_struct) = Self::structure(&p0);
        let sched_cond = self.scheduler_cond(tape, cond);

        let cls = tape.constant(Array::one_hot(&clean.nodes, nc));
        let st = tape.constant(node_struct.clone());
        let head = self.scheduler.node.forward(tape, &self.store, cls, st, sched_cond)?;
        let (node_probs, node_w) = self.cumulative_vars(tape, head, t)?;
        let (node_oh, node_states) = self.corrupt_rows(tape, node_probs, &clean.nodes, nc, rng)?;

        let mut edge_parts = None;
        let mut edge_states = Vec::new();
        let edge_oh = if pairs.is_empty() {
            tape.constant(Array::zeros(&[0, ec + 1]))
        } else {
            let cls = tape.constant(Array::one_hot(&codes, ec));
            let st = tape.constant(edge_struct.clone());
            let head = self.scheduler.edge.forward(tape, &self.store, cls, st, sched_cond)?;
            let (probs, w) = self.cumulative_vars(tape, head, t)?;
            let (oh, states) = self.corrupt_rows(tape, probs, &codes, ec, rng)?;
            edge_parts = Some(w);
            edge_states = states;
            oh
        };

        let mut noisy = clean.as_noisy(nc, ec);
        noisy.nodes = node_states;
        for (&(i, j), &s) in pairs.iter().zip(&edge_states) {
            noisy.set_edge(i, j, s);
        }
        let masked = noisy.masked_count();
        let pt = rrwp_noisy(&noisy, &self.is_bond, self.config.rrwp_k)?;
        let input = DenoiserInput {
            graph: &noisy,
            rrwp: &pt,
            is_bond: &self.is_bond,
            bond_order: &self.edge_decode,
            t,
        };
        let out = self
            .denoiser
            .forward_with_states(tape, &self.store, &input, cond, Some((node_oh, edge_oh)))?;
        let lsn = tape.log_softmax(out.node_logits);
        let node_lp = tape.pick_cols(lsn, &clean.nodes)?;
        let edges = match edge_parts {
            Some(w) => {
                let lse = tape.log_softmax(out.edge_logits);
                Some((w, tape.pick_cols(lse, &codes)?))
            }
            None => None,
        };
        let (mut loss, clamped) = nelbo_loss(
            tape,
            node_w,
            node_lp,
            edges,
            self.config.lambda,
            self.config.sign,
            self.config.weight_clamp,
        )?;
        if self.config.rate_term {
            let head = &self.scheduler.node;
            let mut rate = self.rate_term(tape, head, &node_struct, &clean.nodes, nc, t, sched_cond, out.node_logits, node_oh)?;
            if !pairs.is_empty() {
                let head = &self.scheduler.edge;
                let e = self.rate_term(tape, head, &edge_struct, &codes, ec, t, sched_cond, out.edge_logits, edge_oh)?;
                let e = tape.scale(e, self.config.lambda);
                rate = tape.add(rate, e)?;
            }
            let rate = tape.scale(rate, self.config.sign.factor());
            loss = tape.add(loss, rate)?;
        }
        if self.config.aux_ce > 0.0 {
            let mut ce = Self::masked_ce(tape, node_lp, node_oh, nc)?;
            if let Some((_, lp)) = edges {
                let e = Self::masked_ce(tape, lp, edge_oh, ec)?;
                let e = tape.scale(e, self.config.lambda);
                ce = tape.add(ce, e)?;
            }
            let ce = tape.scale(ce, self.config.aux_ce);
            loss = tape.add(loss, ce)?;
        }
        Ok(GraphLoss {
            loss,
            masked_fraction: masked as f64 / (n + pairs.len()) as f64,
            clamped,
        })
    }

    fn sample_cond(&self, clean: &CleanGraph, rng: &mut ChaCha8Rng) -> Condition {
        match clean.cond {
            Some(z) if self.config.conditional => {
                if rng.gen::<f64>() < self.config.cond_dropout {
                    Condition::Null
                } else {
                    Condition::Value(z)
                }
            }
            _ => Condition::Null,
        }
    }

    /// One optimisation step over `batch`; gradients are reduced in batch order.
    fn train_step(
        &mut self,
        data: &[CleanGraph],
        batch: &[usize],
        step: usize,
        seed: u64,
        adam: &mut Adam,
    ) -> Result<StepRecord> {
        let b = batch.len();
        let strat: f64 = stream(seed, "strata", step as u64).gen();
        let t_min = self.config.t_min;
        let model = &*self;
        let results: Vec<Result<(Gradients, f64, f64, usize)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let mut rng = stream(seed, "train", (step * b + slot) as u64);
                let t = t_min + (1.0 - t_min) * (slot as f64 + strat) / b as f64;
                let clean = &data[idx];
                let cond = model.sample_cond(clean, &mut rng);
                let mut tape = Tape::new();
                let gl = model.graph_loss(&mut tape, clean, t, cond, &mut rng)?;
                let loss = tape.value(gl.loss).item();
                Ok((tape.gradients(gl.loss)?, loss, gl.masked_fraction, gl.clamped))
            })
            .collect();
        let mut total = Gradients::default();
        let (mut loss, mut masked, mut clamped) = (0.0, 0.0, 0);
        for r in results {
            let (g, l, m, c) = r?;
            total.merge(g);
            loss += l;
            masked += m;
            clamped += c;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss} at step {step}")));
        }
        total.scale(1.0 / b as f64);
        if total.iter().any(|(_, g)| !g.all_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient at step {step} (loss {loss})")));
        }
        self.store.accumulate(&total);
        adam.step(&mut self.store);
        Ok(StepRecord {
            step,
            loss,
            masked_fraction_mean: masked / b as f64,
            clamped,
        })
    }

    /// Runs `cfg.steps` optimiser steps. `on_step` sees every record and the
    /// current model and may abort by returning an error.
    pub fn train_with(
        &mut self,
        data: &[CleanGraph],
        cfg: &TrainConfig,
        mut on_step: impl FnMut(&StepRecord, &Self) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        if data.is_empty() || cfg.batch == 0 {
            return Err(Error::domain("training needs data and a positive batch size"));
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::domain(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        let mut adam = Adam::with_lr(cfg.lr);
        let mut order_rng = stream(cfg.seed, "order", 0);
        let mut order: Vec<usize> = Vec::new();
        let mut records = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let mut batch = Vec::with_capacity(cfg.batch);
            while batch.len() < cfg.batch {
                if order.is_empty() {
                    order = (0..data.len()).collect();
                    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
                }
                batch.push(order.pop().expect("refilled"));
            }
            let rec = self.train_step(data, &batch, step, cfg.seed, &mut adam)?;
            on_step(&rec, self)?;
            records.push(rec);
        }
        self.calibrate(data)?;
        Ok(records)
    }

    /// Tabulates [`ReferenceSchedule`] from up to 256 evenly spaced graphs of
    /// `data`. Classes absent from them take the mean over all elements.
    pub fn calibrate(&mut self, data: &[CleanGraph]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::domain("calibration needs data"));
        }
        let big_t = self.config.timesteps;
        let times: Vec<f64> = (0..=big_t).map(|s| s as f64 / big_t as f64).collect();
        let picks = data.len().min(REFERENCE_GRAPHS);
        let per_graph: Vec<_> = (0..picks)
            .into_par_iter()
            .map(|i| {
                let g = &data[i * data.len() / picks];
                let cond = match (self.config.conditional, g.cond) {
                    (true, Some(z)) => Condition::Value(z),
                    _ => Condition::Null,
                };
                let (n, e) = self.coefficients(g, cond, &times)?;
                Ok((g.nodes.clone(), n, g.pair_codes(), e))
            })
            .collect::<Result<_>>()?;
        let table = |k: usize, pick: &dyn Fn(&(Vec<usize>, Vec<Vec<Cumulative>>, Vec<usize>, Vec<Vec<Cumulative>>)) -> (&[usize], &[Vec<Cumulative>])| {
            times
                .iter()
                .enumerate()
                .map(|(s, _)| {
                    let mut sums = vec![[0.0; 3]; k + 1];
                    let mut counts = vec![0usize; k + 1];
                    for g in &per_graph {
                        let (cls, coef) = pick(g);
                        for (&c, q) in cls.iter().zip(&coef[s]) {
                            for slot in [c, k] {
                                sums[slot][0] += q.alpha_bar;
                                sums[slot][1] += q.beta_bar;
                                sums[slot][2] += q.gamma_bar;
                                counts[slot] += 1;
                            }
                        }
                    }
                    (0..k)
                        .map(|c| {
                            let slot = if counts[c] > 0 { c } else { k };
                            let m = counts[slot].max(1) as f64;
                            Cumulative {
                                alpha_bar: sums[slot][0] / m,
                                beta_bar: sums[slot][1] / m,
                                gamma_bar: sums[slot][2] / m,
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let node = table(self.node_classes, &|g| (&g.0, &g.1));
        let edge = table(self.edge_classes, &|g| (&g.2, &g.3));
        self.reference = Some(ReferenceSchedule { node, edge });
        Ok(())
    }

    pub fn train(&mut self, data: &[CleanGraph], cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
        self.train_with(data, cfg, |_, _| Ok(()))
    }

    /// Denoiser prediction with classifier-free guidance when `w ≠ 0`.
    pub fn guided_predict(&self, g: &NoisyGraph, t: f64, cond: Condition, w: f64) -> Result<Prediction> {
        let p = rrwp_noisy(g, &self.is_bond, self.config.rrwp_k)?;
        let input = DenoiserInput {
            graph: g,
            rrwp: &p,
            is_bond: &self.is_bond,
            bond_order: &self.edge_decode,
            t,
        };
        let c = self.denoiser.predict(&self.store, &input, cond)?;
        if !matches!(cond, Condition::Value(_)) || w == 0.0 {
            return Ok(c);
        }
        let u = self.denoiser.predict(&self.store, &input, Condition::Null)?;
        let mix = |a: &Array, b: &Array| a.zip_map(b, |x, y| (1.0 + w) * x - w * y);
        Ok(Prediction {
            node_logits: mix(&c.node_logits, &u.node_logits),
            edge_logits: mix(&c.edge_logits, &u.edge_logits),
            node_states: c.node_states,
        })
    }

    /// Scheduler coefficients for rows of `(class, structure)`, indexed `[time][row]`.
    #[allow(clippy::too_many_arguments)]
    fn head_coefficients(
        &self,
        tape: &mut Tape,
        head: &ScheduleHead,
        cls: &[usize],
        k: usize,
        structure: Array,
        cond: Option<Var>,
        times: &[f64],
    ) -> Result<Vec<Vec<Cumulative>>> {
        if cls.is_empty() {
            return Ok(vec![Vec::new(); times.len()]);
        }
        let c = tape.constant(Array::one_hot(cls, k));
        let s = tape.constant(structure);
        let out = head.forward(tape, &self.store, c, s, cond)?;
        let f = tape.value(out.weights).clone();
        let r = out.replace.map(|r| tape.value(r).clone());
        let bounds = self.config.scheduler.bounds;
        times
            .iter()
            .map(|&t| {
                (0..cls.len())
                    .map(|i| {
                        let (a, _) = alpha_bar(f.row_slice(i), t, bounds)?;
                        Ok(match &r {
                            Some(r) => Cumulative::with_replace_ratio(a, r.get(i, 0)),
                            None => Cumulative::masking(a),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Cumulative coefficients of every node and unordered pair of `clean`
    /// at each of `times`, indexed `[time][element]`.
    pub fn coefficients(
        &self,
        clean: &CleanGraph,
        cond: Condition,
        times: &[f64],
    ) -> Result<(Vec<Vec<Cumulative>>, Vec<Vec<Cumulative>>)> {
        let p0 = rrwp(&clean.adjacency(&self.is_bond), clean.n(), self.config.rrwp_k)?;
        let (node_struct, edge_struct) = Self::structure(&p0);
        let mut tape = Tape::new();
        let sc = self.scheduler_cond(&mut tape, cond);
        let nodes = self.head_coefficients(
            &mut tape,
            &self.scheduler.node,
            &clean.nodes,
            self.node_classes,
            node_struct,
            sc,
            times,
        )?;
        let edges = self.head_coefficients(
            &mut tape,
            &self.scheduler.edge,
            &clean.pair_codes(),
            self.edge_classes,
            edge_struct,
            sc,
            times,
        )?;
        Ok((nodes, edges))
    }

    /// Like [`DiffusionModel::coefficients`], but with every category put in
    /// place of each element's own: row `e·k + c` holds element `e` as class `c`.
    /// The structural inputs come from `context`.
    pub fn class_coefficients(
        &self,
        context: &CleanGraph,
        cond: Condition,
        times: &[f64],
    ) -> Result<(Vec<Vec<Cumulative>>, Vec<Vec<Cumulative>>)> {
        let p0 = rrwp(&context.adjacency(&self.is_bond), context.n(), self.config.rrwp_k)?;
        let (node_struct, edge_struct) = Self::structure(&p0);
        let mut tape = Tape::new();
        let sc = self.scheduler_cond(&mut tape, cond);
        let expand = |a: &Array, k: usize| -> (Vec<usize>, Array) {
            let (rows, w) = (a.rows(), a.cols());
            let mut data = Vec::with_capacity(rows * k * w);
            let mut cls = Vec::with_capacity(rows * k);
            for r in 0..rows {
                for c in 0..k {
                    data.extend_from_slice(a.row_slice(r));
                    cls.push(c);
                }
            }
            (cls, Array::matrix(rows * k, w, data).expect("expanded rows"))
        };
        let (nc, ns) = expand(&node_struct, self.node_classes);
        let (ecl, es) = expand(&edge_struct, self.edge_classes);
        let nodes = self.head_coefficients(&mut tape, &self.scheduler.node, &nc, self.node_classes, ns, sc, times)?;
        let edges = self.head_coefficients(&mut tape, &self.scheduler.edge, &ecl, self.edge_classes, es, sc, times)?;
        Ok((nodes, edges))
    }

    fn draw_size(&self, rng: &mut ChaCha8Rng) -> Result<usize> {
        let total: usize = self.size_counts.iter().sum();
        if total == 0 {
            return Err(Error::domain("model has no graph-size histogram; train or prepare it first"));
        }
        let mut u = rng.gen_range(0..total);
        for (n, &c) in self.size_counts.iter().enumerate() {
            if u < c {
                return Ok(n);
            }
            u -= c;
        }
        unreachable!("histogram total covers the draw")
    }

    /// Runs the reverse chains; chain `i` uses its own stream of `cfg.seed`.
    pub fn sample(&self, cfg: &SampleConfig) -> Result<Vec<SampleOutput>> {
        let cond = match cfg.condition {
            Some(v) => {
                if !self.config.conditional {
                    return Err(Error::domain("model is unconditional"));
                }
                Condition::Value(self.z_score(v)?)
            }
            None => Condition::Null,
        };
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(cfg.seed, "chain", i as u64);
                let n = self.draw_size(&mut rng)?;
                self.sample_chain(n, cond, cfg.guidance, cfg.trace, &mut rng)
            })
            .collect()
    }

    /// Reverse chain for a graph of `n` nodes.
    pub fn sample_chain(
        &self,
        n: usize,
        cond: Condition,
        guidance: f64,
        trace: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleOutput> {
        let (nc, ec) = (self.node_classes, self.edge_classes);
        let big_t = self.config.timesteps;
        let pairs = pair_list(n);
        let mut g = NoisyGraph::fully_masked(n, nc, ec);
        let mut masked_per_step = Vec::with_capacity(big_t);
        let mut states = Vec::new();
        let replace = self.config.mode == Mode::VqSad;
        let reference = self
            .reference
            .as_ref()
            .filter(|r| r.node.len() == big_t + 1 && r.edge.len() == big_t + 1)
            .ok_or_else(|| Error::domain("model has no reference schedule; train or calibrate it first"))?;

        for s in (1..=big_t).rev() {
            let t = s as f64 / big_t as f64;
            let pred = self.guided_predict(&g, t, cond, guidance)?;
            if trace {
                states.push(pred.node_states.clone());
            }
            let (np, ep) = (pred.node_probs(), pred.edge_probs());
            let (ncur, nprev) = (&reference.node[s], &reference.node[s - 1]);
            let (ecur, eprev) = (&reference.edge[s], &reference.edge[s - 1]);
            for i in 0..n {
                if let Some(x) = step_element(g.nodes[i], ncur, nprev, replace, np.row_slice(i), rng) {
                    g.nodes[i] = x;
                }
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                if let Some(x) = step_element(g.edge(i, j), ecur, eprev, replace, ep.row_slice(p), rng) {
                    g.set_edge(i, j, x);
                }
            }
            masked_per_step.push(g.masked_count());
        }

        let mut forced = 0;
        if g.masked_count() > 0 {
            let pred = self.guided_predict(&g, 0.0, cond, guidance)?;
            let (np, ep) = (pred.node_probs(), pred.edge_probs());
            for i in 0..n {
                if g.nodes[i] == nc {
                    g.nodes[i] = categorical(&np.row_slice(i)[..nc], rng);
                    forced += 1;
                }
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                if g.edge(i, j) == ec {
                    let x = categorical(&ep.row_slice(p)[..ec], rng);
                    g.set_edge(i, j, x);
                    forced += 1;
                }
            }
        }

        let clean = CleanGraph {
            nodes: g.nodes.clone(),
            edges: g.edges.clone(),
            cond: match cond {
                Condition::Value(z) => Some(z),
                Condition::Null => None,
            },
        };
        let molecule = self.decode(&clean)?;
        Ok(SampleOutput {
            molecule,
            states: clean,
            masked_per_step,
            forced,
            trace: trace.then_some(EmbeddingTrace { steps: states }),
        })
    }

    /// Maps model categories to atoms and bond orders.
    pub fn decode(&self, clean: &CleanGraph) -> Result<MolecularGraph> {
        let tg = TokenizedGraph {
            nodes: clean.nodes.clone(),
            edges: clean.edges.clone(),
        };
        if tg.nodes.iter().any(|&c| c >= self.node_classes) || tg.edges.iter().any(|&c| c >= self.edge_classes) {
            return Err(Error::domain("cannot decode masked or out-of-range states"));
        }
        VqModel::detokenize_with(&tg, &self.node_decode, &self.edge_decode)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = Meta {
            kind: KIND.into(),
            config: self.config,
            node_classes: self.node_classes,
            edge_classes: self.edge_classes,
            is_bond: self.is_bond.clone(),
            node_decode: self.node_decode.clone(),
            edge_decode: self.edge_decode.clone(),
            size_counts: self.size_counts.clone(),
            property: self.property,
            tokenizer_checksum: self.tokenizer_checksum.clone(),
            vocab: self.vocab.clone(),
            reference: self.reference.clone(),
        };
        checkpoint::save(&self.store, serde_json::to_value(meta)?, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        let meta: Meta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::domain(format!("{}: not a diffusion checkpoint ({e})", dir.display())))?;
        if meta.kind != KIND {
            return Err(Error::domain(format!("{}: not a diffusion checkpoint", dir.display())));
        }
        let mut model = Self::build(
            meta.config,
            meta.node_classes,
            meta.edge_classes,
            meta.is_bond,
            meta.node_decode,
            meta.edge_decode,
            &meta.vocab,
            0,
        )?;
        checkpoint::load_into(&mut model.store, dir)?;
        model.size_counts = meta.size_counts;
        model.property = meta.property;
        model.tokenizer_checksum = meta.tokenizer_checksum;
        model.reference = meta.reference;
        Ok(model)
    }
}

/// Clean-graph estimate: revealed elements keep their state, masked ones take
/// the most probable category.
pub fn estimate(g: &NoisyGraph, node_probs: &Array, edge_probs: &Array) -> CleanGraph {
    let (nc, ec) = (g.node_classes, g.edge_classes);
    let best = |row: &[f64], k: usize| crate::autodiff::argmax(&row[..k]);
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &s)| if s == nc { best(node_probs.row_slice(i), nc) } else { s })
        .collect();
    let mut out = CleanGraph {
        nodes,
        edges: g.edges.clone(),
        cond: None,
    };
    let n = g.n();
    for (p, (i, j)) in pair_list(n).into_iter().enumerate() {
        if g.edge(i, j) == ec {
            let c = best(edge_probs.row_slice(p), ec);
            out.edges[i * n + j] = c;
            out.edges[j * n + i] = c;
        }
    }
    out
}

/// Draw from the first `probs.len()` categories, renormalised.
fn categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return crate::autodiff::argmax(probs);
    }
    let mut u = rng.gen::<f64>() * total;
    for (c, &p) in probs.iter().enumerate() {
        if u < p {
            return c;
        }
        u -= p;
    }
    probs.len() - 1
}

/// Probability that an element masked at `t` is revealed by `t − 1/T`
/// given its clean class: `1 − β̄_{t−1}/β̄_t`.
pub fn reveal_probability(cur: Cumulative, prev: Cumulative) -> f64 {
    if cur.beta_bar > 0.0 {
        (1.0 - prev.beta_bar / cur.beta_bar).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// One reverse update of a single element in state `now`; `cur[c]` and
/// `prev[c]` are the coefficients at `t` and `t − 1/T` if its clean class
/// were `c`, and `probs` the predicted distribution (mask column last).
///
/// A masked element becomes `c` with probability `p(c)·ρ_c`, `ρ_c` from
/// [`reveal_probability`], `p` renormalised over the categories. With
/// `replace`, a revealed element in state `d` is redrawn from `p` with
/// probability `γ̄_{t−1}(d) / (1 − β̄_{t−1}(d))`.
pub fn step_element(
    now: usize,
    cur: &[Cumulative],
    prev: &[Cumulative],
    replace: bool,
    probs: &[f64],
    rng: &mut impl Rng,
) -> Option<usize> {
    let k = cur.len();
    let z: f64 = probs[..k].iter().sum();
    if now == k {
        let weights: Vec<f64> = (0..k)
            .map(|c| if z > 0.0 { probs[c] / z } else { 1.0 / k as f64 } * reveal_probability(cur[c], prev[c]))
            .collect();
        let total: f64 = weights.iter().sum();
        (rng.gen::<f64>() < total).then(|| categorical(&weights, rng))
    } else if replace {
        let c = prev[now];
        let denom = 1.0 - c.beta_bar;
        let redraw = if denom > 0.0 {
            (c.gamma_bar / denom).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (rng.gen::<f64>() < redraw).then(|| categorical(&probs[..k], rng))
    } else {
        None
    }
}
