//! Structure-aware learnable noise schedules and mask-and-replace transitions.
//!
//! A scheduler head maps an element's clean category, its RRWP context and the
//! condition vector to `K_poly` simplex weights `f`. The cumulative keep
//! probability is `ᾱ(t) = σ(−ζ(t))` with `ζ = ζ̂·(ζ_max − ζ_min) + ζ_min` and
//! `ζ̂(t) = Σ_k f_k t^k`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Array, Linear, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Tolerance for the row-sum precondition of [`build_transition`].
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ZetaBounds {
    fn default() -> Self {
        Self { min: -10.0, max: 10.0 }
    }
}

impl ZetaBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::domain(format!("zeta bounds need min < max, got [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// `ᾱ(t)` and its analytic derivative for simplex weights `f`.
pub fn alpha_bar(f: &[f64], t: f64, bounds: ZetaBounds) -> Result<(f64, f64)> {
    check_t(t)?;
    let (mut zh, mut dzh) = (0.0, 0.0);
    let mut tp = 1.0; // t^(k-1)
    for (i, &fk) in f.iter().enumerate() {
        let k = (i + 1) as f64;
        dzh += k * fk * tp;
        tp *= t;
        zh += fk * tp;
    }
    let zeta = zh * bounds.span() + bounds.min;
    let a = sigmoid(-zeta);
    // σ'(−ζ) = ᾱ(1 − ᾱ)
    let da = -a * (1.0 - a) * bounds.span() * dzh;
    Ok((a, da))
}

/// Central finite difference of `ᾱ`, one-sided at the ends of `[0, 1]`.
pub fn alpha_bar_dot_fd(f: &[f64], t: f64, bounds: ZetaBounds, h: f64) -> Result<f64> {
    check_t(t)?;
    let lo = (t - h).max(0.0);
    let hi = (t + h).min(1.0);
    let (a_lo, _) = alpha_bar(f, lo, bounds)?;
    let (a_hi, _) = alpha_bar(f, hi, bounds)?;
    Ok((a_hi - a_lo) / (hi - lo))
}

/// Cumulative marginal coefficients: keep, mask, replace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cumulative {
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub gamma_bar: f64,
}

impl Cumulative {
    /// Mask-only marginal (`γ̄ = 0`).
    pub fn masking(alpha_bar: f64) -> Self {
        Self {
            alpha_bar,
            beta_bar: 1.0 - alpha_bar,
            gamma_bar: 0.0,
        }
    }

    /// Mask-and-replace marginal with `γ̄ = r·ᾱ(1 − ᾱ)` for a ratio `r ∈ [0, 1]`.
    pub fn with_replace_ratio(alpha_bar: f64, r: f64) -> Self {
        let gamma_bar = r * alpha_bar * (1.0 - alpha_bar);
        Self {
            alpha_bar,
            beta_bar: 1.0 - alpha_bar - gamma_bar,
            gamma_bar,
        }
    }

    pub fn check(&self) -> Result<()> {
        let s = self.alpha_bar + self.beta_bar + self.gamma_bar;
        let ok = [self.alpha_bar, self.beta_bar, self.gamma_bar]
            .iter()
            .all(|p| (-1e-12..=1.0 + 1e-12).contains(p));
        if !ok || (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::domain(format!(
                "cumulative coefficients ({}, {}, {}) do not form a distribution (sum {s})",
                self.alpha_bar, self.beta_bar, self.gamma_bar
            )));
        }
        Ok(())
    }

    /// `Q̄ᵀ v(x₀)`: distribution over `k + 1` states (last is the mask).
    pub fn marginal(&self, x0: usize, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k + 1];
        let spread = if k > 1 { self.gamma_bar / (k - 1) as f64 } else { 0.0 };
        for (c, p) in out.iter_mut().enumerate().take(k) {
            *p = if c == x0 { self.alpha_bar } else { spread };
        }
        out[k] = self.beta_bar;
        out
    }
}

/// Per-step `(α, β, γ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Step {
    /// Step that carries `prev` into `cur` under the product relations
    /// `α = ᾱ_t/ᾱ_{t−1}`, `1 − β = (1 − β̄_t)/(1 − β̄_{t−1})`; `γ` fills the row.
    pub fn between(prev: Cumulative, cur: Cumulative, k: usize) -> Self {
        let alpha = if prev.alpha_bar > 0.0 {
            (cur.alpha_bar / prev.alpha_bar).min(1.0)
        } else {
            0.0
        };
        let keep_prev = 1.0 - prev.beta_bar;
        let beta = if keep_prev > 0.0 {
            (1.0 - (1.0 - cur.beta_bar) / keep_prev).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let gamma = if k > 1 {
            ((1.0 - alpha - beta) / (k - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Self { alpha, beta, gamma }
    }
}

/// Row-stochastic `(K+1)×(K+1)` matrix; `x_tᵀ = x_{t−1}ᵀ Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn states(&self) -> usize {
        self.k + 1
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * (self.k + 1) + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let s = self.k + 1;
        &self.data[from * s..(from + 1) * s]
    }

    /// `dᵀ Q` for a distribution `d` over states.
    pub fn apply(&self, d: &[f64]) -> Vec<f64> {
        let s = self.k + 1;
        let mut out = vec![0.0; s];
        for (i, &di) in d.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            for (o, q) in out.iter_mut().zip(self.row(i)) {
                *o += di * q;
            }
        }
        out
    }

    pub fn compose(&self, next: &TransitionMatrix) -> TransitionMatrix {
        let s = self.k + 1;
        let mut data = vec![0.0; s * s];
        for i in 0..s {
            let row = next.apply(self.row(i));
            data[i * s..(i + 1) * s].copy_from_slice(&row);
        }
        TransitionMatrix { k: self.k, data }
    }
}

/// Mask-and-replace transition over `k` categories plus the absorbing mask.
pub fn build_transition(alpha: f64, beta: f64, gamma: f64, k: usize) -> Result<TransitionMatrix> {
    if k == 0 {
        return Err(Error::domain("transition needs at least one category"));
    }
    for (name, p) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("{name} = {p} is not a probability")));
        }
    }
    let total = alpha + (k - 1) as f64 * gamma + beta;
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::domain(format!(
            "transition row sums to {total}; deficit {}",
            1.0 - total
        )));
    }
    let s = k + 1;
    let mut data = vec![0.0; s * s];
    for i in 0..k {
        for j in 0..k {
            data[i * s + j] = if i == j { alpha } else { gamma };
        }
        data[i * s + k] = beta;
    }
    data[k * s + k] = 1.0;
    Ok(TransitionMatrix { k, data })
}

/// Product-form cumulation: `ᾱ = Πα`, `β̄ = 1 − Π(1 − β)`, `γ̄ = 1 − ᾱ − β̄`.
///
/// The product `ᾱ` is exact only while `γ = 0`; with replacement, probability
/// also flows back into the original class. [`cumulate_exact`] tracks that.
pub fn cumulate(alphas: &[f64], betas: &[f64]) -> Result<Cumulative> {
    if alphas.len() != betas.len() || alphas.is_empty() {
        return Err(Error::domain("cumulate needs equally long, nonempty alpha and beta"));
    }
    for &p in alphas.iter().chain(betas) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("{p} is not a probability")));
        }
    }
    let alpha_bar: f64 = alphas.iter().product();
    let beta_bar = 1.0 - betas.iter().map(|b| 1.0 - b).product::<f64>();
    let gamma_bar = 1.0 - alpha_bar - beta_bar;
    if gamma_bar < -1e-12 {
        return Err(Error::domain(format!(
            "inconsistent schedule: cumulative replace probability {gamma_bar} < 0"
        )));
    }
    Ok(Cumulative {
        alpha_bar,
        beta_bar,
        gamma_bar: gamma_bar.max(0.0),
    })
}

/// Exact marginal coefficients of `Q_1⋯Q_t` applied to a one-hot over `k` classes.
pub fn cumulate_exact(steps: &[Step], k: usize) -> Cumulative {
    // a: mass on the original class, o: mass on each other class, m: mask
    let (mut a, mut o, mut m) = (1.0, 0.0, 0.0);
    let others = k.saturating_sub(1) as f64;
    for s in steps {
        let na = a * s.alpha + others * o * s.gamma;
        let no = a * s.gamma + o * s.alpha + (others - 1.0).max(0.0) * o * s.gamma;
        m += (1.0 - m) * s.beta;
        a = na;
        o = no;
    }
    Cumulative {
        alpha_bar: a,
        beta_bar: m,
        gamma_bar: others * o,
    }
}

/// Which corruption an element received.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Keep,
    Mask,
    Replace,
}

/// Draws keep/mask/replace for one element.
pub fn draw_outcome(c: Cumulative, rng: &mut impl Rng) -> Outcome {
    let u: f64 = rng.gen();
    if u < c.alpha_bar {
        Outcome::Keep
    } else if u < c.alpha_bar + c.beta_bar {
        Outcome::Mask
    } else {
        Outcome::Replace
    }
}

/// Uniform draw among the `k − 1` categories other than `x0`.
pub fn replace_category(x0: usize, k: usize, rng: &mut impl Rng) -> usize {
    if k < 2 {
        return x0;
    }
    let r = rng.gen_range(0..k - 1);
    if r >= x0 {
        r + 1
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub k_poly: usize,
    pub bounds: ZetaBounds,
    pub hidden: usize,
    /// Width of the condition vector (0 for unconditional models).
    pub cond_dim: usize,
    /// Learn a replace-probability head (mask-and-replace mode).
    pub replace: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            k_poly: 6,
            bounds: ZetaBounds::default(),
            hidden: 32,
            cond_dim: 2,
            replace: false,
        }
    }
}

/// One scheduling network, `f(W h, W_s P, c)`.
#[derive(Debug, Clone)]
pub struct ScheduleHead {
    class_in: Linear,
    struct_in: Linear,
    cond_in: Option<Linear>,
    out: Linear,
    replace: Option<Linear>,
    classes: usize,
    rrwp_k: usize,
}

/// Tape outputs of a head for `m` elements.
#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    /// `m×K_poly` simplex weights.
    pub weights: Var,
    /// `m×1` replace ratios in `(0, 1)`.
    pub replace: Option<Var>,
}

impl ScheduleHead {
    fn new(
        store: &mut ParamStore,
        name: &str,
        classes: usize,
        rrwp_k: usize,
        cfg: &SchedulerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = cfg.hidden;
        let cond_in = if cfg.cond_dim > 0 {
            Some(Linear::new(store, &format!("{name}.cond"), cfg.cond_dim, h, rng)?)
        } else {
            None
        };
        let replace = if cfg.replace {
            let lin = Linear::new(store, &format!("{name}.replace"), h, 1, rng)?;
            // start with a small replace share
            store.value_mut(lin.bias).data_mut()[0] = -2.0;
            Some(lin)
        } else {
            None
        };
        Ok(Self {
            class_in: Linear::new(store, &format!("{name}.class"), classes, h, rng)?,
            struct_in: Linear::new(store, &format!("{name}.struct"), rrwp_k, h, rng)?,
            cond_in,
            out: Linear::new(store, &format!("{name}.out"), h, cfg.k_poly, rng)?,
            replace,
            classes,
            rrwp_k,
        })
    }

    /// `classes`: `m×C` one-hots; `structure`: `m×K_rrwp`; `cond`: `1×cond_dim`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        classes: Var,
        structure: Var,
        cond: Option<Var>,
    ) -> Result<HeadOutput> {
        let (cv, sv) = (tape.value(classes), tape.value(structure));
        if cv.cols() != self.classes || sv.cols() != self.rrwp_k || cv.rows() != sv.rows() {
            return Err(Error::domain(format!(
                "scheduler input shapes {:?} and {:?}, expected m×{} and m×{}",
                cv.shape(),
                sv.shape(),
                self.classes,
                self.rrwp_k
            )));
        }
        let a = self.class_in.forward(tape, store, classes)?;
        let s = self.struct_in.forward_no_bias(tape, store, structure)?;
        let mut pre = tape.add(a, s)?;
        if let Some(lin) = &self.cond_in {
            let c = match cond {
                Some(c) => c,
                None => tape.constant(Array::zeros(&[1, lin.in_dim])),
            };
            let cw = lin.forward_no_bias(tape, store, c)?;
            pre = tape.add_row(pre, cw)?;
        }
        let hidden = tape.relu(pre);
        let logits = self.out.forward(tape, store, hidden)?;
        let weights = tape.softmax(logits);
        let replace = match &self.replace {
            Some(lin) => {
                let r = lin.forward(tape, store, hidden)?;
                Some(tape.sigmoid(r))
            }
            None => None,
        };
        Ok(HeadOutput { weights, replace })
    }
}

/// Node and edge scheduling networks.
#[derive(Debug, Clone)]
pub struct SchedulerNet {
    pub config: SchedulerConfig,
    pub node: ScheduleHead,
    pub edge: ScheduleHead,
}

impl SchedulerNet {
    /// Parameters are registered under `{prefix}.node.*` and `{prefix}.edge.*`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        node_classes: usize,
        edge_classes: usize,
        rrwp_k: usize,
        config: SchedulerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.k_poly == 0 {
            return Err(Error::domain("K_poly must be at least 1"));
        }
        ZetaBounds::new(config.bounds.min, config.bounds.max)?;
        Ok(Self {
            node: ScheduleHead::new(store, &format!("{prefix}.node"), node_classes, rrwp_k, &config, rng)?,
            edge: ScheduleHead::new(store, &format!("{prefix}.edge"), edge_classes, rrwp_k, &config, rng)?,
            config,
        })
    }
}

/// Tape values of `ᾱ(t)` and the loss weight `ᾱ̇/(1 − ᾱ)` for each row of `weights`.
///
/// Uses `ᾱ̇/(1 − ᾱ) = −ᾱ·(ζ_max − ζ_min)·ζ̂′(t)`, which stays finite as `ᾱ → 1`.
pub fn alpha_terms(tape: &mut Tape, weights: Var, t: f64, bounds: ZetaBounds) -> Result<(Var, Var)> {
    check_t(t)?;
    let k = tape.value(weights).cols();
    let mut powers = Vec::with_capacity(k);
    let mut slopes = Vec::with_capacity(k);
    let mut tp = 1.0;
    for i in 0..k {
        slopes.push((i + 1) as f64 * tp);
        tp *= t;
        powers.push(tp);
    }
    let pw = tape.constant(Array::column(powers));
    let sl = tape.constant(Array::column(slopes));
    let zh = tape.matmul(weights, pw)?;
    let dzh = tape.matmul(weights, sl)?;
    let zeta = tape.scale(zh, bounds.span());
    let zeta = tape.add_scalar(zeta, bounds.min);
    let neg = tape.neg(zeta);
    let abar = tape.sigmoid(neg);
    let w = tape.mul(abar, dzh)?;
    let w = tape.scale(w, -bounds.span());
    Ok((abar, w))
}

/// One row of a schedule dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub t: f64,
    pub element: String,
    pub coeffs: Cumulative,
}

pub fn dump_csv(rows: &[DumpRow]) -> String {
    let mut out = String::from("t,element,alpha_bar,beta_bar,gamma_bar\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.t, r.element, r.coeffs.alpha_bar, r.coeffs.beta_bar, r.coeffs.gamma_bar
        );
    }
    out
}
