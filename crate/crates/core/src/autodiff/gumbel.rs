//! Gumbel-softmax relaxation of categorical draws.

use rand::Rng;

use super::array::{argmax, Array};
use super::tape::{softmax_rows, Tape, Var};
use crate::error::{Error, Result};

/// Standard Gumbel noise `-ln(-ln U)`, one value per entry.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    let data = (0..rows * cols)
        .map(|_| {
            // open interval keeps both logs finite
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Array::matrix(rows, cols, data).expect("noise shape")
}

fn check(logits: &Array, temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain(format!("temperature must be positive, got {temperature}")));
    }
    if !logits.all_finite() {
        return Err(Error::domain("gumbel_softmax: non-finite logits"));
    }
    Ok(())
}

/// Relaxed sample `softmax((logits + g)/τ)` per row, using the given noise.
pub fn relaxed_with_noise(logits: &Array, noise: &Array, temperature: f64) -> Result<Array> {
    check(logits, temperature)?;
    let perturbed = logits.as_matrix().zip_map(&noise.as_matrix(), |l, g| (l + g) / temperature);
    Ok(softmax_rows(&perturbed))
}

/// Relaxed one-hot draw per row of `logits`.
pub fn gumbel_softmax(logits: &Array, temperature: f64, rng: &mut impl Rng) -> Result<Array> {
    let m = logits.as_matrix();
    let noise = gumbel_noise(m.rows(), m.cols(), rng);
    relaxed_with_noise(&m, &noise, temperature)
}

/// Hard one-hot draw per row (the forward value of the straight-through variant).
pub fn gumbel_hard(logits: &Array, temperature: f64, rng: &mut impl Rng) -> Result<Array> {
    let soft = gumbel_softmax(logits, temperature, rng)?;
    Ok(harden(&soft))
}

fn harden(soft: &Array) -> Array {
    let idx: Vec<usize> = (0..soft.rows()).map(|r| soft.argmax_row(r)).collect();
    Array::one_hot(&idx, soft.cols())
}

/// Differentiable draw on a tape. With `hard`, the forward value is the one-hot
/// argmax and gradients flow through the relaxed sample.
pub fn gumbel_softmax_tape(
    tape: &mut Tape,
    logits: Var,
    temperature: f64,
    hard: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    let lv = tape.value(logits);
    check(lv, temperature)?;
    let noise = gumbel_noise(lv.rows(), lv.cols(), rng);
    let g = tape.constant(noise);
    let shifted = tape.add(logits, g)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    let soft = tape.softmax(scaled);
    if !hard {
        return Ok(soft);
    }
    let hard_value = harden(tape.value(soft));
    tape.straight_through(soft, hard_value)
}

/// Category index chosen by a hard draw in each row.
pub fn hard_indices(one_hot: &Array) -> Vec<usize> {
    (0..one_hot.rows()).map(|r| argmax(one_hot.row_slice(r))).collect()
}
