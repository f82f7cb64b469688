//! Dense 64-bit numerics: the probability primitives used by every
//! regularizer, a reverse-mode tape over vector-valued operations, seeded
//! random streams, and a central-difference gradient checker.

mod gradcheck;
mod rng;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use rng::{stream_rng, stream_seed, uniform_vec, StreamRng};
pub use tape::{BlockGrad, Gradients, ParamBlock, ParamId, ParamStore, Tape, Var};

use crate::error::{Error, Result};

/// Lower bound applied to every probability before a logarithm is taken.
pub const PROB_FLOOR: f64 = 1e-8;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

/// Clamps every entry at [`PROB_FLOOR`] and renormalizes to unit mass.
///
/// This is the projection onto the floored simplex used after a shifting
/// vector is added to a distribution, and before every logarithm.
pub fn floor_renormalize(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(PROB_FLOOR)).collect();
    let sum: f64 = clamped.iter().sum();
    // Inputs already on the floored simplex come back unchanged, so that
    // re-projecting a distribution is exact rather than off by rounding.
    if v.iter().all(|&x| x >= PROB_FLOOR) && (sum - 1.0).abs() <= 4.0 * f64::EPSILON * v.len() as f64 {
        return clamped;
    }
    clamped.into_iter().map(|x| x / sum).collect()
}

/// Symmetric KL divergence `½[KL(p‖q) + KL(q‖p)]` in nats.
///
/// Written as `½ Σ (p − q)(ln p − ln q)`, which is symmetric in its
/// arguments bit-for-bit and nonnegative term by term.
pub fn sym_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "sym_kl over distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(sym_kl_unchecked(p, q))
}

pub(crate) fn sym_kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| sym_kl_term(a, b))
        .sum::<f64>()
}

// Each summand is built so that swapping (a, b) yields the identical float.
#[inline]
fn sym_kl_term(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    (hi - lo) * (hi.ln() - lo.ln())
}

/// `max(0, x − margin)`.
pub fn margin_hinge(x: f64, margin: f64) -> f64 {
    if x > margin {
        x - margin
    } else {
        0.0
    }
}

/// Subgradient of [`margin_hinge`] with respect to `x`; zero at the kink.
pub fn margin_hinge_grad(x: f64, margin: f64) -> f64 {
    if x > margin {
        1.0
    } else {
        0.0
    }
}

/// Index of the largest entry, ties resolved toward the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
