//! Encoder and discriminator objectives of the adversarial sampler.
//!
//! `D(E(x))` is read as the probability that `x` is still unlabeled.
//!
//! ```text
//! L_e = −mean_L log D(E(x)) − mean_U log(1 − D(E(x)))
//! L_d = −mean_L log(1 − D(E(x))) − mean_U log D(E(x))
//! ```
//!
//! Probabilities are clamped to `[1e-7, 1 − 1e-7]` before the log; a clamped
//! probability passes no gradient.

use ndarray::{Array2, ArrayView2};

use super::ActiveError;
use crate::nn::{DenseNet, Gradients};

pub const PROB_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn clamped(p: f64) -> bool {
    !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// `−mean log q` where `q = p` (`toward_one`) or `q = 1 − p`, with its
/// gradient in `p`.
fn bce_side(p: &Array2<f64>, toward_one: bool) -> (f64, Array2<f64>) {
    let n = p.nrows() as f64;
    let mut loss = 0.0;
    let grad = p.mapv(|v| {
        let q = if toward_one { clamp(v) } else { 1.0 - clamp(v) };
        loss -= q.ln() / n;
        if clamped(v) {
            0.0
        } else if toward_one {
            -1.0 / (n * v)
        } else {
            1.0 / (n * (1.0 - v))
        }
    });
    (loss, grad)
}

fn check_batches(xl: &ArrayView2<f64>, xu: &ArrayView2<f64>) -> Result<(), ActiveError> {
    if xl.nrows() == 0 || xu.nrows() == 0 {
        return Err(ActiveError::EmptyBatch);
    }
    Ok(())
}

/// Encoder objective and its gradient with respect to the encoder's
/// parameters. The discriminator is held fixed.
pub fn encoder_loss(
    enc: &DenseNet,
    disc: &DenseNet,
    xl: ArrayView2<f64>,
    xu: ArrayView2<f64>,
) -> Result<(f64, Gradients), ActiveError> {
    check_batches(&xl, &xu)?;
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(enc);
    for (x, toward_one) in [(xl, true), (xu, false)] {
        let (h, enc_cache) = enc.forward(x)?;
        let (p, disc_cache) = disc.forward(h.view())?;
        let (loss, dp) = bce_side(&p, toward_one);
        let (_, dh) = disc.backward(&disc_cache, dp.view())?;
        let (g, _) = enc.backward(&enc_cache, dh.view())?;
        grads.add_assign(&g);
        total += loss;
    }
    Ok((total, grads))
}

/// Discriminator objective and its gradient with respect to the
/// discriminator's parameters. Encoder outputs are constants.
pub fn discriminator_loss(
    enc: &DenseNet,
    disc: &DenseNet,
    xl: ArrayView2<f64>,
    xu: ArrayView2<f64>,
) -> Result<(f64, Gradients), ActiveError> {
    check_batches(&xl, &xu)?;
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(disc);
    for (x, toward_one) in [(xl, false), (xu, true)] {
        let h = enc.predict(x)?;
        let (p, disc_cache) = disc.forward(h.view())?;
        let (loss, dp) = bce_side(&p, toward_one);
        let (g, _) = disc.backward(&disc_cache, dp.view())?;
        grads.add_assign(&g);
        total += loss;
    }
    Ok((total, grads))
}

/// `D(E(x))` for every row.
pub fn confidence(
    enc: &DenseNet,
    disc: &DenseNet,
    x: ArrayView2<f64>,
) -> Result<Vec<f64>, ActiveError> {
    let p = disc.predict(enc.predict(x)?.view())?;
    Ok(p.column(0).to_vec())
}
