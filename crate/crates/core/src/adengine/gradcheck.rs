use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Coordinates where both gradients fall below this are skipped.
pub const DEGENERATE_GRADIENT: f64 = 1e-10;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub compared: usize,
    pub skipped: usize,
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with the given step, over every coordinate of every differentiable leaf.
///
/// The relative error at a coordinate is
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn finite_difference_check(tape: &Tape, loss: Var, step: f64) -> Result<GradCheck> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::InvalidStep(step));
    }
    let grads = tape.backward(loss)?;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        compared: 0,
        skipped: 0,
    };
    for (leaf, g_ad) in grads.iter() {
        let base = tape.value(leaf);
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[i] += step;
            let mut minus = base.clone();
            minus.data_mut()[i] -= step;
            let lp = tape.replay(&[(leaf, plus)], loss)?.item();
            let lm = tape.replay(&[(leaf, minus)], loss)?.item();
            let g_fd = (lp - lm) / (2.0 * step);
            let g = g_ad.data()[i];
            if g.abs() < DEGENERATE_GRADIENT && g_fd.abs() < DEGENERATE_GRADIENT {
                report.skipped += 1;
                continue;
            }
            let rel = (g - g_fd).abs() / g.abs().max(g_fd.abs()).max(1e-8);
            report.max_relative_error = report.max_relative_error.max(rel);
            report.compared += 1;
        }
    }
    Ok(report)
}
