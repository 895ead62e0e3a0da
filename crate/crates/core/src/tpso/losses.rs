//! Semantic band and pairwise diversity objectives, both as plain
//! functions of embeddings and as tape builders for differentiation.

use crate::adengine::{cosine, Tape, Var};
use crate::encoder::PromptEmbedding;
use crate::{Error, Result};

/// Sum over variants of `max(0, |cos(v, v'_i) - kappa| - sigma)`.
pub fn semantic_loss(base: &PromptEmbedding, variants: &[PromptEmbedding], kappa: f64, sigma: f64) -> Result<f64> {
    variants.iter().try_fold(0.0, |acc, v| {
        let c = cosine(base.as_slice(), v.as_slice())?;
        Ok(acc + band_violation(c, kappa, sigma))
    })
}

pub fn band_violation(cos: f64, kappa: f64, sigma: f64) -> f64 {
    ((cos - kappa).abs() - sigma).max(0.0)
}

/// Mean cosine over ordered pairs of distinct variants; zero for a single
/// variant.
pub fn diversity_loss(variants: &[PromptEmbedding]) -> Result<f64> {
    let n = variants.len();
    if n == 0 {
        return Err(Error::Invalid("diversity loss of no variants".into()));
    }
    if n == 1 {
        crate::encoder::PromptEmbedding::new(variants[0].0.clone())?;
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += cosine(variants[i].as_slice(), variants[j].as_slice())?;
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

pub fn joint_loss(semantic: f64, diversity: f64, lambda: f64) -> f64 {
    semantic + lambda * diversity
}

/// Loss nodes built on a tape.
pub struct LossNodes {
    pub cosines: Vec<Var>,
    pub semantic: Var,
    pub diversity: Option<Var>,
    pub joint: Var,
}

/// Records the joint objective for a constant base embedding node and one
/// node per variant embedding.
pub fn record_losses(
    tape: &mut Tape,
    base: Var,
    variants: &[Var],
    kappa: f64,
    sigma: f64,
    lambda: f64,
) -> Result<LossNodes> {
    let mut cosines = Vec::with_capacity(variants.len());
    let mut terms = Vec::with_capacity(variants.len());
    for &v in variants {
        let c = tape.cosine(base, v)?;
        let dev = tape.shift(c, -kappa)?;
        let dev = tape.abs(dev)?;
        let excess = tape.shift(dev, -sigma)?;
        terms.push(tape.hinge(excess)?);
        cosines.push(c);
    }
    let semantic = tape.add_all(&terms)?;
    let n = variants.len();
    let diversity = if n >= 2 {
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push(tape.cosine(variants[i], variants[j])?);
            }
        }
        // each unordered pair stands for both orderings
        let s = tape.add_all(&pairs)?;
        Some(tape.scale(s, 2.0 / (n * (n - 1)) as f64)?)
    } else {
        None
    };
    let joint = match diversity {
        Some(d) if lambda != 0.0 => {
            let weighted = tape.scale(d, lambda)?;
            tape.add(semantic, weighted)?
        }
        _ => semantic,
    };
    Ok(LossNodes {
        cosines,
        semantic,
        diversity,
        joint,
    })
}
