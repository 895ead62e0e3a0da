//! Learnable token offsets and their optimization.
//!
//! Each of the `N` variants owns an `n x d` offset matrix added to the
//! prompt's fixed token embeddings. All offsets are optimized jointly with
//! Adam against
//!
//! ```text
//! L_joint = sum_k max(0, |cos(v, v'_k) - kappa| - sigma)
//!         + lambda * mean_{i != j} cos(v'_i, v'_j)
//! ```
//!
//! where `v` is the base prompt embedding and `v'_k` the embedding of
//! variant `k`. The loop stops once the semantic term has stayed at or
//! below `tol_semantic` for `patience` consecutive evaluations, or after
//! `max_iters` updates.

mod adam;
mod config;
mod losses;

pub use adam::{adam_step, AdamParams, AdamState};
pub use config::{InitScale, TpsoConfig};
pub use losses::{band_violation, diversity_loss, joint_loss, record_losses, semantic_loss, LossNodes};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::adengine::{cosine, Tape, Tensor};
use crate::encoder::{PromptEmbedding, TextEncoder, TokenEmbeddings};
use crate::rng::{tags, Stream};
use crate::{Error, Result};

/// One independent offset matrix per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetSet {
    pub offsets: Vec<Tensor>,
    pub seed: u64,
}

impl OffsetSet {
    pub fn variants(&self) -> usize {
        self.offsets.len()
    }

    /// All-zero offsets; variants coincide with the base prompt.
    pub fn zeros(tokens: usize, dim: usize, variants: usize) -> Self {
        Self {
            offsets: vec![Tensor::zeros(&[tokens, dim]); variants],
            seed: 0,
        }
    }

    fn flatten(&self) -> Vec<f64> {
        self.offsets.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn unflatten(&mut self, flat: &[f64]) {
        let mut at = 0;
        for t in &mut self.offsets {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + len]);
            at += len;
        }
    }
}

/// Zero-mean Gaussian offsets, variants drawn in order from one stream.
pub fn init_offsets(tokens: usize, dim: usize, variants: usize, seed: u64, scale: InitScale) -> Result<OffsetSet> {
    if tokens == 0 || dim == 0 || variants == 0 {
        return Err(Error::Invalid("offset dimensions must be positive".into()));
    }
    let mut s = Stream::new(seed, tags::OFFSETS);
    let offsets = (0..variants)
        .map(|_| Tensor::matrix(tokens, dim, s.normals(tokens * dim, scale.std())))
        .collect::<Result<_>>()?;
    Ok(OffsetSet { offsets, seed })
}

/// Result of optimizing one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantBundle {
    pub token_ids: Vec<usize>,
    pub base_embedding: PromptEmbedding,
    pub variant_embeddings: Vec<PromptEmbedding>,
    /// `e_token + offsets_k`, one `n x d` matrix (as rows) per variant.
    pub variant_tokens: Vec<Vec<Vec<f64>>>,
    /// Encoder output sequence for the base prompt.
    pub base_conditioning: Vec<Vec<f64>>,
    pub variant_conditioning: Vec<Vec<Vec<f64>>>,
    /// `cos(v, v'_k)` for each variant.
    pub cosines: Vec<f64>,
    pub semantic_loss: f64,
    pub diversity_loss: f64,
    pub joint_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

impl VariantBundle {
    pub fn variants(&self) -> usize {
        self.variant_embeddings.len()
    }

    pub fn base_conditioning(&self) -> Result<Tensor> {
        rows_to_tensor(&self.base_conditioning)
    }

    pub fn variant_conditioning(&self, k: usize) -> Result<Tensor> {
        let seq = self
            .variant_conditioning
            .get(k)
            .ok_or_else(|| Error::Invalid(format!("bundle has no variant {k}")))?;
        rows_to_tensor(seq)
    }

    /// Mean cosine between distinct variant embeddings.
    pub fn mean_pairwise_cosine(&self) -> Result<f64> {
        diversity_loss(&self.variant_embeddings)
    }

    /// Fraction of variants whose cosine to the base lies within `tol` of
    /// `kappa`.
    pub fn band_rate(&self, kappa: f64, tol: f64) -> f64 {
        let inside = self.cosines.iter().filter(|c| (*c - kappa).abs() <= tol).count();
        inside as f64 / self.cosines.len().max(1) as f64
    }
}

/// Evaluates a fixed set of offsets into a bundle.
pub fn evaluate_offsets(
    encoder: &TextEncoder,
    tok: &TokenEmbeddings,
    offsets: &OffsetSet,
    cfg: &TpsoConfig,
    iterations: usize,
    converged: bool,
) -> Result<VariantBundle> {
    let mut tape = Tape::new();
    let bound = encoder.bind(&mut tape);
    let e = tape.constant(tok.values.clone());
    let (base_seq, base_v) = bound.forward(&mut tape, e)?;
    let base_embedding = PromptEmbedding::new(tape.value(base_v).data().to_vec())?;
    let base_conditioning = rows(tape.value(base_seq));

    let mut variant_embeddings = Vec::with_capacity(offsets.variants());
    let mut variant_tokens = Vec::with_capacity(offsets.variants());
    let mut variant_conditioning = Vec::with_capacity(offsets.variants());
    for eps in &offsets.offsets {
        let eps = tape.constant(eps.clone());
        let x = tape.add(e, eps)?;
        let (seq, v) = bound.forward(&mut tape, x)?;
        variant_tokens.push(rows(tape.value(x)));
        variant_conditioning.push(rows(tape.value(seq)));
        variant_embeddings.push(PromptEmbedding::new(tape.value(v).data().to_vec())?);
    }
    let cosines = variant_embeddings
        .iter()
        .map(|v| cosine(base_embedding.as_slice(), v.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let semantic = semantic_loss(&base_embedding, &variant_embeddings, cfg.kappa, cfg.sigma)?;
    let diversity = diversity_loss(&variant_embeddings)?;
    Ok(VariantBundle {
        token_ids: tok.ids.clone(),
        base_embedding,
        variant_embeddings,
        variant_tokens,
        base_conditioning,
        variant_conditioning,
        cosines,
        semantic_loss: semantic,
        diversity_loss: diversity,
        joint_loss: joint_loss(semantic, diversity, cfg.lambda),
        iterations,
        converged,
    })
}

/// Records the joint objective for the given offsets. Offsets are the only
/// differentiable leaves, in variant order.
pub fn record_objective(
    tape: &mut Tape,
    encoder: &TextEncoder,
    tok: &TokenEmbeddings,
    base: &PromptEmbedding,
    offsets: &OffsetSet,
    cfg: &TpsoConfig,
) -> Result<LossNodes> {
    let bound = encoder.bind(tape);
    let e = tape.constant(tok.values.clone());
    let base = tape.constant(Tensor::matrix(1, base.dim(), base.0.clone())?);
    let mut variants = Vec::with_capacity(offsets.variants());
    for eps in &offsets.offsets {
        let eps = tape.param(eps.clone());
        let x = tape.add(e, eps)?;
        let (_, v) = bound.forward(tape, x)?;
        variants.push(v);
    }
    record_losses(tape, base, &variants, cfg.kappa, cfg.sigma, cfg.lambda)
}

/// Runs the offset optimization for one prompt.
pub fn optimize(encoder: &TextEncoder, ids: &[usize], cfg: &TpsoConfig) -> Result<VariantBundle> {
    cfg.validate()?;
    let tok = encoder.encode_tokens(ids)?;
    let base = encoder.prompt_encode(&tok)?;
    let mut offsets = init_offsets(tok.len(), tok.dim(), cfg.variants, cfg.seed, cfg.init_scale)?;
    let mut flat = offsets.flatten();
    let mut state = AdamState::new(flat.len());
    let hp = AdamParams {
        lr: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };

    let mut streak = 0;
    let mut converged = false;
    let mut updates = 0;
    loop {
        let mut tape = Tape::new();
        let nodes = record_objective(&mut tape, encoder, &tok, &base, &offsets, cfg)?;
        let semantic = tape.value(nodes.semantic).item();
        let joint = tape.value(nodes.joint).item();
        if !semantic.is_finite() || !joint.is_finite() {
            return Err(Error::NonFinite {
                iteration: updates,
                what: format!("loss (semantic {semantic}, joint {joint})"),
            });
        }
        if semantic <= cfg.tol_semantic {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= cfg.patience {
            converged = true;
            break;
        }
        if updates == cfg.max_iters {
            break;
        }
        let grads = tape.backward(nodes.joint)?;
        let g: Vec<f64> = grads.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                iteration: updates,
                what: "gradient".into(),
            });
        }
        adam_step(&mut flat, &g, &mut state, &hp)?;
        offsets.unflatten(&flat);
        updates += 1;
        if updates % 100 == 0 {
            debug!("iter {updates}: semantic {semantic:.6} joint {joint:.6}");
        }
    }
    debug!("finished after {updates} updates, converged={converged}");
    evaluate_offsets(encoder, &tok, &offsets, cfg, updates, converged)
}
