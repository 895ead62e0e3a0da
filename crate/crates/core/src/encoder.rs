//! Seeded stand-in for a CLIP-style text stack.
//!
//! Three pieces, each a pure function of its seed and dimensions:
//!
//! - [`TokenEncoder`]: an embedding matrix indexed by token id.
//! - [`PromptEncoder`]: a pre-norm transformer encoder (multi-head
//!   self-attention plus a `tanh` feed-forward block per layer) with fixed
//!   sinusoidal positions and a final row normalization. Its output is the
//!   conditioning sequence.
//! - [`Projector`]: mean pooling over positions followed by a linear map,
//!   giving the prompt embedding on which the optimization losses act.
//!
//! Weights are Gaussian with standard deviation `1/sqrt(fan_in)` drawn from
//! [`crate::rng::Stream`]; the stream tag of each tensor is fixed in
//! [`crate::rng::tags`].

use serde::{Deserialize, Serialize};

use crate::adengine::{Tape, Tensor, Var};
use crate::linalg;
use crate::rng::{tags, Stream};
use crate::{Error, Result};

/// Row-distinctness is verified at construction up to this vocabulary size.
pub const DISTINCT_ROW_CHECK_LIMIT: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub proj_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub token_seed: u64,
    pub encoder_seed: u64,
    pub projector_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            dim: 32,
            proj_dim: 32,
            layers: 2,
            heads: 4,
            ff_width: 64,
            token_seed: 1,
            encoder_seed: 2,
            projector_seed: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder.{m}")));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.dim == 0 || self.proj_dim == 0 || self.ff_width == 0 {
            return bad("dim, proj_dim and ff_width must be positive");
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad("heads must divide dim");
        }
        if self.proj_dim > self.dim {
            return bad("proj_dim must not exceed dim (projector needs full column rank)");
        }
        Ok(())
    }
}

fn gaussian(seed: u64, tag: u64, rows: usize, cols: usize, std: f64) -> Tensor {
    let mut s = Stream::new(seed, tag);
    Tensor::matrix(rows, cols, s.normals(rows * cols, std)).expect("positive dims")
}

#[derive(Clone, Debug)]
pub struct TokenEncoder {
    matrix: Tensor,
    seed: u64,
}

impl TokenEncoder {
    pub fn new(seed: u64, vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Config("token encoder dims must be positive".into()));
        }
        let matrix = gaussian(
            seed,
            tags::TOKEN_MATRIX,
            vocab_size,
            dim,
            1.0 / (dim as f64).sqrt(),
        );
        if vocab_size <= DISTINCT_ROW_CHECK_LIMIT {
            for i in 0..vocab_size {
                for j in (i + 1)..vocab_size {
                    if matrix.row(i) == matrix.row(j) {
                        return Err(Error::Invalid(format!(
                            "embedding rows {i} and {j} coincide"
                        )));
                    }
                }
            }
        }
        Ok(Self { matrix, seed })
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Row `n` of the result is `M[ids[n]]`.
    pub fn encode_tokens(&self, ids: &[usize]) -> Result<TokenEmbeddings> {
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let v = self.vocab_size();
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for (index, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::TokenOutOfRange { index, id, vocab: v });
            }
            data.extend_from_slice(self.matrix.row(id));
        }
        Ok(TokenEmbeddings {
            ids: ids.to_vec(),
            values: Tensor::matrix(ids.len(), self.dim(), data)?,
        })
    }
}

/// Fixed token embeddings of one prompt, `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbeddings {
    pub ids: Vec<usize>,
    pub values: Tensor,
}

impl TokenEmbeddings {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Pooled, projected prompt-level vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptEmbedding(pub Vec<f64>);

impl PromptEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite prompt embedding".into()));
        }
        if crate::adengine::norm(&values) < 1e-12 {
            return Err(Error::ZeroNorm("prompt embedding"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug)]
struct Layer {
    query: Vec<Tensor>,
    key: Vec<Tensor>,
    value: Vec<Tensor>,
    out: Vec<Tensor>,
    ff_in: Tensor,
    ff_in_bias: Tensor,
    ff_out: Tensor,
    ff_out_bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct PromptEncoder {
    layers: Vec<Layer>,
    dim: usize,
    heads: usize,
    seed: u64,
}

/// Sinusoidal positions scaled by `1/sqrt(d)`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let scale = 1.0 / (dim as f64).sqrt();
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 10000f64.powf(-((i - i % 2) as f64) / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = scale * if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, dim, data).expect("positive dims")
}

impl PromptEncoder {
    pub fn new(seed: u64, layers: usize, heads: usize, dim: usize, ff_width: usize) -> Result<Self> {
        if heads == 0 || dim == 0 || dim % heads != 0 || ff_width == 0 {
            return Err(Error::Config(format!(
                "prompt encoder needs heads dividing dim (heads={heads}, dim={dim})"
            )));
        }
        let head_dim = dim / heads;
        let std_d = 1.0 / (dim as f64).sqrt();
        let std_head = 1.0 / (head_dim as f64).sqrt();
        let std_ff = 1.0 / (ff_width as f64).sqrt();
        let layers = (0..layers)
            .map(|l| {
                let tag = |slot: u64| tags::ENCODER_LAYER_BASE + 16 * l as u64 + slot;
                let per_head = |slot: u64, rows: usize, cols: usize, std: f64| -> Vec<Tensor> {
                    let mut s = Stream::new(seed, tag(slot));
                    (0..heads)
                        .map(|_| Tensor::matrix(rows, cols, s.normals(rows * cols, std)).unwrap())
                        .collect()
                };
                Layer {
                    query: per_head(0, dim, head_dim, std_d),
                    key: per_head(1, dim, head_dim, std_d),
                    value: per_head(2, dim, head_dim, std_d),
                    // heads are summed, so each output map carries 1/sqrt(H) extra
                    out: per_head(3, head_dim, dim, std_head / (heads as f64).sqrt()),
                    ff_in: gaussian(seed, tag(4), dim, ff_width, std_d),
                    ff_in_bias: gaussian(seed, tag(5), 1, ff_width, 0.1),
                    ff_out: gaussian(seed, tag(6), ff_width, dim, std_ff),
                    ff_out_bias: gaussian(seed, tag(7), 1, dim, 0.1),
                }
            })
            .collect();
        Ok(Self {
            layers,
            dim,
            heads,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers all weights as constants on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundPromptEncoder {
        let mut c = |t: &Tensor| tape.constant(t.clone());
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                query: l.query.iter().map(&mut c).collect(),
                key: l.key.iter().map(&mut c).collect(),
                value: l.value.iter().map(&mut c).collect(),
                out: l.out.iter().map(&mut c).collect(),
                ff_in: c(&l.ff_in),
                ff_in_bias: c(&l.ff_in_bias),
                ff_out: c(&l.ff_out),
                ff_out_bias: c(&l.ff_out_bias),
            })
            .collect();
        BoundPromptEncoder {
            layers,
            dim: self.dim,
            attn_scale: 1.0 / ((self.dim / self.heads) as f64).sqrt(),
        }
    }

    /// Contextualized sequence, same shape as the input (pre-projector).
    pub fn conditioning_sequence(&self, tok: &TokenEmbeddings) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(tok.values.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

struct BoundLayer {
    query: Vec<Var>,
    key: Vec<Var>,
    value: Vec<Var>,
    out: Vec<Var>,
    ff_in: Var,
    ff_in_bias: Var,
    ff_out: Var,
    ff_out_bias: Var,
}

/// Prompt-encoder weights registered on a particular tape.
pub struct BoundPromptEncoder {
    layers: Vec<BoundLayer>,
    dim: usize,
    attn_scale: f64,
}

impl BoundPromptEncoder {
    /// Runs the encoder on an `n x d` node (token embeddings, possibly with
    /// offsets already added). Positions are added here and never offset.
    pub fn forward(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let shape = tape.value(tokens).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::ShapeMismatch {
                kind: "prompt-encoder",
                lhs: shape,
                rhs: vec![self.dim],
            });
        }
        let pos = tape.constant(positional_encoding(shape[0], self.dim));
        let mut x = tape.add(tokens, pos)?;
        for layer in &self.layers {
            let h = tape.layer_norm(x)?;
            let mut heads = Vec::with_capacity(layer.query.len());
            for i in 0..layer.query.len() {
                let q = tape.matmul(h, layer.query[i])?;
                let k = tape.matmul(h, layer.key[i])?;
                let v = tape.matmul(h, layer.value[i])?;
                let kt = tape.transpose(k)?;
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, self.attn_scale)?;
                let weights = tape.softmax_rows(scores)?;
                let mixed = tape.matmul(weights, v)?;
                heads.push(tape.matmul(mixed, layer.out[i])?);
            }
            let attn = tape.add_all(&heads)?;
            x = tape.add(x, attn)?;

            let h = tape.layer_norm(x)?;
            let f = tape.matmul(h, layer.ff_in)?;
            let f = tape.add_row(f, layer.ff_in_bias)?;
            let f = tape.tanh(f)?;
            let f = tape.matmul(f, layer.ff_out)?;
            let f = tape.add_row(f, layer.ff_out_bias)?;
            x = tape.add(x, f)?;
        }
        tape.layer_norm(x)
    }
}

#[derive(Clone, Debug)]
pub struct Projector {
    weight: Tensor,
    seed: u64,
}

impl Projector {
    pub fn new(seed: u64, dim: usize, proj_dim: usize) -> Result<Self> {
        let weight = gaussian(seed, tags::PROJECTOR, dim, proj_dim, 1.0 / (dim as f64).sqrt());
        let smallest = linalg::singular_values(&weight)?[0];
        if smallest <= 1e-6 {
            return Err(Error::Invalid(format!(
                "projector is rank deficient (smallest singular value {smallest:e})"
            )));
        }
        Ok(Self { weight, seed })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn proj_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.constant(self.weight.clone())
    }

    /// Mean-pools a sequence node and applies the projection: `1 x d_p`.
    pub fn project(tape: &mut Tape, weight: Var, sequence: Var) -> Result<Var> {
        let pooled = tape.mean_pool(sequence)?;
        tape.matmul(pooled, weight)
    }
}

/// The full text stack.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub tokens: TokenEncoder,
    pub prompt: PromptEncoder,
    pub projector: Projector,
}

/// Everything one needs from a tape-bound text stack.
pub struct BoundTextEncoder {
    pub prompt: BoundPromptEncoder,
    pub projector: Var,
}

impl BoundTextEncoder {
    /// Returns `(conditioning sequence, prompt embedding)` nodes.
    pub fn forward(&self, tape: &mut Tape, tokens: Var) -> Result<(Var, Var)> {
        let seq = self.prompt.forward(tape, tokens)?;
        let v = Projector::project(tape, self.projector, seq)?;
        Ok((seq, v))
    }
}

impl TextEncoder {
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            tokens: TokenEncoder::new(cfg.token_seed, cfg.vocab_size, cfg.dim)?,
            prompt: PromptEncoder::new(cfg.encoder_seed, cfg.layers, cfg.heads, cfg.dim, cfg.ff_width)?,
            projector: Projector::new(cfg.projector_seed, cfg.dim, cfg.proj_dim)?,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundTextEncoder {
        BoundTextEncoder {
            prompt: self.prompt.bind(tape),
            projector: self.projector.bind(tape),
        }
    }

    pub fn encode_tokens(&self, ids: &[usize]) -> Result<TokenEmbeddings> {
        self.tokens.encode_tokens(ids)
    }

    /// `v = f(E(tokens))`.
    pub fn prompt_encode(&self, tok: &TokenEmbeddings) -> Result<PromptEmbedding> {
        if tok.dim() != self.prompt.dim() {
            return Err(Error::ShapeMismatch {
                kind: "prompt-encode",
                lhs: tok.values.shape().to_vec(),
                rhs: vec![self.prompt.dim()],
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(tok.values.clone());
        let (_, v) = bound.forward(&mut tape, x)?;
        PromptEmbedding::new(tape.value(v).data().to_vec())
    }

    pub fn conditioning_sequence(&self, tok: &TokenEmbeddings) -> Result<Tensor> {
        self.prompt.conditioning_sequence(tok)
    }
}
