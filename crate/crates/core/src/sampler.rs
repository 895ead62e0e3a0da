//! Toy guided diffusion harness.
//!
//! The denoiser predicts `scale * tanh(A x) + B c` where `c` is the
//! mean-pooled conditioning sequence (the null conditioning is the zero
//! vector). `A` is symmetric negative definite with unit spectral norm, so
//! the update `x <- x - eta * prediction` pushes latents away from the
//! origin: small differences introduced early in sampling are amplified by
//! later steps, while late differences have little room to grow.

use serde::{Deserialize, Serialize};

use crate::adengine::Tensor;
use crate::linalg;
use crate::rng::{tags, Stream, LANE_SHIFT};
use crate::scheduler::{self, ScheduleConfig};
use crate::tpso::VariantBundle;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    /// Multiplier on the `tanh(A x)` term.
    pub scale: f64,
    /// `false` drops the `tanh`, giving a linear denoiser.
    pub mixing: bool,
    pub seed_a: u64,
    pub seed_b: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            scale: 4.0,
            mixing: true,
            seed_a: 11,
            seed_b: 12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyDenoiser {
    a: Tensor,
    b: Tensor,
    scale: f64,
    mixing: bool,
}

impl ToyDenoiser {
    pub fn new(cfg: &DenoiserConfig, cond_dim: usize) -> Result<Self> {
        let q = cfg.latent_dim;
        if q == 0 || cond_dim == 0 {
            return Err(Error::Config("denoiser dimensions must be positive".into()));
        }
        if !cfg.scale.is_finite() {
            return Err(Error::Config("denoiser.scale must be finite".into()));
        }
        // A = -(G G^T / q + I), rescaled to unit spectral norm
        let g = Tensor::matrix(q, q, Stream::new(cfg.seed_a, tags::DENOISER_A).normals(q * q, 1.0))?;
        let mut a = g.matmul(&g.transpose()?)?.map(|v| -v / q as f64);
        for i in 0..q {
            a.data_mut()[i * q + i] -= 1.0;
        }
        let na = linalg::spectral_norm(&a)?;
        let a = a.map(|v| v / na);

        let b = Tensor::matrix(
            q,
            cond_dim,
            Stream::new(cfg.seed_b, tags::DENOISER_B).normals(q * cond_dim, 1.0),
        )?;
        let nb = linalg::spectral_norm(&b)?;
        let b = b.map(|v| v / nb);
        Ok(Self {
            a,
            b,
            scale: cfg.scale,
            mixing: cfg.mixing,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn cond_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    /// Same denoiser with `A` replaced, keeping `B`.
    pub fn with_a(&self, a: Tensor) -> Result<Self> {
        if a.shape() != self.a.shape() {
            return Err(Error::ShapeMismatch {
                kind: "denoiser",
                lhs: self.a.shape().to_vec(),
                rhs: a.shape().to_vec(),
            });
        }
        Ok(Self { a, ..self.clone() })
    }

    fn check_latent(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                kind: "denoiser latent",
                lhs: vec![x.len()],
                rhs: vec![self.latent_dim()],
            });
        }
        Ok(())
    }

    fn check_cond(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.cond_dim() {
            return Err(Error::ShapeMismatch {
                kind: "denoiser conditioning",
                lhs: vec![c.len()],
                rhs: vec![self.cond_dim()],
            });
        }
        Ok(())
    }

    fn content(&self, x: &[f64]) -> Vec<f64> {
        let q = self.latent_dim();
        (0..q)
            .map(|i| {
                let ax: f64 = self.a.row(i).iter().zip(x).map(|(a, v)| a * v).sum();
                self.scale * if self.mixing { ax.tanh() } else { ax }
            })
            .collect()
    }

    /// Denoiser output for latent `x` and pooled conditioning `c`.
    pub fn predict(&self, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(x)?;
        self.check_cond(c)?;
        let mut out = self.content(x);
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.b.row(i).iter().zip(c).map(|(b, v)| b * v).sum::<f64>();
        }
        Ok(out)
    }

    pub fn predict_unconditional(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x, &vec![0.0; self.cond_dim()])
    }

    /// `eps_null + omega * (eps_c - eps_null)`; the endpoints `omega = 0`
    /// and `omega = 1` return the corresponding prediction exactly.
    pub fn guided_prediction(&self, x: &[f64], c: &[f64], omega: f64) -> Result<Vec<f64>> {
        if !(omega >= 0.0) {
            return Err(Error::Invalid(format!("guidance strength {omega} must be non-negative")));
        }
        let uncond = self.predict_unconditional(x)?;
        if omega == 0.0 {
            self.check_cond(c)?;
            return Ok(uncond);
        }
        let cond = self.predict(x, c)?;
        if omega == 1.0 {
            return Ok(cond);
        }
        Ok(combine_guidance(&uncond, &cond, omega))
    }

    /// `eps(x, c) - eps(x, null)`.
    pub fn guidance_direction(&self, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let cond = self.predict(x, c)?;
        let uncond = self.predict_unconditional(x)?;
        Ok(cond.iter().zip(&uncond).map(|(a, b)| a - b).collect())
    }
}

/// Guidance arithmetic on precomputed predictions.
pub fn combine_guidance(uncond: &[f64], cond: &[f64], omega: f64) -> Vec<f64> {
    uncond.iter().zip(cond).map(|(u, c)| u + omega * (c - u)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub omega: f64,
    pub steps: usize,
    /// Constant step size; `None` means `1 / steps`.
    pub step_size: Option<f64>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            omega: 7.5,
            steps: 50,
            step_size: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("guidance.steps must be at least 1".into()));
        }
        if !(self.omega >= 0.0) || !self.omega.is_finite() {
            return Err(Error::Config("guidance.omega must be non-negative".into()));
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::Config("guidance.step_size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.step_size.unwrap_or(1.0 / self.steps as f64)
    }
}

/// Timestep for step index `s` of `steps`: `round(T (1 - s/S))`, at least 1.
pub fn step_timestep(s: usize, steps: usize, total: u32) -> u32 {
    let t = (total as f64 * (1.0 - s as f64 / steps as f64)).round();
    (t as u32).clamp(1, total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Base,
    Variant(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `steps + 1` latents, starting from the initial noise.
    pub states: Vec<Vec<f64>>,
    /// Timestep used for each of the `steps` updates.
    pub timesteps: Vec<u32>,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Standard normal latent for `(seed, lane)`.
pub fn latent_noise(seed: u64, lane: u64, dim: usize) -> Vec<f64> {
    Stream::new(seed, tags::NOISE + (lane << LANE_SHIFT)).normals(dim, 1.0)
}

fn mean_rows(t: &Tensor) -> Vec<f64> {
    let n = t.rows() as f64;
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Deterministic guided sampling. With `variant = None` the base
/// conditioning is used at every step.
pub fn sample(
    denoiser: &ToyDenoiser,
    noise: &[f64],
    base: &Tensor,
    variant: Option<&Tensor>,
    schedule: &ScheduleConfig,
    guide: &GuidanceConfig,
    provenance: Provenance,
) -> Result<Trajectory> {
    schedule.validate()?;
    guide.validate()?;
    denoiser.check_latent(noise)?;
    if base.rank() != 2 {
        return Err(Error::ShapeMismatch {
            kind: "sample conditioning",
            lhs: base.shape().to_vec(),
            rhs: vec![denoiser.cond_dim()],
        });
    }
    denoiser.check_cond(base.row(0))?;
    let eta = guide.eta();
    let mut x = noise.to_vec();
    let mut states = Vec::with_capacity(guide.steps + 1);
    let mut timesteps = Vec::with_capacity(guide.steps);
    states.push(x.clone());
    for s in 0..guide.steps {
        let t = step_timestep(s, guide.steps, schedule.timesteps);
        let cond = match variant {
            Some(v) => scheduler::blend(base, v, t, schedule)?,
            None => base.clone(),
        };
        let c = mean_rows(&cond);
        let pred = denoiser.guided_prediction(&x, &c, guide.omega)?;
        for (xi, p) in x.iter_mut().zip(&pred) {
            *xi -= eta * p;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: s,
                what: "latent state".into(),
            });
        }
        timesteps.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory {
        states,
        timesteps,
        provenance,
    })
}

/// Samples the base trajectory or variant `k` of a bundle.
pub fn sample_bundle(
    denoiser: &ToyDenoiser,
    noise: &[f64],
    bundle: &VariantBundle,
    which: Provenance,
    schedule: &ScheduleConfig,
    guide: &GuidanceConfig,
) -> Result<Trajectory> {
    let base = bundle.base_conditioning()?;
    match which {
        Provenance::Base => sample(denoiser, noise, &base, None, schedule, guide, which),
        Provenance::Variant(k) => {
            let v = bundle.variant_conditioning(k)?;
            sample(denoiser, noise, &base, Some(&v), schedule, guide, which)
        }
    }
}
