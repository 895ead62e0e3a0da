use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::metrics::DEFAULT_K;
use crate::sampler::{DenoiserConfig, GuidanceConfig};
use crate::scheduler::ScheduleConfig;
use crate::tpso::TpsoConfig;
use crate::{Error, Result};

/// How latent noise is shared between the trajectories of one prompt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Base and every variant start from the same latent.
    #[default]
    Shared,
    /// Each trajectory draws its own latent.
    Distinct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub seed: u64,
    pub mode: NoiseMode,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            mode: NoiseMode::Shared,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Neighbor count for precision and recall.
    pub k: usize,
    /// Seed of the feature-to-prompt map used for alignment scores.
    pub alignment_seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            alignment_seed: 13,
        }
    }
}

/// Parameter swept by `ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepKey {
    Kappa,
    Lambda,
    R,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Kappa => "kappa",
            SweepKey::Lambda => "lambda",
            SweepKey::R => "r",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepKey::Kappa),
            "lambda" => Ok(SweepKey::Lambda),
            "r" => Ok(SweepKey::R),
            other => Err(Error::Config(format!("unknown sweep key {other:?} (expected kappa, lambda or r)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub sweep: Option<SweepKey>,
    pub values: Vec<f64>,
    /// Each seed sets both the offset initialization and the noise seed.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            sweep: None,
            values: Vec::new(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Embedding widths cycled through by instance index.
    pub dims: Vec<usize>,
    /// Variant counts cycled through after each full pass over `dims`.
    pub variants: Vec<usize>,
    pub instances: usize,
    pub tokens: usize,
    /// Standard deviation of the random offsets.
    pub offset_std: f64,
    /// Diversity weight used for the checked loss.
    pub lambda: f64,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            dims: vec![8, 16, 32],
            variants: vec![2, 4, 8],
            instances: 100,
            tokens: 3,
            offset_std: 0.3,
            lambda: 1.0,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Everything a run needs. Every field has a default, and unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub tpso: TpsoConfig,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub denoiser: DenoiserConfig,
    /// Token-id lists, one per prompt.
    pub prompts: Vec<Vec<usize>>,
    pub noise: NoiseConfig,
    pub metrics: MetricsConfig,
    pub ablation: AblationConfig,
    pub gradcheck: GradcheckConfig,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks every section. Prompt presence is checked separately since
    /// `gradcheck` and `eval` do not need prompts.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.tpso.validate()?;
        self.schedule.validate()?;
        self.guidance.validate()?;
        if self.denoiser.latent_dim == 0 {
            return Err(Error::Config("denoiser.latent_dim must be at least 1".into()));
        }
        if !(self.denoiser.scale > 0.0) || !self.denoiser.scale.is_finite() {
            return Err(Error::Config("denoiser.scale must be positive".into()));
        }
        if self.metrics.k == 0 {
            return Err(Error::Config("metrics.k must be at least 1".into()));
        }
        for (i, p) in self.prompts.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Config(format!("prompts[{i}] is empty")));
            }
            if let Some(&id) = p.iter().find(|&&id| id >= self.encoder.vocab_size) {
                return Err(Error::Config(format!(
                    "prompts[{i}] token {id} outside vocabulary of {}",
                    self.encoder.vocab_size
                )));
            }
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        let g = &self.gradcheck;
        if g.dims.is_empty() || g.variants.is_empty() {
            return Err(Error::Config("gradcheck.dims and gradcheck.variants must not be empty".into()));
        }
        if let Some(d) = g.dims.iter().find(|&&d| d == 0 || d % self.encoder.heads != 0) {
            return Err(Error::Config(format!(
                "gradcheck.dims entry {d} must be a positive multiple of encoder.heads ({})",
                self.encoder.heads
            )));
        }
        if g.variants.contains(&0) || g.tokens == 0 {
            return Err(Error::Config("gradcheck.variants and gradcheck.tokens must be positive".into()));
        }
        if !(g.step > 0.0 && g.step <= 1e-2) {
            return Err(Error::Config(format!("gradcheck.step must lie in (0, 1e-2], got {}", g.step)));
        }
        if !(g.tolerance > 0.0) || !(g.offset_std >= 0.0) || !(g.lambda >= 0.0) {
            return Err(Error::Config(
                "gradcheck.tolerance must be positive; offset_std and lambda non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn require_prompts(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::Config("no prompts".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = RunConfig::from_json(r#"{"tpso": {"lamda": 1.0}}"#).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("lamda")), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig {
            prompts: vec![vec![1, 2, 3]],
            ablation: AblationConfig {
                sweep: Some(SweepKey::R),
                values: vec![0.4, -0.4],
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn out_of_vocabulary_prompt_rejected() {
        let err = RunConfig::from_json(r#"{"prompts": [[1, 1000]]}"#).unwrap_err();
        assert!(err.to_string().contains("prompts[0]"));
        assert!(RunConfig::default().require_prompts().is_err());
    }
}
