use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the `1e-4` in the offset initializer is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScale {
    /// Offsets have variance `1e-4` (standard deviation `1e-2`).
    Variance,
    /// Offsets have standard deviation `1e-4`.
    StdDev,
}

impl InitScale {
    pub fn std(self) -> f64 {
        match self {
            InitScale::Variance => 1e-2,
            InitScale::StdDev => 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpsoConfig {
    /// Target cosine between each variant and the base prompt embedding.
    pub kappa: f64,
    /// Half-width of the tolerance band around `kappa`.
    pub sigma: f64,
    /// Weight of the pairwise diversity term. Defaults to 0.
    pub lambda: f64,
    /// Number of variants.
    pub variants: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_iters: usize,
    /// Semantic loss at or below this counts as converged.
    pub tol_semantic: f64,
    /// Consecutive converged iterations required to stop.
    pub patience: usize,
    pub init_scale: InitScale,
    pub seed: u64,
}

impl Default for TpsoConfig {
    fn default() -> Self {
        Self {
            kappa: 0.80,
            sigma: 0.01,
            lambda: 0.0,
            variants: 4,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_iters: 2000,
            tol_semantic: 1e-3,
            patience: 10,
            init_scale: InitScale::Variance,
            seed: 0,
        }
    }
}

impl TpsoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("tpso.{m}")));
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return fail(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if !(self.sigma >= 0.0) || self.kappa + self.sigma >= 1.0 {
            return fail(format!(
                "sigma must be non-negative with kappa + sigma < 1, got {}",
                self.sigma
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.variants == 0 {
            return fail("variants must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive".into());
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if !(self.tol_semantic >= 0.0) {
            return fail("tol_semantic must be non-negative".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        Ok(())
    }
}
