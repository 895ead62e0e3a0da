//! Optimize, sample, evaluate and sweep, shared by the commands and tests.

use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{GradcheckConfig, NoiseMode, RunConfig, SweepKey};
use crate::adengine::{finite_difference_check, Tape, Tensor};
use crate::encoder::{EncoderConfig, TextEncoder};
use crate::metrics::{
    alignment_score, euclidean, frechet_distance, mean_pairwise_similarity, precision_recall, vendi_score,
    AlignmentMap, FeatureSet, MetricsReport,
};
use crate::rng::{tags, Stream, LANE_SHIFT};
use crate::sampler::{latent_noise, sample_bundle, Provenance, ToyDenoiser, Trajectory};
use crate::scheduler::ScheduleConfig;
use crate::tpso::{optimize, record_objective, OffsetSet, TpsoConfig, VariantBundle};
use crate::{Error, Result};

pub const TOOL: &str = "tpso";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Extra room beyond `sigma` when counting a variant as inside the band.
pub const BAND_SLACK: f64 = 0.005;

/// Runs `f` over `items` on `workers` threads (0 = all cores). Output order
/// follows input order regardless of scheduling.
pub fn run_parallel<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the two middle values averaged for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mean Euclidean distance over unordered pairs of rows.
pub fn mean_pairwise_distance(rows: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            total += euclidean(&rows[i], &rows[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Noise lane of trajectory `which` for prompt `prompt`.
pub fn noise_lane(mode: NoiseMode, prompt: usize, which: Provenance) -> u64 {
    let base = prompt as u64 * 1024;
    match (mode, which) {
        (NoiseMode::Shared, _) | (NoiseMode::Distinct, Provenance::Base) => base,
        (NoiseMode::Distinct, Provenance::Variant(k)) => base + 1 + k as u64,
    }
}

/// Fixed models built once from a config.
pub struct Pipeline {
    pub config: RunConfig,
    pub encoder: TextEncoder,
    pub denoiser: ToyDenoiser,
    pub alignment: AlignmentMap,
}

/// Trajectories for one prompt: the base and one per variant.
#[derive(Clone, Debug)]
pub struct PromptSamples {
    pub base: Trajectory,
    pub variants: Vec<Trajectory>,
}

impl PromptSamples {
    pub fn variant_terminals(&self) -> Vec<Vec<f64>> {
        self.variants.iter().map(|t| t.terminal().to_vec()).collect()
    }
}

impl Pipeline {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let encoder = TextEncoder::from_config(&config.encoder)?;
        let denoiser = ToyDenoiser::new(&config.denoiser, config.encoder.dim)?;
        let alignment = AlignmentMap::seeded(
            config.metrics.alignment_seed,
            config.denoiser.latent_dim,
            config.encoder.proj_dim,
        )?;
        Ok(Self {
            config: config.clone(),
            encoder,
            denoiser,
            alignment,
        })
    }

    pub fn optimize_prompt(&self, prompt: usize, tpso: &TpsoConfig) -> Result<VariantBundle> {
        let ids = self
            .config
            .prompts
            .get(prompt)
            .ok_or_else(|| Error::Invalid(format!("no prompt {prompt}")))?;
        let bundle = optimize(&self.encoder, ids, tpso)?;
        info!(
            "prompt {prompt}: {} updates, converged={}, semantic {:.3e}",
            bundle.iterations, bundle.converged, bundle.semantic_loss
        );
        Ok(bundle)
    }

    pub fn sample_prompt(
        &self,
        prompt: usize,
        bundle: &VariantBundle,
        schedule: &ScheduleConfig,
        noise_seed: u64,
    ) -> Result<PromptSamples> {
        let dim = self.config.denoiser.latent_dim;
        let mode = self.config.noise.mode;
        let guide = &self.config.guidance;
        let run = |which: Provenance| {
            let noise = latent_noise(noise_seed, noise_lane(mode, prompt, which), dim);
            sample_bundle(&self.denoiser, &noise, bundle, which, schedule, guide)
        };
        let base = run(Provenance::Base)?;
        let variants = (0..bundle.variants())
            .map(|k| run(Provenance::Variant(k)))
            .collect::<Result<_>>()?;
        Ok(PromptSamples { base, variants })
    }

    pub fn alignment(&self, bundle: &VariantBundle, feature: &[f64]) -> Result<f64> {
        alignment_score(&bundle.base_embedding, feature, &self.alignment)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSummary {
    pub prompt: usize,
    pub token_ids: Vec<usize>,
    pub cosines: Vec<f64>,
    pub semantic_loss: f64,
    pub diversity_loss: f64,
    pub joint_loss: f64,
    pub band_rate: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PromptSummary {
    pub fn new(prompt: usize, bundle: &VariantBundle, tpso: &TpsoConfig) -> Self {
        Self {
            prompt,
            token_ids: bundle.token_ids.clone(),
            cosines: bundle.cosines.clone(),
            semantic_loss: bundle.semantic_loss,
            diversity_loss: bundle.diversity_loss,
            joint_loss: bundle.joint_loss,
            band_rate: bundle.band_rate(tpso.kappa, tpso.sigma + BAND_SLACK),
            iterations: bundle.iterations,
            converged: bundle.converged,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub prompts: Vec<PromptSummary>,
}

/// Optimizes every prompt of the config.
pub fn run_optimize(p: &Pipeline) -> Result<(Vec<VariantBundle>, OptimizeReport)> {
    p.config.require_prompts()?;
    let idx: Vec<usize> = (0..p.config.prompts.len()).collect();
    let bundles = run_parallel(p.config.workers, &idx, |&i| p.optimize_prompt(i, &p.config.tpso))?;
    let prompts = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| PromptSummary::new(i, b, &p.config.tpso))
        .collect();
    let report = OptimizeReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: p.config.clone(),
        prompts,
    };
    Ok((bundles, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSummary {
    pub prompt: usize,
    pub base_terminal: Vec<f64>,
    pub variant_terminals: Vec<Vec<f64>>,
    /// Mean distance over pairs of variant terminals.
    pub terminal_distance: f64,
    /// Mean distance from each variant terminal to the base terminal.
    pub divergence_from_base: f64,
    pub base_alignment: f64,
    pub variant_alignment: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub prompts: Vec<SampleSummary>,
}

pub fn summarize_samples(p: &Pipeline, prompt: usize, bundle: &VariantBundle, s: &PromptSamples) -> Result<SampleSummary> {
    let base_terminal = s.base.terminal().to_vec();
    let variant_terminals = s.variant_terminals();
    let divergence =
        variant_terminals.iter().map(|v| euclidean(v, &base_terminal)).sum::<f64>() / variant_terminals.len().max(1) as f64;
    Ok(SampleSummary {
        prompt,
        terminal_distance: mean_pairwise_distance(&variant_terminals),
        divergence_from_base: divergence,
        base_alignment: p.alignment(bundle, &base_terminal)?,
        variant_alignment: variant_terminals
            .iter()
            .map(|v| p.alignment(bundle, v))
            .collect::<Result<_>>()?,
        base_terminal,
        variant_terminals,
    })
}

/// Samples every bundle with the configured schedule and noise.
pub fn run_sample(p: &Pipeline, bundles: &[VariantBundle]) -> Result<SampleReport> {
    let idx: Vec<usize> = (0..bundles.len()).collect();
    let prompts = run_parallel(p.config.workers, &idx, |&i| {
        let s = p.sample_prompt(i, &bundles[i], &p.config.schedule, p.config.noise.seed)?;
        summarize_samples(p, i, &bundles[i], &s)
    })?;
    Ok(SampleReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: p.config.clone(),
        prompts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupMetrics {
    pub label: String,
    pub samples: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub tool: String,
    pub version: String,
    pub reference: String,
    pub k: usize,
    pub groups: Vec<GroupMetrics>,
}

/// Within-group diversity for every set, plus Fréchet distance and
/// precision/recall of each set against `reference`. Quantities whose size
/// requirements a set does not meet are left empty.
pub fn evaluate_sets(sets: &[FeatureSet], reference: &FeatureSet, k: usize) -> Result<EvalReport> {
    let mut groups = Vec::with_capacity(sets.len());
    for fs in sets {
        if fs.dim() != reference.dim() {
            return Err(Error::ShapeMismatch {
                kind: "eval feature dimension",
                lhs: vec![fs.dim()],
                rhs: vec![reference.dim()],
            });
        }
        let mut m = MetricsReport {
            vendi: Some(vendi_score(fs)?),
            ..Default::default()
        };
        if fs.len() >= 2 {
            m.mss = Some(mean_pairwise_similarity(fs)?);
        }
        if fs.len() >= 2 && reference.len() >= 2 {
            m.frechet = Some(frechet_distance(reference, fs)?);
        }
        if fs.len() > k && reference.len() > k {
            let (precision, recall) = precision_recall(reference, fs, k)?;
            m.precision = Some(precision);
            m.recall = Some(recall);
            m.k = Some(k);
        }
        groups.push(GroupMetrics {
            label: fs.label.clone().unwrap_or_default(),
            samples: fs.len(),
            metrics: m,
        });
    }
    Ok(EvalReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        reference: reference.label.clone().unwrap_or_default(),
        k,
        groups,
    })
}

/// Per-seed measurements of one prompt under one sweep value.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    mss: f64,
    vendi: f64,
    alignment: f64,
    band_rate: f64,
    diversity_loss: f64,
    variant_cosine: f64,
    terminal_distance: f64,
    converged: f64,
}

/// Medians over seeds of prompt-averaged measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub value: f64,
    /// Mean pairwise cosine of variant terminal features.
    pub mss: f64,
    pub vendi: f64,
    pub alignment: f64,
    pub band_rate: f64,
    pub diversity_loss: f64,
    /// Mean pairwise cosine of variant prompt embeddings.
    pub variant_cosine: f64,
    /// Mean pairwise distance of variant terminal features.
    pub terminal_distance: f64,
    pub converged_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationReport {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub sweep: SweepKey,
    pub rows: Vec<AblationRow>,
}

pub fn apply_sweep(base: &RunConfig, key: SweepKey, value: f64) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match key {
        SweepKey::Kappa => cfg.tpso.kappa = value,
        SweepKey::Lambda => cfg.tpso.lambda = value,
        SweepKey::R => cfg.schedule.ratio = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ablation_cell(p: &Pipeline, cfg: &RunConfig, seed: u64, prompt: usize) -> Result<Cell> {
    let tpso = TpsoConfig { seed, ..cfg.tpso.clone() };
    let bundle = p.optimize_prompt(prompt, &tpso)?;
    let s = p.sample_prompt(prompt, &bundle, &cfg.schedule, seed)?;
    let terminals = FeatureSet::from_rows(&s.variant_terminals())?;
    let alignments = terminals.rows().map(|f| p.alignment(&bundle, f)).collect::<Result<Vec<_>>>()?;
    Ok(Cell {
        mss: mean_pairwise_similarity(&terminals)?,
        vendi: vendi_score(&terminals)?,
        alignment: mean(&alignments),
        band_rate: bundle.band_rate(tpso.kappa, tpso.sigma + BAND_SLACK),
        diversity_loss: bundle.diversity_loss,
        variant_cosine: bundle.mean_pairwise_cosine()?,
        terminal_distance: mean_pairwise_distance(&s.variant_terminals()),
        converged: if bundle.converged { 1.0 } else { 0.0 },
    })
}

/// Runs optimize, sample and evaluation for every (value, seed, prompt)
/// and reduces to one row per value.
pub fn run_ablation(base: &RunConfig, key: SweepKey, values: &[f64]) -> Result<AblationReport> {
    base.require_prompts()?;
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one sweep value".into()));
    }
    if base.tpso.variants < 2 {
        return Err(Error::Config("ablation needs tpso.variants >= 2".into()));
    }
    let configs = values
        .iter()
        .map(|&v| apply_sweep(base, key, v))
        .collect::<Result<Vec<_>>>()?;
    // the sweep never touches the encoder or denoiser, so one pipeline serves all
    let p = Pipeline::new(base)?;
    let seeds = &base.ablation.seeds;
    let jobs: Vec<(usize, usize, usize)> = (0..values.len())
        .flat_map(|v| (0..seeds.len()).flat_map(move |s| (0..base.prompts.len()).map(move |q| (v, s, q))))
        .collect();
    let cells = run_parallel(base.workers, &jobs, |&(v, s, q)| ablation_cell(&p, &configs[v], seeds[s], q))?;

    let mut grouped: BTreeMap<(usize, usize), Vec<Cell>> = BTreeMap::new();
    for (&(v, s, _), cell) in jobs.iter().zip(cells) {
        grouped.entry((v, s)).or_default().push(cell);
    }
    let rows = values
        .iter()
        .enumerate()
        .map(|(v, &value)| {
            let per_seed: Vec<&Vec<Cell>> = (0..seeds.len()).map(|s| &grouped[&(v, s)]).collect();
            let stat = |f: fn(&Cell) -> f64| {
                let seed_means: Vec<f64> = per_seed
                    .iter()
                    .map(|cells| mean(&cells.iter().map(f).collect::<Vec<_>>()))
                    .collect();
                median(&seed_means)
            };
            AblationRow {
                value,
                mss: stat(|c| c.mss),
                vendi: stat(|c| c.vendi),
                alignment: stat(|c| c.alignment),
                band_rate: stat(|c| c.band_rate),
                diversity_loss: stat(|c| c.diversity_loss),
                variant_cosine: stat(|c| c.variant_cosine),
                terminal_distance: stat(|c| c.terminal_distance),
                converged_rate: stat(|c| c.converged),
            }
        })
        .collect();
    let mut config = base.clone();
    config.ablation.sweep = Some(key);
    config.ablation.values = values.to_vec();
    Ok(AblationReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        config,
        sweep: key,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckInstance {
    pub index: usize,
    pub dim: usize,
    pub variants: usize,
    pub max_relative_error: f64,
    pub compared: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckReport {
    pub tool: String,
    pub version: String,
    pub tolerance: f64,
    pub step: f64,
    pub max_relative_error: f64,
    pub passed: bool,
    pub instances: Vec<GradcheckInstance>,
}

/// `(dim, variants)` of gradcheck instance `i`.
pub fn gradcheck_size(g: &GradcheckConfig, i: usize) -> (usize, usize) {
    let nd = g.dims.len();
    (g.dims[i % nd], g.variants[(i / nd) % g.variants.len()])
}

/// Finite-difference check of the joint loss at random offsets for every
/// configured instance. `fault` scales the cosine adjoint, as a negative
/// control.
pub fn run_gradcheck(cfg: &RunConfig, fault: Option<f64>) -> Result<GradcheckReport> {
    cfg.validate()?;
    let g = &cfg.gradcheck;
    let mut encoders = BTreeMap::new();
    for &d in &g.dims {
        if !encoders.contains_key(&d) {
            let ec = EncoderConfig {
                dim: d,
                proj_dim: d,
                ..cfg.encoder.clone()
            };
            encoders.insert(d, TextEncoder::from_config(&ec)?);
        }
    }
    let idx: Vec<usize> = (0..g.instances).collect();
    let instances = run_parallel(cfg.workers, &idx, |&i| {
        let (dim, variants) = gradcheck_size(g, i);
        let enc = &encoders[&dim];
        let mut s = Stream::new(g.seed, tags::GRADCHECK + ((i as u64) << LANE_SHIFT));
        let vocab = cfg.encoder.vocab_size as u64;
        let ids: Vec<usize> = (0..g.tokens).map(|_| (s.next_u64() % vocab) as usize).collect();
        let offsets = (0..variants)
            .map(|_| Tensor::matrix(g.tokens, dim, s.normals(g.tokens * dim, g.offset_std)))
            .collect::<Result<_>>()?;
        let offsets = OffsetSet { offsets, seed: g.seed };
        let tok = enc.encode_tokens(&ids)?;
        let base = enc.prompt_encode(&tok)?;
        let tpso = TpsoConfig {
            variants,
            lambda: g.lambda,
            ..cfg.tpso.clone()
        };
        let mut tape = Tape::new();
        if let Some(f) = fault {
            tape.inject_cosine_adjoint_fault(f);
        }
        let nodes = record_objective(&mut tape, enc, &tok, &base, &offsets, &tpso)?;
        let check = finite_difference_check(&tape, nodes.joint, g.step)?;
        Ok(GradcheckInstance {
            index: i,
            dim,
            variants,
            max_relative_error: check.max_relative_error,
            compared: check.compared,
            skipped: check.skipped,
        })
    })?;
    let max_relative_error = instances.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tool: TOOL.into(),
        version: VERSION.into(),
        tolerance: g.tolerance,
        step: g.step,
        max_relative_error,
        passed: max_relative_error <= g.tolerance,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
    }

    #[test]
    fn pairwise_distance() {
        let rows = vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]];
        assert!((mean_pairwise_distance(&rows) - 10.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_pairwise_distance(&rows[..1]), 0.0);
    }

    #[test]
    fn lanes() {
        assert_eq!(noise_lane(NoiseMode::Shared, 2, Provenance::Variant(3)), 2048);
        assert_eq!(noise_lane(NoiseMode::Distinct, 2, Provenance::Base), 2048);
        assert_eq!(noise_lane(NoiseMode::Distinct, 2, Provenance::Variant(3)), 2052);
    }

    #[test]
    fn gradcheck_sizes_cover_the_grid() {
        let g = GradcheckConfig::default();
        let sizes: std::collections::BTreeSet<_> = (0..9).map(|i| gradcheck_size(&g, i)).collect();
        assert_eq!(sizes.len(), 9);
    }

    #[test]
    fn unknown_sweep_key() {
        assert!(SweepKey::parse("sigma").is_err());
        assert_eq!(SweepKey::parse("r").unwrap(), SweepKey::R);
    }
}
