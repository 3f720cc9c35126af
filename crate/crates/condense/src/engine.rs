//! The condensation loop: alternating synthetic-pixel and network updates
//! across freshly initialized networks.
//!
//! One run walks `outer_iters` network initializations. Under each, it
//! alternates `inner_loops` times between a per-class synthetic update
//! (gradient matching against a real minibatch of the same class, under a
//! transform drawn once per class visit and shared by both branches when
//! the mode is siamese) and a network update trained on the augmented
//! synthetic set. Both optimizers are stochastic gradient descent with
//! momentum; the synthetic momentum buffer lives for the whole run while
//! the network buffer resets with each fresh initialization.

use crate::augment::{self, AugDistribution, AugError, AugParam};
use crate::batch::ImageBatch;
use crate::data::{DataError, Dataset};
use crate::matching::{
    grad_set_for_batch, syn_matching_step, AugPlan, GradSet, MatchError, MatchOptions,
};
use crate::seeds::{self, tag};
use crate::synthetic::{LossTrace, SyntheticSet};
use crate::zoo::{ArchSpec, ForwardOpts, Network, ZooError};
use autodiff::{nn, AdError, Graph, Shape, Tensor};
use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error("matching loss diverged at outer iteration {outer_iter}: {loss}")]
    Divergence { outer_iter: usize, loss: f32, trace: LossTrace },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// How one branch of the matching pair is augmented.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugMode {
    /// No augmentation.
    Off,
    /// A fresh transform per image, drawn independently on each branch.
    Independent,
    /// One transform per class visit, shared by the real and synthetic
    /// branches.
    Siamese,
}

impl fmt::Display for AugMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugMode::Off => "off",
            AugMode::Independent => "independent",
            AugMode::Siamese => "siamese",
        })
    }
}

impl FromStr for AugMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(AugMode::Off),
            "independent" => Ok(AugMode::Independent),
            "siamese" => Ok(AugMode::Siamese),
            other => Err(format!("unknown augmentation mode '{other}'")),
        }
    }
}

/// Where the synthetic pixels start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Random real images of the right class.
    Real,
    /// Standard normal noise.
    Noise,
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMode::Real => "real",
            InitMode::Noise => "noise",
        })
    }
}

impl FromStr for InitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(InitMode::Real),
            "noise" => Ok(InitMode::Noise),
            other => Err(format!("unknown init mode '{other}'")),
        }
    }
}

/// Ablation schemes over where augmentation is applied. Letters cover the
/// study grid; `Ours` is the full siamese policy with augmented evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    A,
    B,
    C,
    D,
    E,
    F,
    Ours,
}

impl Scheme {
    pub const ALL: [Scheme; 7] =
        [Scheme::A, Scheme::B, Scheme::C, Scheme::D, Scheme::E, Scheme::F, Scheme::Ours];

    /// Augmentation placement for this scheme: real branch mode, synthetic
    /// branch mode, and whether evaluation training augments.
    pub fn modes(self) -> (AugMode, AugMode, bool) {
        match self {
            Scheme::A => (AugMode::Off, AugMode::Off, false),
            Scheme::B => (AugMode::Off, AugMode::Off, true),
            Scheme::C => (AugMode::Independent, AugMode::Off, true),
            Scheme::D => (AugMode::Off, AugMode::Independent, true),
            Scheme::E => (AugMode::Siamese, AugMode::Siamese, false),
            Scheme::F => (AugMode::Independent, AugMode::Independent, true),
            Scheme::Ours => (AugMode::Siamese, AugMode::Siamese, true),
        }
    }

    /// Whether evaluation training augments under this scheme.
    pub fn eval_aug(self) -> bool {
        self.modes().2
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::A => "a",
            Scheme::B => "b",
            Scheme::C => "c",
            Scheme::D => "d",
            Scheme::E => "e",
            Scheme::F => "f",
            Scheme::Ours => "ours",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "a" => Ok(Scheme::A),
            "b" => Ok(Scheme::B),
            "c" => Ok(Scheme::C),
            "d" => Ok(Scheme::D),
            "e" => Ok(Scheme::E),
            "f" => Ok(Scheme::F),
            "ours" => Ok(Scheme::Ours),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

/// Full configuration of one condensation run.
#[derive(Clone, Debug)]
pub struct CondenseConfig {
    pub arch: ArchSpec,
    pub ipc: usize,
    /// Number of network initializations walked (K).
    pub outer_iters: usize,
    /// Alternations per initialization (T).
    pub inner_loops: usize,
    /// Synthetic descent steps per class visit.
    pub syn_steps: usize,
    /// Network descent steps per alternation.
    pub net_steps: usize,
    pub lr_syn: f32,
    pub lr_net: f32,
    pub momentum_syn: f32,
    pub momentum_net: f32,
    /// Real minibatch size per class (capped by class population).
    pub batch_real: usize,
    /// Synthetic minibatch cap, for both matching and network updates.
    pub batch_syn: usize,
    pub init: InitMode,
    pub aug: AugDistribution,
    pub real_aug: AugMode,
    pub syn_aug: AugMode,
    /// Augment network-update batches with per-image draws.
    pub net_aug: bool,
    /// Transforms drawn per class visit; the loss sums one term per draw.
    pub omega_draws: usize,
    /// Resample the real minibatch before each synthetic step after the
    /// first, instead of only once per class visit.
    pub resample_real: bool,
    pub match_opts: MatchOptions,
    pub seed: u64,
    /// Abort when the matching loss exceeds this or stops being finite.
    pub divergence_limit: f32,
    /// Outer iterations at which gradient-magnitude diagnostics are taken.
    pub diagnostics_at: Vec<usize>,
}

impl CondenseConfig {
    /// Defaults for a dataset-scale run: 1000 initializations, single
    /// synthetic step, learning rates 0.1 (pixels) and 0.01 (network),
    /// batch 256, with the alternation schedule picked by `ipc`.
    pub fn new(arch: ArchSpec, ipc: usize) -> Self {
        let (inner_loops, net_steps) = schedule_for_ipc(ipc);
        Self {
            arch,
            ipc,
            outer_iters: 1000,
            inner_loops,
            syn_steps: 1,
            net_steps,
            lr_syn: 0.1,
            lr_net: 0.01,
            momentum_syn: 0.5,
            momentum_net: 0.5,
            batch_real: 256,
            batch_syn: 256,
            init: InitMode::Real,
            aug: AugDistribution::new(augment::AugStrategy::Combination),
            real_aug: AugMode::Siamese,
            syn_aug: AugMode::Siamese,
            net_aug: true,
            omega_draws: 1,
            resample_real: false,
            match_opts: MatchOptions::default(),
            seed: 0,
            divergence_limit: 1e6,
            diagnostics_at: Vec::new(),
        }
    }

    /// Applies an ablation scheme's augmentation placement to the
    /// condensation stage; evaluation augmentation is the caller's side.
    pub fn apply_scheme(&mut self, scheme: Scheme) {
        let (real, syn, _) = scheme.modes();
        self.real_aug = real;
        self.syn_aug = syn;
        self.net_aug = syn != AugMode::Off;
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::BadConfig(m));
        if self.ipc == 0 {
            return bad("ipc must be at least 1".into());
        }
        if self.inner_loops == 0 && self.outer_iters > 0 {
            return bad("inner_loops must be at least 1".into());
        }
        if self.syn_steps == 0 {
            return bad("syn_steps must be at least 1".into());
        }
        if self.batch_real == 0 || self.batch_syn == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.omega_draws == 0 {
            return bad("omega_draws must be at least 1".into());
        }
        if (self.real_aug == AugMode::Siamese) != (self.syn_aug == AugMode::Siamese) {
            return bad(format!(
                "siamese augmentation pairs the branches, so it must be set on both or neither; got real {} and synthetic {}",
                self.real_aug, self.syn_aug
            ));
        }
        if !(self.lr_syn.is_finite() && self.lr_net.is_finite()) {
            return bad("learning rates must be finite".into());
        }
        Ok(())
    }

    /// Deterministic key=value snapshot of the run configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("arch", self.arch.label());
        kv("ipc", self.ipc.to_string());
        kv("outer_iters", self.outer_iters.to_string());
        kv("inner_loops", self.inner_loops.to_string());
        kv("syn_steps", self.syn_steps.to_string());
        kv("net_steps", self.net_steps.to_string());
        kv("lr_syn", format!("{}", self.lr_syn));
        kv("lr_net", format!("{}", self.lr_net));
        kv("momentum_syn", format!("{}", self.momentum_syn));
        kv("momentum_net", format!("{}", self.momentum_net));
        kv("batch_real", self.batch_real.to_string());
        kv("batch_syn", self.batch_syn.to_string());
        kv("init", self.init.to_string());
        kv("strategy", self.aug.strategy.to_string());
        kv("exclude_flip", self.aug.exclude_flip.to_string());
        kv("real_aug", self.real_aug.to_string());
        kv("syn_aug", self.syn_aug.to_string());
        kv("net_aug", self.net_aug.to_string());
        kv("omega_draws", self.omega_draws.to_string());
        kv("resample_real", self.resample_real.to_string());
        kv("eps", format!("{}", self.match_opts.eps));
        kv("include_norm_affine", self.match_opts.include_norm_affine.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

/// Alternation schedule by images per class: more synthetic images warrant
/// more alternations and longer network training between them.
pub fn schedule_for_ipc(ipc: usize) -> (usize, usize) {
    match ipc {
        0..=1 => (1, 1),
        2..=49 => (10, 50),
        _ => (50, 10),
    }
}

/// Gradient-magnitude record taken at one outer iteration: the Euclidean
/// norm of every matched gradient row for the synthetic and real batches of
/// each class, concatenated over classes.
#[derive(Clone, Debug)]
pub struct DiagRecord {
    pub outer_iter: usize,
    pub syn_norms: Vec<f32>,
    pub real_norms: Vec<f32>,
}

impl DiagRecord {
    pub fn syn_median(&self) -> f32 {
        median(&self.syn_norms)
    }

    pub fn real_median(&self) -> f32 {
        median(&self.real_norms)
    }
}

/// Median of a slice; 0 when empty, mean of the middle pair when even.
pub fn median(values: &[f32]) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gradient-magnitude diagnostics across a run.
#[derive(Clone, Debug, Default)]
pub struct GradDiagnostics {
    pub records: Vec<DiagRecord>,
}

/// A finished condensation: the learned set (with its loss trace and config
/// snapshot) plus any diagnostics taken along the way.
#[derive(Clone, Debug)]
pub struct CondenseRun {
    pub set: SyntheticSet,
    pub diagnostics: GradDiagnostics,
}

/// Builds the starting synthetic set: `ipc` images per class, labels
/// assigned evenly, pixels from real samples or standard normal noise.
pub fn init_synthetic(
    dataset: &Dataset,
    ipc: usize,
    mode: InitMode,
    seed: u64,
) -> Result<SyntheticSet, EngineError> {
    if ipc == 0 {
        return Err(EngineError::BadConfig("ipc must be at least 1".into()));
    }
    let (c, h, w) = (dataset.train.channels(), dataset.train.height(), dataset.train.width());
    let len = c * h * w;
    let mut pixels = vec![0.0f32; dataset.classes * ipc * len];
    for class in 0..dataset.classes {
        let dst = &mut pixels[class * ipc * len..(class + 1) * ipc * len];
        match mode {
            InitMode::Real => {
                let pool = dataset.train.indices_of_class(class);
                if pool.len() < ipc {
                    return Err(EngineError::Data(DataError::NotEnoughImages {
                        class,
                        available: pool.len(),
                        requested: ipc,
                    }));
                }
                let mut rng = seeds::derive(seed, &[tag::INIT_SYNTHETIC, class as u64]);
                let picks = index_sample(&mut rng, pool.len(), ipc);
                let data = dataset.train.images().data();
                for (i, p) in picks.into_iter().enumerate() {
                    let src = pool[p] * len;
                    dst[i * len..(i + 1) * len].copy_from_slice(&data[src..src + len]);
                }
            }
            InitMode::Noise => {
                let mut rng = seeds::derive(seed, &[tag::NOISE, class as u64]);
                for v in dst.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
    }
    let images = Tensor::from_vec(Shape::d4(dataset.classes * ipc, c, h, w), pixels);
    Ok(SyntheticSet::new(images, dataset.classes, ipc, &dataset.name, dataset.norm.clone()))
}

/// Without-replacement minibatch cursor over each class of the training
/// split, reshuffling a class's pool whenever too few images remain for a
/// full batch.
struct ClassSampler {
    pools: Vec<Vec<usize>>,
    pos: Vec<usize>,
    epoch: Vec<u64>,
    seed: u64,
}

impl ClassSampler {
    fn new(train: &ImageBatch<f32>, classes: usize, seed: u64) -> Self {
        let pools: Vec<Vec<usize>> = (0..classes).map(|c| train.indices_of_class(c)).collect();
        let pos = pools.iter().map(Vec::len).collect();
        Self { pools, pos, epoch: vec![0; classes], seed }
    }

    fn next(&mut self, class: usize, want: usize) -> Vec<usize> {
        let pool = &mut self.pools[class];
        let n = want.min(pool.len());
        if self.pos[class] + n > pool.len() {
            let mut rng =
                seeds::derive(self.seed, &[tag::REAL_BATCH, class as u64, self.epoch[class]]);
            pool.shuffle(&mut rng);
            self.epoch[class] += 1;
            self.pos[class] = 0;
        }
        let out = pool[self.pos[class]..self.pos[class] + n].to_vec();
        self.pos[class] += n;
        out
    }
}

/// Draws the augmentation plans for one transform draw: the real plan
/// first, then the synthetic plan, from the same stream.
fn draw_plans(
    cfg: &CondenseConfig,
    n_real: usize,
    n_syn: usize,
    h: usize,
    w: usize,
    rng: &mut impl Rng,
) -> Result<(AugPlan, AugPlan), AugError> {
    if cfg.real_aug == AugMode::Siamese {
        let p = cfg.aug.sample(h, w, rng)?;
        return Ok((AugPlan::Shared(p.clone()), AugPlan::Shared(p)));
    }
    let real = match cfg.real_aug {
        AugMode::Off => AugPlan::None,
        AugMode::Independent => AugPlan::PerImage(cfg.aug.sample_each(n_real, h, w, rng)?),
        AugMode::Siamese => unreachable!("validated"),
    };
    let syn = match cfg.syn_aug {
        AugMode::Off => AugPlan::None,
        AugMode::Independent => AugPlan::PerImage(cfg.aug.sample_each(n_syn, h, w, rng)?),
        AugMode::Siamese => unreachable!("validated"),
    };
    Ok((real, syn))
}

fn momentum_step(value: &mut Tensor<f32>, grad: &[f32], vel: &mut [f32], lr: f32, mu: f32) {
    let mut data = value.to_vec();
    for ((x, v), g) in data.iter_mut().zip(vel.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *x -= lr * *v;
    }
    *value = Tensor::from_vec(value.shape(), data);
}

/// One network descent step on cross-entropy over a (possibly augmented)
/// synthetic batch; updates parameters in place and folds batch statistics
/// into the running estimates.
pub(crate) fn net_step(
    net: &mut Network<f32>,
    batch: &ImageBatch<f32>,
    aug: Option<&[AugParam]>,
    lr: f32,
    mu: f32,
    vel: &mut [Vec<f32>],
) -> Result<f32, EngineError> {
    let mut g = Graph::new();
    let x = g.constant(batch.images().clone());
    let xa = match aug {
        Some(ps) => augment::apply_each(&mut g, x, ps)?,
        None => x,
    };
    let pass = net.forward(&mut g, xa, ForwardOpts::train())?;
    let loss = nn::softmax_cross_entropy(&mut g, pass.logits, batch.labels())?;
    let grads = g.gradient(loss, &pass.param_nodes)?;
    for (i, lg) in grads.iter().enumerate() {
        momentum_step(&mut net.params[i].value, g.value(lg.grad).data(), &mut vel[i], lr, mu);
    }
    net.update_bn_running(&pass.batch_stats);
    Ok(g.value(loss).item())
}

fn take_diagnostics(
    dataset: &Dataset,
    cfg: &CondenseConfig,
    net: &Network<f32>,
    pixels: &[f32],
    geo: (usize, usize, usize),
    outer_iter: usize,
) -> Result<DiagRecord, EngineError> {
    let (c, h, w) = geo;
    let len = c * h * w;
    let mut syn_norms = Vec::new();
    let mut real_norms = Vec::new();
    for class in 0..dataset.classes {
        let range = class * cfg.ipc * len..(class + 1) * cfg.ipc * len;
        let syn = ImageBatch::from_vec(
            pixels[range].to_vec(),
            cfg.ipc,
            c,
            h,
            w,
            vec![class; cfg.ipc],
        );
        let mut rng = seeds::derive(cfg.seed, &[tag::DIAG, outer_iter as u64, class as u64]);
        let pool = dataset.train.indices_of_class(class);
        let n = cfg.batch_real.min(pool.len());
        let picks: Vec<usize> =
            index_sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
        let real = dataset.train.select(&picks);
        let syn_set = grad_set_for_batch(net, &syn, &AugPlan::None, &cfg.match_opts)?;
        let real_set = grad_set_for_batch(net, &real, &AugPlan::None, &cfg.match_opts)?;
        syn_norms.extend(syn_set.row_norms());
        real_norms.extend(real_set.row_norms());
    }
    Ok(DiagRecord { outer_iter, syn_norms, real_norms })
}

/// Runs the full condensation loop and returns the learned set.
///
/// Every random decision draws from a stream derived from the seed and the
/// loop coordinates, so the same configuration reproduces the same set
/// bit for bit. Aborts with the partial trace when the matching loss stops
/// being finite or exceeds the divergence limit.
pub fn condense(dataset: &Dataset, cfg: &CondenseConfig) -> Result<CondenseRun, EngineError> {
    cfg.validate()?;
    let (c, h, w) = (dataset.train.channels(), dataset.train.height(), dataset.train.width());
    if cfg.arch.input != (c, h, w) {
        return Err(EngineError::BadConfig(format!(
            "network expects input {:?} but the dataset has ({}, {}, {})",
            cfg.arch.input, c, h, w
        )));
    }
    if cfg.arch.classes != dataset.classes {
        return Err(EngineError::BadConfig(format!(
            "network has {} classes but the dataset has {}",
            cfg.arch.classes, dataset.classes
        )));
    }

    let mut set = init_synthetic(dataset, cfg.ipc, cfg.init, cfg.seed)?;
    set.config_text = cfg.to_text();
    let len = c * h * w;
    let mut pixels = set.images.to_vec();
    let mut syn_vel = vec![0.0f32; pixels.len()];
    let mut sampler = ClassSampler::new(&dataset.train, dataset.classes, cfg.seed);
    let mut trace = LossTrace::default();
    let mut diagnostics = GradDiagnostics::default();
    let n_syn = cfg.batch_syn.min(cfg.ipc);

    for k in 0..cfg.outer_iters {
        let mut rng_init = seeds::derive(cfg.seed, &[tag::NETWORK_INIT, k as u64]);
        let mut net = Network::<f32>::init(cfg.arch.clone(), &mut rng_init)?;
        let mut net_vel: Vec<Vec<f32>> =
            net.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let mut iter_loss = 0.0f64;
        let mut iter_terms = 0usize;

        for t in 0..cfg.inner_loops {
            for class in 0..dataset.classes {
                let mut rng_omega =
                    seeds::derive(cfg.seed, &[tag::OMEGA, k as u64, t as u64, class as u64]);
                let syn_idx: Vec<usize> = if n_syn == cfg.ipc {
                    (class * cfg.ipc..(class + 1) * cfg.ipc).collect()
                } else {
                    let mut rng = seeds::derive(
                        cfg.seed,
                        &[tag::SYN_BATCH, k as u64, t as u64, class as u64],
                    );
                    let mut picks: Vec<usize> = index_sample(&mut rng, cfg.ipc, n_syn)
                        .into_iter()
                        .map(|i| class * cfg.ipc + i)
                        .collect();
                    picks.sort_unstable();
                    picks
                };

                let sample_real = |sampler: &mut ClassSampler| {
                    let idx = sampler.next(class, cfg.batch_real);
                    dataset.train.select(&idx)
                };
                let mut real_batch = sample_real(&mut sampler);

                let mut real_plans = Vec::with_capacity(cfg.omega_draws);
                let mut syn_plans = Vec::with_capacity(cfg.omega_draws);
                for _ in 0..cfg.omega_draws {
                    let (rp, sp) =
                        draw_plans(cfg, real_batch.n(), syn_idx.len(), h, w, &mut rng_omega)?;
                    real_plans.push(rp);
                    syn_plans.push(sp);
                }
                let mut real_sets: Vec<GradSet<f32>> = real_plans
                    .iter()
                    .map(|p| grad_set_for_batch(&net, &real_batch, p, &cfg.match_opts))
                    .collect::<Result<_, _>>()?;

                for s in 0..cfg.syn_steps {
                    if s > 0 && cfg.resample_real {
                        real_batch = sample_real(&mut sampler);
                        real_sets = real_plans
                            .iter()
                            .map(|p| grad_set_for_batch(&net, &real_batch, p, &cfg.match_opts))
                            .collect::<Result<_, _>>()?;
                    }
                    let syn_data: Vec<f32> = syn_idx
                        .iter()
                        .flat_map(|&i| pixels[i * len..(i + 1) * len].iter().copied())
                        .collect();
                    let syn_batch = ImageBatch::from_vec(
                        syn_data,
                        syn_idx.len(),
                        c,
                        h,
                        w,
                        vec![class; syn_idx.len()],
                    );
                    let res = syn_matching_step(
                        &net,
                        &syn_batch,
                        class,
                        &syn_plans,
                        &real_sets,
                        &cfg.match_opts,
                    )?;
                    if !res.loss.total.is_finite() || res.loss.total > cfg.divergence_limit {
                        trace.per_iter.push(res.loss.total);
                        return Err(EngineError::Divergence {
                            outer_iter: k,
                            loss: res.loss.total,
                            trace,
                        });
                    }
                    if s == 0 {
                        iter_loss += res.loss.total as f64;
                        iter_terms += 1;
                    }
                    let grad = res.grad_syn.data();
                    for (j, &i) in syn_idx.iter().enumerate() {
                        momentum_step_slice(
                            &mut pixels[i * len..(i + 1) * len],
                            &grad[j * len..(j + 1) * len],
                            &mut syn_vel[i * len..(i + 1) * len],
                            cfg.lr_syn,
                            cfg.momentum_syn,
                        );
                    }
                }
            }

            for step in 0..cfg.net_steps {
                let n_total = set.n();
                let b = cfg.batch_syn.min(n_total);
                let idx: Vec<usize> = if b == n_total {
                    (0..n_total).collect()
                } else {
                    let mut rng = seeds::derive(
                        cfg.seed,
                        &[tag::THETA_BATCH, k as u64, t as u64, step as u64],
                    );
                    index_sample(&mut rng, n_total, b).into_vec()
                };
                let data: Vec<f32> = idx
                    .iter()
                    .flat_map(|&i| pixels[i * len..(i + 1) * len].iter().copied())
                    .collect();
                let labels: Vec<usize> = idx.iter().map(|&i| set.labels[i]).collect();
                let batch = ImageBatch::from_vec(data, idx.len(), c, h, w, labels);
                let aug = if cfg.net_aug {
                    let mut rng = seeds::derive(
                        cfg.seed,
                        &[
                            tag::OMEGA,
                            k as u64,
                            t as u64,
                            dataset.classes as u64 + step as u64,
                        ],
                    );
                    Some(cfg.aug.sample_each(batch.n(), h, w, &mut rng)?)
                } else {
                    None
                };
                net_step(
                    &mut net,
                    &batch,
                    aug.as_deref(),
                    cfg.lr_net,
                    cfg.momentum_net,
                    &mut net_vel,
                )?;
            }
        }

        if iter_terms > 0 {
            trace.per_iter.push((iter_loss / iter_terms as f64) as f32);
        }
        if cfg.diagnostics_at.contains(&k) {
            diagnostics.records.push(take_diagnostics(
                dataset,
                cfg,
                &net,
                &pixels,
                (c, h, w),
                k,
            )?);
        }
    }

    set.images = Tensor::from_vec(Shape::d4(set.n(), c, h, w), pixels);
    set.trace = trace;
    Ok(CondenseRun { set, diagnostics })
}

fn momentum_step_slice(x: &mut [f32], grad: &[f32], vel: &mut [f32], lr: f32, mu: f32) {
    for ((x, v), g) in x.iter_mut().zip(vel.iter_mut()).zip(grad) {
        *v = mu * *v + g;
        *x -= lr * *v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugStrategy;
    use crate::data::Normalization;

    fn tiny_dataset(classes: usize, per_class: usize, h: usize, w: usize) -> Dataset {
        let n = classes * per_class;
        let len = h * w;
        let mut pixels = Vec::with_capacity(n * len);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % classes;
            for p in 0..len {
                let v = ((i * 31 + p * 7 + class * 113) % 97) as f32 / 97.0 - 0.5;
                pixels.push(v + class as f32);
            }
            labels.push(class);
        }
        let train = ImageBatch::from_vec(pixels.clone(), n, 1, h, w, labels.clone());
        let test = ImageBatch::from_vec(pixels, n, 1, h, w, labels);
        Dataset {
            name: "mnist".into(),
            classes,
            train,
            test,
            norm: Normalization { mean: vec![0.0], std: vec![1.0] },
        }
    }

    fn tiny_config(dataset: &Dataset, ipc: usize) -> CondenseConfig {
        let mut cfg = CondenseConfig::new(
            ArchSpec::mlp((1, dataset.train.height(), dataset.train.width()), dataset.classes),
            ipc,
        );
        cfg.arch.depth = 1;
        cfg.arch.width = 8;
        cfg.outer_iters = 2;
        cfg.inner_loops = 2;
        cfg.net_steps = 1;
        cfg.batch_real = 4;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn real_init_copies_class_images() {
        let ds = tiny_dataset(3, 5, 4, 4);
        let set = init_synthetic(&ds, 2, InitMode::Real, 7).unwrap();
        assert_eq!(set.labels, vec![0, 0, 1, 1, 2, 2]);
        let train = ds.train.images().data();
        let len = ds.train.image_len();
        for (i, img) in set.images.data().chunks_exact(len).enumerate() {
            let class = i / 2;
            let found = ds.train.indices_of_class(class).iter().any(|&j| {
                train[j * len..(j + 1) * len] == *img
            });
            assert!(found, "synthetic image {i} is not a real image of class {class}");
        }
        let again = init_synthetic(&ds, 2, InitMode::Real, 7).unwrap();
        assert_eq!(set.images.data(), again.images.data());
    }

    #[test]
    fn noise_init_is_standard_normal_and_seeded() {
        let ds = tiny_dataset(2, 3, 8, 8);
        let a = init_synthetic(&ds, 4, InitMode::Noise, 3).unwrap();
        let b = init_synthetic(&ds, 4, InitMode::Noise, 3).unwrap();
        let c = init_synthetic(&ds, 4, InitMode::Noise, 4).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_ne!(a.images.data(), c.images.data());
        let data = a.images.data();
        let mean: f32 = data.iter().sum::<f32>() / data.len() as f32;
        let var: f32 =
            data.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / data.len() as f32;
        assert!(mean.abs() < 0.15, "mean {mean}");
        assert!((var - 1.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn real_init_rejects_small_classes() {
        let ds = tiny_dataset(2, 3, 4, 4);
        match init_synthetic(&ds, 4, InitMode::Real, 0) {
            Err(EngineError::Data(DataError::NotEnoughImages {
                class: 0,
                available: 3,
                requested: 4,
            })) => {}
            other => panic!("expected NotEnoughImages, got {other:?}"),
        }
    }

    #[test]
    fn zero_outer_iters_returns_the_init() {
        let ds = tiny_dataset(2, 4, 4, 4);
        let mut cfg = tiny_config(&ds, 2);
        cfg.outer_iters = 0;
        let run = condense(&ds, &cfg).unwrap();
        let init = init_synthetic(&ds, 2, cfg.init, cfg.seed).unwrap();
        assert_eq!(run.set.images.data(), init.images.data());
        assert!(run.set.trace.per_iter.is_empty());
    }

    #[test]
    fn condense_is_deterministic_in_the_seed() {
        let ds = tiny_dataset(2, 6, 4, 4);
        let cfg = tiny_config(&ds, 2);
        let a = condense(&ds, &cfg).unwrap();
        let b = condense(&ds, &cfg).unwrap();
        assert_eq!(a.set.images.data(), b.set.images.data());
        assert_eq!(a.set.trace, b.set.trace);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 12;
        let c = condense(&ds, &cfg2).unwrap();
        assert_ne!(a.set.images.data(), c.set.images.data());
    }

    #[test]
    fn trace_has_one_entry_per_outer_iteration() {
        let ds = tiny_dataset(2, 4, 4, 4);
        let mut cfg = tiny_config(&ds, 1);
        cfg.outer_iters = 3;
        let run = condense(&ds, &cfg).unwrap();
        assert_eq!(run.set.trace.per_iter.len(), 3);
        assert!(run.set.trace.per_iter.iter().all(|v| v.is_finite()));
        assert_eq!(run.set.config_text, cfg.to_text());
    }

    #[test]
    fn divergence_aborts_with_partial_trace() {
        let ds = tiny_dataset(2, 4, 4, 4);
        let mut cfg = tiny_config(&ds, 1);
        cfg.outer_iters = 5;
        cfg.divergence_limit = -1.0;
        match condense(&ds, &cfg) {
            Err(EngineError::Divergence { outer_iter: 0, loss, trace }) => {
                assert!(loss.is_finite());
                assert_eq!(trace.per_iter.len(), 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_geometry_is_rejected() {
        let ds = tiny_dataset(2, 4, 4, 4);
        let mut cfg = tiny_config(&ds, 1);
        cfg.arch.input = (1, 8, 8);
        assert!(matches!(condense(&ds, &cfg), Err(EngineError::BadConfig(_))));
        let mut cfg2 = tiny_config(&ds, 1);
        cfg2.arch.classes = 5;
        assert!(matches!(condense(&ds, &cfg2), Err(EngineError::BadConfig(_))));
    }

    #[test]
    fn siamese_on_one_branch_only_is_rejected() {
        let ds = tiny_dataset(2, 4, 4, 4);
        let mut cfg = tiny_config(&ds, 1);
        cfg.real_aug = AugMode::Siamese;
        cfg.syn_aug = AugMode::Off;
        assert!(matches!(condense(&ds, &cfg), Err(EngineError::BadConfig(_))));
    }

    #[test]
    fn schemes_map_to_augmentation_placement() {
        assert_eq!(Scheme::Ours.modes(), (AugMode::Siamese, AugMode::Siamese, true));
        assert_eq!(Scheme::A.modes(), (AugMode::Off, AugMode::Off, false));
        assert_eq!(Scheme::B.modes(), (AugMode::Off, AugMode::Off, true));
        assert_eq!(Scheme::C.modes(), (AugMode::Independent, AugMode::Off, true));
        assert_eq!(Scheme::D.modes(), (AugMode::Off, AugMode::Independent, true));
        assert_eq!(Scheme::E.modes(), (AugMode::Siamese, AugMode::Siamese, false));
        assert_eq!(Scheme::F.modes(), (AugMode::Independent, AugMode::Independent, true));
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        let ds = tiny_dataset(2, 4, 4, 4);
        for scheme in Scheme::ALL {
            let mut cfg = tiny_config(&ds, 1);
            cfg.outer_iters = 1;
            cfg.apply_scheme(scheme);
            condense(&ds, &cfg).unwrap();
        }
    }

    #[test]
    fn all_strategies_run_one_iteration() {
        let ds = tiny_dataset(2, 4, 6, 6);
        for strategy in [
            AugStrategy::None,
            AugStrategy::Single(crate::augment::AugKind::Rotate),
            AugStrategy::Combination,
        ] {
            let mut cfg = tiny_config(&ds, 2);
            cfg.outer_iters = 1;
            cfg.aug = AugDistribution::new(strategy);
            cfg.aug.exclude_flip = ds.is_digit_like();
            let run = condense(&ds, &cfg).unwrap();
            assert!(run.set.trace.final_loss().unwrap().is_finite());
        }
    }

    #[test]
    fn multiple_draws_scale_the_summed_loss() {
        let ds = tiny_dataset(2, 6, 4, 4);
        let mut one = tiny_config(&ds, 1);
        one.outer_iters = 1;
        one.inner_loops = 1;
        one.net_steps = 0;
        one.lr_syn = 0.0;
        let mut three = one.clone();
        three.omega_draws = 3;
        let a = condense(&ds, &one).unwrap().set.trace.per_iter[0];
        let b = condense(&ds, &three).unwrap().set.trace.per_iter[0];
        assert!(b > a, "summed loss {b} should exceed single-draw loss {a}");
    }

    #[test]
    fn diagnostics_record_requested_iterations() {
        let ds = tiny_dataset(2, 5, 4, 4);
        let mut cfg = tiny_config(&ds, 2);
        cfg.outer_iters = 3;
        cfg.diagnostics_at = vec![0, 2];
        let run = condense(&ds, &cfg).unwrap();
        assert_eq!(run.diagnostics.records.len(), 2);
        assert_eq!(run.diagnostics.records[0].outer_iter, 0);
        assert_eq!(run.diagnostics.records[1].outer_iter, 2);
        let rec = &run.diagnostics.records[0];
        assert_eq!(rec.syn_norms.len(), rec.real_norms.len());
        assert!(rec.syn_median() >= 0.0 && rec.real_median() >= 0.0);
        assert!(rec.syn_norms.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[]), 0.0);
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[1.0, 2.0, 10.0]), 2.0);
        assert_eq!(median(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn config_text_round_trips_key_fields() {
        let cfg = CondenseConfig::new(ArchSpec::convnet((1, 28, 28), 10), 10);
        let text = cfg.to_text();
        assert!(text.contains("arch = convnet-d3-w128-relu-instance-avg"));
        assert!(text.contains("inner_loops = 10"));
        assert!(text.contains("net_steps = 50"));
        assert!(text.contains("lr_syn = 0.1"));
        assert_eq!(schedule_for_ipc(1), (1, 1));
        assert_eq!(schedule_for_ipc(10), (10, 50));
        assert_eq!(schedule_for_ipc(50), (50, 10));
    }

    #[test]
    fn matching_loss_trends_down_on_a_tiny_run() {
        let ds = tiny_dataset(2, 12, 4, 4);
        let mut cfg = tiny_config(&ds, 1);
        cfg.arch.activation = crate::zoo::Activation::Sigmoid;
        cfg.arch.width = 16;
        cfg.outer_iters = 40;
        cfg.inner_loops = 1;
        cfg.net_steps = 0;
        cfg.batch_real = 8;
        cfg.aug = AugDistribution::none();
        let run = condense(&ds, &cfg).unwrap();
        let t = &run.set.trace.per_iter;
        let head: f32 = t[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = t[t.len() - 10..].iter().sum::<f32>() / 10.0;
        assert!(tail < head, "loss should trend down: head {head}, tail {tail}");
    }
}
