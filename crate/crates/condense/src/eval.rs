//! The evaluation protocol: train fresh networks on a condensed set, score
//! them on the real test split, and aggregate over repeated sets and
//! initializations.
//!
//! Training never touches real training images; a classifier sees only the
//! synthetic (or coreset) set and is scored on the held-out test split.
//! Every cell of the repeat grid derives its own random stream from the
//! experiment seed and its coordinates, so running cells in parallel gives
//! bit-identical results to running them one by one.

use crate::augment::AugError;
use crate::batch::ImageBatch;
use crate::data::{DataError, Dataset};
use crate::engine::{self, condense, CondenseConfig, EngineError};
use crate::seeds::{self, tag};
use crate::synthetic::SyntheticSet;
use crate::zoo::{ArchSpec, Network, ZooError};
use autodiff::{AdError, Shape, Tensor};
use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error("condensing set {set}: {source}")]
    Condense {
        set: usize,
        #[source]
        source: EngineError,
    },
    #[error("evaluation cell (set {set}, net {net}): {source}")]
    Cell {
        set: usize,
        net: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error("cross-architecture cell (condense row {row}, eval column {col}): {source}")]
    Grid {
        row: usize,
        col: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Classifier-training schedule and repeat structure.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub arch: ArchSpec,
    pub epochs: usize,
    pub lr: f32,
    /// Epoch at which the learning rate is multiplied by `decay_factor`.
    pub decay_at: usize,
    pub decay_factor: f32,
    pub momentum: f32,
    /// Batch size cap; the effective size is `min(batch, |S|)`.
    pub batch: usize,
    /// Per-image training augmentation; `None` trains on raw pixels.
    pub aug: Option<crate::augment::AugDistribution>,
    /// Independently condensed sets to evaluate.
    pub sets: usize,
    /// Freshly initialized networks trained per set.
    pub nets: usize,
    pub seed: u64,
}

impl EvalConfig {
    /// Protocol defaults: 300 epochs at 0.01 with one tenfold decay at 150,
    /// momentum 0.5, batch cap 256, 5 sets of 20 networks.
    pub fn new(arch: ArchSpec) -> Self {
        Self {
            arch,
            epochs: 300,
            lr: 0.01,
            decay_at: 150,
            decay_factor: 0.1,
            momentum: 0.5,
            batch: 256,
            aug: None,
            sets: 5,
            nets: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.sets == 0 || self.nets == 0 {
            return Err(EvalError::BadConfig("sets and nets must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(EvalError::BadConfig("batch must be at least 1".into()));
        }
        if !self.lr.is_finite() || !self.decay_factor.is_finite() {
            return Err(EvalError::BadConfig("learning schedule must be finite".into()));
        }
        Ok(())
    }

    /// Deterministic key=value snapshot.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("eval_arch", self.arch.label());
        kv("epochs", self.epochs.to_string());
        kv("lr", format!("{}", self.lr));
        kv("decay_at", self.decay_at.to_string());
        kv("decay_factor", format!("{}", self.decay_factor));
        kv("momentum", format!("{}", self.momentum));
        kv("batch", self.batch.to_string());
        kv(
            "eval_aug",
            match &self.aug {
                Some(d) => d.strategy.to_string(),
                None => "none".into(),
            },
        );
        kv("sets", self.sets.to_string());
        kv("nets", self.nets.to_string());
        kv("eval_seed", self.seed.to_string());
        s
    }
}

/// Aggregated result of one evaluation: every per-run accuracy plus the
/// statistics recomputable from them.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Per-run accuracies in cell order: run `s * nets + n` is set `s`,
    /// network `n`.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over all runs.
    pub std: f64,
    pub sets: usize,
    pub nets: usize,
    pub config_text: String,
    pub seed: u64,
    pub wall_secs: f64,
}

impl EvalReport {
    pub fn from_accuracies(
        accuracies: Vec<f64>,
        sets: usize,
        nets: usize,
        config_text: String,
        seed: u64,
        wall_secs: f64,
    ) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self { accuracies, mean, std, sets, nets, config_text, seed, wall_secs }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains one freshly initialized classifier on an arbitrary labeled batch
/// by mini-batch stochastic gradient descent with momentum, per-image
/// augmentation, and a single tenfold learning-rate decay. Stops early
/// after `max_steps` optimizer steps when a budget is given. Deterministic
/// given `seed`.
pub fn train_on_batch(
    train: &ImageBatch<f32>,
    cfg: &EvalConfig,
    seed: u64,
    max_steps: Option<usize>,
) -> Result<Network<f32>, EvalError> {
    if cfg.arch.input != (train.channels(), train.height(), train.width()) {
        return Err(EvalError::BadConfig(format!(
            "network expects input {:?} but the training images are ({}, {}, {})",
            cfg.arch.input,
            train.channels(),
            train.height(),
            train.width()
        )));
    }
    if train.n() == 0 {
        return Err(EvalError::BadConfig("training batch is empty".into()));
    }
    if train.max_label_excl() > cfg.arch.classes {
        return Err(EvalError::BadConfig(format!(
            "labels reach {} but the network has {} classes",
            train.max_label_excl(),
            cfg.arch.classes
        )));
    }
    let mut rng_init = seeds::derive(seed, &[tag::NETWORK_INIT]);
    let mut net = Network::<f32>::init(cfg.arch.clone(), &mut rng_init)?;
    let n = train.n();
    let b = cfg.batch.min(n);
    let (c, h, w) = (train.channels(), train.height(), train.width());
    let len = c * h * w;
    let pixels = train.images().data();
    let mut vel: Vec<Vec<f32>> = net.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
    let mut steps = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.decay_at { cfg.lr * cfg.decay_factor } else { cfg.lr };
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng_shuffle = seeds::derive(seed, &[tag::EVAL_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng_shuffle);
        for (bi, chunk) in order.chunks(b).enumerate() {
            if let Some(budget) = max_steps {
                if steps >= budget {
                    break 'epochs;
                }
            }
            let data: Vec<f32> = chunk
                .iter()
                .flat_map(|&i| pixels[i * len..(i + 1) * len].iter().copied())
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let batch = ImageBatch::from_vec(data, chunk.len(), c, h, w, labels);
            let aug = match &cfg.aug {
                Some(dist) => {
                    let mut rng =
                        seeds::derive(seed, &[tag::EVAL_AUG, epoch as u64, bi as u64]);
                    Some(dist.sample_each(chunk.len(), h, w, &mut rng)?)
                }
                None => None,
            };
            engine::net_step(&mut net, &batch, aug.as_deref(), lr, cfg.momentum, &mut vel)
                .map_err(|e| match e {
                    EngineError::Aug(a) => EvalError::Aug(a),
                    EngineError::Zoo(z) => EvalError::Zoo(z),
                    EngineError::Ad(a) => EvalError::Ad(a),
                    other => EvalError::BadConfig(other.to_string()),
                })?;
            steps += 1;
        }
    }
    Ok(net)
}

/// Trains one freshly initialized classifier on a condensed set.
pub fn train_classifier(
    set: &SyntheticSet,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Network<f32>, EvalError> {
    if set.classes > cfg.arch.classes {
        return Err(EvalError::BadConfig(format!(
            "set has {} classes but the network only {}",
            set.classes, cfg.arch.classes
        )));
    }
    train_on_batch(&set.batch(), cfg, seed, None)
}

/// Top-1 accuracy over the full test split, computed in bounded chunks.
pub fn test_accuracy(net: &Network<f32>, test: &ImageBatch<f32>) -> Result<f64, EvalError> {
    let n = test.n();
    if n == 0 {
        return Err(EvalError::BadConfig("test split is empty".into()));
    }
    let mut correct = 0usize;
    let chunk = 500;
    let mut i = 0;
    while i < n {
        let j = (i + chunk).min(n);
        let idx: Vec<usize> = (i..j).collect();
        let b = test.select(&idx);
        let preds = net.predict(&b)?;
        correct += preds.iter().zip(b.labels()).filter(|(p, l)| p == l).count();
        i = j;
    }
    Ok(correct as f64 / n as f64)
}

/// Trains and scores the full repeat grid for one already-condensed set.
///
/// Cells run in parallel; each derives its stream from the evaluation seed
/// and its `(set_index, net_index)` coordinates, so the result is the same
/// in any execution order.
pub fn evaluate_set(
    set: &SyntheticSet,
    test: &ImageBatch<f32>,
    cfg: &EvalConfig,
    set_index: usize,
) -> Result<Vec<f64>, EvalError> {
    cfg.validate()?;
    let results: Vec<Result<f64, EvalError>> = (0..cfg.nets)
        .into_par_iter()
        .map(|net_index| {
            let cell_seed =
                seeds::derive_seed(cfg.seed, &[tag::EVAL_NET, set_index as u64, net_index as u64]);
            let net = train_classifier(set, cfg, cell_seed)?;
            test_accuracy(&net, test)
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.nets);
    for (net_index, r) in results.into_iter().enumerate() {
        out.push(r.map_err(|e| EvalError::Cell {
            set: set_index,
            net: net_index,
            source: Box::new(e),
        })?);
    }
    Ok(out)
}

/// The full protocol: condense `sets` independent synthetic sets with
/// distinct derived seeds, train `nets` fresh classifiers on each, and
/// aggregate accuracy over all runs.
pub fn evaluate_protocol(
    dataset: &Dataset,
    ccfg: &CondenseConfig,
    ecfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    ecfg.validate()?;
    let start = Instant::now();
    let mut sets = Vec::with_capacity(ecfg.sets);
    for i in 0..ecfg.sets {
        let mut c = ccfg.clone();
        c.seed = seeds::derive_seed(ecfg.seed, &[tag::EVAL_SET, i as u64]);
        let run = condense(dataset, &c).map_err(|source| EvalError::Condense { set: i, source })?;
        sets.push(run.set);
    }
    evaluate_sets(&sets, dataset, ccfg, ecfg, start)
}

/// Evaluates sets that were condensed elsewhere (for example loaded from
/// disk), taking the condensation snapshot from the sets themselves.
pub fn evaluate_saved(
    sets: &[SyntheticSet],
    test: &ImageBatch<f32>,
    ecfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    ecfg.validate()?;
    if sets.is_empty() {
        return Err(EvalError::BadConfig("need at least one set to evaluate".into()));
    }
    let start = Instant::now();
    let cells: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|s| (0..ecfg.nets).map(move |n| (s, n)))
        .collect();
    let results: Vec<Result<f64, EvalError>> = cells
        .par_iter()
        .map(|&(s, n)| {
            let cell_seed = seeds::derive_seed(ecfg.seed, &[tag::EVAL_NET, s as u64, n as u64]);
            let net = train_classifier(&sets[s], ecfg, cell_seed)?;
            test_accuracy(&net, test)
        })
        .collect();
    let mut accuracies = Vec::with_capacity(cells.len());
    for ((s, n), r) in cells.into_iter().zip(results) {
        accuracies.push(r.map_err(|e| EvalError::Cell { set: s, net: n, source: Box::new(e) })?);
    }
    let config_text = format!("{}{}", sets[0].config_text, ecfg.to_text());
    Ok(EvalReport::from_accuracies(
        accuracies,
        sets.len(),
        ecfg.nets,
        config_text,
        ecfg.seed,
        start.elapsed().as_secs_f64(),
    ))
}

fn evaluate_sets(
    sets: &[SyntheticSet],
    dataset: &Dataset,
    ccfg: &CondenseConfig,
    ecfg: &EvalConfig,
    start: Instant,
) -> Result<EvalReport, EvalError> {
    let cells: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|s| (0..ecfg.nets).map(move |n| (s, n)))
        .collect();
    let results: Vec<Result<f64, EvalError>> = cells
        .par_iter()
        .map(|&(s, n)| {
            let cell_seed = seeds::derive_seed(ecfg.seed, &[tag::EVAL_NET, s as u64, n as u64]);
            let net = train_classifier(&sets[s], ecfg, cell_seed)?;
            test_accuracy(&net, &dataset.test)
        })
        .collect();
    let mut accuracies = Vec::with_capacity(cells.len());
    for ((s, n), r) in cells.into_iter().zip(results) {
        accuracies.push(r.map_err(|e| EvalError::Cell { set: s, net: n, source: Box::new(e) })?);
    }
    let config_text = format!("{}{}", ccfg.to_text(), ecfg.to_text());
    Ok(EvalReport::from_accuracies(
        accuracies,
        sets.len(),
        ecfg.nets,
        config_text,
        ecfg.seed,
        start.elapsed().as_secs_f64(),
    ))
}

/// The cross-architecture grid: condense once per row architecture, then
/// evaluate each row's sets under every column architecture.
pub fn cross_architecture(
    dataset: &Dataset,
    condense_archs: &[ArchSpec],
    eval_archs: &[ArchSpec],
    ccfg_base: &CondenseConfig,
    ecfg_base: &EvalConfig,
) -> Result<Vec<Vec<EvalReport>>, EvalError> {
    if condense_archs.is_empty() || eval_archs.is_empty() {
        return Err(EvalError::BadConfig("architecture lists must be nonempty".into()));
    }
    let mut matrix = Vec::with_capacity(condense_archs.len());
    for (row, carch) in condense_archs.iter().enumerate() {
        let mut row_reports = Vec::with_capacity(eval_archs.len());
        let start = Instant::now();
        let mut ccfg = ccfg_base.clone();
        ccfg.arch = carch.clone();
        let mut sets = Vec::with_capacity(ecfg_base.sets);
        for i in 0..ecfg_base.sets {
            let mut c = ccfg.clone();
            c.seed = seeds::derive_seed(ecfg_base.seed, &[tag::EVAL_SET, row as u64, i as u64]);
            let run = condense(dataset, &c).map_err(|source| EvalError::Grid {
                row,
                col: 0,
                source: Box::new(EvalError::Condense { set: i, source }),
            })?;
            sets.push(run.set);
        }
        for (col, earch) in eval_archs.iter().enumerate() {
            let mut ecfg = ecfg_base.clone();
            ecfg.arch = earch.clone();
            let report = evaluate_sets(&sets, dataset, &ccfg, &ecfg, start).map_err(|e| {
                EvalError::Grid { row, col, source: Box::new(e) }
            })?;
            row_reports.push(report);
        }
        matrix.push(row_reports);
    }
    Ok(matrix)
}

/// A uniformly drawn class-stratified coreset of real images, packaged
/// exactly like a synthetic set.
pub fn random_coreset(
    dataset: &Dataset,
    ipc: usize,
    seed: u64,
) -> Result<SyntheticSet, EvalError> {
    if ipc == 0 {
        return Err(EvalError::BadConfig("ipc must be at least 1".into()));
    }
    let (c, h, w) = (dataset.train.channels(), dataset.train.height(), dataset.train.width());
    let len = c * h * w;
    let data = dataset.train.images().data();
    let mut pixels = vec![0.0f32; dataset.classes * ipc * len];
    for class in 0..dataset.classes {
        let pool = dataset.train.indices_of_class(class);
        if pool.len() < ipc {
            return Err(EvalError::Data(DataError::NotEnoughImages {
                class,
                available: pool.len(),
                requested: ipc,
            }));
        }
        let mut rng = seeds::derive(seed, &[tag::CORESET, class as u64]);
        let picks = index_sample(&mut rng, pool.len(), ipc);
        let dst = &mut pixels[class * ipc * len..(class + 1) * ipc * len];
        for (i, p) in picks.into_iter().enumerate() {
            let src = pool[p] * len;
            dst[i * len..(i + 1) * len].copy_from_slice(&data[src..src + len]);
        }
    }
    let images = Tensor::from_vec(Shape::d4(dataset.classes * ipc, c, h, w), pixels);
    let mut set =
        SyntheticSet::new(images, dataset.classes, ipc, &dataset.name, dataset.norm.clone());
    set.config_text = format!("coreset = random\nipc = {ipc}\nseed = {seed}\n");
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AugDistribution, AugStrategy};
    use crate::data::Normalization;
    use crate::zoo::Activation;

    fn tiny_dataset(classes: usize, per_class: usize, h: usize, w: usize) -> Dataset {
        let n = classes * per_class;
        let len = h * w;
        let mut pixels = Vec::with_capacity(n * len);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % classes;
            for p in 0..len {
                let v = ((i * 29 + p * 13) % 83) as f32 / 83.0 - 0.5;
                pixels.push(0.3 * v + class as f32 - 0.5);
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

    fn tiny_eval(ds: &Dataset) -> EvalConfig {
        let mut arch = ArchSpec::mlp((1, ds.train.height(), ds.train.width()), ds.classes);
        arch.depth = 1;
        arch.width = 12;
        arch.activation = Activation::Sigmoid;
        let mut cfg = EvalConfig::new(arch);
        cfg.epochs = 40;
        cfg.decay_at = 20;
        cfg.batch = 8;
        cfg.sets = 1;
        cfg.nets = 2;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn coreset_is_stratified_real_and_seeded() {
        let ds = tiny_dataset(3, 5, 4, 4);
        let a = random_coreset(&ds, 2, 1).unwrap();
        let b = random_coreset(&ds, 2, 1).unwrap();
        let c = random_coreset(&ds, 2, 2).unwrap();
        assert_eq!(a.labels, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(a.images.data(), b.images.data());
        assert_ne!(a.images.data(), c.images.data());
        let len = ds.train.image_len();
        let train = ds.train.images().data();
        for (i, img) in a.images.data().chunks_exact(len).enumerate() {
            let class = i / 2;
            assert!(ds
                .train
                .indices_of_class(class)
                .iter()
                .any(|&j| train[j * len..(j + 1) * len] == *img));
        }
        assert!(matches!(
            random_coreset(&ds, 9, 0),
            Err(EvalError::Data(DataError::NotEnoughImages { .. }))
        ));
    }

    #[test]
    fn untrained_network_sits_near_chance() {
        let ds = tiny_dataset(2, 40, 4, 4);
        let set = random_coreset(&ds, 4, 3).unwrap();
        let mut cfg = tiny_eval(&ds);
        cfg.epochs = 0;
        let mut accs = Vec::new();
        for s in 0..8 {
            let net = train_classifier(&set, &cfg, 1000 + s).unwrap();
            accs.push(test_accuracy(&net, &ds.test).unwrap());
        }
        let (mean, _) = mean_std(&accs);
        assert!((mean - 0.5).abs() < 0.25, "chance-level mean was {mean}");
    }

    #[test]
    fn training_separates_a_separable_fixture() {
        let ds = tiny_dataset(2, 20, 4, 4);
        let set = random_coreset(&ds, 4, 3).unwrap();
        let cfg = tiny_eval(&ds);
        let net = train_classifier(&set, &cfg, 7).unwrap();
        let acc = test_accuracy(&net, &ds.test).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
    }

    #[test]
    fn same_seed_trains_the_same_classifier() {
        let ds = tiny_dataset(2, 10, 4, 4);
        let set = random_coreset(&ds, 3, 0).unwrap();
        let mut cfg = tiny_eval(&ds);
        cfg.aug = Some(AugDistribution::new(AugStrategy::Combination));
        cfg.epochs = 5;
        let a = train_classifier(&set, &cfg, 42).unwrap();
        let b = train_classifier(&set, &cfg, 42).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let c = train_classifier(&set, &cfg, 43).unwrap();
        let differs = a
            .params
            .iter()
            .zip(&c.params)
            .any(|(pa, pc)| pa.value.data() != pc.value.data());
        assert!(differs);
    }

    #[test]
    fn accuracy_counts_by_hand() {
        let ds = tiny_dataset(2, 2, 3, 3);
        let mut arch = ArchSpec::mlp((1, 3, 3), 2);
        arch.depth = 1;
        arch.width = 4;
        let mut rng = seeds::derive(0, &[tag::NETWORK_INIT]);
        let net = Network::<f32>::init(arch, &mut rng).unwrap();
        let preds = net.predict(&ds.test).unwrap();
        let by_hand = preds
            .iter()
            .zip(ds.test.labels())
            .filter(|(p, l)| p == l)
            .count() as f64
            / ds.test.n() as f64;
        let acc = test_accuracy(&net, &ds.test).unwrap();
        assert_eq!(acc, by_hand);
    }

    #[test]
    fn report_statistics_recompute_from_the_run_list() {
        let accs = vec![0.5, 0.7, 0.6, 0.8];
        let report =
            EvalReport::from_accuracies(accs.clone(), 2, 2, "cfg".into(), 0, 1.0);
        let (mean, std) = mean_std(&accs);
        assert_eq!(report.mean, mean);
        assert_eq!(report.std, std);
        assert!((report.mean - 0.65).abs() < 1e-12);
        let byhand_var = accs.iter().map(|a| (a - 0.65) * (a - 0.65)).sum::<f64>() / 4.0;
        assert!((report.std - byhand_var.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.4]).1, 0.0);
    }

    #[test]
    fn parallel_and_serial_evaluation_agree() {
        let ds = tiny_dataset(2, 10, 4, 4);
        let set = random_coreset(&ds, 2, 1).unwrap();
        let mut cfg = tiny_eval(&ds);
        cfg.epochs = 3;
        cfg.nets = 4;
        let parallel = evaluate_set(&set, &ds.test, &cfg, 0).unwrap();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| evaluate_set(&set, &ds.test, &cfg, 0))
            .unwrap();
        assert_eq!(parallel, serial);
        assert_eq!(parallel.len(), 4);
    }

    #[test]
    fn protocol_aggregates_sets_by_nets() {
        let ds = tiny_dataset(2, 12, 4, 4);
        let mut ccfg = CondenseConfig::new(
            {
                let mut a = ArchSpec::mlp((1, 4, 4), 2);
                a.depth = 1;
                a.width = 8;
                a.activation = Activation::Sigmoid;
                a
            },
            1,
        );
        ccfg.outer_iters = 2;
        ccfg.inner_loops = 1;
        ccfg.net_steps = 1;
        ccfg.batch_real = 4;
        let mut ecfg = tiny_eval(&ds);
        ecfg.epochs = 3;
        ecfg.sets = 2;
        ecfg.nets = 2;
        let report = evaluate_protocol(&ds, &ccfg, &ecfg).unwrap();
        assert_eq!(report.accuracies.len(), 4);
        assert_eq!(report.sets, 2);
        assert_eq!(report.nets, 2);
        assert!(report.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
        let (mean, std) = mean_std(&report.accuracies);
        assert_eq!(report.mean, mean);
        assert_eq!(report.std, std);
        assert!(report.wall_secs >= 0.0);
        assert!(report.config_text.contains("eval_arch"));
        assert!(report.config_text.contains("outer_iters = 2"));
    }

    #[test]
    fn one_by_one_grid_matches_the_plain_protocol() {
        let ds = tiny_dataset(2, 12, 4, 4);
        let mut arch = ArchSpec::mlp((1, 4, 4), 2);
        arch.depth = 1;
        arch.width = 8;
        arch.activation = Activation::Sigmoid;
        let mut ccfg = CondenseConfig::new(arch.clone(), 1);
        ccfg.outer_iters = 1;
        ccfg.inner_loops = 1;
        ccfg.net_steps = 1;
        ccfg.batch_real = 4;
        let mut ecfg = tiny_eval(&ds);
        ecfg.epochs = 2;
        ecfg.sets = 1;
        ecfg.nets = 2;
        let grid =
            cross_architecture(&ds, &[arch.clone()], &[arch], &ccfg, &ecfg).unwrap();
        assert_eq!(grid.len(), 1);
        assert_eq!(grid[0].len(), 1);
        assert_eq!(grid[0][0].accuracies.len(), 2);
    }

    #[test]
    fn shape_mismatches_are_rejected_with_context() {
        let ds = tiny_dataset(2, 6, 4, 4);
        let set = random_coreset(&ds, 2, 0).unwrap();
        let mut cfg = tiny_eval(&ds);
        cfg.arch.input = (1, 8, 8);
        assert!(matches!(
            train_classifier(&set, &cfg, 0),
            Err(EvalError::BadConfig(_))
        ));
        let mut cfg2 = tiny_eval(&ds);
        cfg2.nets = 1;
        cfg2.arch.input = (1, 8, 8);
        match evaluate_set(&set, &ds.test, &cfg2, 3) {
            Err(EvalError::Cell { set: 3, net: 0, .. }) => {}
            other => panic!("expected cell annotation, got {other:?}"),
        }
    }
}
