//! Plain-text experiment configuration: sectioned key=value files,
//! command-line overrides, and the fully resolved snapshot written back
//! into every artifact.
//!
//! Files look like
//!
//! ```text
//! [dataset]
//! name = mnist
//!
//! [condense]
//! ipc = 10
//! # comments start with # or ;
//! ```
//!
//! Every key is checked against the schema; an unknown key is an error
//! naming the offending `section.key`, so typos fail loudly instead of
//! silently running defaults.

use crate::augment::{AugDistribution, AugStrategy};
use crate::engine::{schedule_for_ipc, CondenseConfig, Scheme};
use crate::eval::EvalConfig;
use crate::matching::MatchOptions;
use crate::zoo::ArchSpec;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("key '{key}': {detail}")]
    BadValue { key: String, detail: String },
    #[error("override '{0}' is not of the form section.key=value")]
    BadOverride(String),
    #[error("{0}")]
    Invalid(String),
}

/// Raw parsed file: section → key → value, insertion order irrelevant.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, String>,
}

impl KvFile {
    /// Parses sectioned key=value text. Keys outside any section are
    /// rejected; `#` and `;` start comments; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find(['#', ';']) {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: line_no,
                    detail: "section header missing closing bracket".into(),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        detail: "empty section name".into(),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: line_no,
                detail: format!("expected key = value, got '{line}'"),
            })?;
            let section = section.as_ref().ok_or(ConfigError::Parse {
                line: line_no,
                detail: "key appears before any [section] header".into(),
            })?;
            let full = format!("{}.{}", section, key.trim());
            if entries.contains_key(&full) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    detail: format!("duplicate key '{full}'"),
                });
            }
            entries.insert(full, value.trim().to_string());
        }
        Ok(Self { entries })
    }

    /// Layers `section.key=value` override pairs on top of the file.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (key, value) =
                o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let key = key.trim();
            if !key.contains('.') || key.starts_with('.') || key.ends_with('.') {
                return Err(ConfigError::BadOverride(o.clone()));
            }
            self.entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some(key) = self.entries.into_keys().next() {
            return Err(ConfigError::UnknownKey(key));
        }
        Ok(())
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        detail: format!("cannot parse '{value}': {e}"),
    })
}

macro_rules! take_into {
    ($kv:expr, $key:expr, $slot:expr) => {
        if let Some(v) = $kv.take($key) {
            $slot = parse_as($key, &v)?;
        }
    };
}

/// Dataset selection and optional stratified size reduction.
#[derive(Clone, Debug)]
pub struct DatasetBlock {
    pub name: String,
    /// Explicit data root; otherwise the environment variable, then `data`.
    pub root: Option<PathBuf>,
    /// Stratified training subsample per class; 0 keeps the full split.
    pub train_per_class: usize,
    /// Stratified test subsample per class; 0 keeps the full split.
    pub test_per_class: usize,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self { name: "mnist".into(), root: None, train_per_class: 0, test_per_class: 0 }
    }
}

/// Output locations for run artifacts.
#[derive(Clone, Debug)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// A fully resolved experiment: every field a run needs, after defaults,
/// file values, and overrides have been folded together.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    pub condense: CondenseConfig,
    pub eval: EvalConfig,
    pub output: OutputBlock,
    /// Scheme requested in the file, if any; already folded into the
    /// augmentation placement fields.
    pub scheme: Option<Scheme>,
}

/// The evaluation augmentation switch: follow the scheme (or the default
/// policy), force off, or force a concrete strategy.
#[derive(Clone, Debug, PartialEq)]
enum EvalAugKey {
    Auto,
    Off,
    Strategy(AugStrategy),
}

impl ExperimentConfig {
    /// Geometry placeholder used until the dataset is loaded; `resolve`
    /// rewrites input shape and class count from the real dataset.
    const PLACEHOLDER_INPUT: (usize, usize, usize) = (1, 28, 28);
    const PLACEHOLDER_CLASSES: usize = 10;

    /// Builds the default experiment: MNIST, the default backbone, full
    /// siamese placement, protocol evaluation.
    pub fn default_experiment() -> Self {
        let arch = ArchSpec::convnet(Self::PLACEHOLDER_INPUT, Self::PLACEHOLDER_CLASSES);
        let condense = CondenseConfig::new(arch, 10);
        let mut eval = EvalConfig::new(arch);
        eval.aug = Some(condense.aug.clone());
        Self {
            dataset: DatasetBlock::default(),
            condense,
            eval,
            output: OutputBlock::default(),
            scheme: None,
        }
    }

    /// Parses a config file plus overrides into a resolved experiment.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut kv = KvFile::parse(text)?;
        kv.apply_overrides(overrides)?;
        Self::from_kv(kv)
    }

    fn from_kv(mut kv: KvFile) -> Result<Self, ConfigError> {
        let mut cfg = Self::default_experiment();

        take_into!(kv, "dataset.name", cfg.dataset.name);
        if let Some(v) = kv.take("dataset.root") {
            cfg.dataset.root = Some(PathBuf::from(v));
        }
        take_into!(kv, "dataset.train_per_class", cfg.dataset.train_per_class);
        take_into!(kv, "dataset.test_per_class", cfg.dataset.test_per_class);

        let mut arch = cfg.condense.arch;
        take_into!(kv, "arch.family", arch.family);
        take_into!(kv, "arch.depth", arch.depth);
        take_into!(kv, "arch.width", arch.width);
        take_into!(kv, "arch.activation", arch.activation);
        take_into!(kv, "arch.norm", arch.norm);
        take_into!(kv, "arch.pool", arch.pool);
        cfg.condense.arch = arch;

        let mut ipc_set = false;
        if let Some(v) = kv.take("condense.ipc") {
            cfg.condense.ipc = parse_as("condense.ipc", &v)?;
            ipc_set = true;
        }
        if ipc_set {
            let (t, s) = schedule_for_ipc(cfg.condense.ipc);
            cfg.condense.inner_loops = t;
            cfg.condense.net_steps = s;
        }
        take_into!(kv, "condense.outer_iters", cfg.condense.outer_iters);
        take_into!(kv, "condense.inner_loops", cfg.condense.inner_loops);
        take_into!(kv, "condense.syn_steps", cfg.condense.syn_steps);
        take_into!(kv, "condense.net_steps", cfg.condense.net_steps);
        take_into!(kv, "condense.lr_syn", cfg.condense.lr_syn);
        take_into!(kv, "condense.lr_net", cfg.condense.lr_net);
        take_into!(kv, "condense.momentum_syn", cfg.condense.momentum_syn);
        take_into!(kv, "condense.momentum_net", cfg.condense.momentum_net);
        take_into!(kv, "condense.batch_real", cfg.condense.batch_real);
        take_into!(kv, "condense.batch_syn", cfg.condense.batch_syn);
        take_into!(kv, "condense.init", cfg.condense.init);
        take_into!(kv, "condense.omega_draws", cfg.condense.omega_draws);
        take_into!(kv, "condense.resample_real", cfg.condense.resample_real);
        take_into!(kv, "condense.seed", cfg.condense.seed);
        take_into!(kv, "condense.divergence_limit", cfg.condense.divergence_limit);
        let mut opts = MatchOptions::default();
        take_into!(kv, "condense.eps", opts.eps);
        take_into!(kv, "condense.include_norm_affine", opts.include_norm_affine);
        cfg.condense.match_opts = opts;
        if let Some(v) = kv.take("condense.diagnostics_at") {
            cfg.condense.diagnostics_at = parse_index_list("condense.diagnostics_at", &v)?;
        }

        let mut scheme: Option<Scheme> = None;
        if let Some(v) = kv.take("condense.scheme") {
            scheme = Some(parse_as("condense.scheme", &v)?);
        }

        let mut strategy = AugStrategy::Combination;
        take_into!(kv, "augment.strategy", strategy);
        let mut dist = AugDistribution::new(strategy);
        let mut exclude_flip_auto = true;
        if let Some(v) = kv.take("augment.exclude_flip") {
            if v == "auto" {
                exclude_flip_auto = true;
            } else {
                exclude_flip_auto = false;
                dist.exclude_flip = parse_as("augment.exclude_flip", &v)?;
            }
        }
        take_into!(kv, "augment.crop_pad_frac", dist.ranges.crop_pad_frac);
        take_into!(kv, "augment.cutout_frac", dist.ranges.cutout_frac);
        take_into!(kv, "augment.scale_lo", dist.ranges.scale_lo);
        take_into!(kv, "augment.scale_hi", dist.ranges.scale_hi);
        take_into!(kv, "augment.rotate_deg", dist.ranges.rotate_deg);
        take_into!(kv, "augment.brightness", dist.ranges.brightness);
        take_into!(kv, "augment.saturation_max", dist.ranges.saturation_max);
        take_into!(kv, "augment.contrast_lo", dist.ranges.contrast_lo);
        take_into!(kv, "augment.contrast_hi", dist.ranges.contrast_hi);
        cfg.condense.aug = dist.clone();

        take_into!(kv, "condense.real_aug", cfg.condense.real_aug);
        take_into!(kv, "condense.syn_aug", cfg.condense.syn_aug);
        take_into!(kv, "condense.net_aug", cfg.condense.net_aug);

        let mut eval_arch_key: Option<String> = None;
        if let Some(v) = kv.take("eval.arch") {
            eval_arch_key = Some(v);
        }
        take_into!(kv, "eval.epochs", cfg.eval.epochs);
        take_into!(kv, "eval.lr", cfg.eval.lr);
        take_into!(kv, "eval.decay_at", cfg.eval.decay_at);
        take_into!(kv, "eval.decay_factor", cfg.eval.decay_factor);
        take_into!(kv, "eval.momentum", cfg.eval.momentum);
        take_into!(kv, "eval.batch", cfg.eval.batch);
        take_into!(kv, "eval.sets", cfg.eval.sets);
        take_into!(kv, "eval.nets", cfg.eval.nets);
        take_into!(kv, "eval.seed", cfg.eval.seed);
        let mut eval_aug = EvalAugKey::Auto;
        if let Some(v) = kv.take("eval.aug") {
            eval_aug = match v.as_str() {
                "auto" => EvalAugKey::Auto,
                "none" => EvalAugKey::Off,
                other => EvalAugKey::Strategy(parse_as("eval.aug", other)?),
            };
        }

        if let Some(v) = kv.take("output.dir") {
            cfg.output.dir = PathBuf::from(v);
        }

        kv.finish()?;

        if let Some(s) = scheme {
            cfg.condense.apply_scheme(s);
        }
        cfg.scheme = scheme;
        cfg.eval.aug = match eval_aug {
            EvalAugKey::Off => None,
            EvalAugKey::Strategy(s) => {
                let mut d = dist.clone();
                d.strategy = s;
                Some(d)
            }
            EvalAugKey::Auto => {
                let on = scheme.map(Scheme::eval_aug).unwrap_or(true);
                if on {
                    Some(dist.clone())
                } else {
                    None
                }
            }
        };
        if exclude_flip_auto {
            let digit = matches!(cfg.dataset.name.as_str(), "mnist" | "svhn" | "usps");
            cfg.condense.aug.exclude_flip = digit;
            if let Some(d) = &mut cfg.eval.aug {
                d.exclude_flip = digit;
            }
        }

        if let Some(label) = eval_arch_key {
            if label != "same" {
                let arch = ArchSpec::parse_label(
                    &label,
                    cfg.condense.arch.input,
                    cfg.condense.arch.classes,
                )
                .map_err(|detail| ConfigError::BadValue { key: "eval.arch".into(), detail })?;
                cfg.eval.arch = arch;
                return Ok(cfg);
            }
        }
        cfg.eval.arch = cfg.condense.arch;
        Ok(cfg)
    }

    /// Stamps the dataset geometry into both architectures.
    pub fn bind_geometry(&mut self, input: (usize, usize, usize), classes: usize) {
        self.condense.arch.input = input;
        self.condense.arch.classes = classes;
        self.eval.arch.input = input;
        self.eval.arch.classes = classes;
    }

    /// The fully resolved snapshot written into artifacts: parsing it back
    /// reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[dataset]\n");
        s.push_str(&format!("name = {}\n", self.dataset.name));
        if let Some(root) = &self.dataset.root {
            s.push_str(&format!("root = {}\n", root.display()));
        }
        s.push_str(&format!("train_per_class = {}\n", self.dataset.train_per_class));
        s.push_str(&format!("test_per_class = {}\n", self.dataset.test_per_class));

        s.push_str("\n[arch]\n");
        s.push_str(&self.condense.arch.to_kv());

        s.push_str("\n[condense]\n");
        let c = &self.condense;
        s.push_str(&format!("ipc = {}\n", c.ipc));
        s.push_str(&format!("outer_iters = {}\n", c.outer_iters));
        s.push_str(&format!("inner_loops = {}\n", c.inner_loops));
        s.push_str(&format!("syn_steps = {}\n", c.syn_steps));
        s.push_str(&format!("net_steps = {}\n", c.net_steps));
        s.push_str(&format!("lr_syn = {}\n", c.lr_syn));
        s.push_str(&format!("lr_net = {}\n", c.lr_net));
        s.push_str(&format!("momentum_syn = {}\n", c.momentum_syn));
        s.push_str(&format!("momentum_net = {}\n", c.momentum_net));
        s.push_str(&format!("batch_real = {}\n", c.batch_real));
        s.push_str(&format!("batch_syn = {}\n", c.batch_syn));
        s.push_str(&format!("init = {}\n", c.init));
        s.push_str(&format!("real_aug = {}\n", c.real_aug));
        s.push_str(&format!("syn_aug = {}\n", c.syn_aug));
        s.push_str(&format!("net_aug = {}\n", c.net_aug));
        s.push_str(&format!("omega_draws = {}\n", c.omega_draws));
        s.push_str(&format!("resample_real = {}\n", c.resample_real));
        s.push_str(&format!("eps = {}\n", c.match_opts.eps));
        s.push_str(&format!(
            "include_norm_affine = {}\n",
            c.match_opts.include_norm_affine
        ));
        s.push_str(&format!("seed = {}\n", c.seed));
        s.push_str(&format!("divergence_limit = {}\n", c.divergence_limit));
        if !c.diagnostics_at.is_empty() {
            let list: Vec<String> = c.diagnostics_at.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("diagnostics_at = {}\n", list.join(",")));
        }
        if let Some(sch) = self.scheme {
            s.push_str(&format!("scheme = {sch}\n"));
        }

        s.push_str("\n[augment]\n");
        let r = &c.aug.ranges;
        s.push_str(&format!("strategy = {}\n", c.aug.strategy));
        s.push_str(&format!("exclude_flip = {}\n", c.aug.exclude_flip));
        s.push_str(&format!("crop_pad_frac = {}\n", r.crop_pad_frac));
        s.push_str(&format!("cutout_frac = {}\n", r.cutout_frac));
        s.push_str(&format!("scale_lo = {}\n", r.scale_lo));
        s.push_str(&format!("scale_hi = {}\n", r.scale_hi));
        s.push_str(&format!("rotate_deg = {}\n", r.rotate_deg));
        s.push_str(&format!("brightness = {}\n", r.brightness));
        s.push_str(&format!("saturation_max = {}\n", r.saturation_max));
        s.push_str(&format!("contrast_lo = {}\n", r.contrast_lo));
        s.push_str(&format!("contrast_hi = {}\n", r.contrast_hi));

        s.push_str("\n[eval]\n");
        let e = &self.eval;
        if e.arch == self.condense.arch {
            s.push_str("arch = same\n");
        } else {
            s.push_str(&format!("arch = {}\n", e.arch.label()));
        }
        s.push_str(&format!("epochs = {}\n", e.epochs));
        s.push_str(&format!("lr = {}\n", e.lr));
        s.push_str(&format!("decay_at = {}\n", e.decay_at));
        s.push_str(&format!("decay_factor = {}\n", e.decay_factor));
        s.push_str(&format!("momentum = {}\n", e.momentum));
        s.push_str(&format!("batch = {}\n", e.batch));
        s.push_str(&format!(
            "aug = {}\n",
            match &e.aug {
                None => "none".to_string(),
                Some(d) => d.strategy.to_string(),
            }
        ));
        s.push_str(&format!("sets = {}\n", e.sets));
        s.push_str(&format!("nets = {}\n", e.nets));
        s.push_str(&format!("seed = {}\n", e.seed));

        s.push_str("\n[output]\n");
        s.push_str(&format!("dir = {}\n", self.output.dir.display()));
        s
    }
}

fn parse_index_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| parse_as::<usize>(key, p.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::AugMode;
    use crate::zoo::{Activation, NormKind};

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::from_text("", &[]).unwrap();
        assert_eq!(cfg.dataset.name, "mnist");
        assert_eq!(cfg.condense.ipc, 10);
        assert_eq!(cfg.condense.inner_loops, 10);
        assert_eq!(cfg.condense.net_steps, 50);
        assert_eq!(cfg.eval.sets, 5);
        assert_eq!(cfg.eval.nets, 20);
        assert!(cfg.eval.aug.is_some());
        assert!(cfg.condense.aug.exclude_flip, "mnist is digit-like");
    }

    #[test]
    fn sections_comments_and_values_parse() {
        let text = "\
# experiment
[dataset]
name = fashion   ; inline comment
[condense]
ipc = 1
seed = 9
[arch]
width = 64
activation = sigmoid
[eval]
nets = 3
aug = none
";
        let cfg = ExperimentConfig::from_text(text, &[]).unwrap();
        assert_eq!(cfg.dataset.name, "fashion");
        assert_eq!(cfg.condense.ipc, 1);
        assert_eq!(cfg.condense.inner_loops, 1);
        assert_eq!(cfg.condense.net_steps, 1);
        assert_eq!(cfg.condense.seed, 9);
        assert_eq!(cfg.condense.arch.width, 64);
        assert_eq!(cfg.condense.arch.activation, Activation::Sigmoid);
        assert_eq!(cfg.eval.nets, 3);
        assert!(cfg.eval.aug.is_none());
        assert!(!cfg.condense.aug.exclude_flip, "fashion tolerates flips");
    }

    #[test]
    fn unknown_keys_are_rejected_by_full_name() {
        let err = ExperimentConfig::from_text("[condense]\nipcs = 10\n", &[]).unwrap_err();
        match err {
            ConfigError::UnknownKey(k) => assert_eq!(k, "condense.ipcs"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
        assert!(ExperimentConfig::from_text("[nonsense]\nx = 1\n", &[]).is_err());
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = ExperimentConfig::from_text("[dataset]\nname mnist\n", &[]).unwrap_err();
        match err {
            ConfigError::Parse { line: 2, .. } => {}
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::from_text("x = 1\n", &[]),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_text("[dataset\nname = mnist\n", &[]),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_text("[a]\nx = 1\n[a]\nx = 2\n", &[]),
            Err(ConfigError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn overrides_layer_on_top() {
        let cfg = ExperimentConfig::from_text(
            "[condense]\nipc = 1\n",
            &["condense.ipc=50".into(), "eval.nets=2".into()],
        )
        .unwrap();
        assert_eq!(cfg.condense.ipc, 50);
        assert_eq!(cfg.condense.inner_loops, 50);
        assert_eq!(cfg.condense.net_steps, 10);
        assert_eq!(cfg.eval.nets, 2);
        assert!(matches!(
            ExperimentConfig::from_text("", &["nodot".into()]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn scheme_sets_placement_and_eval_aug() {
        let cfg =
            ExperimentConfig::from_text("[condense]\nscheme = a\n", &[]).unwrap();
        assert_eq!(cfg.condense.real_aug, AugMode::Off);
        assert_eq!(cfg.condense.syn_aug, AugMode::Off);
        assert!(!cfg.condense.net_aug);
        assert!(cfg.eval.aug.is_none());
        let ours =
            ExperimentConfig::from_text("[condense]\nscheme = ours\n", &[]).unwrap();
        assert_eq!(ours.condense.real_aug, AugMode::Siamese);
        assert!(ours.eval.aug.is_some());
        let d = ExperimentConfig::from_text("[condense]\nscheme = d\n", &[]).unwrap();
        assert_eq!(d.condense.real_aug, AugMode::Off);
        assert_eq!(d.condense.syn_aug, AugMode::Independent);
        assert!(d.eval.aug.is_some());
    }

    #[test]
    fn explicit_eval_aug_beats_the_scheme() {
        let cfg = ExperimentConfig::from_text(
            "[condense]\nscheme = a\n[eval]\naug = crop\n",
            &[],
        )
        .unwrap();
        let d = cfg.eval.aug.unwrap();
        assert_eq!(d.strategy.to_string(), "crop");
    }

    #[test]
    fn eval_arch_label_parses() {
        let cfg = ExperimentConfig::from_text(
            "[eval]\narch = convnet-d1-w32-leakyrelu-group-max\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.eval.arch.depth, 1);
        assert_eq!(cfg.eval.arch.width, 32);
        assert_eq!(cfg.eval.arch.norm, NormKind::Group);
        assert!(matches!(
            ExperimentConfig::from_text("[eval]\narch = convnet-w32\n", &[]),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn snapshot_round_trips() {
        let text = "\
[dataset]
name = fashion
train_per_class = 100
[arch]
depth = 2
width = 32
[condense]
ipc = 1
seed = 4
diagnostics_at = 0,5
scheme = e
[augment]
rotate_deg = 10
[eval]
nets = 2
epochs = 20
[output]
dir = artifacts
";
        let cfg = ExperimentConfig::from_text(text, &[]).unwrap();
        let snapshot = cfg.to_text();
        let back = ExperimentConfig::from_text(&snapshot, &[]).unwrap();
        assert_eq!(back.to_text(), snapshot);
        assert_eq!(back.condense.arch, cfg.condense.arch);
        assert_eq!(back.condense.ipc, cfg.condense.ipc);
        assert_eq!(back.condense.diagnostics_at, vec![0, 5]);
        assert_eq!(back.condense.real_aug, AugMode::Siamese);
        assert!(back.eval.aug.is_none(), "scheme e trains evaluation without augmentation");
        assert_eq!(back.eval.epochs, 20);
        assert_eq!(back.output.dir, PathBuf::from("artifacts"));
        assert!((back.condense.aug.ranges.rotate_deg - 10.0).abs() < 1e-12);
    }

    #[test]
    fn geometry_binding_rewrites_both_archs() {
        let mut cfg = ExperimentConfig::from_text("", &[]).unwrap();
        cfg.bind_geometry((3, 32, 32), 100);
        assert_eq!(cfg.condense.arch.input, (3, 32, 32));
        assert_eq!(cfg.eval.arch.classes, 100);
    }
}
