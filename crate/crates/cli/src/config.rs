//! Run configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! [model]
//! latent_dims = 2, 2
//! ```
//!
//! Unknown sections or keys, duplicates and malformed values are rejected
//! with the line number and the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use hieb_core::diffcore::Activation;
use hieb_core::langevin::FreeInit;
use hieb_core::trainer::LrSchedule;
use sha2::{Digest, Sha256};

pub const KEYS_HELP: &str = "\
CONFIG FILE
  Sections and keys (defaults in parentheses). Lists are comma-separated.

  [model]
    latent_dims        d_1, ..., d_L, bottom first (required)
    feature_dims       widths of h_2 .. h_L (obs_dim/2, obs_dim/4, ...)
    hidden             generator hidden width (64)
    inference_hidden   inference hidden width (same as hidden)
    nef                energy hidden width; 0 freezes f = 0 (100)
    sigma              observation noise (0.3)
    gen_hidden_layers  hidden layers per generator block (2)
    inf_hidden_layers  hidden layers per inference rung (1)
    activation         leaky_relu | tanh | identity (leaky_relu)
    output_activation  activation of the data-layer output (tanh)

  [langevin]
    steps              K, prior Langevin steps (40)
    step_size          s (0.1)
    long_steps         chain length for the energy profile (2500)
    chains             samples drawn by `sample` (64)
    init               free-layer start for `hiersample`: noise | keep (noise)

  [train]
    iterations         T (1000)
    batch_size         m (64)
    lr_prior           eta_alpha (5e-5)
    lr_gen             eta_beta (1e-4)
    lr_inf             eta_phi (1e-4)
    seed               (0)
    log_every          metrics row cadence (100)
    checkpoint_every   checkpoint cadence (1000)
    eval_every         anomaly evaluation cadence, 0 = off (0)
    schedule           constant | linear (constant)
    record_wall_time   fill the wall_ms column (false)

  [data]
    source             synthetic | idx | hebd (synthetic)
    n_classes, levels, obs_dim, noise_std, n_samples, seed
    style_min, style_max, style_bend
    class_amplitude, style_amplitude, local_amplitude
                       synthetic generator (3, 2, 64, 0.1, 3000, 0, -1, 1, 0, 0.4, 0.3, 0.15)
    images, labels     IDX files, gzip accepted (source = idx)
    path               HEBD file (source = hebd)
    holdout_class      class removed from training, scored as anomalous
    test_fraction      held-out share when no class is held out (0.2)

  [eval]
    probe_hidden, probe_epochs, probe_lr, probe_batch, probe_train_fraction
                       (256, 30, 1e-3, 64, 0.8)
    probe_features     mean | sample (mean)
    sweep_min, sweep_max, sweep_steps   traversal sweep (-3, 3, 9)
    variants           resampled variants per base (8)
    bases              base examples for hiersample (4)
    anomaly_samples    posterior draws per anomaly score (8)
    snapshot_every     energy-profile decode cadence (100)
    energy_chains      chains in the energy profile (16)
    ablate_steps       K values swept by `ablate`
    ablate_nef         nef values swept by `ablate`
";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub keys: Vec<String>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if !self.keys.is_empty() {
            write!(f, "{}: ", self.keys.join(", "))?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, keys: &[&str], msg: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        keys: keys.iter().map(|k| k.to_string()).collect(),
        msg: msg.into(),
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "latent_dims",
            "feature_dims",
            "hidden",
            "inference_hidden",
            "nef",
            "sigma",
            "gen_hidden_layers",
            "inf_hidden_layers",
            "activation",
            "output_activation",
        ],
    ),
    ("langevin", &["steps", "step_size", "long_steps", "chains", "init"]),
    (
        "train",
        &[
            "iterations",
            "batch_size",
            "lr_prior",
            "lr_gen",
            "lr_inf",
            "seed",
            "log_every",
            "checkpoint_every",
            "eval_every",
            "schedule",
            "record_wall_time",
        ],
    ),
    (
        "data",
        &[
            "source",
            "n_classes",
            "levels",
            "obs_dim",
            "noise_std",
            "n_samples",
            "seed",
            "style_min",
            "style_max",
            "style_bend",
            "class_amplitude",
            "style_amplitude",
            "local_amplitude",
            "images",
            "labels",
            "path",
            "holdout_class",
            "test_fraction",
        ],
    ),
    (
        "eval",
        &[
            "probe_hidden",
            "probe_epochs",
            "probe_lr",
            "probe_batch",
            "probe_train_fraction",
            "probe_features",
            "sweep_min",
            "sweep_max",
            "sweep_steps",
            "variants",
            "bases",
            "anomaly_samples",
            "snapshot_every",
            "energy_chains",
            "ablate_steps",
            "ablate_nef",
        ],
    ),
];

/// Parsed `section.key → (value, line)` pairs.
#[derive(Debug, Clone, Default)]
struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line), &[], format!("malformed section header `{content}`")))?
                    .trim();
                section = Some(
                    SECTIONS
                        .iter()
                        .find(|(s, _)| *s == name)
                        .map(|(s, _)| *s)
                        .ok_or_else(|| err(Some(line), &[], format!("unknown section [{name}]")))?,
                );
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(Some(line), &[], format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            let sec = section.ok_or_else(|| err(Some(line), &[key], "key outside any section"))?;
            let full = format!("{sec}.{key}");
            let known = SECTIONS.iter().find(|(s, _)| *s == sec).expect("section").1;
            if !known.contains(&key) {
                return Err(err(Some(line), &[&full], "unknown key"));
            }
            if let Some((_, first)) = map.get(&full) {
                return Err(err(Some(line), &[&full], format!("duplicate key (first set on line {first})")));
            }
            map.insert(full, (value.trim().to_string(), line));
        }
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        self.map.get(key)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.map.get(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| err(Some(*line), &[key], format!("cannot parse `{v}`"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| err(Some(*line), &[key], format!("cannot parse `{v}`"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| err(Some(*line), &[key], format!("cannot parse list item `{}`", p.trim())))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(_, l)| *l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub latent_dims: Vec<usize>,
    pub feature_dims: Option<Vec<usize>>,
    pub hidden: usize,
    pub inference_hidden: usize,
    pub nef: usize,
    pub sigma: f64,
    pub gen_hidden_layers: usize,
    pub inf_hidden_layers: usize,
    pub activation: Activation,
    pub output_activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinSection {
    pub steps: usize,
    pub step_size: f64,
    pub long_steps: usize,
    pub chains: usize,
    pub init: FreeInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_prior: f64,
    pub lr_gen: f64,
    pub lr_inf: f64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub schedule: LrSchedule,
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Idx { images: PathBuf, labels: PathBuf },
    Hebd { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub synthetic: hieb_core::SyntheticSpec,
    pub holdout_class: Option<u32>,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub probe: hieb_core::eval::ProbeConfig,
    pub sweep: (f64, f64, usize),
    pub variants: usize,
    pub bases: usize,
    pub anomaly_samples: usize,
    pub snapshot_every: usize,
    pub energy_chains: usize,
    pub ablate_steps: Vec<usize>,
    pub ablate_nef: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub langevin: LangevinSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

fn parse_activation(e: &Entries, key: &str, default: Activation) -> Result<Activation, ConfigError> {
    match e.raw(key) {
        None => Ok(default),
        Some((v, line)) => Activation::parse(v).ok_or_else(|| {
            err(
                Some(*line),
                &[key],
                format!("unknown activation `{v}` (leaky_relu, tanh, identity)"),
            )
        }),
    }
}

fn choice<T: Copy>(e: &Entries, key: &str, default: T, options: &[(&str, T)]) -> Result<T, ConfigError> {
    match e.raw(key) {
        None => Ok(default),
        Some((v, line)) => options.iter().find(|(name, _)| name == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            err(Some(*line), &[key], format!("`{v}` is not one of {}", names.join(", ")))
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let e = Entries::parse(text)?;
        let latent_dims: Vec<usize> = e
            .list("model.latent_dims")?
            .ok_or_else(|| err(None, &["model.latent_dims"], "required key is missing"))?;
        let hidden = e.get("model.hidden", 64)?;
        let model = ModelSection {
            feature_dims: e.list("model.feature_dims")?,
            hidden,
            inference_hidden: e.get("model.inference_hidden", hidden)?,
            nef: e.get("model.nef", 100)?,
            sigma: e.get("model.sigma", 0.3)?,
            gen_hidden_layers: e.get("model.gen_hidden_layers", 2)?,
            inf_hidden_layers: e.get("model.inf_hidden_layers", 1)?,
            activation: parse_activation(&e, "model.activation", Activation::LeakyRelu)?,
            output_activation: parse_activation(&e, "model.output_activation", Activation::Tanh)?,
            latent_dims,
        };
        let langevin = LangevinSection {
            steps: e.get("langevin.steps", 40)?,
            step_size: e.get("langevin.step_size", 0.1)?,
            long_steps: e.get("langevin.long_steps", 2500)?,
            chains: e.get("langevin.chains", 64)?,
            init: choice(
                &e,
                "langevin.init",
                FreeInit::Noise,
                &[("noise", FreeInit::Noise), ("keep", FreeInit::Keep)],
            )?,
        };
        let train = TrainSection {
            iterations: e.get("train.iterations", 1000)?,
            batch_size: e.get("train.batch_size", 64)?,
            lr_prior: e.get("train.lr_prior", 5e-5)?,
            lr_gen: e.get("train.lr_gen", 1e-4)?,
            lr_inf: e.get("train.lr_inf", 1e-4)?,
            seed: e.get("train.seed", 0)?,
            log_every: e.get("train.log_every", 100)?,
            checkpoint_every: e.get("train.checkpoint_every", 1000)?,
            eval_every: e.get("train.eval_every", 0)?,
            schedule: choice(
                &e,
                "train.schedule",
                LrSchedule::Constant,
                &[("constant", LrSchedule::Constant), ("linear", LrSchedule::LinearDecay)],
            )?,
            record_wall_time: e.get("train.record_wall_time", false)?,
        };
        let defaults = hieb_core::SyntheticSpec::default();
        let synthetic = hieb_core::SyntheticSpec {
            n_classes: e.get("data.n_classes", defaults.n_classes)?,
            levels: e.get("data.levels", defaults.levels)?,
            obs_dim: e.get("data.obs_dim", defaults.obs_dim)?,
            noise_std: e.get("data.noise_std", defaults.noise_std)?,
            style_range: (
                e.get("data.style_min", defaults.style_range.0)?,
                e.get("data.style_max", defaults.style_range.1)?,
            ),
            seed: e.get("data.seed", defaults.seed)?,
            n_samples: e.get("data.n_samples", defaults.n_samples)?,
            amplitudes: (
                e.get("data.class_amplitude", defaults.amplitudes.0)?,
                e.get("data.style_amplitude", defaults.amplitudes.1)?,
                e.get("data.local_amplitude", defaults.amplitudes.2)?,
            ),
            style_bend: e.get("data.style_bend", defaults.style_bend)?,
        };
        let resolve = |key: &str| -> Result<PathBuf, ConfigError> {
            let (v, _) = e
                .raw(key)
                .ok_or_else(|| err(e.line("data.source"), &["data.source", key], "path is required for this source"))?;
            let p = PathBuf::from(v);
            Ok(if p.is_absolute() { p } else { base_dir.join(p) })
        };
        let source = match e.raw("data.source").map(|(v, _)| v.as_str()).unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic,
            "idx" => DataSource::Idx {
                images: resolve("data.images")?,
                labels: resolve("data.labels")?,
            },
            "hebd" => DataSource::Hebd {
                path: resolve("data.path")?,
            },
            other => {
                return Err(err(
                    e.line("data.source"),
                    &["data.source"],
                    format!("`{other}` is not one of synthetic, idx, hebd"),
                ))
            }
        };
        let data = DataSection {
            source,
            synthetic,
            holdout_class: e.opt("data.holdout_class")?,
            test_fraction: e.get("data.test_fraction", 0.2)?,
        };
        let pdef = hieb_core::eval::ProbeConfig::default();
        let eval = EvalSection {
            probe: hieb_core::eval::ProbeConfig {
                hidden: e.get("eval.probe_hidden", pdef.hidden)?,
                epochs: e.get("eval.probe_epochs", pdef.epochs)?,
                batch_size: e.get("eval.probe_batch", pdef.batch_size)?,
                lr: e.get("eval.probe_lr", pdef.lr)?,
                train_frac: e.get("eval.probe_train_fraction", pdef.train_frac)?,
                seed: train.seed,
                features: choice(
                    &e,
                    "eval.probe_features",
                    pdef.features,
                    &[
                        ("mean", hieb_core::eval::ProbeFeatures::Mean),
                        ("sample", hieb_core::eval::ProbeFeatures::Sample),
                    ],
                )?,
            },
            sweep: (
                e.get("eval.sweep_min", -3.0)?,
                e.get("eval.sweep_max", 3.0)?,
                e.get("eval.sweep_steps", 9)?,
            ),
            variants: e.get("eval.variants", 8)?,
            bases: e.get("eval.bases", 4)?,
            anomaly_samples: e.get("eval.anomaly_samples", 8)?,
            snapshot_every: e.get("eval.snapshot_every", 100)?,
            energy_chains: e.get("eval.energy_chains", 16)?,
            ablate_steps: e.list("eval.ablate_steps")?.unwrap_or_default(),
            ablate_nef: e.list("eval.ablate_nef")?.unwrap_or_default(),
        };
        let cfg = Self {
            model,
            langevin,
            train,
            data,
            eval,
        };
        cfg.check(&e)?;
        Ok(cfg)
    }

    fn check(&self, e: &Entries) -> Result<(), ConfigError> {
        let m = &self.model;
        let l = m.latent_dims.len();
        let at = |k: &str| e.line(k);
        if l == 0 || m.latent_dims.contains(&0) {
            return Err(err(at("model.latent_dims"), &["model.latent_dims"], "dims must be positive"));
        }
        if let Some(f) = &m.feature_dims {
            if f.len() + 1 != l {
                return Err(err(
                    at("model.feature_dims"),
                    &["model.feature_dims", "model.latent_dims"],
                    format!("{} latent layers need {} feature widths, got {}", l, l - 1, f.len()),
                ));
            }
        }
        if !(m.sigma > 0.0) {
            return Err(err(at("model.sigma"), &["model.sigma"], "must be positive"));
        }
        if !(self.langevin.step_size > 0.0) {
            return Err(err(at("langevin.step_size"), &["langevin.step_size"], "must be positive"));
        }
        if self.langevin.chains == 0 {
            return Err(err(at("langevin.chains"), &["langevin.chains"], "must be positive"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(err(at("train.batch_size"), &["train.batch_size"], "must be positive"));
        }
        if t.iterations > 0 && self.langevin.steps == 0 {
            return Err(err(at("langevin.steps"), &["langevin.steps"], "training needs at least one step"));
        }
        for k in ["lr_prior", "lr_gen", "lr_inf"] {
            let v = match k {
                "lr_prior" => t.lr_prior,
                "lr_gen" => t.lr_gen,
                _ => t.lr_inf,
            };
            if !(v >= 0.0) || !v.is_finite() {
                let key = format!("train.{k}");
                return Err(err(at(&key), &[&key], "must be finite and non-negative"));
            }
        }
        if t.log_every == 0 || t.checkpoint_every == 0 {
            return Err(err(None, &["train.log_every", "train.checkpoint_every"], "must be positive"));
        }
        if self.data.source == DataSource::Synthetic {
            self.data
                .synthetic
                .validate()
                .map_err(|x| err(at("data.source"), &["data"], x.to_string()))?;
            let n = self.data.synthetic.n_samples;
            if t.batch_size > n {
                return Err(err(
                    at("train.batch_size"),
                    &["train.batch_size", "data.n_samples"],
                    format!("batch size {} exceeds {n} samples", t.batch_size),
                ));
            }
            if let Some(c) = self.data.holdout_class {
                if c >= self.data.synthetic.n_classes {
                    return Err(err(
                        at("data.holdout_class"),
                        &["data.holdout_class", "data.n_classes"],
                        format!("class {c} does not exist"),
                    ));
                }
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(err(at("data.test_fraction"), &["data.test_fraction"], "must lie in (0, 1)"));
        }
        if self.eval.sweep.2 == 0 || self.eval.variants == 0 || self.eval.bases == 0 {
            return Err(err(None, &["eval.sweep_steps", "eval.variants", "eval.bases"], "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over every resolved setting that determines training: all
    /// sections except `[eval]`, and not the iteration count (so a run can be
    /// extended from its checkpoint).
    pub fn hash(&self) -> [u8; 32] {
        let mut train = self.train.clone();
        train.iterations = 0;
        let canonical = format!("{:?}\n{:?}\n{:?}\n{:?}", self.model, self.langevin, train, self.data);
        Sha256::digest(canonical.as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("."))
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse("[model]\nlatent_dims = 2, 2\n").unwrap();
        assert_eq!(c.model.latent_dims, vec![2, 2]);
        assert_eq!(c.langevin.steps, 40);
        assert_eq!(c.train.lr_prior, 5e-5);
        assert_eq!(c.data.source, DataSource::Synthetic);
    }

    #[test]
    fn errors_carry_line_and_key() {
        let e = parse("[model]\nlatent_dims = 2\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.keys, vec!["model.bogus"]);
        let e = parse("[model]\nlatent_dims = 2, 2\nfeature_dims = 8, 8\n").unwrap_err();
        assert!(e.keys.contains(&"model.feature_dims".to_string()));
        let e = parse("[model]\nlatent_dims = 2\n[train]\nbatch_size = x\n").unwrap_err();
        assert_eq!((e.line, e.keys.clone()), (Some(4), vec!["train.batch_size".to_string()]));
        assert!(parse("[model]\nlatent_dims = 2\nlatent_dims = 3\n").is_err());
        assert!(parse("latent_dims = 2\n").is_err());
    }

    #[test]
    fn hash_ignores_eval_and_iterations() {
        let a = parse("[model]\nlatent_dims = 2\n[train]\niterations = 5\n").unwrap();
        let b = parse("[model]\nlatent_dims = 2\n[train]\niterations = 9\n[eval]\nvariants = 3\n").unwrap();
        let c = parse("[model]\nlatent_dims = 2\nnef = 3\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
