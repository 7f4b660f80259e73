//! Turns a [`RunConfig`] into data, model and trainer settings.

use hieb_core::data::{gen_synthetic, read_hebd, read_idx_file, without_class, NearestTemplate};
use hieb_core::{LabeledDataset, LangevinConfig, Model, ModelSpec, TrainConfig, TrainState};

use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult, Kind};

pub struct Prepared {
    /// Every loaded row.
    pub all: LabeledDataset<f64>,
    /// Training rows: the train split without the held-out class.
    pub train: LabeledDataset<f64>,
    pub test: LabeledDataset<f64>,
    /// Per test row: belongs to the held-out class.
    pub anomalous: Option<Vec<bool>>,
    pub oracle: Option<NearestTemplate>,
}

fn load_all(cfg: &RunConfig) -> CliResult<(LabeledDataset<f64>, Option<NearestTemplate>)> {
    match &cfg.data.source {
        DataSource::Synthetic => {
            let (ds, templates) = gen_synthetic::<f64>(&cfg.data.synthetic).map_err(CliError::data)?;
            Ok((ds, Some(templates.oracle())))
        }
        DataSource::Idx { images, labels } => {
            let imgs = read_idx_file(images).map_err(CliError::data)?;
            let labs = read_idx_file(labels).map_err(CliError::data)?;
            let x = imgs.images::<f64>().map_err(CliError::data)?;
            let y = labs.labels().map_err(CliError::data)?;
            let dim = x.last_dim();
            let n_classes = y.iter().max().map_or(0, |m| m + 1);
            let ds = LabeledDataset::new(dim, x.into_data(), y, n_classes).map_err(CliError::data)?;
            Ok((ds, None))
        }
        DataSource::Hebd { path } => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::new(Kind::Data, format!("cannot read {}: {e}", path.display())))?;
            Ok((read_hebd::<f64>(&bytes).map_err(CliError::data)?, None))
        }
    }
}

pub fn prepare(cfg: &RunConfig) -> CliResult<Prepared> {
    let (all, oracle) = load_all(cfg)?;
    let split_seed = hieb_core::rng::derive(cfg.train.seed, &[hieb_core::rng::stream::DATA, 2]);
    let (train, test) = all
        .split(1.0 - cfg.data.test_fraction, split_seed)
        .map_err(CliError::data)?;
    let (train, anomalous) = match cfg.data.holdout_class {
        Some(c) => {
            if c >= all.n_classes {
                return Err(CliError {
                    kind: Kind::Config,
                    line: None,
                    keys: vec!["data.holdout_class".into()],
                    msg: format!("class {c} does not exist in a {}-class dataset", all.n_classes),
                });
            }
            let flags = test.labels.iter().map(|&l| l == c).collect();
            (without_class(&train, c).map_err(CliError::data)?, Some(flags))
        }
        None => (train, None),
    };
    if cfg.train.batch_size > train.len() {
        return Err(CliError {
            kind: Kind::Config,
            line: None,
            keys: vec!["train.batch_size".into()],
            msg: format!("batch size {} exceeds the {} training rows", cfg.train.batch_size, train.len()),
        });
    }
    Ok(Prepared { all, train, test, anomalous, oracle })
}

pub fn model_spec(cfg: &RunConfig, obs_dim: usize) -> CliResult<ModelSpec<f64>> {
    let m = &cfg.model;
    if cfg.data.source == DataSource::Synthetic && obs_dim != cfg.data.synthetic.obs_dim {
        return Err(CliError::new(Kind::Data, "synthetic rows disagree with data.obs_dim"));
    }
    let mut spec = ModelSpec::<f64>::new(&m.latent_dims, obs_dim, m.hidden);
    spec.nef = m.nef;
    let g = &mut spec.generator;
    if let Some(f) = &m.feature_dims {
        g.feature_dims = f.clone();
    }
    g.sigma = m.sigma;
    g.hidden_layers = m.gen_hidden_layers;
    g.activation = m.activation;
    g.output_activation = m.output_activation;
    spec.inference = hieb_core::InferenceSpec::new(obs_dim, &m.latent_dims, m.inference_hidden);
    spec.inference.hidden_layers = m.inf_hidden_layers;
    spec.inference.activation = m.activation;
    spec.validate()?;
    Ok(spec)
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig<f64> {
    let t = &cfg.train;
    let mut tc = TrainConfig::new(t.iterations, t.batch_size, t.seed);
    tc.lr_prior = t.lr_prior;
    tc.lr_gen = t.lr_gen;
    tc.lr_inf = t.lr_inf;
    tc.langevin = LangevinConfig::new(cfg.langevin.steps, cfg.langevin.step_size, t.batch_size, t.seed);
    tc.log_every = t.log_every;
    tc.checkpoint_every = t.checkpoint_every;
    tc.schedule = t.schedule;
    tc
}

pub fn fresh_state(cfg: &RunConfig, spec: &ModelSpec<f64>) -> CliResult<TrainState<f64>> {
    Ok(TrainState::new(Model::new(spec, cfg.train.seed)?, cfg.train.seed))
}

/// Restores a checkpoint, checking its configuration hash unless `force`.
pub fn load_state(
    cfg: &RunConfig,
    spec: &ModelSpec<f64>,
    path: &std::path::Path,
    force: bool,
) -> CliResult<TrainState<f64>> {
    let hash = cfg.hash();
    let expected = if force { None } else { Some(&hash) };
    let model = Model::new(spec, cfg.train.seed)?;
    hieb_core::load_checkpoint(path, model, expected).map_err(|e| match e {
        hieb_core::Error::Io(io) => CliError::new(Kind::Checkpoint, format!("cannot read {}: {io}", path.display())),
        hieb_core::Error::Checkpoint(m) if m.contains("hash") => {
            CliError::new(Kind::Checkpoint, format!("{m} (use --force to load anyway)"))
        }
        other => other.into(),
    })
}
