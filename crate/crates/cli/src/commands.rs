//! Subcommand bodies. Each writes its artifacts into `ctx.dir`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hieb_core::checkpoint::save_checkpoint;
use hieb_core::eval::{
    auprc, auroc, energy_profile, flip_rate, hierarchical_resample, linspace, mig_and_migsup, probe_layer, recon_mse,
    score_dataset, traversal_grid, ProbeConfig,
};
use hieb_core::langevin::langevin_sample;
use hieb_core::rng::{derive, stream};
use hieb_core::trainer::{elbo_estimate, fit, ElboVariant, StepMetrics};
use hieb_core::{LabeledDataset, LangevinConfig, Model, TrainState};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Kind};
use crate::output::{csv_writer, num, write_csv, write_pgm};
use crate::setup::{fresh_state, load_state, model_spec, prepare, train_config, Prepared};

pub const METRICS_HEADER: &[&str] = &["iter", "recon_nll", "kl_ref", "e_pos", "e_neg", "elbo_unnorm", "wall_ms"];

/// How many of the most recent anomaly evaluations the summary averages.
const ANOMALY_WINDOW: usize = 10;

pub struct Ctx {
    pub cfg: RunConfig,
    pub config_text: String,
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
    pub dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn eval_seed(&self, purpose: u64) -> u64 {
        derive(self.cfg.train.seed, &[stream::EVAL, purpose])
    }

    fn langevin(&self, steps: usize, chains: usize, purpose: u64) -> LangevinConfig<f64> {
        LangevinConfig::new(steps, self.cfg.langevin.step_size, chains, self.eval_seed(purpose))
    }

    fn require_checkpoint(&self) -> CliResult<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::new(Kind::Checkpoint, "this command needs --checkpoint PATH"))
    }

    fn loaded(&self) -> CliResult<(Prepared, TrainState<f64>)> {
        let data = prepare(&self.cfg)?;
        let spec = model_spec(&self.cfg, data.all.dim())?;
        let state = load_state(&self.cfg, &spec, self.require_checkpoint()?, self.force)?;
        Ok((data, state))
    }
}

fn checkpoint_name(t: u64) -> String {
    format!("checkpoint-{t:08}.hebc")
}

fn metrics_row(m: &StepMetrics<f64>, wall_ms: u128) -> Vec<String> {
    vec![
        m.iter.to_string(),
        num(m.recon_nll),
        num(m.kl_ref),
        num(m.e_pos),
        num(m.e_neg),
        num(m.elbo_unnorm),
        wall_ms.to_string(),
    ]
}

fn anomaly_metrics(ctx: &Ctx, model: &Model<f64>, data: &Prepared) -> CliResult<Option<(f64, f64)>> {
    let Some(flags) = &data.anomalous else { return Ok(None) };
    if flags.iter().all(|&f| f) || !flags.iter().any(|&f| f) {
        return Err(CliError::new(Kind::Data, "test split lacks either normal or held-out rows"));
    }
    let scored = score_dataset(model, &data.test, flags, ctx.cfg.eval.anomaly_samples, ctx.eval_seed(1))?;
    Ok(Some((auprc(&scored)?, auroc(&scored)?)))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub fn train(ctx: &Ctx) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let data = prepare(cfg)?;
    let spec = model_spec(cfg, data.all.dim())?;
    let tc = train_config(cfg);
    tc.validate()?;
    let hash = cfg.hash();
    let mut state = match &ctx.checkpoint {
        Some(p) => load_state(cfg, &spec, p, ctx.force)?,
        None => fresh_state(cfg, &spec)?,
    };
    std::fs::write(ctx.path("config.txt"), &ctx.config_text)?;
    let mut metrics = csv_writer(&ctx.path("metrics.csv"), METRICS_HEADER)?;
    let eval_on = cfg.train.eval_every > 0 && data.anomalous.is_some();
    let mut anomaly = if eval_on {
        Some(csv_writer(&ctx.path("anomaly.csv"), &["iter", "auprc", "auroc"])?)
    } else {
        None
    };
    let mut history: Vec<(f64, f64)> = Vec::new();
    if state.t == 0 || state.t >= tc.iterations {
        save_checkpoint(&ctx.path(&checkpoint_name(state.t)), &state, &hash)?;
    }

    let start = Instant::now();
    let mut failure: Option<CliError> = None;
    let result = fit(&mut state, &data.train, &tc, |st, m| {
        let mut run = || -> CliResult<()> {
            if m.iter % tc.log_every == 0 || st.t == tc.iterations {
                let wall = if cfg.train.record_wall_time { start.elapsed().as_millis() } else { 0 };
                metrics.write_record(metrics_row(m, wall))?;
                metrics.flush()?;
                log::info!("iter {} recon {:.4} kl {:.4} elbo {:.4}", m.iter, m.recon_nll, m.kl_ref, m.elbo_unnorm);
            }
            if st.t % tc.checkpoint_every == 0 || st.t == tc.iterations {
                save_checkpoint(&ctx.path(&checkpoint_name(st.t)), st, &hash)?;
            }
            if let Some(w) = anomaly.as_mut() {
                if st.t % cfg.train.eval_every == 0 {
                    if let Some((p, r)) = anomaly_metrics(ctx, &st.model, &data)? {
                        w.write_record([st.t.to_string(), num(p), num(r)])?;
                        w.flush()?;
                        history.push((p, r));
                    }
                }
            }
            Ok(())
        };
        run().map_err(|e| {
            let msg = e.msg.clone();
            failure = Some(e);
            hieb_core::Error::Data(msg)
        })
    });
    if let Err(e) = result {
        return Err(failure.take().unwrap_or_else(|| e.into()));
    }
    save_checkpoint(&ctx.path("final.hebc"), &state, &hash)?;

    if !history.is_empty() {
        let tail = &history[history.len().saturating_sub(ANOMALY_WINDOW)..];
        let (pm, ps) = mean_sd(&tail.iter().map(|h| h.0).collect::<Vec<_>>());
        let (rm, rs) = mean_sd(&tail.iter().map(|h| h.1).collect::<Vec<_>>());
        write_csv(
            &ctx.path("anomaly_summary.csv"),
            &["metric", "mean", "sd", "evaluations"],
            &[
                vec!["auprc".to_string(), num(pm), num(ps), tail.len().to_string()],
                vec!["auroc".to_string(), num(rm), num(rs), tail.len().to_string()],
            ],
        )?;
    }
    if tc.iterations > 0 {
        let samples = decode_samples(ctx, &state.model, cfg.langevin.steps, 2)?;
        write_pgm(&ctx.path("samples.pgm"), &grid(samples, 8))?;
    }
    Ok(())
}

fn decode_samples(ctx: &Ctx, model: &Model<f64>, steps: usize, purpose: u64) -> CliResult<Vec<Vec<f64>>> {
    let lc = ctx.langevin(steps, ctx.cfg.langevin.chains, purpose);
    langevin_sample(&model.energy, model.latent_dims(), &lc)?
        .iter()
        .map(|z| model.generator.decode(z).map_err(CliError::from))
        .collect()
}

/// Chunks a flat list of images into rows of `per_row`.
fn grid(images: Vec<Vec<f64>>, per_row: usize) -> Vec<Vec<Vec<f64>>> {
    images.chunks(per_row.max(1)).map(<[_]>::to_vec).collect()
}

pub fn sample(ctx: &Ctx) -> CliResult<()> {
    let (_, state) = ctx.loaded()?;
    let model = &state.model;
    let lc = ctx.langevin(ctx.cfg.langevin.steps, ctx.cfg.langevin.chains, 3);
    let latents = langevin_sample(&model.energy, model.latent_dims(), &lc)?;
    let mut rows = Vec::new();
    let mut images = Vec::with_capacity(latents.len());
    for (c, z) in latents.iter().enumerate() {
        for (l, layer) in z.layers().iter().enumerate() {
            for (u, v) in layer.iter().enumerate() {
                rows.push(vec![c.to_string(), l.to_string(), u.to_string(), num(*v)]);
            }
        }
        images.push(model.generator.decode(z)?);
    }
    write_csv(&ctx.path("samples_latent.csv"), &["chain", "layer", "unit", "value"], &rows)?;
    write_pgm(&ctx.path("samples.pgm"), &grid(images, 8))
}

pub fn hiersample(ctx: &Ctx) -> CliResult<()> {
    let (data, state) = ctx.loaded()?;
    let model = &state.model;
    let e = &ctx.cfg.eval;
    let n = e.bases.min(data.test.len());
    let lc = ctx.langevin(ctx.cfg.langevin.steps, e.variants, 4);
    for layer in 0..model.num_layers() {
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            let base = model.inference.infer(data.test.row(r))?.mean_stack();
            let lc = LangevinConfig { seed: derive(lc.seed, &[layer as u64, r as u64]), ..lc };
            let mut row = vec![model.generator.decode(&base)?];
            row.extend(hierarchical_resample(model, &base, layer, e.variants, ctx.cfg.langevin.init, &lc)?);
            rows.push(row);
        }
        write_pgm(&ctx.path(&format!("hiersample_layer{layer}.pgm")), &rows)?;
    }
    if let Some(oracle) = &data.oracle {
        let rows: Vec<&[f64]> = data.test.rows().take(100).collect();
        let mut out = Vec::new();
        for layer in 0..model.num_layers() {
            let lc = LangevinConfig { seed: derive(lc.seed, &[0xf11b, layer as u64]), ..lc };
            let rate = flip_rate(model, oracle, &rows, layer, e.variants, &lc)?;
            out.push(vec![layer.to_string(), num(rate)]);
        }
        write_csv(&ctx.path("hiersample_flip.csv"), &["layer", "flip_rate"], &out)?;
    }
    Ok(())
}

pub fn traverse(ctx: &Ctx) -> CliResult<()> {
    let (data, state) = ctx.loaded()?;
    let (lo, hi, steps) = ctx.cfg.eval.sweep;
    let sweep = linspace(lo, hi, steps);
    let g = traversal_grid(&state.model, data.test.row(0), &sweep)?;
    for (layer, rows) in g.rows.iter().enumerate() {
        write_pgm(&ctx.path(&format!("traverse_layer{layer}.pgm")), rows)?;
    }
    let rows: Vec<Vec<String>> = sweep.iter().enumerate().map(|(k, v)| vec![k.to_string(), num(*v)]).collect();
    write_csv(&ctx.path("traverse_sweep.csv"), &["column", "value"], &rows)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSelection {
    pub probe: bool,
    pub anomaly: bool,
    pub recon: bool,
    pub mig: bool,
    pub energy: bool,
}

impl EvalSelection {
    pub fn or_all(self) -> Self {
        if self.probe || self.anomaly || self.recon || self.mig || self.energy {
            self
        } else {
            Self { probe: true, anomaly: true, recon: true, mig: true, energy: true }
        }
    }
}

fn probe_config(ctx: &Ctx) -> ProbeConfig {
    ProbeConfig { seed: ctx.eval_seed(5), ..ctx.cfg.eval.probe.clone() }
}

/// Reconstruction and bound of the test split: `(mse, variance, elbo_unnorm)`.
fn recon_metrics(ctx: &Ctx, model: &Model<f64>, test: &LabeledDataset<f64>) -> CliResult<(f64, f64, f64)> {
    let mse = recon_mse(model, test)?;
    let rows: Vec<&[f64]> = test.rows().collect();
    let elbo = elbo_estimate(model, &rows, ctx.cfg.eval.anomaly_samples, ctx.eval_seed(6), ElboVariant::MonteCarlo)?;
    Ok((mse, test.variance(), elbo))
}

fn probe_metrics(ctx: &Ctx, model: &Model<f64>, all: &LabeledDataset<f64>) -> CliResult<Vec<f64>> {
    let pc = probe_config(ctx);
    (0..model.num_layers())
        .map(|l| probe_layer(model, all, l, &pc).map_err(CliError::from))
        .collect()
}

pub fn eval(ctx: &Ctx, sel: EvalSelection) -> CliResult<()> {
    let (data, state) = ctx.loaded()?;
    let model = &state.model;
    let sel = sel.or_all();
    if sel.probe {
        let rows: Vec<Vec<String>> = probe_metrics(ctx, model, &data.all)?
            .into_iter()
            .enumerate()
            .map(|(l, a)| vec![l.to_string(), num(a)])
            .collect();
        write_csv(&ctx.path("eval_probe.csv"), &["layer", "accuracy"], &rows)?;
    }
    if sel.recon {
        let (mse, var, elbo) = recon_metrics(ctx, model, &data.test)?;
        write_csv(
            &ctx.path("eval_recon.csv"),
            &["metric", "value"],
            &[
                vec!["recon_mse".into(), num(mse)],
                vec!["data_variance".into(), num(var)],
                vec!["elbo_unnorm".into(), num(elbo)],
            ],
        )?;
    }
    if sel.anomaly {
        match anomaly_metrics(ctx, model, &data)? {
            Some((p, r)) => write_csv(
                &ctx.path("eval_anomaly.csv"),
                &["metric", "value"],
                &[vec!["auprc".into(), num(p)], vec!["auroc".into(), num(r)]],
            )?,
            None => log::warn!("anomaly evaluation needs data.holdout_class; skipped"),
        }
    }
    if sel.mig {
        if data.all.styles.is_some() {
            let (mig, sup) = mig_and_migsup(model, &data.all)?;
            write_csv(
                &ctx.path("eval_mig.csv"),
                &["metric", "value"],
                &[vec!["mig".into(), num(mig)], vec!["mig_sup".into(), num(sup)]],
            )?;
        } else {
            log::warn!("MIG needs ground-truth factors; skipped");
        }
    }
    if sel.energy {
        let e = &ctx.cfg.eval;
        let lc = ctx.langevin(ctx.cfg.langevin.long_steps, e.energy_chains, 7);
        let profile = energy_profile(&model.energy, model.latent_dims(), Some(&model.generator), &lc, e.snapshot_every)?;
        let rows: Vec<Vec<String>> = profile
            .mean()
            .iter()
            .enumerate()
            .map(|(k, v)| vec![k.to_string(), num(*v)])
            .collect();
        write_csv(&ctx.path("eval_energy.csv"), &["step", "mean_energy"], &rows)?;
        let (slope, se) = profile.last_quartile_slope();
        write_csv(
            &ctx.path("eval_energy_summary.csv"),
            &["metric", "value"],
            &[vec!["last_quartile_slope".into(), num(slope)], vec!["slope_se".into(), num(se)]],
        )?;
        let snaps: Vec<Vec<Vec<f64>>> = profile
            .snapshots
            .iter()
            .map(|(_, imgs)| imgs.iter().take(8).cloned().collect())
            .collect();
        write_pgm(&ctx.path("eval_energy_snapshots.pgm"), &snaps)?;
    }
    Ok(())
}

/// One ablation setting: a label and the config it trains under.
fn ablation_settings(cfg: &RunConfig) -> CliResult<Vec<(String, RunConfig)>> {
    let mut out = Vec::new();
    for &k in &cfg.eval.ablate_steps {
        let mut c = cfg.clone();
        c.langevin.steps = k;
        out.push((format!("steps={k}"), c));
    }
    for &nef in &cfg.eval.ablate_nef {
        let mut c = cfg.clone();
        c.model.nef = nef;
        out.push((format!("nef={nef}"), c));
    }
    if out.is_empty() {
        return Err(CliError {
            kind: Kind::Config,
            line: None,
            keys: vec!["eval.ablate_steps".into(), "eval.ablate_nef".into()],
            msg: "nothing to sweep".into(),
        });
    }
    Ok(out)
}

/// Trains every setting from scratch under the shared base seed, so a
/// one-element sweep reproduces `train` followed by `eval`.
pub fn ablate(ctx: &Ctx) -> CliResult<()> {
    let settings = ablation_settings(&ctx.cfg)?;
    let mut w = csv_writer(&ctx.path("ablate.csv"), &["setting", "metric", "value"])?;
    for (label, cfg) in settings {
        let data = prepare(&cfg)?;
        let spec = model_spec(&cfg, data.all.dim())?;
        let tc = train_config(&cfg);
        let mut state = fresh_state(&cfg, &spec)?;
        fit(&mut state, &data.train, &tc, |_, _| Ok(()))?;
        let sub = Ctx { cfg, config_text: String::new(), checkpoint: None, force: false, dir: ctx.dir.clone() };
        let (mse, var, elbo) = recon_metrics(&sub, &state.model, &data.test)?;
        w.write_record([label.as_str(), "recon_mse", &num(mse)])?;
        w.write_record([label.as_str(), "recon_mse_over_var", &num(mse / var)])?;
        w.write_record([label.as_str(), "elbo_unnorm", &num(elbo)])?;
        for (l, a) in probe_metrics(&sub, &state.model, &data.all)?.into_iter().enumerate() {
            w.write_record([label.as_str(), &format!("probe_layer{l}"), &num(a)])?;
        }
        w.flush()?;
        log::info!("ablation {label}: mse {mse:.4} elbo {elbo:.4}");
    }
    Ok(())
}
