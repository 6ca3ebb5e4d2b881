//! Deterministic, resumable training loop.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, OptimState, Schedule};
use crate::data::{Dataset, SamplePair};
use crate::error::{Error, Result};
use crate::losses::{loss_components, loss_total, LossConfig};
use crate::model::{Cesst, CesstConfig, SCALES};
use crate::params::{self, ParamSet};
use crate::tensor::{GradStore, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub lr0: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub data_seed: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Global-norm gradient clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr0: 2e-4,
            lr_min: 1e-6,
            batch_size: 1,
            crop: 32,
            data_seed: 0,
            checkpoint_every: 0,
            grad_clip: None,
        }
    }
}

/// Everything one run needs; the JSON given to `train --config`.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: CesstConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.train.steps == 0 {
            return Err(Error::Config("train.steps must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.train.crop % 16 != 0 {
            return Err(Error::Config(format!(
                "train.crop must be a multiple of 16, got {}",
                self.train.crop
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_mix: f64,
    pub loss_mrae: f64,
    pub loss_total: f64,
    pub wallclock_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepRecord>,
}

pub const MODEL_CKPT: &str = "model.ckpt";
pub const OPTIM_CKPT: &str = "optim.ckpt";
pub const CONFIG_JSON: &str = "config.json";
pub const RUN_JSON: &str = "run.json";

/// Supervision tensors `[1, 31, h, w]` per scale from a sample pair.
pub fn supervision_tensors(pair: &SamplePair) -> Result<[Tensor<f32>; SCALES]> {
    let mut out = Vec::with_capacity(SCALES);
    for level in &pair.pyramid.levels {
        let d = level.data().dims();
        out.push(level.data().reshape(&[1, d[0], d[1], d[2]])?);
    }
    Ok([out[0].clone(), out[1].clone(), out[2].clone()])
}

pub fn input_tensor(pair: &SamplePair) -> Result<Tensor<f32>> {
    let d = pair.rgb.data().dims();
    pair.rgb.data().reshape(&[1, d[0], d[1], d[2]])
}

fn grad_global_norm(model: &Cesst<f32>, grads: &GradStore<f32>) -> f64 {
    let mut acc = 0.0f64;
    model.visit("", &mut |_, t| {
        if let Some(g) = grads.get(t) {
            acc += g.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    });
    acc.sqrt()
}

/// Train (or resume) a model in `out_dir`. Fully deterministic given
/// `(config, dataset)`; non-finite loss aborts with a diagnostic snapshot.
pub fn train(run: &RunConfig, dataset: &Dataset, out_dir: &Path, resume: bool) -> Result<RunRecord> {
    run.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut model;
    let mut optim;
    let mut record;
    if resume {
        model = load_model(&run.model, out_dir)?;
        let bytes = std::fs::read(out_dir.join(OPTIM_CKPT))
            .map_err(|e| Error::Data(format!("optimizer state: {e}")))?;
        let named = params::read_named_tensors::<f32, _>(&mut bytes.as_slice())?;
        optim = OptimState::from_named_tensors(&named)?;
        let run_text = std::fs::read_to_string(out_dir.join(RUN_JSON)).unwrap_or_default();
        record = serde_json::from_str(&run_text).unwrap_or_else(|_| RunRecord::default());
        if optim.step >= run.train.steps {
            return Err(Error::Config(format!(
                "nothing to resume: {} steps already done of {}",
                optim.step, run.train.steps
            )));
        }
    } else {
        model = Cesst::<f32>::new(&run.model)?;
        optim = OptimState::new();
        record = RunRecord::default();
    }

    let sched = Schedule::new(run.train.steps, run.train.lr0, run.train.lr_min)?;
    let start = optim.step;
    for step in start..run.train.steps {
        let t0 = Instant::now();
        let lr = cosine_lr(step, &sched);

        let mut loss = Tensor::scalar(0f32);
        let mut mix_acc = 0.0f64;
        let mut mrae_acc = 0.0f64;
        for b in 0..run.train.batch_size {
            let draw = step * run.train.batch_size as u64 + b as u64;
            let pair = dataset.training_sample(run.train.data_seed, draw, run.train.crop)?;
            let rgb = input_tensor(&pair)?;
            let gt = supervision_tensors(&pair)?;
            let pred = model.forward(&rgb)?;
            let (mix, mrae, _) = loss_components(&pred, &gt, &run.loss)?;
            mix_acc += mix as f64;
            mrae_acc += mrae as f64;
            loss = loss.add(&loss_total(&pred, &gt, &run.loss)?)?;
        }
        let inv_batch = 1.0 / run.train.batch_size as f32;
        loss = loss.mul_scalar(inv_batch)?;
        mix_acc *= inv_batch as f64;
        mrae_acc *= inv_batch as f64;
        let total = loss.item()?;

        if !total.is_finite() {
            let diag = serde_json::json!({
                "step": step,
                "lr": lr,
                "loss_mix": mix_acc,
                "loss_mrae": mrae_acc,
            });
            std::fs::write(out_dir.join("diagnostic.json"), diag.to_string())?;
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step}; diagnostic snapshot written"
            )));
        }

        let grads = loss.backward()?;
        let scale = match run.train.grad_clip {
            Some(limit) => {
                let norm = grad_global_norm(&model, &grads);
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        optim.adam_step_scaled(&mut model, &grads, lr, scale)?;

        record.steps.push(StepRecord {
            step,
            lr,
            loss_mix: mix_acc,
            loss_mrae: mrae_acc,
            loss_total: total as f64,
            wallclock_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        let every = run.train.checkpoint_every;
        if every > 0 && (step + 1) % every == 0 && step + 1 < run.train.steps {
            save_state(&model, &optim, run, &record, out_dir)?;
        }
    }

    save_state(&model, &optim, run, &record, out_dir)?;
    Ok(record)
}

fn save_state(
    model: &Cesst<f32>,
    optim: &OptimState<f32>,
    run: &RunConfig,
    record: &RunRecord,
    out_dir: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    params::write_checkpoint(&mut buf, model)?;
    std::fs::write(out_dir.join(MODEL_CKPT), buf)?;
    let mut buf = Vec::new();
    params::write_named_tensors(&mut buf, &optim.to_named_tensors())?;
    std::fs::write(out_dir.join(OPTIM_CKPT), buf)?;
    std::fs::write(out_dir.join(CONFIG_JSON), serde_json::to_string_pretty(run)?)?;
    std::fs::write(out_dir.join(RUN_JSON), serde_json::to_string(record)?)?;
    Ok(())
}

/// Rebuild a model and load checkpoint weights from a run directory.
pub fn load_model(cfg: &CesstConfig, dir: &Path) -> Result<Cesst<f32>> {
    let mut model = Cesst::<f32>::new(cfg)?;
    let bytes = std::fs::read(dir.join(MODEL_CKPT))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join(MODEL_CKPT).display())))?;
    let named = params::read_named_tensors::<f32, _>(&mut bytes.as_slice())?;
    params::load_into(&mut model, &named)?;
    Ok(model)
}

/// Read the run config stored next to a checkpoint.
pub fn load_run_config(dir: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(dir.join(CONFIG_JSON))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join(CONFIG_JSON).display())))?;
    RunConfig::from_json(&text)
}
