//! Ablation comparison runner: identical seed, budget, and data per row.

use std::path::Path;

use serde::Serialize;

use super::evalrun::evaluate_model;
use super::loop_::{load_model, train, RunConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{make_variant, model_flops};
use crate::params::param_count;

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub row: String,
    pub params: u64,
    pub flops: u64,
    pub mrae: f64,
    pub rmse: f64,
    pub psnr: f64,
}

/// Train each requested variant for the same step budget on the same data,
/// then evaluate on the held-out set. The table is a report; desk-scale
/// trends carry no ordering guarantee.
pub fn run_ablation(
    base_run: &RunConfig,
    rows: &[String],
    train_set: &Dataset,
    eval_set: &Dataset,
    work_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut run = *base_run;
        run.model = make_variant(&base_run.model, row)?;
        let dir = work_dir.join(format!("ablation_{row}"));
        train(&run, train_set, &dir, false)?;
        let model = load_model(&run.model, &dir)?;
        let summary = evaluate_model(&model, eval_set)?;
        let (h, w) = {
            let (gt, _) = eval_set.get(0);
            (gt.height(), gt.width())
        };
        out.push(AblationRow {
            row: row.clone(),
            params: param_count(&model),
            flops: model_flops(&run.model, h, w),
            mrae: summary.mean.mrae,
            rmse: summary.mean.rmse,
            psnr: summary.mean.psnr,
        });
    }
    Ok(out)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row,params,flops,mrae,rmse,psnr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.row, r.params, r.flops, r.mrae, r.rmse, r.psnr
        ));
    }
    out
}

/// Tiny model/budget for ablation smoke runs: every variant must train
/// without producing a non-finite loss.
pub fn smoke_run_config(seed: u64, steps: u64) -> RunConfig {
    use crate::blocks::FebConfig;
    let mut run = RunConfig::default();
    run.model.seed = seed;
    run.model.feb = FebConfig {
        level_widths: [8, 8, 8],
        blocks_per_level: 1,
    };
    run.model.window = 2;
    run.train.steps = steps;
    run.train.crop = 32;
    run.train.data_seed = seed;
    run
}
