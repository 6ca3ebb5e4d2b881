//! Whole-dataset evaluation with per-band diagnostics.

use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::{metric_suite, MetricReport};
use crate::model::{model_flops, Cesst};
use crate::params::param_count;

pub struct EvalSummary {
    pub mean: MetricReport,
    pub per_image: Vec<MetricReport>,
}

/// Infer every sample, compare against ground truth, and average the
/// per-image metrics (an infinite PSNR propagates into the mean).
pub fn evaluate_model(model: &Cesst<f32>, dataset: &Dataset) -> Result<EvalSummary> {
    let mut per_image = Vec::with_capacity(dataset.len());
    let mut size = (0usize, 0usize);
    for (gt, rgb) in dataset.eval_pairs() {
        let pred = model.infer(rgb)?;
        per_image.push(metric_suite(&pred, gt)?);
        size = (rgb.height(), rgb.width());
    }
    let n = per_image.len() as f64;
    let bands = per_image[0].per_band_rmse.len();
    let mut mean = MetricReport {
        mrae: 0.0,
        rmse: 0.0,
        psnr: 0.0,
        sam: 0.0,
        ergas: 0.0,
        per_band_rmse: vec![0.0; bands],
        params: param_count(model),
        flops: model_flops(model.config(), size.0, size.1),
    };
    for r in &per_image {
        mean.mrae += r.mrae / n;
        mean.rmse += r.rmse / n;
        mean.psnr += r.psnr / n;
        mean.sam += r.sam / n;
        mean.ergas += r.ergas / n;
        for (acc, v) in mean.per_band_rmse.iter_mut().zip(&r.per_band_rmse) {
            *acc += v / n;
        }
    }
    Ok(EvalSummary { mean, per_image })
}
