//! Training loop, optimizer, evaluation, ablation runner, and the
//! complexity benchmark harness.

mod ablation;
mod bench;
mod evalrun;
mod loop_;
mod optim;

pub use ablation::{ablation_csv, run_ablation, smoke_run_config, AblationRow};
pub use bench::{bench_csv, bench_scaling, linear_fit, BenchFit, BenchReport, BenchSample};
pub use evalrun::{evaluate_model, EvalSummary};
pub use loop_::{
    input_tensor, load_model, load_run_config, supervision_tensors, train, RunConfig, RunRecord,
    StepRecord, TrainConfig, CONFIG_JSON, MODEL_CKPT, OPTIM_CKPT, RUN_JSON,
};
pub use optim::{cosine_lr, OptimState, Schedule};
