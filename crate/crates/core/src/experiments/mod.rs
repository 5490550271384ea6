//! Synthetic tasks, desk-scale training and generalization-gap sweeps.

pub mod powerlaw;
pub mod sweep;
pub mod task;
pub mod train;
pub mod zscaling;

pub use powerlaw::{fit_power_law, PowerLawFit};
pub use sweep::{
    run_cell, run_sweep, sweep, BoundSettings, SeedRecord, SizeSummary, SweepConfig, SweepFailure,
    SweepFits, SweepResult, SweepRow, SweepRun,
};
pub use task::{make_task, random_inputs, Dataset, Generator, TaskConfig, TaskData, TaskKind, TokenNorm};
pub use train::{mean_loss, measure_gap, train, GapMeasurement, LossKind, TrainConfig, TrainOutcome};
pub use zscaling::{z_scaling_experiment, z_scaling_sets, ZScalingConfig};
