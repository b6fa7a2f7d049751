//! Desk-scale experimentation harness.
//!
//! Synthetic planted-rotation tasks with analytic gradients, calibration
//! mini-batches, the controlled probe protocol, adapter training with
//! dynamics logging, and grid sweeps over data fraction, rank, and
//! calibration size. Everything is driven by explicit seeds; identical
//! configurations reproduce bit-identical records.

mod sweep;
mod task;
mod train;

pub use sweep::{
    early_validation, probe_with_calibration, run_sweep, run_sweep_cell, EarlyValidationColumn,
    EarlyValidationTable, SweepAxis, SweepCell, SweepConfig, SweepSummaryRow, SweepTable,
    EARLY_STEPS,
};
pub use task::{
    calibrate, calibrate_on, holdout_split, make_planted_task, mse_loss_grad, LinearTask, Planted,
    TaskConfig, WeightMode,
};
pub use train::{
    adapter_gradients, probe, train, train_on_split, Checkpoint, DynamicsRecord, OptimizerKind,
    ProbeReport, TrainConfig, PROBE_HORIZONS,
};
