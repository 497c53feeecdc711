//! Training harness: Adam with gradient clipping, the round-robin joint
//! training loop with early stopping, dev metrics, and the experiment
//! battery.

mod adam;
mod battery;
mod error;
mod metrics;
mod trainer;

pub use adam::{adam_step, clip_scale, AdamConfig, OptState};
pub use battery::{experiment_battery, BatteryConfig, BatteryReport, ConditionRow};
pub use error::{Result, TrainError};
pub use metrics::{MetricAccum, Metrics};
pub use trainer::{evaluate, train, TrainConfig, TrainOutput};
