//! Desk-scale experiment harness.
//!
//! Procedural segmentation datasets with a known color per class, L1 and
//! hinge losses, Adam, a small patch discriminator, the training loop and a
//! nearest-color oracle that turns generated images back into label maps for
//! pixel accuracy and mIoU.

mod adam;
mod bench;
mod data;
mod disc;
mod loss;
mod metrics;
mod trainer;

pub use adam::Adam;
pub use bench::{bench_site, BenchStats, SiteConfig};
pub use data::{
    distance, make_dataset, make_dataset_with, palette, Color, Dataset, DatasetConfig, Layout, SyntheticScene,
    EDGE_COLOR,
};
pub use disc::Discriminator;
pub use loss::{hinge_d, hinge_g, l1};
pub use metrics::{edge_pixels, miou, oracle_segment, pixel_accuracy, Confusion, EdgeScore};
pub use trainer::{
    evaluate, evaluate_scenes, train, train_model, write_metrics_csv, EvalResult, MetricsRow, TrainConfig,
    TrainOutcome,
};
