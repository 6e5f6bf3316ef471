//! Segmentation metrics and particle analysis.

pub mod evaluate;
pub mod metrics;
pub mod particles;
pub mod report;

pub use evaluate::{evaluate, evaluate_with, Evaluation, ImageReport, MacroMetrics};
pub use metrics::{confusion_counts, metrics, ConfusionCounts, MetricsReport};
pub use particles::{connected_components, feret_diameter, size_report, Connectivity, SizeReport};
