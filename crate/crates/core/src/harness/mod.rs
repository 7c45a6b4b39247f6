//! Synthetic data, experiment orchestration, reporting and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod oracle;
pub mod report;
pub mod synth;

pub use config::{AnomalySplitSpec, DatasetSpec, ExperimentConfig, OodSplitSpec, SeedPlan, SourceMode};
pub use experiment::{evaluate_probe, run_experiment, run_experiment_with, EvalReport, StrategyReport};
pub use oracle::{validate_register_advantage, AdvantageCheck, BayesOracle};
pub use report::{emit_report, ReportFormat};
pub use synth::{gen_synthetic, Dataset, SyntheticWorld};
