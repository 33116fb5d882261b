//! Training, evaluation and the metric suite.

pub mod ablation;
pub mod eval;
pub mod judge;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod train;

pub use eval::{evaluate_ranking, generate_dialogues, inspect_state, GeneratedDialog};
pub use judge::{compute_jacc_avglen, import_human_verdicts, oracle_judge, JaccReport, JudgedDialog, Verdict};
pub use metrics::{compute_ndcg, format_table, MetricsReport};
pub use optim::Adamax;
pub use schedule::LrSchedule;
pub use train::{train, EpochReport, TrainConfig, Trainer};
