//! Task generation, scenario configuration, training pipelines and
//! evaluation.

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod plot;
pub mod task;

pub use config::{MediumChoice, ModelSpec, ScenarioConfig, TrainingSpec, Variant, SCHEMA_VERSION};
pub use eval::{chance_level, evaluate_accuracy, EvalReport};
pub use pipeline::{
    compare_protocols, derive_seed, evaluate_protocol, fuser_corpus, load_trained, payload_summary, run_scenario, train_all,
    PayloadSummary, Privacy, Protocol, ProtocolRun, ScenarioRun, Trained, METRICS_FILE,
};
pub use plot::{render_svg, Metric};
pub use task::{gen_partitioned_qa, EvalItem, PartitionedQa, TaskAlphabet, TaskSpec};
