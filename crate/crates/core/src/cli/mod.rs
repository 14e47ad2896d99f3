//! Model files, the staged pipeline, JSON reports and the robot suite.

pub mod model;
pub mod pipeline;
pub mod report;
pub mod suite;

pub use model::{parse_model, parse_model_str, ImplDecl, ModelError, ModelFile, Selections};
pub use pipeline::{run_pipeline, PipelineError, PipelineOptions};
pub use report::{Report, StageReport, StageStatus};
pub use suite::{reproduce_robot_suite, SuiteError, SuiteOptions};
