//! Scenario grid over information value and knowledge transfer, and the
//! comparison report.

mod config;
mod report;
mod run;
mod scenario;

pub use config::{prepare_corpora, Corpora, CorporaConfig, CorpusSource, GridConfig, ScenarioEntry, Splits};
pub use report::{hypotheses, parse_csv, pooled_median_focus, report, summarize, ReportFormat, ScenarioSummary, Stat, CSV_HEADER};
pub use run::{median, run_grid, run_scenario, train_sources, Failure, GridResult, ScenarioRun, Sources, RESULTS_FILE};
pub use scenario::{DesignFeatures, InformationValue, Scenario, FEATURE_TABLE};
