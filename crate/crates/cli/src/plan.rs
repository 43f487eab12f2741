//! Fully resolved run settings and their execution.
//!
//! A plan is what the manifest records: running the same plan on the same input gives
//! the same document, whatever the thread count.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tdvs::io::{self, ColumnRef, InputSummary, LoadError, RunManifest};
use tdvs::simulation::{self, MethodConfig, SimScenario, StudyReport};
use tdvs::tuning::{self, TuningGrid, TuningResult};
use tdvs::{em, selection, EmConfig64, FitResult64, Hyperparams64, SelectionConfig64, SelectionResult64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: String,
    pub response: ColumnRef,
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPlan {
    pub data: DataSource,
    pub hyper: Hyperparams64,
    pub em: EmConfig64,
    /// Recorded for uniformity; the fit itself draws no random numbers.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectPlan {
    pub data: DataSource,
    /// `t0` is replaced by the cross-validated choice when `tuning` is set.
    pub hyper: Hyperparams64,
    pub em: EmConfig64,
    pub selection: SelectionConfig64,
    pub tuning: Option<TuningGrid<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePlan {
    pub data: DataSource,
    pub hyper: Hyperparams64,
    pub em: EmConfig64,
    pub grid: TuningGrid<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatePlan {
    pub scenario: SimScenario<f64>,
    pub method: MethodConfig<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Plan {
    Fit(FitPlan),
    Select(SelectPlan),
    Tune(TunePlan),
    Simulate(SimulatePlan),
}

impl Plan {
    pub fn command(&self) -> &'static str {
        match self {
            Plan::Fit(_) => "fit",
            Plan::Select(_) => "select",
            Plan::Tune(_) => "tune",
            Plan::Simulate(_) => "simulate",
        }
    }

    fn data(&self) -> Option<&DataSource> {
        match self {
            Plan::Fit(p) => Some(&p.data),
            Plan::Select(p) => Some(&p.data),
            Plan::Tune(p) => Some(&p.data),
            Plan::Simulate(_) => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Load(#[from] LoadError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] tdvs::Error),
    #[error("{0}")]
    Output(String),
}

impl RunError {
    /// Process exit status.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Load(_) | RunError::Usage(_) => 2,
            RunError::Core(tdvs::Error::NonFinite { .. } | tdvs::Error::AllCandidatesFailed) => 3,
            RunError::Core(_) => 2,
            RunError::Output(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectOutput {
    pub tuning: Option<TuningResult<f64>>,
    pub t0_used: f64,
    /// Selected covariates by name.
    pub selected_names: Vec<String>,
    pub selection: SelectionResult64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RunOutput {
    Fit(FitResult64),
    Select(Box<SelectOutput>),
    Tune(TuningResult<f64>),
    Simulate(Box<StudyReport<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub manifest: RunManifest<Plan>,
    /// Data-quality notes such as constant covariate columns.
    pub warnings: Vec<String>,
    pub result: RunOutput,
}

/// Load the input (if any), run the plan and assemble the output document.
pub fn execute(plan: Plan, expected_sha256: Option<&str>) -> Result<Document, RunError> {
    let loaded = match plan.data() {
        Some(src) => Some(io::load_csv::<f64>(Path::new(&src.path), &src.response, src.has_header)?),
        None => None,
    };
    if let (Some(loaded), Some(expected)) = (&loaded, expected_sha256) {
        if loaded.summary.sha256 != expected {
            return Err(RunError::Usage(format!(
                "input {} has changed since the manifest was written (sha256 {} != {})",
                loaded.summary.path, loaded.summary.sha256, expected
            )));
        }
    }
    let warnings = loaded.as_ref().map(|l| constant_warnings(&l.summary)).unwrap_or_default();

    let result = match &plan {
        Plan::Fit(p) => {
            let data = &loaded.as_ref().expect("fit has input").data;
            RunOutput::Fit(em::fit(data, &p.hyper, &p.em, None)?)
        }
        Plan::Select(p) => {
            let loaded = loaded.as_ref().expect("select has input");
            RunOutput::Select(Box::new(run_select(p, loaded)?))
        }
        Plan::Tune(p) => {
            let data = &loaded.as_ref().expect("tune has input").data;
            RunOutput::Tune(tuning::cv_tune_t0(data, &p.grid, &p.hyper, &p.em)?)
        }
        Plan::Simulate(p) => RunOutput::Simulate(Box::new(simulation::run_study(&p.scenario, &p.method)?)),
    };
    let manifest = RunManifest::new(plan.command(), loaded.map(|l| l.summary), plan);
    Ok(Document { manifest, warnings, result })
}

fn run_select(plan: &SelectPlan, loaded: &io::Loaded<f64>) -> Result<SelectOutput, RunError> {
    let tuning = match &plan.tuning {
        Some(grid) => Some(tuning::cv_tune_t0(&loaded.data, grid, &plan.hyper, &plan.em)?),
        None => None,
    };
    let t0_used = tuning.as_ref().map_or(plan.hyper.t0, |t| t.chosen_t0);
    let hyper = Hyperparams64 { t0: t0_used, ..plan.hyper };
    let selection = selection::tdvs_select(&loaded.data, &hyper, &plan.em, &plan.selection)?;
    let selected_names = selection.selected.iter().map(|&j| loaded.summary.covariates[j].clone()).collect();
    Ok(SelectOutput { tuning, t0_used, selected_names, selection })
}

fn constant_warnings(summary: &InputSummary) -> Vec<String> {
    summary
        .constant_columns
        .iter()
        .map(|&j| format!("covariate {} (`{}`) is constant", j, summary.covariates[j]))
        .collect()
}

pub fn render(doc: &Document) -> Result<String, RunError> {
    io::to_json_string(doc).map_err(|e| RunError::Output(format!("cannot serialize output: {e}")))
}

/// Plan and input digest recorded in an earlier output document.
pub fn read_manifest(text: &str) -> Result<(Plan, Option<String>), RunError> {
    #[derive(Deserialize)]
    struct Header {
        manifest: RunManifest<Plan>,
    }
    let header: Header =
        serde_json::from_str(text).map_err(|e| RunError::Usage(format!("not a tdvs output document: {e}")))?;
    if header.manifest.format_version != io::FORMAT_VERSION {
        return Err(RunError::Usage(format!(
            "manifest format version {} is not supported (expected {})",
            header.manifest.format_version,
            io::FORMAT_VERSION
        )));
    }
    Ok((header.manifest.config, header.manifest.input.map(|i| i.sha256)))
}
