mod plan;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tdvs::io::ColumnRef;
use tdvs::selection::Prescreen;
use tdvs::simulation::{Method, MethodConfig, SimScenario, T0Choice};
use tdvs::tuning::TuningGrid;
use tdvs::{EmConfig64, Hyperparams64, SelectionConfig64};

use plan::{DataSource, FitPlan, Plan, RunError, SelectPlan, SimulatePlan, TunePlan};

/// Layout version of the JSON documents; must match `tdvs::io::FORMAT_VERSION`.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (output format 1)");

#[derive(Debug, Parser)]
#[command(name = "tdvs", version = VERSION, about = "Bayesian modal regression with permutation-based variable selection")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, env = "TDVS_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MAP fit of the regression model.
    Fit(FitArgs),
    /// Permutation-test variable selection.
    Select(SelectArgs),
    /// Cross-validate the spike rate t0.
    Tune(TuneArgs),
    /// Monte Carlo study on a simulated design.
    Simulate(SimulateArgs),
    /// Re-run the command recorded in an output document.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV file with the response and covariates.
    #[arg(long)]
    input: PathBuf,
    /// Response column: header name or zero-based index.
    #[arg(long)]
    response: String,
    /// The first row holds data, not column names.
    #[arg(long)]
    no_header: bool,
}

impl InputArgs {
    fn source(&self) -> DataSource {
        DataSource {
            path: self.input.display().to_string(),
            response: ColumnRef::parse(&self.response),
            has_header: !self.no_header,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Spike rate.
    #[arg(long, default_value_t = 10.0)]
    t0: f64,
    /// Slab rate.
    #[arg(long, default_value_t = 1.0)]
    t1: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// EM stops when successive parameter vectors are this close.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
}

impl ModelArgs {
    fn hyper(&self) -> Hyperparams64 {
        Hyperparams64::new(self.t0, self.t1)
    }

    fn em(&self) -> EmConfig64 {
        EmConfig64 { convergence_tol: self.tol, max_iterations: self.max_iter, ..EmConfig64::default() }
    }
}

#[derive(Debug, Args)]
struct SelectionArgs {
    /// Permutations per covariate in the final test.
    #[arg(long, default_value_t = 200)]
    permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = PrescreenArg::Auto)]
    prescreen: PrescreenArg,
    #[arg(long, default_value_t = 4)]
    group_size: usize,
    /// Permutations per group in group screening.
    #[arg(long, default_value_t = 20)]
    b1: usize,
    /// Permutations per covariate in individual screening.
    #[arg(long, default_value_t = 20)]
    b2: usize,
    /// Level of both screening stages.
    #[arg(long, default_value_t = 0.3)]
    alpha0: f64,
    /// Curvature offset of the CiS statistic.
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
}

impl SelectionArgs {
    fn config(&self, seed: u64) -> SelectionConfig64 {
        SelectionConfig64 {
            final_permutations: self.permutations,
            group_permutations: self.b1,
            individual_permutations: self.b2,
            alpha: self.alpha,
            alpha0: self.alpha0,
            group_size: self.group_size,
            delta: self.delta,
            prescreen: self.prescreen.into(),
            master_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrescreenArg {
    Auto,
    On,
    Off,
}

impl From<PrescreenArg> for Prescreen {
    fn from(p: PrescreenArg) -> Self {
        match p {
            PrescreenArg::Auto => Prescreen::Auto,
            PrescreenArg::On => Prescreen::On,
            PrescreenArg::Off => Prescreen::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Tdvs,
    Lasso,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the document here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Choose t0 from this comma-separated grid by cross-validation first.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    tune_t0: Option<Vec<f64>>,
    /// Folds used with --tune-t0.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated t0 candidates.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = [1.0, 3.0, 10.0, 30.0, 100.0])]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Slab rate held fixed while tuning.
    #[arg(long, default_value_t = 1.0)]
    t1: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Named design (table1-mixhat, table2-normal, table3-mixture, ...).
    #[arg(long, required_unless_present = "scenario_file", conflicts_with = "scenario_file")]
    scenario: Option<String>,
    /// JSON file with a fully specified design.
    #[arg(long)]
    scenario_file: Option<PathBuf>,
    /// Overrides the design's replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Overrides the design's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Tdvs)]
    method: MethodArg,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Cross-validate t0 over this grid in every replicate.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    tune_t0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Output document of an earlier run.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn grid(candidates: Vec<f64>, t1: f64, folds: usize, seed: u64) -> TuningGrid<f64> {
    TuningGrid { t0_candidates: candidates, t1_fixed: t1, folds, seed }
}

fn read_text(path: &PathBuf) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Resolve the arguments into a plan, plus the input digest a replay must match.
fn resolve(command: Command) -> Result<(Plan, Option<String>, Option<PathBuf>), RunError> {
    Ok(match command {
        Command::Fit(a) => {
            let plan = FitPlan { data: a.input.source(), hyper: a.model.hyper(), em: a.model.em(), seed: a.seed };
            (Plan::Fit(plan), None, a.output)
        }
        Command::Select(a) => {
            let plan = SelectPlan {
                data: a.input.source(),
                hyper: a.model.hyper(),
                em: a.model.em(),
                selection: a.selection.config(a.seed),
                tuning: a.tune_t0.map(|g| grid(g, a.model.t1, a.folds, a.seed)),
            };
            (Plan::Select(plan), None, a.output)
        }
        Command::Tune(a) => {
            let plan = TunePlan {
                data: a.input.source(),
                hyper: Hyperparams64::new(1.0, a.t1),
                em: EmConfig64 { convergence_tol: a.tol, max_iterations: a.max_iter, ..EmConfig64::default() },
                grid: grid(a.grid, a.t1, a.folds, a.seed),
            };
            (Plan::Tune(plan), None, a.output)
        }
        Command::Simulate(a) => {
            let mut scenario: SimScenario<f64> = match (&a.scenario, &a.scenario_file) {
                (Some(name), _) => SimScenario::preset(name).ok_or_else(|| {
                    RunError::Usage(format!(
                        "unknown scenario `{name}`; choose one of {}",
                        SimScenario::<f64>::preset_names().join(", ")
                    ))
                })?,
                (None, Some(path)) => serde_json::from_str(&read_text(path)?)
                    .map_err(|e| RunError::Usage(format!("invalid scenario file {}: {e}", path.display())))?,
                (None, None) => unreachable!("clap requires one of --scenario, --scenario-file"),
            };
            if let Some(r) = a.replicates {
                scenario.replicates = r;
            }
            if let Some(s) = a.seed {
                scenario.seed = s;
            }
            let t0 = match a.tune_t0 {
                Some(g) => T0Choice::Tuned { grid: grid(g, a.model.t1, a.folds, 0) },
                None => T0Choice::Fixed { t0: a.model.t0 },
            };
            let method = MethodConfig {
                method: match a.method {
                    MethodArg::Tdvs => Method::Tdvs,
                    MethodArg::Lasso => Method::Lasso,
                },
                t0,
                hyper: a.model.hyper(),
                em: a.model.em(),
                selection: a.selection.config(0),
            };
            (Plan::Simulate(SimulatePlan { scenario, method }), None, a.output)
        }
        Command::Replay(a) => {
            let (plan, sha) = plan::read_manifest(&read_text(&a.manifest)?)?;
            (plan, sha, a.output)
        }
    })
}

fn run(cli: Cli) -> Result<(), RunError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| RunError::Output(format!("cannot start thread pool: {e}")))?;
    let (plan, sha, output) = resolve(cli.command)?;
    let doc = plan::execute(plan, sha.as_deref())?;
    let text = plan::render(&doc)?;
    match output {
        Some(path) => {
            std::fs::write(&path, text).map_err(|e| RunError::Output(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .lock()
                .write_all(text.as_bytes())
                .map_err(|e| RunError::Output(format!("cannot write to standard output: {e}")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
