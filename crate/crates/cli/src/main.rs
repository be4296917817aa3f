use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use ecov::eval::{cross_validate, load_csv_collection, read_design_csv, read_headerless_matrix, Manifest};
use ecov::estimators::EcovOptions;
use ecov::persist::{FitSettings, ModelFile};
use ecov::posterior::{SolverMode, SolverOptions};
use ecov::rng::{standard_normal_matrix, substream};
use ecov::sim::{risk_curve, EffectCovarianceKind, SimulationConfig};
use ecov::table::Table;
use ecov::theory::{dominance_check, gain, risk_identity_check, standard_beta_grid, Claim, IdentitySide};
use ecov::{fit, EffectsMatrix, Error, EstimatorKind, FitOptions, ResponseKind, TaskCovariance};

#[derive(Parser, Debug)]
#[command(name = "ecov", version, about = "Multi-dataset effect estimation with a learned task covariance")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Estimator {
    EcovEm,
    EcovMm,
    EcovMmPractical,
    EdataEm,
    EdataMm,
    Ls,
    LsPooled,
    Id,
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::EcovEm => EstimatorKind::EcovEm,
            Estimator::EcovMm => EstimatorKind::EcovMm,
            Estimator::EcovMmPractical => EstimatorKind::EcovMmPractical,
            Estimator::EdataEm => EstimatorKind::EdataEm,
            Estimator::EdataMm => EstimatorKind::EdataMm,
            Estimator::Ls => EstimatorKind::Ls,
            Estimator::LsPooled => EstimatorKind::LsPooled,
            Estimator::Id => EstimatorKind::Id,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Solver {
    Dense,
    Cg,
    Auto,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Effects {
    Correlated,
    Independent,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Check {
    LemmaRisk,
    Dominance,
    PositivePart,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one estimator and write effects (CSV) plus a JSON model sidecar.
    Fit(FitArgs),
    /// Predict for one task from a saved model.
    Predict(PredictArgs),
    /// Sweep estimators over covariate dimensions on synthetic data.
    Simulate(SimulateArgs),
    /// Cross-validate estimators on a manifest of CSV datasets.
    Evaluate(EvaluateArgs),
    /// Monte Carlo checks of the risk results under orthogonal design.
    RiskStudy(RiskStudyArgs),
    /// Asymptotic gain of joint over per-dataset estimation for a task covariance.
    Gain(GainArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    estimator: Estimator,
    /// EM iteration cap.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// EM relative log-likelihood tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Solver::Auto)]
    solver: Solver,
    /// Effects CSV; the model is written next to it as <out>.model.json (JSON format writes the model to <out>).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// JSON model written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Headered CSV containing the model's covariate columns.
    #[arg(long)]
    data: PathBuf,
    /// Dataset name from the manifest used to fit.
    #[arg(long)]
    task: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    q: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20,50,100")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, value_enum, default_value_t = Effects::Correlated)]
    effects: Effects,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ecov-em,ecov-mm,edata-em,edata-mm,ls,id")]
    estimators: Vec<Estimator>,
    /// Poisson rate of rows per dataset.
    #[arg(long, default_value_t = 1000.0)]
    expected_points: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Defaults to every estimator that supports the manifest's task kind.
    #[arg(long, value_enum, value_delimiter = ',')]
    estimators: Vec<Estimator>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RiskStudyArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 10_000)]
    replicates: usize,
    /// Shared noise variance σ².
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GainArgs {
    /// Headerless Q×Q CSV holding the task covariance.
    #[arg(long)]
    sigma_file: PathBuf,
    /// Shared noise variance σ².
    #[arg(long)]
    noise: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: code={} message={}", e.code(), message);
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: &Cli) -> ecov::Result<()> {
    match &cli.command {
        Command::Fit(a) => run_fit(a, cli.format),
        Command::Predict(a) => run_predict(a),
        Command::Simulate(a) => run_simulate(a, cli.format),
        Command::Evaluate(a) => run_evaluate(a, cli.format),
        Command::RiskStudy(a) => run_risk_study(a, cli.format),
        Command::Gain(a) => run_gain(a, cli.format),
    }
}

fn emit(out: Option<&Path>, text: &str) -> ecov::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn require_seed(seed: Option<u64>) -> ecov::Result<u64> {
    seed.ok_or_else(|| Error::InvalidArgument("--seed is required for this subcommand".into()))
}

fn run_fit(a: &FitArgs, format: Format) -> ecov::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let loaded = load_csv_collection(&manifest)?;
    let mut options = FitOptions::default();
    options.ecov = EcovOptions {
        solver: SolverOptions {
            mode: match a.solver {
                Solver::Dense => SolverMode::Dense,
                Solver::Cg => SolverMode::Cg,
                Solver::Auto => SolverMode::Auto,
            },
            ..SolverOptions::default()
        },
        ..EcovOptions::default()
    };
    options.ecov.em.max_iterations = a.max_iter;
    options.ecov.em.rel_tolerance = a.tol;
    options.edata.em.max_iterations = a.max_iter;
    options.edata.em.rel_tolerance = a.tol;
    options.logistic_max_iterations = a.max_iter;
    let kind = EstimatorKind::from(a.estimator);
    log::info!("fitting {kind} to {} datasets", loaded.collection.task_count());
    let model = fit(kind, &loaded.collection, None, &options)?;
    let settings = FitSettings {
        max_iterations: a.max_iter,
        tolerance: a.tol,
        solver: format!("{:?}", a.solver).to_lowercase(),
    };
    let file = ModelFile::new(&model, settings, loaded.covariate_names.clone(), loaded.dataset_names.clone());
    match format {
        Format::Json => file.write(&a.out),
        Format::Csv => {
            emit(Some(&a.out), &effects_table(model.beta.values(), &loaded.covariate_names, &loaded.dataset_names).to_csv_string())?;
            let mut sidecar = a.out.clone().into_os_string();
            sidecar.push(".model.json");
            file.write(Path::new(&sidecar))
        }
    }
}

fn effects_table(beta: &DMatrix<f64>, covariates: &[String], tasks: &[String]) -> Table {
    let mut header = vec!["covariate"];
    header.extend(tasks.iter().map(String::as_str));
    Table::new(
        &header,
        (0..beta.nrows())
            .map(|i| {
                let mut row = vec![covariates[i].clone()];
                row.extend((0..beta.ncols()).map(|j| beta[(i, j)].to_string()));
                row
            })
            .collect(),
    )
}

fn run_predict(a: &PredictArgs) -> ecov::Result<()> {
    let model = ModelFile::read(&a.model)?;
    let beta = model.beta()?;
    let task = model.task_index(&a.task)?;
    let x = read_design_csv(&a.data, &model.covariate_names)?;
    let (name, values) = match model.response_kind {
        ResponseKind::Gaussian => ("prediction", &x * beta.values().column(task)),
        ResponseKind::Binary => ("probability", ecov::logistic::predict_proba(&beta, &x, task)?),
    };
    let table = Table::new(&["row", name], values.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]).collect());
    emit(a.out.as_deref(), &table.to_csv_string())
}

fn run_simulate(a: &SimulateArgs, format: Format) -> ecov::Result<()> {
    let seed = require_seed(a.seed)?;
    let kind = match a.effects {
        Effects::Correlated => EffectCovarianceKind::Correlated,
        Effects::Independent => EffectCovarianceKind::Independent,
    };
    let mut dims = a.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let mut config = SimulationConfig::new(a.q, dims, kind, seed);
    config.replicates = a.replicates;
    config.expected_points = a.expected_points;
    config.noise_variance = a.noise;
    let kinds: Vec<EstimatorKind> = a.estimators.iter().map(|&e| e.into()).collect();
    let curve = risk_curve(&config, &kinds, &FitOptions::default())?;
    let text = match format {
        Format::Csv => curve.to_table().to_csv_string(),
        Format::Json => json_text(&curve.rows),
    };
    emit(a.out.as_deref(), &text)
}

fn run_evaluate(a: &EvaluateArgs, format: Format) -> ecov::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let loaded = load_csv_collection(&manifest)?;
    let kinds: Vec<EstimatorKind> = if a.estimators.is_empty() {
        match loaded.collection.kind() {
            ResponseKind::Gaussian => vec![
                EstimatorKind::EcovEm,
                EstimatorKind::EcovMmPractical,
                EstimatorKind::EdataEm,
                EstimatorKind::Ls,
                EstimatorKind::LsPooled,
                EstimatorKind::Id,
            ],
            ResponseKind::Binary => vec![EstimatorKind::EcovEm, EstimatorKind::Ls, EstimatorKind::LsPooled, EstimatorKind::Id],
        }
    } else {
        a.estimators.iter().map(|&e| e.into()).collect()
    };
    let report = cross_validate(&loaded.collection, &loaded.dataset_names, &kinds, a.folds, a.seed, &FitOptions::default())?;
    let text = match format {
        Format::Csv => report.to_table().to_csv_string(),
        Format::Json => json_text(&report.to_json()),
    };
    emit(a.out.as_deref(), &text)
}

fn run_risk_study(a: &RiskStudyArgs, format: Format) -> ecov::Result<()> {
    let seed = require_seed(a.seed)?;
    let (d, q) = (a.d, a.q);
    if d == 0 || q == 0 {
        return Err(Error::InvalidArgument("--d and --q must be positive".into()));
    }
    match a.check {
        Check::LemmaRisk => {
            let side = if d > q + 1 {
                IdentitySide::Ecov
            } else if q > d + 1 {
                IdentitySide::Edata
            } else {
                return Err(Error::InfiniteRisk(format!(
                    "infinite-risk regime: the identity needs D > Q + 1 or Q > D + 1 (got D={d}, Q={q})"
                )));
            };
            let mut rng = substream(seed, &[0x4245_5441], 0);
            let beta = EffectsMatrix::new(standard_normal_matrix(&mut rng, d, q))?;
            let report = risk_identity_check(&beta, a.noise, side, a.replicates, seed)?;
            let text = match format {
                Format::Csv => report.to_table().to_csv_string(),
                Format::Json => json_text(&report),
            };
            emit(a.out.as_deref(), &text)
        }
        Check::Dominance | Check::PositivePart => {
            let claims: &[Claim] = if a.check == Check::Dominance {
                &[Claim::EcovMmBeatsLs, Claim::LsBeatsEdataMm, Claim::EdataMmBeatsLs]
            } else {
                &[Claim::PositivePart]
            };
            let grid = standard_beta_grid(d, q, seed);
            let report = dominance_check(&grid, d, q, a.noise, a.replicates, seed, claims)?;
            let text = match format {
                Format::Csv => report.to_table().to_csv_string(),
                Format::Json => json_text(&report),
            };
            emit(a.out.as_deref(), &text)
        }
    }
}

fn run_gain(a: &GainArgs, format: Format) -> ecov::Result<()> {
    let m = read_headerless_matrix(&a.sigma_file)?;
    let report = gain(&TaskCovariance::new(m)?, a.noise)?;
    let text = match format {
        Format::Csv => report.to_table().to_csv_string(),
        Format::Json => json_text(&report),
    };
    emit(a.out.as_deref(), &text)
}
