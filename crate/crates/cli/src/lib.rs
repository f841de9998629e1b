//! Command implementations behind the `pivotlogit` binary.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 numerical non-convergence.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pivotlogit::estimate::{apply_respondent_weights, fit, FitOptions, NullModel};
use pivotlogit::io::{self, AggregationConfig, EstimationReport, IoError, LoadedRun};
use pivotlogit::newmode::{vot, NewModeError, Variant};
use pivotlogit::scenario::{
    generate_synthetic_trips, reference_model, sweep, Aggregation, Application, SyntheticTripConfig,
};
use pivotlogit::weighting::{ipf, IpfOptions};
use pivotlogit::{Error, Purpose};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "pivotlogit",
    version,
    about = "Survey weighting, logit estimation and new-mode scenario sweeps"
)]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rake respondent weights to census margins.
    Weight(WeightArgs),
    /// Fit a weighted multinomial logit per trip purpose.
    Estimate(EstimateArgs),
    /// Value-of-time table from estimation reports.
    Vot(VotArgs),
    /// Evaluate the ride-hailing scenario grid over a trip population.
    Sweep(SweepArgs),
    /// Write a seeded synthetic trip table.
    GenerateTrips(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub respondents: PathBuf,
    #[arg(long)]
    pub margins: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Upper bound on any single weight.
    #[arg(long)]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NullArg {
    Zero,
    ConstantsOnly,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Purposes to fit separately; repeatable.
    #[arg(long = "purpose", required = true)]
    pub purposes: Vec<Purpose>,
    /// Respondent weights CSV; an unweighted report is written alongside.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "zero")]
    pub null_model: NullArg,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VotArgs {
    /// Estimation report JSON; repeat once per purpose.
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "beta_time")]
    pub time_coef: String,
    /// Cost coefficients are `<prefix><income group>`; a plain `beta_cost` maps to group `all`.
    #[arg(long, default_value = "beta_cost_")]
    pub cost_prefix: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Grid preset (`paper-grid` or `base`), overriding the config grid.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: usize,
    /// Generator settings as JSON; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_non_convergence() {
            EXIT_NOT_CONVERGED
        } else {
            EXIT_INPUT
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::input(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Weight(a) => cmd_weight(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Vot(a) => cmd_vot(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::GenerateTrips(a) => cmd_generate(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_sha256(path: &Path) -> Result<String, Failure> {
    fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn cmd_weight(a: &WeightArgs) -> CmdResult {
    let margins = io::read_margins(&a.margins)?;
    let vars: Vec<String> = margins.variables().map(str::to_string).collect();
    let records = io::read_respondents(&a.respondents, &vars)?;
    let (records, dropped) = margins.admit(records);
    let opts = IpfOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        cap: a.cap,
        order: None,
    };
    let out = ipf(&records, &margins, &opts).map_err(Error::from)?;
    let shares = pivotlogit::weighting::weighted_shares_all(&records, &out.weights, &margins)
        .map_err(Error::from)?;
    let correlation = pivotlogit::weighting::margin_correlation(&shares, &margins).ok();

    #[derive(Serialize)]
    struct Report<'a> {
        schema_version: u32,
        respondents: usize,
        dropped_respondents: usize,
        #[serde(flatten)]
        convergence: &'a pivotlogit::weighting::ConvergenceReport<f64>,
        margin_correlation: Option<f64>,
        weighted_shares: &'a BTreeMap<String, BTreeMap<String, f64>>,
    }

    create_dir(&a.out_dir)?;
    io::write_weights(&a.out_dir.join("weights.csv"), &out.weights)?;
    io::write_json(
        &a.out_dir.join("convergence.json"),
        &Report {
            schema_version: io::SCHEMA_VERSION,
            respondents: records.len(),
            dropped_respondents: dropped,
            convergence: &out.report,
            margin_correlation: correlation,
            weighted_shares: &shares,
        },
    )?;
    match out.ensure_converged() {
        Ok(_) => {
            println!(
                "converged after {} sweeps, max residual {:e}",
                out.report.iterations, out.report.max_residual
            );
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}; weights written but flagged as not converged");
            Ok(EXIT_NOT_CONVERGED)
        }
    }
}

pub fn cmd_estimate(a: &EstimateArgs) -> CmdResult {
    let spec = io::read_model_spec(&a.spec)?;
    let obs = io::read_observations(&a.observations, &spec)?;
    let weights = a.weights.as_deref().map(io::read_weights).transpose()?;
    let opts = FitOptions {
        max_iter: a.max_iter,
        null_model: match a.null_model {
            NullArg::Zero => NullModel::Zero,
            NullArg::ConstantsOnly => NullModel::ConstantsOnly,
        },
    };

    // fit everything before writing anything
    let mut reports = Vec::new();
    for &purpose in &a.purposes {
        let mut data: Vec<_> = obs
            .records
            .iter()
            .filter(|o| o.purpose == purpose)
            .cloned()
            .collect();
        if data.is_empty() {
            return Err(Failure::input(format!(
                "{}: no observations for purpose {purpose}",
                a.observations.display()
            )));
        }
        let unweighted = {
            let mut d = data.clone();
            d.iter_mut().for_each(|o| o.weight = 1.0);
            fit(&d, &spec, &opts).map_err(Error::from)?
        };
        match &weights {
            Some(w) => {
                apply_respondent_weights(&mut data, |id| w.get(id).copied())
                    .map_err(|id| Failure::input(format!("no weight for respondent `{id}`")))?;
                let weighted = fit(&data, &spec, &opts).map_err(Error::from)?;
                reports.push((purpose, true, weighted));
                reports.push((purpose, false, unweighted));
            }
            None => reports.push((purpose, false, unweighted)),
        }
    }

    create_dir(&a.out_dir)?;
    let mut code = EXIT_OK;
    for (purpose, weighted, result) in &reports {
        let stem = if a.weights.is_some() && !weighted {
            format!("estimate_{purpose}_unweighted")
        } else {
            format!("estimate_{purpose}")
        };
        io::write_json(
            &a.out_dir.join(format!("{stem}.json")),
            &EstimationReport {
                schema_version: io::SCHEMA_VERSION,
                purpose: purpose.to_string(),
                weighted: *weighted,
                dropped_records: obs.dropped,
                result,
            },
        )?;
        io::write_coefficients(&a.out_dir.join(format!("{stem}_coefficients.csv")), result)?;
        print_coefficients(&stem, result);
        if let Err(e) = result.ensure_converged() {
            eprintln!("error: {stem}: {e}");
            code = EXIT_NOT_CONVERGED;
        }
    }
    Ok(code)
}

fn print_coefficients(title: &str, r: &pivotlogit::EstimationResult) {
    println!(
        "{title}: n={} LL={:.4} LL0={:.4} R2={:.4}",
        r.n_observations, r.log_likelihood, r.null_log_likelihood, r.mcfadden_r2
    );
    for c in &r.coefficients {
        println!(
            "  {:<24} {:>12.6} {:>12.6}",
            c.name, c.estimate, c.std_error
        );
    }
}

pub fn cmd_vot(a: &VotArgs) -> CmdResult {
    let mut table: BTreeMap<String, BTreeMap<Purpose, f64>> = BTreeMap::new();
    for path in &a.reports {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let purpose: Purpose = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| {
                v.get("purpose")
                    .and_then(|p| p.as_str())
                    .map(str::to_string)
            })
            .ok_or_else(|| Failure::input(format!("{}: report has no `purpose`", path.display())))?
            .parse()
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let coefs = io::read_report_coefficients(path)?;
        let beta_time = *coefs.get(&a.time_coef).ok_or_else(|| {
            Failure::input(format!(
                "{}: no coefficient `{}`",
                path.display(),
                a.time_coef
            ))
        })?;
        let mut groups: Vec<(String, f64)> = coefs
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(a.cost_prefix.as_str())
                    .map(|g| (g.to_string(), *v))
            })
            .filter(|(g, _)| !g.is_empty())
            .collect();
        if groups.is_empty() {
            if let Some(v) = coefs.get("beta_cost") {
                groups.push(("all".into(), *v));
            }
        }
        if groups.is_empty() {
            return Err(Failure::input(format!(
                "{}: no cost coefficients matching `{}*`",
                path.display(),
                a.cost_prefix
            )));
        }
        for (g, beta_cost) in groups {
            let v = vot(beta_time, beta_cost).map_err(|e| match e {
                NewModeError::ZeroCostCoefficient => Failure::input(format!(
                    "{}: income group `{g}`: cost coefficient is zero",
                    path.display()
                )),
                other => Failure::input(format!("{}: income group `{g}`: {other}", path.display())),
            })?;
            table.entry(g).or_default().insert(purpose, v);
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_vot_table(&a.out, &table)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: Option<u64>,
    variant: Variant,
    aggregation: AggregationConfig,
    trips: usize,
    scenarios: Vec<String>,
    outputs: BTreeMap<String, String>,
}

pub fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let config_bytes =
        fs::read(&a.config).map_err(|e| Failure::input(format!("{}: {e}", a.config.display())))?;
    let run = io::load_run(&a.config, a.preset.as_deref(), a.variant)?;
    let out_dir = match (&a.out_dir, &run.config.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => run.config.resolve(&run.base_dir, d),
        (None, None) => {
            return Err(Failure::input(
                "no output directory: pass --out-dir or set `output_dir`",
            ))
        }
    };
    let trips = load_trips(&run)?;
    let aggregation = match run.config.aggregation {
        AggregationConfig::Expected => Aggregation::Expected,
        AggregationConfig::Sampled => Aggregation::Sampled {
            seed: run.config.seed.expect("checked at load"),
        },
    };
    let app = Application {
        model: &run.model,
        params: &run.params,
        vots: &run.config.vot,
        aggregation,
    };
    let table = sweep(&trips, &app, &run.grid).map_err(Error::from)?;

    create_dir(&out_dir)?;
    let results = out_dir.join("results.csv");
    let summary = out_dir.join("summary.csv");
    io::write_results(&results, &table)?;
    io::write_summary(&summary, &table, run.params.variant == Variant::AsPrinted)?;
    let mut outputs = BTreeMap::new();
    for p in [&results, &summary] {
        let name = p
            .file_name()
            .expect("file path")
            .to_string_lossy()
            .into_owned();
        outputs.insert(name, file_sha256(p)?);
    }
    let manifest = Manifest {
        schema_version: io::SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(&config_bytes),
        seed: run.config.seed,
        variant: run.params.variant,
        aggregation: run.config.aggregation,
        trips: trips.len(),
        scenarios: run.grid.iter().map(|s| s.label.clone()).collect(),
        outputs,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    println!(
        "{} scenarios x {} trips -> {}",
        run.grid.len(),
        trips.len(),
        out_dir.display()
    );
    Ok(EXIT_OK)
}

fn load_trips(run: &LoadedRun) -> Result<Vec<pivotlogit::Trip>, Failure> {
    if let Some(t) = &run.trips {
        return Ok(t.clone());
    }
    let s = run
        .config
        .synthetic_trips
        .as_ref()
        .expect("checked at load");
    let cfg = s.config.clone().unwrap_or_default();
    let seed = run.config.seed.expect("checked at load");
    let trips = generate_synthetic_trips(seed, s.count, &cfg).map_err(Error::from)?;
    for t in &trips {
        run.config
            .vot
            .rh_vot(&t.income_group, t.purpose)
            .map_err(|e| {
                Failure::input(format!(
                    "{}: synthetic trip `{}`: {e}",
                    run.config_path.display(),
                    t.id
                ))
            })?;
        for (m, _) in t.utilities.iter() {
            if !run.model.contains(m) {
                return Err(Failure::input(format!(
                    "{}: synthetic trips use mode `{m}` which the model does not define",
                    run.config_path.display()
                )));
            }
        }
    }
    Ok(trips)
}

pub fn cmd_generate(a: &GenerateArgs) -> CmdResult {
    let seed = a
        .seed
        .ok_or_else(|| Failure::input("generate-trips needs an explicit --seed"))?;
    let cfg: SyntheticTripConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::input(format!("{}:{}: {e}", p.display(), e.line())))?
        }
        None => SyntheticTripConfig::default(),
    };
    let trips = generate_synthetic_trips::<f64>(seed, a.count, &cfg).map_err(Error::from)?;
    // column set of the reference structure; nest coefficients do not affect the table
    let model = reference_model::<f64>(1.0, 1.0).map_err(Error::from)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    io::write_trips(&a.out, &trips, &model)?;
    Ok(EXIT_OK)
}
