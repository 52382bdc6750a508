use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chainimp::data_model::{load_dataset_from_paths, ConfigFile, Dataset, Eligibility, VariableKind};
use chainimp::diagnostics::{self, DiagnosticsReport};
use chainimp::engine::{self, ChainMode, EngineConfig, RunManifest};
use chainimp::error::{Error, Result};
use chainimp::hotdeck::hotdeck_impute;
use chainimp::inference;
use chainimp::simulate;

#[derive(Parser)]
#[command(
    name = "chainimp",
    version,
    about = "Sequential-regression multiple imputation for survey data"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report apparent and true missingness per variable
    Profile(ProfileArgs),
    /// Run the chained-equation engine and write M completed datasets
    Impute(ImputeArgs),
    /// Run the univariate hot-deck baseline
    Hotdeck(HotdeckArgs),
    /// Pool per-imputation analysis estimates with the combining rules
    Pool(PoolArgs),
    /// Compare two completed sets: summaries, FMI, correlations, agreement
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic survey dataset with a known structure
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ProfileArgs {
    /// Input CSV with a header row
    #[arg(long)]
    data: PathBuf,
    /// Variable config JSON
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Number of completed datasets
    #[arg(long)]
    m: Option<usize>,
    /// Burn-in cycles per chain
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    /// Cycles between emissions (single-chain mode)
    #[arg(long)]
    between: Option<usize>,
    #[arg(long = "chain-mode", value_enum)]
    chain_mode: Option<ChainModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Cap on chain parallelism (output is identical for any value)
    #[arg(long)]
    threads: Option<usize>,
    /// Minimum R-squared increase for forward selection
    #[arg(long = "min-r2")]
    min_r2: Option<f64>,
    #[arg(long = "max-predictors")]
    max_predictors: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ChainModeArg {
    IndependentChains,
    SingleChainThinned,
}

impl From<ChainModeArg> for ChainMode {
    fn from(v: ChainModeArg) -> Self {
        match v {
            ChainModeArg::IndependentChains => ChainMode::IndependentChains,
            ChainModeArg::SingleChainThinned => ChainMode::SingleChainThinned,
        }
    }
}

#[derive(Args)]
struct HotdeckArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    /// CSV files with columns estimand,estimate,variance: either one file
    /// per imputation, or a single file with repeated estimands
    #[arg(long = "estimates", required = true, num_args = 1..)]
    estimates: Vec<PathBuf>,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Original (incomplete) data CSV
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Completed-set directory for method A (typically the engine output)
    #[arg(long = "method-a")]
    method_a: PathBuf,
    /// Completed-set directory for method B (typically the hot deck)
    #[arg(long = "method-b")]
    method_b: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Variable for the summary and agreement sections (default: first
    /// imputable amount variable)
    #[arg(long)]
    target: Option<String>,
    /// Variables for the correlation comparison (default: all imputable
    /// continuous/semicontinuous variables)
    #[arg(long = "corr-vars", value_delimiter = ',')]
    corr_vars: Vec<String>,
    /// Outcome for the regression comparison (skipped when omitted)
    #[arg(long)]
    outcome: Option<String>,
    /// Predictors for the regression comparison
    #[arg(long, value_delimiter = ',')]
    predictors: Vec<String>,
    /// Alert when |imputed - observed| positive-indicator rate exceeds this
    #[arg(long = "alert-threshold", default_value_t = 0.2)]
    alert_threshold: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: Scenario,
    #[arg(long, default_value_t = 2000)]
    rows: usize,
    /// Number of variables (survey scenario)
    #[arg(long, default_value_t = 20)]
    cols: usize,
    /// Latent correlation (bivariate scenario)
    #[arg(long, default_value_t = 0.6)]
    rho: f64,
    /// Target missingness fraction
    #[arg(long, default_value_t = 0.3)]
    missing: f64,
    #[arg(long, value_enum, default_value_t = MechanismArg::Mcar)]
    mechanism: MechanismArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum Scenario {
    /// Correlated (x, y) pair with missingness in y
    Bivariate,
    /// Nested skip pattern with brackets and a semicontinuous amount
    Skip,
    /// Wide mixed-type survey
    Survey,
}

#[derive(Copy, Clone, ValueEnum)]
enum MechanismArg {
    Mcar,
    Mar,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Profile(args) => profile(args),
        Command::Impute(args) => impute(args),
        Command::Hotdeck(args) => hotdeck(args),
        Command::Pool(args) => pool(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Simulate(args) => simulate_cmd(args),
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn profile(args: ProfileArgs) -> Result<()> {
    let loaded = load_dataset_from_paths(&args.data, &args.config)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let mut out = open_out(&args.out)?;
    writeln!(out, "variable,apparent_pct,true_pct")?;
    for row in loaded.dataset.missingness_profile() {
        writeln!(
            out,
            "{},{:.2},{:.2}",
            row.variable, row.apparent_pct, row.true_pct
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Defaults, then config-file engine values, then flags.
fn merge_engine_config(config: &ConfigFile, args: &ImputeArgs) -> Result<EngineConfig> {
    let mut cfg = EngineConfig::default();
    if let Some(defaults) = &config.engine {
        if let Some(m) = defaults.m {
            cfg.m = m;
        }
        if let Some(b) = defaults.burn_in_cycles {
            cfg.burn_in_cycles = b;
        }
        if let Some(b) = defaults.between_cycles {
            cfg.between_cycles = b;
        }
        if let Some(mode) = &defaults.chain_mode {
            cfg.chain_mode = match mode.as_str() {
                "independent-chains" => ChainMode::IndependentChains,
                "single-chain-thinned" => ChainMode::SingleChainThinned,
                other => {
                    return Err(Error::validation(format!(
                        "unknown chain_mode `{other}` in config"
                    )))
                }
            };
        }
        if let Some(s) = defaults.seed {
            cfg.seed = s;
        }
        if let Some(r) = defaults.min_r2_increase {
            cfg.selection.min_r2_increase = r;
        }
        if let Some(k) = defaults.max_predictors {
            cfg.selection.max_predictors = k;
        }
        if let Some(t) = defaults.threads {
            cfg.threads = Some(t);
        }
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(b) = args.burn_in {
        cfg.burn_in_cycles = b;
    }
    if let Some(b) = args.between {
        cfg.between_cycles = b;
    }
    if let Some(mode) = args.chain_mode {
        cfg.chain_mode = mode.into();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(r) = args.min_r2 {
        cfg.selection.min_r2_increase = r;
    }
    if let Some(k) = args.max_predictors {
        cfg.selection.max_predictors = k;
    }
    Ok(cfg)
}

fn impute(args: ImputeArgs) -> Result<()> {
    let config = ConfigFile::from_path(&args.config)?;
    let loaded = load_dataset_from_paths(&args.data, &args.config)?;
    let cfg = merge_engine_config(&config, &args)?;
    let set = engine::run(&loaded.dataset, &cfg)?;

    let mut manifest = RunManifest::new(command_line(), cfg.seed);
    manifest.engine = Some(cfg.clone());
    manifest.warnings.extend(loaded.warnings);
    engine::write_completed_set(&args.out_dir, &loaded.dataset, &set, manifest)?;
    log::info!(
        "wrote {} completed datasets to {}",
        set.tables.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn hotdeck(args: HotdeckArgs) -> Result<()> {
    let loaded = load_dataset_from_paths(&args.data, &args.config)?;
    let seed = args.seed.unwrap_or(0);
    let result = hotdeck_impute(&loaded.dataset, seed)?;
    let mut manifest = RunManifest::new(command_line(), seed);
    manifest.warnings.extend(loaded.warnings);
    engine::write_hotdeck_output(
        &args.out_dir,
        &loaded.dataset,
        &result.table,
        &result.warnings,
        manifest,
    )?;
    Ok(())
}

fn pool(args: PoolArgs) -> Result<()> {
    // estimand -> per-imputation (estimate, variance), in input order
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for path in &args.estimates {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| {
                    Error::validation(format!("{} lacks column `{name}`", path.display()))
                })
        };
        let (ci, ce, cv) = (col("estimand")?, col("estimate")?, col("variance")?);
        for record in reader.records() {
            let record = record?;
            let estimand = record[ci].to_string();
            let estimate: f64 = record[ce].parse().map_err(|_| {
                Error::validation(format!("bad estimate `{}` for `{estimand}`", &record[ce]))
            })?;
            let variance: f64 = record[cv].parse().map_err(|_| {
                Error::validation(format!("bad variance `{}` for `{estimand}`", &record[cv]))
            })?;
            if !groups.contains_key(&estimand) {
                order.push(estimand.clone());
            }
            groups.entry(estimand).or_default().push((estimate, variance));
        }
    }

    let mut out = open_out(&args.out)?;
    writeln!(out, "estimand,q_bar,w,b,t,fmi,df,ci_lo,ci_hi")?;
    for estimand in order {
        let rows = &groups[&estimand];
        let estimates: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let variances: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let pooled = inference::pool_scalar(&estimates, &variances)?;
        let (lo, hi) = pooled.interval(0.95);
        writeln!(
            out,
            "{estimand},{},{},{},{},{},{},{},{}",
            pooled.q_bar,
            pooled.w,
            pooled.b,
            pooled.t,
            pooled.fmi,
            if pooled.df.is_infinite() { "inf".to_string() } else { pooled.df.to_string() },
            lo,
            hi
        )?;
    }
    out.flush()?;
    Ok(())
}

fn resolve_var(ds: &Dataset, name: &str) -> Result<usize> {
    ds.variable_index(name)
        .ok_or_else(|| Error::validation(format!("unknown variable `{name}`")))
}

fn default_amount_variable(ds: &Dataset) -> Option<usize> {
    ds.variables().iter().enumerate().find_map(|(v, s)| {
        let amount_kind = matches!(
            s.kind,
            VariableKind::Continuous | VariableKind::Semicontinuous
        );
        (amount_kind && s.eligibility == Eligibility::ImputedAndPredictor && ds.missing_count(v) > 0)
            .then_some(v)
    })
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let loaded = load_dataset_from_paths(&args.data, &args.config)?;
    let ds = &loaded.dataset;
    let tables_a = engine::read_completed_set(&args.method_a, ds)?;
    let tables_b = engine::read_completed_set(&args.method_b, ds)?;

    let target = match &args.target {
        Some(name) => Some(resolve_var(ds, name)?),
        None => default_amount_variable(ds),
    };

    let mut report = DiagnosticsReport {
        fmi: diagnostics::fmi_of_means(ds, &tables_a)?,
        indicator_props: diagnostics::indicator_props(ds, &tables_a, 0, args.alert_threshold)?,
        ..DiagnosticsReport::default()
    };

    if let Some(t) = target {
        let spec = &ds.variables()[t];
        let observed: Vec<f64> = (0..ds.n_rows())
            .filter_map(|r| match ds.cell(r, t) {
                chainimp::data_model::Cell::Observed(v) => Some(v),
                _ => None,
            })
            .collect();
        let completed: Vec<f64> = (0..ds.n_rows())
            .map(|r| tables_a[0].value_or_zero(r, t))
            .collect();
        report.summary = Some((spec.name.clone(), diagnostics::summary_compare(&observed, &completed)?));

        // Agreement on the model (transformed) scale, method A vs B.
        let tvals = |table: &engine::CompletedTable| -> Result<Vec<f64>> {
            (0..ds.n_rows())
                .map(|r| spec.transform.apply(table.value_or_zero(r, t)))
                .collect()
        };
        let a = tvals(&tables_a[0])?;
        let b = tvals(&tables_b[0])?;
        report.bland_altman = Some((spec.name.clone(), diagnostics::bland_altman(&a, &b)?));
    }

    let corr_vars: Vec<usize> = if args.corr_vars.is_empty() {
        ds.variables()
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                matches!(
                    s.kind,
                    VariableKind::Continuous | VariableKind::Semicontinuous
                ) && s.eligibility == Eligibility::ImputedAndPredictor
            })
            .map(|(v, _)| v)
            .collect()
    } else {
        args.corr_vars
            .iter()
            .map(|n| resolve_var(ds, n))
            .collect::<Result<_>>()?
    };
    if corr_vars.len() >= 2 {
        report.correlations = Some(diagnostics::correlation_compare(
            ds, &tables_a, &tables_b, &corr_vars,
        )?);
    }

    if let Some(outcome) = &args.outcome {
        if args.predictors.is_empty() {
            return Err(Error::validation(
                "--outcome needs --predictors".to_string(),
            ));
        }
        let outcome = resolve_var(ds, outcome)?;
        let predictors: Vec<usize> = args
            .predictors
            .iter()
            .map(|n| resolve_var(ds, n))
            .collect::<Result<_>>()?;
        let obs_fit = diagnostics::complete_case_regression(ds, outcome, &predictors)?;
        let mi_fits: Vec<inference::FitSummary> = tables_a
            .iter()
            .map(|t| {
                diagnostics::completed_regression(ds, t, outcome, &predictors).map(|f| {
                    inference::FitSummary {
                        coefficients: f.coefficients,
                        std_errors: f.std_errors,
                    }
                })
            })
            .collect::<Result<_>>()?;
        let mi = inference::pool_regression(&mi_fits)?;
        let hd_fit = diagnostics::completed_regression(ds, &tables_b[0], outcome, &predictors)?;
        report.regression = Some(diagnostics::regression_compare(&obs_fit, &mi, &hd_fit)?);
    }

    let mut manifest = RunManifest::new(command_line(), 0);
    manifest.warnings.extend(loaded.warnings);
    report.write(&args.out_dir, manifest)?;
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let ds = match args.scenario {
        Scenario::Bivariate => {
            let mechanism = match args.mechanism {
                MechanismArg::Mcar => simulate::Mechanism::Mcar,
                MechanismArg::Mar => simulate::Mechanism::MarOnCovariate,
            };
            simulate::bivariate(args.rows, args.rho, args.missing, mechanism, args.seed)?
        }
        Scenario::Skip => simulate::nested_skip(args.rows, args.seed)?,
        Scenario::Survey => simulate::wide_survey(args.rows, args.cols, args.missing, args.seed)?,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let data_path = args.out_dir.join("data.csv");
    let file = std::fs::File::create(&data_path)?;
    ds.write_csv(std::io::BufWriter::new(file))?;
    let config_path = args.out_dir.join("config.json");
    serde_json::to_writer_pretty(
        std::io::BufWriter::new(std::fs::File::create(&config_path)?),
        &ds.to_config(),
    )?;
    let manifest = RunManifest::new(command_line(), args.seed);
    manifest.write(args.out_dir.join("manifest.json"))?;
    log::info!(
        "wrote {} and {}",
        data_path.display(),
        config_path.display()
    );
    Ok(())
}
