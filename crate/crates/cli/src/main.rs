use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vte_core::harness::{
    emit_report, ingest_csv, load_result, normalize_outcomes, read_headers,
    run_benchmark_with_progress, write_csv, Condition, Estimand, Method, ReportFormat, RunConfig,
    Schema,
};
use vte_core::{
    cate_variance_baseline, cate_variance_on, estimate_cvte_subset, fit_nuisances, fit_propensity,
    gen_synthetic, match_vte, naive_vte, proposed_cvte, proposed_vte, Dataset, KernelSpec,
    LambdaPolicy, MatchConfig, MatchMetric, NoiseCoupling, ProposedOptions, SubsetOptions,
    SynthConfig,
};

#[derive(Parser)]
#[command(name = "vte", version, about = "Treatment-effect variance estimation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Simulate(SimulateArgs),
    /// Run one method on one CSV dataset.
    Estimate(EstimateArgs),
    /// Run the synthetic benchmark grid.
    Benchmark(BenchmarkArgs),
    /// Re-render a saved benchmark result.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimandArg {
    Vte,
    Cvte,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Plotdata,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Plotdata => ReportFormat::Plotdata,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Share one noise draw between the potential outcomes.
    #[arg(long)]
    shared_noise: bool,
    /// JSON generator config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; the resolved config goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON column-role schema; inferred from the header when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "proposed")]
    method: String,
    #[arg(long, value_enum, default_value = "vte")]
    estimand: EstimandArg,
    /// Conditioning column and value, e.g. `x2=0`.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    subset_tolerance: f64,
    #[arg(long, default_value_t = vte_core::baselines::DEFAULT_MATCH_K)]
    k: usize,
    /// Rescale outcomes to unit variance first.
    #[arg(long)]
    normalize: bool,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Single sample size; shorthand for `--sizes n`.
    #[arg(long, conflicts_with = "sizes")]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum)]
    estimand: Option<EstimandArg>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    subset_tolerance: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// JSON run config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for config, results and plot data.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// `results.json` written by `benchmark`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn sibling_config_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    out.with_file_name(format!("{stem}.config.json"))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.shared_noise {
        cfg.coupling = NoiseCoupling::SharedNoise;
    }
    let (data, _) = gen_synthetic(&cfg)?;
    write_csv(&data, &args.out)?;
    write_json(&sibling_config_path(&args.out), &cfg)?;
    eprintln!("wrote {} rows to {}", data.n(), args.out.display());
    Ok(())
}

/// Where a `name=value` condition points in an ingested dataset.
enum Target {
    Covariate(usize),
    Conditioning,
}

fn parse_named_condition(data: &Dataset, spec: &str) -> Result<(Target, f64)> {
    let (name, value) = spec
        .split_once('=')
        .with_context(|| format!("condition must look like 'x2=0', got '{spec}'"))?;
    let (name, value) = (name.trim(), value.trim());
    let value: f64 = value.parse().with_context(|| format!("bad condition value '{value}'"))?;
    if let Some(j) = data.covariate_names().iter().position(|c| c == name) {
        return Ok((Target::Covariate(j), value));
    }
    if data.conditioning_names().iter().any(|c| c == name) {
        if data.conditioning_names().len() != 1 {
            bail!("conditioning on '{name}' needs a dataset with exactly one conditioning column");
        }
        return Ok((Target::Conditioning, value));
    }
    bail!("condition column '{name}' not found")
}

fn run_method(data: &Dataset, method: Method, k: usize) -> Result<f64> {
    Ok(match method {
        Method::Proposed => proposed_vte(data, &ProposedOptions::default())?.0.estimate,
        Method::Naive => naive_vte(data)?,
        Method::CateVar => {
            let kernel = KernelSpec::gaussian_median(data.x())?;
            cate_variance_baseline(data, &fit_nuisances(data, &kernel, &LambdaPolicy::default())?)?
        }
        Method::MatchEuclid => match_vte(data, &MatchConfig { k, metric: MatchMetric::EuclideanStandardized }, None)?,
        Method::MatchPsm => {
            let prop = fit_propensity(data)?;
            match_vte(data, &MatchConfig { k, metric: MatchMetric::PropensityScore }, Some(&prop))?
        }
    })
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let method: Method = args.method.parse()?;
    let schema = match &args.schema {
        Some(p) => read_json(p)?,
        None => Schema::infer(&read_headers(&args.data)?),
    };
    let mut data = ingest_csv(&args.data, &schema)?;
    let mut scale = None;
    if args.normalize {
        let (normalized, s) = normalize_outcomes(&data)?;
        data = normalized;
        scale = Some(s);
    }
    let mut report = None;
    let value = match args.estimand {
        EstimandArg::Vte => {
            if method == Method::Proposed {
                let r = proposed_vte(&data, &ProposedOptions::default())?.0;
                let v = r.estimate;
                report = Some(serde_json::to_value(&r)?);
                v
            } else {
                run_method(&data, method, args.k)?
            }
        }
        EstimandArg::Cvte => {
            let spec = args.condition.as_deref().context("--estimand cvte needs --condition")?;
            let (target, v) = parse_named_condition(&data, spec)?;
            let tol = args.subset_tolerance;
            let column_values: Vec<f64> = match target {
                Target::Covariate(j) => data.x().col_values(j),
                Target::Conditioning => data.v().expect("checked").col_values(0),
            };
            let near: Vec<usize> = (0..data.n()).filter(|&i| (column_values[i] - v).abs() <= tol).collect();
            match (method, target) {
                (Method::Proposed, Target::Covariate(j)) => {
                    let r = estimate_cvte_subset(&data, &[j], &[v], &SubsetOptions::default())?;
                    let e = r.estimate;
                    report = Some(serde_json::to_value(&r)?);
                    e
                }
                (Method::Proposed, Target::Conditioning) => {
                    let r = proposed_cvte(&data, &[v], &ProposedOptions::default())?;
                    let e = r.estimate;
                    report = Some(serde_json::to_value(&r)?);
                    e
                }
                (Method::CateVar, _) => {
                    let kernel = KernelSpec::gaussian_median(data.x())?;
                    let models = fit_nuisances(&data, &kernel, &LambdaPolicy::default())?;
                    cate_variance_on(&models, &data.x().select_rows(&near))?
                }
                (m, _) => run_method(&data.subset(&near), m, args.k)?,
            }
        }
    };
    let out = json!({
        "method": method,
        "estimand": match args.estimand { EstimandArg::Vte => "vte", EstimandArg::Cvte => "cvte" },
        "condition": args.condition,
        "estimate": value,
        "outcome_scale": scale,
        "report": report,
        "config": {
            "data": args.data,
            "schema": schema,
            "subset_tolerance": args.subset_tolerance,
            "k": args.k,
            "normalize": args.normalize,
        },
    });
    match &args.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}

fn resolve_run_config(args: &BenchmarkArgs) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = args.n {
        cfg.sizes = vec![n];
    }
    if let Some(s) = &args.sizes {
        cfg.sizes = s.clone();
    }
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(m) = &args.methods {
        cfg.methods = m.iter().map(|s| s.parse()).collect::<vte_core::Result<_>>()?;
    }
    if let Some(t) = args.subset_tolerance {
        cfg.subset_tolerance = t;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    let condition = args.condition.as_deref().map(Condition::parse).transpose()?;
    match (args.estimand, condition) {
        (Some(EstimandArg::Vte), Some(_)) => bail!("--condition only applies to --estimand cvte"),
        (Some(EstimandArg::Vte), None) => cfg.estimand = Estimand::Vte,
        (Some(EstimandArg::Cvte), Some(c)) | (None, Some(c)) => cfg.estimand = Estimand::Cvte(c),
        (Some(EstimandArg::Cvte), None) => match cfg.estimand {
            Estimand::Cvte(_) => {}
            Estimand::Vte => bail!("--estimand cvte needs --condition"),
        },
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let cfg = resolve_run_config(&args)?;
    let quiet = args.quiet;
    let result = run_benchmark_with_progress(&cfg, |p| {
        if quiet {
            return;
        }
        match (&p.record.estimate, &p.record.error) {
            (Some(e), _) => eprintln!(
                "n={} rep={} {}: {e:.4} ({:.1}s)",
                p.size, p.record.rep, p.method, p.record.seconds
            ),
            (None, Some(err)) => eprintln!("n={} rep={} {}: failed: {err}", p.size, p.record.rep, p.method),
            (None, None) => {}
        }
    })?;
    match &cfg.out_dir {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_json(&dir.join("config.json"), &cfg)?;
            for f in ReportFormat::ALL {
                emit_report(&result, f, dir.join(f.file_name()))?;
            }
            eprintln!("wrote results to {}", dir.display());
        }
        None => print!("{}", vte_core::harness::render(&result, ReportFormat::Csv)?),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let result = load_result(&args.input)?;
    emit_report(&result, args.format.into(), &args.out)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Report(a) => report(a),
    }
}
