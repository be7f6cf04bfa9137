use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilaf_core::baselines::{select_baseline, BaselineConfig, BaselineMethod};
use bilaf_core::eval::{compare_methods, evaluate_selection, summarize, MethodSpec, TrialRow};
use bilaf_core::pca::project_2d;
use bilaf_core::pool::{generate_mixture, load_pool, save_pool, FeaturePool, MixtureSpec, PoolFormat};
use bilaf_core::util::derive_seed;
use bilaf_core::{run_bilaf_detailed, Error, SelectionConfig};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "bilaf", version, about = "Bi-level active sample selection over feature pools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic labelled Gaussian-mixture pool.
    Generate(GenerateArgs),
    /// Select samples with BiLAF or a baseline.
    Select(SelectArgs),
    /// Score selections with the nearest-centroid proxy.
    Evaluate(EvaluateArgs),
    /// Evaluate BiLAF over a grid of ablation settings.
    Sweep(SweepArgs),
    /// Write a 2-D PCA projection of the pool for plotting.
    ExportViz(VizArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Output file; `.csv` writes CSV, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = bilaf_core::pool::DEFAULT_SEPARATION)]
    separation: f64,
    #[arg(long, default_value_t = bilaf_core::pool::DEFAULT_INTRA_STD)]
    intra_std: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// BiLAF hyperparameters. Every flag overrides the config file.
#[derive(Debug, Args, Clone)]
struct TuningArgs {
    /// Plain-text `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    cores: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    removal_ratio: Option<String>,
    #[arg(long)]
    include_fraction: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    /// idc | db | dg | none
    #[arg(long)]
    denoise: Option<String>,
    /// bs | bd
    #[arg(long)]
    criterion: Option<String>,
    /// isr | os
    #[arg(long)]
    process: Option<String>,
    /// on | off
    #[arg(long)]
    opponent_penalty: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
}

impl TuningArgs {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        [
            ("budget", &self.budget),
            ("cores", &self.cores),
            ("knn-k", &self.knn_k),
            ("removal-ratio", &self.removal_ratio),
            ("include-fraction", &self.include_fraction),
            ("delta", &self.delta),
            ("denoise", &self.denoise),
            ("criterion", &self.criterion),
            ("process", &self.process),
            ("opponent-penalty", &self.opponent_penalty),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("max-iters", &self.max_iters),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }

    fn build(&self) -> Result<SelectionConfig, CliError> {
        let mut cfg = SelectionConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    pool: PathBuf,
    /// bilaf | random | fds | kmeans
    #[arg(long, default_value = "bilaf")]
    method: String,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write the optimizer loss trace (BiLAF only).
    #[arg(long)]
    trace: bool,
    /// Also write per-cluster denoising reports (BiLAF only).
    #[arg(long)]
    denoise_report: bool,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pool: PathBuf,
    /// Evaluate an existing selection file instead of running selectors.
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Comma-separated methods to compare.
    #[arg(long, value_delimiter = ',', default_value = "bilaf,random")]
    method: Vec<String>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    knn_k: Option<String>,
    #[arg(long)]
    include_fraction: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long, value_delimiter = ',')]
    denoise: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    criterion: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    process: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    opponent_penalty: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    cores: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    removal_ratio: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    delta: Vec<String>,
}

#[derive(Debug, Args)]
struct VizArgs {
    #[arg(long)]
    pool: PathBuf,
    /// `selection.json` (stages are exported) or an index list.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Invariant(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_config() {
            CliError::Usage(e.to_string())
        } else if e.is_invariant() {
            CliError::Invariant(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Select(a) => cmd_select(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::ExportViz(a) => cmd_export_viz(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
        Err(CliError::Invariant(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(EXIT_INVARIANT)
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("creating {}: {e}", dir.display())))
}

fn open_pool(path: &Path) -> Result<FeaturePool, CliError> {
    Ok(load_pool(path, PoolFormat::from_path(path))?)
}

/// `# key = value` comment lines describing how a file was produced.
fn header(command: &str, extra: &[(&str, String)], cfg: Option<&SelectionConfig>) -> String {
    let mut out = format!("# bilaf {command}\n");
    for (k, v) in extra {
        let _ = writeln!(out, "# {k} = {v}");
    }
    if let Some(cfg) = cfg {
        for line in cfg.to_text().lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| CliError::Invariant(e.to_string()))
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let spec = MixtureSpec {
        num_classes: a.classes,
        samples_per_class: a.per_class,
        dim: a.dim,
        center_separation: a.separation,
        intra_std: a.intra_std,
        noise_fraction: a.noise_fraction,
        seed: a.seed,
    };
    let pool = generate_mixture(&spec)?;
    match PoolFormat::from_path(&a.out) {
        PoolFormat::Csv { .. } => write_file(&a.out, pool.to_csv()),
        PoolFormat::Binary => Ok(save_pool(&pool, &a.out)?),
    }
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    method: &'a str,
    pool: String,
    config: Option<&'a SelectionConfig>,
    budget: usize,
    seed: u64,
    core_indices: Option<&'a [usize]>,
    final_loss: Option<f64>,
    selected: serde_json::Value,
    per_cluster_budget: Option<&'a [usize]>,
    per_cluster_picks: Option<&'a [usize]>,
}

fn cmd_select(a: &SelectArgs) -> Result<(), CliError> {
    let cfg = a.tuning.build()?;
    let pool = open_pool(&a.pool)?;
    ensure_dir(&a.out_dir)?;
    let pool_name = a.pool.display().to_string();
    let method = a.method.to_ascii_lowercase();
    let extra = vec![("method", method.clone()), ("pool", pool_name.clone())];

    if method == "bilaf" {
        let run = run_bilaf_detailed(&pool, &cfg, false)?;
        let file = SelectionFile {
            method: "bilaf",
            pool: pool_name,
            config: Some(&cfg),
            budget: cfg.budget,
            seed: cfg.seed,
            core_indices: Some(&run.cores.center_indices),
            final_loss: Some(run.cores.final_loss),
            selected: serde_json::to_value(&run.result.selected).map_err(|e| CliError::Invariant(e.to_string()))?,
            per_cluster_budget: Some(&run.result.per_cluster_budget),
            per_cluster_picks: Some(&run.result.per_cluster_picks),
        };
        write_file(
            &a.out_dir.join("selection.txt"),
            header("select", &extra, Some(&cfg)) + &run.result.index_list(),
        )?;
        write_file(&a.out_dir.join("selection.json"), to_json(&file)?)?;
        if a.trace {
            write_file(
                &a.out_dir.join("optimizer_trace.csv"),
                header("select", &extra, Some(&cfg)) + &run.cores.trace_csv(),
            )?;
        }
        if a.denoise_report {
            write_file(&a.out_dir.join("denoise.json"), to_json(&run.denoise_reports)?)?;
        }
        return Ok(());
    }

    let baseline: BaselineMethod = method
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown method {:?}; use bilaf, random, fds or kmeans", a.method)))?;
    let bcfg = BaselineConfig::new(baseline, cfg.budget, derive_seed(cfg.seed, baseline.name()));
    let indices = select_baseline(&pool, &bcfg)?;
    let extra = vec![
        ("method", method.clone()),
        ("pool", pool_name.clone()),
        ("budget", cfg.budget.to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    let list: String = indices.iter().map(|i| format!("{i}\n")).collect();
    write_file(&a.out_dir.join("selection.txt"), header("select", &extra, None) + &list)?;
    let file = SelectionFile {
        method: baseline.name(),
        pool: pool_name,
        config: None,
        budget: cfg.budget,
        seed: cfg.seed,
        core_indices: None,
        final_loss: None,
        selected: serde_json::to_value(
            indices
                .iter()
                .map(|&i| serde_json::json!({ "index": i }))
                .collect::<Vec<_>>(),
        )
        .map_err(|e| CliError::Invariant(e.to_string()))?,
        per_cluster_budget: None,
        per_cluster_picks: None,
    };
    write_file(&a.out_dir.join("selection.json"), to_json(&file)?)
}

/// Reads `(index, stage)` pairs from `selection.json` or a plain index list.
fn read_selection(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let items = v["selected"]
            .as_array()
            .ok_or_else(|| CliError::Data(format!("{}: missing `selected` array", path.display())))?;
        return items
            .iter()
            .map(|r| {
                let idx = r["index"]
                    .as_u64()
                    .ok_or_else(|| CliError::Data(format!("{}: record without index", path.display())))?;
                let stage = r["stage"].as_str().unwrap_or("selected").to_string();
                Ok((idx as usize, stage))
            })
            .collect();
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| {
            l.trim()
                .parse::<usize>()
                .map(|i| (i, "selected".to_string()))
                .map_err(|_| CliError::Data(format!("{} line {}: not an index", path.display(), n + 1)))
        })
        .collect()
}

fn method_specs(names: &[String], cfg: &SelectionConfig) -> Result<Vec<MethodSpec>, CliError> {
    names
        .iter()
        .map(|n| match n.to_ascii_lowercase().as_str() {
            "bilaf" => Ok(MethodSpec::Bilaf(cfg.clone())),
            other => other
                .parse::<BaselineMethod>()
                .map(|method| MethodSpec::Baseline {
                    method,
                    budget: cfg.budget,
                })
                .map_err(|_| CliError::Usage(format!("unknown method {other:?}"))),
        })
        .collect()
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = a.tuning.build()?;
    let pool = open_pool(&a.pool)?;
    ensure_dir(&a.out_dir)?;
    let pool_name = a.pool.display().to_string();

    if let Some(sel_path) = &a.selection {
        let indices: Vec<usize> = read_selection(sel_path)?.into_iter().map(|(i, _)| i).collect();
        let report = evaluate_selection(&pool, &indices)?;
        let extra = vec![
            ("pool", pool_name),
            ("selection", sel_path.display().to_string()),
            ("test_set", "pool minus selection".to_string()),
        ];
        let row = TrialRow {
            method: "selection".into(),
            trial: 0,
            accuracy: report.top1_accuracy,
            coverage: report.class_coverage,
            margin: report.mean_boundary_margin,
        };
        let csv = format!(
            "method,trial,accuracy,coverage,margin\n{},{},{},{},{}\n",
            row.method, row.trial, row.accuracy, row.coverage, row.margin
        );
        write_file(&a.out_dir.join("evaluation.csv"), header("evaluate", &extra, None) + &csv)?;
        return write_file(&a.out_dir.join("evaluation.json"), to_json(&report)?);
    }

    let methods = method_specs(&a.method, &cfg)?;
    let cmp = compare_methods(&pool, &methods, a.trials, cfg.seed)?;
    let extra = vec![
        ("pool", pool_name),
        ("methods", a.method.join(",")),
        ("trials", a.trials.to_string()),
        ("test_set", "pool minus selection".to_string()),
    ];
    let head = header("evaluate", &extra, Some(&cfg));
    write_file(&a.out_dir.join("evaluation.csv"), head.clone() + &cmp.rows_csv())?;
    write_file(&a.out_dir.join("summary.csv"), head + &cmp.summary_csv())
}

const SWEEP_AXES: [&str; 7] = [
    "denoise",
    "criterion",
    "process",
    "opponent-penalty",
    "cores",
    "removal-ratio",
    "delta",
];

fn axis_value(cfg: &SelectionConfig, axis: &str) -> String {
    let text = cfg.to_text();
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == axis).map(|(_, v)| v.to_string()))
        .unwrap_or_default()
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let tuning = TuningArgs {
        config: a.config.clone(),
        budget: a.budget.clone(),
        cores: None,
        knn_k: a.knn_k.clone(),
        removal_ratio: None,
        include_fraction: a.include_fraction.clone(),
        delta: None,
        denoise: None,
        criterion: None,
        process: None,
        opponent_penalty: None,
        seed: a.seed.clone(),
        lr: None,
        max_iters: a.max_iters.clone(),
    };
    let base = tuning.build()?;
    let given = [
        &a.denoise,
        &a.criterion,
        &a.process,
        &a.opponent_penalty,
        &a.cores,
        &a.removal_ratio,
        &a.delta,
    ];
    let axes: Vec<Vec<String>> = SWEEP_AXES
        .iter()
        .zip(given)
        .map(|(axis, values)| {
            if values.is_empty() {
                vec![axis_value(&base, axis)]
            } else {
                values.clone()
            }
        })
        .collect();

    // cross product in axis order, last axis fastest
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for values in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    let configs: Vec<SelectionConfig> = cells
        .iter()
        .map(|cell| {
            let mut cfg = base.clone();
            for (axis, v) in SWEEP_AXES.iter().zip(cell) {
                cfg.set(axis, v)?;
            }
            Ok(cfg)
        })
        .collect::<Result<_, Error>>()?;

    let pool = open_pool(&a.pool)?;
    ensure_dir(&a.out_dir)?;
    let summaries = configs
        .par_iter()
        .map(|cfg| {
            compare_methods(&pool, &[MethodSpec::Bilaf(cfg.clone())], a.trials, cfg.seed)
                .map(|c| summarize("bilaf", &c.rows))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut csv = SWEEP_AXES.iter().map(|s| s.replace('-', "_")).collect::<Vec<_>>().join(",");
    csv.push_str(",trials,mean_accuracy,std_accuracy,mean_coverage,mean_margin\n");
    for (cell, s) in cells.iter().zip(&summaries) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            cell.join(","),
            s.trials,
            s.mean_accuracy,
            s.std_accuracy,
            s.mean_coverage,
            s.mean_margin
        );
    }
    let extra = vec![
        ("pool", a.pool.display().to_string()),
        ("trials", a.trials.to_string()),
        ("cells", cells.len().to_string()),
        ("swept", SWEEP_AXES.join(",")),
    ];
    write_file(&a.out_dir.join("sweep.csv"), header("sweep", &extra, Some(&base)) + &csv)
}

fn cmd_export_viz(a: &VizArgs) -> Result<(), CliError> {
    let pool = open_pool(&a.pool)?;
    ensure_dir(&a.out_dir)?;
    let projection = project_2d(&pool)?;
    let mut stage = vec![String::from("none"); pool.n()];
    if let Some(path) = &a.selection {
        for (i, s) in read_selection(path)? {
            if i >= pool.n() {
                return Err(CliError::Data(format!("selected index {i} is outside the pool")));
            }
            stage[i] = s;
        }
    }
    let extra = vec![
        ("pool", a.pool.display().to_string()),
        (
            "selection",
            a.selection.as_ref().map_or("none".into(), |p| p.display().to_string()),
        ),
        ("variance_pc1", projection.variances[0].to_string()),
        ("variance_pc2", projection.variances[1].to_string()),
    ];
    let mut csv = header("export-viz", &extra, None);
    csv.push_str("x,y,label,selected_stage\n");
    for (i, c) in projection.coords.iter().enumerate() {
        let label = pool.labels().map_or(String::new(), |l| l[i].to_string());
        let _ = writeln!(csv, "{},{},{},{}", c[0], c[1], label, stage[i]);
    }
    write_file(&a.out_dir.join("viz.csv"), csv)
}
