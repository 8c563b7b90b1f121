use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jarvis_core::baselines::PolicyKind;
use jarvis_core::operators::CostModel;
use jarvis_core::workloads::QueryKind;
use jarvis_sim::config::parse_policy;
use jarvis_sim::sweep::{self, Axis};
use jarvis_sim::tools::{self, GenRequest};
use jarvis_sim::{run, write_metrics_csv, CliError, ConfigError, SimConfig};

/// Simulates data sources that partition monitoring queries with a shared
/// stream processor.
#[derive(Parser)]
#[command(name = "jarvis-sim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its metrics CSV and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV path; overrides `output.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Summary JSON path; overrides `output.summary`. Printed to stdout
        /// when neither is given.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Exit with code 3 unless every instance settles after every change.
        #[arg(long)]
        require_convergence: bool,
    },
    /// Run one experiment per value of an axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// cpu_budget, n_sources or input_scale.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; cpu budgets accept a `%` suffix.
        #[arg(long)]
        values: String,
        /// Comma-separated policies; defaults to those in the file.
        #[arg(long)]
        policies: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the same experiment under several policies.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policies: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Solve a partitioning instance file.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        /// Also search a grid of this step for comparison.
        #[arg(long)]
        grid: Option<f64>,
    },
    /// Dump generated input records as CSV.
    Gen {
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        rate_mbps: Option<f64>,
        #[arg(long, default_value_t = 0)]
        node: u32,
        #[arg(long, default_value_t = 0)]
        first_epoch: u64,
        #[arg(long, default_value_t = 1)]
        epochs: u64,
        #[arg(long, default_value_t = 1)]
        record_weight: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show the cost model and what full local execution of each query needs.
    ExplainCosts {
        /// Use the costs, rates and tables of this experiment file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        record_weight: u32,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn policies(list: &str) -> Result<Vec<PolicyKind>, ConfigError> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_policy).collect()
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    csv: Option<PathBuf>,
    summary: Option<PathBuf>,
    require_convergence: bool,
) -> Result<(), CliError> {
    let mut cfg = SimConfig::load(config)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let out = run(&cfg)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let csv = csv.or_else(|| cfg.output.csv.as_ref().map(|p| base.join(p)));
    let summary = summary.or_else(|| cfg.output.summary.as_ref().map(|p| base.join(p)));
    if let Some(p) = &csv {
        write_metrics_csv(&out.series, create(p)?)?;
        log::info!("metrics written to {}", p.display());
    }
    let json = serde_json::to_string_pretty(&out.summary)?;
    match &summary {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    if (require_convergence || cfg.run.require_convergence) && !out.summary.all_converged() {
        let missing: Vec<String> = out
            .summary
            .convergence
            .iter()
            .filter(|c| c.epochs_raw.is_none())
            .map(|c| format!("node {} query {} after epoch {}", c.node, c.query, c.change_epoch))
            .collect();
        return Err(CliError::NotConverged(format!("never converged: {}", missing.join(", "))));
    }
    Ok(())
}

fn cmd_explain(config: Option<PathBuf>, weight: u32) -> Result<(), CliError> {
    let (cost, targets) = match config {
        Some(p) => {
            let exp = SimConfig::load(&p)?.to_experiment()?;
            let targets: Vec<_> = exp
                .queries
                .iter()
                .map(|q| {
                    let scale = q.rate_scale.at(0) * q.workload.rate_mbps() / q.kind.workload(1).rate_mbps();
                    (q.kind, scale, q.table_entries.at(0))
                })
                .collect();
            (exp.cost, targets)
        }
        None => (
            CostModel::default(),
            QueryKind::ALL.iter().map(|k| (*k, 1.0, jarvis_core::workloads::DEFAULT_TOR_ENTRIES)).collect(),
        ),
    };
    let mut out = io::stdout().lock();
    writeln!(out, "cost model (cpu-seconds per record):")?;
    for (name, v) in CostModel::NAMES.iter().zip(cost.values()) {
        writeln!(out, "  {name:<22} {v:.4e}")?;
    }
    for (kind, scale, entries) in targets {
        let e = tools::explain(kind, scale, entries, &cost, weight)?;
        writeln!(out, "\n{} at {:.2} Mbps: {:.3} cores to run locally", e.kind, e.rate_mbps, e.full_local_cores)?;
        for op in &e.operators {
            writeln!(out, "  {:<12} {:>12.0} records/s", op.operator, op.records_per_s)?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            csv,
            summary,
            require_convergence,
        } => cmd_run(&config, seed, csv, summary, require_convergence),
        Cmd::Sweep {
            config,
            axis,
            values,
            policies: list,
            jobs,
            out,
        } => {
            let cfg = SimConfig::load(&config)?;
            let axis: Axis = axis.parse()?;
            let values = sweep::parse_values(&values)?;
            let list = list.as_deref().map(policies).transpose()?.unwrap_or_default();
            let rows = sweep::sweep(&cfg, axis, &values, &list, jobs)?;
            match out {
                Some(p) => sweep::write_sweep_csv(&rows, create(&p)?),
                None => sweep::write_sweep_csv(&rows, io::stdout().lock()),
            }
        }
        Cmd::Compare {
            config,
            policies: list,
            jobs,
        } => {
            let cfg = SimConfig::load(&config)?;
            let rows = sweep::compare(&cfg, &policies(&list)?, jobs)?;
            let mut out = io::stdout().lock();
            writeln!(out, "{:<12} {:>12} {:>12} {:>12} {:>8}", "policy", "tput_mbps", "traffic_mbps", "lat_p50_s", "ratio")?;
            for r in rows {
                writeln!(
                    out,
                    "{:<12} {:>12.3} {:>12.3} {:>12.2} {:>8.3}",
                    r.policy, r.throughput_mbps, r.traffic_mbps, r.latency_median_s, r.ratio_to_first
                )?;
            }
            Ok(())
        }
        Cmd::Solve { instance, grid } => {
            let report = tools::solve(&tools::load_instance(&instance)?, grid)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Gen {
            kind,
            seed,
            rate_mbps,
            node,
            first_epoch,
            epochs,
            record_weight,
            out,
        } => {
            let kind = QueryKind::parse(&kind).ok_or_else(|| ConfigError::Invalid(format!("unknown query kind `{kind}`")))?;
            let req = GenRequest {
                kind,
                seed,
                rate_mbps,
                node,
                first_epoch,
                epochs,
                record_weight,
            };
            let n = match out {
                Some(p) => tools::generate(&req, create(&p)?)?,
                None => tools::generate(&req, io::stdout().lock())?,
            };
            log::info!("{n} records");
            Ok(())
        }
        Cmd::ExplainCosts { config, record_weight } => cmd_explain(config, record_weight),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JARVIS_SIM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
