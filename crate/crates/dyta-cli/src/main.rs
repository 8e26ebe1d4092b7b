//! `dyta` — the single entry point for the simulation pipeline: config
//! validation, preset runs, experiments, and synthetic-dataset
//! generation. Exit codes: 0 success, 1 usage/config, 2 data, 3 backend,
//! 4 invalid run (too many per-user failures).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use dyta_core::dataset::synth::{generate_ml1m, SynthConfig};
use dyta_core::gateway::{LiveSettings, MockPolicy};
use dyta_eval::config::BackendKind;
use dyta_eval::experiments::{
    ablation_matrix, history_sweep, icl_sweep, position_bias_experiment,
    rating_distribution_experiment, DEFAULT_HISTORY_SWEEP, DEFAULT_ICL_SWEEP,
};
use dyta_eval::report::{
    write_position_bias_csv, write_rating_dist_csv, write_report_json, write_sweep_csv,
    write_table1_csv,
};
use dyta_eval::{BackendSpec, EvalError, Harness, Preset, RunConfig, RunOptions, RunReport};

#[derive(Parser)]
#[command(
    name = "dyta",
    version,
    about = "Temporal-aware LLM-agent user simulator and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Live,
    Mock,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file and echo it with all defaults resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate one preset and write report.json, table1.csv, and the
    /// per-run gateway ledgers into a timestamped output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// One of: dyta_bc, dyta_rrf, long_term, long_short, sequential,
        /// clustering, seq_long, no_saa_bc, no_saa_rrf, random, bm25.
        #[arg(long)]
        preset: String,
        /// Overrides the config's backend choice.
        #[arg(long)]
        backend: Option<BackendArg>,
        /// Mock behaviour: gt_first, gt_at:<p>, or position_picker.
        #[arg(long)]
        mock_policy: Option<String>,
        /// Added to every run seed, for replicate runs.
        #[arg(long, default_value_t = 0)]
        seed_offset: i64,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment and write its CSVs.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// One of: position_bias, rating_dist, ablation, sweep.
        #[arg(long)]
        experiment: String,
        /// Agent preset used by position_bias/rating_dist (default dyta_rrf).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        backend: Option<BackendArg>,
        #[arg(long)]
        mock_policy: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed_offset: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset in the evaluation file format.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        users: u32,
        #[arg(long, default_value_t = 400)]
        items: u32,
        #[arg(long, default_value_t = 15)]
        min_ratings: u32,
        #[arg(long, default_value_t = 40)]
        max_ratings: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                EvalError::Config(_) => 1,
                EvalError::Data(_) | EvalError::Io { .. } => 2,
                EvalError::Backend(_) => 3,
            })
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, EvalError> {
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run { config, preset, backend, mock_policy, seed_offset, out } => {
            cmd_run(&config, &preset, backend, mock_policy.as_deref(), seed_offset, out)
        }
        Command::Experiment {
            config,
            experiment,
            preset,
            backend,
            mock_policy,
            seed_offset,
            out,
        } => cmd_experiment(
            &config,
            &experiment,
            preset.as_deref(),
            backend,
            mock_policy.as_deref(),
            seed_offset,
            out,
        ),
        Command::SynthData { out, users, items, min_ratings, max_ratings, seed } => {
            cmd_synth_data(&out, users, items, min_ratings, max_ratings, seed)
        }
    }
}

fn cmd_validate(config_path: &Path) -> Result<ExitCode, EvalError> {
    let config = RunConfig::load(config_path)?;
    if let Some(dir) = &config.prompts_dir {
        // Surfaces the exact missing template file, not just the directory.
        dyta_core::prompts::TemplateStore::from_dir(dir)
            .map_err(|e| EvalError::Config(e.to_string()))?;
    }
    let echo = serde_json::to_string_pretty(&config)
        .map_err(|e| EvalError::Config(format!("serializing config echo: {e}")))?;
    println!("{echo}");
    println!("config ok (digest {})", config.digest());
    Ok(ExitCode::SUCCESS)
}

/// Applies CLI overrides shared by run/experiment and builds the harness.
fn build_harness(
    config_path: &Path,
    backend_flag: Option<BackendArg>,
    mock_policy: Option<&str>,
    seed_offset: i64,
    out: Option<PathBuf>,
) -> Result<Harness, EvalError> {
    let mut config = RunConfig::load(config_path)?;
    if seed_offset != 0 {
        config.seeds = config
            .seeds
            .iter()
            .map(|s| s.wrapping_add(seed_offset as u64))
            .collect();
        config.validate()?;
    }
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    let backend_kind = match backend_flag {
        Some(BackendArg::Live) => BackendKind::Live,
        Some(BackendArg::Mock) => BackendKind::Mock,
        None => config.llm.backend,
    };
    let backend = match backend_kind {
        BackendKind::Mock => BackendSpec::Mock(parse_mock_policy(mock_policy)?),
        BackendKind::Live => BackendSpec::Live(LiveSettings {
            base_url: config.llm.base_url.clone(),
            timeout_secs: config.llm.timeout_secs,
        }),
    };
    Harness::new(config, backend)
}

fn parse_mock_policy(name: Option<&str>) -> Result<MockPolicy, EvalError> {
    let Some(name) = name else {
        return Ok(MockPolicy::GtFirst);
    };
    match name {
        "gt_first" => Ok(MockPolicy::GtFirst),
        "position_picker" => Ok(MockPolicy::PositionPicker),
        _ => {
            if let Some(p) = name.strip_prefix("gt_at:") {
                let position: usize = p.parse().map_err(|_| {
                    EvalError::Config(format!("mock policy gt_at wants a number, got {p:?}"))
                })?;
                Ok(MockPolicy::GtAt(position))
            } else {
                Err(EvalError::Config(format!(
                    "unknown mock policy {name:?}; expected gt_first, gt_at:<p>, or position_picker"
                )))
            }
        }
    }
}

/// Creates `<output_dir>/<label>-<UTC timestamp>/`, suffixing on collision.
fn timestamped_dir(base: &Path, label: &str) -> Result<PathBuf, EvalError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string();
    let mut path = base.join(format!("{label}-{stamp}"));
    let mut suffix = 1;
    while path.exists() {
        path = base.join(format!("{label}-{stamp}-{suffix}"));
        suffix += 1;
    }
    std::fs::create_dir_all(&path)
        .map_err(|e| EvalError::Io { path: path.clone(), source: e })?;
    Ok(path)
}

fn print_summary(report: &RunReport, out_dir: &Path) {
    println!(
        "{}: nDCG@5 {:.4}  nDCG@10 {:.4}  HR@3 {:.4}  ({} users x {} runs, {} failures{})",
        report.preset,
        report.metrics.ndcg_at_5,
        report.metrics.ndcg_at_10,
        report.metrics.hr_at_3,
        report.user_count,
        report.runs,
        report.per_run.iter().map(|r| r.failures).sum::<usize>(),
        if report.invalid { ", INVALID" } else { "" },
    );
    println!("wrote {}", out_dir.display());
}

fn cmd_run(
    config_path: &Path,
    preset_name: &str,
    backend: Option<BackendArg>,
    mock_policy: Option<&str>,
    seed_offset: i64,
    out: Option<PathBuf>,
) -> Result<ExitCode, EvalError> {
    let Some(preset) = Preset::from_name(preset_name) else {
        return Err(EvalError::Config(format!(
            "unknown preset {preset_name:?}; expected one of {}",
            Preset::ALL.map(|p| p.name()).join(", ")
        )));
    };
    let harness = build_harness(config_path, backend, mock_policy, seed_offset, out)?;
    let out_dir = timestamped_dir(&harness.config.output_dir, preset.name())?;
    let opts = RunOptions { ledger_dir: Some(out_dir.clone()), ..RunOptions::default() };
    let report = harness.run_with(preset.name(), &preset.method(&harness.config), &opts)?;
    write_report_json(&out_dir.join("report.json"), &report)?;
    write_table1_csv(&out_dir.join("table1.csv"), std::slice::from_ref(&report))?;
    print_summary(&report, &out_dir);
    if report.invalid {
        eprintln!(
            "error: more than {:.0}% of users failed in at least one run",
            100.0 * dyta_eval::runner::FAILURE_THRESHOLD
        );
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(
    config_path: &Path,
    experiment: &str,
    preset_name: Option<&str>,
    backend: Option<BackendArg>,
    mock_policy: Option<&str>,
    seed_offset: i64,
    out: Option<PathBuf>,
) -> Result<ExitCode, EvalError> {
    if !["position_bias", "rating_dist", "ablation", "sweep"].contains(&experiment) {
        return Err(EvalError::Config(format!(
            "unknown experiment {experiment:?}; expected position_bias, rating_dist, ablation, or sweep"
        )));
    }
    let preset = match preset_name {
        Some(name) => Preset::from_name(name)
            .ok_or_else(|| EvalError::Config(format!("unknown preset {name:?}")))?,
        None => Preset::DytaRrf,
    };
    let harness = build_harness(config_path, backend, mock_policy, seed_offset, out)?;
    let out_dir = timestamped_dir(&harness.config.output_dir, experiment)?;

    match experiment {
        "position_bias" => {
            let rows = position_bias_experiment(&harness, preset)?;
            write_position_bias_csv(&out_dir.join("position_bias.csv"), &rows)?;
        }
        "rating_dist" => {
            let (report, dist) = rating_distribution_experiment(&harness, preset)?;
            write_report_json(&out_dir.join("report.json"), &report)?;
            write_rating_dist_csv(&out_dir.join("rating_dist.csv"), &dist)?;
            println!(
                "total variation distance simulated vs dataset: {:.4}",
                dist.tv_distance
            );
        }
        "ablation" => {
            let reports = ablation_matrix(&harness)?;
            write_table1_csv(&out_dir.join("table1.csv"), &reports)?;
            for report in &reports {
                write_report_json(
                    &out_dir.join(format!("report-{}.json", report.preset)),
                    report,
                )?;
            }
        }
        "sweep" => {
            let history = history_sweep(&harness, &DEFAULT_HISTORY_SWEEP)?;
            write_sweep_csv(&out_dir.join("sweep_history.csv"), "history_len", &history)?;
            let icl = icl_sweep(&harness, &DEFAULT_ICL_SWEEP)?;
            write_sweep_csv(&out_dir.join("sweep_icl.csv"), "icl_k", &icl)?;
        }
        _ => unreachable!("validated above"),
    }
    println!("wrote {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth_data(
    out: &Path,
    users: u32,
    items: u32,
    min_ratings: u32,
    max_ratings: u32,
    seed: u64,
) -> Result<ExitCode, EvalError> {
    if items < 12 {
        return Err(EvalError::Config(
            "items must be at least 12 so negative sampling can fill a page".into(),
        ));
    }
    if min_ratings < 2 || min_ratings > max_ratings || max_ratings > items {
        return Err(EvalError::Config(
            "ratings per user must satisfy 2 <= min <= max <= items".into(),
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| EvalError::Io { path: out.to_path_buf(), source: e })?;
    let config = SynthConfig {
        users,
        items,
        min_ratings_per_user: min_ratings,
        max_ratings_per_user: max_ratings,
        seed,
    };
    generate_ml1m(out, &config)
        .map_err(|e| EvalError::Io { path: out.to_path_buf(), source: e })?;
    println!(
        "wrote synthetic dataset to {} ({} users, {} items)",
        out.display(),
        users,
        items
    );
    Ok(ExitCode::SUCCESS)
}
