//! `graphscore`: command-line front end of the experiment pipeline.
//!
//! Exit codes: 0 on success, 2 when some grid variants or feature blocks
//! failed, 1 on usage, validation or fatal errors.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphscore::datagen::load_dataset;
use graphscore::gnn::{write_history_jsonl, LayerKind};
use graphscore::pipeline::{
    evaluate_model, load_blocks, render_report, run_experiment, stage_features, stage_generate, train_gbdt_variant,
    train_gnn_layer, ExperimentConfig, Layout, PipelineError, ResolvedConfig, RunLog,
};
use log::{error, info, warn};

#[derive(Parser)]
#[command(name = "graphscore", version, about = "Graph features and graph neural networks for credit scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate users and relation edges into <out>/data.
    Gen(Common),
    /// Compute graph feature blocks from <out>/data into <out>/features.
    Features(Common),
    /// Fit one tabular variant on the first split into <out>/models.
    TrainGbdt {
        #[command(flatten)]
        common: Common,
        /// Variant name: base, base+<relation> or base+all.
        #[arg(long, default_value = "base+all")]
        variant: String,
    },
    /// Train one GNN layer type on the first split into <out>/models.
    TrainGnn {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_layer, default_value = "gcn")]
        layer: LayerKind,
    },
    /// Score a saved model on the test rows of the first split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run the full pipeline and write the report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Force sequential execution.
        #[arg(long)]
        deterministic: bool,
    },
    /// Re-render report.json and report.csv from the artifacts in <out>.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_layer(s: &str) -> Result<LayerKind, String> {
    LayerKind::ALL
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown layer `{s}` (expected gcn, sage, gat or tagcn)"))
}

fn resolve(common: &Common) -> Result<(ResolvedConfig, Layout), PipelineError> {
    let raw = ExperimentConfig::load(&common.config)?;
    let cfg = raw.resolve(common.seed)?;
    let out = common.out.clone().or(raw.output_dir).ok_or_else(|| graphscore::pipeline::ConfigError::Invalid {
        block: "output_dir",
        msg: "no output directory (set output_dir or pass --out)".into(),
    })?;
    Ok((cfg, Layout::new(out)))
}

fn open_log(layout: &Layout) -> Result<RunLog, PipelineError> {
    layout.create(&layout.logs())?;
    RunLog::append(&layout.logs().join("run.jsonl"))
}

fn load_data(cfg: &ResolvedConfig, layout: &Layout) -> Result<graphscore::datagen::Dataset, PipelineError> {
    let data = load_dataset(&layout.data())?;
    if data.manifest.root_seed != cfg.seed {
        warn!("dataset was generated with seed {}, config resolves to {}", data.manifest.root_seed, cfg.seed);
    }
    Ok(data)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn execute(command: Command) -> Result<ExitCode, PipelineError> {
    match command {
        Command::Gen(common) => {
            let (cfg, layout) = resolve(&common)?;
            let mut log = open_log(&layout)?;
            let data = stage_generate(&cfg, &layout, &mut log)?;
            log.flush()?;
            info!("wrote {} users to {}", data.users.len(), layout.data().display());
        }
        Command::Features(common) => {
            let (cfg, layout) = resolve(&common)?;
            let data = load_data(&cfg, &layout)?;
            let mut log = open_log(&layout)?;
            let blocks = stage_features(&cfg, &data, &layout, &mut log)?;
            log.flush()?;
            if blocks.iter().any(|(_, b)| b.is_err()) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::TrainGbdt { common, variant } => {
            let (cfg, layout) = resolve(&common)?;
            let data = load_data(&cfg, &layout)?;
            let blocks = load_blocks(&cfg, &layout)?;
            let model = train_gbdt_variant(&cfg, &data, &blocks, &variant)?;
            layout.create(&layout.models())?;
            let path = layout.models().join(format!("gbdt_{variant}.json"));
            fs::write(&path, model.to_json()?).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            emit(&format!("{}\n", path.display()));
        }
        Command::TrainGnn { common, layer } => {
            let (cfg, layout) = resolve(&common)?;
            let data = load_data(&cfg, &layout)?;
            let trained = train_gnn_layer(&cfg, &data, layer)?;
            layout.create(&layout.models())?;
            layout.create(&layout.logs())?;
            let path = layout.models().join(format!("gnn_{layer}.json"));
            fs::write(&path, trained.model.to_json()?)
                .map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            let log_path = layout.logs().join(format!("gnn_{layer}.jsonl"));
            let mut f =
                fs::File::create(&log_path).map_err(|source| PipelineError::Io { path: log_path.clone(), source })?;
            write_history_jsonl(&mut f, &trained.history)?;
            emit(&format!("{}\n", path.display()));
        }
        Command::Eval { common, model } => {
            let (cfg, layout) = resolve(&common)?;
            let data = load_data(&cfg, &layout)?;
            let blocks = load_blocks(&cfg, &layout)?;
            let outcome = evaluate_model(&cfg, &data, &blocks, &model)?;
            let dir = layout.root.join("eval");
            layout.create(&dir)?;
            let stem = model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            write_json(&dir.join(format!("{stem}.json")), &outcome)?;
            emit(&(serde_json::to_string_pretty(&outcome).expect("outcome serializes") + "\n"));
        }
        Command::Run { common, deterministic } => {
            let (cfg, layout) = resolve(&common)?;
            let outcome = run_experiment(&cfg, &layout.root, deterministic)?;
            emit(&outcome.report.to_csv());
            let failed = outcome.report.n_failed();
            if failed > 0 {
                warn!("{failed} variant(s) failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { out } => {
            let report = render_report(&out)?;
            emit(&report.to_csv());
            if report.n_failed() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
