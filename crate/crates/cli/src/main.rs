use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ard_core::active::OracleAnnotator;
use ard_core::config::{ConfigError, ExperimentConfig, Mode};
use ard_core::data::{write_jsonl_with_sidecar, DataError, Dataset};
use ard_core::experiment::{
    self, prepare, run_ablation, run_pipeline, run_seed, seed_dir, split_quality, write_ablation,
    Ablation, ExperimentError,
};
use ard_core::metrics::{Labeling, MetricReport};
use ard_core::repr::write_curves;
use ard_serve::{resolve_addr, ServeError};

#[derive(Parser, Debug)]
#[command(name = "ard", version, about = "Active relation discovery experiments")]
struct Cli {
    /// Key/value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key, e.g. --set active.k_per_round=8.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Loads and validates the inputs and writes them with binary sidecars.
    Ingest,
    /// Writes the configured noisy or imbalanced variant.
    MakeVariant {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrains the relation encoder and saves it.
    Pretrain {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Scores the test pool with LOF and writes lof.csv.
    Detect {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Writes X_K and the train/test halves of X_N.
    Split {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One seed of the full pipeline with the oracle annotator.
    Loop {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Runs one seed behind the HTTP annotation service.
    Serve {
        #[arg(long)]
        seed: Option<u64>,
        /// Bind address (overrides ARD_BIND).
        #[arg(long)]
        bind: Option<String>,
        /// Port (overrides ARD_PORT).
        #[arg(long)]
        port: Option<u16>,
    },
    /// Scores predicted labels against gold labels (JSON objects id -> label).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Runs an ablation over every configured seed.
    Ablate {
        #[arg(long, value_parser = ["sampling", "lof", "query-range"])]
        which: String,
    },
    /// Summarizes a finished run directory.
    Report { dir: PathBuf },
    /// Every seed end to end, then summary.csv and summary.json.
    Pipeline,
}

/// Exit status and message of a failed command.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::Config(_) => Failure::usage(e.to_string()),
            _ if e.is_data_error() => Failure::data(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(format!("config: {e}"))
    }
}

impl From<ServeError> for Failure {
    fn from(e: ServeError) -> Self {
        match e {
            ServeError::Address(_) => Failure::usage(e.to_string()),
            ServeError::BadLog { .. } => Failure::data(e.to_string()),
            ServeError::Experiment(inner) => inner.into(),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

fn data_failure(stage: &str, e: DataError) -> Failure {
    Failure::data(format!("{stage}: {e}"))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::runtime(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_kv(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.set_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pick_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_dataset(ds: &Dataset, dir: &Path, name: &str) -> Result<(), Failure> {
    write_jsonl_with_sidecar(
        ds,
        &dir.join(format!("{name}.jsonl")),
        &dir.join(format!("{name}.arde")),
    )
    .map_err(|e| data_failure("write", e))
}

fn describe(ds: &Dataset) -> serde_json::Value {
    serde_json::json!({
        "instances": ds.len(),
        "dim": ds.dim(),
        "relations": ds.label_space().len(),
    })
}

fn print_json(v: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("value serializes")
    );
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Eval { pred, gold } = &cli.command {
        let pred = read_labels(pred)?;
        let gold = read_labels(gold)?;
        if pred.len() != gold.len() || pred.keys().any(|k| !gold.contains_key(k)) {
            return Err(Failure::data(
                "pred and gold must label the same instance ids",
            ));
        }
        let p: Vec<&String> = pred.values().collect();
        let g: Vec<&String> = gold.values().collect();
        print_json(&MetricReport::evaluate(&Labeling::new(&p, &g)));
        return Ok(());
    }
    if let Command::Report { dir } = &cli.command {
        let report = experiment::report(dir)?;
        print!("{}", report.markdown);
        return Ok(());
    }

    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => {
            let prep_seed = cfg.seeds[0];
            let dir = cfg.output.join("ingest");
            create_dir(&dir)?;
            let (train, test) = match (&cfg.train, &cfg.test) {
                (Some(tr), Some(te)) => (
                    ard_core::data::load_jsonl(tr).map_err(|e| data_failure("ingest", e))?,
                    ard_core::data::load_jsonl(te).map_err(|e| data_failure("ingest", e))?,
                ),
                _ => {
                    let spec = ard_core::data::SyntheticSpec {
                        seed: ard_core::rng::substream_seed(prep_seed, "data"),
                        ..cfg.synthetic.clone()
                    };
                    ard_core::data::gen_synthetic(&spec).map_err(|e| data_failure("ingest", e))?
                }
            };
            write_dataset(&train, &dir, "train")?;
            write_dataset(&test, &dir, "test")?;
            print_json(&serde_json::json!({ "train": describe(&train), "test": describe(&test) }));
        }
        Command::MakeVariant { seed } => {
            let seed = pick_seed(&cfg, seed);
            let (train, test) = match (&cfg.train, &cfg.test) {
                (Some(tr), Some(te)) => (
                    ard_core::data::load_jsonl(tr).map_err(|e| data_failure("ingest", e))?,
                    ard_core::data::load_jsonl(te).map_err(|e| data_failure("ingest", e))?,
                ),
                _ => {
                    let spec = ard_core::data::SyntheticSpec {
                        seed: ard_core::rng::substream_seed(seed, "data"),
                        ..cfg.synthetic.clone()
                    };
                    ard_core::data::gen_synthetic(&spec).map_err(|e| data_failure("ingest", e))?
                }
            };
            let (train, test) = experiment::apply_variant(&cfg.variant, seed, train, test)?;
            let dir = seed_dir(&cfg.output, seed).join("variant");
            create_dir(&dir)?;
            write_dataset(&train, &dir, "train")?;
            write_dataset(&test, &dir, "test")?;
            print_json(&serde_json::json!({ "train": describe(&train), "test": describe(&test) }));
        }
        Command::Pretrain { seed } => {
            let seed = pick_seed(&cfg, seed);
            let prep = prepare(&cfg, seed)?;
            let dir = seed_dir(&cfg.output, seed);
            prep.model
                .save(&dir.join("model"))
                .map_err(|e| Failure::runtime(format!("save model: {e}")))?;
            let path = dir.join("curves.csv");
            let mut buf = Vec::new();
            write_curves(&mut buf, &prep.model.curves).map_err(|e| io_failure(&path, e))?;
            fs::write(&path, buf).map_err(|e| io_failure(&path, e))?;
            let last = prep.model.curves.last();
            print_json(&serde_json::json!({
                "epochs": prep.model.curves.len(),
                "final_loss": last.map(|c| c.total),
                "model": dir.join("model"),
            }));
        }
        Command::Detect { seed } | Command::Split { seed } => {
            let is_split = matches!(cli.command, Command::Split { .. });
            let seed = pick_seed(&cfg, seed);
            let prep = prepare(&cfg, seed)?;
            let sp = experiment::split(&cfg, &prep, true, cfg.novel_train_frac)?;
            let report = sp.lof.as_ref().expect("split with LOF");
            let dir = seed_dir(&cfg.output, seed);
            create_dir(&dir)?;
            let path = dir.join("lof.csv");
            let mut buf = Vec::new();
            report
                .write_csv(&mut buf, &prep.pool, Some(&prep.known))
                .map_err(|e| io_failure(&path, e))?;
            fs::write(&path, buf).map_err(|e| io_failure(&path, e))?;
            if is_split {
                let out = dir.join("split");
                create_dir(&out)?;
                write_dataset(&sp.xk, &out, "xk")?;
                write_dataset(&sp.xn_train, &out, "xn_train")?;
                write_dataset(&sp.xn_test, &out, "xn_test")?;
            }
            print_json(&serde_json::json!({
                "pool": prep.pool.len(),
                "known": sp.xk.len(),
                "novel": report.novel_count(),
                "novel_train": sp.xn_train.len(),
                "novel_test": sp.xn_test.len(),
                "split_f1": split_quality(&prep, report),
            }));
        }
        Command::Loop { seed } => {
            let seed = pick_seed(&cfg, seed);
            let run = run_seed(
                &cfg,
                seed,
                &mut OracleAnnotator,
                &seed_dir(&cfg.output, seed),
            )?;
            print_json(&run.arm.metrics);
        }
        Command::Serve { seed, bind, port } => {
            let seed = pick_seed(&cfg, seed);
            let addr = resolve_addr(bind.as_deref(), port, |k| std::env::var(k).ok())?;
            let run = serve_blocking(cfg, seed, addr)?;
            print_json(&run.arm.metrics);
        }
        Command::Ablate { which } => {
            let ablation: Ablation = which.parse().map_err(Failure::usage)?;
            let report = run_ablation(&cfg, ablation)?;
            write_ablation(&cfg.output, &which, &report)?;
            print!("{}", report.summary_csv());
        }
        Command::Pipeline => {
            if cfg.mode == Mode::Serve {
                let addr = resolve_addr(None, None, |k| std::env::var(k).ok())?;
                for &seed in &cfg.seeds {
                    serve_blocking(cfg.clone(), seed, addr)?;
                }
            } else {
                run_pipeline(&cfg, &mut OracleAnnotator)?;
            }
            let summary = cfg.output.join("summary.csv");
            if summary.exists() {
                print!(
                    "{}",
                    fs::read_to_string(&summary).map_err(|e| io_failure(&summary, e))?
                );
            } else {
                print!("{}", experiment::report(&cfg.output)?.markdown);
            }
        }
        Command::Eval { .. } | Command::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn serve_blocking(
    cfg: ExperimentConfig,
    seed: u64,
    addr: std::net::SocketAddr,
) -> Result<experiment::SeedRun, Failure> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    Ok(rt.block_on(ard_serve::serve(cfg, seed, addr))?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
