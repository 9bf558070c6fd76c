use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedrefine::harness::pipeline::{
    generate_task, load_models, save_fusers, save_models, scenario_privacies, scenario_protocols, train_fusers, train_models,
};
use fedrefine::harness::{
    compare_protocols, load_trained, render_svg, run_scenario, MediumChoice, Metric, Privacy, Protocol, ScenarioConfig,
    METRICS_FILE,
};
use fedrefine::netsim::{read_csv, write_csv};
use fedrefine::{Error, Result};

/// Environment variable overriding the output root.
const OUT_ENV: &str = "FEDREFINE_OUT";

#[derive(Parser)]
#[command(name = "fedrefine", version, about = "Federated KV-cache refinement between toy language models")]
struct Cli {
    /// Scenario file.
    #[arg(long, global = true, default_value = "configs/reference.toml")]
    config: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; artifacts go to `<out>/<scenario name>`. Defaults to
    /// $FEDREFINE_OUT, else `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the partitioned task and write `task.json` and `vocab.json`.
    Generate,
    /// Train and checkpoint models or fusers.
    Train {
        #[arg(value_enum)]
        what: TrainTarget,
    },
    /// Train everything, evaluate every sender count and write the report.
    Run,
    /// Evaluate protocols from saved checkpoints.
    Compare {
        /// Number of senders; defaults to all.
        #[arg(long)]
        senders: Option<usize>,
        #[arg(long, value_enum)]
        medium: Option<MediumArg>,
        #[arg(long, value_enum)]
        privacy: Option<PrivacyArg>,
    },
    /// Render `accuracy.svg` and `latency.svg` from a report.
    Plot {
        /// Report to plot; defaults to the scenario's `metrics.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTarget {
    Models,
    Fusers,
}

#[derive(Clone, Copy, ValueEnum)]
enum MediumArg {
    Cache,
    Token,
    Auto,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrivacyArg {
    Original,
    Rephrased,
}

fn out_dir(cli: &Cli, cfg: &ScenarioConfig) -> PathBuf {
    let root = cli.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    root.join(&cfg.name)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn print_csv(rows: &[fedrefine::netsim::MetricsRow]) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_csv(rows, &mut lock)?;
    lock.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let dir = out_dir(cli, &cfg);
    match &cli.command {
        Command::Generate => {
            let qa = generate_task(&cfg)?;
            #[derive(serde::Serialize)]
            struct TaskFile<'a> {
                spec: &'a fedrefine::harness::TaskSpec,
                values: &'a [usize],
                known: &'a [Vec<usize>],
                corpus_sizes: Vec<usize>,
                eval: &'a [fedrefine::harness::EvalItem],
            }
            let file = TaskFile {
                spec: &qa.spec,
                values: &qa.values,
                known: &qa.known,
                corpus_sizes: qa.corpora.iter().map(Vec::len).collect(),
                eval: &qa.eval,
            };
            write_file(&dir.join("task.json"), &serde_json::to_vec_pretty(&file)?)?;
            write_file(&dir.join("vocab.json"), &serde_json::to_vec_pretty(qa.alphabet.vocab.symbols())?)?;
            println!("{}", dir.display());
        }
        Command::Train { what: TrainTarget::Models } => {
            let qa = generate_task(&cfg)?;
            let (models, reports) = train_models(&cfg, &qa)?;
            save_models(&models, &dir)?;
            for (m, r) in models.iter().zip(&reports) {
                println!("{} final loss {:.6}", m.id(), r.final_loss().unwrap_or(f64::NAN));
            }
        }
        Command::Train { what: TrainTarget::Fusers } => {
            let qa = generate_task(&cfg)?;
            let models = load_models(&cfg, &qa, &dir)?;
            let (registry, reports) = train_fusers(&cfg, &qa, &models)?;
            save_fusers(&registry, &dir)?;
            for (s, r) in &reports {
                println!("{s} -> {} final loss {:.6}", cfg.receiver, r.final_loss().unwrap_or(f64::NAN));
            }
        }
        Command::Run => {
            let run = run_scenario(&cfg, &dir)?;
            print_csv(&run.rows)?;
            eprintln!("artifacts written to {}", dir.display());
        }
        Command::Compare { senders, medium, privacy } => {
            let k = senders.unwrap_or(cfg.senders.len());
            let protocols = match medium {
                None => scenario_protocols(&cfg),
                Some(MediumArg::Cache) => vec![Protocol::Kv],
                Some(MediumArg::Token) => vec![Protocol::Token],
                Some(MediumArg::Auto) => {
                    cfg.medium = MediumChoice::Auto;
                    cfg.media.clear();
                    vec![Protocol::Configured]
                }
            };
            let privacies = match privacy {
                None => scenario_privacies(&cfg),
                Some(PrivacyArg::Original) => vec![Privacy::Original],
                Some(PrivacyArg::Rephrased) => vec![Privacy::Rephrased],
            };
            let trained = load_trained(&cfg, &dir)?;
            print_csv(&compare_protocols(&cfg, &trained, k, &protocols, &privacies)?)?;
        }
        Command::Plot { csv } => {
            let path = csv.clone().unwrap_or_else(|| dir.join(METRICS_FILE));
            let file = fs::File::open(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    Error::MissingArtifact { path: path.clone(), hint: "report not found; run `fedrefine run` first".into() }
                }
                _ => Error::Io(e),
            })?;
            let rows = read_csv(file)?;
            let target = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for (metric, name) in [(Metric::Accuracy, "accuracy.svg"), (Metric::Latency, "latency.svg")] {
                let p = target.join(name);
                write_file(&p, render_svg(&rows, metric)?.as_bytes())?;
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
