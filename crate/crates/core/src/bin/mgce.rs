use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgce::baselines::LossKind;
use mgce::harness::{self, RunConfig};
use mgce::metrics::SceConfig;
use mgce::{loss, Error, Result};

#[derive(Parser)]
#[command(name = "mgce", version, about = "Minimax generalized cross-entropy: training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write run.jsonl, best.ckpt and summary.json
    Train(RunArgs),
    /// Train over a grid of beta values and select by validation accuracy
    SweepBeta {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated beta values
        #[arg(long)]
        grid: Option<String>,
    },
    /// Score a checkpoint on a CSV file
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV file to score
        #[arg(long)]
        data: PathBuf,
        /// Preprocessing saved by `train` (default: next to the checkpoint)
        #[arg(long)]
        preprocess: Option<PathBuf>,
        #[arg(long, default_value = "mgce")]
        loss: String,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long, default_value_t = loss::DEFAULT_BISECT_TOL)]
        bisect_tol: f64,
    },
    /// Compare gradients with central differences
    Gradcheck {
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve the potential for one margin vector
    Phi {
        #[arg(long)]
        beta: f64,
        /// Comma-separated margins, e.g. 0.2,-0.2
        #[arg(long, allow_hyphen_values = true)]
        margins: String,
        #[arg(long, default_value_t = loss::DEFAULT_BISECT_TOL)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Time the bisection solver
    BenchBisection {
        #[arg(long, default_value = "1,1.4,2,5,1e6")]
        betas: String,
        #[arg(long, default_value = "2,10,100,1000")]
        ks: String,
        #[arg(long, default_value_t = 1000)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = loss::DEFAULT_BISECT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a Gaussian-mixture dataset as train.csv and test.csv
    Synth {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value file; flags given here take precedence over it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    lambda0: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    val_fraction: Option<String>,
    #[arg(long)]
    noise_eta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    /// Dataset directory or name under $MGCE_DATA_DIR
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    bisect_tol: Option<String>,
    #[arg(long)]
    sce_bins: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let pairs = [
            ("loss", &self.loss),
            ("beta", &self.beta),
            ("lambda0", &self.lambda0),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("clip_norm", &self.clip_norm),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("val_fraction", &self.val_fraction),
            ("noise_eta", &self.noise_eta),
            ("seed", &self.seed),
            ("model", &self.model),
            ("hidden", &self.hidden),
            ("data", &self.data),
            ("label_column", &self.label_column),
            ("out", &self.out),
            ("bisect_tol", &self.bisect_tol),
            ("sce_bins", &self.sce_bins),
        ];
        let mut overrides: Vec<(String, String)> = pairs
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.deterministic {
            overrides.push(("deterministic".into(), "true".into()));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> Result<bool> {
    let mut out = io::stdout().lock();
    let mut log = io::stderr().lock();
    let print = |out: &mut dyn Write, text: &str| {
        let _ = writeln!(out, "{text}");
    };
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let summary = harness::cmd_train(&cfg, &mut log)?;
            print(&mut out, &json(&summary));
        }
        Command::SweepBeta { run, grid } => {
            let cfg = run.resolve()?;
            let grid = match grid {
                Some(g) => harness::parse_list(&g)?,
                None => harness::DEFAULT_BETA_GRID.to_vec(),
            };
            let summary = harness::cmd_sweep_beta(&cfg, &grid, &mut log)?;
            print(&mut out, harness::format_sweep(&summary).trim_end());
        }
        Command::Eval {
            checkpoint,
            data,
            preprocess,
            loss,
            bins,
            bisect_tol,
        } => {
            let kind: LossKind = loss.parse()?;
            let report = harness::cmd_eval(&checkpoint, &data, preprocess.as_deref(), kind, SceConfig { bins }, bisect_tol)?;
            print(&mut out, &json(&report));
        }
        Command::Gradcheck { beta, k, d, trials, seed } => {
            let report = harness::cmd_gradcheck(beta, k, d, trials, seed)?;
            print(&mut out, &json(&report));
            print(&mut out, if report.passed { "PASS" } else { "FAIL" });
            return Ok(report.passed);
        }
        Command::Phi { beta, margins, tol, json: as_json } => {
            let margins = harness::parse_list(&margins)?;
            let report = harness::cmd_phi(beta, &margins, tol)?;
            let text = if as_json { json(&report) } else { harness::format_phi(&report) };
            print(&mut out, text.trim_end());
        }
        Command::BenchBisection {
            betas,
            ks,
            batch,
            repeats,
            tol,
            seed,
        } => {
            let betas = harness::parse_list(&betas)?;
            let ks = harness::parse_list(&ks)?
                .into_iter()
                .map(|k| {
                    if k.fract() == 0.0 && k >= 2.0 {
                        Ok(k as usize)
                    } else {
                        Err(Error::Usage(format!("class count {k} is not an integer >= 2")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = harness::cmd_bench_bisection(&betas, &ks, batch, repeats, tol, seed)?;
            print(&mut out, harness::format_bench(&rows).trim_end());
        }
        Command::Synth {
            k,
            d,
            n,
            n_test,
            separation,
            seed,
            out: dir,
        } => {
            harness::cmd_synth(k, d, n, n_test, separation, seed, &dir)?;
            print(&mut out, &format!("wrote {}", dir.display()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
