use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pvad_cli::commands::{cmd_ablate, cmd_eval, cmd_finetune, cmd_gen, cmd_train};
use pvad_cli::{error_kind, version_text, RunConfig};

#[derive(Parser)]
#[command(name = "pvad", about = "Periodic video anomaly detection", disable_version_flag = true)]
struct Cli {
    /// Print the tool, schema and checkpoint format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; must be new or empty.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn resolve(&self, preset: Option<&str>) -> pvad::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.set_pair(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = preset {
            cfg.preset = p.to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a preset scenario to disk.
    Gen {
        #[command(flatten)]
        common: Common,
        /// oscillator-64, sorter-64 or shift-pair.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score the test split and write scores.csv and report.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Adapter checkpoint applied on top of `--checkpoint`.
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Also write the per-clip phase and memory addressing trace.
        #[arg(long)]
        dump_trace: bool,
    },
    /// Compare full and adapter finetuning of a pretrained checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the adapter folded into a standalone checkpoint.
        #[arg(long)]
        merge: bool,
    },
    /// Memory on/off × sliding window on/off.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
}

fn run(command: Command) -> pvad::Result<()> {
    match command {
        Command::Gen { common, preset } => {
            let cfg = common.resolve(preset.as_deref())?;
            for dir in cmd_gen(&cfg, &common.out)? {
                println!("{}", dir.display());
            }
        }
        Command::Train { common, data } => {
            let cfg = common.resolve(None)?;
            cmd_train(&cfg, &data, &common.out)?;
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            adapter,
            dump_trace,
        } => {
            let cfg = common.resolve(None)?;
            let r = cmd_eval(&cfg, &data, &checkpoint, adapter.as_deref(), &common.out, dump_trace)?;
            println!("auc {:.6}", r.auc);
            for (fam, a) in &r.auc_per_family {
                println!("auc_{fam} {a:.6}");
            }
        }
        Command::Finetune {
            common,
            data,
            checkpoint,
            merge,
        } => {
            let cfg = common.resolve(None)?;
            let rows = cmd_finetune(&cfg, &data, &checkpoint, &common.out, merge)?;
            print!("{}", pvad_cli::experiments::finetune_csv(&rows));
        }
        Command::Ablate { common, data } => {
            let cfg = common.resolve(None)?;
            let rows = cmd_ablate(&cfg, &data, &common.out)?;
            print!("{}", pvad_cli::experiments::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        print!("{}", version_text());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see `pvad --help`");
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = error_kind(&e);
            let line = serde_json::json!({ "error": kind, "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(code as u8)
        }
    }
}
