use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kadapt::adapters::AdapterKind;
use kadapt::eval::{Task, Variant};
use kadapt::pipeline::{run_stage, PipelineConfig, Profile, Stage};
use log::error;

#[derive(Parser, Debug)]
#[command(name = "kadapt", version, about = "Knowledge adapters for a multilingual encoder")]
struct Cli {
    /// TOML file layered over the profile defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// run seed; every stage derives its own stream from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,

    /// output directory holding every stage's artifacts
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    /// override one config value, e.g. `--set adapters.steps=100`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// print the resolved configuration and exit
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum KindArg {
    Ep,
    Tp,
    Es,
    Ts,
    Large,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TaskArg {
    Completion,
    Alignment,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the seeded synthetic knowledge graph and corpora
    GenSynthetic,
    /// Masked-language pretraining of the backbone
    Pretrain,
    /// Train one knowledge adapter on the frozen backbone
    TrainAdapter {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Train the fusion layers on task data with backbone and adapters frozen
    TrainFusion {
        #[arg(long, value_enum)]
        task: TaskArg,
    },
    /// Finetune every parameter of a variant on task data
    Finetune {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// base, EP, TP, ES, TS, LARGE or FUSION
        #[arg(long, default_value = "FUSION")]
        variant: String,
    },
    /// Evaluate a finetuned variant by cosine retrieval
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, default_value = "FUSION")]
        variant: String,
    },
    /// Train all adapters and compare every variant on both tasks
    Ablate,
    /// Gather evaluation and ablation reports into one table
    Report,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

impl From<KindArg> for AdapterKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Ep => AdapterKind::EP,
            KindArg::Tp => AdapterKind::TP,
            KindArg::Es => AdapterKind::ES,
            KindArg::Ts => AdapterKind::TS,
            KindArg::Large => AdapterKind::LARGE,
        }
    }
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Completion => Task::Completion,
            TaskArg::Alignment => Task::Alignment,
        }
    }
}

fn stage(command: &Command) -> kadapt::Result<Stage> {
    Ok(match command {
        Command::GenSynthetic => Stage::GenSynthetic,
        Command::Pretrain => Stage::Pretrain,
        Command::TrainAdapter { kind } => Stage::TrainAdapter((*kind).into()),
        Command::TrainFusion { task } => Stage::TrainFusion((*task).into()),
        Command::Finetune { task, variant } => Stage::Finetune((*task).into(), variant.parse::<Variant>()?),
        Command::Eval { task, variant } => Stage::Eval((*task).into(), variant.parse::<Variant>()?),
        Command::Ablate => Stage::Ablate,
        Command::Report => Stage::Report,
    })
}

fn run(cli: &Cli) -> kadapt::Result<()> {
    let cfg = PipelineConfig::resolve(cli.profile.map(Into::into), cli.config.as_deref(), &cli.sets, cli.seed)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let outcome = run_stage(&cfg, &cli.out, stage(&cli.command)?)?;
    println!("{}: {}", outcome.stage, outcome.dir.display());
    if let Some(m) = &outcome.manifest {
        println!("checkpoint {}", m.content_hash);
    }
    for r in &outcome.reports {
        let (h1, _, mrr) = r.mean();
        println!("{} {}: hit@1 {:.1} mrr {:.1}", r.variant, r.task, h1 * 100.0, mrr * 100.0);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
