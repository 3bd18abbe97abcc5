use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ofoh::config::RunConfig;
use ofoh::{pipeline, Error};

#[derive(Parser)]
#[command(name = "ofoh", version, about = "Occlusion-robust person re-identification pipeline")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Verb {
    /// Render the synthetic corpus into the data directory.
    GenData,
    /// Train the context CNN (also the verifier for train-dem2).
    TrainDem1,
    /// Train the part-token transformer; needs a DEM1 checkpoint.
    TrainDem2,
    /// Train the stacking meta-learner on frozen members.
    TrainStack,
    /// Retrieval metrics for DEM1, DEM2, DEMV and DEMS.
    Eval,
    /// Seed-matched ablation tables.
    Ablate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "on",
            Switch::Off => "off",
        }
    }
}

#[derive(Args)]
struct Flags {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    profile: Option<String>,
    #[arg(long, global = true, value_parser = ["softmax", "sparsemax"])]
    attention: Option<String>,
    #[arg(long, global = true)]
    mae: Option<Switch>,
    #[arg(long, global = true)]
    verifier: Option<Switch>,
    #[arg(long, global = true)]
    lambda_div: Option<f64>,
    /// L2-normalize descriptors before ranking.
    #[arg(long, global = true)]
    cosine: bool,
}

impl Flags {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(p) = &self.profile {
            put("profile", p.clone());
        }
        if let Some(s) = self.seed {
            put("seed", s.to_string());
        }
        if let Some(d) = &self.out {
            put("out", d.display().to_string());
        }
        if let Some(a) = &self.attention {
            put("attention", a.clone());
        }
        if let Some(m) = self.mae {
            put("mae", m.as_str().into());
        }
        if let Some(v) = self.verifier {
            put("verifier", v.as_str().into());
        }
        if let Some(l) = self.lambda_div {
            put("lambda_div", l.to_string());
        }
        if self.cosine {
            put("cosine", "on".into());
        }
        o
    }

    fn resolve(&self) -> ofoh::Result<RunConfig> {
        let o = self.overrides();
        match &self.config {
            Some(path) => RunConfig::parse_file(path, &o),
            None => RunConfig::parse_with("", &o),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::MissingPrerequisite(_) => 3,
        Error::Numerical(_) => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> ofoh::Result<()> {
    let cfg = cli.flags.resolve()?;
    match cli.verb {
        Verb::GenData => {
            let recs = pipeline::gen_data(&cfg)?;
            println!("wrote {} records to {}", recs.len(), cfg.data_dir().display());
        }
        Verb::TrainDem1 => {
            let logs = pipeline::train_dem1(&cfg)?;
            if let Some(l) = logs.last() {
                println!("dem1: {} epochs, final loss {:.4}", logs.len(), l.total);
            }
        }
        Verb::TrainDem2 => {
            let logs = pipeline::train_dem2(&cfg)?;
            if let Some(l) = logs.last() {
                println!("dem2: {} epochs, final loss {:.4}", logs.len(), l.total);
            }
        }
        Verb::TrainStack => {
            let curve = pipeline::train_stack(&cfg)?;
            if let Some(l) = curve.last() {
                println!("stack: {} epochs, final loss {:.4}", curve.len(), l);
            }
        }
        Verb::Eval => print!("{}", pipeline::eval(&cfg)?.table()),
        Verb::Ablate => print!("{}", pipeline::ablate(&cfg)?.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ofoh: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
