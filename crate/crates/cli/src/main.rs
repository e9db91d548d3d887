use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use majority_tree_cli::{exit_code, parse_config, run_experiment, ExperimentConfig, Kind, OUT_DIR_ENV};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Commutation,
    Theta,
    Alpha,
    Trace,
    Resample,
    Chains,
    Audit,
    Tailcheck,
    Neverflip,
}

impl From<Command> for Kind {
    fn from(c: Command) -> Kind {
        match c {
            Command::Simulate => Kind::Simulate,
            Command::Commutation => Kind::Commutation,
            Command::Theta => Kind::Theta,
            Command::Alpha => Kind::Alpha,
            Command::Trace => Kind::Trace,
            Command::Resample => Kind::Resample,
            Command::Chains => Kind::Chains,
            Command::Audit => Kind::Audit,
            Command::Tailcheck => Kind::Tailcheck,
            Command::Neverflip => Kind::Neverflip,
        }
    }
}

/// Run a majority-dynamics experiment and write CSV results plus manifest.json.
///
/// Exit status: 0 success, 1 operational error, 2 invariant violation.
#[derive(Debug, Parser)]
#[command(name = "majority-tree", version)]
struct Cli {
    /// Experiment kind. Overrides `kind` from the config file.
    #[arg(value_enum)]
    command: Option<Command>,

    /// Configuration file with key=value lines.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(short, long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,

    /// Override a configuration key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    replicas: Option<usize>,

    #[arg(long)]
    radius: Option<usize>,

    #[arg(long)]
    horizon: Option<f64>,

    #[arg(long)]
    p: Option<f64>,
}

fn build(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut config = match &cli.config {
        Some(path) => {
            let mut text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            if let Some(c) = cli.command {
                // the command line wins over the file
                text = text
                    .lines()
                    .filter(|l| l.split('#').next().and_then(|b| b.split_once('=')).map_or(true, |(k, _)| k.trim() != "kind"))
                    .collect::<Vec<_>>()
                    .join("\n");
                text = format!("kind={}\n{text}", Kind::from(c));
            }
            parse_config(&text).map_err(|e| format!("{}:\n{e}", path.display()))?
        }
        None => {
            let kind = cli.command.ok_or("either a command or --config is required")?;
            ExperimentConfig::new(kind.into(), 0)
        }
    };
    let flags = [
        ("seed", cli.seed.map(|x| x.to_string())),
        ("replicas", cli.replicas.map(|x| x.to_string())),
        ("radius", cli.radius.map(|x| x.to_string())),
        ("horizon", cli.horizon.map(|x| x.to_string())),
        ("p", cli.p.map(|x| x.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        config.set(k.trim(), v.trim())?;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = run_experiment(&config, &cli.out);
    match &result {
        Ok(o) => {
            for (k, v) in &o.summary {
                println!("{k}={v}");
            }
            for f in &o.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
