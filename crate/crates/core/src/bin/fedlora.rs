use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedlora::harness::{
    compare_methods, emit_noise_trace_plotdata, parse_config_with_overrides, run_experiment, sweep, ExperimentConfig,
    SCHEMA_VERSION,
};
use fedlora::Error;

#[derive(Parser)]
#[command(name = "fedlora", about = "Federated LoRA simulator", disable_version_flag = true)]
struct Cli {
    /// Print the build and config schema versions.
    #[arg(short = 'V', long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over every configured seed.
    Run(ConfigArgs),
    /// Run every listed method under every listed budget and tabulate.
    Compare(ConfigArgs),
    /// Cartesian product of methods, budgets and betas.
    Sweep(ConfigArgs),
    /// Turn a noise_trace.csv into per-series JSON files with fitted slopes.
    TracePlot {
        trace: PathBuf,
        /// Defaults to the trace file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags take precedence over the file, which takes precedence over defaults.
#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct ConfigArgs {
    /// TOML config file; omit to start from defaults.
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    pattern: Option<String>,
    /// Comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// A positive number or `auto`.
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    no_privacy: bool,
    /// Any config key, e.g. `--set model.hidden=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(m) = &self.method {
            put("method", quote(m));
        }
        if !self.methods.is_empty() {
            put("methods", list(self.methods.iter().map(|m| quote(m))));
        }
        if let Some(p) = &self.pattern {
            put("pattern", quote(p));
        }
        if !self.seeds.is_empty() {
            put("seeds", list(self.seeds.iter().map(u64::to_string)));
        }
        if let Some(d) = &self.output_dir {
            put("output_dir", quote(&d.to_string_lossy()));
        }
        let numeric = [
            ("model.rank", self.rank.map(|v| v.to_string())),
            ("model.alpha", self.alpha.map(float)),
            ("data.clients", self.clients.map(|v| v.to_string())),
            ("data.beta", self.beta.map(float)),
            ("train.rounds", self.rounds.map(|v| v.to_string())),
            ("train.local_epochs", self.local_epochs.map(|v| v.to_string())),
            ("train.batch_size", self.batch_size.map(|v| v.to_string())),
            ("train.lr", self.lr.map(float)),
            ("privacy.epsilon", self.epsilon.map(float)),
            ("privacy.delta", self.delta.map(float)),
        ];
        for (k, v) in numeric {
            if let Some(v) = v {
                put(k, v);
            }
        }
        if let Some(c) = &self.clip {
            put("privacy.clip", if c == "auto" { quote(c) } else { c.clone() });
        }
        if self.no_privacy {
            put("privacy.enabled", "false".into());
        }
        for s in &self.set {
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{s}`")));
            };
            put(k.trim(), v.trim().to_string());
        }
        Ok(o)
    }

    fn load(&self) -> Result<ExperimentConfig, Error> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
            None => String::new(),
        };
        parse_config_with_overrides(&text, &self.overrides()?)
    }
}

fn quote(s: &str) -> String {
    format!("{s:?}")
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn list(items: impl Iterator<Item = String>) -> String {
    format!("[{}]", items.collect::<Vec<_>>().join(", "))
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "argument" => 4,
        "data" => 5,
        "privacy" => 6,
        "numeric" => 7,
        "trace" => 8,
        "io" => 9,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let Some(command) = cli.command else {
        if cli.version {
            println!("fedlora {} (config schema {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"));
            return Ok(());
        }
        return Err(Error::InvalidArgument("no command given; see --help".into()));
    };
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let out = run_experiment(&cfg)?;
            let s = &out.summary;
            println!(
                "{} {}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4} over {} seed(s)",
                s.method,
                s.budget,
                s.accuracy.mean,
                s.accuracy.std,
                s.macro_f1.mean,
                s.macro_f1.std,
                s.seeds.len()
            );
            println!("outputs in {}", cfg.output_dir.display());
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            print!("{}", compare_methods(&cfg)?.to_text());
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            print!("{}", sweep(&cfg)?.to_text());
        }
        Command::TracePlot { trace, out } => {
            let out = out.unwrap_or_else(|| trace.parent().map(PathBuf::from).unwrap_or_default());
            for (path, s) in emit_noise_trace_plotdata(&trace, &out)? {
                let slope = s.slope.map_or("undefined".to_string(), |v| format!("{v:.4e}"));
                println!("{} slope={slope}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
