use std::path::PathBuf;
use std::process::ExitCode;

use cboc::benchmarks::theorem1_bound;
use cboc::config::ExperimentConfig;
use cboc::experiment::{compare_methods, run_experiment, Method};

const USAGE: &str = "\
cboc — collaborative Bayesian optimization via consensus

USAGE:
    cboc run --config <path> [--seed N] [--runs N] [--out DIR]
    cboc compare --config <path> --methods cboc-l,cboc-u,individual [--seed N] [--runs N] [--out DIR]
    cboc bound --T <iters> --D <dim> --v <noise-sd> --kappa <stopping-constant>

The config file is a flat `key = value` list; see README.md for the keys.
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run_cli(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

enum CliError {
    Usage(String),
    Run(cboc::Error),
}

impl From<cboc::Error> for CliError {
    fn from(e: cboc::Error) -> Self {
        CliError::Run(e)
    }
}

fn run_cli(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "run" => {
            let cfg = load_config(&flags)?;
            let outcome = run_experiment(&cfg)?;
            println!(
                "{}: gap {:.4} (+/- {:.4}) over {} runs -> {}",
                outcome.method.name(),
                outcome.gap_mean,
                outcome.gap_sd,
                cfg.runs,
                cfg.out_dir.display()
            );
            Ok(())
        }
        "compare" => {
            let cfg = load_config(&flags)?;
            let methods_spec = flags
                .get("methods")
                .ok_or_else(|| CliError::Usage("compare needs --methods".into()))?;
            let methods = methods_spec
                .split(',')
                .map(|m| Method::from_name(m.trim()))
                .collect::<cboc::Result<Vec<_>>>()?;
            let entries = compare_methods(&cfg, &methods)?;
            println!("method,gap_mean,gap_sd");
            for e in &entries {
                println!("{},{},{}", e.method, e.gap_mean, e.gap_sd);
            }
            Ok(())
        }
        "bound" => {
            let t = parse_flag::<usize>(&flags, "T")?;
            let d = parse_flag::<usize>(&flags, "D")?;
            let v = parse_flag::<f64>(&flags, "v")?;
            let kappa = parse_flag::<f64>(&flags, "kappa")?;
            let bound = theorem1_bound(t, d, v, kappa)?;
            println!("bound = {bound}");
            println!("note: omits the unspecified-constant O(1/(log(2+t))^(0.5+eps)) tail term");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn parse_flags(args: &[String]) -> Result<std::collections::BTreeMap<String, String>, CliError> {
    let mut flags = std::collections::BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let Some(name) = args[i].strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument `{}`", args[i])));
        };
        let Some(value) = args.get(i + 1) else {
            return Err(CliError::Usage(format!("flag --{name} needs a value")));
        };
        if flags.insert(name.to_string(), value.clone()).is_some() {
            return Err(CliError::Usage(format!("flag --{name} given twice")));
        }
        i += 2;
    }
    Ok(flags)
}

fn parse_flag<T: std::str::FromStr>(
    flags: &std::collections::BTreeMap<String, String>,
    name: &str,
) -> Result<T, CliError> {
    let raw = flags
        .get(name)
        .ok_or_else(|| CliError::Usage(format!("missing --{name}")))?;
    raw.parse()
        .map_err(|_| CliError::Usage(format!("invalid value for --{name}: `{raw}`")))
}

fn load_config(
    flags: &std::collections::BTreeMap<String, String>,
) -> Result<ExperimentConfig, CliError> {
    let path = flags
        .get("config")
        .ok_or_else(|| CliError::Usage("missing --config".into()))?;
    let mut cfg = ExperimentConfig::parse_file(&PathBuf::from(path))?;
    if let Some(seed) = flags.get("seed") {
        cfg.seed = seed
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid --seed `{seed}`")))?;
    }
    if let Some(runs) = flags.get("runs") {
        cfg.runs = runs
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid --runs `{runs}`")))?;
        if cfg.runs == 0 {
            return Err(CliError::Usage("--runs must be positive".into()));
        }
    }
    if let Some(out) = flags.get("out") {
        cfg.out_dir = PathBuf::from(out);
    }
    Ok(cfg)
}
