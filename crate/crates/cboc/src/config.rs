//! Experiment configuration: a flat `key = value` text format with
//! defaults mirroring the benchmark protocol (T = 20 D iterations and
//! 5 D initial points per client).

use std::path::{Path, PathBuf};

use crate::acquisition::UtilityKind;
use crate::benchmarks::{registry_lookup, BaseFunction, HeteroParams};
use crate::consensus::{Adjacency, SchemeKind};
use crate::error::{Error, Result};

/// How per-client heterogeneity parameters are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum HeteroMode {
    /// Every client optimizes the base function itself.
    Homogeneous,
    /// (a1, a2, a3) resampled per run and client from the function's
    /// distribution.
    Sampled,
    /// Fixed triples, one per client.
    Explicit(Vec<HeteroParams>),
}

impl HeteroMode {
    fn name(&self) -> &'static str {
        match self {
            HeteroMode::Homogeneous => "homogeneous",
            HeteroMode::Sampled => "sampled",
            HeteroMode::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub function: BaseFunction,
    pub dim: usize,
    pub clients: usize,
    pub iterations: usize,
    pub initial_points: usize,
    pub scheme: SchemeKind,
    pub utility: UtilityKind,
    pub hetero: HeteroMode,
    pub noise_sd: f64,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub adjacency: Option<PathBuf>,
    pub kappa_stop: Option<f64>,
}

const KNOWN_KEYS: &[&str] = &[
    "function",
    "d",
    "k",
    "t",
    "n0",
    "scheme",
    "utility",
    "hetero",
    "hetero_triples",
    "noise_sd",
    "runs",
    "seed",
    "out",
    "adjacency",
    "kappa_stop",
];

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    "config",
                    format!("line {}: expected `key = value`, got `{line}`", line_no + 1),
                ));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown configuration key"));
            }
            if seen.iter().any(|(k, _)| *k == key) {
                return Err(Error::config(key, "duplicate configuration key"));
            }
            seen.push((key, value));
        }
        let get = |key: &str| seen.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);

        let Some(function_name) = get("function") else {
            return Err(Error::config("function", "missing function name"));
        };
        let d = get("d").map(|v| parse_count("d", v)).transpose()?;
        let (function, dim) = registry_lookup(function_name, d)?;

        let clients = match get("k") {
            Some(v) => parse_count("k", v)?,
            None => 5,
        };
        let iterations = match get("t") {
            Some(v) => parse_count("t", v)?,
            None => 20 * dim,
        };
        let initial_points = match get("n0") {
            Some(v) => parse_count("n0", v)?,
            None => 5 * dim,
        };
        let scheme = match get("scheme") {
            Some(v) => SchemeKind::from_name(v)?,
            None => SchemeKind::LeaderDriven,
        };
        let utility = match get("utility") {
            Some(v) => UtilityKind::from_name(v)?,
            None => UtilityKind::Ei,
        };
        let hetero = match get("hetero").unwrap_or("homogeneous") {
            "homogeneous" => HeteroMode::Homogeneous,
            "sampled" => HeteroMode::Sampled,
            "explicit" => {
                let Some(spec) = get("hetero_triples") else {
                    return Err(Error::config(
                        "hetero_triples",
                        "explicit heterogeneity needs `hetero_triples = a1,a2,a3; ...`",
                    ));
                };
                HeteroMode::Explicit(parse_triples(spec)?)
            }
            other => {
                return Err(Error::config(
                    "hetero",
                    format!("unknown mode `{other}` (expected homogeneous, sampled or explicit)"),
                ))
            }
        };
        if get("hetero_triples").is_some() && !matches!(hetero, HeteroMode::Explicit(_)) {
            return Err(Error::config(
                "hetero_triples",
                "only valid with `hetero = explicit`",
            ));
        }
        if let HeteroMode::Explicit(triples) = &hetero {
            if triples.len() != clients {
                return Err(Error::config(
                    "hetero_triples",
                    format!("expected {clients} triples, got {}", triples.len()),
                ));
            }
        }

        let noise_sd = match get("noise_sd") {
            Some(v) => {
                let n = parse_float("noise_sd", v)?;
                if n < 0.0 {
                    return Err(Error::config("noise_sd", "must be non-negative"));
                }
                n
            }
            None => 0.0,
        };
        let runs = match get("runs") {
            Some(v) => parse_count("runs", v)?,
            None => 30,
        };
        let seed = match get("seed") {
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::config("seed", format!("not a valid seed: `{v}`")))?,
            None => 0,
        };
        let out_dir = PathBuf::from(get("out").unwrap_or("out"));
        let adjacency = get("adjacency").map(PathBuf::from);
        let kappa_stop = match get("kappa_stop") {
            Some(v) => {
                let kappa = parse_float("kappa_stop", v)?;
                if kappa <= 0.0 {
                    return Err(Error::config("kappa_stop", "must be positive"));
                }
                Some(kappa)
            }
            None => None,
        };

        Ok(ExperimentConfig {
            function,
            dim,
            clients,
            iterations,
            initial_points,
            scheme,
            utility,
            hetero,
            noise_sd,
            runs,
            seed,
            out_dir,
            adjacency,
            kappa_stop,
        })
    }

    /// Canonical emission; parsing it back reproduces the config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push("function", self.function.name().to_string());
        push("d", self.dim.to_string());
        push("k", self.clients.to_string());
        push("t", self.iterations.to_string());
        push("n0", self.initial_points.to_string());
        push("scheme", self.scheme.name().to_string());
        push("utility", self.utility.name().to_string());
        push("hetero", self.hetero.name().to_string());
        if let HeteroMode::Explicit(triples) = &self.hetero {
            let spec = triples
                .iter()
                .map(|h| format!("{},{},{}", h.a1, h.a2, h.a3))
                .collect::<Vec<_>>()
                .join("; ");
            push("hetero_triples", spec);
        }
        push("noise_sd", self.noise_sd.to_string());
        push("runs", self.runs.to_string());
        push("seed", self.seed.to_string());
        push("out", self.out_dir.display().to_string());
        if let Some(adj) = &self.adjacency {
            push("adjacency", adj.display().to_string());
        }
        if let Some(kappa) = self.kappa_stop {
            push("kappa_stop", kappa.to_string());
        }
        out
    }

    /// Loads and validates the adjacency file against the client count.
    pub fn load_adjacency(&self) -> Result<Option<Adjacency>> {
        let Some(path) = &self.adjacency else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("adjacency", format!("cannot read {}: {e}", path.display()))
        })?;
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| match cell.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::config(
                        "adjacency",
                        format!("expected 0 or 1, got `{other}`"),
                    )),
                })
                .collect::<Result<Vec<bool>>>()?;
            rows.push(row);
        }
        if rows.len() != self.clients {
            return Err(Error::config(
                "adjacency",
                format!("expected {} rows, got {}", self.clients, rows.len()),
            ));
        }
        Ok(Some(Adjacency::new(rows)?))
    }
}

fn parse_count(field: &str, value: &str) -> Result<usize> {
    let n: usize = value
        .parse()
        .map_err(|_| Error::config(field, format!("not a valid count: `{value}`")))?;
    if n == 0 {
        return Err(Error::config(field, "must be positive"));
    }
    Ok(n)
}

fn parse_float(field: &str, value: &str) -> Result<f64> {
    let x: f64 = value
        .parse()
        .map_err(|_| Error::config(field, format!("not a valid number: `{value}`")))?;
    if !x.is_finite() {
        return Err(Error::config(field, "must be finite"));
    }
    Ok(x)
}

fn parse_triples(spec: &str) -> Result<Vec<HeteroParams>> {
    spec.split(';')
        .map(|triple| {
            let parts: Vec<&str> = triple.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::config(
                    "hetero_triples",
                    format!("expected `a1,a2,a3`, got `{}`", triple.trim()),
                ));
            }
            let a1 = parse_float("hetero_triples", parts[0])?;
            let a2 = parse_float("hetero_triples", parts[1])?;
            let a3 = parse_float("hetero_triples", parts[2])?;
            if a1 <= 0.0 {
                return Err(Error::config("hetero_triples", "a1 must be positive"));
            }
            Ok(HeteroParams { a1, a2, a3 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_protocol_defaults() {
        let cfg = ExperimentConfig::parse_str("function = levy\nd = 2\n").unwrap();
        assert_eq!(cfg.function, BaseFunction::Levy);
        assert_eq!(cfg.dim, 2);
        assert_eq!(cfg.iterations, 40);
        assert_eq!(cfg.initial_points, 10);
        assert_eq!(cfg.clients, 5);
        assert_eq!(cfg.runs, 30);
        assert_eq!(cfg.scheme, SchemeKind::LeaderDriven);
        assert_eq!(cfg.utility, UtilityKind::Ei);
        assert_eq!(cfg.hetero, HeteroMode::Homogeneous);
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let err = ExperimentConfig::parse_str("d = 2\n").unwrap_err();
        assert!(err.to_string().contains("function"));

        let err = ExperimentConfig::parse_str("function = levy\nd = 2\nscheme = bogus\n")
            .unwrap_err();
        assert!(err.to_string().contains("scheme"), "{err}");

        let err = ExperimentConfig::parse_str("function = levy\nd = 2\nruns = 0\n").unwrap_err();
        assert!(err.to_string().contains("runs"));

        let err =
            ExperimentConfig::parse_str("function = levy\nd = 2\nwhatever = 3\n").unwrap_err();
        assert!(err.to_string().contains("whatever"));

        let err = ExperimentConfig::parse_str("function = shekel10\nd = 3\n").unwrap_err();
        assert!(err.to_string().contains("d"));
    }

    #[test]
    fn canonical_round_trip() {
        let text = "function = shekel10\nk = 7\nt = 13\nscheme = uniform\nutility = kg\n\
                    hetero = explicit\nhetero_triples = 1,0,0; 0.5,1,-1; 2,0,0; 1,1,1; 1,2,3; 0.7,0,0; 1.5,-2,0.25\n\
                    noise_sd = 0.05\nruns = 3\nseed = 99\nout = results\nkappa_stop = 0.001\n";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        let emitted = cfg.to_config_string();
        let reparsed = ExperimentConfig::parse_str(&emitted).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn explicit_triples_must_match_client_count() {
        let err = ExperimentConfig::parse_str(
            "function = levy\nd = 2\nk = 3\nhetero = explicit\nhetero_triples = 1,0,0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("hetero_triples"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::parse_str(
            "# experiment\n\nfunction = branin\n\n# five clients\nk = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.function, BaseFunction::Branin);
        assert_eq!(cfg.dim, 2);
    }
}
