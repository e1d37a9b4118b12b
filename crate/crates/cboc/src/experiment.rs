//! Experiment orchestration: replicated runs with seed discipline, gap
//! aggregation, and CSV/JSON result emission.
//!
//! Seed discipline: every random stream is derived from
//! (master seed, run, client, stage), so adding methods or reordering
//! execution never perturbs the problems a given (run, client) sees. All
//! methods in a comparison share per-run heterogeneity draws and initial
//! designs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::AcquisitionConfig;
use crate::benchmarks::{average_gap, heterogenize, sample_hetero, BlackBoxProblem};
use crate::clients::{run_cboc_with, LoopOptions, RunHistory, Topology};
use crate::config::{ExperimentConfig, HeteroMode};
use crate::consensus::{ConsensusScheme, SchemeKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stage, stream};
use crate::stats;

/// A method is a consensus scheme under a CLI-facing name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method(pub SchemeKind);

impl Method {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cboc-l" => Ok(Method(SchemeKind::LeaderDriven)),
            "cboc-u" => Ok(Method(SchemeKind::UniformTransitional)),
            "individual" => Ok(Method(SchemeKind::Identity)),
            other => Err(Error::config(
                "methods",
                format!("unknown method `{other}` (expected cboc-l, cboc-u or individual)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.0 {
            SchemeKind::LeaderDriven => "cboc-l",
            SchemeKind::UniformTransitional => "cboc-u",
            SchemeKind::Identity => "individual",
        }
    }
}

/// One rows.csv line: a single client iteration within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub run: usize,
    pub client: usize,
    pub iteration: usize,
    pub design: Vec<f64>,
    pub observed: f64,
    pub best: f64,
    pub gap_so_far: f64,
    pub regret: f64,
    pub cum_regret: f64,
    /// 1-based leader id, or -1 when the round had no leader.
    pub leader: i64,
    pub matrix_diag_mean: f64,
}

/// Everything one method produced across the replicate runs.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub rows: Vec<ResultRow>,
    /// (run, iteration, row-major matrix entries); one per round.
    pub matrix_rows: Vec<(usize, usize, Vec<f64>)>,
    /// Final gap per run and client.
    pub per_run_gaps: Vec<Vec<f64>>,
    /// Best initial response per run and client (seed-discipline audit).
    pub per_run_y0: Vec<Vec<f64>>,
    pub gap_mean: f64,
    pub gap_sd: f64,
    /// Mean gap across runs and clients at each iteration.
    pub gap_curve: Vec<f64>,
}

/// Per-run problems under the configured heterogeneity mode. Draws depend
/// only on (seed, run, client), never on the method.
pub fn build_problems(cfg: &ExperimentConfig, run: usize) -> Result<Vec<BlackBoxProblem>> {
    let base = BlackBoxProblem::new(cfg.function, cfg.dim)?.with_noise(cfg.noise_sd);
    (0..cfg.clients)
        .map(|client| {
            let params = match &cfg.hetero {
                HeteroMode::Homogeneous => return Ok(base.clone()),
                HeteroMode::Explicit(triples) => triples[client],
                HeteroMode::Sampled => {
                    let mut rng = stream(
                        cfg.seed,
                        &[stage::HETERO, run as u64, client as u64 + 1],
                    );
                    sample_hetero(&cfg.function.hetero_distribution(), &mut rng)
                }
            };
            heterogenize(&base, params.a1, params.a2, params.a3)
        })
        .collect()
}

/// Seed for one replicate run; shared by every method.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[stage::RUN, run as u64])
}

fn scheme_for(cfg: &ExperimentConfig, kind: SchemeKind) -> Result<ConsensusScheme> {
    let mut scheme = ConsensusScheme::new(kind, cfg.iterations)?;
    if let Some(adjacency) = cfg.load_adjacency()? {
        scheme = scheme.with_adjacency(adjacency);
    }
    Ok(scheme)
}

/// Runs all replicates of one method and aggregates rows and gaps.
pub fn execute_method(cfg: &ExperimentConfig, method: Method) -> Result<MethodOutcome> {
    let scheme = scheme_for(cfg, method.0)?;
    let acq = AcquisitionConfig::default_for_dim(cfg.utility, cfg.dim);
    let opts = LoopOptions {
        topology: Topology::Centralized,
        kappa_stop: cfg.kappa_stop,
    };

    let histories: Vec<RunHistory> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| -> Result<RunHistory> {
            let problems = build_problems(cfg, run)?;
            run_cboc_with(
                &problems,
                &scheme,
                &acq,
                cfg.initial_points,
                cfg.iterations,
                run_seed(cfg.seed, run),
                &opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut matrix_rows = Vec::new();
    let mut per_run_gaps = Vec::new();
    let mut per_run_y0 = Vec::new();
    for (run_idx, history) in histories.iter().enumerate() {
        let run = run_idx + 1;
        for (t, w) in history.matrices.iter().enumerate() {
            matrix_rows.push((run, t + 1, w.entries().iter().copied().collect::<Vec<_>>()));
        }
        for client in &history.clients {
            for (t, rec) in client.records.iter().enumerate() {
                rows.push(ResultRow {
                    run,
                    client: client.id,
                    iteration: t + 1,
                    design: rec.consensus_point.clone(),
                    observed: rec.observed,
                    best: rec.incumbent,
                    gap_so_far: rec.gap_so_far,
                    regret: rec.regret,
                    cum_regret: rec.cum_regret,
                    leader: history.leaders[t].map_or(-1, |l| l as i64),
                    matrix_diag_mean: history.matrices[t].diag_mean(),
                });
            }
        }
        per_run_gaps.push(history.client_gaps());
        per_run_y0.push(history.clients.iter().map(|c| c.y0_best).collect());
    }

    let (gap_mean, gap_sd) = average_gap(&per_run_gaps);
    let horizon = histories
        .iter()
        .flat_map(|h| h.clients.iter().map(|c| c.records.len()))
        .max()
        .unwrap_or(0);
    let mut gap_curve = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let at_t: Vec<f64> = histories
            .iter()
            .flat_map(|h| h.clients.iter().filter_map(|c| c.records.get(t)))
            .map(|r| r.gap_so_far)
            .collect();
        gap_curve.push(stats::mean(&at_t));
    }

    Ok(MethodOutcome {
        method,
        rows,
        matrix_rows,
        per_run_gaps,
        per_run_y0,
        gap_mean,
        gap_sd,
        gap_curve,
    })
}

#[derive(Debug, Serialize)]
struct MethodStats {
    gap_mean: f64,
    gap_sd: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    config: String,
    master_seed: u64,
    run_seeds: Vec<u64>,
    runs_completed: usize,
    methods: BTreeMap<String, MethodStats>,
    gap_curves: BTreeMap<String, Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    paired_p_values: Option<BTreeMap<String, f64>>,
    sd_definition: &'static str,
    regret_bound_note: &'static str,
    wall_time_seconds: f64,
    partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

const SD_DEFINITION: &str = "sample standard deviation over per-run client-mean gaps";
const BOUND_NOTE: &str =
    "theorem bound output omits the unspecified-constant O(1/(log(2+t))^(0.5+eps)) tail term";

fn write_rows_csv(path: &Path, dim: usize, rows: &[ResultRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "run,client,iteration")?;
    for d in 0..dim {
        write!(f, ",x{d}")?;
    }
    writeln!(f, ",y,best,gap,regret,cum_regret,leader,w_diag_mean")?;
    for r in rows {
        write!(f, "{},{},{}", r.run, r.client, r.iteration)?;
        for v in &r.design {
            write!(f, ",{v}")?;
        }
        writeln!(
            f,
            ",{},{},{},{},{},{},{}",
            r.observed, r.best, r.gap_so_far, r.regret, r.cum_regret, r.leader, r.matrix_diag_mean
        )?;
    }
    Ok(())
}

fn write_matrices_csv(
    path: &Path,
    k: usize,
    matrix_rows: &[(usize, usize, Vec<f64>)],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "run,iteration")?;
    for i in 1..=k {
        for j in 1..=k {
            write!(f, ",w_{i}_{j}")?;
        }
    }
    writeln!(f)?;
    for (run, iteration, entries) in matrix_rows {
        write!(f, "{run},{iteration}")?;
        for v in entries {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    Ok(())
}

fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, summary)?;
    writeln!(f)?;
    Ok(())
}

fn base_summary(cfg: &ExperimentConfig, started: Instant) -> Summary {
    Summary {
        config: cfg.to_config_string(),
        master_seed: cfg.seed,
        run_seeds: (0..cfg.runs).map(|r| run_seed(cfg.seed, r)).collect(),
        runs_completed: 0,
        methods: BTreeMap::new(),
        gap_curves: BTreeMap::new(),
        paired_p_values: None,
        sd_definition: SD_DEFINITION,
        regret_bound_note: BOUND_NOTE,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        partial: false,
        error: None,
    }
}

/// Runs the configured method and writes rows.csv, matrices.csv and
/// summary.json into the output directory. On failure a partial
/// summary.json is still written so the state of the outputs is flagged.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MethodOutcome> {
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let method = Method(cfg.scheme);

    match execute_method(cfg, method) {
        Ok(outcome) => {
            write_rows_csv(&cfg.out_dir.join("rows.csv"), cfg.dim, &outcome.rows)?;
            write_matrices_csv(
                &cfg.out_dir.join("matrices.csv"),
                cfg.clients,
                &outcome.matrix_rows,
            )?;
            let mut summary = base_summary(cfg, started);
            summary.runs_completed = cfg.runs;
            summary.methods.insert(
                method.name().to_string(),
                MethodStats {
                    gap_mean: outcome.gap_mean,
                    gap_sd: outcome.gap_sd,
                },
            );
            summary
                .gap_curves
                .insert(method.name().to_string(), outcome.gap_curve.clone());
            summary.wall_time_seconds = started.elapsed().as_secs_f64();
            write_summary(&cfg.out_dir.join("summary.json"), &summary)?;
            Ok(outcome)
        }
        Err(e) => {
            let mut summary = base_summary(cfg, started);
            summary.partial = true;
            summary.error = Some(e.to_string());
            write_summary(&cfg.out_dir.join("summary.json"), &summary)?;
            Err(e)
        }
    }
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub method: String,
    pub gap_mean: f64,
    pub gap_sd: f64,
}

/// Runs every method on identical per-run problems and emits a
/// side-by-side table (comparison.csv) plus per-method row dumps.
pub fn compare_methods(
    cfg: &ExperimentConfig,
    methods: &[Method],
) -> Result<Vec<ComparisonEntry>> {
    if methods.len() < 2 {
        return Err(Error::config("methods", "need at least two methods"));
    }
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut outcomes = Vec::new();
    for method in methods {
        let outcome = execute_method(cfg, *method)?;
        write_rows_csv(
            &cfg.out_dir.join(format!("rows-{}.csv", method.name())),
            cfg.dim,
            &outcome.rows,
        )?;
        write_matrices_csv(
            &cfg.out_dir.join(format!("matrices-{}.csv", method.name())),
            cfg.clients,
            &outcome.matrix_rows,
        )?;
        outcomes.push(outcome);
    }

    // fair-comparison audit: every method saw the same initial data
    for outcome in &outcomes[1..] {
        debug_assert_eq!(outcome.per_run_y0, outcomes[0].per_run_y0);
    }

    let entries: Vec<ComparisonEntry> = outcomes
        .iter()
        .map(|o| ComparisonEntry {
            method: o.method.name().to_string(),
            gap_mean: o.gap_mean,
            gap_sd: o.gap_sd,
        })
        .collect();

    let mut table = std::io::BufWriter::new(std::fs::File::create(
        cfg.out_dir.join("comparison.csv"),
    )?);
    writeln!(table, "method,gap_mean,gap_sd")?;
    for e in &entries {
        writeln!(table, "{},{},{}", e.method, e.gap_mean, e.gap_sd)?;
    }
    drop(table);

    let mut summary = base_summary(cfg, started);
    summary.runs_completed = cfg.runs;
    let mut p_values = BTreeMap::new();
    for (i, a) in outcomes.iter().enumerate() {
        summary.methods.insert(
            a.method.name().to_string(),
            MethodStats {
                gap_mean: a.gap_mean,
                gap_sd: a.gap_sd,
            },
        );
        summary
            .gap_curves
            .insert(a.method.name().to_string(), a.gap_curve.clone());
        for b in outcomes.iter().skip(i + 1) {
            let means_a: Vec<f64> = a.per_run_gaps.iter().map(|g| stats::mean(g)).collect();
            let means_b: Vec<f64> = b.per_run_gaps.iter().map(|g| stats::mean(g)).collect();
            if means_a.len() >= 2 {
                let p = stats::paired_one_sided_p(&means_a, &means_b)?;
                p_values.insert(
                    format!("{}>{}", a.method.name(), b.method.name()),
                    p,
                );
            }
        }
    }
    summary.paired_p_values = Some(p_values);
    summary.wall_time_seconds = started.elapsed().as_secs_f64();
    write_summary(&cfg.out_dir.join("summary.json"), &summary)?;

    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::BaseFunction;

    fn smoke_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig::parse_str(&format!(
            "function = levy\nd = 2\nk = 2\nt = 5\nn0 = 4\nruns = 2\nseed = 11\nout = {}\n",
            out.display()
        ))
        .unwrap()
    }

    fn temp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("cboc-test-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn smoke_run_row_accounting() {
        let dir = temp_dir("rows");
        let cfg = smoke_config(&dir);
        let outcome = run_experiment(&cfg).unwrap();
        assert_eq!(outcome.rows.len(), 2 * 2 * 5);

        let rows = std::fs::read_to_string(dir.join("rows.csv")).unwrap();
        assert_eq!(rows.lines().count(), 1 + 20);
        assert!(rows.starts_with("run,client,iteration,x0,x1,y,best,gap,"));

        let matrices = std::fs::read_to_string(dir.join("matrices.csv")).unwrap();
        assert_eq!(matrices.lines().count(), 1 + 2 * 5);

        let summary = std::fs::read_to_string(dir.join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
        assert_eq!(parsed["partial"], serde_json::Value::Bool(false));
        assert!(parsed["methods"]["cboc-l"]["gap_mean"].is_f64());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn identical_seed_byte_identical_rows() {
        let dir_a = temp_dir("det-a");
        let dir_b = temp_dir("det-b");
        run_experiment(&smoke_config(&dir_a)).unwrap();
        run_experiment(&smoke_config(&dir_b)).unwrap();
        let a = std::fs::read(dir_a.join("rows.csv")).unwrap();
        let b = std::fs::read(dir_b.join("rows.csv")).unwrap();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir_a).unwrap();
        std::fs::remove_dir_all(&dir_b).unwrap();
    }

    #[test]
    fn summary_gap_matches_reaggregation_from_rows() {
        let dir = temp_dir("agg");
        let cfg = smoke_config(&dir);
        let outcome = run_experiment(&cfg).unwrap();

        // independent re-aggregation from the emitted rows.csv
        let rows = std::fs::read_to_string(dir.join("rows.csv")).unwrap();
        let mut final_gap: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for line in rows.lines().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            let run: usize = cells[0].parse().unwrap();
            let client: usize = cells[1].parse().unwrap();
            let gap: f64 = cells[7].parse().unwrap();
            final_gap.insert((run, client), gap); // last iteration wins
        }
        let mut per_run: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for ((run, _), gap) in final_gap {
            per_run.entry(run).or_default().push(gap);
        }
        let table: Vec<Vec<f64>> = per_run.into_values().collect();
        let (mean, sd) = average_gap(&table);
        assert!((mean - outcome.gap_mean).abs() < 1e-12);
        assert!((sd - outcome.gap_sd).abs() < 1e-12);

        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap())
                .unwrap();
        let reported = summary["methods"]["cboc-l"]["gap_mean"].as_f64().unwrap();
        assert!((reported - mean).abs() < 1e-12);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn comparison_table_round_trips() {
        let dir = temp_dir("cmp");
        let mut cfg = smoke_config(&dir);
        cfg.iterations = 4;
        let methods = [
            Method::from_name("cboc-l").unwrap(),
            Method::from_name("individual").unwrap(),
        ];
        let entries = compare_methods(&cfg, &methods).unwrap();
        assert_eq!(entries.len(), 2);

        let table = std::fs::read_to_string(dir.join("comparison.csv")).unwrap();
        let mut lines = table.lines();
        assert_eq!(lines.next().unwrap(), "method,gap_mean,gap_sd");
        for (line, entry) in lines.zip(&entries) {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells[0], entry.method);
            assert_eq!(cells[1].parse::<f64>().unwrap(), entry.gap_mean);
            assert_eq!(cells[2].parse::<f64>().unwrap(), entry.gap_sd);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sampled_heterogeneity_is_per_run_and_method_free() {
        let cfg = ExperimentConfig::parse_str(
            "function = levy\nd = 2\nk = 3\nhetero = sampled\nseed = 4\n",
        )
        .unwrap();
        let run0 = build_problems(&cfg, 0).unwrap();
        let run0_again = build_problems(&cfg, 0).unwrap();
        let run1 = build_problems(&cfg, 1).unwrap();
        assert_eq!(run0, run0_again);
        assert_ne!(run0[0].hetero, run1[0].hetero);
        assert_ne!(run0[0].hetero, run0[1].hetero);
        for p in &run0 {
            assert_eq!(p.base, BaseFunction::Levy);
            assert!(p.hetero.a1 >= 0.5 && p.hetero.a1 <= 1.0);
        }
    }
}
