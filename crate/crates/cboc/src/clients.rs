//! The collaborative round loop: per-client surrogate state, the
//! consensus -> experiment -> augment -> refit -> optimize cycle, and the
//! simulated message board coordinating clients either through an
//! orchestrator or by all-to-all broadcast.

use rayon::prelude::*;

use crate::acquisition::{maximize_utility_model, AcquisitionConfig};
use crate::benchmarks::gap_metric;
use crate::consensus::{consensus_combine, ConsensusMatrix, ConsensusScheme, SchemeEngine};
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpHyperparameters, HyperSearchSpace, Surrogate};
use crate::objective::Objective;
use crate::rng::{stage, stream, uniform_point, Stream};

/// What one client shares per round. Responses never appear here.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    /// 1-based client id.
    pub sender: usize,
    pub candidate: Vec<f64>,
    pub reward: f64,
}

/// How shared candidates are routed each round. Both routes produce
/// identical ordered vectors; decentralized exchange simply has every
/// client assemble them locally from the broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Centralized,
    Decentralized,
}

/// Collects the round's messages into id-ordered candidate and reward
/// vectors. Every client must have posted exactly one message; anything
/// else means the synchronization barrier timed out.
pub fn exchange_round(
    messages: &[RoundMessage],
    k: usize,
    topology: Topology,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let assemble = |msgs: &[RoundMessage]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut slots: Vec<Option<&RoundMessage>> = vec![None; k];
        for m in msgs {
            if m.sender == 0 || m.sender > k {
                return Err(Error::StalledRound(format!(
                    "message from unknown client {}",
                    m.sender
                )));
            }
            if slots[m.sender - 1].replace(m).is_some() {
                return Err(Error::StalledRound(format!(
                    "duplicate message from client {}",
                    m.sender
                )));
            }
        }
        let missing: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i + 1)
            .collect();
        if !missing.is_empty() {
            return Err(Error::StalledRound(format!(
                "barrier timed out waiting for client(s) {missing:?}"
            )));
        }
        let candidates = slots
            .iter()
            .map(|s| s.unwrap().candidate.clone())
            .collect();
        let rewards = slots.iter().map(|s| s.unwrap().reward).collect();
        Ok((candidates, rewards))
    };

    match topology {
        Topology::Centralized => assemble(messages),
        Topology::Decentralized => {
            // every client assembles the same vectors from the broadcast
            let mut result = None;
            for _client in 0..k {
                let local = assemble(messages)?;
                match &result {
                    None => result = Some(local),
                    Some(first) => debug_assert_eq!(first, &local),
                }
            }
            Ok(result.expect("k >= 1"))
        }
    }
}

/// One client's loop state.
#[derive(Debug)]
struct ClientState {
    /// 1-based client id.
    id: usize,
    data: Dataset,
    hyper: GpHyperparameters,
    surrogate: Surrogate,
    incumbent: f64,
    incumbent_design: Vec<f64>,
    y0_best: f64,
    candidate: Vec<f64>,
    reward: f64,
    fit_rng: Stream,
    acq_rng: Stream,
    obs_rng: Stream,
}

/// Per-client, per-iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub consensus_point: Vec<f64>,
    pub observed: f64,
    pub incumbent: f64,
    pub gap_so_far: f64,
    pub regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientHistory {
    /// 1-based client id.
    pub id: usize,
    pub y_star: f64,
    /// Best response in the initial dataset.
    pub y0_best: f64,
    pub records: Vec<IterationRecord>,
    pub final_data_len: usize,
}

impl ClientHistory {
    /// Gap achieved by the end of the run.
    pub fn final_gap(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.gap_so_far)
            .unwrap_or_else(|| gap_metric(self.y0_best, self.y0_best, self.y_star))
    }
}

/// Everything one run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub clients: Vec<ClientHistory>,
    /// Consensus matrix used at each iteration.
    pub matrices: Vec<ConsensusMatrix>,
    /// Leader elected at each iteration, when the scheme has one.
    pub leaders: Vec<Option<usize>>,
    /// Message log: everything that crossed client boundaries.
    pub messages: Vec<Vec<RoundMessage>>,
    pub iterations: usize,
    /// True when the EI stopping rule ended the run before the budget.
    pub stopped_early: bool,
}

impl RunHistory {
    pub fn client_gaps(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.final_gap()).collect()
    }
}

/// Optional loop behavior beyond the defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopOptions {
    pub topology: Topology,
    /// Stop the run once every client's shared reward falls below kappa.
    pub kappa_stop: Option<f64>,
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions {
            topology: Topology::Centralized,
            kappa_stop: None,
        }
    }
}

/// Share of the round's best reward below which a client votes its
/// incumbent design instead of its utility maximizer.
const REWARD_FALLBACK_FRAC: f64 = 0.25;

/// Hyperparameter search anchored on the true search box and the current
/// response spread.
///
/// Under an active consensus matrix a client's proposal is displaced
/// before it is evaluated, so an over-confident fit is never corrected by
/// its own sample, and inflated utility spikes spread through the leader
/// weights. Mixing schemes therefore search a calmer box: a smoothness
/// floor on the lengthscale, an honest noise floor, and an amplitude cap.
/// Without mixing (identity scheme, or a single client) every proposal is
/// sampled directly, evidence maximization self-corrects, and the full
/// space is searched.
fn search_space_for(
    bounds: &[(f64, f64)],
    data: &Dataset,
    calm: bool,
) -> Result<HyperSearchSpace> {
    let diam = bounds
        .iter()
        .map(|&(lo, hi)| (hi - lo) * (hi - lo))
        .sum::<f64>()
        .sqrt();
    let sy = {
        let sd = crate::stats::population_sd(data.responses());
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    };
    if calm {
        HyperSearchSpace::new(
            (1e-2 * sy, 1.0 * sy),
            (2.5 * diam / 10.0, 1e2 * diam / 10.0),
            (1e-2 * sy, sy),
        )
    } else {
        HyperSearchSpace::new(
            (1e-2 * sy, 1e2 * sy),
            (1e-2 * diam / 10.0, 1e2 * diam / 10.0),
            (1e-6 * sy, sy),
        )
    }
}

fn refit_and_optimize(
    state: &mut ClientState,
    bounds: &[(f64, f64)],
    acq: &AcquisitionConfig,
    mixing: bool,
    peer_reward_high: Option<f64>,
) -> Result<()> {
    let space = search_space_for(bounds, &state.data, mixing)?;
    state.surrogate = Surrogate::fit_warm(
        &state.data,
        Some(&space),
        &mut state.fit_rng,
        Some(state.hyper),
    )?;
    state.hyper = state.surrogate.hyper();
    let (candidate, reward) = maximize_utility_model(
        &state.surrogate,
        state.incumbent,
        bounds,
        acq,
        &mut state.acq_rng,
    )?;
    state.candidate = candidate;
    state.reward = reward;

    // A client whose best expected improvement is negligible next to the
    // round's strongest reward has nothing worth exploring; it votes its
    // incumbent design so the blend keeps sampling the best known region
    // instead of inheriting a noise-level explorer.
    if mixing {
        if let Some(high) = peer_reward_high {
            if state.reward < REWARD_FALLBACK_FRAC * high {
                let p = state.surrogate.predict(&state.incumbent_design)?;
                state.candidate = state.incumbent_design.clone();
                state.reward =
                    crate::acquisition::expected_improvement(p.mean, p.sd_f(), state.incumbent)?;
            }
        }
    }
    Ok(())
}

/// Whether the scheme actually blends proposals across clients.
fn is_mixing(scheme: &ConsensusScheme, k: usize) -> bool {
    k > 1 && scheme.kind != crate::consensus::SchemeKind::Identity
}

fn abort(client: usize, iteration: usize, source: Error) -> Error {
    Error::RunAborted {
        client,
        iteration,
        source: Box::new(source),
    }
}

/// Runs the full collaborative loop: initial designs are evaluated, every
/// client proposes a utility maximizer, and each round the consensus
/// matrix blends the proposals into per-client experiments.
pub fn run_cboc<P: Objective>(
    problems: &[P],
    scheme: &ConsensusScheme,
    acq: &AcquisitionConfig,
    n0: usize,
    t: usize,
    master_seed: u64,
) -> Result<RunHistory> {
    run_cboc_with(
        problems,
        scheme,
        acq,
        n0,
        t,
        master_seed,
        &LoopOptions::default(),
    )
}

pub fn run_cboc_with<P: Objective>(
    problems: &[P],
    scheme: &ConsensusScheme,
    acq: &AcquisitionConfig,
    n0: usize,
    t: usize,
    master_seed: u64,
    opts: &LoopOptions,
) -> Result<RunHistory> {
    let k = problems.len();
    if k == 0 {
        return Err(Error::InvalidClientCount(0));
    }
    if t == 0 || n0 == 0 {
        return Err(Error::InvalidDomain(
            "need n0 >= 1 initial points and t >= 1 iterations".into(),
        ));
    }
    acq.validate()?;
    let bounds = problems[0].bounds().to_vec();
    let dim = problems[0].dim();
    for p in problems {
        if p.bounds() != bounds.as_slice() || p.dim() != dim {
            return Err(Error::InvalidDomain(
                "all clients must share the same search box".into(),
            ));
        }
    }

    // initialization: sample, evaluate, fit, and propose, per client
    let mut clients: Vec<ClientState> = problems
        .par_iter()
        .enumerate()
        .map(|(idx, problem)| -> Result<ClientState> {
            let id = idx + 1;
            let cid = id as u64;
            let mut init_rng = stream(master_seed, &[stage::INIT_DESIGN, cid]);
            let mut obs_rng = stream(master_seed, &[stage::OBSERVE, cid]);
            let fit_rng = stream(master_seed, &[stage::FIT, cid]);
            let acq_rng = stream(master_seed, &[stage::ACQUISITION, cid]);

            let mut data = Dataset::empty();
            for _ in 0..n0 {
                let x = uniform_point(&mut init_rng, &bounds);
                let y = problem.observe(&x, &mut obs_rng)?;
                data.push(x, y)?;
            }
            let incumbent = data.max_response().expect("n0 >= 1");
            let incumbent_design = data.designs()[data
                .responses()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("n0 >= 1")]
            .clone();
            let mut state = ClientState {
                id,
                hyper: GpHyperparameters::new(1.0, 1.0, 0.0)?,
                surrogate: Surrogate::with_hyper(&data, GpHyperparameters::new(1.0, 1.0, 0.0)?)?,
                data,
                incumbent,
                incumbent_design,
                y0_best: incumbent,
                candidate: vec![0.0; dim],
                reward: 0.0,
                fit_rng,
                acq_rng,
                obs_rng,
            };
            refit_and_optimize(&mut state, &bounds, acq, is_mixing(scheme, k), None)
                .map_err(|e| abort(id, 0, e))?;
            Ok(state)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut engine = SchemeEngine::new(scheme.clone(), k)?;
    let mut matrices = Vec::with_capacity(t);
    let mut leaders = Vec::with_capacity(t);
    let mut message_log = Vec::with_capacity(t);
    let mut records: Vec<Vec<IterationRecord>> = vec![Vec::with_capacity(t); k];
    let mut stopped_early = false;

    for iteration in 0..t {
        let messages: Vec<RoundMessage> = clients
            .iter()
            .map(|c| RoundMessage {
                sender: c.id,
                candidate: c.candidate.clone(),
                reward: c.reward,
            })
            .collect();
        let (x_all, rewards) = exchange_round(&messages, k, opts.topology)?;
        let (w, leader) = engine.round_matrix(&rewards)?;
        let consensus_points = consensus_combine(&w, &x_all)?;
        let reward_high = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let step_records: Vec<IterationRecord> = clients
            .par_iter_mut()
            .zip(problems.par_iter())
            .zip(consensus_points.into_par_iter())
            .map(|((state, problem), mut x_new)| -> Result<IterationRecord> {
                let wrap = |e: Error| abort(state.id, iteration, e);
                // the consensus point is a convex combination of in-box
                // candidates; only float round-off can leak outside
                for (v, &(lo, hi)) in x_new.iter_mut().zip(&bounds) {
                    let slack = 1e-6 * (hi - lo);
                    assert!(
                        *v >= lo - slack && *v <= hi + slack,
                        "consensus point escaped the box: {v} not in [{lo}, {hi}]"
                    );
                    *v = v.clamp(lo, hi);
                }
                let observed = problem.observe(&x_new, &mut state.obs_rng).map_err(wrap)?;
                let clean = problem.objective_value(&x_new).map_err(wrap)?;
                let mut regret = problem.optimal_value() - clean;
                if regret < 0.0 && regret > -1e-9 {
                    regret = 0.0;
                }
                state.data.push(x_new.clone(), observed).map_err(wrap)?;
                if observed > state.incumbent {
                    state.incumbent = observed;
                    state.incumbent_design = x_new.clone();
                }
                let cum_regret =
                    records[state.id - 1].last().map_or(0.0, |r| r.cum_regret) + regret;
                let record = IterationRecord {
                    consensus_point: x_new,
                    observed,
                    incumbent: state.incumbent,
                    gap_so_far: gap_metric(state.y0_best, state.incumbent, problem.optimal_value()),
                    regret,
                    cum_regret,
                };
                refit_and_optimize(
                    state,
                    &bounds,
                    acq,
                    is_mixing(scheme, k),
                    Some(reward_high),
                )
                .map_err(|e| abort(state.id, iteration, e))?;
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()?;

        for (k_idx, record) in step_records.into_iter().enumerate() {
            records[k_idx].push(record);
        }
        matrices.push(w);
        leaders.push(leader);
        message_log.push(messages);

        if let Some(kappa) = opts.kappa_stop {
            if clients
                .iter()
                .map(|c| crate::benchmarks::ei_stopping(c.reward, kappa))
                .collect::<Result<Vec<_>>>()?
                .iter()
                .all(|&stop| stop)
            {
                stopped_early = true;
                break;
            }
        }
    }

    let client_histories = clients
        .iter()
        .zip(problems)
        .zip(records)
        .map(|((state, problem), recs)| ClientHistory {
            id: state.id,
            y_star: problem.optimal_value(),
            y0_best: state.y0_best,
            final_data_len: state.data.len(),
            records: recs,
        })
        .collect();

    Ok(RunHistory {
        clients: client_histories,
        matrices,
        leaders,
        messages: message_log,
        iterations: t,
        stopped_early,
    })
}

/// The non-collaborative baseline: every client optimizes alone. Identical
/// to the collaborative loop under an identity consensus matrix.
pub fn run_individual<P: Objective>(
    problems: &[P],
    acq: &AcquisitionConfig,
    n0: usize,
    t: usize,
    master_seed: u64,
) -> Result<RunHistory> {
    run_cboc(
        problems,
        &ConsensusScheme::identity(t)?,
        acq,
        n0,
        t,
        master_seed,
    )
}
