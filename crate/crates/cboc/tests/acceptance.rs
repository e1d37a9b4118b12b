//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line
//! (run with `--nocapture` to see them) and asserts its thresholds.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use cboc::acquisition::{
    expected_improvement, maximize_utility_traced, AcquisitionConfig, UtilityKind,
};
use cboc::benchmarks::{BaseFunction, BlackBoxProblem};
use cboc::clients::{run_cboc, run_individual};
use cboc::config::ExperimentConfig;
use cboc::consensus::{
    consensus_combine, init_uniform, leader_block_update_raw, leader_step, uniform_step,
    ConsensusMatrix, ConsensusScheme,
};
use cboc::experiment::{execute_method, Method};
use cboc::gp::{posterior, Dataset, GpHyperparameters, Surrogate, GRAM_JITTER_REL};
use cboc::rng::{standard_normal, stream, uniform_point};
use cboc::stats;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {}: {} ({})",
        criterion,
        if pass { "PASS" } else { "FAIL" },
        detail
    );
}

fn levy2_config(clients: usize, runs: usize, hetero: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::parse_str(&format!(
        "function = levy\nd = 2\nk = {clients}\nhetero = {hetero}\nruns = {runs}\nseed = {seed}\n"
    ))
    .unwrap()
}

#[test]
fn criterion_1_homogeneous_levy2() {
    // K = 5, T = 20 D = 40, N0 = 5 D = 10, EI utility, 10 runs.
    let cfg = levy2_config(5, 10, "homogeneous", 11);
    assert_eq!((cfg.iterations, cfg.initial_points), (40, 10));
    let cboc_l = execute_method(&cfg, Method::from_name("cboc-l").unwrap()).unwrap();
    let individual = execute_method(&cfg, Method::from_name("individual").unwrap()).unwrap();

    let pass = cboc_l.gap_mean >= 0.95 && individual.gap_mean <= cboc_l.gap_mean - 0.02;
    report(
        "1 (homogeneous Levy-2)",
        pass,
        &format!(
            "gap cboc-l = {:.4} (+/- {:.4}), individual = {:.4} (+/- {:.4})",
            cboc_l.gap_mean, cboc_l.gap_sd, individual.gap_mean, individual.gap_sd
        ),
    );
    assert!(pass, "cboc-l {} vs individual {}", cboc_l.gap_mean, individual.gap_mean);
}

#[test]
fn criterion_2_heterogeneous_levy2() {
    // K = 10 with sampled per-run heterogeneity; one-sided paired
    // comparison of per-run means at the 0.05 level.
    let cfg = levy2_config(10, 10, "sampled", 12);
    let cboc_l = execute_method(&cfg, Method::from_name("cboc-l").unwrap()).unwrap();
    let individual = execute_method(&cfg, Method::from_name("individual").unwrap()).unwrap();

    let means_l: Vec<f64> = cboc_l.per_run_gaps.iter().map(|g| stats::mean(g)).collect();
    let means_i: Vec<f64> = individual
        .per_run_gaps
        .iter()
        .map(|g| stats::mean(g))
        .collect();
    let p = stats::paired_one_sided_p(&means_l, &means_i).unwrap();

    let pass = cboc_l.gap_mean > individual.gap_mean && p < 0.05;
    report(
        "2 (heterogeneous Levy-2)",
        pass,
        &format!(
            "gap cboc-l = {:.4}, individual = {:.4}, one-sided paired p = {:.5}",
            cboc_l.gap_mean, individual.gap_mean, p
        ),
    );
    assert!(pass, "p = {p}, cboc-l {} vs {}", cboc_l.gap_mean, individual.gap_mean);
}

#[test]
fn criterion_3_shekel_client_scaling() {
    // Shekel-10 at K = 5 and K = 20, 5 runs each.
    let mut cfg5 = ExperimentConfig::parse_str(
        "function = shekel10\nk = 5\nhetero = sampled\nruns = 5\nseed = 13\n",
    )
    .unwrap();
    assert_eq!((cfg5.iterations, cfg5.initial_points), (80, 20));
    let mut cfg20 = cfg5.clone();
    cfg20.clients = 20;

    cfg5.scheme = cboc::consensus::SchemeKind::LeaderDriven;
    cfg20.scheme = cboc::consensus::SchemeKind::LeaderDriven;
    let cboc_l_5 = execute_method(&cfg5, Method::from_name("cboc-l").unwrap()).unwrap();
    let cboc_l_20 = execute_method(&cfg20, Method::from_name("cboc-l").unwrap()).unwrap();
    let individual_20 = execute_method(&cfg20, Method::from_name("individual").unwrap()).unwrap();

    let pass = cboc_l_20.gap_mean > cboc_l_5.gap_mean
        && cboc_l_20.gap_mean > individual_20.gap_mean + 0.05;
    report(
        "3 (Shekel-10 client scaling)",
        pass,
        &format!(
            "cboc-l K=5: {:.4}, cboc-l K=20: {:.4}, individual K=20: {:.4}",
            cboc_l_5.gap_mean, cboc_l_20.gap_mean, individual_20.gap_mean
        ),
    );
    assert!(
        pass,
        "K5 {} K20 {} ind20 {}",
        cboc_l_5.gap_mean, cboc_l_20.gap_mean, individual_20.gap_mean
    );
}

#[test]
fn criterion_4_worked_example_golden_tests() {
    // consensus step on two scalar designs
    let w = ConsensusMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]))
        .unwrap();
    let out = consensus_combine(&w, &[vec![5.0], vec![7.0]]).unwrap();
    let combine_ok = (out[0][0] - 5.6).abs() <= 1e-12 && (out[1][0] - 6.4).abs() <= 1e-12;

    // leader update for K = 3, T = 10, rewards (1, 5, 4) from uniform W1
    let w1 = init_uniform(3).unwrap();
    let (w2, leader) = leader_step(&w1, &[1.0, 5.0, 4.0], None, 10).unwrap();
    let third = 1.0 / 3.0;
    let expected = [
        [third - 1.0 / 30.0, third + 2.0 / 30.0, third - 1.0 / 30.0],
        [third + 2.0 / 30.0, third - 4.0 / 30.0, third + 2.0 / 30.0],
        [third - 1.0 / 30.0, third + 2.0 / 30.0, third - 1.0 / 30.0],
    ];
    let mut leader_ok = leader == 2;
    for i in 0..3 {
        for j in 0..3 {
            leader_ok &= (w2.entries()[(i, j)] - expected[i][j]).abs() <= 1e-12;
        }
    }

    // permutation allocator (x1, x2, x3) -> (x2, x3, x1)
    let p1 = ConsensusMatrix::from_matrix(DMatrix::from_row_slice(
        3,
        3,
        &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
    ))
    .unwrap();
    let pts = vec![vec![1.5, -2.0], vec![0.25, 8.0], vec![-3.0, 4.0]];
    let permuted = consensus_combine(&p1, &pts).unwrap();
    let perm_ok = permuted == vec![pts[1].clone(), pts[2].clone(), pts[0].clone()];

    let pass = combine_ok && leader_ok && perm_ok;
    report(
        "4 (worked-example golden tests)",
        pass,
        &format!("combine = {combine_ok}, leader = {leader_ok}, permutation = {perm_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_matrix_property_suite() {
    let mut rng = stream(0xc5, &[]);
    let mut worst_ds = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_cancel = 0.0f64;
    let mut worst_identity = 0.0f64;

    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let horizon = rng.random_range(2..=60);

        // uniform-transitional trajectory reaches the identity
        let mut w = init_uniform(k).unwrap();
        for _ in 0..horizon {
            worst_ds = worst_ds.max(w.ds_deviation());
            worst_sym = worst_sym.max(symmetry_gap(&w));
            w = uniform_step(&w, horizon).unwrap();
        }
        let identity_gap = (w.entries() - DMatrix::<f64>::identity(k, k)).abs().max();
        worst_identity = worst_identity.max(identity_gap);

        // leader-driven trajectory stays doubly stochastic; raw block
        // update cancels row/column sums exactly
        let mut w1 = init_uniform(k).unwrap();
        let mut prev = None;
        for _ in 0..horizon {
            let rewards: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
            let raw = leader_block_update_raw(&w1, rng.random_range(0..k), horizon);
            for i in 0..k {
                worst_cancel = worst_cancel.max((raw.row(i).sum() - 1.0).abs());
                worst_cancel = worst_cancel.max((raw.column(i).sum() - 1.0).abs());
            }
            let (w2, leader) = leader_step(&w1, &rewards, prev, horizon).unwrap();
            worst_ds = worst_ds.max(w2.ds_deviation());
            worst_sym = worst_sym.max(symmetry_gap(&w2));
            prev = Some(leader);
            w1 = uniform_step(&w1, horizon).unwrap();
        }
    }

    let pass = worst_ds <= 1e-9 && worst_sym <= 1e-9 && worst_identity <= 1e-9
        && worst_cancel <= 1e-12;
    report(
        "5 (matrix property suite)",
        pass,
        &format!(
            "max ds deviation = {worst_ds:.2e}, max asymmetry = {worst_sym:.2e}, \
             max W(T) - I = {worst_identity:.2e}, max raw-update sum drift = {worst_cancel:.2e}"
        ),
    );
    assert!(pass);
}

fn symmetry_gap(w: &ConsensusMatrix) -> f64 {
    let m = w.entries();
    let mut gap = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            gap = gap.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    gap
}

/// Gauss-Jordan inverse, the brute-force route for the oracle checks.
fn invert(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        if pivot != col {
            a.swap_rows(pivot, col);
            inv.swap_rows(pivot, col);
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

#[test]
fn criterion_6_surrogate_acquisition_oracles() {
    let mut rng = stream(0xc6, &[]);

    // GP posterior against explicit 2x2 and 3x3 inversion
    let mut worst_posterior = 0.0f64;
    for case in 0..60 {
        let n = 2 + case % 2;
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let data = Dataset::new(xs.clone(), ys.clone()).unwrap();
        let hyper = GpHyperparameters::new(
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.0..0.3),
        )
        .unwrap();
        let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];

        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d2: f64 = xs[i]
                    .iter()
                    .zip(&xs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                gram[(i, j)] = hyper.variance_scale
                    * (-d2 / (2.0 * hyper.lengthscale * hyper.lengthscale)).exp();
            }
            gram[(i, i)] +=
                hyper.noise_sd * hyper.noise_sd + GRAM_JITTER_REL * hyper.variance_scale;
        }
        let inv = invert(&gram);
        let k: DVector<f64> = DVector::from_iterator(
            n,
            xs.iter().map(|xi| {
                let d2: f64 = x.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
                hyper.variance_scale
                    * (-d2 / (2.0 * hyper.lengthscale * hyper.lengthscale)).exp()
            }),
        );
        let y = DVector::from_column_slice(&ys);
        let mean_oracle = k.dot(&(&inv * &y));
        let var_oracle = (hyper.variance_scale - k.dot(&(&inv * &k))).max(0.0);

        let p = posterior(&data, &hyper, &x).unwrap();
        worst_posterior = worst_posterior
            .max((p.mean - mean_oracle).abs())
            .max((p.variance_f - var_oracle).abs());
    }
    let posterior_ok = worst_posterior <= 1e-8;

    // EI closed form vs one-million-draw Monte-Carlo on 100 random triples
    let mut ei_mc_ok = true;
    let n_draws = 1_000_000usize;
    for _ in 0..100 {
        let mean = rng.random_range(-2.0..2.0);
        let sd = rng.random_range(0.05..2.0);
        let incumbent = rng.random_range(-2.0..2.0);
        let closed = expected_improvement(mean, sd, incumbent).unwrap();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n_draws {
            let imp = (mean + sd * standard_normal(&mut rng) - incumbent).max(0.0);
            sum += imp;
            sum_sq += imp * imp;
        }
        let mc = sum / n_draws as f64;
        let var = (sum_sq / n_draws as f64 - mc * mc).max(0.0);
        let se = (var / n_draws as f64).sqrt();
        if (closed - mc).abs() > 3.0 * se + 1e-12 {
            ei_mc_ok = false;
        }
    }

    // EI non-negativity on ten thousand random triples
    let mut ei_nonneg_ok = true;
    for _ in 0..10_000 {
        let ei = expected_improvement(
            rng.random_range(-10.0..10.0),
            rng.random_range(0.0..5.0),
            rng.random_range(-10.0..10.0),
        )
        .unwrap();
        if ei < 0.0 {
            ei_nonneg_ok = false;
        }
    }

    // the maximizer always dominates its own raw candidate set
    let mut dominance_ok = true;
    for case in 0..12 {
        let n = 3 + case % 4;
        let data = Dataset::new(
            (0..n)
                .map(|_| vec![rng.random_range(-1.0..1.0)])
                .collect::<Vec<_>>(),
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let surrogate = Surrogate::with_hyper(
            &data,
            GpHyperparameters::new(1.0, 0.4, 0.05).unwrap(),
        )
        .unwrap();
        let cfg = AcquisitionConfig {
            utility: UtilityKind::Ei,
            n_raw_candidates: 256,
            n_restarts: 6,
            kg_fantasies: 4,
            kg_inner_grid: 8,
        };
        let incumbent = data.max_response().unwrap();
        let mut acq_rng = stream(0xc6c6, &[case as u64]);
        let (_, s, raw) = maximize_utility_traced(
            &surrogate,
            incumbent,
            &[(-1.0, 1.0)],
            &cfg,
            &mut acq_rng,
        )
        .unwrap();
        if raw.iter().any(|c| c.utility > s + 1e-12) {
            dominance_ok = false;
        }
    }

    let pass = posterior_ok && ei_mc_ok && ei_nonneg_ok && dominance_ok;
    report(
        "6 (surrogate/acquisition oracle suite)",
        pass,
        &format!(
            "posterior max err = {worst_posterior:.2e}, EI vs MC = {ei_mc_ok}, \
             EI >= 0 = {ei_nonneg_ok}, maximizer dominance = {dominance_ok}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_regret_sublinearity() {
    // Homogeneous Levy-2, K = 3, T = 120, 5 runs of the leader scheme:
    // the average per-iteration regret must at least halve between T = 30
    // and T = 120, and no instantaneous regret may dip below -1e-9.
    let t = 120;
    let problems: Vec<BlackBoxProblem> = (0..3)
        .map(|_| BlackBoxProblem::new(BaseFunction::Levy, 2).unwrap())
        .collect();
    let scheme = ConsensusScheme::leader(t).unwrap();
    let acq = AcquisitionConfig::default_for_dim(UtilityKind::Ei, 2);

    let mut rate_30 = Vec::new();
    let mut rate_120 = Vec::new();
    let mut min_regret = f64::INFINITY;
    for run in 0..5 {
        let seed = cboc::rng::derive_seed(14, &[cboc::rng::stage::RUN, run]);
        let history = run_cboc(&problems, &scheme, &acq, 10, t, seed).unwrap();
        for client in &history.clients {
            for r in &client.records {
                min_regret = min_regret.min(r.regret);
            }
            rate_30.push(client.records[29].cum_regret / 30.0);
            rate_120.push(client.records[119].cum_regret / 120.0);
        }
    }
    let mean_30 = stats::mean(&rate_30);
    let mean_120 = stats::mean(&rate_120);

    let pass = mean_120 < 0.5 * mean_30 && min_regret >= -1e-9;
    report(
        "7 (regret sublinearity)",
        pass,
        &format!(
            "mean R/T at 30 = {mean_30:.4}, at 120 = {mean_120:.4}, min r = {min_regret:.2e}"
        ),
    );
    assert!(pass, "R/T 30 = {mean_30}, 120 = {mean_120}, min r = {min_regret}");
}

#[test]
fn criterion_8_identity_equivalence() {
    let problems: Vec<BlackBoxProblem> = (0..3)
        .map(|_| BlackBoxProblem::new(BaseFunction::Levy, 2).unwrap())
        .collect();
    let acq = AcquisitionConfig::default_for_dim(UtilityKind::Ei, 2);

    let identity = run_cboc(
        &problems,
        &ConsensusScheme::identity(6).unwrap(),
        &acq,
        4,
        6,
        99,
    )
    .unwrap();
    let individual = run_individual(&problems, &acq, 4, 6, 99).unwrap();
    let multi_ok = identity == individual;

    let single: Vec<BlackBoxProblem> =
        vec![BlackBoxProblem::new(BaseFunction::Levy, 2).unwrap()];
    let mut single_ok = true;
    for scheme in [
        ConsensusScheme::uniform(5).unwrap(),
        ConsensusScheme::leader(5).unwrap(),
    ] {
        let collaborative = run_cboc(&single, &scheme, &acq, 4, 5, 123).unwrap();
        let alone = run_individual(&single, &acq, 4, 5, 123).unwrap();
        single_ok &= collaborative.clients == alone.clients;
    }

    let pass = multi_ok && single_ok;
    report(
        "8 (identity-scheme equivalence)",
        pass,
        &format!("identity == individual: {multi_ok}, K = 1 equivalence: {single_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_case_study_out_of_scope() {
    // The physical sensor-design case study needs external commercial FEA
    // software; nothing here depends on it.
    report("9 (FEA case study)", true, "explicitly out of scope");
}

#[test]
fn exchange_round_and_initial_designs_are_method_invariant() {
    // extra guard backing criteria 1-3: the per-run initial incumbents
    // must match across methods (fair comparison by seed discipline)
    let cfg = levy2_config(3, 2, "sampled", 77);
    let a = execute_method(&cfg, Method::from_name("cboc-l").unwrap()).unwrap();
    let b = execute_method(&cfg, Method::from_name("individual").unwrap()).unwrap();
    assert_eq!(a.per_run_y0, b.per_run_y0);

    let mut rng = stream(0xabc, &[]);
    let messages: Vec<cboc::clients::RoundMessage> = (1..=4)
        .map(|id| cboc::clients::RoundMessage {
            sender: id,
            candidate: uniform_point(&mut rng, &[(-1.0, 1.0), (-1.0, 1.0)]),
            reward: rng.random_range(0.0..1.0),
        })
        .collect();
    let central =
        cboc::clients::exchange_round(&messages, 4, cboc::clients::Topology::Centralized).unwrap();
    let decentral =
        cboc::clients::exchange_round(&messages, 4, cboc::clients::Topology::Decentralized)
            .unwrap();
    assert_eq!(central, decentral);
}
