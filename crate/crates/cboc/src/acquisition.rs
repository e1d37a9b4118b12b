//! Utility functions over a GP posterior (expected improvement and
//! knowledge gradient) and their maximization over the design box.


use crate::error::{Error, Result};
use crate::gp::{Dataset, GpHyperparameters, Surrogate};
use crate::rng::{standard_normal, uniform_point, Stream};
use crate::stats::{normal_cdf, normal_pdf};

/// Monte-Carlo knowledge-gradient estimates may come out marginally
/// negative; they are clamped at this tolerance.
const KG_NEG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityKind {
    Ei,
    Kg,
}

impl UtilityKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ei" => Ok(UtilityKind::Ei),
            "kg" => Ok(UtilityKind::Kg),
            other => Err(Error::config(
                "utility",
                format!("unknown utility `{other}` (expected ei or kg)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UtilityKind::Ei => "ei",
            UtilityKind::Kg => "kg",
        }
    }
}

/// Knobs for utility maximization and knowledge-gradient estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcquisitionConfig {
    pub utility: UtilityKind,
    pub n_raw_candidates: usize,
    pub n_restarts: usize,
    pub kg_fantasies: usize,
    pub kg_inner_grid: usize,
}

impl AcquisitionConfig {
    /// Defaults scaled to the design dimension: 512 D raw candidates,
    /// 8 pattern-search restarts.
    pub fn default_for_dim(utility: UtilityKind, dim: usize) -> Self {
        AcquisitionConfig {
            utility,
            n_raw_candidates: 512 * dim.max(1),
            n_restarts: 8,
            kg_fantasies: 64,
            kg_inner_grid: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_raw_candidates", self.n_raw_candidates),
            ("n_restarts", self.n_restarts),
            ("kg_fantasies", self.kg_fantasies),
            ("kg_inner_grid", self.kg_inner_grid),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// Closed-form expected improvement of a Gaussian belief over an incumbent:
/// sigma phi(z) + (mu - y*) Phi(z) with z = (mu - y*)/sigma.
pub fn expected_improvement(mean: f64, sd: f64, incumbent: f64) -> Result<f64> {
    if !mean.is_finite() || !sd.is_finite() || !incumbent.is_finite() {
        return Err(Error::NonFinite("expected_improvement input"));
    }
    if sd < 0.0 {
        return Err(Error::InvalidDomain(format!(
            "standard deviation must be non-negative, got {sd}"
        )));
    }
    let gain = mean - incumbent;
    if sd == 0.0 {
        return Ok(gain.max(0.0));
    }
    let z = gain / sd;
    Ok((sd * normal_pdf(z) + gain * normal_cdf(z)).max(0.0))
}

/// Monte-Carlo knowledge gradient of sampling at `x`, estimated against a
/// fitted surrogate: expected gain in the maximal posterior mean over a
/// fixed candidate set (uniform inner grid plus the data locations) after
/// one fantasy observation drawn from the observation posterior.
pub fn knowledge_gradient_model(
    surrogate: &Surrogate,
    x: &[f64],
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    rng: &mut Stream,
) -> Result<f64> {
    cfg.validate()?;
    let mut candidates: Vec<Vec<f64>> = (0..cfg.kg_inner_grid)
        .map(|_| uniform_point(rng, bounds))
        .collect();
    candidates.extend(surrogate.data().designs().iter().cloned());

    let mut current_max = f64::NEG_INFINITY;
    for c in &candidates {
        current_max = current_max.max(surrogate.predict(c)?.mean);
    }

    let at_x = surrogate.predict(x)?;
    let sd_y = at_x.sd_y();
    let mut total = 0.0;
    for _ in 0..cfg.kg_fantasies {
        let fantasy_y = at_x.mean + sd_y * standard_normal(rng);
        let updated = surrogate.fantasize(x, fantasy_y)?;
        let mut updated_max = f64::NEG_INFINITY;
        for c in &candidates {
            updated_max = updated_max.max(updated.predict(c)?.mean);
        }
        total += updated_max;
    }
    let kg = total / cfg.kg_fantasies as f64 - current_max;
    Ok(kg.max(-KG_NEG_TOL))
}

/// Knowledge gradient for explicit data and hyperparameters.
pub fn knowledge_gradient(
    data: &Dataset,
    hyper: &GpHyperparameters,
    x: &[f64],
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    rng: &mut Stream,
) -> Result<f64> {
    let surrogate = Surrogate::with_hyper(data, *hyper)?;
    knowledge_gradient_model(&surrogate, x, bounds, cfg, rng)
}

fn utility_at(
    surrogate: &Surrogate,
    incumbent: f64,
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    x: &[f64],
    rng: &mut Stream,
) -> Result<f64> {
    match cfg.utility {
        UtilityKind::Ei => {
            let p = surrogate.predict(x)?;
            expected_improvement(p.mean, p.sd_f(), incumbent)
        }
        UtilityKind::Kg => knowledge_gradient_model(surrogate, x, bounds, cfg, rng),
    }
}

/// A raw candidate and its utility, exposed for auditing the maximizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCandidate {
    pub point: Vec<f64>,
    pub utility: f64,
}

/// Budget for each local pattern-search refinement.
const REFINE_EVALS: usize = 100;

/// Maximizes the expected utility over the box: uniform raw candidates,
/// then pattern-search refinement of the best few, everything clipped to
/// bounds. Returns the best point, its utility, and the raw candidate
/// evaluations.
pub fn maximize_utility_traced(
    surrogate: &Surrogate,
    incumbent: f64,
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    rng: &mut Stream,
) -> Result<(Vec<f64>, f64, Vec<RawCandidate>)> {
    cfg.validate()?;
    if bounds.is_empty() || bounds.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(Error::InvalidDomain(
            "bounds must be non-degenerate (lo < hi per coordinate)".into(),
        ));
    }

    let mut raw = Vec::with_capacity(cfg.n_raw_candidates);
    for _ in 0..cfg.n_raw_candidates {
        let point = uniform_point(rng, bounds);
        let utility = utility_at(surrogate, incumbent, bounds, cfg, &point, rng)?;
        raw.push(RawCandidate { point, utility });
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].utility.total_cmp(&raw[a].utility));

    // Local refinement starts: the best raw candidates, plus the
    // best-observed designs. The latter seed the sharp utility peaks next
    // to the incumbent that uniform draws rarely hit.
    let n_seeds = (cfg.n_restarts / 2).min(surrogate.data().len());
    let mut starts: Vec<Vec<f64>> = order
        .iter()
        .take(cfg.n_restarts.saturating_sub(n_seeds).max(1))
        .map(|&idx| raw[idx].point.clone())
        .collect();
    let mut by_response: Vec<usize> = (0..surrogate.data().len()).collect();
    by_response.sort_by(|&a, &b| {
        surrogate.data().responses()[b].total_cmp(&surrogate.data().responses()[a])
    });
    for &idx in by_response.iter().take(n_seeds) {
        starts.push(surrogate.data().designs()[idx].clone());
    }

    let mut best_x = raw[order[0]].point.clone();
    let mut best_u = raw[order[0]].utility;
    for start in starts {
        let f0 = utility_at(surrogate, incumbent, bounds, cfg, &start, rng)?;
        let (x, u) = pattern_search_max(
            |x, rng| utility_at(surrogate, incumbent, bounds, cfg, x, rng),
            start,
            f0,
            bounds,
            REFINE_EVALS,
            rng,
        )?;
        if u > best_u {
            best_x = x;
            best_u = u;
        }
    }
    Ok((best_x, best_u, raw))
}

/// As [`maximize_utility_traced`] but returning only the maximizer and the
/// reward value shared with the other clients.
pub fn maximize_utility_model(
    surrogate: &Surrogate,
    incumbent: f64,
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    rng: &mut Stream,
) -> Result<(Vec<f64>, f64)> {
    let (x, u, _) = maximize_utility_traced(surrogate, incumbent, bounds, cfg, rng)?;
    Ok((x, u))
}

/// Utility maximization for explicit data and hyperparameters.
pub fn maximize_utility(
    data: &Dataset,
    hyper: &GpHyperparameters,
    incumbent: f64,
    bounds: &[(f64, f64)],
    cfg: &AcquisitionConfig,
    rng: &mut Stream,
) -> Result<(Vec<f64>, f64)> {
    let surrogate = Surrogate::with_hyper(data, *hyper)?;
    maximize_utility_model(&surrogate, incumbent, bounds, cfg, rng)
}

/// Axis-aligned pattern search with halving steps under an evaluation
/// budget; moves are clipped to the box.
fn pattern_search_max(
    mut f: impl FnMut(&[f64], &mut Stream) -> Result<f64>,
    mut x: Vec<f64>,
    mut fx: f64,
    bounds: &[(f64, f64)],
    max_evals: usize,
    rng: &mut Stream,
) -> Result<(Vec<f64>, f64)> {
    let dim = bounds.len();
    let mut steps: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.1 * (hi - lo)).collect();
    let mut evals = 0;
    'outer: loop {
        let mut improved = false;
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                if evals >= max_evals {
                    break 'outer;
                }
                let proposal = (x[d] + sign * steps[d]).clamp(bounds[d].0, bounds[d].1);
                if proposal == x[d] {
                    continue;
                }
                let mut trial = x.clone();
                trial[d] = proposal;
                let ft = f(&trial, rng)?;
                evals += 1;
                if ft > fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
            if steps.iter().all(|&s| s < 1e-12) {
                break;
            }
        }
    }
    Ok((x, fx))
}
