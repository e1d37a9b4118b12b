//! Benchmark black-box problems: base test functions, per-client affine
//! heterogeneity, optimization-sense handling, the Gap metric, regret
//! accounting, and the analytic cumulative-regret bound.

use std::sync::OnceLock;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, Stream};
use crate::stats;

/// Base test functions. All five are minimization problems on their
/// canonical boxes; the driver loop always maximizes the sense-adjusted
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseFunction {
    Levy,
    Shekel10,
    Hartmann6,
    Branin,
    Ackley,
}

/// Shekel mixture depths (xi) and 4 x 10 center matrix.
const SHEKEL_XI: [f64; 10] = [0.1, 0.2, 0.2, 0.4, 0.4, 0.6, 0.3, 0.7, 0.5, 0.5];
const SHEKEL_F: [[f64; 10]; 4] = [
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
];

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

impl BaseFunction {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "levy" => Ok(BaseFunction::Levy),
            "shekel10" => Ok(BaseFunction::Shekel10),
            "hartmann6" => Ok(BaseFunction::Hartmann6),
            "branin" => Ok(BaseFunction::Branin),
            "ackley" => Ok(BaseFunction::Ackley),
            other => Err(Error::config(
                "function",
                format!("unknown function `{other}` (expected levy, shekel10, hartmann6, branin or ackley)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseFunction::Levy => "levy",
            BaseFunction::Shekel10 => "shekel10",
            BaseFunction::Hartmann6 => "hartmann6",
            BaseFunction::Branin => "branin",
            BaseFunction::Ackley => "ackley",
        }
    }

    /// Dimension required by the function, or None when any D >= 1 works.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            BaseFunction::Levy | BaseFunction::Ackley => None,
            BaseFunction::Shekel10 => Some(4),
            BaseFunction::Hartmann6 => Some(6),
            BaseFunction::Branin => Some(2),
        }
    }

    pub fn validate_dim(&self, d: usize) -> Result<()> {
        match self.fixed_dim() {
            Some(fixed) if fixed != d => Err(Error::DimensionMismatch {
                expected: fixed,
                found: d,
            }),
            _ if d == 0 => Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            }),
            _ => Ok(()),
        }
    }

    pub fn canonical_bounds(&self, d: usize) -> Result<Vec<(f64, f64)>> {
        self.validate_dim(d)?;
        Ok(match self {
            BaseFunction::Levy => vec![(-10.0, 10.0); d],
            BaseFunction::Shekel10 => vec![(0.0, 10.0); 4],
            BaseFunction::Hartmann6 => vec![(0.0, 1.0); 6],
            BaseFunction::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            BaseFunction::Ackley => vec![(-32.768, 32.768); d],
        })
    }

    /// Raw formula value; defined on all of R^D so shifted evaluation stays
    /// valid outside the canonical box.
    pub(crate) fn eval_formula(&self, x: &[f64]) -> f64 {
        use std::f64::consts::{E, PI};
        match self {
            BaseFunction::Levy => {
                let d = x.len();
                let w: Vec<f64> = x.iter().map(|&v| 1.0 + (v - 1.0) / 4.0).collect();
                let mut sum = (PI * w[0]).sin().powi(2);
                for &wd in &w[..d - 1] {
                    sum += (wd - 1.0).powi(2) * (1.0 + 10.0 * (PI * wd + 1.0).sin().powi(2));
                }
                let wl = w[d - 1];
                sum + (wl - 1.0).powi(2) * (1.0 + (2.0 * PI * wl).sin().powi(2))
            }
            BaseFunction::Shekel10 => {
                -(0..10)
                    .map(|i| {
                        let dist: f64 =
                            (0..4).map(|d| (x[d] - SHEKEL_F[d][i]).powi(2)).sum();
                        1.0 / (dist + SHEKEL_XI[i])
                    })
                    .sum::<f64>()
            }
            BaseFunction::Hartmann6 => {
                -(0..4)
                    .map(|i| {
                        let expo: f64 = (0..6)
                            .map(|d| HARTMANN_A[i][d] * (x[d] - HARTMANN_P[i][d]).powi(2))
                            .sum();
                        HARTMANN_ALPHA[i] * (-expo).exp()
                    })
                    .sum::<f64>()
            }
            BaseFunction::Branin => {
                let (x1, x2) = (x[0], x[1]);
                (x2 - 5.1 / (4.0 * PI * PI) * x1 * x1 + 5.0 / PI * x1 - 6.0).powi(2)
                    + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos()
                    + 10.0
            }
            BaseFunction::Ackley => {
                let d = x.len() as f64;
                let sq = x.iter().map(|&v| v * v).sum::<f64>() / d;
                let cs = x.iter().map(|&v| (2.0 * PI * v).cos()).sum::<f64>() / d;
                -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
            }
        }
    }

    /// Global minimum value over the canonical box. Analytic where known,
    /// otherwise a cached multi-start numerical oracle.
    pub fn min_value(&self, d: usize) -> Result<f64> {
        self.validate_dim(d)?;
        Ok(match self {
            BaseFunction::Levy | BaseFunction::Ackley => 0.0,
            BaseFunction::Branin => 5.0 / (4.0 * std::f64::consts::PI),
            BaseFunction::Shekel10 => {
                static MIN: OnceLock<f64> = OnceLock::new();
                *MIN.get_or_init(|| oracle_minimum(*self, 4))
            }
            BaseFunction::Hartmann6 => {
                static MIN: OnceLock<f64> = OnceLock::new();
                *MIN.get_or_init(|| oracle_minimum(*self, 6))
            }
        })
    }

    /// Per-function heterogeneity parameter distributions.
    pub fn hetero_distribution(&self) -> HeteroDistribution {
        match self {
            BaseFunction::Levy => HeteroDistribution::new((0.5, 1.0), (0.0, 1.0), (0.0, 1.0)),
            BaseFunction::Shekel10 => HeteroDistribution::new((0.5, 1.0), (0.0, 2.0), (0.0, 1.0)),
            BaseFunction::Hartmann6 => HeteroDistribution::new((0.5, 2.0), (0.0, 1.0), (0.0, 1.0)),
            BaseFunction::Branin => HeteroDistribution::new((0.5, 1.0), (0.0, 1.0), (0.0, 1.0)),
            BaseFunction::Ackley => HeteroDistribution::new((1.0, 2.0), (0.5, 1.0), (0.5, 1.0)),
        }
    }
}

/// Resolves a registry name plus optional dimension into a concrete
/// (function, D) pair.
pub fn registry_lookup(name: &str, d: Option<usize>) -> Result<(BaseFunction, usize)> {
    let f = BaseFunction::from_name(name)?;
    let dim = match (f.fixed_dim(), d) {
        (Some(fixed), None) => fixed,
        (Some(fixed), Some(given)) if given == fixed => fixed,
        (Some(fixed), Some(given)) => {
            return Err(Error::config(
                "d",
                format!("{name} is {fixed}-dimensional, got d = {given}"),
            ))
        }
        (None, Some(given)) if given >= 1 => given,
        (None, _) => {
            return Err(Error::config(
                "d",
                format!("{name} needs an explicit dimension d >= 1"),
            ))
        }
    };
    Ok((f, dim))
}

/// Checked evaluation on the canonical domain.
pub fn eval_base(function: BaseFunction, x: &[f64]) -> Result<f64> {
    let bounds = function.canonical_bounds(x.len())?;
    check_in_bounds(x, &bounds)?;
    Ok(function.eval_formula(x))
}

fn check_in_bounds(x: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if x.len() != bounds.len() {
        return Err(Error::DimensionMismatch {
            expected: bounds.len(),
            found: x.len(),
        });
    }
    for (i, (&v, &(lo, hi))) in x.iter().zip(bounds).enumerate() {
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::OutOfBounds {
                coord: i,
                value: v,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Multi-start compass-search minimizer used to pin optima that have no
/// closed form. Coarse grid plus random starts, then local refinement; the
/// whole budget stays under one million evaluations.
fn oracle_minimum(f: BaseFunction, d: usize) -> f64 {
    let bounds = f.canonical_bounds(d).expect("canonical bounds");
    let mut rng = crate::rng::stream(0x04ac1e, &[d as u64]);
    let mut candidates: Vec<Vec<f64>> = Vec::new();

    // 6 grid points per axis, capped so the grid stays small in 6-D.
    let per_axis = if d <= 4 { 6 } else { 5 };
    let mut idx = vec![0usize; d];
    loop {
        let point: Vec<f64> = idx
            .iter()
            .zip(&bounds)
            .map(|(&i, &(lo, hi))| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
            .collect();
        candidates.push(point);
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < per_axis {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == d {
                break;
            }
        }
        if carry == d {
            break;
        }
    }
    for _ in 0..20_000 {
        candidates.push(crate::rng::uniform_point(&mut rng, &bounds));
    }

    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|p| (f.eval_formula(&p), p))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(100);

    let mut best = scored[0].0;
    for (_, start) in scored {
        let refined = compass_minimize(|x| f.eval_formula(x), &bounds, start, 8_000);
        if refined < best {
            best = refined;
        }
    }
    best
}

/// Axis-aligned compass search with halving steps, clipped to bounds.
fn compass_minimize(
    f: impl Fn(&[f64]) -> f64,
    bounds: &[(f64, f64)],
    mut x: Vec<f64>,
    max_evals: usize,
) -> f64 {
    let d = bounds.len();
    let mut steps: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.1 * (hi - lo)).collect();
    let mut fx = f(&x);
    let mut evals = 1;
    while evals < max_evals && steps.iter().any(|&s| s > 1e-13) {
        let mut improved = false;
        for dim in 0..d {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[dim] =
                    (trial[dim] + sign * steps[dim]).clamp(bounds[dim].0, bounds[dim].1);
                let ft = f(&trial);
                evals += 1;
                if ft < fx {
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
        }
    }
    fx
}

/// Optimization sense of a problem. The round loop always maximizes, so a
/// minimization problem is exposed through its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    fn apply(&self, v: f64) -> f64 {
        match self {
            Sense::Maximize => v,
            Sense::Minimize => -v,
        }
    }
}

/// Affine heterogeneity parameters: f_k(x) = a1 * f(x + vec(a3)) + a2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl HeteroParams {
    pub fn identity() -> Self {
        HeteroParams {
            a1: 1.0,
            a2: 0.0,
            a3: 0.0,
        }
    }
}

/// Sampling distributions for (a1, a2, a3): a1 uniform, a2 and a3 normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroDistribution {
    pub a1_range: (f64, f64),
    pub a2_normal: (f64, f64),
    pub a3_normal: (f64, f64),
}

impl HeteroDistribution {
    pub fn new(a1_range: (f64, f64), a2_normal: (f64, f64), a3_normal: (f64, f64)) -> Self {
        assert!(a1_range.0 > 0.0 && a1_range.1 >= a1_range.0);
        HeteroDistribution {
            a1_range,
            a2_normal,
            a3_normal,
        }
    }
}

/// Independent draws of (a1, a2, a3) from the given distribution.
pub fn sample_hetero(dist: &HeteroDistribution, rng: &mut Stream) -> HeteroParams {
    let a1 = rng.random_range(dist.a1_range.0..=dist.a1_range.1);
    let a2 = dist.a2_normal.0 + dist.a2_normal.1 * standard_normal(rng);
    let a3 = dist.a3_normal.0 + dist.a3_normal.1 * standard_normal(rng);
    HeteroParams { a1, a2, a3 }
}

/// One client's black-box design problem: a base function, its search box,
/// the optimization sense, heterogeneity parameters, observation noise, and
/// the known optimal response of the sense-adjusted transformed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxProblem {
    pub base: BaseFunction,
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub sense: Sense,
    pub hetero: HeteroParams,
    pub noise_sd: f64,
    pub y_star: f64,
}

impl BlackBoxProblem {
    /// Homogeneous, noiseless problem on the canonical box.
    pub fn new(base: BaseFunction, dim: usize) -> Result<Self> {
        let bounds = base.canonical_bounds(dim)?;
        let min = base.min_value(dim)?;
        Ok(BlackBoxProblem {
            base,
            dim,
            bounds,
            sense: Sense::Minimize,
            hetero: HeteroParams::identity(),
            noise_sd: 0.0,
            y_star: Sense::Minimize.apply(min),
        })
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        assert!(noise_sd >= 0.0);
        self.noise_sd = noise_sd;
        self
    }

    /// Transformed (pre-sense) value a1 * f(x + vec(a3)) + a2. The shift may
    /// leave the canonical box; the formula extends to all of R^D.
    pub fn transformed_value(&self, x: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().map(|&v| v + self.hetero.a3).collect();
        self.hetero.a1 * self.base.eval_formula(&shifted) + self.hetero.a2
    }

    /// Sense-adjusted objective the loop maximizes, checked against bounds.
    pub fn eval_objective(&self, x: &[f64]) -> Result<f64> {
        check_in_bounds(x, &self.bounds)?;
        Ok(self.sense.apply(self.transformed_value(x)))
    }

    /// Runs one (simulated) experiment: objective plus Gaussian noise.
    pub fn observe(&self, x: &[f64], rng: &mut Stream) -> Result<f64> {
        let clean = self.eval_objective(x)?;
        if self.noise_sd == 0.0 {
            return Ok(clean);
        }
        Ok(clean + self.noise_sd * standard_normal(rng))
    }
}

impl crate::objective::Objective for BlackBoxProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn observe(&self, x: &[f64], rng: &mut Stream) -> Result<f64> {
        BlackBoxProblem::observe(self, x, rng)
    }

    fn objective_value(&self, x: &[f64]) -> Result<f64> {
        self.eval_objective(x)
    }

    fn optimal_value(&self) -> f64 {
        self.y_star
    }
}

/// Applies the affine transform f_k = a1 * f(x + vec(a3)) + a2 and
/// recomputes the optimal response.
pub fn heterogenize(problem: &BlackBoxProblem, a1: f64, a2: f64, a3: f64) -> Result<BlackBoxProblem> {
    if !(a1 > 0.0) {
        return Err(Error::InvalidDomain(format!(
            "heterogeneity scale a1 must be positive, got {a1}"
        )));
    }
    let mut out = problem.clone();
    out.hetero = HeteroParams { a1, a2, a3 };
    let base_min = out.base.min_value(out.dim)?;
    out.y_star = out.sense.apply(a1 * base_min + a2);
    Ok(out)
}

/// Gap metric |y0 - yT| / |y0 - y*|, defined as 1 when the initial sample
/// already sits at the optimum, clamped to [0, 1 + 1e-9].
pub fn gap_metric(y0_best: f64, yt_best: f64, y_star: f64) -> f64 {
    let denom = (y0_best - y_star).abs();
    if denom <= 1e-12 {
        return 1.0;
    }
    let g = (y0_best - yt_best).abs() / denom;
    g.clamp(0.0, 1.0 + 1e-9)
}

/// Mean over runs of the per-run client mean, plus the sample standard
/// deviation over the per-run means.
pub fn average_gap(per_run_client_gaps: &[Vec<f64>]) -> (f64, f64) {
    assert!(!per_run_client_gaps.is_empty(), "need at least one run");
    let run_means: Vec<f64> = per_run_client_gaps.iter().map(|g| stats::mean(g)).collect();
    (stats::mean(&run_means), stats::sample_sd(&run_means))
}

/// Per-iteration and cumulative regret for a trajectory of consensus
/// points. Tiny negative values from the numerical y* are flushed to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRecord {
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretRecord {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

pub fn regret_track<'a, I>(consensus_points: I, problem: &BlackBoxProblem) -> Result<RegretRecord>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut instantaneous = Vec::new();
    let mut cumulative = Vec::new();
    let mut running = 0.0;
    for point in consensus_points {
        let value = problem.eval_objective(point)?;
        let mut r = problem.y_star - value;
        if r < 0.0 && r > -1e-9 {
            r = 0.0;
        }
        running += r;
        instantaneous.push(r);
        cumulative.push(running);
    }
    Ok(RegretRecord {
        instantaneous,
        cumulative,
    })
}

/// Evaluates the two closed-form square-root terms of the cumulative-regret
/// bound; the unspecified-constant tail term is deliberately omitted.
pub fn theorem1_bound(t: usize, d: usize, noise_sd: f64, kappa: f64) -> Result<f64> {
    if t <= 1 {
        return Err(Error::InvalidDomain(format!(
            "bound needs T > 1, got T = {t}"
        )));
    }
    if !(noise_sd > 0.0) {
        return Err(Error::InvalidDomain(format!(
            "bound needs v > 0, got v = {noise_sd}"
        )));
    }
    let kappa_max = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    if !(kappa > 0.0 && kappa < kappa_max) {
        return Err(Error::InvalidDomain(format!(
            "bound needs 0 < kappa < {kappa_max:.6}, got kappa = {kappa}"
        )));
    }
    let c = (1.0 / (2.0 * std::f64::consts::PI * kappa * kappa)).ln();
    let tf = t as f64;
    let lt = tf.ln();
    let denom = (1.0 + noise_sd.powi(-2)).ln();
    let term1 = (6.0 * tf * (lt.powi(3) + 1.0 + c) * lt.powi(d as i32 + 1) / denom).sqrt();
    let term2 = (2.0 * tf * lt.powi(d as i32 + 4) / denom).sqrt();
    Ok(term1 + term2)
}

/// Gap-free stopping rule: stop once the maximal expected improvement falls
/// strictly below kappa.
pub fn ei_stopping(ei_max: f64, kappa: f64) -> Result<bool> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidDomain(format!(
            "stopping constant kappa must be positive, got {kappa}"
        )));
    }
    Ok(ei_max < kappa)
}
