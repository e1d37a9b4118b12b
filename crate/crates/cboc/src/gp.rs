//! Exact Gaussian-process regression with a squared-exponential kernel:
//! kernel evaluation, posterior prediction, marginal-likelihood evaluation,
//! and grid-plus-refinement hyperparameter fitting.
//!
//! Fitting happens in an internal normalized frame (designs shifted and
//! rescaled by a single shared factor, responses standardized); because the
//! kernel is isotropic the reparameterization is exact, and predictions are
//! mapped back to original units.

use nalgebra::{DMatrix, DVector};
use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative jitter added to the Gram diagonal, in units of the variance
/// scale. Escalates by 10x on factorization failure.
pub const GRAM_JITTER_REL: f64 = 1e-8;
const GRAM_JITTER_REL_MAX: f64 = 1e-4;

/// A client's accumulated design/response pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    designs: Vec<Vec<f64>>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(designs: Vec<Vec<f64>>, responses: Vec<f64>) -> Result<Self> {
        if designs.len() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: designs.len(),
                found: responses.len(),
            });
        }
        let mut ds = Dataset {
            designs: Vec::new(),
            responses: Vec::new(),
        };
        for (x, y) in designs.into_iter().zip(responses) {
            ds.push(x, y)?;
        }
        Ok(ds)
    }

    pub fn empty() -> Self {
        Dataset {
            designs: Vec::new(),
            responses: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::NonFinite("dataset point"));
        }
        if let Some(first) = self.designs.first() {
            if x.len() != first.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: x.len(),
                });
            }
        }
        self.designs.push(x);
        self.responses.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.designs.first().map_or(0, |x| x.len())
    }

    pub fn designs(&self) -> &[Vec<f64>] {
        &self.designs
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn max_response(&self) -> Option<f64> {
        self.responses.iter().copied().reduce(f64::max)
    }
}

/// Squared-exponential kernel parameters: variance scale u^2, lengthscale,
/// and observation noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparameters {
    pub variance_scale: f64,
    pub lengthscale: f64,
    pub noise_sd: f64,
}

impl GpHyperparameters {
    pub fn new(variance_scale: f64, lengthscale: f64, noise_sd: f64) -> Result<Self> {
        if !(variance_scale > 0.0) || !variance_scale.is_finite() {
            return Err(Error::InvalidHyperparameters(format!(
                "variance_scale must be positive and finite, got {variance_scale}"
            )));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::InvalidHyperparameters(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::InvalidHyperparameters(format!(
                "noise_sd must be non-negative and finite, got {noise_sd}"
            )));
        }
        Ok(GpHyperparameters {
            variance_scale,
            lengthscale,
            noise_sd,
        })
    }
}

/// Posterior at a single query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPosterior {
    pub mean: f64,
    /// Latent-function variance, clamped at zero.
    pub variance_f: f64,
    /// Observation variance: variance_f plus the noise variance.
    pub variance_y: f64,
}

impl GpPosterior {
    pub fn sd_f(&self) -> f64 {
        self.variance_f.sqrt()
    }

    pub fn sd_y(&self) -> f64 {
        self.variance_y.sqrt()
    }
}

/// u^2 * exp(-||x1 - x2||^2 / (2 l^2)).
pub fn kernel_eval(x1: &[f64], x2: &[f64], hyper: &GpHyperparameters) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    if x1.iter().chain(x2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(hyper.variance_scale * (-d2 / (2.0 * hyper.lengthscale * hyper.lengthscale)).exp())
}

fn pairwise_sq_dists(designs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = designs.len();
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = designs[i]
                .iter()
                .zip(&designs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[(i, j)] = dist;
            d2[(j, i)] = dist;
        }
    }
    d2
}

struct GramSystem {
    l_factor: DMatrix<f64>,
    alpha: DVector<f64>,
    half_log_det: f64,
}

/// Factors K + v^2 I (plus escalating jitter) and solves for alpha.
fn factor_system(
    sq_dists: &DMatrix<f64>,
    responses: &DVector<f64>,
    hyper: &GpHyperparameters,
) -> Result<GramSystem> {
    let n = sq_dists.nrows();
    let u2 = hyper.variance_scale;
    let inv_2l2 = 1.0 / (2.0 * hyper.lengthscale * hyper.lengthscale);
    let noise_var = hyper.noise_sd * hyper.noise_sd;

    let mut jitter_rel = GRAM_JITTER_REL;
    loop {
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = u2 * (-sq_dists[(i, j)] * inv_2l2).exp();
            }
            gram[(i, i)] += noise_var + jitter_rel * u2;
        }
        if let Some(chol) = gram.cholesky() {
            let l_factor = chol.l();
            let half_log_det = (0..n).map(|i| l_factor[(i, i)].ln()).sum();
            let alpha = chol.solve(responses);
            return Ok(GramSystem {
                l_factor,
                alpha,
                half_log_det,
            });
        }
        jitter_rel *= 10.0;
        if jitter_rel > GRAM_JITTER_REL_MAX {
            return Err(Error::SingularGram);
        }
    }
}

/// A factored GP over a fixed dataset and hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    data: Dataset,
    hyper: GpHyperparameters,
    l_factor: DMatrix<f64>,
    alpha: DVector<f64>,
    half_log_det: f64,
}

impl GpModel {
    pub fn fit(data: Dataset, hyper: GpHyperparameters) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sq = pairwise_sq_dists(data.designs());
        let y = DVector::from_column_slice(data.responses());
        let sys = factor_system(&sq, &y, &hyper)?;
        Ok(GpModel {
            data,
            hyper,
            l_factor: sys.l_factor,
            alpha: sys.alpha,
            half_log_det: sys.half_log_det,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn hyper(&self) -> &GpHyperparameters {
        &self.hyper
    }

    pub fn predict(&self, x: &[f64]) -> Result<GpPosterior> {
        let n = self.data.len();
        let mut k_vec = DVector::zeros(n);
        for (i, xi) in self.data.designs().iter().enumerate() {
            k_vec[i] = kernel_eval(x, xi, &self.hyper)?;
        }
        let mean = k_vec.dot(&self.alpha);

        // forward substitution: w = L^{-1} k
        let mut w = k_vec;
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s -= self.l_factor[(i, j)] * w[j];
            }
            w[i] = s / self.l_factor[(i, i)];
        }
        let explained = w.dot(&w);
        let variance_f = (self.hyper.variance_scale - explained).max(0.0);
        let noise_var = self.hyper.noise_sd * self.hyper.noise_sd;
        Ok(GpPosterior {
            mean,
            variance_f,
            variance_y: variance_f + noise_var,
        })
    }

    /// Log evidence of the data under the current hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len() as f64;
        let y = DVector::from_column_slice(self.data.responses());
        -0.5 * y.dot(&self.alpha)
            - self.half_log_det
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Same model with one extra (design, response) pair.
    pub fn fantasize(&self, x: &[f64], y: f64) -> Result<GpModel> {
        let mut data = self.data.clone();
        data.push(x.to_vec(), y)?;
        GpModel::fit(data, self.hyper)
    }
}

/// Posterior predictive mean and variance at a query point.
pub fn posterior(data: &Dataset, hyper: &GpHyperparameters, x: &[f64]) -> Result<GpPosterior> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: x.len(),
        });
    }
    GpModel::fit(data.clone(), *hyper)?.predict(x)
}

/// -1/2 y' (K + v^2 I)^{-1} y - 1/2 log det(K + v^2 I) - N/2 log 2 pi.
pub fn log_marginal_likelihood(data: &Dataset, hyper: &GpHyperparameters) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(GpModel::fit(data.clone(), *hyper)?.log_marginal_likelihood())
}

/// Box constraints over (u, lengthscale, noise_sd); u is the standard
/// deviation scale, squared into `variance_scale` on output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperSearchSpace {
    pub u: (f64, f64),
    pub lengthscale: (f64, f64),
    pub noise_sd: (f64, f64),
}

impl HyperSearchSpace {
    pub fn new(u: (f64, f64), lengthscale: (f64, f64), noise_sd: (f64, f64)) -> Result<Self> {
        for (name, (lo, hi)) in [("u", u), ("lengthscale", lengthscale), ("noise_sd", noise_sd)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidHyperparameters(format!(
                    "search bounds for {name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(HyperSearchSpace {
            u,
            lengthscale,
            noise_sd,
        })
    }

    /// Default space anchored on the data: lengthscale around a tenth of
    /// the design diameter, u around the response spread.
    pub fn default_for(data: &Dataset) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::FittingFailed(
                "need at least two points to build a search space".into(),
            ));
        }
        let dim = data.dim();
        let mut diam_sq = 0.0;
        for d in 0..dim {
            let lo = data.designs().iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
            let hi = data
                .designs()
                .iter()
                .map(|x| x[d])
                .fold(f64::NEG_INFINITY, f64::max);
            diam_sq += (hi - lo) * (hi - lo);
        }
        let diam = diam_sq.sqrt().max(1e-12);
        let sy = {
            let sd = crate::stats::population_sd(data.responses());
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        };
        HyperSearchSpace::new(
            (1e-2 * sy, 1e2 * sy),
            (1e-2 * diam / 10.0, 1e2 * diam / 10.0),
            (1e-6 * sy, 1.0 * sy),
        )
    }
}

/// Affine normalization: designs shifted per coordinate and rescaled by one
/// shared factor (keeping the isotropic kernel equivalent), responses
/// standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    x_offset: Vec<f64>,
    x_scale: f64,
    y_offset: f64,
    y_scale: f64,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let dim = data.dim();
        let mut x_offset = vec![0.0; dim];
        let mut x_scale = 0.0f64;
        for d in 0..dim {
            let lo = data.designs().iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
            let hi = data
                .designs()
                .iter()
                .map(|x| x[d])
                .fold(f64::NEG_INFINITY, f64::max);
            x_offset[d] = lo;
            x_scale = x_scale.max(hi - lo);
        }
        if x_scale <= 0.0 {
            x_scale = 1.0;
        }
        let y_offset = crate::stats::mean(data.responses());
        let mut y_scale = crate::stats::population_sd(data.responses());
        if y_scale <= 0.0 {
            y_scale = 1.0;
        }
        Standardization {
            x_offset,
            x_scale,
            y_offset,
            y_scale,
        }
    }

    pub fn normalize_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_offset)
            .map(|(v, o)| (v - o) / self.x_scale)
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let designs = data
            .designs()
            .iter()
            .map(|x| self.normalize_point(x))
            .collect();
        let responses = data
            .responses()
            .iter()
            .map(|y| (y - self.y_offset) / self.y_scale)
            .collect();
        Dataset::new(designs, responses).expect("normalized copy of a valid dataset")
    }

    pub fn space_to_normalized(&self, s: &HyperSearchSpace) -> Result<HyperSearchSpace> {
        HyperSearchSpace::new(
            (s.u.0 / self.y_scale, s.u.1 / self.y_scale),
            (
                s.lengthscale.0 / self.x_scale,
                s.lengthscale.1 / self.x_scale,
            ),
            (s.noise_sd.0 / self.y_scale, s.noise_sd.1 / self.y_scale),
        )
    }

    pub fn hyper_to_original(&self, h: &GpHyperparameters) -> GpHyperparameters {
        GpHyperparameters {
            variance_scale: h.variance_scale * self.y_scale * self.y_scale,
            lengthscale: h.lengthscale * self.x_scale,
            noise_sd: h.noise_sd * self.y_scale,
        }
    }

    pub fn mean_to_original(&self, m: f64) -> f64 {
        m * self.y_scale + self.y_offset
    }

    pub fn variance_to_original(&self, v: f64) -> f64 {
        v * self.y_scale * self.y_scale
    }
}

const GRID_POINTS: usize = 8;
const REFINE_STEPS: usize = 20;
const TOP_STARTS: usize = 3;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || hi <= lo {
        return vec![lo];
    }
    let (lln, hln) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (lln + (hln - lln) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Maximizes the log marginal likelihood of the normalized data over the
/// normalized search space: full log grid, then coordinate refinement from
/// the best grid cells plus one random start.
fn fit_normalized(
    data: &Dataset,
    space: &HyperSearchSpace,
    rng: &mut Stream,
    extra_starts: &[[f64; 3]],
) -> Result<GpHyperparameters> {
    let sq = pairwise_sq_dists(data.designs());
    let y = DVector::from_column_slice(data.responses());
    let n = data.len() as f64;
    let log2pi_term = 0.5 * n * (2.0 * std::f64::consts::PI).ln();

    let evaluate = |u: f64, l: f64, v: f64| -> Option<f64> {
        let hyper = GpHyperparameters {
            variance_scale: u * u,
            lengthscale: l,
            noise_sd: v,
        };
        factor_system(&sq, &y, &hyper)
            .ok()
            .map(|sys| -0.5 * y.dot(&sys.alpha) - sys.half_log_det - log2pi_term)
    };

    let mut best: Option<([f64; 3], f64)> = None;
    let mut top: Vec<([f64; 3], f64)> = Vec::new();
    for &u in &log_grid(space.u.0, space.u.1, GRID_POINTS) {
        for &l in &log_grid(space.lengthscale.0, space.lengthscale.1, GRID_POINTS) {
            for &v in &log_grid(space.noise_sd.0, space.noise_sd.1, GRID_POINTS) {
                if let Some(lml) = evaluate(u, l, v) {
                    let cand = ([u, l, v], lml);
                    if best.is_none_or(|(_, b)| lml > b) {
                        best = Some(cand);
                    }
                    top.push(cand);
                }
            }
        }
    }
    if top.is_empty() {
        return Err(Error::FittingFailed(
            "every grid candidate produced a singular Gram matrix".into(),
        ));
    }
    top.sort_by(|a, b| b.1.total_cmp(&a.1));
    top.truncate(TOP_STARTS);

    // one random multi-start draw, log-uniform over the space
    let rand_start = [
        (rng.random_range(space.u.0.ln()..=space.u.1.ln())).exp(),
        (rng.random_range(space.lengthscale.0.ln()..=space.lengthscale.1.ln())).exp(),
        (rng.random_range(space.noise_sd.0.ln()..=space.noise_sd.1.ln())).exp(),
    ];
    if let Some(lml) = evaluate(rand_start[0], rand_start[1], rand_start[2]) {
        top.push((rand_start, lml));
    }
    for &start in extra_starts {
        let clipped = [
            start[0].clamp(space.u.0, space.u.1),
            start[1].clamp(space.lengthscale.0, space.lengthscale.1),
            start[2].clamp(space.noise_sd.0, space.noise_sd.1),
        ];
        if let Some(lml) = evaluate(clipped[0], clipped[1], clipped[2]) {
            top.push((clipped, lml));
        }
    }

    let clip = |i: usize, v: f64| -> f64 {
        let (lo, hi) = match i {
            0 => space.u,
            1 => space.lengthscale,
            _ => space.noise_sd,
        };
        v.clamp(lo, hi)
    };
    // initial multiplicative step: half a grid cell in log space
    let grid_half_step: f64 =
        ((space.u.1 / space.u.0).ln() / (GRID_POINTS - 1) as f64 / 2.0).exp();

    for (start, start_lml) in top {
        let mut x = start;
        let mut fx = start_lml;
        let mut factor = grid_half_step.max(1.05);
        for _ in 0..REFINE_STEPS {
            for i in 0..3 {
                for cand in [clip(i, x[i] * factor), clip(i, x[i] / factor)] {
                    if cand == x[i] {
                        continue;
                    }
                    let mut trial = x;
                    trial[i] = cand;
                    if let Some(lml) = evaluate(trial[0], trial[1], trial[2]) {
                        if lml > fx {
                            x = trial;
                            fx = lml;
                        }
                    }
                }
            }
            factor = factor.powf(0.7).max(1.0 + 1e-4);
        }
        if best.is_none_or(|(_, b)| fx > b) {
            best = Some((x, fx));
        }
    }

    let ([u, l, v], _) = best.expect("at least one candidate evaluated");
    GpHyperparameters::new(u * u, l, v)
}

/// Maximum-evidence hyperparameters over the given (or data-derived) search
/// space, returned in the units of the input data.
pub fn fit_hyperparameters(
    data: &Dataset,
    space: Option<&HyperSearchSpace>,
    rng: &mut Stream,
) -> Result<GpHyperparameters> {
    if data.len() < 2 {
        return Err(Error::FittingFailed(
            "need at least two observations to fit hyperparameters".into(),
        ));
    }
    let std = Standardization::fit(data);
    let data_n = std.apply(data);
    let space_orig = match space {
        Some(s) => *s,
        None => HyperSearchSpace::default_for(data)?,
    };
    let space_n = std.space_to_normalized(&space_orig)?;
    let hyper_n = fit_normalized(&data_n, &space_n, rng, &[])?;
    Ok(std.hyper_to_original(&hyper_n))
}

/// The loop-facing surrogate: refits hyperparameters on its normalized
/// copy of the data and answers queries in original units.
#[derive(Debug, Clone)]
pub struct Surrogate {
    data: Dataset,
    std: Standardization,
    gp: GpModel,
}

impl Surrogate {
    pub fn fit(data: &Dataset, space: Option<&HyperSearchSpace>, rng: &mut Stream) -> Result<Self> {
        Self::fit_warm(data, space, rng, None)
    }

    /// As [`Surrogate::fit`], optionally seeding the refinement with the
    /// previous round's hyperparameters (in original units).
    pub fn fit_warm(
        data: &Dataset,
        space: Option<&HyperSearchSpace>,
        rng: &mut Stream,
        warm: Option<GpHyperparameters>,
    ) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::FittingFailed(
                "need at least two observations to fit a surrogate".into(),
            ));
        }
        let std = Standardization::fit(data);
        let data_n = std.apply(data);
        let space_orig = match space {
            Some(s) => *s,
            None => HyperSearchSpace::default_for(data)?,
        };
        let space_n = std.space_to_normalized(&space_orig)?;
        let warm_starts: Vec<[f64; 3]> = warm
            .iter()
            .map(|h| {
                [
                    (h.variance_scale / (std.y_scale * std.y_scale)).sqrt(),
                    h.lengthscale / std.x_scale,
                    h.noise_sd / std.y_scale,
                ]
            })
            .collect();
        let hyper_n = fit_normalized(&data_n, &space_n, rng, &warm_starts)?;
        let gp = GpModel::fit(data_n, hyper_n)?;
        Ok(Surrogate {
            data: data.clone(),
            std,
            gp,
        })
    }

    /// Surrogate over the data exactly as given, with fixed hyperparameters
    /// and no internal normalization.
    pub fn with_hyper(data: &Dataset, hyper: GpHyperparameters) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let std = Standardization {
            x_offset: vec![0.0; data.dim()],
            x_scale: 1.0,
            y_offset: 0.0,
            y_scale: 1.0,
        };
        Ok(Surrogate {
            data: data.clone(),
            std,
            gp: GpModel::fit(data.clone(), hyper)?,
        })
    }

    /// Rebuilds the surrogate from an existing normalized-frame model; used
    /// for fantasy updates that must keep the frame fixed.
    pub fn fantasize(&self, x: &[f64], y: f64) -> Result<Surrogate> {
        let x_n = self.std.normalize_point(x);
        let y_n = (y - self.std.y_offset) / self.std.y_scale;
        let mut data = self.data.clone();
        data.push(x.to_vec(), y)?;
        Ok(Surrogate {
            data,
            std: self.std.clone(),
            gp: self.gp.fantasize(&x_n, y_n)?,
        })
    }

    /// The training data in original units.
    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn predict(&self, x: &[f64]) -> Result<GpPosterior> {
        let p = self.gp.predict(&self.std.normalize_point(x))?;
        Ok(GpPosterior {
            mean: self.std.mean_to_original(p.mean),
            variance_f: self.std.variance_to_original(p.variance_f),
            variance_y: self.std.variance_to_original(p.variance_y),
        })
    }

    /// Fitted hyperparameters mapped back to original units.
    pub fn hyper(&self) -> GpHyperparameters {
        self.std.hyper_to_original(self.gp.hyper())
    }
}
