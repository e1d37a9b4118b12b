//! Small statistics helpers: standard-normal density/CDF, sample moments,
//! and a one-sided paired t comparison used when reporting method contrasts.

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation (n denominator).
pub fn population_sd(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (ss / xs.len() as f64).sqrt()
}

/// Survival function P(T > t) of Student's t with `df` degrees of freedom.
///
/// Uses the regularized incomplete beta identity
/// P(T > t) = I_{df/(df+t^2)}(df/2, 1/2) / 2 for t >= 0.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || !t.is_finite() {
        return Err(Error::InvalidDomain(format!(
            "student_t_sf needs finite t and df > 0, got t = {t}, df = {df}"
        )));
    }
    if t < 0.0 {
        return Ok(1.0 - student_t_sf(-t, df)?);
    }
    let x = df / (df + t * t);
    Ok(0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x))
}

/// One-sided paired comparison: p-value for H1 "mean(a) > mean(b)" over
/// paired observations. Returns p = 1 when the difference is degenerate
/// and non-positive, p = 0 when degenerate and positive.
pub fn paired_one_sided_p(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidDomain(
            "paired comparison needs at least two pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d_mean = mean(&diffs);
    let d_sd = sample_sd(&diffs);
    if d_sd == 0.0 {
        return Ok(if d_mean > 0.0 { 0.0 } else { 1.0 });
    }
    let n = diffs.len() as f64;
    let t = d_mean / (d_sd / n.sqrt());
    student_t_sf(t, n - 1.0)
}

/// Regularized incomplete beta function I_x(a, b) via the Lentz continued
/// fraction (Numerical Recipes style), accurate to ~1e-14 for moderate a, b.
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
