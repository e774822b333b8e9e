//! Welch and paired t-tests with two-sided p-values from the Student-t CDF.
//!
//! The CDF goes through the regularized incomplete beta function, evaluated by
//! its continued fraction (modified Lentz) with a Lanczos log-gamma prefactor.

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Significance threshold used throughout the reports.
pub const ALPHA: f64 = 0.01;

/// Default relative tolerance of the continued-fraction evaluation.
pub const CF_TOLERANCE: f64 = 1e-15;
const CF_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub significant_at_0_01: bool,
}

impl TTestResult {
    fn new(t: f64, df: f64) -> Self {
        let p = student_t_two_sided_p(t, df);
        Self {
            t,
            df,
            p_two_sided: p,
            significant_at_0_01: p < ALPHA,
        }
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for I_x(a, b) (without the prefactor), modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64, tol: f64) -> f64 {
    const TINY: f64 = 1e-300;
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
    for m in 1..=CF_MAX_ITER {
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
        if (del - 1.0).abs() < tol {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b) with continued-fraction tolerance `tol`.
pub fn reg_inc_beta_with(a: f64, b: f64, x: f64, tol: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x, tol) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x, tol) / b
    }
}

pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    reg_inc_beta_with(a, b, x, CF_TOLERANCE)
}

/// Two-sided p-value P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p_with(t: f64, df: f64, tol: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    reg_inc_beta_with(df / 2.0, 0.5, x, tol).clamp(0.0, 1.0)
}

pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    student_t_two_sided_p_with(t, df, CF_TOLERANCE)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Welch's unequal-variances t-test of mean(a) - mean(b).
///
/// Degrees of freedom use the Welch-Satterthwaite formula written in terms of
/// the ratio of the two squared standard errors, which reduces to exactly
/// `2n - 2` when both are equal and the sizes match.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::DegenerateSamples(format!(
            "Welch test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ua = sample_variance(a) / na;
    let ub = sample_variance(b) / nb;
    if ua == 0.0 && ub == 0.0 {
        return Err(MetricsError::DegenerateSamples("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / (ua + ub).sqrt();
    // df = (ua+ub)^2 / (ua^2/(na-1) + ub^2/(nb-1)), divided through by the
    // larger squared standard error.
    let (big, small, n_big, n_small) = if ua >= ub { (ua, ub, na, nb) } else { (ub, ua, nb, na) };
    let r = small / big;
    let df = (1.0 + r) * (1.0 + r) * (n_big - 1.0) * (n_small - 1.0)
        / ((n_small - 1.0) + r * r * (n_big - 1.0));
    Ok(TTestResult::new(t, df))
}

/// Paired t-test on per-pair differences.
pub fn paired_ttest(diffs: &[f64]) -> Result<TTestResult, MetricsError> {
    if diffs.len() < 2 {
        return Err(MetricsError::TooFew(diffs.len()));
    }
    let var = sample_variance(diffs);
    if var == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let n = diffs.len() as f64;
    let t = mean(diffs) / (var.sqrt() / n.sqrt());
    Ok(TTestResult::new(t, n - 1.0))
}
