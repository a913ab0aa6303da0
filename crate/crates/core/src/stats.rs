//! Special functions and the hypothesis tests used by the context-anomaly
//! detectors.
//!
//! Tail probabilities of the Student-t and F distributions are evaluated via
//! the regularized incomplete beta function, itself computed with a modified
//! Lentz continued fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 20_000;

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(z) for z > 0.
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for I_x(a, b), valid for x < (a+1)/(a+b+2).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// I_x(a, b) with the complement `y = 1 - x` supplied separately, so callers
/// holding an exact complement do not lose precision near x = 1.
fn beta_inc(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, y) / b).clamp(0.0, 1.0)
    }
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(SpearError::InvalidInput(format!(
            "incomplete beta requires a, b > 0 (got a={a}, b={b})"
        )));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(SpearError::InvalidInput(format!(
            "incomplete beta requires 0 <= x <= 1 (got {x})"
        )));
    }
    Ok(beta_inc(a, b, x, 1.0 - x))
}

/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
///
/// Infinite `t` gives 0; NaN propagates.
pub fn student_t_two_sided_p(t: f64, dof: u64) -> f64 {
    assert!(dof >= 1, "student t requires dof >= 1");
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let nu = dof as f64;
    let t2 = t * t;
    beta_inc(0.5 * nu, 0.5, nu / (nu + t2), t2 / (nu + t2))
}

/// P(F >= f) for the F distribution with (d1, d2) degrees of freedom.
pub fn f_upper_tail_p(f: f64, d1: u64, d2: u64) -> f64 {
    assert!(d1 >= 1 && d2 >= 1, "F distribution requires positive dof");
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let (n1, n2) = (d1 as f64, d2 as f64);
    let denom = n2 + n1 * f;
    beta_inc(0.5 * n2, 0.5 * n1, n2 / denom, n1 * f / denom)
}

/// Ordinary least squares fit of `x_t = β0 + β1·t` with t = 1..T and the
/// two-sided test of β1 = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: u64,
}

/// Statistic and p-value of a two-group test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sum_sq_dev(values: &[f64], center: f64) -> f64 {
    values.iter().map(|v| (v - center) * (v - center)).sum()
}

pub fn linreg_slope_test(values: &[f64]) -> Result<RegressionFit> {
    let n = values.len();
    if n < 3 {
        return Err(SpearError::NotApplicable(format!(
            "slope test needs at least 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let t_mean = (nf + 1.0) / 2.0;
    let y_mean = mean(values);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in values.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxx += dt * dt;
        sxy += dt * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let rss: f64 = values
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = y - intercept - slope * (i + 1) as f64;
            r * r
        })
        .sum();
    let dof = (n - 2) as u64;
    let slope_se = (rss / dof as f64 / sxx).sqrt();
    let (t_stat, p_value) = if slope_se > 0.0 {
        let t = slope / slope_se;
        (t, student_t_two_sided_p(t, dof))
    } else if slope == 0.0 {
        (0.0, 1.0)
    } else {
        (slope.signum() * f64::INFINITY, 0.0)
    };
    Ok(RegressionFit {
        intercept,
        slope,
        slope_se,
        t_stat,
        p_value,
        dof,
    })
}

fn check_groups(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(SpearError::InvalidInput(format!(
            "two-group test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Pooled-variance two-sample Student's t-test; the statistic is mean(a) − mean(b).
pub fn two_sample_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_groups(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let dof = a.len() + b.len() - 2;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / dof as f64;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let diff = ma - mb;
    let result = if se > 0.0 {
        let t = diff / se;
        TestResult {
            statistic: t,
            p_value: student_t_two_sided_p(t, dof as u64),
        }
    } else if diff == 0.0 {
        TestResult {
            statistic: 0.0,
            p_value: 1.0,
        }
    } else {
        TestResult {
            statistic: diff.signum() * f64::INFINITY,
            p_value: 0.0,
        }
    };
    Ok(result)
}

/// Mean-centered Levene test for equal variances of two groups.
///
/// A zero within-group denominator gives p = 1 when the group means of the
/// absolute deviations also agree, and p = 0 (W = ∞) when they differ.
pub fn levene_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_groups(a, b)?;
    let deviations = |g: &[f64]| -> Vec<f64> {
        let m = mean(g);
        g.iter().map(|v| (v - m).abs()).collect()
    };
    let (za, zb) = (deviations(a), deviations(b));
    let (ma, mb) = (mean(&za), mean(&zb));
    let total = (za.len() + zb.len()) as f64;
    let grand = (za.iter().sum::<f64>() + zb.iter().sum::<f64>()) / total;
    let between = za.len() as f64 * (ma - grand).powi(2) + zb.len() as f64 * (mb - grand).powi(2);
    let within = sum_sq_dev(&za, ma) + sum_sq_dev(&zb, mb);
    let dof = (za.len() + zb.len() - 2) as u64;
    let result = if within > 0.0 {
        let w = (total - 2.0) * between / within;
        TestResult {
            statistic: w,
            p_value: f_upper_tail_p(w, 1, dof),
        }
    } else if between > 0.0 {
        TestResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
        }
    } else {
        TestResult {
            statistic: 0.0,
            p_value: 1.0,
        }
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_examples() {
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 0.0).unwrap(), 0.0);
        assert_eq!(reg_incomplete_beta(2.0, 3.0, 1.0).unwrap(), 1.0);
        assert!((reg_incomplete_beta(1.0, 1.0, 0.3).unwrap() - 0.3).abs() < 1e-12);
        assert!((reg_incomplete_beta(2.0, 2.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
        // Beta(2, 3) CDF: 6x^2 - 8x^3 + 3x^4
        let x: f64 = 0.37;
        let exact = 6.0 * x.powi(2) - 8.0 * x.powi(3) + 3.0 * x.powi(4);
        assert!((reg_incomplete_beta(2.0, 3.0, x).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_domain() {
        assert!(reg_incomplete_beta(0.0, 1.0, 0.5).is_err());
        assert!(reg_incomplete_beta(1.0, -1.0, 0.5).is_err());
        assert!(reg_incomplete_beta(1.0, 1.0, 1.5).is_err());
        assert!(reg_incomplete_beta(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn student_t_examples() {
        assert_eq!(student_t_two_sided_p(0.0, 7), 1.0);
        assert!((student_t_two_sided_p(1.0, 1) - 0.5).abs() < 1e-12);
        assert_eq!(student_t_two_sided_p(f64::INFINITY, 3), 0.0);
        assert_eq!(student_t_two_sided_p(f64::NEG_INFINITY, 3), 0.0);
        // Cauchy tail: 1 - 2/pi * atan(t)
        let p = student_t_two_sided_p(3.0, 1);
        assert!((p - (1.0 - 2.0 / std::f64::consts::PI * 3f64.atan())).abs() < 1e-12);
        let p = student_t_two_sided_p(1.96, 10_000);
        assert!((0.049..=0.051).contains(&p), "{p}");
    }

    #[test]
    fn f_tail_examples() {
        assert_eq!(f_upper_tail_p(0.0, 3, 4), 1.0);
        assert!((f_upper_tail_p(1.0, 6, 6) - 0.5).abs() < 1e-12);
        // F(1, d) = T(d)^2
        let t: f64 = 2.1;
        let direct = f_upper_tail_p(t * t, 1, 12);
        assert!((direct - student_t_two_sided_p(t, 12)).abs() < 1e-12);
    }

    #[test]
    fn regression_examples() {
        let fit = linreg_slope_test(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(fit.slope, 1.0);
        assert_eq!(fit.p_value, 0.0);
        assert_eq!(fit.dof, 3);
        let fit = linreg_slope_test(&[4.0, 4.0, 4.0, 4.0]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.p_value, 1.0);
        assert!(matches!(
            linreg_slope_test(&[1.0, 2.0]),
            Err(SpearError::NotApplicable(_))
        ));
    }

    #[test]
    fn t_test_degenerate_cases() {
        let r = two_sample_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = two_sample_t_test(&[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.statistic.is_infinite() && r.statistic < 0.0);
        assert!(two_sample_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn levene_degenerate_cases() {
        let a = [1.0, 4.0, 2.0, 8.0];
        let r = levene_test(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = levene_test(&[3.0; 4], &[-2.0; 5]).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = levene_test(&[-1.0, 1.0, -1.0, 1.0], &[-10.0, 10.0, -10.0, 10.0]).unwrap();
        assert!(r.p_value < 0.05);
        assert!(levene_test(&[1.0, 2.0], &[3.0]).is_err());
    }

    proptest! {
        #[test]
        fn beta_symmetry(a in 0.05f64..60.0, b in 0.05f64..60.0, x in 0.0f64..=1.0) {
            let lhs = reg_incomplete_beta(a, b, x).unwrap();
            let rhs = reg_incomplete_beta(b, a, 1.0 - x).unwrap();
            prop_assert!((lhs + rhs - 1.0).abs() < 1e-10, "{} {}", lhs, rhs);
        }

        #[test]
        fn t_tail_monotone(t1 in 0.0f64..20.0, dt in 0.0f64..5.0, dof in 1u64..200) {
            prop_assert!(student_t_two_sided_p(t1 + dt, dof) <= student_t_two_sided_p(t1, dof) + 1e-15);
        }

        #[test]
        fn t_test_antisymmetric(a in prop::collection::vec(-50f64..50.0, 2..20),
                                b in prop::collection::vec(-50f64..50.0, 2..20)) {
            let ab = two_sample_t_test(&a, &b).unwrap();
            let ba = two_sample_t_test(&b, &a).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() <= 1e-9 * ab.statistic.abs().max(1.0));
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn levene_location_invariant(a in prop::collection::vec(-50f64..50.0, 2..20),
                                     b in prop::collection::vec(-50f64..50.0, 2..20),
                                     shift in -100f64..100.0) {
            let base = levene_test(&a, &b).unwrap();
            let moved: Vec<f64> = b.iter().map(|v| v + shift).collect();
            let shifted = levene_test(&a, &moved).unwrap();
            prop_assert!((base.p_value - shifted.p_value).abs() < 1e-8);
        }
    }
}
