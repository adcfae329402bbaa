//! Paired t-test with the Student-t tail evaluated through the regularized
//! incomplete beta function.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 pairs, got {0}")]
    TooFew(usize),
    #[error("non-finite sample")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    /// Mean difference `a − b` over its standard error.
    pub t: f64,
    /// Two-sided.
    pub p_value: f64,
    pub df: usize,
    pub mean_diff: f64,
    /// All differences were zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast for x below the mean; use symmetry above it.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| ≥ |t|)` of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Paired t-test on `a − b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let df = n - 1;
    let mean = d.iter().sum::<f64>() / n as f64;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest {
            t: 0.0,
            p_value: 1.0,
            df,
            mean_diff: 0.0,
            degenerate: true,
        });
    }
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df as f64;
    let se = (var / n as f64).sqrt();
    let t = if se == 0.0 {
        f64::INFINITY.copysign(mean)
    } else {
        mean / se
    };
    Ok(TTest {
        t,
        p_value: student_t_two_sided(t, df as f64),
        df,
        mean_diff: mean,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a.
        assert_abs_diff_eq!(incomplete_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(incomplete_beta(3.0, 1.0, 0.6), 0.216, epsilon = 1e-14);
        // Symmetry I_x(a, b) = 1 − I_{1−x}(b, a).
        let v = incomplete_beta(2.5, 4.0, 0.35);
        assert_abs_diff_eq!(v, 1.0 - incomplete_beta(4.0, 2.5, 0.65), epsilon = 1e-14);
    }

    #[test]
    fn conventions() {
        let a = [1.0, 2.0, 3.0];
        let r = paired_ttest(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.degenerate);
        let r = paired_ttest(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r.t.is_infinite());
        assert!(r.p_value < 1e-12);
        assert!(matches!(paired_ttest(&[1.0], &[2.0]), Err(StatsError::TooFew(1))));
        assert!(paired_ttest(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn matches_reference_distribution() {
        let mut rng = crate::rng::seeded(17);
        for trial in 0..50 {
            let n = 10;
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let shift = 0.05 * trial as f64;
            let b: Vec<f64> = (0..n).map(|i| a[i] - shift + rng.gen_range(-0.3..0.3)).collect();
            let ours = paired_ttest(&a, &b).unwrap();
            let reference = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap();
            let expected = 2.0 * reference.cdf(-ours.t.abs());
            assert!(
                (ours.p_value - expected).abs() < 1e-9,
                "t={} ours={} ref={}",
                ours.t,
                ours.p_value,
                expected
            );
        }
    }
}
