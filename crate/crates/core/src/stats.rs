//! One-way ANOVA and the special functions behind its p-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
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

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta function, evaluated with the
/// modified Lentz method.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
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
            return h;
        }
    }
    log::warn!("incomplete beta continued fraction did not converge (x={x}, a={a}, b={b})");
    h
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Upper tail `P(F' ≥ f)` of the F distribution with `(d1, d2)` degrees of
/// freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub ss_between: f64,
    pub ss_within: f64,
}

/// One-way ANOVA over `groups`.
///
/// When every observation is identical the statistic is defined as F = 0,
/// p = 1. Zero within-group variance with differing group means has no
/// finite F and is an error.
pub fn anova_f<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::Stats(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(Error::Stats(format!("group {i} has {} observations, need 2", g.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stats(format!("group {i} has a non-finite value")));
        }
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let means: Vec<f64> = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            g.iter().sum::<f64>() / g.len() as f64
        })
        .collect();
    let grand = groups.iter().flat_map(|g| g.as_ref().iter()).sum::<f64>() / n as f64;
    let ssb: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let dfb = (k - 1) as f64;
    let dfw = (n - k) as f64;
    let (f, p) = if ssw == 0.0 {
        if ssb == 0.0 {
            (0.0, 1.0)
        } else {
            return Err(Error::Stats(
                "zero within-group variance with distinct group means; F is unbounded".into(),
            ));
        }
    } else {
        let f = (ssb / dfb) / (ssw / dfw);
        (f, f_survival(f, dfb, dfw))
    };
    Ok(AnovaResult {
        f,
        p,
        df_between: dfb,
        df_within: dfw,
        ss_between: ssb,
        ss_within: ssw,
    })
}

/// ANOVA on every pair `(i, j)`, `i < j`.
pub fn anova_pairwise<G: AsRef<[f64]>>(groups: &[G]) -> Result<Vec<(usize, usize, AnovaResult)>> {
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            out.push((i, j, anova_f(&[groups[i].as_ref(), groups[j].as_ref()])?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!(close(ln_gamma(5.0), 24f64.ln(), 1e-13));
        assert!(close(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), 1e-13));
        assert!(close(ln_gamma(0.1), 2.252_712_651_734_206, 1e-12));
    }

    /// Tanh-sinh quadrature; tolerant of integrable endpoint singularities.
    fn tanh_sinh(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let half = (hi - lo) / 2.0;
        let h = 1.0 / 128.0;
        let hpi = std::f64::consts::FRAC_PI_2;
        let mut sum = 0.0;
        for k in -600i32..=600 {
            let t = k as f64 * h;
            let u = hpi * t.sinh();
            let w = hpi * t.cosh() / u.cosh().powi(2);
            // distance to the nearer endpoint, computed without cancellation
            let e = (-2.0 * u.abs()).exp();
            let d = half * 2.0 * e / (1.0 + e);
            let p = if u < 0.0 { lo + d } else { hi - d };
            if p <= lo || p >= hi || w == 0.0 {
                continue;
            }
            sum += w * f(p);
        }
        sum * h * half
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            for &a in &[0.5, 1.0, 2.5, 7.0] {
                assert!(close(reg_inc_beta(x, a, 1.0), x.powf(a), 1e-12), "a={a} x={x}");
                assert!(close(reg_inc_beta(x, 1.0, a), 1.0 - (1.0 - x).powf(a), 1e-12));
            }
            let arcsine = 2.0 / std::f64::consts::PI * x.sqrt().asin();
            assert!(close(reg_inc_beta(x, 0.5, 0.5), arcsine, 1e-12));
        }
    }

    proptest! {
        #[test]
        fn incomplete_beta_matches_quadrature(x in 0.001f64..0.999, a in 0.5f64..12.0, b in 0.5f64..12.0) {
            let lnb = ln_beta(a, b);
            let q = tanh_sinh(|t| ((a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - lnb).exp(), 0.0, x);
            prop_assert!((reg_inc_beta(x, a, b) - q).abs() < 1e-10, "{} vs {}", reg_inc_beta(x, a, b), q);
        }

        #[test]
        fn symmetry_relation(x in 0.0f64..1.0, a in 0.1f64..30.0, b in 0.1f64..30.0) {
            let s = reg_inc_beta(x, a, b) + reg_inc_beta(1.0 - x, b, a);
            prop_assert!((s - 1.0).abs() < 1e-10);
        }

        #[test]
        fn scaling_leaves_f_unchanged(
            groups in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 2..8), 2..5),
            c in 0.01f64..1000.0,
        ) {
            let Ok(base) = anova_f(&groups) else { return Ok(()); };
            let scaled: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v * c).collect()).collect();
            let s = anova_f(&scaled).unwrap();
            prop_assert!(close(base.f, s.f, 1e-9) || (base.f < 1e-12 && s.f < 1e-12));
            prop_assert!((0.0..=1.0).contains(&s.p));
        }
    }

    #[test]
    fn hand_worked_example() {
        let r = anova_f(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(r.f, 8.0);
        assert_eq!(r.ss_between, 4.0);
        assert_eq!(r.ss_within, 1.0);
        assert_eq!((r.df_between, r.df_within), (1.0, 2.0));
        // F(1, 2) tail: I_{0.2}(1, 1/2) = 1 - sqrt(0.8)
        assert!(close(r.p, 1.0 - 0.8f64.sqrt(), 1e-12));
    }

    #[test]
    fn identical_groups() {
        let r = anova_f(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
        let r = anova_f(&[vec![5.0, 5.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!((r.f, r.p), (0.0, 1.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(anova_f(&[vec![1.0, 2.0]]).is_err());
        assert!(anova_f(&[vec![1.0], vec![2.0, 3.0]]).is_err());
        assert!(anova_f(&[vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn pairwise_covers_all_pairs() {
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![1.0, 3.0]];
        let pw = anova_pairwise(&g).unwrap();
        assert_eq!(
            pw.iter().map(|(i, j, _)| (*i, *j)).collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        assert_eq!(pw[0].2.f, 8.0);
    }
}
