//! Paired two-sided t-test with an exact Student-t tail.

use crate::error::{Error, Result};

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
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
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
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

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for `dof` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    /// Set when the differences have zero variance but nonzero mean; `t` is
    /// then infinite and `p` is 0.
    pub degenerate: bool,
}

/// Paired test on `d = a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    if d.iter().all(|v| *v == d[0]) {
        return Ok(if d[0] == 0.0 {
            TTest { t: 0.0, p: 1.0, degenerate: false }
        } else {
            TTest { t: f64::INFINITY.copysign(d[0]), p: 0.0, degenerate: true }
        });
    }
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, nf - 1.0),
        degenerate: false,
    })
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `values` and the uniform distribution on `[0, 1]`.
pub fn ks_distance_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, p)| (p - i as f64 / m).max((i + 1) as f64 / m - p))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use rand_pcg::Pcg64;

    use super::*;

    /// Two-sided tail by Simpson integration of the unnormalized density,
    /// after `x = sqrt(dof) tan(theta)` maps it to `cos^(dof-1)` on
    /// `[0, pi/2]`.
    fn integrated_p(t: f64, dof: f64) -> f64 {
        let f = |th: f64| th.cos().powf(dof - 1.0);
        let simpson = |lo: f64, hi: f64| {
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        let theta_t = (t.abs() / dof.sqrt()).atan();
        simpson(theta_t, half_pi) / simpson(0.0, half_pi)
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(0.25) - 1.288_022_524_698_077_5).abs() < 1e-13);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        for x in [0.1, 0.5, 0.9] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((regularized_incomplete_beta(3.0, 1.0, x) - x.powi(3)).abs() < 1e-14);
        }
        // One degree of freedom is the Cauchy tail: 1 - 2 atan(t) / pi.
        for t in [0.3, 1.0, 7.0] {
            let cauchy = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_two_sided_p(t, 1.0) - cauchy).abs() < 1e-13);
        }
    }

    #[test]
    fn equal_samples() {
        let a = [1.0, 2.5, 3.0];
        assert_eq!(paired_t_test(&a, &a).unwrap(), TTest { t: 0.0, p: 1.0, degenerate: false });
    }

    #[test]
    fn constant_shift_is_degenerate() {
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t > 0.0);
    }

    #[test]
    fn matches_numerical_integration() {
        let a = [2.1, 1.9, 2.2, 2.0, 1.8];
        let b = [1.0, 1.1, 0.9, 1.2, 1.0];
        let r = paired_t_test(&a, &b).unwrap();
        // Independent t: d = [1.1, 0.8, 1.3, 0.8, 0.8], mean 0.96,
        // sample variance 0.053.
        let t_ref = 0.96 / (0.053f64.sqrt() / 5f64.sqrt());
        assert!((r.t - t_ref).abs() < 1e-12 * t_ref, "{} vs {t_ref}", r.t);
        let p_ref = integrated_p(t_ref, 4.0);
        assert!((r.p - p_ref).abs() < 1e-9 * p_ref.max(1e-3), "{} vs {p_ref}", r.p);
        for (t, dof) in [(0.5, 3.0), (2.0, 9.0), (4.0, 19.0), (1.0, 2.5)] {
            let (p, q) = (student_t_two_sided_p(t, dof), integrated_p(t, dof));
            assert!((p - q).abs() < 1e-9, "t {t} dof {dof}: {p} vs {q}");
        }
    }

    #[test]
    fn antisymmetric_in_arguments() {
        let a = [0.3, 0.1, 0.45, 0.2];
        let b = [0.25, 0.2, 0.3, 0.1];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[2.0]).is_err());
    }

    fn null_ks_distance(trials: usize, n: usize, seed: u64) -> f64 {
        let mut rng = Pcg64::seed_from_u64(seed);
        let zeros = vec![0.0; n];
        let ps: Vec<f64> = (0..trials)
            .map(|_| {
                let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                paired_t_test(&d, &zeros).unwrap().p
            })
            .collect();
        ks_distance_uniform(&ps)
    }

    #[test]
    fn ks_distance_examples() {
        assert!((ks_distance_uniform(&[0.5]) - 0.5).abs() < 1e-15);
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_distance_uniform(&grid) - 0.005).abs() < 1e-12);
        assert!((ks_distance_uniform(&[0.0; 10]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_p_values_are_uniform() {
        let ks = null_ks_distance(1000, 10, 2024);
        assert!(ks < 0.05, "KS distance {ks}");
    }
}
