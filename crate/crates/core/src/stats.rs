//! Descriptive statistics for replicate summaries.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sd(x: &[f64]) -> f64 {
    match x.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(x);
            let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (n - 1) as f64).sqrt()
        }
    }
}

/// Type-7 (linear interpolation) quantile.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// One-sample t test of mean zero: `(t, two-sided p)`.
///
/// With zero spread the statistic is 0 (p = 1) for a zero mean and infinite
/// (p = 0) otherwise.
pub fn t_test_zero(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n < 2 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(x);
    let se = sd(x) / (n as f64).sqrt();
    if se == 0.0 {
        return if m == 0.0 { (0.0, 1.0) } else { (m.signum() * f64::INFINITY, 0.0) };
    }
    let t = m / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    (t, 2.0 * dist.cdf(-t.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(sd(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(sd(&[0.0; 4]), 0.0);
    }

    #[test]
    fn type7_quantiles() {
        let x = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 0.25), 1.75);
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert_eq!(quantile(&x, 1.0), 4.0);
    }

    #[test]
    fn t_test_reference_value() {
        // mean 2, sd 1, n 3: t = 2 * sqrt(3); p from the t(2) distribution
        let (t, p) = t_test_zero(&[1.0, 2.0, 3.0]);
        assert!((t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // closed form for 2 df: p = 1 - t / sqrt(t^2 + 2)
        let expected = 1.0 - t / (t * t + 2.0).sqrt();
        assert!((p - expected).abs() < 1e-10);
    }

    #[test]
    fn t_test_degenerate() {
        assert_eq!(t_test_zero(&[0.0, 0.0]), (0.0, 1.0));
        assert_eq!(t_test_zero(&[1.0, 1.0]).1, 0.0);
    }
}
