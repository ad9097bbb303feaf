//! Small numerical helpers shared across modules.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Merge another partial sum, keeping both compensation terms.
    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut s = NeumaierSum::new();
    for x in xs {
        s.add(x);
    }
    s.value()
}

/// Treated count for a block: `p * m` rounded half to even.
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

/// Quantile of Student's t with `df` degrees of freedom (`df = inf` gives the normal).
///
/// Starts from the normal quantile with a Cornish-Fisher correction, brackets the
/// root, then alternates Newton steps on the t distribution function with
/// bisection fallback until the bracket is below 1e-13 relative.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must be in (0,1)");
    assert!(df > 0.0, "degrees of freedom must be positive");
    if df.is_infinite() || df > 1e10 {
        return normal_quantile(p);
    }
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    let z = normal_quantile(p);
    let g1 = (z.powi(3) + z) / 4.0;
    let g2 = (5.0 * z.powi(5) + 16.0 * z.powi(3) + 3.0 * z) / 96.0;
    let mut x = z + g1 / df + g2 / (df * df);
    let (mut lo, mut hi) = (0.0_f64, x.max(1.0));
    while dist.cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = dist.cdf(x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dist.pdf(x);
        let mut next = x - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-14 * x.abs().max(1.0) || (hi - lo) <= 1e-13 * hi {
            return next;
        }
        x = next;
    }
    x
}

/// One-sample Kolmogorov-Smirnov distance between `xs` and the standard normal.
pub fn ks_normal(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = normal_cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Sample variance with an `n - 1` divisor; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = compensated_sum(xs.iter().copied()) / xs.len() as f64;
    compensated_sum(xs.iter().map(|x| (x - mean) * (x - mean))) / (xs.len() as f64 - 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i * 7919) % 1009) as f64 * 1e-3 - 0.3)
            .collect();
        let mut a = NeumaierSum::new();
        let mut b = NeumaierSum::new();
        for x in &xs[..500] {
            a.add(*x);
        }
        for x in &xs[500..] {
            b.add(*x);
        }
        a.merge(&b);
        assert!((a.value() - compensated_sum(xs.iter().copied())).abs() < 1e-14);
    }

    #[test]
    fn ties_round_to_even() {
        assert_eq!(round_half_even(2.5), 2.0);
        assert_eq!(round_half_even(3.5), 4.0);
        assert_eq!(round_half_even(0.03), 0.0);
        assert_eq!(round_half_even(6.0), 6.0);
    }

    #[test]
    fn t_quantiles_match_tables() {
        // Standard t-table values.
        assert!((t_quantile(0.975, 1.0) - 12.706204736432095).abs() < 1e-8);
        assert!((t_quantile(0.975, 2.0) - 4.302652729696142).abs() < 1e-8);
        assert!((t_quantile(0.975, 10.0) - 2.2281388519649385).abs() < 1e-8);
        assert!((t_quantile(0.995, 30.0) - 2.7499956535670305).abs() < 1e-8);
        assert!((t_quantile(0.975, f64::INFINITY) - 1.959963984540054).abs() < 1e-9);
        assert!((t_quantile(0.025, 5.0) + 2.570581835636314).abs() < 1e-8);
        // Closed form for two degrees of freedom: t = (2p-1) / sqrt(2p(1-p)).
        for &p in &[0.6f64, 0.9, 0.999, 0.99999] {
            let exact = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
            assert!((t_quantile(p, 2.0) - exact).abs() < 1e-8 * exact.max(1.0));
        }
        // Cauchy closed form for one degree of freedom.
        for &p in &[0.7f64, 0.95, 0.9999] {
            let exact = (std::f64::consts::PI * (p - 0.5)).tan();
            assert!((t_quantile(p, 1.0) - exact).abs() < 1e-8 * exact.max(1.0));
        }
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| normal_quantile((i as f64 + 0.5) / n as f64))
            .collect();
        assert!(
            (ks_normal(&xs) - 0.5 / n as f64).abs() < 1e-9,
            "{}",
            ks_normal(&xs)
        );
    }
}
