use std::fmt;

use super::SimRng;

/// A scalar distribution in base units (bytes or microseconds, decided by the caller).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Constant(f64),
    Uniform(f64, f64),
    Exponential(f64),
}

impl Dist {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Dist::Constant(v) if v.is_finite() && v >= 0.0 => Ok(()),
            Dist::Uniform(a, b) if a.is_finite() && b.is_finite() && 0.0 <= a && a <= b => Ok(()),
            Dist::Exponential(m) if m.is_finite() && m > 0.0 => Ok(()),
            other => Err(format!("invalid distribution {other}")),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant(v) => v,
            Dist::Uniform(a, b) => (a + b) / 2.0,
            Dist::Exponential(m) => m,
        }
    }

    /// One draw. Consumes exactly one 64-bit word of `rng` regardless of variant.
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let u = rng.next_f64();
        match *self {
            Dist::Constant(v) => v,
            Dist::Uniform(a, b) => a + (b - a) * u,
            // inverse CDF; 1 - u lies in (0, 1] so ln is finite
            Dist::Exponential(m) => -m * (1.0 - u).ln(),
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Constant(v) => write!(f, "constant({v})"),
            Dist::Uniform(a, b) => write!(f, "uniform({a},{b})"),
            Dist::Exponential(m) => write!(f, "exponential({m})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_degenerate_uniform() {
        let mut rng = SimRng::new(3);
        for _ in 0..100 {
            assert_eq!(Dist::Constant(1000.0).sample(&mut rng), 1000.0);
            assert_eq!(Dist::Uniform(250.0, 250.0).sample(&mut rng), 250.0);
        }
    }

    #[test]
    fn exponential_mean_within_two_percent() {
        let mut rng = SimRng::new(11);
        let d = Dist::Exponential(2000.0);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2000.0).abs() / 2000.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = SimRng::new(5);
        let d = Dist::Uniform(100.0, 200.0);
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            assert!((100.0..=200.0).contains(&x));
        }
    }

    #[test]
    fn each_draw_advances_exactly_once() {
        let mut a = SimRng::new(9);
        let mut b = SimRng::new(9);
        Dist::Constant(1.0).sample(&mut a);
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Dist::Uniform(5.0, 1.0).validate().is_err());
        assert!(Dist::Exponential(0.0).validate().is_err());
        assert!(Dist::Constant(-1.0).validate().is_err());
        assert!(Dist::Exponential(1.0).validate().is_ok());
    }
}
