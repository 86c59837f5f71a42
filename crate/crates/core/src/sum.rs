//! Compensated accumulation for precision sums.
//!
//! AP-style metrics sum many rationals `tp / (tp + fp)` and divide by `|X|`.
//! Each term is carried as a double-double (value plus exact rounding
//! residual), so the final quotient is the correctly rounded result for any
//! realistic input size.

/// Double-double accumulator of rational terms.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RatioSum {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl RatioSum {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    /// Adds `num / den` (den > 0).
    pub(crate) fn add_ratio(&mut self, num: f64, den: f64) {
        let q = num / den;
        // residual of the division, exact through fma
        let r = (-q).mul_add(den, num) / den;
        self.add_dd(q, r);
    }

    pub(crate) fn add(&mut self, x: f64) {
        self.add_dd(x, 0.0);
    }

    fn add_dd(&mut self, hi: f64, lo: f64) {
        let (s, e) = two_sum(self.hi, hi);
        let e = e + self.lo + lo;
        let (s, e) = two_sum(s, e);
        self.hi = s;
        self.lo = e;
    }

    /// Returns the accumulated sum divided by `den`.
    pub(crate) fn div(self, den: f64) -> f64 {
        let q = self.hi / den;
        let rem = (-q).mul_add(den, self.hi) + self.lo;
        q + rem / den
    }

    #[cfg(test)]
    pub(crate) fn value(self) -> f64 {
        self.hi + self.lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_sixths_is_correctly_rounded() {
        let mut s = RatioSum::new();
        s.add_ratio(1.0, 1.0);
        s.add_ratio(2.0, 3.0);
        assert_eq!(s.div(2.0), 5.0 / 6.0);
    }

    #[test]
    fn plain_sum() {
        let mut s = RatioSum::new();
        for _ in 0..3 {
            s.add(1.0);
        }
        assert_eq!(s.div(10.0), 0.3);
        assert_eq!(s.value(), 3.0);
    }

    #[test]
    fn tenths_accumulate_exactly() {
        let mut s = RatioSum::new();
        for _ in 0..10 {
            s.add_ratio(1.0, 10.0);
        }
        assert_eq!(s.value(), 1.0);
    }
}
