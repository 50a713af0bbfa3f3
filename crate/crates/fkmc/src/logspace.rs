//! Scalar log-space helpers shared by the estimator and the exact recursions.

/// log(Σ exp(xs)) with max shift. Empty input and all-(-inf) input both give -inf.
///
/// When every entry equals the maximum m, the result is m + ln(k) for the exact
/// integer count k; callers relying on flat-weight exactness subtract the same
/// ln(k) and get m back bit-for-bit.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // all -inf (or empty): the sum is 0, or m = +inf propagates
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// A real number carried as sign * exp(log_abs). Zero is (0, -inf).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub fn zero() -> Self {
        SignedLog { sign: 0, log_abs: f64::NEG_INFINITY }
    }

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self::zero()
        } else {
            SignedLog { sign: if v > 0.0 { 1 } else { -1 }, log_abs: v.abs().ln() }
        }
    }

    /// Signed value from separate positive/negative log-mass accumulators.
    /// log_pos = log(Σ positive part), log_neg = log(Σ negative part).
    pub fn from_pos_neg(log_pos: f64, log_neg: f64) -> Self {
        if log_pos == f64::NEG_INFINITY && log_neg == f64::NEG_INFINITY {
            return Self::zero();
        }
        if log_neg == f64::NEG_INFINITY {
            return SignedLog { sign: 1, log_abs: log_pos };
        }
        if log_pos == f64::NEG_INFINITY {
            return SignedLog { sign: -1, log_abs: log_neg };
        }
        // log|e^p - e^n| = max + log|e^{p-max} - e^{n-max}|
        let m = log_pos.max(log_neg);
        let diff = (log_pos - m).exp() - (log_neg - m).exp();
        if diff == 0.0 {
            Self::zero()
        } else {
            SignedLog { sign: if diff > 0.0 { 1 } else { -1 }, log_abs: m + diff.abs().ln() }
        }
    }

    pub fn value(&self) -> f64 {
        self.sign as f64 * self.log_abs.exp()
    }

    /// Shift the magnitude by a log factor (multiply by e^shift).
    pub fn scaled(self, shift: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            SignedLog { sign: self.sign, log_abs: self.log_abs + shift }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct_sum() {
        let xs = [0.3f64, -1.2, 2.0, 0.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum();
        assert!((log_sum_exp(&xs) - direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn lse_empty_and_all_neg_inf() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 4]), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_flat_input_is_exact() {
        // all entries equal u: result must be exactly u + ln(n)
        for n in [1usize, 3, 100] {
            let u = -2.5;
            let xs = vec![u; n];
            let got = log_sum_exp(&xs);
            assert_eq!(got, u + (n as f64).ln());
        }
    }

    #[test]
    fn lse_huge_magnitudes() {
        // would overflow/underflow in linear space
        let xs = [-1000.0, -1000.0];
        assert!((log_sum_exp(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let ys = [700.0, 710.0];
        let expect = 710.0 + (1.0 + (-10.0f64).exp()).ln();
        assert!((log_sum_exp(&ys) - expect).abs() < 1e-12);
    }

    #[test]
    fn signed_log_roundtrip() {
        for v in [3.25, -0.7, 0.0, 1e-300, -1e300] {
            let s = SignedLog::from_value(v);
            let back = s.value();
            if v == 0.0 {
                assert_eq!(s.sign, 0);
                assert_eq!(back, 0.0);
            } else {
                // exp amplifies the ln rounding by |ln v|, so ~1e-13 at 1e±300
                assert!((back - v).abs() <= v.abs() * 1e-12);
            }
        }
    }

    #[test]
    fn signed_log_pos_neg_cancellation() {
        let s = SignedLog::from_pos_neg(2.0f64.ln(), 3.0f64.ln());
        assert_eq!(s.sign, -1);
        assert!((s.value() + 1.0).abs() < 1e-14);
        let exact = SignedLog::from_pos_neg(1.5, 1.5);
        assert_eq!(exact.sign, 0);
    }
}
