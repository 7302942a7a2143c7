//! Signed-log arithmetic: every quantity is carried as a sign together with
//! the natural log of its magnitude, so values like e^{2m²} stay exact-ish
//! far past the f64 overflow point.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A real number stored as `sign * exp(ln_abs)`.
///
/// `sign == 0` encodes exact zero (`ln_abs` is then `-inf` by convention).
/// `ln_abs == +inf` with a nonzero sign encodes a signed infinity.
#[derive(Clone, Copy, Debug)]
pub struct SignedLog {
    pub sign: i8,
    pub ln_abs: f64,
}

// JSON has no +/-inf literals, so the log field serializes as a string in
// the non-finite cases.
impl Serialize for SignedLog {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("SignedLog", 2)?;
        s.serialize_field("sign", &self.sign)?;
        if self.ln_abs.is_finite() {
            s.serialize_field("ln_abs", &self.ln_abs)?;
        } else if self.ln_abs == f64::INFINITY {
            s.serialize_field("ln_abs", "inf")?;
        } else if self.ln_abs == f64::NEG_INFINITY {
            s.serialize_field("ln_abs", "-inf")?;
        } else {
            s.serialize_field("ln_abs", "nan")?;
        }
        s.end()
    }
}

impl<'de> Deserialize<'de> for SignedLog {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum LnField {
            Num(f64),
            Tag(String),
        }
        #[derive(Deserialize)]
        struct Raw {
            sign: i8,
            ln_abs: LnField,
        }
        let raw = Raw::deserialize(deserializer)?;
        let ln_abs = match raw.ln_abs {
            LnField::Num(v) => v,
            LnField::Tag(t) => match t.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                _ => f64::NAN,
            },
        };
        Ok(SignedLog { sign: raw.sign, ln_abs })
    }
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog { sign: 0, ln_abs: f64::NEG_INFINITY };
    pub const ONE: SignedLog = SignedLog { sign: 1, ln_abs: 0.0 };

    pub fn new(sign: i8, ln_abs: f64) -> Self {
        if sign == 0 || ln_abs == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        SignedLog { sign: sign.signum(), ln_abs }
    }

    /// Positive value from its natural log.
    pub fn from_ln(ln_abs: f64) -> Self {
        Self::new(1, ln_abs)
    }

    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else if v.is_nan() {
            SignedLog { sign: 1, ln_abs: f64::NAN }
        } else {
            SignedLog { sign: if v > 0.0 { 1 } else { -1 }, ln_abs: v.abs().ln() }
        }
    }

    /// Converts back to f64; overflows saturate to ±inf, underflows to 0.
    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => (s as f64) * self.ln_abs.exp(),
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn is_nan(self) -> bool {
        self.ln_abs.is_nan()
    }

    pub fn is_infinite(self) -> bool {
        self.sign != 0 && self.ln_abs == f64::INFINITY
    }

    pub fn abs(self) -> Self {
        Self::new(self.sign.abs(), self.ln_abs)
    }

    /// |self|^p for a real exponent; caller is responsible for sign handling.
    pub fn abs_powf(self, p: f64) -> Self {
        if self.sign == 0 {
            if p == 0.0 { Self::ONE } else { Self::ZERO }
        } else {
            Self::from_ln(p * self.ln_abs)
        }
    }

    /// self^k for an integer exponent, with (-x)^odd negative.
    pub fn powi(self, k: i64) -> Self {
        if k == 0 {
            return Self::ONE;
        }
        if self.sign == 0 {
            return Self::ZERO;
        }
        let sign = if self.sign < 0 && k % 2 != 0 { -1 } else { 1 };
        Self::new(sign, k as f64 * self.ln_abs)
    }

    pub fn recip(self) -> Self {
        match self.sign {
            0 => SignedLog { sign: 1, ln_abs: f64::INFINITY },
            s => Self::new(s, -self.ln_abs),
        }
    }

    pub fn sqrt(self) -> Self {
        match self.sign {
            0 => Self::ZERO,
            1 => Self::from_ln(0.5 * self.ln_abs),
            _ => SignedLog { sign: 1, ln_abs: f64::NAN },
        }
    }

    /// Natural log of a positive value; zero maps to -inf, negatives per the
    /// extended-real ledger also map to -inf.
    pub fn ln_extended(self) -> f64 {
        if self.sign <= 0 {
            f64::NEG_INFINITY
        } else {
            self.ln_abs
        }
    }

    /// Magnitude comparison, ignoring sign.
    pub fn abs_cmp(self, other: Self) -> Ordering {
        match (self.sign == 0, other.sign == 0) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self.ln_abs.partial_cmp(&other.ln_abs).unwrap_or(Ordering::Equal),
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self.partial_cmp(&other) == Some(Ordering::Less) { other } else { self }
    }

    pub fn min(self, other: Self) -> Self {
        if self.partial_cmp(&other) == Some(Ordering::Greater) { other } else { self }
    }

    /// Relative difference |a - b| / max(|a|, |b|); zero args compare exactly.
    pub fn rel_diff(self, other: Self) -> f64 {
        if self.is_zero() && other.is_zero() {
            return 0.0;
        }
        let num = (self - other).abs();
        let den = self.abs().max(other.abs());
        (num / den).to_f64()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

// log|e^a - e^b| for a >= b; exact zero when a == b.
fn log_sub_exp(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b);
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == b {
        return f64::NEG_INFINITY;
    }
    if a == f64::INFINITY {
        return f64::INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

impl Add for SignedLog {
    type Output = SignedLog;

    fn add(self, rhs: Self) -> Self {
        if self.sign == 0 {
            return rhs;
        }
        if rhs.sign == 0 {
            return self;
        }
        if self.sign == rhs.sign {
            SignedLog::new(self.sign, log_add_exp(self.ln_abs, rhs.ln_abs))
        } else {
            // opposite signs: the larger magnitude wins
            match self.abs_cmp(rhs) {
                Ordering::Equal => {
                    if self.ln_abs == f64::INFINITY {
                        // inf - inf
                        SignedLog { sign: 1, ln_abs: f64::NAN }
                    } else {
                        SignedLog::ZERO
                    }
                }
                Ordering::Greater => SignedLog::new(self.sign, log_sub_exp(self.ln_abs, rhs.ln_abs)),
                Ordering::Less => SignedLog::new(rhs.sign, log_sub_exp(rhs.ln_abs, self.ln_abs)),
            }
        }
    }
}

impl Sub for SignedLog {
    type Output = SignedLog;

    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for SignedLog {
    type Output = SignedLog;

    fn neg(self) -> Self {
        SignedLog { sign: -self.sign, ln_abs: self.ln_abs }
    }
}

impl Mul for SignedLog {
    type Output = SignedLog;

    fn mul(self, rhs: Self) -> Self {
        // 0 * inf = 0: the measure-theoretic convention the tail integrands need
        if self.sign == 0 || rhs.sign == 0 {
            return SignedLog::ZERO;
        }
        SignedLog::new(self.sign * rhs.sign, self.ln_abs + rhs.ln_abs)
    }
}

impl Div for SignedLog {
    type Output = SignedLog;

    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl PartialEq for SignedLog {
    fn eq(&self, other: &Self) -> bool {
        self.partial_cmp(other) == Some(Ordering::Equal)
    }
}

impl PartialOrd for SignedLog {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.is_nan() || other.is_nan() {
            return None;
        }
        Some(match (self.sign, other.sign) {
            (0, 0) => Ordering::Equal,
            (a, b) if a < b => Ordering::Less,
            (a, b) if a > b => Ordering::Greater,
            (1, _) => self.ln_abs.partial_cmp(&other.ln_abs)?,
            _ => other.ln_abs.partial_cmp(&self.ln_abs)?,
        })
    }
}

/// Sum of a slice in signed-log form.
pub fn signed_log_sum(values: &[SignedLog]) -> SignedLog {
    // accumulate positives and negatives separately so that an exactly
    // symmetric input cancels to exact zero
    let mut pos = f64::NEG_INFINITY;
    let mut neg = f64::NEG_INFINITY;
    let mut nan = false;
    for v in values {
        if v.is_nan() {
            nan = true;
        } else if v.sign > 0 {
            pos = log_add_exp(pos, v.ln_abs);
        } else if v.sign < 0 {
            neg = log_add_exp(neg, v.ln_abs);
        }
    }
    if nan {
        return SignedLog { sign: 1, ln_abs: f64::NAN };
    }
    SignedLog::new(1, pos) + SignedLog::new(-1, neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_and_basic_ops() {
        let a = SignedLog::from_f64(3.5);
        let b = SignedLog::from_f64(-2.0);
        assert_relative_eq!((a + b).to_f64(), 1.5, max_relative = 1e-14);
        assert_relative_eq!((a * b).to_f64(), -7.0, max_relative = 1e-14);
        assert_relative_eq!((a / b).to_f64(), -1.75, max_relative = 1e-14);
        assert_relative_eq!((a - b).to_f64(), 5.5, max_relative = 1e-14);
        assert_eq!((a - a), SignedLog::ZERO);
    }

    #[test]
    fn huge_values_survive() {
        // e^2000 is far beyond f64 range
        let big = SignedLog::from_ln(2000.0);
        let prod = big * big;
        assert_eq!(prod.ln_abs, 4000.0);
        assert_eq!((prod / big).ln_abs, 2000.0);
        let sum = big + big;
        assert_relative_eq!(sum.ln_abs, 2000.0 + std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn zero_times_infinity_is_zero() {
        let inf = SignedLog { sign: 1, ln_abs: f64::INFINITY };
        assert!(inf.is_infinite());
        assert_eq!(SignedLog::ZERO * inf, SignedLog::ZERO);
        assert_eq!(inf * SignedLog::ZERO, SignedLog::ZERO);
    }

    #[test]
    fn powi_sign_rules() {
        let neg = SignedLog::from_f64(-2.0);
        assert_relative_eq!(neg.powi(3).to_f64(), -8.0, max_relative = 1e-14);
        assert_relative_eq!(neg.powi(2).to_f64(), 4.0, max_relative = 1e-14);
        assert_eq!(SignedLog::ZERO.powi(0), SignedLog::ONE);
    }

    #[test]
    fn symmetric_sum_cancels_exactly() {
        let xs = [
            SignedLog::from_f64(1.25),
            SignedLog::from_f64(-7.5),
            SignedLog::from_f64(7.5),
            SignedLog::from_f64(-1.25),
        ];
        assert!(signed_log_sum(&xs).is_zero());
    }

    proptest! {
        #[test]
        fn add_matches_f64(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let s = (SignedLog::from_f64(a) + SignedLog::from_f64(b)).to_f64();
            let expect = a + b;
            if expect == 0.0 {
                prop_assert!(s.abs() <= 1e-9 * (a.abs() + b.abs()));
            } else {
                prop_assert!((s - expect).abs() <= 1e-9 * expect.abs().max(1e-300) + 1e-12 * (a.abs() + b.abs()));
            }
        }

        #[test]
        fn mul_matches_f64(a in -1e100f64..1e100, b in -1e100f64..1e100) {
            let s = (SignedLog::from_f64(a) * SignedLog::from_f64(b)).to_f64();
            let expect = a * b;
            if expect == 0.0 {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - expect).abs() <= 1e-12 * expect.abs());
            }
        }

        #[test]
        fn ordering_matches_f64(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let (la, lb) = (SignedLog::from_f64(a), SignedLog::from_f64(b));
            if a < b {
                prop_assert!(la < lb || (a - b).abs() < 1e-300);
            } else if a > b {
                prop_assert!(la > lb || (a - b).abs() < 1e-300);
            }
        }
    }
}
