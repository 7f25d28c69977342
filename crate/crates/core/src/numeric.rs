//! Scalar abstraction shared by the float and exact-rational code paths.

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

/// Exact rational number used by the rational arithmetic mode.
pub type Rational = BigRational;

/// Default tolerance for equality and integrality tests on reported values.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Field element the solvers are generic over.
///
/// `f64` carries small absolute tolerances; [`Rational`] is exact and all of
/// its tolerances are zero.
pub trait Scalar:
    Clone
    + fmt::Debug
    + fmt::Display
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Signed
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const EXACT: bool;

    /// Converts a finite float. For rationals the conversion is exact.
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;

    fn from_ratio(num: i64, den: i64) -> Self;

    /// Primal feasibility tolerance of the simplex engine.
    fn feas_tol() -> Self;
    /// Reduced-cost tolerance of the simplex engine.
    fn opt_tol() -> Self;
    /// Smallest admissible pivot magnitude.
    fn pivot_tol() -> Self;
    /// Magnitude below which computed entries are dropped.
    fn drop_tol() -> Self;

    fn is_negligible(&self) -> bool {
        self.abs() <= Self::drop_tol()
    }

    /// Smallest integer not below `self`.
    fn ceil(&self) -> Self;

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn feas_tol() -> Self {
        1e-9
    }

    fn opt_tol() -> Self {
        1e-9
    }

    fn pivot_tol() -> Self {
        1e-9
    }

    fn drop_tol() -> Self {
        1e-13
    }

    fn ceil(&self) -> Self {
        f64::ceil(*self)
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_f64(v: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(v).expect("finite value required for exact conversion")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            if self.is_negative() {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        })
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn feas_tol() -> Self {
        Self::zero()
    }

    fn opt_tol() -> Self {
        Self::zero()
    }

    fn pivot_tol() -> Self {
        Self::zero()
    }

    fn drop_tol() -> Self {
        Self::zero()
    }

    fn is_negligible(&self) -> bool {
        self.is_zero()
    }

    fn ceil(&self) -> Self {
        BigRational::ceil(self)
    }
}

/// Compares two scalars with the given absolute tolerance.
pub fn approx_eq<S: Scalar>(a: &S, b: &S, tol: &S) -> bool {
    (a.clone() - b.clone()).abs() <= *tol
}

/// Formats a float with 17 significant digits in the style of C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.16e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_fraction(format!("{:.*}", decimals, v))
    } else {
        let m = trim_fraction(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", m, sign, exp.abs())
    }
}

/// Formats a value rounded to nine decimals, trailing zeros removed.
pub fn format_short(v: f64) -> String {
    if !v.is_finite() {
        return format_g17(v);
    }
    let s = trim_fraction(format!("{:.9}", v));
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

fn trim_fraction(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c_printf() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(2.0), "2");
        assert_eq!(format_g17(-1.5), "-1.5");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(1.25e-7), "1.2499999999999999e-07");
        assert_eq!(format_g17(123456.0), "123456");
    }

    #[test]
    fn g17_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -7.25, 65025.0] {
            let s = format_g17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn short_format() {
        assert_eq!(format_short(1.6500000000000001), "1.65");
        assert_eq!(format_short(2.0), "2");
        assert_eq!(format_short(-0.0000000001), "0");
    }

    #[test]
    fn rational_conversion_is_exact() {
        let r = <Rational as Scalar>::from_f64(0.1);
        assert_eq!(Scalar::to_f64(&r), 0.1);
        assert!(r != Rational::from_ratio(1, 10));
    }
}
