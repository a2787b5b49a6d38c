//! Exact decimal arithmetic for reconciliation proofs.
//!
//! Amounts enter as `f64` parsed from decimal text. Their shortest
//! round-trip representation is the decimal the user wrote, so converting
//! through that string recovers the exact value without binary noise.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use std::str::FromStr;

/// Exact rational amount; always a terminating decimal when built from
/// decimal text.
pub type Exact = BigRational;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseExactError(pub String);

impl fmt::Display for ParseExactError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not a decimal number: {:?}", self.0)
    }
}

impl std::error::Error for ParseExactError {}

/// Parses plain decimal text (`-12.345`, `7`, `1e-3`).
pub fn parse_decimal(s: &str) -> Result<Exact, ParseExactError> {
    let err = || ParseExactError(s.to_string());
    let s = s.trim();
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], i64::from_str(&s[i + 1..]).map_err(|_| err())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let all: String = format!("{int_part}{frac_part}");
    let numer = BigInt::from_str(if all.is_empty() { "0" } else { &all }).map_err(|_| err())?;
    let scale = frac_part.len() as i64 - exp;
    let ten = BigInt::from(10u32);
    let value = if scale >= 0 {
        BigRational::new(numer, num_traits::pow(ten, scale as usize))
    } else {
        BigRational::from_integer(numer * num_traits::pow(ten, (-scale) as usize))
    };
    Ok(if neg { -value } else { value })
}

/// Exact value of the decimal that `x` prints as.
pub fn from_f64(x: f64) -> Exact {
    assert!(x.is_finite(), "non-finite amount");
    parse_decimal(&format!("{x}")).expect("f64 display is decimal")
}

pub fn to_f64(x: &Exact) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Renders a terminating rational as plain decimal text. Non-terminating
/// values fall back to `p/q`.
pub fn to_decimal_string(x: &Exact) -> String {
    let den = x.denom();
    let ten = BigInt::from(10u32);
    let mut pow = BigInt::one();
    for k in 0..=400usize {
        if (&pow % den).is_zero() {
            let scaled = x.numer() * (&pow / den);
            let neg = scaled.is_negative();
            let digits = scaled.abs().to_string();
            if k == 0 {
                return format!("{}{}", if neg { "-" } else { "" }, digits);
            }
            let padded = format!("{:0>width$}", digits, width = k + 1);
            let (i, f) = padded.split_at(padded.len() - k);
            let f = f.trim_end_matches('0');
            let body = if f.is_empty() { i.to_string() } else { format!("{i}.{f}") };
            return format!("{}{}", if neg { "-" } else { "" }, body);
        }
        pow *= &ten;
    }
    format!("{}/{}", x.numer(), x.denom())
}
