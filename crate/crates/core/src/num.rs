//! Scalar abstraction shared by the exact (rational) and float code paths.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::Error;

/// Arbitrary-precision rational used in exact mode.
pub type Rational = BigRational;

/// Denominator used when turning float weights (softmax agents) into exact probabilities.
const QUANTUM: i64 = 1_000_000;

/// Number type carrying probabilities and values.
///
/// `f64` is the fast path, [`Rational`] the exact one. Everything tolerance
/// dependent goes through [`Prob::eps`] and [`Prob::safe_tol`], which are zero
/// for exact arithmetic.
pub trait Prob:
    Clone
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Zero
    + One
    + Send
    + Sync
    + 'static
{
    /// Hashable/orderable identity used to bucket distributions.
    type Key: Ord + Clone + fmt::Debug + Send + Sync;

    const EXACT: bool;

    fn from_ratio(num: i64, den: i64) -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn key(&self) -> Self::Key;

    /// Comparison slack for decision boundaries and sums.
    fn eps() -> Self;
    /// Slack for the safe-action equality test.
    fn safe_tol() -> Self;

    fn parse(text: &str) -> Option<Self>;
    fn render(&self) -> String;

    /// Normalized probabilities proportional to non-negative weights.
    /// Exact mode rounds to a fixed grid while keeping the sum exactly 1.
    fn probs_from_weights(weights: &[f64]) -> Vec<Self>;

    /// Lower and upper bounds on the square root.
    fn sqrt_bounds(&self) -> (Self, Self);

    fn abs(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    /// `self ≤ other` up to [`Prob::eps`].
    fn le_eps(&self, other: &Self) -> bool {
        *self <= other.clone() + Self::eps()
    }

    fn close_to(&self, other: &Self, tol: &Self) -> bool {
        (self.clone() - other.clone()).abs() <= *tol
    }
}

impl Prob for f64 {
    type Key = i64;
    const EXACT: bool = false;

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn key(&self) -> i64 {
        libm::round(*self * 1e9) as i64
    }
    fn eps() -> Self {
        1e-9
    }
    fn safe_tol() -> Self {
        1e-6
    }
    fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let n: f64 = n.trim().parse().ok()?;
            let d: f64 = d.trim().parse().ok()?;
            if d == 0.0 {
                return None;
            }
            return Some(n / d);
        }
        let x: f64 = text.parse().ok()?;
        x.is_finite().then_some(x)
    }
    fn render(&self) -> String {
        self.to_string()
    }
    fn probs_from_weights(weights: &[f64]) -> Vec<Self> {
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }
    fn sqrt_bounds(&self) -> (Self, Self) {
        let r = libm::sqrt(*self);
        (r, r)
    }
}

impl Prob for Rational {
    type Key = Rational;
    const EXACT: bool = true;

    fn from_ratio(num: i64, den: i64) -> Self {
        Rational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_f64(x: f64) -> Self {
        Rational::from_float(x).unwrap_or_else(Rational::zero)
    }
    fn to_f64(&self) -> f64 {
        ratio_to_f64(self)
    }
    fn key(&self) -> Rational {
        self.clone()
    }
    fn eps() -> Self {
        Rational::zero()
    }
    fn safe_tol() -> Self {
        Rational::zero()
    }
    fn parse(text: &str) -> Option<Self> {
        parse_rational(text.trim())
    }
    fn render(&self) -> String {
        if self.denom().is_one() {
            self.numer().to_string()
        } else {
            alloc::format!("{}/{}", self.numer(), self.denom())
        }
    }
    fn probs_from_weights(weights: &[f64]) -> Vec<Self> {
        let total: f64 = weights.iter().sum();
        let scaled: Vec<f64> = weights.iter().map(|w| w / total * QUANTUM as f64).collect();
        let mut units: Vec<i64> = scaled.iter().map(|x| libm::floor(*x) as i64).collect();
        let mut missing = QUANTUM - units.iter().sum::<i64>();
        // largest remainder first, ties to the lower index
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - libm::floor(scaled[a]);
            let rb = scaled[b] - libm::floor(scaled[b]);
            rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let mut i = 0;
        while missing > 0 {
            units[order[i % order.len()]] += 1;
            missing -= 1;
            i += 1;
        }
        units.into_iter().map(|u| Rational::from_ratio(u, QUANTUM)).collect()
    }
    fn sqrt_bounds(&self) -> (Self, Self) {
        // sqrt(n/d) = sqrt(n*d)/d, evaluated on a 10^-12 grid
        let scale = BigInt::from(10u64).pow(12u32);
        let radicand = self.numer() * self.denom() * &scale * &scale;
        let lo = radicand.sqrt();
        let hi = if &lo * &lo == radicand { lo.clone() } else { &lo + 1 };
        let den = self.denom() * &scale;
        (Rational::new(lo, den.clone()), Rational::new(hi, den))
    }
}

fn ratio_to_f64(r: &Rational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    // huge numerator/denominator: shift both down before dividing
    let bits = r.denom().bits().max(r.numer().bits()) as i64 - 900;
    let shift = bits.max(0) as usize;
    let n = (r.numer() >> shift).to_f64().unwrap_or(0.0);
    let d = (r.denom() >> shift).to_f64().unwrap_or(1.0);
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

fn parse_rational(text: &str) -> Option<Rational> {
    if let Some((n, d)) = text.split_once('/') {
        let n = parse_rational(n.trim())?;
        let d = parse_rational(d.trim())?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut all = String::from(int_part);
    all.push_str(frac_part);
    let numer: BigInt = if all.is_empty() { BigInt::zero() } else { all.parse().ok()? };
    let ten = BigInt::from(10u32);
    let scale = exponent - frac_part.len() as i32;
    let value = if scale >= 0 {
        Rational::from_integer(numer * ten.pow(scale as u32))
    } else {
        Rational::new(numer, ten.pow((-scale) as u32))
    };
    Some(if neg { -value } else { value })
}

/// Numeric mode selected for a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NumericMode {
    Exact,
    Float { eps: f64 },
}

impl NumericMode {
    pub fn float(eps: f64) -> Result<Self, Error> {
        if eps > 0.0 && eps.is_finite() {
            Ok(NumericMode::Float { eps })
        } else {
            Err(Error::invalid("float mode needs a positive tolerance"))
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, NumericMode::Exact)
    }
}

impl Default for NumericMode {
    fn default() -> Self {
        NumericMode::Float { eps: 1e-9 }
    }
}

/// `Σ values`, starting from zero.
pub fn sum<T: Prob>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, x| acc + x)
}
