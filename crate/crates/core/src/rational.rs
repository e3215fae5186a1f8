//! Exact rationals, extended reals and saturating bounds.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn frac(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `12`, `-3.25`, `1/3` or `-7/2`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return None;
        }
        return Some(n / d);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    if body.is_empty() {
        return None;
    }
    let (whole, fraction) = match body.split_once('.') {
        Some((w, f)) => (w, f),
        None => (body, ""),
    };
    if whole.is_empty() && fraction.is_empty() {
        return None;
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !fraction.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{whole}{fraction}");
    let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let denom = num_traits::pow(BigInt::from(10), fraction.len());
    let r = Rational::new(numer, denom);
    Some(if neg { -r } else { r })
}

/// Canonical text: terminating decimals as decimals, everything else as `p/q`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    let mut d = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0usize;
    let mut fives = 0usize;
    while d.is_multiple_of(&two) {
        d /= &two;
        twos += 1;
    }
    while d.is_multiple_of(&five) {
        d /= &five;
        fives += 1;
    }
    if !d.is_one() {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let places = twos.max(fives);
    let scaled = r * Rational::from_integer(num_traits::pow(BigInt::from(10), places));
    let n = scaled.to_integer();
    let neg = n.is_negative();
    let digits = n.abs().to_string();
    let digits = format!("{:0>width$}", digits, width = places + 1);
    let (w, f) = digits.split_at(digits.len() - places);
    format!("{}{}.{}", if neg { "-" } else { "" }, w, f)
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

pub fn ceil_div(a: &Rational, b: &Rational) -> Rational {
    (a / b).ceil()
}

pub fn floor_div(a: &Rational, b: &Rational) -> Rational {
    (a / b).floor()
}

/// A rational extended with ±∞.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ext {
    NegInf,
    Fin(Rational),
    PosInf,
}

impl Ext {
    pub fn zero() -> Self {
        Ext::Fin(Rational::zero())
    }

    pub fn finite(&self) -> Option<&Rational> {
        match self {
            Ext::Fin(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Ext::Fin(r) if r.is_zero())
    }

    fn sign(&self) -> Ordering {
        match self {
            Ext::NegInf => Ordering::Less,
            Ext::PosInf => Ordering::Greater,
            Ext::Fin(r) => r.cmp(&Rational::zero()),
        }
    }

    pub fn neg(&self) -> Ext {
        match self {
            Ext::NegInf => Ext::PosInf,
            Ext::PosInf => Ext::NegInf,
            Ext::Fin(r) => Ext::Fin(-r),
        }
    }

    /// `None` for ∞ + (−∞).
    pub fn add(&self, o: &Ext) -> Option<Ext> {
        match (self, o) {
            (Ext::Fin(a), Ext::Fin(b)) => Some(Ext::Fin(a + b)),
            (Ext::PosInf, Ext::NegInf) | (Ext::NegInf, Ext::PosInf) => None,
            (Ext::PosInf, _) | (_, Ext::PosInf) => Some(Ext::PosInf),
            _ => Some(Ext::NegInf),
        }
    }

    /// Uses 0·∞ = 0.
    pub fn mul(&self, o: &Ext) -> Ext {
        match (self, o) {
            (Ext::Fin(a), Ext::Fin(b)) => Ext::Fin(a * b),
            _ if self.is_zero() || o.is_zero() => Ext::zero(),
            _ => {
                if (self.sign() == Ordering::Less) == (o.sign() == Ordering::Less) {
                    Ext::PosInf
                } else {
                    Ext::NegInf
                }
            }
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Ext::NegInf => f64::NEG_INFINITY,
            Ext::PosInf => f64::INFINITY,
            Ext::Fin(r) => to_f64(r),
        }
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ext {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Ext::Fin(a), Ext::Fin(b)) => a.cmp(b),
            (Ext::NegInf, Ext::NegInf) | (Ext::PosInf, Ext::PosInf) => Ordering::Equal,
            (Ext::NegInf, _) | (_, Ext::PosInf) => Ordering::Less,
            _ => Ordering::Greater,
        }
    }
}

impl fmt::Display for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::NegInf => write!(f, "-inf"),
            Ext::PosInf => write!(f, "inf"),
            Ext::Fin(r) => write!(f, "{}", format_rational(r)),
        }
    }
}

/// A non-negative rational or ∞; arithmetic saturates.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Bound {
    Fin(Rational),
    Inf,
}

impl Bound {
    pub fn zero() -> Self {
        Bound::Fin(Rational::zero())
    }

    pub fn of(n: i64) -> Self {
        Bound::Fin(int(n))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Fin(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Bound::Fin(r) if r.is_zero())
    }

    pub fn finite(&self) -> Option<&Rational> {
        match self {
            Bound::Fin(r) => Some(r),
            Bound::Inf => None,
        }
    }

    pub fn add(&self, o: &Bound) -> Bound {
        match (self, o) {
            (Bound::Fin(a), Bound::Fin(b)) => Bound::Fin(a + b),
            _ => Bound::Inf,
        }
    }

    /// 0·∞ = 0.
    pub fn mul(&self, o: &Bound) -> Bound {
        match (self, o) {
            (Bound::Fin(a), Bound::Fin(b)) => Bound::Fin(a * b),
            _ if self.is_zero() || o.is_zero() => Bound::zero(),
            _ => Bound::Inf,
        }
    }

    pub fn scale(&self, c: &Rational) -> Bound {
        self.mul(&Bound::Fin(c.abs()))
    }

    pub fn min_of(&self, o: &Bound) -> Bound {
        if self <= o {
            self.clone()
        } else {
            o.clone()
        }
    }

    pub fn max_of(&self, o: &Bound) -> Bound {
        if self >= o {
            self.clone()
        } else {
            o.clone()
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Bound::Fin(r) => to_f64(r),
            Bound::Inf => f64::INFINITY,
        }
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Bound::Fin(a), Bound::Fin(b)) => a.cmp(b),
            (Bound::Inf, Bound::Inf) => Ordering::Equal,
            (Bound::Inf, _) => Ordering::Greater,
            _ => Ordering::Less,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Fin(r) => write!(f, "{}", format_rational(r)),
            Bound::Inf => write!(f, "inf"),
        }
    }
}

/// Closed interval `[lo, hi]` over the extended reals.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ValueRange {
    pub lo: Ext,
    pub hi: Ext,
}

impl ValueRange {
    pub fn new(lo: Ext, hi: Ext) -> Self {
        debug_assert!(lo <= hi);
        ValueRange { lo, hi }
    }

    pub fn finite(lo: Rational, hi: Rational) -> Self {
        ValueRange::new(Ext::Fin(lo), Ext::Fin(hi))
    }

    pub fn point(c: Rational) -> Self {
        ValueRange::finite(c.clone(), c)
    }

    pub fn full() -> Self {
        ValueRange { lo: Ext::NegInf, hi: Ext::PosInf }
    }

    pub fn non_negative() -> Self {
        ValueRange { lo: Ext::zero(), hi: Ext::PosInf }
    }

    pub fn as_point(&self) -> Option<&Rational> {
        match (&self.lo, &self.hi) {
            (Ext::Fin(a), Ext::Fin(b)) if a == b => Some(a),
            _ => None,
        }
    }

    pub fn width(&self) -> Bound {
        match (&self.lo, &self.hi) {
            (Ext::Fin(a), Ext::Fin(b)) => Bound::Fin(b - a),
            _ => Bound::Inf,
        }
    }

    pub fn hull(&self, o: &ValueRange) -> ValueRange {
        ValueRange { lo: self.lo.clone().min(o.lo.clone()), hi: self.hi.clone().max(o.hi.clone()) }
    }

    pub fn add(&self, o: &ValueRange) -> ValueRange {
        let lo = self.lo.add(&o.lo).unwrap_or(Ext::NegInf);
        let hi = self.hi.add(&o.hi).unwrap_or(Ext::PosInf);
        ValueRange { lo, hi }
    }

    pub fn neg(&self) -> ValueRange {
        ValueRange { lo: self.hi.neg(), hi: self.lo.neg() }
    }

    pub fn sub(&self, o: &ValueRange) -> ValueRange {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &ValueRange) -> ValueRange {
        let corners = [self.lo.mul(&o.lo), self.lo.mul(&o.hi), self.hi.mul(&o.lo), self.hi.mul(&o.hi)];
        let lo = corners.iter().min().cloned().unwrap_or(Ext::NegInf);
        let hi = corners.iter().max().cloned().unwrap_or(Ext::PosInf);
        ValueRange { lo, hi }
    }

    /// Corner quotients when the divisor range excludes zero, else unbounded.
    pub fn div(&self, o: &ValueRange) -> ValueRange {
        let (Some(a), Some(b)) = (o.lo.finite(), o.hi.finite()) else {
            return ValueRange::full();
        };
        if (a.is_positive() && b.is_positive()) || (a.is_negative() && b.is_negative()) {
            let inv = ValueRange::new(Ext::Fin(b.recip()), Ext::Fin(a.recip()));
            self.mul(&inv)
        } else {
            ValueRange::full()
        }
    }

    pub fn min_with(&self, o: &ValueRange) -> ValueRange {
        ValueRange { lo: self.lo.clone().min(o.lo.clone()), hi: self.hi.clone().min(o.hi.clone()) }
    }

    pub fn max_with(&self, o: &ValueRange) -> ValueRange {
        ValueRange { lo: self.lo.clone().max(o.lo.clone()), hi: self.hi.clone().max(o.hi.clone()) }
    }

    /// Float membership with a small relative slack for rounding in the evaluator.
    pub fn contains_f64(&self, v: f64) -> bool {
        let lo = self.lo.to_f64();
        let hi = self.hi.to_f64();
        let slack = 1e-9 * (1.0 + v.abs());
        v >= lo - slack && v <= hi + slack
    }
}

impl fmt::Display for ValueRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}
