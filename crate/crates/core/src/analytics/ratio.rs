use std::cmp::Ordering;
use std::fmt;

use serde::{Serialize, Serializer};

/// An exact non-negative fraction. A zero denominator reads as zero so that
/// empty rows are well defined. Equality and ordering are by value.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }

    /// `round(scale * num / den)`, halves rounded away from zero.
    pub fn rounded(self, scale: u64) -> u64 {
        if self.den == 0 {
            return 0;
        }
        let (n, d, s) = (self.num as u128, self.den as u128, scale as u128);
        ((2 * s * n + d) / (2 * d)) as u64
    }

    pub fn hundredths(self) -> Hundredths {
        Hundredths(self.rounded(100))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.den, other.den) {
            (0, 0) => Ordering::Equal,
            (0, _) => 0u128.cmp(&(other.num as u128)),
            (_, 0) => (self.num as u128).cmp(&0),
            _ => (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128)),
        }
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ratio {}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

/// Integer percentage of `part` in `whole`.
pub fn percent(part: u64, whole: u64) -> u64 {
    Ratio::new(part, whole).rounded(100)
}

/// Percentage of `part` in `whole` to two decimals.
pub fn percent_2dp(part: u64, whole: u64) -> Hundredths {
    Hundredths(Ratio::new(part, whole).rounded(10_000))
}

/// A value held in hundredths; prints with exactly two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Hundredths(pub u64);

impl Hundredths {
    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Two decimals with trailing zeros dropped: `14`, `2.5`, `0.11`.
    pub fn trimmed(self) -> String {
        let s = self.to_string();
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl fmt::Display for Hundredths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Hundredths {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

/// `1234567` → `1,234,567`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
