//! Ternary quartic forms `F(x1, x2, x3) = sum c_ijk x1^i x2^j x3^k`.
//!
//! Forms are immutable once built. Callers are responsible for supplying
//! forms they know to be irreducible over the rationals; the only geometric
//! check offered here is smoothness modulo a small prime, which is what the
//! character-sum bounds need.

use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{is_prime_u64, mul_mod, reduce_i128};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormError {
    #[error("malformed form: {0}")]
    Malformed(String),
    #[error("integer overflow evaluating F at {0}")]
    Overflow(LatticeTriple),
    #[error("{0} is not an odd prime")]
    NotOddPrime(u64),
    #[error("p = {p} exceeds the exhaustive-search budget {budget}")]
    BudgetExceeded { p: u64, budget: u64 },
}

/// The 15 exponent triples `(i, j, k)` with `i + j + k = 4`, in the order
/// used for coefficient storage.
pub const QUARTIC_MONOMIALS: [(u32, u32, u32); 15] = [
    (4, 0, 0),
    (3, 1, 0),
    (3, 0, 1),
    (2, 2, 0),
    (2, 1, 1),
    (2, 0, 2),
    (1, 3, 0),
    (1, 2, 1),
    (1, 1, 2),
    (1, 0, 3),
    (0, 4, 0),
    (0, 3, 1),
    (0, 2, 2),
    (0, 1, 3),
    (0, 0, 4),
];

fn monomial_index(e: (u32, u32, u32)) -> Option<usize> {
    QUARTIC_MONOMIALS.iter().position(|&m| m == e)
}

/// An integer point or frequency vector in Z^3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct LatticeTriple {
    pub x1: i64,
    pub x2: i64,
    pub x3: i64,
}

impl LatticeTriple {
    pub const ZERO: Self = Self::new(0, 0, 0);

    pub const fn new(x1: i64, x2: i64, x3: i64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn to_array(self) -> [i64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn scale(self, l: i64) -> Self {
        Self::new(self.x1 * l, self.x2 * l, self.x3 * l)
    }

    /// Componentwise reduction into `[0, m)`.
    pub fn reduce(self, m: u64) -> [u64; 3] {
        self.to_array().map(|v| reduce_i128(v as i128, m))
    }

    pub fn max_abs(self) -> u64 {
        self.to_array()
            .iter()
            .map(|v| v.unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

impl std::ops::Neg for LatticeTriple {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x1, -self.x2, -self.x3)
    }
}

impl std::ops::Add for LatticeTriple {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3)
    }
}

impl From<[i64; 3]> for LatticeTriple {
    fn from(a: [i64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for LatticeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x1, self.x2, self.x3)
    }
}

/// A homogeneous ternary form of arbitrary degree, used for the partial
/// derivatives of a quartic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryForm {
    terms: Vec<((u32, u32, u32), i64)>,
}

impl TernaryForm {
    pub fn terms(&self) -> &[((u32, u32, u32), i64)] {
        &self.terms
    }

    pub fn eval_mod(&self, b: [u64; 3], m: u64) -> u64 {
        let mut acc = 0u64;
        for &((i, j, k), c) in &self.terms {
            let mut t = reduce_i128(c as i128, m);
            for (base, e) in [(b[0], i), (b[1], j), (b[2], k)] {
                for _ in 0..e {
                    t = mul_mod(t, base, m);
                }
            }
            acc = (acc + t) % m;
        }
        acc
    }
}

/// Integer ternary quartic form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuarticForm {
    coeffs: [i64; 15],
}

impl QuarticForm {
    /// Builds a form from `(exponents, coefficient)` pairs. Repeated
    /// monomials, wrong degrees and the zero form are rejected.
    pub fn from_terms<I>(terms: I) -> Result<Self, FormError>
    where
        I: IntoIterator<Item = ((u32, u32, u32), i64)>,
    {
        let mut coeffs = [0i64; 15];
        let mut seen = [false; 15];
        for (e, c) in terms {
            let idx = monomial_index(e).ok_or_else(|| {
                FormError::Malformed(format!(
                    "monomial x1^{} x2^{} x3^{} has degree {} (need 4)",
                    e.0,
                    e.1,
                    e.2,
                    e.0 + e.1 + e.2
                ))
            })?;
            if seen[idx] {
                return Err(FormError::Malformed(format!(
                    "duplicate monomial \"{},{},{}\"",
                    e.0, e.1, e.2
                )));
            }
            seen[idx] = true;
            coeffs[idx] = c;
        }
        if coeffs.iter().all(|&c| c == 0) {
            return Err(FormError::Malformed("all coefficients are zero".into()));
        }
        Ok(Self { coeffs })
    }

    /// `x1^3 x2 + x2^3 x3 + x3^3 x1`, the Klein quartic.
    pub fn klein() -> Self {
        Self::from_terms([((3, 1, 0), 1), ((0, 3, 1), 1), ((1, 0, 3), 1)]).unwrap()
    }

    /// `x1^4 + x2^4 - x3^4`.
    pub fn diagonal_example() -> Self {
        Self::from_terms([((4, 0, 0), 1), ((0, 4, 0), 1), ((0, 0, 4), -1)]).unwrap()
    }

    pub fn coeff(&self, e: (u32, u32, u32)) -> i64 {
        monomial_index(e).map_or(0, |i| self.coeffs[i])
    }

    pub fn terms(&self) -> impl Iterator<Item = ((u32, u32, u32), i64)> + '_ {
        QUARTIC_MONOMIALS
            .iter()
            .zip(self.coeffs.iter())
            .filter(|(_, &c)| c != 0)
            .map(|(&e, &c)| (e, c))
    }

    pub fn max_abs_coeff(&self) -> u64 {
        self.coeffs
            .iter()
            .map(|c| c.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    /// Sum of absolute coefficients; `|F(x)| <= l1_norm * max|x_i|^4`.
    pub fn l1_norm(&self) -> u128 {
        self.coeffs.iter().map(|c| c.unsigned_abs() as u128).sum()
    }

    /// Whether `|F(x)|` and the forward differences used along a row stay
    /// well inside `i128` for every `x` with `max|x_i| <= radius`.
    pub fn fits_i128(&self, radius: u64) -> bool {
        let r = radius as u128 + 4;
        r.checked_pow(4)
            .and_then(|r4| r4.checked_mul(self.l1_norm()))
            .and_then(|v| v.checked_mul(16))
            .is_some_and(|v| v < (1u128 << 120))
    }

    /// Exact value with overflow detection.
    pub fn evaluate(&self, x: LatticeTriple) -> Result<i128, FormError> {
        let v = [x.x1 as i128, x.x2 as i128, x.x3 as i128];
        let mut acc: i128 = 0;
        for ((i, j, k), c) in self.terms() {
            let t = v[0]
                .checked_pow(i)
                .and_then(|a| v[1].checked_pow(j).and_then(|b| a.checked_mul(b)))
                .and_then(|a| v[2].checked_pow(k).and_then(|b| a.checked_mul(b)))
                .and_then(|a| a.checked_mul(c as i128))
                .ok_or(FormError::Overflow(x))?;
            acc = acc.checked_add(t).ok_or(FormError::Overflow(x))?;
        }
        Ok(acc)
    }

    /// Unchecked evaluation; callers must have established
    /// [`fits_i128`](Self::fits_i128) for the relevant radius.
    #[inline]
    pub fn eval_i128(&self, x1: i64, x2: i64, x3: i64) -> i128 {
        let r = self.row_in_x3(x1, x2);
        let t = x3 as i128;
        (((r[4] * t + r[3]) * t + r[2]) * t + r[1]) * t + r[0]
    }

    /// Coefficients `[a0, .., a4]` of `F(x1, x2, t)` as a polynomial in `t`.
    pub fn row_in_x3(&self, x1: i64, x2: i64) -> [i128; 5] {
        let mut out = [0i128; 5];
        let (a, b) = (x1 as i128, x2 as i128);
        for ((i, j, k), c) in self.terms() {
            out[k as usize] += c as i128 * a.pow(i) * b.pow(j);
        }
        out
    }

    /// `F(b) mod m` with every product reduced, so it never overflows.
    pub fn evaluate_mod(&self, b: LatticeTriple, m: u64) -> u64 {
        self.eval_mod_residues(b.reduce(m), m)
    }

    /// As [`evaluate_mod`](Self::evaluate_mod) for already-reduced inputs.
    pub fn eval_mod_residues(&self, b: [u64; 3], m: u64) -> u64 {
        if m == 1 {
            return 0;
        }
        let pow = |base: u64| {
            let mut p = [1 % m; 5];
            for e in 1..5 {
                p[e] = mul_mod(p[e - 1], base, m);
            }
            p
        };
        let (p1, p2, p3) = (pow(b[0]), pow(b[1]), pow(b[2]));
        let mut acc = 0u64;
        for ((i, j, k), c) in self.terms() {
            let t = mul_mod(
                mul_mod(p1[i as usize], p2[j as usize], m),
                p3[k as usize],
                m,
            );
            acc = (acc + mul_mod(t, reduce_i128(c as i128, m), m)) % m;
        }
        acc
    }

    /// True iff `c_400 = c_040 = c_004 = 0`.
    pub fn is_diagonal_zero(&self) -> bool {
        self.coeff((4, 0, 0)) == 0 && self.coeff((0, 4, 0)) == 0 && self.coeff((0, 0, 4)) == 0
    }

    /// Partial derivative with respect to `x_{var+1}` as a cubic form.
    pub fn partial(&self, var: usize) -> TernaryForm {
        assert!(var < 3);
        let terms = self
            .terms()
            .filter_map(|((i, j, k), c)| {
                let e = [i, j, k];
                if e[var] == 0 {
                    return None;
                }
                let mut d = e;
                d[var] -= 1;
                Some(((d[0], d[1], d[2]), c * e[var] as i64))
            })
            .collect();
        TernaryForm { terms }
    }

    /// Whether the projective curve `F = 0` is smooth over `F_p`, decided by
    /// searching all of `F_p^3` for a nonzero common zero of `F` and its
    /// three partials.
    pub fn is_smooth_mod_p(&self, p: u64, budget: u64) -> Result<bool, FormError> {
        if p.is_multiple_of(2) || !is_prime_u64(p) {
            return Err(FormError::NotOddPrime(p));
        }
        if p > budget {
            return Err(FormError::BudgetExceeded { p, budget });
        }
        let partials = [self.partial(0), self.partial(1), self.partial(2)];
        for b1 in 0..p {
            for b2 in 0..p {
                for b3 in 0..p {
                    let b = [b1, b2, b3];
                    if b == [0, 0, 0] || self.eval_mod_residues(b, p) != 0 {
                        continue;
                    }
                    if partials.iter().all(|d| d.eval_mod(b, p) == 0) {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// JSON object mapping `"i,j,k"` to the nonzero coefficients.
    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .terms()
            .map(|((i, j, k), c)| (format!("{i},{j},{k}"), serde_json::Value::from(c)))
            .collect();
        serde_json::Value::Object(map)
    }
}

impl fmt::Display for QuarticForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for ((i, j, k), c) in self.terms() {
            let sign = if c < 0 {
                "-"
            } else if first {
                ""
            } else {
                "+"
            };
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{sign}")?;
            if !first {
                write!(f, " ")?;
            }
            if c.unsigned_abs() != 1 {
                write!(f, "{}", c.unsigned_abs())?;
            }
            for (name, e) in [("x1", i), ("x2", j), ("x3", k)] {
                match e {
                    0 => {}
                    1 => write!(f, "{name}")?,
                    _ => write!(f, "{name}^{e}")?,
                }
            }
            first = false;
        }
        Ok(())
    }
}

// Collects map entries in order so repeated keys stay visible.
struct RawEntries(Vec<(String, i64)>);

impl<'de> Deserialize<'de> for RawEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping \"i,j,k\" to integer coefficients")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawEntries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, i64>()? {
                    out.push((k, v));
                }
                Ok(RawEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

fn parse_key(key: &str) -> Result<(u32, u32, u32), FormError> {
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    let bad = || FormError::Malformed(format!("bad monomial key \"{key}\" (expected \"i,j,k\")"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut e = [0u32; 3];
    for (slot, part) in e.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| bad())?;
    }
    Ok((e[0], e[1], e[2]))
}

/// Parses the JSON form format: `{"i,j,k": c, ...}`, unlisted monomials zero.
pub fn parse_form(text: &str) -> Result<QuarticForm, FormError> {
    let raw: RawEntries =
        serde_json::from_str(text).map_err(|e| FormError::Malformed(e.to_string()))?;
    let terms = raw
        .0
        .iter()
        .map(|(k, c)| parse_key(k).map(|e| (e, *c)))
        .collect::<Result<Vec<_>, _>>()?;
    QuarticForm::from_terms(terms)
}
