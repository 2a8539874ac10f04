//! Complete character sums
//!
//! ```text
//! c(m, x) = sum_{b mod m} (F(b)/m) e((x . b) / m)
//! ```
//!
//! and their dual transforms `C(p, x) = sum_{a mod p} c(p, a) e((a . x) / p)`.
//!
//! Values are carried as `f64` pairs, but every evaluator first collapses the
//! sum to integer weights on the `m`-th roots of unity (`sum_r A_r e(r/m)`
//! with `A_r` exact), so the only rounding comes from `m` cosine/sine
//! evaluations and a compensated accumulation. The absolute error is below
//! `sum |A_r| * 2^-50`, i.e. about `m^3 * 1e-15`, far inside the `1e-9`
//! comparison tolerance for every modulus in the naive budget. Evaluators
//! that produce a rational integer by construction also report it exactly.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{gcd, inv_mod, is_prime_u64, jacobi_u64, CharTable};
use crate::form::{LatticeTriple, QuarticForm};

/// Largest modulus accepted by [`charsum_naive`] unless raised explicitly.
pub const NAIVE_BUDGET: u64 = 45;
/// Largest prime accepted by [`dual_charsum_naive`] unless raised explicitly.
pub const DUAL_NAIVE_BUDGET: u64 = 13;
/// Absolute tolerance for comparing two evaluations of the same sum.
pub const CHARSUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CharSumError {
    #[error("modulus {m} exceeds the evaluation budget {budget}")]
    BudgetExceeded { m: u64, budget: u64 },
    #[error("modulus {0} must be odd and positive")]
    EvenModulus(u64),
    #[error("{0} is not an odd prime")]
    NotOddPrime(u64),
    #[error("factors {0:?} are not pairwise coprime odd primes multiplying to {1}")]
    BadFactorization(Vec<u64>, u64),
}

/// Value of a character sum at modulus `m` and frequency `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharSumValue {
    pub modulus: u64,
    pub freq: LatticeTriple,
    pub re: f64,
    pub im: f64,
    /// Present when the evaluator produced a rational integer exactly.
    pub exact: Option<i128>,
}

impl CharSumValue {
    fn integer(modulus: u64, freq: LatticeTriple, v: i128) -> Self {
        Self {
            modulus,
            freq,
            re: v as f64,
            im: 0.0,
            exact: Some(v),
        }
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Distance between two values in the complex plane.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }

    /// Nearest rational integer and the distance to it.
    pub fn rounded(&self) -> (i128, f64) {
        if let Some(v) = self.exact {
            return (v, 0.0);
        }
        let r = self.re.round();
        (r as i128, (self.re - r).hypot(self.im))
    }
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `sum_r weights[r] * e(r / m)` with compensated accumulation.
pub(crate) fn cyclotomic_value(weights: &[i64]) -> (f64, f64) {
    let m = weights.len() as f64;
    let mut re = CompensatedSum::default();
    let mut im = CompensatedSum::default();
    for (r, &w) in weights.iter().enumerate() {
        if w == 0 {
            continue;
        }
        let (s, c) = (TAU * r as f64 / m).sin_cos();
        re.add(w as f64 * c);
        im.add(w as f64 * s);
    }
    (re.value(), im.value())
}

#[inline]
fn phase(x: [u64; 3], b: [u64; 3], m: u64) -> usize {
    let t = x[0] as u128 * b[0] as u128 + x[1] as u128 * b[1] as u128 + x[2] as u128 * b[2] as u128;
    (t % m as u128) as usize
}

/// Direct `O(m^3)` evaluation of `c(m, x)` for odd `m <= NAIVE_BUDGET`.
pub fn charsum_naive(
    form: &QuarticForm,
    m: u64,
    x: LatticeTriple,
) -> Result<CharSumValue, CharSumError> {
    charsum_naive_with_budget(form, m, x, NAIVE_BUDGET)
}

pub fn charsum_naive_with_budget(
    form: &QuarticForm,
    m: u64,
    x: LatticeTriple,
    budget: u64,
) -> Result<CharSumValue, CharSumError> {
    if m == 0 || m.is_multiple_of(2) {
        return Err(CharSumError::EvenModulus(m));
    }
    if m > budget {
        return Err(CharSumError::BudgetExceeded { m, budget });
    }
    let chi = CharTable::new(m).expect("odd modulus");
    let xr = x.reduce(m);
    let mut weights = vec![0i64; m as usize];
    for b1 in 0..m {
        for b2 in 0..m {
            for b3 in 0..m {
                let b = [b1, b2, b3];
                let c = chi.get(form.eval_mod_residues(b, m));
                if c != 0 {
                    weights[phase(xr, b, m)] += c as i64;
                }
            }
        }
    }
    let (re, im) = cyclotomic_value(&weights);
    Ok(CharSumValue {
        modulus: m,
        freq: x,
        re,
        im,
        exact: None,
    })
}

fn check_odd_prime(p: u64) -> Result<(), CharSumError> {
    if p.is_multiple_of(2) || !is_prime_u64(p) {
        return Err(CharSumError::NotOddPrime(p));
    }
    Ok(())
}

/// `c(p, x)` for an odd prime `p` in `O(p^2)`.
///
/// The nonzero `b` split into the strata `b1 != 0`, `b1 = 0 != b2` and
/// `b1 = b2 = 0 != b3`. On each stratum `b = s * v` with `v` normalized to
/// leading coordinate 1, and `(F(s v)/p) = (F(v)/p)` because `s^4` is a
/// square, so the sum over the scalar `s` is a complete geometric sum:
/// `p - 1` when `x . v = 0 mod p`, otherwise `-1`. The result is an integer.
pub fn charsum_prime_reduced(
    form: &QuarticForm,
    p: u64,
    x: LatticeTriple,
) -> Result<CharSumValue, CharSumError> {
    check_odd_prime(p)?;
    let chi = CharTable::new(p).expect("odd prime");
    Ok(charsum_prime_with_table(form, &chi, x))
}

pub(crate) fn charsum_prime_with_table(
    form: &QuarticForm,
    chi: &CharTable,
    x: LatticeTriple,
) -> CharSumValue {
    let p = chi.modulus();
    let [x1, x2, x3] = x.reduce(p);
    let pm1 = p as i128 - 1;
    let geo = |r: u64| if r.is_multiple_of(p) { pm1 } else { -1 };

    let mut total: i128 = 0;
    let mut all_vanish = true;
    for b2 in 0..p {
        for b3 in 0..p {
            let v = form.eval_mod_residues([1, b2, b3], p);
            all_vanish &= v == 0;
            let c = chi.get(v);
            if c != 0 {
                let r = x1 + (x2 * b2) % p + (x3 * b3) % p;
                total += c as i128 * geo(r);
            }
        }
    }
    if all_vanish {
        // F(1, *, *) = 0 identically mod p: stratification is degenerate
        return charsum_naive_with_budget(form, p, x, p).expect("within raised budget");
    }
    for t in 0..p {
        let c = chi.get(form.eval_mod_residues([0, 1, t], p));
        if c != 0 {
            total += c as i128 * geo(x2 + (x3 * t) % p);
        }
    }
    let c = chi.get(form.eval_mod_residues([0, 0, 1], p));
    total += c as i128 * geo(x3);
    CharSumValue::integer(p, x, total)
}

/// How the frequency is mapped into each prime factor when a squarefree
/// modulus is split by CRT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FrequencyConvention {
    /// Each factor is evaluated at `x` itself.
    #[default]
    Direct,
    /// The factor `p` of `m` is evaluated at `(m/p)^{-1} x mod p`.
    CofactorInverse,
}

/// `c(m, x)` for odd squarefree `m` as a product over its prime factors.
///
/// Both conventions give the same value: writing `b = b' n + b'' p` turns
/// `c(pn, x)` into `c(p, x) c(n, x)`, and `c(p, u x) = c(p, x)` for any
/// unit `u` because `(F(u^{-1} b)/p) = (u^{-4}/p)(F(b)/p) = (F(b)/p)`.
pub fn charsum_multiplicative(
    form: &QuarticForm,
    m: u64,
    factors: &[u64],
    x: LatticeTriple,
    convention: FrequencyConvention,
) -> Result<CharSumValue, CharSumError> {
    let bad = || CharSumError::BadFactorization(factors.to_vec(), m);
    let mut prod: u64 = 1;
    for (i, &p) in factors.iter().enumerate() {
        if p % 2 == 0 || !is_prime_u64(p) || factors[..i].iter().any(|&q| gcd(p, q) != 1) {
            return Err(bad());
        }
        prod = prod.checked_mul(p).ok_or_else(bad)?;
    }
    if prod != m {
        return Err(bad());
    }
    let mut value: i128 = 1;
    for &p in factors {
        let freq = match convention {
            FrequencyConvention::Direct => x,
            FrequencyConvention::CofactorInverse => {
                let u = inv_mod((m / p) % p, p).expect("coprime cofactor") as i64;
                LatticeTriple::from(x.reduce(p).map(|v| v as i64 * u % p as i64))
            }
        };
        value *= charsum_prime_reduced(form, p, freq)?
            .exact
            .expect("prime evaluator is exact");
    }
    Ok(CharSumValue::integer(m, x, value))
}

/// Direct evaluation of the dual sum `C(p, x)` in `O(p^5)` for `p <= 13`.
pub fn dual_charsum_naive(
    form: &QuarticForm,
    p: u64,
    x: LatticeTriple,
) -> Result<CharSumValue, CharSumError> {
    check_odd_prime(p)?;
    if p > DUAL_NAIVE_BUDGET {
        return Err(CharSumError::BudgetExceeded {
            m: p,
            budget: DUAL_NAIVE_BUDGET,
        });
    }
    let chi = CharTable::new(p).expect("odd prime");
    let xr = x.reduce(p);
    let mut weights = vec![0i64; p as usize];
    for a1 in 0..p {
        for a2 in 0..p {
            for a3 in 0..p {
                let alpha = LatticeTriple::new(a1 as i64, a2 as i64, a3 as i64);
                let c = charsum_prime_with_table(form, &chi, alpha).exact.unwrap();
                weights[phase(xr, [a1, a2, a3], p)] += c as i64;
            }
        }
    }
    let (re, im) = cyclotomic_value(&weights);
    Ok(CharSumValue {
        modulus: p,
        freq: x,
        re,
        im,
        exact: None,
    })
}

/// Closed form of the dual sum: `C(p, x) = p^3 (F(x)/p)`.
///
/// Summing the additive characters over `a` forces `b = -x mod p`, and `F` is
/// even.
pub fn dual_charsum_closed(
    form: &QuarticForm,
    p: u64,
    x: LatticeTriple,
) -> Result<CharSumValue, CharSumError> {
    check_odd_prime(p)?;
    let chi = jacobi_u64(form.evaluate_mod(x, p), p) as i128;
    Ok(CharSumValue::integer(p, x, (p as i128).pow(3) * chi))
}

/// `c(p^2, x)` for the pure additive sum that remains at a squared prime
/// factor: `p^6` when `p^2 | x_i` for every `i`, else `0`.
pub fn charsum_prime_square_trivial(p: u64, x: LatticeTriple) -> i128 {
    let p2 = p * p;
    if x.reduce(p2) == [0, 0, 0] {
        (p as i128).pow(6)
    } else {
        0
    }
}

/// One row of a batch evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharSumRow {
    pub p: u64,
    pub x1: i64,
    pub x2: i64,
    pub x3: i64,
    pub re: f64,
    pub im: f64,
    pub ratio_to_p32: f64,
}

impl CharSumRow {
    pub fn from_value(v: &CharSumValue) -> Self {
        Self {
            p: v.modulus,
            x1: v.freq.x1,
            x2: v.freq.x2,
            x3: v.freq.x3,
            re: v.re,
            im: v.im,
            ratio_to_p32: v.abs() / (v.modulus as f64).powf(1.5),
        }
    }
}

/// `samples` frequencies per prime, uniform in `[0, p)^3`, from a ChaCha
/// stream seeded by `seed` and the prime.
pub fn sample_frequencies(p: u64, samples: usize, seed: u64) -> Vec<LatticeTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..samples)
        .map(|_| {
            LatticeTriple::new(
                rng.random_range(0..p) as i64,
                rng.random_range(0..p) as i64,
                rng.random_range(0..p) as i64,
            )
        })
        .collect()
}

/// `|c(p, x)| / p^{3/2}` over seeded samples, rows ordered by `(p, sample)`.
pub fn cancellation_scan(
    form: &QuarticForm,
    primes: &[u64],
    samples: usize,
    seed: u64,
) -> Result<Vec<CharSumRow>, CharSumError> {
    for &p in primes {
        check_odd_prime(p)?;
    }
    let rows: Vec<Vec<CharSumRow>> = primes
        .par_iter()
        .map(|&p| {
            let chi = CharTable::new(p).expect("odd prime");
            sample_frequencies(p, samples, seed)
                .into_iter()
                .map(|x| CharSumRow::from_value(&charsum_prime_with_table(form, &chi, x)))
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}
