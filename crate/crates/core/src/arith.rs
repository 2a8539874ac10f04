//! Integer and modular arithmetic: Jacobi symbols, prime windows, CRT and
//! exact integer square roots.
//!
//! Everything here is a pure function of its inputs except the prime cache,
//! which writes files atomically (write to a temporary name, then rename) so
//! concurrent readers never observe a partial list.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ArithError {
    #[error("invalid modulus {0}: the Jacobi symbol needs an odd positive modulus")]
    InvalidModulus(i128),
    #[error("moduli {0} and {1} are not coprime")]
    NotCoprime(u64, u64),
    #[error("square root of negative value {0}")]
    NegativeSquareRoot(i128),
    #[error("invalid dyadic window [{lo}, {hi}]: need 2 <= lo <= hi")]
    InvalidWindow { lo: u64, hi: u64 },
}

/// Environment variable consulted for the prime cache directory when no
/// explicit directory is given.
pub const PRIME_CACHE_ENV: &str = "SQSIEVE_CACHE_DIR";

/// Closed integer range `[lo, hi]` of candidate primes.
///
/// `DyadicWindow::around(P, 2.0)` gives the `p ~ P` range `P <= p <= 2P`;
/// a multiplier of 4 gives the `q ~* Q` range used for composite moduli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct DyadicWindow {
    lo: u64,
    hi: u64,
}

impl DyadicWindow {
    pub fn new(lo: u64, hi: u64) -> Result<Self, ArithError> {
        if lo < 2 || hi < lo {
            return Err(ArithError::InvalidWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Integers in `[P, multiplier * P]`, with `lo` clamped up to 2.
    pub fn around(p: f64, multiplier: f64) -> Result<Self, ArithError> {
        let lo = (p.ceil().max(2.0)) as u64;
        let hi = (p * multiplier).floor().max(0.0) as u64;
        Self::new(lo, hi)
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }
}

/// Jacobi symbol `(a/m)` for odd positive `m`.
pub fn jacobi(a: i128, m: i128) -> Result<i8, ArithError> {
    if m <= 0 || m % 2 == 0 || m > u64::MAX as i128 {
        return Err(ArithError::InvalidModulus(m));
    }
    let m = m as u64;
    Ok(jacobi_u64(reduce_i128(a, m), m))
}

/// `a mod m` in `[0, m)` for a signed 128-bit `a`.
#[inline]
pub fn reduce_i128(a: i128, m: u64) -> u64 {
    a.rem_euclid(m as i128) as u64
}

/// Binary Jacobi algorithm. `m` must be odd; `a` may be any value.
#[inline]
pub fn jacobi_u64(a: u64, m: u64) -> i8 {
    debug_assert!(m & 1 == 1);
    let mut a = a % m;
    let mut n = m;
    let mut sign = 1i8;
    while a != 0 {
        let tz = a.trailing_zeros();
        a >>= tz;
        // (2/n) = -1 iff n = 3, 5 mod 8
        if tz & 1 == 1 && matches!(n & 7, 3 | 5) {
            sign = -sign;
        }
        // reciprocity: flip when both are 3 mod 4
        if a & n & 3 == 3 {
            sign = -sign;
        }
        std::mem::swap(&mut a, &mut n);
        a %= n;
    }
    if n == 1 {
        sign
    } else {
        0
    }
}

/// Precomputed row of `(r/p)` for `r` in `[0, p)`, for repeated evaluation at
/// one odd modulus.
#[derive(Debug, Clone)]
pub struct CharTable {
    modulus: u64,
    values: Vec<i8>,
}

impl CharTable {
    pub fn new(modulus: u64) -> Result<Self, ArithError> {
        if modulus == 0 || modulus.is_multiple_of(2) {
            return Err(ArithError::InvalidModulus(modulus as i128));
        }
        let values = (0..modulus).map(|r| jacobi_u64(r, modulus)).collect();
        Ok(Self { modulus, values })
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    #[inline]
    pub fn get(&self, residue: u64) -> i8 {
        self.values[residue as usize]
    }

    #[inline]
    pub fn eval(&self, n: i128) -> i8 {
        self.values[reduce_i128(n, self.modulus) as usize]
    }
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    let (mut r0, mut r1) = (m as i128, (a % m) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if r0 != 1 {
        return None;
    }
    Some(t0.rem_euclid(m as i128) as u64)
}

/// Splits `r mod m*n` into `(r mod m, r mod n)`.
pub fn crt_split(r: u64, m: u64, n: u64) -> Result<(u64, u64), ArithError> {
    if gcd(m, n) != 1 {
        return Err(ArithError::NotCoprime(m, n));
    }
    Ok((r % m, r % n))
}

/// Inverse of [`crt_split`]: the unique residue mod `m*n` with the given
/// reductions.
pub fn crt_combine(a: u64, m: u64, b: u64, n: u64) -> Result<u64, ArithError> {
    let Some(m_inv) = inv_mod(m, n) else {
        return Err(ArithError::NotCoprime(m, n));
    };
    let mn = m as u128 * n as u128;
    // x = a + m * ((b - a) * m^{-1} mod n)
    let diff = (b as i128 - a as i128).rem_euclid(n as i128) as u64;
    let t = mul_mod(diff, m_inv, n);
    Ok(((a as u128 % m as u128 + m as u128 * t as u128) % mn) as u64)
}

/// Floor square root of a 128-bit value and whether it is exact.
pub fn isqrt_u128(n: u128) -> (u128, bool) {
    if n < (1u128 << 52) {
        let s = (n as f64).sqrt() as u128;
        // correctly rounded sqrt of an exactly representable value
        let s = if s * s > n { s - 1 } else { s };
        return (s, s * s == n);
    }
    let mut s = (n as f64).sqrt() as u128;
    // one Newton step repairs the f64 estimate for inputs above 2^104
    if s > 0 {
        s = (s + n / s) >> 1;
    }
    while s.checked_mul(s).is_none_or(|sq| sq > n) {
        s -= 1;
    }
    while (s + 1).checked_mul(s + 1).is_some_and(|sq| sq <= n) {
        s += 1;
    }
    (s, s * s == n)
}

/// Floor square root of a signed value; negative inputs are rejected.
pub fn exact_isqrt(n: i128) -> Result<(u128, bool), ArithError> {
    if n < 0 {
        return Err(ArithError::NegativeSquareRoot(n));
    }
    Ok(isqrt_u128(n as u128))
}

// Bit r set iff r is a square mod 64.
const SQUARE_MOD_64: u64 = {
    let mut mask = 0u64;
    let mut r = 0;
    while r < 64 {
        mask |= 1 << ((r * r) % 64);
        r += 1;
    }
    mask
};

/// Fast perfect-square test for non-negative values with a mod-64 prefilter.
#[inline]
pub fn is_square_i128(n: i128) -> bool {
    if n < 0 {
        return false;
    }
    let n = n as u128;
    if (SQUARE_MOD_64 >> (n as u64 & 63)) & 1 == 0 {
        return false;
    }
    if n < (1u128 << 52) {
        let s = (n as f64).sqrt().round() as u128;
        return s * s == n;
    }
    isqrt_u128(n).1
}

/// Deterministic Miller-Rabin for 64-bit inputs.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn small_primes_upto(limit: u64) -> Vec<u64> {
    if limit < 2 {
        return Vec::new();
    }
    let limit = limit as usize;
    let mut composite = vec![false; limit + 1];
    let mut out = Vec::new();
    for i in 2..=limit {
        if composite[i] {
            continue;
        }
        out.push(i as u64);
        let mut j = i * i;
        while j <= limit {
            composite[j] = true;
            j += i;
        }
    }
    out
}

const SEGMENT: u64 = 1 << 16;

/// All primes in `[lo, hi]`, ascending, by a segmented sieve of Eratosthenes.
pub fn primes_in(window: DyadicWindow) -> Vec<u64> {
    let (lo, hi) = (window.lo, window.hi);
    let root = isqrt_u128(hi as u128).0 as u64;
    let base = small_primes_upto(root);
    let mut out = Vec::new();
    let mut seg_lo = lo;
    loop {
        let seg_hi = hi.min(seg_lo.saturating_add(SEGMENT - 1));
        let mut composite = vec![false; (seg_hi - seg_lo + 1) as usize];
        for &p in &base {
            if p * p > seg_hi {
                break;
            }
            let first = (seg_lo.div_ceil(p) * p).max(p * p);
            let mut j = first;
            while j <= seg_hi {
                composite[(j - seg_lo) as usize] = true;
                j += p;
            }
        }
        out.extend(
            composite
                .iter()
                .enumerate()
                .filter(|(_, &c)| !c)
                .map(|(i, _)| seg_lo + i as u64),
        );
        if seg_hi == hi {
            break;
        }
        seg_lo = seg_hi + 1;
    }
    out
}

/// On-disk cache of prime windows, one file `primes_<lo>_<hi>.txt` per window.
#[derive(Debug, Clone)]
pub struct PrimeCache {
    dir: PathBuf,
}

impl PrimeCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Cache rooted at `dir`, or at `$SQSIEVE_CACHE_DIR` when `dir` is `None`.
    pub fn from_flag_or_env(dir: Option<&Path>) -> Option<Self> {
        dir.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(PRIME_CACHE_ENV).map(PathBuf::from))
            .map(Self::new)
    }

    pub fn path_for(&self, window: DyadicWindow) -> PathBuf {
        self.dir
            .join(format!("primes_{}_{}.txt", window.lo, window.hi))
    }

    /// Reads the window from disk, sieving and writing it on a miss.
    pub fn primes(&self, window: DyadicWindow) -> std::io::Result<Vec<u64>> {
        let path = self.path_for(window);
        if let Ok(file) = fs::File::open(&path) {
            let mut primes = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line?;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let p = line.parse::<u64>().map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}: {e}", path.display()),
                    )
                })?;
                primes.push(p);
            }
            return Ok(primes);
        }
        let primes = primes_in(window);
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!(
            ".primes_{}_{}.{}.tmp",
            window.lo,
            window.hi,
            std::process::id()
        ));
        {
            let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
            for p in &primes {
                writeln!(w, "{p}")?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(primes)
    }
}

/// Prime factorization of a small integer by trial division.
pub fn factor_small(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            let mut e = 0;
            while n.is_multiple_of(d) {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += if d == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}
