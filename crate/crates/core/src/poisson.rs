//! Numerical Poisson summation for smoothly weighted character sums.
//!
//! For odd squarefree `m = q q'` and a weight `W` supported in `[-2, 2]^3`,
//!
//! ```text
//! sum_{x in Z^3} (F(x)/m) W(x/B) = (B/m)^3 sum_{h in Z^3} c(m, h) I(m, h),
//! I(m, h) = int W(y) e(-B (h . y) / m) dy.
//! ```
//!
//! The weight is a product of one-dimensional bumps, so `I` factors into
//! three one-dimensional integrals, each computed by adaptive Gauss-Kronrod
//! quadrature with breakpoints at `-1` and `1`.

use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{factor_small, gcd, CharTable};
use crate::charsum::{charsum_prime_with_table, CompensatedSum};
use crate::form::{FormError, LatticeTriple, QuarticForm};
use crate::sieve::pairwise_sum;

/// Truncation radius constant: `|h_i| <= DECAY_RADIUS * m / B`.
pub const DECAY_RADIUS: f64 = 50.0;
/// Smallest quadrature tolerance accepted.
pub const MIN_TOL: f64 = 1e-12;
/// Outer-shell mass, relative to the dual sum, above which a truncation is
/// rejected as unconverged.
pub const TAIL_TOL: f64 = 1e-10;
const MAX_INTERVALS: usize = 20_000;

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error("quadrature did not reach tolerance {tol:e}: achieved {achieved:e}")]
    Quadrature { tol: f64, achieved: f64 },
    #[error("tolerance {0:e} below the supported minimum {MIN_TOL:e}")]
    ToleranceTooSmall(f64),
    #[error("truncation {truncation} not converged: outer shell carries {tail:e} of the dual sum")]
    Truncation { truncation: u64, tail: f64 },
    #[error("invalid moduli: {0}")]
    InvalidModuli(String),
    #[error(transparent)]
    Form(#[from] FormError),
}

fn transition(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

/// `W_1(t) = s(2 - |t|) / (s(2 - |t|) + s(|t| - 1))` with `s(u) = exp(-1/u)`
/// for `u > 0`: smooth, 1 on `[-1, 1]`, 0 outside `(-2, 2)`.
pub fn bump_eval(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        return 1.0;
    }
    if a >= 2.0 {
        return 0.0;
    }
    let up = transition(2.0 - a);
    up / (up + transition(a - 1.0))
}

/// One-dimensional factor of the weight.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bump1d;

impl Bump1d {
    pub fn eval(&self, t: f64) -> f64 {
        bump_eval(t)
    }
}

/// `W(y1, y2, y3) = W_1(y1) W_2(y2) W_3(y3)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BumpWeight {
    components: [Bump1d; 3],
}

impl BumpWeight {
    pub fn canonical() -> Self {
        Self::default()
    }

    pub fn component(&self, j: usize) -> &Bump1d {
        &self.components[j]
    }

    pub fn eval(&self, y: [f64; 3]) -> f64 {
        (0..3).map(|j| self.components[j].eval(y[j])).product()
    }
}

// 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights, with
// the embedded 7-point Gauss weights on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod estimate on `[a, b]` and an error estimate derived from
/// `|Kronrod - Gauss|`, scaled and floored at roundoff as in QUADPACK.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut fv = [(0.0, 0.0); 7];
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    let mut k_abs = WGK[7] * fc.abs();
    for i in 0..7 {
        let dx = h * XGK[i];
        fv[i] = (f(c - dx), f(c + dx));
        k += WGK[i] * (fv[i].0 + fv[i].1);
        k_abs += WGK[i] * (fv[i].0.abs() + fv[i].1.abs());
        if i % 2 == 1 {
            g += WG[i / 2] * (fv[i].0 + fv[i].1);
        }
    }
    let mean = 0.5 * k;
    let mut k_asc = WGK[7] * (fc - mean).abs();
    for i in 0..7 {
        k_asc += WGK[i] * ((fv[i].0 - mean).abs() + (fv[i].1 - mean).abs());
    }
    let (value, abs, asc) = (k * h, k_abs * h.abs(), k_asc * h.abs());
    let mut err = ((k - g) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    if abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * abs);
    }
    (value, err)
}

struct Interval {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Interval {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Interval {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Adaptive Gauss-Kronrod integration over consecutive `breaks`, bisecting
/// the interval with the largest error until the total is below `tol`
/// or `max_intervals` is reached.
pub fn integrate_adaptive(
    f: impl Fn(f64) -> f64,
    breaks: &[f64],
    tol: f64,
    max_intervals: usize,
) -> Result<(f64, f64), PoissonError> {
    let mut heap: BinaryHeap<Interval> = breaks
        .windows(2)
        .map(|w| {
            let (value, err) = gk15(&f, w[0], w[1]);
            Interval {
                a: w[0],
                b: w[1],
                value,
                err,
            }
        })
        .collect();
    loop {
        let err: f64 = heap.iter().map(|i| i.err).sum();
        if err <= tol {
            let mut parts: Vec<Interval> = heap.into_vec();
            parts.sort_by(|x, y| x.a.total_cmp(&y.a));
            let mut s = CompensatedSum::default();
            parts.iter().for_each(|i| s.add(i.value));
            return Ok((s.value(), err));
        }
        if heap.len() >= max_intervals {
            return Err(PoissonError::Quadrature { tol, achieved: err });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, err) = gk15(&f, a, b);
            heap.push(Interval { a, b, value, err });
        }
    }
}

/// `int W_1(y) e(-k B y / m) dy` and its error estimate, to absolute `tol`.
///
/// `W_1` is even, so the transform is real: twice the plateau term
/// `sin(w) / w` plus twice the transition integral over `[1, 2]`.
pub fn bump_fourier(
    bump: &Bump1d,
    k: i64,
    m: u64,
    b: u64,
    tol: f64,
) -> Result<(Complex64, f64), PoissonError> {
    let omega = TAU * k as f64 * b as f64 / m as f64;
    let plateau = if k == 0 { 1.0 } else { omega.sin() / omega };
    let cap = MAX_INTERVALS + 4 * omega.abs().ceil() as usize;
    let (edge, err) = integrate_adaptive(
        |y| bump.eval(y) * (omega * y).cos(),
        &[1.0, 2.0],
        tol / 2.0,
        cap,
    )?;
    Ok((Complex64::new(2.0 * (plateau + edge), 0.0), 2.0 * err))
}

/// Value of the oscillatory integral at modulus `m` and frequency `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscIntegral {
    pub value: Complex64,
    pub modulus: u64,
    pub freq: LatticeTriple,
    pub error_estimate: f64,
}

pub fn osc_integral(
    weight: &BumpWeight,
    m: u64,
    x: LatticeTriple,
    b: u64,
    tol: f64,
) -> Result<OscIntegral, PoissonError> {
    if tol.is_nan() || tol < MIN_TOL {
        return Err(PoissonError::ToleranceTooSmall(tol));
    }
    let mut factors = [(Complex64::new(0.0, 0.0), 0.0); 3];
    for (j, k) in x.to_array().into_iter().enumerate() {
        factors[j] = bump_fourier(weight.component(j), k, m, b, tol / 3.0)?;
    }
    let value = factors.iter().map(|f| f.0).product();
    let error_estimate = (0..3)
        .map(|j| {
            factors[j].1
                * (0..3)
                    .filter(|&i| i != j)
                    .map(|i| factors[i].0.norm() + factors[i].1)
                    .product::<f64>()
        })
        .sum();
    Ok(OscIntegral {
        value,
        modulus: m,
        freq: x,
        error_estimate,
    })
}

/// Default truncation `ceil(DECAY_RADIUS * m / B)`.
pub fn default_truncation(m: u64, b: u64) -> u64 {
    (DECAY_RADIUS * m as f64 / b as f64).ceil() as u64
}

/// Which multiplicative character enters both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacterMode {
    #[default]
    Jacobi,
    /// `chi = 1`: classical Poisson summation of the bare weight.
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub q: u64,
    pub q_prime: u64,
    #[serde(rename = "B")]
    pub b: u64,
    pub lhs: f64,
    pub rhs_re: f64,
    pub rhs_im: f64,
    pub rel_error: f64,
    pub truncation: u64,
    pub quadrature_tol: f64,
    pub mode: CharacterMode,
    /// Outer-shell mass of the dual sum relative to `|rhs|`.
    pub tail: f64,
}

fn squarefree_odd_primes(n: u64) -> Result<Vec<u64>, PoissonError> {
    let f = factor_small(n);
    if n == 0 || n.is_multiple_of(2) || f.iter().any(|&(_, e)| e > 1) {
        return Err(PoissonError::InvalidModuli(format!(
            "{n} is not odd and squarefree"
        )));
    }
    Ok(f.into_iter().map(|(p, _)| p).collect())
}

/// `c(m, h)` for all `h in [0, m)^3`, indexed `h1 m^2 + h2 m + h3`, as a
/// product of prime-modulus tables.
fn charsum_table(form: &QuarticForm, m: u64, primes: &[u64], mode: CharacterMode) -> Vec<f64> {
    let n = m as usize;
    if mode == CharacterMode::Trivial {
        let mut t = vec![0.0; n * n * n];
        t[0] = (m as f64).powi(3);
        return t;
    }
    let per_prime: Vec<(u64, Vec<i128>)> = primes
        .iter()
        .map(|&p| {
            let chi = CharTable::new(p).expect("odd prime");
            let mut v = Vec::with_capacity((p * p * p) as usize);
            for a in 0..p as i64 {
                for b in 0..p as i64 {
                    for c in 0..p as i64 {
                        let x = LatticeTriple::new(a, b, c);
                        v.push(charsum_prime_with_table(form, &chi, x).exact.unwrap());
                    }
                }
            }
            (p, v)
        })
        .collect();
    let mut t = Vec::with_capacity(n * n * n);
    for h1 in 0..m {
        for h2 in 0..m {
            for h3 in 0..m {
                let mut v: i128 = 1;
                for (p, table) in &per_prime {
                    let idx = ((h1 % p) * p * p + (h2 % p) * p + h3 % p) as usize;
                    v *= table[idx];
                }
                t.push(v as f64);
            }
        }
    }
    t
}

/// Both sides of the Poisson identity for `m = q q'`.
#[allow(clippy::too_many_arguments)]
pub fn poisson_check(
    form: &QuarticForm,
    q: u64,
    q_prime: u64,
    b: u64,
    weight: &BumpWeight,
    truncation: Option<u64>,
    tol: f64,
    mode: CharacterMode,
) -> Result<PoissonReport, PoissonError> {
    if tol.is_nan() || tol < MIN_TOL {
        return Err(PoissonError::ToleranceTooSmall(tol));
    }
    if b == 0 {
        return Err(PoissonError::InvalidModuli("B must be positive".into()));
    }
    if gcd(q, q_prime) != 1 {
        return Err(PoissonError::InvalidModuli(format!(
            "{q} and {q_prime} are not coprime"
        )));
    }
    let mut primes = squarefree_odd_primes(q)?;
    primes.extend(squarefree_odd_primes(q_prime)?);
    let m = q * q_prime;
    let trunc = truncation.unwrap_or_else(|| default_truncation(m, b));
    let lhs = poisson_lhs(form, m, b, weight, mode)?;

    let cm = charsum_table(form, m, &primes, mode);
    let t = trunc as i64;
    let mut integrals: [HashMap<i64, Complex64>; 3] = Default::default();
    for (j, map) in integrals.iter_mut().enumerate() {
        for k in -t..=t {
            let (v, _) = bump_fourier(weight.component(j), k, m, b, tol / 3.0)?;
            map.insert(k, v);
        }
    }
    let axis: [Vec<Complex64>; 3] =
        std::array::from_fn(|j| (-t..=t).map(|k| integrals[j][&k]).collect());
    let mu = m as i64;
    let n = m as usize;
    // [re, im, shell magnitude]
    let slices: Vec<[f64; 3]> = (-t..=t)
        .into_par_iter()
        .map(|h1| {
            let i1 = axis[0][(h1 + t) as usize];
            let r1 = h1.rem_euclid(mu) as usize;
            let mut re = CompensatedSum::default();
            let mut im = CompensatedSum::default();
            let mut shell = 0.0;
            for h2 in -t..=t {
                let i12 = i1 * axis[1][(h2 + t) as usize];
                let r2 = h2.rem_euclid(mu) as usize;
                for h3 in -t..=t {
                    let c = cm[(r1 * n + r2) * n + h3.rem_euclid(mu) as usize];
                    if c == 0.0 {
                        continue;
                    }
                    let v = i12 * axis[2][(h3 + t) as usize] * c;
                    re.add(v.re);
                    im.add(v.im);
                    if h1.abs() == t || h2.abs() == t || h3.abs() == t {
                        shell += v.norm();
                    }
                }
            }
            [re.value(), im.value(), shell]
        })
        .collect();
    let scale = (b as f64 / m as f64).powi(3);
    let col = |i: usize| pairwise_sum(&slices.iter().map(|s| s[i]).collect::<Vec<_>>()) * scale;
    let rhs = Complex64::new(col(0), col(1));
    let tail = col(2) / rhs.norm().max(f64::MIN_POSITIVE);
    if tail > TAIL_TOL {
        return Err(PoissonError::Truncation {
            truncation: trunc,
            tail,
        });
    }
    Ok(PoissonReport {
        q,
        q_prime,
        b,
        lhs,
        rhs_re: rhs.re,
        rhs_im: rhs.im,
        rel_error: (Complex64::new(lhs, 0.0) - rhs).norm() / lhs.abs(),
        truncation: trunc,
        quadrature_tol: tol,
        mode,
        tail,
    })
}

/// `sum_x chi_m(F(x)) W(x/B)` by direct enumeration of `(-2B, 2B)^3`.
pub fn poisson_lhs(
    form: &QuarticForm,
    m: u64,
    b: u64,
    weight: &BumpWeight,
    mode: CharacterMode,
) -> Result<f64, PoissonError> {
    let r = 2 * b as i64;
    if !form.fits_i128(r as u64) {
        return Err(FormError::Overflow(LatticeTriple::new(r, r, r)).into());
    }
    let chi = CharTable::new(m).map_err(|e| PoissonError::InvalidModuli(e.to_string()))?;
    let w: [Vec<f64>; 3] = std::array::from_fn(|j| {
        (-r..=r)
            .map(|n| weight.component(j).eval(n as f64 / b as f64))
            .collect()
    });
    let slices: Vec<f64> = (-r + 1..r)
        .into_par_iter()
        .map(|x1| {
            let mut s = CompensatedSum::default();
            let w1 = w[0][(x1 + r) as usize];
            if w1 == 0.0 {
                return 0.0;
            }
            for x2 in -r + 1..r {
                let w12 = w1 * w[1][(x2 + r) as usize];
                if w12 == 0.0 {
                    continue;
                }
                let row = form.row_in_x3(x1, x2);
                for x3 in -r + 1..r {
                    let c = match mode {
                        CharacterMode::Trivial => 1,
                        CharacterMode::Jacobi => {
                            let t = x3 as i128;
                            let v =
                                (((row[4] * t + row[3]) * t + row[2]) * t + row[1]) * t + row[0];
                            chi.eval(v)
                        }
                    };
                    if c != 0 {
                        s.add(c as f64 * w12 * w[2][(x3 + r) as usize]);
                    }
                }
            }
            s.value()
        })
        .collect();
    Ok(pairwise_sum(&slices))
}
