//! Square sieve over composite moduli `p1 p2`.
//!
//! Counts `N(B)` exactly by enumeration, evaluates the detector and the
//! sieve right-hand side, splits the smoothed off-diagonal sum into its
//! coprime and non-coprime parts, evaluates the four-term inclusion-exclusion
//! of the coprime part, and optimizes the final four-term budget.
//!
//! Enumeration runs `x1` slices in parallel. Integer accumulators are exact;
//! real accumulators are summed per slice and then pairwise across slices in
//! slice order, so results do not depend on the worker count.

use std::time::Instant;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{
    gcd, is_prime_u64, is_square_i128, primes_in, CharTable, DyadicWindow, PrimeCache,
};
use crate::form::{FormError, QuarticForm};
use crate::poisson::BumpWeight;

#[derive(Debug, Error)]
pub enum SieveError {
    #[error("degenerate plan: {0}")]
    DegeneratePlan(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error("prime cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// Sieve parameters and the two prime lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SievePlan {
    pub b: u64,
    pub eps: f64,
    pub c: f64,
    pub p1: f64,
    pub p2: f64,
    pub q: f64,
    pub primes1: Vec<u64>,
    pub primes2: Vec<u64>,
    /// `P2 >= C log B` and `10 P2 <= P1`.
    pub admissible: bool,
    /// Prime lists were given explicitly rather than derived from `B`.
    pub forced: bool,
}

fn odd_primes(window: DyadicWindow, cache: Option<&PrimeCache>) -> Result<Vec<u64>, SieveError> {
    let primes = match cache {
        Some(c) => c.primes(window)?,
        None => primes_in(window),
    };
    // Jacobi symbols need odd moduli
    Ok(primes.into_iter().filter(|&p| p != 2).collect())
}

impl SievePlan {
    /// Whether `P2 >= C log B` and `10 P2 <= P1`.
    pub fn check_admissible(b: u64, c: f64, p1: f64, p2: f64) -> bool {
        p2 >= c * (b as f64).ln() && 10.0 * p2 <= p1
    }

    /// `P1 = B^{3/5 - eps}`, `P2 = P1^{1/2 + eps}` with primes from `[P, 2P]`.
    pub fn new(b: u64, eps: f64, c: f64) -> Result<Self, SieveError> {
        Self::with_cache(b, eps, c, None)
    }

    pub fn with_cache(
        b: u64,
        eps: f64,
        c: f64,
        cache: Option<&PrimeCache>,
    ) -> Result<Self, SieveError> {
        if b < 2 {
            return Err(SieveError::InvalidInput(format!(
                "B = {b} must be at least 2"
            )));
        }
        if !(eps.is_finite() && (0.0..0.5).contains(&eps)) || !(c.is_finite() && c > 0.0) {
            return Err(SieveError::InvalidInput(format!(
                "need 0 <= eps < 1/2 and C > 0 (got eps = {eps}, C = {c})"
            )));
        }
        let p1 = (b as f64).powf(0.6 - eps);
        let p2 = p1.powf(0.5 + eps);
        let window = |p: f64| {
            DyadicWindow::around(p, 2.0)
                .map_err(|e| SieveError::DegeneratePlan(format!("{e}: raise B or lower C")))
        };
        let primes1 = odd_primes(window(p1)?, cache)?;
        let mut primes2 = odd_primes(window(p2)?, cache)?;
        primes2.retain(|p| !primes1.contains(p));
        if primes1.is_empty() || primes2.is_empty() {
            return Err(SieveError::DegeneratePlan(format!(
                "no odd primes in [{p1:.3}, {:.3}] or [{p2:.3}, {:.3}]; raise B or lower C",
                2.0 * p1,
                2.0 * p2
            )));
        }
        Ok(Self {
            b,
            eps,
            c,
            p1,
            p2,
            q: p1 * p2,
            primes1,
            primes2,
            admissible: Self::check_admissible(b, c, p1, p2),
            forced: false,
        })
    }

    /// Plan with explicit prime lists, for identity checks at small `B`.
    /// `P1` and `P2` are the smallest primes of each list.
    pub fn forced(
        b: u64,
        primes1: Vec<u64>,
        primes2: Vec<u64>,
        c: f64,
    ) -> Result<Self, SieveError> {
        for &p in primes1.iter().chain(&primes2) {
            if p % 2 == 0 || !is_prime_u64(p) {
                return Err(SieveError::InvalidInput(format!("{p} is not an odd prime")));
            }
        }
        if primes1.is_empty() || primes2.is_empty() {
            return Err(SieveError::DegeneratePlan("empty prime list".into()));
        }
        if primes1.iter().any(|p| primes2.contains(p)) {
            return Err(SieveError::InvalidInput("prime lists overlap".into()));
        }
        let mut primes1 = primes1;
        let mut primes2 = primes2;
        primes1.sort_unstable();
        primes1.dedup();
        primes2.sort_unstable();
        primes2.dedup();
        let p1 = primes1[0] as f64;
        let p2 = primes2[0] as f64;
        Ok(Self {
            b,
            eps: 0.0,
            c,
            p1,
            p2,
            q: p1 * p2,
            admissible: b >= 2 && Self::check_admissible(b, c, p1, p2),
            primes1,
            primes2,
            forced: true,
        })
    }

    /// Composite moduli `q = p1 p2`, ordered by `(p1, p2)`.
    pub fn moduli(&self) -> Vec<(u64, u64)> {
        self.primes1
            .iter()
            .flat_map(|&a| self.primes2.iter().map(move |&b| (a, b)))
            .collect()
    }

    fn tables(&self) -> (Vec<CharTable>, Vec<CharTable>) {
        let t = |ps: &[u64]| {
            ps.iter()
                .map(|&p| CharTable::new(p).expect("odd prime"))
                .collect()
        };
        (t(&self.primes1), t(&self.primes2))
    }
}

/// Result of a counting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub b: u64,
    pub exact_count: u64,
    pub sieve_rhs: Option<f64>,
    pub ratio: Option<f64>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub count_seconds: f64,
    pub sieve_seconds: Option<f64>,
}

fn check_width(form: &QuarticForm, radius: u64) -> Result<(), SieveError> {
    if !form.fits_i128(radius) {
        return Err(SieveError::Form(FormError::Overflow(
            crate::form::LatticeTriple::new(radius as i64, radius as i64, radius as i64),
        )));
    }
    Ok(())
}

/// Calls `visit(x3, F(x1, x2, x3))` for `x3` in `lo..=hi`, stepping by
/// forward differences.
#[inline]
fn for_each_in_row(
    form: &QuarticForm,
    x1: i64,
    x2: i64,
    lo: i64,
    hi: i64,
    mut visit: impl FnMut(i64, i128),
) {
    let a = form.row_in_x3(x1, x2);
    let f = |t: i128| (((a[4] * t + a[3]) * t + a[2]) * t + a[1]) * t + a[0];
    let t0 = lo as i128;
    let v = [f(t0), f(t0 + 1), f(t0 + 2), f(t0 + 3), f(t0 + 4)];
    let mut d0 = v[0];
    let mut d1 = v[1] - v[0];
    let mut d2 = v[2] - 2 * v[1] + v[0];
    let mut d3 = v[3] - 3 * v[2] + 3 * v[1] - v[0];
    let d4 = v[4] - 4 * v[3] + 6 * v[2] - 4 * v[1] + v[0];
    for x3 in lo..=hi {
        visit(x3, d0);
        d0 += d1;
        d1 += d2;
        d2 += d3;
        d3 += d4;
    }
}

/// Number of `x` in `[-B, B]^3` with `F(x) = y^2` for some integer `y`
/// (`F(x) = 0` counts).
pub fn brute_count(form: &QuarticForm, b: u64) -> Result<CountReport, SieveError> {
    check_width(form, b)?;
    let start = Instant::now();
    let bi = b as i64;
    let exact_count = (-bi..=bi)
        .into_par_iter()
        .map(|x1| count_slice(form, x1, bi))
        .sum();
    Ok(CountReport {
        b,
        exact_count,
        sieve_rhs: None,
        ratio: None,
        timings: Timings {
            count_seconds: start.elapsed().as_secs_f64(),
            sieve_seconds: None,
        },
    })
}

fn count_slice(form: &QuarticForm, x1: i64, b: i64) -> u64 {
    let mut n = 0u64;
    for x2 in -b..=b {
        for_each_in_row(form, x1, x2, -b, b, |_, v| {
            n += is_square_i128(v) as u64;
        });
    }
    n
}

/// Points per second per worker for `brute_count`-style enumeration at
/// radius `b`, measured on `slices` slices of `x1`.
pub fn count_throughput(form: &QuarticForm, b: u64, slices: u64) -> Result<f64, SieveError> {
    check_width(form, b)?;
    let bi = b as i64;
    let start = Instant::now();
    let mut total = 0u64;
    for x1 in 0..slices as i64 {
        total += count_slice(form, x1 - bi, bi);
    }
    std::hint::black_box(total);
    let points = slices as f64 * (2.0 * b as f64 + 1.0).powi(2);
    Ok(points / start.elapsed().as_secs_f64())
}

/// `sum_{p1, p2} (n / p1 p2)`, evaluated as `(sum_p1 (n/p1)) (sum_p2 (n/p2))`.
pub fn detector(n: i128, plan: &SievePlan) -> i64 {
    let s = |ps: &[u64]| -> i64 {
        ps.iter()
            .map(|&p| crate::arith::jacobi(n, p as i128).expect("odd prime") as i64)
            .sum()
    };
    s(&plan.primes1) * s(&plan.primes2)
}

/// Sieve right-hand side over the box and its diagonal split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieveRhs {
    /// `(1/Q^2) sum_x D(F(x))^2`.
    pub value: f64,
    /// `q = q'` part, normalized by `1/Q^2`.
    pub diagonal: f64,
    /// `q != q'` part, normalized by `1/Q^2`; may be negative.
    pub off_diagonal: f64,
    /// Unnormalized `sum_x D(F(x))^2`.
    pub raw_sum: u128,
    /// Unnormalized `q = q'` part.
    pub raw_diagonal: u128,
    /// Points with `F(x)` a nonzero square coprime to every plan prime.
    pub coprime_squares: u64,
    /// `coprime_squares * (|primes1| |primes2|)^2 / Q^2`, a proven lower
    /// bound for `value`.
    pub coprime_square_floor: f64,
}

pub fn sieve_rhs(form: &QuarticForm, plan: &SievePlan) -> Result<SieveRhs, SieveError> {
    check_width(form, plan.b)?;
    let (t1, t2) = plan.tables();
    let b = plan.b as i64;
    let n1 = plan.primes1.len() as i64;
    let n2 = plan.primes2.len() as i64;
    let (raw_sum, raw_diagonal, coprime_squares) = (-b..=b)
        .into_par_iter()
        .map(|x1| {
            let mut acc = (0u128, 0u128, 0u64);
            for x2 in -b..=b {
                for_each_in_row(form, x1, x2, -b, b, |_, v| {
                    let (mut s1, mut a1, mut s2, mut a2) = (0i64, 0i64, 0i64, 0i64);
                    for t in &t1 {
                        let c = t.eval(v) as i64;
                        s1 += c;
                        a1 += c * c;
                    }
                    for t in &t2 {
                        let c = t.eval(v) as i64;
                        s2 += c;
                        a2 += c * c;
                    }
                    let d = s1 * s2;
                    acc.0 += (d * d) as u128;
                    acc.1 += (a1 * a2) as u128;
                    if v > 0 && a1 == n1 && a2 == n2 && is_square_i128(v) {
                        acc.2 += 1;
                    }
                });
            }
            acc
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let q2 = plan.q * plan.q;
    let full = ((n1 * n2) as f64).powi(2);
    Ok(SieveRhs {
        value: raw_sum as f64 / q2,
        diagonal: raw_diagonal as f64 / q2,
        off_diagonal: (raw_sum as i128 - raw_diagonal as i128) as f64 / q2,
        raw_sum,
        raw_diagonal,
        coprime_squares,
        coprime_square_floor: coprime_squares as f64 * full / q2,
    })
}

/// Exact count and sieve bound together.
pub fn count_with_sieve(
    form: &QuarticForm,
    plan: &SievePlan,
) -> Result<(CountReport, SieveRhs), SieveError> {
    let mut report = brute_count(form, plan.b)?;
    let start = Instant::now();
    let rhs = sieve_rhs(form, plan)?;
    report.sieve_rhs = Some(rhs.value);
    report.ratio = (report.exact_count > 0).then(|| rhs.value / report.exact_count as f64);
    report.timings.sieve_seconds = Some(start.elapsed().as_secs_f64());
    Ok((report, rhs))
}

/// Pairwise sum of per-slice partials, independent of how slices were
/// scheduled.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

const TINY_PRIMES: usize = 4;
const TINY_B: u64 = 60;

fn check_tiny(plan: &SievePlan) -> Result<(), SieveError> {
    if plan.primes1.len() > TINY_PRIMES || plan.primes2.len() > TINY_PRIMES || plan.b > TINY_B {
        return Err(SieveError::BudgetExceeded(format!(
            "direct evaluation needs at most {TINY_PRIMES} primes per window and B <= {TINY_B}"
        )));
    }
    Ok(())
}

/// Smoothed sums over `x in Z^3` weighted by `W(x/B)`, normalized by `1/Q^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainSum {
    /// `S(Q, B)`: pairs with `q != q'`.
    pub total: f64,
    /// Pairs with `(q, q') = 1`.
    pub sharp: f64,
    /// Pairs with `q != q'` and `(q, q') > 1`.
    pub flat: f64,
    /// Pairs with `q = q'`.
    pub diagonal: f64,
    /// `q != q'` sum with the weight replaced by the indicator of `[-B, B]^3`.
    pub box_total: f64,
    /// `q != q'` sum over points outside `[-B, B]^3`, weighted by `W`.
    pub boundary: f64,
    /// Number of `(q, q')` pairs with `q = q'`.
    pub diagonal_pairs: u64,
}

/// Per-axis weights `W_j(n/B)` for `n` in `(-2B, 2B)`.
fn axis_weights(weight: &BumpWeight, b: u64) -> [Vec<f64>; 3] {
    let r = 2 * b as i64;
    std::array::from_fn(|j| {
        (-r..=r)
            .map(|n| weight.component(j).eval(n as f64 / b as f64))
            .collect()
    })
}

/// Direct evaluation of the smoothed off-diagonal sum, looping over every
/// pair `(q, q')` and evaluating the Jacobi symbol at the composite modulus
/// `q q'` itself.
pub fn mainsum_direct(
    form: &QuarticForm,
    plan: &SievePlan,
    weight: &BumpWeight,
) -> Result<MainSum, SieveError> {
    check_tiny(plan)?;
    let b = plan.b as i64;
    let r = 2 * b;
    check_width(form, r as u64)?;
    let w = axis_weights(weight, plan.b);
    let qs: Vec<u64> = plan.moduli().iter().map(|&(a, c)| a * c).collect();
    #[derive(Clone, Copy, PartialEq, Eq)]
    enum Kind {
        Diagonal,
        Sharp,
        Flat,
    }
    let pairs: Vec<(u64, Kind)> = qs
        .iter()
        .flat_map(|&q| {
            qs.iter().map(move |&qp| {
                let kind = if q == qp {
                    Kind::Diagonal
                } else if gcd(q, qp) == 1 {
                    Kind::Sharp
                } else {
                    Kind::Flat
                };
                (q * qp, kind)
            })
        })
        .collect();
    let diagonal_pairs = pairs.iter().filter(|p| p.1 == Kind::Diagonal).count() as u64;

    // [sharp, flat, diagonal, box_offdiag, boundary]
    let slices: Vec<[f64; 5]> = (-r + 1..r)
        .into_par_iter()
        .map(|x1| {
            let mut acc = [0.0f64; 5];
            let w1 = w[0][(x1 + r) as usize];
            for x2 in -r + 1..r {
                let w12 = w1 * w[1][(x2 + r) as usize];
                if w12 == 0.0 {
                    continue;
                }
                for_each_in_row(form, x1, x2, -r + 1, r - 1, |x3, v| {
                    let wt = w12 * w[2][(x3 + r) as usize];
                    if wt == 0.0 {
                        return;
                    }
                    let (mut sharp, mut flat, mut diag) = (0i64, 0i64, 0i64);
                    for &(m, kind) in &pairs {
                        let c = crate::arith::jacobi_u64(crate::arith::reduce_i128(v, m), m) as i64;
                        match kind {
                            Kind::Sharp => sharp += c,
                            Kind::Flat => flat += c,
                            Kind::Diagonal => diag += c,
                        }
                    }
                    acc[0] += wt * sharp as f64;
                    acc[1] += wt * flat as f64;
                    acc[2] += wt * diag as f64;
                    let off = (sharp + flat) as f64;
                    if x1.abs() <= b && x2.abs() <= b && x3.abs() <= b {
                        acc[3] += off;
                    } else {
                        acc[4] += wt * off;
                    }
                });
            }
            acc
        })
        .collect();
    let col = |i: usize| pairwise_sum(&slices.iter().map(|s| s[i]).collect::<Vec<_>>());
    let q2 = plan.q * plan.q;
    let (sharp, flat) = (col(0) / q2, col(1) / q2);
    Ok(MainSum {
        total: sharp + flat,
        sharp,
        flat,
        diagonal: col(2) / q2,
        box_total: col(3) / q2,
        boundary: col(4) / q2,
        diagonal_pairs,
    })
}

/// The coprime part of the smoothed sum and its four inclusion-exclusion
/// pieces, each with the normalization `1/Q^2`:
///
/// * `s1`: all `(p1, p2, p1', p2')`,
/// * `s2`: `p2' = p2`,
/// * `s3`: `p1' = p1`,
/// * `s4`: `p1' = p1` and `p2' = p2`,
/// * `sharp`: `p1' != p1` and `p2' != p2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpTerms {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub sharp: f64,
}

impl SharpTerms {
    /// `s1 - s2 - s3 + s4`, which equals `sharp`.
    pub fn inclusion_exclusion(&self) -> f64 {
        self.s1 - self.s2 - self.s3 + self.s4
    }

    /// `s1 - s2 - s3 + 2 s4`; exceeds `sharp` by exactly `s4`.
    pub fn doubled_overlap(&self) -> f64 {
        self.s1 - self.s2 - self.s3 + 2.0 * self.s4
    }

    /// `|s3| / (P1^2 P2^3)` and `|s4| / (P1^2 P2^2)`.
    pub fn bound_ratios(&self, plan: &SievePlan) -> (f64, f64) {
        let (a, b) = (plan.p1, plan.p2);
        (
            self.s3.abs() / (a * a * b.powi(3)),
            self.s4.abs() / (a * a * b * b),
        )
    }
}

/// Evaluates the four pieces from their definitions, one prime quadruple
/// at a time, using `(n / q q') = (n/p1)(n/p2)(n/p1')(n/p2')`.
pub fn decompose_sharp_terms(
    form: &QuarticForm,
    plan: &SievePlan,
    weight: &BumpWeight,
) -> Result<SharpTerms, SieveError> {
    check_tiny(plan)?;
    let r = 2 * plan.b as i64;
    check_width(form, r as u64)?;
    let w = axis_weights(weight, plan.b);
    let (t1, t2) = plan.tables();
    let slices: Vec<[f64; 5]> = (-r + 1..r)
        .into_par_iter()
        .map(|x1| {
            let mut acc = [0.0f64; 5];
            let mut c1 = vec![0i64; t1.len()];
            let mut c2 = vec![0i64; t2.len()];
            let w1 = w[0][(x1 + r) as usize];
            for x2 in -r + 1..r {
                let w12 = w1 * w[1][(x2 + r) as usize];
                if w12 == 0.0 {
                    continue;
                }
                for_each_in_row(form, x1, x2, -r + 1, r - 1, |x3, v| {
                    let wt = w12 * w[2][(x3 + r) as usize];
                    if wt == 0.0 {
                        return;
                    }
                    for (c, t) in c1.iter_mut().zip(&t1) {
                        *c = t.eval(v) as i64;
                    }
                    for (c, t) in c2.iter_mut().zip(&t2) {
                        *c = t.eval(v) as i64;
                    }
                    let mut s = [0i64; 5];
                    for (i, &a) in c1.iter().enumerate() {
                        for (j, &bb) in c2.iter().enumerate() {
                            for (k, &ap) in c1.iter().enumerate() {
                                for (l, &bp) in c2.iter().enumerate() {
                                    let term = a * bb * ap * bp;
                                    s[0] += term;
                                    if l == j {
                                        s[1] += term;
                                    }
                                    if k == i {
                                        s[2] += term;
                                    }
                                    if k == i && l == j {
                                        s[3] += term;
                                    }
                                    if k != i && l != j {
                                        s[4] += term;
                                    }
                                }
                            }
                        }
                    }
                    for (a, v) in acc.iter_mut().zip(s) {
                        *a += wt * v as f64;
                    }
                });
            }
            acc
        })
        .collect();
    let q2 = plan.q * plan.q;
    let col = |i: usize| pairwise_sum(&slices.iter().map(|s| s[i]).collect::<Vec<_>>()) / q2;
    Ok(SharpTerms {
        s1: col(0),
        s2: col(1),
        s3: col(2),
        s4: col(3),
        sharp: col(4),
    })
}

/// The four terms `B^3/(P1 P2)`, `P1^2 P2^3`, `B^3/P2^3`, `P1^3/P2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermBudget {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub max_term: f64,
    pub predicted_exponent: f64,
}

pub fn term_budget(b: f64, p1: f64, p2: f64) -> Result<TermBudget, SieveError> {
    if !(b > 1.0 && p1 > 0.0 && p2 > 0.0) {
        return Err(SieveError::InvalidInput(format!(
            "need B > 1 and positive P1, P2 (got {b}, {p1}, {p2})"
        )));
    }
    // log space keeps B^3 finite for large B
    let (lb, l1, l2) = (b.ln(), p1.ln(), p2.ln());
    let logs = [
        3.0 * lb - l1 - l2,
        2.0 * l1 + 3.0 * l2,
        3.0 * lb - 3.0 * l2,
        3.0 * l1 - l2,
    ];
    let max_log = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(TermBudget {
        t1: logs[0].exp(),
        t2: logs[1].exp(),
        t3: logs[2].exp(),
        t4: logs[3].exp(),
        max_term: max_log.exp(),
        predicted_exponent: max_log / lb,
    })
}

/// Exponents of the four terms in base `B` for `P1 = B^a`, `P2 = B^b`,
/// in exact rational arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentBudget {
    pub p1_exp: Ratio<i64>,
    pub p2_exp: Ratio<i64>,
    pub terms: [Ratio<i64>; 4],
}

impl ExponentBudget {
    pub fn new(p1_exp: Ratio<i64>, p2_exp: Ratio<i64>) -> Self {
        let three = Ratio::from_integer(3);
        let (a, b) = (p1_exp, p2_exp);
        Self {
            p1_exp,
            p2_exp,
            terms: [three - a - b, a * 2 + b * 3, three - b * 3, a * 3 - b],
        }
    }

    pub fn dominant(&self) -> Ratio<i64> {
        *self.terms.iter().max().expect("four terms")
    }
}

/// One point of the `P2` exponent scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub p2_exponent: f64,
    pub p1_exponent: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub dominant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetScan {
    pub rows: Vec<BudgetRow>,
    pub argmin_p2_exponent: f64,
    pub min_exponent: f64,
}

/// Scans `P2 = B^b` for `b = lo, lo + step, .., hi` (given in hundredths,
/// so the grid is exact) with `P1 = P2^k`, returning the first minimizer
/// of the dominant exponent.
pub fn optimize_p2_exponent(
    lo: i64,
    hi: i64,
    step: i64,
    k: Ratio<i64>,
) -> Result<BudgetScan, SieveError> {
    if step <= 0 || hi < lo {
        return Err(SieveError::InvalidInput("empty exponent grid".into()));
    }
    let mut rows = Vec::new();
    let mut best: Option<(Ratio<i64>, Ratio<i64>)> = None;
    let f = |r: Ratio<i64>| *r.numer() as f64 / *r.denom() as f64;
    let mut n = lo;
    while n <= hi {
        let b = Ratio::new(n, 100);
        let budget = ExponentBudget::new(b * k, b);
        let d = budget.dominant();
        if best.is_none_or(|(_, e)| d < e) {
            best = Some((b, d));
        }
        let t = budget.terms;
        rows.push(BudgetRow {
            p2_exponent: f(b),
            p1_exponent: f(b * k),
            e1: f(t[0]),
            e2: f(t[1]),
            e3: f(t[2]),
            e4: f(t[3]),
            dominant: f(d),
        });
        n += step;
    }
    let (b, e) = best.expect("non-empty grid");
    Ok(BudgetScan {
        rows,
        argmin_p2_exponent: f(b),
        min_exponent: f(e),
    })
}

/// Least-squares fit of `log N(B)` against `log B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<(u64, u64)>,
    pub residuals: Vec<f64>,
    /// Grid points dropped because `N(B) = 0`.
    pub excluded: Vec<u64>,
}

/// Fits `log N = slope log B + intercept` over points with `N > 0`.
pub fn fit_loglog(points: &[(f64, u64)]) -> Result<(f64, f64, Vec<f64>), SieveError> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0)
        .map(|&(b, n)| (b.ln(), (n as f64).ln()))
        .collect();
    if used.len() < 2 {
        return Err(SieveError::InvalidInput(
            "need two points with N > 0".into(),
        ));
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / k;
    let my = used.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(SieveError::InvalidInput(
            "grid has a single distinct B".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = used
        .iter()
        .map(|p| p.1 - (slope * p.0 + intercept))
        .collect();
    Ok((slope, intercept, residuals))
}

pub fn exponent_fit(form: &QuarticForm, b_grid: &[u64]) -> Result<ExponentFit, SieveError> {
    if b_grid.len() < 4 || b_grid.windows(2).any(|w| w[0] >= w[1]) || b_grid[0] == 0 {
        return Err(SieveError::InvalidInput(
            "B grid must be strictly ascending, positive, with at least 4 points".into(),
        ));
    }
    let mut points = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        points.push((b, brute_count(form, b)?.exact_count));
    }
    let excluded: Vec<u64> = points.iter().filter(|p| p.1 == 0).map(|p| p.0).collect();
    for b in &excluded {
        log::warn!("N({b}) = 0 excluded from the fit");
    }
    let as_f: Vec<(f64, u64)> = points.iter().map(|&(b, n)| (b as f64, n)).collect();
    let (slope, intercept, residuals) = fit_loglog(&as_f)?;
    Ok(ExponentFit {
        slope,
        intercept,
        points,
        residuals,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::jacobi;
    use crate::form::LatticeTriple;

    fn f0() -> QuarticForm {
        QuarticForm::klein()
    }

    fn naive_count(form: &QuarticForm, b: i64) -> u64 {
        let mut n = 0;
        for x1 in -b..=b {
            for x2 in -b..=b {
                for x3 in -b..=b {
                    let v = form.evaluate(LatticeTriple::new(x1, x2, x3)).unwrap();
                    if v >= 0 && crate::arith::exact_isqrt(v).unwrap().1 {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn plan_exponent_arithmetic() {
        let plan = SievePlan::new(1 << 20, 0.0, 1.0).unwrap();
        assert!((plan.p1 - 4096.0).abs() < 1e-6);
        assert!((plan.p2 - 64.0).abs() < 1e-6);
        assert!(plan.admissible);
        assert!(plan.primes1.iter().all(|&p| (4096..=8192).contains(&p)));
        assert!(plan.primes2.iter().all(|&p| (64..=128).contains(&p)));
        assert_eq!(plan.primes2.first(), Some(&67));
    }

    #[test]
    fn small_b_plans_are_inadmissible() {
        let plan = SievePlan::new(10, 0.0, 1.0).unwrap();
        assert!(!plan.admissible);
        assert!(plan.p2 < (10f64).ln());
        assert!(plan.primes1.iter().all(|p| !plan.primes2.contains(p)));
    }

    #[test]
    fn degenerate_and_invalid_plans() {
        assert!(matches!(
            SievePlan::new(1, 0.0, 1.0),
            Err(SieveError::InvalidInput(_))
        ));
        assert!(matches!(
            SievePlan::new(3, 0.0, 1.0),
            Err(SieveError::DegeneratePlan(_))
        ));
        assert!(SievePlan::new(100, 0.7, 1.0).is_err());
        assert!(SievePlan::forced(10, vec![3, 4], vec![7], 1.0).is_err());
        assert!(SievePlan::forced(10, vec![3, 5], vec![5], 1.0).is_err());
        assert!(SievePlan::forced(10, vec![], vec![5], 1.0).is_err());
    }

    #[test]
    fn admissibility_flag_tracks_inequalities() {
        let mut b = 100u64;
        while b < 2_000_000 {
            for eps in [0.0, 0.01, 0.05] {
                let plan = SievePlan::new(b, eps, 1.0).unwrap();
                let holds = 10.0 * plan.p2 <= plan.p1 && plan.p2 >= (b as f64).ln();
                assert_eq!(plan.admissible, holds, "B={b} eps={eps}");
            }
            b = b * 3 / 2;
        }
    }

    #[test]
    fn brute_count_examples() {
        let fdiag = QuarticForm::diagonal_example();
        assert_eq!(brute_count(&fdiag, 1).unwrap().exact_count, 21);
        assert_eq!(brute_count(&fdiag, 0).unwrap().exact_count, 1);
        assert_eq!(brute_count(&f0(), 0).unwrap().exact_count, 1);
        for b in [2u64, 3, 5] {
            assert_eq!(
                brute_count(&fdiag, b).unwrap().exact_count,
                naive_count(&fdiag, b as i64)
            );
            assert_eq!(
                brute_count(&f0(), b).unwrap().exact_count,
                naive_count(&f0(), b as i64)
            );
        }
    }

    #[test]
    fn brute_count_overflow_guard() {
        let big = QuarticForm::from_terms([((3, 1, 0), i64::MAX)]).unwrap();
        assert!(matches!(
            brute_count(&big, 1 << 20),
            Err(SieveError::Form(FormError::Overflow(_)))
        ));
    }

    #[test]
    fn forward_differences_match_direct_evaluation() {
        let f = QuarticForm::from_terms([
            ((4, 0, 0), 3),
            ((1, 1, 2), -7),
            ((0, 0, 4), 5),
            ((0, 1, 3), 2),
        ])
        .unwrap();
        for_each_in_row(&f, 4, -9, -30, 30, |x3, v| {
            assert_eq!(v, f.evaluate(LatticeTriple::new(4, -9, x3)).unwrap());
        });
    }

    #[test]
    fn detector_examples() {
        let plan = SievePlan::forced(20, vec![3, 5], vec![7, 11], 1.0).unwrap();
        let full = (plan.primes1.len() * plan.primes2.len()) as i64;
        assert_eq!(detector(4, &plan), full);
        assert_eq!(detector(1, &plan), full);
        assert_eq!(detector(0, &plan), 0);
        let mut state = 12345u64;
        for _ in 0..100 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let n = (state >> 16) as i128 - (1 << 46);
            let double: i64 = plan
                .moduli()
                .iter()
                .map(|&(a, b)| jacobi(n, (a * b) as i128).unwrap() as i64)
                .sum();
            assert_eq!(detector(n, &plan), double, "n={n}");
        }
    }

    #[test]
    fn sieve_rhs_bounds_and_split() {
        let plan = SievePlan::forced(12, vec![3, 5], vec![7], 1.0).unwrap();
        let rhs = sieve_rhs(&f0(), &plan).unwrap();
        assert!(rhs.value >= rhs.coprime_square_floor);
        assert!((rhs.diagonal + rhs.off_diagonal - rhs.value).abs() < 1e-9 * rhs.value);
        // recompute the raw sum directly from the detector
        let b = plan.b as i64;
        let mut raw = 0u128;
        for x1 in -b..=b {
            for x2 in -b..=b {
                for x3 in -b..=b {
                    let d = detector(f0().eval_i128(x1, x2, x3), &plan);
                    raw += (d * d) as u128;
                }
            }
        }
        assert_eq!(rhs.raw_sum, raw);
    }

    #[test]
    fn term_budget_at_optimum() {
        let b = 1e6f64;
        let tb = term_budget(b, b.powf(0.6), b.powf(0.3)).unwrap();
        assert!((tb.predicted_exponent - 2.1).abs() < 1e-12);
        assert!((tb.t1 / tb.t2 - 1.0).abs() < 1e-9);
        let e = ExponentBudget::new(Ratio::new(3, 5), Ratio::new(3, 10));
        assert_eq!(e.terms[0], Ratio::new(21, 10));
        assert_eq!(e.terms[1], Ratio::new(21, 10));
        assert_eq!(e.dominant(), Ratio::new(21, 10));
        assert!(term_budget(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn p1_at_p2_squared_is_the_t1_t3_boundary() {
        let b = Ratio::new(1, 5);
        let at = ExponentBudget::new(b * 2, b);
        assert_eq!(at.terms[0], at.terms[2]);
        let below = ExponentBudget::new(b * 2 - Ratio::new(1, 100), b);
        assert!(below.terms[0] > below.terms[2]);
    }

    #[test]
    fn optimizer_grid() {
        let scan = optimize_p2_exponent(10, 50, 1, Ratio::from_integer(2)).unwrap();
        assert_eq!(scan.rows.len(), 41);
        assert!((scan.argmin_p2_exponent - 0.30).abs() < 1e-12);
        assert!((scan.min_exponent - 2.1).abs() < 1e-12);
        assert!(optimize_p2_exponent(50, 10, 1, Ratio::from_integer(2)).is_err());
    }

    #[test]
    fn loglog_fit_properties() {
        let flat = [(8.0, 5u64), (16.0, 5), (32.0, 5), (64.0, 5)];
        assert!(fit_loglog(&flat).unwrap().0.abs() < 1e-12);
        let pts = [(8.0, 300u64), (16.0, 1100), (32.0, 4500), (64.0, 17000)];
        let (s, _, _) = fit_loglog(&pts).unwrap();
        let scaled: Vec<(f64, u64)> = pts.iter().map(|&(b, n)| (b * 7.5, n)).collect();
        assert!((fit_loglog(&scaled).unwrap().0 - s).abs() < 1e-12);
        let with_zero = [(4.0, 0u64), (8.0, 8), (16.0, 32)];
        assert!((fit_loglog(&with_zero).unwrap().0 - 2.0).abs() < 1e-12);
        assert!(exponent_fit(&f0(), &[1, 2, 3]).is_err());
        assert!(exponent_fit(&f0(), &[1, 3, 2, 4]).is_err());
    }

    #[test]
    fn pairwise_sum_is_order_stable() {
        let v: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(pairwise_sum(&v), pairwise_sum(&v));
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn mainsum_budget_guard() {
        let w = BumpWeight::canonical();
        let plan = SievePlan::forced(61, vec![3], vec![5], 1.0).unwrap();
        assert!(matches!(
            mainsum_direct(&f0(), &plan, &w),
            Err(SieveError::BudgetExceeded(_))
        ));
        let plan = SievePlan::forced(10, vec![3, 5, 7, 11, 13], vec![17], 1.0).unwrap();
        assert!(decompose_sharp_terms(&f0(), &plan, &w).is_err());
    }

    #[test]
    fn single_pair_degenerate_decomposition() {
        let plan = SievePlan::forced(6, vec![3], vec![5], 1.0).unwrap();
        let t = decompose_sharp_terms(&f0(), &plan, &BumpWeight::canonical()).unwrap();
        assert_eq!(t.s1, t.s2);
        assert_eq!(t.s1, t.s3);
        assert_eq!(t.s1, t.s4);
        assert_eq!(t.sharp, 0.0);
        assert_eq!(t.inclusion_exclusion(), 0.0);
        assert_eq!(t.doubled_overlap(), t.s4);
    }

    #[test]
    fn mainsum_small_identities() {
        let plan = SievePlan::forced(8, vec![3, 5], vec![7, 11], 1.0).unwrap();
        let w = BumpWeight::canonical();
        let m = mainsum_direct(&f0(), &plan, &w).unwrap();
        assert!((m.sharp + m.flat - m.total).abs() <= 1e-12 * m.total.abs().max(1.0));
        assert!((m.total - m.box_total - m.boundary).abs() <= 1e-9 * m.total.abs().max(1.0));
        let t = decompose_sharp_terms(&f0(), &plan, &w).unwrap();
        assert!((t.sharp - m.sharp).abs() <= 1e-9 * m.sharp.abs().max(1.0));
        assert!((t.inclusion_exclusion() - t.sharp).abs() <= 1e-9 * t.sharp.abs().max(1.0));
        assert_eq!(m.diagonal_pairs, 4);
        let cube = (4.0 * plan.b as f64 + 1.0).powi(3);
        assert!(m.diagonal <= m.diagonal_pairs as f64 * cube / (plan.q * plan.q));
    }
}
