//! Acceptance suite: one line per criterion, nonzero exit if any hard
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqsieve::arith::{is_prime_u64, jacobi};
use sqsieve::charsum::{
    cancellation_scan, charsum_multiplicative, charsum_naive, charsum_prime_reduced,
    charsum_prime_square_trivial, dual_charsum_naive, sample_frequencies, FrequencyConvention,
};
use sqsieve::poisson::{poisson_check, BumpWeight, CharacterMode};
use sqsieve::sieve::{
    brute_count, count_throughput, decompose_sharp_terms, exponent_fit, mainsum_direct,
    optimize_p2_exponent, term_budget, ExponentBudget, SievePlan,
};
use sqsieve::{LatticeTriple, QuarticForm};

type Outcome = Result<(bool, String), String>;
/// Name, check, and whether a failure fails the suite.
type Criterion = (&'static str, fn() -> Outcome, bool);

fn odd_primes_below(n: u64) -> Vec<u64> {
    (3..n).filter(|&p| is_prime_u64(p)).collect()
}

/// `a^((p-1)/2) mod p` by repeated multiplication, mapped to {-1, 0, 1}.
fn euler(a: u64, p: u64) -> i8 {
    let mut r = 1u64;
    for _ in 0..(p - 1) / 2 {
        r = r * (a % p) % p;
    }
    match r {
        0 => 0,
        1 => 1,
        r if r == p - 1 => -1,
        _ => panic!("{p} is not prime"),
    }
}

fn legendre_of_value(v: i128, p: u64) -> i8 {
    euler(v.rem_euclid(p as i128) as u64, p)
}

/// `sum_{b mod p} (F(b)/p) e(b . x / p)` with floating-point exponentials.
fn charsum_float_oracle(f: &QuarticForm, p: u64, x: LatticeTriple) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    let pi = p as i64;
    for b1 in 0..pi {
        for b2 in 0..pi {
            for b3 in 0..pi {
                let chi = legendre_of_value(f.eval_i128(b1, b2, b3), p) as f64;
                let t = (b1 * x.x1 + b2 * x.x2 + b3 * x.x3).rem_euclid(pi) as f64 / p as f64;
                let a = std::f64::consts::TAU * t;
                re += chi * a.cos();
                im += chi * a.sin();
            }
        }
    }
    (re, im)
}

fn jacobi_euler() -> Outcome {
    let mut checked = 0;
    for p in odd_primes_below(200) {
        for a in 0..p {
            let j = jacobi(a as i128, p as i128).map_err(|e| e.to_string())?;
            if j != euler(a, p) {
                return Ok((false, format!("mismatch at a={a}, p={p}")));
            }
            checked += 1;
        }
    }
    Ok((true, format!("{checked} pairs")))
}

fn charsum_oracle() -> Outcome {
    let f0 = QuarticForm::klein();
    let mut max_dev = 0.0f64;
    let mut max_float_dev = 0.0f64;
    for p in [3u64, 5, 7, 11, 13] {
        let pi = p as i64;
        for a in 0..pi {
            for b in 0..pi {
                for c in 0..pi {
                    let x = LatticeTriple::new(a, b, c);
                    let fast = charsum_prime_reduced(&f0, p, x).map_err(|e| e.to_string())?;
                    let slow = charsum_naive(&f0, p, x).map_err(|e| e.to_string())?;
                    max_dev = max_dev.max(fast.distance(&slow));
                    if p <= 5 {
                        let (re, im) = charsum_float_oracle(&f0, p, x);
                        max_float_dev = max_float_dev.max((fast.re - re).hypot(fast.im - im));
                    }
                }
            }
        }
    }
    let anchor = charsum_naive(&f0, 3, LatticeTriple::ZERO).map_err(|e| e.to_string())?;
    let anchor_ok = (anchor.re + 6.0).abs() < 1e-9 && anchor.im.abs() < 1e-9;
    Ok((
        max_dev <= 1e-9 && max_float_dev <= 1e-9 && anchor_ok,
        format!(
            "max |reduced - naive| = {max_dev:e}, vs float oracle {max_float_dev:e}, c(3,0) = {}",
            anchor.re
        ),
    ))
}

fn multiplicativity() -> Outcome {
    let f0 = QuarticForm::klein();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut max_dev = 0.0f64;
    for (m, factors) in [(15u64, [3u64, 5]), (21, [3, 7]), (35, [5, 7])] {
        for s in 0..200 {
            let x = if s == 0 {
                LatticeTriple::ZERO
            } else {
                let mi = m as i64;
                LatticeTriple::new(
                    rng.random_range(0..mi),
                    rng.random_range(0..mi),
                    rng.random_range(0..mi),
                )
            };
            let direct = charsum_naive(&f0, m, x).map_err(|e| e.to_string())?;
            for conv in [
                FrequencyConvention::Direct,
                FrequencyConvention::CofactorInverse,
            ] {
                let prod =
                    charsum_multiplicative(&f0, m, &factors, x, conv).map_err(|e| e.to_string())?;
                max_dev = max_dev.max(direct.distance(&prod));
            }
        }
    }
    Ok((
        max_dev <= 1e-9,
        format!("max deviation {max_dev:e} over 600 frequencies, both conventions"),
    ))
}

fn dual_collapse() -> Outcome {
    let f0 = QuarticForm::klein();
    let mut bad = 0;
    let mut max_frac = 0.0f64;
    for p in [3u64, 5, 7] {
        for x in sample_frequencies(p, 50, 0) {
            let v = dual_charsum_naive(&f0, p, x).map_err(|e| e.to_string())?;
            let (r, frac) = v.rounded();
            max_frac = max_frac.max(frac);
            let expect =
                (p as i128).pow(3) * legendre_of_value(f0.eval_i128(x.x1, x.x2, x.x3), p) as i128;
            bad += (r != expect) as usize;
        }
    }
    let at = |x| {
        dual_charsum_naive(&f0, 3, x)
            .map(|v| v.rounded().0)
            .map_err(|e| e.to_string())
    };
    let a = at(LatticeTriple::new(1, 1, 1))?;
    let b = at(LatticeTriple::new(1, 1, 0))?;
    Ok((
        bad == 0 && max_frac <= 1e-9 && a == 0 && b == 27,
        format!("{bad} of 150 mismatches, max rounding {max_frac:e}, C(3,(1,1,1)) = {a}, C(3,(1,1,0)) = {b}"),
    ))
}

fn cancellation() -> Outcome {
    let f0 = QuarticForm::klein();
    let rows = cancellation_scan(&f0, &odd_primes_below(98), 200, 0).map_err(|e| e.to_string())?;
    let (mut max, mut at) = (0.0f64, 0);
    for r in &rows {
        if r.ratio_to_p32 > max {
            max = r.ratio_to_p32;
            at = r.p;
        }
    }
    Ok((
        max <= 27.0,
        format!(
            "empirical max |c(p,x)|/p^1.5 = {max:.4} at p = {at} ({} samples)",
            rows.len()
        ),
    ))
}

fn prime_square() -> Outcome {
    for p in [3u64, 5] {
        let m = (p * p) as i64;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    // direct sum over b in (Z/p^2)^3, accumulated by phase
                    let mut weights = vec![0i64; m as usize];
                    for b1 in 0..m {
                        for b2 in 0..m {
                            let partial = b1 * a + b2 * b;
                            for b3 in 0..m {
                                weights[(partial + b3 * c).rem_euclid(m) as usize] += 1;
                            }
                        }
                    }
                    let (mut re, mut im) = (0.0, 0.0);
                    for (k, &w) in weights.iter().enumerate() {
                        let t = std::f64::consts::TAU * k as f64 / m as f64;
                        re += w as f64 * t.cos();
                        im += w as f64 * t.sin();
                    }
                    let expect = charsum_prime_square_trivial(p, LatticeTriple::new(a, b, c));
                    if (re - expect as f64).abs() > 1e-6
                        || im.abs() > 1e-6
                        || re.round() as i128 != expect
                    {
                        return Ok((
                            false,
                            format!("p = {p}, x = ({a},{b},{c}): {re} vs {expect}"),
                        ));
                    }
                }
            }
        }
    }
    Ok((true, "all x mod p^2 for p = 3, 5".into()))
}

fn poisson_matrix() -> Outcome {
    let f0 = QuarticForm::klein();
    let w = BumpWeight::canonical();
    let (mut max_rel, mut max_double, mut max_trivial) = (0.0f64, 0.0f64, 0.0f64);
    for (q, qp) in [(3, 5), (3, 7), (5, 7)] {
        for b in [40, 60] {
            let r = poisson_check(&f0, q, qp, b, &w, None, 1e-12, CharacterMode::Jacobi)
                .map_err(|e| e.to_string())?;
            let d = poisson_check(
                &f0,
                q,
                qp,
                b,
                &w,
                Some(2 * r.truncation),
                1e-12,
                CharacterMode::Jacobi,
            )
            .map_err(|e| e.to_string())?;
            let change =
                (d.rhs_re - r.rhs_re).hypot(d.rhs_im - r.rhs_im) / r.rhs_re.hypot(r.rhs_im);
            let t = poisson_check(&f0, q, qp, b, &w, None, 1e-12, CharacterMode::Trivial)
                .map_err(|e| e.to_string())?;
            max_rel = max_rel.max(r.rel_error);
            max_double = max_double.max(change);
            max_trivial = max_trivial.max(t.rel_error);
        }
    }
    Ok((
        max_rel <= 1e-6 && max_double <= 1e-8 && max_trivial <= 1e-8,
        format!("max rel_error {max_rel:e}, doubling change {max_double:e}, trivial character {max_trivial:e}"),
    ))
}

fn naive_count(f: &QuarticForm, b: i64) -> u64 {
    let mut n = 0;
    for x1 in -b..=b {
        for x2 in -b..=b {
            for x3 in -b..=b {
                let v = f.eval_i128(x1, x2, x3);
                if v >= 0 {
                    let r = (v as f64).sqrt().round() as i128;
                    n += ((r - 1..=r + 1).any(|s| s >= 0 && s * s == v)) as u64;
                }
            }
        }
    }
    n
}

fn counting() -> Outcome {
    let fd = QuarticForm::diagonal_example();
    let n1 = brute_count(&fd, 1).map_err(|e| e.to_string())?.exact_count;
    let oracle_ok = n1 == 21
        && naive_count(&fd, 1) == 21
        && brute_count(&fd, 6).unwrap().exact_count == naive_count(&fd, 6);
    let grid = [8u64, 16, 32, 64];
    let fit = exponent_fit(&fd, &grid).map_err(|e| e.to_string())?;
    let floor_ok = fit.points.iter().all(|&(b, n)| n >= (2 * b + 1).pow(2));
    let slope_ok = (1.8..=2.3).contains(&fit.slope);
    Ok((
        oracle_ok && floor_ok && slope_ok,
        format!(
            "N(1) = {n1}, N(B) >= (2B+1)^2: {floor_ok}, slope {:.4}, counts {:?}",
            fit.slope, fit.points
        ),
    ))
}

fn four_term() -> Outcome {
    let f0 = QuarticForm::klein();
    let plan = SievePlan::forced(30, vec![3, 5], vec![7, 11], 1.0).map_err(|e| e.to_string())?;
    let w = BumpWeight::canonical();
    let t = decompose_sharp_terms(&f0, &plan, &w).map_err(|e| e.to_string())?;
    let direct = mainsum_direct(&f0, &plan, &w).map_err(|e| e.to_string())?;
    let scale = t.sharp.abs();
    let ie = (t.inclusion_exclusion() - t.sharp).abs() / scale;
    let vs_direct = (direct.sharp - t.sharp).abs() / scale;
    let doubled = ((t.doubled_overlap() - t.sharp) - t.s4).abs() / t.s4.abs();
    Ok((
        ie <= 1e-9 && vs_direct <= 1e-9 && doubled <= 1e-9,
        format!(
            "S# = {:.6}, |S1-S2-S3+S4 - S#|/|S#| = {ie:e}, vs direct pairs {vs_direct:e}; +2 S4 overshoots by S4 = {:.6}",
            t.sharp, t.s4
        ),
    ))
}

fn optimizer() -> Outcome {
    let scan = optimize_p2_exponent(5, 50, 1, Ratio::from_integer(2)).map_err(|e| e.to_string())?;
    let choice = ExponentBudget::new(Ratio::new(3, 5), Ratio::new(3, 10));
    let target = Ratio::new(21, 10);
    let exact_ok =
        choice.terms[0] == target && choice.terms[1] == target && choice.dominant() == target;
    let b = 2f64.powi(40);
    let tb = term_budget(b, b.powf(0.6), b.powf(0.3)).map_err(|e| e.to_string())?;
    let log_ok = ((tb.t1.ln() - tb.t2.ln()) / b.ln()).abs() < 1e-12
        && (tb.predicted_exponent - 2.1).abs() < 1e-12;
    let argmin_ok = (scan.argmin_p2_exponent - 0.30).abs() <= 0.01 + 1e-12;
    Ok((
        argmin_ok && exact_ok && log_ok,
        format!(
            "argmin {} with exponent {}, t1 = t2 = B^{} at (3/5, 3/10)",
            scan.argmin_p2_exponent, scan.min_exponent, choice.terms[0]
        ),
    ))
}

fn throughput() -> Outcome {
    let fd = QuarticForm::diagonal_example();
    let rate = count_throughput(&fd, 500, 16).map_err(|e| e.to_string())?;
    Ok((
        rate >= 1e7,
        format!("{rate:.3e} point evaluations/s on one core (target 1e7, not hard-failed)"),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Jacobi-Euler agreement", jacobi_euler, true),
        ("character-sum oracle", charsum_oracle, true),
        ("multiplicativity", multiplicativity, true),
        ("dual collapse", dual_collapse, true),
        ("cancellation monitor", cancellation, true),
        ("prime-square collapse", prime_square, true),
        ("Poisson identity", poisson_matrix, true),
        ("counting ground truth", counting, true),
        ("four-term decomposition", four_term, true),
        ("parameter optimizer", optimizer, true),
        ("performance floor", throughput, false),
    ];
    let mut failed = 0;
    for (i, (name, run, hard)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        let status = match (passed, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        if !passed && *hard {
            failed += 1;
        }
        println!(
            "criterion {:>2} {status} {name}: {detail} [{:.2} s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} hard criteria passed", 10 - failed, 10);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
