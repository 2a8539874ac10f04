//! Square-sieve toolkit for counting integral points on `y^2 = F(x1, x2, x3)`
//! with `F` an integral ternary quartic form.

pub mod arith;
pub mod charsum;
pub mod cli;
pub mod form;
pub mod poisson;
pub mod sieve;

pub use arith::{jacobi, CharTable, DyadicWindow, PrimeCache};
pub use charsum::{
    charsum_multiplicative, charsum_naive, charsum_prime_reduced, dual_charsum_closed,
    dual_charsum_naive, CharSumValue, FrequencyConvention,
};
pub use form::{parse_form, LatticeTriple, QuarticForm};
pub use poisson::{osc_integral, poisson_check, BumpWeight, CharacterMode, PoissonReport};
pub use sieve::{brute_count, sieve_rhs, term_budget, CountReport, SievePlan};
