//! Python bindings for `sqsieve`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyComplex, PyDict};

use sqsieve::charsum::{self, CharSumValue};
use sqsieve::poisson::{self, BumpWeight, CharacterMode};
use sqsieve::sieve;
use sqsieve::LatticeTriple;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn complex<'py>(py: Python<'py>, v: &CharSumValue) -> Bound<'py, PyComplex> {
    PyComplex::from_doubles(py, v.re, v.im)
}

fn triple(x: (i64, i64, i64)) -> LatticeTriple {
    LatticeTriple::new(x.0, x.1, x.2)
}

/// Integral ternary quartic form.
#[pyclass(
    frozen,
    skip_from_py_object,
    name = "QuarticForm",
    module = "sqsieve_py"
)]
#[derive(Clone)]
pub struct PyQuarticForm {
    inner: sqsieve::QuarticForm,
}

#[pymethods]
impl PyQuarticForm {
    /// Parses a JSON object mapping "i,j,k" exponent keys to coefficients.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        parse_form(text)
    }

    #[staticmethod]
    fn klein() -> Self {
        Self {
            inner: sqsieve::QuarticForm::klein(),
        }
    }

    #[staticmethod]
    fn diagonal_example() -> Self {
        Self {
            inner: sqsieve::QuarticForm::diagonal_example(),
        }
    }

    fn evaluate(&self, x1: i64, x2: i64, x3: i64) -> PyResult<i128> {
        self.inner
            .evaluate(LatticeTriple::new(x1, x2, x3))
            .map_err(value_err)
    }

    fn evaluate_mod(&self, x1: i64, x2: i64, x3: i64, m: u64) -> PyResult<u64> {
        if m == 0 {
            return Err(PyValueError::new_err("modulus must be positive"));
        }
        Ok(self.inner.evaluate_mod(LatticeTriple::new(x1, x2, x3), m))
    }

    fn is_diagonal_zero(&self) -> bool {
        self.inner.is_diagonal_zero()
    }

    #[pyo3(signature = (p, budget = 101))]
    fn is_smooth_mod_p(&self, p: u64, budget: u64) -> PyResult<bool> {
        self.inner.is_smooth_mod_p(p, budget).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("QuarticForm({})", self.inner.to_json())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn parse_form(text: &str) -> PyResult<PyQuarticForm> {
    sqsieve::parse_form(text)
        .map(|inner| PyQuarticForm { inner })
        .map_err(value_err)
}

/// Jacobi symbol `(a / m)` for odd positive `m`.
#[pyfunction]
fn jacobi(a: i128, m: i128) -> PyResult<i8> {
    sqsieve::jacobi(a, m).map_err(value_err)
}

#[pyfunction]
fn charsum_naive<'py>(
    py: Python<'py>,
    form: &PyQuarticForm,
    m: u64,
    x: (i64, i64, i64),
) -> PyResult<Bound<'py, PyComplex>> {
    let v = charsum::charsum_naive(&form.inner, m, triple(x)).map_err(value_err)?;
    Ok(complex(py, &v))
}

/// Exact integer value of the character sum at an odd prime.
#[pyfunction]
fn charsum_prime_reduced(form: &PyQuarticForm, p: u64, x: (i64, i64, i64)) -> PyResult<i128> {
    let v = charsum::charsum_prime_reduced(&form.inner, p, triple(x)).map_err(value_err)?;
    Ok(v.exact.expect("prime evaluator is exact"))
}

#[pyfunction]
fn charsum_multiplicative(
    form: &PyQuarticForm,
    m: u64,
    factors: Vec<u64>,
    x: (i64, i64, i64),
) -> PyResult<i128> {
    let v =
        charsum::charsum_multiplicative(&form.inner, m, &factors, triple(x), Default::default())
            .map_err(value_err)?;
    Ok(v.exact.expect("product of exact values"))
}

#[pyfunction]
fn dual_charsum_naive<'py>(
    py: Python<'py>,
    form: &PyQuarticForm,
    p: u64,
    x: (i64, i64, i64),
) -> PyResult<Bound<'py, PyComplex>> {
    let v = charsum::dual_charsum_naive(&form.inner, p, triple(x)).map_err(value_err)?;
    Ok(complex(py, &v))
}

#[pyfunction]
fn dual_charsum_closed(form: &PyQuarticForm, p: u64, x: (i64, i64, i64)) -> PyResult<i128> {
    let v = charsum::dual_charsum_closed(&form.inner, p, triple(x)).map_err(value_err)?;
    Ok(v.exact.expect("closed form is exact"))
}

#[pyfunction]
fn charsum_prime_square_trivial(p: u64, x: (i64, i64, i64)) -> i128 {
    charsum::charsum_prime_square_trivial(p, triple(x))
}

/// Number of `x` in `[-B, B]^3` with `F(x)` a perfect square.
#[pyfunction]
fn brute_count(py: Python<'_>, form: &PyQuarticForm, b: u64) -> PyResult<u64> {
    let f = form.inner.clone();
    py.detach(move || sieve::brute_count(&f, b))
        .map(|r| r.exact_count)
        .map_err(value_err)
}

#[pyfunction]
fn term_budget<'py>(py: Python<'py>, b: f64, p1: f64, p2: f64) -> PyResult<Bound<'py, PyDict>> {
    let t = sieve::term_budget(b, p1, p2).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("t1", t.t1)?;
    d.set_item("t2", t.t2)?;
    d.set_item("t3", t.t3)?;
    d.set_item("t4", t.t4)?;
    d.set_item("max_term", t.max_term)?;
    d.set_item("predicted_exponent", t.predicted_exponent)?;
    Ok(d)
}

#[pyfunction]
fn bump_eval(t: f64) -> f64 {
    poisson::bump_eval(t)
}

#[pyfunction]
#[pyo3(signature = (m, x, b, tol = 1e-12))]
fn osc_integral<'py>(
    py: Python<'py>,
    m: u64,
    x: (i64, i64, i64),
    b: u64,
    tol: f64,
) -> PyResult<Bound<'py, PyComplex>> {
    let v =
        poisson::osc_integral(&BumpWeight::canonical(), m, triple(x), b, tol).map_err(value_err)?;
    Ok(PyComplex::from_doubles(py, v.value.re, v.value.im))
}

/// Both sides of the Poisson identity; returns a dict with `lhs`, `rhs_re`,
/// `rhs_im`, `rel_error` and `truncation`.
#[pyfunction]
#[pyo3(signature = (form, q, q_prime, b, truncation = None, tol = 1e-12, trivial = false))]
#[allow(clippy::too_many_arguments)]
fn poisson_check<'py>(
    py: Python<'py>,
    form: &PyQuarticForm,
    q: u64,
    q_prime: u64,
    b: u64,
    truncation: Option<u64>,
    tol: f64,
    trivial: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = if trivial {
        CharacterMode::Trivial
    } else {
        CharacterMode::Jacobi
    };
    let f = form.inner.clone();
    let r = py
        .detach(move || {
            poisson::poisson_check(
                &f,
                q,
                q_prime,
                b,
                &BumpWeight::canonical(),
                truncation,
                tol,
                mode,
            )
        })
        .map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("lhs", r.lhs)?;
    d.set_item("rhs_re", r.rhs_re)?;
    d.set_item("rhs_im", r.rhs_im)?;
    d.set_item("rel_error", r.rel_error)?;
    d.set_item("truncation", r.truncation)?;
    d.set_item("quadrature_tol", r.quadrature_tol)?;
    Ok(d)
}

#[pymodule]
fn sqsieve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuarticForm>()?;
    m.add_function(wrap_pyfunction!(parse_form, m)?)?;
    m.add_function(wrap_pyfunction!(jacobi, m)?)?;
    m.add_function(wrap_pyfunction!(charsum_naive, m)?)?;
    m.add_function(wrap_pyfunction!(charsum_prime_reduced, m)?)?;
    m.add_function(wrap_pyfunction!(charsum_multiplicative, m)?)?;
    m.add_function(wrap_pyfunction!(dual_charsum_naive, m)?)?;
    m.add_function(wrap_pyfunction!(dual_charsum_closed, m)?)?;
    m.add_function(wrap_pyfunction!(charsum_prime_square_trivial, m)?)?;
    m.add_function(wrap_pyfunction!(brute_count, m)?)?;
    m.add_function(wrap_pyfunction!(term_budget, m)?)?;
    m.add_function(wrap_pyfunction!(bump_eval, m)?)?;
    m.add_function(wrap_pyfunction!(osc_integral, m)?)?;
    m.add_function(wrap_pyfunction!(poisson_check, m)?)?;
    Ok(())
}
