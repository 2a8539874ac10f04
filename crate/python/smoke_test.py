"""Smoke test for the sqsieve_py extension module."""

import sqsieve_py as sq


def main():
    f0 = sq.QuarticForm.klein()
    fd = sq.QuarticForm.diagonal_example()
    assert sq.parse_form('{"3,1,0": 1, "0,3,1": 1, "1,0,3": 1}') == f0
    assert f0.evaluate(1, 1, 1) == 3
    assert f0.evaluate_mod(1, 1, 1, 3) == 0
    assert f0.is_diagonal_zero() and not fd.is_diagonal_zero()
    assert sq.jacobi(2, 15) == 1

    assert sq.charsum_prime_reduced(f0, 3, (0, 0, 0)) == -6
    assert abs(sq.charsum_naive(f0, 3, (0, 0, 0)) + 6) < 1e-9
    assert sq.charsum_multiplicative(f0, 15, [3, 5], (1, 2, 3)) == round(
        sq.charsum_naive(f0, 15, (1, 2, 3)).real
    )
    assert sq.dual_charsum_closed(f0, 3, (1, 1, 0)) == 27
    assert abs(sq.dual_charsum_naive(f0, 3, (1, 1, 1))) < 1e-9
    assert sq.charsum_prime_square_trivial(3, (9, 0, 18)) == 3**6

    assert sq.brute_count(fd, 1) == 21
    assert sq.brute_count(fd, 0) == 1

    t = sq.term_budget(2.0**40, 2.0**24, 2.0**12)
    assert abs(t["predicted_exponent"] - 2.1) < 1e-12

    assert sq.bump_eval(0.5) == 1.0 and sq.bump_eval(2.5) == 0.0
    assert abs(sq.osc_integral(15, (0, 0, 0), 40) - 27.0) < 1e-9
    r = sq.poisson_check(f0, 3, 7, 20)
    assert r["rel_error"] < 1e-6, r

    try:
        sq.jacobi(3, 4)
    except ValueError:
        pass
    else:
        raise AssertionError("even modulus accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
