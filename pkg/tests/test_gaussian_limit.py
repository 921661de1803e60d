import math

import numpy as np
import pytest

from potts_recon import ChannelParams, InvalidParameters
from potts_recon.exact_oracle import exact_moments
from potts_recon.gaussian_limit import (GaussianLimitSpec, GInterpolant, default_gh_points,
                                        eval_g, find_fixed_point, monotonicity_check, psi,
                                        taylor_check, taylor_coefficients, verify_u_moments)


@pytest.mark.parametrize("q", [3, 4, 5, 6])
def test_mean_and_covariance_structure(q):
    spec = GaussianLimitSpec(q)
    # sum of means vanishes, Sigma has the all-ones vector in its kernel
    assert spec.mu.sum() == pytest.approx(-q / (q - 1) * (q - 1) + q / 2 - (q - 1) * q / 2)
    assert np.allclose(spec.sigma @ np.ones(q), 0.0)
    ev = np.linalg.eigvalsh(spec.sigma)
    assert ev[0] == pytest.approx(0, abs=1e-12)
    assert np.allclose(ev[1:], q * q / (q - 1))
    k = q - 1
    assert np.allclose(spec.diff_cov, q * q / (q - 1) * (np.eye(k) + np.ones((k, k))))
    assert spec.diff_mean == pytest.approx(-q * q / (q - 1))


def test_psi_softmax():
    assert psi([0.0, 0.0, 0.0]) == pytest.approx(1 / 3)
    assert psi([800.0, 0.0]) == pytest.approx(1.0)
    assert psi([-800.0, 0.0]) == pytest.approx(0.0)


def test_gh_point_caps():
    assert [default_gh_points(q) for q in (3, 4, 5, 6)] == [60, 60, 27, 14]


def test_g_at_zero_and_domain():
    assert eval_g(3, 0.0)[0] == 0.0
    with pytest.raises(InvalidParameters):
        eval_g(3, 0.7)
    with pytest.raises(InvalidParameters):
        eval_g(3, -0.1)


def test_g_at_s_max_equals_one_minus_one_over_q_approx():
    # at s = (q-1)/q the map is at most its trivial bound
    g, _ = eval_g(3, 2 / 3)
    assert 0 < g < 2 / 3


def test_g_known_value():
    # independent two-dimensional integration by scipy's dblquad
    from scipy import integrate

    s = 0.3
    rs = math.sqrt(s)

    def f(y, x):
        den = 1 + math.exp(-4.5 * s + 3 * rs * x) + \
            math.exp(-4.5 * s + 1.5 * rs * x + 1.5 * math.sqrt(3) * rs * y)
        return math.exp(-(x * x + y * y) / 2) / (2 * math.pi) / den

    ref, _ = integrate.dblquad(f, -9, 9, -9, 9, epsabs=1e-12)
    g, err = eval_g(3, s)
    assert g == pytest.approx(ref - 1 / 3, abs=1e-9)
    assert err < 1e-9


@pytest.mark.parametrize("q,s", [(3, 0.1), (3, 0.5), (5, 0.2), (4, 0.6)])
def test_monte_carlo_agrees_with_quadrature(q, s):
    gq, eq = eval_g(q, s)
    gm, em = eval_g(q, s, method="monte_carlo", samples=1_000_000, seed=3)
    assert abs(gq - gm) <= em + eq


def test_monte_carlo_deterministic():
    a = eval_g(3, 0.2, method="monte_carlo", samples=200_000, seed=1)
    b = eval_g(3, 0.2, method="monte_carlo", samples=200_000, seed=1)
    assert a == b


def test_vectorised_matches_scalar():
    s = np.array([0.05, 0.2, 0.4])
    v, e = eval_g(4, s)
    for k in range(3):
        assert v[k] == eval_g(4, float(s[k]))[0]


def test_taylor_coefficients_closed_form():
    assert taylor_coefficients(3)[1] == pytest.approx(-0.75)
    assert taylor_coefficients(4)[1] == 0.0
    assert taylor_coefficients(5)[1] == pytest.approx(0.625)
    assert taylor_coefficients(6)[1] == pytest.approx(1.2)


@pytest.mark.parametrize("q", [3, 4, 5, 6])
def test_taylor_fit(q):
    rep = taylor_check(q)
    assert rep.passed, rep.to_json()


def test_taylor_grid_checked():
    with pytest.raises(InvalidParameters):
        taylor_check(3, s_grid=[0.01, 0.1])


@pytest.mark.parametrize("q", [3, 5])
def test_monotone(q):
    assert monotonicity_check(q).passed


def test_interpolant_error_envelope():
    f = GInterpolant.build(3, degree=40)
    probe = np.array([0.05, 0.21, 0.47, 0.6])
    g, _ = eval_g(3, probe)
    assert np.all(np.abs(f(probe) - g) <= f.err(probe))


def test_q3_has_no_nonzero_fixed_point():
    fp = find_fixed_point(3)
    assert fp.c_q is None
    assert fp.certificates["g_below_identity"]["max_g_minus_s_plus_err"] < 0


@pytest.mark.slow
def test_q5_fixed_point():
    fp = find_fixed_point(5)
    assert fp.c_q < 1
    assert abs(fp.w_star - fp.w_star_direct) < 1e-3
    assert fp.w_bracket[1] - fp.w_bracket[0] <= 1e-3
    g, _ = eval_g(5, fp.w_star_direct * fp.s_star)
    assert g == pytest.approx(fp.s_star, abs=1e-6)
    gr, _ = eval_g(5, fp.s_root)
    assert gr == pytest.approx(fp.s_root, abs=1e-4)


def test_u_moments_large_d():
    params = ChannelParams.from_lambda_hat(3, 200, 0.9)
    rep = verify_u_moments(params, 1)
    assert rep.passed
    # residuals shrink relative to the leading term as d grows
    small = verify_u_moments(ChannelParams.from_lambda_hat(3, 20, 0.9), 1)
    assert rep.checks[0].lhs < small.checks[0].lhs


def test_one_step_large_d_close_to_g():
    # level 1 of the exact recursion approaches g_q(lambda_hat^2 x_0) as d grows
    lh = 0.8
    target = eval_g(3, lh**2 * 2 / 3)[0]
    errs = [abs(exact_moments(ChannelParams.from_lambda_hat(3, d, lh), 1)[1].x_n - target)
            for d in (40, 160, 320)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.0035
