import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate

from dyadscope.gaussians import (
    Gaussian1D,
    GaussianD,
    Mixture2,
    GaussianError,
    ImproperGaussianError,
    NotPositiveDefiniteError,
    multiply,
    divide,
    mgf_scalar,
    mgf_bilinear,
    project_mixture,
    expit_gauss,
    clamp,
    PRECISION_CEILING,
)


def _pdf(m, v, x):
    return np.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(2 * math.pi * v)


# ---------------------------------------------------------------------------
# multiply / divide


def test_multiply_standard_normals():
    g = multiply(Gaussian1D.from_moments(0, 1), Gaussian1D.from_moments(0, 1))
    assert g.precision == pytest.approx(2.0)
    assert g.mean == pytest.approx(0.0)
    assert g.variance == pytest.approx(0.5)


def test_multiply_matches_quadrature():
    rng = np.random.default_rng(101)
    for _ in range(20):
        m1, m2 = rng.normal(size=2) * 3
        v1, v2 = rng.uniform(0.2, 4.0, size=2)
        g = multiply(Gaussian1D.from_moments(m1, v1), Gaussian1D.from_moments(m2, v2))
        # integrate in a window around the product mean so quad keeps precision
        lo, hi = g.mean - 12 * math.sqrt(g.variance), g.mean + 12 * math.sqrt(g.variance)
        f = lambda x: _pdf(m1, v1, x) * _pdf(m2, v2, x)
        z, _ = integrate.quad(f, lo, hi)
        mean, _ = integrate.quad(lambda x: x * f(x) / z, lo, hi)
        ex2, _ = integrate.quad(lambda x: x * x * f(x) / z, lo, hi)
        assert g.mean == pytest.approx(mean, abs=1e-8)
        assert g.variance == pytest.approx(ex2 - mean**2, abs=1e-8)


def test_divide_roundtrip():
    rng = np.random.default_rng(77)
    for _ in range(20):
        a = Gaussian1D(rng.uniform(0.1, 5), rng.normal())
        b = Gaussian1D(rng.uniform(0.1, 5), rng.normal())
        c = divide(multiply(a, b), b)
        assert c.precision == pytest.approx(a.precision)
        assert c.precision_mean == pytest.approx(a.precision_mean)


def test_divide_can_be_improper():
    a = Gaussian1D.from_moments(0.0, 2.0)
    b = Gaussian1D.from_moments(0.0, 1.0)
    cav = divide(a, b)
    assert not cav.is_proper
    with pytest.raises(ImproperGaussianError):
        _ = cav.mean


def test_multivariate_multiply_divide():
    rng = np.random.default_rng(5)
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 3))
        ga = GaussianD.from_moments(rng.normal(size=3), A @ A.T + 0.5 * np.eye(3))
        gb = GaussianD.from_moments(rng.normal(size=3), B @ B.T + 0.5 * np.eye(3))
        prod = multiply(ga, gb)
        back = divide(prod, gb)
        np.testing.assert_allclose(back.precision, ga.precision, atol=1e-12)
        np.testing.assert_allclose(back.precision_mean, ga.precision_mean, atol=1e-12)


def test_kind_and_dim_mismatch_rejected():
    g1 = Gaussian1D.from_moments(0, 1)
    g2 = GaussianD.from_moments([0, 0], np.eye(2))
    g3 = GaussianD.from_moments([0, 0, 0], np.eye(3))
    with pytest.raises(GaussianError):
        multiply(g1, g2)
    with pytest.raises(GaussianError):
        divide(g2, g3)


def test_uniform_is_identity_for_multiply():
    g = Gaussian1D.from_moments(1.5, 0.3)
    u = Gaussian1D.uniform()
    out = multiply(g, u)
    assert out.precision == g.precision and out.precision_mean == g.precision_mean


# ---------------------------------------------------------------------------
# scalar MGF  log E[exp(-y theta)]


def test_mgf_scalar_frozen_values():
    # -y*m + v/2:  (y=+1, m=1, v=2) -> 0 ;  (y=-1, m=0.5, v=1) -> 1.0
    assert mgf_scalar(Gaussian1D.from_moments(1.0, 2.0), +1) == pytest.approx(0.0)
    assert mgf_scalar(Gaussian1D.from_moments(0.5, 1.0), -1) == pytest.approx(1.0)


def test_mgf_scalar_matches_monte_carlo():
    rng = np.random.default_rng(42)
    for _ in range(10):
        m = rng.normal() * 2
        v = rng.uniform(0.1, 1.5)
        y = int(rng.choice([-1, 1]))
        draws = rng.normal(m, math.sqrt(v), size=400_000)
        est = np.mean(np.exp(-y * draws))
        se = np.std(np.exp(-y * draws)) / math.sqrt(len(draws))
        got = math.exp(mgf_scalar(Gaussian1D.from_moments(m, v), y))
        assert abs(got - est) < 4 * se + 1e-12


def test_mgf_scalar_rejects_bad_inputs():
    with pytest.raises(GaussianError):
        mgf_scalar(Gaussian1D.from_moments(0, 1), 0)
    with pytest.raises(ImproperGaussianError):
        mgf_scalar(Gaussian1D.uniform(), 1)


# ---------------------------------------------------------------------------
# bilinear MGF  log E[exp(-y u.v)]


def test_mgf_bilinear_zero_mean_1d_closed_form():
    # E[exp(-y u v)] = (1 - ab)^(-1/2) for u~N(0,a), v~N(0,b), any y
    for a in [0.05, 0.3, 0.7, 0.95]:
        for b in [0.05, 0.5, 0.99]:
            gu = GaussianD.from_moments([0.0], [[a]])
            gv = GaussianD.from_moments([0.0], [[b]])
            want = -0.5 * math.log1p(-a * b)
            for y in (-1, 1):
                assert mgf_bilinear(gu, gv, y) == pytest.approx(want, abs=1e-9)


def test_mgf_bilinear_symmetry_in_arguments():
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = int(rng.integers(1, 4))
        A = rng.normal(size=(d, d)) * 0.4
        B = rng.normal(size=(d, d)) * 0.4
        gu = GaussianD.from_moments(rng.normal(size=d), A @ A.T + 0.1 * np.eye(d))
        gv = GaussianD.from_moments(rng.normal(size=d), B @ B.T + 0.1 * np.eye(d))
        for y in (-1, 1):
            try:
                lhs = mgf_bilinear(gu, gv, y)
            except NotPositiveDefiniteError:
                with pytest.raises(NotPositiveDefiniteError):
                    mgf_bilinear(gv, gu, y)
                continue
            rhs = mgf_bilinear(gv, gu, y)
            assert lhs == pytest.approx(rhs, abs=1e-9)


def test_mgf_bilinear_matches_monte_carlo():
    rng = np.random.default_rng(2024)
    for _ in range(6):
        d = 2
        A = rng.normal(size=(d, d)) * 0.3
        B = rng.normal(size=(d, d)) * 0.3
        Su = A @ A.T + 0.05 * np.eye(d)
        Sv = B @ B.T + 0.05 * np.eye(d)
        mu = rng.normal(size=d) * 0.5
        mv = rng.normal(size=d) * 0.5
        gu = GaussianD.from_moments(mu, Su)
        gv = GaussianD.from_moments(mv, Sv)
        y = int(rng.choice([-1, 1]))
        n = 600_000
        us = rng.multivariate_normal(mu, Su, size=n)
        vs = rng.multivariate_normal(mv, Sv, size=n)
        w = np.exp(-y * np.sum(us * vs, axis=1))
        est, se = float(np.mean(w)), float(np.std(w)) / math.sqrt(n)
        got = math.exp(mgf_bilinear(gu, gv, y))
        assert abs(got - est) < 5 * se + 5e-4


def test_mgf_bilinear_divergence_raises():
    gu = GaussianD.from_moments([0.0, 0.0], 2.0 * np.eye(2))
    gv = GaussianD.from_moments([0.0, 0.0], 0.9 * np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        mgf_bilinear(gu, gv, -1)  # spectral radius 1.8 >= 1


# ---------------------------------------------------------------------------
# mixture projection


def test_project_mixture_frozen_example():
    mix = Mixture2(
        base=Gaussian1D.from_moments(0.0, 1.0),
        shifted=Gaussian1D.from_moments(-1.0, 1.0),
        log_weight=0.0,
    )
    out = project_mixture(mix)
    assert out.mean == pytest.approx(-0.5)
    assert out.variance == pytest.approx(1.25)


def test_project_mixture_against_quadrature():
    rng = np.random.default_rng(314)
    for _ in range(25):
        m1, m2 = rng.normal(size=2) * 2
        v1, v2 = rng.uniform(0.3, 3.0, size=2)
        log_c = rng.normal() * 2
        out = project_mixture(
            Mixture2(Gaussian1D.from_moments(m1, v1), Gaussian1D.from_moments(m2, v2), log_c)
        )
        c = math.exp(log_c)
        f = lambda x: _pdf(m1, v1, x) + c * _pdf(m2, v2, x)
        z, _ = integrate.quad(f, -50, 50, limit=200)
        mean, _ = integrate.quad(lambda x: x * f(x) / z, -50, 50, limit=200)
        ex2, _ = integrate.quad(lambda x: x * x * f(x) / z, -50, 50, limit=200)
        assert out.mean == pytest.approx(mean, abs=1e-6)
        assert out.variance == pytest.approx(ex2 - mean**2, abs=1e-6)


def test_project_mixture_multivariate_against_monte_carlo():
    rng = np.random.default_rng(99)
    for _ in range(5):
        d = 2
        A = rng.normal(size=(d, d)) * 0.5
        B = rng.normal(size=(d, d)) * 0.5
        S1 = A @ A.T + 0.2 * np.eye(d)
        S2 = B @ B.T + 0.2 * np.eye(d)
        m1 = rng.normal(size=d)
        m2 = rng.normal(size=d)
        log_c = float(rng.normal())
        out = project_mixture(
            Mixture2(GaussianD.from_moments(m1, S1), GaussianD.from_moments(m2, S2), log_c)
        )
        w2 = 1.0 / (1.0 + math.exp(-log_c))
        n = 400_000
        pick = rng.random(n) < w2
        draws = np.where(
            pick[:, None],
            rng.multivariate_normal(m2, S2, size=n),
            rng.multivariate_normal(m1, S1, size=n),
        )
        mc_mean = draws.mean(axis=0)
        mc_cov = np.cov(draws.T)
        se = np.sqrt(np.diag(mc_cov) / n)
        assert np.all(np.abs(out.mean - mc_mean) < 3 * se + 1e-3)
        np.testing.assert_allclose(out.cov, mc_cov, atol=0.02)


def test_project_mixture_degenerate_weights():
    b = Gaussian1D.from_moments(1.0, 2.0)
    s = Gaussian1D.from_moments(-3.0, 0.5)
    out = project_mixture(Mixture2(b, s, -math.inf))
    assert out.mean == pytest.approx(1.0) and out.variance == pytest.approx(2.0)
    out = project_mixture(Mixture2(b, s, math.inf))
    assert out.mean == pytest.approx(-3.0) and out.variance == pytest.approx(0.5)


def test_project_mixture_rejects_improper_component():
    with pytest.raises(ImproperGaussianError):
        project_mixture(Mixture2(Gaussian1D.uniform(), Gaussian1D.from_moments(0, 1), 0.0))


# ---------------------------------------------------------------------------
# expit_gauss


def test_expit_gauss_frozen_values():
    assert expit_gauss(0.0, 0.0) == pytest.approx(0.5)
    # exact sigmoid(-6.5); 1.50e-3 to three significant figures
    assert expit_gauss(-6.5, 0.0) == pytest.approx(1.5012e-3, rel=1e-4)
    # variance 8/pi makes the shrink factor exactly sqrt(2)
    assert expit_gauss(2.0, 8.0 / math.pi) == pytest.approx(
        1.0 / (1.0 + math.exp(-2.0 / math.sqrt(2.0)))
    )


def test_expit_gauss_against_quadrature():
    # Gauss-Hermite (probabilists') oracle for E[sigmoid(N(m, v))]
    nodes, weights = hermegauss(80)
    weights = weights / math.sqrt(2 * math.pi)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        m = rng.uniform(-10, 10)
        v = rng.uniform(0.0, 25.0)
        exact = float(np.sum(weights / (1.0 + np.exp(-(m + math.sqrt(v) * nodes)))))
        worst = max(worst, abs(expit_gauss(m, v) - exact))
    assert worst < 0.02


def test_expit_gauss_vectorized_and_validated():
    out = expit_gauss(np.array([0.0, 2.0]), np.array([0.0, 0.0]))
    np.testing.assert_allclose(out, [0.5, 1 / (1 + math.exp(-2))])
    with pytest.raises(GaussianError):
        expit_gauss(0.0, -1.0)


# ---------------------------------------------------------------------------
# clamps and construction errors


def test_clamp_preserves_mean():
    g = Gaussian1D(precision=1e12, precision_mean=3e12)  # mean 3, variance 1e-12
    out, changed = clamp(g)
    assert changed
    assert out.precision == pytest.approx(PRECISION_CEILING)
    assert out.mean == pytest.approx(3.0)

    g2 = Gaussian1D.from_moments(2.0, 1.0)
    out2, changed2 = clamp(g2)
    assert not changed2 and out2 is g2


def test_clamp_multivariate_preserves_mean():
    mean = np.array([1.0, -2.0])
    g = GaussianD.from_moments(mean, 1e-14 * np.eye(2))
    out, changed = clamp(g)
    assert changed
    np.testing.assert_allclose(out.mean, mean, rtol=1e-9)
    assert np.linalg.eigvalsh(out.precision)[-1] <= PRECISION_CEILING * (1 + 1e-12)


def test_from_moments_rejects_bad_scale():
    with pytest.raises(ImproperGaussianError):
        Gaussian1D.from_moments(0.0, 0.0)
    with pytest.raises(ImproperGaussianError):
        GaussianD.from_moments([0.0, 0.0], -np.eye(2))
    with pytest.raises(GaussianError):
        GaussianD(np.zeros((2, 3)), np.zeros(2))
