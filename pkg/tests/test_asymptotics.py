import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from loopqed import asymptotics as S
from loopqed import kernels
from loopqed import potentials as V
from loopqed.harness.estimators import residual_budget
from loopqed.paths import sample_bridges
from loopqed.potentials import QuadSpec
from loopqed.scales import Constants, DomainError, FormFactor, Species

# ---- tau bracket -------------------------------------------------------------

XS = [0.01, 0.3, 1.0, 10.0, 100.0]
QS = [0.1, 0.5, 1.0, 2.0, 5.0]


def _bracket_quad(x, q1, q2):
    f = lambda t: kernels.q_kernel(x * q1, t) * kernels.q_kernel(x * q2, t)
    # Q is peaked at both ends for large arguments; split the period at the middle
    lo = integrate.quad(f, 0.0, 0.5, epsabs=1e-14, epsrel=1e-13, limit=500)[0]
    hi = integrate.quad(f, 0.5, 1.0, epsabs=1e-14, epsrel=1e-13, limit=500)[0]
    return lo + hi - 1.0


@pytest.mark.parametrize("x", XS)
def test_tau_bracket_matches_quadrature(x):
    for q1 in QS:
        for q2 in QS:
            assert S.tau_bracket(x, q1, q2) == pytest.approx(_bracket_quad(x, q1, q2), rel=1e-8, abs=1e-12)


def test_tau_bracket_large_x():
    for q1 in (0.5, 1.0, 2.0):
        for q2 in (0.5, 1.0, 2.0):
            assert S.tau_bracket(1e3, q1, q2) == pytest.approx(S.tau_bracket_asymptote(1e3, q1, q2), rel=0.01)


def test_tau_bracket_branches_join():
    # the series is used below max(x q) = 1, the closed form above
    y = np.nextafter(1.0, 0.0)
    lo = S.tau_bracket(y, 1.0, 0.3)
    hi = S.tau_bracket(1.0, 1.0, 0.3)
    assert lo == pytest.approx(hi, rel=1e-10)


@settings(max_examples=200)
@given(st.floats(1e-3, 1e3), st.floats(1e-2, 10), st.floats(1e-2, 10))
def test_tau_bracket_symmetric_and_non_negative(x, q1, q2):
    b = S.tau_bracket(x, q1, q2)
    assert b == S.tau_bracket(x, q2, q1)
    assert b >= 0.0


def test_tau_bracket_domain():
    with pytest.raises(DomainError):
        S.tau_bracket(0.0, 1.0, 1.0)


# ---- F(x) and the amplitude constant ----------------------------------------


@pytest.mark.parametrize("x", [0.3, 1.0, 3.0, 8.0])
def test_f_closed_matches_numeric(x):
    assert S.f_function(x) == pytest.approx(S.f_function(x, "numeric"), rel=1e-9)


def test_f_ratio_limits():
    # classical limit: the transverse fluctuations match the Coulomb tail
    for x in (1e-2, 0.1):
        assert S.wm_sq_ratio(x) == pytest.approx(1.0, rel=1e-12)
    # sub-photon limit 120 A / x^3 with a 1/x correction
    A = S.constant_a().value
    gaps = [abs(S.wm_sq_ratio(x) * x**3 / (120 * A) - 1) for x in (1e3, 1e4)]
    assert gaps[1] < 1e-3
    assert gaps[0] / gaps[1] == pytest.approx(10, rel=0.05)


def test_constant_a_routes_agree():
    a = S.constant_a()
    assert abs(a.t_route - a.direct_route) <= a.t_error + a.direct_error
    assert a.value == pytest.approx(1 / math.pi, rel=1e-9)
    assert a.printed_variant == pytest.approx(-a.value, rel=1e-9)
    assert abs(a.printed_variant - a.printed_variant_direct) <= 2 * a.printed_error
    assert a.fingerprint == QuadSpec().fingerprint()


def test_constant_a_stable_under_halved_tolerance():
    a = S.constant_a()
    b = S.constant_a(QuadSpec().halved())
    assert b.fingerprint != a.fingerprint
    assert abs(a.value - b.value) <= a.error + b.error


def test_predictions():
    A = 0.3
    r, lph, la, lb = 0.01, 1.0, 1e-3, 2e-3
    wm = S.wm_sq_prediction(r, lph, la, lb, A)
    wc = S.wc_sq_prediction(r, la, lb)
    assert wm / wc == pytest.approx(120 * A * (r / lph) ** 3, rel=1e-14)
    with pytest.raises(DomainError):
        S.wm_sq_prediction(0.0, 1.0, la, lb, A)


def test_regime_magnitudes_scaling():
    a = S.regime_magnitudes(2.0, 0.1, 0.2, 50.0)
    b = S.regime_magnitudes(4.0, 0.1, 0.2, 50.0)
    assert a.wc_estimate / b.wc_estimate == pytest.approx(8.0, rel=1e-14)
    assert a.wm_bound / b.wm_bound == pytest.approx(4.0, rel=1e-14)
    assert b.ratio == pytest.approx(2 * a.ratio, rel=1e-14)


# ---- dipolar cancellation ---------------------------------------------------


def test_longitudinal_transform_structure():
    r = np.array([0.3, -1.2, 0.4])
    T = S.longitudinal_transform(r)
    d = np.linalg.norm(r)
    assert np.trace(T) == pytest.approx(0.0, abs=1e-15)
    assert r @ T @ r / d**2 == pytest.approx(-2 / (4 * math.pi * d**3), rel=1e-14)
    np.testing.assert_allclose(T, T.T)
    with pytest.raises(DomainError):
        S.longitudinal_transform([0, 0, 0])


def test_lag_moment_matches_double_sum():
    xa, xb = sample_bridges(1, 12, 2, np.random.default_rng(3))
    da, db = np.diff(xa, axis=0), np.diff(xb, axis=0)
    M = 12
    t = np.arange(M) / M
    lag = (t[:, None] - t[None, :]) % 1.0
    h = lag**2 - lag + 1 / 6
    direct = np.einsum("im,ij,jn->mn", da, h, db)
    np.testing.assert_allclose(S.lag_moment(xa, xb), direct, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 64), st.integers(0, 2**31))
def test_ibp_grid_rule_exact(M, seed):
    xa, xb = sample_bridges(1, M, 2, np.random.default_rng(seed))
    res = S.ibp_identity_check(xa, xb)
    assert res.gap <= 1e-12 * max(1.0, np.max(np.abs(res.lhs)))


def test_ibp_interpolant_rule_converges():
    ms = [16, 32, 64, 128, 256]
    gaps = []
    for k, M in enumerate(ms):
        x = sample_bridges(1, M, 100, np.random.default_rng(40 + k))
        gaps.append(np.mean([S.ibp_identity_check(x[2 * i], x[2 * i + 1], "interpolant").gap for i in range(50)]))
    slope = np.polyfit(np.log(ms), np.log(gaps), 1)[0]
    assert slope <= -0.8
    with pytest.raises(DomainError):
        S.ibp_identity_check(x[0], x[1], "trapezoid")


def test_cancellation_per_sample():
    M = 64
    rng = np.random.default_rng(21)
    xa = sample_bridges(1, M, 200, rng)
    xb = sample_bridges(1, M, 200, rng)
    r = np.array([0.2, 0.5, -1.3])
    wc = V.dipolar_tail(xa, xb, 0.02, 0.03, r)
    corr = S.quantum_correction_batch(xa, xb, 0.02, 0.03, r)
    # roundoff only: the grid identity is exact for every pair
    assert np.all(np.abs(wc + corr) <= residual_budget(xa, xb, 0.02, 0.03, r))
    assert np.all(np.abs(wc) > 0)


def test_wm_quantum_correction_single_pair():
    xa, xb = sample_bridges(1, 16, 2, np.random.default_rng(2))
    ctx = V.PairContext(xa, xb, 16, [0, 0, 2.0], 0.1, 0.1, 10.0, form_factor=FormFactor("gaussian", 4.0))
    expect = S.quantum_correction_batch(xa, xb, 0.1, 0.1, [0, 0, 2.0])
    assert S.wm_quantum_correction(ctx) == pytest.approx(float(expect), rel=1e-15)


def test_tail_report():
    rep = S.TailReport.build(3.0, "beyond-photon", -0.4, 0.39, 1e-3)
    assert rep.residual == pytest.approx(-0.01, rel=1e-12)
    assert rep.ratio == pytest.approx(0.39 / 0.4)
    assert rep.as_dict()["r"] == 3.0
    assert S.TailReport.build(1.0, "x", 0.0, 1.0, 0.0).ratio == math.inf


# ---- identities and amplitudes ----------------------------------------------


@settings(max_examples=100)
@given(*(st.floats(1e-3, 1e3) for _ in range(5)))
def test_lambda_identity(beta, ma, mb, hbar, c):
    lhs, rhs = S.lambda_identity(beta, ma, mb, hbar, c)
    assert lhs == pytest.approx(rhs, rel=1e-14)


def test_r6_amplitude_by_substitution():
    beta, hbar, c = 2.0, 0.5, 3.0
    sp = [Species("e", 1.5, -1.0), Species("p", 4.0, 2.0)]
    ia, ib = [0.7, 0.2], [1.1, 0.4]
    w = [1.0 / (beta * 1.5 * 9.0), 4.0 / (beta * 4.0 * 9.0)]
    hand = (hbar * beta) ** 4 / 48 * (ia[0] * w[0] + ia[1] * w[1]) * (ib[0] * w[0] + ib[1] * w[1])
    assert S.r6_tail_amplitude(beta, sp, ia, ib, Constants(hbar, c, 1.0)) == pytest.approx(hand, rel=1e-14)
    with pytest.raises(DomainError):
        S.r6_tail_amplitude(beta, sp, [1.0], ib)


# ---- normal-order compensation ----------------------------------------------


@pytest.mark.parametrize("kind", ["gaussian", "sharp"])
def test_normal_order_compensation(kind):
    res = S.normal_order_check(Species("e", 1.3, -1.0), FormFactor(kind, 3.0), 0.7, q=2)
    assert res.gap < 1e-8
    assert res.term_continuous - res.term_discontinuous == pytest.approx(res.jump_term, rel=1e-8)
    with pytest.raises(DomainError):
        S.normal_order_check(Species("e", 1.0, 1.0), FormFactor(), 1.0)
