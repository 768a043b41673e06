import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from loopqed.scales import (
    BEYOND_PHOTON,
    NATURAL,
    NON_ASYMPTOTIC,
    SI,
    SUB_PHOTON,
    Constants,
    DomainError,
    FormFactor,
    PairRatios,
    RegimeThresholds,
    Species,
    derive_scales,
    regime_classify,
)

# hand values for an electron at 300 K, worked out from CODATA constants
M_E = 9.1093837015e-31
LAM_MAT_300K = 1.7169e-9  # hbar / sqrt(m k_B T)
LAM_PH_300K = 7.6330e-6  # hbar c / (k_B T)
REDUCED_COMPTON = 3.8615926796e-13  # tabulated reduced Compton wavelength of the electron


def test_natural_units_all_scales_coincide():
    sc = derive_scales([Species("e", 1.0, 1.0)], 1.0)
    assert sc.lam_mat["e"] == 1.0
    assert sc.lam_ph == 1.0
    assert sc.lam_cut == 1.0
    assert sc.rel == 1.0


def test_rel_1e10_gives_1e5_ratios():
    sc = derive_scales([Species("e", 1e10, 1.0)], 1.0)
    assert sc.rel == pytest.approx(1e10)
    assert sc.lam_ph / sc.lam_mat["e"] == pytest.approx(1e5, rel=1e-12)
    assert sc.lam_mat["e"] / sc.lam_cut == pytest.approx(1e5, rel=1e-12)


def test_electron_300K_si():
    beta = 1.0 / (SI.k_B * 300.0)
    sc = derive_scales([Species("e", M_E, -1.0)], beta, constants=SI)
    assert sc.lam_mat["e"] == pytest.approx(LAM_MAT_300K, rel=2e-4)
    assert sc.lam_ph == pytest.approx(LAM_PH_300K, rel=2e-4)
    assert sc.lam_cut == pytest.approx(REDUCED_COMPTON, rel=1e-9)


def test_reference_mass_defaults_to_lightest():
    sp = [Species("p", 1836.15, 1.0), Species("e", 1.0, -1.0)]
    assert derive_scales(sp, 2.0).ref_mass == 1.0
    assert derive_scales(sp, 2.0, reference_mass="p").ref_mass == 1836.15
    assert derive_scales(sp, 2.0, reference_mass=3.0).ref_mass == 3.0


def test_coupling_equals_length_ratio():
    sp = [Species("a", 2.0, 1.0), Species("b", 5.0, 1.0)]
    c = Constants(0.7, 3.0, 1.0)
    sc = derive_scales(sp, 1.3, constants=c)
    ratio = sc.lam_mat["a"] * sc.lam_mat["b"] / sc.lam_ph**2
    assert sc.coupling("a", "b") == pytest.approx(ratio, rel=1e-14)
    assert sc.pair_ratios("a", "b", 2.0).coupling == pytest.approx(ratio, rel=1e-14)


@pytest.mark.parametrize(
    "bad",
    [
        lambda: Species("x", 0.0, 1.0),
        lambda: derive_scales([Species("e", 1.0, 1.0)], 0.0),
        lambda: derive_scales([], 1.0),
        lambda: derive_scales([Species("e", 1.0, 1.0), Species("e", 2.0, 1.0)], 1.0),
        lambda: FormFactor("lorentzian", 1.0),
        lambda: FormFactor("gaussian", 0.0),
        lambda: PairRatios(-1.0, 1.0, 1.0),
    ],
)
def test_domain_errors(bad):
    with pytest.raises(DomainError):
        bad()


def test_form_factor_examples():
    g = FormFactor("gaussian", 2.0)
    assert g(0.0) == 1.0
    assert g(2.0) == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert FormFactor("sharp", 2.0)(4.0) == 0.0
    assert FormFactor()(123.0) == 1.0


@given(st.sampled_from(["gaussian", "sharp"]), st.floats(0.1, 10.0), st.lists(st.floats(0, 100), min_size=2))
def test_form_factor_bounded_and_monotone(kind, k_cut, ks):
    ks = np.sort(np.array(ks))
    g = np.atleast_1d(FormFactor(kind, k_cut)(ks))
    assert np.all(g <= 1.0) and np.all(g >= 0.0)
    assert np.all(np.diff(g) <= 0.0)


@settings(max_examples=200)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.1, 10), st.floats(0.1, 10))
@example(1000.0, 0.1, 1.0, 0.1)
def test_scale_invariants(m, beta, hbar, c):
    sc = derive_scales([Species("e", m, 1.0)], beta, constants=Constants(hbar, c, 1.0))
    lm = sc.lam_mat["e"]
    assert lm > 0 and sc.lam_ph > 0 and sc.lam_cut > 0
    assert sc.lam_cut * sc.lam_ph == pytest.approx(lm * lm, rel=1e-12)
    assert lm / sc.lam_cut == pytest.approx(np.sqrt(sc.rel), rel=1e-12)
    assert sc.lam_ph / lm == pytest.approx(np.sqrt(sc.rel), rel=1e-12)
    # at rel = 1 the three lengths coincide, so the order is only strict beyond rounding
    if sc.rel > 1 + 1e-12:
        assert sc.lam_cut < lm < sc.lam_ph


def test_regime_examples():
    lam = 1.0
    sc = derive_scales([Species("e", 1.0, 1.0)], 1.0)
    pr = PairRatios(lam / 1e6, lam / 1e6, 100 * lam / 1e6)
    assert regime_classify(1.0, pr) == BEYOND_PHOTON
    assert regime_classify(1.0, PairRatios(0.01, 0.01, 100.0)) == SUB_PHOTON
    assert regime_classify(sc.lam_mat["e"], sc) == NON_ASYMPTOTIC
    with pytest.raises(DomainError):
        regime_classify(0.0, sc)


def test_regime_threshold_is_configurable():
    pr = PairRatios(0.01, 0.01, 5.0)
    assert regime_classify(1.0, pr) == NON_ASYMPTOTIC
    assert regime_classify(1.0, pr, RegimeThresholds(4.0)) == SUB_PHOTON


def test_natural_constants():
    assert NATURAL == Constants(1.0, 1.0, 1.0)
