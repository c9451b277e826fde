import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logic.coefficients import (COEFFICIENT_PRESETS, CoefficientSet, check_contraction, effective_beta,
                                empirical_lipschitz, get_preset)
from logic.errors import InvalidInputError
from logic.mesh_operator import Mesh1D, apply_divergence, apply_gradient

constants = st.floats(min_value=0.0, max_value=3.0, allow_nan=False)


def test_contraction_examples():
    ok, margin = check_contraction(0.1, 0.5, 1.0)
    assert ok
    assert margin == pytest.approx(1.55)
    assert not check_contraction(1.0, np.sqrt(2.0), 1.0)[0]
    # equality is excluded
    assert not check_contraction(0.0, np.sqrt(2.0), 1.0)[0]


def test_contraction_rejects_bad_constants():
    with pytest.raises(InvalidInputError):
        check_contraction(-0.1, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        check_contraction(0.1, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(constants, constants, st.floats(min_value=0.01, max_value=3.0), st.floats(min_value=0.0, max_value=1.0))
def test_contraction_monotone(alpha, beta, lam, bump):
    ok, _ = check_contraction(alpha, beta, lam)
    if ok:
        assert check_contraction(alpha, beta, lam + bump)[0]
    else:
        assert not check_contraction(alpha + bump, beta, lam)[0]
        assert not check_contraction(alpha, beta + bump, lam)[0]


def test_empirical_lipschitz_linear_preset():
    report = empirical_lipschitz(get_preset("linear"), 10_000, np.random.default_rng(0))
    assert 0.3 - 1e-6 <= report.empirical_C <= 0.3 + 1e-9
    assert report.empirical_alpha == 0.0
    assert report.empirical_beta == 0.0
    assert report.lipschitz_ok
    assert report.integrability_ok


def test_constant_coefficients_have_zero_constants():
    coeffs = CoefficientSet(
        f=lambda t, x, y, z: np.full(np.shape(y), 1.0),
        g=lambda t, x, y, z: np.full(np.shape(y), -2.0),
        h_tilde=lambda t, x, y, z: np.full(np.shape(y), 0.5),
    )
    report = empirical_lipschitz(coeffs, 500, np.random.default_rng(1))
    assert report.empirical_C == 0.0
    assert report.empirical_alpha == 0.0
    assert report.empirical_beta == 0.0


def test_understated_constant_flagged():
    coeffs = CoefficientSet(f=lambda t, x, y, z: np.sin(y), C_lip=0.5, name="sine")
    report = empirical_lipschitz(coeffs, 10_000, np.random.default_rng(2))
    assert not report.lipschitz_ok
    assert "C_lip" in report.violations
    assert report.empirical_C > 0.5


def test_non_finite_coefficient_reported():
    coeffs = CoefficientSet(f=lambda t, x, y, z: np.full(np.shape(y), np.inf))
    with np.errstate(all="ignore"):
        report = empirical_lipschitz(coeffs, 100, np.random.default_rng(3))
    assert not report.integrability_ok


def test_saturating_preset_within_declared_constants():
    report = empirical_lipschitz(get_preset("saturating"), 20_000, np.random.default_rng(4),
                                 weighted_trace=2.0)
    assert report.lipschitz_ok
    assert report.contraction_ok
    assert report.effective_beta == pytest.approx(0.2 * np.sqrt(2.0))
    assert report.contraction_margin == pytest.approx(2.0 - 0.2 - 0.08)
    assert set(report.to_dict()) >= {"empirical_C", "violations", "effective_beta"}


def test_effective_beta():
    assert effective_beta(0.2, 4.0) == pytest.approx(0.4)
    assert effective_beta(0.0, 4.0) == 0.0


def test_presets():
    assert set(COEFFICIENT_PRESETS) == {"zero", "linear", "saturating", "forcing"}
    with pytest.raises(InvalidInputError):
        get_preset("quadratic")
    base = get_preset("linear")
    shifted = get_preset("linear", 0.5)
    x = np.linspace(0.1, 0.9, 5)
    y = np.linspace(-1.0, 1.0, 5)
    assert np.allclose(shifted.f(0.0, x, y, y), base.f(0.0, x, y, y) + 0.5)
    assert shifted.g is base.g
    assert shifted.h_tilde is base.h_tilde
    assert base.shifted(0.0) is base


def test_negative_constants_rejected():
    with pytest.raises(InvalidInputError):
        CoefficientSet(alpha=-1.0)


def test_evaluate_shapes_and_summation_by_parts():
    mesh = Mesh1D.uniform(20)
    u = np.sin(2.0 * np.pi * mesh.node_coords)
    terms = get_preset("saturating").evaluate(0, 0.1, mesh, u)
    assert terms.f.shape == (20,)
    assert terms.h_tilde.shape == (20,)
    assert terms.g.shape == (21,)
    lhs = mesh.inner(u, apply_divergence(mesh, terms.g))
    rhs = -mesh.h * float(np.dot(apply_gradient(mesh, u), terms.g))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_zero_preset_evaluates_to_zero():
    mesh = Mesh1D.uniform(8)
    terms = get_preset("zero").evaluate(3, 0.2, mesh, np.ones(8))
    assert not terms.f.any() and not terms.g.any() and not terms.h_tilde.any()
