from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threshold_lab.errors import (
    ConditionNotApplicableError,
    InvalidInputError,
    InvalidStateError,
    SingularityError,
)
from threshold_lab.model import (
    ThreeBodySystem,
    eval_W,
    in_stability_domain,
    jacobi_frame,
    scale_system,
    tail_condition_for,
    threshold_channels,
    verify_tail_condition,
)

masses = st.floats(0.05, 50.0)


def test_frame_by_hand():
    f = jacobi_frame(ThreeBodySystem(1.0, 2.0, 3.0, 0.5, 1.0))
    assert f.mu23 == pytest.approx(6 / 5)
    assert f.mu13 == pytest.approx(3 / 4)
    assert f.mu12 == pytest.approx(2 / 3)
    assert f.mu == pytest.approx(5 / 6)
    assert f.s == pytest.approx(3 / 5)


@given(masses, masses, masses)
@settings(max_examples=50, deadline=None)
def test_kinetic_metric_matches_cartesian(m1, m2, m3):
    # rows: r, xi, centre of mass as linear maps of (x1, x2, x3)
    s = m3 / (m2 + m3)
    M = m1 + m2 + m3
    J = np.array([[1.0, -1.0 + s, -s], [0.0, -1.0, 1.0], [m1 / M, m2 / M, m3 / M]])
    G = J @ np.diag([1 / m1, 1 / m2, 1 / m3]) @ J.T
    sys_ = ThreeBodySystem(m1, m2, m3, 0.5, 1.0)
    assert np.allclose(G[:2, :2], sys_.inverse_mass_matrix(), rtol=1e-12, atol=1e-12 * G.max())
    assert abs(G[0, 2]) < 1e-12 * G.max() and abs(G[1, 2]) < 1e-12 * G.max()


def test_pair_separations_match_positions():
    rng = np.random.default_rng(1)
    sys_ = ThreeBodySystem(1.3, 0.7, 2.1, 0.6, 1.0)
    s = sys_.frame().s
    x1, x2, x3 = rng.standard_normal((3, 3))
    xi = x3 - x2
    r = x1 - x2 - s * xi
    seps = {"23": x3 - x2, "13": x1 - x3, "12": x1 - x2}
    for label, _, w in sys_.pair_terms():
        assert np.allclose(w[0] * r + w[1] * xi, seps[label], atol=1e-14)


@given(masses, masses, masses, st.floats(0.01, 3.0), st.floats(0.05, 3.0))
@settings(max_examples=100, deadline=None)
def test_scaled_threshold_is_minus_one(m1, m2, m3, q1, q2):
    sys_ = ThreeBodySystem(m1, m2, m3, q1, q2)
    f = jacobi_frame(sys_)
    if not in_stability_domain(q1, q2, f):
        return
    info = scale_system(sys_).thresholds()
    assert info.E_thr == pytest.approx(-1.0, abs=4 * np.finfo(float).eps)
    assert info.gap > 0 and info.in_D
    assert info.delta_eps == min(0.25, info.gap)


def test_scaled_energies_are_a_fixed_multiple():
    sys_ = ThreeBodySystem(1.0, 3.0, 2.0, 0.4, 1.7)
    info = threshold_channels(sys_.q1, sys_.q2, sys_.frame())
    sc = scale_system(sys_).thresholds()
    c = 2.0 / sys_.frame().mu23
    factor = c / sys_.q2**2
    assert sc.E23 == pytest.approx(factor * info.E23, rel=1e-14)
    assert sc.E13 == pytest.approx(factor * info.E13, rel=1e-14)


def test_equal_threshold_line_equal_masses():
    f = jacobi_frame(ThreeBodySystem(1, 1, 1, 1, 1))
    for q in (0.3, 1.0, 2.5):
        assert not in_stability_domain(q, q, f)
        assert in_stability_domain(q * (1 - 1e-12), q, f)
        assert threshold_channels(q, q, f).gap == pytest.approx(0.0, abs=1e-15)


def test_W_is_the_cluster_interaction():
    sys_ = ThreeBodySystem(1.0, 2.0, 1.5, 0.8, 1.3)
    f = sys_.frame()
    rng = np.random.default_rng(3)
    x1, x2, x3 = rng.standard_normal((3, 3)) * 2
    xi = x3 - x2
    r = x1 - x2 - f.s * xi
    V = 0.8 * 1.3 / np.linalg.norm(x1 - x2) - 0.8 / np.linalg.norm(x1 - x3)
    assert eval_W(r, xi, 0.8, 1.3, f) == pytest.approx(V / 1.3, rel=1e-13)
    assert eval_W(r, xi, 0.0, 1.3, f) == 0.0


def test_W_singularity():
    f = jacobi_frame(ThreeBodySystem(1, 1, 1, 1, 1))
    xi = np.array([1.0, 0.0, 0.0])
    with pytest.raises(SingularityError):
        eval_W(-f.s * xi, xi, 0.5, 1.0, f)


@pytest.mark.parametrize("q1,q2,dq", [(0.5, 1.2, 0.2), (1.0, 2.0, 0.5), (0.1, 1.05, 0.05)])
def test_tail_condition_holds(q1, q2, dq):
    sc = scale_system(ThreeBodySystem(1.0, 1.0, 1.0, q1, q2))
    cond = tail_condition_for(q1, q2, sc.frame(), dq)
    assert verify_tail_condition(cond, q1, q2, sc.frame(), n_samples=20000) == 0


def test_tail_condition_not_applicable():
    f = jacobi_frame(ThreeBodySystem(1, 1, 1, 0.5, 1.0))
    with pytest.raises(ConditionNotApplicableError):
        tail_condition_for(0.5, 1.0, f, 0.1)
    with pytest.raises(ConditionNotApplicableError):
        tail_condition_for(0.5, 1.05, f, 0.1)
    with pytest.raises(InvalidInputError):
        tail_condition_for(0.5, 1.5, f, 0.0)


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        ThreeBodySystem(-1.0, 1.0, 1.0, 0.5, 1.0)
    with pytest.raises(InvalidInputError):
        ThreeBodySystem(1.0, 1.0, 1.0, 0.5, 0.0)
    with pytest.raises(InvalidInputError):
        ThreeBodySystem(1.0, math.inf, 1.0, 0.5, 1.0)
    with pytest.raises(InvalidStateError):
        scale_system(scale_system(ThreeBodySystem(1, 1, 1, 0.5, 1.0)))


def test_swap_keeps_the_hamiltonian():
    sys_ = ThreeBodySystem(1.0, 2.0, 1.0, 1.4, 1.0)
    sw = sys_.swapped()
    assert (sw.m1, sw.m2, sw.q1, sw.q2) == (2.0, 1.0, 1.0, 1.4)
    assert sw.swapped() == sys_
