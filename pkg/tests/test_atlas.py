from __future__ import annotations

import pytest

from threshold_lab import atlas
from threshold_lab.atlas import (
    BorderPoint,
    StabilityVerdict,
    SweepRecord,
    border_bisect,
    classify_point,
    find_q1_zero,
    monotone_violations,
    oriented_system,
    reference_system,
    sweep_grid,
)
from threshold_lab.ecg import SolverConfig
from threshold_lab.errors import BracketError, InvalidInputError, NumericalError

SMALL = SolverConfig(max_basis=40)


def test_orientation_swaps_outside_domain():
    s, swapped = oriented_system(0.8, 1.0)
    assert not swapped and s.scaled and s.thresholds().E_thr == pytest.approx(-1.0)
    s, swapped = oriented_system(1.0, 0.8)
    assert swapped and (s.q1, s.q2) == (0.8, 1.0)
    with pytest.raises(InvalidInputError):
        oriented_system(0.0, 1.0)


def test_reference_point_on_the_same_ray():
    s, _ = oriented_system(0.55, 1.1)
    ref = reference_system(s, 0.9)
    assert ref.q1 / ref.q2 == pytest.approx(0.5) and ref.q2 == 0.9
    assert reference_system(ref, 0.9) is None


def test_inside_the_unit_square_is_bound():
    v = classify_point(0.9, 0.9, SMALL)
    assert v.bound and v.margin > 1e-3 and v.E0 < -1.0
    assert isinstance(v, StabilityVerdict) and v.basis_size == len(v.basis)


def test_classification_is_seed_stable():
    a = classify_point(0.95, 1.0, SolverConfig(max_basis=60, seed=1))
    b = classify_point(0.95, 1.0, SolverConfig(max_basis=60, seed=2))
    assert a.status == b.status == "Bound"
    assert a.E0 == pytest.approx(b.E0, abs=2e-3)


def test_far_below_the_border_is_unresolved():
    v = classify_point(0.3, 1.0, SMALL, grow_near_border=False)
    assert v.status == "Unresolved" and v.margin <= 0


def _fake_classifier(threshold):
    def fake(q1, q2, config=None, masses=None, initial=None, **kw):
        bound = q1 > threshold
        return StabilityVerdict("Bound" if bound else "Unresolved", 0.1 if bound else -0.1, 1, -1.0)
    return fake


def test_bisection_logic(monkeypatch):
    monkeypatch.setattr(atlas, "classify_point", _fake_classifier(0.6123))
    b = border_bisect(1.0, (0.1, 0.99), tolerance=1e-4)
    assert isinstance(b, BorderPoint)
    assert b.q1_low <= 0.6123 <= b.q1_high and b.width <= 1e-4
    assert len(b.history) == b.iterations + 2


def test_bracket_errors(monkeypatch):
    with pytest.raises(BracketError):
        border_bisect(1.0, (0.9, 0.5))
    with pytest.raises(BracketError):
        border_bisect(1.0, (0.5, 1.2))                  # leaves the domain
    with pytest.raises(BracketError):
        find_q1_zero(bracket=(0.5, 1.5))
    monkeypatch.setattr(atlas, "classify_point", _fake_classifier(0.95))
    with pytest.raises(BracketError, match="upper end"):
        border_bisect(1.0, (0.1, 0.9))
    monkeypatch.setattr(atlas, "classify_point", _fake_classifier(0.05))
    with pytest.raises(BracketError, match="lower end"):
        border_bisect(1.0, (0.1, 0.9))


def test_critical_charge_bracket_small_basis():
    b = find_q1_zero(SolverConfig(max_basis=50), bracket=(0.75, 0.95), tolerance=0.01)
    # a small basis underbinds, so its border can only sit at or above q1^0 ~ 0.854
    assert 0.845 <= b.q1_high <= 0.92 and b.width <= 0.01


def test_sweep_order_and_error_capture(monkeypatch):
    def fake(q1, q2, config=None, masses=None, **kw):
        if q1 == 0.5 and q2 == 1.0:
            raise NumericalError("boom")
        return StabilityVerdict("Bound", 0.1, 3, -1.1)

    monkeypatch.setattr(atlas, "classify_point", fake)
    recs = sweep_grid((0.5, 1.0), (0.5, 1.0), 3, workers=3)
    assert [(r.q1, r.q2) for r in recs] == [(a, b) for b in (0.5, 0.75, 1.0) for a in (0.5, 0.75, 1.0)]
    bad = [r for r in recs if r.verdict is None]
    assert len(bad) == 1 and "NumericalError" in bad[0].error
    with pytest.raises(InvalidInputError):
        sweep_grid((0.5, 1.0), (0.5, 1.0), 0)


def test_monotone_violations():
    V = lambda s: StabilityVerdict(s, 0.0, 1, -1.0)
    recs = [SweepRecord(0.5, 1.0, V("Unresolved")), SweepRecord(0.7, 1.0, V("Bound")),
            SweepRecord(0.9, 1.0, V("Unresolved")), SweepRecord(0.5, 0.8, V("Bound")),
            SweepRecord(0.9, 0.8, None, "err")]
    assert monotone_violations(recs) == [(0.9, 1.0)]
