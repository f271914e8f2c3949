"""Stability map of the charge plane (q1, q2).

A point is *Bound* when the variational ground state of the scaled system
lies below the threshold ``-1`` by more than the certification margin.  A
variational energy is only an upper bound, so failing to certify binding is
reported as *Unresolved* and never as unbound.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ecg import Basis, SolverConfig, optimize_basis
from .errors import BracketError, InvalidInputError, ThresholdLabError
from .model import ThreeBodySystem, jacobi_frame, scale_system

log = logging.getLogger(__name__)

BOUND = "Bound"
UNRESOLVED = "Unresolved"
DEFAULT_MASSES = (1.0, 1.0, 1.0)


@dataclass
class StabilityVerdict:
    status: str
    margin: float
    basis_size: int
    E0: float
    swapped: bool = False
    basis: Basis | None = field(default=None, repr=False, compare=False)

    @property
    def bound(self) -> bool:
        return self.status == BOUND


@dataclass
class BorderPoint:
    q2: float
    q1_low: float
    q1_high: float
    iterations: int = 0
    history: list[tuple[float, str, float]] = field(default_factory=list)

    @property
    def width(self) -> float:
        return self.q1_high - self.q1_low


def oriented_system(q1: float, q2: float, masses=DEFAULT_MASSES) -> tuple[ThreeBodySystem, bool]:
    """Scaled system with the (2,3) channel lowest.

    Points where the (1,3) channel lies lower are relabelled 1 <-> 2, which
    leaves the Hamiltonian unchanged and brings them into the domain.
    """
    if not (q1 > 0 and q2 > 0):
        raise InvalidInputError("charges must be positive (q1 = 0 is excluded)")
    sys_ = ThreeBodySystem(*masses, q1, q2)
    f = jacobi_frame(sys_)
    swapped = f.mu13 * q1**2 > f.mu23 * q2**2
    if swapped:
        sys_ = sys_.swapped()
    return scale_system(sys_), swapped


def reference_system(system: ThreeBodySystem, reference_q2: float = 0.9) -> ThreeBodySystem | None:
    """Point on the same ray q1/q2 with ``q2 = reference_q2``, or None when the
    target already lies at or below it.

    Along a ray the scaled Hamiltonian is ``H_ratio + q1/|x1 - x2|``, so the
    reference is more deeply bound and has the same correlation structure.
    """
    if system.q2 <= reference_q2:
        return None
    ratio = system.q1 / system.q2
    return system.with_charges(ratio * reference_q2, reference_q2)


def classify_point(q1: float, q2: float, config: SolverConfig | None = None,
                   masses=DEFAULT_MASSES, initial=None, grow_near_border: bool = True,
                   border_margin: float = 0.01, reference_q2: float | None = 0.9,
                   reference_fraction: float = 0.6) -> StabilityVerdict:
    """Certify binding of the scaled system at (q1, q2).

    Without a warm start the basis is first grown at a deeply bound reference
    point on the same ray (``reference_fraction`` of the budget) and then
    continued at the target: greedy growth started at a weakly bound point
    tends to spend its budget on the threshold continuum and miss the bound
    state.  When the margin is below ``border_margin`` the budget is doubled
    once (warm-started) to sharpen verdicts near the border.
    """
    config = config or SolverConfig()
    system, swapped = oriented_system(q1, q2, masses)
    ref = reference_system(system, reference_q2) if (initial is None and reference_q2) else None
    if ref is not None:
        n_ref = max(1, int(math.ceil(reference_fraction * config.max_basis)))
        initial, _ = optimize_basis(ref, replace(config, max_basis=n_ref, refine_sweeps=0))
    basis, res = optimize_basis(system, config, initial=initial, step_offset=10**5)
    E0 = res.E0
    margin = -1.0 - E0
    if grow_near_border and margin < border_margin and len(basis) < 2 * config.max_basis:
        more = replace(config, max_basis=2 * config.max_basis, refine_sweeps=0)
        basis, res = optimize_basis(system, more, initial=basis, step_offset=2 * 10**5)
        E0 = res.E0
        margin = -1.0 - E0
    status = BOUND if margin > config.margin else UNRESOLVED
    return StabilityVerdict(status, margin, len(basis), E0, swapped, basis)


def border_bisect(q2: float, bracket, tolerance: float = 1e-3, config: SolverConfig | None = None,
                  masses=DEFAULT_MASSES, check_bracket: bool = True) -> BorderPoint:
    """Bisection in q1 at fixed q2 between an Unresolved low end and a Bound
    high end; stability is monotone in q1 along such a segment."""
    config = config or SolverConfig()
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0 < lo < hi):
        raise BracketError(f"invalid bracket {bracket}")
    if not tolerance > 0:
        raise InvalidInputError("tolerance must be positive")
    f = jacobi_frame(ThreeBodySystem(*masses, lo, q2))
    if f.mu13 * hi**2 > f.mu23 * q2**2 * (1 + 1e-12):
        raise BracketError("bracket leaves the domain where the (2,3) channel is lowest")
    history = []
    warm = None
    if check_bracket:
        vh = classify_point(hi, q2, config, masses)
        history.append((hi, vh.status, vh.margin))
        if not vh.bound:
            raise BracketError(f"upper end q1={hi} is not Bound")
        warm = vh.basis
        vl = classify_point(lo, q2, config, masses, initial=warm)
        history.append((lo, vl.status, vl.margin))
        if vl.bound:
            raise BracketError(f"lower end q1={lo} is Bound")
    it = 0
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        v = classify_point(mid, q2, config, masses, initial=warm)
        history.append((mid, v.status, v.margin))
        if v.bound:
            hi = mid
            warm = v.basis
        else:
            lo = mid
        it += 1
    return BorderPoint(q2, lo, hi, it, history)


def find_q1_zero(config: SolverConfig | None = None, masses=DEFAULT_MASSES, bracket=None,
                 tolerance: float = 1e-3) -> BorderPoint:
    """Bracket of the critical charge on the segment q2 = 1."""
    f = jacobi_frame(ThreeBodySystem(*masses, 1.0, 1.0))
    top = math.sqrt(f.mu23 / f.mu13)
    if bracket is None:
        bracket = (0.05 * top, 0.999 * top)
    if not (0 < bracket[0] < bracket[1] < top):
        raise BracketError(f"bracket must lie in (0, {top})")
    return border_bisect(1.0, bracket, tolerance, config, masses)


@dataclass
class SweepRecord:
    q1: float
    q2: float
    verdict: StabilityVerdict | None
    error: str | None = None


def sweep_grid(q1_range, q2_range, steps: int, config: SolverConfig | None = None,
               masses=DEFAULT_MASSES, workers: int = 1) -> list[SweepRecord]:
    """Classify every point of a ``steps x steps`` grid (rows of fixed q2)."""
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    q1s = np.linspace(q1_range[0], q1_range[1], steps) if steps > 1 else np.array([q1_range[0]])
    q2s = np.linspace(q2_range[0], q2_range[1], steps) if steps > 1 else np.array([q2_range[0]])
    return sweep_points(q1s, q2s, config, masses, workers)


def sweep_points(q1_values, q2_values, config: SolverConfig | None = None,
                 masses=DEFAULT_MASSES, workers: int = 1) -> list[SweepRecord]:
    """Classify the product grid ``q1_values x q2_values`` (rows of fixed q2).

    Each point uses its own seeded solver so results do not depend on the
    evaluation order; per-point failures are recorded and the sweep goes on.
    """
    config = config or SolverConfig()
    points = [(float(a), float(b)) for b in q2_values for a in q1_values]
    if not points:
        raise InvalidInputError("empty grid")

    def run(p):
        try:
            v = classify_point(p[0], p[1], config, masses)
            v.basis = None
            return SweepRecord(p[0], p[1], v)
        except ThresholdLabError as exc:
            return SweepRecord(p[0], p[1], None, f"{type(exc).__name__}: {exc}")

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, points))
    return [run(p) for p in points]


def monotone_violations(records: list[SweepRecord], noise: float = 0.0) -> list[tuple[float, float]]:
    """(q1, q2) of Unresolved points lying right of a Bound point in the same row."""
    bad = []
    rows: dict[float, list[SweepRecord]] = {}
    for r in records:
        rows.setdefault(r.q2, []).append(r)
    for q2, row in rows.items():
        row = sorted((r for r in row if r.verdict is not None), key=lambda r: r.q1)
        bound_q1 = [r.q1 for r in row if r.verdict.bound]
        if not bound_q1:
            continue
        first = min(bound_q1)
        bad.extend((r.q1, q2) for r in row if not r.verdict.bound and r.q1 > first + noise)
    return bad
