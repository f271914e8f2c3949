"""Three Coulomb charges {q1, q2, -1}: kinematics, thresholds and the
inter-cluster potential.

Jacobi coordinates: ``xi = x3 - x2`` joins the pair (2,3) and
``r = x1 - x2 - s*xi`` runs from the centre of mass of (2,3) to particle 1,
with ``s = m3/(m2 + m3)``.  In these coordinates

    x1 - x3 = r - (1 - s) xi
    x1 - x2 = r + s xi

The *scaled* system has masses ``2 m_i / mu23`` and all potentials divided by
``q2``; the (2,3) subsystem is then ``p_xi^2/4 - 1/|xi|`` with ground energy -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConditionNotApplicableError,
    InvalidInputError,
    InvalidStateError,
    SingularityError,
)

# Pair labels.
PAIR_23 = "23"
PAIR_13 = "13"
PAIR_12 = "12"


@dataclass(frozen=True)
class ThreeBodySystem:
    m1: float
    m2: float
    m3: float
    q1: float
    q2: float
    scaled: bool = False

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            m = getattr(self, name)
            if not (m > 0 and math.isfinite(m)):
                raise InvalidInputError(f"mass {name} must be positive and finite, got {m!r}")
        if not self.q1 >= 0:
            raise InvalidInputError(f"q1 must be >= 0, got {self.q1!r}")
        if not self.q2 > 0:
            raise InvalidInputError(f"q2 must be > 0, got {self.q2!r}")

    @property
    def masses(self) -> tuple[float, float, float]:
        return (self.m1, self.m2, self.m3)

    @property
    def potential_scale(self) -> float:
        """Factor multiplying every Coulomb term (1/q2 once scaled)."""
        return 1.0 / self.q2 if self.scaled else 1.0

    def frame(self) -> "JacobiFrame":
        return jacobi_frame(self)

    def thresholds(self) -> "ThresholdInfo":
        return threshold_channels(self.q1, self.q2, self.frame(), self.potential_scale)

    def pair_terms(self) -> list[tuple[str, float, np.ndarray]]:
        """``(label, strength, w)`` for every pair; the pair potential is
        ``strength / |w[0] r + w[1] xi|``."""
        s = self.frame().s
        ps = self.potential_scale
        return [
            (PAIR_23, -self.q2 * ps, np.array([0.0, 1.0])),
            (PAIR_13, -self.q1 * ps, np.array([1.0, -(1.0 - s)])),
            (PAIR_12, self.q1 * self.q2 * ps, np.array([1.0, s])),
        ]

    def inverse_mass_matrix(self) -> np.ndarray:
        """Kinetic energy is ``1/2 sum_ij L_ij p_i.p_j`` on (r, xi)."""
        f = self.frame()
        return np.diag([1.0 / f.mu, 1.0 / f.mu23])

    def with_charges(self, q1: float, q2: float) -> "ThreeBodySystem":
        """Same masses (and scaling state) with new charges."""
        return replace(self, q1=q1, q2=q2)

    def swapped(self) -> "ThreeBodySystem":
        """Relabel particles 1 <-> 2 (the Hamiltonian is invariant)."""
        return replace(self, m1=self.m2, m2=self.m1, q1=self.q2, q2=self.q1)


@dataclass(frozen=True)
class JacobiFrame:
    mu23: float
    mu13: float
    mu12: float
    mu: float
    s: float


@dataclass(frozen=True)
class ThresholdInfo:
    E23: float
    E13: float
    E_thr: float
    in_D: bool
    gap: float
    delta_eps: float


@dataclass(frozen=True)
class TailCondition:
    delta: float
    C0: float
    C1: float
    p: float = 1.0

    def contains(self, r, xi) -> np.ndarray:
        """Membership of (r, xi) in the far region |r| >= C0 + C1 |xi|^p."""
        rn = np.linalg.norm(np.asarray(r, dtype=float), axis=-1)
        xn = np.linalg.norm(np.asarray(xi, dtype=float), axis=-1)
        return rn >= self.C0 + self.C1 * xn**self.p


def jacobi_frame(system: ThreeBodySystem) -> JacobiFrame:
    m1, m2, m3 = system.masses
    if min(m1, m2, m3) <= 0:
        raise InvalidInputError("masses must be positive")
    return JacobiFrame(
        mu23=m2 * m3 / (m2 + m3),
        mu13=m1 * m3 / (m1 + m3),
        mu12=m1 * m2 / (m1 + m2),
        mu=m1 * (m2 + m3) / (m1 + m2 + m3),
        s=m3 / (m3 + m2),
    )


def scale_system(system: ThreeBodySystem) -> ThreeBodySystem:
    """Rescale masses to ``2 m_i / mu23`` and divide potentials by q2."""
    if system.scaled:
        raise InvalidStateError("system is already scaled")
    if not system.q2 > 0:
        raise InvalidInputError("q2 must be positive to scale")
    c = 2.0 / jacobi_frame(system).mu23
    return ThreeBodySystem(c * system.m1, c * system.m2, c * system.m3,
                           system.q1, system.q2, scaled=True)


def threshold_channels(q1: float, q2: float, frame: JacobiFrame,
                       potential_scale: float = 1.0) -> ThresholdInfo:
    """Hydrogenic dissociation energies of the (2,3) and (1,3) channels.

    ``potential_scale`` multiplies every charge product; pass
    ``system.potential_scale`` for a scaled system (or use
    :meth:`ThreeBodySystem.thresholds`).
    """
    if not q2 > 0:
        raise InvalidInputError(f"q2 must be > 0, got {q2!r}")
    if not q1 >= 0:
        raise InvalidInputError(f"q1 must be >= 0, got {q1!r}")
    e23 = -frame.mu23 * (potential_scale * q2) ** 2 / 2.0
    e13 = -frame.mu13 * (potential_scale * q1) ** 2 / 2.0
    gap = 1.0 - (frame.mu13 * q1**2) / (frame.mu23 * q2**2)
    return ThresholdInfo(
        E23=e23,
        E13=e13,
        E_thr=min(e23, e13),
        in_D=in_stability_domain(q1, q2, frame),
        gap=gap,
        delta_eps=min(0.25, gap),
    )


def in_stability_domain(q1: float, q2: float, frame: JacobiFrame) -> bool:
    return bool(q1 > 0 and frame.mu23 * q2**2 > frame.mu13 * q1**2)


def eval_W(r, xi, q1: float, q2: float, frame: JacobiFrame):
    """Inter-cluster potential of the scaled Hamiltonian,
    ``W = -q1/(q2 |(1-s) xi - r|) + q1/|s xi + r|``.

    Accepts single 3-vectors or stacked arrays of shape (..., 3).
    """
    r = np.asarray(r, dtype=float)
    xi = np.asarray(xi, dtype=float)
    s = frame.s
    d13 = np.linalg.norm((1.0 - s) * xi - r, axis=-1)
    d12 = np.linalg.norm(s * xi + r, axis=-1)
    if q1 == 0:
        return np.zeros_like(d13) if d13.ndim else 0.0
    if np.any(d13 == 0) or np.any(d12 == 0):
        raise SingularityError("W evaluated at a Coulomb singularity")
    w = -q1 / (q2 * d13) + q1 / d12
    return w if w.ndim else float(w)


def tail_condition_for(q1: float, q2: float, frame: JacobiFrame, dq: float) -> TailCondition:
    """Far region where ``2 mu W >= 1/|r|^2`` (delta = 1 in the (3+delta)/4 form).

    ``frame`` should be the frame of the scaled system, since ``mu`` enters C0.
    """
    if not dq > 0:
        raise InvalidInputError(f"dq must be > 0, got {dq!r}")
    if not q2 > 1.0:
        raise ConditionNotApplicableError(f"net cluster charge is not repulsive for q2={q2}")
    if q2 < 1.0 + dq * (1 - 1e-12):
        raise ConditionNotApplicableError(f"requires q2 >= 1 + dq, got q2={q2}, dq={dq}")
    if not q1 > 0:
        raise ConditionNotApplicableError("requires q1 > 0")
    c0 = 2.0 * (2.0 + dq) / (frame.mu * q1 * dq)
    c1 = (4.0 + dq) / dq
    return TailCondition(delta=1.0, C0=c0, C1=c1, p=1.0)


def sample_tail_region(cond: TailCondition, n: int, rng: np.random.Generator,
                       xi_range=(1e-3, 1e2), excess_range=(1e-9, 1e3)):
    """Random (r, xi) pairs inside the far region of ``cond``."""
    def directions(k):
        v = rng.standard_normal((k, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    lo, hi = np.log(xi_range)
    xin = np.exp(rng.uniform(lo, hi, n))
    lo, hi = np.log(excess_range)
    rmin = cond.C0 + cond.C1 * xin**cond.p
    rn = rmin * (1.0 + np.exp(rng.uniform(lo, hi, n)))
    return rn[:, None] * directions(n), xin[:, None] * directions(n)


def verify_tail_condition(cond: TailCondition, q1: float, q2: float, frame: JacobiFrame,
                          n_samples: int = 10_000, seed: int = 0) -> int:
    """Monte-Carlo check of ``2 mu W >= (3+delta)/(4 |r|^2)``; returns the
    number of sampled violations."""
    rng = np.random.default_rng(seed)
    r, xi = sample_tail_region(cond, n_samples, rng)
    lhs = 2.0 * frame.mu * eval_W(r, xi, q1, q2, frame)
    rhs = (3.0 + cond.delta) / (4.0 * np.sum(r * r, axis=1))
    return int(np.count_nonzero(lhs < rhs))
