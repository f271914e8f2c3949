"""Lattice stand-ins for the resolvent comparison and the Borromean bound.

The kinetic operator is the second-order central difference ``-(1/2m) D2`` on
sites ``x_j = j h`` (j = 1..N) with Dirichlet ends.  Read as a radial line it
is the s-wave part of a 3-d problem (u(0) = 0), so square wells have a finite
binding threshold.  Its off-diagonal entries are non-positive, hence
``H0 + V - z`` is an M-matrix for z below its spectrum and every resolvent
entry is non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .errors import InvalidInputError, ResolventSetError


@dataclass
class LatticeSystem:
    size: int
    spacing: float
    mass: float = 0.5
    potentials: dict[str, np.ndarray] = field(default_factory=dict)
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise InvalidInputError("only one-dimensional lattices are supported")
        if self.size < 2 or self.spacing <= 0 or self.mass <= 0:
            raise InvalidInputError("size >= 2, spacing > 0 and mass > 0 required")
        for key, v in self.potentials.items():
            v = np.asarray(v, dtype=float)
            if v.shape != (self.size,):
                raise InvalidInputError(f"potential {key!r} has shape {v.shape}, expected ({self.size},)")
            self.potentials[key] = v

    @property
    def sites(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.size + 1)

    @property
    def hopping(self) -> float:
        return 1.0 / (2.0 * self.mass * self.spacing**2)

    def kinetic(self) -> sparse.csr_matrix:
        t = self.hopping
        n = self.size
        return sparse.diags([np.full(n - 1, -t), np.full(n, 2 * t), np.full(n - 1, -t)],
                            [-1, 0, 1], format="csr")

    def banded(self, V=None, shift: float = 0.0) -> np.ndarray:
        """Upper banded storage (2, N) of ``H0 + V + shift``."""
        t = self.hopping
        ab = np.empty((2, self.size))
        ab[0, 0] = 0.0
        ab[0, 1:] = -t
        ab[1] = 2 * t + shift
        if V is not None:
            ab[1] += np.asarray(V, dtype=float)
        return ab

    def dense(self, V=None) -> np.ndarray:
        H = self.kinetic().toarray()
        if V is not None:
            H[np.diag_indices(self.size)] += np.asarray(V, dtype=float)
        return H

    def bottom(self, V=None) -> float:
        """Lowest eigenvalue of ``H0 + V``."""
        ab = self.banded(V)
        return float(linalg.eig_banded(ab, select="i", select_range=(0, 0), eigvals_only=True)[0])


def _check_below(lattice: LatticeSystem, V, z: float, name: str):
    lo = lattice.bottom(V)
    if not z < lo:
        raise ResolventSetError(f"{name}={z} is not below the spectrum bottom {lo}")


def resolvent_apply(lattice: LatticeSystem, V, z: float, f) -> np.ndarray:
    """``(H0 + V - z)^{-1} f`` by a banded Cholesky solve."""
    _check_below(lattice, V, z, "z")
    return linalg.solveh_banded(lattice.banded(V, -z), np.asarray(f, dtype=float))


def resolvent_matrix(lattice: LatticeSystem, V, z: float) -> np.ndarray:
    _check_below(lattice, V, z, "z")
    return linalg.solveh_banded(lattice.banded(V, -z), np.eye(lattice.size))


@dataclass
class ComparisonResult:
    violations: int
    max_excess: float
    positive: bool
    r1: np.ndarray
    r2: np.ndarray
    slack: float


def discrete_resolvent_compare(lattice: LatticeSystem, V1, V2, z1: float, z2: float, f,
                               slack: float = 1e-12, check_entries: bool = True) -> ComparisonResult:
    """Entrywise check of ``R1 |f| <= R2 |f|`` for ``V1 >= V2`` and ``z1 <= z2``."""
    V1 = np.asarray(V1, dtype=float)
    V2 = np.asarray(V2, dtype=float)
    if np.any(V1 < V2):
        raise InvalidInputError("requires V1 >= V2 entrywise")
    if z1 > z2:
        raise InvalidInputError("requires z1 <= z2")
    af = np.abs(np.asarray(f, dtype=float))
    r1 = resolvent_apply(lattice, V1, z1, af)
    r2 = resolvent_apply(lattice, V2, z2, af)
    excess = r1 - r2
    positive = True
    if check_entries:
        positive = bool(np.all(resolvent_matrix(lattice, V1, z1) >= 0)
                        and np.all(resolvent_matrix(lattice, V2, z2) >= 0))
    return ComparisonResult(
        violations=int(np.count_nonzero(excess > slack)),
        max_excess=float(np.max(excess)),
        positive=positive, r1=r1, r2=r2, slack=slack,
    )


def random_instance(rng: np.random.Generator, size: int = 200, spacing: float = 0.05):
    """Random (lattice, V1, V2, z1, z2, f) satisfying the comparison preconditions."""
    lat = LatticeSystem(size, spacing)
    V2 = rng.uniform(-20.0, 20.0, size)
    V1 = V2 + rng.exponential(5.0, size) * (rng.random(size) < 0.5)
    z2 = lat.bottom(V2) - rng.exponential(2.0)
    z1 = z2 - rng.exponential(2.0) * (rng.random() < 0.7)
    f = rng.standard_normal(size)
    return lat, V1, V2, z1, z2, f


# ---------------------------------------------------------------------------
# Borromean bound


PAIRS = ((1, 2), (1, 3), (2, 3))


@dataclass
class BorromeanResult:
    epsilon: float
    per_subsystem: dict[int, float]
    strictly_borromean: bool


def pair_epsilon(lattice: LatticeSystem, V, weight_scale: float = 1.0) -> float:
    """Largest p with ``H0 + V >= p c (V)_-`` on the lattice (c = weight_scale).

    The weight vanishes off its support, so the generalized problem is
    reduced to the support by a Schur complement; the answer is the smallest
    eigenvalue of ``W^{-1/2} K W^{-1/2}``.
    """
    V = np.asarray(V, dtype=float)
    w = weight_scale * np.maximum(-V, 0.0)
    S = np.flatnonzero(w > 0)
    if S.size == 0:
        return math.inf
    N = np.flatnonzero(w <= 0)
    H = lattice.dense(V)
    K = H[np.ix_(S, S)]
    if N.size:
        HNN = H[np.ix_(N, N)]
        HNS = H[np.ix_(N, S)]
        try:
            c = linalg.cho_factor(HNN)
        except linalg.LinAlgError:
            return -math.inf    # a bound state lives off the weight support
        K = K - HNS.T @ linalg.cho_solve(c, HNS)
    d = 1.0 / np.sqrt(w[S])
    M = d[:, None] * K * d[None, :]
    return float(linalg.eigh(0.5 * (M + M.T), eigvals_only=True, subset_by_index=[0, 0])[0])


def borromean_bound(masses, lattice: LatticeSystem, pair_potentials: dict,
                    weight_scale: float = 1.0) -> BorromeanResult:
    """epsilon = min over subsystems s of the bound for the pair not containing s.

    Each pair is described on its own relative-coordinate lattice (spacing and
    size of ``lattice``, kinetic mass = pair reduced mass); the spectator and
    centre-of-mass kinetic energies have infimum 0 and drop out.
    """
    m = dict(zip((1, 2, 3), masses))
    per = {}
    for s in (1, 2, 3):
        i, k = (p for p in (1, 2, 3) if p != s)
        V = pair_potentials.get((i, k))
        if V is None:
            per[s] = math.inf
            continue
        mu = m[i] * m[k] / (m[i] + m[k])
        lat = LatticeSystem(lattice.size, lattice.spacing, mu)
        per[s] = pair_epsilon(lat, V, weight_scale)
    eps = min(per.values())
    return BorromeanResult(eps, per, bool(eps > 0))


def dense_pencil_epsilon(lattice: LatticeSystem, V, weight_scale: float = 1.0) -> float:
    """Oracle: ``1/lambda_max`` of the dense pencil ``W u = lambda H u``."""
    V = np.asarray(V, dtype=float)
    W = np.diag(weight_scale * np.maximum(-V, 0.0))
    if not np.any(W):
        return math.inf
    lam = linalg.eigh(W, lattice.dense(V), eigvals_only=True)
    return float(1.0 / lam[-1])


def square_well(lattice: LatticeSystem, depth: float, radius: float) -> np.ndarray:
    return np.where(lattice.sites <= radius, -depth, 0.0)


def critical_depth(lattice: LatticeSystem, radius: float) -> float:
    """Depth at which a square well first binds on the lattice (bisection on the bottom)."""
    lo, hi = 0.0, 1.0
    while lattice.bottom(square_well(lattice, hi, radius)) > 0:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if lattice.bottom(square_well(lattice, mid, radius)) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def borromean_oracle(masses, lattice: LatticeSystem, pair_potentials: dict,
                     weight_scale: float = 1.0) -> float:
    """Dense-pencil counterpart of :func:`borromean_bound`."""
    m = dict(zip((1, 2, 3), masses))
    vals = []
    for (i, k), V in pair_potentials.items():
        mu = m[i] * m[k] / (m[i] + m[k])
        lat = LatticeSystem(lattice.size, lattice.spacing, mu)
        vals.append(dense_pencil_epsilon(lat, V, weight_scale))
    return min(vals) if vals else math.inf


def _binding_scale(lattice: LatticeSystem, profile: np.ndarray) -> float:
    """Smallest s > 0 with a bound state of ``H0 + s profile`` (bisection)."""
    lo, hi = 0.0, 1.0
    while lattice.bottom(hi * profile) > 0:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if lattice.bottom(mid * profile) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def random_borromean_instance(rng: np.random.Generator, size: int = 120, spacing: float = 0.05):
    """Random masses and three pair potentials, each short of binding.

    Each profile is a random attractive well (optionally with a repulsive
    shoulder) scaled to a random fraction in [0.3, 0.9] of its critical
    strength, so every pair is unbound and epsilon > 0.
    """
    masses = tuple(float(x) for x in rng.uniform(0.5, 3.0, 3))
    lat = LatticeSystem(size, spacing)
    pots = {}
    for i, k in PAIRS:
        mu = masses[i - 1] * masses[k - 1] / (masses[i - 1] + masses[k - 1])
        pl = LatticeSystem(size, spacing, mu)
        x = pl.sites
        radius = rng.uniform(0.5, 2.0)
        profile = -rng.uniform(0.2, 1.0, size) * (x <= radius)
        if rng.random() < 0.5:
            profile += rng.uniform(0.0, 0.5) * ((x > radius) & (x <= radius + 0.5))
        pots[(i, k)] = rng.uniform(0.3, 0.9) * _binding_scale(pl, profile) * profile
    return masses, lat, pots
