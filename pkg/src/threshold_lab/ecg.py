"""Stochastic variational solver over explicitly correlated Gaussians.

A basis function over ``d`` Jacobi vectors ``x = (x_1, ..., x_d)`` (each a
3-vector) is ``exp(-1/2 sum_ij A_ij x_i.x_j)``, S-wave only.  Products of two
such functions are Gaussians with width matrix ``C = A + B``; every matrix
element below is a closed form in ``C``.

The Hamiltonian is ``1/2 sum_ij L_ij p_i.p_j + sum_t V_t(|w_t . x|)`` where
each central potential is one of ``coulomb`` (``g/y``), ``well``
(``g`` for ``y < R``) or ``inverse_square_tail`` (``g/y^2`` for ``y >= R``).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize, special

from .errors import ConditioningError, DegenerateBasisError, InvalidInputError
from .model import ThreeBodySystem

log = logging.getLogger(__name__)

_TWO_PI = 2.0 * math.pi
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


# ---------------------------------------------------------------------------
# Hamiltonian description


@dataclass(frozen=True)
class Term:
    """``strength * shape(|w.x|)`` with the shape fixed by ``kind``."""

    w: tuple[float, ...]
    strength: float
    kind: str = "coulomb"
    radius: float = 0.0
    label: str = ""

    def shape(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "coulomb":
            return 1.0 / y
        if self.kind == "well":
            return (y < self.radius).astype(float)
        if self.kind == "inverse_square_tail":
            return np.where(y >= self.radius, 1.0 / (y * y), 0.0)
        raise InvalidInputError(f"unknown potential kind {self.kind!r}")

    def __call__(self, y):
        return self.strength * self.shape(y)


def shape_mean(kind: str, c, radius: float = 0.0):
    """Mean of ``shape(|y|)`` for a 3-d Gaussian density ``~ exp(-c y^2/2)``."""
    c = np.asarray(c, dtype=float)
    if kind == "coulomb":
        return np.sqrt(2.0 * c / math.pi)
    if kind == "well":
        return special.gammainc(1.5, 0.5 * c * radius**2)
    if kind == "inverse_square_tail":
        return c * special.erfc(radius * np.sqrt(0.5 * c))
    raise InvalidInputError(f"unknown potential kind {kind!r}")


@dataclass(frozen=True)
class Hamiltonian:
    inv_mass: np.ndarray
    terms: tuple[Term, ...]

    @property
    def dim(self) -> int:
        return self.inv_mass.shape[0]

    @classmethod
    def from_system(cls, system: ThreeBodySystem) -> "Hamiltonian":
        terms = tuple(Term(tuple(w), g, "coulomb", label=lab)
                      for lab, g, w in system.pair_terms())
        return cls(system.inverse_mass_matrix(), terms)

    @classmethod
    def two_body(cls, mu: float, terms: Sequence[Term]) -> "Hamiltonian":
        """Single relative coordinate with reduced mass ``mu``."""
        if not mu > 0:
            raise InvalidInputError("reduced mass must be positive")
        return cls(np.array([[1.0 / mu]]), tuple(terms))

    @classmethod
    def hydrogenic(cls, mu: float, q: float) -> "Hamiltonian":
        return cls.two_body(mu, [Term((1.0,), -q, "coulomb")])

    def with_strengths(self, strengths: Sequence[float]) -> "Hamiltonian":
        terms = tuple(replace(t, strength=g) for t, g in zip(self.terms, strengths))
        return replace(self, terms=terms)


# ---------------------------------------------------------------------------
# Basis elements and closed-form matrix elements


@dataclass(frozen=True)
class GaussianBasisElement:
    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidInputError("A must be a square matrix")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14 * np.abs(A).max()):
            raise InvalidInputError("A must be symmetric")
        if np.any(np.linalg.eigvalsh(A) <= 0):
            raise InvalidInputError("A must be positive definite")
        object.__setattr__(self, "A", A)


def _det_inv(C):
    """Determinant and inverse of a stack of 1x1 or 2x2 matrices."""
    d = C.shape[-1]
    if d == 1:
        det = C[..., 0, 0]
        return det, 1.0 / C
    if d == 2:
        a, b, c = C[..., 0, 0], C[..., 0, 1], C[..., 1, 1]
        det = a * c - b * b
        inv = np.empty_like(C)
        inv[..., 0, 0] = c / det
        inv[..., 1, 1] = a / det
        inv[..., 0, 1] = inv[..., 1, 0] = -b / det
        return det, inv
    return np.linalg.det(C), np.linalg.inv(C)


def _pair_blocks(Ai, Aj, ham: Hamiltonian):
    """Normalized overlap, kinetic and per-term *shape* matrices for every pair
    of the stacks ``Ai`` (n,d,d) and ``Aj`` (m,d,d)."""
    C = Ai[:, None] + Aj[None, :]
    det, Cinv = _det_inv(C)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        raise ConditioningError("A1 + A2 is singular or not positive definite")
    di, _ = _det_inv(2.0 * Ai)
    dj, _ = _det_inv(2.0 * Aj)
    S = (di[:, None] * dj[None, :]) ** 0.75 / det**1.5
    # 3/2 Tr(A_i C^-1 A_j L)
    M = np.einsum("iab,ijbc,jcd,de->ijae", Ai, Cinv, Aj, ham.inv_mass)
    T = 1.5 * np.einsum("ijaa->ij", M) * S
    V = []
    for t in ham.terms:
        w = np.asarray(t.w, dtype=float)
        sig2 = np.einsum("a,ijab,b->ij", w, Cinv, w)
        V.append(S * shape_mean(t.kind, 1.0 / sig2, t.radius))
    return S, T, V


def matrix_elements(e1: GaussianBasisElement, e2: GaussianBasisElement,
                    system_or_ham) -> tuple[float, float, list[float]]:
    """(overlap, kinetic, per-pair potential values) between two normalized
    elements; potential values include the pair strengths."""
    ham = system_or_ham if isinstance(system_or_ham, Hamiltonian) else Hamiltonian.from_system(system_or_ham)
    S, T, V = _pair_blocks(e1.A[None], e2.A[None], ham)
    return (float(S[0, 0]), float(T[0, 0]),
            [t.strength * float(v[0, 0]) for t, v in zip(ham.terms, V)])


# ---------------------------------------------------------------------------
# Generalized eigenproblem


@dataclass
class SpectralResult:
    E0: float
    coefficients: np.ndarray
    basis_size: int
    overlap_condition: float
    discarded: int = 0
    seed: int | None = None
    energies: np.ndarray | None = None
    vectors: np.ndarray | None = None


def solve_generalized(H, S, regularization: float = 1e-12) -> SpectralResult:
    """Lowest eigenpair of ``H c = E S c`` on the subspace where the spectrum
    of ``S`` exceeds ``regularization * max(spectrum)``."""
    H = np.asarray(H, dtype=float)
    S = np.asarray(S, dtype=float)
    if H.shape != S.shape or H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise InvalidInputError("H and S must be square matrices of equal shape")
    n = H.shape[0]
    if n == 0:
        raise DegenerateBasisError("empty basis")
    sig, Q = linalg.eigh(S)
    smax = sig[-1]
    if not smax > 0:
        raise DegenerateBasisError("overlap matrix has no positive spectrum")
    keep = sig > regularization * smax
    if not np.any(keep):
        raise DegenerateBasisError("retained subspace is empty")
    X = Q[:, keep] / np.sqrt(sig[keep])
    Hr = X.T @ H @ X
    E, Y = linalg.eigh(0.5 * (Hr + Hr.T))
    U = X @ Y
    cond = smax / sig[0] if sig[0] > 0 else math.inf
    return SpectralResult(E0=float(E[0]), coefficients=U[:, 0].copy(), basis_size=n,
                          overlap_condition=float(cond), discarded=int(n - keep.sum()),
                          energies=E, vectors=U)


# ---------------------------------------------------------------------------
# Basis state with cached matrices


class BasisState:
    """Growing basis with its overlap, kinetic and per-term shape matrices.

    Term strengths enter only at assembly time, so the lowest energy for other
    strengths (e.g. other charges at fixed masses) is cheap to re-evaluate.
    """

    def __init__(self, ham: Hamiltonian, A=None, regularization: float = 1e-12):
        self.ham = ham
        self.regularization = regularization
        d = ham.dim
        self.A = np.zeros((0, d, d))
        self.S = np.zeros((0, 0))
        self.T = np.zeros((0, 0))
        self.V = [np.zeros((0, 0)) for _ in ham.terms]
        self.result: SpectralResult | None = None
        if A is not None and len(A):
            self.extend(np.asarray(A, dtype=float))

    def __len__(self):
        return self.A.shape[0]

    @property
    def strengths(self) -> np.ndarray:
        return np.array([t.strength for t in self.ham.terms])

    def set_hamiltonian(self, ham: Hamiltonian):
        """Change term strengths (same coordinates, masses and shapes)."""
        if ham.dim != self.ham.dim or len(ham.terms) != len(self.ham.terms):
            raise InvalidInputError("incompatible Hamiltonian")
        self.ham = ham
        self.result = self.solve() if len(self) else None

    def hamiltonian_matrix(self, strengths=None) -> np.ndarray:
        g = self.strengths if strengths is None else strengths
        H = self.T.copy()
        for gi, Vi in zip(g, self.V):
            H += gi * Vi
        return H

    def solve(self, strengths=None) -> SpectralResult:
        return solve_generalized(self.hamiltonian_matrix(strengths), self.S, self.regularization)

    def energy(self, strengths=None) -> float:
        return self.solve(strengths).E0

    def extend(self, Anew):
        Anew = np.asarray(Anew, dtype=float).reshape(-1, self.ham.dim, self.ham.dim)
        Sx, Tx, Vx = _pair_blocks(Anew, self.A, self.ham) if len(self) else (None, None, None)
        Sn, Tn, Vn = _pair_blocks(Anew, Anew, self.ham)

        def grow(M, X, N):
            if X is None:
                return N
            return np.block([[M, X.T], [X, N]])

        self.S = grow(self.S, Sx, Sn)
        self.T = grow(self.T, Tx, Tn)
        self.V = [grow(M, None if Vx is None else X, N)
                  for M, X, N in zip(self.V, Vx or [None] * len(Vn), Vn)]
        self.A = np.concatenate([self.A, Anew])
        self.result = self.solve()

    def replace(self, i: int, Anew):
        A = self.A.copy()
        A[i] = Anew
        self.__init__(self.ham, A, self.regularization)

    def trial_energies(self, Acand, lin_dep_tol: float = 1e-9) -> np.ndarray:
        """Lowest energy after appending each candidate (``inf`` when the
        candidate is numerically linearly dependent on the basis)."""
        Acand = np.asarray(Acand, dtype=float)
        m = Acand.shape[0]
        g = self.strengths
        Sd, Td, Vd = _pair_blocks(Acand, Acand, self.ham)
        hbb = np.diag(Td) + sum(gi * np.diag(Vi) for gi, Vi in zip(g, Vd))
        if len(self) == 0:
            return hbb
        Sx, Tx, Vx = _pair_blocks(Acand, self.A, self.ham)
        Hx = Tx + sum(gi * Vi for gi, Vi in zip(g, Vx))
        E = self.result.energies
        U = self.result.vectors
        P = Sx @ U
        Hb = Hx @ U
        d2 = 1.0 - np.sum(P * P, axis=1)
        out = np.full(m, np.inf)
        for j in range(m):
            if not d2[j] > lin_dep_tol:
                continue
            dn = math.sqrt(d2[j])
            p, hb = P[j], Hb[j]
            gv = (hb - E * p) / dn
            hvv = (hbb[j] - 2.0 * p @ hb + np.sum(E * p * p)) / d2[j]
            out[j] = _arrowhead_min(E, gv, hvv)
        return out


def _arrowhead_min(E, g, h):
    """Smallest eigenvalue of [[diag(E), g], [g', h]] (E ascending)."""
    e0 = E[0]
    gn = math.sqrt(float(g @ g))
    lo = min(e0, h) - gn - 1e-12 * (1 + abs(e0))

    def f(lam):
        return h - lam - np.sum(g * g / (E - lam))

    hi = e0 - 1e-14 * (1 + abs(e0))
    if f(hi) > 0:
        # lowest root sits against E[0] (negligible coupling)
        return min(e0, h) if h < e0 else e0
    if f(lo) < 0:
        lo -= 1.0 + gn
    return optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


# ---------------------------------------------------------------------------
# Stochastic growth


@dataclass
class SolverConfig:
    max_basis: int = 120
    candidates_per_step: int = 24
    alpha_min: float = 1e-3
    alpha_max: float = 1e3
    regularization: float = 1e-12
    seed: int = 0
    tolerance: float = 0.0
    patience: int = 5
    refine_sweeps: int = 0
    refine_candidates: int = 12
    lin_dep_tol: float = 1e-9
    margin: float = 1e-6
    max_failures: int = 50
    mutation_fraction: float = 0.5

    def __post_init__(self):
        for name in ("max_basis", "candidates_per_step", "patience", "refine_candidates"):
            if int(getattr(self, name)) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if not (0 < self.alpha_min < self.alpha_max < math.inf):
            raise InvalidInputError("alpha bounds must satisfy 0 < alpha_min < alpha_max < inf")
        if self.seed < 0:
            raise InvalidInputError("seed must be non-negative")
        if not 0.0 <= self.mutation_fraction <= 1.0:
            raise InvalidInputError("mutation_fraction must lie in [0, 1]")
        if self.regularization <= 0 or self.tolerance < 0 or self.refine_sweeps < 0:
            raise InvalidInputError("regularization must be positive, tolerance and refine_sweeps non-negative")


def _pair_vectors(ham: Hamiltonian) -> np.ndarray:
    """Separation vectors used to build correlated widths."""
    return np.array([t.w for t in ham.terms], dtype=float)


def sample_element(ham: Hamiltonian, rng: np.random.Generator, alpha_min: float,
                   alpha_max: float) -> np.ndarray:
    """Random width matrix ``A = sum_p alpha_p w_p w_p^T`` with log-uniform
    ``alpha_p`` per separation (for d = 1 this is a single log-uniform width)."""
    lo, hi = math.log(alpha_min), math.log(alpha_max)
    if ham.dim == 1:
        return np.array([[math.exp(rng.uniform(lo, hi))]])
    W = _pair_vectors(ham)
    alpha = np.exp(rng.uniform(lo, hi, len(W)))
    A = np.einsum("p,pa,pb->ab", alpha, W, W)
    return 0.5 * (A + A.T)


def pair_widths(ham: Hamiltonian, A) -> np.ndarray:
    """Coefficients ``alpha_p`` with ``A = sum_p alpha_p w_p w_p^T`` (least squares
    when the pair vectors over-determine A)."""
    A = np.asarray(A, dtype=float)
    if ham.dim == 1:
        return np.array([A[0, 0]])
    W = _pair_vectors(ham)
    iu = np.triu_indices(ham.dim)
    M = np.stack([np.outer(w, w)[iu] for w in W], axis=1)
    alpha, *_ = np.linalg.lstsq(M, A[iu], rcond=None)
    return alpha


def mutate_element(ham: Hamiltonian, A, rng: np.random.Generator, alpha_min: float,
                   alpha_max: float):
    """Multiplicative random perturbation of the pair widths of ``A``; returns
    None if the result leaves the admissible set."""
    alpha = pair_widths(ham, A)
    sigma = math.exp(rng.uniform(math.log(0.05), 0.0))
    alpha = alpha * np.exp(sigma * rng.standard_normal(alpha.shape))
    mag = np.abs(alpha)
    if np.any((mag > 0) & ((mag < alpha_min) | (mag > alpha_max))):
        return None
    if ham.dim == 1:
        Anew = np.array([[alpha[0]]])
    else:
        W = _pair_vectors(ham)
        Anew = np.einsum("p,pa,pb->ab", alpha, W, W)
        Anew = 0.5 * (Anew + Anew.T)
    if np.linalg.eigvalsh(Anew)[0] <= 0:
        return None
    return Anew


def _candidates(ham: Hamiltonian, config: "SolverConfig", step: int, current) -> np.ndarray:
    """Fresh random widths plus mutations of randomly chosen current elements."""
    n = config.candidates_per_step
    n_mut = int(round(config.mutation_fraction * n)) if current is not None and len(current) else 0
    out = []
    for j in range(n):
        rng = _candidate_rng(config.seed, step, j)
        A = None
        if j < n_mut:
            A = mutate_element(ham, current[rng.integers(len(current))], rng,
                               config.alpha_min, config.alpha_max)
        if A is None:
            A = sample_element(ham, rng, config.alpha_min, config.alpha_max)
        out.append(A)
    return np.array(out)


def _candidate_rng(seed: int, step: int, index: int) -> np.random.Generator:
    # one stream per candidate index keeps results independent of scheduling
    return np.random.default_rng([seed, step, index])


@dataclass
class Basis:
    A: np.ndarray
    history: list[float] = field(default_factory=list)

    def __len__(self):
        return self.A.shape[0]

    def elements(self) -> list[GaussianBasisElement]:
        return [GaussianBasisElement(a) for a in self.A]


def optimize_basis(system_or_ham, config: SolverConfig, initial=None,
                   step_offset: int = 0) -> tuple[Basis, SpectralResult]:
    """Greedy stochastic growth of a correlated-Gaussian basis.

    ``initial`` (an array of width matrices or a :class:`Basis`) warm-starts the
    growth.  Deterministic for a fixed ``config.seed``.
    """
    if isinstance(system_or_ham, Hamiltonian):
        ham = system_or_ham
    else:
        system = system_or_ham
        if not system.scaled:
            raise InvalidInputError("optimize_basis requires a scaled system")
        if not system.q1 > 0:
            raise InvalidInputError("solver requires q1 > 0")
        ham = Hamiltonian.from_system(system)
    if isinstance(initial, Basis):
        initial = initial.A
    state = BasisState(ham, initial, config.regularization)
    history = [state.result.E0] if len(state) else []
    stall = 0
    failures = 0
    step = step_offset
    while len(state) < config.max_basis and failures < config.max_failures:
        cands = _candidates(ham, config, step, state.A if len(state) else None)
        step += 1
        trial = state.trial_energies(cands, config.lin_dep_tol)
        j = int(np.argmin(trial))
        prev = state.result.E0 if len(state) else math.inf
        if not trial[j] < prev:
            failures += 1
            continue
        state.extend(cands[j][None])
        E0 = state.result.E0
        if E0 > prev + 1e-13 * (1.0 + abs(prev)):
            # truncation moved the retained subspace; undo to keep E0 monotone
            state = BasisState(ham, state.A[:-1], config.regularization)
            failures += 1
            continue
        failures = 0
        history.append(E0)
        if config.tolerance > 0 and len(history) > 1:
            stall = stall + 1 if prev - E0 < config.tolerance else 0
            if stall >= config.patience:
                break
    if len(state) == 0:
        raise DegenerateBasisError("no admissible basis element found")
    for sweep in range(config.refine_sweeps):
        _refine(state, config, sweep, history)
    res = state.result
    res.seed = config.seed
    return Basis(state.A.copy(), history), res


def _refine(state: BasisState, config: SolverConfig, sweep: int, history: list[float]):
    """Replace elements one at a time when a random candidate lowers E0."""
    ham = state.ham
    n = len(state)
    for i in range(n):
        best_E = state.result.E0
        best_A = None
        keep = np.arange(n) != i
        sub = BasisState(ham, state.A[keep], config.regularization)
        cands = np.array([sample_element(ham, _candidate_rng(config.seed, 10**6 + sweep * n + i, j),
                                         config.alpha_min, config.alpha_max)
                          for j in range(config.refine_candidates)])
        # include gentle perturbations of the current element
        rng = _candidate_rng(config.seed, 2 * 10**6 + sweep * n + i, 0)
        scales = np.geomspace(0.01, 0.5, config.refine_candidates)[:, None, None]
        pert = state.A[i] * np.exp(scales * rng.standard_normal((config.refine_candidates, 1, 1)))
        cands = np.concatenate([cands, pert])
        trial = sub.trial_energies(cands, config.lin_dep_tol)
        j = int(np.argmin(trial))
        if trial[j] < best_E - 1e-15 * abs(best_E):
            best_A = cands[j]
        if best_A is not None:
            sub.extend(best_A[None])
            if sub.result.E0 < state.result.E0:
                # keep element order: rebuild in place
                A = state.A.copy()
                A[i] = best_A
                state.__init__(ham, A, config.regularization)
                history.append(state.result.E0)


# ---------------------------------------------------------------------------
# Size observables


@dataclass
class SizeObservables:
    r2: float
    xi2: float | None
    tail_mass: Callable[..., float]


def _pair_products(A, c):
    n = len(c)
    C = A[:, None] + A[None, :]
    det, Cinv = _det_inv(C)
    di, _ = _det_inv(2.0 * A)
    S = (di[:, None] * di[None, :]) ** 0.75 / det**1.5
    wts = np.outer(c, c) * S
    return C, det, Cinv, wts


def size_observables(basis, coefficients) -> SizeObservables:
    """Mean squared lengths of the Jacobi vectors and the outside-ball
    probability ``P_out(R)`` for a normalized mixture ``sum_i c_i phi_i``.

    ``tail_mass(R, region="r")`` integrates out every coordinate but the
    first; ``region="joint"`` uses the ball ``sum_k |x_k|^2 <= R^2``.
    """
    A = basis.A if isinstance(basis, Basis) else np.asarray(basis, dtype=float)
    c = np.asarray(coefficients, dtype=float)
    C, det, Cinv, wts = _pair_products(A, c)
    norm = wts.sum()
    wts = wts / norm
    d = A.shape[-1]
    moments = [3.0 * float(np.sum(wts * Cinv[..., k, k])) for k in range(d)]
    # r-marginal width: Schur complement of C on the first coordinate
    kappa_r = 1.0 / Cinv[..., 0, 0]
    if d == 1:
        sig = Cinv[..., 0, 0][..., None]
    else:
        sig = np.linalg.eigvalsh(Cinv)  # per-component covariances

    def tail_mass(R, region: str = "r") -> float:
        if R <= 0:
            return 1.0
        if region == "r" or d == 1:
            p_in = np.sum(wts * special.gammainc(1.5, 0.5 * kappa_r * R * R))
        elif region == "joint":
            p_in = np.sum(wts * _ball_probability(sig, R))
        else:
            raise InvalidInputError(f"unknown region {region!r}")
        return float(1.0 - p_in)

    xi2 = moments[1] if d > 1 else None
    return SizeObservables(r2=moments[0], xi2=xi2, tail_mass=tail_mass)


def _ball_probability(sig, R):
    """P(sum_k sig_k U_k <= R^2) with U_k ~ chi^2_3 independent, for two
    covariance eigenvalues ``sig[..., 0:2]``."""
    s1, s2 = sig[..., 0], sig[..., 1]
    tmax = R / np.sqrt(s1)
    t = 0.5 * (tmax[..., None] * (_GL_NODES + 1.0))
    wq = 0.5 * tmax[..., None] * _GL_WEIGHTS
    dens = 2.0 * t * t * np.exp(-0.5 * t * t) / math.sqrt(_TWO_PI)
    rest = np.clip(R * R - s1[..., None] * t * t, 0.0, None) / s2[..., None]
    return np.sum(wq * dens * special.gammainc(1.5, 0.5 * rest), axis=-1)
