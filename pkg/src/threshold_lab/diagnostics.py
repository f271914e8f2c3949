"""Size diagnostics of near-threshold bound states.

Spreading is measured by the divergence exponent ``beta`` of a size
observable along a sequence of states approaching threshold,
``size ~ gap^(-beta)``.  Two-body radial models are solved by ODE shooting
(no Gaussians) and serve as ground truth; three-body paths use the
correlated-Gaussian solver with warm-started bases.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .ecg import (
    Basis,
    BasisState,
    Hamiltonian,
    SolverConfig,
    Term,
    optimize_basis,
    size_observables,
)
from .errors import InvalidInputError, NumericalError
from .model import ThreeBodySystem, scale_system

log = logging.getLogger(__name__)

NON_SPREADING_MAX = 0.15
SPREADING_MIN = 0.6
GAP_FLOOR = 1e-5


@dataclass
class SizeRecord:
    q1: float
    q2: float
    gap: float
    r2: float
    xi2: float | None
    pout: dict[float, float] = field(default_factory=dict)
    basis_size: int = 0
    depth: float | None = None
    r_mean: float | None = None
    r_median: float | None = None


@dataclass
class SpreadingVerdict:
    classification: str
    beta: float
    residual: float
    observable: str = "r2"


def classify_spreading(records, observable: str = "r2", non_spreading_max: float = NON_SPREADING_MAX,
                       spreading_min: float = SPREADING_MIN, min_records: int = 4,
                       min_decades: float = 2.0) -> SpreadingVerdict:
    """Least-squares fit of ``log size`` against ``log gap``; ``beta = -slope``.

    ``observable`` is ``"r2"`` (mean squared separation), ``"r_mean_sq"``
    (squared mean separation) or ``"r_median_sq"`` (squared median
    separation).  Only the median stays finite for every normalizable
    threshold state; the moments diverge when the state decays slowly.
    """
    recs = [r for r in records if r.gap > 0]
    if len(recs) < min_records:
        raise InvalidInputError(f"need at least {min_records} records, got {len(recs)}")
    gaps = np.array([r.gap for r in recs])
    if math.log10(gaps.max() / gaps.min()) < min_decades - 1e-6:
        raise InvalidInputError(f"records must span at least {min_decades} decades of gap")
    if observable == "r2":
        size = np.array([r.r2 for r in recs])
    elif observable == "r_mean_sq":
        if any(r.r_mean is None for r in recs):
            raise InvalidInputError("records carry no mean separation")
        size = np.array([r.r_mean for r in recs]) ** 2
    elif observable == "r_median_sq":
        if any(r.r_median is None for r in recs):
            raise InvalidInputError("records carry no median separation")
        size = np.array([r.r_median for r in recs]) ** 2
    else:
        raise InvalidInputError(f"unknown observable {observable!r}")
    if np.any(size <= 0):
        raise InvalidInputError("sizes must be positive")
    x, y = np.log(gaps), np.log(size)
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    beta = float(-slope)
    if beta <= non_spreading_max:
        cls = "NonSpreading"
    elif beta >= spreading_min:
        cls = "Spreading"
    else:
        cls = "Inconclusive"
    return SpreadingVerdict(cls, beta, resid, observable)


# ---------------------------------------------------------------------------
# two-body radial oracle


@dataclass(frozen=True)
class RadialModel:
    """s-wave model ``-u''/(2 mu) + V u = E u`` with a square well of the given
    radius and, for ``kind="tailed"``, ``(3+delta)/(8 mu r^2)`` beyond
    ``tail_start`` (i.e. ``2 mu V = (3+delta)/(4 r^2)``)."""

    kind: str = "well"
    radius: float = 1.0
    delta: float = 1.0
    tail_start: float = 1.0
    mu: float = 0.5

    def __post_init__(self):
        if self.kind not in ("well", "tailed"):
            raise InvalidInputError(f"unknown model {self.kind!r}")
        if self.radius <= 0 or self.mu <= 0 or self.delta <= 0:
            raise InvalidInputError("radius, mu and delta must be positive")
        if self.kind == "tailed" and self.tail_start < self.radius:
            raise InvalidInputError("tail must start outside the well")

    @property
    def match_radius(self) -> float:
        return self.tail_start if self.kind == "tailed" else self.radius

    @property
    def nu(self) -> float:
        return math.sqrt(1.0 + self.delta / 4.0)

    def potential(self, r, depth: float):
        r = np.asarray(r, dtype=float)
        v = np.where(r < self.radius, -depth, 0.0)
        if self.kind == "tailed":
            v = v + np.where(r >= self.tail_start, (3.0 + self.delta) / (8.0 * self.mu * r * r), 0.0)
        return v

    def terms(self, depth: float) -> list[Term]:
        out = [Term((1.0,), -depth, "well", self.radius, "well")]
        if self.kind == "tailed":
            out.append(Term((1.0,), (3.0 + self.delta) / (8.0 * self.mu), "inverse_square_tail",
                            self.tail_start, "tail"))
        return out

    def hamiltonian(self, depth: float) -> Hamiltonian:
        return Hamiltonian.two_body(self.mu, self.terms(depth))

    def _outer_logderiv(self, kappa: float, R: float) -> float:
        if self.kind == "well":
            return -kappa
        nu = self.nu
        x = kappa * R
        ratio = special.kve(nu + 1.0, x) / special.kve(nu, x)
        # d/dr log(sqrt(r) K_nu(kappa r)) with K' = nu K/x - K_{nu+1}
        return 0.5 / R + kappa * (nu / x - ratio)

    def _outer_moments(self, kappa: float, R: float):
        """Integrals of phi^2, r phi^2, r^2 phi^2 over (R, inf) for phi(R) = 1."""
        if self.kind == "well":
            b = 2.0 * kappa
            m0 = 1.0 / b
            m1 = (R * b + 1.0) / b**2
            m2 = (R * R * b * b + 2.0 * R * b + 2.0) / b**3
            return m0, m1, m2
        nu = self.nu
        X = kappa * R
        kR = special.kve(nu, X)

        def f(x, p):
            # (x/X)^(p+1) (K(x)/K(X))^2 over x, scaled back to r
            return (x / X) ** (p + 1) * (special.kve(nu, x) / kR) ** 2 * math.exp(-2.0 * (x - X))

        out = []
        for p in (0, 1, 2):
            val = 0.0
            a = X
            width = max(1.0, X)
            for _ in range(200):
                b = a + width
                seg, _ = integrate.quad(f, a, b, args=(p,), limit=200, epsabs=0.0, epsrel=1e-11)
                val += seg
                if b > X + 5.0 and seg < 1e-14 * val:
                    break
                a, width = b, width * 2.0
            # dr = dx/kappa, and r^p = R^p (x/X)^p; phi^2 = r K^2 / (R K(X)^2)
            out.append(val * R**p / kappa)
        return tuple(out)


@dataclass
class ShootingResult:
    depth: float
    energy: float
    norm: float
    r2: float
    r_mean: float
    pout: dict[float, float]
    mismatch: float
    r_median: float = math.nan


def _integrate_inner(model: RadialModel, depth: float, E: float, rtol: float = 1e-11):
    """Regular solution on (0, R_match] with running moments; returns
    (u, u', int u^2, int r u^2, int r^2 u^2, nodes, pieces)."""
    mu = model.mu
    breaks = sorted({model.radius, model.match_radius})
    y = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    a = 0.0
    nodes = 0
    pieces = []
    for b in breaks:
        if b <= a:
            continue
        vmid = float(model.potential(0.5 * (a + b), depth))

        def rhs(r, s, vmid=vmid):
            u, up = s[0], s[1]
            v = vmid
            if model.kind == "tailed" and r >= model.tail_start:
                v = float(model.potential(r, depth))
            return [up, 2.0 * mu * (v - E) * u, u * u, r * u * u, r * r * u * u]

        sol = integrate.solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=1e-14,
                                  dense_output=True)
        if not sol.success:
            raise NumericalError(f"radial integration failed on ({a}, {b}): {sol.message}")
        us = sol.sol(np.linspace(a, b, 400)[1:])[0]
        nodes += int(np.count_nonzero(np.diff(np.sign(us)) != 0))
        pieces.append((a, b, sol.sol))
        y = sol.y[:, -1]
        a = b
    return y, nodes, pieces


def _count_below(model: RadialModel, depth: float, E: float):
    y, nodes, _ = _integrate_inner(model, depth, E)
    kappa = math.sqrt(-2.0 * model.mu * E)
    lin = y[1] / y[0]
    lout = model._outer_logderiv(kappa, model.match_radius)
    return nodes + (1 if lin < lout else 0), lin - lout


def shoot_depth(model: RadialModel, gap: float, radii=(10.0,)) -> ShootingResult:
    """Well depth whose ground state sits at ``E = -gap`` and its sizes."""
    if not gap > 0:
        raise InvalidInputError("gap must be positive")
    E = -gap
    lo, hi = 0.0, 1.0
    while _count_below(model, hi, E)[0] < 1:
        hi *= 2.0
        if hi > 1e8:
            raise NumericalError("no binding depth found")
    # bisection on the eigenvalue count, then a root of the log-derivative mismatch
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if _count_below(model, mid, E)[0] >= 1:
            hi = mid
        else:
            lo = mid

    def F(d):
        return _count_below(model, d, E)[1]

    try:
        depth = optimize.brentq(F, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    except ValueError as exc:
        raise NumericalError(f"shooting bracket lost at gap={gap}: [{lo}, {hi}]") from exc
    return radial_sizes(model, depth, E, radii)


def radial_sizes(model: RadialModel, depth: float, E: float, radii=(10.0,)) -> ShootingResult:
    y, nodes, pieces = _integrate_inner(model, depth, E)
    R = model.match_radius
    kappa = math.sqrt(-2.0 * model.mu * E)
    u2 = y[0] ** 2
    m0, m1, m2 = model._outer_moments(kappa, R)
    norm = y[2] + u2 * m0
    r_mean = (y[3] + u2 * m1) / norm
    r2 = (y[4] + u2 * m2) / norm
    def pout_at(Rq):
        if Rq >= R:
            return _outer_mass(model, kappa, R, Rq) * u2 / norm
        inside = 0.0
        for a, b, sol in pieces:
            if a >= Rq:
                break
            inside += sol(min(b, Rq))[2] - sol(a)[2]
        return 1.0 - inside / norm

    pout = {Rq: pout_at(Rq) for Rq in radii}
    hi = R
    while pout_at(hi) > 0.5:
        hi *= 2.0
    r_median = optimize.brentq(lambda x: pout_at(x) - 0.5, 1e-9 * R, hi, xtol=1e-12 * hi)
    mism = y[1] / y[0] - model._outer_logderiv(kappa, R)
    return ShootingResult(depth, E, norm, r2, r_mean, pout, mism, r_median)


def _outer_mass(model: RadialModel, kappa: float, R: float, Rq: float) -> float:
    """Integral of phi^2 over (Rq, inf) for the exterior solution with phi(R) = 1."""
    if model.kind == "well":
        return math.exp(-2.0 * kappa * (Rq - R)) / (2.0 * kappa)
    nu = model.nu
    X = kappa * R
    x0 = kappa * Rq
    kX = special.kve(nu, X)
    # Lommel: int_x0^inf x K^2 dx = x0^2/2 (K_{nu-1} K_{nu+1} - K_nu^2)(x0)
    km, kp, k0 = special.kve(nu - 1.0, x0), special.kve(nu + 1.0, x0), special.kve(nu, x0)
    val = 0.5 * x0 * x0 * (km * kp - k0 * k0) * math.exp(-2.0 * (x0 - X))
    return val / (kX * kX * X * kappa)


@dataclass
class OracleReport:
    model: RadialModel
    records: list[SizeRecord]
    verdict: SpreadingVerdict
    verdicts: dict[str, SpreadingVerdict]


def check_twobody_oracle(model: RadialModel | str, gaps=None, radii=(10.0,),
                         floor: float = GAP_FLOOR) -> OracleReport:
    """Shooting-oracle records along a depth schedule and their verdicts.

    ``gaps`` are the target binding energies (scaled to ``2 mu = 1`` units);
    targets below ``floor`` are dropped and too short a span is Inconclusive.
    """
    if isinstance(model, str):
        model = RadialModel(kind=model)
    if gaps is None:
        gaps = np.geomspace(1e-1, 1e-4, 7)
    gaps = sorted((g for g in gaps if g >= floor), reverse=True)
    records = []
    for g in gaps:
        res = shoot_depth(model, g, radii)
        records.append(SizeRecord(q1=math.nan, q2=math.nan, gap=g, r2=res.r2, xi2=None,
                                  pout=res.pout, basis_size=0, depth=res.depth,
                                  r_mean=res.r_mean, r_median=res.r_median))
    verdicts = {}
    for obs in ("r2", "r_mean_sq", "r_median_sq"):
        try:
            verdicts[obs] = classify_spreading(records, obs)
        except InvalidInputError:
            verdicts[obs] = SpreadingVerdict("Inconclusive", math.nan, math.nan, obs)
    return OracleReport(model, records, verdicts["r2"], verdicts)


def variational_twobody(model: RadialModel, depth: float, config: SolverConfig | None = None,
                        n_ladder: int = 24):
    """Correlated-Gaussian estimate for one radial model (one Jacobi coordinate).

    Growth starts from an even-tempered ladder of widths: near threshold a
    greedy start picks very diffuse functions first and then cannot resolve
    the bound state at all.
    """
    config = config or SolverConfig(max_basis=32, candidates_per_step=40, alpha_min=1e-7,
                                    alpha_max=1e3, refine_sweeps=4)
    ladder = np.geomspace(config.alpha_min, config.alpha_max, min(n_ladder, config.max_basis))
    basis, res = optimize_basis(model.hamiltonian(depth), config, initial=ladder[:, None, None])
    obs = size_observables(basis, res.coefficients)
    return res, obs


@dataclass
class VariationalSizes:
    gap: float
    depth: float
    r2: float
    basis_size: int


def variational_at_gap(model: RadialModel, gap: float, config: SolverConfig | None = None,
                       n_ladder: int = 50, depth_guess: float | None = None) -> VariationalSizes:
    """Variational <r^2> at the depth where the *variational* gap equals ``gap``.

    The basis is grown at ``depth_guess`` (the shooting depth by default) and
    the depth is then re-solved on that fixed basis.  Comparing at equal gap
    rather than equal depth removes the leading effect of the residual energy
    error (about 1e-4 for a step potential), which near threshold would
    otherwise dominate the size.
    """
    if not gap > 0:
        raise InvalidInputError("gap must be positive")
    config = config or SolverConfig(max_basis=60, candidates_per_step=40, alpha_min=1e-7,
                                    alpha_max=1e4, refine_sweeps=2)
    d0 = depth_guess if depth_guess is not None else shoot_depth(model, gap).depth
    ladder = np.geomspace(config.alpha_min, config.alpha_max, min(n_ladder, config.max_basis))
    basis, _ = optimize_basis(model.hamiltonian(d0), config, initial=ladder[:, None, None])
    state = BasisState(model.hamiltonian(d0), basis.A)
    base = state.strengths.copy()

    def strengths(d):
        s = base.copy()
        s[0] = -d
        return s

    def f(d):
        return state.energy(strengths(d)) + gap

    lo, hi = 0.9 * d0, 1.1 * d0
    for _ in range(20):
        if f(lo) > 0 > f(hi):
            break
        lo, hi = 0.8 * lo, 1.25 * hi
    else:
        raise NumericalError("could not bracket the depth for the requested gap")
    d = optimize.brentq(f, lo, hi, xtol=1e-14 * d0)
    res = state.solve(strengths(d))
    obs = size_observables(basis, res.coefficients)
    return VariationalSizes(gap, d, obs.r2, len(basis))


# ---------------------------------------------------------------------------
# three-body approach paths


@dataclass
class ApproachPath:
    """Segment ``Z(t) = start + t (end - start)`` in the (q1, q2) plane ending
    at (or slightly beyond) the estimated stability border."""

    start: tuple[float, float]
    end: tuple[float, float]
    gap_targets: tuple[float, ...]
    masses: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        g = np.asarray(self.gap_targets, dtype=float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) >= 0):
            raise InvalidInputError("gap targets must be positive and strictly decreasing")
        for q1, q2 in (self.start, self.end):
            sys_ = ThreeBodySystem(*self.masses, q1, q2)
            if not sys_.thresholds().in_D:
                raise InvalidInputError(f"path point ({q1}, {q2}) lies outside the domain")

    def point(self, t: float) -> tuple[float, float]:
        (a1, a2), (b1, b2) = self.start, self.end
        return a1 + t * (b1 - a1), a2 + t * (b2 - a2)

    def system(self, t: float) -> ThreeBodySystem:
        return scale_system(ThreeBodySystem(*self.masses, *self.point(t)))


def _scaled_strengths(q1: float, q2: float) -> np.ndarray:
    # pair order of ThreeBodySystem.pair_terms: 23, 13, 12
    return np.array([-1.0, -q1 / q2, q1])


@dataclass
class TraceResult:
    records: list[SizeRecord]
    warnings: list[str]
    basis: Basis | None = field(default=None, repr=False)


def _gap_on_basis(state: BasisState, path: ApproachPath, t: float) -> float:
    q1, q2 = path.point(t)
    return -1.0 - state.energy(_scaled_strengths(q1, q2))


def trace_path(path: ApproachPath, config: SolverConfig | None = None, radii=(10.0,),
               grow: int = 30, rel_tol: float = 0.05, max_rounds: int = 4,
               initial=None) -> TraceResult:
    """Records at points of the path whose gap hits each target.

    For every target the crossing ``t`` is located on the current basis (the
    energy at new charges is a cheap re-solve), the basis is grown there and
    the crossing is re-located until the gap is within ``rel_tol``.
    """
    config = config or SolverConfig(max_basis=150, alpha_min=1e-6)
    warnings: list[str] = []
    if initial is None:
        from .atlas import classify_point
        v = classify_point(*path.point(0.0), config, path.masses, grow_near_border=False)
        basis = v.basis
    else:
        basis = initial if isinstance(initial, Basis) else Basis(np.asarray(initial))
    records = []
    t_prev = 0.0
    step_offset = 3 * 10**5
    for target in path.gap_targets:
        if target < GAP_FLOOR:
            warnings.append(f"target {target:g} below the variational floor {GAP_FLOOR:g}; skipped")
            continue
        t = None
        for rnd in range(max_rounds):
            state = BasisState(Hamiltonian.from_system(path.system(0.0)), basis.A, config.regularization)
            g0 = _gap_on_basis(state, path, t_prev)
            g1 = _gap_on_basis(state, path, 1.0)
            if not (g0 >= target > g1):
                if g0 < target and rnd + 1 < max_rounds:
                    # basis too poor even at the previous point: improve it there
                    sysp = path.system(t_prev)
                    basis, _ = optimize_basis(sysp, replace_max(config, len(basis) + grow),
                                              initial=basis, step_offset=step_offset)
                    step_offset += 10**4
                    continue
                t = None
                break
            t = optimize.brentq(lambda s: _gap_on_basis(state, path, s) - target, t_prev, 1.0,
                                xtol=1e-12, rtol=1e-12)
            sys_t = path.system(t)
            basis, res = optimize_basis(sys_t, replace_max(config, len(basis) + grow),
                                        initial=basis, step_offset=step_offset)
            step_offset += 10**4
            gap = -1.0 - res.E0
            if abs(gap / target - 1.0) <= rel_tol:
                break
        if t is None:
            warnings.append(f"gap target {target:g} not reachable on this path")
            continue
        # re-locate the crossing on the final basis and solve there
        state = BasisState(Hamiltonian.from_system(path.system(0.0)), basis.A, config.regularization)
        if _gap_on_basis(state, path, t_prev) >= target > _gap_on_basis(state, path, 1.0):
            t = optimize.brentq(lambda s: _gap_on_basis(state, path, s) - target, t_prev, 1.0,
                                xtol=1e-12, rtol=1e-12)
        res = state.solve(_scaled_strengths(*path.point(t)))
        gap = -1.0 - res.E0
        if not gap > 0:
            warnings.append(f"non-positive gap at target {target:g}")
            continue
        obs = size_observables(basis, res.coefficients)
        q1, q2 = path.point(t)
        records.append(SizeRecord(q1=q1, q2=q2, gap=gap, r2=obs.r2, xi2=obs.xi2,
                                  pout={R: obs.tail_mass(R) for R in radii},
                                  basis_size=len(basis), r_median=_median_radius(obs)))
        t_prev = t
    for w in warnings:
        log.warning(w)
    records.sort(key=lambda r: -r.gap)
    return TraceResult(records, warnings, basis)


def replace_max(config: SolverConfig, n: int) -> SolverConfig:
    from dataclasses import replace
    return replace(config, max_basis=n, refine_sweeps=0)


def _median_radius(obs) -> float:
    hi = 1.0
    while obs.tail_mass(hi) > 0.5:
        hi *= 2.0
    return optimize.brentq(lambda R: obs.tail_mass(R) - 0.5, 0.0, hi, xtol=1e-10 * hi)


@dataclass
class PathOutcome:
    q2: float
    border: object | None
    path: ApproachPath | None
    records: list[SizeRecord]
    verdict: SpreadingVerdict
    notes: list[str] = field(default_factory=list)


@dataclass
class DichotomyResult:
    tail_path: PathOutcome
    line_path: PathOutcome

    @property
    def separation(self) -> float:
        return self.line_path.verdict.beta - self.tail_path.verdict.beta


def _verdict_or_inconclusive(records, notes) -> SpreadingVerdict:
    try:
        return classify_spreading(records)
    except InvalidInputError as exc:
        notes.append(str(exc))
        return SpreadingVerdict("Inconclusive", math.nan, math.nan)


def run_border_path(q2: float, masses, config: SolverConfig, gap_targets, tolerance: float = 1e-3,
                    radii=(10.0,), overshoot: float = 0.02, q1_floor: float = 0.05) -> PathOutcome:
    """Locate the border at fixed q2 and trace a path in q1 toward it."""
    from .atlas import BracketError, border_bisect, classify_point

    notes: list[str] = []
    f = ThreeBodySystem(*masses, 1.0, q2).frame()
    top = 0.999 * q2 * math.sqrt(f.mu23 / f.mu13)
    v = classify_point(top, q2, config, masses)
    if not v.bound:
        notes.append(f"no Bound point found at q1={top:.6g}, q2={q2}: the border does not reach this q2")
        return PathOutcome(q2, None, None, [], SpreadingVerdict("Inconclusive", math.nan, math.nan), notes)
    try:
        border = border_bisect(q2, (q1_floor, top), tolerance, config, masses)
    except BracketError as exc:
        notes.append(f"border bracket failed: {exc}")
        return PathOutcome(q2, None, None, [], SpreadingVerdict("Inconclusive", math.nan, math.nan), notes)
    end = max(q1_floor, border.q1_low - overshoot)
    path = ApproachPath((top, q2), (end, q2), tuple(gap_targets), tuple(masses))
    tr = trace_path(path, config, radii)
    notes.extend(tr.warnings)
    verdict = _verdict_or_inconclusive(tr.records, notes)
    return PathOutcome(q2, border, path, tr.records, verdict, notes)


def dichotomy_experiment(masses=(1.0, 1.0, 1.0), config: SolverConfig | None = None,
                         q2_tail: float = 1.2, q2_line: float = 1.0,
                         gap_targets=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4), tolerance: float = 1e-3,
                         radii=(10.0,)) -> DichotomyResult:
    """Paired approach paths: fixed ``q2_tail > 1`` (repulsive Coulomb tail
    between the cluster and particle 1) and the line ``q2 = 1`` toward q1^0.
    Verdicts are reported as measured."""
    config = config or SolverConfig(max_basis=120, alpha_min=1e-6)
    tail = run_border_path(q2_tail, masses, config, gap_targets, tolerance, radii)
    line = run_border_path(q2_line, masses, config, gap_targets, tolerance, radii)
    return DichotomyResult(tail, line)
