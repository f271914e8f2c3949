"""Job configuration, canonical hashing, result cache and dispatch.

A job is one JSON document::

    {"kind": "sweep",
     "system": {"masses": [1, 1, 1], "charges": [0.9, 0.9]},
     "solver": {"max_basis": 80},
     "job": {"q1_range": [0.8, 0.95], "q2_range": [0.8, 0.95], "steps": 3},
     "seed": 0, "threads": 1}

Missing entries take their defaults, so two documents that differ only in
key order, whitespace, spelled-out defaults or ``1`` vs ``1.0`` have the same
canonical form and hash.  ``threads`` does not change results and is left out
of the hash.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ecg import SolverConfig
from .errors import (
    InvalidInputError,
    NumericalError,
    ThresholdLabError,
    ValidationError,
)

log = logging.getLogger(__name__)

KINDS = ("solve", "sweep", "border", "diagnose", "green", "lattice")
TOP_KEYS = ("kind", "system", "solver", "job", "seed", "threads")
CACHE_ENV = "THRESHOLD_LAB_CACHE"

# Field specs: name -> (type tag, default).  Type tags: "num", "int", "bool",
# "str:<a>|<b>", "nums", "nums2" (pair), "nums3" (triple), "pairs" (list of pairs).
SYSTEM_FIELDS = {
    "masses": ("nums3", None),
    "charges": ("nums2", None),
}

JOB_FIELDS = {
    "solve": {},
    "sweep": {
        "q1_range": ("nums2", [0.8, 0.95]),
        "q2_range": ("nums2", [0.8, 0.95]),
        "steps": ("int", 3),
        "q1_values": ("nums", None),
        "q2_values": ("nums", None),
    },
    "border": {
        "q2_values": ("nums", [1.05, 1.1, 1.2]),
        "brackets": ("pairs", None),
        "tolerance": ("num", 1e-3),
    },
    "diagnose": {
        "mode": ("str:oracle|path|dichotomy", "oracle"),
        "model": ("str:well|tailed", "well"),
        "gaps": ("nums", [1e-1, 1e-2, 1e-3, 1e-4]),
        "radius": ("num", 10.0),
        "q2": ("num", 1.0),
        "q2_tail": ("num", 1.2),
        "q2_line": ("num", 1.0),
        "tolerance": ("num", 1e-3),
        "overshoot": ("num", 0.02),
    },
    "green": {
        "deltas": ("nums", [1.0]),
        "ns": ("nums", [1.0]),
        "ks": ("nums", [0.1]),
        "samples": ("int", 1000),
        "budget": ("num", 1e-6),
        "l_max": ("int", 60),
        "hs": ("bool", True),
        "hs_per_unit": ("int", 120),
    },
    "lattice": {
        "mode": ("str:compare|borromean", "compare"),
        "instances": ("int", 100),
        "size": ("int", 200),
        "spacing": ("num", 0.05),
        "slack": ("num", 1e-12),
        "weight_scale": ("num", 1.0),
    },
}

# systems only matter for the three-body jobs
NEEDS_CHARGES = ("solve",)


class ConfigParseError(InvalidInputError):
    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.line = line
        self.column = column


class JobError(ThresholdLabError):
    """A module error raised while running a job, with the job context."""

    def __init__(self, kind: str, digest: str, cause: BaseException):
        super().__init__(f"{kind} job {digest[:12]}: {type(cause).__name__}: {cause}")
        self.kind = kind
        self.digest = digest
        self.cause = cause

    @property
    def is_validation(self) -> bool:
        return isinstance(self.cause, (InvalidInputError, ValueError)) and not isinstance(
            self.cause, NumericalError)


@dataclass
class JobConfig:
    kind: str
    system: dict
    solver: dict
    job: dict
    seed: int = 0
    threads: int = 1

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**{**self.solver, "seed": self.seed})

    def canonical(self) -> dict:
        return {"kind": self.kind, "system": self.system, "solver": self.solver,
                "job": self.job, "seed": self.seed}

    def digest(self) -> str:
        return config_hash(self)

    def with_overrides(self, seed: int | None = None, threads: int | None = None) -> "JobConfig":
        d = self.canonical()
        d["threads"] = self.threads if threads is None else threads
        if seed is not None:
            d["seed"] = seed
        return validate_config(d)


# ---------------------------------------------------------------------------
# validation


def _number(field, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(field, f"expected a number, got {type(v).__name__}")
    if not math.isfinite(v):
        raise ValidationError(field, "must be finite")
    if integer:
        if float(v) != int(v):
            raise ValidationError(field, "expected an integer")
        return int(v)
    return float(v)


def _check(field, tag, v):
    if tag == "num":
        return _number(field, v)
    if tag == "int":
        return _number(field, v, integer=True)
    if tag == "bool":
        if not isinstance(v, bool):
            raise ValidationError(field, "expected true or false")
        return v
    if tag.startswith("str:"):
        allowed = tag[4:].split("|")
        if v not in allowed:
            raise ValidationError(field, f"expected one of {allowed}, got {v!r}")
        return v
    if tag == "pairs":
        if not isinstance(v, list):
            raise ValidationError(field, "expected a list of [low, high] pairs")
        return [_check(f"{field}[{i}]", "nums2", p) for i, p in enumerate(v)]
    if tag.startswith("nums"):
        if not isinstance(v, list) or not v:
            raise ValidationError(field, "expected a non-empty list of numbers")
        want = {"nums2": 2, "nums3": 3}.get(tag)
        if want is not None and len(v) != want:
            raise ValidationError(field, f"expected {want} numbers, got {len(v)}")
        return [_number(f"{field}[{i}]", x) for i, x in enumerate(v)]
    raise AssertionError(tag)


def _block(name, given, spec):
    if not isinstance(given, dict):
        raise ValidationError(name, "expected an object")
    unknown = sorted(set(given) - set(spec))
    if unknown:
        raise ValidationError(f"{name}.{unknown[0]}", "unknown key")
    out = {}
    for key, (tag, default) in spec.items():
        if key in given:
            out[key] = _check(f"{name}.{key}" if name != "system" else key, tag, given[key])
        elif default is not None:
            out[key] = copy.deepcopy(default)
    return out


def validate_config(doc: dict) -> JobConfig:
    """Validate a parsed document and fill in defaults."""
    if not isinstance(doc, dict):
        raise ValidationError("config", "top level must be an object")
    unknown = sorted(set(doc) - set(TOP_KEYS))
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ValidationError("kind", f"expected one of {list(KINDS)}, got {kind!r}")

    system = _block("system", doc.get("system", {}), SYSTEM_FIELDS)
    if "masses" not in system:
        raise ValidationError("masses", "missing (three positive masses)")
    if any(m <= 0 for m in system["masses"]):
        raise ValidationError("masses", "must be positive")
    if kind in NEEDS_CHARGES and "charges" not in system:
        raise ValidationError("charges", f"required for {kind} jobs")
    if "charges" in system and any(q <= 0 for q in system["charges"]):
        raise ValidationError("charges", "must be positive")

    solver_spec = {}
    for f in dataclasses.fields(SolverConfig):
        if f.name == "seed":
            continue
        solver_spec[f.name] = ("int" if isinstance(f.default, int) else "num", f.default)
    solver = _block("solver", doc.get("solver", {}), solver_spec)
    job = _block("job", doc.get("job", {}), JOB_FIELDS[kind])

    seed = _number("seed", doc.get("seed", 0), integer=True)
    if seed < 0 or seed >= 2**64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    threads = _number("threads", doc.get("threads", 1), integer=True)
    if threads < 1:
        raise ValidationError("threads", "must be >= 1")

    cfg = JobConfig(kind, system, solver, job, seed, threads)
    try:
        cfg.solver_config()
    except InvalidInputError as exc:
        raise ValidationError("solver", str(exc)) from exc
    _check_job(cfg)
    return cfg


def _check_job(cfg: JobConfig):
    j = cfg.job
    if cfg.kind == "sweep":
        if j["steps"] < 1:
            raise ValidationError("job.steps", "must be >= 1")
        for key in ("q1_range", "q2_range", "q1_values", "q2_values"):
            if key in j and min(j[key]) <= 0:
                raise ValidationError(f"job.{key}", "charges must be positive")
    elif cfg.kind == "border":
        if j["tolerance"] <= 0:
            raise ValidationError("job.tolerance", "must be positive")
        if "brackets" in j and len(j["brackets"]) != len(j["q2_values"]):
            raise ValidationError("job.brackets", "need one bracket per q2 value")
    elif cfg.kind == "diagnose":
        if any(g <= 0 for g in j["gaps"]):
            raise ValidationError("job.gaps", "must be positive")
        if j["radius"] <= 0:
            raise ValidationError("job.radius", "must be positive")
    elif cfg.kind == "green":
        for key in ("deltas", "ns", "ks"):
            if min(j[key]) <= 0:
                raise ValidationError(f"job.{key}", "must be positive")
        if j["samples"] < 1:
            raise ValidationError("job.samples", "must be >= 1")
    elif cfg.kind == "lattice":
        if j["instances"] < 1 or j["size"] < 2:
            raise ValidationError("job.instances", "need instances >= 1 and size >= 2")
        if j["spacing"] <= 0 or j["weight_scale"] <= 0:
            raise ValidationError("job.spacing", "spacing and weight_scale must be positive")


def load_config(path) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(path, exc.lineno, exc.colno, exc.msg) from exc
    return validate_config(doc)


def _reject_constant(name):
    raise ValidationError("config", f"non-finite constant {name} is not allowed")


# ---------------------------------------------------------------------------
# canonical form and hashing


def _normalize(v):
    if isinstance(v, dict):
        return {k: _normalize(v[k]) for k in sorted(v)}
    if isinstance(v, (list, tuple)):
        return [_normalize(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        return int(v)
    return v


def serialize(cfg: JobConfig) -> str:
    """Canonical text: sorted keys, no whitespace, integral numbers as ints."""
    doc = cfg.canonical()
    doc["threads"] = cfg.threads
    return json.dumps(_normalize(doc), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: JobConfig) -> str:
    text = json.dumps(_normalize(cfg.canonical()), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(f"{__version__}\n{text}".encode()).hexdigest()


# ---------------------------------------------------------------------------
# cache


def cache_dir(override=None) -> Path:
    if override is not None:
        return Path(override)
    return Path(os.environ.get(CACHE_ENV, "cache"))


def payload_bytes(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=True).encode()


def read_cache(directory: Path, digest: str) -> dict | None:
    path = directory / f"{digest}.json"
    if not path.exists():
        return None
    try:
        entry = json.loads(path.read_text())
        if entry["hash"] != digest or entry["version"] != __version__:
            raise ValueError("hash or version mismatch")
        return entry["payload"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.warning("ignoring corrupted cache entry %s (%s); recomputing", path, exc)
        return None


def write_cache(directory: Path, digest: str, cfg: JobConfig, payload: dict) -> Path:
    """Write atomically: temp file in the same directory, fsync, rename."""
    directory.mkdir(parents=True, exist_ok=True)
    entry = {"hash": digest, "version": __version__, "timestamp": time.time(),
             "config": json.loads(serialize(cfg)), "payload": payload}
    path = directory / f"{digest}.json"
    fd, tmp = tempfile.mkstemp(prefix=f".{digest[:12]}-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(entry, fh, sort_keys=True, allow_nan=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclass
class JobResult:
    config: JobConfig
    digest: str
    payload: dict
    cache_hit: bool
    seconds: float


def run_job(cfg: JobConfig, use_cache: bool = True, cache=None) -> JobResult:
    """Run (or fetch from the cache) one job and return its payload."""
    digest = config_hash(cfg)
    directory = cache_dir(cache)
    t0 = time.perf_counter()
    if use_cache:
        payload = read_cache(directory, digest)
        if payload is not None:
            dt = time.perf_counter() - t0
            log.info("cache hit %s (%s) in %.3f s", digest[:12], cfg.kind, dt)
            return JobResult(cfg, digest, payload, True, dt)
    try:
        payload = _jsonable(RUNNERS[cfg.kind](cfg))
    except ThresholdLabError as exc:
        raise JobError(cfg.kind, digest, exc) from exc
    dt = time.perf_counter() - t0
    log.info("computed %s (%s) in %.3f s", digest[:12], cfg.kind, dt)
    if use_cache:
        write_cache(directory, digest, cfg, payload)
    return JobResult(cfg, digest, payload, False, dt)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


def table(columns, rows) -> dict:
    return {"columns": list(columns), "rows": [list(r) for r in rows]}


# ---------------------------------------------------------------------------
# runners; each returns {"kind", "tables": {file name: table}, "meta"}


SWEEP_COLUMNS = ("q1", "q2", "status", "E0", "margin", "basis_size")
DIAGNOSE_COLUMNS = ("q1", "q2", "gap", "r2", "xi2", "pout_R", "basis_size")
GREEN_COLUMNS = ("delta", "n", "k", "samples", "violations", "max_ratio", "hs_norm")


def _verdict_row(q1, q2, v):
    return [q1, q2, v.status, v.E0, v.margin, v.basis_size]


def _run_solve(cfg: JobConfig):
    from .atlas import classify_point

    q1, q2 = cfg.system["charges"]
    v = classify_point(q1, q2, cfg.solver_config(), tuple(cfg.system["masses"]))
    return {"kind": "solve", "tables": {"solve.csv": table(SWEEP_COLUMNS, [_verdict_row(q1, q2, v)])},
            "meta": {"swapped": v.swapped}}


def _run_sweep(cfg: JobConfig):
    from .atlas import sweep_grid, sweep_points

    j = cfg.job
    masses = tuple(cfg.system["masses"])
    if "q1_values" in j or "q2_values" in j:
        # explicit values replace the corresponding range
        q1s = j.get("q1_values") or list(np.linspace(*j["q1_range"], j["steps"]))
        q2s = j.get("q2_values") or list(np.linspace(*j["q2_range"], j["steps"]))
        recs = sweep_points(q1s, q2s, cfg.solver_config(), masses, workers=cfg.threads)
    else:
        recs = sweep_grid(j["q1_range"], j["q2_range"], j["steps"], cfg.solver_config(),
                          masses, workers=cfg.threads)
    rows, errors = [], []
    for r in recs:
        if r.verdict is None:
            rows.append([r.q1, r.q2, "Error", math.nan, math.nan, 0])
            errors.append([r.q1, r.q2, r.error])
        else:
            rows.append(_verdict_row(r.q1, r.q2, r.verdict))
    return {"kind": "sweep", "tables": {"sweep.csv": table(SWEEP_COLUMNS, rows)},
            "meta": {"steps": j["steps"], "errors": errors}}


def _run_border(cfg: JobConfig):
    from .atlas import BracketError, border_bisect
    from .model import ThreeBodySystem

    j = cfg.job
    masses = tuple(cfg.system["masses"])
    config = cfg.solver_config()
    rows, notes = [], []
    for i, q2 in enumerate(j["q2_values"]):
        if "brackets" in j:
            bracket = j["brackets"][i]
        else:
            f = ThreeBodySystem(*masses, 1.0, q2).frame()
            top = q2 * math.sqrt(f.mu23 / f.mu13)
            bracket = [0.05 * top, 0.999 * top]
        try:
            b = border_bisect(q2, bracket, j["tolerance"], config, masses)
            rows.append([q2, b.q1_low, b.q1_high, b.width, b.iterations, "ok"])
        except BracketError as exc:
            rows.append([q2, math.nan, math.nan, math.nan, 0, "no_bracket"])
            notes.append(f"q2={q2}: {exc}")
    cols = ("q2", "q1_low", "q1_high", "width", "iterations", "status")
    return {"kind": "border", "tables": {"border.csv": table(cols, rows)}, "meta": {"notes": notes}}


def _size_rows(records, radius):
    rows = []
    for r in records:
        rows.append([r.q1, r.q2, r.gap, r.r2, math.nan if r.xi2 is None else r.xi2,
                     r.pout.get(radius, math.nan), r.basis_size])
    return rows


def _verdict_meta(v):
    return {"classification": v.classification, "beta": v.beta, "residual": v.residual,
            "observable": v.observable}


def _run_diagnose(cfg: JobConfig):
    from . import diagnostics as dg

    j = cfg.job
    R = j["radius"]
    if j["mode"] == "oracle":
        rep = dg.check_twobody_oracle(j["model"], j["gaps"], radii=(R,))
        meta = {"model": j["model"], "verdicts": {k: _verdict_meta(v) for k, v in rep.verdicts.items()}}
        return {"kind": "diagnose", "tables": {"diagnose.csv": table(DIAGNOSE_COLUMNS, _size_rows(rep.records, R))},
                "meta": meta}
    masses = tuple(cfg.system["masses"])
    config = cfg.solver_config()
    gaps = tuple(sorted(j["gaps"], reverse=True))
    if j["mode"] == "path":
        out = dg.run_border_path(j["q2"], masses, config, gaps, j["tolerance"], (R,), j["overshoot"])
        return {"kind": "diagnose",
                "tables": {"diagnose.csv": table(DIAGNOSE_COLUMNS, _size_rows(out.records, R))},
                "meta": {"verdict": _verdict_meta(out.verdict), "notes": out.notes}}
    res = dg.dichotomy_experiment(masses, config, j["q2_tail"], j["q2_line"], gaps, j["tolerance"], (R,))
    rows = _size_rows(res.tail_path.records, R) + _size_rows(res.line_path.records, R)
    meta = {"tail": _verdict_meta(res.tail_path.verdict), "line": _verdict_meta(res.line_path.verdict),
            "separation": res.separation, "notes": res.tail_path.notes + res.line_path.notes}
    return {"kind": "diagnose", "tables": {"diagnose.csv": table(DIAGNOSE_COLUMNS, rows)}, "meta": meta}


def _run_green(cfg: JobConfig):
    from .green import GreenProbe, SamplePlan, check_pointwise_bound, hs_norm

    j = cfg.job
    rows, extra = [], []
    idx = 0
    for delta in j["deltas"]:
        for n in j["ns"]:
            for k in j["ks"]:
                probe = GreenProbe(delta, n, k)
                plan = SamplePlan(n_samples=j["samples"], seed=cfg.seed + idx)
                rep = check_pointwise_bound(probe, plan, j["budget"], j["l_max"])
                hs = hs_norm(probe, per_unit=j["hs_per_unit"]).value if j["hs"] else math.nan
                rows.append([delta, n, k, rep.samples, rep.violations, rep.max_ratio, hs])
                extra.append([delta, n, k, rep.free_violations, rep.possible_violations,
                              rep.error_estimate, rep.C_delta, rep.empirical_C])
                idx += 1
    cols = ("delta", "n", "k", "free_violations", "possible_violations", "error_estimate", "C_delta",
            "empirical_C")
    return {"kind": "green", "tables": {"green.csv": table(GREEN_COLUMNS, rows),
                                        "green_details.csv": table(cols, extra)}, "meta": {}}


def _run_lattice(cfg: JobConfig):
    from . import lattice as lt

    j = cfg.job
    rng = np.random.default_rng(cfg.seed)
    rows = []
    if j["mode"] == "compare":
        for i in range(j["instances"]):
            lat, V1, V2, z1, z2, f = lt.random_instance(rng, j["size"], j["spacing"])
            res = lt.discrete_resolvent_compare(lat, V1, V2, z1, z2, f, slack=j["slack"])
            rows.append([i, z1, z2, res.violations, res.max_excess, int(res.positive)])
        cols = ("instance", "z1", "z2", "violations", "max_excess", "positive")
        return {"kind": "lattice", "tables": {"lattice_compare.csv": table(cols, rows)}, "meta": {}}
    c = j["weight_scale"]
    for i in range(j["instances"]):
        masses, lat, pots = lt.random_borromean_instance(rng, j["size"], j["spacing"])
        res = lt.borromean_bound(masses, lat, pots)
        oracle = lt.borromean_oracle(masses, lat, pots)
        scaled = lt.borromean_bound(masses, lat, pots, weight_scale=c).epsilon
        rows.append([i, res.epsilon, oracle, abs(res.epsilon - oracle), c, scaled,
                     int(res.strictly_borromean)])
    cols = ("instance", "epsilon", "oracle", "abs_diff", "weight_scale", "scaled_epsilon",
            "strictly_borromean")
    return {"kind": "lattice", "tables": {"lattice_borromean.csv": table(cols, rows)}, "meta": {}}


RUNNERS = {
    "solve": _run_solve,
    "sweep": _run_sweep,
    "border": _run_border,
    "diagnose": _run_diagnose,
    "green": _run_green,
    "lattice": _run_lattice,
}
