from __future__ import annotations

import json
import logging
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threshold_lab import jobs
from threshold_lab.cli import main
from threshold_lab.errors import NumericalError, ValidationError
from threshold_lab.jobs import (
    ConfigParseError,
    config_hash,
    load_config,
    run_job,
    serialize,
    validate_config,
)
from threshold_lab.output import emit_outputs, format_value, stability_svg

BASE = {"kind": "lattice", "system": {"masses": [1, 1, 1]},
        "job": {"mode": "compare", "instances": 3, "size": 30}, "seed": 5}


def write(tmp_path, doc, name="job.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2))
    return p


def test_round_trip_is_canonical(tmp_path):
    cfg = load_config(write(tmp_path, BASE))
    text = serialize(cfg)
    again = load_config(write(tmp_path, text, "again.json"))
    assert serialize(again) == text
    assert json.loads(text)["solver"]["max_basis"] == 120   # defaults filled in


def _shuffle(v, rnd):
    if isinstance(v, dict):
        keys = list(v)
        rnd.shuffle(keys)
        return {k: _shuffle(v[k], rnd) for k in keys}
    if isinstance(v, list):
        return [_shuffle(x, rnd) for x in v]
    if isinstance(v, int) and not isinstance(v, bool):
        return float(v)
    return v


@given(st.integers(0, 10**6), st.integers(0, 4))
@settings(max_examples=50, deadline=None)
def test_hash_ignores_key_order_whitespace_and_int_floats(seed, indent):
    doc = dict(BASE, solver={"max_basis": 40, "alpha_min": 0.001})
    other = _shuffle(doc, random.Random(seed))
    a = validate_config(json.loads(json.dumps(doc)))
    b = validate_config(json.loads(json.dumps(other, indent=indent)))
    assert config_hash(a) == config_hash(b)
    # spelling out a default value does not change the hash either
    c = validate_config(dict(doc, solver={"max_basis": 40, "alpha_min": 0.001, "regularization": 1e-12}))
    assert config_hash(a) == config_hash(c)


def test_seed_and_parameters_change_the_hash():
    a = validate_config(BASE)
    assert config_hash(a) != config_hash(validate_config(dict(BASE, seed=6)))
    assert config_hash(a) != config_hash(validate_config(dict(BASE, job={"instances": 4})))
    assert config_hash(a) == config_hash(validate_config(dict(BASE, threads=4)))


@pytest.mark.parametrize("doc,field", [
    ({"kind": "green"}, "masses"),
    ({"kind": "green", "system": {}}, "masses"),
    ({"kind": "green", "system": {"masses": [1, 1]}}, "masses"),
    ({"kind": "green", "system": {"masses": [1, 1, 1]}, "seed": -1}, "seed"),
    ({"kind": "green", "system": {"masses": [1, 1, 1]}, "seed": 1.5}, "seed"),
    ({"kind": "green", "system": {"masses": [1, 1, 1]}, "colour": 1}, "colour"),
    ({"kind": "green", "system": {"masses": [1, 1, 1]}, "job": {"kz": [1]}}, "job.kz"),
    ({"kind": "green", "system": {"masses": [1, 1, 1]}, "solver": {"max_basis": "x"}}, "solver.max_basis"),
    ({"kind": "solve", "system": {"masses": [1, 1, 1]}}, "charges"),
    ({"kind": "nope", "system": {"masses": [1, 1, 1]}}, "kind"),
    ({"kind": "sweep", "system": {"masses": [1, 1, 1]}, "threads": 0}, "threads"),
])
def test_validation_names_the_field(doc, field):
    with pytest.raises(ValidationError) as info:
        validate_config(doc)
    assert info.value.field == field


def test_parse_error_reports_line(tmp_path):
    p = write(tmp_path, '{\n  "kind": "green",\n  "system": {"masses": [1, 1, 1],}\n}')
    with pytest.raises(ConfigParseError) as info:
        load_config(p)
    assert info.value.line == 3
    with pytest.raises(ValidationError):
        load_config(write(tmp_path, '{"kind": "green", "system": {"masses": [NaN, 1, 1]}}', "nan.json"))


def test_cache_hit_is_byte_identical(tmp_path, caplog):
    cfg = validate_config(BASE)
    first = run_job(cfg, cache=tmp_path)
    assert not first.cache_hit
    with caplog.at_level(logging.INFO, logger="threshold_lab.jobs"):
        second = run_job(cfg, cache=tmp_path)
    assert second.cache_hit and "cache hit" in caplog.text
    assert jobs.payload_bytes(first.payload) == jobs.payload_bytes(second.payload)
    emit_outputs(first.payload, tmp_path / "a")
    emit_outputs(second.payload, tmp_path / "b")
    assert (tmp_path / "a/lattice_compare.csv").read_bytes() == (tmp_path / "b/lattice_compare.csv").read_bytes()
    entry = json.loads((tmp_path / f"{first.digest}.json").read_text())
    assert entry["config"]["seed"] == 5 and "timestamp" in entry and entry["version"]
    # a different seed misses the cache
    assert not run_job(validate_config(dict(BASE, seed=9)), cache=tmp_path).cache_hit


def test_corrupted_cache_is_recomputed(tmp_path, caplog):
    cfg = validate_config(BASE)
    first = run_job(cfg, cache=tmp_path)
    path = tmp_path / f"{first.digest}.json"
    path.write_text(path.read_text()[:50])
    with caplog.at_level(logging.WARNING, logger="threshold_lab.jobs"):
        again = run_job(cfg, cache=tmp_path)
    assert not again.cache_hit and "corrupted" in caplog.text
    assert json.loads(path.read_text())["payload"] == first.payload
    assert not list(tmp_path.glob("*.tmp"))


def test_failed_write_leaves_no_entry(tmp_path, monkeypatch):
    cfg = validate_config(BASE)

    def boom(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(jobs.os, "fsync", boom)
    with pytest.raises(KeyboardInterrupt):
        run_job(cfg, cache=tmp_path)
    assert not list(tmp_path.iterdir())


def test_module_errors_are_wrapped(monkeypatch, tmp_path):
    def bad(cfg):
        raise NumericalError("diverged")

    monkeypatch.setitem(jobs.RUNNERS, "lattice", bad)
    with pytest.raises(jobs.JobError, match="lattice job .*diverged"):
        run_job(validate_config(BASE), cache=tmp_path)


def test_number_format_has_enough_digits():
    for v in (math.pi, 1e-300, -2.5e17, 0.1):
        s = format_value(v)
        assert float(s) == pytest.approx(v, rel=1e-15)
        assert len(s.split("e")[0].replace("-", "").replace(".", "")) >= 12
    assert format_value(3) == "3" and format_value(math.nan) == "nan"


def _sweep_payload(q1s, q2s):
    rows = [[a, b, "Bound" if a > 0.6 else "Unresolved", -1.01, 0.01, 10] for b in q2s for a in q1s]
    return {"kind": "sweep", "tables": {"sweep.csv": jobs.table(jobs.SWEEP_COLUMNS, rows)}, "meta": {}}


def test_sweep_outputs(tmp_path):
    payload = _sweep_payload([0.5, 0.7, 0.9], [0.8, 0.9, 1.0, 1.1])
    emit_outputs(payload, tmp_path)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "q1,q2,status,E0,margin,basis_size"
    assert len(lines) == 12 + 1
    # rows in input order
    assert [tuple(map(float, line.split(",")[:2])) for line in lines[1:]] == \
        [(a, b) for b in [0.8, 0.9, 1.0, 1.1] for a in [0.5, 0.7, 0.9]]
    svg = (tmp_path / "stability_map.svg").read_text()
    assert svg.count('class="cell"') == 12
    assert svg == stability_svg(payload["tables"]["sweep.csv"]["rows"])


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("THRESHOLD_LAB_CACHE", str(tmp_path / "cache"))
    cfg = write(tmp_path, BASE)
    assert main(["lattice", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o/lattice_compare.csv").exists()
    assert list((tmp_path / "cache").glob("*.json"))
    assert main(["lattice", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "7",
                 "--no-cache", "--threads", "2"]) == 0
    assert main(["green", "--config", str(cfg)]) == 1          # kind mismatch
    bad = write(tmp_path, dict(BASE, seed=-3), "bad.json")
    assert main(["lattice", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit):
        main(["lattice", "--seed", "-1"])

    def fail(cfg):
        raise NumericalError("no convergence")

    monkeypatch.setitem(jobs.RUNNERS, "lattice", fail)
    assert main(["lattice", "--config", str(cfg), "--no-cache", "--out", str(tmp_path / "o")]) == 2
    assert "no convergence" in capsys.readouterr().err


def test_job_kinds_run_small(tmp_path):
    small = {
        "green": {"samples": 20, "hs": False},
        "lattice": {"mode": "borromean", "instances": 2, "size": 40},
        "diagnose": {"mode": "oracle", "model": "well", "gaps": [1e-1, 1e-2, 1e-3, 1e-4]},
    }
    for kind, job in small.items():
        cfg = validate_config({"kind": kind, "system": {"masses": [1, 1, 1]}, "job": job})
        res = run_job(cfg, use_cache=False)
        files = emit_outputs(res.payload, tmp_path / kind)
        assert files and all(f.stat().st_size > 0 for f in files)
    header = (tmp_path / "diagnose/diagnose.csv").read_text().splitlines()[0]
    assert header == "q1,q2,gap,r2,xi2,pout_R,basis_size"
    header = (tmp_path / "green/green.csv").read_text().splitlines()[0]
    assert header == "delta,n,k,samples,violations,max_ratio,hs_norm"
