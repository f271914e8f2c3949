"""CSV and SVG emission.  Output depends only on the payload."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .errors import ThresholdLabError

COLORS = {"Bound": "#3b7dd8", "Unresolved": "#d9d9d9", "Error": "#d84a3b"}


class OutputError(ThresholdLabError, OSError):
    def __init__(self, path, cause):
        super().__init__(f"cannot write {path}: {cause}")
        self.path = Path(path)


def format_value(v) -> str:
    """Floats in ``.15e`` (16 significant digits); ints and strings verbatim."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".15e")
    return str(v)


def csv_text(tbl: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(tbl["columns"])
    for row in tbl["rows"]:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, tbl: dict) -> Path:
    path = Path(path)
    try:
        path.write_text(csv_text(tbl))
    except OSError as exc:
        raise OutputError(path, exc) from exc
    return path


def stability_svg(rows, columns=("q1", "q2", "status", "E0", "margin", "basis_size"),
                  cell: int = 24, pad: int = 40) -> str:
    """One ``<rect class="cell">`` per sweep record, placed on the (q1, q2) grid."""
    i1, i2, ist = columns.index("q1"), columns.index("q2"), columns.index("status")
    q1s = sorted({r[i1] for r in rows})
    q2s = sorted({r[i2] for r in rows})
    w = pad + cell * len(q1s) + 10
    h = pad + cell * len(q2s) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'viewBox="0 0 {w} {h}">',
           f'<text x="{w // 2}" y="{h - 2}" font-size="10" text-anchor="middle">q1</text>',
           f'<text x="8" y="{h // 2}" font-size="10">q2</text>']
    for r in rows:
        x = pad + cell * q1s.index(r[i1])
        y = 10 + cell * (len(q2s) - 1 - q2s.index(r[i2]))
        status = r[ist]
        fill = COLORS.get(status, COLORS["Error"])
        out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell - 1}" height="{cell - 1}" '
                   f'fill="{fill}"><title>q1={format_value(float(r[i1]))} '
                   f'q2={format_value(float(r[i2]))} {status}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(payload: dict, out_dir) -> list[Path]:
    """Write every table of ``payload`` as CSV (plus the stability map for sweeps)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(out_dir, exc) from exc
    written = []
    for name in sorted(payload["tables"]):
        written.append(write_csv(out_dir / name, payload["tables"][name]))
    if payload.get("kind") == "sweep":
        tbl = payload["tables"]["sweep.csv"]
        path = out_dir / "stability_map.svg"
        try:
            path.write_text(stability_svg(tbl["rows"], tuple(tbl["columns"])))
        except OSError as exc:
            raise OutputError(path, exc) from exc
        written.append(path)
    return written
