"""Deterministic CSV/JSON serialization and atomic file output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np

from .expressions import ExpressionError


class InputError(ValueError):
    """Malformed input document; ``line`` and ``column`` are 1-based."""

    def __init__(self, message, path=None, line=1, column=1):
        self.path = path
        self.line = line
        self.column = column
        where = f"{path}:" if path else ""
        super().__init__(f"{where}{line}:{column}: {message}")


# -- reading -------------------------------------------------------------------------

def read_json(path):
    """Parse a JSON file; returns ``(object, text)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read file: {exc.strerror}", path) from exc
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise InputError(exc.msg, path, exc.lineno, exc.colno) from exc


def locate(text, needle, start=0):
    """1-based ``(line, column)`` of the first ``needle`` in ``text``."""
    k = text.find(needle, start) if needle else -1
    if k < 0:
        return 1, 1
    line = text.count("\n", 0, k) + 1
    col = k - (text.rfind("\n", 0, k) + 1) + 1
    return line, col


def input_error(exc, path, text, key=None):
    """Translate a construction error into an :class:`InputError` at the
    offending place of the JSON source.

    Expression errors are positioned inside the string literal that holds
    the expression; other errors at ``key`` when given.
    """
    if isinstance(exc, InputError):
        return exc
    if isinstance(exc, ExpressionError) and exc.source is not None and text:
        literal = json.dumps(exc.source)
        if literal in text:
            line, col = locate(text, literal)
            # column inside the literal, after its opening quote
            return InputError(str(exc).split(" (line")[0], path, line, col + exc.column)
    line, col = locate(text, f'"{key}"') if key and text else (1, 1)
    return InputError(str(exc), path, line, col)


# -- value conversion -----------------------------------------------------------------

def plain(obj):
    """Convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def fmt(x):
    """Shortest round-trip representation, so CSV values are reproducible."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else ""
    return str(x)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


# -- serializers ----------------------------------------------------------------------

BRANCH_COLUMNS = ("xi", "tau", "u", "v", "chart")
STABILITY_COLUMNS = ("p", "lambda", "kind", "base_count", "pert_count", "hausdorff", "verdict")


def branch_csv(branch):
    return csv_text(BRANCH_COLUMNS, branch.rows())


def singularity_dicts(branch):
    return [s.to_dict() for s in branch.singularities]


def decomposition_dict(dec, config=None):
    curve = dec.curve
    out = {
        "curve": {"source": curve.source, "closed": curve.closed, "chart": curve.chart,
                  "xi_range": list(curve.xi_range), "length": curve.length},
        "surface": curve.surface.descriptor,
        "grid_n": dec.grid_n,
        "T_max": dec.T_max,
        "truncated": dec.truncated,
        "inflections": [{"xi": r.xi, "kind": r.kind, "slope": r.slope}
                        for r in dec.inflections],
        "inflectional_geodesics": [
            {"xi": g.xi, "t_range": [float(g.t[0]), float(g.t[-1])], "truncated": g.truncated}
            for g in dec.inflectional_geodesics],
        "self_tangencies": list(dec.self_tangencies),
        "branches": [],
    }
    for p in sorted(dec.branches):
        b = dec.branches[p]
        out["branches"].append({
            "p": p,
            "n_samples": b.n_samples(),
            "domain": [list(iv) for iv in b.domain()],
            "horizon_hit": b.horizon_hit,
            "failures": b.failures,
            "singularities": singularity_dicts(b),
        })
    if config is not None:
        out["config"] = config
    return out


def stability_csv(reports):
    rows = []
    for r in reports:
        rows.extend(r.rows())
    return csv_text(STABILITY_COLUMNS, rows)


# -- writing ----------------------------------------------------------------------------

def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` through a renamed temp file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8",
                                                             "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    """Files staged in memory and written only by :meth:`commit`."""

    def __init__(self):
        self.files = {}

    def add(self, name, data):
        self.files[name] = data

    def commit(self, directory):
        written = []
        for name in sorted(self.files):
            path = os.path.join(directory, name)
            atomic_write(path, self.files[name])
            written.append(path)
        return written
