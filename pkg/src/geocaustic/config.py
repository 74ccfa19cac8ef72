"""Run configuration: built-in defaults, an optional JSON config file, flags.

Later layers override earlier ones.  The config file is given with
``--config`` or the ``GEOCAUSTIC_CONFIG`` environment variable and holds a
JSON object with any of the keys of :data:`DEFAULTS`.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

from .io import InputError, locate, read_json

ENV_VAR = "GEOCAUSTIC_CONFIG"

DEFAULTS = {
    "grid": 512,
    "t_max": 50.0,
    "epsilon": 1e-4,
    "tol": 1e-3,
    "p_range": "auto",
    "formats": ["csv", "json", "svg"],
    "jobs": 1,
    "seed": 0,
    "out": "geocaustic-out",
    "surface": None,
    "curve": None,
    # verify: minimum coverage/membership fraction
    "threshold": 0.99,
    # stability: perturbation sweep and the largest size that must be stable
    "lambdas": [1e-4, 1e-3, 1e-2],
    "stable_below": 1e-3,
    "stability_orders": [1, 2, 3],
}

FORMATS = ("csv", "json", "svg")


@dataclass
class RunConfig:
    command: str
    surface: str | None = None
    curve: str | None = None
    p_range: object = "auto"
    grid: int = 512
    t_max: float = 50.0
    epsilon: float = 1e-4
    tol: float = 1e-3
    out: str = "geocaustic-out"
    formats: list = field(default_factory=lambda: list(FORMATS))
    jobs: int = 1
    seed: int = 0
    threshold: float = 0.99
    lambdas: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    stable_below: float = 1e-3
    stability_orders: list = field(default_factory=lambda: [1, 2, 3])
    extra: dict = field(default_factory=dict)

    def validate(self):
        for name in ("t_max", "epsilon", "tol", "threshold"):
            x = getattr(self, name)
            if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
                raise ValueError(f"{name} must be a positive number, got {x!r}")
        if int(self.grid) != self.grid or self.grid < 64:
            raise ValueError(f"grid must be an integer >= 64, got {self.grid!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ValueError(f"unknown output format {bad[0]!r}")
        if any(not (math.isfinite(x) and x >= 0) for x in self.lambdas):
            raise ValueError("perturbation sizes must be finite and nonnegative")
        parse_p_range(self.p_range)
        return self

    def public(self):
        """Settings that determine the numbers in the outputs (no paths or
        parallelism), recorded in reports."""
        d = asdict(self)
        for k in ("out", "jobs", "formats", "extra", "command", "surface", "curve"):
            d.pop(k)
        return d


def parse_p_range(text):
    """``"A..B"`` -> sorted list of orders, ``"auto"`` -> ``"auto"``.

    A single integer is accepted as a one-element range.
    """
    if isinstance(text, (list, tuple)):
        return sorted(set(int(p) for p in text))
    if isinstance(text, int):
        return [text]
    s = str(text).strip()
    if s == "auto":
        return "auto"
    if ".." in s:
        a, _, b = s.partition("..")
        try:
            lo, hi = int(a), int(b)
        except ValueError:
            raise ValueError(f"p-range must look like A..B with integers, got {s!r}") from None
        if hi < lo:
            raise ValueError(f"empty p-range {s!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(s)]
    except ValueError:
        raise ValueError(f"p-range must look like A..B with integers, got {s!r}") from None


def load_config_file(path):
    obj, text = read_json(path)
    if not isinstance(obj, dict):
        raise InputError("config must be a JSON object", path)
    unknown = [k for k in obj if k not in DEFAULTS]
    if unknown:
        line, col = locate(text, f'"{unknown[0]}"')
        raise InputError(f"unknown config key {unknown[0]!r}", path, line, col)
    return obj, text


def build_config(command, flags, config_path=None, environ=None):
    """Merge defaults, the config file and explicitly given flags."""
    environ = os.environ if environ is None else environ
    values = dict(DEFAULTS)
    path = config_path or environ.get(ENV_VAR)
    text = None
    if path:
        obj, text = load_config_file(path)
        values.update(obj)
    values.update({k: v for k, v in flags.items() if v is not None and k in DEFAULTS})
    extra = {k: v for k, v in flags.items() if k not in DEFAULTS}
    cfg = RunConfig(command=command, extra=extra,
                    **{k: values[k] for k in DEFAULTS})
    try:
        cfg.grid = int(cfg.grid)
        cfg.jobs = int(cfg.jobs)
        cfg.seed = int(cfg.seed)
        cfg.t_max = float(cfg.t_max)
        cfg.epsilon = float(cfg.epsilon)
        cfg.tol = float(cfg.tol)
        cfg.threshold = float(cfg.threshold)
        cfg.stable_below = float(cfg.stable_below)
        cfg.lambdas = [float(x) for x in cfg.lambdas]
        cfg.stability_orders = [int(p) for p in cfg.stability_orders]
        cfg.p_range = parse_p_range(cfg.p_range)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        if path and text is not None:
            key = _offending_key(str(exc), obj)
            line, col = locate(text, f'"{key}"') if key else (1, 1)
            raise InputError(str(exc), path, line, col) from None
        raise InputError(str(exc)) from None
    return cfg


def _offending_key(message, obj):
    for k in obj:
        if k in message or k.replace("_", "-") in message:
            return k
    return None
