"""Experiment configuration: a ``section.key = value`` line grammar.

Blank lines and ``#`` comments are ignored.  Values are numbers, booleans
(``true``/``false``), bare strings, or comma-separated lists of numbers.
Unknown keys are errors.  Defaults are listed in ``DEFAULTS``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

SUITES = ("spectrum", "semigroup", "kernel-bound", "inequalities", "sample", "modulus")

# (section, key) -> (kind, default); kind is int | float | str | bool | floats
DEFAULTS: dict[tuple[str, str], tuple[str, object]] = {
    ("geometry", "kind"): ("str", None),
    ("geometry", "radius"): ("float", 1.0),
    ("geometry", "a"): ("float", 3.0),
    ("geometry", "b"): ("float", 2.0),
    ("geometry", "length"): ("float", 2 * math.pi),
    ("grid", "N_s"): ("int", 64),
    ("grid", "N_v"): ("int", 16),
    ("run", "eps_list"): ("floats", [0.2, 0.1, 0.05]),
    ("run", "t_list"): ("floats", [0.1, 0.5, 1.0]),
    ("run", "seed"): ("int", 0),
    ("run", "suites"): ("str", "all"),
    ("run", "out"): ("str", "out"),
    ("run", "svg"): ("bool", True),
    ("spectrum", "kind"): ("str", "plain"),
    ("spectrum", "tol"): ("float", 1e-10),
    ("semigroup", "markov_trials"): ("int", 100),
    ("kernel", "n_sources"): ("int", 64),
    ("kernel", "t_min"): ("float", 0.05),
    ("kernel", "t_max"): ("float", 1.0),
    ("kernel", "n_times"): ("int", 6),
    ("kernel", "rel_tol"): ("float", 1e-8),
    ("inequalities", "count"): ("int", 100),
    ("inequalities", "tol"): ("float", 1e-8),
    ("sampler", "method"): ("str", "htransform"),
    ("sampler", "T"): ("float", 1.0),
    ("sampler", "h"): ("float", 0.25),
    ("sampler", "limit_h"): ("float", 1e-3),
    ("sampler", "n"): ("int", 20000),
    ("sampler", "N_s"): ("int", 128),
    ("sampler", "N_v"): ("int", 8),
    ("sampler", "observe_t"): ("floats", [0.25, 0.5]),
    ("sampler", "write_paths"): ("bool", False),
    ("modulus", "M"): ("int", 4),
    ("modulus", "start"): ("float", 0.2),
    ("modulus", "lags"): ("floats", [0.02, 0.04, 0.08, 0.16, 0.32]),
    ("modulus", "h"): ("float", 0.02),
    ("modulus", "n"): ("int", 20000),
    ("modulus", "N_s"): ("int", 256),
    ("modulus", "N_v"): ("int", 8),
    ("modulus", "min_slope"): ("float", 1.3),
}

CHOICES = {
    ("geometry", "kind"): ("flat", "circle", "ellipse"),
    ("spectrum", "kind"): ("plain", "nu"),
    ("sampler", "method"): ("htransform", "rejection"),
}


class ConfigError(ValueError):
    """Parse or validation failure; the message names the line or key."""


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[(sec, key)]

    def updated(self, changes: dict) -> "ExperimentConfig":
        """Copy with ``{"section.key": value}`` changes, revalidated."""
        v = dict(self.values)
        for k, x in changes.items():
            v[tuple(k.split(".", 1))] = x
        return validate(v)

    def canonical(self) -> dict:
        return {f"{s}.{k}": self.values[(s, k)] for s, k in sorted(self.values)}

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form; equal for semantically equal configs.

        The output directory is not part of the experiment and is left out.
        """
        body = {k: v for k, v in self.canonical().items() if k != "run.out"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            x = float(raw)
            if x != int(x):
                raise ValueError
            return int(x)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == "floats":
            return [float(p) for p in raw.replace("[", "").replace("]", "").split(",") if p.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate config text.  Errors carry the line number or key path."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        lhs, rhs = (p.strip() for p in body.split("=", 1))
        if lhs.count(".") != 1 or not all(lhs.split(".")):
            raise ConfigError(f"line {lineno}: key {lhs!r} must look like section.key")
        key = tuple(lhs.split("."))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {lhs!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {lhs!r}")
        raw[key] = _coerce(DEFAULTS[key][0], rhs, f"line {lineno} ({lhs})")
    return validate(raw)


def validate(raw: dict) -> ExperimentConfig:
    v = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in DEFAULTS.items()}
    for k, x in raw.items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {'.'.join(k)!r}")
        v[k] = x
    if v[("geometry", "kind")] is None:
        raise ConfigError("geometry.kind is required")
    for k, opts in CHOICES.items():
        if v[k] not in opts:
            raise ConfigError(f"{'.'.join(k)}: {v[k]!r} not in {opts}")
    eps = v[("run", "eps_list")]
    if not eps or any(e <= 0 for e in eps):
        raise ConfigError("run.eps_list: need positive values")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("run.eps_list: must be strictly decreasing")
    if any(t <= 0 for t in v[("run", "t_list")]):
        raise ConfigError("run.t_list: need positive times")
    suites = v[("run", "suites")]
    names = SUITES if suites == "all" else tuple(s.strip() for s in suites.split(","))
    for s in names:
        if s not in SUITES:
            raise ConfigError(f"run.suites: unknown suite {s!r}")
    for k in [("grid", "N_s"), ("grid", "N_v"), ("sampler", "n"), ("modulus", "n"), ("kernel", "n_sources"), ("inequalities", "count")]:
        if v[k] <= 0:
            raise ConfigError(f"{'.'.join(k)}: must be positive")
    for k in [("sampler", "N_v"), ("modulus", "N_v"), ("grid", "N_v")]:
        if v[k] % 2:
            raise ConfigError(f"{'.'.join(k)}: must be even")
    if v[("modulus", "M")] < 1:
        raise ConfigError("modulus.M: must be a positive integer")
    for k in [("geometry", "radius"), ("geometry", "a"), ("geometry", "b"), ("geometry", "length"), ("sampler", "T"), ("sampler", "h"), ("modulus", "h")]:
        if not v[k] > 0:
            raise ConfigError(f"{'.'.join(k)}: must be positive")
    if any(not 0 < t <= 0.9 * v[("sampler", "T")] for t in v[("sampler", "observe_t")]):
        raise ConfigError("sampler.observe_t: times must lie in (0, 0.9 T]")
    return ExperimentConfig(v)


def suite_names(cfg: ExperimentConfig, requested: str) -> tuple[str, ...]:
    if requested != "all":
        return (requested,)
    s = cfg["run.suites"]
    return SUITES if s == "all" else tuple(x.strip() for x in s.split(","))
