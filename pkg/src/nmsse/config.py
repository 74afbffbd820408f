"""Run configuration: YAML (or JSON) text -> validated :class:`RunConfig`.

Example::

    experiment: dephasing-compare
    model:
      H0: [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]
      L:  [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]
      gamma: 1.0
    numerics: {dt: 0.001, T: 5.0, N: 10000, master_seed: 0}
    output: {directory: results, formats: [csv, jsonl]}

Matrices are nested lists of ``[re, im]`` pairs; a bare number is read as
a real entry. The model block holds either an OU model (``H0``, ``L``,
``gamma``) or a Markovian one (``H`` and a list ``R`` of channel operators).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .operators import TOL_HERM, dag

EXPERIMENTS = (
    "ou-stats",
    "martingale",
    "norm-preservation",
    "dephasing-compare",
    "meaneq-residual",
    "memory-me",
    "girsanov-check",
    "propagator-check",
)
OU_EXPERIMENTS = {"ou-stats", "norm-preservation", "dephasing-compare", "meaneq-residual",
                  "memory-me", "propagator-check"}

DEFAULTS = {"dt": 1e-3, "N": 10_000, "master_seed": 0, "T": 1.0, "renorm": "none",
            "ou_mode": "euler"}


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending field path."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class ModelSpec:
    kind: str
    H0: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    H: Optional[np.ndarray] = None
    R: list = field(default_factory=list)

    @property
    def n(self):
        return (self.H0 if self.kind == "ou" else self.H).shape[0]


@dataclass
class Numerics:
    dt: float
    T: float
    N: int
    master_seed: int
    renorm: str = "none"
    ou_mode: str = "euler"
    psi0: Optional[np.ndarray] = None


@dataclass
class RunConfig:
    experiment: str
    model: ModelSpec
    numerics: Numerics
    output_dir: Optional[str] = None
    formats: tuple = ("csv", "jsonl")
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def parse_matrix(value, path):
    try:
        rows = list(value)
    except TypeError:
        raise ConfigError(path, "expected a matrix (list of rows)") from None
    if not rows:
        raise ConfigError(path, "empty matrix")
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, (list, tuple)):
            raise ConfigError(f"{path}[{i}]", "expected a row")
        out.append([_parse_entry(v, f"{path}[{i}][{j}]") for j, v in enumerate(row)])
    widths = {len(r) for r in out}
    if len(widths) != 1:
        raise ConfigError(path, "ragged matrix")
    m = np.array(out, dtype=complex)
    if m.shape[0] != m.shape[1]:
        raise ConfigError(path, f"matrix must be square, got {m.shape[0]}x{m.shape[1]}")
    return m


def _parse_entry(v, path):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(path, f"expected a number or [re, im] pair, got {v!r}")


def parse_vector(value, path):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(path, "expected a non-empty list")
    return np.array([_parse_entry(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _hermitian(m, path):
    if np.max(np.abs(m - dag(m))) > TOL_HERM:
        raise ConfigError(path, "matrix must be Hermitian")
    return 0.5 * (m + dag(m))


def _number(block, key, path, kind=float, default=None):
    if key not in block:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return kind(default)
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}.{key}", "expected an integer")
    return kind(v)


def _parse_model(block, experiment):
    if not isinstance(block, dict):
        raise ConfigError("model", "expected a mapping")
    if "H0" in block or "L" in block:
        for key in ("H0", "L", "gamma"):
            if key not in block:
                raise ConfigError(f"model.{key}", "required field missing")
        h0 = _hermitian(parse_matrix(block["H0"], "model.H0"), "model.H0")
        l = _hermitian(parse_matrix(block["L"], "model.L"), "model.L")
        if h0.shape != l.shape:
            raise ConfigError("model.L", f"dimension {l.shape[0]} does not match H0 "
                              f"dimension {h0.shape[0]}")
        gamma = _number(block, "gamma", "model")
        if not gamma > 0:
            raise ConfigError("model.gamma", f"must be positive, got {gamma}")
        return ModelSpec("ou", H0=h0, L=l, gamma=gamma)
    if "H" in block:
        h = _hermitian(parse_matrix(block["H"], "model.H"), "model.H")
        rs = block.get("R", [])
        if not isinstance(rs, list):
            raise ConfigError("model.R", "expected a list of matrices")
        r_list = []
        for j, r in enumerate(rs):
            m = parse_matrix(r, f"model.R[{j}]")
            if m.shape != h.shape:
                raise ConfigError(f"model.R[{j}]", "dimension does not match H")
            r_list.append(m)
        if experiment in OU_EXPERIMENTS:
            raise ConfigError("model", f"experiment {experiment!r} needs an OU model "
                              "(H0, L, gamma)")
        return ModelSpec("markovian", H=h, R=r_list)
    raise ConfigError("model", "expected either H0/L/gamma or H/R")


def parse_config(text):
    """Parse and validate configuration text, applying defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    model = _parse_model(raw.get("model"), exp)

    nb = raw.get("numerics", {}) or {}
    if not isinstance(nb, dict):
        raise ConfigError("numerics", "expected a mapping")
    dt = _number(nb, "dt", "numerics", float, DEFAULTS["dt"])
    T = _number(nb, "T", "numerics", float, DEFAULTS["T"])
    N = _number(nb, "N", "numerics", int, DEFAULTS["N"])
    seed = _number(nb, "master_seed", "numerics", int, DEFAULTS["master_seed"])
    if not dt > 0:
        raise ConfigError("numerics.dt", f"must be positive, got {dt}")
    if not T >= dt:
        raise ConfigError("numerics.T", f"must be at least dt, got {T}")
    if abs(round(T / dt) * dt - T) > 1e-9 * T:
        raise ConfigError("numerics.T", "must be a multiple of dt")
    if N < 1:
        raise ConfigError("numerics.N", f"must be at least 1, got {N}")
    if seed < 0:
        raise ConfigError("numerics.master_seed", "must be non-negative")
    renorm = nb.get("renorm", DEFAULTS["renorm"])
    if renorm not in ("none", "project"):
        raise ConfigError("numerics.renorm", "must be 'none' or 'project'")
    ou_mode = nb.get("ou_mode", DEFAULTS["ou_mode"])
    if ou_mode not in ("euler", "exact_bridge"):
        raise ConfigError("numerics.ou_mode", "must be 'euler' or 'exact_bridge'")
    psi0 = None
    if "psi0" in nb:
        psi0 = parse_vector(nb["psi0"], "numerics.psi0")
        if psi0.size != model.n:
            raise ConfigError("numerics.psi0", f"length {psi0.size} does not match "
                              f"dimension {model.n}")
        if not np.linalg.norm(psi0) > 0:
            raise ConfigError("numerics.psi0", "must be non-zero")
    numerics = Numerics(dt, T, N, seed, renorm, ou_mode, psi0)

    ob = raw.get("output", {}) or {}
    if not isinstance(ob, dict):
        raise ConfigError("output", "expected a mapping")
    formats = tuple(ob.get("formats", ("csv", "jsonl")))
    for f in formats:
        if f not in ("csv", "jsonl"):
            raise ConfigError("output.formats", f"unknown format {f!r}")
    options = raw.get("options", {}) or {}
    if not isinstance(options, dict):
        raise ConfigError("options", "expected a mapping")
    return RunConfig(exp, model, numerics, ob.get("directory"), formats, options, raw)
