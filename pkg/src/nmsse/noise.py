"""Reproducible Wiener increments and Ornstein-Uhlenbeck paths.

Every trajectory owns a counter-based (Philox) substream keyed by
``(master_seed, trajectory_index, tag)``, so paths can be generated in any
order, on any worker, and come out bit-identical.

Draw layout of one substream, in order:

1. one standard normal for the stationary initial value ``X(0)``;
2. ``K * substeps * d`` standard normals for the Wiener increments;
3. (``exact_bridge`` only) ``K * substeps`` normals for the OU innovation
   that is not explained by the Wiener increment.

The Wiener increments therefore do not depend on ``gamma`` or on the OU mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

OU_MODES = ("euler", "exact_bridge")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k dt``, ``k = 0..steps``."""

    dt: float
    steps: int

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @classmethod
    def from_horizon(cls, horizon, dt):
        steps = int(round(horizon / dt))
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
        return cls(dt=float(dt), steps=steps)

    @property
    def horizon(self):
        return self.steps * self.dt

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    def index(self, t):
        """Grid index of time ``t`` (must lie on the grid)."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"t={t} is not a grid point")
        return k

    def refine(self, factor):
        return TimeGrid(self.dt / factor, self.steps * factor)


@dataclass(frozen=True)
class RandomStream:
    master_seed: int
    index: int
    tag: int = 0

    def generator(self):
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.index, self.tag))
        return np.random.Generator(np.random.Philox(seq))


def derive_stream(master_seed, trajectory_index, tag=0):
    """Substream for one trajectory; ``tag`` separates independent uses."""
    if master_seed < 0 or trajectory_index < 0:
        raise ValueError("seed and index must be non-negative")
    return RandomStream(int(master_seed), int(trajectory_index), int(tag))


def _draw(stream, grid, d, gamma, mode, substeps):
    gen = stream.generator()
    z = gen.standard_normal()
    fine_k = grid.steps * substeps
    xi = gen.standard_normal((fine_k, d))
    eta = gen.standard_normal(fine_k) if (gamma is not None and mode == "exact_bridge") else None
    return z, xi, eta


def wiener_increments(grid, d, stream, substeps=1):
    """``K x d`` table of i.i.d. ``N(0, dt)`` increments.

    With ``substeps > 1`` the increments are drawn on a grid ``substeps``
    times finer and summed, so that grids of different resolution built
    from the same stream are driven by the same Brownian path.
    """
    _, xi, _ = _draw(stream, grid, d, None, "euler", substeps)
    return _coarse_sum(xi * np.sqrt(grid.dt / substeps), substeps)


def _coarse_sum(x, factor):
    if factor == 1:
        return x
    return x.reshape((x.shape[0] // factor, factor) + x.shape[1:]).sum(axis=1)


def ou_euler_recursion(x0, gamma, dt, dw):
    """``X_{k+1} = X_k - gamma X_k dt + dW_k``; time runs along the last axis.

    Returns ``K+1`` samples per path. Leading axes are batch axes.
    """
    dw = np.asarray(dw, dtype=float)
    x = np.empty(dw.shape[:-1] + (dw.shape[-1] + 1,))
    x[..., 0] = x0
    a = 1.0 - gamma * dt
    for k in range(dw.shape[-1]):
        x[..., k + 1] = a * x[..., k] + dw[..., k]
    return x


def ou_bridge_recursion(x0, gamma, dt, xi, eta):
    """Exact joint sampling of ``(dW_k, X_{k+1})`` given ``X_k``.

    ``dW_k = sqrt(dt) xi_k`` and the OU innovation
    ``I_k = int e^{-gamma(t_{k+1}-s)} dW(s)`` is regressed on it:
    ``Var I = (1 - e^{-2 gamma dt}) / (2 gamma)``,
    ``Cov(I, dW) = (1 - e^{-gamma dt}) / gamma``.
    Time runs along the last axis; returns ``(X, dW)``.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dw = np.sqrt(dt) * xi
    decay = np.exp(-gamma * dt)
    var_i = -np.expm1(-2 * gamma * dt) / (2 * gamma)
    cov = -np.expm1(-gamma * dt) / gamma
    slope = cov / dt
    resid_sd = np.sqrt(max(var_i - cov * cov / dt, 0.0))
    x = np.empty(xi.shape[:-1] + (xi.shape[-1] + 1,))
    x[..., 0] = x0
    for k in range(xi.shape[-1]):
        x[..., k + 1] = decay * x[..., k] + slope * dw[..., k] + resid_sd * eta[..., k]
    return x, dw


@dataclass(frozen=True)
class NoisePath:
    """Wiener increments and, optionally, the OU path they drive.

    ``dW[k]`` is the increment over ``[t_k, t_{k+1}]``; ``X[k] = X(t_k)``.
    """

    grid: TimeGrid
    dW: np.ndarray
    X: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    stream: Optional[RandomStream] = None
    mode: str = "euler"

    @property
    def d(self):
        return self.dW.shape[1]

    def to_csv(self, fh):
        """Write columns ``t, X, dW_1..dW_d``; the last row has no increment."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "X"] + [f"dW_{j + 1}" for j in range(self.d)])
        t = self.grid.times
        for k in range(self.grid.steps + 1):
            x = "" if self.X is None else f"{self.X[k]:.17g}"
            row = [f"{t[k]:.17g}", x]
            if k < self.grid.steps:
                row += [f"{v:.17g}" for v in self.dW[k]]
            else:
                row += [""] * self.d
            w.writerow(row)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def noise_path(grid, d, stream, gamma=None, mode="euler", x0=None, substeps=1):
    """Build the full noise for one trajectory.

    With ``gamma`` set, an OU path ``X`` is attached and shares its
    Wiener increments with ``dW[:, 0]``. ``x0`` overrides the stationary
    draw ``X(0) ~ N(0, 1/(2 gamma))``.
    """
    if mode not in OU_MODES:
        raise ValueError(f"unknown OU mode {mode!r}")
    if gamma is not None and not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if int(substeps) != substeps or substeps < 1:
        raise ValueError("substeps must be a positive integer")
    z, xi, eta = _draw(stream, grid, d, gamma, mode, substeps)
    fine_dt = grid.dt / substeps
    if gamma is None:
        dw = _coarse_sum(xi * np.sqrt(fine_dt), substeps)
        return NoisePath(grid, _frozen(dw), None, None, stream, mode)
    start = z / np.sqrt(2 * gamma) if x0 is None else float(x0)
    if mode == "euler":
        dw = _coarse_sum(xi * np.sqrt(fine_dt), substeps)
        x = ou_euler_recursion(start, gamma, grid.dt, dw[:, 0])
    else:
        x_fine, dw0 = ou_bridge_recursion(start, gamma, fine_dt, xi[:, 0], eta)
        x = x_fine[::substeps]
        dw = xi * np.sqrt(fine_dt)
        dw[:, 0] = dw0
        dw = _coarse_sum(dw, substeps)
    return NoisePath(grid, _frozen(dw), _frozen(x), float(gamma), stream, mode)


def ou_path(grid, gamma, stream, mode="euler", x0=None, substeps=1):
    """One-channel OU path; returns the :class:`NoisePath` holding X and dW."""
    return noise_path(grid, 1, stream, gamma=gamma, mode=mode, x0=x0, substeps=substeps)


def coarsen(path, factor):
    """Same Brownian path on a grid ``factor`` times coarser."""
    if path.grid.steps % factor:
        raise ValueError("grid steps not divisible by factor")
    grid = TimeGrid(path.grid.dt * factor, path.grid.steps // factor)
    dw = _coarse_sum(np.asarray(path.dW), factor)
    x = None
    if path.X is not None:
        if path.mode == "euler":
            x = ou_euler_recursion(path.X[0], path.gamma, grid.dt, dw[:, 0])
        else:
            x = np.asarray(path.X)[::factor]
        x = _frozen(x)
    return NoisePath(grid, _frozen(dw), x, path.gamma, path.stream, path.mode)


def ou_autocorrelation(gamma, s, t):
    """Stationary OU covariance ``E[X(t) X(s)] = exp(-gamma |t-s|) / (2 gamma)``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return np.exp(-gamma * np.abs(np.asarray(t) - np.asarray(s))) / (2 * gamma)


@dataclass(frozen=True)
class NoiseBlock:
    """Noise for a contiguous batch of trajectories, stacked on axis 0."""

    grid: TimeGrid
    indices: np.ndarray
    dW: np.ndarray
    X: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    mode: str = "euler"

    def path(self, i):
        """The :class:`NoisePath` of the ``i``-th member of the block."""
        x = None if self.X is None else _frozen(self.X[i])
        return NoisePath(self.grid, _frozen(self.dW[i]), x, self.gamma, None, self.mode)


def noise_block(grid, d, master_seed, indices, gamma=None, mode="euler", x0=None,
                substeps=1, tag=0):
    """Stacked equivalent of calling :func:`noise_path` for each index.

    Each row is bit-identical to the single-path result for the same
    substream; only the OU recursion is vectorized across the block.
    """
    if mode not in OU_MODES:
        raise ValueError(f"unknown OU mode {mode!r}")
    if gamma is not None and not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    indices = np.asarray(indices, dtype=np.int64)
    draws = [_draw(derive_stream(master_seed, int(i), tag), grid, d, gamma, mode, substeps)
             for i in indices]
    z = np.array([dr[0] for dr in draws])
    xi = np.stack([dr[1] for dr in draws])
    fine_dt = grid.dt / substeps

    def csum(a):
        if substeps == 1:
            return a
        return a.reshape((a.shape[0], a.shape[1] // substeps, substeps) + a.shape[2:]).sum(axis=2)

    if gamma is None:
        return NoiseBlock(grid, indices, csum(xi * np.sqrt(fine_dt)), None, None, mode)
    start = z / np.sqrt(2 * gamma) if x0 is None else np.full(len(indices), float(x0))
    if mode == "euler":
        dw = csum(xi * np.sqrt(fine_dt))
        x = ou_euler_recursion(start, gamma, grid.dt, dw[:, :, 0])
    else:
        eta = np.stack([dr[2] for dr in draws])
        x_fine, dw0 = ou_bridge_recursion(start, gamma, fine_dt, xi[:, :, 0], eta)
        x = x_fine[:, ::substeps]
        dw = xi * np.sqrt(fine_dt)
        dw[:, :, 0] = dw0
        dw = csum(dw)
    return NoiseBlock(grid, indices, dw, x, float(gamma), mode)
