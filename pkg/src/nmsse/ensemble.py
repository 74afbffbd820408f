"""Monte Carlo ensembles of linear and nonlinear SSE trajectories.

Trajectories are processed in fixed-size blocks of consecutive indices.
Each block returns partial sums; the sums are combined in block order, so
results do not depend on how many workers ran the blocks.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .integrators import (
    DEAD_NORM2,
    BlowUp,
    Trajectory,
    m_batch,
    nlsse_step,
    one_step_matrix,
    weight_direct,
)
from .noise import noise_block
from .operators import commutator, commutator_superop, unvec, vec

BLOCK_SIZE = 2048


@dataclass
class RecordSpec:
    """What to accumulate besides eta and the weights.

    ``observables`` maps a name to an operator ``a``; its track is the mean
    of ``<psi|a psi>``. ``residual`` records per-trajectory moments of the
    mean-equation residual (OU models only). ``keep`` retains the first
    ``keep`` trajectories in full for dumping. ``norm_excursion`` records,
    per trajectory, ``max_k | ||psi_k||^2 - ||psi_0||^2 |``.
    """

    observables: dict = field(default_factory=dict)
    residual: bool = False
    keep: int = 0
    norm_excursion: bool = False


@dataclass
class EnsembleStats:
    """Ensemble averages on the grid.

    Matrix-valued estimates carry an entrywise standard error array of the
    same shape; for a complex entry it is ``sqrt((Var Re + Var Im) / N)``.
    """

    grid: object
    N: int
    eta: np.ndarray
    eta_se: np.ndarray
    mean_weight: np.ndarray
    weight_se: np.ndarray
    xsigma: Optional[np.ndarray] = None
    xsigma_se: Optional[np.ndarray] = None
    observables: dict = field(default_factory=dict)
    residual_moments: Optional[dict] = None
    norm_excursion: Optional[np.ndarray] = None
    dead: int = 0
    trajectories: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def se_eta(self):
        """Max entrywise standard error of eta, per grid time."""
        return np.max(self.eta_se, axis=(-2, -1))

    @property
    def times(self):
        return self.grid.times

    def to_csv(self, fh):
        """Columns ``t``, re/im of every eta entry, ``se_eta``, weight, SE, z."""
        n = self.eta.shape[-1]
        head = ["t"]
        for i in range(n):
            for j in range(n):
                head += [f"re_eta_{i}{j}", f"im_eta_{i}{j}"]
        head += ["se_eta", "mean_weight", "weight_se", "z"]
        fh.write(",".join(head) + "\n")
        z = martingale_report(self).z
        se = self.se_eta
        for k, t in enumerate(self.grid.times):
            row = [t]
            for v in self.eta[k].ravel():
                row += [v.real, v.imag]
            row += [se[k], self.mean_weight[k], self.weight_se[k], z[k]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def summary(self):
        rep = martingale_report(self)
        return {
            "N": self.N,
            "dt": self.grid.dt,
            "steps": self.grid.steps,
            "dead": self.dead,
            "final_mean_weight": float(self.mean_weight[-1]),
            "max_abs_z": rep.max_abs_z,
            "max_se_eta": None if self.N < 2 else float(np.max(self.se_eta)),
            **self.meta,
        }

    def write_jsonl(self, fh):
        fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


def _sq(z):
    return z.real**2 + z.imag**2


def _finish(total, total_sq, N):
    """Mean and standard error from sums of values and squared moduli."""
    mean = total / N
    if N < 2:
        return mean, np.full(np.shape(mean), np.nan)
    var = (total_sq - N * _sq(mean)) / (N - 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / N)


def _block_ranges(N, block_size):
    return [np.arange(s, min(s + block_size, N)) for s in range(0, N, block_size)]


class _LinearBlock:
    """Integrates one block of linear-SSE trajectories and keeps partial sums."""

    def __init__(self, model, grid, seed, indices, psi0, rec, renorm, ou_mode, x0, substeps):
        self.model, self.grid, self.rec = model, grid, rec
        self.indices = indices
        self.renorm = renorm
        self.noise = noise_block(grid, model.d, seed, indices, gamma=model.gamma,
                                 mode=ou_mode, x0=x0, substeps=substeps)
        B, K, n = len(indices), grid.steps, model.n
        self.psi = np.broadcast_to(np.asarray(psi0, dtype=complex), (B, n)).copy()
        self.xs = np.zeros((B, K + 1)) if self.noise.X is None else self.noise.X
        self.eta = (np.zeros((K + 1, n, n), complex), np.zeros((K + 1, n, n)))
        self.w = (np.zeros(K + 1), np.zeros(K + 1))
        self.obs = {name: (np.zeros(K + 1), np.zeros(K + 1)) for name in rec.observables}
        self.xsig = None
        if model.gamma is not None:
            self.xsig = (np.zeros((K + 1, n, n), complex), np.zeros((K + 1, n, n)))
        self.res = None
        if rec.residual and model.ou is not None:
            self.res = {key: (np.zeros((K + 1, n, n), complex), np.zeros((K + 1, n, n)))
                        for key in ("raw", "comp")}
            ou = model.ou
            comm_l = commutator_superop(ou.L)
            self._comm_t = comm_l.T.copy()
            self._drift_t = (-1j * commutator_superop(ou.H0) - 0.5 * comm_l @ comm_l).T.copy()
            self._noise_t = (1j * ou.gamma * comm_l).T.copy()
        self.keep = min(rec.keep, B)
        self.kept = np.empty((self.keep, K + 1, n), complex) if self.keep else None

    def _accumulate(self, k, psi):
        sig = psi[:, :, None] * psi.conj()[:, None, :]
        self.eta[0][k] = sig.sum(axis=0)
        self.eta[1][k] = _sq(sig).sum(axis=0)
        w = weight_direct(psi)
        self.w[0][k] = w.sum()
        self.w[1][k] = (w * w).sum()
        for name, a in self.rec.observables.items():
            v = np.sum(psi.conj() * (psi @ np.asarray(a).T), axis=-1).real
            self.obs[name][0][k] = v.sum()
            self.obs[name][1][k] = (v * v).sum()
        if self.xsig is not None:
            xs = self.xs[:, k, None, None] * sig
            self.xsig[0][k] = xs.sum(axis=0)
            self.xsig[1][k] = _sq(xs).sum(axis=0)
        if self.keep:
            self.kept[:, k] = psi[: self.keep]
        return sig

    def _residual(self, k, s_prev, s_cur, s_next):
        # r_k = (s_{k+1} - s_{k-1}) / 2dt + i[H0, s_k] + [L,[L,s_k]]/2 - i gamma [L, X_k s_k],
        # evaluated on column-stacked matrices
        dt, dw = self.grid.dt, self.noise.dW
        v_prev, v_cur, v_next = vec(s_prev), vec(s_cur), vec(s_next)
        drift = v_cur @ self._drift_t + self.xs[:, k, None] * (v_cur @ self._noise_t)
        r = (v_next - v_prev) / (2 * dt) - drift
        # zero-mean martingale part of the central difference
        mart = -1j * ((v_cur @ self._comm_t) * dw[:, k, 0, None]
                      + (v_prev @ self._comm_t) * dw[:, k - 1, 0, None]) / (2 * dt)
        n = self.model.n
        for key, val in (("raw", r), ("comp", r - mart)):
            self.res[key][0][k] = unvec(val.sum(axis=0), n)
            self.res[key][1][k] = unvec(_sq(val).sum(axis=0), n)

    def run(self):
        model, dt = self.model, self.grid.dt
        psi = self.psi
        p0 = weight_direct(psi)
        dead = np.zeros(len(self.indices), bool)
        excursion = np.zeros(len(self.indices))
        prev, cur = None, self._accumulate(0, psi)
        for k in range(self.grid.steps):
            g = one_step_matrix(model.drift_from_x(self.xs[:, k]), model.rs, dt,
                                self.noise.dW[:, k])
            psi = (g @ psi[..., None])[..., 0]
            finite = np.all(np.isfinite(psi), axis=1)
            if not finite.all():
                bad = int(np.flatnonzero(~finite)[0])
                raise BlowUp(f"non-finite state in trajectory {int(self.indices[bad])} "
                             f"at step {k + 1}; reduce dt")
            if self.renorm == "project":
                psi = psi * np.sqrt(p0 / weight_direct(psi))[:, None]
            w = weight_direct(psi)
            dead |= w < DEAD_NORM2
            if self.rec.norm_excursion:
                np.maximum(excursion, np.abs(w - p0), out=excursion)
            nxt = self._accumulate(k + 1, psi)
            if self.res is not None and k >= 1:
                self._residual(k, prev, cur, nxt)
            prev, cur = cur, nxt
        return {
            "eta": self.eta, "w": self.w, "obs": self.obs, "xsigma": self.xsig,
            "res": self.res, "dead": int(dead.sum()), "kept": self.kept,
            "excursion": excursion if self.rec.norm_excursion else None,
            "kept_dw": None if not self.keep else self.noise.dW[: self.keep],
        }


def _linear_block(args):
    # overflow ahead of a blow-up is reported by the finiteness check instead
    with np.errstate(over="ignore", invalid="ignore"):
        return _LinearBlock(*args).run()


def _map_blocks(fn, tasks, workers):
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _reduce(parts, key):
    """Sum the (sum, sumsq) pairs of ``key`` over blocks in index order."""
    s, q = parts[0][key]
    s, q = s.copy(), q.copy()
    for p in parts[1:]:
        s += p[key][0]
        q += p[key][1]
    return s, q


def run_ensemble(model, grid, N, master_seed, record_spec=None, psi0=None, workers=1,
                 renorm="none", ou_mode="euler", x0=None, substeps=1,
                 block_size=BLOCK_SIZE):
    """Integrate ``N`` linear-SSE trajectories and average ``sigma = |psi><psi|``.

    Trajectory ``i`` is driven by substream ``(master_seed, i)``. The result
    is a pure function of the arguments other than ``workers``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if renorm not in ("none", "project"):
        raise ValueError(f"unknown renorm policy {renorm!r}")
    if renorm == "project" and not model.is_norm_preserving:
        raise ValueError("projective renormalization needs a norm-preserving model")
    rec = record_spec or RecordSpec()
    if psi0 is None:
        psi0 = np.eye(model.n, dtype=complex)[0]
    psi0 = np.asarray(psi0, dtype=complex)
    tasks = [(model, grid, master_seed, idx, psi0, rec, renorm, ou_mode, x0, substeps)
             for idx in _block_ranges(N, block_size)]
    parts = _map_blocks(_linear_block, tasks, workers)

    eta, eta_se = _finish(*_reduce(parts, "eta"), N)
    w, w_se = _finish(*_reduce(parts, "w"), N)
    xsig = xsig_se = None
    if parts[0]["xsigma"] is not None:
        xsig, xsig_se = _finish(*_reduce(parts, "xsigma"), N)
    obs = {}
    for name in rec.observables:
        obs[name] = _finish(*_reduce([p["obs"] for p in parts], name), N)
    res = None
    if parts[0]["res"] is not None:
        res = {key: _finish(*_reduce([p["res"] for p in parts], key), N)
               for key in ("raw", "comp")}
    excursion = None
    if rec.norm_excursion:
        excursion = np.concatenate([p["excursion"] for p in parts])
    kept = []
    for p in parts:
        if p["kept"] is None:
            continue
        for psi_hist, dw in zip(p["kept"], p["kept_dw"]):
            if len(kept) >= rec.keep:
                break
            hats = psi_hist / np.sqrt(weight_direct(psi_hist))[:, None]
            kept.append(Trajectory(grid, psi_hist, weight_direct(psi_hist),
                                   m_batch(hats, model.rs), "euler-maruyama", renorm))
    meta = {"master_seed": int(master_seed), "renorm": renorm, "ou_mode": ou_mode,
            "substeps": int(substeps)}
    return EnsembleStats(grid, N, eta, eta_se, w, w_se, xsig, xsig_se, obs, res, excursion,
                         sum(p["dead"] for p in parts), kept, meta)


# ---------------------------------------------------------------------------
# diagnostics on a finished ensemble


@dataclass(frozen=True)
class MartingaleReport:
    z: np.ndarray
    max_abs_z: Optional[float]
    se_defined: bool


def martingale_report(stats, tol=1e-12):
    """z-scores ``(mean_weight - 1) / SE`` on the grid.

    Degenerate ensembles (SE below ``tol``) get ``z = 0`` when the mean is
    within ``tol`` of one and ``inf`` otherwise; ``N = 1`` gives NaN.
    """
    if stats.N < 2:
        z = np.full(stats.grid.steps + 1, np.nan)
        return MartingaleReport(z, None, False)
    dev = stats.mean_weight - 1.0
    se = stats.weight_se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > tol, dev / np.where(se > tol, se, 1.0),
                     np.where(np.abs(dev) <= tol, 0.0, np.inf))
    return MartingaleReport(z, float(np.max(np.abs(z))), True)


def time_derivative(series, dt):
    """Second-order central differences; one-sided second order at the ends."""
    return np.gradient(series, dt, axis=0, edge_order=2)


@dataclass(frozen=True)
class ResidualSeries:
    times: np.ndarray
    residual: np.ndarray
    norm: np.ndarray
    se: np.ndarray


def mean_eq_residual(stats, oumodel, compensated=False):
    """Residual of the open mean equation at interior grid points.

    ``r = d eta/dt + i[H0, eta] + [L,[L,eta]]/2 - i gamma [L, E[X sigma]]``.
    Without compensation the residual is built from ``stats.eta`` and
    ``stats.xsigma``; with ``compensated=True`` the exactly zero-mean term
    ``-i[L, sigma] dW`` of every trajectory's difference quotient is removed
    first, which leaves the expectation unchanged but shrinks the SE.
    ``norm`` is the max-abs entry, ``se`` the max entrywise SE.
    """
    if stats.residual_moments is None:
        raise ValueError("ensemble was run without RecordSpec(residual=True)")
    dt = stats.grid.dt
    inner = slice(1, stats.grid.steps)
    l, h0 = oumodel.L, oumodel.H0
    if compensated:
        r = stats.residual_moments["comp"][0][inner]
        se = stats.residual_moments["comp"][1][inner]
    else:
        eta = stats.eta
        deta = (eta[2:] - eta[:-2]) / (2 * dt)
        e = eta[inner]
        r = (deta + 1j * commutator(h0, e) + 0.5 * commutator(l, commutator(l, e))
             - 1j * oumodel.gamma * commutator(l, stats.xsigma[inner]))
        se = stats.residual_moments["raw"][1][inner]
    norm = np.max(np.abs(r), axis=(-2, -1))
    return ResidualSeries(stats.grid.times[inner], r, norm, np.max(se, axis=(-2, -1)))


def physical_expectation(stats, a):
    """``Tr[a eta(t)]``, the physical-law mean of ``<psi_hat|a psi_hat>``."""
    return np.einsum("ij,kji->k", np.asarray(a), stats.eta)


# ---------------------------------------------------------------------------
# physical-law ensemble of the nonlinear SSE


@dataclass
class PhysicalStats:
    grid: object
    N: int
    observables: dict


def _nonlinear_block(args):
    model, grid, seed, indices, psi0, observables, tag, substeps = args
    nb = noise_block(grid, model.d, seed, indices, gamma=model.gamma, tag=tag,
                     substeps=substeps)
    B, K = len(indices), grid.steps
    psi = np.broadcast_to(psi0 / np.linalg.norm(psi0), (B, model.n)).astype(complex)
    xs = np.zeros((B, K + 1)) if nb.X is None else nb.X
    out = {name: (np.zeros(K + 1), np.zeros(K + 1)) for name in observables}

    def acc(k):
        for name, a in observables.items():
            v = np.sum(psi.conj() * (psi @ np.asarray(a).T), axis=-1).real
            out[name][0][k] = v.sum()
            out[name][1][k] = (v * v).sum()

    acc(0)
    for k in range(K):
        psi = nlsse_step(psi, model.drift_from_x(xs[:, k]), model.rs, grid.dt, nb.dW[:, k])
        acc(k + 1)
    return out


def run_physical_ensemble(model, grid, N, master_seed, observables, psi0=None, workers=1,
                          tag=1, substeps=1, block_size=BLOCK_SIZE):
    """Unweighted averages of ``<psi_hat|a psi_hat>`` from the nonlinear SSE.

    The driving increments play the role of the physical Wiener process and
    come from substreams tagged ``tag``, independent of the linear ensemble.
    """
    if psi0 is None:
        psi0 = np.eye(model.n, dtype=complex)[0]
    psi0 = np.asarray(psi0, dtype=complex)
    tasks = [(model, grid, master_seed, idx, psi0, observables, tag, substeps)
             for idx in _block_ranges(N, block_size)]
    parts = _map_blocks(_nonlinear_block, tasks, workers)
    obs = {name: _finish(*_reduce(parts, name), N) for name in observables}
    return PhysicalStats(grid, N, obs)


@dataclass(frozen=True)
class GirsanovComparison:
    times: np.ndarray
    weighted: np.ndarray
    weighted_se: np.ndarray
    physical: np.ndarray
    physical_se: np.ndarray

    @property
    def z(self):
        return (self.weighted - self.physical) / np.hypot(self.weighted_se, self.physical_se)


def girsanov_check(model, grid, N, master_seed, observable, checkpoints, psi0=None,
                   workers=1):
    """Compare ``E_Q[<psi|a psi>]`` (linear, weighted) with the nonlinear SSE mean."""
    rec = RecordSpec(observables={"a": observable})
    lin = run_ensemble(model, grid, N, master_seed, rec, psi0=psi0, workers=workers)
    phys = run_physical_ensemble(model, grid, N, master_seed, {"a": observable},
                                 psi0=psi0, workers=workers)
    ks = [grid.index(t) for t in checkpoints]
    wm, ws = lin.observables["a"]
    pm, ps = phys.observables["a"]
    return GirsanovComparison(grid.times[ks], wm[ks], ws[ks], pm[ks], ps[ks])
