"""Euler-Maruyama steps for the linear/nonlinear SSE and SME.

Step functions accept a single state or a batch with leading axes: ``psi``
has shape ``(..., n)``, matrices ``(..., n, n)``, increments ``(..., d)``.
Channel operators ``rs`` are a sequence of constant ``n x n`` matrices.

Density-matrix steps are written so that a Hermitian input gives an
exactly Hermitian output (every increment is formed as ``Y + Y^*``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operators import dag

DEAD_NORM2 = 1e-12


class BlowUp(FloatingPointError):
    """Non-finite state; the step size is too large for this trajectory."""


class DegenerateNorm(FloatingPointError):
    """State norm vanished before renormalization."""


class SingularFactor(np.linalg.LinAlgError):
    """A one-step propagator factor is numerically singular."""


def _mv(m, v):
    return (m @ v[..., None])[..., 0]


def _herm(y):
    return y + dag(y)


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise BlowUp(f"non-finite {what}; reduce dt")
    return x


def one_step_matrix(K, rs, dt, dW):
    """``I + K dt + sum_j R_j dW_j``, the Euler factor of the linear SSE."""
    K = np.asarray(K, dtype=complex)
    dW = np.asarray(dW, dtype=float)
    n = K.shape[-1]
    g = np.eye(n, dtype=complex) + K * dt
    for j, r in enumerate(rs):
        g = g + np.asarray(r) * dW[..., j, None, None]
    return g


def lsse_step(psi, K, rs, dt, dW):
    """``psi' = (I + K dt + sum_j R_j dW_j) psi``."""
    out = _mv(one_step_matrix(K, rs, dt, dW), np.asarray(psi, dtype=complex))
    return _finite(out, "state in lsse_step")


def weight_direct(psi):
    """``p = ||psi||^2`` (batched over leading axes)."""
    psi = np.asarray(psi)
    return np.sum(psi.real**2 + psi.imag**2, axis=-1)


def weight_exponential(m_hist, dw_hist, dt, p0=1.0):
    """``p0 exp(sum_k sum_j [m_jk dW_jk - m_jk^2 dt / 2])``.

    ``m_hist`` and ``dw_hist`` are ``(K, d)`` tables; ``m_hist[k]`` must be
    evaluated at the left point ``t_k``.
    """
    m = np.asarray(m_hist, dtype=float)
    w = np.asarray(dw_hist, dtype=float)
    return p0 * np.exp(np.sum(m * w - 0.5 * m * m * dt, axis=(-2, -1)))


def girsanov_shift(dW, m, dt):
    """``dW_hat = dW - m dt``."""
    return np.asarray(dW) - np.asarray(m) * dt


def _expect(psi, r):
    return np.sum(psi.conj() * _mv(np.asarray(r), psi), axis=-1)


def m_batch(psi_hat, rs):
    """``m_j`` for a batch of unit vectors; shape ``(..., d)``."""
    psi_hat = np.asarray(psi_hat, dtype=complex)
    if not rs:
        return np.zeros(psi_hat.shape[:-1] + (0,))
    return np.stack([2.0 * _expect(psi_hat, r).real for r in rs], axis=-1)


def nlsse_step(psi_hat, K, rs, dt, dWhat, renorm=True):
    """Euler step of the norm-preserving nonlinear SSE driven by ``dWhat``.

    With ``n_j = <psi|R_j psi>`` and ``u_j = Re n_j``:
    ``d psi = K psi dt + sum_j [(R_j - u_j) psi dWhat_j
    + (u_j R_j - u_j^2/2) psi dt]``.
    """
    psi = np.asarray(psi_hat, dtype=complex)
    nrm = np.sqrt(weight_direct(psi))
    if np.any(np.abs(nrm - 1.0) > 1e-6):
        raise ValueError("nlsse_step needs a normalized state")
    dWhat = np.asarray(dWhat, dtype=float)
    out = psi + dt * _mv(np.asarray(K), psi)
    for j, r in enumerate(rs):
        rpsi = _mv(np.asarray(r), psi)
        u = np.sum(psi.conj() * rpsi, axis=-1).real[..., None]
        dwj = dWhat[..., j, None]
        out = out + (rpsi - u * psi) * dwj + (u * rpsi - 0.5 * u * u * psi) * dt
    _finite(out, "state in nlsse_step")
    if renorm:
        n2 = weight_direct(out)
        if np.any(n2 < DEAD_NORM2):
            raise DegenerateNorm("norm vanished in nlsse_step")
        out = out / np.sqrt(n2)[..., None]
    return out


def liouvillian_apply(rho, H, rs):
    """``-i[H, rho] + sum_j (R rho R^* - {R^*R, rho}/2)``, Hermitian-exact."""
    rho = np.asarray(rho, dtype=complex)
    x = np.asarray(H) @ rho
    out = -1j * (x - dag(x))
    for r in rs:
        r = np.asarray(r)
        z = r @ rho @ dag(r)
        w = (dag(r) @ r) @ rho
        out = out + 0.5 * _herm(z) - 0.5 * _herm(w)
    return out


def lsme_step(sigma, H, rs, dt, dW):
    """``sigma' = sigma + L[sigma] dt + sum_j (R_j sigma + sigma R_j^*) dW_j``."""
    sigma = np.asarray(sigma, dtype=complex)
    dW = np.asarray(dW, dtype=float)
    out = sigma + dt * liouvillian_apply(sigma, H, rs)
    for j, r in enumerate(rs):
        out = out + _herm(np.asarray(r) @ sigma) * dW[..., j, None, None]
    return _finite(out, "matrix in lsme_step")


def nlsme_step(varrho, H, rs, dt, dWhat, renorm=True):
    """Euler step of the trace-normalized SME under the physical law.

    ``d rho = L[rho] dt + sum_j (R_j rho + rho R_j^* - v_j rho) dWhat_j``
    with ``v_j = Tr[(R_j + R_j^*) rho]``; renormalized to unit trace.
    """
    rho = np.asarray(varrho, dtype=complex)
    dWhat = np.asarray(dWhat, dtype=float)
    out = rho + dt * liouvillian_apply(rho, H, rs)
    for j, r in enumerate(rs):
        y = _herm(np.asarray(r) @ rho)
        v = np.trace(y, axis1=-2, axis2=-1).real[..., None, None]
        out = out + (y - v * rho) * dWhat[..., j, None, None]
    _finite(out, "matrix in nlsme_step")
    if renorm:
        tr = np.trace(out, axis1=-2, axis2=-1).real[..., None, None]
        out = out / tr
    return out


# ---------------------------------------------------------------------------
# single-path drivers


@dataclass(frozen=True)
class Trajectory:
    """One integrated path on a grid.

    ``m[k]`` is evaluated at ``t_k`` from the normalized state; ``dead_step``
    is the first step whose squared norm fell below ``1e-12`` (or None).
    """

    grid: object
    states: np.ndarray
    weights: np.ndarray
    m: np.ndarray
    scheme: str
    renorm: str = "none"
    sigma: Optional[np.ndarray] = None
    dead_step: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, fh):
        """Columns ``t, re_psi_i, im_psi_i, p, m_j``."""
        n = self.states.shape[1]
        d = self.m.shape[1]
        w = csv.writer(fh, lineterminator="\n")
        head = ["t"]
        for i in range(n):
            head += [f"re_psi_{i}", f"im_psi_{i}"]
        w.writerow(head + ["p"] + [f"m_{j + 1}" for j in range(d)])
        for k, t in enumerate(self.grid.times):
            row = [t]
            for a in self.states[k]:
                row += [a.real, a.imag]
            row += [self.weights[k]] + list(self.m[k])
            w.writerow([f"{v:.17g}" for v in row])


def _unit(psi):
    n2 = weight_direct(psi)
    return psi / np.sqrt(n2) if n2 > 0 else psi


def simulate_lsse(model, psi0, path, renorm="none", record_sigma=False):
    """Integrate the linear SSE along ``path``.

    ``renorm="project"`` rescales the state to ``||psi0||`` after every step;
    it is only meaningful for norm-preserving models.
    """
    if renorm not in ("none", "project"):
        raise ValueError(f"unknown renorm policy {renorm!r}")
    if renorm == "project" and not model.is_norm_preserving:
        raise ValueError("projective renormalization needs a norm-preserving model")
    grid = path.grid
    psi = np.asarray(psi0, dtype=complex).copy()
    p0 = weight_direct(psi)
    xs = np.zeros(grid.steps + 1) if path.X is None else np.asarray(path.X)
    states = np.empty((grid.steps + 1, psi.size), dtype=complex)
    states[0] = psi
    dead = None
    for k in range(grid.steps):
        K = model.drift_from_x(xs[k])
        try:
            psi = lsse_step(psi, K, model.rs, grid.dt, path.dW[k])
        except BlowUp as exc:
            raise BlowUp(f"{exc} at step {k}") from None
        if renorm == "project":
            psi = psi * np.sqrt(p0 / weight_direct(psi))
        states[k + 1] = psi
        if dead is None and weight_direct(psi) < DEAD_NORM2:
            dead = k + 1
    weights = weight_direct(states)
    hats = np.array([_unit(s) for s in states])
    m = m_batch(hats, model.rs)
    sigma = None
    if record_sigma:
        sigma = states[:, :, None] * states.conj()[:, None, :]
    return Trajectory(grid, states, weights, m, "euler-maruyama", renorm, sigma, dead)


def simulate_nlsse(model, psi0, path):
    """Integrate the normalized SSE with ``path.dW`` playing ``dW_hat``."""
    grid = path.grid
    psi = _unit(np.asarray(psi0, dtype=complex))
    xs = np.zeros(grid.steps + 1) if path.X is None else np.asarray(path.X)
    states = np.empty((grid.steps + 1, psi.size), dtype=complex)
    states[0] = psi
    for k in range(grid.steps):
        psi = nlsse_step(psi, model.drift_from_x(xs[k]), model.rs, grid.dt, path.dW[k])
        states[k + 1] = psi
    m = m_batch(states, model.rs)
    return Trajectory(grid, states, np.ones(grid.steps + 1), m, "euler-maruyama", "normalize")


def simulate_lsme(model, sigma0, path):
    """Linear SME path; returns the ``(K+1, n, n)`` array of sigma."""
    grid = path.grid
    s = np.asarray(sigma0, dtype=complex)
    xs = np.zeros(grid.steps + 1) if path.X is None else np.asarray(path.X)
    out = np.empty((grid.steps + 1,) + s.shape, dtype=complex)
    out[0] = s
    for k in range(grid.steps):
        s = lsme_step(s, model.hamiltonian_from_x(xs[k]), model.rs, grid.dt, path.dW[k])
        out[k + 1] = s
    return out


def simulate_nlsme(model, rho0, path):
    """Nonlinear SME path with ``path.dW`` playing ``dW_hat``."""
    grid = path.grid
    s = np.asarray(rho0, dtype=complex)
    xs = np.zeros(grid.steps + 1) if path.X is None else np.asarray(path.X)
    out = np.empty((grid.steps + 1,) + s.shape, dtype=complex)
    out[0] = s
    for k in range(grid.steps):
        s = nlsme_step(s, model.hamiltonian_from_x(xs[k]), model.rs, grid.dt, path.dW[k])
        out[k + 1] = s
    return out


# ---------------------------------------------------------------------------
# propagator


@dataclass(frozen=True)
class PropagatorTable:
    """Euler factors ``G_k`` with ``psi_{k+1} = G_k psi_k``.

    ``A(k, s) = G_{k-1} ... G_s`` is formed on demand by left
    multiplication, so no factor beyond ``t_k`` is ever touched.
    """

    grid: object
    factors: np.ndarray
    condition_numbers: np.ndarray

    @property
    def n(self):
        return self.factors.shape[-1]

    def A(self, k, s=0):
        if not 0 <= s <= k <= self.grid.steps:
            raise ValueError(f"need 0 <= s <= k <= {self.grid.steps}, got s={s}, k={k}")
        a = np.eye(self.n, dtype=complex)
        for r in range(s, k):
            a = self.factors[r] @ a
        return a

    def lift(self, k, s, tau):
        """``Lambda(t_k, t_s)[tau] = A tau A^*``."""
        a = self.A(k, s)
        return a @ np.asarray(tau) @ dag(a)

    def composition_defect(self, k, r, s):
        """Max-abs entry of ``A(k,s) - A(k,r) A(r,s)``."""
        return float(np.max(np.abs(self.A(k, s) - self.A(k, r) @ self.A(r, s))))


def build_propagator(model, path, max_condition=1e12):
    """One-step factors of the linear SSE along ``path`` with condition numbers."""
    grid = path.grid
    xs = np.zeros(grid.steps + 1) if path.X is None else np.asarray(path.X)
    K = model.drift_from_x(xs[:-1])
    factors = one_step_matrix(K, model.rs, grid.dt, np.asarray(path.dW))
    conds = np.linalg.cond(factors)
    bad = np.flatnonzero(~(conds < max_condition))
    if bad.size:
        raise SingularFactor(
            f"factor {bad[0]} has condition number {conds[bad[0]]:.3g}")
    return PropagatorTable(grid, factors, conds)
