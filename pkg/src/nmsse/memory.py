"""Deterministic mean dynamics: Lindblad limit and the memory master equation.

The approximate memory equation for the OU model reads

    d eta/dt = L_M[eta] + (gamma/2) int_0^t [L, e^{(L_M - gamma)(t-s)} [[L, eta(s)]]] ds,
    L_M      = -i[H0, .] - [L, [L, .]] / 2.

Because the kernel is exponential, the history integral
``Y(t) = int_0^t e^{(L_M - gamma)(t-s)}[[L, eta(s)]] ds`` obeys the local
equation ``dY/dt = (L_M - gamma)[Y] + [L, eta]`` with ``Y(0) = 0``; the
``aux_ode`` method integrates the pair ``(eta, Y)`` with RK4. The
``quadrature`` method keeps the history integral and evaluates it with the
trapezoid rule, stepping eta with the implicit trapezoid rule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coefficients import OUModel
from .operators import (
    TOL_PSD,
    commutator_superop,
    dag,
    hermitian_part,
    lindblad_superop,
    superop_exp,
    unvec,
    vec,
)

log = logging.getLogger(__name__)

METHODS = ("aux_ode", "quadrature")


def mean_liouvillian(h0, l):
    """``L_M = -i[h0, .] - [l, [l, .]] / 2`` as a superoperator (Hermitian ``l``)."""
    return lindblad_superop(hermitian_part(h0, name="H0"), [hermitian_part(l, name="L")])


@dataclass(frozen=True)
class MemorySolution:
    times: np.ndarray
    eta: np.ndarray
    method: str

    @property
    def min_eigenvalue(self):
        return np.linalg.eigvalsh(0.5 * (self.eta + dag(self.eta)))[:, 0]

    @property
    def trace_defect(self):
        tr = np.trace(self.eta, axis1=-2, axis2=-1)
        return np.abs(tr - tr[0])

    @property
    def positivity_violations(self):
        return int(np.sum(self.min_eigenvalue < -TOL_PSD))

    def to_csv(self, fh):
        """Columns ``t``, re/im of eta entries, ``min_eig``, ``trace_defect``."""
        n = self.eta.shape[-1]
        head = ["t"]
        for i in range(n):
            for j in range(n):
                head += [f"re_eta_{i}{j}", f"im_eta_{i}{j}"]
        fh.write(",".join(head + ["min_eig", "trace_defect"]) + "\n")
        lam, dtr = self.min_eigenvalue, self.trace_defect
        for k, t in enumerate(self.times):
            row = [t]
            for v in self.eta[k].ravel():
                row += [v.real, v.imag]
            row += [lam[k], dtr[k]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _check_rho0(rho0):
    return hermitian_part(np.asarray(rho0, dtype=complex), name="rho0")


def _monitor(sol):
    bad = sol.positivity_violations
    if bad:
        log.warning("%s: eta has a negative eigenvalue at %d grid points (min %.3g)",
                    sol.method, bad, float(np.min(sol.min_eigenvalue)))
    return sol


def lindblad_evolve(l_m, rho0, grid):
    """``eta(t_k) = exp(L_M t_k)[rho0]`` by repeated one-step exponentials."""
    rho0 = _check_rho0(rho0)
    n = rho0.shape[0]
    step = superop_exp(l_m, grid.dt)
    v = vec(rho0)
    out = np.empty((grid.steps + 1, n, n), complex)
    out[0] = rho0
    for k in range(grid.steps):
        v = step @ v
        e = unvec(v, n)
        out[k + 1] = 0.5 * (e + dag(e))
        v = vec(out[k + 1])
    return _monitor(MemorySolution(grid.times, out, "lindblad"))


def _rk4_propagator(gen, h):
    a = gen * h
    eye = np.eye(a.shape[0], dtype=complex)
    a2 = a @ a
    return eye + a + a2 / 2 + a2 @ a / 6 + a2 @ a2 / 24


def memory_me_evolve(oumodel, rho0, grid, method="aux_ode", memory=True):
    """Solve the approximate memory master equation on ``grid``.

    ``memory=False`` drops the history term, leaving the Lindblad equation
    for ``L_M`` (integrated by the same scheme).
    """
    if not isinstance(oumodel, OUModel):
        oumodel = OUModel(*oumodel)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    rho0 = _check_rho0(rho0)
    weight = 0.5 * oumodel.gamma if memory else 0.0
    if method == "aux_ode":
        eta = _aux_ode(oumodel, rho0, grid, weight)
    else:
        eta = _quadrature(oumodel, rho0, grid, weight)
    return _monitor(MemorySolution(grid.times, eta, method))


def _aux_ode(m, rho0, grid, weight):
    n = m.n
    n2 = n * n
    lm = mean_liouvillian(m.H0, m.L)
    c = commutator_superop(m.L)
    gen = np.zeros((2 * n2, 2 * n2), complex)
    gen[:n2, :n2] = lm
    gen[:n2, n2:] = weight * c
    gen[n2:, :n2] = c
    gen[n2:, n2:] = lm - m.gamma * np.eye(n2)
    prop = _rk4_propagator(gen, grid.dt)
    out = np.empty((grid.steps + 1, n, n), complex)
    out[0] = rho0
    z = np.concatenate([vec(rho0), np.zeros(n2, complex)])
    for k in range(grid.steps):
        z = prop @ z
        e = unvec(z[:n2], n)
        y = unvec(z[n2:], n)
        e = 0.5 * (e + dag(e))
        y = 0.5 * (y - dag(y))
        out[k + 1] = e
        z = np.concatenate([vec(e), vec(y)])
    return out


def _quadrature(m, rho0, grid, weight):
    n, K, dt = m.n, grid.steps, grid.dt
    n2 = n * n
    lm = mean_liouvillian(m.H0, m.L)
    c = commutator_superop(m.L)
    shifted = lm - m.gamma * np.eye(n2)
    kern = np.stack([superop_exp(shifted, j * dt) for j in range(K + 1)])
    etas = np.zeros((K + 1, n2), complex)
    cs = np.zeros((K + 1, n2), complex)
    etas[0] = vec(rho0)
    cs[0] = c @ etas[0]
    eye = np.eye(n2)
    lhs = eye - 0.5 * dt * lm - weight * 0.25 * dt * dt * (c @ c)
    hist = np.zeros(n2, complex)  # trapezoid history integral at t_k
    for k in range(K):
        f_k = lm @ etas[k] + weight * (c @ hist)
        # history at t_{k+1} without the j = k+1 endpoint
        s = 0.5 * kern[k + 1] @ cs[0]
        if k >= 1:
            s = s + np.einsum("mab,mb->a", kern[k:0:-1], cs[1 : k + 1])
        s = dt * s
        rhs = etas[k] + 0.5 * dt * f_k + 0.5 * dt * weight * (c @ s)
        v = np.linalg.solve(lhs, rhs)
        e = unvec(v, n)
        etas[k + 1] = vec(0.5 * (e + dag(e)))
        cs[k + 1] = c @ etas[k + 1]
        hist = s + 0.5 * dt * cs[k + 1]
    return unvec(etas, n)


def kernel_K1(oumodel, tau):
    """Memory kernel ``(gamma/2) R o e^{(L_M - gamma) tau} o R``, ``R = -i[L, .]``."""
    if not isinstance(oumodel, OUModel):
        oumodel = OUModel(*oumodel)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    n2 = oumodel.n ** 2
    r = -1j * commutator_superop(oumodel.L)
    lm = mean_liouvillian(oumodel.H0, oumodel.L)
    return 0.5 * oumodel.gamma * r @ superop_exp(lm - oumodel.gamma * np.eye(n2), tau) @ r


def dephasing_oracle(h0_diag, l_diag, gamma, rho0, t):
    """Exact a-priori state for commuting diagonal ``H0`` and ``L``.

    ``eta_jk(t) = rho0_jk exp(-i(w_j - w_k) t) exp(-(l_j - l_k)^2 (1 - e^{-gamma t}) / (2 gamma))``,
    the Gaussian average of the phase ``(l_j - l_k)(X(t) - X(0))`` whose
    variance is ``(1 - e^{-gamma t}) / gamma`` for a stationary OU process.
    ``t`` may be a scalar or an array; arrays add a leading time axis.
    """
    w = np.asarray(h0_diag, dtype=float)
    l = np.asarray(l_diag, dtype=float)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    rho0 = np.asarray(rho0, dtype=complex)
    t = np.asarray(t, dtype=float)
    tt = t[..., None, None]
    dw = w[:, None] - w[None, :]
    dl2 = (l[:, None] - l[None, :]) ** 2
    var = -np.expm1(-gamma * tt) / gamma
    return rho0 * np.exp(-1j * dw * tt) * np.exp(-0.5 * dl2 * var)
