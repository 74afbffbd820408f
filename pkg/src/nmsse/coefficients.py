"""Random coefficient processes H(t), R_j(t), K(t) for the linear SSE.

All models in scope have a Hamiltonian that is affine in the OU sample,

    H(t) = h0 + X(t) h_noise,

and constant channel operators R_j. The Markovian model is the special
case ``h_noise = 0`` with no OU path attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operators import TOL_HERM, dag, hermitian_part

TOL_NORM_PRESERVING = 1e-10


class NotSkewAdjoint(ValueError):
    """Diffusion coefficient B has B + B* != 0."""


class DriftConditionViolated(ValueError):
    """A + A* + B*B != 0, so ||psi||^2 cannot be a martingale."""


def drift_K(h, rs):
    """``K = -i h - 1/2 sum_j R_j^* R_j``."""
    h = hermitian_part(h, name="H")
    k = -1j * h
    for r in rs:
        r = np.asarray(r, dtype=complex)
        if r.shape != h.shape:
            raise ValueError(f"dimension mismatch: {r.shape} vs {h.shape}")
        k = k - 0.5 * dag(r) @ r
    return k


@dataclass(frozen=True)
class OUModel:
    """``H(t) = H0 - gamma X(t) L`` with ``R = -i L``."""

    H0: np.ndarray
    L: np.ndarray
    gamma: float

    def __post_init__(self):
        h0 = hermitian_part(self.H0, name="H0")
        l = hermitian_part(self.L, name="L")
        if h0.shape != l.shape:
            raise ValueError(f"dimension mismatch: {h0.shape} vs {l.shape}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "L", l)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n(self):
        return self.H0.shape[0]


@dataclass(frozen=True)
class CoefficientProcess:
    """Coefficients of ``d psi = K psi dt + sum_j R_j psi dW_j``.

    Evaluation at grid time ``t_k`` reads only ``X[k]`` of the noise path,
    which makes the coefficients predictable with respect to the grid.
    """

    h0: np.ndarray
    rs: tuple
    h_noise: Optional[np.ndarray] = None
    ou: Optional[OUModel] = None
    is_norm_preserving: bool = False
    _rdr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "h0", hermitian_part(self.h0, name="H"))
        rs = tuple(np.asarray(r, dtype=complex) for r in self.rs)
        for r in rs:
            if r.shape != self.h0.shape:
                raise ValueError(f"dimension mismatch: {r.shape} vs {self.h0.shape}")
        object.__setattr__(self, "rs", rs)
        if self.h_noise is not None:
            object.__setattr__(self, "h_noise", hermitian_part(self.h_noise, name="H_noise"))
        rdr = sum((dag(r) @ r for r in rs), np.zeros_like(self.h0))
        object.__setattr__(self, "_rdr", rdr)

    @property
    def n(self):
        return self.h0.shape[0]

    @property
    def d(self):
        return len(self.rs)

    @property
    def is_random(self):
        return self.h_noise is not None

    @property
    def gamma(self):
        return None if self.ou is None else self.ou.gamma

    def hamiltonian_from_x(self, x):
        """H for OU sample(s) ``x``; batched over the shape of ``x``."""
        if self.h_noise is None:
            return np.broadcast_to(self.h0, np.shape(x) + self.h0.shape)
        x = np.asarray(x, dtype=float)
        return self.h0 + x[..., None, None] * self.h_noise

    def drift_from_x(self, x):
        return -1j * self.hamiltonian_from_x(x) - 0.5 * self._rdr

    def evaluate(self, t, path):
        """``(H(t), [R_j(t)])`` at grid time ``t`` for one noise path."""
        k = path.grid.index(t)
        x = 0.0 if path.X is None else float(path.X[k])
        if self.is_random and path.X is None:
            raise ValueError("random model needs a noise path with an OU sample X")
        return self.hamiltonian_from_x(x).copy(), list(self.rs)

    def drift(self, t, path):
        h, rs = self.evaluate(t, path)
        return drift_K(h, rs)


def markovian_model(h0, ls):
    """Constant coefficients: ``H = h0``, ``R_j = ls[j]``."""
    return CoefficientProcess(h0=np.asarray(h0, dtype=complex), rs=tuple(ls))


def ou_random_hamiltonian_model(m):
    """OU-driven random Hamiltonian ``H0 - gamma X(t) L``, ``R = -i L``.

    ``K(t) = -i(H0 - gamma X(t) L) - L^2/2``; the squared norm of the
    solution is conserved pathwise.
    """
    if not isinstance(m, OUModel):
        m = OUModel(*m)
    return CoefficientProcess(
        h0=m.H0,
        rs=(-1j * m.L,),
        h_noise=-m.gamma * m.L,
        ou=m,
        is_norm_preserving=True,
    )


def validate_norm_preserving(a, b, tol=TOL_NORM_PRESERVING):
    """Decompose ``d psi = A psi dt + B psi dX`` into ``(H0, L)``.

    The squared norm is a martingale for every OU sample iff ``B + B* = 0``
    and ``A + A* + B*B = 0``; then ``B = -iL`` and ``A = -iH0 - L^2/2``
    with ``L = iB`` and ``H0 = i(A + L^2/2)`` both Hermitian.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    skew = np.linalg.norm(b + dag(b), 2)
    if skew > tol:
        raise NotSkewAdjoint(f"||B + B*|| = {skew:.3g} > {tol:g}")
    drift = np.linalg.norm(a + dag(a) + dag(b) @ b, 2)
    if drift > tol:
        raise DriftConditionViolated(
            f"||A + A* + B*B|| = {drift:.3g} > {tol:g}: norm is not a martingale")
    l = hermitian_part(1j * b, tol=max(tol, TOL_HERM), name="L")
    h0 = hermitian_part(1j * (a + 0.5 * l @ l), tol=max(tol, TOL_HERM), name="H0")
    return h0, l


def m_coefficients(psi_hat, rs):
    """``m_j = 2 Re <psi_hat | R_j psi_hat>`` for a unit vector."""
    psi_hat = np.asarray(psi_hat, dtype=complex)
    nrm = np.linalg.norm(psi_hat)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"psi_hat must be normalized (norm {nrm:.12g})")
    return np.array([2.0 * np.real(np.vdot(psi_hat, np.asarray(r) @ psi_hat)) for r in rs])


def hamiltonian_bound(process, path):
    """Sup of ``||H(t_k)||`` over the grid and its a-priori bound.

    The bound is ``||H0|| + gamma ||L|| max_k |X_k|`` (zero noise part for
    Markovian models); returns ``(sup, bound)``.
    """
    x = np.zeros(path.grid.steps + 1) if path.X is None else np.asarray(path.X)
    hs = process.hamiltonian_from_x(x)
    sup = float(np.max(np.linalg.norm(hs, 2, axis=(-2, -1))))
    bound = float(np.linalg.norm(process.h0, 2))
    if process.h_noise is not None:
        bound += float(np.linalg.norm(process.h_noise, 2)) * float(np.max(np.abs(x)))
    return sup, bound
