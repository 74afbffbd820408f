"""Dense operator algebra on C^n and superoperators on n x n matrices.

Superoperators are stored as n^2 x n^2 complex matrices acting on the
column-stacked vectorization of their argument, so that

    vec(A X B) = (B^T kron A) vec(X).

Units are hbar = 1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL_HERM = 1e-10
TOL_PSD = 1e-10

IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |0> = (1, 0), |1> = (0, 1); sigma_minus maps |1> to |0>.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def dag(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def _check_square(*mats):
    n = None
    for m in mats:
        m = np.asarray(m)
        if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
            raise ValueError(f"expected square matrix, got shape {m.shape}")
        if n is None:
            n = m.shape[-1]
        elif m.shape[-1] != n:
            raise ValueError(f"dimension mismatch: {n} vs {m.shape[-1]}")
    return n


def commutator(a, b):
    """Return ``a b - b a``."""
    _check_square(a, b)
    return a @ b - b @ a


def anticommutator(a, b):
    """Return ``a b + b a``."""
    _check_square(a, b)
    return a @ b + b @ a


def dissipator(l, rho):
    r"""Lindblad dissipator :math:`l\rho l^* - \frac12\{l^* l, \rho\}`."""
    _check_square(l, rho)
    ld = dag(l)
    ldl = ld @ l
    return l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)


def is_hermitian(a, tol=TOL_HERM):
    return bool(np.max(np.abs(a - dag(a)), initial=0.0) <= tol)


def hermitian_part(a, tol=TOL_HERM, name="matrix"):
    """Symmetrize ``a`` if it is Hermitian within ``tol``, else raise.

    Guards against round-off drift in user-supplied Hermitian operators.
    """
    a = np.asarray(a, dtype=complex)
    _check_square(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    defect = np.max(np.abs(a - dag(a)), initial=0.0)
    if defect > tol:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3g} > {tol:g})")
    return 0.5 * (a + dag(a))


# ---------------------------------------------------------------------------
# vectorization and superoperators


def vec(x):
    """Column-stacking vectorization, batched over leading axes."""
    x = np.asarray(x)
    return np.swapaxes(x, -1, -2).reshape(x.shape[:-2] + (-1,))


def unvec(v, n=None):
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if n is None:
        n = int(round(np.sqrt(v.shape[-1])))
    if n * n != v.shape[-1]:
        raise ValueError(f"length {v.shape[-1]} is not a perfect square")
    return np.swapaxes(v.reshape(v.shape[:-1] + (n, n)), -1, -2)


def superop_from_form(left, right):
    """Matrix of the map ``X -> left @ X @ right``."""
    _check_square(left, right)
    return np.kron(np.asarray(right).T, np.asarray(left)).astype(complex)


def superop_apply(s, x):
    """Apply superoperator matrix ``s`` to a (batch of) n x n matrices."""
    n = np.shape(x)[-1]
    return unvec(vec(x) @ np.asarray(s).T, n)


def commutator_superop(a):
    """Matrix of ``X -> [a, X]``."""
    eye = np.eye(np.shape(a)[-1], dtype=complex)
    return superop_from_form(a, eye) - superop_from_form(eye, a)


def lindblad_superop(h, ls=()):
    """Generator ``-i[h, .] + sum_j D[l_j]`` as a superoperator."""
    n = _check_square(h, *ls)
    eye = np.eye(n, dtype=complex)
    out = -1j * commutator_superop(h)
    for l in ls:
        ldl = dag(l) @ l
        out = out + superop_from_form(l, dag(l))
        out = out - 0.5 * (superop_from_form(ldl, eye) + superop_from_form(eye, ldl))
    return out


def superop_exp(s, t=1.0, order=18):
    """Matrix exponential ``exp(s t)`` by scaling and squaring.

    The scaled argument is brought below unit 1-norm times 2**-4 and
    exponentiated with a truncated Taylor series of degree ``order``,
    which is well below double-precision roundoff at that radius.
    """
    s = np.asarray(s, dtype=complex)
    if t < 0:
        raise ValueError("t must be non-negative")
    if not np.all(np.isfinite(s)) or not np.isfinite(t):
        raise ValueError("superop_exp: non-finite input")
    a = s * t
    dim = a.shape[0]
    norm = np.linalg.norm(a, 1)
    squarings = 0
    if norm > 2.0**-4:
        squarings = int(np.ceil(np.log2(norm / 2.0**-4)))
    a = a / 2.0**squarings
    result = np.eye(dim, dtype=complex)
    term = np.eye(dim, dtype=complex)
    for k in range(1, order + 1):
        term = term @ a / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


# ---------------------------------------------------------------------------
# density-matrix diagnostics


@dataclass(frozen=True)
class DensityReport:
    hermiticity_defect: float
    min_eigenvalue: float
    trace: complex
    ok: bool

    def __bool__(self):
        return self.ok


def check_density(rho, tol=TOL_PSD):
    """Report Hermiticity defect, smallest eigenvalue and trace of ``rho``.

    ``ok`` is true when the defect is at most ``tol`` and no eigenvalue of
    the Hermitian part is below ``-tol``. The trace is not required to be 1.
    """
    rho = np.asarray(rho, dtype=complex)
    _check_square(rho)
    defect = float(np.max(np.abs(rho - dag(rho)), initial=0.0))
    evals = np.linalg.eigvalsh(0.5 * (rho + dag(rho)))
    lam = float(evals[0])
    tr = complex(np.trace(rho))
    ok = defect <= tol and lam >= -tol and abs(tr.imag) <= tol
    return DensityReport(defect, lam, tr, ok)


def projector(psi):
    """``|psi><psi|``, batched over leading axes."""
    psi = np.asarray(psi, dtype=complex)
    return psi[..., :, None] * psi.conj()[..., None, :]
