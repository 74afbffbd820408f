"""Refinement and consistency studies built on the simulation modules.

Each study returns a plain dataclass of numbers; thresholds are applied by
the caller (the experiment runner or the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import OUModel, ou_random_hamiltonian_model
from .ensemble import RecordSpec, mean_eq_residual, run_ensemble
from .integrators import build_propagator
from .memory import dephasing_oracle, lindblad_evolve, mean_liouvillian, memory_me_evolve
from .noise import TimeGrid, noise_block, noise_path, derive_stream, ou_autocorrelation


def _ratios(errors):
    e = np.asarray(errors, dtype=float)
    return e[:-1] / e[1:]


# ---------------------------------------------------------------------------
# OU statistics


@dataclass
class OUStatistics:
    gamma: float
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    lag: float
    lag_covariance: float
    lag_covariance_se: float

    @property
    def stationary_variance(self):
        return 1.0 / (2 * self.gamma)

    @property
    def max_variance_rel_error(self):
        return float(np.max(np.abs(self.variance / self.stationary_variance - 1.0)))

    @property
    def expected_lag_covariance(self):
        return float(ou_autocorrelation(self.gamma, 0.0, self.lag))

    @property
    def lag_rel_error(self):
        return abs(self.lag_covariance / self.expected_lag_covariance - 1.0)


def ou_statistics(gamma, grid, N, master_seed, mode="exact_bridge", lag=1.0,
                  block_size=8192):
    """Ensemble mean/variance of X(t_k) and the mean lagged covariance.

    The lagged covariance pools all grid pairs ``(t, t + lag)``.
    """
    lag_k = grid.index(lag)
    K = grid.steps
    s1 = np.zeros(K + 1)
    s2 = np.zeros(K + 1)
    lag_vals = []
    for start in range(0, N, block_size):
        idx = np.arange(start, min(start + block_size, N))
        x = noise_block(grid, 1, master_seed, idx, gamma=gamma, mode=mode).X
        s1 += x.sum(axis=0)
        s2 += (x * x).sum(axis=0)
        lag_vals.append(np.mean(x[:, : K + 1 - lag_k] * x[:, lag_k:], axis=1))
    mean = s1 / N
    var = (s2 - N * mean * mean) / (N - 1)
    per_path = np.concatenate(lag_vals)
    return OUStatistics(gamma, grid.times, mean, var, lag, float(per_path.mean()),
                        float(per_path.std(ddof=1) / np.sqrt(N)))


# ---------------------------------------------------------------------------
# pathwise norm drift of the Euler scheme


@dataclass
class NormDriftStudy:
    dts: list
    mean_max_excursion: np.ndarray
    mean_weight_deviation: np.ndarray
    projected_max_excursion: float

    @property
    def ratios(self):
        return _ratios(self.mean_max_excursion)

    @property
    def weak_ratios(self):
        return _ratios(self.mean_weight_deviation)


def norm_drift_study(oumodel, psi0, dts, horizon, N, master_seed, workers=1):
    """Norm excursion of the linear SSE for a norm-preserving model.

    For every ``dt`` (coarsest first) the same Brownian paths are used: the
    increments are drawn on the finest grid and summed. Reported per dt:
    the path average of ``max_k | ||psi_k||^2 - ||psi_0||^2 |`` and
    ``max_k | E ||psi_k||^2 - ||psi_0||^2 |``. The projected scheme is run
    on the finest grid.
    """
    model = ou_random_hamiltonian_model(oumodel)
    dts = sorted(dts, reverse=True)
    finest = dts[-1]
    p0 = float(np.vdot(psi0, psi0).real)
    exc, weak = [], []
    for dt in dts:
        sub = int(round(dt / finest))
        grid = TimeGrid.from_horizon(horizon, dt)
        st = run_ensemble(model, grid, N, master_seed, RecordSpec(norm_excursion=True),
                          psi0=psi0, workers=workers, substeps=sub)
        exc.append(float(np.mean(st.norm_excursion)))
        weak.append(float(np.max(np.abs(st.mean_weight - p0))))
    grid = TimeGrid.from_horizon(horizon, finest)
    st = run_ensemble(model, grid, N, master_seed, RecordSpec(norm_excursion=True),
                      psi0=psi0, workers=workers, renorm="project")
    return NormDriftStudy(dts, np.array(exc), np.array(weak),
                          float(np.max(st.norm_excursion)))


# ---------------------------------------------------------------------------
# dephasing unravelling


@dataclass
class DephasingComparison:
    times: np.ndarray
    ensemble: np.ndarray
    ensemble_se: np.ndarray
    oracle: np.ndarray
    plateau: float

    @property
    def z(self):
        return (self.ensemble - self.oracle) / self.ensemble_se


def dephasing_unravelling(oumodel, psi0, grid, N, master_seed, times, workers=1, i=0, j=1,
                          keep=0):
    """Normalized coherence ``|eta_ij(t)| / |rho0_ij|``: ensemble vs exact average.

    Requires diagonal ``H0`` and ``L``. ``plateau`` is the long-time limit
    ``exp(-(l_i - l_j)^2 / (2 gamma))`` of the exact curve.
    """
    h0d, ld = np.diag(oumodel.H0).real, np.diag(oumodel.L).real
    if np.max(np.abs(oumodel.H0 - np.diag(h0d))) > 0 or np.max(np.abs(oumodel.L - np.diag(ld))) > 0:
        raise ValueError("dephasing comparison needs diagonal H0 and L")
    model = ou_random_hamiltonian_model(oumodel)
    st = run_ensemble(model, grid, N, master_seed, RecordSpec(keep=keep), psi0=psi0,
                      workers=workers)
    rho0 = np.outer(psi0, np.conj(psi0))
    scale = abs(rho0[i, j])
    ks = [grid.index(t) for t in times]
    ens = np.abs(st.eta[ks, i, j]) / scale
    se = st.eta_se[ks, i, j] / scale
    ora = np.abs(dephasing_oracle(h0d, ld, oumodel.gamma, rho0, np.asarray(times))[:, i, j]) / scale
    plateau = float(np.exp(-(ld[i] - ld[j]) ** 2 / (2 * oumodel.gamma)))
    return DephasingComparison(np.asarray(times, float), ens, se, ora, plateau), st


# ---------------------------------------------------------------------------
# mean-equation residual with one refinement


@dataclass
class ResidualStudy:
    times: np.ndarray
    norm: np.ndarray
    se: np.ndarray
    c_hat: float
    dt: float
    compensated_norm: np.ndarray = field(default=None)
    compensated_se: np.ndarray = field(default=None)

    @property
    def bound(self):
        return 4.0 * (self.se + self.c_hat * self.dt)

    @property
    def max_ratio(self):
        return float(np.max(self.norm / (self.se + self.c_hat * self.dt)))


def residual_study(oumodel, psi0, dt, horizon, N, master_seed, workers=1, keep=0):
    """Residual of the open mean equation at ``dt`` with ``C`` calibrated at ``2 dt``.

    Both runs share Brownian paths. ``C`` is the largest residual change
    between the two resolutions that exceeds four combined standard errors,
    divided by ``dt`` (the bias of the scheme is linear in ``dt``).
    """
    model = ou_random_hamiltonian_model(oumodel)
    rec = RecordSpec(residual=True)
    fine = run_ensemble(model, TimeGrid.from_horizon(horizon, dt), N, master_seed,
                        RecordSpec(residual=True, keep=keep),
                        psi0=psi0, workers=workers)
    coarse = run_ensemble(model, TimeGrid.from_horizon(horizon, 2 * dt), N, master_seed, rec,
                          psi0=psi0, workers=workers, substeps=2)
    rf = mean_eq_residual(fine, oumodel)
    rc = mean_eq_residual(coarse, oumodel)
    # coarse interior point m sits at fine interior index 2m + 1
    fr = rf.residual[1::2][: len(rc.times)]
    fs = fine.residual_moments["raw"][1][1:-1][1::2][: len(rc.times)]
    cs = coarse.residual_moments["raw"][1][1:-1]
    excess = np.abs(rc.residual - fr) - 4.0 * np.hypot(fs, cs)
    c_hat = float(max(np.max(excess), 0.0) / dt)
    comp = mean_eq_residual(fine, oumodel, compensated=True)
    return ResidualStudy(rf.times, rf.norm, rf.se, c_hat, dt, comp.norm, comp.se), fine


# ---------------------------------------------------------------------------
# memory master equation studies


@dataclass
class MemoryGammaStudy:
    gammas: list
    errors: np.ndarray
    lindblad_defect: float

    @property
    def ratios(self):
        return _ratios(self.errors)


def memory_gamma_study(gammas, h0_diag, l_diag, rho0, dt, t_eval, method="aux_ode"):
    """Sup-norm error at ``t_eval`` of the memory equation vs the exact dephasing state.

    Gammas are sorted in decreasing order. Also reports, for the first gamma,
    the max difference between the memory-free solve and the Lindblad flow.
    """
    gammas = sorted(gammas, reverse=True)
    h0 = np.diag(np.asarray(h0_diag, complex))
    l = np.diag(np.asarray(l_diag, complex))
    grid = TimeGrid.from_horizon(t_eval, dt)
    errs = []
    for g in gammas:
        sol = memory_me_evolve(OUModel(h0, l, g), rho0, grid, method)
        exact = dephasing_oracle(h0_diag, l_diag, g, rho0, t_eval)
        errs.append(float(np.max(np.abs(sol.eta[-1] - exact))))
    off = memory_me_evolve(OUModel(h0, l, gammas[0]), rho0, grid, method, memory=False)
    lind = lindblad_evolve(mean_liouvillian(h0, l), rho0, grid)
    return MemoryGammaStudy(gammas, np.array(errs), float(np.max(np.abs(off.eta - lind.eta))))


@dataclass
class SolverCrossCheck:
    dts: list
    differences: np.ndarray

    @property
    def ratios(self):
        return _ratios(self.differences)


def solver_crosscheck(oumodel, rho0, horizon, dts):
    """Sup-norm difference between the auxiliary-ODE and quadrature solutions."""
    dts = sorted(dts, reverse=True)
    diffs = []
    for dt in dts:
        grid = TimeGrid.from_horizon(horizon, dt)
        a = memory_me_evolve(oumodel, rho0, grid, "aux_ode").eta
        q = memory_me_evolve(oumodel, rho0, grid, "quadrature").eta
        diffs.append(float(np.max(np.abs(a - q))))
    return SolverCrossCheck(dts, np.array(diffs))


# ---------------------------------------------------------------------------
# propagator


@dataclass
class PropagatorStudy:
    max_composition_defect: float
    max_condition: float
    min_condition: float
    max_state_defect: float
    condition_numbers: np.ndarray


def propagator_study(oumodel, psi0, grid, master_seed, n_triples=50):
    """Composition law and invertibility of the Euler propagator on one path."""
    from .integrators import simulate_lsse

    model = ou_random_hamiltonian_model(oumodel)
    path = noise_path(grid, 1, derive_stream(master_seed, 0), gamma=oumodel.gamma)
    table = build_propagator(model, path)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed,
                                                                      spawn_key=(0, 99))))
    triples = np.sort(rng.integers(0, grid.steps + 1, size=(n_triples, 3)), axis=1)
    triples = np.vstack([triples, [[0, grid.steps // 2, grid.steps]]])
    defect = max(table.composition_defect(k, r, s) for s, r, k in triples)
    traj = simulate_lsse(model, psi0, path)
    a_full = table.A(grid.steps, 0)
    state_defect = float(np.max(np.abs(a_full @ np.asarray(psi0, complex) - traj.states[-1])))
    return PropagatorStudy(defect, float(table.condition_numbers.max()),
                           float(table.condition_numbers.min()), state_defect,
                           np.asarray(table.condition_numbers))
