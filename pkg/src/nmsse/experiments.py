"""Named experiments: run a :class:`~nmsse.config.RunConfig`, write tables and a manifest.

Each experiment returns summary scalars, named pass/fail checks and the
tables it wrote. Tables are CSV with a header row and every number
printed with 17 significant digits, so identical runs give identical
bytes. The manifest is one JSON line appended to ``manifest.jsonl`` in
the output directory.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .coefficients import OUModel, markovian_model, ou_random_hamiltonian_model
from .config import ConfigError, RunConfig, parse_matrix
from .ensemble import RecordSpec, girsanov_check, martingale_report, run_ensemble
from .memory import dephasing_oracle, memory_me_evolve
from .noise import TimeGrid
from .operators import SIGMA_Z
from .studies import (
    dephasing_unravelling,
    memory_gamma_study,
    norm_drift_study,
    ou_statistics,
    propagator_study,
    residual_study,
    solver_crosscheck,
)

OUT_ENV = "NMSSE_OUT_DIR"


@dataclass
class RunManifest:
    experiment: str
    config: dict
    version: str
    wall_clock: float
    summary: dict
    checks: dict
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.checks.values())

    def to_json(self):
        return json.dumps({
            "experiment": self.experiment,
            "config": self.config,
            "version": self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wall_clock_s": self.wall_clock,
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed,
            "files": self.files,
        }, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _fmt(v):
    return f"{float(v):.17g}"


def table_text(header, columns):
    """CSV text of equal-length numeric columns."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in zip(*cols):
        out.write(",".join(_fmt(v) for v in row) + "\n")
    return out.getvalue()


class _Writer:
    """Collects output files and their checksums."""

    def __init__(self, directory, prefix):
        self.directory = directory
        self.prefix = prefix
        self.files = []

    def text(self, name, text):
        path = os.path.join(self.directory, f"{self.prefix}_{name}")
        data = text.encode()
        with open(path, "wb") as fh:
            fh.write(data)
        self.files.append({"path": os.path.basename(path),
                           "sha256": hashlib.sha256(data).hexdigest(),
                           "bytes": len(data)})

    def table(self, name, header, columns):
        self.text(f"{name}.csv", table_text(header, columns))

    def writer(self, name, obj):
        buf = io.StringIO()
        obj.to_csv(buf)
        self.text(name, buf.getvalue())


@dataclass
class _Context:
    cfg: RunConfig
    out: _Writer
    workers: int
    dump: int

    @property
    def num(self):
        return self.cfg.numerics

    @property
    def opt(self):
        return self.cfg.options

    @property
    def grid(self):
        return TimeGrid.from_horizon(self.num.T, self.num.dt)

    def oumodel(self):
        m = self.cfg.model
        return OUModel(m.H0, m.L, m.gamma)

    def process(self):
        m = self.cfg.model
        if m.kind == "ou":
            return ou_random_hamiltonian_model(self.oumodel())
        return markovian_model(m.H, m.R)

    def psi0(self, default=None):
        if self.num.psi0 is not None:
            return self.num.psi0
        n = self.cfg.model.n
        return np.eye(n, dtype=complex)[0] if default is None else default

    def dump_trajectories(self, stats):
        if "csv" not in self.cfg.formats:
            return
        for i, tr in enumerate(stats.trajectories):
            self.out.writer(f"trajectory_{i}.csv", tr)

    def ensemble_files(self, stats):
        if "csv" in self.cfg.formats:
            self.out.writer("ensemble.csv", stats)
        if "jsonl" in self.cfg.formats:
            buf = io.StringIO()
            stats.write_jsonl(buf)
            self.out.text("ensemble.jsonl", buf.getvalue())
        self.dump_trajectories(stats)


def _within(ratios, lo, hi):
    r = np.asarray(ratios)
    return bool(np.all((r >= lo) & (r <= hi)))


# ---------------------------------------------------------------------------
# experiments


def _ou_stats(ctx):
    m = ctx.cfg.model
    mode = ctx.opt.get("ou_mode", "exact_bridge")
    lag = float(ctx.opt.get("lag", 1.0))
    tol = float(ctx.opt.get("rel_tol", 0.05))
    st = ou_statistics(m.gamma, ctx.grid, ctx.num.N, ctx.num.master_seed, mode=mode, lag=lag)
    ctx.out.table("moments", ["t", "mean", "variance"], [st.times, st.mean, st.variance])
    summary = {"stationary_variance": st.stationary_variance,
               "max_variance_rel_error": st.max_variance_rel_error,
               "lag": lag, "lag_covariance": st.lag_covariance,
               "lag_covariance_se": st.lag_covariance_se,
               "expected_lag_covariance": st.expected_lag_covariance,
               "lag_rel_error": st.lag_rel_error, "ou_mode": mode}
    checks = {"variance_within_rel_tol": st.max_variance_rel_error <= tol,
              "lag_covariance_within_rel_tol": st.lag_rel_error <= tol}
    return summary, checks


def _martingale(ctx):
    stats = run_ensemble(ctx.process(), ctx.grid, ctx.num.N, ctx.num.master_seed,
                         RecordSpec(keep=ctx.dump), psi0=ctx.psi0(), workers=ctx.workers,
                         renorm=ctx.num.renorm, ou_mode=ctx.num.ou_mode)
    ctx.ensemble_files(stats)
    rep = martingale_report(stats)
    dev = abs(stats.mean_weight[-1] - 1.0)
    se = stats.weight_se[-1]
    summary = {"final_mean_weight": stats.mean_weight[-1], "final_weight_se": se,
               "final_z": rep.z[-1], "max_abs_z": rep.max_abs_z, "dead": stats.dead}
    if not rep.se_defined:
        return summary, {"final_weight_within_4se": bool(dev <= 1e-12)}
    return summary, {"final_weight_within_4se": bool(dev <= 4 * se)}


def _norm_preservation(ctx):
    dts = [float(x) for x in ctx.opt.get("dts", [4 * ctx.num.dt, 2 * ctx.num.dt, ctx.num.dt])]
    st = norm_drift_study(ctx.oumodel(), ctx.psi0(), dts, ctx.num.T, ctx.num.N,
                          ctx.num.master_seed, workers=ctx.workers)
    ctx.out.table("refinement", ["dt", "mean_max_excursion", "max_mean_deviation"],
                  [st.dts, st.mean_max_excursion, st.mean_weight_deviation])
    summary = {"dts": st.dts, "mean_max_excursion": st.mean_max_excursion,
               "excursion_ratios": st.ratios,
               "max_mean_deviation": st.mean_weight_deviation,
               "mean_deviation_ratios": st.weak_ratios,
               "projected_max_excursion": st.projected_max_excursion}
    checks = {"excursion_ratio_in_1.5_3": _within(st.ratios, 1.5, 3.0),
              "projected_excursion_below_1e-12": st.projected_max_excursion <= 1e-12}
    return summary, checks


def _dephasing_compare(ctx):
    m = ctx.oumodel()
    n = m.n
    psi0 = ctx.psi0(np.ones(n, complex) / np.sqrt(n))
    T = ctx.num.T
    times = [t for t in ctx.opt.get("times", [0.25, 0.5, 1.0, 2.0]) if t <= T]
    plateau_t = float(ctx.opt.get("plateau_time", 5.0))
    probe = times + ([plateau_t] if plateau_t <= T else [])
    grid = ctx.grid
    cmp_, stats = dephasing_unravelling(m, psi0, grid, ctx.num.N, ctx.num.master_seed, probe,
                                        workers=ctx.workers, keep=ctx.dump)
    ctx.ensemble_files(stats)
    rho0 = np.outer(psi0, psi0.conj())
    mem = memory_me_evolve(m, rho0, grid, "aux_ode")
    ora = dephasing_oracle(np.diag(m.H0).real, np.diag(m.L).real, m.gamma, rho0, grid.times)
    ctx.out.table("coherence", ["t", "ensemble_abs_eta01", "ensemble_se", "memory_me_abs_eta01",
                                "oracle_abs_eta01"],
                  [grid.times, np.abs(stats.eta[:, 0, 1]), stats.eta_se[:, 0, 1],
                   np.abs(mem.eta[:, 0, 1]), np.abs(ora[:, 0, 1])])
    k = len(times)
    z = cmp_.z[:k]
    summary = {"times": times, "ensemble": cmp_.ensemble[:k], "oracle": cmp_.oracle[:k],
               "se": cmp_.ensemble_se[:k], "z": z,
               "max_abs_memory_me_minus_ensemble": float(np.max(np.abs(
                   np.abs(mem.eta[:, 0, 1]) - np.abs(stats.eta[:, 0, 1])))),
               "memory_me_min_eigenvalue": float(np.min(mem.min_eigenvalue)),
               "dead": stats.dead}
    checks = {"coherence_within_3se": bool(np.all(np.abs(z) <= 3))}
    if plateau_t <= T:
        dev = abs(cmp_.ensemble[-1] - cmp_.plateau)
        summary.update(plateau_time=plateau_t, plateau_ensemble=cmp_.ensemble[-1],
                       plateau_value=cmp_.plateau, plateau_se=cmp_.ensemble_se[-1])
        checks["plateau_within_3se"] = bool(dev <= 3 * cmp_.ensemble_se[-1])
    return summary, checks


def _meaneq_residual(ctx):
    st, stats = residual_study(ctx.oumodel(), ctx.psi0(), ctx.num.dt, ctx.num.T, ctx.num.N,
                               ctx.num.master_seed, workers=ctx.workers, keep=ctx.dump)
    ctx.ensemble_files(stats)
    ctx.out.table("residual", ["t", "norm", "se", "bound", "compensated_norm",
                               "compensated_se"],
                  [st.times, st.norm, st.se, st.bound, st.compensated_norm, st.compensated_se])
    comp_ratio = float(np.max(st.compensated_norm / st.compensated_se))
    summary = {"c_hat": st.c_hat, "max_norm": float(np.max(st.norm)),
               "max_ratio": st.max_ratio, "compensated_max_ratio_to_se": comp_ratio,
               "dead": stats.dead}
    return summary, {"residual_within_4_se_plus_cdt": bool(np.all(st.norm <= st.bound))}


def _memory_me(ctx):
    m = ctx.oumodel()
    n = m.n
    grid = ctx.grid
    psi0 = ctx.psi0(np.ones(n, complex) / np.sqrt(n))
    rho0 = np.outer(psi0, psi0.conj())
    method = ctx.opt.get("method", "aux_ode")
    sol = memory_me_evolve(m, rho0, grid, method)
    ctx.out.writer("solution.csv", sol)
    summary = {"method": method, "min_eigenvalue": float(np.min(sol.min_eigenvalue)),
               "positivity_violations": sol.positivity_violations,
               "max_trace_defect": float(np.max(sol.trace_defect))}
    checks = {"trace_conserved_1e-8": summary["max_trace_defect"] <= 1e-8}

    dt = ctx.num.dt
    dts = [float(x) for x in ctx.opt.get("crosscheck_dts", [4 * dt, 2 * dt, dt])]
    cc = solver_crosscheck(m, rho0, ctx.num.T, dts)
    ctx.out.table("crosscheck", ["dt", "sup_difference"], [cc.dts, cc.differences])
    summary.update(crosscheck_dts=cc.dts, crosscheck_differences=cc.differences,
                   crosscheck_ratios=cc.ratios)
    checks["solver_difference_ratio_in_3_5"] = _within(cc.ratios, 3.0, 5.0)

    diagonal = (np.allclose(m.H0, np.diag(np.diag(m.H0)), rtol=0, atol=0)
                and np.allclose(m.L, np.diag(np.diag(m.L)), rtol=0, atol=0))
    if diagonal:
        gammas = [float(g) for g in ctx.opt.get("gammas", [0.4, 0.2, 0.1])]
        t_eval = float(ctx.opt.get("t_eval", min(1.0, ctx.num.T)))
        gs = memory_gamma_study(gammas, np.diag(m.H0).real, np.diag(m.L).real, rho0, dt,
                                t_eval, method)
        ctx.out.table("gamma_scaling", ["gamma", "sup_error"], [gs.gammas, gs.errors])
        summary.update(gammas=gs.gammas, oracle_errors=gs.errors, gamma_ratios=gs.ratios,
                       memory_off_vs_lindblad=gs.lindblad_defect)
        checks["oracle_error_ratio_in_1.5_3"] = _within(gs.ratios, 1.5, 3.0)
        checks["memory_off_matches_lindblad_1e-8"] = gs.lindblad_defect <= 1e-8
    return summary, checks


def _girsanov(ctx):
    n = ctx.cfg.model.n
    if "observable" in ctx.opt:
        a = parse_matrix(ctx.opt["observable"], "options.observable")
    elif n == 2:
        a = SIGMA_Z
    else:
        raise ConfigError("options.observable", "required for dimension other than 2")
    T = ctx.num.T
    checkpoints = ctx.opt.get("checkpoints", [T * (i + 1) / 5 for i in range(5)])
    g = girsanov_check(ctx.process(), ctx.grid, ctx.num.N, ctx.num.master_seed, a,
                       checkpoints, psi0=ctx.psi0(), workers=ctx.workers)
    ctx.out.table("checkpoints", ["t", "weighted", "weighted_se", "physical", "physical_se",
                                  "z"],
                  [g.times, g.weighted, g.weighted_se, g.physical, g.physical_se, g.z])
    summary = {"times": g.times, "z": g.z, "max_abs_z": float(np.max(np.abs(g.z)))}
    return summary, {"agree_within_4_combined_se": bool(np.all(np.abs(g.z) <= 4))}


def _propagator(ctx):
    st = propagator_study(ctx.oumodel(), ctx.psi0(), ctx.grid, ctx.num.master_seed,
                          n_triples=int(ctx.opt.get("triples", 50)))
    ctx.out.table("conditioning", ["t", "condition_number"],
                  [ctx.grid.times[:-1], st.condition_numbers])
    summary = {"max_composition_defect": st.max_composition_defect,
               "max_condition": st.max_condition, "min_condition": st.min_condition,
               "max_state_defect": st.max_state_defect}
    checks = {"composition_defect_below_1e-12": st.max_composition_defect <= 1e-12,
              "factors_invertible": bool(np.isfinite(st.max_condition))}
    return summary, checks


RUNNERS = {
    "ou-stats": _ou_stats,
    "martingale": _martingale,
    "norm-preservation": _norm_preservation,
    "dephasing-compare": _dephasing_compare,
    "meaneq-residual": _meaneq_residual,
    "memory-me": _memory_me,
    "girsanov-check": _girsanov,
    "propagator-check": _propagator,
}


def run_experiment(cfg, out_dir=None, workers=1, dump_trajectories=False, dump_count=5):
    """Run one experiment and write its tables and manifest line.

    The output directory is, in order of precedence, ``out_dir``, the
    config's ``output.directory``, ``$NMSSE_OUT_DIR`` and ``./results``.
    """
    directory = out_dir or cfg.output_dir or os.environ.get(OUT_ENV) or "results"
    os.makedirs(directory, exist_ok=True)
    writer = _Writer(directory, cfg.experiment)
    ctx = _Context(cfg, writer, int(workers), dump_count if dump_trajectories else 0)
    t0 = time.perf_counter()
    summary, checks = RUNNERS[cfg.experiment](ctx)
    wall = time.perf_counter() - t0
    checks = {k: bool(v) for k, v in checks.items()}
    manifest = RunManifest(cfg.experiment, cfg.raw, __version__, wall, summary, checks,
                           writer.files)
    if "jsonl" in cfg.formats:
        with open(os.path.join(directory, "manifest.jsonl"), "a") as fh:
            fh.write(manifest.to_json() + "\n")
    return manifest
