"""Accuracy of the memory master equation in the slow-noise regime.

Compares the memory equation against the exact dephasing state for a
range of OU rates and cross-checks its two solvers. Run with
``python3 demos/memory_equation.py``.
"""

import numpy as np

from nmsse.coefficients import OUModel
from nmsse.operators import SIGMA_X, SIGMA_Z
from nmsse.studies import memory_gamma_study, solver_crosscheck


def main():
    rho0 = np.full((2, 2), 0.5)
    gammas = [1.6, 0.8, 0.4, 0.2, 0.1]
    st = memory_gamma_study(gammas, [0.0, 0.0], [1.0, -1.0], rho0, 1e-3, 1.0)
    print("gamma   error at t=1")
    for g, e in zip(st.gammas, st.errors):
        print(f"{g:5.2f}   {e:.3e}")
    print("successive ratios:", np.array2string(st.ratios, precision=2))
    print(f"memory switched off vs Lindblad: {st.lindblad_defect:.1e}\n")

    cc = solver_crosscheck(OUModel(SIGMA_X, SIGMA_Z, 1.0), np.diag([1.0, 0.0]), 1.0,
                           [0.04, 0.02, 0.01, 0.005])
    print("dt      aux-ODE vs quadrature")
    for dt, d in zip(cc.dts, cc.differences):
        print(f"{dt:.3f}   {d:.3e}")
    print("ratios:", np.array2string(cc.ratios, precision=2))


if __name__ == "__main__":
    main()
