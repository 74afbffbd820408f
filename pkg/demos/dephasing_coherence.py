"""Coherence decay of a qubit under a random OU field.

Averages the linear-SSE ensemble for H = -gamma X sigma_z and compares
|rho_01(t)| with the exact Gaussian-phase result and with the memory
master equation. Run with ``python3 demos/dephasing_coherence.py``.
"""

import numpy as np

from nmsse.coefficients import OUModel
from nmsse.memory import dephasing_oracle, memory_me_evolve
from nmsse.noise import TimeGrid
from nmsse.operators import SIGMA_Z
from nmsse.studies import dephasing_unravelling

PLUS = np.array([1, 1], dtype=complex) / np.sqrt(2)


def main():
    times = [0.25, 0.5, 1.0, 2.0, 4.0]
    for gamma in (2.0, 1.0, 0.5):
        model = OUModel(np.zeros((2, 2)), SIGMA_Z, gamma)
        grid = TimeGrid.from_horizon(4.0, 2e-3)
        cmp_, _ = dephasing_unravelling(model, PLUS, grid, 4000, 0, times)
        rho0 = np.outer(PLUS, PLUS.conj())
        mem = memory_me_evolve(model, rho0, grid)
        mem_c = [abs(mem.eta[grid.index(t)][0, 1]) / 0.5 for t in times]
        print(f"gamma = {gamma}  (plateau {cmp_.plateau:.4f})")
        print("     t   ensemble      +-SE    memory-ME     exact")
        for t, e, s, m, o in zip(times, cmp_.ensemble, cmp_.ensemble_se, mem_c, cmp_.oracle):
            print(f"  {t:4.2f}   {e:.5f}  {s:.5f}     {m:.5f}   {o:.5f}")
        exact = dephasing_oracle([0, 0], [1, -1], gamma, rho0, 4.0)[0, 1]
        print(f"  memory-ME error at t=4: {abs(mem.eta[-1][0, 1] - exact):.2e}\n")


if __name__ == "__main__":
    main()
