"""Norm weights of the linear SSE and the change of measure.

For a driven decaying qubit the squared norm p(t) of each linear
trajectory is a mean-one martingale. Reweighting by p reproduces the
averages of the normalized (physical) ensemble. Run with
``python3 demos/weights_and_girsanov.py``.
"""

import numpy as np

from nmsse.coefficients import markovian_model
from nmsse.ensemble import girsanov_check, martingale_report, run_ensemble
from nmsse.noise import TimeGrid
from nmsse.operators import SIGMA_MINUS, SIGMA_X, SIGMA_Z

KET1 = np.array([0, 1], dtype=complex)


def main():
    model = markovian_model(SIGMA_X, [SIGMA_MINUS])
    grid = TimeGrid.from_horizon(1.0, 1e-3)
    st = run_ensemble(model, grid, 5000, 0, psi0=KET1)
    rep = martingale_report(st)
    print("t      E[p]      SE")
    for k in range(0, grid.steps + 1, grid.steps // 5):
        print(f"{grid.times[k]:.2f}  {st.mean_weight[k]:.5f}  {st.weight_se[k]:.5f}")
    print(f"max |z| over the grid: {rep.max_abs_z:.2f}\n")

    g = girsanov_check(model, grid, 5000, 0, SIGMA_Z, [0.2, 0.4, 0.6, 0.8, 1.0], psi0=KET1)
    print("<sigma_z>: weighted linear vs physical ensemble")
    for row in zip(g.times, g.weighted, g.physical, g.z):
        print("t={:.1f}  {:+.4f}  {:+.4f}  z={:+.2f}".format(*row))


if __name__ == "__main__":
    main()
