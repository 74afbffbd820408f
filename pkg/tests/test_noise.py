import io

import numpy as np
import pytest

from nmsse.noise import (
    TimeGrid,
    coarsen,
    derive_stream,
    noise_block,
    noise_path,
    ou_autocorrelation,
    ou_bridge_recursion,
    ou_euler_recursion,
    ou_path,
    wiener_increments,
)


def test_time_grid():
    g = TimeGrid.from_horizon(1.0, 0.25)
    assert g.steps == 4
    np.testing.assert_allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert g.index(0.5) == 2
    with pytest.raises(ValueError):
        g.index(0.3)
    with pytest.raises(ValueError):
        TimeGrid(dt=0.0, steps=3)
    with pytest.raises(ValueError):
        TimeGrid.from_horizon(1.0, 0.3)


def _normals(stream, n=1000):
    return stream.generator().standard_normal(n)


def test_derive_stream_reproducible_and_distinct():
    a = _normals(derive_stream(42, 0))
    np.testing.assert_array_equal(a, _normals(derive_stream(42, 0)))
    assert not np.any(a == _normals(derive_stream(42, 1)))
    assert not np.any(a == _normals(derive_stream(43, 0)))
    assert not np.any(a == _normals(derive_stream(42, 0, tag=1)))


def test_wiener_increments_statistics():
    grid = TimeGrid(dt=0.01, steps=100_000)
    dw = wiener_increments(grid, 1, derive_stream(7, 0))[:, 0]
    n = dw.size
    sd = np.sqrt(grid.dt)
    assert abs(dw.mean()) <= 4 * sd / np.sqrt(n)
    assert abs(dw.var() / grid.dt - 1) <= 0.05


def test_wiener_increments_reproducible():
    grid = TimeGrid(dt=0.1, steps=50)
    a = wiener_increments(grid, 2, derive_stream(1, 3))
    np.testing.assert_array_equal(a, wiener_increments(grid, 2, derive_stream(1, 3)))


def test_substeps_share_brownian_path():
    grid = TimeGrid(dt=0.01, steps=40)
    fine = wiener_increments(grid.refine(4), 1, derive_stream(5, 2))
    coarse = wiener_increments(grid, 1, derive_stream(5, 2), substeps=4)
    np.testing.assert_allclose(coarse, fine.reshape(40, 4, 1).sum(axis=1), atol=1e-15)


def test_euler_recursion_zero_noise():
    x = ou_euler_recursion(1.5, 0.5, 0.1, np.zeros(20))
    np.testing.assert_allclose(x, 1.5 * (1 - 0.05) ** np.arange(21), rtol=1e-14)


def test_ou_path_euler_coupling():
    grid = TimeGrid(dt=0.01, steps=200)
    p = ou_path(grid, 0.7, derive_stream(0, 0))
    x, dw = p.X, p.dW[:, 0]
    np.testing.assert_array_equal(x[1:], (1 - 0.7 * 0.01) * x[:-1] + dw)
    assert not p.X.flags.writeable and not p.dW.flags.writeable


def test_ou_rejects_bad_gamma():
    grid = TimeGrid(dt=0.1, steps=10)
    with pytest.raises(ValueError):
        ou_path(grid, 0.0, derive_stream(0, 0))
    with pytest.raises(ValueError):
        ou_path(grid, 1.0, derive_stream(0, 0), mode="milstein")


def test_bridge_moments_frozen():
    # Var I and Cov(I, dW) for gamma = 0.5, dt = 0.1, evaluated in high precision
    gamma, dt, n = 0.5, 0.1, 400_000
    rng = np.random.default_rng(11)
    x, dw = ou_bridge_recursion(np.zeros(n), gamma, dt, rng.standard_normal((n, 1)),
                                rng.standard_normal((n, 1)))
    innov = x[:, 1]
    assert np.var(innov) == pytest.approx(0.095162581964040427, rel=0.01)
    assert np.mean(innov * dw[:, 0]) == pytest.approx(0.097541150998571982, rel=0.01)


def test_bridge_stationary_from_exact_moments():
    # propagating the exact second moments leaves the stationary law invariant
    gamma, dt = 0.8, 0.3
    a = np.exp(-gamma * dt)
    var_i = (1 - np.exp(-2 * gamma * dt)) / (2 * gamma)
    v = 1 / (2 * gamma)
    assert a * a * v + var_i == pytest.approx(v, rel=1e-14)


def test_autocorrelation_values():
    assert ou_autocorrelation(0.5, 1.0, 1.0) == pytest.approx(1.0)
    assert ou_autocorrelation(2.0, 0.0, 0.5) == pytest.approx(0.09196986029286058, rel=1e-14)
    assert ou_autocorrelation(1.0, 0.0, 60.0) < 1e-25
    with pytest.raises(ValueError):
        ou_autocorrelation(-1.0, 0, 1)


@pytest.mark.parametrize("mode", ["euler", "exact_bridge"])
def test_noise_block_matches_single_paths(mode):
    grid = TimeGrid(dt=0.01, steps=30)
    blk = noise_block(grid, 1, 9, [3, 4, 5], gamma=0.6, mode=mode, substeps=2)
    for row, i in enumerate([3, 4, 5]):
        p = noise_path(grid, 1, derive_stream(9, i), gamma=0.6, mode=mode, substeps=2)
        np.testing.assert_array_equal(blk.dW[row], p.dW)
        np.testing.assert_array_equal(blk.X[row], p.X)


def test_fixed_start_and_stationary_start():
    grid = TimeGrid(dt=0.1, steps=1)
    assert ou_path(grid, 1.0, derive_stream(0, 0), x0=0.3).X[0] == 0.3
    x0 = noise_block(grid, 1, 0, np.arange(20_000), gamma=2.0).X[:, 0]
    assert np.var(x0) == pytest.approx(0.25, rel=0.05)


def test_coarsen_euler_consistent():
    grid = TimeGrid(dt=0.01, steps=40)
    p = ou_path(grid, 1.0, derive_stream(2, 0))
    c = coarsen(p, 4)
    np.testing.assert_allclose(c.dW[:, 0], p.dW[:, 0].reshape(10, 4).sum(axis=1), atol=1e-15)
    np.testing.assert_array_equal(c.X[1:], (1 - 0.04) * c.X[:-1] + c.dW[:, 0])


def test_euler_variance_bias_halves():
    # stationary variance of the Euler recursion is 1 / (gamma (2 - gamma dt)),
    # so the bias relative to 1 / (2 gamma) halves with dt
    gamma = 0.5
    biases = []
    for dt in (0.4, 0.2, 0.1):
        v = 1 / (gamma * (2 - gamma * dt))
        biases.append(v - 1 / (2 * gamma))
    r = np.array(biases[:-1]) / np.array(biases[1:])
    assert np.all((r >= 1.5) & (r <= 3))


def test_euler_variance_bias_monte_carlo():
    # long-run sample variance of matched-seed Euler paths follows the bias above
    gamma = 0.5
    est = []
    for dt in (0.4, 0.2):
        grid = TimeGrid.from_horizon(40.0, dt)
        sub = int(round(dt / 0.2))
        x = noise_block(grid, 1, 3, np.arange(4000), gamma=gamma, substeps=sub).X[:, -1]
        est.append(np.var(x))
    assert est[0] - est[1] == pytest.approx(1 / (0.5 * 1.8) - 1 / (0.5 * 1.9), abs=0.04)


def test_markov_limit_hook():
    for gamma in (0.5, 0.05):
        x = noise_block(TimeGrid(dt=0.1, steps=1), 1, 0, np.arange(20_000), gamma=gamma).X[:, 0]
        assert np.mean((gamma * x) ** 2) == pytest.approx(gamma / 2, rel=0.05)


def test_path_csv():
    grid = TimeGrid(dt=0.5, steps=2)
    p = ou_path(grid, 1.0, derive_stream(0, 0))
    buf = io.StringIO()
    p.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,X,dW_1"
    assert len(lines) == 4
    assert lines[-1].endswith(",")
