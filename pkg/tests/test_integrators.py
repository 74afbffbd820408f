import io

import numpy as np
import pytest

from nmsse.coefficients import OUModel, markovian_model, ou_random_hamiltonian_model
from nmsse.integrators import (
    BlowUp,
    build_propagator,
    girsanov_shift,
    lsme_step,
    lsse_step,
    m_batch,
    nlsme_step,
    nlsse_step,
    one_step_matrix,
    simulate_lsme,
    simulate_lsse,
    simulate_nlsme,
    simulate_nlsse,
    weight_direct,
    weight_exponential,
)
from nmsse.noise import NoisePath, TimeGrid, derive_stream, noise_block, noise_path, ou_path
from nmsse.operators import SIGMA_MINUS, SIGMA_X, SIGMA_Z, projector

from conftest import KET0, KET1, PLUS, random_density, random_hermitian

OU = OUModel(SIGMA_X, SIGMA_Z, 1.0)


def _batched_run(model, dt, substeps, N, psi0, seed=0, horizon=1.0):
    """Final states and exponential weights of N Euler paths (test helper)."""
    grid = TimeGrid.from_horizon(horizon, dt)
    nb = noise_block(grid, model.d, seed, np.arange(N), gamma=model.gamma, substeps=substeps)
    psi = np.broadcast_to(np.asarray(psi0, complex), (N, model.n)).copy()
    xs = np.zeros((N, grid.steps + 1)) if nb.X is None else nb.X
    logw = np.zeros(N)
    for k in range(grid.steps):
        m = m_batch(psi / np.sqrt(weight_direct(psi))[:, None], model.rs)
        logw += np.sum(m * nb.dW[:, k] - 0.5 * m * m * dt, axis=1)
        g = one_step_matrix(model.drift_from_x(xs[:, k]), model.rs, dt, nb.dW[:, k])
        psi = (g @ psi[..., None])[..., 0]
    return psi, np.exp(logw)


def test_lsse_step_examples():
    h0 = SIGMA_X
    out = lsse_step(KET0, -1j * h0, [], 0.1, np.zeros(0))
    np.testing.assert_allclose(out, KET0 - 0.1j * h0 @ KET0)
    np.testing.assert_array_equal(lsse_step(PLUS, np.zeros((2, 2)), [SIGMA_Z], 0.1, [0.0]), PLUS)
    with pytest.raises(BlowUp), np.errstate(invalid="ignore"):
        lsse_step(np.array([np.inf, 0]), np.zeros((2, 2)), [], 0.1, np.zeros(0))


def test_strong_order_one_half():
    # mean error against the dt/2 solution on coupled paths shrinks by ~sqrt 2
    model = ou_random_hamiltonian_model(OU)
    dts = [0.01, 0.005, 0.0025, 0.00125]
    fin = dts[-1]
    states = {dt: _batched_run(model, dt, int(round(dt / fin)), 400, KET0)[0] for dt in dts}
    errs = [np.mean(np.linalg.norm(states[a] - states[b], axis=1))
            for a, b in zip(dts[:-1], dts[1:])]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios >= 1.2) & (ratios <= 1.7)), ratios


def test_weights_norm_preserving_model():
    grid = TimeGrid(dt=1e-3, steps=500)
    model = ou_random_hamiltonian_model(OU)
    tr = simulate_lsse(model, KET0, ou_path(grid, 1.0, derive_stream(0, 0)), renorm="project")
    np.testing.assert_allclose(tr.weights, 1.0, atol=1e-12)
    np.testing.assert_allclose(tr.m, 0.0, atol=1e-15)
    p = ou_path(grid, 1.0, derive_stream(0, 0))
    assert weight_exponential(np.zeros((grid.steps, 1)), p.dW, grid.dt) == 1.0


def test_weight_exponential_zero_history():
    assert weight_exponential(np.zeros((10, 2)), np.ones((10, 2)), 0.1, p0=0.7) == 0.7


def test_weight_representations_consistent():
    # the per-step gap (||R psi||^2 - m^2/2)(dW^2 - dt) has zero mean and
    # variance O(dt^2), so the pathwise gap shrinks like sqrt(dt)
    model = markovian_model(SIGMA_X, [SIGMA_MINUS])
    dts = [0.01, 0.005, 0.0025]
    gaps = []
    for dt in dts:
        psi, w = _batched_run(model, dt, int(round(dt / dts[-1])), 600, KET1)
        gaps.append(np.mean(np.abs(weight_direct(psi) - w)))
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all((ratios >= 1.2) & (ratios <= 1.7)), ratios
    assert gaps[-1] < 0.05


def test_girsanov_shift():
    np.testing.assert_array_equal(girsanov_shift(np.array([0.3, -0.1]), 0.0, 0.1), [0.3, -0.1])
    assert girsanov_shift(0.3, 1.0, 0.1) == pytest.approx(0.2)
    dw = np.array([0.1, -0.2, 0.05])
    m = np.array([0.5, 1.0, -1.0])
    what = girsanov_shift(dw, m, 0.01)
    np.testing.assert_allclose(np.cumsum(what), np.cumsum(dw) - 0.01 * np.cumsum(m))


def test_nlsse_ou_reduces_to_linear_then_normalize(rng):
    model = ou_random_hamiltonian_model(OU)
    K = model.drift_from_x(0.4)
    psi = PLUS
    a = nlsse_step(psi, K, model.rs, 0.01, [0.07])
    b = lsse_step(psi, K, model.rs, 0.01, [0.07])
    np.testing.assert_allclose(a, b / np.linalg.norm(b), atol=1e-15)


def test_nlsse_no_channels_and_renorm():
    h0 = SIGMA_X
    out = nlsse_step(KET0, -1j * h0, [], 0.1, np.zeros(0), renorm=False)
    np.testing.assert_allclose(out, KET0 - 0.1j * h0 @ KET0)
    out = nlsse_step(PLUS, np.zeros((2, 2)), [SIGMA_MINUS], 0.1, [0.3])
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        nlsse_step(2 * KET0, np.zeros((2, 2)), [], 0.1, np.zeros(0))


def test_lsme_step_ou_trace_conserved(rng):
    model = ou_random_hamiltonian_model(OU)
    sigma = random_density(rng, 2)
    sigma = 0.5 * (sigma + sigma.conj().T)
    out = lsme_step(sigma, model.hamiltonian_from_x(0.3), model.rs, 0.01, [0.2])
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(out, out.conj().T)
    # explicit form of the random Liouville step
    l, h = OU.L, OU.H0 - 0.3 * OU.L
    c = lambda a, b: a @ b - b @ a
    expect = sigma - 1j * c(h, sigma) * 0.01 - 1j * c(l, sigma) * 0.2 - 0.5 * c(l, c(l, sigma)) * 0.01
    np.testing.assert_allclose(out, expect, atol=1e-15)


def test_lsme_trace_increment(rng):
    sigma = random_density(rng, 2)
    rs = [SIGMA_MINUS, 0.5 * SIGMA_Z]
    dw = np.array([0.13, -0.07])
    out = lsme_step(sigma, SIGMA_X, rs, 0.01, dw)
    inc = sum(np.trace(r @ sigma + sigma @ r.conj().T) * w for r, w in zip(rs, dw))
    assert np.trace(out - sigma) == pytest.approx(inc, abs=1e-14)


def test_lsme_no_channels():
    rho = projector(PLUS)
    out = lsme_step(rho, SIGMA_Z, [], 0.1, np.zeros(0))
    np.testing.assert_allclose(out, rho - 0.1j * (SIGMA_Z @ rho - rho @ SIGMA_Z))


def test_lsme_mean_matches_outer_products():
    model = markovian_model(SIGMA_X, [SIGMA_MINUS])
    grid = TimeGrid(dt=2e-3, steps=250)
    rho0 = projector(KET1)
    s_lin, s_me = 0, 0
    N = 300
    for i in range(N):
        p = noise_path(grid, 1, derive_stream(1, i))
        s_lin = s_lin + projector(simulate_lsse(model, KET1, p).states[-1])
        s_me = s_me + simulate_lsme(model, rho0, p)[-1]
    assert np.max(np.abs(s_lin / N - s_me / N)) < 0.02


def test_nlsme_examples(rng):
    model = ou_random_hamiltonian_model(OU)
    rho = random_density(rng, 2)
    h = model.hamiltonian_from_x(-0.2)
    a = nlsme_step(rho, h, model.rs, 0.01, [0.1], renorm=False)
    np.testing.assert_allclose(a, lsme_step(rho, h, model.rs, 0.01, [0.1]), atol=1e-15)
    b = nlsme_step(rho, SIGMA_X, [], 0.01, np.zeros(0), renorm=False)
    assert np.trace(b).real == pytest.approx(1.0, abs=1e-15)
    c = nlsme_step(rho, SIGMA_X, [SIGMA_MINUS], 0.01, [0.2])
    assert np.trace(c).real == pytest.approx(1.0, abs=1e-15)


def test_nlsme_tracks_pure_state():
    model = markovian_model(SIGMA_X, [SIGMA_MINUS])
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        grid = TimeGrid.from_horizon(0.5, dt)
        sub = int(round(dt / 1e-3))
        e = []
        for i in range(20):
            p = noise_path(grid, 1, derive_stream(3, i), substeps=sub)
            psi = simulate_nlsse(model, KET1, p).states
            rho = simulate_nlsme(model, projector(KET1), p)
            e.append(np.max(np.abs(rho - projector(psi))))
        errs.append(np.mean(e))
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.05


def test_simulate_lsse_weights_and_csv():
    grid = TimeGrid(dt=0.01, steps=10)
    model = markovian_model(SIGMA_X, [SIGMA_MINUS])
    tr = simulate_lsse(model, KET1, noise_path(grid, 1, derive_stream(0, 0)))
    np.testing.assert_allclose(tr.weights, np.sum(np.abs(tr.states) ** 2, axis=1), atol=1e-12)
    assert tr.weights[0] == 1.0
    buf = io.StringIO()
    tr.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,re_psi_0,im_psi_0,re_psi_1,im_psi_1,p,m_1"
    assert len(lines) == 12


def test_projection_needs_norm_preserving_model():
    grid = TimeGrid(dt=0.01, steps=2)
    with pytest.raises(ValueError):
        simulate_lsse(markovian_model(SIGMA_X, [SIGMA_MINUS]), KET0,
                      noise_path(grid, 1, derive_stream(0, 0)), renorm="project")


def test_dead_trajectory_flagged():
    # with dW = 0 and R*R dt = 2 the Euler factor annihilates |1>
    grid = TimeGrid(dt=1.0, steps=3)
    model = markovian_model(np.zeros((2, 2)), [np.diag([0, np.sqrt(2)])])
    p = NoisePath(grid, np.zeros((3, 1)))
    tr = simulate_lsse(model, KET1, p)
    assert tr.dead_step == 1
    assert simulate_lsse(model, PLUS, p).dead_step is None


def test_propagator_laws():
    grid = TimeGrid(dt=1e-3, steps=400)
    model = ou_random_hamiltonian_model(OU)
    path = ou_path(grid, 1.0, derive_stream(0, 0))
    table = build_propagator(model, path)
    np.testing.assert_array_equal(table.A(7, 7), np.eye(2))
    assert table.composition_defect(400, 150, 20) <= 1e-12
    tr = simulate_lsse(model, KET0, path)
    for k in range(5):
        np.testing.assert_array_equal(table.A(k + 1, k) @ tr.states[k], tr.states[k + 1])
    np.testing.assert_allclose(table.A(400, 0) @ KET0, tr.states[-1], atol=1e-12)
    assert np.all(np.isfinite(table.condition_numbers))
    with pytest.raises(ValueError):
        table.A(3, 5)


def test_propagator_lift_matches_pure_evolution(rng):
    grid = TimeGrid(dt=1e-3, steps=200)
    model = ou_random_hamiltonian_model(OUModel(random_hermitian(rng, 3), random_hermitian(rng, 3),
                                                0.5))
    path = ou_path(grid, 0.5, derive_stream(1, 0))
    psi0 = np.array([1, 1j, 0]) / np.sqrt(2)
    tr = simulate_lsse(model, psi0, path, record_sigma=True)
    table = build_propagator(model, path)
    np.testing.assert_allclose(table.lift(200, 0, projector(psi0)), tr.sigma[-1], atol=1e-12)
    sme = simulate_lsme(model, projector(psi0), path)
    assert np.max(np.abs(sme[-1] - tr.sigma[-1])) < 0.05
