import math

import numpy as np
import pytest

from spde_uniq import engine as eng
from spde_uniq import models as mdl
from spde_uniq.errors import NonFiniteState
from spde_uniq.rng import NoiseStream

ZERO = mdl.DriftSpec("zero")


def damped(**kw):
    base = dict(family="damped_wave", alpha=0.4, gamma=0.1, sigma=0.15, theta=0.9, rho=1.5, n_max=8)
    base.update(kw)
    return mdl.SpectralModel(**base)


def test_noiseless_linear_flow_is_semigroup():
    m = damped(noise_scale=0.0)
    x0 = np.random.default_rng(0).standard_normal((8, 2))
    ens = eng.simulate_ensemble(m, ZERO, x0, 1.0, 16, 3, seed=1)
    S = m.block_set().semigroup(1.0)
    assert np.allclose(ens.states[:, -1], np.einsum("nij,nj->ni", S, x0), rtol=1e-12, atol=1e-14)


def test_exponential_euler_step_state():
    m = damped(noise_scale=0.0, n_max=3)
    st = eng.GalerkinState(3, np.ones((3, 2)))
    out = eng.exponential_euler_step(m, st, ZERO, 0.0, 0.1)
    assert out.time == pytest.approx(0.1)
    assert np.allclose(out.coeffs, np.einsum("nij,nj->ni", m.block_set().semigroup(0.1), st.coeffs))
    with pytest.raises(NonFiniteState):
        eng.GalerkinState(1, [[np.nan, 0.0]])


def test_linear_drift_first_order_convergence():
    # heat mode 1: dx = (-lam x + L a x) dt, exact exp((-lam + L a) T) x0
    m = mdl.SpectralModel(family="heat", alpha=1.0, sigma=0.5, gamma=0.0, n_max=1, noise_scale=0.0)
    drift = mdl.DriftSpec("mode_coefficients", profile="linear", amplitude=0.8, theta=1.0, component=0)
    exact = math.exp(-1.0 + 0.8) * 1.0
    errs = []
    for steps in (20, 40, 80, 160):
        ens = eng.simulate_ensemble(m, drift, [1.0], 1.0, steps, 1, seed=0)
        errs.append(abs(ens.states[0, -1, 0, 0] - exact))
    rates = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.8 < r < 2.2 for r in rates)


def test_blowup_raises():
    m = mdl.SpectralModel(family="heat", alpha=1.0, sigma=0.0, n_max=1, noise_scale=0.0)
    drift = mdl.DriftSpec("mode_coefficients", profile="linear", amplitude=1e6, theta=1.0)
    with pytest.raises(NonFiniteState):
        eng.simulate_ensemble(m, drift, [1.0], 1.0, 200, 1, seed=0)


def test_reproducible_across_chunks_and_workers():
    m = damped()
    drift = mdl.DriftSpec("mode_coefficients", theta=0.9, amplitude=1.0, decay=1.0)
    a = eng.simulate_ensemble(m, drift, None, 0.5, 10, 37, seed=5, chunk=37)
    b = eng.simulate_ensemble(m, drift, None, 0.5, 10, 37, seed=5, chunk=5, workers=3)
    assert np.array_equal(a.states, b.states)
    c = eng.simulate_ensemble(m, drift, None, 0.5, 10, 37, seed=6)
    assert not np.array_equal(a.states, c.states)


def test_trajectory_view_and_recording():
    ens = eng.simulate_ensemble(damped(), ZERO, None, 1.0, 10, 2, seed=0, record_every=5)
    assert np.allclose(ens.times, [0.0, 0.5, 1.0])
    path = ens.trajectory(1)
    assert len(path) == 3 and path[-1].time == 1.0 and path[0].n == 8


def test_coarse_increments_sum_fine_draws():
    m = damped(n_max=3)
    stream = NoiseStream(11, 8)
    coarse = eng.Stepper(m, 3, 0.25, 0.125 / 2)
    fine = eng.Stepper(m, 3, 0.125 / 2)
    trajs = np.arange(4, dtype=np.int64)
    _, dw_c = coarse.noise(stream, 1, trajs, "increments")
    dw_f = sum(fine.noise(stream, k, trajs, "increments")[1] for k in range(4, 8))
    assert np.allclose(dw_c, dw_f, atol=1e-15)


def test_ou_noise_consistent_across_refinement():
    # exact OU sampling: one coarse step equals four fine steps on the same path
    m = damped(n_max=3)
    stream = NoiseStream(3, 4)
    trajs = np.arange(2, dtype=np.int64)
    coarse = eng.Stepper(m, 3, 0.5, 0.125)
    fine = eng.Stepper(m, 3, 0.125)
    xc, _ = coarse.noise(stream, 0, trajs, "ou")
    x = np.zeros((2, 3, 2))
    for k in range(4):
        x = fine.step(x, ZERO, fine.noise(stream, k, trajs, "ou")[0])
    assert np.allclose(xc, x, atol=1e-14)


@pytest.mark.parametrize("family,alpha", [("heat", 1.0), ("damped_wave", 0.4)])
def test_convolution_moments_match_qt(family, alpha):
    m = mdl.SpectralModel(family=family, alpha=alpha, gamma=0.1, sigma=0.2, rho=1.5, n_max=4)
    tab = eng.convolution_moments(m, 0.5, 5, 20000, seed=2)
    hits = total = 0
    for k, t in enumerate(tab.times[1:], 1):
        q = mdl.q_t(m, float(t)).blocks
        ref = q[:, 0, 0][:, None] if m.is_heat else np.stack([q[:, 0, 0], q[:, 0, 1], q[:, 1, 1]], -1)
        z = np.abs(tab.mean[k] - ref) / tab.se[k]
        hits += int(np.sum(z <= 3))
        total += z.size
    assert hits / total >= 0.95


def test_sample_convolution_shape_and_start():
    m = damped(n_max=5)
    w = eng.sample_convolution(m, NoiseStream(1, 10), np.linspace(0, 1, 11), trajectories=3)
    assert w.shape == (3, 11, 5, 2)
    assert np.all(w[:, 0] == 0)
    with pytest.raises(ValueError):
        eng.sample_convolution(m, NoiseStream(1, 10), np.array([0.0, 0.1, 0.3]))


def test_accumulator_compensates():
    acc = eng.Accumulator(())
    acc.add(np.array(1e16), 1)
    for _ in range(10):
        acc.add(np.array(1.0), 1)
    acc.add(np.array(-1e16), 1)
    assert float(acc.value) == 10.0


def test_coupling_identical_data_is_zero():
    d = eng.couple_and_measure(damped(), mdl.DriftSpec("mode_coefficients", theta=0.9), None, None,
                               0.5, 10, 50, seed=3)
    assert d.sup_delta == 0.0 and d.initial_gap2 == 0.0


def test_coupling_linear_oracle():
    # zero drift: X1 - X2 = S(t)(x1 - x2) on every path
    m = damped()
    x1 = np.zeros((8, 2))
    x2 = x1.copy()
    x2[0, 0] = 0.1
    d = eng.couple_and_measure(m, ZERO, x1, x2, 1.0, 20, 10, seed=0)
    S = m.block_set().semigroup(d.times)
    exact = np.sum(np.einsum("tnij,nj->tni", S, x2 - x1) ** 2, axis=(1, 2))
    assert np.allclose(d.delta, exact, rtol=1e-12)
    assert np.all(d.delta_se <= 1e-6 * d.delta.max())
    assert d.lipschitz_ratio == pytest.approx(1.0)


def test_mismatched_seeds_do_not_couple():
    m = damped()
    a = eng.simulate_ensemble(m, ZERO, None, 0.5, 10, 200, seed=1).states[:, -1]
    b = eng.simulate_ensemble(m, ZERO, None, 0.5, 10, 200, seed=2).states[:, -1]
    gap = np.mean(np.sum((a - b) ** 2, axis=(1, 2)))
    assert gap > 0.1 * np.mean(np.sum(a ** 2, axis=(1, 2)))


def test_galerkin_convergence_decreases():
    m = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.0, sigma=0.5, n_max=64)
    drift = mdl.DriftSpec("mode_coefficients", theta=0.9, decay=1.0)
    rows = eng.galerkin_convergence(m, drift, np.full(64, 0.2), 0.5, [4, 8, 16], 64, 200, seed=1,
                                    steps=20)
    errs = [r.sup_mean_err for r in rows]
    assert errs[0] > errs[1] > errs[2] > 0
    with pytest.raises(ValueError):
        eng.galerkin_convergence(m, drift, None, 0.5, [8, 64], 64, 10, seed=1)
