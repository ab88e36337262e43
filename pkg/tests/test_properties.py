import numpy as np
from hypothesis import given, settings, strategies as st

from spde_uniq import config as cfgmod
from spde_uniq import control as ctl
from spde_uniq import models as mdl
from spde_uniq import spectral_core as sc
from spde_uniq.rng import gaussian_pairs, philox4x32

finite = dict(allow_nan=False, allow_infinity=False)


@given(mu=st.floats(0.5, 1e5, **finite), rho=st.floats(0.2, 4.0, **finite),
       alpha=st.floats(0.05, 0.95, **finite))
def test_vieta(mu, rho, alpha):
    damp = rho * mu ** alpha
    if abs(damp ** 2 - 4 * mu) <= 1e-6 * max(1.0, 4 * mu):
        return
    lp, lm = sc.damped_eigenvalues(np.array([mu]), rho, alpha)
    assert abs(lp[0] + lm[0] + damp) <= 1e-12 * damp
    assert abs(lp[0] * lm[0] - mu) <= 1e-12 * mu


@settings(max_examples=40, deadline=None)
@given(s=st.floats(0, 2, **finite), t=st.floats(0, 2, **finite),
       alpha=st.floats(0.1, 0.9, **finite), family=st.sampled_from(["heat", "damped_wave", "beam"]))
def test_semigroup_law(s, t, alpha, family):
    a = 1.0 if family == "heat" else alpha
    bs = mdl.SpectralModel(family=family, alpha=a, rho=1.5, n_max=6).block_set()
    lhs = bs.semigroup(s) @ bs.semigroup(t)
    rhs = bs.semigroup(s + t)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(-50, 50, **finite).filter(lambda v: abs(v) > 1e-3),
       seed=st.integers(0, 2 ** 16))
def test_control_energy_homogeneous(scale, seed):
    m = mdl.SpectralModel(family="damped_wave", alpha=0.4, gamma=0.1, rho=1.5, n_max=4)
    h = np.random.default_rng(seed).standard_normal((4, 2))
    e1 = ctl.build_control(ctl.ControlProblem(m, 4, 0.5, h)).energy
    e2 = ctl.build_control(ctl.ControlProblem(m, 4, 0.5, scale * h)).energy
    assert abs(e2 - abs(scale) * e1) <= 1e-12 * abs(scale) * e1


@given(alpha=st.floats(0.01, 1.0, **finite), n=st.integers(1, 4096),
       steps=st.integers(1, 10 ** 6), seed=st.integers(0, 2 ** 63))
def test_config_round_trip(alpha, n, steps, seed):
    cfg = cfgmod.ExperimentConfig()
    cfg.set("model.alpha", alpha)
    cfg.set("model.n_max", n)
    cfg.set("run.steps", steps)
    cfg.set("run.seed", seed)
    assert cfgmod.parse(cfgmod.dump(cfg)).values == cfg.values


@given(ctr=st.lists(st.integers(0, 2 ** 32 - 1), min_size=4, max_size=4),
       key=st.lists(st.integers(0, 2 ** 32 - 1), min_size=2, max_size=2))
def test_philox_deterministic(ctr, key):
    a = philox4x32(np.array(ctr, dtype=np.uint64), np.array(key, dtype=np.uint64))
    b = philox4x32(np.array(ctr, dtype=np.uint64), np.array(key, dtype=np.uint64))
    assert np.array_equal(a, b)


@given(seed=st.integers(0, 2 ** 40), step=st.integers(0, 10 ** 6), mode=st.integers(0, 500),
       traj=st.integers(0, 2 ** 40))
def test_gaussian_draw_addressing(seed, step, mode, traj):
    z = gaussian_pairs(seed, step, mode, traj)
    assert np.all(np.isfinite(z))
    assert np.array_equal(z, gaussian_pairs(seed, step, mode, traj))
