import math

import numpy as np
import pytest

from spde_uniq import models as mdl
from spde_uniq.errors import SingularQt, UnsupportedFamily


def damped(**kw):
    base = dict(family="damped_wave", alpha=0.4, gamma=0.1, sigma=0.15, theta=0.9, rho=1.5)
    base.update(kw)
    return mdl.SpectralModel(**base)


# ---------------------------------------------------------------------------
# model construction


def test_spectra():
    assert np.array_equal(damped(n_max=4).eigenvalues(), [1, 4, 9, 16])
    beam = mdl.SpectralModel(family="beam", alpha=0.4, n_max=3)
    assert np.array_equal(beam.eigenvalues(), [1, 16, 81])
    assert beam.delta == pytest.approx(4.0)
    heat2 = mdl.SpectralModel(family="heat", alpha=1.0, m=2, n_max=5)
    assert np.array_equal(heat2.eigenvalues(), [2, 5, 5, 8, 10])
    assert heat2.delta == pytest.approx(1.0)
    power = damped(law="power", c=2.0, delta=1.5, n_max=3)
    assert np.allclose(power.eigenvalues(), 2.0 * np.arange(1, 4) ** 1.5)


def test_xi_variant_ties_sigma_and_gamma():
    m = mdl.SpectralModel(family="damped_wave_xi", alpha=0.45, xi=0.1, sigma=0.9, gamma=0.7)
    assert m.sigma == 0.1 and m.gamma == 0.1
    with pytest.raises(ValueError):
        mdl.SpectralModel(family="damped_wave_xi", alpha=0.45, xi=0.6)


def test_bad_family():
    with pytest.raises(UnsupportedFamily):
        mdl.SpectralModel(family="plate")


def test_projection_compatibility():
    small = damped(n_max=8).block_set()
    big = damped(n_max=32).block_set().restrict(8)
    for a, b in [(small.A, big.A), (small.L, big.L), (small.g, big.g)]:
        assert np.array_equal(a, b)
    assert np.allclose(small.semigroup(0.3), big.semigroup(0.3), rtol=0, atol=0)


@pytest.mark.parametrize("family,kw", [
    ("heat", dict(alpha=1.0, gamma=0.3, sigma=0.2)),
    ("damped_wave", dict(alpha=0.4, gamma=0.1, sigma=0.15)),
    ("beam", dict(alpha=0.4, gamma=0.1, sigma=0.15)),
    ("damped_wave_xi", dict(alpha=0.45, xi=0.1)),
])
def test_factorisation_commutes(family, kw):
    m = mdl.SpectralModel(family=family, n_max=20, **kw)
    f = mdl.factorization(m)
    assert f.commutation_defect() == 0.0
    assert f.g_defect(m.block_set().g) < 1e-15
    assert f.k_invariant()


# ---------------------------------------------------------------------------
# admissibility


def test_corollary_i_example_passes():
    rep = mdl.check_theorem_conditions(damped(n_max=200))
    assert rep.ok, rep.failed()
    assert 'Corollary "dampedalfa"(i)' in rep.conditions[0].citation
    th = rep["theta > (2/3)(gamma+alpha)/alpha"]
    assert th.margin == pytest.approx(0.9 - 5 / 6)


def test_theta_failure_margin():
    rep = mdl.check_theorem_conditions(damped(theta=0.5))
    bad = rep.failed()
    assert [c.name for c in bad] == ["theta > (2/3)(gamma+alpha)/alpha"]
    assert bad[0].margin == pytest.approx(0.5 - 5 / 6)
    assert "dampedalfa" in bad[0].citation


def test_heat_example_passes():
    m = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.3, theta=0.8, sigma=0.05)
    rep = mdl.check_theorem_conditions(m)
    assert rep.ok
    c = rep["(m-2beta)/2 < gamma < beta theta/(2-theta)"]
    assert c.margin == pytest.approx(min(0.3 + 0.5, 0.8 / 1.2 - 0.3))


def test_resonance_reported():
    # rho^2 = 4 mu^(1 - 2 alpha) at mu = 1 with rho = 2, alpha = 0.4
    rep = mdl.check_theorem_conditions(damped(rho=2.0, n_max=4))
    assert not rep["non-resonance rho^2 != 4 mu_n^(1-2alpha)"].satisfied


def test_beam_and_alpha_ranges():
    rep = mdl.check_theorem_conditions(
        mdl.SpectralModel(family="beam", alpha=0.4, gamma=0.1, sigma=0.15, theta=0.9, rho=1.5))
    assert rep.theorem.startswith("beam corollary (i)")
    rep2 = mdl.check_theorem_conditions(damped(alpha=0.6, gamma=0.1, sigma=0.1, theta=0.95))
    assert "(ii)" in rep2.theorem
    with pytest.raises(UnsupportedFamily):
        mdl.check_theorem_conditions(mdl.SpectralModel(family="beam", m=3, alpha=0.3))


# ---------------------------------------------------------------------------
# series condition


def test_series_heat_converges():
    m = mdl.SpectralModel(family="heat", alpha=1.0, sigma=0.3, n_max=64)
    r = mdl.series_condition(m, mdl.DriftSpec("mode_coefficients", theta=0.8))
    assert r.exponent == pytest.approx(3.2)
    assert r.converges and r.partial_sum > 0 and math.isfinite(r.tail_bound)


def test_series_zero_drift():
    r = mdl.series_condition(damped(), mdl.DriftSpec("zero"))
    assert r.partial_sum == 0.0 and r.converges


def test_series_beam_m3_diverges():
    m = mdl.SpectralModel(family="beam", m=3, alpha=0.5, sigma=0.05, gamma=0.1, n_max=64)
    r = mdl.series_condition(m, mdl.DriftSpec("mode_coefficients", theta=0.9, decay=0.0))
    assert r.exponent == pytest.approx(0.8)
    assert not r.converges


def test_series_partial_sum_oracle():
    m = mdl.SpectralModel(family="heat", alpha=1.0, sigma=0.25, n_max=10)
    drift = mdl.DriftSpec("mode_coefficients", theta=1.0, profile="sin", decay=0.0)
    k = np.arange(1, 11.0)
    # zeta^2 ||B||^2 / |lambda| with ||B|| = sup + seminorm = 2
    expected = np.sum(k ** -1.0 * 4.0 / k ** 2)
    assert mdl.series_condition(m, drift).partial_sum == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# Q_t


def test_heat_qt_closed_form():
    m = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.0, n_max=5)
    q = mdl.q_t(m, 1.0).blocks[:, 0, 0]
    assert q[0] == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-14)
    k = np.arange(1, 6.0)
    assert np.allclose(q, (1 - np.exp(-2 * k ** 2)) / (2 * k ** 2), rtol=1e-13)
    far = mdl.q_t(m, 50.0).blocks[:, 0, 0]
    assert np.allclose(far, 1 / (2 * k ** 2), rtol=1e-14)


def test_heat_qt_derivative():
    m = mdl.SpectralModel(family="heat", alpha=0.8, gamma=0.3, n_max=6)
    t, h = 0.4, 1e-5
    dq = (mdl.q_t(m, t + h).blocks - mdl.q_t(m, t - h).blocks)[:, 0, 0] / (2 * h)
    bs = m.block_set()
    integrand = np.exp(2 * t * bs.A[:, 0, 0]) * bs.g[:, 0] ** 2
    assert np.allclose(dq, integrand, rtol=1e-6)


@pytest.mark.parametrize("family,alpha", [("damped_wave", 0.4), ("damped_wave", 0.7), ("beam", 0.45)])
def test_damped_qt_matches_lyapunov(family, alpha):
    m = mdl.SpectralModel(family=family, alpha=alpha, gamma=0.1, rho=1.5, n_max=10)
    bs = m.block_set()
    keep = np.flatnonzero(bs.mu <= 1e4)
    q = mdl.q_t(m, 0.7).blocks
    for k in keep:
        ref = mdl.q_t_lyapunov(bs.A[k], bs.g[k], 0.7)
        assert np.allclose(q[k], ref, rtol=1e-8, atol=1e-12 * np.abs(ref).max())
        assert np.allclose(q[k], q[k].T)
        assert np.all(np.linalg.eigvalsh(q[k]) >= -1e-15)


# ---------------------------------------------------------------------------
# trace and Gamma


def test_trace_heat_threshold():
    m = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.0, sigma=0.5, n_max=400)
    rep = mdl.trace_integrability(m, [0.3, 0.45, 0.5, 0.7])
    assert rep.best_eta == 0.3
    assert rep.values[0.45]["stable"]
    assert not rep.values[0.5]["stable"] and not rep.values[0.7]["stable"]


def test_trace_damped_found():
    m = damped(n_max=200)
    assert m.delta * (2 * m.gamma + m.alpha) > 1
    assert mdl.trace_integrability(m, [0.2, 0.5]).best_eta is not None


def test_trace_zero_noise():
    m = damped(noise_scale=0.0, n_max=20)
    rep = mdl.trace_integrability(m, [0.2, 0.6])
    assert all(v["total"] == 0.0 for v in rep.values.values())


def test_gamma_heat_closed_form_and_slope():
    m = mdl.SpectralModel(family="heat", alpha=1.0, gamma=0.0, sigma=0.5, n_max=64)
    s = np.array([0.5, 0.1, 0.01])
    gn, _ = mdl.gamma_norms(m, s)
    k = np.arange(1, 65.0)
    for si, v in zip(s, gn):
        ref = np.max(np.exp(-si * k ** 2) * np.sqrt(2 * k ** 2 / (1 - np.exp(-2 * si * k ** 2))))
        assert v == pytest.approx(ref, rel=1e-10)
    rep = mdl.gamma_integrability(m, 1.0, 0.9, 0.5)
    assert rep.fit_gamma.slope == pytest.approx(-0.5, abs=0.05)
    assert rep.theta_prime_finite


def test_gamma_damped_matches_energy_exponent():
    m = damped(alpha=0.5, gamma=0.1, sigma=0.1, theta=0.95, n_max=400)
    rep = mdl.gamma_integrability(m, 1.0, 0.95, 0.5, levels=12)
    assert rep.fit_gamma_gtilde.slope == pytest.approx(-(0.5 + 0.1 / 0.5), abs=0.15)


def test_gamma_singular():
    m = damped(n_max=50)
    with pytest.raises(SingularQt):
        mdl.gamma_norms(m, np.array([1e-9]), cond_max=1e6)


# ---------------------------------------------------------------------------
# drifts


def test_counterexample_drift_values():
    xi = np.linspace(0, math.pi, 7)
    assert np.all(mdl.counterexample_c(xi, 0.0) == 0.0)
    # direct formula at (pi/4, 1): 56 + 8 * 4^(7/12) + 4
    assert mdl.counterexample_c(math.pi / 4, 1.0) == pytest.approx(56 + 8 * 4 ** (7 / 12) + 4,
                                                                    rel=1e-14)
    assert np.all(mdl.counterexample_c(xi[:, None], np.array([3.0, -3.5, 10.0])) == 0.0)


def test_counterexample_on_orbit():
    # along y = tau^8 sin(2 xi) the drift equals y_tt - y_xixi + (-d^2)^{7/12} y_t
    tau, xi = 0.7, np.linspace(0, math.pi, 33)
    s = np.sin(2 * xi)
    y = tau ** 8 * s
    lhs = 56 * tau ** 6 * s + 4 * y + 4 ** (7 / 12) * 8 * tau ** 7 * s
    assert np.allclose(mdl.counterexample_c(xi, y), lhs, atol=1e-12)


def test_synthesize_project_round_trip():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((3, 10))
    xi, vals = mdl.synthesize(c, 64)
    ref = np.sqrt(2 / np.pi) * np.sin(np.outer(xi, np.arange(1, 11))) @ c.T
    assert np.allclose(vals, ref.T, atol=1e-12)
    assert np.allclose(mdl.project(vals, 10), c, atol=1e-12)


def test_mode_drift_evaluation():
    m = damped(n_max=4)
    d = mdl.DriftSpec("mode_coefficients", theta=0.5, amplitude=2.0, decay=1.0, component=0)
    x = np.array([[0.25, 9.0], [-4.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    expected = 2.0 / np.arange(1, 5) * np.array([0.5, -1.0, 0.0, 1.0])
    assert np.allclose(d.evaluate(m, x), expected)


@pytest.mark.parametrize("profile,theta", [("hoelder", 0.3), ("hoelder", 0.9), ("sin", 1.0),
                                           ("tanh", 1.0)])
def test_declared_hoelder_data_hold(profile, theta):
    r = mdl.check_hoelder(mdl.DriftSpec("mode_coefficients", theta=theta, profile=profile))
    assert r.ok, r


def test_hoelder_check_catches_false_claim():
    # a linear profile breaks the declared sup bound once samples leave [-1, 1]
    r = mdl.check_hoelder(mdl.DriftSpec("mode_coefficients", theta=1.0, profile="linear",
                                        sup_bound=1.0), scale=5.0)
    assert not r.ok


def test_counterexample_hoelder_declared():
    r = mdl.check_hoelder(mdl.counterexample_drift(), theta=0.75)
    assert r.ok, r
