"""Explicit null control of the truncated damped system dY = A_n Y + G_n u.

The control is u = K1 psi + K2 psi' with psi(tau) = -Phi_t(tau) e^{tau A} h,
Phi_t(tau) = C_m tau^m (t - tau) and K = [G | A G]^{-1}.  Integration by
parts gives Y(t) = 0 exactly; everything below is per block, so modes decouple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import models as mdl
from . import spectral_core as sc
from .errors import IllConditionedK, NonFiniteState, UnsupportedFamily
from .quadrature import composite_gl, graded_edges


def smallest_m(alpha: float, gamma: float) -> int:
    """Smallest integer m >= 1 with 2m - 2 gamma/alpha > -1."""
    m = max(1, math.floor(gamma / alpha - 0.5) + 1)
    while 2 * m - 2 * gamma / alpha <= -1:
        m += 1
    return m


def phi_profile(t: float, m: int):
    """C_m and evaluators of Phi_t(tau) = C_m tau^m (t - tau) and its derivative."""
    if t <= 0 or m < 1:
        raise ValueError("need t > 0 and m >= 1")
    cm = (m + 1) * (m + 2) / t ** (m + 2)

    def phi(tau):
        tau = np.asarray(tau, dtype=float)
        return cm * tau ** m * (t - tau)

    def dphi(tau):
        tau = np.asarray(tau, dtype=float)
        return cm * (m * tau ** (m - 1) * (t - tau) - tau ** m)

    return cm, phi, dphi


@dataclass
class ControlProblem:
    model: mdl.SpectralModel
    n: int
    t: float
    h: np.ndarray              # (n, 2)
    m: int | None = None

    def __post_init__(self):
        if self.model.is_heat:
            raise UnsupportedFamily("the explicit control is built for the damped families")
        self.h = np.asarray(self.h, dtype=float).reshape(self.n, 2)
        if self.m is None:
            self.m = smallest_m(self.model.alpha, self.model.gamma)
        if 2 * self.m - 2 * self.model.gamma / self.model.alpha <= -1:
            raise ValueError("profile order must satisfy 2m - 2gamma/alpha > -1")
        if self.t <= 0:
            raise ValueError("t must be positive")


@dataclass
class ControlSignal:
    nodes: np.ndarray
    weights: np.ndarray
    u: np.ndarray              # (nodes, n) scalar control per mode
    energy: float
    problem: ControlProblem = field(repr=False)

    def __call__(self, tau) -> np.ndarray:
        return control_values(self.problem, np.atleast_1d(tau))


def k_matrix(bs: sc.BlockSet) -> np.ndarray:
    """K = [G | A G]^{-1} per block (closed form)."""
    g = bs.g[:, 1]
    mu = bs.mu
    gap = np.abs(bs.lam_slow - bs.lam_fast)
    if np.any(gap <= 1e-12 * np.abs(bs.lam_fast)):
        raise IllConditionedK("lambda+ and lambda- too close to invert [G | AG]")
    K = np.zeros((bs.n, 2, 2))
    damp = -bs.A[:, 1, 1]
    K[:, 0, 0] = damp / (np.sqrt(mu) * g)
    K[:, 0, 1] = 1.0 / g
    K[:, 1, 0] = 1.0 / (np.sqrt(mu) * g)
    return K


def _weights(model, bs, t, m, tau):
    """Row vectors w_n(tau) with u_n(tau) = w_n(tau) . h_n; shape (nodes, n, 2)."""
    _, phi, dphi = phi_profile(t, m)
    K = k_matrix(bs)
    S = bs.semigroup(tau)                        # (q, n, 2, 2)
    AS = bs.A @ S
    p = phi(tau)[:, None, None, None]
    dp = dphi(tau)[:, None, None, None]
    M = -(np.einsum("ni,qnij->qnj", K[:, 0], p * S)
          + np.einsum("ni,qnij->qnj", K[:, 1], dp * S + p * AS))
    return M


def _edges(bs: sc.BlockSet, t: float, levels: int = 40, per_period: int = 2) -> np.ndarray:
    freq = float(np.max(np.abs(bs.lam_slow.imag))) if bs.n else 0.0
    decay = float(np.max(np.abs(bs.lam_fast.real)))
    panels = int(math.ceil(per_period * freq * t / (2 * math.pi))) + 8
    lv = int(min(levels, max(8, math.ceil(math.log2(max(decay * t, 1.0))) + 8)))
    return np.unique(np.concatenate([graded_edges(t, lv), np.linspace(0.0, t, panels + 1)]))


def control_values(problem: ControlProblem, tau: np.ndarray) -> np.ndarray:
    bs = problem.model.block_set(problem.n)
    tau = np.asarray(tau, dtype=float)
    w = _weights(problem.model, bs, problem.t, problem.m, tau)
    u = np.einsum("qnj,nj->qn", w, problem.h)
    # the closed form holds on the open interval; the control is set to 0 at both ends
    u[(tau <= 0.0) | (tau >= problem.t)] = 0.0
    return u


def build_control(problem: ControlProblem, order: int = 20, refine: int = 1) -> ControlSignal:
    """Sample u on a composite Gauss-Legendre grid and compute its L^2 energy."""
    bs = problem.model.block_set(problem.n)
    edges = _edges(bs, problem.t, per_period=2 * refine)
    nodes, weights = composite_gl(0.0, problem.t, edges, order)
    u = control_values(problem, nodes)
    energy = math.sqrt(float(np.sum(weights[:, None] * u * u)))
    return ControlSignal(nodes, weights, u, energy, problem)


def integrate_controlled(problem: ControlProblem, signal: ControlSignal | None, steps: int,
                         order: int = 20) -> np.ndarray:
    """Y(t) for dY = A Y + G u, Y(0) = h: exact semigroup plus per-step GL forcing."""
    bs = problem.model.block_set(problem.n)
    t = problem.t
    hstep = t / steps
    S = bs.semigroup(hstep)
    x, w = np.polynomial.legendre.leggauss(order)
    y = problem.h.copy()
    for k in range(steps):
        if signal is not None:
            lo = k * hstep
            s = lo + 0.5 * hstep * (x + 1.0)
            u = control_values(problem, s)                       # (q, n)
            back = bs.semigroup(lo + hstep - s)                  # (q, n, 2, 2)
            f = np.einsum("qnij,nj->qni", back, bs.g) * u[..., None]
            forcing = 0.5 * hstep * np.tensordot(w, f, axes=(0, 0))
        else:
            forcing = 0.0
        y = np.einsum("nij,nj->ni", S, y) + forcing
        if not np.all(np.isfinite(y)):
            raise NonFiniteState("controlled state overflowed")
    return y


def energy_matrices(model: mdl.SpectralModel, t: float, modes: Sequence[int], m: int | None = None,
                    order: int = 20) -> np.ndarray:
    """int_0^t w_n^T w_n dtau for the selected (1-based) modes; shape (len(modes), 2, 2)."""
    m = smallest_m(model.alpha, model.gamma) if m is None else m
    n_top = int(max(modes))
    full = model.block_set(n_top)
    idx = np.asarray(modes, dtype=int) - 1
    bs = sc.BlockSet(full.mu[idx], full.lam_slow[idx], full.lam_fast[idx], full.A[idx],
                     full.L[idx], full.g[idx], full.gtilde[idx], 2)
    nodes, weights = composite_gl(0.0, t, _edges(bs, t), order)
    out = np.zeros((idx.size, 2, 2))
    for lo in range(0, nodes.size, 4096):
        sl = slice(lo, lo + 4096)
        w = _weights(model, bs, t, m, nodes[sl])
        out += np.einsum("q,qni,qnj->nij", weights[sl], w, w)
    return out


def worst_case_energy(model: mdl.SpectralModel, t: float, modes: Sequence[int],
                      variant: str = "state", m: int | None = None) -> float:
    """sup of energy(h)/||h|| over h in H_n (state) or over h = G_n a (G_a)."""
    E = energy_matrices(model, t, modes, m)
    if variant == "state":
        return math.sqrt(float(np.max(np.linalg.eigvalsh(E)[:, -1])))
    if variant == "G_a":
        g = model.block_set(int(max(modes))).g[np.asarray(modes) - 1]
        g = g / np.linalg.norm(g, axis=1, keepdims=True)
        return math.sqrt(float(np.max(np.einsum("ni,nij,nj->n", g, E, g))))
    raise ValueError("variant must be 'state' or 'G_a'")


def geometric_modes(n_max: int, count: int = 48) -> np.ndarray:
    return np.unique(np.round(np.geomspace(1, n_max, count)).astype(int))


def expected_slope(model: mdl.SpectralModel, variant: str) -> float:
    a, g = model.alpha, model.gamma
    if variant == "state" and g <= a:
        return -1.5
    return -(0.5 + g / a)


def energy_scaling(model: mdl.SpectralModel, t_grid: Sequence[float], variant: str = "state",
                   n_max: int | None = None, count: int = 48, m: int | None = None) -> sc.ExponentFit:
    """Fitted exponent of the worst-case energy over a geometric t-grid."""
    n_max = model.n_max if n_max is None else n_max
    modes = geometric_modes(n_max, count)
    samples = [(float(t), worst_case_energy(model, float(t), modes, variant, m)) for t in t_grid]
    return sc.fit_exponent(samples)


def minimum_energy(model: mdl.SpectralModel, t: float, h: np.ndarray, n: int,
                   cond_max: float = 1e12):
    """||Gamma_t h|| with Gamma_t = Q_t^{-1/2} e^{tA}; blocks with cond(Q_t) >= cond_max skipped."""
    q = mdl.q_t(model, t, n).blocks
    bs = model.block_set(n)
    cond = sc.cond_spd_2x2(q)
    use = cond < cond_max
    gam = sc.inv_sqrt_spd_2x2(q[use]) @ bs.semigroup(t)[use]
    v = np.einsum("nij,nj->ni", gam, np.asarray(h, dtype=float).reshape(n, 2)[use])
    return math.sqrt(float(np.sum(v * v))), np.flatnonzero(~use)
