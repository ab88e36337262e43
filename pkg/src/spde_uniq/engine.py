"""Finite-dimensional Galerkin SDEs: stochastic convolution, exponential Euler,
ensembles, coupled paths and truncation-convergence diagnostics.

States are arrays of shape (trajectories, n, d): block index n, block
coordinate d (physical, orthonormal coordinates; see ``spectral_core``).

Noise modes
-----------
``"ou"``          exact Ornstein-Uhlenbeck increments: chol(Q_h) z per block.
``"increments"``  e^{hA} g dW with dW the Brownian increment of the mode
                  (left-point rule; this is what the transformed
                  representation and the FD oracle consume).
Both read keyed normals from ``NoiseStream`` on the finest grid, so coarse
runs reuse sums of fine draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import models as mdl
from .errors import NonFiniteState
from .rng import NoiseStream


@dataclass
class GalerkinState:
    n: int
    coeffs: np.ndarray   # (n, d)
    time: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[0] != self.n:
            raise ValueError("coefficient array does not match truncation")
        if not np.all(np.isfinite(self.coeffs)):
            raise NonFiniteState("non-finite coordinates")

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()


@dataclass
class PathEnsemble:
    model: mdl.SpectralModel
    times: np.ndarray
    states: np.ndarray   # (trajectories, times, n, d)
    seed: int
    scheme: str
    noise: str

    @property
    def trajectories(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> list[GalerkinState]:
        n = self.states.shape[2]
        return [GalerkinState(n, self.states[i, k], float(t)) for k, t in enumerate(self.times)]


@dataclass
class CouplingDiagnostics:
    times: np.ndarray
    delta: np.ndarray          # E||X1(t) - X2(t)||^2
    delta_se: np.ndarray
    sup_delta: float
    e_sup: float               # E sup_t ||X1 - X2||^2
    e_sup_se: float
    pi_moment: float | None    # sup_t E||X1 - X2||^(2 theta)
    initial_gap2: float
    lipschitz_ratio: float
    sup_ratio: float
    hilbert_schmidt: bool


# ---------------------------------------------------------------------------
# compensated accumulation


class Accumulator:
    """Neumaier-compensated running sums over arrays (fixed add order)."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)
        self.count = 0

    def add(self, x: np.ndarray, count: int):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t
        self.count += count

    @property
    def value(self) -> np.ndarray:
        return self.s + self.c


def mean_se(sum1: np.ndarray, sum2: np.ndarray, count: int):
    mean = sum1 / count
    var = np.maximum(sum2 / count - mean * mean, 0.0) * count / max(count - 1, 1)
    return mean, np.sqrt(var / count)


# ---------------------------------------------------------------------------
# stepping


def _chol_psd(q: np.ndarray) -> np.ndarray:
    """Cholesky-like factor of a stack of symmetric PSD matrices (eigen-clipped)."""
    w, v = np.linalg.eigh(q)
    tr = np.trace(q, axis1=-2, axis2=-1)
    w = np.where(w < 1e-14 * tr[..., None], np.maximum(w, 0.0), w)
    w = np.where(w < 0, 0.0, w)
    return v * np.sqrt(w)[..., None, :]


class Stepper:
    """Precomputed per-block factors for one (model, n, h)."""

    def __init__(self, model: mdl.SpectralModel, n: int, h: float, fine_h: float | None = None):
        self.model = model
        self.n = n
        self.h = h
        bs = model.block_set(n)
        self.bs = bs
        self.d = bs.dim
        self.S = bs.semigroup(h)                                        # (n, d, d)
        self.forcing = np.einsum("nij,nj->ni", bs.phi1(h) @ bs.L, bs.gtilde)  # (n, d)
        fine_h = h if fine_h is None else fine_h
        self.k = int(round(h / fine_h))
        self.fine_h = fine_h
        self.S_fine = bs.semigroup(fine_h)
        q = mdl.q_t(model, fine_h, n).blocks
        self.chol = _chol_psd(q)
        self.Sg = np.einsum("nij,nj->ni", self.S, bs.g)

    def drift_term(self, drift: mdl.DriftSpec, x: np.ndarray) -> np.ndarray:
        if drift.kind == "zero":
            return 0.0
        b = drift.evaluate(self.model, x)            # (..., n)
        return b[..., None] * self.forcing

    def step(self, x: np.ndarray, drift: mdl.DriftSpec, noise: np.ndarray | float) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.einsum("nij,...nj->...ni", self.S, x) + self.drift_term(drift, x) + noise
        if not np.all(np.isfinite(out)):
            raise NonFiniteState("state overflowed during exponential Euler step")
        return out

    def noise(self, stream: NoiseStream, step: int, trajs: np.ndarray, mode: str):
        """Noise for coarse step ``step`` (trajs, n, d) and the Brownian increments (trajs, n)."""
        modes = np.arange(1, self.n + 1)
        xi = np.zeros((trajs.size, self.n, self.d))
        dw = np.zeros((trajs.size, self.n))
        for j in range(self.k):
            z = stream.normals(step * self.k + j, modes, trajs)
            dw += math.sqrt(self.fine_h) * z[..., 0]
            if mode == "ou":
                inc = np.einsum("nij,...nj->...ni", self.chol, z[..., : self.d])
                xi = np.einsum("nij,...nj->...ni", self.S_fine, xi) + inc
        if mode == "increments":
            xi = dw[..., None] * self.Sg
        return xi, dw


def exponential_euler_step(model: mdl.SpectralModel, state: GalerkinState, drift: mdl.DriftSpec,
                           noise_slice: np.ndarray | None, h: float) -> GalerkinState:
    """X <- e^{hA}X + (int_0^h e^{sA} ds) L~ G~ B~(X) + noise."""
    if h <= 0:
        raise ValueError("h must be positive")
    st = Stepper(model, state.n, h)
    noise = 0.0 if noise_slice is None else np.asarray(noise_slice, dtype=float)
    out = st.step(state.coeffs, drift, noise)
    return GalerkinState(state.n, out, state.time + h)


def _as_state(model, x0, n) -> np.ndarray:
    d = model.dim
    if x0 is None:
        return np.zeros((n, d))
    x = np.asarray(x0, dtype=float)
    if x.ndim == 1:
        full = np.zeros(n * d)
        k = min(x.size, n * d)
        full[:k] = x[:k]
        return full.reshape(n, d)
    out = np.zeros((n, d))
    k = min(x.shape[0], n)
    out[:k] = x[:k]
    return out


def _chunks(trajectories: int, chunk: int):
    return [np.arange(s, min(s + chunk, trajectories), dtype=np.int64)
            for s in range(0, trajectories, chunk)]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _run(stepper: Stepper, drift, starts: Sequence[np.ndarray], stream: NoiseStream, steps: int,
         trajs: np.ndarray, mode: str, on_record, record_every: int = 1):
    """Advance several initial data under common noise, calling on_record(k, xs, dw)."""
    xs = [np.broadcast_to(s, (trajs.size,) + s.shape).copy() for s in starts]
    on_record(0, xs, None)
    for k in range(steps):
        xi, dw = stepper.noise(stream, k, trajs, mode) if stream is not None else (0.0, None)
        xs = [stepper.step(x, drift, xi) for x in xs]
        if (k + 1) % record_every == 0 or k + 1 == steps:
            on_record(k + 1, xs, dw)
    return xs


def _setup(model, T, steps, fine_steps, n):
    n = model.n_max if n is None else n
    fine_steps = steps if fine_steps is None else fine_steps
    if steps < 1 or fine_steps % steps:
        raise ValueError("steps must divide fine_steps")
    h = T / steps
    return n, fine_steps, Stepper(model, n, h, T / fine_steps)


def simulate_ensemble(model: mdl.SpectralModel, drift: mdl.DriftSpec, x0, T: float, steps: int,
                      trajectories: int, seed: int, *, n: int | None = None, noise: str = "ou",
                      fine_steps: int | None = None, record_every: int = 1, chunk: int = 2048,
                      workers: int = 1) -> PathEnsemble:
    """Monte Carlo ensemble of the truncated equation; bitwise reproducible."""
    if trajectories < 1:
        raise ValueError("trajectories must be >= 1")
    n, fine_steps, st = _setup(model, T, steps, fine_steps, n)
    stream = NoiseStream(seed, fine_steps)
    x0 = _as_state(model, x0, n)
    rec_idx = [k for k in range(steps + 1) if k % record_every == 0 or k == steps]

    def work(trajs):
        buf = np.empty((trajs.size, len(rec_idx), n, st.d))
        pos = {k: i for i, k in enumerate(rec_idx)}

        def rec(k, xs, _):
            buf[:, pos[k]] = xs[0]
        _run(st, drift, [x0], stream, steps, trajs, noise, rec, record_every)
        return buf

    parts = _map(work, _chunks(trajectories, chunk), workers)
    times = np.array(rec_idx, dtype=float) * (T / steps)
    return PathEnsemble(model, times, np.concatenate(parts, axis=0), seed, "exponential-euler", noise)


def sample_convolution(model: mdl.SpectralModel, noise: NoiseStream, grid: np.ndarray,
                       trajectories: int = 1, n: int | None = None) -> np.ndarray:
    """W_{A,n} on a uniform grid, exact in law; returns (trajectories, len(grid), n, d)."""
    grid = np.asarray(grid, dtype=float)
    steps = grid.size - 1
    h = np.diff(grid)
    if steps < 1 or not np.allclose(h, h[0], rtol=1e-12):
        raise ValueError("grid must be uniform with at least two points")
    n = model.n_max if n is None else n
    st = Stepper(model, n, float(h[0]), float(h[0]) * steps / noise.fine_steps)
    trajs = np.arange(trajectories, dtype=np.int64)
    out = np.empty((trajectories, steps + 1, n, st.d))

    def rec(k, xs, _):
        out[:, k] = xs[0]
    _run(st, mdl.DriftSpec("zero"), [np.zeros((n, st.d))], noise, steps, trajs, "ou", rec)
    return out


@dataclass
class MomentTable:
    times: np.ndarray
    mean: np.ndarray     # (times, n, e)  e = 1 (heat) or 3 (Q11, Q12, Q22)
    se: np.ndarray
    count: int


def _products(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return x * x
    return np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1], x[..., 1] ** 2], axis=-1)


def convolution_moments(model: mdl.SpectralModel, T: float, steps: int, trajectories: int,
                        seed: int, *, n: int | None = None, chunk: int = 8192,
                        workers: int = 1) -> MomentTable:
    """Empirical second moments of W_{A,n} at each grid time with standard errors."""
    n, fine, st = _setup(model, T, steps, None, n)
    stream = NoiseStream(seed, fine)
    e = 1 if st.d == 1 else 3

    def work(trajs):
        s1 = np.zeros((steps + 1, n, e))
        s2 = np.zeros_like(s1)

        def rec(k, xs, _):
            p = _products(xs[0])
            s1[k] = p.sum(axis=0)
            s2[k] = (p * p).sum(axis=0)
        _run(st, mdl.DriftSpec("zero"), [np.zeros((n, st.d))], stream, steps, trajs, "ou", rec)
        return s1, s2

    a1, a2 = Accumulator((steps + 1, n, e)), Accumulator((steps + 1, n, e))
    for (s1, s2), tr in zip(_map(work, _chunks(trajectories, chunk), workers),
                            _chunks(trajectories, chunk)):
        a1.add(s1, tr.size)
        a2.add(s2, 0)
    mean, se = mean_se(a1.value, a2.value, trajectories)
    return MomentTable(np.linspace(0, T, steps + 1), mean, se, trajectories)


def couple_and_measure(model: mdl.SpectralModel, drift: mdl.DriftSpec, x1, x2, T: float,
                       steps: int, trajectories: int, seed: int, *, n: int | None = None,
                       noise: str = "ou", chunk: int = 2048, workers: int = 1) -> CouplingDiagnostics:
    """Two solutions driven by the same noise; Delta(t) = E||X1(t) - X2(t)||^2."""
    n, fine, st = _setup(model, T, steps, None, n)
    stream = NoiseStream(seed, fine)
    a, b = _as_state(model, x1, n), _as_state(model, x2, n)
    gap2 = float(np.sum((a - b) ** 2))
    theta = drift.theta

    def work(trajs):
        s1 = np.zeros(steps + 1)
        s2 = np.zeros(steps + 1)
        sp = np.zeros(steps + 1)
        run_sup = np.zeros(trajs.size)

        def rec(k, xs, _):
            d2 = np.sum((xs[0] - xs[1]) ** 2, axis=(-2, -1))
            s1[k] = d2.sum()
            s2[k] = (d2 * d2).sum()
            sp[k] = (d2 ** theta).sum()
            np.maximum(run_sup, d2, out=run_sup)
        _run(st, drift, [a, b], stream, steps, trajs, noise, rec)
        return s1, s2, sp, run_sup.sum(), (run_sup ** 2).sum()

    acc = [Accumulator(steps + 1) for _ in range(3)]
    sup_acc = Accumulator(2)
    for res, tr in zip(_map(work, _chunks(trajectories, chunk), workers),
                       _chunks(trajectories, chunk)):
        for j in range(3):
            acc[j].add(res[j], tr.size if j == 0 else 0)
        sup_acc.add(np.array([res[3], res[4]]), tr.size)
    delta, se = mean_se(acc[0].value, acc[1].value, trajectories)
    e_sup, e_sup_se = mean_se(sup_acc.value[0], sup_acc.value[1], trajectories)
    pi = float(np.max(acc[2].value / trajectories))
    sup_delta = float(np.max(delta))
    ratio = sup_delta / gap2 if gap2 > 0 else 0.0
    return CouplingDiagnostics(
        times=np.linspace(0, T, steps + 1), delta=delta, delta_se=se, sup_delta=sup_delta,
        e_sup=float(e_sup), e_sup_se=float(e_sup_se), pi_moment=pi, initial_gap2=gap2,
        lipschitz_ratio=ratio, sup_ratio=float(e_sup) / gap2 if gap2 > 0 else 0.0,
        hilbert_schmidt=model.noise_hilbert_schmidt,
    )


@dataclass
class ConvergenceRow:
    n: int
    sup_mean_err: float
    sup_mean_se: float
    mean_sup_err: float


def galerkin_convergence(model: mdl.SpectralModel, drift: mdl.DriftSpec, x0, T: float,
                         n_list: Sequence[int], n_ref: int, trajectories: int, seed: int, *,
                         steps: int = 100, noise: str = "ou", chunk: int = 1024,
                         workers: int = 1) -> list[ConvergenceRow]:
    """sup_t E||X_n - X_{n_ref}||^2 for each n, all runs sharing the keyed noise.

    X_n solves the equation truncated at n (drift B_n(X_n)); the mode-keyed
    stream makes the first n modes of the noise identical across truncations.
    """
    if n_ref <= max(n_list):
        raise ValueError("n_ref must exceed every n in n_list")
    stream = NoiseStream(seed, steps)
    h = T / steps
    ref_st = Stepper(model, n_ref, h)
    steppers = {n: Stepper(model, n, h) for n in n_list}
    x_ref = _as_state(model, x0, n_ref)

    def work(trajs):
        xr = np.broadcast_to(x_ref, (trajs.size,) + x_ref.shape).copy()
        xs = {n: xr[:, :n].copy() for n in n_list}
        s1 = {n: np.zeros(steps + 1) for n in n_list}
        s2 = {n: np.zeros(steps + 1) for n in n_list}
        msup = {n: np.zeros(trajs.size) for n in n_list}

        def record(k):
            for n in n_list:
                e = np.sum((xs[n] - xr[:, :n]) ** 2, axis=(-2, -1)) + np.sum(xr[:, n:] ** 2, axis=(-2, -1))
                s1[n][k] = e.sum()
                s2[n][k] = (e * e).sum()
                np.maximum(msup[n], e, out=msup[n])
        record(0)
        for k in range(steps):
            xi, _ = ref_st.noise(stream, k, trajs, noise)
            xr = ref_st.step(xr, drift, xi)
            for n in n_list:
                xs[n] = steppers[n].step(xs[n], drift, xi[:, :n])
            record(k + 1)
        return s1, s2, {n: msup[n].sum() for n in n_list}

    acc1 = {n: Accumulator(steps + 1) for n in n_list}
    acc2 = {n: Accumulator(steps + 1) for n in n_list}
    accs = {n: Accumulator(()) for n in n_list}
    for (s1, s2, ms), tr in zip(_map(work, _chunks(trajectories, chunk), workers),
                                _chunks(trajectories, chunk)):
        for n in n_list:
            acc1[n].add(s1[n], tr.size)
            acc2[n].add(s2[n], 0)
            accs[n].add(np.asarray(ms[n]), tr.size)
    rows = []
    for n in n_list:
        mean, se = mean_se(acc1[n].value, acc2[n].value, trajectories)
        k = int(np.argmax(mean))
        rows.append(ConvergenceRow(n, float(mean[k]), float(se[k]),
                                   float(accs[n].value) / trajectories))
    return rows
