"""Independent oracles: backward Kolmogorov fixed point on one block, the
integrated-by-parts mild representation, the deterministic counterexample
residual and a finite-difference solver for the 1-d heat family.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from . import engine as eng
from . import models as mdl
from .errors import NoContraction, PathLeftBox
from .rng import NoiseStream

GH_ORDER = 21


# ---------------------------------------------------------------------------
# Kolmogorov equation


@dataclass
class KolmogorovSolution:
    model: mdl.SpectralModel
    T: float
    axes: list                 # per-dimension grid coordinates
    times: np.ndarray
    values: np.ndarray         # (times, *grid, d)
    grads: np.ndarray          # (times, *grid, d, d): grads[..., i, j] = d U_i / d x_j
    iterations: int
    contraction: float
    sup_u: float
    sup_du: float
    drift_norm: float
    residual: float

    @property
    def m_t(self) -> float:
        return (self.sup_u + self.sup_du) / self.drift_norm if self.drift_norm else 0.0

    @property
    def box(self) -> np.ndarray:
        return np.array([[a[0], a[-1]] for a in self.axes])

    def _locate(self, x: np.ndarray):
        """Multilinear interpolation stencil for points x (..., d)."""
        idx, wts = [], []
        for j, ax in enumerate(self.axes):
            h = ax[1] - ax[0]
            p = np.clip((x[..., j] - ax[0]) / h, 0.0, ax.size - 1 - 1e-12)
            i0 = np.floor(p).astype(int)
            idx.append(i0)
            wts.append(p - i0)
        return idx, wts

    def _interp(self, arr: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
        """Linear in time, multilinear in space."""
        kf = np.clip(t / (self.times[1] - self.times[0]), 0, self.times.size - 1 - 1e-12)
        k0 = int(np.floor(kf))
        a = kf - k0
        idx, wts = self._locate(np.atleast_2d(x))
        out = 0.0
        for corner in itertools.product((0, 1), repeat=len(self.axes)):
            w = np.ones(idx[0].shape)
            sel = []
            for j, c in enumerate(corner):
                w = w * (wts[j] if c else 1 - wts[j])
                sel.append(idx[j] + c)
            v = (1 - a) * arr[(k0, *sel)] + a * arr[(min(k0 + 1, self.times.size - 1), *sel)]
            out = out + w.reshape(w.shape + (1,) * (v.ndim - w.ndim)) * v
        return out

    def u(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._interp(self.values, t, x)

    def du(self, t: float, x: np.ndarray) -> np.ndarray:
        return self._interp(self.grads, t, x)

    def contains(self, x: np.ndarray) -> bool:
        b = self.box
        return bool(np.all((x >= b[:, 0]) & (x <= b[:, 1])))


def _ou_matrix(model: mdl.SpectralModel, axes, dt: float) -> scipy.sparse.csr_matrix:
    """Sparse R(dt): f at nodes -> E f(e^{dt A} x + Z), Z ~ N(0, Q_dt), via Gauss-Hermite."""
    bs = model.block_set(1)
    d = bs.dim
    S = bs.semigroup(dt)[0]
    q = mdl.q_t(model, dt, 1).blocks[0]
    L = eng._chol_psd(q[None])[0]
    z, w = np.polynomial.hermite_e.hermegauss(GH_ORDER)
    w = w / w.sum()
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    zz = np.stack(np.meshgrid(*([z] * d), indexing="ij"), axis=-1).reshape(-1, d)
    ww = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    pts = (grid @ S.T)[:, None, :] + (zz @ L.T)[None, :, :]     # (N, q, d)
    shape = [a.size for a in axes]
    idx, wts = [], []
    for j, ax in enumerate(axes):
        h = ax[1] - ax[0]
        p = np.clip((pts[..., j] - ax[0]) / h, 0.0, ax.size - 1 - 1e-12)
        i0 = np.floor(p).astype(int)
        idx.append(i0)
        wts.append(p - i0)
    rows, cols, vals = [], [], []
    base = np.arange(grid.shape[0])[:, None] * np.ones((1, zz.shape[0]), dtype=int)
    for corner in itertools.product((0, 1), repeat=d):
        wc = ww[None, :].copy()
        flat = np.zeros_like(idx[0])
        for j, c in enumerate(corner):
            wc = wc * (wts[j] if c else 1 - wts[j])
            flat = flat * shape[j] + (idx[j] + c)
        rows.append(base.ravel())
        cols.append(flat.ravel())
        vals.append(wc.ravel())
    n = grid.shape[0]
    return scipy.sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(n, n))


def _gradient(values: np.ndarray, axes) -> np.ndarray:
    """Centered differences; values (..., *grid, d) -> (..., *grid, d, d)."""
    d = len(axes)
    lead = values.ndim - d - 1
    parts = [np.gradient(values, axes[j], axis=lead + j) for j in range(d)]
    return np.stack(parts, axis=-1)


def solve_kolmogorov_picard(model: mdl.SpectralModel, drift: mdl.DriftSpec, T: float, *,
                            half_width: float = 3.0, points: int = 41, steps: int = 20,
                            tol: float = 1e-8, max_iter: int = 100,
                            box: np.ndarray | None = None) -> KolmogorovSolution:
    """Fixed point of U(t) = int_t^T R(r-t)(DU(r) L~B + B) dr on one block.

    Time: trapezoid on ``steps`` intervals, exact semigroup between nodes.
    Space: tensor grid on a box (default [-w, w]^d), multilinear interpolation.
    """
    one = model.with_(n_max=1)
    bs = one.block_set(1)
    d = bs.dim
    if box is None:
        box = np.array([[-half_width, half_width]] * d)
    axes = [np.linspace(box[j, 0], box[j, 1], points) for j in range(d)]
    dt = T / steps
    R = _ou_matrix(one, axes, dt)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)        # (*grid, d)
    b = drift.evaluate(one, grid[..., None, :])[..., 0]                 # (*grid,)
    B = b[..., None] * bs.gtilde[0]                                      # B = G~ b
    LB = B @ bs.L[0].T                                                   # L~ B
    N = grid[..., 0].size
    shape = grid.shape[:-1]

    def apply_map(U):
        """One Picard sweep: U (steps+1, *grid, d) -> new U."""
        DU = _gradient(U, axes)
        F = np.einsum("...ij,...j->...i", DU, np.broadcast_to(LB, DU.shape[:-1])) + B
        F = F.reshape(steps + 1, N, d)
        out = np.zeros((steps + 1, N, d))
        for i in range(steps - 1, -1, -1):
            out[i] = R @ (out[i + 1] + 0.5 * dt * F[i + 1]) + 0.5 * dt * F[i]
        return out.reshape((steps + 1,) + shape + (d,))

    U = np.zeros((steps + 1,) + shape + (d,))
    diffs = []
    it = 0
    contraction = 0.0
    for it in range(1, max_iter + 1):
        new = apply_map(U)
        diff = float(np.max(np.abs(new - U)))
        U = new
        diffs.append(diff)
        if len(diffs) >= 3 and diffs[-2] > 1e3 * tol:
            contraction = max(contraction, diffs[-1] / diffs[-2])
            if diffs[-1] / diffs[-2] >= 1.0:
                raise NoContraction(
                    f"Picard ratio {diffs[-1] / diffs[-2]:.3f} >= 1 at T={T}; halve T and retry")
        if diff < tol:
            break
    residual = float(np.max(np.abs(apply_map(U) - U)))
    grads = _gradient(U, axes)
    norm = float(drift.mode_norms(1)[0])
    return KolmogorovSolution(
        model=one, T=T, axes=axes, times=np.linspace(0, T, steps + 1), values=U, grads=grads,
        iterations=it, contraction=contraction, sup_u=float(np.max(np.abs(U))),
        sup_du=float(np.max(np.abs(grads))), drift_norm=norm, residual=residual,
    )


def m_t_sequence(model, drift, t_values, **kw) -> list[tuple[float, float]]:
    return [(T, solve_kolmogorov_picard(model, drift, T, **kw).m_t) for T in t_values]


def linear_heat_oracle(lam: float, beta: float, sigma: float, L: float, T: float, t: float) -> float:
    """Slope a(t) of U(t, x) = a(t) x for B(x) = L x on one heat mode."""
    c = -(lam ** beta) + lam ** -sigma * L
    return L / c * math.expm1(c * (T - t))


# ---------------------------------------------------------------------------
# transformed representation


def check_transformed_representation(model: mdl.SpectralModel, drift: mdl.DriftSpec, x0,
                                     T: float, steps: int, seed: int,
                                     kolmogorov: KolmogorovSolution,
                                     return_terms: bool = False):
    """Max over grid times of |X(t) - RHS(t)| for the integrated-by-parts representation.

    One block, so X_n = X and the B(X) - B(X_n) terms vanish.  Stochastic
    integrals are left-point sums with the same increments that drive the path.
    """
    one = model.with_(n_max=1)
    bs = one.block_set(1)
    h = T / steps
    st = eng.Stepper(one, 1, h)
    stream = NoiseStream(seed, steps)
    x = eng._as_state(one, x0, 1)[0]
    trajs = np.zeros(1, dtype=np.int64)
    path = [x.copy()]
    dws = []
    cur = x[None, None, :]
    for k in range(steps):
        xi, dw = st.noise(stream, k, trajs, "increments")
        cur = st.step(cur, drift, xi)
        path.append(cur[0, 0].copy())
        dws.append(float(dw[0, 0]))
    path = np.array(path)
    if not all(kolmogorov.contains(p) for p in path):
        raise PathLeftBox("trajectory left the Kolmogorov grid box")
    A, Lt, g = bs.A[0], bs.L[0], bs.g[0]
    times = np.arange(steps + 1) * h
    Us = np.array([kolmogorov.u(t, p)[0] for t, p in zip(times, path)])       # (K+1, d)
    DUs = np.array([kolmogorov.du(t, p)[0] for t, p in zip(times, path)])     # (K+1, d, d)
    S = bs.semigroup(times)[:, 0]                                              # S(t_k)
    u0 = Us[0]
    dev = np.zeros(steps + 1)
    terms = []
    for k in range(steps + 1):
        lag = S[k - np.arange(k)] if k else np.zeros((0, bs.dim, bs.dim))       # S(t_k - t_j)
        t1 = S[k] @ x
        t2 = -Lt @ Us[k]
        t3 = S[k] @ (Lt @ u0)
        t4 = -A @ np.sum(np.einsum("jab,bc,jc->ja", lag, Lt, Us[:k]), axis=0) * h if k else 0 * t1
        dw = np.asarray(dws[:k])
        t5 = np.sum(np.einsum("jab,b->ja", lag, g) * dw[:, None], axis=0) if k else 0 * t1
        t6 = (np.sum(np.einsum("jab,bc,jcd,d->ja", lag, Lt, DUs[:k], g) * dw[:, None], axis=0)
              if k else 0 * t1)
        rhs = t1 + t2 + t3 + t4 + t5 + t6
        dev[k] = float(np.linalg.norm(path[k] - rhs))
        terms.append((t1, t2, t3, t4, t5, t6))
    if return_terms:
        return float(np.max(dev)), dev, terms
    return float(np.max(dev))


def strong_error_estimate(model: mdl.SpectralModel, drift: mdl.DriftSpec, x0, T: float,
                          steps: int, seed: int) -> float:
    """sup_k |X_h(t_k) - X_{h/2}(t_k)| for one block on nested increments."""
    one = model.with_(n_max=1)
    h = T / steps
    stream = NoiseStream(seed, 2 * steps)
    coarse = eng.Stepper(one, 1, h, h / 2)
    fine = eng.Stepper(one, 1, h / 2)
    trajs = np.zeros(1, dtype=np.int64)
    xc = eng._as_state(one, x0, 1)[0][None, None, :]
    xf = xc.copy()
    worst = 0.0
    for k in range(steps):
        xc = coarse.step(xc, drift, coarse.noise(stream, k, trajs, "increments")[0])
        for j in (2 * k, 2 * k + 1):
            xf = fine.step(xf, drift, fine.noise(stream, j, trajs, "increments")[0])
        worst = max(worst, float(np.linalg.norm(xc - xf)))
    return worst


# ---------------------------------------------------------------------------
# counterexample


@dataclass
class ResidualReport:
    max_residual: float
    terms: dict = field(default_factory=dict)


def counterexample_residual(n_tau: int = 512, n_xi: int = 512, solution: str = "y2") -> ResidualReport:
    """y_tt - y_xixi + (-d^2)^{7/12} y_t - c(xi, y) on a grid of [0,1] x [0,pi].

    Both candidate solutions live on the single mode sin(2 xi), where the
    fractional operator is multiplication by 4^{7/12}; time derivatives are exact.
    """
    tau = np.linspace(0.0, 1.0, n_tau)[:, None]
    xi = np.linspace(0.0, math.pi, n_xi)[None, :]
    s = np.sin(2.0 * xi)
    if solution == "y1":
        y = np.zeros((n_tau, n_xi))
        y_tt = y_xx = frac = np.zeros_like(y)
    elif solution == "y2":
        y = tau ** 8 * s
        y_tt = 56.0 * tau ** 6 * s
        y_xx = -4.0 * y
        frac = 4.0 ** (7.0 / 12.0) * 8.0 * tau ** 7 * s
    else:
        raise ValueError("solution must be 'y1' or 'y2'")
    c = mdl.counterexample_c(xi, y)
    res = y_tt - y_xx + frac - c
    terms = {
        "y_tt": float(np.max(np.abs(y_tt))),
        "y_xixi": float(np.max(np.abs(y_xx))),
        "fractional_damping": float(np.max(np.abs(frac))),
        "c": float(np.max(np.abs(c))),
        "max_abs_y": float(np.max(np.abs(y))),
        "initial_y": float(np.max(np.abs(y[0]))),
        "initial_y_tau": 0.0 if solution == "y1" else float(np.max(np.abs(8.0 * tau[0] ** 7 * s))),
    }
    return ResidualReport(float(np.max(np.abs(res))), terms)


# ---------------------------------------------------------------------------
# finite-difference heat oracle


@dataclass
class FDRow:
    points: int
    steps: int
    discrepancy: float


def _fd_operators(points: int, beta: float, sigma: float, h: float):
    dx = math.pi / (points + 1)
    lap = (np.diag(np.full(points, 2.0)) - np.diag(np.ones(points - 1), 1)
           - np.diag(np.ones(points - 1), -1)) / dx ** 2
    w, v = np.linalg.eigh(lap)
    A = -(v * w ** beta) @ v.T
    Lt = (v * w ** -sigma) @ v.T
    E = scipy.linalg.expm(h * A)
    # phi1 = A^{-1}(E - I), A is symmetric negative definite
    phi1 = np.linalg.solve(A, E - np.eye(points))
    return E, phi1, Lt


def heat_fd_oracle(model: mdl.SpectralModel, pointwise, x0_modes, T: float,
                   grid_sizes=(15, 31, 63), steps_per_point: int = 4, seed: int = 0,
                   fd_seed: int | None = None) -> list[FDRow]:
    """Physical-space FD solution vs the spectral engine on the same noise.

    ``pointwise`` is a Lipschitz c(xi, u); ``x0_modes`` the sine coefficients of
    the initial datum.  The FD noise is the spectral mode increments mapped to
    the grid; ``fd_seed`` different from ``seed`` gives the negative control.
    """
    if not model.is_heat or model.m != 1:
        raise ValueError("FD oracle supports the 1-d heat family only")
    fd_seed = seed if fd_seed is None else fd_seed
    rows = []
    for M in grid_sizes:
        n = M
        spec = model.with_(n_max=n, law="lattice")
        steps = steps_per_point * (M + 1)
        h = T / steps
        drift = mdl.DriftSpec("nemytskii", theta=1.0, pointwise=pointwise, grid_factor=1)
        st = eng.Stepper(spec, n, h)
        x0 = np.zeros(n)
        k0 = min(len(x0_modes), n)
        x0[:k0] = np.asarray(x0_modes, dtype=float)[:k0]
        xs = x0[None, :, None].copy()
        xi_grid, u = mdl.synthesize(x0, M)
        E, phi1, Lt = _fd_operators(M, spec.beta, spec.sigma, h)
        forcing = phi1 @ Lt
        modes = np.arange(1, n + 1)
        basis = math.sqrt(2 / math.pi) * np.sin(np.outer(xi_grid, modes))   # (M, n)
        g = spec.block_set(n).g[:, 0]
        s_spec = NoiseStream(seed, steps)
        s_fd = NoiseStream(fd_seed, steps)
        tr = np.zeros(1, dtype=np.int64)
        worst = 0.0
        for k in range(steps):
            xi_s, _ = st.noise(s_spec, k, tr, "increments")
            _, dw = st.noise(s_fd, k, tr, "increments")
            xs = st.step(xs, drift, xi_s)
            u = E @ u + forcing @ pointwise(xi_grid, u) + E @ (basis @ (g * dw[0]))
            _, y = mdl.synthesize(xs[0, :, 0], M)
            worst = max(worst, math.sqrt(math.pi / (M + 1) * float(np.sum((u - y) ** 2))))
        rows.append(FDRow(M, steps, worst))
    return rows
