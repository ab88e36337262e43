"""Block-diagonal spectral representation of the linear operators.

Every model handled by the package splits H into finite-dimensional,
mutually orthogonal blocks of size 1 or 2.  Inside a block we work in an
orthonormal coordinate system ("physical" coordinates): for the damped
family these are the coefficients of (Lambda^{1/2} y, y_t) against the
normalised eigenfunction of Lambda, for the heat family the Fourier
coefficient itself.  All H-norms are therefore plain Euclidean norms.

The eigen-coordinates {Phi+, Phi-} of a damped block are kept alongside
(``EigenBlock.basis``); ``block_semigroup`` reports the semigroup in those
coordinates, everything else works in physical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateSamples, ResonantEigenvalue

EPS_RES = 1e-9


@dataclass(frozen=True, eq=False)
class EigenBlock:
    """One 1x1 or 2x2 block of A with its eigen-data.

    For ``dim == 1`` the single (real, negative) eigenvalue sits in
    ``lambda_plus`` and ``lambda_minus`` is None.  For complex pairs
    ``b_plus``/``b_minus`` are complex; they are real otherwise.
    """

    index: int
    mu: float
    dim: int
    lambda_plus: complex
    lambda_minus: complex | None
    chi: float
    b_plus: complex
    b_minus: complex
    e_norm: float
    gram: np.ndarray
    zeta: float
    a_matrix: np.ndarray
    basis: np.ndarray
    psi: np.ndarray
    ltilde: np.ndarray
    g_col: np.ndarray
    gtilde_col: np.ndarray

    @property
    def is_complex(self) -> bool:
        return self.dim == 2 and abs(complex(self.lambda_plus).imag) > 0.0


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Per-block matrices of a block-diagonal operator on H_n."""

    blocks: np.ndarray  # (n, d, d)
    kind: str
    t: float | None = None

    def __len__(self) -> int:
        return self.blocks.shape[0]

    def to_dense(self) -> np.ndarray:
        n, d, _ = self.blocks.shape
        out = np.zeros((n * d, n * d))
        for k in range(n):
            out[k * d:(k + 1) * d, k * d:(k + 1) * d] = self.blocks[k]
        return out


@dataclass(frozen=True)
class ExponentFit:
    abscissae: tuple[float, ...]
    values: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float


# ---------------------------------------------------------------------------
# eigenvalues


def damped_eigenvalues(mu, rho: float, alpha: float, eps_res: float = EPS_RES):
    """Roots of l^2 + rho mu^alpha l + mu = 0, vectorised over ``mu``.

    Returns ``(lam_plus, lam_minus)`` as complex arrays.  In the real case the
    small root is recovered from Vieta (mu / large root) to avoid cancellation.
    """
    mu = np.asarray(mu, dtype=float)
    damp = rho * mu ** alpha
    disc = damp * damp - 4.0 * mu
    bad = np.abs(disc) <= eps_res * np.maximum(1.0, 4.0 * mu)
    if np.any(bad):
        where = np.flatnonzero(np.atleast_1d(bad))
        raise ResonantEigenvalue(
            f"rho^2 mu^(2 alpha) - 4 mu vanishes (mu={np.atleast_1d(mu)[where[0]]!r}, "
            f"rho={rho}, alpha={alpha}); double eigenvalue excluded"
        )
    root = np.sqrt(np.abs(disc))
    real = disc > 0
    big = -(damp + root) / 2.0
    lam_plus = np.where(real, mu / np.where(real, big, 1.0), -damp / 2.0) + 0j
    lam_plus = lam_plus + np.where(real, 0.0, root / 2.0) * 1j
    lam_minus = np.where(real, big + 0j, np.conj(lam_plus))
    return lam_plus, lam_minus


def build_damped_block(
    mu: float,
    rho: float,
    alpha: float,
    *,
    sigma: float = 0.0,
    gamma: float = 0.0,
    index: int = 1,
    chi: float | None = None,
    e_norm: float | None = None,
    eps_res: float = EPS_RES,
) -> EigenBlock:
    """Damped-wave block for one eigenvalue ``mu`` of Lambda.

    A = [[0, mu^1/2], [-mu^1/2, -rho mu^alpha]] in physical coordinates.
    By default ``e_norm = mu^-1/2`` and ``chi`` equalises the H-norms of
    Phi+ and Phi-; both can be overridden.
    """
    if not (mu > 0 and rho > 0):
        raise ValueError("mu and rho must be positive")
    lp, lm = damped_eigenvalues(mu, rho, alpha, eps_res)
    lp, lm = complex(lp), complex(lm)
    sq = np.sqrt(mu)
    if chi is None:
        chi = float(np.sqrt((mu + abs(lp) ** 2) / (mu + abs(lm) ** 2)))
    if e_norm is None:
        e_norm = mu ** -0.5
    a_matrix = np.array([[0.0, sq], [-sq, -rho * mu ** alpha]])
    if lp.imag != 0.0:
        basis = e_norm * np.array([[sq, 0.0], [lp.real, lp.imag]])
    else:
        basis = e_norm * np.array([[sq, chi * sq], [lp.real, chi * lm.real]])
    # G~ u = (0, u): solve (0, 1) = b+ Phi+ + b- Phi-
    b_plus = 1.0 / (e_norm * (lp - lm))
    b_minus = 1.0 / (chi * e_norm * (lm - lp))
    if lp.imag == 0.0:
        b_plus, b_minus = b_plus.real, b_minus.real
    psi = np.array([[-sq, -sq], [lp, lm]], dtype=complex)
    psi /= np.linalg.norm(psi, axis=0)
    zeta = mu ** -sigma
    return EigenBlock(
        index=index,
        mu=float(mu),
        dim=2,
        lambda_plus=lp,
        lambda_minus=lm,
        chi=float(chi),
        b_plus=b_plus,
        b_minus=b_minus,
        e_norm=float(e_norm),
        gram=basis.T @ basis,
        zeta=float(zeta),
        a_matrix=a_matrix,
        basis=basis,
        psi=psi,
        ltilde=np.diag([0.0, zeta]),
        g_col=np.array([0.0, mu ** -gamma]),
        gtilde_col=np.array([0.0, 1.0]),
    )


def build_heat_block(lam: float, beta: float, *, sigma: float = 0.0, gamma: float = 0.0,
                     index: int = 1) -> EigenBlock:
    """1x1 block of A = -(-Delta)^beta for the Laplacian eigenvalue ``lam``."""
    ev = -(lam ** beta)
    one = np.ones((1, 1))
    return EigenBlock(
        index=index,
        mu=float(lam),
        dim=1,
        lambda_plus=complex(ev),
        lambda_minus=None,
        chi=1.0,
        b_plus=1.0,
        b_minus=0.0,
        e_norm=1.0,
        gram=one.copy(),
        zeta=float(lam ** -sigma),
        a_matrix=np.array([[ev]]),
        basis=one.copy(),
        psi=one.astype(complex),
        ltilde=np.array([[lam ** -sigma]]),
        g_col=np.array([lam ** (-gamma / 2.0)]),
        gtilde_col=np.array([1.0]),
    )


def gram_matrix(block: EigenBlock) -> np.ndarray:
    """Gram matrix of the eigen-coordinate basis in the H inner product."""
    return block.basis.T @ block.basis


def block_semigroup(block: EigenBlock, t: float) -> np.ndarray:
    """e^{tA} on the block, in eigen-coordinates {Phi+, Phi-}.

    Complex pairs a +- ib use the real coordinates (Re Phi+, Im Phi+), in
    which the semigroup is e^{at} times a rotation by bt.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    lp = complex(block.lambda_plus)
    if block.dim == 1:
        return np.array([[np.exp(lp.real * t)]])
    if lp.imag != 0.0:
        a, b = lp.real, lp.imag
        c, s = np.cos(b * t), np.sin(b * t)
        return np.exp(a * t) * np.array([[c, s], [-s, c]])
    return np.diag([np.exp(lp.real * t), np.exp(complex(block.lambda_minus).real * t)])


# ---------------------------------------------------------------------------
# vectorised block families


def _divided_exp(l_slow, l_fast, t):
    """(e^{l_fast t} - e^{l_slow t}) / (l_fast - l_slow), cancellation-free.

    ``l_slow`` must have the larger real part so the expm1 argument has
    nonpositive real part.
    """
    dl = l_fast - l_slow
    z = dl * t
    small = np.abs(z) < 1e-300
    zs = np.where(small, 1.0, z)
    ratio = np.where(small, 1.0, np.expm1(zs) / zs)
    return np.exp(l_slow * t) * t * ratio


def _divided_phi(l_slow, l_fast, h):
    """Divided difference of f(l) = (e^{l h} - 1) / l between the two roots."""
    def f(lam):
        z = lam * h
        zs = np.where(np.abs(z) < 1e-300, 1.0, z)
        return h * np.where(np.abs(z) < 1e-300, 1.0, np.expm1(zs) / zs)

    dl = l_fast - l_slow
    return (f(l_fast) - f(l_slow)) / dl, f(l_slow)


@dataclass(frozen=True, eq=False)
class BlockSet:
    """Arrays describing blocks 1..n of a model, all in physical coordinates.

    ``lam_slow`` has the larger real part of the two eigenvalues (for 1x1
    blocks both arrays hold the single eigenvalue).
    """

    mu: np.ndarray
    lam_slow: np.ndarray
    lam_fast: np.ndarray
    A: np.ndarray        # (n, d, d)
    L: np.ndarray        # (n, d, d) block of L~
    g: np.ndarray        # (n, d)   column of G for the n-th noise mode
    gtilde: np.ndarray   # (n, d)   column of G~
    dim: int
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def size(self) -> int:
        return self.n * self.dim

    def restrict(self, n: int) -> "BlockSet":
        return BlockSet(self.mu[:n], self.lam_slow[:n], self.lam_fast[:n], self.A[:n],
                        self.L[:n], self.g[:n], self.gtilde[:n], self.dim)

    def semigroup(self, t) -> np.ndarray:
        """e^{tA} per block; ``t`` scalar or array (extra leading axes)."""
        t = np.asarray(t, dtype=float)[..., None]
        if self.dim == 1:
            return np.exp(self.lam_slow.real * t)[..., None, None]
        c1 = _divided_exp(self.lam_slow, self.lam_fast, t)
        c0 = np.exp(self.lam_slow * t) - self.lam_slow * c1
        eye = np.eye(2)
        return (c0.real[..., None, None] * eye + c1.real[..., None, None] * self.A)

    def phi1(self, h: float) -> np.ndarray:
        """int_0^h e^{sA} ds per block (closed form)."""
        if self.dim == 1:
            z = self.lam_slow.real * h
            zs = np.where(z == 0, 1.0, z)
            return np.where(z == 0, h, h * np.expm1(zs) / zs)[:, None, None]
        c1, f_slow = _divided_phi(self.lam_slow, self.lam_fast, h)
        c0 = f_slow - self.lam_slow * c1
        return c0.real[:, None, None] * np.eye(2) + c1.real[:, None, None] * self.A

    def a_semigroup_l(self, t) -> np.ndarray:
        """A e^{tA} L~ per block."""
        return self.A @ self.semigroup(t) @ self.L


def spectral_norm_2x2(m: np.ndarray) -> np.ndarray:
    """Largest singular value of a stack of (at most) 2x2 matrices."""
    if m.shape[-1] == 1:
        return np.abs(m[..., 0, 0])
    fro2 = np.sum(m * m, axis=(-2, -1))
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
    return np.sqrt(0.5 * (fro2 + disc))


def inv_sqrt_spd_2x2(q: np.ndarray) -> np.ndarray:
    """Q^{-1/2} for a stack of SPD 1x1 or 2x2 matrices (closed form)."""
    if q.shape[-1] == 1:
        return 1.0 / np.sqrt(q)
    det = q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]
    sdet = np.sqrt(det)
    tr = q[..., 0, 0] + q[..., 1, 1]
    root = (q + sdet[..., None, None] * np.eye(2)) / np.sqrt(tr + 2.0 * sdet)[..., None, None]
    # inverse of the 2x2 square root
    rdet = root[..., 0, 0] * root[..., 1, 1] - root[..., 0, 1] * root[..., 1, 0]
    inv = np.empty_like(root)
    inv[..., 0, 0] = root[..., 1, 1]
    inv[..., 1, 1] = root[..., 0, 0]
    inv[..., 0, 1] = -root[..., 0, 1]
    inv[..., 1, 0] = -root[..., 1, 0]
    return inv / rdet[..., None, None]


def cond_spd_2x2(q: np.ndarray) -> np.ndarray:
    if q.shape[-1] == 1:
        return np.ones(q.shape[:-2])
    tr = q[..., 0, 0] + q[..., 1, 1]
    det = q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    hi = 0.5 * (tr + disc)
    lo = det / hi
    with np.errstate(divide="ignore"):
        return np.where(lo > 0, hi / lo, np.inf)


def a_etA_Ltilde_norm(model, t: float, n_max: int) -> float:
    """||A e^{tA} L~|| on H_{n_max}: the largest per-block spectral norm.

    Physical coordinates are orthonormal, so the plain 2x2 spectral norm is
    the norm in H (equivalently, the Gram-weighted norm in eigen-coordinates).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    bs = model.block_set(n_max)
    return float(np.max(spectral_norm_2x2(bs.a_semigroup_l(t))))


def fit_exponent(samples: Sequence[tuple[float, float]]) -> ExponentFit:
    """Least-squares line through (log t, log value)."""
    if len(samples) < 4:
        raise DegenerateSamples(f"need at least 4 samples, got {len(samples)}")
    t = np.array([s[0] for s in samples], dtype=float)
    v = np.array([s[1] for s in samples], dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0) or np.any(t <= 0):
        raise DegenerateSamples("times and values must be positive and finite")
    d = np.diff(t)
    if not (np.all(d < 0) or np.all(d > 0)):
        raise DegenerateSamples("times must be strictly monotone")
    x, y = np.log(t), np.log(v)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    syy = np.sum((y - ym) ** 2)
    r2 = 1.0 if syy == 0 else float(max(0.0, 1.0 - np.sum(resid ** 2) / syy))
    return ExponentFit(tuple(t), tuple(v), slope, intercept, r2)
