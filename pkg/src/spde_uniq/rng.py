"""Counter-based Gaussian noise (Philox4x32-10, vectorised in numpy).

Each draw is addressed by (seed, trajectory, mode, step), so increments do
not depend on evaluation order, chunking or thread count.  numpy's own
Philox bit generator is sequential per instance; addressing single counters
through it would need one generator object per key, hence the small
vectorised implementation here.
"""

from __future__ import annotations

import numpy as np

M0 = np.uint64(0xD2511F53)
M1 = np.uint64(0xCD9E8D57)
W0 = np.uint32(0x9E3779B9)
W1 = np.uint32(0xBB67AE85)
MASK = np.uint64(0xFFFFFFFF)
ROUNDS = 10


def philox4x32(ctr: np.ndarray, key: np.ndarray, rounds: int = ROUNDS) -> np.ndarray:
    """Philox4x32 block function.

    ``ctr`` has shape (..., 4) uint32, ``key`` shape (2,) or broadcastable
    (..., 2) uint32.  Returns (..., 4) uint32.
    """
    c = [np.asarray(ctr[..., i], dtype=np.uint32) for i in range(4)]
    key = np.asarray(key, dtype=np.uint32)
    k0 = np.broadcast_to(key[..., 0], c[0].shape).astype(np.uint32)
    k1 = np.broadcast_to(key[..., 1], c[0].shape).astype(np.uint32)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            p0 = M0 * c[0].astype(np.uint64)
            p1 = M1 * c[2].astype(np.uint64)
            hi0 = (p0 >> np.uint64(32)).astype(np.uint32)
            lo0 = (p0 & MASK).astype(np.uint32)
            hi1 = (p1 >> np.uint64(32)).astype(np.uint32)
            lo1 = (p1 & MASK).astype(np.uint32)
            c = [hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0]
            if r < rounds - 1:
                k0 = k0 + W0
                k1 = k1 + W1
    return np.stack(c, axis=-1)


def _split64(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.uint64)
    return (x & MASK).astype(np.uint32), (x >> np.uint64(32)).astype(np.uint32)


def gaussian_pairs(seed: int, step, mode, traj) -> np.ndarray:
    """Two independent standard normals per (step, mode, traj) key.

    Arguments broadcast; the result has the broadcast shape plus a trailing
    axis of length 2.  Uses two 53-bit uniforms and Box-Muller.
    """
    step, mode, traj = np.broadcast_arrays(np.asarray(step, dtype=np.uint64),
                                           np.asarray(mode, dtype=np.uint64),
                                           np.asarray(traj, dtype=np.uint64))
    t_lo, t_hi = _split64(traj)
    ctr = np.stack([step.astype(np.uint32), mode.astype(np.uint32), t_lo, t_hi], axis=-1)
    s_lo, s_hi = _split64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    out = philox4x32(ctr, np.array([s_lo, s_hi], dtype=np.uint32)).astype(np.uint64)
    a = (out[..., 0] << np.uint64(21)) ^ (out[..., 1] >> np.uint64(11))
    b = (out[..., 2] << np.uint64(21)) ^ (out[..., 3] >> np.uint64(11))
    a &= np.uint64((1 << 53) - 1)
    b &= np.uint64((1 << 53) - 1)
    u1 = (a.astype(np.float64) + 0.5) * 2.0 ** -53   # (0, 1)
    u2 = b.astype(np.float64) * 2.0 ** -53           # [0, 1)
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)


class NoiseStream:
    """Keyed standard normals for a whole ensemble.

    The stream lives on the finest grid (``fine_steps`` steps).  A coarser
    grid with ``fine_steps / k`` steps sums k consecutive fine draws, which is
    how nested refinements share the same Brownian path.
    """

    def __init__(self, seed: int, fine_steps: int):
        if fine_steps < 1:
            raise ValueError("fine_steps must be >= 1")
        self.seed = int(seed)
        self.fine_steps = int(fine_steps)

    def normals(self, step, modes: np.ndarray, trajs: np.ndarray) -> np.ndarray:
        """Fine-grid normals, shape (len(trajs), len(modes), 2)."""
        return gaussian_pairs(self.seed, step, np.asarray(modes)[None, :],
                              np.asarray(trajs)[:, None])

    def ratio(self, steps: int) -> int:
        if self.fine_steps % steps:
            raise ValueError(f"{steps} steps do not nest in {self.fine_steps}")
        return self.fine_steps // steps
