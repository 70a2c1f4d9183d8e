"""Deterministic randomness and a finite-difference gradient oracle.

Every source of randomness in the toolkit is a `SeededRng`: a counter-based
Philox stream keyed by (master_seed, stream_id). Workers never share streams,
so execution order and thread scheduling cannot change results; two runs with
the same master seed are bit-for-bit identical.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError

# reserved stream ids; client streams use the client id directly
SERVER_STREAM = 1_000_000
INIT_STREAM = 1_000_001


class SeededRng:
    """Deterministic random stream keyed by (master_seed, stream_id)."""

    def __init__(self, master_seed: int, stream_id: int = 0):
        if not 0 <= int(master_seed) < 2**64:
            raise ValueError(f"master_seed must be a 64-bit unsigned int, got {master_seed}")
        if not 0 <= int(stream_id) < 2**64:
            raise ValueError(f"stream_id must be a 64-bit unsigned int, got {stream_id}")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        self.gen = np.random.Generator(np.random.Philox(key=[self.master_seed, self.stream_id]))

    def stream(self, stream_id: int) -> "SeededRng":
        """A fresh independent stream under the same master seed."""
        return SeededRng(self.master_seed, stream_id)

    def __repr__(self) -> str:
        return f"SeededRng(master_seed={self.master_seed}, stream_id={self.stream_id})"


def sample_minibatch(rng: SeededRng, pool_size: int, batch: int) -> np.ndarray:
    """Draw `batch` distinct indices from [0, pool_size), uniformly, without replacement.

    Returns the indices sorted ascending; downstream reductions iterate them in
    that fixed order so that results do not depend on draw internals.
    """
    if batch < 1 or batch > pool_size:
        raise ValueError(f"batch must satisfy 1 <= batch <= pool_size; got batch={batch}, pool_size={pool_size}")
    idx = rng.gen.choice(pool_size, size=batch, replace=False)
    return np.sort(idx.astype(np.int64))


def finite_diff_grad(f: Callable[[np.ndarray], float], omega: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient estimate of a scalar field, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    omega = np.asarray(omega, dtype=float)
    grad = np.empty(omega.shape, dtype=float)
    flat = omega.ravel()
    out = grad.ravel()
    for k in range(flat.size):
        step = np.zeros_like(flat)
        step[k] = h
        f_plus = float(f((flat + step).reshape(omega.shape)))
        f_minus = float(f((flat - step).reshape(omega.shape)))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value while differencing coordinate {k}", coordinate=k)
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return grad
