"""Shared numeric conventions: float64 arrays, splittable RNG streams, and
the handful of scalar routines every other module leans on.

Conventions
-----------
* All numeric arrays are dense ``numpy.float64``.  Helpers here and in the
  rest of the package reject NaN/inf inputs at module boundaries instead of
  letting them propagate silently.
* Randomness flows through :class:`RngStream`, a counter-based generator
  (Philox) addressed by ``(seed, stream_id)``.  Reconstructing a stream from
  the same pair replays the same sequence on any platform; ``split`` derives
  independent child streams so concurrent consumers never share state.
* Cosine similarity of a zero vector with anything is defined as ``0.0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RngStream",
    "as_array",
    "cosine_similarity",
    "gaussian_sample",
    "std_normal_cdf",
    "unit_rows",
]

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


def _splitmix64(value: int) -> int:
    # SplitMix64 finalizer: bijective 64-bit mix, used only to derive child
    # stream ids that are well separated for nearby inputs.
    value = (value + _GOLDEN64) & _MASK64
    value = ((value ^ (value >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    value = ((value ^ (value >> 27)) * 0x94D049BB133111EB) & _MASK64
    return value ^ (value >> 31)


@dataclass
class RngStream:
    """Deterministic, splittable random stream.

    A stream is identified by ``(seed, stream_id)``; the underlying bit
    generator is counter-based (Philox), so equal identities yield equal
    sequences run-to-run and platform-to-platform.  Each stream is a single
    consumer: draws advance an internal counter.  Use :meth:`split` to hand
    independent streams to sub-tasks instead of sharing one.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not (0 <= int(self.seed) <= _MASK64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (0 <= int(self.stream_id) <= _MASK64):
            raise ValueError(
                f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}"
            )

    @property
    def generator(self) -> np.random.Generator:
        """The live numpy generator backing this stream (created lazily)."""
        if self._gen is None:
            seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    def split(self, index: int) -> "RngStream":
        """Derive the ``index``-th child stream.

        Pure function of ``(seed, stream_id, index)``: the same call on an
        equal parent returns an identically-seeded stream, independent of how
        much either stream has already been consumed.
        """
        if index < 0:
            raise ValueError(f"split index must be non-negative, got {index}")
        child_id = _splitmix64((int(self.stream_id) + (index + 1) * _GOLDEN64) & _MASK64)
        return RngStream(self.seed, child_id)


def as_array(values, *, name: str = "array", allow_empty: bool = True) -> np.ndarray:
    """Coerce to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or inf")
    return arr


def gaussian_sample(rng: RngStream, mean: float, sd: float, n) -> np.ndarray:
    """Draw ``n`` iid samples from N(mean, sd^2) as float64.

    ``n`` may be an int or a shape tuple.  ``sd == 0`` returns the mean
    exactly; ``n == 0`` returns an empty array.
    """
    if sd < 0:
        raise ValueError(f"sd must be non-negative, got {sd}")
    if isinstance(n, (int, np.integer)):
        if n < 0:
            raise ValueError(f"n must be non-negative, got {n}")
        shape = (int(n),)
    else:
        shape = tuple(int(d) for d in n)
        if any(d < 0 for d in shape):
            raise ValueError(f"shape entries must be non-negative, got {shape}")
    return rng.generator.normal(float(mean), float(sd), size=shape)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF for a scalar, accurate to well below 1e-10.

    Implemented as ``erfc(-x / sqrt(2)) / 2``.  Saturates cleanly to 0.0 / 1.0
    for |x| beyond roughly 40 (erfc underflow) without raising.
    """
    return 0.5 * math.erfc(-float(x) / math.sqrt(2.0))


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0.0 if either has zero norm."""
    va = as_array(a, name="a").ravel()
    vb = as_array(b, name="b").ravel()
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch: {va.shape} vs {vb.shape}")
    na = math.sqrt(float(va @ va))
    nb = math.sqrt(float(vb @ vb))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb) / (na * nb)


def unit_rows(matrix) -> np.ndarray:
    """Normalize each row to unit length; zero rows stay zero.

    Batched counterpart of :func:`cosine_similarity`: for matrices ``A`` and
    ``B``, ``unit_rows(A) @ unit_rows(B).T`` is the pairwise cosine matrix
    under the same zero-norm convention.
    """
    mat = as_array(matrix, name="matrix")
    if mat.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {mat.shape}")
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return mat / safe
