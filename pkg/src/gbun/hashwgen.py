"""Reproducible weight synthesis for the untrained networks.

Hashed mode (Simhash++) never stores a weight matrix: the weight between
feature ``f`` and output neuron ``j`` in round ``t`` is derived from
``xxh32(LE-u64(f) || LE-u32(t), seed=j)`` by forcing the hash word into an
IEEE 754 binary32 value in [1, 2) and mapping it affinely onto [-1, 1).

Dense mode draws a full uniform[-1, 1) matrix from a seeded PCG64 generator
and zeroes a fixed fraction of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK1 = 0x3FFFFFFF  # clears the sign bit and the top exponent bit
MASK2 = 0x3F800000  # exponent 127, i.e. 2**0

DENSE_PRNG = "numpy.PCG64"

_P1 = np.uint32(0x9E3779B1)
_P2 = np.uint32(0x85EBCA77)
_P3 = np.uint32(0xC2B2AE3D)
_P4 = np.uint32(0x27D4EB2F)
_P5 = np.uint32(0x165667B1)
_MSG_LEN = np.uint32(12)


def _rotl(x, r):
    return (x << np.uint32(r)) | (x >> np.uint32(32 - r))


def xxh32_feature_round(feature_ids, round_t: int, seeds) -> np.ndarray:
    """xxHash32 of the 12-byte message ``LE-u64(feature) || LE-u32(round)``.

    Broadcasts ``feature_ids`` (shape ``(F,)``) against ``seeds`` (shape
    ``(K,)``) and returns a ``(F, K)`` uint32 array. Inputs shorter than 16
    bytes skip the stripe loop, so only the 4-byte tail rounds and the
    avalanche are needed.
    """
    f = np.asarray(feature_ids, dtype=np.uint64).reshape(-1, 1)
    seeds = np.asarray(seeds, dtype=np.uint64).astype(np.uint32).reshape(1, -1)
    words = (
        (f & np.uint64(0xFFFFFFFF)).astype(np.uint32),
        (f >> np.uint64(32)).astype(np.uint32),
        np.full_like(f, int(round_t) & 0xFFFFFFFF, dtype=np.uint32),
    )
    with np.errstate(over="ignore"):
        h = seeds + _P5 + _MSG_LEN
        h = np.broadcast_to(h, (f.shape[0], seeds.shape[1])).copy()
        for w in words:
            h += w * _P3
            h = _rotl(h, 17) * _P4
        h ^= h >> np.uint32(15)
        h *= _P2
        h ^= h >> np.uint32(13)
        h *= _P3
        h ^= h >> np.uint32(16)
    return h


def bits_to_unit_float(h) -> np.ndarray:
    """Reinterpret ``(h & MASK1) | MASK2`` as binary32; values lie in [1, 2)."""
    bits = (np.asarray(h, dtype=np.uint32) & np.uint32(MASK1)) | np.uint32(MASK2)
    return bits.view(np.float32).astype(np.float64)


def unit_to_signed(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 1.0) | (u >= 2.0)):
        raise ValueError("unit_to_signed expects values in [1, 2)")
    return 2.0 * u - 3.0


def feature_weights(feature_ids, round_t: int, K: int) -> np.ndarray:
    """Weights of the given features to all ``K`` neurons, shape ``(F, K)``."""
    h = xxh32_feature_round(feature_ids, round_t, np.arange(K))
    return 2.0 * bits_to_unit_float(h) - 3.0


def feature_weight(feature_id: int, round_t: int, neuron_j: int) -> float:
    h = xxh32_feature_round([feature_id], round_t, [neuron_j])
    return float(unit_to_signed(bits_to_unit_float(h))[0, 0])


def gen_dense_weights(seed: int, m: int, K: int, sparsify_fraction: float = 0.0) -> np.ndarray:
    """Uniform[-1, 1) ``m x K`` matrix with ``round(fraction * m * K)`` zeros."""
    if m < 1 or K < 1:
        raise ValueError("m and K must be >= 1")
    if not 0.0 <= sparsify_fraction < 1.0:
        raise ValueError("sparsify_fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    W = rng.uniform(-1.0, 1.0, size=(m, K))
    n_zero = int(round(sparsify_fraction * m * K))
    if n_zero:
        flat = W.reshape(-1)
        flat[rng.permutation(m * K)[:n_zero]] = 0.0
    return W


@dataclass(frozen=True)
class WeightMode:
    variant: str  # "dense" or "hashed"
    dense_seed: int = 0
    sparsify_fraction: float = 0.9
    prng_name: str = DENSE_PRNG

    def __post_init__(self):
        if self.variant not in ("dense", "hashed"):
            raise ValueError(f"unknown weight mode {self.variant!r}")
        if self.variant == "dense" and self.prng_name != DENSE_PRNG:
            raise ValueError(f"unsupported dense PRNG {self.prng_name!r}")

    @property
    def hashed(self) -> bool:
        return self.variant == "hashed"

    def to_dict(self) -> dict:
        if self.hashed:
            return {"variant": "hashed"}
        return {
            "variant": "dense",
            "dense_seed": self.dense_seed,
            "sparsify_fraction": self.sparsify_fraction,
            "prng_name": self.prng_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightMode":
        return cls(**d)
