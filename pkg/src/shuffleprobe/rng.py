"""Seeded randomness for the whole package.

One generator family is used everywhere: numpy's PCG64, always constructed
through make_rng so every random decision traces back to an explicit seed.
Permutations are drawn with an explicit Fisher-Yates loop over integer draws,
which pins the byte-level stream independent of numpy's own permutation
helper. Per-image seeds are derived by hashing (master seed, image id), so
scoring order and worker count never change results.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_KIND = "pcg64"


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Return a PCG64 generator. Passing a generator through is allowed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(master_seed: int, item_id: str) -> int:
    """Stable 63-bit seed for one item under a master seed.

    blake2b of "<master_seed>:<item_id>" keeps the derivation independent of
    Python's hash randomization and of the platform.
    """
    payload = f"{master_seed}:{item_id}".encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def fisher_yates_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of range(n) via the classic swap-down loop."""
    if n < 0:
        raise ValueError(f"permutation length must be >= 0, got {n}")
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm
