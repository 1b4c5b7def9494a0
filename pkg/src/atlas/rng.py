"""Keyed random streams on top of the Philox counter-based generator.

Every stream is derived from ``(master_seed, *key)`` through numpy's
SeedSequence, so a trial's draws depend only on its key and never on the
order in which trials run. Normals use Box-Muller and exponentials the
inverse CDF so the transforms are fixed independently of numpy's defaults.
"""
from __future__ import annotations

import numpy as np


def _key_word(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be non-negative")
        return int(part)
    if isinstance(part, (float, np.floating)):
        # widths like 0.1 are keyed by their value in millionths
        return int(round(float(part) * 1_000_000))
    if isinstance(part, str):
        return int.from_bytes(part.encode(), "little") % (2**63)
    raise TypeError(f"unsupported stream key component {part!r}")


class Stream:
    def __init__(self, master_seed: int, *key):
        self.master_seed = int(master_seed)
        self.key = tuple(key)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=tuple(_key_word(k) for k in key))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key) -> Stream:
        return Stream(self.master_seed, *self.key, *key)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        return low + (high - low) * self._gen.random(size)

    def normal(self, mean=0.0, sd=1.0, size=None):
        count = 1 if size is None else int(np.prod(size))
        half = (count + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1]
        u2 = self._gen.random(half)
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])[:count]
        z = mean + sd * z
        return float(z[0]) if size is None else z.reshape(size)

    def standard_normal(self, size=None):
        return self.normal(0.0, 1.0, size)

    def exponential(self, mean=1.0, size=None):
        u = 1.0 - self._gen.random(size)  # (0, 1]
        return -mean * np.log(u)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
