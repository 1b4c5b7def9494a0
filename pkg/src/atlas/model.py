"""The ATLAS approximator.

For each output component::

    A(x) = sum_j f_j(x_j) + sum_{k=1..M} k**-2 * (exp(sum_j g_kj(x_j)) - exp(sum_j h_kj(x_j)))

with every f, g, h a mixed-density B-spline. All coefficients live in one array
``theta`` of shape ``(p, 2M+1, n, L)``: slot 0 holds f, slots 1..M hold g_k and
slots M+1..2M hold h_k; the last axis is bank-major over densities 0..r. The C
order of that array is the flat parameter index used by gradients and files.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .bspline import (MAX_BASIS_VALUE, MixedDensitySpline, bank_offsets, basis_count,
                      check_unit_interval, window_arrays)
from .errors import DomainError, NumericRangeError
from .sparse import SparseGradient

FORMAT_VERSION = 1
EXP_LIMIT = 700.0


class Variant(str, Enum):
    DISTAL_ORTHOGONAL = "distal_orthogonal"
    ALL_DENSITIES_TRAINABLE = "all_densities_trainable"


@dataclass(frozen=True)
class GradientBoundReport:
    u: float
    u_g: float
    u_h: float
    U: float


class AtlasModel:
    def __init__(self, n: int, M: int = 0, r: int = 0, p: int = 1,
                 variant: Variant | str = Variant.DISTAL_ORTHOGONAL, theta=None):
        if n < 1 or p < 1 or M < 0 or r < 0:
            raise ValueError(f"invalid model shape n={n} p={p} M={M} r={r}")
        self.n, self.M, self.r, self.p = n, M, r, p
        self.variant = Variant(variant)
        self._offsets = bank_offsets(r)
        shape = (p, 2 * M + 1, n, int(self._offsets[-1]))
        if theta is None:
            theta = np.zeros(shape)
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != shape:
            raise ValueError(f"theta shape {theta.shape} != {shape}")
        self.theta = theta
        self._tidx = None

    def __repr__(self):
        return (f"AtlasModel(n={self.n}, M={self.M}, r={self.r}, p={self.p}, "
                f"variant={self.variant.value})")

    # ------------------------------------------------------------------ layout
    @property
    def slots(self) -> int:
        return 2 * self.M + 1

    @property
    def spline_size(self) -> int:
        return int(self._offsets[-1])

    @property
    def size(self) -> int:
        return self.theta.size

    def trainable_banks(self) -> list[int]:
        if self.variant is Variant.ALL_DENSITIES_TRAINABLE:
            return list(range(self.r + 1))
        return [self.r]

    def trainable_indices(self) -> np.ndarray:
        """Sorted flat indices of every trainable coefficient."""
        if self._tidx is None:
            cols = np.concatenate([np.arange(self._offsets[rho], self._offsets[rho + 1])
                                   for rho in self.trainable_banks()])
            base = np.arange(self.p * self.slots * self.n) * self.spline_size
            self._tidx = (base[:, None] + cols[None, :]).ravel()
        return self._tidx

    def count_trainable(self) -> int:
        per_spline = sum(basis_count(rho) for rho in self.trainable_banks())
        return self.p * self.n * self.slots * per_spline

    def flat_index(self, out: int, slot: int, j: int, rho: int, i: int) -> int:
        """Flat parameter index; ``i`` is 0-based within bank ``rho``."""
        col = int(self._offsets[rho]) + i
        return ((out * self.slots + slot) * self.n + j) * self.spline_size + col

    def slot(self, block: str, k: int = 0) -> int:
        if block == "f":
            return 0
        if not 1 <= k <= self.M:
            raise ValueError(f"k must be in 1..{self.M}")
        return k if block == "g" else self.M + k

    def spline(self, block: str, j: int, k: int = 0, out: int = 0) -> MixedDensitySpline:
        """Copy of one mixed-density spline, e.g. ``spline('g', j=0, k=2)``."""
        mask = [rho in self.trainable_banks() for rho in range(self.r + 1)]
        return MixedDensitySpline.from_flat(self.r, self.theta[out, self.slot(block, k), j].copy(), mask)

    def copy(self) -> AtlasModel:
        return AtlasModel(self.n, self.M, self.r, self.p, self.variant, self.theta.copy())

    # ------------------------------------------------------------- evaluation
    def _check_inputs(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[-1] != self.n:
            raise ValueError(f"expected inputs of dimension {self.n}, got {X.shape[-1]}")
        try:
            return check_unit_interval(X)
        except DomainError:
            raise DomainError("every input coordinate must lie in [0, 1]") from None

    def _windows(self, X: np.ndarray):
        """Per density: clamped column indices (B, n, 4) and basis values (B, n, 4)."""
        out = []
        for rho in range(self.r + 1):
            first, values = window_arrays(rho, X)
            cols = first[..., None] + np.arange(4)
            over = cols >= basis_count(rho)
            if over.any():
                # only reachable at x == 1, where the value is exactly 0
                cols = np.minimum(cols, basis_count(rho) - 1)
                values = np.where(over, 0.0, values)
            out.append((cols + self._offsets[rho], values))
        return out

    def _interiors(self, windows, batch: int) -> np.ndarray:
        """Spline sums per (batch, output, slot); density banks are accumulated in order."""
        jj = np.arange(self.n)[None, :, None]
        acc = np.zeros((batch, self.p, self.slots))
        for cols, values in windows:
            gathered = self.theta[:, :, jj, cols]  # (p, slots, B, n, 4)
            acc += np.einsum("psbjc,bjc->bps", gathered, values)
        return acc

    def _scales(self) -> np.ndarray:
        k = np.arange(1, self.M + 1, dtype=np.float64)
        return 1.0 / (k * k)

    def _exp_terms(self, interiors: np.ndarray):
        inner = interiors[..., 1:]
        if inner.size and np.max(inner) > EXP_LIMIT:
            raise NumericRangeError(f"exponential interior exceeds {EXP_LIMIT}")
        c = self._scales()
        eg = c * np.exp(interiors[..., 1:self.M + 1])
        eh = c * np.exp(interiors[..., self.M + 1:])
        return eg, eh

    def forward_batch(self, X) -> np.ndarray:
        """Model outputs, shape (B, p)."""
        X = self._check_inputs(X)
        interiors = self._interiors(self._windows(X), X.shape[0])
        eg, eh = self._exp_terms(interiors)
        out = interiors[..., 0].copy()
        # one term at a time so that appended zero terms leave the sum bit-identical
        for k in range(self.M):
            out += eg[..., k] - eh[..., k]
        return out

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("forward takes a single input vector")
        return self.forward_batch(x[None, :])[0]

    def predict(self, X, chunk: int = 2048) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(X) <= chunk:
            return self.forward_batch(X)
        return np.concatenate([self.forward_batch(X[i:i + chunk]) for i in range(0, len(X), chunk)])

    # --------------------------------------------------------------- gradients
    def _grad_terms(self, X, upstream):
        """Flat indices and values of every trainable partial, before reduction."""
        X = self._check_inputs(X)
        B = X.shape[0]
        upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (B, self.p))
        windows = self._windows(X)
        interiors = self._interiors(windows, B)
        eg, eh = self._exp_terms(interiors)
        coef = np.concatenate([np.ones((B, self.p, 1)), eg, -eh], axis=-1)
        coef = coef * upstream[..., None]  # (B, p, slots)
        base = (np.arange(self.p * self.slots).reshape(self.p, self.slots)[..., None]
                * self.n + np.arange(self.n)) * self.spline_size  # (p, slots, n)
        idx, val = [], []
        for rho in self.trainable_banks():
            cols, values = windows[rho]
            idx.append(base[None, :, :, :, None] + cols[:, None, None, :, :])
            val.append(coef[:, :, :, None, None] * values[:, None, None, :, :])
        # (B, p, slots, n, 4 * banks)
        return np.concatenate(idx, axis=-1), np.concatenate(val, axis=-1)

    def backward(self, x, upstream=1.0) -> SparseGradient:
        """Exact gradient of ``upstream . A(x)`` with respect to the trainable coefficients."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("backward takes a single input vector")
        idx, val = self._grad_terms(x[None, :], np.asarray(upstream, dtype=np.float64)[None, ...])
        return SparseGradient.from_unsorted(idx, val)

    def backward_batch(self, X, upstream) -> np.ndarray:
        """Summed gradient over a batch as a dense vector of length ``size``.

        ``upstream`` has shape (B, p): per-sample weights on each output.
        """
        idx, val = self._grad_terms(X, upstream)
        return np.bincount(idx.ravel(), weights=val.ravel(), minlength=self.size)

    def grad_inner_product(self, x, y) -> float:
        return self.backward(x).dot(self.backward(y))

    # --------------------------------------------------------------- expansion
    def expand_exponentials(self, delta_M: int) -> AtlasModel:
        """Append ``delta_M`` zero-initialised exponential pairs; outputs are unchanged."""
        if delta_M < 1:
            raise ValueError("delta_M must be a positive integer")
        M2 = self.M + delta_M
        theta = np.zeros((self.p, 2 * M2 + 1, self.n, self.spline_size))
        theta[:, :self.M + 1] = self.theta[:, :self.M + 1]
        theta[:, M2 + 1:M2 + 1 + self.M] = self.theta[:, self.M + 1:]
        return AtlasModel(self.n, M2, self.r, self.p, self.variant, theta)

    def expand_density_all(self) -> AtlasModel:
        """Add a zero bank at density r+1 to every spline; outputs are unchanged."""
        new = AtlasModel(self.n, self.M, self.r + 1, self.p, self.variant)
        new.theta[..., :self.spline_size] = self.theta
        return new

    # ------------------------------------------------------------------ bounds
    def gradient_bound(self) -> GradientBoundReport:
        # |g_kj(x)| <= sum_rho max_i |theta_rho,i| by partition of unity
        bank_max = np.stack([np.abs(self.theta[..., self._offsets[rho]:self._offsets[rho + 1]]).max(axis=-1)
                             for rho in range(self.r + 1)], axis=-1).sum(axis=-1)  # (p, slots, n)
        per_term = bank_max.sum(axis=-1)  # (p, slots)
        u_g = float(per_term[:, 1:self.M + 1].max()) if self.M else 0.0
        u_h = float(per_term[:, self.M + 1:].max()) if self.M else 0.0
        u = MAX_BASIS_VALUE
        U = 4 * self.n * u * math.pi ** 2 * (1.0 + math.exp(u_g) + math.exp(u_h))
        return GradientBoundReport(u, u_g, u_h, U)

    # ----------------------------------------------------------- serialisation
    def to_dict(self) -> dict:
        banks = [[[[self.theta[o, s, j, self._offsets[rho]:self._offsets[rho + 1]].tolist()
                    for rho in range(self.r + 1)]
                   for j in range(self.n)]
                  for s in range(self.slots)]
                 for o in range(self.p)]
        return {"format_version": FORMAT_VERSION, "n": self.n, "p": self.p, "M": self.M,
                "r": self.r, "variant": self.variant.value, "banks": banks}

    @classmethod
    def from_dict(cls, d: dict) -> AtlasModel:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        model = cls(d["n"], d["M"], d["r"], d["p"], d["variant"])
        for o, outs in enumerate(d["banks"]):
            for s, slot in enumerate(outs):
                for j, spline in enumerate(slot):
                    model.theta[o, s, j] = np.concatenate([np.asarray(b, dtype=np.float64) for b in spline])
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> AtlasModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_model(n: int, M: int, r: int, rng: np.random.Generator, p: int = 1,
                 variant=Variant.DISTAL_ORTHOGONAL, scale: float = 0.1) -> AtlasModel:
    """Model with i.i.d. normal coefficients, for property checks."""
    model = AtlasModel(n, M, r, p, variant)
    model.theta[...] = scale * rng.standard_normal(model.theta.shape)
    return model
