"""Uniform cubic B-spline activation and the rho-density / mixed-density spline banks.

A rho-density spline has ``2**(rho+2)`` basis functions on [0, 1], the i-th one
being ``S(w*x + 4 - i)`` with ``w = 2**(rho+2) - 3``. At any x at most four of
them are nonzero, which is what every routine here exploits.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .sparse import SparseGradient

MAX_BASIS_VALUE = 2.0 / 3.0


def activation(x):
    """Cardinal cubic B-spline S(x), supported on [0, 4]. Accepts scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    p0 = (x >= 0) & (x < 1)
    p1 = (x >= 1) & (x < 2)
    p2 = (x >= 2) & (x < 3)
    p3 = (x >= 3) & (x < 4)
    out[p0] = x[p0] ** 3 / 6.0
    t = x[p1] - 1.0
    out[p1] = (-3.0 * t**3 + 3.0 * t**2 + 3.0 * t + 1.0) / 6.0
    t = x[p2] - 2.0
    out[p2] = (3.0 * t**3 - 6.0 * t**2 + 4.0) / 6.0
    out[p3] = (4.0 - x[p3]) ** 3 / 6.0
    return out[()] if out.ndim == 0 else out


def basis_count(rho: int) -> int:
    return 2 ** (rho + 2)


def input_scale(rho: int) -> int:
    return 2 ** (rho + 2) - 3


def support_width(rho: int) -> float:
    """Width of one basis function's support in x; windows further apart share no index."""
    return 4.0 / input_scale(rho)


def bank_offsets(r: int) -> np.ndarray:
    """Start of each density bank in a bank-major coefficient vector, plus the total length."""
    return np.concatenate([[0], np.cumsum([basis_count(rho) for rho in range(r + 1)])])


def check_unit_interval(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all((x >= 0.0) & (x <= 1.0)):
        raise DomainError("inputs must lie in [0, 1]")
    return x


def window_arrays(rho: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised active window.

    Returns ``(first, values)`` where ``first`` holds the 0-based index of the first
    candidate basis function and ``values[..., c]`` is the value of basis ``first + c``.
    The candidate after the last valid index (only reached at x == 1) has value 0.
    """
    x = np.asarray(x, dtype=np.float64)
    wx = input_scale(rho) * x
    fl = np.floor(wx)
    u = wx - fl
    u2 = u * u
    u3 = u2 * u
    one_m = 1.0 - u
    values = np.stack([
        one_m * one_m * one_m / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ], axis=-1)
    return fl.astype(np.int64), values


@dataclass(frozen=True)
class ActiveWindow:
    first_index: int  # 1-based, as in the basis numbering i = 1..2**(rho+2)
    values: np.ndarray

    def indices(self, rho: int) -> np.ndarray:
        """1-based indices of the window entries that exist at this density."""
        idx = self.first_index + np.arange(4)
        return idx[idx <= basis_count(rho)]

    def nonzero(self) -> dict[int, float]:
        return {self.first_index + c: float(v) for c, v in enumerate(self.values) if v != 0.0}


def active_window(rho: int, x: float) -> ActiveWindow:
    x = float(check_unit_interval(x))
    first, values = window_arrays(rho, x)
    return ActiveWindow(int(first) + 1, values)


@dataclass
class RhoDensitySpline:
    rho: int
    coeffs: np.ndarray = None

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.coeffs is None:
            self.coeffs = np.zeros(basis_count(self.rho))
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (basis_count(self.rho),):
            raise ValueError(f"expected {basis_count(self.rho)} coefficients, got {self.coeffs.shape}")

    @property
    def w(self) -> int:
        return input_scale(self.rho)

    @property
    def lambda_max(self) -> int:
        return basis_count(self.rho)

    def __call__(self, x: float) -> float:
        return eval_rho(self, x)


def _window_dot(coeffs: np.ndarray, first: int, values: np.ndarray) -> float:
    acc = 0.0
    for c in range(4):
        i = first + c
        if i < coeffs.size:
            acc += coeffs[i] * values[c]
    return acc


def eval_rho(spline: RhoDensitySpline, x: float) -> float:
    x = float(check_unit_interval(x))
    first, values = window_arrays(spline.rho, x)
    return float(_window_dot(spline.coeffs, int(first), values))


@dataclass
class MixedDensitySpline:
    """Sum of rho-density splines for rho = 0..r. By default only bank r is trainable."""

    r: int
    banks: list = field(default=None)
    trainable_mask: list = field(default=None)

    def __post_init__(self):
        if self.banks is None:
            self.banks = [RhoDensitySpline(rho) for rho in range(self.r + 1)]
        if self.trainable_mask is None:
            self.trainable_mask = [rho == self.r for rho in range(self.r + 1)]
        if len(self.banks) != self.r + 1 or any(b.rho != k for k, b in enumerate(self.banks)):
            raise ValueError("banks must be densities 0..r in order")
        if len(self.trainable_mask) != self.r + 1:
            raise ValueError("one trainable flag per bank")

    @classmethod
    def from_flat(cls, r: int, coeffs: Sequence[float], trainable_mask=None) -> MixedDensitySpline:
        offs = bank_offsets(r)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.size != offs[-1]:
            raise ValueError(f"expected {offs[-1]} coefficients")
        banks = [RhoDensitySpline(rho, coeffs[offs[rho]:offs[rho + 1]].copy()) for rho in range(r + 1)]
        return cls(r, banks, trainable_mask)

    def flat(self) -> np.ndarray:
        """Bank-major coefficient vector: bank 0 first, index order within a bank."""
        return np.concatenate([b.coeffs for b in self.banks])

    @property
    def size(self) -> int:
        return int(bank_offsets(self.r)[-1])

    def __call__(self, x: float) -> float:
        return eval_mixed(self, x)


def eval_mixed(spline: MixedDensitySpline, x: float) -> float:
    x = float(check_unit_interval(x))
    acc = 0.0
    for bank in spline.banks:
        first, values = window_arrays(bank.rho, x)
        acc += _window_dot(bank.coeffs, int(first), values)
    return float(acc)


def grad_mixed(spline: MixedDensitySpline, x: float) -> SparseGradient:
    """Exact partials with respect to the trainable coefficients, indexed bank-major."""
    x = float(check_unit_interval(x))
    offs = bank_offsets(spline.r)
    idx, val = [], []
    for rho, bank in enumerate(spline.banks):
        if not spline.trainable_mask[rho]:
            continue
        first, values = window_arrays(rho, x)
        for c in range(4):
            i = int(first) + c
            if i < bank.lambda_max and values[c] != 0.0:
                idx.append(offs[rho] + i)
                val.append(values[c])
    return SparseGradient.from_unsorted(idx, val)


def expand_density(spline: MixedDensitySpline) -> MixedDensitySpline:
    """Append a zero bank at density r+1; it becomes the only trainable bank."""
    banks = [RhoDensitySpline(b.rho, b.coeffs.copy()) for b in spline.banks]
    banks.append(RhoDensitySpline(spline.r + 1))
    mask = [False] * (spline.r + 1) + [True]
    return MixedDensitySpline(spline.r + 1, banks, mask)
