"""Synthetic target functions, dataset sampling and off-target analytics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

RBF_COUNT = 1000
APPENDIX_REGION = (0.45, 0.55)


def _unit_inputs(X, n: int | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if n is not None and X.shape[-1] != n:
        raise ValueError(f"expected {n}-dimensional inputs")
    if not np.all((X >= 0.0) & (X <= 1.0)):
        raise DomainError("target inputs must lie in the unit hypercube")
    return X


class Target:
    """Evaluable target: ``t(x)`` for one point, ``t.batch(X)`` for an (N, n) array."""

    n: int

    def batch(self, X) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return float(self.batch(np.asarray(x, dtype=np.float64)[None, :])[0])


@dataclass
class RbfTarget(Target):
    centers: np.ndarray
    scales: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (len(self.centers) == len(self.scales) == len(self.weights)):
            raise ValueError("centers, scales and weights must have equal length")
        if np.any(self.scales <= 0):
            raise ValueError("RBF scales must be positive")
        if np.any((self.centers < 0) | (self.centers > 1)):
            raise ValueError("RBF centers must lie in the unit hypercube")

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    def batch(self, X, chunk: int = 1024) -> np.ndarray:
        X = _unit_inputs(X, self.n)
        out = np.empty(len(X))
        s2 = self.scales ** 2
        for i in range(0, len(X), chunk):
            d2 = ((X[i:i + chunk, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
            out[i:i + chunk] = np.exp(-s2 * d2) @ self.weights
        return out

    def to_dict(self) -> dict:
        return {"kind": "rbf", "centers": self.centers.tolist(), "scales": self.scales.tolist(),
                "weights": self.weights.tolist()}


def sample_rbf_target(n: int, rng, count: int = RBF_COUNT) -> RbfTarget:
    """Centers uniform on the hypercube, scales exponential with mean 10, weights N(0, 1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    centers = rng.uniform(0.0, 1.0, size=(count, n))
    scales = rng.exponential(10.0, size=count)
    weights = rng.normal(0.0, 1.0, size=count)
    return RbfTarget(centers, scales, weights)


@dataclass
class PatchedTarget(Target):
    """``replacement`` inside the open box (lo, lo + width)^n, ``base`` elsewhere."""

    base: Target
    region_lo: np.ndarray
    width: float
    replacement: Target

    def __post_init__(self):
        self.region_lo = np.asarray(self.region_lo, dtype=np.float64).reshape(-1)
        if not 0.0 < self.width < 1.0:
            raise ValueError("width must be in (0, 1)")
        if np.any(self.region_lo < 0) or np.any(self.region_lo + self.width > 1.0):
            raise ValueError("update region must lie inside the unit hypercube")

    @property
    def n(self) -> int:
        return self.region_lo.size

    def inside(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X > self.region_lo) & (X < self.region_lo + self.width), axis=-1)

    def batch(self, X) -> np.ndarray:
        X = _unit_inputs(X, self.n)
        mask = self.inside(X)
        out = np.empty(len(X))
        if (~mask).any():
            out[~mask] = self.base.batch(X[~mask])
        if mask.any():
            out[mask] = self.replacement.batch(X[mask])
        return out

    def to_dict(self) -> dict:
        return {"kind": "patched", "base": self.base.to_dict(), "region_lo": self.region_lo.tolist(),
                "width": self.width, "replacement": self.replacement.to_dict()}


def sample_update_region(n: int, width: float, rng) -> np.ndarray:
    return rng.uniform(0.0, 1.0 - width, size=n)


# -------------------------------------------------------------- closed forms
THETA_MODES = ("as_written", "atan2_unsquared")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def analytic_values(exp_id: str, x1, x2, theta_mode: str = "as_written"):
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if exp_id == "A":
        a, b = x1 - 0.5, x2 - 0.5
        radius = np.sqrt(a * a + b * b)
        if theta_mode == "as_written":
            theta = np.arctan2(a * a, b * b)
        elif theta_mode == "atan2_unsquared":
            theta = np.arctan2(b, a)
        else:
            raise ValueError(f"unknown theta mode {theta_mode!r}")
        return np.sin(30.0 * radius + theta) + 2.0
    if exp_id == "B":
        return (np.cos(20.0 * x1 - 10.0) ** 2 + np.cos(10.0 * x2 - 5.0) ** 2
                + np.exp(-(20.0 * x1 - 10.0) ** 2 - (20.0 * x2 - 10.0) ** 2))
    if exp_id == "C":
        return 2.0 + np.cos(20.0 * x1 - 10.0) * np.cos(20.0 * x2 - 10.0)
    if exp_id == "D":
        return 2.0 + _sigmoid(np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2))
    raise ValueError(f"unknown experiment {exp_id!r}")


def analytic_target(exp_id: str, x1: float, x2: float, theta_mode: str = "as_written") -> float:
    _unit_inputs([[x1, x2]])
    return float(analytic_values(exp_id, x1, x2, theta_mode))


def in_appendix_region(x1, x2):
    lo, hi = APPENDIX_REGION
    return (x1 > lo) & (x1 < hi) & (x2 > lo) & (x2 < hi)


def task2_appendix_target(exp_id: str, x1: float, x2: float, theta_mode: str = "as_written") -> float:
    _unit_inputs([[x1, x2]])
    if in_appendix_region(x1, x2):
        return 0.0
    return float(analytic_values(exp_id, x1, x2, theta_mode))


@dataclass
class AnalyticTarget(Target):
    exp_id: str
    theta_mode: str = "as_written"
    task2: bool = False
    n: int = 2

    def batch(self, X) -> np.ndarray:
        X = _unit_inputs(X, 2)
        vals = analytic_values(self.exp_id, X[:, 0], X[:, 1], self.theta_mode)
        if self.task2:
            vals = np.where(in_appendix_region(X[:, 0], X[:, 1]), 0.0, vals)
        return vals

    def to_dict(self) -> dict:
        return {"kind": "analytic", "exp_id": self.exp_id, "theta_mode": self.theta_mode, "task2": self.task2}


@dataclass
class ConstantTarget(Target):
    n: int
    value: float = 0.0

    def batch(self, X) -> np.ndarray:
        X = _unit_inputs(X, self.n)
        return np.full(len(X), self.value)

    def to_dict(self) -> dict:
        return {"kind": "constant", "n": self.n, "value": self.value}


def target_from_dict(d: dict) -> Target:
    kind = d["kind"]
    if kind == "rbf":
        return RbfTarget(d["centers"], d["scales"], d["weights"])
    if kind == "patched":
        return PatchedTarget(target_from_dict(d["base"]), d["region_lo"], d["width"],
                             target_from_dict(d["replacement"]))
    if kind == "analytic":
        return AnalyticTarget(d["exp_id"], d["theta_mode"], d["task2"])
    if kind == "constant":
        return ConstantTarget(d["n"], d["value"])
    raise ValueError(f"unknown target kind {kind!r}")


# ------------------------------------------------------------------ datasets
@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        targets = np.asarray(self.targets, dtype=np.float64)
        self.targets = targets.reshape(-1, 1) if targets.ndim == 1 else targets
        if len(self.targets) != len(self.inputs):
            raise ValueError("inputs and targets differ in length")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def __len__(self) -> int:
        return len(self.inputs)


def sample_dataset(target: Target, n: int, count: int, rng, box=None,
                   noise_sigma: float = 0.0) -> Dataset:
    """Inputs uniform over ``box = (lo, hi)`` (default the unit hypercube), plus Gaussian noise."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = (0.0, 1.0) if box is None else box
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (n,))
    if np.any(hi <= lo):
        raise ValueError("sampling box has zero width")
    if np.any(lo < 0) or np.any(hi > 1):
        raise ValueError("sampling box must lie inside the unit hypercube")
    X = rng.uniform(lo, hi, size=(count, n))
    y = target.batch(X)
    if noise_sigma > 0:
        y = y + rng.normal(0.0, noise_sigma, size=count)
    return Dataset(X, y[:, None], noise_sigma)


# --------------------------------------------------------- off-target analytics
def permutation_prob(n: int, k: int, delta: float) -> float:
    """Probability that exactly k of n coordinates fall outside a width-delta region."""
    if not 0 <= k <= n:
        raise ValueError("k must satisfy 0 <= k <= n")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    return math.comb(n, k) * delta ** (n - k) * (1.0 - delta) ** k


def expected_change(n: int, delta: float) -> float:
    """Sum over k of ((n-k)/n) * permutation_prob(n, k, delta); analytically equal to delta."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.fsum((n - k) / n * permutation_prob(n, k, delta) for k in range(n + 1))


def expected_off_target(n: int, delta: float) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    return delta - delta ** n
