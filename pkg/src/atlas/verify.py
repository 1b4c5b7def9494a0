"""Sampled checks of sparsity, bounded gradients, distal orthogonality, expansion and exactness."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .bspline import support_width
from .model import AtlasModel, Variant

FD_TOLERANCE = 1e-5
FD_FLOOR = 1e-3  # magnitude floor in the relative-error denominator
EXPANSION_TOLERANCE = 1e-12


@dataclass
class PropertyReport:
    property: str
    samples: int
    violations: int
    worst_value: float
    bound_used: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _points(model: AtlasModel, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random((count, model.n))


def _per_output(model: AtlasModel, grad):
    """Split a sparse gradient into per-output (indices, values)."""
    block = model.slots * model.n * model.spline_size
    owner = grad.indices // block
    return [grad.values[owner == o] for o in range(model.p)]


def sparsity_bound(model: AtlasModel) -> int:
    bound = 4 * model.n * model.slots
    if model.variant is Variant.ALL_DENSITIES_TRAINABLE:
        bound *= model.r + 1
    return bound


def check_sparsity(model: AtlasModel, num_points: int, rng: np.random.Generator) -> PropertyReport:
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    bound = sparsity_bound(model)
    worst, violations = 0, 0
    for x in _points(model, num_points, rng):
        for vals in _per_output(model, model.backward(x)):
            nnz = int(np.count_nonzero(vals))
            worst = max(worst, nnz)
            violations += nnz > bound
    return PropertyReport("sparsity", num_points, violations, float(worst), float(bound))


def check_gradient_bound(model: AtlasModel, num_points: int, rng: np.random.Generator) -> PropertyReport:
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    U = model.gradient_bound().U
    if model.variant is Variant.ALL_DENSITIES_TRAINABLE:
        U *= model.r + 1
    worst, violations = 0.0, 0
    for x in _points(model, num_points, rng):
        for vals in _per_output(model, model.backward(x)):
            norm = float(np.abs(vals).sum())
            worst = max(worst, norm)
            violations += not norm < U
    return PropertyReport("gradient_bound", num_points, violations, worst, U)


def sample_gapped_pairs(n: int, num_pairs: int, gap: float, rng: np.random.Generator,
                        max_attempts: int | None = None):
    """Rejection-sample pairs with min_j |x_j - y_j| >= gap."""
    if max_attempts is None:
        max_attempts = 200 * num_pairs
    xs, ys, tried, have = [], [], 0, 0
    while have < num_pairs:
        if tried >= max_attempts:
            raise RuntimeError(f"could not sample {num_pairs} pairs with gap {gap} "
                               f"in {max_attempts} attempts")
        m = min(max(2 * (num_pairs - have), 64), max_attempts - tried)
        x, y = rng.random((m, n)), rng.random((m, n))
        tried += m
        ok = np.min(np.abs(x - y), axis=1) >= gap
        xs.append(x[ok])
        ys.append(y[ok])
        have += int(ok.sum())
    return np.concatenate(xs)[:num_pairs], np.concatenate(ys)[:num_pairs]


def check_orthogonality(model: AtlasModel, num_pairs: int, gap: float | None,
                        rng: np.random.Generator) -> PropertyReport:
    """Inner products of gradients at gapped pairs must be exactly zero."""
    if gap is None:
        gap = support_width(model.r)
    X, Y = sample_gapped_pairs(model.n, num_pairs, gap, rng)
    worst, violations = 0.0, 0
    for x, y in zip(X, Y):
        ip = model.grad_inner_product(x, y)
        worst = max(worst, abs(ip))
        violations += ip != 0.0
    return PropertyReport("distal_orthogonality", num_pairs, violations, worst, gap)


def check_expansion(model: AtlasModel, rng: np.random.Generator, num_points: int = 1000,
                    delta_M: int = 2, rounds: int = 1) -> PropertyReport:
    X = _points(model, num_points, rng)
    before = model.predict(X)
    worst = 0.0
    grown = model
    for _ in range(rounds):
        for grown in (grown.expand_density_all(), grown.expand_exponentials(delta_M)):
            worst = max(worst, float(np.max(np.abs(grown.predict(X) - before))))
    return PropertyReport("expansion_invariance", num_points, int(worst > EXPANSION_TOLERANCE),
                          worst, EXPANSION_TOLERANCE)


def finite_difference_errors(model: AtlasModel, x, step: float) -> np.ndarray:
    """Relative errors of backward against central differences on every touched parameter."""
    grad = model.backward(x)
    flat = model.theta.reshape(-1)
    errs = np.empty(len(grad))
    for e, (i, a) in enumerate(zip(grad.indices, grad.values)):
        keep = flat[i]
        flat[i] = keep + step
        up = model.forward(x).sum()
        flat[i] = keep - step
        down = model.forward(x).sum()
        flat[i] = keep
        fd = (up - down) / (2 * step)
        errs[e] = abs(a - fd) / max(abs(a), abs(fd), FD_FLOOR)
    return errs


def check_finite_diff(model: AtlasModel, num_points: int, step: float,
                      rng: np.random.Generator) -> PropertyReport:
    if step <= 0:
        raise ValueError("step must be positive")
    worst, violations = 0.0, 0
    for x in _points(model, num_points, rng):
        errs = finite_difference_errors(model, x, step)
        if errs.size:
            worst = max(worst, float(errs.max()))
            violations += int(np.sum(errs >= FD_TOLERANCE))
    return PropertyReport("finite_difference", num_points, violations, worst, FD_TOLERANCE)


def run_suite(model: AtlasModel, seed: int = 0, num_points: int = 1000, num_pairs: int = 10_000,
              fd_points: int = 20, fd_step: float = 1e-5, gap: float | None = None) -> list[PropertyReport]:
    """All checks, each from its own child of ``seed`` so reports are independent of order."""
    ss = np.random.SeedSequence(seed).spawn(5)
    gens = [np.random.Generator(np.random.Philox(s)) for s in ss]
    return [
        check_sparsity(model, num_points, gens[0]),
        check_gradient_bound(model, num_points, gens[1]),
        check_orthogonality(model, num_pairs, gap, gens[2]),
        check_expansion(model, gens[3]),
        check_finite_diff(model, fd_points, fd_step, gens[4]),
    ]
