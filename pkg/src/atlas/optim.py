"""MAE loss, Adam, and the mini-batch training loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericRangeError
from .model import AtlasModel
from .sparse import SparseGradient


def mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("mae of an empty batch")
    return float(np.mean(np.abs(pred - target)))


def mae_upstream(pred, target, batch_size: int) -> np.ndarray:
    """Subgradient of the batch MAE with respect to each prediction (sign(0) = 0)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    pred = np.asarray(pred, dtype=np.float64)
    return np.sign(pred - np.asarray(target, dtype=np.float64)) / (batch_size * pred.shape[-1])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lazy: bool = False

    @classmethod
    def for_model(cls, model: AtlasModel, lr: float, lazy: bool = False, **hyper) -> AdamState:
        size = model.count_trainable()
        return cls(np.zeros(size), np.zeros(size), lr, lazy=lazy, **hyper)


def adam_step(model: AtlasModel, state: AdamState, grad) -> None:
    """One Adam update of the trainable coefficients, in place.

    ``grad`` is either a SparseGradient over flat parameter indices or a dense
    vector of length ``model.size``. Dense semantics (the default) move every
    trainable coefficient; lazy mode only touches coefficients with a nonzero
    gradient in this step.
    """
    tidx = model.trainable_indices()
    if state.m.size != tidx.size:
        raise ValueError(f"optimizer sized for {state.m.size} parameters, model has {tidx.size}")
    if isinstance(grad, SparseGradient):
        pos = np.searchsorted(tidx, grad.indices)
        if grad.indices.size and (np.any(pos >= tidx.size) or np.any(tidx[np.minimum(pos, tidx.size - 1)] != grad.indices)):
            raise ValueError("gradient touches a frozen or out-of-range parameter")
        g = np.zeros(tidx.size)
        g[pos] = grad.values
    else:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (model.size,):
            raise ValueError(f"dense gradient must have length {model.size}")
        g = grad[tidx]

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    sel = np.flatnonzero(g) if state.lazy else slice(None)
    gs = g[sel]
    state.m[sel] = state.beta1 * state.m[sel] + (1.0 - state.beta1) * gs
    state.v[sel] = state.beta2 * state.v[sel] + (1.0 - state.beta2) * gs * gs
    step = state.lr * (state.m[sel] / bc1) / (np.sqrt(state.v[sel] / bc2) + state.eps)
    flat = model.theta.reshape(-1)
    flat[tidx[sel]] -= step


@dataclass
class TrainingCurve:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)


def evaluate(model: AtlasModel, inputs, targets) -> float:
    return mae(model.predict(inputs), targets)


def train_epochs(model: AtlasModel, train, validation, epochs: int, batch_size: int,
                 lr: float, rng, state: AdamState | None = None,
                 lazy: bool = False) -> tuple[AtlasModel, TrainingCurve]:
    """Mini-batch Adam on MAE. ``train``/``validation`` are Dataset-like (inputs, targets).

    ``rng`` needs a ``permutation(n)`` method; it is consumed once per epoch.
    MAE on both splits is recorded after every epoch.
    """
    X = np.asarray(train.inputs, dtype=np.float64)
    Y = np.asarray(train.targets, dtype=np.float64).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty training set")
    Xv = np.asarray(validation.inputs, dtype=np.float64)
    Yv = np.asarray(validation.targets, dtype=np.float64).reshape(len(Xv), -1)
    if state is None:
        state = AdamState.for_model(model, lr, lazy=lazy)
    curve = TrainingCurve()
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            b = order[start:start + batch_size]
            pred = model.forward_batch(X[b])
            up = mae_upstream(pred, Y[b], len(b))
            adam_step(model, state, model.backward_batch(X[b], up))
        curve.train.append(evaluate(model, X, Y))
        curve.validation.append(evaluate(model, Xv, Yv))
        if not (np.isfinite(curve.train[-1]) and np.isfinite(curve.validation[-1])):
            raise NumericRangeError("training diverged to a non-finite MAE")
    return model, curve
