"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .graph import ModelGraph
from .layers import Concat, Layer, bce, bce_with_logits


class NumericalError(ArithmeticError):
    pass


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def _sample(size: int, limit: int | None, rng) -> np.ndarray:
    if limit is None or size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, limit, replace=False))


def grad_check(target: Layer | ModelGraph, inputs, epsilon: float = 1e-5, loss: str = "linear",
               train: bool = True, seed: int = 0, max_checks: int | None = None,
               targets: np.ndarray | None = None) -> float:
    """Largest relative error between backprop and central differences.

    ``loss="linear"`` uses ``sum(R * out)`` with a fixed random ``R``;
    ``loss="bce"`` applies mean binary cross-entropy to the target's
    (sigmoid) output against random binary targets, or ``loss="bce_logits"``
    to logits. Every parameter entry and every input entry is checked,
    unless ``max_checks`` caps the number of entries sampled per array.
    Inputs and parameters should be float64.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    multi = isinstance(target, Concat)
    xs = [np.array(x, dtype=np.float64) for x in (inputs if multi else [inputs])]

    if isinstance(target, ModelGraph):
        def run(xv):
            target.reseed(seed)
            return target.forward(xv[0], train=train, logits=(loss == "bce_logits"))

        def back(g):
            return [target.backward(g)]

        params = [(layer, key) for _, layer, key in target.parameters()]
    else:
        def run(xv):
            if hasattr(target, "rng"):
                target.rng = np.random.default_rng(seed)
            return target.forward(xv if multi else xv[0], train)

        def back(g):
            out = target.backward(g)
            return out if multi else [out]

        params = [(target, key) for key in target.params]

    out0 = run(xs)
    weights = rng.standard_normal(out0.shape)
    y = targets if targets is not None else (rng.random(out0.shape) < 0.5).astype(np.float64)

    def objective(out):
        if loss == "linear":
            return float((weights * out).sum()), weights
        if loss == "bce":
            return bce(out, y)
        if loss == "bce_logits":
            return bce_with_logits(out, y)
        raise ValueError(f"unknown loss {loss!r}")

    _, g = objective(run(xs))
    dxs = back(g)
    analytic = [(x, dx) for x, dx in zip(xs, dxs)]
    analytic += [(layer.params[key], layer.grads[key].copy()) for layer, key in params]

    worst = 0.0
    for arr, grad in analytic:
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite analytic gradient")
        flat = arr.reshape(-1)
        for i in _sample(flat.size, max_checks, rng):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp, _ = objective(run(xs))
            flat[i] = orig - epsilon
            lm, _ = objective(run(xs))
            flat[i] = orig
            num = (lp - lm) / (2 * epsilon)
            if not np.isfinite(num):
                raise NumericalError(f"non-finite numeric gradient at entry {i}")
            worst = max(worst, float(rel_error(grad.reshape(-1)[i], num)))
    return worst
