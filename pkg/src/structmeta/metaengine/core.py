"""Single-task building blocks of the structured meta-update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, grad, no_grad
from ..errors import DivergenceError, NumericalError, ShapeError
from ..models import ArchSpec, ParamSet, loss, predictions


def _check_arch(spec: ArchSpec, *datasets) -> None:
    for d in datasets:
        if tuple(d.sample_shape) != spec.input_shape:
            raise ShapeError(f"dataset {d.name!r} has inputs {d.sample_shape}, architecture expects {spec.input_shape}", d.name)


def _flat(params) -> np.ndarray:
    return params.flat if isinstance(params, ParamSet) else np.asarray(params, dtype=np.float64)


def loss_value(spec: ArchSpec, params, data) -> float:
    with no_grad():
        return loss(spec, _flat(params), data).item()


def loss_grad(spec: ArchSpec, params, data) -> np.ndarray:
    """Full-batch gradient of the mean loss of ``data`` at ``params``."""
    theta = Tensor(_flat(params), requires_grad=True)
    return grad(loss(spec, theta, data), theta).data


def inner_update(spec: ArchSpec, theta: ParamSet, data, alpha: float) -> ParamSet:
    """One gradient step on the task's own data; ``theta`` is left untouched."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    _check_arch(spec, data)
    g = loss_grad(spec, theta, data)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite inner gradient", task=theta.task_id)
    return theta.copy(theta.flat - alpha * g)


def task_similarity(spec: ArchSpec, theta_i, data_i, data_j) -> float:
    """Gradient alignment: ∇L_i(Θ_i) · ∇L_j(Θ_i), both at the same parameters."""
    _check_arch(spec, data_i, data_j)
    gi = loss_grad(spec, theta_i, data_i)
    gj = gi if data_j is data_i else loss_grad(spec, theta_i, data_j)
    return float(np.dot(gi, gj))


def normalize_weights(etas, mode: str = "clamp-l1") -> np.ndarray:
    etas = np.asarray(etas, dtype=np.float64)
    if etas.size == 0:
        raise ValueError("no similarity scores to normalise")
    if mode == "clamp-l1":
        pos = np.maximum(etas, 0.0)
        total = pos.sum()
        if total <= 0:
            return np.full(etas.size, 1.0 / etas.size)
        return pos / total
    if mode == "softmax":
        z = np.exp(etas - etas.max())
        return z / z.sum()
    if mode == "signed-l1":
        total = np.abs(etas).sum()
        if total == 0:
            return np.full(etas.size, 1.0 / etas.size)
        return etas / total
    raise ValueError(f"unknown weight mode {mode!r}")


def meta_test_loss(spec: ArchSpec, theta_hat, test_tasks, weights) -> Tensor:
    """Similarity-weighted sum of test-task losses at the updated parameters.

    ``theta_hat`` may be a differentiable ``Tensor``; the weights are plain
    constants.
    """
    if not test_tasks:
        raise ValueError("meta-test loss needs at least one test task")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(test_tasks),):
        raise ShapeError(f"{weights.size} weights for {len(test_tasks)} test tasks", "meta_test_loss")
    theta = theta_hat if isinstance(theta_hat, Tensor) else Tensor(_flat(theta_hat))
    total = None
    for w, data in zip(weights, test_tasks):
        term = loss(spec, theta, data) * float(w)
        total = term if total is None else total + term
    return total


@dataclass
class StepResult:
    params: ParamSet
    loss: float
    meta_test_loss: float
    etas: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    gradient: np.ndarray | None = None


def meta_gradient(
    spec: ArchSpec,
    flat,
    train,
    tests,
    alpha: float,
    beta: float,
    weight_mode: str = "clamp-l1",
    grad_order: str = "exact",
    weights=None,
):
    """Gradient of ``L_i(Θ) + β G(Θ - α∇L_i(Θ))`` with similarity weights held fixed.

    Returns ``(gradient, L, G, etas, weights)``. Pass ``weights`` to skip the
    similarity computation.
    """
    theta = Tensor(np.array(_flat(flat), dtype=np.float64), requires_grad=True)
    exact = grad_order == "exact" and beta > 0
    L = loss(spec, theta, train)
    g = grad(L, theta, create_graph=exact)
    etas = []
    if weights is None:
        etas = [float(np.dot(g.data, loss_grad(spec, theta.data, d))) for d in tests]
        weights = normalize_weights(etas, weight_mode) if tests else np.zeros(0)
    if beta == 0 or not tests:
        G = meta_test_loss(spec, theta.data - alpha * g.data, tests, weights).item() if tests else 0.0
        return g.data, L.item(), G, etas, np.asarray(weights)
    if exact:
        theta_hat = theta - g * alpha
        G = meta_test_loss(spec, theta_hat, tests, weights)
        total = grad(L + G * beta, theta).data
    else:
        theta_hat = Tensor(theta.data - alpha * g.data, requires_grad=True)
        G = meta_test_loss(spec, theta_hat, tests, weights)
        total = g.data + beta * grad(G, theta_hat).data
    return total, L.item(), G.item(), etas, np.asarray(weights)


def check_finite(value: float, limit: float, what: str, task=None, iteration=None) -> None:
    if not np.isfinite(value) or abs(value) > limit:
        raise DivergenceError(f"{what} diverged ({value!r})", task=task, iteration=iteration)


def evaluate(spec: ArchSpec, params, heldout) -> float:
    """Fraction of correctly classified held-out samples."""
    if heldout.n == 0:
        raise ValueError("evaluation needs a non-empty dataset")
    pred = predictions(spec, _flat(params), heldout.inputs)
    return float(np.mean(pred == heldout.labels))


def taylor_residual(spec: ArchSpec, theta, train, test, alpha: float) -> float:
    """|G(Θ - α∇L) - G(Θ) + α ∇L·∇G|, the error of the first-order expansion."""
    flat = _flat(theta)
    gl = loss_grad(spec, flat, train)
    gg = loss_grad(spec, flat, test)
    moved = loss_value(spec, flat - alpha * gl, test)
    return abs(moved - loss_value(spec, flat, test) + alpha * float(np.dot(gl, gg)))
