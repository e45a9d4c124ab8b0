"""Graph wrapper, flat-gradient helpers and the gradient-through-update rule."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import CapabilityError, ShapeError, StateError
from .tensor import Tensor, grad


class CompGraph:
    """A differentiable function of parameter leaves and inputs.

    ``fn(params, *inputs)`` receives the parameter leaves as a list of
    tensors. ``forward`` validates input shapes against ``input_shapes``;
    ``backward`` returns the gradient with respect to all parameter leaves,
    concatenated in declaration order (row-major within each leaf).
    """

    def __init__(
        self,
        fn: Callable,
        input_shapes: Sequence[tuple] = (),
        params: Sequence[np.ndarray] = (),
        higher_order_capable: bool = False,
    ):
        self.fn = fn
        self.input_shapes = [tuple(s) for s in input_shapes]
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        self.higher_order_capable = higher_order_capable
        self._leaves: list[Tensor] | None = None
        self._output: Tensor | None = None

    def __call__(self, *args):
        return self.fn(*args)

    def forward(self, *inputs) -> Tensor:
        if len(inputs) != len(self.input_shapes):
            raise ShapeError(f"expected {len(self.input_shapes)} inputs, got {len(inputs)}", "inputs")
        tensors = []
        for k, (x, shape) in enumerate(zip(inputs, self.input_shapes)):
            t = x if isinstance(x, Tensor) else Tensor(x)
            if t.shape != shape:
                raise ShapeError(f"input shape {t.shape} != declared {shape}", f"input[{k}]")
            tensors.append(t)
        self._leaves = [Tensor(p, requires_grad=True) for p in self.params]
        self._output = self.fn(self._leaves, *tensors)
        return self._output

    @property
    def output(self) -> Tensor:
        if self._output is None:
            raise StateError("forward has not been run")
        return self._output

    def backward(self, seed=None) -> np.ndarray:
        if self._output is None:
            raise StateError("backward called before forward")
        grads = grad(self._output, self._leaves, seed=seed, create_graph=self.higher_order_capable)
        return flatten([g.data for g in grads])


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(a) for a in arrays])


def grad_through_update(
    outer_loss_fn: Callable[[Tensor], Tensor],
    params,
    inner_lr: float,
    inner_loss_fn: Callable[[Tensor], Tensor],
    first_order: bool = False,
) -> np.ndarray:
    """d/dθ of ``outer(θ - lr * ∇inner(θ))``.

    Exact mode differentiates through the inner gradient, i.e. returns
    ``(I - lr H_inner) ∇outer(θ̂)``. ``first_order`` drops the Hessian term and
    returns ``∇outer(θ̂)``.
    """
    if not first_order and isinstance(inner_loss_fn, CompGraph) and not inner_loss_fn.higher_order_capable:
        raise CapabilityError("exact meta-gradient needs a higher-order capable graph")
    theta = Tensor(np.array(params, dtype=np.float64, copy=True), requires_grad=True)
    inner = inner_loss_fn(theta)
    g = grad(inner, theta, create_graph=not first_order)
    if first_order:
        theta_hat = Tensor(theta.data - inner_lr * g.data, requires_grad=True)
        return grad(outer_loss_fn(theta_hat), theta_hat).data
    theta_hat = theta - g * inner_lr
    return grad(outer_loss_fn(theta_hat), theta).data
