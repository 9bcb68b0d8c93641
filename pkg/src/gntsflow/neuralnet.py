"""Minimal dense feed-forward network with hand-derived reverse-mode gradients.

The network applies LeakyReLU after every hidden layer and identity on the
output layer.  Forward passes cache the pre-activations needed for an exact
backward pass; the ADAM update implements the canonical bias-corrected
recurrences.  Everything operates on batches: inputs have shape (batch, dim).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

__all__ = ["DenseNet", "AdamState", "adam_step"]

LEAKY_SLOPE = 0.01


class DenseNet:
    """Fully connected net: layer_dims[0] -> ... -> layer_dims[-1].

    Weights use Kaiming-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in));
    biases start at zero.  With zero_init_output the final layer's weights and
    bias start at zero so the net initially outputs zeros.
    """

    def __init__(
        self,
        layer_dims: list[int],
        rng: np.random.Generator,
        slope: float = LEAKY_SLOPE,
        zero_init_output: bool = False,
        dtype=np.float64,
    ) -> None:
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ParameterError(f"layer_dims must be >= 2 positive entries, got {layer_dims}")
        self.layer_dims = list(layer_dims)
        self.slope = float(slope)
        self.dtype = np.dtype(dtype)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            lim = np.sqrt(6.0 / fan_in)
            self.weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))
        if zero_init_output:
            self.weights[-1][:] = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        """Flat list of parameter arrays (weights then bias, per layer)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        """Batched forward pass; returns (output, cache for backward)."""
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.layer_dims[0]:
            raise ParameterError(
                f"input must have shape (batch, {self.layer_dims[0]}), got {x.shape}"
            )
        pre: list[np.ndarray] = []
        act = x
        acts = [x]
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = act @ w
            z += b
            if l < last:
                pre.append(z)
                act = np.maximum(z, self.slope * z)  # LeakyReLU, slope < 1
                acts.append(act)
            else:
                act = z
        return act, (acts, pre)

    def backward(
        self, cache: tuple, grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (weight grads, bias grads, input grad), shapes matching the
        parameters and the forward input.
        """
        acts, pre = cache
        grad_ws: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        grad_bs: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        dz = np.asarray(grad_out)
        for l in range(self.n_layers - 1, -1, -1):
            grad_ws[l] = acts[l].T @ dz
            grad_bs[l] = dz.sum(axis=0)
            da = dz @ self.weights[l].T
            if l > 0:
                z = pre[l - 1]
                dz = da * self.slope
                np.copyto(dz, da, where=z > 0.0)
            else:
                dz = da
        return grad_ws, grad_bs, dz


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for the ADAM optimizer."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = field(default=0)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-4, **kw) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            **kw,
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One in-place ADAM update of params given grads.

    A non-finite gradient anywhere skips the whole update (moments still
    decay) and increments state.skipped, so a single bad batch cannot poison
    the parameters.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ParameterError("params/grads do not match the optimizer state")
    finite = all(np.all(np.isfinite(g)) for g in grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    if not finite:
        state.skipped += 1
        for m, v in zip(state.m, state.v):
            m *= b1
            v *= b2
        return
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
