"""Conditional RealNVP over R^N with parameter-vector conditioning.

The flow composes J masked affine coupling layers.  Layer j passes the masked
coordinates b*y through unchanged and maps the rest by

    forward:  (y - t_j(b*y, Theta)) * exp(-s_j(b*y, Theta))
    inverse:  z * exp(s_j(b*z, Theta)) + t_j(b*z, Theta)

where s_j, t_j are dense nets taking the masked vector concatenated with a
normalized embedding of the 7-value condition Theta = (alpha1, alpha2,
theta1, theta2, beta1, beta2, rho).  The prior is a standard Gaussian, so

    log p(y | Theta) = log N(f(y); 0, I) - sum_j (1 - b_j) . s_j(...)

with the sum entering the forward pass as its log-Jacobian.  Scale outputs
pass through a soft clamp c*tanh(s/c) to keep exp(+-s) bounded during
training.  Gradients of the negative log-likelihood with respect to every net
parameter are computed by an exact hand-derived backward pass.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .gnts import GStdNTSParams, beta_bound
from .neuralnet import LEAKY_SLOPE, DenseNet

__all__ = [
    "CONDITION_FIELDS",
    "ConditionVector",
    "normalize_conditions",
    "make_masks",
    "FlowModel",
    "save_model",
    "load_model",
]

# Fixed slot order of the condition vector throughout the package.
CONDITION_FIELDS = ("alpha1", "alpha2", "theta1", "theta2", "beta1", "beta2", "rho")

SCALE_CLAMP = 5.0
_THETA_ARCTAN_SCALE = 10.0
FILE_VERSION = 1


@dataclass(frozen=True)
class ConditionVector:
    """The 7 distribution parameters fed to every coupling layer."""

    alpha1: float
    alpha2: float
    theta1: float
    theta2: float
    beta1: float
    beta2: float
    rho: float

    def __post_init__(self) -> None:
        for name in ("alpha1", "alpha2"):
            a = getattr(self, name)
            if not (0.0 < a < 2.0):
                raise ParameterError(f"{name} must lie in (0, 2), got {a}")
        for name in ("theta1", "theta2"):
            th = getattr(self, name)
            if not (th > 0.0):
                raise ParameterError(f"{name} must be positive, got {th}")
        for k in (1, 2):
            b = getattr(self, f"beta{k}")
            bound = float(beta_bound(getattr(self, f"alpha{k}"), getattr(self, f"theta{k}")))
            if not (abs(b) < bound):
                raise ParameterError(f"|beta{k}| = {abs(b)} is at or beyond its bound {bound}")
        if not (-1.0 < self.rho < 1.0):
            raise ParameterError(f"rho must lie in (-1, 1), got {self.rho}")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in CONDITION_FIELDS])

    @classmethod
    def from_array(cls, values) -> "ConditionVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ParameterError(f"condition vector must have 7 entries, got shape {values.shape}")
        return cls(**dict(zip(CONDITION_FIELDS, map(float, values))))

    @classmethod
    def from_std_params(cls, std: GStdNTSParams) -> "ConditionVector":
        if std.dim != 2:
            raise ParameterError("condition vectors describe 2-dimensional processes")
        return cls(
            alpha1=float(std.alpha[0]), alpha2=float(std.alpha[1]),
            theta1=float(std.theta[0]), theta2=float(std.theta[1]),
            beta1=float(std.beta[0]), beta2=float(std.beta[1]),
            rho=float(std.R[0, 1]),
        )

    def to_std_params(self) -> GStdNTSParams:
        return GStdNTSParams(
            alpha=[self.alpha1, self.alpha2],
            theta=[self.theta1, self.theta2],
            beta=[self.beta1, self.beta2],
            R=[[1.0, self.rho], [self.rho, 1.0]],
        )


def normalize_conditions(theta_raw: np.ndarray) -> np.ndarray:
    """Map raw condition rows (B, 7) to a well-scaled net embedding.

    alpha -> alpha/2 in (0, 1); theta -> (2/pi) arctan(theta/10) in (0, 1);
    beta -> beta / beta_bound(alpha, theta) in (-1, 1); rho unchanged.
    """
    theta_raw = np.asarray(theta_raw, dtype=float)
    emb = np.empty_like(theta_raw)
    emb[:, 0:2] = theta_raw[:, 0:2] / 2.0
    emb[:, 2:4] = (2.0 / np.pi) * np.arctan(theta_raw[:, 2:4] / _THETA_ARCTAN_SCALE)
    emb[:, 4:6] = theta_raw[:, 4:6] / beta_bound(theta_raw[:, 0:2], theta_raw[:, 2:4])
    emb[:, 6] = theta_raw[:, 6]
    return emb


def make_masks(N: int, J: int, n_ones: int) -> list[np.ndarray]:
    """Alternating masks: first (1,..,1,0,..,0) with n_ones ones, then its complement."""
    if not (1 <= n_ones < N):
        raise ParameterError(f"n_ones must lie in [1, {N - 1}], got {n_ones}")
    if J < 1:
        raise ParameterError(f"J must be >= 1, got {J}")
    first = np.zeros(N)
    first[:n_ones] = 1.0
    masks = []
    for j in range(J):
        masks.append(first.copy() if j % 2 == 0 else 1.0 - first)
    return masks


def _soft_clamp(s_raw: np.ndarray) -> np.ndarray:
    return SCALE_CLAMP * np.tanh(s_raw / SCALE_CLAMP)


class FlowModel:
    """Conditional RealNVP with J coupling layers of paired scale/translate nets."""

    def __init__(
        self,
        rng: np.random.Generator,
        N: int = 2,
        J: int = 6,
        hidden: int = 128,
        n_hidden_layers: int = 4,
        metadata: dict | None = None,
        dtype=np.float64,
    ) -> None:
        self.N = int(N)
        self.J = int(J)
        self.hidden = int(hidden)
        self.n_hidden_layers = int(n_hidden_layers)
        self.cond_dim = len(CONDITION_FIELDS)
        self.dtype = np.dtype(dtype)
        self.masks = make_masks(self.N, self.J, max(1, self.N // 2))
        dims = [self.N + self.cond_dim] + [self.hidden] * self.n_hidden_layers + [self.N]
        # Zero output init makes the untrained flow the identity map.
        self.scale_nets = [
            DenseNet(dims, rng, zero_init_output=True, dtype=self.dtype) for _ in range(self.J)
        ]
        self.translate_nets = [
            DenseNet(dims, rng, zero_init_output=True, dtype=self.dtype) for _ in range(self.J)
        ]
        self.metadata = dict(metadata or {})

    # -- shaping helpers -------------------------------------------------

    def _check_points(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[None, :]
        if y.ndim != 2 or y.shape[1] != self.N:
            raise ParameterError(f"points must have shape (batch, {self.N}), got {y.shape}")
        return y

    def _embed(self, theta_raw, batch: int) -> np.ndarray:
        theta_raw = np.asarray(theta_raw, dtype=float)
        if theta_raw.ndim == 1:
            theta_raw = np.broadcast_to(theta_raw, (batch, theta_raw.size))
        if theta_raw.shape != (batch, self.cond_dim):
            raise ParameterError(
                f"conditions must have shape ({batch}, {self.cond_dim}), got {theta_raw.shape}"
            )
        return normalize_conditions(theta_raw)

    def astype(self, dtype) -> "FlowModel":
        """Convert all weights in place (training runs float32, evaluation float64)."""
        dt = np.dtype(dtype)
        self.dtype = dt
        for net in self.scale_nets + self.translate_nets:
            net.dtype = dt
            net.weights = [w.astype(dt) for w in net.weights]
            net.biases = [b.astype(dt) for b in net.biases]
        return self

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for j in range(self.J):
            out.extend(self.scale_nets[j].parameters())
            out.extend(self.translate_nets[j].parameters())
        return out

    # -- exact maps ------------------------------------------------------

    def flow_forward(self, y, theta_raw) -> tuple[np.ndarray, np.ndarray]:
        """Map data to latent: returns (z, log|det df/dy|) with shapes (B, N), (B,)."""
        y = self._check_points(y)
        emb = self._embed(theta_raw, y.shape[0])
        logdet = np.zeros(y.shape[0])
        for j in range(self.J):
            b = self.masks[j]
            net_in = np.concatenate([b * y, emb], axis=1)
            s = _soft_clamp(self.scale_nets[j].forward(net_in)[0])
            t = self.translate_nets[j].forward(net_in)[0]
            y = b * y + (1.0 - b) * ((y - t) * np.exp(-s))
            logdet -= ((1.0 - b) * s).sum(axis=1)
        if not np.all(np.isfinite(y)):
            raise NumericError("flow_forward produced non-finite values")
        return y, logdet

    def flow_inverse(self, z, theta_raw) -> np.ndarray:
        """Map latent to data: exact algebraic inverse, layers in reverse order."""
        z = self._check_points(z)
        emb = self._embed(theta_raw, z.shape[0])
        for j in range(self.J - 1, -1, -1):
            b = self.masks[j]
            net_in = np.concatenate([b * z, emb], axis=1)
            s = _soft_clamp(self.scale_nets[j].forward(net_in)[0])
            t = self.translate_nets[j].forward(net_in)[0]
            z = b * z + (1.0 - b) * (z * np.exp(s) + t)
        if not np.all(np.isfinite(z)):
            raise NumericError("flow_inverse produced non-finite values")
        return z

    def log_density(self, y, theta_raw) -> np.ndarray:
        """log p(y | Theta) under the flow, shape (B,)."""
        z, logdet = self.flow_forward(y, theta_raw)
        log_prior = -0.5 * (z**2).sum(axis=1) - 0.5 * self.N * np.log(2.0 * np.pi)
        return log_prior + logdet

    def sample(self, theta_raw, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n model samples for one condition by inverting prior draws."""
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        z = rng.standard_normal((n, self.N))
        return self.flow_inverse(z, theta_raw)

    # -- training support ------------------------------------------------

    def nll_and_grads(self, y, theta_raw) -> tuple[float, list[np.ndarray]]:
        """Mean negative log-likelihood of a batch and its parameter gradients.

        The backward pass mirrors the forward composition exactly: for each
        layer, d(loss)/ds has a direct log-det term plus the term through the
        transformed coordinate, d(loss)/dt flows through exp(-s), and the
        running input gradient splits into the masked passthrough (plus both
        nets' input gradients) and the scaled unmasked part.
        """
        y = self._check_points(y).astype(self.dtype, copy=False)
        batch = y.shape[0]
        emb = self._embed(theta_raw, batch).astype(self.dtype, copy=False)
        masks = [m.astype(self.dtype, copy=False) for m in self.masks]
        caches = []
        for j in range(self.J):
            b = masks[j]
            net_in = np.concatenate([b * y, emb], axis=1)
            s_out, cache_s = self.scale_nets[j].forward(net_in)
            s = _soft_clamp(s_out)
            t, cache_t = self.translate_nets[j].forward(net_in)
            y = b * y + (1.0 - b) * ((y - t) * np.exp(-s))
            caches.append((b, s, cache_s, cache_t, y))
        z = y
        nll = float(
            0.5 * (z**2).sum(axis=1, dtype=np.float64).mean()
            + 0.5 * self.N * np.log(2.0 * np.pi)
            + sum(((1.0 - c[0]) * c[1]).sum(axis=1, dtype=np.float64).mean() for c in caches)
        )
        grads: dict[int, list[np.ndarray]] = {}
        g = z / batch
        for j in range(self.J - 1, -1, -1):
            b, s, cache_s, cache_t, y_next = caches[j]
            exp_neg_s = np.exp(-s)
            ds = (1.0 - b) * (1.0 / batch - g * y_next)
            ds_raw = ds * (1.0 - (s / SCALE_CLAMP) ** 2)
            dt = -(1.0 - b) * g * exp_neg_s
            gw_s, gb_s, din_s = self.scale_nets[j].backward(cache_s, ds_raw)
            gw_t, gb_t, din_t = self.translate_nets[j].backward(cache_t, dt)
            layer = []
            for w, bias in zip(gw_s, gb_s):
                layer.append(w)
                layer.append(bias)
            for w, bias in zip(gw_t, gb_t):
                layer.append(w)
                layer.append(bias)
            grads[j] = layer
            g = b * (g + din_s[:, : self.N] + din_t[:, : self.N]) + (1.0 - b) * g * exp_neg_s
        flat: list[np.ndarray] = []
        for j in range(self.J):
            flat.extend(grads[j])
        return nll, flat


def save_model(model: FlowModel, path) -> None:
    """Write the model to a JSON weights file (flat row-major arrays)."""

    def net_doc(net: DenseNet) -> dict:
        return {
            "layer_dims": net.layer_dims,
            "weights": [w.ravel().tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
        }

    doc = {
        "version": FILE_VERSION,
        "kind": "crealnvp",
        "N": model.N,
        "J": model.J,
        "hidden": model.hidden,
        "n_hidden_layers": model.n_hidden_layers,
        "cond_dim": model.cond_dim,
        "cond_fields": list(CONDITION_FIELDS),
        "cond_normalization": {
            "alpha": "alpha / 2",
            "theta": f"(2/pi) * arctan(theta / {_THETA_ARCTAN_SCALE})",
            "beta": "beta / (2 theta^(1 - alpha/4) / sqrt(alpha (2 - alpha)))",
            "rho": "identity",
        },
        "scale_clamp": SCALE_CLAMP,
        "leaky_slope": LEAKY_SLOPE,
        "masks": [m.tolist() for m in model.masks],
        "metadata": model.metadata,
        "scale_nets": [net_doc(net) for net in model.scale_nets],
        "translate_nets": [net_doc(net) for net in model.translate_nets],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_model(path) -> FlowModel:
    """Load a model written by save_model; checks the version field."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read weights file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "crealnvp":
        raise DataError(f"{path} is not a flow weights file")
    version = doc.get("version")
    if version != FILE_VERSION:
        raise DataError(
            f"weights file version {version!r} is not supported (expected {FILE_VERSION})"
        )
    required = {"N", "J", "hidden", "n_hidden_layers", "masks", "scale_nets", "translate_nets"}
    missing = required - set(doc)
    if missing:
        raise DataError(f"weights file missing fields: {sorted(missing)}")
    model = FlowModel(
        rng=np.random.default_rng(0),
        N=doc["N"],
        J=doc["J"],
        hidden=doc["hidden"],
        n_hidden_layers=doc["n_hidden_layers"],
        metadata=doc.get("metadata", {}),
    )
    masks = [np.asarray(m, dtype=float) for m in doc["masks"]]
    if len(masks) != model.J or any(m.shape != (model.N,) for m in masks):
        raise DataError("weights file has inconsistent masks")
    model.masks = masks

    def fill(net: DenseNet, net_doc: dict) -> None:
        if net_doc["layer_dims"] != net.layer_dims:
            raise DataError(
                f"weights file layer dims {net_doc['layer_dims']} do not match {net.layer_dims}"
            )
        if len(net_doc["weights"]) != net.n_layers or len(net_doc["biases"]) != net.n_layers:
            raise DataError(
                f"weights file stores {len(net_doc['weights'])} weight layers, "
                f"expected {net.n_layers}"
            )
        for l, (w_flat, b_vals) in enumerate(zip(net_doc["weights"], net_doc["biases"])):
            w = np.asarray(w_flat, dtype=float).reshape(net.weights[l].shape)
            net.weights[l] = w
            net.biases[l] = np.asarray(b_vals, dtype=float)

    if len(doc["scale_nets"]) != model.J or len(doc["translate_nets"]) != model.J:
        raise DataError("weights file has the wrong number of coupling nets")
    try:
        for net, net_doc in zip(model.scale_nets, doc["scale_nets"]):
            fill(net, net_doc)
        for net, net_doc in zip(model.translate_nets, doc["translate_nets"]):
            fill(net, net_doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"weights file is corrupted: {exc}") from exc
    return model
