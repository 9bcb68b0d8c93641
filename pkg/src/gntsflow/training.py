"""Monte-Carlo training corpus over randomized parameter sets and NLL training.

Corpus generation draws condition vectors with the Beta(2, 2) scheme
(alpha = 2U, theta = 10 tan(pi U / 2), beta uniform-symmetric inside its
bound, rho = 2U - 1), simulates exact standard-gNTS observations for each
set, and writes rows of (y1, y2, theta_1..theta_7) as little-endian float64
with a JSON sidecar.  Training minimizes the mean negative log-likelihood of
the conditional flow with ADAM, early-stops on a validation holdout, and
returns the best-validation checkpoint.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .crealnvp import ConditionVector, FlowModel
from .errors import DataError, NumericError, ParameterError, SamplerError
from .gnts import GStdNTSParams, beta_bound, sample_stdgnts
from .neuralnet import AdamState, adam_step

__all__ = [
    "TrainingConfig",
    "TrainingSet",
    "sample_training_condition",
    "build_training_set",
    "save_training_set",
    "load_training_set",
    "train_flow",
]

GENERATOR_VERSION = 1
ROW_WIDTH = 9  # 2 observation values + 7 condition values
_BETA_CLAMP = 0.999
_SANITY_MEAN = 0.2
_SANITY_VAR = (0.5, 2.0)
_MAX_REDRAWS_PER_SET = 100


@dataclass(frozen=True)
class TrainingConfig:
    """Corpus and optimizer settings for flow training."""

    n_param_sets: int = 2**12
    n_per_set: int = 2**10
    batch_size: int = 4096
    epochs: int = 200
    learning_rate: float = 1e-4
    val_fraction: float = 0.05
    patience: int = 10
    seed: int = 0
    train_dtype: str = "float32"
    alpha_range: tuple = (0.0, 2.0)

    def __post_init__(self) -> None:
        for name in ("n_param_sets", "n_per_set", "batch_size", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not (0.0 < self.val_fraction <= 0.5):
            raise ParameterError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction}")
        if not (self.learning_rate > 0.0):
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.train_dtype not in ("float32", "float64"):
            raise ParameterError(f"train_dtype must be float32 or float64, got {self.train_dtype}")
        ar = tuple(float(v) for v in self.alpha_range)
        if len(ar) != 2 or not (0.0 <= ar[0] < ar[1] <= 2.0):
            raise ParameterError(f"alpha_range must be 0 <= lo < hi <= 2, got {self.alpha_range}")
        object.__setattr__(self, "alpha_range", ar)


@dataclass
class TrainingSet:
    """In-memory corpus: rows of (y1, y2, theta_1..theta_7) plus sidecar info."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != ROW_WIDTH:
            raise DataError(f"training rows must have {ROW_WIDTH} columns, got {self.data.shape}")


def sample_training_condition(
    rng: np.random.Generator,
    alpha_range: tuple = (0.0, 2.0),
) -> ConditionVector:
    """Draw one condition vector with the Beta(2, 2) generation scheme.

    beta is clamped to 99.9% of its bound so the standardizing volatility
    stays strictly positive. alpha_range narrows the stability-index draw
    inside (0, 2); the default reproduces the full-range scheme exactly.
    """
    u = np.clip(rng.beta(2.0, 2.0, size=7), 1e-12, 1.0 - 1e-12)
    lo, hi = alpha_range
    alpha = lo + (hi - lo) * u[0:2]
    theta = 10.0 * np.tan(np.pi * u[2:4] / 2.0)
    bound = beta_bound(alpha, theta)
    beta = _BETA_CLAMP * bound * (2.0 * u[4:6] - 1.0)
    rho = float(np.clip(2.0 * u[6] - 1.0, -0.9999, 0.9999))
    return ConditionVector(
        alpha1=float(alpha[0]), alpha2=float(alpha[1]),
        theta1=float(theta[0]), theta2=float(theta[1]),
        beta1=float(beta[0]), beta2=float(beta[1]),
        rho=rho,
    )


def _passes_sanity(draws: np.ndarray) -> bool:
    mean = draws.mean(axis=0)
    var = draws.var(axis=0)
    return bool(
        np.all(np.abs(mean) < _SANITY_MEAN)
        and np.all((var > _SANITY_VAR[0]) & (var < _SANITY_VAR[1]))
    )


def build_training_set(cfg: TrainingConfig, rng: np.random.Generator) -> TrainingSet:
    """Generate the full corpus: n_param_sets conditions, n_per_set draws each.

    Each condition's sample must pass loose moment sanity gates (|mean| < 0.2,
    variance in [0.5, 2] per component); on a breach the condition is redrawn
    and the redraw count recorded in the sidecar metadata.
    """
    n_rows = cfg.n_param_sets * cfg.n_per_set
    data = np.empty((n_rows, ROW_WIDTH))
    redraws = 0
    for k in range(cfg.n_param_sets):
        for attempt in range(_MAX_REDRAWS_PER_SET + 1):
            cond = sample_training_condition(rng, alpha_range=cfg.alpha_range)
            try:
                draws = sample_stdgnts(cond.to_std_params(), cfg.n_per_set, rng)
            except SamplerError as exc:
                raise SamplerError(f"sampler failed for condition {cond}: {exc}") from exc
            if _passes_sanity(draws):
                break
            redraws += 1
        else:
            raise NumericError(
                f"condition set {k} failed moment sanity {_MAX_REDRAWS_PER_SET} times in a row"
            )
        lo = k * cfg.n_per_set
        block = data[lo : lo + cfg.n_per_set]
        block[:, 0:2] = draws
        block[:, 2:] = cond.to_array()
    if not np.all(np.isfinite(data)):
        raise NumericError("training corpus contains non-finite rows")
    meta = {
        "n_param_sets": cfg.n_param_sets,
        "n_per_set": cfg.n_per_set,
        "n_rows": n_rows,
        "seed": cfg.seed,
        "generator_version": GENERATOR_VERSION,
        "redraws": redraws,
    }
    return TrainingSet(data=data, meta=meta)


def save_training_set(ts: TrainingSet, path: str) -> None:
    """Write rows as little-endian float64 with a .json sidecar next to them."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(ts.data, dtype="<f8").tobytes())
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(ts.meta, fh, indent=2, sort_keys=True)


def load_training_set(path: str) -> TrainingSet:
    """Read a corpus written by save_training_set, validating row counts."""
    sidecar = path + ".json"
    if not os.path.exists(path) or not os.path.exists(sidecar):
        raise DataError(f"missing training set file or sidecar for {path}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed sidecar {sidecar}: {exc}") from exc
    raw = np.fromfile(path, dtype="<f8")
    if raw.size % ROW_WIDTH != 0:
        raise DataError(f"{path} does not contain whole {ROW_WIDTH}-column rows")
    data = raw.reshape(-1, ROW_WIDTH)
    if "n_rows" in meta and meta["n_rows"] != data.shape[0]:
        raise DataError(
            f"sidecar says {meta['n_rows']} rows but {path} holds {data.shape[0]}"
        )
    return TrainingSet(data=data, meta=meta)


def _mean_val_nll(model: FlowModel, rows: np.ndarray, chunk: int = 8192) -> float:
    total = 0.0
    for lo in range(0, rows.shape[0], chunk):
        part = rows[lo : lo + chunk]
        total += float(-model.log_density(part[:, 0:2], part[:, 2:]).sum())
    return total / rows.shape[0]


def _snapshot(model: FlowModel) -> list[np.ndarray]:
    return [p.copy() for p in model.parameters()]


def _restore(model: FlowModel, snap: list[np.ndarray]) -> None:
    for p, s in zip(model.parameters(), snap):
        p[:] = s


def train_flow(
    dataset: TrainingSet,
    cfg: TrainingConfig,
    progress=None,
    checkpoint_path: str | None = None,
    init_model: FlowModel | None = None,
) -> tuple[FlowModel, list[dict]]:
    """Train the conditional flow on a corpus by mean NLL with ADAM.

    Returns the best-validation checkpoint and a per-epoch history of
    dicts (epoch, train_nll, val_nll, best_val_nll).  Training stops early
    when validation NLL fails to improve for cfg.patience epochs, and aborts
    with the last good checkpoint if the loss turns non-finite.  If
    checkpoint_path is given, the running best weights are saved there after
    every improving epoch.

    progress, when given, is called with each history record as it is made.
    """
    from .crealnvp import save_model  # local import to avoid cycle noise

    t_start = time.perf_counter()
    if dataset.data.shape[0] < 2:
        raise DataError("training set must contain at least 2 rows")
    rng = np.random.default_rng(cfg.seed)
    run_meta = {
        "corpus": dict(dataset.meta),
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "val_fraction": cfg.val_fraction,
        "patience": cfg.patience,
        "train_seed": cfg.seed,
        "train_dtype": cfg.train_dtype,
    }
    if init_model is None:
        model = FlowModel(rng, dtype=np.dtype(cfg.train_dtype), metadata=run_meta)
    else:
        # resume: keep the weights, restart the optimizer state
        model = init_model.astype(np.dtype(cfg.train_dtype))
        run_meta["resumed"] = True
        model.metadata.update(run_meta)
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.learning_rate)

    n_rows = dataset.data.shape[0]
    perm = rng.permutation(n_rows)
    n_val = max(1, int(round(cfg.val_fraction * n_rows)))
    val_rows = dataset.data[perm[:n_val]]
    train_data = dataset.data.astype(np.dtype(cfg.train_dtype), copy=False)
    train_idx = perm[n_val:]

    best_val = _mean_val_nll(model, val_rows)
    best_snap = _snapshot(model)
    best_epoch = 0
    history: list[dict] = []
    stale = 0
    aborted = False
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        train_total = 0.0
        n_seen = 0
        for lo in range(0, order.size, cfg.batch_size):
            batch = train_data[order[lo : lo + cfg.batch_size]]
            nll, grads = model.nll_and_grads(batch[:, 0:2], batch[:, 2:])
            if not np.isfinite(nll):
                aborted = True
                break
            adam_step(params, grads, state)
            train_total += nll * batch.shape[0]
            n_seen += batch.shape[0]
        if aborted:
            break
        train_nll = train_total / n_seen
        val_nll = _mean_val_nll(model, val_rows)
        if np.isfinite(val_nll) and val_nll < best_val:
            best_val = val_nll
            best_snap = _snapshot(model)
            best_epoch = epoch
            stale = 0
            if checkpoint_path is not None:
                _restore_metadata(model, best_epoch, best_val, epoch)
                save_model(model, checkpoint_path)
        else:
            stale += 1
        record = {
            "epoch": epoch,
            "train_nll": train_nll,
            "val_nll": val_nll,
            "best_val_nll": best_val,
        }
        history.append(record)
        if progress is not None:
            progress(record)
        if stale >= cfg.patience:
            break
    _restore(model, best_snap)
    _restore_metadata(model, best_epoch, best_val, len(history))
    model.metadata["aborted_non_finite"] = aborted
    model.metadata["adam_skipped"] = state.skipped
    model.metadata["train_seconds"] = round(time.perf_counter() - t_start, 3)
    return model, history


def _restore_metadata(model: FlowModel, best_epoch: int, best_val: float, epochs_run: int) -> None:
    model.metadata["best_epoch"] = best_epoch
    model.metadata["best_val_nll"] = best_val
    model.metadata["epochs_run"] = epochs_run
