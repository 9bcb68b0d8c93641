"""Market-data fitting: returns, moments, flow-based MLE, and a 2-D KS test.

The fitting pipeline is two-stage. Per-component location and scale of the
daily log returns are fixed at the sample mean and sample standard deviation,
so the flow only has to explain the standardized joint law; the seven shape
parameters (alpha, theta, beta per component, plus rho) are then found by
maximizing the flow log-likelihood of the standardized returns with
Nelder-Mead over an unconstrained reparameterization.

Goodness of fit uses a two-sample Fasano-Franceschini statistic between the
standardized data and a large flow sample, with the usual asymptotic p-value
including the correlation correction.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .crealnvp import ConditionVector, FlowModel
from .errors import DataError, NumericError, ParameterError
from .gnts import GStdNTSParams, beta_bound

DEFAULT_DT = 1.0 / 252.0
DEFAULT_N_MODEL = 100_000
_BETA_HEADROOM = 1.0 - 1e-9


@dataclass(frozen=True)
class MarketSeries:
    """Aligned daily closes: exchange rate F(t) and foreign index S(t)."""

    dates: tuple
    fx: np.ndarray
    index: np.ndarray
    n_dropped: int = 0

    def __post_init__(self) -> None:
        fx = np.asarray(self.fx, dtype=float)
        index = np.asarray(self.index, dtype=float)
        dates = tuple(self.dates)
        if fx.ndim != 1 or index.ndim != 1 or fx.size != index.size or len(dates) != fx.size:
            raise DataError("dates, fx and index must have equal lengths")
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(index))):
            raise DataError("prices must be finite")
        if np.any(fx <= 0.0) or np.any(index <= 0.0):
            raise DataError("prices must be positive")
        for i in range(1, len(dates)):
            if dates[i] <= dates[i - 1]:
                raise DataError(f"dates must be strictly increasing, violated at {dates[i]}")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return self.fx.size


@dataclass(frozen=True)
class ReturnPanel:
    """Joint daily log returns of the exchange rate and the quanto value V = S F."""

    x_f: np.ndarray
    x_v: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        x_f = np.asarray(self.x_f, dtype=float)
        x_v = np.asarray(self.x_v, dtype=float)
        if x_f.ndim != 1 or x_v.ndim != 1 or x_f.size != x_v.size:
            raise DataError("x_f and x_v must be equal-length vectors")
        if not (np.all(np.isfinite(x_f)) and np.all(np.isfinite(x_v))):
            raise DataError("returns must be finite")
        if not (self.dt > 0.0):
            raise ParameterError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "x_f", x_f)
        object.__setattr__(self, "x_v", x_v)

    def __len__(self) -> int:
        return self.x_f.size

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([self.x_f, self.x_v])


@dataclass(frozen=True)
class FitResult:
    """Two-stage fit: moments (m, s) plus standardized shape parameters."""

    m: np.ndarray
    s: np.ndarray
    std_params: GStdNTSParams
    loglik: float
    ks_stat: float
    ks_p: float
    dt: float = DEFAULT_DT
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if m.shape != (self.std_params.dim,) or s.shape != m.shape:
            raise ParameterError("m and s must match the dimension of std_params")
        if np.any(s <= 0.0):
            raise ParameterError("every s must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "s", s)


def load_market_csv(path) -> MarketSeries:
    """Read a `date,fx,index` CSV; rows with blank fields are dropped with a warning.

    Raises:
        DataError: on a malformed header or row (naming the line), a
            non-positive or non-finite price, or out-of-order dates.
    """
    dates: list[datetime.date] = []
    fx: list[float] = []
    index: list[float] = []
    dropped = 0
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open market CSV {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "fx", "index"]:
            raise DataError(f"expected header 'date,fx,index', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"line {lineno}: expected 3 fields, got {len(row)}")
            if any(f.strip() == "" for f in row):
                dropped += 1
                continue
            try:
                d = datetime.date.fromisoformat(row[0].strip())
                f_px = float(row[1])
                s_px = float(row[2])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            if not (math.isfinite(f_px) and math.isfinite(s_px)):
                raise DataError(f"line {lineno}: prices must be finite")
            if f_px <= 0.0 or s_px <= 0.0:
                raise DataError(f"line {lineno}: prices must be positive")
            if dates and d <= dates[-1]:
                raise DataError(f"line {lineno}: date {d} not after {dates[-1]}")
            dates.append(d)
            fx.append(f_px)
            index.append(s_px)
    if dropped:
        warnings.warn(f"dropped {dropped} row(s) with missing values", stacklevel=2)
    return MarketSeries(dates=tuple(dates), fx=np.array(fx), index=np.array(index),
                        n_dropped=dropped)


def compute_returns(series: MarketSeries, dt: float = DEFAULT_DT) -> ReturnPanel:
    """Daily log returns of F and of V = S F; x_v - x_f is the index's own return."""
    if len(series) < 2:
        raise DataError(f"need at least 2 rows to form returns, got {len(series)}")
    log_f = np.log(series.fx)
    log_v = np.log(series.fx * series.index)
    return ReturnPanel(x_f=np.diff(log_f), x_v=np.diff(log_v), dt=dt)


def sample_moments(panel: ReturnPanel) -> tuple[np.ndarray, np.ndarray]:
    """Per-component mean and unbiased standard deviation of (x_f, x_v)."""
    if len(panel) < 2:
        raise DataError(f"need at least 2 returns for moments, got {len(panel)}")
    x = panel.as_matrix()
    m = x.mean(axis=0)
    s = x.std(axis=0, ddof=1)
    if np.any(s <= 0.0) or not np.all(np.isfinite(s)):
        raise DataError("degenerate data: a return series has zero variance")
    return m, s


# ---------------------------------------------------------------------------
# two-dimensional Kolmogorov-Smirnov (Fasano-Franceschini, two-sample)


def count_dominated(px, py, qx, qy) -> np.ndarray:
    """#(qx <= px and qy <= py) for every probe, in O((m+n) log^2 n).

    Points are sorted by x; a prefix of that order is decomposed into dyadic
    blocks, and each level stores its blocks' y-ranks sorted with a per-block
    key offset so one searchsorted per level counts y-ranks below the probe's
    threshold inside every block at once.
    """
    px = np.asarray(px, dtype=float).ravel()
    py = np.asarray(py, dtype=float).ravel()
    qx = np.asarray(qx, dtype=float).ravel()
    qy = np.asarray(qy, dtype=float).ravel()
    if qx.size != qy.size or px.size != py.size:
        raise ParameterError("coordinate vectors must have matching lengths")
    n = qx.size
    counts = np.zeros(px.size, dtype=np.int64)
    if n == 0 or px.size == 0:
        return counts
    order = np.argsort(qx, kind="stable")
    sx = qx[order]
    uy = np.unique(qy)
    n_ranks = uy.size
    y_rank = np.searchsorted(uy, qy[order], side="left").astype(np.int64)
    x_rank = np.searchsorted(sx, px, side="right").astype(np.int64)
    y_thresh = np.searchsorted(uy, py, side="right").astype(np.int64) - 1

    n_pad = 1
    levels = 0
    while n_pad < n:
        n_pad <<= 1
        levels += 1
    padded = np.full(n_pad, n_ranks, dtype=np.int64)  # sentinel above any real rank
    padded[:n] = y_rank
    base = np.int64(n_ranks + 1)
    for lev in range(levels + 1):
        width = np.int64(1) << lev
        sel = ((x_rank >> lev) & 1) == 1
        if not np.any(sel):
            continue
        blocks = np.sort(padded.reshape(n_pad >> lev, width), axis=1)
        flat = (blocks + base * np.arange(n_pad >> lev, dtype=np.int64)[:, None]).ravel()
        start = x_rank[sel] & ~((np.int64(2) << lev) - 1)
        block_idx = start >> lev
        queries = block_idx * base + y_thresh[sel]
        counts[sel] += np.searchsorted(flat, queries, side="right") - start
    return counts


def _count_dominated_naive(px, py, qx, qy) -> np.ndarray:
    # quadratic reference used by the property tests
    px = np.asarray(px, dtype=float)[:, None]
    py = np.asarray(py, dtype=float)[:, None]
    qx = np.asarray(qx, dtype=float)[None, :]
    qy = np.asarray(qy, dtype=float)[None, :]
    return ((qx <= px) & (qy <= py)).sum(axis=1)


def _quadrant_fractions(px, py, qx, qy) -> np.ndarray:
    """Fractions of (qx, qy) in the four <=-quadrants anchored at each probe."""
    n = qx.size
    a = count_dominated(px, py, qx, qy)
    cx = np.searchsorted(np.sort(qx), px, side="right")
    cy = np.searchsorted(np.sort(qy), py, side="right")
    out = np.empty((px.size, 4))
    out[:, 0] = a
    out[:, 1] = cx - a
    out[:, 2] = cy - a
    out[:, 3] = n - cx - cy + a
    out /= n
    return out


def _max_quadrant_gap(px, py, sample1, sample2) -> float:
    f1 = _quadrant_fractions(px, py, sample1[:, 0], sample1[:, 1])
    f2 = _quadrant_fractions(px, py, sample2[:, 0], sample2[:, 1])
    return float(np.abs(f1 - f2).max())


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.corrcoef(x, y)[0, 1]
    return float(r) if np.isfinite(r) else 0.0


def ks2d_two_sample(sample1, sample2) -> tuple[float, float]:
    """Two-sample 2-D KS statistic and asymptotic p-value.

    The statistic averages the two maximal quadrant-fraction gaps (one scan
    anchored at each sample's points); the p-value uses the asymptotic KS
    distribution with the effective sample size sqrt(n1 n2 / (n1 + n2)) and
    the standard correlation correction.
    """
    a = np.asarray(sample1, dtype=float)
    b = np.asarray(sample2, dtype=float)
    for name, arr in (("sample1", a), ("sample2", b)):
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
            raise ParameterError(f"{name} must be a nonempty (n, 2) array, got {arr.shape}")
    d1 = _max_quadrant_gap(a[:, 0], a[:, 1], a, b)
    d2 = _max_quadrant_gap(b[:, 0], b[:, 1], a, b)
    d = 0.5 * (d1 + d2)
    n1, n2 = a.shape[0], b.shape[0]
    sqen = math.sqrt(n1 * n2 / (n1 + n2))
    r1 = _pearson(a[:, 0], a[:, 1])
    r2 = _pearson(b[:, 0], b[:, 1])
    rbar = math.sqrt(max(0.0, 1.0 - 0.5 * (r1 * r1 + r2 * r2)))
    lam = d * sqen / (1.0 + rbar * (0.25 - 0.75 / sqen))
    p = float(stats.kstwobign.sf(lam))
    return d, p


def ks2d_test(
    sample,
    flow: FlowModel,
    theta_raw,
    n_model: int = DEFAULT_N_MODEL,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Goodness of fit of a flow at theta_raw against an observed 2-D sample.

    The model CDF is proxied by n_model draws through the flow inverse.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_model < 2:
        raise ParameterError(f"n_model must be at least 2, got {n_model}")
    model_draws = flow.sample(theta_raw, int(n_model), rng)
    return ks2d_two_sample(sample, model_draws)


# ---------------------------------------------------------------------------
# maximum likelihood over the unconstrained reparameterization


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _eta_to_theta(eta: np.ndarray) -> np.ndarray:
    alpha = 2.0 * _sigmoid(eta[0:2])
    theta = np.exp(eta[2:4])
    beta = beta_bound(alpha, theta) * np.tanh(eta[4:6]) * _BETA_HEADROOM
    rho = 2.0 * _sigmoid(eta[6]) - 1.0
    out = np.empty(7)
    out[0:2] = alpha
    out[2:4] = theta
    out[4:6] = beta
    out[6] = rho
    return out


def _theta_to_eta(theta_raw: np.ndarray) -> np.ndarray:
    theta_raw = np.asarray(theta_raw, dtype=float)
    alpha = theta_raw[0:2]
    theta = theta_raw[2:4]
    frac = theta_raw[4:6] / (beta_bound(alpha, theta) * _BETA_HEADROOM)
    frac = np.clip(frac, -1.0 + 1e-12, 1.0 - 1e-12)
    u = np.clip(theta_raw[6] * 0.5 + 0.5, 1e-12, 1.0 - 1e-12)
    eta = np.empty(7)
    eta[0:2] = np.log(alpha / (2.0 - alpha))
    eta[2:4] = np.log(theta)
    eta[4:6] = np.arctanh(frac)
    eta[6] = np.log(u / (1.0 - u))
    return eta


def _random_start(rng: np.random.Generator) -> np.ndarray:
    from .training import sample_training_condition

    return _theta_to_eta(sample_training_condition(rng).to_array())


def mle_fit(
    panel: ReturnPanel,
    flow: FlowModel,
    n_restarts: int = 5,
    seed: int = 0,
    n_model: int = DEFAULT_N_MODEL,
    min_len: int = 100,
    maxfev: int = 2000,
) -> FitResult:
    """Fit the standardized return law by flow maximum likelihood.

    (m, s) are fixed at the sample moments; Nelder-Mead maximizes the flow
    log-density of the standardized returns over (alpha, theta, beta, rho)
    through logit/log/scaled-tanh maps that keep every iterate feasible.
    The first restart starts from the neutral point, the rest from random
    draws of the training prior.

    Raises:
        DataError: panel shorter than min_len.
        NumericError: no restart converged; the best attempt is attached as
            exc.best_fit.
    """
    if len(panel) < min_len:
        raise DataError(f"need at least {min_len} returns to fit, got {len(panel)}")
    if n_restarts < 1:
        raise ParameterError(f"n_restarts must be positive, got {n_restarts}")
    m, s = sample_moments(panel)
    xi = (panel.as_matrix() - m) / s
    n_obs = xi.shape[0]
    rng = np.random.default_rng(seed)

    def objective(eta: np.ndarray) -> float:
        lp = flow.log_density(xi, _eta_to_theta(eta))
        if not np.all(np.isfinite(lp)):
            return 1e6
        return -float(lp.mean())

    starts = [np.zeros(7)]
    while len(starts) < n_restarts:
        starts.append(_random_start(rng))
    best = None
    restarts = []
    for eta0 in starts:
        # fatol is matched to the statistical resolution of the mean NLL
        # (~1/(2 n_obs)); tighter settings grind the simplex for thousands of
        # evaluations with no change in the recovered parameters
        res = optimize.minimize(
            objective,
            eta0,
            method="Nelder-Mead",
            options={"maxfev": maxfev, "xatol": 1e-3, "fatol": 1e-6, "adaptive": True},
        )
        restarts.append({"fun": float(res.fun), "nfev": int(res.nfev),
                         "converged": bool(res.success)})
        if best is None or res.fun < best.fun:
            best = res

    theta_star = _eta_to_theta(best.x)
    std_params = ConditionVector.from_array(theta_star).to_std_params()
    loglik = -n_obs * float(best.fun) - n_obs * float(np.log(s).sum())
    ks_stat, ks_p = ks2d_test(xi, flow, theta_star, n_model=n_model, rng=rng)
    fit = FitResult(
        m=m, s=s, std_params=std_params, loglik=loglik,
        ks_stat=ks_stat, ks_p=ks_p, dt=panel.dt,
        diagnostics={"restarts": restarts, "mean_nll": float(best.fun), "seed": seed},
    )
    if not any(r["converged"] for r in restarts):
        exc = NumericError(
            f"no Nelder-Mead restart converged within {maxfev} evaluations "
            f"(best mean NLL {best.fun:.6f})"
        )
        exc.best_fit = fit
        raise exc
    return fit


_FIT_FIELDS = (
    "m_F", "m_V", "s_F", "s_V", "alpha_F", "alpha_V",
    "theta_xi_F", "theta_xi_V", "beta_xi_F", "beta_xi_V",
    "rho", "loglik", "ks", "p", "dt",
)


def fit_result_to_json(fit: FitResult) -> str:
    """Serialize a fit in the flat market-table layout (component suffixes F, V)."""
    std = fit.std_params
    doc = {
        "m_F": fit.m[0], "m_V": fit.m[1],
        "s_F": fit.s[0], "s_V": fit.s[1],
        "alpha_F": std.alpha[0], "alpha_V": std.alpha[1],
        "theta_xi_F": std.theta[0], "theta_xi_V": std.theta[1],
        "beta_xi_F": std.beta[0], "beta_xi_V": std.beta[1],
        "rho": std.R[0, 1],
        "loglik": fit.loglik, "ks": fit.ks_stat, "p": fit.ks_p, "dt": fit.dt,
    }
    return json.dumps({k: float(v) for k, v in doc.items()}, indent=2)


def fit_result_from_json(text: str) -> FitResult:
    """Parse a document written by fit_result_to_json."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed fit JSON: {exc}") from exc
    missing = set(_FIT_FIELDS) - set(doc)
    if missing:
        raise DataError(f"fit JSON missing fields: {sorted(missing)}")
    rho = float(doc["rho"])
    std = GStdNTSParams(
        alpha=[doc["alpha_F"], doc["alpha_V"]],
        theta=[doc["theta_xi_F"], doc["theta_xi_V"]],
        beta=[doc["beta_xi_F"], doc["beta_xi_V"]],
        R=[[1.0, rho], [rho, 1.0]],
    )
    return FitResult(
        m=[doc["m_F"], doc["m_V"]], s=[doc["s_F"], doc["s_V"]],
        std_params=std, loglik=float(doc["loglik"]),
        ks_stat=float(doc["ks"]), ks_p=float(doc["p"]), dt=float(doc["dt"]),
    )
