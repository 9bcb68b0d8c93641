"""The N-dimensional generalized normal tempered stable (gNTS) process.

A gNTS process subordinates correlated Brownian motions with independent
per-component tempered stable clocks:

    X_n(t) = mu_n t + beta_n T_n(t) + sigma_n B_n(T_n(t)),

where T_n ~ subTS(alpha_n, 1, theta_n) are independent across components and
the B_n are standard Brownian motions with instantaneous correlation R.  The
standard form (gStdNTS) pins the drift and scale so every component of X(1)
has mean 0 and variance 1; two parameter transforms move between the general
and standard forms and rescale a horizon-T marginal onto the unit horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .subts import SubTSParams, sample_subts

__all__ = [
    "GNTSParams",
    "GStdNTSParams",
    "HorizonParams",
    "beta_bound",
    "std_mu_sigma",
    "gnts_cf_component",
    "gnts_moments",
    "sample_gnts",
    "sample_stdgnts",
    "sample_horizon",
    "stdgnts_to_gnts",
    "gnts_to_stdgnts",
    "horizon_rescale",
    "params_to_json",
    "params_from_json",
]

_PSD_TOL = 1e-10
_CHOL_JITTER = 1e-12


def _as_vector(name: str, x) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ParameterError(f"{name} must be a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"{name} contains non-finite values")
    v.flags.writeable = False
    return v


def _check_dispersion(R, n: int) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (n, n):
        raise ParameterError(f"R must have shape ({n}, {n}), got {R.shape}")
    if not np.allclose(R, R.T, atol=1e-12):
        raise ParameterError("R must be symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-12):
        raise ParameterError("R must have a unit diagonal")
    if np.linalg.eigvalsh(R).min() < -_PSD_TOL:
        raise ParameterError("R must be positive semi-definite")
    R = R.copy()
    R.flags.writeable = False
    return R


def beta_bound(alpha, theta):
    """Largest |beta| (exclusive) keeping the standard deviation in Eq.-form real:
    2 theta^(1 - alpha/4) / sqrt(alpha (2 - alpha))."""
    alpha = np.asarray(alpha, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return 2.0 * theta ** (1.0 - alpha / 4.0) / np.sqrt(alpha * (2.0 - alpha))


@dataclass(frozen=True)
class GNTSParams:
    """Full gNTS parameter set (alpha, theta, beta, mu, sigma, R)."""

    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        alpha = _as_vector("alpha", self.alpha)
        n = alpha.size
        theta = _as_vector("theta", self.theta)
        beta = _as_vector("beta", self.beta)
        mu = _as_vector("mu", self.mu)
        sigma = _as_vector("sigma", self.sigma)
        for name, v in (("theta", theta), ("beta", beta), ("mu", mu), ("sigma", sigma)):
            if v.size != n:
                raise ParameterError(f"{name} must have length {n}, got {v.size}")
        if np.any(alpha <= 0.0) or np.any(alpha >= 2.0):
            raise ParameterError("every alpha must lie in (0, 2)")
        if np.any(theta <= 0.0):
            raise ParameterError("every theta must be positive")
        if np.any(sigma <= 0.0):
            raise ParameterError("every sigma must be positive")
        R = _check_dispersion(self.R, n)
        for name, v in (
            ("alpha", alpha), ("theta", theta), ("beta", beta),
            ("mu", mu), ("sigma", sigma), ("R", R),
        ):
            object.__setattr__(self, name, v)

    @property
    def dim(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class GStdNTSParams:
    """Standard gNTS parameter set: each component of X(1) has mean 0, variance 1."""

    alpha: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        alpha = _as_vector("alpha", self.alpha)
        n = alpha.size
        theta = _as_vector("theta", self.theta)
        beta = _as_vector("beta", self.beta)
        for name, v in (("theta", theta), ("beta", beta)):
            if v.size != n:
                raise ParameterError(f"{name} must have length {n}, got {v.size}")
        if np.any(alpha <= 0.0) or np.any(alpha >= 2.0):
            raise ParameterError("every alpha must lie in (0, 2)")
        if np.any(theta <= 0.0):
            raise ParameterError("every theta must be positive")
        bound = beta_bound(alpha, theta)
        bad = np.flatnonzero(np.abs(beta) >= bound)
        if bad.size:
            k = int(bad[0])
            raise ParameterError(
                f"|beta[{k}]| = {abs(beta[k])} is at or beyond its bound {bound[k]} "
                f"(alpha={alpha[k]}, theta={theta[k]})"
            )
        R = _check_dispersion(self.R, n)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "R", R)

    @property
    def dim(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class HorizonParams:
    """One-horizon representation X(T) = m + diag(s) Xi(1) with Xi standard gNTS."""

    m: np.ndarray
    s: np.ndarray
    std_params: GStdNTSParams = field(repr=False)

    def __post_init__(self) -> None:
        m = _as_vector("m", self.m)
        s = _as_vector("s", self.s)
        if m.size != self.std_params.dim or s.size != self.std_params.dim:
            raise ParameterError("m and s must match the dimension of std_params")
        if np.any(s <= 0.0):
            raise ParameterError("every s must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "s", s)


def std_mu_sigma(alpha, theta, beta) -> tuple[np.ndarray, np.ndarray]:
    """Per-component standardizing drift and volatility.

    mu0 = -(alpha beta / 2) theta^(alpha/2 - 1),
    sigma0 = sqrt((2/alpha) theta^(1 - alpha/2) - ((2 - alpha)/(2 theta)) beta^2).

    Raises:
        ParameterError: if beta is at or beyond its bound (sigma0 not real positive),
            naming the offending component.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    mu0 = -(alpha * beta / 2.0) * theta ** (alpha / 2.0 - 1.0)
    radicand = (2.0 / alpha) * theta ** (1.0 - alpha / 2.0) - (2.0 - alpha) / (2.0 * theta) * beta**2
    bad = np.flatnonzero(radicand <= 0.0)
    if bad.size:
        k = int(bad[0])
        raise ParameterError(
            f"beta[{k}] = {beta[k]} violates the standardization bound "
            f"{beta_bound(alpha[k], theta[k])} (alpha={alpha[k]}, theta={theta[k]})"
        )
    return mu0, np.sqrt(radicand)


def gnts_cf_component(n: int, u, t: float, p: GNTSParams):
    """Characteristic function of the n-th marginal X_n(t) at u (scalar or array)."""
    if not (t > 0.0):
        raise ParameterError(f"t must be positive, got {t}")
    if not (0 <= n < p.dim):
        raise ParameterError(f"component index {n} out of range for dim {p.dim}")
    a = p.alpha[n] / 2.0
    u = np.asarray(u, dtype=np.complex128)
    inner = p.theta[n] - 1j * p.beta[n] * u + 0.5 * p.sigma[n] ** 2 * u**2
    return np.exp(1j * p.mu[n] * u * t - t * (inner**a - p.theta[n] ** a))


def gnts_moments(p: GNTSParams, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance vectors of X(t)."""
    if not (t > 0.0):
        raise ParameterError(f"t must be positive, got {t}")
    half = p.alpha / 2.0
    tpow = p.theta ** (half - 1.0)
    mean = (p.mu + half * p.beta * tpow) * t
    var = (p.alpha * tpow / 2.0) * ((2.0 - p.alpha) / (2.0 * p.theta) * p.beta**2 + p.sigma**2) * t
    return mean, var


def _chol_psd(cov: np.ndarray) -> np.ndarray:
    """Batched Cholesky with a one-shot jitter retry for borderline PSD inputs."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = _CHOL_JITTER * max(float(cov.reshape(cov.shape[0], -1).max()), 1.0)
    cov = cov + jitter * np.eye(cov.shape[-1])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("per-draw Brownian covariance is not PSD even after jitter") from exc


def sample_gnts(p: GNTSParams, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n exact samples of the horizon-t marginal X(t), shape (n, N).

    Conditional on the subordinator values (T_1, ..., T_N), the Brownian part
    is a Gaussian vector with covariance sigma_k sigma_n R_kn min(T_k, T_n);
    each draw factorizes its own covariance matrix.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    N = p.dim
    clocks = np.empty((n, N))
    for k in range(N):
        clocks[:, k] = sample_subts(SubTSParams(p.alpha[k], p.theta[k]), t, n, rng)
    overlap = np.minimum(clocks[:, :, None], clocks[:, None, :])
    cov = overlap * (p.R * np.outer(p.sigma, p.sigma))
    chol = _chol_psd(cov)
    z = rng.standard_normal((n, N))
    brownian = np.einsum("nij,nj->ni", chol, z)
    return p.mu * t + p.beta * clocks + brownian


def stdgnts_to_gnts(std: GStdNTSParams, m, s) -> GNTSParams:
    """Embed a standard process: Y = m + diag(s) X has gNTS parameters
    (alpha, theta, diag(s) beta, diag(s) mu0 + m, diag(s) sigma0, R)."""
    m = _as_vector("m", m)
    s = _as_vector("s", s)
    if m.size != std.dim or s.size != std.dim:
        raise ParameterError("m and s must match the dimension of std")
    if np.any(s <= 0.0):
        raise ParameterError("every s must be positive")
    mu0, sigma0 = std_mu_sigma(std.alpha, std.theta, std.beta)
    return GNTSParams(
        alpha=std.alpha,
        theta=std.theta,
        beta=s * std.beta,
        mu=s * mu0 + m,
        sigma=s * sigma0,
        R=std.R,
    )


def gnts_to_stdgnts(p: GNTSParams) -> tuple[np.ndarray, np.ndarray, GStdNTSParams]:
    """Represent X(1) as m + diag(s) Xi(1) with Xi standard gNTS.

    m_n = mu_n + (alpha_n beta_n / 2) theta_n^(alpha_n/2 - 1),
    s_n = sqrt((alpha_n/2) theta_n^(alpha_n/2 - 1)
               ((2 - alpha_n)/(2 theta_n) beta_n^2 + sigma_n^2)),
    standardized skew beta_n / s_n; theta and alpha are unchanged.
    """
    mean1, var1 = gnts_moments(p, 1.0)
    s = np.sqrt(var1)
    try:
        std = GStdNTSParams(alpha=p.alpha, theta=p.theta, beta=p.beta / s, R=p.R)
    except ParameterError as exc:  # unreachable for valid p: sigma > 0 keeps beta/s inside
        raise NumericError(f"standardized skew fell outside its bound: {exc}") from exc
    return mean1, s, std


def horizon_rescale(p: GNTSParams, T: float) -> HorizonParams:
    """One-horizon rescaling: X(T) is distributed as m + diag(s) Xi(1).

    The horizon-T marginal equals in law the unit-horizon marginal of the
    process with parameters (alpha, theta T^(2/alpha), beta T^(2/alpha),
    mu T, sigma T^(1/alpha), R); standardizing that process yields
    theta_xi = theta T^(2/alpha) and beta_xi = beta T^(2/alpha) / s.
    """
    if not (T > 0.0):
        raise ParameterError(f"T must be positive, got {T}")
    tpow = T ** (2.0 / p.alpha)
    rescaled = GNTSParams(
        alpha=p.alpha,
        theta=p.theta * tpow,
        beta=p.beta * tpow,
        mu=p.mu * T,
        sigma=p.sigma * T ** (1.0 / p.alpha),
        R=p.R,
    )
    m, s, std = gnts_to_stdgnts(rescaled)
    return HorizonParams(m=m, s=s, std_params=std)


def sample_stdgnts(std: GStdNTSParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n samples of Xi(1) for a standard gNTS process, shape (n, N)."""
    p = stdgnts_to_gnts(std, np.zeros(std.dim), np.ones(std.dim))
    return sample_gnts(p, 1.0, n, rng)


def sample_horizon(hp: HorizonParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n samples of m + diag(s) Xi(1), shape (n, N)."""
    return hp.m + hp.s * sample_stdgnts(hp.std_params, n, rng)


def params_to_json(p: GNTSParams) -> str:
    """Serialize full parameters to a JSON document."""
    doc = {
        "alpha": p.alpha.tolist(),
        "theta": p.theta.tolist(),
        "beta": p.beta.tolist(),
        "mu": p.mu.tolist(),
        "sigma": p.sigma.tolist(),
        "R": p.R.tolist(),
    }
    return json.dumps(doc, indent=2)


def params_from_json(text: str) -> GNTSParams:
    """Parse parameters serialized by params_to_json."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"malformed parameter JSON: {exc}") from exc
    missing = {"alpha", "theta", "beta", "mu", "sigma", "R"} - set(doc)
    if missing:
        raise ParameterError(f"parameter JSON missing fields: {sorted(missing)}")
    return GNTSParams(
        alpha=doc["alpha"], theta=doc["theta"], beta=doc["beta"],
        mu=doc["mu"], sigma=doc["sigma"], R=doc["R"],
    )
