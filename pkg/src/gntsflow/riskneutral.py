"""Risk-neutral calibration and quanto call pricing.

Under the pricing measure the process keeps alpha, mu, sigma and the
dispersion matrix; only (theta, beta) move. Given theta_hat, the martingale
condition pins beta_hat exactly, so calibration reduces to a 1-D search per
component for the feasible theta_hat whose (theta_hat, beta_hat) is nearest
the physical pair. Prices come from a tensorized Gauss-Hermite rule pushed
through the flow inverse, with a plain Monte Carlo pricer as an independent
cross-check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .crealnvp import ConditionVector, FlowModel
from .errors import ConfigError, NumericError, ParameterError
from .estimation import FitResult
from .gnts import (
    GNTSParams,
    HorizonParams,
    beta_bound,
    horizon_rescale,
    sample_stdgnts,
    stdgnts_to_gnts,
)

DEFAULT_QUAD_ORDER = 64
MARTINGALE_TOL = 1e-10
_MIN_QUAD_ORDER = 8
_MIN_MC_PATHS = 10_000


@dataclass(frozen=True)
class MarketRates:
    """Domestic and foreign risk-free rates, per annum."""

    r_d: float
    r_f: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.r_d) and math.isfinite(self.r_f)):
            raise ParameterError("rates must be finite")

    @property
    def r(self) -> np.ndarray:
        """Per-component drift targets (r_F, r_V) = (r_d - r_f, r_d)."""
        return np.array([self.r_d - self.r_f, self.r_d])


def martingale_residual(p: GNTSParams, rates: MarketRates) -> np.ndarray:
    """|mu - r - ((theta - beta - sigma^2/2)^(alpha/2) - theta^(alpha/2))| per component."""
    base = p.theta - p.beta - p.sigma**2 / 2.0
    if np.any(base <= 0.0):
        raise NumericError("theta - beta - sigma^2/2 must be positive for a real residual")
    drift = base ** (p.alpha / 2.0) - p.theta ** (p.alpha / 2.0)
    return np.abs(p.mu - rates.r - drift)


@dataclass(frozen=True)
class RNCalibration:
    """Physical process plus the nearest risk-neutral (theta*, beta*) pair."""

    physical: GNTSParams
    rn_params: GNTSParams
    rates: MarketRates

    def __post_init__(self) -> None:
        p, q = self.physical, self.rn_params
        if q.dim != p.dim:
            raise ParameterError("physical and risk-neutral processes must share dimension")
        same = (
            np.array_equal(q.alpha, p.alpha)
            and np.array_equal(q.mu, p.mu)
            and np.array_equal(q.sigma, p.sigma)
            and np.array_equal(q.R, p.R)
        )
        if not same:
            raise ParameterError("measure change may move only theta and beta")
        if np.any(q.theta - q.beta - q.sigma**2 / 2.0 <= 0.0):
            raise NumericError("risk-neutral parameters violate feasibility")
        res = martingale_residual(q, self.rates)
        if np.any(res >= MARTINGALE_TOL):
            raise NumericError(f"martingale residual too large: {res}")

    @property
    def theta_star(self) -> np.ndarray:
        return self.rn_params.theta

    @property
    def beta_star(self) -> np.ndarray:
        return self.rn_params.beta


@dataclass(frozen=True)
class PricingRequest:
    """European quanto call: payoff F_fix (S(T) - K)^+ with K = moneyness * S0."""

    S0: float
    F_fix: float
    moneyness: float
    T: float
    rates: MarketRates

    def __post_init__(self) -> None:
        for name in ("S0", "F_fix", "moneyness", "T"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ParameterError(f"{name} must be a positive real, got {v}")

    @property
    def K(self) -> float:
        return self.moneyness * self.S0

    @classmethod
    def from_strike(cls, S0, F_fix, K, T, rates: MarketRates) -> "PricingRequest":
        if not (K > 0.0 and S0 > 0.0):
            raise ParameterError("S0 and K must be positive")
        return cls(S0=S0, F_fix=F_fix, moneyness=K / S0, T=T, rates=rates)


def daily_to_process_params(fit: FitResult, dt: float | None = None) -> GNTSParams:
    """Annualize a daily-horizon fit into per-year process parameters.

    The fit describes X(dt) = m + diag(s) Xi(1); embedding that law as a
    unit-time process and undoing the horizon power scaling gives
    theta = theta_xi / dt^(2/alpha), beta = s beta_xi / dt^(2/alpha),
    mu = m / dt + s mu0 / dt, sigma = s sigma0 / dt^(1/alpha).
    horizon_rescale of the result at T = dt recovers the fit exactly.
    """
    if dt is None:
        dt = fit.dt
    if not (dt > 0.0):
        raise ParameterError(f"dt must be positive, got {dt}")
    daily = stdgnts_to_gnts(fit.std_params, fit.m, fit.s)
    tpow = dt ** (2.0 / daily.alpha)
    return GNTSParams(
        alpha=daily.alpha,
        theta=daily.theta / tpow,
        beta=daily.beta / tpow,
        mu=daily.mu / dt,
        sigma=daily.sigma / dt ** (1.0 / daily.alpha),
        R=daily.R,
    )


def rn_beta_of_theta(theta_hat: float, alpha: float, sigma: float, mu: float, r: float) -> float:
    """The unique beta_hat making exp(X_n) grow at rate r for a given theta_hat.

    beta_hat = theta_hat - sigma^2/2 - (mu - r + theta_hat^(alpha/2))^(2/alpha);
    feasibility (theta_hat - beta_hat - sigma^2/2 > 0) then holds automatically.

    Raises:
        NumericError: if mu - r + theta_hat^(alpha/2) <= 0, where no real
            solution exists.
    """
    if not (theta_hat > 0.0):
        raise ParameterError(f"theta_hat must be positive, got {theta_hat}")
    base = mu - r + theta_hat ** (alpha / 2.0)
    if base <= 0.0:
        raise NumericError(
            f"infeasible theta_hat={theta_hat}: mu - r + theta_hat^(alpha/2) = {base} <= 0"
        )
    return theta_hat - sigma**2 / 2.0 - base ** (2.0 / alpha)


def calibrate_rn(p: GNTSParams, rates: MarketRates) -> RNCalibration:
    """Select the feasible (theta_hat, beta_hat) nearest each physical (theta, beta).

    The distance along the martingale curve beta_hat(theta_hat) is scanned on
    a geometric grid theta * 2^[-20, 20]; Brent refinement runs on the
    bracketing interval around the grid minimum.

    Raises:
        NumericError: if no grid point is feasible for some component.
    """
    r = rates.r
    theta_star = np.empty(p.dim)
    beta_star = np.empty(p.dim)
    for n in range(p.dim):
        alpha, sigma, mu = float(p.alpha[n]), float(p.sigma[n]), float(p.mu[n])
        th_n, be_n = float(p.theta[n]), float(p.beta[n])

        def distance(th: float) -> float:
            try:
                b = rn_beta_of_theta(th, alpha, sigma, mu, r[n])
            except NumericError:
                return np.inf
            return math.hypot(th - th_n, b - be_n)

        grid = th_n * 2.0 ** np.linspace(-20.0, 20.0, 321)
        vals = np.array([distance(th) for th in grid])
        if not np.any(np.isfinite(vals)):
            raise NumericError(
                f"component {n}: no feasible theta_hat on the geometric scan "
                f"(mu - r = {mu - r[n]})"
            )
        k = int(np.argmin(vals))
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid.size - 1)]
        res = optimize.minimize_scalar(
            distance, bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12 * hi, "maxiter": 500},
        )
        theta_star[n] = res.x if res.fun <= vals[k] else grid[k]
        beta_star[n] = rn_beta_of_theta(theta_star[n], alpha, sigma, mu, r[n])
    rn_p = GNTSParams(alpha=p.alpha, theta=theta_star, beta=beta_star,
                      mu=p.mu, sigma=p.sigma, R=p.R)
    return RNCalibration(physical=p, rn_params=rn_p, rates=rates)


def rn_horizon_params(cal: RNCalibration, T: float) -> HorizonParams:
    """Horizon-T representation X(T) = m_hat + diag(s_hat) Xi_hat(1) under pricing."""
    return horizon_rescale(cal.rn_params, T)


def check_training_support(theta_raw) -> list[str]:
    """Names of condition coordinates outside the training prior's support."""
    theta_raw = np.asarray(theta_raw, dtype=float)
    out = []
    emb_theta = (2.0 / np.pi) * np.arctan(theta_raw[2:4] / 10.0)
    frac_beta = np.abs(theta_raw[4:6]) / beta_bound(theta_raw[0:2], theta_raw[2:4])
    for k in range(2):
        if emb_theta[k] > 0.98:
            out.append(f"theta_xi[{k}] = {theta_raw[2 + k]:.4g} is beyond the dense "
                       f"training range")
        if frac_beta[k] >= 0.999:
            out.append(f"beta_xi[{k}] = {theta_raw[4 + k]:.4g} is at {frac_beta[k]:.4f} "
                       f"of its bound, outside the training draw")
    if abs(theta_raw[6]) > 0.9999:
        out.append(f"rho = {theta_raw[6]} is outside the training draw")
    return out


def _split_legs(m_hat, s_hat, xi, paper_sign: bool):
    """Exponent of S(T)/S0 at standardized draws xi, minus its location shift.

    Returns (shift, spread) with S(T) = S0 exp(shift + spread) where
    shift = +-(m_hat_V - m_hat_F) and spread the matching combination of
    s_hat Xi terms. paper_sign flips which leg is long.
    """
    if paper_sign:
        shift = m_hat[0] - m_hat[1]
        spread = s_hat[0] * xi[:, 0] - s_hat[1] * xi[:, 1]
    else:
        shift = m_hat[1] - m_hat[0]
        spread = s_hat[1] * xi[:, 1] - s_hat[0] * xi[:, 0]
    return float(shift), spread


def price_quanto_call_quadrature(
    req: PricingRequest,
    rn: RNCalibration,
    flow: FlowModel,
    quad_order: int = DEFAULT_QUAD_ORDER,
    paper_sign: bool = False,
    horizon: tuple | None = None,
) -> float:
    """Quanto call price by a tensor Gauss-Hermite rule through the flow inverse.

    price = exp(-r_d T) F_fix S0 exp(shift) (1/pi) sum_ij w_i w_j
            (exp(spread(xi_ij)) - M exp(-shift))^+
    with xi_ij the flow inverse of (sqrt(2) x_i, sqrt(2) x_j). A horizon
    override (m_hat, s_hat, std_params) replaces the calibration's horizon
    representation; with s_hat = 0 the deterministic price needs no flow.
    """
    if quad_order < _MIN_QUAD_ORDER:
        raise ConfigError(f"quadrature order must be at least {_MIN_QUAD_ORDER}, got {quad_order}")
    if horizon is None:
        hp = rn_horizon_params(rn, req.T)
        m_hat, s_hat, std = hp.m, hp.s, hp.std_params
    else:
        m_hat, s_hat, std = horizon
        m_hat = np.asarray(m_hat, dtype=float)
        s_hat = np.asarray(s_hat, dtype=float)
    disc = math.exp(-req.rates.r_d * req.T) * req.F_fix * req.S0
    if np.all(s_hat == 0.0):
        shift, _ = _split_legs(m_hat, np.zeros(2), np.zeros((1, 2)), paper_sign)
        return disc * max(math.exp(shift) - req.moneyness, 0.0)
    theta_raw = ConditionVector.from_std_params(std).to_array()
    for msg in check_training_support(theta_raw):
        warnings.warn(msg, stacklevel=2)
    nodes, wts = np.polynomial.hermite.hermgauss(int(quad_order))
    z = np.sqrt(2.0) * np.array(np.meshgrid(nodes, nodes, indexing="ij")).reshape(2, -1).T
    xi = flow.flow_inverse(z, theta_raw)
    weight = np.outer(wts, wts).ravel() / np.pi
    shift, spread = _split_legs(m_hat, s_hat, xi, paper_sign)
    payoff = np.maximum(np.exp(spread) - req.moneyness * math.exp(-shift), 0.0)
    return disc * math.exp(shift) * float(weight @ payoff)


def price_quanto_call_mc(
    req: PricingRequest,
    rn: RNCalibration,
    n_paths: int,
    rng: np.random.Generator,
    paper_sign: bool = False,
    horizon: tuple | None = None,
) -> tuple[float, float]:
    """Monte Carlo quanto call price and standard error, no flow involved.

    Draws Xi_hat(1) with the exact sampler, assembles S(T) = S0 exp(+-(X_V - X_F)),
    and discounts the mean payoff.
    """
    if n_paths < _MIN_MC_PATHS:
        raise ParameterError(f"n_paths must be at least {_MIN_MC_PATHS}, got {n_paths}")
    if horizon is None:
        hp = rn_horizon_params(rn, req.T)
        m_hat, s_hat, std = hp.m, hp.s, hp.std_params
    else:
        m_hat, s_hat, std = horizon
        m_hat = np.asarray(m_hat, dtype=float)
        s_hat = np.asarray(s_hat, dtype=float)
    disc = math.exp(-req.rates.r_d * req.T) * req.F_fix
    if np.all(s_hat == 0.0):
        shift, _ = _split_legs(m_hat, np.zeros(2), np.zeros((1, 2)), paper_sign)
        return disc * req.S0 * max(math.exp(shift) - req.moneyness, 0.0), 0.0
    xi = sample_stdgnts(std, int(n_paths), rng)
    shift, spread = _split_legs(m_hat, s_hat, xi, paper_sign)
    s_T = req.S0 * np.exp(shift + spread)
    payoff = np.maximum(s_T - req.K, 0.0)
    price = disc * float(payoff.mean())
    se = disc * float(payoff.std(ddof=1)) / math.sqrt(n_paths)
    return price, se


def pricing_grid_rows(
    S0: float,
    F_fix: float,
    rates: MarketRates,
    rn: RNCalibration,
    flow: FlowModel,
    moneyness_grid,
    t_weeks_grid,
    quad_order: int = DEFAULT_QUAD_ORDER,
    mc_paths: int = 0,
    rng: np.random.Generator | None = None,
    paper_sign: bool = False,
) -> list[dict]:
    """Price a (moneyness, maturity) grid; one dict per cell, CSV-ready.

    The flow inverse and the MC draws are computed once per maturity and reused
    across strikes. mc_paths = 0 leaves the Monte Carlo columns empty.
    """
    if mc_paths and rng is None:
        raise ParameterError("mc_paths > 0 requires an rng")
    rows = []
    for weeks in t_weeks_grid:
        T = float(weeks) / 52.0
        hp = rn_horizon_params(rn, T)
        horizon = (hp.m, hp.s, hp.std_params)
        mc_xi = sample_stdgnts(hp.std_params, int(mc_paths), rng) if mc_paths else None
        for money in moneyness_grid:
            req = PricingRequest(S0=S0, F_fix=F_fix, moneyness=float(money), T=T, rates=rates)
            quad = price_quanto_call_quadrature(
                req, rn, flow, quad_order=quad_order, paper_sign=paper_sign, horizon=horizon,
            )
            row = {
                "moneyness": float(money),
                "T_weeks": float(weeks),
                "price_quadrature": quad,
                "price_mc": "",
                "mc_se": "",
            }
            if mc_paths:
                disc = math.exp(-rates.r_d * T) * F_fix
                shift, spread = _split_legs(hp.m, hp.s, mc_xi, paper_sign)
                payoff = np.maximum(S0 * np.exp(shift + spread) - req.K, 0.0)
                row["price_mc"] = disc * float(payoff.mean())
                row["mc_se"] = disc * float(payoff.std(ddof=1)) / math.sqrt(mc_paths)
            rows.append(row)
    return rows
