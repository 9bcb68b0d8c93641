"""Acceptance gates for the full pipeline, one test per shipping criterion.

Each test prints a single PASS line with its measured numbers; a failure
message carries the same numbers.  Monte Carlo gates use 4-standard-error
windows around independently derived targets, distributional gates use the
two-sample 2-D Kolmogorov-Smirnov test, and every stage is seeded so the run
is reproducible end to end.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from gntsflow import (
    MarketRates,
    calibrate_rn,
    daily_to_process_params,
    horizon_rescale,
    ks2d_test,
    ks2d_two_sample,
    martingale_residual,
    pricing_grid_rows,
    rn_horizon_params,
    sample_gnts,
    sample_horizon,
    sample_stdgnts,
    sample_subts,
    stdgnts_to_gnts,
    subts_cf,
    subts_moments,
)
from gntsflow.cli import main as cli_main
from gntsflow.errors import NumericError
from gntsflow.estimation import ReturnPanel, mle_fit
from gntsflow.gnts import GNTSParams
from gntsflow.subts import SubTSParams

from conftest import (
    EXAMPLE_1,
    EXAMPLE_2,
    EXAMPLE_3,
    FIT_REF,
    std_condition,
    var_se,
)

RATES = MarketRates(r_d=0.055, r_f=-0.001)
EXAMPLES = {"example 1": EXAMPLE_1, "example 2": EXAMPLE_2, "example 3": EXAMPLE_3}


def test_artifact_bundled():
    """The trained weights must ship; a missing file is a hard failure here.

    Unit-test modules skip flow-dependent cases when the artifact is absent
    so the library can be developed without it, but the acceptance suite is
    the shipping gate and must go red instead.
    """
    from conftest import ARTIFACT_PATH

    assert os.path.exists(ARTIFACT_PATH), "bundled flow weights missing"


def test_criterion_1_subordinator_cumulants_and_cf():
    """Sampler moments and empirical CF match the closed forms at n=1e6."""
    t0 = time.perf_counter()
    n = 1_000_000
    rng = np.random.default_rng(101)
    lines = []
    for alpha, theta in ((0.75, 1.0), (1.0, 1.0), (1.25, 3.0), (1.75, 5.0)):
        p = SubTSParams(alpha=alpha, c=1.0, theta=theta)
        s = sample_subts(p, 1.0, n, rng)
        mean_t, var_t = subts_moments(p, 1.0)
        se_mean = s.std(ddof=1) / math.sqrt(n)
        dm = abs(s.mean() - mean_t)
        dv = abs(s.var(ddof=1) - var_t)
        assert dm < 4 * se_mean, f"(a={alpha}, th={theta}): mean off {dm:.2e} vs 4se {4*se_mean:.2e}"
        assert dv < 4 * var_se(s), f"(a={alpha}, th={theta}): var off {dv:.2e} vs 4se {4*var_se(s):.2e}"
        for u in (0.5, 1.0, 2.0):
            emp_re, emp_im = np.cos(u * s), np.sin(u * s)
            target = subts_cf(np.array([u]), 1.0, p)[0]
            for part, tgt in ((emp_re, target.real), (emp_im, target.imag)):
                se = part.std(ddof=1) / math.sqrt(n)
                assert abs(part.mean() - tgt) < 4 * se, (
                    f"(a={alpha}, th={theta}) CF at u={u}: {part.mean():.6f} vs {tgt:.6f}"
                )
        lines.append(f"(a={alpha}, th={theta}) mean {dm/se_mean:.2f}se var {dv/var_se(s):.2f}se")
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"criterion 1 took {elapsed:.0f}s, budget 120s"
    print(f"criterion 1 PASS: {'; '.join(lines)}; {elapsed:.0f}s")


def test_criterion_2_standardized_moments():
    """Standardized samples have zero mean and unit variance at n=1e6."""
    t0 = time.perf_counter()
    n = 1_000_000
    rng = np.random.default_rng(102)
    lines = []
    for name, ex in EXAMPLES.items():
        x = sample_stdgnts(ex, n, rng)
        for k in range(2):
            se_mean = x[:, k].std(ddof=1) / math.sqrt(n)
            dm = abs(x[:, k].mean())
            dv = abs(x[:, k].var(ddof=1) - 1.0)
            assert dm < 4 * se_mean, f"{name} comp {k}: |mean| {dm:.2e} vs 4se {4*se_mean:.2e}"
            assert dv < 4 * var_se(x[:, k]), (
                f"{name} comp {k}: |var-1| {dv:.2e} vs 4se {4*var_se(x[:, k]):.2e}"
            )
        lines.append(f"{name} ok")
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"criterion 2 took {elapsed:.0f}s, budget 300s"
    print(f"criterion 2 PASS: {'; '.join(lines)}; {elapsed:.0f}s")


def test_criterion_3_horizon_rescaling_equivalence():
    """One-shot rescaled sampling matches direct horizon sampling in law.

    The rescaling identity holds per component always, and jointly whenever
    the components share a stability index or the Brownian correlation
    vanishes; both regimes are exercised here (the mixed-index correlated
    case differs in law and is pinned in the unit tests).
    """
    processes = {
        "rho=0": stdgnts_to_gnts(EXAMPLE_1, (-0.0697, 0.0248), (0.0923, 0.2154)),
        "equal alpha": GNTSParams(
            alpha=(1.1, 1.1), theta=(71975.8, 4936.05), beta=(60.62, -23.84),
            mu=(-0.196, 0.580), sigma=(2.014, 1.396),
            R=((1.0, 0.3134), (0.3134, 1.0)),
        ),
    }
    n = 10_000
    lines = []
    for pname, p in processes.items():
        for T in (1.0 / 252.0, 5.0 / 252.0, 1.0 / 12.0):
            direct = sample_gnts(p, T, n, np.random.default_rng(1211))
            rescaled = sample_horizon(horizon_rescale(p, T), n, np.random.default_rng(1503))
            stat, pval = ks2d_two_sample(direct, rescaled)
            assert pval > 0.01, f"{pname}, T={T:.5f}: KS {stat:.4f}, p {pval:.4f}"
            lines.append(f"{pname} T={T:.4f} p={pval:.3f}")
    print(f"criterion 3 PASS: {'; '.join(lines)}")


def test_criterion_4_flow_exactness(trained_flow):
    """Couplings invert to 1e-9, log-det matches numerics, density normalizes."""
    rng = np.random.default_rng(104)
    conds = [std_condition(ex) for ex in EXAMPLES.values()]

    worst_inv = 0.0
    for cond in conds:
        z = rng.standard_normal((10_000, 2))
        y = trained_flow.flow_inverse(z, cond)
        z_back, _ = trained_flow.flow_forward(y, cond)
        worst_inv = max(worst_inv, float(np.max(np.abs(z_back - z))))
        y0 = 2.0 * rng.standard_normal((10_000, 2))
        z_f, _ = trained_flow.flow_forward(y0, cond)
        y_back = trained_flow.flow_inverse(z_f, cond)
        worst_inv = max(worst_inv, float(np.max(np.abs(y_back - y0))))
    assert worst_inv < 1e-9, f"invertibility error {worst_inv:.2e}"

    worst_ld = 0.0
    h = 1e-5
    for k in range(100):
        cond = conds[k % 3]
        y = rng.standard_normal((1, 2)) * 1.5
        _, logdet = trained_flow.flow_forward(y, cond)
        jac = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                yp, ym = y.copy(), y.copy()
                yp[0, j] += h
                ym[0, j] -= h
                zp, _ = trained_flow.flow_forward(yp, cond)
                zm, _ = trained_flow.flow_forward(ym, cond)
                jac[i, j] = (zp[0, i] - zm[0, i]) / (2 * h)
        num = math.log(abs(np.linalg.det(jac)))
        rel = abs(float(logdet[0]) - num) / max(abs(num), 1e-12)
        worst_ld = max(worst_ld, rel)
    assert worst_ld < 1e-4, f"log-det rel err {worst_ld:.2e}"

    worst_norm = 0.0
    grid = np.linspace(-8.0, 8.0, 241)
    yy1, yy2 = np.meshgrid(grid, grid, indexing="ij")
    pts = np.column_stack([yy1.ravel(), yy2.ravel()])
    for cond in conds:
        dens = np.exp(trained_flow.log_density(pts, cond)).reshape(241, 241)
        mass = float(np.trapezoid(np.trapezoid(dens, grid, axis=1), grid))
        worst_norm = max(worst_norm, abs(mass - 1.0))
    assert worst_norm < 0.02, f"normalization off by {worst_norm:.4f}"
    print(f"criterion 4 PASS: invert {worst_inv:.1e}, logdet rel {worst_ld:.1e}, "
          f"norm within {worst_norm:.4f}")


def test_criterion_5_learned_density_matches_sampler(trained_flow):
    """Flow draws agree with exact sampler draws at the reference parameter sets."""
    corpus_rows = int(trained_flow.metadata["corpus"]["n_rows"])
    assert corpus_rows >= 2**20, f"corpus has {corpus_rows} rows, need >= 2^20"
    train_seconds = float(trained_flow.metadata["train_seconds"])
    assert train_seconds <= 8 * 3600, f"training took {train_seconds:.0f}s, budget 8h"

    t0 = time.perf_counter()
    lines = []
    for name, ex in EXAMPLES.items():
        cond = std_condition(ex)
        hits = 0
        cells = []
        for seed in range(5):
            rng = np.random.default_rng(1000 + seed)
            sample = sample_stdgnts(ex, 1000, rng)
            stat, p = ks2d_test(sample, trained_flow, cond, n_model=100_000, rng=rng)
            cells.append((stat, p))
            hits += stat <= 0.08 and p > 0.05
        detail = " ".join(f"({s:.3f},{p:.2f})" for s, p in cells)
        assert hits >= 3, f"{name}: only {hits}/5 seeds pass (stat,p): {detail}"
        lines.append(f"{name} {hits}/5")
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"evaluation took {elapsed:.0f}s, budget 300s"
    print(f"criterion 5 PASS: {'; '.join(lines)}; train {train_seconds:.0f}s, "
          f"eval {elapsed:.0f}s")


def test_criterion_6_estimation_recovery(trained_flow):
    """Fitting simulated daily returns recovers the generating parameters."""
    m, s = FIT_REF.m, FIT_REF.s
    truth = EXAMPLE_2
    n_pass = 0
    rows = []
    for trial in range(20):
        rng = np.random.default_rng(5000 + trial)
        xi = sample_stdgnts(truth, 2000, rng)
        r = m + s * xi
        panel = ReturnPanel(x_f=r[:, 0], x_v=r[:, 1], dt=1.0 / 252.0)
        try:
            fit = mle_fit(panel, trained_flow, n_restarts=2, seed=trial,
                          n_model=2000, maxfev=2500)
        except NumericError as exc:
            fit = exc.best_fit  # non-convergence counts as a failed trial
            rows.append(f"t{trial}: no convergence")
            continue
        est = fit.std_params
        ok = (
            abs(est.alpha[0] - truth.alpha[0]) <= 0.15
            and abs(est.alpha[1] - truth.alpha[1]) <= 0.15
            and abs(est.R[0, 1] - truth.R[0, 1]) <= 0.05
            and abs(est.theta[0] - truth.theta[0]) / truth.theta[0] <= 0.30
            and abs(est.theta[1] - truth.theta[1]) / truth.theta[1] <= 0.30
        )
        n_pass += ok
        rows.append(
            f"t{trial}: a=({est.alpha[0]:.2f},{est.alpha[1]:.2f}) "
            f"th=({est.theta[0]:.2f},{est.theta[1]:.2f}) rho={est.R[0, 1]:.3f} "
            f"{'ok' if ok else 'MISS'}"
        )
    assert n_pass >= 16, f"only {n_pass}/20 trials recovered:\n" + "\n".join(rows)
    print(f"criterion 6 PASS: {n_pass}/20 trials recovered")


def test_criterion_7_calibration_reproduces_reference_row():
    """Martingale residuals vanish and the weekly FX-leg row is reproduced."""
    targets = {"m_F": 9.936e-4, "s_F": 1.291e-2, "theta_F": 30.40, "beta_F": 3.889}
    best = None
    for label, dt in (("1/250", 1.0 / 250.0), ("1/252", 1.0 / 252.0), ("1/365", 1.0 / 365.0)):
        p = daily_to_process_params(FIT_REF, dt)
        cal = calibrate_rn(p, RATES)
        assert np.all(martingale_residual(cal.rn_params, RATES) < 1e-10)
        hp = rn_horizon_params(cal, 1.0 / 52.0)
        got = {"m_F": hp.m[0], "s_F": hp.s[0],
               "theta_F": hp.std_params.theta[0], "beta_F": hp.std_params.beta[0]}
        worst = max(abs(got[k] / targets[k] - 1.0) for k in targets)
        if best is None or worst < best[1]:
            best = (label, worst, got)
    label, worst, got = best
    assert worst <= 0.05, f"best dt {label} misses by {worst:.2%}: {got}"
    print(f"criterion 7 PASS: dt={label} reproduces the weekly row within "
          f"{worst:.2%} (m_F={got['m_F']:.4g}, s_F={got['s_F']:.4g}, "
          f"theta_F={got['theta_F']:.4g}, beta_F={got['beta_F']:.4g})")


def test_criterion_8_pricing_consistency(trained_flow):
    """Quadrature prices sit inside the exact-sampler MC 99% CI and behave in K."""
    t0 = time.perf_counter()
    cal = calibrate_rn(daily_to_process_params(FIT_REF), RATES)
    money = [0.90, 0.95, 1.00, 1.05, 1.10]
    weeks = [1, 2, 3, 4]
    rows = pricing_grid_rows(
        S0=33464.2, F_fix=7.071e-3, rates=RATES, rn=cal, flow=trained_flow,
        moneyness_grid=money, t_weeks_grid=weeks,
        quad_order=64, mc_paths=1_000_000, rng=np.random.default_rng(108),
    )
    worst_z = 0.0
    for row in rows:
        gap = abs(row["price_quadrature"] - row["price_mc"])
        assert gap < 2.576 * row["mc_se"], (
            f"M={row['moneyness']}, T={row['T_weeks']}w: quad {row['price_quadrature']:.6f} "
            f"vs mc {row['price_mc']:.6f} +- {row['mc_se']:.6f}"
        )
        worst_z = max(worst_z, gap / row["mc_se"])
    by_t = {w: [r for r in rows if r["T_weeks"] == w] for w in weeks}
    for w, cells in by_t.items():
        prices = np.array([c["price_quadrature"] for c in cells])
        assert np.all(prices >= 0.0)
        assert np.all(np.diff(prices) <= 1e-12), f"T={w}w not nonincreasing in K"
        assert np.all(np.diff(prices, 2) >= -1e-8), f"T={w}w not convex in K"
    rows128 = pricing_grid_rows(
        S0=33464.2, F_fix=7.071e-3, rates=RATES, rn=cal, flow=trained_flow,
        moneyness_grid=money, t_weeks_grid=weeks, quad_order=128,
    )
    worst_rel = max(
        abs(a["price_quadrature"] - b["price_quadrature"]) / b["price_quadrature"]
        for a, b in zip(rows, rows128)
    )
    assert worst_rel < 1e-3, f"order 64 vs 128 rel diff {worst_rel:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"criterion 8 took {elapsed:.0f}s, budget 600s"
    print(f"criterion 8 PASS: worst |quad-mc| {worst_z:.2f} MC se, "
          f"order-64 vs 128 rel {worst_rel:.1e}; {elapsed:.0f}s")


def test_criterion_9_cli_determinism(tmp_path):
    """Every command produces byte-identical output under a fixed seed."""
    import hashlib

    from gntsflow import fit_result_to_json
    from gntsflow.crealnvp import FlowModel, save_model

    save_model(FlowModel(np.random.default_rng(0)), str(tmp_path / "w.json"))
    (tmp_path / "fit.json").write_text(fit_result_to_json(FIT_REF))
    std_inline = {"alpha": [1.25, 1.25], "theta": [3.0, 3.0],
                  "beta": [0.0, 0.0], "rho": 0.0}
    jobs = {
        "gen-train": {"output": "{}.bin", "n_param_sets": 2, "n_per_set": 16,
                      "seed": 3, "alpha_range": [0.8, 1.6]},
        "simulate": {"params": std_inline, "n_paths": 200, "seed": 3,
                     "std": True, "output": "{}.csv"},
        "kstest": {"params": std_inline, "weights": "w.json", "n_sample": 300,
                   "n_model": 2000, "seed": 3, "output": "{}.json"},
        "price": {"fit": "fit.json", "weights": "w.json", "S0": 33464.2,
                  "F_fix": 7.071e-3, "r_d": 0.055, "r_f": -0.001,
                  "moneyness": [0.95, 1.0], "t_weeks": [1], "quad_order": 16,
                  "mc_paths": 20_000, "seed": 3, "output": "{}.csv"},
    }
    lines = []
    for command, template in jobs.items():
        digests = []
        for tag in ("a", "b"):
            block = {k: (v.format(f"{command}_{tag}") if isinstance(v, str) and "{}" in v else v)
                     for k, v in template.items()}
            cfg = tmp_path / f"{command}_{tag}.cfg"
            cfg.write_text(json.dumps({command: block}))
            code = cli_main(["--workdir", str(tmp_path), "--config", str(cfg), command])
            assert code == 0, f"{command} exited {code}"
            out = tmp_path / block["output"]
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert digests[0] == digests[1], f"{command} output differs between runs"
        lines.append(command)
    print(f"criterion 9 PASS: byte-identical reruns for {', '.join(lines)}")
