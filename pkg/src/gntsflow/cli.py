"""Command-line pipeline: gen-train, train, fit, calibrate, price, kstest, simulate.

Every command reads its own top-level block from a JSON config; unknown keys
are rejected before any work starts, relative paths resolve against
--workdir, and all randomness flows from explicit seeds so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from .crealnvp import ConditionVector, load_model, save_model
from .errors import ConfigError, DataError, NumericError, ParameterError, SamplerError
from .estimation import (
    DEFAULT_DT,
    compute_returns,
    fit_result_from_json,
    fit_result_to_json,
    ks2d_test,
    ks2d_two_sample,
    load_market_csv,
    mle_fit,
)
from .gnts import GStdNTSParams, params_from_json, sample_gnts, sample_stdgnts
from .riskneutral import MarketRates, calibrate_rn, daily_to_process_params, pricing_grid_rows
from .training import TrainingConfig, build_training_set, load_training_set, save_training_set, train_flow

_COMMANDS = ("gen-train", "train", "fit", "calibrate", "price", "kstest", "simulate")


# ---------------------------------------------------------------------------
# config schema


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


_INT = ("an integer", _is_int)
_POS_INT = ("a positive integer", lambda v: _is_int(v) and v >= 1)
_NONNEG_INT = ("a nonnegative integer", lambda v: _is_int(v) and v >= 0)
_NUM = ("a finite number", _is_num)
_POS_NUM = ("a positive number", lambda v: _is_num(v) and v > 0)
_FRACTION = ("a number in (0, 0.5]", lambda v: _is_num(v) and 0.0 < v <= 0.5)
_STR = ("a nonempty string", lambda v: isinstance(v, str) and bool(v.strip()))
_BOOL = ("a boolean", lambda v: isinstance(v, bool))
_POS_NUM_LIST = (
    "a nonempty list of positive numbers",
    lambda v: isinstance(v, list) and bool(v) and all(_is_num(x) and x > 0 for x in v),
)
_ALPHA_RANGE = (
    "a pair [lo, hi] with 0 <= lo < hi <= 2",
    lambda v: isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v)
    and 0.0 <= v[0] < v[1] <= 2.0,
)
_PARAMS = (
    "a parameter object or a path string",
    lambda v: (isinstance(v, dict) and bool(v)) or (isinstance(v, str) and bool(v.strip())),
)
_DTYPE = ("'float32' or 'float64'", lambda v: v in ("float32", "float64"))
_QUAD = ("an integer >= 8", lambda v: _is_int(v) and v >= 8)

# key -> (validator, required, default)
_SCHEMAS: dict[str, dict[str, tuple]] = {
    "gen-train": {
        "output": (_STR, True, None),
        "n_param_sets": (_POS_INT, False, 2**12),
        "n_per_set": (_POS_INT, False, 2**10),
        "seed": (_INT, False, 0),
        "alpha_range": (_ALPHA_RANGE, False, [0.0, 2.0]),
    },
    "train": {
        "dataset": (_STR, True, None),
        "output": (_STR, True, None),
        "history": (_STR, False, None),
        "epochs": (_POS_INT, False, 200),
        "batch_size": (_POS_INT, False, 4096),
        "learning_rate": (_POS_NUM, False, 1e-4),
        "val_fraction": (_FRACTION, False, 0.05),
        "patience": (_POS_INT, False, 10),
        "seed": (_INT, False, 0),
        "train_dtype": (_DTYPE, False, "float32"),
        "resume": (_BOOL, False, False),
    },
    "fit": {
        "market_csv": (_STR, True, None),
        "weights": (_STR, True, None),
        "output": (_STR, True, None),
        "dt": (_POS_NUM, False, DEFAULT_DT),
        "n_restarts": (_POS_INT, False, 5),
        "n_model": (_POS_INT, False, 100_000),
        "min_len": (_POS_INT, False, 100),
        "maxfev": (_POS_INT, False, 2000),
        "seed": (_INT, False, 0),
    },
    "calibrate": {
        "fit": (_STR, True, None),
        "r_d": (_NUM, True, None),
        "r_f": (_NUM, True, None),
        "output": (_STR, True, None),
        "dt": (_POS_NUM, False, None),
        "horizons_weeks": (_POS_NUM_LIST, False, [1, 2, 3, 4]),
    },
    "price": {
        "fit": (_STR, True, None),
        "weights": (_STR, True, None),
        "S0": (_POS_NUM, True, None),
        "F_fix": (_POS_NUM, True, None),
        "r_d": (_NUM, True, None),
        "r_f": (_NUM, True, None),
        "output": (_STR, True, None),
        "dt": (_POS_NUM, False, None),
        "moneyness": (_POS_NUM_LIST, False, [0.90, 0.95, 1.00, 1.05, 1.10]),
        "t_weeks": (_POS_NUM_LIST, False, [1, 2, 3, 4]),
        "quad_order": (_QUAD, False, 64),
        "mc_paths": (_NONNEG_INT, False, 0),
        "paper_sign": (_BOOL, False, False),
        "seed": (_INT, False, 0),
    },
    "kstest": {
        "weights": (_STR, True, None),
        "params": (_PARAMS, True, None),
        "n_sample": (_POS_INT, False, 1000),
        "n_model": (_POS_INT, False, 100_000),
        "seed": (_INT, False, 0),
        "output": (_STR, False, None),
        "self_test": (_BOOL, False, False),
    },
    "simulate": {
        "params": (_PARAMS, True, None),
        "n_paths": (_POS_INT, True, None),
        "output": (_STR, True, None),
        "t": (_POS_NUM, False, 1.0),
        "seed": (_INT, False, 0),
        "std": (_BOOL, False, False),
    },
}


def _load_config(path: str | None) -> dict:
    if not path:
        raise ConfigError("--config is required")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object keyed by command")
    return doc


def _validate_block(command: str, block) -> dict:
    schema = _SCHEMAS[command]
    if not isinstance(block, dict):
        raise ConfigError(f"config block '{command}' must be a JSON object")
    unknown = set(block) - set(schema)
    if unknown:
        raise ConfigError(f"config block '{command}' has unknown keys: {sorted(unknown)}")
    out = {}
    for key, ((desc, check), required, default) in schema.items():
        if key in block:
            if not check(block[key]):
                raise ConfigError(f"config key '{command}.{key}' must be {desc}, "
                                  f"got {block[key]!r}")
            out[key] = block[key]
        elif required:
            raise ConfigError(f"config block '{command}' is missing required key '{key}'")
        else:
            out[key] = default
    return out


def _resolve(workdir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(workdir, path)


def _read_json_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {path}: {exc}") from exc


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_std_params(value, workdir: str) -> GStdNTSParams:
    """Standardized parameters from an inline object or a JSON file.

    Accepts either the compact form {alpha, theta, beta, rho} or a full fit
    result (the flat *_F/*_V layout).
    """
    doc = _read_json_file(_resolve(workdir, value)) if isinstance(value, str) else value
    if not isinstance(doc, dict):
        raise ConfigError("params must decode to a JSON object")
    if "alpha_F" in doc:
        return fit_result_from_json(json.dumps(doc)).std_params
    missing = {"alpha", "theta", "beta", "rho"} - set(doc)
    if missing:
        raise ConfigError(f"std params missing fields: {sorted(missing)}")
    rho = doc["rho"]
    return GStdNTSParams(alpha=doc["alpha"], theta=doc["theta"], beta=doc["beta"],
                         R=[[1.0, rho], [rho, 1.0]])


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


# ---------------------------------------------------------------------------
# command handlers


def _cmd_gen_train(cfg: dict, workdir: str) -> None:
    tc = TrainingConfig(
        n_param_sets=cfg["n_param_sets"],
        n_per_set=cfg["n_per_set"],
        seed=cfg["seed"],
        alpha_range=tuple(cfg["alpha_range"]),
    )
    ts = build_training_set(tc, np.random.default_rng(tc.seed))
    out = _resolve(workdir, cfg["output"])
    save_training_set(ts, out)
    print(f"wrote {ts.meta['n_rows']} rows to {out} (redraws: {ts.meta['redraws']})")


def _print_epoch(rec: dict) -> None:
    print(f"epoch {rec['epoch']}: train {rec['train_nll']:.6f} "
          f"val {rec['val_nll']:.6f} best {rec['best_val_nll']:.6f}")


def _cmd_train(cfg: dict, workdir: str) -> None:
    dataset_path = _resolve(workdir, cfg["dataset"])
    ts = load_training_set(dataset_path)
    ts.meta["sha256"] = _file_sha256(dataset_path)
    tc = TrainingConfig(
        n_param_sets=int(ts.meta.get("n_param_sets", 1)),
        n_per_set=int(ts.meta.get("n_per_set", 1)),
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        val_fraction=cfg["val_fraction"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        train_dtype=cfg["train_dtype"],
    )
    out = _resolve(workdir, cfg["output"])
    init_model = None
    if cfg["resume"]:
        if not os.path.exists(out):
            raise DataError(f"resume requested but no weights file at {out}")
        init_model = load_model(out)
        recorded = init_model.metadata.get("corpus", {}).get("sha256")
        if recorded != ts.meta["sha256"]:
            raise DataError(
                f"resume refused: weights were trained on a different dataset "
                f"(recorded {recorded}, found {ts.meta['sha256']})"
            )
    model, history = train_flow(ts, tc, progress=_print_epoch,
                                checkpoint_path=out, init_model=init_model)
    save_model(model, out)
    if cfg["history"]:
        with open(_resolve(workdir, cfg["history"]), "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "train_nll", "val_nll",
                                                    "best_val_nll"])
            writer.writeheader()
            writer.writerows(history)
    print(f"trained {len(history)} epoch(s); best val NLL "
          f"{model.metadata['best_val_nll']:.6f}; wrote {out}")


def _cmd_fit(cfg: dict, workdir: str) -> None:
    series = load_market_csv(_resolve(workdir, cfg["market_csv"]))
    panel = compute_returns(series, dt=cfg["dt"])
    flow = load_model(_resolve(workdir, cfg["weights"]))
    fit = mle_fit(
        panel, flow,
        n_restarts=cfg["n_restarts"], seed=cfg["seed"],
        n_model=cfg["n_model"], min_len=cfg["min_len"], maxfev=cfg["maxfev"],
    )
    out = _resolve(workdir, cfg["output"])
    _write_text(out, fit_result_to_json(fit))
    std = fit.std_params
    print(f"fit {len(panel)} returns: alpha=({std.alpha[0]:.4f}, {std.alpha[1]:.4f}) "
          f"theta_xi=({std.theta[0]:.4f}, {std.theta[1]:.4f}) "
          f"beta_xi=({std.beta[0]:.4f}, {std.beta[1]:.4f}) rho={std.R[0, 1]:.4f}")
    print(f"loglik={fit.loglik:.4f} ks={fit.ks_stat:.5f} p={fit.ks_p:.4f}; wrote {out}")


def _cmd_calibrate(cfg: dict, workdir: str) -> None:
    fit = fit_result_from_json(json.dumps(_read_json_file(_resolve(workdir, cfg["fit"]))))
    dt = cfg["dt"] if cfg["dt"] is not None else fit.dt
    p = daily_to_process_params(fit, dt)
    rates = MarketRates(r_d=cfg["r_d"], r_f=cfg["r_f"])
    cal = calibrate_rn(p, rates)
    from .riskneutral import martingale_residual, rn_horizon_params

    horizons = []
    for weeks in cfg["horizons_weeks"]:
        hp = rn_horizon_params(cal, float(weeks) / 52.0)
        horizons.append({
            "T_weeks": float(weeks),
            "m_hat": hp.m.tolist(),
            "s_hat": hp.s.tolist(),
            "theta_xi_hat": hp.std_params.theta.tolist(),
            "beta_xi_hat": hp.std_params.beta.tolist(),
        })
    doc = {
        "r_d": cfg["r_d"], "r_f": cfg["r_f"], "dt": dt,
        "alpha": cal.rn_params.alpha.tolist(),
        "theta_star": cal.theta_star.tolist(),
        "beta_star": cal.beta_star.tolist(),
        "mu": cal.rn_params.mu.tolist(),
        "sigma": cal.rn_params.sigma.tolist(),
        "rho": float(cal.rn_params.R[0, 1]),
        "martingale_residual": martingale_residual(cal.rn_params, rates).tolist(),
        "horizons": horizons,
    }
    out = _resolve(workdir, cfg["output"])
    _write_text(out, json.dumps(doc, indent=2, sort_keys=True))
    print(f"theta_star={cal.theta_star.tolist()} beta_star={cal.beta_star.tolist()}; wrote {out}")


def _cmd_price(cfg: dict, workdir: str) -> None:
    fit = fit_result_from_json(json.dumps(_read_json_file(_resolve(workdir, cfg["fit"]))))
    dt = cfg["dt"] if cfg["dt"] is not None else fit.dt
    p = daily_to_process_params(fit, dt)
    rates = MarketRates(r_d=cfg["r_d"], r_f=cfg["r_f"])
    cal = calibrate_rn(p, rates)
    flow = load_model(_resolve(workdir, cfg["weights"]))
    rng = np.random.default_rng(cfg["seed"]) if cfg["mc_paths"] else None
    rows = pricing_grid_rows(
        S0=cfg["S0"], F_fix=cfg["F_fix"], rates=rates, rn=cal, flow=flow,
        moneyness_grid=cfg["moneyness"], t_weeks_grid=cfg["t_weeks"],
        quad_order=cfg["quad_order"], mc_paths=cfg["mc_paths"], rng=rng,
        paper_sign=cfg["paper_sign"],
    )
    out = _resolve(workdir, cfg["output"])
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["moneyness", "T_weeks", "price_quadrature",
                                                "price_mc", "mc_se"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} prices to {out}")


def _cmd_kstest(cfg: dict, workdir: str) -> None:
    std = _load_std_params(cfg["params"], workdir)
    rng = np.random.default_rng(cfg["seed"])
    sample = sample_stdgnts(std, cfg["n_sample"], rng)
    if cfg["self_test"]:
        stat, p = ks2d_two_sample(sample, sample)
    else:
        flow = load_model(_resolve(workdir, cfg["weights"]))
        theta_raw = ConditionVector.from_std_params(std).to_array()
        stat, p = ks2d_test(sample, flow, theta_raw, n_model=cfg["n_model"], rng=rng)
    print(f"ks={stat:.6f} p={p:.6f}")
    if cfg["output"]:
        doc = {"ks": stat, "p": p, "n_sample": cfg["n_sample"],
               "n_model": cfg["n_model"], "seed": cfg["seed"],
               "self_test": cfg["self_test"]}
        _write_text(_resolve(workdir, cfg["output"]),
                    json.dumps(doc, indent=2, sort_keys=True))


def _cmd_simulate(cfg: dict, workdir: str) -> None:
    rng = np.random.default_rng(cfg["seed"])
    if cfg["std"]:
        std = _load_std_params(cfg["params"], workdir)
        draws = sample_stdgnts(std, cfg["n_paths"], rng)
    else:
        value = cfg["params"]
        if isinstance(value, str):
            with open(_resolve(workdir, value), "r", encoding="utf-8") as fh:
                text = fh.read()
        else:
            text = json.dumps(value)
        draws = sample_gnts(params_from_json(text), cfg["t"], cfg["n_paths"], rng)
    out = _resolve(workdir, cfg["output"])
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k + 1}" for k in range(draws.shape[1])])
        writer.writerows(draws.tolist())
    print(f"wrote {draws.shape[0]} samples to {out}")


_HANDLERS = {
    "gen-train": _cmd_gen_train,
    "train": _cmd_train,
    "fit": _cmd_fit,
    "calibrate": _cmd_calibrate,
    "price": _cmd_price,
    "kstest": _cmd_kstest,
    "simulate": _cmd_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gntsflow",
        description="Bivariate tempered-stable process toolkit: simulation, "
                    "flow training, fitting, calibration, and quanto pricing.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override the command's seed")
    parser.add_argument("--workdir", default=".",
                        help="base directory for relative paths in the config")
    parser.add_argument("--config", default=None,
                        help="JSON config with one block per command")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        if name == "price":
            cmd.add_argument("--paper-sign", action="store_true", default=None,
                             help="price with the swapped payoff sign convention")
            cmd.add_argument("--mc-paths", type=int, default=None,
                             help="populate the Monte Carlo columns with this many paths")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.command not in config:
            raise ConfigError(f"config has no '{args.command}' block")
        block = config[args.command]
        if isinstance(block, dict):
            block = dict(block)
            if args.seed is not None and "seed" in _SCHEMAS[args.command]:
                block["seed"] = args.seed
            if args.command == "price":
                if getattr(args, "paper_sign", None):
                    block["paper_sign"] = True
                if getattr(args, "mc_paths", None) is not None:
                    block["mc_paths"] = args.mc_paths
        cfg = _validate_block(args.command, block)
        _HANDLERS[args.command](cfg, args.workdir)
        return 0
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, SamplerError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
