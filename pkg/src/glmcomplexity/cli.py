"""Batch front-end: ``glmcx <command> [--config FILE] [--key value ...]``.

Commands: ``spectrum``, ``annealed-l1``, ``annealed-l2``, ``quenched-l1``,
``verify``. Configuration comes from a flat ``key = value`` file (``#``
comments) and ``--kebab-case`` flags, flags winning. Unknown keys are
rejected.

Exit status: 0 on success, 2 when some sweep points (or verification checks)
failed, 1 on a configuration error.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .activations import builtin

SCHEMA = 1
COMMANDS = ("spectrum", "annealed-l1", "annealed-l2", "quenched-l1", "verify")
CHECKS = ("rank2", "esd", "logdet", "kac-rice")


class ConfigError(ValueError):
    pass


def _float(v):
    return float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"not an integer: {v}")
    return int(f)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v}")


def _str(v):
    return str(v).strip().strip('"').strip("'")


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    commands: tuple[str, ...] = COMMANDS
    flag: bool = False


ALL = COMMANDS
KEYS: dict[str, Key] = {
    "activation": Key(_str, "tanh"),
    "leak": Key(_float, None),
    "beta": Key(_float, None),
    "alpha": Key(_str, "2"),
    "workers": Key(_int, 1),
    "output": Key(_str, None),
    "format": Key(_str, "json"),
    "constraint": Key(_str, "unconstrained", ("annealed-l1", "quenched-l1")),
    "unconstrained": Key(_bool, False, ("annealed-l1", "quenched-l1"), flag=True),
    "lower": Key(_float, None, ("annealed-l1", "annealed-l2", "quenched-l1")),
    "upper": Key(_float, None, ("annealed-l1", "annealed-l2", "quenched-l1")),
    "level": Key(_float, None, ("annealed-l1",)),
    "epsilon": Key(_float, 1e-6, ("spectrum", "annealed-l1", "annealed-l2", "quenched-l1")),
    "tol": Key(_float, None, ("annealed-l1", "annealed-l2", "quenched-l1")),
    "grid": Key(_str, "trapezoid", ("annealed-l1",)),
    "grid_k": Key(_int, None, ("spectrum", "annealed-l1")),
    "grid_2d_k": Key(_int, 48, ("annealed-l2",)),
    "q_lower": Key(_float, -0.99, ("annealed-l2",)),
    "q_upper": Key(_float, 0.99, ("annealed-l2",)),
    "q": Key(_float, None, ("annealed-l2", "quenched-l1")),
    "t_grid": Key(_str, "-1:5:601", ("spectrum",)),
    "xi": Key(_str, "tensor", ("quenched-l1",)),
    "xi_order": Key(_int, 12, ("quenched-l1",)),
    "qmc_log2": Key(_int, 14, ("quenched-l1",)),
    "lambda_nodes": Key(_int, 161, ("quenched-l1",)),
    "check": Key(_str, "all", ("verify",)),
    "n": Key(_int, 100, ("verify",)),
    "m": Key(_int, None, ("verify",)),
    "seeds": Key(_int, 20, ("verify",)),
    "seed": Key(_int, 0, ("verify", "quenched-l1")),
    "delta": Key(_float, 0.3, ("verify",)),
    "threshold": Key(_float, 0.05, ("verify",)),
    "logdet_rtol": Key(_float, 0.05, ("verify",)),
    "ensembles": Key(_int, 200, ("verify",)),
}


def _normalize(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[_normalize(k)] = v.strip()
    return out


def parse_flags(tokens: list[str]) -> tuple[str | None, dict[str, object]]:
    """``--key value`` / ``--key=value`` pairs; boolean keys may stand alone.

    Values are taken verbatim, so ``--t-grid -1:5:601`` works.
    """
    config_path = None
    out: dict[str, object] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            k, v = body.split("=", 1)
            i += 1
        else:
            k = body
            nk = _normalize(k)
            if nk in KEYS and KEYS[nk].flag:
                v = True
                i += 1
            else:
                if i + 1 >= len(tokens):
                    raise ConfigError(f"--{k} needs a value")
                v = tokens[i + 1]
                i += 2
        nk = _normalize(k)
        if nk == "config":
            config_path = v
        else:
            out[nk] = v
    return config_path, out


def resolve(command: str, file_values: dict, flag_values: dict) -> dict:
    """Merge, type-check and default the configuration for ``command``."""
    merged = {**file_values, **flag_values}
    for k in merged:
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        if command not in KEYS[k].commands:
            raise ConfigError(f"key {k!r} does not apply to {command}")
    cfg = {}
    for k, spec in KEYS.items():
        if command not in spec.commands:
            continue
        if k in merged:
            try:
                cfg[k] = spec.parse(merged[k])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {exc}") from None
        else:
            cfg[k] = spec.default
    if cfg.pop("unconstrained", False):
        cfg["constraint"] = "unconstrained"
    cfg["alpha"] = parse_alpha(cfg["alpha"])
    if cfg["format"] not in ("json", "csv"):
        raise ConfigError("format must be json or csv")
    lo, hi = cfg.get("lower"), cfg.get("upper")
    if lo is not None and hi is not None and not lo < hi:
        raise ConfigError("interval endpoints must be ordered")
    if "constraint" in cfg:
        allowed = ("unconstrained", "interval", "loss_level") if command == "annealed-l1" \
            else ("unconstrained", "interval")
        if cfg["constraint"] not in allowed:
            raise ConfigError(f"constraint must be one of {allowed}")
        if cfg["constraint"] == "interval" and (lo is None or hi is None):
            raise ConfigError("interval constraint needs lower and upper")
        if cfg["constraint"] == "loss_level" and cfg.get("level") is None:
            raise ConfigError("loss_level constraint needs level")
    if command == "verify":
        checks = CHECKS if cfg["check"] == "all" else tuple(c.strip() for c in cfg["check"].split(","))
        bad = [c for c in checks if c not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check(s) {bad}")
        cfg["check"] = list(checks)
    if command == "spectrum":
        parse_range(cfg["t_grid"])
    if command == "annealed-l2" and not -1 < cfg["q_lower"] < cfg["q_upper"] < 1:
        raise ConfigError("need -1 < q_lower < q_upper < 1")
    try:
        make_activation(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"expected start:stop:count, got {text!r}")
    try:
        a, b, c = float(parts[0]), float(parts[1]), _int(parts[2])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if c < 1 or (c > 1 and not a < b):
        raise ConfigError(f"bad range {text!r}")
    return a, b, c


def parse_alpha(text) -> list[float]:
    text = str(text)
    if ":" in text:
        a, b, c = parse_range(text)
        alphas = [float(x) for x in np.linspace(a, b, c)]
    else:
        try:
            alphas = [float(text)]
        except ValueError:
            raise ConfigError(f"bad alpha {text!r}") from None
    if not all(x > 1 for x in alphas):
        raise ConfigError("alpha must exceed 1 at every sweep point")
    return alphas


def make_activation(cfg: dict):
    params = {k: cfg[k] for k in ("leak", "beta") if cfg.get(k) is not None}
    return builtin(cfg["activation"], **params)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# --- per-point jobs (module level so they pickle) ---

def _job_spectrum(cfg, alpha):
    from .measures import gauss_hermite, pushforward
    from .spectral import density_curve

    phi = make_activation(cfg)
    a, b, c = parse_range(cfg["t_grid"])
    t = np.linspace(a, b, c)
    law = pushforward(gauss_hermite(cfg["grid_k"] or 128), phi.d2)
    sol = density_curve(law, alpha, t, cfg["epsilon"])
    return {
        "alpha": alpha,
        "t": sol.t_grid.tolist(),
        "density": np.nan_to_num(sol.density).tolist(),
        "log_potential": np.nan_to_num(sol.log_potential).tolist(),
        "residual": np.nan_to_num(sol.residual, nan=math.inf).tolist(),
        "converged_points": int(np.sum(sol.converged)),
        "mass": sol.mass(),
    }


def _job_annealed_l1(cfg, alpha):
    from .annealed import solve_annealed_l1
    from .measures import gauss_hermite, gaussian_trapezoid

    phi = make_activation(cfg)
    if cfg["grid"] == "trapezoid":
        grid = gaussian_trapezoid(cfg["grid_k"] or 401)
    elif cfg["grid"] == "gauss_hermite":
        grid = gauss_hermite(cfg["grid_k"] or 128)
    else:
        raise ConfigError("grid must be trapezoid or gauss_hermite")
    kw = {}
    if cfg["tol"] is not None:
        kw["tol"] = cfg["tol"]
    st = solve_annealed_l1(
        phi, alpha, cfg["constraint"], l=cfg["level"],
        bounds=None if cfg["lower"] is None else (cfg["lower"], cfg["upper"]),
        epsilon=cfg["epsilon"], grid=grid, **kw,
    )
    return st.record()


def _job_annealed_l2(cfg, alpha):
    from .annealed import solve_annealed_l2, solve_annealed_l2_at_q
    from .measures import gauss_hermite_2d

    phi = make_activation(cfg)
    lo = -math.inf if cfg["lower"] is None else cfg["lower"]
    hi = math.inf if cfg["upper"] is None else cfg["upper"]
    grid = gauss_hermite_2d(cfg["grid_2d_k"])
    if cfg["q"] is not None:
        st = solve_annealed_l2_at_q(phi, alpha, cfg["q"], (lo, hi), epsilon=cfg["epsilon"], grid=grid)
    else:
        st = solve_annealed_l2(phi, alpha, (lo, hi), (cfg["q_lower"], cfg["q_upper"]), grid=grid)
    return st.record()


def _job_quenched_l1(cfg, alpha):
    from .quenched import LambdaRule, XiRule, solve_quenched_l1

    phi = make_activation(cfg)
    if cfg["xi"] == "tensor":
        xi = XiRule.tensor(cfg["xi_order"])
    elif cfg["xi"] == "sobol":
        raise ConfigError("the solver needs a tensor rule; use sobol only to cross-check")
    else:
        raise ConfigError("xi must be tensor")
    kw = {}
    if cfg["tol"] is not None:
        kw["tol"] = cfg["tol"]
    bounds = None if cfg["lower"] is None else (cfg["lower"], cfg["upper"])
    sol = solve_quenched_l1(phi, alpha, cfg["constraint"], bounds=bounds, xi=xi,
                            lam_rule=LambdaRule(cfg["lambda_nodes"]), epsilon=cfg["epsilon"],
                            q=cfg["q"], **kw)
    rec = sol.record()
    # cross-check of the ξ-average with a scrambled Sobol rule
    from .quenched import ImaginaryLeakError, quenched_objective

    try:
        qmc_val, qmc_leak = quenched_objective(sol.params, phi, alpha,
                                               xi=XiRule.sobol(cfg["qmc_log2"], cfg["seed"]),
                                               lam_rule=LambdaRule(cfg["lambda_nodes"]),
                                               epsilon=cfg["epsilon"])
        rec["qmc_check"] = {"complexity": qmc_val, "imag_leak": qmc_leak,
                            "difference": qmc_val - sol.complexity}
    except ImaginaryLeakError as exc:
        rec["qmc_check"] = {"error": str(exc)}
    rec["alpha"] = alpha
    return rec


def _job_verify(cfg, alpha):
    from . import montecarlo as mc

    phi = make_activation(cfg)
    n = cfg["n"]
    m = cfg["m"] or int(round(alpha * n))
    out = {"alpha": alpha, "n": n, "m": m, "checks": {}}
    seeds = list(range(cfg["seeds"]))
    if "rank2" in cfg["check"]:
        dists = [mc.rank2_check(n, m, phi, s) for s in seeds]
        bound = 2 / (n - 1)
        out["checks"]["rank2"] = {"max_distance": max(dists), "bound": bound,
                                  "passed": max(dists) <= bound}
    if "esd" in cfg["check"] or "logdet" in cfg["check"]:
        rep = mc.esd_vs_prediction(n, m, phi, seeds, threshold=cfg["threshold"], delta=cfg["delta"],
                                   logdet_rtol=cfg["logdet_rtol"], diagnostics="logdet" in cfg["check"])
        if "esd" in cfg["check"]:
            out["checks"]["esd"] = {"ks_distance": rep.ks_distance, "threshold": cfg["threshold"],
                                    "passed": rep.checks["ks"]}
        if "logdet" in cfg["check"]:
            out["checks"]["logdet"] = {
                "empirical_cut": rep.logdet_empirical, "predicted": rep.logdet_predicted,
                "empirical_uncut": rep.logdet_uncut, "predicted_cut": rep.logdet_cut_predicted,
                "cutoff": n ** (-cfg["delta"]), "rtol": cfg["logdet_rtol"],
                "passed": rep.checks["logdet"],
            }
    if "kac-rice" in cfg["check"]:
        res = mc.kac_rice_vs_direct(phi, m=6 if cfg["m"] is None else cfg["m"],
                                    ensembles=cfg["ensembles"], seed=cfg["seed"])
        res.pop("counts")
        res["passed"] = res["gap_in_se"] <= 3.0
        out["checks"]["kac-rice"] = res
    out["passed"] = all(c["passed"] for c in out["checks"].values())
    return out


JOBS = {
    "spectrum": _job_spectrum,
    "annealed-l1": _job_annealed_l1,
    "annealed-l2": _job_annealed_l2,
    "quenched-l1": _job_quenched_l1,
    "verify": _job_verify,
}


def _run_point(command, cfg, alpha):
    try:
        return {"ok": True, "result": JOBS[command](cfg, alpha)}
    except ConfigError:
        raise
    except Exception as exc:  # recorded, never fatal for a sweep
        return {"ok": False, "result": {"alpha": alpha, "error": f"{type(exc).__name__}: {exc}",
                                        "traceback": traceback.format_exc(limit=3)}}


def run(command: str, cfg: dict) -> tuple[int, dict]:
    """Execute ``command``; returns ``(exit_status, document)``."""
    alphas = cfg["alpha"]
    if cfg["workers"] > 1 and len(alphas) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            outs = list(pool.map(_run_point, [command] * len(alphas), [cfg] * len(alphas), alphas))
    else:
        outs = [_run_point(command, cfg, a) for a in alphas]
    failed = sum(not o["ok"] for o in outs)
    if command == "verify":
        failed += sum(1 for o in outs if o["ok"] and not o["result"]["passed"])
    status = "ok" if failed == 0 else "partial"
    doc = {
        "schema": SCHEMA,
        "command": command,
        "config": cfg,
        "status": status,
        "failed_points": failed,
        "results": [o["result"] for o in outs],
    }
    return (0 if failed == 0 else 2), _clean(doc)


def _csv_text(command: str, doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    results = [r for r in doc["results"] if "error" not in r]
    sweep = len(doc["config"]["alpha"]) > 1
    if command == "spectrum":
        w.writerow((["alpha"] if sweep else []) + ["t", "density", "log_potential", "residual"])
        for r in results:
            for row in zip(r["t"], r["density"], r["log_potential"], r["residual"]):
                w.writerow(([repr(r["alpha"])] if sweep else []) + [repr(x) if isinstance(x, float) else x for x in row])
        return buf.getvalue()
    flat = [_flatten(r) for r in doc["results"]]
    cols = sorted({k for f in flat for k in f})
    w.writerow(cols)
    for f in flat:
        w.writerow([f.get(c, "") for c in cols])
    return buf.getvalue()


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = json.dumps(v)
        else:
            out[key] = v
    return out


def emit(command: str, doc: dict, cfg: dict, started: float) -> None:
    if cfg["format"] == "csv":
        text = _csv_text(command, doc)
    else:
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if cfg["output"] is None:
        sys.stdout.write(text)
        return
    path = Path(cfg["output"])
    path.write_text(text)
    meta = {
        "schema": SCHEMA,
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "runtime_seconds": time.time() - started,
        "backend": _backend.BACKEND,
        "status": doc["status"],
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


USAGE = """usage: glmcx COMMAND [--config FILE] [--key value ...]

commands: spectrum, annealed-l1, annealed-l2, quenched-l1, verify
keys: """ + ", ".join("--" + k.replace("_", "-") for k in KEYS) + "\n"


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return 0 if argv else 1
    command, rest = argv[0], argv[1:]
    started = time.time()
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        config_path, flags = parse_flags(rest)
        file_values = parse_config_text(Path(config_path).read_text()) if config_path else {}
        cfg = resolve(command, file_values, flags)
        status, doc = run(command, cfg)
    except (ConfigError, OSError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    emit(command, doc, cfg, started)
    return status


if __name__ == "__main__":
    sys.exit(main())
