"""Experiment harness.

Subcommands: evaluate, sweep, lowerbound, scan, pdim-check, print-config.
Configuration is a single YAML file; ``print-config`` emits every default so
runs are self-documenting.  Output is CSV (or a JSON mirror via
``--format json``) with a fixed, schema-tagged column order, and reruns with
an identical config are byte-identical regardless of ``--workers``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import analysis
from .core import robustness_bound
from .distributions import NoiseLowerBound, from_doc
from .policies import (ClassifierRenter, ConstantThresholdRenter,
                       CubeGridRenter, MarginRenter, NoisyRenter)

SCHEMA_ID = "rentlearn-v1"
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_TRAIN_BLOCK = 1 << 40

ALGORITHMS = {
    "constant": ConstantThresholdRenter,
    "cube_grid": CubeGridRenter,
    "classifier": ClassifierRenter,
    "margin": MarginRenter,
    "noisy": NoisyRenter,
}

DEFAULT_CONFIG = {
    "distribution": {
        "family": "point_mass",
        "params": {"y0": 2.0},
        "seed": 0,
    },
    "algorithm": {
        "name": "constant",
        "params": {"epsilon": 0.1},
    },
    "evaluation": {
        "n_train": [100],
        "seeds": [0],
        "n_eval": 10000,
    },
    "lowerbound": {
        "kind": "core-grid",
        "epsilon": 1.0 / 90.0,
        "d": 2,
        "n_train": 9,
        "seed": 0,
        "p": 0.25,
        "theta_start": 0.01,
        "theta_stop": 1.0,
        "theta_step": 0.001,
    },
    "scan": {
        "theta_start": 0.01,
        "theta_stop": 1.0,
        "theta_step": 0.001,
        "n_mc": None,
        "seed": 0,
    },
    "pdim": {
        "max_d": 4,
    },
}

EVALUATE_COLUMNS = ["schema_id", "algorithm", "n", "seed", "cr_mean",
                    "cr_stderr", "theta_min", "robustness", "error"]
SWEEP_COLUMNS = EVALUATE_COLUMNS + ["slope"]
SCAN_COLUMNS = ["schema_id", "theta", "cr"]
LB_CORE_COLUMNS = ["schema_id", "kind", "epsilon", "d", "n_train", "n_cores",
                   "n_sampled_cores", "unsampled_fraction", "certified_bound",
                   "threshold", "passed"]
LB_NOISE_COLUMNS = ["schema_id", "kind", "p", "min_cr", "argmin_theta",
                    "floor", "passed"]
PDIM_COLUMNS = ["schema_id", "check", "n_points", "n_labelings",
                "n_feasible", "expected_feasible", "passed"]


class ConfigError(Exception):
    """Raised for any problem the configuration file itself causes."""


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------


def _merge(defaults: dict, override: dict) -> dict:
    out = {}
    for key, val in defaults.items():
        if key not in override:
            out[key] = val
        elif key != "params" and isinstance(val, dict) and isinstance(override[key], dict):
            out[key] = _merge(val, override[key])
        else:
            # params dicts replace wholesale: their keys belong to one
            # family/algorithm and must not mix with another's defaults
            out[key] = override[key]
    return out


def _detach_default_params(config: dict, raw: dict) -> None:
    """Drop default params when the user switched kinds without params."""
    for section, kind_key in (("distribution", "family"), ("algorithm", "name")):
        user = raw.get(section) or {}
        if kind_key in user and user[kind_key] != DEFAULT_CONFIG[section][kind_key] \
                and "params" not in user:
            config[section]["params"] = {}


def _anchor(text: str, token: str) -> str:
    for lineno, line in enumerate(text.splitlines(), 1):
        if token in line:
            return f"line {lineno}: "
    return ""


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    if path is None:
        raw, text = {}, ""
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping of sections")
        _validate_keys(raw, text)
    config = _merge(DEFAULT_CONFIG, raw)
    _detach_default_params(config, raw)
    if seed_override is not None:
        config["distribution"]["seed"] = int(seed_override)
        config["evaluation"]["seeds"] = [int(seed_override)]
    _validate_values(config, text if path else "")
    return config


def _validate_keys(raw: dict, text: str) -> None:
    for section, content in raw.items():
        if section not in DEFAULT_CONFIG:
            raise ConfigError(f"{_anchor(text, section)}unknown section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"{_anchor(text, section)}section {section!r} "
                              "must be a mapping")
        for key in content:
            if key not in DEFAULT_CONFIG[section]:
                raise ConfigError(f"{_anchor(text, key)}unknown key "
                                  f"{section}.{key}")


def _validate_values(config: dict, text: str) -> None:
    dist = config["distribution"]
    try:
        from_doc(dist)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{_anchor(text, 'distribution')}bad distribution: "
                          f"{exc}") from exc
    algo = config["algorithm"]
    name = algo.get("name")
    if name not in ALGORITHMS:
        raise ConfigError(f"{_anchor(text, 'algorithm')}unknown algorithm "
                          f"{name!r}; choose from {sorted(ALGORITHMS)}")
    allowed = set(inspect.signature(ALGORITHMS[name].__init__).parameters) - {"self"}
    params = algo.get("params") or {}
    for key in params:
        if key not in allowed:
            raise ConfigError(f"{_anchor(text, key)}algorithm {name!r} has no "
                              f"parameter {key!r} (allowed: {sorted(allowed)})")
    ev = config["evaluation"]
    if not isinstance(ev["seeds"], (list, tuple)) or len(ev["seeds"]) == 0:
        raise ConfigError(f"{_anchor(text, 'seeds')}evaluation.seeds must be "
                          "a nonempty list")
    if not isinstance(ev["n_train"], (list, tuple)) or len(ev["n_train"]) == 0:
        raise ConfigError(f"{_anchor(text, 'n_train')}evaluation.n_train must "
                          "be a nonempty list")
    if int(ev["n_eval"]) < 1:
        raise ConfigError("evaluation.n_eval must be positive")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _evaluate_cell(config: dict, n: int, seed: int) -> dict:
    row = {"schema_id": SCHEMA_ID, "algorithm": config["algorithm"]["name"],
           "n": int(n), "seed": int(seed), "cr_mean": "", "cr_stderr": "",
           "theta_min": "", "robustness": "", "error": ""}
    try:
        dist = from_doc(config["distribution"])
        params = config["algorithm"].get("params") or {}
        est = ALGORITHMS[config["algorithm"]["name"]](**params)
        train = dist.sample(int(n), seed=seed, block=_TRAIN_BLOCK)
        est.fit(train.x, train.y)
        policy = est.policy_
        cr = analysis.monte_carlo_cr(policy, dist, int(config["evaluation"]["n_eval"]),
                                     seed=seed)
        row["cr_mean"] = cr.mean
        row["cr_stderr"] = cr.stderr
        row["theta_min"] = policy.theta_min
        row["robustness"] = robustness_bound(policy)
    except Exception as exc:  # noqa: BLE001 - per-cell failures are data
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_cells(config: dict, workers: int) -> list[dict]:
    cells = [(n, seed) for n in config["evaluation"]["n_train"]
             for seed in config["evaluation"]["seeds"]]
    if workers <= 1:
        return [_evaluate_cell(config, n, seed) for n, seed in cells]
    # Cells are seeded independently, so scheduling cannot change results;
    # executor.map returns them in submission order.
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: _evaluate_cell(config, *c), cells))


def cmd_evaluate(config: dict, workers: int) -> tuple[list[dict], list[str]]:
    return _run_cells(config, workers), EVALUATE_COLUMNS


def cmd_sweep(config: dict, workers: int) -> tuple[list[dict], list[str]]:
    rows = _run_cells(config, workers)
    good = [r for r in rows if r["error"] == "" and r["cr_mean"] != ""]
    slope = ""
    if len({r["n"] for r in good}) >= 2:
        log_n = np.log([r["n"] for r in good])
        log_excess = np.log([max(r["cr_mean"] - 1.0, 1e-12) for r in good])
        slope = float(np.polyfit(log_n, log_excess, 1)[0])
    for row in rows:
        row["slope"] = slope
    return rows, SWEEP_COLUMNS


def cmd_lowerbound(config: dict) -> tuple[list[dict], list[str]]:
    lb = config["lowerbound"]
    kind = lb.get("kind")
    if kind == "core-grid":
        try:
            cert = analysis.lb_certify_core_grid(
                float(lb["epsilon"]), int(lb["d"]), int(lb["n_train"]),
                seed=int(lb.get("seed", 0)))
        except ValueError as exc:
            # Surfaces the tiling suggestion verbatim as a config error.
            raise ConfigError(str(exc)) from exc
        threshold = 1.0 + cert.epsilon
        row = {"schema_id": SCHEMA_ID, "kind": kind, "epsilon": cert.epsilon,
               "d": cert.d, "n_train": cert.n_train, "n_cores": cert.n_cores,
               "n_sampled_cores": cert.n_sampled_cores,
               "unsampled_fraction": cert.unsampled_fraction,
               "certified_bound": cert.certified_bound,
               "threshold": threshold,
               "passed": cert.certified_bound > threshold}
        return [row], LB_CORE_COLUMNS
    if kind == "noise":
        p = float(lb["p"])
        dist = NoiseLowerBound(p=p)
        scan = analysis.cr_scan(dist, float(lb["theta_start"]),
                                float(lb["theta_stop"]), float(lb["theta_step"]))
        floor = 1.0 + math.sqrt(p) / 2.0
        row = {"schema_id": SCHEMA_ID, "kind": kind, "p": p,
               "min_cr": scan.min_value, "argmin_theta": scan.argmin_theta,
               "floor": floor, "passed": scan.min_value >= floor}
        return [row], LB_NOISE_COLUMNS
    raise ConfigError(f"lowerbound.kind must be 'core-grid' or 'noise', "
                      f"got {kind!r}")


def cmd_scan(config: dict) -> tuple[list[dict], list[str]]:
    sc = config["scan"]
    dist = from_doc(config["distribution"])
    n_mc = sc.get("n_mc")
    scan = analysis.cr_scan(dist, float(sc["theta_start"]),
                            float(sc["theta_stop"]), float(sc["theta_step"]),
                            n_mc=None if n_mc is None else int(n_mc),
                            seed=int(sc.get("seed", 0)))
    rows = [{"schema_id": SCHEMA_ID, **r} for r in scan.rows()]
    return rows, SCAN_COLUMNS


def cmd_pdim_check(config: dict) -> tuple[list[dict], list[str]]:
    rows = []
    # Forced-common-threshold instance: the alternating labeling must be
    # unrealizable however the two thresholds are chosen.
    inst = analysis.common_threshold_instance(
        [0.2, 0.4, 0.6, 0.8, 0.9], [1.2] * 5)
    alternating = [1, 0, 1, 0, 1]
    res = analysis.realizability_check(inst, alternating)
    rows.append({"schema_id": SCHEMA_ID, "check": "common-threshold-alternating",
                 "n_points": inst.n_points, "n_labelings": 1,
                 "n_feasible": int(res.feasible), "expected_feasible": 0,
                 "passed": not res.feasible})
    # Shattered instance: every labeling of d just-long seasons must be
    # realizable with witnesses at 1.5.
    max_d = int(config["pdim"]["max_d"])
    for d in range(1, max_d + 1):
        inst = analysis.shattered_pair_instance(d)
        feasible = 0
        for bits in range(2 ** d):
            labeling = [(bits >> j) & 1 for j in range(d)]
            if analysis.realizability_check(inst, labeling).feasible:
                feasible += 1
        rows.append({"schema_id": SCHEMA_ID, "check": f"shattered-pair-d{d}",
                     "n_points": d, "n_labelings": 2 ** d,
                     "n_feasible": feasible, "expected_feasible": 2 ** d,
                     "passed": feasible == 2 ** d})
    return rows, PDIM_COLUMNS


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row.get(c, "")) for c in columns])
    return buf.getvalue()


def render_json(rows: list[dict], columns: list[str]) -> str:
    payload = {"schema_id": SCHEMA_ID, "columns": columns,
               "rows": [{c: row.get(c, "") for c in columns} for row in rows]}
    return json.dumps(payload, indent=2) + "\n"


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rentlearn",
        description="Fit, evaluate, and certify learning-augmented "
                    "rent-or-buy policies.")
    parser.add_argument("command",
                        choices=["evaluate", "sweep", "lowerbound", "scan",
                                 "pdim-check", "print-config"])
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--out", default=None, help="output file (default stdout)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the distribution seed and the seed list")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads for sweep/evaluate cells")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "print-config":
            _emit(yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False), args.out)
            return 0
        config = load_config(args.config, seed_override=args.seed)
        if args.command == "evaluate":
            rows, columns = cmd_evaluate(config, args.workers)
        elif args.command == "sweep":
            rows, columns = cmd_sweep(config, args.workers)
            slopes = [r["slope"] for r in rows if r.get("slope") != ""]
            if slopes:
                print(f"slope: {slopes[0]!r}", file=sys.stderr)
        elif args.command == "lowerbound":
            rows, columns = cmd_lowerbound(config)
        elif args.command == "scan":
            rows, columns = cmd_scan(config)
        else:
            rows, columns = cmd_pdim_check(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    render = render_json if args.format == "json" else render_csv
    try:
        _emit(render(rows, columns), args.out)
    except OSError as exc:
        print(f"runtime failure: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
