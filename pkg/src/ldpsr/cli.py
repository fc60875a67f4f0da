"""Command-line harness: generate datasets, run/sweep experiments, fit rate
slopes, and audit protocol transcripts.

Config files are TOML or JSON (sniffed by extension, .toml/.json).  Exit
codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

try:
    import tomllib as _toml  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

from .bench import (
    ExperimentConfig,
    fit_rate,
    read_rows_csv,
    run_experiment,
    write_rows_csv,
)
from .datagen import (
    NoiseSpec,
    make_ground_truth,
    sample_hard_interactive,
    sample_hard_noninteractive,
    sample_heavy_tailed,
    sample_subgaussian,
    save_dataset_binary,
    save_dataset_csv,
)
from .protocol import audit_transcript, load_transcript

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(Exception):
    pass


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            return _toml.load(fh)
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    raise ConfigError(f"config must be .toml or .json, got {path!r}")


def _as_tuple(value, cast):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return (cast(value),)


def _parse_epsilon(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def experiment_config_from_dict(obj: dict) -> ExperimentConfig:
    try:
        grid = obj.get("grid", {})
        c_lambda = obj.get("c_lambda", 1.0)
        if isinstance(c_lambda, (list, tuple)):
            c_lambda = tuple(float(c) for c in c_lambda)
        else:
            c_lambda = float(c_lambda)
        kwargs = dict(
            estimator=obj["estimator"],
            ns=_as_tuple(grid.get("n", obj.get("n")), int),
            ds=_as_tuple(grid.get("d", obj.get("d")), int),
            ks=_as_tuple(grid.get("k", obj.get("k")), int),
            epsilons=_as_tuple(grid.get("epsilon", obj.get("epsilon")), _parse_epsilon),
            delta=float(obj.get("delta", 1e-5)),
            trials=int(obj.get("trials", 1)),
            base_seed=int(obj.get("base_seed", 0)),
            data_family=obj.get("data_family", "subgaussian"),
            c_lambda=c_lambda,
            output_path=obj.get("output_path"),
        )
        for name, cast in (
            ("noise_scale", float),
            ("moment_p", float),
            ("covariance_kind", str),
            ("toeplitz_rho", float),
            ("hard_nu", float),
            ("lambda_n", float),
            ("clip_tau1", float),
            ("clip_tau2", float),
            ("clip_r", float),
            ("eta", float),
            ("k_prime", int),
            ("iterations", int),
            ("public_m", int),
            ("support_threshold", float),
            ("timing", bool),
        ):
            if name in obj and obj[name] is not None:
                kwargs[name] = cast(obj[name])
        return ExperimentConfig(**kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LDPSR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"LDPSR_THREADS is not an integer: {env!r}") from exc
    return 1


def _cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    try:
        family = cfg.get("family", "subgaussian")
        d = int(cfg["d"])
        k = int(cfg["k"])
        n = int(cfg["n"])
        seed = int(cfg.get("seed", 0))
        out = args.out or cfg.get("out")
        if out is None:
            raise ConfigError("generate needs an output path (--out or 'out')")
        if family == "subgaussian":
            truth = make_ground_truth(
                d, k, cfg.get("covariance_kind", "identity"),
                NoiseSpec("gaussian", float(cfg.get("noise_scale", 0.3))),
                seed, float(cfg.get("toeplitz_rho", 0.5)),
            )
            data = sample_subgaussian(truth, n, seed)
        elif family == "heavy_tailed":
            truth = make_ground_truth(
                d, k, cfg.get("covariance_kind", "identity"),
                NoiseSpec("student_t", float(cfg.get("noise_scale", 0.3)),
                          float(cfg.get("moment_p", 2.0))),
                seed, float(cfg.get("toeplitz_rho", 0.5)),
            )
            data = sample_heavy_tailed(truth, n, seed)
        elif family == "hard_noninteractive":
            nu = float(cfg.get("nu", 1.0 / math.sqrt(k)))
            _, data = sample_hard_noninteractive(d, k, nu, n, seed)
        elif family == "hard_interactive":
            nu = float(cfg.get("nu", 1.0 / (4.0 * math.sqrt(2.0 * k))))
            _, data = sample_hard_interactive(d, k, nu, n, seed)
        else:
            raise ConfigError(f"unknown data family {family!r}")
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if out.endswith(".csv"):
        save_dataset_csv(data, out)
    else:
        save_dataset_binary(data, out)
    print(f"wrote {data.n} rows (d={data.d}) to {out}")
    return EXIT_OK


def _run_or_sweep(args, sweep: bool) -> int:
    cfg = experiment_config_from_dict(_load_config(args.config))
    if args.no_timing:
        cfg = dataclasses.replace(cfg, timing=False)
    if not sweep:
        sizes = (len(cfg.ns), len(cfg.ds), len(cfg.ks), len(cfg.epsilons))
        if max(sizes) > 1:
            raise ConfigError(
                "run expects a single grid point; use sweep for grids "
                f"(got sizes n/d/k/eps = {sizes})"
            )
    out = args.out or cfg.output_path
    if out is None:
        raise ConfigError("no output path: pass --out or set output_path")
    rows = run_experiment(cfg, threads=_threads(args))
    write_rows_csv(rows, out)
    n_failed = sum(1 for r in rows if r.failure)
    print(f"wrote {len(rows)} rows to {out} ({n_failed} failed trials)")
    return EXIT_OK


def _cmd_fit(args) -> int:
    rows = read_rows_csv(args.csv)
    try:
        fit = fit_rate(rows, axis=args.axis)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(
        json.dumps(
            {
                "axis": args.axis,
                "slope_vs_n": fit.slope_vs_n,
                "intercept": fit.intercept,
                "r_squared": fit.r_squared,
                "grid_points_used": fit.grid_points_used,
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def _cmd_audit(args) -> int:
    report = audit_transcript(load_transcript(args.transcript))
    print(json.dumps({"ok": report.ok, "violations": report.violations}, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldpsr",
        description="Locally private sparse regression benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a dataset file")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(func=_cmd_generate)

    for name, is_sweep in (("run", False), ("sweep", True)):
        p = sub.add_parser(name, help=f"{name} an experiment config")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--no-timing", action="store_true",
                       help="write wall_time_ms as 0 for byte-stable reruns")
        p.set_defaults(func=lambda a, s=is_sweep: _run_or_sweep(a, s))

    p_fit = sub.add_parser("fit", help="fit a log-log rate slope from a CSV")
    p_fit.add_argument("--csv", required=True)
    p_fit.add_argument("--axis", choices=("n", "epsilon"), default="n")
    p_fit.set_defaults(func=_cmd_fit)

    p_audit = sub.add_parser("audit", help="validate a transcript file")
    p_audit.add_argument("transcript")
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
