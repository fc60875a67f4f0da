"""Monte-Carlo benchmark harness.

Expands an experiment grid, runs seeded trials (optionally across a thread
pool), evaluates against the generating truth, and writes a fixed-schema
CSV.  Also fits log-log rate slopes of median error against n or epsilon.

Determinism: the seed of row (grid_index, trial) is
``derive_seed(base_seed, grid_index, trial)``; rows are sorted by
(grid_index, trial) before writing, so thread count never changes the
output.  Wall-clock timings are the one intentionally nondeterministic
column; disable them (timing=False) when byte-identical reruns matter.

Medians here are taken over successful trials; a configuration whose trials
all failed gets median +inf, ranking it worse than any numeric error.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as _rng
from .datagen import (
    Dataset,
    GroundTruth,
    NoiseSpec,
    make_ground_truth,
    sample_hard_interactive,
    sample_hard_noninteractive,
    sample_heavy_tailed,
    sample_subgaussian,
)
from .estimators import (
    EstimateReport,
    IhtConfig,
    NldpConfig,
    evaluate,
    failure_report,
    heavy_tailed_tau2,
    ldp_iht,
    ols_soft_threshold,
    simulate_nldp,
    simulate_nldp_public,
)
from .linalg import CovarianceNotInvertible, spectrum
from .mechanisms import ClipConfig, PrivacyBudget, default_clip_config

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "RateFit",
    "run_experiment",
    "fit_rate",
    "median_l2",
    "write_rows_csv",
    "read_rows_csv",
    "rows_to_csv_bytes",
]

CSV_HEADER = (
    "estimator,n,d,k,epsilon,trial,seed,l2_err,linf_err,l1_err,"
    "support_precision,support_recall,wall_time_ms,failure"
)

ESTIMATORS = ("ols_st", "nldp", "nldp_public", "nldp_heavy", "iht_isotropic", "iht_general")
DATA_FAMILIES = ("subgaussian", "hard_noninteractive", "hard_interactive", "heavy_tailed")


@dataclass(frozen=True)
class ExperimentConfig:
    estimator: str
    ns: tuple[int, ...]
    ds: tuple[int, ...]
    ks: tuple[int, ...]
    epsilons: tuple[float, ...]
    delta: float = 1e-5
    trials: int = 1
    base_seed: int = 0
    data_family: str = "subgaussian"
    c_lambda: float | tuple[float, ...] = 1.0
    output_path: str | None = None
    # data knobs
    noise_scale: float = 0.3
    moment_p: float | None = None
    covariance_kind: str = "identity"
    toeplitz_rho: float = 0.5
    hard_nu: float | None = None
    # estimator knobs (None means the documented default)
    lambda_n: float = 0.0
    clip_tau1: float | None = None
    clip_tau2: float | None = None
    clip_r: float | None = None
    eta: float | None = None
    k_prime: int | None = None
    iterations: int | None = None
    public_m: int | None = None
    support_threshold: float = 1e-6
    timing: bool = True

    def __post_init__(self) -> None:
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.data_family not in DATA_FAMILIES:
            raise ValueError(f"unknown data family {self.data_family!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for name, grid in (("n", self.ns), ("d", self.ds), ("k", self.ks), ("epsilon", self.epsilons)):
            if len(grid) == 0:
                raise ValueError(f"grid for {name} is empty")
        needs_delta = self.estimator in ("nldp", "nldp_public", "nldp_heavy")
        if needs_delta and not 0.0 < self.delta < 1.0 and not all(
            math.isinf(e) for e in self.epsilons
        ):
            raise ValueError("delta must be in (0, 1) for Gaussian-mechanism estimators")
        if self.estimator == "nldp_heavy" and (self.moment_p is None or self.moment_p <= 1):
            raise ValueError("nldp_heavy requires moment_p > 1")

    @property
    def grid(self) -> list[tuple[int, int, int, float]]:
        return list(itertools.product(self.ns, self.ds, self.ks, self.epsilons))


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    n: int
    d: int
    k: int
    epsilon: float
    trial: int
    seed: int
    l2_err: float
    linf_err: float
    l1_err: float
    support_precision: float
    support_recall: float
    wall_time_ms: float
    failure: str


@dataclass(frozen=True)
class RateFit:
    slope_vs_n: float
    intercept: float
    r_squared: float
    grid_points_used: int


# ---------------------------------------------------------------------------
# trial execution


def _make_data(
    cfg: ExperimentConfig, n: int, d: int, k: int, seed: int
) -> tuple[GroundTruth, Dataset]:
    family = cfg.data_family
    if family == "subgaussian":
        truth = make_ground_truth(
            d, k, cfg.covariance_kind, NoiseSpec("gaussian", cfg.noise_scale),
            seed, cfg.toeplitz_rho,
        )
        return truth, sample_subgaussian(truth, n, seed)
    if family == "heavy_tailed":
        p = cfg.moment_p if cfg.moment_p is not None else 2.0
        truth = make_ground_truth(
            d, k, cfg.covariance_kind, NoiseSpec("student_t", cfg.noise_scale, p),
            seed, cfg.toeplitz_rho,
        )
        return truth, sample_heavy_tailed(truth, n, seed)
    if family == "hard_noninteractive":
        nu = cfg.hard_nu if cfg.hard_nu is not None else 1.0 / math.sqrt(k)
        inst, data = sample_hard_noninteractive(d, k, nu, n, seed)
        return inst.truth, data
    nu = cfg.hard_nu if cfg.hard_nu is not None else 1.0 / (4.0 * math.sqrt(2.0 * k))
    inst, data = sample_hard_interactive(d, k, nu, n, seed)
    return inst.truth, data


def _clip_for(cfg: ExperimentConfig, n: int, d: int) -> ClipConfig:
    base = default_clip_config(n, d)
    tau1 = cfg.clip_tau1 if cfg.clip_tau1 is not None else base.tau1
    tau2 = cfg.clip_tau2 if cfg.clip_tau2 is not None else base.tau2
    r = cfg.clip_r if cfg.clip_r is not None else base.r
    return ClipConfig(tau1=tau1, tau2=tau2, r=r)


def _estimate_once(
    cfg: ExperimentConfig,
    truth: GroundTruth,
    data: Dataset,
    eps: float,
    c_lambda: float,
    seed: int,
) -> tuple[np.ndarray, int]:
    """Returns (theta_hat, iterations_run); raises CovarianceNotInvertible."""
    n, d, k = data.n, data.d, truth.sparsity_k
    est = cfg.estimator
    if est == "ols_st":
        return ols_soft_threshold(data, cfg.lambda_n), 1
    if est in ("nldp", "nldp_heavy"):
        clip = _clip_for(cfg, n, d)
        rule = "subgaussian_rule"
        moment_p = None
        if est == "nldp_heavy":
            rule = "heavy_tailed_rule"
            moment_p = cfg.moment_p if cfg.moment_p is not None else 2.0
            if cfg.clip_tau2 is None:
                clip = replace(clip, tau2=heavy_tailed_tau2(n, d, moment_p))
        conf = NldpConfig(
            clip=clip,
            budget=PrivacyBudget(eps, cfg.delta, "half_half"),
            lambda_rule=rule,
            c_lambda=c_lambda,
            moment_p=moment_p,
        )
        return simulate_nldp(data, conf, seed), 1
    if est == "nldp_public":
        m_pub = cfg.public_m if cfg.public_m is not None else max(10 * d, 1000)
        pub = sample_subgaussian(truth, m_pub, _rng.derive_seed(seed, 0x9B1C))
        conf = NldpConfig(
            clip=_clip_for(cfg, n, d),
            budget=PrivacyBudget(eps, cfg.delta, "full"),
            lambda_rule="public_rule",
            c_lambda=c_lambda,
        )
        return simulate_nldp_public(data, pub.X, conf, seed), 1
    # iht variants
    clip = _clip_for(cfg, n, d)
    if est == "iht_isotropic":
        conf = IhtConfig.isotropic(
            n, k, clip, eps,
            T=cfg.iterations,
            eta=cfg.eta if cfg.eta is not None else 1.0,
            k_prime=cfg.k_prime,
        )
    else:
        conf = IhtConfig.general(
            n, d, k, clip, eps, spectrum(truth.covariance),
            T=cfg.iterations, k_prime=cfg.k_prime,
        )
        if cfg.eta is not None:
            conf = replace(conf, eta=cfg.eta)
    result = ldp_iht(data, conf, run_seed=seed)
    return result.theta, conf.T


def _run_trial(
    cfg: ExperimentConfig, grid_index: int, point: tuple[int, int, int, float], trial: int
) -> ResultRow:
    n, d, k, eps = point
    seed = _rng.derive_seed(cfg.base_seed, grid_index, trial)
    start = time.perf_counter()
    truth, data = _make_data(cfg, n, d, k, seed)
    c_grid = cfg.c_lambda if isinstance(cfg.c_lambda, tuple) else (cfg.c_lambda,)
    best: tuple[float, np.ndarray, int, float] | None = None
    failure = ""
    for c in c_grid:
        try:
            theta, iters = _estimate_once(cfg, truth, data, eps, c, seed)
        except CovarianceNotInvertible:
            failure = "cov_not_invertible"
            continue
        report = evaluate(theta, truth, cfg.support_threshold, iters)
        if best is None or report.l2_err < best[0]:
            best = (report.l2_err, theta, iters, c)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    label = cfg.estimator
    if best is None:
        rep = failure_report(d, failure or "estimation_failed")
    else:
        _, theta, iters, c_used = best
        rep = evaluate(theta, truth, cfg.support_threshold, iters)
        if len(c_grid) > 1:
            label = f"{cfg.estimator}[c_lambda={c_used:g}]"
        failure = ""
    return ResultRow(
        estimator=label,
        n=n,
        d=d,
        k=k,
        epsilon=eps,
        trial=trial,
        seed=seed,
        l2_err=rep.l2_err,
        linf_err=rep.linf_err,
        l1_err=rep.l1_err,
        support_precision=rep.support_precision,
        support_recall=rep.support_recall,
        wall_time_ms=elapsed_ms if cfg.timing else 0.0,
        failure=rep.failure or "",
    )


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """All grid points x trials, deterministic in base_seed for any threads."""
    tasks = [
        (gi, point, trial)
        for gi, point in enumerate(cfg.grid)
        for trial in range(cfg.trials)
    ]
    # tasks are already in (grid_index, trial) order and map() preserves
    # input order, so the row order is independent of the thread count
    if threads <= 1:
        return [_run_trial(cfg, gi, point, trial) for gi, point, trial in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: _run_trial(cfg, t[0], t[1], t[2]), tasks))


# ---------------------------------------------------------------------------
# statistics


def median_l2(rows: list[ResultRow]) -> float:
    """Median l2 error over successful trials; +inf if every trial failed."""
    vals = [r.l2_err for r in rows if not r.failure]
    if not vals:
        return math.inf
    return float(np.median(vals))


def fit_rate(rows: list[ResultRow], axis: str = "n") -> RateFit:
    """OLS of log median error against the log of the chosen axis.

    All grid coordinates other than the axis must be constant across rows.
    Axis values whose median is not finite (all-failed, or the epsilon=inf
    sentinel) are dropped; at least 3 usable values are required.
    """
    if axis not in ("n", "epsilon"):
        raise ValueError("axis must be 'n' or 'epsilon'")
    if not rows:
        raise ValueError("no rows to fit")
    others = {"n", "d", "k", "epsilon"} - {axis}
    for name in others:
        vals = {getattr(r, name) for r in rows}
        if len(vals) > 1:
            raise ValueError(f"rows vary along {name}; fix it before fitting {axis}")
    groups: dict[float, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault(getattr(r, axis), []).append(r)
    xs, ys = [], []
    for val in sorted(groups):
        med = median_l2(groups[val])
        if math.isfinite(val) and math.isfinite(med) and med > 0:
            xs.append(math.log(val))
            ys.append(math.log(med))
    if len(xs) < 3:
        raise ValueError(f"need >= 3 usable {axis} values, got {len(xs)}")
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * np.asarray(xs) + intercept
    resid = np.asarray(ys) - pred
    total = np.asarray(ys) - np.mean(ys)
    ss_tot = float(total @ total)
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, len(xs))


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return repr(float(v))


def rows_to_csv_bytes(rows: list[ResultRow]) -> bytes:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for r in rows:
        out.write(
            ",".join(
                [
                    r.estimator,
                    str(r.n),
                    str(r.d),
                    str(r.k),
                    _fmt(r.epsilon),
                    str(r.trial),
                    str(r.seed),
                    _fmt(r.l2_err),
                    _fmt(r.linf_err),
                    _fmt(r.l1_err),
                    _fmt(r.support_precision),
                    _fmt(r.support_recall),
                    _fmt(r.wall_time_ms),
                    r.failure,
                ]
            )
            + "\n"
        )
    return out.getvalue().encode()


def write_rows_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(rows_to_csv_bytes(rows))


def read_rows_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != CSV_HEADER:
            raise ValueError("unexpected CSV header")
        for rec in reader:
            rows.append(
                ResultRow(
                    estimator=rec[0],
                    n=int(rec[1]),
                    d=int(rec[2]),
                    k=int(rec[3]),
                    epsilon=float(rec[4]),
                    trial=int(rec[5]),
                    seed=int(rec[6]),
                    l2_err=float(rec[7]),
                    linf_err=float(rec[8]),
                    l1_err=float(rec[9]),
                    support_precision=float(rec[10]),
                    support_recall=float(rec[11]),
                    wall_time_ms=float(rec[12]),
                    failure=rec[13],
                )
            )
    return rows
