"""Estimators for sparse linear regression under local privacy.

* ``ols_soft_threshold``: non-private closed form, soft-thresholded ordinary
  least squares.
* ``nldp_estimate``: server side of the one-shot protocol; averages the two
  noisy sufficient-statistic channels, solves, soft-thresholds.
* ``nldp_public_estimate``: variant whose covariance comes from public
  unlabeled rows; users release only the label channel.
* ``ldp_iht``: round-based iterative hard thresholding driven by randomized
  gradients.

The small-sample regime surfaces as CovarianceNotInvertible from the solve;
no regularized fallback exists on purpose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import rng as _rng
from .datagen import Dataset, GroundTruth
from .linalg import (
    CovarianceNotInvertible,
    SpectrumReport,
    hard_truncate,
    project_l2_ball,
    soft_threshold,
    solve_spd,
)
from .mechanisms import (
    ClipConfig,
    PerturbedMessage,
    PrivacyBudget,
    perturb_stats_batch,
    perturb_xy_only_batch,
    sphere_randomizer_batch,
)
from .protocol import MessageBlock, Transcript, run_sequential

__all__ = [
    "NldpConfig",
    "IhtConfig",
    "IhtResult",
    "EstimateReport",
    "resolve_lambda",
    "heavy_tailed_tau2",
    "ols_soft_threshold",
    "nldp_estimate",
    "nldp_public_estimate",
    "simulate_nldp",
    "simulate_nldp_public",
    "ldp_iht",
    "evaluate",
    "report_to_json",
    "report_from_json",
]


@dataclass(frozen=True)
class NldpConfig:
    clip: ClipConfig
    budget: PrivacyBudget
    lambda_rule: str = "explicit"
    lambda_n: float = 0.0
    c_lambda: float = 1.0
    moment_p: float | None = None

    def __post_init__(self) -> None:
        if self.lambda_rule not in (
            "explicit",
            "subgaussian_rule",
            "heavy_tailed_rule",
            "public_rule",
        ):
            raise ValueError(f"unknown lambda rule {self.lambda_rule!r}")
        if self.lambda_rule == "explicit" and self.lambda_n < 0:
            raise ValueError("lambda_n must be nonnegative")
        if self.lambda_rule == "heavy_tailed_rule" and (
            self.moment_p is None or self.moment_p <= 1
        ):
            raise ValueError("heavy_tailed_rule requires moment_p > 1")


def resolve_lambda(config: NldpConfig, n: int, d: int) -> float:
    """Threshold level implied by the configured rule at sample size n."""
    eps, delta = config.budget.epsilon, config.budget.delta
    if config.lambda_rule == "explicit":
        return config.lambda_n
    if math.isinf(eps):
        return 0.0
    log_inv_delta = math.sqrt(math.log(1.0 / delta))
    if config.lambda_rule == "subgaussian_rule":
        return config.c_lambda * d * math.log(n) * log_inv_delta / (math.sqrt(n) * eps)
    if config.lambda_rule == "public_rule":
        return (
            config.c_lambda
            * math.log(n)
            * math.sqrt(d * math.log(d) * math.log(1.0 / delta))
            / (eps * math.sqrt(n))
        )
    # heavy_tailed_rule
    p = float(config.moment_p)
    power = (p - 1.0) / (2.0 * p)
    return (
        config.c_lambda
        * d
        * math.log(n)
        * log_inv_delta
        * (math.log(d) / (n * eps**2)) ** power
    )


def heavy_tailed_tau2(n: int, d: int, p: float) -> float:
    """Response clip (n / log d)^(1/2p) for bounded-2p-moment responses."""
    if p <= 1:
        raise ValueError("moment parameter p must exceed 1")
    if d < 2:
        raise ValueError("need d >= 2 for the log d clip schedule")
    return (n / math.log(d)) ** (1.0 / (2.0 * p))


@dataclass(frozen=True)
class IhtConfig:
    """Knobs of the round-based hard-thresholding solver.

    isotropic mode projects onto the unit ball and uses gradient sensitivity
    sqrt(d)*tau1*(sqrt(k')*tau1 + tau2); general mode projects onto radius 2
    with sensitivity sqrt(d)*tau1*(2*sqrt(k')*tau1 + tau2).
    """

    T: int
    eta: float
    k_prime: int
    epsilon: float
    clip: ClipConfig
    mode: str = "isotropic"

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k_prime < 1:
            raise ValueError("k_prime must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in ("isotropic", "general"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def ball_radius(self) -> float:
        return 1.0 if self.mode == "isotropic" else 2.0

    def grad_sensitivity(self, d: int) -> float:
        inner = self.ball_radius * math.sqrt(self.k_prime) * self.clip.tau1 + self.clip.tau2
        return math.sqrt(d) * self.clip.tau1 * inner

    @staticmethod
    def isotropic(
        n: int,
        k: int,
        clip: ClipConfig,
        epsilon: float,
        T: int | None = None,
        eta: float = 1.0,
        k_prime: int | None = None,
    ) -> "IhtConfig":
        return IhtConfig(
            T=T if T is not None else max(1, math.ceil(math.log(n))),
            eta=eta,
            k_prime=k_prime if k_prime is not None else 8 * k,
            epsilon=epsilon,
            clip=clip,
            mode="isotropic",
        )

    @staticmethod
    def general(
        n: int,
        d: int,
        k: int,
        clip: ClipConfig,
        epsilon: float,
        cov_spectrum: SpectrumReport,
        T: int | None = None,
        k_prime: int | None = None,
    ) -> "IhtConfig":
        """Anisotropic configuration from a covariance spectrum estimate.

        eta = 2/(3*gamma) and k' = 72*(gamma/mu)^2*k capped at d; the
        spectrum may come from a known covariance or public rows, never from
        the private data.
        """
        gamma, mu = cov_spectrum.max_eigenvalue, cov_spectrum.min_eigenvalue
        if mu <= 0:
            raise ValueError("covariance spectrum must be positive definite")
        kp = k_prime if k_prime is not None else min(d, math.ceil(72.0 * (gamma / mu) ** 2 * k))
        return IhtConfig(
            T=T if T is not None else max(1, math.ceil(math.log(n))),
            eta=2.0 / (3.0 * gamma),
            k_prime=kp,
            epsilon=epsilon,
            clip=clip,
            mode="general",
        )


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: np.ndarray | None
    l2_err: float
    linf_err: float
    l1_err: float
    support_precision: float
    support_recall: float
    iterations_run: int
    failure: str | None = None


@dataclass(frozen=True)
class IhtResult:
    theta: np.ndarray
    iterates: list[np.ndarray]
    error_trace: list[float] | None
    transcript: Transcript


# ---------------------------------------------------------------------------
# closed-form estimators


def _empirical_channels(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    sxx = data.X.T @ data.X / data.n
    sxy = data.X.T @ data.Y / data.n
    return sxx, sxy


def ols_soft_threshold(
    data: Dataset, lambda_n: float, min_eig_floor: float = 1e-10
) -> np.ndarray:
    """Soft-thresholded OLS on raw data (non-private baseline)."""
    sxx, sxy = _empirical_channels(data)
    ols = solve_spd(sxx, sxy, min_eig_floor)
    return soft_threshold(ols, lambda_n)


def _solve_and_threshold(
    sxx: np.ndarray, sxy: np.ndarray, lam: float, min_eig_floor: float
) -> np.ndarray:
    return soft_threshold(solve_spd(sxx, sxy, min_eig_floor), lam)


def nldp_estimate(
    messages: Sequence[PerturbedMessage],
    config: NldpConfig,
    n: int,
    min_eig_floor: float = 1e-10,
) -> np.ndarray:
    """Aggregate stat-pair messages, solve the noisy system, soft-threshold."""
    if len(messages) == 0:
        raise ValueError("no messages to aggregate")
    if len(messages) != n:
        raise ValueError(f"expected {n} messages, got {len(messages)}")
    first = messages[0]
    if first.kind != "stat_pair" or first.noisy_xxT is None:
        raise ValueError("nldp_estimate needs stat_pair messages with both channels")
    d = first.noisy_xy.shape[0]
    sum_xx = np.zeros((d, d))
    sum_xy = np.zeros(d)
    for m in messages:
        if m.kind != "stat_pair" or m.noisy_xxT is None:
            raise ValueError("mixed or incomplete message kinds")
        sum_xx += m.noisy_xxT
        sum_xy += m.noisy_xy
    lam = resolve_lambda(config, n, d)
    return _solve_and_threshold(sum_xx / n, sum_xy / n, lam, min_eig_floor)


def nldp_public_estimate(
    messages: Sequence[PerturbedMessage],
    public_X: np.ndarray,
    config: NldpConfig,
    min_eig_floor: float = 1e-10,
) -> np.ndarray:
    """Public-covariance variant: messages carry only the label channel."""
    if len(messages) == 0:
        raise ValueError("no messages to aggregate")
    public_X = np.asarray(public_X, dtype=np.float64)
    m_pub, d = public_X.shape
    if m_pub < d:
        raise CovarianceNotInvertible(
            f"public covariance is rank deficient: {m_pub} rows < d={d}"
        )
    n = len(messages)
    sum_xy = np.zeros(d)
    for m in messages:
        if m.kind != "stat_pair" or m.noisy_xxT is not None:
            raise ValueError("expected label-channel-only messages")
        sum_xy += m.noisy_xy
    sxx_pub = public_X.T @ public_X / m_pub
    lam = resolve_lambda(config, n, d)
    return _solve_and_threshold(sxx_pub, sum_xy / n, lam, min_eig_floor)


def simulate_nldp(
    data: Dataset,
    config: NldpConfig,
    run_seed: int,
    min_eig_floor: float = 1e-10,
) -> np.ndarray:
    """One-shot protocol end to end, with the batched per-user perturbation.

    Equivalent to run_non_interactive + nldp_estimate (the per-user noise is
    drawn from the user-indexed batch stream instead of per-user streams);
    used by the benchmark where materializing n messages is pointless.
    """
    gen = _rng.stream(run_seed, _rng.TAG_BATCH)
    sum_xx, sum_xy = perturb_stats_batch(
        data.X, data.Y, config.clip, config.budget, gen, aggregate=True
    )
    lam = resolve_lambda(config, data.n, data.d)
    return _solve_and_threshold(sum_xx / data.n, sum_xy / data.n, lam, min_eig_floor)


def simulate_nldp_public(
    data: Dataset,
    public_X: np.ndarray,
    config: NldpConfig,
    run_seed: int,
    min_eig_floor: float = 1e-10,
) -> np.ndarray:
    """Batched end-to-end run of the public-covariance variant."""
    public_X = np.asarray(public_X, dtype=np.float64)
    m_pub, d = public_X.shape
    if m_pub < d:
        raise CovarianceNotInvertible(
            f"public covariance is rank deficient: {m_pub} rows < d={d}"
        )
    gen = _rng.stream(run_seed, _rng.TAG_BATCH)
    xy = perturb_xy_only_batch(data.X, data.Y, config.clip, config.budget, gen)
    sxx_pub = public_X.T @ public_X / m_pub
    lam = resolve_lambda(config, data.n, d)
    return _solve_and_threshold(sxx_pub, xy.mean(axis=0), lam, min_eig_floor)


# ---------------------------------------------------------------------------
# iterative hard thresholding


def ldp_iht(
    data: Dataset,
    config: IhtConfig,
    run_seed: int = 0,
    theta0: np.ndarray | None = None,
    truth: GroundTruth | None = None,
) -> IhtResult:
    """Round-based private hard-thresholding descent.

    Every user is consumed exactly once; the per-user gradient at the current
    broadcast is checked against the sensitivity bound before randomization
    (a violation raises, it would mean the bound is wrong).  Returns the
    final iterate, all iterates, and the per-round error trace when a ground
    truth is supplied.
    """
    d = data.d
    r_grad = config.grad_sensitivity(d)
    radius = config.ball_radius
    theta0 = np.zeros(d) if theta0 is None else np.asarray(theta0, dtype=np.float64)
    if np.linalg.norm(theta0) > radius + 1e-12:
        raise ValueError("initial iterate lies outside the projection ball")
    clip = config.clip
    iterates: list[np.ndarray] = []

    def batch_perturb(Xg, Yg, uids, broadcast, gen) -> MessageBlock:
        Xt = np.sign(Xg) * np.minimum(np.abs(Xg), clip.tau1)
        Yt = np.sign(Yg) * np.minimum(np.abs(Yg), clip.tau2)
        resid = Xt @ broadcast - Yt
        grads = Xt * resid[:, None]
        worst = float(np.linalg.norm(grads, axis=1).max())
        if worst > r_grad * (1.0 + 1e-9):
            raise AssertionError(
                f"gradient sensitivity violated: {worst:.6g} > {r_grad:.6g}"
            )
        released = sphere_randomizer_batch(grads, r_grad, config.epsilon, gen)
        return MessageBlock("randomized_gradient", uids, grad=released)

    def server_step(round_index: int, messages) -> np.ndarray:
        if hasattr(messages, "grad_matrix"):
            mean_grad = messages.grad_matrix().mean(axis=0)
        else:
            mean_grad = np.mean([m.grad for m in messages], axis=0)
        prev = iterates[-1] if iterates else theta0
        tilde = prev - config.eta * mean_grad
        nxt = project_l2_ball(hard_truncate(tilde, config.k_prime), radius)
        iterates.append(nxt)
        return nxt

    transcript, final = run_sequential(
        data,
        config.T,
        server_step,
        batch_perturb=batch_perturb,
        init_broadcast=theta0,
        run_seed=run_seed,
    )
    trace = None
    if truth is not None:
        trace = [float(np.linalg.norm(th - truth.theta_star)) for th in iterates]
    return IhtResult(final, iterates, trace, transcript)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(
    theta_hat: np.ndarray,
    truth: GroundTruth,
    support_threshold: float = 1e-6,
    iterations_run: int = 1,
    failure: str | None = None,
) -> EstimateReport:
    """Per-norm errors and support recovery of an estimate against the truth."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    if theta_hat.shape != truth.theta_star.shape:
        raise ValueError("estimate and truth dimensions differ")
    diff = theta_hat - truth.theta_star
    selected = np.abs(theta_hat) > support_threshold
    true_support = truth.theta_star != 0.0
    n_sel = int(selected.sum())
    hits = int((selected & true_support).sum())
    precision = hits / n_sel if n_sel else 1.0
    recall = hits / int(true_support.sum())
    return EstimateReport(
        theta_hat=theta_hat,
        l2_err=float(np.linalg.norm(diff)),
        linf_err=float(np.abs(diff).max()),
        l1_err=float(np.abs(diff).sum()),
        support_precision=float(precision),
        support_recall=float(recall),
        iterations_run=iterations_run,
        failure=failure,
    )


def failure_report(d: int, failure: str) -> EstimateReport:
    """Report for a run that produced no estimate; errors are NaN."""
    nan = float("nan")
    return EstimateReport(None, nan, nan, nan, nan, nan, 0, failure)


def report_to_json(report: EstimateReport) -> str:
    payload = {
        "theta_hat": None if report.theta_hat is None else [float(v) for v in report.theta_hat],
        "l2_err": report.l2_err,
        "linf_err": report.linf_err,
        "l1_err": report.l1_err,
        "support_precision": report.support_precision,
        "support_recall": report.support_recall,
        "iterations_run": report.iterations_run,
        "failure": report.failure,
    }
    return json.dumps(payload, sort_keys=True)


def report_from_json(text: str) -> EstimateReport:
    obj = json.loads(text)
    theta = obj["theta_hat"]
    return EstimateReport(
        theta_hat=None if theta is None else np.asarray(theta, dtype=np.float64),
        l2_err=obj["l2_err"],
        linf_err=obj["linf_err"],
        l1_err=obj["l1_err"],
        support_precision=obj["support_precision"],
        support_recall=obj["support_recall"],
        iterations_run=obj["iterations_run"],
        failure=obj["failure"],
    )
