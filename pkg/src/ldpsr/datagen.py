"""Synthetic ground truths and datasets for sparse linear regression.

Families covered: sub-Gaussian designs with identity / Toeplitz / custom
covariance and Gaussian noise, heavy-tailed (Student-t) responses, and the
two adversarial hypercube constructions (signed three-level prior for the
one-shot setting, shifted Rademacher prior for the round-based setting).
Every generator is a deterministic function of its parameters and seed.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from . import rng as _rng
from .linalg import check_finite

__all__ = [
    "NoiseSpec",
    "GroundTruth",
    "Dataset",
    "HardInstance",
    "make_ground_truth",
    "sample_subgaussian",
    "sample_heavy_tailed",
    "sample_hard_noninteractive",
    "sample_hard_interactive",
    "toeplitz_covariance",
    "save_dataset_csv",
    "load_dataset_csv",
    "save_dataset_binary",
    "load_dataset_binary",
]

L1_BUDGET = 0.9  # realized l1 norm of generated ground truths, margin below 1

DATASET_MAGIC = b"LDPSRDS1"
DATASET_VERSION = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Response-noise family.

    gaussian: zero-mean normal with standard deviation ``scale``.
    student_t: ``scale`` times a Student-t with 2p+1 degrees of freedom, so
        the 2p-th moment is finite (p = ``moment_p`` > 1).
    bounded_hypercube: noise implied by the hypercube label law; its scale
        is fixed by the construction, |noise| <= 2.
    """

    family: str = "gaussian"
    scale: float = 1.0
    moment_p: float | None = None

    def __post_init__(self) -> None:
        if self.family not in ("gaussian", "student_t", "bounded_hypercube"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "gaussian" and self.scale < 0:
            raise ValueError("gaussian noise scale must be >= 0")
        if self.family == "student_t":
            if self.moment_p is None or self.moment_p <= 1:
                raise ValueError("student_t noise requires moment_p > 1")

    @property
    def student_df(self) -> float:
        assert self.family == "student_t" and self.moment_p is not None
        return 2.0 * self.moment_p + 1.0


@dataclass(frozen=True)
class GroundTruth:
    theta_star: np.ndarray
    sparsity_k: int
    covariance: np.ndarray
    noise_spec: NoiseSpec
    dim_d: int

    def __post_init__(self) -> None:
        theta = check_finite(self.theta_star, "theta_star")
        if int(np.count_nonzero(theta)) > self.sparsity_k:
            raise ValueError("theta_star has more nonzeros than sparsity_k")
        if float(np.abs(theta).sum()) > 1.0 + 1e-12:
            raise ValueError("theta_star l1 norm exceeds 1")
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (self.dim_d, self.dim_d):
            raise ValueError("covariance shape does not match dim_d")
        if not np.array_equal(cov, cov.T):
            raise ValueError("covariance must be exactly symmetric")

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta_star)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    n: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        X = check_finite(self.X, "X")
        Y = check_finite(self.Y, "Y")
        if X.ndim != 2 or Y.ndim != 1 or X.shape[0] != Y.shape[0]:
            raise ValueError("X must be (n, d) and Y must be (n,)")
        if self.n != X.shape[0] or self.n < 1:
            raise ValueError("n must match the number of rows and be >= 1")

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class HardInstance:
    z: np.ndarray
    gamma: float
    truth: GroundTruth


def toeplitz_covariance(d: int, rho: float) -> np.ndarray:
    """Covariance with entries rho^|i-j|."""
    if not -1.0 < rho < 1.0:
        raise ValueError("toeplitz rho must be in (-1, 1)")
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def make_ground_truth(
    d: int,
    k: int,
    covariance_kind: str = "identity",
    noise: NoiseSpec = NoiseSpec("gaussian", 1.0),
    seed: int = 0,
    toeplitz_rho: float = 0.5,
    custom_covariance: np.ndarray | None = None,
) -> GroundTruth:
    """Draw a k-sparse parameter with l1 norm exactly 0.9 and its covariance.

    Support is uniform over the d-choose-k subsets; nonzero magnitudes start
    uniform on [0.5, 1]/k with random signs, then rescale so the l1 norm
    lands on the 0.9 budget.
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    gen = _rng.stream(seed, _rng.TAG_TRUTH)
    support = np.sort(gen.choice(d, size=k, replace=False))
    mags = gen.uniform(0.5, 1.0, size=k) / k
    signs = gen.choice([-1.0, 1.0], size=k)
    theta = np.zeros(d)
    theta[support] = signs * mags * (L1_BUDGET / mags.sum())

    if covariance_kind == "identity":
        cov = np.eye(d)
    elif covariance_kind == "toeplitz":
        cov = toeplitz_covariance(d, toeplitz_rho)
    elif covariance_kind == "custom":
        if custom_covariance is None:
            raise ValueError("custom covariance_kind requires a matrix")
        cov = np.asarray(custom_covariance, dtype=np.float64)
        cov = (cov + cov.T) / 2.0
    else:
        raise ValueError(f"unknown covariance_kind {covariance_kind!r}")
    return GroundTruth(theta, k, cov, noise, d)


def _noise_draw(spec: NoiseSpec, n: int, gen: np.random.Generator) -> np.ndarray:
    if spec.family == "gaussian":
        return spec.scale * gen.standard_normal(n)
    if spec.family == "student_t":
        return spec.scale * gen.standard_t(spec.student_df, size=n)
    raise ValueError(f"cannot sample {spec.family!r} noise directly")


def _covariance_sqrt(cov: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() <= 0:
        raise ValueError("covariance must be positive definite")
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def sample_subgaussian(truth: GroundTruth, n: int, seed: int) -> Dataset:
    """x ~ N(0, Sigma), y = <x, theta*> + noise per the truth's spec."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = _rng.stream(seed, _rng.TAG_DATA)
    g = gen.standard_normal((n, truth.dim_d))
    if np.array_equal(truth.covariance, np.eye(truth.dim_d)):
        X = g
    else:
        X = g @ _covariance_sqrt(truth.covariance)
    Y = X @ truth.theta_star + _noise_draw(truth.noise_spec, n, gen)
    return Dataset(X, Y, n, {"generator_name": "subgaussian", "seed": seed})


def sample_heavy_tailed(truth: GroundTruth, n: int, seed: int) -> Dataset:
    """Sub-Gaussian covariates with Student-t responses (bounded 2p moment)."""
    if truth.noise_spec.family != "student_t":
        raise ValueError("heavy-tailed sampling requires student_t noise spec")
    data = sample_subgaussian(truth, n, seed)
    return Dataset(
        data.X, data.Y, n, {"generator_name": "heavy_tailed", "seed": seed}
    )


def _hypercube_labels(
    X: np.ndarray, theta: np.ndarray, gen: np.random.Generator
) -> np.ndarray:
    # y = +1 with probability (1 + <x, theta>)/2, else -1; equivalently
    # y = <theta, x> + noise with E[noise | x] = 0 and |noise| <= 2.
    p_plus = (1.0 + X @ theta) / 2.0
    if p_plus.min() < -1e-12 or p_plus.max() > 1.0 + 1e-12:
        raise ValueError("label probability left [0, 1]; |<x, theta>| > 1")
    return np.where(gen.random(X.shape[0]) < p_plus, 1.0, -1.0)


def sample_hard_noninteractive(
    d: int, k: int, nu: float, n: int, seed: int
) -> tuple[HardInstance, Dataset]:
    """Three-level signed prior on the hypercube: theta_i = gamma * z_i.

    z_i is +1 or -1 with probability k/4d each, else 0; z is resampled until
    it is k-sparse so the ground-truth invariants hold deterministically.
    gamma = nu / sqrt(k), which requires nu <= 1/sqrt(k).
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    if nu > 1.0 / sqrt(k):
        raise ValueError(f"nu must be <= 1/sqrt(k) = {1.0 / sqrt(k):.6g}")
    gamma = nu / sqrt(k)
    gen = _rng.stream(seed, _rng.TAG_DATA)
    p = k / (4.0 * d)
    while True:
        u = gen.random(d)
        z = np.where(u < p, 1, np.where(u < 2 * p, -1, 0)).astype(np.int64)
        if np.count_nonzero(z) <= k:
            break
    theta = gamma * z.astype(np.float64)
    truth = GroundTruth(
        theta, k, np.eye(d), NoiseSpec("bounded_hypercube", 2.0), d
    )
    X = gen.choice([-1.0, 1.0], size=(n, d))
    Y = _hypercube_labels(X, theta, gen)
    data = Dataset(X, Y, n, {"generator_name": "hard_noninteractive", "seed": seed})
    return HardInstance(z, gamma, truth), data


def sample_hard_interactive(
    d: int, k: int, nu: float, n: int, seed: int
) -> tuple[HardInstance, Dataset]:
    """Shifted Rademacher prior: theta_i = gamma * (z_i + 1)/2, z_i in {-1,+1}.

    P(z_i = +1) = k/2d; z is resampled until at most k coordinates are +1.
    gamma = 4*sqrt(2)*nu/sqrt(k), which requires nu <= 1/(4*sqrt(2k)).
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    nu_max = 1.0 / (4.0 * sqrt(2.0 * k))
    if nu > nu_max:
        raise ValueError(f"nu must be <= 1/(4*sqrt(2k)) = {nu_max:.6g}")
    gamma = 4.0 * sqrt(2.0) * nu / sqrt(k)
    gen = _rng.stream(seed, _rng.TAG_DATA)
    p = k / (2.0 * d)
    while True:
        z = np.where(gen.random(d) < p, 1, -1).astype(np.int64)
        if np.count_nonzero(z == 1) <= k:
            break
    theta = gamma * (z + 1).astype(np.float64) / 2.0
    truth = GroundTruth(
        theta, k, np.eye(d), NoiseSpec("bounded_hypercube", 2.0), d
    )
    X = gen.choice([-1.0, 1.0], size=(n, d))
    Y = _hypercube_labels(X, theta, gen)
    data = Dataset(X, Y, n, {"generator_name": "hard_interactive", "seed": seed})
    return HardInstance(z, gamma, truth), data


# ---------------------------------------------------------------------------
# dataset import/export


def save_dataset_csv(data: Dataset, path: str) -> None:
    d = data.d
    header = ",".join([f"x{j}" for j in range(d)] + ["y"])
    rows = np.column_stack([data.X, data.Y])
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_dataset_csv(path: str) -> Dataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    if header[-1] != "y" or header[0] != "x0":
        raise ValueError(f"unexpected CSV header {header!r}")
    X, Y = body[:, :-1], body[:, -1]
    return Dataset(X, Y, X.shape[0], {"generator_name": "csv", "seed": -1})


def save_dataset_binary(data: Dataset, path: str) -> None:
    """magic, version/n/d as little-endian u64, then row-major (x..., y) floats."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<QQQ", DATASET_VERSION, data.n, data.d))
        rows = np.column_stack([data.X, data.Y]).astype("<f8")
        fh.write(rows.tobytes(order="C"))


def load_dataset_binary(path: str) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        version, n, d = struct.unpack("<QQQ", fh.read(24))
        if version != DATASET_VERSION:
            raise ValueError(f"unsupported dataset format version {version}")
        buf = fh.read(8 * n * (d + 1))
    rows = np.frombuffer(buf, dtype="<f8").reshape(n, d + 1).astype(np.float64)
    return Dataset(rows[:, :-1], rows[:, -1], n, {"generator_name": "binary", "seed": -1})


def dumps_dataset_binary(data: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<QQQ", DATASET_VERSION, data.n, data.d))
    buf.write(np.column_stack([data.X, data.Y]).astype("<f8").tobytes(order="C"))
    return buf.getvalue()
