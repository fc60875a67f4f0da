"""User-side randomization: clipping, Gaussian-mechanism releases, and the
epsilon-LDP unit-sphere randomizer for bounded vectors.

Noise calibrations
------------------
Sufficient-statistic release (two channels per user, budget split in half):

* matrix channel: symmetric noise, upper triangle (diagonal included) i.i.d.
  ``N(0, 32 r^4 log(2.5/delta) / eps^2)``, mirrored below;
* vector channel: ``N(0, 32 d tau1^2 tau2^2 log(2.5/delta) / eps^2 I_d)``.

Label-statistic-only release (single channel, full budget):

* ``N(0, 2 d tau1^2 tau2^2 log(1.25/delta) / eps^2 I_d)``.

Sphere randomizer for a vector v with ||v||_2 <= r: pick a signed direction
x = b * r * v/||v|| with P(b=+1) = 1/2 + ||v||/(2r), flip a coin
s ~ Ber(e^eps/(e^eps+1)), draw u uniform on the hemisphere agreeing with s
(ties, <u, x> = 0, go to the s=0 branch), and release C(d, eps) * u where

    C(d, eps) = r * (e^eps + 1)/(e^eps - 1) / m_d,
    m_d = E|u_1| = Gamma(d/2) / (sqrt(pi) * Gamma((d+1)/2)),

which makes the release unbiased for v with constant magnitude C(d, eps).
An epsilon = inf sentinel on every mechanism disables the randomness but
keeps clipping, for oracle-equivalence tests.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .linalg import project_l2_ball, symmetrize_from_upper

__all__ = [
    "PrivacyBudget",
    "ClipConfig",
    "PerturbedMessage",
    "shrink_coordinates",
    "clip_l2",
    "clip_response",
    "perturb_stats",
    "perturb_stats_batch",
    "perturb_xy_only",
    "perturb_xy_only_batch",
    "sphere_randomizer",
    "sphere_randomizer_batch",
    "sphere_calibration",
    "hemisphere_mean_abs_coordinate",
    "stat_noise_std",
    "xy_only_noise_std",
    "default_clip_config",
    "encode_message",
    "decode_message",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) pair with the split policy across released statistics.

    half_half: each of the two sufficient-statistic channels consumes
    (eps/2, delta/2); the per-channel calibrations above already encode this.
    full: a single released channel consumes the whole (eps, delta).
    epsilon = math.inf is the zero-noise sentinel.
    """

    epsilon: float
    delta: float = 0.0
    split: str = "half_half"

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if self.split not in ("half_half", "full"):
            raise ValueError(f"unknown split {self.split!r}")

    @property
    def is_noiseless(self) -> bool:
        return math.isinf(self.epsilon)

    def require_gaussian(self) -> None:
        if not self.is_noiseless and self.delta <= 0.0:
            raise ValueError("Gaussian mechanism requires delta > 0")


@dataclass(frozen=True)
class ClipConfig:
    """tau1: coordinate shrink for x; tau2: response clip; r: l2 clip radius."""

    tau1: float
    tau2: float
    r: float

    def __post_init__(self) -> None:
        if self.tau1 <= 0 or self.tau2 <= 0 or self.r <= 0:
            raise ValueError("all clip parameters must be positive")


def default_clip_config(n: int, d: int, sigma: float = 1.0) -> ClipConfig:
    """tau1 = tau2 = sigma*sqrt(2 log(2nd)), r = 4*sigma*sqrt(d log n)."""
    tau = sigma * math.sqrt(2.0 * math.log(2.0 * n * d))
    return ClipConfig(tau1=tau, tau2=tau, r=4.0 * sigma * math.sqrt(d * math.log(n)))


@dataclass(frozen=True)
class PerturbedMessage:
    """One user's private release.

    kind "stat_pair" carries the noisy outer product (noisy_xxT, may be None
    when only the label channel was released) and the noisy x*y vector;
    kind "randomized_gradient" carries grad.
    """

    kind: str
    user_id: int
    noisy_xxT: np.ndarray | None = None
    noisy_xy: np.ndarray | None = None
    grad: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind == "stat_pair":
            if self.noisy_xy is None or self.grad is not None:
                raise ValueError("stat_pair must carry noisy_xy and no grad")
        elif self.kind == "randomized_gradient":
            if self.grad is None or self.noisy_xy is not None or self.noisy_xxT is not None:
                raise ValueError("randomized_gradient must carry grad only")
        else:
            raise ValueError(f"unknown message kind {self.kind!r}")


# ---------------------------------------------------------------------------
# clipping


def shrink_coordinates(x: np.ndarray, tau1: float) -> np.ndarray:
    """Sign-preserving per-coordinate clamp to magnitude tau1."""
    if tau1 <= 0:
        raise ValueError("tau1 must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.minimum(np.abs(x), tau1)


def clip_l2(x: np.ndarray, r: float) -> np.ndarray:
    """Rescale to norm r if above; same map as the l2-ball projection."""
    return project_l2_ball(x, r)


def clip_response(y: float, tau2: float) -> float:
    if tau2 <= 0:
        raise ValueError("tau2 must be positive")
    return float(np.sign(y) * min(abs(y), tau2))


def _clip_rows(X: np.ndarray, r: float) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    factors = np.ones_like(norms)
    over = norms > r
    factors[over] = r / norms[over]
    return X * factors[:, None]


# ---------------------------------------------------------------------------
# Gaussian-mechanism releases


def stat_noise_std(d: int, clip: ClipConfig, budget: PrivacyBudget) -> tuple[float, float]:
    """(matrix per-entry std, vector per-coordinate std) for the pair release."""
    budget.require_gaussian()
    if budget.is_noiseless:
        return 0.0, 0.0
    scale = math.sqrt(32.0 * math.log(2.5 / budget.delta)) / budget.epsilon
    return scale * clip.r**2, scale * math.sqrt(d) * clip.tau1 * clip.tau2


def xy_only_noise_std(d: int, clip: ClipConfig, budget: PrivacyBudget) -> float:
    """Per-coordinate std for the label-channel-only release (full budget)."""
    budget.require_gaussian()
    if budget.is_noiseless:
        return 0.0
    return (
        math.sqrt(2.0 * d * math.log(1.25 / budget.delta))
        * clip.tau1
        * clip.tau2
        / budget.epsilon
    )


def perturb_stats(
    x: np.ndarray,
    y: float,
    clip: ClipConfig,
    budget: PrivacyBudget,
    user_seed: int,
    user_id: int = 0,
) -> PerturbedMessage:
    """Release both sufficient-statistic channels for one user."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    sigma_mat, sigma_vec = stat_noise_std(d, clip, budget)
    xb = clip_l2(x, clip.r)
    xt = shrink_coordinates(x, clip.tau1)
    yt = clip_response(y, clip.tau2)
    outer = np.outer(xb, xb)
    xy = xt * yt
    if not budget.is_noiseless:
        gen = _rng.stream(user_seed, _rng.TAG_USER)
        outer = outer + symmetrize_from_upper(gen.normal(0.0, sigma_mat, (d, d)))
        xy = xy + gen.normal(0.0, sigma_vec, d)
    return PerturbedMessage("stat_pair", user_id, noisy_xxT=outer, noisy_xy=xy)


def perturb_stats_batch(
    X: np.ndarray,
    Y: np.ndarray,
    clip: ClipConfig,
    budget: PrivacyBudget,
    gen: np.random.Generator,
    aggregate: bool = False,
):
    """Vectorized release for all users at once, row i belonging to user i.

    With aggregate=False returns (noisy_xxT_batch, noisy_xy_batch) of shapes
    (n, d, d) and (n, d).  With aggregate=True returns the channel sums
    (sum_xxT, sum_xy) without materializing per-user matrices; the noise is
    still drawn per user so the result is one draw of the same protocol.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, d = X.shape
    sigma_mat, sigma_vec = stat_noise_std(d, clip, budget)
    Xb = _clip_rows(X, clip.r)
    Xt = np.sign(X) * np.minimum(np.abs(X), clip.tau1)
    Yt = np.sign(Y) * np.minimum(np.abs(Y), clip.tau2)
    xy = Xt * Yt[:, None]
    iu, ju = np.triu_indices(d)
    if aggregate:
        sum_xxT = Xb.T @ Xb
        if not budget.is_noiseless:
            tri = gen.normal(0.0, sigma_mat, (n, iu.size)).sum(axis=0)
            noise = np.zeros((d, d))
            noise[iu, ju] = tri
            sum_xxT = sum_xxT + symmetrize_from_upper(noise)
            xy = xy + gen.normal(0.0, sigma_vec, (n, d))
        return sum_xxT, xy.sum(axis=0)
    outer = np.einsum("ni,nj->nij", Xb, Xb)
    if not budget.is_noiseless:
        tri = gen.normal(0.0, sigma_mat, (n, iu.size))
        noise = np.zeros((n, d, d))
        noise[:, iu, ju] = tri
        noise[:, ju, iu] = tri
        outer = outer + noise
        xy = xy + gen.normal(0.0, sigma_vec, (n, d))
    return outer, xy


def perturb_xy_only(
    x: np.ndarray,
    y: float,
    clip: ClipConfig,
    budget: PrivacyBudget,
    user_seed: int,
    user_id: int = 0,
) -> PerturbedMessage:
    """Release only the noisy x*y channel (full budget, no matrix noise)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    sigma = xy_only_noise_std(d, clip, budget)
    xy = shrink_coordinates(x, clip.tau1) * clip_response(y, clip.tau2)
    if not budget.is_noiseless:
        gen = _rng.stream(user_seed, _rng.TAG_USER)
        xy = xy + gen.normal(0.0, sigma, d)
    return PerturbedMessage("stat_pair", user_id, noisy_xxT=None, noisy_xy=xy)


def perturb_xy_only_batch(
    X: np.ndarray,
    Y: np.ndarray,
    clip: ClipConfig,
    budget: PrivacyBudget,
    gen: np.random.Generator,
) -> np.ndarray:
    """Vectorized label-channel release, shape (n, d), row i = user i."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, d = X.shape
    sigma = xy_only_noise_std(d, clip, budget)
    Xt = np.sign(X) * np.minimum(np.abs(X), clip.tau1)
    Yt = np.sign(Y) * np.minimum(np.abs(Y), clip.tau2)
    xy = Xt * Yt[:, None]
    if not budget.is_noiseless:
        xy = xy + gen.normal(0.0, sigma, (n, d))
    return xy


# ---------------------------------------------------------------------------
# unit-sphere randomizer


def hemisphere_mean_abs_coordinate(d: int) -> float:
    """m_d = E|u_1| for u uniform on the unit sphere in R^d.

    Closed form Gamma(d/2) / (sqrt(pi) Gamma((d+1)/2)); cross-checked against
    a Monte-Carlo oracle in the test suite.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if d == 1:
        return 1.0  # the sphere is {-1, +1}; avoids lgamma roundoff
    return math.exp(math.lgamma(d / 2.0) - math.lgamma((d + 1) / 2.0)) / math.sqrt(math.pi)


def sphere_calibration(d: int, epsilon: float, r: float) -> float:
    """Output magnitude C(d, eps) that makes the randomizer unbiased."""
    if math.isinf(epsilon):
        raise ValueError("calibration undefined for the noiseless sentinel")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    ratio = (math.exp(epsilon) + 1.0) / (math.exp(epsilon) - 1.0)
    return r * ratio / hemisphere_mean_abs_coordinate(d)


def sphere_randomizer(
    v: np.ndarray, r: float, epsilon: float, user_seed: int
) -> np.ndarray:
    """epsilon-LDP release of a vector with ||v||_2 <= r (see module header)."""
    v = np.asarray(v, dtype=np.float64)
    out = sphere_randomizer_batch(
        v[None, :], r, epsilon, _rng.stream(user_seed, _rng.TAG_USER)
    )
    return out[0]


def sphere_randomizer_batch(
    V: np.ndarray, r: float, epsilon: float, gen: np.random.Generator
) -> np.ndarray:
    """Vectorized randomizer; row i of V is user i's input."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    V = np.asarray(V, dtype=np.float64)
    n, d = V.shape
    norms = np.linalg.norm(V, axis=1)
    if norms.max() > r * (1.0 + 1e-9):
        raise ValueError(
            f"input norm {norms.max():.6g} exceeds the sensitivity bound r={r:.6g}"
        )
    if math.isinf(epsilon):
        return V.copy()

    # signed direction x = b * v/||v||; a zero input gets a uniform random
    # direction with the sign step skipped, preserving zero mean by symmetry
    p_plus = 0.5 + norms / (2.0 * r)
    b = np.where(gen.random(n) < p_plus, 1.0, -1.0)
    dirs = np.zeros_like(V)
    nonzero = norms > 0.0
    dirs[nonzero] = V[nonzero] / norms[nonzero, None]
    dirs *= b[:, None]
    n_zero = int((~nonzero).sum())
    if n_zero:
        g = gen.standard_normal((n_zero, d))
        dirs[~nonzero] = g / np.linalg.norm(g, axis=1)[:, None]

    s = gen.random(n) < math.exp(epsilon) / (math.exp(epsilon) + 1.0)
    u = gen.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    dots = np.einsum("ij,ij->i", u, dirs)
    # s=1 wants <u, x> > 0; s=0 wants <u, x> <= 0 (ties to the s=0 branch)
    flip = np.where(s, dots <= 0.0, dots > 0.0)
    u[flip] *= -1.0
    return sphere_calibration(d, epsilon, r) * u


# ---------------------------------------------------------------------------
# wire format

_KIND_CODES = {"stat_pair": 1, "randomized_gradient": 2}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_FLAG_HAS_MATRIX = 0x01


def encode_message(msg: PerturbedMessage) -> bytes:
    """Tagged binary record: kind u8, flags u8, user_id u64, d u32, payload LE."""
    kind = _KIND_CODES[msg.kind]
    if msg.kind == "randomized_gradient":
        payload = np.asarray(msg.grad, dtype="<f8")
        d = payload.shape[0]
        flags = 0
        body = payload.tobytes()
    else:
        xy = np.asarray(msg.noisy_xy, dtype="<f8")
        d = xy.shape[0]
        flags = 0
        body = b""
        if msg.noisy_xxT is not None:
            flags |= _FLAG_HAS_MATRIX
            iu, ju = np.triu_indices(d)
            body += np.ascontiguousarray(msg.noisy_xxT[iu, ju], dtype="<f8").tobytes()
        body += xy.tobytes()
    return struct.pack("<BBQI", kind, flags, msg.user_id, d) + body


def decode_message(buf: bytes, offset: int = 0) -> tuple[PerturbedMessage, int]:
    """Inverse of encode_message; returns (message, next offset)."""
    kind_code, flags, user_id, d = struct.unpack_from("<BBQI", buf, offset)
    offset += struct.calcsize("<BBQI")
    kind = _KIND_NAMES.get(kind_code)
    if kind is None:
        raise ValueError(f"unknown message kind code {kind_code}")
    if kind == "randomized_gradient":
        grad = np.frombuffer(buf, dtype="<f8", count=d, offset=offset).astype(np.float64)
        offset += 8 * d
        return PerturbedMessage(kind, user_id, grad=grad), offset
    mat = None
    if flags & _FLAG_HAS_MATRIX:
        ntri = d * (d + 1) // 2
        tri = np.frombuffer(buf, dtype="<f8", count=ntri, offset=offset)
        offset += 8 * ntri
        mat = np.zeros((d, d))
        iu, ju = np.triu_indices(d)
        mat[iu, ju] = tri
        mat[ju, iu] = tri
    xy = np.frombuffer(buf, dtype="<f8", count=d, offset=offset).astype(np.float64)
    offset += 8 * d
    return PerturbedMessage(kind, user_id, noisy_xxT=mat, noisy_xy=xy), offset
