"""Message-passing layer enforcing the local-privacy interaction discipline.

Non-interactive: every user speaks once, sees no server state.  Sequential:
users are partitioned into rounds; a user sees only the current broadcast
and speaks once.  The server-side callback receives messages only, never raw
data: the UserView type is the boundary.

Transcripts are the unit of persistence (length-prefixed binary records plus
a JSON sidecar) so experiments can be re-audited without re-simulation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .datagen import Dataset
from .mechanisms import PerturbedMessage, decode_message, encode_message

__all__ = [
    "UserView",
    "MessageBlock",
    "Round",
    "Transcript",
    "AuditReport",
    "ProtocolViolation",
    "run_non_interactive",
    "run_sequential",
    "audit_transcript",
    "save_transcript",
    "load_transcript",
    "round_groups",
]

TRANSCRIPT_MAGIC = b"LDPSRTR1"


class ProtocolViolation(Exception):
    pass


@dataclass(frozen=True)
class UserView:
    """Everything a user is allowed to see: their own row and the broadcast."""

    own_datum: tuple[np.ndarray, float]
    current_broadcast: np.ndarray | None
    user_id: int
    user_seed: int


class MessageBlock(Sequence):
    """Sequence of per-user messages backed by batch arrays.

    Rows of the payload arrays are user-indexed, so materializing message i
    is cheap and independent of iteration order.  Gradient blocks expose the
    backing matrix for vectorized server aggregation.
    """

    def __init__(
        self,
        kind: str,
        user_ids: np.ndarray,
        grad: np.ndarray | None = None,
        noisy_xxT: np.ndarray | None = None,
        noisy_xy: np.ndarray | None = None,
    ) -> None:
        self.kind = kind
        self.user_ids = np.asarray(user_ids, dtype=np.int64)
        self._grad = grad
        self._xxT = noisy_xxT
        self._xy = noisy_xy

    def __len__(self) -> int:
        return self.user_ids.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        uid = int(self.user_ids[i])
        if self.kind == "randomized_gradient":
            return PerturbedMessage(self.kind, uid, grad=self._grad[i])
        return PerturbedMessage(
            self.kind,
            uid,
            noisy_xxT=None if self._xxT is None else self._xxT[i],
            noisy_xy=self._xy[i],
        )

    def grad_matrix(self) -> np.ndarray:
        if self._grad is None:
            raise ValueError("not a gradient block")
        return self._grad


@dataclass(frozen=True)
class Round:
    round_index: int
    broadcast: np.ndarray | None
    messages: Sequence[PerturbedMessage]


@dataclass(frozen=True)
class Transcript:
    protocol_kind: str
    n_users: int
    rounds: list[Round] = field(default_factory=list)


@dataclass(frozen=True)
class AuditReport:
    ok: bool
    violations: list[str]


def round_groups(n: int, T: int) -> list[tuple[int, int]]:
    """Row ranges per round: floor(n/T) users each, remainder in the last."""
    if T > n:
        raise ValueError(f"need T <= n, got T={T}, n={n}")
    if T < 1:
        raise ValueError("T must be >= 1")
    m = n // T
    bounds = []
    for t in range(1, T + 1):
        lo = (t - 1) * m
        hi = t * m if t < T else n
        bounds.append((lo, hi))
    return bounds


def run_non_interactive(
    data: Dataset,
    perturb: Callable[[UserView], PerturbedMessage],
    run_seed: int = 0,
    order: Sequence[int] | None = None,
) -> Transcript:
    """One message per user, no broadcast; execution order is irrelevant.

    perturb receives a UserView only (own row, no broadcast, per-user seed);
    exceptions from it are re-raised with the offending user id attached.
    """
    n = data.n
    ids = range(n) if order is None else order
    if order is not None and sorted(order) != list(range(n)):
        raise ProtocolViolation("order must be a permutation of the users")
    messages: list[PerturbedMessage] = []
    for uid in ids:
        view = UserView(
            own_datum=(data.X[uid], float(data.Y[uid])),
            current_broadcast=None,
            user_id=uid,
            user_seed=_rng.derive_seed(run_seed, _rng.TAG_USER, uid),
        )
        try:
            msg = perturb(view)
        except Exception as exc:
            raise type(exc)(f"user {uid}: {exc}") from exc
        if msg.user_id != uid:
            raise ProtocolViolation(f"user {uid} released a message tagged {msg.user_id}")
        messages.append(msg)
    return Transcript("non_interactive", n, [Round(0, None, messages)])


def run_sequential(
    data: Dataset,
    T: int,
    server_step: Callable[[int, Sequence[PerturbedMessage]], np.ndarray],
    perturb: Callable[[UserView], PerturbedMessage] | None = None,
    batch_perturb: Callable[..., MessageBlock] | None = None,
    init_broadcast: np.ndarray | None = None,
    run_seed: int = 0,
) -> tuple[Transcript, np.ndarray]:
    """Round-based protocol: broadcast, per-user perturbation, server step.

    Users are partitioned once (disjoint groups covering all rows); each
    speaks exactly once.  Exactly one of perturb / batch_perturb drives the
    user side; batch_perturb(X, Y, user_ids, broadcast, gen) must return a
    MessageBlock whose rows are user-indexed.
    Returns the transcript and the final broadcast.
    """
    if (perturb is None) == (batch_perturb is None):
        raise ValueError("pass exactly one of perturb / batch_perturb")
    broadcast = (
        np.zeros(data.d) if init_broadcast is None else np.asarray(init_broadcast, float)
    )
    rounds: list[Round] = []
    seen: set[int] = set()
    for t, (lo, hi) in enumerate(round_groups(data.n, T), start=1):
        uids = np.arange(lo, hi)
        dup = seen.intersection(uids.tolist())
        if dup:
            raise ProtocolViolation(f"users assigned twice: {sorted(dup)[:5]}")
        seen.update(uids.tolist())
        sent = broadcast.copy()
        if batch_perturb is not None:
            block = batch_perturb(
                data.X[lo:hi],
                data.Y[lo:hi],
                uids,
                sent,
                _rng.stream(run_seed, _rng.TAG_BATCH, t),
            )
            messages: Sequence[PerturbedMessage] = block
        else:
            msgs = []
            for uid in uids:
                view = UserView(
                    own_datum=(data.X[uid], float(data.Y[uid])),
                    current_broadcast=sent,
                    user_id=int(uid),
                    user_seed=_rng.derive_seed(run_seed, _rng.TAG_USER, int(uid)),
                )
                msgs.append(perturb(view))
            messages = msgs
        broadcast = np.asarray(server_step(t, messages), dtype=np.float64)
        rounds.append(Round(t, sent, messages))
    return Transcript("sequential", data.n, rounds), broadcast


def audit_transcript(t: Transcript) -> AuditReport:
    """Mechanical check of the interaction discipline.

    Verifies one-shot users with disjoint coverage of [n], round-index
    monotonicity, per-round message-kind homogeneity, and the shape
    constraints of each protocol kind.
    """
    violations: list[str] = []
    if t.protocol_kind == "non_interactive":
        if len(t.rounds) != 1:
            violations.append(f"non-interactive transcript has {len(t.rounds)} rounds")
        for r in t.rounds:
            if r.broadcast is not None:
                violations.append(f"round {r.round_index} carries a broadcast")
    elif t.protocol_kind != "sequential":
        violations.append(f"unknown protocol kind {t.protocol_kind!r}")

    prev_index = None
    seen: dict[int, int] = {}
    total = 0
    for r in t.rounds:
        if prev_index is not None and r.round_index <= prev_index:
            violations.append(
                f"round order broken: {r.round_index} after {prev_index}"
            )
        prev_index = r.round_index
        kinds = {m.kind for m in r.messages}
        if len(kinds) > 1:
            violations.append(f"round {r.round_index} mixes kinds {sorted(kinds)}")
        for m in r.messages:
            total += 1
            if m.user_id in seen:
                violations.append(
                    f"user {m.user_id} spoke in rounds {seen[m.user_id]} and {r.round_index}"
                )
            else:
                seen[m.user_id] = r.round_index
    if set(seen) != set(range(t.n_users)):
        missing = sorted(set(range(t.n_users)) - set(seen))[:5]
        extra = sorted(set(seen) - set(range(t.n_users)))[:5]
        if missing:
            violations.append(f"users never spoke: {missing}")
        if extra:
            violations.append(f"unknown user ids: {extra}")
    return AuditReport(not violations, violations)


# ---------------------------------------------------------------------------
# persistence


def save_transcript(t: Transcript, path: str, sidecar: dict | None = None) -> None:
    """Binary rounds + messages; config and seeds go to a JSON sidecar."""
    with open(path, "wb") as fh:
        fh.write(TRANSCRIPT_MAGIC)
        kind = 0 if t.protocol_kind == "non_interactive" else 1
        fh.write(struct.pack("<BQI", kind, t.n_users, len(t.rounds)))
        for r in t.rounds:
            fh.write(struct.pack("<IB", r.round_index, int(r.broadcast is not None)))
            if r.broadcast is not None:
                b = np.asarray(r.broadcast, dtype="<f8")
                fh.write(struct.pack("<I", b.shape[0]))
                fh.write(b.tobytes())
            fh.write(struct.pack("<I", len(r.messages)))
            for m in r.messages:
                rec = encode_message(m)
                fh.write(struct.pack("<I", len(rec)))
                fh.write(rec)
    if sidecar is not None:
        with open(path + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_transcript(path: str) -> Transcript:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(TRANSCRIPT_MAGIC)] != TRANSCRIPT_MAGIC:
        raise ValueError("not a transcript file")
    off = len(TRANSCRIPT_MAGIC)
    kind_code, n_users, n_rounds = struct.unpack_from("<BQI", buf, off)
    off += struct.calcsize("<BQI")
    rounds = []
    for _ in range(n_rounds):
        round_index, has_bcast = struct.unpack_from("<IB", buf, off)
        off += struct.calcsize("<IB")
        broadcast = None
        if has_bcast:
            (d,) = struct.unpack_from("<I", buf, off)
            off += 4
            broadcast = np.frombuffer(buf, "<f8", count=d, offset=off).astype(float)
            off += 8 * d
        (n_msgs,) = struct.unpack_from("<I", buf, off)
        off += 4
        msgs = []
        for _ in range(n_msgs):
            (rec_len,) = struct.unpack_from("<I", buf, off)
            off += 4
            msg, end = decode_message(buf, off)
            if end - off != rec_len:
                raise ValueError("corrupt message record length")
            off = end
            msgs.append(msg)
        rounds.append(Round(round_index, broadcast, msgs))
    kind = "non_interactive" if kind_code == 0 else "sequential"
    return Transcript(kind, n_users, rounds)
