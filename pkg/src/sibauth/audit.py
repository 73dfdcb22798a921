"""Tamper-evident audit logging of broadcast signatures.

Entries are sealed by a threshold post-quantum signature scheme behind the
:class:`ThresholdPQScheme` interface, hash-chained, and written to one or more
append-only JSON-lines replicas that can be cross-validated.

The only shipped scheme, :class:`InsecureThpq`, is a test double. Its public
key *is* the MAC key. It exercises the plumbing and offers no security.
"""

from __future__ import annotations

import abc
import hashlib
import hmac
import json
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .algebra import RandomSource

GENESIS_DIGEST = "0" * 64


class AuditError(Exception):
    pass


class InvalidThreshold(AuditError, ValueError):
    pass


class InsufficientShares(AuditError, ValueError):
    pass


class BadAuditSignature(AuditError):
    pass


class ChainMismatch(AuditError):
    pass


@dataclass(frozen=True)
class ThpqKeyMaterial:
    public_key: bytes
    shares: Tuple[bytes, ...]
    t_prime: int

    @property
    def n(self) -> int:
        return len(self.shares)


class ThresholdPQScheme(abc.ABC):
    """KeyGen / Sign / Aggregate / Verify of a threshold signature scheme."""

    name = "abstract"

    @abc.abstractmethod
    def keygen(self, t_prime: int, n: int, rng: RandomSource) -> ThpqKeyMaterial: ...

    @abc.abstractmethod
    def sign_share(self, share: bytes, message: bytes) -> bytes: ...

    @abc.abstractmethod
    def aggregate(self, shares: Sequence[bytes], t_prime: int) -> bytes: ...

    @abc.abstractmethod
    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


class InsecureThpq(ThresholdPQScheme):
    """INSECURE stand-in: per-participant HMAC tags, combined by concatenation.

    public key = t' (1 B) || n (1 B) || master key (32 B). Anyone holding the
    public key can forge. Never use outside tests and simulations.
    """

    name = "insecure-hmac-double"

    @staticmethod
    def _member_key(master: bytes, i: int) -> bytes:
        return hashlib.sha256(b"thpq-share" + master + i.to_bytes(2, "big")).digest()

    def keygen(self, t_prime: int, n: int, rng: RandomSource) -> ThpqKeyMaterial:
        if not 1 <= t_prime <= n or n > 255:
            raise InvalidThreshold(f"need 1 <= t' <= n <= 255, got t'={t_prime}, n={n}")
        master = rng.getrandbits(256).to_bytes(32, "big")
        shares = tuple(i.to_bytes(2, "big") + self._member_key(master, i)
                       for i in range(1, n + 1))
        pk = bytes([t_prime, n]) + master
        return ThpqKeyMaterial(pk, shares, t_prime)

    def sign_share(self, share: bytes, message: bytes) -> bytes:
        if len(share) != 34:
            raise ValueError("malformed share")
        return share[:2] + hmac.new(share[2:], message, hashlib.sha256).digest()

    def aggregate(self, shares: Sequence[bytes], t_prime: int) -> bytes:
        by_index = {}
        for s in shares:
            if len(s) != 34:
                raise ValueError("malformed signature share")
            by_index.setdefault(int.from_bytes(s[:2], "big"), s)
        if len(by_index) < t_prime:
            raise InsufficientShares(f"{len(by_index)} distinct shares, need {t_prime}")
        body = b"".join(by_index[i] for i in sorted(by_index))
        return len(by_index).to_bytes(2, "big") + body

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != 34 or len(signature) < 2:
            return False
        t_prime, n, master = public_key[0], public_key[1], public_key[2:]
        count = int.from_bytes(signature[:2], "big")
        body = signature[2:]
        if len(body) != 34 * count or count < t_prime:
            return False
        seen = set()
        for k in range(count):
            part = body[34 * k: 34 * (k + 1)]
            i = int.from_bytes(part[:2], "big")
            if not 1 <= i <= n or i in seen:
                return False
            seen.add(i)
            tag = hmac.new(self._member_key(master, i), message, hashlib.sha256).digest()
            if not hmac.compare_digest(tag, part[2:]):
                return False
        return True


def thpq_keygen(t_prime: int, n: int, rng: RandomSource,
                scheme: Optional[ThresholdPQScheme] = None) -> ThpqKeyMaterial:
    return (scheme or InsecureThpq()).keygen(t_prime, n, rng)


def thpq_sign_share(share: bytes, message: bytes,
                    scheme: Optional[ThresholdPQScheme] = None) -> bytes:
    return (scheme or InsecureThpq()).sign_share(share, message)


def thpq_aggregate(shares: Sequence[bytes], t_prime: int,
                   scheme: Optional[ThresholdPQScheme] = None) -> bytes:
    return (scheme or InsecureThpq()).aggregate(shares, t_prime)


def thpq_verify(public_key: bytes, message: bytes, signature: bytes,
                scheme: Optional[ThresholdPQScheme] = None) -> bool:
    return (scheme or InsecureThpq()).verify(public_key, message, signature)


# -- log entries ----------------------------------------------------------------

_FIELDS = ("height", "j", "ts", "signers", "message", "sigma_bs", "sigma_a", "prev", "digest")


@dataclass(frozen=True)
class AuditEntry:
    height: int
    j: int
    ts: int
    signers: Tuple[int, ...]
    message: str  # hex
    sigma_bs: str  # hex
    sigma_a: str  # hex
    prev: str
    digest: str

    def body(self) -> dict:
        return {"height": self.height, "j": self.j, "ts": self.ts,
                "signers": list(self.signers), "message": self.message,
                "sigma_bs": self.sigma_bs, "sigma_a": self.sigma_a, "prev": self.prev}

    def compute_digest(self) -> str:
        return entry_digest(self.body())

    def to_json(self) -> str:
        d = self.body()
        d["digest"] = self.digest
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "AuditEntry":
        d = json.loads(line)
        if list(d) != list(_FIELDS):
            raise ValueError(f"audit entry fields out of order or missing: {list(d)}")
        return cls(int(d["height"]), int(d["j"]), int(d["ts"]),
                   tuple(int(i) for i in d["signers"]), d["message"], d["sigma_bs"],
                   d["sigma_a"], d["prev"], d["digest"])


def entry_digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, separators=(",", ":")).encode()).hexdigest()


def _last_line(path: Path) -> Optional[str]:
    if not path.exists():
        return None
    last = None
    with open(path) as fh:
        for line in fh:
            if line.strip():
                last = line
    return last


class AuditLog:
    """Single-writer hash-chained log mirrored to replica files.

    ``flush_every`` > 1 batches replica writes; call :meth:`flush` to force.
    """

    def __init__(self, public_key: bytes, scheme: Optional[ThresholdPQScheme] = None,
                 replicas: Iterable[Path] = (), flush_every: int = 1) -> None:
        self.public_key = public_key
        self.scheme = scheme or InsecureThpq()
        self.replicas = [Path(p) for p in replicas]
        self.flush_every = max(1, flush_every)
        self.entries: List[AuditEntry] = []
        self._pending: List[AuditEntry] = []
        self._lock = threading.Lock()

    @property
    def head(self) -> str:
        return self.entries[-1].digest if self.entries else GENESIS_DIGEST

    def _check_replicas(self) -> None:
        # replica tails must equal the last entry they were sent
        flushed = len(self.entries) - len(self._pending)
        expected = self.entries[flushed - 1].digest if flushed else None
        for path in self.replicas:
            line = _last_line(path)
            tail = AuditEntry.from_json(line).digest if line else None
            if tail != expected:
                raise ChainMismatch(f"replica {path} diverged from the log head")

    def append(self, sigma_bs: bytes, sigma_a: bytes, signers: Sequence[int], ts: int,
               j: int, message: bytes) -> AuditEntry:
        if not self.scheme.verify(self.public_key, sigma_bs, sigma_a):
            raise BadAuditSignature(f"audit signature over slot {j} does not verify")
        with self._lock:
            self._check_replicas()
            body = {"height": len(self.entries), "j": j, "ts": ts,
                    "signers": sorted(signers), "message": message.hex(),
                    "sigma_bs": sigma_bs.hex(), "sigma_a": sigma_a.hex(), "prev": self.head}
            entry = AuditEntry(body["height"], j, ts, tuple(body["signers"]), body["message"],
                               body["sigma_bs"], body["sigma_a"], body["prev"], entry_digest(body))
            self.entries.append(entry)
            self._pending.append(entry)
            if len(self._pending) >= self.flush_every:
                self._flush_locked()
        return entry

    def _flush_locked(self) -> None:
        for path in self.replicas:
            with open(path, "a") as fh:
                for e in self._pending:
                    fh.write(e.to_json() + "\n")
        self._pending.clear()

    def flush(self) -> None:
        with self._lock:
            self._flush_locked()

    def find(self, j: int) -> AuditEntry:
        hits = [e for e in self.entries if e.j == j]
        if len(hits) != 1:
            raise KeyError(f"slot {j} recorded {len(hits)} times")
        return hits[0]

    def verify_chain(self) -> bool:
        return not chain_findings(self.entries)


def audit_append(log: AuditLog, sigma_bs: bytes, sigma_a: bytes, signers: Sequence[int],
                 ts: int, j: int, message: bytes) -> AuditEntry:
    return log.append(sigma_bs, sigma_a, signers, ts, j, message)


def write_log(path: Path, entries: Iterable[AuditEntry]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def read_log(path: Path) -> List[AuditEntry]:
    with open(path) as fh:
        return [AuditEntry.from_json(line) for line in fh if line.strip()]


# -- cross validation -----------------------------------------------------------

def chain_findings(entries: Sequence[AuditEntry]) -> List[Tuple[int, str]]:
    """(height, problem) pairs for a single replica."""
    out = []
    prev = GENESIS_DIGEST
    for pos, e in enumerate(entries):
        if e.height != pos:
            out.append((pos, f"height field {e.height} at position {pos}"))
        if e.prev != prev:
            out.append((pos, "prev digest does not link"))
        if e.compute_digest() != e.digest:
            out.append((pos, "entry digest does not match contents"))
        prev = e.digest
    return out


@dataclass
class ConsistencyReport:
    forks: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    missing: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    duplicates: List[Tuple[int, int, Tuple[int, ...]]] = field(default_factory=list)
    broken: List[Tuple[int, int, str]] = field(default_factory=list)
    bad_signatures: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.forks or self.missing or self.duplicates or self.broken
                    or self.bad_signatures)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["consistent"] = self.clean
        return d

    def lines(self) -> List[str]:
        if self.clean:
            return ["consistent"]
        out = []
        for h, reps in self.forks:
            out.append(f"fork at height {h}: replicas {list(reps)} disagree")
        for r, hs in self.missing:
            out.append(f"replica {r} missing heights {hs[0]}..{hs[-1]}")
        for r, j, hs in self.duplicates:
            out.append(f"replica {r} records slot {j} at heights {list(hs)}")
        for r, h, why in self.broken:
            out.append(f"replica {r} height {h}: {why}")
        for r, h in self.bad_signatures:
            out.append(f"replica {r} height {h}: audit signature does not verify")
        return out


def audit_cross_validate(replicas: Sequence[Sequence[AuditEntry]],
                         public_key: Optional[bytes] = None,
                         scheme: Optional[ThresholdPQScheme] = None) -> ConsistencyReport:
    """Compare replicas height by height and check each one's own chain.

    With ``public_key`` the audit signature of every entry is checked too.
    """
    if len(replicas) < 2:
        raise ValueError("cross-validation needs at least two replicas")
    rep = ConsistencyReport()
    longest = max(len(r) for r in replicas)
    for h in range(longest):
        digests: Dict[str, List[int]] = {}
        for r, entries in enumerate(replicas):
            if h < len(entries):
                digests.setdefault(entries[h].digest, []).append(r)
        if len(digests) > 1:
            # report the replicas outside the largest agreeing group
            groups = sorted(digests.values(), key=lambda g: (-len(g), g))
            rep.forks.append((h, tuple(sorted(r for g in groups[1:] for r in g))))
    for r, entries in enumerate(replicas):
        if len(entries) < longest:
            rep.missing.append((r, tuple(range(len(entries), longest))))
        seen: Dict[int, List[int]] = {}
        for h, e in enumerate(entries):
            seen.setdefault(e.j, []).append(h)
        for j, hs in sorted(seen.items()):
            if len(hs) > 1:
                rep.duplicates.append((r, j, tuple(hs)))
        for h, why in chain_findings(entries):
            rep.broken.append((r, h, why))
        if public_key is not None:
            sch = scheme or InsecureThpq()
            for h, e in enumerate(entries):
                if not sch.verify(public_key, bytes.fromhex(e.sigma_bs), bytes.fromhex(e.sigma_a)):
                    rep.bad_signatures.append((r, h))
    return rep


def history_from_log(entries: Sequence[AuditEntry], group=None):
    """Rebuild a :class:`~sibauth.failstop.SignatureHistory` from log entries."""
    from .failstop import SignatureHistory
    from .thresh_sign import ThresholdSignature

    hist = SignatureHistory()
    for e in entries:
        sig = ThresholdSignature.from_bytes(bytes.fromhex(e.sigma_bs), e.j, e.signers, group)
        hist.append(bytes.fromhex(e.message), sig, e.ts)
    return hist
