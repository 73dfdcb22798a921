"""SIB1 size budget, fragmentation, reassembly and broadcast-delay model.

All sizes are bytes and all times milliseconds. Expected packet counts are
exact :class:`fractions.Fraction` values.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .algebra import Group, GroupElement, RandomSource
from .hierarchy import GroupKeyChain, IdentityVector
from .thresh_sign import ThresholdSignature

SIB1_MAX_BYTES = 372
DEFAULT_FREE_BYTES = 290
MIN_PERIOD_MS = 20
MAX_PERIOD_MS = 160
ID_FIELD_BYTES = 8

ANCHOR_FIRST = "anchor-first"
SLIDING_WINDOW = "sliding-window"


class OversizeSib1(ValueError):
    pass


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class Sib1Message:
    base: bytes
    attached: bytes = b""

    @property
    def total(self) -> int:
        return len(self.base) + len(self.attached)

    def to_bytes(self) -> bytes:
        return self.base + self.attached


def attachment_size(depth: int, group: Group) -> int:
    """Bytes appended to SIB1: signature, non-master chain elements, identities."""
    return group.element_len + group.scalar_len + depth * (group.element_len + ID_FIELD_BYTES)


def build_authenticated_sib1(base: bytes, sig: ThresholdSignature, chain: GroupKeyChain,
                             ids: IdentityVector) -> Sib1Message:
    """``base || R || z || Q_1..Q_k || ID_1..ID_k``; the master key is pre-installed."""
    if len(base) > SIB1_MAX_BYTES:
        raise OversizeSib1(f"base SIB1 of {len(base)} bytes exceeds {SIB1_MAX_BYTES}")
    if len(chain) != ids.level + 1:
        raise ValueError("chain does not match identity vector")
    for ident in ids.ids:
        if len(ident) != ID_FIELD_BYTES:
            raise ValueError(f"identities on the SIB1 wire are {ID_FIELD_BYTES} bytes, got {len(ident)}")
    attached = sig.to_bytes() + b"".join(e.encode() for e in chain.elements[1:]) + b"".join(ids.ids)
    msg = Sib1Message(bytes(base), attached)
    if msg.total > SIB1_MAX_BYTES:
        raise OversizeSib1(f"authenticated SIB1 of {msg.total} bytes exceeds {SIB1_MAX_BYTES}")
    return msg


def parse_authenticated_sib1(data: bytes, depth: int, master: GroupElement):
    """Split a received SIB1 into ``(base, sig, chain, ids)`` given the hierarchy depth."""
    g = master.group
    tail = attachment_size(depth, g)
    if len(data) < tail:
        raise ValueError("SIB1 too short for an authentication attachment")
    base, att = data[: len(data) - tail], data[len(data) - tail:]
    sig_len = g.element_len + g.scalar_len
    sig = ThresholdSignature.from_bytes(att[:sig_len], group=g)
    pos = sig_len
    elems = [master]
    for _ in range(depth):
        elems.append(g.decode(att[pos: pos + g.element_len]))
        pos += g.element_len
    ids = tuple(att[pos + k * ID_FIELD_BYTES: pos + (k + 1) * ID_FIELD_BYTES] for k in range(depth))
    return base, sig, GroupKeyChain(tuple(elems)), IdentityVector(ids)


def fragment_count(payload: int, free: int = DEFAULT_FREE_BYTES) -> int:
    if free < 1:
        raise ValueError("free bytes per SIB1 must be positive")
    if payload < 0:
        raise ValueError("payload must be non-negative")
    return -(-payload // free)


def expected_packets_cyclic(F: int) -> Tuple[int, Fraction, int]:
    """(best, expected, worst) packets heard under anchor-first reassembly.

    The broadcast cycles p_1..p_F and the receiver starts at a uniformly random
    phase; fragments heard before p_1 are discarded.
    """
    if F < 1:
        raise ValueError("need at least one fragment")
    total = F + sum(2 * F + 1 - s for s in range(2, F + 1))
    return F, Fraction(total, F), 2 * F - 1


def simulate_reassembly(F: int, start: int, policy: str = ANCHOR_FIRST) -> int:
    """Step through the cyclic stream from phase ``start`` and count packets heard."""
    if not 1 <= start <= F:
        raise ValueError(f"start phase must be in [1, {F}]")
    if policy not in (ANCHOR_FIRST, SLIDING_WINDOW):
        raise ValueError(f"unknown policy {policy!r}")
    have = set()
    anchored = policy == SLIDING_WINDOW
    heard = 0
    frag = start
    while len(have) < F:
        heard += 1
        if frag == 1:
            anchored = True
        if anchored:
            have.add(frag)
        frag = frag % F + 1
    return heard


def monte_carlo_packets(F: int, trials: int, rng: RandomSource,
                        policy: str = ANCHOR_FIRST) -> Tuple[float, float]:
    """Mean and standard error of packets heard over uniform random start phases."""
    total = 0
    total_sq = 0
    for _ in range(trials):
        x = simulate_reassembly(F, rng.randint(1, F), policy)
        total += x
        total_sq += x * x
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0)
    return mean, math.sqrt(var / trials)


def broadcast_delay(packets: int, period: float = MIN_PERIOD_MS) -> float:
    """Gaps between consecutive SIB1 repetitions: ``(packets - 1) * period``."""
    if packets < 1:
        raise ValueError("need at least one packet")
    if not MIN_PERIOD_MS <= period <= MAX_PERIOD_MS:
        raise ValueError(f"SIB1 period must be within [{MIN_PERIOD_MS}, {MAX_PERIOD_MS}] ms")
    return (packets - 1) * period


@dataclass(frozen=True)
class FragmentPlan:
    payload: int
    free: int
    fragments: int
    best: int
    expected: Fraction
    worst: int

    def delay_range(self, which: str = "best") -> Tuple[float, float]:
        if self.fragments == 0:
            return (0, 0)
        count = {"best": self.best, "worst": self.worst}.get(which)
        if which == "expected":
            # whole packets; exact when F divides the sum, e.g. 247/13
            count = math.ceil(self.expected)
        if count is None:
            raise ValueError(which)
        return (broadcast_delay(count, MIN_PERIOD_MS), broadcast_delay(count, MAX_PERIOD_MS))


def fragment_plan(payload: int, free: int = DEFAULT_FREE_BYTES) -> FragmentPlan:
    F = fragment_count(payload, free)
    if F == 0:
        return FragmentPlan(payload, free, 0, 0, Fraction(0), 0)
    best, expected, worst = expected_packets_cyclic(F)
    return FragmentPlan(payload, free, F, best, expected, worst)


# -- freshness -------------------------------------------------------------------

@dataclass(frozen=True)
class FreshnessConfig:
    sib_period_ms: int
    allowances_ms: Dict[str, int]

    @property
    def window_ms(self) -> int:
        return self.sib_period_ms + sum(self.allowances_ms.values())

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "FreshnessConfig":
        if path is None:
            text = resources.files("sibauth").joinpath("data/freshness.json").read_text()
        else:
            text = Path(path).read_text()
        d = json.loads(text)
        return cls(int(d["sib_period_ms"]), {k: int(v) for k, v in d["allowances_ms"].items()})


def freshness_check(timestamp: int, window: int, now: int) -> bool:
    """Fresh iff the message is not from the future and at most ``window`` old."""
    return 0 <= now - timestamp <= window


# -- size profiles and reports -----------------------------------------------------

@dataclass(frozen=True)
class SchemeSizeProfile:
    name: str
    key: str
    architecture: str
    signature_bytes: int
    public_key_bytes: int
    public_keys_sent: int
    certificate_levels: int
    per_certificate_bytes: int
    identity_bytes: int
    published_overhead_bytes: Optional[int] = None
    published_comm_bytes: Optional[int] = None
    published_packets: Optional[int] = None

    @property
    def crypto_overhead(self) -> int:
        return (self.signature_bytes + self.public_keys_sent * self.public_key_bytes
                + self.certificate_levels * self.per_certificate_bytes + self.identity_bytes)


def load_registry(path: Optional[Path] = None) -> Tuple[List[SchemeSizeProfile], dict]:
    try:
        if path is None:
            text = resources.files("sibauth").joinpath("data/profiles.json").read_text()
        else:
            text = Path(path).read_text()
        d = json.loads(text)
        if d.get("version") != 1:
            raise RegistryError("unsupported registry version")
        profiles = [SchemeSizeProfile(**p) for p in d["profiles"]]
    except RegistryError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise RegistryError(f"cannot read size-profile registry: {exc}") from None
    for p in profiles:
        for name in ("signature_bytes", "public_key_bytes", "public_keys_sent",
                     "certificate_levels", "per_certificate_bytes", "identity_bytes"):
            v = getattr(p, name)
            if not isinstance(v, int) or v < 0:
                raise RegistryError(f"{p.key}: {name} must be a non-negative integer")
    meta = {k: v for k, v in d.items() if k != "profiles"}
    return profiles, meta


@dataclass
class ReportRow:
    scheme: str
    overhead: int
    sib1_total: int
    piggyback: bool
    fragments: int
    best_packets: int
    expected_packets: str
    worst_packets: int
    delay_best_ms: str
    delay_expected_ms: str
    comm_bytes: Optional[int]
    published_overhead: Optional[int]
    published_comm: Optional[int]
    published_packets: Optional[int]
    flags: List[str] = field(default_factory=list)


def _fmt_range(r: Tuple[float, float]) -> str:
    lo, hi = (int(x) if float(x).is_integer() else x for x in r)
    return "-" if (lo, hi) == (0, 0) else f"{lo}-{hi}"


def scheme_report(profiles: Sequence[SchemeSizeProfile], base: int = 79,
                  free: int = DEFAULT_FREE_BYTES) -> List[ReportRow]:
    rows = []
    for p in profiles:
        overhead = p.crypto_overhead
        fits = base + overhead <= SIB1_MAX_BYTES
        plan = fragment_plan(0 if fits else overhead, free)
        comm = None if fits else plan.fragments * SIB1_MAX_BYTES
        flags = []
        if p.published_overhead_bytes is not None and p.published_overhead_bytes != overhead:
            flags.append(f"overhead differs from published {p.published_overhead_bytes}")
        if p.published_packets is not None and p.published_packets != plan.fragments:
            flags.append(f"published packet count {p.published_packets}, calculated {plan.fragments}")
        if p.published_comm_bytes is not None and p.published_comm_bytes != comm:
            flags.append(f"published comm overhead {p.published_comm_bytes}, calculated {comm}")
        rows.append(ReportRow(
            scheme=p.name,
            overhead=overhead,
            sib1_total=base + overhead,
            piggyback=fits,
            fragments=plan.fragments,
            best_packets=plan.best,
            expected_packets=str(plan.expected),
            worst_packets=plan.worst,
            delay_best_ms=_fmt_range(plan.delay_range("best")),
            delay_expected_ms=_fmt_range(plan.delay_range("expected")),
            comm_bytes=comm,
            published_overhead=p.published_overhead_bytes,
            published_comm=p.published_comm_bytes,
            published_packets=p.published_packets,
            flags=flags,
        ))
    return rows


_COLUMNS = [
    ("scheme", "Scheme"), ("overhead", "Crypto(B)"), ("sib1_total", "SIB1(B)"),
    ("piggyback", "Fits"), ("fragments", "Frags"), ("best_packets", "Best"),
    ("expected_packets", "Expected"), ("worst_packets", "Worst"),
    ("delay_best_ms", "Delay best(ms)"), ("delay_expected_ms", "Delay exp.(ms)"),
    ("comm_bytes", "Comm(B)"), ("published_comm", "Pub.Comm(B)"), ("published_packets", "Pub.Pkts"),
]


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    return str(v)


def render_text(rows: Sequence[ReportRow]) -> str:
    table = [[h for _, h in _COLUMNS]]
    for r in rows:
        table.append([_cell(getattr(r, k)) for k, _ in _COLUMNS])
    widths = [max(len(row[c]) for row in table) for c in range(len(_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    notes = [f"  * {r.scheme}: {f}" for r in rows for f in r.flags]
    if notes:
        lines += ["", "flags:"] + notes
    return "\n".join(lines) + "\n"


def render_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([k for k, _ in _COLUMNS] + ["flags"])
    for r in rows:
        w.writerow([_cell(getattr(r, k)) for k, _ in _COLUMNS] + ["; ".join(r.flags)])
    return buf.getvalue()


def rows_as_dicts(rows: Sequence[ReportRow]) -> List[dict]:
    return [asdict(r) for r in rows]


def published_checks(profiles: Sequence[SchemeSizeProfile], base: int = 79,
                 free: int = DEFAULT_FREE_BYTES) -> List[Tuple[str, object, object]]:
    """(name, expected, actual) for the published feasibility figures."""
    by_key = {p.key: p for p in profiles}
    checks = []
    ml = by_key.get("ml-dsa-1chain")
    checks.append(("ML-DSA single-chain payload", 3732, ml.crypto_overhead if ml else None))
    checks.append(("fragments(3732, 290)", 13, fragment_count(3732, free)))
    checks.append(("cyclic packets F=13", (13, Fraction(19), 25), expected_packets_cyclic(13)))
    checks.append(("delay 13 packets", (240, 1920), (broadcast_delay(13, 20), broadcast_delay(13, 160))))
    checks.append(("delay 19 packets", (360, 2880), (broadcast_delay(19, 20), broadcast_delay(19, 160))))
    borg = by_key.get("borg")
    checks.append(("BORG overhead", 144, borg.crypto_overhead if borg else None))
    checks.append(("BORG SIB1 total (79-B base)", 223, 79 + borg.crypto_overhead if borg else None))
    rows = {r.scheme: r for r in scheme_report([borg] if borg else [], base, free)}
    checks.append(("BORG piggybacks", True, bool(rows) and all(r.piggyback for r in rows.values())))
    return checks

