"""Deterministic discrete-event simulation of the CKG / AMF / gNB / UE protocol.

Actors are plain objects driven by a single priority-queue loop ordered by
``(time, actor rank, sequence)``. Network links are reliable and ordered with
a fixed latency. The clock is simulated in integer microseconds.

Compute costs come from a modeled cost table by default so that transcripts
are byte-identical for a fixed seed. ``timing="measured"`` replaces each cost
with a live measurement of the library call; such transcripts are not
reproducible.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .algebra import get_group, make_rng
from .audit import AuditLog, thpq_aggregate, thpq_keygen, thpq_sign_share
from .failstop import (ForgeryProof, PofVerdict, SignatureHistory,
                       UnknownMessageIndex, pof, pof_verify)
from .hierarchy import build_hierarchy, reconstruct_secret
from .sib_model import (FreshnessConfig, OversizeSib1, broadcast_delay, build_authenticated_sib1,
                        fragment_count, freshness_check, parse_authenticated_sib1)
from .thresh_sign import (SigningGroup, ThresholdSignature, aggregate, challenge, mverify,
                          sign_share)

FALLBACK_POLICIES = ("scan-alternative", "attach-unauthenticated")
TAMPER_TARGETS = ("R", "z", "none")

# modeled compute costs, microseconds
DEFAULT_COSTS = {
    "setup": 200,
    "extract": 600,
    "thpq_keygen": 50,
    "preprocess_slot": 120,
    "sign_share": 350,
    "aggregate": 650,
    "audit": 80,
    "packet_processing": 100,
    "verify": 700,
    "pof": 900,
    "pof_verify": 1100,
}


@dataclass(frozen=True)
class ScenarioConfig:
    t: int = 2
    n: int = 3
    depth: int = 2
    J: int = 16
    base_bytes: int = 79
    sib_period_ms: int = 20
    link_latency_ms: int = 10
    propagation_ms: int = 1
    broadcasts: int = 10
    seed: int = 0
    beta: Optional[int] = None
    group: str = "ed25519"
    fallback: str = "scan-alternative"
    timing: str = "modeled"
    audit_dir: Optional[str] = None

    def validate(self) -> None:
        if not 1 <= self.t <= self.n:
            raise ValueError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        if self.depth < 2:
            raise ValueError("depth must be at least 2 (CKG -> AMF -> gNB)")
        if self.J < 1 or self.broadcasts < 0:
            raise ValueError("J must be positive and broadcasts non-negative")
        if self.beta is not None and not self.t <= self.beta <= self.n:
            raise ValueError(f"beta must lie in [t, n], got {self.beta}")
        if self.fallback not in FALLBACK_POLICIES:
            raise ValueError(f"unknown fallback policy {self.fallback!r}")
        if self.timing not in ("modeled", "measured"):
            raise ValueError(f"unknown timing mode {self.timing!r}")
        get_group(self.group)
        broadcast_delay(1, self.sib_period_ms)


@dataclass(frozen=True)
class Event:
    t_us: int
    actor: str
    kind: str
    digest: str
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"t_ms": self.t_us / 1000, "actor": self.actor, "kind": self.kind,
             "digest": self.digest}
        if self.detail:
            d["detail"] = self.detail
        return json.dumps(d, sort_keys=False, separators=(",", ":"))


BREAKDOWN_KEYS = ("sign", "inter_gnb_aggregation", "packet_processing", "transmission",
                  "verification")


@dataclass
class Transcript:
    config: ScenarioConfig
    events: List[Event] = field(default_factory=list)
    breakdowns: List[Dict[str, int]] = field(default_factory=list)  # per broadcast, microseconds
    summary: dict = field(default_factory=dict)

    def kinds(self, kind: str) -> List[Event]:
        return [e for e in self.events if e.kind == kind]

    @property
    def breakdown_ms(self) -> Dict[str, float]:
        if not self.breakdowns:
            return {}
        b = self.breakdowns[0]
        return {k: b[k] / 1000 for k in BREAKDOWN_KEYS + ("e2e",)}

    def to_jsonl(self) -> str:
        lines = [e.to_json() for e in self.events]
        summary = dict(self.summary)
        summary["config"] = asdict(self.config)
        summary["breakdown_ms"] = self.breakdown_ms
        lines.append(json.dumps({"summary": summary}, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_jsonl())


@dataclass(frozen=True)
class TamperSpec:
    """Which recorded broadcast the adversary targets and how.

    ``R``: an assumption-breaking adversary produces a valid signature with a
    fresh commitment. ``z``: the response is corrupted, so the UE rejects it.
    ``none``: the honest signature is replayed through the suspicion pipeline.
    """

    target: str = "R"
    broadcast: int = 1
    suspecting_bs: int = 1

    def __post_init__(self):
        if self.target not in TAMPER_TARGETS:
            raise ValueError(f"tamper target must be one of {TAMPER_TARGETS}")


@dataclass
class HaltReport:
    halted: bool
    verdict: Optional[str]
    j: Optional[int]
    proof: Optional[dict]
    refused_after_halt: int = 0
    failure: Optional[str] = None


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


class _Loop:
    def __init__(self, ranks: Dict[str, int]) -> None:
        self.ranks = ranks
        self.now = 0
        self._queue: list = []
        self._seq = 0

    def at(self, t_us: int, actor: str, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t_us, self.ranks[actor], self._seq, fn))

    def run(self) -> None:
        while self._queue:
            t_us, _, _, fn = heapq.heappop(self._queue)
            self.now = t_us
            fn()


class _World:
    """State shared by the actors of one scenario run."""

    def __init__(self, config: ScenarioConfig, offline: Iterable[int] = ()) -> None:
        config.validate()
        self.cfg = config
        self.offline = frozenset(offline)
        if not self.offline <= set(range(1, config.n + 1)):
            raise ValueError("offline set must be a subset of the gNB indices")
        self.rng = make_rng(config.seed)
        self.group = get_group(config.group)
        self.freshness = FreshnessConfig.load()
        self.tr = Transcript(config)
        self.bs = [f"gnb-{i}" for i in range(1, config.n + 1)]
        levels = [f"core-{l}" for l in range(1, config.depth - 1)]
        order = ["ckg"] + levels + ["amf"] + self.bs + ["ue", "adversary"]
        self.loop = _Loop({a: r for r, a in enumerate(order)})
        self.history = SignatureHistory()
        self.messages: Dict[int, bytes] = {}
        self.signatures: Dict[int, ThresholdSignature] = {}
        self.halted = False
        self.verified: List[bool] = []
        self.unavailable = 0
        self.refused = 0
        self.measured: Dict[str, List[float]] = {}

    # -- bookkeeping ------------------------------------------------------

    def emit(self, actor: str, kind: str, payload: bytes = b"", **detail) -> None:
        self.tr.events.append(Event(self.loop.now, actor, kind, _digest(payload), detail))

    def cost(self, name: str, fn: Callable = None, *args):
        """Run ``fn`` and return (result, cost in microseconds)."""
        if self.cfg.timing == "measured" and fn is not None:
            t0 = time.perf_counter()
            out = fn(*args)
            us = max(1, round((time.perf_counter() - t0) * 1e6))
            self.measured.setdefault(name, []).append(us / 1000)
            return out, us
        return (fn(*args) if fn is not None else None), DEFAULT_COSTS[name]

    @property
    def link_us(self) -> int:
        return self.cfg.link_latency_ms * 1000

    # -- phases -----------------------------------------------------------

    def key_setup(self) -> None:
        cfg = self.cfg
        path = [f"CORE{l:04d}".encode() for l in range(1, cfg.depth - 1)] + [b"AMF-0001", b"GNB-GRP1"]
        (master, parents, leaf), us = self.cost(
            "extract", build_hierarchy, path, cfg.t, cfg.n, self.rng, self.group)
        self.master, self.parents, self.leaf = master, parents, leaf
        self.emit("ckg", "setup", master.pk.encode())
        now = self.loop.now + us
        actors = ["ckg"] + [f"core-{l}" for l in range(1, cfg.depth - 1)] + ["amf"]
        for lvl in range(1, cfg.depth):
            ids, chain, _, _ = parents[lvl]
            now += self.link_us
            self._emit_at(now, actors[lvl], "key-received", chain.last.encode(), level=lvl)
        # AMF splits the gNB group key and hands shares out
        now += DEFAULT_COSTS["extract"] if cfg.timing == "modeled" else 0
        self._emit_at(now, "amf", "extract", leaf.chain.last.encode(), t=cfg.t, n=cfg.n)
        self.thpq = thpq_keygen(cfg.t, cfg.n, self.rng)
        now += DEFAULT_COSTS["thpq_keygen"]
        self._emit_at(now, "amf", "thpq-keygen", self.thpq.public_key)
        self.keys_ready_us = now + self.link_us
        for share in leaf.shares:
            actor = self.bs[share.index - 1]
            self._emit_at(self.keys_ready_us, actor, "share-received", share.pk_share.encode(),
                          index=share.index)
        self.signing = SigningGroup(leaf.shares, leaf.share_pks)
        replicas = ()
        if cfg.audit_dir:
            d = Path(cfg.audit_dir)
            d.mkdir(parents=True, exist_ok=True)
            replicas = [d / f"replica-{r}.jsonl" for r in range(1, 4)]
            for p in replicas:
                p.write_text("")
        self.audit = AuditLog(self.thpq.public_key, replicas=replicas)

    def _emit_at(self, t_us: int, actor: str, kind: str, payload: bytes, **detail) -> None:
        self.loop.at(t_us, actor, lambda: self.emit(actor, kind, payload, **detail))

    def preprocess(self) -> int:
        cfg = self.cfg
        _, us = self.cost("preprocess_slot", self.signing.preprocess, cfg.J, self.rng)
        if cfg.timing == "modeled":
            us = DEFAULT_COSTS["preprocess_slot"] * cfg.J
        done = self.keys_ready_us + us
        lists = self.signing.bulletin.lists(self.signing.context)
        for i in range(1, cfg.n + 1):
            payload = b"".join(e + d for _, (e, d) in sorted(lists[i].entries.items()))
            self._emit_at(done, self.bs[i - 1], "commitments-published", payload, J=cfg.J)
        return done + self.link_us

    def sib1_base(self, b: int, ts_ms: int) -> bytes:
        head = b"SIB1" + b.to_bytes(4, "big") + ts_ms.to_bytes(8, "big")
        fill = hashlib.sha256(b"sib1-fill" + self.cfg.seed.to_bytes(8, "big", signed=True)).digest()
        body = (fill * (self.cfg.base_bytes // len(fill) + 1))
        return (head + body)[: max(self.cfg.base_bytes, len(head))]

    def schedule_broadcasts(self, start_us: int) -> None:
        period_us = self.cfg.sib_period_ms * 1000
        for b in range(1, self.cfg.broadcasts + 1):
            t = start_us + (b - 1) * period_us
            self.loop.at(t, "amf", lambda b=b: self.broadcast(b))

    def available(self) -> List[int]:
        return [i for i in range(1, self.cfg.n + 1) if i not in self.offline]

    def broadcast(self, b: int) -> None:
        cfg = self.cfg
        if self.halted:
            self.refused += 1
            self.emit("amf", "sign-refused", b"", broadcast=b, reason="system halted")
            return
        avail = self.available()
        beta = cfg.beta or cfg.t
        if len(avail) < cfg.t:
            self.unavailable += 1
            self.emit("ue", "authentication-unavailable", b"", broadcast=b,
                      online=len(avail), t=cfg.t, fallback=cfg.fallback)
            return
        signers = tuple(avail[: min(beta, len(avail))])
        ts_ms = self.loop.now // 1000
        message = self.sib1_base(b, ts_ms)
        self.messages[b] = message
        j = self.signing.next_slot
        if j > self.signing._filled:
            self.signing.preprocess(cfg.J, self.rng)
            self.emit("amf", "preprocess-refill", b"", J=cfg.J)
        self.signing.next_slot += 1
        lists = self.signing.bulletin.lists(self.signing.context)
        leader = self.bs[signers[0] - 1]
        self.emit(leader, "sign-request", message, broadcast=b, j=j, signers=list(signers))

        shares = []
        share_us = 0
        for i in signers:
            s, us = self.cost("sign_share", sign_share, message, j, lists, signers,
                              self.signing.shares[i], self.signing.stores[i])
            shares.append(s)
            share_us = max(share_us, us)  # gNBs compute in parallel
        link = self.link_us if len(signers) > 1 else 0
        sig, agg_us = self.cost("aggregate", aggregate, shares, message, lists,
                                self.signing.share_pks, self.signing.chain, cfg.t, signers)
        sign_us = share_us + agg_us
        t_signed = self.loop.now + share_us + link + agg_us
        self.signatures[b] = sig
        self.history.append(message, sig, ts_ms)

        # audit: the signers co-sign sigma_BS with ThPQ, the AMF logs it
        sig_bytes = sig.to_bytes()
        parts = [thpq_sign_share(self.thpq.shares[i - 1], sig_bytes) for i in signers]
        sigma_a = thpq_aggregate(parts, self.thpq.t_prime)
        self.audit.append(sig_bytes, sigma_a, signers, ts_ms, j, message)
        self._emit_at(t_signed, leader, "signed", sig_bytes, broadcast=b, j=j)
        self._emit_at(t_signed + link + DEFAULT_COSTS["audit"], "amf", "audit-append",
                      sig_bytes, height=len(self.audit.entries) - 1)

        try:
            sib = build_authenticated_sib1(message, sig, self.signing.chain, self.signing.ids)
            packets = 1
        except OversizeSib1:
            sib = None
            packets = 0
        pp_us = DEFAULT_COSTS["packet_processing"]
        if sib is None:
            self._emit_at(t_signed, leader, "scenario-failure", b"", broadcast=b,
                          error="authenticated SIB1 exceeds 372 bytes")
            return
        tx_us = int(broadcast_delay(packets, cfg.sib_period_ms) * 1000) + cfg.propagation_ms * 1000
        t_rx = t_signed + pp_us + tx_us
        self._emit_at(t_signed + pp_us, leader, "sib1-broadcast", sib.to_bytes(),
                      broadcast=b, size=sib.total, fragments=fragment_count(0))
        self.loop.at(t_rx, "ue", lambda: self.ue_receive(b, sib.to_bytes(), t_rx, {
            "sign": sign_us, "inter_gnb_aggregation": link, "packet_processing": pp_us,
            "transmission": tx_us}))

    def ue_receive(self, b: int, data: bytes, t_rx: int, parts: Dict[str, int]) -> None:
        depth = self.cfg.depth
        base, sig, chain, ids = parse_authenticated_sib1(data, depth, self.master.pk)
        ok, v_us = self.cost("verify", mverify, base, ids, chain, sig)
        ts_ms = int.from_bytes(base[8:16], "big")
        fresh = freshness_check(ts_ms, self.freshness.window_ms, (t_rx + v_us) // 1000)
        breakdown = dict(parts, verification=v_us)
        breakdown["e2e"] = sum(breakdown[k] for k in BREAKDOWN_KEYS)
        self.tr.breakdowns.append(breakdown)
        self.verified.append(bool(ok))
        self._emit_at(t_rx + v_us, "ue", "ue-verify", data, broadcast=b, accepted=bool(ok),
                      fresh=fresh, e2e_ms=breakdown["e2e"] / 1000)

    def finish(self, **extra) -> Transcript:
        self.audit.flush()
        s = {
            "broadcasts": self.cfg.broadcasts,
            "accepted": sum(self.verified),
            "rejected": len(self.verified) - sum(self.verified),
            "unavailable": self.unavailable,
            "refused": self.refused,
            "halted": self.halted,
            "offline": sorted(self.offline),
            "audit_entries": len(self.audit.entries),
            "timing": self.cfg.timing,
        }
        s.update(extra)
        if self.measured:
            s["measured_ms"] = {k: sorted(v) for k, v in sorted(self.measured.items())}
        self.tr.summary = s
        return self.tr


def _run(config: ScenarioConfig, offline: Iterable[int] = ()) -> _World:
    w = _World(config, offline)
    w.loop.at(0, "ckg", w.key_setup)
    w.loop.run()
    start = w.preprocess()
    w.schedule_broadcasts(start)
    w.loop.run()
    return w


def run_bootstrap_scenario(config: ScenarioConfig) -> Transcript:
    return run_unavailability_scenario(config, ())


def run_unavailability_scenario(config: ScenarioConfig, offline: Iterable[int]) -> Transcript:
    """Broadcast with some gNBs offline; below threshold the UE applies the fallback."""
    return _run(config, offline).finish()


def _forge(w: _World, b: int, target: str) -> Tuple[bytes, ThresholdSignature]:
    """The adversary's suspect signature for broadcast ``b``."""
    message = w.messages.get(b)
    if message is None:
        # a message the signers never produced
        message = w.sib1_base(b, w.loop.now // 1000)
    honest = w.signatures.get(b)
    g = w.group
    if target == "none" and honest is not None:
        return message, honest
    if target == "z" and honest is not None:
        return message, replace(honest, z=(honest.z + 1) % g.order)
    # assumption-breaking adversary: knows the level secret, picks its own nonce
    sk = reconstruct_secret(w.leaf.shares)
    k = g.random_scalar(w.rng)
    R = g.g_exp(k)
    h = challenge(R, w.leaf.chain.last, message)
    j = honest.j if honest is not None else 0
    return message, ThresholdSignature(R, (k + sk * h) % g.order, j, ())


def run_forgery_scenario(config: ScenarioConfig, tamper: TamperSpec) -> Tuple[Transcript, HaltReport]:
    w = _run(config)
    cfg = w.cfg
    report = HaltReport(False, None, None, None)
    message, suspect = _forge(w, tamper.broadcast, tamper.target)
    t0 = w.loop.now + cfg.sib_period_ms * 1000
    w.loop.now = t0
    flagger = w.bs[tamper.suspecting_bs - 1]
    accepted = mverify(message, w.signing.ids, w.signing.chain, suspect)
    w.emit("adversary", "suspect-broadcast", suspect.to_bytes(), broadcast=tamper.broadcast,
           target=tamper.target, passes_verification=accepted)
    if not accepted:
        w.emit("ue", "ue-verify", suspect.to_bytes(), broadcast=tamper.broadcast, accepted=False)
        report.verdict = "rejected-by-verifier"
        return w.finish(halt=asdict(report)), report
    w.emit(flagger, "forgery-suspected", suspect.to_bytes(), broadcast=tamper.broadcast)
    try:
        record = w.history.lookup(message, suspect.j)
    except UnknownMessageIndex as exc:
        w.emit(flagger, "scenario-failure", message, error=f"UnknownMessageIndex: {exc}")
        report.failure = f"UnknownMessageIndex: {exc}"
        return w.finish(halt=asdict(report)), report
    now = w.loop.now + w.link_us
    reveals = {}
    for i in record.signer_set:
        reveals[i] = w.signing.stores[i].reveal(record.j)
        w.tr.events.append(Event(now, w.bs[i - 1], "nonces-revealed", _digest(
            w.group.encode_scalar(reveals[i][0]) + w.group.encode_scalar(reveals[i][1])),
            {"j": record.j}))
    proof = pof(suspect, message, w.history, reveals, w.signing.ids)
    now += DEFAULT_COSTS["pof"]
    kind = "proof-of-forgery" if isinstance(proof, ForgeryProof) else "not-a-forgery"
    w.tr.events.append(Event(now, flagger, kind, _digest(suspect.to_bytes()), {"j": record.j}))
    now += w.link_us + DEFAULT_COSTS["pof_verify"]
    amf_ids, amf_chain, amf_sk, _ = w.parents[-1]
    secret = w.leaf.level_secret
    verdict = pof_verify(secret.alpha, amf_sk, w.signing.ids, w.signing.chain,
                         w.signing.share_pks, message, suspect, proof,
                         w.signing.bulletin.lists(w.signing.context))
    w.tr.events.append(Event(now, "amf", "pof-verdict", _digest(verdict.value.encode()),
                             {"verdict": verdict.value}))
    report.verdict = verdict.value
    report.j = record.j
    if isinstance(proof, ForgeryProof):
        report.proof = proof.to_dict(w.group)
    if verdict is PofVerdict.CONFIRMED:
        w.halted = True
        report.halted = True
        w.tr.events.append(Event(now, "amf", "halt", _digest(b"halt"), {"j": record.j}))
        # later signing requests are refused
        w.loop.now = now
        w.loop.at(now + cfg.sib_period_ms * 1000, "amf",
                  lambda: w.broadcast(cfg.broadcasts + 1))
        w.loop.run()
        report.refused_after_halt = w.refused
    return w.finish(halt=asdict(report)), report
