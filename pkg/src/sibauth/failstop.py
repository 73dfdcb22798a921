"""Proof-of-forgery generation by signers and its verification by the parent level.

Signers reveal the raw nonces of the slot a suspect signature claims to use and
recompute ``R`` through :func:`sibauth.thresh_sign.group_commitment`. A suspect
``R'`` that differs from the recomputed value was not produced by the signers.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

from .algebra import Group, GroupElement, get_group
from .hierarchy import GroupKeyChain, IdentityVector, identity_hash, lagrange_coefficients
from .thresh_sign import CommitmentList, ThresholdSignature, commitment_pair, group_commitment

PROOF_FILE_VERSION = 1


class UnknownMessageIndex(LookupError):
    pass


class IncompleteNonceReveal(ValueError):
    pass


class MalformedProof(ValueError):
    pass


@dataclass(frozen=True)
class HistoryRecord:
    j: int
    message: bytes
    sig: ThresholdSignature
    signer_set: Tuple[int, ...]
    timestamp: int


class SignatureHistory:
    """Append-only record of issued signatures, one per slot ``j``."""

    def __init__(self) -> None:
        self._records: Dict[int, HistoryRecord] = {}
        self._lock = threading.Lock()

    def append(self, message: bytes, sig: ThresholdSignature, timestamp: int = 0) -> HistoryRecord:
        rec = HistoryRecord(sig.j, bytes(message), sig, tuple(sig.signer_set), timestamp)
        with self._lock:
            if sig.j in self._records:
                raise ValueError(f"slot {sig.j} already recorded")
            self._records[sig.j] = rec
        return rec

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, j: int) -> bool:
        return j in self._records

    def __getitem__(self, j: int) -> HistoryRecord:
        return self._records[j]

    def records(self) -> List[HistoryRecord]:
        return [self._records[j] for j in sorted(self._records)]

    def lookup(self, message: bytes, j_hint: Optional[int] = None) -> HistoryRecord:
        """Find the record for ``message``; prefer slot ``j_hint`` when several match."""
        matches = [r for r in self.records() if r.message == message]
        if not matches:
            raise UnknownMessageIndex("message was never signed")
        for r in matches:
            if r.j == j_hint:
                return r
        return matches[-1]


@dataclass(frozen=True)
class NotAForgery:
    j: int

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class ForgeryProof:
    j: int
    signer_set: Tuple[int, ...]
    e_hat: Tuple[int, ...]
    d_hat: Tuple[int, ...]

    def __post_init__(self):
        if not (len(self.e_hat) == len(self.d_hat) == len(self.signer_set)):
            raise MalformedProof("nonce count must be twice the signer count")

    def reveals(self) -> Dict[int, Tuple[int, int]]:
        return {i: (e, d) for i, e, d in zip(self.signer_set, self.e_hat, self.d_hat)}

    def to_dict(self, group: Group) -> dict:
        return {
            "version": PROOF_FILE_VERSION,
            "group": group.name,
            "j": self.j,
            "signer_set": list(self.signer_set),
            "e_hat": [group.scalar_hex(x) for x in self.e_hat],
            "d_hat": [group.scalar_hex(x) for x in self.d_hat],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForgeryProof":
        if d.get("version") != PROOF_FILE_VERSION:
            raise MalformedProof("unsupported proof file version")
        try:
            g = get_group(d["group"])
            return cls(int(d["j"]), tuple(int(i) for i in d["signer_set"]),
                       tuple(g.scalar_from_hex(x) for x in d["e_hat"]),
                       tuple(g.scalar_from_hex(x) for x in d["d_hat"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedProof(str(exc)) from None

    def dumps(self, group: Group) -> str:
        return json.dumps(self.to_dict(group), indent=2) + "\n"


class PofVerdict(enum.Enum):
    CONFIRMED = "forgery-confirmed"
    NOT_A_FORGERY = "not-a-forgery"
    KEY_MISMATCH = "key-check-failed"
    COMMITMENT_MISMATCH = "commitment-mismatch"
    R_MATCHES = "r-matches"

    def __bool__(self) -> bool:
        return self is PofVerdict.CONFIRMED


def lists_from_reveals(group: Group, ids: IdentityVector, j: int,
                       reveals: Mapping[int, Tuple[int, int]]) -> Dict[int, CommitmentList]:
    """Rebuild slot-``j`` commitments from revealed raw nonces."""
    out = {}
    for i, (e_hat, d_hat) in reveals.items():
        E, D = commitment_pair(group, e_hat, d_hat, j, ids.member_id(i))
        out[i] = CommitmentList(i, group.name, {j: (E.encode(), D.encode())})
    return out


def recompute_R(group: Group, ids: IdentityVector, message: bytes, j: int,
                signer_set: Iterable[int], reveals: Mapping[int, Tuple[int, int]]) -> GroupElement:
    signers = sorted(signer_set)
    lists = lists_from_reveals(group, ids, j, {i: reveals[i] for i in signers})
    return group_commitment(message, j, lists, signers).R


def pof(suspect: ThresholdSignature, message: bytes, hist: SignatureHistory,
        reveals: Mapping[int, Tuple[int, int]], ids: IdentityVector) -> Union[NotAForgery, ForgeryProof]:
    record = hist.lookup(message, suspect.j)
    signers = record.signer_set
    missing = [i for i in signers if i not in reveals]
    if missing:
        raise IncompleteNonceReveal(f"no nonces revealed by participants {missing}")
    group = suspect.R.group
    R = recompute_R(group, ids, message, record.j, signers, reveals)
    if R == suspect.R:
        return NotAForgery(record.j)
    return ForgeryProof(record.j, tuple(signers),
                        tuple(reveals[i][0] for i in signers),
                        tuple(reveals[i][1] for i in signers))


def pof_verify(alpha: int, parent_sk: int, ids: IdentityVector, chain: GroupKeyChain,
               share_pks: Mapping[int, GroupElement], message: bytes,
               suspect: ThresholdSignature, proof: Union[NotAForgery, ForgeryProof],
               commitments: Optional[Mapping[int, CommitmentList]] = None) -> PofVerdict:
    """Parent-side check. Only :attr:`PofVerdict.CONFIRMED` is truthy.

    ``commitments`` (the published bulletin lists) is optional; when given, the
    revealed nonces must reproduce the published ``(E, D)`` of slot ``j``.
    """
    if isinstance(proof, NotAForgery):
        return PofVerdict.NOT_A_FORGERY
    if not isinstance(proof, ForgeryProof):
        raise MalformedProof(f"expected ForgeryProof, got {type(proof).__name__}")
    if not proof.signer_set or len(set(proof.signer_set)) != len(proof.signer_set):
        raise MalformedProof("bad signer set")
    g = chain.group
    r = g.h1(g.encode_scalar(alpha))
    q_k = g.g_exp(r)
    if q_k != chain.last:
        return PofVerdict.KEY_MISMATCH
    h_id = identity_hash(ids.last, chain)
    signers = sorted(proof.signer_set)
    if any(i not in share_pks for i in signers):
        return PofVerdict.KEY_MISMATCH
    lam = lagrange_coefficients(signers, g.order)
    combined = g.product(share_pks[i] ** lam[i] for i in signers)
    if combined != g.g_exp(h_id * parent_sk) * q_k:
        return PofVerdict.KEY_MISMATCH

    reveals = proof.reveals()
    rebuilt = lists_from_reveals(g, ids, proof.j, reveals)
    if commitments is not None:
        for i in signers:
            if i not in commitments or proof.j not in commitments[i].entries:
                return PofVerdict.COMMITMENT_MISMATCH
            if commitments[i].entries[proof.j] != rebuilt[i].entries[proof.j]:
                return PofVerdict.COMMITMENT_MISMATCH
    R = group_commitment(message, proof.j, rebuilt, signers).R
    if R == suspect.R:
        return PofVerdict.R_MATCHES
    return PofVerdict.CONFIRMED
