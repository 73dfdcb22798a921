"""Two-round threshold Schnorr signing over hierarchical keys.

Preprocessing produces, per participant and slot ``j``, raw nonces
``(e_hat, d_hat)`` kept private and commitments ``E = g^e, D = g^d`` with
``e = H1(e_hat || j || member_id)``. Signing binds every signer's commitment
with ``rho_i`` and answers the challenge ``h = H2(R || Q_k || m)``.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .algebra import Group, GroupElement, InvalidEncoding, RandomSource, frame, get_group
from .hierarchy import (
    GroupKeyChain,
    IdentityVector,
    KeyShare,
    MalformedChain,
    chain_public_key,
    lagrange_coefficients,
)


class SigningError(Exception):
    pass


class NonceReuse(SigningError):
    pass


class NotInSignerSet(SigningError):
    pass


class BelowThreshold(SigningError):
    pass


class MissingCommitment(SigningError):
    pass


class ShareVerificationFailed(SigningError):
    def __init__(self, index: int, reason: str = "share equation failed"):
        super().__init__(f"signature share from participant {index}: {reason}")
        self.index = index


class IncompleteSet(SigningError):
    pass


def derive_nonce(group: Group, raw: int, j: int, member_id: bytes) -> int:
    return group.h1(frame(group.encode_scalar(raw), j, member_id))


@dataclass
class NonceStore:
    """Private raw nonces of one participant. Each slot signs at most once."""

    index: int
    member_id: bytes
    group_name: str
    entries: Dict[int, List] = field(default_factory=dict)  # j -> [e_hat, d_hat, consumed]

    @property
    def group(self) -> Group:
        return get_group(self.group_name)

    def take(self, j: int) -> Tuple[int, int]:
        if j not in self.entries:
            raise MissingCommitment(f"participant {self.index} has no nonces for slot {j}")
        entry = self.entries[j]
        if entry[2]:
            raise NonceReuse(f"participant {self.index} already signed with slot {j}")
        entry[2] = True
        return entry[0], entry[1]

    def is_consumed(self, j: int) -> bool:
        return self.entries[j][2]

    def reveal(self, j: int) -> Tuple[int, int]:
        """Raw nonces for a forgery proof; does not consume."""
        if j not in self.entries:
            raise MissingCommitment(f"participant {self.index} has no nonces for slot {j}")
        return self.entries[j][0], self.entries[j][1]

    def to_dict(self) -> dict:
        g = self.group
        return {
            "index": self.index,
            "member_id": self.member_id.hex(),
            "group": self.group_name,
            "entries": {str(j): [g.scalar_hex(e), g.scalar_hex(d), bool(c)]
                        for j, (e, d, c) in sorted(self.entries.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NonceStore":
        g = get_group(d["group"])
        entries = {int(j): [g.scalar_from_hex(e), g.scalar_from_hex(dd), bool(c)]
                   for j, (e, dd, c) in d["entries"].items()}
        return cls(int(d["index"]), bytes.fromhex(d["member_id"]), d["group"], entries)


class CommitmentList:
    """Public commitments ``j -> (E, D)`` of one participant, in wire encoding."""

    def __init__(self, index: int, group_name: str,
                 entries: Optional[Dict[int, Tuple[bytes, bytes]]] = None) -> None:
        self.index = index
        self.group_name = group_name
        self.entries: Dict[int, Tuple[bytes, bytes]] = dict(entries or {})
        self._decoded: Dict[int, Tuple[GroupElement, GroupElement]] = {}

    @property
    def group(self) -> Group:
        return get_group(self.group_name)

    @property
    def capacity(self) -> int:
        return len(self.entries)

    def pair(self, j: int) -> Tuple[GroupElement, GroupElement]:
        if j not in self._decoded:
            if j not in self.entries:
                raise MissingCommitment(f"participant {self.index} has no commitment for slot {j}")
            e, d = self.entries[j]
            g = self.group
            self._decoded[j] = (g.decode(e), g.decode(d))
        return self._decoded[j]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CommitmentList):
            return NotImplemented
        return (self.index, self.group_name, self.entries) == (
            other.index, other.group_name, other.entries)

    def __repr__(self) -> str:
        return f"CommitmentList(index={self.index}, slots={sorted(self.entries)})"


def commitment_pair(group: Group, e_hat: int, d_hat: int, j: int,
                    member_id: bytes) -> Tuple[GroupElement, GroupElement]:
    e = derive_nonce(group, e_hat, j, member_id)
    d = derive_nonce(group, d_hat, j, member_id)
    return group.g_exp(e), group.g_exp(d)


def preprocess(share: KeyShare, J: int, rng: RandomSource,
               start: int = 1) -> Tuple[NonceStore, CommitmentList]:
    """Nonces and commitments for slots ``start .. start+J-1``."""
    if J < 1:
        raise ValueError("J must be at least 1")
    g = share.group
    store = NonceStore(share.index, share.member_id, g.name)
    clist = CommitmentList(share.index, g.name)
    for j in range(start, start + J):
        e_hat, d_hat = g.random_scalar(rng), g.random_scalar(rng)
        E, D = commitment_pair(g, e_hat, d_hat, j, share.member_id)
        store.entries[j] = [e_hat, d_hat, False]
        clist.entries[j] = (E.encode(), D.encode())
    return store, clist


def validate_commitments(clist: CommitmentList) -> bool:
    g = clist.group
    return all(g.is_valid_encoding(e) and g.is_valid_encoding(d)
               for e, d in clist.entries.values())


@dataclass(frozen=True)
class GroupCommitment:
    R: GroupElement
    parts: Dict[int, GroupElement]
    rho: Dict[int, int]


def _binding_list(lists: Mapping[int, CommitmentList], signers: Sequence[int], j: int) -> bytes:
    parts = []
    for i in signers:
        E, D = lists[i].pair(j)
        parts.append(frame(i, E, D))
    return frame(*parts)


def group_commitment(message: bytes, j: int, lists: Mapping[int, CommitmentList],
                     signer_set: Iterable[int]) -> GroupCommitment:
    """``R_j = prod_i D_i * E_i^rho_i``; the one code path used by signing and PoF."""
    signers = sorted(signer_set)
    missing = [i for i in signers if i not in lists]
    if missing:
        raise MissingCommitment(f"no commitment list for participants {missing}")
    g = lists[signers[0]].group
    binding = _binding_list(lists, signers, j)
    parts, rho = {}, {}
    for i in signers:
        E, D = lists[i].pair(j)
        rho[i] = g.h1(frame(i, message, binding))
        parts[i] = D * (E ** rho[i])
    return GroupCommitment(g.product(parts.values()), parts, rho)


def challenge(R: GroupElement, q_k: GroupElement, message: bytes) -> int:
    return R.group.h2(frame(R, q_k, message))


@dataclass(frozen=True)
class SignatureShare:
    index: int
    j: int
    z: int
    R: GroupElement


@dataclass(frozen=True)
class ThresholdSignature:
    R: GroupElement
    z: int
    j: int
    signer_set: Tuple[int, ...]

    def to_bytes(self) -> bytes:
        """Wire form ``R || z``."""
        return self.R.encode() + self.R.group.encode_scalar(self.z)

    @classmethod
    def from_bytes(cls, data: bytes, j: int = 0, signer_set: Sequence[int] = (),
                   group: Optional[Group] = None) -> "ThresholdSignature":
        g = group or get_group()
        if len(data) != g.element_len + g.scalar_len:
            raise InvalidEncoding(f"signature must be {g.element_len + g.scalar_len} bytes")
        R = g.decode(data[: g.element_len])
        z = g.decode_scalar(data[g.element_len:])
        return cls(R, z, j, tuple(sorted(signer_set)))


def _check_signer_set(signers: Sequence[int], t: int, n: int) -> None:
    if len(set(signers)) != len(signers):
        raise ValueError(f"duplicate signer in {signers}")
    if len(signers) < t:
        raise BelowThreshold(f"{len(signers)} signers, threshold is {t}")
    if len(signers) > n or any(not 1 <= i <= n for i in signers):
        raise ValueError(f"signer set {signers} outside 1..{n}")


def sign_share(message: bytes, j: int, lists: Mapping[int, CommitmentList],
               signer_set: Iterable[int], share: KeyShare, store: NonceStore) -> SignatureShare:
    signers = sorted(signer_set)
    if share.index not in signers:
        raise NotInSignerSet(f"participant {share.index} not in {signers}")
    _check_signer_set(signers, share.t, share.n)
    if store.index != share.index:
        raise ValueError("nonce store belongs to another participant")
    if j in store.entries and store.is_consumed(j):
        raise NonceReuse(f"participant {share.index} already signed with slot {j}")
    g = share.group
    q = g.order
    com = group_commitment(message, j, lists, signers)
    h = challenge(com.R, share.chain.last, message)
    lam = lagrange_coefficients(signers, q)[share.index]
    e_hat, d_hat = store.take(j)
    e = derive_nonce(g, e_hat, j, share.member_id)
    d = derive_nonce(g, d_hat, j, share.member_id)
    z = (d + e * com.rho[share.index] + lam * share.sk_share * h) % q
    return SignatureShare(share.index, j, z, com.parts[share.index])


def verify_share(s: SignatureShare, pk_share: GroupElement, lam: int, h: int) -> bool:
    g = pk_share.group
    return g.g_exp(s.z) == s.R * (pk_share ** (lam * h % g.order))


def aggregate(shares: Sequence[SignatureShare], message: bytes,
              lists: Mapping[int, CommitmentList], share_pks: Mapping[int, GroupElement],
              chain: GroupKeyChain, t: int,
              signer_set: Optional[Iterable[int]] = None) -> ThresholdSignature:
    """Check every share and combine them; any bad share aborts the signature."""
    indices = sorted(s.index for s in shares)
    if len(set(indices)) != len(indices):
        raise IncompleteSet(f"duplicate shares in {indices}")
    if signer_set is not None and sorted(signer_set) != indices:
        raise IncompleteSet(f"shares from {indices}, expected {sorted(signer_set)}")
    if len(indices) < t:
        raise IncompleteSet(f"{len(indices)} shares, threshold is {t}")
    js = {s.j for s in shares}
    if len(js) != 1:
        raise IncompleteSet(f"shares for different slots {sorted(js)}")
    j = js.pop()
    g = chain.group
    com = group_commitment(message, j, lists, indices)
    h = challenge(com.R, chain.last, message)
    lam = lagrange_coefficients(indices, g.order)
    for s in shares:
        if s.R != com.parts[s.index]:
            raise ShareVerificationFailed(s.index, "commitment does not match bulletin")
        if not verify_share(s, share_pks[s.index], lam[s.index], h):
            raise ShareVerificationFailed(s.index)
    z = sum(s.z for s in shares) % g.order
    return ThresholdSignature(com.R, z, j, tuple(indices))


def mverify(message: bytes, ids: IdentityVector, chain: GroupKeyChain,
            sig: ThresholdSignature) -> bool:
    """Verify against the master key, the public chain and the identity vector."""
    if len(chain) != ids.level + 1 or ids.level < 1:
        raise MalformedChain(
            f"chain of {len(chain)} elements does not fit identity level {ids.level}")
    g = chain.group
    if sig.R.group is not g:
        return False
    y = chain_public_key(ids, chain)
    h = challenge(sig.R, chain.last, message)
    return g.g_exp(sig.z) == sig.R * (y ** h)


# -- bulletin ------------------------------------------------------------------

def context_id(ids: IdentityVector, chain: GroupKeyChain) -> str:
    return hashlib.sha256(frame(*ids.ids, *chain.elements)).hexdigest()[:16]


class Bulletin:
    """Public commitment board keyed by (context, participant index).

    Appends to an optional JSON-lines file, one record per (participant, slot).
    """

    def __init__(self, path: Optional[Path] = None) -> None:
        self.path = Path(path) if path else None
        self._lists: Dict[Tuple[str, int], CommitmentList] = {}
        self._lock = threading.Lock()

    def publish(self, context: str, clist: CommitmentList) -> bool:
        """Validate and store; invalid lists are rejected and not stored."""
        if not validate_commitments(clist):
            return False
        records = []
        with self._lock:
            key = (context, clist.index)
            current = self._lists.setdefault(key, CommitmentList(clist.index, clist.group_name))
            for j, (e, d) in sorted(clist.entries.items()):
                if j in current.entries and current.entries[j] != (e, d):
                    raise ValueError(f"slot {j} of participant {clist.index} already published")
                current.entries[j] = (e, d)
                records.append({"context": context, "group": clist.group_name,
                                "index": clist.index, "j": j, "E": e.hex(), "D": d.hex()})
            if self.path is not None:
                with open(self.path, "a") as fh:
                    for rec in records:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return True

    def lists(self, context: str) -> Dict[int, CommitmentList]:
        return {i: cl for (c, i), cl in self._lists.items() if c == context}

    @classmethod
    def load(cls, path: Path) -> "Bulletin":
        board = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = (rec["context"], int(rec["index"]))
                cl = board._lists.setdefault(key, CommitmentList(key[1], rec["group"]))
                cl.entries[int(rec["j"])] = (bytes.fromhex(rec["E"]), bytes.fromhex(rec["D"]))
        board.path = Path(path)
        return board


# -- local driver ----------------------------------------------------------------

class SigningGroup:
    """All participants of one level run in-process; used by demos, tests, benches."""

    def __init__(self, shares: Sequence[KeyShare], share_pks: Mapping[int, GroupElement],
                 bulletin: Optional[Bulletin] = None) -> None:
        if not shares:
            raise ValueError("no shares")
        self.shares = {s.index: s for s in shares}
        first = shares[0]
        self.t, self.n = first.t, first.n
        self.ids, self.chain = first.ids, first.chain
        self.share_pks = dict(share_pks)
        self.bulletin = bulletin or Bulletin()
        self.context = context_id(self.ids, self.chain)
        self.stores: Dict[int, NonceStore] = {}
        self.next_slot = 1
        self._filled = 0

    @property
    def group(self) -> Group:
        return self.chain.group

    def preprocess(self, J: int, rng: RandomSource) -> None:
        start = self._filled + 1
        for i, share in sorted(self.shares.items()):
            store, clist = preprocess(share, J, rng, start)
            if i in self.stores:
                self.stores[i].entries.update(store.entries)
            else:
                self.stores[i] = store
            if not self.bulletin.publish(self.context, clist):
                raise SigningError(f"participant {i} published invalid commitments")
        self._filled += J

    def select_signers(self, available: Optional[Iterable[int]] = None,
                       beta: Optional[int] = None) -> Tuple[int, ...]:
        pool = sorted(available if available is not None else self.shares)
        beta = self.t if beta is None else beta
        if len(pool) < beta:
            raise BelowThreshold(f"only {len(pool)} participants available, need {beta}")
        return tuple(pool[:beta])

    def sign(self, message: bytes, signer_set: Optional[Iterable[int]] = None,
             rng: Optional[RandomSource] = None) -> ThresholdSignature:
        signers = tuple(sorted(signer_set)) if signer_set is not None else self.select_signers()
        _check_signer_set(list(signers), self.t, self.n)
        j = self.next_slot
        if j > self._filled:
            if rng is None:
                raise MissingCommitment(f"slot {j} not preprocessed")
            self.preprocess(1, rng)
        lists = self.bulletin.lists(self.context)
        shares = [sign_share(message, j, lists, signers, self.shares[i], self.stores[i])
                  for i in signers]
        self.next_slot += 1
        return aggregate(shares, message, lists, self.share_pks, self.chain, self.t, signers)

    def verify(self, message: bytes, sig: ThresholdSignature) -> bool:
        return mverify(message, self.ids, self.chain, sig)
