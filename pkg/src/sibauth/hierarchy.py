"""System setup, hierarchical key extraction with Shamir splitting, Lagrange helpers.

A level-``k`` secret is ``sk_k = sk_{k-1} * h_k + r_k`` with ``r_k = H1(alpha_k)``
and ``h_k = H1(ID_k || chain_k)``. The level secret is split with a random
degree ``t-1`` polynomial; participant ``i`` receives ``f(i)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .algebra import Group, GroupElement, RandomSource, frame, get_group

KEY_FILE_VERSION = 1


class HierarchyError(ValueError):
    pass


class InvalidThreshold(HierarchyError):
    pass


class DuplicateIndex(HierarchyError):
    pass


class InsufficientShares(HierarchyError):
    pass


class MixedContext(HierarchyError):
    pass


class MalformedChain(HierarchyError):
    pass


@dataclass(frozen=True)
class IdentityVector:
    """Ordered identities ``(ID_1, ..., ID_k)``; the root has level 0."""

    ids: Tuple[bytes, ...] = ()

    @property
    def level(self) -> int:
        return len(self.ids)

    @property
    def last(self) -> bytes:
        if not self.ids:
            raise MalformedChain("root identity vector has no last element")
        return self.ids[-1]

    def prefix(self, j: int) -> "IdentityVector":
        if not 0 <= j <= self.level:
            raise ValueError(f"prefix length {j} outside [0, {self.level}]")
        return IdentityVector(self.ids[:j])

    def child(self, identity: bytes) -> "IdentityVector":
        return IdentityVector(self.ids + (bytes(identity),))

    def member_id(self, index: int) -> bytes:
        """Identity of participant ``index`` within the group at this level."""
        return frame(self.last, index)

    def to_hex(self) -> List[str]:
        return [i.hex() for i in self.ids]

    @classmethod
    def from_hex(cls, items: Iterable[str]) -> "IdentityVector":
        return cls(tuple(bytes.fromhex(x) for x in items))


@dataclass(frozen=True)
class GroupKeyChain:
    """``(PK_0, Q_1, ..., Q_k)``; element 0 is the master public key."""

    elements: Tuple[GroupElement, ...]

    def __post_init__(self):
        if not self.elements:
            raise MalformedChain("key chain must contain the master public key")

    @property
    def group(self) -> Group:
        return self.elements[0].group

    @property
    def level(self) -> int:
        return len(self.elements) - 1

    @property
    def master(self) -> GroupElement:
        return self.elements[0]

    @property
    def last(self) -> GroupElement:
        return self.elements[-1]

    def prefix(self, level: int) -> "GroupKeyChain":
        return GroupKeyChain(self.elements[: level + 1])

    def extend(self, q: GroupElement) -> "GroupKeyChain":
        return GroupKeyChain(self.elements + (q,))

    def __len__(self) -> int:
        return len(self.elements)

    def to_hex(self) -> List[str]:
        return [e.hex() for e in self.elements]

    @classmethod
    def from_hex(cls, items: Iterable[str], group: Group) -> "GroupKeyChain":
        return cls(tuple(group.element_from_hex(x) for x in items))


def identity_hash(identity: bytes, chain: GroupKeyChain) -> int:
    """``h_ID = H1(ID || chain)`` with every component length-prefixed."""
    return chain.group.h1(frame(identity, *chain.elements))


@dataclass(frozen=True)
class SystemParams:
    group_name: str
    h1_tag: str
    h2_tag: str

    @property
    def group(self) -> Group:
        return get_group(self.group_name)


@dataclass(frozen=True)
class MasterKey:
    alpha: int
    sk: int
    pk: GroupElement

    @property
    def chain(self) -> GroupKeyChain:
        return GroupKeyChain((self.pk,))


@dataclass(frozen=True)
class LevelSecret:
    """Kept by the parent: ``alpha`` is needed later to check forgery proofs."""

    alpha: int
    sk: int
    q: GroupElement


@dataclass(frozen=True)
class KeyShare:
    index: int
    sk_share: int
    pk_share: GroupElement
    t: int
    n: int
    ids: IdentityVector
    chain: GroupKeyChain
    expiry: Optional[int] = None

    @property
    def group(self) -> Group:
        return self.chain.group

    @property
    def member_id(self) -> bytes:
        return self.ids.member_id(self.index)

    @property
    def context(self) -> Tuple:
        return (self.ids, tuple(e.encode() for e in self.chain.elements), self.t, self.n)


@dataclass
class Extraction:
    shares: List[KeyShare]
    share_pks: Dict[int, GroupElement]
    chain: GroupKeyChain
    ids: IdentityVector
    level_secret: LevelSecret

    @property
    def t(self) -> int:
        return self.shares[0].t

    @property
    def n(self) -> int:
        return self.shares[0].n


def setup(rng: RandomSource, group: Optional[Group] = None) -> Tuple[MasterKey, SystemParams]:
    group = group or get_group()
    alpha = group.random_scalar(rng)
    sk = group.h1(group.encode_scalar(alpha))
    params = SystemParams(group.name, "BORG-H1", "BORG-H2")
    return MasterKey(alpha, sk, group.g_exp(sk)), params


def _check_threshold(t: int, n: int) -> None:
    if not (1 <= t <= n):
        raise InvalidThreshold(f"need 1 <= t <= n, got t={t}, n={n}")


def _poly_eval(coeffs: Sequence[int], x: int, q: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % q
    return acc


def extract(
    child_id: bytes,
    parent_ids: IdentityVector,
    parent_chain: GroupKeyChain,
    parent_sk: int,
    t: int,
    n: int,
    rng: RandomSource,
    expiry: Optional[int] = None,
) -> Extraction:
    """Derive and split the key of ``child_id`` under a parent at level k-1."""
    _check_threshold(t, n)
    if parent_chain.level != parent_ids.level:
        raise MalformedChain(
            f"chain level {parent_chain.level} != identity level {parent_ids.level}")
    group = parent_chain.group
    q = group.order

    alpha = group.random_scalar(rng)
    r = group.h1(group.encode_scalar(alpha))
    q_child = group.g_exp(r)
    chain = parent_chain.extend(q_child)
    ids = parent_ids.child(child_id)
    h_id = identity_hash(ids.last, chain)
    sk = (parent_sk * h_id + r) % q

    coeffs = [sk] + [group.random_scalar(rng) for _ in range(t - 1)]
    shares = []
    share_pks = {}
    for i in range(1, n + 1):
        s = _poly_eval(coeffs, i, q)
        pk = group.g_exp(s)
        share_pks[i] = pk
        shares.append(KeyShare(i, s, pk, t, n, ids, chain, expiry))
    return Extraction(shares, share_pks, chain, ids, LevelSecret(alpha, sk, q_child))


def lagrange_coefficients(indices: Iterable[int], q: Optional[int] = None) -> Dict[int, int]:
    """Interpolation weights at x = 0 for the given share indices."""
    q = q or get_group().order
    idx = list(indices)
    if not idx:
        raise ValueError("need at least one index")
    if len(set(idx)) != len(idx):
        raise DuplicateIndex(f"duplicate share index in {idx}")
    if any(i < 1 for i in idx):
        raise ValueError("share indices start at 1")
    out = {}
    for i in idx:
        num, den = 1, 1
        for j in idx:
            if j != i:
                num = num * j % q
                den = den * (j - i) % q
        out[i] = num * pow(den, -1, q) % q
    return out


def reconstruct_secret(shares: Sequence[KeyShare]) -> int:
    """Recombine a level secret. Test and audit utility only, never used to sign."""
    if not shares:
        raise InsufficientShares("no shares given")
    ctx = shares[0].context
    if any(s.context != ctx for s in shares[1:]):
        raise MixedContext("shares come from different extractions")
    t = shares[0].t
    if len({s.index for s in shares}) < t:
        raise InsufficientShares(f"need {t} distinct shares, got {len(shares)}")
    q = shares[0].group.order
    lam = lagrange_coefficients([s.index for s in shares], q)
    return sum(lam[s.index] * s.sk_share for s in shares) % q


def chain_public_key(ids: IdentityVector, chain: GroupKeyChain) -> GroupElement:
    """``Q * Q_k * PK_0^(prod h)``, which equals ``g^{sk_k}`` for an honest chain."""
    if len(chain) != ids.level + 1:
        raise MalformedChain(
            f"chain has {len(chain)} elements for identity level {ids.level}")
    group = chain.group
    q = group.order
    k = ids.level
    if k == 0:
        return chain.master
    hs = [identity_hash(ids.ids[l - 1], chain.prefix(l)) for l in range(1, k + 1)]
    # suffix[l] = prod_{w=l+1..k} h_w  (1-based l)
    acc = group.identity
    suffix = 1
    for l in range(k, 0, -1):
        acc = acc * (chain.elements[l] ** suffix)
        suffix = suffix * hs[l - 1] % q
    return acc * (chain.master ** suffix)


def build_hierarchy(
    path: Sequence[bytes],
    t: int,
    n: int,
    rng: RandomSource,
    group: Optional[Group] = None,
    expiry: Optional[int] = None,
):
    """Setup plus a chain of 1-of-1 extractions ending in a (t, n) split.

    Returns ``(master, parents, leaf)`` where ``parents`` lists, per level
    below the leaf, ``(ids, chain, sk, level_secret)`` so callers have what
    the leaf's parent needs for forgery-proof verification.
    """
    if not path:
        raise ValueError("path must name at least one level")
    master, _ = setup(rng, group)
    ids, chain, sk = IdentityVector(), master.chain, master.sk
    parents = [(ids, chain, sk, None)]
    for ident in path[:-1]:
        ex = extract(ident, ids, chain, sk, 1, 1, rng, expiry)
        ids, chain, sk = ex.ids, ex.chain, ex.shares[0].sk_share
        parents.append((ids, chain, sk, ex.level_secret))
    leaf = extract(path[-1], ids, chain, sk, t, n, rng, expiry)
    return master, parents, leaf


# -- key files ---------------------------------------------------------------

def share_to_dict(share: KeyShare) -> dict:
    g = share.group
    return {
        "version": KEY_FILE_VERSION,
        "kind": "share",
        "group": g.name,
        "ids": share.ids.to_hex(),
        "level": share.ids.level,
        "t": share.t,
        "n": share.n,
        "index": share.index,
        "sk_share": g.scalar_hex(share.sk_share),
        "pk_share": share.pk_share.hex(),
        "chain": share.chain.to_hex(),
        "expiry": share.expiry,
    }


def share_from_dict(d: dict) -> KeyShare:
    if d.get("version") != KEY_FILE_VERSION or d.get("kind") != "share":
        raise HierarchyError("not a version-1 share key file")
    g = get_group(d["group"])
    ids = IdentityVector.from_hex(d["ids"])
    chain = GroupKeyChain.from_hex(d["chain"], g)
    if d["level"] != ids.level or chain.level != ids.level:
        raise MalformedChain("key file level does not match ids/chain")
    share = KeyShare(
        index=int(d["index"]),
        sk_share=g.scalar_from_hex(d["sk_share"]),
        pk_share=g.element_from_hex(d["pk_share"]),
        t=int(d["t"]),
        n=int(d["n"]),
        ids=ids,
        chain=chain,
        expiry=d.get("expiry"),
    )
    _check_threshold(share.t, share.n)
    if g.g_exp(share.sk_share) != share.pk_share:
        raise HierarchyError("pk_share does not match sk_share")
    return share


def parent_to_dict(kind: str, ids: IdentityVector, chain: GroupKeyChain, sk: int,
                   alpha: Optional[int], child_alphas: Dict[str, int], group: Group,
                   extra: Optional[dict] = None) -> dict:
    """Master / intermediate-level key file; also stores the alpha of each child."""
    d = {
        "version": KEY_FILE_VERSION,
        "kind": kind,
        "group": group.name,
        "ids": ids.to_hex(),
        "level": ids.level,
        "sk": group.scalar_hex(sk),
        "alpha": None if alpha is None else group.scalar_hex(alpha),
        "chain": chain.to_hex(),
        "child_alphas": {k: group.scalar_hex(v) for k, v in sorted(child_alphas.items())},
    }
    if extra:
        d.update(extra)
    return d


def dumps_key(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
