"""Prime-order groups, scalar helpers, hash-to-scalar and canonical encodings.

Scalars are plain Python ints reduced mod the group order. Group elements are
:class:`GroupElement` instances bound to a :class:`Group`; ``a * b`` is the
group operation and ``a ** s`` is exponentiation by an integer scalar.

Two groups ship:

* ``ed25519`` (default): the prime-order subgroup of edwards25519, 32-byte
  compressed elements and 32-byte scalars. Arithmetic runs in libsodium.
* ``secp224k1``: a pure-Python short-Weierstrass curve with 29-byte
  compressed elements and 29-byte scalars.
"""

from __future__ import annotations

import hashlib
import random
import secrets
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Union

import nacl.bindings as _na

H1_TAG = b"BORG-H1"
H2_TAG = b"BORG-H2"

RandomSource = Union[random.Random, secrets.SystemRandom]


class InvalidEncoding(ValueError):
    """Raised when bytes do not decode to a valid group element or scalar."""


@dataclass(frozen=True)
class GroupParams:
    name: str
    generator: str
    order: int
    element_len: int
    scalar_len: int


class GroupElement:
    """An immutable element of a prime-order group."""

    __slots__ = ("group", "_raw")

    def __init__(self, group: "Group", raw) -> None:
        self.group = group
        self._raw = raw

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        if other.group is not self.group:
            raise TypeError("elements belong to different groups")
        return GroupElement(self.group, self.group._op(self._raw, other._raw))

    def __pow__(self, s: int) -> "GroupElement":
        return self.group.exp(self, s)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, self.group._inv(self._raw))

    def is_identity(self) -> bool:
        return self == self.group.identity

    def encode(self) -> bytes:
        return self.group._encode(self._raw)

    def hex(self) -> str:
        return self.encode().hex()

    def __bytes__(self) -> bytes:
        return self.encode()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroupElement):
            return NotImplemented
        return self.group is other.group and self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash((self.group.name, self.encode()))

    def __repr__(self) -> str:
        return f"GroupElement({self.group.name}, {self.hex()[:16]}...)"


class Group:
    """Base class for a cyclic group of prime order with fixed-width encodings."""

    name: str
    order: int
    element_len: int
    scalar_len: int

    # backend hooks over raw representations
    def _op(self, a, b): raise NotImplementedError
    def _inv(self, a): raise NotImplementedError
    def _exp(self, a, s: int): raise NotImplementedError
    def _encode(self, a) -> bytes: raise NotImplementedError
    def _decode(self, data: bytes): raise NotImplementedError
    _identity_raw = None
    _generator_raw = None

    @property
    def identity(self) -> GroupElement:
        return GroupElement(self, self._identity_raw)

    @property
    def generator(self) -> GroupElement:
        return GroupElement(self, self._generator_raw)

    @property
    def params(self) -> GroupParams:
        return GroupParams(self.name, self.generator.hex(), self.order,
                           self.element_len, self.scalar_len)

    def exp(self, base: GroupElement, s: int) -> GroupElement:
        s %= self.order
        if s == 0 or base._raw == self._identity_raw:
            return self.identity
        return GroupElement(self, self._exp(base._raw, s))

    def g_exp(self, s: int) -> GroupElement:
        """``g ** s`` for the fixed generator."""
        return self.exp(self.generator, s)

    def product(self, elements: Iterable[GroupElement]) -> GroupElement:
        acc = self.identity
        for e in elements:
            acc = acc * e
        return acc

    def decode(self, data: bytes) -> GroupElement:
        """Decode and validate group membership."""
        if len(data) != self.element_len:
            raise InvalidEncoding(
                f"{self.name} element must be {self.element_len} bytes, got {len(data)}")
        return GroupElement(self, self._decode(bytes(data)))

    def is_valid_encoding(self, data: bytes) -> bool:
        try:
            self.decode(data)
        except InvalidEncoding:
            return False
        return True

    def element_from_hex(self, text: str) -> GroupElement:
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise InvalidEncoding(str(exc)) from None
        return self.decode(raw)

    # scalars

    def encode_scalar(self, s: int) -> bytes:
        if not 0 <= s < self.order:
            raise InvalidEncoding("scalar out of range")
        return s.to_bytes(self.scalar_len, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_len:
            raise InvalidEncoding(
                f"{self.name} scalar must be {self.scalar_len} bytes, got {len(data)}")
        s = int.from_bytes(data, "big")
        if s >= self.order:
            raise InvalidEncoding("scalar not reduced")
        return s

    def scalar_hex(self, s: int) -> str:
        return self.encode_scalar(s).hex()

    def scalar_from_hex(self, text: str) -> int:
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise InvalidEncoding(str(exc)) from None
        return self.decode_scalar(raw)

    def hash_to_scalar(self, tag: bytes, data: bytes) -> int:
        digest = hashlib.sha256(tag + data).digest()
        return int.from_bytes(digest, "big") % self.order

    def h1(self, data: bytes) -> int:
        return self.hash_to_scalar(H1_TAG, data)

    def h2(self, data: bytes) -> int:
        return self.hash_to_scalar(H2_TAG, data)

    def random_scalar(self, rng: RandomSource) -> int:
        return rng.randrange(self.order)

    def __repr__(self) -> str:
        return f"<Group {self.name}>"


# -- edwards25519 prime-order subgroup (libsodium) ----------------------------

_ED_L = 2**252 + 27742317777372353535851937790883648493
_ED_IDENTITY = b"\x01" + bytes(31)


def _le(s: int) -> bytes:
    return s.to_bytes(32, "little")


class Ed25519Group(Group):
    name = "ed25519"
    order = _ED_L
    element_len = 32
    scalar_len = 32

    def __init__(self) -> None:
        self._identity_raw = _ED_IDENTITY
        self._generator_raw = _na.crypto_scalarmult_ed25519_base_noclamp(_le(1))

    def _op(self, a: bytes, b: bytes) -> bytes:
        if a == _ED_IDENTITY:
            return b
        if b == _ED_IDENTITY:
            return a
        return _na.crypto_core_ed25519_add(a, b)

    def _inv(self, a: bytes) -> bytes:
        if a == _ED_IDENTITY:
            return a
        return _na.crypto_core_ed25519_sub(_ED_IDENTITY, a)

    def _exp(self, a: bytes, s: int) -> bytes:
        if a == self._generator_raw:
            return _na.crypto_scalarmult_ed25519_base_noclamp(_le(s))
        return _na.crypto_scalarmult_ed25519_noclamp(_le(s), a)

    def _encode(self, a: bytes) -> bytes:
        return a

    def _decode(self, data: bytes) -> bytes:
        # libsodium rejects non-canonical, off-curve, small-order and
        # out-of-subgroup encodings; the identity is small order so it is
        # accepted separately.
        if data == _ED_IDENTITY or _na.crypto_core_ed25519_is_valid_point(data):
            return data
        raise InvalidEncoding("not an element of the ed25519 prime-order subgroup")


# -- secp224k1 (pure Python) ---------------------------------------------------

_K224_P = 2**224 - 2**32 - 6803
_K224_N = 0x010000000000000000000000000001DCE8D2EC6184CAF0A971769FB1F7
_K224_B = 5
_K224_G = (
    0xA1455B334DF099DF30FC28A169A467E9E47075A90F7E650EB6B7A45C,
    0x7E089FED7FBA344282CAFBD6F7E319F7C0B0BD59E2CA4BDB556D61A5,
)


def _sqrt_mod_5_8(a: int, p: int) -> Optional[int]:
    """Square root modulo p with p = 5 (mod 8) (Atkin's method)."""
    a %= p
    if a == 0:
        return 0
    v = pow(2 * a, (p - 5) // 8, p)
    i = 2 * a * v * v % p
    r = a * v * (i - 1) % p
    return r if r * r % p == a else None


class Secp224k1Group(Group):
    name = "secp224k1"
    order = _K224_N
    element_len = 29
    scalar_len = 29

    def __init__(self) -> None:
        self._identity_raw = None
        self._generator_raw = _K224_G

    @staticmethod
    def _on_curve(pt) -> bool:
        x, y = pt
        return (y * y - x * x * x - _K224_B) % _K224_P == 0

    def _op(self, a, b):
        p = _K224_P
        if a is None:
            return b
        if b is None:
            return a
        if a[0] == b[0]:
            if (a[1] + b[1]) % p == 0:
                return None
            lam = 3 * a[0] * a[0] * pow(2 * a[1], -1, p) % p
        else:
            lam = (b[1] - a[1]) * pow(b[0] - a[0], -1, p) % p
        x = (lam * lam - a[0] - b[0]) % p
        return (x, (lam * (a[0] - x) - a[1]) % p)

    def _inv(self, a):
        if a is None:
            return None
        return (a[0], (-a[1]) % _K224_P)

    def _exp(self, a, s: int):
        # left-to-right double-and-add in Jacobian coordinates (curve a = 0)
        p = _K224_P
        ax, ay = a
        X, Y, Z = 1, 1, 0
        for bit in bin(s)[2:]:
            if Z:
                A = X * X % p
                B = Y * Y % p
                C = B * B % p
                D = 2 * ((X + B) * (X + B) - A - C) % p
                E = 3 * A % p
                nX = (E * E - 2 * D) % p
                Y, Z = (E * (D - nX) - 8 * C) % p, 2 * Y * Z % p
                X = nX
            if bit == "1":
                if not Z:
                    X, Y, Z = ax, ay, 1
                    continue
                Z1Z1 = Z * Z % p
                H = (ax * Z1Z1 - X) % p
                r = 2 * (ay * Z * Z1Z1 - Y) % p
                if H == 0:
                    if r == 0:
                        return self._op(self._to_affine(X, Y, Z), a)
                    X, Y, Z = 1, 1, 0
                    continue
                HH = H * H % p
                I = 4 * HH % p
                J = H * I % p
                V = X * I % p
                nX = (r * r - J - 2 * V) % p
                nY = (r * (V - nX) - 2 * Y * J) % p
                Z = ((Z + H) * (Z + H) - Z1Z1 - HH) % p
                X, Y = nX, nY
        return self._to_affine(X, Y, Z)

    @staticmethod
    def _to_affine(X, Y, Z):
        if Z == 0:
            return None
        p = _K224_P
        zi = pow(Z, -1, p)
        zi2 = zi * zi % p
        return (X * zi2 % p, Y * zi2 * zi % p)

    def _encode(self, a) -> bytes:
        if a is None:
            return bytes(29)
        return bytes([2 + (a[1] & 1)]) + a[0].to_bytes(28, "big")

    def _decode(self, data: bytes):
        if data == bytes(29):
            return None
        prefix, x = data[0], int.from_bytes(data[1:], "big")
        if prefix not in (2, 3) or x >= _K224_P:
            raise InvalidEncoding("bad secp224k1 point encoding")
        y = _sqrt_mod_5_8(x * x * x + _K224_B, _K224_P)
        if y is None:
            raise InvalidEncoding("x is not on secp224k1")
        if y & 1 != prefix - 2:
            y = _K224_P - y
        # cofactor 1: on-curve implies prime-order subgroup membership
        return (x, y)


_GROUPS: Dict[str, Callable[[], Group]] = {
    "ed25519": Ed25519Group,
    "secp224k1": Secp224k1Group,
}
_CACHE: Dict[str, Group] = {}

DEFAULT_GROUP = "ed25519"


def get_group(name: str = DEFAULT_GROUP) -> Group:
    if name not in _GROUPS:
        raise KeyError(f"unknown group {name!r}; choose from {sorted(_GROUPS)}")
    if name not in _CACHE:
        _CACHE[name] = _GROUPS[name]()
    return _CACHE[name]


def available_groups():
    return sorted(_GROUPS)


# -- module-level conveniences over the default group ---------------------------

def hash_to_scalar_h1(data: bytes, group: Optional[Group] = None) -> int:
    return (group or get_group()).h1(data)


def hash_to_scalar_h2(data: bytes, group: Optional[Group] = None) -> int:
    return (group or get_group()).h2(data)


def exp(base: GroupElement, s: int) -> GroupElement:
    return base.group.exp(base, s)


def sample_scalar(rng: RandomSource, group: Optional[Group] = None) -> int:
    return (group or get_group()).random_scalar(rng)


def make_rng(seed: Optional[int] = None) -> RandomSource:
    """Seeded PRNG for reproducible runs, OS randomness otherwise.

    The seeded generator is for tests and simulations only.
    """
    if seed is None:
        return secrets.SystemRandom()
    return random.Random(seed)


def frame(*parts: Union[bytes, int, GroupElement]) -> bytes:
    """Unambiguous concatenation: each part is prefixed with its 4-byte length.

    ints are encoded as 4-byte big-endian, elements by their canonical bytes.
    """
    out = bytearray()
    for part in parts:
        if isinstance(part, GroupElement):
            b = part.encode()
        elif isinstance(part, int):
            b = part.to_bytes(4, "big")
        else:
            b = bytes(part)
        out += len(b).to_bytes(4, "big")
        out += b
    return bytes(out)
