"""Reference implementations used only by the tests.

Slow and straightforward on purpose: affine twisted-Edwards arithmetic over
GF(2^255 - 19), exact-rational interpolation, and phase enumeration for the
cyclic SIB1 stream. None of it imports the package under test.
"""

from fractions import Fraction

P = 2**255 - 19
L = 2**252 + 27742317777372353535851937790883648493
D = -121665 * pow(121666, -1, P) % P
SQRT_M1 = pow(2, (P - 1) // 4, P)


def _recover_x(y, sign):
    xx = (y * y - 1) * pow(D * y * y + 1, -1, P) % P
    x = pow(xx, (P + 3) // 8, P)
    if (x * x - xx) % P:
        x = x * SQRT_M1 % P
    if (x * x - xx) % P:
        raise ValueError("not on curve")
    if x & 1 != sign:
        x = P - x
    return x


BASE_Y = 4 * pow(5, -1, P) % P
BASE = (_recover_x(BASE_Y, 0), BASE_Y)
IDENTITY = (0, 1)


def add(p1, p2):
    x1, y1 = p1
    x2, y2 = p2
    t = D * x1 * x2 * y1 * y2 % P
    x3 = (x1 * y2 + y1 * x2) * pow(1 + t, -1, P) % P
    y3 = (y1 * y2 + x1 * x2) * pow(1 - t, -1, P) % P
    return x3, y3


def mul(k, pt=BASE):
    acc = IDENTITY
    for bit in bin(k)[2:]:
        acc = add(acc, acc)
        if bit == "1":
            acc = add(acc, pt)
    return acc


def encode(pt) -> bytes:
    x, y = pt
    return (y | ((x & 1) << 255)).to_bytes(32, "little")


def decode(b: bytes):
    v = int.from_bytes(b, "little")
    y = v & ((1 << 255) - 1)
    return _recover_x(y, v >> 255), y


def lagrange_at_zero(indices, q):
    """lambda_i via exact rationals, reduced mod q at the end."""
    out = {}
    for i in indices:
        c = Fraction(1)
        for j in indices:
            if j != i:
                c *= Fraction(j, j - i)
        out[i] = c.numerator * pow(c.denominator, -1, q) % q
    return out


def packets_heard(F: int, start: int) -> int:
    """Anchor-first reassembly from phase ``start`` of a cycle of F fragments."""
    if start == 1:
        return F
    return (F - start + 1) + F


def expected_packets(F: int) -> Fraction:
    return Fraction(sum(packets_heard(F, s) for s in range(1, F + 1)), F)
