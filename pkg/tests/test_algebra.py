import hashlib

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sibauth.algebra import InvalidEncoding, available_groups, frame, get_group, make_rng

ED = get_group("ed25519")
K224 = get_group("secp224k1")
scalars = st.integers(min_value=0, max_value=ED.order - 1)


def test_generator_matches_reference_encoding():
    assert ED.generator.encode() == oracles.encode(oracles.BASE)
    assert ED.generator.hex() == "58" + "66" * 31


def test_identity_encoding():
    assert ED.identity.encode() == b"\x01" + bytes(31)
    assert ED.g_exp(0).is_identity()
    assert ED.g_exp(ED.order).is_identity()


@settings(max_examples=30, deadline=None)
@given(scalars)
def test_fixed_base_exp_matches_oracle(k):
    assert ED.g_exp(k).encode() == oracles.encode(oracles.mul(k))


@settings(max_examples=20, deadline=None)
@given(scalars, scalars)
def test_variable_base_exp_matches_oracle(a, k):
    base_pt = oracles.mul(a)
    base = ED.decode(oracles.encode(base_pt))
    assert (base ** k).encode() == oracles.encode(oracles.mul(k, base_pt))


@settings(max_examples=20, deadline=None)
@given(scalars, scalars)
def test_group_op_matches_oracle(a, b):
    got = ED.g_exp(a) * ED.g_exp(b)
    assert got.encode() == oracles.encode(oracles.add(oracles.mul(a), oracles.mul(b)))


@pytest.mark.parametrize("g", [ED, K224], ids=lambda g: g.name)
def test_group_laws(g):
    rng = make_rng(5)
    a, b = g.random_scalar(rng), g.random_scalar(rng)
    x, y = g.g_exp(a), g.g_exp(b)
    assert x * y == g.g_exp(a + b)
    assert x ** b == g.g_exp(a * b)
    assert x * x.inverse() == g.identity
    assert x * g.identity == x
    assert g.exp(x, g.order).is_identity()
    assert g.product([x, y, x]) == g.g_exp(2 * a + b)
    assert g.decode(x.encode()) == x
    assert len(x.encode()) == g.element_len


def test_secp224k1_generator_is_sec2_point():
    # SEC 2 generator x-coordinate, odd y
    assert K224.generator.hex() == "03a1455b334df099df30fc28a169a467e9e47075a90f7e650eb6b7a45c"
    assert K224.order > 2**224


def test_decode_rejects_bad_encodings():
    with pytest.raises(InvalidEncoding):
        ED.decode(bytes(31))
    # a small-order point (order 2) is on the curve but outside the subgroup
    order2 = (1 << 255) - 20
    with pytest.raises(InvalidEncoding):
        ED.decode(order2.to_bytes(32, "little"))
    assert not ED.is_valid_encoding(b"\xff" * 32)
    with pytest.raises(InvalidEncoding):
        K224.decode(b"\x05" + bytes(28))


def test_scalar_encoding_round_trip_and_range():
    s = ED.order - 1
    assert ED.decode_scalar(ED.encode_scalar(s)) == s
    assert ED.scalar_from_hex(ED.scalar_hex(s)) == s
    with pytest.raises(ValueError):
        ED.decode_scalar(ED.order.to_bytes(32, "big"))


def test_hash_to_scalar_pinned():
    assert ED.scalar_hex(ED.h1(b"abc")) == \
        "03574b41972992fe064d6c7da18d594aa06bca0ab047f61676c6c2552b699279"
    assert ED.scalar_hex(ED.h2(b"abc")) == \
        "05562211b666f9557fe17af3acc297513f2bcc09003f07529e6682803a690afc"
    # independent derivation: SHA-256(tag || data) mod q
    want = int.from_bytes(hashlib.sha256(b"BORG-H1abc").digest(), "big") % ED.order
    assert ED.h1(b"abc") == want
    assert ED.h1(b"abc") != ED.h2(b"abc")


def test_seeded_sampling_pinned():
    rng = make_rng(0)
    got = [ED.scalar_hex(ED.random_scalar(rng)) for _ in range(3)]
    assert got == [
        "0474ee238133287637ebdcd9e87a1613e443df789558867f5ba91faf7a024204",
        "04b3e865e6f4590b9a164106cf6a659eb4862b21fb97d43588561712e8e5216a",
        "0a90f9c3af19922ad9b8a714e61a441c12e0c8b2bad640fb19488dec4f65d4d9",
    ]


def test_frame_is_unambiguous():
    assert frame(b"ab", b"c") != frame(b"a", b"bc")
    assert frame(1) == b"\x00\x00\x00\x04\x00\x00\x00\x01"
    assert frame(ED.generator)[4:] == ED.generator.encode()


def test_registry():
    assert set(available_groups()) >= {"ed25519", "secp224k1"}
    assert get_group() is ED
    with pytest.raises(KeyError):
        get_group("p256-nope")
