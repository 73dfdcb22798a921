from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sibauth.algebra import make_rng
from sibauth.hierarchy import build_hierarchy
from sibauth.sib_model import (SLIDING_WINDOW, FreshnessConfig, OversizeSib1, RegistryError,
                               broadcast_delay, build_authenticated_sib1, expected_packets_cyclic,
                               fragment_count, fragment_plan, freshness_check, load_registry,
                               monte_carlo_packets, parse_authenticated_sib1, published_checks,
                               render_csv, render_text, scheme_report, simulate_reassembly)
from sibauth.thresh_sign import SigningGroup, mverify


def test_fragment_counts():
    assert fragment_count(3732) == 13
    assert fragment_count(0) == 0
    assert fragment_count(290) == 1
    assert fragment_count(291) == 2
    with pytest.raises(ValueError):
        fragment_count(10, 0)


@pytest.mark.parametrize("F", range(1, 30))
def test_cyclic_expectation_matches_enumeration(F):
    best, expected, worst = expected_packets_cyclic(F)
    assert (best, worst) == (F, 2 * F - 1)
    assert expected == oracles.expected_packets(F)
    for s in range(1, F + 1):
        assert simulate_reassembly(F, s) == oracles.packets_heard(F, s)


def test_known_expectations():
    assert expected_packets_cyclic(13) == (13, Fraction(247, 13), 25)
    assert expected_packets_cyclic(13)[1] == 19
    assert expected_packets_cyclic(2)[1] == Fraction(5, 2)


def test_sliding_window_never_worse():
    for F in range(1, 15):
        for s in range(1, F + 1):
            assert simulate_reassembly(F, s, SLIDING_WINDOW) == F
            assert simulate_reassembly(F, s) >= F


def test_monte_carlo_close_to_closed_form():
    mean, se = monte_carlo_packets(5, 20000, make_rng(3))
    assert abs(mean - float(expected_packets_cyclic(5)[1])) < 5 * se + 1e-9


def test_broadcast_delay_bounds():
    assert broadcast_delay(1, 20) == 0
    assert broadcast_delay(13, 20) == 240 and broadcast_delay(13, 160) == 1920
    with pytest.raises(ValueError):
        broadcast_delay(3, 10)
    with pytest.raises(ValueError):
        broadcast_delay(0)


@settings(max_examples=50)
@given(st.integers(0, 20000), st.integers(1, 400))
def test_fragment_plan_properties(payload, free):
    plan = fragment_plan(payload, free)
    assert plan.fragments * free >= payload
    assert plan.fragments == 0 or (plan.fragments - 1) * free < payload
    if plan.fragments:
        assert plan.best <= plan.expected <= plan.worst


def test_freshness_window_inclusive():
    cfg = FreshnessConfig.load()
    assert cfg.window_ms == 20 + 3 + 10 + 1
    assert freshness_check(100, 34, 134)
    assert not freshness_check(100, 34, 135)
    assert not freshness_check(100, 34, 99)


def test_registry_and_report():
    profiles, meta = load_registry()
    assert meta["sib1_max_bytes"] == 372
    rows = {r.scheme: r for r in scheme_report(profiles)}
    assert rows["ML-DSA single-chain"].fragments == 13
    assert rows["BORG (2,3) threshold"].piggyback
    assert rows["BORG (2,3) threshold"].sib1_total == 223
    ml2 = rows["ML-DSA 2-level certificate"]
    assert ml2.fragments == 35 and ml2.flags
    text = render_text(scheme_report(profiles))
    assert "ML-DSA single-chain" in text and "flags:" in text
    assert render_csv(scheme_report(profiles)).startswith("scheme,overhead")
    assert all(exp == got for _, exp, got in published_checks(profiles))


def test_registry_errors(tmp_path):
    p = tmp_path / "r.json"
    p.write_text("{nope")
    with pytest.raises(RegistryError):
        load_registry(p)
    p.write_text('{"version": 1, "profiles": [{"name": "x"}]}')
    with pytest.raises(RegistryError):
        load_registry(p)


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_authenticated_sib1_round_trip(depth):
    rng = make_rng(depth)
    path = [b"L%07d" % l for l in range(depth)]
    master, _, leaf = build_hierarchy(path, 2, 3, rng)
    sg = SigningGroup(leaf.shares, leaf.share_pks)
    sg.preprocess(1, rng)
    base = bytes(range(79))
    sig = sg.sign(base)
    msg = build_authenticated_sib1(base, sig, leaf.chain, leaf.ids)
    assert msg.total == 79 + 64 + depth * 40
    b, s, chain, ids = parse_authenticated_sib1(msg.to_bytes(), depth, master.pk)
    assert b == base and chain == leaf.chain and ids == leaf.ids
    assert mverify(b, ids, chain, s)


def test_oversize_sib1():
    rng = make_rng(1)
    _, _, leaf = build_hierarchy([b"AMF-0001", b"GNB-GRP1"], 1, 1, rng)
    sg = SigningGroup(leaf.shares, leaf.share_pks)
    sg.preprocess(1, rng)
    base = bytes(300)
    with pytest.raises(OversizeSib1):
        build_authenticated_sib1(base, sg.sign(base), leaf.chain, leaf.ids)
