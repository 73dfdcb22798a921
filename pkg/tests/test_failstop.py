import json

import pytest

from sibauth.algebra import get_group, make_rng
from sibauth.failstop import (ForgeryProof, IncompleteNonceReveal, MalformedProof, NotAForgery,
                              PofVerdict, SignatureHistory, UnknownMessageIndex, pof, pof_verify,
                              recompute_R)
from sibauth.hierarchy import build_hierarchy, reconstruct_secret
from sibauth.thresh_sign import SigningGroup, ThresholdSignature, challenge, mverify

G = get_group()


@pytest.fixture
def world():
    rng = make_rng(21)
    master, parents, leaf = build_hierarchy([b"AMF-0001", b"GNB-GRP1"], 2, 3, rng)
    sg = SigningGroup(leaf.shares, leaf.share_pks)
    sg.preprocess(4, rng)
    hist = SignatureHistory()
    sigs = {}
    for k in range(3):
        m = b"sib-%d" % k
        sigs[m] = sg.sign(m)
        hist.append(m, sigs[m], k)
    return dict(rng=rng, parents=parents, leaf=leaf, sg=sg, hist=hist, sigs=sigs)


def reveals_for(w, j, signers):
    return {i: w["sg"].stores[i].reveal(j) for i in signers}


def forge(w, m):
    sk = reconstruct_secret(w["leaf"].shares)
    k = G.random_scalar(w["rng"])
    R = G.g_exp(k)
    h = challenge(R, w["leaf"].chain.last, m)
    return ThresholdSignature(R, (k + sk * h) % G.order, w["sigs"][m].j, ())


def verify_args(w):
    _, _, amf_sk, _ = w["parents"][-1]
    leaf = w["leaf"]
    return (leaf.level_secret.alpha, amf_sk, leaf.ids, leaf.chain, leaf.share_pks)


def test_honest_signature_is_not_a_forgery(world):
    m = b"sib-1"
    sig = world["sigs"][m]
    res = pof(sig, m, world["hist"], reveals_for(world, sig.j, sig.signer_set), world["leaf"].ids)
    assert isinstance(res, NotAForgery) and not res
    verdict = pof_verify(*verify_args(world), m, sig, res)
    assert verdict is PofVerdict.NOT_A_FORGERY and not verdict


def test_forgery_detected_and_confirmed(world):
    m = b"sib-2"
    forged = forge(world, m)
    assert mverify(m, world["leaf"].ids, world["leaf"].chain, forged)
    j = world["sigs"][m].j
    proof = pof(forged, m, world["hist"], reveals_for(world, j, (1, 2)), world["leaf"].ids)
    assert isinstance(proof, ForgeryProof)
    lists = world["sg"].bulletin.lists(world["sg"].context)
    verdict = pof_verify(*verify_args(world), m, forged, proof, lists)
    assert verdict is PofVerdict.CONFIRMED and verdict


def test_recompute_matches_honest_R(world):
    m = b"sib-0"
    sig = world["sigs"][m]
    R = recompute_R(G, world["leaf"].ids, m, sig.j, sig.signer_set,
                    reveals_for(world, sig.j, sig.signer_set))
    assert R == sig.R


def test_wrong_parent_material_is_key_mismatch(world):
    m = b"sib-2"
    forged = forge(world, m)
    j = world["sigs"][m].j
    proof = pof(forged, m, world["hist"], reveals_for(world, j, (1, 2)), world["leaf"].ids)
    alpha, amf_sk, ids, chain, pks = verify_args(world)
    assert pof_verify(alpha + 1, amf_sk, ids, chain, pks, m, forged, proof) is PofVerdict.KEY_MISMATCH
    assert pof_verify(alpha, amf_sk + 1, ids, chain, pks, m, forged, proof) is PofVerdict.KEY_MISMATCH


def test_fabricated_nonces_fail_commitment_check(world):
    m = b"sib-2"
    forged = forge(world, m)
    fake = {1: (5, 6), 2: (7, 8)}
    proof = pof(forged, m, world["hist"], fake, world["leaf"].ids)
    lists = world["sg"].bulletin.lists(world["sg"].context)
    verdict = pof_verify(*verify_args(world), m, forged, proof, lists)
    assert verdict is PofVerdict.COMMITMENT_MISMATCH


def test_proof_claiming_honest_R_is_rejected(world):
    m = b"sib-0"
    sig = world["sigs"][m]
    rv = reveals_for(world, sig.j, sig.signer_set)
    proof = ForgeryProof(sig.j, sig.signer_set, tuple(rv[i][0] for i in sig.signer_set),
                         tuple(rv[i][1] for i in sig.signer_set))
    assert pof_verify(*verify_args(world), m, sig, proof) is PofVerdict.R_MATCHES


def test_unknown_message_and_incomplete_reveal(world):
    sig = world["sigs"][b"sib-0"]
    with pytest.raises(UnknownMessageIndex):
        pof(sig, b"never", world["hist"], {}, world["leaf"].ids)
    with pytest.raises(IncompleteNonceReveal):
        pof(sig, b"sib-0", world["hist"], {1: (1, 2)}, world["leaf"].ids)


def test_proof_serialisation(world):
    m = b"sib-2"
    forged = forge(world, m)
    j = world["sigs"][m].j
    proof = pof(forged, m, world["hist"], reveals_for(world, j, (1, 2)), world["leaf"].ids)
    back = ForgeryProof.from_dict(json.loads(proof.dumps(G)))
    assert back == proof
    with pytest.raises(MalformedProof):
        ForgeryProof.from_dict({"version": 9})
    with pytest.raises(MalformedProof):
        ForgeryProof(1, (1, 2), (1,), (2, 3))


def test_history_rejects_duplicate_slot(world):
    sig = world["sigs"][b"sib-0"]
    with pytest.raises(ValueError):
        world["hist"].append(b"other", sig)
    assert len(world["hist"]) == 3 and sig.j in world["hist"]
