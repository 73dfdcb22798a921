"""Hierarchical identity-based threshold signatures with fail-stop forgery proofs,
plus the SIB1 size model and network simulation built on them."""

from .algebra import Group, GroupElement, available_groups, get_group
from .hierarchy import (GroupKeyChain, IdentityVector, KeyShare, build_hierarchy,
                        chain_public_key, extract, lagrange_coefficients, setup)
from .thresh_sign import (SigningGroup, ThresholdSignature, aggregate, mverify, preprocess,
                          sign_share)
from .failstop import ForgeryProof, NotAForgery, PofVerdict, SignatureHistory, pof, pof_verify

__all__ = [
    "Group", "GroupElement", "available_groups", "get_group",
    "GroupKeyChain", "IdentityVector", "KeyShare", "build_hierarchy", "chain_public_key",
    "extract", "lagrange_coefficients", "setup",
    "SigningGroup", "ThresholdSignature", "aggregate", "mverify", "preprocess", "sign_share",
    "ForgeryProof", "NotAForgery", "PofVerdict", "SignatureHistory", "pof", "pof_verify",
]
__version__ = "0.1.0"
