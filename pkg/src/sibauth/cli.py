"""``sibauth`` command line.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 below threshold, 5 verification or
detection failure, 6 malformed data.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

from . import audit, sib_model, simnet
from .algebra import InvalidEncoding, get_group, make_rng
from .hierarchy import (GroupKeyChain, HierarchyError, IdentityVector, InvalidThreshold, KeyShare,
                        build_hierarchy, dumps_key, parent_to_dict, share_from_dict, share_to_dict)
from .thresh_sign import (BelowThreshold, Bulletin, NonceStore, SigningError, SigningGroup,
                          ThresholdSignature, mverify)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_THRESHOLD = 4
EXIT_VERIFY = 5
EXIT_DATA = 6

HOST_DISCLAIMER = "timings measured on this host; absolute values are hardware-dependent"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out(args, result: dict, lines: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    else:
        for line in lines:
            print(line)


def _indices(text: str) -> List[int]:
    try:
        return sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}")


def _read_json(path: Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}")
    try:
        return json.loads(text)
    except ValueError as exc:
        raise CliError(EXIT_DATA, f"{path}: not valid JSON ({exc})")


def _write(path: Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror}")


# -- keygen ------------------------------------------------------------------------

def cmd_keygen(args) -> int:
    if not 1 <= args.t <= args.n:
        raise CliError(EXIT_USAGE, f"invalid threshold: need 1 <= t <= n, got t={args.t}, n={args.n}")
    if args.depth < 1:
        raise CliError(EXIT_USAGE, "depth must be at least 1")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out}: {exc.strerror}")
    group = get_group(args.group)
    rng = make_rng(args.seed)
    path = [f"CORE{l:04d}".encode() for l in range(1, args.depth - 1)]
    if args.depth >= 2:
        path.append(b"AMF-0001")
    path.append(b"GNB-GRP1")
    master, parents, leaf = build_hierarchy(path, args.t, args.n, rng, group)

    files = []
    # each parent file records the alpha of the child it extracted
    child_alpha = [lvl[3].alpha for lvl in parents[1:]] + [leaf.level_secret.alpha]
    for lvl, (ids, chain, sk, secret) in enumerate(parents):
        if lvl == 0:
            kind, name = "master", "master.json"
        elif lvl == len(parents) - 1:
            kind, name = "amf", "amf.json"
        else:
            kind, name = "intermediate", f"core-{lvl}.json"
        child = path[lvl].hex()
        extra = None
        if lvl == len(parents) - 1:
            extra = {"child_t": args.t, "child_n": args.n,
                     "share_pks": {str(i): pk.hex() for i, pk in sorted(leaf.share_pks.items())}}
        d = parent_to_dict(kind, ids, chain, sk, None if secret is None else secret.alpha,
                           {child: child_alpha[lvl]}, group, extra)
        files.append((name, dumps_key(d)))
    for share in leaf.shares:
        files.append((f"share-{share.index}.json", dumps_key(share_to_dict(share))))
    for name, text in files:
        _write(out / name, text)
    names = [n for n, _ in files]
    _out(args, {"out": str(out), "files": names},
         [f"wrote {len(names)} key files to {out}"] + [f"  {n}" for n in names])
    return EXIT_OK


# -- sign / verify -----------------------------------------------------------------

def _load_shares(keys: Path) -> List[KeyShare]:
    paths = sorted(keys.glob("share-*.json"))
    if not paths:
        raise CliError(EXIT_IO, f"no share files in {keys}")
    try:
        return [share_from_dict(_read_json(p)) for p in paths]
    except (HierarchyError, KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"malformed share file: {exc}")


def _load_signing_group(keys: Path) -> SigningGroup:
    shares = _load_shares(keys)
    bulletin_path = keys / "bulletin.jsonl"
    bulletin = Bulletin.load(bulletin_path) if bulletin_path.exists() else Bulletin(bulletin_path)
    sg = SigningGroup(shares, {s.index: s.pk_share for s in shares}, bulletin)
    state_path = keys / "state.json"
    if state_path.exists():
        state = _read_json(state_path)
        sg.next_slot, sg._filled = int(state["next_slot"]), int(state["filled"])
        for s in shares:
            p = keys / f"nonces-{s.index}.json"
            if p.exists():
                sg.stores[s.index] = NonceStore.from_dict(_read_json(p))
    return sg


def _save_signing_state(keys: Path, sg: SigningGroup) -> None:
    for i, store in sg.stores.items():
        _write(keys / f"nonces-{i}.json", json.dumps(store.to_dict(), indent=2) + "\n")
    _write(keys / "state.json", json.dumps({"next_slot": sg.next_slot, "filled": sg._filled}) + "\n")


def signature_to_dict(sig: ThresholdSignature, ids: IdentityVector, chain: GroupKeyChain) -> dict:
    g = chain.group
    return {"version": 1, "group": g.name, "R": sig.R.hex(), "z": g.scalar_hex(sig.z),
            "j": sig.j, "signer_set": list(sig.signer_set), "ids": ids.to_hex(),
            "chain": chain.to_hex()}


def signature_from_dict(d: dict):
    g = get_group(d["group"])
    sig = ThresholdSignature(g.element_from_hex(d["R"]), g.scalar_from_hex(d["z"]), int(d["j"]),
                             tuple(d["signer_set"]))
    return sig, IdentityVector.from_hex(d["ids"]), GroupKeyChain.from_hex(d["chain"], g)


def _read_message(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror}")


def cmd_sign(args) -> int:
    keys = Path(args.keys)
    message = _read_message(args.message)
    sg = _load_signing_group(keys)
    signers = args.signers
    if len(signers) < sg.t:
        raise CliError(EXIT_THRESHOLD, f"{len(signers)} signers, threshold is {sg.t}")
    missing = [i for i in signers if i not in sg.shares]
    if missing:
        raise CliError(EXIT_USAGE, f"no share file for participants {missing}")
    if sg.next_slot > sg._filled:
        rng = make_rng(None if args.seed is None else args.seed * 1_000_003 + sg._filled)
        sg.preprocess(args.batch, rng)
    try:
        sig = sg.sign(message, signers)
    except BelowThreshold as exc:
        raise CliError(EXIT_THRESHOLD, str(exc))
    _save_signing_state(keys, sg)
    d = signature_to_dict(sig, sg.ids, sg.chain)
    _write(Path(args.out), json.dumps(d, indent=2) + "\n")
    ok = sg.verify(message, sig)
    _out(args, {"signature": d, "verdict": "accepted" if ok else "rejected"},
         [f"signature written to {args.out} (slot {sig.j}, signers {list(sig.signer_set)})",
          "accepted" if ok else "rejected"])
    return EXIT_OK if ok else EXIT_VERIFY


def _master_pk(path: Path):
    d = _read_json(path)
    try:
        g = get_group(d["group"])
        return g.element_from_hex(d["chain"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"{path}: no master public key ({exc})")


def cmd_verify(args) -> int:
    message = _read_message(args.message)
    raw = _read_json(args.sig)
    master_file = Path(args.master) if args.master else Path(args.keys) / "master.json"
    master = _master_pk(master_file)
    try:
        sig, ids, chain = signature_from_dict(raw)
        ok = chain.master == master and mverify(message, ids, chain, sig)
    except (InvalidEncoding, HierarchyError, KeyError, TypeError, ValueError):
        ok = False
    verdict = "accepted" if ok else "rejected"
    _out(args, {"verdict": verdict}, [verdict])
    return EXIT_OK if ok else EXIT_VERIFY


# -- fragmentation -----------------------------------------------------------------

def cmd_frag_analysis(args) -> int:
    try:
        profiles, meta = sib_model.load_registry(args.registry)
    except sib_model.RegistryError as exc:
        raise CliError(EXIT_DATA, str(exc))
    if args.scheme:
        profiles = [p for p in profiles if p.key in args.scheme]
    free = args.free if args.free is not None else meta.get("free_bytes_per_sib1", 290)
    rows = sib_model.scheme_report(profiles, args.base, free)
    result = {"rows": sib_model.rows_as_dicts(rows), "base": args.base, "free": free}
    if args.csv:
        lines = [sib_model.render_csv(rows).rstrip("\n")]
    else:
        lines = [sib_model.render_text(rows).rstrip("\n"), ""]
        lines += [f"{r.scheme}: {r.fragments} fragments" for r in rows if not r.piggyback]
        lines += [f"{r.scheme}: piggybacked in one {r.sib1_total}-B SIB1" for r in rows if r.piggyback]
    code = EXIT_OK
    if args.check_paper:
        checks = sib_model.published_checks(profiles, args.base, free)
        result["checks"] = [{"name": n, "expected": str(e), "actual": str(a), "ok": e == a}
                            for n, e, a in checks]
        lines.append("")
        for n, e, a in checks:
            lines.append(f"{'PASS' if e == a else 'FAIL'}  {n}: expected {e}, got {a}")
        if not all(e == a for _, e, a in checks):
            code = EXIT_VERIFY
    _out(args, result, lines)
    return code


# -- forgery demo ------------------------------------------------------------------

def _scenario_config(args, **over) -> simnet.ScenarioConfig:
    try:
        cfg = simnet.ScenarioConfig(t=args.t, n=args.n, depth=args.depth,
                                    broadcasts=args.broadcasts,
                                    seed=0 if args.seed is None else args.seed, **over)
        cfg.validate()
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    return cfg


def cmd_forgery_demo(args) -> int:
    cfg = _scenario_config(args)
    tamper = simnet.TamperSpec(args.tamper, args.broadcast)
    tr, report = simnet.run_forgery_scenario(cfg, tamper)
    if args.proof_out and report.proof:
        _write(Path(args.proof_out), json.dumps(report.proof, indent=2) + "\n")
    lines = []
    if report.proof:
        lines.append("proof of forgery:")
        lines += ["  " + l for l in json.dumps(report.proof, indent=2).splitlines()]
    lines.append(report.failure or report.verdict)
    if report.halted:
        lines.append(f"system halted; {report.refused_after_halt} later signing request(s) refused")
    _out(args, asdict(report), lines)
    expected = {"R": "forgery-confirmed", "z": "rejected-by-verifier", "none": "not-a-forgery"}
    return EXIT_OK if report.verdict == expected[args.tamper] else EXIT_VERIFY


# -- audit -------------------------------------------------------------------------

def cmd_audit_verify(args) -> int:
    replicas = []
    for p in args.logs:
        try:
            replicas.append(audit.read_log(Path(p)))
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {p}: {exc.strerror}")
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(EXIT_DATA, f"{p}: malformed audit log ({exc})")
    if len(replicas) < 2:
        raise CliError(EXIT_USAGE, "audit-verify needs at least two replica files")
    pk = bytes.fromhex(args.public_key) if args.public_key else None
    rep = audit.audit_cross_validate(replicas, pk)
    _out(args, rep.to_dict(), rep.lines())
    return EXIT_OK if rep.clean else EXIT_VERIFY


# -- bench -------------------------------------------------------------------------

def _time_ms(fn, *a) -> float:
    t0 = time.perf_counter()
    fn(*a)
    return (time.perf_counter() - t0) * 1000


def bench_rows(t: int, n: int, iters: int, seed: Optional[int], depth: int = 2) -> List[dict]:
    """Sign/verify/preprocess medians for the centralized, precomputed and inline setups."""
    rng = make_rng(seed)
    path = ([f"CORE{l:04d}".encode() for l in range(1, depth - 1)] + [b"AMF-0001", b"GNB-GRP1"])[-depth:]
    rows = []
    for label, tt, nn, inline in (("centralized (1,1)", 1, 1, False),
                                  (f"({t},{n})* precomputed", t, n, False),
                                  (f"({t},{n}) inline", t, n, True)):
        _, _, leaf = build_hierarchy(path, tt, nn, rng)
        sg = SigningGroup(leaf.shares, leaf.share_pks)
        pre = []
        if not inline:
            for _ in range(iters):
                pre.append(_time_ms(sg.preprocess, 1, rng))
        sign, verify = [], []
        for k in range(iters):
            m = b"bench-%d" % k
            t0 = time.perf_counter()
            sig = sg.sign(m, None, rng if inline else None)
            sign.append((time.perf_counter() - t0) * 1000)
            verify.append(_time_ms(sg.verify, m, sig))
        rows.append({
            "setup": label,
            "preprocess_ms": round(statistics.median(pre), 3) if pre else None,
            "sign_ms": round(statistics.median(sign), 3),
            "verify_ms": round(statistics.median(verify), 3),
        })
    return rows


def cmd_bench(args) -> int:
    if not 1 <= args.t <= args.n:
        raise CliError(EXIT_USAGE, f"invalid threshold: t={args.t}, n={args.n}")
    rows = bench_rows(args.t, args.n, args.iters, args.seed, args.depth)
    lines = [f"# {HOST_DISCLAIMER}", f"{'Setup':<22}{'Preprocess(ms)':>16}{'Sign(ms)':>12}{'Verify(ms)':>12}"]
    for r in rows:
        pre = "-" if r["preprocess_ms"] is None else f"{r['preprocess_ms']:.3f}"
        lines.append(f"{r['setup']:<22}{pre:>16}{r['sign_ms']:>12.3f}{r['verify_ms']:>12.3f}")
    _out(args, {"rows": rows, "note": HOST_DISCLAIMER}, lines)
    return EXIT_OK


# -- simulate ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _scenario_config(args, timing=args.timing, audit_dir=args.audit_dir,
                           link_latency_ms=args.link_latency)
    report = None
    if args.scenario == "bootstrap":
        tr = simnet.run_bootstrap_scenario(cfg)
    elif args.scenario == "unavailable":
        if not set(args.offline) <= set(range(1, cfg.n + 1)):
            raise CliError(EXIT_USAGE, "offline indices must be within 1..n")
        tr = simnet.run_unavailability_scenario(cfg, args.offline)
    else:
        tr, report = simnet.run_forgery_scenario(cfg, simnet.TamperSpec(args.tamper, args.broadcast))
    if args.out:
        tr.write(Path(args.out))
    s = tr.summary
    lines = [f"{k}: {v}" for k, v in s.items() if k not in ("halt", "measured_ms")]
    for k, v in tr.breakdown_ms.items():
        lines.append(f"  {k:<22}{v:>10.3f} ms")
    if report is not None:
        lines.append(f"verdict: {report.failure or report.verdict}")
    _out(args, dict(s, breakdown_ms=tr.breakdown_ms), lines)
    ok = s["rejected"] == 0
    if args.scenario == "forgery":
        ok = ok and report.failure is None
    return EXIT_OK if ok else EXIT_VERIFY


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=None, help="deterministic randomness")

    p = argparse.ArgumentParser(prog="sibauth", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", parents=[common], help="generate a key hierarchy")
    k.add_argument("--t", type=int, required=True)
    k.add_argument("--n", type=int, required=True)
    k.add_argument("--depth", type=int, default=2)
    k.add_argument("--group", default="ed25519", choices=["ed25519", "secp224k1"])
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_keygen)

    s = sub.add_parser("sign", parents=[common], help="threshold-sign a message file")
    s.add_argument("--keys", required=True)
    s.add_argument("--message", required=True)
    s.add_argument("--signers", type=_indices, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--batch", type=int, default=8, help="slots to preprocess when empty")
    s.set_defaults(func=cmd_sign)

    v = sub.add_parser("verify", parents=[common], help="verify a signature file")
    v.add_argument("--sig", required=True)
    v.add_argument("--message", required=True)
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--keys", help="key directory holding master.json")
    src.add_argument("--master", help="master key file")
    v.set_defaults(func=cmd_verify)

    f = sub.add_parser("frag-analysis", parents=[common], help="SIB1 size and fragmentation report")
    f.add_argument("--registry", default=None)
    f.add_argument("--base", type=int, default=79)
    f.add_argument("--free", type=int, default=None)
    f.add_argument("--scheme", action="append")
    f.add_argument("--csv", action="store_true")
    f.add_argument("--check-paper", action="store_true",
                   help="assert the published fragmentation and size figures")
    f.set_defaults(func=cmd_frag_analysis)

    def scenario_flags(x):
        x.add_argument("--t", type=int, default=2)
        x.add_argument("--n", type=int, default=3)
        x.add_argument("--depth", type=int, default=2)
        x.add_argument("--broadcasts", type=int, default=5)
        x.add_argument("--tamper", choices=simnet.TAMPER_TARGETS, default="R")
        x.add_argument("--broadcast", type=int, default=1, help="broadcast the tamper targets")

    fd = sub.add_parser("forgery-demo", parents=[common], help="run a forgery-detection demo")
    scenario_flags(fd)
    fd.add_argument("--proof-out", default=None)
    fd.set_defaults(func=cmd_forgery_demo)

    a = sub.add_parser("audit-verify", parents=[common], help="cross-validate audit log replicas")
    a.add_argument("logs", nargs="+")
    a.add_argument("--public-key", default=None, help="hex audit public key")
    a.set_defaults(func=cmd_audit_verify)

    b = sub.add_parser("bench", parents=[common], help="sign/verify timings")
    b.add_argument("--t", type=int, default=2)
    b.add_argument("--n", type=int, default=3)
    b.add_argument("--depth", type=int, default=2)
    b.add_argument("--iters", type=int, default=50)
    b.set_defaults(func=cmd_bench)

    sm = sub.add_parser("simulate", parents=[common], help="run a network scenario")
    sm.add_argument("--scenario", choices=["bootstrap", "forgery", "unavailable"], default="bootstrap")
    scenario_flags(sm)
    sm.add_argument("--offline", type=_indices, default=[])
    sm.add_argument("--link-latency", type=int, default=10)
    sm.add_argument("--timing", choices=["modeled", "measured"], default="modeled")
    sm.add_argument("--audit-dir", default=None)
    sm.add_argument("--out", default=None, help="write the JSON-lines transcript here")
    sm.set_defaults(func=cmd_simulate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"sibauth: error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidThreshold as exc:
        print(f"sibauth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SigningError as exc:
        print(f"sibauth: error: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD if isinstance(exc, BelowThreshold) else EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
