"""``lopsim`` command line.

Exit codes: 0 success, 1 a check failed, 2 bad input.  JSON output has sorted
keys and floats written with 17 significant digits, so equal inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import cxample, distill, monotones, suites
from . import protocols_std as std
from .lop import SystemLayout
from .protocol import ProtocolTree, execute
from .qcore import TOL, QuantumChannel, matrix_to_json, state_from_json, state_to_json

EXIT_OK, EXIT_CHECK, EXIT_INPUT = 0, 1, 2
DEFAULT_SEED = 0


class InputError(Exception):
    """Unreadable or malformed user input; maps to exit code 2."""


# -- deterministic JSON ---------------------------------------------------------------


def _encode(obj, indent: int, level: int) -> str:
    pad, inner = " " * (indent * level), " " * (indent * (level + 1))
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = ",\n".join(f"{inner}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in items)
        return "{\n" + body + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        body = ",\n".join(inner + _encode(v, indent, level + 1) for v in seq)
        return "[\n" + body + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# -- input -----------------------------------------------------------------------------


def load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc


def _load_state(path: str, layout_path: str | None):
    """State file: a matrix object, optionally carrying its ``layout``."""
    obj = load_json(path)
    if not isinstance(obj, dict):
        raise InputError(f"{path}: state file must be a JSON object")
    try:
        rho = state_from_json(obj.get("state", obj))
        if layout_path is not None:
            layout = SystemLayout.from_json(load_json(layout_path))
        elif "layout" in obj:
            layout = SystemLayout.from_json(obj["layout"])
        else:
            raise InputError(f"{path}: no layout given (add a 'layout' key or --layout)")
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if layout.total_dim != rho.shape[0]:
        raise InputError(f"{path}: layout dimension {layout.total_dim} does not match state "
                         f"dimension {rho.shape[0]}")
    return rho, layout


def _positive(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return x


# -- subcommands -----------------------------------------------------------------------


def cmd_run(args) -> int:
    tree_obj = load_json(args.protocol)
    try:
        # files written by ``prepare --protocol-out`` wrap the tree with its layout
        if isinstance(tree_obj, dict) and "tree" in tree_obj:
            tree_obj = tree_obj["tree"]
        tree = ProtocolTree.from_json(tree_obj)
    except ValueError as exc:
        raise InputError(f"{args.protocol}: {exc}") from exc
    rho, layout = _load_state(args.state, args.layout)
    try:
        if args.mode == "average":
            out, lay = execute(tree, rho, layout)
            report = {"mode": "average", "state": state_to_json(out), "layout": lay.to_json()}
            total = float(np.real(np.trace(out)))
        elif args.mode == "sampled":
            path = execute(tree, rho, layout, mode="sampled", seed=args.seed)
            report = {"mode": "sampled", "seed": args.seed, "path": path.to_json()}
            total = 1.0
        else:
            rep = execute(tree, rho, layout, mode="all_branches", prune=args.prune)
            report = {"mode": "all_branches", **rep.to_json()}
            total = rep.total_probability + sum(p for _, p in rep.pruned)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    report["conserved"] = abs(total - 1) <= args.tol
    _emit(dumps(report), args.out)
    return EXIT_OK if report["conserved"] else EXIT_CHECK


def cmd_prepare(args) -> int:
    try:
        if args.target == "ghz":
            proto = std.prepare_ghz(args.n, args.topology)
            target = std.ghz_vector(args.n)
        else:
            proto = std.prepare_w(args.n, args.topology)
            target = std.w_vector(args.n)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    state = proto.output_state()
    fidelity = float(np.real(target.conj() @ state @ target))
    report = {
        "target": args.target,
        "n": args.n,
        "topology": args.topology,
        "ancillas": {k: matrix_to_json(np.reshape(v, (-1, 1))) for k, v in proto.ancillas.items()},
        "layout": proto.output_layout().to_json(),
        "state": state_to_json(state),
        "fidelity": fidelity,
    }
    if args.protocol_out:
        Path(args.protocol_out).write_text(dumps({"layout": proto.layout.to_json(),
                                                  "tree": proto.tree.to_json()}))
    _emit(dumps(report), args.out)
    return EXIT_OK if fidelity >= 1 - args.tol else EXIT_CHECK


def cmd_monotone(args) -> int:
    rho, layout = _load_state(args.state, args.layout)
    side = args.side.split(",") if args.side else None
    if side and any(n not in layout for n in side):
        raise InputError(f"--side names unknown registers: {args.side}")
    rep = monotones.monotone_report(rho, layout, side)
    wire, ent = monotones.eq2_terms(rho, layout) if layout.wire_names else (0.0, None)
    out = rep.to_json()
    out["eq2_terms"] = {"wire_coherence": wire, "entanglement": ent}
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_distill(args) -> int:
    try:
        params = distill.DistillParams(args.p0, args.q, args.trials, args.steps, args.seed,
                                       args.drop_negative)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    trace = distill.exact_trace(params) if args.exact else distill.run_chain(params)
    _emit(trace.to_csv(), args.out)
    if args.out is not None:
        summary = {"seed": params.seed, "steps": params.steps, "trials": params.trials,
                   "final_mean_p_half": float(trace.mean_p_half[-1]),
                   "plateau": trace.plateau(), "final_survivors": float(trace.survivors[-1])}
        sys.stdout.write(dumps(summary))
    return EXIT_OK


def _dephasing(d: int) -> QuantumChannel:
    return QuantumChannel(tuple(np.diag(np.eye(d)[i]).astype(complex) for i in range(d)))


def cmd_counterexample(args) -> int:
    ch = _dephasing(3) if args.control else cxample.build_counterexample()
    cert = cxample.certify_not_lop(ch)
    out = cert.to_json()
    out["channel"] = "dephasing-control" if args.control else "counterexample"
    _emit(dumps(out), args.out)
    return EXIT_OK if cert.verdict else EXIT_CHECK


def cmd_verify(args) -> int:
    names = list(suites.SUITES) if args.suite == "all" else [args.suite]
    reports = []
    for name in names:
        fn = suites.SUITES[name]
        reports.append(fn(args.seed) if args.count is None else fn(args.seed, args.count))
    _emit(dumps(reports[0] if len(reports) == 1 else reports), args.out)
    return EXIT_OK if all(r["passed"] for r in reports) else EXIT_CHECK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lopsim", description="Wire-protocol simulator and checks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a protocol file on a state file")
    r.add_argument("--protocol", required=True, help="protocol tree JSON")
    r.add_argument("--state", required=True, help="state JSON (matrix object, optional 'layout')")
    r.add_argument("--layout", help="layout JSON, overrides the one in the state file")
    r.add_argument("--mode", choices=["all_branches", "average", "sampled"], default="all_branches")
    r.add_argument("--seed", type=int, default=DEFAULT_SEED)
    r.add_argument("--prune", type=float, default=1e-14)
    r.add_argument("--tol", type=_positive, default=TOL)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("prepare", help="prepare GHZ or W states from coherent wires")
    pr.add_argument("--target", choices=["ghz", "w"], required=True)
    pr.add_argument("--n", type=int, default=3)
    pr.add_argument("--topology", choices=["single_wire", "chain", "two_wire"], default="single_wire")
    pr.add_argument("--protocol-out", help="also write the protocol tree and its layout here")
    pr.add_argument("--tol", type=_positive, default=TOL)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_prepare)

    m = sub.add_parser("monotone", help="coherence and entanglement quantifiers of a state")
    m.add_argument("--state", required=True)
    m.add_argument("--layout")
    m.add_argument("--side", help="comma-separated registers for the entanglement cut")
    m.add_argument("--out")
    m.set_defaults(func=cmd_monotone)

    d = sub.add_parser("distill", help="Monte Carlo of coherence pumping, CSV output")
    d.add_argument("--p0", type=float, default=0.02)
    d.add_argument("--q", type=float, default=0.02)
    d.add_argument("--trials", type=int, default=10_000)
    d.add_argument("--steps", type=int, default=5_000)
    d.add_argument("--seed", type=int, default=DEFAULT_SEED)
    d.add_argument("--drop-negative", action=argparse.BooleanOptionalAction, default=True)
    d.add_argument("--exact", action="store_true", help="noise-free lattice recursion instead of sampling")
    d.add_argument("--out")
    d.set_defaults(func=cmd_distill)

    c = sub.add_parser("counterexample", help="certificate for the qutrit counterexample")
    c.add_argument("--control", action="store_true", help="certify the dephasing channel instead")
    c.add_argument("--out")
    c.set_defaults(func=cmd_counterexample)

    v = sub.add_parser("verify", help="run a named verification suite")
    v.add_argument("--suite", choices=[*suites.SUITES, "all"], required=True)
    v.add_argument("--seed", type=int, default=DEFAULT_SEED)
    v.add_argument("--count", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"lopsim: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
