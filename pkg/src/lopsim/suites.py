"""Seeded verification suites behind ``lopsim verify``.

Each suite returns a plain dict report with the worst error it saw, the
tolerance it was held to, and whether it passed.
"""

from __future__ import annotations

import numpy as np

from . import protocols_std as std
from .lop import SystemLayout, is_cq_state
from .monotones import ent_entropy_pure, rel_ent_coherence
from .protocol import compile_normal_form, execute, translation_distances
from .qcore import QuantumChannel, apply_channel, choi_distance
from .randomized import (
    random_channel,
    random_cq_state,
    random_density,
    random_iqo_channel,
    random_tree,
    random_wire_layout,
)

TOL = 1e-9


def _report(name: str, anchor: str, seed: int, count: int, errors: dict, tol: float | dict = TOL,
            extra: dict | None = None) -> dict:
    """``tol`` is one tolerance for every error series or a per-series dict."""
    worst = {k: float(max(v)) if len(v) else 0.0 for k, v in errors.items()}
    limits = tol if isinstance(tol, dict) else {k: tol for k in worst}
    out = {
        "suite": name,
        "anchor": anchor,
        "seed": seed,
        "count": count,
        "max_errors": worst,
        "tolerance": limits,
        "passed": all(worst[k] < limits[k] for k in worst),
    }
    if extra:
        out.update(extra)
    return out


def bijection(seed: int, count: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    protos = {d: std.round_trip(d) for d in (2, 3, 4)}
    channels = {d: p.channel() for d, p in protos.items()}
    errs = []
    for _ in range(count):
        d = int(rng.integers(2, 5))
        rho = random_density(d, rng=rng)
        errs.append(np.max(np.abs(apply_channel(channels[d], rho) - rho)))
    return _report("bijection", "copy a wire into a correlated quantum register and remove it again",
                   seed, count, {"round_trip": errs})


def phase_loop(seed: int, count: int | None = None, max_rounds: int = 6) -> dict:
    """Success probability from exact branch weights; ``count`` is unused (the grid is fixed)."""
    rng = np.random.default_rng(seed)
    prob_err, out_err = [], []
    for d in (2, 3, 4):
        for m in range(1, max_rounds + 1):
            theta = rng.uniform(0, 2 * np.pi, d)
            proto = std.phase_via_loop(theta, d, m)
            rho = random_density(d, rng=rng)
            prob_err.append(abs(proto.success_probability(rho) - (1 - (1 - 1 / d) ** m)))
            ch = proto.channel(heralded=True)
            out = apply_channel(ch, rho)
            u = np.diag(np.exp(1j * theta))
            out_err.append(np.max(np.abs(out / np.trace(out) - u @ rho @ u.conj().T)))
    return _report("phase-loop", "diagonal unitary by repeat-until-success", seed, 3 * max_rounds,
                   {"success_probability": prob_err, "heralded_output": out_err}, tol=1e-12)


def teleport(seed: int, count: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    choi, branch = [], []
    for _ in range(count):
        dw, dq = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        ch = random_channel(dw * dq, n_kraus=int(rng.integers(1, 3)), rng=rng)
        proto = std.teleport_channel(std.ChannelSpec(ch, dw, dq))
        choi.append(choi_distance(proto.channel(), ch))
        for path, ops in proto.branch_operators().items():
            alpha = path[1]
            branch.append(max(np.max(np.abs(k - ch.kraus[alpha] / dw)) for k in ops))
    return _report("teleport", "any channel from a maximally coherent ancilla wire", seed, count,
                   {"choi": choi, "branch_operator": branch})


def iqo(seed: int, count: int = 100, inputs: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    exact = []
    for _ in range(count):
        ch = random_iqo_channel(2, int(rng.integers(1, 3)), int(rng.integers(1, 4)), rng)
        exact.append(choi_distance(std.iqo_qubit_exact(ch).channel(), ch))
    ch3 = random_iqo_channel(3, 1, 3, rng)
    proto = std.iqo_stochastic(ch3, 3)
    probs = [proto.success_probability(random_density(3, rng=rng)) for _ in range(inputs)]
    heralded = proto.channel(heralded=True)
    scaled = QuantumChannel(tuple(k * np.sqrt(3) for k in heralded.kraus))
    return _report("iqo", "incoherent-quantum operations: exact on qubit wires, heralded with rate 1/d",
                   seed, count,
                   {"qubit_exact_choi": exact,
                    "stochastic_rate": [abs(p - 1 / 3) for p in probs],
                    "stochastic_rate_variance": [float(np.var(probs))],
                    "stochastic_output_choi": [choi_distance(scaled, ch3)]},
                   tol={"qubit_exact_choi": TOL, "stochastic_rate": TOL,
                        "stochastic_rate_variance": 1e-18, "stochastic_output_choi": TOL})


def normal_form(seed: int, count: int = 200) -> dict:
    rng = np.random.default_rng(seed)
    choi, bad = [], []
    for _ in range(count):
        layout = random_wire_layout(rng)
        tree = random_tree(layout, int(rng.integers(1, 6)), rng)
        nf = compile_normal_form(tree, layout)
        rep = nf.verify()
        bad.append(0.0 if rep.ok else 1.0)
        bad.append(0.0 if max(nf.branch_lengths(), default=0) <= layout.wire_dim else 1.0)
        choi.append(nf.choi_distance(tree))
    return _report("normal-form", "every wire protocol as steps of strictly decreasing cut rank",
                   seed, count, {"choi": choi, "structure_violations": bad})


def translate_locc(seed: int, count: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    dist = []
    for _ in range(count):
        layout = random_wire_layout(rng, bipartite=True)
        tree = random_tree(layout, int(rng.integers(1, 5)), rng, parties=[1, 2])
        eta = random_density(layout.wire_dim, rng=rng)
        dist.extend(translation_distances(tree, layout, eta).values())
    return _report("translate-locc", "wire protocols as two-party LOCC with correlated twins",
                   seed, count, {"branch_choi": dist})


def free_state_preservation(seed: int, count: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    bad = []
    for _ in range(count):
        layout = random_wire_layout(rng)
        tree = random_tree(layout, int(rng.integers(1, 5)), rng)
        rho = random_cq_state(layout, rng)
        out, lay = execute(tree, rho, layout)
        bad.append(0.0 if is_cq_state(out, lay) else 1.0)
        for path in execute(tree, rho, layout, mode="all_branches"):
            bad.append(0.0 if is_cq_state(path.state, path.layout) else 1.0)
    return _report("free-state-preservation", "free operations map free states to free states",
                   seed, count, {"violations": bad})


def _wire_coherence(rho, layout: SystemLayout) -> float:
    return rel_ent_coherence(rho, layout) if layout.wire_names else 0.0


def coherence_monotonicity(seed: int, count: int = 1000) -> dict:
    """Wire coherence never grows under random free trees, on average or per outcome."""
    rng = np.random.default_rng(seed)
    det, sel = [], []
    for _ in range(count):
        layout = random_wire_layout(rng)
        tree = random_tree(layout, int(rng.integers(1, 5)), rng)
        rho = random_density(layout.total_dim, rank=int(rng.integers(1, 3)), rng=rng)
        before = rel_ent_coherence(rho, layout)
        out, lay = execute(tree, rho, layout)
        det.append(max(0.0, _wire_coherence(out, lay) - before))
        report = execute(tree, rho, layout, mode="all_branches")
        after = sum(p.probability * _wire_coherence(p.state, p.layout) for p in report)
        sel.append(max(0.0, after - before))
    invariance = []
    for d in (2, 3, 4):
        ch = std.bijection_B(d).channel()
        pair = SystemLayout.of(("W", d, "wire"), ("Q", d, "quantum"))
        for _ in range(10):
            psi = random_density(d, rank=1, rng=rng)
            out = apply_channel(ch, psi)
            invariance.append(abs(rel_ent_coherence(psi) - ent_entropy_pure(out, pair, ["W"])))
    return _report("coherence-monotonicity", "wire coherence cannot be created by free operations",
                   seed, count, {"average": det, "selective": sel, "bijection_invariance": invariance})


SUITES = {
    "bijection": bijection,
    "phase-loop": phase_loop,
    "teleport": teleport,
    "iqo": iqo,
    "normal-form": normal_form,
    "translate-locc": translate_locc,
    "free-state-preservation": free_state_preservation,
}
