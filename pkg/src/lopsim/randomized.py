"""Random instances for property tests and demos: states, channels, IQO channels, trees."""

from __future__ import annotations

import numpy as np
from scipy.stats import unitary_group

from .lop import ElementalOp, SystemLayout, next_layout
from .protocol import ProtocolTree
from .qcore import QuantumChannel


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def random_unitary(d: int, rng=None) -> np.ndarray:
    rng = _rng(rng)
    if d == 1:
        return np.exp(2j * np.pi * rng.random()) * np.ones((1, 1))
    return unitary_group.rvs(d, random_state=rng)


def random_pure(d: int, rng=None) -> np.ndarray:
    rng = _rng(rng)
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_density(d: int, rank: int | None = None, rng=None) -> np.ndarray:
    """Ginibre-distributed mixed state of the given rank (full rank by default)."""
    rng = _rng(rng)
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_isometry(d_in: int, d_out: int, rng=None) -> np.ndarray:
    if d_out < d_in:
        raise ValueError("an isometry cannot shrink the dimension")
    rng = _rng(rng)
    g = rng.normal(size=(d_out, d_in)) + 1j * rng.normal(size=(d_out, d_in))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(d_in: int, d_out: int | None = None, n_kraus: int = 2, rng=None) -> QuantumChannel:
    d_out = d_in if d_out is None else d_out
    v = random_isometry(d_in, d_out * n_kraus, rng)
    return QuantumChannel(tuple(v[a * d_out:(a + 1) * d_out] for a in range(n_kraus)))


def random_iqo_channel(d: int, dq: int, n_groups: int = 2, rng=None) -> QuantumChannel:
    """Random channel on ``wire ⊗ quantum`` whose Kraus operators never create wire coherence.

    Each group draws a wire map and, per wire level, one block of a random
    instrument.  Non-injective maps are split into ``d`` Fourier-phased copies,
    which cancels the cross terms that would otherwise spoil completeness.
    """
    rng = _rng(rng)
    blocks = [random_isometry(dq, dq * n_groups, rng) for _ in range(d)]
    ops = []
    for g in range(n_groups):
        f = rng.integers(0, d, size=d)
        if rng.random() < 0.5:
            f = rng.permutation(d)
        injective = len(set(f.tolist())) == d
        phases = [np.zeros(d)] if injective else [2 * np.pi * k * np.arange(d) / d for k in range(d)]
        scale = 1.0 if injective else 1 / np.sqrt(d)
        for ph in phases:
            k = np.zeros((d * dq, d * dq), dtype=complex)
            for i in range(d):
                e = blocks[i][g * dq:(g + 1) * dq] * np.exp(1j * ph[i]) * scale
                k[f[i] * dq:(f[i] + 1) * dq, i * dq:(i + 1) * dq] = e
            ops.append(k)
    return QuantumChannel(tuple(ops))


def random_cq_state(layout: SystemLayout, rng=None) -> np.ndarray:
    """Mixture of wire basis states tensored with random quantum states."""
    rng = _rng(rng)
    from .lop import wire_first_index

    dw, dq = layout.wire_dim, layout.quantum_dim
    p = rng.dirichlet(np.ones(dw))
    rho = np.zeros((dw * dq, dw * dq), dtype=complex)
    for i in range(dw):
        rho[i * dq:(i + 1) * dq, i * dq:(i + 1) * dq] = p[i] * random_density(dq, rng=rng)
    idx = np.argsort(wire_first_index(layout))
    return rho[np.ix_(idx, idx)]


def maximally_correlated(d: int, coeffs=None, rng=None) -> np.ndarray:
    """Pure maximally correlated vector ``sum_i c_i |ii>``."""
    rng = _rng(rng)
    c = random_pure(d, rng) if coeffs is None else np.asarray(coeffs, dtype=complex)
    v = np.zeros(d * d, dtype=complex)
    for i in range(d):
        v[i * d + i] = c[i]
    return v / np.linalg.norm(v)


# -- random protocol trees ---------------------------------------------------------


def _random_kraus(d_in: int, n: int, rng) -> list[np.ndarray]:
    return list(random_channel(d_in, d_in, n, rng).kraus)


def _plan(layout: SystemLayout, depth: int, rng, parties=None, max_total: int = 256):
    """One operation template per level so every branch sees the same layouts."""
    plan = []
    lay = layout
    for level in range(depth):
        kinds = ["permutation", "phase"] if lay.wire_names else []
        if lay.quantum_names and lay.total_dim * 2 <= max_total:
            kinds.append("observed")
        if lay.wire_names:
            kinds.append("forward")
        if not kinds:
            break
        kind = kinds[rng.integers(len(kinds))]
        if kind in ("permutation", "phase"):
            ws = list(lay.wire_names)
            k = 1 + int(rng.integers(min(2, len(ws))))
            regs = [ws[i] for i in rng.choice(len(ws), size=k, replace=False)]
            plan.append((kind, regs, lay))
        elif kind == "observed":
            qs = list(lay.quantum_names)
            if parties is not None:
                owner = rng.choice(sorted({lay.register(q).party for q in qs}))
                qs = [q for q in qs if lay.register(q).party == owner]
            regs = [qs[rng.integers(len(qs))]]
            plan.append((kind, regs, lay))
            lay = next_layout(ElementalOp.observed(regs, [np.eye(lay.dim_of(regs))] * 2,
                                                   ancilla=f"A{level}"), lay)
        else:
            ws = list(lay.wire_names)
            src = ws[rng.integers(len(ws))]
            party = None if parties is None else int(rng.choice(parties))
            plan.append((kind, [src, f"F{level}", party], lay))
            lay = next_layout(ElementalOp.forward(src, f"F{level}", party=party), lay)
    return plan


def _instance(kind, args, lay, level, rng) -> ElementalOp:
    if kind == "permutation":
        return ElementalOp.permutation(args, rng.permutation(lay.dim_of(args)))
    if kind == "phase":
        return ElementalOp.phase(args, rng.uniform(0, 2 * np.pi, lay.dim_of(args)))
    if kind == "observed":
        return ElementalOp.observed(args, _random_kraus(lay.dim_of(args), 2, rng), ancilla=f"A{level}")
    src, target, party = args
    return ElementalOp.forward(src, target, party=party)


def random_tree(layout: SystemLayout, depth: int = 4, rng=None, parties=None) -> ProtocolTree:
    """Random tree of elemental operations; every leaf ends in the same layout.

    Operations on the same level share kind and registers while their tables,
    phases and Kraus operators are drawn independently per branch.  With
    ``parties`` set, observed operations act on one party's registers and
    forwards deliver to a random party.
    """
    rng = _rng(rng)
    plan = _plan(layout, depth, rng, parties)

    def build(level):
        if level == len(plan):
            return ProtocolTree()
        op = _instance(*plan[level], level, rng)
        return ProtocolTree(op, {a: build(level + 1) for a in range(op.n_outcomes)})

    return build(0)


def random_wire_layout(rng=None, max_wire_dim: int = 4, bipartite: bool = False) -> SystemLayout:
    """One or two wires with total dimension at most ``max_wire_dim`` plus quantum registers."""
    rng = _rng(rng)
    if max_wire_dim >= 4 and rng.random() < 0.4:
        wires = [("W1", 2, "wire"), ("W2", 2, "wire")]
    else:
        wires = [("W1", int(rng.integers(2, max_wire_dim + 1)), "wire")]
    if bipartite:
        quantum = [("QA", 2, "quantum", 1), ("QB", 2, "quantum", 2)]
    else:
        quantum = [("Q", int(rng.integers(1, 3)), "quantum")]
    return SystemLayout.of(*wires, *quantum)
