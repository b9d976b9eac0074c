"""Standard wire protocols built from elemental operations.

Every factory returns a ``PreparedProtocol``: the tree, the layout it expects,
the pure states that its ancilla wires start in, and the registers that carry
the result.  Everything else left at the leaves (outcome records, emptied
quantum copies) is junk and gets traced out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lop import ElementalOp, SystemLayout
from .protocol import (
    LEAF,
    ProtocolTree,
    _fixed_isometry,
    _split_kept,
    iter_leaf_operators,
    reduced_channel,
    seq,
)
from .qcore import QuantumChannel, as_matrix, ket

PINV_CUTOFF = 1e-10


@dataclass(frozen=True, eq=False)
class PreparedProtocol:
    tree: ProtocolTree
    layout: SystemLayout
    ancillas: dict = field(default_factory=dict)
    outputs: tuple = ()
    success: Callable[[tuple], bool] | None = None

    @property
    def free_registers(self) -> list[str]:
        return [n for n in self.layout.names if n not in self.ancillas]

    @property
    def free_dim(self) -> int:
        return self.layout.dim_of(self.free_registers)

    def input_state(self, rho=None) -> np.ndarray:
        """Full input: ``rho`` on the free registers (layout order) plus the ancillas."""
        v, _ = _fixed_isometry(self.layout, self.ancillas)
        rho = np.ones((1, 1), dtype=complex) if rho is None else as_matrix(rho)
        return v @ rho @ v.conj().T

    def success_paths(self) -> set:
        paths = {p for p, _, _ in iter_leaf_operators(self.tree, self.layout, start=self._start())}
        if self.success is None:
            return paths
        return {p for p in paths if self.success(p)}

    def channel(self, heralded: bool = False) -> QuantumChannel:
        """Map from the free registers to ``outputs``, optionally post-selected on success."""
        paths = self.success_paths() if heralded and self.success is not None else None
        return reduced_channel(self.tree, self.layout, self.ancillas, self.outputs, paths)

    def _start(self) -> np.ndarray:
        return _fixed_isometry(self.layout, self.ancillas)[0]

    def success_probability(self, rho=None) -> float:
        """Probability of a successful outcome path on input ``rho`` (free registers)."""
        rho = np.ones((1, 1), dtype=complex) if rho is None else as_matrix(rho)
        w, u = np.linalg.eigh(rho)
        root = self._start() @ (u * np.sqrt(np.clip(w, 0, None)))
        ok = self.success or (lambda p: True)
        return float(sum(np.linalg.norm(k) ** 2
                         for p, k, _ in iter_leaf_operators(self.tree, self.layout, start=root,
                                                            skip_zero=True)
                         if ok(p)))

    def output_layout(self) -> SystemLayout:
        """Registers in ``outputs`` as they appear at the first leaf."""
        _, _, lay = next(iter_leaf_operators(self.tree, self.layout, start=self._start()))
        return SystemLayout(tuple(lay.register(n) for n in self.outputs))

    def output_state(self, rho=None) -> np.ndarray:
        """Averaged output on ``outputs`` (for preparations ``rho`` can be omitted)."""
        ch = self.channel()
        rho = np.ones((1, 1), dtype=complex) if rho is None else as_matrix(rho)
        return sum(k @ rho @ k.conj().T for k in ch.kraus)

    def branch_operators(self) -> dict:
        """Reduced nonzero Kraus operators of every leaf, keyed by outcome path."""
        out = {}
        for path, k, lay in iter_leaf_operators(self.tree, self.layout, start=self._start()):
            ops = _split_kept(k, lay, self.outputs)
            out[path] = [m for m in ops if np.max(np.abs(m)) > 1e-12]
        return out


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """A channel on a wire of dimension ``wire_dim`` (first factor) and a quantum system."""

    channel: QuantumChannel
    wire_dim: int
    quantum_dim: int = 1

    def __post_init__(self):
        d = self.wire_dim * self.quantum_dim
        if self.channel.in_dim != d or self.channel.out_dim != d:
            raise ValueError(f"channel must act on dimension {d}")


# -- building blocks ------------------------------------------------------------------


def _table(dims: Sequence[int], fn) -> list[int]:
    """Permutation table over the joint index of registers with ``dims``."""
    dims = tuple(dims)
    return [int(np.ravel_multi_index(tuple(fn(digits)), dims)) for digits in np.ndindex(*dims)]


def _extend_bijection(partial: dict, size: int) -> list[int]:
    """Complete an injective partial map on ``range(size)`` to a permutation table."""
    free = iter(sorted(set(range(size)) - set(partial.values())))
    return [partial[i] if i in partial else next(free) for i in range(size)]


def prep(name: str, dim: int, party=None) -> ElementalOp:
    """Fresh wire ``name`` in ``|0>``: an observed operation on nothing."""
    return ElementalOp.observed((), [np.ones((1, 1))], ancilla=name, ancilla_dim=dim,
                                party=party, tag="prep")


def fourier_rows(d: int) -> list[np.ndarray]:
    """Bras of the Fourier basis, ``<k^| = sum_j exp(-2 pi i k j/d)/sqrt(d) <j|``."""
    j = np.arange(d)
    return [np.exp(-2j * np.pi * k * j / d).reshape(1, d) / np.sqrt(d) for k in range(d)]


def bijection_ops(wire: str, d: int, target: str, scratch: str, party=None) -> list[ElementalOp]:
    """Copy wire ``wire`` into a new maximally correlated quantum register ``target``."""
    return [
        prep(scratch, d),
        ElementalOp.permutation((wire, scratch), _table((d, d), lambda x: (x[0], (x[0] + x[1]) % d))),
        ElementalOp.forward(scratch, target, party=party),
    ]


def unbijection_tree(wire: str, d: int, source: str, record: str,
                     then: ProtocolTree | None = None) -> ProtocolTree:
    """Undo ``bijection_ops``: Fourier-measure ``source``, then fix the wire phase."""
    meas = ElementalOp.observed((source,), fourier_rows(d), ancilla=record, outputs=(),
                                tag="fourier")
    j = np.arange(d)
    cont = then if then is not None else LEAF
    return ProtocolTree(meas, {
        k: seq(ElementalOp.phase((wire,), 2 * np.pi * k * j / d), then=cont) for k in range(d)
    })


def _uniform(d: int) -> np.ndarray:
    return np.ones(d, dtype=complex) / np.sqrt(d)


# -- bijection and its inverse -----------------------------------------------------------------


def bijection_B(d: int) -> PreparedProtocol:
    """``|i><j|_W -> |i><j|_W ⊗ |i><j|_Q`` on a wire ``W`` of dimension ``d``."""
    layout = SystemLayout.of(("W", d, "wire"))
    return PreparedProtocol(seq(*bijection_ops("W", d, "Q", "B_scratch")), layout, {}, ("W", "Q"))


def bijection_B_inv(d: int) -> PreparedProtocol:
    """Remove a quantum copy ``Q`` of wire ``W``; each of the ``d`` outcomes is corrected."""
    layout = SystemLayout.of(("W", d, "wire"), ("Q", d, "quantum"))
    return PreparedProtocol(unbijection_tree("W", d, "Q", "B_record"), layout, {}, ("W",))


def round_trip(d: int) -> PreparedProtocol:
    """``bijection_B`` followed by ``bijection_B_inv`` on the same wire."""
    layout = SystemLayout.of(("W", d, "wire"))
    tree = seq(*bijection_ops("W", d, "Q", "B_scratch"), then=unbijection_tree("W", d, "Q", "B_record"))
    return PreparedProtocol(tree, layout, {}, ("W",))


# -- diagonal unitaries by repeat-until-success -------------------------------------------------


def phase_via_loop(phases, d: int, max_rounds: int) -> PreparedProtocol:
    """Apply ``diag(exp(i phases))`` to wire ``W`` with at most ``max_rounds`` attempts.

    ``phases`` may also be a diagonal unitary.  Each attempt copies the wire,
    applies the residual phase to the copy and Fourier-measures it; outcome 0
    heralds success.  A failed attempt leaves a known Fourier phase behind,
    which becomes the residual of the next attempt.
    """
    arr = np.asarray(phases)
    if arr.ndim == 2:
        if np.max(np.abs(arr - np.diag(np.diag(arr)))) > 1e-12:
            raise ValueError("phase_via_loop needs a diagonal unitary")
        arr = np.angle(np.diag(arr))
    theta = np.asarray(arr, dtype=float).reshape(-1)
    if theta.size != d:
        raise ValueError("need one phase per wire level")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    j = np.arange(d)

    def attempt(r, residual):
        q, rec = f"L{r}_copy", f"L{r}_record"
        fourier = [row @ np.diag(np.exp(1j * residual)) for row in fourier_rows(d)]
        meas = ElementalOp.observed((q,), fourier, ancilla=rec, outputs=(), tag="round")

        def after(k):
            if k == 0 or r + 1 == max_rounds:
                return LEAF
            return attempt(r + 1, 2 * np.pi * k * j / d)

        node = ProtocolTree(meas, {k: after(k) for k in range(d)})
        return seq(*bijection_ops("W", d, q, f"L{r}_scratch"), then=node)

    layout = SystemLayout.of(("W", d, "wire"))
    return PreparedProtocol(attempt(0, theta), layout, {}, ("W",), success=lambda p: p[-1] == 0)


# -- channel teleportation --------------------------------------------------------------------


def teleport_channel(spec: ChannelSpec, ancilla=None) -> PreparedProtocol:
    """Implement ``spec.channel`` on ``(W1, Q)`` through a coherent ancilla wire ``W2``.

    ``W1`` is forwarded and the channel is applied as a quantum instrument;
    the ancilla wire is copied and Bell-measured against the result, and the
    outcome is undone by a phase and a shift on ``W2``, which then carries the
    output wire.  ``ancilla`` defaults to the maximally coherent state.
    """
    d, dq = spec.wire_dim, spec.quantum_dim
    psi = _uniform(d) if ancilla is None else np.asarray(ancilla, dtype=complex).reshape(-1)
    layout = SystemLayout.of(("W2", d, "wire"), ("W1", d, "wire"), ("Q", dq, "quantum"))
    j = np.arange(d)
    bell = []
    for k in range(d):
        for shift in range(d):
            b = np.zeros(d * d, dtype=complex)
            for x in range(d):
                b[x * d + (shift + x) % d] = np.exp(2j * np.pi * k * x / d) / np.sqrt(d)
            bell.append(b.conj().reshape(1, -1))
    bell_op = ElementalOp.observed(("T_copy", "T_wire"), bell, ancilla="T_bell", outputs=(),
                                   tag="bell")
    fix = {}
    for o in range(d * d):
        k, shift = divmod(o, d)
        fix[o] = seq(ElementalOp.phase(("W2",), 2 * np.pi * k * j / d),
                     ElementalOp.permutation(("W2",), [(x + shift) % d for x in range(d)]))
    tail = seq(*bijection_ops("W2", d, "T_copy", "T_scratch"), then=ProtocolTree(bell_op, fix))
    apply = ElementalOp.observed(("T_wire", "Q"), spec.channel.kraus, ancilla="T_kraus",
                                 tag="channel")
    tree = seq(ElementalOp.forward("W1", "T_wire"), apply, then=tail)
    return PreparedProtocol(tree, layout, {"W2": psi}, ("W2", "Q"))


# -- incoherent quantum operations ----------------------------------------------------------------


def iqo_decomposition(ch: QuantumChannel, d: int, tol: float = 1e-12):
    """Per Kraus operator: the wire map (``None`` where a column is zero) and its blocks.

    Kraus operators act on ``wire ⊗ quantum`` with the wire first.  Raises if
    some wire column has support on two output labels.
    """
    dq = ch.in_dim // d
    out = []
    for k in ch.kraus:
        blocks = k.reshape(d, dq, d, dq)
        f, ops = [], []
        for i in range(d):
            rows = [o for o in range(d) if np.max(np.abs(blocks[o, :, i, :])) > tol]
            if len(rows) > 1:
                raise ValueError("channel is not an incoherent quantum operation")
            f.append(rows[0] if rows else None)
            ops.append(blocks[rows[0], :, i, :] if rows else np.zeros((dq, dq), dtype=complex))
        out.append((f, ops))
    return out


def iqo_stochastic(ch: QuantumChannel, d: int) -> PreparedProtocol:
    """Heralded implementation of an IQO channel; succeeds with probability ``1/d``."""
    dq = ch.in_dim // d
    parts = iqo_decomposition(ch, d)
    layout = SystemLayout.of(("W1", d, "wire"), ("Q", dq, "quantum"))
    instrument = []
    for f, ops in parts:
        g = np.zeros((dq * d, dq * d), dtype=complex)
        for i in range(d):
            if f[i] is not None:
                g += np.kron(ops[i], np.outer(ket(f[i], d), ket(i, d)))
        instrument.append(g)
    apply = ElementalOp.observed(("Q", "S_copy"), instrument, ancilla="S_kraus", tag="channel")

    final = seq(ElementalOp.forward("W2", "S_index"),
                ElementalOp.observed(("S_index",), fourier_rows(d), ancilla="S_herald", outputs=(),
                                     tag="herald"))

    def relabel(alpha):
        f = [x if x is not None else 0 for x in parts[alpha][0]]
        table = _table((d, d), lambda x: ((f[x[0]] + x[1]) % d, x[0]))
        return seq(prep("W2", d), ElementalOp.permutation(("W1", "W2"), table),
                   then=unbijection_tree("W1", d, "S_copy", "S_record", then=final))

    tree = seq(*bijection_ops("W1", d, "S_copy", "S_scratch"),
               then=ProtocolTree(apply, {a: relabel(a) for a in range(len(instrument))}))
    return PreparedProtocol(tree, layout, {}, ("W1", "Q"), success=lambda p: p[-1] == 0)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def _pinv_psd(m: np.ndarray, cutoff: float = PINV_CUTOFF) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse of a PSD matrix and the projector onto its support."""
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    keep = w > cutoff
    inv = (v[:, keep] / w[keep]) @ v[:, keep].conj().T
    proj = v[:, keep] @ v[:, keep].conj().T
    return inv, proj


@dataclass(frozen=True)
class StepOutcome:
    """``sum_i |labels[min(cut-1, i)]><i| ⊗ ops[i]`` for a wire of dimension ``len(ops)``."""

    labels: tuple
    ops: tuple

    def kraus(self) -> np.ndarray:
        d = len(self.ops)
        cut = len(self.labels)
        dq = self.ops[0].shape[0]
        k = np.zeros((d * dq, d * dq), dtype=complex)
        for i, e in enumerate(self.ops):
            k += np.kron(np.outer(ket(self.labels[min(cut - 1, i)], d), ket(i, d)), e)
        return k


def iqo_qubit_stages(ch: QuantumChannel) -> tuple[list[StepOutcome], list[StepOutcome]]:
    """Two-stage split of a qubit-wire IQO channel.

    Stage one keeps the wire injective: the collapsing Kraus operators are
    pooled into one outcome whose blocks are the square roots of their summed
    Gram matrices.  Stage two (after that outcome) collapses the wire onto the
    right label; two extra outcomes complete it off the support.
    """
    d = 2
    dq = ch.in_dim // d
    parts = iqo_decomposition(ch, d)
    pooled, injective = [], []
    for f, ops in parts:
        if f[0] is None and f[1] is None:
            continue
        if f[0] is not None and f[0] == f[1]:
            pooled.append((f[0], ops))
        else:
            g = list(f)
            if g[0] is None:
                g[0] = 1 - g[1]
            if g[1] is None:
                g[1] = 1 - g[0]
            injective.append((tuple(g), ops))
    gram = [sum((ops[i].conj().T @ ops[i] for _, ops in pooled), np.zeros((dq, dq), complex))
            for i in range(d)]
    root = [_psd_sqrt(g) for g in gram]
    stage1 = [StepOutcome((0, 1), tuple(root))]
    stage1 += [StepOutcome(f, tuple(ops)) for f, ops in injective]
    inv = [_pinv_psd(r) for r in root]
    stage2 = [StepOutcome((c,), tuple(ops[i] @ inv[i][0] for i in range(d))) for c, ops in pooled]
    eye = np.eye(dq, dtype=complex)
    for b in range(d):
        fail = [(eye - inv[i][1]) if i == b else np.zeros((dq, dq), complex) for i in range(d)]
        stage2.append(StepOutcome((0,), tuple(fail)))
    return stage1, stage2


def _realize_step(outcomes: Sequence[StepOutcome], wire: str, q: str, d: int, prefix: str,
                  cont_of=None) -> ProtocolTree:
    """Elemental realization of a wire-controlled step whose outcomes share one cut."""
    cut = len(outcomes[0].labels)
    m = [min(cut - 1, i) for i in range(d)]
    copy = f"{prefix}_copy"
    instrument = []
    for o in outcomes:
        g = 0
        for i in range(d):
            g = g + np.kron(o.ops[i], np.outer(ket(o.labels[m[i]], d), ket(i, d)))
        instrument.append(g)
    apply = ElementalOp.observed((q, copy), instrument, ancilla=f"{prefix}_outcome", tag="step")

    def after(a):
        relabel = _extend_bijection({x: outcomes[a].labels[x] for x in range(cut)}, d)
        cont = cont_of(a) if cont_of is not None else LEAF
        return seq(ElementalOp.permutation((wire,), relabel),
                   then=unbijection_tree(wire, d, copy, f"{prefix}_record", then=cont))

    table = _table((d, d), lambda x: ((m[x[0]] + x[1]) % d, x[0]))
    return seq(prep(f"{prefix}_scratch", d), ElementalOp.permutation((wire, f"{prefix}_scratch"), table),
               ElementalOp.forward(f"{prefix}_scratch", copy),
               then=ProtocolTree(apply, {a: after(a) for a in range(len(outcomes))}))


def iqo_qubit_exact(ch: QuantumChannel) -> PreparedProtocol:
    """Deterministic implementation of an IQO channel on a qubit wire and a quantum system."""
    dq = ch.in_dim // 2
    stage1, stage2 = iqo_qubit_stages(ch)
    second = _realize_step(stage2, "W", "Q", 2, "X2")
    tree = _realize_step(stage1, "W", "Q", 2, "X1", cont_of=lambda a: second if a == 0 else LEAF)
    layout = SystemLayout.of(("W", 2, "wire"), ("Q", dq, "quantum"))
    return PreparedProtocol(tree, layout, {}, ("W", "Q"))


# -- multipartite preparations ----------------------------------------------------------------


def ghz_vector(n: int) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return v


def w_vector(n: int) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    for k in range(n):
        v[1 << k] = 1 / np.sqrt(n)
    return v


_CNOT = _table((2, 2), lambda x: (x[0], x[0] ^ x[1]))


def _bell_basis() -> list[np.ndarray]:
    phi = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    z = np.diag([1, -1]).astype(complex)
    return [np.kron(np.linalg.matrix_power(z, a) @ np.linalg.matrix_power(x, b), np.eye(2)) @ phi
            for a in range(2) for b in range(2)]


def teleport_ops(src: str, near: str, far: str, record: str, near_party, far_party) -> list[ElementalOp]:
    """Move qubit ``src`` into ``far`` using the Bell pair ``(near, far)``.

    The Bell outcome is written to a wire, forwarded to the far party, and used
    there as the control of the Pauli correction.
    """
    basis = _bell_basis()
    phi = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    ctrl = np.zeros((8, 8), dtype=complex)
    for m, b in enumerate(basis):
        # map src -> far left by outcome m; it is half a unitary
        left = np.kron(b.conj().reshape(1, 4), np.eye(2)) @ np.kron(np.eye(2), phi.reshape(4, 1))
        ctrl += np.kron(np.outer(ket(m, 4), ket(m, 4)), 2 * left.conj().T)
    return [
        ElementalOp.observed((src, near), [b.conj().reshape(1, 4) for b in basis], ancilla=record,
                             outputs=(), party=near_party, tag="bell"),
        ElementalOp.forward(record, f"{record}_q", party=far_party),
        ElementalOp.observed((f"{record}_q", far), [ctrl], ancilla=f"{record}_done",
                             party=far_party, tag="correct"),
    ]


def _copy_qubit(src: str, new: str, party, junk: str) -> ElementalOp:
    iso = np.zeros((4, 2), dtype=complex)
    iso[0, 0] = iso[3, 1] = 1
    return ElementalOp.observed((src,), [iso], ancilla=junk, outputs=((src, 2), (new, 2)),
                                party=party, tag="copy")


def prepare_ghz(n: int, topology: str = "single_wire") -> PreparedProtocol:
    """GHZ state on ``n`` parties from coherent wires.

    ``single_wire``: one qubit wire in ``|+>`` copied ``n - 1`` times and
    forwarded.  ``chain``: ``n - 1`` qubit wires turned into Bell pairs
    between neighbours, grown into a GHZ state by local copies and teleportation.
    """
    if n < 2:
        raise ValueError("GHZ needs at least two parties")
    plus = _uniform(2)
    if topology == "single_wire":
        ops = []
        for j in range(2, n + 1):
            ops += [prep(f"W{j}", 2), ElementalOp.permutation(("W", f"W{j}"), _CNOT)]
        ops.append(ElementalOp.forward("W", "Q1", party=1))
        ops += [ElementalOp.forward(f"W{j}", f"Q{j}", party=j) for j in range(2, n + 1)]
        layout = SystemLayout.of(("W", 2, "wire"))
        return PreparedProtocol(seq(*ops), layout, {"W": plus},
                                tuple(f"Q{j}" for j in range(1, n + 1)))
    if topology == "chain":
        ops = []
        for j in range(1, n):
            ops += [prep(f"W{j}c", 2), ElementalOp.permutation((f"W{j}", f"W{j}c"), _CNOT),
                    ElementalOp.forward(f"W{j}", f"Q{j}b", party=j),
                    ElementalOp.forward(f"W{j}c", f"Q{j + 1}a", party=j + 1)]
        holders = ["Q1b", "Q2a"]
        for j in range(2, n):
            ops.append(_copy_qubit(f"Q{j}a", f"Q{j}c", j, f"C{j}"))
            ops += teleport_ops(f"Q{j}c", f"Q{j}b", f"Q{j + 1}a", f"R{j}", j, j + 1)
            holders.append(f"Q{j + 1}a")
        layout = SystemLayout.of(*[(f"W{j}", 2, "wire") for j in range(1, n)])
        return PreparedProtocol(seq(*ops), layout, {f"W{j}": plus for j in range(1, n)},
                                tuple(holders))
    raise ValueError(f"unknown topology {topology!r}")


def prepare_w(n: int, topology: str = "single_wire") -> PreparedProtocol:
    """W state on ``n`` parties.

    ``single_wire``: a uniform wire of dimension ``n`` spread into a one-hot
    pattern over ``n`` qubit wires.  ``two_wire`` (``n = 3`` only): a ``|+>``
    qubit wire and a ``(|0> + sqrt2 |1>)/sqrt3`` qubit wire.
    """
    if n < 2:
        raise ValueError("W needs at least two parties")
    if topology == "single_wire":
        dims = (n,) + (2,) * n
        partial = {}
        for i in range(n):
            src = (i,) + (0,) * n
            dst = (0,) + tuple(int(k == i) for k in range(n))
            partial[int(np.ravel_multi_index(src, dims))] = int(np.ravel_multi_index(dst, dims))
        table = _extend_bijection(partial, int(np.prod(dims)))
        names = [f"B{k}" for k in range(1, n + 1)]
        ops = [prep(b, 2) for b in names]
        ops.append(ElementalOp.permutation(["W"] + names, table))
        ops += [ElementalOp.forward(b, f"Q{k}", party=k) for k, b in enumerate(names, 1)]
        layout = SystemLayout.of(("W", n, "wire"))
        return PreparedProtocol(seq(*ops), layout, {"W": _uniform(n)},
                                tuple(f"Q{k}" for k in range(1, n + 1)))
    if topology == "two_wire":
        if n != 3:
            raise ValueError("the two-wire W preparation is for three parties")
        split = np.zeros((4, 2), dtype=complex)
        split[0, 0] = 1
        split[1, 1] = split[2, 1] = 1 / np.sqrt(2)
        ops = [prep("W1c", 2), ElementalOp.permutation(("W1", "W1c"), _CNOT),
               prep("W2c", 2), ElementalOp.permutation(("W2", "W2c"), _CNOT),
               ElementalOp.forward("W2c", "Q2a", party=2),
               ElementalOp.observed(("Q2a",), [split], ancilla="C2", outputs=(("Q2a", 2), ("Q2b", 2)),
                                    party=2, tag="split"),
               # the heavy branch was split in two; relabel the wire so it marks the light one
               ElementalOp.permutation(("W2",), [1, 0]),
               ElementalOp.forward("W2", "Q3", party=3),
               ElementalOp.forward("W1", "Q1a", party=1),
               ElementalOp.forward("W1c", "Q2c", party=2)]
        ops += teleport_ops("Q2b", "Q2c", "Q1a", "R2", 2, 1)
        layout = SystemLayout.of(("W1", 2, "wire"), ("W2", 2, "wire"))
        weighted = np.array([1, np.sqrt(2)], dtype=complex) / np.sqrt(3)
        return PreparedProtocol(seq(*ops), layout, {"W1": _uniform(2), "W2": weighted},
                                ("Q1a", "Q2a", "Q3"))
    raise ValueError(f"unknown topology {topology!r}")
