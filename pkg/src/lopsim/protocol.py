"""Branching protocol trees: execution with post-selection, the cut-rank normal form, and
the translation of wire protocols into two-party LOCC protocols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .lop import (
    ElementalOp,
    Register,
    SystemLayout,
    _local_form,
    apply_local,
    elemental,
    next_layout,
    reorder_index,
    to_wire_first,
)
from .qcore import TOL, QuantumChannel, as_matrix, choi_distance, choi_of, choi_of_map

PRUNE = 1e-14
ZERO_KRAUS = 1e-15
MAX_WIRE_DIM = 64


# -- trees ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProtocolTree:
    """A leaf (``op is None``) or an elemental step with one subtree per outcome."""

    op: ElementalOp | None = None
    children: dict = field(default_factory=dict)

    @classmethod
    def leaf(cls) -> "ProtocolTree":
        return cls()

    @classmethod
    def step(cls, op: ElementalOp, children: dict | None = None) -> "ProtocolTree":
        """A step; outcomes missing from ``children`` stop there."""
        kids = {int(k): v for k, v in (children or {}).items()}
        for a in range(op.n_outcomes):
            kids.setdefault(a, LEAF)
        return cls(op, kids)

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def child(self, outcome: int) -> "ProtocolTree":
        try:
            return self.children[outcome]
        except KeyError:
            raise ValueError(f"outcome {outcome} of {self.op.kind} has no branch") from None

    def ops(self) -> Iterator[ElementalOp]:
        """Every operation in the tree (shared subtrees visited once per occurrence)."""
        if self.op is not None:
            yield self.op
            for a in sorted(self.children):
                yield from self.children[a].ops()

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(c.depth() for c in self.children.values())

    def to_json(self) -> dict:
        if self.is_leaf:
            return {}
        return {
            "op": self.op.to_json(),
            "children": {str(a): c.to_json() for a, c in sorted(self.children.items())},
        }

    @classmethod
    def from_json(cls, obj) -> "ProtocolTree":
        if not isinstance(obj, dict):
            raise ValueError("protocol node must be a JSON object")
        if not obj:
            return LEAF
        if "op" not in obj:
            raise ValueError("protocol step is missing its op")
        op = ElementalOp.from_json(obj["op"])
        kids = obj.get("children", {})
        try:
            children = {int(k): cls.from_json(v) for k, v in kids.items()}
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"malformed children map: {exc}") from exc
        return cls(op, children)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


LEAF = ProtocolTree()


def seq(*ops: ElementalOp, then: ProtocolTree | None = None) -> ProtocolTree:
    """Run ``ops`` in order whatever the outcomes, then continue with ``then``."""
    node = then if then is not None else LEAF
    for op in reversed(ops):
        node = ProtocolTree(op, {a: node for a in range(op.n_outcomes)})
    return node


def branch(op: ElementalOp, per_outcome) -> ProtocolTree:
    """Step whose continuation depends on the outcome: ``per_outcome(a) -> ProtocolTree``."""
    return ProtocolTree(op, {a: per_outcome(a) for a in range(op.n_outcomes)})


# -- execution -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OutcomePath:
    outcomes: tuple
    probability: float
    state: np.ndarray
    layout: SystemLayout

    def to_json(self) -> dict:
        from .qcore import state_to_json

        return {
            "outcomes": list(self.outcomes),
            "probability": self.probability,
            "state": state_to_json(self.state),
            "layout": self.layout.to_json(),
        }


@dataclass(frozen=True, eq=False)
class BranchReport:
    paths: tuple
    pruned: tuple = ()

    @property
    def total_probability(self) -> float:
        return float(sum(p.probability for p in self.paths))

    def __iter__(self):
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def to_json(self) -> dict:
        return {
            "paths": [p.to_json() for p in self.paths],
            "pruned": [{"outcomes": list(o), "probability": pr} for o, pr in self.pruned],
            "total_probability": self.total_probability,
        }


class _Elementals:
    """Per-run cache of elemental channels keyed by operation identity and layout."""

    def __init__(self):
        self._cache: dict = {}

    def __call__(self, op: ElementalOp, layout: SystemLayout):
        key = (id(op), layout)
        hit = self._cache.get(key)
        if hit is None:
            hit = (op, elemental(op, layout))
            self._cache[key] = hit
        return hit[1]


class _Steps:
    """Per-run cache of local operation matrices; applies them without lifting."""

    def __init__(self):
        self._cache: dict = {}

    def form(self, op: ElementalOp, layout: SystemLayout):
        key = (id(op), layout)
        hit = self._cache.get(key)
        if hit is None:
            hit = (op, _local_form(op, layout))
            self._cache[key] = hit
        return hit[1]

    def left(self, op, layout, mat):
        """``[K_a @ mat]`` per outcome and the new layout."""
        mats, ins, outs, new = self.form(op, layout)
        return [apply_local(mat, layout, ins, m, new, outs) for m in mats], new

    def sandwich(self, op, layout, rho):
        """``[K_a rho K_a^dagger]`` per outcome and the new layout."""
        mats, ins, outs, new = self.form(op, layout)
        out = []
        for m in mats:
            half = apply_local(rho, layout, ins, m, new, outs)
            out.append(apply_local(half.conj().T, layout, ins, m, new, outs))
        return out, new


def iter_leaf_operators(tree: ProtocolTree, layout: SystemLayout, start=None,
                        skip_zero: bool = False):
    """Yield ``(outcomes, kraus @ start, leaf_layout)`` for every root-to-leaf path.

    ``start`` defaults to the identity; passing an isometry restricts the
    inputs.  With ``skip_zero``, branches whose operator vanishes are dropped.
    """
    steps = _Steps()
    k0 = np.eye(layout.total_dim, dtype=complex) if start is None else as_matrix(start)
    stack = [(tree, k0, layout, ())]
    while stack:
        node, k, lay, path = stack.pop()
        if node.is_leaf:
            yield path, k, lay
            continue
        kids, new = steps.left(node.op, lay, k)
        for a in reversed(range(len(kids))):
            if skip_zero and not np.any(np.abs(kids[a]) > ZERO_KRAUS):
                continue
            stack.append((node.child(a), kids[a], new, path + (a,)))


def leaf_operators(tree: ProtocolTree, layout: SystemLayout):
    """``(outcomes, kraus, leaf_layout)`` for every root-to-leaf path."""
    return list(iter_leaf_operators(tree, layout))


def to_channel(tree: ProtocolTree, layout: SystemLayout):
    """Flatten a tree into ``(QuantumChannel, output layout)``."""
    leaves = leaf_operators(tree, layout)
    layouts = {lay for _, _, lay in leaves}
    if len(layouts) != 1:
        raise ValueError("protocol leaves end in different layouts; use execute(all_branches)")
    return QuantumChannel(tuple(k for _, k, _ in leaves)), layouts.pop()


def execute(tree: ProtocolTree, rho, layout: SystemLayout, mode: str = "average",
            seed: int | None = None, prune: float = PRUNE):
    """Run a protocol on ``rho``.

    ``average`` returns ``(state, layout)`` summed over leaves; ``all_branches``
    returns a ``BranchReport``; ``sampled`` follows one path drawn with ``seed``.
    """
    rho = as_matrix(rho)
    if rho.shape != (layout.total_dim, layout.total_dim):
        raise ValueError("state dimension does not match the layout")
    steps = _Steps()

    if mode == "average":
        total = None
        final = None
        stack = [(tree, rho, layout)]
        while stack:
            node, r, lay = stack.pop()
            if node.is_leaf:
                if final is None:
                    final, total = lay, r.copy()
                elif lay != final:
                    raise ValueError("layout drift: leaves end in different layouts")
                else:
                    total = total + r
                continue
            subs, new = steps.sandwich(node.op, lay, r)
            for a in reversed(range(len(subs))):
                stack.append((node.child(a), subs[a], new))
        return total, final

    if mode == "all_branches":
        paths, pruned = [], []

        def walk(node, r, lay, outcomes):
            if node.is_leaf:
                p = float(np.real(np.trace(r)))
                paths.append(OutcomePath(tuple(outcomes), p, r / p, lay))
                return
            subs, new = steps.sandwich(node.op, lay, r)
            for a, sub in enumerate(subs):
                p = float(np.real(np.trace(sub)))
                if p < prune:
                    pruned.append((tuple(outcomes) + (a,), max(p, 0.0)))
                    continue
                walk(node.child(a), sub, new, outcomes + [a])

        walk(tree, rho, layout, [])
        return BranchReport(tuple(paths), tuple(pruned))

    if mode == "sampled":
        if seed is None:
            raise ValueError("sampled mode needs an explicit seed")
        rng = np.random.default_rng(seed)
        node, r, lay, outcomes, prob = tree, rho, layout, [], 1.0
        while not node.is_leaf:
            subs, new = steps.sandwich(node.op, lay, r)
            ps = np.array([max(0.0, float(np.real(np.trace(s)))) for s in subs])
            a = int(rng.choice(len(ps), p=ps / ps.sum()))
            prob *= ps[a]
            r = subs[a] / ps[a]
            node, lay = node.child(a), new
            outcomes.append(a)
        return OutcomePath(tuple(outcomes), prob, r, lay)

    raise ValueError(f"unknown execution mode {mode!r}")


# -- reduced maps -------------------------------------------------------------------


def reorder_state(rho, layout: SystemLayout, order: Sequence[str]) -> np.ndarray:
    """Same state with registers listed in ``order``."""
    idx = reorder_index(layout, order)
    return as_matrix(rho)[np.ix_(idx, idx)]


def _fixed_isometry(layout: SystemLayout, fixed: dict) -> tuple[np.ndarray, list[str]]:
    """Isometry from the free registers (layout order) into the full layout."""
    free = [n for n in layout.names if n not in fixed]
    order = free + list(fixed)
    vec = np.ones(1, dtype=complex)
    for name in fixed:
        psi = np.asarray(fixed[name], dtype=complex).reshape(-1)
        if psi.size != layout.register(name).dim:
            raise ValueError(f"fixed state for {name} has the wrong dimension")
        vec = np.kron(vec, psi)
    dfree = layout.dim_of(free)
    v_ordered = np.kron(np.eye(dfree), vec.reshape(-1, 1))
    idx = reorder_index(layout, order)
    v = np.zeros((layout.total_dim, dfree), dtype=complex)
    v[idx, :] = v_ordered
    return v, free


def reduce_kraus(ops, in_layout: SystemLayout, out_layout: SystemLayout, fixed: dict,
                 keep: Sequence[str]) -> list[np.ndarray]:
    """Kraus operators of ``rho -> Tr_rest[K (rho ⊗ fixed) K†]`` onto registers ``keep``."""
    v, _ = _fixed_isometry(in_layout, fixed)
    out = []
    for k in ops:
        out.extend(_split_kept(as_matrix(k) @ v, out_layout, keep))
    return out


def _split_kept(m: np.ndarray, layout: SystemLayout, keep: Sequence[str]) -> list[np.ndarray]:
    """Kraus operators onto ``keep`` after tracing the other registers of ``m``'s output."""
    rest = [n for n in layout.names if n not in keep]
    idx = reorder_index(layout, list(keep) + rest)
    dk, dr = layout.dim_of(keep), layout.dim_of(rest)
    m = m[idx, :].reshape(dk, dr, -1)
    return [m[:, e, :] for e in range(dr)]


def reduced_channel(tree: ProtocolTree, layout: SystemLayout, fixed: dict | None = None,
                    keep: Sequence[str] | None = None, paths=None) -> QuantumChannel:
    """Channel from the non-fixed input registers to ``keep`` with everything else traced.

    ``fixed`` maps register names to pure input vectors.  Leaves may end in
    different layouts as long as each contains the kept registers.  ``paths``
    optionally restricts to a set of outcome tuples (a post-selected map).
    """
    fixed = fixed or {}
    v, _ = _fixed_isometry(layout, fixed)
    ops = []
    keep_dims = None
    for path, k, lay in iter_leaf_operators(tree, layout, start=v):
        if paths is not None and path not in paths:
            continue
        kk = list(keep) if keep is not None else list(lay.names)
        dims = tuple(lay.register(n).dim for n in kk)
        if keep_dims is None:
            keep_dims = dims
        elif dims != keep_dims:
            raise ValueError("kept registers differ between leaves")
        reduced = _split_kept(k, lay, kk)
        ops.extend(m for m in reduced if np.max(np.abs(m)) > ZERO_KRAUS)
        shape = reduced[0].shape
    if keep_dims is None:
        raise ValueError("no branch selected")
    if not ops:
        ops = [np.zeros(shape, dtype=complex)]
    return QuantumChannel(tuple(ops), complete=paths is None)


# -- normal form ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalFormBranch:
    """One outcome of a normal-form step: ``|injection[min(cut-1, i)]><i| ⊗ ops[i]``."""

    injection: tuple
    ops: tuple
    out_wire_dim: int
    out_quantum_dim: int
    child: "NormalFormStep | None" = None


@dataclass(frozen=True, eq=False)
class NormalFormStep:
    cut_rank: int
    in_wire_dim: int
    in_quantum_dim: int
    branches: dict

    @property
    def injection(self) -> dict:
        return {a: b.injection for a, b in self.branches.items()}

    @property
    def controlled_ops(self) -> dict:
        return {(a, i): e for a, b in self.branches.items() for i, e in enumerate(b.ops)}

    def kraus(self, outcome) -> np.ndarray:
        b = self.branches[outcome]
        iq, oq = self.in_quantum_dim, b.out_quantum_dim
        k = np.zeros((b.out_wire_dim * oq, self.in_wire_dim * iq), dtype=complex)
        for i, e in enumerate(b.ops):
            lab = b.injection[min(self.cut_rank - 1, i)]
            k[lab * oq:(lab + 1) * oq, i * iq:(i + 1) * iq] = e
        return k

    def depth(self) -> int:
        return 1 + max((b.child.depth() if b.child else 0) for b in self.branches.values())


@dataclass
class NormalFormReport:
    ok: bool
    reasons: list
    depth: int

    def __bool__(self) -> bool:
        return self.ok


def verify_normal_form(root: NormalFormStep | None, dims: tuple[int, int],
                       tol: float = TOL) -> NormalFormReport:
    """Check the cut-rank structure, per-step completeness and the length bound.

    ``dims`` is ``(wire_dim, quantum_dim)`` of the input.
    """
    reasons: list[str] = []
    if root is None:
        return NormalFormReport(True, [], 0)
    wire_dim, q_dim = dims

    def check(step, path, parent_cut, in_dims):
        where = "/".join(map(str, path)) or "root"
        if (step.in_wire_dim, step.in_quantum_dim) != in_dims:
            reasons.append(f"{where}: input dims {step.in_wire_dim, step.in_quantum_dim} != {in_dims}")
            return
        if not 1 <= step.cut_rank <= step.in_wire_dim:
            reasons.append(f"{where}: cut rank {step.cut_rank} outside 1..{step.in_wire_dim}")
            return
        if parent_cut is not None and step.cut_rank >= parent_cut:
            reasons.append(f"{where}: cut rank {step.cut_rank} does not decrease below {parent_cut}")
        if not step.branches:
            reasons.append(f"{where}: step has no outcomes")
            return
        gram = np.zeros((step.in_wire_dim * step.in_quantum_dim,) * 2, dtype=complex)
        for a, b in step.branches.items():
            inj = list(b.injection)
            if len(inj) != step.cut_rank:
                reasons.append(f"{where}: outcome {a} injection has {len(inj)} labels, cut is {step.cut_rank}")
                return
            if len(set(inj)) != len(inj):
                reasons.append(f"{where}: outcome {a} injection is not injective")
            if any(not 0 <= x < b.out_wire_dim for x in inj):
                reasons.append(f"{where}: outcome {a} injection leaves the output wire")
                return
            if len(b.ops) != step.in_wire_dim or any(
                np.shape(e) != (b.out_quantum_dim, step.in_quantum_dim) for e in b.ops
            ):
                reasons.append(f"{where}: outcome {a} controlled operators have wrong shapes")
                return
            k = step.kraus(a)
            gram += k.conj().T @ k
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > tol:
            reasons.append(f"{where}: step is not trace preserving")
        for a, b in step.branches.items():
            if b.child is not None:
                check(b.child, path + [a], step.cut_rank, (b.out_wire_dim, b.out_quantum_dim))

    if root.cut_rank > wire_dim:
        reasons.append(f"root: cut rank {root.cut_rank} exceeds the wire dimension {wire_dim}")
    check(root, [], None, (wire_dim, q_dim))
    depth = root.depth()
    if depth > max(wire_dim, 1):
        reasons.append(f"protocol length {depth} exceeds the wire dimension {wire_dim}")
    return NormalFormReport(not reasons, reasons, depth)


def normal_form_kraus(root: NormalFormStep | None, dims: tuple[int, int]):
    """``(outcome path, Kraus)`` for every normal-form branch, in wire-first coordinates."""
    if root is None:
        return [((), np.eye(dims[0] * dims[1], dtype=complex))]
    out = []

    def walk(step, k, path):
        for a in sorted(step.branches, key=_flat_key):
            b = step.branches[a]
            kk = step.kraus(a) @ k
            if b.child is None:
                out.append((tuple(path + [a]), kk))
            else:
                walk(b.child, kk, path + [a])

    walk(root, np.eye(root.in_wire_dim * root.in_quantum_dim, dtype=complex), [])
    return out


def _flat_key(key) -> tuple:
    if isinstance(key, tuple):
        return tuple(x for k in key for x in _flat_key(k))
    return (key,)


def _injective_step(op_kraus, layout, new_layout, op: ElementalOp) -> NormalFormStep:
    from .lop import wire_structure

    dw, dq = layout.wire_dim, layout.quantum_dim
    ow, oq = new_layout.wire_dim, new_layout.quantum_dim
    branches = {}
    for a, k in enumerate(op_kraus):
        kw = to_wire_first(k, layout, new_layout).reshape(ow, oq, dw, dq)
        if op.kind == "observed":
            adim = new_layout.register(op.ancilla).dim
            labels = [i * adim + a for i in range(dw)]
        else:
            labels, _ = wire_structure(k, layout, new_layout)
        ops = tuple(kw[labels[i], :, i, :].copy() for i in range(dw))
        branches[a] = NormalFormBranch(tuple(labels), ops, ow, oq)
    return NormalFormStep(dw, dw, dq, branches)


def _forward_chain(layout: SystemLayout, source: str):
    """Collapse steps implementing a forward of ``source``.

    Returns the list of steps as ``(cut, in_wire, out_wire, branch_builder)``; the
    chain is linked by ``_attach``.
    """
    wires = list(layout.wire_names)
    dims = [layout.register(n).dim for n in wires]
    pos = wires.index(source)
    d = dims[pos]
    big = layout.wire_dim
    q = layout.quantum_dim
    s = big // d
    digits = np.indices(dims).reshape(len(dims), -1)
    j_of = digits[pos]
    rest_dims = dims[:pos] + dims[pos + 1:]
    rest_digits = np.delete(digits, pos, axis=0)
    rest_of = np.ravel_multi_index(tuple(rest_digits), rest_dims) if rest_dims else np.zeros(big, int)
    eye_q = np.eye(q)
    if d == 1:
        ops = tuple(np.kron(eye_q, np.ones((1, 1))) for _ in range(big))
        return [NormalFormStep(big, big, q, {0: NormalFormBranch(tuple(int(x) for x in rest_of), ops, s, q)})]

    zero = np.zeros((d, 1))
    zero[0, 0] = 1
    first = NormalFormBranch(
        tuple(int(rest_of[i] * d + j_of[i]) for i in range(big)),
        tuple(np.kron(eye_q, zero) for _ in range(big)),
        big,
        q * d,
    )
    steps = [NormalFormStep(big, big, q, {0: first})]
    for g in range(s - 1, -1, -1):
        c = s - 1 - g
        r = c + g * d + 1
        width = c + (g + 1) * d
        rotate = tuple(0 if x == r - 1 else x + 1 for x in range(r))
        branches = {}
        for beta in range(d):
            ops = []
            for x in range(width):
                if x >= r - 1:
                    j = x - (r - 1)
                    e = np.zeros((d, d))
                    e[(j + beta) % d, beta] = 1
                    ops.append(np.kron(eye_q, e))
                else:
                    ops.append(np.eye(q * d) if beta == 0 else np.zeros((q * d, q * d)))
            branches[beta] = NormalFormBranch(rotate, tuple(ops), r, q * d)
        steps.append(NormalFormStep(r, width, q * d, branches))
    return steps


def _with_children(step: NormalFormStep, child_of) -> NormalFormStep:
    branches = {
        a: NormalFormBranch(b.injection, b.ops, b.out_wire_dim, b.out_quantum_dim, child_of(a))
        for a, b in step.branches.items()
    }
    return NormalFormStep(step.cut_rank, step.in_wire_dim, step.in_quantum_dim, branches)


def _chain(steps: list, tail) -> NormalFormStep:
    """Link ``steps`` so every outcome of each continues into the next; ``tail`` ends it."""
    node = None
    for idx in range(len(steps) - 1, -1, -1):
        nxt = node
        if idx == len(steps) - 1:
            node = _with_children(steps[idx], tail)
        else:
            node = _with_children(steps[idx], lambda a, nxt=nxt: nxt)
    return node


def _fix(step: NormalFormStep, max_wire_dim: int) -> NormalFormStep:
    """Restore strictly decreasing cuts below ``step`` (children already normal)."""
    r_p = step.cut_rank
    pending = list(step.branches.items())
    done = {}
    while pending:
        key, br = pending.pop(0)
        c = br.child
        if br.out_wire_dim > max_wire_dim:
            raise ValueError(f"wire dimension {br.out_wire_dim} exceeds max_wire_dim={max_wire_dim}")
        if c is None or c.cut_rank < r_p:
            done[key] = br
            continue
        sig = br.injection
        ranked = sorted(sig)
        eta = tuple(ranked.index(x) for x in sig)
        v = [min(c.cut_rank - 1, x) for x in ranked]
        distinct = len(set(v))
        if distinct < r_p:
            kids = {}
            for beta, cb in c.branches.items():
                kids[beta] = NormalFormBranch(
                    tuple(cb.injection[v[m]] for m in range(distinct)),
                    tuple(cb.ops[ranked[k]] for k in range(r_p)),
                    cb.out_wire_dim,
                    cb.out_quantum_dim,
                    cb.child,
                )
            new_child = _fix(NormalFormStep(distinct, r_p, c.in_quantum_dim, kids), max_wire_dim)
            done[key] = NormalFormBranch(eta, br.ops, r_p, br.out_quantum_dim, new_child)
        else:
            for beta, cb in c.branches.items():
                inj = tuple(cb.injection[min(c.cut_rank - 1, x)] for x in sig)
                ops = tuple(
                    cb.ops[sig[min(r_p - 1, i)]] @ e for i, e in enumerate(br.ops)
                )
                if not any(np.any(np.abs(e) > ZERO_KRAUS) for e in ops):
                    continue  # vanishing branch: contributes nothing to the map
                pending.append(((key, beta), NormalFormBranch(inj, ops, cb.out_wire_dim,
                                                              cb.out_quantum_dim, cb.child)))
    ordered = sorted(done, key=_flat_key)
    return NormalFormStep(step.cut_rank, step.in_wire_dim, step.in_quantum_dim,
                          {i: done[k] for i, k in enumerate(ordered)})


def _normalize(step: NormalFormStep | None, max_wire_dim: int, memo: dict | None = None
               ) -> NormalFormStep | None:
    # forward chains share subtrees between outcomes; normalize each shared node once
    if step is None:
        return None
    memo = {} if memo is None else memo
    hit = memo.get(id(step))
    if hit is None:
        kids = {a: _normalize(b.child, max_wire_dim, memo) for a, b in step.branches.items()}
        hit = (step, _fix(_with_children(step, kids.__getitem__), max_wire_dim))
        memo[id(step)] = hit
    return hit[1]


@dataclass(frozen=True, eq=False)
class CompiledNormalForm:
    root: NormalFormStep | None
    in_layout: SystemLayout
    out_layout: SystemLayout | None

    @property
    def dims(self) -> tuple[int, int]:
        return self.in_layout.wire_dim, self.in_layout.quantum_dim

    def verify(self, tol: float = TOL) -> NormalFormReport:
        return verify_normal_form(self.root, self.dims, tol)

    def kraus(self):
        return [k for _, k in normal_form_kraus(self.root, self.dims)]

    def branch_lengths(self) -> list[int]:
        return [len(p) for p, _ in normal_form_kraus(self.root, self.dims)]

    def output_wire_dims(self) -> list[int]:
        out = []

        def walk(step):
            for b in step.branches.values():
                if b.child is None:
                    out.append(b.out_wire_dim)
                else:
                    walk(b.child)

        if self.root is None:
            return [self.in_layout.wire_dim]
        walk(self.root)
        return out

    def channel_in_layout(self) -> QuantumChannel:
        """Recomposed map in the register order of the input and output layouts."""
        if self.out_layout is None:
            raise ValueError("branches end in different layouts")
        pin = np.argsort(_wire_first(self.in_layout))
        pout = np.argsort(_wire_first(self.out_layout))
        return QuantumChannel(tuple(k[np.ix_(pout, pin)] for k in self.kraus()))

    def choi_distance(self, tree: ProtocolTree) -> float:
        ch, _ = to_channel(tree, self.in_layout)
        return choi_distance(self.channel_in_layout(), ch)


def _wire_first(layout: SystemLayout) -> np.ndarray:
    from .lop import wire_first_index

    return wire_first_index(layout)


def compile_normal_form(tree: ProtocolTree, layout: SystemLayout,
                        max_wire_dim: int = MAX_WIRE_DIM) -> CompiledNormalForm:
    """Rewrite a tree of elemental operations as cut-rank steps with decreasing cuts."""
    elem = _Elementals()
    leaf_layouts = set()

    def build(node, lay):
        if node.is_leaf:
            leaf_layouts.add(lay)
            return None
        if lay.wire_dim > max_wire_dim:
            raise ValueError(f"wire dimension {lay.wire_dim} exceeds max_wire_dim={max_wire_dim}")
        ch, new = elem(node.op, lay)
        if node.op.kind == "forward":
            tail = build(node.child(0), new)
            return _chain(_forward_chain(lay, node.op.source), lambda a: tail)
        step = _injective_step(ch.kraus, lay, new, node.op)
        kids = {a: build(node.child(a), new) for a in step.branches}
        return _with_children(step, kids.__getitem__)

    root = _normalize(build(tree, layout), max_wire_dim)
    out_layout = leaf_layouts.pop() if len(leaf_layouts) == 1 else None
    return CompiledNormalForm(root, layout, out_layout)


# -- LOCC translation --------------------------------------------------------------


def copy_names(wire: str) -> tuple[str, str]:
    return f"{wire}@1", f"{wire}@2"


def double_wires(layout: SystemLayout) -> tuple[SystemLayout, np.ndarray]:
    """Two-party layout with every wire split into local copies, and the map
    ``|i>_w -> |i>_{w@1}|i>_{w@2}``."""
    regs = []
    for r in layout.registers:
        if r.kind == "wire":
            a, b = copy_names(r.name)
            regs += [Register(a, r.dim, "quantum", 1), Register(b, r.dim, "quantum", 2)]
        else:
            regs.append(r)
    new = SystemLayout(tuple(regs))
    digits = np.indices(layout.dims).reshape(len(layout.dims), -1) if layout.registers else np.zeros((0, 1), int)
    rows = []
    for r, dig in zip(layout.registers, digits):
        rows.append(dig)
        if r.kind == "wire":
            rows.append(dig)
    out_idx = np.ravel_multi_index(tuple(rows), new.dims) if rows else np.zeros(1, int)
    v = np.zeros((new.total_dim, layout.total_dim), dtype=complex)
    v[out_idx, np.arange(layout.total_dim)] = 1
    return new, v


def _party_of(op: ElementalOp, layout: SystemLayout) -> int:
    parties = {layout.register(n).party for n in op.registers}
    if op.party is not None:
        parties.add(op.party)
    if not parties:
        return 1
    if len(parties) != 1 or parties.pop() not in (1, 2):
        raise ValueError("operation is not local to one of the two parties")
    return op.party if op.party is not None else layout.register(op.registers[0]).party


def _check_bipartite(layout: SystemLayout):
    for r in layout.registers:
        if r.kind == "quantum" and r.party not in (1, 2):
            raise ValueError(f"quantum register {r.name} is not assigned to party 1 or 2")


def translate_to_locc(tree: ProtocolTree, layout: SystemLayout) -> tuple[ProtocolTree, SystemLayout]:
    """Replace every wire operation by local operations on two classical copies of the wire.

    Returns the two-party tree and its input layout.  Steps that carry an outcome
    of the original protocol are tagged ``carry``; Fourier erasures are tagged
    ``erase``.
    """
    _check_bipartite(layout)

    def other(s):
        return 3 - s

    def tr(node, lay):
        if node.is_leaf:
            return LEAF
        op = node.op
        new = next_layout(op, lay)
        if op.kind in ("permutation", "phase"):
            regs = list(op.registers)
            d = lay.dim_of(regs)
            if op.kind == "permutation":
                m = np.zeros((d, d))
                m[list(op.table), list(range(d))] = 1
                return seq(
                    ElementalOp.local([copy_names(n)[0] for n in regs], [m], party=1, tag="aux"),
                    ElementalOp.local([copy_names(n)[1] for n in regs], [m], party=2, tag="aux"),
                    then=tr(node.child(0), new),
                )
            m = np.diag(np.exp(1j * np.asarray(op.angles)))
            return seq(ElementalOp.local([copy_names(n)[0] for n in regs], [m], party=1, tag="aux"),
                       then=tr(node.child(0), new))
        if op.kind == "observed":
            s = _party_of(op, lay)
            adim = new.register(op.ancilla).dim
            near, far = copy_names(op.ancilla)[s - 1], copy_names(op.ancilla)[other(s) - 1]
            outs = list(op.outputs) if op.outputs is not None else [(n, lay.register(n).dim) for n in op.registers]
            tagged = [np.kron(k, np.eye(adim)[:, [a]]) for a, k in enumerate(op.kraus)]
            meas = ElementalOp.local(op.registers, tagged, outputs=outs + [(near, adim)], party=s, tag="carry")

            def after(a):
                prep = ElementalOp.local((), [np.eye(adim)[:, [a]]], outputs=[(far, adim)],
                                         party=other(s), tag="aux")
                return seq(prep, then=tr(node.child(a), new))

            return branch(meas, after)
        if op.kind == "forward":
            s = op.party
            if s not in (1, 2):
                raise ValueError("forward target must belong to party 1 or 2")
            d = lay.register(op.source).dim
            near, far = copy_names(op.source)[s - 1], copy_names(op.source)[other(s) - 1]
            phases = np.exp(2j * np.pi * np.outer(np.arange(d), np.arange(d)) / d)
            fourier = ElementalOp.local([far], [phases[k][None, :] / np.sqrt(d) for k in range(d)],
                                        outputs=[], party=other(s), tag="erase")
            cont = tr(node.child(0), new)

            def after(k):
                fix = ElementalOp.local([near], [np.diag(np.conj(phases[k]))], party=s, tag="aux")
                move = ElementalOp.local([near], [np.eye(d)], outputs=[(op.target, d)], party=s, tag="aux")
                return seq(fix, move, then=cont)

            return branch(fourier, after)
        raise ValueError(f"cannot translate operation kind {op.kind}")

    locc_layout, _ = double_wires(layout)
    return tr(tree, layout), locc_layout


def carried_outcomes(tree: ProtocolTree, path: Sequence[int], keep_kinds=("observed",),
                     keep_tags=("carry",)) -> tuple:
    """Project a path onto the outcomes of observed (or ``carry``-tagged) steps."""
    out = []
    node = tree
    for a in path:
        op = node.op
        if op.kind in keep_kinds or op.tag in keep_tags:
            out.append(a)
        node = node.child(a)
    return tuple(out)


def translation_distances(tree: ProtocolTree, layout: SystemLayout, eta_wire) -> dict:
    """Per-branch Choi distance between a wire protocol and its LOCC translation.

    The wire registers of ``layout`` start in ``eta_wire`` (joint state, layout
    order); the translation consumes the maximally correlated twin of it.  Maps
    are compared as functions of the quantum input registers.
    """
    locc_tree, locc_layout = translate_to_locc(tree, layout)
    eta_wire = as_matrix(eta_wire)
    wires = list(layout.wire_names)
    quantum = list(layout.quantum_names)
    dq = layout.dim_of(quantum)
    back = reorder_index(layout, wires + quantum)
    inv = np.argsort(back)
    _, v_in = double_wires(layout)

    def lop_input(e):
        full = np.kron(eta_wire, e)
        return full[np.ix_(inv, inv)]

    groups_lop: dict = {}
    for path, k, lay in leaf_operators(tree, layout):
        groups_lop.setdefault(carried_outcomes(tree, path), []).append((k, lay))
    groups_locc: dict = {}
    for path, k, lay in leaf_operators(locc_tree, locc_layout):
        groups_locc.setdefault(carried_outcomes(locc_tree, path, keep_kinds=()), []).append((k, lay))
    if set(groups_lop) != set(groups_locc):
        raise ValueError("translated protocol has a different outcome structure")

    def canonical(rho, lay):
        return reorder_state(rho, lay, sorted(lay.names))

    out = {}
    for key, items in groups_lop.items():
        def lop_map(e, items=items):
            acc = None
            for k, lay in items:
                dl, vl = double_wires(lay)
                r = vl @ k @ lop_input(e) @ k.conj().T @ vl.conj().T
                r = canonical(r, dl)
                acc = r if acc is None else acc + r
            return acc

        def locc_map(e, items=groups_locc[key]):
            acc = None
            for k, lay in items:
                r = k @ v_in @ lop_input(e) @ v_in.conj().T @ k.conj().T
                r = canonical(r, lay)
                acc = r if acc is None else acc + r
            return acc

        out[key] = choi_distance(choi_of_map(lop_map, dq), choi_of_map(locc_map, dq))
    return out


def then(tree: ProtocolTree, cont: ProtocolTree) -> ProtocolTree:
    """``tree`` with every leaf replaced by ``cont``."""
    if tree.is_leaf:
        return cont
    return ProtocolTree(tree.op, {a: then(c, cont) for a, c in tree.children.items()})
