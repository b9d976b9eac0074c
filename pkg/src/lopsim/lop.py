"""Register layouts, the elemental wire operations, and the CQ/IQO/SIO/PIO predicates.

Layouts are ordered lists of registers.  Composite indices are row-major in
declared order.  Wire registers carry a fixed incoherent basis; quantum
registers are unrestricted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .qcore import TOL, QuantumChannel, as_matrix, dephase, matrix_from_json, matrix_to_json

PATTERN_TOL = 1e-10
KINDS = ("wire", "quantum")
OP_KINDS = ("permutation", "phase", "observed", "forward", "local")


@dataclass(frozen=True)
class Register:
    name: str
    dim: int
    kind: str
    party: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"register kind must be wire or quantum, got {self.kind!r}")
        if int(self.dim) < 1:
            raise ValueError(f"register {self.name} has dim {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    def to_json(self) -> dict:
        out = {"name": self.name, "dim": self.dim, "kind": self.kind}
        if self.party is not None:
            out["party"] = self.party
        return out


@dataclass(frozen=True)
class SystemLayout:
    registers: tuple[Register, ...] = ()

    def __post_init__(self):
        regs = tuple(self.registers)
        names = [r.name for r in regs]
        if len(set(names)) != len(names):
            raise ValueError(f"register names must be unique: {names}")
        object.__setattr__(self, "registers", regs)

    @classmethod
    def of(cls, *specs) -> "SystemLayout":
        """Build from ``(name, dim, kind[, party])`` tuples or ``Register`` objects."""
        regs = [s if isinstance(s, Register) else Register(*s) for s in specs]
        return cls(tuple(regs))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(r.kind for r in self.registers)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims)) if self.registers else 1

    @property
    def wire_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers if r.kind == "wire")

    @property
    def quantum_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.registers if r.kind == "quantum")

    @property
    def wire_dim(self) -> int:
        return int(np.prod([r.dim for r in self.registers if r.kind == "wire"]))

    @property
    def quantum_dim(self) -> int:
        return int(np.prod([r.dim for r in self.registers if r.kind == "quantum"]))

    def __contains__(self, name) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.registers)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no register named {name!r}") from None

    def register(self, name: str) -> Register:
        return self.registers[self.index(name)]

    def dim_of(self, names: Iterable[str]) -> int:
        return int(np.prod([self.register(n).dim for n in names]))

    def without(self, names: Iterable[str]) -> "SystemLayout":
        drop = set(names)
        return SystemLayout(tuple(r for r in self.registers if r.name not in drop))

    def extended(self, *regs: Register) -> "SystemLayout":
        return SystemLayout(self.registers + tuple(regs))

    def to_json(self) -> list:
        return [r.to_json() for r in self.registers]

    @classmethod
    def from_json(cls, obj) -> "SystemLayout":
        if not isinstance(obj, list):
            raise ValueError("layout must be a JSON list of registers")
        regs = []
        for item in obj:
            try:
                regs.append(Register(item["name"], int(item["dim"]), item["kind"], item.get("party")))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"malformed register entry {item!r}") from exc
        return cls(tuple(regs))


def reorder_index(layout: SystemLayout, order: Sequence[str]) -> np.ndarray:
    """Flat original index for each position of the basis reordered to ``order``."""
    if sorted(order) != sorted(layout.names):
        raise ValueError("order must be a permutation of the layout registers")
    if not layout.registers:
        return np.zeros(1, dtype=int)
    grid = np.arange(layout.total_dim).reshape(layout.dims)
    axes = [layout.index(n) for n in order]
    return grid.transpose(axes).reshape(-1)


def wire_first_index(layout: SystemLayout) -> np.ndarray:
    return reorder_index(layout, layout.wire_names + layout.quantum_names)


def embed(mat, layout_in: SystemLayout, regs_in: Sequence[str], layout_out: SystemLayout,
          regs_out: Sequence[str]) -> np.ndarray:
    """Lift an operator on ``regs_in -> regs_out`` to the full layouts (identity elsewhere)."""
    mat = as_matrix(mat)
    rest_in = [n for n in layout_in.names if n not in regs_in]
    rest_out = [n for n in layout_out.names if n not in regs_out]
    if rest_in != rest_out or any(
        layout_in.register(n).dim != layout_out.register(n).dim for n in rest_in
    ):
        raise ValueError("untouched registers differ between input and output layouts")
    din, dout = layout_in.dim_of(regs_in), layout_out.dim_of(regs_out)
    if mat.shape != (dout, din):
        raise ValueError(f"operator shape {mat.shape} does not match registers ({dout}, {din})")
    rest = layout_in.dim_of(rest_in)
    idx_in = reorder_index(layout_in, list(regs_in) + rest_in)
    idx_out = reorder_index(layout_out, list(regs_out) + rest_out)
    full = np.zeros((layout_out.total_dim, layout_in.total_dim), dtype=complex)
    full[np.ix_(idx_out, idx_in)] = np.kron(mat, np.eye(rest))
    return full


# -- elemental operations ----------------------------------------------------


def _tuple_kraus(ops) -> tuple:
    return tuple(as_matrix(k) for k in ops)


@dataclass(frozen=True, eq=False)
class ElementalOp:
    """One elemental operation.

    ``permutation``/``phase`` act on wire registers via ``table``/``angles`` over
    the joint index of ``registers``.  ``observed`` applies the instrument
    ``kraus`` to quantum ``registers`` (producing ``outputs``) and writes the
    outcome into a fresh wire ``ancilla``.  ``forward`` moves wire ``source``
    into a new quantum register ``target``.  ``local`` is an unrecorded local
    instrument, used only by translated two-party protocols.
    """

    kind: str
    registers: tuple = ()
    table: tuple | None = None
    angles: tuple | None = None
    kraus: tuple = ()
    ancilla: str | None = None
    ancilla_dim: int | None = None
    outputs: tuple | None = None
    source: str | None = None
    target: str | None = None
    party: int | None = None
    tag: str | None = None

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown operation kind {self.kind!r}")
        object.__setattr__(self, "registers", tuple(self.registers))
        object.__setattr__(self, "kraus", _tuple_kraus(self.kraus))
        if self.outputs is not None:
            outs = tuple((str(o[0]), int(o[1])) for o in self.outputs)
            object.__setattr__(self, "outputs", outs)
        if self.kind == "permutation":
            table = tuple(int(t) for t in self.table)
            if sorted(table) != list(range(len(table))):
                raise ValueError("permutation table is not a bijection")
            object.__setattr__(self, "table", table)
        if self.kind == "phase":
            object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.kind in ("observed", "local") and not self.kraus:
            raise ValueError(f"{self.kind} operation needs Kraus operators")
        if self.kind == "observed" and not self.ancilla:
            raise ValueError("observed operation needs an ancilla wire name")
        if self.kind == "forward" and (not self.source or not self.target):
            raise ValueError("forward needs source and target names")

    @classmethod
    def permutation(cls, registers, table, tag=None) -> "ElementalOp":
        return cls("permutation", registers=_names(registers), table=tuple(table), tag=tag)

    @classmethod
    def phase(cls, registers, angles, tag=None) -> "ElementalOp":
        return cls("phase", registers=_names(registers), angles=tuple(angles), tag=tag)

    @classmethod
    def observed(cls, registers, kraus, ancilla, outputs=None, ancilla_dim=None, party=None,
                 tag=None) -> "ElementalOp":
        return cls("observed", registers=_names(registers), kraus=tuple(kraus), ancilla=ancilla,
                   ancilla_dim=ancilla_dim, outputs=outputs, party=party, tag=tag)

    @classmethod
    def forward(cls, source, target, party=None, tag=None) -> "ElementalOp":
        return cls("forward", source=source, target=target, party=party, tag=tag)

    @classmethod
    def local(cls, registers, kraus, outputs=None, party=None, tag=None) -> "ElementalOp":
        return cls("local", registers=_names(registers), kraus=tuple(kraus), outputs=outputs,
                   party=party, tag=tag)

    @property
    def n_outcomes(self) -> int:
        return len(self.kraus) if self.kind in ("observed", "local") else 1

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.registers:
            out["registers"] = list(self.registers)
        if self.table is not None:
            out["table"] = list(self.table)
        if self.angles is not None:
            out["angles"] = list(self.angles)
        if self.kraus:
            out["kraus"] = [matrix_to_json(k) for k in self.kraus]
        if self.ancilla is not None:
            out["ancilla"] = self.ancilla
        if self.ancilla_dim is not None:
            out["ancilla_dim"] = self.ancilla_dim
        if self.outputs is not None:
            out["outputs"] = [list(o) for o in self.outputs]
        for key in ("source", "target", "party", "tag"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out

    @classmethod
    def from_json(cls, obj) -> "ElementalOp":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ValueError(f"malformed operation {obj!r}")
        kw = dict(obj)
        if "kraus" in kw:
            kw["kraus"] = tuple(matrix_from_json(k) for k in kw["kraus"])
        if "registers" in kw:
            kw["registers"] = tuple(kw["registers"])
        for key in ("table", "angles", "outputs"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ValueError(f"malformed operation {obj!r}: {exc}") from exc


def _names(registers) -> tuple:
    return (registers,) if isinstance(registers, str) else tuple(registers)


def _require(layout: SystemLayout, names, kind: str, what: str):
    for n in names:
        reg = layout.register(n)
        if reg.kind != kind:
            raise ValueError(f"{what} requires {kind} registers, but {n} is a {reg.kind} register")


def _instrument_layout(op: ElementalOp, layout: SystemLayout):
    """Output layout and output-register order for observed/local instruments."""
    ins = list(op.registers)
    if op.outputs is None:
        outs = [(n, layout.register(n).dim) for n in ins]
    else:
        outs = list(op.outputs)
    out_names = [n for n, _ in outs]
    if len(set(out_names)) != len(out_names):
        raise ValueError("duplicate output register names")
    dims = dict(outs)
    regs = []
    for r in layout.registers:
        if r.name in ins:
            if r.name in dims:
                regs.append(replace(r, dim=dims[r.name]))
        else:
            if r.name in dims:
                raise ValueError(f"output register {r.name} already exists")
            regs.append(r)
    party = op.party
    if party is None and ins:
        party = layout.register(ins[0]).party
    for n, d in outs:
        if n not in ins:
            regs.append(Register(n, d, "quantum", party))
    return regs, out_names


def next_layout(op: ElementalOp, layout: SystemLayout) -> SystemLayout:
    """Layout after ``op`` without building its channel."""
    if op.kind in ("permutation", "phase"):
        return layout
    if op.kind == "forward":
        src = layout.register(op.source)
        return layout.without([op.source]).extended(Register(op.target, src.dim, "quantum", op.party))
    regs, _ = _instrument_layout(op, layout)
    if op.kind == "observed":
        adim = len(op.kraus) if op.ancilla_dim is None else int(op.ancilla_dim)
        regs.append(Register(op.ancilla, adim, "wire"))
    return SystemLayout(tuple(regs))


def _local_form(op: ElementalOp, layout: SystemLayout, tol: float = TOL):
    """``(per-outcome local matrices, input registers, output registers, new layout)``."""
    if op.kind in ("permutation", "phase"):
        regs = list(op.registers)
        _require(layout, regs, "wire", op.kind)
        d = layout.dim_of(regs)
        if op.kind == "permutation":
            if len(op.table) != d:
                raise ValueError("permutation table size does not match the registers")
            m = np.zeros((d, d), dtype=complex)
            m[list(op.table), list(range(d))] = 1
        else:
            if len(op.angles) != d:
                raise ValueError("phase angle count does not match the registers")
            m = np.diag(np.exp(1j * np.asarray(op.angles)))
        return [m], regs, regs, layout

    if op.kind == "forward":
        src = layout.register(op.source)
        if src.kind != "wire":
            raise ValueError(f"cannot forward quantum register {op.source}")
        if op.target in layout:
            raise ValueError(f"forward target {op.target} already exists")
        new = layout.without([op.source]).extended(Register(op.target, src.dim, "quantum", op.party))
        return [np.eye(src.dim, dtype=complex)], [op.source], [op.target], new

    # observed / local instruments
    ins = list(op.registers)
    _require(layout, ins, "quantum", op.kind)
    din = layout.dim_of(ins)
    gram = sum(k.conj().T @ k for k in op.kraus)
    if gram.shape != (din, din) or np.max(np.abs(gram - np.eye(din))) > tol:
        raise ValueError(f"{op.kind} operation Kraus set is not complete on {ins}")
    regs, out_names = _instrument_layout(op, layout)
    if op.kind == "local":
        return list(op.kraus), ins, out_names, SystemLayout(tuple(regs))
    n = len(op.kraus)
    adim = n if op.ancilla_dim is None else int(op.ancilla_dim)
    if adim < n:
        raise ValueError("ancilla wire too small for the outcomes")
    if op.ancilla in [r.name for r in regs]:
        raise ValueError(f"ancilla {op.ancilla} already exists")
    new = SystemLayout(tuple(regs) + (Register(op.ancilla, adim, "wire"),))
    tagged = [np.kron(k, np.eye(adim)[:, [a]]) for a, k in enumerate(op.kraus)]
    return tagged, ins, out_names + [op.ancilla], new


def elemental(op: ElementalOp, layout: SystemLayout, tol: float = TOL):
    """Channel of an elemental operation on the full layout, and the resulting layout."""
    mats, ins, outs, new = _local_form(op, layout, tol)
    return QuantumChannel(tuple(embed(m, layout, ins, new, outs) for m in mats)), new


def apply_local(mat, layout_in: SystemLayout, regs_in: Sequence[str], op_mat,
                layout_out: SystemLayout, regs_out: Sequence[str]) -> np.ndarray:
    """``embed(op_mat, ...) @ mat`` computed by reshaping, without the lifted operator."""
    mat = as_matrix(mat)
    cols = mat.shape[1]
    rest = [n for n in layout_in.names if n not in regs_in]
    din, drest = layout_in.dim_of(regs_in), layout_in.dim_of(rest)
    t = mat.reshape(list(layout_in.dims) + [cols])
    axes = [layout_in.index(n) for n in list(regs_in) + rest]
    t = t.transpose(axes + [len(axes)]).reshape(din, drest * cols)
    t = as_matrix(op_mat) @ t
    names = list(regs_out) + rest
    shape = [layout_out.register(n).dim for n in names]
    t = t.reshape(shape + [cols])
    perm = [names.index(n) for n in layout_out.names]
    return t.transpose(perm + [len(names)]).reshape(layout_out.total_dim, cols)


def act(op: ElementalOp, layout: SystemLayout, mat, tol: float = TOL):
    """Per-outcome ``K_a @ mat`` for the elemental channel ``K_a``, and the new layout."""
    mats, ins, outs, new = _local_form(op, layout, tol)
    return [apply_local(mat, layout, ins, m, new, outs) for m in mats], new


# -- class predicates ----------------------------------------------------------


def to_wire_first(mat, layout_in: SystemLayout, layout_out: SystemLayout | None = None) -> np.ndarray:
    layout_out = layout_in if layout_out is None else layout_out
    return as_matrix(mat)[np.ix_(wire_first_index(layout_out), wire_first_index(layout_in))]


def wire_structure(k, layout_in: SystemLayout, layout_out: SystemLayout | None = None,
                   threshold: float = PATTERN_TOL):
    """Split ``K`` into ``sum_i |f(i)><i| ⊗ E(i)``.

    Returns ``(f, blocks)`` where ``f[i]`` is the output wire label fed by wire
    label ``i`` (``None`` for an all-zero column block, ``-1`` when several row
    blocks are hit) and ``blocks[i]`` is the operator on the quantum part.
    """
    layout_out = layout_in if layout_out is None else layout_out
    kw = to_wire_first(k, layout_in, layout_out)
    dwi, qi = layout_in.wire_dim, layout_in.quantum_dim
    dwo, qo = layout_out.wire_dim, layout_out.quantum_dim
    t = kw.reshape(dwo, qo, dwi, qi)
    mags = np.max(np.abs(t), axis=(1, 3))
    f, blocks = [], []
    for i in range(dwi):
        hit = np.flatnonzero(mags[:, i] > threshold)
        if hit.size == 0:
            f.append(None)
            blocks.append(np.zeros((qo, qi), dtype=complex))
        elif hit.size == 1:
            f.append(int(hit[0]))
            blocks.append(t[hit[0], :, i, :].copy())
        else:
            f.append(-1)
            blocks.append(None)
    return f, blocks


def is_iqo_kraus(k, layout: SystemLayout, out_layout: SystemLayout | None = None,
                 threshold: float = PATTERN_TOL) -> bool:
    f, _ = wire_structure(k, layout, out_layout, threshold)
    return all(x != -1 for x in f)


@dataclass(frozen=True)
class ChannelClass:
    pio: bool
    sio: bool
    iqo: bool

    def to_dict(self) -> dict:
        return {"pio": self.pio, "sio": self.sio, "iqo": self.iqo}


def classify_channel(ch: QuantumChannel, layout: SystemLayout,
                     out_layout: SystemLayout | None = None,
                     threshold: float = PATTERN_TOL) -> ChannelClass:
    maps = [wire_structure(k, layout, out_layout, threshold)[0] for k in ch.kraus]
    iqo = all(x != -1 for f in maps for x in f)
    sio = iqo
    if sio:
        for f in maps:
            hits = [x for x in f if x is not None]
            if len(set(hits)) != len(hits):
                sio = False
                break
    pio = sio
    if pio:
        shared: dict[int, int] = {}
        for f in maps:
            for i, x in enumerate(f):
                if x is None:
                    continue
                if shared.setdefault(i, x) != x:
                    pio = False
        if pio and len(set(shared.values())) != len(shared):
            pio = False
    return ChannelClass(pio=pio, sio=sio, iqo=iqo)


def _parties(layout: SystemLayout) -> list[list[str]]:
    groups: dict = {}
    for r in layout.registers:
        if r.kind == "quantum":
            key = r.party if r.party is not None else ("reg", r.name)
            groups.setdefault(key, []).append(r.name)
    return list(groups.values())


def _partial_transpose(block: np.ndarray, dims: Sequence[int], which: Sequence[int]) -> np.ndarray:
    n = len(dims)
    t = block.reshape(list(dims) * 2)
    axes = list(range(2 * n))
    for i in which:
        axes[i], axes[n + i] = axes[n + i], axes[i]
    return t.transpose(axes).reshape(block.shape)


def cq_label(rho, layout: SystemLayout, tol: float = TOL, check_separability: bool = False) -> str:
    """``"not_cq"``, ``"cq"``, or ``"cq_up_to_ppt"`` (separability only tested by PPT)."""
    rho = as_matrix(rho)
    if np.max(np.abs(rho - dephase(rho, layout)), initial=0.0) > tol:
        return "not_cq"
    parties = _parties(layout)
    if not check_separability or len(parties) < 2:
        return "cq"
    qnames = list(layout.quantum_names)
    qdims = [layout.register(n).dim for n in qnames]
    dq = layout.quantum_dim
    wf = to_wire_first(rho, layout).reshape(layout.wire_dim, dq, layout.wire_dim, dq)
    for m in range(layout.wire_dim):
        block = wf[m, :, m, :]
        for group in parties:
            which = [qnames.index(n) for n in group]
            pt = _partial_transpose(block, qdims, which)
            if np.linalg.eigvalsh((pt + pt.conj().T) / 2)[0] < -tol:
                return "not_cq"
    return "cq_up_to_ppt"


def is_cq_state(rho, layout: SystemLayout, tol: float = TOL, check_separability: bool = False) -> bool:
    return cq_label(rho, layout, tol, check_separability) != "not_cq"


def wire_coherence_violation(rho, layout: SystemLayout) -> float:
    """Largest magnitude among entries coupling distinct wire-basis states."""
    rho = as_matrix(rho)
    return float(np.max(np.abs(rho - dephase(rho, layout)), initial=0.0))
