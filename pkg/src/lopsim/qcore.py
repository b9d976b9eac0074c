"""Dense channel calculus: states, Kraus maps, partial traces, Choi matrices, entropies.

Density matrices and operators are plain complex ``numpy`` arrays.  Register
layouts are duck-typed: anything exposing ``dims`` (and ``kinds`` where wire
registers matter) works, as does a bare sequence of dimensions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-9
IDENTITY_TOL = 1e-12
EIG_CUTOFF = 1e-12


class CompletenessWarning(UserWarning):
    """Raised (as a warning) when a sub-normalized Kraus set exceeds the identity."""


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got array of shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if rows is not None and m.shape[0] != rows or cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected shape ({rows}, {cols}), got {m.shape}")
    return m


def check_density(rho, tol: float = TOL) -> np.ndarray:
    """Validate a density matrix and return it as a complex array."""
    m = as_matrix(rho)
    if m.shape[0] != m.shape[1]:
        raise ValueError("density matrix must be square")
    if np.max(np.abs(m - m.conj().T), initial=0.0) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(m) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(m).real:.3g}, not 1")
    if np.linalg.eigvalsh((m + m.conj().T) / 2)[0] < -tol:
        raise ValueError("density matrix is not positive semidefinite")
    return m


def pure_state(amplitudes, tol: float = TOL) -> np.ndarray:
    psi = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if abs(np.linalg.norm(psi) - 1) > tol:
        raise ValueError("pure state is not normalized")
    return psi


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1
    return v


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def kron_all(ops: Iterable) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """Finite Kraus representation of a (possibly sub-normalized) map.

    ``complete=False`` marks a post-selected branch, whose Kraus sum only needs
    to stay below the identity.
    """

    kraus: tuple
    complete: bool = True

    def __post_init__(self):
        ops = tuple(as_matrix(k) for k in self.kraus)
        if not ops:
            raise ValueError("a channel needs at least one Kraus operator")
        shape = ops[0].shape
        if any(k.shape != shape for k in ops):
            raise ValueError("Kraus operators have inconsistent shapes")
        object.__setattr__(self, "kraus", ops)

    @classmethod
    def from_kraus(cls, ops, complete: bool = True, tol: float = TOL) -> "QuantumChannel":
        ch = cls(tuple(ops), complete)
        if complete and ch.completeness_residual() > tol:
            raise ValueError(
                f"Kraus operators are not complete (residual {ch.completeness_residual():.3g})"
            )
        return ch

    @classmethod
    def identity(cls, dim: int) -> "QuantumChannel":
        return cls((np.eye(dim, dtype=complex),))

    @classmethod
    def unitary(cls, u) -> "QuantumChannel":
        return cls((as_matrix(u),))

    @property
    def in_dim(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.kraus[0].shape[0]

    def gram(self) -> np.ndarray:
        return sum(k.conj().T @ k for k in self.kraus)

    def completeness_residual(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.in_dim))))

    def excess(self) -> float:
        """Largest eigenvalue of the Kraus sum above one (0 when sub-normalized)."""
        top = np.linalg.eigvalsh(self.gram())[-1]
        return max(0.0, float(top) - 1.0)

    def compose(self, first: "QuantumChannel") -> "QuantumChannel":
        """``self`` after ``first``."""
        if first.out_dim != self.in_dim:
            raise ValueError("dimension mismatch in composition")
        ops = tuple(b @ a for b in self.kraus for a in first.kraus)
        return QuantumChannel(ops, self.complete and first.complete)

    def tensor(self, other: "QuantumChannel") -> "QuantumChannel":
        ops = tuple(np.kron(a, b) for a in self.kraus for b in other.kraus)
        return QuantumChannel(ops, self.complete and other.complete)


def apply_channel(ch: QuantumChannel, rho, tol: float = TOL) -> np.ndarray:
    """Kraus action ``sum_a K rho K^dagger``."""
    rho = as_matrix(rho)
    if rho.shape != (ch.in_dim, ch.in_dim):
        raise ValueError(f"channel expects dim {ch.in_dim}, state has dim {rho.shape[0]}")
    if ch.complete:
        if ch.completeness_residual() > tol:
            raise ValueError("channel marked complete violates completeness")
    elif ch.excess() > tol:
        warnings.warn("sub-normalized Kraus set exceeds the identity", CompletenessWarning)
    out = np.zeros((ch.out_dim, ch.out_dim), dtype=complex)
    for k in ch.kraus:
        out += k @ rho @ k.conj().T
    return out


def _dims(layout) -> list[int]:
    dims = getattr(layout, "dims", layout)
    return [int(d) for d in dims]


def _register_index(layout, key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return layout.index(key)


def partial_trace(rho, layout, keep: Sequence) -> np.ndarray:
    """Trace out every register not in ``keep``; kept registers follow ``keep`` order.

    ``keep`` holds register indices or, when ``layout`` is a ``SystemLayout``,
    register names.
    """
    rho = as_matrix(rho)
    dims = _dims(layout)
    if int(np.prod(dims)) != rho.shape[0]:
        raise ValueError("layout dimensions do not match the state")
    idx = [_register_index(layout, k) for k in keep]
    if len(set(idx)) != len(idx) or any(not 0 <= i < len(dims) for i in idx):
        raise ValueError(f"bad register selection {list(keep)}")
    n = len(dims)
    t = rho.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise ValueError("too many registers")
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in idx:
            col[i] = row[i]
    out = "".join(row[i] for i in idx) + "".join(col[i] for i in idx)
    kept = int(np.prod([dims[i] for i in idx])) if idx else 1
    return np.einsum("".join(row) + "".join(col) + "->" + out, t).reshape(kept, kept)


def choi_of(ch: QuantumChannel) -> np.ndarray:
    """``(id ⊗ ch)`` applied to ``sum_ij |ii><jj|``; input factor first."""
    d_in, d_out = ch.in_dim, ch.out_dim
    j = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for k in ch.kraus:
        v = k.T.reshape(-1)
        j += np.outer(v, v.conj())
    return j


def choi_of_map(fn, d_in: int) -> np.ndarray:
    """Choi matrix of an arbitrary linear map given as a function on matrices."""
    blocks = []
    for i in range(d_in):
        row = []
        for j in range(d_in):
            e = np.zeros((d_in, d_in), dtype=complex)
            e[i, j] = 1
            row.append(as_matrix(fn(e)))
        blocks.append(row)
    return np.block(blocks)


def choi_distance(a, b) -> float:
    """Max-norm distance between two channels (or two Choi matrices)."""
    ja = choi_of(a) if isinstance(a, QuantumChannel) else as_matrix(a)
    jb = choi_of(b) if isinstance(b, QuantumChannel) else as_matrix(b)
    if ja.shape != jb.shape:
        raise ValueError(f"Choi shapes differ: {ja.shape} vs {jb.shape}")
    return float(np.max(np.abs(ja - jb), initial=0.0))


def von_neumann_entropy(rho) -> float:
    w = np.linalg.eigvalsh(as_matrix(rho))
    w = w[w > EIG_CUTOFF]
    return float(-np.sum(w * np.log2(w)))


def relative_entropy(rho, sigma) -> float:
    """``tr rho (log rho - log sigma)`` in bits; ``inf`` when supports are not nested."""
    rho, sigma = as_matrix(rho), as_matrix(sigma)
    if rho.shape != sigma.shape:
        raise ValueError("states have different dimensions")
    ws, vs = np.linalg.eigh(sigma)
    weights = np.real(np.einsum("ik,ij,jk->k", vs.conj(), rho, vs))
    kernel = ws <= EIG_CUTOFF
    if np.sum(weights[kernel]) > 1e-10:
        return float("inf")
    cross = float(np.sum(weights[~kernel] * np.log2(ws[~kernel])))
    return max(0.0, -von_neumann_entropy(rho) - cross)


def wire_labels(layout) -> np.ndarray:
    """Joint wire-basis label of every computational basis index of ``layout``."""
    dims = _dims(layout)
    kinds = list(getattr(layout, "kinds"))
    grids = np.indices(dims).reshape(len(dims), -1) if dims else np.zeros((0, 1), int)
    label = np.zeros(grids.shape[1], dtype=int)
    for d, kind, g in zip(dims, kinds, grids):
        if kind == "wire":
            label = label * d + g
    return label


def dephase(rho, layout) -> np.ndarray:
    """Remove every coherence between distinct wire-basis states."""
    rho = as_matrix(rho)
    labels = wire_labels(layout)
    if labels.size != rho.shape[0]:
        raise ValueError("layout does not match the state")
    return np.where(labels[:, None] == labels[None, :], rho, 0)


def fidelity_pure(psi, rho) -> float:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return float(np.real(psi.conj() @ as_matrix(rho) @ psi))


# -- text format -----------------------------------------------------------


def matrix_to_json(m) -> dict:
    m = as_matrix(m)
    return {
        "rows": m.shape[0],
        "cols": m.shape[1],
        "data": [[float(z.real), float(z.imag)] for z in m.reshape(-1)],
    }


def matrix_from_json(obj) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix object: {exc}") from exc
    if len(data) != rows * cols:
        raise ValueError("matrix data length does not match rows*cols")
    flat = np.array([complex(re, im) for re, im in data], dtype=complex)
    return as_matrix(flat.reshape(rows, cols))


def state_to_json(rho) -> dict:
    out = matrix_to_json(rho)
    out["dim"] = out["rows"]
    return out


def state_from_json(obj, tol: float = TOL) -> np.ndarray:
    m = matrix_from_json(obj)
    if "dim" in obj and int(obj["dim"]) != m.shape[0]:
        raise ValueError("state dim does not match its matrix")
    return check_density(m, tol)


def channel_to_json(ch: QuantumChannel) -> dict:
    return {
        "in_dim": ch.in_dim,
        "out_dim": ch.out_dim,
        "kraus": [matrix_to_json(k) for k in ch.kraus],
    }


def channel_from_json(obj, tol: float = TOL) -> QuantumChannel:
    ops = [matrix_from_json(k) for k in obj["kraus"]]
    return QuantumChannel.from_kraus(ops, tol=tol)
