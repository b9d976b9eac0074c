"""A qutrit-wire channel that never creates coherence but is not a wire protocol.

``certify_not_lop`` checks the numerical premises of the obstruction: the
channel is trace preserving and incoherent, one Kraus operator has a rank-one
Gram matrix, and no two distinct Kraus operators can be mixed into another
incoherent operator.  It verifies premises; it does not decide membership for
arbitrary channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .lop import SystemLayout, is_iqo_kraus
from .qcore import QuantumChannel, as_matrix

RANK_CUTOFF = 1e-10
ENTRY_TOL = 1e-12

_HALF = 0.5


def build_counterexample() -> QuantumChannel:
    h = _HALF
    k1 = [[h, -h, 0], [0, 0, h], [0, 0, 0]]
    k2 = [[h, 0, -h], [0, h, 0], [0, 0, 0]]
    k3 = [[0, h, -h], [h, 0, 0], [0, 0, 0]]
    k4 = [[h, h, h], [0, 0, 0], [0, 0, 0]]
    return QuantumChannel(tuple(np.array(k, dtype=complex) for k in (k1, k2, k3, k4)))


def _column_ratios(a: np.ndarray, b: np.ndarray, tol: float):
    """Ratios ``t`` for which ``a + t b`` has at most one nonzero entry (``None`` = all)."""
    nz_a, nz_b = np.abs(a) > tol, np.abs(b) > tol
    if (nz_a | nz_b).sum() <= 1:
        return None
    allowed = set()
    for keep in range(a.size):
        ts = set()
        ok = True
        for i in range(a.size):
            if i == keep or not (nz_a[i] or nz_b[i]):
                continue
            if not nz_b[i]:
                ok = False
                break
            ts.add(complex(np.round(-a[i] / b[i], 12)))
        if ok and len(ts) <= 1:
            allowed |= ts
    return allowed


def mixable(a, b, tol: float = ENTRY_TOL) -> bool:
    """Is ``a + t b`` incoherent for some nonzero finite ``t``?"""
    a, b = as_matrix(a), as_matrix(b)
    common = None
    for j in range(a.shape[1]):
        r = _column_ratios(a[:, j], b[:, j], tol)
        if r is None:
            continue
        r = {t for t in r if abs(t) > tol}
        common = r if common is None else common & r
        if not common:
            return False
    return True


@dataclass(frozen=True)
class ObstructionCertificate:
    cptp_ok: bool
    iqo_ok: bool
    k4_rank_one: bool
    pairwise_rigidity: dict = field(default_factory=dict)
    cptp_residual: float = 0.0
    rank_one_index: int | None = None

    @property
    def verdict(self) -> bool:
        return (self.cptp_ok and self.iqo_ok and self.k4_rank_one
                and bool(self.pairwise_rigidity) and all(self.pairwise_rigidity.values()))

    def to_json(self) -> dict:
        return {
            "cptp_ok": self.cptp_ok,
            "cptp_residual": self.cptp_residual,
            "iqo_ok": self.iqo_ok,
            "k4_rank_one": self.k4_rank_one,
            "rank_one_index": self.rank_one_index,
            "pairwise_rigidity": {f"{s},{t}": v for (s, t), v in sorted(self.pairwise_rigidity.items())},
            "verdict": self.verdict,
        }


def certify_not_lop(ch: QuantumChannel, tol: float = 1e-12) -> ObstructionCertificate:
    """Check the obstruction premises; Kraus operators are numbered from 1."""
    d = ch.in_dim
    layout = SystemLayout.of(("W", d, "wire"))
    residual = ch.completeness_residual()
    iqo = all(is_iqo_kraus(k, layout) for k in ch.kraus)
    rank_one = None
    for s in reversed(range(len(ch.kraus))):
        k = ch.kraus[s]
        w = np.linalg.eigvalsh(k.conj().T @ k)
        if int(np.sum(w > RANK_CUTOFF)) == 1:
            rank_one = s + 1
            break
    rigid = {(s + 1, t + 1): not mixable(ch.kraus[s], ch.kraus[t])
             for s, t in combinations(range(len(ch.kraus)), 2)}
    return ObstructionCertificate(residual < tol, iqo, rank_one is not None, rigid, residual, rank_one)


def stochastic_rate_check(ch: QuantumChannel, rho=None, rng=None) -> float:
    """Success probability of the heralded construction on ``rho`` (random if omitted)."""
    from .protocols_std import iqo_stochastic
    from .randomized import random_density

    d = ch.in_dim
    proto = iqo_stochastic(ch, d)
    if rho is None:
        rho = random_density(d, rng=rng)
    return proto.success_probability(rho)
