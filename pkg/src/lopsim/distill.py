"""Coherence pumping on qubit wires and its Monte Carlo.

A symmetric qubit wire state ``[[1/2, p/2], [p/2, 1/2]]`` is labelled by
``p``.  One pumping step consumes a weakly coherent copy labelled ``q``: CNOT
from the target wire into the copy, then a ``<+|``/``<-|`` measurement.  The
label performs a biased walk that only stops at ``p = 1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .lop import SystemLayout, is_cq_state, wire_first_index
from .qcore import QuantumChannel, apply_channel, as_matrix, partial_trace

BLOCK = 1000
SEARCH_CAP = 1000
SEARCH_TOL = 1e-10


def symmetric_state(p: float) -> np.ndarray:
    return np.array([[0.5, p / 2], [p / 2, 0.5]], dtype=complex)


def step_update(p: float, q: float) -> list[tuple[float, float]]:
    """``[(probability, new p)]`` for the ``+`` and ``-`` outcomes; null outcomes are skipped."""
    out = []
    for sign in (1, -1):
        prob = (1 + sign * p * q) / 2
        if prob > 0:
            out.append((prob, (p + sign * q) / (1 + sign * p * q)))
    return out


_CNOT = np.eye(4)[[0, 1, 3, 2]]
_PM = [np.kron(np.array([[1, s]]) / np.sqrt(2), np.eye(2)) for s in (1, -1)]


_FLIP = np.diag([1, -1]).astype(complex)


def step_oracle(p: float, q: float) -> list[tuple[float, np.ndarray]]:
    """Same step on density matrices: ``[(probability, 2x2 post-state)]`` per outcome.

    After ``-`` the kept wire gets a phase flip, so both outcomes carry the
    label ``step_update`` reports (without it the ``-`` label is negated).
    """
    rho = np.kron(symmetric_state(p), symmetric_state(q))
    rho = apply_channel(QuantumChannel((_CNOT,)), rho)
    out = []
    for k, fix in zip(_PM, (np.eye(2), _FLIP)):
        post = fix @ k @ rho @ k.conj().T @ fix.conj().T
        prob = float(np.real(np.trace(post)))
        if prob > 0:
            out.append((prob, post / prob))
    return out


def expected_update(p: float, q: float) -> float:
    return float(sum(w * x for w, x in step_update(p, q)))


# -- Monte Carlo ---------------------------------------------------------------------


@dataclass(frozen=True)
class DistillParams:
    p0: float = 0.02
    q: float = 0.02
    trials: int = 10_000
    steps: int = 5_000
    seed: int = 0
    drop_negative: bool = True

    def __post_init__(self):
        if not 0 <= self.p0 <= 1:
            raise ValueError("p0 must lie in [0, 1]")
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")
        if self.trials < 1 or self.steps < 0:
            raise ValueError("need at least one trial and a non-negative step count")


@dataclass(frozen=True, eq=False)
class DistillTrace:
    """Per-step mean and spread of ``p/2`` over surviving trials, and the surviving fraction."""

    step: np.ndarray
    mean_p_half: np.ndarray
    std_p_half: np.ndarray
    survivors: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mean_p_half", "std_p_half", "survivors"])
        for row in zip(self.step, self.mean_p_half, self.std_p_half, self.survivors):
            w.writerow([int(row[0])] + [format(float(x), ".17g") for x in row[1:]])
        return buf.getvalue()

    def smoothed(self, window: int = 50) -> np.ndarray:
        """Moving average of ``mean_p_half`` over full windows."""
        return np.convolve(self.mean_p_half, np.ones(window) / window, mode="valid")

    def plateau(self, window: int = 50) -> float:
        return float(np.mean(self.mean_p_half[-window:]))


def trial_stream(seed: int, trial: int) -> np.random.Generator:
    """Private generator for one trial, independent of how trials are scheduled."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial])))


def _run_block(params: DistillParams, first: int, count: int):
    u = np.stack([trial_stream(params.seed, t).random(params.steps) for t in range(first, first + count)])
    q = params.q
    p = np.full(count, float(params.p0))
    alive = np.ones(count, dtype=bool)
    # away from saturation, count net rapidity steps so p = 0 stays exactly 0
    lattice = params.p0 < 1 and q < 1
    r0, a = (np.arctanh(params.p0), np.arctanh(q)) if lattice else (0.0, 0.0)
    k = np.zeros(count, dtype=np.int64)
    sums = np.empty(params.steps + 1)
    m2 = np.empty(params.steps + 1)
    n = np.empty(params.steps + 1)
    for t in range(params.steps + 1):
        live = p[alive]
        sums[t], n[t] = live.sum(), live.size
        m2[t] = ((live - sums[t] / n[t]) ** 2).sum() if live.size else 0.0
        if t == params.steps:
            break
        pq = p * q
        plus = u[:, t] < (1 + pq) / 2
        if lattice:
            k += np.where(plus, 1, -1)
            r = r0 + k * a
            p = np.tanh(r)
            negative = r < 0
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                p = np.where(plus, (p + q) / (1 + pq), (p - q) / (1 - pq))
            negative = p < 0
        if params.drop_negative:
            alive &= ~negative
    return sums, m2, n


def run_chain(params: DistillParams) -> DistillTrace:
    """Monte Carlo of repeated pumping; dropped trials leave the averages."""
    steps = params.steps + 1
    sums, m2, n = np.zeros(steps), np.zeros(steps), np.zeros(steps)
    with np.errstate(divide="ignore", invalid="ignore"):
        for first in range(0, params.trials, BLOCK):
            s, s2, c = _run_block(params, first, min(BLOCK, params.trials - first))
            # pairwise merge of (count, sum, squared deviations), blocks in fixed order
            both = n + c
            delta = np.where(c > 0, s / c, 0.0) - np.where(n > 0, sums / n, 0.0)
            cross = np.where((n > 0) & (c > 0), delta**2 * n * c / both, 0.0)
            m2 = m2 + s2 + cross
            sums += s
            n = both
        mean = np.where(n > 0, sums / n, np.nan)
        var = np.where(n > 0, m2 / n, np.nan)
    std = np.sqrt(var)
    return DistillTrace(np.arange(steps), mean / 2, std / 2, n / params.trials)


def exact_trace(params: DistillParams) -> DistillTrace:
    """Noise-free counterpart of ``run_chain``.

    Pumping adds rapidities: ``atanh`` of the label moves by ``±atanh(q)``, so
    after ``t`` steps a trial sits on one of ``2t + 1`` lattice points whose
    weights follow from a forward recursion.
    """
    if params.p0 >= 1 or params.q >= 1:
        raise ValueError("the lattice recursion needs p0 < 1 and q < 1")
    n = params.steps
    grid = np.tanh(np.arctanh(params.p0) + np.arange(-n, n + 1) * np.arctanh(params.q))
    w = np.zeros(2 * n + 1)
    w[n] = 1.0
    up = (1 + grid * params.q) / 2
    mean, std, surv = [], [], []
    for t in range(n + 1):
        mass = w.sum()
        m = (w @ grid) / mass if mass > 0 else np.nan
        mean.append(m)
        std.append(np.sqrt(max(0.0, (w @ grid**2) / mass - m * m)) if mass > 0 else np.nan)
        surv.append(mass)
        if t == n:
            break
        nxt = np.zeros_like(w)
        nxt[1:] += (w * up)[:-1]
        nxt[:-1] += (w * (1 - up))[1:]
        if params.drop_negative:
            nxt[np.arange(-n, n + 1) * np.arctanh(params.q) + np.arctanh(params.p0) < 0] = 0
        w = nxt
    return DistillTrace(np.arange(n + 1), np.array(mean) / 2, np.array(std) / 2, np.array(surv))


# -- preparing a symmetric qubit from an arbitrary non-free state -------------------------


@dataclass(frozen=True, eq=False)
class Extraction:
    ok: bool
    state: np.ndarray | None
    probability: float
    levels: tuple
    tries: int

    @property
    def p(self) -> float:
        return 0.0 if self.state is None else float(2 * self.state[0, 1].real)


def extract_qubit_block(rho, layout: SystemLayout, rng=None, max_tries: int = SEARCH_CAP) -> Extraction:
    """Turn a state with wire coherence into a symmetric qubit wire with real coherence.

    Picks the pair of wire levels with the largest coherence block.  If the
    wire has weight elsewhere, a doubled copy of the wire is projected onto
    ``(<i| + <j|)/sqrt2``.  The quantum side is then traced out, or, if that
    kills the coherence, measured along random rank-one projectors.  A phase
    makes the coherence real and a random relabelling of the two levels
    symmetrizes the populations.
    """
    rho = as_matrix(rho)
    if is_cq_state(rho, layout):
        raise ValueError("state carries no wire coherence")
    rng = np.random.default_rng(rng)
    idx = wire_first_index(layout)
    dw, dq = layout.wire_dim, layout.quantum_dim
    r = rho[np.ix_(idx, idx)].reshape(dw, dq, dw, dq)
    norms = {(i, j): np.linalg.norm(r[i, :, j, :]) for i in range(dw) for j in range(i + 1, dw)}
    i0, j0 = max(norms, key=norms.get)
    lv = [i0, j0]
    block = r[np.ix_(lv, range(dq), lv, range(dq))].reshape(2 * dq, 2 * dq)
    outside = sum(np.trace(r[k, :, k, :]).real for k in range(dw) if k not in lv)
    if outside > SEARCH_TOL:
        block = block / 2
    joint = SystemLayout.of(("W", 2, "wire"), ("Q", dq, "quantum"))

    sigma = partial_trace(block, joint, ["W"])
    tries = 0
    while abs(sigma[0, 1]) <= SEARCH_TOL:
        if tries == max_tries:
            return Extraction(False, None, 0.0, (i0, j0), tries)
        tries += 1
        phi = rng.normal(size=dq) + 1j * rng.normal(size=dq)
        phi /= np.linalg.norm(phi)
        proj = np.kron(np.eye(2), phi.conj().reshape(1, dq))
        sigma = proj @ block @ proj.conj().T
    prob = float(np.real(np.trace(sigma)))
    sigma = sigma / prob
    phase = np.diag([1, np.exp(1j * np.angle(sigma[0, 1]))])
    sigma = phase @ sigma @ phase.conj().T
    swap = np.array([[0, 1], [1, 0]])
    sigma = (sigma + swap @ sigma @ swap) / 2
    return Extraction(True, sigma, prob, (i0, j0), tries)
