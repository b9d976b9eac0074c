import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lopsim.cxample import build_counterexample
from lopsim.lop import (
    ElementalOp,
    Register,
    SystemLayout,
    act,
    classify_channel,
    cq_label,
    elemental,
    embed,
    is_cq_state,
    is_iqo_kraus,
    next_layout,
    wire_coherence_violation,
)
from lopsim.protocol import execute, seq, to_channel
from lopsim.qcore import QuantumChannel, apply_channel, choi_distance, dephase
from lopsim.randomized import random_cq_state, random_density, random_tree, random_wire_layout

from conftest import plus_state

W2 = SystemLayout.of(("W", 2, "wire"))
WQ = SystemLayout.of(("W", 2, "wire"), ("Q", 2, "quantum"))


def test_layout_basics():
    lay = SystemLayout.of(("W1", 3, "wire"), ("Q", 2, "quantum"), ("W2", 2, "wire"))
    assert lay.total_dim == 12
    assert lay.wire_names == ("W1", "W2") and lay.quantum_names == ("Q",)
    assert lay.wire_dim == 6 and lay.quantum_dim == 2
    assert SystemLayout.from_json(json.loads(json.dumps(lay.to_json()))) == lay


def test_layout_rejects_duplicates_and_bad_dims():
    with pytest.raises(ValueError):
        SystemLayout.of(("W", 2, "wire"), ("W", 2, "quantum"))
    with pytest.raises(ValueError):
        Register("W", 0, "wire")
    with pytest.raises(ValueError):
        Register("W", 2, "classical")


def test_swap_permutation_is_pauli_x():
    ch, lay = elemental(ElementalOp.permutation("W", [1, 0]), W2)
    assert lay == W2
    assert np.allclose(ch.kraus[0], [[0, 1], [1, 0]])


def test_permutation_acts_on_its_factor_only():
    ch, _ = elemental(ElementalOp.permutation("W", [1, 0]), WQ)
    assert np.allclose(ch.kraus[0], np.kron([[0, 1], [1, 0]], np.eye(2)))


def test_phase_is_diagonal():
    ch, _ = elemental(ElementalOp.phase("W", [0.0, 0.7]), W2)
    assert np.allclose(ch.kraus[0], np.diag([1, np.exp(0.7j)]))


def test_observed_measurement_records_outcome_on_new_wire():
    lay = SystemLayout.of(("Q", 2, "quantum"))
    op = ElementalOp.observed("Q", [np.diag([1, 0]), np.diag([0, 1])], ancilla="A")
    ch, new = elemental(op, lay)
    assert new.names == ("Q", "A") and new.register("A").kind == "wire"
    for a, k in enumerate(ch.kraus):
        f = np.diag(np.eye(2)[a])
        assert np.allclose(k, np.kron(f, np.eye(2)[:, [a]]))


def test_forward_dim3_is_basis_copy():
    lay = SystemLayout.of(("Ws", 3, "wire"))
    ch, new = elemental(ElementalOp.forward("Ws", "Qt"), lay)
    assert new.names == ("Qt",) and new.register("Qt").kind == "quantum"
    expected = sum(np.outer(np.eye(3)[j], np.eye(3)[j]) for j in range(3))
    assert np.allclose(ch.kraus[0], expected)


def test_forward_moves_register_to_end():
    lay = SystemLayout.of(("W", 2, "wire"), ("Q", 3, "quantum"))
    ch, new = elemental(ElementalOp.forward("W", "T"), lay)
    assert new.names == ("Q", "T")
    rho_w, sigma = plus_state(), random_density(3, rng=1)
    out = apply_channel(ch, np.kron(rho_w, sigma))
    assert np.allclose(out, np.kron(sigma, rho_w))


def test_elemental_errors():
    with pytest.raises(ValueError):
        elemental(ElementalOp.forward("Q", "T"), WQ)
    with pytest.raises(ValueError):
        elemental(ElementalOp.observed("Q", [np.diag([1, 0])], ancilla="A"), WQ)
    with pytest.raises(ValueError):
        elemental(ElementalOp.permutation("Q", [1, 0]), WQ)
    with pytest.raises(ValueError):
        ElementalOp.permutation("W", [0, 0])
    with pytest.raises(ValueError):
        elemental(ElementalOp.forward("W", "Q"), WQ)


def test_op_json_round_trip():
    op = ElementalOp.observed("Q", [np.eye(2) / np.sqrt(2), np.diag([1, -1]) / np.sqrt(2)],
                              ancilla="A", outputs=[("Q", 2)], party=1, tag="t")
    back = ElementalOp.from_json(json.loads(json.dumps(op.to_json())))
    assert back.to_json() == op.to_json()
    with pytest.raises(ValueError):
        ElementalOp.from_json({"kind": "teleport"})


def test_cq_examples(rng):
    lay = WQ
    assert is_cq_state(random_cq_state(lay, rng), lay)
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    assert not is_cq_state(np.outer(bell, bell), lay)
    assert not is_cq_state(np.kron(plus_state(), random_density(2, rng=rng)), lay)


def test_cq_separability_flag_uses_ppt():
    lay = SystemLayout.of(("W", 2, "wire"), ("A", 2, "quantum", 1), ("B", 2, "quantum", 2))
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    rho = np.kron(np.diag([1, 0]), np.outer(bell, bell))
    assert cq_label(rho, lay) == "cq"
    assert cq_label(rho, lay, check_separability=True) == "not_cq"
    assert cq_label(np.eye(8) / 8, lay, check_separability=True) == "cq_up_to_ppt"


def test_iqo_kraus_examples():
    k4 = build_counterexample().kraus[3]
    assert is_iqo_kraus(k4, SystemLayout.of(("W", 3, "wire")))
    assert is_iqo_kraus([[1, 1], [0, 0]], W2)
    assert not is_iqo_kraus(np.array([[1, 1], [1, -1]]) / np.sqrt(2), W2)


def test_classify_examples():
    phase = QuantumChannel.unitary(np.diag(np.exp(1j * np.array([0.1, 0.5, 2.0]))))
    assert classify_channel(phase, SystemLayout.of(("W", 3, "wire"))).to_dict() == \
        {"pio": True, "sio": True, "iqo": True}
    x = np.array([[0, 1], [1, 0]])
    mixed_perms = QuantumChannel((np.eye(2) / np.sqrt(2), x / np.sqrt(2)))
    c = classify_channel(mixed_perms, W2)
    assert c.sio and not c.pio
    ce = classify_channel(build_counterexample(), SystemLayout.of(("W", 3, "wire")))
    assert ce.iqo and not ce.sio


def test_forward_then_measure_equals_direct_wire_measurement():
    for d in (2, 3, 4):
        lay = SystemLayout.of(("W", d, "wire"))
        proj = [np.outer(np.eye(d)[j], np.eye(d)[j])[[j]] for j in range(d)]
        tree = seq(ElementalOp.forward("W", "T"),
                   ElementalOp.observed("T", proj, ancilla="A", outputs=()))
        ch, out = to_channel(tree, lay)
        assert out.names == ("A",)
        direct = QuantumChannel(tuple(np.outer(np.eye(d)[j], np.eye(d)[j]) for j in range(d)))
        assert choi_distance(ch, direct) < 1e-9


# -- properties --------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_act_matches_lifted_operator(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng)
    tree = random_tree(lay, 3, rng)
    node, cur = tree, lay
    while not node.is_leaf:
        ch, new = elemental(node.op, cur)
        m = rng.normal(size=(cur.total_dim, 2)) + 1j * rng.normal(size=(cur.total_dim, 2))
        fast, new2 = act(node.op, cur, m)
        assert new2 == new == next_layout(node.op, cur)
        for k, f in zip(ch.kraus, fast):
            assert np.allclose(k @ m, f, atol=1e-13)
        node, cur = node.child(0), new


def test_embed_places_operator_on_named_registers(rng):
    lay = SystemLayout.of(("A", 2, "quantum"), ("B", 3, "quantum"))
    u = rng.normal(size=(3, 3))
    full = embed(u, lay, ["B"], lay, ["B"])
    assert np.allclose(full, np.kron(np.eye(2), u))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_elemental_kraus_preserve_cq_states(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng)
    tree = random_tree(lay, 1, rng)
    ch, new = elemental(tree.op, lay)
    rho = random_cq_state(lay, rng)
    for k in ch.kraus:
        assert wire_coherence_violation(k @ rho @ k.conj().T, new) < 1e-9


def test_classification_chain_on_random_channels(rng):
    from lopsim.randomized import random_channel, random_iqo_channel

    lay = SystemLayout.of(("W", 3, "wire"))
    for i in range(100):
        ch = random_iqo_channel(3, 1, 2, rng) if i % 2 else random_channel(3, 3, 2, rng)
        c = classify_channel(ch, lay)
        assert (not c.pio or c.sio) and (not c.sio or c.iqo)


def test_free_state_preservation_over_random_sequences(rng):
    worst = 0.0
    for _ in range(1000):
        lay = random_wire_layout(rng)
        tree = random_tree(lay, int(rng.integers(1, 5)), rng)
        rho = random_cq_state(lay, rng)
        for path in execute(tree, rho, lay, mode="all_branches"):
            st_ = path.state
            worst = max(worst, wire_coherence_violation(st_, path.layout))
            assert np.allclose(dephase(st_, path.layout), st_, atol=1e-9)
    assert worst < 1e-9
