import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lopsim import protocols_std as std
from lopsim.lop import ElementalOp, SystemLayout
from lopsim.protocol import (
    LEAF,
    NormalFormBranch,
    NormalFormStep,
    ProtocolTree,
    branch,
    compile_normal_form,
    execute,
    iter_leaf_operators,
    seq,
    then,
    to_channel,
    translate_to_locc,
    translation_distances,
    verify_normal_form,
)
from lopsim.qcore import QuantumChannel, apply_channel, choi_distance
from lopsim.randomized import (
    random_density,
    random_tree,
    random_wire_layout,
)

from conftest import plus_state

Q2 = SystemLayout.of(("Q", 2, "quantum"))
W2 = SystemLayout.of(("W", 2, "wire"))


def _z_measurement():
    return ElementalOp.observed("Q", [np.diag([1, 0]), np.diag([0, 1])], ancilla="A")


def test_empty_tree_is_identity(rng):
    rho = random_density(2, rng=rng)
    out, lay = execute(LEAF, rho, W2)
    assert lay == W2 and np.array_equal(out, rho)


def test_measuring_plus_gives_two_even_branches():
    rep = execute(seq(_z_measurement()), plus_state(), Q2, mode="all_branches")
    assert [p.outcomes for p in rep] == [(0,), (1,)]
    assert all(abs(p.probability - 0.5) < 1e-15 for p in rep)
    assert abs(rep.total_probability - 1) < 1e-12


def test_zero_branches_are_pruned_and_reported():
    rep = execute(seq(_z_measurement()), np.diag([1, 0]), Q2, mode="all_branches")
    assert [p.outcomes for p in rep] == [(0,)]
    assert rep.pruned == (((1,), 0.0),)


@pytest.mark.parametrize("rounds", range(1, 7))
def test_phase_loop_qubit_success_by_full_execution(rounds, rng):
    proto = std.phase_via_loop(rng.uniform(0, 2 * np.pi, 2), 2, rounds)
    rho = proto.input_state(random_density(2, rng=rng))
    rep = execute(proto.tree, rho, proto.layout, mode="all_branches")
    ok = sum(p.probability for p in rep if proto.success(p.outcomes))
    assert abs(ok - (1 - 0.5**rounds)) < 1e-12


def test_branch_weights_agree_with_full_execution(rng):
    for d, rounds in ((3, 1), (3, 3), (4, 2)):
        proto = std.phase_via_loop(rng.uniform(0, 2 * np.pi, d), d, rounds)
        rho = random_density(d, rng=rng)
        rep = execute(proto.tree, proto.input_state(rho), proto.layout, mode="all_branches")
        full = sum(p.probability for p in rep if proto.success(p.outcomes))
        assert abs(full - proto.success_probability(rho)) < 1e-12


def test_sampled_mode_is_seeded(rng):
    tree = seq(_z_measurement(),
               ElementalOp.observed("Q", [np.diag([1, 0]), np.diag([0, 1])], ancilla="B"))
    rho = plus_state()
    a = execute(tree, rho, Q2, mode="sampled", seed=5)
    b = execute(tree, rho, Q2, mode="sampled", seed=5)
    assert a.outcomes == b.outcomes and np.array_equal(a.state, b.state)
    with pytest.raises(ValueError):
        execute(tree, rho, Q2, mode="sampled")
    with pytest.raises(ValueError):
        execute(tree, rho, Q2, mode="bogus")


def test_missing_branch_and_layout_drift_are_errors():
    bad = ProtocolTree(_z_measurement(), {0: LEAF})
    with pytest.raises(ValueError):
        execute(bad, plus_state(), Q2)
    drift = branch(_z_measurement(), lambda a: seq(ElementalOp.forward("A", "T")) if a else LEAF)
    with pytest.raises(ValueError):
        execute(drift, plus_state(), Q2)
    with pytest.raises(ValueError):
        to_channel(drift, Q2)


def test_single_permutation_channel():
    x = np.array([[0, 1], [1, 0]])
    ch, lay = to_channel(seq(ElementalOp.permutation("W", [1, 0])), W2)
    assert lay == W2 and choi_distance(ch, QuantumChannel.unitary(x)) == 0


def test_bijection_tree_is_single_copy_operator():
    for d in (2, 3, 4):
        ch, lay = to_channel(std.bijection_B(d).tree, SystemLayout.of(("W", d, "wire")))
        assert lay.names == ("W", "Q") and len(ch.kraus) == 1
        b = sum(np.outer(np.kron(np.eye(d)[i], np.eye(d)[i]), np.eye(d)[i]) for i in range(d))
        assert np.allclose(ch.kraus[0], b)


def test_teleported_identity_is_identity():
    spec = std.ChannelSpec(QuantumChannel.identity(2), 2, 1)
    assert choi_distance(std.teleport_channel(spec).channel(), QuantumChannel.identity(2)) < 1e-9


def test_tree_json_round_trip(rng):
    lay = random_wire_layout(rng)
    tree = random_tree(lay, 4, rng)
    text = tree.dumps()
    back = ProtocolTree.from_json(json.loads(text))
    assert back.dumps() == text
    assert choi_distance(to_channel(back, lay)[0], to_channel(tree, lay)[0]) == 0
    with pytest.raises(ValueError):
        ProtocolTree.from_json({"children": {}})


def test_then_replaces_leaves():
    tree = then(seq(_z_measurement()), seq(ElementalOp.forward("A", "T")))
    paths = [p for p, _, _ in iter_leaf_operators(tree, Q2)]
    assert paths == [(0, 0), (1, 0)]


# -- execution properties ------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_average_mode_equals_flattened_channel(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng)
    tree = random_tree(lay, int(rng.integers(1, 5)), rng)
    rho = random_density(lay.total_dim, rng=rng)
    out, _ = execute(tree, rho, lay)
    ch, _ = to_channel(tree, lay)
    assert np.max(np.abs(out - apply_channel(ch, rho))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_branch_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng)
    tree = random_tree(lay, int(rng.integers(1, 5)), rng)
    rep = execute(tree, random_density(lay.total_dim, rng=rng), lay, mode="all_branches")
    total = rep.total_probability + sum(p for _, p in rep.pruned)
    assert abs(total - 1) < 1e-9
    for p in rep:
        assert abs(np.trace(p.state) - 1) < 1e-9


# -- normal form ------------------------------------------------------------------


def _perm_step(d, table):
    return NormalFormStep(d, d, 1, {0: NormalFormBranch(tuple(table), tuple(np.eye(1) for _ in range(d)), d, 1)})


def test_verify_single_permutation_step():
    rep = verify_normal_form(_perm_step(2, [1, 0]), (2, 1))
    assert rep.ok and rep.depth == 1


def test_verify_rejects_non_decreasing_cut():
    step = _perm_step(2, [1, 0])
    kid = _perm_step(2, [0, 1])
    parent = NormalFormStep(2, 2, 1, {0: NormalFormBranch((1, 0), step.branches[0].ops, 2, 1, kid)})
    rep = verify_normal_form(parent, (2, 1))
    assert not rep.ok and any("does not decrease" in r for r in rep.reasons)


def test_verify_rejects_incomplete_step():
    half = NormalFormStep(2, 2, 1, {0: NormalFormBranch((0, 1), (np.eye(1), np.zeros((1, 1))), 2, 1)})
    rep = verify_normal_form(half, (2, 1))
    assert not rep.ok and any("trace preserving" in r for r in rep.reasons)


@pytest.mark.parametrize("op", [
    ElementalOp.permutation("W", [2, 0, 1]),
    ElementalOp.phase("W", [0.3, 1.0, 2.0]),
])
def test_wire_unitaries_compile_to_one_step(op):
    lay = SystemLayout.of(("W", 3, "wire"))
    nf = compile_normal_form(seq(op), lay)
    assert nf.verify().ok and nf.branch_lengths() == [1]
    assert nf.choi_distance(seq(op)) < 1e-12


def test_observation_compiles_to_one_step(rng):
    lay = SystemLayout.of(("W", 2, "wire"), ("Q", 2, "quantum"))
    u = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
    op = ElementalOp.observed("Q", [np.diag(u[0]), np.diag(u[1])], ancilla="A")
    nf = compile_normal_form(seq(op), lay)
    assert nf.verify().ok and set(nf.branch_lengths()) == {1}
    assert nf.choi_distance(seq(op)) < 1e-12


def test_forward_of_qubit_wire_compiles_and_merges():
    lay = SystemLayout.of(("W", 2, "wire"), ("Q", 1, "quantum"))
    tree = seq(ElementalOp.forward("W", "T"))
    nf = compile_normal_form(tree, lay)
    rep = nf.verify()
    assert rep.ok, rep.reasons
    assert max(nf.branch_lengths()) <= 2
    assert nf.choi_distance(tree) < 1e-9


def test_consecutive_full_rank_steps_are_merged():
    lay = SystemLayout.of(("W", 3, "wire"))
    tree = seq(ElementalOp.permutation("W", [1, 2, 0]), ElementalOp.phase("W", [0.1, 0.2, 0.3]),
               ElementalOp.permutation("W", [2, 1, 0]))
    nf = compile_normal_form(tree, lay)
    assert nf.verify().ok and nf.branch_lengths() == [1]
    assert nf.choi_distance(tree) < 1e-12


def test_wire_dimension_cap_is_enforced():
    lay = SystemLayout.of(("W", 4, "wire"), ("Q", 2, "quantum"))
    op = ElementalOp.observed("Q", [np.eye(2)], ancilla="A", ancilla_dim=32)
    with pytest.raises(ValueError):
        compile_normal_form(seq(op), lay, max_wire_dim=64)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_trees_compile_soundly(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng)
    tree = random_tree(lay, int(rng.integers(1, 6)), rng)
    nf = compile_normal_form(tree, lay)
    rep = nf.verify()
    assert rep.ok, rep.reasons
    assert max(nf.branch_lengths()) <= lay.wire_dim
    assert nf.choi_distance(tree) < 1e-9


# -- LOCC translation -------------------------------------------------------------------

BIP = SystemLayout.of(("W", 2, "wire"), ("QA", 2, "quantum", 1), ("QB", 2, "quantum", 2))


def test_permutation_becomes_permutation_on_both_copies():
    tree, lay = translate_to_locc(seq(ElementalOp.permutation("W", [1, 0])), BIP)
    ops = list(tree.ops())
    assert [o.party for o in ops] == [1, 2]
    assert [o.registers for o in ops] == [("W@1",), ("W@2",)]
    assert all(np.allclose(o.kraus[0], [[0, 1], [1, 0]]) for o in ops)
    assert all(r.kind == "quantum" for r in lay.registers)


def test_phase_goes_to_one_side_only():
    tree, _ = translate_to_locc(seq(ElementalOp.phase("W", [0, 1.0])), BIP)
    ops = list(tree.ops())
    assert len(ops) == 1 and ops[0].registers == ("W@1",)


def test_forward_erases_far_copy_then_relabels():
    tree, _ = translate_to_locc(seq(ElementalOp.forward("W", "T", party=1)), BIP)
    assert tree.op.tag == "erase" and tree.op.registers == ("W@2",) and tree.op.party == 2
    kinds = [o.tag for o in tree.child(0).ops()]
    assert kinds == ["aux", "aux"]


def test_translation_needs_bipartite_layout():
    lay = SystemLayout.of(("W", 2, "wire"), ("Q", 2, "quantum"))
    with pytest.raises(ValueError):
        translate_to_locc(seq(ElementalOp.permutation("W", [1, 0])), lay)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_translation_matches_branch_by_branch(seed):
    rng = np.random.default_rng(seed)
    lay = random_wire_layout(rng, bipartite=True)
    tree = random_tree(lay, int(rng.integers(1, 5)), rng, parties=[1, 2])
    eta = random_density(lay.wire_dim, rng=rng)
    dist = translation_distances(tree, lay, eta)
    assert dist and max(dist.values()) < 1e-9
