import csv
import io
import json

import numpy as np
import pytest

from lopsim.cli import dumps, main
from lopsim.lop import ElementalOp, SystemLayout
from lopsim.protocol import seq
from lopsim.qcore import state_to_json

from conftest import plus_state


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def plus_files(tmp_path):
    layout = SystemLayout.of(("W", 2, "wire"))
    state = {**state_to_json(plus_state()), "layout": layout.to_json()}
    measure = ElementalOp.observed(("Q",), [np.diag([1, 0]), np.diag([0, 1])], ancilla="M")
    tree = seq(ElementalOp.forward("W", "Q"), measure)
    return _write(tmp_path / "state.json", state), _write(tmp_path / "tree.json", tree.to_json())


def test_dumps_is_sorted_and_full_precision():
    text = dumps({"b": 0.1, "a": [1, 2.5], "c": float("nan")})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text
    assert '"c": null' in text


def test_run_reports_both_branches(plus_files, tmp_path, capsys):
    state, tree = plus_files
    out = tmp_path / "out.json"
    assert main(["run", "--protocol", tree, "--state", state, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["conserved"] and len(rep["paths"]) == 2
    assert all(abs(p["probability"] - 0.5) < 1e-12 for p in rep["paths"])


@pytest.mark.parametrize("mode", ["all_branches", "average", "sampled"])
def test_run_is_byte_identical(plus_files, tmp_path, mode):
    state, tree = plus_files
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.json"
        assert main(["run", "--protocol", tree, "--state", state, "--mode", mode,
                     "--seed", "4", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_run_average_mode(plus_files, capsys):
    state, tree = plus_files
    assert main(["run", "--protocol", tree, "--state", state, "--mode", "average"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mode"] == "average" and rep["conserved"]


def test_malformed_json_is_an_input_error(tmp_path, plus_files, capsys):
    state, _ = plus_files
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "op": [1, 2,\n}')
    assert main(["run", "--protocol", str(bad), "--state", state]) == 2
    err = capsys.readouterr().err
    assert f"{bad}:3:1: malformed JSON" in err


def test_missing_file_and_bad_flags(tmp_path, capsys):
    assert main(["monotone", "--state", str(tmp_path / "nope.json")]) == 2
    assert main(["prepare", "--target", "xyz"]) == 2
    assert main(["run", "--protocol", "a", "--state", "b", "--tol", "-1"]) == 2
    capsys.readouterr()


def test_state_without_layout_is_rejected(tmp_path, capsys):
    path = _write(tmp_path / "s.json", state_to_json(plus_state()))
    assert main(["monotone", "--state", path]) == 2
    assert "no layout" in capsys.readouterr().err


def test_monotone_with_layout_file(tmp_path, capsys):
    lay = SystemLayout.of(("W", 2, "wire"), ("Q", 2, "quantum"))
    psi = np.zeros(4)
    psi[[0, 3]] = 1 / np.sqrt(2)
    state = _write(tmp_path / "s.json", state_to_json(np.outer(psi, psi)))
    layout = _write(tmp_path / "l.json", lay.to_json())
    assert main(["monotone", "--state", state, "--layout", layout, "--side", "W"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert abs(rep["rel_ent_coherence"] - 1) < 1e-12
    assert abs(rep["ent_entropy_pure"] - 1) < 1e-12
    assert main(["monotone", "--state", state, "--layout", layout, "--side", "X"]) == 2


def test_verify_teleport_seed_7(tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify", "--suite", "teleport", "--seed", "7", "--count", "20", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["seed"] == 7 and rep["anchor"]
    assert rep["max_errors"]["choi"] < 1e-9


def test_verify_reports_are_reproducible(tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / f"v{i}.json"
        assert main(["verify", "--suite", "bijection", "--seed", "3", "--out", str(out)]) == 0
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_prepare_ghz_chain(tmp_path, capsys):
    out, proto = tmp_path / "ghz.json", tmp_path / "proto.json"
    code = main(["prepare", "--target", "ghz", "--n", "3", "--topology", "chain",
                 "--out", str(out), "--protocol-out", str(proto)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert abs(rep["fidelity"] - 1) < 1e-9
    saved = json.loads(proto.read_text())
    assert "tree" in saved and "layout" in saved


def test_prepare_bad_topology_is_input_error(capsys):
    assert main(["prepare", "--target", "w", "--n", "4", "--topology", "two_wire"]) == 2


def test_counterexample_and_control(capsys):
    assert main(["counterexample"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] is True
    assert main(["counterexample", "--control"]) == 1
    assert json.loads(capsys.readouterr().out)["verdict"] is False


def test_distill_csv(tmp_path, capsys):
    out = tmp_path / "d.csv"
    args = ["distill", "--q", "0.02", "--p0", "0.02", "--trials", "200", "--steps", "300",
            "--seed", "1", "--out", str(out)]
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == ["step", "mean_p_half", "std_p_half", "survivors"]
    assert len(rows) == 301
    assert summary["final_mean_p_half"] == float(rows[-1]["mean_p_half"])
    first = out.read_bytes()
    assert main(args) == 0
    assert out.read_bytes() == first


def test_distill_rejects_bad_params(capsys):
    assert main(["distill", "--p0", "2"]) == 2
