import numpy as np

from lopsim.cxample import build_counterexample, certify_not_lop, mixable, stochastic_rate_check
from lopsim.lop import SystemLayout, classify_channel, is_iqo_kraus
from lopsim.protocols_std import iqo_stochastic
from lopsim.qcore import QuantumChannel, apply_channel
from lopsim.randomized import random_density


def test_matrices_are_exact_halves():
    for k in build_counterexample().kraus:
        assert set(np.unique(k.real)) <= {-0.5, 0.0, 0.5}
        assert np.all(k.imag == 0)


def test_channel_is_trace_preserving_and_incoherent():
    ch = build_counterexample()
    gram = sum(k.conj().T @ k for k in ch.kraus)
    assert np.max(np.abs(gram - np.eye(3))) < 1e-12
    lay = SystemLayout.of(("W", 3, "wire"))
    assert all(is_iqo_kraus(k, lay) for k in ch.kraus)
    assert not classify_channel(ch, lay).sio


def test_certificate_holds():
    cert = certify_not_lop(build_counterexample())
    assert cert.cptp_ok and cert.iqo_ok and cert.k4_rank_one
    assert cert.cptp_residual < 1e-12
    assert cert.rank_one_index == 4
    assert len(cert.pairwise_rigidity) == 6 and all(cert.pairwise_rigidity.values())
    assert cert.pairwise_rigidity[(1, 4)]
    assert cert.verdict
    assert cert.to_json()["verdict"] is True


def test_last_operator_gram_is_quarter_all_ones():
    k4 = build_counterexample().kraus[3]
    gram = k4.conj().T @ k4
    assert np.allclose(gram, np.full((3, 3), 0.25))
    assert np.sum(np.linalg.eigvalsh(gram) > 1e-10) == 1


def test_permutation_channel_is_rejected():
    # a channel built from diagonal-times-permutation operators is a free wire protocol
    perm = np.eye(3)[[1, 2, 0]]
    ch = QuantumChannel((perm * np.sqrt(0.5), np.eye(3) * np.sqrt(0.5)))
    assert not certify_not_lop(ch).verdict
    dephasing = QuantumChannel(tuple(np.diag(np.eye(3)[i]).astype(complex) for i in range(3)))
    assert not certify_not_lop(dephasing).verdict


def test_mixable_cases():
    e00 = np.zeros((2, 2))
    e00[0, 0] = 1
    e11 = np.zeros((2, 2))
    e11[1, 1] = 1
    assert mixable(e00, e11)
    a = np.array([[1, 0], [0, 0]])
    b = np.array([[-1, 0], [1, 0]])
    assert mixable(a, b)
    k = build_counterexample().kraus
    assert not mixable(k[0], k[3])


def test_stochastic_rate_is_one_third(rng):
    ch = build_counterexample()
    rates = [stochastic_rate_check(ch, rng=rng) for _ in range(50)]
    assert max(abs(r - 1 / 3) for r in rates) < 1e-9
    assert np.var(rates) < 1e-18


def test_stochastic_success_branch_matches_channel(rng):
    ch = build_counterexample()
    heralded = iqo_stochastic(ch, 3).channel(heralded=True)
    for _ in range(5):
        rho = random_density(3, rng=rng)
        out = apply_channel(heralded, rho)
        assert np.max(np.abs(out / np.trace(out) - apply_channel(ch, rho))) < 1e-9
