import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrlc.circuit_io import records_unitary
from qrlc.gates import named_action_space
from qrlc.linalg import basis_state, fidelity_f1, product_state
from qrlc.metrics import (
    REPORT_COLUMNS, compile_report, gate_counts, output_distribution, tv_distance, uniform,
)
from qrlc.search import CompileResult
from qrlc.targets import qft


def swap_records():
    def cnot(c, t):
        return [{"name": "H", "qubits": [t]}, {"name": "CZ", "qubits": [c, t]},
                {"name": "H", "qubits": [t]}]
    return cnot(1, 2) + cnot(2, 1) + cnot(1, 2)


def test_gate_counts_shapes():
    assert gate_counts([]) == (0, 0)
    assert gate_counts(swap_records()) == (6, 3)
    labels = ["CZ@q1q2"] * 3 + ["X/2@q1", "T@q2", "Y/2@q1", "-X/2@q2", "T†@q1", "-Y/2@q2"]
    assert gate_counts(labels) == (6, 3)
    qft_shape = ["CZ@q2q3"] * 7 + ["T@q1"] * 28
    assert gate_counts(qft_shape) == (28, 7)
    space = named_action_space("2-1")
    assert gate_counts(space.actions) == (12, 1)
    with pytest.raises(ValueError):
        gate_counts([{"name": "CCZ", "qubits": [1, 2, 3]}])


def test_swap_construction_is_swap():
    swap = np.eye(4)[[0, 2, 1, 3]]
    assert abs(1 - fidelity_f1(records_unitary(swap_records(), 2), swap)) <= 1e-12


def test_tv_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert tv_distance(p, p) == 0
    assert tv_distance([1, 0], [0, 1]) == 1
    assert tv_distance(np.eye(8)[3], uniform(3)) == pytest.approx(7 / 8, abs=1e-15)
    with pytest.raises(ValueError):
        tv_distance([1, 0], [1, 0, 0])


probs = st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v))


@settings(max_examples=200, deadline=None)
@given(probs, probs, probs)
def test_tv_metric_properties(p, q, r):
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p))
    assert 0 <= tv_distance(p, q) <= 1 + 1e-12
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12


def test_qft_output_distributions():
    d0 = output_distribution(qft(3), basis_state("000"))
    assert tv_distance(d0, uniform(3)) == pytest.approx(0, abs=1e-12)
    dp = output_distribution(qft(3), product_state("+++"))
    assert tv_distance(dp, uniform(3)) == pytest.approx(7 / 8, abs=1e-12)
    assert np.allclose(dp, np.eye(8)[0], atol=1e-12)


def test_output_distribution_records():
    assert np.array_equal(output_distribution([], basis_state("01")), np.eye(4)[1])
    d = output_distribution(swap_records(), basis_state("01"))
    assert np.allclose(d, np.eye(4)[2])
    rng = np.random.default_rng(0)
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    assert output_distribution(qft(3), psi).sum() == pytest.approx(1.0, abs=1e-12)


def _result(f1, n1, n2, status="converged", elapsed=0.01):
    return CompileResult([], [], f1, n1, n2, 1, elapsed, status, 2)


def test_report_single_and_identical():
    rep = compile_report([_result(0.99, 4, 2)])
    assert len(rep) == 1 and rep.summary["f1"]["std"] == 0 and rep.summary["n"]["mean"] == 6
    rep = compile_report([_result(0.9, 1, 1)] * 3, names=["a", "b", "c"])
    assert [r["target"] for r in rep.rows] == ["a", "b", "c"]
    assert rep.summary["f1"] == {"mean": pytest.approx(0.9), "std": pytest.approx(0.0)}


def test_report_formats():
    results = [_result(1.0, 2, 1), _result(0.5, 4, 3, "budget_exhausted")]
    rep = compile_report(results, baselines=[_result(0.9, 0, 6)] * 2)
    assert rep.summary["n2"] == {"mean": 2.0, "std": 1.0}
    assert rep.summary["converged"] == 1
    lines = rep.to_csv().strip().split("\n")
    assert lines[0].split(",")[:len(REPORT_COLUMNS)] == REPORT_COLUMNS
    assert "baseline_n2" in lines[0] and len(lines) == 3
    doc = json.loads(rep.to_json())
    assert doc["rows"][1]["status"] == "budget_exhausted"
    assert "converged 1/2" in rep.to_text()
    with pytest.raises(ValueError):
        compile_report([])
    with pytest.raises(ValueError):
        compile_report(results, baselines=results[:1])
