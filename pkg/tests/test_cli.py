import json
import subprocess
import sys

import numpy as np
import pytest

from qrlc.circuit_io import read_circuit
from qrlc.cli import main
from qrlc.gates import named_action_space
from qrlc.oracle import sequence_unitary

TINY = """
[run]
seed = 3

[gateset]
name = 1q-xy

[train]
loops = 3
l_star = 2
budget = 40
hidden = 16, 16
n_blocks = 1
batch_size = 16

[paths]
model = tiny.qrlc
"""


@pytest.fixture(scope="module")
def tiny_model(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    cfg = d / "tiny.ini"
    cfg.write_text(TINY)
    assert main(["train", str(cfg), "--out-dir", str(d / "a")]) == 0
    return cfg, d


def test_train_outputs_and_determinism(tiny_model):
    cfg, d = tiny_model
    a = d / "a"
    names = sorted(p.name for p in a.iterdir())
    assert names == ["tiny.log.csv", "tiny.loop01.qrlc", "tiny.loop01.qrlc.json",
                     "tiny.loop02.qrlc", "tiny.loop02.qrlc.json", "tiny.loop03.qrlc",
                     "tiny.loop03.qrlc.json", "tiny.qrlc", "tiny.qrlc.json"]
    assert main(["train", str(cfg), "--out-dir", str(d / "b")]) == 0
    for name in names:
        if name.endswith(".qrlc"):
            assert (a / name).read_bytes() == (d / "b" / name).read_bytes()
    assert json.loads((a / "tiny.qrlc.json").read_text())["loop"] == 3
    header = (a / "tiny.log.csv").read_text().splitlines()[0]
    assert header == "loop,epoch,loss,mode"


def test_train_bad_config_writes_nothing(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nloops = lots\n")
    out = tmp_path / "out"
    assert main(["train", str(cfg), "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_train_memory_limit_exit_3(tmp_path):
    cfg = tmp_path / "mem.ini"
    cfg.write_text("[gateset]\nname = 2-1\n[train]\nloops = 4\nl_star = 4\nmax_states = 100\n"
                   "hidden = 8, 8\nn_blocks = 1\n")
    assert main(["train", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3


def test_compile_with_model(tiny_model, tmp_path):
    _, d = tiny_model
    model = str(d / "a" / "tiny.qrlc")
    out = tmp_path / "id.json"
    assert main(["compile", "--model", model, "--target", "identity", "--out", str(out)]) == 0
    circ = read_circuit(out)
    assert circ.gates == [] and circ.metrics["f1"] == pytest.approx(1.0)
    assert circ.provenance["model_fingerprint"] == f"{named_action_space('1q-xy').fingerprint:016x}"
    # two models give the multi-model path; two targets give suffixed outputs
    code = main(["compile", "--model", model, "--model", model, "--target", "haar:1",
                 "--target", "haar:2", "--depth", "5", "--out", str(tmp_path / "h.json")])
    assert code == 4
    assert (tmp_path / "h_0.json").exists() and (tmp_path / "h_1.json").exists()


def test_compile_fingerprint_mismatch(tiny_model):
    _, d = tiny_model
    model = str(d / "a" / "tiny.qrlc")
    assert main(["compile", "--model", model, "--gateset", "1q-xyt", "--target", "identity"]) == 5


def test_compile_oracle_and_eval(tmp_path):
    space = named_action_space("2-1")
    u = sequence_unitary([1, 12, 5], space)
    np.save(tmp_path / "u.npy", u)
    out = tmp_path / "c.json"
    args = ["compile", "--oracle-depth", "3", "--gateset", "2-1", "--target",
            f"file:{tmp_path / 'u.npy'}", "--out", str(out)]
    assert main(args) == 0
    circ = read_circuit(out)
    assert len(circ.gates) == 3
    report = tmp_path / "r.csv"
    code = main(["eval", str(out), "--target", f"file:{tmp_path / 'u.npy'}", "--gateset", "2-1",
                 "--oracle-depth", "3", "--report", str(report), "--json"])
    assert code == 0 and report.read_text().startswith("target,f1")


def test_compile_budget_exhausted_still_writes(tmp_path):
    out = tmp_path / "s.json"
    assert main(["compile", "--oracle-depth", "2", "--gateset", "2-1", "--target", "haar:5",
                 "--depth", "6", "--out", str(out), "--variational", "--restarts", "1"]) == 4
    circ = read_circuit(out)
    assert circ.metrics["status"] == "budget_exhausted"
    assert circ.refined["metrics"]["f1"] >= circ.refined["metrics"]["f1_before"]


def test_template_rzz(tmp_path, capsys):
    out = tmp_path / "rzz.json"
    assert main(["compile", "--template", "rzz", "--target", "rzz:1.5708", "--out", str(out)]) == 0
    circ = read_circuit(out)
    assert circ.metrics["f1"] >= 1 - 1e-6 and circ.metrics["n2"] == 1
    assert main(["eval", str(out), "--target", "rzz:1.5708"]) == 0


def test_eval_tampered_and_tv(tmp_path, capsys):
    out = tmp_path / "rzz.json"
    main(["compile", "--template", "rzz", "--target", "rzz:0.3", "--out", str(out),
          "--restarts", "1"])
    doc = json.loads(out.read_text())
    doc["metrics"]["f1"] = 0.5
    out.write_text(json.dumps(doc))
    capsys.readouterr()
    assert main(["eval", str(out), "--target", "rzz:0.3"]) == 1
    assert "MISMATCH" in capsys.readouterr().err
    # TV anchors reported for a QFT target
    qft_file = tmp_path / "q.json"
    main(["compile", "--template", "qft:ULULULU", "--target", "qft3", "--out", str(qft_file),
          "--restarts", "1"])
    capsys.readouterr()
    main(["eval", str(qft_file), "--target", "qft3", "--tv", "000", "--tv", "+++", "--json"])
    row = json.loads(capsys.readouterr().out.strip())
    assert row["tv[000](ideal,uniform)"] == pytest.approx(0, abs=1e-12)
    assert row["tv[+++](ideal,uniform)"] == pytest.approx(7 / 8, abs=1e-12)


@pytest.mark.parametrize("argv", [
    ["compile", "--target", "identity"],
    ["compile", "--gateset", "2-1", "--oracle-depth", "1", "--target", "nonsense"],
    ["compile", "--template", "qft:ABC", "--target", "qft3"],
    ["eval", "/nonexistent.json", "--target", "identity"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_console_script_runs():
    proc = subprocess.run([sys.executable, "-m", "qrlc.cli", "compile", "--oracle-depth", "1",
                           "--gateset", "1q-xyt", "--target", "identity"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "converged" in proc.stdout
