"""Gate counts, output distributions, total-variation distance and reports."""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from .linalg import apply

REPORT_COLUMNS = ["target", "f1", "n1", "n2", "n", "time_ms", "status"]


def _arity(gate) -> int:
    if isinstance(gate, str):
        _, _, placement = gate.partition("@")
        return max(placement.count("q"), 1)
    if isinstance(gate, dict):
        return len(gate["qubits"])
    if hasattr(gate, "qubits"):
        return len(gate.qubits)
    raise TypeError(f"cannot count gate {gate!r}")


def gate_counts(seq) -> tuple[int, int]:
    """(N1, N2): single- and two-qubit gate counts.

    Accepts action labels (``"CZ@q1q2"``), gate records, Action objects or a
    CompileResult.
    """
    if hasattr(seq, "gates") and not isinstance(seq, (list, tuple)):
        seq = seq.gates
    n1 = n2 = 0
    for g in seq:
        k = _arity(g)
        if k == 1:
            n1 += 1
        elif k == 2:
            n2 += 1
        else:
            raise ValueError(f"unsupported gate arity {k}")
    return n1, n2


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def uniform(num_qubits: int) -> np.ndarray:
    return np.full(2**num_qubits, 2.0**-num_qubits)


def output_distribution(circuit, state) -> np.ndarray:
    """Computational-basis probabilities after applying ``circuit`` to ``state``.

    ``circuit`` is a unitary matrix or a list of gate records (application order).
    """
    state = np.asarray(state, dtype=np.complex128)
    if isinstance(circuit, np.ndarray) and circuit.ndim == 2:
        u = circuit
    else:
        from .circuit_io import records_unitary

        m = int(round(np.log2(state.shape[0])))
        u = records_unitary(list(circuit), m)
    psi = apply(u, state)
    probs = np.abs(psi) ** 2
    return probs / probs.sum()


class Report:
    def __init__(self, rows, summary):
        self.rows = rows
        self.summary = summary

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = list(self.rows[0].keys())
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.rows[0].keys()), "rows": self.rows,
                           "summary": self.summary}, indent=2)

    def to_text(self) -> str:
        s = self.summary
        lines = [f"{len(self.rows)} targets"]
        for key in ("f1", "n1", "n2", "time_ms"):
            lines.append(f"  {key:8s} mean {s[key]['mean']:.6g}  std {s[key]['std']:.6g}")
        lines.append(f"  converged {s['converged']}/{len(self.rows)}")
        return "\n".join(lines)


def compile_report(results, baselines=None, names=None) -> Report:
    """Per-target rows plus mean and population std of F1, N1, N2 and time.

    ``baselines`` (optional) is a list aligned with ``results``; its F1 and N2
    are added as ``baseline_f1`` / ``baseline_n2`` columns.
    """
    results = list(results)
    if not results:
        raise ValueError("compile_report needs at least one result")
    if baselines is not None and len(baselines) != len(results):
        raise ValueError("baselines must align with results")
    rows = []
    for i, r in enumerate(results):
        row = {
            "target": names[i] if names is not None else str(i),
            "f1": float(r.f1), "n1": int(r.n1), "n2": int(r.n2), "n": int(r.n1 + r.n2),
            "time_ms": 1000.0 * float(r.elapsed), "status": r.status,
        }
        if baselines is not None:
            row["baseline_f1"] = float(baselines[i].f1)
            row["baseline_n2"] = int(baselines[i].n2)
        rows.append(row)
    summary = {}
    for key in ("f1", "n1", "n2", "n", "time_ms"):
        vals = np.array([row[key] for row in rows], dtype=float)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    summary["converged"] = sum(1 for row in rows if row["status"] == "converged")
    return Report(rows, summary)
