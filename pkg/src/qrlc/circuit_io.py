"""Self-contained JSON circuit files.

Gates are listed in application order (first applied first). Qubit 1 is the
most significant bit. A file can be re-simulated without any model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

from .gates import ActionSpace, embed, gate_matrix
from .linalg import identity

FORMAT_VERSION = 1
BIT_ORDER = "q1-msb"


class CircuitFormatError(ValueError):
    pass


@dataclass
class CircuitFile:
    num_qubits: int
    gates: list  # [{"name", "qubits", "angles"?}]
    metrics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    refined: dict | None = None  # {"gates", "metrics"} after variational refinement

    def unitary(self, refined: bool = False) -> np.ndarray:
        gates = self.refined["gates"] if refined else self.gates
        return records_unitary(gates, self.num_qubits)

    def to_dict(self) -> dict:
        doc = {
            "format_version": FORMAT_VERSION,
            "num_qubits": self.num_qubits,
            "bit_order": BIT_ORDER,
            "gates": self.gates,
            "metrics": self.metrics,
            "provenance": self.provenance,
        }
        if self.refined is not None:
            doc["refined"] = self.refined
        return doc


def record_matrix(rec: dict) -> np.ndarray:
    """Local matrix of one gate record."""
    from .variational import u3

    name = rec["name"]
    angles = rec.get("angles")
    if name == "u3":
        if angles is None or len(angles) != 3:
            raise CircuitFormatError("u3 gate needs three angles")
        return u3(*angles)
    if angles:
        if len(angles) != 1:
            raise CircuitFormatError(f"gate {name!r} takes one angle")
        return gate_matrix(name, angles[0])
    return gate_matrix(name)


def records_unitary(gates, num_qubits: int) -> np.ndarray:
    u = identity(num_qubits)
    for rec in gates:
        qubits = tuple(int(q) for q in rec["qubits"])
        if any(q < 1 or q > num_qubits for q in qubits):
            raise CircuitFormatError(f"gate {rec['name']!r} on qubits {qubits} outside 1..{num_qubits}")
        u = embed(record_matrix(rec), qubits, num_qubits) @ u
    return u


def action_records(actions, space: ActionSpace) -> list[dict]:
    """Gate records for action indices (application order)."""
    out = []
    for i in actions:
        a = space.actions[int(i)]
        rec = {"name": a.gate.name, "qubits": list(a.qubits)}
        if a.gate.angle is not None:
            rec["angles"] = [float(a.gate.angle)]
        out.append(rec)
    return out


def result_to_file(result, space: ActionSpace, provenance: dict | None = None) -> CircuitFile:
    metrics = {
        "f1": result.f1, "n1": result.n1, "n2": result.n2,
        "elapsed_ms": 1000.0 * result.elapsed,
        "nodes_expanded": result.nodes_expanded, "status": result.status,
    }
    return CircuitFile(space.num_qubits, action_records(result.actions, space), metrics,
                       dict(provenance or {}))


def write_circuit(path, circuit: CircuitFile) -> None:
    with open(path, "w") as fh:
        json.dump(circuit.to_dict(), fh, indent=2)


def read_circuit(path) -> CircuitFile:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CircuitFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CircuitFormatError(f"{path}: expected a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise CircuitFormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if doc.get("bit_order", BIT_ORDER) != BIT_ORDER:
        raise CircuitFormatError(f"{path}: unsupported bit_order {doc.get('bit_order')!r}")
    try:
        m = int(doc["num_qubits"])
        gates = list(doc["gates"])
        for rec in gates:
            if "name" not in rec or "qubits" not in rec:
                raise CircuitFormatError(f"{path}: gate record missing name or qubits")
    except (KeyError, TypeError, ValueError) as exc:
        raise CircuitFormatError(f"{path}: malformed circuit ({exc})") from exc
    return CircuitFile(m, gates, doc.get("metrics", {}), doc.get("provenance", {}), doc.get("refined"))
