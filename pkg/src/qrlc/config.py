"""Run configuration: INI files with sections and named presets.

Example::

    [run]
    preset = desk
    seed = 0

    [gateset]
    name = 1q-xyt          ; or: gates = X/2, -X/2, T, T†, CZ

    [topology]             ; only used with inline gates
    qubits = 2
    edges = 1-2

    [train]
    loops = 8

    [search]
    mode = greedy

    [variational]
    restarts = 5

    [paths]
    model = model.qrlc
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .gates import GATESETS, GateError, Topology, build_action_space, named_action_space, parse_gate
from .qnet import TrainConfig
from .search import SearchConfig
from .variational import VariationalConfig


class ConfigError(ValueError):
    pass


PRESETS = {
    "desk": {
        "gateset": {"name": "1q-xyt"},
        "train": {"loops": 8, "l_star": 5, "budget": 2000, "hidden": (512, 256), "n_blocks": 2},
        "search": {"mode": "greedy"},
    },
    "two-qubit-paper": {
        "gateset": {"name": "2-1"},
        "train": {"loops": 45, "l_star": 3, "lr": 1e-3, "delta": 0.02,
                  "hidden": (6000, 2000), "n_blocks": 6},
        "search": {"depth": 200, "time_limit": 600.0},
    },
    "three-qubit-paper": {
        "gateset": {"name": "3-1"},
        "train": {"loops": 44, "l_star": 3, "lr": 1e-3, "delta": 0.02,
                  "hidden": (8000, 3000), "n_blocks": 6},
        "search": {"depth": 500, "time_limit": 1200.0},
    },
}


@dataclass
class RunConfig:
    gateset: str | None = "1q-xyt"
    gates: list | None = None
    qubits: int | None = None
    edges: tuple = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    variational: VariationalConfig = field(default_factory=VariationalConfig)
    model: str | None = None
    output: str | None = None
    dataset: str | None = None
    seed: int = 0

    def space(self):
        try:
            if self.gates:
                if not self.qubits:
                    raise ConfigError("inline gates need [topology] qubits")
                return build_action_space(self.gates, Topology(self.qubits, tuple(self.edges)))
            return named_action_space(self.gateset)
        except (GateError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def _coerce(cls, key, raw):
    """Convert a raw INI string to the type of the dataclass field ``key``."""
    names = {f.name: f for f in fields(cls)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
    default = getattr(cls(), key)
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float) or default is None and key in ("time_limit", "eps"):
            return None if raw.lower() == "none" else float(raw)
        if default is None:
            return None if raw.lower() == "none" else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {cls.__name__}.{key}") from None


def _build(cls, values: dict):
    kwargs = {k: _coerce(cls, k, v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def _parse_edges(text: str):
    edges = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        a, sep, b = tok.partition("-")
        if not sep:
            raise ConfigError(f"bad edge {tok!r}; use e.g. 1-2")
        try:
            edges.append((int(a), int(b)))
        except ValueError:
            raise ConfigError(f"bad edge {tok!r}") from None
    return tuple(edges)


def from_sections(sections: dict) -> RunConfig:
    """Build a RunConfig from ``{section: {key: value}}``; applies ``run.preset`` first."""
    sections = {k: dict(v) for k, v in sections.items()}
    known = {"run", "gateset", "topology", "train", "search", "variational", "paths"}
    extra = set(sections) - known - {"DEFAULT"}
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    run = sections.get("run", {})
    preset = run.get("preset")
    merged = {k: {} for k in known}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(PRESETS)}")
        for sec, vals in PRESETS[preset].items():
            merged[sec].update(vals)
    for sec, vals in sections.items():
        if sec in merged:
            merged[sec].update(vals)

    try:
        seed = int(merged["run"].get("seed", 0))
    except ValueError:
        raise ConfigError("run.seed must be an integer") from None
    gs = merged["gateset"]
    gates = None
    if "gates" in gs:
        try:
            gates = [parse_gate(t) for t in str(gs["gates"]).split(",") if t.strip()]
        except (GateError, ValueError) as exc:
            raise ConfigError(f"bad gate list: {exc}") from exc
    name = gs.get("name", None if gates else "1q-xyt")
    if gates is None and name not in GATESETS:
        raise ConfigError(f"unknown gate set {name!r}")
    topo = merged["topology"]
    qubits = int(topo["qubits"]) if "qubits" in topo else None
    edges = _parse_edges(topo["edges"]) if isinstance(topo.get("edges"), str) else tuple(topo.get("edges", ()))

    train_vals = dict(merged["train"])
    train_vals.setdefault("seed", seed)
    var_vals = dict(merged["variational"])
    var_vals.setdefault("seed", seed)
    paths = merged["paths"]
    unknown = set(paths) - {"model", "output", "dataset"}
    if unknown:
        raise ConfigError(f"unknown key(s) in [paths]: {', '.join(sorted(unknown))}")
    return RunConfig(
        gateset=name, gates=gates, qubits=qubits, edges=edges,
        train=_build(TrainConfig, train_vals),
        search=_build(SearchConfig, merged["search"]),
        variational=_build(VariationalConfig, var_vals),
        model=paths.get("model"), output=paths.get("output"), dataset=paths.get("dataset"),
        seed=seed,
    )


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_sections({s: dict(parser.items(s)) for s in parser.sections()})


def preset(name: str, **overrides) -> RunConfig:
    cfg = from_sections({"run": {"preset": name}})
    return replace(cfg, **overrides) if overrides else cfg
