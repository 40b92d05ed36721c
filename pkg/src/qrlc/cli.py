"""Command-line interface: ``qrlc train | compile | eval``.

Exit codes:
    0  success (compile: converged)
    1  verification failure (eval: stored and recomputed F1 disagree)
    2  invalid config, arguments or input files
    3  resource limit hit during dataset generation
    4  search budget exhausted (circuit is still written)
    5  model / action-space fingerprint mismatch
"""

from __future__ import annotations

import argparse
import csv
from concurrent.futures import ThreadPoolExecutor
import json
import logging
from pathlib import Path
import sys
from types import SimpleNamespace

from .circuit_io import CircuitFile, CircuitFormatError, read_circuit, result_to_file, write_circuit
from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetBuilder, DatasetMemoryError, write_shard
from .estimator import _threads
from .gates import GATESETS, GateError, named_action_space
from .linalg import fidelity_f1, product_state
from .metrics import compile_report, gate_counts, output_distribution, tv_distance, uniform
from .oracle import FingerprintMismatch, OracleQ, bfs_table, oracle_distance
from .qnet import ModelFormatError, load_model, save_model, train
from .search import SearchConfig, compile_target, multi_dqn_search
from .targets import parse_target
from .variational import VariationalConfig, optimize, parameterize, qft_template, rzz_template

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RESOURCE, EXIT_BUDGET, EXIT_FINGERPRINT = 0, 1, 2, 3, 4, 5
F1_CHECK_TOL = 1e-8

log = logging.getLogger("qrlc")


class UsageError(Exception):
    pass


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    space = cfg.space()
    out_dir = Path(args.out_dir or ".")
    model_path = out_dir / (cfg.model or "model.qrlc")
    stem = model_path.with_suffix("")
    builder = DatasetBuilder(space, cfg.train.l_star, cfg.train.budget, cfg.train.seed,
                             cfg.train.perturb, cfg.train.max_states)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    shard_dir = Path(out_dir / cfg.dataset) if cfg.dataset else None
    if shard_dir is not None:
        shard_dir.mkdir(parents=True, exist_ok=True)

    def on_loop_end(loop, net):
        save_model(net, f"{stem}.loop{loop:02d}.qrlc", cfg.train)
        if shard_dir is not None:
            write_shard(shard_dir / f"loop{loop:02d}.qrld", builder.set.loops[loop], space)

    net, tlog = train(space, cfg.train, builder=builder, on_loop_end=on_loop_end)
    save_model(net, model_path, cfg.train)
    with open(f"{stem}.log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loop", "epoch", "loss", "mode"])
        w.writerows(tlog.records)
    for s in tlog.loop_summary:
        print(f"loop {s['loop']:3d}  {s['mode']:9s}  epochs {s['epochs']:5d}  "
              f"loss {s['loss']:.4g}  pool {s['pool']}")
    print(f"model written to {model_path}")
    return EXIT_OK


# -- compile -----------------------------------------------------------------


def _resolve_space(args, fingerprint=None):
    if getattr(args, "config", None):
        return load_config(args.config).space()
    if args.gateset:
        return named_action_space(args.gateset)
    if fingerprint is not None:
        for name in GATESETS:
            sp = named_action_space(name)
            if sp.fingerprint == fingerprint:
                return sp
        raise FingerprintMismatch(0, fingerprint)
    raise UsageError("give --gateset or --config")


def _load_models(args):
    if args.oracle_depth is not None:
        space = _resolve_space(args)
        return [OracleQ(bfs_table(space, args.oracle_depth), space)], [space]
    if not args.model:
        raise UsageError("give --model (repeatable) or --oracle-depth")
    first = load_model(args.model[0])
    space = _resolve_space(args, first.fingerprint)
    models = [load_model(p, expected_fingerprint=space.fingerprint) for p in args.model]
    return models, [space] * len(models)


def _search_config(args, base: SearchConfig) -> SearchConfig:
    return SearchConfig(
        depth=args.depth if args.depth is not None else base.depth,
        eps=args.epsilon if args.epsilon is not None else base.eps,
        width=args.width if args.width is not None else base.width,
        time_limit=args.time_limit if args.time_limit is not None else base.time_limit,
        max_expansions=base.max_expansions,
        mode=args.mode or base.mode,
    )


def _template(spec: str, seed: int):
    kind, _, rest = spec.partition(":")
    if kind == "rzz":
        return rzz_template(seed)
    if kind == "qft":
        if not rest or set(rest) - {"U", "L"}:
            raise UsageError("qft template needs a pattern of U/L letters, e.g. qft:ULULULU")
        return qft_template(rest, seed)
    raise UsageError(f"unknown template {spec!r}")


def _refine(circuit: CircuitFile, ansatz, target, vcfg) -> float:
    res = optimize(ansatz, target, vcfg)
    circuit.refined = {
        "gates": ansatz.gates(res.params),
        "metrics": {"f1": res.f1, "f1_before": res.init_f1, "n2": ansatz.n_two_qubit,
                    "n1": len(ansatz.slots) - ansatz.n_two_qubit},
    }
    return res.f1


def cmd_compile(args) -> int:
    base = load_config(args.config) if args.config else RunConfig()
    scfg = _search_config(args, base.search)
    vcfg = base.variational
    if args.restarts is not None:
        vcfg = VariationalConfig(vcfg.steps, vcfg.lr, args.restarts, vcfg.jitter, vcfg.loss, vcfg.seed)

    if args.template:
        m = 2 if args.template.startswith("rzz") else 3
        targets = [parse_target(t, m) for t in args.target]
        ansatz = _template(args.template, base.seed)
        worst = EXIT_OK
        for i, spec in enumerate(targets):
            u = spec.build()
            circuit = CircuitFile(ansatz.num_qubits, ansatz.gates(), {},
                                  {"template": args.template, "target": spec.name, "seed": base.seed})
            f1 = _refine(circuit, ansatz, u, vcfg)
            circuit.gates = circuit.refined["gates"]
            n1, n2 = gate_counts(circuit.gates)
            circuit.metrics = {"f1": f1, "n1": n1, "n2": n2, "elapsed_ms": 0.0,
                               "status": "converged" if 1 - f1 <= scfg.eps else "budget_exhausted"}
            _write(args.out, i, len(targets), circuit)
            print(f"{spec.name}: template {args.template}  F1 {f1:.12f}  N2 {n2}")
            if 1 - f1 > scfg.eps:
                worst = EXIT_BUDGET
        return worst

    models, spaces = _load_models(args)
    space = spaces[0]
    targets = [parse_target(t, space.num_qubits) for t in args.target]
    mats = []
    for spec in targets:
        u = spec.build(space)
        if u.shape != (space.dim, space.dim):
            raise UsageError(f"target {spec.name} has dim {u.shape[0]}, gate set acts on {space.dim}")
        mats.append(u)

    def run(u):
        if len(models) == 1:
            return compile_target(u, models[0], space, scfg)
        return multi_dqn_search(u, models, spaces, scfg)

    n_threads = _threads()
    if n_threads > 1 and len(mats) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, mats))
    else:
        results = [run(u) for u in mats]

    worst = EXIT_OK
    for i, (spec, u, res) in enumerate(zip(targets, mats, results)):
        prov = {"model_fingerprint": f"{space.fingerprint:016x}", "search_mode": scfg.mode,
                "seed": base.seed, "target": spec.name,
                "models": list(args.model or []) or [f"oracle:{args.oracle_depth}"]}
        circuit = result_to_file(res, space, prov)
        converged = res.converged
        line = f"{spec.name}: {res.status}  F1 {res.f1:.10f}  N1 {res.n1}  N2 {res.n2}"
        if args.variational:
            f1 = _refine(circuit, parameterize(res, space), u, vcfg)
            converged = converged or 1 - f1 <= scfg.eps
            line += f"  refined F1 {f1:.10f}"
        _write(args.out, i, len(targets), circuit)
        print(line)
        if not converged:
            worst = EXIT_BUDGET
    return worst


def _write(out, i, n, circuit):
    if out is None:
        return
    path = Path(out)
    if n > 1:
        path = path.with_name(f"{path.stem}_{i}{path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_circuit(path, circuit)


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    status = EXIT_OK
    rows = []
    report_items = []
    space = None
    table = None
    for path in args.circuits:
        circ = read_circuit(path)
        spec = parse_target(args.target, circ.num_qubits)
        target = spec.build(named_action_space(args.gateset) if args.gateset else None)
        if target.shape[0] != 2**circ.num_qubits:
            raise UsageError(f"{path}: circuit acts on {circ.num_qubits} qubits, target does not")
        v = circ.unitary()
        f1 = fidelity_f1(target, v)
        stored = circ.metrics.get("f1")
        row = {"circuit": str(path), "f1": f1, "stored_f1": stored}
        n1, n2 = gate_counts(circ.gates)
        row.update(n1=n1, n2=n2)
        if stored is None or abs(float(stored) - f1) > F1_CHECK_TOL:
            row["f1_mismatch"] = True
            print(f"{path}: F1 MISMATCH stored {stored} recomputed {f1:.12f}", file=sys.stderr)
            status = EXIT_VERIFY
        if circ.refined is not None:
            rf1 = fidelity_f1(target, circ.unitary(refined=True))
            row["refined_f1"] = rf1
            rstored = circ.refined.get("metrics", {}).get("f1")
            if rstored is not None and abs(float(rstored) - rf1) > F1_CHECK_TOL:
                row["refined_f1_mismatch"] = True
                status = EXIT_VERIFY
        for label in args.tv or []:
            if len(label) != circ.num_qubits or set(label) - set("01+-"):
                raise UsageError(f"bad --tv input state {label!r}")
            psi = product_state(label)
            p_ideal = output_distribution(target, psi)
            p_comp = output_distribution(v, psi)
            p_unif = uniform(circ.num_qubits)
            row[f"tv[{label}](compiled,ideal)"] = tv_distance(p_comp, p_ideal)
            row[f"tv[{label}](ideal,uniform)"] = tv_distance(p_ideal, p_unif)
            row[f"tv[{label}](compiled,uniform)"] = tv_distance(p_comp, p_unif)
        if args.oracle_depth is not None:
            if space is None:
                space = named_action_space(args.gateset) if args.gateset else None
                if space is None:
                    raise UsageError("--oracle-depth needs --gateset")
                table = bfs_table(space, args.oracle_depth)
            d = oracle_distance(target, table)
            row["oracle_length"] = d
            row["length"] = len(circ.gates)
            row["optimal"] = d is not None and len(circ.gates) == d
        rows.append(row)
        report_items.append(SimpleNamespace(
            f1=f1, n1=n1, n2=n2, elapsed=float(circ.metrics.get("elapsed_ms", 0.0)) / 1000.0,
            status="converged" if 1 - f1 <= args.epsilon else "budget_exhausted"))
    for row in rows:
        print(json.dumps(row) if args.json else "  ".join(
            f"{k}={v:.12g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    if args.report:
        rep = compile_report(report_items, names=[str(p) for p in args.circuits])
        text = rep.to_json() if str(args.report).endswith(".json") else rep.to_csv()
        Path(args.report).write_text(text)
    return status


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrlc", description="Q-network guided quantum circuit compiler")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a Q-network from a config file")
    t.add_argument("config")
    t.add_argument("--out-dir", default=None)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compile", help="compile target unitaries into native gates")
    c.add_argument("--model", action="append", help="model file; repeat for multi-model search")
    c.add_argument("--oracle-depth", type=int, default=None,
                   help="use an exact BFS oracle of this depth instead of a model")
    c.add_argument("--gateset", choices=sorted(GATESETS))
    c.add_argument("--config")
    c.add_argument("--target", action="append", required=True,
                   help="qft3, qft3r, rzz:GAMMA, haar:SEED, kak:SEED[:N], swap, identity, file:PATH.npy")
    c.add_argument("--mode", choices=["greedy", "frontier"])
    c.add_argument("--depth", type=int)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--width", type=int)
    c.add_argument("--time-limit", type=float)
    c.add_argument("--variational", action="store_true", help="refine single-qubit angles")
    c.add_argument("--template", help="skip search and fit a template: rzz or qft:PATTERN")
    c.add_argument("--restarts", type=int)
    c.add_argument("--out", help="circuit file (suffixed _i for several targets)")
    c.set_defaults(func=cmd_compile)

    e = sub.add_parser("eval", help="re-simulate circuit files and report metrics")
    e.add_argument("circuits", nargs="+")
    e.add_argument("--target", required=True)
    e.add_argument("--gateset", choices=sorted(GATESETS))
    e.add_argument("--tv", action="append", help="input product state such as 000 or +++")
    e.add_argument("--oracle-depth", type=int, default=None)
    e.add_argument("--epsilon", type=float, default=1e-4)
    e.add_argument("--report", help="write a CSV (or .json) report")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (DatasetMemoryError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ConfigError, CircuitFormatError, ModelFormatError, GateError, UsageError,
            ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
