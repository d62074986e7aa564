"""Command-line driver: ``sgs <verb> --config PATH --out DIR``.

Exit codes: 0 success, 2 invalid config or failed validation, 3 resource
cap exceeded, 4 optimizer stopped by its iteration cap (outputs written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, _kernels
from . import contraction as ctr
from . import correlations as cor
from .io import atomic_write, prep_to_json, save_state
from .lattice import SX, SZ, LatticeSpec, ResourceError, apply_hamiltonian, build_hamiltonian, exact_ground
from .optimizer import OptimizerOptions, best_of_restarts
from .state import (
    SGSParams,
    peps_bond_dims,
    prepare_sequence,
    random_sgs,
    replay,
    to_peps,
    contract_peps,
    to_statevector,
)
from .tensor import DimensionError, ValidationError

log = logging.getLogger("sgstates")

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE, EXIT_NOT_CONVERGED = 0, 2, 3, 4
JOBS = ("optimize", "exact", "correlations", "validate", "export-peps")
LARGE_SITES = 36  # optimize runs above this many sites need --ack-large

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "job": {"enum": list(JOBS)},
        "model": {"enum": ["heisenberg", "frustrated_xx", "random2body"]},
        "model_seed": {"type": "integer", "minimum": 0},
        "lattice": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rows", "cols"],
            "properties": {
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 2},
            },
        },
        "family": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sgs", "bsgs"]},
                "D": {"type": "integer", "minimum": 1},
                "M": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "restarts": {"type": "integer", "minimum": 1},
        "optimizer": {"type": "object"},
        "caps": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ed_dim": {"type": "integer", "minimum": 1},
                "statevector": {"type": "integer", "minimum": 1},
            },
        },
        "correlations": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "direction": {"enum": ["horizontal", "vertical"]},
                "ti_seed": {"type": "integer", "minimum": 0},
                "height": {"type": "integer", "minimum": 1},
                "width": {"type": "integer", "minimum": 1},
                "row": {"type": "integer", "minimum": 0},
                "column": {"type": "integer", "minimum": 0},
                "deltas": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"instances": {"type": "integer", "minimum": 1}},
        },
    },
}

DEFAULTS = {
    "model": "heisenberg",
    "model_seed": 0,
    "lattice": {"rows": 2, "cols": 2, "d": 2},
    "family": {"kind": "sgs", "D": 2, "M": 1, "N": 1},
    "seed": 0,
    "restarts": 1,
    "optimizer": {},
    "caps": {"ed_dim": 2**20, "statevector": 2**22},
    "correlations": {"direction": "horizontal", "ti_seed": 0, "height": 4, "width": 12, "row": 0, "column": 5, "deltas": [1, 2, 3, 4, 5, 6]},
    "validate": {"instances": 5},
}


class ConfigError(ValueError):
    pass


def resolve_config(raw: dict, verb: str, seed: int | None = None) -> dict:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {path}: {exc.message}") from exc
    if "job" in raw and raw["job"] != verb:
        raise ConfigError(f"config job {raw['job']!r} does not match verb {verb!r}")
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    cfg["job"] = verb
    if seed is not None:
        cfg["seed"] = seed
    fam = cfg["family"]
    if fam["kind"] == "sgs" and fam["N"] != 1:
        raise ConfigError("config field family/N: plain SGS requires N = 1")
    try:
        OptimizerOptions.from_dict(cfg["optimizer"])
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"config field optimizer: {exc}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _spec(cfg) -> LatticeSpec:
    lat = cfg["lattice"]
    return LatticeSpec(lat["rows"], lat["cols"], lat.get("d", 2))


def _params(cfg) -> SGSParams:
    fam = cfg["family"]
    return SGSParams(_spec(cfg), M=fam["M"], D=fam["D"], N=fam["N"])


def _hamiltonian(cfg):
    return build_hamiltonian(cfg["model"], _spec(cfg), seed=cfg["model_seed"] if cfg["model"] == "random2body" else None)


@dataclass
class ResultRecord:
    model: str
    lattice: str
    family: str
    D: int
    N: int
    E0: float | None
    reference: float | None
    relative_error: float | None
    wall_time: float
    seed: int
    trace_path: str | None = None


def _record(cfg, e0, reference, wall, trace_path=None) -> ResultRecord:
    fam = cfg["family"]
    rel = None
    if reference is not None and e0 is not None:
        if e0 < reference - 1e-9:
            raise RuntimeError(f"variational energy {e0} below exact reference {reference}")
        rel = abs(e0 - reference) / abs(reference)
    lat = cfg["lattice"]
    return ResultRecord(
        cfg["model"], f"{lat['rows']}x{lat['cols']}", fam["kind"], fam["D"], fam["N"], e0, reference, rel, wall, cfg["seed"], trace_path
    )


def _write_results(out: Path, cfg: dict, records) -> None:
    lines = []
    for r in records:
        lines.append(json.dumps({**asdict(r), "config": cfg, "config_hash": config_hash(cfg), "version": __version__}))
    atomic_write(out / "results.jsonl", "\n".join(lines) + "\n")
    buf = io.StringIO()
    fields = list(asdict(records[0]).keys())
    w = csv.DictWriter(buf, fieldnames=fields)
    w.writeheader()
    for r in records:
        w.writerow(asdict(r))
    atomic_write(out / "summary.csv", buf.getvalue())


# --------------------------------------------------------------------------
# jobs
# --------------------------------------------------------------------------


def job_exact(cfg, out: Path, ack_large: bool) -> int:
    t0 = time.perf_counter()
    h = _hamiltonian(cfg)
    e, _ = exact_ground(h, dim_cap=cfg["caps"]["ed_dim"])
    rec = _record(cfg, None, e, time.perf_counter() - t0)
    _write_results(out, cfg, [rec])
    print(f"E0 (exact) = {e:.12f}")
    return EXIT_OK


def job_optimize(cfg, out: Path, ack_large: bool) -> int:
    spec = _spec(cfg)
    if spec.n_sites > LARGE_SITES and not ack_large:
        raise ResourceError(f"{spec.n_sites} sites exceeds the desk-scale cap of {LARGE_SITES}; pass --ack-large")
    t0 = time.perf_counter()
    h = _hamiltonian(cfg)
    opts = OptimizerOptions.from_dict({**cfg["optimizer"], "seed": cfg["seed"], "restarts": cfg["restarts"]})
    res = best_of_restarts(_params(cfg), h, opts)
    wall = time.perf_counter() - t0
    reference = None
    if spec.d**spec.n_sites <= cfg["caps"]["ed_dim"]:
        reference, _ = exact_ground(h, dim_cap=cfg["caps"]["ed_dim"])
    atomic_write(out / "trace.jsonl", res.trace.to_jsonl())
    e0 = ctr.energy(res.state, h)
    save_state(out / "state.sgs", res.state, {"energy": e0, "seed": res.seeds[res.best_index], "config_hash": config_hash(cfg)})
    rec = _record(cfg, e0, reference, wall, "trace.jsonl")
    _write_results(out, cfg, [rec])
    print(f"E0 = {e0:.12f}  restarts = {res.energies}")
    if not res.trace.converged:
        log.warning("best run stopped at the iteration cap")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def job_correlations(cfg, out: Path, ack_large: bool) -> int:
    c = cfg["correlations"]
    desc = cor.random_ti(c["ti_seed"], d=_spec(cfg).d)
    spec = cor.transfer_spectrum(desc.a)
    if c["direction"] == "horizontal":
        s = cor.ti_state(desc, c["height"], c["width"])
        rep = cor.horizontal_correlator(s, SZ, SZ, c["row"], c["deltas"])
    else:
        chain = cor.vertical_chain(desc, c["height"], c["column"], c["width"])
        rep = cor.vertical_decay(chain, SZ, SZ, c["row"], c["deltas"])
    atomic_write(out / "decay.csv", rep.to_csv())
    doc = json.loads(rep.to_json())
    doc.update(
        transfer_ratio=spec.ratio,
        transfer_xi=spec.correlation_length,
        degenerate=spec.degenerate,
        config=cfg,
        config_hash=config_hash(cfg),
        version=__version__,
    )
    atomic_write(out / "decay.json", json.dumps(doc, indent=1))
    print(f"xi_fit = {rep.xi}  R2 = {rep.r_squared}  xi_transfer = {spec.correlation_length:.6f}")
    return EXIT_OK


def validate_instance(params: SGSParams, seed: int, tol: float = 1e-9, cap: int = 2**22) -> dict:
    """Compare every exact evaluation path against the statevector."""
    s = random_sgs(params, seed)
    spec = params.spec
    psi = to_statevector(s, cap)
    h = build_hamiltonian("random2body", spec, seed=seed)
    checks = {}
    checks["norm"] = abs(ctr.norm(s) - np.linalg.norm(psi))
    e_ref = np.vdot(psi, apply_hamiltonian(h, psi)).real
    checks["energy"] = abs(ctr.energy(s, h) - e_ref)
    rng = np.random.Generator(np.random.PCG64(seed))
    sites = spec.sites()
    i, j = rng.choice(len(sites), size=2, replace=False)
    a, b = sites[int(i)], sites[int(j)]
    phi = _kernels.apply_gate(psi, SZ, [spec.index(a)], spec.d)
    checks["one_site"] = abs(ctr.expect_local(s, {a: SZ}) - np.vdot(psi, phi))
    phi2 = _kernels.apply_gate(phi, SX, [spec.index(b)], spec.d)
    checks["two_site"] = abs(ctr.expect_local(s, {a: SZ, b: SX}) - np.vdot(psi, phi2))
    checks["peps"] = float(np.max(np.abs(contract_peps(to_peps(s)) - psi)))
    checks["replay"] = float(np.max(np.abs(replay(prepare_sequence(s), cap) - psi)))
    return {"seed": seed, "checks": checks, "passed": all(v <= tol for v in checks.values())}


def job_validate(cfg, out: Path, ack_large: bool) -> int:
    params = _params(cfg)
    n = cfg["validate"]["instances"]
    cap = cfg["caps"]["statevector"]
    results = [validate_instance(params, cfg["seed"] + i, cap=cap) for i in range(n)]
    ok = all(r["passed"] for r in results)
    atomic_write(
        out / "validate.json",
        json.dumps({"passed": ok, "instances": results, "config": cfg, "config_hash": config_hash(cfg), "version": __version__}, indent=1),
    )
    worst = max(max(r["checks"].values()) for r in results)
    print(f"{'PASS' if ok else 'FAIL'}: {n} instances, worst deviation {worst:.2e}")
    return EXIT_OK if ok else EXIT_INVALID


def job_export_peps(cfg, out: Path, ack_large: bool) -> int:
    params = _params(cfg)
    s = random_sgs(params, cfg["seed"])
    grid = to_peps(s)
    arrays = {f"site_{r}_{c}": t for r, row in enumerate(grid) for c, t in enumerate(row)}
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(out / "peps.npz", buf.getvalue())
    save_state(out / "state.sgs", s, {"seed": cfg["seed"]})
    meta = {"modes": "(left, up, right, down, physical)", "bond_dims": {k: v for k, v in peps_bond_dims(grid).items()}}
    atomic_write(out / "peps.json", json.dumps(meta, indent=1, default=str))
    atomic_write(out / "prep.json", prep_to_json(prepare_sequence(s)))
    print(f"wrote {len(arrays)} PEPS tensors")
    return EXIT_OK


JOB_FUNCS = {
    "optimize": job_optimize,
    "exact": job_exact,
    "correlations": job_correlations,
    "validate": job_validate,
    "export-peps": job_export_peps,
}


# --------------------------------------------------------------------------
# table reproduction
# --------------------------------------------------------------------------

# (key, model, rows, cols, N, D, M, published E0)
REFERENCE_TABLE = [
    ("random-8x8-D2", "random2body", 8, 8, 1, 2, 1, -169.309),
    ("random-8x8-D4", "random2body", 8, 8, 1, 4, 2, -169.556),
    ("random-8x8-D8", "random2body", 8, 8, 1, 8, 3, -169.613),
    ("heisenberg-8x8-D2", "heisenberg", 8, 8, 1, 2, 1, -153.737),
    ("heisenberg-8x8-D4", "heisenberg", 8, 8, 1, 4, 2, -154.031),
    ("heisenberg-8x8-D8", "heisenberg", 8, 8, 1, 8, 3, -154.142),
    ("heisenberg-10x10-D2", "heisenberg", 10, 10, 1, 2, 1, -244.830),
    ("heisenberg-10x10-D4", "heisenberg", 10, 10, 1, 4, 2, -245.244),
    ("heisenberg-10x10-D8", "heisenberg", 10, 10, 1, 8, 3, -245.383),
    ("frustrated_xx-8x8-D2", "frustrated_xx", 8, 8, 1, 2, 1, -90.598),
    ("frustrated_xx-8x8-D4", "frustrated_xx", 8, 8, 1, 4, 2, -91.242),
    ("frustrated_xx-8x8-D8", "frustrated_xx", 8, 8, 1, 8, 3, -91.398),
    ("random-8x8-N2-D4", "random2body", 8, 8, 2, 4, 1, -169.963),
    ("heisenberg-8x8-N2-D4", "heisenberg", 8, 8, 2, 4, 1, -155.231),
    ("heisenberg-10x10-N2-D4", "heisenberg", 10, 10, 2, 4, 1, -246.852),
    ("frustrated_xx-8x8-N2-D4", "frustrated_xx", 8, 8, 2, 4, 1, -91.703),
]
DEFAULT_TABLE_KEYS = ["heisenberg-8x8-D2", "heisenberg-8x8-D4", "heisenberg-8x8-N2-D4"]


def reproduce_tables(out: Path, keys, seed: int, restarts: int, optimizer: dict, ack_large: bool) -> int:
    if not ack_large:
        raise ResourceError("table reproduction runs 8x8 and larger lattices; pass --ack-large")
    rows = [r for r in REFERENCE_TABLE if r[0] in keys]
    unknown = set(keys) - {r[0] for r in REFERENCE_TABLE}
    if unknown:
        raise ConfigError(f"unknown table rows {sorted(unknown)}")
    table = []
    for key, model, nr, nc, n, dd, m, ref_e0 in rows:
        cfg = resolve_config(
            {
                "model": model,
                "lattice": {"rows": nr, "cols": nc, "d": 2},
                "family": {"kind": "bsgs" if n > 1 else "sgs", "D": dd, "M": m, "N": n},
                "restarts": restarts,
                "optimizer": optimizer,
            },
            "optimize",
            seed,
        )
        t0 = time.perf_counter()
        h = _hamiltonian(cfg)
        opts = OptimizerOptions.from_dict({**optimizer, "seed": seed, "restarts": restarts})
        res = best_of_restarts(_params(cfg), h, opts)
        e0 = ctr.energy(res.state, h)
        sub = out / key
        atomic_write(sub / "trace.jsonl", res.trace.to_jsonl())
        save_state(sub / "state.sgs", res.state, {"energy": e0, "config_hash": config_hash(cfg)})
        comparable = model != "random2body"
        table.append(
            {
                "row": key,
                "model": model,
                "lattice": f"{nr}x{nc}",
                "N": n,
                "D": dd,
                "E0": e0,
                "published_E0": ref_e0,
                "comparable": comparable,
                "note": "" if comparable else "non-comparable: published instance is unseeded",
                "eps_r": "non-comparable: published value is relative to an external PEPS solver",
                "wall_time": time.perf_counter() - t0,
                "converged": res.trace.converged,
            }
        )
        log.info("%s: E0 = %.6f (published %.3f)", key, e0, ref_e0)
        _write_table(out, table)
    return EXIT_OK


def _write_table(out: Path, table) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(table[0].keys()))
    w.writeheader()
    w.writerows(table)
    atomic_write(out / "tables.csv", buf.getvalue())
    lines = ["| model | lattice | N | D | E0 | published E0 | note |", "|---|---|---|---|---|---|---|"]
    for t in table:
        lines.append(
            f"| {t['model']} | {t['lattice']} | {t['N']} | {t['D']} | {t['E0']:.3f} | {t['published_E0']:.3f} | {t['note']} |"
        )
    atomic_write(out / "tables.md", "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgs", description="Sequentially generated states: experiments and checks")
    p.add_argument("verb", choices=list(JOBS) + ["reproduce-tables"])
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (1 gives bit-exact reruns)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--ack-large", action="store_true", help="allow hour-scale runs")
    p.add_argument("--rows", nargs="*", help="reproduce-tables: row keys (default: Heisenberg 8x8 rows)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(levelname)s %(message)s")
    try:
        raw = {}
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        with threadpool_limits(limits=args.threads):
            if args.verb == "reproduce-tables":
                keys = args.rows or DEFAULT_TABLE_KEYS
                return reproduce_tables(
                    args.out, keys, args.seed or 0, raw.get("restarts", 3), raw.get("optimizer", {}), args.ack_large
                )
            cfg = resolve_config(raw, args.verb, args.seed)
            return JOB_FUNCS[args.verb](cfg, args.out, args.ack_large)
    except (ConfigError, ValidationError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
