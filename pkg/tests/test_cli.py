import json
import struct

import numpy as np
import pytest

from sgstates import contraction as ct
from sgstates.cli import EXIT_INVALID, EXIT_OK, EXIT_RESOURCE, ConfigError, config_hash, resolve_config, run
from sgstates.io import FormatError, load_state, save_state, state_from_bytes, state_to_bytes
from sgstates.lattice import LatticeSpec, build_hamiltonian
from sgstates.state import SGSParams, random_sgs, to_statevector


def write_config(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.mark.parametrize("params", [SGSParams(LatticeSpec(3, 3), M=1, D=2), SGSParams(LatticeSpec(4, 2), M=1, D=2, N=2)])
def test_state_roundtrip(tmp_path, params):
    s = random_sgs(params, 3)
    h = build_hamiltonian("heisenberg", params.spec)
    e = ct.energy(s, h)
    save_state(tmp_path / "s.sgs", s, {"energy": e})
    back, meta = load_state(tmp_path / "s.sgs")
    assert back.params == params
    assert abs(ct.energy(back, h) - meta["energy"]) < 1e-10
    assert np.array_equal(to_statevector(back), to_statevector(s))


def test_state_file_layout():
    s = random_sgs(SGSParams(LatticeSpec(2, 2), M=1, D=2), 0)
    data = state_to_bytes(s)
    assert data[:8] == b"SGSTATE1"
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    assert header["format_version"] == 1
    assert "unitary" in header["conventions"]
    last = header["tensors"][-1]
    assert 16 + n + last["offset"] + 16 * int(np.prod(last["shape"])) == len(data)


def test_bad_magic():
    with pytest.raises(FormatError):
        state_from_bytes(b"NOTSTATE" + bytes(8))


def test_resolve_config_defaults_and_errors():
    cfg = resolve_config({"lattice": {"rows": 3, "cols": 2}}, "exact", seed=5)
    assert cfg["seed"] == 5 and cfg["lattice"]["d"] == 2 and cfg["job"] == "exact"
    with pytest.raises(ConfigError, match="lattice/rows"):
        resolve_config({"lattice": {"rows": 0, "cols": 2}}, "exact")
    with pytest.raises(ConfigError, match="optimizer"):
        resolve_config({"optimizer": {"delta0": -1}}, "optimize")
    with pytest.raises(ConfigError):
        resolve_config({"job": "exact"}, "optimize")
    assert config_hash(cfg) == config_hash(json.loads(json.dumps(cfg)))


def test_exact_job(tmp_path, capsys):
    path = write_config(tmp_path, {"model": "heisenberg", "lattice": {"rows": 2, "cols": 2}})
    assert run(["exact", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_OK
    rec = json.loads((tmp_path / "o" / "results.jsonl").read_text().splitlines()[0])
    assert rec["reference"] == pytest.approx(-8.0, abs=1e-8)
    assert rec["relative_error"] is None
    assert rec["config"]["lattice"]["rows"] == 2 and len(rec["config_hash"]) == 64 and rec["version"]
    assert (tmp_path / "o" / "summary.csv").exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {"lattice": {"rows": 2}})
    assert run(["exact", "--config", path, "--out", str(tmp_path)]) == EXIT_INVALID
    assert "lattice" in capsys.readouterr().err


def test_resource_cap_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {"lattice": {"rows": 4, "cols": 4}, "caps": {"ed_dim": 1024}})
    assert run(["exact", "--config", path, "--out", str(tmp_path)]) == EXIT_RESOURCE
    assert "1024" in capsys.readouterr().err
    assert run(["reproduce-tables", "--out", str(tmp_path)]) == EXIT_RESOURCE


def test_validate_job(tmp_path, capsys):
    path = write_config(tmp_path, {"lattice": {"rows": 3, "cols": 3}, "validate": {"instances": 2}})
    assert run(["validate", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "validate.json").read_text())
    assert doc["passed"] and set(doc["instances"][0]["checks"]) >= {"norm", "energy", "peps", "replay"}


def test_optimize_job_outputs(tmp_path, capsys):
    cfg = {"lattice": {"rows": 2, "cols": 2}, "optimizer": {"max_outer_iterations": 2}}
    code = run(["optimize", "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code in (EXIT_OK, 4)
    out = tmp_path / "o"
    rec = json.loads((out / "results.jsonl").read_text())
    state, meta = load_state(out / "state.sgs")
    assert meta["energy"] == pytest.approx(rec["E0"], abs=1e-10)
    assert rec["E0"] >= rec["reference"] - 1e-9
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["phase"] == "init"


def test_optimize_requires_ack_for_large(tmp_path, capsys):
    path = write_config(tmp_path, {"lattice": {"rows": 8, "cols": 8}})
    assert run(["optimize", "--config", path, "--out", str(tmp_path)]) == EXIT_RESOURCE


def test_correlations_job(tmp_path, capsys):
    path = write_config(tmp_path, {"correlations": {"direction": "vertical", "height": 12, "column": 2, "width": 6, "row": 2, "deltas": [1, 2, 3, 4]}})
    assert run(["correlations", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "decay.csv").read_text().startswith("delta,value")
    doc = json.loads((tmp_path / "decay.json").read_text())
    assert doc["direction"] == "vertical" and "transfer_xi" in doc


def test_export_peps_job(tmp_path, capsys):
    path = write_config(tmp_path, {"lattice": {"rows": 3, "cols": 2}})
    assert run(["export-peps", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    with np.load(tmp_path / "peps.npz") as z:
        assert len(z.files) == 6
    assert json.loads((tmp_path / "prep.json").read_text())["initial_state"].startswith("all sites")
