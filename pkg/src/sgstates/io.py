"""State files and gate-list export.

State file layout::

    8 bytes   magic b"SGSTATE1"
    8 bytes   header length n, unsigned little-endian
    n bytes   UTF-8 JSON header
    rest      tensor payload, little-endian complex128, in header order

The header records the parameters, the index conventions, free-form
metadata (seed lineage, energies) and for every tensor its name, shape and
byte offset into the payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .lattice import LatticeSpec
from .mps import MPSRow
from .state import PrepSequence, SGSParams, SGSState, new_sgs

MAGIC = b"SGSTATE1"
FORMAT_VERSION = 1
CONVENTIONS = {
    "rows": "row 0 is the top row; effective row R holds physical rows R*N..R*N+N-1, top row most significant",
    "mps": "site tensors (left bond, physical, right bond)",
    "unitary": "unitaries[k][c] acts on effective rows k..k+M of column c; (out rows) x (in rows), top row most significant",
    "order": "column unitaries applied for k = H_eff-M-1 down to 0",
    "statevector": "row-major sites r*V+c, site 0 most significant",
}


class FormatError(ValueError):
    """Unreadable or incompatible state file."""


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def state_to_bytes(s: SGSState, meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0

    def add(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<c16")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes

    for r, row in enumerate(s.rows):
        for c, t in enumerate(row.tensors):
            add(f"A/{r}/{c}", t)
    for k, col in enumerate(s.unitaries):
        for c, u in enumerate(col):
            add(f"U/{k}/{c}", u)
    header = {
        "format_version": FORMAT_VERSION,
        "params": s.params.to_dict(),
        "conventions": CONVENTIONS,
        "meta": meta or {},
        "tensors": entries,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def state_from_bytes(data: bytes, validate: bool = True) -> tuple[SGSState, dict]:
    if data[:8] != MAGIC:
        raise FormatError("not an SGS state file (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16 : 16 + n])
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('format_version')}")
    payload = memoryview(data)[16 + n :]
    params = SGSParams.from_dict(header["params"])
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"]))
        arr = np.frombuffer(payload, dtype="<c16", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.complex128)
    v = params.spec.cols
    rows = [MPSRow(tuple(tensors[f"A/{r}/{c}"] for c in range(v))) for r in range(params.eff_rows)]
    us = [[tensors[f"U/{k}/{c}"] for c in range(v)] for k in range(params.n_gates_per_column)]
    return new_sgs(params, rows, us, validate=validate), header.get("meta", {})


def save_state(path, s: SGSState, meta: dict | None = None) -> None:
    atomic_write(path, state_to_bytes(s, meta))


def load_state(path, validate: bool = True) -> tuple[SGSState, dict]:
    return state_from_bytes(Path(path).read_bytes(), validate)


def _encode_matrix(u: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in np.asarray(u)]


def prep_to_json(seq: PrepSequence) -> str:
    """Gate list: apply in order to |0...0>; sites as [row, col], first most significant."""
    doc = {
        "lattice": {"rows": seq.spec.rows, "cols": seq.spec.cols, "d": seq.spec.d},
        "initial_state": "all sites |0>",
        "gates": [{"sites": [list(x) for x in sites], "matrix": _encode_matrix(u)} for u, sites in seq.gates],
    }
    return json.dumps(doc)


def prep_from_json(text: str) -> PrepSequence:
    doc = json.loads(text)
    lat = doc["lattice"]
    spec = LatticeSpec(lat["rows"], lat["cols"], lat["d"])
    gates = []
    for g in doc["gates"]:
        m = np.array(g["matrix"], dtype=float)
        gates.append((m[..., 0] + 1j * m[..., 1], tuple(tuple(x) for x in g["sites"])))
    return PrepSequence(spec, tuple(gates))
