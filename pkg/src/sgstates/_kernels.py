"""Statevector inner loops.

Two interchangeable backends: numba-compiled index loops and a pure numpy
reshape/tensordot path. Set ``SGS_DISABLE_NUMBA=1`` to force numpy; the
backend is chosen once at import time.
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

USE_NUMBA = os.environ.get("SGS_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


@lru_cache(maxsize=256)
def _offsets(targets: tuple, d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Base indices (all target digits zero) and the offsets of each target pattern."""
    strides = np.array([d ** (n - 1 - t) for t in targets], dtype=np.int64)
    k = len(targets)
    offs = np.zeros(d**k, dtype=np.int64)
    for m in range(d**k):
        rem = m
        for j in range(k - 1, -1, -1):
            offs[m] += (rem % d) * strides[j]
            rem //= d
    free = [d ** (n - 1 - t) for t in range(n) if t not in targets]
    bases = np.zeros(1, dtype=np.int64)
    for st in free:
        bases = (bases[:, None] + st * np.arange(d, dtype=np.int64)[None, :]).reshape(-1)
    return bases, offs


if USE_NUMBA:

    @njit(cache=True)
    def _gate_loop(psi, gate, bases, offs, out, accumulate):  # pragma: no cover - compiled
        m = offs.shape[0]
        vec = np.empty(m, dtype=np.complex128)
        for base in bases:
            for a in range(m):
                vec[a] = psi[base + offs[a]]
            for a in range(m):
                acc = 0j
                for b in range(m):
                    acc += gate[a, b] * vec[b]
                if accumulate:
                    out[base + offs[a]] += acc
                else:
                    out[base + offs[a]] = acc


def _apply_numpy(psi, gate, targets, d, n):
    k = len(targets)
    t = psi.reshape((d,) * n)
    g = gate.reshape((d,) * (2 * k))
    res = np.tensordot(g, t, axes=(list(range(k, 2 * k)), list(targets)))
    return np.moveaxis(res, list(range(k)), list(targets)).reshape(-1)


def apply_gate(psi: np.ndarray, gate: np.ndarray, targets, d: int) -> np.ndarray:
    """Return ``gate`` applied to ``psi`` on qudits ``targets``.

    Qudit 0 is the most significant digit; ``gate`` rows/columns are ordered
    with ``targets[0]`` most significant.
    """
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    gate = np.ascontiguousarray(gate, dtype=np.complex128)
    n = int(round(np.log(psi.size) / np.log(d)))
    targets = [int(t) for t in targets]
    if USE_NUMBA:
        bases, offs = _offsets(tuple(targets), d, n)
        out = np.empty_like(psi)
        _gate_loop(psi, gate, bases, offs, out, False)
        return out
    return np.ascontiguousarray(_apply_numpy(psi, gate, targets, d, n))


def accumulate_local(out: np.ndarray, psi: np.ndarray, op: np.ndarray, targets, d: int) -> None:
    """``out += op_targets @ psi`` without forming the global matrix."""
    op = np.ascontiguousarray(op, dtype=np.complex128)
    n = int(round(np.log(psi.size) / np.log(d)))
    targets = [int(t) for t in targets]
    if USE_NUMBA:
        bases, offs = _offsets(tuple(targets), d, n)
        _gate_loop(psi, op, bases, offs, out, True)
    else:
        out += _apply_numpy(psi, op, targets, d, n)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
