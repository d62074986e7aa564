"""Sequentially generated states (SGS) and their block variant (B-SGS).

Conventions
-----------
* Rows are numbered from the top (row 0) to the bottom; effective rows of a
  B-SGS group ``N`` consecutive physical rows, top row most significant.
* ``unitaries[k][c]`` acts on effective rows ``k .. k+M`` of column ``c``.
  Its matrix is indexed (out rows k..k+M) x (in rows k..k+M), top row most
  significant on both sides. Column gates are applied bottom-up, i.e. for
  ``k = Hr-M-1`` down to ``0``, after every row MPS has been prepared.
* Statevectors use row-major site order ``r*V + c`` with site 0 as the most
  significant digit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _kernels
from . import mps as mpslib
from .lattice import LatticeSpec, ResourceError
from .mps import MPSRow
from .tensor import (
    DimensionError,
    ValidationError,
    as_tensor,
    random_hermitian,
    random_unitary,
    unitarity_defect,
    unitary_exp,
)

STATEVECTOR_CAP = 2**22
UNITARITY_TOL = 1e-8
NORM_TOL = 1e-10


@dataclass(frozen=True)
class SGSParams:
    spec: LatticeSpec
    M: int = 1
    D: int = 2
    N: int = 1

    def __post_init__(self):
        if self.M < 1 or self.D < 1 or self.N < 1:
            raise ValidationError(f"invalid SGS parameters {self}")
        if self.spec.rows % self.N:
            raise ValidationError(f"rows={self.spec.rows} not divisible by block size N={self.N}")

    @property
    def eff_rows(self) -> int:
        return self.spec.rows // self.N

    @property
    def eff_d(self) -> int:
        return self.spec.d**self.N

    @property
    def eff_spec(self) -> LatticeSpec:
        return LatticeSpec(self.eff_rows, self.spec.cols, self.eff_d)

    @property
    def n_gates_per_column(self) -> int:
        return max(0, self.eff_rows - self.M)

    @property
    def gate_dim(self) -> int:
        return self.eff_d ** (self.M + 1)

    def to_dict(self) -> dict:
        return {"rows": self.spec.rows, "cols": self.spec.cols, "d": self.spec.d, "M": self.M, "D": self.D, "N": self.N}

    @classmethod
    def from_dict(cls, d: dict) -> "SGSParams":
        return cls(LatticeSpec(d["rows"], d["cols"], d["d"]), d["M"], d["D"], d["N"])


@dataclass(frozen=True)
class SGSState:
    params: SGSParams
    rows: tuple
    unitaries: tuple = field(default=())

    @property
    def V(self) -> int:
        return self.params.spec.cols

    def with_row(self, r: int, row: MPSRow) -> "SGSState":
        rows = list(self.rows)
        rows[r] = row
        return replace(self, rows=tuple(rows))

    def with_unitary(self, k: int, c: int, u) -> "SGSState":
        us = [list(x) for x in self.unitaries]
        us[k][c] = as_tensor(u)
        return replace(self, unitaries=tuple(tuple(x) for x in us))

    def gate_rows(self, k: int) -> list[int]:
        return list(range(k, k + self.params.M + 1))


def new_sgs(params: SGSParams, rows, unitaries, validate: bool = True) -> SGSState:
    """Build a state; shapes are always checked, numerics only if ``validate``."""
    rows = tuple(rows)
    hr, v, q = params.eff_rows, params.spec.cols, params.eff_d
    if len(rows) != hr:
        raise DimensionError(f"expected {hr} row MPS, got {len(rows)}")
    for r, row in enumerate(rows):
        if len(row) != v or row.d != q:
            raise DimensionError(f"row {r}: expected {v} sites of dimension {q}")
    g = params.n_gates_per_column
    unitaries = tuple(tuple(as_tensor(u) for u in col) for col in unitaries)
    if len(unitaries) != g or any(len(x) != v for x in unitaries):
        raise DimensionError(f"expected a {g} x {v} table of column unitaries")
    for k in range(g):
        for c in range(v):
            u = unitaries[k][c]
            if u.shape != (params.gate_dim, params.gate_dim):
                raise DimensionError(f"unitary ({k},{c}) has shape {u.shape}, expected {params.gate_dim}^2")
            if validate and unitarity_defect(u) > UNITARITY_TOL:
                raise ValidationError(f"unitary ({k},{c}) violates unitarity by {unitarity_defect(u):.2e}")
    if validate:
        for r, row in enumerate(rows):
            if abs(mpslib.norm(row) - 1.0) > NORM_TOL:
                raise ValidationError(f"row {r} is not normalized (norm {mpslib.norm(row):.12f})")
    return SGSState(params, rows, unitaries)


def identity_unitaries(params: SGSParams) -> tuple:
    eye = np.eye(params.gate_dim, dtype=np.complex128)
    return tuple(tuple(eye.copy() for _ in range(params.spec.cols)) for _ in range(params.n_gates_per_column))


def random_sgs(params: SGSParams, seed: int, unitary_scale: float | None = None) -> SGSState:
    """Seeded random state: random row MPS and unitaries exp(i*scale*H_rand).

    ``unitary_scale=None`` draws Haar-like unitaries (scale large enough to
    scramble); a small scale gives identity-perturbed unitaries.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = [
        mpslib.random_mps(params.spec.cols, params.eff_d, params.D, int(rng.integers(2**62)))
        for _ in range(params.eff_rows)
    ]
    us = []
    for _ in range(params.n_gates_per_column):
        col = []
        for _ in range(params.spec.cols):
            if unitary_scale is None:
                col.append(random_unitary(params.gate_dim, rng))
            else:
                col.append(unitary_exp(random_hermitian(params.gate_dim, rng), unitary_scale))
        us.append(col)
    return new_sgs(params, rows, us)


def physical_to_effective(params: SGSParams, site) -> tuple[tuple[int, int], int]:
    r, c = site
    return (r // params.N, c), r % params.N


def effective_operator(params: SGSParams, ops: dict) -> dict:
    """Map {physical site: d x d op} to {effective site: d^N x d^N op}."""
    if params.N == 1:
        return {tuple(k): as_tensor(v) for k, v in ops.items()}
    d, n = params.spec.d, params.N
    grouped: dict = {}
    for site, op in ops.items():
        eff, j = physical_to_effective(params, tuple(site))
        grouped.setdefault(eff, [np.eye(d, dtype=np.complex128) for _ in range(n)])
        grouped[eff][j] = grouped[eff][j] @ as_tensor(op)
    out = {}
    for eff, factors in grouped.items():
        m = factors[0]
        for f in factors[1:]:
            m = np.kron(m, f)
        out[eff] = m
    return out


def _check_cap(params: SGSParams, cap: int) -> None:
    size = params.spec.d**params.spec.n_sites
    if size > cap:
        raise ResourceError(f"statevector of {size} amplitudes exceeds cap {cap}")


def effective_to_physical_vector(params: SGSParams, psi: np.ndarray) -> np.ndarray:
    if params.N == 1:
        return psi
    d, n, hr, v = params.spec.d, params.N, params.eff_rows, params.spec.cols
    t = psi.reshape((d,) * (hr * v * n))
    # axis for (R, c, j) sits at position (R*v + c)*n + j; reorder to (R, j, c)
    perm = [(big_r * v + c) * n + j for big_r in range(hr) for j in range(n) for c in range(v)]
    return np.ascontiguousarray(t.transpose(perm).reshape(-1))


def to_statevector(s: SGSState, cap: int = STATEVECTOR_CAP) -> np.ndarray:
    """Row MPS product followed by the ordered column unitaries (physical order)."""
    p = s.params
    _check_cap(p, cap)
    psi = np.ones(1, dtype=np.complex128)
    for row in s.rows:
        psi = np.kron(psi, mpslib.to_vector(row))
    v, q, m = p.spec.cols, p.eff_d, p.M
    for k in range(p.n_gates_per_column - 1, -1, -1):
        for c in range(v):
            psi = _kernels.apply_gate(psi, s.unitaries[k][c], [(k + j) * v + c for j in range(m + 1)], q)
    return effective_to_physical_vector(p, psi)


# --------------------------------------------------------------------------
# PEPS export
# --------------------------------------------------------------------------


def _as_peps_site(a: np.ndarray) -> np.ndarray:
    dl, q, dr = a.shape
    return a.transpose(0, 2, 1).reshape(dl, 1, dr, 1, q)


def _is_identity(u: np.ndarray) -> bool:
    return bool(np.max(np.abs(u - np.eye(u.shape[0]))) < 1e-14)


def _column_peps(s: SGSState, c: int) -> list[np.ndarray]:
    p = s.params
    hr, q, m = p.eff_rows, p.eff_d, p.M
    a = [row.tensors[c] for row in s.rows]
    g = p.n_gates_per_column
    if g == 0 or all(_is_identity(s.unitaries[k][c]) for k in range(g)):
        return [_as_peps_site(t) for t in a]
    col: list = [None] * hr
    # top rows: routing tensors carrying the final outputs of the last gate
    for x in range(m):
        b = np.zeros((1, q**x, 1, q ** (x + 1), q), dtype=np.complex128)
        for up in range(q**x):
            for i in range(q):
                b[0, up, 0, up * q + i, i] = 1.0
        col[x] = b
    for x in range(m, hr):
        k = x - m
        u = s.unitaries[k][c].reshape(q**m, q, q, q**m)  # [up, i, j, down]
        if x < hr - 1:
            b = np.einsum("uijd,ljr->lurdi", u, a[k])
        else:
            fresh = a[k + 1]
            for t in a[k + 2 : k + m + 1]:
                fresh = np.einsum("ajb,xiy->axjiby", fresh, t).reshape(
                    fresh.shape[0] * t.shape[0], -1, fresh.shape[2] * t.shape[2]
                )
            b = np.einsum("uijd,ljr,LdR->lLurRi", u, a[k], fresh)
            sh = b.shape
            b = b.reshape(sh[0] * sh[1], sh[2], sh[3] * sh[4], 1, sh[5])
        col[x] = np.ascontiguousarray(b)
    return col


def _split_block(b: np.ndarray, n: int, d: int) -> list[np.ndarray]:
    """Split an effective-site tensor into ``n`` physical-site tensors by SVD."""
    l, u, r, dn, _ = b.shape
    rest = b.reshape(l, u, r, dn, *(d,) * n)
    parts = []
    left = rest.transpose(0, 1, 2, 4, *range(5, 4 + n), 3)  # l u r i0 i1.. down
    left = left.reshape(l * u * r * d, -1)
    bond_up = None
    for j in range(n - 1):
        uu, ss, vh = np.linalg.svd(left, full_matrices=False)
        keep = max(1, int(np.sum(ss > 1e-14 * max(ss[0], 1e-300))))
        uu, ss, vh = uu[:, :keep], ss[:keep], vh[:keep]
        if j == 0:
            parts.append(uu.reshape(l, u, r, d, keep).transpose(0, 1, 2, 4, 3))
        else:
            parts.append(uu.reshape(1, bond_up, 1, d, keep).transpose(0, 1, 2, 4, 3))
        bond_up = keep
        left = (ss[:, None] * vh).reshape(keep * d, -1)
    last = left.reshape(bond_up, d, dn)
    if n == 1:
        return [b]
    parts.append(last.reshape(1, bond_up, 1, d, dn).transpose(0, 1, 2, 4, 3))
    return parts


def to_peps(s: SGSState) -> list[list[np.ndarray]]:
    """PEPS grid (physical lattice) with site tensors of modes (l, u, r, d, phys)."""
    p = s.params
    cols = [_column_peps(s, c) for c in range(p.spec.cols)]
    eff = [[cols[c][r] for c in range(p.spec.cols)] for r in range(p.eff_rows)]
    if p.N == 1:
        return eff
    grid = [[None] * p.spec.cols for _ in range(p.spec.rows)]
    for big_r in range(p.eff_rows):
        for c in range(p.spec.cols):
            for j, t in enumerate(_split_block(eff[big_r][c], p.N, p.spec.d)):
                grid[big_r * p.N + j][c] = np.ascontiguousarray(t)
    return grid


def contract_peps(grid) -> np.ndarray:
    """Exact full contraction of a small PEPS into a statevector (row-major sites)."""
    h, v = len(grid), len(grid[0])
    label = iter(range(10**6))
    hb = [[next(label) for _ in range(v + 1)] for _ in range(h)]
    vb = [[next(label) for _ in range(v)] for _ in range(h + 1)]
    phys = [[next(label) for _ in range(v)] for _ in range(h)]
    operands = []
    for r in range(h):
        for c in range(v):
            t = grid[r][c]
            operands += [t, [hb[r][c], vb[r][c], hb[r][c + 1], vb[r + 1][c], phys[r][c]]]
    out = [phys[r][c] for r in range(h) for c in range(v)]
    # outer boundary bonds have extent 1; einsum sums them away
    res = np.einsum(*operands, out, optimize="greedy")
    return np.ascontiguousarray(res.reshape(-1))


def peps_bond_dims(grid) -> dict:
    horiz = max(t.shape[0] for row in grid for t in row)
    horiz = max(horiz, max(t.shape[2] for row in grid for t in row))
    vert = max(max(t.shape[1], t.shape[3]) for row in grid for t in row)
    return {"horizontal": int(horiz), "vertical": int(vert)}


# --------------------------------------------------------------------------
# Sequential preparation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PrepSequence:
    """Ordered gates on physical sites, to be applied to |0...0>."""

    spec: LatticeSpec
    gates: tuple  # of (unitary, tuple of (r, c))

    def __len__(self):
        return len(self.gates)


def complete_unitary(cols: np.ndarray, positions, n: int) -> np.ndarray:
    """Unitary ``n x n`` whose columns at ``positions`` are ``cols``."""
    out = np.zeros((n, n), dtype=np.complex128)
    out[:, list(positions)] = cols
    rest = [i for i in range(n) if i not in set(positions)]
    if rest:
        comp = scipy.linalg.null_space(cols.conj().T) if cols.size else np.eye(n)
        out[:, rest] = comp[:, : len(rest)]
    return out


def _row_gates(row: MPSRow, m: int):
    """Staircase of unitaries preparing ``row`` from |0...0>.

    Gates span ``w + 1`` sites, where ``w`` is the larger of ``M`` and the
    number of sites needed to hold the largest bond index. The gate for site
    k (k = V-1 down to w) acts on sites k-w..k: it reads the bond index from
    sites k-w+1..k and writes the new bond index to sites k-w..k-1 and the
    physical value to site k.
    """
    v, q = len(row), row.d
    lc = mpslib.normalize(mpslib.canonicalize(row, v - 1))
    ts = list(lc.tensors)
    # canonicalization fixes a phase; restore it so the replay is exact
    ov = mpslib.overlap(lc, row)
    if abs(ov) > 0:
        ts[0] = ts[0] * (ov / abs(ov))
    bond = max(max(t.shape[0], t.shape[2]) for t in ts)
    w = m
    while q**w < bond:
        w += 1
    if v <= w:
        vec = mpslib.to_vector(mpslib.MPSRow(tuple(ts))).reshape(-1, 1)
        return [(complete_unitary(vec, [0], q**v), list(range(v)))]
    full = q ** (w + 1)
    gates = []
    for k in range(v - 1, w - 1, -1):
        if k > w:
            a = ts[k]
            dl, _, dr = a.shape
            cols = np.zeros((q**w, q, dr), dtype=np.complex128)
            cols[:dl] = a
            cols = cols.reshape(full, dr)
        else:
            head = ts[0]
            for t in ts[1 : w + 1]:
                head = np.tensordot(head, t, axes=(head.ndim - 1, 0))
            cols = head.reshape(full, -1)
        gates.append((complete_unitary(cols, list(range(cols.shape[1])), full), list(range(k - w, k + 1))))
    return gates


def prepare_sequence(s: SGSState) -> PrepSequence:
    """Export the state as gates: row staircases, then column gates bottom-up."""
    p = s.params
    v, n, m = p.spec.cols, p.N, p.M

    def phys(big_r, c):
        return [(big_r * n + j, c) for j in range(n)]

    gates = []
    for big_r, row in enumerate(s.rows):
        for u, sites in _row_gates(row, m):
            gates.append((u, tuple(x for c in sites for x in phys(big_r, c))))
    for k in range(p.n_gates_per_column - 1, -1, -1):
        for c in range(v):
            gates.append((s.unitaries[k][c], tuple(x for j in range(m + 1) for x in phys(k + j, c))))
    return PrepSequence(p.spec, tuple(gates))


def replay(seq: PrepSequence, cap: int = STATEVECTOR_CAP) -> np.ndarray:
    spec = seq.spec
    size = spec.d**spec.n_sites
    if size > cap:
        raise ResourceError(f"statevector of {size} amplitudes exceeds cap {cap}")
    psi = np.zeros(size, dtype=np.complex128)
    psi[0] = 1.0
    for u, sites in seq.gates:
        psi = _kernels.apply_gate(psi, u, [spec.index(x) for x in sites], spec.d)
    return psi


def expected_gate_count(params: SGSParams) -> int:
    hr, v, m = params.eff_rows, params.spec.cols, params.M
    return hr * max(v - m, 1) + v * max(hr - m, 0)


# --------------------------------------------------------------------------
# Constructors
# --------------------------------------------------------------------------


CZ = np.diag([1, 1, 1, -1]).astype(np.complex128)


def cluster_state(spec: LatticeSpec) -> SGSState:
    """2D cluster state: |+> rows with horizontal CZ as a D=2 MPS, vertical CZ
    as the column unitaries."""
    if spec.d != 2:
        raise ValidationError("cluster state requires d=2")
    v = spec.cols
    s2 = 1 / np.sqrt(2)
    ts = []
    for c in range(v):
        dl = 1 if c == 0 else 2
        dr = 1 if c == v - 1 else 2
        t = np.zeros((dl, 2, dr), dtype=np.complex128)
        for a in range(dl):
            for i in range(2):
                sign = -1.0 if (a == 1 and i == 1) else 1.0
                t[a, i, i if dr == 2 else 0] = s2 * sign
        ts.append(t)
    row = MPSRow(tuple(ts))
    params = SGSParams(spec, M=1, D=2 if v > 1 else 1, N=1)
    us = [[CZ.copy() for _ in range(v)] for _ in range(params.n_gates_per_column)]
    return new_sgs(params, [row] * spec.rows, us)


def _merge_rows(rows) -> MPSRow:
    ts = []
    for c in range(len(rows[0])):
        t = rows[0].tensors[c]
        for row in rows[1:]:
            b = row.tensors[c]
            t = np.einsum("aib,xjy->axijby", t, b).reshape(t.shape[0] * b.shape[0], -1, t.shape[2] * b.shape[2])
        ts.append(t)
    return MPSRow(tuple(ts))


def _embed_gate(u: np.ndarray, first: int, span: int, total: int, q: int) -> np.ndarray:
    from .lattice import embed_operator

    return embed_operator(u, list(range(first, first + span)), total, q)


def block_rows(s: SGSState, n: int) -> SGSState:
    """Regroup ``n`` effective rows into one block row (exact rewrite).

    Column gates are multiplied into gates between neighbouring blocks; this
    needs ``M <= n`` unless all rows collapse into a single block.
    """
    p = s.params
    hr, v, q, m = p.eff_rows, p.spec.cols, p.eff_d, p.M
    if hr % n:
        raise ValidationError(f"{hr} rows are not divisible into blocks of {n}")
    if n == 1:
        return s
    nb = hr // n
    if nb > 1 and m > n:
        raise ValidationError(f"blocking with N={n} < M={m} cannot absorb the column gates")
    rows = [_merge_rows(s.rows[b * n : (b + 1) * n]) for b in range(nb)]
    g = p.n_gates_per_column
    new_params = SGSParams(p.spec, M=1, D=p.D**n, N=p.N * n)
    if nb == 1:
        ts = [list(row.tensors) for row in rows]
        for c in range(v):
            w = np.eye(q**hr, dtype=np.complex128)
            for k in range(g):
                w = w @ _embed_gate(s.unitaries[k][c], k, m + 1, hr, q)
            ts[0][c] = np.einsum("ij,ajb->aib", w, ts[0][c])
        return new_sgs(new_params, [MPSRow(tuple(ts[0]))], [], validate=False)
    us = []
    for big_r in range(nb - 1):
        ks = [k for k in range(g) if k // n == big_r or (big_r == nb - 2 and k // n > big_r)]
        col = []
        for c in range(v):
            w = np.eye(q ** (2 * n), dtype=np.complex128)
            for k in sorted(ks):
                w = w @ _embed_gate(s.unitaries[k][c], k - big_r * n, m + 1, 2 * n, q)
            col.append(w)
        us.append(col)
    return new_sgs(new_params, rows, us, validate=False)
