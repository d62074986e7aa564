"""Two-point correlations of translationally invariant SGS.

A translationally invariant description is one row tensor ``A`` (D, d, D)
and one column unitary ``U`` on ``M+1`` sites; finite states are built from
it with fixed boundary vectors on every row.

Vertical chain convention: gate ``k`` takes row ``k`` fresh (index gamma,
weighted by the single-site row density rho) and rows ``k+1..k+M`` from the
gate below (bond alpha), and returns rows ``k..k+M-1`` to the gate above
(bond beta) together with row ``k+M`` in its final state (physical i)::

    M[k]^{i i'}_{(a a'),(b b')} = sum_{g g'} U[(b i),(g a)] rho[g g'] conj(U[(b' i'),(g' a')])

The bottom boundary is the fresh state rho^{(x)M} on alpha; after the top
gate the bond beta carries the final state of rows ``0..M-1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import contraction as ctr
from . import mps as mpslib
from .lattice import LatticeSpec
from .mps import MPSRow
from .state import SGSParams, SGSState, new_sgs
from .tensor import DimensionError, random_unitary

NUMERICAL_FLOOR = 1e-13
DEGENERACY_TOL = 1e-8


# --------------------------------------------------------------------------
# transfer spectrum
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferSpectrum:
    eigenvalues: np.ndarray  # sorted by decreasing modulus
    ratio: float  # |lambda2 / lambda1|, 0 if there is no lambda2
    degenerate: bool

    def epsilon(self, delta: int) -> float:
        """(|lambda2|/|lambda1|)^(delta-1); identically 0 without a second eigenvalue."""
        if len(self.eigenvalues) < 2:
            return 0.0
        return float(self.ratio ** (delta - 1))

    @property
    def correlation_length(self) -> float:
        if self.ratio <= 0:
            return 0.0
        if self.ratio >= 1:
            return math.inf
        return -1.0 / math.log(self.ratio)


def transfer_spectrum(a, normalize: bool = True) -> TransferSpectrum:
    """Full spectrum of E_1 for a site tensor with modes (left, physical, right)."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 3 or a.shape[0] != a.shape[2]:
        raise DimensionError(f"expected a square-bond site tensor, got shape {a.shape}")
    e = mpslib.transfer_matrix(a, np.eye(a.shape[1])).matrix
    w = np.linalg.eigvals(e)
    w = w[np.argsort(-np.abs(w), kind="stable")]
    if normalize and abs(w[0]) > 0:
        w = w / abs(w[0])
    if len(w) < 2:
        return TransferSpectrum(w, 0.0, False)
    ratio = float(abs(w[1]) / abs(w[0]))
    return TransferSpectrum(w, ratio, ratio > 1 - DEGENERACY_TOL)


# --------------------------------------------------------------------------
# translationally invariant descriptions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TIDescription:
    a: np.ndarray  # (D, d, D)
    u: np.ndarray  # d^(M+1) square
    M: int = 1
    left: np.ndarray | None = None
    right: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.a.shape[1]

    @property
    def D(self) -> int:
        return self.a.shape[0]

    def boundary(self) -> tuple[np.ndarray, np.ndarray]:
        ones = np.ones(self.D, dtype=np.complex128)
        left = ones if self.left is None else np.asarray(self.left, dtype=np.complex128)
        right = ones if self.right is None else np.asarray(self.right, dtype=np.complex128)
        return left, right


def random_ti(seed: int, d: int = 2, bond: int = 2, m: int = 1) -> TIDescription:
    rng = np.random.Generator(np.random.PCG64(seed))
    a = (rng.standard_normal((bond, d, bond)) + 1j * rng.standard_normal((bond, d, bond))) / np.sqrt(2)
    u = random_unitary(d ** (m + 1), rng)
    return TIDescription(a, u, m)


def ti_row(desc: TIDescription, v: int) -> MPSRow:
    left, right = desc.boundary()
    if v == 1:
        ts = [np.einsum("a,aib,b->i", left, desc.a, right).reshape(1, -1, 1)]
    else:
        first = np.einsum("a,aib->ib", left, desc.a)[None]
        last = np.einsum("aib,b->ai", desc.a, right)[:, :, None]
        ts = [first] + [desc.a] * (v - 2) + [last]
    return mpslib.normalize(MPSRow(tuple(ts)))


def ti_state(desc: TIDescription, rows: int, cols: int) -> SGSState:
    """Finite SGS with identical rows and the same unitary everywhere."""
    params = SGSParams(LatticeSpec(rows, cols, desc.d), M=desc.M, D=desc.D)
    row = ti_row(desc, cols)
    us = [[desc.u] * cols for _ in range(params.n_gates_per_column)]
    return new_sgs(params, [row] * rows, us)


# --------------------------------------------------------------------------
# decay fits
# --------------------------------------------------------------------------


@dataclass
class DecayReport:
    direction: str
    deltas: list
    values: list
    xi: float | None = None
    r_squared: float | None = None
    fitted: bool = False
    note: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["values"] = [complex(x).real if abs(complex(x).imag) < 1e-15 else [complex(x).real, complex(x).imag] for x in self.values]
        return json.dumps(d)

    def to_csv(self) -> str:
        lines = ["delta,value"]
        lines += [f"{dl},{complex(v).real:.17g}" for dl, v in zip(self.deltas, self.values)]
        return "\n".join(lines) + "\n"


def fit_decay(deltas, values, direction: str = "horizontal", floor: float = NUMERICAL_FLOOR) -> DecayReport:
    """OLS fit of log|C| against distance; xi = -1/slope."""
    deltas = [int(x) for x in deltas]
    values = [complex(v) for v in values]
    pts = [(dl, abs(v)) for dl, v in zip(deltas, values) if abs(v) > floor]
    report = DecayReport(direction, deltas, values)
    if len(pts) < 3:
        report.note = f"only {len(pts)} points above {floor:g}; no fit"
        return report
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    report.r_squared = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    report.xi = -1.0 / slope if slope < 0 else math.inf
    report.fitted = True
    return report


def _connected(s: SGSState, site1, site2, o1, o2) -> complex:
    n2 = ctr.norm(s) ** 2
    both = ctr.expect_local(s, {site1: o1, site2: o2}) / n2
    e1 = ctr.expect_local(s, {site1: o1}) / n2
    e2 = ctr.expect_local(s, {site2: o2}) / n2
    return both - e1 * e2


def horizontal_correlator(s: SGSState, o1, o2, row: int, deltas, start: int | None = None) -> DecayReport:
    """C(delta) between (row, start) and (row, start+delta), computed exactly."""
    v = s.params.spec.cols
    deltas = list(deltas)
    if start is None:
        start = max(0, (v - 1 - max(deltas)) // 2)
    if not 0 <= row < s.params.spec.rows:
        raise DimensionError(f"row {row} outside lattice")
    if start + max(deltas) >= v:
        raise DimensionError(f"distance {max(deltas)} from column {start} does not fit width {v}")
    vals = [_connected(s, (row, start), (row, start + dl), o1, o2) for dl in deltas]
    return fit_decay(deltas, vals, "horizontal")


# --------------------------------------------------------------------------
# vertical chain
# --------------------------------------------------------------------------


@dataclass
class VerticalChain:
    m_bulk: np.ndarray  # (i, i', a, a', b, b')
    rho: np.ndarray  # single-site row density at the column (trace 1)
    u: np.ndarray
    M: int
    height: int
    purification: list  # MPS tensors (up bond, physical, down bond), top row first
    physical_dims: list

    @property
    def d(self) -> int:
        return self.rho.shape[0]

    def density(self) -> np.ndarray:
        return chain_density(self)


def vertical_chain(desc: TIDescription, height: int, column: int, width: int) -> VerticalChain:
    """Vertical MPDO of one column of the finite TI state of size height x width."""
    d, m = desc.d, desc.M
    row = ti_row(desc, width)
    rho = mpslib.reduced_density(row, (column,))
    rho = rho / np.trace(rho)
    dm = d**m
    ut = desc.u.reshape(dm, d, d, dm)  # [b, i, g, a]
    m_bulk = np.einsum("bigA,gh,BjhC->ijACbB", ut, rho, ut.conj())
    w, vecs = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    kraus = vecs * np.sqrt(np.clip(w, 0.0, None))  # [g, k]: sqrt(p_k) psi_k(g)
    tensors = _purified_mps(ut, kraus, d, m, height)
    return VerticalChain(m_bulk, rho, desc.u, m, height, tensors, [t.shape[1] for t in tensors])


def _purified_mps(ut, kraus, d, m, height):
    """MPS of the purified column, one site per physical row, top to bottom.

    Row j >= M carries (system row j, ancilla of row j-M), dimension d^2.
    The top M rows have their ancilla slot fixed to |0>, and the bottom row
    also carries the ancillas of the M rows that enter the first gate fresh.
    """
    if height <= m:
        return [kraus.reshape(1, d * d, 1)] * height
    dm = d**m
    pad = np.zeros(d, dtype=np.complex128)
    pad[0] = 1.0
    ts = []
    for j in range(m):
        # copy tensor: the bond to the next row lists rows 0..j
        t = np.eye(d ** (j + 1), dtype=np.complex128).reshape(d**j, d, d ** (j + 1))
        ts.append(np.einsum("lir,k->likr", t, pad).reshape(d**j, d * d, d ** (j + 1)))
    bulk = np.einsum("bigA,gk->bikA", ut, kraus).reshape(dm, d * d, dm)
    fresh = np.ones((1, 1), dtype=np.complex128)
    for _ in range(m):
        fresh = np.kron(fresh, kraus)  # (rows g..., ancillas k...)
    n_gate = height - m
    for k in range(n_gate):
        t = bulk
        if k == n_gate - 1:
            t = np.einsum("xpa,aq->xpq", t, fresh).reshape(dm, -1, 1)
        ts.append(t)
    return ts


def chain_density(chain: VerticalChain) -> np.ndarray:
    """Column density matrix rebuilt from the M matrices, rows top to bottom."""
    d, m, h = chain.d, chain.M, chain.height
    fresh = np.ones((1, 1), dtype=np.complex128)
    for _ in range(min(m, h)):
        fresh = np.kron(fresh, chain.rho)
    if h <= m:
        return fresh
    dm = d**m
    t = fresh.reshape(dm, dm, 1, 1)  # (b, b', rows below ket, rows below bra)
    for _ in range(h - m):
        t = np.einsum("ijaAbB,aAkl->bBikjl", chain.m_bulk, t)
        s = t.shape
        t = t.reshape(s[0], s[1], s[2] * s[3], s[4] * s[5])
    s = t.shape
    return t.transpose(0, 2, 1, 3).reshape(s[0] * s[2], s[1] * s[3])


def purified_expectation(chain: VerticalChain, ops: dict) -> complex:
    """<O> on the column via the purification; ``ops`` maps row -> d x d."""
    d = chain.d
    emb = {}
    for r, o in ops.items():
        dim = chain.physical_dims[r]
        emb[r] = np.kron(np.asarray(o, dtype=np.complex128), np.eye(dim // d))
    mps = MPSRow(tuple(chain.purification))
    return mpslib.expectation_chain(mps, emb) / mpslib.expectation_chain(mps, {})


def vertical_correlator(chain: VerticalChain, o1, o2, rows) -> complex:
    h1, h2 = rows
    if not 0 <= h1 < h2 < chain.height:
        raise DimensionError(f"need 0 <= h1 < h2 < {chain.height}, got {rows}")
    both = purified_expectation(chain, {h1: o1, h2: o2})
    return both - purified_expectation(chain, {h1: o1}) * purified_expectation(chain, {h2: o2})


def vertical_decay(chain: VerticalChain, o1, o2, h1: int, deltas) -> DecayReport:
    deltas = [dl for dl in deltas if h1 + dl < chain.height]
    vals = [vertical_correlator(chain, o1, o2, (h1, h1 + dl)) for dl in deltas]
    return fit_decay(deltas, vals, "vertical")


# --------------------------------------------------------------------------
# G-matrix analysis
# --------------------------------------------------------------------------


def _g_single(u: np.ndarray, sigma: np.ndarray, d: int, m: int) -> np.ndarray:
    """Physical-traced M for one column: (b b') x (a a')."""
    dm = d**m
    ut = u.reshape(dm, d, d, dm)
    g = np.einsum("bigA,gh,BihC->bBAC", ut, sigma, ut.conj())
    return g.reshape(dm * dm, dm * dm)


def _g_pair(u: np.ndarray, rho2: np.ndarray, d: int, m: int) -> np.ndarray:
    """Physical-traced M for two columns fed by the two-site row density."""
    dm = d**m
    ut = u.reshape(dm, d, d, dm)
    r = rho2.reshape(d, d, d, d)  # (ket v1, ket v2, bra v1, bra v2)
    g = np.einsum("biga,cjex,gehf,BihA,CjfX->bBcCaAxX", ut, ut, r, ut.conj(), ut.conj())
    return g.reshape(dm**4, dm**4)


@dataclass
class GMatrixAnalysis:
    g: np.ndarray
    g_product: np.ndarray
    eigenvalues: np.ndarray
    mu: complex
    left_vector: np.ndarray
    right_vector: np.ndarray
    gap: float
    degenerate: bool
    deviation: float  # ||G - G1 (x) G2||_F
    epsilon: float  # transfer-spectrum prediction for this distance
    bottom: np.ndarray  # G_[H]: bottom boundary vector in (bond, bond') space

    def to_json(self) -> str:
        return json.dumps(
            {
                "mu": [self.mu.real, self.mu.imag],
                "gap": self.gap,
                "degenerate": self.degenerate,
                "deviation": self.deviation,
                "epsilon": self.epsilon,
                "spectrum_modulus": [float(abs(x)) for x in self.eigenvalues],
            }
        )


def g_matrix_analysis(desc: TIDescription, columns, width: int) -> GMatrixAnalysis:
    """G for columns (v1, v2) of a row of the given width, against the product G1 (x) G2."""
    d, m = desc.d, desc.M
    v1, v2 = columns
    row = ti_row(desc, width)
    rho2 = mpslib.reduced_density(row, (v1, v2))
    rho2 = rho2 / np.trace(rho2)
    s1 = mpslib.reduced_density(row, (v1,))
    s2 = mpslib.reduced_density(row, (v2,))
    s1, s2 = s1 / np.trace(s1), s2 / np.trace(s2)
    dm = d**m
    g = _g_pair(desc.u, rho2, d, m)
    g1 = _g_single(desc.u, s1, d, m)
    g2 = _g_single(desc.u, s2, d, m)
    # G1 (x) G2 in the same (b b' c c'),(a a' e e') ordering as G
    gp = np.einsum("xy,zw->xzyw", g1, g2).reshape(dm**4, dm**4)
    w, vr = np.linalg.eig(g)
    order = np.argsort(-np.abs(w), kind="stable")
    w, vr = w[order], vr[:, order]
    wl, vl = np.linalg.eig(g.T)
    il = int(np.argmax(np.abs(wl)))
    gap = float(abs(w[0]) - abs(w[1])) if len(w) > 1 else float(abs(w[0]))
    spec = transfer_spectrum(desc.a)
    # bottom boundary: the fresh row-pair density of the last M rows, as a bond vector
    bottom = np.ones((1, 1), dtype=np.complex128)
    for _ in range(m):
        bottom = np.kron(bottom, rho2)
    bottom = bottom.reshape((d, d) * m + (d, d) * m)
    return GMatrixAnalysis(
        g=g,
        g_product=gp,
        eigenvalues=w,
        mu=complex(w[0]),
        left_vector=vl[:, il],
        right_vector=vr[:, 0],
        gap=gap,
        degenerate=bool(gap < DEGENERACY_TOL * max(abs(w[0]), 1e-300)),
        deviation=float(np.linalg.norm(g - gp)),
        epsilon=spec.epsilon(abs(v2 - v1)),
        bottom=bottom.reshape(-1),
    )


# --------------------------------------------------------------------------
# product deviation of row and column densities
# --------------------------------------------------------------------------


def trace_norm(x: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (x + x.conj().T)))))


def row_product_deviation(desc: TIDescription, width: int, v1: int, deltas) -> list[float]:
    """||rho(v1, v1+delta) - sigma (x) sigma||_1 for one TI row."""
    row = ti_row(desc, width)
    out = []
    for dl in deltas:
        rho2 = mpslib.reduced_density(row, (v1, v1 + dl))
        s1 = mpslib.reduced_density(row, (v1,))
        s2 = mpslib.reduced_density(row, (v1 + dl,))
        out.append(trace_norm(rho2 / np.trace(rho2) - np.kron(s1 / np.trace(s1), s2 / np.trace(s2))))
    return out


def two_column_density(desc: TIDescription, height: int, width: int, columns) -> np.ndarray:
    """Dense density of columns (v1, v2) over all rows; site order (row, column)."""
    d, m = desc.d, desc.M
    v1, v2 = columns
    row = ti_row(desc, width)
    rho2 = mpslib.reduced_density(row, (v1, v2))
    rho2 = rho2 / np.trace(rho2)
    n = 2 * height
    t = np.ones((), dtype=np.complex128)
    for _ in range(height):
        t = np.multiply.outer(t, rho2.reshape(d, d, d, d))
    # axes per row: (k1, k2, b1, b2); gather kets then bras
    kets = [4 * r + j for r in range(height) for j in range(2)]
    bras = [4 * r + 2 + j for r in range(height) for j in range(2)]
    t = t.transpose(kets + bras)
    u = desc.u.reshape((d,) * (2 * (m + 1)))
    for k in range(height - m - 1, -1, -1):
        for j in range(2):
            pos = [2 * (k + x) + j for x in range(m + 1)]
            t = ctr._apply_left(t, u, pos)
            t = ctr._apply_left(t, u.conj(), [n + p for p in pos])
    return t.reshape(d**n, d**n)


def column_product_deviation(desc: TIDescription, height: int, width: int, columns) -> float:
    """||tau(v1 v2) - tau(v1) (x) tau(v2)||_1 over all rows of both columns."""
    d = desc.d
    n = 2 * height
    tau = two_column_density(desc, height, width, columns)
    t = tau.reshape((d,) * (2 * n))
    c1 = [2 * r for r in range(height)]
    c2 = [2 * r + 1 for r in range(height)]
    # marginals by tracing the other column
    t1 = np.einsum(t, _trace_labels(n, c2), _keep_labels(n, c1))
    t2 = np.einsum(t, _trace_labels(n, c1), _keep_labels(n, c2))
    dim = d**height
    tau1 = t1.reshape(dim, dim)
    tau2 = t2.reshape(dim, dim)
    prod = np.einsum("ab,cd->acbd", tau1, tau2).reshape((d,) * height + (d,) * height + (d,) * height + (d,) * height)
    # reorder product from (col1 rows, col2 rows) to interleaved (row, column)
    h = height
    ket = [x for r in range(h) for x in (r, h + r)]
    bra = [2 * h + x for r in range(h) for x in (r, h + r)]
    prod = prod.transpose(ket + bra).reshape(d**n, d**n)
    return trace_norm(tau - prod)


def _trace_labels(n: int, traced) -> list:
    labels = list(range(2 * n))
    for p in traced:
        labels[n + p] = labels[p]
    return labels


def _keep_labels(n: int, kept) -> list:
    return list(kept) + [n + p for p in kept]
