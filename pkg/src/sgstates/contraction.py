"""Exact expectation values on SGS via the ladder network.

Column unitaries on columns without operators cancel, as do unitaries on an
involved column that sit entirely above its topmost operator. What is left
is a ladder: starting from the bottom row, the row reduced density matrices
on the involved columns are added one row at a time, the column gates are
applied in preparation order, and every site whose gates are all applied is
measured and traced out. The open density operator therefore never holds
more than ``M+1`` rows per involved column.

The same sequence of linear maps, run backwards on the observable, gives the
environments used by the optimizer: the effective operator on one row's
reduced density matrix, and the quadratic form in one column unitary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import mps as mpslib
from .lattice import Hamiltonian, block_hamiltonian
from .state import SGSState, effective_operator
from .tensor import ValidationError, as_tensor

DEFAULT_MAX_SITES = 2
LARGE_MAX_COLUMNS = 4


class UnsupportedRequest(ValueError):
    """Expectation request beyond the configured operator limit."""


@dataclass(frozen=True)
class LadderPlan:
    columns: tuple
    start_row: dict  # column -> first ladder row
    steps: tuple
    peak_size: int  # largest open density tensor, in complex entries

    @property
    def rows(self) -> tuple:
        return tuple(st[1] for st in self.steps if st[0] == "add")

    def bound(self, q: int, m: int) -> int:
        """Reference bulk cost d^2 D^6 with D = d^M."""
        return q**2 * (q**m) ** 6


@lru_cache(maxsize=4096)
def build_plan(eff_rows: int, m: int, q: int, groups: tuple) -> LadderPlan:
    """Static step list for operator groups ``((site, ...), ...)``."""
    n_gates = max(0, eff_rows - m)
    cols = sorted({c for g in groups for (_, c) in g})
    top = {c: min(r for g in groups for (r, cc) in g if cc == c) for c in cols}
    start = {c: max(0, top[c] - m) if n_gates else top[c] for c in cols}
    if n_gates == 0:
        # no vertical gates: only the operator rows themselves matter
        start = dict(top)
    steps = []
    open_sites: list = []
    final: set = set()
    pending = list(range(len(groups)))
    group_sites = {s for g in groups for s in g}
    peak = 1

    def flush():
        nonlocal pending
        done = []
        for gi in pending:
            g = groups[gi]
            if all(s in final for s in g):
                steps.append(("close", tuple(open_sites.index(s) for s in g), gi))
                for s in g:
                    open_sites.remove(s)
                done.append(gi)
        pending = [gi for gi in pending if gi not in done]
        for s in [x for x in open_sites if x in final and x not in group_sites]:
            steps.append(("close", (open_sites.index(s),), None))
            open_sites.remove(s)

    if n_gates == 0:
        rows = sorted({r for g in groups for (r, _) in g}, reverse=True)
        for r in rows:
            active = tuple(c for c in cols if any((r, c) in g for g in groups))
            steps.append(("add", r, active))
            open_sites.extend((r, c) for c in active)
            peak = max(peak, q ** (2 * len(open_sites)))
            final.update((r, c) for c in active)
            flush()
    else:
        for r in range(eff_rows - 1, min(start.values()) - 1, -1):
            active = tuple(c for c in cols if r >= start[c])
            steps.append(("add", r, active))
            open_sites.extend((r, c) for c in active)
            peak = max(peak, q ** (2 * len(open_sites)))
            for c in active:
                if r <= n_gates - 1:
                    pos = tuple(open_sites.index((r + j, c)) for j in range(m + 1))
                    steps.append(("gate", r, c, pos))
                    final.add((r + m, c))
                    if r == start[c]:
                        final.update((x, c) for x in range(r, r + m))
            flush()
    flush()
    if open_sites or pending:
        raise RuntimeError("ladder plan left open sites")  # pragma: no cover
    return LadderPlan(tuple(cols), start, tuple(steps), peak)


# --------------------------------------------------------------------------
# tensor helpers; density tensors carry axes [ket sites..., bra sites...]
# --------------------------------------------------------------------------


def _apply_left(t: np.ndarray, a: np.ndarray, axes) -> np.ndarray:
    k = len(axes)
    res = np.tensordot(a, t, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(res, list(range(k)), list(axes))


def _pair(y: np.ndarray, rho: np.ndarray) -> complex:
    n = y.ndim // 2
    if n == 0:
        return complex(y * rho)
    return complex(np.tensordot(y, rho, axes=(list(range(2 * n)), list(range(n, 2 * n)) + list(range(n)))))


class _Context:
    """Per-evaluation caches of row reduced density matrices and row norms."""

    def __init__(self, s: SGSState):
        self.s = s
        self.q = s.params.eff_d
        self._rdm: dict = {}
        self._norm2: list | None = None

    def rdm(self, r: int, cols: tuple) -> np.ndarray:
        key = (r, cols)
        if key not in self._rdm:
            k = len(cols)
            self._rdm[key] = mpslib.reduced_density(self.s.rows[r], cols).reshape((self.q,) * (2 * k))
        return self._rdm[key]

    def row_norm2(self, r: int) -> float:
        if self._norm2 is None:
            self._norm2 = [mpslib.expectation_chain(row, {}).real for row in self.s.rows]
        return self._norm2[r]

    def outside_factor(self, plan: LadderPlan) -> float:
        top = min(st[1] for st in plan.steps if st[0] == "add")
        return float(np.prod([self.row_norm2(r) for r in range(top)])) if top else 1.0


def _ops_tensors(ops, q):
    out = []
    for sites, op in ops:
        k = len(sites)
        out.append(as_tensor(op).reshape((q,) * (2 * k)))
    return out


def _forward(ctx: _Context, plan: LadderPlan, ops, keep: bool):
    q, m = ctx.q, ctx.s.params.M
    opt = _ops_tensors(ops, q)
    rho = np.array(1.0 + 0j)
    saved = []
    for st in plan.steps:
        if keep:
            saved.append(rho)
        n = rho.ndim // 2
        if st[0] == "add":
            new = ctx.rdm(st[1], st[2])
            k = new.ndim // 2
            rho = np.multiply.outer(rho, new)
            perm = list(range(n)) + list(range(2 * n, 2 * n + k)) + list(range(n, 2 * n)) + list(range(2 * n + k, 2 * n + 2 * k))
            rho = rho.transpose(perm)
        elif st[0] == "gate":
            u = ctx.s.unitaries[st[1]][st[2]].reshape((q,) * (2 * (m + 1)))
            pos = st[3]
            rho = _apply_left(rho, u, pos)
            rho = _apply_left(rho, u.conj(), [n + p for p in pos])
        else:
            pos, gi = st[1], st[2]
            if gi is None:
                rho = np.trace(rho, axis1=pos[0], axis2=n + pos[0])
            else:
                o = opt[gi]
                k = len(pos)
                rho = np.tensordot(rho, o, axes=(list(pos) + [n + p for p in pos], list(range(k, 2 * k)) + list(range(k))))
    return complex(rho), saved


def _backward(ctx: _Context, plan: LadderPlan, ops, saved, want_rows=None, want_gate=None):
    """Adjoint pass. Returns ({row: (cols, X)}, Q for ``want_gate`` or None)."""
    q, m = ctx.q, ctx.s.params.M
    opt = _ops_tensors(ops, q)
    y = np.array(1.0 + 0j)
    row_ops = {}
    quad = None
    for st, rho in zip(reversed(plan.steps), reversed(saved)):
        n = rho.ndim // 2
        if st[0] == "add":
            new = ctx.rdm(st[1], st[2])
            k = new.ndim // 2
            if want_rows is None or st[1] in want_rows:
                # X[c, e] = sum Y[(A,c),(B,e)] rho_old[B, A]
                if n:
                    x = np.tensordot(y, rho, axes=(list(range(n)) + list(range(n + k, 2 * n + k)), list(range(n, 2 * n)) + list(range(n))))
                else:
                    x = y * rho
                row_ops[st[1]] = (st[2], x.reshape(q**k, q**k))
            ket_new = list(range(n, n + k))
            bra_new = list(range(2 * n + k, 2 * n + 2 * k))
            y = np.tensordot(y, new, axes=(ket_new + bra_new, list(range(k, 2 * k)) + list(range(k))))
        elif st[0] == "gate":
            u = ctx.s.unitaries[st[1]][st[2]].reshape((q,) * (2 * (m + 1)))
            pos = list(st[3])
            if want_gate is not None and (st[1], st[2]) == want_gate:
                quad = _gate_quadratic(y, rho, pos, q, m)
            udag = np.conj(np.moveaxis(u, list(range(m + 1)), list(range(m + 1, 2 * m + 2))))
            ut = np.moveaxis(u, list(range(m + 1)), list(range(m + 1, 2 * m + 2)))
            y = _apply_left(y, udag, pos)
            y = _apply_left(y, ut, [n + p for p in pos])
        else:
            pos, gi = st[1], st[2]
            k = len(pos)
            o = np.eye(q, dtype=np.complex128) if gi is None else opt[gi]
            nn = n - k  # open sites after the close
            y = np.multiply.outer(y, o)
            # axes now: ket'(nn) bra'(nn) out(k) in(k); rebuild the pre-close order
            rest = [i for i in range(n) if i not in pos]
            src_ket = {p: 2 * nn + j for j, p in enumerate(pos)}
            src_bra = {p: 2 * nn + k + j for j, p in enumerate(pos)}
            perm = []
            for i in range(n):
                perm.append(src_ket[i] if i in src_ket else rest.index(i))
            for i in range(n):
                perm.append(src_bra[i] if i in src_bra else nn + rest.index(i))
            y = y.transpose(perm)
    return row_ops, quad


def _gate_quadratic(y, rho, pos, q, m):
    """Q with E(U) = sum U[a,b] conj(U[c,e]) Q[a,b,c,e] for this term."""
    n = rho.ndim // 2
    s = m + 1
    lab = iter(range(52))
    xs = [next(lab) for _ in range(s)]
    ys = [next(lab) for _ in range(s)]
    s3 = [next(lab) for _ in range(s)]
    s4 = [next(lab) for _ in range(s)]
    rest = [i for i in range(n) if i not in pos]
    xr = {i: next(lab) for i in rest}
    yr = {i: next(lab) for i in rest}
    y_ket = [xs[pos.index(i)] if i in pos else xr[i] for i in range(n)]
    y_bra = [ys[pos.index(i)] if i in pos else yr[i] for i in range(n)]
    r_ket = [s3[pos.index(i)] if i in pos else yr[i] for i in range(n)]
    r_bra = [s4[pos.index(i)] if i in pos else xr[i] for i in range(n)]
    qt = np.einsum(y, y_ket + y_bra, rho, r_ket + r_bra, ys + s3 + xs + s4, optimize=True)
    g = q**s
    return qt.reshape(g, g, g, g)


# --------------------------------------------------------------------------
# public evaluation API
# --------------------------------------------------------------------------


def _groups_key(ops) -> tuple:
    return tuple(tuple(tuple(x) for x in sites) for sites, _ in ops)


def _ladder_value(ctx: _Context, ops) -> complex:
    p = ctx.s.params
    plan = build_plan(p.eff_rows, p.M, p.eff_d, _groups_key(ops))
    val, _ = _forward(ctx, plan, ops, keep=False)
    return val * ctx.outside_factor(plan)


def norm(s: SGSState) -> float:
    """Norm of the state: the product of the row MPS norms."""
    return float(np.prod([mpslib.norm(row) for row in s.rows]))


def _check_limits(ops, max_sites: int, ack_large: bool) -> None:
    n_sites = sum(len(sites) for sites, _ in ops)
    cols = {c for sites, _ in ops for (_, c) in sites}
    if ack_large:
        if len(cols) > LARGE_MAX_COLUMNS:
            raise UnsupportedRequest(f"{len(cols)} columns involved; limit is {LARGE_MAX_COLUMNS}")
    elif n_sites > max_sites:
        raise UnsupportedRequest(
            f"{n_sites} operator sites requested; limit is {max_sites} (pass ack_large=True to lift it)"
        )


def expect_local(s: SGSState, ops: dict, max_sites: int = DEFAULT_MAX_SITES, ack_large: bool = False) -> complex:
    """<Psi| prod O_site |Psi> for single-site observables on physical sites.

    Not divided by the norm. The number of operator sites is capped at
    ``max_sites``; ``ack_large=True`` instead allows any number of sites
    spread over at most four columns.
    """
    raw = [((tuple(site),), op) for site, op in ops.items()]
    _check_limits(raw, max_sites, ack_large)
    if not ops:
        return complex(norm(s) ** 2)
    eff = effective_operator(s.params, {tuple(k): v for k, v in ops.items()})
    groups = [((site,), op) for site, op in sorted(eff.items())]
    return _ladder_value(_Context(s), groups)


def effective_terms(s: SGSState, h: Hamiltonian) -> list:
    """Hamiltonian terms as ``(sites, op)`` on the state's effective lattice."""
    p = s.params
    if h.spec != p.spec:
        raise ValidationError(f"Hamiltonian lattice {h.spec} does not match state lattice {p.spec}")
    hb = block_hamiltonian(h, p.N) if p.N > 1 else h
    return [(t.sites, t.operator) for t in hb.terms]


def term_values(s: SGSState, terms, ctx: _Context | None = None) -> np.ndarray:
    ctx = ctx or _Context(s)
    return np.array([_ladder_value(ctx, [t]) for t in terms])


def energy(s: SGSState, h: Hamiltonian) -> float:
    """<Psi|H|Psi> / <Psi|Psi>, summed over terms in list order."""
    terms = effective_terms(s, h)
    ctx = _Context(s)
    vals = term_values(s, terms, ctx)
    n2 = float(np.prod([ctx.row_norm2(r) for r in range(len(s.rows))]))
    total = complex(np.sum(vals)) / n2
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise RuntimeError(f"energy has imaginary part {total.imag:.3e}")
    return total.real


# --------------------------------------------------------------------------
# environments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Environment:
    """One tensor removed from the energy network.

    For ``kind == "quadratic"`` (hole at a row tensor) ``tensor`` is the
    Hermitian matrix H_env with E = x^dagger H_env x for the unit-norm site
    tensor x in the row's mixed-canonical gauge at the hole. For
    ``kind == "gradient"`` (hole at a column unitary) ``tensor`` is Gamma
    with dE = 2 Re tr(Gamma dU); ``quadratic`` and ``constant`` give the
    exact energy as a function of the unitary.
    """

    hole: tuple
    kind: str
    tensor: np.ndarray
    quadratic: np.ndarray | None = None
    constant: float = 0.0


def row_hamiltonian(s: SGSState, terms, r: int, ctx: _Context | None = None) -> tuple[list, float]:
    """Energy as a function of row ``r``: local terms on the row plus a constant.

    Assumes every other row is normalized; returns ``(terms, const)`` such
    that E = <phi|sum terms|phi> + const for the unit-norm row state phi.
    """
    ctx = ctx or _Context(s)
    p = s.params
    local = []
    const = 0.0
    others = float(np.prod([ctx.row_norm2(x) for x in range(p.eff_rows) if x != r]))
    for t in terms:
        plan = build_plan(p.eff_rows, p.M, p.eff_d, _groups_key([t]))
        top = min(st[1] for st in plan.steps if st[0] == "add")
        if r < top:
            val, _ = _forward(ctx, plan, [t], keep=False)
            const += (val * ctx.outside_factor(plan) / ctx.row_norm2(r)).real / others
            continue
        _, saved = _forward(ctx, plan, [t], keep=True)
        row_ops, _ = _backward(ctx, plan, [t], saved, want_rows={r})
        cols, x = row_ops[r]
        local.append((cols, x * ctx.outside_factor(plan) / others))
    return local, const


def gate_quadratic(s: SGSState, terms, k: int, c: int, ctx: _Context | None = None):
    """Exact energy as a function of unitary (k, c): (Q, const).

    E(U) = const + sum U[a,b] conj(U[e,f]) Q[a,b,e,f], valid while all other
    tensors are held fixed and rows are normalized.
    """
    ctx = ctx or _Context(s)
    p = s.params
    g = p.gate_dim
    quad = np.zeros((g, g, g, g), dtype=np.complex128)
    const = 0.0
    n2 = float(np.prod([ctx.row_norm2(x) for x in range(p.eff_rows)]))
    for t in terms:
        cols = {cc for (_, cc) in t[0]}
        plan = build_plan(p.eff_rows, p.M, p.eff_d, _groups_key([t]))
        if c not in cols or plan.start_row[c] > k:
            val, _ = _forward(ctx, plan, [t], keep=False)
            const += (val * ctx.outside_factor(plan)).real / n2
            continue
        _, saved = _forward(ctx, plan, [t], keep=True)
        _, qt = _backward(ctx, plan, [t], saved, want_rows=set(), want_gate=(k, c))
        quad += qt * ctx.outside_factor(plan) / n2
    return quad, const


def quadratic_energy(quad: np.ndarray, const: float, u: np.ndarray) -> float:
    return const + np.einsum("abef,ab,ef->", quad, u, u.conj()).real


def quadratic_gradient(quad: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Gamma with dE = 2 Re tr(Gamma dU)."""
    return np.einsum("abef,ef->ab", quad, u.conj()).T


def _row_env_matrix(row: mpslib.MPSRow, mpo, c: int) -> np.ndarray:
    left = np.ones((1, 1, 1), dtype=np.complex128)
    for a, w in zip(row.tensors[:c], mpo[:c]):
        left = np.einsum("xwy,xib,wvij,yjc->bvc", left, a.conj(), w, a, optimize=True)
    right = np.ones((1, 1, 1), dtype=np.complex128)
    for a, w in zip(row.tensors[:c:-1], mpo[:c:-1]):
        right = np.einsum("bvc,xib,wvij,yjc->xwy", right, a.conj(), w, a, optimize=True)
    h = np.einsum("xwy,wvij,bvc->xibyjc", left, mpo[c], right, optimize=True)
    dl, q, dr = row.tensors[c].shape
    return h.reshape(dl * q * dr, dl * q * dr)


def environment(s: SGSState, h: Hamiltonian, hole: tuple) -> Environment:
    """``hole`` is ``("A", r, c)`` or ``("U", k, c)`` in effective coordinates.

    For an A hole the row is first brought to mixed-canonical gauge at the
    hole and normalized; the returned matrix refers to that gauge.
    """
    terms = effective_terms(s, h)
    kind, a, c = hole
    if kind == "A":
        row = mpslib.normalize(mpslib.canonicalize(s.rows[a], c))
        s = s.with_row(a, row)
        local, const = row_hamiltonian(s, terms, a)
        mpo = mpslib.local_terms_mpo(len(row), row.d, local)
        henv = _row_env_matrix(row, mpo, c)
        henv = 0.5 * (henv + henv.conj().T) + const * np.eye(henv.shape[0])
        return Environment(hole, "quadratic", henv, constant=const)
    if kind == "U":
        quad, const = gate_quadratic(s, terms, a, c)
        gamma = quadratic_gradient(quad, s.unitaries[a][c])
        return Environment(hole, "gradient", gamma, quadratic=quad, constant=const)
    raise ValueError(f"unknown hole kind {kind!r}")
