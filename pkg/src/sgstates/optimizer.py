"""Variational ground-state search over SGS.

Each outer iteration runs an A-phase (every row, single-site sweeps left to
right and back) followed by a U-phase (every column unitary, bottom-up).
Both phases only accept updates that strictly lower the energy, so the
recorded trace is non-increasing by construction.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import contraction as ctr
from . import mps as mpslib
from .lattice import Hamiltonian
from .state import SGSParams, SGSState, random_sgs
from .tensor import ValidationError, herm_eig_extreme, unitary_exp

log = logging.getLogger(__name__)


@dataclass
class OptimizerOptions:
    max_outer_iterations: int = 50
    tolerance: float = 1e-8  # relative energy change per outer iteration
    delta0: float = 0.1
    delta_min: float = 1e-7
    delta_max: float = math.pi
    row_passes: int = 2  # left-right-left passes per row in one A-phase
    unitary_steps: int = 8  # generator steps per unitary in one U-phase
    seed: int = 0
    restarts: int = 1
    init_unitary_scale: float = 0.1

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValidationError("tolerance must be positive")
        if not self.delta0 > self.delta_min > 0:
            raise ValidationError("need delta0 > delta_min > 0")
        if self.delta_max < self.delta0:
            raise ValidationError("delta_max must be at least delta0")
        for name in ("max_outer_iterations", "row_passes", "unitary_steps", "restarts"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerOptions":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown optimizer options {sorted(unknown)}")
        return cls(**d)


@dataclass
class EnergyTrace:
    """Ordered step records: phase, location, energy after the step, metadata."""

    records: list = field(default_factory=list)
    converged: bool = False
    outer_iterations: int = 0

    def add(self, phase: str, location, energy: float, accepted: bool = True, **meta) -> None:
        loc = None if location is None else [int(x) for x in location]
        self.records.append(
            {"phase": phase, "location": loc, "energy": float(energy), "accepted": bool(accepted), **meta}
        )

    def accepted_energies(self) -> list[float]:
        return [r["energy"] for r in self.records if r["accepted"]]

    @property
    def final_energy(self) -> float:
        return self.accepted_energies()[-1]

    def max_increase(self) -> float:
        e = np.array(self.accepted_energies())
        return float(np.max(np.diff(e))) if e.size > 1 else 0.0

    def is_monotone(self, tol: float = 1e-12) -> bool:
        return self.max_increase() <= tol

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "EnergyTrace":
        return cls([json.loads(line) for line in text.splitlines() if line.strip()])


def _normalized_rows(s: SGSState) -> SGSState:
    for r, row in enumerate(s.rows):
        s = s.with_row(r, mpslib.normalize(mpslib.canonicalize(row, 0)))
    return s


# --------------------------------------------------------------------------
# A-phase
# --------------------------------------------------------------------------


def _heff(left, w, right) -> np.ndarray:
    h = np.einsum("xwy,wvij,bvc->xibyjc", left, w, right, optimize=True)
    n = left.shape[0] * w.shape[2] * right.shape[0]
    h = h.reshape(n, n)
    defect = np.max(np.abs(h - h.conj().T))
    if defect > 1e-8 * max(1.0, np.max(np.abs(h))):
        raise RuntimeError(f"row environment not Hermitian (defect {defect:.2e})")
    return 0.5 * (h + h.conj().T)


def _grow_left(left, a, w):
    return np.einsum("xwy,xib,wvij,yjc->bvc", left, a.conj(), w, a, optimize=True)


def _grow_right(right, a, w):
    return np.einsum("bvc,xib,wvij,yjc->xwy", right, a.conj(), w, a, optimize=True)


def _sweep_row(row: mpslib.MPSRow, mpo, const: float, e_ref: float, passes: int, trace, r: int):
    """Single-site sweeps of one row against a fixed MPO. Returns (row, energy)."""
    v = len(row)
    ts = list(mpslib.normalize(mpslib.canonicalize(row, 0)).tensors)
    rights = [None] * (v + 1)
    rights[v] = np.ones((1, 1, 1), dtype=np.complex128)
    for c in range(v - 1, 0, -1):
        rights[c] = _grow_right(rights[c + 1], ts[c], mpo[c])
    lefts = [None] * (v + 1)
    lefts[0] = np.ones((1, 1, 1), dtype=np.complex128)
    order = list(range(v)) + list(range(v - 2, -1, -1))
    seq = order + order[1:] * (passes - 1)
    e = e_ref
    for i, c in enumerate(seq):
        shape = ts[c].shape
        try:
            lam, x = herm_eig_extreme(_heff(lefts[c], mpo[c], rights[c + 1]))
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            log.warning("row %d site %d eigensolve failed: %s", r, c, exc)
            trace.add("A-sweep", (r, c), e, accepted=False, reason="eigensolve failed")
            lam = None
        if lam is not None:
            e_new = lam + const
            if e_new < e:
                ts[c] = x.reshape(shape)
                e = e_new
                trace.add("A-sweep", (r, c), e)
            else:
                trace.add("A-sweep", (r, c), e, accepted=False)
        if i + 1 == len(seq):
            break
        nxt = seq[i + 1]
        dl, q, dr = ts[c].shape
        if nxt > c:
            qm, rm = np.linalg.qr(ts[c].reshape(dl * q, dr))
            ts[c] = qm.reshape(dl, q, -1)
            ts[nxt] = np.tensordot(rm, ts[nxt], axes=(1, 0))
            lefts[nxt] = _grow_left(lefts[c], ts[c], mpo[c])
        else:
            qm, rm = np.linalg.qr(ts[c].reshape(dl, q * dr).T)
            ts[c] = qm.T.reshape(-1, q, dr)
            ts[nxt] = np.tensordot(ts[nxt], rm.T, axes=(2, 0))
            rights[c] = _grow_right(rights[c + 1], ts[c], mpo[c])
    return mpslib.MPSRow(tuple(ts), seq[-1]), e


def sweep_rows(s: SGSState, h: Hamiltonian, opts: OptimizerOptions, trace: EnergyTrace | None = None):
    """A-phase over every row, top to bottom. Returns (state, energy)."""
    trace = trace if trace is not None else EnergyTrace()
    s = _normalized_rows(s)
    terms = ctr.effective_terms(s, h)
    e = ctr.energy(s, h)
    for r in range(s.params.eff_rows):
        local, const = ctr.row_hamiltonian(s, terms, r)
        mpo = mpslib.local_terms_mpo(s.params.spec.cols, s.params.eff_d, local)
        row, e = _sweep_row(s.rows[r], mpo, const, e, opts.row_passes, trace, r)
        s = s.with_row(r, row)
    return s, e


# --------------------------------------------------------------------------
# U-phase
# --------------------------------------------------------------------------


def _polar(u: np.ndarray) -> np.ndarray:
    a, _, b = np.linalg.svd(u)
    return a @ b


def descent_generator(gamma: np.ndarray, u: np.ndarray) -> tuple[np.ndarray | None, float]:
    """Unit-Frobenius Hermitian K minimizing the linear change 2 Re tr(Gamma i K U).

    Returns (K, slope) with slope = dE/d delta at delta = 0, or (None, 0) at a
    stationary point.
    """
    gt = u @ gamma
    x = 1j * gt
    herm = 0.5 * (x + x.conj().T)
    nrm = np.linalg.norm(herm)
    if nrm < 1e-13:
        return None, 0.0
    k = -herm / nrm
    slope = 2.0 * np.real(1j * np.trace(k @ gt))
    return k, float(slope)


def optimize_unitary(
    s: SGSState, h: Hamiltonian, location, opts: OptimizerOptions, trace: EnergyTrace | None = None, terms=None
):
    """Line-searched generator steps on one column unitary. Returns (state, energy)."""
    trace = trace if trace is not None else EnergyTrace()
    terms = terms if terms is not None else ctr.effective_terms(s, h)
    k, c = location
    quad, const = ctr.gate_quadratic(s, terms, k, c)
    u = s.unitaries[k][c]
    e = ctr.quadratic_energy(quad, const, u)

    def f(delta, gen):
        cand = _polar(unitary_exp(gen, delta) @ u)
        return ctr.quadratic_energy(quad, const, cand), cand

    for _ in range(opts.unitary_steps):
        gen, slope = descent_generator(ctr.quadratic_gradient(quad, u), u)
        if gen is None:
            trace.add("U-phase", location, e, accepted=False, reason="stationary")
            break
        delta = opts.delta0
        fe, cand = f(delta, gen)
        if fe < e:
            while 2 * delta <= opts.delta_max:
                f2, c2 = f(2 * delta, gen)
                if f2 >= fe:
                    break
                delta, fe, cand = 2 * delta, f2, c2
        else:
            while delta / 2 >= opts.delta_min and not fe < e:
                delta /= 2
                fe, cand = f(delta, gen)
        if not fe < e:
            trace.add("U-phase", location, e, accepted=False, reason="no decreasing step")
            break
        gain = e - fe
        u, e = cand, fe
        trace.add("U-phase", location, e, delta=delta, predicted=delta * slope)
        if gain <= opts.tolerance * max(1.0, abs(e)):
            break
    return s.with_unitary(k, c, u), e


def unitary_phase(s: SGSState, h: Hamiltonian, opts: OptimizerOptions, trace: EnergyTrace | None = None):
    trace = trace if trace is not None else EnergyTrace()
    terms = ctr.effective_terms(s, h)
    e = ctr.energy(s, h)
    for c in range(s.params.spec.cols):
        for k in range(s.params.n_gates_per_column - 1, -1, -1):
            s, e = optimize_unitary(s, h, (k, c), opts, trace, terms)
    return s, e


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def optimize(s0: SGSState, h: Hamiltonian, opts: OptimizerOptions | None = None):
    """Alternate A- and U-phases until the energy stalls. Returns (state, trace)."""
    opts = opts or OptimizerOptions()
    trace = EnergyTrace()
    s = _normalized_rows(s0)
    e = ctr.energy(s, h)
    trace.add("init", None, e)
    for it in range(opts.max_outer_iterations):
        e_before = e
        s, e = sweep_rows(s, h, opts, trace)
        if s.params.n_gates_per_column:
            s, e = unitary_phase(s, h, opts, trace)
        trace.outer_iterations = it + 1
        log.info("outer %d: E = %.12f", it + 1, e)
        if abs(e_before - e) <= opts.tolerance * max(1.0, abs(e)):
            trace.converged = True
            break
    return s, trace


@dataclass
class RestartResult:
    state: SGSState
    trace: EnergyTrace
    energies: list
    seeds: list
    best_index: int


def best_of_restarts(params: SGSParams, h: Hamiltonian, opts: OptimizerOptions) -> RestartResult:
    """Run ``opts.restarts`` seeded starts and keep the lowest final energy."""
    seeds = [opts.seed + i for i in range(opts.restarts)]
    best = None
    energies = []
    for i, seed in enumerate(seeds):
        s0 = random_sgs(params, seed, unitary_scale=opts.init_unitary_scale)
        s, tr = optimize(s0, h, opts)
        energies.append(tr.final_energy)
        if best is None or tr.final_energy < energies[best[0]]:
            best = (i, s, tr)
    return RestartResult(best[1], best[2], energies, seeds, best[0])
