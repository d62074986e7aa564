"""Nearest-neighbour test Hamiltonians on open H x V lattices, plus the
exact-diagonalization reference used at desk scale."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import _kernels
from .tensor import ValidationError

SX = np.array([[0, 1], [1, 0]], dtype=np.complex128)
SY = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
SZ = np.array([[1, 0], [0, -1]], dtype=np.complex128)
ID2 = np.eye(2, dtype=np.complex128)

MODELS = ("heisenberg", "frustrated_xx", "random2body")
PRNG_NAME = "numpy.random.PCG64"
FRUSTRATION_CONVENTION = (
    "J=-1 on horizontal edge (r,c)-(r,c+1) iff (c+1)%4==0 and on vertical "
    "edge (r,c)-(r+1,c) iff (r+1)%4==0; 0-based coordinates"
)
DEFAULT_DIM_CAP = 2**20
DENSE_MAX_DIM = 2**10


class ResourceError(RuntimeError):
    """A computation would exceed a configured size cap."""


@dataclass(frozen=True)
class LatticeSpec:
    rows: int
    cols: int
    d: int = 2

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.d < 2:
            raise ValidationError(f"invalid lattice {self}")

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def index(self, site) -> int:
        r, c = site
        return r * self.cols + c

    def sites(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def horizontal_edges(self):
        return [((r, c), (r, c + 1)) for r in range(self.rows) for c in range(self.cols - 1)]

    def vertical_edges(self):
        return [((r, c), (r + 1, c)) for r in range(self.rows - 1) for c in range(self.cols)]

    def edges(self):
        return self.horizontal_edges() + self.vertical_edges()


@dataclass(frozen=True)
class HamiltonianTerm:
    """Hermitian operator on one site or an ordered pair of sites.

    For two sites the operator is ``d^2 x d^2`` with ``sites[0]`` as the most
    significant factor.
    """

    sites: tuple
    operator: np.ndarray

    def __post_init__(self):
        op = np.asarray(self.operator, dtype=np.complex128)
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "sites", tuple(tuple(int(x) for x in s) for s in self.sites))
        if len(self.sites) not in (1, 2):
            raise ValidationError("terms act on one or two sites")
        if np.max(np.abs(op - op.conj().T)) > 1e-12:
            raise ValidationError("term operator is not Hermitian")


@dataclass
class Hamiltonian:
    spec: LatticeSpec
    terms: list = field(default_factory=list)
    seed: int | None = None
    model: str = "custom"

    def metadata(self) -> dict:
        meta = {"model": self.model, "rows": self.spec.rows, "cols": self.spec.cols, "d": self.spec.d}
        if self.model == "frustrated_xx":
            meta["frustration"] = FRUSTRATION_CONVENTION
        if self.model == "random2body":
            meta.update(seed=self.seed, prng=PRNG_NAME, distribution="(G+G^dag)/2, G iid standard complex normal")
        return meta


def heisenberg_bond() -> np.ndarray:
    return np.kron(SX, SX) + np.kron(SY, SY) + np.kron(SZ, SZ)


def xx_bond(j: float = 1.0) -> np.ndarray:
    return j * (np.kron(SX, SX) + np.kron(SY, SY))


def frustrated_coupling(edge) -> float:
    (r1, c1), (r2, c2) = edge
    if r1 == r2:
        return -1.0 if (c1 + 1) % 4 == 0 else 1.0
    return -1.0 if (r1 + 1) % 4 == 0 else 1.0


def build_hamiltonian(model: str, spec: LatticeSpec, seed: int | None = None) -> Hamiltonian:
    """Edge terms in a fixed order: horizontal edges row-major, then vertical."""
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; expected one of {MODELS}")
    if spec.d != 2:
        raise ValidationError(f"model {model!r} is defined for d=2, got d={spec.d}")
    terms = []
    if model == "heisenberg":
        hb = heisenberg_bond()
        terms = [HamiltonianTerm(e, hb) for e in spec.edges()]
    elif model == "frustrated_xx":
        terms = [HamiltonianTerm(e, xx_bond(frustrated_coupling(e))) for e in spec.edges()]
    else:
        if seed is None:
            raise ValidationError("random2body requires a seed")
        rng = np.random.Generator(np.random.PCG64(seed))
        for e in spec.edges():
            g = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))) / np.sqrt(2)
            terms.append(HamiltonianTerm(e, 0.5 * (g + g.conj().T)))
    return Hamiltonian(spec, terms, seed=seed, model=model)


def block_hamiltonian(h: Hamiltonian, n: int) -> Hamiltonian:
    """Re-express ``h`` on the lattice of vertical n-site blocks.

    Effective site (R, c) holds physical rows nR..nR+n-1 of column c, top row
    most significant. Terms inside one block become one-site terms; the rest
    become two-site terms on neighbouring blocks.
    """
    spec = h.spec
    if spec.rows % n:
        raise ValidationError(f"rows={spec.rows} not divisible by block size {n}")
    if n == 1:
        return h
    d = spec.d
    bspec = LatticeSpec(spec.rows // n, spec.cols, d**n)
    acc: dict = {}
    for t in h.terms:
        blocks = sorted({(r // n, c) for r, c in t.sites})
        op = _embed_in_blocks(t, blocks, n, d)
        key = tuple(blocks)
        acc[key] = acc[key] + op if key in acc else op
    terms = [HamiltonianTerm(k, v) for k, v in acc.items()]
    return Hamiltonian(bspec, terms, seed=h.seed, model=h.model)


def _embed_in_blocks(term: HamiltonianTerm, blocks, n: int, d: int) -> np.ndarray:
    slots = [(b[0] * n + k, b[1]) for b in blocks for k in range(n)]
    pos = [slots.index(s) for s in term.sites]
    return embed_operator(term.operator, pos, len(slots), d)


def embed_operator(op: np.ndarray, positions, n: int, d: int) -> np.ndarray:
    """Dense ``d^n`` matrix of ``op`` acting on ``positions`` (in that order)."""
    k = len(positions)
    eye = np.eye(d**n, dtype=np.complex128).reshape((d,) * (2 * n))
    g = np.asarray(op, dtype=np.complex128).reshape((d,) * (2 * k))
    res = np.tensordot(g, eye, axes=(list(range(k, 2 * k)), list(positions)))
    res = np.moveaxis(res, list(range(k)), list(positions))
    return res.reshape(d**n, d**n)


def dense_matrix(h: Hamiltonian) -> np.ndarray:
    """Global matrix built naively by embedding each term with identities."""
    spec = h.spec
    dim = spec.d**spec.n_sites
    out = np.zeros((dim, dim), dtype=np.complex128)
    for t in h.terms:
        out += embed_operator(t.operator, [spec.index(s) for s in t.sites], spec.n_sites, spec.d)
    return out


def apply_hamiltonian(h: Hamiltonian, psi: np.ndarray) -> np.ndarray:
    spec = h.spec
    out = np.zeros_like(psi, dtype=np.complex128)
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    for t in h.terms:
        _kernels.accumulate_local(out, psi, t.operator, [spec.index(s) for s in t.sites], spec.d)
    return out


def exact_ground(
    h: Hamiltonian, dim_cap: int = DEFAULT_DIM_CAP, dense_max_dim: int = DENSE_MAX_DIM
) -> tuple[float, np.ndarray]:
    """Ground energy and unit-norm ground vector of the full Hamiltonian."""
    spec = h.spec
    dim = spec.d**spec.n_sites
    if dim > dim_cap:
        raise ResourceError(f"Hilbert dimension {dim} exceeds cap {dim_cap}")
    if not h.terms:
        v = np.zeros(dim, dtype=np.complex128)
        v[0] = 1.0
        return 0.0, v
    if dim <= dense_max_dim:
        w, vecs = np.linalg.eigh(dense_matrix(h))
        e, v = float(w[0]), vecs[:, 0]
    else:
        op = spla.LinearOperator((dim, dim), matvec=lambda x: apply_hamiltonian(h, x.ravel()), dtype=np.complex128)
        v0 = np.random.Generator(np.random.PCG64(12345)).standard_normal(dim).astype(np.complex128)
        w, vecs = spla.eigsh(op, k=1, which="SA", tol=1e-13, v0=v0, ncv=min(dim, 40))
        e, v = float(w[0]), vecs[:, 0]
    v = v / np.linalg.norm(v)
    res = np.linalg.norm(apply_hamiltonian(h, v) - e * v)
    if res > 1e-8:
        raise RuntimeError(f"ground state residual {res:.2e} above 1e-8")
    return e, v
