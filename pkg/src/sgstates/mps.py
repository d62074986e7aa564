"""Open-boundary matrix product states for a single lattice row.

Site tensors have modes ``(left bond, physical, right bond)``; boundary
bonds have extent 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, ValidationError, as_tensor


@dataclass(frozen=True)
class MPSRow:
    tensors: tuple
    center: int | None = None

    def __post_init__(self):
        ts = tuple(as_tensor(t) for t in self.tensors)
        object.__setattr__(self, "tensors", ts)
        if not ts:
            raise DimensionError("an MPS row needs at least one site")
        if ts[0].shape[0] != 1 or ts[-1].shape[2] != 1:
            raise DimensionError("boundary bond extents must be 1")
        for a, b in zip(ts[:-1], ts[1:]):
            if a.shape[2] != b.shape[0]:
                raise DimensionError(f"bond mismatch {a.shape} -> {b.shape}")

    def __len__(self):
        return len(self.tensors)

    @property
    def d(self) -> int:
        return self.tensors[0].shape[1]

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    def replace(self, site: int, tensor, center: int | None = None) -> "MPSRow":
        ts = list(self.tensors)
        ts[site] = tensor
        return MPSRow(tuple(ts), center)

    def scaled(self, factor: complex) -> "MPSRow":
        ts = list(self.tensors)
        ts[0] = ts[0] * factor
        return MPSRow(tuple(ts), None)


def _bond_caps(v: int, d: int, bond: int) -> list[int]:
    return [min(bond, d**k, d ** (v - k)) for k in range(v + 1)]


def random_mps(v: int, d: int, bond: int, seed: int) -> MPSRow:
    """Normalized random row MPS, canonical at site 0, deterministic per seed."""
    if v < 1 or d < 1 or bond < 1:
        raise ValidationError(f"invalid MPS parameters V={v}, d={d}, D={bond}")
    rng = np.random.Generator(np.random.PCG64(seed))
    caps = _bond_caps(v, d, bond)
    ts = []
    for k in range(v):
        shape = (caps[k], d, caps[k + 1])
        ts.append(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    m = canonicalize(MPSRow(tuple(ts)), 0)
    return normalize(m)


def product_mps(vectors) -> MPSRow:
    return MPSRow(tuple(np.asarray(v, dtype=np.complex128).reshape(1, -1, 1) for v in vectors))


def to_vector(m: MPSRow) -> np.ndarray:
    """Brute-force amplitude expansion; site 0 is the most significant digit."""
    psi = m.tensors[0].reshape(m.tensors[0].shape[1], -1)
    for t in m.tensors[1:]:
        psi = np.tensordot(psi, t, axes=(1, 0)).reshape(-1, t.shape[2])
    return psi.reshape(-1)


def overlap(a: MPSRow, b: MPSRow) -> complex:
    """<a|b> for rows of equal length and physical dimension."""
    if len(a) != len(b):
        raise DimensionError("rows differ in length")
    env = np.ones((1, 1), dtype=np.complex128)
    for x, y in zip(a.tensors, b.tensors):
        env = np.einsum("xy,xib,yic->bc", env, x.conj(), y)
    return complex(env[0, 0])


def norm(m: MPSRow) -> float:
    return float(np.sqrt(max(expectation_chain(m, {}).real, 0.0)))


def normalize(m: MPSRow) -> MPSRow:
    nrm = norm(m)
    if m.center is not None:
        return m.replace(m.center, m.tensors[m.center] / nrm, m.center)
    return m.scaled(1.0 / nrm)


def _fix_phase(t: np.ndarray) -> np.ndarray:
    flat = t.reshape(-1)
    nz = np.flatnonzero(np.abs(flat) > 1e-14)
    if nz.size == 0:
        return t
    z = flat[nz[0]]
    return t * (abs(z) / z)


def canonicalize(m: MPSRow, site: int) -> MPSRow:
    """Mixed-canonical gauge with orthogonality center at ``site``.

    Uses QR sweeps; the state is unchanged up to a global phase, which is
    fixed by making the first non-negligible entry of the center real
    non-negative.
    """
    v = len(m)
    if not 0 <= site < v:
        raise ValidationError(f"site {site} outside row of length {v}")
    ts = list(m.tensors)
    for k in range(site):
        dl, d, dr = ts[k].shape
        q, r = np.linalg.qr(ts[k].reshape(dl * d, dr))
        ts[k] = q.reshape(dl, d, -1)
        ts[k + 1] = np.tensordot(r, ts[k + 1], axes=(1, 0))
    for k in range(v - 1, site, -1):
        dl, d, dr = ts[k].shape
        q, r = np.linalg.qr(ts[k].reshape(dl, d * dr).T)
        ts[k] = q.T.reshape(-1, d, dr)
        ts[k - 1] = np.tensordot(ts[k - 1], r.T, axes=(2, 0))
    ts[site] = _fix_phase(ts[site])
    return MPSRow(tuple(ts), site)


def is_left_isometry(t: np.ndarray, tol: float = 1e-12) -> bool:
    dl, d, dr = t.shape
    a = t.reshape(dl * d, dr)
    return np.allclose(a.conj().T @ a, np.eye(dr), atol=tol)


def is_right_isometry(t: np.ndarray, tol: float = 1e-12) -> bool:
    dl, d, dr = t.shape
    a = t.reshape(dl, d * dr)
    return np.allclose(a @ a.conj().T, np.eye(dl), atol=tol)


@dataclass(frozen=True)
class TransferMatrix:
    """``E_O`` with rows ordered (bra bond, ket bond) of the left side."""

    matrix: np.ndarray
    label: str = ""


def transfer_matrix(a, o, label: str = "") -> TransferMatrix:
    """E_O = sum_{i,i'} <i'|O|i> conj(A^{i'}) (x) A^{i}."""
    a = as_tensor(a)
    o = as_tensor(o)
    if a.ndim != 3 or o.shape != (a.shape[1], a.shape[1]):
        raise DimensionError(f"observable {o.shape} incompatible with site tensor {a.shape}")
    e = np.einsum("pq,xpb,yqc->xybc", o, a.conj(), a)
    dl, dr = a.shape[0], a.shape[2]
    return TransferMatrix(e.reshape(dl * dl, dr * dr), label)


def expectation_chain(m: MPSRow, ops: dict) -> complex:
    """tr(E^[1] ... E^[V]) with E_1 at sites without an observable."""
    env = np.ones((1, 1), dtype=np.complex128)
    for k, a in enumerate(m.tensors):
        o = ops.get(k)
        if o is None:
            env = np.einsum("xy,xib,yic->bc", env, a.conj(), a)
        else:
            o = as_tensor(o)
            if o.shape != (a.shape[1], a.shape[1]):
                raise DimensionError(f"observable at site {k} has shape {o.shape}")
            env = np.einsum("xy,pq,xpb,yqc->bc", env, o, a.conj(), a)
    return complex(env[0, 0])


def reduced_density(m: MPSRow, sites) -> np.ndarray:
    """Density matrix on ``sites`` (ascending), trace equal to the squared norm.

    Returned as a ``d^k x d^k`` matrix, first listed site most significant.
    """
    sites = sorted(int(s) for s in sites)
    if len(set(sites)) != len(sites):
        raise ValidationError("repeated site in reduced_density")
    d = m.d
    env = np.ones((1, 1), dtype=np.complex128)
    for k, a in enumerate(m.tensors):
        if k in sites:
            env = np.einsum("...xy,xjb,yic->...ijbc", env, a.conj(), a)
        else:
            env = np.einsum("...xy,xib,yic->...bc", env, a.conj(), a)
    n = len(sites)
    env = env.reshape((d, d) * n)
    perm = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    return np.ascontiguousarray(env.transpose(perm).reshape(d**n, d**n))


def two_site_rdm(m: MPSRow, c1: int, c2: int) -> np.ndarray:
    if not c1 < c2:
        raise ValidationError("two_site_rdm requires c1 < c2")
    return reduced_density(m, (c1, c2))


def local_terms_mpo(v: int, d: int, terms, tol: float = 1e-13) -> list[np.ndarray]:
    """MPO for a sum of one- and two-site operators on a chain.

    ``terms`` is a list of ``(sites, operator)``. Returns tensors with modes
    ``(left, right, out, in)``; the boundary tensors are already projected
    so the left and right bonds have extent 1.
    """
    onsite = [np.zeros((d, d), dtype=np.complex128) for _ in range(v)]
    pairs: dict = {}
    for sites, op in terms:
        op = as_tensor(op)
        if len(sites) == 1:
            onsite[sites[0]] += op
        else:
            c1, c2 = sites
            if c1 > c2:
                c1, c2 = c2, c1
                op = op.reshape(d, d, d, d).transpose(1, 0, 3, 2).reshape(d * d, d * d)
            pairs[(c1, c2)] = pairs.get((c1, c2), 0) + op
    channels = []
    for (c1, c2), op in sorted(pairs.items()):
        mat = op.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
        u, s, vh = np.linalg.svd(mat)
        for k in range(len(s)):
            if s[k] > tol * max(s[0], 1.0):
                left = (u[:, k] * s[k]).reshape(d, d)
                right = vh[k].reshape(d, d)
                channels.append((c1, c2, left, right))
    crossing = [[i for i, ch in enumerate(channels) if ch[0] <= b < ch[1]] for b in range(v - 1)]
    eye = np.eye(d, dtype=np.complex128)
    ws = []
    for c in range(v):
        wl = 2 + (len(crossing[c - 1]) if c > 0 else 0)
        wr = 2 + (len(crossing[c]) if c < v - 1 else 0)
        w = np.zeros((wl, wr, d, d), dtype=np.complex128)
        w[0, 0] = eye
        w[1, 1] = eye
        w[0, 1] = onsite[c]
        for i, (c1, c2, left, right) in enumerate(channels):
            if c == c1:
                w[0, 2 + crossing[c].index(i)] = left
            elif c1 < c < c2:
                w[2 + crossing[c - 1].index(i), 2 + crossing[c].index(i)] = eye
            elif c == c2:
                w[2 + crossing[c - 1].index(i), 1] = right
        ws.append(w)
    ws[0] = ws[0][:1]
    ws[-1] = ws[-1][:, 1:2]
    return ws


def mpo_expectation(m: MPSRow, mpo) -> complex:
    env = np.ones((1, 1, 1), dtype=np.complex128)
    for a, w in zip(m.tensors, mpo):
        env = np.einsum("xwy,xib,wvij,yjc->bvc", env, a.conj(), w, a, optimize=True)
    return complex(env.reshape(-1)[0])
