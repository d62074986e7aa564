"""Brute-force statevector references shared by the test modules."""

import numpy as np

from sgstates.lattice import dense_matrix


def kron_all(mats):
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def site_product(spec, ops):
    return kron_all([ops.get(x, np.eye(spec.d)) for x in spec.sites()])


def expect(psi, spec, ops):
    return complex(np.vdot(psi, site_product(spec, ops) @ psi))


def energy(psi, h):
    return float(np.vdot(psi, dense_matrix(h) @ psi).real / np.vdot(psi, psi).real)
