import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgstates import _kernels
from sgstates.lattice import embed_operator


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 3), st.integers(2, 6), st.data())
def test_apply_gate_matches_dense(d, n, data):
    k = data.draw(st.integers(1, min(3, n)))
    targets = data.draw(st.permutations(range(n)))[:k]
    seed = data.draw(st.integers(0, 2**31))
    g = np.random.default_rng(seed)
    psi = g.standard_normal(d**n) + 1j * g.standard_normal(d**n)
    gate = g.standard_normal((d**k, d**k)) + 1j * g.standard_normal((d**k, d**k))
    ref = embed_operator(gate, targets, n, d) @ psi
    np.testing.assert_allclose(_kernels.apply_gate(psi, gate, targets, d), ref, atol=1e-10)
    np.testing.assert_allclose(_kernels._apply_numpy(psi, gate, targets, d, n), ref, atol=1e-10)


def test_accumulate_local(rng):
    psi = rng.standard_normal(32) + 0j
    op = rng.standard_normal((4, 4)) + 0j
    out = np.ones(32, dtype=complex)
    _kernels.accumulate_local(out, psi, op, [3, 1], 2)
    np.testing.assert_allclose(out, 1 + embed_operator(op, [3, 1], 5, 2) @ psi, atol=1e-12)


def test_env_flag_selects_numpy():
    env = dict(os.environ, SGS_DISABLE_NUMBA="1")
    code = "from sgstates import _kernels; print(_kernels.backend())"
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.strip() == "numpy"


@pytest.mark.skipif(not _kernels.USE_NUMBA, reason="numba backend disabled")
def test_default_backend_is_numba():
    assert _kernels.backend() == "numba"
