import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgstates import mps
from sgstates.io import prep_from_json, prep_to_json
from sgstates.lattice import SX, SZ, LatticeSpec, ResourceError
from sgstates.state import (
    SGSParams,
    block_rows,
    cluster_state,
    contract_peps,
    expected_gate_count,
    identity_unitaries,
    new_sgs,
    peps_bond_dims,
    prepare_sequence,
    random_sgs,
    replay,
    to_peps,
    to_statevector,
)
from sgstates.tensor import DimensionError, ValidationError, matricize


def kron_all(mats):
    out = np.array([[1.0]])
    for m in mats:
        out = np.kron(out, m)
    return out


def product_of_rows(s):
    return kron_all([mps.to_vector(r).reshape(-1, 1) for r in s.rows]).reshape(-1)


def test_identity_unitaries_give_row_product():
    p = SGSParams(LatticeSpec(3, 2), M=1, D=2)
    rows = [mps.random_mps(2, 2, 2, seed=k) for k in range(3)]
    s = new_sgs(p, rows, identity_unitaries(p))
    np.testing.assert_allclose(to_statevector(s), product_of_rows(s), atol=1e-12)


def test_non_unitary_rejected():
    p = SGSParams(LatticeSpec(2, 2), M=1, D=2)
    rows = [mps.random_mps(2, 2, 2, seed=k) for k in range(2)]
    us = [list(u) for u in identity_unitaries(p)]
    us[0][1] = us[0][1] * (1 + 1e-3)
    with pytest.raises(ValidationError):
        new_sgs(p, rows, us)


def test_shape_mismatch_rejected():
    p = SGSParams(LatticeSpec(2, 2), M=1, D=2)
    rows = [mps.random_mps(2, 2, 2, seed=k) for k in range(2)]
    with pytest.raises(DimensionError):
        new_sgs(p, rows, [[np.eye(2), np.eye(2)]])
    with pytest.raises(DimensionError):
        new_sgs(p, rows[:1], identity_unitaries(p))


def test_unnormalized_row_rejected():
    p = SGSParams(LatticeSpec(2, 2), M=1, D=2)
    rows = [mps.random_mps(2, 2, 2, seed=0).scaled(2.0), mps.random_mps(2, 2, 2, seed=1)]
    with pytest.raises(ValidationError):
        new_sgs(p, rows, identity_unitaries(p))


def test_block_size_must_divide_rows():
    with pytest.raises(ValidationError):
        SGSParams(LatticeSpec(3, 2), N=2)


def test_random_state_norm():
    s = random_sgs(SGSParams(LatticeSpec(3, 3), M=1, D=2), seed=5)
    assert np.linalg.norm(to_statevector(s)) == pytest.approx(1.0, abs=1e-10)


def test_random_sgs_deterministic():
    p = SGSParams(LatticeSpec(3, 3), M=1, D=2)
    a, b = random_sgs(p, 4), random_sgs(p, 4)
    assert np.array_equal(to_statevector(a), to_statevector(b))


def test_single_row_is_mps():
    p = SGSParams(LatticeSpec(1, 5), M=1, D=3)
    s = random_sgs(p, 2)
    assert s.unitaries == ()
    np.testing.assert_allclose(to_statevector(s), mps.to_vector(s.rows[0]), atol=1e-12)


def test_column_gate_direct_oracle():
    # 2x1 lattice: one gate on the whole column after the two one-site rows
    p = SGSParams(LatticeSpec(2, 1), M=1, D=1)
    s = random_sgs(p, 3)
    psi = s.unitaries[0][0] @ product_of_rows(s)
    np.testing.assert_allclose(to_statevector(s), psi, atol=1e-12)


def test_statevector_cap():
    s = random_sgs(SGSParams(LatticeSpec(3, 3), M=1, D=2), 0)
    with pytest.raises(ResourceError):
        to_statevector(s, cap=2**8)


@pytest.mark.parametrize("shape,m,bond", [((3, 3), 1, 2), ((3, 4), 2, 4), ((4, 3), 2, 2), ((2, 2), 1, 2)])
def test_replay_matches_statevector(shape, m, bond):
    p = SGSParams(LatticeSpec(*shape), M=m, D=bond)
    for seed in range(3):
        s = random_sgs(p, seed)
        psi = replay(prepare_sequence(s))
        assert abs(np.vdot(psi, to_statevector(s))) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(psi, to_statevector(s), atol=1e-9)


@pytest.mark.parametrize("shape", [(2, 4), (3, 4), (2, 2), (3, 2)])
def test_replay_with_bond_above_gate_span(shape):
    # D = 4 > d^M: rows are prepared with wider gates
    s = random_sgs(SGSParams(LatticeSpec(*shape), M=1, D=4), 0)
    np.testing.assert_allclose(replay(prepare_sequence(s)), to_statevector(s), atol=1e-9)


def test_gate_count_formula():
    p = SGSParams(LatticeSpec(2, 2), M=1, D=2)
    assert expected_gate_count(p) == 4
    assert len(prepare_sequence(random_sgs(p, 0))) == 4
    for h, v in [(3, 3), (3, 4), (4, 5)]:
        p = SGSParams(LatticeSpec(h, v), M=1, D=2)
        assert len(prepare_sequence(random_sgs(p, 1))) == h * (v - 1) + v * (h - 1)


def test_identity_state_replays_basis_product():
    p = SGSParams(LatticeSpec(2, 3), M=1, D=1)
    rows = [mps.product_mps([[1, 0]] * 3), mps.product_mps([[0, 1], [1, 0], [0, 1]])]
    s = new_sgs(p, rows, identity_unitaries(p))
    psi = replay(prepare_sequence(s))
    expected = np.zeros(64)
    expected[int("000101", 2)] = 1
    assert abs(np.vdot(expected, psi)) == pytest.approx(1.0, abs=1e-12)


def test_prep_json_roundtrip():
    s = random_sgs(SGSParams(LatticeSpec(2, 3), M=1, D=2), 8)
    seq = prepare_sequence(s)
    back = prep_from_json(prep_to_json(seq))
    np.testing.assert_allclose(replay(back), replay(seq), atol=1e-14)


def test_peps_identity_unitaries_reduce_to_rows():
    p = SGSParams(LatticeSpec(3, 3), M=1, D=2)
    rows = [mps.random_mps(3, 2, 2, seed=k) for k in range(3)]
    s = new_sgs(p, rows, identity_unitaries(p))
    grid = to_peps(s)
    for r in range(3):
        for c in range(3):
            b = grid[r][c]
            assert b.shape[1] == 1 and b.shape[3] == 1
            np.testing.assert_allclose(b[:, 0, :, 0, :], rows[r].tensors[c].transpose(0, 2, 1), atol=1e-12)


def test_peps_small_contraction():
    s = random_sgs(SGSParams(LatticeSpec(2, 2), M=1, D=2), 13)
    np.testing.assert_allclose(contract_peps(to_peps(s)), to_statevector(s), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 2, 4]), st.integers(0, 10**6))
def test_peps_contraction_equals_statevector(h, v, bond, seed):
    s = random_sgs(SGSParams(LatticeSpec(h, v), M=1, D=bond), seed)
    np.testing.assert_allclose(contract_peps(to_peps(s)), to_statevector(s), atol=1e-9)


def test_peps_m2_and_block():
    s = random_sgs(SGSParams(LatticeSpec(4, 2), M=2, D=2), 1)
    np.testing.assert_allclose(contract_peps(to_peps(s)), to_statevector(s), atol=1e-9)
    b = random_sgs(SGSParams(LatticeSpec(4, 2), M=1, D=2, N=2), 1)
    np.testing.assert_allclose(contract_peps(to_peps(b)), to_statevector(b), atol=1e-9)


@pytest.mark.parametrize("m", [1, 2])
def test_peps_bulk_svd_rank(m):
    h, v = 5, 4
    s = random_sgs(SGSParams(LatticeSpec(h, v), M=m, D=2), 7)
    grid = to_peps(s)
    dims = peps_bond_dims(grid)
    assert dims["vertical"] <= 2**m
    for r in range(m, h - 1):
        for c in range(v):
            sv = np.linalg.svd(matricize(grid[r][c], [0, 2], [1, 3, 4]), compute_uv=False)
            assert np.all(sv[2:] < 1e-10 * max(sv[0], 1.0))
            assert grid[r][c].shape[0] <= 2 and grid[r][c].shape[2] <= 2


def stabilizer(spec, site):
    ops = {site: SX}
    r, c = site
    for nb in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]:
        if 0 <= nb[0] < spec.rows and 0 <= nb[1] < spec.cols:
            ops[nb] = SZ
    return kron_all([ops.get(x, np.eye(2)) for x in spec.sites()])


@pytest.mark.parametrize("shape", [(1, 2), (2, 2), (3, 3)])
def test_cluster_state_stabilizers(shape):
    spec = LatticeSpec(*shape)
    psi = to_statevector(cluster_state(spec))
    for site in spec.sites():
        assert np.vdot(psi, stabilizer(spec, site) @ psi).real == pytest.approx(1.0, abs=1e-10)


def test_cluster_state_bulk_sigma_z_zero():
    spec = LatticeSpec(3, 3)
    psi = to_statevector(cluster_state(spec))
    op = kron_all([SZ if x == (1, 1) else np.eye(2) for x in spec.sites()])
    assert abs(np.vdot(psi, op @ psi)) < 1e-10


def test_cluster_state_requires_qubits():
    with pytest.raises(ValidationError):
        cluster_state(LatticeSpec(2, 2, 3))


def test_block_rows_identity_for_n1():
    s = random_sgs(SGSParams(LatticeSpec(4, 2), M=1, D=2), 0)
    assert block_rows(s, 1) is s


@pytest.mark.parametrize("n", [2, 4])
def test_block_rows_preserves_state(n):
    s = random_sgs(SGSParams(LatticeSpec(4, 2), M=1, D=2), 3)
    b = block_rows(s, n)
    assert b.params.eff_rows == 4 // n and b.params.eff_d == 2**n
    np.testing.assert_allclose(to_statevector(b), to_statevector(s), atol=1e-10)


def test_block_rows_indivisible():
    s = random_sgs(SGSParams(LatticeSpec(3, 2), M=1, D=2), 0)
    with pytest.raises(ValidationError):
        block_rows(s, 2)


def test_bsgs_effective_lattice():
    p = SGSParams(LatticeSpec(4, 4), M=1, D=4, N=2)
    assert p.eff_spec == LatticeSpec(2, 4, 4)
    s = random_sgs(p, 0)
    assert len(s.rows) == 2 and s.rows[0].d == 4
    assert s.unitaries[0][0].shape == (16, 16)


def test_peps_bulk_tensor_formula():
    # 3x2, M=1: the middle-row tensor is the gate on rows (0, 1) fed by the
    # top-row MPS tensor; out index = (u: row 0, i: row 1), in = (j: row 0, d: row 1)
    s = random_sgs(SGSParams(LatticeSpec(3, 2), M=1, D=2), 21)
    grid = to_peps(s)
    for c in range(2):
        u = s.unitaries[0][c]
        a = s.rows[0].tensors[c]
        b = grid[1][c]
        ref = np.zeros(b.shape, dtype=complex)
        for l in range(a.shape[0]):
            for r in range(a.shape[2]):
                for up in range(2):
                    for dn in range(2):
                        for i in range(2):
                            ref[l, up, r, dn, i] = sum(u[2 * up + i, 2 * j + dn] * a[l, j, r] for j in range(2))
        np.testing.assert_allclose(b, ref, atol=1e-14)
