import numpy as np
import pytest

from h2fmm.geometry import DistributionSpec, generate
from h2fmm.h2 import (
    admissible,
    build_block_tree,
    compress,
    coupling,
    dense_apply,
    downsweep,
    flop_report,
    hat_vector,
    matvec,
    storage_report,
    upsweep,
)
from h2fmm.kernels import KernelSpec, dense_matrix
from h2fmm.morton import morton_encode
from h2fmm.tree import build_tree

LAPLACE = KernelSpec("laplace3d", regularization=1e-2)


@pytest.fixture(scope="module")
def tree512():
    return build_tree(generate(DistributionSpec("random-cube", 512, seed=1)), 16)


@pytest.fixture(scope="module")
def h2_512(tree512):
    return compress(tree512, LAPLACE, eps=1e-6)


def test_admissible_identical_cell_false():
    c = morton_encode((1, 1, 1), 2)
    assert not admissible(c, c)


def test_admissible_face_adjacent_false():
    a = morton_encode((0, 0, 0), 2)
    b = morton_encode((1, 0, 0), 2)
    assert not admissible(a, b)
    corner = morton_encode((1, 1, 1), 2)
    assert not admissible(a, corner)


def test_admissible_two_widths_apart_true():
    a = morton_encode((0, 0, 0), 2)
    b = morton_encode((2, 0, 0), 2)
    assert admissible(a, b)
    diag = morton_encode((2, 2, 2), 2)
    assert admissible(a, diag)


def test_admissible_eta_sensitivity():
    a = morton_encode((0, 0, 0), 3)
    b = morton_encode((2, 0, 0), 3)
    assert not admissible(a, b, eta=1.0)  # needs dist >= diam
    assert admissible(a, b, eta=4.0)


def test_block_tree_partitions_index_square(tree512):
    bt = build_block_tree(tree512, 1.75)
    t = tree512
    total = 0
    for i, j in zip(bt.lr_row, bt.lr_col):
        total += int(t.counts[i]) * int(t.counts[j])
    for i, j in zip(bt.dense_row, bt.dense_col):
        total += int(t.counts[i]) * int(t.counts[j])
    assert total == 512 * 512
    # Dense pairs sit at octree leaves only.
    assert t.is_leaf[bt.dense_row].all() and t.is_leaf[bt.dense_col].all()


def test_block_row_bound_flat_across_sweep():
    # Max low-rank blocks per row node stays flat over an N sweep.
    maxima = []
    for n in (4096, 8192, 16384):
        t = build_tree(generate(DistributionSpec("random-cube", n, seed=1)), 16)
        maxima.append(build_block_tree(t, 1.75).max_blocks_per_row())
    assert max(maxima) - min(maxima) <= 1
    assert maxima[0] == 189  # full FMM interaction list


def test_ones_kernel_rank_one_exact(tree512):
    m = compress(tree512, KernelSpec("one"), eps=1e-6)
    used = np.unique(m.blocks.lr_row)
    assert (m.row_basis.ranks[used] == 1).all()
    t = tree512
    for i, j, s in zip(m.blocks.lr_row, m.blocks.lr_col, m.blocks.lr_s):
        ui = m.row_basis.explicit_basis(t, int(i))
        vj = m.col_basis.explicit_basis(t, int(j))
        rebuilt = ui @ s @ vj.T
        assert np.abs(rebuilt - 1.0).max() < 1e-12


def test_ones_kernel_matvec_row_sums(tree512):
    m = compress(tree512, KernelSpec("one"), eps=1e-6)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(512)
    y = matvec(m, x)
    assert np.abs(y - x.sum()).max() < 1e-9


def test_per_block_reconstruction_vs_oracle(h2_512, tree512):
    a = dense_matrix(tree512.particles, LAPLACE)
    t = tree512
    m = h2_512
    worst = 0.0
    for i, j, s in zip(m.blocks.lr_row, m.blocks.lr_col, m.blocks.lr_s):
        i, j = int(i), int(j)
        ui = m.row_basis.explicit_basis(t, i)
        vj = m.col_basis.explicit_basis(t, j)
        si, ci = int(t.starts[i]), int(t.counts[i])
        sj, cj = int(t.starts[j]), int(t.counts[j])
        blk = a[si : si + ci, sj : sj + cj]
        err = np.linalg.norm(ui @ s @ vj.T - blk) / np.linalg.norm(blk)
        worst = max(worst, err)
    assert worst <= 1e-5


def test_ranks_nondecreasing_as_eps_tightens(tree512):
    maxima = []
    for eps in (1e-2, 1e-4, 1e-6):
        m = compress(tree512, LAPLACE, eps=eps)
        maxima.append(int(m.row_basis.ranks.max()))
    assert maxima[0] <= maxima[1] <= maxima[2]


def test_matvec_against_dense_oracle_2048():
    ps = generate(DistributionSpec("random-cube", 2048, seed=1))
    t = build_tree(ps, 16)
    m = compress(t, LAPLACE, eps=1e-6)
    a = dense_matrix(ps, LAPLACE)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2048)
    y = matvec(m, x)
    ref = a @ x
    assert np.linalg.norm(y - ref) / np.linalg.norm(ref) <= 1e-5


def test_matvec_zero_vector(h2_512):
    y = matvec(h2_512, np.zeros(512))
    assert np.array_equal(y, np.zeros(512))


def test_matvec_linearity(h2_512):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(512)
    z = rng.standard_normal(512)
    a, b = 0.37, -2.25
    lhs = matvec(h2_512, a * x + b * z)
    rhs = a * matvec(h2_512, x) + b * matvec(h2_512, z)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-12


def test_matvec_dimension_error(h2_512):
    with pytest.raises(ValueError):
        matvec(h2_512, np.zeros(511))


def test_upsweep_matches_explicit_bases(h2_512):
    t = h2_512.octree
    rng = np.random.default_rng(2)
    x = rng.standard_normal(h2_512.n)
    xhat = upsweep(h2_512, x)
    xs = x[t.order]
    for node in range(t.n_nodes):
        v = h2_512.col_basis.explicit_basis(t, node)
        s, c = int(t.starts[node]), int(t.counts[node])
        direct = v.T @ xs[s : s + c]
        assert np.allclose(xhat[node], direct, atol=1e-10)


def test_upsweep_single_leaf_direct():
    ps = generate(DistributionSpec("random-cube", 12, seed=3))
    t = build_tree(ps, 16)
    assert t.n_nodes == 1
    m = compress(t, LAPLACE, eps=1e-4)
    x = np.arange(12, dtype=float)
    xhat = upsweep(m, x)
    v = m.col_basis.leaf_bases[0]
    assert np.array_equal(xhat[0], v.T @ x[t.order])
    assert all(not v.size or True for v in xhat)
    y = matvec(m, x)
    a = dense_matrix(ps, LAPLACE)
    assert np.allclose(y, a @ x, rtol=1e-12)


def test_coupling_accumulation_order_invariance(h2_512):
    rng = np.random.default_rng(4)
    x = rng.standard_normal(h2_512.n)
    xhat = upsweep(h2_512, x)
    yhat = coupling(h2_512, xhat)
    # Shuffle the block order and accumulate again.
    idx = rng.permutation(h2_512.blocks.n_lowrank)
    shuffled = [np.zeros_like(v) for v in yhat]
    for k in idx:
        i = int(h2_512.blocks.lr_row[k])
        j = int(h2_512.blocks.lr_col[k])
        shuffled[i] = shuffled[i] + h2_512.blocks.lr_s[k] @ xhat[j]
    for a, b in zip(yhat, shuffled):
        if a.size:
            assert np.abs(a - b).max() <= 1e-13 * max(1.0, np.abs(a).max())


def test_phase_decomposition_exact(h2_512):
    rng = np.random.default_rng(6)
    x = rng.standard_normal(h2_512.n)
    full = matvec(h2_512, x)
    parts = dense_apply(h2_512, x) + downsweep(h2_512, coupling(h2_512, upsweep(h2_512, x)))
    assert np.array_equal(full, parts)


def test_nesting_identity_per_node(tree512):
    # The transfer-assembled interior basis reproduces each far block to
    # the compression tolerance.
    from h2fmm.h2 import _far_partners, _kernel_rows
    from h2fmm.tree import _ranges_concat

    eps = 1e-4
    m = compress(tree512, LAPLACE, eps=eps)
    t = tree512
    partners = _far_partners(t, m.blocks)
    pos = t.particles.positions
    for node in range(t.n_nodes):
        if t.is_leaf[node] or not partners[node]:
            continue
        u = m.row_basis.explicit_basis(t, node)
        assert np.abs(u.T @ u - np.eye(u.shape[1])).max() < 1e-10
        s0, c0 = int(t.starts[node]), int(t.counts[node])
        col_idx = _ranges_concat(t.starts[partners[node]], t.counts[partners[node]])
        r = _kernel_rows(LAPLACE, pos[s0 : s0 + c0], pos[col_idx])
        resid = r - u @ (u.T @ r)
        bounds = np.concatenate([[0], np.cumsum(t.counts[partners[node]])])
        for b in range(len(partners[node])):
            seg = r[:, bounds[b] : bounds[b + 1]]
            err = np.linalg.norm(resid[:, bounds[b] : bounds[b + 1]])
            assert err <= 3 * eps * np.linalg.norm(seg)


def test_leaf_bases_orthonormal(h2_512):
    for basis in (h2_512.row_basis, h2_512.col_basis):
        for u in basis.leaf_bases.values():
            if u.size:
                assert np.abs(u.T @ u - np.eye(u.shape[1])).max() < 1e-12


def test_storage_single_dense_leaf():
    ps = generate(DistributionSpec("random-cube", 10, seed=0))
    t = build_tree(ps, 16)
    m = compress(t, LAPLACE, eps=1e-6)
    st = storage_report(m)
    assert st["dense"] == 10 * 10 * 8
    assert st["coupling"] == 0
    assert st["total"] == st["dense"]


def test_storage_ones_kernel_one_real_per_block(tree512):
    m = compress(tree512, KernelSpec("one"), eps=1e-6)
    st = storage_report(m)
    assert st["coupling"] == 8 * m.blocks.n_lowrank


def test_flop_report_matches_structure(h2_512):
    fl = flop_report(h2_512)
    dense = sum(b.size for b in h2_512.blocks.dense_blocks)
    assert fl["dense"] == dense
    assert fl["total"] == sum(v for k, v in fl.items() if k != "total")


def test_max_rank_cap_flags_nodes(tree512):
    m = compress(tree512, LAPLACE, eps=1e-8, max_rank=3)
    flagged = m.flagged_nodes()
    assert flagged, "a rank cap of 3 at eps=1e-8 must leave residual tails"
    assert (m.row_basis.ranks <= 3).all()
    assert m.summary()["flagged_nodes"] == len(flagged)


def test_hat_vector_level_major_order(h2_512):
    rng = np.random.default_rng(8)
    x = rng.standard_normal(h2_512.n)
    xhat = upsweep(h2_512, x)
    flat = hat_vector(h2_512, xhat)
    assert flat.shape == (sum(int(h2_512.col_basis.ranks[n]) for n in range(h2_512.octree.n_nodes)),)


def test_compress_validation(tree512):
    with pytest.raises(ValueError):
        compress(tree512, LAPLACE, eps=1.5)
    with pytest.raises(ValueError):
        compress(tree512, LAPLACE, eps=1e-4, max_rank=0)
