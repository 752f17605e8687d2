import numpy as np
import pytest

from h2fmm.geometry import DistributionSpec, generate
from h2fmm.h2 import compress, matvec, storage_report
from h2fmm.h2io import load_h2, save_h2
from h2fmm.kernels import KernelSpec
from h2fmm.tree import build_tree


@pytest.fixture(scope="module")
def small_h2():
    ps = generate(DistributionSpec("plummer", 700, seed=2))
    t = build_tree(ps, 16)
    return compress(t, KernelSpec("laplace3d", regularization=1e-2), eps=1e-5)


def test_container_roundtrip_bitwise(small_h2, tmp_path):
    path = tmp_path / "m.h2"
    save_h2(small_h2, path)
    back = load_h2(path)
    assert back.n == small_h2.n
    assert back.kernel == small_h2.kernel
    assert back.eps == small_h2.eps and back.eta == small_h2.eta
    assert np.array_equal(back.octree.keys, small_h2.octree.keys)
    assert np.array_equal(back.octree.order, small_h2.octree.order)
    for node, u in small_h2.row_basis.leaf_bases.items():
        assert np.array_equal(back.row_basis.leaf_bases[node], u)
    for node, tr in small_h2.col_basis.transfers.items():
        for child, mat in tr.items():
            assert np.array_equal(back.col_basis.transfers[node][child], mat)
    for a, b in zip(back.blocks.lr_s, small_h2.blocks.lr_s):
        assert np.array_equal(a, b)
    for a, b in zip(back.blocks.dense_blocks, small_h2.blocks.dense_blocks):
        assert np.array_equal(a, b)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(small_h2.n)
    assert np.array_equal(matvec(back, x), matvec(small_h2, x))
    assert storage_report(back) == storage_report(small_h2)


def test_magic_and_version_checks(small_h2, tmp_path):
    path = tmp_path / "m.h2"
    save_h2(small_h2, path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.h2"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ValueError, match="magic"):
        load_h2(bad)
    worse = bytearray(raw)
    worse[4:8] = (99).to_bytes(4, "little")
    bad2 = tmp_path / "bad2.h2"
    bad2.write_bytes(bytes(worse))
    with pytest.raises(ValueError, match="version"):
        load_h2(bad2)
