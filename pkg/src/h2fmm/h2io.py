"""Binary container for compressed matrices.

Layout (all little-endian, documented in the README):

  magic   4 bytes  b"H2FM"
  version u32      currently 1
  header  u64      byte length of the JSON header that follows
  header  JSON     kernel spec, eps / eta / max_rank, sizes
  arrays           raw array payload in the order listed by the header

Every array is written as ``<dtype code, u64 byte length, bytes>`` with
row-major float64 / integer data, so a read-back reproduces the matrix
bit for bit.
"""
from __future__ import annotations

import json

import numpy as np

from .geometry import ParticleSet
from .h2 import BasisTree, BlockTree, H2Matrix
from .kernels import KernelSpec
from .tree import Octree

MAGIC = b"H2FM"
VERSION = 1


def _write_array(fh, arr):
    arr = np.ascontiguousarray(arr)
    code = arr.dtype.str.encode()  # e.g. b"<f8"
    fh.write(np.uint32(len(code)).astype("<u4").tobytes())
    fh.write(code)
    fh.write(np.uint64(arr.nbytes).astype("<u8").tobytes())
    fh.write(arr.tobytes())


def _read_array(fh, shape=None):
    code_len = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
    dtype = np.dtype(fh.read(code_len).decode())
    nbytes = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
    arr = np.frombuffer(fh.read(nbytes), dtype=dtype).copy()
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def _basis_payload(basis: BasisTree, tree: Octree):
    entries = []
    for node in range(tree.n_nodes):
        if node in basis.leaf_bases:
            entries.append(("leaf", node, list(basis.leaf_bases[node].shape)))
        elif node in basis.transfers:
            kids = sorted(basis.transfers[node])
            entries.append(
                ("interior", node, [[k] + list(basis.transfers[node][k].shape) for k in kids])
            )
    return entries


def save_h2(h2: H2Matrix, path) -> None:
    """Serialize the compressed matrix to the binary container."""
    tree = h2.octree
    header = {
        "kernel": {
            "kind": h2.kernel.kind,
            "regularization": h2.kernel.regularization,
            "sigma": h2.kernel.sigma,
        },
        "eps": h2.eps,
        "eta": h2.eta,
        "max_rank": h2.max_rank,
        "n": tree.n_particles,
        "n_nodes": tree.n_nodes,
        "leaf_capacity": tree.leaf_capacity,
        "balanced": tree.balanced,
        "n_lowrank": h2.blocks.n_lowrank,
        "n_dense": h2.blocks.n_dense,
        "row_basis": _basis_payload(h2.row_basis, tree),
        "col_basis": _basis_payload(h2.col_basis, tree),
        "lr_shapes": [list(s.shape) for s in h2.blocks.lr_s],
        "dense_shapes": [list(b.shape) for b in h2.blocks.dense_blocks],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).astype("<u4").tobytes())
        fh.write(np.uint64(len(blob)).astype("<u8").tobytes())
        fh.write(blob)
        _write_array(fh, tree.particles.positions)
        _write_array(fh, tree.particles.indices)
        _write_array(fh, tree.particles.charges)
        _write_array(fh, tree.order)
        _write_array(fh, tree.keys21)
        _write_array(fh, tree.keys)
        _write_array(fh, tree.levels)
        _write_array(fh, tree.starts)
        _write_array(fh, tree.counts)
        _write_array(fh, tree.parents)
        _write_array(fh, tree.child_start)
        _write_array(fh, tree.child_count)
        _write_array(fh, tree.is_leaf)
        _write_array(fh, tree.level_ptr)
        for basis in (h2.row_basis, h2.col_basis):
            _write_array(fh, basis.ranks)
            _write_array(fh, basis.tails)
            for node in range(tree.n_nodes):
                if node in basis.leaf_bases:
                    _write_array(fh, basis.leaf_bases[node])
                elif node in basis.transfers:
                    for k in sorted(basis.transfers[node]):
                        _write_array(fh, basis.transfers[node][k])
        _write_array(fh, h2.blocks.lr_row)
        _write_array(fh, h2.blocks.lr_col)
        for s in h2.blocks.lr_s:
            _write_array(fh, s)
        _write_array(fh, h2.blocks.dense_row)
        _write_array(fh, h2.blocks.dense_col)
        for b in h2.blocks.dense_blocks:
            _write_array(fh, b)


def load_h2(path) -> H2Matrix:
    """Read a container written by :func:`save_h2`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not an H2 container (magic {magic!r})")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != VERSION:
            raise ValueError(f"unsupported container version {version}")
        hlen = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        header = json.loads(fh.read(hlen).decode())
        n = header["n"]
        n_nodes = header["n_nodes"]
        positions = _read_array(fh, (n, 3))
        indices = _read_array(fh)
        charges = _read_array(fh)
        particles = ParticleSet(positions, indices, charges)
        order = _read_array(fh)
        keys21 = _read_array(fh)
        tree = Octree(
            particles=particles,
            order=order,
            keys21=keys21,
            leaf_capacity=header["leaf_capacity"],
            keys=_read_array(fh),
            levels=_read_array(fh),
            starts=_read_array(fh),
            counts=_read_array(fh),
            parents=_read_array(fh),
            child_start=_read_array(fh),
            child_count=_read_array(fh),
            is_leaf=_read_array(fh),
            level_ptr=_read_array(fh),
            balanced=header["balanced"],
        )
        bases = []
        for side, payload in (("row", header["row_basis"]), ("col", header["col_basis"])):
            ranks = _read_array(fh)
            tails = _read_array(fh)
            basis = BasisTree(side=side, ranks=ranks, tails=tails)
            for entry in payload:
                kind, node = entry[0], int(entry[1])
                if kind == "leaf":
                    basis.leaf_bases[node] = _read_array(fh, tuple(entry[2]))
                else:
                    basis.transfers[node] = {
                        int(k): _read_array(fh, (r, c)) for k, r, c in entry[2]
                    }
            bases.append(basis)
        lr_row = _read_array(fh)
        lr_col = _read_array(fh)
        lr_s = [_read_array(fh, tuple(s)) for s in header["lr_shapes"]]
        dense_row = _read_array(fh)
        dense_col = _read_array(fh)
        dense_blocks = [_read_array(fh, tuple(s)) for s in header["dense_shapes"]]
    blocks = BlockTree(
        lr_row=lr_row,
        lr_col=lr_col,
        dense_row=dense_row,
        dense_col=dense_col,
        lr_s=lr_s,
        dense_blocks=dense_blocks,
    )
    kspec = KernelSpec(
        kind=header["kernel"]["kind"],
        regularization=header["kernel"]["regularization"],
        sigma=header["kernel"]["sigma"],
    )
    return H2Matrix(
        octree=tree,
        kernel=kspec,
        eps=header["eps"],
        eta=header["eta"],
        max_rank=header["max_rank"],
        row_basis=bases[0],
        col_basis=bases[1],
        blocks=blocks,
    )
