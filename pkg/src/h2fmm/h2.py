"""H2 compression of kernel matrices over an octree, and the O(N) matvec.

The representation follows the usual nested-basis layout: explicit row /
column bases at octree leaves, interlevel transfer matrices at interior
nodes, small coupling matrices on admissible (low-rank) blocks of the
block tree, and raw dense blocks for inadmissible leaf-level pairs.

Bases are built bottom-up from truncated SVDs of each node's far-field
block row, with every admissible sub-block scaled to unit Frobenius norm
first so the truncation tolerance applies to each block relative to its
own size.  Interior nodes factor their children's projected rows, which
yields the transfer matrices directly and makes the nesting identity
testable per node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, kernel_block
from .morton import MAX_LEVEL, MortonKey, decode_cells
from .tree import Octree, _ranges_concat

DEFAULT_ETA = 1.75  # admits same-level cells separated by >= one cell width

_CHUNK_ELEMENTS = 2**23  # cap on transient kernel-slice size, in reals


def _node_boxes(tree: Octree):
    """Integer anchor coordinates and edge lengths on the level-21 grid."""
    shift = (MAX_LEVEL - tree.levels.astype(np.int64)).astype(np.uint64) * np.uint64(3)
    start21 = tree.keys << shift
    anchors = decode_cells(start21, MAX_LEVEL)
    sizes = np.int64(1) << (MAX_LEVEL - tree.levels.astype(np.int64))
    return anchors, sizes


def admissible(row_cell: MortonKey, col_cell: MortonKey, eta: float = DEFAULT_ETA) -> bool:
    """Geometric admissibility: max(diam) <= eta * dist(boxes).

    Cell boxes are closed; touching cells have distance zero and are
    never admissible.  With the default eta, same-level cells separated
    by at least one full cell width (two cell widths center to center)
    are admissible.
    """
    lo_a = np.asarray(row_cell.coords(), dtype=np.int64) << (MAX_LEVEL - row_cell.level)
    lo_b = np.asarray(col_cell.coords(), dtype=np.int64) << (MAX_LEVEL - col_cell.level)
    sa = np.int64(1) << (MAX_LEVEL - row_cell.level)
    sb = np.int64(1) << (MAX_LEVEL - col_cell.level)
    gap = np.maximum(0, np.maximum(lo_a - (lo_b + sb), lo_b - (lo_a + sa)))
    dist2 = float((gap * gap).sum())
    diam2 = 3.0 * float(max(sa, sb)) ** 2
    return diam2 <= eta * eta * dist2


@dataclass
class BlockTree:
    """Partition of the index square into low-rank and dense leaves."""

    lr_row: np.ndarray  # node ids, deterministic (level, row key, col key) order
    lr_col: np.ndarray
    dense_row: np.ndarray
    dense_col: np.ndarray
    lr_s: list = field(default_factory=list)
    dense_blocks: list = field(default_factory=list)

    @property
    def n_lowrank(self) -> int:
        return len(self.lr_row)

    @property
    def n_dense(self) -> int:
        return len(self.dense_row)

    def lowrank_per_row_node(self) -> dict:
        nodes, counts = np.unique(self.lr_row, return_counts=True)
        return {int(n): int(c) for n, c in zip(nodes, counts)}

    def max_blocks_per_row(self) -> int:
        if not len(self.lr_row):
            return 0
        return int(np.unique(self.lr_row, return_counts=True)[1].max())


def build_block_tree(tree: Octree, eta: float = DEFAULT_ETA) -> BlockTree:
    """Subdivide (row, col) node pairs until admissible or both leaves.

    Admissible pairs become low-rank leaves; inadmissible pairs of two
    octree leaves become dense leaves; anything else splits every
    non-leaf side.
    """
    anchors, sizes = _node_boxes(tree)
    eta2 = eta * eta
    cur_i = np.zeros(1, dtype=np.int64)
    cur_j = np.zeros(1, dtype=np.int64)
    lr_i, lr_j, dn_i, dn_j = [], [], [], []
    while len(cur_i):
        lo_a = anchors[cur_i]
        lo_b = anchors[cur_j]
        sa = sizes[cur_i]
        sb = sizes[cur_j]
        gap = np.maximum(0, np.maximum(lo_a - (lo_b + sb[:, None]), lo_b - (lo_a + sa[:, None])))
        dist2 = (gap * gap).sum(axis=1).astype(np.float64)
        diam2 = 3.0 * np.maximum(sa, sb).astype(np.float64) ** 2
        adm = diam2 <= eta2 * dist2
        leaf_pair = tree.is_leaf[cur_i] & tree.is_leaf[cur_j]
        lr_i.append(cur_i[adm])
        lr_j.append(cur_j[adm])
        dense = ~adm & leaf_pair
        dn_i.append(cur_i[dense])
        dn_j.append(cur_j[dense])
        split = ~adm & ~leaf_pair
        si, sj = cur_i[split], cur_j[split]
        if not len(si):
            break
        ni = np.where(tree.is_leaf[si], 1, tree.child_count[si]).astype(np.int64)
        nj = np.where(tree.is_leaf[sj], 1, tree.child_count[sj]).astype(np.int64)
        rep = ni * nj
        total = int(rep.sum())
        parent = np.repeat(np.arange(len(si)), rep)
        offsets = np.concatenate([[0], np.cumsum(rep)[:-1]])
        t = np.arange(total) - offsets[parent]
        a = t // nj[parent]
        b = t % nj[parent]
        cur_i = np.where(
            tree.is_leaf[si[parent]], si[parent], tree.child_start[si[parent]] + a
        )
        cur_j = np.where(
            tree.is_leaf[sj[parent]], sj[parent], tree.child_start[sj[parent]] + b
        )
    lr_i = np.concatenate(lr_i) if lr_i else np.empty(0, np.int64)
    lr_j = np.concatenate(lr_j) if lr_j else np.empty(0, np.int64)
    dn_i = np.concatenate(dn_i) if dn_i else np.empty(0, np.int64)
    dn_j = np.concatenate(dn_j) if dn_j else np.empty(0, np.int64)
    # Node ids are (level, key)-sorted, so this order is deterministic.
    lr_order = np.lexsort((lr_j, lr_i))
    dn_order = np.lexsort((dn_j, dn_i))
    return BlockTree(
        lr_row=lr_i[lr_order],
        lr_col=lr_j[lr_order],
        dense_row=dn_i[dn_order],
        dense_col=dn_j[dn_order],
    )


@dataclass
class BasisTree:
    """Nested row- or column-side bases over the octree nodes."""

    side: str  # "row" (U/E) or "col" (V/F)
    ranks: np.ndarray
    tails: np.ndarray  # achieved relative truncation tail per node
    leaf_bases: dict = field(default_factory=dict)
    transfers: dict = field(default_factory=dict)  # node -> {child: (k_c, k)}
    _explicit: dict = field(default_factory=dict, repr=False)

    def explicit_basis(self, tree: Octree, node: int) -> np.ndarray:
        """Assemble the dense (n_node, k) basis by expanding transfers."""
        node = int(node)
        if node in self._explicit:
            return self._explicit[node]
        if node in self.leaf_bases:
            out = self.leaf_bases[node]
        else:
            rows = []
            for child in tree.children(node):
                child = int(child)
                uc = self.explicit_basis(tree, child)
                rows.append(uc @ self.transfers[node][child])
            out = np.vstack(rows) if rows else np.zeros((0, self.ranks[node]))
        self._explicit[node] = out
        return out


@dataclass
class H2Matrix:
    """Compressed kernel matrix with nested bases.

    Vectors passed to :func:`matvec` use the original particle order;
    the permutation into Morton order is internal.
    """

    octree: Octree
    kernel: KernelSpec
    eps: float
    eta: float
    max_rank: int | None
    row_basis: BasisTree
    col_basis: BasisTree
    blocks: BlockTree

    @property
    def n(self) -> int:
        return self.octree.n_particles

    def flagged_nodes(self) -> list:
        """Nodes whose rank cap left a truncation tail above eps."""
        out = []
        for basis in (self.row_basis, self.col_basis):
            bad = np.flatnonzero(basis.tails > self.eps)
            out.extend((basis.side, int(b), float(basis.tails[b])) for b in bad)
        return out

    def summary(self) -> dict:
        ranks = self.row_basis.ranks
        active = ranks[ranks > 0]
        return {
            "n": self.n,
            "kernel": self.kernel.kind,
            "eps": self.eps,
            "eta": self.eta,
            "max_rank": self.max_rank,
            "lowrank_blocks": self.blocks.n_lowrank,
            "dense_blocks": self.blocks.n_dense,
            "max_rank_achieved": int(ranks.max()) if len(ranks) else 0,
            "mean_rank": float(active.mean()) if len(active) else 0.0,
            "max_blocks_per_row_node": self.blocks.max_blocks_per_row(),
            "flagged_nodes": len(self.flagged_nodes()),
            "max_tail": float(
                max(self.row_basis.tails.max(), self.col_basis.tails.max())
            ),
            "storage": storage_report(self),
            "flops": flop_report(self),
        }


def _row_groups(rows):
    """(lo, hi) spans of equal consecutive entries in a sorted id array."""
    if not len(rows):
        return
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    bounds = np.append(starts, len(rows))
    for g in range(len(starts)):
        yield int(bounds[g]), int(bounds[g + 1])


def _far_partners(tree: Octree, blocks: BlockTree):
    """Per node: low-rank partner lists of the node itself and ancestors.

    The union of the partner column ranges is exactly the node's
    far-field column set, partitioned by block.
    """
    own = [[] for _ in range(tree.n_nodes)]
    for i, j in zip(blocks.lr_row, blocks.lr_col):
        own[int(i)].append(int(j))
    full = [None] * tree.n_nodes
    for node in range(tree.n_nodes):
        parent = tree.parents[node]
        inherited = full[parent] if parent >= 0 else []
        full[node] = inherited + own[node]
    return full


def _kernel_rows(kernel, row_points, col_points):
    """kernel_block with the row dimension chunked to bound transients."""
    n, m = len(row_points), len(col_points)
    if n * m <= _CHUNK_ELEMENTS:
        return kernel_block(kernel, row_points, col_points)
    out = np.empty((n, m))
    step = max(1, _CHUNK_ELEMENTS // max(m, 1))
    for s in range(0, n, step):
        out[s : s + step] = kernel_block(kernel, row_points[s : s + step], col_points)
    return out


def _projected_rows(kernel, u, row_points, col_points):
    """u.T @ kernel(rows, cols) with the column dimension chunked."""
    m = len(col_points)
    out = np.empty((u.shape[1], m))
    step = max(1, _CHUNK_ELEMENTS // max(len(row_points), 1))
    for s in range(0, m, step):
        out[:, s : s + step] = u.T @ kernel_block(
            kernel, row_points, col_points[s : s + step]
        )
    return out


def _left_singular(R):
    """Left singular vectors and values of R without forming V.

    For wide R the QR factorization of R^T reduces the SVD to a small
    square problem with the same left factors and values.
    """
    n, m = R.shape
    if m <= n:
        u, s, _ = np.linalg.svd(R, full_matrices=False)
        return u, s
    t = np.linalg.qr(R.T, mode="r")  # R = t.T @ Q.T
    u, s, _ = np.linalg.svd(t.T, full_matrices=False)
    return u, s


def _truncate(scaled, eps, max_rank, bounds):
    """Basis of the scaled far row; rank from the per-block tail criterion.

    The rank is the smallest r whose projection leaves every unit-norm
    sub-block (delimited by ``bounds``) with relative Frobenius residual
    at most eps, which is exactly the per-block compression contract.
    """
    u, _ = _left_singular(scaled)
    w2 = (u.T @ scaled) ** 2  # (k_full, m) spectral energy per column
    blk = np.add.reduceat(w2, bounds[:-1], axis=1)  # (k_full, n_blocks)
    total = blk.sum(axis=0)
    total[total == 0.0] = 1.0
    resid = total[None, :] - np.cumsum(blk, axis=0)
    np.maximum(resid, 0.0, out=resid)
    ok = (resid <= eps * eps * total[None, :]).all(axis=1)
    r = int(np.argmax(ok)) + 1 if ok.any() else u.shape[1]
    if max_rank is not None:
        r = min(r, max_rank)
    tail = math.sqrt(float((resid[r - 1] / total).max())) if r >= 1 else 1.0
    return u[:, :r], r, tail


def _build_row_basis(tree: Octree, kernel, eps, max_rank, partners, transpose):
    """Bottom-up nested basis for the row side (or column side if transposed)."""
    n_nodes = tree.n_nodes
    ranks = np.zeros(n_nodes, dtype=np.int32)
    tails = np.zeros(n_nodes, dtype=np.float64)
    basis = BasisTree(side="col" if transpose else "row", ranks=ranks, tails=tails)
    pos = tree.particles.positions
    depth = len(tree.level_ptr) - 2
    for level in range(depth, -1, -1):
        for node in map(int, tree.level_nodes(level)):
            plist = partners[node]
            n_i = int(tree.counts[node])
            if not plist:
                if tree.is_leaf[node]:
                    basis.leaf_bases[node] = np.zeros((n_i, 0))
                else:
                    basis.transfers[node] = {
                        int(c): np.zeros((ranks[int(c)], 0)) for c in tree.children(node)
                    }
                continue
            col_idx = _ranges_concat(tree.starts[plist], tree.counts[plist])
            widths = tree.counts[plist]
            bounds = np.concatenate([[0], np.cumsum(widths)])
            far_pts = pos[col_idx]
            if tree.is_leaf[node]:
                s0 = int(tree.starts[node])
                R = _kernel_rows(kernel, pos[s0 : s0 + n_i], far_pts)
            else:
                rows = []
                for child in map(int, tree.children(node)):
                    uc = basis.explicit_basis(tree, child)
                    cs = int(tree.starts[child])
                    rows.append(
                        _projected_rows(
                            kernel, uc, pos[cs : cs + int(tree.counts[child])], far_pts
                        )
                    )
                R = np.vstack(rows)
            col2 = (R * R).sum(axis=0)
            norms = np.sqrt(np.add.reduceat(col2, bounds[:-1]))
            norms[norms == 0.0] = 1.0
            R *= np.repeat(1.0 / norms, widths)[None, :]
            u, r, tail = _truncate(R, eps, max_rank, bounds)
            ranks[node] = r
            tails[node] = tail
            if tree.is_leaf[node]:
                basis.leaf_bases[node] = u
            else:
                transfers = {}
                row0 = 0
                for child in map(int, tree.children(node)):
                    kc = ranks[child]
                    transfers[child] = u[row0 : row0 + kc]
                    row0 += kc
                basis.transfers[node] = transfers
    return basis


def compress(
    tree: Octree,
    kernel: KernelSpec,
    eps: float = 1e-6,
    max_rank: int | None = None,
    eta: float = DEFAULT_ETA,
) -> H2Matrix:
    """Build the H2 representation of the kernel matrix over ``tree``.

    Parameters
    ----------
    tree : Octree
        Built (and preferably balanced) octree; its Morton-sorted
        particles define the matrix indexing.
    kernel : KernelSpec
    eps : float
        Relative Frobenius tolerance per admissible block, in (0, 1).
    max_rank : int or None
        Cap on per-node rank; nodes that hit the cap with a residual
        tail above eps are reported in the build summary.
    eta : float
        Admissibility parameter.

    Returns
    -------
    H2Matrix
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if max_rank is not None and max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    blocks = build_block_tree(tree, eta)
    row_partners = _far_partners(tree, blocks)
    row_basis = _build_row_basis(tree, kernel, eps, max_rank, row_partners, transpose=False)
    # All supported kernels are symmetric, so the column basis solves the
    # transposed problem with identical data; it is built as a clone.
    col_basis = BasisTree(
        side="col",
        ranks=row_basis.ranks.copy(),
        tails=row_basis.tails.copy(),
        leaf_bases=dict(row_basis.leaf_bases),
        transfers={n: dict(t) for n, t in row_basis.transfers.items()},
    )
    pos = tree.particles.positions
    # Coupling and dense blocks are computed per row-node group so one
    # kernel slice serves every block in the group.
    for lo, hi in _row_groups(blocks.lr_row):
        i = int(blocks.lr_row[lo])
        js = blocks.lr_col[lo:hi]
        ui = row_basis.explicit_basis(tree, i)
        si, ci = int(tree.starts[i]), int(tree.counts[i])
        col_idx = _ranges_concat(tree.starts[js], tree.counts[js])
        w = _projected_rows(kernel, ui, pos[si : si + ci], pos[col_idx])
        seg = np.concatenate([[0], np.cumsum(tree.counts[js])])
        for b, j in enumerate(map(int, js)):
            vj = col_basis.explicit_basis(tree, j)
            blocks.lr_s.append(w[:, seg[b] : seg[b + 1]] @ vj)
    for lo, hi in _row_groups(blocks.dense_row):
        i = int(blocks.dense_row[lo])
        js = blocks.dense_col[lo:hi]
        si, ci = int(tree.starts[i]), int(tree.counts[i])
        col_idx = _ranges_concat(tree.starts[js], tree.counts[js])
        raw = _kernel_rows(kernel, pos[si : si + ci], pos[col_idx])
        seg = np.concatenate([[0], np.cumsum(tree.counts[js])])
        for b in range(len(js)):
            blocks.dense_blocks.append(raw[:, seg[b] : seg[b + 1]].copy())
    return H2Matrix(
        octree=tree,
        kernel=kernel,
        eps=eps,
        eta=eta,
        max_rank=max_rank,
        row_basis=row_basis,
        col_basis=col_basis,
        blocks=blocks,
    )


def _to_sorted(h2: H2Matrix, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (h2.n,):
        raise ValueError(f"vector length {x.shape} does not match matrix size {h2.n}")
    return x[h2.octree.order]


def upsweep(h2: H2Matrix, x) -> list:
    """Per-column-node reduced vectors x_hat.

    Leaves compute V^T x directly; interior nodes accumulate their
    children's reduced vectors through the transfer matrices, bottom-up.
    ``x`` is in original particle order.
    """
    xs = _to_sorted(h2, x)
    tree = h2.octree
    basis = h2.col_basis
    xhat = [None] * tree.n_nodes
    depth = len(tree.level_ptr) - 2
    for level in range(depth, -1, -1):
        for node in map(int, tree.level_nodes(level)):
            if tree.is_leaf[node]:
                s, c = int(tree.starts[node]), int(tree.counts[node])
                xhat[node] = basis.leaf_bases[node].T @ xs[s : s + c]
            else:
                acc = np.zeros(int(basis.ranks[node]))
                for child in map(int, tree.children(node)):
                    acc += basis.transfers[node][child].T @ xhat[child]
                xhat[node] = acc
    return xhat


def coupling(h2: H2Matrix, xhat) -> list:
    """Per-row-node accumulations y_hat_i = sum_j S_ij x_hat_j.

    Blocks are applied in the block tree's deterministic order, so the
    accumulation order is reproducible.
    """
    tree = h2.octree
    yhat = [np.zeros(int(h2.row_basis.ranks[node])) for node in range(tree.n_nodes)]
    for i, j, s in zip(h2.blocks.lr_row, h2.blocks.lr_col, h2.blocks.lr_s):
        yhat[int(i)] += s @ xhat[int(j)]
    return yhat


def downsweep(h2: H2Matrix, yhat) -> np.ndarray:
    """Expand row-node accumulators into the low-rank output contribution.

    Parent contributions ripple into children through the transfer
    matrices, top-down, and leaves emit U times their accumulator.
    Returns a vector in original particle order.
    """
    tree = h2.octree
    basis = h2.row_basis
    yhat = [np.array(v, dtype=np.float64, copy=True) for v in yhat]
    ys = np.zeros(h2.n)
    depth = len(tree.level_ptr) - 2
    for level in range(depth + 1):
        for node in map(int, tree.level_nodes(level)):
            if tree.is_leaf[node]:
                s, c = int(tree.starts[node]), int(tree.counts[node])
                ys[s : s + c] = basis.leaf_bases[node] @ yhat[node]
            else:
                for child in map(int, tree.children(node)):
                    yhat[child] = yhat[child] + basis.transfers[node][child] @ yhat[node]
    out = np.zeros(h2.n)
    out[h2.octree.order] = ys
    return out


def dense_apply(h2: H2Matrix, x) -> np.ndarray:
    """Contribution of the dense (inadmissible leaf) blocks."""
    xs = _to_sorted(h2, x)
    tree = h2.octree
    ys = np.zeros(h2.n)
    for i, j, blk in zip(h2.blocks.dense_row, h2.blocks.dense_col, h2.blocks.dense_blocks):
        si, ci = int(tree.starts[i]), int(tree.counts[i])
        sj, cj = int(tree.starts[j]), int(tree.counts[j])
        ys[si : si + ci] += blk @ xs[sj : sj + cj]
    out = np.zeros(h2.n)
    out[h2.octree.order] = ys
    return out


def matvec(h2: H2Matrix, x) -> np.ndarray:
    """y = A x through the dense, upsweep, coupling and downsweep phases."""
    return dense_apply(h2, x) + downsweep(h2, coupling(h2, upsweep(h2, x)))


def hat_vector(h2: H2Matrix, hat) -> np.ndarray:
    """Concatenate per-node reduced vectors in (level, Morton key) order."""
    return np.concatenate([np.asarray(hat[n]) for n in range(h2.octree.n_nodes)])


def storage_report(h2: H2Matrix) -> dict:
    """Stored reals per category, returned in bytes (8-byte words)."""
    leaf = sum(b.size for b in h2.row_basis.leaf_bases.values())
    leaf += sum(b.size for b in h2.col_basis.leaf_bases.values())
    transfer = sum(
        t.size for node in h2.row_basis.transfers.values() for t in node.values()
    )
    transfer += sum(
        t.size for node in h2.col_basis.transfers.values() for t in node.values()
    )
    coupling_ = sum(s.size for s in h2.blocks.lr_s)
    dense = sum(b.size for b in h2.blocks.dense_blocks)
    out = {
        "leaf_bases": 8 * leaf,
        "transfers": 8 * transfer,
        "coupling": 8 * coupling_,
        "dense": 8 * dense,
    }
    out["total"] = sum(out.values())
    return out


def flop_report(h2: H2Matrix) -> dict:
    """Multiply-add counts of one matvec, by phase."""
    tree = h2.octree
    up = sum(b.size for b in h2.col_basis.leaf_bases.values())
    up += sum(t.size for node in h2.col_basis.transfers.values() for t in node.values())
    down = sum(b.size for b in h2.row_basis.leaf_bases.values())
    down += sum(t.size for node in h2.row_basis.transfers.values() for t in node.values())
    coupling_ = sum(s.size for s in h2.blocks.lr_s)
    dense = sum(b.size for b in h2.blocks.dense_blocks)
    out = {
        "dense": dense,
        "upsweep": up,
        "coupling": coupling_,
        "downsweep": down,
    }
    out["total"] = sum(out.values())
    return out
