"""Adaptive linear octrees over particle sets, with 2:1 balance refinement.

Nodes are stored as flat arrays sorted by (level, key).  Leaves carry
contiguous ranges into the Morton-sorted particle array; empty cells are
never stored, so neighbor queries resolve against existing leaves only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PrecisionLimitError
from .geometry import DistributionSpec, ParticleSet, generate
from .morton import MAX_LEVEL, MortonKey, decode_cells, encode_cells, points_to_keys

DEFAULT_LEAF_CAPACITY = 16

_U = np.uint64

# The 26 unit offsets of the face/edge/corner neighborhood.
_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ],
    dtype=np.int64,
)


def _ranges_concat(starts, counts):
    """Concatenate [s, s+c) ranges into one index vector without a loop."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    out = np.ones(total, dtype=np.int64)
    out[0] = starts[0]
    pos = np.cumsum(counts)[:-1]
    out[pos] = starts[1:] - (starts[:-1] + counts[:-1] - 1)
    return np.cumsum(out)


@dataclass
class Octree:
    """Linked adaptive octree in flat-array form.

    ``keys``/``levels``/``starts``/``counts`` describe every stored node,
    sorted by (level, key).  ``leaf_ids`` lists leaf node ids in spatial
    (Morton) order; ``leaf_start21``/``leaf_end21`` give each leaf's
    half-open range of level-21 key space.
    """

    particles: ParticleSet
    order: np.ndarray
    keys21: np.ndarray
    leaf_capacity: int
    keys: np.ndarray
    levels: np.ndarray
    starts: np.ndarray
    counts: np.ndarray
    parents: np.ndarray
    child_start: np.ndarray
    child_count: np.ndarray
    is_leaf: np.ndarray
    level_ptr: np.ndarray
    balanced: bool = False
    leaf_ids: np.ndarray = field(default=None)
    leaf_start21: np.ndarray = field(default=None)
    leaf_end21: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.leaf_ids is None:
            ids = np.flatnonzero(self.is_leaf).astype(np.int32)
            start21 = self.keys[ids] << (_U(3) * (_U(MAX_LEVEL) - self.levels[ids].astype(np.uint64)))
            order = np.argsort(start21, kind="stable")
            self.leaf_ids = ids[order]
            self.leaf_start21 = start21[order]
            size = _U(1) << (_U(3) * (_U(MAX_LEVEL) - self.levels[self.leaf_ids].astype(np.uint64)))
            self.leaf_end21 = self.leaf_start21 + size

    @property
    def n_particles(self) -> int:
        return len(self.particles)

    @property
    def n_nodes(self) -> int:
        return len(self.keys)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    @property
    def depth(self) -> int:
        return int(self.levels[self.leaf_ids].max())

    def node_key(self, node: int) -> MortonKey:
        return MortonKey(int(self.levels[node]), int(self.keys[node]))

    def children(self, node: int) -> np.ndarray:
        s, c = self.child_start[node], self.child_count[node]
        return np.arange(s, s + c, dtype=np.int64)

    def level_nodes(self, level: int) -> np.ndarray:
        return np.arange(self.level_ptr[level], self.level_ptr[level + 1], dtype=np.int64)

    def find_node(self, key: MortonKey) -> int:
        """Node id of ``key``; raises KeyError if the cell is not stored."""
        if key.level >= len(self.level_ptr) - 1:
            raise KeyError(f"no nodes at level {key.level}")
        lo, hi = self.level_ptr[key.level], self.level_ptr[key.level + 1]
        seg = self.keys[lo:hi]
        pos = np.searchsorted(seg, _U(key.bits))
        if pos == len(seg) or seg[pos] != _U(key.bits):
            raise KeyError(f"cell {key} is not stored in the tree")
        return int(lo + pos)

    def level_histogram(self):
        """Leaf count per level, as a {level: count} dict."""
        levels, counts = np.unique(self.levels[self.leaf_ids], return_counts=True)
        return {int(l): int(c) for l, c in zip(levels, counts)}

    def summary(self) -> dict:
        return {
            "n": self.n_particles,
            "nodes": self.n_nodes,
            "leaves": self.n_leaves,
            "depth": self.depth,
            "leaf_capacity": self.leaf_capacity,
            "balanced": self.balanced,
            "leaf_levels": self.level_histogram(),
        }


def _compute_leaves(k21, n, leaf_capacity):
    """Leaf cells (keys, levels, starts, counts) of the adaptive split."""
    leaf_keys, leaf_levels, leaf_starts, leaf_counts = [], [], [], []
    cur_keys = np.zeros(1, dtype=np.uint64)
    cur_starts = np.zeros(1, dtype=np.int64)
    cur_counts = np.array([n], dtype=np.int64)
    level = 0
    while len(cur_keys):
        split = cur_counts > leaf_capacity
        if level == MAX_LEVEL and split.any():
            warnings.warn(
                f"{int(split.sum())} leaf cell(s) at level {MAX_LEVEL} hold more than "
                f"{leaf_capacity} coincident particles; kept as oversized leaves",
                RuntimeWarning,
                stacklevel=3,
            )
            split[:] = False
        keep = ~split
        if keep.any():
            leaf_keys.append(cur_keys[keep])
            leaf_levels.append(np.full(int(keep.sum()), level, dtype=np.int8))
            leaf_starts.append(cur_starts[keep])
            leaf_counts.append(cur_counts[keep])
        if not split.any():
            break
        sp = np.flatnonzero(split)
        idx = _ranges_concat(cur_starts[sp], cur_counts[sp])
        shift = _U(3 * (MAX_LEVEL - (level + 1)))
        ck = k21[idx] >> shift
        parent_rep = np.repeat(np.arange(len(sp)), cur_counts[sp])
        boundary = np.empty(len(idx), dtype=bool)
        boundary[0] = True
        boundary[1:] = (ck[1:] != ck[:-1]) | (parent_rep[1:] != parent_rep[:-1])
        bpos = np.flatnonzero(boundary)
        cur_keys = ck[bpos]
        cur_starts = idx[bpos]
        cur_counts = np.diff(np.append(bpos, len(idx)))
        level += 1
    return (
        np.concatenate(leaf_keys),
        np.concatenate(leaf_levels),
        np.concatenate(leaf_starts),
        np.concatenate(leaf_counts).astype(np.int64),
    )


def _assemble(particles, order, k21, leaf_capacity, lkeys, llevels, lstarts, lcounts, balanced):
    """Build the full node-array tree from a disjoint leaf set."""
    depth = int(llevels.max())
    # Per-level node tables, deepest first; each entry (keys, starts, counts, is_leaf).
    by_level = {}
    carry = None  # parents produced by the level below
    for level in range(depth, -1, -1):
        sel = llevels == level
        keys = lkeys[sel]
        starts = lstarts[sel]
        counts = lcounts[sel]
        flags = np.ones(len(keys), dtype=bool)
        if carry is not None:
            ck, cs, cc = carry
            keys = np.concatenate([keys, ck])
            starts = np.concatenate([starts, cs])
            counts = np.concatenate([counts, cc])
            flags = np.concatenate([flags, np.zeros(len(ck), dtype=bool)])
        srt = np.argsort(keys, kind="stable")
        keys, starts, counts, flags = keys[srt], starts[srt], counts[srt], flags[srt]
        by_level[level] = (keys, starts, counts, flags)
        if level > 0:
            pk = keys >> _U(3)
            first = np.flatnonzero(np.r_[True, pk[1:] != pk[:-1]])
            agg = np.add.reduceat(counts, first)
            carry = (pk[first], starts[first], agg)
    # Flatten into (level, key)-sorted arrays.
    sizes = [len(by_level[l][0]) for l in range(depth + 1)]
    level_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    n_nodes = int(level_ptr[-1])
    keys = np.concatenate([by_level[l][0] for l in range(depth + 1)])
    starts = np.concatenate([by_level[l][1] for l in range(depth + 1)])
    counts = np.concatenate([by_level[l][2] for l in range(depth + 1)])
    is_leaf = np.concatenate([by_level[l][3] for l in range(depth + 1)])
    levels = np.concatenate(
        [np.full(sizes[l], l, dtype=np.int8) for l in range(depth + 1)]
    )
    parents = np.full(n_nodes, -1, dtype=np.int32)
    child_start = np.zeros(n_nodes, dtype=np.int32)
    child_count = np.zeros(n_nodes, dtype=np.int8)
    for level in range(depth):
        lo, hi = level_ptr[level], level_ptr[level + 1]
        clo, chi = level_ptr[level + 1], level_ptr[level + 2]
        if chi == clo:
            continue
        ck = keys[clo:chi] >> _U(3)
        pos = np.searchsorted(keys[lo:hi], ck)
        parents[clo:chi] = (lo + pos).astype(np.int32)
        first = np.flatnonzero(np.r_[True, ck[1:] != ck[:-1]])
        cnt = np.diff(np.append(first, chi - clo))
        child_start[lo + pos[first]] = (clo + first).astype(np.int32)
        child_count[lo + pos[first]] = cnt.astype(np.int8)
    return Octree(
        particles=particles,
        order=order,
        keys21=k21,
        leaf_capacity=leaf_capacity,
        keys=keys,
        levels=levels,
        starts=starts,
        counts=counts,
        parents=parents,
        child_start=child_start,
        child_count=child_count,
        is_leaf=is_leaf,
        level_ptr=level_ptr,
        balanced=balanced,
    )


def build_tree(particles: ParticleSet, leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> Octree:
    """Build the adaptive octree over ``particles``.

    Every leaf holds at most ``leaf_capacity`` particles unless it sits at
    the maximum level, where coincident particles can force an oversized
    leaf (reported with a warning).

    Parameters
    ----------
    particles : ParticleSet
    leaf_capacity : int

    Returns
    -------
    Octree
    """
    n = len(particles)
    if n < 1:
        raise ConfigurationError("cannot build a tree over an empty particle set")
    if leaf_capacity < 1:
        raise ConfigurationError(f"leaf_capacity must be >= 1, got {leaf_capacity}")
    keys = points_to_keys(particles.positions, MAX_LEVEL)
    order = np.argsort(keys, kind="stable")
    k21 = keys[order]
    sorted_particles = particles.take(order)
    lkeys, llevels, lstarts, lcounts = _compute_leaves(k21, n, leaf_capacity)
    return _assemble(
        sorted_particles, order, k21, leaf_capacity, lkeys, llevels, lstarts, lcounts, False
    )


def _leaf_anchor_coords(start21):
    return decode_cells(start21, MAX_LEVEL)


def _neighbor_cell_starts(coords21, levels, offset):
    """Start-of-range keys of same-level neighbor cells, with validity mask.

    coords21 are leaf anchor coordinates on the level-21 grid; the
    neighbor cell lies one own-cell-size step along ``offset``.
    """
    size = np.int64(1) << (MAX_LEVEL - levels.astype(np.int64))
    nc = coords21 + offset[None, :] * size[:, None]
    side = np.int64(1) << MAX_LEVEL
    valid = ((nc >= 0) & (nc < side)).all(axis=1)
    nc_valid = np.where(valid[:, None], nc, 0)
    targets = encode_cells(nc_valid.astype(np.uint64), MAX_LEVEL)
    return targets, valid


def _mark_for_balance(levels, start21, end21):
    """Flag leaves at least two levels coarser than an adjacent leaf."""
    coords21 = _leaf_anchor_coords(start21)
    lev = levels.astype(np.int64)
    mark = np.zeros(len(levels), dtype=bool)
    for offset in _OFFSETS:
        targets, valid = _neighbor_cell_starts(coords21, levels, offset)
        pos = np.searchsorted(start21, targets, side="right") - 1
        ok = valid & (pos >= 0)
        p = np.where(ok, pos, 0)
        covered = ok & (end21[p] > targets) & (levels[p].astype(np.int64) <= lev - 2)
        mark[p[covered]] = True
    return mark


def _split_marked(k21, lkeys, llevels, lstarts, lcounts, mark):
    """Replace marked leaves by their nonempty children."""
    keep = ~mark
    out_keys = [lkeys[keep]]
    out_levels = [llevels[keep]]
    out_starts = [lstarts[keep]]
    out_counts = [lcounts[keep]]
    for level in np.unique(llevels[mark]):
        if level >= MAX_LEVEL:
            raise PrecisionLimitError("2:1 refinement would exceed the maximum level")
        sel = mark & (llevels == level)
        idx = _ranges_concat(lstarts[sel], lcounts[sel])
        shift = _U(3 * (MAX_LEVEL - (int(level) + 1)))
        ck = k21[idx] >> shift
        parent_rep = np.repeat(np.arange(int(sel.sum())), lcounts[sel])
        boundary = np.empty(len(idx), dtype=bool)
        boundary[0] = True
        boundary[1:] = (ck[1:] != ck[:-1]) | (parent_rep[1:] != parent_rep[:-1])
        bpos = np.flatnonzero(boundary)
        out_keys.append(ck[bpos])
        out_levels.append(np.full(len(bpos), level + 1, dtype=np.int8))
        out_starts.append(idx[bpos])
        out_counts.append(np.diff(np.append(bpos, len(idx))).astype(np.int64))
    keys = np.concatenate(out_keys)
    levels = np.concatenate(out_levels)
    starts = np.concatenate(out_starts)
    counts = np.concatenate(out_counts)
    start21 = keys << (_U(3) * (_U(MAX_LEVEL) - levels.astype(np.uint64)))
    order = np.argsort(start21, kind="stable")
    return keys[order], levels[order], starts[order], counts[order]


def balance_2to1(tree: Octree) -> Octree:
    """Refine leaves until adjacent leaves differ by at most one level.

    Any leaf with a face-, edge- or corner-adjacent leaf two or more
    levels deeper is split; the ripple repeats until no such pair
    remains.  Only refinements happen, never coarsening.

    Returns a new tree; the input is left untouched.
    """
    ids = tree.leaf_ids
    lkeys = tree.keys[ids].copy()
    llevels = tree.levels[ids].copy()
    lstarts = tree.starts[ids].copy()
    lcounts = tree.counts[ids].copy()
    for _ in range(MAX_LEVEL * MAX_LEVEL):
        start21 = lkeys << (_U(3) * (_U(MAX_LEVEL) - llevels.astype(np.uint64)))
        end21 = start21 + (_U(1) << (_U(3) * (_U(MAX_LEVEL) - llevels.astype(np.uint64))))
        mark = _mark_for_balance(llevels, start21, end21)
        if not mark.any():
            break
        lkeys, llevels, lstarts, lcounts = _split_marked(
            tree.keys21, lkeys, llevels, lstarts, lcounts, mark
        )
    else:  # pragma: no cover - the ripple strictly deepens marked leaves
        raise RuntimeError("2:1 balancing did not reach a fixpoint")
    return _assemble(
        tree.particles,
        tree.order,
        tree.keys21,
        tree.leaf_capacity,
        lkeys,
        llevels,
        lstarts,
        lcounts,
        True,
    )


def leaf_adjacency_pairs(tree: Octree, query=None):
    """All ordered pairs (q, m) of leaf-table positions with touching boxes.

    ``query`` restricts the first element to the given leaf-table
    positions; by default every leaf is a query.  Box contact counts
    faces, edges and corners.
    """
    start21 = tree.leaf_start21
    end21 = tree.leaf_end21
    levels = tree.levels[tree.leaf_ids]
    n_leaves = len(start21)
    if query is None:
        query = np.arange(n_leaves, dtype=np.int64)
    else:
        query = np.unique(np.asarray(query, dtype=np.int64))
    coords21 = _leaf_anchor_coords(start21[query])
    qlev = levels[query].astype(np.int64)
    qsize = np.int64(1) << (MAX_LEVEL - qlev)
    pair_q, pair_m = [], []
    all_coords = None
    for offset in _OFFSETS:
        targets, valid = _neighbor_cell_starts(coords21, levels[query], offset)
        cell_end = targets + (_U(1) << (_U(3) * (_U(MAX_LEVEL) - levels[query].astype(np.uint64))))
        # Coarser-or-equal leaves covering the whole neighbor cell.
        pos = np.searchsorted(start21, targets, side="right") - 1
        ok = valid & (pos >= 0)
        p = np.where(ok, pos, 0)
        covered = ok & (end21[p] > targets) & (levels[p] <= levels[query])
        pair_q.append(query[covered])
        pair_m.append(p[covered])
        # Deeper leaves contained in the neighbor cell, filtered by contact.
        lo = np.searchsorted(start21, targets, side="left")
        hi = np.searchsorted(start21, cell_end, side="left")
        lo = np.where(valid, lo, 0)
        hi = np.where(valid, hi, 0)
        span = hi - lo
        if span.sum() == 0:
            continue
        src = np.flatnonzero(span > 0)
        cand = _ranges_concat(lo[src], span[src])
        qrep = np.repeat(query[src], span[src])
        if all_coords is None:
            all_coords = _leaf_anchor_coords(start21)
        clev = levels[cand].astype(np.int64)
        csize = np.int64(1) << (MAX_LEVEL - clev)
        qpos = np.searchsorted(query, qrep)  # query is sorted by construction
        qlo = coords21[qpos]
        qhi = qlo + qsize[qpos, None]
        clo = all_coords[cand]
        chi = clo + csize[:, None]
        touch = ((clo <= qhi) & (qlo <= chi)).all(axis=1)
        pair_q.append(qrep[touch])
        pair_m.append(cand[touch])
    q = np.concatenate(pair_q) if pair_q else np.empty(0, np.int64)
    m = np.concatenate(pair_m) if pair_m else np.empty(0, np.int64)
    keep = q != m
    q, m = q[keep], m[keep]
    packed = q * np.int64(n_leaves) + m
    packed = np.unique(packed)
    return packed // n_leaves, packed % n_leaves


def neighbor_counts(tree: Octree) -> np.ndarray:
    """Number of adjacent leaves for every leaf (leaf-table order)."""
    q, _ = leaf_adjacency_pairs(tree)
    return np.bincount(q, minlength=tree.n_leaves)


def neighbor_leaves(tree: Octree, leaf: MortonKey):
    """All leaves whose boxes share a face, edge or corner with ``leaf``.

    Raises KeyError when ``leaf`` does not name a leaf of the tree.
    """
    node = tree.find_node(leaf)
    if not tree.is_leaf[node]:
        raise KeyError(f"cell {leaf} is not a leaf")
    position = int(np.searchsorted(tree.leaf_start21, _U(leaf.bits) << (_U(3) * _U(MAX_LEVEL - leaf.level))))
    _, m = leaf_adjacency_pairs(tree, query=np.array([position], dtype=np.int64))
    ids = tree.leaf_ids[m]
    return [MortonKey(int(tree.levels[i]), int(tree.keys[i])) for i in ids]


def depth_stats(spec: DistributionSpec, n_values, leaf_capacity: int = DEFAULT_LEAF_CAPACITY):
    """Tree depth for each particle count in an ascending sweep.

    Returns a list of (n, depth) tuples using ``spec.kind`` and
    ``spec.seed`` for every entry.
    """
    n_values = list(n_values)
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ConfigurationError("n_values must be strictly ascending")
    rows = []
    for n in n_values:
        pts = generate(DistributionSpec(spec.kind, int(n), spec.seed))
        rows.append((int(n), build_tree(pts, leaf_capacity).depth))
    return rows
