"""Virtual-process communication counting for hierarchical N-body phases.

Communication is counted, never performed.  Two engines exist:

* a uniform engine evaluating closed-form halo counts on a full octree
  split over P = 8**g processes ("periodic" pretends every process is
  interior; "truncated" clips partner sets and halos at the domain
  boundary), and
* a general engine that enumerates actual halo cells on an adaptive
  tree with a Morton-order partition, counting each needed remote cell
  once (local-essential-tree accounting).

Counts are in cell units: one cell is one multipole/basis payload.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PartitionError
from .geometry import DistributionSpec, generate
from .morton import decode_cells, encode_cells
from .tree import Octree, _ranges_concat, balance_2to1, build_tree, leaf_adjacency_pairs

PHASES = ("global-m2m", "global-m2l", "local-m2l", "local-p2p")
MODES = ("periodic", "truncated")

_U = np.uint64


# ---------------------------------------------------------------------------
# Partition and global/local split


@dataclass
class Partition:
    """Assignment of leaves to P processes by contiguous Morton ranges."""

    P: int
    leaf_process: np.ndarray  # per leaf-table position
    proc_leaf_ptr: np.ndarray  # (P+1,) leaf-table boundaries
    proc_particle_counts: np.ndarray

    def process_of_leaf(self, leaf_pos: int) -> int:
        return int(self.leaf_process[leaf_pos])


def partition_sfc(tree: Octree, P: int) -> Partition:
    """Split the Morton-ordered leaves into P contiguous ranges.

    Cut points are chosen greedily so cumulative particle counts track
    j*N/P; every process receives at least one leaf.
    """
    if P < 1:
        raise ConfigurationError(f"process count must be >= 1, got {P}")
    n_leaves = tree.n_leaves
    if P > n_leaves:
        raise PartitionError(f"cannot split {n_leaves} leaves over {P} processes")
    counts = tree.counts[tree.leaf_ids].astype(np.int64)
    cum = np.cumsum(counts)
    n = tree.n_particles
    targets = np.arange(1, P) * (n / P)
    raw = np.searchsorted(cum, targets, side="left") + 1
    cuts = np.empty(P - 1, dtype=np.int64)
    prev = 0
    for j in range(P - 1):
        c = max(int(raw[j]), prev + 1)  # at least one leaf per process
        c = min(c, n_leaves - (P - 1 - j))  # leave room for the rest
        cuts[j] = prev = c
    ptr = np.concatenate([[0], cuts, [n_leaves]]).astype(np.int64)
    leaf_process = np.repeat(np.arange(P, dtype=np.int32), np.diff(ptr))
    pcounts = np.add.reduceat(counts, ptr[:-1]) if n_leaves else np.zeros(P, np.int64)
    return Partition(P=P, leaf_process=leaf_process, proc_leaf_ptr=ptr, proc_particle_counts=pcounts)


TAG_LOCAL = 0
TAG_GLOBAL = 1
TAG_LOCAL_ROOT = 2


@dataclass
class GlobalLocalSplit:
    """Per-node ownership tags separating the global and local trees.

    A node is global when its leaves span more than one process; a local
    root is a maximal single-owner node (its parent is global, or it is
    the root).  Everything below a local root is local.  A process whose
    Morton range is not a single subtree has several local roots.

    ``L_global`` is the level by which every process owns at least one
    private subtree (the depth of the process-grouping hierarchy); the
    two-process chains that a Morton cut drags below that level are
    still tagged global and still counted by the phase simulators, whose
    sweep depth is ``sim_depth``.
    """

    tree: Octree
    partition: Partition
    tags: np.ndarray
    owner_lo: np.ndarray
    owner_hi: np.ndarray
    L_global: int
    sim_depth: int
    local_roots: list  # per process, node ids in Morton order

    @property
    def global_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.tags == TAG_GLOBAL)

    def local_root_of(self, process: int) -> int:
        roots = self.local_roots[process]
        if len(roots) != 1:
            raise ValueError(
                f"process {process} has {len(roots)} local roots; no unique root"
            )
        return int(roots[0])


def split_global_local(tree: Octree, partition: Partition) -> GlobalLocalSplit:
    """Tag every node as global, local root, or local."""
    n_nodes = tree.n_nodes
    leaf_pos = np.full(n_nodes, -1, dtype=np.int64)
    leaf_pos[tree.leaf_ids] = np.arange(tree.n_leaves)
    lo = np.full(n_nodes, np.iinfo(np.int64).max, dtype=np.int64)
    hi = np.full(n_nodes, -1, dtype=np.int64)
    lo[tree.leaf_ids] = hi[tree.leaf_ids] = leaf_pos[tree.leaf_ids]
    depth = len(tree.level_ptr) - 2
    for level in range(depth, 0, -1):
        ids = tree.level_nodes(level)
        p = tree.parents[ids]
        np.minimum.at(lo, p, lo[ids])
        np.maximum.at(hi, p, hi[ids])
    owner_lo = partition.leaf_process[lo].astype(np.int32)
    owner_hi = partition.leaf_process[hi].astype(np.int32)
    multi = owner_lo != owner_hi
    tags = np.zeros(n_nodes, dtype=np.int8)
    tags[multi] = TAG_GLOBAL
    single = ~multi
    parent_multi = np.zeros(n_nodes, dtype=bool)
    has_parent = tree.parents >= 0
    parent_multi[has_parent] = multi[tree.parents[has_parent]]
    roots_mask = single & (parent_multi | ~has_parent)
    tags[roots_mask] = TAG_LOCAL_ROOT
    sim_depth = int(tree.levels[multi].max()) + 1 if multi.any() else 0
    local_roots = [[] for _ in range(partition.P)]
    for node in np.flatnonzero(roots_mask):
        local_roots[owner_lo[node]].append(int(node))
    if multi.any():
        L_global = max(
            min(int(tree.levels[r]) for r in roots) for roots in local_roots if roots
        )
    else:
        L_global = 0
    return GlobalLocalSplit(
        tree=tree,
        partition=partition,
        tags=tags,
        owner_lo=owner_lo,
        owner_hi=owner_hi,
        L_global=L_global,
        sim_depth=sim_depth,
        local_roots=local_roots,
    )


# ---------------------------------------------------------------------------
# Phase results and reports


@dataclass
class PhaseResult:
    """Per-process totals for one phase, with per-level maxima."""

    phase: str
    partners: np.ndarray  # per process, summed over levels
    cells_sent: np.ndarray
    cells_recv: np.ndarray
    per_level: list = field(default_factory=list)  # (level, partners_max, recv_max)

    @property
    def max_recv(self) -> int:
        return int(self.cells_recv.max()) if len(self.cells_recv) else 0

    @property
    def total_recv(self) -> int:
        return int(self.cells_recv.sum())

    @property
    def total_sent(self) -> int:
        return int(self.cells_sent.sum())


@dataclass
class CommReport:
    """All phase counts of one simulated run plus its metadata."""

    distribution: str
    n: int
    P: int
    n_per_p: int
    mode: str
    model: str
    seed: int
    phases: dict

    def phase(self, name: str) -> PhaseResult:
        return self.phases[name]

    def check_conservation(self) -> None:
        for ph in self.phases.values():
            if ph.total_sent != ph.total_recv:
                raise AssertionError(
                    f"phase {ph.phase}: sent {ph.total_sent} != recv {ph.total_recv}"
                )

    def global_volume_max(self) -> int:
        out = np.zeros(self.P, dtype=np.int64)
        for name in ("global-m2m", "global-m2l"):
            if name in self.phases:
                out += self.phases[name].cells_recv
        return int(out.max()) if len(out) else 0

    def rows(self):
        names = [n for n in PHASES if n in self.phases]
        names += [n for n in self.phases if n not in PHASES]
        for name in names:
            ph = self.phases[name]
            for p in range(self.P):
                yield (
                    name,
                    self.distribution,
                    self.n,
                    self.P,
                    self.mode,
                    p,
                    int(ph.partners[p]),
                    int(ph.cells_sent[p]),
                    int(ph.cells_recv[p]),
                )


CSV_HEADER = "phase,distribution,N,P,mode,process,partners,cells_sent,cells_recv"


def write_reports_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for rep in reports:
            for row in rep.rows():
                fh.write(",".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Uniform (formula) engine


def _log8(P: int) -> int:
    g = round(math.log(P, 8))
    if 8**g != P:
        raise ConfigurationError(f"uniform counting requires P to be a power of 8, got {P}")
    return g


def uniform_local_depth(n_per_p: float, leaf_capacity: int = 1) -> int:
    """Local-tree depth log8(n_per_p / leaf_capacity), rounded up."""
    if n_per_p <= leaf_capacity:
        return 0
    return int(math.ceil(round(math.log(n_per_p / leaf_capacity, 8), 12)))


_DIRS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) != (0, 0, 0)
    ],
    dtype=np.int64,
)


def _halo_cells(i: int, width: int, dir_mask) -> np.ndarray:
    """Cells received over each of the 26 directions for a 2^i-side grid.

    A direction with d nonzero components contributes width^d times
    (2^i)^(3-d) cells; ``dir_mask`` selects the directions whose
    neighbor process exists.
    """
    nz = (np.abs(_DIRS) > 0).sum(axis=1)
    vol = (width**nz) * (2**i) ** (3 - nz)
    return (vol * dir_mask).sum(axis=-1)


def _process_dir_mask(P: int, g: int, mode: str):
    """(P, 26) mask of directions with an existing neighbor process."""
    if mode == "periodic":
        return np.ones((P, 26), dtype=np.int64)
    pids = np.arange(P, dtype=np.uint64)
    coords = decode_cells(pids, g)
    side = 1 << g
    nb = coords[:, None, :] + _DIRS[None, :, :]
    return ((nb >= 0) & (nb < side)).all(axis=2).astype(np.int64)


def uniform_comm_report(
    P: int,
    n_per_p: int,
    mode: str = "periodic",
    leaf_capacity: int = 1,
    distribution: str = "random-cube",
    model: str = "hier",
    seed: int = 0,
) -> CommReport:
    """Closed-form counts for a full tree split over P = 8**g processes.

    The hierarchical model reproduces the aggregation scheme: 7 sibling
    partners with one cell each per global level for M2M, 26 partners
    with 8 cells each per global level for M2L, and surface-halo counts
    (2^i + 2w)^3 - 8^i per local level, with w = 2 for M2L and w = 1 for
    P2P.  Truncated mode clips partners and halo slabs at the domain
    boundary; periodic mode treats every process as interior.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    g = _log8(P)
    ell = uniform_local_depth(n_per_p, leaf_capacity)
    phases = {}
    zeros = lambda: np.zeros(P, dtype=np.int64)  # noqa: E731

    if P == 1:
        names = ("direct-let",) if model == "direct" else PHASES
        for name in names:
            phases[name] = PhaseResult(name, zeros(), zeros(), zeros())
        return CommReport(distribution, P * n_per_p, P, n_per_p, mode, model, seed, phases)

    if model == "direct":
        # Every process owns a coarse cell of everyone's essential tree.
        partners = np.full(P, P - 1, dtype=np.int64)
        dir_mask = _process_dir_mask(P, g, "truncated")
        cells = zeros()
        for i in range(1, g + 1):
            side = 1 << i
            anc = decode_cells(np.arange(P, dtype=np.uint64), g) >> (g - i)
            lo = np.maximum(anc - 2, 0)
            hi = np.minimum(anc + 2, side - 1)
            cells += (hi - lo + 1).prod(axis=1) - 1
        for i in range(1, ell + 1):
            cells += _halo_cells(i, 2, dir_mask)
        if ell >= 1:
            cells += _halo_cells(ell, 1, dir_mask)
        res = PhaseResult("direct-let", partners, cells.copy(), cells)
        return CommReport(
            distribution, P * n_per_p, P, n_per_p, mode, model, seed, {"direct-let": res}
        )

    dir_mask = _process_dir_mask(P, g, mode)
    n_dirs = dir_mask.sum(axis=1)

    # Global M2M: the 7 sibling-group partners always exist for P = 8^g.
    partners = zeros()
    recv = zeros()
    per_level = []
    for i in range(1, g + 1):
        partners += 7
        recv += 7
        per_level.append((i, 7, 7))
    phases["global-m2m"] = PhaseResult("global-m2m", partners, recv.copy(), recv.copy(), per_level)

    # Global M2L: one partner per neighbor cell of the process's level-i
    # ancestor, each shipping its 8-cell sibling bundle.
    partners = zeros()
    recv = zeros()
    per_level = []
    for i in range(1, g + 1):
        if mode == "periodic":
            lvl_partners = np.full(P, 26, dtype=np.int64)
        else:
            side = 1 << i
            anc = decode_cells(np.arange(P, dtype=np.uint64), g) >> (g - i)
            nb = anc[:, None, :] + _DIRS[None, :, :]
            lvl_partners = ((nb >= 0) & (nb < side)).all(axis=2).sum(axis=1)
        partners += lvl_partners
        recv += 8 * lvl_partners
        per_level.append((i, int(lvl_partners.max()), int(8 * lvl_partners.max())))
    phases["global-m2l"] = PhaseResult("global-m2l", partners, recv.copy(), recv.copy(), per_level)

    # Local M2L: two-cell-wide halos at every local level.
    partners = zeros()
    recv = zeros()
    per_level = []
    for i in range(1, ell + 1):
        lvl = _halo_cells(i, 2, dir_mask)
        recv += lvl
        per_level.append((i, int(n_dirs.max()), int(lvl.max())))
    if ell >= 1:
        partners += n_dirs
    phases["local-m2l"] = PhaseResult("local-m2l", partners, recv.copy(), recv.copy(), per_level)

    # Local P2P: one-cell-wide halo at the leaf level only.
    partners = zeros()
    recv = zeros()
    per_level = []
    if ell >= 1:
        recv += _halo_cells(ell, 1, dir_mask)
        partners += n_dirs
        per_level.append((ell, int(n_dirs.max()), int(recv.max())))
    phases["local-p2p"] = PhaseResult("local-p2p", partners, recv.copy(), recv.copy(), per_level)

    return CommReport(distribution, P * n_per_p, P, n_per_p, mode, model, seed, phases)


def uniform_phase_level_counts(P: int, n_per_p: int, mode: str = "periodic", leaf_capacity: int = 1):
    """Interior-process per-level counts, keyed by phase.

    Returns {phase: [(level, partners, cells_per_partner, cells_recv)]}.
    """
    g = _log8(P)
    ell = uniform_local_depth(n_per_p, leaf_capacity)
    out = {name: [] for name in PHASES}
    if P == 1:
        return out
    for i in range(1, g + 1):
        out["global-m2m"].append((i, 7, 1, 7))
        out["global-m2l"].append((i, 26, 8, 208))
    for i in range(1, ell + 1):
        out["local-m2l"].append((i, 26, None, (2**i + 4) ** 3 - 8**i))
    if ell >= 1:
        out["local-p2p"].append((ell, 26, None, (2**ell + 2) ** 3 - 8**ell))
    return out


# ---------------------------------------------------------------------------
# General (tree) engine


def _level_pairs(tree: Octree, level: int, radius: int):
    """(src, dst) node-id pairs at ``level`` within Chebyshev ``radius``."""
    lo, hi = int(tree.level_ptr[level]), int(tree.level_ptr[level + 1])
    if hi == lo:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    keys = tree.keys[lo:hi]
    coords = decode_cells(keys, level)
    side = 1 << level
    srcs, dsts = [], []
    offsets = [
        np.array(o, dtype=np.int64)
        for o in np.ndindex(2 * radius + 1, 2 * radius + 1, 2 * radius + 1)
    ]
    for off in offsets:
        off = off - radius
        if not off.any():
            continue
        nc = coords + off[None, :]
        valid = ((nc >= 0) & (nc < side)).all(axis=1)
        if not valid.any():
            continue
        src = np.flatnonzero(valid)
        nk = encode_cells(nc[src].astype(np.uint64), level)
        pos = np.searchsorted(keys, nk)
        found = (pos < len(keys)) & (keys[np.minimum(pos, len(keys) - 1)] == nk)
        srcs.append(src[found] + lo)
        dsts.append(pos[found] + lo)
    if not srcs:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(srcs), np.concatenate(dsts)


def _expand_owners(split, nodes):
    """(process, repeated-node-position) pairs over each node's owner span."""
    span = (split.owner_hi[nodes] - split.owner_lo[nodes] + 1).astype(np.int64)
    procs = _ranges_concat(split.owner_lo[nodes].astype(np.int64), span)
    idx = np.repeat(np.arange(len(nodes)), span)
    return procs, idx


def _accumulate_phase(split, phase, level_pairs):
    """Reduce per-level (p, cell, sender) needs into a PhaseResult."""
    P = split.partition.P
    partners = np.zeros(P, dtype=np.int64)
    sent = np.zeros(P, dtype=np.int64)
    recv = np.zeros(P, dtype=np.int64)
    per_level = []
    n_nodes = split.tree.n_nodes
    for level, (p_arr, cell_arr) in level_pairs:
        if not len(p_arr):
            continue
        packed = np.unique(p_arr * np.int64(n_nodes) + cell_arr)
        p = packed // n_nodes
        cell = packed % n_nodes
        sender = split.owner_lo[cell].astype(np.int64)
        lvl_recv = np.bincount(p, minlength=P)
        recv += lvl_recv
        sent += np.bincount(sender, minlength=P)
        pp = np.unique(p * np.int64(P) + sender)
        lvl_partners = np.bincount(pp // P, minlength=P)
        partners += lvl_partners
        per_level.append((level, int(lvl_partners.max()), int(lvl_recv.max())))
    return PhaseResult(phase, partners, sent, recv, per_level)


def sim_global_m2m(split: GlobalLocalSplit) -> PhaseResult:
    """Sibling exchanges up the global tree.

    At each global level every co-owner of a cell pulls the sibling
    cells it does not co-own, one cell each, from the sibling's first
    owner.
    """
    tree = split.tree
    level_pairs = []
    for level in range(1, split.sim_depth + 1):
        ids = tree.level_nodes(level)
        ids = ids[split.tags[ids] != TAG_LOCAL]
        if not len(ids):
            level_pairs.append((level, (np.empty(0, np.int64), np.empty(0, np.int64))))
            continue
        parents = tree.parents[ids].astype(np.int64)
        sib_count = tree.child_count[parents].astype(np.int64)
        sibs = _ranges_concat(tree.child_start[parents].astype(np.int64), sib_count)
        owners = np.repeat(ids, sib_count)
        keep = sibs != owners
        a_nodes, s_nodes = owners[keep], sibs[keep]
        procs, idx = _expand_owners(split, a_nodes)
        cells = s_nodes[idx]
        inside = (procs >= split.owner_lo[cells]) & (procs <= split.owner_hi[cells])
        level_pairs.append((level, (procs[~inside], cells[~inside])))
    return _accumulate_phase(split, "global-m2m", level_pairs)


def sim_global_m2l(split: GlobalLocalSplit) -> PhaseResult:
    """Interaction halos of global-tree cells, two cells wide per level."""
    tree = split.tree
    level_pairs = []
    for level in range(1, split.sim_depth + 1):
        src, dst = _level_pairs(tree, level, radius=2)
        keep = split.tags[src] != TAG_LOCAL
        src, dst = src[keep], dst[keep]
        procs, idx = _expand_owners(split, src)
        cells = dst[idx]
        inside = (procs >= split.owner_lo[cells]) & (procs <= split.owner_hi[cells])
        level_pairs.append((level, (procs[~inside], cells[~inside])))
    return _accumulate_phase(split, "global-m2l", level_pairs)


def sim_local_m2l(tree: Octree, partition: Partition, split: GlobalLocalSplit = None) -> PhaseResult:
    """Two-cell-wide halo enumeration below the local roots.

    Needed cells are existing same-level cells within Chebyshev distance
    two of a process's strictly-local cells, owned by another process
    and not part of the global tree.
    """
    if split is None:
        split = split_global_local(tree, partition)
    depth = len(tree.level_ptr) - 2
    level_pairs = []
    for level in range(1, depth + 1):
        src, dst = _level_pairs(tree, level, radius=2)
        keep = (split.tags[src] == TAG_LOCAL) & (split.tags[dst] != TAG_GLOBAL)
        src, dst = src[keep], dst[keep]
        p = split.owner_lo[src].astype(np.int64)
        q = split.owner_lo[dst].astype(np.int64)
        cross = p != q
        level_pairs.append((level, (p[cross], dst[cross])))
    return _accumulate_phase(split, "local-m2l", level_pairs)


def sim_local_p2p(tree: Octree, partition: Partition, split: GlobalLocalSplit = None) -> PhaseResult:
    """Adjacent-leaf halo across process boundaries (one cell wide)."""
    if split is None:
        split = split_global_local(tree, partition)
    q, m = leaf_adjacency_pairs(tree)
    own_q = partition.leaf_process[q].astype(np.int64)
    own_m = partition.leaf_process[m].astype(np.int64)
    cross = own_q != own_m
    cells = tree.leaf_ids[m[cross]].astype(np.int64)
    level_pairs = [(0, (own_q[cross], cells))]
    return _accumulate_phase(split, "local-p2p", level_pairs)


def sim_direct_let(tree: Octree, partition: Partition, split: GlobalLocalSplit = None) -> PhaseResult:
    """Baseline without hierarchical aggregation.

    Every process pulls each cell of its essential tree individually;
    partners are all distinct owners of any needed cell, and coarse
    cells are owned by whole process groups.
    """
    if split is None:
        split = split_global_local(tree, partition)
    P = partition.P
    depth = len(tree.level_ptr) - 2
    need_p, need_cell = [], []
    for level in range(1, depth + 1):
        src, dst = _level_pairs(tree, level, radius=2)
        procs, idx = _expand_owners(split, src)
        cells = dst[idx]
        inside = (procs >= split.owner_lo[cells]) & (procs <= split.owner_hi[cells])
        need_p.append(procs[~inside])
        need_cell.append(cells[~inside])
    q, m = leaf_adjacency_pairs(tree)
    own_q = partition.leaf_process[q].astype(np.int64)
    cells = tree.leaf_ids[m].astype(np.int64)
    inside = (own_q >= split.owner_lo[cells]) & (own_q <= split.owner_hi[cells])
    need_p.append(own_q[~inside])
    need_cell.append(cells[~inside])
    p_arr = np.concatenate(need_p)
    cell_arr = np.concatenate(need_cell)
    n_nodes = tree.n_nodes
    packed = np.unique(p_arr * np.int64(n_nodes) + cell_arr)
    p = packed // n_nodes
    cell = packed % n_nodes
    recv = np.bincount(p, minlength=P)
    sent = np.bincount(split.owner_lo[cell].astype(np.int64), minlength=P)
    # Partner set: every owner of every needed cell.
    span = (split.owner_hi[cell] - split.owner_lo[cell] + 1).astype(np.int64)
    owners = _ranges_concat(split.owner_lo[cell].astype(np.int64), span)
    p_rep = np.repeat(p, span)
    pq = np.unique(p_rep * np.int64(P) + owners)
    partners = np.bincount(pq // P, minlength=P)
    return PhaseResult("direct-let", partners, sent, recv)


def simulate_comm(
    tree: Octree,
    partition: Partition,
    distribution: str = "unknown",
    seed: int = 0,
    model: str = "hier",
) -> CommReport:
    """Run the general engine over an explicit tree and partition."""
    split = split_global_local(tree, partition)
    if model == "direct":
        phases = {"direct-let": sim_direct_let(tree, partition, split)}
    else:
        phases = {
            "global-m2m": sim_global_m2m(split),
            "global-m2l": sim_global_m2l(split),
            "local-m2l": sim_local_m2l(tree, partition, split),
            "local-p2p": sim_local_p2p(tree, partition, split),
        }
    return CommReport(
        distribution=distribution,
        n=tree.n_particles,
        P=partition.P,
        n_per_p=tree.n_particles // partition.P,
        mode="truncated",
        model=model,
        seed=seed,
        phases=phases,
    )


# ---------------------------------------------------------------------------
# Scaling fits and the experiment driver


@dataclass
class FitResult:
    exponent: float  # log-log least-squares slope
    exponent_r2: float
    log_slope: float  # slope of y against log_base(x)
    log_intercept: float
    log_r2: float


def _lstsq_line(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fitted = A @ coef
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def fit_scaling(xs, ys=None, log_base: float = 2.0) -> FitResult:
    """Power-law and log-linear least-squares fits of a series.

    Parameters
    ----------
    xs, ys : arrays, or ``xs`` may be a sequence of (x, y) pairs.
    log_base : base for the log-linear fit (y against log_base x).

    Returns
    -------
    FitResult with the log-log slope (power-law exponent) and the
    log-linear slope, intercept and R^2.
    """
    if ys is None:
        pairs = np.asarray(list(xs), dtype=np.float64)
        xs, ys = pairs[:, 0], pairs[:, 1]
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) < 4:
        raise ValueError(f"need at least 4 points to fit, got {len(x)}")
    if np.any(np.diff(x) <= 0):
        raise ValueError("degenerate series: x must be strictly increasing")
    if np.any(y <= 0):
        raise ValueError("series values must be positive")
    exp_slope, _, exp_r2 = _lstsq_line(np.log(x), np.log(y))
    log_slope, log_icpt, log_r2 = _lstsq_line(np.log(x) / np.log(log_base), y)
    return FitResult(exp_slope, exp_r2, log_slope, log_icpt, log_r2)


def run_comm_experiment(
    spec: DistributionSpec,
    P_values,
    NP_values,
    mode: str = "periodic",
    model: str = "hier",
    counting: str = "auto",
    leaf_capacity: int = 1,
    tree_leaf_capacity: int = 16,
    balance: bool = True,
) -> list:
    """Sweep (P, N/P) combinations and return one CommReport per run.

    ``counting="uniform"`` evaluates the closed-form full-tree counts
    (random-cube only, P a power of 8, no particles generated) with
    ``leaf_capacity`` entering the local-depth formula; ``"general"``
    builds the actual adaptive tree per run at ``tree_leaf_capacity``.
    ``"auto"`` picks uniform for random-cube and general otherwise.
    """
    if counting == "auto":
        counting = "uniform" if spec.kind == "random-cube" else "general"
    if counting not in ("uniform", "general"):
        raise ConfigurationError(f"unknown counting {counting!r}")
    if counting == "general" and mode == "periodic":
        raise ConfigurationError("general counting enumerates real trees; use truncated mode")
    reports = []
    for P in P_values:
        for n_per_p in NP_values:
            if counting == "uniform":
                reports.append(
                    uniform_comm_report(
                        int(P),
                        int(n_per_p),
                        mode=mode,
                        leaf_capacity=leaf_capacity,
                        distribution=spec.kind,
                        model=model,
                        seed=spec.seed,
                    )
                )
                continue
            n = int(P) * int(n_per_p)
            particles = generate(DistributionSpec(spec.kind, n, spec.seed))
            tree = build_tree(particles, tree_leaf_capacity)
            if balance:
                tree = balance_2to1(tree)
            partition = partition_sfc(tree, int(P))
            reports.append(
                simulate_comm(tree, partition, distribution=spec.kind, seed=spec.seed, model=model)
            )
    return reports
