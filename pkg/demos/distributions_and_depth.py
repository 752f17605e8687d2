"""Walk through the particle generators and the depth-vs-N behavior.

Run from the repository root:

    python3 demos/distributions_and_depth.py
"""
import numpy as np

from h2fmm import DistributionSpec, balance_2to1, build_tree, depth_stats, generate, neighbor_counts

# The three distributions: uniform in the cube, points on a sphere
# surface, and the centrally concentrated Plummer model.  Identical
# (kind, n, seed) triples always reproduce the same particles.
for kind in ("random-cube", "sphere-surface", "plummer"):
    ps = generate(DistributionSpec(kind, 4096, seed=7))
    radii = np.linalg.norm(ps.positions - 0.5, axis=1)
    print(f"{kind:15s} n={len(ps)}  median radius about center = {np.median(radii):.3f}")

print()
print("tree depth vs N (leaf capacity 16):")
n_values = [2**k for k in range(10, 18)]
for kind in ("random-cube", "sphere-surface", "plummer"):
    rows = depth_stats(DistributionSpec(kind, n_values[0], seed=0), n_values, 16)
    depths = " ".join(f"{d:2d}" for _, d in rows)
    print(f"  {kind:15s} {depths}")
print("  (all three grow like log8 N, with growing constants)")

print()
print("2:1 balance bounds the near field:")
for n in (2**13, 2**15, 2**17):
    tree = build_tree(generate(DistributionSpec("plummer", n, seed=0)), 1)
    unbalanced = int(neighbor_counts(tree).max())
    balanced = int(neighbor_counts(balance_2to1(tree)).max())
    print(f"  N={n:7d}: max adjacent leaves {unbalanced:3d} unbalanced -> {balanced:3d} balanced")
