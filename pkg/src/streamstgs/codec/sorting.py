"""Locality sort of Gaussians into a square 2D grid.

Neighboring grid cells should hold similar attribute vectors so the
attribute images and the feature video compress well. The placement is
seeded by Morton order on positions and refined by random pairwise swaps
that are accepted only when the local 4-neighbor dissimilarity strictly
decreases, so the result never regresses below the seed. Cells are filled
in row-major order; cells N..side^2-1 are padding and replicate the last
occupied cell's Gaussian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..core import GaussianSet, TemporalFeatureBank

ATTRIBUTE_FIELDS = ("positions", "scales", "rotations", "opacities", "base_colors")


@dataclass
class GridLayout:
    side: int
    permutation: np.ndarray  # (N,) gaussian index -> cell index in [0, N)
    pad_count: int

    def __post_init__(self):
        n = self.permutation.shape[0]
        if self.side * self.side < n:
            raise ValueError("grid too small for the Gaussian count")
        if self.pad_count != self.side * self.side - n:
            raise ValueError("pad_count inconsistent with side and N")
        if not np.array_equal(np.sort(self.permutation), np.arange(n)):
            raise ValueError("permutation is not a bijection onto the first N cells")

    @property
    def count(self) -> int:
        return self.permutation.shape[0]

    @property
    def cell_to_gaussian(self) -> np.ndarray:
        """(side^2,) gaussian index per cell; padding replicates the last cell."""
        n = self.count
        inv = np.empty(n, dtype=np.int64)
        inv[self.permutation] = np.arange(n)
        full = np.full(self.side * self.side, inv[n - 1], dtype=np.int64)
        full[:n] = inv
        return full

    @property
    def valid_mask(self) -> np.ndarray:
        m = np.zeros((self.side, self.side), dtype=bool)
        m.reshape(-1)[: self.count] = True
        return m


def _part1by2(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64) & np.uint64(0x3FF)
    x = (x | (x << np.uint64(16))) & np.uint64(0x030000FF)
    x = (x | (x << np.uint64(8))) & np.uint64(0x0300F00F)
    x = (x | (x << np.uint64(4))) & np.uint64(0x030C30C3)
    x = (x | (x << np.uint64(2))) & np.uint64(0x09249249)
    return x


def morton_order(positions: np.ndarray) -> np.ndarray:
    """Stable ordering of points along a 10-bit-per-axis Morton curve."""
    p = np.asarray(positions, dtype=np.float64)
    lo, hi = p.min(axis=0), p.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
    q = np.clip(((p - lo) / span * 1023.0).astype(np.int64), 0, 1023)
    code = _part1by2(q[:, 0]) | (_part1by2(q[:, 1]) << np.uint64(1)) | (_part1by2(q[:, 2]) << np.uint64(2))
    return np.argsort(code, kind="stable")


def attribute_matrix(gaussians: GaussianSet) -> np.ndarray:
    """Per-Gaussian attribute vector, each channel min-max normalized."""
    cols = [np.asarray(ad.val(getattr(gaussians, f)), dtype=np.float64) for f in ATTRIBUTE_FIELDS]
    mat = np.concatenate(cols, axis=1)
    lo, hi = mat.min(axis=0), mat.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
    return (mat - lo) / span


def _neighbor_pairs(side: int, count: int) -> np.ndarray:
    """(P, 2) cell-index pairs, 4-neighborhood, both cells occupied."""
    cells = np.arange(side * side).reshape(side, side)
    right = np.stack([cells[:, :-1].reshape(-1), cells[:, 1:].reshape(-1)], axis=1)
    down = np.stack([cells[:-1, :].reshape(-1), cells[1:, :].reshape(-1)], axis=1)
    pairs = np.concatenate([right, down])
    return pairs[(pairs < count).all(axis=1)]


def neighbor_dissimilarity(layout: GridLayout, vectors: np.ndarray) -> float:
    """Total L2 distance over occupied 4-neighbor cell pairs."""
    pairs = _neighbor_pairs(layout.side, layout.count)
    cell_vecs = vectors[layout.cell_to_gaussian[: layout.count]]
    d = cell_vecs[pairs[:, 0]] - cell_vecs[pairs[:, 1]]
    return float(np.sqrt((d * d).sum(axis=1)).sum())


def sort_to_grid(gaussians: GaussianSet, seed: int = 0, sweeps: int = 3,
                 proposals_per_sweep: int | None = None) -> GridLayout:
    """Morton-seeded grid placement refined by strict-improvement swaps."""
    n = gaussians.count
    if n < 1:
        raise ValueError("need at least one Gaussian")
    side = int(np.ceil(np.sqrt(n)))
    order = morton_order(np.asarray(ad.val(gaussians.positions)))
    cell_to_g = order.copy()  # cell k holds gaussian order[k] (row-major fill)

    if n > 1:
        vectors = attribute_matrix(gaussians)
        cell_vec = vectors[cell_to_g]  # (N, D) indexed by cell
        nbrs = _cell_neighbors(side, n)
        rng = np.random.default_rng(seed)
        n_prop = proposals_per_sweep if proposals_per_sweep is not None else 4 * n
        for _ in range(max(sweeps, 3)):
            c1s = rng.integers(0, n, size=n_prop)
            c2s = rng.integers(0, n, size=n_prop)
            for c1, c2 in zip(c1s, c2s):
                if c1 == c2:
                    continue
                if _swap_gain(cell_vec, nbrs, int(c1), int(c2)) < -1e-12:
                    cell_vec[[c1, c2]] = cell_vec[[c2, c1]]
                    cell_to_g[[c1, c2]] = cell_to_g[[c2, c1]]
    perm = np.empty(n, dtype=np.int64)
    perm[cell_to_g] = np.arange(n)
    return GridLayout(side=side, permutation=perm, pad_count=side * side - n)


def _cell_neighbors(side: int, count: int) -> list:
    out = []
    for c in range(count):
        r, col = divmod(c, side)
        adj = []
        if col > 0 and c - 1 < count:
            adj.append(c - 1)
        if col < side - 1 and c + 1 < count:
            adj.append(c + 1)
        if r > 0:
            adj.append(c - side)
        if r < side - 1 and c + side < count:
            adj.append(c + side)
        out.append(np.array(adj, dtype=np.int64))
    return out


def _local_cost(cell_vec, nbrs, c, exclude=-1):
    total = 0.0
    v = cell_vec[c]
    for nb in nbrs[c]:
        if nb == exclude:
            continue
        d = v - cell_vec[nb]
        total += float(np.sqrt((d * d).sum()))
    return total


def _swap_gain(cell_vec, nbrs, c1, c2) -> float:
    before = _local_cost(cell_vec, nbrs, c1, exclude=c2) + _local_cost(cell_vec, nbrs, c2, exclude=c1)
    cell_vec[[c1, c2]] = cell_vec[[c2, c1]]
    after = _local_cost(cell_vec, nbrs, c1, exclude=c2) + _local_cost(cell_vec, nbrs, c2, exclude=c1)
    cell_vec[[c1, c2]] = cell_vec[[c2, c1]]
    return after - before


def build_attribute_grids(gaussians: GaussianSet, layout: GridLayout) -> dict:
    """Five (side, side, C) grids; padding replicates the last occupied cell.

    Differentiable: when the GaussianSet fields are Vars the grids are Vars
    (gather by cell index), so the spatial smoothness loss backpropagates.
    """
    idx = layout.cell_to_gaussian
    s = layout.side
    grids = {}
    for name in ATTRIBUTE_FIELDS:
        arr = getattr(gaussians, name)
        c = ad.val(arr).shape[1]
        grids[name] = ad.reshape(ad.take0(arr, idx), (s, s, c))
    return grids


def features_to_grids(bank: TemporalFeatureBank, layout: GridLayout):
    """(E, side, side, feature_dim) feature grids in layout order."""
    idx = layout.cell_to_gaussian
    s = layout.side
    e = bank.slot_count
    gathered = ad.take0(ad.swapaxes(bank.features, 0, 1), idx)  # (side^2, E, F)
    gathered = ad.swapaxes(gathered, 0, 1)  # (E, side^2, F)
    return ad.reshape(gathered, (e, s, s, bank.feature_dim))


def grids_to_features(grids: np.ndarray, layout: GridLayout) -> np.ndarray:
    """(E, side, side, F) -> (E, N, F) by inverse permutation."""
    e, s, _, f = grids.shape
    flat = grids.reshape(e, s * s, f)[:, : layout.count]
    out = np.empty_like(flat)
    out[:, :, :] = flat[:, layout.permutation]
    return out


def grid_to_attributes(grid: np.ndarray, layout: GridLayout) -> np.ndarray:
    """(side, side, C) -> (N, C) by inverse permutation."""
    flat = grid.reshape(layout.side * layout.side, -1)[: layout.count]
    return flat[layout.permutation]


def tile_feature_grid(grid: np.ndarray) -> np.ndarray:
    """(H, W, 16) -> (4H, 4W): channel c goes to tile (c // 4, c % 4), row-major."""
    h, w, c = grid.shape
    if c != 16:
        raise ValueError(f"tiling expects 16 channels, got {c}")
    out = np.empty((4 * h, 4 * w), dtype=grid.dtype)
    for ch in range(16):
        tr, tc = divmod(ch, 4)
        out[tr * h : (tr + 1) * h, tc * w : (tc + 1) * w] = grid[:, :, ch]
    return out


def untile_feature_grid(img: np.ndarray) -> np.ndarray:
    """(4H, 4W) -> (H, W, 16), inverse of tile_feature_grid."""
    hh, ww = img.shape
    if hh % 4 or ww % 4:
        raise ValueError("tiled feature image dims must be divisible by 4")
    h, w = hh // 4, ww // 4
    out = np.empty((h, w, 16), dtype=img.dtype)
    for ch in range(16):
        tr, tc = divmod(ch, 4)
        out[:, :, ch] = img[tr * h : (tr + 1) * h, tc * w : (tc + 1) * w]
    return out
