"""Voxelized point clouds: PLY I/O, nearest neighbors, normals, quality metrics.

Clouds hold integer voxel coordinates in [0, 2^d) with optional RGB colors.
Nearest-neighbor queries are exact chunked brute force (integer distances,
ties broken by lowest point index), which keeps every metric deterministic
and lets the regression oracles match bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class PlyParseError(Exception):
    """Malformed PLY input; message carries the offending line number."""


class DomainError(Exception):
    """Input violates a documented precondition."""


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) int32
    colors: np.ndarray | None  # (N, 3) uint8 or None
    bit_depth: int = 8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.int32).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise DomainError("colors length must match points length")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None


@dataclass
class NormalField:
    normals: np.ndarray  # (N, 3) float64, unit length
    k: int


def _min_bit_depth(points: np.ndarray) -> int:
    top = int(points.max()) if len(points) else 0
    d = 8
    while (1 << d) <= top:
        d += 1
    return d


def voxelize(raw_points: np.ndarray, raw_colors: np.ndarray | None) -> PointCloud:
    """Round to integers, drop duplicate positions keeping the first."""
    pts = np.floor(np.asarray(raw_points, dtype=np.float64) + 0.5).astype(np.int64)
    if len(pts) and pts.min() < 0:
        raise DomainError("negative coordinate after voxelization")
    _, first = np.unique(pts, axis=0, return_index=True)
    keep = np.sort(first)
    pts = pts[keep]
    cols = None if raw_colors is None else np.asarray(raw_colors)[keep]
    return PointCloud(pts.astype(np.int32), cols, _min_bit_depth(pts))


# ---------------------------------------------------------------------------
# PLY I/O (ASCII only)

_PLY_TYPES = {"float", "float32", "double", "float64",
              "char", "uchar", "int8", "uint8", "short", "ushort",
              "int16", "uint16", "int", "uint", "int32", "uint32"}


def load_ply(path) -> PointCloud:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("line 1: missing 'ply' magic")
    n_vertex = None
    props: list[str] = []
    fmt_seen = False
    i = 1
    in_vertex = False
    while i < len(lines):
        toks = lines[i].split()
        ln = i + 1
        i += 1
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "format":
            if toks[1:] != ["ascii", "1.0"]:
                raise PlyParseError(f"line {ln}: only 'format ascii 1.0' is supported")
            fmt_seen = True
        elif toks[0] == "element":
            if toks[1] == "vertex":
                try:
                    n_vertex = int(toks[2])
                except (IndexError, ValueError):
                    raise PlyParseError(f"line {ln}: bad vertex count") from None
                in_vertex = True
            else:
                raise PlyParseError(f"line {ln}: unsupported element '{toks[1]}'")
        elif toks[0] == "property":
            if not in_vertex:
                raise PlyParseError(f"line {ln}: property outside vertex element")
            if len(toks) != 3 or toks[1] not in _PLY_TYPES:
                raise PlyParseError(f"line {ln}: unsupported property declaration")
            props.append(toks[2])
        elif toks[0] == "end_header":
            break
        else:
            raise PlyParseError(f"line {ln}: unrecognized header line '{toks[0]}'")
    else:
        raise PlyParseError(f"line {len(lines)}: missing end_header")
    header_end = i
    if not fmt_seen:
        raise PlyParseError("line 2: missing format line")
    if n_vertex is None:
        raise PlyParseError(f"line {header_end}: no vertex element")
    for need in ("x", "y", "z"):
        if need not in props:
            raise PlyParseError(f"line {header_end}: vertex missing '{need}' property")
    has_rgb = all(c in props for c in ("red", "green", "blue"))

    rows = lines[header_end:header_end + n_vertex]
    if len(rows) < n_vertex:
        raise PlyParseError(f"line {len(lines)}: expected {n_vertex} vertex rows")
    if n_vertex == 0:
        return PointCloud(np.zeros((0, 3), np.int32), np.zeros((0, 3), np.uint8) if has_rgb else None)
    try:
        data = np.array([r.split() for r in rows], dtype=np.float64)
    except ValueError:
        raise PlyParseError(f"line {header_end + 1}: malformed vertex row") from None
    if data.shape[1] != len(props):
        raise PlyParseError(f"line {header_end + 1}: wrong number of vertex fields")
    ix, iy, iz = (props.index(c) for c in "xyz")
    pts = data[:, [ix, iy, iz]]
    cols = None
    if has_rgb:
        idx = [props.index(c) for c in ("red", "green", "blue")]
        cols = np.clip(data[:, idx], 0, 255).astype(np.uint8)
    return voxelize(pts, cols)


def save_ply(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property int x\nproperty int y\nproperty int z\n")
        if cloud.has_colors:
            fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        if cloud.has_colors:
            for (x, y, z), (r, g, b) in zip(cloud.points.tolist(), cloud.colors.tolist()):
                fh.write(f"{x} {y} {z} {r} {g} {b}\n")
        else:
            for x, y, z in cloud.points.tolist():
                fh.write(f"{x} {y} {z}\n")


# ---------------------------------------------------------------------------
# nearest neighbors: voxel-grid accelerator, exact and deterministic.
# Equal distances resolve to the lowest reference index via composite
# (distance, index) integer keys, so results match the exhaustive scan
# bit for bit.

_CELL = 4


def brute_force_nn(query: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive chunked scan; the oracle the grid accelerator must match."""
    q = np.asarray(query, dtype=np.int64)
    r = np.asarray(ref, dtype=np.int64)
    qq = (q * q).sum(axis=1)
    rr = (r * r).sum(axis=1)
    idx = np.empty(len(q), dtype=np.int64)
    d2 = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), 256):
        e = min(s + 256, len(q))
        dist = qq[s:e, None] + rr[None, :] - 2 * (q[s:e] @ r.T)
        best = np.argmin(dist, axis=1)
        idx[s:e] = best
        d2[s:e] = dist[np.arange(e - s), best]
    return idx, d2


class _Grid:
    """Read-only voxel-grid index over integer points."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.int64)
        cells = self.points // _CELL
        self.dims = cells.max(axis=0) + 1 if len(cells) else np.ones(3, dtype=np.int64)
        self.keys = (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]
        order = np.argsort(self.keys, kind="stable")
        self.order = order
        self.sorted_keys = self.keys[order]

    def cell_points(self, cell_keys: np.ndarray) -> np.ndarray:
        """Indices (ascending within each cell) of points in the given cells."""
        lo = np.searchsorted(self.sorted_keys, cell_keys, side="left")
        hi = np.searchsorted(self.sorted_keys, cell_keys, side="right")
        out = [self.order[a:b] for a, b in zip(lo.tolist(), hi.tolist()) if b > a]
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(out)

    def ring_cells(self, cell: np.ndarray, r: int) -> np.ndarray:
        """Keys of cells at Chebyshev distance exactly r (clipped to bounds)."""
        c = cell + _ring_offsets(r)
        ok = ((c >= 0) & (c < self.dims)).all(axis=1)
        c = c[ok]
        return (c[:, 0] * self.dims[1] + c[:, 1]) * self.dims[2] + c[:, 2]


_RING_OFFS: dict[int, np.ndarray] = {}


def _ring_offsets(r: int) -> np.ndarray:
    out = _RING_OFFS.get(r)
    if out is None:
        rng = np.arange(-r, r + 1)
        g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        if r > 0:
            g = g[np.abs(g).max(axis=1) == r]
        _RING_OFFS[r] = out = g
    return out


def _grid_nn(query: np.ndarray, grid: _Grid, k: int):
    """k nearest grid points per query row as (indices (n,k), distances (n,k)).

    Queries sharing a voxel cell are processed together; rings expand until
    the k-th best distance beats the next ring's lower bound.
    """
    q = np.asarray(query, dtype=np.int64)
    ref = grid.points
    n = len(q)
    out_i = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k), dtype=np.int64)
    qcells = q // _CELL
    qkeys = (qcells[:, 0] * grid.dims[1] + qcells[:, 1]) * grid.dims[2] + qcells[:, 2]
    order = np.argsort(qkeys, kind="stable")
    max_r = int(grid.dims.max()) + 1
    s = 0
    while s < n:
        e = s + 1
        key = qkeys[order[s]]
        while e < n and qkeys[order[e]] == key:
            e += 1
        rows = order[s:e]
        s = e
        cell = qcells[rows[0]]
        qs = q[rows]
        keys = None
        for r in range(max_r):
            ring = grid.cell_points(grid.ring_cells(cell, r))
            if len(ring):
                d = ((qs[:, None, :] - ref[ring][None, :, :]) ** 2).sum(axis=2)
                new = d << 20 | ring[None, :]
                keys = new if keys is None else np.concatenate([keys, new], axis=1)
            if keys is not None and keys.shape[1] >= k:
                part = np.partition(keys, k - 1, axis=1)[:, :k]
                part.sort(axis=1)
                # cells beyond ring r sit at least r*CELL+1 away from any
                # query in the central cell; strict < keeps index ties exact
                bound = r * _CELL + 1
                if ((part[:, -1] >> 20) < bound * bound).all():
                    break
                keys = part  # keep only the running top-k
        out_d[rows] = part >> 20
        out_i[rows] = part & ((1 << 20) - 1)
    return out_i, out_d


def nearest_neighbors(query: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index into ref of the nearest point per query row, plus squared distance.

    Grid-accelerated, integer-exact; equal distances resolve to the lowest
    reference index (identical to brute_force_nn).
    """
    if len(ref) <= 64:
        return brute_force_nn(query, ref)
    i, d = _grid_nn(np.asarray(query), _Grid(ref), 1)
    return i[:, 0], d[:, 0]


def _knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbors per point, excluding the point itself (ties by index)."""
    p = np.asarray(points, dtype=np.int64)
    i, _ = _grid_nn(p, _Grid(p), k + 1)
    # the point itself is its own unique zero-distance neighbor
    self_col = i == np.arange(len(p))[:, None]
    out = np.empty((len(p), k), dtype=np.int64)
    for r in range(len(p)):
        row = i[r][~self_col[r]]
        out[r] = row[:k]
    return out


def estimate_normals(cloud: PointCloud, k: int) -> NormalField:
    """Unit normals from the smallest covariance eigenvector of k neighbors.

    Sign convention: the component of largest magnitude is made positive.
    """
    if k < 3:
        raise DomainError("k must be >= 3")
    if len(cloud) < k + 1:
        raise DomainError(f"cloud must have at least k+1={k + 1} points")
    nbr = _knn_indices(cloud.points, k)
    pts = cloud.points.astype(np.float64)
    nb = pts[nbr]  # (N, k, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    lead = np.argmax(np.abs(normals), axis=1)
    flip = normals[np.arange(len(normals)), lead] < 0
    normals[flip] *= -1.0
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return NormalField(normals / norms, k)


# ---------------------------------------------------------------------------
# quality metrics


def _directed_mse(src: PointCloud, dst: PointCloud) -> float:
    _, d2 = nearest_neighbors(src.points, dst.points)
    return float(d2.sum()) / len(src)


def d1_mse(ref: PointCloud, deg: PointCloud) -> float:
    """Symmetric point-to-point squared error (max of directed means)."""
    if not len(ref) or not len(deg):
        raise DomainError("d1_mse needs non-empty clouds")
    return max(_directed_mse(ref, deg), _directed_mse(deg, ref))


def d2_mse(ref: PointCloud, deg: PointCloud, normals: NormalField) -> float:
    """Symmetric point-to-plane squared error using reference normals."""
    if not len(ref) or not len(deg):
        raise DomainError("d2_mse needs non-empty clouds")
    if len(normals.normals) != len(ref):
        raise DomainError("normal count must match reference cloud")
    nrm = normals.normals
    # ref -> deg: error projected on the ref point's own normal
    idx, _ = nearest_neighbors(ref.points, deg.points)
    ev = deg.points[idx].astype(np.float64) - ref.points.astype(np.float64)
    fwd = float(((ev * nrm).sum(axis=1) ** 2).mean())
    # deg -> ref: normal of the matched ref point
    idx, _ = nearest_neighbors(deg.points, ref.points)
    ev = ref.points[idx].astype(np.float64) - deg.points.astype(np.float64)
    bwd = float(((ev * nrm[idx]).sum(axis=1) ** 2).mean())
    return max(fwd, bwd)


def cloud_metrics(ref: PointCloud, deg: PointCloud, normals: NormalField) -> tuple[float, float]:
    """(d1_mse, d2_mse) sharing the two nearest-neighbor passes.

    Bit-identical to calling d1_mse and d2_mse separately.
    """
    if not len(ref) or not len(deg):
        raise DomainError("metrics need non-empty clouds")
    if len(normals.normals) != len(ref):
        raise DomainError("normal count must match reference cloud")
    nrm = normals.normals
    idx, dd = nearest_neighbors(ref.points, deg.points)
    d1_fwd = float(dd.sum()) / len(ref)
    ev = deg.points[idx].astype(np.float64) - ref.points.astype(np.float64)
    d2_fwd = float(((ev * nrm).sum(axis=1) ** 2).mean())
    idx, dd = nearest_neighbors(deg.points, ref.points)
    d1_bwd = float(dd.sum()) / len(deg)
    ev = ref.points[idx].astype(np.float64) - deg.points.astype(np.float64)
    d2_bwd = float(((ev * nrm[idx]).sum(axis=1) ** 2).mean())
    return max(d1_fwd, d1_bwd), max(d2_fwd, d2_bwd)


def geometry_psnr(mse: float, bit_depth: int) -> float:
    """10*log10(3*p^2 / mse) with p = 2^d - 1; zero error maps to +inf."""
    if mse < 0:
        raise DomainError("mse must be non-negative")
    if mse == 0.0:
        return math.inf
    p = (1 << bit_depth) - 1
    return 10.0 * math.log10(3.0 * p * p / mse)
