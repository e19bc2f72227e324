"""Patch-based projection between 3-D clouds and 2-D frame pairs.

Points are segmented by dominant normal axis into six orientations, split
into 8-connected components on the projection plane, rasterized single-layer
(nearest point per pixel wins; occluded points are counted as lost), shelf
packed into frames aligned to the 4x4 occupancy grid, and back-projected on
the decoder side from the block-precision occupancy mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import DomainError, PointCloud, estimate_normals

# orientation -> (depth axis, u axis, v axis, negated depth)
_AXES = (
    (0, 1, 2, False),  # +X
    (0, 1, 2, True),   # -X
    (1, 2, 0, False),  # +Y
    (1, 2, 0, True),   # -Y
    (2, 0, 1, False),  # +Z
    (2, 0, 1, True),   # -Z
)

ALIGN = 4
FRAME_ALIGN = 64


class SplitRequired(Exception):
    """Depth range of a component exceeds what one patch can record."""


class ProjectionError(Exception):
    pass


@dataclass
class Patch:
    orientation: int
    u0: int = 0
    v0: int = 0
    size_u: int = 0
    size_v: int = 0
    d0: int = 0
    shift_u: int = 0
    shift_v: int = 0

    def aligned_w(self) -> int:
        return -(-self.size_u // ALIGN) * ALIGN

    def aligned_h(self) -> int:
        return -(-self.size_v // ALIGN) * ALIGN


@dataclass
class PatchSet:
    patches: list[Patch]
    frame_width: int
    frame_height: int


@dataclass
class FramePair:
    geometry: np.ndarray            # (H, W) uint8
    attribute: np.ndarray | None    # (3, H, W) uint8 YCbCr, None for colorless
    occupancy: np.ndarray           # (H, W) uint8 pixel-precision


@dataclass
class PatchTile:
    """Rasterized component before packing."""
    orientation: int
    d0: int
    shift_u: int
    shift_v: int
    depth: np.ndarray               # (h, w) uint8, unoccupied 0
    color: np.ndarray | None        # (h, w, 3) uint8 RGB, unoccupied mid-gray
    occ: np.ndarray                 # (h, w) uint8
    lost: int = 0
    index: int = 0


# ---------------------------------------------------------------------------
# segmentation


def segment_patches(cloud: PointCloud, k: int):
    """Label points by dominant outward axis, then split into 8-connected
    components on each orientation's projection plane.

    Returns (orientation labels per point, list of index arrays).
    """
    normals = estimate_normals(cloud, k).normals.copy()
    pts = cloud.points.astype(np.float64)
    centroid = pts.mean(axis=0)
    outward = ((pts - centroid) * normals).sum(axis=1) < 0
    normals[outward] *= -1.0
    # signed score per axis direction: +X,-X,+Y,-Y,+Z,-Z
    scores = np.stack([
        normals[:, 0], -normals[:, 0],
        normals[:, 1], -normals[:, 1],
        normals[:, 2], -normals[:, 2],
    ], axis=1)
    labels = np.argmax(scores, axis=1)

    components: list[np.ndarray] = []
    for orient in range(6):
        idx = np.nonzero(labels == orient)[0]
        if not len(idx):
            continue
        _, ua, va, _ = _AXES[orient]
        uv = cloud.points[idx][:, [ua, va]].astype(np.int64)
        components.extend(idx[m] for m in _connected_components(uv))
    return labels, components


def _label_grid(occ: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling; scipy when present, else label propagation."""
    try:
        from scipy import ndimage
    except ImportError:
        lab = np.where(occ, np.arange(occ.size).reshape(occ.shape) + 1, 0)
        pad = np.pad(lab, 1)
        while True:
            nb = pad[1:-1, 1:-1].copy()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    sl = pad[1 + dy:pad.shape[0] - 1 + dy, 1 + dx:pad.shape[1] - 1 + dx]
                    np.minimum(nb, np.where(sl > 0, sl, nb), out=nb)
            nb[~occ] = 0
            if np.array_equal(nb, pad[1:-1, 1:-1]):
                break
            pad[1:-1, 1:-1] = nb
        roots = np.unique(nb[occ])
        remap = np.zeros(int(nb.max()) + 1, dtype=np.int64)
        remap[roots] = np.arange(1, len(roots) + 1)
        return remap[nb], len(roots)
    return ndimage.label(occ, structure=np.ones((3, 3), dtype=int))


def _connected_components(uv: np.ndarray) -> list[np.ndarray]:
    """8-connectivity on occupied (u, v) cells; returns index arrays into uv."""
    u0 = uv.min(axis=0)
    grid = uv - u0
    w = int(grid[:, 0].max()) + 1
    h = int(grid[:, 1].max()) + 1
    occ = np.zeros((h, w), dtype=bool)
    occ[grid[:, 1], grid[:, 0]] = True
    lab, n = _label_grid(occ)
    point_lab = lab[grid[:, 1], grid[:, 0]]
    order = np.argsort(point_lab, kind="stable")
    bounds = np.searchsorted(point_lab[order], np.arange(1, n + 1))
    comps = []
    for ci in range(n):
        start = bounds[ci]
        end = bounds[ci + 1] if ci + 1 < n else len(order)
        comps.append(np.sort(order[start:end]))
    return comps


# ---------------------------------------------------------------------------
# rasterization


def rasterize_patch(points: np.ndarray, colors: np.ndarray | None,
                    orientation: int, bit_depth: int = 8) -> PatchTile:
    """Single-layer projection of one component: nearest-to-plane point wins.

    Raises SplitRequired when the recorded depth range exceeds 2^d - 1.
    """
    da, ua, va, neg = _AXES[orientation]
    top = (1 << bit_depth) - 1
    depth = points[:, da].astype(np.int64)
    if neg:
        depth = top - depth
    us = points[:, ua].astype(np.int64)
    vs = points[:, va].astype(np.int64)
    shift_u = int(us.min())
    shift_v = int(vs.min())
    d0 = int(depth.min())
    if int(depth.max()) - d0 > 255:
        raise SplitRequired(f"depth range {int(depth.max()) - d0} exceeds 255")
    w = int(us.max()) - shift_u + 1
    h = int(vs.max()) - shift_v + 1
    tile_d = np.zeros((h, w), dtype=np.uint8)
    occ = np.zeros((h, w), dtype=np.uint8)
    tile_c = None
    # order by depth descending so the nearest point lands last
    order = np.lexsort((-depth,))
    uu = (us - shift_u)[order]
    vv = (vs - shift_v)[order]
    dd = (depth - d0)[order]
    tile_d[vv, uu] = dd
    occ[vv, uu] = 1
    if colors is not None:
        tile_c = np.full((h, w, 3), 128, dtype=np.uint8)
        tile_c[vv, uu] = colors[order]
    lost = len(points) - int(occ.sum())
    return PatchTile(orientation, d0, shift_u, shift_v, tile_d, tile_c, occ, lost)


# ---------------------------------------------------------------------------
# packing


def pack_patches(tiles: list[PatchTile], frame_width: int) -> PatchSet:
    """Deterministic shelf packing on the 4-aligned grid.

    Sort by height desc, width desc, then original index; fill shelves left to
    right; frame height rounds up to a multiple of 64.
    """
    if frame_width % FRAME_ALIGN:
        raise ProjectionError(f"frame width {frame_width} not a multiple of {FRAME_ALIGN}")
    for i, t in enumerate(tiles):
        t.index = i
    order = sorted(tiles, key=lambda t: (-t.depth.shape[0], -t.depth.shape[1], t.index))
    patches: list[Patch | None] = [None] * len(tiles)
    shelf_y = 0
    shelf_h = 0
    cur_x = 0
    for t in order:
        h, w = t.depth.shape
        aw = -(-w // ALIGN) * ALIGN
        ah = -(-h // ALIGN) * ALIGN
        if aw > frame_width:
            raise ProjectionError(f"tile width {w} exceeds frame width {frame_width}")
        if cur_x + aw > frame_width:
            shelf_y += shelf_h
            shelf_h = 0
            cur_x = 0
        patches[t.index] = Patch(t.orientation, cur_x, shelf_y, w, h,
                                 t.d0, t.shift_u, t.shift_v)
        cur_x += aw
        shelf_h = max(shelf_h, ah)
    frame_h = -(-(shelf_y + shelf_h) // FRAME_ALIGN) * FRAME_ALIGN if tiles else FRAME_ALIGN
    return PatchSet([p for p in patches if p is not None], frame_width, frame_h)


# ---------------------------------------------------------------------------
# color space (BT.601 full range, exact rationals, round half up)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r = rgb[..., 0].astype(np.int64)
    g = rgb[..., 1].astype(np.int64)
    b = rgb[..., 2].astype(np.int64)

    def rhu(num, den):
        return (2 * num + den) // (2 * den)

    yy = rhu(299 * r + 587 * g + 114 * b, 1000)
    cb = rhu(128 * 1000000 - 168736 * r - 331264 * g + 500000 * b, 1000000)
    cr = rhu(128 * 1000000 + 500000 * r - 418688 * g - 81312 * b, 1000000)
    out = np.stack([yy, cb, cr], axis=-1)
    return np.clip(out, 0, 255).astype(np.uint8)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y = ycc[..., 0].astype(np.int64)
    cb = ycc[..., 1].astype(np.int64) - 128
    cr = ycc[..., 2].astype(np.int64) - 128

    def rhu(num, den):
        return (2 * num + den) // (2 * den)

    r = rhu(1000 * y + 1402 * cr, 1000)
    g = rhu(1000000 * y - 344136 * cb - 714136 * cr, 1000000)
    b = rhu(1000 * y + 1772 * cb, 1000)
    out = np.stack([r, g, b], axis=-1)
    return np.clip(out, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# frame assembly


def dilate_padding(plane: np.ndarray, occ: np.ndarray, radius: int = 4) -> np.ndarray:
    """Copy the nearest occupied value outward up to `radius` pixels.

    Deterministic neighbor preference per pass: left, right, up, down, then
    the four diagonals.
    """
    out = plane.copy()
    filled = occ.astype(bool).copy()
    shifts = ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))
    for _ in range(radius):
        base = filled.copy()
        vals = out.copy()
        for dy, dx in shifts:
            src_f = np.zeros_like(base)
            src_v = np.zeros_like(vals)
            ys = slice(max(0, dy), base.shape[0] + min(0, dy))
            yd = slice(max(0, -dy), base.shape[0] + min(0, -dy))
            xs = slice(max(0, dx), base.shape[1] + min(0, dx))
            xd = slice(max(0, -dx), base.shape[1] + min(0, -dx))
            src_f[yd, xd] = base[ys, xs]
            src_v[yd, xd] = vals[ys, xs]
            take = src_f & ~filled
            out[take] = src_v[take]
            filled |= take
    return out


def build_frames(patch_set: PatchSet, tiles: list[PatchTile],
                 padding: bool = False) -> FramePair:
    """Assemble geometry/attribute/occupancy frames from packed tiles."""
    w, h = patch_set.frame_width, patch_set.frame_height
    geometry = np.zeros((h, w), dtype=np.uint8)
    occupancy = np.zeros((h, w), dtype=np.uint8)
    has_color = any(t.color is not None for t in tiles)
    attribute = None
    if has_color:
        attribute = np.empty((3, h, w), dtype=np.uint8)
        attribute[0] = 128
        attribute[1] = 128
        attribute[2] = 128
    for patch, tile in zip(patch_set.patches, tiles):
        th, tw = tile.depth.shape
        sl = (slice(patch.v0, patch.v0 + th), slice(patch.u0, patch.u0 + tw))
        geometry[sl] = tile.depth
        occupancy[sl] = tile.occ
        if has_color:
            ycc = rgb_to_ycbcr(tile.color)
            m = tile.occ.astype(bool)
            for c in range(3):
                plane = attribute[c][sl]
                plane[m] = ycc[..., c][m]
    if padding:
        geometry = dilate_padding(geometry, occupancy)
        if has_color:
            for c in range(3):
                attribute[c] = dilate_padding(attribute[c], occupancy)
    return FramePair(geometry, attribute, occupancy)


def project_cloud(cloud: PointCloud, frame_width: int, k: int = 12,
                  padding: bool = False):
    """Full projection pipeline; splits components whose depth range overflows.

    Returns (FramePair, PatchSet, lost point count).
    """
    if len(cloud) < k + 1:
        raise DomainError("cloud too small to project")
    labels, components = segment_patches(cloud, k)
    work = [(int(labels[c[0]]), c) for c in components]
    tiles: list[PatchTile] = []
    lost = 0
    while work:
        orient, comp = work.pop(0)
        pts = cloud.points[comp]
        cols = cloud.colors[comp] if cloud.has_colors else None
        try:
            tile = rasterize_patch(pts, cols, orient, cloud.bit_depth)
        except SplitRequired:
            da = _AXES[orient][0]
            depth = pts[:, da]
            med = int(np.median(depth))
            lo = comp[depth <= med]
            hi = comp[depth > med]
            if not len(lo) or not len(hi):
                raise ProjectionError("cannot split degenerate component") from None
            work.append((orient, lo))
            work.append((orient, hi))
            continue
        lost += tile.lost
        tiles.append(tile)
    patch_set = pack_patches(tiles, frame_width)
    frames = build_frames(patch_set, tiles, padding)
    return frames, patch_set, lost


def reconstruct_cloud(geometry: np.ndarray, mask: np.ndarray,
                      patch_set: PatchSet, attribute: np.ndarray | None,
                      bit_depth: int = 8) -> PointCloud:
    """Back-project every masked pixel inside a patch box to a 3-D point.

    The mask is block-precision, so pixels just outside a patch's true extent
    (within its 4-aligned box) may emit border points.  Masked pixels outside
    every aligned patch box are a consistency error.  Duplicate positions are
    dropped keeping the first in global raster order; colors convert back via
    inverse BT.601.
    """
    h, w = geometry.shape
    owner = np.full((h, w), -1, dtype=np.int32)
    for i, p in enumerate(patch_set.patches):
        owner[p.v0:p.v0 + p.aligned_h(), p.u0:p.u0 + p.aligned_w()] = i
    mask = mask.astype(bool)
    if (mask & (owner < 0)).any():
        bad = np.argwhere(mask & (owner < 0))[0]
        raise ProjectionError(f"masked pixel outside every patch at {tuple(bad)}")
    ys, xs = np.nonzero(mask)
    pid = owner[ys, xs]
    top = (1 << bit_depth) - 1
    pts = np.empty((len(ys), 3), dtype=np.int64)
    for i, p in enumerate(patch_set.patches):
        sel = pid == i
        if not sel.any():
            continue
        da, ua, va, neg = _AXES[p.orientation]
        u = xs[sel] - p.u0 + p.shift_u
        v = ys[sel] - p.v0 + p.shift_v
        d = geometry[ys[sel], xs[sel]].astype(np.int64) + p.d0
        if neg:
            d = top - d
        pts[sel, da] = np.clip(d, 0, top)
        pts[sel, ua] = u
        pts[sel, va] = v
    cols = None
    if attribute is not None:
        ycc = np.stack([attribute[c][ys, xs] for c in range(3)], axis=-1)
        cols = ycbcr_to_rgb(ycc)
    # dedupe keeping first in raster order (ys, xs are already raster-ordered)
    _, first = np.unique(pts, axis=0, return_index=True)
    keep = np.sort(first)
    return PointCloud(pts[keep].astype(np.int32),
                      None if cols is None else cols[keep], bit_depth)


# ---------------------------------------------------------------------------
# debug dumps


def write_pgm(path, plane: np.ndarray) -> None:
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(plane.astype(np.uint8).tobytes())


def write_ppm(path, planes: np.ndarray) -> None:
    _, h, w = planes.shape
    rgb = ycbcr_to_rgb(np.stack([planes[0], planes[1], planes[2]], axis=-1))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def write_pbm(path, mask: np.ndarray) -> None:
    h, w = mask.shape
    bits = np.packbits(mask.astype(bool), axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(bits.tobytes())
