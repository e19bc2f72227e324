"""Container bitstream binding occupancy, geometry and attribute streams.

Layout (all little-endian):
  magic "OMPC", version u8 (=1), flags u8, frame_count u16, width u16,
  height u16, qp_geom u8, qp_attr u8, then per frame:
    patch table: count u16, per patch orientation u8, u0 u16, v0 u16,
                 size_u u16, size_v u16, d0 u16, shift_u u16, shift_v u16,
                 shift_axis u16 (= d0, kept for the documented field set)
    occupancy payload:  u32 length + bytes
    geometry segment:   u32 length + bytes
    attribute segment:  u32 length + bytes (length 0 = colorless sequence)

flags bit0: occupancy masking was enabled (informational);
flags bit1: all-intra coding (the decoder derives frame types from it).
Patch tables are per frame because packing is per frame.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numpy as np

from . import codec, occupancy
from .cloud import PointCloud
from .projection import (FramePair, Patch, PatchSet, ProjectionError,
                         project_cloud, reconstruct_cloud)
from .rangecoder import DecodeError

MAGIC = b"OMPC"
VERSION = 1


class ContainerError(Exception):
    """Corrupt, truncated, or unsupported container."""


@dataclass
class FrameBits:
    geometry: int
    attribute: int
    occupancy: int


@dataclass
class EncodeResult:
    data: bytes
    recon_frames: list[FramePair]        # encoder-side reconstructions
    clouds: list[PointCloud]             # encoder-side reconstructed clouds
    bits: list[FrameBits]
    enc_ms: float
    masks: list[np.ndarray]              # block-precision masks actually used


def _pack_patch(p: Patch) -> bytes:
    return struct.pack("<BHHHHHHHH", p.orientation, p.u0, p.v0, p.size_u,
                       p.size_v, p.d0, p.shift_u, p.shift_v, p.d0)


def project_sequence(clouds: list[PointCloud], frame_width: int, k: int = 12,
                     padding: bool = False, min_height: int = 0):
    """Project every cloud and pad all frames to a common height."""
    projected = [project_cloud(c, frame_width, k, padding) for c in clouds]
    height = max(min_height, max(ps.frame_height for _, ps, _ in projected))
    frames: list[FramePair] = []
    sets: list[PatchSet] = []
    lost_total = 0
    for fp, ps, lost in projected:
        h = fp.geometry.shape[0]
        if h < height:
            pad = ((0, height - h), (0, 0))
            geometry = np.pad(fp.geometry, pad)
            occ = np.pad(fp.occupancy, pad)
            attribute = None
            if fp.attribute is not None:
                attribute = np.stack(
                    [np.pad(fp.attribute[c], pad, constant_values=128) for c in range(3)])
            fp = FramePair(geometry, attribute, occ)
        ps.frame_height = height
        frames.append(fp)
        sets.append(ps)
        lost_total += lost
    return frames, sets, lost_total


def encode_sequence(frames: list[FramePair], patch_sets: list[PatchSet],
                    qp_geom: int, qp_attr: int, masking: bool,
                    all_intra: bool, reconstruct: bool = True) -> EncodeResult:
    """Encode projected frames into a container."""
    if not frames:
        raise ValueError("no frames to encode")
    t0 = time.perf_counter()
    w = patch_sets[0].frame_width
    h = patch_sets[0].frame_height
    has_attr = frames[0].attribute is not None
    flags = (1 if masking else 0) | (2 if all_intra else 0)
    head = MAGIC + struct.pack("<BBHHHBB", VERSION, flags, len(frames), w, h,
                               qp_geom, qp_attr)
    body = bytearray(head)
    recon_frames: list[FramePair] = []
    clouds: list[PointCloud] = []
    bits: list[FrameBits] = []
    masks: list[np.ndarray] = []
    ref_g = ref_a = None
    for fi, (fp, ps) in enumerate(zip(frames, patch_sets)):
        blocks = occupancy.downsample(fp.occupancy)
        occ_payload = occupancy.encode_blocks(blocks)
        mask = occupancy.upsample(blocks)
        masks.append(mask)

        intra = all_intra or fi == 0
        rdo_g = codec.RdoContext.create(qp_geom, mask, masking)
        eg = codec.encode_frame([fp.geometry], rdo_g, None if intra else ref_g)
        ea = None
        if has_attr:
            rdo_a = codec.RdoContext.create(qp_attr, mask, masking)
            ea = codec.encode_frame([fp.attribute[0], fp.attribute[1], fp.attribute[2]],
                                    rdo_a, None if intra else ref_a)
        body += struct.pack("<H", len(ps.patches))
        for p in ps.patches:
            body += _pack_patch(p)
        body += struct.pack("<I", len(occ_payload)) + occ_payload
        body += struct.pack("<I", len(eg.payload)) + eg.payload
        if ea is not None:
            body += struct.pack("<I", len(ea.payload)) + ea.payload
        else:
            body += struct.pack("<I", 0)

        ref_g = codec.ReferenceFrame(eg.recon, eg.mv_grid, eg.inter_grid)
        attr_planes = None
        if ea is not None:
            ref_a = codec.ReferenceFrame(ea.recon, ea.mv_grid, ea.inter_grid)
            attr_planes = np.stack(ea.recon)
        rec_fp = FramePair(eg.recon[0], attr_planes, mask)
        recon_frames.append(rec_fp)
        if reconstruct:
            clouds.append(reconstruct_cloud(eg.recon[0], mask, ps, attr_planes))
        bits.append(FrameBits(len(eg.payload) * 8,
                              (len(ea.payload) * 8 if ea is not None else 0),
                              len(occ_payload) * 8))
    return EncodeResult(bytes(body), recon_frames, clouds, bits,
                        (time.perf_counter() - t0) * 1000.0, masks)


@dataclass
class DecodeResult:
    frames: list[FramePair]
    clouds: list[PointCloud]
    patch_sets: list[PatchSet]
    masking: bool
    all_intra: bool
    qp_geom: int
    qp_attr: int
    dec_ms: float = 0.0


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ContainerError("container truncated")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def decode_container(data: bytes, reconstruct: bool = True) -> DecodeResult:
    t0 = time.perf_counter()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ContainerError("bad magic")
    version = r.u8()
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    flags = r.u8()
    n_frames = r.u16()
    w = r.u16()
    h = r.u16()
    qp_g = r.u8()
    qp_a = r.u8()
    if w % 64 or h % 64 or not (0 < w <= 8192 and 0 < h <= 8192):
        raise ContainerError(f"implausible frame dims {w}x{h}")
    if qp_g > 51 or qp_a > 51:
        raise ContainerError("qp out of range")
    masking = bool(flags & 1)
    all_intra = bool(flags & 2)
    frames: list[FramePair] = []
    clouds: list[PointCloud] = []
    sets: list[PatchSet] = []
    ref_g = ref_a = None
    try:
        for fi in range(n_frames):
            n_patches = r.u16()
            patches = []
            for _ in range(n_patches):
                o, u0, v0, su, sv, d0, shu, shv, _sha = struct.unpack(
                    "<BHHHHHHHH", r.take(17))
                if o > 5 or u0 + su > w or v0 + sv > h or u0 % 4 or v0 % 4:
                    raise ContainerError("invalid patch record")
                patches.append(Patch(o, u0, v0, su, sv, d0, shu, shv))
            ps = PatchSet(patches, w, h)
            occ_payload = r.take(r.u32())
            blocks = occupancy.decode_blocks(occ_payload)
            if blocks.shape != (h // 4, w // 4):
                raise ContainerError("occupancy dims disagree with header")
            mask = occupancy.upsample(blocks)
            geom_payload = r.take(r.u32())
            g_planes, g_mv, g_ig, _ = codec.decode_frame(
                geom_payload, qp_g, (h, w), 1, None if (all_intra or fi == 0) else ref_g)
            ref_g = codec.ReferenceFrame(g_planes, g_mv, g_ig)
            attr_len = r.u32()
            attribute = None
            if attr_len:
                attr_payload = r.take(attr_len)
                a_planes, a_mv, a_ig, _ = codec.decode_frame(
                    attr_payload, qp_a, (h, w), 3, None if (all_intra or fi == 0) else ref_a)
                ref_a = codec.ReferenceFrame(a_planes, a_mv, a_ig)
                attribute = np.stack(a_planes)
            fp = FramePair(g_planes[0], attribute, mask)
            frames.append(fp)
            sets.append(ps)
            if reconstruct:
                clouds.append(reconstruct_cloud(g_planes[0], mask, ps, attribute))
    except (DecodeError, ProjectionError) as e:
        raise ContainerError(str(e)) from e
    if r.off != len(data):
        raise ContainerError(f"{len(data) - r.off} trailing bytes")
    return DecodeResult(frames, clouds, sets, masking, all_intra, qp_g, qp_a,
                        (time.perf_counter() - t0) * 1000.0)
