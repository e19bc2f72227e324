"""Experiment harness: A/B runs, quality metrics, BD-rate, CSV and SVG output.

A cell is one (sequence, coding config, QP pair, masking arm) encode+decode:
the harness verifies decoder fidelity, measures occupied-pixel PSNR and
point-cloud D1/D2, accounts bits exactly against the container, and reduces
per-arm rate-distortion curves to Bjontegaard deltas.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import container as cont
from .cloud import (DomainError, PointCloud, cloud_metrics, estimate_normals,
                    geometry_psnr)
from .synth import generate_sequence

GEOM_QPS = (22, 27, 32, 37)
ATTR_QP_OFFSET = 5


# ---------------------------------------------------------------------------
# metrics


def psnr_occupied(orig: np.ndarray, recon: np.ndarray, mask: np.ndarray) -> float:
    """PSNR over mask=1 pixels only; exact match maps to +inf."""
    m = mask != 0
    n = int(m.sum())
    if n == 0:
        raise DomainError("psnr_occupied needs at least one occupied pixel")
    d = orig.astype(np.int64) - recon.astype(np.int64)
    sse = int((d[m] ** 2).sum())
    if sse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 * 255.0 * n / sse)


def color_psnr(ref: PointCloud, deg: PointCloud) -> tuple[float, float, float]:
    """Per-channel YCbCr PSNR between nearest-neighbor-matched cloud colors."""
    from .cloud import nearest_neighbors
    from .projection import rgb_to_ycbcr

    cr_ = rgb_to_ycbcr(ref.colors).astype(np.int64)
    cd_ = rgb_to_ycbcr(deg.colors).astype(np.int64)
    i1, _ = nearest_neighbors(ref.points, deg.points)
    i2, _ = nearest_neighbors(deg.points, ref.points)
    out = []
    for c in range(3):
        fwd = float(((cr_[:, c] - cd_[i1, c]) ** 2).mean())
        bwd = float(((cd_[:, c] - cr_[i2, c]) ** 2).mean())
        mse = max(fwd, bwd)
        out.append(math.inf if mse == 0 else 10.0 * math.log10(255.0 ** 2 / mse))
    return tuple(out)


@dataclass
class RdCurve:
    points: list[tuple[int, float]]  # (bits, quality dB), sorted by bits

    def __post_init__(self):
        self.points = sorted(self.points)
        bits = [b for b, _ in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bits, bits[1:])):
            raise DomainError("curve bits must be strictly increasing")
        if any(not math.isfinite(q) for _, q in self.points):
            raise DomainError("curve quality must be finite")


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Bjontegaard rate delta in percent (negative = test saves bits).

    Cubic fit of log10(bits) over quality, integrated on the common interval.
    """
    if len(anchor.points) < 4 or len(test.points) < 4:
        raise DomainError("bd_rate needs at least 4 points per curve")
    qa = np.array([q for _, q in anchor.points])
    qt = np.array([q for _, q in test.points])
    ra = np.log10([b for b, _ in anchor.points])
    rt = np.log10([b for b, _ in test.points])
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if hi <= lo:
        raise DomainError("curves do not overlap in quality")
    pa = np.polyfit(qa, ra, 3)
    pt = np.polyfit(qt, rt, 3)
    ia = np.polyval(np.polyint(pa), [lo, hi])
    it = np.polyval(np.polyint(pt), [lo, hi])
    avg = ((it[1] - it[0]) - (ia[1] - ia[0])) / (hi - lo)
    return (10.0 ** avg - 1.0) * 100.0


# ---------------------------------------------------------------------------
# experiment cells


@dataclass
class CellResult:
    sequence: str
    config: str          # all_intra | ippp
    masking: bool
    qp_geom: int
    qp_attr: int
    bits_geom: int
    bits_attr: int
    bits_occ: int
    bits_total: int      # container size * 8
    geom_db: float       # occupied-pixel PSNR of the geometry plane
    d1_db: float
    d2_db: float
    y_db: float
    cb_db: float
    cr_db: float
    enc_ms: float
    dec_ms: float
    error: str = ""


@dataclass
class ExperimentConfig:
    sequences: list[dict] = field(default_factory=lambda: [
        {"name": "orbit", "kind": "orbit", "frames": 8, "seed": 3, "points": 23000}])
    frame_width: int = 256
    frame_min_height: int = 256
    qp_geom: tuple = GEOM_QPS
    qp_attr_offset: int = ATTR_QP_OFFSET
    configs: tuple = ("all_intra", "ippp")
    masking: str = "both"        # on | off | both
    padding: bool = True
    normals_k: int = 20
    workers: int = 1
    output_dir: str = "results"
    seed: int = 0


def _pooled_psnr(sses: list[int], counts: list[int]) -> float:
    total = sum(sses)
    n = sum(counts)
    if n == 0:
        return math.nan
    if total == 0:
        return math.inf
    return 10.0 * math.log10(255.0 * 255.0 * n / total)


def run_cell(name: str, frames, patch_sets, originals: list[PointCloud],
             normals, config: str, qp_geom: int, qp_attr: int,
             masking: bool) -> CellResult:
    """Encode, decode, verify decoder fidelity, measure quality."""
    all_intra = config == "all_intra"
    enc = cont.encode_sequence(frames, patch_sets, qp_geom, qp_attr,
                               masking, all_intra, reconstruct=False)
    dec = cont.decode_container(enc.data)
    for ef, df in zip(enc.recon_frames, dec.frames):
        if not np.array_equal(ef.geometry, df.geometry):
            raise AssertionError("decoder geometry mismatch")
        if (ef.attribute is None) != (df.attribute is None):
            raise AssertionError("decoder attribute presence mismatch")
        if ef.attribute is not None and not np.array_equal(ef.attribute, df.attribute):
            raise AssertionError("decoder attribute mismatch")

    g_sse, y_sse, cb_sse, cr_sse, n_occ = [], [], [], [], []
    d1_sum = d2_sum = 0.0
    has_attr = frames[0].attribute is not None
    for fi, (fp, df) in enumerate(zip(frames, dec.frames)):
        sel = (enc.masks[fi] & fp.occupancy) != 0  # true projected pixels
        n_occ.append(int(sel.sum()))
        d = fp.geometry.astype(np.int64) - df.geometry.astype(np.int64)
        g_sse.append(int((d[sel] ** 2).sum()))
        if has_attr:
            for store, c in ((y_sse, 0), (cb_sse, 1), (cr_sse, 2)):
                dd = fp.attribute[c].astype(np.int64) - df.attribute[c].astype(np.int64)
                store.append(int((dd[sel] ** 2).sum()))
        m1, m2 = cloud_metrics(originals[fi], dec.clouds[fi], normals[fi])
        d1_sum += m1
        d2_sum += m2
    nf = len(frames)
    bd = originals[0].bit_depth
    d1_db = geometry_psnr(d1_sum / nf, bd)
    d2_db = geometry_psnr(d2_sum / nf, bd)
    bits_g = sum(b.geometry for b in enc.bits)
    bits_a = sum(b.attribute for b in enc.bits)
    bits_o = sum(b.occupancy for b in enc.bits)
    geom_db = _pooled_psnr(g_sse, n_occ)
    return CellResult(
        name, config, masking, qp_geom, qp_attr, bits_g, bits_a, bits_o,
        len(enc.data) * 8, geom_db, d1_db, d2_db,
        _pooled_psnr(y_sse, n_occ) if has_attr else geom_db,
        _pooled_psnr(cb_sse, n_occ) if has_attr else math.nan,
        _pooled_psnr(cr_sse, n_occ) if has_attr else math.nan,
        enc.enc_ms, dec.dec_ms)


def _cell_job(args):
    try:
        return run_cell(*args)
    except Exception as e:  # failed cells are recorded, the run continues
        name, _, _, _, _, config, qpg, qpa, masking = args
        return CellResult(name, config, masking, qpg, qpa, 0, 0, 0, 0,
                          math.nan, math.nan, math.nan, math.nan, math.nan,
                          math.nan, 0.0, 0.0, error=f"{type(e).__name__}: {e}")


def _load_sequence(spec: dict, default_seed: int) -> tuple[str, list[PointCloud]]:
    if "ply_dir" in spec:
        from pathlib import Path
        from .cloud import load_ply
        paths = sorted(Path(spec["ply_dir"]).glob("*.ply"))
        if not paths:
            raise DomainError(f"no PLY files in {spec['ply_dir']}")
        return spec.get("name", Path(spec["ply_dir"]).name), [load_ply(p) for p in paths]
    name = spec.get("name", spec["kind"])
    clouds = generate_sequence(spec["kind"], spec.get("frames", 8),
                               spec.get("seed", default_seed),
                               spec.get("points", 26000))
    return name, clouds


def run_experiment(cfg: ExperimentConfig):
    """All cells for all sequences; returns (rows, bd_summary)."""
    arms = {"on": [True], "off": [False], "both": [False, True]}[cfg.masking]
    jobs = []
    for spec in cfg.sequences:
        name, clouds = _load_sequence(spec, cfg.seed)
        frames, sets, _ = cont.project_sequence(clouds, cfg.frame_width,
                                                cfg.normals_k, cfg.padding,
                                                cfg.frame_min_height)
        normals = [estimate_normals(c, 8) for c in clouds]
        for config in cfg.configs:
            for qpg in cfg.qp_geom:
                qpa = min(qpg + cfg.qp_attr_offset, 51)
                for masking in arms:
                    jobs.append((name, frames, sets, clouds, normals,
                                 config, qpg, qpa, masking))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_cell_job, jobs))
    else:
        rows = [_cell_job(j) for j in jobs]
    rows.sort(key=lambda r: (r.sequence, r.config, r.qp_geom, r.masking))
    return rows, bd_summary(rows)


def bd_summary(rows: list[CellResult]) -> list[dict]:
    """Per (sequence, config): BD-rate of masked vs baseline.

    Geometry curve: geometry-segment bits vs occupied geometry PSNR (the Y
    column for colorless content) and D1; attribute curve: attribute bits vs
    occupied luma PSNR.
    """
    out = []
    groups: dict[tuple, dict[bool, list[CellResult]]] = {}
    for r in rows:
        if r.error:
            continue
        groups.setdefault((r.sequence, r.config), {}).setdefault(r.masking, []).append(r)
    for (seq, config), arms in sorted(groups.items()):
        if False in arms and True in arms and len(arms[False]) >= 4:
            base = sorted(arms[False], key=lambda r: r.qp_geom)
            prop = sorted(arms[True], key=lambda r: r.qp_geom)
            entry = {"sequence": seq, "config": config}

            def _try(key, rate_of, qual_of):
                try:
                    entry[key] = bd_rate(
                        RdCurve([(rate_of(r), qual_of(r)) for r in base]),
                        RdCurve([(rate_of(r), qual_of(r)) for r in prop]))
                except DomainError as e:
                    entry[key] = math.nan
                    entry[key + "_error"] = str(e)

            _try("geom_bd", lambda r: r.bits_geom, lambda r: r.geom_db)
            _try("luma_bd", lambda r: r.bits_attr, lambda r: r.y_db)
            _try("d1_bd", lambda r: r.bits_geom + r.bits_occ, lambda r: r.d1_db)
            out.append(entry)
    return out


# ---------------------------------------------------------------------------
# report emission


CSV_FIELDS = ["sequence", "config", "masking", "qp_geom", "qp_attr",
              "bits_geom", "bits_attr", "bits_occ", "d1_db", "d2_db",
              "y_db", "cb_db", "cr_db", "enc_ms", "dec_ms"]


def write_csv(rows: list[CellResult], path) -> None:
    def fmt(v):
        if isinstance(v, float):
            if math.isinf(v):
                return "inf"
            if math.isnan(v):
                return "nan"
            return f"{v:.4f}"
        return v

    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_FIELDS)
        for r in rows:
            d = asdict(r)
            wr.writerow([fmt(d[k]) for k in CSV_FIELDS])


def write_svg_rd(path, title: str, curves: dict[str, list[tuple[float, float]]]) -> None:
    """Minimal R-D plot: axes, one polyline per curve, legend."""
    w, h = 640, 440
    ml, mr, mt, mb = 70, 20, 40, 50
    pts_all = [p for c in curves.values() for p in c]
    if not pts_all:
        return
    xs = [p[0] for p in pts_all]
    ys = [p[1] for p in pts_all if math.isfinite(p[1])]
    if not ys:
        return
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (w - ml - mr)

    def py(y):
        return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{w/2:.0f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
             f'<line x1="{ml}" y1="{h-mb}" x2="{w-mr}" y2="{h-mb}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h-mb}" stroke="black"/>',
             f'<text x="{w/2:.0f}" y="{h-12}" text-anchor="middle" font-size="12">kilobits</text>',
             f'<text x="16" y="{h/2:.0f}" font-size="12" transform="rotate(-90 16 {h/2:.0f})" '
             f'text-anchor="middle">PSNR (dB)</text>']
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(f'<text x="{px(xv):.1f}" y="{h-mb+16}" text-anchor="middle" '
                     f'font-size="10">{xv/1000.0:.0f}</text>')
        parts.append(f'<text x="{ml-6}" y="{py(yv)+4:.1f}" text-anchor="end" '
                     f'font-size="10">{yv:.1f}</text>')
    for ci, (name, pts) in enumerate(sorted(curves.items())):
        col = colors[ci % len(colors)]
        finite = [(x, y) for x, y in sorted(pts) if math.isfinite(y)]
        path_d = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in finite)
        parts.append(f'<polyline points="{path_d}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for x, y in finite:
            parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{col}"/>')
        parts.append(f'<rect x="{w-170}" y="{mt+18*ci}" width="12" height="3" fill="{col}"/>')
        parts.append(f'<text x="{w-152}" y="{mt+18*ci+5}" font-size="11">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def emit_report(rows: list[CellResult], summary: list[dict], out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(rows, os.path.join(out_dir, "results.csv"))
    with open(os.path.join(out_dir, "bd_rates.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sequence", "config", "geom_bd_pct", "luma_bd_pct", "d1_bd_pct"])
        for e in summary:
            wr.writerow([e["sequence"], e["config"],
                         f"{e.get('geom_bd', math.nan):.3f}",
                         f"{e.get('luma_bd', math.nan):.3f}",
                         f"{e.get('d1_bd', math.nan):.3f}"])
    bygroup: dict[tuple, list[CellResult]] = {}
    for r in rows:
        if not r.error:
            bygroup.setdefault((r.sequence, r.config), []).append(r)
    for (seq, config), rs in bygroup.items():
        for metric, rate_of, qual_of in (
                ("geometry", lambda r: r.bits_geom, lambda r: r.geom_db),
                ("luma", lambda r: r.bits_attr, lambda r: r.y_db),
                ("d1", lambda r: r.bits_geom + r.bits_occ, lambda r: r.d1_db)):
            curves: dict[str, list] = {}
            for r in rs:
                label = "masked" if r.masking else "baseline"
                q = qual_of(r)
                if rate_of(r) > 0 and math.isfinite(q):
                    curves.setdefault(label, []).append((rate_of(r), q))
            if curves:
                write_svg_rd(os.path.join(out_dir, f"{seq}_{config}_{metric}.svg"),
                             f"{seq} / {config} / {metric}", curves)
