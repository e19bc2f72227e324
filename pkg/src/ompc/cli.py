"""Command-line front end.

Commands: generate | project | encode | decode | metrics | experiment | bdrate.
Exit codes: 0 ok, 2 input error, 3 corrupt stream.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path


from . import container as cont
from . import evaluation as ev
from .cloud import (DomainError, PlyParseError, cloud_metrics, estimate_normals,
                    geometry_psnr, load_ply, save_ply)
from .container import ContainerError
from .projection import write_pbm, write_pgm, write_ppm
from .rangecoder import DecodeError
from .synth import KINDS, generate_sequence

_CONFIG_KEYS = {"sequences", "frame_width", "frame_min_height", "qp_geom",
                "qp_attr_offset", "configs", "masking", "padding", "normals_k",
                "workers", "output_dir", "seed"}
_SEQ_KEYS = {"name", "kind", "frames", "seed", "points", "ply_dir"}


class InputError(Exception):
    pass


def load_config(path, overrides) -> ev.ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    for seq in raw.get("sequences", []):
        bad = set(seq) - _SEQ_KEYS
        if bad:
            raise InputError(f"unknown sequence keys: {sorted(bad)}")
        if "kind" not in seq and "ply_dir" not in seq:
            raise InputError("sequence needs 'kind' or 'ply_dir'")
        if "kind" in seq and seq["kind"] not in KINDS:
            raise InputError(f"unknown sequence kind '{seq['kind']}'")
    cfg = ev.ExperimentConfig()
    for key, val in raw.items():
        setattr(cfg, key, tuple(val) if key in ("qp_geom", "configs") else val)
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    if cfg.masking not in ("on", "off", "both"):
        raise InputError(f"masking must be on|off|both, got '{cfg.masking}'")
    for c in cfg.configs:
        if c not in ("all_intra", "ippp"):
            raise InputError(f"unknown coding config '{c}'")
    return cfg


def _load_ply_dir(path) -> list:
    files = sorted(Path(path).glob("*.ply"))
    if not files:
        raise InputError(f"no .ply files in {path}")
    return [load_ply(p) for p in files]


def cmd_generate(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    clouds = generate_sequence(args.kind, args.frames, args.seed, args.points)
    for i, c in enumerate(clouds):
        save_ply(c, out / f"frame_{i:03d}.ply")
    if not args.quiet:
        print(f"wrote {len(clouds)} PLY frames to {out}")
    return 0


def cmd_project(args) -> int:
    clouds = _load_ply_dir(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    frames, sets, lost = cont.project_sequence(clouds, args.width, args.k,
                                               args.padding)
    for i, fp in enumerate(frames):
        write_pgm(out / f"geometry_{i:03d}.pgm", fp.geometry)
        write_pbm(out / f"occupancy_{i:03d}.pbm", fp.occupancy)
        if fp.attribute is not None:
            write_ppm(out / f"attribute_{i:03d}.ppm", fp.attribute)
    if not args.quiet:
        print(f"projected {len(frames)} frames "
              f"({sets[0].frame_width}x{sets[0].frame_height}), {lost} points lost")
    return 0


def cmd_encode(args) -> int:
    clouds = _load_ply_dir(args.input)
    if any(c.bit_depth > 8 for c in clouds):
        raise InputError("encoder supports bit depth <= 8 (coordinates < 256)")
    frames, sets, _ = cont.project_sequence(clouds, args.width, args.k,
                                            args.padding)
    if args.masking == "both":
        raise InputError("encode needs --masking on or off")
    masking = args.masking != "off"
    enc = cont.encode_sequence(frames, sets, args.qp_geom, args.qp_attr,
                               masking, args.all_intra)
    Path(args.output).write_bytes(enc.data)
    if not args.quiet:
        for i, b in enumerate(enc.bits):
            print(f"frame {i}: geometry {b.geometry}b attribute {b.attribute}b "
                  f"occupancy {b.occupancy}b", file=sys.stderr)
        print(f"wrote {len(enc.data)} bytes to {args.output}")
    return 0


def cmd_decode(args) -> int:
    data = Path(args.input).read_bytes()
    res = cont.decode_container(data)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for i, (cloud, fp) in enumerate(zip(res.clouds, res.frames)):
        save_ply(cloud, out / f"frame_{i:03d}.ply")
        write_pgm(out / f"geometry_{i:03d}.pgm", fp.geometry)
        write_pbm(out / f"occupancy_{i:03d}.pbm", fp.occupancy)
        if fp.attribute is not None:
            write_ppm(out / f"attribute_{i:03d}.ppm", fp.attribute)
    if not args.quiet:
        print(f"decoded {len(res.clouds)} frames to {out}")
    return 0


def cmd_metrics(args) -> int:
    ref = _load_ply_dir(args.ref)
    deg = _load_ply_dir(args.deg)
    if len(ref) != len(deg):
        raise InputError(f"frame count mismatch: {len(ref)} vs {len(deg)}")
    rows = []
    for i, (r, d) in enumerate(zip(ref, deg)):
        nf = estimate_normals(r, args.k)
        m1, m2 = cloud_metrics(r, d, nf)
        color = ev.color_psnr(r, d) if r.has_colors and d.has_colors else (None,) * 3
        rows.append((i, m1, m2, geometry_psnr(m1, r.bit_depth),
                     geometry_psnr(m2, r.bit_depth)) + color)
    mean1 = sum(r[1] for r in rows) / len(rows)
    mean2 = sum(r[2] for r in rows) / len(rows)
    bd = ref[0].bit_depth
    out = args.output or "-"
    wr = csv.writer(sys.stdout if out == "-" else open(out, "w", newline=""))
    wr.writerow(["frame", "d1_mse", "d2_mse", "d1_db", "d2_db",
                 "y_db", "cb_db", "cr_db"])

    def fmt(v):
        if v is None:
            return ""
        return "inf" if math.isinf(v) else f"{v:.6f}"

    for row in rows:
        wr.writerow([row[0]] + [fmt(v) for v in row[1:]])
    wr.writerow(["mean", fmt(mean1), fmt(mean2),
                 fmt(geometry_psnr(mean1, bd)), fmt(geometry_psnr(mean2, bd)),
                 "", "", ""])
    return 0


def cmd_experiment(args) -> int:
    overrides = {"workers": args.workers, "output_dir": args.output,
                 "seed": args.seed}
    if args.masking is not None:
        overrides["masking"] = args.masking
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = ev.ExperimentConfig()
        for key, val in overrides.items():
            if val is not None:
                setattr(cfg, key, val)
    rows, summary = ev.run_experiment(cfg)
    ev.emit_report(rows, summary, cfg.output_dir)
    failed = [r for r in rows if r.error]
    if not args.quiet:
        for e in summary:
            print(f"{e['sequence']}/{e['config']}: geometry BD {e.get('geom_bd', float('nan')):+.2f}%  "
                  f"luma BD {e.get('luma_bd', float('nan')):+.2f}%")
        print(f"{len(rows) - len(failed)}/{len(rows)} cells ok; report in {cfg.output_dir}")
        for r in failed:
            print(f"FAILED {r.sequence}/{r.config}/qp{r.qp_geom}/mask={r.masking}: {r.error}",
                  file=sys.stderr)
    return 0 if not failed else 2


def _read_curve(path) -> ev.RdCurve:
    pts = []
    with open(path) as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip() or row[0].startswith(("#", "bits")):
                continue
            pts.append((int(float(row[0])), float(row[1])))
    return ev.RdCurve(pts)


def cmd_bdrate(args) -> int:
    delta = ev.bd_rate(_read_curve(args.anchor), _read_curve(args.test))
    print(f"{delta:+.4f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ompc",
                                 description="occupancy-masked point cloud codec")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="experiment config JSON")
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--output", default=None, help="output file or directory")
    common.add_argument("--masking", choices=("on", "off", "both"), default=None)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    g = add("generate", help="write a synthetic PLY sequence")
    g.add_argument("--kind", choices=KINDS, default="orbit")
    g.add_argument("--frames", type=int, default=8)
    g.add_argument("--points", type=int, default=23000)
    g.set_defaults(fn=cmd_generate, out_default="clouds")

    p = add("project", help="project PLYs to frame dumps")
    p.add_argument("--input", required=True)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--padding", action="store_true")
    p.set_defaults(fn=cmd_project, out_default="frames")

    e = add("encode", help="encode a PLY directory into a container")
    e.add_argument("--input", required=True)
    e.add_argument("--width", type=int, default=256)
    e.add_argument("--k", type=int, default=20)
    e.add_argument("--padding", action="store_true")
    e.add_argument("--qp-geom", type=int, default=27)
    e.add_argument("--qp-attr", type=int, default=32)
    e.add_argument("--all-intra", action="store_true")
    e.set_defaults(fn=cmd_encode, out_default="out.ompc")

    d = add("decode", help="decode a container to PLYs and dumps")
    d.add_argument("--input", required=True)
    d.set_defaults(fn=cmd_decode, out_default="decoded")

    m = add("metrics", help="D1/D2/color PSNR between two PLY directories")
    m.add_argument("--ref", required=True)
    m.add_argument("--deg", required=True)
    m.add_argument("--k", type=int, default=8)
    m.set_defaults(fn=cmd_metrics, out_default="-")

    x = add("experiment", help="run the baseline-vs-masked experiment")
    x.set_defaults(fn=cmd_experiment, out_default="results")

    b = add("bdrate", help="BD-rate between two bits,psnr CSV curves")
    b.add_argument("--anchor", required=True)
    b.add_argument("--test", required=True)
    b.set_defaults(fn=cmd_bdrate, out_default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.output is None:
        args.output = args.out_default
    try:
        return args.fn(args)
    except (InputError, PlyParseError, DomainError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ContainerError, DecodeError) as e:
        print(f"corrupt stream: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
