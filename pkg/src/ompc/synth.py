"""Synthetic point-cloud sequences for the evaluation harness.

Deterministic per seed (legacy MT19937 stream, frozen across numpy versions).
"orbit" moves rigid bodies between frames to exercise inter prediction; the
others are static shapes.  Colors are a smooth positional gradient plus
seeded noise.
"""

from __future__ import annotations

import math

import numpy as np

from .cloud import PointCloud, voxelize

KINDS = ("sphere", "torus", "blobs", "orbit")


def _colorize(points: np.ndarray, rng: np.random.RandomState) -> np.ndarray:
    base = 40 + points * np.array([0.55, 0.65, 0.45])
    noise = rng.randint(-10, 11, size=points.shape)
    return np.clip(base + noise, 0, 255).astype(np.uint8)


def _sphere_points(rng, center, radius, n):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + radius * d


def _torus_points(rng, center, ring_r, tube_r, n):
    theta = rng.uniform(0, 2 * np.pi, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    x = (ring_r + tube_r * np.cos(phi)) * np.cos(theta)
    y = (ring_r + tube_r * np.cos(phi)) * np.sin(theta)
    z = tube_r * np.sin(phi)
    return center + np.stack([x, y, z], axis=1)


def _blob_points(rng, n_blobs, n_each):
    pts = []
    for _ in range(n_blobs):
        c = rng.uniform(60, 196, 3)
        r = rng.uniform(18, 36)
        pts.append(_sphere_points(rng, c, r, n_each))
    return np.concatenate(pts)


def _rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    a = np.cos(angle / 2.0)
    b, c, d = -axis * np.sin(angle / 2.0)
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c + a * d), 2 * (b * d - a * c)],
        [2 * (b * c - a * d), a * a + c * c - b * b - d * d, 2 * (c * d + a * b)],
        [2 * (b * d + a * c), 2 * (c * d - a * b), a * a + d * d - b * b - c * c],
    ])


def generate_sequence(kind: str, frames: int, seed: int,
                      points: int = 6000) -> list[PointCloud]:
    """Deterministic synthetic sequence of voxelized clouds in a 256^3 cube."""
    if kind not in KINDS:
        raise ValueError(f"unknown sequence kind '{kind}' (use one of {KINDS})")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = np.random.RandomState(seed)
    if kind == "sphere":
        raw = _sphere_points(rng, np.array([128.0, 128, 128]), 80.0, points)
        static = True
    elif kind == "torus":
        raw = _torus_points(rng, np.array([128.0, 128, 128]), 70.0, 26.0, points)
        static = True
    elif kind == "blobs":
        raw = _blob_points(rng, 5, points // 5)
        static = True
    else:
        static = False

    out: list[PointCloud] = []
    if static:
        colors = _colorize(raw, rng)
        cloud = voxelize(raw, colors)
        return [cloud for _ in range(frames)]

    # orbit: rigid bodies translating on circular tracks while spinning;
    # body sizes follow the point budget so sampled surfaces stay connected
    bodies = []
    splits = (0.55, 0.45)
    density = 1.15
    for b, frac in enumerate(splits):
        n = int(points * frac)
        if b % 2 == 0:
            r = math.sqrt(n / (4 * math.pi * density))
            body = _sphere_points(rng, np.zeros(3), r, n)
        else:
            ring = math.sqrt(n / (4 * math.pi ** 2 * 0.4 * density))
            body = _torus_points(rng, np.zeros(3), ring, 0.4 * ring, n)
        track_r = rng.uniform(42, 62)
        phase = rng.uniform(0, 2 * np.pi)
        spin_axis = rng.standard_normal(3)
        colors = _colorize(body + 128.0, rng)
        bodies.append((body, track_r, phase, spin_axis, colors))
    for t in range(frames):
        pts = []
        cols = []
        for body, track_r, phase, spin_axis, colors in bodies:
            ang = phase + t * (2 * np.pi / 48.0)
            rot = _rotation(spin_axis, t * 0.09)
            center = np.array([128 + track_r * np.cos(ang),
                               128 + track_r * np.sin(ang),
                               128.0])
            pts.append(body @ rot.T + center)
            cols.append(colors)
        cloud = voxelize(np.concatenate(pts), np.concatenate(cols))
        out.append(cloud)
    return out
