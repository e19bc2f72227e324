import math

import numpy as np
import pytest

from ompc.cloud import (DomainError, NormalField, PlyParseError, PointCloud,
                        d1_mse, d2_mse, estimate_normals, geometry_psnr,
                        load_ply, nearest_neighbors, save_ply, voxelize)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_ply_with_colors(tmp_path):
    p = _write(tmp_path / "a.ply", "\n".join([
        "ply", "format ascii 1.0", "element vertex 3",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
        "0 0 0 255 0 0", "1 2 3 0 255 0", "4 5 6 0 0 255", ""]))
    c = load_ply(p)
    assert len(c) == 3 and c.has_colors
    assert c.bit_depth == 8
    assert np.array_equal(c.points[1], [1, 2, 3])


def test_load_ply_dedupes(tmp_path):
    p = _write(tmp_path / "b.ply", "\n".join([
        "ply", "format ascii 1.0", "element vertex 2",
        "property float x", "property float y", "property float z",
        "end_header", "1 2 3", "1 2 3", ""]))
    assert len(load_ply(p)) == 1


def test_load_ply_missing_z_is_parse_error(tmp_path):
    p = _write(tmp_path / "c.ply", "\n".join([
        "ply", "format ascii 1.0", "element vertex 1",
        "property float x", "property float y",
        "end_header", "1 2", ""]))
    with pytest.raises(PlyParseError):
        load_ply(p)


def test_load_ply_negative_coordinate_domain_error(tmp_path):
    p = _write(tmp_path / "d.ply", "\n".join([
        "ply", "format ascii 1.0", "element vertex 1",
        "property float x", "property float y", "property float z",
        "end_header", "-1 0 0", ""]))
    with pytest.raises(DomainError):
        load_ply(p)


def test_parse_error_carries_line_number(tmp_path):
    p = _write(tmp_path / "e.ply", "not_ply\n")
    with pytest.raises(PlyParseError, match="line 1"):
        load_ply(p)


def test_save_load_round_trip(tmp_path):
    rng = np.random.RandomState(0)
    pts = rng.randint(0, 64, size=(100, 3))
    cloud = voxelize(pts, rng.randint(0, 256, size=(100, 3)))
    save_ply(cloud, tmp_path / "r.ply")
    back = load_ply(tmp_path / "r.ply")
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.colors, cloud.colors)


def test_save_empty_and_colorless(tmp_path):
    empty = PointCloud(np.zeros((0, 3), np.int32), None)
    save_ply(empty, tmp_path / "e.ply")
    assert len(load_ply(tmp_path / "e.ply")) == 0
    plain = PointCloud(np.array([[1, 2, 3]]), None)
    save_ply(plain, tmp_path / "p.ply")
    back = load_ply(tmp_path / "p.ply")
    assert back.colors is None


def test_bit_depth_inference():
    c = voxelize(np.array([[0, 0, 0], [300, 10, 10]]), None)
    assert c.bit_depth == 9
    c = voxelize(np.array([[0, 0, 0], [255, 255, 255]]), None)
    assert c.bit_depth == 8


def _grid_plate(n=5, z=5):
    xs, ys = np.meshgrid(np.arange(n), np.arange(n))
    return np.stack([xs.ravel(), ys.ravel(), np.full(n * n, z)], axis=1)


def test_normals_coplanar_plate():
    cloud = PointCloud(_grid_plate(5), None)
    nf = estimate_normals(cloud, 8)
    assert np.allclose(np.abs(nf.normals[:, 2]), 1.0, atol=1e-9)
    assert np.all(nf.normals[:, 2] > 0)  # largest component positive


def test_normals_degenerate_line():
    pts = np.stack([np.arange(12), np.zeros(12, int), np.zeros(12, int)], axis=1)
    nf = estimate_normals(PointCloud(pts, None), 4)
    assert np.abs(nf.normals @ np.array([1.0, 0, 0])).max() < 1e-6


def test_normals_unit_length_and_size_checks():
    cloud = PointCloud(_grid_plate(4), None)
    nf = estimate_normals(cloud, 6)
    assert np.allclose(np.linalg.norm(nf.normals, axis=1), 1.0, atol=1e-6)
    with pytest.raises(DomainError):
        estimate_normals(PointCloud(_grid_plate(2), None), 4)
    with pytest.raises(DomainError):
        estimate_normals(cloud, 2)


def test_normals_noisy_sphere_radial():
    rng = np.random.RandomState(1)
    dirs = rng.standard_normal((1000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cloud = voxelize(128 + 90 * dirs, None)
    nf = estimate_normals(cloud, 8)
    radial = cloud.points - 128.0
    radial /= np.linalg.norm(radial, axis=1, keepdims=True)
    agree = np.abs((nf.normals * radial).sum(axis=1)).mean()
    assert agree > 0.9


def _brute_nn_mse(a, b):
    total = 0
    for p in a:
        d = ((b - p) ** 2).sum(axis=1)
        total += int(d.min())
    return total / len(a)


def test_d1_trivial_cases():
    c = voxelize(np.array([[0, 0, 0], [5, 5, 5]]), None)
    assert d1_mse(c, c) == 0.0
    a = PointCloud(np.array([[0, 0, 0]]), None)
    b = PointCloud(np.array([[1, 0, 0]]), None)
    assert d1_mse(a, b) == 1.0
    with pytest.raises(DomainError):
        d1_mse(a, PointCloud(np.zeros((0, 3), np.int32), None))


def test_d1_matches_brute_force():
    rng = np.random.RandomState(2)
    a = voxelize(rng.randint(0, 32, size=(500, 3)), None)
    b = voxelize(rng.randint(0, 32, size=(500, 3)), None)
    want = max(_brute_nn_mse(a.points.astype(np.int64), b.points.astype(np.int64)),
               _brute_nn_mse(b.points.astype(np.int64), a.points.astype(np.int64)))
    assert d1_mse(a, b) == want


def test_nn_ties_break_to_lowest_index():
    ref = np.array([[2, 0, 0], [0, 2, 0], [0, 0, 2]])
    idx, d2 = nearest_neighbors(np.array([[0, 0, 0]]), ref)
    assert idx[0] == 0 and d2[0] == 4


def test_d2_displacement_along_normal():
    plate = PointCloud(_grid_plate(8, z=5), None)
    nf = estimate_normals(plate, 8)
    shifted = PointCloud(plate.points + np.array([0, 0, 1]), None)
    assert d2_mse(plate, shifted, nf) == pytest.approx(1.0)
    assert d1_mse(plate, shifted) == pytest.approx(1.0)


def test_d2_inplane_shift_is_small_inside():
    plate = PointCloud(_grid_plate(16, z=5), None)
    nf = estimate_normals(plate, 8)
    shifted = PointCloud(plate.points + np.array([1, 0, 0]), None)
    assert d2_mse(plate, shifted, nf) < 0.1 * d1_mse(plate, shifted) + 1e-9


def test_d2_matches_brute_force():
    rng = np.random.RandomState(3)
    a = voxelize(rng.randint(0, 32, size=(300, 3)), None)
    b = voxelize(rng.randint(0, 32, size=(300, 3)), None)
    nf = estimate_normals(a, 6)

    def directed(src, dst, use_dst_normal):
        acc = 0.0
        for i, p in enumerate(src):
            d = ((dst - p) ** 2).sum(axis=1)
            j = int(np.argmin(d))
            ev = (dst[j] - p).astype(float)
            n = nf.normals[j] if use_dst_normal else nf.normals[i]
            acc += float(ev @ n) ** 2
        return acc / len(src)

    want = max(directed(a.points, b.points, False),
               directed(b.points, a.points, True))
    assert d2_mse(a, b, nf) == pytest.approx(want, rel=1e-12)


def test_d2_not_above_d1():
    rng = np.random.RandomState(4)
    a = voxelize(rng.randint(0, 24, size=(200, 3)), None)
    b = voxelize(rng.randint(0, 24, size=(200, 3)), None)
    nf = estimate_normals(a, 6)
    assert d2_mse(a, b, nf) <= d1_mse(a, b) + 1e-9


def test_d2_normal_count_mismatch():
    a = voxelize(np.random.RandomState(5).randint(0, 16, size=(30, 3)), None)
    b = PointCloud(a.points[:10].copy(), None)
    bad = NormalField(np.ones((5, 3)) / math.sqrt(3), 4)
    with pytest.raises(DomainError):
        d2_mse(a, b, bad)


def test_geometry_psnr():
    assert geometry_psnr(0.0, 8) == math.inf
    p = 255
    assert geometry_psnr(3 * p * p, 8) == pytest.approx(0.0, abs=1e-12)
    assert geometry_psnr(1.0, 8) == pytest.approx(52.90, abs=0.005)


def test_metric_symmetry():
    rng = np.random.RandomState(6)
    a = voxelize(rng.randint(0, 40, size=(250, 3)), None)
    b = voxelize(rng.randint(0, 40, size=(250, 3)), None)
    assert d1_mse(a, b) == d1_mse(b, a)
