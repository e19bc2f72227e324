import numpy as np
import pytest

from ompc import intra
from ompc.codec import (CTU, FrameEncoder, RdoContext, ReferenceFrame,
                        build_merge_list, decode_frame, encode_frame,
                        lambda_full, masked_ssd, motion_search, rd_cost,
                        sad_universe)
from ompc.rangecoder import DecodeError, signed_eg_bits


def _textured(h, w, seed, amp=6):
    rng = np.random.RandomState(seed)
    base = np.add.outer(np.arange(h) * 2, np.arange(w)).astype(np.int32) % 200 + 20
    return np.clip(base + rng.randint(-amp, amp + 1, size=(h, w)), 0, 255).astype(np.uint8)


def _patchy(h, w, seed):
    """Flat background with textured discs, like projected content."""
    rng = np.random.RandomState(seed)
    img = np.zeros((h, w), np.int32)
    occ = np.zeros((h, w), np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for k in range(4):
        cy, cx, r = rng.randint(30, h - 30), rng.randint(30, w - 30), rng.randint(12, 25)
        m = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[m] = 60 + 30 * k + ((xx[m] + 2 * yy[m]) % 13)
        occ |= m.astype(np.uint8)
    return img.astype(np.uint8), occ


def test_masked_ssd_examples():
    orig = np.array([[2, 3], [4, 5]])
    zero = np.zeros((2, 2), int)
    mask = np.array([[1, 0], [1, 0]])
    assert masked_ssd(orig, zero, mask) == 4 + 16
    assert masked_ssd(orig, zero, np.ones((2, 2), int)) == 4 + 9 + 16 + 25
    assert masked_ssd(orig, zero, np.zeros((2, 2), int)) == 0
    with pytest.raises(ValueError):
        masked_ssd(orig, zero, np.ones((3, 2), int))


def test_rd_cost_examples():
    assert rd_cost(20, 5, 2.0) == 30
    assert rd_cost(0, 10, 4.0) == 40
    assert rd_cost(7, 3, 0.0) == 7
    with pytest.raises(ValueError):
        rd_cost(1, -1, 1.0)


def test_lambda_model():
    assert lambda_full(12) == pytest.approx(0.57)
    assert lambda_full(18) == pytest.approx(0.57 * 4)
    assert lambda_full(27) == pytest.approx(0.57 * 2 ** 5)


def test_intra_vertical_extension_ranked_first():
    plane = _textured(64, 64, 0)
    mask = np.ones((64, 64), np.uint8)
    fe = FrameEncoder([plane], RdoContext.create(27, mask, False))
    # code the first CTU so its reconstruction provides neighbors
    fe._rdo_cu(0, 0, 64, 0)
    # craft a block at (16, 32) equal to the vertical extension of its top row
    x, y, s = 16, 32, 8
    top = fe.recon[0][y - 1, x:x + s]
    fe.orig[0][y:y + s, x:x + s] = np.tile(top, (s, 1))
    cands, _ = fe._rough_intra(x, y, s)
    assert cands[0] == intra.VERTICAL_MODE


def test_intra_dc_flat_block_in_top3():
    plane = np.full((64, 64), 128, np.uint8)
    fe = FrameEncoder([plane], RdoContext.create(27, np.ones((64, 64), np.uint8), False))
    cands, _ = fe._rough_intra(0, 0, 8)
    assert intra.DC in cands


def test_rough_candidates_mask_independent():
    plane, occ = _patchy(64, 64, 3)
    for x, y, s in ((0, 0, 64), (32, 16, 16), (8, 40, 8)):
        fe_on = FrameEncoder([plane], RdoContext.create(30, occ, True))
        fe_off = FrameEncoder([plane], RdoContext.create(30, occ, False))
        assert fe_on._rough_intra(x, y, s)[0] == fe_off._rough_intra(x, y, s)[0]


def test_masked_distortion_never_exceeds_unmasked():
    rng = np.random.RandomState(30)
    for _ in range(50):
        a = rng.randint(0, 256, (16, 16))
        b = rng.randint(0, 256, (16, 16))
        m = (rng.rand(16, 16) < 0.5).astype(np.int32)
        assert masked_ssd(a, b, m) <= masked_ssd(a, b, np.ones((16, 16), np.int32))


def test_motion_search_mask_independent():
    # the search has no mask input at all; assert the staging rule holds
    # end to end: identical MVs picked by masked and baseline encoders when
    # decisions force the AMVP path on identical content
    base = _textured(64, 64, 31)
    cur = np.roll(base, (0, 3), axis=(0, 1))
    ref = ReferenceFrame([base], np.zeros((8, 8, 2), np.int32), np.zeros((8, 8), np.uint8))
    mv = motion_search(cur[16:32, 16:32].astype(np.int32), ref, 16, 16, (0, 0), 2.0)
    mv2 = motion_search(cur[16:32, 16:32].astype(np.int32), ref, 16, 16, (0, 0), 2.0)
    assert mv == mv2 == (0, -6)


def test_intra_frame_round_trip_all_qps():
    plane = _textured(128, 128, 1)
    mask = np.ones((128, 128), np.uint8)
    for qp in (22, 27, 32, 37):
        rdo = RdoContext.create(qp, mask, False)
        ef = encode_frame([plane], rdo)
        planes, _, _, _ = decode_frame(ef.payload, qp, (128, 128), 1)
        assert np.array_equal(planes[0], ef.recon[0])


def test_inter_frame_round_trip_and_three_planes():
    y0 = _textured(64, 128, 2)
    cb = np.full((64, 128), 120, np.uint8)
    cr = np.full((64, 128), 133, np.uint8)
    y1 = np.roll(y0, (0, 2), axis=(0, 1))
    mask = np.ones((64, 128), np.uint8)
    rdo = RdoContext.create(30, mask, False)
    e0 = encode_frame([y0, cb, cr], rdo)
    ref = ReferenceFrame(e0.recon, e0.mv_grid, e0.inter_grid)
    e1 = encode_frame([y1, cb, cr], rdo, ref=ref)
    planes, _, _, _ = decode_frame(e1.payload, 30, (64, 128), 3, ref=ref)
    for a, b in zip(planes, e1.recon):
        assert np.array_equal(a, b)


def test_masking_off_equals_all_ones_mask_bitstream():
    plane, occ = _patchy(128, 128, 4)
    ones = np.ones((128, 128), np.uint8)
    for qp in (22, 37):
        a = encode_frame([plane], RdoContext.create(qp, ones, True))
        b = encode_frame([plane], RdoContext.create(qp, occ, False))
        assert a.payload == b.payload


def test_masked_encoder_spends_fewer_bits():
    plane, occ = _patchy(128, 128, 5)
    # noise in unoccupied areas: baseline must code it, masked should not
    rng = np.random.RandomState(6)
    noisy = plane.astype(np.int32)
    un = occ == 0
    noisy[un] = rng.randint(0, 256, size=int(un.sum()))
    noisy = noisy.astype(np.uint8)
    base = encode_frame([noisy], RdoContext.create(30, occ, False))
    prop = encode_frame([noisy], RdoContext.create(30, occ, True))
    assert len(prop.payload) < len(base.payload)
    # occupied quality preserved
    m = occ != 0
    db = masked_ssd(noisy.astype(np.int32), base.recon[0].astype(np.int32), occ.astype(np.int32))
    dp = masked_ssd(noisy.astype(np.int32), prop.recon[0].astype(np.int32), occ.astype(np.int32))
    # masked arm may differ slightly but not collapse
    assert dp <= 4 * db + 1000


def test_uniform_gray_frame_single_cu_per_ctu():
    plane = np.full((128, 128), 128, np.uint8)
    rdo = RdoContext.create(27, np.ones((128, 128), np.uint8), False)
    ef = encode_frame([plane], rdo, collect_decisions=True)
    assert len(ef.decisions) == 4
    for d in ef.decisions:
        assert not d.split and d.size == 64
        assert d.mode == "intra" and d.intra_dir in (intra.PLANAR, intra.DC)
    assert len(ef.payload) < 40


def test_fully_unoccupied_cu_minimizes_bits():
    plane, _ = _patchy(64, 64, 7)
    mask = np.zeros((64, 64), np.uint8)
    rdo = RdoContext.create(30, mask, True)
    ef = encode_frame([plane], rdo, collect_decisions=True)
    d = ef.decisions[0]
    assert not d.split
    assert d.dist == 0
    cands = d.candidates
    assert cands, "candidate log must be recorded"
    best_bits = min(c[2] for c in cands)
    assert d.bits == pytest.approx(best_bits)


def test_half_occupied_cu_codes_fewer_coeff_bits():
    rng = np.random.RandomState(8)
    plane = np.full((64, 64), 90, np.int32)
    plane[:, 32:] = rng.randint(0, 256, size=(64, 32))  # noise only right half
    plane = plane.astype(np.uint8)
    mask = np.zeros((64, 64), np.uint8)
    mask[:, :32] = 1  # occupied half is the flat part
    base = encode_frame([plane], RdoContext.create(27, mask, False))
    prop = encode_frame([plane], RdoContext.create(27, mask, True))
    assert len(prop.payload) < len(base.payload)


def test_merge_list_rules():
    ig = np.zeros((8, 8), np.uint8)
    mv = np.zeros((8, 8, 2), np.int32)
    # no neighbors: zero-MV fallback only
    assert build_merge_list(0, 0, ig, mv, None) == [(0, 0)]
    # left == above -> deduped
    ig[0, 0] = 1
    mv[0, 0] = (2, 0)
    ig[0, 1] = 1
    mv[0, 1] = (2, 0)
    ig[1, 0] = 1
    mv[1, 0] = (2, 0)
    lst = build_merge_list(8, 8, ig, mv, None)
    assert lst == [(2, 0), (0, 0)]


def test_merge_list_matches_rule_oracle():
    rng = np.random.RandomState(9)
    for _ in range(200):
        ig = (rng.rand(8, 8) < 0.6).astype(np.uint8)
        mv = rng.randint(-8, 9, size=(8, 8, 2)).astype(np.int32)
        ref_ig = (rng.rand(8, 8) < 0.5).astype(np.uint8)
        ref_mv = rng.randint(-8, 9, size=(8, 8, 2)).astype(np.int32)
        recon = [np.zeros((64, 64), np.uint8)]
        ref = ReferenceFrame(recon, ref_mv, ref_ig)
        x = int(rng.randint(0, 8)) * 8
        y = int(rng.randint(0, 8)) * 8
        got = build_merge_list(x, y, ig, mv, ref)
        want = []
        if x > 0 and ig[y // 8, (x - 1) // 8]:
            want.append(tuple(int(v) for v in mv[y // 8, (x - 1) // 8]))
        if y > 0 and ig[(y - 1) // 8, x // 8]:
            want.append(tuple(int(v) for v in mv[(y - 1) // 8, x // 8]))
        if ref_ig[y // 8, x // 8]:
            want.append(tuple(int(v) for v in ref_mv[y // 8, x // 8]))
        want.append((0, 0))
        dedup = []
        for c in want:
            if c not in dedup:
                dedup.append(c)
        assert got == dedup[:4]


def test_motion_search_recovers_known_shift():
    rng = np.random.RandomState(10)
    base = rng.randint(0, 256, size=(64, 64)).astype(np.uint8)
    shifted = np.roll(base, (3, 1), axis=(0, 1))  # content moves down-right
    ref = ReferenceFrame([base], np.zeros((8, 8, 2), np.int32), np.zeros((8, 8), np.uint8))
    # prediction must look back up-left: mv = (-3, -1) luma = (-6, -2) half-pel
    mv = motion_search(shifted[16:32, 16:32].astype(np.int32), ref, 16, 16,
                       (0, 0), lambda_full(27) ** 0.5)
    assert mv == (-6, -2)


def test_motion_search_zero_on_identical():
    base = _textured(64, 64, 11)
    ref = ReferenceFrame([base], np.zeros((8, 8, 2), np.int32), np.zeros((8, 8), np.uint8))
    mv = motion_search(base[8:24, 8:24].astype(np.int32), ref, 8, 8,
                       (0, 0), 1.0)
    assert mv == (0, 0)


def test_motion_search_matches_exhaustive_oracle():
    from ompc import transform as tf
    rng = np.random.RandomState(12)
    base = _textured(96, 96, 13)
    ref = ReferenceFrame([base], np.zeros((12, 12, 2), np.int32), np.zeros((12, 12), np.uint8))
    lam = lambda_full(30) ** 0.5
    for trial in range(25):
        x = int(rng.randint(0, 10)) * 8
        y = int(rng.randint(0, 10)) * 8
        s = int(rng.choice([8, 16]))
        if x + s > 96 or y + s > 96:
            continue
        orig = np.clip(base[y:y + s, x:x + s].astype(np.int32)
                       + rng.randint(-20, 21, size=(s, s)), 0, 255)
        pred_mv = (int(rng.randint(-6, 7)), int(rng.randint(-6, 7)))
        got = motion_search(orig, ref, x, y, pred_mv, lam)
        # oracle: brute-force integer stage then brute-force half-pel stage
        cy, cx = pred_mv[0] >> 1, pred_mv[1] >> 1
        best = None
        for py in range(max(-16, cy - 16), min(16, cy + 16) + 1):
            for px in range(max(-16, cx - 16), min(16, cx + 16) + 1):
                pred = ref.mc(0, x, y, s, (2 * py, 2 * px))
                c = (int(np.abs(pred.astype(np.int32) - orig).sum())
                     + lam * (signed_eg_bits(2 * py - pred_mv[0])
                              + signed_eg_bits(2 * px - pred_mv[1])))
                key = (c, abs(py) + abs(px))
                if best is None or key < best[0]:
                    best = (key, (2 * py, 2 * px))
        mv_int = best[1]
        hbest = None
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                cand = (mv_int[0] + dy, mv_int[1] + dx)
                if abs(cand[0]) > 32 or abs(cand[1]) > 32:
                    continue
                pred = ref.mc(0, x, y, s, cand)
                c = tf.satd(orig, pred) + lam * (
                    signed_eg_bits(cand[0] - pred_mv[0]) + signed_eg_bits(cand[1] - pred_mv[1]))
                key = (c, abs(cand[0]) + abs(cand[1]))
                if hbest is None or key < hbest[0]:
                    hbest = (key, cand)
        assert got == hbest[1]


def test_sad_universe_matches_tile_grids():
    plane0 = _textured(128, 128, 14)
    plane1 = np.roll(plane0, (2, 5), axis=(0, 1))
    ref = ReferenceFrame([plane0], np.zeros((16, 16, 2), np.int32), np.zeros((16, 16), np.uint8))
    fe = FrameEncoder([plane1], RdoContext.create(30, np.ones((128, 128), np.uint8), False), ref)
    fe._prepare_ctu_sads(64, 64)
    for (x, y, s) in ((64, 64, 64), (64, 64, 8), (96, 80, 16), (112, 120, 8), (64, 96, 32)):
        got = fe._sad_grid(x, y, s)
        want = sad_universe(plane1[y:y + s, x:x + s].astype(np.int32), ref, x, y)
        assert np.array_equal(got, want)


def test_static_frame_chooses_skip_with_zero_residual_bits():
    plane = _textured(64, 64, 15)
    mask = np.ones((64, 64), np.uint8)
    rdo = RdoContext.create(30, mask, False)
    e0 = encode_frame([plane], rdo)
    ref = ReferenceFrame(e0.recon, e0.mv_grid, e0.inter_grid)
    e1 = encode_frame([e0.recon[0]], rdo, ref=ref, collect_decisions=True)
    d = e1.decisions[0]
    assert d.mode == "skip" and d.mv == (0, 0)
    assert len(e1.payload) < 16


def test_unoccupied_garbage_region_skipped_under_masking():
    rng = np.random.RandomState(16)
    plane0, occ = _patchy(128, 128, 17)
    occ[:64, 64:] = 0  # guarantee a fully unoccupied CTU at (64, 0)
    rdo = RdoContext.create(30, occ, True)
    e0 = encode_frame([plane0], rdo)
    ref = ReferenceFrame(e0.recon, e0.mv_grid, e0.inter_grid)
    # next frame: unoccupied region becomes wild noise
    plane1 = plane0.astype(np.int32).copy()
    un = occ == 0
    plane1[un] = rng.randint(0, 256, size=int(un.sum()))
    plane1 = plane1.astype(np.uint8)
    e1 = encode_frame([plane1], rdo, ref=ref, collect_decisions=True)

    def find_leaf(node, px, py):
        if node.split:
            for c in node.children:
                if c.x <= px < c.x + c.size and c.y <= py < c.y + c.size:
                    return find_leaf(c, px, py)
        return node

    # a fully-unoccupied CTU must be coded as cheap skip despite the noise
    for ctu in e1.decisions:
        region = occ[ctu.y:ctu.y + 64, ctu.x:ctu.x + 64]
        if not region.any():
            leaf = find_leaf(ctu, ctu.x, ctu.y)
            assert leaf.mode == "skip"
            break
    else:
        pytest.skip("content produced no fully unoccupied CTU")
    base = encode_frame([plane1], RdoContext.create(30, occ, False), ref=ref)
    assert len(e1.payload) < len(base.payload) // 2


def test_moving_object_mv_tracks_under_masking():
    h = w = 128
    rng = np.random.RandomState(18)
    bg = rng.randint(0, 256, size=(h, w)).astype(np.uint8)  # noisy dead background
    obj = rng.randint(0, 256, size=(32, 32)).astype(np.uint8)  # unambiguous texture
    occ = np.zeros((h, w), np.uint8)

    def compose(ox, oy):
        img = bg.copy()
        img[oy:oy + 32, ox:ox + 32] = obj
        m = np.zeros((h, w), np.uint8)
        m[oy:oy + 32, ox:ox + 32] = 1
        return img, m

    f0, m0 = compose(48, 48)
    f1, m1 = compose(52, 50)  # moved (+2, +4) pixels
    rdo0 = RdoContext.create(30, m0, True)
    e0 = encode_frame([f0], rdo0)
    ref = ReferenceFrame(e0.recon, e0.mv_grid, e0.inter_grid)
    rdo1 = RdoContext.create(30, m1, True)
    e1 = encode_frame([f1], rdo1, ref=ref, collect_decisions=True)

    hits = []

    def walk(n):
        if n is None:
            return
        if n.split:
            for c in n.children:
                walk(c)
        elif n.mode in ("skip", "merge", "amvp"):
            region = m1[n.y:n.y + n.size, n.x:n.x + n.size]
            if region.any():
                hits.append(n.mv)

    for d in e1.decisions:
        walk(d)
    assert hits, "expected inter CUs covering the object"
    expect = (-4, -8)  # object moved (+2, +4) pixels -> look back, half-pel units
    good = sum(1 for mv in hits if mv == expect)
    assert good >= max(1, len(hits) * 0.6)
    # occupied pixels must still reconstruct faithfully
    sel = m1 != 0
    err = (f1.astype(np.int32) - e1.recon[0].astype(np.int32))[sel]
    assert (err * err).mean() < 200


def test_decoder_rejects_corrupt_stream():
    plane = _textured(64, 64, 20)
    rdo = RdoContext.create(30, np.ones((64, 64), np.uint8), False)
    ef = encode_frame([plane], rdo)
    bad = bytearray(ef.payload)
    bad[len(bad) // 2] ^= 0xFF
    with pytest.raises(DecodeError):
        decode_frame(bytes(bad), 30, (64, 64), 1)
    with pytest.raises(DecodeError):
        decode_frame(ef.payload[:-3], 30, (64, 64), 1)


def test_decode_deterministic():
    plane = _textured(64, 64, 21)
    rdo = RdoContext.create(27, np.ones((64, 64), np.uint8), False)
    ef = encode_frame([plane], rdo)
    a = decode_frame(ef.payload, 27, (64, 64), 1)
    b = decode_frame(ef.payload, 27, (64, 64), 1)
    assert np.array_equal(a[0][0], b[0][0])
