import numpy as np
import pytest

from crowdvision.raster import (
    BinaryMask,
    Frame,
    NetpbmError,
    connected_components,
    gaussian_kernel,
    gaussian_smooth,
    mask_and,
    median_filter,
    morph_close,
    morph_open,
    read_pgm,
    write_pgm,
    write_ppm,
)


# ---------------------------------------------------------------------------
# independent oracles


def dense_gaussian_conv(img, sigma):
    """Direct 2-D convolution with the outer-product kernel, replicate border."""
    k1 = gaussian_kernel(sigma)
    k2 = np.outer(k1, k1)
    r = len(k1) // 2
    h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += k2[dy + r, dx + r] * img[yy, xx]
            out[y, x] = acc
    return out


def sorted_window_median(img, radius):
    h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            vals = []
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    vals.append(img[yy, xx])
            vals.sort()
            out[y, x] = vals[len(vals) // 2]
    return out


def minkowski_erode(points, radius):
    """Set-definition erosion over Z^2 (survivors must be set pixels)."""
    out = set()
    for x, y in points:
        ok = True
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                if (x + dx, y + dy) not in points:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.add((x, y))
    return out


def minkowski_dilate(points, radius):
    out = set()
    for x, y in points:
        for dy in range(-radius, radius + 1):
            for dx in range(-radius, radius + 1):
                out.add((x + dx, y + dy))
    return out


def mask_points(mask):
    ys, xs = np.nonzero(mask.bits)
    return set(zip(xs.tolist(), ys.tolist()))


def flood_fill_partition(mask, connectivity):
    """Partition of set pixels into components, as a set of frozensets."""
    points = mask_points(mask)
    if connectivity == 8:
        offs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        offs = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    remaining = set(points)
    parts = set()
    while remaining:
        seed = next(iter(remaining))
        comp = {seed}
        frontier = [seed]
        while frontier:
            x, y = frontier.pop()
            for dx, dy in offs:
                q = (x + dx, y + dy)
                if q in remaining and q not in comp:
                    comp.add(q)
                    frontier.append(q)
        remaining -= comp
        parts.add(frozenset(comp))
    return parts


def random_mask(rng, h, w, p=0.4):
    return BinaryMask(rng.random((h, w)) < p)


# ---------------------------------------------------------------------------
# Netpbm


class TestNetpbm:
    def test_p5_header_semantics(self):
        data = b"P5 2 2 255\n" + bytes([0, 128, 255, 64])
        frame = read_pgm(data)
        assert frame.width == 2 and frame.height == 2
        np.testing.assert_allclose(
            frame.pixels, np.array([[0, 128 / 255], [1.0, 64 / 255]])
        )

    def test_color_magic_rejected(self):
        with pytest.raises(NetpbmError, match="P6"):
            read_pgm(b"P6 2 2 255\n" + bytes(12))

    def test_maxval_out_of_range(self):
        with pytest.raises(NetpbmError, match="maxval"):
            read_pgm(b"P5 1 1 0\n\x00")
        with pytest.raises(NetpbmError, match="maxval"):
            read_pgm(b"P5 1 1 70000\n" + bytes(2))

    def test_truncated_payload_names_offset(self):
        with pytest.raises(NetpbmError, match="byte"):
            read_pgm(b"P5 4 4 255\n" + bytes(3))

    def test_comments_skipped(self):
        data = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([7, 9])
        frame = read_pgm(data)
        assert frame.pixels.shape == (1, 2)

    def test_ascii_p2(self):
        frame = read_pgm(b"P2\n3 1\n10\n0 5 10\n")
        np.testing.assert_allclose(frame.pixels, [[0.0, 0.5, 1.0]])

    def test_16bit_payload(self):
        data = b"P5 1 1 65535\n" + (32768).to_bytes(2, "big")
        assert abs(read_pgm(data).pixels[0, 0] - 32768 / 65535) < 1e-12

    def test_write_all_zero_and_one(self):
        assert write_pgm(Frame(np.zeros((1, 1)))) == b"P5\n1 1\n255\n" + bytes([0])
        assert write_pgm(Frame(np.ones((1, 1)))) == b"P5\n1 1\n255\n" + bytes([255])

    def test_write_read_round_trip_bytes(self):
        rng = np.random.default_rng(11)
        raw = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        data = b"P5\n16 16\n255\n" + raw.tobytes()
        assert write_pgm(read_pgm(data)) == data

    def test_read_write_round_trip_quantization(self):
        rng = np.random.default_rng(12)
        frame = Frame(rng.random((9, 13)))
        back = read_pgm(write_pgm(frame))
        assert np.abs(back.pixels - frame.pixels).max() <= 0.5 / 255 + 1e-12

    def test_ppm_writer(self):
        rgb = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        data = write_ppm(rgb)
        assert data.startswith(b"P6\n2 2\n255\n")
        assert data.endswith(rgb.tobytes())


# ---------------------------------------------------------------------------
# filters


class TestGaussian:
    def test_constant_preserved(self):
        frame = Frame(np.full((8, 8), 0.37))
        for sigma in (0.5, 1.0, 2.5):
            np.testing.assert_allclose(gaussian_smooth(frame, sigma).pixels, frame.pixels)

    def test_sigma_zero_is_identity(self):
        rng = np.random.default_rng(1)
        frame = Frame(rng.random((6, 7)))
        np.testing.assert_array_equal(gaussian_smooth(frame, 0).pixels, frame.pixels)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            gaussian_smooth(Frame(np.zeros((4, 4))), -1.0)

    def test_impulse_matches_dense_conv_oracle(self):
        img = np.zeros((9, 9))
        img[4, 4] = 1.0
        got = gaussian_smooth(Frame(img), 1.0).pixels
        expected = dense_gaussian_conv(img, 1.0)
        np.testing.assert_allclose(got, expected, atol=1e-12)
        k = gaussian_kernel(1.0)
        assert abs(got[4, 4] - k[len(k) // 2] ** 2) < 1e-12

    def test_random_matches_dense_conv_oracle(self):
        rng = np.random.default_rng(2)
        img = rng.random((10, 12))
        np.testing.assert_allclose(
            gaussian_smooth(Frame(img), 1.3).pixels, dense_gaussian_conv(img, 1.3), atol=1e-12
        )

    def test_no_overshoot(self):
        rng = np.random.default_rng(3)
        img = rng.random((12, 12))
        out = gaussian_smooth(Frame(img), 2.0).pixels
        assert out.min() >= img.min() - 1e-12 and out.max() <= img.max() + 1e-12


class TestMedian:
    def test_constant(self):
        frame = Frame(np.full((5, 5), 0.2))
        np.testing.assert_array_equal(median_filter(frame, 1).pixels, frame.pixels)

    def test_speckle_removed(self):
        img = np.full((7, 7), 0.1)
        img[3, 3] = 0.9
        out = median_filter(Frame(img), 1).pixels
        assert out[3, 3] == 0.1

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(4)
        img = rng.random((8, 8))
        for radius in (1, 2):
            np.testing.assert_array_equal(
                median_filter(Frame(img), radius).pixels, sorted_window_median(img, radius)
            )


# ---------------------------------------------------------------------------
# morphology


class TestMorphology:
    def test_open_removes_singleton(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[3, 3] = True
        assert morph_open(BinaryMask(bits), 1).count() == 0

    def test_close_fills_hole(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[1:6, 1:6] = True
        bits[3, 3] = False
        out = morph_close(BinaryMask(bits), 1)
        assert out.bits[3, 3]

    def test_matches_minkowski_oracle(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            mask = random_mask(rng, 16, 16)
            pts = mask_points(mask)
            opened = minkowski_dilate(minkowski_erode(pts, 1), 1)
            assert mask_points(morph_open(mask, 1)) == opened
            # closing over Z^2, then restricted to the frame
            closed = minkowski_erode(minkowski_dilate(pts, 1), 1)
            closed = {p for p in closed if 0 <= p[0] < 16 and 0 <= p[1] < 16}
            assert mask_points(morph_close(mask, 1)) == closed

    def test_subset_laws(self):
        rng = np.random.default_rng(6)
        for trial in range(30):
            mask = random_mask(rng, 12, 14)
            opened = morph_open(mask, 1)
            closed = morph_close(mask, 1)
            assert not np.any(opened.bits & ~mask.bits)  # open(m) <= m
            assert not np.any(mask.bits & ~closed.bits)  # m <= close(m)

    def test_idempotence(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            mask = random_mask(rng, 12, 12)
            opened = morph_open(mask, 1)
            np.testing.assert_array_equal(morph_open(opened, 1).bits, opened.bits)
            closed = morph_close(mask, 1)
            np.testing.assert_array_equal(morph_close(closed, 1).bits, closed.bits)

    def test_radius_zero_rejected(self):
        with pytest.raises(ValueError):
            morph_open(BinaryMask(np.zeros((3, 3), dtype=bool)), 0)

    def test_mask_and_dim_mismatch(self):
        with pytest.raises(ValueError):
            mask_and(BinaryMask(np.zeros((2, 2), bool)), BinaryMask(np.zeros((3, 2), bool)))


# ---------------------------------------------------------------------------
# connected components


class TestConnectedComponents:
    def test_empty(self):
        blobs, labels = connected_components(BinaryMask(np.zeros((5, 5), bool)))
        assert blobs == [] and labels.max() == 0

    def test_two_squares(self):
        bits = np.zeros((8, 8), bool)
        bits[1:3, 1:3] = True
        bits[5:7, 5:7] = True
        blobs, _ = connected_components(BinaryMask(bits))
        assert len(blobs) == 2
        assert all(b.area == 4 for b in blobs)

    def test_diagonal_connectivity(self):
        bits = np.zeros((4, 4), bool)
        bits[0, 0] = bits[1, 1] = True
        blobs8, _ = connected_components(BinaryMask(bits), 8)
        blobs4, _ = connected_components(BinaryMask(bits), 4)
        assert len(blobs8) == 1 and len(blobs4) == 2

    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(40):
            mask = random_mask(rng, 12, 12)
            for conn in (4, 8):
                blobs, labels = connected_components(mask, conn)
                parts = set()
                for blob in blobs:
                    ys, xs = np.nonzero(labels == blob.label)
                    parts.add(frozenset(zip(xs.tolist(), ys.tolist())))
                assert parts == flood_fill_partition(mask, conn)
                assert sum(b.area for b in blobs) == mask.count()

    def test_blob_stats(self):
        bits = np.zeros((6, 6), bool)
        bits[2:4, 1:5] = True
        blobs, _ = connected_components(BinaryMask(bits))
        (blob,) = blobs
        assert blob.area == 8
        assert blob.bbox == (1, 2, 4, 3)
        assert blob.centroid == (2.5, 2.5)
        x0, y0, x1, y1 = blob.bbox
        assert x0 <= blob.centroid[0] <= x1 and y0 <= blob.centroid[1] <= y1
