import time
import warnings

import numpy as np
import pytest
from conftest import published_scale_catalog
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import canny_reference
from scipy import ndimage

from pseudosyn.edgemask import (
    CannyEdgeDetector,
    CannyParams,
    batch_masks,
    canny,
    gradients,
    read_mask_manifest,
    to_gray,
    write_mask_manifest,
)
from pseudosyn.imageio import load_mask
from pseudosyn.labels import ClassLabel


def _step(h=32, w=32, col=16):
    img = np.zeros((h, w, 3), np.uint8)
    img[:, col:] = 255
    return img


def _smooth_random(rng, size=64):
    noise = rng.uniform(0, 255, (size, size, 3))
    return ndimage.gaussian_filter(noise, sigma=(2, 2, 0)).round().astype(np.uint8)


def test_constant_image_has_no_edges():
    for value in (0, 77, 255):
        assert canny(np.full((40, 30, 3), value, np.uint8)).pixels.sum() == 0


def test_step_edge_single_column_matching_oracle():
    img = _step()
    mask = canny(img).pixels
    cols = np.flatnonzero(mask.any(axis=0))
    assert len(cols) == 1 and cols[0] in (15, 16)
    assert mask[:, cols[0]].all()
    np.testing.assert_array_equal(mask, canny_reference(img))


def test_default_parameters():
    p = CannyParams()
    assert (p.radius, p.sigma, p.low_percent, p.high_percent) == (0.0, 1.0, 10.0, 30.0)
    assert p.kernel_radius == 3
    assert CannyParams(radius=5).kernel_radius == 5


@pytest.mark.parametrize(
    "kwargs", [dict(sigma=0), dict(radius=-1), dict(low_percent=40, high_percent=30), dict(threshold_mode="otsu")]
)
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        CannyParams(**kwargs)


def test_oracle_agreement_on_random_images(rng):
    for _ in range(3):
        img = _smooth_random(rng, 48)
        np.testing.assert_array_equal(canny(img).pixels, canny_reference(img))


def test_oracle_agreement_other_params(rng):
    img = _smooth_random(rng, 40)
    got = canny(img, CannyParams(sigma=1.5, low_percent=5, high_percent=20)).pixels
    np.testing.assert_array_equal(got, canny_reference(img, sigma=1.5, low_percent=5, high_percent=20))


def test_rotation_consistency(rng):
    img = _smooth_random(rng)
    base = canny(img).pixels
    for k in (1, 2, 3):
        rotated = canny(np.rot90(img, k).copy()).pixels
        agree = (np.rot90(base, k) == rotated).mean()
        assert agree > 0.99


def test_deterministic(rng):
    img = _smooth_random(rng)
    np.testing.assert_array_equal(canny(img).pixels, canny(img.copy()).pixels)


def test_threshold_monotonicity(rng):
    img = _smooth_random(rng)
    counts = [canny(img, CannyParams(low_percent=lo, high_percent=max(lo, 30))).pixels.sum() for lo in (0, 10, 20, 30)]
    assert counts == sorted(counts, reverse=True)
    high = [canny(img, CannyParams(low_percent=5, high_percent=hi)).pixels.sum() for hi in (10, 30, 60, 90)]
    assert high == sorted(high, reverse=True)


def test_edge_pixels_are_directional_maxima(rng):
    img = _smooth_random(rng)
    mask = canny(img).pixels.astype(bool)
    gx, gy = gradients(to_gray(img), CannyParams())
    mag = np.hypot(gx, gy)
    h, w = mag.shape
    ys, xs = np.nonzero(mask)
    for y, x in zip(ys, xs):
        # nearest of the eight compass directions
        a = np.rint(np.arctan2(gy[y, x], gx[y, x]) / (np.pi / 4)) * np.pi / 4
        dy, dx = int(np.rint(np.sin(a))), int(np.rint(np.cos(a)))
        for sy, sx in ((y + dy, x + dx), (y - dy, x - dx)):
            if 0 <= sy < h and 0 <= sx < w:
                assert mag[y, x] >= mag[sy, sx] * (1 - 1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 40), st.integers(4, 40), st.integers(0, 2**31 - 1))
def test_mask_is_binary_and_same_shape(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    mask = canny(img).pixels
    assert mask.shape == (h, w) and set(np.unique(mask)) <= {0, 1}


def test_tiny_image_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mask = canny(np.zeros((1, 5, 3), np.uint8))
    assert mask.pixels.sum() == 0 and caught


def test_transformer_matches_function(rng):
    imgs = [_smooth_random(rng, 24) for _ in range(3)]
    out = CannyEdgeDetector(sigma=1.0).fit(imgs).transform(imgs)
    assert out.shape == (3, 24, 24)
    for m, img in zip(out, imgs):
        np.testing.assert_array_equal(m, canny(img).pixels)


def test_batch_masks_published_scale(tiny_image_file):
    catalog = published_scale_catalog(str(tiny_image_file), with_pseudo=True)
    start = time.perf_counter()
    masks, failures = batch_masks(catalog, ClassLabel.ISCHAEMIA)
    assert len(masks) == 416 and not failures
    others = [c for c in ClassLabel if c is not ClassLabel.NONE]
    masks, _ = batch_masks(catalog, others)
    assert len(masks) == 6016
    assert {m.source_class for m in masks} == set(others)
    assert time.perf_counter() - start < 60
    assert batch_masks(catalog, [])[0] == []


def test_batch_masks_reports_undecodable(tmp_path, tiny_image_file):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    catalog = published_scale_catalog(str(tiny_image_file))
    from pseudosyn.catalog import Catalog, ImageRecord, Split

    catalog = Catalog(catalog.records[:2] + (ImageRecord("broken", str(bad), Split.TRAIN_LABELED, ClassLabel.NONE),))
    masks, failures = batch_masks(catalog, ClassLabel.NONE)
    assert len(masks) == 2 and [f[0] for f in failures] == ["broken"]


def test_mask_manifest_round_trip(tmp_path, rng):
    masks = [
        canny(_smooth_random(rng, 32), source_id=f"pseudo/img_{i}", source_class=ClassLabel(i % 4)) for i in range(4)
    ]
    manifest = write_mask_manifest(masks, tmp_path / "masks")
    rows = read_mask_manifest(manifest)
    assert [r[1] for r in rows] == [m.source_id for m in masks]
    assert [r[2] for r in rows] == [m.source_class for m in masks]
    for (path, _, _), m in zip(rows, masks):
        assert "/" not in path.name
        np.testing.assert_array_equal(load_mask(path) > 0, m.pixels.astype(bool))
