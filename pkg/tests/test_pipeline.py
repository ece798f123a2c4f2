import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dfunet.pipeline.augment import AUGMENTATIONS, PatchRecord, augment_patch, augmented_count, rotate90
from dfunet.pipeline.color import convert_colorspace, hsv_to_rgb
from dfunet.pipeline.contrast import contrast_enhance, equalize_levels
from dfunet.pipeline.dataset import (DatasetManifest, FoldPlan, ManifestEntry, largest_remainder,
                                     make_folds, read_manifest, scan_dataset)
from dfunet.pipeline.image import (ImageBuffer, ImageFormatError, read_ppm, resize_image, save_ppm,
                                   to_gray, write_ppm)
from dfunet.pipeline.normalize import apply_normalizer, fit_normalizer

rgb_images = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)))


def every_rgb_color():
    levels = np.arange(256, dtype=np.uint8)
    grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1)
    return ImageBuffer(grid.reshape(4096, 4096, 3))


# -- image I/O ----------------------------------------------------------------

def test_ppm_parse_example():
    img = read_ppm(b"P6 2 1 255\n" + bytes([1, 2, 3, 4, 5, 6]))
    assert (img.width, img.height, img.channels, img.colorspace) == (2, 1, 3, "RGB")
    np.testing.assert_array_equal(img.pixels.ravel(), [1, 2, 3, 4, 5, 6])


def test_ppm_header_comments_and_whitespace():
    data = b"P6\n# a comment\n 2\t1 # trailing\n255\r" + bytes(range(6))
    np.testing.assert_array_equal(read_ppm(data).pixels.ravel(), range(6))


@given(rgb_images)
def test_ppm_round_trip(px):
    img = ImageBuffer(px)
    data = write_ppm(img)
    assert write_ppm(read_ppm(data)) == data
    np.testing.assert_array_equal(read_ppm(data).pixels, px)


@pytest.mark.parametrize("data", [
    b"P5 2 1 255\n" + bytes(2),
    b"P6 2 1 65535\n" + bytes(12),
    b"P6 2 1 255\n" + bytes(5),
    b"P6 2",
    b"P6 x 1 255\n",
])
def test_ppm_rejects(data):
    with pytest.raises(ImageFormatError):
        read_ppm(data)


def test_image_buffer_invariants():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 3)), "GRAY")
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 3)), "CMYK")
    assert ImageBuffer(np.zeros((2, 3)), "GRAY").channels == 1


def test_to_gray_weights():
    img = ImageBuffer(np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], dtype=np.uint8))
    np.testing.assert_allclose(to_gray(img), [[0.299 * 255, 0.587 * 255, 0.114 * 255]])


def test_resize_corner_aligned():
    img = ImageBuffer(np.array([[[0] * 3, [255] * 3]], dtype=np.uint8))
    out = resize_image(img, 4, 1)
    np.testing.assert_array_equal(out.pixels[0, :, 0], [0, 85, 170, 255])


# -- color --------------------------------------------------------------------

def one_pixel(r, g, b):
    return ImageBuffer(np.array([[[r, g, b]]], dtype=np.uint8))


def test_hsv_of_red():
    np.testing.assert_array_equal(convert_colorspace(one_pixel(255, 0, 0), "HSV").pixels.ravel(), [0, 255, 255])


@given(st.integers(0, 255))
def test_gray_has_no_saturation(g):
    assert convert_colorspace(one_pixel(g, g, g), "HSV").pixels[0, 0, 1] == 0


def test_ycbcr_of_white():
    coeffs = np.array([[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]])
    expected = np.rint(coeffs @ [255, 255, 255] + [0, 128, 128])
    np.testing.assert_array_equal(expected, [255, 128, 128])
    np.testing.assert_array_equal(convert_colorspace(one_pixel(255, 255, 255), "YCBCR").pixels.ravel(), expected)


@pytest.mark.parametrize("target", ["HSV", "YCBCR", "YIQ", "LAB", "LUV", "GRAY"])
def test_conversions_tag_and_shape(target):
    img = ImageBuffer(np.random.default_rng(0).integers(0, 256, (5, 4, 3), dtype=np.uint8))
    out = convert_colorspace(img, target)
    assert out.colorspace == target and out.pixels.shape[:2] == (5, 4)


def test_lab_and_luv_reference_points():
    # white is L=100 with neutral chroma; black is L=0
    lab_white = convert_colorspace(one_pixel(255, 255, 255), "LAB").pixels.ravel()
    assert lab_white[0] == 255 and abs(int(lab_white[1]) - 128) <= 1 and abs(int(lab_white[2]) - 128) <= 1
    assert convert_colorspace(one_pixel(0, 0, 0), "LUV").pixels[0, 0, 0] == 0


def test_conversion_errors():
    with pytest.raises(ValueError):
        convert_colorspace(one_pixel(1, 2, 3), "CMYK")
    with pytest.raises(ValueError):
        convert_colorspace(convert_colorspace(one_pixel(1, 2, 3), "HSV"), "LAB")


def hsv_round_trip_error():
    img = every_rgb_color()
    back = hsv_to_rgb(convert_colorspace(img, "HSV"))
    return int(np.abs(back.pixels.astype(int) - img.pixels.astype(int)).max())


@pytest.mark.xfail(strict=True, reason="8-bit hue has 256 steps; dark saturated colors drift by 3 levels")
def test_hsv_round_trip_within_two_levels():
    assert hsv_round_trip_error() <= 2


def test_hsv_round_trip_within_three_levels():
    assert hsv_round_trip_error() == 3


# -- contrast -----------------------------------------------------------------

def test_hist_eq_two_levels():
    gray = np.array([[50, 50, 200, 200]], dtype=np.uint8)
    # cdf = 2 at 50 and 4 at 200; (cdf - 2) / (4 - 2) * 255
    np.testing.assert_array_equal(equalize_levels(gray), [[0, 0, 255, 255]])
    out = contrast_enhance(ImageBuffer(gray[:, :, None], "GRAY"), "hist-eq")
    np.testing.assert_array_equal(out.pixels[:, :, 0], [[0, 0, 255, 255]])


@pytest.mark.parametrize("mode", ["intensity-adjust", "hist-eq", "clahe"])
@pytest.mark.parametrize("space", ["RGB", "GRAY"])
def test_constant_image_is_invariant(mode, space):
    px = np.full((16, 16, 3 if space == "RGB" else 1), 90, dtype=np.uint8)
    np.testing.assert_array_equal(contrast_enhance(ImageBuffer(px, space), mode).pixels, px)


def test_full_range_is_fixed_by_intensity_adjust():
    ramp = np.tile(np.arange(256, dtype=np.uint8), (8, 1))
    img = ImageBuffer(np.stack([ramp] * 3, axis=-1))
    out = contrast_enhance(img, "intensity-adjust")
    assert np.abs(out.pixels.astype(int) - img.pixels.astype(int)).max() <= 3


def test_clahe_spreads_a_narrow_histogram():
    px = np.random.default_rng(0).integers(100, 120, (64, 64), dtype=np.uint8)
    out = contrast_enhance(ImageBuffer(px, "GRAY"), "clahe").pixels
    assert np.ptp(out) > np.ptp(px)


def test_contrast_errors():
    with pytest.raises(ValueError):
        contrast_enhance(one_pixel(1, 2, 3), "gamma")
    with pytest.raises(ValueError):
        contrast_enhance(convert_colorspace(one_pixel(1, 2, 3), "HSV"), "hist-eq")


# -- augmentation -------------------------------------------------------------

def test_rotate90_example():
    a, b, c, d = 1, 2, 3, 4
    px = np.array([[a, b], [c, d]])[:, :, None]
    np.testing.assert_array_equal(rotate90(px, 1)[:, :, 0], [[c, a], [d, b]])


@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 5), st.just(3))), st.integers(0, 3))
def test_rotations_invert(px, turns):
    np.testing.assert_array_equal(rotate90(rotate90(px, turns), 4 - turns), px)


def patch(seed=0, size=12, source="s1"):
    px = np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8)
    return PatchRecord(ImageBuffer(px), 1, source, patch_id="p0")


def test_fifteen_outputs_keep_label_and_source():
    p = patch()
    out = augment_patch(p, seed=3)
    assert len(out) == 15 == len(AUGMENTATIONS)
    assert [o.provenance for o in out] == [f"augmented:{k}" for k in AUGMENTATIONS]
    assert all(o.label == 1 and o.source_id == "s1" for o in out)
    assert all(o.image.pixels.shape == p.image.pixels.shape for o in out)
    assert [o.image.colorspace for o in out[6:10]] == ["YCBCR", "YIQ", "HSV", "LAB"]


def test_augmented_count():
    assert augmented_count(1423) == 21_345 and augmented_count(84) == 1_260 and augmented_count(0) == 0
    with pytest.raises(ValueError):
        augmented_count(-1)


def test_flips_are_exact():
    p = patch()
    out = {o.provenance.split(":")[1]: o.image.pixels for o in augment_patch(p)}
    px = p.image.pixels
    np.testing.assert_array_equal(out["flip-h"][:, ::-1], px)
    np.testing.assert_array_equal(out["flip-v"][::-1], px)
    np.testing.assert_array_equal(out["flip-hv"][::-1, ::-1], px)
    np.testing.assert_array_equal(rotate90(out["rot90"], 3), px)


def test_augmentation_is_deterministic_and_seeded():
    a = augment_patch(patch(), seed=5)
    b = augment_patch(patch(), seed=5)
    c = augment_patch(patch(), seed=6)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image.pixels, y.image.pixels)
    assert not np.array_equal(a[13].image.pixels, c[13].image.pixels)
    assert not np.array_equal(a[13].image.pixels, a[14].image.pixels)


def test_augmentation_needs_rgb():
    p = patch()
    p.image = convert_colorspace(p.image, "HSV")
    with pytest.raises(ValueError):
        augment_patch(p)


def test_patch_record_invariants():
    with pytest.raises(ValueError):
        PatchRecord(ImageBuffer(np.zeros((1, 1, 3))), 0, "")
    with pytest.raises(ValueError):
        PatchRecord(ImageBuffer(np.zeros((1, 1, 3))), -1, "s")


# -- normalizer ---------------------------------------------------------------

def test_two_patch_fit_gives_unit_values():
    stack = np.array([[[0.0]], [[10.0]]])
    norm = fit_normalizer(stack)
    np.testing.assert_allclose(apply_normalizer(norm, stack).ravel(), [-1, 1], atol=1e-8)


def test_single_patch_fit_maps_to_zero():
    x = np.random.default_rng(0).normal(size=(1, 3, 4, 4))
    norm = fit_normalizer(x)
    assert not apply_normalizer(norm, x[0]).any()


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(2), st.just(3)), elements=st.floats(-1e3, 1e3)))
def test_normalized_fit_set_is_centred(stack):
    norm = fit_normalizer(stack)
    out = apply_normalizer(norm, stack)
    assert np.isfinite(out).all() and (norm.std >= 0).all()
    # undo the scaling: on constant positions rounding residue is divided by epsilon
    centred = out * (norm.std + norm.epsilon)
    assert np.abs(centred.mean(axis=0)).max() < 1e-9 * max(1.0, np.abs(stack).max())


def test_normalized_fit_set_mean_is_zero():
    stack = np.random.default_rng(2).uniform(0, 255, size=(40, 3, 8, 8))
    out = apply_normalizer(fit_normalizer(stack), stack)
    assert np.abs(out.mean(axis=0)).max() < 1e-9


def test_normalizer_errors():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 3, 2, 2)))
    with pytest.raises(ValueError):
        apply_normalizer(fit_normalizer(np.zeros((2, 3, 2, 2))), np.zeros((3, 2, 3)))


# -- manifests and folds -------------------------------------------------------

def manifest_of(n_sources, patches_per_source=1, classes=2):
    entries = [ManifestEntry(f"c/{s:03d}__{p}.ppm", s % classes, f"src{s:03d}")
               for s in range(n_sources) for p in range(patches_per_source)]
    return DatasetManifest(entries, [f"class{i}" for i in range(classes)])


def test_kfold_partition_law():
    m = manifest_of(53, 3)
    plan = make_folds(m, 10, seed=1)
    tests = [set(f["test"]) for f in plan.folds]
    assert set().union(*tests) == set(m.source_ids())
    assert all(not (a & b) for a, b in itertools.combinations(tests, 2))
    assert {len(t) for t in tests} <= {5, 6}
    for f in plan.folds:
        assert not set(f["train"]) & set(f["test"])
        assert not set(f["val"]) & set(f["test"]) and not set(f["val"]) & set(f["train"])
        assert set(f["train"]) | set(f["val"]) | set(f["test"]) == set(m.source_ids())


def test_kfold_is_stratified_and_has_validation():
    m = manifest_of(100)
    plan = make_folds(m, 10, seed=0)
    for f in plan.folds:
        labels = [int(s[3:]) % 2 for s in f["test"]]
        assert sum(labels) == 5
        assert len(f["val"]) == 5 and len(f["train"]) == 85


def test_split_85_5_10_counts():
    assert largest_remainder(100, [0.85, 0.05, 0.10]) == [85, 5, 10]
    plan = make_folds(manifest_of(100), holdout="split-85-5-10")
    f = plan.fold(0)
    assert (len(f["train"]), len(f["val"]), len(f["test"])) == (85, 5, 10)


@given(st.integers(3, 300))
def test_largest_remainder_sums(n):
    assert sum(largest_remainder(n, [0.85, 0.05, 0.10])) == n


def test_folds_are_deterministic_and_json_round_trip():
    m = manifest_of(30, 2)
    a = make_folds(m, 5, seed=4)
    assert a.to_json() == make_folds(m, 5, seed=4).to_json()
    assert FoldPlan.from_json(a.to_json()).folds == a.folds
    assert a.to_json() != make_folds(m, 5, seed=5).to_json()


def test_per_patch_mode_splits_a_source():
    m = manifest_of(4, 5)
    plan = make_folds(m, 10, per_patch=True)
    assert all(p.endswith(".ppm") for f in plan.folds for p in f["test"])
    assert len(m.select(plan.fold(0)["test"])) == 2


def test_fold_errors_and_warnings():
    with pytest.raises(ValueError):
        make_folds(manifest_of(9), 10)
    with pytest.raises(ValueError):
        make_folds(manifest_of(20), holdout="leave-one-out")
    with pytest.raises(IndexError):
        make_folds(manifest_of(20), 10).fold(10)
    one_class = DatasetManifest([ManifestEntry(f"{i}.ppm", 0, f"s{i}") for i in range(10)], ["a", "b"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        make_folds(one_class, 10)
    assert caught


def test_manifest_invariants():
    with pytest.raises(ValueError):
        DatasetManifest([ManifestEntry("a.ppm", 0, "s"), ManifestEntry("a.ppm", 1, "t")])
    with pytest.raises(ValueError):
        DatasetManifest([ManifestEntry("a.ppm", 2, "s")], ["x", "y"])


def test_scan_and_manifest_csv(tmp_path):
    for cls, names in {"normal": ["f1__a", "f1__b"], "abnormal": ["f2__a"]}.items():
        (tmp_path / cls).mkdir()
        for n in names:
            save_ppm(tmp_path / cls / f"{n}.ppm", ImageBuffer(np.zeros((2, 2, 3))))
    m = scan_dataset(tmp_path, ["normal", "abnormal"])
    assert [(e.label, e.source_id) for e in m.entries] == [(0, "f1"), (0, "f1"), (1, "f2")]
    assert m.entries[0].patch_id == "a"
    m.write_csv(tmp_path / "m.csv")
    back = read_manifest(tmp_path / "m.csv")
    assert back.entries == m.entries
    assert back.load_image(back.entries[2]).width == 2
    (tmp_path / "bad.csv").write_text("file,label\nx,1\n")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "bad.csv")
