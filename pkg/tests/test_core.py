import numpy as np
import pytest

from pavesam import dataio
from pavesam.core import (
    AnnotatedInstance,
    BoundingBox,
    DistressClass,
    ImageSample,
    box_area,
    clamp_box,
    ensure_binary_mask,
    ensure_probability_mask,
)


class TestBoundingBox:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 3, 2)
        with pytest.raises(ValueError):
            BoundingBox(0, 5, 2, 3)

    def test_negative_coordinates_allowed_until_clamped(self):
        box = BoundingBox(-2, 0, 5, 12)
        assert box.as_xyxy() == (-2, 0, 5, 12)


class TestClampBox:
    def test_identity_inside(self):
        box = BoundingBox(3, 2, 7, 4)
        assert clamp_box(box, 10, 10) == box

    def test_clips_to_bounds(self):
        assert clamp_box(BoundingBox(-2, 0, 5, 12), 10, 10) == BoundingBox(0, 0, 5, 9)

    def test_fully_outside_is_degenerate(self):
        with pytest.raises(ValueError, match="degenerate box"):
            clamp_box(BoundingBox(20, 20, 30, 30), 10, 10)

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            coords = rng.integers(-30, 60, size=4)
            box = BoundingBox(
                min(coords[0], coords[2]), min(coords[1], coords[3]),
                max(coords[0], coords[2]), max(coords[1], coords[3]),
            )
            try:
                once = clamp_box(box, 32, 40)
            except ValueError:
                continue
            assert clamp_box(once, 32, 40) == once

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            clamp_box(BoundingBox(0, 0, 1, 1), 0, 10)


class TestBoxArea:
    def test_single_pixel(self):
        assert box_area(BoundingBox(0, 0, 0, 0)) == 1

    def test_rectangle(self):
        assert box_area(BoundingBox(3, 2, 7, 4)) == 15  # 5 columns x 3 rows

    def test_full_grid(self):
        assert box_area(BoundingBox(0, 0, 9, 9)) == 100


class TestDistressClass:
    def test_exactly_six_members(self):
        names = {c.value for c in DistressClass}
        assert names == {
            "transverse", "longitudinal", "alligator", "block", "patch", "manhole"
        }


class TestMaskValidation:
    def test_binary_rejects_other_values(self):
        with pytest.raises(ValueError):
            ensure_binary_mask(np.array([[0, 2]], dtype=np.uint8))

    def test_probability_range(self):
        with pytest.raises(ValueError):
            ensure_probability_mask(np.array([[0.5, 1.2]]))
        with pytest.raises(ValueError):
            ensure_probability_mask(np.array([[np.nan, 0.5]]))

    def test_byte_roundtrip_lossless(self, tmp_path):
        rng = np.random.default_rng(5)
        for i in range(20):
            mask = (rng.random((13, 17)) > 0.5).astype(np.uint8)
            path = tmp_path / f"m{i}.png"
            dataio.write_mask(path, mask)
            assert np.array_equal(dataio.read_mask(path), mask)


class TestAnnotatedInstance:
    def test_polygon_needs_three_vertices(self):
        with pytest.raises(ValueError):
            AnnotatedInstance(
                DistressClass.PATCH, BoundingBox(0, 0, 1, 1), polygon=((0, 0), (1, 1))
            )

    def test_geometry_exclusive(self):
        with pytest.raises(ValueError):
            AnnotatedInstance(
                DistressClass.PATCH,
                BoundingBox(0, 0, 1, 1),
                polygon=((0, 0), (1, 0), (1, 1)),
                mask_path="x.png",
            )

    def test_box_contains_all_rasterized_foreground(self):
        # exhaustive containment scan on small random polygons
        rng = np.random.default_rng(23)
        for _ in range(50):
            verts = [(int(rng.integers(0, 24)), int(rng.integers(0, 24))) for _ in range(4)]
            try:
                box = dataio.polygon_box(verts, 24, 24)
            except ValueError:
                continue  # raster came out empty
            mask = dataio.rasterize_polygon(verts, 24, 24)
            rows, cols = np.nonzero(mask)
            assert cols.min() >= box.x_min and cols.max() <= box.x_max
            assert rows.min() >= box.y_min and rows.max() <= box.y_max


class TestImageSample:
    def test_shape_and_split_validated(self):
        with pytest.raises(ValueError):
            ImageSample("a", np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            ImageSample("a", np.zeros((4, 4, 3), dtype=np.uint8), split="val")
