import numpy as np
import pytest

from omnifuse.errors import DataError, InputError
from omnifuse.imaging import (
    CalibrationTransform,
    RgbImage,
    calibrate,
    calibrate_field,
    colorize,
    get_colormap,
    invert,
    load_calibration,
    load_png,
    load_thermal_csv,
    load_thermal_pgm,
    normalize_thermal,
    save_calibration,
    save_png,
    save_thermal_csv,
    save_thermal_pgm,
)
from omnifuse.sensor_model import ThermalFrame

from conftest import gradient_rgb
from oracles import (
    oracle_affine,
    oracle_affine_apply,
    oracle_affine_compose,
)


def random_invertible_transform(rng, sw=40, sh=30, tw=64, th=48):
    """Random transform from the subfamily closed under inversion.

    Either isotropic scale with any rotation, or anisotropic scale with an
    axis-aligned rotation.
    """
    if rng.random() < 0.7:
        s = float(rng.uniform(0.6, 1.8))
        sx = sy = s
        rot = float(rng.uniform(-40, 40))
    else:
        sx = float(rng.uniform(0.6, 1.8))
        sy = float(rng.uniform(0.6, 1.8))
        rot = float(rng.choice([0.0, 90.0, 180.0, -90.0]))
    return CalibrationTransform(
        source_width=sw, source_height=sh, target_width=tw, target_height=th,
        rotation_deg=rot, scale_x=sx, scale_y=sy,
        translate_x=float(rng.uniform(-6, 6)), translate_y=float(rng.uniform(-6, 6)))


class TestColormaps:
    def test_registry(self):
        for name in ("thermal_iron", "spectral_jet", "grayscale"):
            cm = get_colormap(name)
            assert cm.lut.shape == (256, 3)
            assert not (cm.lut[0] == cm.lut[255]).all()
        with pytest.raises(InputError):
            get_colormap("viridis")

    def test_colorize_endpoints(self):
        gray = get_colormap("grayscale")
        zero = colorize(np.zeros((3, 4)), gray)
        one = colorize(np.ones((3, 4)), gray)
        assert (zero.pixels == gray.lut[0]).all()
        assert (one.pixels == gray.lut[255]).all()

    def test_colorize_grayscale_pair(self):
        out = colorize(np.array([[0.0, 1.0]]), get_colormap("grayscale"))
        assert out.pixels[0, 0].tolist() == [0, 0, 0]
        assert out.pixels[0, 1].tolist() == [255, 255, 255]

    def test_colorize_rejects_out_of_range(self):
        gray = get_colormap("grayscale")
        with pytest.raises(InputError):
            colorize(np.array([[1.2]]), gray)
        with pytest.raises(InputError):
            colorize(np.array([[float("nan")]]), gray)

    def test_colorize_index_monotone(self, rng):
        # v1 <= v2 implies index(v1) <= index(v2), regardless of colormap.
        values = np.sort(rng.random(100))
        idx = np.floor(values * 255 + 0.5)
        assert (np.diff(idx) >= 0).all()

    def test_colorize_preserves_dims(self, rng):
        out = colorize(rng.random((7, 13)), get_colormap("spectral_jet"))
        assert (out.width, out.height) == (13, 7)


class TestNormalizeThermal:
    def test_endpoints(self):
        frame = ThermalFrame(width=2, height=1, values=np.array([10.0, 30.0]))
        out = normalize_thermal(frame, 10.0, 30.0)
        assert out[0, 0] == 0.0 and out[0, 1] == 1.0

    def test_midpoint(self):
        frame = ThermalFrame(width=3, height=2, values=np.full(6, 20.0))
        assert (normalize_thermal(frame, 10.0, 30.0) == 0.5).all()

    def test_hot_pixel_clamps(self):
        frame = ThermalFrame(width=2, height=1, values=np.array([20.0, 40.0]))
        out = normalize_thermal(frame, 10.0, 30.0)
        assert out[0, 1] == 1.0

    def test_bad_bounds(self):
        frame = ThermalFrame(width=2, height=1, values=np.zeros(2))
        with pytest.raises(InputError):
            normalize_thermal(frame, 5.0, 5.0)


class TestCalibrationTransform:
    def test_identity_roundtrip_on_pixels(self):
        img = gradient_rgb(32, 24)
        transform = CalibrationTransform.identity(32, 24)
        out = calibrate(img, transform)
        assert np.array_equal(out.image.pixels, img.pixels)
        assert (out.validity == 1).all()

    def test_quarter_turn_of_2x2_pattern(self):
        red, green, blue, white = (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 255)
        src = RgbImage.from_array(np.array([[red, green], [blue, white]], dtype=np.uint8))
        transform = CalibrationTransform(source_width=2, source_height=2,
                                         target_width=2, target_height=2, rotation_deg=90.0)
        out = calibrate(src, transform)
        assert out.image.pixels[0, 0].tolist() == list(blue)
        assert out.image.pixels[0, 1].tolist() == list(red)
        assert out.image.pixels[1, 0].tolist() == list(white)
        assert out.image.pixels[1, 1].tolist() == list(green)
        assert (out.validity == 1).all()

    def test_degenerate_crop_rejected(self):
        with pytest.raises(InputError):
            CalibrationTransform(source_width=4, source_height=4,
                                 target_width=8, target_height=8, crop=(0, 0, 0, 5))

    def test_crop_outside_target_rejected(self):
        with pytest.raises(InputError):
            CalibrationTransform(source_width=4, source_height=4,
                                 target_width=8, target_height=8, crop=(4, 4, 8, 4))

    def test_wrong_source_dims_rejected(self):
        img = gradient_rgb(10, 10)
        transform = CalibrationTransform.identity(12, 12)
        with pytest.raises(InputError):
            calibrate(img, transform)

    def test_crop_gates_validity(self):
        img = gradient_rgb(16, 16)
        transform = CalibrationTransform(source_width=16, source_height=16,
                                         target_width=16, target_height=16,
                                         crop=(4, 4, 8, 8))
        out = calibrate(img, transform)
        assert (out.validity[4:12, 4:12] == 1).all()
        assert out.validity.sum() == 64
        assert (out.image.pixels[out.validity == 0] == 0).all()

    def test_affine_matches_oracle(self, rng):
        for _ in range(50):
            transform = CalibrationTransform(
                source_width=int(rng.integers(4, 60)), source_height=int(rng.integers(4, 60)),
                target_width=80, target_height=60,
                rotation_deg=float(rng.uniform(-180, 180)),
                scale_x=float(rng.uniform(0.3, 3)), scale_y=float(rng.uniform(0.3, 3)),
                translate_x=float(rng.uniform(-20, 20)), translate_y=float(rng.uniform(-20, 20)))
            m_o, b_o = oracle_affine(transform.rotation_deg, transform.scale_x,
                                     transform.scale_y, transform.translate_x,
                                     transform.translate_y, transform.source_width,
                                     transform.source_height)
            pt = (float(rng.uniform(0, 50)), float(rng.uniform(0, 50)))
            expected = oracle_affine_apply(m_o, b_o, pt)
            got = transform.apply_points(np.array([pt]))[0]
            assert got[0] == pytest.approx(expected[0], abs=1e-9)
            assert got[1] == pytest.approx(expected[1], abs=1e-9)

    def test_value_range_preserved(self, rng):
        # Bilinear convexity: output channels never exceed the source max.
        src = RgbImage.from_array(rng.integers(10, 200, (20, 30, 3), dtype=np.uint8))
        transform = CalibrationTransform(source_width=30, source_height=20,
                                         target_width=40, target_height=40,
                                         rotation_deg=13.0, scale_x=1.3, scale_y=1.3,
                                         translate_x=4.0, translate_y=2.0)
        out = calibrate(src, transform)
        valid = out.validity == 1
        assert out.image.pixels[valid].max() <= src.pixels.max()
        assert out.image.pixels[valid].min() >= src.pixels.min()


class TestInvert:
    def test_identity(self):
        transform = CalibrationTransform.identity(10, 12)
        inv = invert(transform)
        assert inv.rotation_deg == 0.0
        assert inv.scale_x == 1.0 and inv.scale_y == 1.0
        assert inv.translate_x == pytest.approx(0.0, abs=1e-12)

    def test_pure_rotation_inverts_sign(self):
        transform = CalibrationTransform(source_width=20, source_height=20,
                                         target_width=30, target_height=30,
                                         rotation_deg=30.0)
        inv = invert(transform)
        assert inv.rotation_deg == -30.0
        # Different source/target centers force a compensating translation.
        assert (abs(inv.translate_x) + abs(inv.translate_y)) > 0

    def test_point_roundtrip_random_transforms(self, rng):
        # forward then inverse is the identity point map within 1e-6 px.
        for _ in range(100):
            transform = random_invertible_transform(rng)
            inv = invert(transform)
            pts = np.column_stack([rng.uniform(0, 39, 25), rng.uniform(0, 29, 25)])
            back = inv.apply_points(transform.apply_points(pts))
            assert np.abs(back - pts).max() < 1e-6

    def test_composition_matches_analytic_oracle(self, rng):
        for _ in range(50):
            transform = random_invertible_transform(rng)
            inv = invert(transform)
            m1, b1 = oracle_affine(transform.rotation_deg, transform.scale_x, transform.scale_y,
                                   transform.translate_x, transform.translate_y,
                                   transform.source_width, transform.source_height)
            m2, b2 = oracle_affine(inv.rotation_deg, inv.scale_x, inv.scale_y,
                                   inv.translate_x, inv.translate_y,
                                   inv.source_width, inv.source_height)
            m, b = oracle_affine_compose(m2, b2, m1, b1)
            assert abs(m[0][0] - 1) < 1e-9 and abs(m[1][1] - 1) < 1e-9
            assert abs(m[0][1]) < 1e-9 and abs(m[1][0]) < 1e-9
            assert abs(b[0]) < 1e-6 and abs(b[1]) < 1e-6

    def test_quarter_turn_anisotropic_swaps_scales(self):
        transform = CalibrationTransform(source_width=20, source_height=10,
                                         target_width=40, target_height=40,
                                         rotation_deg=90.0, scale_x=2.0, scale_y=0.5)
        inv = invert(transform)
        assert inv.scale_x == pytest.approx(2.0)
        assert inv.scale_y == pytest.approx(0.5)
        pts = np.array([[3.0, 7.0], [11.0, 2.0]])
        back = inv.apply_points(transform.apply_points(pts))
        assert np.abs(back - pts).max() < 1e-9

    def test_unrepresentable_inverse_raises(self):
        transform = CalibrationTransform(source_width=20, source_height=10,
                                         target_width=40, target_height=40,
                                         rotation_deg=10.0, scale_x=2.0, scale_y=0.5)
        with pytest.raises(InputError, match="not representable"):
            invert(transform)
        # The numeric inverse still round-trips points for such transforms.
        pts = np.array([[3.0, 7.0]])
        back = transform.apply_points_inverse(transform.apply_points(pts))
        assert np.abs(back - pts).max() < 1e-9

    def test_image_roundtrip_on_gradient(self, rng):
        # Bilinear reproduces planar ramps exactly, so the round-trip error is
        # bounded by the two uint8 quantizations.
        src = gradient_rgb(40, 30)
        for _ in range(20):
            transform = random_invertible_transform(rng)
            inv = invert(transform)
            forward = calibrate(src, transform)
            back = calibrate(forward.image, inv)
            valid_field, _ = calibrate_field(forward.validity.astype(np.float64), inv)
            trusted = (back.validity == 1) & (valid_field >= 0.999999)
            if not trusted.any():
                continue
            diff = np.abs(back.image.pixels.astype(int) - src.pixels.astype(int))
            assert diff[trusted].max() <= 2


class TestCalibrateField:
    def test_matches_rgb_warp_on_gray_content(self, rng):
        field = rng.random((24, 32))
        transform = CalibrationTransform(source_width=32, source_height=24,
                                         target_width=50, target_height=40,
                                         rotation_deg=-7.0, scale_x=1.4, scale_y=1.4,
                                         translate_x=3.0, translate_y=5.0)
        out, validity = calibrate_field(field, transform)
        assert out.shape == (40, 50)
        assert (out[validity == 0] == 0.0).all()
        assert out[validity == 1].max() <= field.max() + 1e-12

    def test_identity_exact(self, rng):
        field = rng.random((10, 12))
        out, validity = calibrate_field(field, CalibrationTransform.identity(12, 10))
        assert np.array_equal(out, field)
        assert (validity == 1).all()


class TestImagingIO:
    def test_calibration_file_roundtrip(self, tmp_path):
        transform = CalibrationTransform(source_width=91, source_height=61,
                                         target_width=640, target_height=480,
                                         rotation_deg=1.5, scale_x=7.0, scale_y=7.9,
                                         translate_x=2.0, translate_y=-3.0,
                                         crop=(10, 10, 600, 460))
        save_calibration("mmwave0", transform, tmp_path / "c.json")
        sensor_id, back = load_calibration(tmp_path / "c.json")
        assert sensor_id == "mmwave0"
        assert back == transform

    def test_calibration_malformed(self, tmp_path):
        (tmp_path / "c.json").write_text('{"scale": [1, 1]}')
        with pytest.raises(DataError):
            load_calibration(tmp_path / "c.json")

    def test_png_roundtrip(self, tmp_path, rng):
        img = RgbImage.from_array(rng.integers(0, 256, (15, 20, 3), dtype=np.uint8))
        save_png(img, tmp_path / "i.png")
        back = load_png(tmp_path / "i.png")
        assert np.array_equal(back.pixels, img.pixels)

    def test_thermal_csv_roundtrip(self, tmp_path, rng):
        frame = ThermalFrame(width=8, height=5, values=rng.uniform(15, 45, 40))
        save_thermal_csv(frame, tmp_path / "t.csv")
        back = load_thermal_csv(tmp_path / "t.csv")
        assert np.array_equal(back.values, frame.values)

    def test_thermal_pgm_roundtrip(self, tmp_path):
        values = np.arange(24, dtype=np.float64).reshape(4, 6) * 1000
        frame = ThermalFrame(width=6, height=4, values=values)
        save_thermal_pgm(frame, tmp_path / "t.pgm")
        back = load_thermal_pgm(tmp_path / "t.pgm")
        assert np.array_equal(back.values, values)
