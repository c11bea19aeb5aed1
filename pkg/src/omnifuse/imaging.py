"""Sensor-plane data to RGB-frame-aligned color images.

Covers colormap lookup, thermal normalization, and the one-time
rotation/scale/translate/crop calibration that registers each sensor's
image plane onto the RGB camera frame.

Coordinate conventions: continuous pixel coordinates (u, v) = (column, row)
with (0, 0) at the center of the top-left pixel. The calibration applies
rotation (about the source image center), then scale, then translation;
positive rotation turns the +u axis toward the +v axis. Resampling is
bilinear (heatmaps are smooth; nearest-neighbor would shift peaks), and
every calibrated image comes with a validity matrix marking where real
sensor data landed, so blending never paints out-of-FoV fill as data.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from . import backend
from .errors import DataError, InputError
from .sensor_model import ThermalFrame, _freeze


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit RGB raster; pixels is (height, width, 3) uint8, read-only."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        w, h = int(self.width), int(self.height)
        pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if pixels.size != 3 * w * h:
            raise InputError(f"expected {3 * w * h} pixel bytes for {w}x{h}, got {pixels.size}")
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "pixels", _freeze(pixels.reshape(h, w, 3)))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RgbImage":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InputError(f"expected an (h, w, 3) array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)


@dataclass(frozen=True, eq=False)
class Colormap:
    """256-entry RGB lookup table."""

    name: str
    lut: np.ndarray  # (256, 3) uint8, read-only

    def __post_init__(self):
        lut = np.ascontiguousarray(self.lut, dtype=np.uint8)
        if lut.shape != (256, 3):
            raise InputError(f"colormap needs exactly 256 RGB entries, got shape {lut.shape}")
        if (lut[0] == lut[255]).all():
            raise InputError("colormap endpoints must be distinct")
        object.__setattr__(self, "lut", _freeze(lut))


def _build_grayscale() -> np.ndarray:
    ramp = np.arange(256, dtype=np.uint8)
    return np.stack([ramp, ramp, ramp], axis=1)


def _build_spectral_jet() -> np.ndarray:
    t = np.arange(256) / 255.0
    r = np.clip(1.5 - np.abs(4.0 * t - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * t - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * t - 1.0), 0.0, 1.0)
    return np.floor(np.stack([r, g, b], axis=1) * 255.0 + 0.5).astype(np.uint8)


def _build_thermal_iron() -> np.ndarray:
    # Classic "iron bow" anchors, black through purple/red/orange to white.
    anchors = np.array([
        (0, 0, 0), (32, 0, 66), (106, 0, 136), (171, 27, 114),
        (221, 73, 57), (249, 131, 20), (254, 201, 27), (255, 255, 255),
    ], dtype=np.float64)
    t = np.arange(256) / 255.0
    knots = np.linspace(0.0, 1.0, len(anchors))
    lut = np.stack([np.interp(t, knots, anchors[:, c]) for c in range(3)], axis=1)
    return np.floor(lut + 0.5).astype(np.uint8)


_COLORMAPS = {
    "grayscale": Colormap("grayscale", _build_grayscale()),
    "spectral_jet": Colormap("spectral_jet", _build_spectral_jet()),
    "thermal_iron": Colormap("thermal_iron", _build_thermal_iron()),
}


def get_colormap(name: str) -> Colormap:
    try:
        return _COLORMAPS[name]
    except KeyError:
        raise InputError(f"unknown colormap {name!r}; available: {sorted(_COLORMAPS)}") from None


def colorize(values: np.ndarray, colormap: Colormap) -> RgbImage:
    """Map a unit-interval matrix through the colormap LUT.

    index = round_half_up(v * 255); output dims equal input dims.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"colorize expects a 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("colorize input must lie within [0, 1]")
    idx = np.floor(arr * 255.0 + 0.5).astype(np.intp)
    return RgbImage.from_array(colormap.lut[idx])


def normalize_thermal(frame, t_lo: float, t_hi: float) -> np.ndarray:
    """Clamp-scale thermal intensities onto [0, 1]: (v - t_lo) / (t_hi - t_lo)."""
    if not (math.isfinite(t_lo) and math.isfinite(t_hi)) or t_lo >= t_hi:
        raise InputError(f"need t_lo < t_hi, got ({t_lo!r}, {t_hi!r})")
    values = frame.values if isinstance(frame, ThermalFrame) else np.asarray(frame, dtype=np.float64)
    out = (values - t_lo) / (t_hi - t_lo)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Calibration

def _rotation_matrix(rotation_deg: float) -> np.ndarray:
    th = math.radians(rotation_deg)
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class CalibrationTransform:
    """Maps a sensor's pixel plane onto the RGB frame.

    The transform is bound to a specific sensor resolution (source_width x
    source_height): applying it to an image of any other size is an error,
    which keeps a stale calibration from silently misaligning data. Rotation
    is about the source image center. The crop rectangle, in target pixels,
    is where sensor data may land; everything else is fill.
    """

    source_width: int
    source_height: int
    target_width: int
    target_height: int
    rotation_deg: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0
    crop: tuple[int, int, int, int] | None = None  # (x, y, w, h); None = full target

    def __post_init__(self):
        for name in ("source_width", "source_height", "target_width", "target_height"):
            v = int(getattr(self, name))
            if v < 1:
                raise InputError(f"{name} must be >= 1, got {v}")
            object.__setattr__(self, name, v)
        for name in ("rotation_deg", "scale_x", "scale_y", "translate_x", "translate_y"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InputError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise InputError("scale factors must be positive")
        crop = self.crop
        if crop is None:
            crop = (0, 0, self.target_width, self.target_height)
        crop = tuple(int(c) for c in crop)
        x, y, w, h = crop
        if w < 1 or h < 1:
            raise InputError(f"degenerate crop rectangle {crop}")
        if x < 0 or y < 0 or x + w > self.target_width or y + h > self.target_height:
            raise InputError(f"crop {crop} falls outside target {self.target_width}x{self.target_height}")
        object.__setattr__(self, "crop", crop)

    @classmethod
    def identity(cls, width: int, height: int) -> "CalibrationTransform":
        return cls(source_width=width, source_height=height,
                   target_width=width, target_height=height)

    def source_center(self) -> np.ndarray:
        return np.array([(self.source_width - 1) / 2.0, (self.source_height - 1) / 2.0])

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward affine (M, b): p_target = M @ p_source + b."""
        rot = _rotation_matrix(self.rotation_deg)
        scale = np.diag([self.scale_x, self.scale_y])
        m = scale @ rot
        c = self.source_center()
        b = scale @ (c - rot @ c) + np.array([self.translate_x, self.translate_y])
        return m, b

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) source-plane points into the target plane."""
        m, b = self.matrix()
        return np.asarray(points, dtype=np.float64) @ m.T + b

    def apply_points_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) target-plane points back to the source plane.

        Uses the numeric matrix inverse, so it works for every valid
        transform including those invert() cannot represent.
        """
        m, b = self.matrix()
        m_inv = np.linalg.inv(m)
        return (np.asarray(points, dtype=np.float64) - b) @ m_inv.T


def fit_plane_calibration(plane_w: int, plane_h: int, rgb_w: int, rgb_h: int,
                          rotation_deg: float = 0.0,
                          translate: tuple[float, float] = (0.0, 0.0)) -> CalibrationTransform:
    """Calibration mapping the full sensor plane onto the full RGB frame."""
    return CalibrationTransform(
        source_width=plane_w, source_height=plane_h,
        target_width=rgb_w, target_height=rgb_h,
        rotation_deg=rotation_deg,
        scale_x=(rgb_w - 1) / max(plane_w - 1, 1),
        scale_y=(rgb_h - 1) / max(plane_h - 1, 1),
        translate_x=translate[0], translate_y=translate[1])


@dataclass(frozen=True, eq=False)
class CalibratedImage:
    """RGB-frame-sized sensor image plus its per-pixel data-validity matrix."""

    image: RgbImage
    validity: np.ndarray  # (h, w) uint8 0/1, read-only

    def __post_init__(self):
        validity = np.ascontiguousarray(self.validity, dtype=np.uint8)
        if validity.shape != (self.image.height, self.image.width):
            raise InputError("validity matrix must match image dimensions")
        object.__setattr__(self, "validity", _freeze(validity))


@dataclass(frozen=True, eq=False)
class _WarpPlan:
    ix0: np.ndarray
    ix1: np.ndarray
    iy0: np.ndarray
    iy1: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    valid: np.ndarray


@lru_cache(maxsize=32)
def _warp_plan(transform: CalibrationTransform) -> _WarpPlan:
    """Precompute per-target-pixel sample indices and bilinear weights."""
    tw, th = transform.target_width, transform.target_height
    sw, sh = transform.source_width, transform.source_height
    xs = np.arange(tw, dtype=np.float64)[None, :]
    ys = np.arange(th, dtype=np.float64)[:, None]
    cx, cy, cw, ch = transform.crop
    in_crop = (xs >= cx) & (xs < cx + cw) & (ys >= cy) & (ys < cy + ch)

    m, b = transform.matrix()
    m_inv = np.linalg.inv(m)
    dx = xs - b[0]
    dy = ys - b[1]
    u = m_inv[0, 0] * dx + m_inv[0, 1] * dy
    v = m_inv[1, 0] * dx + m_inv[1, 1] * dy

    # Boundary tolerance: exact-90-degree rotations etc. land edge pixels a
    # few ulps outside the source rectangle.
    eps = 1e-9
    valid = in_crop & (u >= -eps) & (u <= sw - 1 + eps) & (v >= -eps) & (v <= sh - 1 + eps)
    u = np.clip(u, 0.0, float(sw - 1))
    v = np.clip(v, 0.0, float(sh - 1))
    ix0 = np.clip(np.floor(u), 0, max(sw - 2, 0)).astype(np.int32)
    iy0 = np.clip(np.floor(v), 0, max(sh - 2, 0)).astype(np.int32)
    fx = np.where(valid, u - ix0, 0.0)
    fy = np.where(valid, v - iy0, 0.0)
    ix0 = np.where(valid, ix0, 0).astype(np.int32)
    iy0 = np.where(valid, iy0, 0).astype(np.int32)
    ix1 = np.minimum(ix0 + 1, sw - 1).astype(np.int32)
    iy1 = np.minimum(iy0 + 1, sh - 1).astype(np.int32)
    plan = _WarpPlan(
        ix0=_freeze(np.ascontiguousarray(ix0)), ix1=_freeze(np.ascontiguousarray(ix1)),
        iy0=_freeze(np.ascontiguousarray(iy0)), iy1=_freeze(np.ascontiguousarray(iy1)),
        fx=_freeze(np.ascontiguousarray(fx)), fy=_freeze(np.ascontiguousarray(fy)),
        valid=_freeze(np.ascontiguousarray(valid.astype(np.uint8))))
    return plan


def _check_source_dims(transform: CalibrationTransform, width: int, height: int) -> None:
    if (width, height) != (transform.source_width, transform.source_height):
        raise InputError(
            f"calibration was fitted for a {transform.source_width}x{transform.source_height} "
            f"sensor plane but got {width}x{height}")


def calibrate(sensor_image: RgbImage, transform: CalibrationTransform) -> CalibratedImage:
    """Resample a sensor-plane image onto the RGB frame.

    Output is target-sized; regions with no sensor coverage are black and
    flagged 0 in the validity matrix.
    """
    _check_source_dims(transform, sensor_image.width, sensor_image.height)
    plan = _warp_plan(transform)
    out = backend.kernels().warp_bilinear_rgb(
        sensor_image.pixels, plan.ix0, plan.ix1, plan.iy0, plan.iy1,
        plan.fx, plan.fy, plan.valid)
    return CalibratedImage(image=RgbImage.from_array(out), validity=plan.valid)


def calibrate_field(values: np.ndarray, transform: CalibrationTransform,
                    fill: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Resample a scalar field (e.g. normalized intensity) onto the RGB frame.

    Returns (field, validity); `fill` outside the valid region.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"expected a 2-D field, got shape {arr.shape}")
    _check_source_dims(transform, arr.shape[1], arr.shape[0])
    plan = _warp_plan(transform)
    out = backend.kernels().warp_bilinear_field(
        arr, plan.ix0, plan.ix1, plan.iy0, plan.iy1, plan.fx, plan.fy, plan.valid, float(fill))
    return out, plan.valid


def invert(transform: CalibrationTransform) -> CalibrationTransform:
    """Exact inverse within the rotate/scale/translate family.

    The family is closed under inversion only when the scale is isotropic or
    the rotation is a multiple of 90 degrees; anything else raises, because
    rotating anisotropically-scaled axes produces shear that the
    parameterization cannot express. apply_points_inverse() covers the
    general case for point math.
    """
    theta = transform.rotation_deg
    sx, sy = transform.scale_x, transform.scale_y
    uniform = abs(sx - sy) <= 1e-12 * max(sx, sy)
    half_mod = theta % 180.0
    straight = min(half_mod, 180.0 - half_mod) <= 1e-9   # multiple of 180
    quarter_turn = abs(half_mod - 90.0) <= 1e-9          # 90 or 270
    if not (uniform or straight or quarter_turn):
        raise InputError(
            "inverse not representable: anisotropic scale combined with a rotation "
            "that is not a multiple of 90 degrees (use apply_points_inverse for point math)")

    # A quarter turn swaps the axes, so the inverse scales swap too.
    if not uniform and quarter_turn:
        inv_sx, inv_sy = 1.0 / sy, 1.0 / sx
    else:
        inv_sx, inv_sy = 1.0 / sx, 1.0 / sy

    m, b = transform.matrix()
    m_inv = np.linalg.inv(m)
    b_inv = -m_inv @ b

    inv_rot = _rotation_matrix(-theta)
    inv_scale = np.diag([inv_sx, inv_sy])
    c_inv = np.array([(transform.target_width - 1) / 2.0, (transform.target_height - 1) / 2.0])
    translate = b_inv - inv_scale @ (c_inv - inv_rot @ c_inv)
    return CalibrationTransform(
        source_width=transform.target_width, source_height=transform.target_height,
        target_width=transform.source_width, target_height=transform.source_height,
        rotation_deg=-theta, scale_x=inv_sx, scale_y=inv_sy,
        translate_x=float(translate[0]), translate_y=float(translate[1]),
        crop=(0, 0, transform.source_width, transform.source_height))


# ---------------------------------------------------------------------------
# File formats

def save_calibration(sensor_id: str, transform: CalibrationTransform, path) -> None:
    doc = {
        "sensor_id": sensor_id,
        "rotation_deg": transform.rotation_deg,
        "scale": [transform.scale_x, transform.scale_y],
        "translate_px": [transform.translate_x, transform.translate_y],
        "crop": list(transform.crop),
        "source": [transform.source_width, transform.source_height],
        "target": [transform.target_width, transform.target_height],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_calibration(path) -> tuple[str, CalibrationTransform]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read calibration file {path}: {exc}") from exc
    try:
        transform = CalibrationTransform(
            source_width=doc["source"][0], source_height=doc["source"][1],
            target_width=doc["target"][0], target_height=doc["target"][1],
            rotation_deg=doc.get("rotation_deg", 0.0),
            scale_x=doc["scale"][0], scale_y=doc["scale"][1],
            translate_x=doc.get("translate_px", [0, 0])[0],
            translate_y=doc.get("translate_px", [0, 0])[1],
            crop=tuple(doc["crop"]) if "crop" in doc else None)
        return str(doc.get("sensor_id", "")), transform
    except (KeyError, TypeError, IndexError, InputError) as exc:
        raise DataError(f"malformed calibration file {path}: {exc}") from exc


def load_png(path) -> RgbImage:
    try:
        with Image.open(Path(path)) as img:
            rgb = img.convert("RGB")
            return RgbImage.from_array(np.asarray(rgb, dtype=np.uint8))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_png(image: RgbImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(Path(path))


def load_thermal_csv(path, timestamp_ns: int = 0) -> ThermalFrame:
    path = Path(path)
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read thermal CSV {path}: {exc}") from exc
    return ThermalFrame(width=values.shape[1], height=values.shape[0],
                        values=values, timestamp_ns=timestamp_ns)


def save_thermal_csv(frame: ThermalFrame, path) -> None:
    np.savetxt(Path(path), frame.values, delimiter=",", fmt="%.17g")


def load_thermal_pgm(path, timestamp_ns: int = 0) -> ThermalFrame:
    """16-bit binary PGM (P5, maxval 65535, big-endian samples)."""
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise DataError(f"{path} is not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise DataError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    data = np.frombuffer(raw, dtype=">u2", count=w * h, offset=m.end())
    return ThermalFrame(width=w, height=h, values=data.astype(np.float64),
                        timestamp_ns=timestamp_ns)


def save_thermal_pgm(frame: ThermalFrame, path) -> None:
    values = frame.values
    if values.min() < 0 or values.max() > 65535:
        raise InputError("PGM export requires values within [0, 65535]")
    header = f"P5\n{frame.width} {frame.height}\n65535\n".encode("ascii")
    body = np.floor(values + 0.5).astype(">u2").tobytes()
    Path(path).write_bytes(header + body)
