"""Mask-gated alpha blending: the sensor-masked image, plus RGB statistics.

The blend paints calibrated sensor color into the RGB frame only where the
segmentation mask is set AND the calibrated sensor actually has data
(validity=1); a masked pixel with no sensor coverage falls back to the RGB
pixel instead of painting calibration fill-black, so the output never
fabricates a "cold/silent" reading. Everywhere else the output is
bit-identical to the RGB input.

Per-channel rounding is half-up after the convex combination, pinned so
goldens are bit-exact across platforms. Blends of different sensors for the
same frame are pure and independent; run them concurrently at will.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import backend
from .errors import DataError, InputError
from .imaging import RgbImage
from .sensor_model import _freeze

DEFAULT_ALPHA = 1.0


class MaskSource(str, enum.Enum):
    FILE = "file"
    SERVICE = "service"


@dataclass(frozen=True, eq=False)
class SegMask:
    """Binary segmentation mask in RGB pixel coordinates (1 = overlay here)."""

    width: int
    height: int
    bits: np.ndarray  # (h, w) uint8 of exactly 0/1, read-only
    prompt_text: str = ""
    source: MaskSource = MaskSource.FILE
    created_at: float = 0.0  # monotonic seconds; 0 for synthetic/offline masks

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.shape != (int(self.height), int(self.width)):
            raise InputError(
                f"mask bits shape {bits.shape} does not match {self.width}x{self.height}")
        if not np.isin(bits, (0, 1)).all():
            raise InputError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "bits", _freeze(bits))
        object.__setattr__(self, "source", MaskSource(self.source))

    def coverage(self) -> float:
        """Fraction of pixels set."""
        return float(self.bits.sum()) / self.bits.size


@dataclass(frozen=True, eq=False)
class SensorMaskedImage:
    """The pipeline's product: RGB frame with sensor data blended inside the mask."""

    image: RgbImage
    alpha: float
    sensor_id: str
    mask_ref: SegMask
    frame_timestamp_ns: int = 0


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha) or not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha


def blend(rgb: RgbImage, sensor_calibrated: RgbImage, validity: np.ndarray,
          mask: SegMask, alpha: float = DEFAULT_ALPHA, sensor_id: str = "",
          frame_timestamp_ns: int = 0) -> SensorMaskedImage:
    """Blend calibrated sensor color into the RGB frame inside the mask.

    Per pixel: mask & validity -> round_half_up(alpha*sensor + (1-alpha)*rgb)
    per channel; mask without validity -> rgb; unmasked -> rgb, bit-exact.
    """
    alpha = _check_alpha(alpha)
    validity = np.ascontiguousarray(validity, dtype=np.uint8)
    dims = {(rgb.width, rgb.height), (sensor_calibrated.width, sensor_calibrated.height),
            (mask.width, mask.height), (validity.shape[1], validity.shape[0])}
    if len(dims) != 1:
        raise InputError(f"rgb/sensor/validity/mask dimensions disagree: {sorted(dims)}")
    out = backend.kernels().blend_masked(
        rgb.pixels, sensor_calibrated.pixels, mask.bits, validity, alpha)
    return SensorMaskedImage(image=RgbImage.from_array(out), alpha=alpha,
                             sensor_id=sensor_id, mask_ref=mask,
                             frame_timestamp_ns=frame_timestamp_ns)


def composite(rgb: RgbImage, layers) -> RgbImage:
    """Blend several sensors into one frame, in order.

    Not the default pipeline path (each sensor normally produces its own
    sensor-masked image); provided for visualization. `layers` is an
    iterable of (sensor_calibrated, validity, mask, alpha).
    """
    current = rgb
    for sensor_img, validity, mask, alpha in layers:
        current = blend(current, sensor_img, validity, mask, alpha).image
    return current


@dataclass(frozen=True)
class RgbStatsReport:
    """Per-channel (R, G, B) distance measures between two images."""

    mean_delta: tuple[float, float, float]
    hist_intersection: tuple[float, float, float]

    def min_intersection(self) -> float:
        return min(self.hist_intersection)


def rgb_statistics_distance(a: RgbImage, b: RgbImage, bins: int = 64) -> RgbStatsReport:
    """Compare channel statistics: absolute mean delta and histogram intersection.

    Histograms use `bins` equal-width bins over 0..255 and are normalized, so
    the intersection lies in [0, 1] with 1.0 for identical distributions.
    Symmetric in (a, b).
    """
    if (a.width, a.height) != (b.width, b.height):
        raise InputError("images must share dimensions")
    if 256 % bins != 0:
        raise InputError(f"bins must divide 256, got {bins}")
    shift = (256 // bins - 1).bit_length()
    n = a.width * a.height
    deltas = []
    inters = []
    for c in range(3):
        ca = a.pixels[:, :, c]
        cb = b.pixels[:, :, c]
        deltas.append(abs(float(ca.mean()) - float(cb.mean())))
        ha = np.bincount((ca.ravel() >> shift), minlength=bins) / n
        hb = np.bincount((cb.ravel() >> shift), minlength=bins) / n
        inters.append(float(np.minimum(ha, hb).sum()))
    return RgbStatsReport(mean_delta=tuple(deltas), hist_intersection=tuple(inters))


# ---------------------------------------------------------------------------
# File formats

def mask_from_png_bytes(data: bytes, prompt_text: str = "",
                        source: MaskSource = MaskSource.SERVICE,
                        created_at: float = 0.0) -> SegMask:
    """Decode a strict 0/255 8-bit grayscale PNG into a SegMask."""
    import io

    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode != "L":
                raise DataError(f"mask PNG must be 8-bit grayscale, got mode {img.mode!r}")
            arr = np.asarray(img, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode mask PNG: {exc}") from exc
    if not np.isin(arr, (0, 255)).all():
        raise DataError("mask PNG may only contain values 0 and 255")
    return SegMask(width=arr.shape[1], height=arr.shape[0], bits=(arr == 255).astype(np.uint8),
                   prompt_text=prompt_text, source=source, created_at=created_at)


def load_mask_png(path, prompt_text: str = "", created_at: float = 0.0) -> SegMask:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read mask file {path}: {exc}") from exc
    try:
        return mask_from_png_bytes(data, prompt_text=prompt_text,
                                   source=MaskSource.FILE, created_at=created_at)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_mask_png(mask, path) -> None:
    bits = mask.bits if isinstance(mask, SegMask) else np.asarray(mask, dtype=np.uint8)
    Image.fromarray((bits * np.uint8(255)), mode="L").save(Path(path))


def write_sidecar(path, *, alpha: float, mask_prompt: str, mask_age_ms: float,
                  extra: dict | None = None) -> None:
    """JSON sidecar accompanying each sensor-masked image."""
    doc = {"alpha": alpha, "mask_prompt": mask_prompt, "mask_age_ms": mask_age_ms}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
