"""In-process array bindings for the sensor-masked image pipeline.

Exposes the fusion pipeline to ML training loops as arrays-in/arrays-out,
with no file round-trips: a BoundPipeline is constructed from the same JSON
config the CLI consumes, then fuse_frame() turns (RGB array, raw sensor
payload arrays, mask arrays) into per-sensor sensor-masked image arrays
that are bit-identical to what the CLI's batch mode writes for the same
inputs.

The binding is a boundary, not a reimplementation: it calls the installed
pipeline, spawns no background work (prompt/mask lifecycle is the host's
responsibility), and holds no mutable state, so a BoundPipeline can be
shared across host threads and data-loader workers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from omnifuse.beamformer import beamform
from omnifuse.fusion import SegMask, blend
from omnifuse.imaging import RgbImage
from omnifuse.pipeline import RunConfig, SensorProcessor
from omnifuse.sensor_model import ArraySnapshot, AudioBlock, SensorKind, ThermalFrame

__version__ = "0.1.0"

__all__ = ["BoundPipeline", "ShapeMismatchError", "beamform_frame", "fuse_frame"]


class ShapeMismatchError(ValueError):
    """An input array does not fit the named sensor's configuration."""

    def __init__(self, sensor_id: str, expected, actual, what: str = "payload"):
        self.sensor_id = sensor_id
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        self.what = what
        super().__init__(
            f"sensor {sensor_id!r}: {what} shape {self.actual} does not match "
            f"expected {self.expected}")


class BoundPipeline:
    """A configured pipeline instance minus its I/O paths.

    Construction validates exactly what the CLI validates: sensor
    uniqueness, calibration availability, and calibration/sensor-plane
    agreement.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self._processors = {s.sensor_id: SensorProcessor(s) for s in config.sensors}

    @classmethod
    def from_config(cls, path) -> "BoundPipeline":
        """Build from the same JSON config file the CLI consumes."""
        return cls(RunConfig.load(Path(path)))

    @property
    def sensor_ids(self) -> tuple[str, ...]:
        return tuple(self._processors)

    def processor(self, sensor_id: str) -> SensorProcessor:
        try:
            return self._processors[sensor_id]
        except KeyError:
            raise KeyError(f"no sensor {sensor_id!r} in this pipeline; "
                           f"configured: {sorted(self._processors)}") from None

    def _coerce_payload(self, sensor_id: str, payload, sample_rate: float | None):
        processor = self.processor(sensor_id)
        arr = np.asarray(payload)
        if processor.kind == SensorKind.THERMAL:
            expected = (processor.plane_size[1], processor.plane_size[0])
            if arr.ndim != 2 or arr.shape != expected:
                raise ShapeMismatchError(sensor_id, expected, arr.shape, "thermal frame")
            return ThermalFrame(width=expected[1], height=expected[0],
                                values=arr.astype(np.float64))
        if np.iscomplexobj(arr) or arr.ndim == 1:
            k = processor.geometry.num_elements
            if arr.ndim != 1 or arr.shape != (k,):
                raise ShapeMismatchError(sensor_id, (k,), arr.shape, "snapshot")
            return ArraySnapshot(samples=arr.astype(np.complex128), geometry_id=sensor_id)
        # 2-D real array on an array sensor: multichannel audio block
        k = processor.geometry.num_elements
        if arr.ndim != 2 or arr.shape[1] != k:
            raise ShapeMismatchError(sensor_id, ("n_samples", k), arr.shape, "audio block")
        if sample_rate is None:
            # The config carries no sample rate (snapshots are the native
            # payload); hosts passing audio attach one per call.
            raise ValueError(f"sensor {sensor_id!r}: pass sample_rates={{'{sensor_id}': hz}} "
                             "to fuse_frame when supplying audio arrays")
        return AudioBlock(samples=arr.astype(np.float64), sample_rate=sample_rate)


def _coerce_mask(sensor_id: str, mask, width: int, height: int) -> SegMask:
    bits = np.asarray(mask)
    if bits.shape != (height, width):
        raise ShapeMismatchError(sensor_id, (height, width), bits.shape, "mask")
    return SegMask(width=width, height=height, bits=bits.astype(np.uint8),
                   prompt_text="", created_at=0.0)


def fuse_frame(pipeline: BoundPipeline, rgb: np.ndarray, sensor_payloads: dict,
               masks: dict, alpha=None, sample_rates: dict | None = None) -> dict:
    """Blend each sensor's payload into the RGB frame; arrays in, arrays out.

    rgb: (H, W, 3) uint8. sensor_payloads: sensor_id -> raw payload array
    ((h, w) float for thermal, (K,) complex snapshot or (n, K) float audio
    for array sensors). masks: sensor_id -> (H, W) 0/1 array. alpha: scalar,
    per-sensor dict, or None for the configured per-sensor values.

    Returns sensor_id -> (H, W, 3) uint8, bit-identical to the PNGs the CLI
    batch mode writes for the same inputs. Synchronous and pure.
    """
    rgb_arr = np.asarray(rgb)
    if rgb_arr.ndim != 3 or rgb_arr.shape[2] != 3 or rgb_arr.dtype != np.uint8:
        raise ValueError(f"rgb must be (H, W, 3) uint8, got {rgb_arr.shape} {rgb_arr.dtype}")
    rgb_img = RgbImage.from_array(rgb_arr)
    rates = dict(sample_rates or {})

    missing = set(sensor_payloads) - set(masks)
    if missing:
        raise ValueError(f"masks missing for sensors: {sorted(missing)}")

    out = {}
    for sensor_id, payload in sensor_payloads.items():
        processor = pipeline.processor(sensor_id)
        mask = _coerce_mask(sensor_id, masks[sensor_id], rgb_img.width, rgb_img.height)
        if isinstance(alpha, dict):
            a = float(alpha.get(sensor_id, processor.cfg.alpha))
        elif alpha is None:
            a = processor.cfg.alpha
        else:
            a = float(alpha)
        coerced = pipeline._coerce_payload(sensor_id, payload, rates.get(sensor_id))
        processed = processor.process(coerced)
        fused = blend(rgb_img, processed.calibrated.image, processed.calibrated.validity,
                      mask, a, sensor_id=sensor_id)
        out[sensor_id] = np.array(fused.image.pixels)
    return out


def beamform_frame(pipeline: BoundPipeline, sensor_id: str, snapshot: np.ndarray) -> np.ndarray:
    """Delay-and-sum one snapshot through the named sensor's configuration.

    snapshot: (K,) complex. Returns the (el_steps, az_steps) float64 dB
    heatmap, elementwise identical to the pipeline's own beamformer.
    """
    processor = pipeline.processor(sensor_id)
    if processor.kind == SensorKind.THERMAL:
        raise ValueError(f"sensor {sensor_id!r} is a thermal camera, not an array")
    arr = np.asarray(snapshot)
    k = processor.geometry.num_elements
    if arr.ndim != 1 or arr.shape != (k,):
        raise ShapeMismatchError(sensor_id, (k,), arr.shape, "snapshot")
    snap = ArraySnapshot(samples=arr.astype(np.complex128), geometry_id=sensor_id)
    heatmap = beamform(snap, processor.geometry, processor.cfg.grid, processor.cfg.floor_db)
    return np.array(heatmap.values_db)
