"""Array geometry, raw frame types, and a synthetic far-field scene simulator.

The simulator is the ground-truth oracle used throughout the test suite: it
generates per-element complex samples for point sources at known directions,
using the same plane-wave phase model the beamformer inverts,

    phase(k) = (2*pi/wavelength) * (x_k * cos(el) * sin(az) + y_k * sin(el))

with element positions (x_k, y_k) in meters on the z=0 plane. Azimuth and
elevation are degrees at every public boundary and radians internally.

All types are immutable after construction and all functions are pure, so
everything here is safe for concurrent use.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, GeometryError, InputError

TWO_PI = 2.0 * math.pi

_SNAPSHOT_MAGIC = b"OMNISNAP"


class SensorKind(str, enum.Enum):
    MMWAVE_RADAR = "mmwave_radar"
    MICROPHONE_ARRAY = "microphone_array"
    THERMAL = "thermal"


_ARRAY_KINDS = (SensorKind.MMWAVE_RADAR, SensorKind.MICROPHONE_ARRAY)


def _check_angle(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or not -90.0 <= value <= 90.0:
        raise InputError(f"{name} must be a finite angle in [-90, 90] degrees, got {value!r}")
    return value


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions (meters, z=0 plane) and operating wavelength of a phased array.

    `elements` is a tuple of (x, y) pairs so geometries are hashable and can
    key the beamformer's steering-table cache.
    """

    elements: tuple[tuple[float, float], ...]
    wavelength: float
    sensor_kind: SensorKind = SensorKind.MICROPHONE_ARRAY

    def __post_init__(self):
        elements = tuple((float(x), float(y)) for x, y in self.elements)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "wavelength", float(self.wavelength))
        object.__setattr__(self, "sensor_kind", SensorKind(self.sensor_kind))
        if len(elements) < 2:
            raise GeometryError(f"array needs at least 2 elements, got {len(elements)}")
        for x, y in elements:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise GeometryError(f"non-finite element position ({x!r}, {y!r})")
        if len(set(elements)) != len(elements):
            raise GeometryError("two array elements share identical coordinates")
        if not (math.isfinite(self.wavelength) and self.wavelength > 0):
            raise GeometryError(f"wavelength must be > 0, got {self.wavelength!r}")
        if self.sensor_kind not in _ARRAY_KINDS:
            raise GeometryError(f"sensor_kind {self.sensor_kind.value!r} is not an array sensor")

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def positions(self) -> np.ndarray:
        """Element positions as a (K, 2) float array."""
        return np.asarray(self.elements, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ArraySnapshot:
    """One frame of complex per-element samples."""

    samples: np.ndarray  # (K,) complex128, read-only
    timestamp_ns: int = 0
    geometry_id: str | None = None

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size < 1:
            raise InputError(f"snapshot samples must be a non-empty 1-D vector, got shape {samples.shape}")
        if not np.isfinite(samples.view(np.float64)).all():
            raise InputError("snapshot contains non-finite samples")
        object.__setattr__(self, "samples", _freeze(samples))
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))

    @property
    def num_elements(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class PointSource:
    """Far-field point source for the scene simulator (front hemisphere)."""

    azimuth_deg: float
    elevation_deg: float
    amplitude: float = 1.0
    phase_offset_rad: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "azimuth_deg", _check_angle("azimuth_deg", self.azimuth_deg))
        object.__setattr__(self, "elevation_deg", _check_angle("elevation_deg", self.elevation_deg))
        amp = float(self.amplitude)
        if not math.isfinite(amp) or amp < 0:
            raise InputError(f"amplitude must be finite and >= 0, got {amp!r}")
        object.__setattr__(self, "amplitude", amp)
        pha = float(self.phase_offset_rad)
        if not math.isfinite(pha):
            raise InputError("phase_offset_rad must be finite")
        object.__setattr__(self, "phase_offset_rad", pha)


@dataclass(frozen=True, eq=False)
class ThermalFrame:
    """Raster of scalar infrared intensities (arbitrary linear units)."""

    width: int
    height: int
    values: np.ndarray  # (height, width) float64, read-only
    timestamp_ns: int = 0

    def __post_init__(self):
        w, h = int(self.width), int(self.height)
        if w < 1 or h < 1:
            raise InputError(f"thermal frame dims must be positive, got {w}x{h}")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.size != w * h:
            raise InputError(f"thermal frame expects {w * h} values, got {values.size}")
        values = values.reshape(h, w)
        if not np.isfinite(values).all():
            raise InputError("thermal frame contains non-finite values")
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))


@dataclass(frozen=True, eq=False)
class AudioBlock:
    """Block of multichannel PCM audio, one column per array element."""

    samples: np.ndarray  # (n_samples, n_channels) float64, read-only
    sample_rate: float
    timestamp_ns: int = 0

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise InputError(f"audio block must be (n_samples, n_channels), got shape {samples.shape}")
        if not np.isfinite(samples).all():
            raise InputError("audio block contains non-finite samples")
        rate = float(self.sample_rate)
        if not math.isfinite(rate) or rate <= 0:
            raise InputError(f"sample_rate must be > 0, got {rate!r}")
        object.__setattr__(self, "samples", _freeze(samples))
        object.__setattr__(self, "sample_rate", rate)
        object.__setattr__(self, "timestamp_ns", int(self.timestamp_ns))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]


def steering_phase(geometry: ArrayGeometry, element_index: int,
                   azimuth_deg: float, elevation_deg: float) -> float:
    """Plane-wave phase at one element for a look direction, in radians.

    Returns (2*pi/wavelength) * (x*cos(el)*sin(az) + y*sin(el)). Angles are
    accepted on the closed interval [-90, 90]; the endpoints are edge-on
    arrivals, which the phase model handles fine.
    """
    if not 0 <= element_index < geometry.num_elements:
        raise InputError(
            f"element_index {element_index} out of range for {geometry.num_elements}-element array")
    az = math.radians(_check_angle("azimuth_deg", azimuth_deg))
    el = math.radians(_check_angle("elevation_deg", elevation_deg))
    x, y = geometry.elements[element_index]
    return TWO_PI / geometry.wavelength * (x * math.cos(el) * math.sin(az) + y * math.sin(el))


def _steering_phases_vec(geometry: ArrayGeometry, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """All K steering phases for one direction (vectorized helper)."""
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    pos = geometry.positions()
    return TWO_PI / geometry.wavelength * (
        pos[:, 0] * (math.cos(el) * math.sin(az)) + pos[:, 1] * math.sin(el))


def simulate_snapshot(geometry: ArrayGeometry, sources: list[PointSource] | tuple[PointSource, ...],
                      noise_std: float, seed: int, timestamp_ns: int = 0,
                      geometry_id: str | None = None) -> ArraySnapshot:
    """Generate one ground-truth snapshot for a set of far-field sources.

    Each element sample is the coherent sum over sources of
    amplitude * exp(j*(steering_phase + phase_offset)), plus circularly
    symmetric complex Gaussian noise whose per-element standard deviation is
    `noise_std` (E|n|^2 == noise_std^2, split evenly between re and im).

    The seed is mandatory; identical arguments give identical snapshots. An
    empty source list yields a noise-only snapshot.
    """
    nstd = float(noise_std)
    if not math.isfinite(nstd) or nstd < 0:
        raise InputError(f"noise_std must be finite and >= 0, got {noise_std!r}")
    samples = np.zeros(geometry.num_elements, dtype=np.complex128)
    for src in sources:
        if not isinstance(src, PointSource):
            src = PointSource(*src)
        phases = _steering_phases_vec(geometry, src.azimuth_deg, src.elevation_deg)
        samples += src.amplitude * np.exp(1j * (phases + src.phase_offset_rad))
    if nstd > 0:
        rng = np.random.default_rng(seed)
        re = rng.standard_normal(geometry.num_elements)
        im = rng.standard_normal(geometry.num_elements)
        samples += (nstd / math.sqrt(2.0)) * (re + 1j * im)
    return ArraySnapshot(samples=samples, timestamp_ns=timestamp_ns, geometry_id=geometry_id)


def circular_array(num_elements: int, radius: float, wavelength: float,
                   sensor_kind: SensorKind = SensorKind.MICROPHONE_ARRAY) -> ArrayGeometry:
    """Evenly spaced elements on a circle, element 0 at (radius, 0)."""
    if num_elements < 2:
        raise InputError(f"circular array needs >= 2 elements, got {num_elements}")
    if not (math.isfinite(radius) and radius > 0):
        raise InputError(f"radius must be > 0, got {radius!r}")
    elements = tuple(
        (radius * math.cos(TWO_PI * k / num_elements), radius * math.sin(TWO_PI * k / num_elements))
        for k in range(num_elements))
    return ArrayGeometry(elements=elements, wavelength=wavelength, sensor_kind=sensor_kind)


# ---------------------------------------------------------------------------
# File formats

def save_geometry(geometry: ArrayGeometry, path) -> None:
    """Write geometry JSON: {sensor_kind, wavelength_m, elements: [[x,y],...]}."""
    doc = {
        "sensor_kind": geometry.sensor_kind.value,
        "wavelength_m": geometry.wavelength,
        "elements": [[x, y] for x, y in geometry.elements],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_geometry(path) -> ArrayGeometry:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read geometry file {path}: {exc}") from exc
    try:
        return ArrayGeometry(
            elements=tuple((float(x), float(y)) for x, y in doc["elements"]),
            wavelength=float(doc["wavelength_m"]),
            sensor_kind=SensorKind(doc["sensor_kind"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed geometry file {path}: {exc}") from exc


def write_snapshot(snapshot: ArraySnapshot, path) -> None:
    """Write the binary snapshot format.

    Little-endian: magic "OMNISNAP", u32 K, then K pairs of f64 (re, im),
    then i64 timestamp_ns.
    """
    k = snapshot.num_elements
    buf = bytearray()
    buf += _SNAPSHOT_MAGIC
    buf += struct.pack("<I", k)
    interleaved = np.empty(2 * k, dtype="<f8")
    interleaved[0::2] = snapshot.samples.real
    interleaved[1::2] = snapshot.samples.imag
    buf += interleaved.tobytes()
    buf += struct.pack("<q", snapshot.timestamp_ns)
    Path(path).write_bytes(bytes(buf))


def read_snapshot(path, geometry_id: str | None = None) -> ArraySnapshot:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read snapshot file {path}: {exc}") from exc
    if len(raw) < 12 or raw[:8] != _SNAPSHOT_MAGIC:
        raise DataError(f"{path} is not a snapshot file (bad magic)")
    (k,) = struct.unpack_from("<I", raw, 8)
    expected = 8 + 4 + 16 * k + 8
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for K={k}, got {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", count=2 * k, offset=12)
    (timestamp_ns,) = struct.unpack_from("<q", raw, 12 + 16 * k)
    samples = flat[0::2] + 1j * flat[1::2]
    try:
        return ArraySnapshot(samples=samples, timestamp_ns=timestamp_ns, geometry_id=geometry_id)
    except InputError as exc:
        raise DataError(f"{path}: {exc}") from exc
