"""Delay-and-sum beamforming: array snapshots to azimuth-elevation dB heatmaps.

Each grid cell evaluates 20*log10 || sum_k sample_k * exp(-j*phase_k) ||
with phase_k the plane-wave steering phase from sensor_model. The
exp(-j*phase) table is precomputed once per (geometry, grid) pair and
cached, leaving one complex multiply-accumulate per (cell, element) per
frame. beamform() is pure and reentrant; the cache is immutable after
build, so concurrent beamforming of different frames is fine.

Wideband audio is reduced to a narrowband snapshot at the dominant spectral
bin (the target signals are tonal); see dominant_bin_wavelength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import backend
from .errors import InputError
from .sensor_model import ArrayGeometry, ArraySnapshot, AudioBlock, TWO_PI, _freeze

DEFAULT_FLOOR_DB = -120.0
DEFAULT_DYNAMIC_RANGE_DB = 40.0
SPEED_OF_SOUND_M_S = 343.0


@dataclass(frozen=True)
class AngleGrid:
    """Azimuth-elevation grid the heatmap is evaluated on (degrees)."""

    az_min_deg: float = -45.0
    az_max_deg: float = 45.0
    az_steps: int = 91
    el_min_deg: float = -30.0
    el_max_deg: float = 30.0
    el_steps: int = 61

    def __post_init__(self):
        for name in ("az_min_deg", "az_max_deg", "el_min_deg", "el_max_deg"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not math.isfinite(v) or not -90.0 < v < 90.0:
                raise InputError(f"{name} must lie strictly inside (-90, 90), got {v!r}")
        object.__setattr__(self, "az_steps", int(self.az_steps))
        object.__setattr__(self, "el_steps", int(self.el_steps))
        if self.az_min_deg >= self.az_max_deg or self.el_min_deg >= self.el_max_deg:
            raise InputError("grid bounds need min < max on both axes")
        if self.az_steps < 2 or self.el_steps < 2:
            raise InputError("grid needs at least 2 steps per axis")

    def az_axis(self) -> np.ndarray:
        return np.linspace(self.az_min_deg, self.az_max_deg, self.az_steps)

    def el_axis(self) -> np.ndarray:
        return np.linspace(self.el_min_deg, self.el_max_deg, self.el_steps)

    @property
    def shape(self) -> tuple[int, int]:
        """(el_steps, az_steps), the heatmap matrix shape."""
        return (self.el_steps, self.az_steps)


DEFAULT_GRID = AngleGrid()


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Beamformed power in dB over an AngleGrid.

    values_db is (el_steps, az_steps) with row 0 at el_min (ascending
    elevation); every value is finite and >= floor_db.
    """

    grid: AngleGrid
    values_db: np.ndarray
    floor_db: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values_db, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise InputError(f"heatmap shape {values.shape} does not match grid {self.grid.shape}")
        floor = float(self.floor_db)
        if not math.isfinite(floor):
            raise InputError("floor_db must be finite")
        if not np.isfinite(values).all() or (values < floor).any():
            raise InputError("heatmap values must be finite and >= floor_db")
        object.__setattr__(self, "values_db", _freeze(values))
        object.__setattr__(self, "floor_db", floor)

    def peak(self) -> tuple[float, int, int]:
        """(value_db, el_index, az_index) of the maximum cell."""
        idx = int(np.argmax(self.values_db))
        el_i, az_i = divmod(idx, self.grid.az_steps)
        return float(self.values_db[el_i, az_i]), el_i, az_i

    def peak_angles(self) -> tuple[float, float]:
        """(azimuth_deg, elevation_deg) of the maximum cell."""
        _, el_i, az_i = self.peak()
        return float(self.grid.az_axis()[az_i]), float(self.grid.el_axis()[el_i])


@dataclass(frozen=True, eq=False)
class SteeringTable:
    """Precomputed exp(-j*phase) per (cell, element); immutable after build."""

    geometry: ArrayGeometry
    grid: AngleGrid
    conj_phasors: np.ndarray  # (el_steps*az_steps, K) complex128


@lru_cache(maxsize=32)
def steering_table(geometry: ArrayGeometry, grid: AngleGrid) -> SteeringTable:
    az = np.radians(grid.az_axis())
    el = np.radians(grid.el_axis())
    # Direction cosines per cell, elevation-major to match the heatmap layout.
    ux = (np.cos(el)[:, None] * np.sin(az)[None, :]).ravel()
    uy = np.broadcast_to(np.sin(el)[:, None], grid.shape).ravel().copy()
    pos = geometry.positions()
    phases = TWO_PI / geometry.wavelength * (np.outer(ux, pos[:, 0]) + np.outer(uy, pos[:, 1]))
    conj = np.ascontiguousarray(np.exp(-1j * phases), dtype=np.complex128)
    return SteeringTable(geometry=geometry, grid=grid, conj_phasors=_freeze(conj))


def clear_steering_cache() -> None:
    steering_table.cache_clear()


def beamform(snapshot: ArraySnapshot, geometry: ArrayGeometry,
             grid: AngleGrid = DEFAULT_GRID, floor_db: float = DEFAULT_FLOOR_DB) -> Heatmap:
    """Delay-and-sum the snapshot over the grid; returns a dB heatmap."""
    if snapshot.num_elements != geometry.num_elements:
        raise InputError(
            f"snapshot has {snapshot.num_elements} samples but geometry has "
            f"{geometry.num_elements} elements")
    floor = float(floor_db)
    if not math.isfinite(floor):
        raise InputError(f"floor_db must be finite, got {floor_db!r}")
    table = steering_table(geometry, grid)
    power = backend.kernels().beamform_power_db(table.conj_phasors, snapshot.samples, floor)
    return Heatmap(grid=grid, values_db=power.reshape(grid.shape), floor_db=floor)


def normalize(heatmap: Heatmap, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> np.ndarray:
    """Map the top `dynamic_range_db` dB below the peak onto [0, 1].

    out = clamp((v - (max - dynamic_range_db)) / dynamic_range_db, 0, 1), so
    the peak maps to 1.0. An all-floor heatmap (no signal anywhere) returns
    all zeros rather than raising.
    """
    rng = float(dynamic_range_db)
    if not math.isfinite(rng) or rng <= 0:
        raise InputError(f"dynamic_range_db must be > 0, got {dynamic_range_db!r}")
    values = heatmap.values_db
    peak = float(values.max())
    if peak <= heatmap.floor_db:
        return np.zeros_like(values)
    out = (values - (peak - rng)) / rng
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _dominant_bin(samples: np.ndarray, sample_rate: float) -> tuple[int, np.ndarray]:
    """(bin index, per-channel rfft) of the strongest non-DC frequency bin."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 64:
        raise InputError("audio needs at least 64 samples per channel, shape (n_samples, n_channels)")
    if not sample_rate > 0:
        raise InputError(f"sample_rate must be > 0, got {sample_rate!r}")
    spectrum = np.fft.rfft(arr, axis=0)
    magnitude = np.abs(spectrum).sum(axis=1)
    magnitude[0] = 0.0  # ignore DC
    if magnitude.max() <= 0.0:
        raise InputError("no dominant frequency: audio is silent")
    return int(np.argmax(magnitude)), spectrum


def dominant_bin_wavelength(audio, sample_rate: float | None = None,
                            speed_of_sound: float = SPEED_OF_SOUND_M_S) -> float:
    """Wavelength (m) of the strongest non-DC spectral bin across channels.

    `audio` is an AudioBlock or an (n_samples, n_channels) array plus
    sample_rate.
    """
    if isinstance(audio, AudioBlock):
        samples, rate = audio.samples, audio.sample_rate
    else:
        if sample_rate is None:
            raise InputError("sample_rate is required when audio is a bare array")
        samples, rate = audio, float(sample_rate)
    bin_idx, _ = _dominant_bin(samples, rate)
    freq = bin_idx * rate / samples.shape[0]
    return speed_of_sound / freq


def snapshot_from_audio(audio: AudioBlock, speed_of_sound: float = SPEED_OF_SOUND_M_S,
                        geometry_id: str | None = None) -> tuple[ArraySnapshot, float]:
    """Narrowband snapshot at the dominant bin; returns (snapshot, wavelength_m).

    The per-element complex sample is the rfft coefficient at the dominant
    bin scaled by 2/n, so a unit-amplitude on-bin tone yields unit-magnitude
    samples.
    """
    bin_idx, spectrum = _dominant_bin(audio.samples, audio.sample_rate)
    n = audio.samples.shape[0]
    coeffs = spectrum[bin_idx] * (2.0 / n)
    freq = bin_idx * audio.sample_rate / n
    snapshot = ArraySnapshot(samples=coeffs, timestamp_ns=audio.timestamp_ns, geometry_id=geometry_id)
    return snapshot, speed_of_sound / freq


# ---------------------------------------------------------------------------
# Heatmap export (goldens)

def write_heatmap_pfm(heatmap: Heatmap, path) -> None:
    """Grayscale PFM dump of the raw dB values.

    PFM scanlines run bottom-to-top; with elevation ascending over rows this
    means the file stores row 0 (el_min) first and viewers show el_max on top.
    Negative scale marks little-endian.
    """
    h, w = heatmap.values_db.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + heatmap.values_db.astype("<f4").tobytes())


def read_heatmap_pfm(path) -> np.ndarray:
    """Read back a grayscale PFM written by write_heatmap_pfm (el-ascending rows)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise InputError(f"{path} is not a grayscale PFM file")
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w).astype(np.float64)


def write_heatmap_png16(heatmap: Heatmap, path,
                        dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> None:
    """16-bit grayscale PNG of the normalized heatmap, el_max at the top row."""
    from PIL import Image

    norm = normalize(heatmap, dynamic_range_db)
    quantized = np.floor(np.flipud(norm) * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(quantized).save(Path(path))
