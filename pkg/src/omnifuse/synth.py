"""Scene-scripted synthetic datasets with ground truth.

A scene script (JSON) places far-field sources and thermal hot spots,
optionally perturbs each sensor's calibration, and names the segmentation
prompt. make_synthetic_dataset() renders it into a runnable dataset:
frames, per-frame stub masks, geometry and calibration files, a ready
config.json, and ground_truth.json with the true directions and their
expected RGB-pixel projections. Fixed seed -> bit-identical dataset.

The expected pixel for an array source is the source direction projected
through the sensor's angle grid and its *unperturbed* calibration, i.e.
where a perfect pipeline should light up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamformer import AngleGrid, SPEED_OF_SOUND_M_S
from .errors import ConfigError
from .fusion import save_mask_png
from .imaging import (
    CalibrationTransform,
    RgbImage,
    fit_plane_calibration,
    save_calibration,
    save_png,
)
from .pipeline import FrameBundle, MemoryDataset, RunConfig, save_audio_wav
from .sensor_model import (
    ArrayGeometry,
    AudioBlock,
    PointSource,
    SensorKind,
    ThermalFrame,
    _steering_phases_vec,
    circular_array,
    save_geometry,
    simulate_snapshot,
    write_snapshot,
)

DEFAULT_MASK_SIZE = (120, 120)


def load_scene(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scene script {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"scene script {path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc


def _frame_seed(seed: int, frame_idx: int, lane: int) -> int:
    return int(np.random.SeedSequence([seed, frame_idx, lane]).generate_state(1)[0])


def synth_rgb(width: int, height: int, seed: int) -> RgbImage:
    """Procedural tabletop-ish RGB frame: gradients plus a few seeded boxes."""
    rng = np.random.default_rng(seed)
    u = np.arange(width, dtype=np.float64)[None, :] / max(width - 1, 1)
    v = np.arange(height, dtype=np.float64)[:, None] / max(height - 1, 1)
    img = np.empty((height, width, 3), np.float64)
    img[:, :, 0] = 40 + 110 * u
    img[:, :, 1] = 50 + 90 * v
    img[:, :, 2] = 70 + 40 * (1 - u) * (1 - v)
    for _ in range(5):
        x0 = int(rng.integers(0, max(width - 8, 1)))
        y0 = int(rng.integers(0, max(height - 8, 1)))
        w = int(rng.integers(8, max(width // 4, 9)))
        h = int(rng.integers(8, max(height // 4, 9)))
        color = rng.integers(30, 226, 3)
        img[y0:y0 + h, x0:x0 + w] = color
    return RgbImage.from_array(np.clip(img, 0, 255).astype(np.uint8))


@dataclass
class _SceneSensor:
    sensor_id: str
    kind: SensorKind
    payload: str
    geometry: ArrayGeometry | None
    grid: AngleGrid
    sources: list[PointSource]
    snr_db: float | None
    audio: dict
    size: tuple[int, int]       # sensor-plane (w, h)
    hot_spots: list[dict]
    ambient: float
    noise_std: float
    t_lo: float | None
    t_hi: float | None
    rate_divisor: int
    perturb: dict
    alpha: float
    speed_of_sound: float


def _parse_geometry(doc: dict) -> ArrayGeometry:
    kind = SensorKind(doc.get("sensor_kind", "microphone_array"))
    if doc.get("type", "circular") == "circular":
        return circular_array(int(doc.get("num_elements", 6)), float(doc.get("radius_m", 0.05)),
                              float(doc.get("wavelength_m", 0.0857)), sensor_kind=kind)
    return ArrayGeometry(elements=tuple((float(x), float(y)) for x, y in doc["elements"]),
                         wavelength=float(doc["wavelength_m"]), sensor_kind=kind)


def _parse_scene_sensor(raw: dict) -> _SceneSensor:
    try:
        sensor_id = raw["sensor_id"]
        kind = SensorKind(raw["kind"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"scene sensor entry {raw!r}: {exc}") from exc
    payload = raw.get("payload", "thermal_csv" if kind == SensorKind.THERMAL else "snapshot")
    grid = AngleGrid(**raw["grid"]) if "grid" in raw else AngleGrid()
    geometry = None
    sources: list[PointSource] = []
    audio = raw.get("audio", {})
    if kind == SensorKind.THERMAL:
        size = tuple(raw.get("size", [80, 60]))
    else:
        geometry = _parse_geometry(raw.get("geometry", {}))
        size = (grid.az_steps, grid.el_steps)
        for s in raw.get("sources", []):
            sources.append(PointSource(
                azimuth_deg=float(s["azimuth_deg"]), elevation_deg=float(s["elevation_deg"]),
                amplitude=float(s.get("amplitude", 1.0)),
                phase_offset_rad=float(s.get("phase_offset_rad", 0.0))))
        if audio and audio.get("tone_hz") is None:
            raise ConfigError(f"scene sensor {sensor_id!r}: audio payload needs audio.tone_hz")
    return _SceneSensor(
        sensor_id=sensor_id, kind=kind, payload=payload, geometry=geometry, grid=grid,
        sources=sources, snr_db=float(raw["snr_db"]) if "snr_db" in raw else None,
        audio=audio, size=size, hot_spots=raw.get("hot_spots", []),
        ambient=float(raw.get("ambient", 20.0)), noise_std=float(raw.get("noise_std", 0.0)),
        t_lo=float(raw["t_lo"]) if "t_lo" in raw else None,
        t_hi=float(raw["t_hi"]) if "t_hi" in raw else None,
        rate_divisor=int(raw.get("rate_divisor", 1)),
        perturb=raw.get("calibration_perturb", {}),
        alpha=float(raw.get("alpha", 1.0)),
        speed_of_sound=float(raw.get("speed_of_sound", SPEED_OF_SOUND_M_S)))


def grid_coords_for_angles(grid: AngleGrid, azimuth_deg: float, elevation_deg: float) -> tuple[float, float]:
    """Continuous sensor-plane (col, row) for a direction; row 0 is el_max."""
    col = (azimuth_deg - grid.az_min_deg) / (grid.az_max_deg - grid.az_min_deg) * (grid.az_steps - 1)
    row = (grid.el_max_deg - elevation_deg) / (grid.el_max_deg - grid.el_min_deg) * (grid.el_steps - 1)
    return col, row


def _expected_pixel(sensor: _SceneSensor, nominal: CalibrationTransform) -> tuple[float, float] | None:
    """Target-frame projection of the sensor's primary target, unperturbed."""
    if sensor.kind == SensorKind.THERMAL:
        if not sensor.hot_spots:
            return None
        spot = sensor.hot_spots[0]
        src = (float(spot["x_frac"]) * (sensor.size[0] - 1),
               float(spot["y_frac"]) * (sensor.size[1] - 1))
    else:
        if not sensor.sources:
            return None
        s = sensor.sources[0]
        src = grid_coords_for_angles(sensor.grid, s.azimuth_deg, s.elevation_deg)
    out = nominal.apply_points(np.array([src]))[0]
    return float(out[0]), float(out[1])


def _thermal_frame(sensor: _SceneSensor, seed: int, timestamp_ns: int) -> ThermalFrame:
    w, h = sensor.size
    rng = np.random.default_rng(seed)
    values = np.full((h, w), sensor.ambient, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    for spot in sensor.hot_spots:
        cx = float(spot["x_frac"]) * (w - 1)
        cy = float(spot["y_frac"]) * (h - 1)
        sigma = max(float(spot.get("sigma_frac", 0.05)) * w, 0.5)
        peak = float(spot.get("value", sensor.ambient + 15.0))
        values += (peak - sensor.ambient) * np.exp(
            -((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
    if sensor.noise_std > 0:
        values = values + rng.normal(0.0, sensor.noise_std, values.shape)
    return ThermalFrame(width=w, height=h, values=values, timestamp_ns=timestamp_ns)


def _array_noise_std(sensor: _SceneSensor) -> float:
    if sensor.snr_db is None:
        return 0.0
    amp = max((s.amplitude for s in sensor.sources), default=1.0)
    return amp * 10.0 ** (-sensor.snr_db / 20.0)


def _audio_block(sensor: _SceneSensor, seed: int, timestamp_ns: int) -> AudioBlock:
    rate = float(sensor.audio.get("sample_rate", 16000))
    n = int(sensor.audio.get("block_samples", 2048))
    tone = float(sensor.audio["tone_hz"])
    bin_idx = max(1, round(tone * n / rate))
    freq = bin_idx * rate / n  # snapped on-bin to avoid leakage
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64) / rate
    k = sensor.geometry.num_elements
    wavelength = sensor.speed_of_sound / freq
    geometry = ArrayGeometry(elements=sensor.geometry.elements, wavelength=wavelength,
                             sensor_kind=sensor.geometry.sensor_kind)
    data = np.zeros((n, k), dtype=np.float64)
    for src in sensor.sources:
        phases = _steering_phases_vec(geometry, src.azimuth_deg, src.elevation_deg)
        amp = 0.5 * src.amplitude
        data += amp * np.sin(2.0 * math.pi * freq * t[:, None] + phases[None, :]
                             + src.phase_offset_rad)
    noise_std = _array_noise_std(sensor) * 0.5
    if noise_std > 0:
        data = data + rng.normal(0.0, noise_std, data.shape)
    return AudioBlock(samples=np.clip(data, -1.0, 1.0), sample_rate=rate,
                      timestamp_ns=timestamp_ns)


def _sensor_payload(sensor: _SceneSensor, seed: int, timestamp_ns: int):
    if sensor.kind == SensorKind.THERMAL:
        return _thermal_frame(sensor, seed, timestamp_ns)
    if sensor.payload == "audio_wav":
        return _audio_block(sensor, seed, timestamp_ns)
    return simulate_snapshot(sensor.geometry, sensor.sources, _array_noise_std(sensor),
                             seed=seed, timestamp_ns=timestamp_ns, geometry_id=sensor.sensor_id)


def _mask_bits(scene: dict, rects, width: int, height: int) -> np.ndarray:
    mode = scene.get("mask_mode", "rects")
    if mode == "full":
        return np.ones((height, width), np.uint8)
    if mode != "rects":
        raise ConfigError(f"scene mask_mode must be rects or full, got {mode!r}")
    bits = np.zeros((height, width), np.uint8)
    for x, y, w, h in rects:
        bits[max(y, 0):min(y + h, height), max(x, 0):min(x + w, width)] = 1
    return bits


def _clip_rect(cx: float, cy: float, size: tuple[int, int],
               width: int, height: int) -> tuple[int, int, int, int]:
    w, h = size
    x = int(round(cx - w / 2))
    y = int(round(cy - h / 2))
    x = min(max(x, 0), max(width - w, 0))
    y = min(max(y, 0), max(height - h, 0))
    return (x, y, min(w, width), min(h, height))


@dataclass
class SceneBuild:
    """Everything a scene renders to, before hitting disk."""

    scene: dict
    sensors: list[_SceneSensor]
    rgb_size: tuple[int, int]
    bundles: list[FrameBundle]
    mask_bits: np.ndarray | None
    ground_truth: dict
    nominal_calibrations: dict
    run_calibrations: dict
    prompt: str


def build_scene(scene: dict, seed: int) -> SceneBuild:
    n_frames = int(scene.get("n_frames", 0))
    rgb_cfg = scene.get("rgb", {})
    width = int(rgb_cfg.get("width", 640))
    height = int(rgb_cfg.get("height", 480))
    prompt = scene.get("prompt", "target object")
    sensors = [_parse_scene_sensor(raw) for raw in scene.get("sensors", [])]

    nominal = {}
    perturbed = {}
    expected = {}
    rects = []
    mask_size = tuple(scene.get("mask_size", DEFAULT_MASK_SIZE))
    for sensor in sensors:
        cal = fit_plane_calibration(sensor.size[0], sensor.size[1], width, height)
        nominal[sensor.sensor_id] = cal
        if sensor.perturb:
            perturbed[sensor.sensor_id] = fit_plane_calibration(
                sensor.size[0], sensor.size[1], width, height,
                rotation_deg=float(sensor.perturb.get("rotation_deg", 0.0)),
                translate=tuple(sensor.perturb.get("translate_px", (0.0, 0.0))))
        else:
            perturbed[sensor.sensor_id] = cal
        px = _expected_pixel(sensor, cal)
        expected[sensor.sensor_id] = px
        if px is not None:
            rects.append(_clip_rect(px[0], px[1], mask_size, width, height))

    mask = _mask_bits(scene, rects, width, height) if sensors else None

    bundles = []
    for idx in range(n_frames):
        ts = idx * 33_333_333
        rgb = synth_rgb(width, height, _frame_seed(seed, idx, 0))
        payloads = {}
        timestamps = {}
        for lane, sensor in enumerate(sensors, start=1):
            if idx % sensor.rate_divisor != 0:
                continue
            payloads[sensor.sensor_id] = _sensor_payload(sensor, _frame_seed(seed, idx, lane), ts)
            timestamps[sensor.sensor_id] = ts
        bundles.append(FrameBundle(frame_idx=idx, rgb=rgb, payloads=payloads,
                                   timestamps=timestamps))

    ground_truth = {
        "n_frames": n_frames,
        "prompt": prompt,
        "mask_rects": [list(r) for r in rects],
        "sensors": {
            s.sensor_id: {
                "kind": s.kind.value,
                "azimuth_deg": s.sources[0].azimuth_deg if s.sources else None,
                "elevation_deg": s.sources[0].elevation_deg if s.sources else None,
                "expected_px": list(expected[s.sensor_id]) if expected[s.sensor_id] else None,
                "perturbed": bool(s.perturb),
            } for s in sensors
        },
    }
    return SceneBuild(scene=scene, sensors=sensors, rgb_size=(width, height), bundles=bundles,
                      mask_bits=mask, ground_truth=ground_truth,
                      nominal_calibrations=nominal, run_calibrations=perturbed, prompt=prompt)


def memory_dataset(scene: dict, seed: int) -> tuple[MemoryDataset, SceneBuild]:
    """In-memory rendering of a scene (bench and harness use)."""
    build = build_scene(scene, seed)
    return MemoryDataset(build.bundles, prompt=build.prompt), build


def make_synthetic_dataset(scene_path_or_dict, out_dir, seed: int) -> dict:
    """Render a scene script to a runnable on-disk dataset.

    Writes frames, stub masks, geometry/calibration files, config.json,
    manifest.json, and ground_truth.json. Returns the manifest. Reruns with
    the same seed are bit-identical.
    """
    scene = load_scene(scene_path_or_dict) if not isinstance(scene_path_or_dict, dict) \
        else scene_path_or_dict
    build = build_scene(scene, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    width, height = build.rgb_size
    sensors_meta = {}
    config_sensors = []
    for sensor in build.sensors:
        sensors_meta[sensor.sensor_id] = {
            "kind": sensor.kind.value,
            "payload": sensor.payload,
            "rate_divisor": sensor.rate_divisor,
        }
        save_calibration(sensor.sensor_id, build.run_calibrations[sensor.sensor_id],
                         out_dir / f"{sensor.sensor_id}_calibration.json")
        entry = {
            "sensor_id": sensor.sensor_id,
            "kind": sensor.kind.value,
            "calibration": f"{sensor.sensor_id}_calibration.json",
            "alpha": sensor.alpha,
        }
        if sensor.kind == SensorKind.THERMAL:
            thermal = {"width": sensor.size[0], "height": sensor.size[1]}
            if sensor.t_lo is not None:
                thermal["t_lo"] = sensor.t_lo
            if sensor.t_hi is not None:
                thermal["t_hi"] = sensor.t_hi
            entry["thermal"] = thermal
        else:
            save_geometry(sensor.geometry, out_dir / f"{sensor.sensor_id}_geometry.json")
            entry["geometry"] = f"{sensor.sensor_id}_geometry.json"
            entry["grid"] = {
                "az_min_deg": sensor.grid.az_min_deg, "az_max_deg": sensor.grid.az_max_deg,
                "az_steps": sensor.grid.az_steps, "el_min_deg": sensor.grid.el_min_deg,
                "el_max_deg": sensor.grid.el_max_deg, "el_steps": sensor.grid.el_steps,
            }
            entry["speed_of_sound"] = sensor.speed_of_sound
        config_sensors.append(entry)

    masks_dir = out_dir / "masks"
    masks_dir.mkdir(exist_ok=True)
    for bundle in build.bundles:
        save_png(bundle.rgb, out_dir / f"{bundle.frame_idx}_rgb.png")
        if build.mask_bits is not None:
            save_mask_png(build.mask_bits, masks_dir / f"{bundle.frame_idx}.png")
        for sensor in build.sensors:
            payload = bundle.payloads.get(sensor.sensor_id)
            if payload is None:
                continue
            stem = out_dir / f"{bundle.frame_idx}_{sensor.sensor_id}"
            if sensor.payload == "snapshot":
                write_snapshot(payload, stem.with_suffix(".bin"))
            elif sensor.payload == "thermal_csv":
                from .imaging import save_thermal_csv
                save_thermal_csv(payload, stem.with_suffix(".csv"))
            elif sensor.payload == "audio_wav":
                save_audio_wav(payload, stem.with_suffix(".wav"))
            else:
                raise ConfigError(f"scene sensor {sensor.sensor_id!r}: "
                                  f"unknown payload {sensor.payload!r}")

    manifest = {
        "n_frames": len(build.bundles),
        "rgb_size": [width, height],
        "frame_interval_ns": 33_333_333,
        "sensors": sensors_meta,
        "prompt": build.prompt,
        "seed": seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out_dir / "ground_truth.json").write_text(
        json.dumps(build.ground_truth, indent=2, sort_keys=True) + "\n")

    if build.sensors:
        config = {
            "mode": "batch",
            "input": ".",
            "output": "out",
            "seed": seed,
            "task": scene.get("task", build.prompt),
            "mask_provider": {"backend": "stub", "prompt": build.prompt, "mask_dir": "masks"},
            "sensors": config_sensors,
        }
        (out_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return manifest


def scene_run_config(dataset_dir) -> RunConfig:
    """Load the config.json that make_synthetic_dataset wrote."""
    return RunConfig.load(Path(dataset_dir) / "config.json")
