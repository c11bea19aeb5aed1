"""End-to-end dataflow: ingest frames, preprocess each sensor, calibrate,
mask, blend, and write sensor-masked images.

Three modes share the per-sensor machinery:

  batch  - offline dataset -> one PNG + JSON sidecar per (frame, sensor);
           masks come synchronously per frame, so reruns with fixed seeds
           and stub backends are bit-exact.
  stream - same outputs, but the prompt/mask pair refreshes in a background
           worker (mask_provider.MaskLifecycle) and per-sensor work may run
           concurrently; frames always complete in order.
  bench  - synthetic in-memory input, reports per-stage percentiles and
           sustained preprocessing fps.

RGB is the frame master: sensors running slower than the camera are
latest-sample-held against the RGB clock.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from .beamformer import (
    DEFAULT_DYNAMIC_RANGE_DB,
    DEFAULT_FLOOR_DB,
    DEFAULT_GRID,
    AngleGrid,
    Heatmap,
    SPEED_OF_SOUND_M_S,
    beamform,
    normalize,
    snapshot_from_audio,
    write_heatmap_pfm,
    write_heatmap_png16,
)
from .errors import ConfigError, DataError
from .fusion import SegMask, blend, write_sidecar
from .imaging import (
    CalibratedImage,
    CalibrationTransform,
    RgbImage,
    calibrate,
    calibrate_field,
    colorize,
    get_colormap,
    load_calibration,
    load_png,
    load_thermal_csv,
    load_thermal_pgm,
    normalize_thermal,
    save_png,
)
from .mask_provider import (
    DEFAULT_ACQUIRE_TIMEOUT_S,
    DEFAULT_REFRESH_PERIOD_S,
    DirectoryMaskBackend,
    HttpMaskBackend,
    HttpPromptBackend,
    MaskLifecycle,
    StubPromptBackend,
    TaskContext,
    acquire_prompt,
    segment,
)
from .sensor_model import (
    ArrayGeometry,
    ArraySnapshot,
    AudioBlock,
    SensorKind,
    ThermalFrame,
    load_geometry,
    read_snapshot,
)

logger = logging.getLogger("omnifuse.pipeline")

DEFAULT_ALPHA = 1.0
MAX_SKIP_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Configuration

@dataclass
class SensorConfig:
    sensor_id: str
    kind: SensorKind
    calibration_path: Path
    colormap: str
    alpha: float = DEFAULT_ALPHA
    geometry_path: Path | None = None
    grid: AngleGrid = field(default_factory=AngleGrid)
    floor_db: float = DEFAULT_FLOOR_DB
    dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB
    speed_of_sound: float = SPEED_OF_SOUND_M_S
    thermal_width: int | None = None
    thermal_height: int | None = None
    t_lo: float | None = None
    t_hi: float | None = None


@dataclass
class MaskProviderConfig:
    backend: str = "stub"  # stub | http
    prompt: str = ""
    mask_dir: Path | None = None
    prompt_url: str = ""
    mask_url: str = ""
    refresh_period_s: float = DEFAULT_REFRESH_PERIOD_S
    timeout_s: float = DEFAULT_ACQUIRE_TIMEOUT_S
    segment_per_frame: bool = False


@dataclass
class RunConfig:
    sensors: list[SensorConfig]
    mask_provider: MaskProviderConfig
    input_dir: Path
    output_dir: Path
    mode: str = "batch"
    seed: int = 0
    heatmap_dump: str | None = None  # pfm | png16
    task_text: str = "inspect the scene"

    def __post_init__(self):
        if not self.sensors:
            raise ConfigError("config needs at least one sensor")
        ids = [s.sensor_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"sensor_ids must be unique, got {ids}")
        if self.mode not in ("batch", "stream", "bench"):
            raise ConfigError(f"mode must be batch|stream|bench, got {self.mode!r}")
        if self.heatmap_dump not in (None, "pfm", "png16"):
            raise ConfigError(f"heatmap_dump must be pfm or png16, got {self.heatmap_dump!r}")
        for s in self.sensors:
            if not Path(s.calibration_path).is_file():
                raise ConfigError(
                    f"sensor {s.sensor_id!r} has no calibration file at {s.calibration_path}; "
                    "refusing to run uncalibrated")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path) -> "RunConfig":
        base_dir = Path(base_dir)

        def respath(p):
            p = Path(p)
            return p if p.is_absolute() else base_dir / p

        try:
            raw_sensors = doc["sensors"]
        except KeyError:
            raise ConfigError("config is missing the 'sensors' list") from None
        sensors = []
        for raw in raw_sensors:
            try:
                sensor_id = raw["sensor_id"]
                kind = SensorKind(raw["kind"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"bad sensor entry {raw!r}: {exc}") from exc
            if "calibration" not in raw:
                raise ConfigError(f"sensor {sensor_id!r} is missing its calibration file")
            colormap = raw.get("colormap",
                               "thermal_iron" if kind == SensorKind.THERMAL else "spectral_jet")
            grid = AngleGrid(**raw["grid"]) if "grid" in raw else AngleGrid()
            thermal = raw.get("thermal", {})
            if kind == SensorKind.THERMAL:
                if "width" not in thermal or "height" not in thermal:
                    raise ConfigError(f"thermal sensor {sensor_id!r} needs thermal.width/height")
            elif "geometry" not in raw:
                raise ConfigError(f"array sensor {sensor_id!r} needs a geometry file")
            sensors.append(SensorConfig(
                sensor_id=sensor_id,
                kind=kind,
                calibration_path=respath(raw["calibration"]),
                colormap=colormap,
                alpha=float(raw.get("alpha", DEFAULT_ALPHA)),
                geometry_path=respath(raw["geometry"]) if "geometry" in raw else None,
                grid=grid,
                floor_db=float(raw.get("floor_db", DEFAULT_FLOOR_DB)),
                dynamic_range_db=float(raw.get("dynamic_range_db", DEFAULT_DYNAMIC_RANGE_DB)),
                speed_of_sound=float(raw.get("speed_of_sound", SPEED_OF_SOUND_M_S)),
                thermal_width=int(thermal["width"]) if "width" in thermal else None,
                thermal_height=int(thermal["height"]) if "height" in thermal else None,
                t_lo=float(thermal["t_lo"]) if "t_lo" in thermal else None,
                t_hi=float(thermal["t_hi"]) if "t_hi" in thermal else None,
            ))

        mp_raw = doc.get("mask_provider", {})
        provider = MaskProviderConfig(
            backend=mp_raw.get("backend", "stub"),
            prompt=mp_raw.get("prompt", ""),
            mask_dir=respath(mp_raw["mask_dir"]) if "mask_dir" in mp_raw else None,
            prompt_url=mp_raw.get("prompt_url", ""),
            mask_url=mp_raw.get("mask_url", ""),
            refresh_period_s=float(mp_raw.get("refresh_period_s", DEFAULT_REFRESH_PERIOD_S)),
            timeout_s=float(mp_raw.get("timeout_s", DEFAULT_ACQUIRE_TIMEOUT_S)),
            segment_per_frame=bool(mp_raw.get("segment_per_frame", False)),
        )
        if provider.backend not in ("stub", "http"):
            raise ConfigError(f"mask_provider.backend must be stub or http, got {provider.backend!r}")
        if provider.backend == "http" and not (provider.prompt_url and provider.mask_url):
            raise ConfigError("http mask provider needs prompt_url and mask_url")

        input_dir = respath(doc.get("input", "."))
        if provider.backend == "stub" and provider.mask_dir is None:
            provider.mask_dir = input_dir / "masks"
        return cls(
            sensors=sensors,
            mask_provider=provider,
            input_dir=input_dir,
            output_dir=respath(doc.get("output", "out")),
            mode=doc.get("mode", "batch"),
            seed=int(doc.get("seed", 0)),
            heatmap_dump=doc.get("heatmap_dump"),
            task_text=doc.get("task", "inspect the scene"),
        )

    def echo(self) -> dict:
        """Effective configuration with every default materialized (for the run report)."""
        return {
            "mode": self.mode,
            "seed": self.seed,
            "task": self.task_text,
            "input": str(self.input_dir),
            "output": str(self.output_dir),
            "heatmap_dump": self.heatmap_dump,
            "mask_provider": {
                "backend": self.mask_provider.backend,
                "prompt": self.mask_provider.prompt,
                "mask_dir": str(self.mask_provider.mask_dir) if self.mask_provider.mask_dir else None,
                "prompt_url": self.mask_provider.prompt_url,
                "mask_url": self.mask_provider.mask_url,
                "refresh_period_s": self.mask_provider.refresh_period_s,
                "timeout_s": self.mask_provider.timeout_s,
                "segment_per_frame": self.mask_provider.segment_per_frame,
            },
            "sensors": [{
                "sensor_id": s.sensor_id,
                "kind": s.kind.value,
                "calibration": str(s.calibration_path),
                "geometry": str(s.geometry_path) if s.geometry_path else None,
                "colormap": s.colormap,
                "alpha": s.alpha,
                "floor_db": s.floor_db,
                "dynamic_range_db": s.dynamic_range_db,
                "speed_of_sound": s.speed_of_sound,
                "grid": [s.grid.az_min_deg, s.grid.az_max_deg, s.grid.az_steps,
                         s.grid.el_min_deg, s.grid.el_max_deg, s.grid.el_steps],
                "thermal": [s.thermal_width, s.thermal_height, s.t_lo, s.t_hi],
            } for s in self.sensors],
        }


# ---------------------------------------------------------------------------
# Datasets

_PAYLOAD_EXT = {"snapshot": "bin", "thermal_csv": "csv", "thermal_pgm": "pgm", "audio_wav": "wav"}


@dataclass(eq=False)
class FrameBundle:
    """One RGB frame plus whatever sensor payloads arrived with it."""

    frame_idx: int
    rgb: RgbImage
    payloads: dict
    timestamps: dict


class Dataset:
    """On-disk dataset: manifest.json + {idx}_rgb.png + {idx}_{sensor}.<ext>."""

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.n_frames = int(manifest["n_frames"])
        self.frame_interval_ns = int(manifest.get("frame_interval_ns", 33_333_333))
        self.sensor_meta = manifest.get("sensors", {})
        self.prompt = manifest.get("prompt", "")

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        manifest_path = root / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text())
        except OSError as exc:
            raise ConfigError(f"input dataset {root} unreadable: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{manifest_path} is not valid JSON: {exc}") from exc
        return cls(root, manifest)

    def ground_truth(self) -> dict | None:
        path = self.root / "ground_truth.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def _expected(self, sensor_id: str, idx: int) -> bool:
        meta = self.sensor_meta.get(sensor_id)
        if meta is None:
            return False
        return idx % int(meta.get("rate_divisor", 1)) == 0

    def load_bundle(self, idx: int, sensor_ids=None) -> FrameBundle:
        rgb_path = self.root / f"{idx}_rgb.png"
        if not rgb_path.exists():
            raise DataError(f"frame {idx}: missing {rgb_path.name}")
        rgb = load_png(rgb_path)
        payloads = {}
        timestamps = {}
        ts = idx * self.frame_interval_ns
        for sensor_id, meta in self.sensor_meta.items():
            if sensor_ids is not None and sensor_id not in sensor_ids:
                continue
            if not self._expected(sensor_id, idx):
                continue
            payload_kind = meta.get("payload", "snapshot")
            ext = _PAYLOAD_EXT.get(payload_kind)
            if ext is None:
                raise DataError(f"frame {idx}: unknown payload kind {payload_kind!r}")
            path = self.root / f"{idx}_{sensor_id}.{ext}"
            if not path.exists():
                raise DataError(f"frame {idx}: missing {path.name}")
            payloads[sensor_id] = _load_payload(path, payload_kind, ts)
            timestamps[sensor_id] = ts
        return FrameBundle(frame_idx=idx, rgb=rgb, payloads=payloads, timestamps=timestamps)


class MemoryDataset:
    """Pre-built bundles, used by the bench and the stream-latency harness."""

    def __init__(self, bundles: list[FrameBundle], prompt: str = ""):
        self.bundles = bundles
        self.n_frames = len(bundles)
        self.frame_interval_ns = 33_333_333
        self.prompt = prompt

    def ground_truth(self):
        return None

    def load_bundle(self, idx: int, sensor_ids=None) -> FrameBundle:
        return self.bundles[idx]


def _load_payload(path: Path, payload_kind: str, timestamp_ns: int):
    if payload_kind == "snapshot":
        return read_snapshot(path)
    if payload_kind == "thermal_csv":
        return load_thermal_csv(path, timestamp_ns=timestamp_ns)
    if payload_kind == "thermal_pgm":
        return load_thermal_pgm(path, timestamp_ns=timestamp_ns)
    if payload_kind == "audio_wav":
        return load_audio_wav(path, timestamp_ns=timestamp_ns)
    raise DataError(f"unknown payload kind {payload_kind!r}")


def load_audio_wav(path, timestamp_ns: int = 0) -> AudioBlock:
    """16-bit PCM multichannel WAV -> AudioBlock with samples in [-1, 1]."""
    import wave

    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            if wav.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM")
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except (OSError, wave.Error) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioBlock(samples=data.reshape(-1, n_channels), sample_rate=rate,
                      timestamp_ns=timestamp_ns)


def save_audio_wav(block: AudioBlock, path) -> None:
    import wave

    clipped = np.clip(block.samples, -1.0, 1.0)
    pcm = np.floor(clipped * 32767.0 + 0.5).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(block.num_channels)
        wav.setsampwidth(2)
        wav.setframerate(int(block.sample_rate))
        wav.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Per-sensor processing

@dataclass(eq=False)
class ProcessedSensorFrame:
    plane_image: RgbImage
    calibrated: CalibratedImage
    intensity: np.ndarray  # target-frame float field in [0, 1], 0 where invalid
    heatmap: Heatmap | None
    stage_ms: dict


class SensorProcessor:
    """Holds one sensor's geometry, calibration, and latest-sample state."""

    def __init__(self, cfg: SensorConfig, transform_override: CalibrationTransform | None = None):
        self.cfg = cfg
        self.sensor_id = cfg.sensor_id
        self.kind = cfg.kind
        self.colormap = get_colormap(cfg.colormap)
        if transform_override is not None:
            self.transform = transform_override
        else:
            cal_sensor_id, self.transform = load_calibration(cfg.calibration_path)
            if cal_sensor_id and cal_sensor_id != cfg.sensor_id:
                raise ConfigError(
                    f"calibration file {cfg.calibration_path} belongs to sensor "
                    f"{cal_sensor_id!r}, not {cfg.sensor_id!r}")
        if cfg.kind == SensorKind.THERMAL:
            plane = (cfg.thermal_width, cfg.thermal_height)
            self.geometry = None
        else:
            if cfg.geometry_path is None:
                raise ConfigError(f"array sensor {cfg.sensor_id!r} needs a geometry file")
            self.geometry = load_geometry(cfg.geometry_path)
            plane = (cfg.grid.az_steps, cfg.grid.el_steps)
        if plane != (self.transform.source_width, self.transform.source_height):
            raise ConfigError(
                f"sensor {cfg.sensor_id!r}: calibration expects a "
                f"{self.transform.source_width}x{self.transform.source_height} sensor plane "
                f"but the sensor produces {plane[0]}x{plane[1]}")
        self.plane_size = plane
        self._held_payload = None
        self._held_age = None  # frames since the payload arrived
        black = RgbImage.from_array(
            np.zeros((self.transform.target_height, self.transform.target_width, 3), np.uint8))
        zero_valid = np.zeros((self.transform.target_height, self.transform.target_width), np.uint8)
        self._empty = ProcessedSensorFrame(
            plane_image=black, calibrated=CalibratedImage(image=black, validity=zero_valid),
            intensity=np.zeros_like(zero_valid, dtype=np.float64), heatmap=None, stage_ms={})

    def hold(self, payload) -> tuple[object | None, int | None]:
        """Latest-sample-hold against the RGB clock; returns (payload, age_frames)."""
        if payload is not None:
            self._held_payload = payload
            self._held_age = 0
        elif self._held_age is not None:
            self._held_age += 1
        return self._held_payload, self._held_age

    def empty_frame(self) -> ProcessedSensorFrame:
        """Placeholder before the sensor's first sample arrives (validity all 0)."""
        return self._empty

    def process(self, payload) -> ProcessedSensorFrame:
        cfg = self.cfg
        stage_ms: dict[str, float] = {}
        heatmap = None

        t0 = time.perf_counter()
        if self.kind == SensorKind.THERMAL:
            if not isinstance(payload, ThermalFrame):
                raise DataError(f"sensor {self.sensor_id!r} expected a thermal frame, "
                                f"got {type(payload).__name__}")
            if (payload.width, payload.height) != self.plane_size:
                raise DataError(f"sensor {self.sensor_id!r}: thermal frame is "
                                f"{payload.width}x{payload.height}, expected "
                                f"{self.plane_size[0]}x{self.plane_size[1]}")
            t_lo, t_hi = cfg.t_lo, cfg.t_hi
            if t_lo is None or t_hi is None:
                # Per-frame bounds: fine for stills; pin t_lo/t_hi in the
                # config for temporally stable video.
                lo, hi = float(payload.values.min()), float(payload.values.max())
                t_lo = lo if t_lo is None else t_lo
                t_hi = hi if t_hi is None else t_hi
            if t_lo >= t_hi:
                matrix = np.zeros((payload.height, payload.width))
            else:
                matrix = normalize_thermal(payload, t_lo, t_hi)
            stage_ms["normalize"] = (time.perf_counter() - t0) * 1e3
        else:
            if isinstance(payload, AudioBlock):
                snapshot, wavelength = snapshot_from_audio(payload, cfg.speed_of_sound,
                                                           geometry_id=self.sensor_id)
                geometry = ArrayGeometry(elements=self.geometry.elements, wavelength=wavelength,
                                         sensor_kind=self.geometry.sensor_kind)
            elif isinstance(payload, ArraySnapshot):
                snapshot, geometry = payload, self.geometry
            else:
                raise DataError(f"sensor {self.sensor_id!r} expected a snapshot or audio block, "
                                f"got {type(payload).__name__}")
            heatmap = beamform(snapshot, geometry, cfg.grid, cfg.floor_db)
            stage_ms["beamform"] = (time.perf_counter() - t0) * 1e3

            t0 = time.perf_counter()
            # Image orientation: row 0 shows the highest elevation.
            matrix = np.ascontiguousarray(np.flipud(normalize(heatmap, cfg.dynamic_range_db)))
            stage_ms["normalize"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        plane_image = colorize(matrix, self.colormap)
        stage_ms["colorize"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        calibrated = calibrate(plane_image, self.transform)
        intensity, _ = calibrate_field(matrix, self.transform)
        stage_ms["calibrate"] = (time.perf_counter() - t0) * 1e3

        return ProcessedSensorFrame(plane_image=plane_image, calibrated=calibrated,
                                    intensity=intensity, heatmap=heatmap, stage_ms=stage_ms)


# ---------------------------------------------------------------------------
# Reports

def _percentiles(samples: list[float]) -> dict:
    arr = np.asarray(samples)
    return {
        "count": int(arr.size),
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p90_ms": float(np.percentile(arr, 90)),
        "p99_ms": float(np.percentile(arr, 99)),
    }


@dataclass
class RunReport:
    mode: str
    frames_total: int = 0
    frames_processed: int = 0
    frames_skipped: int = 0
    outputs_written: int = 0
    stage_stats: dict = field(default_factory=dict)
    backend: str = ""
    config_echo: dict = field(default_factory=dict)
    frame_times_s: list = field(default_factory=list)
    generations: list = field(default_factory=list)
    mask_ages_ms: list = field(default_factory=list)

    @property
    def skip_fraction(self) -> float:
        return self.frames_skipped / self.frames_total if self.frames_total else 0.0

    def exceeded_skip_budget(self) -> bool:
        return self.skip_fraction > MAX_SKIP_FRACTION

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "frames_total": self.frames_total,
            "frames_processed": self.frames_processed,
            "frames_skipped": self.frames_skipped,
            "outputs_written": self.outputs_written,
            "stage_stats": self.stage_stats,
            "backend": self.backend,
            "config": self.config_echo,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Shared frame machinery

def _peak_in_overlay(intensity: np.ndarray, validity: np.ndarray, mask: SegMask):
    """Argmax of the calibrated sensor intensity inside mask & validity."""
    gate = (validity != 0) & (mask.bits != 0)
    if not gate.any():
        return None
    masked = np.where(gate, intensity, -np.inf)
    flat = int(np.argmax(masked))
    y, x = divmod(flat, masked.shape[1])
    return {"peak_px": [int(x), int(y)], "peak_value": float(masked[y, x])}


def _write_outputs(out_dir: Path, idx: int, processor: SensorProcessor,
                   processed: ProcessedSensorFrame, masked_image, mask: SegMask,
                   generation: int, mask_age_ms: float, payload_age, heatmap_dump: str | None):
    name = f"{idx}_{processor.sensor_id}"
    save_png(masked_image.image, out_dir / f"{name}.png")
    peak = _peak_in_overlay(processed.intensity, processed.calibrated.validity, mask)
    extra = {
        "frame_idx": idx,
        "sensor_id": processor.sensor_id,
        "mask_generation": generation,
        "payload_age_frames": payload_age,
        "peak_px": peak["peak_px"] if peak else None,
        "peak_value": peak["peak_value"] if peak else None,
    }
    write_sidecar(out_dir / f"{name}.json", alpha=masked_image.alpha,
                  mask_prompt=mask.prompt_text, mask_age_ms=mask_age_ms, extra=extra)
    if heatmap_dump and processed.heatmap is not None:
        hm_dir = out_dir / "heatmaps"
        hm_dir.mkdir(exist_ok=True)
        if heatmap_dump == "pfm":
            write_heatmap_pfm(processed.heatmap, hm_dir / f"{name}.pfm")
        else:
            write_heatmap_png16(processed.heatmap, hm_dir / f"{name}.png",
                                processor.cfg.dynamic_range_db)


def _build_backends(config: RunConfig):
    provider = config.mask_provider
    if provider.backend == "stub":
        if not provider.prompt:
            raise ConfigError("stub mask provider needs a 'prompt' string in the config")
        return (StubPromptBackend(provider.prompt),
                DirectoryMaskBackend(provider.mask_dir))
    return (HttpPromptBackend(provider.prompt_url, timeout_s=provider.timeout_s),
            HttpMaskBackend(provider.mask_url, timeout_s=provider.timeout_s))


def _sensor_frame(processor: SensorProcessor, payload):
    """(processed, payload_age); the placeholder when no sample has arrived yet."""
    held, age = processor.hold(payload)
    if held is None:
        return processor.empty_frame(), None
    return processor.process(held), age


# ---------------------------------------------------------------------------
# Batch mode

def run_batch(config: RunConfig, dataset=None, prompt_backend=None,
              mask_backend=None) -> RunReport:
    """Process a recorded dataset offline; bit-exact across reruns.

    Masks are fetched synchronously per frame (mask_age_ms is 0 by
    definition), so with stub backends and fixed seeds the outputs are a
    pure function of the dataset.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = Dataset.open(config.input_dir)
    processors = [SensorProcessor(s) for s in config.sensors]
    if prompt_backend is None or mask_backend is None:
        built_prompt, built_mask = _build_backends(config)
        prompt_backend = prompt_backend or built_prompt
        mask_backend = mask_backend or built_mask

    report = RunReport(mode="batch", frames_total=dataset.n_frames,
                       backend=backend_mod.active_backend(), config_echo=config.echo())
    stage_samples: dict[str, list[float]] = {}
    if dataset.n_frames == 0:
        report.write(out_dir / "report.json")
        return report

    ctx = TaskContext(task_text=config.task_text, task_id="batch")
    state = None
    cached_mask = None
    sensor_ids = {p.sensor_id for p in processors}

    for idx in range(dataset.n_frames):
        t_frame = time.perf_counter()
        try:
            bundle = dataset.load_bundle(idx, sensor_ids=sensor_ids)
        except DataError as exc:
            logger.warning("skipping frame %d: %s", idx, exc)
            report.frames_skipped += 1
            continue
        if state is None:
            state = acquire_prompt(ctx, bundle.rgb, prompt_backend,
                                   timeout_s=config.mask_provider.timeout_s)
        try:
            if config.mask_provider.backend == "stub" or config.mask_provider.segment_per_frame \
                    or cached_mask is None:
                mask = segment(state.prompt, bundle.rgb, mask_backend, frame_idx=idx)
                cached_mask = mask
            else:
                mask = cached_mask
        except DataError as exc:
            logger.warning("skipping frame %d: %s", idx, exc)
            report.frames_skipped += 1
            continue

        for processor in processors:
            processed, payload_age = _sensor_frame(processor, bundle.payloads.get(processor.sensor_id))
            t0 = time.perf_counter()
            masked = blend(bundle.rgb, processed.calibrated.image, processed.calibrated.validity,
                           mask, processor.cfg.alpha, sensor_id=processor.sensor_id,
                           frame_timestamp_ns=idx * dataset.frame_interval_ns)
            blend_ms = (time.perf_counter() - t0) * 1e3
            for name, ms in {**processed.stage_ms, "blend": blend_ms}.items():
                stage_samples.setdefault(name, []).append(ms)
            _write_outputs(out_dir, idx, processor, processed, masked, mask,
                           state.generation, 0.0, payload_age, config.heatmap_dump)
            report.outputs_written += 1
        report.frames_processed += 1
        report.frame_times_s.append(time.perf_counter() - t_frame)
        report.generations.append(state.generation)

    report.stage_stats = {k: _percentiles(v) for k, v in stage_samples.items()}
    report.write(out_dir / "report.json")
    return report


# ---------------------------------------------------------------------------
# Stream mode

def run_stream(config: RunConfig, dataset=None, prompt_backend=None, mask_backend=None,
               lifecycle: MaskLifecycle | None = None, write_outputs: bool = True) -> RunReport:
    """Frame-ordered streaming with the asynchronous mask lifecycle.

    Per-sensor stages may run concurrently within a frame; frames complete
    in order. The mask-refresh worker is the only background task and the
    frame loop never waits on it.
    """
    out_dir = Path(config.output_dir)
    if write_outputs:
        out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = Dataset.open(config.input_dir)
    processors = [SensorProcessor(s) for s in config.sensors]
    if prompt_backend is None or mask_backend is None:
        built_prompt, built_mask = _build_backends(config)
        prompt_backend = prompt_backend or built_prompt
        mask_backend = mask_backend or built_mask

    report = RunReport(mode="stream", frames_total=dataset.n_frames,
                       backend=backend_mod.active_backend(), config_echo=config.echo())
    stage_samples: dict[str, list[float]] = {}
    if dataset.n_frames == 0:
        if write_outputs:
            report.write(out_dir / "report.json")
        return report

    first = dataset.load_bundle(0, sensor_ids={p.sensor_id for p in processors})
    own_lifecycle = lifecycle is None
    if own_lifecycle:
        lifecycle = MaskLifecycle(prompt_backend, mask_backend,
                                  refresh_period_s=config.mask_provider.refresh_period_s)
        ctx = TaskContext(task_text=config.task_text, task_id="stream")
        lifecycle.start(ctx, first.rgb, frame_idx=0, timeout_s=config.mask_provider.timeout_s)

    executor = ThreadPoolExecutor(max_workers=len(processors)) if len(processors) > 1 else None
    sensor_ids = {p.sensor_id for p in processors}
    try:
        for idx in range(dataset.n_frames):
            t_frame = time.perf_counter()
            try:
                bundle = first if idx == 0 else dataset.load_bundle(idx, sensor_ids=sensor_ids)
            except DataError as exc:
                logger.warning("skipping frame %d: %s", idx, exc)
                report.frames_skipped += 1
                continue
            lifecycle.refresh_async(bundle.rgb, idx)
            state, mask = lifecycle.current()
            age_ms = lifecycle.mask_age_ms()

            def run_one(processor):
                return _sensor_frame(processor, bundle.payloads.get(processor.sensor_id))

            if executor is not None:
                results = list(executor.map(run_one, processors))
            else:
                results = [run_one(p) for p in processors]

            for processor, (processed, payload_age) in zip(processors, results):
                t0 = time.perf_counter()
                masked = blend(bundle.rgb, processed.calibrated.image,
                               processed.calibrated.validity, mask, processor.cfg.alpha,
                               sensor_id=processor.sensor_id,
                               frame_timestamp_ns=idx * dataset.frame_interval_ns)
                blend_ms = (time.perf_counter() - t0) * 1e3
                for name, ms in {**processed.stage_ms, "blend": blend_ms}.items():
                    stage_samples.setdefault(name, []).append(ms)
                if write_outputs:
                    _write_outputs(out_dir, idx, processor, processed, masked, mask,
                                   state.generation, age_ms, payload_age, config.heatmap_dump)
                report.outputs_written += 1
            report.frames_processed += 1
            report.frame_times_s.append(time.perf_counter() - t_frame)
            report.generations.append(state.generation)
            report.mask_ages_ms.append(age_ms)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
        if own_lifecycle:
            lifecycle.stop()

    report.stage_stats = {k: _percentiles(v) for k, v in stage_samples.items()}
    if write_outputs:
        report.write(out_dir / "report.json")
    return report


# ---------------------------------------------------------------------------
# Bench mode

@dataclass
class BenchReport:
    frames: int
    resolution: tuple[int, int]
    backend: str
    stage_stats: dict = field(default_factory=dict)
    end_to_end_fps: float = 0.0
    stage_fps: dict = field(default_factory=dict)
    steering_cache_speedup: float | None = None

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "resolution": list(self.resolution),
            "backend": self.backend,
            "stage_stats": self.stage_stats,
            "stage_fps": self.stage_fps,
            "end_to_end_fps": self.end_to_end_fps,
            "steering_cache_speedup": self.steering_cache_speedup,
        }


def _bench_payload(cfg: SensorConfig, geometry, rng: np.random.Generator, idx: int):
    from .sensor_model import PointSource, simulate_snapshot

    if cfg.kind == SensorKind.THERMAL:
        base = rng.random((cfg.thermal_height, cfg.thermal_width)) * 4.0 + 20.0
        base[cfg.thermal_height // 3:cfg.thermal_height // 2,
             cfg.thermal_width // 3:cfg.thermal_width // 2] += 15.0
        return ThermalFrame(width=cfg.thermal_width, height=cfg.thermal_height, values=base)
    src = PointSource(azimuth_deg=float(rng.uniform(-30, 30)),
                      elevation_deg=float(rng.uniform(-20, 20)))
    return simulate_snapshot(geometry, [src], noise_std=0.1, seed=int(rng.integers(2**31)) + idx)


def run_bench(config: RunConfig, n_frames: int = 200, resolution: tuple[int, int] = (640, 480),
              warmup: int = 10, measure_cache: bool = True) -> BenchReport:
    """Throughput benchmark over synthetic in-memory input (no disk in the loop)."""
    from .fusion import MaskSource

    report = BenchReport(frames=n_frames, resolution=resolution,
                         backend=backend_mod.active_backend())
    if n_frames <= 0:
        return report
    width, height = resolution
    # The bench is synthetic, so refit each sensor's calibration onto the
    # requested RGB resolution instead of the config's recorded target.
    from .imaging import fit_plane_calibration

    processors = []
    for scfg in config.sensors:
        plane = ((scfg.thermal_width, scfg.thermal_height)
                 if scfg.kind == SensorKind.THERMAL
                 else (scfg.grid.az_steps, scfg.grid.el_steps))
        transform = fit_plane_calibration(plane[0], plane[1], width, height)
        processors.append(SensorProcessor(scfg, transform_override=transform))
    rng = np.random.default_rng(config.seed)

    pool = 16
    rgb_pool = [RgbImage.from_array(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))
                for _ in range(min(pool, n_frames))]
    payload_pool = {
        p.sensor_id: [_bench_payload(p.cfg, p.geometry, rng, i)
                      for i in range(min(pool, n_frames))]
        for p in processors
    }
    mask = SegMask(width=width, height=height,
                   bits=np.ones((height, width), np.uint8),
                   prompt_text="bench", source=MaskSource.FILE)

    stage_samples: dict[str, list[float]] = {}
    total_time = 0.0
    for idx in range(n_frames + warmup):
        rgb = rgb_pool[idx % len(rgb_pool)]
        measured = idx >= warmup
        t_frame = time.perf_counter()
        for processor in processors:
            payload = payload_pool[processor.sensor_id][idx % len(rgb_pool)]
            processed = processor.process(payload)
            t0 = time.perf_counter()
            blend(rgb, processed.calibrated.image, processed.calibrated.validity,
                  mask, processor.cfg.alpha, sensor_id=processor.sensor_id)
            blend_ms = (time.perf_counter() - t0) * 1e3
            if measured:
                for name, ms in {**processed.stage_ms, "blend": blend_ms}.items():
                    stage_samples.setdefault(name, []).append(ms)
        if measured:
            total_time += time.perf_counter() - t_frame

    report.stage_stats = {k: _percentiles(v) for k, v in stage_samples.items()}
    report.stage_fps = {k: (1000.0 / v["mean_ms"] if v["mean_ms"] > 0 else float("inf"))
                        for k, v in report.stage_stats.items()}
    report.end_to_end_fps = n_frames / total_time if total_time > 0 else float("inf")

    if measure_cache:
        report.steering_cache_speedup = _steering_cache_speedup(processors)
    return report


def _steering_cache_speedup(processors) -> float | None:
    """Cold (table rebuild per call) vs warm beamform time for the first array sensor."""
    from .beamformer import clear_steering_cache
    from .sensor_model import PointSource, simulate_snapshot

    array_proc = next((p for p in processors if p.kind != SensorKind.THERMAL), None)
    if array_proc is None:
        return None
    cfg = array_proc.cfg
    snapshot = simulate_snapshot(array_proc.geometry, [PointSource(10.0, 5.0)],
                                 noise_std=0.0, seed=7)
    reps = 5
    beamform(snapshot, array_proc.geometry, cfg.grid, cfg.floor_db)  # prime
    t0 = time.perf_counter()
    for _ in range(reps):
        beamform(snapshot, array_proc.geometry, cfg.grid, cfg.floor_db)
    warm = (time.perf_counter() - t0) / reps
    t0 = time.perf_counter()
    for _ in range(reps):
        clear_steering_cache()
        beamform(snapshot, array_proc.geometry, cfg.grid, cfg.floor_db)
    cold = (time.perf_counter() - t0) / reps
    beamform(snapshot, array_proc.geometry, cfg.grid, cfg.floor_db)  # leave cache warm
    return cold / warm if warm > 0 else float("inf")
