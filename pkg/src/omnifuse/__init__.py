"""Sensor-masked image pipeline.

Turns heterogeneous raw sensor data (thermal rasters, mmWave antenna-array
samples, microphone-array audio) into RGB-aligned sensor-masked images:
array data is delay-and-sum beamformed into azimuth-elevation heatmaps,
colorized, registered onto the RGB frame by a one-time rotation/clip
calibration, and alpha-blended inside segmentation-mask regions.
"""

from .backend import active_backend, available_backends, use_backend
from .beamformer import (
    DEFAULT_DYNAMIC_RANGE_DB,
    DEFAULT_FLOOR_DB,
    DEFAULT_GRID,
    AngleGrid,
    Heatmap,
    beamform,
    dominant_bin_wavelength,
    normalize,
    snapshot_from_audio,
)
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    GeometryError,
    InputError,
    OmnifuseError,
    ProtocolError,
)
from .fusion import (
    MaskSource,
    RgbStatsReport,
    SegMask,
    SensorMaskedImage,
    blend,
    composite,
    load_mask_png,
    rgb_statistics_distance,
    save_mask_png,
)
from .imaging import (
    CalibratedImage,
    CalibrationTransform,
    Colormap,
    RgbImage,
    calibrate,
    calibrate_field,
    colorize,
    get_colormap,
    invert,
    load_calibration,
    load_png,
    normalize_thermal,
    save_calibration,
    save_png,
)
from .mask_provider import (
    DirectoryMaskBackend,
    HttpMaskBackend,
    HttpPromptBackend,
    MaskLifecycle,
    PromptState,
    StaticMaskBackend,
    StubPromptBackend,
    TaskContext,
    acquire_prompt,
    refresh_prompt_async,
    segment,
)
from .pipeline import (
    BenchReport,
    Dataset,
    FrameBundle,
    MemoryDataset,
    RunConfig,
    RunReport,
    SensorProcessor,
    run_batch,
    run_bench,
    run_stream,
)
from .sensor_model import (
    ArrayGeometry,
    ArraySnapshot,
    AudioBlock,
    PointSource,
    SensorKind,
    ThermalFrame,
    circular_array,
    load_geometry,
    read_snapshot,
    save_geometry,
    simulate_snapshot,
    steering_phase,
    write_snapshot,
)
from .synth import make_synthetic_dataset

__version__ = "0.1.0"
