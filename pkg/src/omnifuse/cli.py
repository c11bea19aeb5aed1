"""fuse: the command-line entry point.

Exit codes: 0 success, 2 config error, 3 backend error, 4 data error.
Set OMNIFUSE_LOG=debug|info|warning|error for log verbosity and
OMNIFUSE_BACKEND=auto|compiled|python to pin the kernel backend.
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click

from . import backend as backend_mod
from .errors import BackendError, ConfigError, DataError, OmnifuseError
from .pipeline import RunConfig, run_batch, run_bench, run_stream
from .synth import load_scene, make_synthetic_dataset

logger = logging.getLogger("omnifuse")


def _setup_logging() -> None:
    level = os.environ.get("OMNIFUSE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


@click.group()
def cli():
    """Sensor-masked image pipeline: beamform, calibrate, mask, blend."""


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["batch", "stream", "bench"]), default=None,
              help="Override the config's mode.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Override the output directory.")
@click.option("--seed", type=int, default=None, help="Override the config's seed.")
@click.option("--dump-heatmaps", type=click.Choice(["pfm", "png16"]), default=None,
              help="Also write per-frame heatmaps for array sensors.")
@click.option("--backend", type=click.Choice(["auto", "compiled", "python"]), default="auto")
@click.option("--frames", type=int, default=200, help="Bench mode: frames to measure.")
@click.option("--warmup", type=int, default=10, help="Bench mode: warmup frames to discard.")
@click.option("--resolution", default="640x480", help="Bench mode: RGB resolution WxH.")
def run(config_path, mode, out_dir, seed, dump_heatmaps, backend, frames, warmup, resolution):
    """Run the pipeline over a dataset (batch/stream) or benchmark it."""
    config = RunConfig.load(config_path)
    if mode:
        config.mode = mode
    if out_dir:
        config.output_dir = out_dir
    if seed is not None:
        config.seed = seed
    if dump_heatmaps:
        config.heatmap_dump = dump_heatmaps

    with backend_mod.use_backend(backend):
        if config.mode == "bench":
            try:
                width, height = (int(t) for t in resolution.lower().split("x"))
            except ValueError:
                raise ConfigError(f"--resolution must look like 640x480, got {resolution!r}") from None
            report = run_bench(config, n_frames=frames, resolution=(width, height), warmup=warmup)
            click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
            return
        runner = run_stream if config.mode == "stream" else run_batch
        report = runner(config)

    click.echo(f"{config.mode}: {report.frames_processed}/{report.frames_total} frames, "
               f"{report.outputs_written} outputs, {report.frames_skipped} skipped "
               f"({backend_mod.active_backend()} backend)")
    for stage, stats in sorted(report.stage_stats.items()):
        click.echo(f"  {stage:>10}: p50 {stats['p50_ms']:.2f} ms  "
                   f"p90 {stats['p90_ms']:.2f} ms  p99 {stats['p99_ms']:.2f} ms")
    if report.exceeded_skip_budget():
        raise DataError(
            f"{report.frames_skipped}/{report.frames_total} frames skipped (>1% budget)")


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0)
def synth(scene_path, out_dir, seed):
    """Render a scene script into a synthetic dataset with ground truth."""
    manifest = make_synthetic_dataset(load_scene(scene_path), out_dir, seed)
    click.echo(f"wrote {manifest['n_frames']} frames to {out_dir}")


@cli.group()
def calib():
    """Calibration utilities."""


@calib.command("check")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--points", type=int, default=100, show_default=True)
@click.option("--tolerance-px", type=float, default=1e-6, show_default=True)
def calib_check(config_path, points, tolerance_px):
    """Validate that every sensor's calibration round-trips point mappings."""
    import numpy as np

    from .imaging import invert
    from .pipeline import SensorProcessor

    config = RunConfig.load(config_path)
    failures = 0
    rng = np.random.default_rng(0)
    for scfg in config.sensors:
        processor = SensorProcessor(scfg)
        transform = processor.transform
        pts = np.column_stack([
            rng.uniform(0, transform.source_width - 1, points),
            rng.uniform(0, transform.source_height - 1, points),
        ])
        back = transform.apply_points_inverse(transform.apply_points(pts))
        err = float(np.abs(back - pts).max())
        try:
            invert(transform)
            invertible = "in-family inverse: yes"
        except OmnifuseError:
            invertible = "in-family inverse: no (anisotropic scale + rotation)"
        status = "OK" if err <= tolerance_px else "FAIL"
        click.echo(f"{scfg.sensor_id}: round-trip max error {err:.2e} px "
                   f"[{status}] ({invertible})")
        if err > tolerance_px:
            failures += 1
    if failures:
        raise ConfigError(f"{failures} sensor calibration(s) failed the round-trip check")


def main() -> None:
    _setup_logging()
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(3)
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
