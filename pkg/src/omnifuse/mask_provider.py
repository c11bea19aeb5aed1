"""Prompt generation and segmentation backends, plus the async refresh loop.

Segmentation prompts come from a prompt backend (a fixed string for stub
runs, or an HTTP text endpoint); masks come from a mask backend (per-frame
PNG files, or an HTTP segmentation service). The prompt is acquired once,
blocking, before the frame loop starts; after that a single background
worker refreshes the (prompt, mask) pair on a fixed period so that backend
latency never shows up in frame latency.

Concurrency contract: the worker publishes a completed (PromptState,
SegMask) pair with one atomic reference swap, and the frame loop only ever
reads the latest published pair, so readers cannot observe a torn
prompt/generation combination. The generation counter increases by exactly
one per accepted refresh; a refresh with identical prompt text still bumps
it (the scene may have changed, so the mask is recomputed); a failed
refresh logs and retains the previous pair.
"""

from __future__ import annotations

import io
import logging
import queue
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackendError, DataError, InputError, ProtocolError
from .fusion import MaskSource, SegMask, load_mask_png, mask_from_png_bytes
from .imaging import RgbImage

logger = logging.getLogger("omnifuse.mask_provider")

DEFAULT_REFRESH_PERIOD_S = 2.0
DEFAULT_ACQUIRE_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class TaskContext:
    """One robot task: the text request plus bookkeeping."""

    task_text: str
    task_id: str = "task"
    started_at: float = 0.0

    def __post_init__(self):
        if not self.task_text or not self.task_text.strip():
            raise InputError("task_text must be non-empty")


@dataclass(frozen=True)
class PromptState:
    """Current segmentation prompt with its refresh generation."""

    prompt: str
    generation: int
    last_refreshed: float = 0.0


def _png_bytes(rgb: RgbImage) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(rgb.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _service_error(kind: str, url: str, resp) -> BackendError:
    detail = ""
    try:
        doc = resp.json()
        detail = f": {doc.get('code', '?')} {doc.get('message', '')}".rstrip()
    except ValueError:
        pass
    return BackendError(f"{kind} service {url} returned HTTP {resp.status_code}{detail}")


# ---------------------------------------------------------------------------
# Prompt backends

class StubPromptBackend:
    """Fixed prompt from the run config; optional artificial latency for tests."""

    def __init__(self, prompt: str, latency_s: float = 0.0):
        self.prompt = prompt
        self.latency_s = latency_s

    def describe(self) -> str:
        return f"stub prompt ({self.prompt!r})"

    def generate_prompt(self, task_text: str, rgb: RgbImage) -> str:
        if self.latency_s > 0:
            time.sleep(self.latency_s)
        return self.prompt


class HttpPromptBackend:
    """POST /prompt, multipart {image: PNG, task: text} -> JSON {prompt}."""

    def __init__(self, url: str, timeout_s: float = DEFAULT_ACQUIRE_TIMEOUT_S, session=None):
        import requests

        self.url = url
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def describe(self) -> str:
        return f"prompt service {self.url}"

    def generate_prompt(self, task_text: str, rgb: RgbImage) -> str:
        import requests

        files = {"image": ("rgb.png", _png_bytes(rgb), "image/png"),
                 "task": (None, task_text)}
        try:
            resp = self._session.post(self.url, files=files, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise BackendError(f"prompt service {self.url} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise _service_error("prompt", self.url, resp)
        try:
            prompt = resp.json()["prompt"]
        except (ValueError, KeyError) as exc:
            raise ProtocolError(f"prompt service {self.url} returned malformed JSON: {exc}") from exc
        if not isinstance(prompt, str):
            raise ProtocolError(f"prompt service {self.url} returned non-string prompt")
        return prompt


# ---------------------------------------------------------------------------
# Mask backends

class DirectoryMaskBackend:
    """Pre-stored per-frame masks: <dir>/<frame_idx>.png, strict 0/255 grayscale."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def describe(self) -> str:
        return f"mask directory {self.directory}"

    def segment(self, prompt: str, rgb: RgbImage, frame_idx: int | None = None) -> SegMask:
        if frame_idx is None:
            raise InputError("file mask backend needs a frame index")
        path = self.directory / f"{frame_idx}.png"
        if not path.exists():
            raise DataError(f"no stored mask for frame {frame_idx} in {self.directory}")
        mask = load_mask_png(path, prompt_text=prompt, created_at=time.monotonic())
        return mask


class StaticMaskBackend:
    """One fixed mask for every frame (bench and harness use)."""

    def __init__(self, bits: np.ndarray, latency_s: float = 0.0):
        self.bits = np.ascontiguousarray(bits, dtype=np.uint8)
        self.latency_s = latency_s

    def describe(self) -> str:
        return "static mask"

    def segment(self, prompt: str, rgb: RgbImage, frame_idx: int | None = None) -> SegMask:
        if self.latency_s > 0:
            time.sleep(self.latency_s)
        return SegMask(width=self.bits.shape[1], height=self.bits.shape[0], bits=self.bits,
                       prompt_text=prompt, source=MaskSource.FILE, created_at=time.monotonic())


class HttpMaskBackend:
    """POST /segment, multipart {image: PNG, prompt: text} -> PNG mask (0/255)."""

    def __init__(self, url: str, timeout_s: float = DEFAULT_ACQUIRE_TIMEOUT_S, session=None):
        import requests

        self.url = url
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def describe(self) -> str:
        return f"mask service {self.url}"

    def segment(self, prompt: str, rgb: RgbImage, frame_idx: int | None = None) -> SegMask:
        import requests

        files = {"image": ("rgb.png", _png_bytes(rgb), "image/png"),
                 "prompt": (None, prompt)}
        try:
            resp = self._session.post(self.url, files=files, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise BackendError(f"mask service {self.url} unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise _service_error("mask", self.url, resp)
        try:
            mask = mask_from_png_bytes(resp.content, prompt_text=prompt,
                                       source=MaskSource.SERVICE, created_at=time.monotonic())
        except DataError as exc:
            raise ProtocolError(f"mask service {self.url}: {exc}") from exc
        return mask


# ---------------------------------------------------------------------------
# Operations

def _describe(backend_obj) -> str:
    describe = getattr(backend_obj, "describe", None)
    return describe() if callable(describe) else type(backend_obj).__name__


def acquire_prompt(ctx: TaskContext, first_rgb: RgbImage, backend_obj,
                   timeout_s: float = DEFAULT_ACQUIRE_TIMEOUT_S) -> PromptState:
    """Blocking one-time prompt acquisition before the frame loop starts.

    This is the only place the frame path is allowed to wait on a backend.
    Raises BackendError if the backend is unreachable or exceeds timeout_s,
    ProtocolError if it returns an empty prompt.
    """
    result: queue.Queue = queue.Queue()

    def call():
        try:
            result.put(("ok", backend_obj.generate_prompt(ctx.task_text, first_rgb)))
        except Exception as exc:  # noqa: BLE001 - ferried across the thread
            result.put(("err", exc))

    worker = threading.Thread(target=call, daemon=True, name="prompt-acquire")
    worker.start()
    try:
        kind, payload = result.get(timeout=timeout_s)
    except queue.Empty:
        raise BackendError(
            f"{_describe(backend_obj)} did not answer within {timeout_s:.0f} s; task cannot begin"
        ) from None
    if kind == "err":
        if isinstance(payload, (BackendError, ProtocolError)):
            raise payload
        raise BackendError(f"{_describe(backend_obj)} failed at startup: {payload}") from payload
    prompt = payload
    if not prompt or not prompt.strip():
        raise ProtocolError(f"{_describe(backend_obj)} returned an empty prompt")
    return PromptState(prompt=prompt, generation=1, last_refreshed=time.monotonic())


def segment(prompt: str, rgb: RgbImage, backend_obj, frame_idx: int | None = None) -> SegMask:
    """Fetch a segmentation mask for (prompt, rgb) and validate its contract."""
    if not prompt or not prompt.strip():
        raise InputError("prompt must be non-empty")
    mask = backend_obj.segment(prompt, rgb, frame_idx=frame_idx)
    if (mask.width, mask.height) != (rgb.width, rgb.height):
        raise ProtocolError(
            f"{_describe(backend_obj)} returned a {mask.width}x{mask.height} mask "
            f"for a {rgb.width}x{rgb.height} frame")
    return mask


class MaskLifecycle:
    """Owns the background refresh worker for one task.

    start() blocks for the initial prompt and mask (startup only); after
    that refresh_async() never blocks and current() returns the latest
    completed pair.
    """

    def __init__(self, prompt_backend, mask_backend,
                 refresh_period_s: float = DEFAULT_REFRESH_PERIOD_S):
        self.prompt_backend = prompt_backend
        self.mask_backend = mask_backend
        self.refresh_period_s = float(refresh_period_s)
        self._ctx: TaskContext | None = None
        self._published: tuple[PromptState, SegMask] | None = None
        self._latest_lock = threading.Lock()
        self._latest: tuple[RgbImage, int] | None = None
        self._stop = threading.Event()
        self._worker: threading.Thread | None = None

    def start(self, ctx: TaskContext, first_rgb: RgbImage, frame_idx: int = 0,
              timeout_s: float = DEFAULT_ACQUIRE_TIMEOUT_S) -> PromptState:
        if self._worker is not None:
            raise InputError("lifecycle already started")
        self._ctx = ctx
        state = acquire_prompt(ctx, first_rgb, self.prompt_backend, timeout_s=timeout_s)
        mask = segment(state.prompt, first_rgb, self.mask_backend, frame_idx=frame_idx)
        self._published = (state, mask)
        self._latest = (first_rgb, frame_idx)
        self._worker = threading.Thread(target=self._run, daemon=True,
                                        name=f"mask-refresh-{ctx.task_id}")
        self._worker.start()
        return state

    def refresh_async(self, rgb: RgbImage, frame_idx: int | None = None) -> None:
        """Hand the newest frame to the refresh worker; returns immediately."""
        with self._latest_lock:
            old_idx = self._latest[1] if self._latest else 0
            self._latest = (rgb, frame_idx if frame_idx is not None else old_idx)

    def current(self) -> tuple[PromptState, SegMask]:
        published = self._published
        if published is None:
            raise InputError("lifecycle not started")
        return published

    def mask_age_ms(self, now: float | None = None) -> float:
        _, mask = self.current()
        now = time.monotonic() if now is None else now
        return max(0.0, (now - mask.created_at) * 1000.0)

    def stop(self) -> None:
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=5.0)

    def _run(self) -> None:
        next_at = time.monotonic() + self.refresh_period_s
        while not self._stop.wait(timeout=max(0.0, next_at - time.monotonic())):
            next_at = time.monotonic() + self.refresh_period_s
            with self._latest_lock:
                latest = self._latest
            if latest is None:
                continue
            rgb, frame_idx = latest
            try:
                self._refresh_once(rgb, frame_idx)
            except Exception as exc:  # noqa: BLE001 - stale beats blocked
                logger.warning("mask refresh failed, keeping previous prompt/mask: %s", exc)

    def _refresh_once(self, rgb: RgbImage, frame_idx: int) -> None:
        assert self._ctx is not None
        prompt = self.prompt_backend.generate_prompt(self._ctx.task_text, rgb)
        if not prompt or not prompt.strip():
            raise ProtocolError(f"{_describe(self.prompt_backend)} returned an empty prompt")
        if self._stop.is_set():
            return
        mask = segment(prompt, rgb, self.mask_backend, frame_idx=frame_idx)
        old_state, _ = self.current()
        new_state = PromptState(prompt=prompt, generation=old_state.generation + 1,
                                last_refreshed=time.monotonic())
        # Single reference assignment: readers see old or new pair, never a mix.
        self._published = (new_state, mask)


def refresh_prompt_async(lifecycle: MaskLifecycle, rgb: RgbImage,
                         frame_idx: int | None = None) -> None:
    """Request an asynchronous prompt/mask refresh; never blocks the caller."""
    lifecycle.refresh_async(rgb, frame_idx)
