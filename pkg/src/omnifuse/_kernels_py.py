"""Pure-numpy implementations of the hot per-frame kernels.

Fallback for omnifuse._kernels (the compiled extension). Both backends
implement the same per-element arithmetic in the same order so that
warp/blend results are bit-identical; beamform power agrees to ~1e-12 dB
(summation order differs between BLAS and the sequential C loop).
"""

from __future__ import annotations

import numpy as np


def beamform_power_db(conj_phasors: np.ndarray, samples: np.ndarray, floor_db: float) -> np.ndarray:
    """Per-cell delay-and-sum power in dB, clamped below at floor_db.

    conj_phasors: (C, K) complex128 steering table exp(-j*phase).
    samples: (K,) complex128.
    """
    mag = np.abs(conj_phasors @ samples)
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(mag)
    np.maximum(out, floor_db, out=out)
    return out


def warp_bilinear_rgb(src: np.ndarray, ix0: np.ndarray, ix1: np.ndarray,
                      iy0: np.ndarray, iy1: np.ndarray,
                      fx: np.ndarray, fy: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Gather-based bilinear resample of an RGB byte image, black outside `valid`.

    Rounds half-up to uint8, matching the compiled kernel bit for bit.
    """
    v00 = src[iy0, ix0].astype(np.float64)
    v01 = src[iy0, ix1].astype(np.float64)
    v10 = src[iy1, ix0].astype(np.float64)
    v11 = src[iy1, ix1].astype(np.float64)
    a = fx[..., None]
    b = fy[..., None]
    top = (1.0 - a) * v00 + a * v01
    bot = (1.0 - a) * v10 + a * v11
    val = (1.0 - b) * top + b * bot
    out = np.floor(val + 0.5).astype(np.uint8)
    out[valid == 0] = 0
    return out


def warp_bilinear_field(src: np.ndarray, ix0: np.ndarray, ix1: np.ndarray,
                        iy0: np.ndarray, iy1: np.ndarray,
                        fx: np.ndarray, fy: np.ndarray, valid: np.ndarray,
                        fill: float) -> np.ndarray:
    """Bilinear resample of a scalar float field, `fill` outside `valid`."""
    v00 = src[iy0, ix0]
    v01 = src[iy0, ix1]
    v10 = src[iy1, ix0]
    v11 = src[iy1, ix1]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    out = (1.0 - fy) * top + fy * bot
    out[valid == 0] = fill
    return out


def blend_masked(rgb: np.ndarray, sensor: np.ndarray, mask: np.ndarray,
                 validity: np.ndarray, alpha: float) -> np.ndarray:
    """Convex per-channel blend inside mask & validity, source RGB elsewhere.

    out = round_half_up(alpha*sensor + (1-alpha)*rgb) where mask & validity,
    bit-exact rgb everywhere else.
    """
    out = rgb.copy()
    active = (mask != 0) & (validity != 0)
    if not active.any():
        return out
    s = sensor[active].astype(np.float64)
    r = rgb[active].astype(np.float64)
    out[active] = np.floor(alpha * s + (1.0 - alpha) * r + 0.5).astype(np.uint8)
    return out
