"""Uniformly sampled multi-channel tracks: clipping, rate conversion, smoothing.

Filters act on each channel independently along the time axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List

import numpy as np

from .errors import InputError, NumericError

logger = logging.getLogger(__name__)

_RATE_TOL = 1e-9


@dataclass(frozen=True)
class SampledTrack:
    """``values[k]`` is the sample at ``start_time_s + k / rate_hz``."""

    rate_hz: float
    values: np.ndarray
    start_time_s: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError(f"track values must be (T>=1, C>=1), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NumericError("track contains NaN or Inf")
        if not self.rate_hz > 0:
            raise InputError("rate_hz must be positive")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(len(self)) / self.rate_hz

    @property
    def duration_s(self) -> float:
        return (len(self) - 1) / self.rate_hz


def _integer_ratio(num: float, den: float, what: str) -> int:
    ratio = num / den
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > _RATE_TOL * max(1.0, ratio):
        raise InputError(f"{what}: {num} Hz / {den} Hz = {ratio:g} is not a positive integer")
    return k


def segment_clips(track: SampledTrack, clip_seconds: float) -> List[SampledTrack]:
    """Cut into consecutive non-overlapping clips; keep a short tail only if >= 2 samples."""
    if not clip_seconds > 0:
        raise InputError("clip_seconds must be positive")
    n = max(1, int(round(clip_seconds * track.rate_hz)))
    clips = []
    for i in range(0, len(track), n):
        chunk = track.values[i:i + n]
        if chunk.shape[0] < n and chunk.shape[0] < 2:
            break
        clips.append(SampledTrack(track.rate_hz, chunk, track.start_time_s + i / track.rate_hz))
    return clips


def downsample(track: SampledTrack, target_hz: float) -> SampledTrack:
    stride = _integer_ratio(track.rate_hz, target_hz, "downsample")
    return SampledTrack(float(target_hz), track.values[::stride], track.start_time_s)


def linear_interpolate(track: SampledTrack, target_hz: float, n_samples: int = None) -> SampledTrack:
    """Resample to ``target_hz`` by piecewise-linear interpolation.

    By default the output spans the input's time range. ``n_samples`` forces
    a longer or shorter output grid; points past the last input sample take
    the last input value.
    """
    if target_hz < track.rate_hz * (1 - _RATE_TOL):
        raise InputError("linear_interpolate only upsamples (target_hz >= rate_hz)")
    T = len(track)
    if n_samples is None:
        n_samples = int(math.floor((T - 1) * target_hz / track.rate_hz + 1e-9)) + 1
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if T == 1:
        vals = np.repeat(track.values, n_samples, axis=0)
        return SampledTrack(float(target_hz), vals, track.start_time_s)
    # position of each output sample in input-index units
    pos = np.arange(n_samples) * (track.rate_hz / target_hz)
    ratio = target_hz / track.rate_hz
    k = int(round(ratio))
    if abs(ratio - k) <= _RATE_TOL * ratio:
        # integer upsampling: exact rational positions, so knots land exactly
        idx = np.arange(n_samples) // k
        frac = (np.arange(n_samples) % k) / k
    else:
        idx = np.floor(pos + 1e-12).astype(int)
        frac = pos - idx
        frac[frac < 0] = 0.0
    past = idx >= T - 1
    idx = np.minimum(idx, T - 2)
    frac = np.where(past, 1.0, frac)[:, None]
    lo = track.values[idx]
    hi = track.values[idx + 1]
    vals = lo + frac * (hi - lo)
    # exactness at knots and beyond the end
    at_knot = (frac[:, 0] == 0.0)
    vals[at_knot] = lo[at_knot]
    vals[past] = track.values[-1]
    return SampledTrack(float(target_hz), vals, track.start_time_s)


def resample(track: SampledTrack, target_hz: float) -> SampledTrack:
    """Downsample by integer stride or upsample by interpolation, as needed."""
    if abs(track.rate_hz - target_hz) <= _RATE_TOL * target_hz:
        return track
    if target_hz < track.rate_hz:
        return downsample(track, target_hz)
    return linear_interpolate(track, target_hz)


# -- Butterworth --------------------------------------------------------------

def butterworth_design(cutoff_norm: float, order: int):
    """Low-pass (b, a) from the bilinear transform of the analog prototype.

    ``cutoff_norm`` is a fraction of Nyquist; the analog cutoff is prewarped
    so the digital -3 dB point lands exactly on it.
    """
    if not 0.0 < cutoff_norm < 1.0:
        raise InputError("cutoff_norm must lie in (0, 1)")
    if order not in (1, 2):
        raise InputError("order must be 1 or 2")
    K = math.tan(math.pi * cutoff_norm / 2.0)
    if order == 1:
        # H(s) = 1 / (1 + s/K),  s = (1 - z^-1) / (1 + z^-1)
        norm = K + 1.0
        b = np.array([K, K]) / norm
        a = np.array([1.0, (K - 1.0) / norm])
    else:
        # H(s) = 1 / (1 + sqrt2 s/K + (s/K)^2)
        K2 = K * K
        q = math.sqrt(2.0) * K
        norm = 1.0 + q + K2
        b = np.array([K2, 2.0 * K2, K2]) / norm
        a = np.array([1.0, 2.0 * (K2 - 1.0) / norm, (1.0 - q + K2) / norm])
    return b, a


def _steady_state(b, a):
    """Initial delay-line state giving unit-step steady state (transposed DF-II)."""
    n = len(a) - 1
    # z[i] = sum_{k>i} (b[k] - a[k]) for unit DC input with unit DC output
    zi = np.zeros(n)
    for i in range(n):
        zi[i] = np.sum(b[i + 1:]) - np.sum(a[i + 1:])
    return zi


def _lfilter(b, a, x, zi):
    """Transposed direct-form II along axis 0; ``zi`` has shape (n, C)."""
    n = len(a) - 1
    y = np.empty_like(x)
    z = zi.copy()
    for t in range(x.shape[0]):
        xt = x[t]
        yt = b[0] * xt + z[0]
        for i in range(n - 1):
            z[i] = b[i + 1] * xt + z[i + 1] - a[i + 1] * yt
        z[n - 1] = b[n] * xt - a[n] * yt
        y[t] = yt
    return y


def _odd_pad(x, n):
    if x.shape[0] <= n:
        raise InputError(f"signal of length {x.shape[0]} too short for padding {n}")
    head = 2.0 * x[0] - x[n:0:-1]
    tail = 2.0 * x[-1] - x[-2:-n - 2:-1]
    return np.concatenate([head, x, tail])


def butterworth_filter(track: SampledTrack, cutoff_norm: float = 0.1, order: int = 2) -> SampledTrack:
    """Zero-phase (forward-backward) Butterworth low-pass with odd-reflection edges."""
    b, a = butterworth_design(cutoff_norm, order)
    pad = 3 * order
    x = _odd_pad(track.values, pad)
    zi = _steady_state(b, a)[:, None]
    y = _lfilter(b, a, x, zi * x[0])
    y = y[::-1]
    y = _lfilter(b, a, y, zi * y[0])[::-1]
    return replace(track, values=y[pad:-pad])


def median_filter(track: SampledTrack, window: int = 5) -> SampledTrack:
    if window < 3 or window % 2 == 0:
        raise InputError("median window must be odd and >= 3")
    half = (window - 1) // 2
    x = np.pad(track.values, ((half, half), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(x, window, axis=0)
    return replace(track, values=np.median(win, axis=-1))


def gaussian_kernel(sigma_samples: float) -> np.ndarray:
    if not sigma_samples > 0:
        raise InputError("sigma_samples must be positive")
    radius = int(math.ceil(4.0 * sigma_samples))
    k = np.arange(-radius, radius + 1)
    w = np.exp(-(k * k) / (2.0 * sigma_samples ** 2))
    return w / w.sum()


def gaussian_filter(track: SampledTrack, sigma_samples: float = 3.0) -> SampledTrack:
    w = gaussian_kernel(sigma_samples)
    radius = (len(w) - 1) // 2
    x = np.pad(track.values, ((radius, radius), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(x, len(w), axis=0)
    out = win @ w[::-1]
    # keep within input range despite rounding of the weighted sum
    out = np.clip(out, track.values.min(axis=0), track.values.max(axis=0))
    return replace(track, values=out)


FILTERS = {
    "butterworth": butterworth_filter,
    "median": median_filter,
    "gaussian": gaussian_filter,
}
