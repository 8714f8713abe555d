"""Coda-wave preprocessing: stretching dv/v, correlation, two-point statistics,
scaling and the stochastic augmentations used for the self-supervised branch.

All functions are pure. Index windows are half-open ``(start, stop)`` pairs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _signal

from .errors import DegenerateSignalError, RangeError, ValidationError

__all__ = [
    "Waveform",
    "StretchResult",
    "TwoPointStats",
    "stretch_dvv",
    "cross_correlation",
    "two_point_stats",
    "normalize_waveform",
    "minmax_scale",
    "augment",
    "augment_batch",
]


@dataclass(frozen=True)
class Waveform:
    """A sampled 1D real signal.

    Parameters
    ----------
    samples : array_like
        Amplitudes, at least two, all finite.
    dt : float
        Sampling interval. Defaults to 1.0 (abstract sample units).
    """

    samples: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ValidationError(f"waveform needs a 1D array of length >= 2, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("waveform samples must be finite")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt


@dataclass(frozen=True)
class StretchResult:
    dvv_percent: float
    cc_at_best: float
    alpha_grid_spacing: float
    alpha: float = 0.0
    cc_curve: np.ndarray | None = None


@dataclass(frozen=True)
class TwoPointStats:
    values: np.ndarray
    max_lag: int

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.max_lag, self.max_lag + 1)

    def at(self, lag: int) -> float:
        if abs(lag) > self.max_lag:
            raise RangeError(f"lag {lag} outside [-{self.max_lag}, {self.max_lag}]")
        return float(self.values[lag + self.max_lag])


def _as_array(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples
    return Waveform(w).samples


def _check_window(window, n: int) -> tuple[int, int]:
    if window is None:
        return 0, n
    start, stop = int(window[0]), int(window[1])
    if not (0 <= start < stop <= n) or stop - start < 2:
        raise RangeError(f"window ({start}, {stop}) not inside [0, {n}] with at least 2 samples")
    return start, stop


def cross_correlation(a, b, window=None) -> float:
    """Normalized inner product of two signals over ``window``.

    The signals are not demeaned; the result is the cosine of the angle between
    the windowed sample vectors and lies in [-1, 1].
    """
    x, y = _as_array(a), _as_array(b)
    start, stop = _check_window(window, min(x.size, y.size))
    x, y = x[start:stop], y[start:stop]
    ex, ey = np.dot(x, x), np.dot(y, y)
    if ex == 0.0 or ey == 0.0:
        raise DegenerateSignalError("zero-energy window in cross_correlation")
    cc = np.dot(x, y) / np.sqrt(ex * ey)
    return float(np.clip(cc, -1.0, 1.0))


def _stretch_cc_curve(ref: np.ndarray, pert: np.ndarray, start: int, stop: int,
                      alphas: np.ndarray) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.float64)
    # perturbed evaluated at t(1 + alpha); time origin is sample 0
    stretched_idx = idx[None, :] * (1.0 + alphas[:, None])
    inside = (stretched_idx >= start) & (stretched_idx <= stop - 1)
    grid = np.arange(pert.size, dtype=np.float64)
    p = np.interp(stretched_idx, grid, pert) * inside
    r = ref[start:stop][None, :] * inside
    num = np.sum(r * p, axis=1)
    den = np.sqrt(np.sum(r * r, axis=1) * np.sum(p * p, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        cc = np.where(den > 0, num / den, 0.0)
    return np.clip(cc, -1.0, 1.0)


def stretch_dvv(reference, perturbed, window=None, alpha_max: float = 0.05,
                n_alpha: int = 501, refine: bool = False) -> StretchResult:
    """Relative velocity change by the stretching technique.

    Grid-searches the stretch factor ``alpha`` over ``n_alpha`` uniform values in
    ``[-alpha_max, alpha_max]``. For each candidate the perturbed signal is
    linearly resampled at ``t * (1 + alpha)`` and correlated with the reference
    over ``window``; resampled points landing outside the window are dropped from
    both energy sums. The winner maximizes ``|CC|`` so a polarity-flipped copy
    still locks onto the right stretch; the signed CC at the winner is reported.

    Parameters
    ----------
    reference, perturbed : Waveform or array_like
    window : (int, int), optional
        Half-open sample range; defaults to the common length.
    alpha_max : float
        Search half-width (0.05 means +/-5 %).
    n_alpha : int
        Odd grid size so that alpha = 0 is a candidate.
    refine : bool
        Fit a parabola through the best point and its neighbours for a sub-grid
        estimate. Off by default.

    Returns
    -------
    StretchResult
        ``dvv_percent`` is ``100 * alpha*``, with the sign convention that
        ``perturbed(t) = reference(t / (1 + a))`` yields ``+100 a``.
    """
    ref, pert = _as_array(reference), _as_array(perturbed)
    if not alpha_max > 0:
        raise ValidationError(f"alpha_max must be > 0, got {alpha_max}")
    if n_alpha < 3 or n_alpha % 2 == 0:
        raise ValidationError(f"n_alpha must be odd and >= 3, got {n_alpha}")
    start, stop = _check_window(window, min(ref.size, pert.size))
    if not np.any(ref[start:stop]) or not np.any(pert[start:stop]):
        raise DegenerateSignalError("zero-energy window in stretch_dvv")

    alphas = np.linspace(-alpha_max, alpha_max, n_alpha)
    spacing = alphas[1] - alphas[0]
    cc = _stretch_cc_curve(ref, pert, start, stop, alphas)
    best = int(np.argmax(np.abs(cc)))
    alpha = float(alphas[best])
    cc_best = float(cc[best])
    if refine and 0 < best < n_alpha - 1:
        y0, y1, y2 = np.abs(cc[best - 1:best + 2])
        curv = y0 - 2 * y1 + y2
        if curv < 0:
            alpha += 0.5 * spacing * (y0 - y2) / curv
            cc_best = float(_stretch_cc_curve(ref, pert, start, stop, np.array([alpha]))[0])
    return StretchResult(dvv_percent=100.0 * alpha, cc_at_best=cc_best,
                         alpha_grid_spacing=float(spacing), alpha=alpha, cc_curve=cc)


def two_point_stats(reference, perturbed, max_lag: int) -> TwoPointStats:
    """Lag-normalized cross-correlation between two equal-length signals.

    ``f[lag] = sum_t ref[t] * pert[t + lag] / (L - |lag|)`` for every lag in
    ``[-max_lag, max_lag]``; the sum runs over the ``L - |lag|`` overlapping
    samples. Inputs are expected to be normalized already (see
    :func:`normalize_waveform`).
    """
    u, p = _as_array(reference), _as_array(perturbed)
    if u.size != p.size:
        raise ValidationError(f"length mismatch: {u.size} vs {p.size}")
    n = u.size
    max_lag = int(max_lag)
    if max_lag < 0 or max_lag >= n:
        raise RangeError(f"max_lag must be in [0, {n - 1}], got {max_lag}")
    full = _signal.correlate(p, u, mode="full")  # index k <-> lag k - (n - 1)
    centre = n - 1
    raw = full[centre - max_lag:centre + max_lag + 1]
    lags = np.arange(-max_lag, max_lag + 1)
    return TwoPointStats(values=raw / (n - np.abs(lags)), max_lag=max_lag)


def normalize_waveform(w):
    """Zero-mean, unit (population) standard deviation copy of ``w``.

    Returns the same type it was given (Waveform or ndarray).
    """
    x = _as_array(w)
    std = x.std()
    if std == 0.0:
        raise DegenerateSignalError("cannot normalize a constant signal")
    out = (x - x.mean()) / std
    if isinstance(w, Waveform):
        return Waveform(out, w.dt)
    return out


def minmax_scale(v) -> np.ndarray:
    """Affine map of ``v`` onto [-1, 1] (min -> -1, max -> +1).

    A 2D input is scaled row by row.
    """
    x = np.asarray(v, dtype=np.float64)
    lo = x.min(axis=-1, keepdims=True)
    hi = x.max(axis=-1, keepdims=True)
    if np.any(hi == lo):
        raise DegenerateSignalError("cannot min-max scale a constant vector")
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def _max_shift(length: int, max_shift_frac: float) -> int:
    return int(np.floor(max_shift_frac * length))


def augment(v, rng: np.random.Generator, noise_sigma: float = 0.1,
            max_shift_frac: float = 0.1) -> np.ndarray:
    """Random circular shift plus additive Gaussian noise.

    The shift ``k`` is uniform on ``[-floor(frac * L), floor(frac * L)]`` and
    satisfies ``out[(i + k) % L] = v[i]`` before the noise is added.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValidationError("augment expects a non-empty 1D vector")
    m = _max_shift(x.size, max_shift_frac)
    k = int(rng.integers(-m, m + 1))
    out = np.roll(x, k)
    if noise_sigma:
        out = out + rng.normal(0.0, noise_sigma, size=x.size)
    return out


def augment_batch(x, rng: np.random.Generator, noise_sigma: float = 0.1,
                  max_shift_frac: float = 0.1) -> np.ndarray:
    """Row-wise :func:`augment` for a ``(B, L)`` matrix, each row with its own shift."""
    x = np.asarray(x)
    b, n = x.shape
    m = _max_shift(n, max_shift_frac)
    k = rng.integers(-m, m + 1, size=b)
    idx = (np.arange(n)[None, :] - k[:, None]) % n
    out = np.take_along_axis(x, idx, axis=1)
    if noise_sigma:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape).astype(out.dtype, copy=False)
    return out
