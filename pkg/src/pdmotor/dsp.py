"""Signal-processing kernels: band-pass filtering, axis norms, db3 wavelets, PSD.

All functions are pure and operate on 1-D numpy arrays sampled at a
nominal rate. Filtering and spectral estimation are built on
``scipy.signal``; the wavelet cascade is implemented here directly.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import (
    DecompositionTooDeep,
    InvalidSpec,
    LengthMismatch,
    SignalTooShort,
)

__all__ = [
    "BandpassSpec",
    "WaveletDecomposition",
    "PsdEstimate",
    "DB3_LOWPASS",
    "butterworth_bandpass",
    "design_bandpass",
    "bandpass_gain",
    "vector_norm",
    "dwt_db3",
    "idwt_db3",
    "level_band",
    "psd",
]


def _db3_scaling_filter():
    # closed form of the 6-tap Daubechies scaling filter (3 vanishing moments)
    s10 = np.sqrt(10.0)
    r = np.sqrt(5.0 + 2.0 * s10)
    taps = np.array([
        1.0 + s10 + r,
        5.0 + s10 + 3.0 * r,
        10.0 - 2.0 * s10 + 2.0 * r,
        10.0 - 2.0 * s10 - 2.0 * r,
        5.0 + s10 - 3.0 * r,
        1.0 + s10 - r,
    ])
    return taps / (16.0 * np.sqrt(2.0))


#: synthesis low-pass of db3, h[0] = 0.33267...
DB3_LOWPASS = _db3_scaling_filter()
_DEC_LO = DB3_LOWPASS[::-1].copy()
_DEC_HI = np.array([(-1.0) ** (k + 1) * DB3_LOWPASS[k] for k in range(6)])
_REC_LO = DB3_LOWPASS.copy()
_REC_HI = _DEC_HI[::-1].copy()
_FILTER_LEN = 6

WAVELET_MODES = ("symmetric", "periodization")


@dataclass(frozen=True)
class BandpassSpec:
    lb_hz: float
    ub_hz: float
    order: int = 4

    def validate(self, rate_hz):
        if self.order < 1 or int(self.order) != self.order:
            raise InvalidSpec(f"filter order must be a positive integer, got {self.order}")
        nyquist = rate_hz / 2.0
        if not (0.0 < self.lb_hz < self.ub_hz < nyquist):
            raise InvalidSpec(
                f"cutoffs must satisfy 0 < {self.lb_hz} < {self.ub_hz} < {nyquist} (Nyquist)"
            )


@dataclass
class WaveletDecomposition:
    details: dict  # level -> coefficient array
    approximation: np.ndarray
    mode: str = "symmetric"
    lengths: list = field(default_factory=list)  # input length at each level

    @property
    def max_level(self):
        return max(self.details)


@dataclass
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray

    @property
    def resolution_hz(self):
        return float(self.freqs_hz[1] - self.freqs_hz[0]) if len(self.freqs_hz) > 1 else 0.0


def design_bandpass(spec, rate_hz):
    """Second-order sections of the single-pass Butterworth band-pass."""
    spec.validate(rate_hz)
    return signal.butter(
        spec.order, [spec.lb_hz, spec.ub_hz], btype="bandpass", fs=rate_hz, output="sos"
    )


def bandpass_gain(spec, rate_hz, freqs_hz):
    """Magnitude response of the two-directional filter (|H|^2) at ``freqs_hz``."""
    sos = design_bandpass(spec, rate_hz)
    _, h = signal.sosfreqz(sos, worN=np.atleast_1d(np.asarray(freqs_hz, float)), fs=rate_hz)
    return np.abs(h) ** 2


def _forward(sos, x):
    zi = signal.sosfilt_zi(sos) * x[0]
    y, _ = signal.sosfilt(sos, x, zi=zi)
    return y


def _backward(sos, x):
    return _forward(sos, x[::-1])[::-1]


def butterworth_bandpass(x, rate_hz, spec):
    """Zero-phase Butterworth band-pass of a 1-D signal.

    The signal is reflect-padded by ``3 * order`` samples at both ends and
    run through the filter in both directions. Forward-then-backward and
    backward-then-forward passes are averaged, which makes the output exactly
    equivariant under time reversal; in the interior both orderings agree
    and the magnitude response is ``|H(f)|**2``.
    """
    x = np.asarray(x, dtype=float)
    spec.validate(rate_hz)
    if x.ndim != 1:
        raise LengthMismatch("butterworth_bandpass expects a 1-D signal")
    if len(x) <= 3 * spec.order:
        raise SignalTooShort(
            f"signal of {len(x)} samples is too short for an order-{spec.order} filter"
        )
    sos = design_bandpass(spec, rate_hz)
    pad = 3 * spec.order
    ext = np.pad(x, pad, mode="symmetric")
    y = 0.5 * (_backward(sos, _forward(sos, ext)) + _forward(sos, _backward(sos, ext)))
    return y[pad:-pad]


def vector_norm(x, y, z):
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    if not (x.shape == y.shape == z.shape):
        raise LengthMismatch(f"axis lengths differ: {x.shape}, {y.shape}, {z.shape}")
    return np.sqrt(x * x + y * y + z * z)


def _analysis_step(x, mode):
    n = len(x)
    if mode == "symmetric":
        ext = np.pad(x, _FILTER_LEN - 1, mode="symmetric")
        m = (n + _FILTER_LEN - 1) // 2
        lo = np.convolve(ext, _DEC_LO)[_FILTER_LEN::2][:m]
        hi = np.convolve(ext, _DEC_HI)[_FILTER_LEN::2][:m]
        return lo, hi
    if n % 2:
        x = np.append(x, x[-1])
        n += 1
    # a[k] = sum_j f[j] x[(2k + L/2 - j) mod n]
    k = np.arange(n // 2)[:, None]
    j = np.arange(_FILTER_LEN)[None, :]
    idx = (2 * k + _FILTER_LEN // 2 - j) % n
    taps = x[idx]
    return taps @ _DEC_LO, taps @ _DEC_HI


def _synthesis_step(lo, hi, mode, out_len):
    if mode == "symmetric":
        up_lo = np.zeros(2 * len(lo))
        up_hi = np.zeros(2 * len(hi))
        up_lo[::2] = lo
        up_hi[::2] = hi
        full = np.convolve(up_lo, _REC_LO) + np.convolve(up_hi, _REC_HI)
        start = _FILTER_LEN - 2
        return full[start:start + 2 * len(lo) - _FILTER_LEN + 2][:out_len]
    # periodized analysis is orthogonal, so synthesis is its transpose
    n = 2 * len(lo)
    k = np.arange(len(lo))[:, None]
    j = np.arange(_FILTER_LEN)[None, :]
    idx = ((2 * k + _FILTER_LEN // 2 - j) % n).ravel()
    x = np.zeros(n)
    np.add.at(x, idx, (lo[:, None] * _DEC_LO[None, :]).ravel())
    np.add.at(x, idx, (hi[:, None] * _DEC_HI[None, :]).ravel())
    return x[:out_len]


def dwt_db3(x, max_level, mode="symmetric"):
    """Multi-level db3 decomposition (Mallat cascade).

    Level ``i`` spans roughly ``fs / 2**(i+1)`` .. ``fs / 2**i``. Raises
    :class:`DecompositionTooDeep` if the input to any level is shorter than
    the 6-tap filter.
    """
    if mode not in WAVELET_MODES:
        raise InvalidSpec(f"unknown wavelet mode {mode!r}")
    if max_level < 1:
        raise DecompositionTooDeep(f"max_level must be >= 1, got {max_level}")
    approx = np.asarray(x, dtype=float)
    details = {}
    lengths = []
    for level in range(1, max_level + 1):
        if len(approx) < _FILTER_LEN:
            raise DecompositionTooDeep(
                f"level {level} input has {len(approx)} samples, fewer than the filter support"
            )
        lengths.append(len(approx))
        approx, details[level] = _analysis_step(approx, mode)
    return WaveletDecomposition(details, approx, mode, lengths)


def idwt_db3(dec):
    """Invert :func:`dwt_db3`, returning a signal of the original length."""
    approx = dec.approximation
    for level in range(dec.max_level, 0, -1):
        detail = dec.details[level]
        if len(approx) == len(detail) + 1:
            approx = approx[:-1]
        approx = _synthesis_step(approx, detail, dec.mode, dec.lengths[level - 1])
    return approx


def level_band(level, rate_hz):
    """Nominal (low, high) frequency band of a detail level."""
    return rate_hz / 2 ** (level + 1), rate_hz / 2 ** level


def psd(x, rate_hz, segment_s=4.0):
    """One-sided Welch PSD: Hann segments, 50 % overlap, density scaling."""
    x = np.asarray(x, dtype=float)
    nperseg = int(round(segment_s * rate_hz))
    if nperseg < 2:
        raise InvalidSpec(f"segment of {segment_s} s is shorter than two samples")
    if len(x) < nperseg:
        raise SignalTooShort(f"signal of {len(x)} samples is shorter than one {nperseg}-sample segment")
    freqs, power = signal.welch(
        x, fs=rate_hz, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
        detrend="constant", scaling="density", return_onesided=True,
    )
    return PsdEstimate(freqs, np.maximum(power, 0.0))
