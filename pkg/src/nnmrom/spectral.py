"""Spectral and statistical diagnostics: FIR design, Welch spectra, multiple coherence,
correlation matrices and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import DimensionMismatch, InvalidParams, SeriesTooShort, SingularInputSpectrum, ZeroVariance
from .series import MultiChannelSeries

DEFAULT_SEGMENT = 4096
DEFAULT_OVERLAP = 0.5
DEFAULT_WINDOW = "hann"
POWER_FLOOR = 1e-12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class FirFilter:
    coefficients: np.ndarray
    fs: float
    cutoff_hz: float

    def __len__(self):
        return len(self.coefficients)

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        _, h = scipy.signal.freqz(self.coefficients, worN=np.asarray(freqs_hz, dtype=float), fs=self.fs)
        return h


@dataclass(frozen=True)
class SpectralEstimate:
    frequencies: np.ndarray
    values: np.ndarray
    segment_length: int
    overlap: float
    window: str
    valid: np.ndarray | None = None

    def band_mean(self, f_lo: float, f_hi: float) -> float:
        """Mean of valid values with ``f_lo <= f <= f_hi``."""
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        if self.valid is not None:
            sel &= self.valid
        return float(np.mean(np.real(self.values[sel])))

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = [self.frequencies, np.real(self.values)]
        header = "freq_hz,value"
        if self.valid is not None:
            cols.append(self.valid.astype(int))
            header += ",valid"
        np.savetxt(path, np.column_stack(cols), fmt="%.12e", delimiter=",", header=header, comments="")
        return path


def design_lowpass(cutoff_hz: float, fs: float, n_taps: int = 101) -> FirFilter:
    """Hamming windowed-sinc low-pass with unit DC gain."""
    if not 0 < cutoff_hz < fs / 2:
        raise InvalidParams(f"cutoff {cutoff_hz} Hz must lie in (0, {fs / 2})")
    if n_taps < 3 or n_taps % 2 == 0:
        raise InvalidParams("n_taps must be odd and >= 3")
    h = scipy.signal.firwin(n_taps, cutoff_hz, window="hamming", fs=fs)
    h = h / h.sum()
    return FirFilter(h, float(fs), float(cutoff_hz))


def filtfilt(fir: FirFilter, x) -> np.ndarray:
    """Zero-phase filtering along axis 0; output has the input's length."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] <= 3 * len(fir):
        raise SeriesTooShort(f"need more than {3 * len(fir)} samples, got {x.shape[0]}")
    return scipy.signal.filtfilt(fir.coefficients, [1.0], x, axis=0)


def _check_welch(n: int, segment: int, overlap: float):
    if n < segment:
        raise SeriesTooShort(f"series of {n} samples shorter than segment {segment}")
    if not 0 <= overlap < 1:
        raise InvalidParams("overlap must lie in [0, 1)")


def welch_spectra(x, y, fs: float, segment: int = DEFAULT_SEGMENT, overlap: float = DEFAULT_OVERLAP,
                  window: str = DEFAULT_WINDOW) -> tuple[SpectralEstimate, SpectralEstimate, SpectralEstimate]:
    """Welch estimates ``(S_xx, S_yy, S_xy)``; auto spectra real, cross spectrum complex.

    ``S_xy = E[conj(X) Y]``, so ``S_yx = conj(S_xy)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch("x and y must have equal length")
    _check_welch(len(x), segment, overlap)
    kw = dict(fs=fs, window=window, nperseg=segment, noverlap=int(overlap * segment), detrend="constant")
    f, sxx = scipy.signal.welch(x, **kw)
    _, syy = scipy.signal.welch(y, **kw)
    _, sxy = scipy.signal.csd(x, y, **kw)
    make = lambda v: SpectralEstimate(f, v, segment, overlap, window)
    return make(sxx), make(syy), make(sxy)


def n_segments(n: int, segment: int, overlap: float) -> int:
    step = segment - int(overlap * segment)
    return 1 + (n - segment) // step


def ordinary_coherence(x, y, fs: float, **welch) -> SpectralEstimate:
    sxx, syy, sxy = welch_spectra(x, y, fs, **welch)
    denom = sxx.values * syy.values
    valid = denom > POWER_FLOOR * denom.max() if denom.max() > 0 else np.zeros_like(denom, bool)
    coh = np.zeros_like(denom)
    coh[valid] = np.abs(sxy.values[valid]) ** 2 / denom[valid]
    return SpectralEstimate(sxx.frequencies, np.clip(coh, 0, 1), sxx.segment_length, sxx.overlap, sxx.window, valid)


def multicoherence(inputs, output, fs: float, segment: int = DEFAULT_SEGMENT,
                   overlap: float = DEFAULT_OVERLAP, window: str = DEFAULT_WINDOW,
                   return_raw: bool = False):
    """Multiple coherence between several inputs (columns of ``inputs``) and one output.

    ``gamma2(f) = s(f)^H Sxx(f)^-1 s(f) / Syy(f)`` with ``s_j = E[conj(X_j) Y]``. Bins whose
    output power is below ``POWER_FLOOR * max`` or whose input matrix is ill conditioned are
    marked invalid. With ``return_raw`` the unclipped values are returned as well.
    """
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    y = np.asarray(output, dtype=np.float64).ravel()
    if u.shape[0] != y.shape[0]:
        raise DimensionMismatch("inputs and output must have equal length")
    _check_welch(len(y), segment, overlap)
    kw = dict(fs=fs, window=window, nperseg=segment, noverlap=int(overlap * segment), detrend="constant")
    m = u.shape[1]
    f, syy = scipy.signal.welch(y, **kw)
    sxx = np.empty((len(f), m, m), dtype=complex)
    for i in range(m):
        for j in range(i, m):
            _, s = scipy.signal.csd(u[:, i], u[:, j], **kw)
            sxx[:, i, j] = s
            sxx[:, j, i] = np.conj(s)
    s_xy = np.empty((len(f), m), dtype=complex)
    for i in range(m):
        _, s_xy[:, i] = scipy.signal.csd(u[:, i], y, **kw)

    valid = syy > POWER_FLOOR * syy.max() if syy.max() > 0 else np.zeros(len(f), bool)
    cond = np.linalg.cond(sxx)
    singular = ~np.isfinite(cond) | (cond > COND_LIMIT)
    valid &= ~singular
    if not valid.any() and singular.all():
        raise SingularInputSpectrum("input cross-spectral matrix singular at every bin")
    raw = np.zeros(len(f))
    if valid.any():
        sol = np.linalg.solve(sxx[valid], s_xy[valid][..., None])[..., 0]
        explained = np.real(np.einsum("fi,fi->f", np.conj(s_xy[valid]), sol))
        raw[valid] = explained / syy[valid]
    est = SpectralEstimate(f, np.clip(raw, 0.0, 1.0), segment, overlap, window, valid)
    return (est, raw) if return_raw else est


def correlation_matrix(series) -> np.ndarray:
    """Pearson correlation between channels (columns)."""
    x = series.values if isinstance(series, MultiChannelSeries) else np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidParams("need a 2-D array with at least two samples")
    xc = x - x.mean(axis=0)
    std = np.sqrt((xc ** 2).sum(axis=0))
    for ch in np.flatnonzero(std <= 0):
        raise ZeroVariance(int(ch))
    z = xc / std
    corr = z.T @ z
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def _values(a):
    return a.values if isinstance(a, MultiChannelSeries) else np.atleast_2d(np.asarray(a, dtype=np.float64).T).T


def mse(a, b) -> tuple[np.ndarray, float]:
    """Per-channel mean squared error and its mean over channels."""
    av, bv = _values(a), _values(b)
    if av.shape != bv.shape:
        raise DimensionMismatch(f"shapes {av.shape} and {bv.shape} differ")
    per = np.mean((av - bv) ** 2, axis=0)
    return per, float(per.mean())


def nmse(truth, pred, reference_var=None) -> tuple[np.ndarray, float]:
    """MSE normalised by the per-channel variance of ``truth`` (or ``reference_var``)."""
    per, _ = mse(truth, pred)
    var = np.var(_values(truth), axis=0) if reference_var is None else np.asarray(reference_var, dtype=float)
    out = per / np.where(var > 0, var, np.nan)
    return out, float(np.nanmean(out))
