"""Fourier machinery: windowed FFT, Welch-averaged PSDs and spectrograms.

All spectra are one-sided power representations normalized so that the bins
of a PSD sum to the mean-square value of the analyzed signal (Parseval-
consistent).  The frequency axis depends only on the window configuration
and the sample interval, never on signal content, so every recording maps
into the same bins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthError, ParameterError
from .signal import Trace

WINDOW_FUNCTIONS = ("rectangular", "hann", "hamming")


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class WindowConfig:
    """Framing and Welch-averaging parameters for spectral estimation.

    ``frame_len`` sets the frequency resolution (power of two), ``hop`` the
    stride between spectrogram columns.  Each column is the average of
    ``welch_subframes`` windowed periodograms taken ``welch_overlap`` apart
    inside the column's block.
    """

    frame_len: int = 1024
    hop: int = 512
    window_fn: str = "hann"
    welch_subframes: int = 4
    welch_overlap: float = 0.5

    def __post_init__(self):
        if not _is_pow2(self.frame_len):
            raise ParameterError(
                f"frame_len must be a power of two >= 2, got {self.frame_len}"
            )
        if not (0 < self.hop <= self.frame_len):
            raise ParameterError(f"need 0 < hop <= frame_len, got hop={self.hop}")
        if self.window_fn not in WINDOW_FUNCTIONS:
            raise ParameterError(
                f"window_fn must be one of {WINDOW_FUNCTIONS}, got {self.window_fn!r}"
            )
        if self.welch_subframes < 1:
            raise ParameterError("welch_subframes must be >= 1")
        if not (0 <= self.welch_overlap < 1):
            raise ParameterError("welch_overlap must be in [0, 1)")

    @property
    def subframe_step(self) -> int:
        step = int(round(self.frame_len * (1.0 - self.welch_overlap)))
        return max(step, 1)

    @property
    def block_len(self) -> int:
        """Samples consumed by one spectrogram column."""
        return self.frame_len + (self.welch_subframes - 1) * self.subframe_step

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1


@dataclass(frozen=True)
class PowerSpectrum:
    """One-sided power spectrum: bins[k] is the power near k * bin_hz."""

    bins: np.ndarray
    bin_hz: float

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    @property
    def total_power(self) -> float:
        return float(self.bins.sum())


@dataclass(frozen=True)
class Spectrogram:
    """Time-frequency grid: grid[f, t] with a shared frequency axis."""

    grid: np.ndarray  # shape (n_bins, n_columns)
    bin_hz: float
    column_interval: float

    @property
    def n_bins(self) -> int:
        return self.grid.shape[0]

    @property
    def n_columns(self) -> int:
        return self.grid.shape[1]

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_hz

    def column(self, t: int) -> PowerSpectrum:
        return PowerSpectrum(bins=self.grid[:, t], bin_hz=self.bin_hz)


def window_samples(window_fn: str, m: int) -> np.ndarray:
    """Periodic analysis window of length m."""
    n = np.arange(m)
    if window_fn == "rectangular":
        return np.ones(m)
    if window_fn == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / m)
    if window_fn == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / m)
    raise ParameterError(f"unknown window function {window_fn!r}")


def fft_real(frame: np.ndarray) -> np.ndarray:
    """One-sided DFT (bins 0..M/2) of a real power-of-two-length frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 1 or not _is_pow2(len(frame)):
        raise LengthError(
            f"frame length must be a power of two >= 2, got {frame.shape}"
        )
    return np.fft.rfft(frame)


def _periodograms(frames: np.ndarray, window: np.ndarray) -> np.ndarray:
    """One-sided, window-power-normalized periodograms of stacked frames.

    Normalized so the one-sided bins of one periodogram sum to the
    mean-square value of the frame (for signals stationary across it).
    """
    m = frames.shape[-1]
    spectra = np.fft.rfft(frames * window, axis=-1)
    power = np.abs(spectra) ** 2 / (m * np.dot(window, window))
    power[..., 1 : (m // 2)] *= 2.0  # fold negative frequencies; DC/Nyquist stay
    return power


def _frame_offsets(n: int, frame_len: int, step: int) -> np.ndarray:
    return np.arange(0, n - frame_len + 1, step)


def welch_psd(segment: Trace, cfg: WindowConfig) -> PowerSpectrum:
    """Welch power spectral density over a whole segment.

    Averages window-normalized periodograms of all frames spanning the
    segment, spaced by the configured overlap.
    """
    x = segment.samples
    if len(x) < cfg.frame_len:
        raise LengthError(
            f"segment length {len(x)} shorter than frame_len {cfg.frame_len}"
        )
    offsets = _frame_offsets(len(x), cfg.frame_len, cfg.subframe_step)
    frames = np.stack([x[o : o + cfg.frame_len] for o in offsets])
    window = window_samples(cfg.window_fn, cfg.frame_len)
    bins = _periodograms(frames, window).mean(axis=0)
    return PowerSpectrum(bins=bins, bin_hz=segment.sample_rate / cfg.frame_len)


def stft(trace: Trace, cfg: WindowConfig) -> Spectrogram:
    """Welch-averaged short-time power spectrogram.

    Each column is the average of ``welch_subframes`` periodograms inside
    one block; columns advance by ``hop`` samples.  Trailing samples that do
    not fill a complete block are dropped so every column averages the same
    number of sub-frames.
    """
    x = trace.samples
    block = cfg.block_len
    if len(x) < block:
        raise LengthError(
            f"input length {len(x)} shorter than one block ({block} samples)"
        )
    window = window_samples(cfg.window_fn, cfg.frame_len)
    col_offsets = _frame_offsets(len(x), block, cfg.hop)
    sub_offsets = np.arange(cfg.welch_subframes) * cfg.subframe_step
    columns = np.empty((cfg.n_bins, len(col_offsets)))
    for c, co in enumerate(col_offsets):
        frames = np.stack([x[co + so : co + so + cfg.frame_len] for so in sub_offsets])
        columns[:, c] = _periodograms(frames, window).mean(axis=0)
    return Spectrogram(
        grid=columns,
        bin_hz=trace.sample_rate / cfg.frame_len,
        column_interval=cfg.hop * trace.sample_interval,
    )


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------

_TENSOR_FORMAT = "millwear-stft"


def export_stft_tensor(spec: Spectrogram, path: str | Path) -> Path:
    """Write a spectrogram as little-endian float32, frequency-major row order.

    A JSON sidecar next to the file records dims and axis scales; the
    round-trip through :func:`read_stft_tensor` is bit-exact.
    """
    if spec.n_columns == 0 or spec.n_bins == 0:
        raise ParameterError("cannot export an empty spectrogram")
    path = Path(path)
    data = np.ascontiguousarray(spec.grid, dtype="<f4")
    meta = {
        "format": _TENSOR_FORMAT,
        "version": 1,
        "dtype": "<f4",
        "layout": "freq_major",
        "n_bins": spec.n_bins,
        "n_columns": spec.n_columns,
        "bin_hz": spec.bin_hz,
        "column_interval": spec.column_interval,
    }
    try:
        path.write_bytes(data.tobytes(order="C"))
        path.with_name(path.name + ".json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise FormatError(f"cannot write STFT tensor to {path}: {exc}") from exc
    return path


def read_stft_tensor(path: str | Path) -> Spectrogram:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read STFT tensor {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt STFT sidecar {sidecar}: {exc}") from exc
    if meta.get("format") != _TENSOR_FORMAT:
        raise FormatError(f"{sidecar} is not an STFT tensor sidecar")
    n_bins, n_cols = int(meta["n_bins"]), int(meta["n_columns"])
    if len(raw) != 4 * n_bins * n_cols:
        raise FormatError(
            f"{path}: dims {n_bins}x{n_cols} need {4 * n_bins * n_cols} bytes, "
            f"file has {len(raw)}"
        )
    grid = np.frombuffer(raw, dtype="<f4").reshape(n_bins, n_cols).astype(np.float32)
    return Spectrogram(
        grid=grid,
        bin_hz=float(meta["bin_hz"]),
        column_interval=float(meta["column_interval"]),
    )


def write_psd_csv(psd: PowerSpectrum, path: str | Path) -> Path:
    path = Path(path)
    lines = ["freq_hz,power"]
    freqs = psd.freqs
    lines.extend(
        f"{float(freqs[i])!r},{float(psd.bins[i])!r}" for i in range(psd.n_bins)
    )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write PSD CSV to {path}: {exc}") from exc
    return path
