"""Handcrafted time- and frequency-domain features over moving windows.

Eighteen named scalars are computed per window of in-cut data; together they
form the fixed-length input vector for the classical wear classifiers.
Degenerate windows (zero variance, zero spectral power) never produce
NaN/Inf: the affected features fall back to a documented neutral value and
the feature name is recorded in the vector's quality flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthError, ParameterError
from .signal import Trace
from .spectral import PowerSpectrum, WindowConfig, welch_psd

FEATURE_NAMES = (
    "mean",
    "rms",
    "sd",
    "crest_factor",
    "kurtosis",
    "skewness",
    "stat_mode",
    "stat_mode_sd",
    "p2p",
    "center_freq",
    "dominant_freq",
    "psd_energy",
    "spectral_entropy",
    "periodic_energy",
    "aperiodic_energy",
    "rel_aperiodic_energy",
    "autocorr",
    "higuchi_fd",
)

CSV_COLUMNS = FEATURE_NAMES + ("cycle_id", "t_start_s", "label")


@dataclass(frozen=True)
class ProcessFrequencies:
    """Harmonic families of the milling process.

    Bins within ``tolerance_hz`` of any harmonic m*f (m = 1..n_harmonics) of
    the spindle or tooth-pass frequency count as periodic energy.
    """

    spindle_hz: float
    tooth_pass_hz: float
    n_harmonics: int = 10
    tolerance_hz: float = 22.5

    def __post_init__(self):
        if self.spindle_hz <= 0 or self.tooth_pass_hz <= 0:
            raise ParameterError("process frequencies must be positive")
        if self.n_harmonics < 1 or self.tolerance_hz <= 0:
            raise ParameterError("n_harmonics and tolerance_hz must be positive")

    @classmethod
    def from_process(
        cls,
        spindle_rpm: float,
        flutes: int,
        sample_interval: float,
        frame_len: int,
        n_harmonics: int = 10,
        tolerance_bins: float = 1.5,
    ) -> "ProcessFrequencies":
        spindle_hz = spindle_rpm / 60.0
        bin_hz = 1.0 / (sample_interval * frame_len)
        return cls(
            spindle_hz=spindle_hz,
            tooth_pass_hz=spindle_hz * flutes,
            n_harmonics=n_harmonics,
            tolerance_hz=tolerance_bins * bin_hz,
        )

    def harmonics(self) -> np.ndarray:
        m = np.arange(1, self.n_harmonics + 1, dtype=np.float64)
        return np.concatenate([m * self.spindle_hz, m * self.tooth_pass_hz])


@dataclass(frozen=True)
class FeatureWindowConfig:
    """Moving-window layout and per-feature parameters for extraction."""

    window_len: int = 8192
    hop: int = 4096
    mode_bins: int = 64
    autocorr_lag: int = 20
    higuchi_kmax: int = 16

    def __post_init__(self):
        if self.higuchi_kmax < 2:
            raise ParameterError("higuchi_kmax must be >= 2")
        if self.window_len < 4 * self.higuchi_kmax:
            raise ParameterError(
                f"window_len must be >= 4*higuchi_kmax, got {self.window_len}"
            )
        if self.hop < 1:
            raise ParameterError("hop must be >= 1")
        if self.mode_bins < 2:
            raise ParameterError("mode_bins must be >= 2")
        if not (1 <= self.autocorr_lag < self.window_len):
            raise ParameterError(
                f"need 1 <= autocorr_lag < window_len, got {self.autocorr_lag}"
            )


@dataclass(frozen=True)
class FeatureVector:
    """One window's 18 features plus provenance and quality flags."""

    values: dict[str, float]
    cycle_id: str = ""
    t_start_s: float = 0.0
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        missing = set(FEATURE_NAMES) - set(self.values)
        if missing:
            raise ParameterError(f"feature vector missing {sorted(missing)}")

    def as_array(self) -> np.ndarray:
        return np.array([self.values[name] for name in FEATURE_NAMES])


# ---------------------------------------------------------------------------
# Individual feature groups
# ---------------------------------------------------------------------------


def time_features(window: np.ndarray) -> tuple[dict[str, float], list[str]]:
    """Mean, RMS, SD, crest factor, kurtosis, skewness and peak-to-peak.

    Moments follow the usual conventions: SD uses 1/(N-1), kurtosis and
    skewness average the SD-normalized deviations with 1/N (kurtosis of a
    sine is 1.5, not excess kurtosis).
    """
    x = np.asarray(window, dtype=np.float64)
    if len(x) < 2:
        raise LengthError("time features need at least 2 samples")
    flags: list[str] = []
    mean = float(x.mean())
    rms = float(np.sqrt(np.mean(x * x)))
    sd = float(x.std(ddof=1))
    p2p = float(x.max() - x.min())
    if rms > 0:
        crest = float(np.abs(x).max() / rms)
    else:
        crest = 0.0
        flags.append("crest_factor")
    if sd > 0:
        z = (x - mean) / sd
        kurtosis = float(np.mean(z**4))
        skewness = float(np.mean(z**3))
    else:
        kurtosis = 0.0
        skewness = 0.0
        flags.extend(["kurtosis", "skewness"])
    return (
        {
            "mean": mean,
            "rms": rms,
            "sd": sd,
            "crest_factor": crest,
            "kurtosis": kurtosis,
            "skewness": skewness,
            "p2p": p2p,
        },
        flags,
    )


def mode_features(window: np.ndarray, mode_bins: int) -> tuple[float, float]:
    """Histogram-based statistical mode and the SD of samples in the modal bin.

    Amplitudes are continuous, so the mode is discretized over ``mode_bins``
    equal-width bins spanning [min, max]; ties pick the lowest bin and the
    mode is reported as that bin's center.
    """
    x = np.asarray(window, dtype=np.float64)
    if mode_bins < 2:
        raise ParameterError("mode_bins must be >= 2")
    if len(x) < mode_bins:
        raise LengthError(f"window of {len(x)} too short for {mode_bins} mode bins")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo, 0.0
    edges = np.linspace(lo, hi, mode_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    best = int(np.argmax(counts))  # argmax takes the first (lowest) bin on ties
    members_idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, mode_bins - 1)
    members = x[members_idx == best]
    stat_mode = float(0.5 * (edges[best] + edges[best + 1]))
    stat_mode_sd = float(members.std(ddof=0)) if len(members) else 0.0
    return stat_mode, stat_mode_sd


def freq_features(
    psd: PowerSpectrum, procfreq: ProcessFrequencies
) -> tuple[dict[str, float], list[str]]:
    """Spectral features from a PSD: centroid, dominant bin, energy split.

    Periodic energy sums the bins inside the union of harmonic bands (no
    double counting where spindle and tooth-pass bands overlap); aperiodic
    is the remainder, and the relative share is aperiodic / total.
    """
    bins = np.asarray(psd.bins, dtype=np.float64)
    freqs = psd.freqs
    flags: list[str] = []
    total = float(bins.sum())
    dominant = float(freqs[int(np.argmax(bins))])
    psd_energy = float(np.mean(bins * bins))

    harmonic = procfreq.harmonics()
    in_band = (
        np.abs(freqs[:, None] - harmonic[None, :]) <= procfreq.tolerance_hz
    ).any(axis=1)
    periodic = float(bins[in_band].sum())
    aperiodic = total - periodic

    if total > 0:
        center = float((freqs * bins).sum() / total)
        p = bins / total
        nz = p > 0
        entropy = float(-(p[nz] * np.log2(p[nz])).sum())
        rel_aperiodic = aperiodic / total
    else:
        center = 0.0
        entropy = 0.0
        rel_aperiodic = 0.0
        flags.extend(["center_freq", "spectral_entropy", "rel_aperiodic_energy"])
    return (
        {
            "center_freq": center,
            "dominant_freq": dominant,
            "psd_energy": psd_energy,
            "spectral_entropy": entropy,
            "periodic_energy": periodic,
            "aperiodic_energy": aperiodic,
            "rel_aperiodic_energy": rel_aperiodic,
        },
        flags,
    )


def autocorr(window: np.ndarray, lag: int) -> tuple[float, bool]:
    """Mean-removed, variance-normalized autocorrelation at one lag.

    Returns (value, flagged); a zero-variance window yields (0.0, True).
    """
    x = np.asarray(window, dtype=np.float64)
    if not (1 <= lag < len(x)):
        raise ParameterError(f"need 1 <= lag < window length, got lag={lag}")
    d = x - x.mean()
    den = float((d * d).sum())
    if den == 0:
        return 0.0, True
    num = float((d[:-lag] * d[lag:]).sum())
    return num / den, False


def higuchi_fd(window: np.ndarray, kmax: int) -> tuple[float, bool]:
    """Higuchi fractal dimension of a window.

    Builds the k-decimated curve lengths L(k) for k = 1..kmax (averaged over
    the k start offsets) and regresses log L(k) on log(1/k).  Between 1 for
    a smooth curve and 2 for noise.  Returns (value, flagged); a constant
    window has zero curve length and is flagged with the line value 1.0.
    """
    x = np.asarray(window, dtype=np.float64)
    n = len(x)
    if kmax < 2:
        raise ParameterError("kmax must be >= 2")
    if n < 4 * kmax:
        raise LengthError(f"window of {n} too short for kmax={kmax}")
    log_k = []
    log_l = []
    for k in range(1, kmax + 1):
        lengths = []
        for m in range(k):
            sub = x[m::k]
            n_i = len(sub) - 1
            if n_i < 1:
                continue
            dist = np.abs(np.diff(sub)).sum()
            lengths.append(dist * (n - 1) / (n_i * k) / k)
        lk = float(np.mean(lengths))
        if lk > 0:
            log_k.append(np.log(k))
            log_l.append(np.log(lk))
    if len(log_k) < 2:
        return 1.0, True
    slope = np.polyfit(log_k, log_l, 1)[0]
    return float(-slope), False


# ---------------------------------------------------------------------------
# Window extraction
# ---------------------------------------------------------------------------


def compute_features(
    window: np.ndarray,
    psd: PowerSpectrum,
    cfg: FeatureWindowConfig,
    procfreq: ProcessFrequencies,
    cycle_id: str = "",
    t_start_s: float = 0.0,
) -> FeatureVector:
    """Assemble the full 18-feature vector for one window and its PSD."""
    values, flags = time_features(window)
    stat_mode, stat_mode_sd = mode_features(window, cfg.mode_bins)
    values["stat_mode"] = stat_mode
    values["stat_mode_sd"] = stat_mode_sd
    fvalues, fflags = freq_features(psd, procfreq)
    values.update(fvalues)
    flags.extend(fflags)
    ac, ac_flag = autocorr(window, cfg.autocorr_lag)
    values["autocorr"] = ac
    if ac_flag:
        flags.append("autocorr")
    fd, fd_flag = higuchi_fd(window, cfg.higuchi_kmax)
    values["higuchi_fd"] = fd
    if fd_flag:
        flags.append("higuchi_fd")
    return FeatureVector(
        values=values, cycle_id=cycle_id, t_start_s=t_start_s, flags=tuple(flags)
    )


def extract(
    segment: Trace,
    cfg: FeatureWindowConfig,
    wcfg: WindowConfig,
    procfreq: ProcessFrequencies,
    cycle_id: str = "",
    t_offset_s: float = 0.0,
) -> list[FeatureVector]:
    """Extract feature vectors over a moving window across one segment.

    ``t_offset_s`` places the segment on its parent recording's time axis so
    window provenance refers to absolute recording time.  A window that
    degenerates (constant data, empty spectrum) is kept with quality flags;
    one bad window never aborts the batch.
    """
    if cfg.window_len < wcfg.frame_len:
        raise ParameterError(
            f"feature window ({cfg.window_len}) must cover at least one "
            f"spectral frame ({wcfg.frame_len})"
        )
    x = segment.samples
    if len(x) < cfg.window_len:
        raise LengthError(
            f"segment of {len(x)} samples shorter than feature window "
            f"{cfg.window_len}"
        )
    out = []
    for start in range(0, len(x) - cfg.window_len + 1, cfg.hop):
        window = x[start : start + cfg.window_len]
        wtrace = Trace(
            samples=window,
            sample_interval=segment.sample_interval,
            unit=segment.unit,
            source_id=segment.source_id,
        )
        psd = welch_psd(wtrace, wcfg)
        out.append(
            compute_features(
                window,
                psd,
                cfg,
                procfreq,
                cycle_id=cycle_id,
                t_start_s=t_offset_s + start * segment.sample_interval,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Feature CSV format
# ---------------------------------------------------------------------------


def write_features_csv(
    vectors: list[FeatureVector],
    labels: list[int] | None,
    path: str | Path,
) -> Path:
    """Write feature vectors in the canonical column order.

    ``labels`` supplies the tool state per vector (0/1); pass None for
    unlabeled extraction, which writes -1.
    """
    path = Path(path)
    if labels is not None and len(labels) != len(vectors):
        raise ParameterError("labels length must match vectors")
    lines = [",".join(CSV_COLUMNS)]
    for i, vec in enumerate(vectors):
        label = -1 if labels is None else int(labels[i])
        fields = [repr(float(vec.values[name])) for name in FEATURE_NAMES]
        fields.extend([vec.cycle_id, repr(float(vec.t_start_s)), str(label)])
        lines.append(",".join(fields))
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write feature CSV to {path}: {exc}") from exc
    return path


def read_features_csv(path: str | Path) -> tuple[list[FeatureVector], list[int]]:
    """Read a feature CSV back into vectors and labels."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read feature CSV {path}: {exc}") from exc
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise FormatError(
            f"{path}: header does not match the canonical feature columns"
        )
    vectors: list[FeatureVector] = []
    labels: list[int] = []
    n_feat = len(FEATURE_NAMES)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise FormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
        try:
            values = {
                name: float(parts[i]) for i, name in enumerate(FEATURE_NAMES)
            }
            t_start = float(parts[n_feat + 1])
            label = int(parts[n_feat + 2])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad value: {exc}") from exc
        vectors.append(
            FeatureVector(values=values, cycle_id=parts[n_feat], t_start_s=t_start)
        )
        labels.append(label)
    return vectors, labels
