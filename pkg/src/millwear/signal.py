"""Raw acceleration traces and in-cut process segmentation.

A recording contains far more than cutting: spindle run-up, tool changes,
rapids between paths.  The functions here isolate the in-cut portions by
thresholding the sliding peak-to-peak envelope of the signal and applying a
hysteresis rule so that brief bursts or dropouts do not open or close
segments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import DataError, FormatError, LengthError, ParameterError

DEFAULT_SAMPLE_INTERVAL = 65e-6  # seconds per sample, ~15.38 kHz


@dataclass
class Trace:
    """A uniformly sampled acceleration recording.

    Treated as immutable after construction; all operations on traces are
    pure functions.
    """

    samples: np.ndarray
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL
    unit: str = "g"
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ParameterError("trace samples must be one-dimensional")
        if self.sample_interval <= 0:
            raise ParameterError(
                f"sample_interval must be positive, got {self.sample_interval}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) * self.sample_interval

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_interval


@dataclass(frozen=True)
class P2PSeries:
    """Sliding peak-to-peak magnitudes of a trace.

    ``values[j]`` is the peak-to-peak of ``samples[j : j + window_len]``;
    ``offset`` is the index of the first source step with a complete
    trailing window (``window_len - 1``).
    """

    values: np.ndarray
    window_len: int
    offset: int
    sample_interval: float


@dataclass(frozen=True)
class SegmentationParams:
    """Knobs for the peak-to-peak threshold segmentation.

    ``alpha0``/``alpha1`` bound the quietest slice of the sorted envelope
    used as the noise-floor estimate, ``alpha2`` scales it into the
    threshold.  ``min_above``/``min_below`` are hold durations in seconds:
    the envelope must stay on one side of the threshold at least that long
    before a segment opens or closes.
    """

    window_len: int = 256
    alpha0: float = 0.01
    alpha1: float = 0.03
    alpha2: float = 10.0
    min_above: float = 0.05
    min_below: float = 0.2

    def __post_init__(self):
        if not (0 <= self.alpha0 < self.alpha1 <= 1):
            raise ParameterError(
                f"need 0 <= alpha0 < alpha1 <= 1, got {self.alpha0}, {self.alpha1}"
            )
        if self.alpha2 <= 1:
            raise ParameterError(f"alpha2 must exceed 1, got {self.alpha2}")
        if self.window_len < 2:
            raise ParameterError(f"window_len must be >= 2, got {self.window_len}")
        if self.min_above < 0 or self.min_below < 0:
            raise ParameterError("hold durations must be non-negative")


@dataclass(frozen=True)
class Segment:
    """Half-open sample index range [start, end) of detected in-cut data."""

    start: int
    end: int
    parent: str = ""

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ParameterError(f"invalid segment bounds [{self.start}, {self.end})")

    def duration_s(self, sample_interval: float) -> float:
        return (self.end - self.start) * sample_interval


def _check_finite(trace: Trace) -> None:
    if len(trace) == 0:
        raise LengthError("trace is empty")
    if not np.isfinite(trace.samples).all():
        raise DataError(f"trace {trace.source_id!r} contains non-finite samples")


def peak_to_peak_series(trace: Trace, window_len: int) -> P2PSeries:
    """Sliding peak-to-peak envelope of a trace.

    Uses O(N) monotonic-deque sliding extrema (scipy's MINLIST/MAXLIST
    filters), not a per-window rescan, so long recordings stay cheap.
    """
    if window_len < 2:
        raise ParameterError(f"window_len must be >= 2, got {window_len}")
    _check_finite(trace)
    n = len(trace)
    if n < window_len:
        raise LengthError(f"trace length {n} shorter than window {window_len}")
    x = trace.samples
    # Filter output at position j + w//2 covers exactly samples[j : j + w],
    # so the valid (padding-free) leading-window extrema are a plain slice.
    lo = window_len // 2
    hi = lo + (n - window_len + 1)
    ptp = (
        maximum_filter1d(x, size=window_len)[lo:hi]
        - minimum_filter1d(x, size=window_len)[lo:hi]
    )
    return P2PSeries(
        values=ptp,
        window_len=window_len,
        offset=window_len - 1,
        sample_interval=trace.sample_interval,
    )


def compute_threshold(p2p: P2PSeries, params: SegmentationParams) -> float:
    """Threshold separating idle from in-cut envelope values.

    The envelope is sorted ascending and the mean of the slice between
    fractions alpha0 and alpha1 (the quietest few percent, i.e. the idle
    floor) is scaled by alpha2.  The mean is taken over the slice itself,
    not the full series length, so the threshold does not depend on how
    long the recording is.
    """
    n = len(p2p.values)
    lo = math.floor(params.alpha0 * n)
    hi = math.floor(params.alpha1 * n)
    if hi <= lo:
        raise ParameterError(
            f"alpha slice [{lo}, {hi}) is empty for series length {n}; "
            "record longer data or widen alpha0..alpha1"
        )
    quietest = np.sort(p2p.values)[lo:hi]
    return params.alpha2 * float(quietest.mean())


def _runs(mask: np.ndarray) -> list[tuple[int, int, bool]]:
    """Run-length encode a boolean array into (start, end, value) triples."""
    if len(mask) == 0:
        return []
    change = np.flatnonzero(mask[1:] != mask[:-1]) + 1
    bounds = np.concatenate(([0], change, [len(mask)]))
    return [
        (int(bounds[i]), int(bounds[i + 1]), bool(mask[bounds[i]]))
        for i in range(len(bounds) - 1)
    ]


def _hold_steps(seconds: float, sample_interval: float) -> int:
    return int(math.ceil(seconds / sample_interval - 1e-9))


def segment(trace: Trace, params: SegmentationParams) -> list[Segment]:
    """Detect in-cut segments of a trace.

    Hysteresis over the peak-to-peak envelope: dips below the threshold
    shorter than ``min_below`` do not close an open segment, and bursts
    above it shorter than ``min_above`` do not open one.  Segment starts
    are back-dated to the first sample of the opening run's window.
    Returns maximal, disjoint segments in time order; an all-idle trace
    yields an empty list.
    """
    p2p = peak_to_peak_series(trace, params.window_len)
    th = compute_threshold(p2p, params)
    above = p2p.values > th
    if not above.any():
        return []

    steps_above = _hold_steps(params.min_above, trace.sample_interval)
    steps_below = _hold_steps(params.min_below, trace.sample_interval)

    # Absorb short dips first (they must not close a segment), then drop
    # short bursts (they must not open one).
    runs = _runs(above)
    for start, end, value in runs:
        if not value and end - start < steps_below and start > 0 and end < len(above):
            above[start:end] = True
    for start, end, value in _runs(above):
        if value and end - start < steps_above:
            above[start:end] = False

    segments = []
    n = len(trace)
    for start, end, value in _runs(above):
        if value:
            # p2p step j covers samples[j : j + window_len]
            segments.append(
                Segment(
                    start=start,
                    end=min(end - 1 + params.window_len, n),
                    parent=trace.source_id,
                )
            )
    return segments


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_TRACE_FORMAT = "millwear-trace"


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_trace(trace: Trace, path: str | Path) -> Path:
    """Write a trace as headerless little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    data = trace.samples.astype("<f4")
    try:
        path.write_bytes(data.tobytes())
        meta = {
            "format": _TRACE_FORMAT,
            "version": 1,
            "dtype": "<f4",
            "n_samples": int(len(trace)),
            "sample_interval": trace.sample_interval,
            "unit": trace.unit,
            "source_id": trace.source_id,
        }
        _sidecar_path(path).write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise FormatError(f"cannot write trace to {path}: {exc}") from exc
    return path


def read_trace(path: str | Path) -> Trace:
    """Read a trace written by :func:`write_trace` (binary + sidecar)."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    try:
        meta = json.loads(sidecar.read_text())
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read trace {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"corrupt trace sidecar {sidecar}: {exc}") from exc
    if meta.get("format") != _TRACE_FORMAT:
        raise FormatError(f"{sidecar} is not a trace sidecar")
    n = int(meta["n_samples"])
    if len(raw) != 4 * n:
        raise FormatError(
            f"{path}: expected {4 * n} bytes for {n} float32 samples, got {len(raw)}"
        )
    samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return Trace(
        samples=samples,
        sample_interval=float(meta["sample_interval"]),
        unit=str(meta.get("unit", "g")),
        source_id=str(meta.get("source_id", path.stem)),
    )


def write_trace_csv(trace: Trace, path: str | Path) -> Path:
    """Write a trace as a single-column CSV with metadata comment lines."""
    path = Path(path)
    lines = [
        f"# sample_interval={trace.sample_interval!r}",
        f"# unit={trace.unit}",
        f"# source_id={trace.source_id}",
        "accel",
    ]
    lines.extend(repr(float(v)) for v in trace.samples)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write trace CSV to {path}: {exc}") from exc
    return path


def read_trace_csv(path: str | Path) -> Trace:
    """Read a single-column ``accel`` CSV with ``# key=value`` comments."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read trace CSV {path}: {exc}") from exc
    meta: dict[str, str] = {}
    values: list[float] = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
            continue
        if not header_seen:
            if line != "accel":
                raise FormatError(f"{path}:{lineno}: expected header 'accel'")
            header_seen = True
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad sample {line!r}") from exc
    if not header_seen:
        raise FormatError(f"{path}: missing 'accel' header row")
    if "sample_interval" not in meta:
        raise FormatError(f"{path}: missing '# sample_interval=...' comment")
    return Trace(
        samples=np.array(values, dtype=np.float64),
        sample_interval=float(meta["sample_interval"]),
        unit=meta.get("unit", "g"),
        source_id=meta.get("source_id", path.stem),
    )


def write_segments_csv(
    segments: list[Segment], sample_interval: float, path: str | Path
) -> Path:
    """Write segments as ``start_index,end_index,start_s,end_s`` rows."""
    path = Path(path)
    lines = ["start_index,end_index,start_s,end_s"]
    for seg in segments:
        lines.append(
            f"{seg.start},{seg.end},"
            f"{seg.start * sample_interval!r},{seg.end * sample_interval!r}"
        )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write segments CSV to {path}: {exc}") from exc
    return path


def read_segments_csv(path: str | Path) -> list[Segment]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read segments CSV {path}: {exc}") from exc
    if not lines or lines[0].split(",")[:2] != ["start_index", "end_index"]:
        raise FormatError(f"{path}: not a segments CSV")
    segments = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        segments.append(Segment(start=int(parts[0]), end=int(parts[1])))
    return segments
