"""Tool life cycles, leakage-free splits and evaluation artifacts.

A tool life cycle is the atomic unit of data: all windows from one tool,
new to worn.  Splits assign whole cycles to train or validation so no wear
pattern leaks across the boundary, and evaluation reports both binary
accuracy (after the temporal filter) and how far the predicted wear
transition lands from the true one.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classify
from .classify import ModelLike, ModelSpec, train_model  # noqa: F401  (re-export)
from .errors import DataError, FormatError, ParameterError
from .features import (
    FeatureVector,
    FeatureWindowConfig,
    ProcessFrequencies,
    extract,
)
from .signal import SegmentationParams, Trace, read_trace, segment
from .spectral import WindowConfig

log = logging.getLogger(__name__)


@dataclass
class ToolLifeCycle:
    """Time-ordered labeled feature windows of one tool, new to worn."""

    cycle_id: str
    machine_id: str
    vectors: list[FeatureVector]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.vectors):
            raise ParameterError("one label per feature vector required")
        if not np.isin(self.labels, (0, 1)).all():
            raise ParameterError("tool-state labels must be 0 or 1")
        if np.any(np.diff(self.labels) < 0):
            raise DataError(
                f"cycle {self.cycle_id!r}: ground-truth labels must be "
                "NotWorn* then Worn* (a Worn->NotWorn change starts a new cycle)"
            )

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def transition_index(self) -> int | None:
        """Index of the first Worn window, if the cycle contains a
        NotWorn -> Worn change."""
        worn = np.flatnonzero(self.labels == 1)
        if len(worn) == 0 or worn[0] == 0:
            return None
        return int(worn[0])

    def feature_matrix(self) -> np.ndarray:
        return np.stack([v.as_array() for v in self.vectors])


def stack_cycles(cycles: list[ToolLifeCycle]) -> tuple[np.ndarray, np.ndarray]:
    if not cycles:
        raise ParameterError("no cycles given")
    X = np.concatenate([c.feature_matrix() for c in cycles])
    y = np.concatenate([c.labels for c in cycles])
    return X, y


# ---------------------------------------------------------------------------
# Cycle-aware splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    train_fraction: float
    seed: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]


def split_by_cycles(
    cycles: list[ToolLifeCycle], train_fraction: float, seed: int
) -> SplitPlan:
    """Assign whole cycles to train/validation.

    Cycle ids are shuffled with the seed and the first round(fraction * n)
    go to training; the count is clamped so neither partition is empty.
    """
    if len(cycles) < 2:
        raise ParameterError("need at least 2 cycles to split")
    if not (0 < train_fraction < 1):
        raise ParameterError(
            f"train_fraction must be strictly between 0 and 1, got {train_fraction}"
        )
    ids = sorted(c.cycle_id for c in cycles)
    if len(set(ids)) != len(ids):
        raise ParameterError("cycle ids must be unique")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    n_train = min(max(n_train, 1), len(ids) - 1)
    return SplitPlan(
        train_fraction=train_fraction,
        seed=seed,
        train_ids=tuple(order[:n_train]),
        val_ids=tuple(order[n_train:]),
    )


def select_cycles(cycles: list[ToolLifeCycle], ids) -> list[ToolLifeCycle]:
    by_id = {c.cycle_id: c for c in cycles}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ParameterError(f"unknown cycle ids: {missing}")
    return [by_id[i] for i in ids]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRow:
    cycle_id: str
    t_s: float
    raw_label: int
    filtered_label: int
    true_label: int


@dataclass
class EvalReport:
    """Binary accuracy, confusion counts and per-cycle transition delays.

    Worn is the positive class; delays are signed window counts between the
    predicted and true NotWorn -> Worn transitions after filtering (negative
    means the model warned early), defined only where both exist.
    """

    accuracy: float
    tp: int
    tn: int
    fp: int
    fn: int
    delays: dict[str, int | None]
    rows: list[PredictionRow]

    @property
    def confusion(self) -> dict[str, int]:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion,
            "transition_delays": self.delays,
            "n_windows": self.tp + self.tn + self.fp + self.fn,
            "n_cycles": len(self.delays),
        }


def _predicted_transition(filtered: list[int]) -> int | None:
    for i, v in enumerate(filtered):
        if v == 1:
            return i
    return None


def evaluate(
    model: ModelLike, cycles: list[ToolLifeCycle], min_run: int = 3
) -> EvalReport:
    """Predict every window, filter per cycle, and score against the labels."""
    if not cycles:
        raise ParameterError("evaluate() needs at least one cycle")
    tp = tn = fp = fn = 0
    delays: dict[str, int | None] = {}
    rows: list[PredictionRow] = []
    for cycle in cycles:
        raw = classify.predict(model, cycle.feature_matrix())
        filtered = classify.filter_labels(raw, min_run)
        truth = cycle.labels
        for i, vec in enumerate(cycle.vectors):
            rows.append(
                PredictionRow(
                    cycle_id=cycle.cycle_id,
                    t_s=vec.t_start_s,
                    raw_label=int(raw[i]),
                    filtered_label=int(filtered[i]),
                    true_label=int(truth[i]),
                )
            )
        pred_pos = np.asarray(filtered) == 1
        true_pos = truth == 1
        tp += int(np.sum(pred_pos & true_pos))
        tn += int(np.sum(~pred_pos & ~true_pos))
        fp += int(np.sum(pred_pos & ~true_pos))
        fn += int(np.sum(~pred_pos & true_pos))
        true_t = cycle.transition_index
        pred_t = _predicted_transition(filtered)
        delays[cycle.cycle_id] = (
            pred_t - true_t if (true_t is not None and pred_t is not None) else None
        )
    total = tp + tn + fp + fn
    return EvalReport(
        accuracy=(tp + tn) / total,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
        delays=delays,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Split sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    model: str
    train_fraction: float
    seed: int
    accuracy: float  # NaN marks a failed cell


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def grid(self) -> dict[tuple[str, float], float]:
        """Mean accuracy per (model, fraction), ignoring failed cells."""
        cells: dict[tuple[str, float], list[float]] = {}
        for row in self.rows:
            cells.setdefault((row.model, row.train_fraction), []).append(row.accuracy)
        out = {}
        for key, accs in cells.items():
            ok = [a for a in accs if not math.isnan(a)]
            out[key] = float(np.mean(ok)) if ok else float("nan")
        return out


def _sweep_cell(args) -> SweepRow:
    spec, fraction, seed, cycles, eval_cycles, min_run = args
    try:
        plan = split_by_cycles(cycles, fraction, seed)
        X, y = stack_cycles(select_cycles(cycles, plan.train_ids))
        model = train_model(spec, X, y, seed=seed)
        val = (
            eval_cycles
            if eval_cycles is not None
            else select_cycles(cycles, plan.val_ids)
        )
        report = evaluate(model, val, min_run=min_run)
        accuracy = report.accuracy
    except Exception as exc:  # cell failures must not abort the sweep
        log.warning(
            "sweep cell (%s, %.2f, seed %d) failed: %s", spec.kind, fraction, seed, exc
        )
        accuracy = float("nan")
    return SweepRow(
        model=spec.kind, train_fraction=fraction, seed=seed, accuracy=accuracy
    )


def sweep(
    specs: list[ModelSpec],
    cycles: list[ToolLifeCycle],
    fractions: list[float],
    seeds: list[int],
    min_run: int = 3,
    eval_cycles: list[ToolLifeCycle] | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Train/evaluate every (model, fraction, seed) cell.

    The same seed serves split and trainer, so a repetition shares its
    splits across models and fractions.  When ``eval_cycles`` is given
    (cross-machine experiments) every cell evaluates on those cycles instead
    of the held-out partition.  Failed cells record NaN accuracy.
    """
    tasks = [
        (spec, fraction, seed, cycles, eval_cycles, min_run)
        for spec in specs
        for fraction in fractions
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(t) for t in tasks]
    return SweepResult(rows=rows)


# ---------------------------------------------------------------------------
# File formats: manifest, labels, reports
# ---------------------------------------------------------------------------

_MANIFEST_FORMAT = "millwear-dataset"


@dataclass(frozen=True)
class CycleEntry:
    cycle_id: str
    trace_path: Path
    labels_path: Path
    true_segments_path: Path | None = None
    wear_transition: float | None = None


@dataclass(frozen=True)
class Manifest:
    machine_id: str
    sample_interval: float
    spindle_rpm: float
    flutes: int
    cycles: tuple[CycleEntry, ...]


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    path = Path(path)
    doc = {
        "format": _MANIFEST_FORMAT,
        "version": 1,
        "machine_id": manifest.machine_id,
        "sample_interval": manifest.sample_interval,
        "spindle_rpm": manifest.spindle_rpm,
        "flutes": manifest.flutes,
        "cycles": [
            {
                "cycle_id": c.cycle_id,
                "trace": c.trace_path.name,
                "labels": c.labels_path.name,
                "true_segments": (
                    c.true_segments_path.name if c.true_segments_path else None
                ),
                "wear_transition": c.wear_transition,
            }
            for c in manifest.cycles
        ],
    }
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write manifest to {path}: {exc}") from exc
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if doc.get("format") != _MANIFEST_FORMAT:
        raise FormatError(f"{path} is not a dataset manifest")
    base = path.parent
    cycles = []
    for c in doc["cycles"]:
        cycles.append(
            CycleEntry(
                cycle_id=str(c["cycle_id"]),
                trace_path=base / c["trace"],
                labels_path=base / c["labels"],
                true_segments_path=(
                    base / c["true_segments"] if c.get("true_segments") else None
                ),
                wear_transition=c.get("wear_transition"),
            )
        )
    return Manifest(
        machine_id=str(doc.get("machine_id", "")),
        sample_interval=float(doc["sample_interval"]),
        spindle_rpm=float(doc.get("spindle_rpm", 0.0)),
        flutes=int(doc.get("flutes", 1)),
        cycles=tuple(cycles),
    )


def write_labels_csv(rows: list[tuple[float, int]], path: str | Path) -> Path:
    """Write a piecewise-constant tool-state series as ``t_start_s,tool_state``."""
    path = Path(path)
    lines = ["t_start_s,tool_state"]
    lines.extend(f"{float(t)!r},{int(state)}" for t, state in rows)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write labels CSV to {path}: {exc}") from exc
    return path


def read_labels_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read labels CSV {path}: {exc}") from exc
    if not lines or lines[0] != "t_start_s,tool_state":
        raise FormatError(f"{path}: expected header 't_start_s,tool_state'")
    t, state = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            t_s, s = line.split(",")
            t.append(float(t_s))
            state.append(int(s))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad label row {line!r}") from exc
    times = np.array(t)
    if np.any(np.diff(times) <= 0):
        raise FormatError(f"{path}: label times must be strictly increasing")
    return times, np.array(state, dtype=np.int64)


def label_at(times: np.ndarray, states: np.ndarray, t: float) -> int:
    """Tool state at time t: the state of the last row starting at or before t."""
    i = int(np.searchsorted(times, t, side="right")) - 1
    return int(states[max(i, 0)])


# ---------------------------------------------------------------------------
# Manifest -> labeled cycles (segmentation + feature extraction)
# ---------------------------------------------------------------------------


def build_cycles(
    manifest: Manifest,
    seg_params: SegmentationParams,
    fcfg: FeatureWindowConfig,
    wcfg: WindowConfig,
    procfreq: ProcessFrequencies,
    stats: dict | None = None,
) -> list[ToolLifeCycle]:
    """Segment each cycle's trace and extract labeled feature windows.

    Detected segments shorter than one feature window are skipped with a
    warning; window labels come from the cycle's tool-state series at the
    window start time.  Pass a dict as ``stats`` to receive a
    ``skipped_segments`` count.
    """
    skipped = 0
    cycles = []
    for entry in manifest.cycles:
        trace = read_trace(entry.trace_path)
        times, states = read_labels_csv(entry.labels_path)
        vectors: list[FeatureVector] = []
        for seg in segment(trace, seg_params):
            if seg.end - seg.start < fcfg.window_len:
                log.warning(
                    "cycle %s: segment [%d, %d) shorter than the feature window; skipped",
                    entry.cycle_id,
                    seg.start,
                    seg.end,
                )
                skipped += 1
                continue
            sub = Trace(
                samples=trace.samples[seg.start : seg.end],
                sample_interval=trace.sample_interval,
                unit=trace.unit,
                source_id=trace.source_id,
            )
            vectors.extend(
                extract(
                    sub,
                    fcfg,
                    wcfg,
                    procfreq,
                    cycle_id=entry.cycle_id,
                    t_offset_s=seg.start * trace.sample_interval,
                )
            )
        labels = [label_at(times, states, v.t_start_s) for v in vectors]
        cycles.append(
            ToolLifeCycle(
                cycle_id=entry.cycle_id,
                machine_id=manifest.machine_id,
                vectors=vectors,
                labels=np.array(labels, dtype=np.int64),
            )
        )
    if stats is not None:
        stats["skipped_segments"] = skipped
    return cycles


def cycles_from_features(
    vectors: list[FeatureVector], labels: list[int], machine_id: str = ""
) -> list[ToolLifeCycle]:
    """Group feature-CSV rows into cycles, preserving first-appearance order."""
    grouped: dict[str, tuple[list[FeatureVector], list[int]]] = {}
    order: list[str] = []
    for vec, label in zip(vectors, labels):
        if label not in (0, 1):
            raise DataError(
                f"cycle {vec.cycle_id!r}: window at t={vec.t_start_s} is unlabeled"
            )
        if vec.cycle_id not in grouped:
            grouped[vec.cycle_id] = ([], [])
            order.append(vec.cycle_id)
        grouped[vec.cycle_id][0].append(vec)
        grouped[vec.cycle_id][1].append(label)
    return [
        ToolLifeCycle(
            cycle_id=cid,
            machine_id=machine_id,
            vectors=grouped[cid][0],
            labels=np.array(grouped[cid][1], dtype=np.int64),
        )
        for cid in order
    ]


# ---------------------------------------------------------------------------
# Report CSVs
# ---------------------------------------------------------------------------


def write_predictions_csv(rows: list[PredictionRow], path: str | Path) -> Path:
    path = Path(path)
    lines = ["cycle_id,t_s,raw_label,filtered_label,true_label"]
    lines.extend(
        f"{r.cycle_id},{float(r.t_s)!r},{r.raw_label},{r.filtered_label},{r.true_label}"
        for r in rows
    )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write predictions CSV to {path}: {exc}") from exc
    return path


def write_delays_csv(delays: dict[str, int | None], path: str | Path) -> Path:
    path = Path(path)
    lines = ["cycle_id,transition_delay_windows"]
    lines.extend(
        f"{cid},{'' if d is None else d}" for cid, d in sorted(delays.items())
    )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write delays CSV to {path}: {exc}") from exc
    return path


def write_heatmap_csv(result: SweepResult, path: str | Path) -> Path:
    path = Path(path)
    lines = ["model,train_fraction,seed,accuracy"]
    lines.extend(
        f"{r.model},{float(r.train_fraction)!r},{r.seed},{float(r.accuracy)!r}"
        for r in result.rows
    )
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise FormatError(f"cannot write heatmap CSV to {path}: {exc}") from exc
    return path
