"""Request handlers shared by the HTTP routes and the CLI.

Each handler maps a request model onto the core pipeline and returns a
response model.  Relative paths resolve against the MILLWEAR_DATA_DIR
environment variable when it is set, so a deployed service and a local CLI
can address the same data directory the same way.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np

from .. import __version__, classify, dataset, features, signal, spectral, synth
from ..errors import FormatError, ParameterError
from . import schemas

log = logging.getLogger(__name__)

DATA_DIR_ENV = "MILLWEAR_DATA_DIR"


def resolve_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and base:
        return Path(base) / p
    return p


def _seg_params(opts: schemas.SegmentationOptions) -> signal.SegmentationParams:
    return signal.SegmentationParams(
        window_len=opts.window_len,
        alpha0=opts.alpha0,
        alpha1=opts.alpha1,
        alpha2=opts.alpha2,
        min_above=opts.min_above,
        min_below=opts.min_below,
    )


def _window_cfg(opts: schemas.SpectralOptions) -> spectral.WindowConfig:
    return spectral.WindowConfig(
        frame_len=opts.frame_len,
        hop=opts.hop,
        window_fn=opts.window_fn,
        welch_subframes=opts.welch_subframes,
        welch_overlap=opts.welch_overlap,
    )


def _feature_cfg(opts: schemas.FeatureOptions) -> features.FeatureWindowConfig:
    return features.FeatureWindowConfig(
        window_len=opts.window_len,
        hop=opts.hop,
        mode_bins=opts.mode_bins,
        autocorr_lag=opts.autocorr_lag,
        higuchi_kmax=opts.higuchi_kmax,
    )


def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


def run_synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    cfg = synth.MillingConfig(
        spindle_rpm=req.spindle_rpm,
        flutes=req.flutes,
        sample_interval=req.sample_interval,
        idle_noise=req.idle_noise,
        process_noise=req.process_noise,
        noise_jitter=req.noise_jitter,
        wear_noise=req.wear_noise,
        wear_curve=req.wear_curve,
        wear_transition=req.wear_transition,
        label_noise=req.label_noise,
        machine_profile=req.profile,
        process_s=req.process_s,
        idle_s=req.idle_s,
        layout_jitter=req.layout_jitter,
    )
    manifest_path = synth.generate_dataset(
        cfg,
        n_cycles=req.cycles,
        seed=req.seed,
        out_dir=resolve_path(req.out_dir),
        duration_s=req.duration_s,
        transition_jitter=req.transition_jitter,
    )
    manifest = dataset.read_manifest(manifest_path)
    return schemas.SynthResponse(
        manifest_path=str(manifest_path),
        cycle_ids=[c.cycle_id for c in manifest.cycles],
    )


def _read_any_trace(path: Path) -> signal.Trace:
    if path.suffix.lower() == ".csv":
        return signal.read_trace_csv(path)
    return signal.read_trace(path)


def run_segment(req: schemas.SegmentRequest) -> schemas.SegmentResponse:
    trace = _read_any_trace(resolve_path(req.trace_path))
    segments = signal.segment(trace, _seg_params(req.segmentation))
    csv_path = None
    if req.out_path:
        csv_path = str(
            signal.write_segments_csv(
                segments, trace.sample_interval, resolve_path(req.out_path)
            )
        )
    dt = trace.sample_interval
    return schemas.SegmentResponse(
        segments=[
            schemas.SegmentInfo(
                start_index=s.start,
                end_index=s.end,
                start_s=s.start * dt,
                end_s=s.end * dt,
            )
            for s in segments
        ],
        csv_path=csv_path,
    )


def run_features(req: schemas.FeaturesRequest) -> schemas.FeaturesResponse:
    if (req.manifest_path is None) == (req.trace_path is None):
        raise ParameterError("provide exactly one of manifest_path or trace_path")
    seg_params = _seg_params(req.segmentation)
    wcfg = _window_cfg(req.spectral)
    fcfg = _feature_cfg(req.features)
    stft_paths: list[str] = []
    export_dir = resolve_path(req.export_stft_dir) if req.export_stft_dir else None
    if export_dir is not None:
        export_dir.mkdir(parents=True, exist_ok=True)

    def export_segments(trace: signal.Trace, cycle_id: str) -> None:
        for k, seg in enumerate(signal.segment(trace, seg_params)):
            if seg.end - seg.start < wcfg.block_len:
                continue
            sub = signal.Trace(
                samples=trace.samples[seg.start : seg.end],
                sample_interval=trace.sample_interval,
                unit=trace.unit,
                source_id=trace.source_id,
            )
            spec = spectral.stft(sub, wcfg)
            out = export_dir / f"{cycle_id}_seg{k:03d}.stft"
            spectral.export_stft_tensor(spec, out)
            stft_paths.append(str(out))

    if req.manifest_path is not None:
        manifest = dataset.read_manifest(resolve_path(req.manifest_path))
        procfreq = features.ProcessFrequencies.from_process(
            spindle_rpm=manifest.spindle_rpm or req.process.spindle_rpm,
            flutes=manifest.flutes or req.process.flutes,
            sample_interval=manifest.sample_interval,
            frame_len=wcfg.frame_len,
            n_harmonics=req.features.n_harmonics,
            tolerance_bins=req.features.tolerance_bins,
        )
        stats: dict = {}
        vectors: list[features.FeatureVector] = []
        labels: list[int] = []
        cycles = dataset.build_cycles(
            manifest, seg_params, fcfg, wcfg, procfreq, stats=stats
        )
        skipped = stats["skipped_segments"]
        for cycle in cycles:
            vectors.extend(cycle.vectors)
            labels.extend(int(v) for v in cycle.labels)
            if export_dir is not None:
                trace = signal.read_trace(
                    next(
                        e.trace_path
                        for e in manifest.cycles
                        if e.cycle_id == cycle.cycle_id
                    )
                )
                export_segments(trace, cycle.cycle_id)
        n_cycles = len(cycles)
        out = features.write_features_csv(vectors, labels, resolve_path(req.out_path))
    else:
        trace = _read_any_trace(resolve_path(req.trace_path))
        procfreq = features.ProcessFrequencies.from_process(
            spindle_rpm=req.process.spindle_rpm,
            flutes=req.process.flutes,
            sample_interval=trace.sample_interval,
            frame_len=wcfg.frame_len,
            n_harmonics=req.features.n_harmonics,
            tolerance_bins=req.features.tolerance_bins,
        )
        cycle_id = trace.source_id or Path(req.trace_path).stem
        vectors = []
        skipped = 0
        for seg in signal.segment(trace, seg_params):
            if seg.end - seg.start < fcfg.window_len:
                log.warning(
                    "segment [%d, %d) shorter than the feature window; skipped",
                    seg.start,
                    seg.end,
                )
                skipped += 1
                continue
            sub = signal.Trace(
                samples=trace.samples[seg.start : seg.end],
                sample_interval=trace.sample_interval,
                unit=trace.unit,
                source_id=trace.source_id,
            )
            vectors.extend(
                features.extract(
                    sub,
                    fcfg,
                    wcfg,
                    procfreq,
                    cycle_id=cycle_id,
                    t_offset_s=seg.start * trace.sample_interval,
                )
            )
        n_cycles = 1
        if export_dir is not None:
            export_segments(trace, cycle_id)
        out = features.write_features_csv(vectors, None, resolve_path(req.out_path))
    return schemas.FeaturesResponse(
        csv_path=str(out),
        n_windows=len(vectors),
        n_cycles=n_cycles,
        n_segments_skipped=skipped,
        stft_paths=stft_paths,
    )


def _load_cycles(features_path: Path) -> list[dataset.ToolLifeCycle]:
    vectors, labels = features.read_features_csv(features_path)
    return dataset.cycles_from_features(vectors, labels)


def run_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    cycles = _load_cycles(resolve_path(req.features_path))
    plan = dataset.split_by_cycles(cycles, req.train_fraction, req.seed)
    X, y = dataset.stack_cycles(dataset.select_cycles(cycles, plan.train_ids))
    spec = classify.ModelSpec(
        kind=req.model,
        C=req.C,
        gamma=req.gamma,
        min_samples_split=req.min_samples_split,
    )
    model = classify.train_model(spec, X, y, seed=req.seed)
    train_acc = float((classify.predict(model, X) == y).mean())
    model_path = classify.save_model(model, resolve_path(req.out_path))
    split = schemas.SplitInfo(
        train_fraction=plan.train_fraction,
        seed=plan.seed,
        train_cycles=list(plan.train_ids),
        val_cycles=list(plan.val_ids),
    )
    if req.split_out_path:
        resolve_path(req.split_out_path).write_text(
            json.dumps(
                {"format": "millwear-split", "version": 1, **split.model_dump()},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
    return schemas.TrainResponse(
        model_path=str(model_path), split=split, train_accuracy=train_acc
    )


def _read_split(path: Path) -> schemas.SplitInfo:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read split record {path}: {exc}") from exc
    if doc.get("format") != "millwear-split":
        raise FormatError(f"{path} is not a split record")
    doc.pop("format", None)
    doc.pop("version", None)
    return schemas.SplitInfo(**doc)


def run_eval(req: schemas.EvalRequest) -> schemas.EvalResponse:
    model = classify.load_model(resolve_path(req.model_path))
    cycles = _load_cycles(resolve_path(req.features_path))
    if req.cycle_ids is not None and req.split_path is not None:
        raise ParameterError("give either cycle_ids or split_path, not both")
    if req.cycle_ids is not None:
        cycles = dataset.select_cycles(cycles, req.cycle_ids)
    elif req.split_path is not None:
        split = _read_split(resolve_path(req.split_path))
        if req.partition not in ("val", "train"):
            raise ParameterError("partition must be 'val' or 'train'")
        ids = split.val_cycles if req.partition == "val" else split.train_cycles
        cycles = dataset.select_cycles(cycles, ids)
    report = dataset.evaluate(model, cycles, min_run=req.min_run)
    predictions_path = delays_path = summary_path = None
    if req.out_prefix:
        prefix = resolve_path(req.out_prefix)
        predictions_path = str(
            dataset.write_predictions_csv(report.rows, Path(f"{prefix}predictions.csv"))
        )
        delays_path = str(
            dataset.write_delays_csv(report.delays, Path(f"{prefix}delays.csv"))
        )
        summary_path = f"{prefix}summary.json"
        Path(summary_path).write_text(
            json.dumps(report.summary(), indent=2, sort_keys=True) + "\n"
        )
    return schemas.EvalResponse(
        accuracy=report.accuracy,
        confusion=report.confusion,
        transition_delays=report.delays,
        n_windows=len(report.rows),
        n_cycles=len(report.delays),
        predictions_path=predictions_path,
        delays_path=delays_path,
        summary_path=summary_path,
    )


def run_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    cycles = _load_cycles(resolve_path(req.features_path))
    eval_cycles = None
    if req.eval_features_path:
        eval_cycles = _load_cycles(resolve_path(req.eval_features_path))
    specs = [
        classify.ModelSpec(
            kind=name,
            C=req.C,
            gamma=req.gamma,
            min_samples_split=req.min_samples_split,
        )
        for name in req.models
    ]
    if req.n_seeds < 1:
        raise ParameterError("n_seeds must be >= 1")
    seeds = [req.seed + i for i in range(req.n_seeds)]
    result = dataset.sweep(
        specs,
        cycles,
        fractions=req.fractions,
        seeds=seeds,
        min_run=req.min_run,
        eval_cycles=eval_cycles,
        jobs=req.jobs,
    )
    csv_path = dataset.write_heatmap_csv(result, resolve_path(req.out_path))
    grid = [
        schemas.GridCell(model=m, train_fraction=f, mean_accuracy=acc)
        for (m, f), acc in sorted(result.grid().items())
    ]
    return schemas.SweepResponse(csv_path=str(csv_path), grid=grid)


def run_predict(req: schemas.PredictRequest) -> schemas.PredictResponse:
    model = classify.load_model(resolve_path(req.model_path))
    X = np.zeros((len(req.rows), len(features.FEATURE_NAMES)))
    for i, row in enumerate(req.rows):
        missing = set(features.FEATURE_NAMES) - set(row)
        if missing:
            raise ParameterError(f"row {i} missing features {sorted(missing)}")
        extra = set(row) - set(features.FEATURE_NAMES)
        if extra:
            raise ParameterError(f"row {i} has unknown features {sorted(extra)}")
        X[i] = [row[name] for name in features.FEATURE_NAMES]
    labels = classify.predict(model, X) if len(req.rows) else np.zeros(0, dtype=int)
    filtered = (
        classify.filter_labels(labels, req.min_run) if req.apply_filter else None
    )
    return schemas.PredictResponse(
        labels=[int(v) for v in labels],
        filtered_labels=None if filtered is None else [int(v) for v in filtered],
    )
