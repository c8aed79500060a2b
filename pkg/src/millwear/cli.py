"""Command-line client for the millwear pipeline.

Each subcommand builds the same request model the HTTP service accepts and
either dispatches it in-process (default) or POSTs it to a running service
(``--server``).  Results are printed as JSON.

Option precedence: explicit flags > ``--config`` file entries > built-in
defaults.  The config file is a flat JSON object; unknown keys are rejected.
Relative paths resolve against $MILLWEAR_DATA_DIR when it is set.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from typing import Any

from pydantic import ValidationError

from . import __version__
from .errors import MillwearError

# every key a config file may define, with the type used to check it
KNOWN_CONFIG_KEYS: dict[str, type] = {
    # segmentation
    "window_len": int,
    "alpha0": float,
    "alpha1": float,
    "alpha2": float,
    "min_above": float,
    "min_below": float,
    # spectral
    "frame_len": int,
    "hop": int,
    "window_fn": str,
    "welch_subframes": int,
    "welch_overlap": float,
    # feature extraction
    "feature_window_len": int,
    "feature_hop": int,
    "mode_bins": int,
    "autocorr_lag": int,
    "higuchi_kmax": int,
    "n_harmonics": int,
    "tolerance_bins": float,
    # process
    "spindle_rpm": float,
    "flutes": int,
    "sample_interval": float,
    # generator
    "duration_s": float,
    "profile": str,
    "process_s": float,
    "idle_s": float,
    "layout_jitter": float,
    "idle_noise": float,
    "process_noise": float,
    "noise_jitter": float,
    "wear_noise": float,
    "wear_curve": str,
    "wear_transition": float,
    "label_noise": float,
    "transition_jitter": float,
    # classifiers / evaluation
    "C": float,
    "gamma": float,
    "min_samples_split": int,
    "min_run": int,
    "train_fraction": float,
    "seed": int,
    "n_seeds": int,
    "jobs": int,
}


def _load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"error: cannot read config {path}: {exc}")
    if not isinstance(doc, dict):
        raise SystemExit(f"error: config {path} must be a flat JSON object")
    unknown = sorted(set(doc) - set(KNOWN_CONFIG_KEYS))
    if unknown:
        raise SystemExit(f"error: unknown config keys in {path}: {unknown}")
    for key, value in doc.items():
        want = KNOWN_CONFIG_KEYS[key]
        if want is float and isinstance(value, int):
            continue
        if not isinstance(value, want):
            raise SystemExit(
                f"error: config key {key!r} must be {want.__name__}, "
                f"got {type(value).__name__}"
            )
    return doc


class _Options:
    """Merged view over CLI args and config file values."""

    def __init__(self, args: argparse.Namespace, config: dict[str, Any]):
        self.args = vars(args)
        self.config = config

    def get(self, dest: str, config_key: str | None = None):
        value = self.args.get(dest)
        if value is not None:
            return value
        key = config_key or dest
        return self.config.get(key)


def _kwargs(options: _Options, mapping: dict[str, str | tuple[str, str]]) -> dict:
    """Collect non-None option values into request kwargs.

    mapping: request_field -> argparse dest, or (dest, config_key).
    """
    out = {}
    for field, src in mapping.items():
        dest, config_key = src if isinstance(src, tuple) else (src, src)
        value = options.get(dest, config_key)
        if value is not None:
            out[field] = value
    return out


_SEGMENTATION_MAP = {
    "window_len": "window_len",
    "alpha0": "alpha0",
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "min_above": "min_above",
    "min_below": "min_below",
}
_SPECTRAL_MAP = {
    "frame_len": "frame_len",
    "hop": "hop",
    "window_fn": "window_fn",
    "welch_subframes": "welch_subframes",
    "welch_overlap": "welch_overlap",
}
_FEATURE_MAP = {
    "window_len": "feature_window_len",
    "hop": "feature_hop",
    "mode_bins": "mode_bins",
    "autocorr_lag": "autocorr_lag",
    "higuchi_kmax": "higuchi_kmax",
    "n_harmonics": "n_harmonics",
    "tolerance_bins": "tolerance_bins",
}
_PROCESS_MAP = {"spindle_rpm": "spindle_rpm", "flutes": "flutes"}


def _add_segmentation_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("segmentation")
    g.add_argument("--window-len", dest="window_len", type=int,
                   help="peak-to-peak window length in samples (default 256)")
    g.add_argument("--alpha0", type=float, help="lower quantile of the quiet slice")
    g.add_argument("--alpha1", type=float, help="upper quantile of the quiet slice")
    g.add_argument("--alpha2", type=float, help="threshold multiplier over the idle floor")
    g.add_argument("--min-above", dest="min_above", type=float,
                   help="seconds above threshold before a segment opens")
    g.add_argument("--min-below", dest="min_below", type=float,
                   help="seconds below threshold before a segment closes")


def _add_spectral_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("spectral estimation")
    g.add_argument("--frame-len", dest="frame_len", type=int,
                   help="FFT frame length, power of two (default 1024)")
    g.add_argument("--hop", type=int, help="spectrogram column stride in samples")
    g.add_argument("--window-fn", dest="window_fn",
                   choices=["rectangular", "hann", "hamming"], help="analysis window")
    g.add_argument("--welch-subframes", dest="welch_subframes", type=int,
                   help="periodograms averaged per column (default 4)")
    g.add_argument("--welch-overlap", dest="welch_overlap", type=float,
                   help="sub-frame overlap fraction (default 0.5)")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("feature extraction")
    g.add_argument("--feature-window-len", dest="feature_window_len", type=int,
                   help="moving feature window in samples (default 8192)")
    g.add_argument("--feature-hop", dest="feature_hop", type=int,
                   help="feature window stride in samples (default 4096)")
    g.add_argument("--mode-bins", dest="mode_bins", type=int,
                   help="histogram bins for the statistical mode")
    g.add_argument("--autocorr-lag", dest="autocorr_lag", type=int,
                   help="autocorrelation lag in samples")
    g.add_argument("--higuchi-kmax", dest="higuchi_kmax", type=int,
                   help="maximum scale for the fractal dimension")
    g.add_argument("--n-harmonics", dest="n_harmonics", type=int,
                   help="harmonics per process-frequency family")
    g.add_argument("--tolerance-bins", dest="tolerance_bins", type=float,
                   help="harmonic band half-width in frequency bins")
    g = p.add_argument_group("process frequencies")
    g.add_argument("--spindle-rpm", dest="spindle_rpm", type=float,
                   help="spindle speed in rpm (default 11540)")
    g.add_argument("--flutes", type=int, help="cutter flute count (default 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="millwear",
        description="Tool-condition monitoring pipeline for milling vibration data.",
        epilog="Relative paths resolve against $MILLWEAR_DATA_DIR when set.",
    )
    parser.add_argument("--version", action="version", version=f"millwear {__version__}")
    parser.add_argument("--server", help="base URL of a running millwear service; "
                        "without it commands run in-process")
    parser.add_argument("--config", help="flat JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="output directory for the dataset")
    p.add_argument("--cycles", type=int, help="number of tool life cycles (default 5)")
    p.add_argument("--seed", type=int, help="master seed; per-cycle seeds are spawned from it")
    p.add_argument("--duration", dest="duration_s", type=float,
                   help="cycle duration in seconds (default 222)")
    p.add_argument("--profile", choices=["A", "B"], help="machine wear-band profile")
    p.add_argument("--process-s", dest="process_s", type=float,
                   help="nominal in-cut interval length in seconds")
    p.add_argument("--idle-s", dest="idle_s", type=float,
                   help="nominal idle gap length in seconds")
    p.add_argument("--layout-jitter", dest="layout_jitter", type=float,
                   help="relative jitter of interval lengths")
    p.add_argument("--idle-noise", dest="idle_noise", type=float)
    p.add_argument("--process-noise", dest="process_noise", type=float)
    p.add_argument("--noise-jitter", dest="noise_jitter", type=float,
                   help="per-cycle relative variation of the broadband floor")
    p.add_argument("--wear-noise", dest="wear_noise", type=float)
    p.add_argument("--wear-curve", dest="wear_curve",
                   help="'linear', 'smoothstep' or 'power:<p>'")
    p.add_argument("--wear-transition", dest="wear_transition", type=float,
                   help="cycle time fraction where the label flips to Worn")
    p.add_argument("--label-noise", dest="label_noise", type=float,
                   help="per-cycle offset between wear development and the label flip")
    p.add_argument("--transition-jitter", dest="transition_jitter", type=float,
                   help="relative per-cycle jitter of the wear onset")
    p.add_argument("--spindle-rpm", dest="spindle_rpm", type=float)
    p.add_argument("--flutes", type=int)
    p.add_argument("--sample-interval", dest="sample_interval", type=float)

    p = sub.add_parser("segment", help="detect in-cut segments of a trace")
    p.add_argument("--trace", required=True, help="trace file (.bin with sidecar, or .csv)")
    p.add_argument("--out", help="write segments CSV here")
    _add_segmentation_flags(p)

    p = sub.add_parser("features", help="extract feature vectors from a dataset or trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="dataset manifest JSON")
    src.add_argument("--trace", help="single trace file (unlabeled extraction)")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--export-stft", dest="export_stft",
                   help="also write per-segment STFT tensors into this directory")
    _add_segmentation_flags(p)
    _add_spectral_flags(p)
    _add_feature_flags(p)

    p = sub.add_parser("train", help="train a classifier on a cycle-aware split")
    p.add_argument("--features", required=True, help="feature CSV from 'features'")
    p.add_argument("--model", choices=["tree", "svc"], help="classifier type (default svc)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float,
                   help="fraction of cycles used for training (default 0.6)")
    p.add_argument("--seed", type=int, help="split/trainer seed")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--split-out", dest="split_out", help="write the split record here")
    p.add_argument("--c", dest="C", type=float, help="SVC regularization C")
    p.add_argument("--gamma", type=float, help="SVC RBF gamma (default 1/(d*var))")
    p.add_argument("--min-samples-split", dest="min_samples_split", type=int)

    p = sub.add_parser("eval", help="evaluate a model on held-out cycles")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--cycles", help="comma-separated cycle ids to evaluate on")
    p.add_argument("--split", help="split record from 'train'")
    p.add_argument("--partition", choices=["val", "train"],
                   help="which side of the split to evaluate (default val)")
    p.add_argument("--min-run", dest="min_run", type=int,
                   help="temporal filter island length (default 3)")
    p.add_argument("--out-prefix", dest="out_prefix",
                   help="write predictions/delays/summary files with this prefix")

    p = sub.add_parser("sweep", help="accuracy grid over models and train fractions")
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--models", help="comma-separated model kinds (default tree,svc)")
    p.add_argument("--fractions", help="comma-separated train fractions "
                   "(default 0.2,0.4,0.6,0.8)")
    p.add_argument("--seeds", dest="n_seeds", type=int,
                   help="repetitions per cell; seeds are master+0..n-1 (default 5)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--min-run", dest="min_run", type=int)
    p.add_argument("--out", required=True, help="output heatmap CSV")
    p.add_argument("--eval-features", dest="eval_features",
                   help="evaluate every cell on this other machine's feature CSV")
    p.add_argument("--jobs", type=int, help="parallel sweep workers (default 1)")
    p.add_argument("--c", dest="C", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--min-samples-split", dest="min_samples_split", type=int)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8077)

    return parser


def _build_request(args: argparse.Namespace, config: dict[str, Any]):
    from .service import schemas

    opt = _Options(args, config)
    cmd = args.command
    if cmd == "synth":
        kwargs = _kwargs(opt, {
            "out_dir": "out",
            "cycles": "cycles",
            "seed": "seed",
            "duration_s": "duration_s",
            "profile": "profile",
            "spindle_rpm": "spindle_rpm",
            "flutes": "flutes",
            "sample_interval": "sample_interval",
            "process_s": "process_s",
            "idle_s": "idle_s",
            "layout_jitter": "layout_jitter",
            "idle_noise": "idle_noise",
            "process_noise": "process_noise",
            "noise_jitter": "noise_jitter",
            "wear_noise": "wear_noise",
            "wear_curve": "wear_curve",
            "wear_transition": "wear_transition",
            "label_noise": "label_noise",
            "transition_jitter": "transition_jitter",
        })
        return "/synth", schemas.SynthRequest(**kwargs)
    if cmd == "segment":
        kwargs = {"trace_path": args.trace}
        if opt.get("out"):
            kwargs["out_path"] = opt.get("out")
        kwargs["segmentation"] = schemas.SegmentationOptions(
            **_kwargs(opt, _SEGMENTATION_MAP)
        )
        return "/segment", schemas.SegmentRequest(**kwargs)
    if cmd == "features":
        kwargs = {
            "out_path": args.out,
            "segmentation": schemas.SegmentationOptions(**_kwargs(opt, _SEGMENTATION_MAP)),
            "spectral": schemas.SpectralOptions(**_kwargs(opt, _SPECTRAL_MAP)),
            "features": schemas.FeatureOptions(**_kwargs(opt, _FEATURE_MAP)),
            "process": schemas.ProcessOptions(**_kwargs(opt, _PROCESS_MAP)),
        }
        if args.manifest:
            kwargs["manifest_path"] = args.manifest
        if args.trace:
            kwargs["trace_path"] = args.trace
        if args.export_stft:
            kwargs["export_stft_dir"] = args.export_stft
        return "/features", schemas.FeaturesRequest(**kwargs)
    if cmd == "train":
        kwargs = _kwargs(opt, {
            "model": "model",
            "train_fraction": "train_fraction",
            "seed": "seed",
            "C": "C",
            "gamma": "gamma",
            "min_samples_split": "min_samples_split",
        })
        kwargs["features_path"] = args.features
        kwargs["out_path"] = args.out
        if args.split_out:
            kwargs["split_out_path"] = args.split_out
        return "/train", schemas.TrainRequest(**kwargs)
    if cmd == "eval":
        kwargs = _kwargs(opt, {"min_run": "min_run", "partition": "partition"})
        kwargs["model_path"] = args.model
        kwargs["features_path"] = args.features
        if args.cycles:
            kwargs["cycle_ids"] = [c for c in args.cycles.split(",") if c]
        if args.split:
            kwargs["split_path"] = args.split
        if args.out_prefix:
            kwargs["out_prefix"] = args.out_prefix
        return "/eval", schemas.EvalRequest(**kwargs)
    if cmd == "sweep":
        kwargs = _kwargs(opt, {
            "n_seeds": "n_seeds",
            "seed": "seed",
            "min_run": "min_run",
            "jobs": "jobs",
            "C": "C",
            "gamma": "gamma",
            "min_samples_split": "min_samples_split",
        })
        kwargs["features_path"] = args.features
        kwargs["out_path"] = args.out
        if args.models:
            kwargs["models"] = [m for m in args.models.split(",") if m]
        if args.fractions:
            kwargs["fractions"] = [float(f) for f in args.fractions.split(",") if f]
        if args.eval_features:
            kwargs["eval_features_path"] = args.eval_features
        return "/sweep", schemas.SweepRequest(**kwargs)
    raise SystemExit(f"error: unhandled command {cmd!r}")


def _dispatch_local(route: str, request) -> str:
    from .service import handlers

    handler = {
        "/synth": handlers.run_synth,
        "/segment": handlers.run_segment,
        "/features": handlers.run_features,
        "/train": handlers.run_train,
        "/eval": handlers.run_eval,
        "/sweep": handlers.run_sweep,
    }[route]
    return handler(request).model_dump_json(indent=2)


def _dispatch_http(server: str, route: str, request) -> str:
    url = server.rstrip("/") + route
    req = urllib.request.Request(
        url,
        data=request.model_dump_json().encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.read().decode()
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        raise SystemExit(f"error: {url} returned {exc.code}: {detail}")
    except urllib.error.URLError as exc:
        raise SystemExit(f"error: cannot reach {url}: {exc.reason}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    config = _load_config(args.config)
    try:
        route, request = _build_request(args, config)
    except ValidationError as exc:
        print(f"error: invalid options: {exc}", file=sys.stderr)
        return 1
    try:
        if args.server:
            body = _dispatch_http(args.server, route, request)
        else:
            body = _dispatch_local(route, request)
    except MillwearError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        raise
    print(body)
    return 0


if __name__ == "__main__":
    sys.exit(main())
