import json
from pathlib import Path

import numpy as np
import pytest

from millwear.cli import main
from millwear.signal import Trace, write_trace

from .conftest import SMALL_DURATION


def run_cli(capsys, *args):
    code = main(list(args))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


SMALL_SYNTH_ARGS = [
    "--duration", str(SMALL_DURATION),
    "--process-s", "2.5",
    "--idle-s", "0.8",
    "--wear-transition", "0.55",
]
SMALL_FEATURE_ARGS = [
    "--frame-len", "512", "--hop", "256",
    "--feature-window-len", "2048", "--feature-hop", "1024",
]


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_data")
    code = main(
        ["synth", "--out", str(out / "ds"), "--cycles", "3", "--seed", "21"]
        + SMALL_SYNTH_ARGS
    )
    assert code == 0
    code = main(
        [
            "features",
            "--manifest", str(out / "ds" / "manifest.json"),
            "--out", str(out / "features.csv"),
        ]
        + SMALL_FEATURE_ARGS
    )
    assert code == 0
    return out


class TestSynthCommand:
    def test_creates_manifest_and_cycles(self, cli_dataset):
        manifest = json.loads((cli_dataset / "ds" / "manifest.json").read_text())
        assert len(manifest["cycles"]) == 3

    def test_repeat_invocation_byte_identical(self, tmp_path, capsys):
        args = ["synth", "--out", None, "--cycles", "2", "--seed", "9"] + SMALL_SYNTH_ARGS
        args[2] = str(tmp_path / "a")
        assert main(args) == 0
        args[2] = str(tmp_path / "b")
        assert main(args) == 0
        for p1 in sorted((tmp_path / "a").iterdir()):
            assert p1.read_bytes() == (tmp_path / "b" / p1.name).read_bytes()

    def test_single_cycle_fails(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "synth", "--out", str(tmp_path), "--cycles", "1")
        assert code == 1
        assert "n_cycles" in err

    def test_five_cycles_listed(self, tmp_path, capsys):
        code, stdout, _ = run_cli(
            capsys, "synth", "--out", str(tmp_path / "d5"), "--cycles", "5",
            "--seed", "7", *SMALL_SYNTH_ARGS,
        )
        assert code == 0
        assert len(json.loads(stdout)["cycle_ids"]) == 5


class TestSegmentCommand:
    def test_segments_csv_written(self, cli_dataset, tmp_path, capsys):
        trace = str(cli_dataset / "ds" / "cycle_000.bin")
        out = tmp_path / "segs.csv"
        code, stdout, _ = run_cli(
            capsys, "segment", "--trace", trace, "--out", str(out)
        )
        assert code == 0
        assert out.exists()
        assert json.loads(stdout)["segments"]

    def test_boundaries_match_generator_truth(self, cli_dataset, capsys):
        from millwear.signal import SegmentationParams, read_segments_csv

        trace = str(cli_dataset / "ds" / "cycle_000.bin")
        code, stdout, _ = run_cli(capsys, "segment", "--trace", trace)
        assert code == 0
        found = json.loads(stdout)["segments"]
        truth = read_segments_csv(cli_dataset / "ds" / "cycle_000_segments.csv")
        assert len(found) == len(truth)
        params = SegmentationParams()
        dt = 65e-6
        tol_start = params.window_len + int(np.ceil(params.min_above / dt))
        tol_end = params.window_len + int(np.ceil(params.min_below / dt))
        for got, true in zip(found, truth):
            assert abs(got["start_index"] - true.start) <= tol_start
            assert abs(got["end_index"] - true.end) <= tol_end

    def test_idle_only_trace_empty_csv(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        write_trace(Trace(0.01 * rng.standard_normal(200_000), 65e-6), tmp_path / "idle.bin")
        out = tmp_path / "segs.csv"
        code, stdout, _ = run_cli(
            capsys, "segment", "--trace", str(tmp_path / "idle.bin"), "--out", str(out)
        )
        assert code == 0
        assert json.loads(stdout)["segments"] == []
        assert out.read_text() == "start_index,end_index,start_s,end_s\n"

    def test_missing_file_nonzero_exit(self, tmp_path, capsys):
        code, _, err = run_cli(capsys, "segment", "--trace", str(tmp_path / "no.bin"))
        assert code == 1
        assert "error" in err


class TestFeaturesCommand:
    def test_csv_schema(self, cli_dataset):
        from millwear.features import CSV_COLUMNS

        header = (cli_dataset / "features.csv").read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        assert len(CSV_COLUMNS) == 18 + 3

    def test_export_stft(self, cli_dataset, tmp_path, capsys):
        code, stdout, _ = run_cli(
            capsys,
            "features",
            "--trace", str(cli_dataset / "ds" / "cycle_000.bin"),
            "--out", str(tmp_path / "f.csv"),
            "--export-stft", str(tmp_path / "stft"),
            *SMALL_FEATURE_ARGS,
        )
        assert code == 0
        body = json.loads(stdout)
        assert body["stft_paths"]
        for p in body["stft_paths"]:
            assert Path(p).exists()
            assert Path(p + ".json").exists()

    def test_oversized_window_skips_segments(self, cli_dataset, tmp_path, capsys):
        code, stdout, _ = run_cli(
            capsys,
            "features",
            "--trace", str(cli_dataset / "ds" / "cycle_000.bin"),
            "--out", str(tmp_path / "f.csv"),
            "--frame-len", "512",
            "--feature-window-len", "100000", "--feature-hop", "50000",
        )
        assert code == 0
        body = json.loads(stdout)
        assert body["n_windows"] == 0
        assert body["n_segments_skipped"] > 0


class TestTrainCommand:
    def test_train_writes_model_and_split(self, cli_dataset, tmp_path, capsys):
        code, stdout, _ = run_cli(
            capsys,
            "train",
            "--features", str(cli_dataset / "features.csv"),
            "--model", "tree",
            "--train-fraction", "0.67",
            "--seed", "1",
            "--out", str(tmp_path / "m.tree.json"),
            "--split-out", str(tmp_path / "split.json"),
        )
        assert code == 0
        assert json.loads(stdout)["train_accuracy"] == 1.0
        split = json.loads((tmp_path / "split.json").read_text())
        assert split["format"] == "millwear-split"
        assert len(split["train_cycles"]) == 2

    def test_single_class_labels_error(self, cli_dataset, tmp_path, capsys):
        text = (cli_dataset / "features.csv").read_text().splitlines()
        rows = [line for line in text[1:] if line.rsplit(",", 1)[1] == "0"]
        bad = tmp_path / "single.csv"
        bad.write_text("\n".join([text[0]] + rows) + "\n")
        code, _, err = run_cli(
            capsys,
            "train",
            "--features", str(bad),
            "--model", "svc",
            "--out", str(tmp_path / "m.json"),
        )
        assert code == 1
        assert "both classes" in err

    def test_unknown_model_usage_error(self, cli_dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "train",
                    "--features", str(cli_dataset / "features.csv"),
                    "--model", "forest",
                    "--out", str(tmp_path / "m.json"),
                ]
            )
        assert exc.value.code == 2


class TestEvalCommand:
    def test_eval_outputs(self, cli_dataset, tmp_path, capsys):
        model = tmp_path / "m.tree.json"
        assert main(
            [
                "train",
                "--features", str(cli_dataset / "features.csv"),
                "--model", "tree",
                "--train-fraction", "0.67",
                "--seed", "3",
                "--out", str(model),
                "--split-out", str(tmp_path / "split.json"),
            ]
        ) == 0
        capsys.readouterr()
        code, stdout, _ = run_cli(
            capsys,
            "eval",
            "--model", str(model),
            "--features", str(cli_dataset / "features.csv"),
            "--split", str(tmp_path / "split.json"),
            "--out-prefix", str(tmp_path / "ev_"),
        )
        assert code == 0
        body = json.loads(stdout)
        assert body["n_cycles"] == 1
        pred_lines = (tmp_path / "ev_predictions.csv").read_text().splitlines()
        assert pred_lines[0] == "cycle_id,t_s,raw_label,filtered_label,true_label"

    def test_schema_mismatch_error(self, cli_dataset, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        model = tmp_path / "m.tree.json"
        code, _, err = run_cli(
            capsys,
            "eval", "--model", str(model), "--features", str(bad),
        )
        assert code == 1
        assert "error" in err


class TestSweepCommand:
    def test_sweep_rows(self, cli_dataset, tmp_path, capsys):
        out = tmp_path / "heatmap.csv"
        code, stdout, _ = run_cli(
            capsys,
            "sweep",
            "--features", str(cli_dataset / "features.csv"),
            "--models", "tree,svc",
            "--fractions", "0.34,0.67",
            "--seeds", "2",
            "--seed", "5",
            "--out", str(out),
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "model,train_fraction,seed,accuracy"
        assert len(lines) == 1 + 2 * 2 * 2

    def test_full_fraction_grid_eight_rows_per_seed(self, cli_dataset, tmp_path, capsys):
        out = tmp_path / "grid.csv"
        code, _, _ = run_cli(
            capsys,
            "sweep",
            "--features", str(cli_dataset / "features.csv"),
            "--models", "tree,svc",
            "--fractions", "0.2,0.4,0.6,0.8",
            "--seeds", "1",
            "--out", str(out),
        )
        assert code == 0
        assert len(out.read_text().splitlines()) == 1 + 8

    def test_unknown_flag_exits_2(self, cli_dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["sweep", "--features", "f.csv", "--out", "h.csv", "--frobnicate"])
        assert exc.value.code == 2


class TestConfigFile:
    def test_config_value_used(self, cli_dataset, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train_fraction": 0.67, "seed": 4}))
        code, stdout, _ = run_cli(
            capsys,
            "--config", str(cfg),
            "train",
            "--features", str(cli_dataset / "features.csv"),
            "--model", "tree",
            "--out", str(tmp_path / "m.json"),
        )
        assert code == 0
        body = json.loads(stdout)
        assert body["split"]["train_fraction"] == 0.67
        assert body["split"]["seed"] == 4

    def test_cli_flag_beats_config(self, cli_dataset, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train_fraction": 0.34}))
        code, stdout, _ = run_cli(
            capsys,
            "--config", str(cfg),
            "train",
            "--features", str(cli_dataset / "features.csv"),
            "--model", "tree",
            "--train-fraction", "0.67",
            "--out", str(tmp_path / "m.json"),
        )
        assert code == 0
        assert json.loads(stdout)["split"]["train_fraction"] == 0.67

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"not_a_key": 1}))
        with pytest.raises(SystemExit) as exc:
            main(["--config", str(cfg), "segment", "--trace", "t.bin"])
        assert "unknown config keys" in str(exc.value.code)

    def test_wrong_config_type_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": "seven"}))
        with pytest.raises(SystemExit):
            main(["--config", str(cfg), "segment", "--trace", "t.bin"])


class TestHelp:
    @pytest.mark.parametrize(
        "command", ["synth", "segment", "features", "train", "eval", "sweep", "serve"]
    )
    def test_subcommand_help(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--" in out

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0


class TestDataDirEnv:
    def test_relative_paths_resolve_against_env(self, cli_dataset, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("MILLWEAR_DATA_DIR", str(cli_dataset))
        code, stdout, _ = run_cli(
            capsys, "segment", "--trace", "ds/cycle_000.bin"
        )
        assert code == 0
        assert json.loads(stdout)["segments"]
