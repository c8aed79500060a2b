import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from millwear.dataset import read_labels_csv
from millwear.errors import ParameterError
from millwear.features import FeatureWindowConfig, ProcessFrequencies, extract
from millwear.signal import SegmentationParams, Trace, segment
from millwear.spectral import WindowConfig, welch_psd
from millwear.synth import MillingConfig, WEAR_BANDS, generate_cycle, generate_dataset

from .conftest import SMALL_DURATION, small_config

WCFG = WindowConfig()
FCFG = FeatureWindowConfig()


def features_over_cycle(cycle, cfg, fcfg=FCFG, wcfg=WCFG):
    procfreq = ProcessFrequencies.from_process(
        cfg.spindle_rpm, cfg.flutes, cfg.sample_interval, wcfg.frame_len
    )
    vectors = []
    for seg in cycle.true_segments:
        sub = Trace(cycle.trace.samples[seg.start : seg.end], cfg.sample_interval)
        vectors.extend(
            extract(sub, fcfg, wcfg, procfreq, t_offset_s=seg.start * cfg.sample_interval)
        )
    return vectors


class TestMillingConfig:
    def test_derived_frequencies(self):
        cfg = MillingConfig()
        assert cfg.spindle_hz == pytest.approx(11540 / 60)
        assert cfg.tooth_pass_hz == pytest.approx(11540 / 60 * 4)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"spindle_rpm": 0},
            {"flutes": 0},
            {"wear_transition": 1.0},
            {"machine_profile": "C"},
            {"wear_curve": "quantum"},
            {"wear_curve": "power:0"},
            {"layout_jitter": 1.0},
        ],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ParameterError):
            MillingConfig(**kwargs)

    def test_process_idle_rms_guard(self):
        with pytest.raises(ParameterError):
            MillingConfig(idle_noise=0.5, min_process_idle_ratio=10.0)

    def test_wear_level_monotone_and_warped(self):
        cfg = MillingConfig(wear_curve="power:2", wear_transition=0.6)
        u = np.linspace(0, 1, 101)
        for transition in (0.5, 0.6, 0.7):
            w = cfg.wear_level(u, transition)
            assert np.all(np.diff(w) >= -1e-12)
            assert w[0] == pytest.approx(0.0)
            assert w[-1] == pytest.approx(1.0)
            # warping keeps the wear level at the label flip consistent
            at_flip = cfg.wear_level(np.array([transition]), transition)[0]
            assert at_flip == pytest.approx(0.6**2, abs=1e-9)


class TestGenerateCycle:
    def test_segmentation_recovers_boundaries(self):
        cfg = small_config()
        cycle = generate_cycle(cfg, SMALL_DURATION, seed=5)
        params = SegmentationParams()
        found = segment(cycle.trace, params)
        assert len(found) == len(cycle.true_segments)
        dt = cfg.sample_interval
        tol_start = params.window_len + int(np.ceil(params.min_above / dt))
        tol_end = params.window_len + int(np.ceil(params.min_below / dt))
        for got, true in zip(found, cycle.true_segments):
            assert abs(got.start - true.start) <= tol_start
            assert abs(got.end - true.end) <= tol_end

    def test_label_series_flips_once(self):
        cycle = generate_cycle(small_config(), SMALL_DURATION, seed=3)
        states = [s for _, s in cycle.labels]
        flips = sum(a != b for a, b in zip(states, states[1:]))
        assert flips == 1
        flip_t = cycle.labels[states.index(1)][0]
        assert flip_t / SMALL_DURATION == pytest.approx(cycle.wear_transition, abs=0.02)

    def test_deterministic_per_seed(self):
        a = generate_cycle(small_config(), SMALL_DURATION, seed=9)
        b = generate_cycle(small_config(), SMALL_DURATION, seed=9)
        assert np.array_equal(a.trace.samples, b.trace.samples)
        c = generate_cycle(small_config(), SMALL_DURATION, seed=10)
        assert not np.array_equal(a.trace.samples, c.trace.samples)

    def test_duration_too_short_raises(self):
        with pytest.raises(ParameterError):
            generate_cycle(small_config(), 2.0, seed=0)

    def test_process_idle_rms_ratio(self):
        cfg = small_config()
        cycle = generate_cycle(cfg, SMALL_DURATION, seed=1)
        x = cycle.trace.samples
        mask = np.zeros(len(x), dtype=bool)
        for seg in cycle.true_segments:
            mask[seg.start : seg.end] = True
        process_rms = x[mask].std()
        idle_rms = x[~mask].std()
        assert process_rms / idle_rms >= cfg.min_process_idle_ratio

    def test_no_wear_is_stationary(self):
        cfg = replace(small_config(), wear_noise=0.0)
        cycle = generate_cycle(cfg, SMALL_DURATION, seed=2)
        vectors = features_over_cycle(
            cycle, cfg, fcfg=FeatureWindowConfig(window_len=4096, hop=2048)
        )
        rel = np.array([v.values["rel_aperiodic_energy"] for v in vectors])
        half = len(rel) // 2
        assert abs(rel[half:].mean() - rel[:half].mean()) < 0.01

    def test_rel_aperiodic_tracks_wear(self):
        cfg = MillingConfig(machine_profile="A", process_s=6.0, idle_s=1.2)
        cycle = generate_cycle(cfg, 45.0, seed=7)
        vectors = features_over_cycle(cycle, cfg)
        rel = np.array([v.values["rel_aperiodic_energy"] for v in vectors])
        wear = np.array(
            [
                cfg.wear_level(np.array([v.t_start_s / 45.0]), cycle.wear_transition)[0]
                for v in vectors
            ]
        )
        assert spearmanr(rel, wear).statistic > 0.9
        # heavily worn windows carry strictly more aperiodic share than new ones
        assert rel[wear > 0.8].mean() > rel[wear < 0.1].mean()

    def test_rotation_sidebands_present(self):
        cfg = small_config()
        cycle = generate_cycle(cfg, SMALL_DURATION, seed=4)
        seg0 = cycle.true_segments[0]
        sub = Trace(cycle.trace.samples[seg0.start : seg0.end], cfg.sample_interval)
        psd = welch_psd(sub, WCFG)
        f = psd.freqs

        def band_power(center, half=25.0):
            return psd.bins[(f >= center - half) & (f <= center + half)].sum()

        floor = np.median(psd.bins) * 4
        assert band_power(cfg.tooth_pass_hz - cfg.spindle_hz) > 50 * floor
        assert band_power(cfg.tooth_pass_hz + cfg.spindle_hz) > 50 * floor

    def test_profiles_differ_in_wear_band(self):
        cfg_a = small_config("A")
        cfg_b = small_config("B")
        cyc_a = generate_cycle(cfg_a, SMALL_DURATION, seed=11)
        cyc_b = generate_cycle(cfg_b, SMALL_DURATION, seed=11)

        def worn_highband_share(cycle, cfg):
            seg_last = cycle.true_segments[-1]
            sub = Trace(
                cycle.trace.samples[seg_last.start : seg_last.end], cfg.sample_interval
            )
            psd = welch_psd(sub, WCFG)
            hi = psd.freqs > 4000.0
            return psd.bins[hi].sum() / psd.total_power

        share_a = worn_highband_share(cyc_a, cfg_a)
        share_b = worn_highband_share(cyc_b, cfg_b)
        assert share_b > 10 * share_a
        assert share_a < 0.05

    def test_wear_band_tables(self):
        for profile, bands in WEAR_BANDS.items():
            assert sum(share for _, _, share in bands) == pytest.approx(1.0)
            for lo, hi, _ in bands:
                assert 0 < lo < hi
        assert all(hi <= 4000.0 for _, hi, _ in WEAR_BANDS["A"])
        assert any(lo >= 4000.0 for lo, _, _ in WEAR_BANDS["B"])


class TestGenerateDataset:
    def test_manifest_lists_cycles(self, small_dataset):
        manifest = small_dataset["manifest"]
        assert len(manifest.cycles) == 3
        for entry in manifest.cycles:
            assert entry.trace_path.exists()
            assert entry.labels_path.exists()
            assert entry.true_segments_path.exists()

    def test_byte_identical_for_same_seed(self, tmp_path):
        cfg = small_config()
        m1 = generate_dataset(cfg, 2, seed=77, out_dir=tmp_path / "d1", duration_s=SMALL_DURATION)
        m2 = generate_dataset(cfg, 2, seed=77, out_dir=tmp_path / "d2", duration_s=SMALL_DURATION)
        for p1 in sorted(m1.parent.iterdir()):
            p2 = m2.parent / p1.name
            assert p1.read_bytes() == p2.read_bytes(), p1.name

    def test_transition_jitter_range(self, small_dataset):
        cfg_transition = small_config().wear_transition
        for entry in small_dataset["manifest"].cycles:
            assert 0.9 * cfg_transition <= entry.wear_transition <= 1.1 * cfg_transition
            times, states = read_labels_csv(entry.labels_path)
            flip = times[np.flatnonzero(states == 1)[0]]
            assert flip / SMALL_DURATION == pytest.approx(entry.wear_transition, abs=0.02)

    def test_single_cycle_rejected(self, tmp_path):
        with pytest.raises(ParameterError):
            generate_dataset(small_config(), 1, seed=0, out_dir=tmp_path, duration_s=SMALL_DURATION)

    def test_manifest_is_valid_json(self, small_dataset):
        doc = json.loads(Path(small_dataset["manifest_path"]).read_text())
        assert doc["format"] == "millwear-dataset"
        assert doc["machine_id"] == "A"
