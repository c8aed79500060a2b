import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from millwear.errors import DataError, FormatError, LengthError, ParameterError
from millwear.signal import (
    P2PSeries,
    Segment,
    SegmentationParams,
    Trace,
    compute_threshold,
    peak_to_peak_series,
    read_segments_csv,
    read_trace,
    read_trace_csv,
    segment,
    write_segments_csv,
    write_trace,
    write_trace_csv,
)

from .oracles import naive_sliding_ptp, naive_threshold

DT = 65e-6


def p2p_of(values, w):
    return peak_to_peak_series(Trace(np.asarray(values, dtype=float), DT), w)


class TestPeakToPeak:
    def test_constant_trace(self):
        assert p2p_of([5, 5, 5, 5], 2).values.tolist() == [0, 0, 0]

    def test_alternating_trace(self):
        assert p2p_of([0, 1, 0, 1], 2).values.tolist() == [1, 1, 1]

    def test_sine_full_period_window(self):
        n, period = 4096, 128
        x = np.sin(2 * np.pi * np.arange(n) / period)
        values = p2p_of(x, period).values
        assert np.all(np.abs(values - 2.0) < 1e-9)

    def test_series_metadata(self):
        series = p2p_of(np.arange(10.0), 4)
        assert len(series.values) == 7
        assert series.offset == 3
        assert series.window_len == 4

    def test_matches_naive_rescan(self, rng):
        for _ in range(20):
            n = int(rng.integers(50, 2000))
            w = int(rng.integers(2, min(n, 300)))
            x = rng.standard_normal(n)
            fast = p2p_of(x, w).values
            assert np.array_equal(fast, naive_sliding_ptp(x, w))

    @given(
        data=st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=200),
        w=st.integers(2, 40),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_naive_property(self, data, w):
        x = np.array(data)
        if len(x) < w:
            return
        assert np.array_equal(p2p_of(x, w).values, naive_sliding_ptp(x, w))

    def test_short_trace_raises(self):
        with pytest.raises(LengthError):
            p2p_of([1.0, 2.0], 3)

    def test_non_finite_raises(self):
        with pytest.raises(DataError):
            p2p_of([1.0, np.nan, 2.0], 2)

    def test_window_too_small_raises(self):
        with pytest.raises(ParameterError):
            p2p_of([1.0, 2.0, 3.0], 1)


class TestThreshold:
    def test_constant_values(self):
        series = P2PSeries(np.full(500, 3.0), 2, 1, DT)
        assert compute_threshold(series, SegmentationParams()) == pytest.approx(30.0)

    def test_sorted_1_to_100(self):
        # slice [floor(0.01*100), floor(0.03*100)) = indices 1..2 -> {2, 3}
        series = P2PSeries(np.arange(1.0, 101.0), 2, 1, DT)
        assert compute_threshold(series, SegmentationParams()) == pytest.approx(25.0)

    def test_idle_floor_dominates_quiet_slice(self, rng):
        # 3% idle floor at 0.01 fills the [1%, 3%) slice -> th ~= 10 * 0.01
        n = 10_000
        values = np.concatenate(
            [
                0.01 + 1e-4 * rng.standard_normal(300),
                1.0 + 0.02 * rng.standard_normal(n - 300),
            ]
        )
        rng.shuffle(values)
        params = SegmentationParams()
        expected = naive_threshold(values, params.alpha0, params.alpha1, params.alpha2)
        got = compute_threshold(P2PSeries(values, 2, 1, DT), params)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.1, rel=0.05)

    def test_slice_mean_matches_naive(self, rng):
        values = rng.exponential(1.0, size=777)
        params = SegmentationParams()
        assert compute_threshold(P2PSeries(values, 2, 1, DT), params) == pytest.approx(
            naive_threshold(values, params.alpha0, params.alpha1, params.alpha2)
        )

    def test_empty_slice_raises(self):
        series = P2PSeries(np.arange(1.0, 21.0), 2, 1, DT)  # floor(1%*20)=floor(3%*20)=0
        with pytest.raises(ParameterError):
            compute_threshold(series, SegmentationParams())

    def test_bad_alpha_order_raises(self):
        with pytest.raises(ParameterError):
            SegmentationParams(alpha0=0.05, alpha1=0.03)


def idle_process_trace(
    rng,
    layout,
    idle_level=0.01,
    process_level=1.0,
    tone_hz=800.0,
):
    """Idle noise interleaved with tone+noise process intervals.

    layout: list of (kind, seconds); returns (trace, [(start, end), ...]).
    """
    chunks = []
    bounds = []
    pos = 0
    for kind, seconds in layout:
        n = int(round(seconds / DT))
        if kind == "idle":
            chunks.append(idle_level * rng.standard_normal(n))
        else:
            t = (pos + np.arange(n)) * DT
            chunks.append(
                process_level * np.sin(2 * np.pi * tone_hz * t)
                + 0.1 * process_level * rng.standard_normal(n)
            )
            bounds.append((pos, pos + n))
        pos += n
    return Trace(np.concatenate(chunks), DT), bounds


class TestSegment:
    def test_single_process_interval(self, rng):
        trace, bounds = idle_process_trace(
            rng, [("idle", 1.0), ("process", 5.0), ("idle", 1.0)]
        )
        params = SegmentationParams()
        segments = segment(trace, params)
        assert len(segments) == 1
        tol_start = params.window_len + int(np.ceil(params.min_above / DT))
        tol_end = params.window_len + int(np.ceil(params.min_below / DT))
        assert abs(segments[0].start - bounds[0][0]) <= tol_start
        assert abs(segments[0].end - bounds[0][1]) <= tol_end

    def test_brief_spike_ignored(self, rng):
        trace, bounds = idle_process_trace(
            rng, [("idle", 1.0), ("process", 5.0), ("idle", 1.0)]
        )
        # 10 ms burst in the leading idle, well above threshold
        n_spike = int(0.010 / DT)
        samples = trace.samples.copy()
        samples[2000 : 2000 + n_spike] = 1.0 * np.sign(
            np.sin(np.arange(n_spike) * 0.9)
        )
        spiked = Trace(samples, DT)
        segments = segment(spiked, SegmentationParams(min_above=0.05))
        assert len(segments) == 1

    def test_brief_dip_does_not_close(self, rng):
        trace, bounds = idle_process_trace(
            rng, [("idle", 1.0), ("process", 5.0), ("idle", 1.0)]
        )
        samples = trace.samples.copy()
        start = bounds[0][0] + 20_000
        samples[start : start + int(0.05 / DT)] = 0.0  # 50 ms dropout
        segments = segment(Trace(samples, DT), SegmentationParams(min_below=0.2))
        assert len(segments) == 1

    def test_all_idle_returns_empty(self, rng):
        trace = Trace(0.01 * rng.standard_normal(100_000), DT)
        assert segment(trace, SegmentationParams()) == []

    def test_constant_trace_returns_empty(self):
        trace = Trace(np.full(100_000, 2.5), DT)
        assert segment(trace, SegmentationParams()) == []

    def test_scale_invariance(self, rng):
        trace, _ = idle_process_trace(
            rng, [("idle", 0.8), ("process", 2.0), ("idle", 0.5), ("process", 1.5), ("idle", 0.8)]
        )
        params = SegmentationParams()
        base = segment(trace, params)
        for scale in (1e-3, 7.3, 1e4):
            scaled = segment(Trace(trace.samples * scale, DT), params)
            assert [(s.start, s.end) for s in scaled] == [(s.start, s.end) for s in base]

    def test_two_intervals_stay_separate(self, rng):
        params = SegmentationParams()
        gap_s = params.min_below + 2 * params.window_len * DT + 0.1
        trace, bounds = idle_process_trace(
            rng,
            [("idle", 1.0), ("process", 3.0), ("idle", gap_s), ("process", 3.0), ("idle", 1.0)],
        )
        assert len(segment(trace, params)) == 2

    def test_segments_sorted_disjoint(self, rng):
        trace, _ = idle_process_trace(
            rng,
            [("idle", 1.0)]
            + [("process", 2.0), ("idle", 1.0)] * 3,
        )
        segments = segment(trace, SegmentationParams())
        for a, b in zip(segments, segments[1:]):
            assert a.end <= b.start


class TestSegmentType:
    def test_invalid_bounds(self):
        with pytest.raises(ParameterError):
            Segment(start=5, end=5)
        with pytest.raises(ParameterError):
            Segment(start=-1, end=3)


class TestTraceIO:
    def test_binary_round_trip(self, tmp_path, rng):
        trace = Trace(rng.standard_normal(999).astype(np.float32).astype(float), DT,
                      unit="m/s2", source_id="unit-test")
        path = write_trace(trace, tmp_path / "t.bin")
        back = read_trace(path)
        assert np.array_equal(back.samples, trace.samples)
        assert back.sample_interval == trace.sample_interval
        assert back.unit == "m/s2"
        assert back.source_id == "unit-test"

    def test_binary_size_mismatch(self, tmp_path, rng):
        path = write_trace(Trace(rng.standard_normal(100), DT), tmp_path / "t.bin")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError):
            read_trace(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            read_trace(tmp_path / "nope.bin")

    def test_csv_round_trip(self, tmp_path, rng):
        trace = Trace(rng.standard_normal(57), 6.5e-5, source_id="csvtest")
        path = write_trace_csv(trace, tmp_path / "t.csv")
        text = path.read_text()
        assert "# sample_interval=6.5e-05" in text
        assert "accel" in text.splitlines()
        back = read_trace_csv(path)
        assert np.allclose(back.samples, trace.samples, rtol=0, atol=0)
        assert back.sample_interval == 6.5e-5

    def test_csv_missing_interval(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("accel\n1.0\n2.0\n")
        with pytest.raises(FormatError):
            read_trace_csv(path)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# sample_interval=1e-4\nvoltage\n1.0\n")
        with pytest.raises(FormatError):
            read_trace_csv(path)


class TestSegmentsCSV:
    def test_round_trip(self, tmp_path):
        segments = [Segment(10, 20), Segment(40, 90)]
        path = write_segments_csv(segments, DT, tmp_path / "s.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "start_index,end_index,start_s,end_s"
        back = read_segments_csv(path)
        assert [(s.start, s.end) for s in back] == [(10, 20), (40, 90)]

    def test_empty_is_header_only(self, tmp_path):
        path = write_segments_csv([], DT, tmp_path / "s.csv")
        assert path.read_text() == "start_index,end_index,start_s,end_s\n"
        assert read_segments_csv(path) == []
