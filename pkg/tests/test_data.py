"""Tests for frame construction, CSV ingestion, windowing, and synthesis."""

from dataclasses import replace

import numpy as np
import pytest

from driftcast.data import (
    ContextMode,
    PeriodSplit,
    ShiftScenario,
    TimeSeriesFrame,
    align_and_fill,
    denormalize,
    gen_synthetic,
    load_csv,
    make_windows,
    normalize,
    parse_timestamp,
    scenario_from_dict,
    scenario_preset,
    split_periods,
)
from driftcast.errors import DataError

T0 = parse_timestamp("2019-01-01T00:00:00")
HOUR = np.timedelta64(1, "h")


def hourly(n, start=T0):
    return start + np.arange(n) * HOUR


def frame_of(n=48, seed=0, channels=("energy", "mobility", "temperature")):
    rng = np.random.default_rng(seed)
    cols = {c: np.abs(rng.standard_normal(n)) + 1.0 for c in channels}
    return TimeSeriesFrame(hourly(n), cols)


def csv_text(rows, header="timestamp,energy,mobility,temperature"):
    return header + "\n" + "\n".join(rows) + "\n"


class TestFrame:
    def test_rejects_duplicate_timestamps(self):
        ts = np.array([T0, T0], dtype="datetime64[s]")
        with pytest.raises(DataError, match="strictly increasing"):
            TimeSeriesFrame(ts, {"energy": np.ones(2)})

    def test_rejects_off_hour(self):
        ts = np.array([T0, T0 + np.timedelta64(30, "m")], dtype="datetime64[s]")
        with pytest.raises(DataError, match="hour boundary"):
            TimeSeriesFrame(ts, {"energy": np.ones(2)})

    def test_rejects_negative_raw_energy(self):
        with pytest.raises(DataError, match="negative"):
            TimeSeriesFrame(hourly(3), {"energy": np.array([1.0, -0.1, 2.0])})

    def test_subrange_half_open(self):
        f = frame_of(10)
        sub = f.subrange(T0 + 2 * HOUR, T0 + 5 * HOUR)
        assert len(sub) == 3
        assert sub.timestamps[0] == T0 + 2 * HOUR


class TestLoadCsv:
    def test_round_trip(self, tmp_path):
        f = frame_of(24)
        path = tmp_path / "data.csv"
        f.write_csv(str(path))
        loaded = load_csv(str(path))
        np.testing.assert_array_equal(loaded.timestamps, f.timestamps)
        for name in f.channel_names:
            np.testing.assert_array_equal(loaded.channels[name], f.channels[name])

    def test_empty_data_section_errors(self):
        with pytest.raises(DataError, match="no rows"):
            load_csv(csv_text([]), is_text=True)

    def test_out_of_order_rows_sorted(self):
        text = csv_text(
            [
                "2019-01-01T02:00:00,1.0,2.0,3.0",
                "2019-01-01T00:00:00,4.0,5.0,6.0",
                "2019-01-01T01:00:00,7.0,8.0,9.0",
            ]
        )
        f = load_csv(text, is_text=True)
        np.testing.assert_array_equal(f.channels["energy"], [4.0, 7.0, 1.0])

    def test_duplicate_timestamp_named_in_error(self):
        text = csv_text(
            [
                "2019-01-01T00:00:00,1.0,2.0,3.0",
                "2019-01-01T00:00:00,4.0,5.0,6.0",
            ]
        )
        with pytest.raises(DataError, match="2019-01-01T00:00:00"):
            load_csv(text, is_text=True)

    def test_bad_rows_rejected_with_line_numbers(self, caplog):
        text = csv_text(
            [
                "2019-01-01T00:00:00,1.0,2.0,3.0",
                "not-a-time,1.0,2.0,3.0",
                "2019-01-01T02:00:00,oops,2.0,3.0",
                "2019-01-01T03:00:00,1.0,,3.0",
                "2019-01-01T04:00:00,1.0,2.0,3.0",
            ]
        )
        with caplog.at_level("WARNING", logger="driftcast.data"):
            f = load_csv(text, is_text=True)
        assert len(f) == 2
        messages = " | ".join(r.message for r in caplog.records)
        assert "line 3" in messages
        assert "line 4" in messages
        assert "line 5" in messages

    def test_header_mismatch(self):
        with pytest.raises(DataError, match="schema"):
            load_csv("time,energy\n2019-01-01T00:00:00,1.0\n", is_text=True)

    def test_subset_schema(self):
        text = "timestamp,energy\n2019-01-01T00:00:00,1.0\n2019-01-01T01:00:00,2.0\n"
        f = load_csv(text, schema=("timestamp", "energy"), is_text=True)
        assert f.channel_names == ("energy",)


class TestAlignAndFill:
    def test_identical_grids_concatenate_channels(self):
        a = frame_of(24, channels=("energy",))
        b = frame_of(24, seed=1, channels=("mobility",))
        merged = align_and_fill(a, b)
        assert set(merged.channel_names) == {"energy", "mobility"}
        assert len(merged) == 24

    def test_single_missing_hour_interpolated(self):
        ts = np.concatenate([hourly(3), hourly(3, T0 + 4 * HOUR)])
        vals = np.array([0.0, 1.0, 2.0, 4.0, 5.0, 6.0])
        f = TimeSeriesFrame(ts, {"energy": vals})
        filled = align_and_fill(f)
        assert len(filled) == 7
        assert filled.channels["energy"][3] == pytest.approx(3.0)

    def test_long_gap_splits_and_keeps_longest(self, caplog):
        ts = np.concatenate([hourly(5), hourly(20, T0 + 17 * HOUR)])  # 12h gap
        vals = np.arange(25.0)
        f = TimeSeriesFrame(ts, {"energy": vals})
        with caplog.at_level("INFO", logger="driftcast.data"):
            out = align_and_fill(f)
        assert len(out) == 20
        assert out.timestamps[0] == T0 + 17 * HOUR

    def test_non_overlapping_frames_error(self):
        a = TimeSeriesFrame(hourly(3), {"energy": np.ones(3)})
        b = TimeSeriesFrame(hourly(3, T0 + 100 * HOUR), {"mobility": np.ones(3)})
        with pytest.raises(DataError, match="overlap"):
            align_and_fill(a, b)


class TestNormalize:
    def test_round_trip(self):
        f = frame_of(48)
        norm = normalize(f, (T0, T0 + 24 * HOUR))
        back = denormalize(norm)
        for name in f.channel_names:
            np.testing.assert_allclose(back.channels[name], f.channels[name], atol=1e-9)

    def test_stats_isolated_to_range(self):
        f = frame_of(48)
        norm1 = normalize(f, (T0, T0 + 24 * HOUR))
        tampered = {k: v.copy() for k, v in f.channels.items()}
        tampered["energy"][30:] += 100.0  # outside the stats range
        f2 = TimeSeriesFrame(f.timestamps, tampered)
        norm2 = normalize(f2, (T0, T0 + 24 * HOUR))
        assert norm1.stats == norm2.stats

    def test_constant_channel_rejected(self):
        f = TimeSeriesFrame(hourly(24), {"energy": np.full(24, 5.0)})
        with pytest.raises(DataError, match="constant"):
            normalize(f, (T0, T0 + 24 * HOUR))


class TestMakeWindows:
    def test_exact_boundary_count(self):
        f = frame_of(24 + 24)  # L + H rows -> exactly one window
        ws = make_windows(f, 24, 24, ContextMode.NONE)
        assert len(ws) == 1

    def test_none_context_shape(self):
        f = frame_of(60)
        ws = make_windows(f, 24, 24, ContextMode.NONE)
        assert ws.windows.shape[1:] == (1, 24)
        assert ws.channel_names == ("energy",)

    def test_energy_channel_always_first(self):
        f = frame_of(60)
        for mode in ContextMode:
            ws = make_windows(f, 24, 12, mode)
            assert ws.channel_names[0] == "energy"

    def test_window_causality_audit(self):
        f = frame_of(80)
        ws = make_windows(f, 24, 24, ContextMode.BOTH)
        for i in (0, 5, len(ws) - 1):
            issue = ws.issue_timestamps[i]
            idx = f.index_of(issue)
            # window covers idx-L+1 .. idx; target covers idx+1 .. idx+H
            np.testing.assert_array_equal(ws.windows[i, 0], f.channels["energy"][idx - 23 : idx + 1])
            np.testing.assert_array_equal(ws.targets[i], f.channels["energy"][idx + 1 : idx + 25])

    def test_gap_frame_rejected(self):
        ts = np.concatenate([hourly(30), hourly(30, T0 + 40 * HOUR)])
        f = TimeSeriesFrame(ts, {"energy": np.ones(60)})
        with pytest.raises(DataError, match="gap-free"):
            make_windows(f, 4, 4, ContextMode.NONE)


class TestPeriods:
    def test_labels_with_boundary_inside(self):
        ts = hourly(10)
        labels = split_periods(ts, T0 + 5 * HOUR)
        assert list(labels[:5]) == ["pre"] * 5
        assert list(labels[5:]) == ["post"] * 5

    def test_boundary_before_range_all_post(self):
        assert set(split_periods(hourly(5), T0 - 100 * HOUR)) == {"post"}

    def test_boundary_after_range_all_pre(self):
        assert set(split_periods(hourly(5), T0 + 100 * HOUR)) == {"pre"}

    def test_step_exactly_at_boundary_is_post(self):
        labels = split_periods(hourly(3), T0 + HOUR)
        assert list(labels) == ["pre", "post", "post"]

    def test_by_hours_validates_ranges(self):
        f = frame_of(24 * 10)
        split = PeriodSplit.by_hours(f, 48, 48, boundary="2019-01-05T00:00:00")
        split.validate()
        assert split.online[0] == T0 + 96 * HOUR
        with pytest.raises(DataError):
            PeriodSplit.by_hours(f, 200, 200)


class TestGenSynthetic:
    def test_deterministic_per_seed(self):
        a = gen_synthetic(scenario_preset("default"))
        b = gen_synthetic(scenario_preset("default"))
        for name in a.channel_names:
            np.testing.assert_array_equal(a.channels[name], b.channels[name])

    def test_frame_invariants(self):
        f = gen_synthetic(scenario_preset("default"))
        assert np.all(f.channels["energy"] >= 0)
        assert np.all(f.channels["mobility"] >= 0)
        assert f.is_contiguous_hourly()

    def test_no_shift_means_match(self):
        sc = replace(scenario_preset("default"), mobility_collapse=1.0, decoupling=1.0, seed=3)
        f = gen_synthetic(sc)
        post = f.timestamps >= parse_timestamp(sc.onset)
        pre_e, post_e = f.channels["energy"][~post], f.channels["energy"][post]
        # Welch two-sample t; alpha=0.01 -> fail to reject when |t| < 2.576
        t = (pre_e.mean() - post_e.mean()) / np.sqrt(pre_e.var() / pre_e.size + post_e.var() / post_e.size)
        assert abs(t) < 2.576

    def test_mobility_collapse_factor(self):
        # damp the slow day-amplitude process so the pre/post sample means
        # estimate the collapse factor tightly
        for seed in (0, 4, 11):
            sc = replace(
                scenario_preset("default"),
                mobility_collapse=0.2,
                decoupling=1.0,
                day_sigma=0.05,
                day_rho=0.0,
                seed=seed,
            )
            f = gen_synthetic(sc)
            post = f.timestamps >= parse_timestamp(sc.onset)
            ratio = f.channels["mobility"][post].mean() / f.channels["mobility"][~post].mean()
            assert abs(ratio - 0.2) / 0.2 < 0.05

    def test_bc1_calibration(self):
        f = gen_synthetic(scenario_preset("bc1"))
        assert abs(f.channels["energy"].mean() - 207.27) / 207.27 < 0.10
        assert abs(f.channels["mobility"].mean() - 661.4) / 661.4 < 0.15

    def test_invalid_severity_rejected(self):
        with pytest.raises(DataError, match="mobility_collapse"):
            gen_synthetic(replace(scenario_preset("default"), mobility_collapse=1.5))

    def test_onset_must_be_inside(self):
        with pytest.raises(DataError, match="onset"):
            gen_synthetic(replace(scenario_preset("default"), onset="2035-01-01T00:00:00"))

    def test_scenario_from_dict_overrides(self):
        sc = scenario_from_dict({"seed": 9, "mobility_collapse": 0.5}, base=scenario_preset("default"))
        assert sc.seed == 9
        assert sc.mobility_collapse == 0.5
        with pytest.raises(DataError, match="unknown scenario field"):
            scenario_from_dict({"bogus": 1})


class TestLeakage:
    def test_windowing_never_reads_future(self):
        # zeroing all stream values after the issue timestamp leaves the window unchanged
        f = frame_of(90, seed=5)
        ws = make_windows(f, 24, 24, ContextMode.BOTH)
        i = 10
        issue = ws.issue_timestamps[i]
        idx = f.index_of(issue)
        mutated = {k: v.copy() for k, v in f.channels.items()}
        for k in mutated:
            mutated[k][idx + 1 :] = 0.0
        f2 = TimeSeriesFrame(f.timestamps, mutated)
        ws2 = make_windows(f2, 24, 24, ContextMode.BOTH)
        np.testing.assert_array_equal(ws.windows[i], ws2.windows[i])
