import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqnilm.data import (
    ApplianceProfile,
    PowerSeries,
    SplitSpec,
    SynthSpec,
    align_house,
    default_spec,
    denormalize,
    fit_norm_stats,
    make_windows,
    normalize,
    parse_channel_file,
    read_household,
    resample_align,
    resample_mains,
    split_seen_unseen,
    synth_generate,
    tail_ranges,
    write_household,
)
from seqnilm.data.align import AlignedHouse, fill_short_gaps
from seqnilm.data.cache import load_window_sets, save_window_sets, to_float32
from seqnilm.data.synth import dump_synth_spec, load_synth_spec
from seqnilm.errors import ConfigError, DataError, ParseError
from seqnilm.model import NormStats

T0 = 1_500_000_000.0


def series(name, t, p, period=6.0):
    return PowerSeries(name, np.asarray(t, float), np.asarray(p, float), period)


def aligned(n, mains=None, apps=None, mask=None, house="1", period=6.0):
    ts = T0 + period * np.arange(n)
    mains = np.zeros(n) if mains is None else np.asarray(mains, float)
    apps = np.zeros((1, n)) if apps is None else np.atleast_2d(np.asarray(apps, float))
    mask = np.ones(n, bool) if mask is None else np.asarray(mask, bool)
    return AlignedHouse(house, ts, mains, apps, [f"a{i}" for i in range(apps.shape[0])], mask, period)


class TestParse:
    def test_single_line(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("1234567890 85.2\n")
        s = parse_channel_file(f)
        assert s.timestamps.tolist() == [1234567890.0] and s.power.tolist() == [85.2]

    def test_empty(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("")
        assert parse_channel_file(f).empty

    def test_malformed(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("abc 5\n")
        with pytest.raises(ParseError) as exc:
            parse_channel_file(f)
        assert exc.value.line_no == 1

    def test_malformed_reports_later_line(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("1 2\n2 3\n3\n")
        with pytest.raises(ParseError, match="line 3"):
            parse_channel_file(f)

    def test_duplicates_keep_last(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("10 1\n10 2\n16 3\n")
        s = parse_channel_file(f)
        assert s.timestamps.tolist() == [10, 16] and s.power.tolist() == [2, 3]
        assert s.metadata["duplicates"] == 1

    def test_unsorted_counted(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("20 2\n10 1\n30 3\n")
        s = parse_channel_file(f)
        assert s.timestamps.tolist() == [10, 20, 30] and s.power.tolist() == [1, 2, 3]
        assert s.metadata["unsorted"] == 1

    def test_extra_columns_ignored(self, tmp_path):
        f = tmp_path / "c.dat"
        f.write_text("10 100.5 230.1 240\n")
        assert parse_channel_file(f).power.tolist() == [100.5]

    @pytest.mark.parametrize("line", ["10 -1", "10 nan", "10 inf"])
    def test_invalid_power(self, tmp_path, line):
        f = tmp_path / "c.dat"
        f.write_text(line + "\n")
        with pytest.raises(ParseError):
            parse_channel_file(f)


class TestAlign:
    def test_mains_mean_over_bin(self):
        m = series("mains", T0 + np.arange(6), np.arange(1, 7))
        a = series("app", [T0], [10.0])
        out = resample_align(m, a)
        assert out.mains.tolist() == [3.5]
        assert out.mask.tolist() == [True]

    def test_appliance_on_grid_unchanged(self):
        t = T0 + 6 * np.arange(5)
        p = np.array([0, 10, 20, 30, 40.0])
        out = resample_align(series("mains", t, np.ones(5)), series("app", t, p))
        np.testing.assert_array_equal(out.appliances[0], p)
        np.testing.assert_array_equal(out.timestamps, t)

    def test_nearest_snapping(self):
        t = T0 + 6 * np.arange(4)
        app = series("app", [T0 + 2, T0 + 5, T0 + 7.5, T0 + 19], [1, 2, 3, 4])
        out = resample_align(series("mains", t, np.ones(4)), app)
        # grid 6 has samples 1 s and 1.5 s away; grid 12 has none within 3 s but is filled forward
        assert out.appliances[0].tolist() == [1, 2, 2, 4]

    def test_grid_anchor_rounds_down(self):
        m = series("mains", T0 + 2 + np.arange(20), np.ones(20))
        a = series("app", T0 + 6 * np.arange(4), np.ones(4))
        out = resample_align(m, a)
        assert out.timestamps[0] == T0

    def test_four_missing_bins_stay_invalid(self):
        t = T0 + 6 * np.arange(10)
        keep = np.ones(10, bool)
        keep[3:7] = False
        out = resample_align(series("mains", t[keep], np.ones(keep.sum())), series("app", t, np.ones(10)))
        assert out.mask.tolist() == [True] * 3 + [False] * 4 + [True] * 3
        assert np.all(out.mains[3:7] == 0)

    def test_three_missing_bins_filled(self):
        t = T0 + 6 * np.arange(10)
        p = np.arange(10, dtype=float)
        keep = np.ones(10, bool)
        keep[3:6] = False
        out = resample_align(series("mains", t, np.ones(10)), series("app", t[keep], p[keep]))
        assert out.mask.all()
        assert out.appliances[0].tolist() == [0, 1, 2, 2, 2, 2, 6, 7, 8, 9]

    def test_leading_gap_not_filled(self):
        v, h = fill_short_gaps(np.array([0, 0, 5.0, 6.0]), np.array([False, False, True, True]))
        assert h.tolist() == [False, False, True, True]

    def test_idempotent_on_period_series(self, rng):
        t = T0 + 6 * np.arange(50)
        m = series("mains", t, rng.uniform(0, 3000, 50))
        a = series("app", t, rng.uniform(0, 100, 50))
        out = resample_align(m, a)
        np.testing.assert_array_equal(out.timestamps, t)
        np.testing.assert_array_equal(out.mains, m.power)
        np.testing.assert_array_equal(out.appliances[0], a.power)

    def test_disjoint_ranges_empty(self):
        m = series("mains", T0 + np.arange(10), np.ones(10))
        a = series("app", T0 + 1000 + 6 * np.arange(3), np.ones(3))
        out = resample_align(m, a)
        assert len(out) == 0

    def test_resample_mains_alone(self):
        grid, vals, have = resample_mains(series("mains", T0 + np.arange(12), np.arange(12.0)))
        assert grid.tolist() == [T0, T0 + 6]
        assert vals.tolist() == [2.5, 8.5] and have.all()


class TestWindows:
    def test_count(self):
        ws = make_windows(aligned(10), 4, 2, [1.0])
        assert [w.start for w in ws] == [T0 + 6 * o for o in (0, 2, 4, 6)]

    def test_too_short(self):
        assert make_windows(aligned(3), 4, 2, [1.0]) == []

    def test_tiling(self):
        ws = make_windows(aligned(12, mains=np.arange(12)), 4, 4, [1.0])
        assert np.concatenate([w.mains for w in ws]).tolist() == list(range(12))

    def test_drop_mostly_invalid(self):
        mask = np.ones(20, bool)
        mask[0:2] = False  # 2/10 invalid in the first window, 0 in the second
        ws = make_windows(aligned(20, mask=mask), 10, 10, [1.0])
        assert [w.start for w in ws] == [T0 + 60]
        mask[:] = True
        mask[0] = False  # exactly 10% invalid is kept
        assert len(make_windows(aligned(20, mask=mask), 10, 10, [1.0])) == 2

    def test_states_from_raw_threshold(self):
        ws = make_windows(aligned(4, apps=[[0, 49.9, 50, 300]]), 4, 4, [50.0])
        assert ws[0].states.tolist() == [[0, 0, 1, 1]]

    def test_bad_args(self):
        with pytest.raises(ConfigError):
            make_windows(aligned(4), 0, 1, [1.0])


class TestNormalize:
    stats = NormStats(500.0, 250.0, (300.0,))

    def test_mean_maps_to_zero(self):
        w = make_windows(aligned(4, mains=[500.0] * 4), 4, 4, [50.0])[0]
        assert normalize(w, self.stats).mains.tolist() == [0.0] * 4

    def test_max_power_maps_to_one(self):
        w = make_windows(aligned(4, apps=[[300.0, 0, 150, 600]]), 4, 4, [50.0])[0]
        nw = normalize(w, self.stats)
        assert nw.targets.tolist() == [[1.0, 0.0, 0.5, 1.0]]
        assert nw.states.tolist() == w.states.tolist() == [[1, 0, 1, 1]]

    def test_round_trip(self, rng):
        w = make_windows(aligned(16, mains=rng.uniform(0, 4000, 16), apps=[rng.uniform(0, 300, 16)]),
                         16, 16, [50.0])[0]
        back = denormalize(normalize(w, self.stats), self.stats)
        np.testing.assert_allclose(back.mains, w.mains, atol=1e-6)
        np.testing.assert_allclose(back.targets, w.targets, atol=1e-6)

    def test_zero_std(self):
        with pytest.raises(ConfigError):
            NormStats(1.0, 0.0, (1.0,))

    def test_labels_consistent_after_denormalising(self, rng):
        w = make_windows(aligned(32, apps=[rng.uniform(0, 300, 32)]), 32, 32, [50.0])[0]
        nw = normalize(w, self.stats)
        rederived = (nw.targets * 300.0 >= 50.0 - 1e-9).astype(np.uint8)
        np.testing.assert_array_equal(rederived, nw.states)

    def test_fit_stats(self):
        ws = make_windows(aligned(8, mains=[1, 2, 3, 4, 5, 6, 7, 8]), 4, 4, [1.0])
        s = fit_norm_stats(ws, [10.0])
        assert s.mains_mean == 4.5 and s.mains_std == pytest.approx(np.std(np.arange(1, 9)))


def two_houses(n=200):
    return {"1": aligned(n, house="1"), "2": aligned(n, house="2"), "3": aligned(n, house="3")}


def keys(ws):
    return {(w.house, w.start + 6.0 * i) for w in ws for i in range(w.length)}


class TestSplit:
    def test_unseen_house_absent_from_train(self):
        houses = two_houses()
        spec = SplitSpec(["1", "3"], tail_ranges(houses, ["1", "3"], 0.2), ["2"])
        sets = split_seen_unseen(spec, houses, 10, [1.0], train_stride=5)
        assert all(w.house != "2" for w in sets["train"])
        assert {w.house for w in sets["unseen_test"]} == {"2"}

    def test_empty_seen_ranges(self):
        sets = split_seen_unseen(SplitSpec(["1"], {}, ["2"]), two_houses(), 10, [1.0])
        assert sets["seen_test"] == []
        assert len(sets["train"]) == 20

    def test_overlap_rejected(self):
        with pytest.raises(ConfigError):
            split_seen_unseen(SplitSpec(["1", "2"], {}, ["2"]), two_houses(), 10, [1.0])

    def test_ranges_on_non_train_house_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(["1"], {"2": [(0, 1)]}, []).validate()

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 0.9), st.integers(1, 12), st.integers(1, 12))
    def test_sets_disjoint(self, frac, L, stride):
        houses = two_houses(120)
        spec = SplitSpec(["1", "3"], tail_ranges(houses, ["1", "3"], frac), ["2"])
        sets = split_seen_unseen(spec, houses, L, [1.0], train_stride=stride)
        a, b, c = (keys(sets[k]) for k in ("train", "seen_test", "unseen_test"))
        assert not (a & b) and not (a & c) and not (b & c)

    def test_day_ratio_four_to_one(self):
        # 140 days at the 6 s period: 112 training days + 28 held-out days
        n = 140 * 14400
        house = aligned(n)
        spec = SplitSpec(["1"], tail_ranges({"1": house}, ["1"], 0.2), [])
        sets = split_seen_unseen(spec, {"1": house}, 480, [1.0])
        train_days = len(sets["train"]) * 480 / 14400
        test_days = len(sets["seen_test"]) * 480 / 14400
        assert (train_days, test_days) == (112, 28)
        assert train_days / test_days == 4


class TestSynth:
    def test_noise_free_additivity(self):
        spec = default_spec()
        spec.noise_std = 0.0
        out = synth_generate(spec, 3, 2 * 86400)
        total = sum(out[a.name].power for a in spec.appliances)
        np.testing.assert_array_equal(out["mains"].power - total, spec.base_load)

    def test_same_seed_identical(self):
        a = synth_generate(default_spec(), 7, 86400)
        b = synth_generate(default_spec(), 7, 86400)
        for k in a:
            np.testing.assert_array_equal(a[k].power, b[k].power)

    def test_other_seed_differs(self):
        a = synth_generate(default_spec(), 7, 86400)
        b = synth_generate(default_spec(), 8, 86400)
        assert not np.array_equal(a["fridge"].power, b["fridge"].power)

    def test_fridge_duty_cycle(self):
        # on 120 W for 600 s, off 1200 s: expected mean 120 * 600 / 1800 = 40 W
        spec = SynthSpec([ApplianceProfile("fridge", 120.0, 600.0, 1200.0, 0.3)], noise_std=0.0)
        out = synth_generate(spec, 1, 7 * 86400)
        assert out["fridge"].power.mean() == pytest.approx(40.0, rel=0.05)

    def test_rectangular_profile(self):
        out = synth_generate(default_spec(), 1, 86400)
        assert set(np.unique(out["dish_washer"].power)) <= {0.0, 2000.0}

    def test_mains_non_negative(self):
        spec = default_spec()
        spec.base_load, spec.noise_std = 0.0, 50.0
        assert np.all(synth_generate(spec, 2, 86400)["mains"].power >= 0)

    def test_period_grid(self):
        out = synth_generate(default_spec(), 1, 600)
        np.testing.assert_array_equal(np.diff(out["mains"].timestamps), 6.0)
        assert len(out["mains"]) == 100

    @pytest.mark.parametrize("field,value", [("on_duration", 0.0), ("off_duration", -5.0)])
    def test_bad_durations(self, field, value):
        prof = ApplianceProfile("x", 10.0, 60.0, 60.0)
        setattr(prof, field, value)
        with pytest.raises(ConfigError):
            synth_generate(SynthSpec([prof]), 1, 600)

    def test_spec_file_round_trip(self, tmp_path):
        f = tmp_path / "s.ini"
        f.write_text(dump_synth_spec(default_spec()))
        spec = load_synth_spec(f)
        assert [a.name for a in spec.appliances] == ["fridge", "dish_washer", "washing_machine"]
        assert spec.appliances[0].on_power == 120.0 and spec.appliances[0].on_threshold == 50.0

    def test_spec_file_errors(self, tmp_path):
        f = tmp_path / "s.ini"
        f.write_text("[appliance.x]\non_power = 10\n")
        with pytest.raises(ConfigError):
            load_synth_spec(f)


class TestHouseholds:
    def test_round_trip(self, tmp_path):
        data = synth_generate(default_spec(), 1, 3600)
        write_household(tmp_path / "house_4", "4", data, {"source": "synthetic"})
        hh = read_household(tmp_path / "house_4", ["fridge", "washing_machine"])
        assert hh.house == "4"
        assert list(hh.appliances) == ["fridge", "washing_machine"]
        np.testing.assert_allclose(hh.mains.power, data["mains"].power, atol=0.005)

    def test_labels_fallback_with_alias(self, tmp_path):
        d = tmp_path / "house_2"
        d.mkdir()
        (d / "labels.dat").write_text("1 aggregate\n2 dishwasher\n")
        (d / "channel_1.dat").write_text("0 100\n6 110\n")
        (d / "channel_2.dat").write_text("0 0\n6 10\n")
        hh = read_household(d, ["dish_washer"], aliases={"dish_washer": ["dishwasher"]})
        assert hh.house == "2"
        assert hh.appliances["dish_washer"].power.tolist() == [0, 10]

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_household(tmp_path)


class TestCache:
    def test_round_trip(self, tmp_path, rng):
        h = aligned(40, mains=rng.uniform(0, 3000, 40), apps=rng.uniform(0, 300, (2, 40)))
        stats = NormStats(1000.0, 500.0, (300.0, 300.0))
        ws = to_float32([normalize(w, stats) for w in make_windows(h, 8, 8, [50.0, 50.0])])
        save_window_sets(tmp_path, "k1", {"train": ws, "seen_test": []}, stats)
        sets, s2 = load_window_sets(tmp_path, "k1")
        assert s2 == stats
        assert sets["seen_test"] == []
        for a, b in zip(ws, sets["train"]):
            assert a.start == b.start and a.house == b.house
            for f in ("mains", "targets", "states", "mask"):
                np.testing.assert_array_equal(getattr(a, f), getattr(b, f))

    def test_missing_key(self, tmp_path):
        assert load_window_sets(tmp_path, "nope") is None
