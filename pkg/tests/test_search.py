import json

import pytest
from hypothesis import given, settings, strategies as st

from webfps.platform import PageWorkload, ProcessorSetting, setting_power, true_fps
from webfps.search import (
    SettingTable, exhaustive_oracle, search_literal, search_min_feasible, select_setting,
)

LADDER = [10, 20, 30, 40, 50]


def reference_literal(fps, fps_min):
    """Plain transcription over a list, kept separate from the library version."""
    n = len(fps)
    low, high = 0, n - 1
    while low <= high:
        mid = (low + high) // 2
        if fps[mid] > fps_min:
            high = mid - 1
        elif fps[mid] < fps_min:
            low = mid + 1
        else:
            return mid
    if max(fps) < fps_min:
        return n - 1
    lo_c, hi_c = min(max(low, 0), n - 1), min(max(high, 0), n - 1)
    if fps[lo_c] - fps_min < fps_min - fps[hi_c]:
        return min(max(low + 1, 0), n - 1)
    return hi_c


def linear_scan_min_feasible(fps, power, clusters, fps_min):
    best = None
    for i in range(len(fps)):
        if fps[i] < fps_min:
            continue
        if best is None or power[i] < power[best] or (power[i] == power[best] and clusters[i] == "little"
                                                      and clusters[best] != "little"):
            best = i
    return best


# -------------------------------------------------------------------- literal


@pytest.mark.parametrize("fps_min,expected", [(30, 2), (45, 3), (48, 4)])
def test_literal_hand_examples(fps_min, expected):
    assert search_literal(SettingTable.from_values(LADDER), fps_min).index == expected


def test_literal_quirk_flagged_infeasible():
    res = search_literal(SettingTable.from_values(LADDER), 45)
    assert not res.feasible and res.setting == 3


def test_literal_nothing_reaches_target():
    res = search_literal(SettingTable.from_values(LADDER), 999)
    assert res.index == 4 and not res.feasible


def test_trace_json():
    res = search_literal(SettingTable.from_values(LADDER), 30)
    d = json.loads(res.trace_json())
    assert d["index"] == 2 and d["visited"] == [{"index": 2, "fps": 30.0}]


@settings(max_examples=500)
@given(st.lists(st.floats(0, 120), min_size=2, max_size=32).map(sorted), st.floats(0.5, 130))
def test_literal_matches_reference_and_stays_in_bounds(fps, fps_min):
    table = SettingTable.from_values(fps)
    res = search_literal(table, fps_min)
    assert 0 <= res.index < len(fps)
    assert res.index == reference_literal(fps, fps_min)
    assert all(0 <= i < len(fps) for i, _ in res.trace)


def test_table_index_guard():
    t = SettingTable.from_values(LADDER)
    with pytest.raises(IndexError):
        t.fps(5)
    with pytest.raises(IndexError):
        t.fps(-1)


def test_table_errors():
    with pytest.raises(ValueError):
        SettingTable.from_values([])
    with pytest.raises(ValueError):
        SettingTable([0, 1], lambda i: 1.0, frequencies=[2.0, 1.0])
    with pytest.raises(ValueError):
        search_literal(SettingTable.from_values(LADDER), 0)
    with pytest.raises(ValueError):
        select_setting(SettingTable.from_values(LADDER), 30, "greedy")


def test_predictions_cached():
    calls = []
    t = SettingTable(list(range(5)), lambda i: calls.append(i) or LADDER[i])
    search_literal(t, 45)
    search_literal(t, 45)
    assert len(calls) == len(set(calls))


# --------------------------------------------------------------- min-feasible


def test_min_feasible_examples():
    t = SettingTable.from_values(LADDER)
    assert search_min_feasible(t, 45).index == 4
    assert search_min_feasible(t, 5).index == 0
    res = search_min_feasible(t, 999)
    assert res.index == 4 and not res.feasible


def test_min_feasible_picks_cheaper_cluster():
    fps = [10, 40, 20, 50, 60]
    clusters = ["little", "little", "big", "big", "big"]
    t = SettingTable.from_values(fps, power=[1, 2, 3, 4, 5], clusters=clusters)
    assert search_min_feasible(t, 35).index == 1
    t = SettingTable.from_values(fps, power=[1, 9, 3, 4, 5], clusters=clusters)
    assert search_min_feasible(t, 35).index == 3


def test_min_feasible_tie_goes_to_little():
    t = SettingTable.from_values([30, 30], power=[2.0, 2.0], clusters=["big", "little"])
    assert search_min_feasible(t, 30).index == 1


@st.composite
def monotone_tables(draw):
    n = draw(st.integers(2, 32))
    n_little = draw(st.integers(0, n))
    clusters = ["little"] * n_little + ["big"] * (n - n_little)
    fps, power = [], []
    for label in ("little", "big"):
        k = clusters.count(label)
        fps += sorted(draw(st.lists(st.floats(0, 80), min_size=k, max_size=k)))
        power += sorted(draw(st.lists(st.floats(0.1, 10), min_size=k, max_size=k)))
    return fps, power, clusters


@settings(max_examples=1000)
@given(monotone_tables(), st.floats(1, 90))
def test_min_feasible_matches_linear_scan(table, fps_min):
    fps, power, clusters = table
    res = search_min_feasible(SettingTable.from_values(fps, power, clusters), fps_min)
    expected = linear_scan_min_feasible(fps, power, clusters, fps_min)
    if expected is None:
        assert res.index == len(fps) - 1 and not res.feasible
    else:
        assert res.feasible and power[res.index] == power[expected]
        if clusters[expected] == "little":
            assert clusters[res.index] == "little"


@settings(max_examples=300)
@given(st.lists(st.floats(0, 120), min_size=2, max_size=32).map(sorted), st.floats(0.5, 130))
def test_modes_agree_on_exact_match(fps, fps_min):
    # an exact prediction hit is returned as-is by both modes (duplicates may differ in index only)
    if fps_min in fps:
        lit = search_literal(SettingTable.from_values(fps), fps_min)
        mf = search_min_feasible(SettingTable.from_values(fps), fps_min)
        assert fps[lit.index] == fps[mf.index] == fps_min


# ----------------------------------------------------------------- exhaustive


def test_exhaustive_single_feasible(tx2):
    page = PageWorkload("x", 0.6)
    settings_ = tx2.settings_by_frequency()
    fps = [true_fps(page, 4000, s, tx2) for s in settings_]
    target = max(fps)
    s, ok = exhaustive_oracle(tx2, page, 4000, target)
    assert ok and true_fps(page, 4000, s, tx2) == target


def test_exhaustive_none_feasible(tx2):
    s, ok = exhaustive_oracle(tx2, PageWorkload("x", 0.3), 500, 1000)
    assert not ok and s == tx2.settings_by_frequency()[-1]


def test_exhaustive_is_minimum_power(tx2, xu3):
    for p in (tx2, xu3):
        for c in (0.05, 0.3, 0.8):
            page = PageWorkload("x", c)
            for rate in (125, 2000):
                s, ok = exhaustive_oracle(p, page, rate, 30)
                feasible = [t for t in p.setting_table if true_fps(page, rate, t, p) >= 30]
                if ok:
                    assert setting_power(page, rate, s, p) == min(setting_power(page, rate, t, p) for t in feasible)


def test_perfect_predictor_matches_exhaustive(tx2, records, manifest):
    agree = total = 0
    for r in records[:30]:
        w = tx2.workload_of(r.id, r.features, manifest)
        for rate in (125, 1000, 8000):
            table = SettingTable.for_platform(tx2, lambda s: true_fps(w, rate, s, tx2),
                                              lambda s: setting_power(w, rate, s, tx2))
            got = search_min_feasible(table, 30).setting
            want, _ = exhaustive_oracle(tx2, w, rate, 30)
            agree += got == want
            total += 1
    assert agree == total


def test_for_platform_sorted(tx2):
    t = SettingTable.for_platform(tx2, lambda s: s.render_freq)
    f = [s.render_freq for s in t.settings]
    assert f == sorted(f) and len(t) == 14
    assert isinstance(t.settings[0], ProcessorSetting)
