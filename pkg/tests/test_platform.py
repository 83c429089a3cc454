import dataclasses
import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from webfps.model import attach_pcs, write_samples_csv
from webfps.platform import (
    DEFAULT_RATES, PageWorkload, PlatformSpecError, ProcessorSetting, generate_training_grid, infeasible_pairs,
    load_platform_spec, platform_from_dict, power_draw, render_utilization, setting_power, true_fps,
)


def fixture_dict(name):
    return json.loads(resources.files("webfps.data").joinpath("platforms", f"{name}.json").read_text())


def workloads(records, platform, manifest):
    return [platform.workload_of(r.id, r.features, manifest) for r in records]


# ------------------------------------------------------------------ loading


def test_fixture_ladders(xu3, tx2):
    assert xu3.big.max_freq == 2.0 and xu3.little.max_freq == 1.4
    assert tx2.big.max_freq == 2.0 and tx2.little.max_freq == 2.0
    for p in (xu3, tx2):
        assert len(p.setting_table) == 14
        assert sum(s.render_cluster == "big" for s in p.setting_table) == 8
        assert p.fps_cap == 60 and p.reconfiguration_overhead_ms == 10


def test_descending_ladder_rejected():
    d = fixture_dict("odroid-xu3")
    d["clusters"][0]["frequencies"] = [1.0, 0.8]
    with pytest.raises(PlatformSpecError, match=r"\$\.clusters\[0\]\.frequencies"):
        platform_from_dict(d)


def test_schema_errors_carry_field_paths():
    d = fixture_dict("jetson-tx2")
    d["oracle"]["a1"] = -1
    d["setting_table"][3]["render_cluster"] = "medium"
    with pytest.raises(PlatformSpecError) as e:
        platform_from_dict(d)
    assert "$.oracle.a1" in str(e.value) and "$.setting_table[3].render_cluster" in str(e.value)


def test_setting_off_ladder_rejected():
    d = fixture_dict("jetson-tx2")
    d["setting_table"][0]["render_freq"] = 0.55
    with pytest.raises(PlatformSpecError, match="not on the ladder"):
        platform_from_dict(d)


def test_big_must_outperform_little():
    d = fixture_dict("jetson-tx2")
    d["clusters"][1]["ipc_factor"] = 2.0
    with pytest.raises(PlatformSpecError, match="ipc_factor"):
        platform_from_dict(d)


def test_load_from_path_and_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps(fixture_dict("odroid-xu3")))
    assert load_platform_spec(p).name == "odroid-xu3"
    p.write_text("{not json")
    with pytest.raises(PlatformSpecError):
        load_platform_spec(p)


# ------------------------------------------------------------------- oracle


def test_fps_cap_in_the_limit(tx2):
    page = PageWorkload("x", 0.5)
    assert true_fps(page, 1000, ProcessorSetting("big", 1e9, 0.8), tx2) == tx2.fps_cap


def test_big_beats_little_at_same_frequency(tx2, xu3, records, manifest):
    for p in (tx2, xu3):
        shared = sorted(set(p.big.frequencies) & set(p.little.frequencies))
        assert shared
        for w in workloads(records, p, manifest)[:30]:
            for f in shared:
                for r in DEFAULT_RATES:
                    big = true_fps(w, r, ProcessorSetting("big", f, 0.8), p)
                    little = true_fps(w, r, ProcessorSetting("little", f, 0.8), p)
                    assert big >= little


def test_anchor_page_calibration(tx2, records, manifest):
    cal = tx2.calibration
    cnn = next(r for r in records if r.id == cal["anchor_page"])
    s = ProcessorSetting(**cal["anchor_setting"])
    fps = true_fps(tx2.workload_of(cnn.id, cnn.features, manifest), cal["anchor_rate_px_s"], s, tx2)
    assert fps == pytest.approx(31, abs=1)


def test_noise_is_seeded(tx2):
    page, s = PageWorkload("x", 0.3), tx2.setting_table[2]
    a = true_fps(page, 500, s, tx2, seed=7)
    assert a == true_fps(page, 500, s, tx2, seed=7)
    assert a != true_fps(page, 500, s, tx2)
    assert 0 <= a <= tx2.fps_cap


def test_negative_rate_rejected(tx2):
    with pytest.raises(ValueError):
        true_fps(PageWorkload("x", 0.1), -1, tx2.setting_table[0], tx2)


@settings(max_examples=300)
@given(st.floats(0, 2), st.floats(0, 20000), st.sampled_from(["big", "little"]), st.floats(0.2, 2.0),
       st.floats(0.01, 0.5))
def test_oracle_monotonicity(c, rate, cluster, f, step):
    p = load_platform_spec("jetson-tx2")
    s, faster = ProcessorSetting(cluster, f, 0.8), ProcessorSetting(cluster, f + step, 0.8)
    w = PageWorkload("x", c)
    assert true_fps(w, rate, faster, p) >= true_fps(w, rate, s, p)
    assert true_fps(PageWorkload("y", c + step), rate, s, p) <= true_fps(w, rate, s, p)
    assert true_fps(w, rate + 100 * step, s, p) <= true_fps(w, rate, s, p)


# -------------------------------------------------------------------- power


def test_power_examples(xu3, tx2):
    for p in (xu3, tx2):
        s = p.setting_table[0]
        idle = p.big.static_power_w + p.little.static_power_w
        other = p.other(s.render_cluster)
        idle_expected = idle + p.background_utilization * other.dyn_coeff_w_per_ghz3 * s.other_freq**3
        assert power_draw(s, dataclasses.replace(p, background_utilization=0.0), 0.0) == pytest.approx(idle)
        assert power_draw(s, p, 0.0) == pytest.approx(idle_expected)
    big20 = ProcessorSetting("big", 2.0, 0.6)
    little14 = ProcessorSetting("little", 1.4, 0.6)
    for u in (0.5, 1.0):
        assert power_draw(big20, xu3, u) > power_draw(little14, xu3, u)


@settings(max_examples=200)
@given(st.floats(0.05, 1.0), st.sampled_from(["big", "little"]), st.integers(0, 4))
def test_power_increases_with_frequency(u, cluster, i):
    p = load_platform_spec("odroid-xu3")
    ladder = p.cluster(cluster).frequencies
    i = min(i, len(ladder) - 2)
    lo, hi = ProcessorSetting(cluster, ladder[i], 0.6), ProcessorSetting(cluster, ladder[i + 1], 0.6)
    assert power_draw(hi, p, u) > power_draw(lo, p, u)


def test_power_monotone_in_frequency_at_true_utilization(tx2):
    # utilization falls as frequency rises, but u * f^3 still increases
    for c in (0.05, 0.3, 0.7):
        for cl in ("big", "little"):
            prev = -1.0
            for f in tx2.cluster(cl).frequencies:
                pw = setting_power(PageWorkload("x", c), 1000, ProcessorSetting(cl, f, 0.8), tx2)
                assert pw > prev
                prev = pw


def test_render_utilization_bounds(tx2):
    assert render_utilization(PageWorkload("x", 5.0), 16000, tx2.setting_table[0], tx2) == 1.0
    u = render_utilization(PageWorkload("x", 0.0), 0, ProcessorSetting("big", 2.0, 0.8), tx2)
    assert 0 < u < 1


# --------------------------------------------------------------------- grid


def test_grid_size_80_pages(records, tx2, manifest):
    grid = generate_training_grid(workloads(records[:80], tx2, manifest), DEFAULT_RATES, tx2, "scroll", 0)
    assert len(grid) == 8960
    assert all(0 <= m.fps <= tx2.fps_cap for m in grid)


def test_grid_single_point(tx2):
    one = dataclasses.replace(tx2, setting_table=tx2.setting_table[:1])
    assert len(generate_training_grid([PageWorkload("x", 0.2)], [500.0], one, "scroll", 0)) == 1


def test_grid_rejects_empty(tx2):
    with pytest.raises(ValueError):
        generate_training_grid([], DEFAULT_RATES, tx2, "scroll", 0)


def test_grid_regeneration_identical_csv(tmp_path, records, tx2, manifest):
    w = workloads(records[:10], tx2, manifest)
    pcs = {r.id: np.arange(3.0) for r in records[:10]}
    for name in ("a.csv", "b.csv"):
        write_samples_csv(tmp_path / name, attach_pcs(generate_training_grid(w, DEFAULT_RATES, tx2, "pinch", 5), pcs))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_grid_page_streams_independent(records, tx2, manifest):
    w = workloads(records[:6], tx2, manifest)
    full = generate_training_grid(w, DEFAULT_RATES, tx2, "scroll", 3)
    part = generate_training_grid(w[2:4], DEFAULT_RATES, tx2, "scroll", 3)
    by_page = [m for m in full if m.page_id in {w[2].id, w[3].id}]
    assert by_page == part


def test_feasibility_over_corpus(records, tx2, xu3, manifest):
    for p in (tx2, xu3):
        w = workloads(records, p, manifest)
        assert infeasible_pairs(w, DEFAULT_RATES, p, 30.0, "scroll") == []
        # the heavier pinch gesture leaves a few (page, rate) pairs short; they are reported, not dropped
        flagged = infeasible_pairs(w, DEFAULT_RATES, p, 30.0, "pinch")
        assert len(flagged) <= 5
        for page_id, rate in flagged:
            page = next(x for x in w if x.id == page_id)
            assert max(true_fps(page, rate, s, p, gesture="pinch") for s in p.setting_table) < 30.0
