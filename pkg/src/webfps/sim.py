"""Interaction-session replay under ML-guided and baseline governors.

A session is cut into fixed sampling windows (200 ms by default).  The ML and
oracle governors pick one setting per window; the built-in governors
(interactive, ondemand) and the sleeping eBrowser-style policy are stepped on a
10 ms tick.  Energy is integrated per tick or window; each window's FPS is
the noise-free oracle FPS of what actually ran.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import PageRecord
from .dom import FeatureManifest, dom_change_ratio
from .features import FeatureTransform
from .model import ModelRegistry
from .platform import (
    GESTURES, PageWorkload, PlatformSpec, ProcessorSetting, power_draw, render_utilization, true_fps,
)
from .search import SettingTable, exhaustive_oracle, select_setting

GOVERNORS = ("ml", "interactive", "ondemand", "ebrowser", "oracle")
TICK_MS = 10.0
DEFAULT_DURATION_MS = {"scroll": 2000.0, "pinch": 1000.0}


# ------------------------------------------------------------------- traces


@dataclass(frozen=True)
class EventTrace:
    gesture: str
    page_id: str
    samples: tuple[tuple[float, float], ...]  # (timestamp ms, rate px/s)
    swaps: tuple[tuple[float, str], ...] = ()  # (timestamp ms, new page id)

    def __post_init__(self):
        ts = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trace timestamps must be strictly increasing")
        if any(r < 0 for _, r in self.samples):
            raise ValueError("event rates must be >= 0")

    def to_jsonl(self) -> str:
        lines = [json.dumps({"gesture": self.gesture, "page_id": self.page_id})]
        swaps = dict(self.swaps)
        for t, r in self.samples:
            row = {"timestamp_ms": t, "rate_px_s": r}
            if t in swaps:
                row["swap_to"] = swaps.pop(t)
            lines.append(json.dumps(row))
        for t, page in sorted(swaps.items()):
            lines.append(json.dumps({"timestamp_ms": t, "swap_to": page}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "EventTrace":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows:
            raise ValueError("empty trace file")
        meta, samples, swaps = rows[0], [], []
        for row in rows[1:]:
            if "rate_px_s" in row:
                samples.append((float(row["timestamp_ms"]), float(row["rate_px_s"])))
            if "swap_to" in row:
                swaps.append((float(row["timestamp_ms"]), row["swap_to"]))
        return cls(meta["gesture"], meta["page_id"], tuple(samples), tuple(swaps))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path: str | Path) -> "EventTrace":
        return cls.from_jsonl(Path(path).read_text())


def make_trace(page_id: str, gesture: str, rate: float, duration_ms: Optional[float] = None,
               step_ms: float = TICK_MS, profile: str = "flat", start_ms: float = 0.0) -> EventTrace:
    """Synthetic gesture: one sample every ``step_ms`` at ``rate`` (flat) or ramping up to it."""
    if gesture not in GESTURES:
        raise ValueError(f"unknown gesture {gesture!r}")
    duration = DEFAULT_DURATION_MS[gesture] if duration_ms is None else duration_ms
    n = int(round(duration / step_ms))
    if profile == "flat":
        rates = np.full(n, float(rate))
    elif profile == "ramp":
        rates = float(rate) * np.linspace(0.25, 1.0, n) if n else np.zeros(0)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return EventTrace(gesture, page_id, tuple((start_ms + i * step_ms, float(r)) for i, r in enumerate(rates)))


# ---------------------------------------------------------------- governors


@dataclass(frozen=True)
class GovernorState:
    """Frequency index into a ladder plus load accumulated since the last sample."""

    ladder: tuple[float, ...]
    index: int
    next_eval_ms: float = 0.0
    util_sum: float = 0.0
    util_n: int = 0

    @property
    def freq(self) -> float:
        return self.ladder[self.index]


def initial_governor_state(ladder: Sequence[float], start_ms: float = 0.0, sample_ms: float = 80.0) -> GovernorState:
    """Start at the top of the ladder (input boost on touch), first sample after one period."""
    return GovernorState(tuple(ladder), len(ladder) - 1, start_ms + sample_ms)


def builtin_governor_step(kind: str, state: GovernorState, utilization: float, now_ms: float,
                          sample_ms: float = 80.0, hold_ms: float = 20.0) -> GovernorState:
    """Feed one utilization sample observed up to ``now_ms``; re-evaluate when a sample period is due.

    interactive: raise one step when mean load > 0.85 (then hold ``hold_ms``
    extra before the next evaluation), lower one step when the load would stay
    under 0.85 at the lower frequency.  ondemand: jump to max above 0.80,
    otherwise decay one step when the lower frequency would stay under 0.80.
    """
    if not 0.0 <= utilization <= 1.0:
        raise ValueError("utilization must lie in [0, 1]")
    s = replace(state, util_sum=state.util_sum + utilization, util_n=state.util_n + 1)
    if now_ms < s.next_eval_ms:
        return s
    load = s.util_sum / s.util_n
    i, top = s.index, len(s.ladder) - 1
    nxt = now_ms + sample_ms
    lower_ratio = s.ladder[i - 1] / s.ladder[i] if i > 0 else 0.0
    if kind == "interactive":
        if load > 0.85 and i < top:
            i += 1
            nxt += hold_ms
        elif i > 0 and load < 0.85 * lower_ratio:
            i -= 1
    elif kind == "ondemand":
        if load > 0.80:
            i = top
        elif i > 0 and load < 0.80 * lower_ratio:
            i -= 1
    else:
        raise ValueError(f"unknown built-in governor {kind!r}")
    return GovernorState(s.ladder, i, nxt, 0.0, 0)


@dataclass(frozen=True)
class UserRateModel:
    """Event rate (px/s) a user tolerates being processed, linear in their FPS_min."""

    intercept: float = 0.0
    slope: float = 120.0

    def acceptable_rate(self, fps_min: float) -> float:
        return max(0.0, self.intercept + self.slope * fps_min)

    @classmethod
    def fit(cls, fps_min: Sequence[float], rates: Sequence[float]) -> "UserRateModel":
        slope, intercept = np.polyfit(np.asarray(fps_min, float), np.asarray(rates, float), 1)
        return cls(float(intercept), float(slope))


@dataclass(frozen=True)
class EbrowserDecision:
    sleep_ms: float
    processed: int
    dropped: int


def ebrowser_step(window_start_ms: float, window_ms: float, event_queue: Sequence[tuple[float, float]],
                  fps_min: float, user_rate_model: UserRateModel = UserRateModel(),
                  sleep_ms: Optional[float] = None) -> EbrowserDecision:
    """Sleep at the start of the window; events timestamped inside the sleep are dropped.

    The sleep share is ``1 - acceptable_rate / observed_rate`` (at least 0),
    rounded down to whole ticks.  Pass ``sleep_ms`` to override.
    """
    ts = [t for t, _ in event_queue]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("event queue must be time-ordered")
    if sleep_ms is None:
        rate = float(np.mean([r for _, r in event_queue])) if event_queue else 0.0
        acceptable = user_rate_model.acceptable_rate(fps_min)
        share = 0.0 if rate <= acceptable or rate == 0 else 1.0 - acceptable / rate
        sleep_ms = math.floor(share * window_ms / TICK_MS) * TICK_MS
    end = window_start_ms + sleep_ms
    dropped = sum(1 for t in ts if window_start_ms <= t < end)
    return EbrowserDecision(float(sleep_ms), len(ts) - dropped, dropped)


# ------------------------------------------------------------------ session


@dataclass(frozen=True)
class SimPage:
    record: PageRecord
    workload: PageWorkload


def sim_pages(records: Iterable[PageRecord], platform: PlatformSpec, manifest: FeatureManifest) -> dict[str, SimPage]:
    return {r.id: SimPage(r, platform.workload_of(r.id, r.features, manifest)) for r in records}


@dataclass(frozen=True)
class SessionConfig:
    fps_min: float = 30.0
    sampling_window_ms: float = 200.0
    dom_change_threshold: float = 0.30
    governor: str = "ml"
    search_mode: str = "min-feasible"
    qos_mode: str = "magnitude"  # or "count": share of windows below fps_min
    safety_margin: float = 0.0  # ml search targets fps_min * (1 + margin)
    user_rate_model: UserRateModel = UserRateModel()

    def __post_init__(self):
        if not self.fps_min > 0 or not self.sampling_window_ms > 0:
            raise ValueError("fps_min and sampling_window_ms must be > 0")
        if self.governor not in GOVERNORS:
            raise ValueError(f"governor must be one of {GOVERNORS}")
        if self.qos_mode not in ("magnitude", "count"):
            raise ValueError("qos_mode must be 'magnitude' or 'count'")


@dataclass
class SimState:
    """State carried across windows (and across split sessions)."""

    setting: Optional[ProcessorSetting] = None
    governor: Optional[GovernorState] = None
    page_id: Optional[str] = None  # page currently rendered
    feature_page_id: Optional[str] = None  # page whose features the model uses


@dataclass
class SessionReport:
    governor: str
    page_id: str
    gesture: str
    fps_min: float
    total_energy_j: float = 0.0
    window_fps: list[float] = field(default_factory=list)
    window_energy_j: list[float] = field(default_factory=list)
    qos_violation: float = 0.0
    setting_histogram: dict[str, int] = field(default_factory=dict)
    reconfigurations: int = 0
    overhead_ms: float = 0.0
    dropped_events: int = 0
    infeasible_windows: int = 0
    events: list[dict] = field(default_factory=list)
    final_state: SimState = field(default_factory=SimState, repr=False)

    @property
    def windows(self) -> int:
        return len(self.window_fps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("final_state")
        return d


def qos_violation(window_fps: Sequence[float], fps_min: float, mode: str = "magnitude") -> float:
    """Mean normalized shortfall below ``fps_min`` (or share of short windows)."""
    if len(window_fps) == 0:
        return 0.0
    fps = np.asarray(window_fps, dtype=float)
    if mode == "count":
        return float(np.mean(fps < fps_min))
    return float(np.mean(np.maximum(0.0, fps_min - fps) / fps_min))


def _windows(trace: EventTrace, window_ms: float) -> list[tuple[float, list[tuple[float, float]]]]:
    if not trace.samples:
        return []
    first = math.floor(trace.samples[0][0] / window_ms)
    last = math.floor(trace.samples[-1][0] / window_ms)
    buckets: dict[int, list] = {k: [] for k in range(first, last + 1)}
    for t, r in trace.samples:
        buckets[math.floor(t / window_ms)].append((t, r))
    return [(k * window_ms, buckets[k]) for k in range(first, last + 1)]


class _MlPredictor:
    """Per-(page features, rate) prediction cache over the whole setting table."""

    def __init__(self, registry: ModelRegistry, transform: FeatureTransform, platform: PlatformSpec, gesture: str):
        if gesture not in registry:
            raise KeyError(f"no model registered for gesture {gesture!r}")
        self.model = registry[gesture]
        self.transform = transform
        self.settings = platform.settings_by_frequency()
        self._cache: dict = {}
        self._pcs: dict = {}

    def predictions(self, page: SimPage, rate: float) -> dict[ProcessorSetting, float]:
        key = (page.record.id, rate)
        if key not in self._cache:
            if page.record.id not in self._pcs:
                self._pcs[page.record.id] = self.transform.transform(page.record.features.values)
            pcs = np.tile(self._pcs[page.record.id], (len(self.settings), 1))
            pred = self.model.predict_many(pcs, [rate] * len(self.settings),
                                           [int(s.render_cluster == "big") for s in self.settings],
                                           [s.render_freq for s in self.settings])
            self._cache[key] = dict(zip(self.settings, pred.tolist()))
        return self._cache[key]


def _big_setting(platform: PlatformSpec, freq: float) -> ProcessorSetting:
    for s in platform.setting_table:
        if s.render_cluster == "big" and s.render_freq == freq:
            return s
    return ProcessorSetting("big", freq, platform.setting_table[0].other_freq)


def run_session(trace: EventTrace, cfg: SessionConfig, platform: PlatformSpec, pages: Mapping[str, SimPage],
                registry: Optional[ModelRegistry] = None, transform: Optional[FeatureTransform] = None,
                initial_state: Optional[SimState] = None, predictor: Optional[_MlPredictor] = None) -> SessionReport:
    """Replay one trace under ``cfg.governor`` and account energy and QoS."""
    if trace.page_id not in pages:
        raise KeyError(f"trace page {trace.page_id!r} not in the page set")
    for _, pid in trace.swaps:
        if pid not in pages:
            raise KeyError(f"swap target {pid!r} not in the page set")
    if cfg.governor == "ml" and predictor is None:
        if registry is None or transform is None:
            raise ValueError("ml governor needs a model registry and a feature transform")
        predictor = _MlPredictor(registry, transform, platform, trace.gesture)

    state = copy.copy(initial_state) if initial_state is not None else SimState()
    if state.page_id is None:
        state.page_id = state.feature_page_id = trace.page_id

    report = SessionReport(cfg.governor, trace.page_id, trace.gesture, cfg.fps_min)
    W = cfg.sampling_window_ms
    swaps = sorted(trace.swaps)
    overhead = platform.reconfiguration_overhead_ms

    for w_start, events in _windows(trace, W):
        while swaps and swaps[0][0] < w_start + W:
            t_swap, new_id = swaps.pop(0)
            ratio = dom_change_ratio(pages[state.page_id].record.node_count, pages[new_id].record.node_count)
            reextract = ratio > cfg.dom_change_threshold
            state.page_id = new_id
            if reextract:
                state.feature_page_id = new_id
            report.events.append({"type": "dom-swap", "timestamp_ms": t_swap, "page_id": new_id,
                                  "change_ratio": ratio, "reextracted": reextract})
        page = pages[state.page_id].workload
        rate = float(np.mean([r for _, r in events])) if events else 0.0

        if cfg.governor in ("ml", "oracle"):
            if cfg.governor == "ml":
                preds = predictor.predictions(pages[state.feature_page_id], rate)
                table = SettingTable.for_platform(platform, preds.__getitem__,
                                                  lambda s: power_draw(s, platform, 1.0))
                res = select_setting(table, cfg.fps_min * (1.0 + cfg.safety_margin), cfg.search_mode)
                chosen, feasible = res.setting, res.feasible
            else:
                chosen, feasible = exhaustive_oracle(platform, page, rate, cfg.fps_min, trace.gesture)
            if not feasible:
                report.infeasible_windows += 1
            util = render_utilization(page, rate, chosen, platform, trace.gesture)
            power = power_draw(chosen, platform, util)
            if chosen != state.setting:
                report.reconfigurations += 1
                report.overhead_ms += overhead
                energy = (power_draw(chosen, platform, 1.0) * overhead + power * (W - overhead)) / 1000.0
                state.setting = chosen
            else:
                energy = power * W / 1000.0
            fps = true_fps(page, rate, chosen, platform, gesture=trace.gesture)
            label = chosen.label(platform)
            report.setting_histogram[label] = report.setting_histogram.get(label, 0) + 1
        else:
            kind = "interactive" if cfg.governor == "ebrowser" else cfg.governor
            if state.governor is None:
                state.governor = initial_governor_state(platform.big.frequencies, w_start)
            sleep_ms = 0.0
            if cfg.governor == "ebrowser":
                dec = ebrowser_step(w_start, W, events, cfg.fps_min, cfg.user_rate_model)
                sleep_ms = dec.sleep_ms
                report.dropped_events += dec.dropped
            n_ticks = int(round(W / TICK_MS))
            energy, fps_sum = 0.0, 0.0
            time_at: dict[str, float] = {}
            for j in range(n_ticks):
                t = w_start + j * TICK_MS
                s = _big_setting(platform, state.governor.freq)
                awake = t >= w_start + sleep_ms
                u = render_utilization(page, rate, s, platform, trace.gesture) if awake else 0.0
                energy += power_draw(s, platform, u) * TICK_MS / 1000.0
                fps_sum += true_fps(page, rate, s, platform, gesture=trace.gesture) if awake else 0.0
                label = s.label(platform)
                time_at[label] = time_at.get(label, 0.0) + 1
                state.governor = builtin_governor_step(kind, state.governor, u, t + TICK_MS)
            state.setting = _big_setting(platform, state.governor.freq)
            fps = fps_sum / n_ticks
            label = max(sorted(time_at), key=time_at.get)  # dominant setting this window
            report.setting_histogram[label] = report.setting_histogram.get(label, 0) + 1

        report.window_fps.append(float(fps))
        report.window_energy_j.append(float(energy))

    report.total_energy_j = float(math.fsum(report.window_energy_j))
    report.qos_violation = qos_violation(report.window_fps, cfg.fps_min, cfg.qos_mode)
    report.final_state = state
    return report


def compute_metrics(report: SessionReport, baseline: SessionReport) -> dict[str, float]:
    """Energy reduction relative to ``baseline`` (normally interactive) and the report's QoS violation."""
    if baseline.total_energy_j <= 0:
        raise ValueError("baseline energy must be > 0")
    return {"energy_reduction": 1.0 - report.total_energy_j / baseline.total_energy_j,
            "qos_violation": report.qos_violation}


# ------------------------------------------------------------------- matrix


@dataclass(frozen=True)
class SessionRow:
    gesture: str
    page: str
    user: int
    fps_min: float
    rate: float
    governor: str
    energy_j: float
    qos_violation: float
    reduction: float
    reconfigurations: int
    infeasible_windows: int
    settings: dict = field(default_factory=dict, compare=False)  # setting label -> windows

    HEADER = ("gesture", "page", "user", "fps_min", "rate", "governor", "energy_j", "qos_violation", "reduction",
              "reconfigurations", "infeasible_windows")


def synthetic_users(n: int = 20, low: float = 20.0, high: float = 45.0, seed: int = 0) -> list[float]:
    """FPS_min per simulated user, sampled uniformly in [low, high] and rounded to 0.5 FPS."""
    rng = np.random.default_rng([seed, 0x5E5])
    return [float(v) for v in np.round(rng.uniform(low, high, size=n) * 2) / 2]


def run_matrix(pages: Mapping[str, SimPage], platform: PlatformSpec, users: Sequence[float],
               rates: Sequence[float], gesture: str, governors: Sequence[str],
               models: Optional[Mapping[str, tuple[ModelRegistry, FeatureTransform]]] = None,
               search_mode: str = "min-feasible", qos_mode: str = "magnitude", safety_margin: float = 0.0,
               page_ids: Optional[Sequence[str]] = None) -> list[SessionRow]:
    """Every (page, user, rate, governor) session on flat traces.

    ``models`` maps page id to the (registry, transform) used for that page,
    e.g. the cross-validation fold that held the page out.  Governors whose
    behaviour does not depend on FPS_min are simulated once per (page, rate).
    """
    ids = sorted(pages) if page_ids is None else list(page_ids)
    rows: list[SessionRow] = []
    predictors: dict[int, _MlPredictor] = {}
    for pid in ids:
        pred = None
        if "ml" in governors:
            if models is None or pid not in models:
                raise KeyError(f"no model for page {pid!r}")
            reg, tr = models[pid]
            pred = predictors.setdefault(id(reg), _MlPredictor(reg, tr, platform, gesture))
        for rate in rates:
            trace = make_trace(pid, gesture, rate)
            shared: dict[str, SessionReport] = {}
            for g in ("interactive", "ondemand"):
                if g in governors or g == "interactive":
                    shared[g] = run_session(trace, SessionConfig(governor=g, qos_mode=qos_mode), platform, pages)
            base = shared["interactive"].total_energy_j
            for u, fps_min in enumerate(users):
                for g in governors:
                    cfg = SessionConfig(fps_min=fps_min, governor=g, search_mode=search_mode, qos_mode=qos_mode,
                                        safety_margin=safety_margin)
                    if g in shared:
                        r = shared[g]
                        qos = qos_violation(r.window_fps, fps_min, qos_mode)
                    else:
                        r = run_session(trace, cfg, platform, pages, predictor=pred)
                        qos = r.qos_violation
                    rows.append(SessionRow(gesture, pid, u, fps_min, float(rate), g, r.total_energy_j, qos,
                                           1.0 - r.total_energy_j / base, r.reconfigurations, r.infeasible_windows,
                                           dict(sorted(r.setting_histogram.items()))))
    return rows
