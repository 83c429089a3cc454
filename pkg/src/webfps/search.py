"""Processor-setting search: literal binary search, per-cluster min-feasible, exhaustive oracle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .platform import PageWorkload, PlatformSpec, ProcessorSetting, setting_power, true_fps

SEARCH_MODES = ("literal", "min-feasible")


@dataclass
class SettingTable:
    """Settings ``C[0..N-1]`` sorted by render frequency with a lazy, cached predictor.

    ``predict(i)`` returns predicted FPS for ``C[i]``; ``power(i)`` an
    estimated power in watts (used to pick between clusters).  ``clusters``
    labels each entry; without it the table is treated as one cluster.
    """

    settings: Sequence[Any]
    predict: Callable[[int], float]
    power: Optional[Callable[[int], float]] = None
    clusters: Optional[Sequence[str]] = None
    frequencies: Optional[Sequence[float]] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.settings) == 0:
            raise ValueError("empty setting table")
        if self.frequencies is not None:
            f = list(self.frequencies)
            if len(f) != len(self.settings) or any(a > b for a, b in zip(f, f[1:])):
                raise ValueError("settings must be sorted by render frequency, low to high")
        if self.clusters is not None and len(self.clusters) != len(self.settings):
            raise ValueError("clusters must label every setting")

    def __len__(self) -> int:
        return len(self.settings)

    def fps(self, i: int) -> float:
        if not 0 <= i < len(self.settings):
            raise IndexError(f"setting index {i} out of range [0, {len(self.settings) - 1}]")
        if i not in self._cache:
            self._cache[i] = float(self.predict(i))
        return self._cache[i]

    @classmethod
    def from_values(cls, fps: Sequence[float], power: Optional[Sequence[float]] = None,
                    clusters: Optional[Sequence[str]] = None) -> "SettingTable":
        """Table over indices ``0..N-1`` with fixed predictions (tests, debugging)."""
        fps = list(fps)
        pw = None if power is None else (lambda i, p=list(power): p[i])
        return cls(list(range(len(fps))), lambda i: fps[i], pw, clusters)

    @classmethod
    def for_platform(cls, platform: PlatformSpec, predict: Callable[[ProcessorSetting], float],
                     power: Optional[Callable[[ProcessorSetting], float]] = None) -> "SettingTable":
        settings = platform.settings_by_frequency()
        return cls(settings, lambda i: predict(settings[i]),
                   None if power is None else (lambda i: power(settings[i])),
                   [s.render_cluster for s in settings], [s.render_freq for s in settings])


@dataclass
class SearchResult:
    index: int
    setting: Any
    feasible: bool
    trace: list = field(default_factory=list)

    def trace_json(self) -> str:
        return json.dumps({"index": self.index, "feasible": self.feasible,
                           "visited": [{"index": i, "fps": f} for i, f in self.trace]})


def _result(table: SettingTable, i: int, feasible: bool, trace: list) -> SearchResult:
    return SearchResult(i, table.settings[i], feasible, trace)


def search_literal(table: SettingTable, fps_min: float) -> SearchResult:
    """Closest-match binary search over the whole sorted table, with out-of-range indices clamped.

    The post-loop rule returns ``C[low+1]`` when the setting at ``low`` is
    closer to ``fps_min`` than the one at ``high``; that can select a setting
    whose prediction is below ``fps_min``.  When no setting reaches
    ``fps_min`` the highest-frequency setting is returned.
    """
    if not fps_min > 0:
        raise ValueError("fps_min must be > 0")
    n = len(table)
    clamp = lambda i: min(max(i, 0), n - 1)  # noqa: E731
    trace = []
    low, high = 0, n - 1
    while low <= high:
        mid = (low + high) // 2
        pred = table.fps(mid)
        trace.append((mid, pred))
        if pred > fps_min:
            high = mid - 1
        elif pred < fps_min:
            low = mid + 1
        else:
            return _result(table, mid, True, trace)
    if all(table.fps(i) < fps_min for i in range(n)):
        return _result(table, n - 1, False, trace)
    fps_low, fps_high = table.fps(clamp(low)), table.fps(clamp(high))
    i = clamp(low + 1) if (fps_low - fps_min) < (fps_min - fps_high) else clamp(high)
    return _result(table, i, table.fps(i) >= fps_min, trace)


def _first_feasible(table: SettingTable, idx: list[int], fps_min: float, trace: list) -> Optional[int]:
    """Lowest position in ``idx`` whose prediction reaches ``fps_min`` (monotone within ``idx``)."""
    lo, hi = 0, len(idx)
    while lo < hi:
        mid = (lo + hi) // 2
        pred = table.fps(idx[mid])
        trace.append((idx[mid], pred))
        if pred >= fps_min:
            hi = mid
        else:
            lo = mid + 1
    return idx[lo] if lo < len(idx) else None


def search_min_feasible(table: SettingTable, fps_min: float) -> SearchResult:
    """Cheapest setting among each cluster's lowest feasible frequency.

    Ties in power go to the little cluster.  Falls back to the
    highest-frequency setting, flagged infeasible, when nothing qualifies.
    """
    if not fps_min > 0:
        raise ValueError("fps_min must be > 0")
    n = len(table)
    labels = list(table.clusters) if table.clusters is not None else ["all"] * n
    trace: list = []
    candidates = []
    for label in sorted(set(labels), key=lambda c: (c != "little", c)):
        i = _first_feasible(table, [j for j in range(n) if labels[j] == label], fps_min, trace)
        if i is not None:
            candidates.append(i)
    if not candidates:
        return _result(table, n - 1, False, trace)
    if table.power is None or len(candidates) == 1:
        best = min(candidates)
    else:
        # stable min: candidates are ordered little first
        best = min(candidates, key=lambda i: table.power(i))
    return _result(table, best, True, trace)


def exhaustive_oracle(platform: PlatformSpec, page: PageWorkload, event_rate: float, fps_min: float,
                      gesture: str = "scroll") -> tuple[ProcessorSetting, bool]:
    """Minimum-power setting whose true (noise-free) FPS reaches ``fps_min``."""
    if not fps_min > 0:
        raise ValueError("fps_min must be > 0")
    settings = platform.settings_by_frequency()
    if not settings:
        raise ValueError("empty setting table")
    best, best_power = None, float("inf")
    for s in settings:
        if true_fps(page, event_rate, s, platform, gesture=gesture) >= fps_min:
            p = setting_power(page, event_rate, s, platform, gesture)
            if p < best_power or (p == best_power and best is not None
                                  and best.render_cluster != "little" and s.render_cluster == "little"):
                best, best_power = s, p
    if best is None:
        return settings[-1], False
    return best, True


def select_setting(table: SettingTable, fps_min: float, mode: str = "min-feasible") -> SearchResult:
    if mode == "literal":
        return search_literal(table, fps_min)
    if mode == "min-feasible":
        return search_min_feasible(table, fps_min)
    raise ValueError(f"unknown search mode {mode!r}; expected one of {SEARCH_MODES}")
