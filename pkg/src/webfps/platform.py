"""Simulated big.LITTLE platforms: specs, FPS oracle, power model, data grids.

The FPS oracle stands in for on-device measurement::

    frame_time_ms = gesture_scale * (a0 + a1*complexity + a2*event_rate) / (ipc * f_render)
    fps = min(fps_cap, 1000 / frame_time_ms) + N(0, noise_sigma), clamped to [0, fps_cap]

Power is static plus a cubic dynamic term per cluster, with the render cluster
loaded at ``min(1, frame_time / vsync_period)`` and the other cluster at a
fixed background utilization.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

from .dom import FeatureManifest, RawFeatureVector

GESTURES = ("scroll", "pinch")
DEFAULT_RATES = tuple(125.0 * 2**i for i in range(8))  # 125 .. 16000 px/s
FIXTURES = {"odroid-xu3": "odroid-xu3.json", "jetson-tx2": "jetson-tx2.json"}


class PlatformSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSpec:
    name: str
    kind: str  # "big" | "little"
    frequencies: tuple[float, ...]  # GHz, ascending
    ipc_factor: float
    static_power_w: float
    dyn_coeff_w_per_ghz3: float

    @property
    def max_freq(self) -> float:
        return self.frequencies[-1]


@dataclass(frozen=True)
class ProcessorSetting:
    render_cluster: str  # cluster kind
    render_freq: float
    other_freq: float

    def label(self, platform: "PlatformSpec") -> str:
        name = platform.cluster(self.render_cluster).name
        return f"<{name}-{self.render_freq:g},{self.other_freq:g}>"


@dataclass(frozen=True)
class OracleCoefficients:
    a0: float  # base work, ms*GHz
    a1: float  # per unit of page complexity
    a2: float  # per px/s of event rate
    noise_sigma: float = 1.0


@dataclass(frozen=True)
class WorkloadModel:
    """Maps raw features to a scalar page complexity."""

    features: tuple[str, ...] = ("dom.nodes", "page.size_kb", "css.rules", "tag.img")
    weights: tuple[float, ...] = (1.0, 0.5, 0.3, 2.0)
    scales: tuple[float, ...] = (8000.0, 2000.0, 400.0, 2000.0)

    def complexity(self, vec: RawFeatureVector, manifest: FeatureManifest) -> float:
        names = manifest.feature_names
        w = np.asarray(self.weights, float)
        x = np.array([vec.values[names.index(f)] for f in self.features]) / np.asarray(self.scales)
        return float(w @ x / w.sum())


@dataclass(frozen=True)
class PageWorkload:
    id: str
    complexity: float

    def __post_init__(self):
        if not np.isfinite(self.complexity) or self.complexity < 0:
            raise ValueError(f"page {self.id}: complexity must be finite and >= 0")


@dataclass(frozen=True)
class PlatformSpec:
    name: str
    big: ClusterSpec
    little: ClusterSpec
    setting_table: tuple[ProcessorSetting, ...]
    oracle: OracleCoefficients
    fps_cap: float = 60.0
    reconfiguration_overhead_ms: float = 10.0
    background_utilization: float = 0.2
    gesture_scale: dict = field(default_factory=lambda: {"scroll": 1.0, "pinch": 1.15})
    workload: WorkloadModel = field(default_factory=WorkloadModel)
    calibration: dict = field(default_factory=dict)

    def cluster(self, kind: str) -> ClusterSpec:
        if kind == "big":
            return self.big
        if kind == "little":
            return self.little
        raise KeyError(kind)

    def other(self, kind: str) -> ClusterSpec:
        return self.little if kind == "big" else self.big

    def settings_by_frequency(self) -> list[ProcessorSetting]:
        """Whole table sorted by render frequency (little first on ties)."""
        return sorted(self.setting_table, key=lambda s: (s.render_freq, s.render_cluster != "little"))

    def highest_setting(self) -> ProcessorSetting:
        return self.settings_by_frequency()[-1]

    def workload_of(self, page_id: str, vec: RawFeatureVector, manifest: FeatureManifest) -> PageWorkload:
        return PageWorkload(page_id, self.workload.complexity(vec, manifest))


# ------------------------------------------------------------------- oracle


def frame_time_ms(page: PageWorkload, event_rate: float, s: ProcessorSetting,
                  platform: PlatformSpec, gesture: str = "scroll") -> float:
    c = platform.oracle
    work = platform.gesture_scale.get(gesture, 1.0) * (c.a0 + c.a1 * page.complexity + c.a2 * event_rate)
    return work / (platform.cluster(s.render_cluster).ipc_factor * s.render_freq)


def true_fps(page: PageWorkload, event_rate: float, s: ProcessorSetting, platform: PlatformSpec,
             seed=None, gesture: str = "scroll", noise: Optional[bool] = None) -> float:
    """Ground-truth FPS; noise is drawn only when ``seed`` is given (or ``noise`` forces it)."""
    if event_rate < 0:
        raise ValueError("event_rate must be >= 0")
    fps = min(platform.fps_cap, 1000.0 / frame_time_ms(page, event_rate, s, platform, gesture))
    use_noise = (seed is not None) if noise is None else noise
    if use_noise and platform.oracle.noise_sigma > 0:
        fps += np.random.default_rng(seed).normal(0.0, platform.oracle.noise_sigma)
    return float(min(max(fps, 0.0), platform.fps_cap))


def render_utilization(page: PageWorkload, event_rate: float, s: ProcessorSetting,
                       platform: PlatformSpec, gesture: str = "scroll") -> float:
    vsync_ms = 1000.0 / platform.fps_cap
    return min(1.0, frame_time_ms(page, event_rate, s, platform, gesture) / vsync_ms)


def power_draw(s: ProcessorSetting, platform: PlatformSpec, utilization: float) -> float:
    """Whole-system CPU power in watts for one setting and render utilization."""
    render = platform.cluster(s.render_cluster)
    other = platform.other(s.render_cluster)
    u = min(max(utilization, 0.0), 1.0)
    return (render.static_power_w + u * render.dyn_coeff_w_per_ghz3 * s.render_freq**3
            + other.static_power_w
            + platform.background_utilization * other.dyn_coeff_w_per_ghz3 * s.other_freq**3)


def setting_power(page: PageWorkload, event_rate: float, s: ProcessorSetting,
                  platform: PlatformSpec, gesture: str = "scroll") -> float:
    return power_draw(s, platform, render_utilization(page, event_rate, s, platform, gesture))


# ------------------------------------------------------------ training data


@dataclass(frozen=True)
class Measurement:
    """One profiled (page, rate, setting) point; PCs are attached later per fold."""

    page_id: str
    gesture: str
    event_rate: float
    cluster: int  # 0 little, 1 big
    freq_ghz: float
    fps: float


def page_stream_seed(seed: int, page_id: str, gesture: str) -> list[int]:
    return [int(seed), zlib.crc32(page_id.encode()), GESTURES.index(gesture) if gesture in GESTURES else 99]


def generate_training_grid(pages: Sequence[PageWorkload], rates: Sequence[float], platform: PlatformSpec,
                           gesture: str, seed: int) -> list[Measurement]:
    """Profile every page under every (setting, rate) pair with oracle noise."""
    if not pages or not rates:
        raise ValueError("pages and rates must be non-empty")
    out = []
    for page in pages:
        rng = np.random.default_rng(page_stream_seed(seed, page.id, gesture))
        for s in platform.setting_table:
            for r in rates:
                fps = true_fps(page, r, s, platform, gesture=gesture, noise=False)
                if platform.oracle.noise_sigma > 0:
                    fps = min(max(fps + rng.normal(0.0, platform.oracle.noise_sigma), 0.0), platform.fps_cap)
                out.append(Measurement(page.id, gesture, float(r), int(s.render_cluster == "big"),
                                       s.render_freq, float(fps)))
    return out


def infeasible_pairs(pages: Iterable[PageWorkload], rates: Sequence[float], platform: PlatformSpec,
                     fps_min: float = 30.0, gesture: str = "scroll") -> list[tuple[str, float]]:
    """(page, rate) pairs where no setting reaches ``fps_min`` with noise off."""
    bad = []
    for page in pages:
        for r in rates:
            if max(true_fps(page, r, s, platform, gesture=gesture) for s in platform.setting_table) < fps_min:
                bad.append((page.id, r))
    return bad


# ------------------------------------------------------------------ loading

_CLUSTER_SCHEMA = {
    "type": "object",
    "required": ["name", "kind", "frequencies", "ipc_factor", "static_power_w", "dyn_coeff_w_per_ghz3"],
    "properties": {
        "name": {"type": "string"},
        "kind": {"enum": ["big", "little"]},
        "frequencies": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "ipc_factor": {"type": "number", "exclusiveMinimum": 0},
        "static_power_w": {"type": "number", "minimum": 0},
        "dyn_coeff_w_per_ghz3": {"type": "number", "exclusiveMinimum": 0},
    },
}
PLATFORM_SCHEMA = {
    "type": "object",
    "required": ["name", "clusters", "setting_table", "oracle"],
    "properties": {
        "name": {"type": "string"},
        "fps_cap": {"type": "number", "exclusiveMinimum": 0},
        "reconfiguration_overhead_ms": {"type": "number", "minimum": 0},
        "background_utilization": {"type": "number", "minimum": 0, "maximum": 1},
        "clusters": {"type": "array", "items": _CLUSTER_SCHEMA, "minItems": 2, "maxItems": 2},
        "setting_table": {
            "type": "array", "minItems": 2,
            "items": {
                "type": "object", "required": ["render_cluster", "render_freq", "other_freq"],
                "properties": {"render_cluster": {"enum": ["big", "little"]},
                               "render_freq": {"type": "number"}, "other_freq": {"type": "number"}},
            },
        },
        "oracle": {
            "type": "object", "required": ["a0", "a1", "a2"],
            "properties": {"a0": {"type": "number", "exclusiveMinimum": 0},
                           "a1": {"type": "number", "exclusiveMinimum": 0},
                           "a2": {"type": "number", "exclusiveMinimum": 0},
                           "noise_sigma": {"type": "number", "minimum": 0}},
        },
        "gesture_scale": {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
        "workload": {"type": "object"},
        "calibration": {"type": "object"},
    },
}


def _path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def platform_from_dict(data: dict) -> PlatformSpec:
    errors = sorted(jsonschema.Draft202012Validator(PLATFORM_SCHEMA).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise PlatformSpecError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    clusters = {}
    for i, c in enumerate(data["clusters"]):
        freqs = tuple(float(f) for f in c["frequencies"])
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise PlatformSpecError(f"$.clusters[{i}].frequencies: ladder must be strictly increasing")
        if c["kind"] in clusters:
            raise PlatformSpecError(f"$.clusters[{i}].kind: duplicate cluster kind {c['kind']!r}")
        clusters[c["kind"]] = ClusterSpec(c["name"], c["kind"], freqs, float(c["ipc_factor"]),
                                          float(c["static_power_w"]), float(c["dyn_coeff_w_per_ghz3"]))
    if set(clusters) != {"big", "little"}:
        raise PlatformSpecError("$.clusters: need one big and one little cluster")
    if clusters["big"].ipc_factor <= clusters["little"].ipc_factor:
        raise PlatformSpecError("$.clusters: big ipc_factor must exceed little ipc_factor")
    table = []
    for i, s in enumerate(data["setting_table"]):
        setting = ProcessorSetting(s["render_cluster"], float(s["render_freq"]), float(s["other_freq"]))
        if setting.render_freq not in clusters[setting.render_cluster].frequencies:
            raise PlatformSpecError(f"$.setting_table[{i}].render_freq: {setting.render_freq} not on the ladder")
        other = "little" if setting.render_cluster == "big" else "big"
        if setting.other_freq not in clusters[other].frequencies:
            raise PlatformSpecError(f"$.setting_table[{i}].other_freq: {setting.other_freq} not on the ladder")
        table.append(setting)
    if len(set(table)) != len(table):
        raise PlatformSpecError("$.setting_table: duplicate settings")
    o = data["oracle"]
    kwargs = {}
    for key in ("fps_cap", "reconfiguration_overhead_ms", "background_utilization", "gesture_scale", "calibration"):
        if key in data:
            kwargs[key] = data[key]
    if "workload" in data:
        w = data["workload"]
        kwargs["workload"] = WorkloadModel(tuple(w["features"]), tuple(w["weights"]), tuple(w["scales"]))
    return PlatformSpec(
        name=data["name"], big=clusters["big"], little=clusters["little"], setting_table=tuple(table),
        oracle=OracleCoefficients(float(o["a0"]), float(o["a1"]), float(o["a2"]), float(o.get("noise_sigma", 1.0))),
        **kwargs,
    )


def load_platform_spec(path: str | Path) -> PlatformSpec:
    """Load and validate a platform JSON file; fixture names are accepted too."""
    if str(path) in FIXTURES:
        text = resources.files("webfps.data").joinpath("platforms", FIXTURES[str(path)]).read_text()
    else:
        text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlatformSpecError(f"{path}: invalid JSON ({exc})") from None
    return platform_from_dict(data)
