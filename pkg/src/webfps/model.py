"""Per-gesture FPS regressors: feed-forward network, MSLE loss, Adam, CV.

Model inputs are ``[pc_0 .. pc_{k-1}, event_rate, cluster, frequency]``;
event rate and frequency are min-max scaled with training-set bounds and the
cluster is a single 0/1 input (1 = big).  The output layer is linear and the
prediction is clamped at zero.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import PageRecord
from .dom import FeatureManifest
from .features import FeatureTransform
from .platform import DEFAULT_RATES, Measurement, PlatformSpec, generate_training_grid

ACTIVATIONS = ("relu", "sigmoid", "tanh")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hidden_layers: int = 5
    hidden_width: int = 80
    activation: str = "relu"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("hidden_layers and hidden_width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass(frozen=True)
class TrainingSample:
    pcs: np.ndarray
    event_rate: float
    cluster_label: int  # 0 little, 1 big
    frequency: float  # GHz
    measured_fps: float
    gesture: str
    page_id: str = ""


# ------------------------------------------------------------------ network


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return np.tanh(z)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a


def layer_sizes(n_inputs: int, cfg: ModelConfig) -> list[int]:
    return [n_inputs] + [cfg.hidden_width] * cfg.hidden_layers + [1]


def _views(flat: np.ndarray, sizes: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views into one flat parameter vector."""
    out, pos = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def n_params(sizes: Sequence[int]) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


def forward(params: np.ndarray, sizes: Sequence[int], activation: str, X: np.ndarray) -> np.ndarray:
    """Raw (unclamped) network output for encoded inputs ``X``."""
    h = X
    layers = _views(params, sizes)
    for W, b in layers[:-1]:
        h = _act(activation, h @ W + b)
    W, b = layers[-1]
    return (h @ W + b)[:, 0]


def msle_loss(predicted, measured) -> float:
    """Mean of ``(log(measured + 1) - log(predicted + 1))**2``."""
    p = np.asarray(predicted, dtype=float).ravel()
    m = np.asarray(measured, dtype=float).ravel()
    if p.shape != m.shape or p.size == 0:
        raise ValueError("predicted and measured must have the same non-zero length")
    if np.any(p < 0) or np.any(m < 0):
        raise ValueError("MSLE is undefined for negative values")
    return float(np.mean((np.log1p(m) - np.log1p(p)) ** 2))


def loss_and_grad(params: np.ndarray, sizes: Sequence[int], activation: str,
                  X: np.ndarray, y: np.ndarray, grad: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """MSLE of the zero-clamped output and its gradient w.r.t. the flat parameters."""
    layers = _views(params, sizes)
    if grad is None:
        grad = np.empty_like(params)
    gviews = _views(grad, sizes)
    acts = [X]
    pre = []
    h = X
    for W, b in layers[:-1]:
        z = h @ W + b
        h = _act(activation, z)
        pre.append(z)
        acts.append(h)
    W, b = layers[-1]
    out = (h @ W + b)[:, 0]
    pred = np.maximum(out, 0.0)
    diff = np.log1p(y) - np.log1p(pred)
    n = y.shape[0]
    loss = float(np.mean(diff * diff))

    delta = (-2.0 / n * diff / (1.0 + pred) * (out > 0))[:, None]
    gW, gb = gviews[-1]
    gW[...] = acts[-1].T @ delta
    gb[...] = delta.sum(axis=0)
    for i in range(len(layers) - 2, -1, -1):
        delta = (delta @ layers[i + 1][0].T) * _act_grad(activation, pre[i], acts[i + 1])
        gW, gb = gviews[i]
        gW[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
    return loss, grad


class Adam:
    """Adam over one flat parameter vector (updated in place).

    Moment entries below ``1e-200`` are flushed to zero every 64 steps: a
    parameter whose gradient has become exactly zero would otherwise decay
    into subnormal floats, which are an order of magnitude slower to compute.
    """

    FLUSH_EVERY = 64
    TINY = 1e-200

    def __init__(self, size: int, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self._tmp = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        np.multiply(grad, grad, out=self._tmp)
        self._tmp *= 1.0 - b2
        self.v += self._tmp
        # params -= lr * (m / bc1) / (sqrt(v / bc2) + eps), computed in place
        np.sqrt(self.v, out=self._tmp)
        self._tmp *= 1.0 / math.sqrt(1.0 - b2**self.t)
        self._tmp += self.epsilon
        np.divide(self.m, self._tmp, out=self._tmp)
        self._tmp *= self.lr / (1.0 - b1**self.t)
        params -= self._tmp
        if self.t % self.FLUSH_EVERY == 0:
            self.m[np.abs(self.m) < self.TINY] = 0.0
            self.v[self.v < self.TINY] = 0.0


# -------------------------------------------------------------------- model


@dataclass
class InputBounds:
    rate_min: float
    rate_max: float
    freq_min: float
    freq_max: float

    @staticmethod
    def _scale(v, lo, hi):
        return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)

    def encode(self, pcs: np.ndarray, rates, clusters, freqs) -> np.ndarray:
        pcs = np.atleast_2d(np.asarray(pcs, dtype=float))
        rates = np.asarray(rates, dtype=float).reshape(-1)
        clusters = np.asarray(clusters, dtype=float).reshape(-1)
        freqs = np.asarray(freqs, dtype=float).reshape(-1)
        return np.column_stack([pcs, self._scale(rates, self.rate_min, self.rate_max), clusters,
                                self._scale(freqs, self.freq_min, self.freq_max)])


def _stack(samples: Sequence[TrainingSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pcs = np.vstack([np.asarray(s.pcs, dtype=float).reshape(1, -1) for s in samples])
    rates = np.array([s.event_rate for s in samples], dtype=float)
    clusters = np.array([s.cluster_label for s in samples], dtype=float)
    freqs = np.array([s.frequency for s in samples], dtype=float)
    fps = np.array([s.measured_fps for s in samples], dtype=float)
    return pcs, rates, clusters, freqs, fps


@dataclass
class MlpModel:
    config: ModelConfig
    sizes: list[int]
    params: np.ndarray
    bounds: InputBounds
    gesture: str
    transform_ref: str = ""
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    @property
    def n_pcs(self) -> int:
        return self.sizes[0] - 3

    def predict_encoded(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(forward(self.params, self.sizes, self.config.activation, X), 0.0)

    def predict_many(self, pcs, rates, clusters, freqs) -> np.ndarray:
        X = self.bounds.encode(pcs, rates, clusters, freqs)
        if X.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.n_pcs} PCs, got {X.shape[1] - 3}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite model input")
        return self.predict_encoded(X)

    def to_dict(self) -> dict:
        return {
            "format": "webfps-mlp/1",
            "gesture": self.gesture,
            "config": asdict(self.config),
            "layer_sizes": list(self.sizes),
            "weights": self.params.tolist(),
            "input_bounds": asdict(self.bounds),
            "transform": self.transform_ref,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        sizes = list(d["layer_sizes"])
        params = np.array(d["weights"], dtype=float)
        if params.shape[0] != n_params(sizes):
            raise ValueError("weight vector does not match layer sizes")
        return cls(ModelConfig(**d["config"]), sizes, params, InputBounds(**d["input_bounds"]),
                   d["gesture"], d.get("transform", ""), d.get("initial_loss", float("nan")),
                   d.get("final_loss", float("nan")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_fps(m: MlpModel, pcs, event_rate: float, cluster: int, frequency: float) -> float:
    if not frequency > 0:
        raise ValueError("frequency must be > 0")
    return float(m.predict_many(np.asarray(pcs, dtype=float).reshape(1, -1), [event_rate], [cluster], [frequency])[0])


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """He-style uniform weights, zero biases."""
    flat = np.zeros(n_params(sizes))
    for W, _ in _views(flat, sizes):
        limit = math.sqrt(6.0 / W.shape[0])
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return flat


def train(samples: Sequence[TrainingSample], cfg: ModelConfig = ModelConfig(),
          transform_ref: str = "", log: Optional[Callable[[int, float], None]] = None) -> MlpModel:
    """Minibatch Adam on MSLE; ``epochs=0`` returns the initialized model."""
    if not samples:
        raise ValueError("no training samples")
    gestures = {s.gesture for s in samples}
    if len(gestures) != 1:
        raise ValueError(f"train expects a single gesture, got {sorted(gestures)}")
    pcs, rates, clusters, freqs, y = _stack(samples)
    bounds = InputBounds(float(rates.min()), float(rates.max()), float(freqs.min()), float(freqs.max()))
    X = bounds.encode(pcs, rates, clusters, freqs)
    sizes = layer_sizes(X.shape[1], cfg)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(sizes, rng)
    _views(params, sizes)[-1][1][...] = np.expm1(np.mean(np.log1p(y)))  # output bias at the log-mean FPS

    initial = msle_loss(np.maximum(forward(params, sizes, cfg.activation, X), 0.0), y)
    model = MlpModel(cfg, sizes, params, bounds, gestures.pop(), transform_ref, initial, initial)
    if cfg.epochs == 0:
        return model

    opt = Adam(params.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    grad = np.empty_like(params)
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, _ = loss_and_grad(params, sizes, cfg.activation, X[idx], y[idx], grad)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss/gradient at epoch {epoch}, batch {start // cfg.batch_size}"
                                    f" (loss={loss}); try a lower learning rate")
            opt.step(params, grad)
            total += loss * len(idx)
        if not np.all(np.isfinite(params)):
            raise TrainingError(f"non-finite weights after epoch {epoch}; try a lower learning rate")
        if log is not None:
            log(epoch, total / n)
    model.final_loss = msle_loss(model.predict_encoded(X), y)
    return model


class ModelRegistry(dict):
    """gesture -> MlpModel; at most one model per gesture."""

    def register(self, model: MlpModel) -> None:
        self[model.gesture] = model

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for gesture, model in sorted(self.items()):
            model.save(d / f"model_{gesture}.json")

    @classmethod
    def load(cls, directory: str | Path) -> "ModelRegistry":
        reg = cls()
        for path in sorted(Path(directory).glob("model_*.json")):
            reg.register(MlpModel.load(path))
        return reg


# --------------------------------------------------------------- evaluation


@dataclass
class ErrorReport:
    errors: np.ndarray
    mean: float
    geo_mean: float
    excluded: int

    @classmethod
    def from_predictions(cls, predicted, measured) -> "ErrorReport":
        predicted = np.asarray(predicted, dtype=float)
        measured = np.asarray(measured, dtype=float)
        keep = measured > 0
        e = np.abs(measured[keep] - predicted[keep]) / measured[keep]
        if e.size == 0:
            return cls(e, float("nan"), float("nan"), int((~keep).sum()))
        geo = 0.0 if np.any(e == 0) else float(np.exp(np.mean(np.log(e))))
        return cls(e, float(e.mean()), geo, int((~keep).sum()))


def evaluate_error(m, samples: Sequence[TrainingSample]) -> ErrorReport:
    """Relative error ``|measured - predicted| / measured`` per sample."""
    pcs, rates, clusters, freqs, y = _stack(samples)
    return ErrorReport.from_predictions(m.predict_many(pcs, rates, clusters, freqs), y)


@dataclass
class LinearBaseline:
    """OLS on the network's encoded inputs, fit to ``log(fps + 1)``."""

    coef: np.ndarray
    intercept: float
    bounds: InputBounds
    ridge: bool = False

    def predict_many(self, pcs, rates, clusters, freqs) -> np.ndarray:
        X = self.bounds.encode(pcs, rates, clusters, freqs)
        return np.maximum(np.expm1(X @ self.coef + self.intercept), 0.0)


def fit_linear_baseline(samples: Sequence[TrainingSample], ridge_lambda: float = 1e-6) -> LinearBaseline:
    pcs, rates, clusters, freqs, y = _stack(samples)
    bounds = InputBounds(float(rates.min()), float(rates.max()), float(freqs.min()), float(freqs.max()))
    X = bounds.encode(pcs, rates, clusters, freqs)
    if X.shape[0] <= X.shape[1]:
        raise ValueError("linear baseline needs more samples than inputs")
    A = np.column_stack([np.ones(X.shape[0]), X])
    t = np.log1p(y)
    normal = A.T @ A
    rhs = A.T @ t
    ridge = bool(np.linalg.matrix_rank(normal) < normal.shape[0] or np.linalg.cond(normal) > 1e12)
    if ridge:
        normal = normal + ridge_lambda * np.eye(normal.shape[0])
    beta = np.linalg.solve(normal, rhs)
    return LinearBaseline(beta[1:], float(beta[0]), bounds, ridge)


# ----------------------------------------------------------- cross-validation


def fold_partition(ids: Sequence[str], folds: int, seed: int = 0) -> list[list[str]]:
    """Shuffle ``ids`` and split into ``folds`` near-equal disjoint groups."""
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    if folds > len(ids):
        raise ValueError(f"{folds} folds requested for {len(ids)} pages")
    order = np.random.default_rng(seed).permutation(len(ids))
    return [[ids[i] for i in sorted(part)] for part in np.array_split(order, folds)]


def attach_pcs(measurements: Sequence[Measurement], pcs_by_page: dict[str, np.ndarray]) -> list[TrainingSample]:
    return [TrainingSample(pcs_by_page[m.page_id], m.event_rate, m.cluster, m.freq_ghz, m.fps, m.gesture, m.page_id)
            for m in measurements]


@dataclass
class FoldReport:
    fold: int
    validation_ids: list[str]
    error: ErrorReport
    model: object
    transform: FeatureTransform
    samples: list[TrainingSample] = field(repr=False, default_factory=list)


def fit_transform_for(pages: Sequence[PageRecord], manifest: FeatureManifest,
                      variance_target: float = 0.95, k_max: int = 49) -> FeatureTransform:
    X = np.vstack([p.features.values for p in pages])
    return FeatureTransform.fit(X, manifest.feature_names, variance_target, k_max, manifest.version)


def cross_validate(pages: Sequence[PageRecord], manifest: FeatureManifest, platform: PlatformSpec,
                   gesture: str, cfg: ModelConfig = ModelConfig(), folds: int = 5,
                   rates: Sequence[float] = DEFAULT_RATES, seed: int = 0, model_kind: str = "mlp",
                   variance_target: float = 0.95, k_max: int = 49) -> list[FoldReport]:
    """K-fold CV over pages; scaler, PCA and model are fit on training folds only."""
    ids = [p.id for p in pages]
    parts = fold_partition(ids, folds, seed)
    workloads = [platform.workload_of(p.id, p.features, manifest) for p in pages]
    grid = generate_training_grid(workloads, rates, platform, gesture, seed)
    by_page: dict[str, list[Measurement]] = {}
    for m in grid:
        by_page.setdefault(m.page_id, []).append(m)

    reports = []
    for k, val_ids in enumerate(parts):
        val = set(val_ids)
        train_pages = [p for p in pages if p.id not in val]
        transform = fit_transform_for(train_pages, manifest, variance_target, k_max)
        pcs = {p.id: transform.transform(p.features.values) for p in pages}
        train_s = attach_pcs([m for p in train_pages for m in by_page[p.id]], pcs)
        val_s = attach_pcs([m for i in val_ids for m in by_page[i]], pcs)
        if model_kind == "mlp":
            model = train(train_s, cfg)
        elif model_kind == "lr":
            model = fit_linear_baseline(train_s)
        else:
            raise ValueError(f"unknown model kind {model_kind!r}")
        reports.append(FoldReport(k, list(val_ids), evaluate_error(model, val_s), model, transform, val_s))
    return reports


def mean_cv_error(reports: Sequence[FoldReport]) -> float:
    errs = np.concatenate([r.error.errors for r in reports])
    return float(errs.mean())


# ----------------------------------------------------------------- CSV I/O


def write_samples_csv(path: str | Path, samples: Sequence[TrainingSample]) -> None:
    k = len(samples[0].pcs) if samples else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"pc_{i}" for i in range(k)] + ["event_rate", "cluster", "freq_ghz", "fps", "gesture", "page_id"])
        for s in samples:
            w.writerow([repr(float(v)) for v in s.pcs] + [repr(float(s.event_rate)), s.cluster_label,
                                                          repr(float(s.frequency)), repr(float(s.measured_fps)),
                                                          s.gesture, s.page_id])


def read_samples_csv(path: str | Path) -> list[TrainingSample]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        k = sum(1 for h in header if h.startswith("pc_"))
        has_id = "page_id" in header
        out = []
        for row in r:
            out.append(TrainingSample(np.array([float(v) for v in row[:k]]), float(row[k]), int(row[k + 1]),
                                      float(row[k + 2]), float(row[k + 3]), row[k + 4],
                                      row[k + 5] if has_id else ""))
    return out
