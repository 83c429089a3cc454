"""Command-line harness: ``webfps <subcommand> [flags]``.

Every subcommand writes ``run_manifest.json`` into ``--out`` with the seed and
a SHA-256 hash of the resolved configuration (no timestamps, so identical
runs produce identical files).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .corpus import CORPUS_ENV, corpus_dir, generate_corpus, load_corpus
from .dom import FeatureManifest, load_manifest, write_feature_csv
from .features import importance_report
from .model import (
    ModelConfig, ModelRegistry, attach_pcs, cross_validate, fit_transform_for, mean_cv_error, train,
    write_samples_csv,
)
from .platform import DEFAULT_RATES, GESTURES, PlatformSpecError, generate_training_grid, load_platform_spec
from .search import SEARCH_MODES
from .sim import GOVERNORS, SessionRow, run_matrix, sim_pages, synthetic_users


class CliError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    corpus: str
    platform: str
    gestures: tuple[str, ...]
    rates: tuple[float, ...]
    fps_min: tuple[float, ...]
    model: ModelConfig
    search_mode: str
    seed: int
    out: str
    folds: int = 5
    pages: Optional[int] = None
    governors: tuple[str, ...] = GOVERNORS
    safety_margin: float = 0.0
    layers: tuple[int, ...] = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")  # where results land does not change them
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> tuple[int, ...]:
    vals = _floats(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError("expected positive integers")
    return tuple(int(v) for v in vals)


def _names(choices: Sequence[str]):
    def parse(text: str) -> tuple[str, ...]:
        vals = tuple(v.strip() for v in text.split(",") if v.strip())
        bad = [v for v in vals if v not in choices]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"expected a comma list from {list(choices)}")
        return vals
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--corpus", help="corpus directory (overridden by $WEBFPS_CORPUS)")
    common.add_argument("--platform", default="jetson-tx2", help="fixture name or platform JSON path")
    common.add_argument("--gesture", type=_names(GESTURES), default=("scroll",), help="comma list of gestures")
    common.add_argument("--rates", type=_floats, default=DEFAULT_RATES, help="comma list of event rates (px/s)")
    common.add_argument("--fps-min", type=_floats, default=None,
                        help="comma list of FPS_min values (default: 20 synthetic users)")
    common.add_argument("--search-mode", choices=SEARCH_MODES, default="min-feasible")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--pages", type=int, default=None, help="use only the first N pages (sorted by id)")
    common.add_argument("--manifest", default=None, help="feature manifest JSON (default: bundled)")
    common.add_argument("--epochs", type=int, default=ModelConfig.epochs)
    common.add_argument("--hidden-layers", type=int, default=ModelConfig.hidden_layers)
    common.add_argument("--hidden-width", type=int, default=ModelConfig.hidden_width)
    common.add_argument("--activation", default=ModelConfig.activation)
    common.add_argument("--batch-size", type=int, default=ModelConfig.batch_size)
    common.add_argument("--learning-rate", type=float, default=ModelConfig.learning_rate)
    common.add_argument("--folds", type=int, default=5)

    p = argparse.ArgumentParser(prog="webfps", description="Web-content-aware FPS modeling and DVFS simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("make-corpus", parents=[common], help="write the synthetic page corpus into --out")
    sub.add_parser("extract", parents=[common], help="corpus -> features.csv")
    sub.add_parser("gen-data", parents=[common], help="corpus -> training grid CSV per gesture")
    sub.add_parser("train", parents=[common], help="train one model per gesture on all pages")
    ev = sub.add_parser("eval", parents=[common], help="k-fold CV error report (MLP and linear baseline)")
    ev.add_argument("--no-baseline", action="store_true", help="skip the linear baseline")
    sim = sub.add_parser("simulate", parents=[common], help="governor x user x rate x page sessions")
    sim.add_argument("--governors", type=_names(GOVERNORS), default=GOVERNORS)
    sim.add_argument("--safety-margin", type=float, default=0.0,
                     help="ml search targets fps_min * (1 + margin)")
    sub.add_parser("report", parents=[common], help="aggregate a simulate output directory (--out)")
    ls = sub.add_parser("layer-sweep", parents=[common], help="CV error per hidden-layer count")
    ls.add_argument("--layers", type=_ints, default=tuple(range(1, 9)))
    return p


def _config(args: argparse.Namespace) -> ExperimentConfig:
    try:
        model = ModelConfig(hidden_layers=args.hidden_layers, hidden_width=args.hidden_width,
                            activation=args.activation, learning_rate=args.learning_rate,
                            epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    except ValueError as e:
        raise CliError(f"invalid model config: {e}") from None
    corpus = ""
    if args.command == "report" and (args.corpus or os.environ.get(CORPUS_ENV)):
        corpus = str(corpus_dir(args.corpus))
    elif args.command not in ("report", "make-corpus"):
        try:
            corpus = str(corpus_dir(args.corpus))
        except ValueError as e:
            raise CliError(str(e)) from None
        if not Path(corpus).is_dir():
            raise CliError(f"corpus directory {corpus} does not exist")
    return ExperimentConfig(
        command=args.command, corpus=corpus, platform=args.platform, gestures=tuple(args.gesture),
        rates=tuple(args.rates), fps_min=tuple(args.fps_min) if args.fps_min else tuple(synthetic_users(seed=args.seed)),
        model=model, search_mode=args.search_mode, seed=args.seed, out=args.out, folds=args.folds,
        pages=args.pages, governors=tuple(getattr(args, "governors", GOVERNORS)),
        safety_margin=getattr(args, "safety_margin", 0.0), layers=tuple(getattr(args, "layers", ())),
        extra={"manifest": args.manifest or "bundled"},
    )


def _write_run_manifest(cfg: ExperimentConfig, outputs: Sequence[str]) -> None:
    out = Path(cfg.out)
    doc = {"tool": f"webfps {__version__}", "command": cfg.command, "seed": cfg.seed,
           "config_hash": cfg.config_hash(), "config": cfg.to_dict(), "outputs": sorted(outputs)}
    (out / "run_manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


class _Context:
    def __init__(self, cfg: ExperimentConfig, manifest_path: Optional[str]):
        self.cfg = cfg
        self.manifest: FeatureManifest = load_manifest(manifest_path)
        try:
            self.platform = load_platform_spec(cfg.platform)
        except (PlatformSpecError, FileNotFoundError) as e:
            raise CliError(f"platform spec: {e}") from None
        self._pages = None

    @property
    def pages(self):
        if self._pages is None:
            pages = load_corpus(self.cfg.corpus, self.manifest)
            pages = sorted(pages, key=lambda p: p.id)
            if self.cfg.pages is not None:
                pages = pages[: self.cfg.pages]
            self._pages = pages
        return self._pages

    def workloads(self, pages=None):
        return [self.platform.workload_of(p.id, p.features, self.manifest) for p in (pages or self.pages)]


# ----------------------------------------------------------------- commands


def cmd_make_corpus(ctx, cfg, args) -> list[str]:
    paths = generate_corpus(cfg.out, n_pages=args.pages or 100, seed=cfg.seed or 2019)
    return [p.name for p in paths]


def cmd_extract(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    pages = ctx.pages
    write_feature_csv(Path(cfg.out) / "features.csv", [(p.id, p.features) for p in pages], ctx.manifest)
    return ["features.csv"]


def cmd_gen_data(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    pages = ctx.pages
    transform = fit_transform_for(pages, ctx.manifest)
    transform.save(Path(cfg.out) / "transform.json")
    pcs = {p.id: transform.transform(p.features.values) for p in pages}
    outs = ["transform.json"]
    for g in cfg.gestures:
        grid = generate_training_grid(ctx.workloads(), cfg.rates, ctx.platform, g, cfg.seed)
        name = f"training_{g}.csv"
        write_samples_csv(Path(cfg.out) / name, attach_pcs(grid, pcs))
        print(f"{name}: {len(grid)} samples")
        outs.append(name)
    return outs


def cmd_train(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    pages = ctx.pages
    transform = fit_transform_for(pages, ctx.manifest)
    transform.save(Path(cfg.out) / "transform.json")
    pcs = {p.id: transform.transform(p.features.values) for p in pages}
    reg = ModelRegistry()
    for g in cfg.gestures:
        grid = generate_training_grid(ctx.workloads(), cfg.rates, ctx.platform, g, cfg.seed)
        model = train(attach_pcs(grid, pcs), cfg.model, transform_ref="transform.json")
        reg.register(model)
        print(f"{g}: final training MSLE {model.final_loss:.6f} (initial {model.initial_loss:.6f})")
    reg.save(cfg.out)
    return ["transform.json"] + [f"model_{g}.json" for g in sorted(reg)]


def _cv(ctx: _Context, cfg: ExperimentConfig, gesture: str, model: ModelConfig, kind: str = "mlp"):
    return cross_validate(ctx.pages, ctx.manifest, ctx.platform, gesture, model, cfg.folds, cfg.rates,
                          cfg.seed, model_kind=kind)


def cmd_eval(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    summary, detail = [], []
    kinds = ["mlp"] if args.no_baseline else ["mlp", "lr"]
    for g in cfg.gestures:
        for kind in kinds:
            reports = _cv(ctx, cfg, g, cfg.model, kind)
            for r in reports:
                summary.append([g, kind, r.fold, len(r.validation_ids), _fmt(r.error.mean), _fmt(r.error.geo_mean),
                                r.error.excluded])
                if kind == "mlp":
                    keep = [s for s in r.samples if s.measured_fps > 0]
                    for s, e in zip(keep, r.error.errors):
                        detail.append([g, r.fold, s.page_id, _fmt(s.event_rate), s.cluster_label, _fmt(s.frequency),
                                       _fmt(s.measured_fps), _fmt(e)])
            overall = mean_cv_error(reports)
            summary.append([g, kind, "all", len(ctx.pages), _fmt(overall), "", ""])
            print(f"{g} {kind}: mean CV relative error {overall:.4f}")
    out = Path(cfg.out)
    _write_csv(out / "cv_summary.csv", ["gesture", "model", "fold", "pages", "mean_error", "geo_mean_error", "excluded"],
               summary)
    _write_csv(out / "cv_errors.csv", ["gesture", "fold", "page_id", "event_rate", "cluster", "freq_ghz",
                                       "measured_fps", "relative_error"], detail)
    return ["cv_summary.csv", "cv_errors.csv"]


def cmd_simulate(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    pages = ctx.pages
    spages = sim_pages(pages, ctx.platform, ctx.manifest)
    out = Path(cfg.out)
    rows: list[SessionRow] = []
    for g in cfg.gestures:
        models = None
        if "ml" in cfg.governors:
            models = {}
            for r in _cv(ctx, cfg, g, cfg.model):
                reg = ModelRegistry()
                reg.register(r.model)
                for pid in r.validation_ids:
                    models[pid] = (reg, r.transform)
        gesture_rows = run_matrix(spages, ctx.platform, cfg.fps_min, cfg.rates, g, cfg.governors, models,
                                  cfg.search_mode, safety_margin=cfg.safety_margin)
        rows.extend(gesture_rows)
        counts = defaultdict(int)
        for r in gesture_rows:
            counts[r.governor] += 1
        print(f"{g}: " + ", ".join(f"{k} {v} sessions" for k, v in counts.items()))
    with open(out / "sessions.jsonl", "w") as fh:
        for r in rows:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    _write_csv(out / "sessions.csv", SessionRow.HEADER, [_session_fields(r) for r in rows])
    return ["sessions.jsonl", "sessions.csv"]


def _session_fields(r: SessionRow) -> list:
    return [r.gesture, r.page, r.user, _fmt(r.fps_min), _fmt(r.rate), r.governor, _fmt(r.energy_j), _fmt(r.qos_violation),
            _fmt(r.reduction), r.reconfigurations, r.infeasible_windows]


def load_sessions(directory: str | Path) -> list[dict]:
    path = Path(directory) / "sessions.jsonl"
    if not path.is_file():
        raise CliError(f"no sessions.jsonl in {directory}; run `webfps simulate` first")
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not rows:
        raise CliError(f"{path} holds no sessions")
    return rows


def aggregate_sessions(rows: Sequence[dict]) -> dict[str, list[list]]:
    """Per-governor summaries recomputed from raw session rows."""
    by_gov: dict[tuple[str, str], list[dict]] = defaultdict(list)
    for r in rows:
        by_gov[(r["gesture"], r["governor"])].append(r)
    summary, dist = [], []
    edges = np.round(np.arange(-1.0, 1.0001, 0.1), 10)
    for (g, gov), rs in sorted(by_gov.items()):
        red = np.array([r["reduction"] for r in rs])
        qos = np.array([r["qos_violation"] for r in rs])
        energy = np.array([r["energy_j"] for r in rs])
        summary.append([g, gov, len(rs), _fmt(energy.mean()), _fmt(red.mean()), _fmt(np.median(red)),
                        _fmt(np.percentile(red, 10)), _fmt(np.percentile(red, 90)), _fmt(qos.mean()),
                        _fmt(float(np.mean(qos > 0)))])
        hist, _ = np.histogram(np.clip(red, -1.0, 1.0), bins=edges)
        qhist, _ = np.histogram(np.clip(qos, 0.0, 1.0), bins=edges[10:])
        for lo, hi, c in zip(edges[:-1], edges[1:], hist):
            dist.append([g, gov, "energy_reduction", _fmt(lo), _fmt(hi), int(c)])
        for lo, hi, c in zip(edges[10:-1], edges[11:], qhist):
            dist.append([g, gov, "qos_violation", _fmt(lo), _fmt(hi), int(c)])
    return {"summary": summary, "distribution": dist}


def cmd_report(ctx, cfg: ExperimentConfig, args) -> list[str]:
    out = Path(cfg.out)
    if not out.is_dir() or not any(out.iterdir()):
        raise CliError(f"session directory {out} is empty or missing")
    rows = load_sessions(out)
    agg = aggregate_sessions(rows)
    _write_csv(out / "report_summary.csv", ["gesture", "governor", "sessions", "mean_energy_j", "mean_reduction",
                                            "median_reduction", "p10_reduction", "p90_reduction",
                                            "mean_qos_violation", "share_sessions_violating"], agg["summary"])
    _write_csv(out / "report_distribution.csv", ["gesture", "governor", "metric", "bin_low", "bin_high", "count"],
               agg["distribution"])
    outs = ["report_summary.csv", "report_distribution.csv"]
    hist_rows = _setting_histogram(rows)
    if hist_rows:
        _write_csv(out / "setting_histogram.csv", ["gesture", "governor", "setting", "windows"], hist_rows)
        outs.append("setting_histogram.csv")
    if cfg.corpus:
        outs += _importance(ctx, cfg)
    return outs


def _setting_histogram(rows: Sequence[dict]) -> list[list]:
    counts: dict[tuple, int] = defaultdict(int)
    for r in rows:
        for label, n in r.get("settings", {}).items():
            counts[(r["gesture"], r["governor"], label)] += n
    return [[g, gov, label, n] for (g, gov, label), n in sorted(counts.items())]


def _importance(ctx: _Context, cfg: ExperimentConfig) -> list[str]:
    pages = ctx.pages
    transform = fit_transform_for(pages, ctx.manifest)
    outs = []
    for g in cfg.gestures:
        grid = generate_training_grid(ctx.workloads(), cfg.rates, ctx.platform, g, cfg.seed)
        per_page: dict[str, list[float]] = defaultdict(list)
        for m in grid:
            per_page[m.page_id].append(m.fps)
        X = np.vstack([p.features.values for p in pages])
        y = np.array([np.mean(per_page[p.id]) for p in pages])
        name = f"importance_{g}.csv"
        importance_report(X, y, transform).write_csv(Path(cfg.out) / name)
        outs.append(name)
    return outs


def cmd_layer_sweep(ctx: _Context, cfg: ExperimentConfig, args) -> list[str]:
    rows = []
    for g in cfg.gestures:
        for n in cfg.layers:
            model = ModelConfig(**{**asdict(cfg.model), "hidden_layers": n})
            err = mean_cv_error(_cv(ctx, cfg, g, model))
            rows.append([g, n, _fmt(err)])
            print(f"{g} layers={n}: mean CV error {err:.4f}")
    _write_csv(Path(cfg.out) / "layer_sweep.csv", ["gesture", "layers", "mean_error"], rows)
    return ["layer_sweep.csv"]


COMMANDS = {
    "make-corpus": cmd_make_corpus, "extract": cmd_extract, "gen-data": cmd_gen_data, "train": cmd_train,
    "eval": cmd_eval, "simulate": cmd_simulate, "report": cmd_report, "layer-sweep": cmd_layer_sweep,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        if args.command == "report":
            ctx = _Context(cfg, args.manifest) if cfg.corpus else None
        else:
            out.mkdir(parents=True, exist_ok=True)
            ctx = None if args.command == "make-corpus" else _Context(cfg, args.manifest)
        outputs = COMMANDS[args.command](ctx, cfg, args)
        _write_run_manifest(cfg, outputs)
    except (CliError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"webfps {args.command}: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
