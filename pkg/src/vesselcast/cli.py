"""Command-line entry point: ``vesselcast {synth,preprocess,train,evaluate,simulate}``.

Every command accepts ``--config`` (YAML or JSON; keys mirror the flags),
``--seed``, ``--workers`` and ``--out``, and writes a ``*.manifest.json``
holding the resolved run configuration and SHA-256 digests of its inputs.
No wall-clock data goes into outputs, so identical inputs give identical bytes.

Exit codes:
  0 success            4 empty dataset          7 checkpoint error
  2 usage error        5 configuration error    8 training diverged
  3 input/schema error 6 insufficient history / unknown target
"""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .evaluation import default_predictors, evaluate_scenes, horizon_table, table_to_csv
from .forecaster import ForecastModel, InsufficientHistory, ModelConfig, load, save, train_model
from .geo import InvalidInputError
from .metrics import reports_to_csv, reports_to_json
from .nn.checkpoint import CheckpointError
from .nn.train import TrainConfig, TrainingDiverged
from .pipeline import (Dataset, EmptyDataset, FilterConfig, PipelineConfig, SchemaError, build_dataset,
                       group_voyages, load_dataset, parse_ais_csv, process_voyages, save_dataset)
from .risk import RiskConfig, assess_scene_risk
from .scene import TargetNotFound, build_scene, dumps_geojson, predict_scene, snapshot_at
from .synth import SyntheticFleetSpec, generate_fleet, write_csv, write_truth
from .windowing import ConfigError, fit_scaler, split_dataset

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_EMPTY, EXIT_CONFIG, EXIT_HISTORY, EXIT_CHECKPOINT, EXIT_DIVERGED = (
    0, 2, 3, 4, 5, 6, 7, 8)

log = logging.getLogger("vesselcast")


@dataclass
class RunConfig:
    command: str
    params: dict
    seed: int = 0
    workers: int = 1
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__


def sha256_path(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for f in files:
        if path.is_dir():
            h.update(str(f.relative_to(path)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def write_manifest(run: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(asdict(run), indent=2, sort_keys=True, default=str))
    return path


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SchemaError, InvalidInputError, FileNotFoundError) as exc:
            _fail(EXIT_INPUT, str(exc))
        except CheckpointError as exc:
            _fail(EXIT_CHECKPOINT, f"{exc.code}: {exc}")
        except ConfigError as exc:
            _fail(EXIT_CONFIG, str(exc))
        except TargetNotFound as exc:
            _fail(EXIT_HISTORY, str(exc))
        except TrainingDiverged as exc:
            _fail(EXIT_DIVERGED, str(exc))
        except ValueError as exc:
            _fail(EXIT_INPUT, str(exc))
    return wrapper


def common(fn):
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="YAML/JSON config; keys mirror the options.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Global seed.")(fn)
    fn = click.option("--workers", type=int, default=None, help="Data-parallel worker count.")(fn)
    return fn


def _merge(cfg: dict, **flags) -> dict:
    out = dict(cfg)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Multi-vessel trajectory forecasting and CPA risk screening."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------- synth

@main.command()
@common
@click.option("--vessels", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Output CSV path.")
@handle_errors
def synth(config_path, seed, workers, vessels, out):
    """Generate a seeded synthetic AIS fleet CSV plus a truth sidecar."""
    cfg = _merge(load_config(config_path), seed=seed, vessels=vessels)
    try:
        spec = SyntheticFleetSpec.from_json(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    fleet = generate_fleet(spec)
    out = Path(out)
    write_csv(fleet, out)
    truth = write_truth(fleet, out.with_suffix(".truth.json"))
    run = RunConfig("synth", spec.to_json(), spec.seed, workers or 1, {}, [out.name, truth.name])
    write_manifest(run, out.with_suffix(".manifest.json"))
    click.echo(f"wrote {len(fleet.tracks)} vessels, {sum(len(t.t) for t in fleet.tracks)} reports -> {out}")


# ---------------------------------------------------------------- preprocess

@main.command()
@click.argument("input_csv", type=click.Path(dir_okay=False))
@common
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Dataset directory.")
@click.option("--ship-type", "ship_types", multiple=True, help="Keep only these ship-type codes.")
@click.option("--min-points", type=int, default=None)
@click.option("--gap", "gap_threshold", type=float, default=None, help="Trip split gap (s).")
@click.option("--min-duration", type=float, default=None, help="Minimum segment span (s).")
@handle_errors
def preprocess(input_csv, config_path, seed, workers, out, ship_types, min_points, gap_threshold, min_duration):
    """Parse, filter, segment, interpolate and annotate AIS records into a dataset."""
    cfg = _merge(load_config(config_path), seed=seed, workers=workers, min_points=min_points,
                 gap_threshold=gap_threshold, min_duration=min_duration)
    if ship_types:
        cfg["ship_types"] = list(ship_types)
    pcfg = PipelineConfig(
        filter=FilterConfig(min_sog_knots=cfg.get("min_sog_knots", 0.5), min_points=cfg.get("min_points", 300),
                            mmsi_rule=cfg.get("mmsi_rule", "itu")),
        gap_threshold=cfg.get("gap_threshold", 3600.0),
        interval=cfg.get("interval", 120.0),
        min_duration=cfg.get("min_duration", 18000.0),
    )
    parsed = parse_ais_csv(input_csv, cfg.get("schema"), cfg.get("delimiter", ","))
    voyages = group_voyages(parsed.records, cfg.get("ship_types"))
    outcomes = process_voyages(voyages, pcfg, cfg.get("workers", 1))
    segments = [s for o in outcomes for s in o.segments]
    reasons: dict[str, int] = {}
    for o in outcomes:
        for r in o.rejections:
            reasons[r.reason] = reasons.get(r.reason, 0) + 1
    ds = build_dataset(segments, pcfg.min_duration)
    short = sum(1 for s in segments if s.span_s < pcfg.min_duration)
    stats = {"rows_parsed": len(parsed.records), "rows_skipped": parsed.skipped, "voyages": len(voyages),
             "rejected": reasons, "segments_interpolated": len(segments), "segments_below_min_duration": short,
             "segments_kept": 0 if isinstance(ds, EmptyDataset) else len(ds),
             "points_kept": 0 if isinstance(ds, EmptyDataset) else ds.total_points}
    for k, v in stats.items():
        click.echo(f"{k}: {v}")
    if isinstance(ds, EmptyDataset):
        _fail(EXIT_EMPTY, "empty-dataset: no segment survived preprocessing")
    run = RunConfig("preprocess", {**cfg, "pipeline": asdict(pcfg)}, cfg.get("seed", 0), cfg.get("workers", 1),
                    {"input_csv": sha256_path(input_csv)}, [Path(out).name])
    ds.provenance = {"input_sha256": run.inputs["input_csv"], "stats": stats}
    save_dataset(ds, out, {"run": asdict(run)})


# ---------------------------------------------------------------- train

def _split_segments(ds: Dataset, split_cfg: dict, seed: int):
    split = split_dataset(ds.segments, tuple(split_cfg.get("fractions", (0.72, 0.18, 0.10))),
                          split_cfg.get("seed", seed), split_cfg.get("mode", "random"), split_cfg.get("test_bbox"))
    return split


@main.command()
@click.argument("dataset", type=click.Path(file_okay=False))
@common
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Checkpoint path.")
@click.option("--horizon", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--init-from", type=click.Path(dir_okay=False), default=None, help="Start from checkpoint weights.")
@handle_errors
def train(dataset, config_path, seed, workers, out, horizon, epochs, init_from):
    """Train the forecaster; writes the best checkpoint and its history."""
    cfg = load_config(config_path)
    mcfg_d = dict(cfg.get("model", {}))
    if horizon is not None:
        mcfg_d["horizon"] = horizon
    tcfg_d = dict(cfg.get("train", {}))
    if epochs is not None:
        tcfg_d["max_epochs"] = epochs
    run_seed = seed if seed is not None else cfg.get("seed", 0)
    tcfg_d.setdefault("seed", run_seed)
    try:
        mcfg = ModelConfig.from_json(mcfg_d).validate()
        tcfg = TrainConfig(**tcfg_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ds = load_dataset(dataset)
    split = _split_segments(ds, cfg.get("split", {}), run_seed)
    pick = lambda ids: [ds.segments[i] for i in ids]  # noqa: E731
    scaler = fit_scaler(pick(split.train))
    if init_from:
        model = load(init_from)
        if model.config != mcfg:
            raise ConfigError("--init-from checkpoint architecture differs from the requested model config")
        model.scaler = scaler
    else:
        model = ForecastModel.create(mcfg, scaler)
    result = train_model(model, pick(split.train), pick(split.validation), tcfg, cfg.get("stride", 1),
                         on_epoch=lambda r: click.echo(
                             f"epoch {r['epoch']:3d}  train_mse {r['train_mse']:.3e}  val_mse {r['val_mse']:.3e}"
                             f"  val_mae {r['val_mae']:.3e}  lr {r['lr']:.1e}"))
    out = Path(out)
    save(model, out)
    (out.with_suffix(".history.json")).write_text(json.dumps(result.history, indent=2))
    split_doc = {"train": list(split.train), "validation": list(split.validation), "test": list(split.test),
                 "seed": split.seed, "dataset_sha256": sha256_path(dataset)}
    out.with_suffix(".split.json").write_text(json.dumps(split_doc, indent=2, sort_keys=True))
    run = RunConfig("train", {"model": mcfg.to_json(), "train": tcfg.to_json(), "split": cfg.get("split", {}),
                              "stride": cfg.get("stride", 1)}, run_seed, workers or 1,
                    {"dataset": split_doc["dataset_sha256"]}, [out.name])
    write_manifest(run, out.with_suffix(".manifest.json"))
    click.echo(f"best epoch {result.best_epoch} val_mse {result.best_val_mse:.4e} -> {out}")


# ---------------------------------------------------------------- evaluate

def _test_segments(ds: Dataset, ckpt: Path, which: str):
    if which == "all":
        return ds.segments
    split_path = ckpt.with_suffix(".split.json")
    if not split_path.exists():
        raise ConfigError(f"no split file next to checkpoint ({split_path}); use --split all")
    split = json.loads(split_path.read_text())
    return [ds.segments[i] for i in split[which]]


@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("dataset", type=click.Path(file_okay=False))
@common
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--horizons", default=None, help="Comma-separated horizons in steps (default 30,60,90).")
@click.option("--split", "which", type=click.Choice(["test", "validation", "train", "all"]), default=None)
@click.option("--max-scenes", type=int, default=None)
@handle_errors
def evaluate(checkpoint, dataset, config_path, seed, workers, out, horizons, which, max_scenes):
    """ADE/FDE table per horizon with baselines, plus JADE/JFDE per scene."""
    cfg = _merge(load_config(config_path), seed=seed, workers=workers, horizons=horizons, split=which,
                 max_scenes=max_scenes)
    hs = cfg.get("horizons", "30,60,90")
    hs = [int(h) for h in (hs.split(",") if isinstance(hs, str) else hs)]
    model = load(checkpoint)
    ds = load_dataset(dataset)
    segs = _test_segments(ds, Path(checkpoint), cfg.get("split", "test"))
    table = horizon_table(default_predictors(model), segs, model.config.w_in, hs, model.config.horizon,
                          model.interval)
    reports = evaluate_scenes(model, segs, ds.segments, cfg.get("max_scenes", 50), cfg.get("workers", 1))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "horizon_table.csv").write_text(table_to_csv(table))
    (out / "horizon_table.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    if reports:
        (out / "scenes.csv").write_text(reports_to_csv(reports))
    (out / "scenes.json").write_text(reports_to_json(reports))
    run = RunConfig("evaluate", cfg, cfg.get("seed", 0), cfg.get("workers", 1),
                    {"checkpoint": sha256_path(checkpoint), "dataset": sha256_path(dataset)}, [out.name])
    write_manifest(run, out / "evaluate.manifest.json")
    click.echo(table_to_csv(table), nl=False)
    if reports:
        click.echo(f"scenes: {len(reports)}  mean JADE {np.mean([r.jade_m for r in reports]):.1f} m  "
                   f"mean JFDE {np.mean([r.jfde_m for r in reports]):.1f} m")


# ---------------------------------------------------------------- simulate

@main.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.argument("dataset", type=click.Path(file_okay=False))
@common
@click.option("--target", type=int, default=None, help="Target MMSI.")
@click.option("--anchor-t", type=float, default=None, help="Anchor time (epoch seconds).")
@click.option("--d-safe", type=float, default=None, help="Safety distance (m), default 500.")
@click.option("--method", type=click.Choice(["trajectory-scan", "constant-velocity"]), default=None)
@click.option("--lookback", type=float, default=None, help="Buffer look-back (s); default 3600.")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@handle_errors
def simulate(checkpoint, dataset, config_path, seed, workers, target, anchor_t, d_safe, method, lookback, out):
    """Build the target's neighbour scene, predict it jointly and screen CPA risk."""
    cfg = _merge(load_config(config_path), seed=seed, workers=workers, target=target, anchor_t=anchor_t,
                 d_safe=d_safe, method=method, lookback=lookback)
    if "target" not in cfg or "anchor_t" not in cfg:
        raise ConfigError("--target and --anchor-t are required")
    model = load(checkpoint)
    ds = load_dataset(dataset)
    snap = snapshot_at(ds.segments, float(cfg["anchor_t"]), model.interval)
    scene = build_scene(snap, int(cfg["target"]), model.config.w_in, cfg.get("lookback"), model.config.horizon)
    if isinstance(scene, InsufficientHistory):
        _fail(EXIT_HISTORY, f"insufficient-history: vessel {scene.mmsi} has {scene.have} steps, needs {scene.need}")
    scene = predict_scene(scene, model, cfg.get("workers", 1))
    try:
        rcfg = RiskConfig(float(cfg.get("d_safe", 500.0)), cfg.get("method", "trajectory-scan"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = assess_scene_risk(scene, rcfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.geojson").write_text(dumps_geojson(scene, histories=snap.histories))
    (out / "risk.json").write_text(report.dumps())
    (out / "risk.csv").write_text(report.to_csv())
    run = RunConfig("simulate", cfg, cfg.get("seed", 0), cfg.get("workers", 1),
                    {"checkpoint": sha256_path(checkpoint), "dataset": sha256_path(dataset)}, [out.name])
    write_manifest(run, out / "simulate.manifest.json")
    click.echo(f"scene: target {scene.target}, {len(scene.neighbors)} neighbour(s) within "
               f"{scene.buffer_radius_m:.0f} m; excluded {scene.excluded}")
    for p in report.pairs:
        flag = "FLAG" if p.flagged else "ok"
        click.echo(f"  {p.mmsi_b}: DCPA {p.dcpa_m:.0f} m  TCPA {p.tcpa_s / 60:.1f} min  {flag}")


if __name__ == "__main__":
    main()
