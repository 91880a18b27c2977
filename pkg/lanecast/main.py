"""
lanecast - command-line entry point

Subcommands:
1. gen-synth  - generate a synthetic scene dataset split 8:1:1
2. preprocess - smooth, augment (train split only) and lane-process every agent into samples
3. train      - fit an MTPP variant and save the best-validation checkpoint
4. eval       - score a checkpoint and merge ADE/FDE rows into a comparison report
5. predict    - three candidate paths of one agent as a JSON file
6. plot       - plotly figure JSON of a prediction or of a report

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric error.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from lanecast import config
from lanecast.cache import load_or_build
from lanecast.config import (
    FILTER_SUMMARY_NAME,
    SAMPLES_NAME,
    SCENE_GLOB,
    SPLIT_NAMES,
    AugmentConfig,
    GeneratorConfig,
    KalmanConfig,
    ModelConfig,
    TrainConfig,
    dump_key_values,
    load_key_values,
    resolve_seed,
)
from lanecast.data.dataset import FilterStats, SampleSet, build_samples, filter_summary
from lanecast.data.generator import write_dataset
from lanecast.data.scene_io import load_json, load_scene, loads_scene, prediction_to_dict, save_json
from lanecast.errors import ConfigError, EmptyDataset, LanecastError
from lanecast.evaluation.metrics import evaluate
from lanecast.log import setup_logging
from lanecast.model.inference import predict
from lanecast.model.mtpp import MTPP
from lanecast.model.training import fit
from lanecast.numerics.checkpoint import load_checkpoint, save_checkpoint
from lanecast.preprocess.augmentation import augment_scene
from lanecast.reporting import format_report, read_report, write_report
from lanecast.visualization.charts import ChartGenerator

logger = logging.getLogger("lanecast.main")

HISTORY_SUFFIX = ".history.csv"


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _read_config_file(path: Optional[Path]) -> Dict[str, str]:
    return load_key_values(path) if path is not None else {}


def _split_config(values: Mapping[str, str], *classes) -> List[Dict[str, str]]:
    """Distribute one key-value file over several config dataclasses; unknown keys are errors."""
    known = [set(cls().to_mapping()) for cls in classes]
    unknown = sorted(set(values) - set().union(*known))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    return [{k: v for k, v in values.items() if k in names} for names in known]


def load_model(checkpoint: Path) -> MTPP:
    """Rebuild the network from ``<checkpoint>.cfg`` and load its weights."""
    tensors, values = load_checkpoint(checkpoint)
    model = MTPP(ModelConfig.from_mapping(values))
    model.load_state_dict(tensors)
    logger.info("Loaded %s from %s", model.describe(), checkpoint)
    return model


def _load_split(data_dir: Path, split: str) -> SampleSet:
    return SampleSet.load(Path(data_dir) / split / SAMPLES_NAME)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args: argparse.Namespace) -> int:
    values = _read_config_file(args.config)
    cfg = GeneratorConfig.from_mapping(values)
    if args.seed is not None or "seed" not in values:
        cfg = replace(cfg, seed=resolve_seed(args.seed))
    if args.scenes is not None:
        cfg = replace(cfg, n_scenes=args.scenes)
    listing = write_dataset(cfg, args.out)
    for name in SPLIT_NAMES:
        print(f"{name}: {len(listing.get(name, []))} scenes")
    return config.EXIT_OK


def _preprocess_scene(path: Path, split: str, augment: Optional[AugmentConfig], kalman: KalmanConfig,
                      history_frames: int, horizon_frames: int, use_cache: bool) -> Tuple[SampleSet, FilterStats]:
    raw = path.read_bytes()
    settings = dump_key_values({
        "split": split,
        "augment": augment is not None,
        "history_frames": history_frames,
        "horizon_frames": horizon_frames,
        **kalman.to_mapping(),
        **(augment.to_mapping() if augment is not None else {}),
    })

    def builder() -> Tuple[SampleSet, FilterStats]:
        scene = loads_scene(raw.decode("utf-8"), str(path))
        scenes = augment_scene(scene, augment) if augment is not None else [scene]
        parts, stats = [], FilterStats()
        for item in scenes:
            samples, item_stats = build_samples(item, kalman, history_frames, horizon_frames)
            parts.append(samples)
            stats.add(item_stats)
        return SampleSet.concatenate(parts), stats

    result = load_or_build("samples", raw + settings.encode("utf-8"), builder, enabled=use_cache)
    return result.data


def cmd_preprocess(args: argparse.Namespace) -> int:
    kalman_values, augment_values = _split_config(_read_config_file(args.config), KalmanConfig, AugmentConfig)
    kalman = KalmanConfig.from_mapping(kalman_values)
    augment_cfg = AugmentConfig.from_mapping(augment_values)

    summary: Dict[str, FilterStats] = {}
    for split in SPLIT_NAMES:
        paths = sorted((Path(args.input) / split).glob(SCENE_GLOB))
        if not paths:
            logger.warning("No scenes under %s", Path(args.input) / split)
        augment = augment_cfg if split == "train" and not args.no_augment else None
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(
                lambda p: _preprocess_scene(p, split, augment, kalman, args.history_frames,
                                            args.horizon_frames, not args.no_cache),
                paths,
            ))
        stats = FilterStats()
        for _, part in results:
            stats.add(part)
        samples = SampleSet.concatenate([s for s, _ in results]) if results else SampleSet.empty(
            args.history_frames, args.horizon_frames)
        samples.save(Path(args.out) / split / SAMPLES_NAME)
        summary[split] = stats
        logger.info(
            "%s: %d scenes, %d samples kept, filtered %s", split, len(paths), stats.kept,
            ", ".join(f"{k}={v}" for k, v in sorted(stats.filtered.items())) or "none",
        )

    table = filter_summary(summary)
    out = Path(args.out) / FILTER_SUMMARY_NAME
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(table.to_string(index=False))
    return config.EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    model_values, train_values = _split_config(_read_config_file(args.config), ModelConfig, TrainConfig)
    seed = resolve_seed(args.seed)

    train_samples = _load_split(args.data, "train")
    if len(train_samples) == 0 and args.epochs != 0:
        raise EmptyDataset(f"no training samples under {args.data}")
    val_path = Path(args.data) / "val" / SAMPLES_NAME
    val_samples = SampleSet.load(val_path) if val_path.exists() else None

    model_cfg = ModelConfig.from_mapping(model_values)
    overrides = {
        "history_frames": train_samples.history_frames,
        "horizon_frames": train_samples.horizon_frames,
    }
    if args.mode is not None:
        overrides["regression_mode"] = args.mode.upper()
    if args.map is not None:
        overrides["map_mode"] = args.map
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    model_cfg = replace(model_cfg, **overrides)

    train_cfg = TrainConfig.from_mapping(train_values)
    train_overrides = {"seed": seed}
    for name in ("epochs", "batch_size", "learning_rate"):
        if getattr(args, name) is not None:
            train_overrides[name] = getattr(args, name)
    train_cfg = replace(train_cfg, **train_overrides)

    model = MTPP(model_cfg, seed)
    logger.info("Training %s for %d epochs on %d samples", model.describe(), train_cfg.epochs, len(train_samples))
    result = fit(model, train_samples, val_samples, train_cfg)

    save_checkpoint(args.out, result.best_state, model_cfg.to_mapping())
    history = result.history_frame()
    history.to_csv(Path(args.out).with_name(Path(args.out).name + HISTORY_SUFFIX), index=False)
    print(f"best epoch {result.best_epoch}, val FDE "
          f"{'n/a' if result.best_fde is None else f'{result.best_fde:.3f} m'}")
    return config.EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt)
    samples = _load_split(args.data, args.split)
    report = evaluate(model, samples)
    variant = args.variant or model.cfg.variant_name
    merged = write_report(args.report, report.to_dataframe(variant))
    print(format_report(merged))
    return config.EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.ckpt)
    scene = load_scene(args.scene)
    prediction = predict(model, scene, args.agent)
    payload = prediction_to_dict(scene.scene_id, scene.agent(args.agent), prediction, model.cfg.variant_name)
    save_json(payload, args.out)
    print(f"{scene.scene_id}/{args.agent}: selected {payload['paths'][prediction.selected]['slot']} "
          f"lane, probabilities {', '.join(f'{p:.3f}' for p in prediction.lane_probs)}")
    return config.EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    charts = ChartGenerator()
    if args.prediction is not None:
        scene = load_scene(args.scene) if args.scene is not None else None
        fig = charts.create_prediction_chart(load_json(args.prediction), scene)
    else:
        fig = charts.create_horizon_chart(read_report(args.report))
    charts.save_chart(fig, args.out, format=args.format)
    return config.EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="lanecast", description="Lane-conditioned multi-path trajectory prediction.", formatter_class=fmt,
    )
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for preprocessing")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default: ${config.SEED_ENV_VAR} or {config.DEFAULT_SEED})")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-file", type=Path, default=None, help="also log to this file")
    parser.add_argument("--no-cache", action="store_true", help="disable the preprocessing cache")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--config", type=Path, default=None, help="generator key-value config file")
    p.add_argument("--out", type=Path, required=True, help="dataset root to write")
    p.add_argument("--scenes", type=int, default=None, help="override the number of scenes")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("preprocess", help="build model samples from scene files", formatter_class=fmt)
    p.add_argument("--in", dest="input", type=Path, required=True, help="dataset root with train/val/test")
    p.add_argument("--out", type=Path, required=True, help="sample root to write")
    p.add_argument("--config", type=Path, default=None, help="Kalman / augmentation key-value config file")
    p.add_argument("--no-augment", action="store_true", help="skip rotation and turn upsampling")
    p.add_argument("--history-frames", type=int, default=config.HISTORY_FRAMES)
    p.add_argument("--horizon-frames", type=int, default=config.HORIZON_FRAMES)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train an MTPP variant", formatter_class=fmt)
    p.add_argument("--data", type=Path, required=True, help="sample root written by preprocess")
    p.add_argument("--mode", choices=["ar", "nar"], default=None, help="regression mode (config default AR)")
    p.add_argument("--map", choices=list(config.MAP_MODES), default=None, help="map input (config default lane)")
    p.add_argument("--alpha", type=float, default=None, help="MSE weight of the loss")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--config", type=Path, default=None, help="model / training key-value config file")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True, help="comparison CSV to create or update")
    p.add_argument("--split", choices=SPLIT_NAMES, default="test")
    p.add_argument("--variant", default=None, help="row label (default derived from the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one agent of a scene", formatter_class=fmt)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="write a plotly figure", formatter_class=fmt)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--prediction", type=Path, default=None, help="prediction JSON written by predict")
    source.add_argument("--report", type=Path, default=None, help="comparison CSV written by eval")
    p.add_argument("--scene", type=Path, default=None, help="scene file for the lane underlay")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=["json", "html"], default="json")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level, args.log_file)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except LanecastError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
