"""`mvpt` command line.

    mvpt synth --out DIR [--config C] [--seed S]
    mvpt ingest --root PANOPTIC --cameras 00_00 00_01 --person-a SEQ[:BODY]
                --person-b SEQ[:BODY] --out DIR
    mvpt fit-detector --out estimator.pt [--config C] [--data DIR]
    mvpt train --run-dir DIR [--config C] [--baseline] [--resume CKPT]
    mvpt eval --checkpoint CKPT --report report.json [--split test]
    mvpt compare --joint CKPT --baseline CKPT --frames 45 46 47 --out DIR

Exit codes: 0 success, 1 runtime failure, 2 usage or invalid config.
"""
import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

import mvpt
from mvpt.config import RunConfig
from mvpt.datasets import DatasetManifest, MultiViewDataset, read_manifest
from mvpt.estimators import (
    ExternalPoseEstimator,
    PoseEstimator,
    load_estimator,
    save_estimator,
    train_detector,
)
from mvpt.evaluation import evaluate_run, render_comparison
from mvpt.loaders.panoptic import PanopticPerson, ingest_panoptic
from mvpt.loaders.synthetic import synth_scene
from mvpt.trainer import Trainer
from mvpt.utilities.logging import get_logger, set_log_level

logger = get_logger("cli")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = config.copy(
            update={"train": config.train.copy(update={"seed": args.seed})}, deep=True
        )
    return config


def _data_root(args, config: RunConfig) -> Path:
    root = getattr(args, "data", None) or config.data.root or mvpt.settings.data_root
    if root is None:
        raise UsageError(
            "no dataset: set data.root in the config, pass --data or set"
            " MVPT_DATA_ROOT"
        )
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data.root {root} does not exist")
    return root


def _manifest(args, config: RunConfig) -> DatasetManifest:
    return read_manifest(_data_root(args, config))


def _estimator(
    config: RunConfig, manifest: DatasetManifest, fallback: Optional[Path] = None
) -> PoseEstimator:
    model = config.model
    if model.estimator == "external":
        if model.estimator_path is None:
            raise UsageError(
                "model.estimator is external but model.estimator_path is unset"
            )
        return ExternalPoseEstimator(model.estimator_path, config.data.resolution)
    path = model.estimator_path
    if path is not None:
        estimator = load_estimator(path, mvpt.settings.device)
    elif fallback is not None and fallback.is_file():
        logger.info(f"reusing the detector in {fallback}")
        estimator = load_estimator(fallback, mvpt.settings.device)
    else:
        estimator = _fit_detector(config, manifest)
        if fallback is not None:
            save_estimator(estimator, fallback)
    if estimator.resolution != config.data.resolution:
        raise UsageError(
            f"estimator works on {estimator.resolution}px crops but data.resolution"
            f" is {config.data.resolution}"
        )
    return estimator


def _fit_detector(config: RunConfig, manifest: DatasetManifest) -> PoseEstimator:
    data, model = config.data, config.model
    dataset = MultiViewDataset(
        manifest,
        resolution=data.resolution,
        crop_scale=data.crop_scale,
        holdout_fraction=data.holdout_fraction,
        views=data.views,
    )
    return train_detector(
        dataset,
        epochs=model.detector_epochs,
        lr=model.detector_lr,
        batch_size=model.detector_batch_size,
        width=model.detector_width,
        stride=model.heatmap_stride,
        temperature=model.temperature,
        seed=config.train.seed,
        device=mvpt.settings.device,
    )


def cmd_synth(args) -> None:
    config = _config(args)
    manifest = synth_scene(config.data.synth, args.seed or 0, args.out)
    print(manifest.content_hash())


def _person(value: str) -> PanopticPerson:
    sequence, _, body = value.partition(":")
    try:
        return PanopticPerson(sequence=sequence, body_id=int(body or 0))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected SEQUENCE[:BODY], got {value!r}"
        ) from exc


def cmd_ingest(args) -> None:
    manifest, report = ingest_panoptic(
        args.root,
        args.cameras,
        {"A": args.person_a, "B": args.person_b},
        args.out,
        confidence_threshold=args.threshold,
    )
    for person, r in report.persons.items():
        logger.info(f"person {person}: kept {r.frames_kept} of {r.frames_seen} frames")
    print(manifest.content_hash())


def cmd_fit_detector(args) -> None:
    config = _config(args)
    estimator = _fit_detector(config, _manifest(args, config))
    save_estimator(estimator, args.out)
    logger.info(f"detector written to {args.out}")


def cmd_train(args) -> None:
    config = _config(args)
    manifest = _manifest(args, config)
    run_dir = Path(args.run_dir)
    estimator = _estimator(config, manifest, fallback=run_dir / "estimator.pt")
    trainer = Trainer(
        config,
        manifest,
        run_dir,
        estimator=estimator,
        baseline=args.baseline,
        device=mvpt.settings.device,
        progress=not args.quiet,
    )
    checkpoint = trainer.train(resume=args.resume)
    logger.info(f"final checkpoint: {checkpoint}")
    print(checkpoint)


def cmd_eval(args) -> None:
    config = _config(args)
    report = evaluate_run(
        args.checkpoint,
        _manifest(args, config),
        split=args.split or config.eval.split,
        max_samples=args.max_samples or config.eval.max_samples,
        device=mvpt.settings.device,
    )
    report.write(args.report)
    print(f"{report.mpjpe_cm:.4f} {report.cross_view_residual_px:.4f}")


def cmd_compare(args) -> None:
    config = _config(args)
    paths = render_comparison(
        args.joint,
        args.baseline,
        _manifest(args, config),
        args.frames,
        args.out,
        person=args.person,
        split=args.split,
    )
    for path in paths:
        print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvpt",
        description="Multi-view person image translation with a shared 3D pose.",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="run config YAML")
        p.set_defaults(handler=handler)
        return p

    p = command("synth", cmd_synth, "render a synthetic two-person dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = command("ingest", cmd_ingest, "convert a CMU-Panoptic subset")
    p.add_argument("--root", type=Path, required=True)
    p.add_argument("--cameras", nargs="+", required=True)
    p.add_argument("--person-a", type=_person, required=True, metavar="SEQ[:BODY]")
    p.add_argument("--person-b", type=_person, required=True, metavar="SEQ[:BODY]")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--out", type=Path, required=True)

    p = command("fit-detector", cmd_fit_detector, "train the synthetic estimator")
    p.add_argument("--data", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = command("train", cmd_train, "train the per-view translation networks")
    p.add_argument("--data", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--baseline", action="store_true", help="force lambda4 = 0")
    p.add_argument("--resume", type=Path, metavar="CHECKPOINT")
    p.add_argument("--quiet", action="store_true", help="no progress bars")

    p = command("eval", cmd_eval, "score a checkpoint on held-out frames")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--max-samples", type=int)

    p = command("compare", cmd_compare, "render joint vs. baseline grids")
    p.add_argument("--data", type=Path)
    p.add_argument("--joint", type=Path, required=True)
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--frames", type=int, nargs="+", required=True)
    p.add_argument("--person", choices=["A", "B"], default="A")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    try:
        args.handler(args)
    except (UsageError, ValidationError) as exc:
        logger.error(str(exc))
        return 2
    except KeyboardInterrupt:
        logger.error("interrupted")
        return 1
    except Exception as exc:
        logger.error(f"{type(exc).__name__}: {exc}", exc_info=args.log_level == "DEBUG")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
