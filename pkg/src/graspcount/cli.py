"""Command-line pipeline: data generation, training, transfer, evaluation.

Exit codes: 0 success, 2 validation error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DataError, GraspCountError, ValidationError
from .estimators import (
    Autoencoders,
    _BUNDLE_FILES,
    ensemble_predict_batch,
    fine_tune,
    load_bundle,
    save_bundle,
    train_autoencoders,
    train_classifiers,
)
from .evaluation import (
    EnsembleEstimator,
    ForceEstimator,
    VolumeEstimator,
    evaluate_estimator,
)
from .force import LinearCountModel, fit_linear, vertical_force
from .geometry import ObjectSpec, convex_hull, hull_volume, upper_bound_count
from .kinematics import DEFAULT_GEOMETRY, DEFAULT_LIMITS, HandPose, forward_kinematics, load_hand_config
from .network import NeuralModel
from .simulator import (
    SceneConfig,
    child_seed,
    dedupe_symmetric,
    generate_dataset,
    load_dataset,
    object_from_meta,
    pregrasp_grid,
    save_dataset,
    select_poses,
)

DEFAULT_PILE_SIZES = "0,2,3,4,5,6,8,9,10,12"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (u64)")
    p.add_argument("--object", choices=("sphere", "cube"), default="sphere")
    p.add_argument("--domain", choices=("sim_like", "real_like"), default="sim_like")
    p.add_argument("--epochs", type=int, default=None, help="training epochs")
    p.add_argument("--out", type=Path, default=None, help="output path")
    p.add_argument("--config", type=Path, default=None, help="hand geometry config file")


def _hand(args) -> tuple:
    if args.config is not None:
        return load_hand_config(args.config)
    return DEFAULT_GEOMETRY, DEFAULT_LIMITS


def _object_spec(args) -> ObjectSpec:
    factory = ObjectSpec.sphere if args.object == "sphere" else ObjectSpec.cube
    if args.size is not None:
        return factory(args.size)
    return factory()


def _require_out(args) -> Path:
    if args.out is None:
        raise ValidationError("--out is required for this command")
    return args.out


def cmd_gen_data(args) -> int:
    geom, limits = _hand(args)
    obj = _object_spec(args)
    out = _require_out(args)
    pile_sizes = [int(v) for v in args.pile_sizes.split(",") if v.strip()]
    poses = select_poses(args.poses, args.seed, obj, geom, limits)
    scenes = [
        SceneConfig(obj, ps, args.noise, seed=child_seed(args.seed, k), domain=args.domain)
        for k, ps in enumerate(pile_sizes)
    ]
    dataset = generate_dataset(scenes, poses, args.trials, geom, limits, stage=args.stage)
    save_dataset(dataset, out)
    print(f"wrote {len(dataset)} samples to {out}")
    print(f"class histogram (0..>=4): {dataset.meta['class_histogram']}")
    splits = dataset.meta["splits"]
    print("splits:", {k: len(v) for k, v in splits.items()})
    return 0


def cmd_dedupe_poses(args) -> int:
    geom, _ = _hand(args)
    raw = pregrasp_grid(geom.distal_coupling_ratio)
    deduped = dedupe_symmetric(raw)
    print(f"raw grid: {len(raw)} poses; symmetry-deduped: {len(deduped)}")
    if args.out is not None:
        payload = [p.as_vector().tolist() for p in deduped]
        args.out.write_text(json.dumps(payload) + "\n")
        print(f"wrote {len(deduped)} poses to {args.out}")
    return 0


def cmd_train_autoencoders(args) -> int:
    out = _require_out(args)
    dataset = load_dataset(args.data)
    samples = dataset.split("train")
    epochs = args.epochs if args.epochs is not None else 3000
    autoencoders, histories = train_autoencoders(
        samples, epochs=epochs, seed=args.seed, batch_size=args.batch_size)
    out.mkdir(parents=True, exist_ok=True)
    for key in ("palm", "fixed_finger", "moving_fingers"):
        autoencoders.model_for(key).save(out / _BUNDLE_FILES[key])
        h = histories[key]
        first, last = (h[0], h[-1]) if h else (float("nan"), float("nan"))
        print(f"{key}: reconstruction MSE {first:.6f} -> {last:.6f} over {len(h)} epochs")
    print(f"wrote autoencoders to {out}")
    return 0


def _load_autoencoders(directory: Path) -> Autoencoders:
    missing = [f for k, f in _BUNDLE_FILES.items()
               if k in ("palm", "fixed_finger", "moving_fingers")
               and not (directory / f).exists()]
    if missing:
        raise DataError(f"no autoencoders in {directory}: missing {missing}")
    return Autoencoders(
        palm=NeuralModel.load(directory / _BUNDLE_FILES["palm"]),
        fixed_finger=NeuralModel.load(directory / _BUNDLE_FILES["fixed_finger"]),
        moving_fingers=NeuralModel.load(directory / _BUNDLE_FILES["moving_fingers"]),
    )


def cmd_train_classifiers(args) -> int:
    dataset = load_dataset(args.data)
    samples = dataset.split("train")
    bundle_dir = args.bundle
    out = args.out if args.out is not None else bundle_dir
    autoencoders = _load_autoencoders(bundle_dir)
    epochs = args.epochs if args.epochs is not None else 3000
    meta = {"normalization": {
        "force_scale": dataset.meta["force_scale"],
        "strain_scale": dataset.meta["strain_scale"],
        "joint_limits": dataset.meta["joint_limits"],
    }, "object": dataset.meta["object"], "domain": dataset.meta["domain"]}
    bundle, histories = train_classifiers(
        samples, autoencoders, epochs=epochs, seed=args.seed,
        batch_size=args.batch_size, oversample=not args.no_oversample, meta=meta)
    save_bundle(bundle, out)
    for name, h in histories.items():
        print(f"{name}: loss {h[0]:.4f} -> {h[-1]:.4f}" if h else f"{name}: not trained")
    print(f"wrote model bundle to {out}")
    return 0


def cmd_fine_tune(args) -> int:
    out = _require_out(args)
    bundle = load_bundle(args.bundle)
    dataset = load_dataset(args.data)
    samples = dataset.split("train")
    epochs = args.epochs if args.epochs is not None else 500
    adapted = fine_tune(bundle, samples, epochs=epochs, seed=args.seed,
                        batch_size=args.batch_size,
                        retrain_autoencoders=args.retrain_autoencoders)
    save_bundle(adapted, out)
    print(f"fine-tuned on {len(samples)} samples for {epochs} epochs; wrote {out}")
    return 0


def _build_estimator(args, dataset):
    geom, limits = _hand(args)
    if args.estimator == "ensemble":
        if args.bundle is None:
            raise ValidationError("--bundle is required for the ensemble estimator")
        return EnsembleEstimator(load_bundle(args.bundle))
    if args.estimator == "force":
        if args.model is None:
            raise ValidationError("--model is required for the force estimator")
        model = LinearCountModel.load(args.model)
        return ForceEstimator(model, float(dataset.meta["force_scale"]), geom, limits)
    return VolumeEstimator(object_from_meta(dataset.meta), geom, limits)


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    samples = dataset.split(args.split)
    estimator = _build_estimator(args, dataset)
    report = evaluate_estimator(estimator, samples)
    print(f"estimator: {report.estimator}  split: {args.split}")
    print(report.to_text())
    if args.out is not None:
        report.save(args.out)
        print(f"wrote report to {args.out}")
    return 0


def cmd_predict(args) -> int:
    dataset = load_dataset(args.data)
    samples = dataset.split(args.split)
    bundle = load_bundle(args.bundle)
    probs, classes = ensemble_predict_batch(samples, bundle)
    for i, (p, c) in enumerate(zip(probs, classes)):
        cells = " ".join(f"{v:.3f}" for v in p)
        print(f"{i}\tclass={int(c)}\tprobs=[{cells}]")
    return 0


def _parse_pose(text: str, coupling_ratio: float) -> HandPose:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ValidationError(f"bad pose value in {text!r}") from exc
    if len(values) == 4:
        spread, p1, p2, p3 = values
        values = [spread, p1, p2, p3,
                  p1 * coupling_ratio, p2 * coupling_ratio, p3 * coupling_ratio]
    if len(values) != 7:
        raise ValidationError("pose must have 4 or 7 comma-separated radians")
    return HandPose.from_vector(values)


def cmd_volume_bound(args) -> int:
    geom, limits = _hand(args)
    obj = _object_spec(args)
    pose = _parse_pose(args.pose, geom.distal_coupling_ratio)
    keypoints = forward_kinematics(pose, geom, limits)
    try:
        volume = hull_volume(convex_hull(keypoints.all_points()))
    except DataError:
        volume = 0.0
    bound = upper_bound_count(volume, obj)
    print(f"grasp volume: {volume:.6e} m^3")
    print(f"object: {obj.kind} size={obj.characteristic_size} m "
          f"packing={obj.packing_density:.5f}")
    print(f"upper-bound count: {bound}")
    return 0


def cmd_force_fit(args) -> int:
    out = _require_out(args)
    geom, limits = _hand(args)
    dataset = load_dataset(args.data)
    samples = dataset.split("train")
    scale = float(dataset.meta["force_scale"])
    stage = args.stage if args.stage is not None else dataset.meta.get("stage", "before_lift")
    pairs = [
        (vertical_force(s.tactile * scale, s.pose, geom, limits=limits), s.label)
        for s in samples
    ]
    model = fit_linear(pairs, trained_on=stage)
    model.save(out)
    print(f"fit on {len(pairs)} samples: slope={model.slope:.6f} count/N, "
          f"intercept={model.intercept:.6f} (stage: {model.trained_on})")
    print(f"wrote model to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspcount",
        description="Estimate how many objects a multi-fingered grasp holds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a labeled grasp dataset")
    _add_common(p)
    p.add_argument("--poses", type=int, default=115, help="pre-grasps to sample")
    p.add_argument("--trials", type=int, default=10, help="trials per (pose, scene)")
    p.add_argument("--noise", type=float, default=0.01, help="tactile noise std")
    p.add_argument("--pile-sizes", default=DEFAULT_PILE_SIZES,
                   help="comma-separated pile sizes, one scene each")
    p.add_argument("--size", type=float, default=None, help="object size override (m)")
    p.add_argument("--stage", choices=("before_lift", "after_lift"), default="before_lift")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("dedupe-poses", help="emit the symmetry-deduped pre-grasp grid")
    _add_common(p)
    p.set_defaults(func=cmd_dedupe_poses)

    p = sub.add_parser("train-autoencoders", help="fit the three tactile autoencoders")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=500)
    p.set_defaults(func=cmd_train_autoencoders)

    p = sub.add_parser("train-classifiers", help="fit the three ensemble members")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--bundle", type=Path, required=True,
                   help="directory holding trained autoencoders")
    p.add_argument("--batch-size", type=int, default=500)
    p.add_argument("--no-oversample", action="store_true")
    p.set_defaults(func=cmd_train_classifiers)

    p = sub.add_parser("fine-tune", help="adapt a trained bundle to new-domain data")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=500)
    p.add_argument("--retrain-autoencoders", action="store_true")
    p.set_defaults(func=cmd_fine_tune)

    p = sub.add_parser("eval", help="score an estimator on a dataset split")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--estimator", choices=("force", "volume", "ensemble"), required=True)
    p.add_argument("--bundle", type=Path, default=None)
    p.add_argument("--model", type=Path, default=None, help="force model JSON")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="print ensemble predictions per sample")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("volume-bound", help="hull volume and packing bound for one pose")
    _add_common(p)
    p.add_argument("--pose", required=True,
                   help="comma-separated radians: spread,p1,p2,p3[,d1,d2,d3]")
    p.add_argument("--size", type=float, default=None, help="object size override (m)")
    p.set_defaults(func=cmd_volume_bound)

    p = sub.add_parser("force-fit", help="fit the linear force-to-count regressor")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage", choices=("before_lift", "after_lift"), default=None)
    p.set_defaults(func=cmd_force_fit)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except GraspCountError as exc:  # anything else from the package
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
