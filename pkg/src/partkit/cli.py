"""Command line experiment runner.

One subcommand per pipeline stage: data synthesis and checks, adversarial
training, head stripping, robustness evaluation, pseudo-labeling, few-shot
episodes, agreement and detection metrics, and report plotting.  Every
artifact-producing run writes a manifest beside its outputs, and configs
may be given as a previous run's manifest to reproduce it.

Exit codes: 0 on success, 2 for configuration problems, 3 for data
problems, with a JSON error object on the error stream.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .attacks import (
    AttackConfig,
    TrainRecipe,
    adversarial_train,
    evaluate_robustness,
    standard_threats,
)
from .config import (
    apply_overrides,
    build_section,
    read_tree,
    reject_unknown_sections,
    take_section,
    write_manifest,
)
from .errors import ConfigError, DataError, PartkitError
from .fewshot import ConvEncoder, EpisodeSpec, FusionModel, run_episodes, train_episodic
from .metrics import (
    DecisionRecord,
    Detection,
    ap50,
    average_precision,
    human_consistency,
    mean_average_precision,
)
from .models import (
    BackboneSpec,
    MpmConfig,
    MpmModel,
    build_backbone,
    build_mpm,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
    strip_auxiliary,
    train_segmenter,
)
from .parts import compose_mask, density_histogram, validate_annotation
from .parts.rle import decode as rle_decode
from .parts.store import load_images, load_records, load_vocab, save_store
from .plotting import render_report
from .pseudo import PseudoLabelConfig, extract_instances, generate_pseudo_record
from .synth import SynthSpec, build_vocabulary, generate_dataset, split_dataset

REPORT_VERSION = 1

# all config sections any command may consume; scalar path entries included
# so manifests can be replayed without repeating flags
_SECTIONS = {
    "dataset", "split", "backbone", "mpm", "recipe", "eval", "segmenter",
    "pseudo", "fewshot", "episodes", "meta_train", "checkpoint", "data",
}

_SPLIT_NAMES = ("train", "val", "test")


def _config_tree(args) -> dict:
    tree = read_tree(args.config) if getattr(args, "config", None) else {}
    overrides = getattr(args, "overrides", None) or []
    if overrides:
        tree = apply_overrides(tree, overrides)
    reject_unknown_sections(tree, _SECTIONS)
    return tree


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _write_report(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc


def _channel_first(image: np.ndarray) -> np.ndarray:
    # stores keep images (H, W, 3); models take (3, H, W)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise DataError(f"image must be 3-d, got shape {arr.shape}")
    if arr.shape[-1] == 3 and arr.shape[0] != 3:
        return np.ascontiguousarray(arr.transpose(2, 0, 1))
    return arr


def _load_store_arrays(root: str | Path):
    """Store contents as aligned channel-first arrays, ordered by image id."""
    vocab, inclusions = load_vocab(root)
    records = load_records(root)
    if not records:
        raise DataError(f"store {root} has no records")
    images = load_images(root)
    missing = [r.image_id for r in records if r.image_id not in images]
    if missing:
        raise DataError(f"store {root} lacks pixels for {len(missing)} record(s)")
    array = np.stack([_channel_first(images[r.image_id]) for r in records])
    targets = np.array([r.object_id for r in records], dtype=np.int64)
    return vocab, inclusions, records, array, targets


def _section_value(tree: dict, section: dict | None, key: str, flag, default):
    """Effective setting: explicit flag wins, then config, then default."""
    del tree
    if flag is not None:
        return flag
    if section and key in section:
        return section[key]
    return default


def _path_setting(args, tree: dict, name: str) -> str:
    value = getattr(args, name.replace("-", "_"), None) or tree.get(name)
    if not value:
        raise ConfigError(f"missing required path {name!r} (flag or config entry)")
    if not isinstance(value, str):
        raise ConfigError(f"config entry {name!r} must be a string path")
    return value


def cmd_synth(args) -> int:
    tree = _config_tree(args)
    spec = build_section(SynthSpec, take_section(tree, "dataset"), "dataset")
    images, records, vocab = generate_dataset(spec)
    _, inclusions = build_vocabulary(spec)
    out = Path(args.out)

    summary = {"command": "synth", "out": str(out), "images": len(images)}
    split_cfg = take_section(tree, "split")
    if split_cfg:
        unknown = sorted(set(split_cfg) - {"ratios", "seed"})
        if unknown:
            raise ConfigError(f"unknown key(s) in section 'split': {', '.join(unknown)}")
        if "ratios" not in split_cfg:
            raise ConfigError("section 'split' needs a ratios entry")
        ratios = tuple(split_cfg["ratios"])
        seed = split_cfg.get("seed", spec.seed)
        parts = split_dataset(records, ratios, seed)
        counts = {}
        for name, subset in zip(_SPLIT_NAMES, parts):
            subset_images = {r.image_id: images[r.image_id] for r in subset}
            save_store(out / name, vocab, subset, subset_images, inclusions)
            counts[name] = len(subset)
        summary["splits"] = counts
    else:
        save_store(out, vocab, records, images, inclusions)

    write_manifest(out, "synth", tree, spec.seed)
    _emit(summary)
    return 0


def cmd_validate(args) -> int:
    vocab, _ = load_vocab(args.data)
    records = load_records(args.data)
    violations = []
    for record in records:
        for rule, detail in validate_annotation(record, vocab).violations:
            violations.append(
                {"image_id": record.image_id, "rule": rule, "detail": detail}
            )
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "validation",
        "records": len(records),
        "violations": violations,
        "passed": not violations,
    }
    if args.report:
        _write_report(args.report, payload)
        write_manifest(args.report, "validate", {"data": str(args.data)}, None)
    _emit({"command": "validate", "records": len(records),
           "violations": len(violations)})
    if violations:
        raise DataError(f"{len(violations)} annotation violation(s) under {args.data}")
    return 0


def cmd_stats(args) -> int:
    vocab, _ = load_vocab(args.data)
    records = load_records(args.data)
    if not records:
        raise DataError(f"store {args.data} has no records")
    per_class: dict[str, int] = {}
    for record in records:
        name = vocab.object_name(record.object_id)
        per_class[name] = per_class.get(name, 0) + 1
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "stats",
        "records": len(records),
        "classes": vocab.num_objects,
        "part_categories": vocab.num_parts,
        "per_class": per_class,
        "part_density": density_histogram(records),
        "instances": sum(len(r.instances) for r in records),
    }
    if args.report:
        _write_report(args.report, payload)
        write_manifest(args.report, "stats", {"data": str(args.data)}, None)
    _emit(payload)
    return 0


def cmd_train(args) -> int:
    tree = _config_tree(args)
    data = _path_setting(args, tree, "data")
    vocab, _, records, images, targets = _load_store_arrays(data)

    backbone_sec = dict(take_section(tree, "backbone") or {})
    backbone_sec.setdefault("num_classes", vocab.num_objects)
    spec = build_section(BackboneSpec, backbone_sec, "backbone")

    recipe_sec = dict(take_section(tree, "recipe") or {})
    attack_sec = recipe_sec.pop("attack", None)
    if attack_sec is not None:
        recipe_sec["attack"] = build_section(AttackConfig, attack_sec, "recipe.attack")
    recipe = build_section(TrainRecipe, recipe_sec, "recipe")
    if args.seed is not None:
        recipe = dataclasses.replace(recipe, seed=args.seed)

    torch.manual_seed(recipe.seed)  # model init must follow the run seed
    mpm_sec = take_section(tree, "mpm")
    seg_labels = None
    if mpm_sec is not None:
        mpm_sec = dict(mpm_sec)
        mpm_sec.setdefault("seg_classes", vocab.num_parts + 1)
        cfg = build_section(MpmConfig, mpm_sec, "mpm")
        model = build_mpm(spec, cfg)
        seg_labels = torch.from_numpy(
            np.stack([compose_mask(r, vocab).labels for r in records])
        ).long()
    else:
        model = build_backbone(spec)

    images_t = torch.from_numpy(images)
    targets_t = torch.from_numpy(targets)
    model, ema_state, metrics = adversarial_train(
        model, images_t, targets_t, recipe, seg_labels=seg_labels, log_path=args.log
    )
    save_checkpoint(args.out, model, ema_state=ema_state,
                    extra={"final_epoch": metrics[-1]})
    write_manifest(args.out, "train", {**tree, "data": data}, recipe.seed)
    _emit({
        "command": "train",
        "out": str(args.out),
        "kind": "mpm" if isinstance(model, MpmModel) else "vanilla",
        "epochs": recipe.epochs,
        "final_train_acc": metrics[-1]["train_acc"],
    })
    return 0


def cmd_strip(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, use_ema=args.use_ema)
    if not isinstance(model, MpmModel):
        raise DataError(f"{args.checkpoint} is already a plain classifier")
    stripped = strip_auxiliary(model)
    save_checkpoint(args.out, stripped,
                    extra={"stripped_from": str(args.checkpoint)})
    write_manifest(
        args.out, "strip",
        {"checkpoint": str(args.checkpoint), "use_ema": args.use_ema}, None,
    )
    _emit({"command": "strip", "out": str(args.out)})
    return 0


def cmd_attack_eval(args) -> int:
    tree = _config_tree(args)
    section = take_section(tree, "eval") or {}
    unknown = sorted(set(section) - {"steps", "per_class", "batch_size", "seed",
                                     "use_ema"})
    if unknown:
        raise ConfigError(f"unknown key(s) in section 'eval': {', '.join(unknown)}")
    steps = _section_value(tree, section, "steps", args.steps, 10)
    per_class = _section_value(tree, section, "per_class", args.per_class, None)
    batch_size = _section_value(tree, section, "batch_size", args.batch_size, 64)
    seed = _section_value(tree, section, "seed", args.seed, 0)
    use_ema = args.use_ema or bool(section.get("use_ema", False))

    checkpoint = _path_setting(args, tree, "checkpoint")
    data = _path_setting(args, tree, "data")
    model, _ = load_checkpoint(checkpoint, use_ema=use_ema)
    _, _, _, images, targets = _load_store_arrays(data)
    images_t = torch.from_numpy(images)
    targets_t = torch.from_numpy(targets)

    size = images_t.shape[-1]
    table = evaluate_robustness(
        model, images_t, targets_t,
        threats=standard_threats(size, steps=steps),
        per_class=per_class, batch_size=batch_size, seed=seed,
    )
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "robustness",
        "image_size": size,
        "steps": steps,
        "seed": seed,
        **table.to_dict(),
    }
    _write_report(args.report, payload)
    resolved = {
        "checkpoint": checkpoint,
        "data": data,
        "eval": {"steps": steps, "per_class": per_class,
                 "batch_size": batch_size, "seed": seed, "use_ema": use_ema},
    }
    write_manifest(args.report, "attack-eval", resolved, seed)
    _emit({"command": "attack-eval", "report": str(args.report), **table.to_dict()})
    return 0


def cmd_pseudo_label(args) -> int:
    tree = _config_tree(args)
    seg_sec = take_section(tree, "segmenter") or {}
    unknown = sorted(set(seg_sec) - {"epochs", "batch_size", "lr", "seed", "width"})
    if unknown:
        raise ConfigError(f"unknown key(s) in section 'segmenter': {', '.join(unknown)}")
    pseudo_sec = dict(take_section(tree, "pseudo") or {})
    min_pixels = pseudo_sec.pop("min_pixels", 1)
    cfg = build_section(PseudoLabelConfig, pseudo_sec, "pseudo")

    vocab, inclusions, records, images, _ = _load_store_arrays(args.data)
    target_root = args.target or args.data
    target_vocab, _, target_records, target_images, _ = _load_store_arrays(target_root)
    if target_vocab != vocab:
        raise DataError("labeled and target stores use different vocabularies")

    labels = torch.from_numpy(
        np.stack([compose_mask(r, vocab).labels for r in records])
    ).long()
    model = train_segmenter(
        torch.from_numpy(images), labels, vocab.num_parts + 1, **seg_sec
    )
    probs = predict_probs(model, torch.from_numpy(target_images))

    new_records = []
    instance_count = 0
    for index, record in enumerate(target_records):
        outputs = extract_instances(probs[index], min_pixels=min_pixels)
        pseudo = generate_pseudo_record(
            outputs, record.object_id, vocab, cfg, image_id=record.image_id
        )
        new_records.append(pseudo)
        instance_count += len(pseudo.instances)

    out = Path(args.out)
    image_map = {  # back to the store's channel-last layout
        r.image_id: target_images[i].transpose(1, 2, 0)
        for i, r in enumerate(target_records)
    }
    save_store(out, vocab, new_records, image_map, inclusions)
    write_manifest(
        out, "pseudo-label",
        {**tree, "data": str(args.data), "target": str(target_root)}, None,
    )
    _emit({
        "command": "pseudo-label",
        "out": str(out),
        "records": len(new_records),
        "instances": instance_count,
    })
    return 0


def cmd_fewshot(args) -> int:
    tree = _config_tree(args)
    model_sec = take_section(tree, "fewshot") or {}
    unknown = sorted(set(model_sec) - {"feature_dim", "widths", "branches",
                                       "branch_widths", "seed"})
    if unknown:
        raise ConfigError(f"unknown key(s) in section 'fewshot': {', '.join(unknown)}")
    feature_dim = model_sec.get("feature_dim", 32)
    widths = tuple(model_sec.get("widths", (16, 32)))
    branches = model_sec.get("branches", 3)
    branch_widths = tuple(model_sec.get("branch_widths", (16, 32)))
    model_seed = model_sec.get("seed", 0)

    episodes_sec = take_section(tree, "episodes") or {}
    base = EpisodeSpec.from_name(args.spec)
    try:
        spec = dataclasses.replace(base, **episodes_sec)
    except (TypeError, PartkitError) as exc:
        raise ConfigError(f"invalid section 'episodes': {exc}") from exc

    train_sec = take_section(tree, "meta_train") or {}
    unknown = sorted(set(train_sec) - {"episodes", "lr"})
    if unknown:
        raise ConfigError(f"unknown key(s) in section 'meta_train': {', '.join(unknown)}")

    vocab, _, records, images, targets = _load_store_arrays(args.data)
    torch.manual_seed(model_seed)
    encoder = ConvEncoder(feature_dim=feature_dim, widths=widths)
    if args.mode == "fusion":
        model = FusionModel(encoder, feature_dim=feature_dim, num_branches=branches,
                            branch_widths=branch_widths)
        record_arg = records
    else:
        model = encoder
        record_arg = None

    train_episodes = int(train_sec.get("episodes", 0))
    if train_episodes > 0:
        train_spec = dataclasses.replace(spec, episodes=train_episodes)
        train_episodic(model, images, targets, train_spec, records=record_arg,
                       lr=float(train_sec.get("lr", 1e-3)))

    result = run_episodes(model, images, targets, spec, records=record_arg)
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "fewshot",
        "mode": args.mode,
        "preset": args.spec,
        "spec": dataclasses.asdict(spec),
        "classes": vocab.num_objects,
        **result.to_dict(),
    }
    if args.mode == "fusion":
        payload["fusion_weights"] = list(model.fusion_weights())
    _write_report(args.report, payload)
    write_manifest(args.report, "fewshot", {**tree, "data": str(args.data)},
                   spec.seed)
    _emit({
        "command": "fewshot",
        "mode": args.mode,
        "mean_accuracy": result.mean_accuracy,
        "ci95": result.ci95,
    })
    return 0


def _decision_records(path: str | Path) -> list[DecisionRecord]:
    items = _read_json(path)
    if not isinstance(items, list):
        raise DataError(f"{path} must hold a list of decision records")
    records = []
    for item in items:
        if not isinstance(item, dict):
            raise DataError(f"decision entry must be an object, got {item!r}")
        unknown = sorted(set(item) - {"sample_id", "decision", "correct", "condition"})
        if unknown:
            raise DataError(f"unknown decision key(s): {', '.join(unknown)}")
        try:
            records.append(DecisionRecord(
                sample_id=item["sample_id"],
                decision=item["decision"],
                correct=bool(item["correct"]),
                condition=item.get("condition"),
            ))
        except KeyError as exc:
            raise DataError(f"decision entry missing {exc}") from exc
    return records


def cmd_human_consistency(args) -> int:
    model = _decision_records(args.model)
    human = _decision_records(args.human)
    result = human_consistency(model, human, by_condition=not args.pooled)
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "consistency",
        **result.to_dict(),
    }
    _write_report(args.report, payload)
    write_manifest(args.report, "human-consistency",
                   {"model": str(args.model), "human": str(args.human),
                    "pooled": args.pooled}, None)
    _emit({
        "command": "human-consistency",
        "error_consistency": result.error_consistency,
        "observed_consistency": result.observed_consistency,
    })
    return 0


def _detections(path: str | Path) -> list[Detection]:
    items = _read_json(path)
    if not isinstance(items, list):
        raise DataError(f"{path} must hold a list of instances")
    out = []
    for item in items:
        if not isinstance(item, dict) or "category_id" not in item:
            raise DataError(f"instance entry needs a category_id: {item!r}")
        unknown = sorted(set(item) - {"category_id", "score", "box", "rle"})
        if unknown:
            raise DataError(f"unknown instance key(s): {', '.join(unknown)}")
        mask = None
        if "rle" in item:
            rle = item["rle"]
            try:
                mask = rle_decode(rle["counts"], rle["height"], rle["width"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"bad rle entry: {exc}") from exc
        box = tuple(item["box"]) if "box" in item else None
        try:
            out.append(Detection(
                category_id=int(item["category_id"]),
                score=float(item.get("score", 1.0)),
                mask=mask, box=box,
            ))
        except PartkitError as exc:
            raise DataError(f"bad instance entry: {exc}") from exc
    return out


def cmd_ap_eval(args) -> int:
    detections = _detections(args.detections)
    ground_truth = _detections(args.ground_truth)
    per_category = average_precision(detections, ground_truth, 0.5)
    payload = {
        "schema_version": REPORT_VERSION,
        "kind": "ap",
        "ap50": ap50(detections, ground_truth),
        "map": mean_average_precision(detections, ground_truth),
        "ap50_per_category": {str(cat): value for cat, value in per_category.items()},
    }
    _write_report(args.report, payload)
    write_manifest(args.report, "ap-eval",
                   {"detections": str(args.detections),
                    "ground_truth": str(args.ground_truth)}, None)
    _emit({"command": "ap-eval", "ap50": payload["ap50"], "map": payload["map"]})
    return 0


def cmd_plot(args) -> int:
    report = _read_json(args.report)
    if not isinstance(report, dict):
        raise DataError(f"{args.report} must hold a report object")
    out = render_report(report, args.out, kind=args.kind)
    write_manifest(out, "plot",
                   {"report": str(args.report), "kind": args.kind}, None)
    _emit({"command": "plot", "out": str(out)})
    return 0


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="YAML or JSON config file, or a manifest")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config entry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partkit",
        description="part-supervised robust recognition toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic part-annotated store")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="store directory to create")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check annotation rules over a store")
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="summarize a store")
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="adversarially train a classifier")
    _add_config_flags(p)
    p.add_argument("--data", help="training store (or config 'data' entry)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch metrics JSONL path")
    p.add_argument("--seed", type=int, help="override the recipe seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("strip", help="drop training-only heads from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--use-ema", action="store_true",
                   help="strip the averaged weights instead of the raw ones")
    p.set_defaults(func=cmd_strip)

    p = sub.add_parser("attack-eval", help="robust accuracy under standard threats")
    _add_config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--report", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--use-ema", action="store_true")
    p.set_defaults(func=cmd_attack_eval)

    p = sub.add_parser("pseudo-label",
                       help="train a segmenter and label a store's images")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="store with reference masks")
    p.add_argument("--target", help="store to label (defaults to --data)")
    p.add_argument("--out", required=True, help="output store directory")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("fewshot", help="episodic evaluation of part fusion")
    _add_config_flags(p)
    p.add_argument("--mode", choices=("baseline", "fusion"), required=True)
    p.add_argument("--spec", default="5w1s", help="episode preset (5w1s or 5w5s)")
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("human-consistency",
                       help="error-consistency between two decision files")
    p.add_argument("--model", required=True, help="model decisions JSON")
    p.add_argument("--human", required=True, help="reference decisions JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--pooled", action="store_true",
                   help="ignore condition labels and pool all samples")
    p.set_defaults(func=cmd_human_consistency)

    p = sub.add_parser("ap-eval", help="average precision of stored detections")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ap_eval)

    p = sub.add_parser("plot", help="render a report file as an image")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("lambda-sweep", "robustness"))
    p.set_defaults(func=cmd_plot)

    return parser


def _fail(code: int, exc: Exception) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(2, exc)
    except PartkitError as exc:
        return _fail(3, exc)


if __name__ == "__main__":
    sys.exit(main())
