"""Command line entry point: gen, train, eval, gradcheck, sweep.

Every config field is a flag (``--learning-rate``) and a config-file key
(``learning_rate = 1e-4``). Explicit flags override the config file, which
overrides the built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .cascade_decoder import HeadWeights
from .losses import LossConfig
from .model import MeritConfig, MeritModel, config_from_dict
from .harness.data import HELDOUT_OFFSET, SynthSpec, make_dataset
from .harness.io import (
    load_checkpoint,
    load_dataset,
    read_config_file,
    save_dataset,
    save_prediction,
    write_metrics_csv,
)
from .harness.sweep import AXES, sweep
from .harness.train import TrainConfig, TrainingAborted, config_hash, evaluate, predict, report_dict, train

log = logging.getLogger("meritseg")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(","))


def _floats(text) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(","))


def _opt_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


# key -> (parser, group, field name inside the group)
OPTIONS: dict[str, tuple] = {
    "mode": (str, "model", "mode"),
    "num_classes": (int, "shared", "num_classes"),
    "aggregation": (str, "model", "aggregation"),
    "interpolation": (str, "model", "interpolation"),
    "gt_resolution": (int, "model", "gt_resolution"),
    "use_cascade_decoder": (_bool, "model", "use_cascade_decoder"),
    "feedback": (str, "model", "feedback"),
    "alpha": (float, "heads", "alpha"),
    "beta": (float, "heads", "beta"),
    "gamma": (float, "heads", "gamma"),
    "psi": (float, "heads", "psi"),
    "learning_rate": (float, "train", "learning_rate"),
    "weight_decay": (float, "train", "weight_decay"),
    "batch_size": (int, "train", "batch_size"),
    "max_steps": (int, "train", "max_steps"),
    "use_mutation": (_bool, "train", "use_mutation"),
    "mutation_accumulate": (_bool, "train", "mutation_accumulate"),
    "train_size": (int, "train", "train_size"),
    "augment": (_bool, "train", "augment"),
    "beta1": (float, "train", "beta1"),
    "beta2": (float, "train", "beta2"),
    "eps": (float, "train", "eps"),
    "eval_every": (int, "train", "eval_every"),
    "eval_cases": (int, "train", "eval_cases"),
    "target_dsc": (_opt_float, "train", "target_dsc"),
    "checkpoint_every": (int, "train", "checkpoint_every"),
    "lambda1": (float, "loss", "lambda1"),
    "smoothing": (float, "loss", "smoothing"),
    "seed": (int, "shared", "seed"),
    "data_seed": (int, "data", "seed"),
    "objects_per_image": (_ints, "data", "objects_per_image"),
    "radius_small": (_floats, "data", "radius_small"),
    "radius_large": (_floats, "data", "radius_large"),
    "noise_sigma": (float, "data", "noise_sigma"),
}
for _side in ("a", "b"):
    OPTIONS.update({
        f"{_side}_input_resolution": (int, _side, "input_resolution"),
        f"{_side}_window": (int, _side, "window"),
        f"{_side}_stem_channels": (int, _side, "stem_channels"),
        f"{_side}_stage_channels": (_ints, _side, "stage_channels"),
        f"{_side}_stage_depths": (_ints, _side, "stage_depths"),
        f"{_side}_ffn_expansion": (float, _side, "ffn_expansion"),
        f"{_side}_heads": (int, _side, "heads"),
    })


def build_configs(values: dict) -> tuple[MeritConfig, TrainConfig, SynthSpec]:
    """Turn a flat {key: value} mapping into the three config objects."""
    groups: dict[str, dict] = {g: {} for g in ("model", "heads", "train", "loss", "data", "a", "b")}
    for key, raw in values.items():
        if raw is None:
            continue
        if key not in OPTIONS:
            raise ValueError(f"unknown option {key!r}")
        parse, group, name = OPTIONS[key]
        v = parse(raw)
        if group == "shared":
            groups["model" if name == "num_classes" else "train"][name] = v
            groups["data"].setdefault(name, v)
        else:
            groups[group][name] = v
    base = MeritConfig()
    a = replace(base.backbone_a, **groups["a"])
    b = replace(base.backbone_b, **groups["b"])
    cfg = replace(base, backbone_a=a, backbone_b=b, head_weights=HeadWeights(**groups["heads"]), **groups["model"])
    lam = groups["loss"].get("lambda1", LossConfig().lambda1)
    loss = LossConfig.from_lambda1(lam, groups["loss"].get("smoothing", LossConfig().smoothing))
    tc = TrainConfig(loss=loss, **groups["train"])
    data = dict(groups["data"])
    data.setdefault("image_size", cfg.gt_resolution)
    spec = SynthSpec(**data)
    return cfg, tc, spec


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; explicit flags take precedence")
    g = p.add_argument_group("configuration")
    for key in OPTIONS:
        g.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar="V")


def _collect(args: argparse.Namespace) -> dict:
    values: dict = {}
    if args.config:
        values.update(read_config_file(args.config, OPTIONS))
    for key in OPTIONS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return values


def cmd_gen(args) -> int:
    cfg, tc, spec = build_configs(_collect(args))
    first = HELDOUT_OFFSET if args.heldout else args.first_index
    images, masks = make_dataset(spec, args.count, first_index=first)
    save_dataset(args.out_dir, images, masks)
    print(f"wrote {args.count} samples to {args.out_dir}")
    return 0


def _metric_rows(snapshot: dict, loss, seed: int, chash: str) -> list[dict]:
    rows = []
    for c, d, h in zip(snapshot["classes"], snapshot["per_class_dsc"], snapshot["per_class_hd95"]):
        rows.append({"step": snapshot["step"], "class": c, "dsc": d, "hd95": h, "loss": loss,
                     "seed": seed, "config_hash": chash})
    rows.append({"step": snapshot["step"], "class": "mean", "dsc": snapshot["mean_dsc"],
                 "hd95": snapshot["mean_hd95"], "loss": loss, "seed": seed, "config_hash": chash})
    return rows


def cmd_train(args) -> int:
    cfg, tc, spec = build_configs(_collect(args))
    dataset = load_dataset(args.data_dir) if args.data_dir else None
    out = Path(args.out_dir)
    try:
        model, record = train(cfg, tc, spec, out_dir=out, dataset=dataset)
    except TrainingAborted as exc:
        (out / "run.json").write_text(exc.record.canonical())
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    snapshots = list(record.snapshots)
    if not snapshots or snapshots[-1]["step"] != record.steps:
        images, masks = dataset if dataset is not None else make_dataset(spec, tc.train_size)
        snapshots.append(report_dict(record.steps, evaluate(model, images, masks)))
    rows = []
    for s in snapshots:
        loss = record.losses[s["step"] - 1] if s["step"] >= 1 else None
        rows.extend(_metric_rows(s, loss, tc.seed, record.config_hash))
    write_metrics_csv(out / "metrics.csv", rows)
    (out / "run.json").write_text(record.canonical())
    print(f"steps {record.steps}  final loss {record.losses[-1] if record.losses else float('nan'):.4f}  "
          f"train DSC {snapshots[-1]['mean_dsc']:.2f}  ({record.wall_clock:.1f}s)")
    return 0


def cmd_eval(args) -> int:
    state, meta = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(meta["model"])
    spec = SynthSpec(**meta["data"])
    model = MeritModel(cfg)
    model.load_state_dict(state)
    if args.data_dir:
        images, masks = load_dataset(args.data_dir)
    else:
        images, masks = make_dataset(spec, args.count, first_index=HELDOUT_OFFSET)
    rep = evaluate(model, images, masks)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(**{**meta["train"], "loss": LossConfig(**meta["train"]["loss"])})
    snap = {"step": meta.get("step", 0), "classes": rep.classes, "per_class_dsc": rep.per_class_dsc,
            "per_class_hd95": rep.per_class_hd95, "mean_dsc": rep.mean_dsc, "mean_hd95": rep.mean_hd95}
    write_metrics_csv(out / "metrics.csv", _metric_rows(snap, None, tc.seed, config_hash(cfg, tc, spec)))
    if args.dump_predictions:
        probs, pred = predict(model, images)
        for i, (p, m) in enumerate(zip(probs, pred)):
            save_prediction(out / "predictions", i, p, m)
    hd = "n/a" if rep.mean_hd95 is None else f"{rep.mean_hd95:.2f}"
    print(f"cases {len(images)}  mean DSC {rep.mean_dsc:.2f}  mean HD95 {hd}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_suite
    results = run_suite(trials=args.trials, seed=args.seed)
    worst_fail = 0
    for name, err, tol in results:
        ok = err <= tol
        worst_fail += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:28s} max rel err {err:.2e} (tol {tol:.0e})")
    return 1 if worst_fail else 0


def cmd_sweep(args) -> int:
    cfg, tc, spec = build_configs(_collect(args))
    values = None if args.values is None else [v.strip() for v in args.values.split(",")]
    seeds = _ints(args.seeds)
    result = sweep(args.axis, values, cfg, tc, spec, seeds=seeds, heldout_size=args.heldout_size,
                   out_dir=args.out_dir)
    for row in result.summary:
        dm = "n/a" if row["dsc_mean"] is None else f"{row['dsc_mean']:.2f} +- {row['dsc_std']:.2f}"
        print(f"{row['axis']}={row['value']}: DSC {dm} over {row['runs']} runs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meritseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset as P5 graymaps")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--first-index", type=int, default=0)
    p.add_argument("--heldout", action="store_true", help="draw from the held-out sample range")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model and write checkpoints and metrics.csv")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data-dir", help="train on a dataset written by 'gen' instead of generating one")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--count", type=int, default=16, help="held-out samples when no --data-dir")
    p.add_argument("--dump-predictions", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable block")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="one-axis ablation sweep over seeds")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--values", help="comma separated; default depends on the axis")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--heldout-size", type=int, default=16)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
