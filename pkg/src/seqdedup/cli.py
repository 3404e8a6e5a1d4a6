"""Command-line front door.

Subcommands: gen-data, train, eval, oracle-table, grad-check, render. Every
command resolves a RunConfig (defaults unless --config points at a key=value
file), writes its outputs plus a run manifest under --out, and is fully
deterministic given (config, seed, data).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import numcore as nc
from .config import ConfigError, RunConfig, parse_config_file, resolved_text
from .evaluation import (
    EvalReport,
    detections_for_selector,
    gts_by_image,
    map_coco,
    oracle_table,
    report_csv,
)
from .model import ModelConfig, forward_sorted, init_params, load_model, save_model
from .suppression import box_vote, nms, no_removal, soft_nms
from .synthdata import generate_dataset, load_dataset, save_dataset, split_dataset
from .training import (
    pipeline_detections,
    stage1_config,
    stage2_config,
    train_stage,
    weighted_bce,
)

TRAIN_FRACTION = 0.8


class CliError(RuntimeError):
    """Runtime failure that should exit with status 1."""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CliError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqdedup", description=__doc__)
    parser.add_argument("--version", action="version", version=f"seqdedup {__version__}")
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset with a train/test split")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train stage I, stage II, or both")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage", choices=["I", "II", "both"], required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stage1-ckpt", type=Path, default=None, help="required for --stage II")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a duplicate-removal method")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument(
        "--method",
        choices=["nms", "softnms", "boxvote", "no-removal", "model"],
        required=True,
    )
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stage1-ckpt", type=Path, default=None)
    p.add_argument("--stage2-ckpt", type=Path, default=None)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-table", help="compare no-removal, NMS, and the two oracles")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="test")
    p.set_defaults(func=cmd_oracle_table)

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("render", help="draw ground truth and a method's selection as SVG")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--scene", type=int, required=True)
    p.add_argument(
        "--method",
        choices=["nms", "softnms", "boxvote", "no-removal", "model"],
        required=True,
    )
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stage1-ckpt", type=Path, default=None)
    p.add_argument("--stage2-ckpt", type=Path, default=None)
    p.set_defaults(func=cmd_render)

    return parser


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None) is not None:
        return parse_config_file(args.config)
    return RunConfig()


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = (
        f"# seqdedup {__version__}\n"
        f"# command: {command}\n"
        f"{resolved_text(cfg)}"
    )
    (out_dir / "run_manifest.txt").write_text(text, encoding="utf-8")


def _load_scenes(data_path: Path, split: str = "all"):
    """Load scenes from a gen-data directory (honoring the split manifest)
    or from a bare JSONL file (split selection then requires 'all')."""
    if data_path.is_dir():
        scenes = load_dataset(data_path / "dataset.jsonl")
        if split == "all":
            return scenes
        manifest = data_path / "splits.json"
        if not manifest.exists():
            raise CliError(f"{data_path}: no splits.json, use --split all")
        splits = json.loads(manifest.read_text())
        if split not in splits:
            raise CliError(f"{data_path}: split {split!r} not in manifest")
        index = set(splits[split])
        return [s for s in scenes if s.image_id in index]
    scenes = load_dataset(data_path)
    if split != "all":
        raise CliError(f"{data_path} is a bare dataset file; use --split all")
    return scenes


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    scenes = generate_dataset(cfg.data, args.scenes)
    train, test = split_dataset(scenes, [TRAIN_FRACTION, 1.0 - TRAIN_FRACTION])
    args.out.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out / "dataset.jsonl", scenes)
    splits = {
        "train": [s.image_id for s in train],
        "test": [s.image_id for s in test],
    }
    (args.out / "splits.json").write_text(json.dumps(splits) + "\n")
    _write_manifest(args.out, "gen-data", cfg)
    print(f"wrote {len(scenes)} scenes ({len(train)} train / {len(test)} test) to {args.out}")
    return 0


def _loss_csv(path: Path, losses) -> None:
    lines = ["epoch,mean_loss,lr"]
    lines += [f"{e},{repr(l)},{repr(lr)}" for e, l, lr in losses]
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scenes = _load_scenes(args.data, "train" if _has_split(args.data) else "all")
    args.out.mkdir(parents=True, exist_ok=True)
    _write_manifest(args.out, f"train --stage {args.stage}", cfg)

    stage1_result = None
    if args.stage in ("I", "both"):
        stage1_result = train_stage(scenes, cfg.stage1, cfg.model, cfg.seed)
        save_model(args.out / "stage1.ckpt", stage1_result.params, cfg.model)
        _loss_csv(args.out / "loss_stage1.csv", stage1_result.losses)
        print(f"stage I done: {_loss_summary(stage1_result)}")
    if args.stage in ("II", "both"):
        if stage1_result is None:
            if args.stage1_ckpt is None:
                raise CliError("--stage II needs --stage1-ckpt (or use --stage both)")
            params1, cfg1 = load_model(args.stage1_ckpt)
            from .training import TrainResult

            stage1_result = TrainResult(params=params1, cfg=cfg1, heads=params1.heads)
        stage2_result = train_stage(scenes, cfg.stage2, cfg.model, cfg.seed, stage1=stage1_result)
        save_model(args.out / "stage2.ckpt", stage2_result.params, cfg.model)
        _loss_csv(args.out / "loss_stage2.csv", stage2_result.losses)
        print(f"stage II done: {_loss_summary(stage2_result)}")
    return 0


def _loss_summary(result) -> str:
    if not result.losses:
        return "0 epochs"
    first, last = result.losses[0][1], result.losses[-1][1]
    return f"{len(result.losses)} epochs, loss {first:.4f} -> {last:.4f}"


def _has_split(data_path: Path) -> bool:
    return data_path.is_dir() and (data_path / "splits.json").exists()


def _method_detections(args, cfg: RunConfig, scenes):
    ev = cfg.eval
    if args.method == "nms":
        return detections_for_selector(scenes, lambda cands, g: nms(cands, ev.nms_thresh))
    if args.method == "softnms":
        return detections_for_selector(
            scenes,
            lambda cands, g: soft_nms(
                cands,
                method=ev.softnms_method,
                thresh=ev.softnms_thresh,
                sigma=ev.softnms_sigma,
                score_floor=ev.softnms_floor,
            ),
        )
    if args.method == "boxvote":
        return detections_for_selector(
            scenes,
            lambda cands, g: box_vote(nms(cands, ev.nms_thresh), cands, ev.vote_thresh),
        )
    if args.method == "no-removal":
        return detections_for_selector(
            scenes, lambda cands, g: no_removal(cands, ev.no_removal_thresh)
        )
    if args.method == "model":
        if args.stage1_ckpt is None or args.stage2_ckpt is None:
            raise CliError("--method model needs --stage1-ckpt and --stage2-ckpt")
        params1, cfg1 = load_model(args.stage1_ckpt)
        params2, _cfg2 = load_model(args.stage2_ckpt)
        return pipeline_detections(scenes, params1, params2, cfg1)
    raise CliError(f"unknown method {args.method!r}")


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    split = args.split if _has_split(args.data) or args.split == "all" else "all"
    scenes = _load_scenes(args.data, split)
    if not scenes:
        raise CliError("no scenes selected for evaluation")
    dets = _method_detections(args, cfg, scenes)
    report = map_coco(dets, gts_by_image(scenes))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "eval.csv").write_text(report_csv([(args.method, report)]))
    _write_manifest(args.out, f"eval --method {args.method}", cfg)
    print(f"{args.method}: mAP={report.mAP:.4f} AP50={report.ap50:.4f} "
          f"AP75={report.ap75:.4f} retained={report.mean_retained:.2f}")
    return 0


def cmd_oracle_table(args) -> int:
    cfg = _load_config(args)
    split = args.split if _has_split(args.data) or args.split == "all" else "all"
    scenes = _load_scenes(args.data, split)
    if not scenes:
        raise CliError("no scenes selected")
    rows = oracle_table(
        scenes,
        no_removal_thresh=cfg.eval.no_removal_thresh,
        nms_thresh=cfg.eval.nms_thresh,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "oracle_table.csv").write_text(report_csv(rows))
    _write_manifest(args.out, "oracle-table", cfg)
    for name, report in rows:
        print(f"{name}: mAP={report.mAP:.4f}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_config(args)
    report = run_grad_check()
    status = "pass" if report.passed else "FAIL"
    print(
        f"grad-check: {status} max_rel_err={report.max_rel_err:.3e} "
        f"(worst {report.worst_param}{list(report.worst_index)}, {report.n_coords} coords)"
    )
    del cfg
    return 0 if report.passed else 1


def run_grad_check(seed: int = 0) -> nc.GradCheckReport:
    """Finite-difference check of the full model on a tiny random sequence."""
    from .synthdata import SynthConfig, generate_scene

    mcfg = ModelConfig(d_a=6, d_l=8, d_r=4, eta=(0.5, 0.7), cap=16)
    rng = np.random.default_rng(seed)
    params = init_params(mcfg, heads=2, rng=rng)
    scfg = SynthConfig(
        classes=1,
        objects_per_scene=(2, 2),
        proposals_per_object=(2, 3),
        feat_dim=6,
        background_rate=0.0,
        seed=seed,
    )
    scene = generate_scene(scfg, np.random.default_rng(seed))
    cands = sorted(scene.props, key=lambda c: -c.s0)[:5]
    labels = rng.integers(0, 2, size=(len(cands), 2)).astype(float)

    # The probe loss is scaled by an exact power of two so the finite
    # difference roundoff (about |loss| * 1e-11 at this epsilon) stays below
    # the metric's absolute floor; the scaling shifts exponents only, so the
    # analytic/numeric comparison itself is unchanged.
    def closure():
        s1, _ = forward_sorted(cands, scene.image, params, mcfg)
        return nc.scale(weighted_bce(s1, labels, pos_weight=2.0), 2.0**-5)

    return nc.grad_check(closure, params.all(), eps=1e-5, tol=1e-4)


SVG_GT_COLOR = "#2a9d2a"
SVG_SEL_COLOR = "#d62728"


def render_svg(scene, selected) -> str:
    """Ground truth in green, the method's selection in red, one rect each."""
    w, h = scene.image.w, scene.image.h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" '
        f'width="{w}" height="{h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>',
    ]
    for g in scene.gts:
        parts.append(_rect(g.box, SVG_GT_COLOR, dash=True))
    for p in selected:
        parts.append(_rect(p.box, SVG_SEL_COLOR, dash=False))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _rect(box, color, dash) -> str:
    dash_attr = ' stroke-dasharray="6,3"' if dash else ""
    return (
        f'<rect x="{box.x1}" y="{box.y1}" width="{box.x2 - box.x1}" '
        f'height="{box.y2 - box.y1}" fill="none" stroke="{color}" '
        f'stroke-width="2"{dash_attr}/>'
    )


def cmd_render(args) -> int:
    cfg = _load_config(args)
    scenes = _load_scenes(args.data, "all")
    if not (0 <= args.scene < len(scenes)):
        raise CliError(f"scene index {args.scene} out of range (0..{len(scenes) - 1})")
    scene = scenes[args.scene]
    dets = _method_detections(args, cfg, [scene])
    selected = [d for d in dets if d.score > cfg.eval.no_removal_thresh]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(render_svg(scene, selected))
    print(f"wrote {args.out} ({len(scene.gts)} gt, {len(selected)} selected)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
