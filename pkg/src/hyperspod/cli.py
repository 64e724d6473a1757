"""``hyperspod`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every failure
prints one ``hyperspod: error: ...`` line on stderr.  Results go to files
under ``--out`` (or the named output file) and a JSON summary to stdout;
``--pretty`` prints human-readable tables instead.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import HyperspodError

log = logging.getLogger("hyperspod")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(args, payload, table: str | None = None) -> None:
    if args.pretty and table is not None:
        sys.stdout.write(table if table.endswith("\n") else table + "\n")
    else:
        sys.stdout.write(json.dumps(payload, indent=2 if args.pretty else None, sort_keys=True) + "\n")


def _defaults(args) -> dict:
    base = cfgmod.defaults()
    return cfgmod.merge(base, cfgmod.load_toml(args.defaults)) if args.defaults else base


def _recipe_path(value: str) -> Path:
    p = Path(value)
    if p.is_file():
        return p
    stem = p.name[:-5] if p.name.endswith(".toml") else p.name.split(".")[0]
    try:
        return cfgmod.packaged_config(stem)
    except FileNotFoundError:
        raise UsageError(f"config {value!r} is neither a file nor a packaged recipe") from None


def _stem(path) -> str:
    name = Path(path).name
    return name[:-4] if name.endswith(".hsc") else Path(path).stem


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .scenesynth import generate_dataset, load_recipe

    recipe = load_recipe(_recipe_path(args.config), seed=args.seed)
    manifest = generate_dataset(recipe, args.out)
    _emit(args, {"out": str(args.out), "files": len(manifest["files"]), "seed": manifest["seed"],
                 "dropped_objects": manifest["dropped_objects"]},
          f"wrote {len(manifest['files'])} files to {args.out} (seed {manifest['seed']})")
    return 0


def _windows_for(args, priors):
    from .htd import DualWindow

    table: dict[int, DualWindow] = {}
    if args.config:
        doc = cfgmod.load_toml(_recipe_path(args.config))
        for c in doc.get("classes", []):
            if "window" in c:
                table[int(c["class_id"])] = DualWindow(*c["window"])
    fallback = _defaults(args).get("windows", {})
    out = {}
    for p in priors:
        if p.class_id in table:
            out[p.class_id] = table[p.class_id]
        elif args.win_in is not None and args.win_out is not None:
            out[p.class_id] = DualWindow(args.win_in, args.win_out)
        elif f"C{p.class_id + 1}" in fallback:
            out[p.class_id] = DualWindow(*fallback[f"C{p.class_id + 1}"])
        else:
            raise UsageError(f"no dual window for class {p.class_id}: pass --win-in/--win-out or --config")
    return out


def cmd_detect(args) -> int:
    from .hsicube import read_cube, write_score_map
    from .htd import detect_all, read_priors_csv

    priors = read_priors_csv(args.priors)
    if args.classes:
        keep = {int(c) for c in args.classes.split(",")}
        priors = [p for p in priors if p.class_id in keep]
    windows = _windows_for(args, priors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in args.cube:
        cube = read_cube(path)
        for smap in detect_all(cube, priors, args.method, windows, workers=args.workers, bg_rank=args.bg_rank):
            target = out / f"{_stem(path)}_c{smap.class_id}.hsc"
            write_score_map(smap, target)
            written.append(str(target))
    _emit(args, {"method": args.method, "score_maps": written},
          f"{args.method}: wrote {len(written)} score maps to {out}")
    return 0


def _forward_config(args):
    d = _defaults(args)["model"]
    user = cfgmod.load_toml(args.config) if args.config else {}
    return cfgmod.merge({k: v for k, v in d.items() if k != "scale"}, user.get("forward", {}))


def _input_scale(args, cube, fwd) -> float:
    """``--scale`` as a number or a ``[model.scale]`` key; by default chosen from the cube unit."""
    table = _defaults(args)["model"]["scale"]
    value = args.scale if args.scale is not None else fwd.get("scale")
    if value is None:
        value = "reflectance" if cube.unit == "reflectance" else "spod"
    if isinstance(value, str) and value in table:
        return float(table[value])
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--scale must be a number or one of {sorted(table)}") from None


def cmd_forward(args) -> int:
    from .hsicube import read_cube, write_detections
    from .kernels import KernelConfig, init_weights, load_weights, run_forward, save_weights

    cube = read_cube(args.cube)
    fwd = _forward_config(args)
    if args.weights and Path(args.weights, "manifest.json").is_file():
        weights = load_weights(args.weights)
        overrides = {k: fwd[k] for k in ("q_match", "top_k", "nms_iou") if k in fwd}
        weights.config = KernelConfig(**{**weights.config.__dict__, **overrides})
    elif args.random_seed is not None:
        keys = ("dim", "heads", "points", "enc_layers", "dec_layers", "anchor_size", "q_match", "top_k", "nms_iou")
        kc = KernelConfig(bands=cube.bands, num_classes=args.num_classes,
                          scale=_input_scale(args, cube, fwd), **{k: fwd[k] for k in keys if k in fwd})
        weights = init_weights(kc, args.random_seed)
        if args.weights:
            save_weights(weights, args.weights)
    else:
        raise UsageError("pass --weights <dir with manifest.json> or --random-seed N")
    dets = run_forward(cube, weights, image_id=args.image_id, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_detections(dets, out / "detections.json")
    _emit(args, {"detections": len(dets), "out": str(out / "detections.json")},
          f"{len(dets)} detections written to {out / 'detections.json'}")
    return 0


def _image_maps(scores_dir: Path, aset):
    """Yield ``(image, class_id, score_map_path)`` for every image and category."""
    for im in aset.images:
        stem = _stem(im.file)
        for cid in sorted(aset.categories):
            p = scores_dir / f"{stem}_c{cid}.hsc"
            if p.is_file():
                yield im, cid, p


def cmd_scores_to_objects(args) -> int:
    from .annotate import best_seg_threshold_pooled, scores_to_detections
    from .errors import EmptyGt
    from .hsicube import read_annotations, read_mask, read_score_map, write_detections

    aset = read_annotations(args.annotations)
    scores_dir = Path(args.scores_dir)
    entries = list(_image_maps(scores_dir, aset))
    if not entries:
        raise HyperspodError(f"no score maps matching the annotation images in {scores_dir}")
    maps = {(im.id, cid): read_score_map(p) for im, cid, p in entries}

    if args.threshold is not None:
        thresholds = {cid: args.threshold for cid in aset.categories}
    elif args.thresholds_json:
        thresholds = {int(k): float(v) for k, v in json.loads(Path(args.thresholds_json).read_text()).items()}
    elif args.auto:
        if not args.masks_dir:
            raise UsageError("--auto needs --masks-dir")
        thresholds = {}
        for cid in sorted(aset.categories):
            ms, gs = [], []
            for im, c, _ in entries:
                if c == cid:
                    ms.append(maps[(im.id, c)])
                    gs.append(read_mask(Path(args.masks_dir) / f"{_stem(im.file)}_c{c}.hsc"))
            try:
                thresholds[cid] = best_seg_threshold_pooled(ms, gs)[0]
            except EmptyGt:
                log.warning("class %d has no positive pixel; using threshold 1.0", cid)
                thresholds[cid] = 1.0
    else:
        raise UsageError("pass --threshold T, --thresholds-json F or --auto --masks-dir D")

    dets = []
    for im, cid, _ in entries:
        dets.extend(scores_to_detections(maps[(im.id, cid)], thresholds[cid], image_id=im.id))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(dets, out)
    (out.parent / (out.stem + ".thresholds.json")).write_text(
        json.dumps({str(k): v for k, v in sorted(thresholds.items())}, indent=2, sort_keys=True) + "\n")
    _emit(args, {"detections": len(dets), "thresholds": {str(k): v for k, v in thresholds.items()}},
          f"{len(dets)} detections; thresholds " + ", ".join(f"c{k}={v:.2f}" for k, v in sorted(thresholds.items())))
    return 0


def _eval_config(args):
    from .evaluation import EvalConfig

    d = _defaults(args)["eval"]
    crit = {"coco": "coco", "iou25": "fixed_iou", "inner-outer": "inner_outer"}[args.criterion]
    return EvalConfig(iou_grid=tuple(d["iou_grid"]), extra_iou=tuple(d["extra_iou"]),
                      max_dets=None if args.all_dets else int(d["max_dets"]), criterion=crit,
                      fixed_iou=0.25, inner=float(d["inner"]), outer=float(d["outer"]))


def cmd_eval(args) -> int:
    from .evaluation import evaluate, pixel_metrics
    from .hsicube import read_annotations, read_detections, read_mask, read_score_map

    aset = read_annotations(args.gts)
    dets = read_detections(args.dets)
    report = evaluate(dets, aset.annotations, _eval_config(args), aset.categories, sorted(aset.categories))
    if args.scores_dir and args.masks_dir:
        maps, masks = [], []
        for im, cid, p in _image_maps(Path(args.scores_dir), aset):
            maps.append(read_score_map(p))
            masks.append(read_mask(Path(args.masks_dir) / f"{_stem(im.file)}_c{cid}.hsc"))
        pix = pixel_metrics(maps, masks)
        for cid, m in pix.items():
            if cid in report.per_class:
                report.per_class[cid]["auc"] = m["auc"]
                report.per_class[cid]["seg_iou"] = m["seg_iou"]
        if pix:
            report.summary["mAUC"] = float(np.mean([m["auc"] for m in pix.values()]))
            report.summary["mIoU"] = float(np.mean([m["seg_iou"] for m in pix.values()]))
    text = report.to_markdown() if args.report == "markdown" else report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_assign(args) -> int:
    from .assign import LossWeights, hybrid_assign
    from .errors import Infeasible
    from .hsicube import read_annotations, read_detections

    aset = read_annotations(args.gts)
    preds = read_detections(args.preds)
    n_cls = max([*aset.categories, *(d.class_id for d in preds)], default=0) + 1
    a = _defaults(args)["assign"]
    weights = LossWeights(a["loss_cls"], a["loss_l1"], a["loss_giou"]) if args.weighted else LossWeights.unweighted()
    tau_iou = a["tau_iou"] if args.tau_iou is None else args.tau_iou
    t_cap = a["t_cap"] if args.t_cap is None else args.t_cap
    result, failed = {}, []
    for im in aset.images:
        scale = np.array([im.width, im.height, im.width, im.height], dtype=np.float64)
        gts = aset.for_image(im.id)
        ps = [d for d in preds if d.image_id == im.id]
        gb = np.array([g.box.as_array() for g in gts]).reshape(-1, 4) / scale
        pb = np.array([d.box.as_array() for d in ps]).reshape(-1, 4) / scale
        scores = np.zeros((len(ps), n_cls))
        for i, d in enumerate(ps):
            scores[i, d.class_id] = d.confidence
        try:
            res = hybrid_assign(gb, [g.class_id for g in gts], pb, scores, weights, tau_iou, t_cap)
        except Infeasible as exc:
            failed.append(im.id)
            result[str(im.id)] = {"error": str(exc)}
            continue
        result[str(im.id)] = res.to_json()
    _emit(args, {"images": result, "infeasible": failed})
    return 1 if failed else 0


def cmd_inject_noise(args) -> int:
    from .evaluation import inject_noise, measured_snr_db
    from .hsicube import read_cube, write_cube

    cube = read_cube(args.cube)
    noisy = inject_noise(cube, args.snr_db, np.random.default_rng(args.seed), calibrated=args.calibrated)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{_stem(args.cube)}_snr{args.snr_db:g}.hsc"
    write_cube(noisy, target)
    snr = measured_snr_db(cube, noisy) if np.isfinite(args.snr_db) else np.full(cube.bands, np.inf)
    _emit(args, {"out": str(target), "measured_snr_db": [float(v) for v in snr]},
          f"wrote {target}; measured SNR {snr.min():.2f}..{snr.max():.2f} dB")
    return 0


def cmd_kernel_check(args) -> int:
    from .kernels import check_invariants

    results = check_invariants(args.seed)
    ok = all(p for _, p, _ in results)
    table = "\n".join(f"{'PASS' if p else 'FAIL'}  {name}  ({detail})" for name, p, detail in results)
    _emit(args, {"passed": ok, "checks": [{"name": n, "passed": p, "detail": d} for n, p, d in results]}, table)
    return 0 if ok else 1


def cmd_report(args) -> int:
    from .evaluation import EvalReport

    rows = []
    class_ids: set[int] = set()
    names: dict[int, str] = {}
    for path in args.reports:
        label, _, file = path.partition("=") if "=" in path else (Path(path).stem, "", path)
        rep = EvalReport.from_json(Path(file).read_text(encoding="utf-8"))
        rows.append((label, rep))
        class_ids |= set(rep.per_class)
        names.update(rep.class_names)
    ids = sorted(class_ids)
    metrics = ["mAUC", "mIoU", "mAP", "mAP25", "mAR", "mRe25"]
    metrics = [m for m in metrics if any(m in r.summary for _, r in rows)]
    head = ["Method"] + metrics + [f"AP_{names.get(i, f'C{i + 1}')}" for i in ids]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for label, rep in rows:
        cells = [label] + [f"{rep.summary[m]:.3f}" if m in rep.summary else "-" for m in metrics]
        cells += [f"{rep.per_class[i]['ap']:.3f}" if i in rep.per_class else "-" for i in ids]
        lines.append("| " + " | ".join(cells) + " |")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="human-readable output")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on this)")
    common.add_argument("--log-level", default="WARNING")
    common.add_argument("--defaults", help="TOML file merged over the built-in defaults")

    p = _Parser(prog="hyperspod", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", parents=[common], help="synthesize a dataset from a TOML recipe")
    s.add_argument("--config", required=True, help="recipe file or packaged recipe name (e.g. spod-mini)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", parents=[common], help="run a classic detector on cubes")
    s.add_argument("--method", required=True, choices=["cem", "smf", "osp", "asd", "tcimf"])
    s.add_argument("--priors", required=True)
    s.add_argument("--cube", required=True, nargs="+")
    s.add_argument("--win-in", type=int, help="inner window for every class")
    s.add_argument("--win-out", type=int, help="outer window for every class")
    s.add_argument("--config", help="recipe whose [[classes]] carry per-class 'window' entries "
                   "(precedence: recipe, --win-in/--win-out, [windows] C<id+1> of the defaults)")
    s.add_argument("--classes", help="comma-separated class ids to run (default all)")
    s.add_argument("--bg-rank", type=int, default=0, help="OSP: local background eigenvectors to project out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("forward", parents=[common], help="run the transformer forward pass")
    s.add_argument("--cube", required=True)
    s.add_argument("--weights", help="weights directory (written there when --random-seed is given)")
    s.add_argument("--random-seed", type=int)
    s.add_argument("--num-classes", type=int, default=1)
    s.add_argument("--scale", help="input divisor V: a number or spod/avon/reflectance (default from cube unit)")
    s.add_argument("--config", help="TOML with a [forward] table overriding model defaults")
    s.add_argument("--image-id", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("scores-to-objects", parents=[common], help="binarize score maps into detections")
    s.add_argument("--scores-dir", required=True)
    s.add_argument("--annotations", required=True, help="annotation file listing the images")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=float)
    g.add_argument("--thresholds-json")
    g.add_argument("--auto", action="store_true", help="per-class threshold maximizing pooled segmentation IoU")
    s.add_argument("--masks-dir")
    s.add_argument("--out", required=True, help="detections JSON path")
    s.set_defaults(func=cmd_scores_to_objects)

    s = sub.add_parser("eval", parents=[common], help="instance-level evaluation")
    s.add_argument("--dets", required=True)
    s.add_argument("--gts", required=True)
    s.add_argument("--criterion", choices=["coco", "iou25", "inner-outer"], default="coco")
    s.add_argument("--report", choices=["json", "markdown"], default="json")
    s.add_argument("--scores-dir", help="with --masks-dir, adds AUC and segmentation IoU")
    s.add_argument("--masks-dir")
    s.add_argument("--all-dets", action="store_true", help="do not cap detections per image")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("assign", parents=[common], help="hybrid label assignment for debugging")
    s.add_argument("--gts", required=True)
    s.add_argument("--preds", required=True)
    s.add_argument("--tau-iou", type=float, help="dynamic-match IoU floor (default from defaults file)")
    s.add_argument("--t-cap", type=int, help="dynamic positives per gt (default from defaults file)")
    s.add_argument("--weighted", action="store_true", help="use the training loss weights in the forced cost")
    s.set_defaults(func=cmd_assign)

    s = sub.add_parser("inject-noise", parents=[common], help="add Gaussian noise at a target SNR")
    s.add_argument("--cube", required=True)
    s.add_argument("--snr-db", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--calibrated", action="store_true", help="match the realized noise variance exactly")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inject_noise)

    s = sub.add_parser("kernel-check", parents=[common], help="run the kernel invariant suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_kernel_check)

    s = sub.add_parser("report", parents=[common], help="markdown comparison table from eval JSON files")
    s.add_argument("reports", nargs="+", help="report JSON files, optionally as label=path")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"hyperspod: error: {exc}", file=sys.stderr)
        return 2
    except (HyperspodError, OSError, ValueError, KeyError) as exc:
        print(f"hyperspod: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
