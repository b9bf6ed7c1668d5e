"""Command line entry point: ``nbvlab <subcommand> --config run.json ...``."""

import argparse
import logging
import sys
from pathlib import Path

from ..io import write_json, write_obj
from ..network import IGPredictor
from ..scene import scene_manifest
from . import records
from .config import ExperimentConfig, load_config, save_config
from .experiment import (
    ExperimentResult, Lab, annotation_efficiency_curve, bench_ig_speed, build_planner, crossing_ratio, evaluate,
    train_fold, train_reference, write_outputs,
)
from .report import format_summary, run_checks, summary_rows

log = logging.getLogger("nbvlab")


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    return cfg


def _out(args, cfg):
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    return out


def _folds(args, cfg):
    return list(range(cfg.folds)) if args.fold is None else [args.fold]


def cmd_gen_scenes(args):
    cfg = _config(args)
    out = _out(args, cfg)
    lab = Lab(cfg)
    (out / "plants").mkdir(exist_ok=True)
    for i, plant in enumerate(lab.plants):
        write_obj(out / "plants" / f"plant_{i}.obj", plant.vertices, plant.faces)
    folds = []
    for k, (train, test) in enumerate(lab.folds):
        cycles = []
        for spec in lab.eval_specs(k):
            env = lab.env(spec.plant, spec.pose)
            cycles.append({"cycle": spec.cycle, "plant": spec.plant, "first_view": spec.first_view,
                           "scene": scene_manifest(env.scene)})
        folds.append({"fold": k, "train": train.tolist(), "test": test.tolist(), "eval_cycles": cycles})
    write_json(out / "scenes.json", {"rig": lab.rig.to_json(), "folds": folds})
    print(f"wrote {len(lab.plants)} plants and {cfg.folds} folds to {out}")


def cmd_train(args):
    cfg = _config(args)
    out = _out(args, cfg)
    lab = Lab(cfg)
    for k in _folds(args, cfg):
        tf = train_fold(lab, k, checkpoint_dir=out / "checkpoints" / f"fold{k}", progress=log.info)
        records.write_csv(out / f"training_log_fold{k}.csv", records.TRAINING_FIELDS,
                          ({"fold": k, **e} for e in tf.learner.log))
        print(f"fold {k}: {tf.learner.t} iterations in {tf.seconds:.0f} s")


def _checkpoint(root, fold, name):
    path = Path(root) / f"fold{fold}" / name
    if not path.exists():
        raise SystemExit(f"missing checkpoint {path}; run `nbvlab train` first")
    return IGPredictor.load(path)


def cmd_eval(args):
    cfg = _config(args)
    out = _out(args, cfg)
    lab = Lab(cfg)
    root = Path(args.checkpoints or out / "checkpoints")
    res = ExperimentResult(cfg)
    for k in _folds(args, cfg):
        predictors = {}
        if "ssl" in cfg.evaluation.planners:
            predictors["ssl"] = _checkpoint(root, k, "final.ckpt")
        if "strong" in cfg.evaluation.planners:
            predictors["strong"], _ = train_reference(lab, k)
        planners = {name: build_planner(lab, name, predictors) for name in cfg.evaluation.planners}
        res.results.extend(evaluate(lab, k, lab.eval_specs(k), planners))
    write_outputs(res, out)
    print(format_summary(summary_rows(out)))


def cmd_bench_ig(args):
    cfg = _config(args)
    out = _out(args, cfg)
    lab = Lab(cfg)
    est = IGPredictor.load(args.checkpoint) if args.checkpoint else lab.new_predictor(0)
    result = bench_ig_speed(lab, est)
    write_json(out / "bench.json", result)
    print(f"learned {result['learned_exclusive'] * 1e3:.1f} ms, voxel {result['voxel_exclusive'] * 1e3:.1f} ms, "
          f"speedup {result['speedup_exclusive']:.1f}x (inclusive {result['speedup_inclusive']:.1f}x)")


def cmd_annot_curve(args):
    cfg = _config(args)
    out = _out(args, cfg)
    lab = Lab(cfg)
    fold = 0 if args.fold is None else args.fold
    ckpt_dir = Path(args.checkpoints or out / "checkpoints") / f"fold{fold}"
    paths = sorted(ckpt_dir.glob("A*.ckpt"))
    if not paths:
        raise SystemExit(f"no A*.ckpt checkpoints in {ckpt_dir}; run `nbvlab train` first")
    checkpoints = {int(p.stem[1:]): IGPredictor.load(p).params_ for p in paths}
    reference, ledger = train_reference(lab, fold)
    rows = annotation_efficiency_curve(lab, checkpoints, reference, ledger, fold)
    records.write_csv(out / "annotation_curve.csv", records.CURVE_FIELDS, rows)
    cross = crossing_ratio(rows)
    print("no checkpoint matched the reference" if cross is None else f"matches the reference at ratio {cross:.3f}")


def cmd_report(args):
    run = Path(args.run)
    if (run / "cycles.csv").exists():
        print(format_summary(summary_rows(run)))
    checks = run_checks(run)
    if not checks:
        print(f"no results found in {run}", file=sys.stderr)
        return 1
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f" ({detail})" if detail else ""))
    return 0 if all(ok for _, ok, _ in checks) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="nbvlab", description="Next-best-view planning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help, fold=False, checkpoints=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON config (defaults when omitted)")
        p.add_argument("--out", help="output directory (config output_dir when omitted)")
        if fold:
            p.add_argument("--fold", type=int, help="single fold (all folds when omitted)")
        if checkpoints:
            p.add_argument("--checkpoints", help="checkpoint root (OUT/checkpoints when omitted)")
        p.set_defaults(func=fn)
        return p

    add("gen-scenes", cmd_gen_scenes, "write plant meshes and the fold and cycle layout")
    add("train", cmd_train, "online self-supervised training with checkpoints", fold=True)
    add("eval", cmd_eval, "evaluate the configured planners", fold=True, checkpoints=True)
    p = add("bench-ig", cmd_bench_ig, "time learned against ray-cast view scoring")
    p.add_argument("--checkpoint", help="trained model (fresh weights when omitted)")
    add("annot-curve", cmd_annot_curve, "coverage of checkpoints against the dense reference", fold=True,
        checkpoints=True)
    p = sub.add_parser("report", help="summarise a run directory and check its results")
    p.add_argument("run", help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args) or 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
