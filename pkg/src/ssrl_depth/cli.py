"""Command-line entry point: ``ssrl-depth <command> ...``.

Commands::

    generate-data --config <file> --out <root>
    train --stage {style|ssrl|depth|all} --config <file> [--resume <state.pt>] --data <root> --out <dir>
    ablate --spec <file> [--config <file>] --data <root> --out <dir>
    evaluate --ckpt <file> --data <root> --split test [--proto <file>] --out <dir>
    default-config
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .data.dataset import DatasetManifest, build_dataset
from .evaluation import emit_report, evaluate_run, load_protocol
from .pipeline.config import AblationSpec, Config, default_config_text, load_config
from .pipeline.nets import build_networks
from .pipeline.runner import ablation_grid, run_ablation, run_variant, write_rows
from .pipeline.stages import TrainData, run_depth_stage, run_ssrl_stage, run_style_transfer_stage

log = logging.getLogger("ssrl_depth")

STAGE_DIRS = {"style": "style_transfer", "ssrl": "ssrl", "depth": "depth"}


def _manifest(args: argparse.Namespace, cfg: Config) -> DatasetManifest:
    if args.data is not None and (Path(args.data) / "manifest.json").exists():
        return DatasetManifest.load(args.data)
    root = Path(args.data) if args.data is not None else Path(args.out) / "data"
    log.info("generating dataset in %s", root)
    return build_dataset(cfg.data, root)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    manifest = build_dataset(cfg.data, args.out)
    counts = {k: len(v) for k, v in manifest.splits.items()}
    print(json.dumps({"root": str(manifest.root), "records": counts}))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    manifest = _manifest(args, cfg)
    out = Path(args.out)
    data = TrainData.from_manifest(manifest, cfg.nets.torch_dtype)
    if args.stage == "all":
        if args.resume:
            raise SystemExit("--resume applies to a single stage")
        run_variant(cfg, data, out)
        print(json.dumps({"out": str(out), "variant": cfg.ablation.variant}))
        return 0
    nets = build_networks(cfg)
    stage_dir = out / STAGE_DIRS[args.stage]
    if args.stage == "style":
        state = run_style_transfer_stage(cfg, data, nets, stage_dir, resume=args.resume)
    elif args.stage == "ssrl":
        state = run_ssrl_stage(cfg, data, nets, stage_dir, out / "style_transfer", resume=args.resume)
    else:
        init = out / "ssrl" if (out / "ssrl" / "done.json").exists() else out / "style_transfer"
        state = run_depth_stage(cfg, data, nets, stage_dir, init, resume=args.resume)
    print(json.dumps({"stage": state.stage, "epochs": state.epoch, "steps": state.step, "out": state.out_dir,
                      "val": state.metrics}))
    return 0


def read_ablation_specs(path: str) -> list[AblationSpec]:
    """``[ablation]`` with ``grid = all`` and ``seeds``, or one ``[run.<name>]`` section per spec."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(Path(path).read_text(encoding="utf-8"))
    defaults = parser["ablation"] if parser.has_section("ablation") else {}
    seeds = tuple(int(s) for s in defaults.get("seeds", "0").split(","))
    if defaults.get("grid", "").strip().lower() == "all":
        return ablation_grid(seeds)
    specs = []
    for name in parser.sections():
        if not name.startswith("run"):
            continue
        sec = parser[name]
        lam = sec.get("lambda_crdoco")
        alpha = sec.get("alpha")
        specs.append(AblationSpec(
            variant=sec.get("variant", "full"), tap=sec.get("tap"), mode=sec.get("mode"),
            alpha=int(alpha) if alpha else None, lambda_crdoco=float(lam) if lam else None,
            seeds=tuple(int(s) for s in sec.get("seeds", ",".join(map(str, seeds))).split(","))))
    if not specs:
        raise ValueError(f"{path} defines no ablation runs")
    return specs


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    manifest = _manifest(args, cfg)
    out = Path(args.out)
    data = TrainData.from_manifest(manifest, cfg.nets.torch_dtype)
    rows = []
    for spec in read_ablation_specs(args.spec):
        rows += run_ablation(spec, cfg, manifest, out / "runs", data, split=args.split,
                             shared_style_root=out / "style")
        write_rows(rows, out / "ablation.csv")
    print(json.dumps({"rows": len(rows), "table": str(out / "ablation.csv")}))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    proto = load_protocol(args.proto)
    manifest = DatasetManifest.load(args.data)
    result = evaluate_run(args.ckpt, manifest, args.split, proto, domain=args.domain)
    emit_report(result, args.out, proto, visualize=not args.no_viz)
    print(json.dumps(result.aggregate.to_dict()))
    return 0


def cmd_default_config(args: argparse.Namespace) -> int:
    sys.stdout.write(default_config_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssrl-depth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the toy two-domain benchmark")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run one stage or the whole pipeline")
    p.add_argument("--stage", choices=("style", "ssrl", "depth", "all"), default="all")
    p.add_argument("--config")
    p.add_argument("--resume", help="state.pt of an interrupted stage")
    p.add_argument("--data", help="dataset root; generated from the config when missing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run ablation specs and write one metrics row per run")
    p.add_argument("--spec", required=True)
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="score a task-network checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--domain", default="target", choices=("source", "target"))
    p.add_argument("--proto")
    p.add_argument("--out", required=True)
    p.add_argument("--no-viz", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("default-config", help="print the default configuration file")
    p.set_defaults(func=cmd_default_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
