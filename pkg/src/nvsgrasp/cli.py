"""Command-line entry point: ``nvsgrasp <subcommand> --out RUN_DIR [flags]``.

Configuration is layered: built-in defaults, then the run directory's own
``config.json`` (stage subcommands only), then ``--config FILE``, then
explicit flags. Nested settings use prefixed flags such as
``--optimization-iterations`` or ``--nms-translation-threshold``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional, get_type_hints

from . import io
from .graspeval import FrictionSweep
from .graspgen import GripperSpec
from .graspost import ClusterParams, NmsParams
from .pipeline import (STAGES, PipelineConfig, StageError, load_report, run_pipeline, summarize,
                       write_gain_csv)
from .splatmap import OptimizationConfig

NESTED = {"optimization": OptimizationConfig, "nms": NmsParams, "cluster": ClusterParams,
          "gripper": GripperSpec}
SKIPPED = {"friction"} | set(NESTED)


def _flag_type(tp):
    if tp in ("bool", bool):
        return None
    for name, conv in (("int", int), ("float", float)):
        if tp in (name, conv):
            return conv
    return str


def _add_field(group, dest: str, flag: str, tp, help_default):
    if _flag_type(tp) is None:
        group.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None,
                           help=f"default {help_default}")
    else:
        metavar = dest.rsplit(".", 1)[-1].upper()
        group.add_argument(flag, dest=dest, type=_flag_type(tp), default=None, metavar=metavar,
                           help=f"default {help_default}")


def _add_config_flags(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--out", required=True, type=Path, help="run directory")
    p.add_argument("--config", type=Path, help="JSON file overriding the defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("pipeline")
    hints = get_type_hints(PipelineConfig)
    defaults = PipelineConfig()
    for f in dataclasses.fields(PipelineConfig):
        if f.name in SKIPPED:
            continue
        if f.name == "seed":
            g.add_argument("--seed", dest="seed", type=int, required=seed_required, default=None,
                           help="random seed" + (" (required)" if seed_required else ""))
            continue
        tp = hints[f.name]
        if tp in (Optional[str], Optional[int]):
            tp = str if tp == Optional[str] else int
        _add_field(g, f.name, "--" + f.name.replace("_", "-"), tp, getattr(defaults, f.name))
    g.add_argument("--friction", dest="friction", type=float, nargs="+", default=None,
                   help=f"friction coefficients, default {' '.join(map(str, FrictionSweep().coefficients))}")
    for prefix, cls in NESTED.items():
        ng = p.add_argument_group(prefix)
        sub_default = getattr(defaults, prefix)
        for f in dataclasses.fields(cls):
            _add_field(ng, f"{prefix}.{f.name}", f"--{prefix}-{f.name.replace('_', '-')}",
                       f.type, getattr(sub_default, f.name))


def build_config(args: argparse.Namespace, use_run_dir: bool) -> PipelineConfig:
    """Defaults < run directory config.json < --config file < explicit flags."""
    d = PipelineConfig().to_dict()

    def merge(over: dict):
        for k, v in over.items():
            if k in NESTED and isinstance(v, dict):
                d[k].update(v)
            else:
                d[k] = v

    if use_run_dir and (args.out / "config.json").exists():
        merge(io.load_json(args.out / "config.json"))
    if args.config is not None:
        merge(io.load_json(args.config))
    for key, val in vars(args).items():
        if val is None or key in ("out", "config", "verbose", "command", "func"):
            continue
        if "." in key:
            prefix, name = key.split(".", 1)
            d[prefix][name] = val
        elif key == "friction":
            d["friction"] = {"coefficients": list(val)}
        else:
            d[key] = val
    return PipelineConfig.from_dict(d)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_stage(args) -> int:
    cfg = build_config(args, use_run_dir=True)
    run_pipeline(cfg, args.out, stages=[args.command])
    return 0


def cmd_run(args) -> int:
    cfg = build_config(args, use_run_dir=False)
    report = run_pipeline(cfg, args.out)
    print(summarize(report))
    return 0


def cmd_report(args) -> int:
    reports = [load_report(d) for d in args.run_dirs]
    for rep in reports:
        print(summarize(rep))
        print()
    csv_path = args.csv or (args.run_dirs[0] / "gains.csv" if len(args.run_dirs) == 1 else Path("gains.csv"))
    n = write_gain_csv(csv_path, reports)
    print(f"wrote {n} rows to {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvsgrasp",
                                     description="Grasp generation from real and splat-rendered novel views.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage on a run directory")
        _add_config_flags(p, seed_required=False)
        p.set_defaults(func=cmd_stage)
    p = sub.add_parser("run", help="run every stage")
    _add_config_flags(p, seed_required=True)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="summarize completed run directories")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--csv", type=Path, help="gain table output (one row per scene and branch)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except StageError as e:
        print(f"nvsgrasp: stage {e.stage} failed: {e.message}", file=sys.stderr)
        return 1
    except io.MissingArtifactError as e:
        print(f"nvsgrasp: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"nvsgrasp: invalid configuration: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
