"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmdse", description="Multi-level HOI detection on synthetic scenes.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--spec", type=Path, help="generator spec JSON (defaults apply when omitted)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--config", type=Path, required=True)

    i = sub.add_parser("infer", help="write detections for a dataset split")
    i.add_argument("--ckpt", type=Path, required=True)
    i.add_argument("--data", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True)
    i.add_argument("--split", choices=("test", "train"), default="test")
    i.add_argument("--top-k", type=int)

    e = sub.add_parser("eval", help="score detections against a dataset split")
    e.add_argument("--dets", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--json", type=Path, help="also write the report as JSON here")

    a = sub.add_parser("ablate", help="train and compare variants along one axis")
    a.add_argument("--axis", required=True, choices=("levels", "lambda_d", "distance_type", "prompts"))
    a.add_argument("--config", type=Path, help="base run config (reference preset when omitted)")
    a.add_argument("--data", type=Path, help="dataset directory, overrides the config")
    a.add_argument("--out", type=Path, help="output directory, overrides the config")

    m = sub.add_parser("match", help="solve an assignment problem given as a JSON cost matrix")
    m.add_argument("--cost", type=Path, required=True)
    m.add_argument("--oracle", action="store_true", help="use the exhaustive solver instead")
    return p


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_gen_data(args) -> int:
    from .synthgen import GeneratorSpec, generate, save_dataset
    spec = GeneratorSpec()
    if args.spec is not None:
        try:
            spec = GeneratorSpec.from_json(json.loads(args.spec.read_text()))
        except FileNotFoundError:
            raise UsageError(f"spec file {args.spec} not found") from None
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.spec}: {exc}") from None
    ds = generate(spec, args.seed)
    save_dataset(ds, args.out)
    _log(f"wrote {len(ds.train)} train and {len(ds.test)} test scenes to {args.out}")
    return 0


def _load_config(path):
    from .trainer import ConfigError, load_config
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    from .trainer import train
    config = _load_config(args.config)

    def progress(rec):
        if rec["step"] % 20 == 0:
            _log(f"step {rec['step']:5d}  loss {rec['total']:.4f}")

    res = train(config, progress=progress)
    _log(f"checkpoint {res.checkpoint}")
    return 0


def cmd_infer(args) -> int:
    from .evalkit import write_detections
    from .trainer import infer
    if args.top_k is not None and args.top_k < 1:
        raise UsageError("--top-k must be positive")
    dets = infer(args.ckpt, args.data, args.split, args.top_k)
    write_detections(dets, args.out)
    _log(f"wrote {len(dets)} detections to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .evalkit import read_detections, write_report
    from .synthgen import load_dataset
    from .trainer import evaluate_dataset
    report = evaluate_dataset(read_detections(args.dets), load_dataset(args.data), args.split)
    if args.json is not None:
        write_report(report, args.json)
    print(report.table())
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .trainer import RunConfig, ablate, config_from_dict
    config = _load_config(args.config) if args.config is not None else config_from_dict({})
    if args.data is not None:
        config = replace(config, data=str(args.data))
    if args.out is not None:
        config = replace(config, out=str(args.out))
    assert isinstance(config, RunConfig)
    res = ablate(config, args.axis, progress=lambda label, row: _log(f"finished {label}"))
    print(res.table())
    return 0


def cmd_match(args) -> int:
    from .matching import brute_force_match, hungarian
    try:
        cost = np.array(json.loads(args.cost.read_text()), dtype=np.float64)
    except FileNotFoundError:
        raise UsageError(f"cost file {args.cost} not found") from None
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.cost}: not a numeric 2-D array ({exc})") from None
    if cost.ndim != 2:
        raise UsageError(f"{args.cost}: expected a 2-D array, got {cost.ndim} dimensions")
    transposed = cost.shape[0] < cost.shape[1]
    solve = brute_force_match if args.oracle else hungarian
    asg = solve(cost.T if transposed else cost)
    pairs = [(int(c), int(r)) if transposed else (int(r), int(c)) for r, c in asg.pairs]
    print(json.dumps({"assignment": sorted(pairs), "cost": asg.total}))
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "ablate": cmd_ablate, "match": cmd_match}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _log(f"cmdse {args.command}: {exc}")
        return USAGE_ERROR
    except KeyboardInterrupt:
        _log("interrupted")
        return RUNTIME_ERROR
    except Exception as exc:  # every other failure is a runtime error with a one-line diagnostic
        _log(f"cmdse {args.command}: error: {exc}")
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
