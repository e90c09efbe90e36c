"""Command-line entry point: synth, train, predict, eval, baseline, gradcheck.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure. All
outputs are plain files; nothing needs a terminal. Every subcommand honors
--seed, and repeated runs with the same seed produce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import gradcheck as gradcheck_mod
from . import inference, synthgen, trainer
from .bundles import load_bundles
from .state import CheckpointError, load_checkpoint
from .validation import ValidationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")
    return path


def _load_json(path: str, what: str) -> dict:
    _require_file(path, what)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{what} {path} is not valid JSON: {exc}") from exc


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", metavar="PATH", help="output file or directory")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = _Parser(prog="inhand", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common],
                   help="generate synthetic train/eval bundle files")

    p_train = sub.add_parser("train", parents=[common], help="train from a bundle file")
    p_train.add_argument("--data", required=True, help="training bundle JSONL")
    p_train.add_argument("--log", help="write per-epoch JSONL log here")

    p_pred = sub.add_parser("predict", parents=[common],
                            help="narration-free predictions from a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", required=True, help="bundle JSONL to predict on")

    p_eval = sub.add_parser("eval", parents=[common],
                            help="score predictions against ground-truth bundles")
    p_eval.add_argument("--pred", required=True, help="prediction JSONL")
    p_eval.add_argument("--data", required=True, help="ground-truth bundle JSONL")

    p_base = sub.add_parser("baseline", parents=[common],
                            help="mask-overlap contact baseline predictions")
    p_base.add_argument("--data", required=True, help="bundle JSONL to predict on")

    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference checks of all gradients")
    return parser


def _cmd_synth(args) -> int:
    config_doc = _load_json(args.config, "synth config") if args.config else {}
    config = synthgen.SynthConfig.from_dict(config_doc)
    if args.seed is not None:
        config = synthgen.SynthConfig.from_dict({**config.to_dict(), "seed": args.seed})
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    train_path = os.path.join(out_dir, "train.jsonl")
    eval_path = os.path.join(out_dir, "eval.jsonl")
    n_train, n_eval = synthgen.generate_dataset(config, train_path, eval_path)
    if not args.quiet:
        print(f"wrote {n_train} train scenes to {train_path}")
        print(f"wrote {n_eval} eval scenes to {eval_path}")
    return 0


def _cmd_train(args) -> int:
    config_doc = _load_json(args.config, "train config") if args.config else {}
    config = trainer.TrainConfig.from_dict(config_doc)
    if args.seed is not None:
        config = trainer.TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    if not args.out:
        raise ValidationError("train requires --out for the checkpoint path")
    bundles = load_bundles(_require_file(args.data, "training data"))
    state, log = trainer.train(bundles, config, checkpoint_path=args.out,
                               quiet=args.quiet)
    if args.log:
        log.to_jsonl(args.log)
    if not args.quiet:
        final = log.epochs[-1]
        print(f"trained {config.epochs} epochs; final total loss "
              f"{final['loss_total']:.6f}; checkpoint at {args.out}")
    return 0


def _cmd_predict(args) -> int:
    state = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    bundles = load_bundles(_require_file(args.data, "bundle data"))
    if not args.out:
        raise ValidationError("predict requires --out for the prediction path")
    preds = [inference.predict(state, b) for b in bundles]
    inference.save_predictions(preds, args.out)
    if not args.quiet:
        print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def _cmd_baseline(args) -> int:
    bundles = load_bundles(_require_file(args.data, "bundle data"))
    if not args.out:
        raise ValidationError("baseline requires --out for the prediction path")
    preds = [inference.iou_contact_baseline(b) for b in bundles]
    inference.save_predictions(preds, args.out)
    if not args.quiet:
        print(f"wrote {len(preds)} baseline predictions to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    preds = inference.load_predictions(_require_file(args.pred, "predictions"))
    bundles = load_bundles(_require_file(args.data, "ground-truth data"))
    by_id = {b.id: b for b in bundles}
    missing = [p.id for p in preds if p.id not in by_id]
    if missing:
        raise ValidationError(f"prediction id {missing[0]!r} has no ground-truth bundle")
    extra = set(by_id) - {p.id for p in preds}
    if extra:
        raise ValidationError(f"ground-truth id {sorted(extra)[0]!r} has no prediction")
    aligned = [by_id[p.id] for p in preds]
    report = inference.evaluate(preds, aligned)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2)
            fh.write("\n")
    if not args.quiet:
        print(report.to_table())
    return 0


def _cmd_gradcheck(args) -> int:
    base = args.seed if args.seed is not None else 0
    report = gradcheck_mod.run_gradcheck(seeds=range(base, base + 10))
    if args.out:
        gradcheck_mod.write_report(report, args.out)
    if not args.quiet:
        per_component: dict[str, float] = {}
        for check in report.checks:
            key = check["component"]
            per_component[key] = max(per_component.get(key, 0.0), check["max_rel_err"])
        for key, err in sorted(per_component.items()):
            print(f"{key:<16} max rel err {err:.3e}")
        print(f"overall {'PASS' if report.passed else 'FAIL'} "
              f"(max {report.max_rel_err:.3e}, tol {report.tolerance:.0e}, "
              f"{report.elapsed_s:.1f}s)")
    return 0 if report.passed else 1


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "baseline": _cmd_baseline,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
