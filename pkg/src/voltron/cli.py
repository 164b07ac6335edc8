"""``voltron`` command line: pretrain, adapt, score, inspect, verify, fixture.

Exit codes: 0 ok, 2 usage or data error, 3 checkpoint error, 4 capability
error, 5 invariant failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import DataError, InvariantError, VoltronError

EXIT_OK, EXIT_USAGE, EXIT_CHECKPOINT, EXIT_CAPABILITY, EXIT_INVARIANT = 0, 2, 3, 4, 5


def _err(msg: str) -> None:
    print(f"voltron: error: {msg}", file=sys.stderr)


def _write_metrics(path, values: dict, header: Optional[List[str]] = None) -> Path:
    from .checkpoint import atomic_write

    lines = [f"# {h}" for h in header or []]
    for key, val in values.items():
        lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    return atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# -- pretrain -------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    from .config import load_run_config
    from .data import load_corpus
    from .encoder import load_embedding_table
    from .errors import ConfigError
    from .train import metrics_header, train

    run = load_run_config(args.config)
    if args.seed is not None:
        run.model.seed = args.seed
    if args.output:
        run.output = args.output
        run.metrics = ""
    if not run.corpus:
        raise ConfigError("config names no corpus path ([paths] corpus = ...)")
    corpus = load_corpus(run.corpus, run.model.max_len, vocab_size=run.model.vocab_size)
    table = load_embedding_table(args.language_table) if args.language_table else None
    print(metrics_header(run), end="")
    result = train(run, corpus, language_table=table)
    last = result.records[-1] if result.records else {}
    print(f"steps {len(result.records)}  final loss {last.get('loss', float('nan')):.6f}  "
          f"checkpoint {result.checkpoint_path}")
    return EXIT_OK


# -- adapt ----------------------------------------------------------------------------

def _default_mode(model) -> str:
    return "encoder" if model.cfg.uses_language else "null"


def _tokenize_all(model, captions):
    from .data import tokenize

    toks = [tokenize(c, model.vocab, model.cfg.max_len) for c in captions]
    return np.stack([t[0] for t in toks]), np.stack([t[1] for t in toks])


def _adapt_grasp(model, args) -> dict:
    from .adaptation import GraspConfig, extract, grasp_adapt
    from .adaptation.datasets import load_grasp_dataset

    frames, labels = load_grasp_dataset(args.dataset)
    cfg = GraspConfig()
    for key in ("epochs", "batch_size", "folds", "lr"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    feats = extract(model, frames, mode="visual")
    result = grasp_adapt(feats, labels, model.cfg.d, model.cfg.grid, model.cfg.p, cfg, seed=args.seed)
    out = dict(result.metrics)
    out.update(images=len(frames), folds=cfg.folds, frame_duplication=int(feats.duplicated))
    return out


def _adapt_refer(model, args) -> dict:
    from .adaptation import ReferConfig, extract, refer_adapt
    from .adaptation.datasets import load_refer_dataset

    (tr_f, tr_c, tr_b), (te_f, te_c, te_b) = load_refer_dataset(args.dataset)
    mode = args.mode or _default_mode(model)
    cfg = ReferConfig()
    for key in ("epochs", "batch_size", "lr"):
        if getattr(args, key) is not None:
            setattr(cfg, key, getattr(args, key))
    train = extract(model, tr_f, *_tokenize_all(model, tr_c), mode=mode)
    test = extract(model, te_f, *_tokenize_all(model, te_c), mode=mode)
    result = refer_adapt(train, tr_b, test, te_b, model.cfg.d, cfg, seed=args.seed)
    out = dict(result.metrics)
    out.update(mode=mode, train_items=len(tr_f), test_items=len(te_f), frame_duplication=int(train.duplicated))
    return out


def _adapt_bc(model, args) -> dict:
    from .adaptation import BcConfig, bc_adapt, load_demos, rollout

    demos = load_demos(args.dataset)
    overrides = {k: getattr(args, k) for k in ("steps", "epochs", "batch_size", "lr") if getattr(args, k) is not None}
    if args.pool:
        overrides["pool"] = args.pool
    overrides["mode"] = args.mode or "visual"
    cfg = BcConfig.for_profile(args.profile, **overrides)
    result = bc_adapt(model, demos, cfg, seed=args.seed)
    out = dict(result.metrics)
    out.update(profile=cfg.profile, pool=cfg.pool, mode=cfg.mode, demos=len(demos))
    if args.episodes > 0:
        out["success"] = rollout(model, result, args.env, args.episodes, seed=args.seed)
        if cfg.mode != "visual":
            out["success_null"] = rollout(model, result, args.env, args.episodes, seed=args.seed, utterance=None)
    return out


def cmd_adapt(args) -> int:
    from .checkpoint import Checkpoint, model_from_checkpoint

    ckpt = Checkpoint.load(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    if not Path(args.dataset).exists():
        raise DataError(f"dataset not found: {args.dataset}")
    metrics = {"grasp": _adapt_grasp, "refer": _adapt_refer, "bc": _adapt_bc}[args.task](model, args)
    for name, p in model.named_parameters():
        if not np.array_equal(before[name], p.data):
            raise InvariantError(f"encoder parameter {name} changed during adaptation")
    out = args.output or f"adapt-{args.task}.txt"
    header = [f"task = {args.task}", f"checkpoint = {args.checkpoint}", f"variant = {model.cfg.variant}",
              f"seed = {args.seed}"]
    _write_metrics(out, metrics, header)
    for key, val in metrics.items():
        print(f"{key} = {val}")
    print(f"metrics written to {out}")
    return EXIT_OK


# -- score / inspect ------------------------------------------------------------------

def cmd_score(args) -> int:
    from .adaptation import intent_curve
    from .checkpoint import load_model
    from .data import read_frame

    model = load_model(args.checkpoint)
    frames_dir = Path(args.frames)
    files = sorted(frames_dir.glob("*.png")) if frames_dir.is_dir() else []
    if not files:
        raise DataError(f"no PNG frames in {frames_dir}")
    frames = np.stack([read_frame(f) for f in files])
    for t, score in intent_curve(model, frames, args.utterance, stride=args.stride):
        print(f"{files[t].name}\t{score!r}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .checkpoint import Checkpoint
    from .config import model_config_text

    ckpt = Checkpoint.load(args.checkpoint)
    print(model_config_text(ckpt.config), end="")
    print(f"vocabulary: {len(ckpt.vocab)} tokens")
    for key, val in sorted(ckpt.counters.items()):
        print(f"{key}: {val}")
    n_params = sum(int(a.size) for a in ckpt.params.values())
    print(f"parameters: {len(ckpt.params)} tensors, {n_params} values")
    print(f"optimizer state: {len(ckpt.optimizer)} tensors")
    if args.verbose:
        for name in sorted(ckpt.params):
            print(f"  {name} {tuple(ckpt.params[name].shape)}")
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.level, seed=args.seed, fault=args.inject_fault)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<22} {r.seconds:7.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        _err(f"invariant failure: {', '.join(failed)}")
        return EXIT_INVARIANT
    return EXIT_OK


# -- fixtures -------------------------------------------------------------------------

FIXTURES = ("toy", "scene", "progress", "grasp", "refer", "reach", "two-goal")


def cmd_fixture(args) -> int:
    from . import fixtures
    from .adaptation import collect_demos, save_demos
    from .adaptation.datasets import save_grasp_dataset, save_refer_dataset
    from .data import save_corpus

    out, n = Path(args.output), args.n
    if args.name == "toy":
        save_corpus(out, fixtures.toy_raw())
    elif args.name == "scene":
        save_corpus(out, fixtures.scene_raw(n or 64, seed=args.seed))
    elif args.name == "progress":
        save_corpus(out, fixtures.progress_raw())
    elif args.name == "grasp":
        save_grasp_dataset(out, *fixtures.grasp_examples(n or 100, seed=args.seed))
    elif args.name == "refer":
        n = n or 1024
        save_refer_dataset(out, fixtures.refer_examples(n, seed=args.seed),
                           fixtures.refer_examples(max(n // 4, 1), seed=args.seed + 1))
    else:
        save_demos(out, collect_demos(args.name, 25 if n is None else n, seed=args.seed))
    print(f"wrote {args.name} fixture to {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voltron", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run the pretraining objective from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="override the config's output directory")
    p.add_argument("--language-table", help="frozen word-embedding table (VEMB file)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="train an adaptation head on frozen features")
    p.add_argument("task", choices=("grasp", "refer", "bc"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--profile", default="sim", help="BC profile: sim or real")
    p.add_argument("--output", help="metrics file (default adapt-<task>.txt)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", help="language mode: visual, encoder, null or concat")
    p.add_argument("--pool", choices=("map", "mean"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--env", default="reach", choices=("reach", "two-goal"))
    p.add_argument("--episodes", type=int, default=50, help="BC rollouts; 0 skips evaluation")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("score", help="per-frame caption log-likelihood (V-Gen only)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", required=True, help="directory of PNG frames")
    p.add_argument("--utterance", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("inspect", help="summarise a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("level", choices=("fast", "full"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=("causality", "leakage"), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fixture", help="write a synthetic corpus, dataset or demo set")
    p.add_argument("name", choices=FIXTURES)
    p.add_argument("output")
    p.add_argument("--n", type=int, help="number of items")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VoltronError as exc:
        _err(str(exc))
        return exc.exit_code
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
