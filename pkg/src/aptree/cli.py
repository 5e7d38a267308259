"""Command-line entry point: ``aptree <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .aploss import AUTO, GAMMA_HINT, FactorMode, LossConfig, factor_curve, step_weights
from .asdl import GrammarError, load_grammar
from .ast import CodeError, ast_to_code, code_to_ast, normalize_code, to_json
from .astvec import VectorError, ast2vec, vec_norm
from .corpus import CorpusError, generate_corpus, read_jsonl, toy_grammar, write_jsonl
from .metrics import evaluate
from .transition import (
    TransitionError, Traversal, actions_to_ast, actions_to_steps, ast_to_actions, format_action, parse_action,
)

log = logging.getLogger("aptree")

DOMAIN_ERRORS = (GrammarError, CodeError, TransitionError, VectorError, CorpusError, ValueError, OSError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _grammar(args):
    return load_grammar(args.grammar) if getattr(args, "grammar", None) else toy_grammar()


def _read_text(path: str | None) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _read_actions(path: str | None):
    return [parse_action(line) for line in _read_text(path).splitlines() if line.strip()]


def _alpha(value: str):
    return AUTO if value == AUTO else float(value)


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v]


# --- subcommands -------------------------------------------------------------


def cmd_grammar(args, out) -> int:
    g = load_grammar(args.file)
    out.write(f"root: {g.root_type}\n")
    out.write(f"primitive: {', '.join(sorted(g.primitive_types))}\n")
    width = max(len(c) for c in g.constructors)
    for c in g.constructors.values():
        fields = ", ".join(map(str, c.fields))
        out.write(f"{c.name:<{width}}  {c.type:<10}  ({fields})\n")
    return 0


def cmd_transduce(args, out) -> int:
    g = _grammar(args)
    if args.to_actions:
        tree = code_to_ast(g, _read_text(args.input))
        for s in ast_to_actions(g, tree, args.traversal):
            out.write(format_action(s.action) + "\n")
    else:
        tree = actions_to_ast(g, _read_actions(args.input), args.traversal)
        out.write((json.dumps(to_json(tree)) if args.json else ast_to_code(tree)) + "\n")
    return 0


def cmd_vectorize(args, out) -> int:
    g = _grammar(args)
    steps = actions_to_steps(g, _read_actions(args.actions), args.traversal)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "action", "depth", "horiz", "norm"])
    for s, v in zip(steps, ast2vec(steps)):
        w.writerow([s.t, format_action(s.action), v.depth, v.horiz, f"{vec_norm(v):.6f}"])
    return 0


def cmd_weights(args, out) -> int:
    g = _grammar(args)
    steps = actions_to_steps(g, _read_actions(args.actions), args.traversal)
    cfg = LossConfig(gamma=args.gamma, alpha=args.alpha, factor_mode=args.factor)
    if not GAMMA_HINT[0] <= cfg.gamma <= GAMMA_HINT[1]:
        log.info("gamma %s is outside the usual range %s", cfg.gamma, GAMMA_HINT)
    ws = step_weights(steps, cfg)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "f", "weight"])
    for s, f, wt in zip(steps, ws.factors, ws.weights):
        w.writerow([s.t, f"{f:.6f}", f"{wt:.6f}"])
    return 0


def cmd_factor_curve(args, out) -> int:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "gamma", "factor"])
    for t, g, f in factor_curve(args.gammas, args.tmax):
        w.writerow([t, g, f"{f:.6g}"])
    return 0


def cmd_gen_corpus(args, out) -> int:
    split = args.split
    if all(float(x).is_integer() and x >= 1 for x in split):
        split = [int(x) for x in split]
    ds = generate_corpus(n=args.n, max_depth=args.depth, seed=args.seed, split=split, noise=args.noise)
    write_jsonl(ds, args.out)
    out.write(f"wrote {len(ds)} examples to {args.out} (fingerprint {ds.fingerprint()})\n")
    return 0


def _manifest(args, grammar, dataset) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return {"tool_version": __version__, "command": args.command, "config": config, "seed": getattr(args, "seed", None),
            "grammar_hash": grammar.fingerprint(), "dataset_hash": dataset.fingerprint()}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args, out) -> int:
    from .model import ModelConfig, SamplingSchedule, Seq2Tree, Vocab, train

    if args.seeds:
        return _fan_out(args, out)
    g = toy_grammar()
    ds = read_jsonl(args.data, g, args.traversal)
    examples = ds.split("train") or ds.examples
    cfg = ModelConfig(word_dim=args.word_dim, action_dim=args.action_dim, hidden=args.hidden, seed=args.seed,
                      lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, beam=args.beam,
                      traversal=Traversal.parse(args.traversal).value)
    model = Seq2Tree(g, Vocab.build(examples), cfg)
    loss_cfg = LossConfig(gamma=args.gamma, alpha=args.alpha, factor_mode=args.factor)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "log.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_em"])

        def on_epoch(e):
            w.writerow([e.epoch, repr(e.loss), repr(e.train_em)])
            fh.flush()
            log.info("epoch %d loss %.4f train_em %.4f p=%.3f", e.epoch, e.loss, e.train_em, e.sampling_p)

        train(model, examples, loss_cfg, SamplingSchedule.parse(args.schedule), on_epoch=on_epoch)
    model.save(outdir / "model.ckpt")
    _write_json(outdir / "manifest.json", _manifest(args, g, ds))
    out.write(f"trained on {len(examples)} examples; artifacts in {outdir}\n")
    return 0


def _fan_out(args, out) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s]
    procs = []
    for s in seeds:
        argv = [sys.executable, "-m", "aptree", "train", "--data", args.data, "--out", str(Path(args.out) / f"seed-{s}"),
                "--seed", str(s)]
        for flag in ("gamma", "alpha", "factor", "traversal", "schedule", "epochs", "beam", "hidden",
                     "word_dim", "action_dim", "lr", "batch_size"):
            argv += [f"--{flag.replace('_', '-')}", str(getattr(args, flag))]
        procs.append(subprocess.Popen(argv))
    codes = [p.wait() for p in procs]
    out.write(f"seeds {seeds}: exit codes {codes}\n")
    return 0 if all(c == 0 for c in codes) else 1


def cmd_evaluate(args, out) -> int:
    if args.model:
        return _evaluate_model(args, out)
    if not (args.pred and args.gold):
        raise ValueError("evaluate needs --pred and --gold, or --model and --data")
    pred = _read_codes(args.pred)
    gold = _read_codes(args.gold)
    g = toy_grammar()
    pa, ga = [], []
    for p, q in zip(pred, gold):
        ga.append([format_action(s.action) for s in ast_to_actions(g, code_to_ast(g, q))])
        try:
            pa.append([format_action(s.action) for s in ast_to_actions(g, code_to_ast(g, p))])
        except (CodeError, TransitionError):
            pa.append([])
    report = evaluate(pred, gold, pa, ga)
    out.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")
    out.write(report.table() + "\n")
    return 0


def _read_codes(path: str) -> list[str]:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    if lines and lines[0].lstrip().startswith("{"):
        return [normalize_code(json.loads(l)["code"]) for l in lines]
    return [normalize_code(l) for l in lines]


def _evaluate_model(args, out) -> int:
    from .model import Seq2Tree, predict

    model = Seq2Tree.load(args.model)
    ds = read_jsonl(args.data, model.grammar, model.config.traversal)
    examples = ds.split(args.split) or ds.examples
    preds = [predict(model, e.nl, args.beam) for e in examples]
    report = evaluate([p.code or "" for p in preds], [e.code for e in examples],
                      [[format_action(a) for a in p.actions] for p in preds],
                      [[format_action(s.action) for s in e.actions] for e in examples])
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for e, p in zip(examples, preds):
                fh.write(json.dumps({"nl": list(e.nl), "code": p.code, "gold": e.code}) + "\n")
        _write_json(Path(args.out).with_suffix(".manifest.json"), _manifest(args, model.grammar, ds))
    out.write(json.dumps(report.as_dict(), sort_keys=True) + "\n")
    out.write(report.table() + "\n")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aptree", description="Seq2tree transition system, tree position vectors and weighted losses.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--config", help="key=value file whose entries override flags")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def traversal(sp):
        sp.add_argument("--traversal", choices=["preorder", "bfs"], default="preorder")

    sp = sub.add_parser("grammar", help="check a grammar file")
    sp.add_argument("action", choices=["check"])
    sp.add_argument("file")
    sp.set_defaults(func=cmd_grammar)

    sp = sub.add_parser("transduce", help="code <-> action sequence")
    mode = sp.add_mutually_exclusive_group(required=True)
    mode.add_argument("--to-actions", action="store_true")
    mode.add_argument("--to-code", action="store_true")
    sp.add_argument("--grammar")
    sp.add_argument("--json", action="store_true", help="with --to-code, print the AST as JSON")
    traversal(sp)
    sp.add_argument("input", nargs="?")
    sp.set_defaults(func=cmd_transduce)

    sp = sub.add_parser("vectorize", help="position vectors for an action file")
    sp.add_argument("--grammar")
    traversal(sp)
    sp.add_argument("actions")
    sp.set_defaults(func=cmd_vectorize)

    sp = sub.add_parser("weights", help="per-step loss weights for an action file")
    sp.add_argument("--grammar")
    sp.add_argument("--gamma", type=float, default=0.3)
    sp.add_argument("--alpha", type=_alpha, default=2.0)
    sp.add_argument("--factor", choices=[m.value for m in FactorMode], default="astvec")
    traversal(sp)
    sp.add_argument("actions")
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("factor-curve", help="t**-gamma curves as CSV")
    sp.add_argument("--gammas", type=_floats, default=[0, 0.1, 0.3, 0.5, 1, 2])
    sp.add_argument("--tmax", type=int, default=50)
    sp.add_argument("--plot-data", action="store_true", help="accepted for symmetry; output is always data")
    sp.set_defaults(func=cmd_factor_curve)

    sp = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    sp.add_argument("--n", type=int, default=1200)
    sp.add_argument("--depth", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--split", type=_floats, default=[0.8, 0.1, 0.1],
                    help="train,dev,test fractions or counts")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_corpus)

    def model_flags(sp):
        sp.add_argument("--gamma", type=float, default=0.0)
        sp.add_argument("--alpha", type=_alpha, default=2.0)
        sp.add_argument("--factor", choices=[m.value for m in FactorMode], default="astvec")
        traversal(sp)
        sp.add_argument("--schedule", default="tf", help="tf | fixed:P | ed:BASE | ld")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int, default=30)
        sp.add_argument("--beam", type=int, default=5)
        sp.add_argument("--hidden", type=int, default=64)
        sp.add_argument("--word-dim", type=int, default=32)
        sp.add_argument("--action-dim", type=int, default=32)
        sp.add_argument("--lr", type=float, default=1e-3)
        sp.add_argument("--batch-size", type=int, default=10)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seeds", help="comma-separated seeds; one process per seed under OUT/seed-N")
    model_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score predictions or a trained model")
    sp.add_argument("--pred")
    sp.add_argument("--gold")
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--split", default="test")
    sp.add_argument("--beam", type=int, default=5)
    sp.add_argument("--out", help="write predictions as JSON lines")
    sp.set_defaults(func=cmd_evaluate)
    return p


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    actions = {a.dest: a for a in sub._actions}
    for lineno, line in enumerate(Path(args.config).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in actions:
            raise ValueError(f"{args.config}:{lineno}: unknown setting {key!r}")
        conv = actions[key].type or str
        setattr(args, key, conv(value.strip()))


def run(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.config:
            _apply_config(parser, args)
        return args.func(args, out)
    except DOMAIN_ERRORS as e:
        print(f"aptree: error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
