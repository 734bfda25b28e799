"""Command-line surface: pretrain, finetune, generate, evaluate, chat.

Loss logs stream as JSON Lines on stderr and land next to the checkpoint,
together with a rendered loss-curve PNG; evaluation reports land on stdout
or --out with a companion metrics PNG.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import report
from .checkpoint import load_checkpoint, read_checkpoint_config, save_checkpoint
from .config import RunConfig, make_run_config
from .data import load_jsonl
from .decoding import STRATEGIES, generate_response
from .errors import ConfigError, DataError, ParleyError
from .losses import FINETUNE, PRETRAIN
from .metrics import EvalPair, evaluation_report
from .model import DialogModel
from .tensor import RngState
from .train import check_model_fits, prepare_corpus, train_model
from .vocab import Vocabulary, tokenize


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parley",
        description="latent-variable seq2seq dialog response generation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("pretrain", help="train from scratch with span-masked contexts")
    add_config_flags(p)
    p.add_argument("--out", help="checkpoint path (default from config)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="continue training without masking")
    add_config_flags(p)
    p.add_argument("--init", required=True, help="initial checkpoint")
    p.add_argument("--out", help="checkpoint path (default from config)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="decode one response per input dialog")
    add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="input dialogs (JSONL)")
    p.add_argument("--out", help="output JSONL (default stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True, help="hypothesis JSONL")
    p.add_argument("--ref", required=True, help="reference JSONL")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.add_argument("--figures", help="metrics figure path (default <out>.png)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("chat", help="interactive REPL against a checkpoint")
    add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_chat)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParleyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# -- training commands ------------------------------------------------------------

def _run_training(cfg: RunConfig, mode: str, out_path: str,
                  init_ckpt: str | None = None) -> int:
    if not cfg.data.train:
        raise ConfigError("data.train must point at a JSONL dialog file")
    if mode == FINETUNE:
        vocab_path = cfg.data.vocab or init_ckpt + ".vocab"
        vocab = Vocabulary.load(vocab_path)
        batches = prepare_corpus(cfg.data.train, cfg, vocab=vocab)
    else:
        batches = prepare_corpus(cfg.data.train, cfg)
    model_cfg = cfg.model_config(len(batches.vocab))
    check_model_fits(batches, model_cfg)
    if init_ckpt is not None:
        model = load_checkpoint(init_ckpt, model_cfg)
    else:
        model = DialogModel(model_cfg, RngState(cfg.train.seed))

    records: list[dict] = []

    def log_record(rec: dict):
        records.append(rec)
        print(json.dumps(rec), file=sys.stderr)

    summary = train_model(model, batches, cfg, mode, log_record)

    save_checkpoint(model, out_path)
    batches.vocab.save(out_path + ".vocab")
    log_path = out_path + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    figure_path = out_path + ".loss.png"
    report.render_loss_figure(records, figure_path)
    summary.update({"mode": mode, "checkpoint": out_path, "vocab": out_path + ".vocab",
                    "log": log_path, "figure": figure_path,
                    "vocab_size": len(batches.vocab)})
    print(json.dumps(summary))
    return 0


def cmd_pretrain(args) -> int:
    cfg = make_run_config(args.config, tuple(args.set))
    return _run_training(cfg, PRETRAIN, args.out or cfg.data.checkpoint_out)


def cmd_finetune(args) -> int:
    cfg = make_run_config(args.config, tuple(args.set))
    return _run_training(cfg, FINETUNE, args.out or cfg.data.checkpoint_out,
                         init_ckpt=args.init)


# -- inference commands -------------------------------------------------------------

def _load_for_inference(ckpt_path: str, vocab_override: str = ""):
    model_cfg = read_checkpoint_config(ckpt_path)
    model = load_checkpoint(ckpt_path, model_cfg)
    vocab = Vocabulary.load(vocab_override or ckpt_path + ".vocab")
    if len(vocab) != model_cfg.vocab_size:
        raise ConfigError(f"vocabulary size {len(vocab)} does not match the "
                          f"checkpoint's vocab_size {model_cfg.vocab_size}")
    return model, vocab


def cmd_generate(args) -> int:
    cfg = make_run_config(args.config, tuple(args.set))
    model, vocab = _load_for_inference(args.ckpt, cfg.data.vocab)
    dcfg = cfg.decode
    instances = load_jsonl(args.infile)
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for idx, inst in enumerate(instances):
            seed = dcfg.seed + idx
            response = generate_response(model, vocab, inst.turns, inst.knowledge, dcfg,
                                         seed=seed)
            rec = {"context": inst.turns, "response": response,
                   "strategy": dcfg.strategy, "seed": seed, "z_mode": dcfg.latent_mode}
            if inst.knowledge:
                rec["knowledge"] = inst.knowledge
            sink.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            sink.close()
    return 0


def _read_jsonl_field(path: str, single: str, multi: str) -> list[list[list[str]]]:
    """Read token lists per line: either one string field or a list field."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if multi in obj:
                texts = obj[multi]
            elif single in obj:
                texts = [obj[single]]
            else:
                raise DataError(f"{path}:{lineno}: expected field {single!r} or {multi!r}")
            if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
                raise DataError(f"{path}:{lineno}: field {multi!r} must be a list of strings")
            rows.append([tokenize(t) for t in texts])
    return rows


def cmd_evaluate(args) -> int:
    hyp_rows = _read_jsonl_field(args.hyp, "response", "responses")
    ref_rows = _read_jsonl_field(args.ref, "response", "responses")
    if len(hyp_rows) != len(ref_rows):
        raise DataError(f"hypothesis count {len(hyp_rows)} != reference count {len(ref_rows)}")
    if not hyp_rows:
        raise DataError("no evaluation pairs found")
    pairs = [EvalPair(hypothesis=h[0], references=refs)
             for h, refs in zip(hyp_rows, ref_rows)]
    result = evaluation_report(pairs)
    body = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(body + "\n")
    else:
        print(body)
    figure_path = args.figures or (args.out + ".png" if args.out else "")
    if figure_path:
        report.render_metrics_figure(result, figure_path)
    return 0


# -- chat ----------------------------------------------------------------------------

CHAT_HELP = "commands: /reset clears history, /seed N reseeds, /mode {greedy|beam|topk}"


def cmd_chat(args) -> int:
    cfg = make_run_config(args.config, tuple(args.set))
    model, vocab = _load_for_inference(args.ckpt, cfg.data.vocab)
    dcfg = cfg.decode
    turns: list[str] = []
    base_seed = dcfg.seed
    counter = 0
    print(CHAT_HELP, file=sys.stderr)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == "/reset":
            turns.clear()
            print("history cleared", file=sys.stderr)
            continue
        if line.startswith("/seed"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].lstrip("-").isdigit():
                print("usage: /seed N", file=sys.stderr)
                continue
            base_seed = int(parts[1])
            counter = 0
            print(f"seed set to {base_seed}", file=sys.stderr)
            continue
        if line.startswith("/mode"):
            parts = line.split()
            if len(parts) != 2 or parts[1] not in STRATEGIES:
                print(f"usage: /mode {{{'|'.join(STRATEGIES)}}}", file=sys.stderr)
                continue
            dcfg.strategy = parts[1]
            print(f"strategy set to {dcfg.strategy}", file=sys.stderr)
            continue
        turns.append(line)
        response = generate_response(model, vocab, turns, [], dcfg,
                                     seed=base_seed + counter)
        counter += 1
        turns.append(response)
        print(response)
        sys.stdout.flush()
    print("bye", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
