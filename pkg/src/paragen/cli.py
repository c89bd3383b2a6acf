"""Command-line entry points: synth, train, generate, evaluate.

One JSON config file drives training; every config key has a matching flag
that overrides it one-for-one. Exit codes: 0 ok, 2 usage/config error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import CheckpointError, load_models, save_checkpoint
from .config import ConfigError, TrainConfig, config_from_dict
from .critics import CriticPair
from .data import (
    CorpusFormatError, Example, encode_example, encode_sentence, load_corpus,
    load_paragraph_corpus, make_dataset, normalize, save_corpus,
    save_paragraph_corpus, synth_example, vocab_from_examples,
)
from .generator import GeneratorParams, generate
from .metrics import evaluate_pairs
from .training import TrainingAborted, make_optimizers, train

RUN_PATH_KEYS = ("train_corpus", "val_corpus", "paragraph_corpus", "out_dir")


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config plumbing

def load_run_config(path) -> tuple[TrainConfig, dict]:
    """Split the run config file into training hyperparameters and paths."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}", 2) from exc
    if not isinstance(obj, dict):
        raise CliError(f"config {path} must hold a JSON object", 2)
    paths = {k: obj.pop(k) for k in RUN_PATH_KEYS if k in obj}
    for k, v in paths.items():
        if not isinstance(v, str):
            raise CliError(f"config key {k!r} must be a string path", 2)
    config = config_from_dict(obj)
    return config, paths


def apply_overrides(config: TrainConfig, args) -> TrainConfig:
    for attr in ("preset", "mode", "lambda_adv", "n_critic", "n_rollouts",
                 "lr", "clip", "batch", "s_max", "n_max", "beam_width",
                 "epochs", "seed"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(config, attr, val)
    config.validate()
    return config


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    if args.count < 1:
        raise CliError(f"--count must be >= 1, got {args.count}", 2)
    config = TrainConfig(preset=args.preset)
    config.validate()
    feat_dim = config.dims().feat
    os.makedirs(args.out, exist_ok=True)

    train_set = make_dataset(args.seed, args.count, feat_dim)
    val_count = args.val_count if args.val_count is not None else max(1, args.count // 4)
    val_set = make_dataset(args.seed + 1_000_000, val_count, feat_dim)
    para_set = [synth_example(args.seed + 2_000_000 + i, feat_dim).paragraph
                for i in range(args.count)]

    train_path = os.path.join(args.out, "train.jsonl")
    val_path = os.path.join(args.out, "val.jsonl")
    para_path = os.path.join(args.out, "paragraphs.jsonl")
    try:
        save_corpus(train_path, train_set)
        save_corpus(val_path, val_set)
        save_paragraph_corpus(para_path, para_set)
    except OSError as exc:
        raise CliError(f"cannot write corpus: {exc}", 3) from exc

    vocab = vocab_from_examples(train_set + val_set, para_set)
    n_sent = [len(ex.paragraph) for ex in train_set]
    print(f"wrote {len(train_set)} train examples to {train_path}")
    print(f"wrote {len(val_set)} val examples to {val_path}")
    print(f"wrote {len(para_set)} paragraphs to {para_path}")
    print(f"feat_dim {feat_dim}, vocabulary {vocab.size} tokens, "
          f"sentences/paragraph {min(n_sent)}..{max(n_sent)} "
          f"(mean {sum(n_sent) / len(n_sent):.2f})")
    return 0


def cmd_train(args) -> int:
    config, paths = load_run_config(args.config)
    config = apply_overrides(config, args)
    if "train_corpus" not in paths:
        raise CliError("config needs 'train_corpus'", 2)
    if "out_dir" not in paths:
        raise CliError("config needs 'out_dir'", 2)
    out_dir = paths["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    dims = config.dims()

    examples = load_corpus(paths["train_corpus"], feat_dim=dims.feat)
    if not examples:
        raise CliError(f"{paths['train_corpus']} is empty", 2)
    raw_paragraphs: list[list[str]] = []
    if "paragraph_corpus" in paths:
        raw_paragraphs = load_paragraph_corpus(paths["paragraph_corpus"])
    else:
        raw_paragraphs = [ex.paragraph for ex in examples if ex.paragraph]
    if not raw_paragraphs:
        raise CliError("no real paragraphs: provide 'paragraph_corpus' or a "
                       "train corpus with paragraphs", 2)

    if args.resume:
        gen_params, critics, ckpt_config, vocab, optimizers = load_models(args.resume)
        if ckpt_config.preset != config.preset:
            raise CliError(f"checkpoint preset {ckpt_config.preset!r} != "
                           f"configured {config.preset!r}", 2)
    else:
        vocab = vocab_from_examples(examples, raw_paragraphs)
        gen_params = GeneratorParams.create(dims, vocab.size, config.seed)
        critics = CriticPair.create(dims, vocab.size, config.seed + 1)
        optimizers = make_optimizers(gen_params, critics, config)

    dataset = [encode_example(ex, vocab) for ex in examples]
    paragraphs = [[encode_sentence(vocab, s) for s in p] for p in raw_paragraphs]

    log_path = os.path.join(out_dir, "metrics.jsonl")
    try:
        result = train(gen_params, critics, config, dataset, paragraphs,
                       out_dir=out_dir, vocab=vocab, log_path=log_path,
                       optimizers=optimizers)
    except TrainingAborted as exc:
        dump_path = os.path.join(out_dir, "abort_dump.json")
        with open(dump_path, "w", encoding="utf-8") as fh:
            json.dump({"diagnostics": exc.diagnostics,
                       "log_tail": exc.log[-20:]}, fh, indent=1)
        raise CliError(f"training aborted: {exc} (dump at {dump_path})", 3) from exc

    final_path = os.path.join(out_dir, "final")
    save_checkpoint(final_path, gen_params, critics, config, vocab, optimizers)
    print(f"trained {result.n_generator_phases} generator / "
          f"{result.n_critic_phases} critic phases")
    print(f"metrics log: {log_path}")
    print(f"final checkpoint: {final_path}")
    return 0


def _decode_examples(gen_params, config, vocab, examples: list[Example], args):
    dims = config.dims()
    mode = args.mode
    beam = args.beam if args.beam is not None else config.beam_width
    s_max = args.s_max if getattr(args, "s_max", None) is not None else config.s_max
    n_max = args.n_max if getattr(args, "n_max", None) is not None else config.n_max
    first = None
    if getattr(args, "first_sentence", None):
        first = encode_sentence(vocab, args.first_sentence)
    seed = args.seed if args.seed is not None else config.seed
    out = []
    for i, ex in enumerate(examples):
        enc = encode_example(ex, vocab)
        if enc.regions.feat_dim != dims.feat:
            raise CliError(f"example {ex.example_id}: feat_dim "
                           f"{enc.regions.feat_dim} != model {dims.feat}", 2)
        res = generate(gen_params, enc.regions, mode, seed=seed + i,
                       beam_width=beam, s_max=s_max, n_max=n_max,
                       first_sentence=first)
        out.append((ex, res))
    return out


def cmd_generate(args) -> int:
    try:
        gen_params, critics, config, vocab, _ = load_models(args.ckpt)
    except CheckpointError as exc:
        raise CliError(str(exc), 3) from exc
    examples = load_corpus(args.input, feat_dim=config.dims().feat)
    decoded = _decode_examples(gen_params, config, vocab, examples, args)
    with open(args.out, "w", encoding="utf-8") as fh:
        for ex, res in decoded:
            obj = {
                "id": ex.example_id,
                "paragraph": [" ".join(vocab.decode(s))
                              for s in res.paragraph.sentences],
                "logprob": res.logprob,
            }
            if args.dump_attention:
                obj["attention"] = res.attention
            fh.write(json.dumps(obj) + "\n")
    print(f"wrote {len(decoded)} paragraphs to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    try:
        gen_params, critics, config, vocab, _ = load_models(args.ckpt)
    except CheckpointError as exc:
        raise CliError(str(exc), 3) from exc
    examples = load_corpus(args.corpus, feat_dim=config.dims().feat)
    refs_missing = [ex.example_id for ex in examples if not ex.paragraph]
    if refs_missing:
        raise CliError(f"{len(refs_missing)} examples have no reference "
                       f"paragraph (first: {refs_missing[0]})", 2)

    pairs = []
    if args.self_check:
        for ex in examples:
            ref = normalize(" ".join(ex.paragraph))
            pairs.append((list(ref), [ref]))
    else:
        decoded = _decode_examples(gen_params, config, vocab, examples, args)
        for ex, res in decoded:
            cand = [tok for s in res.paragraph.sentences for tok in vocab.decode(s)]
            ref = normalize(" ".join(ex.paragraph))
            pairs.append((cand, [ref]))
    try:
        report = evaluate_pairs(pairs)
    except ValueError as exc:
        raise CliError(str(exc), 2) from exc
    text = json.dumps(report, indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"report written to {args.out}")
    print(text)
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="paragen",
        description="Adversarially trained hierarchical paragraph generator "
                    "over region features (synthetic-scene pipeline).")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic corpus")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--count", type=int, required=True,
                    help="number of training examples")
    ps.add_argument("--val-count", type=int, default=None)
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--preset", default="desk",
                    choices=("micro", "desk", "paper"))
    ps.set_defaults(func=cmd_synth)

    pt = sub.add_parser("train", help="run adversarial training")
    pt.add_argument("--config", required=True, help="run config JSON")
    pt.add_argument("--resume", default=None, help="checkpoint to resume from")
    pt.add_argument("--preset", default=None, choices=("micro", "desk", "paper"))
    pt.add_argument("--mode", default=None, choices=("fully", "semi"))
    pt.add_argument("--lambda", dest="lambda_adv", type=float, default=None)
    pt.add_argument("--n-critic", dest="n_critic", type=int, default=None)
    pt.add_argument("--n-rollouts", dest="n_rollouts", type=int, default=None)
    pt.add_argument("--lr", type=float, default=None)
    pt.add_argument("--clip", type=float, default=None)
    pt.add_argument("--batch", type=int, default=None)
    pt.add_argument("--s-max", dest="s_max", type=int, default=None)
    pt.add_argument("--n-max", dest="n_max", type=int, default=None)
    pt.add_argument("--beam-width", dest="beam_width", type=int, default=None)
    pt.add_argument("--epochs", type=int, default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.set_defaults(func=cmd_train)

    pg = sub.add_parser("generate", help="decode paragraphs for a corpus")
    pg.add_argument("--ckpt", required=True)
    pg.add_argument("--input", required=True, help="corpus JSONL")
    pg.add_argument("--out", required=True, help="output JSONL")
    pg.add_argument("--mode", default="greedy",
                    choices=("greedy", "sample", "beam"))
    pg.add_argument("--beam", type=int, default=None)
    pg.add_argument("--seed", type=int, default=None)
    pg.add_argument("--s-max", dest="s_max", type=int, default=None)
    pg.add_argument("--n-max", dest="n_max", type=int, default=None)
    pg.add_argument("--first-sentence", dest="first_sentence", default=None,
                    help="condition every decode on this opening sentence")
    pg.add_argument("--dump-attention", action="store_true")
    pg.set_defaults(func=cmd_generate)

    pe = sub.add_parser("evaluate", help="score decodes against references")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--corpus", required=True)
    pe.add_argument("--out", default=None, help="report JSON path")
    pe.add_argument("--mode", default="greedy",
                    choices=("greedy", "sample", "beam"))
    pe.add_argument("--beam", type=int, default=None)
    pe.add_argument("--seed", type=int, default=None)
    pe.add_argument("--self-check", dest="self_check", action="store_true",
                    help="score the references against themselves "
                         "(metrics pipeline sanity)")
    pe.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
