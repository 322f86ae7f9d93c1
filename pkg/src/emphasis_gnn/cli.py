"""Command-line front end: train, pretrain-ssg, eval, predict, inspect.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys are flag names (dashes or underscores).  Flags given on the command
line win over the file.  Runs that write to ``--out`` leave a
``config.txt`` echo of every effective setting, which can be passed back
through ``--config`` to repeat the run.

Exit status: 0 on success, 2 on usage errors, 1 on data errors.
"""

import argparse
import logging
import os
import sys
from dataclasses import fields

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .checkpoint import load
from .corpus import load_embeddings, parse_emphasis_file, similar_word_statistic
from .dataset import load_split
from .errors import ContractError, FormatError, NonFiniteError, ShapeError
from .evaluation import M_VALUES, TIE_MODES, evaluate, predict_emphasis
from .model import VARIANTS
from .parse_tree import TagVocab, derive_pos_tags, read_tree_file
from .train import TrainConfig, pretrain_ssg, train_loop

logger = logging.getLogger("emphasis_gnn")

# settings that are paths or plumbing rather than TrainConfig fields
PATH_KEYS = ("train_file", "trees", "test_file", "test_trees", "embeddings", "checkpoint", "out",
             "init_ssg", "sentences")
EXTRA_KEYS = ("threads", "tie_mode")

DATA_ERRORS = (FormatError, ContractError, ShapeError, NonFiniteError, KeyError, OSError)


class UsageError(Exception):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _flag(key):
    return "--" + key.replace("_", "-")


def _add_train_flags(p):
    g = p.add_argument_group("training settings")
    for f in fields(TrainConfig):
        default_type = type(f.default)
        kind = _bool if default_type is bool else default_type
        kw = {"type": kind, "default": None, "metavar": f.name.upper()}
        if f.name == "variant":
            kw["choices"] = VARIANTS
            kw.pop("metavar")
        if f.name == "select":
            kw["choices"] = ("best", "last")
            kw.pop("metavar")
        names = [_flag(f.name)]
        if f.name == "d1":
            names.append("--dim")
        g.add_argument(*names, dest=f.name, **kw)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file; flags override it")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="emphasis-gnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p, train=True, test=False):
        if train:
            p.add_argument("--train-file", help="emphasis file (token, annotations, ...)")
            p.add_argument("--trees", help="parse trees for --train-file, one per line")
        if test:
            p.add_argument("--test-file", help="labelled evaluation file")
            p.add_argument("--test-trees", help="parse trees for --test-file")
        p.add_argument("--embeddings", help="whitespace-separated word vector file")

    t = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    data_flags(t, train=True, test=True)
    t.add_argument("--checkpoint", help="output checkpoint (default OUT/model.ckpt)")
    t.add_argument("--out", help="directory for the config echo, log and metrics")
    t.add_argument("--init-ssg", help=".npy SSG tag embeddings from pretrain-ssg")
    t.add_argument("--tie-mode", choices=TIE_MODES, default=None)
    _add_train_flags(t)

    p = sub.add_parser("pretrain-ssg", parents=[common], help="pretrain SSG tag embeddings")
    data_flags(p)
    p.add_argument("--out", help="directory for ssg_embed.npy and the config echo")
    _add_train_flags(p)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on a labelled file")
    e.add_argument("--checkpoint")
    data_flags(e, train=False, test=True)
    e.add_argument("--trees", dest="test_trees_alias", help=argparse.SUPPRESS)
    e.add_argument("--tie-mode", choices=TIE_MODES, default=None)
    e.add_argument("--out", help="directory for per-sentence scores and the config echo")

    r = sub.add_parser("predict", parents=[common], help="per-word emphasis probabilities")
    r.add_argument("--checkpoint")
    r.add_argument("--sentences", help="one whitespace-tokenized sentence per line")
    r.add_argument("--test-file", help="emphasis-format file to read sentences from instead")
    r.add_argument("--trees")
    r.add_argument("--embeddings")
    r.add_argument("--out", help="write predictions here instead of stdout")

    i = sub.add_parser("inspect", parents=[common], help="dataset statistics")
    data_flags(i)
    i.add_argument("--dim", dest="d1", type=int, default=None)
    return parser


def read_config_file(path):
    """``key = value`` lines; '#' starts a comment; dashes and underscores are equivalent."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("expected 'key = value'", source=str(path), line=lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            file_values = read_config_file(args.config)
        except OSError as exc:
            parser.error(f"cannot read config file: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(file_values) - known - {"command"})
        if unknown:
            parser.error(f"{args.config}: unknown settings {unknown}")
        file_values.pop("command", None)
        sub.set_defaults(**{k: v for k, v in file_values.items()})
        # string defaults are converted by each argument's type
        args = parser.parse_args(argv)
    if getattr(args, "test_trees_alias", None) and not args.test_trees:
        args.test_trees = args.test_trees_alias
    return parser, args


def train_config_from(args, base=None):
    values = dict(base or {})
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return TrainConfig.from_dict(values)


def _require(args, *keys):
    missing = [_flag(k) for k in keys if not getattr(args, k, None)]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(missing))
    for k in keys:
        if k in PATH_KEYS and k != "out" and not os.path.exists(getattr(args, k)):
            raise UsageError(f"{_flag(k)}: no such file: {getattr(args, k)}")


def write_echo(path, settings):
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(settings):
            value = settings[key]
            if value is None:
                continue
            fh.write(f"{key} = {value}\n")


def _echo(args, config=None):
    settings = {"command": args.command}
    for k in PATH_KEYS + EXTRA_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = os.path.abspath(v) if k in PATH_KEYS else v
    if config is not None:
        settings.update(config.to_dict())
    return settings


def _tokens_of(records):
    return [t for rec in records for t in rec.tokens]


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args, out):
    _require(args, "train_file", "trees", "embeddings")
    if not (args.out or args.checkpoint):
        raise UsageError("train needs --out or --checkpoint")
    if bool(args.test_file) != bool(args.test_trees):
        raise UsageError("--test-file and --test-trees go together")
    config = train_config_from(args)
    records, trees = load_split(args.train_file, args.trees)
    test = load_split(args.test_file, args.test_trees) if args.test_file else None
    vocab = _tokens_of(records) + (_tokens_of(test[0]) if test else [])
    table = load_embeddings(args.embeddings, config.d1, keep=vocab)
    init_ssg = np.load(args.init_ssg) if args.init_ssg else None

    out_dir = args.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if out_dir:
        # echo before defaulting the checkpoint so a rerun with a new --out stays separate
        write_echo(os.path.join(out_dir, "config.txt"), _echo(args, config))
    ckpt = args.checkpoint or os.path.join(out_dir, "model.ckpt")
    log_path = os.path.join(out_dir, "train_log.tsv") if out_dir else None

    def progress(epoch, loss, scores):
        logger.info("epoch %d\tloss %.6f", epoch, loss)

    result = train_loop(records, trees, table, config, checkpoint_path=ckpt, log_path=log_path,
                        init_ssg=init_ssg, progress=progress)
    print(f"checkpoint\t{ckpt}\tbest_epoch\t{result.best_epoch}", file=out)
    if test:
        examples = result.model.prepare(test[0], test[1], table)
        report = evaluate(result.model, examples, tie_mode=args.tie_mode or "strict")
        print(report.row(), file=out)
        if out_dir:
            with open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="utf-8") as fh:
                fh.write("\t".join(["variant"] + [f"match{m}" for m in M_VALUES] + ["average"]) + "\n")
                fh.write(report.row() + "\n")
            report.write_per_sentence(os.path.join(out_dir, "per_sentence.csv"))
    return 0


def cmd_pretrain(args, out):
    _require(args, "train_file", "trees", "embeddings", "out")
    config = train_config_from(args, {"epochs": 20})
    records, trees = load_split(args.train_file, args.trees)
    table = load_embeddings(args.embeddings, config.d1, keep=_tokens_of(records))
    os.makedirs(args.out, exist_ok=True)
    write_echo(os.path.join(args.out, "config.txt"), _echo(args, config))
    emb = pretrain_ssg(records, trees, table, config, epochs=config.epochs)
    path = os.path.join(args.out, "ssg_embed.npy")
    np.save(path, emb)
    print(f"ssg_embed\t{path}\t{emb.shape[0]}x{emb.shape[1]}", file=out)
    return 0


def cmd_eval(args, out):
    _require(args, "checkpoint", "test_file", "test_trees", "embeddings")
    model, _ = load(args.checkpoint)
    records, trees = load_split(args.test_file, args.test_trees)
    table = load_embeddings(args.embeddings, model.config.d1, keep=_tokens_of(records))
    examples = model.prepare(records, trees, table)
    report = evaluate(model, examples, tie_mode=args.tie_mode or "strict")
    print(report.row(), file=out)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_echo(os.path.join(args.out, "config.txt"), _echo(args))
        report.write_per_sentence(os.path.join(args.out, "per_sentence.csv"))
    return 0


def _read_sentences(path):
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def cmd_predict(args, out):
    _require(args, "checkpoint", "trees", "embeddings")
    if bool(args.sentences) == bool(args.test_file):
        raise UsageError("predict needs exactly one of --sentences or --test-file")
    _require(args, "sentences" if args.sentences else "test_file")
    model, _ = load(args.checkpoint)
    if args.sentences:
        sentences = _read_sentences(args.sentences)
    else:
        sentences = [list(rec.tokens) for rec in parse_emphasis_file(args.test_file)]
    trees = read_tree_file(args.trees)
    if len(trees) != len(sentences):
        raise FormatError(f"{len(sentences)} sentences but {len(trees)} trees", source=args.trees)
    table = load_embeddings(args.embeddings, model.config.d1, keep=[t for s in sentences for t in s])
    examples = model.prepare_unlabeled(sentences, trees, table)
    preds = predict_emphasis(model, examples)
    lines = []
    for k, (tokens, probs) in enumerate(zip(sentences, preds)):
        if k:
            lines.append("")
        lines.extend(f"{t}\t{p:.6f}" for t, p in zip(tokens, probs))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        out.write(text)
    return 0


def cmd_inspect(args, out):
    _require(args, "train_file")
    records = parse_emphasis_file(args.train_file)
    n_tokens = sum(len(r) for r in records)
    print(f"sentences\t{len(records)}", file=out)
    print(f"tokens\t{n_tokens}", file=out)
    print(f"mean_length\t{n_tokens / max(1, len(records)):.3f}", file=out)
    print(f"vocabulary\t{len(set(_tokens_of(records)))}", file=out)
    if args.trees:
        _require(args, "trees")
        records, trees = load_split(args.train_file, args.trees)
        tags = TagVocab.from_trees(trees)
        pos = sorted({t for tree in trees for t in derive_pos_tags(tree)})
        print(f"node_tags\t{len(tags) - 1}\t{' '.join(tags.tags[1:])}", file=out)
        print(f"pos_tags\t{len(pos)}\t{' '.join(pos)}", file=out)
    if args.embeddings:
        _require(args, "embeddings")
        if args.d1 is None:
            raise UsageError("inspect with --embeddings needs --dim")
        table = load_embeddings(args.embeddings, args.d1, keep=_tokens_of(records))
        known = sum(1 for t in _tokens_of(records) if table.resolve(t) is not None)
        print(f"embedding_coverage\t{known / max(1, n_tokens):.4f}", file=out)
        frac, considered = similar_word_statistic(records, table)
        print(f"similar_word_coemphasis\t{frac:.4f}\t{considered}", file=out)
    return 0


COMMANDS = {"train": cmd_train, "pretrain-ssg": cmd_pretrain, "eval": cmd_eval,
            "predict": cmd_predict, "inspect": cmd_inspect}


def run(argv=None, out=None) -> int:
    """Parse ``argv``, run the subcommand, return the exit status."""
    out = out or sys.stdout
    try:
        parser, args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print(f"{parser.prog}: error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
