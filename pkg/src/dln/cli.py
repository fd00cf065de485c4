"""Command line entry point: synth | train | extend | generate | eval | gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .checkpoint import write_kv
from .data import (
    DatasetFiles,
    SpecError,
    SyntheticSceneSpec,
    default_spec,
    generate_synthetic_dataset,
    load_features,
    read_corpus,
    write_dataset,
    write_lines,
)
from .metrics import SynonymLexicon, load_nouns
from .model import DLNModel, Optimizer, PreparedData, RegistryError, train_epochs
from .plotting import plot_eval, plot_losses

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DIMS = 3
EXIT_STYLE = 4


class UsageError(Exception):
    pass


def _need(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _run_config(args) -> pipeline.RunConfig:
    over = {k: getattr(args, k, None) for k in
            ("data", "style", "out", "seed", "hidden", "embed", "epochs", "batch_size",
             "learning_rate", "lam", "lam1", "lam2", "beam", "vocab_size")}
    if args.config is not None:
        _need(args.config, "config file")
    return pipeline.RunConfig.load(args.config, over)


def _logger(path):
    fh = open(path, "w", encoding="utf-8")
    fh.write("epoch\tL_S\tL_T\tL\n")

    def log(row):
        e, a, b, c = row
        line = f"{e}\t{a:.6f}\t{b:.6f}\t{c:.6f}"
        fh.write(line + "\n")
        fh.flush()
        print(line, flush=True)

    return fh, log


# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        if args.spec:
            spec = SyntheticSceneSpec.load(_need(args.spec, "spec file"))
        else:
            spec = SyntheticSceneSpec.from_dict(default_spec(args.styles))
        if args.seed is not None:
            spec.seed = args.seed
        ds = generate_synthetic_dataset(spec)
    except (SpecError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = write_dataset(ds, args.out or "data/synth")
    print(f"manifest={manifest}")
    print(f"styles={','.join(ds.styles)}")
    print(f"source_train={len(ds.source_train)}\tsource_test={len(ds.source_test)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    _need(cfg.data or None, "dataset manifest (--data)")
    files = DatasetFiles.load(cfg.data)
    if not cfg.style:
        cfg.style = files.styles[0]
    if cfg.style not in files.styles:
        raise UsageError(f"style {cfg.style!r} not in dataset (has {', '.join(files.styles)})")
    out = Path(cfg.out)
    if args.resume:
        model = DLNModel.load(_need(args.resume, "resume checkpoint directory"))
        want = dict(hidden=cfg.hidden, embed=cfg.embed, f_text=cfg.f_text)
        have = dict(hidden=model.hidden, embed=model.embed_dim, f_text=model.f_text)
        if want != have or cfg.style not in model.styles:
            print(f"resume mismatch: config {want} style={cfg.style} vs checkpoint {have} "
                  f"styles={','.join(model.styles)}", file=sys.stderr)
            return EXIT_DIMS
        data = PreparedData(model, files.paired("source_train"), files.style_corpus(cfg.style), cfg.style)
    else:
        model, data = pipeline.build_model(cfg, files)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    fh, log = _logger(out / "loss_log.tsv")
    opt = Optimizer(cfg.optim_config())
    tcfg = cfg.train_config()
    history = []
    done = 0
    every = args.save_every or max(cfg.epochs, 1)
    rng = np.random.default_rng([tcfg.seed, 99])
    try:
        while done < cfg.epochs:
            n = min(every, cfg.epochs - done)
            history += train_epochs(model, data, tcfg, opt, lam=cfg.lam, epochs=n, log=log,
                                    start=done, rng=rng)
            done += n
            model.save(out / "model")
    finally:
        fh.close()
    if cfg.epochs == 0:
        model.save(out / "model")
    if history:
        plot_losses(history, out / "loss.png", title=f"source + {cfg.style}")
    print(f"checkpoint={out / 'model'}")
    return EXIT_OK


def cmd_extend(args) -> int:
    cfg = _run_config(args)
    base = _need(args.model, "base model directory (--model)")
    if not cfg.style:
        raise UsageError("--style (the new style id) is required")
    files = DatasetFiles.load(_need(cfg.data or None, "dataset manifest (--data)"))
    corpus = read_corpus(_need(args.corpus, "style corpus")) if args.corpus else files.style_corpus(cfg.style)
    model = DLNModel.load(base)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    fh, log = _logger(out / "loss_log.tsv")
    try:
        history = pipeline.extend(model, files.paired("source_train"), corpus, cfg.style, cfg, log=log)
    except RegistryError as exc:
        fh.close()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    fh.close()
    model.save(out / "model")
    write_kv(out / "extend_report.txt", {"style": cfg.style, "styles": ",".join(model.styles),
                                         "R": pipeline.fmt(float(model.regularizer())),
                                         "epochs": cfg.epochs, "lam1": cfg.lam1, "lam2": cfg.lam2})
    if history:
        plot_losses(history, out / "loss.png", title=f"extension to {cfg.style}")
    print(f"R={model.regularizer():.6f}")
    print(f"checkpoint={out / 'model'}")
    return EXIT_OK


def cmd_generate(args) -> int:
    model_dir = _need(args.model, "model directory (--model)")
    feats_path = _need(args.features, "features file")
    model = DLNModel.load(model_dir)
    try:
        model.view(args.style)
    except RegistryError:
        print(f"unknown style {args.style!r}; registered: {', '.join(model.domains)}", file=sys.stderr)
        return EXIT_STYLE
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    feats = load_features(feats_path)
    sents = pipeline.generate(model, feats, args.style, beam=args.beam, max_len=args.max_len)
    out = Path(args.out or "runs/generate")
    out.mkdir(parents=True, exist_ok=True)
    write_lines(out / "descriptions.txt", (" ".join(s) for s in sents))
    write_kv(out / "config.txt", {"model": model_dir, "features": feats_path, "style": args.style,
                                  "beam": args.beam, "max_len": args.max_len})
    print(f"descriptions={out / 'descriptions.txt'}\tcount={len(sents)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    files = DatasetFiles.load(_need(args.data, "dataset manifest")) if args.data else None

    def pick(explicit, key):
        if explicit:
            return _need(explicit, key)
        if files is None:
            return None
        return _need(files.path(key), key)

    gen_path = _need(args.generated, "generated descriptions")
    truth_path = pick(args.truth, "test_nouns")
    nouns_path = pick(args.nouns, "nouns")
    if truth_path is None or nouns_path is None:
        raise UsageError("need ground-truth nouns and a noun list (or --data)")
    syn_path = pick(args.synonyms, "synonyms")
    src_path = pick(args.source_corpus, "source_train")
    style_path = _need(args.style_corpus, "style corpus") if args.style_corpus else (
        files.path(f"style.{args.style}") if files is not None and args.style else None)
    ref_path = _need(args.references, "references") if args.references else None

    generated = read_corpus(gen_path, keep_empty=True)
    truth = [set(s) for s in read_corpus(truth_path)]
    nouns = load_nouns(nouns_path)
    syn = SynonymLexicon.load(syn_path) if syn_path else SynonymLexicon()
    src = read_corpus(src_path) if src_path else None
    sty = read_corpus(style_path) if style_path else None
    refs = read_corpus(ref_path) if ref_path else None
    report, baseline, _ = pipeline.evaluate(
        generated, truth, nouns, syn, src, sty, references=refs,
        random_seed=args.seed if args.random_baseline else None, clf_seed=args.seed)
    out = Path(args.out or "runs/eval")
    pipeline.write_report(out, report, baseline)
    plot_eval(report, out / "eval.png", baseline)
    for k, v in report.as_dict().items():
        print(f"{k}={pipeline.fmt(v)}")
    if baseline is not None:
        for k, v in baseline.as_dict().items():
            print(f"random.{k}={pipeline.fmt(v)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dims = {"small": dict(hidden=8, embed=6, vocab_size=12, seq_len=5)}[args.dims]
    err, per = pipeline.gradient_check(**dims, seed=args.seed or 0, lam2=args.lam2,
                                       sign_flip=args.inject_sign_flip)
    ok = err < args.tol
    worst = max(per, key=per.get)
    print(f"max_rel_error={err:.3e}\tworst={worst}\tparams={len(per)}\ttol={args.tol:g}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int)
    # no set_defaults(out=...) on subparsers: parent actions are shared between them
    common.add_argument("--out", help="output directory")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--data", help="dataset manifest")
    train_flags.add_argument("--style")
    train_flags.add_argument("--hidden", type=int)
    train_flags.add_argument("--embed", type=int)
    train_flags.add_argument("--vocab-size", dest="vocab_size", type=int)
    train_flags.add_argument("--epochs", type=int)
    train_flags.add_argument("--batch-size", dest="batch_size", type=int)
    train_flags.add_argument("--lr", dest="learning_rate", type=float)
    train_flags.add_argument("--lam", type=float)
    train_flags.add_argument("--lam1", type=float)
    train_flags.add_argument("--lam2", type=float)

    p = argparse.ArgumentParser(prog="dln", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--spec", help="JSON scene/style spec (default: built-in)")
    s.add_argument("--styles", type=int, default=3, help="styles in the built-in spec (2 or 3)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common, train_flags], help="joint source/target training")
    s.add_argument("--resume", help="model directory to continue from")
    s.add_argument("--save-every", type=int, default=0, help="checkpoint interval in epochs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extend", parents=[common, train_flags], help="add a new target style")
    s.add_argument("--model", help="pretrained model directory")
    s.add_argument("--corpus", help="new style corpus (default: the dataset's style.<id> entry)")
    s.set_defaults(func=cmd_extend)

    s = sub.add_parser("generate", parents=[common], help="describe images in a style")
    s.add_argument("--model")
    s.add_argument("--features")
    s.add_argument("--style", required=True)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--max-len", dest="max_len", type=int, default=40)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", parents=[common], help="content similarity, R_T, BLEU")
    s.add_argument("--generated")
    s.add_argument("--data", help="dataset manifest supplying default lexicons/corpora")
    s.add_argument("--style", help="style whose corpus trains the classifier")
    s.add_argument("--truth", help="ground-truth noun sets, one line per item")
    s.add_argument("--nouns")
    s.add_argument("--synonyms")
    s.add_argument("--source-corpus", dest="source_corpus")
    s.add_argument("--style-corpus", dest="style_corpus")
    s.add_argument("--references", help="unstylish references for BLEU")
    s.add_argument("--random-baseline", action="store_true", help="also score the Random baseline")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the joint loss")
    s.add_argument("--dims", choices=["small"], default="small")
    s.add_argument("--lam2", type=float, default=0.0, help=">0 checks the extension objective")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd == "eval" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
