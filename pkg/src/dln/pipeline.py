"""End-to-end runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import read_kv, write_kv
from .classifier import ClassifierConfig, StyleClassifier, train_style_classifier
from .core import OptimConfig
from .data import DatasetFiles, Vocabulary, build_vocab
from .decoding import beam_search, greedy_decode
from .metrics import EvalReport, SynonymLexicon, corpus_bleu, evaluate_content, random_baseline, transfer_accuracy
from .model import (
    DLNModel,
    Optimizer,
    PreparedData,
    SourceBatch,
    TargetBatch,
    TrainConfig,
    extend_to_new_style,
    joint_objective,
    joint_train_step,
    train_epochs,
)


@dataclass
class RunConfig:
    data: str = ""
    style: str = ""
    out: str = "runs/default"
    seed: int = 0
    hidden: int = 64
    embed: int = 32
    f_text: int = 256
    vocab_size: int = 500
    max_len: int = 100
    decode_len: int = 40
    beam: int = 5
    lam: float = 0.5
    lam1: float = 0.2
    lam2: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    decay_factor: float = 0.5
    decay_interval_epochs: int = 80
    clip_norm: float = 5.0
    init_range: float = 0.08

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in defaults:
                raise KeyError(f"unknown config key {k!r}")
            kwargs[k] = _coerce(defaults[k], v)
        return cls(**kwargs)

    @classmethod
    def load(cls, path, overrides: Optional[dict] = None) -> "RunConfig":
        values = read_kv(path) if path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lam=self.lam, lam1=self.lam1, lam2=self.lam2, epochs=self.epochs,
                           batch_size=self.batch_size, seed=self.seed)

    def optim_config(self) -> OptimConfig:
        return OptimConfig(learning_rate=self.learning_rate, decay_factor=self.decay_factor,
                           decay_interval_epochs=self.decay_interval_epochs, clip_norm=self.clip_norm)

    def save(self, path) -> None:
        write_kv(path, dataclasses.asdict(self))


def _coerce(default, value):
    if isinstance(value, str):
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    return value


def build_model(cfg: RunConfig, files: DatasetFiles) -> tuple[DLNModel, PreparedData]:
    style = cfg.style or files.styles[0]
    source = files.paired("source_train")
    target = files.style_corpus(style)
    vocab = build_vocab([ex.tokens for ex in source] + target, cfg.vocab_size)
    f_image = source[0].features.size
    model = DLNModel.create(vocab, [style], cfg.hidden, cfg.embed, f_image, cfg.f_text,
                            seed=cfg.seed, max_len=cfg.max_len, init_range=cfg.init_range)
    return model, PreparedData(model, source, target, style)


def train(cfg: RunConfig, log=None) -> tuple[DLNModel, list]:
    files = DatasetFiles.load(cfg.data)
    model, data = build_model(cfg, files)
    opt = Optimizer(cfg.optim_config())
    history = train_epochs(model, data, cfg.train_config(), opt, lam=cfg.lam, log=log)
    return model, history


def extend(model: DLNModel, source: list, corpus: list, style: str, cfg: RunConfig, log=None) -> list:
    """Add ``style`` to a pretrained model and fine-tune on lam1 L_S + (1-lam1) L_T + lam2 R."""
    extend_to_new_style(model, style, corpus, max_vocab=cfg.vocab_size + len(model.vocab),
                        seed=cfg.seed, init_range=cfg.init_range)
    data = PreparedData(model, source, corpus, style)
    opt = Optimizer(cfg.optim_config())
    return train_epochs(model, data, cfg.train_config(), opt, lam=cfg.lam1, lam2=cfg.lam2, log=log)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DLN_THREADS", "1")))
    except ValueError:
        return 1


def generate(model: DLNModel, features, style: str, beam: int = 5, max_len: int = 40) -> list[list[str]]:
    view = model.view(style)

    def one(f):
        z = model.encode_image(f)
        ids = greedy_decode(z, view, max_len) if beam == 1 else beam_search(z, view, beam, max_len)
        return view.vocab.decode(ids)

    n = _threads()
    if n == 1:
        return [one(f) for f in features]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(one, features))


def evaluate(generated, truth_nouns, nouns, syn: SynonymLexicon, source_corpus=None, style_corpus=None,
             references=None, random_seed: Optional[int] = None, clf: Optional[StyleClassifier] = None,
             clf_seed: int = 0):
    """Score generated text; returns (report, random-baseline report or None, classifier)."""
    report = evaluate_content(generated, truth_nouns, nouns, syn)
    if clf is None and source_corpus is not None and style_corpus is not None:
        clf = train_style_classifier(source_corpus, style_corpus, ClassifierConfig(seed=clf_seed))
    if clf is not None:
        report.transfer_accuracy = transfer_accuracy(generated, clf)
        report.extra["classifier_train_accuracy"] = clf.train_accuracy
    if references is not None:
        for n in range(1, 5):
            report.bleu[n] = corpus_bleu(generated, references, n)
    baseline = None
    if random_seed is not None:
        if style_corpus is None:
            raise ValueError("the Random baseline samples nouns from the target corpus vocabulary")
        target_nouns = {t for s in style_corpus for t in s if t in nouns}
        rng = np.random.default_rng(random_seed)
        rb = [random_baseline(len(c), target_nouns, rng) for c in truth_nouns]
        baseline = evaluate_content(rb, truth_nouns, nouns, syn)
        if clf is not None:
            baseline.transfer_accuracy = transfer_accuracy(rb, clf)
    return report, baseline, clf


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_report(out_dir, report: EvalReport, baseline: Optional[EvalReport] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = {k: fmt(v) for k, v in report.as_dict().items()}
    entries["items"] = len(report.items)
    if baseline is not None:
        for k, v in baseline.as_dict().items():
            entries[f"random.{k}"] = fmt(v)
    write_kv(out / "report.txt", entries)
    lines = ["item\tC_S\tC_T\tf\tp\tr\tn_p\tn_r"]
    for i, (cs, ct, sim) in enumerate(report.items):
        lines.append(f"{i}\t{' '.join(cs)}\t{' '.join(ct)}\t{sim.f:.6f}\t{sim.p:.6f}\t{sim.r:.6f}\t{sim.n_p}\t{sim.n_r}")
    (out / "items.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out / "report.txt"


def write_loss_log(path, history) -> None:
    lines = ["epoch\tL_S\tL_T\tL"] + [f"{e}\t{a:.6f}\t{b:.6f}\t{c:.6f}" for e, a, b, c in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_loss_log(path) -> list:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        e, a, b, c = line.split("\t")
        rows.append((int(e), float(a), float(b), float(c)))
    return rows


# ---------------------------------------------------------------------------
# Gradient check on a tiny model
# ---------------------------------------------------------------------------

def tiny_problem(hidden=8, embed=6, vocab_size=12, seq_len=5, f_image=10, f_text=16, seed=0, batch=2):
    """A float64 desk model plus one source and one target batch of fixed length."""
    words = [f"w{i}" for i in range(vocab_size - 4)]
    vocab = Vocabulary(["<pad>", "<bos>", "<eos>", "<unk>"] + words)
    model = DLNModel.create(vocab, ["target"], hidden, embed, f_image, f_text, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 5])
    # larger-than-default weights keep every gate away from its trivial regime
    for _, t in model.store.items():
        t.value = t.value + rng.normal(0.0, 0.3, t.shape)
    src_ids = [list(rng.integers(4, vocab_size, seq_len - 1)) + [2] for _ in range(batch)]
    tgt_tokens = [[words[i - 4] for i in rng.integers(4, vocab_size, seq_len - 1)] for _ in range(batch)]
    bs = SourceBatch(rng.normal(size=(batch, f_image)), src_ids)
    bt = TargetBatch(model.text_features(tgt_tokens), [vocab.encode(s, add_eos=True) for s in tgt_tokens], "target")
    return model, bs, bt


def gradient_check(hidden=8, embed=6, vocab_size=12, seq_len=5, seed=0, lam=0.5, lam2=0.0,
                   h=1e-5, sign_flip=False):
    """Max relative error between analytic and central-difference gradients of the joint loss.

    ``sign_flip`` deliberately corrupts one analytic gradient (harness self-test).
    """
    from .core import finite_difference_check

    model, bs, bt = tiny_problem(hidden, embed, vocab_size, seq_len, seed=seed)
    if lam2 > 0:
        # extension objective: a freshly added style, anchors offset so R has a gradient
        extend_to_new_style(model, "extra", [["w0", "w1"]], seed=seed)
        for k in model.ANCHORED:
            model.anchors[k] = model.anchors[k] + 0.01
        bt = TargetBatch(bt.features, bt.targets, "extra")
    cfg = TrainConfig(lam=lam)

    def loss_fn():
        return joint_objective(model, bs, bt, lam, lam2)

    def grad_fn():
        joint_train_step(bs, bt, model, cfg, Optimizer(), lam=lam, lam2=lam2, update=False)
        if sign_flip:
            model.store["ln.source.f.g"].grad *= -1.0

    return finite_difference_check(loss_fn, model.store, grad_fn, h=h)
