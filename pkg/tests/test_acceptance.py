"""Acceptance criteria 1-10, each printing one pass/fail line.

The end-to-end criteria share one desk run: a 3-style synthetic dataset,
joint pretraining on lyrics (H=64, E=32), then two extensions to fairy that
differ only in lam2.
"""

import time

import numpy as np
import pytest

from dln.classifier import train_style_classifier
from dln.cli import main
from dln.data import SyntheticSceneSpec, default_spec, generate_synthetic_dataset
from dln.decoding import beam_search, greedy_decode
from dln.lnlstm import GATES
from dln.metrics import SynonymLexicon, content_similarity, transfer_accuracy
from dln.model import (
    SOURCE,
    DLNModel,
    Optimizer,
    PreparedData,
    extend_to_new_style,
    joint_train_step,
    train_epochs,
)
from dln.pipeline import RunConfig, build_model, evaluate, generate, gradient_check

DESK = dict(hidden=64, embed=32, f_text=256, vocab_size=500, epochs=80, batch_size=64,
            learning_rate=0.005, lam=0.5, seed=0, style="lyrics")
EXTEND = dict(epochs=10, learning_rate=0.001, lam1=0.2)


class _Files:
    """In-memory stand-in for DatasetFiles."""

    def __init__(self, ds):
        self.ds = ds
        self.styles = list(ds.styles)

    def paired(self, split):
        return getattr(self.ds, split)

    def style_corpus(self, style):
        return self.ds.styles[style]


@pytest.fixture(scope="module")
def desk():
    t0 = time.time()
    spec = SyntheticSceneSpec.from_dict(default_spec(3))
    ds = generate_synthetic_dataset(spec)
    cfg = RunConfig(**DESK)
    model, data = build_model(cfg, _Files(ds))
    fresh = model.copy()
    history = train_epochs(model, data, cfg.train_config(), Optimizer(cfg.optim_config()), lam=cfg.lam)
    feats = [ex.features for ex in ds.source_test]
    gen = generate(model, feats, "lyrics", beam=5, max_len=40)
    elapsed = time.time() - t0

    nouns = set(spec.nouns) | set(spec.syn_words())
    syn = SynonymLexicon(spec.synonyms)
    src = [ex.tokens for ex in ds.source_train]
    report, baseline, clf = evaluate(gen, ds.test_nouns, nouns, syn, src, ds.styles["lyrics"], random_seed=0)
    return dict(ds=ds, cfg=cfg, model=model, fresh=fresh, data=data, history=history, feats=feats,
                report=report, baseline=baseline, clf=clf, elapsed=elapsed, src=src)


@pytest.fixture(scope="module")
def extended(desk):
    ds = desk["ds"]
    runs = {}
    for lam2 in (0.1, 0.0):
        cfg = RunConfig(**{**DESK, **EXTEND, "lam2": lam2})
        m = desk["model"].copy()
        extend_to_new_style(m, "fairy", ds.styles["fairy"], max_vocab=cfg.vocab_size + len(m.vocab),
                            seed=cfg.seed, init_range=cfg.init_range)
        r0 = m.regularizer()
        data = PreparedData(m, ds.source_train, ds.styles["fairy"], "fairy")
        train_epochs(m, data, cfg.train_config(), Optimizer(cfg.optim_config()), lam=cfg.lam1, lam2=cfg.lam2)
        runs[lam2] = dict(model=m, r0=r0, r=m.regularizer())
    return runs


# ---------------------------------------------------------------------------

def test_1_gradient_fidelity(criterion):
    t = time.time()
    err, per = gradient_check(hidden=8, embed=6, vocab_size=12, seq_len=5, h=1e-5)
    dt = time.time() - t
    ln = [f"ln.{d}.{g}.{p}" for d in (SOURCE, "target") for g in GATES for p in "gb"]
    covered = all(k in per for k in ln)
    criterion(1, err < 1e-4 and covered and dt < 60,
              f"max_rel_error={err:.2e} params={len(per)} ln_vectors={sum(k in per for k in ln)} time={dt:.1f}s")


def test_2_weight_sharing(criterion, desk):
    ds = desk["ds"]
    m = desk["fresh"].copy()
    src, tgt = m.view(SOURCE), m.view("lyrics")
    before = tgt.weights.ih["f"].value[0, 0]
    src.weights.ih["f"].value[0, 0] += 1.0
    src.weights.ie["u"].value[1, 2] -= 0.5
    src.embed[0].value[5, 0] += 1.0
    src.output[0].value[0, 5] += 1.0
    mutation_seen = (tgt.weights.ih["f"].value[0, 0] == before + 1.0
                     and tgt.weights.ie["u"].value[1, 2] == src.weights.ie["u"].value[1, 2]
                     and tgt.embed_matrix()[5, 0] == src.embed_matrix()[5, 0]
                     and tgt.output_matrix()[0, 5] == src.output_matrix()[0, 5])

    data = PreparedData(m, ds.source_train[:640], ds.styles["lyrics"][:640], "lyrics")
    opt = Optimizer(desk["cfg"].optim_config())
    cfg = desk["cfg"].train_config()
    rng = np.random.default_rng(0)
    steps = 0
    while steps < 100:
        for bs, bt in data.batches(16, rng):
            joint_train_step(bs, bt, m, cfg, opt, lam=0.5)
            steps += 1
            if steps == 100:
                break
    src, tgt = m.view(SOURCE), m.view("lyrics")
    ln_differ = all(not np.array_equal(m.store[f"ln.{SOURCE}.{g}.{p}"].value, m.store[f"ln.lyrics.{g}.{p}"].value)
                    for g in GATES for p in "gb")
    shared = (all(src.weights.ih[g] is tgt.weights.ih[g] and src.weights.ie[g] is tgt.weights.ie[g]
                  for g in GATES)
              and src.embed[0] is tgt.embed[0] and src.output[0] is tgt.output[0])
    criterion(2, mutation_seen and ln_differ and shared,
              f"mutation_seen={mutation_seen} ln_differ={ln_differ} single_storage={shared} steps={steps}")


def test_3_gradient_routing(criterion, desk):
    ds = desk["ds"]
    m = desk["fresh"].copy()
    data = PreparedData(m, ds.source_train[:400], ds.styles["lyrics"][:400], "lyrics")
    opt = Optimizer(desk["cfg"].optim_config())
    cfg = desk["cfg"].train_config()
    rng = np.random.default_rng(3)
    ln_src = [f"ln.{SOURCE}.{g}.{p}" for g in GATES for p in "gb"]
    ln_tgt = [f"ln.lyrics.{g}.{p}" for g in GATES for p in "gb"]
    worst = 0.0
    steps = 0
    for bs, bt in data.batches(20, rng):
        lam = float(rng.uniform(0.05, 0.95))
        m._ensure_grads()
        m.store.zero_grad()
        m.source_backward(m.source_loss(bs.features, bs.targets), 1.0)
        worst = max(worst, max(float(np.abs(m.store[k].grad).max()) for k in ln_tgt))
        m.store.zero_grad()
        m.target_backward(m.target_loss(bt.features, bt.targets, "lyrics"), 1.0)
        worst = max(worst, max(float(np.abs(m.store[k].grad).max()) for k in ln_src))
        joint_train_step(bs, bt, m, cfg, opt, lam=lam)
        steps += 1
    criterion(3, worst == 0.0 and steps == 20, f"max_cross_grad={worst} steps={steps}")


def test_4_end_to_end_transfer(criterion, desk):
    rep, base = desk["report"], desk["baseline"]
    ok = rep.transfer_accuracy >= 0.90 and rep.f >= 3 * base.f and desk["elapsed"] < 600
    criterion(4, ok, f"R_T={rep.transfer_accuracy:.3f} CS={rep.f:.3f} random_CS={base.f:.3f} "
                     f"ratio={rep.f / max(base.f, 1e-12):.2f} time={desk['elapsed']:.0f}s")


def test_5_classifier_anchor(criterion, desk):
    ds = desk["ds"]
    accs = {"source/lyrics": desk["clf"].train_accuracy,
            "lyrics/fairy": train_style_classifier(ds.styles["lyrics"], ds.styles["fairy"]).train_accuracy,
            "lyrics/romance": train_style_classifier(ds.styles["lyrics"], ds.styles["romance"]).train_accuracy}
    criterion(5, min(accs.values()) >= 0.99, " ".join(f"{k}={v:.4f}" for k, v in accs.items()))


def test_6_metric_oracles(criterion):
    from dln.metrics import bleu

    rng = np.random.default_rng(6)
    words = [f"n{i}" for i in range(10)]
    pairs = [("n0", "n1"), ("n2", "n3")]
    syn = SynonymLexicon({a: [b] for a, b in pairs})

    def brute(cs, ct):
        def widen(S):
            out = set(S)
            for a, b in pairs:
                if a in S:
                    out.add(b)
                if b in S:
                    out.add(a)
            return out
        p = sum(t in widen(cs) for t in ct) / len(ct) if ct else 0.0
        r = sum(s in widen(ct) for s in cs) / len(cs) if cs else 0.0
        return 2 * p * r / (p + r) if p + r else 0.0

    exact = 0
    for _ in range(100):
        cs = set(rng.choice(words, rng.integers(0, 6)))
        ct = set(rng.choice(words, rng.integers(0, 6)))
        exact += content_similarity(cs, ct, syn).f == brute(cs, ct)

    class Half:
        def predict_proba(self, sents):
            return np.full(len(sents), 0.5)

    boundary = transfer_accuracy([["x"], ["y"]], Half()) == 0.0
    b2 = bleu("the cat sat".split(), "the cat sat down".split(), max_n=2)
    bleu_ok = abs(b2 - 0.7165) < 1e-4
    criterion(6, exact == 100 and boundary and bleu_ok,
              f"exact_matches={exact}/100 s=0.5_not_transferred={boundary} bleu2={b2:.4f}")


def test_7_decoding(criterion):
    import itertools

    from dln.data import EOS, SPECIALS, Vocabulary
    from dln.decoding import sequence_logprob

    def toy(seed, words):
        m = DLNModel.create(Vocabulary(list(SPECIALS) + list(words)), ["t"], 6, 4, 5, 8, seed=seed,
                            dtype=np.float64)
        r = np.random.default_rng([seed, 1])
        for _, t in m.store.items():
            t.value += r.normal(0, 1.0, t.shape)
        return m

    same = better = 0
    for seed in range(50):
        m = toy(seed, "abcdef")
        z = m.encode_image(np.random.default_rng([seed, 2]).normal(0, 2, 5))
        v = m.view("t")
        g = beam_search(z, v, 1, 12, return_hypothesis=True)
        same += beam_search(z, v, 1, 12) == greedy_decode(z, v, 12)
        b = beam_search(z, v, 5, 12, return_hypothesis=True)
        better += (b.finished > g.finished) or (b.finished == g.finished and b.logprob >= g.logprob - 1e-12)

    exact = 0
    for seed in range(12):
        m = toy(seed, "abc")
        z = m.encode_image(np.random.default_rng([seed, 2]).normal(0, 2, 5))
        v = m.view("t")
        cands = [body + (EOS,) for n in range(3) for body in itertools.product((4, 5, 6), repeat=n)]
        best = max(cands, key=lambda s: sequence_logprob(z, v, list(s)))
        exact += tuple(beam_search(z, v, 5, 3, return_hypothesis=True).tokens) == best
    criterion(7, same == 50 and better == 50 and exact == 12,
              f"beam1==greedy {same}/50 beam5>=greedy {better}/50 beam5==exhaustive {exact}/12")


def test_8_multi_style_extension(criterion, desk, extended):
    reg, free = extended[0.1], extended[0.0]
    before = desk["report"].transfer_accuracy
    m = reg["model"]
    gen = generate(m, desk["feats"], "lyrics", beam=5, max_len=40)
    after = transfer_accuracy(gen, desk["clf"])
    ok = reg["r0"] == 0.0 and free["r0"] == 0.0 and reg["r"] < free["r"] and before - after <= 0.05
    criterion(8, ok, f"R_init={reg['r0']} R(lam2=0.1)={reg['r']:.4f} R(lam2=0)={free['r']:.4f} "
                     f"lyrics_R_T {before:.3f}->{after:.3f}")


def test_9_loss_calibration(criterion, desk):
    m = desk["fresh"]
    data = desk["data"]
    n = 256
    rs = m.source_loss(data.src_feats[:n], data.src_ids[:n])
    rt = m.target_loss(data.tgt_feats[:n], data.tgt_ids[:n], "lyrics")
    lnv = np.log(len(m.vocab))
    per_tok = [float(r.per_example.sum()) / r.n_tokens for r in (rs, rt)]
    calib = all(abs(x - lnv) / lnv < 0.02 for x in per_tok)
    h = desk["history"]
    e1, e20 = h[0], h[19]
    falls = e20[1] < e1[1] and e20[2] < e1[2]
    criterion(9, calib and falls, f"ln|V|={lnv:.4f} CE_S={per_tok[0]:.4f} CE_T={per_tok[1]:.4f} "
                                  f"L_S {e1[1]:.2f}->{e20[1]:.2f} L_T {e1[2]:.2f}->{e20[2]:.2f}")


def test_10_reproducibility(criterion, tmp_path, monkeypatch):
    def run(d):
        d.mkdir()
        monkeypatch.chdir(d)  # relative paths, so recorded configs match too
        assert main(["synth", "--styles", "2", "--out", "data"]) == 0
        with open("run.cfg", "w") as fh:
            fh.write("data=data/manifest.txt\nstyle=lyrics\nhidden=16\nembed=8\nepochs=2\nlearning_rate=0.005\n")
        assert main(["train", "--config", "run.cfg", "--out", "tr"]) == 0
        assert main(["generate", "--model", "tr/model", "--features", "data/source_test.features",
                     "--style", "lyrics", "--beam", "2", "--out", "gen"]) == 0
        assert main(["eval", "--generated", "gen/descriptions.txt", "--data", "data/manifest.txt",
                     "--style", "lyrics", "--random-baseline", "--out", "ev"]) == 0
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    ckpt = a["tr/model/model.ckpt"] == b["tr/model/model.ckpt"]
    report = a["ev/report.txt"] == b["ev/report.txt"] and a["ev/items.tsv"] == b["ev/items.tsv"]
    diff = sorted(k for k in a if a[k] != b.get(k))
    criterion(10, ckpt and report and not diff and a.keys() == b.keys(),
              f"checkpoint_identical={ckpt} report_identical={report} files={len(a)} differing={diff}")
