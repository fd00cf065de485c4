"""Sentence CNN that scores how target-styled a sentence is.

Embedding -> parallel convolutions of widths 3/4/5 -> ReLU -> max over time
-> linear -> sigmoid. Sentences shorter than the widest filter are padded up
to it, and windows past a sentence's own padded length are masked, so a
sentence's score never depends on what else is in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AdamState, OptimConfig, ParamStore, adam_step, clip_gradients, sigmoid, uniform_init
from .data import PAD, Vocabulary, build_vocab


@dataclass
class ClassifierConfig:
    embed: int = 64
    filters: int = 32
    widths: tuple = (3, 4, 5)
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 20
    target_accuracy: float = 0.995
    seed: int = 0


class StyleClassifier:
    def __init__(self, vocab: Vocabulary, cfg: ClassifierConfig):
        self.vocab = vocab
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 7])
        D, F = cfg.embed, cfg.filters
        self.store = ParamStore()
        self.store.add("emb", rng.normal(0.0, 0.1, (len(vocab), D)))
        for w in cfg.widths:
            self.store.add(f"conv{w}.w", uniform_init((w * D, F), np.sqrt(3.0 / (w * D)), rng))
            self.store.add(f"conv{w}.b", np.zeros(F))
        self.store.add("head.w", uniform_init((F * len(cfg.widths),), np.sqrt(3.0 / (F * len(cfg.widths))), rng))
        self.store.add("head.b", np.zeros(1))
        self.train_accuracy = None

    @property
    def min_len(self) -> int:
        return max(self.cfg.widths)

    def _encode(self, sents):
        lens = np.array([max(len(s), self.min_len) for s in sents])
        ids = np.full((len(sents), lens.max()), PAD, dtype=np.int64)
        for b, s in enumerate(sents):
            ids[b, :len(s)] = self.vocab.encode(s)
        return ids, lens

    def _forward(self, ids, lens):
        st = self.store
        emb = st["emb"].value[ids]  # (B, L, D)
        B, L, D = emb.shape
        pooled, caches = [], []
        for w in self.cfg.widths:
            nwin = L - w + 1
            X = np.stack([emb[:, s:s + w].reshape(B, w * D) for s in range(nwin)], axis=1)
            pre = X @ st[f"conv{w}.w"].value + st[f"conv{w}.b"].value
            act = np.maximum(pre, 0.0)
            valid = np.arange(nwin)[None, :] <= (lens - w)[:, None]
            masked = np.where(valid[..., None], act, -np.inf)
            arg = masked.argmax(axis=1)  # (B, F)
            pooled.append(np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0])
            caches.append((w, X, pre, arg))
        h = np.concatenate(pooled, axis=1)
        logit = h @ st["head.w"].value + st["head.b"].value[0]
        return logit, (ids, emb.shape, h, caches)

    def _backward(self, dlogit, cache):
        st = self.store
        ids, (B, L, D), h, caches = cache
        st["head.w"].grad += h.T @ dlogit
        st["head.b"].grad += dlogit.sum(keepdims=True)
        dh = dlogit[:, None] * st["head.w"].value[None, :]
        demb = np.zeros((B, L, D))
        F = self.cfg.filters
        for n, (w, X, pre, arg) in enumerate(caches):
            dpool = dh[:, n * F:(n + 1) * F] * (np.take_along_axis(pre, arg[:, None, :], axis=1)[:, 0] > 0)
            dpre = np.zeros_like(pre)
            np.put_along_axis(dpre, arg[:, None, :], dpool[:, None, :], axis=1)
            st[f"conv{w}.w"].grad += np.einsum("bsk,bsf->kf", X, dpre)
            st[f"conv{w}.b"].grad += dpre.sum(axis=(0, 1))
            dX = dpre @ st[f"conv{w}.w"].value.T  # (B, nwin, w*D)
            for s in range(dX.shape[1]):
                demb[:, s:s + w] += dX[:, s].reshape(B, w, D)
        np.add.at(st["emb"].grad, ids.reshape(-1), demb.reshape(-1, D))

    def predict_proba(self, sents, chunk: int = 256) -> np.ndarray:
        """P(target style) per sentence."""
        out = []
        for i in range(0, len(sents), chunk):
            ids, lens = self._encode(sents[i:i + chunk])
            logit, _ = self._forward(ids, lens)
            out.append(sigmoid(logit))
        return np.concatenate(out) if out else np.zeros(0)

    def accuracy(self, sents, labels) -> float:
        pred = self.predict_proba(sents) > 0.5
        return float(np.mean(pred == np.asarray(labels, dtype=bool)))

    def loss_and_grad(self, sents, labels) -> float:
        ids, lens = self._encode(sents)
        logit, cache = self._forward(ids, lens)
        y = np.asarray(labels, dtype=np.float64)
        s = sigmoid(logit)
        loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
        self._backward((s - y) / len(sents), cache)
        return loss


def train_style_classifier(source_corpus, target_corpus, cfg: ClassifierConfig | None = None) -> StyleClassifier:
    """Fit source (label 0) vs target (label 1); stops once train accuracy hits the target."""
    cfg = cfg or ClassifierConfig()
    if not source_corpus or not target_corpus:
        raise ValueError("both corpora must be non-empty to train a binary classifier")
    sents = list(source_corpus) + list(target_corpus)
    labels = np.array([0] * len(source_corpus) + [1] * len(target_corpus))
    clf = StyleClassifier(build_vocab(sents, 100000), cfg)
    opt = OptimConfig(learning_rate=cfg.learning_rate)
    state = AdamState()
    rng = np.random.default_rng([cfg.seed, 8])
    clf.store.zero_grad()
    for _ in range(cfg.max_epochs):
        order = rng.permutation(len(sents))
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            clf.loss_and_grad([sents[k] for k in idx], labels[idx])
            clip_gradients(clf.store, opt.clip_norm)
            adam_step(clf.store, state, opt, 0)
        clf.train_accuracy = clf.accuracy(sents, labels)
        if clf.train_accuracy >= cfg.target_accuracy:
            break
    return clf
