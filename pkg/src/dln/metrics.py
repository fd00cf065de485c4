"""Content similarity, transfer accuracy, BLEU and the Random baseline."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class LexiconError(ValueError):
    pass


class SynonymLexicon:
    """noun -> synonyms, symmetrically closed at construction."""

    def __init__(self, pairs: dict | None = None):
        self.syn: dict[str, set] = {}
        for head, syns in (pairs or {}).items():
            for s in syns:
                if s == head:
                    continue
                self.syn.setdefault(head, set()).add(s)
                self.syn.setdefault(s, set()).add(head)

    def __call__(self, noun: str) -> set:
        return self.syn.get(noun, set())

    def expand(self, nouns: Iterable[str]) -> set:
        out = set(nouns)
        for n in list(out):
            out |= self(n)
        return out

    @classmethod
    def load(cls, path) -> "SynonymLexicon":
        pairs: dict[str, list] = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise LexiconError(f"{path}:{lineno}: expected 'head: syn1, syn2'")
            head, rest = line.split(":", 1)
            syns = [s.strip() for s in rest.split(",") if s.strip()]
            pairs.setdefault(head.strip(), []).extend(syns)
        return cls(pairs)


def load_nouns(path) -> frozenset:
    out = set()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.add(line)
    return frozenset(out)


def extract_nouns(tokens: Iterable[str], nouns) -> set:
    return {t for t in tokens if t in nouns}


@dataclass
class Similarity:
    f: float
    p: float
    r: float
    n_p: int
    n_r: int


def content_similarity(c_s, c_t, syn: SynonymLexicon | None = None) -> Similarity:
    """Noun-overlap f-score between reference nouns c_s and generated nouns c_t.

    Each side is widened by its synonyms before intersecting with the other
    side's raw set. Empty denominators make that rate 0; f is 0 when p + r is.
    """
    syn = syn or SynonymLexicon()
    c_s, c_t = set(c_s), set(c_t)
    n_p = len(c_t & syn.expand(c_s))
    n_r = len(c_s & syn.expand(c_t))
    p = n_p / len(c_t) if c_t else 0.0
    r = n_r / len(c_s) if c_s else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Similarity(f, p, r, n_p, n_r)


def corpus_content_similarity(items: Sequence, syn: SynonymLexicon | None = None) -> float:
    if not items:
        raise ValueError("need at least one (C_S, C_T) item")
    return sum(content_similarity(cs, ct, syn).f for cs, ct in items) / len(items)


def transfer_accuracy(sentences: Sequence, clf) -> float:
    """Fraction of sentences whose target-style probability is strictly above 0.5."""
    if not sentences:
        raise ValueError("need at least one sentence")
    s = clf.predict_proba(sentences)
    return int(np.sum(s > 0.5)) / len(sentences)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Sequence, references: Sequence, max_n: int = 4) -> float:
    """Corpus BLEU, one reference per candidate, uniform weights, no smoothing."""
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if len(candidates) != len(references):
        raise ValueError("candidate/reference count mismatch")
    match = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cc = _ngrams(cand, n)
            rc = _ngrams(ref, n)
            match[n - 1] += sum(min(k, rc[g]) for g, k in cc.items())
            total[n - 1] += max(len(cand) - n + 1, 0)
    if c_len == 0 or min(match) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    return corpus_bleu([candidate], [reference], max_n)


def random_baseline(count: int, nouns, rng) -> list[str]:
    """Uniformly sample ``count`` distinct nouns (capped at the lexicon size)."""
    if not nouns:
        raise ValueError("noun lexicon is empty")
    pool = sorted(nouns)
    k = min(max(count, 0), len(pool))
    if k == 0:
        return []
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


@dataclass
class EvalReport:
    f: float
    p: float
    r: float
    n_p: float
    n_r: float
    transfer_accuracy: float | None = None
    bleu: dict = field(default_factory=dict)
    items: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "content_similarity": self.f,
            "p": self.p,
            "r": self.r,
            "n_p": self.n_p,
            "n_r": self.n_r,
        }
        if self.transfer_accuracy is not None:
            d["transfer_accuracy"] = self.transfer_accuracy
        for n, v in sorted(self.bleu.items()):
            d[f"bleu_{n}"] = v
        d.update(self.extra)
        return d


def evaluate_content(generated: Sequence[Sequence[str]], truth: Sequence, nouns,
                     syn: SynonymLexicon | None = None) -> EvalReport:
    """Mean f/p/r and mean numerators over test items, with per-item records."""
    if len(generated) != len(truth):
        raise ValueError(f"{len(generated)} generated descriptions for {len(truth)} test items")
    if not generated:
        raise ValueError("nothing to evaluate")
    recs = []
    for gen, cs in zip(generated, truth):
        ct = extract_nouns(gen, nouns)
        sim = content_similarity(cs, ct, syn)
        recs.append((sorted(cs), sorted(ct), sim))
    n = len(recs)
    return EvalReport(
        f=sum(r[2].f for r in recs) / n,
        p=sum(r[2].p for r in recs) / n,
        r=sum(r[2].r for r in recs) / n,
        n_p=sum(r[2].n_p for r in recs) / n,
        n_r=sum(r[2].n_r for r in recs) / n,
        items=recs,
    )
