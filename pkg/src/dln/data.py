"""Tokenisation, vocabularies, feature files and the synthetic scene corpus."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .checkpoint import read_kv, write_kv

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
MAX_LEN = 100

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class VocabError(ValueError):
    pass


class SpecError(ValueError):
    pass


class FormatError(ValueError):
    pass


def tokenize(line: str) -> list[str]:
    """Lowercase, split on whitespace, keep punctuation (including ';') as tokens."""
    return _TOKEN_RE.findall(line.lower())


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise VocabError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Iterable[str], add_eos: bool = False) -> list[int]:
        ids = [self.index.get(t, UNK) for t in tokens]
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return out

    def extended(self, new_tokens: Iterable[str]) -> "Vocabulary":
        """A copy with unseen tokens appended (order preserved, duplicates dropped)."""
        extra = []
        seen = set(self.tokens)
        for t in new_tokens:
            if t not in seen:
                seen.add(t)
                extra.append(t)
        return Vocabulary(self.tokens + extra)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def token_counts(corpus: Iterable[list[str]]) -> Counter:
    counts: Counter = Counter()
    for sent in corpus:
        counts.update(sent)
    return counts


def ranked_tokens(counts: Counter) -> list[str]:
    """Most frequent first, ties broken lexicographically; specials excluded."""
    items = [(t, n) for t, n in counts.items() if t not in SPECIALS]
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    return [t for t, _ in items]


def build_vocab(corpus: Iterable[list[str]], max_size: int) -> Vocabulary:
    if max_size <= 4:
        raise ValueError("max_size must exceed the 4 special tokens")
    counts = token_counts(corpus)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(list(SPECIALS) + ranked_tokens(counts)[: max_size - 4])


def read_corpus(path, keep_empty: bool = False) -> list[list[str]]:
    """One tokenized sentence per line; blank lines are kept (as []) only on request."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize(line) for line in lines if keep_empty or line.strip()]


def write_lines(path, lines: Iterable[str]) -> None:
    Path(path).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def save_features(path, feats) -> None:
    lines = [" ".join(repr(float(x)) for x in np.asarray(f).ravel()) for f in feats]
    write_lines(path, lines)


def load_features(path) -> list[np.ndarray]:
    feats: list[np.ndarray] = []
    dim: Optional[int] = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            vec = np.array([float(x) for x in line.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise FormatError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
        feats.append(vec)
    return feats


@dataclass
class PairedExample:
    features: np.ndarray
    tokens: list[str]

    def __post_init__(self):
        if len(self.tokens) > MAX_LEN:
            raise ValueError(f"description longer than {MAX_LEN} tokens")


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

COMMON_WORDS = ("a", "the", "and", "in", "with", "of", "is", "there", ".", ",")


def _default_spec() -> dict:
    return {
        "seed": 1234,
        "feature_dim": 64,
        "noise_scale": 0.1,
        "min_objects": 1,
        "max_objects": 3,
        "nouns": ["dog", "cat", "tree", "car", "house", "bird", "boat", "cup",
                  "horse", "flower", "chair", "lamp", "river", "bridge", "clock", "book"],
        "attributes": ["red", "blue", "green", "small", "big", "old", "white", "dark"],
        # rendered only by the stylish corpora; image truth always uses the head noun
        "synonyms": {"cup": ["mug"], "dog": ["hound"], "house": ["cottage"], "book": ["novel"]},
        "synonym_rate": 0.3,
        "source": {
            "templates": ["there is {objects} .", "a picture of {objects} ."],
            "words": ["picture"],
            "object": "a {attr} {noun}",
            "joiner": "and",
        },
        "styles": {
            "lyrics": {
                "markers": ["oh", "baby", "yeah", ";", "tonight", "sing"],
                "templates": ["oh baby {objects} ; yeah tonight ;", "sing of {objects} ; oh yeah ;"],
                "object": "the {attr} {noun} oh",
                "joiner": ";",
            },
            "romance": {
                "markers": ["darling", "my", "love", "heart", "kiss", "sweet"],
                "templates": ["my darling , {objects} in my heart .", "sweet love , kiss {objects} ."],
                "object": "my {attr} {noun}",
                "joiner": "and",
            },
        },
        "sizes": {"source_train": 2000, "source_test": 200, "style": 2000},
    }


def default_spec(n_styles: int = 2) -> dict:
    spec = _default_spec()
    if n_styles >= 3:
        spec["styles"]["fairy"] = {
            "markers": ["once", "upon", "time", "magic", "king", "forest"],
            "templates": ["once upon a time , {objects} in the magic forest .",
                          "the king and {objects} of magic ."],
            "object": "a {attr} {noun} of magic",
            "joiner": "and",
        }
    return spec


@dataclass
class SyntheticSceneSpec:
    nouns: list
    attributes: list
    source: dict
    styles: dict
    seed: int = 1234
    feature_dim: int = 64
    noise_scale: float = 0.1
    min_objects: int = 1
    max_objects: int = 3
    synonyms: dict = field(default_factory=dict)
    synonym_rate: float = 0.0
    sizes: dict = field(default_factory=lambda: {"source_train": 2000, "source_test": 200, "style": 2000})

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from None
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "SyntheticSceneSpec":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def syn_words(self) -> list[str]:
        return [s for head in self.nouns for s in self.synonyms.get(head, [])]

    def validate(self):
        if not 1 <= self.min_objects <= self.max_objects <= 4:
            raise SpecError("object counts must satisfy 1 <= min_objects <= max_objects <= 4")
        if len(self.nouns) < self.max_objects:
            raise SpecError("not enough nouns for max_objects")
        noun_like = set(self.nouns) | set(self.syn_words())
        for head in self.synonyms:
            if head not in self.nouns:
                raise SpecError(f"synonym head {head!r} is not a scene noun")
        if not self.styles:
            raise SpecError("at least one style is required")
        seen_markers: dict[str, str] = {}
        plain = set(self.source.get("words", []))
        for st in self.styles.values():
            plain |= set(st.get("words", []))
        for name, st in self.styles.items():
            markers = set(st.get("markers", []))
            if not markers:
                raise SpecError(f"style {name!r} declares no marker tokens")
            if markers & noun_like:
                raise SpecError(f"style {name!r} markers overlap scene nouns")
            if markers & (set(COMMON_WORDS) | plain):
                raise SpecError(f"style {name!r} markers overlap common or template words")
            for m in markers:
                if m in seen_markers:
                    raise SpecError(f"marker {m!r} shared by styles {seen_markers[m]!r} and {name!r}")
                seen_markers[m] = name
            self._check_block(name, st, markers)
        self._check_block("source", self.source, set())

    def _check_block(self, name, block, markers):
        allowed = set(COMMON_WORDS) | markers | set(block.get("words", []))
        for key in ("templates", "object", "joiner"):
            if key not in block:
                raise SpecError(f"{name}: missing {key!r}")
        for tpl in block["templates"]:
            self._check_template(name, tpl, {"objects"}, allowed)
        self._check_template(name, block["object"], {"noun", "attr"}, allowed)
        self._check_template(name, block["joiner"], set(), allowed)

    @staticmethod
    def _check_template(name, tpl, slots, allowed):
        literal = []
        for text, fname, _, _ in string.Formatter().parse(tpl):
            literal.append(text)
            if fname is not None and fname not in slots:
                raise SpecError(f"{name}: template {tpl!r} references unknown slot {{{fname}}}")
        for tok in tokenize(" ".join(literal)):
            if tok not in allowed:
                raise SpecError(f"{name}: template word {tok!r} is not a marker, declared word or common word")


@dataclass
class Scene:
    nouns: list  # head nouns in lexicon order
    attrs: list  # one attribute per noun


@dataclass
class SyntheticDataset:
    spec: SyntheticSceneSpec
    source_train: list  # PairedExample
    source_test: list  # PairedExample
    test_nouns: list  # set of head nouns per test image
    styles: dict  # style -> list of token lists


class SceneSampler:
    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 0])
        F = spec.feature_dim
        self.noun_emb = {n: rng.normal(0.0, 1.0, F) for n in spec.nouns}
        self.attr_emb = {a: rng.normal(0.0, 0.3, F) for a in spec.attributes}

    def scene(self, rng) -> Scene:
        sp = self.spec
        k = int(rng.integers(sp.min_objects, sp.max_objects + 1))
        idx = sorted(rng.choice(len(sp.nouns), size=k, replace=False).tolist())
        attrs = [sp.attributes[int(rng.integers(len(sp.attributes)))] for _ in idx]
        return Scene([sp.nouns[i] for i in idx], attrs)

    def features(self, scene: Scene, rng) -> np.ndarray:
        f = np.zeros(self.spec.feature_dim)
        for n, a in zip(scene.nouns, scene.attrs):
            f += self.noun_emb[n] + self.attr_emb[a]
        return f + rng.normal(0.0, self.spec.noise_scale, self.spec.feature_dim)

    def render(self, scene: Scene, block: dict, rng, synonyms: bool) -> list[str]:
        parts = []
        for n, a in zip(scene.nouns, scene.attrs):
            word = n
            syns = self.spec.synonyms.get(n, [])
            if synonyms and syns and rng.random() < self.spec.synonym_rate:
                word = syns[int(rng.integers(len(syns)))]
            parts.append(block["object"].format(noun=word, attr=a))
        objects = f" {block['joiner']} ".join(parts)
        tpl = block["templates"][int(rng.integers(len(block["templates"])))]
        return tokenize(tpl.format(objects=objects))


def generate_synthetic_dataset(spec: SyntheticSceneSpec, sizes: Optional[dict] = None) -> SyntheticDataset:
    spec.validate()
    sizes = dict(spec.sizes if sizes is None else sizes)
    sampler = SceneSampler(spec)

    rng = np.random.default_rng([spec.seed, 1])
    train = []
    for _ in range(sizes["source_train"]):
        sc = sampler.scene(rng)
        train.append(PairedExample(sampler.features(sc, rng), sampler.render(sc, spec.source, rng, False)))
    train_strings = {" ".join(ex.tokens) for ex in train}

    rng = np.random.default_rng([spec.seed, 2])
    test, test_nouns = [], []
    while len(test) < sizes["source_test"]:
        sc = sampler.scene(rng)
        feats = sampler.features(sc, rng)
        toks = sampler.render(sc, spec.source, rng, False)
        if " ".join(toks) in train_strings:
            continue
        test.append(PairedExample(feats, toks))
        test_nouns.append(set(sc.nouns))

    styles = {}
    for n, (name, block) in enumerate(spec.styles.items()):
        rng = np.random.default_rng([spec.seed, 10 + n])
        styles[name] = [sampler.render(sampler.scene(rng), block, rng, True) for _ in range(sizes["style"])]
    return SyntheticDataset(spec, train, test, test_nouns, styles)


def write_dataset(ds: SyntheticDataset, out_dir) -> Path:
    """Write corpora, feature files, lexicons and a key=value manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = ds.spec
    write_lines(out / "source_train.txt", (" ".join(ex.tokens) for ex in ds.source_train))
    save_features(out / "source_train.features", (ex.features for ex in ds.source_train))
    write_lines(out / "source_test.txt", (" ".join(ex.tokens) for ex in ds.source_test))
    save_features(out / "source_test.features", (ex.features for ex in ds.source_test))
    write_lines(out / "test_nouns.txt", (" ".join(sorted(s)) for s in ds.test_nouns))
    for name, sents in ds.styles.items():
        write_lines(out / f"style_{name}.txt", (" ".join(s) for s in sents))
    write_lines(out / "nouns.txt", list(spec.nouns) + spec.syn_words())
    syn_lines = ["# head: synonyms"] + [f"{h}: {', '.join(s)}" for h, s in spec.synonyms.items()]
    write_lines(out / "synonyms.txt", syn_lines)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = {
        "source_train": "source_train.txt",
        "source_train_features": "source_train.features",
        "source_test": "source_test.txt",
        "source_test_features": "source_test.features",
        "test_nouns": "test_nouns.txt",
        "nouns": "nouns.txt",
        "synonyms": "synonyms.txt",
        "styles": ",".join(ds.styles),
    }
    for name in ds.styles:
        manifest[f"style.{name}"] = f"style_{name}.txt"
    manifest["feature_dim"] = spec.feature_dim
    manifest["seed"] = spec.seed
    write_kv(out / "manifest.txt", manifest)
    return out / "manifest.txt"


@dataclass
class DatasetFiles:
    """Resolved view of a dataset manifest."""

    root: Path
    entries: dict

    @classmethod
    def load(cls, manifest_path) -> "DatasetFiles":
        p = Path(manifest_path)
        return cls(p.parent, read_kv(p))

    def path(self, key: str) -> Path:
        if key not in self.entries:
            raise KeyError(f"dataset manifest has no entry {key!r}")
        return self.root / self.entries[key]

    @property
    def styles(self) -> list[str]:
        return [s for s in self.entries.get("styles", "").split(",") if s]

    def paired(self, split: str) -> list[PairedExample]:
        feats = load_features(self.path(f"{split}_features"))
        sents = read_corpus(self.path(split))
        if len(feats) != len(sents):
            raise FormatError(f"{split}: {len(feats)} feature rows but {len(sents)} descriptions")
        return [PairedExample(f, s) for f, s in zip(feats, sents)]

    def style_corpus(self, name: str) -> list[list[str]]:
        return read_corpus(self.path(f"style.{name}"))
